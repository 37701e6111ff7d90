//! Subcommand implementations. Sweeps parallelize across scales and
//! defects with rayon; rows are collected in input order and every solve
//! reseeds its own generator, so reports do not depend on the schedule.

use std::path::{Path, PathBuf};

use defect_homog_core::coeff::homogenized_matrix_a0;
use defect_homog_core::gridfn::{GridFunction, Mesh};
use defect_homog_core::harness::{
    averaging_check, check_membership, finish_defect_sweep, finish_rate_table, fit_loglog_slope,
    operator_convergence_demo, rate_row, RateRow, SweepCase,
};
use defect_homog_core::matrix::SquareMat;
use defect_homog_core::operator::{AssembledOperator, FixedPointOperator, ProblemInstance};
use defect_homog_core::oracle::solve_fem;
use defect_homog_core::solver::{
    check_nondegeneracy, solve_frozen, solve_newton, sufficient_nondegeneracy, SolveReport,
    SolverOptions,
};
use defect_homog_core::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{self, ConfigDocument};
use crate::report::{eps_tag, fmt, grid_csv_body, write_matrix_dump, RunContext};
use crate::Failure;

const OPNORM_PROBES: usize = 5;

pub struct Session {
    pub doc: ConfigDocument,
    pub ctx: RunContext,
    /// Effective scales, strictly decreasing.
    pub epsilons: Vec<f64>,
    pub opts: SolverOptions,
}

impl Session {
    pub fn open(
        config_path: &Path,
        out_dir: Option<PathBuf>,
        epsilon_override: &[f64],
        seed_override: Option<u64>,
    ) -> Result<Self, Failure> {
        let loaded = config::load(config_path)?;
        let doc = loaded.doc;

        let mut epsilons =
            if epsilon_override.is_empty() { doc.epsilons.clone() } else { epsilon_override.to_vec() };
        for &e in &epsilons {
            if !(e.is_finite() && e > 0.0 && e <= 1.0) {
                return Err(Failure::Config(format!("epsilon {e} is outside (0, 1]")));
            }
        }
        epsilons.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        epsilons.dedup();

        let seed = seed_override.unwrap_or(doc.seed);
        let opts = doc.solver_options(seed);
        let ctx = RunContext {
            out_dir: out_dir.unwrap_or_else(|| PathBuf::from(&doc.out_dir)),
            instance: loaded.label,
            config_sha256: loaded.sha256,
            seed,
            tol: opts.tol,
            max_iterations: opts.max_iter,
        };
        Ok(Session { doc, ctx, epsilons, opts })
    }

    fn mesh_params(&self) -> (usize, usize) {
        (self.doc.mesh.n_target, self.doc.mesh.cap)
    }
}

fn matrix_rows(m: &SquareMat) -> Vec<Vec<f64>> {
    let n = m.dim();
    (0..n).map(|i| (0..n).map(|j| m.get(i, j)).collect()).collect()
}

fn rate_row_csv_line(r: &RateRow, prefix: &str) -> String {
    format!(
        "{}{},{},{},{},{},{},{}\n",
        prefix,
        fmt(r.epsilon),
        fmt(r.error_sup),
        fmt(r.discrepancy),
        fmt(r.bound),
        fmt(r.alpha),
        r.iterations,
        r.converged,
    )
}

fn rate_row_json(r: &RateRow) -> serde_json::Value {
    json!({
        "epsilon": r.epsilon,
        "error_sup": r.error_sup,
        "discrepancy": r.discrepancy,
        "bound": r.bound,
        "alpha": r.alpha,
        "iterations": r.iterations,
        "converged": r.converged,
    })
}

fn solve_report_json(rep: &SolveReport) -> serde_json::Value {
    json!({
        "iterations": rep.iterations,
        "converged": rep.converged,
        "residual_history": rep.residual_history,
        "contraction_factors": rep.contraction_factors,
        "alpha": rep.alpha,
        "final_residual": rep.final_residual,
        "discrepancy": rep.discrepancy,
        "error_vs_reference": rep.error_vs_reference,
        "error_bound": rep.error_bound,
    })
}

/// Sup distance at the nodes of `coarse_side` between it and a function on
/// a refinement of the same mesh.
fn shared_node_gap(coarse_side: &GridFunction, fine_side: &GridFunction) -> f64 {
    let n = coarse_side.dim();
    let mut buf = vec![0.0; n];
    let mut worst = 0.0f64;
    for (i, &x) in coarse_side.mesh().nodes().iter().enumerate() {
        fine_side.eval_into(x, &mut buf);
        for (k, &v) in buf.iter().enumerate() {
            worst = worst.max((v - coarse_side.node(i)[k]).abs());
        }
    }
    worst
}

pub fn homogenize(s: &Session) -> Result<(), Failure> {
    let a = s.doc.field_a()?;
    let a0 = homogenized_matrix_a0(&a)?;
    println!("A0 =");
    for row in matrix_rows(&a0) {
        let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        println!("  {}", cells.join(" "));
    }

    let inst = s.doc.instance(None)?;
    let (n_target, cap) = s.mesh_params();
    let mesh = inst.build_mesh(n_target, cap)?;
    let (u0, rep) = solve_newton(&inst, &mesh, &s.opts)?;

    let csv = s.ctx.write_csv("u0.csv", &grid_csv_body(&u0))?;
    s.ctx.write_json(
        "homogenize.json",
        "homogenize",
        json!({
            "a0": matrix_rows(&a0),
            "nodes": mesh.node_count(),
            "newton": solve_report_json(&rep),
            "solution_csv": "u0.csv",
        }),
    )?;
    println!(
        "u0 written to {} ({} iterations, final residual {})",
        csv.display(),
        rep.iterations,
        fmt(rep.final_residual),
    );
    Ok(())
}

/// Largest per-axis sample count whose n-dimensional grid stays affordable.
fn sample_budget(n: usize) -> usize {
    (2..=33).rev().find(|&s| (s as f64).powi(n as i32) <= 1e5).unwrap_or(2)
}

pub fn check(s: &Session) -> Result<(), Failure> {
    let inst = s.doc.instance(None)?;
    let ell = inst.ellipticity()?;
    let mem = inst.membership()?;
    let (n_target, cap) = s.mesh_params();
    let nd = check_nondegeneracy(&inst, n_target, cap, &s.opts)?;

    // Sample the sufficient condition on a box around the homogenized
    // solution's range.
    let mesh = inst.build_mesh(n_target, cap)?;
    let (u0, _) = solve_newton(&inst, &mesh, &s.opts)?;
    let n = inst.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for i in 0..u0.node_count() {
        for (k, &v) in u0.node(i).iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    for k in 0..n {
        lo[k] -= 0.5;
        hi[k] += 0.5;
    }
    let suff = sufficient_nondegeneracy(&inst, &lo, &hi, sample_budget(n))?;

    s.ctx.write_json(
        "check.json",
        "check",
        json!({
            "ellipticity": {
                "m_a": ell.m_a,
                "m_ab": ell.m_ab,
                "sup_inv_a": ell.sup_inv_a,
                "sup_inv_ab": ell.sup_inv_ab,
                "norm_b_inf": ell.norm_b_inf,
                "norm_b_one": ell.norm_b_one,
            },
            "membership": {
                "member": mem.member,
                "norm_sum": mem.norm_sum,
                "ellipticity_floor": mem.ellipticity_floor,
                "r": mem.r,
                "violated": mem.violated,
            },
            "nondegeneracy": {
                "alpha_coarse": nd.alpha_coarse,
                "alpha_fine": nd.alpha_fine,
                "shrink_factor": nd.shrink_factor,
                "degenerate": nd.degenerate,
            },
            "sufficient_condition": {
                "m_eff": suff.m_eff,
                "q0": suff.q0,
                "p_sup": suff.p_sup,
                "satisfied": suff.satisfied,
                "box_lo": lo,
                "box_hi": hi,
            },
        }),
    )?;

    println!("alpha = {}", fmt(nd.alpha_fine));
    println!(
        "membership: {}; sufficient condition: {}",
        if mem.member { "ok" } else { "violated" },
        if suff.satisfied { "satisfied" } else { "not conclusive" },
    );
    if !mem.member {
        return Err(Failure::Config(format!(
            "defect outside the class of radius {}: {} (details in check.json)",
            mem.r,
            mem.violated.unwrap_or("membership"),
        )));
    }
    if nd.degenerate {
        return Err(Failure::Numerical(format!(
            "degenerate linearization: alpha {} at {} intervals, {} at {} (details in check.json)",
            fmt(nd.alpha_coarse),
            n_target,
            fmt(nd.alpha_fine),
            2 * n_target,
        )));
    }
    Ok(())
}

/// Writes the contraction trace of a failed run and returns the numerical
/// failure pointing at it.
fn no_convergence_report(
    s: &Session,
    stage: &str,
    file: &str,
    iterations: usize,
    residual: f64,
    q_trace: &[f64],
) -> Failure {
    let mut body = String::from("iteration,q\n");
    for (k, &q) in q_trace.iter().enumerate() {
        body.push_str(&format!("{},{}\n", k + 1, fmt(q)));
    }
    match s.ctx.write_csv(file, &body) {
        Ok(path) => Failure::Numerical(format!(
            "{stage} did not converge after {iterations} iterations (residual {}); contraction trace at {}",
            fmt(residual),
            path.display(),
        )),
        Err(io) => io,
    }
}

pub fn solve(s: &Session, dump_matrix: Option<&Path>) -> Result<(), Failure> {
    let [eps] = s.epsilons[..] else {
        return Err(Failure::Config(
            "solve expects exactly one scale; pass a single --epsilon".into(),
        ));
    };
    let tag = eps_tag(eps);
    let inst = s.doc.instance(Some(eps))?;
    let (n_target, cap) = s.mesh_params();
    let mesh = inst.build_mesh(n_target, cap)?;

    let inst_h = inst.with_epsilon(None);
    let (u0, rep0) = match solve_newton(&inst_h, &mesh, &s.opts) {
        Err(Error::NoConvergence { iterations, residual, q_trace }) => {
            return Err(no_convergence_report(
                s,
                "homogenized Newton",
                "qtrace_homogenized.csv",
                iterations,
                residual,
                &q_trace,
            ));
        }
        other => other?,
    };
    let (u, rep) = match solve_frozen(&inst, &mesh, &u0, &s.opts) {
        Err(Error::NoConvergence { iterations, residual, q_trace }) => {
            return Err(no_convergence_report(
                s,
                "frozen iteration",
                &format!("qtrace_eps{tag}.csv"),
                iterations,
                residual,
                &q_trace,
            ));
        }
        other => other?,
    };

    if let Some(path) = dump_matrix {
        let op = FixedPointOperator::for_instance(&inst, &mesh)?;
        let lin = op.linearize(&u0)?;
        let asm = AssembledOperator::assemble(&lin)?;
        write_matrix_dump(path, inst.dim(), asm.fprime_matrix())?;
    }

    let solution_csv = format!("solution_eps{tag}.csv");
    s.ctx.write_csv(&solution_csv, &grid_csv_body(&u))?;
    s.ctx.write_json(
        &format!("solve_eps{tag}.json"),
        "solve",
        json!({
            "epsilon": eps,
            "nodes": mesh.node_count(),
            "report": solve_report_json(&rep),
            "homogenized_newton": solve_report_json(&rep0),
            "solution_csv": solution_csv,
        }),
    )?;
    println!(
        "epsilon {} converged in {} iterations: alpha={}, discrepancy={}, error={}, bound={}",
        fmt(eps),
        rep.iterations,
        fmt(rep.alpha),
        fmt(rep.discrepancy.unwrap_or(f64::NAN)),
        fmt(rep.error_vs_reference.unwrap_or(f64::NAN)),
        fmt(rep.error_bound.unwrap_or(f64::NAN)),
    );
    Ok(())
}

const SLOPE_RANGE: (f64, f64) = (0.9, 1.1);

fn slope_in_range(slope: f64) -> bool {
    slope.is_finite() && slope >= SLOPE_RANGE.0 && slope <= SLOPE_RANGE.1
}

pub fn rates(s: &Session) -> Result<(), Failure> {
    let inst = s.doc.instance(None)?;
    let (n_target, cap) = s.mesh_params();
    if s.epsilons.len() < defect_homog_core::harness::RATE_MIN_POINTS {
        return Err(Failure::Config(format!(
            "rates needs at least {} scales, got {}",
            defect_homog_core::harness::RATE_MIN_POINTS,
            s.epsilons.len(),
        )));
    }
    let rows: Vec<RateRow> = s
        .epsilons
        .par_iter()
        .map(|&eps| rate_row(&inst, eps, n_target, cap, &s.opts).map_err(Failure::from))
        .collect::<Result<_, _>>()?;
    let table = finish_rate_table(rows);

    let mut body =
        String::from("epsilon,error_sup,discrepancy,bound,alpha,iterations,converged\n");
    for r in &table.rows {
        body.push_str(&rate_row_csv_line(r, ""));
    }
    s.ctx.write_csv("rates.csv", &body)?;
    s.ctx.write_json(
        "rates.json",
        "rates",
        json!({
            "slope": table.slope,
            "slope_points": table.slope_points,
            "slope_in_range": slope_in_range(table.slope),
            "rows": table.rows.iter().map(rate_row_json).collect::<Vec<_>>(),
        }),
    )?;
    println!("rate slope = {:.4} over {} points", table.slope, table.slope_points);
    Ok(())
}

pub fn sweep_defects(s: &Session) -> Result<(), Failure> {
    let defects = s.doc.defect_fields()?;
    let a = s.doc.field_a()?;
    let model = s.doc.model()?;
    let (n_target, cap) = s.mesh_params();

    let mut memberships = Vec::with_capacity(defects.len());
    let mut instances = Vec::with_capacity(defects.len());
    for (label, b) in &defects {
        memberships.push(check_membership(&a, b, s.doc.r, label)?);
        instances.push(ProblemInstance::new(
            a.clone(),
            Some(b.clone()),
            model.clone(),
            None,
            s.doc.r,
        )?);
    }

    let pairs: Vec<(usize, f64)> = (0..instances.len())
        .flat_map(|ci| s.epsilons.iter().map(move |&e| (ci, e)))
        .collect();
    let computed: Vec<RateRow> = pairs
        .par_iter()
        .map(|&(ci, eps)| rate_row(&instances[ci], eps, n_target, cap, &s.opts).map_err(Failure::from))
        .collect::<Result<_, _>>()?;

    let per_case = s.epsilons.len();
    let cases: Vec<SweepCase> = defects
        .iter()
        .zip(memberships)
        .enumerate()
        .map(|(ci, ((label, _), membership))| SweepCase {
            label: label.clone(),
            membership,
            rows: computed[ci * per_case..(ci + 1) * per_case].to_vec(),
        })
        .collect();
    let sweep = finish_defect_sweep(&s.epsilons, cases);

    let mut body =
        String::from("defect,epsilon,error_sup,discrepancy,bound,alpha,iterations,converged\n");
    for case in &sweep.cases {
        for r in &case.rows {
            body.push_str(&rate_row_csv_line(r, &format!("{},", case.label)));
        }
    }
    s.ctx.write_csv("sweep.csv", &body)?;

    let mut spread_body = String::from("epsilon,spread\n");
    for (e, sp) in sweep.epsilons.iter().zip(&sweep.spread) {
        spread_body.push_str(&format!("{},{}\n", fmt(*e), fmt(*sp)));
    }
    s.ctx.write_csv("sweep_spread.csv", &spread_body)?;

    let case_summaries: Vec<serde_json::Value> = sweep
        .cases
        .iter()
        .map(|case| {
            let table = finish_rate_table(case.rows.clone());
            json!({
                "label": case.label,
                "norm_sum": case.membership.norm_sum,
                "ellipticity_floor": case.membership.ellipticity_floor,
                "slope": table.slope,
                "slope_in_range": slope_in_range(table.slope),
                "rows": case.rows.iter().map(rate_row_json).collect::<Vec<_>>(),
            })
        })
        .collect();
    let max_spread = sweep.spread.iter().copied().fold(f64::NAN, f64::max);
    s.ctx.write_json(
        "sweep.json",
        "sweep-defects",
        json!({
            "cases": case_summaries,
            "epsilons": sweep.epsilons,
            "spread": sweep.spread,
            "max_spread": max_spread,
            "spread_ok": max_spread.is_finite() && max_spread <= 5.0,
        }),
    )?;

    for case in &sweep.cases {
        let slope = finish_rate_table(case.rows.clone()).slope;
        println!("{}: slope = {:.4}", case.label, slope);
    }
    println!("max error spread across defects = {:.4}", max_spread);
    Ok(())
}

pub fn averaging(s: &Session) -> Result<(), Failure> {
    if s.epsilons.is_empty() {
        return Err(Failure::Config("averaging needs at least one epsilon".into()));
    }
    let a = s.doc.field_a()?;
    let b = s.doc.field_b()?;
    // The ramp profile is exactly piecewise linear, so the integrals below
    // carry no quadrature error regardless of the mesh.
    let mesh = Mesh::uniform(256);
    let u = GridFunction::from_fn(&mesh, s.doc.n, |x, out| out.fill(x));

    let mut rows = Vec::with_capacity(s.epsilons.len());
    for &eps in &s.epsilons {
        rows.push(averaging_check(&a, b.as_ref(), eps, &u)?);
    }

    let mut body = String::from("epsilon,worst_value,worst_lo,worst_hi,normalized\n");
    for r in &rows {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(r.epsilon),
            fmt(r.worst_value),
            fmt(r.worst_pair.0),
            fmt(r.worst_pair.1),
            fmt(r.normalized),
        ));
    }
    s.ctx.write_csv("averaging.csv", &body)?;

    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.worst_value > 1e-300)
        .map(|r| (r.epsilon, r.worst_value))
        .unzip();
    let slope = if xs.len() >= 2 { fit_loglog_slope(&xs, &ys) } else { f64::NAN };
    let gammas: Vec<f64> = rows.iter().map(|r| r.normalized).collect();
    let g_hi = gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g_lo = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma_ratio = if g_lo > 0.0 { g_hi / g_lo } else { f64::NAN };

    s.ctx.write_json(
        "averaging.json",
        "averaging",
        json!({
            "profile": "u(x) = x per component",
            "slope": slope,
            "slope_in_range": slope_in_range(slope),
            "gamma_hat": g_hi,
            "gamma_ratio": gamma_ratio,
            "gamma_stable": gamma_ratio.is_finite() && gamma_ratio < 2.0,
            "rows": rows.iter().map(|r| json!({
                "epsilon": r.epsilon,
                "worst_value": r.worst_value,
                "worst_pair": [r.worst_pair.0, r.worst_pair.1],
                "normalized": r.normalized,
            })).collect::<Vec<_>>(),
        }),
    )?;
    println!("averaging slope = {slope:.4}, gamma ratio = {gamma_ratio:.4}");
    Ok(())
}

pub fn oracle_compare(s: &Session, refine: usize) -> Result<(), Failure> {
    if s.epsilons.is_empty() {
        return Err(Failure::Config("oracle-compare needs at least one epsilon".into()));
    }
    let (n_target, cap) = s.mesh_params();

    struct Comparison {
        eps: f64,
        gap: f64,
        fem_solution: GridFunction,
        fem_nodes: usize,
        fem_iterations: usize,
        fem_residual: f64,
    }

    let comparisons: Vec<Comparison> = s
        .epsilons
        .par_iter()
        .map(|&eps| -> Result<Comparison, Failure> {
            let inst = s.doc.instance(Some(eps))?;
            let mesh = inst.build_mesh(n_target, cap)?;
            let inst_h = inst.with_epsilon(None);
            let (u0, _) = solve_newton(&inst_h, &mesh, &s.opts)?;
            let (u, _) = solve_frozen(&inst, &mesh, &u0, &s.opts)?;
            let (u_fem, fem) = solve_fem(&inst, &mesh, refine, s.opts.tol, s.opts.max_iter)?;
            Ok(Comparison {
                eps,
                gap: shared_node_gap(&u, &u_fem),
                fem_solution: u_fem,
                fem_nodes: fem.nodes,
                fem_iterations: fem.iterations,
                fem_residual: fem.final_residual,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut body = String::from("epsilon,sup_diff,fem_nodes,fem_iterations,fem_residual\n");
    for c in &comparisons {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(c.eps),
            fmt(c.gap),
            c.fem_nodes,
            c.fem_iterations,
            fmt(c.fem_residual),
        ));
        s.ctx.write_csv(
            &format!("oracle_eps{}.csv", eps_tag(c.eps)),
            &grid_csv_body(&c.fem_solution),
        )?;
    }
    s.ctx.write_csv("oracle_compare.csv", &body)?;

    let worst = comparisons.iter().map(|c| c.gap).fold(0.0f64, f64::max);
    s.ctx.write_json(
        "oracle_compare.json",
        "oracle-compare",
        json!({
            "refine": refine,
            "worst_sup_diff": worst,
            "rows": comparisons.iter().map(|c| json!({
                "epsilon": c.eps,
                "sup_diff": c.gap,
                "fem_nodes": c.fem_nodes,
                "fem_iterations": c.fem_iterations,
                "fem_residual": c.fem_residual,
            })).collect::<Vec<_>>(),
        }),
    )?;
    println!("worst solver-vs-oracle difference = {}", fmt(worst));
    Ok(())
}

pub fn opnorm_demo(s: &Session) -> Result<(), Failure> {
    let inst = s.doc.instance(None)?;
    let (n_target, cap) = s.mesh_params();
    let demo =
        operator_convergence_demo(&inst, &s.epsilons, n_target, cap, OPNORM_PROBES, s.opts.seed)?;

    let mut body = String::from("epsilon,max_vector_gap,sigma_gap");
    for m in 1..=OPNORM_PROBES {
        body.push_str(&format!(",gap_v{m}"));
    }
    body.push('\n');
    for row in &demo.rows {
        body.push_str(&fmt(row.epsilon));
        body.push(',');
        body.push_str(&fmt(row.max_vector_gap));
        body.push(',');
        body.push_str(&fmt(row.sigma_gap));
        for &g in &row.per_vector_gap {
            body.push(',');
            body.push_str(&fmt(g));
        }
        body.push('\n');
    }
    s.ctx.write_csv("opnorm.csv", &body)?;

    s.ctx.write_json(
        "opnorm.json",
        "opnorm-demo",
        json!({
            "probes": OPNORM_PROBES,
            "vector_gap_slope": demo.vector_gap_slope,
            "sigma_ratio": demo.sigma_ratio,
            "rows": demo.rows.iter().map(|r| json!({
                "epsilon": r.epsilon,
                "max_vector_gap": r.max_vector_gap,
                "sigma_gap": r.sigma_gap,
                "per_vector_gap": r.per_vector_gap,
            })).collect::<Vec<_>>(),
        }),
    )?;
    println!(
        "per-vector slope = {:.4}, operator-norm last/first ratio = {:.4}",
        demo.vector_gap_slope, demo.sigma_ratio,
    );
    Ok(())
}
