//! Numerical experiments over families of instances: convergence-rate
//! tables in the scale parameter, sweeps over defect lists, the averaging
//! estimate behind the O(eps) theory, and a demonstration that the solution
//! operators converge strongly but not in operator norm.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::coeff::{
    check_mr_membership, homogenized_matrix_a0, MembershipReport, PiecewiseMatrixField,
    ScaledCoefficient,
};
use crate::gridfn::{GridFunction, Mesh};
use crate::linalg::{max_singular_value, norm2, DenseMat};
use crate::math;
use crate::operator::{AssembledOperator, FixedPointOperator, ProblemInstance};
use crate::solver::{solve_frozen, solve_newton, SolverOptions};
use crate::{Error, Result, MERGE_TOL};

/// A rate study needs at least this many scales for a defensible slope.
pub const RATE_MIN_POINTS: usize = 4;
/// Errors below this are dominated by solver tolerance, not by the scale,
/// and are excluded from the slope fit.
pub const RATE_ERROR_FLOOR: f64 = 1e-9;

/// One scale of a convergence study.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub epsilon: f64,
    /// `||u_eps - u0||_inf` on the scale's own mesh.
    pub error_sup: f64,
    /// `||F_eps(u0) - u0||_inf`.
    pub discrepancy: f64,
    /// `(2 / alpha) * discrepancy`.
    pub bound: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Log-log least-squares slope of `error_sup` against `epsilon`.
    pub slope: f64,
    /// Rows that entered the fit (converged, error above the floor).
    pub slope_points: usize,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let m = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let lx: Vec<f64> = xs.iter().map(|&x| math::ln(x)).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| math::ln(y)).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(ly.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Solves one scale: the homogenized problem and the frozen iteration on
/// the same mesh, so the nodal comparison needs no interpolation.
/// Non-convergence becomes a row with `converged = false` rather than an
/// error, so a study can report partial results.
pub fn rate_row(
    inst: &ProblemInstance,
    epsilon: f64,
    n_target: usize,
    cap: usize,
    opts: &SolverOptions,
) -> Result<RateRow> {
    let inst_eps = inst.with_epsilon(Some(epsilon));
    let mesh = inst_eps.build_mesh(n_target, cap)?;
    let inst_h = inst.with_epsilon(None);
    let failed = |iterations| RateRow {
        epsilon,
        error_sup: f64::NAN,
        discrepancy: f64::NAN,
        bound: f64::NAN,
        alpha: f64::NAN,
        iterations,
        converged: false,
    };
    let u0 = match solve_newton(&inst_h, &mesh, opts) {
        Ok((u0, _)) => u0,
        Err(Error::NoConvergence { iterations, .. }) => return Ok(failed(iterations)),
        Err(e) => return Err(e),
    };
    match solve_frozen(&inst_eps, &mesh, &u0, opts) {
        Ok((_, rep)) => Ok(RateRow {
            epsilon,
            error_sup: rep.error_vs_reference.unwrap_or(f64::NAN),
            discrepancy: rep.discrepancy.unwrap_or(f64::NAN),
            bound: rep.error_bound.unwrap_or(f64::NAN),
            alpha: rep.alpha,
            iterations: rep.iterations,
            converged: true,
        }),
        Err(Error::NoConvergence { iterations, .. }) => Ok(failed(iterations)),
        Err(e) => Err(e),
    }
}

/// Fits a slope through the converged rows of [`rate_row`] over the given
/// scales. The slope near 1 is the O(eps) homogenization rate.
pub fn rate_study(
    inst: &ProblemInstance,
    epsilons: &[f64],
    n_target: usize,
    cap: usize,
    opts: &SolverOptions,
) -> Result<RateTable> {
    if epsilons.len() < RATE_MIN_POINTS {
        return Err(Error::InsufficientPoints { got: epsilons.len(), need: RATE_MIN_POINTS });
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        rows.push(rate_row(inst, eps, n_target, cap, opts)?);
    }
    Ok(finish_rate_table(rows))
}

/// Assembles the table from already-computed rows (the CLI computes rows in
/// parallel and reuses this).
pub fn finish_rate_table(rows: Vec<RateRow>) -> RateTable {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in &rows {
        if row.converged && row.error_sup.is_finite() && row.error_sup > RATE_ERROR_FLOOR {
            xs.push(row.epsilon);
            ys.push(row.error_sup);
        }
    }
    let slope = if xs.len() >= 2 { fit_loglog_slope(&xs, &ys) } else { f64::NAN };
    RateTable { rows, slope, slope_points: xs.len() }
}

/// One defect of a sweep: its admissibility verdict and, when admissible,
/// the error at each scale.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub label: String,
    pub membership: MembershipReport,
    pub rows: Vec<RateRow>,
}

#[derive(Debug, Clone)]
pub struct DefectSweep {
    pub epsilons: Vec<f64>,
    pub cases: Vec<SweepCase>,
    /// Per scale: max/min error ratio across admissible defects; near 1
    /// means the rate is uniform over the class.
    pub spread: Vec<f64>,
}

/// Sweeps a list of labeled defects: validates each against the class
/// radius `r`, failing fast with the offender's label, and solves every
/// admissible one at every scale.
pub fn defect_sweep(
    base: &ProblemInstance,
    defects: &[(String, PiecewiseMatrixField)],
    epsilons: &[f64],
    n_target: usize,
    cap: usize,
    opts: &SolverOptions,
) -> Result<DefectSweep> {
    let mut cases = Vec::with_capacity(defects.len());
    for (label, b) in defects {
        let membership = check_membership(&base.coeff_a, b, base.r, label)?;
        let inst = ProblemInstance::new(
            base.coeff_a.clone(),
            Some(b.clone()),
            base.model.clone(),
            base.epsilon,
            base.r,
        )?;
        let mut rows = Vec::with_capacity(epsilons.len());
        for &eps in epsilons {
            rows.push(rate_row(&inst, eps, n_target, cap, opts)?);
        }
        cases.push(SweepCase { label: label.clone(), membership, rows });
    }
    Ok(finish_defect_sweep(epsilons, cases))
}

/// Checks one labeled defect against the class radius, turning a negative
/// verdict into an error that names the offender.
pub fn check_membership(
    a: &PiecewiseMatrixField,
    b: &PiecewiseMatrixField,
    r: f64,
    label: &str,
) -> Result<MembershipReport> {
    let membership = check_mr_membership(a, Some(b), r)?;
    if !membership.member {
        return Err(Error::MembershipViolation {
            defect: label.into(),
            clause: membership.violated.unwrap_or("membership"),
        });
    }
    Ok(membership)
}

/// Assembles the sweep summary from already-computed cases (the CLI
/// computes cases in parallel and reuses this).
pub fn finish_defect_sweep(epsilons: &[f64], cases: Vec<SweepCase>) -> DefectSweep {
    let mut spread = Vec::with_capacity(epsilons.len());
    for k in 0..epsilons.len() {
        let errs: Vec<f64> = cases
            .iter()
            .filter(|c| c.membership.member)
            .filter_map(|c| c.rows.get(k))
            .filter(|r| r.converged && r.error_sup.is_finite())
            .map(|r| r.error_sup)
            .collect();
        let hi = errs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = errs.iter().copied().fold(f64::INFINITY, f64::min);
        spread.push(if errs.is_empty() { f64::NAN } else { hi / lo });
    }
    DefectSweep { epsilons: epsilons.to_vec(), cases, spread }
}

/// The averaging estimate under one scale.
#[derive(Debug, Clone)]
pub struct AveragingReport {
    pub epsilon: f64,
    /// Largest `|int_{x1}^{x2} (M^-1 - A0^-1) u|` over the probe pairs.
    pub worst_value: f64,
    pub worst_pair: (f64, f64),
    /// `worst_value / (eps (||u||_inf + ||u'||_inf))`; bounded uniformly in
    /// `eps` exactly when the O(eps) averaging holds.
    pub normalized: f64,
}

/// Exact prefix integrals of `(M^-1 - A0^-1) u` on the merged partition of
/// the coefficient cells and the nodes of `u`.
struct AveragingPrefix {
    ts: Vec<f64>,
    /// Prefix value at each partition point, stacked blocks of size n.
    prefix: Vec<f64>,
    /// Per subinterval weight matrix `M^-1 - A0^-1`.
    delta: Vec<SquareMatRef>,
    u: GridFunction,
    n: usize,
}

// Small private alias; the deltas are owned matrices.
type SquareMatRef = crate::matrix::SquareMat;

impl AveragingPrefix {
    fn build(
        coeff: &ScaledCoefficient,
        a0_inv: &crate::matrix::SquareMat,
        u: &GridFunction,
    ) -> Self {
        let n = u.dim();
        let mut ts: Vec<f64> = coeff
            .edges()
            .iter()
            .copied()
            .chain(u.mesh().nodes().iter().copied())
            .collect();
        ts.sort_by(|a, b| a.partial_cmp(b).expect("finite partition"));
        ts.dedup_by(|a, b| (*a - *b).abs() <= MERGE_TOL);
        let mut prefix = vec![0.0; ts.len() * n];
        let mut delta = Vec::with_capacity(ts.len() - 1);
        let mut ua = vec![0.0; n];
        let mut ub = vec![0.0; n];
        let mut avg = vec![0.0; n];
        let mut inc = vec![0.0; n];
        for j in 0..ts.len() - 1 {
            let (t0, t1) = (ts[j], ts[j + 1]);
            let mut dm = coeff.inverse(coeff.cell_of(0.5 * (t0 + t1))).clone();
            dm.add_scaled(a0_inv, -1.0);
            u.eval_into(t0, &mut ua);
            u.eval_into(t1, &mut ub);
            for k in 0..n {
                avg[k] = 0.5 * (t1 - t0) * (ua[k] + ub[k]);
            }
            dm.mul_vec_into(&avg, &mut inc);
            for k in 0..n {
                prefix[(j + 1) * n + k] = prefix[j * n + k] + inc[k];
            }
            delta.push(dm);
        }
        Self { ts, prefix, delta, u: u.clone(), n }
    }

    /// Prefix value at arbitrary `x`, exact for the piecewise-linear `u`.
    fn eval(&self, x: f64, out: &mut [f64]) {
        let j = self.ts.partition_point(|t| *t <= x).saturating_sub(1).min(self.ts.len() - 2);
        let t0 = self.ts[j];
        let mut ua = vec![0.0; self.n];
        let mut ux = vec![0.0; self.n];
        self.u.eval_into(t0, &mut ua);
        self.u.eval_into(x, &mut ux);
        let mut avg = vec![0.0; self.n];
        for k in 0..self.n {
            avg[k] = 0.5 * (x - t0) * (ua[k] + ux[k]);
        }
        self.delta[j].mul_vec_into(&avg, out);
        for k in 0..self.n {
            out[k] += self.prefix[j * self.n + k];
        }
    }
}

/// Evaluates the averaging integral for a fixed profile `u` against the
/// scaled coefficient, over a deterministic family of probe pairs: all
/// pairs from a uniform 9-point grid plus the corner pairs `(0,1)`,
/// `(0,eps)`, `(1-eps,1)`.
pub fn averaging_check(
    a: &PiecewiseMatrixField,
    b: Option<&PiecewiseMatrixField>,
    eps: f64,
    u: &GridFunction,
) -> Result<AveragingReport> {
    let coeff = ScaledCoefficient::scaled(a, b, eps)?;
    let a0_inv = homogenized_matrix_a0(a)?.inverse()?;
    let pre = AveragingPrefix::build(&coeff, &a0_inv, u);

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for i in 0..=8u32 {
        for j in (i + 1)..=8 {
            pairs.push((f64::from(i) / 8.0, f64::from(j) / 8.0));
        }
    }
    pairs.push((0.0, 1.0));
    pairs.push((0.0, eps.min(1.0)));
    pairs.push(((1.0 - eps).max(0.0), 1.0));

    let n = u.dim();
    let mut p1 = vec![0.0; n];
    let mut p2 = vec![0.0; n];
    let mut worst_value = -1.0f64;
    let mut worst_pair = (0.0, 1.0);
    for &(x1, x2) in &pairs {
        pre.eval(x1, &mut p1);
        pre.eval(x2, &mut p2);
        for k in 0..n {
            p2[k] -= p1[k];
        }
        let v = norm2(&p2);
        if v > worst_value {
            worst_value = v;
            worst_pair = (x1, x2);
        }
    }
    let scale = eps * (u.sup_norm() + u.w1inf_seminorm());
    Ok(AveragingReport {
        epsilon: eps,
        worst_value,
        worst_pair,
        normalized: if scale > 0.0 { worst_value / scale } else { worst_value },
    })
}

/// One scale of the strong-versus-norm convergence demonstration.
#[derive(Debug, Clone)]
pub struct OperatorGapRow {
    pub epsilon: f64,
    /// `||F_eps(v_m) - F_0(v_m)||_inf` for each probe profile.
    pub per_vector_gap: Vec<f64>,
    pub max_vector_gap: f64,
    /// `sigma_max(F'_eps(0) - F'_0(0))` on the scale's mesh.
    pub sigma_gap: f64,
}

#[derive(Debug, Clone)]
pub struct OperatorGapDemo {
    pub rows: Vec<OperatorGapRow>,
    /// Log-log slope of the worst per-vector gap; near 1 for strong O(eps)
    /// convergence.
    pub vector_gap_slope: f64,
    /// Last-to-first ratio of `sigma_gap`; staying near 1 while the vector
    /// gaps vanish is the signature of non-convergence in operator norm.
    pub sigma_ratio: f64,
}

/// Applies the oscillatory and homogenized operators to a fixed family of
/// random trigonometric profiles `v_m = sum_k a_mk sin(k pi x)` and
/// assembles the derivative gap at zero. The probe profiles are functions,
/// not grids, so every scale sees the same family.
///
/// The uniform target is raised per scale so that every period keeps at
/// least eight mesh intervals: directions oscillating with the coefficient
/// carry the norm gap, and a mesh that stops resolving the cells would
/// interpolate them away and fake norm convergence.
pub fn operator_convergence_demo(
    inst: &ProblemInstance,
    epsilons: &[f64],
    n_target: usize,
    cap: usize,
    probes: usize,
    seed: u64,
) -> Result<OperatorGapDemo> {
    if epsilons.len() < 2 {
        return Err(Error::InsufficientPoints { got: epsilons.len(), need: 2 });
    }
    let n = inst.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut coeffs = vec![0.0; probes.max(1) * n * 4];
    for c in coeffs.iter_mut() {
        *c = rng.gen_range(-1.0..1.0);
    }
    let probe = |m: usize, x: f64, out: &mut [f64]| {
        for k in 0..n {
            let base = (m * n + k) * 4;
            out[k] = (0..4)
                .map(|j| {
                    coeffs[base + j] * math::sin((j + 1) as f64 * core::f64::consts::PI * x)
                })
                .sum();
        }
    };

    let inst_h = inst.with_epsilon(None);
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let inst_eps = inst.with_epsilon(Some(eps));
        let n_eff = n_target.max(math::ceil(8.0 / eps) as usize);
        let mesh = inst_eps.build_mesh(n_eff, cap)?;
        let op_eps = FixedPointOperator::for_instance(&inst_eps, &mesh)?;
        let op_h = FixedPointOperator::for_instance(&inst_h, &mesh)?;

        let mut per_vector_gap = Vec::with_capacity(probes);
        for m in 0..probes {
            let v = GridFunction::from_fn(&mesh, n, |x, out| probe(m, x, out));
            let mut g = op_eps.apply(&v)?;
            g.add_scaled(&op_h.apply(&v)?, -1.0);
            per_vector_gap.push(g.sup_norm());
        }
        let max_vector_gap = per_vector_gap.iter().copied().fold(0.0, f64::max);

        let zero = GridFunction::zeros(&mesh, n);
        let asm_eps = AssembledOperator::assemble(&op_eps.linearize(&zero)?)?;
        let asm_h = AssembledOperator::assemble(&op_h.linearize(&zero)?)?;
        let mut diff = DenseMat::zeros(asm_eps.dim());
        diff.add_scaled(asm_eps.fprime_matrix(), 1.0);
        diff.add_scaled(asm_h.fprime_matrix(), -1.0);
        let sigma_gap = max_singular_value(&diff, &mut rng);

        rows.push(OperatorGapRow { epsilon: eps, per_vector_gap, max_vector_gap, sigma_gap });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_vector_gap).collect();
    let vector_gap_slope = fit_loglog_slope(&xs, &ys);
    let sigma_ratio = rows.last().unwrap().sigma_gap / rows[0].sigma_gap;
    Ok(OperatorGapDemo { rows, vector_gap_slope, sigma_ratio })
}

/// Convenience constructor for the uniform mesh profiles used by the CLI
/// averaging command.
pub fn parabola_profile(intervals: usize, n: usize) -> GridFunction {
    let mesh = Mesh::uniform(intervals);
    GridFunction::from_fn(&mesh, n, |x, out| {
        for o in out.iter_mut() {
            *o = x * (1.0 - x);
        }
    })
}
