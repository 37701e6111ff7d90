//! Solvers built on the fixed-point map: full Newton for the homogenized
//! problem and the frozen-Jacobian iteration for the oscillatory one.
//!
//! The frozen iteration starts from the homogenized solution `u0`, factors
//! `K = I - F'(u0)` once, and repeats `u <- u + K^-1 (F(u) - u)`. When the
//! homogenized solution is nondegenerate (`alpha = sigma_min(K) > 0`) and
//! the scale is small, the iteration contracts and the limit obeys
//!
//! ```text
//! ||u_eps - u0||_inf  <=  (2 / alpha) ||F_eps(u0) - u0||_inf,
//! ```
//!
//! with the right-hand discrepancy of order `eps`. The report carries both
//! sides of that inequality so callers can verify it rather than trust it.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::coeff::homogenized_matrix_a0;
use crate::gridfn::{GridFunction, Mesh};
use crate::math;
use crate::operator::{AssembledOperator, FixedPointOperator, ProblemInstance};
use crate::{Error, Result};

/// Nondegeneracy margins below this are treated as degenerate.
pub const ALPHA_FLOOR: f64 = 1e-6;
/// A margin shrinking more than this under mesh doubling is flagged.
pub const ALPHA_SHRINK_LIMIT: f64 = 10.0;
/// Residuals below this are considered rounding noise when computing
/// contraction factors.
pub const RESIDUAL_NOISE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for the randomized singular-value estimates.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 60, seed: 0x5EED }
    }
}

/// Outcome of a solve, including the data behind the error bound.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Sup norms of `F(u_k) - u_k`, one entry per iterate starting at `u_0`.
    pub residual_history: Vec<f64>,
    /// Ratios of successive residuals, skipping entries at rounding level.
    pub contraction_factors: Vec<f64>,
    /// Smallest singular value of `I - F'` at the linearization point.
    pub alpha: f64,
    pub final_residual: f64,
    /// `||F_eps(u0) - u0||_inf`; frozen solves only.
    pub discrepancy: Option<f64>,
    /// `||u - u0||_inf`; frozen solves only.
    pub error_vs_reference: Option<f64>,
    /// `(2 / alpha) * discrepancy`; frozen solves only.
    pub error_bound: Option<f64>,
}

/// Successive residual ratios, ignoring entries at rounding level where the
/// quotient measures noise rather than contraction.
pub fn contraction_factors(residuals: &[f64]) -> Vec<f64> {
    residuals
        .windows(2)
        .filter(|w| w[0] > RESIDUAL_NOISE_FLOOR && w[1] > RESIDUAL_NOISE_FLOOR)
        .map(|w| w[1] / w[0])
        .collect()
}

/// Full Newton iteration on `u = F(u)` starting from zero; used for the
/// homogenized problem, where no good initial guess exists yet.
pub fn solve_newton(
    inst: &ProblemInstance,
    mesh: &Arc<Mesh>,
    opts: &SolverOptions,
) -> Result<(GridFunction, SolveReport)> {
    let op = FixedPointOperator::for_instance(inst, mesh)?;
    let mut u = GridFunction::zeros(mesh, op.dim());
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut asm_at_u = None;
    for k in 0..=opts.max_iter {
        let mut r = op.apply(&u)?;
        r.add_scaled(&u, -1.0);
        let rn = r.sup_norm();
        residuals.push(rn);
        let lin = op.linearize(&u)?;
        let asm = AssembledOperator::assemble(&lin)?;
        if rn <= opts.tol {
            converged = true;
            asm_at_u = Some(asm);
            break;
        }
        if k == opts.max_iter {
            asm_at_u = Some(asm);
            break;
        }
        let mut delta = vec![0.0; asm.dim()];
        asm.solve_into(r.values(), &mut delta);
        for (uv, dv) in u.values_mut().iter_mut().zip(delta.iter()) {
            *uv += dv;
        }
    }
    let asm = asm_at_u.expect("loop always assembles");
    let q = contraction_factors(&residuals);
    if !converged {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: *residuals.last().unwrap(),
            q_trace: alloc::boxed::Box::new(q),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let alpha = asm.estimate_alpha(&mut rng);
    let final_residual = *residuals.last().unwrap();
    let iterations = residuals.len() - 1;
    Ok((
        u,
        SolveReport {
            iterations,
            converged,
            residual_history: residuals,
            contraction_factors: q,
            alpha,
            final_residual,
            discrepancy: None,
            error_vs_reference: None,
            error_bound: None,
        },
    ))
}

/// The frozen loop itself; shared by [`solve_frozen`] and the uniqueness
/// probe, which wants non-convergence as data rather than as an error.
fn frozen_loop(
    op: &FixedPointOperator,
    asm: &AssembledOperator,
    u_init: &GridFunction,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, Vec<f64>, bool)> {
    let mut u = u_init.clone();
    let mut residuals = Vec::new();
    let mut delta = vec![0.0; asm.dim()];
    for k in 0..=max_iter {
        let mut r = op.apply(&u)?;
        r.add_scaled(&u, -1.0);
        let rn = r.sup_norm();
        residuals.push(rn);
        if rn <= tol {
            return Ok((u, residuals, true));
        }
        if !rn.is_finite() {
            return Ok((u, residuals, false));
        }
        if k == max_iter {
            break;
        }
        asm.solve_into(r.values(), &mut delta);
        for (uv, dv) in u.values_mut().iter_mut().zip(delta.iter()) {
            *uv += dv;
        }
    }
    Ok((u, residuals, false))
}

/// Constructive solve of the oscillatory problem by the frozen-Jacobian
/// iteration centered at the homogenized solution `u0` (resampled onto the
/// solver mesh if needed). Validates defect admissibility first.
pub fn solve_frozen(
    inst: &ProblemInstance,
    mesh: &Arc<Mesh>,
    u0: &GridFunction,
    opts: &SolverOptions,
) -> Result<(GridFunction, SolveReport)> {
    let mem = inst.membership()?;
    if let Some(clause) = mem.violated {
        return Err(Error::MembershipViolation { defect: "B".into(), clause });
    }
    let op = FixedPointOperator::for_instance(inst, mesh)?;
    let u0m = if u0.mesh().nodes() == mesh.nodes() { u0.clone() } else { u0.resample(mesh) };
    let lin = op.linearize(&u0m)?;
    let asm = AssembledOperator::assemble(&lin)?;
    let (u, residuals, converged) = frozen_loop(&op, &asm, &u0m, opts.tol, opts.max_iter)?;
    let q = contraction_factors(&residuals);
    if !converged {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: *residuals.last().unwrap(),
            q_trace: alloc::boxed::Box::new(q),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let alpha = asm.estimate_alpha(&mut rng);
    let discrepancy = residuals[0];
    let error_vs_reference = u.max_node_diff(&u0m);
    let final_residual = *residuals.last().unwrap();
    let iterations = residuals.len() - 1;
    Ok((
        u,
        SolveReport {
            iterations,
            converged,
            residual_history: residuals,
            contraction_factors: q,
            alpha,
            final_residual,
            discrepancy: Some(discrepancy),
            error_vs_reference: Some(error_vs_reference),
            error_bound: Some(2.0 / alpha * discrepancy),
        },
    ))
}

/// Margins of the homogenized solution at two resolutions.
#[derive(Debug, Clone)]
pub struct NondegeneracyReport {
    pub alpha_coarse: f64,
    pub alpha_fine: f64,
    /// `alpha_coarse / alpha_fine`.
    pub shrink_factor: f64,
    pub degenerate: bool,
}

/// Solves the homogenized problem at `n_target` and `2 n_target` intervals
/// and flags degeneracy when the margin is tiny or collapses under
/// refinement.
pub fn check_nondegeneracy(
    inst: &ProblemInstance,
    n_target: usize,
    cap: usize,
    opts: &SolverOptions,
) -> Result<NondegeneracyReport> {
    let inst_h = inst.with_epsilon(None);
    let coarse = inst_h.build_mesh(n_target, cap)?;
    let (_, rep_c) = solve_newton(&inst_h, &coarse, opts)?;
    let fine = inst_h.build_mesh(2 * n_target, cap)?;
    let (_, rep_f) = solve_newton(&inst_h, &fine, opts)?;
    let shrink = rep_c.alpha / rep_f.alpha.max(1e-300);
    Ok(NondegeneracyReport {
        alpha_coarse: rep_c.alpha,
        alpha_fine: rep_f.alpha,
        shrink_factor: shrink,
        degenerate: rep_f.alpha < ALPHA_FLOOR || shrink > ALPHA_SHRINK_LIMIT,
    })
}

/// A checkable sufficient condition for nondegeneracy, sampled over a box.
#[derive(Debug, Clone)]
pub struct SufficientNondegeneracy {
    /// Ellipticity floor used: `min(lambda_min(sym A0), 1/r)`.
    pub m_eff: f64,
    /// Smallest sampled eigenvalue of `sym(d_u d)`.
    pub q0: f64,
    /// Largest sampled norm of `d_u c`.
    pub p_sup: f64,
    pub satisfied: bool,
}

/// Samples the reaction Jacobians over `x in [0,1]` times the box
/// `[u_lo, u_hi]` and checks the coercivity condition
/// `q0 > 0 and p_sup < 2 sqrt(m_eff q0)`.
///
/// The linearized form is `a(v,v) = int M v'.v' + (P v).v' + (Q v).v`; with
/// `M xi.xi >= m|xi|^2`, `sym Q >= q0 I`, and `|P| <= p` it dominates
/// `(2 sqrt(m q0) - p) ||v|| ||v'||`, so the condition makes every
/// linearization injective at once, uniformly over the defect class. The
/// scan is a sample, hence conclusive only when the Jacobians are constant
/// in `u` (linear models); otherwise it is a strong indication on the box.
pub fn sufficient_nondegeneracy(
    inst: &ProblemInstance,
    u_lo: &[f64],
    u_hi: &[f64],
    samples_per_axis: usize,
) -> Result<SufficientNondegeneracy> {
    let n = inst.dim();
    if u_lo.len() != n || u_hi.len() != n || samples_per_axis < 2 {
        return Err(Error::Invalid { detail: "invalid sample box".into() });
    }
    let mut total: usize = 1;
    for _ in 0..n {
        total = total.saturating_mul(samples_per_axis);
        if total > 100_000 {
            return Err(Error::Invalid { detail: "sample box too large".into() });
        }
    }
    let lambda_a0 = homogenized_matrix_a0(&inst.coeff_a)?.min_sym_eigenvalue();
    let m_eff = lambda_a0.min(1.0 / inst.r);

    let x_samples: Vec<f64> = (0..=128)
        .map(|i| i as f64 / 128.0)
        .chain(inst.model.x_breakpoints().iter().copied())
        .collect();
    let mut u = vec![0.0; n];
    let mut q0 = f64::INFINITY;
    let mut p_sup: f64 = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        for k in 0..n {
            let idx = rem % samples_per_axis;
            rem /= samples_per_axis;
            u[k] = u_lo[k]
                + (u_hi[k] - u_lo[k]) * idx as f64 / (samples_per_axis - 1) as f64;
        }
        for &x in &x_samples {
            q0 = q0.min(inst.model.jac_d(x, &u)?.min_sym_eigenvalue());
            p_sup = p_sup.max(inst.model.jac_c(x, &u)?.spectral_norm());
        }
    }
    let satisfied = q0 > 0.0 && p_sup < 2.0 * math::sqrt(m_eff * q0);
    Ok(SufficientNondegeneracy { m_eff, q0, p_sup, satisfied })
}

/// Result of restarting the frozen iteration from random perturbations.
#[derive(Debug, Clone)]
pub struct UniquenessProbe {
    pub restarts: usize,
    pub converged: usize,
    /// Largest distance between a restart limit and the reference solution.
    pub max_gap: f64,
    pub unique: bool,
}

/// Perturbs `u_star` by `restarts` random bumps of sup norm `radius`
/// (vanishing at the boundary), re-runs the frozen iteration centered at
/// `u_star`, and checks that every run converges back to the same fixed
/// point within `gap_tol`.
pub fn local_uniqueness_probe(
    op: &FixedPointOperator,
    u_star: &GridFunction,
    radius: f64,
    restarts: usize,
    gap_tol: f64,
    opts: &SolverOptions,
) -> Result<UniquenessProbe> {
    use rand::Rng;
    let lin = op.linearize(u_star)?;
    let asm = AssembledOperator::assemble(&lin)?;
    let n = op.dim();
    let last = u_star.node_count() - 1;
    let mut converged_count = 0;
    let mut max_gap: f64 = 0.0;
    for restart in 0..restarts {
        let mut rng = ChaCha12Rng::seed_from_u64(
            opts.seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let mut u = u_star.clone();
        for i in 0..u.node_count() {
            if i == 0 || i == last {
                continue;
            }
            for k in 0..n {
                u.node_mut(i)[k] += rng.gen_range(-radius..radius);
            }
        }
        let (u_end, _residuals, ok) = frozen_loop(op, &asm, &u, opts.tol, opts.max_iter)?;
        if ok {
            converged_count += 1;
            max_gap = max_gap.max(u_end.max_node_diff(u_star));
        }
    }
    Ok(UniquenessProbe {
        restarts,
        converged: converged_count,
        max_gap,
        unique: converged_count == restarts && max_gap <= gap_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{scalar_localized, scalar_periodic, PiecewiseMatrixField};
    use crate::gridfn::DEFAULT_NODE_CAP;
    use crate::model::NonlinearModel;

    fn two_phase() -> PiecewiseMatrixField {
        scalar_periodic(&[(0.0, 2.0), (0.5, 1.0)]).unwrap()
    }

    fn model1(c: &str, d: &str) -> NonlinearModel {
        NonlinearModel::new(1, &[c], &[d], vec![]).unwrap()
    }

    fn constant_identity_instance(d: &str) -> ProblemInstance {
        let a = scalar_periodic(&[(0.0, 1.0)]).unwrap();
        ProblemInstance::new(a, None, model1("0", d), None, 2.0).unwrap()
    }

    fn cubic_instance(eps: Option<f64>) -> ProblemInstance {
        let b = scalar_localized(&[-1.0, 0.0, 1.0], &[0.5, -0.25]).unwrap();
        ProblemInstance::new(
            two_phase(),
            Some(b),
            model1("0.2*u1", "u1^3 - u1 + sin(2*pi*x)"),
            eps,
            4.0,
        )
        .unwrap()
    }

    fn sinh_solution(x: f64) -> f64 {
        // u'' = u - 1, u(0) = u(1) = 0.
        let s = f64::sinh(1.0);
        1.0 - (f64::sinh(x) + f64::sinh(1.0 - x)) / s
    }

    #[test]
    fn newton_reproduces_sinh_solution_at_second_order() {
        let inst = constant_identity_instance("u1 - 1");
        let opts = SolverOptions::default();
        let mut errs = Vec::new();
        for n in [32, 64] {
            let mesh = inst.build_mesh(n, DEFAULT_NODE_CAP).unwrap();
            let (u, rep) = solve_newton(&inst, &mesh, &opts).unwrap();
            assert!(rep.converged);
            let worst = mesh
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, &x)| (u.node(i)[0] - sinh_solution(x)).abs())
                .fold(0.0f64, f64::max);
            errs.push(worst);
        }
        assert!(errs[1] < 1e-3);
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}, errs {errs:?}");
    }

    #[test]
    fn newton_converges_quadratically_on_cubic_reaction() {
        let inst = cubic_instance(None);
        let mesh = inst.build_mesh(128, DEFAULT_NODE_CAP).unwrap();
        let (_, rep) = solve_newton(&inst, &mesh, &SolverOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 8, "iterations {}", rep.iterations);
        let r = &rep.residual_history;
        for w in r.windows(2) {
            if w[0] > 1e-10 {
                assert!(w[1] < w[0], "history not decreasing: {r:?}");
            }
        }
        // Quadratic tail: once the residual is below 1e-2 the next one
        // lands within a modest multiple of its square.
        for w in r.windows(2) {
            if w[0] < 1e-2 && w[0] > 1e-7 {
                assert!(w[1] <= 20.0 * w[0] * w[0], "not quadratic: {r:?}");
            }
        }
    }

    #[test]
    fn frozen_solve_of_linear_problem_converges_immediately() {
        let a = scalar_periodic(&[(0.0, 2.0), (0.5, 1.0)]).unwrap();
        let inst = ProblemInstance::new(a, None, model1("0", "4*u1 + 1"), Some(0.125), 4.0)
            .unwrap();
        let inst_h = inst.with_epsilon(None);
        let mesh_h = inst_h.build_mesh(256, DEFAULT_NODE_CAP).unwrap();
        let opts = SolverOptions::default();
        let (u0, _) = solve_newton(&inst_h, &mesh_h, &opts).unwrap();
        let mesh = inst.build_mesh(256, DEFAULT_NODE_CAP).unwrap();
        let (_, rep) = solve_frozen(&inst, &mesh, &u0, &opts).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 2, "iterations {}", rep.iterations);
    }

    #[test]
    fn frozen_solve_satisfies_its_own_error_bound() {
        let inst = cubic_instance(Some(1.0 / 16.0));
        let opts = SolverOptions::default();
        let inst_h = inst.with_epsilon(None);
        let mesh_h = inst_h.build_mesh(512, DEFAULT_NODE_CAP).unwrap();
        let (u0, _) = solve_newton(&inst_h, &mesh_h, &opts).unwrap();
        let mesh = inst.build_mesh(512, DEFAULT_NODE_CAP).unwrap();
        let (_, rep) = solve_frozen(&inst, &mesh, &u0, &opts).unwrap();
        assert!(rep.converged);
        let err = rep.error_vs_reference.unwrap();
        let bound = rep.error_bound.unwrap();
        assert!(err <= bound, "error {err} exceeds bound {bound}");
        assert!(err > 0.0);
    }

    #[test]
    fn frozen_solve_rejects_inadmissible_defect() {
        let b = scalar_localized(&[0.0, 2.0], &[5.0]).unwrap();
        let inst = ProblemInstance::new(
            two_phase(),
            Some(b),
            model1("0", "u1"),
            Some(0.25),
            4.0,
        )
        .unwrap();
        let mesh = inst.build_mesh(64, DEFAULT_NODE_CAP).unwrap();
        let u0 = GridFunction::zeros(&mesh, 1);
        match solve_frozen(&inst, &mesh, &u0, &SolverOptions::default()) {
            Err(Error::MembershipViolation { clause, .. }) => {
                assert!(clause.contains("|B|_inf"));
            }
            other => panic!("expected membership violation, got {other:?}"),
        }
    }

    #[test]
    fn nonconvergence_carries_contraction_trace() {
        let inst = cubic_instance(Some(0.25));
        let mesh = inst.build_mesh(64, DEFAULT_NODE_CAP).unwrap();
        let u0 = GridFunction::zeros(&mesh, 1);
        let opts = SolverOptions { max_iter: 0, ..Default::default() };
        match solve_frozen(&inst, &mesh, &u0, &opts) {
            Err(Error::NoConvergence { iterations, residual, .. }) => {
                assert_eq!(iterations, 0);
                assert!(residual > 0.0);
            }
            other => panic!("expected no-convergence, got {other:?}"),
        }
    }

    #[test]
    fn nondegeneracy_check_accepts_healthy_instance() {
        let inst = cubic_instance(Some(0.125));
        let rep = check_nondegeneracy(&inst, 64, DEFAULT_NODE_CAP, &SolverOptions::default())
            .unwrap();
        assert!(!rep.degenerate, "{rep:?}");
        assert!(rep.alpha_fine > 1e-3);
        assert!(rep.shrink_factor < 2.0);
    }

    #[test]
    fn sufficient_condition_separates_linear_from_cubic() {
        let linear = ProblemInstance::new(
            two_phase(),
            None,
            model1("0.1*u1", "u1 + sin(2*pi*x)"),
            None,
            4.0,
        )
        .unwrap();
        let rep = sufficient_nondegeneracy(&linear, &[-1.0], &[1.0], 3).unwrap();
        assert!(rep.satisfied, "{rep:?}");
        assert!((rep.q0 - 1.0).abs() < 1e-12);

        let cubic = cubic_instance(None);
        let rep = sufficient_nondegeneracy(&cubic, &[-1.0], &[1.0], 5).unwrap();
        assert!(!rep.satisfied, "{rep:?}");
    }

    #[test]
    fn uniqueness_probe_returns_to_the_same_solution() {
        let inst = cubic_instance(Some(0.125));
        let opts = SolverOptions::default();
        let inst_h = inst.with_epsilon(None);
        let mesh_h = inst_h.build_mesh(128, DEFAULT_NODE_CAP).unwrap();
        let (u0, _) = solve_newton(&inst_h, &mesh_h, &opts).unwrap();
        let mesh = inst.build_mesh(128, DEFAULT_NODE_CAP).unwrap();
        let (u, _) = solve_frozen(&inst, &mesh, &u0, &opts).unwrap();
        let op = FixedPointOperator::for_instance(&inst, &mesh).unwrap();
        let probe = local_uniqueness_probe(&op, &u, 0.05, 8, 1e-8, &opts).unwrap();
        assert!(probe.unique, "{probe:?}");
        assert_eq!(probe.converged, 8);
    }
}
