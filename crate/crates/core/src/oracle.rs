//! Independent reference solutions used to cross-check the fixed-point
//! solver: a P1 Galerkin discretization with its own Newton loop, the weak
//! residual functional it is built from, and an explicit closed form for
//! models whose reaction terms do not depend on `u`.
//!
//! The Galerkin path shares nothing with the operator pipeline except the
//! coefficient data itself: it discretizes the weak form
//! `int M u'.phi' + c.phi' + d.phi = 0` with hat functions, a trapezoid
//! `c`-load, and a lumped `d`-load, and solves the resulting block
//! tridiagonal Newton systems by elimination.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::coeff::ScaledCoefficient;
use crate::gridfn::{check_alignment, GridFunction, Mesh};
use crate::linalg::{norm2, BlockTridiag};
use crate::matrix::SquareMat;
use crate::model::NonlinearModel;
use crate::operator::ProblemInstance;
use crate::{Error, Result};

/// Default refinement of the oracle mesh relative to the solver mesh.
pub const DEFAULT_ORACLE_REFINE: usize = 8;

#[derive(Debug, Clone)]
pub struct FemReport {
    pub iterations: usize,
    pub final_residual: f64,
    /// Nodes of the refined mesh the oracle solved on.
    pub nodes: usize,
}

/// Interior weak residuals of `u` on its own mesh: for each interior node
/// `i`, the hat-function test gives
///
/// ```text
/// R_i = M_L (u_i - u_{i-1})/h_L - M_R (u_{i+1} - u_i)/h_R
///     + (c_{i-1} - c_{i+1})/2 + d_i (h_L + h_R)/2,
/// ```
///
/// exact for piecewise-linear `u` and `c`, lumped in `d`. Returns the
/// stacked interior blocks.
pub fn weak_residual(
    coeff: &ScaledCoefficient,
    model: &NonlinearModel,
    u: &GridFunction,
) -> Result<Vec<f64>> {
    let mesh = u.mesh();
    check_alignment(mesh, coeff)?;
    let n = model.dim();
    let nodes = mesh.nodes();
    let count = mesh.node_count();
    let mut c = vec![0.0; count * n];
    let mut d = vec![0.0; count * n];
    for i in 0..count {
        model.eval_c(nodes[i], u.node(i), &mut c[i * n..(i + 1) * n])?;
        model.eval_d(nodes[i], u.node(i), &mut d[i * n..(i + 1) * n])?;
    }
    let mut out = vec![0.0; (count - 2) * n];
    let mut flux_l = vec![0.0; n];
    let mut flux_r = vec![0.0; n];
    let mut jump = vec![0.0; n];
    for i in 1..count - 1 {
        let h_l = nodes[i] - nodes[i - 1];
        let h_r = nodes[i + 1] - nodes[i];
        let m_l = coeff.value(coeff.cell_of(nodes[i] - 0.5 * h_l));
        let m_r = coeff.value(coeff.cell_of(nodes[i] + 0.5 * h_r));
        for k in 0..n {
            jump[k] = (u.node(i)[k] - u.node(i - 1)[k]) / h_l;
        }
        m_l.mul_vec_into(&jump, &mut flux_l);
        for k in 0..n {
            jump[k] = (u.node(i + 1)[k] - u.node(i)[k]) / h_r;
        }
        m_r.mul_vec_into(&jump, &mut flux_r);
        let r = &mut out[(i - 1) * n..i * n];
        for k in 0..n {
            r[k] = flux_l[k] - flux_r[k]
                + 0.5 * (c[(i - 1) * n + k] - c[(i + 1) * n + k])
                + 0.5 * (h_l + h_r) * d[i * n + k];
        }
    }
    Ok(out)
}

/// Largest interior block norm of [`weak_residual`].
pub fn weak_residual_max(
    coeff: &ScaledCoefficient,
    model: &NonlinearModel,
    u: &GridFunction,
) -> Result<f64> {
    let r = weak_residual(coeff, model, u)?;
    let n = model.dim();
    Ok(r.chunks(n).map(norm2).fold(0.0, f64::max))
}

/// Solves the instance by P1 Galerkin on the solver mesh refined `s`-fold,
/// with Newton on the weak residuals. Completely separate from the
/// fixed-point pipeline; used as the numerical oracle.
pub fn solve_fem(
    inst: &ProblemInstance,
    base_mesh: &Arc<Mesh>,
    s: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, FemReport)> {
    if s < 1 {
        return Err(Error::Invalid { detail: "oracle refinement must be at least 1".into() });
    }
    let mesh = base_mesh.refine(s);
    let coeff = inst.coefficient()?;
    check_alignment(&mesh, &coeff)?;
    let model = &inst.model;
    let n = model.dim();
    let nodes = mesh.nodes();
    let count = mesh.node_count();
    let interior = count - 2;
    let mut u = GridFunction::zeros(&mesh, n);
    let mut iterations = 0;
    let mut final_residual = f64::INFINITY;
    for iter in 0..=max_iter {
        let r = weak_residual(&coeff, model, &u)?;
        let rmax = r.chunks(n).map(norm2).fold(0.0, f64::max);
        final_residual = rmax;
        iterations = iter;
        if rmax <= tol {
            return Ok((u, FemReport { iterations, final_residual, nodes: count }));
        }
        if iter == max_iter {
            break;
        }
        // Block-tridiagonal Jacobian of the interior residuals.
        let mut sub = Vec::with_capacity(interior);
        let mut diag = Vec::with_capacity(interior);
        let mut sup = Vec::with_capacity(interior);
        for i in 1..count - 1 {
            let h_l = nodes[i] - nodes[i - 1];
            let h_r = nodes[i + 1] - nodes[i];
            let m_l = coeff.value(coeff.cell_of(nodes[i] - 0.5 * h_l));
            let m_r = coeff.value(coeff.cell_of(nodes[i] + 0.5 * h_r));

            let mut lo = m_l.clone();
            lo.scale(-1.0 / h_l);
            lo.add_scaled(&model.jac_c(nodes[i - 1], u.node(i - 1))?, 0.5);
            sub.push(lo);

            let mut mid = m_l.clone();
            mid.scale(1.0 / h_l);
            mid.add_scaled(m_r, 1.0 / h_r);
            mid.add_scaled(&model.jac_d(nodes[i], u.node(i))?, 0.5 * (h_l + h_r));
            diag.push(mid);

            let mut hi = m_r.clone();
            hi.scale(-1.0 / h_r);
            hi.add_scaled(&model.jac_c(nodes[i + 1], u.node(i + 1))?, -0.5);
            sup.push(hi);
        }
        let mut delta = r;
        BlockTridiag { sub, diag, sup }.solve(&mut delta)?;
        for i in 1..count - 1 {
            for k in 0..n {
                u.node_mut(i)[k] -= delta[(i - 1) * n + k];
            }
        }
    }
    Err(Error::NoConvergence {
        iterations,
        residual: final_residual,
        q_trace: alloc::boxed::Box::new(Vec::new()),
    })
}

/// Explicit solution for models independent of `u`: with
/// `g(t) = D(t) - c(t)` and `S(x) = int_0^x M^-1`,
///
/// ```text
/// u(x) = S(x) gamma + int_0^x M^-1 g,   gamma = -S(1)^-1 int_0^1 M^-1 g.
/// ```
///
/// Written directly from that formula, deliberately separate from the
/// operator pipeline, so the two implementations check each other.
pub fn closed_form_linear(inst: &ProblemInstance, mesh: &Arc<Mesh>) -> Result<GridFunction> {
    if inst.model.depends_on_u() {
        return Err(Error::NotLinear);
    }
    let coeff = inst.coefficient()?;
    check_alignment(mesh, &coeff)?;
    let n = inst.dim();
    let nodes = mesh.nodes();
    let count = mesh.node_count();
    let zero_u = vec![0.0; n];
    let mut c = vec![0.0; count * n];
    let mut d = vec![0.0; count * n];
    for i in 0..count {
        inst.model.eval_c(nodes[i], &zero_u, &mut c[i * n..(i + 1) * n])?;
        inst.model.eval_d(nodes[i], &zero_u, &mut d[i * n..(i + 1) * n])?;
    }
    // g_i = D_i - c_i with D the trapezoid prefix of d.
    let mut g = vec![0.0; count * n];
    let mut big_d = vec![0.0; n];
    for k in 0..n {
        g[k] = -c[k];
    }
    for i in 1..count {
        let h = nodes[i] - nodes[i - 1];
        for k in 0..n {
            big_d[k] += 0.5 * h * (d[(i - 1) * n + k] + d[i * n + k]);
            g[i * n + k] = big_d[k] - c[i * n + k];
        }
    }
    // v_i = int_0^{x_i} M^-1 g and s_i = int_0^{x_i} M^-1, per cell.
    let mut v = vec![0.0; count * n];
    let mut s = SquareMat::zeros(n);
    let mut s_at = Vec::with_capacity(count);
    s_at.push(s.clone());
    let mut avg = vec![0.0; n];
    let mut inc = vec![0.0; n];
    for i in 1..count {
        let h = nodes[i] - nodes[i - 1];
        let inv = coeff.inverse(coeff.cell_of(0.5 * (nodes[i - 1] + nodes[i])));
        for k in 0..n {
            avg[k] = 0.5 * h * (g[(i - 1) * n + k] + g[i * n + k]);
        }
        inv.mul_vec_into(&avg, &mut inc);
        for k in 0..n {
            v[i * n + k] = v[(i - 1) * n + k] + inc[k];
        }
        s.add_scaled(inv, h);
        s_at.push(s.clone());
    }
    let mut gamma = vec![0.0; n];
    s.inverse()?.mul_vec_into(&v[(count - 1) * n..], &mut gamma);
    for gk in gamma.iter_mut() {
        *gk = -*gk;
    }
    let mut u = GridFunction::zeros(mesh, n);
    let mut sg = vec![0.0; n];
    for i in 0..count {
        s_at[i].mul_vec_into(&gamma, &mut sg);
        for k in 0..n {
            u.node_mut(i)[k] = sg[k] + v[i * n + k];
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{scalar_localized, scalar_periodic, PiecewiseMatrixField};
    use crate::gridfn::DEFAULT_NODE_CAP;
    use crate::operator::FixedPointOperator;

    fn two_phase() -> PiecewiseMatrixField {
        scalar_periodic(&[(0.0, 2.0), (0.5, 1.0)]).unwrap()
    }

    fn model1(c: &str, d: &str) -> NonlinearModel {
        NonlinearModel::new(1, &[c], &[d], vec![]).unwrap()
    }

    #[test]
    fn fem_is_nodally_exact_for_constant_load() {
        let a = scalar_periodic(&[(0.0, 1.0)]).unwrap();
        let inst = ProblemInstance::new(a, None, model1("0", "1"), None, 2.0).unwrap();
        let mesh = inst.build_mesh(16, DEFAULT_NODE_CAP).unwrap();
        let (u, rep) = solve_fem(&inst, &mesh, 1, 1e-10, 40).unwrap();
        assert!(rep.iterations <= 1);
        for (i, &x) in u.mesh().nodes().iter().enumerate() {
            assert!((u.node(i)[0] - 0.5 * x * (x - 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn fem_and_closed_form_agree_exactly_on_piecewise_linear_data() {
        let b = scalar_localized(&[-1.0, 0.0, 1.0], &[0.5, -0.25]).unwrap();
        let inst = ProblemInstance::new(
            two_phase(),
            Some(b),
            model1("2*x - 0.3", "0.7"),
            Some(0.25),
            4.0,
        )
        .unwrap();
        let mesh = inst.build_mesh(16, DEFAULT_NODE_CAP).unwrap();
        let exact = closed_form_linear(&inst, &mesh).unwrap();
        let (fem, _) = solve_fem(&inst, &mesh, 1, 1e-12, 40).unwrap();
        assert!(exact.max_node_diff(&fem) < 1e-12);
        assert_eq!(exact.node(0)[0], 0.0);
        assert!(exact.node(exact.node_count() - 1)[0].abs() < 1e-13);
    }

    #[test]
    fn fem_converges_at_second_order_on_sinh_problem() {
        let a = scalar_periodic(&[(0.0, 1.0)]).unwrap();
        let inst = ProblemInstance::new(a, None, model1("0", "u1 - 1"), None, 2.0).unwrap();
        let exact = |x: f64| 1.0 - (f64::sinh(x) + f64::sinh(1.0 - x)) / f64::sinh(1.0);
        let mut errs = Vec::new();
        for n in [32, 64] {
            let mesh = inst.build_mesh(n, DEFAULT_NODE_CAP).unwrap();
            let (u, _) = solve_fem(&inst, &mesh, 1, 1e-12, 40).unwrap();
            let worst = u
                .mesh()
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, &x)| (u.node(i)[0] - exact(x)).abs())
                .fold(0.0f64, f64::max);
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!((3.4..4.6).contains(&ratio), "ratio {ratio}, errs {errs:?}");
    }

    #[test]
    fn closed_form_requires_u_free_model() {
        let inst = ProblemInstance::new(two_phase(), None, model1("0", "u1"), None, 2.0).unwrap();
        let mesh = inst.build_mesh(8, DEFAULT_NODE_CAP).unwrap();
        assert!(matches!(closed_form_linear(&inst, &mesh), Err(Error::NotLinear)));
    }

    #[test]
    fn closed_form_matches_operator_pipeline() {
        let b = scalar_localized(&[0.0, 1.5], &[0.4]).unwrap();
        let inst = ProblemInstance::new(
            two_phase(),
            Some(b),
            model1("sin(2*pi*x)", "cos(pi*x) - 0.2"),
            Some(0.2),
            4.0,
        )
        .unwrap();
        let mesh = inst.build_mesh(40, DEFAULT_NODE_CAP).unwrap();
        let u_formula = closed_form_linear(&inst, &mesh).unwrap();
        let op = FixedPointOperator::for_instance(&inst, &mesh).unwrap();
        let u_op = op.apply(&GridFunction::zeros(&mesh, 1)).unwrap();
        assert!(u_formula.max_node_diff(&u_op) < 1e-13);
    }

    #[test]
    fn fem_tracks_solver_on_cubic_instance() {
        let b = scalar_localized(&[-1.0, 0.0, 1.0], &[0.5, -0.25]).unwrap();
        let inst = ProblemInstance::new(
            two_phase(),
            Some(b),
            model1("0.2*u1", "u1^3 - u1 + sin(2*pi*x)"),
            Some(0.125),
            4.0,
        )
        .unwrap();
        let opts = crate::solver::SolverOptions::default();
        let inst_h = inst.with_epsilon(None);
        let mesh_h = inst_h.build_mesh(128, DEFAULT_NODE_CAP).unwrap();
        let (u0, _) = crate::solver::solve_newton(&inst_h, &mesh_h, &opts).unwrap();
        let mesh = inst.build_mesh(128, DEFAULT_NODE_CAP).unwrap();
        let (u, _) = crate::solver::solve_frozen(&inst, &mesh, &u0, &opts).unwrap();
        let (fem, _) = solve_fem(&inst, &mesh, 4, 1e-10, 40).unwrap();
        let worst = mesh
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut buf = [0.0];
                fem.eval_into(x, &mut buf);
                (buf[0] - u.node(i)[0]).abs()
            })
            .fold(0.0f64, f64::max);
        assert!(worst < 2e-3, "solver vs oracle gap {worst}");
    }
}
