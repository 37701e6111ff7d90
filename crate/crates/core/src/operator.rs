//! The fixed-point reformulation of the two-point boundary value problem
//!
//! ```text
//! ((A(x/eps) + B(x/eps)) u' + c(x, u))' = d(x, u),   u(0) = u(1) = 0.
//! ```
//!
//! Integrating twice and choosing the flux constant `gamma(u)` so that the
//! right boundary condition holds gives the map
//!
//! ```text
//! F(u)(x) = int_0^x M(t)^-1 (gamma(u) + D(t) - c(t, u(t))) dt,
//! D(t) = int_0^t d(s, u(s)) ds,
//! gamma(u) = (int_0^1 M^-1)^-1 int_0^1 M^-1 (c - D),
//! ```
//!
//! whose fixed points are exactly the solutions. `M` is either the scaled
//! coefficient `A(x/eps) + B(x/eps)` or the homogenized matrix, so one code
//! path serves both problems. Everything is evaluated nodally on a mesh
//! aligned with the coefficient cells, where the integrals are exact for the
//! piecewise-linear interpolants; `F(u)(0) = 0` holds identically and
//! `F(u)(1)` vanishes up to the accuracy of the small `n x n` solve for
//! `gamma`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::coeff::{
    check_mr_membership, ellipticity, homogenized_matrix_a0, EllipticityReport, MembershipReport,
    PiecewiseMatrixField, ScaledCoefficient,
};
use crate::gridfn::{build_mesh, check_alignment, GridFunction, Mesh};
use crate::linalg::{max_singular_value, min_singular_value, DenseMat, LuFactors};
use crate::matrix::SquareMat;
use crate::model::NonlinearModel;
use crate::{Error, Result};

/// Cap on the dimension of the dense assembled operator.
pub const MAX_ASSEMBLY_DIM: usize = 16_384;

/// A complete problem statement: coefficients, reaction terms, scale, and
/// the defect class radius used for admissibility checks.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub coeff_a: PiecewiseMatrixField,
    pub coeff_b: Option<PiecewiseMatrixField>,
    pub model: NonlinearModel,
    /// `Some(eps)` for the oscillatory problem, `None` for the homogenized
    /// limit (which drops the defect).
    pub epsilon: Option<f64>,
    pub r: f64,
}

impl ProblemInstance {
    pub fn new(
        coeff_a: PiecewiseMatrixField,
        coeff_b: Option<PiecewiseMatrixField>,
        model: NonlinearModel,
        epsilon: Option<f64>,
        r: f64,
    ) -> Result<Self> {
        if model.dim() != coeff_a.dim() {
            return Err(Error::Invalid {
                detail: "model dimension does not match coefficient dimension".into(),
            });
        }
        if let Some(e) = epsilon {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Invalid { detail: "epsilon must lie in (0, 1]".into() });
            }
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Invalid { detail: "r must be positive and finite".into() });
        }
        ellipticity(&coeff_a, coeff_b.as_ref())?;
        Ok(Self { coeff_a, coeff_b, model, epsilon, r })
    }

    pub fn with_epsilon(&self, epsilon: Option<f64>) -> Self {
        Self { epsilon, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.coeff_a.dim()
    }

    pub fn ellipticity(&self) -> Result<EllipticityReport> {
        ellipticity(&self.coeff_a, self.coeff_b.as_ref())
    }

    pub fn membership(&self) -> Result<MembershipReport> {
        check_mr_membership(&self.coeff_a, self.coeff_b.as_ref(), self.r)
    }

    /// The coefficient seen by this instance: scaled oscillatory data, or
    /// the homogenized matrix when `epsilon` is `None`.
    pub fn coefficient(&self) -> Result<ScaledCoefficient> {
        match self.epsilon {
            Some(eps) => ScaledCoefficient::scaled(&self.coeff_a, self.coeff_b.as_ref(), eps),
            None => ScaledCoefficient::constant(homogenized_matrix_a0(&self.coeff_a)?),
        }
    }

    /// Solver mesh: uniform target resolution merged with every breakpoint
    /// of the scaled coefficient and the declared forcing breakpoints.
    pub fn build_mesh(&self, n_target: usize, cap: usize) -> Result<Arc<Mesh>> {
        build_mesh(
            self.epsilon,
            &self.coeff_a,
            self.coeff_b.as_ref(),
            self.model.x_breakpoints(),
            n_target,
            cap,
        )
    }
}

/// The discrete fixed-point map `F` on piecewise-linear grid functions.
pub struct FixedPointOperator {
    mesh: Arc<Mesh>,
    coeff: ScaledCoefficient,
    model: NonlinearModel,
    n: usize,
    /// `s_prefix[i] = int_0^{x_i} M^-1`, exact on the aligned mesh.
    s_prefix: Vec<SquareMat>,
    /// `(int_0^1 M^-1)^-1`.
    s_total_inv: SquareMat,
}

impl FixedPointOperator {
    pub fn new(mesh: Arc<Mesh>, coeff: ScaledCoefficient, model: NonlinearModel) -> Result<Self> {
        if model.dim() != coeff.dim() {
            return Err(Error::Invalid {
                detail: "model dimension does not match coefficient dimension".into(),
            });
        }
        check_alignment(&mesh, &coeff)?;
        let n = coeff.dim();
        let nodes = mesh.nodes();
        let mut s_prefix = Vec::with_capacity(nodes.len());
        let mut acc = SquareMat::zeros(n);
        s_prefix.push(acc.clone());
        for i in 0..mesh.interval_count() {
            let h = nodes[i + 1] - nodes[i];
            let inv = coeff.inverse(coeff.cell_of(0.5 * (nodes[i] + nodes[i + 1])));
            acc.add_scaled(inv, h);
            s_prefix.push(acc.clone());
        }
        let s_total_inv = s_prefix.last().unwrap().inverse()?;
        Ok(Self { mesh, coeff, model, n, s_prefix, s_total_inv })
    }

    pub fn for_instance(inst: &ProblemInstance, mesh: &Arc<Mesh>) -> Result<Self> {
        Self::new(Arc::clone(mesh), inst.coefficient()?, inst.model.clone())
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coeff(&self) -> &ScaledCoefficient {
        &self.coeff
    }

    pub fn model(&self) -> &NonlinearModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Total number of scalar unknowns (`n` per mesh node).
    pub fn total_dim(&self) -> usize {
        self.n * self.mesh.node_count()
    }

    /// Nodal samples of `c(x, u)` minus the running integral of `d(x, u)`.
    fn nonlinear_w(&self, u: &GridFunction) -> Result<GridFunction> {
        let mut cg = GridFunction::zeros(&self.mesh, self.n);
        let mut dg = GridFunction::zeros(&self.mesh, self.n);
        for (i, &x) in self.mesh.nodes().iter().enumerate() {
            self.model.eval_c(x, u.node(i), cg.node_mut(i))?;
            self.model.eval_d(x, u.node(i), dg.node_mut(i))?;
        }
        let dcum = dg.cumulative_integral();
        cg.add_scaled(&dcum, -1.0);
        Ok(cg)
    }

    /// Shared tail of `F` and `F'`: propagates `w` through the weighted
    /// integral, resolves the flux constant, and writes `S(x) gamma - T(x)`.
    fn propagate_into(&self, w: &GridFunction, t: &mut GridFunction, out: &mut GridFunction) {
        w.weighted_cumulative_integral_into(&self.coeff, t);
        let last = self.mesh.node_count() - 1;
        let mut gamma = vec![0.0; self.n];
        self.s_total_inv.mul_vec_into(t.node(last), &mut gamma);
        for i in 0..self.mesh.node_count() {
            self.s_prefix[i].mul_vec_into(&gamma, out.node_mut(i));
            let ti = i * self.n;
            for k in 0..self.n {
                out.values_mut()[ti + k] -= t.values()[ti + k];
            }
        }
    }

    /// The flux constant `gamma(u)`.
    pub fn gamma(&self, u: &GridFunction) -> Result<Vec<f64>> {
        let w = self.nonlinear_w(u)?;
        let t = w.weighted_cumulative_integral(&self.coeff);
        let mut gamma = vec![0.0; self.n];
        self.s_total_inv.mul_vec_into(t.node(self.mesh.node_count() - 1), &mut gamma);
        Ok(gamma)
    }

    /// Evaluates `F(u)`.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        let w = self.nonlinear_w(u)?;
        let mut t = GridFunction::zeros(&self.mesh, self.n);
        let mut out = GridFunction::zeros(&self.mesh, self.n);
        self.propagate_into(&w, &mut t, &mut out);
        Ok(out)
    }

    /// Linearizes `F` at `u0`.
    pub fn linearize<'a>(&'a self, u0: &GridFunction) -> Result<Linearization<'a>> {
        let mut p = Vec::with_capacity(self.mesh.node_count());
        let mut q = Vec::with_capacity(self.mesh.node_count());
        for (i, &x) in self.mesh.nodes().iter().enumerate() {
            p.push(self.model.jac_c(x, u0.node(i))?);
            q.push(self.model.jac_d(x, u0.node(i))?);
        }
        Ok(Linearization { op: self, p, q })
    }
}

/// The Frechet derivative `F'(u0)`: the same integral pipeline with the
/// reaction terms replaced by their Jacobians at `u0`.
pub struct Linearization<'a> {
    op: &'a FixedPointOperator,
    p: Vec<SquareMat>,
    q: Vec<SquareMat>,
}

/// Reusable buffers for [`Linearization::apply_into`].
pub struct LinScratch {
    pv: GridFunction,
    qv: GridFunction,
    dq: GridFunction,
    t: GridFunction,
}

impl LinScratch {
    pub fn new(mesh: &Arc<Mesh>, n: usize) -> Self {
        Self {
            pv: GridFunction::zeros(mesh, n),
            qv: GridFunction::zeros(mesh, n),
            dq: GridFunction::zeros(mesh, n),
            t: GridFunction::zeros(mesh, n),
        }
    }
}

impl<'a> Linearization<'a> {
    pub fn operator(&self) -> &FixedPointOperator {
        self.op
    }

    /// `out = F'(u0) v`.
    pub fn apply_into(&self, v: &GridFunction, scratch: &mut LinScratch, out: &mut GridFunction) {
        let op = self.op;
        for i in 0..op.mesh.node_count() {
            self.p[i].mul_vec_into(v.node(i), scratch.pv.node_mut(i));
            self.q[i].mul_vec_into(v.node(i), scratch.qv.node_mut(i));
        }
        scratch.qv.cumulative_integral_into(&mut scratch.dq);
        scratch.pv.add_scaled(&scratch.dq, -1.0);
        op.propagate_into(&scratch.pv, &mut scratch.t, out);
    }

    pub fn apply(&self, v: &GridFunction) -> GridFunction {
        let mut scratch = LinScratch::new(&self.op.mesh, self.op.n);
        let mut out = GridFunction::zeros(&self.op.mesh, self.op.n);
        self.apply_into(v, &mut scratch, &mut out);
        out
    }
}

/// Dense assembly of `F'(u0)` together with an LU factorization of
/// `K = I - F'(u0)`, the frozen iteration matrix.
pub struct AssembledOperator {
    dim: usize,
    fprime: DenseMat,
    k_lu: LuFactors,
}

impl AssembledOperator {
    /// Pushes every nodal basis vector through the linearized pipeline.
    pub fn assemble(lin: &Linearization<'_>) -> Result<Self> {
        let op = lin.operator();
        let dim = op.total_dim();
        if dim > MAX_ASSEMBLY_DIM {
            return Err(Error::Invalid {
                detail: alloc::format!(
                    "assembled operator dimension {dim} exceeds cap {MAX_ASSEMBLY_DIM}"
                ),
            });
        }
        let mut fprime = DenseMat::zeros(dim);
        let mut v = GridFunction::zeros(op.mesh(), op.dim());
        let mut out = GridFunction::zeros(op.mesh(), op.dim());
        let mut scratch = LinScratch::new(op.mesh(), op.dim());
        for j in 0..dim {
            v.values_mut()[j] = 1.0;
            lin.apply_into(&v, &mut scratch, &mut out);
            for i in 0..dim {
                fprime.set(i, j, out.values()[i]);
            }
            v.values_mut()[j] = 0.0;
        }
        let mut k = DenseMat::identity(dim);
        k.add_scaled(&fprime, -1.0);
        let k_lu = LuFactors::factor(k)?;
        Ok(Self { dim, fprime, k_lu })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fprime_matrix(&self) -> &DenseMat {
        &self.fprime
    }

    /// `out = F'(u0) v` via the dense matrix.
    pub fn apply_fprime(&self, v: &[f64], out: &mut [f64]) {
        self.fprime.matvec_into(v, out);
    }

    /// `out = (I - F'(u0)) v`.
    pub fn apply_k(&self, v: &[f64], out: &mut [f64]) {
        self.fprime.matvec_into(v, out);
        for (o, vi) in out.iter_mut().zip(v.iter()) {
            *o = vi - *o;
        }
    }

    /// Solves `(I - F'(u0)) x = b` with one step of iterative refinement.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        x.copy_from_slice(b);
        self.k_lu.solve_in_place(x);
        let mut resid = vec![0.0; self.dim];
        self.apply_k(x, &mut resid);
        for (r, bi) in resid.iter_mut().zip(b.iter()) {
            *r = bi - *r;
        }
        self.k_lu.solve_in_place(&mut resid);
        for (xi, ri) in x.iter_mut().zip(resid.iter()) {
            *xi += ri;
        }
    }

    /// Smallest singular value of `I - F'(u0)` in the Euclidean nodal norm;
    /// the nondegeneracy margin of the linearized problem.
    pub fn estimate_alpha<R: Rng>(&self, rng: &mut R) -> f64 {
        min_singular_value(|v, out| self.apply_k(v, out), &self.k_lu, rng)
    }

    /// Largest singular value of `F'(u0)` itself.
    pub fn fprime_norm<R: Rng>(&self, rng: &mut R) -> f64 {
        max_singular_value(&self.fprime, rng)
    }
}
