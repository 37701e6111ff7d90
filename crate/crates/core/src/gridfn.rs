//! Meshes on `[0,1]` and piecewise-linear vector-valued grid functions.
//!
//! The solution space is continuous piecewise-linear functions with values in
//! R^n; on that representation the trapezoid rule is the exact integral, so
//! every cumulative integral below is exact up to rounding as long as the
//! mesh is aligned with the coefficient breakpoints.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::coeff::{scaled_breakpoints, PiecewiseMatrixField, ScaledCoefficient};
use crate::linalg::norm2;
use crate::matrix::SquareMat;
use crate::{Error, Result, MERGE_TOL};

/// Default cap on mesh nodes.
pub const DEFAULT_NODE_CAP: usize = 200_000;

/// Strictly increasing nodes spanning `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<f64>,
}

impl Mesh {
    /// Builds a mesh from explicit nodes (must start at 0, end at 1).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::Invalid { detail: "mesh must span [0,1]".into() });
        }
        if nodes.windows(2).any(|w| w[1] - w[0] <= 0.0) {
            return Err(Error::Invalid { detail: "mesh nodes must be strictly increasing".into() });
        }
        Ok(Self { nodes })
    }

    /// Uniform mesh with `n` intervals.
    pub fn uniform(n: usize) -> Arc<Self> {
        let nodes = (0..=n).map(|i| i as f64 / n as f64).collect();
        Arc::new(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn interval_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Index of the interval containing `x`, clamped to `[0, count-1]`.
    pub fn interval_of(&self, x: f64) -> usize {
        let k = self.nodes.partition_point(|t| *t <= x);
        k.saturating_sub(1).min(self.nodes.len() - 2)
    }

    /// New mesh with every interval split at its midpoint.
    pub fn refine_double(&self) -> Arc<Mesh> {
        let mut nodes = Vec::with_capacity(self.nodes.len() * 2 - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(1.0);
        Arc::new(Mesh { nodes })
    }

    /// New mesh with every interval split into `s` equal parts.
    pub fn refine(&self, s: usize) -> Arc<Mesh> {
        let s = s.max(1);
        let mut nodes = Vec::with_capacity(self.interval_count() * s + 1);
        for w in self.nodes.windows(2) {
            for k in 0..s {
                nodes.push(w[0] + (w[1] - w[0]) * k as f64 / s as f64);
            }
        }
        nodes.push(1.0);
        Arc::new(Mesh { nodes })
    }
}

/// Merges candidate nodes: sorted, clustered within [`MERGE_TOL`], and within
/// a cluster a breakpoint representative wins over a uniform node so that
/// coefficient alignment is exact.
fn merge_nodes(mut cands: Vec<(f64, bool)>) -> Vec<f64> {
    cands.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    let mut out: Vec<(f64, bool)> = Vec::with_capacity(cands.len());
    for (x, is_break) in cands {
        match out.last_mut() {
            Some((last, last_break)) if (x - *last).abs() <= MERGE_TOL => {
                if is_break && !*last_break {
                    *last = x;
                    *last_break = true;
                }
            }
            _ => out.push((x, is_break)),
        }
    }
    out.into_iter().map(|(x, _)| x).collect()
}

/// Builds the solver mesh: a uniform grid with `n_target` intervals merged
/// with the scaled coefficient breakpoints (when `eps` is given) and any
/// declared model breakpoints in `(0,1)`.
pub fn build_mesh(
    eps: Option<f64>,
    a: &PiecewiseMatrixField,
    b: Option<&PiecewiseMatrixField>,
    model_breakpoints: &[f64],
    n_target: usize,
    cap: usize,
) -> Result<Arc<Mesh>> {
    if n_target == 0 {
        return Err(Error::Invalid { detail: "n_target must be positive".into() });
    }
    let mut cands: Vec<(f64, bool)> = Vec::new();
    cands.push((0.0, true));
    cands.push((1.0, true));
    for i in 1..n_target {
        cands.push((i as f64 / n_target as f64, false));
    }
    if let Some(eps) = eps {
        for x in scaled_breakpoints(a, b, eps)? {
            cands.push((x, true));
        }
    }
    for &x in model_breakpoints {
        if x > MERGE_TOL && x < 1.0 - MERGE_TOL {
            cands.push((x, true));
        }
    }
    let nodes = merge_nodes(cands);
    if nodes.len() > cap {
        return Err(Error::MeshTooFine { nodes: nodes.len(), cap });
    }
    Ok(Arc::new(Mesh { nodes }))
}

/// Verifies that every coefficient cell edge appears among the mesh nodes.
pub fn check_alignment(mesh: &Mesh, coeff: &ScaledCoefficient) -> Result<()> {
    for &e in &coeff.edges()[1..coeff.edges().len() - 1] {
        let i = mesh.nodes().partition_point(|t| *t < e - 1e-12);
        let hit = mesh.nodes().get(i).map(|t| (t - e).abs() <= 1e-12).unwrap_or(false);
        if !hit {
            return Err(Error::MeshNotAligned { breakpoint: e });
        }
    }
    Ok(())
}

/// Piecewise-linear function on a [`Mesh`] with values in R^n, stored
/// node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Arc<Mesh>,
    n: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(mesh: &Arc<Mesh>, n: usize) -> Self {
        Self { mesh: Arc::clone(mesh), n, values: vec![0.0; n * mesh.node_count()] }
    }

    /// Fills node values from a function of the node coordinate.
    pub fn from_fn(mesh: &Arc<Mesh>, n: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut g = Self::zeros(mesh, n);
        for (i, &x) in mesh.nodes().iter().enumerate() {
            f(x, &mut g.values[i * n..(i + 1) * n]);
        }
        g
    }

    pub fn from_values(mesh: &Arc<Mesh>, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * mesh.node_count() {
            return Err(Error::Invalid { detail: "value length does not match mesh".into() });
        }
        Ok(Self { mesh: Arc::clone(mesh), n, values })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Linear interpolation at `x` (clamped to `[0,1]`).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let i = self.mesh.interval_of(x);
        let (x0, x1) = (self.mesh.nodes()[i], self.mesh.nodes()[i + 1]);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        let a = self.node(i);
        let b = self.node(i + 1);
        for k in 0..self.n {
            out[k] = a[k] + t * (b[k] - a[k]);
        }
    }

    /// Max over nodes of the Euclidean norm on R^n.
    pub fn sup_norm(&self) -> f64 {
        (0..self.node_count()).map(|i| norm2(self.node(i))).fold(0.0, f64::max)
    }

    /// Max over intervals of the difference-quotient norm.
    pub fn w1inf_seminorm(&self) -> f64 {
        let nodes = self.mesh.nodes();
        let mut worst = 0.0f64;
        let mut diff = vec![0.0; self.n];
        for i in 0..self.mesh.interval_count() {
            let h = nodes[i + 1] - nodes[i];
            let a = self.node(i);
            let b = self.node(i + 1);
            for k in 0..self.n {
                diff[k] = b[k] - a[k];
            }
            worst = worst.max(norm2(&diff) / h);
        }
        worst
    }

    /// Exact cumulative integral of the piecewise-linear interpolant;
    /// the result starts at exactly zero.
    pub fn cumulative_integral(&self) -> GridFunction {
        let mut out = GridFunction::zeros(&self.mesh, self.n);
        self.cumulative_integral_into(&mut out);
        out
    }

    pub fn cumulative_integral_into(&self, out: &mut GridFunction) {
        debug_assert_eq!(out.values.len(), self.values.len());
        let nodes = self.mesh.nodes();
        for k in 0..self.n {
            out.values[k] = 0.0;
        }
        for i in 0..self.mesh.interval_count() {
            let h = nodes[i + 1] - nodes[i];
            for k in 0..self.n {
                let inc = 0.5 * h * (self.node(i)[k] + self.node(i + 1)[k]);
                out.values[(i + 1) * self.n + k] = out.values[i * self.n + k] + inc;
            }
        }
    }

    /// Exact cumulative integral of `x -> M(x)^-1 g(x)` for the piecewise
    /// constant coefficient `M`; the mesh must be aligned with the
    /// coefficient cells.
    pub fn weighted_cumulative_integral(&self, coeff: &ScaledCoefficient) -> GridFunction {
        let mut out = GridFunction::zeros(&self.mesh, self.n);
        self.weighted_cumulative_integral_into(coeff, &mut out);
        out
    }

    pub fn weighted_cumulative_integral_into(
        &self,
        coeff: &ScaledCoefficient,
        out: &mut GridFunction,
    ) {
        let n = self.n;
        debug_assert_eq!(coeff.dim(), n);
        debug_assert_eq!(out.values.len(), self.values.len());
        let nodes = self.mesh.nodes();
        let mut avg = [0.0; 8];
        let mut inc = [0.0; 8];
        let mut avg_v;
        let mut inc_v;
        let (avg, inc): (&mut [f64], &mut [f64]) = if n <= 8 {
            (&mut avg[..n], &mut inc[..n])
        } else {
            avg_v = vec![0.0; n];
            inc_v = vec![0.0; n];
            (&mut avg_v, &mut inc_v)
        };
        for k in 0..n {
            out.values[k] = 0.0;
        }
        for i in 0..self.mesh.interval_count() {
            let h = nodes[i + 1] - nodes[i];
            let cell = coeff.cell_of(0.5 * (nodes[i] + nodes[i + 1]));
            let inv = coeff.inverse(cell);
            let a = self.node(i);
            let b = self.node(i + 1);
            for k in 0..n {
                avg[k] = 0.5 * h * (a[k] + b[k]);
            }
            inv.mul_vec_into(avg, inc);
            for k in 0..n {
                out.values[(i + 1) * n + k] = out.values[i * n + k] + inc[k];
            }
        }
    }

    /// `self += s * other` (same mesh).
    pub fn add_scaled(&mut self, other: &GridFunction, s: f64) {
        debug_assert!(Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.nodes() == other.mesh.nodes());
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.values.iter_mut() {
            *a *= s;
        }
    }

    /// Sup-norm of the difference (same mesh).
    pub fn max_node_diff(&self, other: &GridFunction) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let mut worst = 0.0f64;
        let mut diff = vec![0.0; self.n];
        for i in 0..self.node_count() {
            for k in 0..self.n {
                diff[k] = self.node(i)[k] - other.node(i)[k];
            }
            worst = worst.max(norm2(&diff));
        }
        worst
    }

    /// Interpolates `self` onto another mesh.
    pub fn resample(&self, mesh: &Arc<Mesh>) -> GridFunction {
        let mut out = GridFunction::zeros(mesh, self.n);
        for (i, &x) in mesh.nodes().iter().enumerate() {
            let mut buf = vec![0.0; self.n];
            self.eval_into(x, &mut buf);
            out.node_mut(i).copy_from_slice(&buf);
        }
        out
    }
}

/// Applies a constant matrix nodewise: `out_i = m * g_i`.
pub fn apply_matrix_nodewise(m: &SquareMat, g: &GridFunction) -> GridFunction {
    let n = g.dim();
    let mut out = GridFunction::zeros(g.mesh(), n);
    let mut buf = vec![0.0; n];
    for i in 0..g.node_count() {
        m.mul_vec_into(g.node(i), &mut buf);
        out.node_mut(i).copy_from_slice(&buf);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{scalar_localized, scalar_periodic};

    fn two_phase() -> PiecewiseMatrixField {
        scalar_periodic(&[(0.0, 2.0), (0.5, 1.0)]).unwrap()
    }

    fn assert_nodes_close(got: &[f64], want: &[f64]) {
        assert_eq!(got.len(), want.len(), "node count: {got:?} vs {want:?}");
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-14, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn build_mesh_unions_uniform_and_scaled_breakpoints() {
        let mesh = build_mesh(Some(0.5), &two_phase(), None, &[], 4, DEFAULT_NODE_CAP).unwrap();
        assert_nodes_close(mesh.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);

        let mesh = build_mesh(Some(0.4), &two_phase(), None, &[], 4, DEFAULT_NODE_CAP).unwrap();
        assert_nodes_close(mesh.nodes(), &[0.0, 0.2, 0.25, 0.4, 0.5, 0.6, 0.75, 0.8, 1.0]);
    }

    #[test]
    fn build_mesh_respects_cap() {
        let err = build_mesh(Some(1e-9), &two_phase(), None, &[], 4, DEFAULT_NODE_CAP);
        assert!(matches!(err, Err(Error::MeshTooFine { .. })));
        let err = build_mesh(None, &two_phase(), None, &[], 1000, 100);
        assert!(matches!(err, Err(Error::MeshTooFine { nodes: 1001, cap: 100 })));
    }

    #[test]
    fn build_mesh_includes_model_breakpoints() {
        let mesh = build_mesh(None, &two_phase(), None, &[0.3], 2, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(mesh.nodes(), &[0.0, 0.3, 0.5, 1.0]);
    }

    #[test]
    fn norms_of_parabola_on_coarse_mesh() {
        let mesh = Mesh::uniform(4);
        let u = GridFunction::from_fn(&mesh, 1, |x, out| out[0] = x * (1.0 - x));
        assert!((u.sup_norm() - 0.25).abs() < 1e-15);
        assert!((u.w1inf_seminorm() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cumulative_integral_is_exact_for_linear_data() {
        let mesh = build_mesh(Some(0.4), &two_phase(), None, &[], 7, DEFAULT_NODE_CAP).unwrap();
        let u = GridFunction::from_fn(&mesh, 1, |x, out| out[0] = 3.0 * x - 1.0);
        let v = u.cumulative_integral();
        assert_eq!(v.node(0)[0], 0.0);
        let last = v.node(v.node_count() - 1)[0];
        assert!((last - 0.5).abs() < 1e-15);
        for (i, &x) in mesh.nodes().iter().enumerate() {
            assert!((v.node(i)[0] - (1.5 * x * x - x)).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_integral_matches_hand_value() {
        let mesh = build_mesh(Some(0.5), &two_phase(), None, &[], 4, DEFAULT_NODE_CAP).unwrap();
        let sc = ScaledCoefficient::scaled(&two_phase(), None, 0.5).unwrap();
        let one = GridFunction::from_fn(&mesh, 1, |_, out| out[0] = 1.0);
        let w = one.weighted_cumulative_integral(&sc);
        assert!((w.node(w.node_count() - 1)[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn weighted_integral_is_linear_and_refinement_invariant() {
        let a = two_phase();
        let b = scalar_localized(&[0.0, 1.0], &[0.4]).unwrap();
        let sc = ScaledCoefficient::scaled(&a, Some(&b), 0.25).unwrap();
        let mesh = build_mesh(Some(0.25), &a, Some(&b), &[], 16, DEFAULT_NODE_CAP).unwrap();
        let f = GridFunction::from_fn(&mesh, 1, |x, out| out[0] = x * x - 0.3);
        let g = GridFunction::from_fn(&mesh, 1, |x, out| out[0] = 1.0 - x);

        // Linearity.
        let mut combo = f.clone();
        combo.scale(2.0);
        combo.add_scaled(&g, -3.5);
        let direct = combo.weighted_cumulative_integral(&sc);
        let mut by_parts = f.weighted_cumulative_integral(&sc);
        by_parts.scale(2.0);
        by_parts.add_scaled(&g.weighted_cumulative_integral(&sc), -3.5);
        assert!(direct.max_node_diff(&by_parts) < 1e-13);

        // Refinement leaves nodal values unchanged: the integrand is the
        // piecewise-linear interpolant either way.
        let fine = mesh.refine_double();
        let f_fine = f.resample(&fine);
        let w_fine = f_fine.weighted_cumulative_integral(&sc);
        let w = f.weighted_cumulative_integral(&sc);
        for (i, &x) in mesh.nodes().iter().enumerate() {
            let mut buf = [0.0];
            w_fine.eval_into(x, &mut buf);
            assert!((buf[0] - w.node(i)[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn alignment_check_flags_missing_breakpoints() {
        let sc = ScaledCoefficient::scaled(&two_phase(), None, 0.5).unwrap();
        let good = Mesh::uniform(8);
        assert!(check_alignment(&good, &sc).is_ok());
        let bad = Mesh::uniform(3);
        assert!(matches!(check_alignment(&bad, &sc), Err(Error::MeshNotAligned { .. })));
    }
}
