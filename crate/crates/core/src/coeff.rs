//! Piecewise-constant matrix coefficients.
//!
//! Fields come in two flavors: 1-periodic (the oscillating matrix `A`,
//! covering one period `[0,1)`) and localized (the defect `B`, supported on a
//! finite interval and zero elsewhere). All integrals over these fields are
//! finite sums, so homogenized and effective matrices are exact up to
//! rounding.
//!
//! Conventions: fields are right-continuous (a breakpoint evaluates to the
//! cell on its right), and a localized field evaluates to zero outside its
//! support, including at the right support endpoint.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::matrix::SquareMat;
use crate::{Error, Result, MERGE_TOL};

/// Hard cap on refined-partition cells; keeps pathological epsilons from
/// exhausting memory before a mesh cap can intervene.
pub const PARTITION_CELL_CAP: usize = 4_000_000;

/// A piecewise-constant matrix-valued field on the microscopic variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseMatrixField {
    n: usize,
    /// `k + 1` strictly increasing cell edges.
    edges: Vec<f64>,
    cells: Vec<SquareMat>,
    periodic: bool,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Invalid { detail: "field needs at least one cell".into() });
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::Invalid { detail: "non-finite breakpoint".into() });
    }
    if edges.windows(2).any(|w| w[1] - w[0] <= 0.0) {
        return Err(Error::Invalid { detail: "breakpoints must be strictly increasing".into() });
    }
    Ok(())
}

fn check_cells(edges: &[f64], cells: &[SquareMat]) -> Result<usize> {
    if cells.len() + 1 != edges.len() {
        return Err(Error::Invalid {
            detail: alloc::format!("{} cells for {} edges", cells.len(), edges.len()),
        });
    }
    let n = cells[0].dim();
    if cells.iter().any(|c| c.dim() != n) {
        return Err(Error::Invalid { detail: "inconsistent cell dimensions".into() });
    }
    Ok(n)
}

impl PiecewiseMatrixField {
    /// 1-periodic field. `left_edges` are the cell left edges inside one
    /// period, starting at exactly `0.0`; the final edge `1.0` is implicit.
    pub fn periodic(left_edges: Vec<f64>, cells: Vec<SquareMat>) -> Result<Self> {
        let mut edges = left_edges;
        if edges.first() != Some(&0.0) {
            return Err(Error::Invalid { detail: "periodic field must start at 0".into() });
        }
        if edges.last().map(|e| *e >= 1.0).unwrap_or(true) {
            return Err(Error::Invalid { detail: "periodic breakpoints must lie in [0,1)".into() });
        }
        edges.push(1.0);
        check_edges(&edges)?;
        let n = check_cells(&edges, &cells)?;
        Ok(Self { n, edges, cells, periodic: true })
    }

    /// Localized field supported on `[edges[0], edges[last]]`, zero outside.
    pub fn localized(edges: Vec<f64>, cells: Vec<SquareMat>) -> Result<Self> {
        check_edges(&edges)?;
        let n = check_cells(&edges, &cells)?;
        Ok(Self { n, edges, cells, periodic: false })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Support interval of a localized field.
    pub fn support(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn cells(&self) -> &[SquareMat] {
        &self.cells
    }

    fn cell_index_local(&self, t: f64) -> usize {
        // Right-limit convention: a point equal to an edge belongs to the
        // cell on the right.
        let k = self.edges.partition_point(|e| *e <= t);
        k.saturating_sub(1).min(self.cells.len() - 1)
    }

    /// Field value at `y`; zero outside the support of a localized field.
    pub fn eval(&self, y: f64) -> SquareMat {
        if self.periodic {
            let t = y - math::floor(y);
            self.cells[self.cell_index_local(t)].clone()
        } else {
            let (lo, hi) = self.support();
            if y < lo || y >= hi {
                SquareMat::zeros(self.n)
            } else {
                self.cells[self.cell_index_local(y)].clone()
            }
        }
    }

    /// `L^inf` norm: largest spectral norm over cells (zero elsewhere).
    pub fn norm_inf(&self) -> f64 {
        self.cells.iter().map(|c| c.spectral_norm()).fold(0.0, f64::max)
    }

    /// Exact `L^1` norm of a localized field.
    pub fn norm_l1(&self) -> f64 {
        self.edges
            .windows(2)
            .zip(self.cells.iter())
            .map(|(w, c)| (w[1] - w[0]) * c.spectral_norm())
            .sum()
    }
}

/// Ellipticity constants of `A` and `A + B`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticityReport {
    /// Essential infimum of the smallest symmetric-part eigenvalue of `A`.
    pub m_a: f64,
    /// Same for `A + B` over the whole line.
    pub m_ab: f64,
    /// Essential supremum of the spectral norm of `A(y)^-1`.
    pub sup_inv_a: f64,
    /// Same for `(A + B)^-1`.
    pub sup_inv_ab: f64,
    pub norm_b_inf: f64,
    pub norm_b_one: f64,
}

fn require_shapes(a: &PiecewiseMatrixField, b: Option<&PiecewiseMatrixField>) -> Result<()> {
    if !a.is_periodic() {
        return Err(Error::Invalid { detail: "A must be periodic".into() });
    }
    if let Some(b) = b {
        if b.is_periodic() {
            return Err(Error::Invalid { detail: "B must be localized".into() });
        }
        if b.dim() != a.dim() {
            return Err(Error::Invalid { detail: "A and B dimension mismatch".into() });
        }
    }
    Ok(())
}

/// Exact partition of the defect support into cells on which `A + B` is
/// constant: the periodic extension of `A`'s breakpoints merged with `B`'s.
fn summed_cells_on_support(
    a: &PiecewiseMatrixField,
    b: &PiecewiseMatrixField,
) -> Vec<(f64, f64, SquareMat)> {
    let (lo, hi) = b.support();
    let mut edges: Vec<f64> = b.edges().to_vec();
    let j_lo = math::floor(lo) as i64;
    let j_hi = math::floor(hi) as i64 + 1;
    for j in j_lo..=j_hi {
        for e in &a.edges()[..a.cells().len()] {
            let t = j as f64 + e;
            if t > lo + MERGE_TOL && t < hi - MERGE_TOL {
                edges.push(t);
            }
        }
    }
    edges.sort_by(|x, y| x.partial_cmp(y).expect("finite edges"));
    edges.dedup_by(|x, y| (*x - *y).abs() <= MERGE_TOL);
    let mut out = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let mut m = a.eval(mid);
        m.add_scaled(&b.eval(mid), 1.0);
        out.push((w[0], w[1], m));
    }
    out
}

/// Computes ellipticity constants, rejecting non-elliptic data.
pub fn ellipticity(
    a: &PiecewiseMatrixField,
    b: Option<&PiecewiseMatrixField>,
) -> Result<EllipticityReport> {
    require_shapes(a, b)?;
    let m_a = a.cells().iter().map(|c| c.min_sym_eigenvalue()).fold(f64::INFINITY, f64::min);
    let mut m_ab = m_a;
    let mut support_cells: Vec<SquareMat> = Vec::new();
    if let Some(b) = b {
        for (_, _, m) in summed_cells_on_support(a, b) {
            m_ab = m_ab.min(m.min_sym_eigenvalue());
            support_cells.push(m);
        }
    }
    if m_ab <= 0.0 {
        return Err(Error::NonElliptic { m: m_ab });
    }
    let sup_inv = |cells: &[SquareMat]| -> Result<f64> {
        let mut s: f64 = 0.0;
        for c in cells {
            s = s.max(c.inverse()?.spectral_norm());
        }
        Ok(s)
    };
    let sup_inv_a = sup_inv(a.cells())?;
    let sup_inv_ab = sup_inv(&support_cells)?.max(sup_inv_a);
    Ok(EllipticityReport {
        m_a,
        m_ab,
        sup_inv_a,
        sup_inv_ab,
        norm_b_inf: b.map(|b| b.norm_inf()).unwrap_or(0.0),
        norm_b_one: b.map(|b| b.norm_l1()).unwrap_or(0.0),
    })
}

/// Admissibility report for a defect against the class parameter `r`:
/// the norm clause `|B|_inf + |B|_1 <= r` and the ellipticity clause
/// `(A+B) xi . xi >= |xi|^2 / r` almost everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub member: bool,
    pub norm_sum: f64,
    pub ellipticity_floor: f64,
    pub r: f64,
    /// First violated clause, if any.
    pub violated: Option<&'static str>,
}

pub fn check_mr_membership(
    a: &PiecewiseMatrixField,
    b: Option<&PiecewiseMatrixField>,
    r: f64,
) -> Result<MembershipReport> {
    require_shapes(a, b)?;
    if !(r > 0.0) {
        return Err(Error::Invalid { detail: "r must be positive".into() });
    }
    let norm_sum = b.map(|b| b.norm_inf() + b.norm_l1()).unwrap_or(0.0);
    let mut floor = a.cells().iter().map(|c| c.min_sym_eigenvalue()).fold(f64::INFINITY, f64::min);
    if let Some(b) = b {
        for (_, _, m) in summed_cells_on_support(a, b) {
            floor = floor.min(m.min_sym_eigenvalue());
        }
    }
    let violated = if norm_sum > r {
        Some("|B|_inf + |B|_1 <= r")
    } else if floor < 1.0 / r {
        Some("(A+B) xi . xi >= |xi|^2 / r")
    } else {
        None
    };
    Ok(MembershipReport { member: violated.is_none(), norm_sum, ellipticity_floor: floor, r, violated })
}

/// Homogenized matrix: inverse of the exact period average of `A^-1`.
pub fn homogenized_matrix_a0(a: &PiecewiseMatrixField) -> Result<SquareMat> {
    require_shapes(a, None)?;
    let n = a.dim();
    let mut acc = SquareMat::zeros(n);
    for (w, c) in a.edges().windows(2).zip(a.cells().iter()) {
        acc.add_scaled(&c.inverse()?, w[1] - w[0]);
    }
    acc.inverse()
}

/// The coefficient `x -> A(x/eps) + B(x/eps)` resolved on `[0,1]` into an
/// explicit cell partition with prefix sums of the inverse integral.
#[derive(Debug, Clone)]
pub struct ScaledCoefficient {
    n: usize,
    edges: Vec<f64>,
    values: Vec<SquareMat>,
    inverses: Vec<SquareMat>,
    /// `prefix[i]` is the exact integral of the inverse over `[0, edges[i]]`.
    prefix: Vec<SquareMat>,
}

/// Breakpoints of the scaled coefficient in the open interval `(0,1)`.
pub(crate) fn scaled_breakpoints(
    a: &PiecewiseMatrixField,
    b: Option<&PiecewiseMatrixField>,
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Invalid { detail: "epsilon must be positive and finite".into() });
    }
    let periods = 1.0 / eps;
    if periods * a.cells().len() as f64 > PARTITION_CELL_CAP as f64 {
        return Err(Error::MeshTooFine {
            nodes: (periods * a.cells().len() as f64) as usize,
            cap: PARTITION_CELL_CAP,
        });
    }
    let mut out = Vec::new();
    let j_hi = math::floor(periods) as i64 + 1;
    for e in &a.edges()[..a.cells().len()] {
        for j in -1..=j_hi {
            let x = eps * (j as f64 + e);
            if x > MERGE_TOL && x < 1.0 - MERGE_TOL {
                out.push(x);
            }
        }
    }
    if let Some(b) = b {
        for e in b.edges() {
            let x = eps * e;
            if x > MERGE_TOL && x < 1.0 - MERGE_TOL {
                out.push(x);
            }
        }
    }
    out.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
    out.dedup_by(|x, y| (*x - *y).abs() <= MERGE_TOL);
    Ok(out)
}

impl ScaledCoefficient {
    /// Resolves `A(./eps) + B(./eps)` on `[0,1]`.
    pub fn scaled(
        a: &PiecewiseMatrixField,
        b: Option<&PiecewiseMatrixField>,
        eps: f64,
    ) -> Result<Self> {
        require_shapes(a, b)?;
        let mut edges = scaled_breakpoints(a, b, eps)?;
        edges.insert(0, 0.0);
        edges.push(1.0);
        let mut values = Vec::with_capacity(edges.len() - 1);
        for w in edges.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let y = mid / eps;
            let mut m = a.eval(y);
            if let Some(b) = b {
                m.add_scaled(&b.eval(y), 1.0);
            }
            values.push(m);
        }
        Self::from_cells(a.dim(), edges, values)
    }

    /// Constant coefficient (the homogenized problem).
    pub fn constant(m: SquareMat) -> Result<Self> {
        Self::from_cells(m.dim(), vec![0.0, 1.0], vec![m])
    }

    fn from_cells(n: usize, edges: Vec<f64>, values: Vec<SquareMat>) -> Result<Self> {
        let mut inverses = Vec::with_capacity(values.len());
        for v in &values {
            inverses.push(v.inverse()?);
        }
        let mut prefix = Vec::with_capacity(edges.len());
        prefix.push(SquareMat::zeros(n));
        for (i, w) in edges.windows(2).enumerate() {
            let mut next = prefix[i].clone();
            next.add_scaled(&inverses[i], w[1] - w[0]);
            prefix.push(next);
        }
        Ok(Self { n, edges, values, inverses, prefix })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    /// Index of the cell containing `x` (right-limit convention, clamped).
    pub fn cell_of(&self, x: f64) -> usize {
        let k = self.edges.partition_point(|e| *e <= x);
        k.saturating_sub(1).min(self.values.len() - 1)
    }

    pub fn value(&self, cell: usize) -> &SquareMat {
        &self.values[cell]
    }

    pub fn inverse(&self, cell: usize) -> &SquareMat {
        &self.inverses[cell]
    }

    /// Exact `int_lo^hi M(x)^-1 dx` for `0 <= lo <= hi <= 1`.
    pub fn interval_inverse_integral(&self, lo: f64, hi: f64) -> SquareMat {
        debug_assert!(lo <= hi);
        let i = self.cell_of(lo);
        let j = self.cell_of(hi);
        if i == j {
            let mut m = self.inverses[i].clone();
            m.scale(hi - lo);
            return m;
        }
        let mut acc = self.inverses[i].clone();
        acc.scale(self.edges[i + 1] - lo);
        acc.add_scaled(&self.prefix[j], 1.0);
        acc.add_scaled(&self.prefix[i + 1], -1.0);
        acc.add_scaled(&self.inverses[j], hi - self.edges[j]);
        acc
    }

    /// Effective matrix: inverse of the full inverse integral over `[0,1]`.
    pub fn effective_matrix(&self) -> Result<SquareMat> {
        self.prefix[self.prefix.len() - 1].inverse()
    }
}

/// Effective matrix of the scaled, defect-perturbed coefficient.
pub fn effective_matrix_m(
    a: &PiecewiseMatrixField,
    b: Option<&PiecewiseMatrixField>,
    eps: f64,
) -> Result<SquareMat> {
    ScaledCoefficient::scaled(a, b, eps)?.effective_matrix()
}

/// Helper for scalar (n = 1) fields given as `(left_edge, value)` cells.
pub fn scalar_periodic(cells: &[(f64, f64)]) -> Result<PiecewiseMatrixField> {
    PiecewiseMatrixField::periodic(
        cells.iter().map(|(e, _)| *e).collect(),
        cells.iter().map(|(_, v)| SquareMat::scalar(*v)).collect(),
    )
}

/// Helper for scalar localized fields: `edges` has one more entry than `values`.
pub fn scalar_localized(edges: &[f64], values: &[f64]) -> Result<PiecewiseMatrixField> {
    PiecewiseMatrixField::localized(
        edges.to_vec(),
        values.iter().map(|v| SquareMat::scalar(*v)).collect(),
    )
}

impl core::fmt::Display for MembershipReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "member={} norm_sum={:.6e} (<= r={}) ellipticity_floor={:.6e} (>= 1/r={:.6e}){}",
            self.member,
            self.norm_sum,
            self.r,
            self.ellipticity_floor,
            1.0 / self.r,
            match self.violated {
                Some(c) => alloc::format!(" violated: {c}"),
                None => String::new(),
            }
        )
    }
}
