//! Dense linear algebra at mesh scale: LU with partial pivoting (plain and
//! transposed solves), extreme singular values by power iteration, and the
//! block-tridiagonal solver used by the Galerkin oracle.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::matrix::SquareMat;
use crate::{Error, Result};

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

/// Row-major square matrix sized by the number of mesh unknowns.
#[derive(Debug, Clone)]
pub struct DenseMat {
    dim: usize,
    a: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, a: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.a[i * dim + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.dim + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.a
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &DenseMat, s: f64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.a.iter_mut().zip(other.a.iter()) {
            *a += s * b;
        }
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.dim;
        debug_assert_eq!(x.len(), dim);
        debug_assert_eq!(out.len(), dim);
        for i in 0..dim {
            out[i] = dot(&self.a[i * dim..(i + 1) * dim], x);
        }
    }

    pub fn matvec_transposed_into(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.dim;
        out.fill(0.0);
        for i in 0..dim {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &self.a[i * dim..(i + 1) * dim];
            for (o, r) in out.iter_mut().zip(row.iter()) {
                *o += xi * r;
            }
        }
    }
}

/// LU factors of a square matrix, `P A = L U` with LAPACK-style row swaps.
#[derive(Debug, Clone)]
pub struct LuFactors {
    dim: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl LuFactors {
    /// Factors in place, consuming the matrix.
    pub fn factor(m: DenseMat) -> Result<Self> {
        let dim = m.dim;
        let mut a = m.a;
        let mut piv = vec![0usize; dim];
        let scale: f64 = a.iter().fold(0.0f64, |acc, v| acc.max(math::abs(*v))).max(1.0);
        for k in 0..dim {
            let mut p = k;
            let mut pmax = math::abs(a[k * dim + k]);
            for i in (k + 1)..dim {
                let v = math::abs(a[i * dim + k]);
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax <= 1e-300 || pmax / scale < 1e-16 {
                return Err(Error::FactorizationFailure { detail: "pivot collapse in dense LU" });
            }
            piv[k] = p;
            if p != k {
                let (lo, hi) = a.split_at_mut(p * dim);
                lo[k * dim..k * dim + dim].swap_with_slice(&mut hi[..dim]);
            }
            let pivot = a[k * dim + k];
            let (head, tail) = a.split_at_mut((k + 1) * dim);
            let row_k = &head[k * dim..];
            for (ii, row_i) in tail.chunks_exact_mut(dim).enumerate() {
                let _ = ii;
                let l = row_i[k] / pivot;
                row_i[k] = l;
                if l != 0.0 {
                    for j in (k + 1)..dim {
                        row_i[j] -= l * row_k[j];
                    }
                }
            }
        }
        Ok(Self { dim, a, piv })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let dim = self.dim;
        debug_assert_eq!(b.len(), dim);
        for k in 0..dim {
            b.swap(k, self.piv[k]);
        }
        for i in 1..dim {
            b[i] -= dot(&self.a[i * dim..i * dim + i], &b[..i]);
        }
        for i in (0..dim).rev() {
            let s = dot(&self.a[i * dim + i + 1..(i + 1) * dim], &b[i + 1..]);
            b[i] = (b[i] - s) / self.a[i * dim + i];
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transposed_in_place(&self, b: &mut [f64]) {
        let dim = self.dim;
        debug_assert_eq!(b.len(), dim);
        // Uᵀ y = b (lower triangular with the U diagonal).
        for i in 0..dim {
            let mut s = b[i];
            for j in 0..i {
                s -= self.a[j * dim + i] * b[j];
            }
            b[i] = s / self.a[i * dim + i];
        }
        // Lᵀ z = y (upper triangular, unit diagonal).
        for i in (0..dim).rev() {
            let mut s = b[i];
            for j in (i + 1)..dim {
                s -= self.a[j * dim + i] * b[j];
            }
            b[i] = s;
        }
        for k in (0..dim).rev() {
            b.swap(k, self.piv[k]);
        }
    }
}

fn random_unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let n = norm2(&v);
        if n > 1e-8 {
            for x in v.iter_mut() {
                *x /= n;
            }
            return v;
        }
    }
}

/// Smallest singular value of the matrix behind `lu`, by inverse power
/// iteration on the normal operator; `matvec` must apply the *original*
/// matrix (used for the final residual-based estimate).
pub fn min_singular_value<R: Rng>(
    matvec: impl Fn(&[f64], &mut [f64]),
    lu: &LuFactors,
    rng: &mut R,
) -> f64 {
    let dim = lu.dim();
    let mut z = random_unit_vector(dim, rng);
    let mut sigma_prev = f64::INFINITY;
    for _ in 0..300 {
        let mut w = z.clone();
        lu.solve_transposed_in_place(&mut w);
        lu.solve_in_place(&mut w);
        let lambda = norm2(&w);
        if !lambda.is_finite() || lambda <= 1e-300 {
            break;
        }
        for (zi, wi) in z.iter_mut().zip(w.iter()) {
            *zi = wi / lambda;
        }
        let sigma = 1.0 / math::sqrt(lambda);
        if math::abs(sigma - sigma_prev) <= 1e-10 * sigma.max(1e-300) {
            break;
        }
        sigma_prev = sigma;
    }
    let mut az = vec![0.0; dim];
    matvec(&z, &mut az);
    norm2(&az)
}

/// Largest singular value by power iteration on the normal operator.
pub fn max_singular_value<R: Rng>(a: &DenseMat, rng: &mut R) -> f64 {
    let dim = a.dim();
    let mut z = random_unit_vector(dim, rng);
    let mut w = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    let mut sigma_prev = -1.0f64;
    for _ in 0..300 {
        a.matvec_into(&z, &mut w);
        a.matvec_transposed_into(&w, &mut y);
        let lambda = norm2(&y);
        if lambda <= 1e-300 {
            return 0.0;
        }
        for (zi, yi) in z.iter_mut().zip(y.iter()) {
            *zi = yi / lambda;
        }
        let sigma = math::sqrt(lambda);
        if math::abs(sigma - sigma_prev) <= 1e-10 * sigma.max(1e-300) {
            break;
        }
        sigma_prev = sigma;
    }
    a.matvec_into(&z, &mut w);
    norm2(&w)
}

/// Block-tridiagonal system with `n x n` blocks, solved by block Thomas
/// elimination. The Jacobians assembled by the Galerkin oracle are strongly
/// block diagonally dominant, so no inter-block pivoting is needed.
pub struct BlockTridiag {
    pub sub: Vec<SquareMat>,
    pub diag: Vec<SquareMat>,
    pub sup: Vec<SquareMat>,
}

impl BlockTridiag {
    /// Solves in place; `rhs` holds `m` stacked `n`-blocks.
    pub fn solve(mut self, rhs: &mut [f64]) -> Result<()> {
        let m = self.diag.len();
        if m == 0 {
            return Ok(());
        }
        let n = self.diag[0].dim();
        debug_assert_eq!(rhs.len(), m * n);
        debug_assert_eq!(self.sub.len(), m);
        debug_assert_eq!(self.sup.len(), m);
        let mut inv = Vec::with_capacity(m);
        inv.push(self.diag[0].inverse()?);
        let mut tmp = vec![0.0; n];
        for k in 1..m {
            let l = self.sub[k].mul_mat(&inv[k - 1]);
            let correction = l.mul_mat(&self.sup[k - 1]);
            self.diag[k].add_scaled(&correction, -1.0);
            let (lo, hi) = rhs.split_at_mut(k * n);
            l.mul_vec_into(&lo[(k - 1) * n..], &mut tmp);
            for (r, t) in hi[..n].iter_mut().zip(tmp.iter()) {
                *r -= t;
            }
            inv.push(self.diag[k].inverse()?);
        }
        let mut x_next = vec![0.0; n];
        inv[m - 1].mul_vec_into(&rhs[(m - 1) * n..], &mut tmp);
        rhs[(m - 1) * n..].copy_from_slice(&tmp);
        for k in (0..m - 1).rev() {
            x_next.copy_from_slice(&rhs[(k + 1) * n..(k + 2) * n]);
            self.sup[k].mul_vec_into(&x_next, &mut tmp);
            let rk = &mut rhs[k * n..(k + 1) * n];
            for (r, t) in rk.iter_mut().zip(tmp.iter()) {
                *r -= t;
            }
            let mut xk = vec![0.0; n];
            inv[k].mul_vec_into(rk, &mut xk);
            rk.copy_from_slice(&xk);
        }
        Ok(())
    }
}
