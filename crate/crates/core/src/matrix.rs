//! Small dense square matrices (coefficient cells, Jacobian blocks).
//!
//! Sizes here are the system dimension `n` (a handful of rows), so plain
//! row-major storage with textbook algorithms is the right tool: Gauss-Jordan
//! inversion with partial pivoting and cyclic Jacobi sweeps for symmetric
//! eigenvalues.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Row-major `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    n: usize,
    a: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from a row-major slice of length `n * n`.
    pub fn from_row_major(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n || n == 0 {
            return Err(Error::Invalid {
                detail: alloc::format!("matrix data length {} for dimension {n}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid { detail: "non-finite matrix entry".into() });
        }
        Ok(Self { n, a: data.to_vec() })
    }

    /// 1x1 convenience constructor.
    pub fn scalar(v: f64) -> Self {
        Self { n: 1, a: vec![v] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.a
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &SquareMat, s: f64) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.a.iter_mut().zip(other.a.iter()) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.a.iter_mut() {
            *a *= s;
        }
    }

    /// `out = self * x` for an `n`-vector `x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (r, xv) in row.iter().zip(x.iter()) {
                acc += r * xv;
            }
            out[i] = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_mat(&self, other: &SquareMat) -> SquareMat {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * other.a[k * n + j];
                }
            }
        }
        out
    }

    pub fn sym_part(&self) -> SquareMat {
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.a[i * n + j] = 0.5 * (self.a[i * n + j] + self.a[j * n + i]);
            }
        }
        out
    }

    pub fn transpose(&self) -> SquareMat {
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.a[j * n + i] = self.a[i * n + j];
            }
        }
        out
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<SquareMat> {
        let n = self.n;
        let mut work = self.a.clone();
        let mut inv = SquareMat::identity(n);
        let scale: f64 = work.iter().fold(0.0f64, |m, v| m.max(math::abs(*v))).max(1.0);
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = math::abs(work[col * n + col]);
            for r in (col + 1)..n {
                let v = math::abs(work[r * n + col]);
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = r;
                }
            }
            if pivot_val <= 1e-300 || pivot_val / scale < 1e-14 {
                return Err(Error::SingularCell { detail: "pivot collapse in small inverse" });
            }
            if pivot_row != col {
                for j in 0..n {
                    work.swap(col * n + j, pivot_row * n + j);
                    inv.a.swap(col * n + j, pivot_row * n + j);
                }
            }
            let p = work[col * n + col];
            for j in 0..n {
                work[col * n + j] /= p;
                inv.a[col * n + j] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = work[r * n + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    work[r * n + j] -= f * work[col * n + j];
                    inv.a[r * n + j] -= f * inv.a[col * n + j];
                }
            }
        }
        Ok(inv)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending.
    ///
    /// The caller is responsible for symmetry (use [`SquareMat::sym_part`]).
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        if n == 1 {
            return vec![self.a[0]];
        }
        let mut m = self.a.clone();
        let idx = |i: usize, j: usize| i * n + j;
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[idx(i, j)] * m[idx(i, j)];
                }
            }
            let scale: f64 = (0..n).map(|i| math::abs(m[idx(i, i)])).fold(1e-300, f64::max);
            if math::sqrt(off) <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[idx(p, q)];
                    if math::abs(apq) <= 1e-300 {
                        continue;
                    }
                    let app = m[idx(p, p)];
                    let aqq = m[idx(q, q)];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + math::sqrt(1.0 + theta * theta))
                    } else {
                        -1.0 / (-theta + math::sqrt(1.0 + theta * theta))
                    };
                    let c = 1.0 / math::sqrt(1.0 + t * t);
                    let s = t * c;
                    for k in 0..n {
                        let akp = m[idx(k, p)];
                        let akq = m[idx(k, q)];
                        m[idx(k, p)] = c * akp - s * akq;
                        m[idx(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = m[idx(p, k)];
                        let aqk = m[idx(q, k)];
                        m[idx(p, k)] = c * apk - s * aqk;
                        m[idx(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| m[idx(i, i)]).collect();
        eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        eig
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_sym_eigenvalue(&self) -> f64 {
        self.sym_part().sym_eigenvalues()[0]
    }

    /// Spectral norm (largest singular value) via the symmetric eigenproblem
    /// of `AᵀA`.
    pub fn spectral_norm(&self) -> f64 {
        let ata = self.transpose().mul_mat(self);
        let eig = ata.sym_eigenvalues();
        math::sqrt(eig[eig.len() - 1].max(0.0))
    }
}
