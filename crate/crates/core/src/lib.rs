//! Solver library for two-point Dirichlet problems of the form
//!
//! ```text
//!     ((A(x/eps) + B(x/eps)) u'(x) + c(x, u(x)))' = d(x, u(x)),   x in (0,1),
//!     u(0) = u(1) = 0,
//! ```
//!
//! where `A` is a 1-periodic, uniformly elliptic matrix field, `B` is a
//! localized (integrable) defect, and `c`, `d` are C¹ nonlinearities given as
//! symbolic expressions. The crate provides
//!
//! * exact piecewise-constant coefficient handling ([`coeff`]): harmonic-mean
//!   homogenized matrix, effective matrix of the perturbed coefficient, and
//!   ellipticity / defect-class diagnostics,
//! * piecewise-linear grid functions with exact trapezoid calculus ([`gridfn`]),
//! * a small expression language with symbolic Jacobians ([`model`]),
//! * the integral fixed-point operator of the problem, its Frechet derivative,
//!   and dense assembly with singular-value diagnostics ([`operator`]),
//! * Newton and frozen-Jacobian solvers with contraction and error reports
//!   ([`solver`]),
//! * an independent P1 Galerkin oracle and closed-form linear solutions
//!   ([`oracle`]),
//! * convergence-rate, defect-sweep, and averaging studies ([`harness`]).
//!
//! The crate is `no_std`-compatible: disable default features and enable
//! `libm` to build without the standard library (allocation is required).

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("defect-homog-core needs either the `std` or the `libm` feature");

pub mod coeff;
mod error;
pub mod gridfn;
pub mod harness;
pub mod linalg;
pub(crate) mod math;
pub mod matrix;
pub mod model;
pub mod operator;
pub mod oracle;
pub mod solver;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Points closer than this are merged when meshes and partitions are built.
pub const MERGE_TOL: f64 = 1e-14;
