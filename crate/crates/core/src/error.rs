use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors reported by the solver library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A coefficient field violates uniform ellipticity; carries the offending
    /// smallest symmetric-part eigenvalue.
    NonElliptic { m: f64 },
    /// A coefficient cell (or an assembled system) could not be inverted.
    SingularCell { detail: &'static str },
    /// A mesh or partition would exceed the configured node cap.
    MeshTooFine { nodes: usize, cap: usize },
    /// Mesh nodes do not contain every coefficient breakpoint.
    MeshNotAligned { breakpoint: f64 },
    /// Expression parse failure at a byte offset, with the token set that
    /// would have been accepted there.
    Parse { offset: usize, expected: String },
    /// Expression evaluation produced a non-finite value.
    Eval { x: f64, u: Vec<f64>, component: usize },
    /// LU or block factorization broke down.
    FactorizationFailure { detail: &'static str },
    /// An iteration failed to converge; carries the contraction-factor trace.
    NoConvergence {
        iterations: usize,
        residual: f64,
        q_trace: Box<Vec<f64>>,
    },
    /// A closed-form path was asked for a model that depends on `u`.
    NotLinear,
    /// A rate study needs at least four epsilon values.
    InsufficientPoints { got: usize, need: usize },
    /// A defect fails the admissibility class; names the offender.
    MembershipViolation { defect: String, clause: &'static str },
    /// Invalid user input (dimensions, breakpoints, supports, parameters).
    Invalid { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonElliptic { m } => {
                write!(f, "coefficient is not uniformly elliptic (min symmetric eigenvalue {m:e})")
            }
            Error::SingularCell { detail } => write!(f, "singular matrix: {detail}"),
            Error::MeshTooFine { nodes, cap } => {
                write!(f, "mesh would need {nodes} nodes, cap is {cap}")
            }
            Error::MeshNotAligned { breakpoint } => {
                write!(f, "mesh misses coefficient breakpoint {breakpoint}")
            }
            Error::Parse { offset, expected } => {
                write!(f, "parse error at byte {offset}: expected {expected}")
            }
            Error::Eval { x, component, .. } => {
                write!(f, "expression component {component} non-finite at x = {x}")
            }
            Error::FactorizationFailure { detail } => {
                write!(f, "factorization failed: {detail}")
            }
            Error::NoConvergence { iterations, residual, .. } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:e})")
            }
            Error::NotLinear => write!(f, "model depends on u; closed form applies to linear data only"),
            Error::InsufficientPoints { got, need } => {
                write!(f, "need at least {need} epsilon values, got {got}")
            }
            Error::MembershipViolation { defect, clause } => {
                write!(f, "defect {defect} violates admissibility clause: {clause}")
            }
            Error::Invalid { detail } => write!(f, "invalid input: {detail}"),
        }
    }
}

impl core::error::Error for Error {}
