//! Library half of the command-line front end: config parsing, report
//! writers, and the command implementations. The binary in `main.rs` only
//! parses arguments and dispatches; keeping the rest here lets the test
//! suites drive the same code paths that the executable uses.

pub mod commands;
pub mod config;
pub mod report;

use defect_homog_core::Error;

/// One failure bucket per exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or invalid problem data; exit 2.
    Config(String),
    /// The computation itself failed; exit 3.
    Numerical(String),
    /// A mesh request exceeded the node cap; exit 4.
    Cap(String),
    /// Filesystem trouble; exit 1.
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Cap(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Cap(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::MeshTooFine { .. } => Failure::Cap(msg),
            Error::NoConvergence { .. }
            | Error::Eval { .. }
            | Error::FactorizationFailure { .. }
            | Error::SingularCell { .. } => Failure::Numerical(msg),
            Error::Parse { .. }
            | Error::Invalid { .. }
            | Error::NonElliptic { .. }
            | Error::MeshNotAligned { .. }
            | Error::NotLinear
            | Error::InsufficientPoints { .. }
            | Error::MembershipViolation { .. } => Failure::Config(msg),
        }
    }
}
