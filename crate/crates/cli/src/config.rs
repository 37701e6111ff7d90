//! JSON problem descriptions. The schema is strict: unknown keys are
//! rejected so that typos surface as config errors instead of silently
//! falling back to defaults.

use std::fs;
use std::path::Path;

use defect_homog_core::coeff::PiecewiseMatrixField;
use defect_homog_core::matrix::SquareMat;
use defect_homog_core::model::NonlinearModel;
use defect_homog_core::operator::ProblemInstance;
use defect_homog_core::solver::SolverOptions;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    /// System dimension.
    pub n: usize,
    /// Periodic background coefficient.
    pub a: PeriodicSpec,
    /// Localized defect; omit for the defect-free problem.
    #[serde(default)]
    pub b: Option<LocalizedSpec>,
    /// Labeled defects for `sweep-defects`.
    #[serde(default)]
    pub defects: Vec<DefectSpec>,
    /// Flux reaction expressions, one per component, in x and u1..un.
    pub c: Vec<String>,
    /// Load expressions, one per component.
    pub d: Vec<String>,
    /// Declared kinks of c and d inside (0,1).
    #[serde(default)]
    pub x_breakpoints: Vec<f64>,
    /// Defect class radius.
    pub r: f64,
    /// Scales, largest first.
    pub epsilons: Vec<f64>,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub seed: u64,
    pub out_dir: String,
}

/// Piecewise-constant 1-periodic matrix: `breakpoints[k]` is the left edge
/// of `cells[k]` inside [0,1), starting at 0; each cell is row-major n*n.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicSpec {
    pub breakpoints: Vec<f64>,
    pub cells: Vec<Vec<f64>>,
}

/// Piecewise-constant matrix supported on `support`, zero elsewhere;
/// `breakpoints` are the interior cell edges.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizedSpec {
    pub support: [f64; 2],
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    pub cells: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    pub label: String,
    /// Omit for the zero defect.
    #[serde(default)]
    pub b: Option<LocalizedSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    /// Uniform interval count the coefficient breakpoints are merged into.
    pub n_target: usize,
    /// Node cap; exceeded requests fail instead of thrashing.
    #[serde(default = "default_cap")]
    pub cap: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol")]
    pub solve: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { solve: default_tol(), max_iterations: default_max_iterations() }
    }
}

fn default_cap() -> usize {
    defect_homog_core::gridfn::DEFAULT_NODE_CAP
}

fn default_tol() -> f64 {
    1e-11
}

fn default_max_iterations() -> usize {
    60
}

pub struct LoadedConfig {
    pub doc: ConfigDocument,
    /// Hex SHA-256 of the raw config bytes, embedded in every report.
    pub sha256: String,
    /// Config file stem, used to label report headers.
    pub label: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let doc: ConfigDocument = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut sha256 = String::with_capacity(64);
    for byte in Sha256::digest(&bytes) {
        use std::fmt::Write;
        let _ = write!(sha256, "{byte:02x}");
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "config".into());
    Ok(LoadedConfig { doc, sha256, label })
}

impl ConfigDocument {
    fn matrices(&self, cells: &[Vec<f64>]) -> Result<Vec<SquareMat>, Failure> {
        cells
            .iter()
            .map(|flat| SquareMat::from_row_major(self.n, flat).map_err(Failure::from))
            .collect()
    }

    pub fn field_a(&self) -> Result<PiecewiseMatrixField, Failure> {
        let cells = self.matrices(&self.a.cells)?;
        PiecewiseMatrixField::periodic(self.a.breakpoints.clone(), cells).map_err(Failure::from)
    }

    fn localized(&self, spec: &LocalizedSpec) -> Result<PiecewiseMatrixField, Failure> {
        let mut edges = Vec::with_capacity(spec.breakpoints.len() + 2);
        edges.push(spec.support[0]);
        edges.extend_from_slice(&spec.breakpoints);
        edges.push(spec.support[1]);
        let cells = self.matrices(&spec.cells)?;
        PiecewiseMatrixField::localized(edges, cells).map_err(Failure::from)
    }

    pub fn field_b(&self) -> Result<Option<PiecewiseMatrixField>, Failure> {
        self.b.as_ref().map(|spec| self.localized(spec)).transpose()
    }

    /// The labeled defect list for sweeps; an omitted matrix means the
    /// zero defect.
    pub fn defect_fields(&self) -> Result<Vec<(String, PiecewiseMatrixField)>, Failure> {
        if self.defects.is_empty() {
            return Err(Failure::Config(
                "sweep-defects needs a non-empty `defects` list in the config".into(),
            ));
        }
        self.defects
            .iter()
            .map(|spec| {
                let field = match &spec.b {
                    Some(b) => self.localized(b)?,
                    None => PiecewiseMatrixField::localized(
                        vec![0.0, 1.0],
                        vec![SquareMat::zeros(self.n)],
                    )
                    .map_err(Failure::from)?,
                };
                Ok((spec.label.clone(), field))
            })
            .collect()
    }

    pub fn model(&self) -> Result<NonlinearModel, Failure> {
        NonlinearModel::new(self.n, &self.c, &self.d, self.x_breakpoints.clone())
            .map_err(Failure::from)
    }

    /// A validated instance at the given scale (`None` for the homogenized
    /// problem).
    pub fn instance(&self, epsilon: Option<f64>) -> Result<ProblemInstance, Failure> {
        ProblemInstance::new(self.field_a()?, self.field_b()?, self.model()?, epsilon, self.r)
            .map_err(Failure::from)
    }

    pub fn solver_options(&self, seed: u64) -> SolverOptions {
        SolverOptions {
            tol: self.tolerances.solve,
            max_iter: self.tolerances.max_iterations,
            seed,
        }
    }
}
