//! Report persistence. Every artifact embeds the config hash and seed, and
//! numbers are printed at full precision so reruns with identical inputs
//! are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use defect_homog_core::gridfn::GridFunction;
use defect_homog_core::linalg::DenseMat;

use crate::Failure;

/// Full-precision scientific form used for every CSV number.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Scale tag used in file names, e.g. `2.5e-2`.
pub fn eps_tag(eps: f64) -> String {
    format!("{eps:e}")
}

pub struct RunContext {
    pub out_dir: PathBuf,
    pub instance: String,
    pub config_sha256: String,
    pub seed: u64,
    pub tol: f64,
    pub max_iterations: usize,
}

impl RunContext {
    fn preamble(&self) -> String {
        format!(
            "# instance: {}\n# config_sha256: {}\n# seed: {}\n# tol: {}\n# max_iterations: {}\n",
            self.instance,
            self.config_sha256,
            self.seed,
            fmt(self.tol),
            self.max_iterations,
        )
    }

    fn write_raw(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| Failure::Io(format!("cannot create {}: {e}", self.out_dir.display())))?;
        let path = self.out_dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Writes `body` (header line plus data rows) under the standard
    /// comment preamble.
    pub fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        self.write_raw(name, format!("{}{}", self.preamble(), body).as_bytes())
    }

    /// Wraps `payload` in an envelope carrying the hash, seed, and
    /// tolerances, and writes it pretty-printed.
    pub fn write_json(
        &self,
        name: &str,
        command: &str,
        payload: serde_json::Value,
    ) -> Result<PathBuf, Failure> {
        let doc = serde_json::json!({
            "command": command,
            "instance": self.instance,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "tol": self.tol,
            "max_iterations": self.max_iterations,
            "payload": payload,
        });
        let mut text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Failure::Io(format!("serialize {name}: {e}")))?;
        text.push('\n');
        self.write_raw(name, text.as_bytes())
    }
}

/// CSV body of a grid function: columns x, u1..un.
pub fn grid_csv_body(u: &GridFunction) -> String {
    let n = u.dim();
    let mut s = String::from("x");
    for k in 1..=n {
        s.push_str(&format!(",u{k}"));
    }
    s.push('\n');
    for (i, &x) in u.mesh().nodes().iter().enumerate() {
        s.push_str(&fmt(x));
        for &v in u.node(i) {
            s.push(',');
            s.push_str(&fmt(v));
        }
        s.push('\n');
    }
    s
}

/// Binary matrix dump: `n` (block size) and `N` (matrix dimension) as
/// little-endian u64, then the row-major entries as little-endian f64.
pub fn write_matrix_dump(path: &Path, n: usize, m: &DenseMat) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::Io(format!("cannot create {}: {e}", parent.display())))?;
    }
    let dim = m.dim();
    let mut bytes = Vec::with_capacity(16 + dim * dim * 8);
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    bytes.extend_from_slice(&(dim as u64).to_le_bytes());
    for &v in m.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &bytes).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}
