//! Run manifests and dataset files stamped with the manifest hash.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::ExperimentError;

/// Inputs of a run. Holds no timestamps or host data, so equal inputs give an
/// equal hash.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Resolved configuration (config file with flag overrides applied).
    pub inputs: serde_json::Value,
    /// Flags given on the command line, by name.
    pub overrides: serde_json::Value,
    pub seeds: Vec<u64>,
    pub calib_fingerprint: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, inputs: serde_json::Value) -> Self {
        Self {
            tool: "wva".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            inputs,
            overrides: serde_json::Value::Object(Default::default()),
            seeds: Vec::new(),
            calib_fingerprint: None,
        }
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Pretty JSON with the hash added as `manifest_hash`.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v["manifest_hash"] = serde_json::Value::String(self.hash());
        let mut s = serde_json::to_string_pretty(&v).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        fs::write(path, self.to_json()).map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })
    }
}

/// Writes a dataset whose first line is `# manifest <hash>`.
pub fn write_dataset(
    path: &Path,
    manifest_hash: &str,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), ExperimentError> {
    let io_err = |source| ExperimentError::Io { path: path.display().to_string(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# manifest {manifest_hash}").map_err(io_err)?;
    body(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}
