//! Input/output bookkeeping and the `run_manifest.json` written with every run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub bytes: usize,
    pub sha256: String,
}

impl FileRecord {
    fn new(path: &Path, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        Self {
            path: path.to_path_buf(),
            bytes: bytes.len(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    argv: &'a [String],
    config: &'a Value,
    jobs: usize,
    inputs: &'a [FileRecord],
    outputs: &'a [FileRecord],
    /// Wall-clock seconds per stage, in execution order.
    timings_s: &'a [(String, f64)],
}

/// Reads inputs and writes outputs while recording their digests and stage timings.
pub struct Run {
    out_dir: PathBuf,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    timings: Vec<(String, f64)>,
}

impl Run {
    /// Creates the output directory when missing.
    pub fn new(out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::config(format!("output directory {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        self.inputs.push(FileRecord::new(path, &bytes));
        Ok(bytes)
    }

    /// Writes `name` under the output directory.
    pub fn write(&mut self, name: impl AsRef<Path>, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::config(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        self.outputs.push(FileRecord::new(&path, bytes));
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// Runs `f` and records its duration under `stage`.
    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        log::info!("{stage}: {secs:.3} s");
        self.timings.push((stage.to_string(), secs));
        out
    }

    pub fn finish(mut self, subcommand: &str, argv: &[String], config: &Value, jobs: usize) -> CliResult<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            argv,
            config,
            jobs,
            inputs: &self.inputs,
            outputs: &self.outputs,
            timings_s: &self.timings,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let path = self.out_dir.join(MANIFEST_NAME);
        fs::write(&path, json).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        self.outputs.clear();
        Ok(())
    }
}
