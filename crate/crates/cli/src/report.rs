//! Artifact writing and the per-directory run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use grnn_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Records what a command read, so the output directory describes itself.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// sha256 of the exact bytes read, by path as given.
    pub inputs: BTreeMap<String, String>,
    pub wall_time_ms: u128,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            wall_time_ms: 0,
            started: Some(Instant::now()),
        }
    }

    /// Reads a file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, Error> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(bytes)
    }

    pub fn finish(mut self, out: &OutDir) -> Result<(), Error> {
        self.wall_time_ms = self.started.take().map(|s| s.elapsed().as_millis()).unwrap_or(0);
        out.json(RUN_MANIFEST, &self)
    }
}

/// Output directory for one command's artifacts.
pub struct OutDir {
    pub path: PathBuf,
}

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, Error> {
        fs::create_dir_all(path).map_err(|e| io_err(path, e))?;
        Ok(OutDir { path: path.to_path_buf() })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Error> {
        let p = self.path.join(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }

    /// Pretty JSON with struct field order; floats use the shortest
    /// representation that parses back to the same value.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Error> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn raw(&self, name: &str, bytes: &[u8]) -> Result<(), Error> {
        self.write(name, bytes)
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
