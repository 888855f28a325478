use std::path::{Path, PathBuf};
use std::time::Instant;

use koopid_core::io::{write_atomic, write_json};
use koopid_core::Result;
use serde::Serialize;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    /// Paths relative to the output directory, including the manifest itself.
    pub outputs: Vec<PathBuf>,
    pub duration_seconds: f64,
}

/// Tracks what a command writes into its output directory.
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
    started: Instant,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&mut self, name: &str) {
        self.written.push(PathBuf::from(name));
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)?;
        self.record(name);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.path(name), value)?;
        self.record(name);
        Ok(())
    }

    pub fn finish(mut self, command: &str, argv: &[String], seed: Option<u64>, config: serde_json::Value, inputs: Vec<PathBuf>) -> Result<()> {
        self.record(MANIFEST_NAME);
        let manifest = RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
            outputs: self.written.clone(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.path(MANIFEST_NAME), &manifest)
    }
}
