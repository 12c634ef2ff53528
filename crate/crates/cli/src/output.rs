use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskStatus {
    pub name: String,
    /// `ok`, `partial` or `failed`.
    pub status: &'static str,
    pub detail: String,
}

/// Record of one invocation, written next to its CSVs as `<command>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub parameters: serde_json::Value,
    pub config_sha256: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub tasks: Vec<TaskStatus>,
    pub outputs: Vec<OutputFile>,
}

/// Collects the files of one command and writes its manifest.
pub struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl Outputs {
    pub fn new(
        dir: &Path,
        command: &'static str,
        parameters: impl Serialize,
        config: &RunConfig,
        seeds: Vec<u64>,
    ) -> Result<Outputs, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                tool: "hetnet",
                version: env!("CARGO_PKG_VERSION"),
                command,
                parameters: serde_json::to_value(parameters).expect("parameters serialize"),
                config_sha256: config.hash(),
                config: config.clone(),
                seeds,
                tasks: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    /// Writes `rows` as an RFC-4180 CSV with a header taken from the row type.
    pub fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut n = 0;
        for r in rows {
            w.serialize(r).map_err(|e| io_err(&path, e))?;
            n += 1;
        }
        let bytes = w.into_inner().map_err(|e| io_err(&path, e))?;
        fs::write(&path, &bytes).map_err(|e| io_err(&path, e))?;
        self.manifest.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            rows: n,
        });
        Ok(())
    }

    pub fn task(&mut self, name: impl Into<String>, status: &'static str, detail: impl Into<String>) {
        self.manifest.tasks.push(TaskStatus {
            name: name.into(),
            status,
            detail: detail.into(),
        });
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("{}.manifest.json", self.manifest.command));
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}
