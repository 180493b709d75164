//! Run manifests: what was run, with which settings, and what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use itercomp_core::model::{CompositionSpec, QuadratureConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Version of every JSON document this tool writes.
pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// Fully resolved arguments; rerunning with them reproduces every output.
    pub invocation: serde_json::Value,
    pub spec: Option<CompositionSpec>,
    pub config: QuadratureConfig,
    /// SHA-256 of the canonical JSON of `(invocation, spec, config)`.
    pub config_digest: String,
    pub tool_version: String,
    pub workers: usize,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputRecord>,
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects output files in one directory and writes the manifest last.
pub struct Outputs {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl Outputs {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.records.push(OutputRecord {
            path: name.to_string(),
            sha256: hex_sha256(contents),
        });
        Ok(path)
    }

    /// JSON document wrapped with the schema version and a pointer to the manifest.
    pub fn write_json<T: Serialize>(&mut self, name: &str, body: &T) -> std::io::Result<PathBuf> {
        let doc = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "manifest": MANIFEST_FILE,
            "body": body,
        });
        let text = serde_json::to_string_pretty(&doc).expect("serializable output");
        self.write(name, text.as_bytes())
    }

    pub fn finish(
        self,
        command: &str,
        invocation: serde_json::Value,
        spec: Option<CompositionSpec>,
        config: QuadratureConfig,
        wall_time_s: f64,
    ) -> std::io::Result<RunManifest> {
        let canonical =
            serde_json::to_vec(&(&invocation, &spec, &config)).expect("serializable settings");
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            invocation,
            spec,
            config,
            config_digest: hex_sha256(&canonical),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            workers: rayon::current_num_threads(),
            wall_time_s,
            outputs: self.records,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}
