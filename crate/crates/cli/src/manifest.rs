//! `manifest.json`: what was run, with which seeds, and a content hash for
//! every file the pipeline wrote.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use teleop_core::transport::TransportKind;

use crate::spec::ExperimentSpec;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub condition: String,
    pub transport: TransportKind,
    pub expert: u32,
    pub repetition: u32,
    pub block: u32,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packets: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub master_seed: u64,
    /// The spec as parsed, without its output path.
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    /// Relative path (with `/` separators) to hex SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl Manifest {
    pub fn new(spec: &ExperimentSpec, master_seed: u64) -> Self {
        let mut spec = spec.clone();
        spec.experiment.output = None;
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            spec,
            runs: Vec::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn load(out: &Path) -> Result<Self, CliError> {
        let path = out.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read {} (run the `run` stage first): {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Analysis(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Analysis(e.to_string()))?;
        text.push('\n');
        let path = out.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Hash `rel` under `out` and record it.
    pub fn register(&mut self, out: &Path, rel: &str) -> Result<(), CliError> {
        let path = out.join(rel);
        let hash = sha256_file(&path).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(rel.to_string(), hash);
        Ok(())
    }

    /// Check that `rel` exists and still has its recorded hash.
    pub fn verify(&self, out: &Path, rel: &str) -> Result<(), CliError> {
        let expected = self
            .files
            .get(rel)
            .ok_or_else(|| CliError::Analysis(format!("{rel} is not listed in the manifest")))?;
        let path = out.join(rel);
        let actual = sha256_file(&path).map_err(|e| CliError::io(&path, e))?;
        if &actual != expected {
            return Err(CliError::Analysis(format!("{rel}: content hash mismatch (file changed since it was written)")));
        }
        Ok(())
    }

    /// Forget every file under `dir/`.
    pub fn drop_dir(&mut self, dir: &str) {
        let prefix = format!("{dir}/");
        self.files.retain(|k, _| !k.starts_with(&prefix));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
