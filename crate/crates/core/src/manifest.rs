//! Sidecar manifests written next to every pipeline artifact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Split,
    Normalize,
    TrainDiscriminator,
    Filter,
    TrainTokenizer,
    Encode,
    Mask,
    Tokstats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: PathBuf,
    pub sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub stage: Stage,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    /// Full effective configuration of the stage.
    pub config: Value,
    pub outputs: Vec<OutputDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Stage-specific fields, written at the top level.
    #[serde(flatten)]
    pub details: BTreeMap<String, Value>,
}

impl PipelineManifest {
    pub fn new(stage: Stage, config: Value) -> Self {
        Self {
            stage,
            tool_version: TOOL_VERSION.to_string(),
            inputs: Vec::new(),
            config,
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
            details: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> io::Result<()> {
        let path = path.as_ref();
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>, records: Option<u64>) -> io::Result<()> {
        let path = path.as_ref();
        self.outputs.push(OutputDigest {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
            records,
        });
        Ok(())
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).expect("detail serializes"));
    }

    /// Digest of everything that determines the artifact: stage, version,
    /// input and output contents, config and details. Paths and timestamps
    /// are left out so two runs in different directories compare equal.
    pub fn content_digest(&self) -> String {
        let key = serde_json::json!({
            "stage": self.stage,
            "tool_version": self.tool_version,
            "inputs": self.inputs.iter().map(|i| &i.sha256).collect::<Vec<_>>(),
            "outputs": self.outputs.iter().map(|o| (&o.sha256, o.records)).collect::<Vec<_>>(),
            "config": self.config,
            "details": self.details,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// `out.jsonl` -> `out.jsonl.manifest.json`
pub fn manifest_path(artifact: impl AsRef<Path>) -> PathBuf {
    let mut s = artifact.as_ref().as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn file_sha256(path: impl AsRef<Path>) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_name() {
        assert_eq!(manifest_path("a/b.jsonl"), PathBuf::from("a/b.jsonl.manifest.json"));
    }

    #[test]
    fn digest_ignores_paths_and_time() {
        let mut a = PipelineManifest::new(Stage::Mask, serde_json::json!({"rate": 0.15}));
        a.detail("epoch_index", 1);
        a.outputs.push(OutputDigest {
            path: "x/out.jsonl".into(),
            sha256: "ab".into(),
            records: Some(3),
        });
        let mut b = a.clone();
        b.outputs[0].path = "y/out.jsonl".into();
        b.started_unix += 100;
        assert_eq!(a.content_digest(), b.content_digest());
        b.detail("epoch_index", 2);
        assert_ne!(a.content_digest(), b.content_digest());
    }

    #[test]
    fn details_are_flattened() {
        let mut m = PipelineManifest::new(Stage::TrainTokenizer, Value::Null);
        m.detail("vocab_hash", "00ff");
        let v: Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["vocab_hash"], "00ff");
        assert_eq!(v["stage"], "train-tokenizer");
        let back: PipelineManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
