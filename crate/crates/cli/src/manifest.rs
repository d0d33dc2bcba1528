//! Run manifests and content hashes of input files.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// SHA-256 of `blob <len>\0<bytes>`, the object hash git would use with
/// SHA-256 object names.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hash over `(relative path, blob hash)` of every file, in the given order.
pub fn tree_hash(root: &Path, files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(CliError::io(f))?;
        let rel = f.strip_prefix(root).unwrap_or(f);
        h.update(format!("{}\0{}\n", rel.display(), blob_hash(&bytes)).as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub inputs_sha256: String,
}

impl RunManifest {
    /// `key=value` text that doubles as a config file for the same run.
    pub fn to_text(&self) -> String {
        format!(
            "command={}\ndata={}\ncheckpoint={}\ninputs_sha256={}\n{}",
            self.command,
            self.data.display(),
            self.checkpoint.display(),
            self.inputs_sha256,
            self.config.to_text()
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        config.apply_text(text)?;
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| CliError::Data(format!("manifest lacks {key}")))
        };
        Ok(Self {
            command: field("command")?,
            data: field("data")?.into(),
            checkpoint: field("checkpoint")?.into(),
            inputs_sha256: field("inputs_sha256")?,
            config,
        })
    }
}
