use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::{Error, Result};

/// Hex SHA-256 of the canonical TOML form of `cfg`.
pub fn config_digest(cfg: &PipelineConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml_string().as_bytes()))
}

/// `uniloc <version>+cfg.<first 12 hex digits of the config digest>`.
pub fn provenance(digest: &str) -> String {
    format!("uniloc {}+cfg.{}", env!("CARGO_PKG_VERSION"), &digest[..12.min(digest.len())])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Ok(FileDigest { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

/// What a CLI stage read and wrote, with the full configuration that
/// produced it. Contains no timestamps, so identical runs give identical
/// manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub provenance: String,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: PipelineConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &PipelineConfig, inputs: &[&Path], outputs: &[&Path]) -> Result<Self> {
        let digest = config_digest(cfg);
        Ok(Manifest {
            command: command.to_string(),
            provenance: provenance(&digest),
            config_sha256: digest,
            inputs: inputs.iter().map(FileDigest::of).collect::<Result<_>>()?,
            outputs: outputs.iter().map(FileDigest::of).collect::<Result<_>>()?,
            config: cfg.clone(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}
