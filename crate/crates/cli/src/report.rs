use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tvo_core::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub struct Report<'a> {
    pub command: &'a str,
    pub config: Value,
    pub seed: Option<u64>,
    pub market_digest: Option<String>,
    pub result: Value,
    pub elapsed_seconds: f64,
}

impl Report<'_> {
    /// Writes `<command>.json` into `dir` and returns its path.
    pub fn write(self, dir: &Path) -> Result<PathBuf> {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "market_digest": self.market_digest,
            "result": self.result,
            "timing": { "elapsed_seconds": self.elapsed_seconds },
        });
        let path = dir.join(format!("{}.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(path)
    }
}

pub fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<String> {
    fs::write(dir.join(name), contents)?;
    Ok(name.to_string())
}
