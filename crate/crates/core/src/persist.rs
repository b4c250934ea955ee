//! Durable artifacts: library JSON, digests and run manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::library::{Library, LIBRARY_FORMAT_VERSION};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn library_to_json(lib: &Library) -> Result<String> {
    let mut s = serde_json::to_string_pretty(lib)?;
    s.push('\n');
    Ok(s)
}

pub fn library_from_json(text: &str) -> Result<Library> {
    let lib: Library = serde_json::from_str(text)?;
    if lib.format_version != LIBRARY_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: lib.format_version,
            expected: LIBRARY_FORMAT_VERSION,
        });
    }
    Ok(lib)
}

pub fn save_library(lib: &Library, path: &Path) -> Result<()> {
    write_atomic(path, library_to_json(lib)?.as_bytes())
}

pub fn load_library(path: &Path) -> Result<Library> {
    library_from_json(&std::fs::read_to_string(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub millis: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub artifact_version: String,
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Empty unless timings were requested; wall-clock values are not reproducible.
    pub timings: Vec<Timing>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            command: command.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn digest(path: &Path) -> Result<FileDigest> {
        Ok(FileDigest {
            path: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: file_digest(path)?,
        })
    }
}

pub const COMPARE_CSV_HEADER: [&str; 6] = [
    "policy",
    "mu_oracle",
    "mu_hat",
    "sigma_sq_oracle",
    "required_n",
    "ratio",
];

/// One policy in the estimator comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: String,
    pub mu_oracle: f64,
    pub mu_hat: f64,
    pub sigma_sq_oracle: f64,
    /// Oracle test count; absent when `μ = 0`.
    pub required_n: Option<u64>,
    /// Crude required count over this policy's.
    pub ratio: Option<f64>,
}

pub fn write_compare_csv<W: std::io::Write>(writer: W, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(COMPARE_CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_csv_layout() {
        let rows = vec![CompareRow {
            policy: "crude".into(),
            mu_oracle: 0.5,
            mu_hat: 0.25,
            sigma_sq_oracle: 0.25,
            required_n: Some(97),
            ratio: None,
        }];
        let mut buf = Vec::new();
        write_compare_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "policy,mu_oracle,mu_hat,sigma_sq_oracle,required_n,ratio\ncrude,0.5,0.25,0.25,97,\n"
        );
    }

    #[test]
    fn digest_of_known_bytes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
