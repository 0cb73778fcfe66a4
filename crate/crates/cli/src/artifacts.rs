//! Provenance records and the SHA-256 hash chain between stages.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const REDUCED: &str = "reduced.json";
pub const CERTIFICATE: &str = "certificate.json";
pub const KERNEL_BIN: &str = "kernel.bin";
pub const KERNEL_JSON: &str = "kernel.json";
pub const POLICY_BIN: &str = "policy.bin";
pub const POLICY_JSON: &str = "policy.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub tool: String,
    /// `file:*` source files, `block:*` config blocks, `artifact:*` upstream outputs.
    pub inputs: BTreeMap<String, String>,
    /// Hashes of binary outputs written next to this record.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            tool: format!("gamesynth {}", env!("CARGO_PKG_VERSION")),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn file(&mut self, name: &str, path: &Path) -> CliResult<()> {
        self.inputs.insert(format!("file:{name}"), sha256_file(path)?);
        Ok(())
    }

    pub fn block<T: Serialize>(&mut self, name: &str, value: &T) {
        self.inputs.insert(format!("block:{name}"), sha256_json(value));
    }

    pub fn artifact(&mut self, out: &Path, name: &str) -> CliResult<()> {
        let path = out.join(name);
        if !path.is_file() {
            return Err(CliError::Mismatch(format!(
                "{name} is missing in {}; run the {} stage first",
                out.display(),
                producer(name)
            )));
        }
        self.inputs.insert(format!("artifact:{name}"), sha256_file(&path)?);
        Ok(())
    }
}

fn producer(name: &str) -> &'static str {
    match name {
        REDUCED => "reduce",
        CERTIFICATE => "relate",
        KERNEL_BIN | KERNEL_JSON => "abstract",
        POLICY_BIN | POLICY_JSON => "synthesize",
        REPORT => "simulate",
        _ => "producing",
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_json<T: Serialize>(value: &T) -> String {
    sha256_bytes(&serde_json::to_vec(value).expect("config blocks serialize"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(gamesynth::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

#[derive(Deserialize)]
struct WithProvenance {
    provenance: Provenance,
}

pub fn read_provenance(path: &Path) -> CliResult<Provenance> {
    Ok(read_json::<WithProvenance>(path)?.provenance)
}

/// True when `record` exists with the same inputs and its binary outputs are intact.
pub fn up_to_date(out: &Path, record: &str, expected: &Provenance) -> bool {
    let Ok(prev) = read_provenance(&out.join(record)) else {
        return false;
    };
    prev.stage == expected.stage
        && prev.inputs == expected.inputs
        && prev.outputs.iter().all(|(name, hash)| {
            sha256_file(&out.join(name)).map(|h| &h == hash).unwrap_or(false)
        })
}

/// Re-hashes every artifact an upstream record depends on.
pub fn check_chain(out: &Path, records: &[&str]) -> CliResult<()> {
    for rec in records {
        let path = out.join(rec);
        if !path.is_file() {
            return Err(CliError::Mismatch(format!(
                "{rec} is missing; run the {} stage first",
                producer(rec)
            )));
        }
        let prov = read_provenance(&path)?;
        let deps = prov
            .inputs
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("artifact:").map(|n| (n, v)))
            .chain(prov.outputs.iter().map(|(k, v)| (k.as_str(), v)));
        for (name, hash) in deps {
            let current = sha256_file(&out.join(name)).ok();
            if current.as_ref() != Some(hash) {
                return Err(CliError::Mismatch(format!(
                    "{rec} was built from a different {name}; rerun the {} stage",
                    producer(rec)
                )));
            }
        }
    }
    Ok(())
}
