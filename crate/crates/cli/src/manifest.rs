//! Run manifests. The hash covers everything that determines a command's
//! outputs and nothing else: timestamps and artifact paths are recorded but
//! left out, so two runs with equal inputs and seed share a hash wherever
//! they write.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fewshot_core::sha256_hex;
use serde::Serialize;

use crate::error::{write_bytes, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Other flags that shape the output.
    pub parameters: BTreeMap<String, String>,
    /// Content hashes of input files, by role.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

#[derive(Serialize)]
struct Identity<'a> {
    tool_version: &'a str,
    command: &'a str,
    config_hash: &'a Option<String>,
    catalog_hash: &'a Option<String>,
    seed: Option<u64>,
    parameters: &'a BTreeMap<String, String>,
    inputs: &'a BTreeMap<String, String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_hash: None,
            catalog_hash: None,
            seed: None,
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, role: &str, content: &[u8]) -> &mut Self {
        self.inputs.insert(role.to_string(), sha256_hex(content));
        self
    }

    pub fn hash(&self) -> String {
        let id = Identity {
            tool_version: TOOL_VERSION,
            command: &self.command,
            config_hash: &self.config_hash,
            catalog_hash: &self.catalog_hash,
            seed: self.seed,
            parameters: &self.parameters,
            inputs: &self.inputs,
        };
        sha256_hex(serde_json::to_string(&id).expect("manifest serializes").as_bytes())
    }

    /// First line of every text output.
    pub fn header_line(&self) -> String {
        format!("# fewshot {TOOL_VERSION} manifest={}\n", self.hash())
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = Some(now());
        let mut value = serde_json::to_value(&*self).expect("manifest serializes");
        value["hash"] = self.hash().into();
        value["tool_version"] = TOOL_VERSION.into();
        let mut text = serde_json::to_string_pretty(&value).expect("manifest serializes");
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_timestamps_and_artifacts() {
        let mut a = RunManifest::new("sample");
        a.seed = Some(3);
        a.param("episodes", 10);
        let mut b = a.clone();
        b.started_unix += 100;
        b.finished_unix = Some(7);
        b.artifacts.push("elsewhere/out.jsonl".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = Some(4);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn header_names_tool_and_hash() {
        let m = RunManifest::new("report");
        let h = m.header_line();
        assert!(h.starts_with(&format!("# fewshot {TOOL_VERSION} manifest=")));
        assert_eq!(h.trim_end().len(), format!("# fewshot {TOOL_VERSION} manifest=").len() + 64);
    }
}
