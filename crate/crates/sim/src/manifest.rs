//! Run manifests: what produced a set of output files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::scenario::System;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical config, output directory excluded.
    pub config_hash: String,
    pub seed: u64,
    pub system: System,
    /// SHA-256 of the event log in its CSV form.
    pub dataset_fingerprint: String,
    /// Output kind to file name, relative to the output directory.
    pub outputs: BTreeMap<String, String>,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(config: &FileConfig) -> String {
    let mut c = config.clone();
    c.output.dir = None;
    sha256_hex(c.canonical_json().as_bytes())
}

impl RunManifest {
    pub fn new(command: &str, config: &FileConfig, dataset_csv: &[u8], outputs: &[(&str, &str)]) -> Self {
        RunManifest {
            command: command.into(),
            config_hash: config_hash(config),
            seed: config.scenario.seed,
            system: config.scenario.system,
            dataset_fingerprint: sha256_hex(dataset_csv),
            outputs: outputs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}
