use std::collections::BTreeMap;
use std::path::Path;

use dynassign::backtest::RESULT_SCHEMA;
use dynassign::predictor::ENSEMBLE_VERSION;
use dynassign::session::SESSION_SCHEMA;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Resolved flags, seeds and digests for one invocation. Contains no clock
/// readings, so identical runs produce identical manifests apart from paths.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub flags: Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub artifact_versions: BTreeMap<&'static str, String>,
}

impl RunManifest {
    pub fn new(command: &str, flags: Value, seed: u64) -> Self {
        let artifact_versions = BTreeMap::from([
            ("backtest_result", RESULT_SCHEMA.to_string()),
            ("ensemble", ENSEMBLE_VERSION.to_string()),
            ("session", SESSION_SCHEMA.to_string()),
        ]);
        Self {
            schema: "v1",
            tool: "dynassign",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().skip(1).collect(),
            flags,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            artifact_versions,
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), digest(bytes));
    }

    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), digest(bytes));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
