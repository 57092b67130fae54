//! Run records: the JSON artifact summarizing one scenario execution.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

/// Summary of one scenario run. Serialized keys are sorted (BTreeMap), so
/// two runs of the same config and seed produce byte-identical JSON apart
/// from the two timestamp fields.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub verdicts: BTreeMap<String, bool>,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn new(scenario: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            scenario: scenario.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            started_at_unix: unix_now(),
            finished_at_unix: 0,
            metrics: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_at_unix = unix_now();
    }

    /// Records a float metric; non-finite values become JSON null.
    pub fn metric(&mut self, key: &str, value: f64) {
        let v = serde_json::Number::from_f64(value)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null);
        self.metrics.insert(key.to_string(), v);
    }

    pub fn metric_str(&mut self, key: &str, value: &str) {
        self.metrics
            .insert(key.to_string(), serde_json::Value::String(value.to_string()));
    }

    pub fn metric_int(&mut self, key: &str, value: u64) {
        self.metrics
            .insert(key.to_string(), serde_json::Value::Number(value.into()));
    }

    pub fn verdict(&mut self, key: &str, pass: bool) {
        self.verdicts.insert(key.to_string(), pass);
    }

    pub fn all_verdicts_pass(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serialization")
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
