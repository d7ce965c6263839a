use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RESULTS_HEADER: [&str; 7] = ["run_id", "command", "config_hash", "metric", "value", "seed", "timestamp"];

/// One metric of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub timestamp: String,
}

fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            Value::Object(keys.into_iter().map(|k| (k.clone(), canonical(&m[k]))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

/// SHA-256 of the key-sorted JSON form, hex encoded.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let v = canonical(&serde_json::to_value(config)?);
    let digest = Sha256::digest(serde_json::to_vec(&v)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Appends `records`, writing the header only into a new or empty file.
pub fn write_results(records: &[ResultRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(RESULTS_HEADER)?;
    }
    for r in records {
        w.write_record([
            r.run_id.as_str(),
            r.command.as_str(),
            r.config_hash.as_str(),
            r.metric.as_str(),
            &format!("{:.16e}", r.value),
            &r.seed.to_string(),
            r.timestamp.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
