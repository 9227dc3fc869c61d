//! Artifact writer: JSON records with a provenance header, CSV tables,
//! field snapshots, SVG and Markdown files in one output directory.

use std::fs;
use std::path::{Path, PathBuf};

use caslab::ComplexField;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// SHA-256 of the resolved config in its JSON form.
pub fn config_hash(config: &Config) -> String {
    let text = serde_json::to_string(config).expect("configs serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Outputs {
    pub dir: PathBuf,
    pub format: Format,
    pub command: String,
    pub hash: String,
    pub seed: u64,
    artifacts: Vec<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl Outputs {
    pub fn new(dir: PathBuf, format: Format, command: &str, config: &Config) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Outputs {
            dir,
            format,
            command: command.to_string(),
            hash: config_hash(config),
            seed: config.seed,
            artifacts: Vec::new(),
        })
    }

    fn header(&self) -> Value {
        json!({
            "version": VERSION,
            "config_hash": self.hash,
            "command": self.command,
            "seed": self.seed,
        })
    }

    /// Wraps `body` under `result` next to the provenance header.
    pub fn envelope<T: Serialize>(&self, body: &T) -> Value {
        let mut v = self.header();
        v["result"] = serde_json::to_value(body).expect("records serialize");
        v
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&self.envelope(body)).expect("records serialize");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| io_err(&path, e);
        w.write_record(header).map_err(fail)?;
        for r in rows {
            w.write_record(r).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| io_err(&path, e))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_snapshot(&mut self, name: &str, field: &ComplexField) -> Result<(), CliError> {
        let mut buf = Vec::new();
        field.write_snapshot(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    /// Writes `summary.json`, or `summary.csv` as flattened key/value rows,
    /// listing every artifact written before it.
    pub fn finish<T: Serialize>(mut self, body: &T) -> Result<Vec<String>, CliError> {
        let mut v = self.envelope(body);
        v["artifacts"] = json!(self.artifacts);
        match self.format {
            Format::Json => {
                let mut text = serde_json::to_string_pretty(&v).expect("records serialize");
                text.push('\n');
                self.write_bytes("summary.json", text.as_bytes())?;
            }
            Format::Csv => {
                let mut rows = Vec::new();
                flatten("", &v, &mut rows);
                let rows: Vec<Vec<String>> = rows.into_iter().map(|(k, v)| vec![k, v]).collect();
                self.write_csv("summary.csv", &["key", "value"], &rows)?;
            }
        }
        Ok(self.artifacts)
    }
}

/// `a.b.0` style keys for every scalar leaf.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, x)| flatten(&key(k), x, out)),
        Value::Array(items) => items.iter().enumerate().for_each(|(i, x)| flatten(&key(&i.to_string()), x, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Shortest round-trip text of a float, as used in CSV cells.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_nested_values() {
        let mut rows = Vec::new();
        flatten("", &json!({"a": {"b": [1, 2.5]}, "c": "x", "d": null}), &mut rows);
        assert_eq!(
            rows,
            vec![
                ("a.b.0".to_string(), "1".to_string()),
                ("a.b.1".to_string(), "2.5".to_string()),
                ("c".to_string(), "x".to_string()),
                ("d".to_string(), String::new()),
            ]
        );
    }

    #[test]
    fn hash_ignores_the_output_directory() {
        let mut a = Config::default();
        let b = a.clone();
        a.out = Some("elsewhere".into());
        assert_eq!(config_hash(&a), config_hash(&b));
        a.seed = 3;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&b).len(), 64);
    }
}
