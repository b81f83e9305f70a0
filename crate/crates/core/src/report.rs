//! Deterministic experiment reports: one JSON summary per run plus CSV
//! sidecars carrying every numeric at full precision.
//!
//! Reports are pure functions of (config, seed, version): metrics are kept
//! in sorted maps, floats print in shortest round-trip form, and no
//! wall-clock data enters the files, so identical runs produce identical
//! bytes no matter how many threads computed them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::DomainKind;
use crate::problems::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One named check: its verdict plus the numbers backing it.
#[derive(Debug, Clone, Serialize)]
pub struct ResultEntry {
    pub name: String,
    pub verdict: Verdict,
    /// Flat evidence map; sorted keys keep serialization deterministic.
    pub metrics: BTreeMap<String, Value>,
}

impl ResultEntry {
    pub fn new(name: impl Into<String>, pass: bool) -> Self {
        ResultEntry {
            name: name.into(),
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            metrics: BTreeMap::new(),
        }
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.into(), json_f64(value));
        self
    }

    pub fn int(&mut self, key: &str, value: usize) -> &mut Self {
        self.metrics.insert(key.into(), Value::from(value as u64));
        self
    }

    pub fn text(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.metrics.insert(key.into(), Value::String(value.into()));
        self
    }

    pub fn flag(&mut self, key: &str, value: bool) -> &mut Self {
        self.metrics.insert(key.into(), Value::Bool(value));
        self
    }
}

/// Top-level report.json shape. `failed` appears only when the run aborted;
/// the results then cover whatever finished before the error.
#[derive(Debug, Serialize)]
pub struct ReportFile {
    pub config_echo: Value,
    pub results: Vec<ResultEntry>,
    /// Number of results whose verdict is fail.
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

impl ReportFile {
    pub fn new(config_echo: Value, results: Vec<ResultEntry>, failed: Option<String>) -> Self {
        let failures = results.iter().filter(|r| r.verdict == Verdict::Fail).count();
        ReportFile { config_echo, results, failures, failed }
    }

    pub fn all_pass(&self) -> bool {
        self.failures == 0 && self.failed.is_none()
    }
}

/// JSON value for an f64; non-finite values are stored as strings because
/// JSON has no literal for them and silently mapping to null would hide them.
pub fn json_f64(x: f64) -> Value {
    match serde_json::Number::from_f64(x) {
        Some(n) => Value::Number(n),
        None => Value::String(format!("{x}")),
    }
}

/// Write a file atomically: the bytes land in a same-directory temporary
/// which is renamed over the target, so readers never observe a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(".").to_path_buf());
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// report.json bytes: pretty-printed (diffable) with a trailing newline.
pub fn report_bytes(report: &ReportFile) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Every numeric in the report, one CSV row per number, addressed by its
/// JSON path. Floats print in the shortest form that round-trips exactly,
/// so the CSV carries full precision.
pub fn metrics_csv(report: &ReportFile) -> Result<String> {
    let tree = serde_json::to_value(report)?;
    let mut out = String::from("path,value\n");
    let mut rows = Vec::new();
    collect_numbers("", &tree, &mut rows);
    for (path, value) in rows {
        out.push_str(&format!("{path},{value}\n"));
    }
    Ok(out)
}

fn collect_numbers(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Number(n) => rows.push((prefix.to_string(), n.to_string())),
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                collect_numbers(&format!("{prefix}[{i}]"), item, rows);
            }
        }
        Value::Object(map) => {
            for (k, item) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_numbers(&p, item, rows);
            }
        }
        _ => {}
    }
}

/// Nodal values as CSV: coordinate columns, then one column per component.
pub fn state_csv(state: &State) -> String {
    let grid = state.grid();
    let two_d = matches!(grid.domain.kind, DomainKind::Rectangle { .. });
    let mut out = String::from(if two_d { "x,y" } else { "x" });
    for c in 0..state.components.len() {
        out.push_str(&format!(",u{c}"));
    }
    out.push('\n');
    for i in 0..grid.node_count() {
        let (x, y) = grid.node_coord(i);
        if two_d {
            out.push_str(&format!("{x},{y}"));
        } else {
            out.push_str(&format!("{x}"));
        }
        for c in &state.components {
            out.push_str(&format!(",{}", c.values[i]));
        }
        out.push('\n');
    }
    out
}
