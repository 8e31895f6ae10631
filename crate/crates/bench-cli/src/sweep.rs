use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::runner::{run_experiment, RunResult, Status};
use crate::UsageError;

/// Parse a command-line value as a TOML value; bare words become strings.
pub fn parse_value(s: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {s}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(s.to_string()))
}

/// Set the value at a dotted path, creating missing tables. Misspelled keys
/// are caught when the edited document is validated against the schema.
pub fn set_path(root: &mut toml::Value, path: &str, new: toml::Value) -> Result<(), UsageError> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| UsageError("--param: empty path".into()))?;
    let mut node = root;
    for k in keys {
        let table = node
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("--param {path}: `{k}` is not inside a table")))?;
        node = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| UsageError(format!("--param {path}: parent is not a table")))?;
    // Integers given for float fields stay floats.
    let new = match (table.get(last), new) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(last.to_string(), new);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub bundle: PathBuf,
    pub result: RunResult,
}

fn label(i: usize, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{i:02}_{clean}")
}

/// Run `base` once per value of `param`, each into its own subdirectory of
/// `out`, and write `sweep.csv` there. Independent points run concurrently
/// with the `parallel` feature.
pub fn sweep(base: &Path, param: &str, values: &[String], out: &Path) -> anyhow::Result<Vec<SweepRow>> {
    let text = fs::read_to_string(base).with_context(|| format!("reading {}", base.display()))?;
    let root: toml::Value = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", base.display())))?;
    let mut configs = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let mut doc = root.clone();
        set_path(&mut doc, param, parse_value(v))?;
        let mut cfg = ExperimentConfig::from_value(doc).map_err(|e| UsageError(format!("{param} = {v}: {}", e.0)))?;
        cfg.name = format!("{}_{}", cfg.name, label(i, v));
        configs.push((v.clone(), out.join(label(i, v)), cfg));
    }
    let run = |(v, dir, cfg): &(String, PathBuf, ExperimentConfig)| -> anyhow::Result<SweepRow> {
        Ok(SweepRow {
            value: v.clone(),
            bundle: dir.clone(),
            result: run_experiment(cfg, dir)?,
        })
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<SweepRow> = {
        use rayon::prelude::*;
        configs.par_iter().map(run).collect::<anyhow::Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<SweepRow> = configs.iter().map(run).collect::<anyhow::Result<_>>()?;
    fs::write(out.join("sweep.csv"), sweep_csv(param, &rows)).context("writing sweep.csv")?;
    Ok(rows)
}

pub fn sweep_csv(param: &str, rows: &[SweepRow]) -> String {
    let sci = |v: Option<f64>| v.map(|v| format!("{v:.11e}")).unwrap_or_default();
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = format!("{param},status,exit_code,j,bandwidth,cardinality,iterations,timesteps\n");
    for r in rows {
        let status = serde_json::to_value(r.result.status).expect("status serializes");
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.value,
            status.as_str().unwrap_or_default(),
            r.result.exit_code,
            sci(r.result.j),
            opt(r.result.bandwidth),
            opt(r.result.cardinality),
            opt(r.result.iterations),
            opt(r.result.timesteps)
        ));
    }
    s
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.result.status == Status::Ok
    }
}
