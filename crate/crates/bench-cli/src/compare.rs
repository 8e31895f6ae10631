use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::runner::{RunResult, Status};
use crate::UsageError;

/// A finished run read back from disk.
pub struct Bundle {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub result: RunResult,
    /// Closed-loop states, absent when the run produced no trajectory.
    pub states: Option<Vec<Vec<f64>>>,
}

fn read_states(path: &Path, n: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < n + 1 {
            bail!("{}:{}: expected at least {} columns", path.display(), i + 1, n + 1);
        }
        let x = fields[1..=n]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        rows.push(x);
    }
    Ok(rows)
}

pub fn load_bundle(dir: &Path) -> anyhow::Result<Bundle> {
    let config = ExperimentConfig::load(&dir.join("config.toml"))?;
    let result_path = dir.join("result.json");
    let text = fs::read_to_string(&result_path).with_context(|| format!("reading {}", result_path.display()))?;
    let result: RunResult =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", result_path.display()))?;
    let traj = dir.join("trajectory.csv");
    let states = if traj.exists() {
        Some(read_states(&traj, config.plant.n())?)
    } else {
        None
    };
    Ok(Bundle {
        dir: dir.to_path_buf(),
        config,
        result,
        states,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub bundle: String,
    pub name: String,
    pub mode: String,
    pub order: usize,
    pub status: Status,
    pub j: Option<f64>,
    /// `(J − J_ref) / J_ref` against the first bundle.
    pub gap: Option<f64>,
    /// RMS state difference to the first bundle, relative to its RMS state.
    pub rms_gap: Option<f64>,
    pub iterations: Option<usize>,
    pub timesteps: Option<usize>,
}

fn rms_gap(x: &[Vec<f64>], reference: &[Vec<f64>]) -> Option<f64> {
    if x.len() != reference.len() || reference.is_empty() {
        return None;
    }
    let mut diff = 0.0;
    let mut scale = 0.0;
    for (a, b) in x.iter().zip(reference) {
        diff += a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        scale += b.iter().map(|q| q * q).sum::<f64>();
    }
    Some((diff / scale.max(f64::MIN_POSITIVE)).sqrt())
}

/// Align bundles against the first one. All bundles must share the plant
/// and the evaluation horizon.
pub fn compare(bundles: &[Bundle]) -> anyhow::Result<Vec<ComparisonRow>> {
    let Some(first) = bundles.first() else {
        return Err(UsageError("compare needs at least one bundle".into()).into());
    };
    for b in &bundles[1..] {
        if b.config.plant != first.config.plant {
            return Err(UsageError(format!(
                "{} and {} use different plants",
                first.dir.display(),
                b.dir.display()
            ))
            .into());
        }
        if b.config.simulation.horizon != first.config.simulation.horizon {
            return Err(UsageError(format!(
                "{} and {} use different horizons",
                first.dir.display(),
                b.dir.display()
            ))
            .into());
        }
    }
    let j_ref = first.result.j;
    Ok(bundles
        .iter()
        .map(|b| ComparisonRow {
            bundle: b.dir.display().to_string(),
            name: b.result.name.clone(),
            mode: b.result.mode.as_str().to_string(),
            order: b.result.order,
            status: b.result.status,
            j: b.result.j,
            gap: match (b.result.j, j_ref) {
                (Some(j), Some(r)) if r != 0.0 => Some((j - r) / r),
                _ => None,
            },
            rms_gap: match (&b.states, &first.states) {
                (Some(x), Some(r)) => rms_gap(x, r),
                _ => None,
            },
            iterations: b.result.iterations,
            timesteps: b.result.timesteps,
        })
        .collect())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn sci(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.11e}")).unwrap_or_default()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("bundle,name,mode,order,status,j,gap,rms_gap,iterations,timesteps\n");
    for r in rows {
        let status = serde_json::to_value(r.status).expect("status serializes");
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.bundle,
            r.name,
            r.mode,
            r.order,
            status.as_str().unwrap_or_default(),
            sci(r.j),
            sci(r.gap),
            sci(r.rms_gap),
            opt(r.iterations),
            opt(r.timesteps)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_gap_is_relative() {
        let r = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(rms_gap(&r, &r), Some(0.0));
        let x = vec![vec![1.1, 0.0], vec![0.0, 1.1]];
        assert!((rms_gap(&x, &r).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(rms_gap(&x[..1], &r), None);
    }
}
