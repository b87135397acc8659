//! Run manifests and metric reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tgsl_core::training::{EpochRecord, EvalMetrics};

use crate::error::{CliError, Result};

/// Per-epoch training curve entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_task_ori: f64,
    pub loss_task_aug: Option<f64>,
    pub loss_cl: Option<f64>,
    pub added_edges: f64,
    pub val_ap: f64,
}

impl From<&EpochRecord> for EpochRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            loss_total: r.losses.total,
            loss_task_ori: r.losses.task_ori,
            loss_task_aug: r.losses.task_aug,
            loss_cl: r.losses.cl,
            added_edges: r.losses.added_edges,
            val_ap: r.val_ap,
        }
    }
}

/// Everything a run measured. Contains no wall-clock values, so identical
/// runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub seed: u64,
    pub dataset: String,
    pub model: String,
    pub strategy: Option<String>,
    pub k: Option<usize>,
    pub alpha: f64,
    pub best_epoch: usize,
    pub best_val_ap: f64,
    pub epochs: Vec<EpochRow>,
    /// Transductive first, inductive when the setting has events.
    pub test: Vec<EvalMetrics>,
    /// Same parameters scored on the unaugmented graph; empty for the
    /// encoder alone.
    pub test_original_graph: Vec<EvalMetrics>,
}

impl MetricsReport {
    pub fn test_metrics(&self, setting: tgsl_core::tgraph::Setting, original_graph: bool) -> Option<&EvalMetrics> {
        let list = if original_graph { &self.test_original_graph } else { &self.test };
        list.iter().find(|m| m.setting == setting)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub manifest: PathBuf,
    pub metrics_json: PathBuf,
    pub metrics_csv: PathBuf,
    pub snapshot: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            manifest: dir.join("manifest.json"),
            metrics_json: dir.join("metrics.json"),
            metrics_csv: dir.join("metrics.csv"),
            snapshot: dir.join("snapshot.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    /// sha256 over the version and the resolved configuration.
    pub fingerprint: String,
    pub seed: u64,
    /// Every configuration key with its resolved value; `seeds` holds only
    /// this run's seed.
    pub config: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Usable training events before and after sparsification.
    pub train_events_before_sparsify: usize,
    pub train_events: usize,
    pub paths: RunPaths,
    pub report: MetricsReport,
}

pub fn fingerprint(config: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    for (k, v) in config {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update(*b"\n");
    }
    hex::encode(h.finalize())
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(tgsl_core::Error::Parse {
        row: e.line(),
        msg: format!("{}: {e}", path.display()),
    }))
}

/// Metrics as CSV: one row per epoch (setting `val`, empty test columns),
/// then one row per test evaluation carrying the best epoch's losses.
/// `epoch_seconds` holds the cumulative wall time at the end of each epoch.
pub fn metrics_csv(report: &MetricsReport, epoch_seconds: &[f64], total_seconds: f64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(format!("writing metrics csv: {e}"));
    w.write_record([
        "run_id",
        "seed",
        "dataset",
        "strategy",
        "K",
        "alpha",
        "setting",
        "epoch",
        "loss_task_ori",
        "loss_task_aug",
        "loss_cl",
        "val_ap",
        "test_acc",
        "test_ap",
        "wall_seconds",
    ])
    .map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let strategy = report.strategy.clone().unwrap_or_default();
    let k = report.k.map(|k| k.to_string()).unwrap_or_default();
    let row = |setting: String, e: &EpochRow, test: Option<&EvalMetrics>, secs: f64| {
        vec![
            report.run_id.clone(),
            report.seed.to_string(),
            report.dataset.clone(),
            strategy.clone(),
            k.clone(),
            report.alpha.to_string(),
            setting,
            e.epoch.to_string(),
            e.loss_task_ori.to_string(),
            opt(e.loss_task_aug),
            opt(e.loss_cl),
            e.val_ap.to_string(),
            test.map(|m| m.acc.to_string()).unwrap_or_default(),
            test.map(|m| m.ap.to_string()).unwrap_or_default(),
            format!("{secs:.3}"),
        ]
    };
    for (i, e) in report.epochs.iter().enumerate() {
        w.write_record(row("val".into(), e, None, epoch_seconds.get(i).copied().unwrap_or(0.0))).map_err(err)?;
    }
    if let Some(best) = report.epochs.iter().find(|e| e.epoch == report.best_epoch) {
        for m in &report.test {
            w.write_record(row(m.setting.to_string(), best, Some(m), total_seconds)).map_err(err)?;
        }
        for m in &report.test_original_graph {
            w.write_record(row(format!("{}-original-graph", m.setting), best, Some(m), total_seconds)).map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Config(format!("writing metrics csv: {e}")))
}
