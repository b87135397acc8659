//! The train, eval, synth and sweep commands.

use std::path::Path;
use std::time::Instant;

use tgsl_core::tgraph::{chronological_split, load_events, save_events, sparsify, synth_generate, EventStore, LoadOptions, Setting, SplitSpec};
use tgsl_core::tgsl::Strategy;
use tgsl_core::training::{Dataset, EpochRecord, EvalMetrics, Inference, Snapshot, Trainer};

use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{fingerprint, metrics_csv, read_json, unix_now, write_atomic, write_json, EpochRow, MetricsReport, RunManifest, RunPaths};

/// K values of the sensitivity sweep.
pub const SWEEP_K: [usize; 5] = [2, 4, 8, 16, 32];

pub struct Prepared {
    pub store: EventStore,
    pub split: SplitSpec,
    /// Length of the training range before and after sparsification.
    pub train_events_before_sparsify: usize,
    pub train_events: usize,
}

pub fn load_store(cfg: &RunConfig) -> Result<EventStore> {
    Ok(match &cfg.dataset {
        Some(path) => load_events(path, LoadOptions::default())?,
        None => synth_generate(&cfg.synth)?,
    })
}

/// Load, split with the run seed's inductive mask, then sparsify.
pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    let store = load_store(cfg)?;
    let split = chronological_split(&store, cfg.split, cfg.mask_frac, seed)?;
    let before = split.train.len();
    let (store, split) = sparsify(&store, &split, cfg.sparsify)?;
    Ok(Prepared {
        train_events: split.train.len(),
        store,
        split,
        train_events_before_sparsify: before,
    })
}

pub struct RunOutcome {
    pub report: MetricsReport,
    pub snapshot: Snapshot,
    /// Cumulative wall time at the end of each epoch.
    pub epoch_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub train_events_before_sparsify: usize,
    pub train_events: usize,
}

fn test_settings(data: &Dataset<'_>) -> Vec<Setting> {
    let mut settings = vec![Setting::Transductive];
    if !data.split.eval_ids(data.store, data.split.test.clone(), Setting::Inductive).is_empty() {
        settings.push(Setting::Inductive);
    }
    settings
}

/// Trains one seed and evaluates the kept parameters on the test range.
pub fn execute(cfg: &RunConfig, seed: u64, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let prep = prepare(cfg, seed)?;
    let data = Dataset::new(&prep.store, &prep.split)?;
    let spec = cfg.model_spec(prep.store.node_dim(), prep.store.edge_dim());
    let mut trainer = Trainer::new(spec, cfg.train_config(seed)).map_err(CliError::from)?;
    let mut epoch_seconds = Vec::new();
    let fit = trainer
        .fit(&data, |r| {
            epoch_seconds.push(start.elapsed().as_secs_f64());
            on_epoch(r);
        })
        .map_err(CliError::Run)?;
    let test_range = prep.split.test.clone();
    let eval = |inference| -> Result<Vec<EvalMetrics>> {
        test_settings(&data)
            .into_iter()
            .map(|s| trainer.evaluate(&data, test_range.clone(), s, inference).map_err(CliError::from))
            .collect()
    };
    let test = eval(Inference::Augmented)?;
    let test_original_graph = if trainer.tgsl.is_some() { eval(Inference::Original)? } else { Vec::new() };
    let tgsl = cfg.model == ModelKind::Tgsl;
    let report = MetricsReport {
        run_id: cfg.run_id(seed),
        seed,
        dataset: cfg.dataset_name(),
        model: cfg.model.to_string(),
        strategy: tgsl.then(|| cfg.strategy.to_string()),
        k: tgsl.then_some(cfg.k),
        alpha: cfg.train.alpha,
        best_epoch: fit.best_epoch,
        best_val_ap: fit.best_val_ap,
        epochs: fit.epochs.iter().map(EpochRow::from).collect(),
        test,
        test_original_graph,
    };
    Ok(RunOutcome {
        report,
        snapshot: trainer.snapshot(),
        epoch_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        train_events_before_sparsify: prep.train_events_before_sparsify,
        train_events: prep.train_events,
    })
}

/// Re-scores the test range with stored parameters in noise-free mode.
pub fn evaluate_snapshot(cfg: &RunConfig, seed: u64, snapshot: &Snapshot, setting: Setting, original_graph: bool) -> Result<EvalMetrics> {
    let prep = prepare(cfg, seed)?;
    let data = Dataset::new(&prep.store, &prep.split)?;
    let spec = cfg.model_spec(prep.store.node_dim(), prep.store.edge_dim());
    let trainer = Trainer::from_snapshot(spec, cfg.train_config(seed), snapshot)?;
    let inference = if original_graph { Inference::Original } else { Inference::Augmented };
    Ok(trainer.evaluate(&data, prep.split.test.clone(), setting, inference)?)
}

/// One run per configured seed, each written to `out/<run id>/`.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<RunManifest>> {
    cfg.validate()?;
    let mut manifests = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let started_unix = unix_now();
        let mut run_cfg = cfg.clone();
        run_cfg.seeds = vec![seed];
        let run_id = run_cfg.run_id(seed);
        let dir = cfg.out.join(&run_id);
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        log(&format!("{run_id}: training"));
        let outcome = execute(&run_cfg, seed, |r| {
            log(&format!(
                "{run_id}: epoch {} loss {:.4} task {:.4} val_ap {:.4}",
                r.epoch, r.losses.total, r.losses.task_ori, r.val_ap
            ))
        })?;
        let paths = RunPaths::in_dir(&dir);
        write_json(&paths.snapshot, &outcome.snapshot)?;
        write_json(&paths.metrics_json, &outcome.report)?;
        write_atomic(&paths.metrics_csv, &metrics_csv(&outcome.report, &outcome.epoch_seconds, outcome.total_seconds)?)?;
        let config = run_cfg.resolved();
        let manifest = RunManifest {
            run_id: run_id.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            fingerprint: fingerprint(&config),
            seed,
            config,
            started_unix,
            finished_unix: unix_now(),
            train_events_before_sparsify: outcome.train_events_before_sparsify,
            train_events: outcome.train_events,
            paths,
            report: outcome.report,
        };
        write_json(&manifest.paths.manifest, &manifest)?;
        for m in &manifest.report.test {
            log(&format!("{run_id}: test {} acc {:.4} ap {:.4}", m.setting, m.acc, m.ap));
        }
        manifests.push(manifest);
    }
    Ok(manifests)
}

pub fn config_from_manifest(manifest: &RunManifest) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (k, v) in &manifest.config {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Evaluates a finished run from its manifest. The snapshot is looked up
/// next to the manifest, so run directories can be moved.
pub fn cmd_eval(manifest_path: &Path, setting: &str, original_graph: bool) -> Result<EvalMetrics> {
    let setting: Setting = setting.parse()?;
    let manifest: RunManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let snap_name = manifest
        .paths
        .snapshot
        .file_name()
        .ok_or_else(|| CliError::Config("manifest has no snapshot path".into()))?;
    let snap_path = dir.join(snap_name);
    if !snap_path.is_file() {
        return Err(CliError::Data(tgsl_core::Error::InvalidStore(format!("parameter snapshot {} is missing", snap_path.display()))));
    }
    let snapshot: Snapshot = read_json(&snap_path)?;
    let cfg = config_from_manifest(&manifest)?;
    evaluate_snapshot(&cfg, manifest.seed, &snapshot, setting, original_graph)
}

pub fn cmd_synth(cfg: &RunConfig, path: &Path) -> Result<usize> {
    let store = synth_generate(&cfg.synth)?;
    save_events(&store, path)?;
    Ok(store.len())
}

/// Every strategy crossed with [`SWEEP_K`], each under `out/<strategy>-k<K>/`,
/// plus `out/sweep.csv` summarising the test AP of every run.
pub fn cmd_sweep(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<RunManifest>> {
    let mut all = Vec::new();
    for strategy in [Strategy::OneHop, Strategy::ThirdHop, Strategy::Random] {
        for k in SWEEP_K {
            let mut c = cfg.clone();
            c.model = ModelKind::Tgsl;
            c.strategy = strategy;
            c.k = k;
            c.out = cfg.out.join(format!("{strategy}-k{k}"));
            all.extend(cmd_train(&c, log)?);
        }
    }
    std::fs::create_dir_all(&cfg.out).map_err(CliError::io(&cfg.out))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(format!("writing sweep csv: {e}"));
    w.write_record(["run_id", "seed", "strategy", "K", "setting", "test_acc", "test_ap"]).map_err(err)?;
    for m in &all {
        for t in &m.report.test {
            w.write_record([
                m.run_id.clone(),
                m.seed.to_string(),
                m.report.strategy.clone().unwrap_or_default(),
                m.report.k.map(|k| k.to_string()).unwrap_or_default(),
                t.setting.to_string(),
                t.acc.to_string(),
                t.ap.to_string(),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("writing sweep csv: {e}")))?;
    write_atomic(&cfg.out.join("sweep.csv"), &bytes)?;
    Ok(all)
}
