use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use tgsl_cli::manifest::{read_json, RunManifest};
use tgsl_cli::run::{cmd_eval, cmd_synth, cmd_train};
use tgsl_cli::RunConfig;
use tgsl_core::tgraph::{cross_community_fraction, load_events, LoadOptions};

const SMALL: &str = "
# small synthetic run
synth.users = 40
synth.items = 40
synth.events = 1500
synth.jitter = 1.0
k = 4
encoder.hidden = 8
encoder.layers = 1
encoder.n_nb = 5
encoder.time_dim = 8
tgsl.layers = 1
tgsl.hidden = 8
n_can = 5
n_rnn = 5
lr = 0.01
max_epochs = 2
batch_size = 100
";

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text(SMALL).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn quiet() -> impl FnMut(&str) {
    |_: &str| {}
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tgsl"))
}

#[test]
fn override_is_recorded_and_sparsify_halves_training_events() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.apply_overrides(&["k=8", "sparsify=2"]).unwrap();
    let m = cmd_train(&cfg, &mut quiet()).unwrap().remove(0);
    assert_eq!(m.config["k"], "8");
    assert_eq!(m.report.k, Some(8));
    assert_eq!(m.train_events, m.train_events_before_sparsify.div_ceil(2));
    let on_disk: RunManifest = read_json(&m.paths.manifest).unwrap();
    assert_eq!(on_disk, m);
}

#[test]
fn one_run_per_seed_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.set("seeds", "0,1,2").unwrap();
    cfg.set("max_epochs", "1").unwrap();
    let ms = cmd_train(&cfg, &mut quiet()).unwrap();
    assert_eq!(ms.len(), 3);
    let ids: std::collections::BTreeSet<_> = ms.iter().map(|m| m.run_id.clone()).collect();
    assert_eq!(ids.len(), 3);
    for m in &ms {
        assert!(m.paths.metrics_json.is_file() && m.paths.metrics_csv.is_file() && m.paths.snapshot.is_file());
    }

    let again = tempfile::tempdir().unwrap();
    let mut cfg2 = small(again.path());
    cfg2.set("max_epochs", "1").unwrap();
    cfg2.seeds = vec![1];
    let m2 = cmd_train(&cfg2, &mut quiet()).unwrap().remove(0);
    let a = std::fs::read(&ms[1].paths.metrics_json).unwrap();
    let b = std::fs::read(&m2.paths.metrics_json).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_reproduces_the_recorded_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_train(&small(dir.path()), &mut quiet()).unwrap().remove(0);
    for (setting, recorded) in m.report.test.iter().map(|t| (t.setting, t)) {
        let again = cmd_eval(&m.paths.manifest, &setting.to_string(), false).unwrap();
        assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(recorded).unwrap());
        let ogi = cmd_eval(&m.paths.manifest, &setting.to_string(), true).unwrap();
        assert_eq!(&ogi, m.report.test_metrics(setting, true).unwrap());
    }
    assert_eq!(cmd_eval(&m.paths.manifest, "sideways", false).unwrap_err().exit_code(), 2);

    std::fs::remove_file(&m.paths.snapshot).unwrap();
    let err = cmd_eval(&m.paths.manifest, "transductive", false).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("snapshot"), "{err}");
}

#[test]
fn synth_files_are_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&["synth.events=10000", "synth.users=50", "synth.items=50"]).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(cmd_synth(&cfg, &a).unwrap(), 10_000);
    cmd_synth(&cfg, &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 10_001);

    cfg.set("synth.noise", "0").unwrap();
    cmd_synth(&cfg, &a).unwrap();
    let store = load_events(&a, LoadOptions::default()).unwrap();
    assert_eq!(cross_community_fraction(&store, 2), 0.0);

    let unwritable = dir.path().join("missing").join("x.csv");
    assert_eq!(cmd_synth(&cfg, &unwritable).unwrap_err().exit_code(), 3);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["train", "--set", "kk=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("kk") && stderr.contains("valid keys"), "{stderr}");

    assert_eq!(bin().args(["train", "--set", "k=0"]).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["verify", "--suite", "nope"]).output().unwrap().status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n0,1,2.0,0,0.5\n1,x,3.0,0,0.5\n").unwrap();
    let out = bin().args(["train", "--set", &format!("dataset={}", bad.display())]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin().args(["verify", "--suite", "metrics"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
}

#[test]
fn binary_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "4", "--sparsify", "3", "--out"])
        .arg(dir.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = String::from_utf8(out.stdout).unwrap().trim().to_string();
    let m: RunManifest = read_json(Path::new(&manifest)).unwrap();
    assert_eq!((m.seed, m.config["sparsify"].as_str()), (4, "3"));
    let out = bin().args(["eval", &manifest]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, serde_json::to_value(&m.report.test[0]).unwrap());
}

proptest! {
    #[test]
    fn config_text_round_trips(k in 1usize..64, alpha in 0.0f64..=1.0, lr in 1e-6f64..1.0, seeds in proptest::collection::vec(any::<u64>(), 1..4), jitter in 0.0f64..5.0) {
        let mut cfg = RunConfig::default();
        cfg.k = k;
        cfg.train.alpha = alpha;
        cfg.train.lr = lr;
        cfg.seeds = seeds;
        cfg.synth.jitter = jitter;
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
