//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to the end of the line
//! strategy = third-hop
//! k = 8
//! ```
//!
//! Command-line overrides are applied after the file, in order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tgsl_core::encoders::{EncoderConfig, NeighborSampling, RhoInjection};
use tgsl_core::tgraph::SynthConfig;
use tgsl_core::tgsl::{Strategy, TgslConfig};
use tgsl_core::training::{ModelSpec, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Encoder trained jointly with the structure learner.
    Tgsl,
    /// Encoder alone.
    Encoder,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tgsl" => Ok(Self::Tgsl),
            "encoder" => Ok(Self::Encoder),
            _ => Err("expected tgsl or encoder".into()),
        }
    }
}

impl Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tgsl => "tgsl",
            Self::Encoder => "encoder",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// jodie-csv input; the synthetic generator is used when absent.
    pub dataset: Option<PathBuf>,
    pub synth: SynthConfig,
    pub split: (f64, f64, f64),
    pub mask_frac: f64,
    pub sparsify: usize,
    pub model: ModelKind,
    pub strategy: Strategy,
    pub k: usize,
    pub n_can: usize,
    pub n_rnn: usize,
    pub khop_fanout: usize,
    pub tau: f64,
    pub tgsl_layers: usize,
    pub tgsl_hidden: usize,
    pub encoder_hidden: usize,
    pub encoder_heads: usize,
    pub encoder_layers: usize,
    pub n_nb: usize,
    pub time_dim: usize,
    pub rho_injection: RhoInjection,
    pub sampling: NeighborSampling,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tg = TgslConfig::new(1, 1);
        let enc = EncoderConfig::new(1, 1);
        Self {
            dataset: None,
            synth: SynthConfig::default(),
            split: (0.7, 0.15, 0.15),
            mask_frac: 0.1,
            sparsify: 1,
            model: ModelKind::Tgsl,
            strategy: tg.strategy,
            k: tg.k,
            n_can: tg.n_can,
            n_rnn: tg.n_rnn,
            khop_fanout: tg.khop_fanout,
            tau: tg.tau,
            tgsl_layers: tg.layers,
            tgsl_hidden: tg.hidden,
            encoder_hidden: enc.hidden,
            encoder_heads: enc.heads,
            encoder_layers: enc.layers,
            n_nb: enc.n_nb,
            time_dim: enc.time_dim,
            rho_injection: enc.rho_injection,
            sampling: enc.sampling,
            train: TrainConfig::default(),
            seeds: vec![0],
            out: PathBuf::from("runs"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset",
    "synth.communities",
    "synth.users",
    "synth.items",
    "synth.events",
    "synth.noise",
    "synth.feature_dim",
    "synth.jitter",
    "synth.seed",
    "split.train",
    "split.val",
    "split.test",
    "split.mask_frac",
    "sparsify",
    "model",
    "strategy",
    "k",
    "n_can",
    "n_rnn",
    "khop_fanout",
    "tau",
    "tgsl.layers",
    "tgsl.hidden",
    "encoder.hidden",
    "encoder.heads",
    "encoder.layers",
    "encoder.n_nb",
    "encoder.time_dim",
    "encoder.rho_injection",
    "encoder.sampling",
    "batch_size",
    "lr",
    "max_epochs",
    "patience",
    "tolerance",
    "alpha",
    "tau_cl",
    "queue_size",
    "momentum",
    "seeds",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| CliError::Config(format!("{key} = {value}: {e}")))
}

fn rho_name(r: RhoInjection) -> &'static str {
    match r {
        RhoInjection::Value => "value",
        RhoInjection::Logit => "logit",
    }
}

fn sampling_name(s: NeighborSampling) -> &'static str {
    match s {
        NeighborSampling::MostRecent => "most-recent",
        NeighborSampling::Uniform => "uniform",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "synth.communities" => self.synth.communities = parse(key, v)?,
            "synth.users" => self.synth.users = parse(key, v)?,
            "synth.items" => self.synth.items = parse(key, v)?,
            "synth.events" => self.synth.events = parse(key, v)?,
            "synth.noise" => self.synth.noise = parse(key, v)?,
            "synth.feature_dim" => self.synth.feature_dim = parse(key, v)?,
            "synth.jitter" => self.synth.jitter = parse(key, v)?,
            "synth.seed" => self.synth.seed = parse(key, v)?,
            "split.train" => self.split.0 = parse(key, v)?,
            "split.val" => self.split.1 = parse(key, v)?,
            "split.test" => self.split.2 = parse(key, v)?,
            "split.mask_frac" => self.mask_frac = parse(key, v)?,
            "sparsify" => self.sparsify = parse(key, v)?,
            "model" => self.model = parse(key, v)?,
            "strategy" => self.strategy = v.parse().map_err(|e: tgsl_core::Error| CliError::Config(e.to_string()))?,
            "k" => self.k = parse(key, v)?,
            "n_can" => self.n_can = parse(key, v)?,
            "n_rnn" => self.n_rnn = parse(key, v)?,
            "khop_fanout" => self.khop_fanout = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "tgsl.layers" => self.tgsl_layers = parse(key, v)?,
            "tgsl.hidden" => self.tgsl_hidden = parse(key, v)?,
            "encoder.hidden" => self.encoder_hidden = parse(key, v)?,
            "encoder.heads" => self.encoder_heads = parse(key, v)?,
            "encoder.layers" => self.encoder_layers = parse(key, v)?,
            "encoder.n_nb" => self.n_nb = parse(key, v)?,
            "encoder.time_dim" => self.time_dim = parse(key, v)?,
            "encoder.rho_injection" => {
                self.rho_injection = match v {
                    "value" => RhoInjection::Value,
                    "logit" => RhoInjection::Logit,
                    _ => return Err(CliError::Config(format!("{key} = {v}: expected value or logit"))),
                }
            }
            "encoder.sampling" => {
                self.sampling = match v {
                    "most-recent" => NeighborSampling::MostRecent,
                    "uniform" => NeighborSampling::Uniform,
                    _ => return Err(CliError::Config(format!("{key} = {v}: expected most-recent or uniform"))),
                }
            }
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "tolerance" => self.train.tolerance = parse(key, v)?,
            "alpha" => self.train.alpha = parse(key, v)?,
            "tau_cl" => self.train.tau_cl = parse(key, v)?,
            "queue_size" => self.train.queue_size = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .map(|s| parse::<u64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "out" => self.out = PathBuf::from(v),
            _ => {
                return Err(CliError::UnknownKey {
                    key: key.to_string(),
                    valid: KEYS.to_vec(),
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = |x: &dyn Display| x.to_string();
        Some(match key {
            "dataset" => self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "synth.communities" => s(&self.synth.communities),
            "synth.users" => s(&self.synth.users),
            "synth.items" => s(&self.synth.items),
            "synth.events" => s(&self.synth.events),
            "synth.noise" => s(&self.synth.noise),
            "synth.feature_dim" => s(&self.synth.feature_dim),
            "synth.jitter" => s(&self.synth.jitter),
            "synth.seed" => s(&self.synth.seed),
            "split.train" => s(&self.split.0),
            "split.val" => s(&self.split.1),
            "split.test" => s(&self.split.2),
            "split.mask_frac" => s(&self.mask_frac),
            "sparsify" => s(&self.sparsify),
            "model" => s(&self.model),
            "strategy" => s(&self.strategy),
            "k" => s(&self.k),
            "n_can" => s(&self.n_can),
            "n_rnn" => s(&self.n_rnn),
            "khop_fanout" => s(&self.khop_fanout),
            "tau" => s(&self.tau),
            "tgsl.layers" => s(&self.tgsl_layers),
            "tgsl.hidden" => s(&self.tgsl_hidden),
            "encoder.hidden" => s(&self.encoder_hidden),
            "encoder.heads" => s(&self.encoder_heads),
            "encoder.layers" => s(&self.encoder_layers),
            "encoder.n_nb" => s(&self.n_nb),
            "encoder.time_dim" => s(&self.time_dim),
            "encoder.rho_injection" => rho_name(self.rho_injection).into(),
            "encoder.sampling" => sampling_name(self.sampling).into(),
            "batch_size" => s(&self.train.batch_size),
            "lr" => s(&self.train.lr),
            "max_epochs" => s(&self.train.max_epochs),
            "patience" => s(&self.train.patience),
            "tolerance" => s(&self.train.tolerance),
            "alpha" => s(&self.train.alpha),
            "tau_cl" => s(&self.train.tau_cl),
            "queue_size" => s(&self.train.queue_size),
            "momentum" => s(&self.train.momentum),
            "seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|&k| (k.to_string(), self.get(k).expect("listed key"))).collect()
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|&k| format!("{k} = {}\n", self.get(k).expect("listed key"))).collect()
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// `key=value` pairs from `--set`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.sparsify == 0 {
            return bad("sparsify must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.model_spec(1, 1).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model_spec(&self, node_dim: usize, edge_dim: usize) -> ModelSpec {
        let encoder = EncoderConfig {
            node_dim,
            edge_dim,
            hidden: self.encoder_hidden,
            heads: self.encoder_heads,
            layers: self.encoder_layers,
            n_nb: self.n_nb,
            time_dim: self.time_dim,
            rho_injection: self.rho_injection,
            sampling: self.sampling,
        };
        let tgsl = (self.model == ModelKind::Tgsl).then_some(TgslConfig {
            node_dim,
            edge_dim,
            layers: self.tgsl_layers,
            hidden: self.tgsl_hidden,
            n_rnn: self.n_rnn,
            n_can: self.n_can,
            k: self.k,
            tau: self.tau,
            strategy: self.strategy,
            khop_fanout: self.khop_fanout,
        });
        ModelSpec { encoder, tgsl }
    }

    /// Training settings of one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            Some(p) => p.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned()),
            None => "synth".into(),
        }
    }

    pub fn run_id(&self, seed: u64) -> String {
        match self.model {
            ModelKind::Tgsl => format!("{}-tgsl-{}-k{}-n{}-s{seed}", self.dataset_name(), self.strategy, self.k, self.sparsify),
            ModelKind::Encoder => format!("{}-encoder-n{}-s{seed}", self.dataset_name(), self.sparsify),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["k=4", "lr=0.003", "strategy=random", "seeds=1,2,3", "synth.jitter=1.5", "encoder.sampling=uniform"]).unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# header\nk = 4 # trailing\n\nalpha=0.3\n").unwrap();
        assert_eq!((cfg.k, cfg.train.alpha), (4, 0.3));
        cfg.apply_overrides(&["k=8"]).unwrap();
        assert_eq!(cfg.resolved()["k"], "8");
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::default().set("kk", "1").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("kk") && msg.contains("n_can") && msg.contains("tau_cl"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("strategy", "two-hop").is_err());
        assert!(cfg.set("k", "-1").is_err());
        cfg.set("k", "0").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::default();
        cfg.set("alpha", "1.5").unwrap();
        assert!(cfg.validate().is_err());
    }
}
