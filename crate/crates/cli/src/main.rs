use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tgsl_cli::run::{cmd_eval, cmd_sweep, cmd_synth, cmd_train};
use tgsl_cli::verify::{cmd_verify, Suite};
use tgsl_cli::{CliError, Result, RunConfig};

/// Time-aware graph structure learning for temporal link prediction.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (for synth: the output file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep one training event in every N.
    #[arg(long)]
    sparsify: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.set)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(n) = self.sparsify {
            cfg.sparsify = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write manifests, metrics and snapshots.
    Train(ConfigArgs),
    /// Re-evaluate a finished run from its manifest.
    Eval {
        manifest: PathBuf,
        /// transductive or inductive.
        #[arg(long, default_value = "transductive")]
        setting: String,
        /// Score on the original graph instead of the augmented one.
        #[arg(long)]
        original_graph: bool,
    },
    /// Write a synthetic dataset as jodie csv to `--out`.
    Synth(ConfigArgs),
    /// Run verification suites: grad, gumbel, metrics, leakage, closed-form or all.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Train every strategy with K in {2, 4, 8, 16, 32}.
    Sweep(ConfigArgs),
}

fn run(cli: Cli) -> Result<()> {
    let mut log = |m: &str| eprintln!("{m}");
    match cli.command {
        Command::Train(args) => {
            for m in cmd_train(&args.resolve()?, &mut log)? {
                println!("{}", m.paths.manifest.display());
            }
        }
        Command::Eval {
            manifest,
            setting,
            original_graph,
        } => {
            let metrics = cmd_eval(&manifest, &setting, original_graph)?;
            let text = serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Config(e.to_string()))?;
            println!("{text}");
        }
        Command::Synth(args) => {
            let path = args.out.clone().ok_or_else(|| CliError::Config("synth needs --out FILE".into()))?;
            let cfg = args.resolve()?;
            let n = cmd_synth(&cfg, &path)?;
            eprintln!("wrote {n} events to {}", path.display());
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            cmd_verify(suite, &mut std::io::stdout().lock())?;
        }
        Command::Sweep(args) => {
            let all = cmd_sweep(&args.resolve()?, &mut log)?;
            eprintln!("{} runs written", all.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
