//! `vr`: reproducible experiments for variational Rényi bound inference.
//!
//! Each subcommand reads an optional JSON config, applies command-line
//! overrides, writes the fully resolved config and a manifest next to its
//! CSV outputs, and exits with 0 on success, 2 for configuration errors, 3
//! when training or fitting diverges and 4 for I/O failures. Failures also
//! print a JSON object `{"error": {...}}` on stderr.

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vrbound::trainer::RunManifest;
use vrbound::AlphaSetting;

use config::{default_train, Experiment, RunConfig};

/// A configuration problem detected by the CLI itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(name = "vr", version, about = "Variational Renyi bound experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for outputs (default: runs/<experiment>).
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, env = "VR_SEED")]
    seed: Option<u64>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<AlphaSetting>,
    /// Samples per datapoint.
    #[arg(long)]
    k: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Back-propagate a single selected sample per datapoint.
    #[arg(long)]
    single_backprop: bool,
    /// CSV dataset (replaces the built-in data).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form Renyi divergences with a quadrature cross-check.
    Divergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alphas: Option<Vec<AlphaSetting>>,
    },
    /// Finite-K bias of the Monte Carlo bound for a Gaussian pair.
    BiasSim {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alphas: Option<Vec<AlphaSetting>>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Bayesian linear regression: mean-field fits and the sigma curve.
    BlrDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train a Bayesian neural network with the energy approximation.
    BnnTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train a VAE with the VR bound.
    VaeTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Held-out bounds, gaps and weight diagnostics of a trained VAE.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Parameter file from vae-train.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alphas: Option<Vec<AlphaSetting>>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        k_ref: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

impl Command {
    fn parts(&self) -> (Experiment, &Common) {
        match self {
            Command::Divergence { common, .. } => (Experiment::Divergence, common),
            Command::BiasSim { common, .. } => (Experiment::BiasSim, common),
            Command::BlrDemo { common, .. } => (Experiment::BlrDemo, common),
            Command::BnnTrain { common, .. } => (Experiment::BnnTrain, common),
            Command::VaeTrain { common, .. } => (Experiment::VaeTrain, common),
            Command::Eval { common, .. } => (Experiment::Eval, common),
        }
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn apply_train_flags(train: &mut vrbound::TrainConfig, flags: &TrainFlags) {
    if let Some(a) = flags.alpha {
        train.alpha = a;
    }
    if let Some(k) = flags.k {
        train.k = k;
    }
    if let Some(m) = flags.batch_size {
        train.batch_size = m;
    }
    if let Some(s) = flags.steps {
        train.steps = s;
    }
    if let Some(lr) = flags.learning_rate {
        train.adam.learning_rate = lr;
    }
    if flags.single_backprop {
        train.single_backprop = true;
    }
}

/// Merges file, environment and flags into the configuration that runs.
fn resolve(command: &Command, mut cfg: RunConfig) -> Result<RunConfig> {
    let (experiment, common) = command.parts();
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(config_error(format!(
                "config is for experiment {:?} but the subcommand is {:?}",
                e.name(),
                experiment.name()
            )));
        }
    }
    cfg.experiment = Some(experiment);
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.output_dir.get_or_insert_with(|| PathBuf::from("runs").join(experiment.name()));

    let keep_dataset = matches!(
        experiment,
        Experiment::BlrDemo | Experiment::BnnTrain | Experiment::VaeTrain | Experiment::Eval
    );
    let keep_train = matches!(experiment, Experiment::BnnTrain | Experiment::VaeTrain);
    let mut resolved = RunConfig {
        experiment: cfg.experiment,
        seed: cfg.seed,
        output_dir: cfg.output_dir.clone(),
        threads: cfg.threads,
        dataset: keep_dataset.then(|| cfg.dataset.clone().unwrap_or_default()),
        train: keep_train.then(|| cfg.train.clone().unwrap_or_else(|| default_train(experiment))),
        ..Default::default()
    };
    match command {
        Command::Divergence { alphas, .. } => {
            let mut s = cfg.divergence.unwrap_or_default();
            if let Some(a) = alphas {
                s.alphas = a.clone();
            }
            resolved.divergence = Some(s);
        }
        Command::BiasSim { alphas, ks, repeats, .. } => {
            let mut s = cfg.bias_sim.unwrap_or_default();
            if let Some(a) = alphas {
                s.alphas = a.clone();
            }
            if let Some(k) = ks {
                s.ks = k.clone();
            }
            if let Some(r) = repeats {
                s.repeats = *r;
            }
            resolved.bias_sim = Some(s);
        }
        Command::BlrDemo { sigma, .. } => {
            let mut s = cfg.blr.unwrap_or_default();
            if let Some(v) = sigma {
                s.sigma = *v;
            }
            resolved.blr = Some(s);
        }
        Command::BnnTrain { train, .. } => {
            resolved.bnn = Some(cfg.bnn.unwrap_or_default());
            apply_train_flags(resolved.train.as_mut().expect("set above"), train);
            if let Some(p) = &train.data {
                resolved.dataset.as_mut().expect("set above").path = Some(p.clone());
            }
        }
        Command::VaeTrain { train, .. } => {
            resolved.vae = Some(cfg.vae.unwrap_or_default());
            apply_train_flags(resolved.train.as_mut().expect("set above"), train);
            if let Some(p) = &train.data {
                resolved.dataset.as_mut().expect("set above").path = Some(p.clone());
            }
        }
        Command::Eval {
            params,
            alphas,
            ks,
            k_ref,
            repeats,
            data,
            ..
        } => {
            let mut s = cfg.eval.unwrap_or_default();
            if let Some(p) = params {
                s.params = Some(p.clone());
            }
            if let Some(a) = alphas {
                s.alphas = a.clone();
            }
            if let Some(k) = ks {
                s.ks = k.clone();
            }
            if let Some(k) = k_ref {
                s.k_ref = *k;
            }
            if let Some(r) = repeats {
                s.repeats = *r;
            }
            if s.diagnostics_k == 0 {
                return Err(config_error("eval.diagnostics_k must be at least 1"));
            }
            resolved.eval = Some(s);
            resolved.vae = Some(cfg.vae.unwrap_or_default());
            if let Some(p) = data {
                resolved.dataset.as_mut().expect("set above").path = Some(p.clone());
            }
        }
    }
    if let Some(t) = resolved.train.as_mut() {
        // the run seed drives every random stream
        t.seed = resolved.seed;
        t.validate()?;
    }
    if resolved.threads == Some(0) {
        return Err(config_error("threads must be at least 1"));
    }
    Ok(resolved)
}

fn run(cli: Cli) -> Result<()> {
    let (experiment, common) = cli.command.parts();
    let file = load_config(common.config.as_deref())?;
    let cfg = resolve(&cli.command, file)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let dir = cfg.output_dir.clone().expect("resolved");
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let resolved_json = serde_json::to_value(&cfg)?;
    std::fs::write(dir.join("config.resolved.json"), serde_json::to_string_pretty(&resolved_json)?)
        .with_context(|| format!("cannot write to {}", dir.display()))?;

    let dataset = cfg.dataset.clone().unwrap_or_default();
    let produced = match experiment {
        Experiment::Divergence => experiments::divergence(cfg.divergence.as_ref().expect("resolved"), &dir)?,
        Experiment::BiasSim => experiments::bias_sim(cfg.bias_sim.as_ref().expect("resolved"), cfg.seed, &dir)?,
        Experiment::BlrDemo => experiments::blr_demo(cfg.blr.as_ref().expect("resolved"), &dataset, &dir)?,
        Experiment::BnnTrain => experiments::bnn_train(
            cfg.bnn.as_ref().expect("resolved"),
            &dataset,
            cfg.train.as_ref().expect("resolved"),
            &dir,
        )?,
        Experiment::VaeTrain => experiments::vae_train(
            cfg.vae.as_ref().expect("resolved"),
            &dataset,
            cfg.train.as_ref().expect("resolved"),
            &dir,
        )?,
        Experiment::Eval => experiments::eval(
            cfg.eval.as_ref().expect("resolved"),
            cfg.vae.as_ref().expect("resolved"),
            &dataset,
            cfg.seed,
            &dir,
        )?,
    };

    let mut manifest = RunManifest::new(experiment.name(), cfg.seed, resolved_json);
    manifest.dataset_hash = produced.dataset_hash;
    manifest.outputs = produced.outputs;
    manifest.outputs.push("config.resolved.json".into());
    manifest.write(dir.join("manifest.json"))?;
    println!("{} -> {}", experiment.name(), dir.display());
    Ok(())
}

/// Exit code and category for an error chain.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    use vrbound::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return (2, "config");
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Diverged { .. }
                | E::NonFiniteGradient { .. }
                | E::NonFiniteValue { .. }
                | E::NonFiniteLogJoint { .. }
                | E::NotConverged { .. }
                | E::AllWeightsZero
                | E::InvalidLogWeight { .. } => (3, "divergence"),
                E::Io(_) | E::Csv(_) | E::Json(_) | E::ParamFormat(_) => (4, "io"),
                E::DimensionMismatch { .. }
                | E::NotPositiveDefinite(_)
                | E::InvalidAlpha(_)
                | E::EmptyWeights
                | E::InvalidGrid(_)
                | E::InvalidDataset(_)
                | E::InvalidConfig(_) => (2, "config"),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return (4, "io");
        }
    }
    (1, "internal")
}

fn report(code: u8, kind: &str, message: String) -> ExitCode {
    let report = json!({
        "error": {
            "kind": kind,
            "exit_code": code,
            "message": message,
        }
    });
    eprintln!("{report}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(2, "config", e.to_string().trim().to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            report(code, kind, format!("{err:#}"))
        }
    }
}
