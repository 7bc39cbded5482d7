//! `binrbm`: generate planted datasets, run message passing and mean-field
//! theory over seeded ensembles, learn temperatures, and check against exact
//! enumeration. Results are CSV files in the `--out` directory.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use crate::config::{parse_assignment, resolve, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "binrbm",
    version,
    about = "Feature inference in a one-hidden-unit RBM with binary synapses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write planted datasets with JSON sidecars.
    Generate(Common),
    /// Run message passing over an ensemble or a single dataset file.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; its sidecar supplies the feature used for scoring.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Replica or density-evolution phase diagram.
    Meanfield(Common),
    /// Learn the inverse temperature by EM.
    Em {
        #[command(flatten)]
        common: Common,
        /// Directory with the MNIST IDX files.
        #[arg(long, env = "BINRBM_MNIST_DIR")]
        mnist_dir: Option<PathBuf>,
    },
    /// Compare sMP with exact enumeration on small instances.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Also write the full posterior of the first instance (N <= 12).
        #[arg(long)]
        dump: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Named preset (fig2 ... fig8, fig5-mnist, netsize).
    #[arg(long)]
    preset: Option<String>,
    /// JSON configuration file, applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// rbm or hopfield.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated engines: smp, amp, naive.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    betas: Vec<f64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    beta0: Vec<f64>,
    /// Any configuration field, e.g. `--set init=planted`; the value is JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Map<String, Value>> {
        let mut o = Map::new();
        let mut put = |k: &str, v: Value| {
            o.insert(k.to_string(), v);
        };
        if let Some(x) = &self.model {
            put("model", x.clone().into());
        }
        if !self.algorithms.is_empty() {
            put("algorithms", self.algorithms.clone().into());
        }
        if let Some(x) = self.n {
            put("n", x.into());
        }
        if let Some(x) = self.m {
            put("m", x.into());
        }
        if !self.alphas.is_empty() {
            put("alphas", self.alphas.clone().into());
        }
        if let Some(x) = self.beta {
            put("beta", x.into());
        }
        if !self.betas.is_empty() {
            put("betas", self.betas.clone().into());
        }
        if let Some(x) = self.instances {
            put("n_instances", x.into());
        }
        if let Some(x) = self.seed {
            put("seed", x.into());
        }
        if let Some(x) = self.tol {
            put("tol", x.into());
        }
        if let Some(x) = self.max_iter {
            put("max_iter", x.into());
        }
        if let Some(x) = self.damping {
            put("damping", x.into());
        }
        if let Some(x) = self.eta {
            put("eta", x.into());
        }
        if !self.beta0.is_empty() {
            put("beta0s", self.beta0.clone().into());
        }
        for s in &self.set {
            let (k, v) = parse_assignment(s)?;
            put(&k, v);
        }
        Ok(o)
    }

    fn resolve(&self, extra: Map<String, Value>) -> Result<ExperimentConfig> {
        let mut o = self.overrides()?;
        o.extend(extra);
        resolve(self.preset.as_deref(), self.config.as_deref(), o)
    }
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.resolve(Map::new())?;
            prepare(&common.out)?;
            commands::write_manifest(&common.out, "generate", &cfg)?;
            for path in commands::generate(&cfg, &common.out)? {
                println!("{}", path.display());
            }
        }
        Command::Infer { common, data } => {
            let mut extra = Map::new();
            if let Some(d) = data {
                extra.insert("data".into(), Value::String(d.display().to_string()));
            }
            let cfg = common.resolve(extra)?;
            prepare(&common.out)?;
            commands::write_manifest(&common.out, "infer", &cfg)?;
            commands::infer(&cfg, &common.out)?;
        }
        Command::Meanfield(common) => {
            let cfg = common.resolve(Map::new())?;
            prepare(&common.out)?;
            commands::write_manifest(&common.out, "meanfield", &cfg)?;
            commands::meanfield(&cfg, &common.out)?;
        }
        Command::Em { common, mnist_dir } => {
            let cfg = common.resolve(Map::new())?;
            prepare(&common.out)?;
            commands::write_manifest(&common.out, "em", &cfg)?;
            commands::em(&cfg, &common.out, mnist_dir.as_deref())?;
        }
        Command::OracleCheck { common, dump } => {
            let cfg = common.resolve(Map::new())?;
            prepare(&common.out)?;
            commands::write_manifest(&common.out, "oracle-check", &cfg)?;
            commands::oracle_check(&cfg, &common.out, dump)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
