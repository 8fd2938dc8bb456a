//! The `abds` command line: argument parsing, config resolution and exit
//! codes. Command bodies live in [`commands`] so tests can call them.

pub mod commands;
pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use abds_core::oracle::OracleConfig;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::{
    DetectCmdConfig, EditConfig, EvalConfig, GenDataConfig, SampleConfig, Seeded, SweepConfig,
    TrainCmdConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// One or more numerical checks did not hold.
#[derive(Debug)]
pub struct CheckFailed(pub Vec<String>);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} check(s) failed", self.0.len())?;
        for m in &self.0 {
            write!(f, "\n  {m}")?;
        }
        Ok(())
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Debug, Parser)]
#[command(
    name = "abds",
    version,
    about = "Guided diffusion edits and analysis-by-synthesis anomaly maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a mixture point cloud or the texture benchmark.
    GenData(Common),
    /// Train the MLP noise predictor on a dataset.
    Train(Common),
    /// Draw unconditional samples.
    Sample(Common),
    /// Guided edits of input rows.
    Edit(Common),
    /// Edit test images and write anomaly maps with metrics.
    Detect(Common),
    /// Score the maps of an earlier detect run.
    Eval(Common),
    /// Benchmark over a strength, sharpness or strategy grid.
    Sweep(Common),
    /// Compare approximate guidance with the exact mixture gradient.
    OracleCheck(Common),
}

pub fn load_config<T: DeserializeOwned + Default + Seeded>(common: &Common) -> Result<T> {
    let mut cfg: T = match &common.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => T::default(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn with_config<T, F, R>(common: &Common, f: F) -> Result<()>
where
    T: DeserializeOwned + Serialize + Default + Seeded,
    F: FnOnce(&T, &Path) -> Result<R>,
{
    let cfg: T = load_config(common)?;
    if common.print_config {
        print!("{}", toml::to_string(&cfg)?);
        return Ok(());
    }
    commands::write_config(&common.out, &cfg)?;
    f(&cfg, &common.out)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(c) => with_config::<GenDataConfig, _, _>(c, commands::gen_data),
        Command::Train(c) => with_config::<TrainCmdConfig, _, _>(c, |cfg, out| {
            let r = commands::train(cfg, out)?;
            if let Some(v) = r.final_val_loss {
                println!("final validation loss {v:.6}");
            }
            Ok(())
        }),
        Command::Sample(c) => with_config::<SampleConfig, _, _>(c, commands::sample),
        Command::Edit(c) => with_config::<EditConfig, _, _>(c, commands::edit),
        Command::Detect(c) => with_config::<DetectCmdConfig, _, _>(c, |cfg, out| {
            let p = commands::detect(cfg, out)?;
            println!(
                "images {} auc_pr {:?} f1_star {:?}",
                p.images, p.auc_pr, p.f1_star
            );
            Ok(())
        }),
        Command::Eval(c) => with_config::<EvalConfig, _, _>(c, |cfg, out| {
            let p = commands::eval(cfg, out)?;
            println!(
                "images {} auc_pr {:?} f1_star {:?}",
                p.images, p.auc_pr, p.f1_star
            );
            Ok(())
        }),
        Command::Sweep(c) => with_config::<SweepConfig, _, _>(c, |cfg, out| {
            for r in commands::sweep(cfg, out)? {
                println!(
                    "{}={} {} {} auc_pr {:.4} f1_star {:.4} dist {:.3}",
                    r.param,
                    r.value,
                    r.strategy,
                    r.sampler,
                    r.auc_pr,
                    r.f1_star,
                    r.mean_edit_distance
                );
            }
            Ok(())
        }),
        Command::OracleCheck(c) => with_config::<OracleConfig, _, _>(c, |cfg, out| {
            let r = commands::oracle_check(cfg, out)?;
            for s in &r.summary {
                println!(
                    "{} mean angular error {:.4}",
                    s.strategy.name(),
                    s.mean_angular_error
                );
            }
            Ok(())
        }),
    }
}

/// 2 for numerical failures (failed checks, divergence, non-finite
/// values), 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<CheckFailed>().is_some() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<abds_core::Error>() {
            return match e {
                abds_core::Error::NonFinite(..)
                | abds_core::Error::Diverged { .. }
                | abds_core::Error::NonFiniteState { .. } => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code after reporting any error on stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
