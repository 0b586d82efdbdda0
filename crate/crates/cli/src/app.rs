//! Argument parsing and command dispatch shared by the binary and tests.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{cmd_ablate, cmd_eval, cmd_export_attn, cmd_train, metrics_line};
use crate::config::{parse_override, RunConfig};
use crate::error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "cat", version, about = "Train and inspect CAT attention networks")]
pub struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Model and batch-order seed; takes precedence over the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run in 64-bit floating point for bit-reproducible verification
    #[arg(long, global = true)]
    pub verify: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Train a model and write model.ckpt, factors.csv and metrics.csv
    Train,
    /// Evaluate a checkpoint on the validation split
    Eval,
    /// Write spatial attention maps as PGM images
    ExportAttn,
    /// Train every ablation arm and write ablation.csv
    Ablate,
    /// Print the resolved configuration
    ShowConfig,
}

/// Runs a parsed invocation and returns what the binary prints on stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    let mut overrides = cli.overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = match cli.command {
        Command::Train => {
            let eval = if cli.verify { cmd_train::<f64>(&cfg)? } else { cmd_train::<f32>(&cfg)? };
            format!("{}\n", metrics_line(&eval))
        }
        Command::Eval => {
            let eval = if cli.verify { cmd_eval::<f64>(&cfg)? } else { cmd_eval::<f32>(&cfg)? };
            format!("{}\n", metrics_line(&eval))
        }
        Command::ExportAttn => {
            let paths = if cli.verify { cmd_export_attn::<f64>(&cfg)? } else { cmd_export_attn::<f32>(&cfg)? };
            format!("wrote={} dir={}\n", paths.len(), cfg.export_dir.join("attention").display())
        }
        Command::Ablate => cmd_ablate(&cfg)?,
        Command::ShowConfig => cfg.render(),
    };
    Ok(out)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string().trim().replace('\n', " ")))?;
    execute(&cli)
}
