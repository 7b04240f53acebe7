//! The `fvsr` command line: dataset synthesis, training, evaluation,
//! cost profiling and reconstruction.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use config::{ConstantsSource, Precision, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "fvsr",
    version,
    about = "Asymmetric-VAE video super-resolution toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["f32", "f64"])]
    pub precision: Option<String>,
    /// Overrides any configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize HR clips, their degraded LR versions and a manifest.
    GenData,
    /// Pretrain the reference VAE, then train the f16 decoder.
    Train {
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from `checkpoint.fvsr` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score bicubic and model reconstructions against HR.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train, val or all.
        #[arg(long)]
        split: Option<String>,
        /// Write PPM crops of LR, bicubic, SR and HR frames.
        #[arg(long)]
        dump: bool,
    },
    /// Cost-model report for a target volume.
    Profile {
        /// T,H,W
        #[arg(long)]
        volume: Option<String>,
        /// s_t,s_s
        #[arg(long)]
        strides: Option<String>,
        /// `calibrate` or a constants file.
        #[arg(long)]
        constants: Option<String>,
    },
    /// Super-resolve an LR clip with a trained checkpoint.
    Reconstruct {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// LR clip container or PPM frame.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Replace the decoder head with a copy of the first trunk channels.
        #[arg(long)]
        identity_head: bool,
    },
}

fn path_str(p: &std::path::Path) -> String {
    p.display().to_string()
}

impl Cli {
    /// Layers defaults, the config file, flags and `--set` overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let g = &self.global;
        if let Some(path) = &g.config {
            cfg.apply_file(path)?;
        }
        let mut flags: Vec<(&str, String)> = Vec::new();
        if let Some(s) = g.seed {
            flags.push(("seed", s.to_string()));
        }
        if let Some(o) = &g.out {
            flags.push(("out", path_str(o)));
        }
        if let Some(p) = &g.precision {
            flags.push(("precision", p.clone()));
        }
        match &self.command {
            Command::GenData => {}
            Command::Train { data, resume } => {
                if let Some(d) = data {
                    flags.push(("data.dir", path_str(d)));
                }
                if *resume {
                    flags.push(("train.resume", "true".into()));
                }
            }
            Command::Eval {
                data,
                checkpoint,
                split,
                dump,
            } => {
                if let Some(d) = data {
                    flags.push(("data.dir", path_str(d)));
                }
                if let Some(c) = checkpoint {
                    flags.push(("eval.checkpoint", path_str(c)));
                }
                if let Some(s) = split {
                    flags.push(("eval.split", s.clone()));
                }
                if *dump {
                    flags.push(("eval.dump", "true".into()));
                }
            }
            Command::Profile {
                volume,
                strides,
                constants,
            } => {
                for (k, v) in [
                    ("profile.volume", volume),
                    ("profile.strides", strides),
                    ("profile.constants", constants),
                ] {
                    if let Some(v) = v {
                        flags.push((k, v.clone()));
                    }
                }
            }
            Command::Reconstruct {
                checkpoint,
                input,
                identity_head,
            } => {
                if let Some(c) = checkpoint {
                    flags.push(("reconstruct.checkpoint", path_str(c)));
                }
                if let Some(i) = input {
                    flags.push(("reconstruct.input", path_str(i)));
                }
                if *identity_head {
                    flags.push(("reconstruct.identity_head", "true".into()));
                }
            }
        }
        for (k, v) in flags {
            cfg.set(k, &v)?;
        }
        for kv in &g.overrides {
            cfg.apply_override(kv)?;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<()> {
        let cfg = self.resolve()?;
        match self.command {
            Command::GenData => commands::gen_data::run(&cfg),
            Command::Train { .. } => commands::train::run(&cfg),
            Command::Eval { .. } => commands::eval::run(&cfg),
            Command::Profile { .. } => commands::profile::run(&cfg),
            Command::Reconstruct { .. } => commands::reconstruct::run(&cfg),
        }
    }
}
