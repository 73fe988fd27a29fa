//! Command line front end: dataset generation, base training, editing,
//! evaluation, sweeps and attention inspection. Every command writes a
//! content-hashed manifest that `replay` can re-run.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use neuedit::pipeline::Method;

use crate::commands::edit::{load_base, EditRequest};
use crate::commands::sweep::{parse_grid, SweepOptions, SweepParam};
use crate::config::RunConfig;
pub use crate::error::{CliError, Result};
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "neuedit", version, about = "Neutral editing on a synthetic video world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render seeded edit tasks into a dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// First task seed; the config seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Train a base checkpoint on a dataset directory.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Edit one clip directory towards a target prompt.
    Edit {
        #[arg(long)]
        video: PathBuf,
        /// Target prompt; read from the clip's task.json when omitted.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_method, default_value = "neuedit")]
        method: Method,
        /// Caption of the input, for the source-prompt baseline.
        #[arg(long)]
        source_prompt: Option<String>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Collect metrics.json files under a directory into one CSV.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Sweep s, alpha or sigma over a grid.
    Sweep {
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        tasks: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Also run full edits at each grid value with this base model.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Dump per-frame attention heatmaps of an edit run as PGM.
    InspectAttn {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `<run>/attention`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Re-run a command from its manifest into a new location and compare
    /// output hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "neuedit" => Ok(Method::Neuedit),
        "source_baseline" | "source-baseline" => Ok(Method::SourceBaseline),
        "target_baseline" | "target-baseline" => Ok(Method::TargetBaseline),
        other => Err(format!("unknown method {other:?}")),
    }
}

fn parse_param(s: &str) -> std::result::Result<SweepParam, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Pretrain { .. } => "pretrain",
            Command::Edit { .. } => "edit",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::InspectAttn { .. } => "inspect-attn",
            Command::Replay { .. } => "replay",
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::GenData { cfg, .. }
            | Command::Pretrain { cfg, .. }
            | Command::Edit { cfg, .. }
            | Command::Eval { cfg, .. }
            | Command::Sweep { cfg, .. }
            | Command::InspectAttn { cfg, .. } => cfg.config.as_deref(),
            Command::Replay { .. } => None,
        }
    }

    fn set_out(&mut self, new: PathBuf) -> Result<()> {
        match self {
            Command::GenData { out, .. }
            | Command::Pretrain { out, .. }
            | Command::Edit { out, .. }
            | Command::Eval { out, .. }
            | Command::Sweep { out, .. } => *out = new,
            Command::InspectAttn { out, .. } => *out = Some(new),
            Command::Replay { .. } => return Err(CliError::Usage("cannot replay a replay".into())),
        }
        Ok(())
    }
}

/// Run a parsed command. `args` are the raw arguments after the subcommand
/// name, recorded in the manifest.
pub fn run(command: &Command, args: Vec<String>) -> Result<Manifest> {
    if let Command::Replay { manifest, out } = command {
        return replay(manifest, out);
    }
    let cfg = RunConfig::load(command.config_path())?;
    run_with_config(command, &cfg, args)
}

pub fn run_with_config(command: &Command, cfg: &RunConfig, args: Vec<String>) -> Result<Manifest> {
    cfg.validate()?;
    match command {
        Command::GenData { out, n, seed, .. } => commands::gen_data::run(out, *n, seed.unwrap_or(cfg.seed), cfg, args),
        Command::Pretrain { data, out, .. } => commands::pretrain::run(data, out, cfg, args),
        Command::Edit {
            video,
            prompt,
            ckpt,
            out,
            method,
            source_prompt,
            ..
        } => {
            let req = EditRequest {
                video,
                prompt: prompt.as_deref(),
                source_prompt: source_prompt.as_deref(),
                ckpt,
                method: *method,
                out,
            };
            Ok(commands::edit::run(&req, cfg, args)?.0)
        }
        Command::Eval { runs, out, .. } => commands::eval::run(runs, out, cfg, args),
        Command::Sweep {
            param,
            grid,
            out,
            tasks,
            seed,
            ckpt,
            ..
        } => {
            let base = match ckpt {
                Some(p) => Some(load_base(p, cfg, &neuedit::embeddings::Codebook::default_codebook())?),
                None => None,
            };
            let opts = SweepOptions {
                param: *param,
                grid: parse_grid(grid)?,
                tasks: *tasks,
                seed: seed.unwrap_or(cfg.seed),
                world: cfg.world.clone(),
                edit: cfg.edit.clone(),
                model: base.as_ref().map(|b| (&b.model, &b.codec)),
            };
            Ok(commands::sweep::run(&opts, out, cfg, ckpt.as_deref(), args)?.0)
        }
        Command::InspectAttn { run, out, .. } => commands::inspect_attn::run(run, out.as_deref(), cfg, args),
        Command::Replay { manifest, out } => replay(manifest, out),
    }
}

/// Re-run the command recorded in `manifest_path` with its stored config,
/// writing to `out`, and require the same output hash.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<Manifest> {
    let recorded = Manifest::read(manifest_path)?;
    let cfg: RunConfig = serde_json::from_value(recorded.config.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut argv = vec!["neuedit".to_string(), recorded.command.clone()];
    argv.extend(recorded.args.iter().cloned());
    let mut cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(format!("manifest arguments do not parse: {e}")))?;
    cli.command.set_out(out.to_path_buf())?;
    let fresh = run_with_config(&cli.command, &cfg, recorded.args.clone())?;
    if fresh.output_hash != recorded.output_hash {
        return Err(neuedit::Error::HashMismatch {
            what: format!("replayed {} outputs", recorded.command),
            expected: recorded.output_hash,
            found: fresh.output_hash,
        }
        .into());
    }
    Ok(fresh)
}
