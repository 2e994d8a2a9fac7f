//! `groupsr`: synthesize, degrade, train, run and benchmark the grouped
//! video super-resolution pipeline from the command line.

mod chart;
mod commands;
mod config;
mod error;
mod frames;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::RoundtripMode;
use crate::config::PipelineConfig;
use crate::error::CliResult;
use crate::frames::Role;

#[derive(Parser)]
#[command(name = "groupsr", version, about = "Grouped video super-resolution pipeline")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RoleArg {
    Train,
    Val,
    Test,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Train => Role::Train,
            RoleArg::Val => Role::Val,
            RoleArg::Test => Role::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write procedural high-resolution clips and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[arg(long, default_value_t = 7)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, value_enum, default_value = "train")]
        role: RoleArg,
    },
    /// Blur, decimate and compress the clips of a manifest.
    Degrade {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One CRF for every clip instead of the dataset mix.
        #[arg(long)]
        crf: Option<u32>,
    },
    /// Stage one: train the codec to reproduce its input.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Save a checkpoint and exit after this many steps.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Stage two: train the backbone (mode from `train.mode`).
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stage-one codec archive; overrides `paths.codec_archive`.
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Super-resolve a directory of low-resolution frames.
    Infer {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Backbone name from the registry; overrides `backbone.name`.
        #[arg(long)]
        backbone: Option<String>,
        /// Trained toy backbone archive.
        #[arg(long)]
        backbone_archive: Option<PathBuf>,
        /// Also write the latent frames to `OUT/latents`.
        #[arg(long)]
        dump_latents: bool,
    },
    /// Luma PSNR and SSIM of predicted frames against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON report path; the per-frame CSV goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latency grid with compression on and off.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Also draw one PNG chart per resolution.
        #[arg(long)]
        chart: bool,
    },
    /// Run a clip through grouping alone or the whole codec at scale 1.
    Roundtrip {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, value_enum, default_value = "grouping")]
        mode: RoundtripMode,
        #[arg(long)]
        codec: Option<PathBuf>,
    },
}

fn print_json(value: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg: PipelineConfig = config::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Synth {
            out,
            clips,
            frames,
            size,
            role,
        } => {
            let path = commands::synth(
                &cfg,
                &commands::SynthArgs {
                    out,
                    clips,
                    frames,
                    size,
                    role: role.into(),
                },
            )?;
            println!("{}", path.display());
        }
        Command::Degrade { manifest, out, crf } => {
            println!("{}", commands::degrade(&cfg, &manifest, &out, crf)?.display());
        }
        Command::Pretrain {
            manifest,
            out,
            steps,
            stop_after,
        } => {
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            cfg.train.stop_after = stop_after.or(cfg.train.stop_after);
            cfg.validate()?;
            let log = commands::pretrain(&cfg, &manifest, &out)?;
            print_json(&log_line(&log))?;
        }
        Command::Train {
            manifest,
            out,
            codec,
            steps,
            stop_after,
        } => {
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            cfg.train.stop_after = stop_after.or(cfg.train.stop_after);
            cfg.validate()?;
            let log = commands::train(&cfg, &manifest, &out, codec.as_deref())?;
            print_json(&log_line(&log))?;
        }
        Command::Infer {
            clip,
            out,
            codec,
            backbone,
            backbone_archive,
            dump_latents,
        } => {
            if let Some(name) = backbone {
                cfg.backbone.name = name;
            }
            if backbone_archive.is_some() {
                cfg.backbone.archive = backbone_archive;
            }
            cfg.validate()?;
            let k = commands::infer(&cfg, &clip, &out, codec.as_deref(), dump_latents)?;
            log::info!("{k} latent frames");
            println!("{}", out.display());
        }
        Command::Eval { pred, gt, out } => {
            let report = commands::eval(&pred, &gt, cfg.dataset.frame_rate)?;
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report)? + "\n";
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| error::io_err(dir, e))?;
                }
                std::fs::write(&path, text).map_err(|e| error::io_err(&path, e))?;
                let csv = path.with_extension("csv");
                let clip = pred.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                std::fs::write(&csv, report.to_csv(&clip)).map_err(|e| error::io_err(&csv, e))?;
            }
            print_json(&report)?;
        }
        Command::Bench {
            scenario,
            out,
            codec,
            chart,
        } => {
            let outputs = commands::bench(&scenario, &out, codec.as_deref(), chart)?;
            print_json(&outputs)?;
        }
        Command::Roundtrip { clip, mode, codec } => {
            print_json(&commands::roundtrip_cmd(&cfg, &clip, mode, codec.as_deref())?)?;
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct LogLine<'a> {
    stage: &'a str,
    steps_run: usize,
    initial_eval_psnr_y: Option<f64>,
    final_eval_psnr_y: Option<f64>,
    stopped_at: Option<usize>,
}

fn log_line(log: &groupsr_core::train::TrainLog) -> LogLine<'_> {
    LogLine {
        stage: &log.stage,
        steps_run: log.records.len(),
        initial_eval_psnr_y: log.initial_eval_psnr_y,
        final_eval_psnr_y: log.final_eval_psnr_y,
        stopped_at: log.stopped_at,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code() as u8)
        }
    }
}
