//! Command-line surface.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use drrnet_core::{Element, Precision};

use crate::bench::{mem_bench, reverse_check, time_bench};
use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::train::{finetune, pretrain, MetricsRecord, Regime};
use crate::{ckpt, errmap};

#[derive(Debug, Parser)]
#[command(name = "drrnet", version, about = "Dual-residual reversible network experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a plain residual network on the upstream task and save it.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional metrics log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Finetune on the downstream task under one regime.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_regime)]
        regime: Regime,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        log: PathBuf,
    },
    /// Minimal-tolerance map of reconstruction vs cached gradients.
    ErrorMap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "0:1:0.1")]
        alpha_grid: String,
        #[arg(long, default_value = "0.1:1:0.1")]
        beta_grid: String,
        #[arg(long, default_value_t = 1e-5)]
        rtol: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Reconstruction error at the configured end point.
    ReverseCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Fail with exit code 3 when the error exceeds this bound.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Peak activation bytes per depth and mode.
    MemBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        depths: Vec<usize>,
    },
    /// Median step time of cached vs reversible backprop.
    TimeBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    Regime::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Regime::ALL.iter().map(|r| r.name()).collect();
        format!("unknown regime {s:?}; expected one of {}", names.join(", "))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn write_record(out: &mut impl Write, path: &Path, r: &MetricsRecord) -> Result<()> {
    let line = serde_json::to_string(r).map_err(|e| HarnessError::Invariant(e.to_string()))?;
    writeln!(out, "{line}")
        .and_then(|_| out.flush())
        .map_err(|e| HarnessError::io(path, e))
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    let cfg = TrainConfig::load(path)?;
    if let Some(w) = cfg.schedule.warning() {
        log::warn!("{w:?}: coefficients jump to the end point at t = eta");
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let precision = match &cli.command {
        Command::Pretrain { config, .. }
        | Command::Finetune { config, .. }
        | Command::ErrorMap { config, .. }
        | Command::ReverseCheck { config, .. }
        | Command::MemBench { config, .. }
        | Command::TimeBench { config, .. } => load_config(config)?.precision,
    };
    match precision {
        Precision::F32 => run_typed::<f32>(cli.command),
        Precision::F64 => run_typed::<f64>(cli.command),
    }
}

fn run_typed<T: Element>(command: Command) -> Result<()> {
    match command {
        Command::Pretrain { config, out, log } => {
            let cfg = load_config(&config)?;
            let outcome = pretrain::<T>(&cfg)?;
            ckpt::save(&outcome.checkpoint, &out)?;
            if let Some(path) = log {
                let mut w = create(&path)?;
                for r in &outcome.records {
                    write_record(&mut w, &path, r)?;
                }
            }
            println!("pretrain accuracy {:.4} -> {}", outcome.accuracy, out.display());
        }
        Command::Finetune {
            config,
            regime,
            init,
            log,
        } => {
            let cfg = load_config(&config)?;
            let checkpoint = init.as_deref().map(ckpt::load).transpose()?;
            let mut w = create(&log)?;
            let outcome = finetune::<T>(&cfg, regime, checkpoint.as_ref(), &mut |r| {
                write_record(&mut w, &log, r)
            })?;
            println!("{} accuracy {:.4}", regime.name(), outcome.accuracy);
        }
        Command::ErrorMap {
            config,
            alpha_grid,
            beta_grid,
            rtol,
            out,
            heatmap,
        } => {
            let cfg = load_config(&config)?;
            let map = errmap::error_map::<T>(
                &cfg.net,
                errmap::parse_grid(&alpha_grid)?,
                errmap::parse_grid(&beta_grid)?,
                rtol,
                cfg.seed,
            )?;
            write_file(&out, &errmap::to_csv(&map))?;
            if let Some(path) = heatmap {
                write_file(&path, &errmap::to_pgm(&map))?;
            }
            let flagged = map.cells.iter().filter(|c| !c.stats.finite).count();
            println!(
                "{} cells, median min_atol {:e}, {flagged} non-finite -> {}",
                map.cells.len(),
                map.median().value(),
                out.display()
            );
        }
        Command::ReverseCheck { config, trials, tol } => {
            let cfg = load_config(&config)?;
            let c = cfg.schedule.end;
            let err = reverse_check::<T>(&cfg.net, c, trials, cfg.seed)?;
            println!("alpha {} beta {} trials {trials}: max reconstruction error {err:e}", c.alpha, c.beta);
            if !err.is_finite() {
                return Err(HarnessError::Numeric("reconstruction produced non-finite values".into()));
            }
            if let Some(tol) = tol {
                if err > tol {
                    return Err(HarnessError::Invariant(format!(
                        "reconstruction error {err:e} exceeds {tol:e}"
                    )));
                }
            }
        }
        Command::MemBench { config, depths } => {
            let cfg = load_config(&config)?;
            let rows = mem_bench::<T>(&cfg.net, cfg.schedule.start, &depths, cfg.seed)?;
            println!("depth,mode,peak_bytes");
            for r in rows {
                println!("{},{},{}", r.depth, r.mode, r.peak_bytes);
            }
        }
        Command::TimeBench { config, trials } => {
            let cfg = load_config(&config)?;
            let t = time_bench::<T>(&cfg.net, cfg.schedule.start, cfg.batch, trials, cfg.seed)?;
            println!(
                "cached {:.3} ms, reversible {:.3} ms, ratio {:.3}",
                t.cached_step_ms, t.reversible_step_ms, t.ratio
            );
        }
    }
    Ok(())
}
