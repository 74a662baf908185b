use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kcagc::data::save_dataset;
use kcagc::theory::{theorem1_budget, ConditionParams, Instance};
use serde_json::json;

mod config;
mod experiment;

use config::{Config, Source};
use experiment::{Row, BUILD_ID};

#[derive(Parser)]
#[command(name = "kcagc", version = BUILD_ID, about = "Collaborative attributed-graph clustering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured protocol and write one row per combination.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's backend.
        #[arg(long)]
        backend: Option<String>,
        /// Overrides the config's repetition count.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Centralized and optimized runs for each filter order.
    SweepPsi {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated filter orders.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        psi: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Proximity-condition report of the filtered data as JSON.
    Theory {
        #[arg(long)]
        config: PathBuf,
        /// Separation constant.
        #[arg(long, default_value_t = 100.0)]
        c: f64,
        /// Factor of the restricted condition; defaults to 1/c.
        #[arg(long)]
        kappa: Option<f64>,
        /// Constant of the misclassification budget.
        #[arg(long, default_value_t = 1.0)]
        kappa2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the config's synthetic dataset in the canonical layout.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            backend,
            reps,
            out,
            format,
        } => {
            let mut cfg = Config::load(&config)?;
            if let Some(b) = backend {
                cfg.set("backend", &b)?;
            }
            if let Some(r) = reps {
                cfg.set("reps", &r.to_string())?;
            }
            write_rows(&experiment::run(&cfg)?, out.as_deref(), format)
        }
        Command::SweepPsi {
            config,
            psi,
            out,
            format,
        } => {
            if psi.is_empty() {
                bail!("--psi needs at least one filter order");
            }
            let base = Config::load(&config)?;
            let mut rows = Vec::new();
            for p in psi {
                let mut cfg = base.clone();
                cfg.set("protocols", "centralized,optimized")?;
                cfg.set("psi", &p.to_string())?;
                rows.extend(experiment::run(&cfg)?);
            }
            write_rows(&rows, out.as_deref(), format)
        }
        Command::Theory {
            config,
            c,
            kappa,
            kappa2,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let mut params = ConditionParams::new(c);
            if let Some(k) = kappa {
                params = params.with_kappa(k);
            }
            let d = experiment::load_source(&cfg)?;
            let x = experiment::filtered(&cfg, &d)?;
            let mut reports = Vec::new();
            for &parties in &cfg.parties {
                let s = experiment::split(&cfg, &x, parties)?;
                let report = Instance::new(s.slices, &d.labels, None)?.report(&params)?;
                let budget = theorem1_budget(&report.epsilon, parties, c, d.n(), kappa2)?;
                reports.push(json!({
                    "dataset": d.name,
                    "parties": parties,
                    "psi": cfg.psi,
                    "kappa2": kappa2,
                    "misclassification_budget": budget,
                    "report": report,
                }));
            }
            let text = serde_json::to_string_pretty(&json!({
                "build_id": BUILD_ID,
                "config_hash": cfg.hash(),
                "instances": reports,
            }))?;
            emit(text.as_bytes(), out.as_deref())
        }
        Command::Generate { config, out } => {
            let cfg = Config::load(&config)?;
            if matches!(cfg.source, Source::Directory(_)) {
                bail!("generate needs a synthetic source, not a dataset directory");
            }
            let d = experiment::load_source(&cfg)?;
            save_dataset(&d, &out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{}: {} nodes, {} features, {} classes -> {}", d.name, d.n(), d.m(), d.k, out.display());
            Ok(())
        }
    }
}

fn write_rows(rows: &[Row], out: Option<&Path>, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            w.into_inner()?
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(rows)?;
            v.push(b'\n');
            v
        }
    };
    emit(&bytes, out)
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => match std::io::stdout().write_all(bytes) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            other => Ok(other?),
        },
    }
}
