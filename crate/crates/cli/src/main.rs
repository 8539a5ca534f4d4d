//! Command-line driver for tensor-train density-surrogate experiments.

mod config;
mod plot_data;
mod presets;
mod runner;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ttpdf",
    about = "Build TT density surrogates, sample them, and run corrected estimators",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a TOML config file.
    Run {
        /// Path to the config (sections [experiment], [tt], [target_params]).
        config: PathBuf,
    },
    /// Run a named benchmark study.
    Preset {
        /// One of: rosen-smoke, shock-fig1, shock-table2, rosen-table3,
        /// diffusion-fig6.
        name: String,
        /// desk (reduced N and meshes, same structure) or paper.
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Study directory; defaults to out/<name>.
        #[arg(long)]
        output_dir: Option<String>,
        /// Only write the per-variant configs, skip running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Emit x/y plot series (error vs N, error vs time) from a study
    /// directory produced by `preset`.
    PlotData {
        /// Study directory holding variant subdirectories.
        study_dir: PathBuf,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("TTPDF_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> Result<()> {
    init_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = config::ExperimentConfig::from_path(&config)?;
            let outcome = runner::run_experiment(&cfg)?;
            eprintln!(
                "wrote {} records to {}",
                outcome.records.len(),
                cfg.experiment.output_dir
            );
            for a in &outcome.aggregates {
                eprintln!(
                    "  {} {}: estimate {:.6e}{}{}",
                    a.method,
                    a.qoi,
                    a.mean_estimate,
                    a.mean_tau
                        .map(|t| format!(", tau {t:.3}"))
                        .unwrap_or_default(),
                    a.mean_rejection_rate
                        .map(|r| format!(", rejection {r:.4}"))
                        .unwrap_or_default(),
                );
            }
        }
        Command::Preset {
            name,
            scale,
            output_dir,
            dry_run,
        } => {
            let scale = match scale.as_str() {
                "desk" => presets::Scale::Desk,
                "paper" => presets::Scale::Paper,
                other => anyhow::bail!("--scale must be desk or paper, got {other}"),
            };
            let out_root = output_dir.unwrap_or_else(|| format!("out/{name}"));
            let variants = presets::build(&name, scale, &out_root)?;
            std::fs::create_dir_all(&out_root)
                .with_context(|| format!("creating {out_root}"))?;
            for (tag, cfg) in &variants {
                let cfg_path = format!("{out_root}/{tag}.toml");
                std::fs::write(&cfg_path, toml::to_string_pretty(cfg)?)
                    .with_context(|| format!("writing {cfg_path}"))?;
            }
            if dry_run {
                eprintln!("wrote {} variant configs under {out_root}", variants.len());
                return Ok(());
            }
            for (tag, cfg) in &variants {
                eprintln!("== variant {tag} ==");
                let outcome = runner::run_experiment(cfg)?;
                for a in &outcome.aggregates {
                    eprintln!(
                        "  {} {}: estimate {:.6e}{}{}",
                        a.method,
                        a.qoi,
                        a.mean_estimate,
                        a.mean_tau
                            .map(|t| format!(", tau {t:.3}"))
                            .unwrap_or_default(),
                        a.mean_rejection_rate
                            .map(|r| format!(", rejection {r:.4}"))
                            .unwrap_or_default(),
                    );
                }
            }
            eprintln!("study complete under {out_root}");
        }
        Command::PlotData { study_dir } => {
            plot_data::emit(&study_dir)?;
            eprintln!(
                "wrote plot_error_vs_n.csv and plot_error_vs_time.csv in {}",
                study_dir.display()
            );
        }
    }
    Ok(())
}
