use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedperl::config::ExperimentConfig;
use fedperl::federation::{run_experiment_with, ExperimentOutcome, Mode};
use fedperl::report::{compare, write_outputs, ExperimentReport};

#[derive(Parser)]
#[command(
    name = "fedperl",
    version,
    about = "Semi-supervised federated learning with peer learning"
)]
struct Cli {
    /// Override the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or CSV file for `compare`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Compare saved reports (report.json files or directories holding one).
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
    /// Run every mode on one config and compare them.
    Ladder { config: PathBuf },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, &cli)?;
            let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let outcome = run_one(&cfg, &out)?;
            print!("{}", summary_line(&outcome.report));
        }
        Command::Compare { reports } => {
            let reports = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            let table = compare(&reports)?;
            print!("{}", table.render());
            if let Some(out) = &cli.out {
                table.write_csv(out)?;
            }
        }
        Command::Ladder { config } => {
            let base = load(config, &cli)?;
            let out = cli.out.clone().unwrap_or_else(|| base.output_dir.clone());
            let mut reports = Vec::new();
            for mode in Mode::ALL {
                let cfg = ExperimentConfig { mode, ..base.clone() };
                let outcome = run_one(&cfg, &out.join(mode.name()))?;
                print!("{}", summary_line(&outcome.report));
                reports.push(outcome.report);
            }
            let table = compare(&reports)?;
            table.write_csv(&out.join("ladder.csv"))?;
            print!("{}", table.render());
        }
    }
    Ok(())
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_one(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    log::info!(
        "{} seed {}: {} rounds -> {}",
        cfg.mode,
        cfg.seed,
        cfg.rounds,
        out.display()
    );
    let every = (cfg.rounds / 10).max(1);
    let outcome = run_experiment_with(cfg, |_, log| {
        if (log.round + 1) % every == 0 {
            let loss = log.train_loss.iter().sum::<f64>() / log.train_loss.len().max(1) as f64;
            log::info!(
                "{} round {:>4}: loss {:.4} val_acc {}",
                cfg.mode,
                log.round + 1,
                loss,
                log.val_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
            );
        }
        Ok(())
    })
    .with_context(|| format!("running {}", cfg.mode))?;
    write_outputs(out, &outcome.report, &outcome.logs, &outcome.models)
        .with_context(|| format!("writing outputs to {}", out.display()))?;
    Ok(outcome)
}

fn read_report(path: &Path) -> Result<ExperimentReport> {
    let file = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    ExperimentReport::from_path(&file).with_context(|| format!("reading {}", file.display()))
}

fn summary_line(r: &ExperimentReport) -> String {
    let s = &r.summary;
    format!(
        "{:<14} f1 {:.4} ({:.4}) ± {:.4}  precision {:.4}  recall {:.4}  ac {:.0}%\n",
        r.mode.name(),
        s.f1.mean,
        s.f1.median,
        s.f1.std,
        s.precision.mean,
        s.recall.mean,
        r.communication.additional_cost_pct
    )
}
