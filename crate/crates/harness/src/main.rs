use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ebscreen::grid::{builtin_grid, find_experiment, ExperimentSpec};
use ebscreen::plots::emit_histogram;
use ebscreen::report::emit_report;
use ebscreen::runner::{run_experiment, train_data_seed};
use ebscreen_core::screening::MapeSet;
use ebscreen_core::sim::simulate_dataset;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "ebscreen",
    version,
    about = "CGAN-EB vs NB-EB hotspot screening benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or the whole grid) and write the report.
    Run {
        /// Built-in experiment id (E1..E12, F5..F8) or `all`.
        #[arg(long, required_unless_present = "config")]
        experiment: Option<String>,
        /// JSON or TOML experiment spec used instead of a built-in one.
        #[arg(long, conflicts_with = "experiment")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Use K training sets with K test sets each.
        #[arg(long, value_name = "K")]
        replications_override: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        m_samples: Option<usize>,
        /// Worker threads.
        #[arg(long, default_value_t = 1, value_name = "P")]
        parallel: usize,
        /// Hotspot set MAPE is averaged over.
        #[arg(long, value_parser = ["proposed", "true"])]
        mape_set: Option<String>,
    },
    /// List the built-in experiments.
    Grid,
    /// Simulate an experiment's first training set and plot its counts.
    Simulate {
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        histogram: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn lookup(id: &str) -> Result<ExperimentSpec> {
    find_experiment(id).with_context(|| format!("unknown experiment `{id}`; see `ebscreen grid`"))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Grid => {
            println!("{:<4} {:>6} {:>6} {:>6}  form", "id", "alpha", "beta0", "n");
            for e in builtin_grid() {
                println!(
                    "{:<4} {:>6} {:>6} {:>6}  {:?}",
                    e.id, e.alpha, e.beta0, e.n_sites, e.functional_form
                );
            }
        }
        Command::Simulate {
            experiment,
            histogram,
            seed,
        } => {
            let mut spec = lookup(&experiment)?;
            if let Some(s) = seed {
                spec.master_seed = s;
            }
            let data = simulate_dataset(&spec.sim_config(train_data_seed(&spec, 0)))?;
            let title = format!(
                "{}: alpha={}, beta0={}, n={}",
                spec.id, spec.alpha, spec.beta0, spec.n_sites
            );
            emit_histogram(&data, &histogram, &title)?;
            println!("wrote {}", histogram.display());
        }
        Command::Run {
            experiment,
            config,
            out,
            seed,
            replications_override,
            epochs,
            m_samples,
            parallel,
            mape_set,
        } => {
            let mut specs = match (&experiment, &config) {
                (_, Some(path)) => vec![ExperimentSpec::from_path(path)?],
                (Some(id), None) if id.eq_ignore_ascii_case("all") => builtin_grid(),
                (Some(id), None) => vec![lookup(id)?],
                (None, None) => bail!("pass --experiment or --config"),
            };
            for spec in &mut specs {
                if let Some(s) = seed {
                    spec.master_seed = s;
                }
                if let Some(k) = replications_override {
                    spec.n_train_sets = k;
                    spec.n_test_sets_per_train = k;
                }
                if let Some(e) = epochs {
                    spec.cgan_config.epochs = e;
                }
                if let Some(m) = m_samples {
                    spec.m_samples = m;
                }
                if let Some(m) = &mape_set {
                    spec.mape_set = m.parse::<MapeSet>().map_err(anyhow::Error::msg)?;
                }
            }
            let mut reports = Vec::with_capacity(specs.len());
            for spec in &specs {
                reports.push(run_experiment(spec, parallel)?);
            }
            emit_report(&reports, &out)?;
            let partial = reports.iter().filter(|r| r.is_partial()).count();
            println!(
                "wrote report for {} experiment(s) to {}",
                reports.len(),
                out.display()
            );
            if partial > 0 {
                bail!(
                    "{partial} experiment(s) finished with failed replications; see metadata.json"
                );
            }
        }
    }
    Ok(())
}
