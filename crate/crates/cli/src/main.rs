#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ehlab_cli::commands::{self, PdfMode, SweepVar};
use ehlab_cli::config::{parse_grid, ConfigFile, Scenario};
use ehlab_core::model::Capacity;
use ehlab_core::perf::Metric;

#[derive(Parser)]
#[command(
    name = "ehlab",
    about = "Energy-buffered link analysis: limiting distributions, error rates, outage",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario config path (defaults to the built-in reference scenario).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Override the number of simulated slots.
    #[arg(long, global = true)]
    slots: Option<u64>,

    /// Override the burn-in slot count.
    #[arg(long, global = true)]
    burn_in: Option<u64>,

    /// Capacity in multiples of the effective mean harvest, or "inf".
    #[arg(long, global = true)]
    k: Option<String>,

    /// Normalized effective power ratio (defaults to the configured M).
    #[arg(long, global = true)]
    delta: Option<f64>,

    /// Normalized SNR in dB (defaults to the configured link).
    #[arg(long, global = true)]
    snr_db: Option<f64>,

    /// Sweep grid "lo:step:hi".
    #[arg(long, global = true)]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Export a buffer-content density (exact, approximate, collocation
    /// oracle, or simulated).
    Pdf {
        #[arg(long, default_value = "exact")]
        mode: String,
    },
    /// Error rate against the power ratio for every configured capacity
    /// (closed form and Monte Carlo).
    Figure2,
    /// Outage against SNR at the per-point optimal power ratio.
    Figure3,
    /// Run the storage chain and export its empirical statistics.
    Simulate {
        /// Starting buffer level in joules.
        #[arg(long)]
        initial: Option<f64>,
    },
    /// Closed-form and Monte Carlo error rate at one operating point.
    Aer,
    /// Closed-form and Monte Carlo outage at one operating point.
    Outage,
    /// Closed-form sweep over the power ratio or SNR.
    Sweep {
        #[arg(long, default_value = "aer")]
        metric: String,
        /// Sweep variable: delta or snr.
        #[arg(long, default_value = "delta")]
        var: String,
        /// With --var snr: re-optimize delta at every point.
        #[arg(long)]
        optimize: bool,
    },
}

fn parse_k(text: &str) -> Result<Capacity> {
    if text == "inf" {
        return Ok(Capacity::Infinite);
    }
    let v: f64 = text
        .parse()
        .with_context(|| format!("--k must be a positive number or \"inf\", got {text:?}"))?;
    if !(v > 0.0) {
        bail!("--k must be > 0, got {v}");
    }
    Ok(Capacity::Finite(v))
}

fn parse_metric(text: &str) -> Result<Metric> {
    match text {
        "aer" => Ok(Metric::Aer),
        "outage" => Ok(Metric::Outage),
        other => bail!("--metric must be aer or outage, got {other:?}"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::parse(ehlab_cli::config::TABLE1)?,
    };
    let mut scn = Scenario::resolve(&cfg)?;
    if let Some(seed) = cli.seed {
        scn.seed = seed;
    }
    if let Some(slots) = cli.slots {
        scn.n_slots = slots;
    }
    if let Some(burn) = cli.burn_in {
        scn.burn_in = burn;
    }
    if scn.n_slots <= scn.burn_in {
        bail!(
            "n_slots ({}) must exceed burn_in ({})",
            scn.n_slots,
            scn.burn_in
        );
    }
    // point selection: default capacity from the config, default power
    // ratio from the configured desired power
    let kx = match &cli.k {
        Some(text) => parse_k(text)?,
        None => match scn.capacity {
            Capacity::Finite(k) => Capacity::Finite(k / scn.x_mean_eff),
            Capacity::Infinite => Capacity::Infinite,
        },
    };
    let delta = cli
        .delta
        .unwrap_or_else(|| scn.delta_tilde_from_m(scn.m_desired));
    if !(delta > 0.0) {
        bail!("--delta must be > 0, got {delta}");
    }
    let snr_db = cli.snr_db.unwrap_or(10.0 * scn.gamma_bar.log10());

    let path = match &cli.command {
        Command::Pdf { mode } => {
            let mode: PdfMode = mode.parse()?;
            commands::cmd_pdf(&scn, mode, kx, delta, &cli.out)?
        }
        Command::Figure2 => commands::cmd_figure2(&scn, &cli.out)?,
        Command::Figure3 => commands::cmd_figure3(&scn, &cli.out)?,
        Command::Simulate { initial } => {
            commands::cmd_simulate(&scn, kx, delta, *initial, &cli.out)?
        }
        Command::Aer => commands::cmd_metric_point(&scn, Metric::Aer, kx, delta, snr_db, &cli.out)?,
        Command::Outage => {
            commands::cmd_metric_point(&scn, Metric::Outage, kx, delta, snr_db, &cli.out)?
        }
        Command::Sweep {
            metric,
            var,
            optimize,
        } => {
            let metric = parse_metric(metric)?;
            let var = match var.as_str() {
                "delta" => SweepVar::Delta,
                "snr" => SweepVar::Snr,
                other => bail!("--var must be delta or snr, got {other:?}"),
            };
            let grid = match (&cli.grid, var) {
                (Some(text), _) => parse_grid(text)?,
                (None, SweepVar::Delta) => scn.delta_grid.clone(),
                (None, SweepVar::Snr) => scn.snr_grid_db.clone(),
            };
            commands::cmd_sweep(
                &scn, metric, var, &grid, kx, cli.delta, *optimize, snr_db, &cli.out,
            )?
        }
    };
    println!("{}", path.display());
    Ok(())
}
