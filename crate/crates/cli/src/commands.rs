//! Command implementations: each computes typed rows and serializes them as
//! CSV (comma-separated, '.' decimals, header row, LF endings) named
//! `<command>_<scenario>.csv` under the output directory.
//!
//! Parameter points are evaluated concurrently (capped by EHLAB_THREADS)
//! and written in point order, so a given config and seed produce
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use ehlab_core::dist;
use ehlab_core::model::Capacity;
use ehlab_core::perf::{self, Metric};
use ehlab_core::sim::{self, SimOptions};

use crate::config::{mix_seed, Scenario};

/// Value formatting: scientific shortest-roundtrip for measured values,
/// plain display for grid coordinates.
fn sci(v: f64) -> String {
    format!("{v:e}")
}

fn plain(v: f64) -> String {
    format!("{v}")
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 48 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn out_path(out_dir: &Path, command: &str, scenario: &str) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    Ok(out_dir.join(format!("{command}_{scenario}.csv")))
}

/// Run `f` on a rayon pool sized by EHLAB_THREADS (default: all cores).
fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("EHLAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| anyhow!("EHLAB_THREADS must be a positive integer, got {v:?}"))?;
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

fn k_label(kx: Capacity) -> String {
    match kx {
        Capacity::Finite(v) => format!("{v}x"),
        Capacity::Infinite => "inf".into(),
    }
}

fn capacity_entries(scn: &Scenario) -> Vec<Capacity> {
    let mut ks: Vec<Capacity> = scn
        .k_list_x_mean
        .iter()
        .map(|&v| Capacity::Finite(v))
        .collect();
    if scn.include_infinite {
        ks.push(Capacity::Infinite);
    }
    ks
}

// ---------------------------------------------------------------------------
// figure data
// ---------------------------------------------------------------------------

/// One error-rate point: closed form and Monte Carlo at a capacity and
/// normalized power ratio.
#[derive(Debug, Clone)]
pub struct Fig2Row {
    pub k_over_mean: Capacity,
    pub delta_tilde: f64,
    pub closed_form: f64,
    pub mc: f64,
    pub mc_stderr: f64,
}

/// Error rate against the normalized power ratio for every configured
/// capacity at the scenario's operating SNR.
pub fn compute_figure2(scn: &Scenario) -> Result<Vec<Fig2Row>> {
    let ks = capacity_entries(scn);
    let points: Vec<(usize, usize)> = (0..ks.len())
        .flat_map(|i| (0..scn.delta_grid.len()).map(move |j| (i, j)))
        .collect();
    let rows: Result<Vec<Fig2Row>> = with_pool(|| {
        points
            .par_iter()
            .map(|&(i, j)| {
                let kx = ks[i];
                let delta = scn.delta_grid[j];
                let closed_form = perf::closed_form_metric(
                    Metric::Aer,
                    scn.link.mod_a,
                    scn.link.mod_b,
                    scn.link.gamma_thr(),
                    scn.gamma_bar,
                    delta,
                    kx,
                )
                .map_err(anyhow::Error::new)?;
                let spec = scn.effective_spec(delta, kx)?;
                let initial = scn.mc_initial(delta, spec.capacity, scn.n_slots);
                let est = perf::mc_aer(
                    &spec,
                    &scn.link,
                    scn.n_slots,
                    scn.burn_in,
                    mix_seed(scn.seed, i as u64, j as u64),
                    initial,
                )
                .map_err(anyhow::Error::new)?;
                Ok(Fig2Row {
                    k_over_mean: kx,
                    delta_tilde: delta,
                    closed_form,
                    mc: est.value,
                    mc_stderr: est.stderr,
                })
            })
            .collect()
    })?;
    rows
}

pub fn cmd_figure2(scn: &Scenario, out_dir: &Path) -> Result<PathBuf> {
    let rows = compute_figure2(scn)?;
    let path = out_path(out_dir, "figure2", &scn.name)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                k_label(r.k_over_mean),
                plain(r.delta_tilde),
                sci(r.closed_form),
                sci(r.mc),
                sci(r.mc_stderr),
            ]
        })
        .collect();
    write_csv(
        &path,
        "k_label,delta_tilde,aer_closed_form,aer_mc,mc_stderr",
        &table,
    )?;
    Ok(path)
}

/// One outage point at its optimized power ratio.
#[derive(Debug, Clone)]
pub struct Fig3Row {
    pub k_over_mean: Capacity,
    pub gamma_bar_db: f64,
    pub delta_opt: f64,
    pub closed_form: f64,
    pub mc: f64,
    pub mc_stderr: f64,
}

/// Outage probability against SNR with the power ratio optimized per
/// point; unbounded buffers operate at delta = 1.
pub fn compute_figure3(scn: &Scenario) -> Result<Vec<Fig3Row>> {
    let ks = capacity_entries(scn);
    let points: Vec<(usize, usize)> = (0..ks.len())
        .flat_map(|i| (0..scn.snr_grid_db.len()).map(move |j| (i, j)))
        .collect();
    let grid = perf::default_delta_grid();
    let rows: Result<Vec<Fig3Row>> = with_pool(|| {
        points
            .par_iter()
            .map(|&(i, j)| {
                let kx = ks[i];
                let db = scn.snr_grid_db[j];
                let gb = (10f64).powf(db / 10.0);
                let gthr = scn.link.gamma_thr();
                let (a, b) = (scn.link.mod_a, scn.link.mod_b);
                let (delta_opt, closed_form) = match kx {
                    Capacity::Infinite => (1.0, perf::outage_infinite(gthr, gb, 1.0)),
                    Capacity::Finite(_) => {
                        perf::optimize_delta(Metric::Outage, a, b, gthr, gb, kx, &grid)
                            .map_err(anyhow::Error::new)?
                    }
                };
                let spec = scn.effective_spec(delta_opt, kx)?;
                let link = scn.link_at_snr_db(db);
                let initial = scn.mc_initial(delta_opt, spec.capacity, scn.n_slots);
                let est = perf::mc_outage(
                    &spec,
                    &link,
                    scn.n_slots,
                    scn.burn_in,
                    mix_seed(scn.seed, 1000 + i as u64, j as u64),
                    initial,
                )
                .map_err(anyhow::Error::new)?;
                Ok(Fig3Row {
                    k_over_mean: kx,
                    gamma_bar_db: db,
                    delta_opt,
                    closed_form,
                    mc: est.value,
                    mc_stderr: est.stderr,
                })
            })
            .collect()
    })?;
    rows
}

pub fn cmd_figure3(scn: &Scenario, out_dir: &Path) -> Result<PathBuf> {
    let rows = compute_figure3(scn)?;
    let path = out_path(out_dir, "figure3", &scn.name)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                k_label(r.k_over_mean),
                plain(r.gamma_bar_db),
                plain(r.delta_opt),
                sci(r.closed_form),
                sci(r.mc),
                sci(r.mc_stderr),
            ]
        })
        .collect();
    write_csv(
        &path,
        "k_label,gamma_bar_db,delta_opt,pout_closed_form,pout_mc,mc_stderr",
        &table,
    )?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// density exports
// ---------------------------------------------------------------------------

/// Which density route `pdf` exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdfMode {
    Exact,
    Approx,
    Oracle,
    Simulated,
}

impl std::str::FromStr for PdfMode {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<PdfMode> {
        match s {
            "exact" => Ok(PdfMode::Exact),
            "approx" => Ok(PdfMode::Approx),
            "oracle" => Ok(PdfMode::Oracle),
            "simulated" => Ok(PdfMode::Simulated),
            other => bail!("mode must be exact|approx|oracle|simulated, got {other:?}"),
        }
    }
}

/// Export the buffer-content density as `record,x,value` rows: `density`
/// rows over the support plus a one-line `atom` record (and simulation
/// extras for the simulated mode).
pub fn cmd_pdf(
    scn: &Scenario,
    mode: PdfMode,
    kx: Capacity,
    delta_tilde: f64,
    out_dir: &Path,
) -> Result<PathBuf> {
    let lambda = scn.lambda_eff;
    let m = delta_tilde * scn.x_mean_eff;
    let capacity = scn.capacity_j(kx);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let span = match capacity {
        Capacity::Finite(k) => k,
        Capacity::Infinite => 10.0 * scn.x_mean_eff,
    };
    let bins = 1000usize;
    let centers = (0..bins).map(|i| span * (i as f64 + 0.5) / bins as f64);
    match mode {
        PdfMode::Simulated => {
            let spec = scn.effective_spec(delta_tilde, kx)?;
            let initial = match capacity {
                Capacity::Finite(k) => 0.5 * k,
                Capacity::Infinite => 0.0,
            };
            let opts = SimOptions::new(scn.n_slots, scn.burn_in, scn.seed, initial);
            let stats = sim::simulate(&spec, &opts).map_err(anyhow::Error::new)?;
            for i in 0..bins {
                rows.push(vec![
                    "density".into(),
                    sci(stats.histogram.bin_center(i)),
                    sci(stats.histogram.density(i)),
                ]);
            }
            rows.push(vec!["atom".into(), sci(span), sci(stats.atom_mass)]);
            rows.push(vec![
                "overflow".into(),
                String::new(),
                sci(stats.histogram.overflow_mass()),
            ]);
            rows.push(vec![
                "p_full_power".into(),
                String::new(),
                sci(stats.p_m_hat),
            ]);
        }
        _ => {
            let dist = match (mode, capacity) {
                (PdfMode::Exact, Capacity::Finite(k)) => {
                    dist::finite_exact(lambda, m, k).map_err(anyhow::Error::new)?
                }
                (PdfMode::Exact, Capacity::Infinite) => {
                    dist::infinite_exact(lambda, m).map_err(anyhow::Error::new)?
                }
                (PdfMode::Approx, Capacity::Finite(k)) => {
                    let (params, d) =
                        dist::finite_approx(lambda, m, k, 2).map_err(anyhow::Error::new)?;
                    if !params.tight {
                        eprintln!(
                            "warning: approximation is loose for K < 3M (K/M = {:.3})",
                            k / m
                        );
                    }
                    d
                }
                (PdfMode::Approx, Capacity::Infinite) => {
                    dist::infinite_exact(lambda, m).map_err(anyhow::Error::new)?
                }
                (PdfMode::Oracle, Capacity::Finite(k)) => {
                    let h = ehlab_core::model::HarvestModel::exponential(lambda)
                        .map_err(anyhow::Error::new)?;
                    dist::solve_integral_equation(&h, m, k, 2000).map_err(anyhow::Error::new)?
                }
                (PdfMode::Oracle, Capacity::Infinite) => {
                    bail!("the collocation oracle needs a finite capacity")
                }
                (PdfMode::Simulated, _) => unreachable!(),
            };
            for x in centers {
                rows.push(vec!["density".into(), sci(x), sci(dist.density(x))]);
            }
            match capacity {
                Capacity::Finite(k) => {
                    rows.push(vec!["atom".into(), sci(k), sci(dist.atom())]);
                }
                Capacity::Infinite => {
                    rows.push(vec!["atom".into(), "inf".into(), sci(0.0)]);
                }
            }
        }
    }
    let path = out_path(out_dir, "pdf", &scn.name)?;
    write_csv(&path, "record,x,value", &rows)?;
    Ok(path)
}

/// Run the chain and export the empirical statistics (histogram density,
/// atom estimate, full-power fraction, and the mean-drift slope for
/// unbounded buffers).
pub fn cmd_simulate(
    scn: &Scenario,
    kx: Capacity,
    delta_tilde: f64,
    initial: Option<f64>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let spec = scn.effective_spec(delta_tilde, kx)?;
    let initial = initial.unwrap_or(match spec.capacity {
        Capacity::Finite(k) => 0.5 * k,
        Capacity::Infinite => 0.0,
    });
    let opts = SimOptions::new(scn.n_slots, scn.burn_in, scn.seed, initial);
    let stats = sim::simulate(&spec, &opts).map_err(anyhow::Error::new)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for i in 0..stats.histogram.counts.len() {
        rows.push(vec![
            "density".into(),
            sci(stats.histogram.bin_center(i)),
            sci(stats.histogram.density(i)),
        ]);
    }
    rows.push(vec![
        "atom".into(),
        sci(stats.histogram.hi),
        sci(stats.atom_mass),
    ]);
    rows.push(vec![
        "overflow".into(),
        String::new(),
        sci(stats.histogram.overflow_mass()),
    ]);
    rows.push(vec![
        "p_full_power".into(),
        String::new(),
        sci(stats.p_m_hat),
    ]);
    if !spec.capacity.is_finite() {
        let slope = sim::mean_drift(&stats).map_err(anyhow::Error::new)?;
        rows.push(vec!["mean_drift".into(), String::new(), sci(slope)]);
    }
    let path = out_path(out_dir, "simulate", &scn.name)?;
    write_csv(&path, "record,x,value", &rows)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// point metrics and sweeps
// ---------------------------------------------------------------------------

const METRIC_HEADER: &str = "k,delta,gamma_bar_db,metric,value,stderr";

fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::Aer => "aer",
        Metric::Outage => "outage",
    }
}

/// Closed-form and Monte Carlo evaluation of one metric at one operating
/// point.
pub fn cmd_metric_point(
    scn: &Scenario,
    metric: Metric,
    kx: Capacity,
    delta_tilde: f64,
    snr_db: f64,
    out_dir: &Path,
) -> Result<PathBuf> {
    let gb = (10f64).powf(snr_db / 10.0);
    let closed = perf::closed_form_metric(
        metric,
        scn.link.mod_a,
        scn.link.mod_b,
        scn.link.gamma_thr(),
        gb,
        delta_tilde,
        kx,
    )
    .map_err(anyhow::Error::new)?;
    let spec = scn.effective_spec(delta_tilde, kx)?;
    let link = scn.link_at_snr_db(snr_db);
    let initial = scn.mc_initial(delta_tilde, spec.capacity, scn.n_slots);
    let est = match metric {
        Metric::Aer => perf::mc_aer(&spec, &link, scn.n_slots, scn.burn_in, scn.seed, initial),
        Metric::Outage => {
            perf::mc_outage(&spec, &link, scn.n_slots, scn.burn_in, scn.seed, initial)
        }
    }
    .map_err(anyhow::Error::new)?;
    let name = metric_name(metric);
    let rows = vec![
        vec![
            k_label(kx),
            plain(delta_tilde),
            plain(snr_db),
            format!("{name}_closed_form"),
            sci(closed),
            String::new(),
        ],
        vec![
            k_label(kx),
            plain(delta_tilde),
            plain(snr_db),
            format!("{name}_mc"),
            sci(est.value),
            sci(est.stderr),
        ],
    ];
    let path = out_path(out_dir, name, &scn.name)?;
    write_csv(&path, METRIC_HEADER, &rows)?;
    Ok(path)
}

/// Sweep variable for `cmd_sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Delta,
    Snr,
}

/// Closed-form sweep of a metric over the power ratio (at fixed SNR) or
/// over SNR (at a fixed or per-point optimized power ratio).
#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    scn: &Scenario,
    metric: Metric,
    var: SweepVar,
    grid: &[f64],
    kx: Capacity,
    delta_tilde: Option<f64>,
    optimize: bool,
    snr_db: f64,
    out_dir: &Path,
) -> Result<PathBuf> {
    let (a, b, gthr) = (scn.link.mod_a, scn.link.mod_b, scn.link.gamma_thr());
    let opt_grid = perf::default_delta_grid();
    let rows: Result<Vec<Vec<String>>> = with_pool(|| {
        grid.par_iter()
            .map(|&v| {
                let (delta, db) = match var {
                    SweepVar::Delta => (v, snr_db),
                    SweepVar::Snr => {
                        let gb = (10f64).powf(v / 10.0);
                        let d = if optimize {
                            match kx {
                                Capacity::Infinite => 1.0,
                                Capacity::Finite(_) => {
                                    perf::optimize_delta(metric, a, b, gthr, gb, kx, &opt_grid)
                                        .map_err(anyhow::Error::new)?
                                        .0
                                }
                            }
                        } else {
                            delta_tilde.unwrap_or(1.0)
                        };
                        (d, v)
                    }
                };
                let gb = (10f64).powf(db / 10.0);
                let value = perf::closed_form_metric(metric, a, b, gthr, gb, delta, kx)
                    .map_err(anyhow::Error::new)?;
                Ok(vec![
                    k_label(kx),
                    plain(delta),
                    plain(db),
                    metric_name(metric).to_string(),
                    sci(value),
                    String::new(),
                ])
            })
            .collect()
    })?;
    let path = out_path(out_dir, "sweep", &scn.name)?;
    write_csv(&path, METRIC_HEADER, &rows?)?;
    Ok(path)
}
