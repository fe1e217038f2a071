//! Grid evaluation.

use std::collections::HashMap;
use std::time::Instant;

use dmrate_core::channel::{discretization_distribution, ec_cost, simulate_statistics, ChannelModel, ProtocolParams};
use dmrate_core::detector::{observables, NoiseMode, ObservableSet};
use dmrate_core::keyrate::{build_constraints, key_rate, KeyRateResult, PostprocessingMaps, SolverOptions};
use rayon::prelude::*;

use crate::config::ScanConfig;

/// Cutoff-stability threshold on the rate, bits per pulse.
pub const CUTOFF_STABILITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    NotConverged,
    /// The rate moved by at least `CUTOFF_STABILITY_TOL` when the cutoff was raised by two.
    CutoffUnstable,
    /// Summary row: the best amplitude of its group.
    BestAlpha,
    Error(String),
}

impl Status {
    pub fn as_string(&self) -> String {
        match self {
            Status::Ok => "ok".into(),
            Status::NotConverged => "not-converged".into(),
            Status::CutoffUnstable => "cutoff-unstable".into(),
            Status::BestAlpha => "best-alpha".into(),
            Status::Error(e) => format!("error: {e}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ok" => Status::Ok,
            "not-converged" => Status::NotConverged,
            "cutoff-unstable" => Status::CutoffUnstable,
            "best-alpha" => Status::BestAlpha,
            _ => Status::Error(s.strip_prefix("error: ")?.to_string()),
        })
    }

    /// Whether a solved row should make the scan exit unsuccessfully.
    pub fn is_failure(&self) -> bool {
        !matches!(self, Status::Ok | Status::BestAlpha)
    }
}

/// One solved grid point (or a best-amplitude summary). For unequal detector
/// arms `eta_d` and `nu_el` hold the first arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub l_km: f64,
    pub eta_t: f64,
    pub xi: f64,
    pub eta_d: f64,
    pub nu_el: f64,
    pub alpha: f64,
    pub delta_a: f64,
    pub mode: NoiseMode,
    pub primal: f64,
    pub lower_bound: f64,
    pub delta_ec: f64,
    pub p_pass: f64,
    pub rate: f64,
    pub iterations: usize,
    pub residual: f64,
    pub wall_time_s: f64,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    /// Record per-point wall time; off keeps the output byte-reproducible.
    pub timing: bool,
    /// Re-solve each point at cutoff + 2 and flag rate changes of
    /// `CUTOFF_STABILITY_TOL` or more.
    pub cutoff_check: bool,
}

/// Channel-independent operators for one `(mode, delta_a, cutoff)`.
pub struct Operators {
    pub observables: ObservableSet,
    pub maps: PostprocessingMaps,
}

type CacheKey = (NoiseMode, u64, usize);

fn cache_key(mode: NoiseMode, delta_a: f64, cutoff: usize) -> CacheKey {
    (mode, delta_a.to_bits(), cutoff)
}

/// Builds every operator set the scan needs, up front, so workers share them
/// read-only.
pub fn build_operator_cache(cfg: &ScanConfig, opts: &ScanOptions) -> HashMap<CacheKey, Result<Operators, String>> {
    let mut cutoffs = vec![cfg.cutoff];
    if opts.cutoff_check {
        cutoffs.push(cfg.cutoff + 2);
    }
    let mut keys = Vec::new();
    for &m in &cfg.modes {
        for &d in &cfg.delta_as {
            keys.extend(cutoffs.iter().map(|&n| (m, d, n)));
        }
    }
    keys.into_par_iter()
        .map(|(mode, delta_a, n)| {
            let ops = observables(mode, &cfg.detector, delta_a, n)
                .and_then(|obs| Ok(Operators { maps: PostprocessingMaps::new(&obs.regions)?, observables: obs }))
                .map_err(|e| e.to_string());
            (cache_key(mode, delta_a, n), ops)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct GridPoint {
    mode: NoiseMode,
    xi: f64,
    channel: ChannelModel,
    delta_a: f64,
    alpha: f64,
}

/// Grid points in output order: mode, xi, channel, delta_a, alpha (fastest).
fn grid(cfg: &ScanConfig) -> Vec<GridPoint> {
    let mut out = Vec::with_capacity(cfg.grid_size());
    for &mode in &cfg.modes {
        for &xi in &cfg.xis {
            for ch in &cfg.channels {
                for &delta_a in &cfg.delta_as {
                    for &alpha in &cfg.alphas {
                        out.push(GridPoint { mode, xi, channel: ChannelModel { xi, ..*ch }, delta_a, alpha });
                    }
                }
            }
        }
    }
    out
}

fn solve_point(cfg: &ScanConfig, p: &GridPoint, ops: &Operators, cutoff: usize) -> dmrate_core::Result<KeyRateResult> {
    let pp = ProtocolParams::new(p.alpha, p.delta_a, cfg.beta, cutoff)?;
    let stats = simulate_statistics(&p.channel, &cfg.detector, &pp);
    let cs = build_constraints(&stats, &ops.observables, &pp, p.mode)?;
    let ec = ec_cost(&discretization_distribution(&p.channel, &cfg.detector, &pp)?, cfg.beta)?;
    let opts = SolverOptions { gap_tol: cfg.gap_tol, max_iters: cfg.max_iters, ..SolverOptions::default() };
    key_rate(&cs, &ops.maps, &ec, &opts)
}

fn lookup<'a>(cache: &'a HashMap<CacheKey, Result<Operators, String>>, p: &GridPoint, n: usize) -> Result<&'a Operators, String> {
    match cache.get(&cache_key(p.mode, p.delta_a, n)) {
        Some(Ok(ops)) => Ok(ops),
        Some(Err(e)) => Err(e.clone()),
        None => Err(format!("no operators for cutoff {n}")),
    }
}

/// A solved grid point with the solver's full result when there is one.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub row: ResultRow,
    pub result: Option<KeyRateResult>,
}

fn evaluate(cfg: &ScanConfig, opts: &ScanOptions, cache: &HashMap<CacheKey, Result<Operators, String>>, p: &GridPoint) -> PointResult {
    let start = Instant::now();
    let mut row = ResultRow {
        l_km: p.channel.distance(),
        eta_t: p.channel.eta_t,
        xi: p.xi,
        eta_d: cfg.detector.eta1,
        nu_el: cfg.detector.nu1,
        alpha: p.alpha,
        delta_a: p.delta_a,
        mode: p.mode,
        primal: f64::NAN,
        lower_bound: f64::NAN,
        delta_ec: f64::NAN,
        p_pass: f64::NAN,
        rate: f64::NAN,
        iterations: 0,
        residual: f64::NAN,
        wall_time_s: 0.0,
        status: Status::Ok,
    };
    let result = lookup(cache, p, cfg.cutoff).and_then(|ops| solve_point(cfg, p, ops, cfg.cutoff).map_err(|e| e.to_string()));
    match &result {
        Ok(r) => {
            row.primal = r.primal_value;
            row.lower_bound = r.lower_bound;
            row.delta_ec = r.delta_ec;
            row.p_pass = r.p_pass;
            row.rate = r.rate;
            row.iterations = r.iterations;
            row.residual = r.constraint_residual;
            if !r.converged {
                row.status = Status::NotConverged;
            } else if opts.cutoff_check {
                let n = cfg.cutoff + 2;
                match lookup(cache, p, n).and_then(|ops| solve_point(cfg, p, ops, n).map_err(|e| e.to_string())) {
                    Ok(hi) if (hi.rate - r.rate).abs() < CUTOFF_STABILITY_TOL => {}
                    Ok(hi) => {
                        log::warn!("rate moved from {:.6e} to {:.6e} at cutoff {n}", r.rate, hi.rate);
                        row.status = Status::CutoffUnstable;
                    }
                    Err(e) => row.status = Status::Error(format!("cutoff check: {e}")),
                }
            }
        }
        Err(e) => row.status = Status::Error(e.clone()),
    }
    if opts.timing {
        row.wall_time_s = start.elapsed().as_secs_f64();
    }
    log::info!(
        "{} L={:.3} xi={} alpha={} delta_a={} rate={:.6e} iters={} [{}]",
        row.mode.as_str(),
        row.l_km,
        row.xi,
        row.alpha,
        row.delta_a,
        row.rate,
        row.iterations,
        row.status.as_string()
    );
    PointResult { row, result: result.ok() }
}

/// Solves every grid point and appends, after each amplitude sweep, a copy
/// of its highest-rate row marked `best-alpha`. Rows are in grid order
/// regardless of how many workers ran.
pub fn run_scan(cfg: &ScanConfig, opts: &ScanOptions) -> Vec<ResultRow> {
    let solved: Vec<ResultRow> = solve_grid(cfg, opts).into_iter().map(|p| p.row).collect();

    let mut rows = Vec::with_capacity(solved.len() + cfg.summary_rows());
    for group in solved.chunks(cfg.alphas.len()) {
        rows.extend_from_slice(group);
        if let Some(best) = best_alpha(group) {
            rows.push(ResultRow { status: Status::BestAlpha, ..best.clone() });
        }
    }
    rows
}

/// Solves every grid point, in grid order, without summary rows.
pub fn solve_grid(cfg: &ScanConfig, opts: &ScanOptions) -> Vec<PointResult> {
    let cache = build_operator_cache(cfg, opts);
    grid(cfg).par_iter().map(|p| evaluate(cfg, opts, &cache, p)).collect()
}

/// Highest-rate solved row; ties go to the earlier amplitude.
pub fn best_alpha(group: &[ResultRow]) -> Option<&ResultRow> {
    group
        .iter()
        .filter(|r| !matches!(r.status, Status::Error(_)) && r.rate.is_finite())
        .fold(None, |best: Option<&ResultRow>, r| match best {
            Some(b) if b.rate >= r.rate => Some(b),
            _ => Some(r),
        })
}

/// Runs the scan on a dedicated pool of `jobs` threads (all cores if `None`).
pub fn run_scan_with_jobs(cfg: &ScanConfig, opts: &ScanOptions, jobs: Option<usize>) -> Result<Vec<ResultRow>, rayon::ThreadPoolBuildError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    Ok(builder.build()?.install(|| run_scan(cfg, opts)))
}
