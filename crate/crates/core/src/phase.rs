//! Monte-Carlo sweep over sampling density and corruption level.
//!
//! Every (cell, trial) pair is an independent job: phantom, uniform mask,
//! corruption, solve, metrics. Jobs run on a rayon pool whose size is taken
//! from `TC_THREADS` when set; results are collected in grid order, so the
//! CSV does not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, SsimParams};
use crate::phantom::{gen_phantom, PhantomKind};
use crate::rng::derive_seed;
use crate::sampling::{corrupt, CorruptionSpec, SamplingMask};
use crate::solver::{solve, Ranks, SolverConfig};
use crate::tensor::Dims;
use crate::theory::{check_recoverable, theorem2_rate};

/// Fraction of trials in a cell that must succeed for the cell to count as
/// recovered.
pub const CELL_SUCCESS_RATE: f64 = 0.95;

pub const CSV_HEADER: &str =
    "sampling_fraction,sparse_fraction,sigma,trial,rel_error,psnr,ssim,converged,iterations,theorem2_margin";

fn default_threshold() -> f64 {
    1e-2
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub sampling_fractions: Vec<f64>,
    pub sparse_fractions: Vec<f64>,
    pub gaussian_sigmas: Vec<f64>,
    pub trials_per_cell: usize,
    pub seed_base: u64,
    /// Relative-error cutoff below which a trial counts as a success.
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    #[serde(default = "default_amplitude")]
    pub sparse_amplitude: f64,
    #[serde(default)]
    pub phantom: Option<PhantomKind>,
}

impl PhaseGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.sampling_fractions.is_empty() || self.sparse_fractions.is_empty() || self.gaussian_sigmas.is_empty() {
            return bad("grid lists must be nonempty".into());
        }
        if let Some(f) = self.sampling_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("sampling fraction {f} not in (0, 1]"));
        }
        if let Some(f) = self.sparse_fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return bad(format!("sparse fraction {f} not in [0, 1]"));
        }
        if let Some(s) = self.gaussian_sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return bad(format!("sigma {s} must be finite and >= 0"));
        }
        if self.trials_per_cell == 0 {
            return bad("trials_per_cell must be positive".into());
        }
        if !(self.success_threshold > 0.0) {
            return bad(format!("success_threshold must be positive, got {}", self.success_threshold));
        }
        Ok(())
    }

    /// Cells in output order: sampling fraction outermost, sigma innermost.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &sampling_fraction in &self.sampling_fractions {
            for &sparse_fraction in &self.sparse_fractions {
                for &sigma in &self.gaussian_sigmas {
                    out.push(Cell { sampling_fraction, sparse_fraction, sigma });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub sampling_fraction: f64,
    pub sparse_fraction: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRow {
    pub cell: Cell,
    pub trial: usize,
    /// NaN when the solve failed.
    pub rel_error: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub converged: bool,
    pub iterations: usize,
    pub theorem2_margin: i64,
    pub error: Option<String>,
}

impl PhaseRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.cell.sampling_fraction,
            self.cell.sparse_fraction,
            self.cell.sigma,
            self.trial,
            self.rel_error,
            self.psnr,
            self.ssim,
            self.converged,
            self.iterations,
            self.theorem2_margin
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub observed: usize,
    pub outliers: usize,
    pub success_rate: f64,
    /// `|Ω| / ((r I^{3/2} + s) log²I)`: the constant at which this cell sits
    /// exactly on the robust bound.
    pub critical_c: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseSummary {
    pub cells: Vec<CellSummary>,
    /// Smallest C whose bound verdict agrees with every failing cell; `None`
    /// when no cell reaches the success rate.
    pub c_emp: Option<f64>,
    /// Recovered cells that the bound at `c_emp` still calls unrecoverable.
    pub mismatches: usize,
    pub failed_solves: usize,
}

#[derive(Clone, Debug)]
pub struct PhaseResult {
    pub rows: Vec<PhaseRow>,
    pub summary: PhaseSummary,
}

impl PhaseResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv());
            out.push('\n');
        }
        out
    }
}

fn observed_count(dims: Dims, fraction: f64) -> usize {
    let total: usize = dims.iter().product();
    ((fraction * total as f64).round() as usize).clamp(1, total)
}

fn outlier_count(observed: usize, sparse_fraction: f64) -> usize {
    (sparse_fraction * observed as f64).round() as usize
}

fn run_trial(
    grid: &PhaseGrid,
    dims: Dims,
    ranks: Ranks,
    config: &SolverConfig,
    cell_index: usize,
    cell: Cell,
    trial: usize,
) -> PhaseRow {
    let trial_seed = derive_seed(grid.seed_base, trial as u64);
    let observed = observed_count(dims, cell.sampling_fraction);
    let outliers = outlier_count(observed, cell.sparse_fraction);
    let mut row = PhaseRow {
        cell,
        trial,
        rel_error: f64::NAN,
        psnr: f64::NAN,
        ssim: f64::NAN,
        converged: false,
        iterations: 0,
        theorem2_margin: 0,
        error: None,
    };
    let mut attempt = || -> Result<()> {
        let x = gen_phantom(dims, ranks, grid.phantom.unwrap_or(PhantomKind::LowRank), trial_seed)?;
        let mask = SamplingMask::uniform(dims, observed, derive_seed(trial_seed, 2 * cell_index as u64 + 1))?;
        row.theorem2_margin = check_recoverable(&mask, ranks, outliers, 1.0)?.margin;
        let spec = CorruptionSpec {
            sparse_fraction: cell.sparse_fraction,
            sparse_amplitude: grid.sparse_amplitude,
            gaussian_sigma: cell.sigma,
            seed: derive_seed(trial_seed, 2 * cell_index as u64 + 2),
        };
        let (y, _) = corrupt(&x, &spec, &mask)?;
        let report = solve(&y, &mask, config)?;
        row.rel_error = report.x_hat.sub(&x)?.frobenius_norm() / x.frobenius_norm();
        row.psnr = psnr(&report.x_hat, &x, 1.0)?;
        row.ssim = ssim(&report.x_hat, &x, &SsimParams::default())?;
        row.converged = report.converged;
        row.iterations = report.iterations;
        Ok(())
    };
    if let Err(e) = attempt() {
        row.error = Some(e.to_string());
    }
    row
}

/// Number of worker threads requested through `TC_THREADS` (0 = rayon default).
pub fn thread_limit() -> Result<usize> {
    match std::env::var("TC_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("TC_THREADS must be a nonnegative integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

pub fn run_phase(grid: &PhaseGrid, dims: Dims, ranks: Ranks, config: &SolverConfig) -> Result<PhaseResult> {
    grid.validate()?;
    config.validate(dims)?;
    if config.ranks != ranks {
        return Err(Error::InvalidArgument(format!(
            "solver ranks {:?} differ from phantom ranks {:?}",
            config.ranks, ranks
        )));
    }
    let cells = grid.cells();
    let jobs: Vec<(usize, Cell, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, &c)| (0..grid.trials_per_cell).map(move |t| (ci, c, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_limit()?)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows: Vec<PhaseRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, c, t)| run_trial(grid, dims, ranks, config, ci, c, t))
            .collect()
    });
    let summary = summarize(grid, dims, ranks, &cells, &rows);
    Ok(PhaseResult { rows, summary })
}

fn summarize(grid: &PhaseGrid, dims: Dims, ranks: Ranks, cells: &[Cell], rows: &[PhaseRow]) -> PhaseSummary {
    let r = ranks.iter().copied().max().unwrap_or(0);
    let max_dim = dims.iter().copied().max().unwrap_or(0);
    let per_cell = grid.trials_per_cell;
    let summaries: Vec<CellSummary> = cells
        .iter()
        .enumerate()
        .map(|(ci, &cell)| {
            let trials = &rows[ci * per_cell..(ci + 1) * per_cell];
            let wins = trials.iter().filter(|row| row.rel_error < grid.success_threshold).count();
            let observed = observed_count(dims, cell.sampling_fraction);
            let outliers = outlier_count(observed, cell.sparse_fraction);
            CellSummary {
                cell,
                observed,
                outliers,
                success_rate: wins as f64 / per_cell as f64,
                critical_c: observed as f64 / theorem2_rate(r, outliers, max_dim),
            }
        })
        .collect();
    let (c_emp, mismatches) = calibrate(&summaries);
    PhaseSummary {
        cells: summaries,
        c_emp,
        mismatches,
        failed_solves: rows.iter().filter(|row| row.error.is_some()).count(),
    }
}

/// A cell is predicted recoverable when `C ≤ critical_c`. The smallest C that
/// rejects every failing cell is the largest failing `critical_c`.
fn calibrate(cells: &[CellSummary]) -> (Option<f64>, usize) {
    let recovered = |c: &&CellSummary| c.success_rate >= CELL_SUCCESS_RATE;
    if !cells.iter().any(|c| recovered(&c)) {
        return (None, 0);
    }
    let c_emp = cells
        .iter()
        .filter(|c| !recovered(c))
        .map(|c| c.critical_c)
        .fold(0.0, f64::max);
    let mismatches = cells.iter().filter(recovered).filter(|c| c.critical_c <= c_emp).count();
    (Some(c_emp), mismatches)
}
