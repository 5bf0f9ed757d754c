use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use tensor_completion::io::{self, Dtype, VolumeHeader};
use tensor_completion::metrics::{self, evaluate};
use tensor_completion::phantom::{gen_phantom, PhantomKind};
use tensor_completion::phase::{run_phase, PhaseGrid};
use tensor_completion::solver::trace_csv;
use tensor_completion::theory::{
    bound_theorem1, bound_theorem2, effective_rank, estimate_rank, BoundInput, IncoherenceProfile,
};
use tensor_completion::{corrupt, solve, CorruptionSpec, DenseTensor3, Error, Result, SamplingMask, SolverConfig};

#[derive(Parser)]
#[command(name = "tc", version, about = "Robust Tucker completion of 3D volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom volume.
    Gen {
        #[arg(long, value_parser = parse_triple)]
        dims: [usize; 3],
        #[arg(long, value_parser = parse_triple)]
        ranks: [usize; 3],
        #[arg(long, default_value = "lowrank")]
        kind: PhantomKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DtypeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a sampling mask.
    Mask {
        #[arg(long, value_parser = parse_triple)]
        dims: [usize; 3],
        #[arg(long, value_enum)]
        law: LawArg,
        /// Number of observed voxels (uniform law).
        #[arg(long)]
        n: Option<usize>,
        /// Plane spacing along the third axis (zslice law).
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt a clean volume on a mask; writes observations and the outlier tensor.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sparse_frac: f64,
        #[arg(long, default_value_t = 1.0)]
        amp: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_y: PathBuf,
        #[arg(long)]
        out_e: PathBuf,
    },
    /// Run the completion solver; prints a JSON report.
    Solve {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_parser = parse_triple)]
        ranks: [usize; 3],
        /// Defaults to 1/sqrt(max dim).
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long)]
        core_weight: Option<f64>,
        #[arg(long)]
        nonneg: bool,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out_x: PathBuf,
        #[arg(long)]
        out_e: PathBuf,
    },
    /// Compare a volume with a reference; prints `volume_id,psnr_db,ssim,nrmse`.
    Eval {
        #[arg(long)]
        x: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        header: bool,
    },
    /// Evaluate a sample-count bound.
    Bound {
        #[arg(long, value_parser = ["1", "2"])]
        theorem: String,
        #[arg(long, value_parser = parse_extents)]
        dims: Extents,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        sparsity: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Effective rank; defaults to the value implied by dims and rank.
        #[arg(long)]
        r_star: Option<f64>,
        /// Observation count to report a margin against.
        #[arg(long)]
        observed: Option<u64>,
    },
    /// Sweep sampling and corruption levels; writes a CSV and prints a summary.
    Phase {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, value_parser = parse_triple)]
        dims: [usize; 3],
        #[arg(long, value_parser = parse_triple)]
        ranks: [usize; 3],
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
    },
    /// Estimate the Tucker rank of a volume by spectral energy.
    Rank {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        energy: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawArg {
    Uniform,
    Zslice,
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

/// Comma-separated extents of any order.
#[derive(Clone)]
struct Extents(Vec<usize>);

fn parse_extents(s: &str) -> std::result::Result<Extents, String> {
    parse_list(s).map(Extents)
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let v = parse_list(s)?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected three comma-separated values, got {}", v.len()))
}

fn solver_config(dims: [usize; 3], ranks: [usize; 3], lambda1: Option<f64>, rho: f64, tol: f64, max_iters: usize) -> SolverConfig {
    let base = SolverConfig::for_dims(dims, ranks);
    SolverConfig { lambda1: lambda1.unwrap_or(base.lambda1), rho, rel_tol: tol, max_iters, ..base }
}

fn write_like(path: &Path, t: &DenseTensor3, scale: [f64; 2]) -> Result<()> {
    io::write_volume(path, t, &VolumeHeader { scale, ..VolumeHeader::new(t.dims(), Dtype::F64) })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { dims, ranks, kind, seed, dtype, out } => {
            let t = gen_phantom(dims, ranks, kind, seed)?;
            let dtype = match dtype {
                DtypeArg::F32 => Dtype::F32,
                DtypeArg::F64 => Dtype::F64,
            };
            io::write_volume(&out, &t, &VolumeHeader::new(dims, dtype))
        }
        Command::Mask { dims, law, n, stride, offset, seed, out } => {
            let mask = match law {
                LawArg::Uniform => {
                    let n = n.ok_or_else(|| Error::InvalidArgument("--n is required for the uniform law".into()))?;
                    SamplingMask::uniform(dims, n, seed)?
                }
                LawArg::Zslice => {
                    let stride =
                        stride.ok_or_else(|| Error::InvalidArgument("--stride is required for the zslice law".into()))?;
                    SamplingMask::z_slices(dims, stride, offset)?
                }
            };
            io::write_mask(&out, &mask)
        }
        Command::Corrupt { input, mask, sparse_frac, amp, sigma, seed, out_y, out_e } => {
            let (t, scale) = io::ingest(&input)?;
            let mask = io::read_mask(&mask)?;
            let spec = CorruptionSpec { sparse_fraction: sparse_frac, sparse_amplitude: amp, gaussian_sigma: sigma, seed };
            let (y, e) = corrupt(&t, &spec, &mask)?;
            write_like(&out_y, &y, scale)?;
            write_like(&out_e, &e, scale)
        }
        Command::Solve { y, mask, ranks, lambda1, rho, tol, max_iters, core_weight, nonneg, trace, out_x, out_e } => {
            let (y, header) = io::read_volume(&y)?;
            let mask = io::read_mask(&mask)?;
            let mut config = solver_config(y.dims(), ranks, lambda1, rho, tol, max_iters);
            config.nonneg = nonneg;
            if let Some(w) = core_weight {
                config.core_weight = w;
            }
            let report = solve(&y, &mask, &config)?;
            if let Some(path) = trace {
                io::write_atomic(&path, trace_csv(&report.residual_history).as_bytes())?;
            }
            write_like(&out_x, &report.x_hat, header.scale)?;
            write_like(&out_e, &report.e_hat, header.scale)?;
            println!("{}", serde_json::to_string(&report.summary(mask.len()))?);
            Ok(())
        }
        Command::Eval { x, reference, peak, id, header } => {
            let (x_t, _) = io::read_volume(&x)?;
            let (r_t, _) = io::read_volume(&reference)?;
            let report = evaluate(&x_t, &r_t, peak, false)?;
            let id = id.unwrap_or_else(|| {
                x.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            if header {
                println!("{}", metrics::CSV_HEADER);
            }
            println!("{}", metrics::csv_row(&id, &report));
            Ok(())
        }
        Command::Bound { theorem, dims: Extents(dims), rank, sparsity, beta, c, mu, alpha, lambda, r_star, observed } => {
            let inp = BoundInput { dims: dims.clone(), r: rank, s: sparsity, beta, c };
            let mut out = json!({ "theorem": theorem.parse::<u8>().expect("validated by clap"), "inputs": inp });
            let bound = if theorem == "1" {
                inp.validate()?;
                let r_star = match r_star {
                    Some(v) => v,
                    None => effective_rank(&dims, &vec![rank; dims.len()])?,
                };
                let prof = IncoherenceProfile {
                    mu_star: mu,
                    alpha_star: alpha,
                    lambda_star: lambda,
                    r_star,
                    ..IncoherenceProfile::unit(&dims, &vec![rank.max(1); dims.len()])?
                };
                let b = bound_theorem1(&inp, &prof)?;
                out["simplified"] = json!(b.simplified);
                b.bound
            } else {
                bound_theorem2(&inp)?
            };
            out["bound"] = json!(bound);
            out["margin"] = json!(observed.map(|n| n as i64 - bound as i64));
            println!("{out}");
            Ok(())
        }
        Command::Phase { grid, dims, ranks, out, lambda1, rho, tol, max_iters } => {
            let grid: PhaseGrid = serde_json::from_slice(&std::fs::read(&grid)?)?;
            let config = solver_config(dims, ranks, lambda1, rho, tol, max_iters);
            let result = run_phase(&grid, dims, ranks, &config)?;
            io::write_atomic(&out, result.to_csv().as_bytes())?;
            let s = &result.summary;
            println!(
                "{}",
                json!({
                    "rows": result.rows.len(),
                    "c_emp": s.c_emp,
                    "mismatches": s.mismatches,
                    "failed_solves": s.failed_solves,
                    "cells": s.cells,
                })
            );
            Ok(())
        }
        Command::Rank { input, energy } => {
            let (t, _) = io::read_volume(&input)?;
            println!("{}", json!({ "ranks": estimate_rank(&t, energy)? }));
            Ok(())
        }
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string().replace('\n', " ")),
    }
}
