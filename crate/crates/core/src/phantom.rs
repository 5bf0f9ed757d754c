//! Synthetic ground-truth volumes with exactly known Tucker rank.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SeededRng;
use crate::solver::{hosvd_init, Ranks};
use crate::sampling::SamplingMask;
use crate::tensor::{DenseTensor3, Dims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    /// Smooth random orthonormal factors and a random core, lifted to be nonnegative.
    LowRank,
    /// Smooth ellipsoidal shells compressed to the requested ranks.
    Membrane,
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::LowRank => "lowrank",
            PhantomKind::Membrane => "membrane",
        })
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowrank" => Ok(PhantomKind::LowRank),
            "membrane" => Ok(PhantomKind::Membrane),
            _ => Err(Error::Parse(format!("unknown phantom kind {s:?}"))),
        }
    }
}

pub fn gen_phantom(dims: Dims, ranks: Ranks, kind: PhantomKind, seed: u64) -> Result<DenseTensor3> {
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("extents must be positive, got {dims:?}")));
    }
    for n in 0..3 {
        if ranks[n] == 0 || ranks[n] > dims[n] {
            return Err(Error::InvalidArgument(format!("ranks {ranks:?} must be within dims {dims:?}")));
        }
    }
    let mut rng = SeededRng::new(seed);
    match kind {
        PhantomKind::LowRank => Ok(lowrank(dims, ranks, &mut rng)),
        PhantomKind::Membrane => membrane(dims, ranks, &mut rng),
    }
}

/// Random mixture of the cosines `cos(π f (i + ½) / n)` for `f = 1..=fmax`.
/// Each is orthogonal to the constant vector.
fn cosine_mixture(n: usize, fmax: usize, rng: &mut SeededRng) -> Vec<f64> {
    let weights: Vec<f64> = (1..=fmax).map(|_| rng.normal()).collect();
    (0..n)
        .map(|i| {
            weights
                .iter()
                .enumerate()
                .map(|(f, w)| w * (PI * (f + 1) as f64 * (i as f64 + 0.5) / n as f64).cos())
                .sum()
        })
        .collect()
}

/// Orthonormal `n x r` factor with a positive first column and smooth
/// random columns after it, orthonormalized by Gram–Schmidt in order.
///
/// For `r > 1` the first column is constant. For `r = 1` it is a positive
/// profile `1 + 0.3 p / max|p|`; every term of the tensor shares it, so its
/// shape does not change how large the offset has to be.
fn smooth_factor(n: usize, r: usize, rng: &mut SeededRng) -> Matrix {
    let fmax = r.max(2).min(n - 1);
    let p = cosine_mixture(n, fmax, rng);
    let peak = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let amp = if r == 1 && peak > 0.0 { 0.3 / peak } else { 0.0 };
    let lead: Vec<f64> = p.iter().map(|v| 1.0 + amp * v).collect();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    for mut w in std::iter::once(lead).chain((1..r).map(|_| cosine_mixture(n, fmax, rng))) {
        for _ in 0..2 {
            for c in &cols {
                let proj: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
                for (wi, ci) in w.iter_mut().zip(c) {
                    *wi -= proj * ci;
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(w.into_iter().map(|x| x / norm).collect());
    }
    Matrix::from_columns(&cols).expect("equal column lengths")
}

/// `𝒢 ×₁ U₁ ×₂ U₂ ×₃ U₃` with smooth factors. The core has random ±1 on the
/// superdiagonal and `N(0, 0.01)` elsewhere, so every mode keeps a visible
/// share of the energy once the volume is made nonnegative. The leading entry
/// is then raised until every voxel is nonnegative (with a 5% margin) and the
/// result is scaled to max 1. Only multiplicative rescaling is used, so the
/// Tucker rank is preserved.
fn lowrank(dims: Dims, ranks: Ranks, rng: &mut SeededRng) -> DenseTensor3 {
    let factors = [
        smooth_factor(dims[0], ranks[0], rng),
        smooth_factor(dims[1], ranks[1], rng),
        smooth_factor(dims[2], ranks[2], rng),
    ];
    let mut core = DenseTensor3::from_fn(ranks, |i, j, k| if i == j && j == k { rng.sign() } else { 0.1 * rng.normal() });
    core.set(0, 0, 0, 0.0);
    let rest = core.multilinear([&factors[0], &factors[1], &factors[2]]).expect("shapes");
    let lead = DenseTensor3::from_fn(dims, |i, j, k| {
        factors[0].get(i, 0) * factors[1].get(j, 0) * factors[2].get(k, 0)
    });
    let needed = rest
        .as_slice()
        .iter()
        .zip(lead.as_slice())
        .map(|(r, l)| -r / l)
        .fold(0.0f64, f64::max);
    let g0 = if core.frobenius_norm() > 0.0 { 1.05 * needed } else { 1.0 };
    let x = rest.zip_map(&lead, |r, l| r + g0 * l).expect("same dims");
    let peak = x.max_abs();
    x.scale(1.0 / peak)
}

/// Smooth shells around random ellipsoids, compressed to `ranks` by truncated
/// HOSVD and scaled so the peak magnitude is 1. Small negative undershoot
/// from the truncation is kept to preserve the exact rank.
fn membrane(dims: Dims, ranks: Ranks, rng: &mut SeededRng) -> Result<DenseTensor3> {
    let cells = 3;
    let shells: Vec<([f64; 3], [f64; 3])> = (0..cells)
        .map(|_| {
            let center = [0.3 + 0.4 * rng.uniform(), 0.3 + 0.4 * rng.uniform(), 0.3 + 0.4 * rng.uniform()];
            let radii = [0.15 + 0.15 * rng.uniform(), 0.15 + 0.15 * rng.uniform(), 0.15 + 0.15 * rng.uniform()];
            (center, radii)
        })
        .collect();
    let width = 0.06;
    let raw = DenseTensor3::from_fn(dims, |i, j, k| {
        let p = [
            (i as f64 + 0.5) / dims[0] as f64,
            (j as f64 + 0.5) / dims[1] as f64,
            (k as f64 + 0.5) / dims[2] as f64,
        ];
        shells
            .iter()
            .map(|(c, r)| {
                let rho = (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>().sqrt();
                let mean_r = (r[0] + r[1] + r[2]) / 3.0;
                let d = (rho - 1.0) * mean_r;
                (-0.5 * (d / width).powi(2)).exp()
            })
            .fold(0.0, f64::max)
    });
    let tf = hosvd_init(&raw, &SamplingMask::full(dims), ranks)?.factors;
    let x = tf.reconstruct()?;
    let peak = x.max_abs();
    if peak == 0.0 {
        return Ok(x);
    }
    Ok(x.scale(1.0 / peak))
}
