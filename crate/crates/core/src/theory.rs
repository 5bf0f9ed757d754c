//! Sample-count bounds for exact recovery, incoherence quantities and an
//! energy-based Tucker rank estimator.
//!
//! All logarithms are natural. The leading constants (`c` for the
//! incoherence bound, `C` for the robust bound) are left to the caller and
//! default to 1; the phase-transition harness calibrates an empirical `C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::matrix::Matrix;
use crate::sampling::SamplingMask;
use crate::solver::{hosvd_init, Ranks};
use crate::tensor::{DenseTensor3, Mode};

/// Inputs shared by both bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    /// Mode extents `(I₁, …, I_k)`, `k ≥ 3`.
    pub dims: Vec<usize>,
    /// Maximal Tucker rank.
    pub r: usize,
    /// Sparsity `‖𝓔‖₀`.
    pub s: usize,
    /// Confidence exponent β (failure probability `I^-β`).
    pub beta: f64,
    /// Leading constant.
    pub c: f64,
}

impl BoundInput {
    pub fn new(dims: Vec<usize>, r: usize, s: usize) -> Self {
        Self { dims, r, s, beta: 1.0, c: 1.0 }
    }

    /// `I = max_j I_j`.
    pub fn max_dim(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "bounds need order k >= 3, got {}",
                self.dims.len()
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidArgument("extents must be positive".into()));
        }
        if self.max_dim() < 2 {
            return Err(Error::InvalidArgument("largest extent must be at least 2".into()));
        }
        let min_dim = self.dims.iter().copied().min().unwrap_or(0);
        if self.r > min_dim {
            return Err(Error::InvalidArgument(format!("rank {} exceeds smallest extent {min_dim}", self.r)));
        }
        let total = self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if total.is_some_and(|t| self.s > t) {
            return Err(Error::InvalidArgument(format!("sparsity {} exceeds tensor size", self.s)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("constant must be positive, got {}", self.c)));
        }
        Ok(())
    }
}

/// Incoherence quantities of a low-rank tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncoherenceProfile {
    pub mu_star: f64,
    pub alpha_star: f64,
    pub lambda_star: f64,
    /// Effective rank.
    pub r_star: f64,
    /// Arithmetic mean of the extents.
    pub d: f64,
    /// Geometric mean of the extents.
    pub d_star: f64,
    /// Row-leverage coherence `(I_j/r_j)·maxᵢ‖P_j eᵢ‖²` of each factor.
    pub mode_coherence: Vec<f64>,
}

impl IncoherenceProfile {
    /// Profile with `μ_* = α_* = λ_* = 1` and the given dims/ranks geometry.
    pub fn unit(dims: &[usize], ranks: &[usize]) -> Result<Self> {
        let (d, d_star) = means(dims);
        Ok(Self {
            mu_star: 1.0,
            alpha_star: 1.0,
            lambda_star: 1.0,
            r_star: effective_rank(dims, ranks)?,
            d,
            d_star,
            mode_coherence: vec![1.0; dims.len()],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Bound {
    /// `⌈c(1+β)((μ_* + α_*²λ_*^{k-2}) r_*^{k-1} I log²I + α_* λ_*^{k/2-1} r_*^{(k-1)/2} I^{3/2} log²I)⌉`.
    pub bound: u64,
    /// `⌈(r I^{3/2} + r² I) log²I⌉`, the order-3 rate with all constants 1.
    pub simplified: u64,
}

fn ceil_count(x: f64) -> u64 {
    // Shave floating-point noise so exact integers do not round up.
    let rounded = x.round();
    if (x - rounded).abs() <= 1e-12 * x.abs().max(1.0) {
        rounded as u64
    } else {
        x.ceil() as u64
    }
}

/// Sample-count bound for exact completion by nuclear-norm minimization.
pub fn bound_theorem1(inp: &BoundInput, prof: &IncoherenceProfile) -> Result<Theorem1Bound> {
    inp.validate()?;
    if !(prof.r_star > 0.0 && prof.r_star.is_finite()) {
        return Err(Error::InvalidArgument(format!("effective rank must be positive, got {}", prof.r_star)));
    }
    for (name, v) in [("mu_star", prof.mu_star), ("alpha_star", prof.alpha_star), ("lambda_star", prof.lambda_star)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
        }
    }
    let k = inp.dims.len() as f64;
    let i = inp.max_dim() as f64;
    let log2 = i.ln().powi(2);
    let first = (prof.mu_star + prof.alpha_star.powi(2) * prof.lambda_star.powf(k - 2.0))
        * prof.r_star.powf(k - 1.0)
        * i
        * log2;
    let second = prof.alpha_star
        * prof.lambda_star.powf(k / 2.0 - 1.0)
        * prof.r_star.powf((k - 1.0) / 2.0)
        * i.powf(1.5)
        * log2;
    let bound = ceil_count(inp.c * (1.0 + inp.beta) * (first + second));
    let r = inp.r as f64;
    let simplified = ceil_count((r * i.powf(1.5) + r * r * i) * log2);
    Ok(Theorem1Bound { bound, simplified })
}

/// Sample-count bound for exact robust recovery, `⌈C (r I^{3/2} + s) log²I⌉`.
pub fn bound_theorem2(inp: &BoundInput) -> Result<u64> {
    inp.validate()?;
    Ok(ceil_count(inp.c * theorem2_rate(inp.r, inp.s, inp.max_dim())))
}

/// `(r I^{3/2} + s) log²I`: the robust bound with `C = 1` before rounding.
pub fn theorem2_rate(r: usize, s: usize, max_dim: usize) -> f64 {
    let i = max_dim as f64;
    (r as f64 * i.powf(1.5) + s as f64) * i.ln().powi(2)
}

fn means(dims: &[usize]) -> (f64, f64) {
    let k = dims.len() as f64;
    let d = dims.iter().map(|&x| x as f64).sum::<f64>() / k;
    let d_star = (dims.iter().map(|&x| (x as f64).ln()).sum::<f64>() / k).exp();
    (d, d_star)
}

/// `r_* = [ (1/(k d)) Σ_j (I_j / r_j) Π_ℓ r_ℓ ]^{1/(k−1)}`.
pub fn effective_rank(dims: &[usize], ranks: &[usize]) -> Result<f64> {
    if dims.len() != ranks.len() || dims.len() < 2 {
        return Err(Error::InvalidArgument("dims and ranks must have equal length >= 2".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::InvalidArgument("effective rank needs positive ranks".into()));
    }
    let k = dims.len() as f64;
    let (d, _) = means(dims);
    let prod: f64 = ranks.iter().map(|&r| r as f64).product();
    let sum: f64 = dims.iter().zip(ranks).map(|(&i, &r)| i as f64 / r as f64 * prod).sum();
    Ok((sum / (k * d)).powf(1.0 / (k - 1.0)))
}

/// Incoherence profile of `t` from its truncated HOSVD at `ranks`.
///
/// `μ_*` scans `‖Q_T(e_i ⊗ e_j ⊗ e_k)‖²` over every voxel, where `Q_T`
/// projects onto the tangent space of the Tucker manifold at the truncated
/// HOSVD. For a basis tensor that squared norm splits into orthogonal parts:
///
/// ```text
/// p₁(i)p₂(j)p₃(k) + Σₙ (1 − pₙ(iₙ)) · ‖Vₙᵀ (U_b[i_b,:] ⊗ U_a[i_a,:])‖²
/// ```
///
/// with `pₙ` the row leverages of `Uₙ` and `Vₙ` the row space of `𝒢₍ₙ₎`.
/// `α_*` uses `W₀ = 𝒞 ×₁ U₁ ×₂ U₂ ×₃ U₃` with `𝒞` the signs of the core's
/// superdiagonal, and is advisory only.
pub fn incoherence_profile(t: &DenseTensor3, ranks: Ranks) -> Result<IncoherenceProfile> {
    let dims = t.dims();
    let tf = hosvd_init(t, &SamplingMask::full(dims), ranks)?.factors;
    let u = &tf.factors;
    let (d, d_star) = means(&dims);
    let r_star = effective_rank(&dims, &ranks)?;

    let leverage: Vec<Vec<f64>> = u
        .iter()
        .map(|f| (0..f.rows()).map(|i| f.row(i).iter().map(|x| x * x).sum()).collect())
        .collect();
    let mode_coherence: Vec<f64> = (0..3)
        .map(|n| dims[n] as f64 / ranks[n] as f64 * leverage[n].iter().copied().fold(0.0, f64::max))
        .collect();
    let lambda_star = (0..3)
        .map(|n| mode_coherence[n] * ranks[n] as f64 / r_star)
        .fold(0.0, f64::max);

    // q[n][(a, b)]: energy of the pair of other-mode rows inside the row space of 𝒢₍ₙ₎.
    let mut q: Vec<Matrix> = Vec::with_capacity(3);
    for mode in Mode::ALL {
        let (a, b) = mode.others();
        let g_unf = tf.core.unfold(mode);
        let svd = thin_svd(&g_unf.transpose(), None)?;
        let smax = svd.s.first().copied().unwrap_or(0.0);
        let keep = svd.s.iter().filter(|&&s| s > smax * 1e-12 && s > 0.0).count();
        let basis = Matrix::from_fn(g_unf.cols(), keep, |i, j| svd.u.get(i, j));
        let mut table = Matrix::zeros(dims[a], dims[b]);
        for ia in 0..dims[a] {
            for ib in 0..dims[b] {
                let (ra, rb) = (u[a].row(ia), u[b].row(ib));
                let mut energy = 0.0;
                for col in 0..keep {
                    // Column index of 𝒢₍ₙ₎ is x_a + x_b · r_a.
                    let mut dot = 0.0;
                    for (xb, &vb) in rb.iter().enumerate() {
                        for (xa, &va) in ra.iter().enumerate() {
                            dot += basis.get(xa + xb * ra.len(), col) * va * vb;
                        }
                    }
                    energy += dot * dot;
                }
                table.set(ia, ib, energy);
            }
        }
        q.push(table);
    }

    let mut worst = 0.0f64;
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let (p1, p2, p3) = (leverage[0][i], leverage[1][j], leverage[2][k]);
                let v = p1 * p2 * p3
                    + (1.0 - p1) * q[0].get(j, k)
                    + (1.0 - p2) * q[1].get(i, k)
                    + (1.0 - p3) * q[2].get(i, j);
                worst = worst.max(v);
            }
        }
    }
    let volume: f64 = dims.iter().map(|&x| x as f64).product();
    let mu_star = volume / (3.0 * r_star * r_star * d) * worst;

    let diag = ranks.iter().copied().min().unwrap_or(0);
    let mut signs = DenseTensor3::zeros(ranks);
    for l in 0..diag {
        let g = tf.core.get(l, l, l);
        signs.set(l, l, l, if g < 0.0 { -1.0 } else { 1.0 });
    }
    let w0 = signs.multilinear([&u[0], &u[1], &u[2]])?;
    let alpha_star = (volume / r_star).sqrt() * w0.max_abs();

    Ok(IncoherenceProfile { mu_star, alpha_star, lambda_star, r_star, d, d_star, mode_coherence })
}

/// Smallest per-mode rank whose leading singular values of the unfolding
/// carry at least `energy` of its squared spectral mass. The zero tensor
/// has rank `(0, 0, 0)`.
pub fn estimate_rank(t: &DenseTensor3, energy: f64) -> Result<Ranks> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::InvalidArgument(format!("energy must be in (0, 1], got {energy}")));
    }
    let mut ranks = [0; 3];
    for mode in Mode::ALL {
        let svd = thin_svd(&t.unfold(mode), None)?;
        let squares: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
        let total: f64 = squares.iter().sum();
        if total == 0.0 {
            continue;
        }
        let mut cum = 0.0;
        let mut r = squares.len();
        for (idx, sq) in squares.iter().enumerate() {
            cum += sq;
            if cum >= energy * total {
                r = idx + 1;
                break;
            }
        }
        ranks[mode.axis()] = r;
    }
    Ok(ranks)
}

/// Comparison of an observation count against the robust bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoverabilityReport {
    pub observed: usize,
    pub bound: u64,
    /// `|Ω| − bound`.
    pub margin: i64,
    pub recoverable: bool,
}

/// Checks `|Ω| ≥ ⌈C (r I^{3/2} + s) log²I⌉` with `r = max(est_ranks)`.
pub fn check_recoverable(mask: &SamplingMask, est_ranks: Ranks, s_est: usize, c: f64) -> Result<RecoverabilityReport> {
    let dims = mask.dims();
    let r = est_ranks.iter().copied().max().unwrap_or(0);
    let inp = BoundInput { dims: dims.to_vec(), r, s: s_est, beta: 1.0, c };
    let bound = bound_theorem2(&inp)?;
    let margin = mask.len() as i64 - bound as i64;
    Ok(RecoverabilityReport { observed: mask.len(), bound, margin, recoverable: margin >= 0 })
}
