//! Robust Tucker completion by ADMM.
//!
//! Solves
//!
//! ```text
//! min  (γ/2)‖𝒢‖²_F + λ₁‖𝓔‖₁   s.t.  P_Ω(𝒢 ×₁ U₁ ×₂ U₂ ×₃ U₃ + 𝓔) = P_Ω(𝒴),  UₙᵀUₙ = I
//! ```
//!
//! with a scaled dual `Λ` supported on Ω. After a truncated-HOSVD warm start
//! each iteration runs, in order:
//!
//! 1. core: ridge least squares on the observed entries against
//!    `Ξ = P_Ω(𝒴 − 𝓔 − Λ)`;
//! 2. factors, modes 1, 2, 3 in turn: Procrustes projection of
//!    `T₍ₙ₎(U ⊗ U)𝒢₍ₙ₎ᵀ`, where `T = Ξ − ρ⁻¹Λ` on Ω and the current model
//!    value off Ω;
//! 3. reconstruction `𝒵 = 𝒢 ×₁ U₁ ×₂ U₂ ×₃ U₃` (clamped at zero when `nonneg`);
//! 4. sparse part: soft threshold of `𝒴 − 𝒵 − Λ` at `λ₁/ρ` on Ω;
//! 5. dual: `Λ += P_Ω(𝒵 + 𝓔 − 𝒴)`.
//!
//! Iteration stops once `‖𝒵 − 𝒵_prev‖_F / ‖𝒵_prev‖_F < rel_tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, procrustes, ridge_solve, thin_svd};
use crate::matrix::Matrix;
use crate::sampling::SamplingMask;
use crate::tensor::{DenseTensor3, Dims, Mode};

/// Guard for the relative-change denominator at the zero tensor.
pub const REL_CHANGE_EPS: f64 = 1e-30;
/// Above this many core coefficients the core system is solved by CG.
pub const DIRECT_CORE_LIMIT: usize = 4096;
/// Relative residual target for the CG core solve.
pub const CG_REL_TOL: f64 = 1e-8;

pub type Ranks = [usize; 3];

/// Core tensor and column-orthonormal factor matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerFactors {
    pub core: DenseTensor3,
    pub factors: [Matrix; 3],
}

impl TuckerFactors {
    pub fn ranks(&self) -> Ranks {
        self.core.dims()
    }

    pub fn dims(&self) -> Dims {
        [self.factors[0].rows(), self.factors[1].rows(), self.factors[2].rows()]
    }

    /// `𝒢 ×₁ U₁ ×₂ U₂ ×₃ U₃`.
    pub fn reconstruct(&self) -> Result<DenseTensor3> {
        self.core.multilinear([&self.factors[0], &self.factors[1], &self.factors[2]])
    }

    /// Worst entrywise `|UₙᵀUₙ − I|` over the three factors.
    pub fn orthonormality_error(&self) -> f64 {
        self.factors.iter().map(Matrix::orthonormality_error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub ranks: Ranks,
    /// Sparsity weight λ₁.
    pub lambda1: f64,
    /// Penalty ρ.
    pub rho: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Clamp the reconstruction at zero.
    pub nonneg: bool,
    /// Keep a full snapshot of every iterate.
    pub record_trajectory: bool,
    /// Weight γ of the core regularizer `(γ/2)‖𝒢‖²_F`.
    pub core_weight: f64,
}

impl SolverConfig {
    /// Defaults for a volume of the given dims: λ₁ = 1/√max(dims), ρ = 1.
    pub fn for_dims(dims: Dims, ranks: Ranks) -> Self {
        let max_dim = *dims.iter().max().expect("three dims") as f64;
        Self {
            ranks,
            lambda1: 1.0 / max_dim.sqrt(),
            rho: 1.0,
            max_iters: 500,
            rel_tol: 1e-5,
            nonneg: false,
            record_trajectory: false,
            core_weight: DEFAULT_CORE_WEIGHT,
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lambda1", self.lambda1)?;
        positive("rho", self.rho)?;
        positive("rel_tol", self.rel_tol)?;
        positive("core_weight", self.core_weight)?;
        for n in 0..3 {
            if self.ranks[n] == 0 || self.ranks[n] > dims[n] {
                return Err(Error::InvalidArgument(format!(
                    "rank {} of mode {} must be in 1..={}",
                    self.ranks[n],
                    n + 1,
                    dims[n]
                )));
            }
        }
        Ok(())
    }
}

/// Default core weight γ. Small enough that the data term dominates: the
/// fixed point satisfies `‖𝒢‖_F ≤ (λ₁/γ)·√|Ω|`, so a unit weight caps the
/// recoverable signal energy.
pub const DEFAULT_CORE_WEIGHT: f64 = 1e-3;

/// One ADMM iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub z: DenseTensor3,
    pub e: DenseTensor3,
    pub dual: DenseTensor3,
    pub factors: TuckerFactors,
    pub iter: usize,
    pub primal_residual: f64,
    /// `NaN` for the warm start, which has no predecessor.
    pub rel_change: f64,
}

/// Per-iteration bookkeeping, including the warm start as iteration 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub fro_x: f64,
    pub l1_e: f64,
    pub primal_residual: f64,
    pub rel_change: f64,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x_hat: DenseTensor3,
    pub e_hat: DenseTensor3,
    pub factors: TuckerFactors,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<IterationRecord>,
    pub trajectory: Option<Vec<SolverState>>,
    /// Set when nonnegativity clamping changed an entry of the final iterate.
    pub clamped: bool,
    /// Number of Procrustes/HOSVD projections that hit a rank-deficient input.
    pub rank_deficient_updates: usize,
    pub config: SolverConfig,
}

/// JSON view of a report: config echo, convergence flags and history.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config: SolverConfig,
    pub dims: Dims,
    pub observed: usize,
    pub iterations: usize,
    pub converged: bool,
    pub clamped: bool,
    pub rank_deficient_updates: usize,
    pub final_primal_residual: f64,
    pub final_rel_change: f64,
    pub residual_history: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn summary(&self, observed: usize) -> ReportSummary {
        let last = self.residual_history.last().expect("history is never empty");
        ReportSummary {
            config: self.config.clone(),
            dims: self.x_hat.dims(),
            observed,
            iterations: self.iterations,
            converged: self.converged,
            clamped: self.clamped,
            rank_deficient_updates: self.rank_deficient_updates,
            final_primal_residual: last.primal_residual,
            final_rel_change: last.rel_change,
            residual_history: self.residual_history.clone(),
        }
    }
}

/// Warm start from the truncated HOSVD of the zero-filled observations.
#[derive(Clone, Debug)]
pub struct HosvdInit {
    pub factors: TuckerFactors,
    /// Some unfolding had numerical rank below the requested rank; the
    /// missing directions were completed deterministically.
    pub rank_deficient: bool,
}

pub fn hosvd_init(y_obs: &DenseTensor3, mask: &SamplingMask, ranks: Ranks) -> Result<HosvdInit> {
    let dims = y_obs.dims();
    for n in 0..3 {
        if ranks[n] == 0 || ranks[n] > dims[n] {
            return Err(Error::InvalidArgument(format!("rank {ranks:?} exceeds dims {dims:?}")));
        }
    }
    let observed = mask.project(y_obs)?;
    let mut rank_deficient = false;
    let mut factors = Vec::with_capacity(3);
    for mode in Mode::ALL {
        let r = ranks[mode.axis()];
        let svd = thin_svd(&observed.unfold(mode), Some(r))?;
        rank_deficient |= svd.deficient > 0;
        factors.push(svd.u);
    }
    let factors: [Matrix; 3] = factors.try_into().expect("three factors");
    let core = observed.multilinear_transpose([&factors[0], &factors[1], &factors[2]])?;
    Ok(HosvdInit { factors: TuckerFactors { core, factors }, rank_deficient })
}

/// Observation data shared by all update steps.
struct Problem<'a> {
    y: &'a DenseTensor3,
    mask: &'a SamplingMask,
    observed: Vec<bool>,
    config: &'a SolverConfig,
}

impl<'a> Problem<'a> {
    fn new(y: &'a DenseTensor3, mask: &'a SamplingMask, config: &'a SolverConfig) -> Self {
        Self { y, mask, observed: mask.bitmap(), config }
    }
}

impl Problem<'_> {
    /// `Ξ = P_Ω(𝒴 − 𝓔 − Λ)`.
    fn xi(&self, e: &DenseTensor3, dual: &DenseTensor3) -> DenseTensor3 {
        let mut out = DenseTensor3::zeros(self.y.dims());
        let (y, e, l, o) = (self.y.as_slice(), e.as_slice(), dual.as_slice(), out.as_mut_slice());
        for &i in self.mask.indices() {
            o[i] = y[i] - e[i] - l[i];
        }
        out
    }
}

/// Core update: minimizer of `(γ/2)‖𝒢‖² + (ρ/2)‖P_Ω(𝒢×U + 𝓔 − 𝒴 + Λ)‖²`.
///
/// The normal equations `(γ/ρ·I + A) g = b` live in the `r₁r₂r₃` coefficient
/// space, with `A = Σ_{ω∈Ω} φ_ω φ_ωᵀ` and `φ_ω = U₁[i,:] ⊗ U₂[j,:] ⊗ U₃[k,:]`.
pub fn update_core(
    state: &SolverState,
    y: &DenseTensor3,
    mask: &SamplingMask,
    config: &SolverConfig,
) -> Result<DenseTensor3> {
    let problem = Problem::new(y, mask, config);
    core_step(&problem, &state.factors.factors, &state.e, &state.dual)
}

fn core_step(p: &Problem<'_>, u: &[Matrix; 3], e: &DenseTensor3, dual: &DenseTensor3) -> Result<DenseTensor3> {
    let ranks = [u[0].cols(), u[1].cols(), u[2].cols()];
    let r_total: usize = ranks.iter().product();
    let xi = p.xi(e, dual);
    let rhs = xi.multilinear_transpose([&u[0], &u[1], &u[2]])?;
    let mu = p.config.core_weight / p.config.rho;

    if r_total > DIRECT_CORE_LIMIT {
        let apply = |g: &[f64]| {
            let core = DenseTensor3::from_raw(ranks, g.to_vec());
            let full = core.multilinear([&u[0], &u[1], &u[2]]).expect("consistent shapes");
            let masked = p.mask.project(&full).expect("mask dims");
            let back = masked.multilinear_transpose([&u[0], &u[1], &u[2]]).expect("consistent shapes");
            back.as_slice().iter().zip(g).map(|(a, gi)| a + mu * gi).collect::<Vec<_>>()
        };
        let (g, _) = conjugate_gradient(apply, rhs.as_slice(), None, CG_REL_TOL, 10 * r_total)?;
        return Ok(DenseTensor3::from_raw(ranks, g));
    }

    let gram = masked_gram(p.mask, u, ranks)?;
    let b = Matrix::new(r_total, 1, rhs.into_vec())?;
    let g = ridge_solve(&gram, &b, mu)?;
    Ok(DenseTensor3::from_raw(ranks, g.into_vec()))
}

/// `Σ_{ω∈Ω} φ_ω φ_ωᵀ` with `φ` ordered like the row-major core.
fn masked_gram(mask: &SamplingMask, u: &[Matrix; 3], ranks: Ranks) -> Result<Matrix> {
    let [r1, r2, r3] = ranks;
    let r_total = r1 * r2 * r3;
    let dims = mask.dims();
    let mut acc = vec![0.0; r_total * r_total];
    let mut phi = vec![0.0; r_total];
    for &lin in mask.indices() {
        let k = lin % dims[2];
        let rest = lin / dims[2];
        let (i, j) = (rest / dims[1], rest % dims[1]);
        let (a, b, c) = (u[0].row(i), u[1].row(j), u[2].row(k));
        let mut idx = 0;
        for &x in a {
            for &yv in b {
                let xy = x * yv;
                for &z in c {
                    phi[idx] = xy * z;
                    idx += 1;
                }
            }
        }
        for p in 0..r_total {
            let fp = phi[p];
            if fp == 0.0 {
                continue;
            }
            let row = &mut acc[p * r_total..(p + 1) * r_total];
            for q in p..r_total {
                row[q] += fp * phi[q];
            }
        }
    }
    for p in 0..r_total {
        for q in 0..p {
            acc[p * r_total + q] = acc[q * r_total + p];
        }
    }
    Matrix::new(r_total, r_total, acc)
}

/// Factor update for `mode`: Procrustes projection of
/// `M = T₍ₙ₎·(U_b ⊗ U_a)·𝒢₍ₙ₎ᵀ`, using the current factors of the other two
/// modes. `T` is `Ξ − ρ⁻¹Λ` on Ω and the current reconstruction elsewhere.
/// Returns the new factor and the rank-deficiency flag.
pub fn update_factor(
    state: &SolverState,
    y: &DenseTensor3,
    mask: &SamplingMask,
    config: &SolverConfig,
    mode: Mode,
) -> Result<(Matrix, bool)> {
    let problem = Problem::new(y, mask, config);
    let xi = problem.xi(&state.e, &state.dual);
    factor_step(&problem, &xi, &state.dual, &state.factors, mode)
}

fn factor_step(
    p: &Problem<'_>,
    xi: &DenseTensor3,
    dual: &DenseTensor3,
    tf: &TuckerFactors,
    mode: Mode,
) -> Result<(Matrix, bool)> {
    let inv_rho = 1.0 / p.config.rho;
    let mut target = xi.zip_map(dual, |x, l| x - inv_rho * l)?;
    // Unobserved voxels take the current model value, so the Procrustes step
    // majorizes the masked fit instead of pulling toward zero-filled data.
    let model = tf.reconstruct()?;
    let (t, m) = (target.as_mut_slice(), model.as_slice());
    for (i, &observed) in p.observed.iter().enumerate() {
        if !observed {
            t[i] = m[i];
        }
    }
    let (a, b) = mode.others();
    let projected = target
        .mode_product(&tf.factors[a].transpose(), axis_mode(a))?
        .mode_product(&tf.factors[b].transpose(), axis_mode(b))?;
    let m = projected.unfold(mode).matmul(&tf.core.unfold(mode).transpose())?;
    let pr = procrustes(&m)?;
    Ok((pr.u, pr.rank_deficient))
}

fn axis_mode(axis: usize) -> Mode {
    Mode::ALL[axis]
}

/// Entrywise soft threshold `sign(v)·max(|v| − τ, 0)`.
#[inline]
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Sparse update: soft threshold of `𝒴 − 𝒵 − Λ` at `λ₁/ρ` on Ω, zero elsewhere.
pub fn update_sparse(
    state: &SolverState,
    y: &DenseTensor3,
    mask: &SamplingMask,
    config: &SolverConfig,
) -> Result<DenseTensor3> {
    y.check_same_dims(&state.z)?;
    let tau = config.lambda1 / config.rho;
    let mut out = DenseTensor3::zeros(y.dims());
    let (ys, zs, ls, o) = (y.as_slice(), state.z.as_slice(), state.dual.as_slice(), out.as_mut_slice());
    for &i in mask.indices() {
        o[i] = soft_threshold(ys[i] - zs[i] - ls[i], tau);
    }
    Ok(out)
}

/// Dual update `Λ + P_Ω(𝒵 + 𝓔 − 𝒴)`.
pub fn update_dual(state: &SolverState, y: &DenseTensor3, mask: &SamplingMask) -> Result<DenseTensor3> {
    y.check_same_dims(&state.z)?;
    let mut out = state.dual.clone();
    let (ys, zs, es, o) = (y.as_slice(), state.z.as_slice(), state.e.as_slice(), out.as_mut_slice());
    for &i in mask.indices() {
        o[i] += zs[i] + es[i] - ys[i];
    }
    Ok(out)
}

/// Reconstruction, optionally clamped at zero. Returns whether clamping
/// changed any entry.
pub fn reconstruct(factors: &TuckerFactors, nonneg: bool) -> Result<(DenseTensor3, bool)> {
    let mut z = factors.reconstruct()?;
    let mut clamped = false;
    if nonneg {
        for v in z.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
                clamped = true;
            }
        }
    }
    Ok((z, clamped))
}

fn primal_residual(z: &DenseTensor3, e: &DenseTensor3, y: &DenseTensor3, mask: &SamplingMask) -> f64 {
    let (zs, es, ys) = (z.as_slice(), e.as_slice(), y.as_slice());
    mask.indices()
        .iter()
        .map(|&i| {
            let r = zs[i] + es[i] - ys[i];
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// `(γ/2)‖𝒢‖² + λ₁‖𝓔‖₁ + (ρ/2)‖r‖² + ⟨Λ, r⟩` with `r = P_Ω(𝒵 + 𝓔 − 𝒴)`.
fn objective(state: &SolverState, y: &DenseTensor3, mask: &SamplingMask, config: &SolverConfig) -> f64 {
    let core_sq = state.factors.core.as_slice().iter().map(|v| v * v).sum::<f64>();
    let (zs, es, ys, ls) = (state.z.as_slice(), state.e.as_slice(), y.as_slice(), state.dual.as_slice());
    let coupling: f64 = mask.indices().iter().map(|&i| ls[i] * (zs[i] + es[i] - ys[i])).sum();
    0.5 * config.core_weight * core_sq
        + config.lambda1 * state.e.l1_norm()
        + 0.5 * config.rho * state.primal_residual * state.primal_residual
        + coupling
}

fn record(state: &SolverState, y: &DenseTensor3, mask: &SamplingMask, config: &SolverConfig) -> IterationRecord {
    IterationRecord {
        iter: state.iter,
        fro_x: state.z.frobenius_norm(),
        l1_e: state.e.l1_norm(),
        primal_residual: state.primal_residual,
        rel_change: state.rel_change,
        objective: objective(state, y, mask, config),
    }
}

struct Step {
    state: SolverState,
    rank_deficient: usize,
    clamped: bool,
}

fn advance(problem: &Problem<'_>, state: &SolverState) -> Result<Step> {
    let (y, mask, config) = (problem.y, problem.mask, problem.config);
    let iter = state.iter + 1;

    let core = core_step(problem, &state.factors.factors, &state.e, &state.dual)?;
    let mut tf = TuckerFactors { core, factors: state.factors.factors.clone() };
    let xi = problem.xi(&state.e, &state.dual);
    let mut rank_deficient = 0;
    for mode in Mode::ALL {
        let (u, deficient) = factor_step(problem, &xi, &state.dual, &tf, mode)?;
        rank_deficient += usize::from(deficient);
        tf.factors[mode.axis()] = u;
    }

    let (z, clamped) = reconstruct(&tf, config.nonneg)?;
    let prev_norm = state.z.frobenius_norm().max(REL_CHANGE_EPS);
    let rel_change = z.sub(&state.z)?.frobenius_norm() / prev_norm;

    let mut next = SolverState {
        z,
        e: state.e.clone(),
        dual: state.dual.clone(),
        factors: tf,
        iter,
        primal_residual: 0.0,
        rel_change,
    };
    next.e = update_sparse(&next, y, mask, config)?;
    next.dual = update_dual(&next, y, mask)?;
    next.primal_residual = primal_residual(&next.z, &next.e, y, mask);

    if !(next.z.is_finite() && next.e.is_finite() && next.dual.is_finite() && rel_change.is_finite()) {
        return Err(Error::NonFinite { iter });
    }
    Ok(Step { state: next, rank_deficient, clamped })
}

/// One full ADMM iteration (core, factors, reconstruction, sparse, dual)
/// from `state`, ignoring the stopping rule.
pub fn admm_step(
    state: &SolverState,
    y_obs: &DenseTensor3,
    mask: &SamplingMask,
    config: &SolverConfig,
) -> Result<SolverState> {
    config.validate(y_obs.dims())?;
    let y = mask.project(y_obs)?;
    let problem = Problem::new(&y, mask, config);
    Ok(advance(&problem, state)?.state)
}

/// Runs the warm start and then ADMM iterations until the relative change
/// of 𝒵 drops below `rel_tol` or `max_iters` is reached.
pub fn solve(y_obs: &DenseTensor3, mask: &SamplingMask, config: &SolverConfig) -> Result<SolveReport> {
    let dims = y_obs.dims();
    config.validate(dims)?;
    if mask.dims() != dims {
        return Err(Error::Shape(format!("mask dims {:?} vs observation dims {dims:?}", mask.dims())));
    }
    let y = mask.project(y_obs)?;
    let problem = Problem::new(&y, mask, config);

    let init = hosvd_init(&y, mask, config.ranks)?;
    let mut rank_deficient_updates = usize::from(init.rank_deficient);
    let (z0, mut clamped) = reconstruct(&init.factors, config.nonneg)?;
    let e0 = DenseTensor3::zeros(dims);
    let mut state = SolverState {
        primal_residual: primal_residual(&z0, &e0, &y, mask),
        z: z0,
        e: e0,
        dual: DenseTensor3::zeros(dims),
        factors: init.factors,
        iter: 0,
        rel_change: f64::NAN,
    };
    let mut history = vec![record(&state, &y, mask, config)];
    let mut trajectory = config.record_trajectory.then(|| vec![state.clone()]);
    let mut converged = false;

    while state.iter < config.max_iters {
        let step = advance(&problem, &state)?;
        rank_deficient_updates += step.rank_deficient;
        clamped = step.clamped;
        let rel_change = step.state.rel_change;
        history.push(record(&step.state, &y, mask, config));
        if let Some(t) = trajectory.as_mut() {
            t.push(step.state.clone());
        }
        state = step.state;
        if rel_change < config.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        x_hat: state.z,
        e_hat: state.e,
        factors: state.factors,
        iterations: state.iter,
        converged,
        residual_history: history,
        trajectory,
        clamped,
        rank_deficient_updates,
        config: config.clone(),
    })
}

/// Trajectory of the iterate chain, one record per recorded state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryExport {
    pub records: Vec<IterationRecord>,
    /// False when the solve did not keep snapshots.
    pub available: bool,
}

/// Per-iterate records `(t, ‖𝒳⁽ᵗ⁾‖_F, ‖𝓔⁽ᵗ⁾‖₁, residual, objective)` from the
/// recorded snapshots, warm start included.
pub fn export_trajectory(
    report: &SolveReport,
    y_obs: &DenseTensor3,
    mask: &SamplingMask,
) -> Result<TrajectoryExport> {
    let Some(states) = report.trajectory.as_ref() else {
        return Ok(TrajectoryExport { records: Vec::new(), available: false });
    };
    let y = mask.project(y_obs)?;
    let records = states.iter().map(|s| record(s, &y, mask, &report.config)).collect();
    Ok(TrajectoryExport { records, available: true })
}

/// Trace CSV with columns `iter,fro_x,l1_e,primal_residual,rel_change,objective`.
pub fn trace_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from("iter,fro_x,l1_e,primal_residual,rel_change,objective\n");
    for r in records {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            r.iter, r.fro_x, r.l1_e, r.primal_residual, r.rel_change, r.objective
        ));
    }
    s
}
