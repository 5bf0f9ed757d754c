//! Reference-based quality metrics: PSNR, slice-averaged SSIM and NRMSE.
//!
//! Volumes are expected in `[0, 1]`. SSIM is evaluated per XY slice (fixed
//! third index) with an 7×7 Gaussian window (σ = 1.5), `K₁ = 0.01`,
//! `K₂ = 0.03` and dynamic range 1, over window positions fully inside the
//! slice, then averaged over slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor3;

/// Value reported for identical inputs (zero MSE).
pub const PSNR_CAP_DB: f64 = 120.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 7, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
    /// Set when a slice was smaller than the SSIM window and global
    /// statistics were used instead.
    pub ssim_fallback: bool,
    pub per_slice: Option<Vec<SliceMetrics>>,
}

fn check(x: &DenseTensor3, y: &DenseTensor3) -> Result<()> {
    x.check_same_dims(y)
}

fn mse(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64
}

fn psnr_of(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10·log₁₀(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &DenseTensor3, y: &DenseTensor3, peak: f64) -> Result<f64> {
    check(x, y)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_of(mse(x.as_slice(), y.as_slice()), peak))
}

/// `‖x − y‖_F / ‖y‖_F`; normalized by the reference `y`, so not symmetric.
pub fn nrmse(x: &DenseTensor3, y: &DenseTensor3) -> Result<f64> {
    check(x, y)?;
    let reference = y.frobenius_norm();
    if reference == 0.0 {
        return Err(Error::InvalidArgument("nrmse reference must be nonzero".into()));
    }
    Ok(x.sub(y)?.frobenius_norm() / reference)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn slice_of(t: &DenseTensor3, z: usize) -> Vec<f64> {
    let [d1, d2, _] = t.dims();
    let mut out = Vec::with_capacity(d1 * d2);
    for i in 0..d1 {
        for j in 0..d2 {
            out.push(t.get(i, j, z));
        }
    }
    out
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// SSIM of two `rows x cols` images. Returns the value and whether the
/// global-statistics fallback was used.
fn ssim_2d(a: &[f64], b: &[f64], rows: usize, cols: usize, p: &SsimParams) -> (f64, bool) {
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    if rows < p.window || cols < p.window {
        let n = a.len() as f64;
        let mx = a.iter().sum::<f64>() / n;
        let my = b.iter().sum::<f64>() / n;
        let vx = a.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = b.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = a.iter().zip(b).map(|(u, v)| (u - mx) * (v - my)).sum::<f64>() / n;
        return (ssim_formula(mx, my, vx, vy, cxy, c1, c2), true);
    }
    let w = gaussian_window(p.window, p.sigma);
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - p.window {
        for c0 in 0..=cols - p.window {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dr, wr) in w.iter().enumerate() {
                for (dc, wc) in w.iter().enumerate() {
                    let weight = wr * wc;
                    let idx = (r0 + dr) * cols + c0 + dc;
                    let (x, y) = (a[idx], b[idx]);
                    mx += weight * x;
                    my += weight * y;
                    sxx += weight * x * x;
                    syy += weight * y * y;
                    sxy += weight * x * y;
                }
            }
            let vx = (sxx - mx * mx).max(0.0);
            let vy = (syy - my * my).max(0.0);
            total += ssim_formula(mx, my, vx, vy, sxy - mx * my, c1, c2);
            count += 1;
        }
    }
    (total / count as f64, false)
}

fn per_slice_ssim(x: &DenseTensor3, y: &DenseTensor3, params: &SsimParams) -> (Vec<f64>, bool) {
    let [d1, d2, d3] = x.dims();
    let mut fallback = false;
    let values = (0..d3)
        .map(|z| {
            let (v, fb) = ssim_2d(&slice_of(x, z), &slice_of(y, z), d1, d2, params);
            fallback |= fb;
            v
        })
        .collect();
    (values, fallback)
}

/// Mean SSIM over XY slices.
pub fn ssim(x: &DenseTensor3, y: &DenseTensor3, params: &SsimParams) -> Result<f64> {
    check(x, y)?;
    let (values, _) = per_slice_ssim(x, y, params);
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// All three metrics of `x` against the reference `y`, optionally with a
/// per-slice breakdown.
pub fn evaluate(x: &DenseTensor3, y: &DenseTensor3, peak: f64, per_slice: bool) -> Result<MetricReport> {
    let params = SsimParams::default();
    let psnr_db = psnr(x, y, peak)?;
    let nrmse_v = nrmse(x, y)?;
    let (values, ssim_fallback) = per_slice_ssim(x, y, &params);
    let ssim_v = values.iter().sum::<f64>() / values.len() as f64;
    let slices = per_slice.then(|| {
        values
            .iter()
            .enumerate()
            .map(|(z, &s)| {
                let (a, b) = (slice_of(x, z), slice_of(y, z));
                let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let diff = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
                SliceMetrics {
                    psnr_db: psnr_of(mse(&a, &b), peak),
                    ssim: s,
                    nrmse: if norm_b > 0.0 { diff / norm_b } else { f64::NAN },
                }
            })
            .collect()
    });
    Ok(MetricReport { psnr_db, ssim: ssim_v, nrmse: nrmse_v, ssim_fallback, per_slice: slices })
}

/// CSV row `volume_id,psnr_db,ssim,nrmse`.
pub fn csv_row(volume_id: &str, report: &MetricReport) -> String {
    format!("{},{},{},{}", volume_id, report.psnr_db, report.ssim, report.nrmse)
}

pub const CSV_HEADER: &str = "volume_id,psnr_db,ssim,nrmse";
