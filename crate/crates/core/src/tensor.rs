//! Dense order-3 tensors and the multilinear primitives built on them.
//!
//! Storage is row-major: entry `(i, j, k)` lives at `(i * I2 + j) * I3 + k`.
//! Unfoldings follow the Kolda–Bader convention, where the two remaining
//! modes index the columns with the lower-numbered mode varying fastest:
//!
//! * mode 1: row `i`, column `j + k * I2`
//! * mode 2: row `j`, column `i + k * I1`
//! * mode 3: row `k`, column `i + j * I1`
//!
//! With this ordering `unfold(G ×₁ U₁ ×₂ U₂ ×₃ U₃, 1) = U₁ · G₍₁₎ · (U₃ ⊗ U₂)ᵀ`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tensor mode (axis), numbered from one as in the usual notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Zero-based axis index.
    #[inline]
    pub fn axis(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    /// The other two axes in increasing order.
    #[inline]
    pub fn others(self) -> (usize, usize) {
        match self {
            Mode::One => (1, 2),
            Mode::Two => (0, 2),
            Mode::Three => (0, 1),
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::InvalidArgument(format!("mode must be 1, 2 or 3, got {n}"))),
        }
    }
}

pub type Dims = [usize; 3];

/// Column index of entry `idx` in the mode-`mode` unfolding.
#[inline]
fn unfold_col(dims: Dims, mode: Mode, idx: [usize; 3]) -> usize {
    let (a, b) = mode.others();
    idx[a] + idx[b] * dims[a]
}

#[derive(Clone, PartialEq)]
pub struct DenseTensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {len} entries, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Inverse of [`linear_index`](Self::linear_index).
    #[inline]
    pub fn multi_index(&self, linear: usize) -> [usize; 3] {
        let k = linear % self.dims[2];
        let rest = linear / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.linear_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.linear_index(i, j, k);
        self.data[idx] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_raw(self.dims, data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("dims {:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// `min` and `max` over all entries.
    pub fn range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Mode-`mode` matricization (see module docs for the column order).
    pub fn unfold(&self, mode: Mode) -> Matrix {
        let n = mode.axis();
        let rows = self.dims[n];
        let cols = self.len() / rows;
        let mut out = vec![0.0; rows * cols];
        let mut lin = 0;
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                for k in 0..self.dims[2] {
                    let idx = [i, j, k];
                    out[idx[n] * cols + unfold_col(self.dims, mode, idx)] = self.data[lin];
                    lin += 1;
                }
            }
        }
        Matrix::from_raw(rows, cols, out)
    }

    /// Inverse of [`unfold`](Self::unfold).
    pub fn fold(m: &Matrix, mode: Mode, dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        let n = mode.axis();
        let total: usize = dims.iter().product();
        if m.rows() != dims[n] || m.rows() * m.cols() != total {
            return Err(Error::Shape(format!(
                "cannot fold {}x{} along mode {} into {dims:?}",
                m.rows(),
                m.cols(),
                n + 1
            )));
        }
        let cols = m.cols();
        let src = m.as_slice();
        let mut data = Vec::with_capacity(total);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let idx = [i, j, k];
                    data.push(src[idx[n] * cols + unfold_col(dims, mode, idx)]);
                }
            }
        }
        Ok(Self::from_raw(dims, data))
    }

    /// Mode-n product `self ×ₙ u`; requires `u.cols() == dims[n]`.
    pub fn mode_product(&self, u: &Matrix, mode: Mode) -> Result<Self> {
        let n = mode.axis();
        if u.cols() != self.dims[n] {
            return Err(Error::Shape(format!(
                "mode-{} product needs {} columns, matrix is {}x{}",
                n + 1,
                self.dims[n],
                u.rows(),
                u.cols()
            )));
        }
        let [d1, d2, d3] = self.dims;
        let mut dims = self.dims;
        dims[n] = u.rows();
        let mut out = vec![0.0; dims.iter().product()];
        let src = &self.data;
        match mode {
            Mode::One => {
                let block = d2 * d3;
                for a in 0..u.rows() {
                    let dst = &mut out[a * block..(a + 1) * block];
                    for i in 0..d1 {
                        let w = u.get(a, i);
                        if w == 0.0 {
                            continue;
                        }
                        for (o, &s) in dst.iter_mut().zip(&src[i * block..(i + 1) * block]) {
                            *o += w * s;
                        }
                    }
                }
            }
            Mode::Two => {
                let r = u.rows();
                for i in 0..d1 {
                    for b in 0..r {
                        let dst_off = (i * r + b) * d3;
                        for j in 0..d2 {
                            let w = u.get(b, j);
                            if w == 0.0 {
                                continue;
                            }
                            let src_off = (i * d2 + j) * d3;
                            for k in 0..d3 {
                                out[dst_off + k] += w * src[src_off + k];
                            }
                        }
                    }
                }
            }
            Mode::Three => {
                let r = u.rows();
                for fiber in 0..d1 * d2 {
                    let s = &src[fiber * d3..(fiber + 1) * d3];
                    let dst = &mut out[fiber * r..(fiber + 1) * r];
                    for (c, o) in dst.iter_mut().enumerate() {
                        *o = u.row(c).iter().zip(s).map(|(a, b)| a * b).sum();
                    }
                }
            }
        }
        Ok(Self::from_raw(dims, out))
    }

    /// `self ×₁ U₁ ×₂ U₂ ×₃ U₃`.
    pub fn multilinear(&self, factors: [&Matrix; 3]) -> Result<Self> {
        self.mode_product(factors[0], Mode::One)?
            .mode_product(factors[1], Mode::Two)?
            .mode_product(factors[2], Mode::Three)
    }

    /// `self ×₁ U₁ᵀ ×₂ U₂ᵀ ×₃ U₃ᵀ`, the projection onto factor coordinates.
    pub fn multilinear_transpose(&self, factors: [&Matrix; 3]) -> Result<Self> {
        self.mode_product(&factors[0].transpose(), Mode::One)?
            .mode_product(&factors[1].transpose(), Mode::Two)?
            .mode_product(&factors[2].transpose(), Mode::Three)
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("extents must be positive, got {dims:?}")));
    }
    Ok(())
}

impl fmt::Debug for DenseTensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseTensor3 {:?} (|·|_F = {:.6e})", self.dims, self.frobenius_norm())
    }
}
