//! Observation masks, the projection `P_Ω` and corruption injection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{DenseTensor3, Dims};

/// How a mask was generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskLaw {
    UniformWithoutReplacement { n: usize, seed: u64 },
    ZSlices { stride: usize, offset: usize },
    Full,
    Explicit,
}

impl fmt::Display for MaskLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskLaw::UniformWithoutReplacement { n, seed } => write!(f, "uniform({n},{seed})"),
            MaskLaw::ZSlices { stride, offset } => write!(f, "zslice({stride},{offset})"),
            MaskLaw::Full => write!(f, "full"),
            MaskLaw::Explicit => write!(f, "explicit"),
        }
    }
}

impl FromStr for MaskLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown mask law tag {s:?}"));
        let args = |body: &str| -> Result<(u64, u64)> {
            let inner = body.strip_suffix(')').ok_or_else(bad)?;
            let (a, b) = inner.split_once(',').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        };
        if s == "full" {
            Ok(MaskLaw::Full)
        } else if s == "explicit" {
            Ok(MaskLaw::Explicit)
        } else if let Some(body) = s.strip_prefix("uniform(") {
            let (n, seed) = args(body)?;
            Ok(MaskLaw::UniformWithoutReplacement { n: n as usize, seed })
        } else if let Some(body) = s.strip_prefix("zslice(") {
            let (stride, offset) = args(body)?;
            Ok(MaskLaw::ZSlices { stride: stride as usize, offset: offset as usize })
        } else {
            Err(bad())
        }
    }
}

/// The observed index set Ω as sorted, unique row-major linear indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    dims: Dims,
    indices: Vec<usize>,
    law: MaskLaw,
}

impl SamplingMask {
    /// Mask from arbitrary indices; they are sorted and must be unique and in range.
    pub fn explicit(dims: Dims, mut indices: Vec<usize>) -> Result<Self> {
        let total: usize = dims.iter().product();
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("mask indices must be unique".into()));
        }
        if indices.last().is_some_and(|&i| i >= total) {
            return Err(Error::InvalidArgument(format!("mask index out of range for {dims:?}")));
        }
        Ok(Self { dims, indices, law: MaskLaw::Explicit })
    }

    pub fn full(dims: Dims) -> Self {
        Self { dims, indices: (0..dims.iter().product()).collect(), law: MaskLaw::Full }
    }

    /// `n` distinct voxels drawn uniformly without replacement.
    pub fn uniform(dims: Dims, n: usize, seed: u64) -> Result<Self> {
        let total: usize = dims.iter().product();
        if n == 0 || n > total {
            return Err(Error::InvalidArgument(format!(
                "sample count must be in 1..={total}, got {n}"
            )));
        }
        let mut indices = SeededRng::new(seed).sample_distinct(total, n);
        indices.sort_unstable();
        Ok(Self { dims, indices, law: MaskLaw::UniformWithoutReplacement { n, seed } })
    }

    /// Every voxel on the XY planes with `z ≡ offset (mod stride)`.
    pub fn z_slices(dims: Dims, stride: usize, offset: usize) -> Result<Self> {
        if stride == 0 || stride > dims[2] {
            return Err(Error::InvalidArgument(format!(
                "stride must be in 1..={}, got {stride}",
                dims[2]
            )));
        }
        if offset >= stride {
            return Err(Error::InvalidArgument(format!(
                "offset {offset} must be smaller than stride {stride}"
            )));
        }
        let mut indices = Vec::new();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in (offset..dims[2]).step_by(stride) {
                    indices.push((i * dims[1] + j) * dims[2] + k);
                }
            }
        }
        Ok(Self { dims, indices, law: MaskLaw::ZSlices { stride, offset } })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn law(&self) -> MaskLaw {
        self.law
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Dense membership table over all voxels.
    pub fn bitmap(&self) -> Vec<bool> {
        let mut b = vec![false; self.dims.iter().product()];
        for &i in &self.indices {
            b[i] = true;
        }
        b
    }

    pub fn fraction(&self) -> f64 {
        self.len() as f64 / self.dims.iter().product::<usize>() as f64
    }

    fn check(&self, t: &DenseTensor3) -> Result<()> {
        if t.dims() != self.dims {
            return Err(Error::Shape(format!(
                "mask dims {:?} vs tensor dims {:?}",
                self.dims,
                t.dims()
            )));
        }
        Ok(())
    }

    /// `P_Ω(t)`: zero outside the mask, copy on it.
    pub fn project(&self, t: &DenseTensor3) -> Result<DenseTensor3> {
        self.check(t)?;
        let mut out = DenseTensor3::zeros(self.dims);
        let (src, dst) = (t.as_slice(), out.as_mut_slice());
        for &i in &self.indices {
            dst[i] = src[i];
        }
        Ok(out)
    }

    /// Mask file text: a `# dims I1 I2 I3 law <tag>` header, then one index per line.
    pub fn to_text(&self) -> String {
        let [a, b, c] = self.dims;
        let mut s = format!("# dims {a} {b} {c} law {}\n", self.law);
        for i in &self.indices {
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty mask file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "#" || fields[1] != "dims" || fields[5] != "law" {
            return Err(Error::Parse(format!("bad mask header {header:?}")));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad extent {s:?}")));
        let dims = [dim(fields[2])?, dim(fields[3])?, dim(fields[4])?];
        if dims.contains(&0) {
            return Err(Error::Parse("mask extents must be positive".into()));
        }
        let law: MaskLaw = fields[6].parse()?;
        let indices = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad index {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse("mask indices must be strictly increasing".into()));
        }
        let mut mask = Self::explicit(dims, indices)?;
        mask.law = law;
        Ok(mask)
    }
}

/// Parameters of the corruption model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Fraction of observed voxels hit by a sparse outlier.
    pub sparse_fraction: f64,
    /// Outlier magnitude; signs are Rademacher.
    pub sparse_amplitude: f64,
    /// Standard deviation of dense Gaussian noise on observed voxels.
    pub gaussian_sigma: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn none() -> Self {
        Self { sparse_fraction: 0.0, sparse_amplitude: 1.0, gaussian_sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sparse_fraction) {
            return Err(Error::InvalidArgument(format!(
                "sparse fraction must be in [0, 1], got {}",
                self.sparse_fraction
            )));
        }
        if !(self.sparse_amplitude > 0.0 && self.sparse_amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sparse amplitude must be positive, got {}",
                self.sparse_amplitude
            )));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian sigma must be >= 0, got {}",
                self.gaussian_sigma
            )));
        }
        Ok(())
    }
}

/// Corrupts `t` on the mask and returns `(Y, E_true)`.
///
/// Draw order from one stream seeded with `spec.seed`: the outlier support
/// (partial Fisher–Yates over positions in Ω), then one sign per outlier in
/// increasing voxel order, then one Gaussian draw per observed voxel in
/// increasing order (only when `gaussian_sigma > 0`).
pub fn corrupt(
    t: &DenseTensor3,
    spec: &CorruptionSpec,
    mask: &SamplingMask,
) -> Result<(DenseTensor3, DenseTensor3)> {
    spec.validate()?;
    mask.check(t)?;
    let mut rng = SeededRng::new(spec.seed);
    let count = (spec.sparse_fraction * mask.len() as f64).round() as usize;
    let mut support: Vec<usize> = rng
        .sample_distinct(mask.len(), count)
        .into_iter()
        .map(|p| mask.indices[p])
        .collect();
    support.sort_unstable();

    let mut e_true = DenseTensor3::zeros(t.dims());
    for &i in &support {
        e_true.as_mut_slice()[i] = rng.sign() * spec.sparse_amplitude;
    }

    let mut y = DenseTensor3::zeros(t.dims());
    {
        let (src, e, dst) = (t.as_slice(), e_true.as_slice(), y.as_mut_slice());
        for &i in &mask.indices {
            let noise = if spec.gaussian_sigma > 0.0 { spec.gaussian_sigma * rng.normal() } else { 0.0 };
            dst[i] = src[i] + e[i] + noise;
        }
    }
    Ok((y, e_true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims) -> DenseTensor3 {
        DenseTensor3::from_fn(dims, |i, j, k| (i * 100 + j * 10 + k) as f64 * 0.01)
    }

    #[test]
    fn uniform_full_count_is_everything() {
        let m = SamplingMask::uniform([2, 3, 4], 24, 99).unwrap();
        assert_eq!(m.indices(), (0..24).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn uniform_single_is_deterministic() {
        let a = SamplingMask::uniform([2, 2, 2], 1, 5).unwrap();
        let b = SamplingMask::uniform([2, 2, 2], 1, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert!(a.indices()[0] < 8);
    }

    #[test]
    fn uniform_rejects_bad_counts() {
        assert!(SamplingMask::uniform([2, 2, 2], 0, 1).is_err());
        assert!(SamplingMask::uniform([2, 2, 2], 9, 1).is_err());
    }

    #[test]
    fn z_slice_enumeration() {
        let m = SamplingMask::z_slices([2, 2, 4], 2, 0).unwrap();
        assert_eq!(m.len(), 8);
        let t = DenseTensor3::zeros([2, 2, 4]);
        for &i in m.indices() {
            assert!(t.multi_index(i)[2] % 2 == 0);
        }
        assert_eq!(SamplingMask::z_slices([3, 3, 5], 1, 0).unwrap().len(), 45);
        assert_eq!(SamplingMask::z_slices([3, 3, 5], 5, 0).unwrap().len(), 9);
        // ceil((5 - 1) / 3) = 2 planes: z = 1, 4
        assert_eq!(SamplingMask::z_slices([3, 3, 5], 3, 1).unwrap().len(), 18);
    }

    #[test]
    fn z_slice_rejects_bad_parameters() {
        assert!(SamplingMask::z_slices([2, 2, 4], 2, 2).is_err());
        assert!(SamplingMask::z_slices([2, 2, 4], 0, 0).is_err());
        assert!(SamplingMask::z_slices([2, 2, 4], 5, 0).is_err());
    }

    #[test]
    fn project_full_single_and_idempotent() {
        let t = ramp([3, 3, 3]);
        assert_eq!(SamplingMask::full([3, 3, 3]).project(&t).unwrap(), t);
        let one = SamplingMask::explicit([3, 3, 3], vec![13]).unwrap();
        let p = one.project(&t).unwrap();
        assert_eq!(p.as_slice()[13], t.as_slice()[13]);
        assert_eq!(p.l1_norm(), t.as_slice()[13].abs());
        let m = SamplingMask::uniform([3, 3, 3], 10, 4).unwrap();
        let once = m.project(&t).unwrap();
        assert_eq!(m.project(&once).unwrap(), once);
        assert!(m.project(&DenseTensor3::zeros([3, 3, 2])).is_err());
    }

    #[test]
    fn corrupt_without_corruption_is_projection() {
        let t = ramp([4, 4, 4]);
        let m = SamplingMask::uniform([4, 4, 4], 30, 1).unwrap();
        let (y, e) = corrupt(&t, &CorruptionSpec::none(), &m).unwrap();
        assert_eq!(y, m.project(&t).unwrap());
        assert_eq!(e.max_abs(), 0.0);
    }

    #[test]
    fn corrupt_full_support_displaces_every_observation() {
        let t = ramp([4, 4, 4]);
        let m = SamplingMask::uniform([4, 4, 4], 30, 1).unwrap();
        let spec = CorruptionSpec { sparse_fraction: 1.0, sparse_amplitude: 0.5, gaussian_sigma: 0.0, seed: 3 };
        let (y, e) = corrupt(&t, &spec, &m).unwrap();
        for &i in m.indices() {
            assert_eq!((y.as_slice()[i] - t.as_slice()[i]).abs(), 0.5);
            assert_eq!(e.as_slice()[i].abs(), 0.5);
        }
        assert_eq!(e.l1_norm(), 15.0);
    }

    #[test]
    fn corrupt_is_reproducible() {
        let t = ramp([4, 4, 4]);
        let m = SamplingMask::uniform([4, 4, 4], 40, 1).unwrap();
        let spec = CorruptionSpec { sparse_fraction: 0.2, sparse_amplitude: 1.0, gaussian_sigma: 0.05, seed: 17 };
        let a = corrupt(&t, &spec, &m).unwrap();
        let b = corrupt(&t, &spec, &m).unwrap();
        assert_eq!(a.0.as_slice(), b.0.as_slice());
        assert_eq!(a.1.as_slice(), b.1.as_slice());
        let support = a.1.as_slice().iter().filter(|v| **v != 0.0).count();
        assert_eq!(support, 8);
    }

    #[test]
    fn corrupt_validates_spec() {
        let t = ramp([2, 2, 2]);
        let m = SamplingMask::full([2, 2, 2]);
        let mut spec = CorruptionSpec::none();
        spec.sparse_fraction = 1.5;
        assert!(corrupt(&t, &spec, &m).is_err());
        spec = CorruptionSpec::none();
        spec.gaussian_sigma = -1.0;
        assert!(corrupt(&t, &spec, &m).is_err());
    }

    #[test]
    fn mask_text_round_trip() {
        let m = SamplingMask::z_slices([2, 3, 4], 2, 1).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("# dims 2 3 4 law zslice(2,1)\n"));
        assert_eq!(SamplingMask::from_text(&text).unwrap(), m);
        let u = SamplingMask::uniform([4, 4, 4], 7, 12).unwrap();
        assert_eq!(SamplingMask::from_text(&u.to_text()).unwrap(), u);
        assert!(SamplingMask::from_text("# dims 2 2 2 law full\n3\n1\n").is_err());
        assert!(SamplingMask::from_text("# dims 2 2 2 law weird\n").is_err());
    }
}
