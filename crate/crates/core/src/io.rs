//! On-disk formats.
//!
//! A volume is a raw little-endian payload in row-major order next to a JSON
//! sidecar at `<payload>.json`:
//!
//! ```json
//! {"dims":[64,64,32],"dtype":"f64","order":"row-major","scale":[0.0,1.0]}
//! ```
//!
//! `scale` maps payload values back to original units:
//! `original = min + v * (max - min)`. Masks are plain text (see
//! [`SamplingMask::to_text`]). All writes go through a temporary file in the
//! target directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SamplingMask;
use crate::tensor::{DenseTensor3, Dims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: Dims,
    pub dtype: Dtype,
    pub order: String,
    pub scale: [f64; 2],
}

impl VolumeHeader {
    pub fn new(dims: Dims, dtype: Dtype) -> Self {
        Self { dims, dtype, order: "row-major".into(), scale: [0.0, 1.0] }
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_volume(path: &Path, t: &DenseTensor3, header: &VolumeHeader) -> Result<()> {
    if header.dims != t.dims() {
        return Err(Error::Shape(format!("header dims {:?} vs tensor {:?}", header.dims, t.dims())));
    }
    if header.order != "row-major" {
        return Err(Error::InvalidArgument(format!("unsupported order {:?}", header.order)));
    }
    let mut bytes = Vec::with_capacity(header.payload_len());
    match header.dtype {
        Dtype::F64 => t.as_slice().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => t.as_slice().iter().for_each(|v| bytes.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), serde_json::to_string(header)?.as_bytes())
}

/// Writes an `f64` volume whose payload is already in original units.
pub fn write_f64(path: &Path, t: &DenseTensor3) -> Result<()> {
    write_volume(path, t, &VolumeHeader::new(t.dims(), Dtype::F64))
}

pub fn read_volume(path: &Path) -> Result<(DenseTensor3, VolumeHeader)> {
    let header: VolumeHeader = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if header.order != "row-major" {
        return Err(Error::Parse(format!("unsupported order {:?}", header.order)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != header.payload_len() {
        return Err(Error::Parse(format!(
            "payload has {} bytes, header {:?} {:?} needs {}",
            bytes.len(),
            header.dims,
            header.dtype,
            header.payload_len()
        )));
    }
    let data: Vec<f64> = match header.dtype {
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
    };
    Ok((DenseTensor3::new(header.dims, data)?, header))
}

/// Affinely maps `t` onto `[0, 1]`, returning the original `[min, max]`.
/// A constant volume maps to zeros with `max = min`.
pub fn normalize(t: &DenseTensor3) -> (DenseTensor3, [f64; 2]) {
    let (lo, hi) = t.range();
    let span = hi - lo;
    if span == 0.0 {
        return (t.map(|_| 0.0), [lo, hi]);
    }
    (t.map(|v| (v - lo) / span), [lo, hi])
}

pub fn denormalize(t: &DenseTensor3, scale: [f64; 2]) -> DenseTensor3 {
    let [lo, hi] = scale;
    t.map(|v| lo + v * (hi - lo))
}

/// Reads a volume and normalizes it to `[0, 1]`. The returned scale composes
/// the file's own scale with the normalization, so
/// `denormalize(t, scale)` yields original units.
pub fn ingest(path: &Path) -> Result<(DenseTensor3, [f64; 2])> {
    let (raw, header) = read_volume(path)?;
    let (lo, hi) = raw.range();
    if lo >= 0.0 && hi <= 1.0 {
        return Ok((raw, header.scale));
    }
    let (t, [a, b]) = normalize(&raw);
    let [s0, s1] = header.scale;
    let w = s1 - s0;
    Ok((t, [s0 + a * w, s0 + b * w]))
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    write_atomic(path, mask.to_text().as_bytes())
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    SamplingMask::from_text(&fs::read_to_string(path)?)
}
