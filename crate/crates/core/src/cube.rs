//! Hyperspectral cube storage, normalization and the native on-disk format.
//!
//! In memory a cube is always laid out `(row, col, band)` with the band index
//! varying fastest. On disk a cube is a pair of files: `<name>.json` holding a
//! [`CubeHeader`] and `<name>.raw` holding the samples. Band-interleaved
//! payloads (`bsq`, `bil`) are transposed on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};

/// Dense `height x width x bands` cube of `f32` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl HsiCube {
    /// Builds a cube from `(row, col, band)`-ordered samples.
    pub fn from_vec(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(HsiError::ShapeMismatch(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height * width * bands;
        if data.len() != expected {
            return Err(HsiError::LengthMismatch { expected, actual: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(HsiError::NonFinite(i));
        }
        Ok(Self { height, width, bands, data, normalized: false })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::from_vec(height, width, bands, vec![0.0; height * width * bands])
    }

    /// Builds a cube by evaluating `f(row, col, band)` at every voxel.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for r in 0..height {
            for c in 0..width {
                for b in 0..bands {
                    data.push(f(r, c, b));
                }
            }
        }
        Self::from_vec(height, width, bands, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `(height, width, bands)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    /// Element count `n = w * h * b`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        (row * self.width + col) * self.bands + band
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[self.index(row, col, band)]
    }

    pub fn header(&self) -> CubeHeader {
        CubeHeader::new(self.height, self.width, self.bands)
    }

    /// Copies one band into a row-major `height x width` plane.
    pub fn band_plane(&self, band: usize) -> Vec<f32> {
        self.data.iter().skip(band).step_by(self.bands).copied().collect()
    }

    /// Applies `f` to every sample. The result is not flagged normalized.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::from_vec(self.height, self.width, self.bands, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Returns the value range `(min, max)`.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Spatial window `[row0, row0+height) x [col0, col0+width)` restricted to
    /// the listed bands (in the given order).
    pub fn crop(
        &self,
        row0: usize,
        col0: usize,
        height: usize,
        width: usize,
        bands: &[usize],
    ) -> Result<Self> {
        if height == 0 || width == 0 || row0 + height > self.height || col0 + width > self.width {
            return Err(HsiError::ShapeMismatch(format!(
                "crop {height}x{width} at ({row0},{col0}) exceeds cube {}x{}",
                self.height, self.width
            )));
        }
        if bands.is_empty() {
            return Err(HsiError::ShapeMismatch("crop selects no bands".into()));
        }
        if let Some(&b) = bands.iter().find(|&&b| b >= self.bands) {
            return Err(HsiError::ShapeMismatch(format!(
                "band {b} out of range for cube with {} bands",
                self.bands
            )));
        }
        let mut data = Vec::with_capacity(height * width * bands.len());
        for r in row0..row0 + height {
            for c in col0..col0 + width {
                let base = (r * self.width + c) * self.bands;
                data.extend(bands.iter().map(|&b| self.data[base + b]));
            }
        }
        let mut out = Self::from_vec(height, width, bands.len(), data)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    pub(crate) fn with_normalized_flag(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }
}

/// `count` band indices spread evenly over `0..total` (first and last included
/// when `count >= 2`).
pub fn evenly_spaced_bands(total: usize, count: usize) -> Vec<usize> {
    match count {
        0 => Vec::new(),
        1 => vec![0],
        _ if count >= total => (0..total).collect(),
        _ => (0..count)
            .map(|i| ((i as f64) * (total - 1) as f64 / (count - 1) as f64).round() as usize)
            .collect(),
    }
}

/// Global min-max rescaling to `[0, 1]`. A constant cube maps to zeros.
pub fn normalize(cube: &HsiCube) -> HsiCube {
    let (lo, hi) = cube.min_max();
    let range = hi - lo;
    let data = if range > 0.0 {
        // Exact 0/1 endpoints, and already-[0,1] cubes come back unchanged.
        let (lo, range) = (lo as f64, range as f64);
        cube.data.iter().map(|&v| (((v as f64) - lo) / range).clamp(0.0, 1.0) as f32).collect()
    } else {
        vec![0.0; cube.len()]
    };
    HsiCube { height: cube.height, width: cube.width, bands: cube.bands, data, normalized: true }
}

/// Flat view of length `n` in `(row, col, band)` order.
pub fn vectorize(cube: &HsiCube) -> Vec<f32> {
    cube.data.clone()
}

/// Inverse of [`vectorize`].
pub fn devectorize(flat: &[f32], header: &CubeHeader) -> Result<HsiCube> {
    HsiCube::from_vec(header.height, header.width, header.bands, flat.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

/// On-disk sample ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    /// band, row, col
    #[default]
    Bsq,
    /// row, band, col
    Bil,
    /// row, col, band
    Bip,
}

/// Sidecar header of the native cube format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: String,
    pub order: ByteOrder,
    #[serde(default)]
    pub interleave: Interleave,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
}

impl CubeHeader {
    pub fn new(height: usize, width: usize, bands: usize) -> Self {
        Self {
            width,
            height,
            bands,
            dtype: "f32".into(),
            order: ByteOrder::Little,
            interleave: Interleave::Bsq,
            wavelengths: None,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.bands
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(HsiError::Header(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.bands
            )));
        }
        if let Some(w) = &self.wavelengths {
            if w.len() != self.bands {
                return Err(HsiError::Header(format!(
                    "{} wavelengths listed for {} bands",
                    w.len(),
                    self.bands
                )));
            }
        }
        Ok(())
    }
}

/// Resolves `<name>`, `<name>.json` or `<name>.raw` to the `(header, payload)` pair.
pub fn cube_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut header = stem.clone().into_os_string();
    header.push(".json");
    let mut raw = stem.into_os_string();
    raw.push(".raw");
    (header.into(), raw.into())
}

/// Storage type of a raw payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F32,
    F64,
    U8,
    U16,
    I16,
}

impl Dtype {
    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "f32" | "float32" => Ok(Dtype::F32),
            "f64" | "float64" => Ok(Dtype::F64),
            "u8" | "uint8" => Ok(Dtype::U8),
            "u16" | "uint16" => Ok(Dtype::U16),
            "i16" | "int16" => Ok(Dtype::I16),
            other => Err(HsiError::UnsupportedDtype(other.to_string())),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 | Dtype::I16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8], order: ByteOrder) -> f32 {
        macro_rules! read {
            ($t:ty) => {{
                let arr = bytes.try_into().expect("chunk size matches dtype");
                match order {
                    ByteOrder::Little => <$t>::from_le_bytes(arr),
                    ByteOrder::Big => <$t>::from_be_bytes(arr),
                }
            }};
        }
        match self {
            Dtype::F32 => read!(f32),
            Dtype::F64 => read!(f64) as f32,
            Dtype::U8 => bytes[0] as f32,
            Dtype::U16 => read!(u16) as f32,
            Dtype::I16 => read!(i16) as f32,
        }
    }
}

pub fn read_header(path: &Path) -> Result<CubeHeader> {
    let (header_path, _) = cube_paths(path);
    let text = fs::read_to_string(&header_path).map_err(|e| HsiError::io(&header_path, e))?;
    let header: CubeHeader =
        serde_json::from_str(&text).map_err(|e| HsiError::Header(format!("{}: {e}", header_path.display())))?;
    header.validate()?;
    Ok(header)
}

fn read_cube(path: &Path, allow_conversion: bool) -> Result<(CubeHeader, HsiCube)> {
    let header = read_header(path)?;
    let dtype = Dtype::parse(&header.dtype)?;
    if !allow_conversion && dtype != Dtype::F32 {
        return Err(HsiError::UnsupportedDtype(header.dtype.clone()));
    }
    let (_, raw_path) = cube_paths(path);
    let bytes = fs::read(&raw_path).map_err(|e| HsiError::io(&raw_path, e))?;
    let expected = header.len() * dtype.size();
    if bytes.len() != expected {
        return Err(HsiError::SizeMismatch { expected, actual: bytes.len() });
    }

    let (h, w, b) = (header.height, header.width, header.bands);
    let mut data = vec![0.0f32; header.len()];
    for (k, chunk) in bytes.chunks_exact(dtype.size()).enumerate() {
        let (r, c, band) = match header.interleave {
            Interleave::Bsq => (k / w % h, k % w, k / (w * h)),
            Interleave::Bil => (k / (w * b), k % w, k / w % b),
            Interleave::Bip => (k / (w * b), k / b % w, k % b),
        };
        data[(r * w + c) * b + band] = dtype.decode(chunk, header.order);
    }
    let cube = HsiCube::from_vec(h, w, b, data)?;
    Ok((header, cube))
}

/// Loads an `f32` cube in the native format, transposing to `(row, col, band)`.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    read_cube(path.as_ref(), false).map(|(_, c)| c)
}

/// Writes `cube` as `<stem>.json` + `<stem>.raw` (little-endian `f32`, `bsq`).
pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    save_cube_with_header(cube, cube.header(), path.as_ref())
}

fn save_cube_with_header(cube: &HsiCube, mut header: CubeHeader, path: &Path) -> Result<()> {
    header.dtype = "f32".into();
    header.order = ByteOrder::Little;
    header.interleave = Interleave::Bsq;
    let (header_path, raw_path) = cube_paths(path);
    if let Some(dir) = header_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HsiError::io(dir, e))?;
    }
    let (h, w, b) = cube.shape();
    let mut bytes = Vec::with_capacity(cube.len() * 4);
    for band in 0..b {
        for r in 0..h {
            for c in 0..w {
                bytes.extend_from_slice(&cube.get(r, c, band).to_le_bytes());
            }
        }
    }
    fs::write(&raw_path, bytes).map_err(|e| HsiError::io(&raw_path, e))?;
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&header_path, text).map_err(|e| HsiError::io(&header_path, e))?;
    Ok(())
}

/// Re-encodes any supported native cube (any dtype, byte order or interleave)
/// as canonical little-endian `f32` `bsq`. Wavelengths are carried over.
pub fn convert_cube(input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<CubeHeader> {
    let (header, cube) = read_cube(input.as_ref(), true)?;
    let mut out = cube.header();
    out.wavelengths = header.wavelengths;
    save_cube_with_header(&cube, out.clone(), output.as_ref())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_affine_map() {
        let c = HsiCube::from_vec(1, 3, 1, vec![0.0, 5.0, 10.0]).unwrap();
        let n = normalize(&c);
        assert_eq!(n.as_slice(), &[0.0, 0.5, 1.0]);
        assert!(n.is_normalized());
    }

    #[test]
    fn normalize_identity_on_unit_range() {
        let c = HsiCube::from_vec(2, 2, 1, vec![0.0, 0.25, 0.7, 1.0]).unwrap();
        assert_eq!(normalize(&c).as_slice(), c.as_slice());
    }

    #[test]
    fn normalize_constant_cube_is_zero() {
        let c = HsiCube::from_vec(2, 2, 2, vec![7.0; 8]).unwrap();
        assert!(normalize(&c).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn devectorize_rejects_wrong_length() {
        let h = CubeHeader::new(2, 2, 1);
        assert!(matches!(
            devectorize(&[0.0; 5], &h),
            Err(HsiError::LengthMismatch { expected: 4, actual: 5 })
        ));
        let c = devectorize(&[1.0, 2.0, 3.0, 4.0], &h).unwrap();
        assert_eq!(vectorize(&c), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dc_segment_element_count() {
        assert_eq!(CubeHeader::new(200, 200, 191).len(), 7_640_000);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            HsiCube::from_vec(1, 2, 1, vec![0.0, f32::NAN]),
            Err(HsiError::NonFinite(1))
        ));
    }

    #[test]
    fn crop_bounds_checked() {
        let c = HsiCube::zeros(4, 4, 3).unwrap();
        assert!(c.crop(2, 2, 3, 2, &[0]).is_err());
        assert!(c.crop(0, 0, 2, 2, &[3]).is_err());
        let k = c.crop(1, 1, 2, 3, &[2, 0]).unwrap();
        assert_eq!(k.shape(), (2, 3, 2));
    }

    #[test]
    fn evenly_spaced_band_selection() {
        assert_eq!(evenly_spaced_bands(191, 2), vec![0, 190]);
        assert_eq!(evenly_spaced_bands(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(evenly_spaced_bands(11, 3), vec![0, 5, 10]);
        assert_eq!(evenly_spaced_bands(191, 16).len(), 16);
    }

    #[test]
    fn band_plane_extracts_row_major() {
        let c = HsiCube::from_fn(2, 3, 2, |r, col, b| (r * 10 + col) as f32 + 100.0 * b as f32).unwrap();
        assert_eq!(c.band_plane(1), vec![100.0, 101.0, 102.0, 110.0, 111.0, 112.0]);
    }
}
