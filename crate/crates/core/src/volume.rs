//! Dense multi-channel 3D volumes.
//!
//! Canonical memory layout is channel-fastest, then x, then y, then z:
//! `data[((z * Y + y) * X + x) * C + c]`. Every module in the crate relies on
//! this layout so raw buffers can be compared directly in tests.
//!
//! Out-of-bounds sampling clamps coordinates to the volume border (border
//! replication) rather than zero-filling, so warping never bleeds artificial
//! zeros in at the boundary.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid volume shape: {0}")]
    InvalidShape(String),
    #[error("slice shape mismatch: {0}")]
    SliceMismatch(String),
    #[error("empty slice list")]
    EmptySlices,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: String, reason: String },
    #[error("payload length mismatch: header implies {expected} values, payload holds {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("label element {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: u8 },
    #[error("dtype mismatch: expected {expected}, found {actual}")]
    DtypeMismatch { expected: &'static str, actual: String },
}

/// Multi-channel volume of real values (peaks, predictions, any float data).
#[derive(Debug, Clone, PartialEq)]
pub struct PeakVolume {
    dims: [usize; 3],
    channels: usize,
    data: Vec<f64>,
}

impl PeakVolume {
    pub fn new(dims: [usize; 3], channels: usize, data: Vec<f64>) -> Result<Self, VolumeError> {
        check_shape(dims, channels)?;
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(VolumeError::InvalidShape(format!(
                "data length {} does not match {}x{}x{}x{}",
                data.len(),
                dims[0],
                dims[1],
                dims[2],
                channels
            )));
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        let len = dims[0] * dims[1] * dims[2] * channels;
        Self {
            dims,
            channels,
            data: vec![0.0; len],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat index of `(x, y, z, c)` in canonical layout.
    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        ((z * self.dims[1] + y) * self.dims[0] + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, z, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, c: usize, value: f64) {
        let i = self.idx(x, y, z, c);
        self.data[i] = value;
    }

    /// Trilinear sample of all channels at a voxel-space point.
    ///
    /// Coordinates outside the volume are clamped to the border, so this is a
    /// total function of any finite point.
    pub fn sample_trilinear(&self, point: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample_trilinear_into(point, &mut out);
        out
    }

    pub fn sample_trilinear_into(&self, point: [f64; 3], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let cw = cell_weights(self.dims, point);
        out.fill(0.0);
        for (zc, wz) in [(cw.z0, 1.0 - cw.tz), (cw.z1, cw.tz)] {
            for (yc, wy) in [(cw.y0, 1.0 - cw.ty), (cw.y1, cw.ty)] {
                for (xc, wx) in [(cw.x0, 1.0 - cw.tx), (cw.x1, cw.tx)] {
                    let w = wz * wy * wx;
                    let base = self.idx(xc, yc, zc, 0);
                    for (c, o) in out.iter_mut().enumerate() {
                        *o += w * self.data[base + c];
                    }
                }
            }
        }
    }
}

/// Interpolation cell for a (possibly out-of-bounds) sample point.
///
/// `inside` is per axis: true when the raw coordinate lies strictly inside
/// the domain, i.e. the sampled value actually moves with the coordinate.
/// Clamped axes contribute zero gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellWeights {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub inside: [bool; 3],
}

pub(crate) fn cell_weights(dims: [usize; 3], point: [f64; 3]) -> CellWeights {
    let (x0, x1, tx, ix) = axis_cell(dims[0], point[0]);
    let (y0, y1, ty, iy) = axis_cell(dims[1], point[1]);
    let (z0, z1, tz, iz) = axis_cell(dims[2], point[2]);
    CellWeights {
        x0,
        x1,
        y0,
        y1,
        z0,
        z1,
        tx,
        ty,
        tz,
        inside: [ix, iy, iz],
    }
}

#[inline]
fn axis_cell(dim: usize, coord: f64) -> (usize, usize, f64, bool) {
    debug_assert!(coord.is_finite());
    let max = (dim - 1) as f64;
    let clamped = coord.clamp(0.0, max);
    if dim == 1 {
        return (0, 0, 0.0, false);
    }
    let mut i0 = clamped.floor() as usize;
    if i0 > dim - 2 {
        i0 = dim - 2;
    }
    let t = clamped - i0 as f64;
    (i0, i0 + 1, t, coord > 0.0 && coord < max)
}

fn check_shape(dims: [usize; 3], channels: usize) -> Result<(), VolumeError> {
    if dims.contains(&0) || channels == 0 {
        return Err(VolumeError::InvalidShape(format!(
            "dims {:?} x {} channels must all be positive",
            dims, channels
        )));
    }
    Ok(())
}

/// Multi-class binary label volume, one byte per element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: [usize; 3],
    classes: usize,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], classes: usize, data: Vec<u8>) -> Result<Self, VolumeError> {
        check_shape(dims, classes)?;
        let expected = dims[0] * dims[1] * dims[2] * classes;
        if data.len() != expected {
            return Err(VolumeError::InvalidShape(format!(
                "label data length {} does not match {:?} x {}",
                data.len(),
                dims,
                classes
            )));
        }
        for (index, &value) in data.iter().enumerate() {
            if value > 1 {
                return Err(VolumeError::InvalidLabel { index, value });
            }
        }
        Ok(Self {
            dims,
            classes,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], classes: usize) -> Self {
        let len = dims[0] * dims[1] * dims[2] * classes;
        Self {
            dims,
            classes,
            data: vec![0; len],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        ((z * self.dims[1] + y) * self.dims[0] + x) * self.classes + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> u8 {
        self.data[self.idx(x, y, z, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, c: usize, value: u8) {
        debug_assert!(value <= 1);
        let i = self.idx(x, y, z, c);
        self.data[i] = value;
    }

    /// Casts labels to a real volume (0.0 / 1.0), e.g. for interpolation.
    pub fn to_real(&self) -> PeakVolume {
        PeakVolume {
            dims: self.dims,
            channels: self.classes,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Thresholds a real volume back into labels: `value >= threshold` is 1.
    pub fn from_real_threshold(vol: &PeakVolume, threshold: f64) -> Self {
        Self {
            dims: vol.dims,
            classes: vol.channels,
            data: vol
                .data
                .iter()
                .map(|&v| u8::from(v >= threshold))
                .collect(),
        }
    }

    pub fn count_positive(&self, class: usize) -> usize {
        debug_assert!(class < self.classes);
        self.data[class..]
            .iter()
            .step_by(self.classes)
            .filter(|&&v| v == 1)
            .count()
    }
}

/// Anatomical slicing planes mapped onto array axes 0 / 2 / 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlaneAxis {
    /// Fixed x (axis 0).
    Sagittal,
    /// Fixed z (axis 2).
    Axial,
    /// Fixed y (axis 1).
    Coronal,
}

impl PlaneAxis {
    pub const ALL: [PlaneAxis; 3] = [PlaneAxis::Sagittal, PlaneAxis::Axial, PlaneAxis::Coronal];

    /// Array axis held fixed by this plane.
    #[inline]
    pub fn axis(self) -> usize {
        match self {
            PlaneAxis::Sagittal => 0,
            PlaneAxis::Axial => 2,
            PlaneAxis::Coronal => 1,
        }
    }

    /// Number of slices along this plane for the given dims.
    #[inline]
    pub fn extent(self, dims: [usize; 3]) -> usize {
        dims[self.axis()]
    }

    /// In-plane axes in (width, height) order: the remaining axes ascending.
    #[inline]
    pub fn in_plane_axes(self) -> (usize, usize) {
        match self {
            PlaneAxis::Sagittal => (1, 2),
            PlaneAxis::Axial => (0, 1),
            PlaneAxis::Coronal => (0, 2),
        }
    }

    /// Maps (slice index, in-plane w, in-plane h) back to (x, y, z).
    #[inline]
    pub fn to_voxel(self, index: usize, w: usize, h: usize) -> (usize, usize, usize) {
        match self {
            PlaneAxis::Sagittal => (index, w, h),
            PlaneAxis::Axial => (w, h, index),
            PlaneAxis::Coronal => (w, index, h),
        }
    }
}

/// One 2D slice of a volume, channel-fastest then width then height.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub plane: PlaneAxis,
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Slice2D {
    #[inline]
    pub fn idx(&self, w: usize, h: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, w: usize, h: usize, c: usize) -> f64 {
        self.data[self.idx(w, h, c)]
    }
}

/// Decomposes a volume into ordered 2D slices along a plane.
pub fn extract_slices(vol: &PeakVolume, plane: PlaneAxis) -> Vec<Slice2D> {
    let dims = vol.dims();
    let (wa, ha) = plane.in_plane_axes();
    let (width, height) = (dims[wa], dims[ha]);
    let channels = vol.channels();
    let mut slices = Vec::with_capacity(plane.extent(dims));
    for index in 0..plane.extent(dims) {
        let mut data = vec![0.0; width * height * channels];
        for h in 0..height {
            for w in 0..width {
                let (x, y, z) = plane.to_voxel(index, w, h);
                let src = vol.idx(x, y, z, 0);
                let dst = (h * width + w) * channels;
                data[dst..dst + channels].copy_from_slice(&vol.data()[src..src + channels]);
            }
        }
        slices.push(Slice2D {
            plane,
            index,
            width,
            height,
            channels,
            data,
        });
    }
    slices
}

/// Reassembles slices produced by [`extract_slices`]; exact inverse.
pub fn assemble_slices(slices: &[Slice2D], plane: PlaneAxis) -> Result<PeakVolume, VolumeError> {
    let first = slices.first().ok_or(VolumeError::EmptySlices)?;
    let (width, height, channels) = (first.width, first.height, first.channels);
    for (i, s) in slices.iter().enumerate() {
        if s.width != width || s.height != height || s.channels != channels {
            return Err(VolumeError::SliceMismatch(format!(
                "slice {} is {}x{}x{}, expected {}x{}x{}",
                i, s.width, s.height, s.channels, width, height, channels
            )));
        }
        if s.index != i || s.plane != plane {
            return Err(VolumeError::SliceMismatch(format!(
                "slice {} carries index {} for plane {:?}",
                i, s.index, s.plane
            )));
        }
        if s.data.len() != width * height * channels {
            return Err(VolumeError::SliceMismatch(format!(
                "slice {} data length {}",
                i,
                s.data.len()
            )));
        }
    }
    let extent = slices.len();
    let (wa, ha) = plane.in_plane_axes();
    let mut dims = [0; 3];
    dims[plane.axis()] = extent;
    dims[wa] = width;
    dims[ha] = height;
    let mut vol = PeakVolume::zeros(dims, channels);
    for (index, s) in slices.iter().enumerate() {
        for h in 0..height {
            for w in 0..width {
                let (x, y, z) = plane.to_voxel(index, w, h);
                let dst = vol.idx(x, y, z, 0);
                let src = (h * width + w) * channels;
                vol.data[dst..dst + channels].copy_from_slice(&s.data[src..src + channels]);
            }
        }
    }
    Ok(vol)
}

// ---------------------------------------------------------------------------
// File format: `<name>.vol.json` header + `<name>.vol.bin` little-endian
// payload in canonical layout. dtype "f32" for real volumes, "u8" for labels.
// ---------------------------------------------------------------------------

pub const ORDER_TAG: &str = "c-fastest-xyz";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub channels: usize,
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

/// Resolves `<base>`, `<base>.vol.json`, or `<base>.vol.bin` to the header
/// and payload paths.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = if let Some(stripped) = s.strip_suffix(".vol.json") {
        stripped.to_string()
    } else if let Some(stripped) = s.strip_suffix(".vol.bin") {
        stripped.to_string()
    } else {
        s.into_owned()
    };
    (
        PathBuf::from(format!("{base}.vol.json")),
        PathBuf::from(format!("{base}.vol.bin")),
    )
}

pub fn write_header(path: &Path, header: &VolumeHeader) -> Result<(), VolumeError> {
    let text = serde_json::to_string(header).expect("header serialization cannot fail");
    fs::write(path, text)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<VolumeHeader, VolumeError> {
    let text = fs::read_to_string(path)?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| VolumeError::MalformedHeader {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    if header.order != ORDER_TAG {
        return Err(VolumeError::MalformedHeader {
            path: path.display().to_string(),
            reason: format!("unsupported order {:?}", header.order),
        });
    }
    if header.dims.contains(&0) || header.channels == 0 {
        return Err(VolumeError::MalformedHeader {
            path: path.display().to_string(),
            reason: format!("non-positive dims {:?} x {}", header.dims, header.channels),
        });
    }
    Ok(header)
}

/// Writes an f32 volume file from f64 data (values are narrowed to f32).
pub fn write_f32_volume(
    path: &Path,
    dims: [usize; 3],
    channels: usize,
    kind: Option<&str>,
    data: &[f64],
) -> Result<(), VolumeError> {
    let (header_path, bin_path) = volume_paths(path);
    let header = VolumeHeader {
        dims,
        channels,
        dtype: "f32".to_string(),
        order: ORDER_TAG.to_string(),
        kind: kind.map(str::to_string),
    };
    write_header(&header_path, &header)?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&bin_path, bytes)?;
    Ok(())
}

/// Reads an f32 payload back into f64 data, validating length and finiteness.
pub fn read_f32_volume(path: &Path) -> Result<(VolumeHeader, Vec<f64>), VolumeError> {
    let (header_path, bin_path) = volume_paths(path);
    let header = read_header(&header_path)?;
    if header.dtype != "f32" {
        return Err(VolumeError::DtypeMismatch {
            expected: "f32",
            actual: header.dtype.clone(),
        });
    }
    let bytes = fs::read(&bin_path)?;
    let expected = header.dims[0] * header.dims[1] * header.dims[2] * header.channels;
    if bytes.len() != expected * 4 {
        return Err(VolumeError::TruncatedPayload {
            expected,
            actual: bytes.len() / 4,
        });
    }
    let mut data = Vec::with_capacity(expected);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(VolumeError::NonFinite { index });
        }
        data.push(f64::from(v));
    }
    Ok((header, data))
}

pub fn save_volume(vol: &PeakVolume, path: &Path) -> Result<(), VolumeError> {
    write_f32_volume(path, vol.dims(), vol.channels(), None, vol.data())
}

pub fn load_peaks(path: &Path) -> Result<PeakVolume, VolumeError> {
    let (header, data) = read_f32_volume(path)?;
    PeakVolume::new(header.dims, header.channels, data)
}

pub fn save_labels(lab: &LabelVolume, path: &Path) -> Result<(), VolumeError> {
    let (header_path, bin_path) = volume_paths(path);
    let header = VolumeHeader {
        dims: lab.dims(),
        channels: lab.classes(),
        dtype: "u8".to_string(),
        order: ORDER_TAG.to_string(),
        kind: None,
    };
    write_header(&header_path, &header)?;
    fs::write(&bin_path, lab.data())?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<LabelVolume, VolumeError> {
    let (header_path, bin_path) = volume_paths(path);
    let header = read_header(&header_path)?;
    if header.dtype != "u8" {
        return Err(VolumeError::DtypeMismatch {
            expected: "u8",
            actual: header.dtype.clone(),
        });
    }
    let bytes = fs::read(&bin_path)?;
    let expected = header.dims[0] * header.dims[1] * header.dims[2] * header.channels;
    if bytes.len() != expected {
        return Err(VolumeError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    LabelVolume::new(header.dims, header.channels, bytes)
}

/// A volume file of either dtype, dispatched on the header.
#[derive(Debug, Clone)]
pub enum LoadedVolume {
    Peaks(PeakVolume),
    Labels(LabelVolume),
}

pub fn load_volume(path: &Path) -> Result<LoadedVolume, VolumeError> {
    let (header_path, _) = volume_paths(path);
    let header = read_header(&header_path)?;
    match header.dtype.as_str() {
        "f32" => Ok(LoadedVolume::Peaks(load_peaks(path)?)),
        "u8" => Ok(LoadedVolume::Labels(load_labels(path)?)),
        other => Err(VolumeError::MalformedHeader {
            path: header_path.display().to_string(),
            reason: format!("unknown dtype {other:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn ramp_volume(dims: [usize; 3], channels: usize) -> PeakVolume {
        let mut vol = PeakVolume::zeros(dims, channels);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    for c in 0..channels {
                        vol.set(x, y, z, c, (x + 10 * y + 100 * z) as f64 + 0.25 * c as f64);
                    }
                }
            }
        }
        vol
    }

    fn random_volume(rng: &mut StdRng, dims: [usize; 3], channels: usize) -> PeakVolume {
        let len = dims[0] * dims[1] * dims[2] * channels;
        let data = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        PeakVolume::new(dims, channels, data).unwrap()
    }

    #[test]
    fn sample_at_integer_point_is_exact() {
        let vol = ramp_volume([4, 3, 5], 2);
        let got = vol.sample_trilinear([2.0, 1.0, 3.0]);
        assert_eq!(got[0], vol.get(2, 1, 3, 0));
        assert_eq!(got[1], vol.get(2, 1, 3, 1));
    }

    #[test]
    fn sample_at_half_point_is_neighbor_mean() {
        let vol = ramp_volume([4, 3, 5], 2);
        let got = vol.sample_trilinear([1.5, 2.0, 4.0]);
        for c in 0..2 {
            let mean = (vol.get(1, 2, 4, c) + vol.get(2, 2, 4, c)) / 2.0;
            assert_eq!(got[c], mean);
        }
    }

    #[test]
    fn sample_out_of_bounds_clamps_to_border() {
        let vol = ramp_volume([4, 3, 5], 1);
        assert_eq!(vol.sample_trilinear([-5.0, 1.0, 2.0])[0], vol.get(0, 1, 2, 0));
        assert_eq!(vol.sample_trilinear([9.75, 1.0, 2.0])[0], vol.get(3, 1, 2, 0));
        assert_eq!(
            vol.sample_trilinear([-2.0, -2.0, -2.0])[0],
            vol.get(0, 0, 0, 0)
        );
    }

    #[test]
    fn sample_exact_at_random_integer_points() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let dims = [
                rng.random_range(1..6),
                rng.random_range(1..6),
                rng.random_range(1..6),
            ];
            let channels = rng.random_range(1..4);
            let vol = random_volume(&mut rng, dims, channels);
            let x = rng.random_range(0..dims[0]);
            let y = rng.random_range(0..dims[1]);
            let z = rng.random_range(0..dims[2]);
            let got = vol.sample_trilinear([x as f64, y as f64, z as f64]);
            for c in 0..channels {
                assert_eq!(got[c], vol.get(x, y, z, c));
            }
        }
    }

    #[test]
    fn sample_is_convex_combination_of_corners() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..200 {
            let vol = random_volume(&mut rng, [5, 4, 3], 2);
            let p = [
                rng.random_range(-1.0..5.0),
                rng.random_range(-1.0..4.0),
                rng.random_range(-1.0..3.0),
            ];
            let cw = cell_weights(vol.dims(), p);
            let got = vol.sample_trilinear(p);
            for c in 0..2 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &zc in &[cw.z0, cw.z1] {
                    for &yc in &[cw.y0, cw.y1] {
                        for &xc in &[cw.x0, cw.x1] {
                            let v = vol.get(xc, yc, zc, c);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
                assert!(got[c] >= lo - 1e-12 && got[c] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn extract_slice_shapes() {
        let vol = ramp_volume([16, 16, 16], 3);
        for plane in PlaneAxis::ALL {
            let slices = extract_slices(&vol, plane);
            assert_eq!(slices.len(), 16);
            for s in &slices {
                assert_eq!((s.width, s.height, s.channels), (16, 16, 3));
            }
        }
    }

    #[test]
    fn extract_assemble_round_trip_all_planes() {
        let mut rng = StdRng::seed_from_u64(13);
        let vol = random_volume(&mut rng, [6, 4, 5], 3);
        for plane in PlaneAxis::ALL {
            let back = assemble_slices(&extract_slices(&vol, plane), plane).unwrap();
            assert_eq!(back, vol);
        }
    }

    #[test]
    fn single_voxel_volume_slices() {
        let vol = PeakVolume::new([1, 1, 1], 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let slices = extract_slices(&vol, PlaneAxis::Axial);
        assert_eq!(slices.len(), 1);
        assert_eq!((slices[0].width, slices[0].height), (1, 1));
        let back = assemble_slices(&slices, PlaneAxis::Axial).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn assemble_empty_list_errors() {
        assert!(matches!(
            assemble_slices(&[], PlaneAxis::Sagittal),
            Err(VolumeError::EmptySlices)
        ));
    }

    #[test]
    fn assemble_mismatched_channels_errors() {
        let vol = ramp_volume([3, 3, 3], 2);
        let mut slices = extract_slices(&vol, PlaneAxis::Coronal);
        slices[1].channels = 5;
        assert!(matches!(
            assemble_slices(&slices, PlaneAxis::Coronal),
            Err(VolumeError::SliceMismatch(_))
        ));
    }

    #[test]
    fn label_volume_rejects_values_above_one() {
        let err = LabelVolume::new([1, 1, 2], 1, vec![0, 3]).unwrap_err();
        assert!(matches!(err, VolumeError::InvalidLabel { index: 1, value: 3 }));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol");
        // f32-representable values survive the narrow/widen loop exactly.
        let vol = PeakVolume::new([2, 2, 1], 2, vec![0.5, -1.25, 3.0, 0.0, 7.5, -0.125, 2.0, 9.0])
            .unwrap();
        save_volume(&vol, &path).unwrap();
        let back = load_peaks(&path).unwrap();
        assert_eq!(back, vol);

        // A second save/load of loaded data must preserve every payload byte.
        let bin_path = volume_paths(&path).1;
        let first_bytes = fs::read(&bin_path).unwrap();
        save_volume(&back, &path).unwrap();
        assert_eq!(fs::read(&bin_path).unwrap(), first_bytes);
    }

    #[test]
    fn file_round_trip_random_f32_data() {
        let mut rng = StdRng::seed_from_u64(14);
        let dir = tempfile::tempdir().unwrap();
        for i in 0..20 {
            let dims = [
                rng.random_range(1..5),
                rng.random_range(1..5),
                rng.random_range(1..5),
            ];
            let channels = rng.random_range(1..4);
            let len = dims[0] * dims[1] * dims[2] * channels;
            let data: Vec<f64> = (0..len)
                .map(|_| f64::from(rng.random_range(-10.0f32..10.0f32)))
                .collect();
            let vol = PeakVolume::new(dims, channels, data).unwrap();
            let path = dir.path().join(format!("v{i}"));
            save_volume(&vol, &path).unwrap();
            assert_eq!(load_peaks(&path).unwrap(), vol);
        }
    }

    #[test]
    fn label_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab");
        let lab = LabelVolume::new([2, 1, 2], 2, vec![1, 0, 0, 1, 1, 1, 0, 0]).unwrap();
        save_labels(&lab, &path).unwrap();
        assert_eq!(load_labels(&path).unwrap(), lab);
        match load_volume(&path).unwrap() {
            LoadedVolume::Labels(back) => assert_eq!(back, lab),
            LoadedVolume::Peaks(_) => panic!("dtype dispatch failed"),
        }
    }

    #[test]
    fn truncated_payload_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol");
        let vol = PeakVolume::zeros([2, 2, 2], 1);
        save_volume(&vol, &path).unwrap();
        let bin_path = volume_paths(&path).1;
        let mut bytes = fs::read(&bin_path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&bin_path, bytes).unwrap();
        assert!(matches!(
            load_peaks(&path),
            Err(VolumeError::TruncatedPayload { expected: 8, actual: 7 })
        ));
    }

    #[test]
    fn nan_payload_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol");
        let vol = PeakVolume::zeros([2, 1, 1], 1);
        save_volume(&vol, &path).unwrap();
        let bin_path = volume_paths(&path).1;
        let mut bytes = fs::read(&bin_path).unwrap();
        bytes[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&bin_path, bytes).unwrap();
        assert!(matches!(
            load_peaks(&path),
            Err(VolumeError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn malformed_header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.vol.json");
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(
            read_header(&path),
            Err(VolumeError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn header_serialization_matches_format() {
        let header = VolumeHeader {
            dims: [4, 5, 6],
            channels: 3,
            dtype: "f32".to_string(),
            order: ORDER_TAG.to_string(),
            kind: None,
        };
        let text = serde_json::to_string(&header).unwrap();
        assert_eq!(
            text,
            r#"{"dims":[4,5,6],"channels":3,"dtype":"f32","order":"c-fastest-xyz"}"#
        );
    }
}
