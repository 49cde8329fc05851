//! Deformable registration by direct displacement-field optimization.
//!
//! The deformation is `phi = id + u` for a dense voxel-unit displacement
//! field `u`. Warping resamples the moving volume at `p + u(p)` with
//! trilinear interpolation, the loss combines a forward-difference smoothness
//! penalty with a gamma-weighted mean-squared similarity term, and the field
//! is fitted by fixed-step gradient descent with backtracking so the loss
//! trace is monotone non-increasing.
//!
//! All arithmetic is f64; gradients are exact for the discretized objective
//! and are validated against central finite differences in the tests.

use crate::volume::{cell_weights, LabelVolume, PeakVolume, VolumeError, VolumeHeader, ORDER_TAG};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },
    #[error("invalid registration config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Dense voxel-unit displacement field, components (dx, dy, dz) fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl DisplacementField {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self, RegistrationError> {
        let expected = dims[0] * dims[1] * dims[2] * 3;
        if data.len() != expected {
            return Err(RegistrationError::DimMismatch(format!(
                "field data length {} does not match {:?} x 3",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * 3],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize, component: usize) -> usize {
        ((z * self.dims[1] + y) * self.dims[0] + x) * 3 + component
    }

    #[inline]
    pub fn vector(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let i = self.idx(x, y, z, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_vector(&mut self, x: usize, y: usize, z: usize, v: [f64; 3]) {
        let i = self.idx(x, y, z, 0);
        self.data[i] = v[0];
        self.data[i + 1] = v[1];
        self.data[i + 2] = v[2];
    }

    /// Largest voxel displacement magnitude in the field.
    pub fn max_magnitude(&self) -> f64 {
        self.data
            .chunks_exact(3)
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Optimizer settings for one registration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RegistrationConfig {
    /// Balance on the similarity term: loss = smooth + gamma * sim.
    pub gamma: f64,
    /// Initial gradient-descent step, halved on loss increase.
    pub step_size: f64,
    /// Iteration cap; 0 returns the zero field untouched.
    pub max_iters: usize,
    /// Early stop when the relative loss decrease falls below this.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            gamma: 0.02,
            step_size: 0.25,
            max_iters: 200,
            rel_tol: 1e-6,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.gamma <= 0.0 || !self.gamma.is_finite() {
            return Err(RegistrationError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.step_size <= 0.0 || !self.step_size.is_finite() {
            return Err(RegistrationError::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.rel_tol < 0.0 || !self.rel_tol.is_finite() {
            return Err(RegistrationError::InvalidConfig(format!(
                "rel_tol must be nonnegative, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

fn check_dims(a: [usize; 3], b: [usize; 3], what: &str) -> Result<(), RegistrationError> {
    if a != b {
        return Err(RegistrationError::DimMismatch(format!(
            "{what}: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

/// Resamples `vol` at `p + u(p)` for every voxel `p`.
pub fn warp(vol: &PeakVolume, field: &DisplacementField) -> Result<PeakVolume, RegistrationError> {
    check_dims(vol.dims(), field.dims(), "warp volume vs field")?;
    let [xd, yd, zd] = vol.dims();
    let channels = vol.channels();
    let mut out = PeakVolume::zeros(vol.dims(), channels);
    for z in 0..zd {
        for y in 0..yd {
            for x in 0..xd {
                let u = field.vector(x, y, z);
                let q = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
                let base = out.idx(x, y, z, 0);
                let dst = &mut out.data_mut()[base..base + channels];
                vol.sample_trilinear_into(q, dst);
            }
        }
    }
    Ok(out)
}

/// Warps labels per class as real values, then binarizes at 0.5.
pub fn warp_labels(
    lab: &LabelVolume,
    field: &DisplacementField,
) -> Result<LabelVolume, RegistrationError> {
    check_dims(lab.dims(), field.dims(), "warp labels vs field")?;
    let warped = warp(&lab.to_real(), field)?;
    Ok(LabelVolume::from_real_threshold(&warped, 0.5))
}

/// Sum over voxels of the squared Frobenius norm of the forward-difference
/// Jacobian of the field; differences at the far boundary count as zero.
pub fn smooth_loss(field: &DisplacementField) -> f64 {
    let [xd, yd, zd] = field.dims();
    let mut total = 0.0;
    for z in 0..zd {
        for y in 0..yd {
            for x in 0..xd {
                let here = field.vector(x, y, z);
                if x + 1 < xd {
                    let next = field.vector(x + 1, y, z);
                    for m in 0..3 {
                        let d = next[m] - here[m];
                        total += d * d;
                    }
                }
                if y + 1 < yd {
                    let next = field.vector(x, y + 1, z);
                    for m in 0..3 {
                        let d = next[m] - here[m];
                        total += d * d;
                    }
                }
                if z + 1 < zd {
                    let next = field.vector(x, y, z + 1);
                    for m in 0..3 {
                        let d = next[m] - here[m];
                        total += d * d;
                    }
                }
            }
        }
    }
    total
}

/// Mean over all voxel-channel elements of the squared difference.
pub fn sim_loss(moved: &PeakVolume, target: &PeakVolume) -> Result<f64, RegistrationError> {
    check_dims(moved.dims(), target.dims(), "sim_loss")?;
    if moved.channels() != target.channels() {
        return Err(RegistrationError::DimMismatch(format!(
            "sim_loss channels: {} vs {}",
            moved.channels(),
            target.channels()
        )));
    }
    let mut total = 0.0;
    for (a, b) in moved.data().iter().zip(target.data()) {
        let d = b - a;
        total += d * d;
    }
    Ok(total / moved.data().len() as f64)
}

/// Combined registration objective: `smooth_loss(u) + gamma * sim_loss(x o phi, y)`.
pub fn reg_loss(
    field: &DisplacementField,
    moving: &PeakVolume,
    target: &PeakVolume,
    gamma: f64,
) -> Result<f64, RegistrationError> {
    let moved = warp(moving, field)?;
    Ok(smooth_loss(field) + gamma * sim_loss(&moved, target)?)
}

/// Exact gradient of [`reg_loss`] with respect to every field component.
///
/// The similarity term is differentiated through the trilinear weights; axes
/// whose sampling coordinate is clamped at the border contribute nothing.
pub fn grad_reg_loss(
    field: &DisplacementField,
    moving: &PeakVolume,
    target: &PeakVolume,
    gamma: f64,
) -> Result<DisplacementField, RegistrationError> {
    check_dims(field.dims(), moving.dims(), "grad field vs moving")?;
    check_dims(moving.dims(), target.dims(), "grad moving vs target")?;
    if moving.channels() != target.channels() {
        return Err(RegistrationError::DimMismatch(format!(
            "grad channels: {} vs {}",
            moving.channels(),
            target.channels()
        )));
    }
    let [xd, yd, zd] = field.dims();
    let channels = moving.channels();
    let mut grad = DisplacementField::zeros(field.dims());

    // Smoothness term: quadratic form in the forward differences.
    for z in 0..zd {
        for y in 0..yd {
            for x in 0..xd {
                let here = field.vector(x, y, z);
                let mut g = [0.0; 3];
                if x + 1 < xd {
                    let next = field.vector(x + 1, y, z);
                    for m in 0..3 {
                        g[m] -= 2.0 * (next[m] - here[m]);
                    }
                }
                if x >= 1 {
                    let prev = field.vector(x - 1, y, z);
                    for m in 0..3 {
                        g[m] += 2.0 * (here[m] - prev[m]);
                    }
                }
                if y + 1 < yd {
                    let next = field.vector(x, y + 1, z);
                    for m in 0..3 {
                        g[m] -= 2.0 * (next[m] - here[m]);
                    }
                }
                if y >= 1 {
                    let prev = field.vector(x, y - 1, z);
                    for m in 0..3 {
                        g[m] += 2.0 * (here[m] - prev[m]);
                    }
                }
                if z + 1 < zd {
                    let next = field.vector(x, y, z + 1);
                    for m in 0..3 {
                        g[m] -= 2.0 * (next[m] - here[m]);
                    }
                }
                if z >= 1 {
                    let prev = field.vector(x, y, z - 1);
                    for m in 0..3 {
                        g[m] += 2.0 * (here[m] - prev[m]);
                    }
                }
                grad.set_vector(x, y, z, g);
            }
        }
    }

    // Similarity term: chain rule through the interpolation weights.
    let scale = 2.0 * gamma / (moving.data().len() as f64);
    let mut value = vec![0.0; channels];
    let mut dvalue = vec![[0.0; 3]; channels];
    for z in 0..zd {
        for y in 0..yd {
            for x in 0..xd {
                let u = field.vector(x, y, z);
                let q = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
                sample_with_gradient(moving, q, &mut value, &mut dvalue);
                let gi = grad.idx(x, y, z, 0);
                for c in 0..channels {
                    let diff = value[c] - target.get(x, y, z, c);
                    let coeff = scale * diff;
                    grad.data[gi] += coeff * dvalue[c][0];
                    grad.data[gi + 1] += coeff * dvalue[c][1];
                    grad.data[gi + 2] += coeff * dvalue[c][2];
                }
            }
        }
    }
    Ok(grad)
}

/// Trilinear sample with per-channel partial derivatives w.r.t. the sample
/// point. The value accumulation mirrors `sample_trilinear_into` corner for
/// corner so both paths agree to the last bit.
fn sample_with_gradient(
    vol: &PeakVolume,
    point: [f64; 3],
    value: &mut [f64],
    dvalue: &mut [[f64; 3]],
) {
    let cw = cell_weights(vol.dims(), point);
    value.fill(0.0);
    for d in dvalue.iter_mut() {
        *d = [0.0; 3];
    }
    for (zc, wz, sz) in [(cw.z0, 1.0 - cw.tz, -1.0), (cw.z1, cw.tz, 1.0)] {
        for (yc, wy, sy) in [(cw.y0, 1.0 - cw.ty, -1.0), (cw.y1, cw.ty, 1.0)] {
            for (xc, wx, sx) in [(cw.x0, 1.0 - cw.tx, -1.0), (cw.x1, cw.tx, 1.0)] {
                let w = wz * wy * wx;
                let base = vol.idx(xc, yc, zc, 0);
                for c in 0..value.len() {
                    let v = vol.data()[base + c];
                    value[c] += w * v;
                    dvalue[c][0] += wz * wy * sx * v;
                    dvalue[c][1] += wz * sy * wx * v;
                    dvalue[c][2] += sz * wy * wx * v;
                }
            }
        }
    }
    for d in dvalue.iter_mut() {
        for (m, inside) in cw.inside.iter().enumerate() {
            if !inside {
                d[m] = 0.0;
            }
        }
    }
}

/// Fits a displacement field registering `moving` onto `target`.
///
/// The field starts at zero and descends the combined loss with a fixed step,
/// halving the step up to 20 times within an iteration whenever the trial
/// loss increases. Returns the field and the per-iteration loss trace
/// (trace[0] is the zero-field loss); the trace never increases.
pub fn optimize_registration(
    moving: &PeakVolume,
    target: &PeakVolume,
    cfg: &RegistrationConfig,
) -> Result<(DisplacementField, Vec<f64>), RegistrationError> {
    cfg.validate()?;
    check_dims(moving.dims(), target.dims(), "optimize_registration")?;
    let mut field = DisplacementField::zeros(moving.dims());
    let mut loss = reg_loss(&field, moving, target, cfg.gamma)?;
    if !loss.is_finite() {
        return Err(RegistrationError::NonFiniteLoss { iter: 0 });
    }
    let mut trace = vec![loss];
    let mut trial = field.clone();
    for iter in 0..cfg.max_iters {
        let grad = grad_reg_loss(&field, moving, target, cfg.gamma)?;
        let mut step = cfg.step_size;
        let mut accepted = false;
        // Initial step plus up to 20 halvings.
        for _ in 0..=20 {
            for (t, (f, g)) in trial
                .data
                .iter_mut()
                .zip(field.data.iter().zip(grad.data.iter()))
            {
                *t = f - step * g;
            }
            let trial_loss = reg_loss(&trial, moving, target, cfg.gamma)?;
            if !trial_loss.is_finite() {
                return Err(RegistrationError::NonFiniteLoss { iter });
            }
            if trial_loss <= loss {
                std::mem::swap(&mut field, &mut trial);
                let drop = loss - trial_loss;
                let rel = if loss > 0.0 { drop / loss } else { 0.0 };
                loss = trial_loss;
                trace.push(loss);
                accepted = true;
                if rel < cfg.rel_tol {
                    return Ok((field, trace));
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent direction at any step size; the field is at a
            // numerical stationary point.
            break;
        }
    }
    Ok((field, trace))
}

// Displacement fields reuse the volume file format with three channels and a
// "displacement" kind marker.
pub fn save_field(field: &DisplacementField, path: &Path) -> Result<(), VolumeError> {
    crate::volume::write_f32_volume(
        path,
        field.dims(),
        3,
        Some("displacement"),
        field.data(),
    )
}

pub fn load_field(path: &Path) -> Result<DisplacementField, RegistrationError> {
    let (header, data) = crate::volume::read_f32_volume(path)?;
    expect_kind(&header, "displacement", path)?;
    if header.channels != 3 {
        return Err(RegistrationError::DimMismatch(format!(
            "displacement field has {} channels",
            header.channels
        )));
    }
    DisplacementField::new(header.dims, data)
}

fn expect_kind(
    header: &VolumeHeader,
    kind: &str,
    path: &Path,
) -> Result<(), RegistrationError> {
    if header.order != ORDER_TAG || header.kind.as_deref() != Some(kind) {
        return Err(RegistrationError::Volume(VolumeError::MalformedHeader {
            path: path.display().to_string(),
            reason: format!("expected kind {kind:?}, found {:?}", header.kind),
        }));
    }
    Ok(())
}
