//! Synthetic tube phantoms with exact ground truth.
//!
//! An atlas holds a handful of smooth tubular tracts; voxels inside a tube
//! carry that tube's unit tangent as their peak vector and a positive label
//! for the tract class. Cohort members are deformed copies of the atlas
//! (independent random smooth fields) with additive clipped Gaussian noise on
//! the peaks; the generating field also warps the truth labels, so every
//! member's ground truth is exact by construction. Exactly one training
//! member exposes its labels; the rest of the training split exposes peaks
//! only, and the test split retains truth for evaluation.
//!
//! All tracts run monotonically along x with sinusoidal lateral offsets, so
//! tangent directions overlap across tracts and per-voxel classification
//! stays genuinely ambiguous without patch context.

use crate::registration::{warp, warp_labels, DisplacementField};
use crate::rpa::LabeledSubject;
use crate::seed::derive_seed;
use crate::volume::{LabelVolume, PeakVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error("cohort size {0} too small: need labeled + unlabeled + test")]
    CohortTooSmall(usize),
    #[error(transparent)]
    Registration(#[from] crate::registration::RegistrationError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error {path}: {reason}")]
    Manifest { path: String, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub n_tracts: usize,
    pub tube_radius: f64,
    pub deform_amplitude: f64,
    pub deform_smoothness: f64,
    pub noise_sigma: f64,
    pub cohort_size: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            n_tracts: 3,
            tube_radius: 3.0,
            deform_amplitude: 2.0,
            deform_smoothness: 4.0,
            noise_sigma: 0.05,
            cohort_size: 16,
            seed: 7,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.dims.iter().any(|&d| d < 8) {
            return Err(PhantomError::InvalidConfig(format!(
                "dims {:?} must be at least 8 per axis",
                self.dims
            )));
        }
        if self.n_tracts == 0 {
            return Err(PhantomError::InvalidConfig("n_tracts must be positive".into()));
        }
        if self.tube_radius <= 0.0 || !self.tube_radius.is_finite() {
            return Err(PhantomError::InvalidConfig(format!(
                "tube_radius must be positive, got {}",
                self.tube_radius
            )));
        }
        if self.deform_amplitude < 0.0 || !self.deform_amplitude.is_finite() {
            return Err(PhantomError::InvalidConfig(format!(
                "deform_amplitude must be nonnegative, got {}",
                self.deform_amplitude
            )));
        }
        if self.deform_smoothness <= 0.0 || !self.deform_smoothness.is_finite() {
            return Err(PhantomError::InvalidConfig(format!(
                "deform_smoothness must be positive, got {}",
                self.deform_smoothness
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(PhantomError::InvalidConfig(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// One phantom subject with retained ground truth.
#[derive(Debug, Clone)]
pub struct PhantomSubject {
    pub id: String,
    pub peaks: PeakVolume,
    pub truth: LabelVolume,
}

/// A generated cohort. Unlabeled members keep their truth in memory for
/// validation, but it is never persisted into training manifests.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub labeled: LabeledSubject,
    pub unlabeled: Vec<PhantomSubject>,
    pub test: Vec<PhantomSubject>,
}

struct Centerline {
    points: Vec<[f64; 3]>,
    tangents: Vec<[f64; 3]>,
}

/// Sinusoidal centerline with a per-tract linear drift, monotone along x so
/// tangents keep a positive x component. Tract centers are stratified across
/// the (y, z) section so tubes overlap at crossings rather than everywhere;
/// the drift gives each tract a distinct mean tilt while the sinusoid keeps
/// tilt ranges overlapping.
///
/// The last tract of each atlas is a "hard" one: thinner, with a
/// high-frequency wiggle that smooth deformation models cannot follow, the
/// way real cohorts contain thin convoluted tracts that register poorly but
/// remain locally recognizable.
fn tract_centerline(dims: [usize; 3], tract: usize, n_tracts: usize, rng: &mut ChaCha8Rng) -> Centerline {
    let hard = n_tracts > 1 && tract == n_tracts - 1;
    let xmax = (dims[0] - 1) as f64;
    // Per-tract mean tilt, spread deterministically so interior patterns are
    // class-separable; residual ambiguity comes from crossings and noise.
    let tilt_slot = |t: usize| {
        let centered = t as f64 - (n_tracts as f64 - 1.0) / 2.0;
        0.30 * centered / (n_tracts as f64 / 2.0).max(1.0)
    };
    let lateral = |dim: usize, slot: f64, drift_slot: f64, rng: &mut ChaCha8Rng| {
        let extent = (dim - 1) as f64;
        let amp = if hard {
            rng.random_range(0.07..0.10) * extent
        } else {
            rng.random_range(0.03..0.05) * extent
        };
        let drift = (drift_slot + rng.random_range(-0.02..0.02)) * extent;
        let margin = 0.08 * extent;
        let span = amp + drift.abs() / 2.0;
        let center = (slot * extent + rng.random_range(-0.08..0.08) * extent)
            .clamp(margin + span, (extent - margin - span).max(margin + span));
        let freq = if hard {
            f64::from(rng.random_range(3..5u32))
        } else {
            f64::from(rng.random_range(1..3u32))
        };
        let phase = rng.random_range(0.0..2.0 * PI);
        (center, amp, drift, freq, phase)
    };
    // Stratified slot in (0, 1), shuffled order between y and z.
    let slot = (tract as f64 + 0.5) / n_tracts as f64;
    let slot_y = if tract.is_multiple_of(2) { slot } else { 1.0 - slot };
    let tilt_y = tilt_slot(tract);
    let tilt_z = -tilt_slot((tract + 1) % n_tracts.max(1));
    let (cy, ay, by, fy, py) = lateral(dims[1], slot_y, tilt_y, rng);
    let (cz, az, bz, fz, pz) = lateral(dims[2], 1.0 - slot, tilt_z, rng);

    let steps = dims[0] * 6;
    let mut points = Vec::with_capacity(steps + 1);
    let mut tangents = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = t * xmax;
        let y = cy + by * (t - 0.5) + ay * (2.0 * PI * fy * t + py).sin();
        let z = cz + bz * (t - 0.5) + az * (2.0 * PI * fz * t + pz).sin();
        let dy = by + ay * 2.0 * PI * fy * (2.0 * PI * fy * t + py).cos();
        let dz = bz + az * 2.0 * PI * fz * (2.0 * PI * fz * t + pz).cos();
        let norm = (xmax * xmax + dy * dy + dz * dz).sqrt();
        points.push([x, y, z]);
        tangents.push([xmax / norm, dy / norm, dz / norm]);
    }
    Centerline { points, tangents }
}

/// Marks every voxel within its tract's radius of a centerline and records
/// the tangent of the globally nearest centerline sample. Peak vectors are
/// assigned only to labeled voxels.
fn rasterize_tubes(
    dims: [usize; 3],
    centerlines: &[Centerline],
    radii: &[f64],
) -> (PeakVolume, LabelVolume) {
    let n = centerlines.len();
    let nvox = dims[0] * dims[1] * dims[2];
    let mut best_dist = vec![f64::INFINITY; nvox];
    let mut best_tangent = vec![[0.0f64; 3]; nvox];
    let mut labels = LabelVolume::zeros(dims, n);

    for (k, cl) in centerlines.iter().enumerate() {
        let radius = radii[k];
        let r2 = radius * radius;
        let reach = radius.ceil() as isize + 1;
        for (pt, tan) in cl.points.iter().zip(&cl.tangents) {
            let x0 = ((pt[0] as isize) - reach).max(0) as usize;
            let x1 = ((pt[0] as isize) + reach).min(dims[0] as isize - 1) as usize;
            let y0 = ((pt[1] as isize) - reach).max(0) as usize;
            let y1 = ((pt[1] as isize) + reach).min(dims[1] as isize - 1) as usize;
            let z0 = ((pt[2] as isize) - reach).max(0) as usize;
            let z1 = ((pt[2] as isize) + reach).min(dims[2] as isize - 1) as usize;
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let dx = x as f64 - pt[0];
                        let dy = y as f64 - pt[1];
                        let dz = z as f64 - pt[2];
                        let d2 = dx * dx + dy * dy + dz * dz;
                        if d2 > (reach as f64) * (reach as f64) {
                            continue;
                        }
                        let vidx = (z * dims[1] + y) * dims[0] + x;
                        if d2 <= r2 {
                            labels.set(x, y, z, k, 1);
                        }
                        if d2 < best_dist[vidx] {
                            best_dist[vidx] = d2;
                            best_tangent[vidx] = *tan;
                        }
                    }
                }
            }
        }
    }

    let mut peaks = PeakVolume::zeros(dims, 3);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let vidx = (z * dims[1] + y) * dims[0] + x;
                let labeled = (0..n).any(|k| labels.get(x, y, z, k) == 1);
                if labeled {
                    let t = best_tangent[vidx];
                    peaks.set(x, y, z, 0, t[0]);
                    peaks.set(x, y, z, 1, t[1]);
                    peaks.set(x, y, z, 2, t[2]);
                }
            }
        }
    }
    (peaks, labels)
}

/// Deterministic atlas: `n_tracts` smooth tubes with unit-tangent peaks.
pub fn generate_atlas(cfg: &PhantomConfig) -> Result<PhantomSubject, PhantomError> {
    cfg.validate()?;
    let centerlines: Vec<Centerline> = (0..cfg.n_tracts)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "atlas-tract", k as u64));
            tract_centerline(cfg.dims, k, cfg.n_tracts, &mut rng)
        })
        .collect();
    // The hard tract is thinner on top of being convoluted.
    let radii: Vec<f64> = (0..cfg.n_tracts)
        .map(|k| {
            if cfg.n_tracts > 1 && k == cfg.n_tracts - 1 {
                0.75 * cfg.tube_radius
            } else {
                cfg.tube_radius
            }
        })
        .collect();
    let (peaks, truth) = rasterize_tubes(cfg.dims, &centerlines, &radii);
    Ok(PhantomSubject {
        id: "atlas".to_string(),
        peaks,
        truth,
    })
}

/// Smooth random field: component-wise white noise, three box-blur passes
/// per axis with half-width `smoothness`, rescaled so the maximum voxel
/// displacement magnitude equals `amplitude`. Zero amplitude short-circuits
/// to the zero field.
pub fn random_smooth_field(
    dims: [usize; 3],
    amplitude: f64,
    smoothness: f64,
    seed: u64,
) -> DisplacementField {
    assert!(smoothness > 0.0, "smoothness must be positive");
    assert!(amplitude >= 0.0, "amplitude must be nonnegative");
    let mut field = DisplacementField::zeros(dims);
    if amplitude == 0.0 {
        return field;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in field.data_mut() {
        *v = standard_normal(&mut rng);
    }
    let half = smoothness.round().max(1.0) as usize;
    for _ in 0..3 {
        box_blur_axis(&mut field, dims, 0, half);
        box_blur_axis(&mut field, dims, 1, half);
        box_blur_axis(&mut field, dims, 2, half);
    }
    let max = field.max_magnitude();
    if max > 0.0 {
        let scale = amplitude / max;
        for v in field.data_mut() {
            *v *= scale;
        }
    }
    field
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Additive zero-mean Gaussian noise with short-range spatial correlation,
/// rescaled to per-element scale `sigma` and clipped at three sigma. The
/// correlation makes the background carry faint coherent direction blobs the
/// way measured peak data does, instead of white speckle.
fn add_structured_noise(peaks: &mut PeakVolume, sigma: f64, seed: u64) {
    let dims = peaks.dims();
    let channels = peaks.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nvox = dims[0] * dims[1] * dims[2];
    let mut noise = vec![0.0f64; nvox * channels];
    for v in noise.iter_mut() {
        *v = standard_normal(&mut rng);
    }
    // One box-blur pass per axis, half-width 1.
    let mut blurred = noise.clone();
    let idx = |x: usize, y: usize, z: usize, c: usize| ((z * dims[1] + y) * dims[0] + x) * channels + c;
    for axis in 0..3 {
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    for c in 0..channels {
                        let mut acc = 0.0;
                        let mut count = 0.0;
                        for d in -1isize..=1 {
                            let mut p = [x as isize, y as isize, z as isize];
                            p[axis] += d;
                            if p[0] < 0
                                || p[1] < 0
                                || p[2] < 0
                                || p[0] >= dims[0] as isize
                                || p[1] >= dims[1] as isize
                                || p[2] >= dims[2] as isize
                            {
                                continue;
                            }
                            acc += noise[idx(p[0] as usize, p[1] as usize, p[2] as usize, c)];
                            count += 1.0;
                        }
                        blurred[idx(x, y, z, c)] = acc / count;
                    }
                }
            }
        }
        noise.copy_from_slice(&blurred);
    }
    // Restore unit per-element scale after blurring, then apply sigma.
    let n = noise.len() as f64;
    let mean = noise.iter().sum::<f64>() / n;
    let var = noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    let clip = 3.0 * sigma;
    for (dst, v) in peaks.data_mut().iter_mut().zip(&noise) {
        *dst += (sigma * (v - mean) / std).clamp(-clip, clip);
    }
}

fn box_blur_axis(field: &mut DisplacementField, dims: [usize; 3], axis: usize, half: usize) {
    let extent = dims[axis];
    let mut line = vec![0.0; extent];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for m in 0..3 {
        for j in 0..dims[b] {
            for i in 0..dims[a] {
                for (s, l) in line.iter_mut().enumerate() {
                    let mut coords = [0; 3];
                    coords[axis] = s;
                    coords[a] = i;
                    coords[b] = j;
                    *l = field.data()[field.idx(coords[0], coords[1], coords[2], m)];
                }
                for s in 0..extent {
                    let lo = s.saturating_sub(half);
                    let hi = (s + half).min(extent - 1);
                    let mut acc = 0.0;
                    for l in &line[lo..=hi] {
                        acc += l;
                    }
                    let mut coords = [0; 3];
                    coords[axis] = s;
                    coords[a] = i;
                    coords[b] = j;
                    let idx = field.idx(coords[0], coords[1], coords[2], m);
                    field.data_mut()[idx] = acc / (hi - lo + 1) as f64;
                }
            }
        }
    }
}

/// Splits `cohort_size` members into 1 labeled, `size - 1 - size/3`
/// unlabeled, and `size/3` test subjects.
pub fn cohort_split(cohort_size: usize) -> (usize, usize) {
    let n_test = cohort_size / 3;
    (cohort_size - 1 - n_test, n_test)
}

/// Generates the full cohort: every member is the atlas warped by its own
/// random smooth field plus clipped additive Gaussian noise on the peaks,
/// with truth labels warped by the same field. Member 0 becomes the labeled
/// subject.
pub fn generate_cohort(atlas: &PhantomSubject, cfg: &PhantomConfig) -> Result<Cohort, PhantomError> {
    cfg.validate()?;
    if cfg.cohort_size < 3 {
        return Err(PhantomError::CohortTooSmall(cfg.cohort_size));
    }
    let (n_unlabeled, n_test) = cohort_split(cfg.cohort_size);
    let mut labeled = None;
    let mut unlabeled = Vec::with_capacity(n_unlabeled);
    let mut test = Vec::with_capacity(n_test);

    for i in 0..cfg.cohort_size {
        let field = random_smooth_field(
            cfg.dims,
            cfg.deform_amplitude,
            cfg.deform_smoothness,
            derive_seed(cfg.seed, "member-deform", i as u64),
        );
        let mut peaks = warp(&atlas.peaks, &field)?;
        if cfg.noise_sigma > 0.0 {
            add_structured_noise(
                &mut peaks,
                cfg.noise_sigma,
                derive_seed(cfg.seed, "member-noise", i as u64),
            );
        }
        let truth = warp_labels(&atlas.truth, &field)?;
        let id = format!("member_{i:02}");
        let subject = PhantomSubject { id, peaks, truth };
        if i == 0 {
            labeled = Some(LabeledSubject::new(
                subject.id,
                subject.peaks,
                subject.truth,
            ).expect("warped member keeps atlas dims"));
        } else if i <= n_unlabeled {
            unlabeled.push(subject);
        } else {
            test.push(subject);
        }
    }

    Ok(Cohort {
        labeled: labeled.expect("cohort_size >= 3 always yields member 0"),
        unlabeled,
        test,
    })
}

/// On-disk cohort listing; unlabeled entries carry peaks only, so hidden
/// truths can never leak into training through the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CohortManifest {
    pub labeled: LabeledEntry,
    pub unlabeled: Vec<UnlabeledEntry>,
    pub test: Vec<LabeledEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LabeledEntry {
    pub id: String,
    pub peaks: String,
    pub labels: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct UnlabeledEntry {
    pub id: String,
    pub peaks: String,
}

impl CohortManifest {
    pub fn save(&self, path: &Path) -> Result<(), PhantomError> {
        let text = serde_json::to_string_pretty(self).expect("manifest is serializable");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PhantomError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PhantomError::Manifest {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}
