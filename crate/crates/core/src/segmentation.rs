//! Per-slice multi-label voxel classifier.
//!
//! The reference model is a patch-based two-layer perceptron: the input is
//! the (2r+1) x (2r+1) in-plane neighborhood of a pixel across all channels,
//! one hidden layer with max(0, .) activation, and per-class sigmoid outputs.
//! One shared model is evaluated on slices of all three planes; whole-volume
//! prediction averages the three reassembled per-plane probability volumes.
//!
//! The model sits behind [`SliceClassifier`] so a heavier architecture can be
//! substituted without touching training or prediction plumbing. Training is
//! mini-batch SGD on (optionally confidence-weighted) binary cross-entropy,
//! fully deterministic under a fixed seed: batch sampling uses one seeded
//! stream and gradient accumulation reduces fixed-size chunks in index order
//! regardless of worker count.

use crate::ure::UncertaintyMap;
use crate::volume::{extract_slices, LabelVolume, PeakVolume, PlaneAxis, Slice2D, VolumeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Probabilities are kept strictly inside (0, 1).
const PROB_FLOOR: f64 = 1e-12;
/// Cross-entropy clips predictions to [BCE_CLIP, 1 - BCE_CLIP] to avoid log(0).
pub(crate) const BCE_CLIP: f64 = 1e-7;
/// Fixed gradient-accumulation chunk so reductions are order-stable.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("channel mismatch: model expects {expected}, input has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint {path}: {reason}")]
    MalformedCheckpoint { path: String, reason: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Anything that maps a 2D multi-channel slice to per-pixel class
/// probabilities.
pub trait SliceClassifier: Sync {
    fn channels(&self) -> usize;
    fn classes(&self) -> usize;
    /// Per-pixel probabilities, length `width * height * classes`, class
    /// fastest. Outputs lie strictly in (0, 1).
    fn forward_slice(&self, slice: &Slice2D) -> Result<Vec<f64>, SegError>;
}

/// Patch-based two-layer perceptron with sigmoid multi-label outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    patch_radius: usize,
    hidden_size: usize,
    classes: usize,
    channels: usize,
    init_seed: u64,
    params: Vec<f64>,
}

impl SegModel {
    /// Expected parameter count for the given architecture.
    pub fn param_len(patch_radius: usize, hidden_size: usize, classes: usize, channels: usize) -> usize {
        let side = 2 * patch_radius + 1;
        let in_dim = side * side * channels;
        (in_dim + 1) * hidden_size + (hidden_size + 1) * classes
    }

    /// Model with small uniform random weights and zero biases.
    pub fn new(
        patch_radius: usize,
        hidden_size: usize,
        classes: usize,
        channels: usize,
        seed: u64,
    ) -> Self {
        let mut model = Self::zeros(patch_radius, hidden_size, classes, channels);
        model.init_seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_dim = model.in_dim();
        let w1_scale = 1.0 / (in_dim as f64).sqrt();
        let w2_scale = 1.0 / (hidden_size as f64).sqrt();
        for j in 0..hidden_size * in_dim {
            model.params[j] = rng.random_range(-w1_scale..w1_scale);
        }
        let w2_off = model.w2_offset();
        for j in 0..classes * hidden_size {
            model.params[w2_off + j] = rng.random_range(-w2_scale..w2_scale);
        }
        model
    }

    /// Model with every parameter zero; outputs 0.5 everywhere.
    pub fn zeros(patch_radius: usize, hidden_size: usize, classes: usize, channels: usize) -> Self {
        assert!(hidden_size > 0 && classes > 0 && channels > 0);
        let len = Self::param_len(patch_radius, hidden_size, classes, channels);
        Self {
            patch_radius,
            hidden_size,
            classes,
            channels,
            init_seed: 0,
            params: vec![0.0; len],
        }
    }

    #[inline]
    pub fn patch_radius(&self) -> usize {
        self.patch_radius
    }

    #[inline]
    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        side * side * self.channels
    }

    #[inline]
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[inline]
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    fn b1_offset(&self) -> usize {
        self.hidden_size * self.in_dim()
    }

    #[inline]
    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden_size
    }

    #[inline]
    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.classes * self.hidden_size
    }

    /// FNV-1a over the little-endian parameter bytes; used to verify the
    /// frozen-model contract.
    pub fn param_checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325_u64;
        for v in &self.params {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Forward pass for one patch. `z1` has length `hidden_size`, `probs`
    /// length `classes`; returns clamped sigmoid probabilities in `probs`.
    fn forward_into(&self, input: &[f64], z1: &mut [f64], probs: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim());
        let in_dim = self.in_dim();
        let b1 = self.b1_offset();
        for (j, zj) in z1.iter_mut().enumerate() {
            let row = &self.params[j * in_dim..(j + 1) * in_dim];
            let mut acc = self.params[b1 + j];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *zj = acc;
        }
        let w2 = self.w2_offset();
        let b2 = self.b2_offset();
        for (k, pk) in probs.iter_mut().enumerate() {
            let row = &self.params[w2 + k * self.hidden_size..w2 + (k + 1) * self.hidden_size];
            let mut acc = self.params[b2 + k];
            for (w, z) in row.iter().zip(z1.iter()) {
                acc += w * z.max(0.0);
            }
            *pk = sigmoid(acc).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        }
    }

    /// Mean weighted BCE over a batch, without gradients.
    ///
    /// `inputs` is `batch x in_dim`, `targets` and `weights` are
    /// `batch x classes`. The value is identical to the one produced by
    /// [`SegModel::batch_loss_and_gradient`].
    pub fn batch_loss(&self, inputs: &[f64], targets: &[f64], weights: &[f64]) -> f64 {
        self.batch_loss_and_gradient(inputs, targets, weights).0
    }

    /// Mean weighted BCE over a batch and its exact gradient w.r.t. every
    /// parameter. The reduction divides by `batch * classes`, matching the
    /// whole-volume loss convention.
    pub fn batch_loss_and_gradient(
        &self,
        inputs: &[f64],
        targets: &[f64],
        weights: &[f64],
    ) -> (f64, Vec<f64>) {
        let in_dim = self.in_dim();
        let batch = inputs.len() / in_dim;
        debug_assert_eq!(inputs.len(), batch * in_dim);
        debug_assert_eq!(targets.len(), batch * self.classes);
        debug_assert_eq!(weights.len(), batch * self.classes);

        let n_chunks = batch.div_ceil(GRAD_CHUNK);
        let partials: Vec<(f64, Vec<f64>)> = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| {
                let lo = chunk * GRAD_CHUNK;
                let hi = (lo + GRAD_CHUNK).min(batch);
                self.chunk_loss_and_gradient(inputs, targets, weights, lo, hi)
            })
            .collect();

        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in partials {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        let scale = 1.0 / (batch * self.classes) as f64;
        for g in &mut grad {
            *g *= scale;
        }
        (loss * scale, grad)
    }

    fn chunk_loss_and_gradient(
        &self,
        inputs: &[f64],
        targets: &[f64],
        weights: &[f64],
        lo: usize,
        hi: usize,
    ) -> (f64, Vec<f64>) {
        let in_dim = self.in_dim();
        let hidden = self.hidden_size;
        let classes = self.classes;
        let b1 = self.b1_offset();
        let w2 = self.w2_offset();
        let b2 = self.b2_offset();

        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        let mut z1 = vec![0.0; hidden];
        let mut probs = vec![0.0; classes];
        let mut delta_out = vec![0.0; classes];
        let mut d_hidden = vec![0.0; hidden];

        for s in lo..hi {
            let input = &inputs[s * in_dim..(s + 1) * in_dim];
            self.forward_into(input, &mut z1, &mut probs);

            for k in 0..classes {
                let label = targets[s * classes + k];
                let weight = weights[s * classes + k];
                let p = probs[k];
                let clipped = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                loss += weight * bce_term(clipped, label);
                // d(term)/d(logit): zero wherever a clamp is active.
                let pass = f64::from(p > BCE_CLIP && p < 1.0 - BCE_CLIP);
                delta_out[k] = weight * (clipped - label) / (clipped * (1.0 - clipped))
                    * pass
                    * p
                    * (1.0 - p);
            }

            for (dh, _) in d_hidden.iter_mut().zip(0..hidden) {
                *dh = 0.0;
            }
            for k in 0..classes {
                let dk = delta_out[k];
                grad[b2 + k] += dk;
                let row = w2 + k * hidden;
                for j in 0..hidden {
                    let h = z1[j].max(0.0);
                    grad[row + j] += dk * h;
                    d_hidden[j] += dk * self.params[row + j];
                }
            }
            for j in 0..hidden {
                if z1[j] > 0.0 {
                    let dj = d_hidden[j];
                    grad[b1 + j] += dj;
                    let row = j * in_dim;
                    for (i, x) in input.iter().enumerate() {
                        grad[row + i] += dj * x;
                    }
                }
            }
        }
        (loss, grad)
    }
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Single binary cross-entropy term for an already-clipped prediction.
#[inline]
pub(crate) fn bce_term(p: f64, label: f64) -> f64 {
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

impl SliceClassifier for SegModel {
    fn channels(&self) -> usize {
        self.channels
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn forward_slice(&self, slice: &Slice2D) -> Result<Vec<f64>, SegError> {
        if slice.channels != self.channels {
            return Err(SegError::ChannelMismatch {
                expected: self.channels,
                actual: slice.channels,
            });
        }
        let mut out = vec![0.0; slice.width * slice.height * self.classes];
        let mut input = vec![0.0; self.in_dim()];
        let mut z1 = vec![0.0; self.hidden_size];
        let mut probs = vec![0.0; self.classes];
        for h in 0..slice.height {
            for w in 0..slice.width {
                fill_patch_from_slice(slice, w, h, self.patch_radius, &mut input);
                self.forward_into(&input, &mut z1, &mut probs);
                let base = (h * slice.width + w) * self.classes;
                out[base..base + self.classes].copy_from_slice(&probs);
            }
        }
        Ok(out)
    }
}

/// In-plane patch around (w0, h0), border-clamped, channel fastest within
/// each patch position.
fn fill_patch_from_slice(slice: &Slice2D, w0: usize, h0: usize, radius: usize, out: &mut [f64]) {
    let r = radius as isize;
    let mut idx = 0;
    for dh in -r..=r {
        let h = (h0 as isize + dh).clamp(0, slice.height as isize - 1) as usize;
        for dw in -r..=r {
            let w = (w0 as isize + dw).clamp(0, slice.width as isize - 1) as usize;
            let base = slice.idx(w, h, 0);
            out[idx..idx + slice.channels].copy_from_slice(&slice.data[base..base + slice.channels]);
            idx += slice.channels;
        }
    }
}

/// Same patch as [`fill_patch_from_slice`] read straight from the volume,
/// avoiding a slice copy per training sample.
fn fill_patch_from_volume(
    vol: &PeakVolume,
    plane: PlaneAxis,
    index: usize,
    w0: usize,
    h0: usize,
    radius: usize,
    out: &mut [f64],
) {
    let dims = vol.dims();
    let (wa, ha) = plane.in_plane_axes();
    let (width, height) = (dims[wa], dims[ha]);
    let channels = vol.channels();
    let r = radius as isize;
    let mut idx = 0;
    for dh in -r..=r {
        let h = (h0 as isize + dh).clamp(0, height as isize - 1) as usize;
        for dw in -r..=r {
            let w = (w0 as isize + dw).clamp(0, width as isize - 1) as usize;
            let (x, y, z) = plane.to_voxel(index, w, h);
            let base = vol.idx(x, y, z, 0);
            out[idx..idx + channels].copy_from_slice(&vol.data()[base..base + channels]);
            idx += channels;
        }
    }
}

/// Whole-volume class probabilities in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    dims: [usize; 3],
    classes: usize,
    probs: Vec<f64>,
}

impl Prediction {
    pub fn new(dims: [usize; 3], classes: usize, probs: Vec<f64>) -> Result<Self, SegError> {
        if probs.len() != dims[0] * dims[1] * dims[2] * classes {
            return Err(SegError::ShapeMismatch(format!(
                "prediction length {} vs {:?} x {}",
                probs.len(),
                dims,
                classes
            )));
        }
        Ok(Self {
            dims,
            classes,
            probs,
        })
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
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        ((z * self.dims[1] + y) * self.dims[0] + x) * self.classes + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.probs[self.idx(x, y, z, c)]
    }
}

/// Tri-planar whole-volume prediction: per-plane slice inference, reassembly
/// into three probability volumes, then the voxelwise mean in fixed plane
/// order so worker scheduling never changes the result.
pub fn predict_subject<M: SliceClassifier + ?Sized>(
    model: &M,
    vol: &PeakVolume,
) -> Result<Prediction, SegError> {
    if vol.channels() != model.channels() {
        return Err(SegError::ChannelMismatch {
            expected: model.channels(),
            actual: vol.channels(),
        });
    }
    let dims = vol.dims();
    let classes = model.classes();
    let mut aggregate = vec![0.0; dims[0] * dims[1] * dims[2] * classes];
    let mut plane_buf = vec![0.0; aggregate.len()];
    for plane in PlaneAxis::ALL {
        let slices = extract_slices(vol, plane);
        let per_slice: Vec<Vec<f64>> = slices
            .par_iter()
            .map(|s| model.forward_slice(s))
            .collect::<Result<_, _>>()?;
        for (slice, probs) in slices.iter().zip(&per_slice) {
            for h in 0..slice.height {
                for w in 0..slice.width {
                    let (x, y, z) = plane.to_voxel(slice.index, w, h);
                    let src = (h * slice.width + w) * classes;
                    let dst = ((z * dims[1] + y) * dims[0] + x) * classes;
                    plane_buf[dst..dst + classes].copy_from_slice(&probs[src..src + classes]);
                }
            }
        }
        for (acc, v) in aggregate.iter_mut().zip(&plane_buf) {
            *acc += v;
        }
    }
    for v in &mut aggregate {
        *v /= 3.0;
    }
    Prediction::new(dims, classes, aggregate)
}

/// Thresholds probabilities into labels: `p >= threshold` maps to 1.
pub fn binarize(pred: &Prediction, threshold: f64) -> LabelVolume {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    let data = pred.probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    LabelVolume::new(pred.dims, pred.classes, data).expect("prediction shape is valid")
}

/// Mean over classes of the mean-over-voxels binary cross-entropy.
pub fn bce_loss(pred: &Prediction, label: &LabelVolume) -> Result<f64, SegError> {
    if pred.dims != label.dims() || pred.classes != label.classes() {
        return Err(SegError::ShapeMismatch(format!(
            "bce_loss: {:?} x {} vs {:?} x {}",
            pred.dims,
            pred.classes,
            label.dims(),
            label.classes()
        )));
    }
    let mut total = 0.0;
    for (&p, &l) in pred.probs.iter().zip(label.data()) {
        let clipped = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        total += bce_term(clipped, f64::from(l));
    }
    Ok(total / pred.probs.len() as f64)
}

/// Settings for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_voxels: usize,
    pub seed: u64,
    pub binarize_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 12,
            batch_voxels: 1024,
            seed: 0,
            binarize_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(SegError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(SegError::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_voxels == 0 {
            return Err(SegError::InvalidConfig(
                "batch_voxels must be positive".into(),
            ));
        }
        if self.binarize_threshold <= 0.0 || self.binarize_threshold >= 1.0 || self.binarize_threshold.is_nan() {
            return Err(SegError::InvalidConfig(format!(
                "binarize_threshold must lie in (0,1), got {}",
                self.binarize_threshold
            )));
        }
        Ok(())
    }
}

/// One training subject: peaks plus matching labels.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub peaks: PeakVolume,
    pub labels: LabelVolume,
}

impl TrainingPair {
    pub fn new(peaks: PeakVolume, labels: LabelVolume) -> Result<Self, SegError> {
        if peaks.dims() != labels.dims() {
            return Err(SegError::ShapeMismatch(format!(
                "training pair dims {:?} vs {:?}",
                peaks.dims(),
                labels.dims()
            )));
        }
        Ok(Self { peaks, labels })
    }
}

/// Mini-batch SGD on (weighted) BCE.
///
/// Batches draw uniformly over (subject, plane, slice, pixel) from a single
/// seeded stream. When `weight_maps` is present, each BCE term is multiplied
/// by the matching per-voxel confidence; unit maps reproduce the unweighted
/// trajectory bit for bit. One epoch performs
/// `ceil(total pixel slots / batch_voxels)` steps. Returns the trained model
/// and per-epoch mean batch loss.
pub fn train(
    model: SegModel,
    dataset: &[TrainingPair],
    cfg: &TrainConfig,
    weight_maps: Option<&[UncertaintyMap]>,
) -> Result<(SegModel, Vec<f64>), SegError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(SegError::EmptyDataset);
    }
    for pair in dataset {
        if pair.peaks.channels() != model.channels() {
            return Err(SegError::ChannelMismatch {
                expected: model.channels(),
                actual: pair.peaks.channels(),
            });
        }
        if pair.labels.classes() != model.classes() {
            return Err(SegError::ShapeMismatch(format!(
                "labels have {} classes, model has {}",
                pair.labels.classes(),
                model.classes()
            )));
        }
    }
    if let Some(maps) = weight_maps {
        if maps.len() != dataset.len() {
            return Err(SegError::ShapeMismatch(format!(
                "{} weight maps for {} subjects",
                maps.len(),
                dataset.len()
            )));
        }
        for (map, pair) in maps.iter().zip(dataset) {
            if map.dims() != pair.peaks.dims() || map.classes() != pair.labels.classes() {
                return Err(SegError::ShapeMismatch(
                    "weight map shape does not match its subject".into(),
                ));
            }
        }
    }

    let mut model = model;
    let in_dim = model.in_dim();
    let classes = model.classes();
    let batch = cfg.batch_voxels;
    let total_slots: usize = dataset
        .iter()
        .map(|p| 3 * p.peaks.num_voxels())
        .sum();
    let steps_per_epoch = total_slots.div_ceil(batch).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut inputs = vec![0.0; batch * in_dim];
    let mut targets = vec![0.0; batch * classes];
    let mut weights = vec![1.0; batch * classes];
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            for s in 0..batch {
                let subject = rng.random_range(0..dataset.len());
                let pair = &dataset[subject];
                let dims = pair.peaks.dims();
                let plane = PlaneAxis::ALL[rng.random_range(0..3)];
                let index = rng.random_range(0..plane.extent(dims));
                let (wa, ha) = plane.in_plane_axes();
                let w = rng.random_range(0..dims[wa]);
                let h = rng.random_range(0..dims[ha]);
                fill_patch_from_volume(
                    &pair.peaks,
                    plane,
                    index,
                    w,
                    h,
                    model.patch_radius,
                    &mut inputs[s * in_dim..(s + 1) * in_dim],
                );
                let (x, y, z) = plane.to_voxel(index, w, h);
                for k in 0..classes {
                    targets[s * classes + k] = f64::from(pair.labels.get(x, y, z, k));
                    weights[s * classes + k] = match weight_maps {
                        Some(maps) => maps[subject].get(x, y, z, k),
                        None => 1.0,
                    };
                }
            }
            let (loss, grad) = model.batch_loss_and_gradient(&inputs, &targets, &weights);
            if !loss.is_finite() {
                return Err(SegError::NonFiniteLoss { epoch });
            }
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            epoch_loss += loss;
        }
        trace.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok((model, trace))
}

// ---------------------------------------------------------------------------
// Checkpoint format: `<base>.model.json` header + `<base>.model.bin` f64 LE
// parameter payload.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    patch_radius: usize,
    hidden_size: usize,
    classes: usize,
    channels: usize,
    seed: u64,
    dtype: String,
    params: usize,
}

fn checkpoint_paths(path: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".model.json")
        .or_else(|| s.strip_suffix(".model.bin"))
        .map(str::to_string)
        .unwrap_or_else(|| s.into_owned());
    (
        format!("{base}.model.json").into(),
        format!("{base}.model.bin").into(),
    )
}

pub fn save_model(model: &SegModel, path: &Path) -> Result<(), SegError> {
    let (header_path, bin_path) = checkpoint_paths(path);
    let header = CheckpointHeader {
        patch_radius: model.patch_radius,
        hidden_size: model.hidden_size,
        classes: model.classes,
        channels: model.channels,
        seed: model.init_seed,
        dtype: "f64".to_string(),
        params: model.params.len(),
    };
    fs::write(&header_path, serde_json::to_string(&header).expect("serializable"))?;
    let mut bytes = Vec::with_capacity(model.params.len() * 8);
    for v in &model.params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SegModel, SegError> {
    let (header_path, bin_path) = checkpoint_paths(path);
    let text = fs::read_to_string(&header_path)?;
    let header: CheckpointHeader =
        serde_json::from_str(&text).map_err(|e| SegError::MalformedCheckpoint {
            path: header_path.display().to_string(),
            reason: e.to_string(),
        })?;
    if header.dtype != "f64" {
        return Err(SegError::MalformedCheckpoint {
            path: header_path.display().to_string(),
            reason: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let expected =
        SegModel::param_len(header.patch_radius, header.hidden_size, header.classes, header.channels);
    if header.params != expected {
        return Err(SegError::MalformedCheckpoint {
            path: header_path.display().to_string(),
            reason: format!("{} params, architecture implies {}", header.params, expected),
        });
    }
    let bytes = fs::read(&bin_path)?;
    if bytes.len() != expected * 8 {
        return Err(SegError::MalformedCheckpoint {
            path: bin_path.display().to_string(),
            reason: format!("payload {} bytes, expected {}", bytes.len(), expected * 8),
        });
    }
    let mut params = Vec::with_capacity(expected);
    for (index, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk is 8 bytes"));
        if !v.is_finite() {
            return Err(SegError::MalformedCheckpoint {
                path: bin_path.display().to_string(),
                reason: format!("non-finite parameter at {index}"),
            });
        }
        params.push(v);
    }
    let mut model = SegModel::zeros(
        header.patch_radius,
        header.hidden_size,
        header.classes,
        header.channels,
    );
    model.init_seed = header.seed;
    model.params = params;
    Ok(model)
}
