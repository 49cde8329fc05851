//! Uncertainty-based refinement of pseudo labels.
//!
//! A frozen reference model predicts on each pseudo subject; prediction
//! values are mapped to voxel-level confidence weights (0 at 0.5, 1 at
//! saturation) that multiply the per-element BCE terms of the downstream
//! training loss, down-weighting voxels the reference model is unsure about.

use crate::segmentation::{bce_term, predict_subject, Prediction, SegError, SegModel, BCE_CLIP};
use crate::volume::{LabelVolume, PeakVolume, VolumeError};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UreError {
    #[error("uncertainty value {value} at element {index} outside [0,1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Per-voxel, per-class confidence weights in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    dims: [usize; 3],
    classes: usize,
    values: Vec<f64>,
}

impl UncertaintyMap {
    pub fn new(dims: [usize; 3], classes: usize, values: Vec<f64>) -> Result<Self, UreError> {
        if values.len() != dims[0] * dims[1] * dims[2] * classes {
            return Err(UreError::ShapeMismatch(format!(
                "map length {} vs {:?} x {}",
                values.len(),
                dims,
                classes
            )));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(UreError::OutOfRange { index, value });
            }
        }
        Ok(Self {
            dims,
            classes,
            values,
        })
    }

    pub fn ones(dims: [usize; 3], classes: usize) -> Self {
        Self {
            dims,
            classes,
            values: vec![1.0; dims[0] * dims[1] * dims[2] * classes],
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
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.values[((z * self.dims[1] + y) * self.dims[0] + x) * self.classes + c]
    }
}

/// Maps a prediction value to a confidence weight: `2z - 1` above 0.5,
/// `1 - 2z` otherwise, so 0.5 gives 0 and both saturation ends give 1.
#[inline]
pub fn uncertainty_value(z: f64) -> f64 {
    if z > 0.5 {
        2.0 * z - 1.0
    } else {
        1.0 - 2.0 * z
    }
}

/// Elementwise confidence transform of a whole prediction.
pub fn uncertainty_transform(pred: &Prediction) -> UncertaintyMap {
    UncertaintyMap {
        dims: pred.dims(),
        classes: pred.classes(),
        values: pred.probs().iter().map(|&z| uncertainty_value(z)).collect(),
    }
}

/// Confidence map for one pseudo subject from a frozen reference model.
///
/// The model is only read; the caller can verify the frozen contract via
/// [`SegModel::param_checksum`].
pub fn uncertainty_map_for_subject(
    model: &SegModel,
    pseudo_peaks: &PeakVolume,
) -> Result<UncertaintyMap, UreError> {
    let pred = predict_subject(model, pseudo_peaks)?;
    Ok(uncertainty_transform(&pred))
}

/// Weighted BCE: per-element BCE terms multiplied by the confidence map,
/// reduced with the same `1 / (voxels * classes)` mean as the unweighted
/// loss. Unit weights reproduce `bce_loss` exactly; zero weights give 0.
pub fn weighted_bce_loss(
    pred: &Prediction,
    label: &LabelVolume,
    map: &UncertaintyMap,
) -> Result<f64, UreError> {
    if pred.dims() != label.dims() || pred.classes() != label.classes() {
        return Err(UreError::ShapeMismatch(format!(
            "prediction {:?} x {} vs labels {:?} x {}",
            pred.dims(),
            pred.classes(),
            label.dims(),
            label.classes()
        )));
    }
    if map.dims != pred.dims() || map.classes != pred.classes() {
        return Err(UreError::ShapeMismatch(format!(
            "map {:?} x {} vs prediction {:?} x {}",
            map.dims,
            map.classes,
            pred.dims(),
            pred.classes()
        )));
    }
    let mut total = 0.0;
    for ((&p, &l), &w) in pred.probs().iter().zip(label.data()).zip(&map.values) {
        let clipped = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        total += w * bce_term(clipped, f64::from(l));
    }
    Ok(total / pred.probs().len() as f64)
}

/// Uncertainty maps reuse the volume file format with an "uncertainty" kind.
pub fn save_uncertainty_map(map: &UncertaintyMap, path: &Path) -> Result<(), VolumeError> {
    crate::volume::write_f32_volume(path, map.dims, map.classes, Some("uncertainty"), &map.values)
}

pub fn load_uncertainty_map(path: &Path) -> Result<UncertaintyMap, UreError> {
    let (header, data) = crate::volume::read_f32_volume(path)?;
    if header.kind.as_deref() != Some("uncertainty") {
        return Err(UreError::Volume(VolumeError::MalformedHeader {
            path: path.display().to_string(),
            reason: format!("expected kind \"uncertainty\", found {:?}", header.kind),
        }));
    }
    UncertaintyMap::new(header.dims, header.channels, data)
}
