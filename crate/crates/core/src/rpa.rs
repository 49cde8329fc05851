//! Pseudo-dataset synthesis by registration.
//!
//! The single labeled subject is registered onto each unlabeled subject; the
//! fitted field warps both the labeled peaks and their annotation, producing
//! one pseudo pair per unlabeled subject. Fields are persisted next to the
//! pairs so every synthetic label can be audited against the registration
//! that produced it.

use crate::registration::{
    optimize_registration, save_field, warp, warp_labels, RegistrationConfig, RegistrationError,
};
use crate::volume::{LabelVolume, PeakVolume, VolumeError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RpaError {
    #[error("empty unlabeled set")]
    EmptyUnlabeledSet,
    #[error("labeled subject shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error {path}: {reason}")]
    Manifest { path: String, reason: String },
}

/// The one annotated subject driving the whole pipeline.
#[derive(Debug, Clone)]
pub struct LabeledSubject {
    pub id: String,
    pub peaks: PeakVolume,
    pub labels: LabelVolume,
}

impl LabeledSubject {
    pub fn new(id: impl Into<String>, peaks: PeakVolume, labels: LabelVolume) -> Result<Self, RpaError> {
        if peaks.dims() != labels.dims() {
            return Err(RpaError::ShapeMismatch(format!(
                "peaks {:?} vs labels {:?}",
                peaks.dims(),
                labels.dims()
            )));
        }
        Ok(Self {
            id: id.into(),
            peaks,
            labels,
        })
    }
}

/// An unlabeled cohort member (peaks only).
#[derive(Debug, Clone)]
pub struct UnlabeledSubject {
    pub id: String,
    pub peaks: PeakVolume,
}

/// A synthesized training pair: warped peaks and warped labels, plus the
/// provenance needed for audit.
#[derive(Debug, Clone)]
pub struct PseudoSubject {
    pub peaks: PeakVolume,
    pub labels: LabelVolume,
    pub source_unlabeled_id: String,
    pub field_path: PathBuf,
}

/// Registers the labeled subject onto one unlabeled subject and warps the
/// pair through the fitted field. The field is written under `field_dir` as
/// `field_<unlabeled id>`. Returns the pseudo pair and the registration loss
/// trace.
pub fn synthesize_pseudo_pair(
    labeled: &LabeledSubject,
    unlabeled: &UnlabeledSubject,
    cfg: &RegistrationConfig,
    field_dir: &Path,
) -> Result<(PseudoSubject, Vec<f64>), RpaError> {
    let (field, trace) = optimize_registration(&labeled.peaks, &unlabeled.peaks, cfg)?;
    let peaks = warp(&labeled.peaks, &field)?;
    let labels = warp_labels(&labeled.labels, &field)?;
    std::fs::create_dir_all(field_dir)?;
    let field_path = field_dir.join(format!("field_{}", unlabeled.id));
    save_field(&field, &field_path)?;
    Ok((
        PseudoSubject {
            peaks,
            labels,
            source_unlabeled_id: unlabeled.id.clone(),
            field_path,
        },
        trace,
    ))
}

/// One pseudo pair per unlabeled subject, order-preserving. Syntheses run in
/// parallel; each is independent and deterministic, so the output does not
/// depend on worker count.
pub fn build_pseudo_dataset(
    labeled: &LabeledSubject,
    unlabeled_set: &[UnlabeledSubject],
    cfg: &RegistrationConfig,
    field_dir: &Path,
) -> Result<Vec<(PseudoSubject, Vec<f64>)>, RpaError> {
    if unlabeled_set.is_empty() {
        return Err(RpaError::EmptyUnlabeledSet);
    }
    std::fs::create_dir_all(field_dir)?;
    unlabeled_set
        .par_iter()
        .map(|u| synthesize_pseudo_pair(labeled, u, cfg, field_dir))
        .collect()
}

/// On-disk listing of a synthesized pseudo dataset. Paths are relative to
/// the workspace root.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PseudoManifest {
    pub entries: Vec<PseudoEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PseudoEntry {
    pub source_unlabeled_id: String,
    pub peaks: String,
    pub labels: String,
    pub field: String,
    pub loss_trace: String,
}

impl PseudoManifest {
    pub fn save(&self, path: &Path) -> Result<(), RpaError> {
        let text = serde_json::to_string_pretty(self).expect("manifest is serializable");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RpaError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RpaError::Manifest {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}
