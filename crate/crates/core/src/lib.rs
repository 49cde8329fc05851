//! Volumetric one-shot segmentation engine.
//!
//! The pipeline synthesizes pseudo-labeled training subjects by registering a
//! single annotated multi-channel volume onto an unlabeled cohort, trains a
//! per-slice voxel classifier on the synthetic pairs, and refines the pseudo
//! labels with voxel-level confidence weights derived from a frozen reference
//! model. A synthetic tube-phantom generator with exact ground truth and Dice
//! reporting close the loop for end-to-end experiments.
//!
//! Modules follow the data flow:
//!
//! - [`volume`]: dense multi-channel 3D arrays, trilinear sampling, tri-planar
//!   slicing, and the on-disk volume format.
//! - [`registration`]: displacement-field deformation model, warping, losses,
//!   analytic gradients, and gradient-descent field optimization.
//! - [`rpa`]: pseudo-pair synthesis from one labeled subject and an unlabeled
//!   cohort.
//! - [`segmentation`]: patch-based per-slice classifier, BCE training, and
//!   tri-planar whole-volume prediction.
//! - [`ure`]: uncertainty transform and confidence-weighted loss.
//! - [`phantom`]: synthetic cohorts with known ground truth.
//! - [`metrics`]: Dice evaluation and CSV reporting.

pub mod metrics;
pub mod phantom;
pub mod registration;
pub mod rpa;
pub mod seed;
pub mod segmentation;
pub mod ure;
pub mod volume;
