//! Pipeline configuration.
//!
//! One JSON file drives every stage. All fields have defaults, so an empty
//! object (or no file at all) runs the standard phantom experiment. Stage
//! seeds left unset derive from the master seed, keeping the whole run
//! reproducible from a single number; explicit stage seeds win over the
//! derivation.

use anyhow::Context;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tractpipe_core::phantom::PhantomConfig;
use tractpipe_core::registration::RegistrationConfig;
use tractpipe_core::seed::derive_seed;
use tractpipe_core::segmentation::TrainConfig;

/// Environment variable overriding the workspace directory.
pub const WORKSPACE_ENV: &str = "TRACTPIPE_WORKSPACE";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; unset stage seeds derive from it.
    pub seed: u64,
    /// All artifacts live under this directory.
    pub workspace: PathBuf,
    pub phantom: PhantomSection,
    pub registration: RegistrationSection,
    pub model: ModelSection,
    pub train_a: TrainSection,
    pub train_b: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workspace: PathBuf::from("runs/default"),
            phantom: PhantomSection::default(),
            registration: RegistrationSection::default(),
            model: ModelSection::default(),
            train_a: TrainSection::default_a(),
            train_b: TrainSection::default_b(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub dims: [usize; 3],
    pub n_tracts: usize,
    pub tube_radius: f64,
    pub deform_amplitude: f64,
    pub deform_smoothness: f64,
    pub noise_sigma: f64,
    pub cohort_size: usize,
    pub seed: Option<u64>,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            n_tracts: 3,
            tube_radius: 3.5,
            deform_amplitude: 3.5,
            deform_smoothness: 3.0,
            noise_sigma: 0.35,
            cohort_size: 16,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSection {
    /// Similarity weight in `smooth + gamma * sim`. The smoothness term is a
    /// raw sum over voxels while the similarity term is a per-element mean,
    /// so a useful gamma scales with the voxel count.
    pub gamma: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: Option<u64>,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        Self {
            gamma: 3.0e5,
            step_size: 0.25,
            max_iters: 60,
            rel_tol: 1e-5,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub patch_radius: usize,
    pub hidden_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            patch_radius: 2,
            hidden_size: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_voxels: usize,
    pub binarize_threshold: f64,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::default_a()
    }
}

impl TrainSection {
    fn default_a() -> Self {
        Self {
            learning_rate: 0.3,
            epochs: 120,
            batch_voxels: 1024,
            binarize_threshold: 0.5,
            seed: None,
        }
    }

    fn default_b() -> Self {
        Self {
            learning_rate: 0.3,
            epochs: 40,
            batch_voxels: 1024,
            binarize_threshold: 0.5,
            seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config is serializable");
        std::fs::write(path, text)
            .with_context(|| format!("cannot write config file {}", path.display()))?;
        Ok(())
    }

    /// Applies the `TRACTPIPE_WORKSPACE` override, if set.
    pub fn apply_env_workspace(&mut self) {
        if let Ok(dir) = std::env::var(WORKSPACE_ENV) {
            if !dir.is_empty() {
                self.workspace = PathBuf::from(dir);
            }
        }
    }

    pub fn phantom_config(&self) -> PhantomConfig {
        let p = &self.phantom;
        PhantomConfig {
            dims: p.dims,
            n_tracts: p.n_tracts,
            tube_radius: p.tube_radius,
            deform_amplitude: p.deform_amplitude,
            deform_smoothness: p.deform_smoothness,
            noise_sigma: p.noise_sigma,
            cohort_size: p.cohort_size,
            seed: p.seed.unwrap_or_else(|| derive_seed(self.seed, "phantom", 0)),
        }
    }

    pub fn registration_config(&self) -> RegistrationConfig {
        let r = &self.registration;
        RegistrationConfig {
            gamma: r.gamma,
            step_size: r.step_size,
            max_iters: r.max_iters,
            rel_tol: r.rel_tol,
            seed: r.seed.unwrap_or_else(|| derive_seed(self.seed, "registration", 0)),
        }
    }

    pub fn train_a_config(&self) -> TrainConfig {
        section_to_train(&self.train_a, derive_seed(self.seed, "train_a", 0))
    }

    pub fn train_b_config(&self) -> TrainConfig {
        section_to_train(&self.train_b, derive_seed(self.seed, "train_b", 0))
    }

    /// Seed used to initialize model parameters for a training stage.
    pub fn init_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 1)
    }
}

fn section_to_train(section: &TrainSection, derived_seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: section.learning_rate,
        epochs: section.epochs,
        batch_voxels: section.batch_voxels,
        seed: section.seed.unwrap_or(derived_seed),
        binarize_threshold: section.binarize_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_gives_defaults() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.phantom.dims, [32, 32, 32]);
        assert_eq!(cfg.phantom.cohort_size, 16);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"sede": 1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn stage_seeds_derive_from_master_but_explicit_wins() {
        let a: PipelineConfig = serde_json::from_str(r#"{"seed": 1}"#).unwrap();
        let b: PipelineConfig = serde_json::from_str(r#"{"seed": 2}"#).unwrap();
        assert_ne!(a.phantom_config().seed, b.phantom_config().seed);
        assert_ne!(a.phantom_config().seed, a.train_a_config().seed);

        let c: PipelineConfig =
            serde_json::from_str(r#"{"seed": 1, "phantom": {"seed": 99}}"#).unwrap();
        assert_eq!(c.phantom_config().seed, 99);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
