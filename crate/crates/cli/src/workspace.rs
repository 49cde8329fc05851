//! Fixed workspace layout.
//!
//! ```text
//! <workspace>/
//!   cohort/            atlas + member volumes, manifest.json
//!   stage1/            pseudo pairs, fields/, traces/, pseudo_manifest.json
//!   stage2/            model_a checkpoint, train_trace.json, run.json
//!   stage3/            model_b checkpoints, um/ cache, traces, run logs
//!   eval/              per-method Dice CSVs, ablation.csv
//!   predictions/       cmd_predict outputs
//! ```
//!
//! Manifests reference volumes by workspace-relative base paths (without the
//! `.vol.json` / `.vol.bin` extensions).

use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Joins a manifest-relative path onto the workspace root.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.root.join("cohort")
    }

    pub fn cohort_manifest(&self) -> PathBuf {
        self.cohort_dir().join("manifest.json")
    }

    pub fn stage1_dir(&self) -> PathBuf {
        self.root.join("stage1")
    }

    pub fn fields_dir(&self) -> PathBuf {
        self.stage1_dir().join("fields")
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.stage1_dir().join("traces")
    }

    pub fn pseudo_manifest(&self) -> PathBuf {
        self.stage1_dir().join("pseudo_manifest.json")
    }

    pub fn stage2_dir(&self) -> PathBuf {
        self.root.join("stage2")
    }

    pub fn model_a(&self) -> PathBuf {
        self.stage2_dir().join("model_a")
    }

    pub fn train_a_trace(&self) -> PathBuf {
        self.stage2_dir().join("train_trace.json")
    }

    pub fn stage2_log(&self) -> PathBuf {
        self.stage2_dir().join("run.json")
    }

    pub fn stage3_dir(&self) -> PathBuf {
        self.root.join("stage3")
    }

    pub fn um_dir(&self) -> PathBuf {
        self.stage3_dir().join("um")
    }

    pub fn um_path(&self, subject_id: &str) -> PathBuf {
        self.um_dir().join(format!("um_{subject_id}"))
    }

    pub fn model_b(&self, ure: bool) -> PathBuf {
        if ure {
            self.stage3_dir().join("model_b")
        } else {
            self.stage3_dir().join("model_b_noure")
        }
    }

    pub fn train_b_trace(&self, ure: bool) -> PathBuf {
        if ure {
            self.stage3_dir().join("train_trace_ure.json")
        } else {
            self.stage3_dir().join("train_trace_noure.json")
        }
    }

    pub fn stage3_log(&self, ure: bool) -> PathBuf {
        if ure {
            self.stage3_dir().join("run_ure.json")
        } else {
            self.stage3_dir().join("run_noure.json")
        }
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn report_csv(&self, tag: &str) -> PathBuf {
        self.eval_dir().join(format!("{tag}.csv"))
    }

    pub fn ablation_csv(&self) -> PathBuf {
        self.eval_dir().join("ablation.csv")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.root.join("predictions")
    }
}
