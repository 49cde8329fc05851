//! Stage subcommands.
//!
//! Each command reads its inputs from the workspace written by the previous
//! stage, writes its own artifacts plus a small JSON run log, and prints a
//! one-line summary. Reruns with the same config and seed produce
//! byte-identical artifacts.

use crate::config::PipelineConfig;
use crate::workspace::Workspace;
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use tractpipe_core::metrics::{evaluate, DiceReport};
use tractpipe_core::phantom::{
    generate_atlas, generate_cohort, CohortManifest, LabeledEntry, PhantomSubject, UnlabeledEntry,
};
use tractpipe_core::rpa::{build_pseudo_dataset, LabeledSubject, PseudoEntry, PseudoManifest, UnlabeledSubject};
use tractpipe_core::segmentation::{
    load_model, predict_subject, save_model, train, SegModel, TrainingPair,
};
use tractpipe_core::ure::{load_uncertainty_map, save_uncertainty_map, uncertainty_map_for_subject, UncertaintyMap};
use tractpipe_core::volume::{load_labels, load_peaks, save_labels, save_volume, volume_paths};

fn rel(ws: &Workspace, path: &Path) -> String {
    path.strip_prefix(ws.root())
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Generates the atlas and cohort, writes all member volumes and the cohort
/// manifest. Unlabeled members get peaks only; their ground truth is never
/// written.
pub fn cmd_phantom(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.workspace);
    let phantom_cfg = cfg.phantom_config();
    let atlas = generate_atlas(&phantom_cfg).context("atlas generation failed")?;
    let cohort = generate_cohort(&atlas, &phantom_cfg).context("cohort generation failed")?;

    let dir = ws.cohort_dir();
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create workspace directory {}", dir.display()))?;

    save_volume(&atlas.peaks, &dir.join("atlas_peaks"))?;
    save_labels(&atlas.truth, &dir.join("atlas_labels"))?;

    let write_member =
        |id: &str, peaks: &tractpipe_core::volume::PeakVolume| -> anyhow::Result<PathBuf> {
            let base = dir.join(format!("{id}_peaks"));
            save_volume(peaks, &base)?;
            Ok(base)
        };

    let labeled_peaks = write_member(&cohort.labeled.id, &cohort.labeled.peaks)?;
    let labeled_labels = dir.join(format!("{}_labels", cohort.labeled.id));
    save_labels(&cohort.labeled.labels, &labeled_labels)?;

    let mut unlabeled_entries = Vec::new();
    for member in &cohort.unlabeled {
        let peaks = write_member(&member.id, &member.peaks)?;
        unlabeled_entries.push(UnlabeledEntry {
            id: member.id.clone(),
            peaks: rel(&ws, &peaks),
        });
    }

    let mut test_entries = Vec::new();
    for member in &cohort.test {
        let peaks = write_member(&member.id, &member.peaks)?;
        let labels = dir.join(format!("{}_labels", member.id));
        save_labels(&member.truth, &labels)?;
        test_entries.push(LabeledEntry {
            id: member.id.clone(),
            peaks: rel(&ws, &peaks),
            labels: rel(&ws, &labels),
        });
    }

    let manifest = CohortManifest {
        labeled: LabeledEntry {
            id: cohort.labeled.id.clone(),
            peaks: rel(&ws, &labeled_peaks),
            labels: rel(&ws, &labeled_labels),
        },
        unlabeled: unlabeled_entries,
        test: test_entries,
    };
    manifest.save(&ws.cohort_manifest())?;
    println!(
        "phantom: wrote cohort with 1 labeled, {} unlabeled, {} test subjects to {}",
        manifest.unlabeled.len(),
        manifest.test.len(),
        ws.cohort_dir().display()
    );
    Ok(())
}

fn load_cohort_manifest(ws: &Workspace) -> anyhow::Result<CohortManifest> {
    let path = ws.cohort_manifest();
    if !path.exists() {
        bail!(
            "cohort manifest {} not found; run `tractpipe phantom` first",
            path.display()
        );
    }
    Ok(CohortManifest::load(&path)?)
}

fn load_labeled_subject(ws: &Workspace, manifest: &CohortManifest) -> anyhow::Result<LabeledSubject> {
    let peaks = load_peaks(&ws.resolve(&manifest.labeled.peaks))?;
    let labels = load_labels(&ws.resolve(&manifest.labeled.labels))?;
    Ok(LabeledSubject::new(manifest.labeled.id.clone(), peaks, labels)?)
}

/// Registers the labeled subject onto every unlabeled subject and writes the
/// pseudo dataset: warped pairs, fields, per-registration loss traces, and
/// the pseudo manifest.
pub fn cmd_stage1(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.workspace);
    let manifest = load_cohort_manifest(&ws)?;
    let labeled = load_labeled_subject(&ws, &manifest)?;
    let unlabeled: Vec<UnlabeledSubject> = manifest
        .unlabeled
        .iter()
        .map(|entry| {
            Ok(UnlabeledSubject {
                id: entry.id.clone(),
                peaks: load_peaks(&ws.resolve(&entry.peaks))?,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let reg_cfg = cfg.registration_config();
    let stage_dir = ws.stage1_dir();
    fs::create_dir_all(ws.traces_dir())?;
    let outputs = build_pseudo_dataset(&labeled, &unlabeled, &reg_cfg, &ws.fields_dir())?;

    let mut entries = Vec::new();
    for (pseudo, trace) in &outputs {
        let id = &pseudo.source_unlabeled_id;
        let peaks_path = stage_dir.join(format!("pseudo_{id}_peaks"));
        let labels_path = stage_dir.join(format!("pseudo_{id}_labels"));
        save_volume(&pseudo.peaks, &peaks_path)?;
        save_labels(&pseudo.labels, &labels_path)?;
        let trace_path = ws.traces_dir().join(format!("{id}.json"));
        fs::write(&trace_path, serde_json::to_string(trace).expect("trace serializes"))?;
        entries.push(PseudoEntry {
            source_unlabeled_id: id.clone(),
            peaks: rel(&ws, &peaks_path),
            labels: rel(&ws, &labels_path),
            field: rel(&ws, &pseudo.field_path),
            loss_trace: rel(&ws, &trace_path),
        });
        println!(
            "stage1: {id} registered, loss {:.6} -> {:.6} over {} iterations",
            trace.first().copied().unwrap_or(f64::NAN),
            trace.last().copied().unwrap_or(f64::NAN),
            trace.len() - 1
        );
    }
    PseudoManifest { entries }.save(&ws.pseudo_manifest())?;
    println!(
        "stage1: synthesized {} pseudo subjects from {} unlabeled",
        outputs.len(),
        unlabeled.len()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Stage2Log {
    stage: String,
    training_subjects: usize,
    epochs: usize,
    final_loss: f64,
    model_checksum: String,
}

/// Trains model A on the single labeled subject only.
pub fn cmd_stage2(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.workspace);
    let manifest = load_cohort_manifest(&ws)?;
    let labeled = load_labeled_subject(&ws, &manifest)?;

    let train_cfg = cfg.train_a_config();
    let model = SegModel::new(
        cfg.model.patch_radius,
        cfg.model.hidden_size,
        labeled.labels.classes(),
        labeled.peaks.channels(),
        cfg.init_seed("train_a"),
    );
    let dataset = vec![TrainingPair::new(labeled.peaks, labeled.labels)?];
    let (model, trace) = train(model, &dataset, &train_cfg, None)?;

    fs::create_dir_all(ws.stage2_dir())?;
    save_model(&model, &ws.model_a())?;
    fs::write(
        ws.train_a_trace(),
        serde_json::to_string(&trace).expect("trace serializes"),
    )?;
    let log = Stage2Log {
        stage: "stage2".to_string(),
        training_subjects: dataset.len(),
        epochs: train_cfg.epochs,
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        model_checksum: format!("{:016x}", model.param_checksum()),
    };
    fs::write(
        ws.stage2_log(),
        serde_json::to_string_pretty(&log).expect("log serializes"),
    )?;
    println!(
        "stage2: trained model A on {} subject, loss {:.6} -> {:.6}",
        dataset.len(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Stage3Log {
    stage: String,
    ure: bool,
    training_subjects: usize,
    epochs: usize,
    final_loss: f64,
    model_a_checksum_before: String,
    model_a_checksum_after: String,
    cached_maps_reused: usize,
    maps_computed: usize,
}

/// Trains model B on the pseudo dataset; with URe enabled, per-subject
/// uncertainty maps from frozen model A weight the loss. Maps are cached on
/// disk and reused across reruns; training always consumes the cached file
/// contents so a warm rerun is byte-identical to a cold one.
pub fn cmd_stage3(cfg: &PipelineConfig, use_ure: bool) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.workspace);
    let manifest_path = ws.pseudo_manifest();
    if !manifest_path.exists() {
        bail!(
            "pseudo manifest {} not found; run `tractpipe stage1` first",
            manifest_path.display()
        );
    }
    let pseudo_manifest = PseudoManifest::load(&manifest_path)?;
    let model_a_path = ws.model_a();
    if !volume_checkpoint_exists(&model_a_path) {
        bail!(
            "model A checkpoint {} not found; run `tractpipe stage2` first",
            model_a_path.display()
        );
    }
    let model_a = load_model(&model_a_path)?;
    let checksum_before = model_a.param_checksum();

    let mut dataset = Vec::with_capacity(pseudo_manifest.entries.len());
    for entry in &pseudo_manifest.entries {
        let peaks = load_peaks(&ws.resolve(&entry.peaks))?;
        let labels = load_labels(&ws.resolve(&entry.labels))?;
        dataset.push(TrainingPair::new(peaks, labels)?);
    }

    let mut reused = 0;
    let mut computed = 0;
    let weight_maps: Option<Vec<UncertaintyMap>> = if use_ure {
        fs::create_dir_all(ws.um_dir())?;
        let mut maps = Vec::with_capacity(dataset.len());
        for (entry, pair) in pseudo_manifest.entries.iter().zip(&dataset) {
            let um_path = ws.um_path(&entry.source_unlabeled_id);
            if volume_paths(&um_path).0.exists() {
                reused += 1;
            } else {
                let map = uncertainty_map_for_subject(&model_a, &pair.peaks)?;
                save_uncertainty_map(&map, &um_path)?;
                computed += 1;
            }
            // Always consume the on-disk map so warm and cold runs train on
            // identical values.
            maps.push(load_uncertainty_map(&um_path)?);
        }
        Some(maps)
    } else {
        None
    };

    let train_cfg = cfg.train_b_config();
    let model = SegModel::new(
        cfg.model.patch_radius,
        cfg.model.hidden_size,
        model_a.classes(),
        model_a.channels(),
        cfg.init_seed("train_b"),
    );
    let (model, trace) = train(model, &dataset, &train_cfg, weight_maps.as_deref())?;

    let checksum_after = model_a.param_checksum();
    fs::create_dir_all(ws.stage3_dir())?;
    save_model(&model, &ws.model_b(use_ure))?;
    fs::write(
        ws.train_b_trace(use_ure),
        serde_json::to_string(&trace).expect("trace serializes"),
    )?;
    let log = Stage3Log {
        stage: "stage3".to_string(),
        ure: use_ure,
        training_subjects: dataset.len(),
        epochs: train_cfg.epochs,
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        model_a_checksum_before: format!("{checksum_before:016x}"),
        model_a_checksum_after: format!("{checksum_after:016x}"),
        cached_maps_reused: reused,
        maps_computed: computed,
    };
    fs::write(
        ws.stage3_log(use_ure),
        serde_json::to_string_pretty(&log).expect("log serializes"),
    )?;
    println!(
        "stage3{}: trained model B on {} pseudo subjects, loss {:.6} -> {:.6} ({} maps cached, {} computed)",
        if use_ure { "" } else { " (no URe)" },
        dataset.len(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN),
        reused,
        computed
    );
    Ok(())
}

fn volume_checkpoint_exists(base: &Path) -> bool {
    let s = base.to_string_lossy();
    PathBuf::from(format!("{s}.model.json")).exists()
}

/// Predicts one subject with a trained model and writes the probability
/// volume. Returns the output base path.
pub fn cmd_predict(
    cfg: &PipelineConfig,
    model_path: &Path,
    subject_path: &Path,
    out: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    let ws = Workspace::new(&cfg.workspace);
    if !volume_checkpoint_exists(model_path) {
        bail!("model checkpoint {} not found", model_path.display());
    }
    let model = load_model(model_path)?;
    let peaks = load_peaks(subject_path)
        .with_context(|| format!("cannot load subject {}", subject_path.display()))?;
    let pred = predict_subject(&model, &peaks)?;
    let out_path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            fs::create_dir_all(ws.predictions_dir())?;
            let stem = subject_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "subject".to_string());
            let stem = stem.trim_end_matches(".vol.json").trim_end_matches(".vol.bin");
            ws.predictions_dir().join(format!("{stem}_pred"))
        }
    };
    tractpipe_core::volume::write_f32_volume(
        &out_path,
        pred.dims(),
        pred.classes(),
        None,
        pred.probs(),
    )?;
    println!(
        "predict: wrote {} ({}x{}x{}x{})",
        out_path.display(),
        pred.dims()[0],
        pred.dims()[1],
        pred.dims()[2],
        pred.classes()
    );
    Ok(out_path)
}

fn load_test_subjects(ws: &Workspace, manifest: &CohortManifest) -> anyhow::Result<Vec<PhantomSubject>> {
    manifest
        .test
        .iter()
        .map(|entry| {
            Ok(PhantomSubject {
                id: entry.id.clone(),
                peaks: load_peaks(&ws.resolve(&entry.peaks))?,
                truth: load_labels(&ws.resolve(&entry.labels))?,
            })
        })
        .collect()
}

/// Evaluates a model on the test split and writes `eval/<tag>.csv`.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    model_path: &Path,
    tag: &str,
    threshold: f64,
) -> anyhow::Result<DiceReport> {
    let ws = Workspace::new(&cfg.workspace);
    let manifest = load_cohort_manifest(&ws)?;
    if !volume_checkpoint_exists(model_path) {
        bail!("model checkpoint {} not found", model_path.display());
    }
    let model = load_model(model_path)?;
    let test = load_test_subjects(&ws, &manifest)?;
    let report = evaluate(&model, &test, threshold, tag)?;
    fs::create_dir_all(ws.eval_dir())?;
    report.write_csv(&ws.report_csv(tag))?;
    println!(
        "evaluate[{tag}]: mean dice {:.4} +- {:.4} over {} subjects x {} classes",
        report.overall_mean,
        report.overall_std,
        test.len(),
        test[0].truth.classes()
    );
    Ok(report)
}

/// Mean and std per ablation row.
#[derive(Debug, Clone, Serialize)]
pub struct AblationSummary {
    pub baseline: (f64, f64),
    pub rpa: (f64, f64),
    pub rpa_ure: (f64, f64),
}

/// Full reproduction run: cohort, pseudo dataset, model A, both model B
/// variants, and the three-row ablation table.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> anyhow::Result<AblationSummary> {
    let ws = Workspace::new(&cfg.workspace);
    cmd_phantom(cfg)?;
    cmd_stage1(cfg)?;
    cmd_stage2(cfg)?;
    let baseline = cmd_evaluate(
        cfg,
        &ws.model_a(),
        "baseline",
        cfg.train_a_config().binarize_threshold,
    )?;
    cmd_stage3(cfg, false)?;
    let rpa = cmd_evaluate(
        cfg,
        &ws.model_b(false),
        "rpa",
        cfg.train_b_config().binarize_threshold,
    )?;
    cmd_stage3(cfg, true)?;
    let rpa_ure = cmd_evaluate(
        cfg,
        &ws.model_b(true),
        "rpa+ure",
        cfg.train_b_config().binarize_threshold,
    )?;

    let mut csv = String::from("method,mean_dice,std_dice\n");
    for report in [&baseline, &rpa, &rpa_ure] {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            report.method_tag, report.overall_mean, report.overall_std
        ));
    }
    fs::write(ws.ablation_csv(), csv)?;
    println!(
        "pipeline: baseline {:.4} | rpa {:.4} | rpa+ure {:.4} (written to {})",
        baseline.overall_mean,
        rpa.overall_mean,
        rpa_ure.overall_mean,
        ws.ablation_csv().display()
    );
    Ok(AblationSummary {
        baseline: (baseline.overall_mean, baseline.overall_std),
        rpa: (rpa.overall_mean, rpa.overall_std),
        rpa_ure: (rpa_ure.overall_mean, rpa_ure.overall_std),
    })
}
