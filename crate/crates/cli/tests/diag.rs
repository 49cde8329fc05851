//! Manual diagnostics for pipeline tuning. Run with:
//! `TRACTPIPE_WORKSPACE=<dir> cargo test -p tractpipe --test diag -- --ignored --nocapture`

use std::path::PathBuf;
use tractpipe_core::metrics::dice;
use tractpipe_core::rpa::PseudoManifest;
use tractpipe_core::segmentation::{binarize, load_model, predict_subject};
use tractpipe_core::ure::load_uncertainty_map;
use tractpipe_core::volume::{load_labels, load_peaks};

fn workspace() -> Option<PathBuf> {
    std::env::var("TRACTPIPE_WORKSPACE").ok().map(PathBuf::from)
}

#[test]
#[ignore]
fn inspect_ure_weights() {
    let Some(root) = workspace() else {
        eprintln!("set TRACTPIPE_WORKSPACE to inspect a run");
        return;
    };
    let manifest = PseudoManifest::load(&root.join("stage1/pseudo_manifest.json")).unwrap();
    for entry in &manifest.entries {
        let labels = load_labels(&root.join(&entry.labels)).unwrap();
        let um_path = root.join(format!("stage3/um/um_{}", entry.source_unlabeled_id));
        let Ok(um) = load_uncertainty_map(&um_path) else {
            eprintln!("no um for {}", entry.source_unlabeled_id);
            continue;
        };
        let mut pos = (0.0, 0usize);
        let mut neg = (0.0, 0usize);
        for (i, &w) in um.values().iter().enumerate() {
            if labels.data()[i] == 1 {
                pos = (pos.0 + w, pos.1 + 1);
            } else {
                neg = (neg.0 + w, neg.1 + 1);
            }
        }
        println!(
            "{}: mean um on positives {:.3} ({} voxels), on negatives {:.3} ({})",
            entry.source_unlabeled_id,
            pos.0 / pos.1.max(1) as f64,
            pos.1,
            neg.0 / neg.1.max(1) as f64,
            neg.1
        );
    }
}

#[test]
#[ignore]
fn inspect_predictions() {
    let Some(root) = workspace() else {
        eprintln!("set TRACTPIPE_WORKSPACE to inspect a run");
        return;
    };
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("cohort/manifest.json")).unwrap())
            .unwrap();
    for model_name in ["stage2/model_a", "stage3/model_b_noure", "stage3/model_b"] {
        let model = match load_model(&root.join(model_name)) {
            Ok(m) => m,
            Err(_) => continue,
        };
        for subject in manifest["test"].as_array().unwrap() {
            let peaks = load_peaks(&root.join(subject["peaks"].as_str().unwrap())).unwrap();
            let truth = load_labels(&root.join(subject["labels"].as_str().unwrap())).unwrap();
            let pred = predict_subject(&model, &peaks).unwrap();
            let mask = binarize(&pred, 0.5);
            let mut pos = (0.0, 0usize);
            let mut neg = (0.0, 0usize);
            for (i, &p) in pred.probs().iter().enumerate() {
                if truth.data()[i] == 1 {
                    pos = (pos.0 + p, pos.1 + 1);
                } else {
                    neg = (neg.0 + p, neg.1 + 1);
                }
            }
            let mut dices = Vec::new();
            for k in 0..truth.classes() {
                dices.push(format!("{:.3}", dice(&mask, &truth, k).unwrap()));
            }
            println!(
                "{model_name} on {}: mean p|pos {:.3} ({}), mean p|neg {:.3}, dice {:?}",
                subject["id"].as_str().unwrap(),
                pos.0 / pos.1.max(1) as f64,
                pos.1,
                neg.0 / neg.1.max(1) as f64,
                dices
            );
        }
    }
}

#[test]
#[ignore]
fn inspect_confusion() {
    let Some(root) = workspace() else {
        eprintln!("set TRACTPIPE_WORKSPACE to inspect a run");
        return;
    };
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("cohort/manifest.json")).unwrap())
            .unwrap();
    for model_name in ["stage3/model_b_noure", "stage3/model_b"] {
        let model = match load_model(&root.join(model_name)) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_shell = 0usize;
        let mut fn_interior = 0usize;
        for subject in manifest["test"].as_array().unwrap() {
            let peaks = load_peaks(&root.join(subject["peaks"].as_str().unwrap())).unwrap();
            let truth = load_labels(&root.join(subject["labels"].as_str().unwrap())).unwrap();
            let pred = predict_subject(&model, &peaks).unwrap();
            let mask = binarize(&pred, 0.5);
            let dims = truth.dims();
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        for k in 0..truth.classes() {
                            let t = truth.get(x, y, z, k);
                            let p = mask.get(x, y, z, k);
                            match (p, t) {
                                (1, 1) => tp += 1,
                                (1, 0) => fp += 1,
                                (0, 1) => {
                                    // Shell: a 6-neighbor is outside the mask.
                                    let mut shell = false;
                                    let nbrs: [(isize, isize, isize); 6] = [
                                        (-1, 0, 0), (1, 0, 0), (0, -1, 0),
                                        (0, 1, 0), (0, 0, -1), (0, 0, 1),
                                    ];
                                    for (dx, dy, dz) in nbrs {
                                        let nx = x as isize + dx;
                                        let ny = y as isize + dy;
                                        let nz = z as isize + dz;
                                        if nx < 0 || ny < 0 || nz < 0
                                            || nx >= dims[0] as isize
                                            || ny >= dims[1] as isize
                                            || nz >= dims[2] as isize
                                            || truth.get(nx as usize, ny as usize, nz as usize, k) == 0
                                        {
                                            shell = true;
                                            break;
                                        }
                                    }
                                    if shell {
                                        fn_shell += 1;
                                    } else {
                                        fn_interior += 1;
                                    }
                                }
                                _ => {}
                            }
                        }
                    }
                }
            }
        }
        println!(
            "{model_name}: tp {tp} fp {fp} fn_shell {fn_shell} fn_interior {fn_interior}"
        );
    }
}

#[test]
#[ignore]
fn threshold_sweep() {
    let Some(root) = workspace() else {
        eprintln!("set TRACTPIPE_WORKSPACE to inspect a run");
        return;
    };
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("cohort/manifest.json")).unwrap())
            .unwrap();
    let mut subjects = Vec::new();
    for subject in manifest["test"].as_array().unwrap() {
        subjects.push((
            load_peaks(&root.join(subject["peaks"].as_str().unwrap())).unwrap(),
            load_labels(&root.join(subject["labels"].as_str().unwrap())).unwrap(),
        ));
    }
    for model_name in ["stage2/model_a", "stage3/model_b_noure", "stage3/model_b"] {
        let model = match load_model(&root.join(model_name)) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let preds: Vec<_> = subjects
            .iter()
            .map(|(peaks, _)| predict_subject(&model, peaks).unwrap())
            .collect();
        for thr in [0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55] {
            let mut sum = 0.0;
            let mut count = 0;
            for (pred, (_, truth)) in preds.iter().zip(&subjects) {
                let mask = binarize(pred, thr);
                for k in 0..truth.classes() {
                    sum += dice(&mask, truth, k).unwrap();
                    count += 1;
                }
            }
            println!("{model_name} thr {thr:.2}: mean dice {:.4}", sum / count as f64);
        }
    }
}

#[test]
#[ignore]
fn per_plane_confidence() {
    use tractpipe_core::ure::uncertainty_value;
    use tractpipe_core::volume::{extract_slices, PlaneAxis};
    let Some(root) = workspace() else {
        eprintln!("set TRACTPIPE_WORKSPACE to inspect a run");
        return;
    };
    let manifest = PseudoManifest::load(&root.join("stage1/pseudo_manifest.json")).unwrap();
    let model = load_model(&root.join("stage2/model_a")).unwrap();
    let entry = &manifest.entries[0];
    let peaks = load_peaks(&root.join(&entry.peaks)).unwrap();
    let labels = load_labels(&root.join(&entry.labels)).unwrap();
    let dims = peaks.dims();
    let classes = labels.classes();
    use tractpipe_core::segmentation::SliceClassifier;
    for plane in PlaneAxis::ALL {
        let mut pos = (0.0, 0usize);
        let mut neg = (0.0, 0usize);
        for slice in extract_slices(&peaks, plane) {
            let probs = model.forward_slice(&slice).unwrap();
            for h in 0..slice.height {
                for w in 0..slice.width {
                    let (x, y, z) = plane.to_voxel(slice.index, w, h);
                    for k in 0..classes {
                        let um = uncertainty_value(probs[(h * slice.width + w) * classes + k]);
                        if labels.get(x, y, z, k) == 1 {
                            pos = (pos.0 + um, pos.1 + 1);
                        } else {
                            neg = (neg.0 + um, neg.1 + 1);
                        }
                    }
                }
            }
        }
        println!(
            "plane {plane:?}: mean um|pos {:.3}, um|neg {:.3}",
            pos.0 / pos.1 as f64,
            neg.0 / neg.1 as f64
        );
    }
    let aggregate = predict_subject(&model, &peaks).unwrap();
    let mut pos = (0.0, 0usize);
    let mut neg = (0.0, 0usize);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                for k in 0..classes {
                    let um = uncertainty_value(aggregate.get(x, y, z, k));
                    if labels.get(x, y, z, k) == 1 {
                        pos = (pos.0 + um, pos.1 + 1);
                    } else {
                        neg = (neg.0 + um, neg.1 + 1);
                    }
                }
            }
        }
    }
    println!(
        "aggregate: mean um|pos {:.3}, um|neg {:.3}",
        pos.0 / pos.1 as f64,
        neg.0 / neg.1 as f64
    );
}

#[test]
#[ignore]
fn inspect_pseudo_quality() {
    // Requires the phantom cohort to be regenerated in memory to access
    // hidden truths of unlabeled members; reads the run config from
    // TRACTPIPE_CONFIG.
    let Some(cfg_path) = std::env::var("TRACTPIPE_CONFIG").ok() else {
        eprintln!("set TRACTPIPE_CONFIG to the run's config file");
        return;
    };
    let cfg = tractpipe::PipelineConfig::load(std::path::Path::new(&cfg_path)).unwrap();
    let root = cfg.workspace.clone();
    let phantom_cfg = cfg.phantom_config();
    let atlas = tractpipe_core::phantom::generate_atlas(&phantom_cfg).unwrap();
    let cohort = tractpipe_core::phantom::generate_cohort(&atlas, &phantom_cfg).unwrap();
    let manifest = PseudoManifest::load(&root.join("stage1/pseudo_manifest.json")).unwrap();
    for (entry, member) in manifest.entries.iter().zip(&cohort.unlabeled) {
        assert_eq!(entry.source_unlabeled_id, member.id);
        let pseudo_labels = load_labels(&root.join(&entry.labels)).unwrap();
        let mut before = Vec::new();
        let mut after = Vec::new();
        for k in 0..member.truth.classes() {
            before.push(format!(
                "{:.3}",
                dice(&cohort.labeled.labels, &member.truth, k).unwrap()
            ));
            after.push(format!("{:.3}", dice(&pseudo_labels, &member.truth, k).unwrap()));
        }
        println!(
            "{}: label dice vs hidden truth before {:?} after {:?}",
            member.id, before, after
        );
    }
}
