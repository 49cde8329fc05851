//! Cross-module flow: phantom -> registration -> training -> evaluation,
//! entirely in memory, plus a channel-count smoke test.

use tractpipe_core::metrics::evaluate;
use tractpipe_core::phantom::{generate_atlas, generate_cohort, PhantomConfig};
use tractpipe_core::registration::RegistrationConfig;
use tractpipe_core::rpa::{build_pseudo_dataset, UnlabeledSubject};
use tractpipe_core::segmentation::{
    predict_subject, train, SegModel, TrainConfig, TrainingPair,
};
use tractpipe_core::ure::uncertainty_map_for_subject;
use tractpipe_core::volume::{LabelVolume, PeakVolume};

#[test]
fn miniature_end_to_end_flow() {
    let phantom_cfg = PhantomConfig {
        dims: [14, 14, 14],
        n_tracts: 2,
        tube_radius: 2.2,
        deform_amplitude: 1.5,
        deform_smoothness: 3.0,
        noise_sigma: 0.1,
        cohort_size: 5,
        seed: 91,
    };
    let atlas = generate_atlas(&phantom_cfg).unwrap();
    let cohort = generate_cohort(&atlas, &phantom_cfg).unwrap();
    assert_eq!(cohort.unlabeled.len(), 3);
    assert_eq!(cohort.test.len(), 1);

    let reg_cfg = RegistrationConfig {
        gamma: 2.0e4,
        step_size: 0.25,
        max_iters: 15,
        rel_tol: 1e-6,
        seed: 0,
    };
    let dir = tempfile::tempdir().unwrap();
    let unlabeled: Vec<UnlabeledSubject> = cohort
        .unlabeled
        .iter()
        .map(|m| UnlabeledSubject {
            id: m.id.clone(),
            peaks: m.peaks.clone(),
        })
        .collect();
    let pseudo = build_pseudo_dataset(&cohort.labeled, &unlabeled, &reg_cfg, dir.path()).unwrap();
    assert_eq!(pseudo.len(), 3);

    let model_a = SegModel::new(1, 8, 2, 3, 17);
    let train_cfg = TrainConfig {
        learning_rate: 0.3,
        epochs: 3,
        batch_voxels: 256,
        seed: 3,
        binarize_threshold: 0.5,
    };
    let pair_a = TrainingPair::new(cohort.labeled.peaks.clone(), cohort.labeled.labels.clone())
        .unwrap();
    let (model_a, trace_a) = train(model_a, &[pair_a], &train_cfg, None).unwrap();
    assert!(trace_a.last().unwrap() < &trace_a[0]);

    let maps: Vec<_> = pseudo
        .iter()
        .map(|(p, _)| uncertainty_map_for_subject(&model_a, &p.peaks).unwrap())
        .collect();
    let pairs: Vec<TrainingPair> = pseudo
        .into_iter()
        .map(|(p, _)| TrainingPair::new(p.peaks, p.labels).unwrap())
        .collect();
    let model_b = SegModel::new(1, 8, 2, 3, 18);
    let (model_b, _) = train(model_b, &pairs, &train_cfg, Some(&maps)).unwrap();

    let report = evaluate(&model_b, &cohort.test, 0.5, "flow").unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        assert!((0.0..=1.0).contains(&row.dice));
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("method,subject_id,class,dice\n"));
}

/// Nothing in the stack hard-codes three channels: a nine-channel volume
/// flows through registration, training, and prediction untouched.
#[test]
fn nine_channel_smoke() {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(92);
    let dims = [8, 8, 8];
    let channels = 9;
    let len = dims[0] * dims[1] * dims[2];
    let peaks = PeakVolume::new(
        dims,
        channels,
        (0..len * channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let labels = LabelVolume::new(
        dims,
        2,
        (0..len * 2).map(|_| rng.random_range(0..2u8)).collect(),
    )
    .unwrap();

    let reg_cfg = RegistrationConfig {
        gamma: 1.0e3,
        max_iters: 3,
        ..RegistrationConfig::default()
    };
    let target = PeakVolume::new(
        dims,
        channels,
        (0..len * channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let (field, trace) =
        tractpipe_core::registration::optimize_registration(&peaks, &target, &reg_cfg).unwrap();
    assert!(trace.last().unwrap() <= &trace[0]);
    let moved = tractpipe_core::registration::warp(&peaks, &field).unwrap();
    assert_eq!(moved.channels(), 9);

    let model = SegModel::new(1, 4, 2, channels, 5);
    let cfg = TrainConfig {
        epochs: 1,
        batch_voxels: 128,
        ..TrainConfig::default()
    };
    let pair = TrainingPair::new(moved, labels).unwrap();
    let (model, _) = train(model, &[pair], &cfg, None).unwrap();
    let pred = predict_subject(&model, &peaks).unwrap();
    assert_eq!(pred.dims(), dims);
    assert_eq!(pred.classes(), 2);
}
