use blurvid::blur_synth::{generate_rotational_sample, procedural, BlurSample, SynthConfig};
use blurvid::network::{load_checkpoint, save_checkpoint, Model, NetworkConfig};
use blurvid::objectives::{psnr, LossConfig, PSNR_CAP_DB};
use blurvid::trainer::{
    cross_evaluate, dry_run, evaluate, evaluate_with, lr_at, position_labels, train, EvalOptions, TrainConfig,
    TrainOutputs, LOG_FILE, LR_FILE,
};

fn data(count: u64) -> Vec<BlurSample<f64>> {
    let pano = procedural::panorama::<f64>(64, 3);
    let cfg = SynthConfig {
        output_size: 16,
        ..SynthConfig::default()
    };
    (0..count)
        .map(|i| generate_rotational_sample(&pano, &cfg, i).unwrap())
        .collect()
}

fn tiny() -> NetworkConfig {
    NetworkConfig {
        levels: 2,
        frames: 3,
        base_widths: vec![4, 6, 8, 8, 8],
        dense_layers: 2,
        ..NetworkConfig::default()
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 2,
        decay_epochs: vec![2],
        batch_size: 2,
        input_size: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(1, &cfg), 1e-4);
    assert_eq!(lr_at(39, &cfg), 1e-4);
    assert_eq!(lr_at(40, &cfg), 5e-5);
    assert_eq!(lr_at(60, &cfg), 2.5e-5);
    assert_eq!(lr_at(80, &cfg), 2.5e-5);
    let log = dry_run(&cfg).unwrap();
    assert_eq!(log.lr_trace.len(), 80);
    assert!(log.iterations.is_empty());
    let bad = TrainConfig {
        decay_epochs: vec![60, 40],
        ..cfg
    };
    assert!(dry_run(&bad).is_err());
}

#[test]
fn training_is_deterministic() {
    let d = data(4);
    let run = || {
        let mut model = Model::<f64>::new(tiny(), 0).unwrap();
        let log = train(
            &mut model,
            &d,
            &quick(),
            &LossConfig::default(),
            None,
            &TrainOutputs::default(),
        )
        .unwrap();
        (log, model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a.iterations.len(), 4);
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(ma.params(), mb.params());
    assert!(a.iterations.iter().all(|r| r.total.is_finite()));
    assert_eq!(a.iterations[3].lr, 5e-4);
}

#[test]
fn run_dir_artifacts_and_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(2);
    let mut model = Model::<f64>::new(tiny(), 1).unwrap();
    let outputs = TrainOutputs {
        run_dir: Some(dir.path().to_path_buf()),
        checkpoint_extra: serde_json::json!({"tag": "t"}),
    };
    train(&mut model, &d, &quick(), &LossConfig::default(), None, &outputs).unwrap();
    assert!(dir.path().join(LOG_FILE).exists());
    assert!(dir.path().join(LR_FILE).exists());

    let path = dir.path().join("again.ckpt");
    save_checkpoint(&path, &model, serde_json::json!({"k": 1})).unwrap();
    let (back, header) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(header.extra["k"], 1);
    assert_eq!(back.params(), model.params());
    let opts = EvalOptions::default();
    assert_eq!(
        evaluate(&model, &d, &opts).unwrap(),
        evaluate(&back, &d, &opts).unwrap()
    );
}

#[test]
fn oracle_and_blur_baselines() {
    let d = data(3);
    let opts = EvalOptions::default();
    let (_, gt) = evaluate_with(&d, 3, &opts, |s| Ok(s.gt_sequence(3)?.into_iter().cloned().collect())).unwrap();
    assert!(gt.mean_psnr.iter().all(|&p| p == PSNR_CAP_DB));
    assert!(gt.mean_ssim.iter().all(|&s| (s - 1.0).abs() < 1e-12));

    let (_, blur) = evaluate_with(&d, 3, &opts, |s| Ok(vec![s.blurred.clone(); 3])).unwrap();
    let want = d
        .iter()
        .map(|s| psnr(&s.blurred, s.gt_sequence(3).unwrap()[1]).unwrap())
        .sum::<f64>()
        / 3.0;
    assert!((blur.psnr_at("F_m").unwrap() - want).abs() < 1e-9);
}

#[test]
fn rotation_bins_partition_the_samples() {
    let d = data(12);
    let opts = EvalOptions {
        rotation_bin_deg: 4.0,
        ..EvalOptions::default()
    };
    let (evals, report) = evaluate_with(&d, 3, &opts, |s| Ok(vec![s.blurred.clone(); 3])).unwrap();
    let mut seen: Vec<usize> = report.rotation_bins.iter().flat_map(|b| b.samples.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..12).collect::<Vec<_>>());
    assert_eq!(report.unbinned, 0);
    for b in &report.rotation_bins {
        assert_eq!(b.count, b.samples.len());
        for &i in &b.samples {
            let m = evals[i].rotation_magnitude.unwrap();
            assert!(b.lo <= m && m < b.hi);
        }
    }
}

#[test]
fn cross_evaluation_carries_labels() {
    let d = data(2);
    let model = Model::<f64>::new(tiny(), 0).unwrap();
    let (_, r) = cross_evaluate(&model, &d, &EvalOptions::default(), "pano", "video").unwrap();
    assert_eq!(r.labels["train"], "pano");
    assert_eq!(r.labels["eval"], "video");
    assert_eq!(r.positions, position_labels(3));
    assert_eq!(position_labels(7), ["F_i", "F_2", "F_3", "F_m", "F_5", "F_6", "F_f"]);
}

#[test]
fn empty_training_set_is_rejected() {
    let mut model = Model::<f64>::new(tiny(), 0).unwrap();
    let empty: Vec<BlurSample<f64>> = Vec::new();
    assert!(train(
        &mut model,
        &empty,
        &quick(),
        &LossConfig::default(),
        None,
        &TrainOutputs::default()
    )
    .is_err());
}
