use super::*;
use crate::objectives::RegMode;

fn blobs_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        schedule: LrSchedule::constant(0.05).unwrap(),
        data: DataSource::Blobs,
        n_train: 200,
        n_test: 200,
        arch: ArchPreset::Linear,
        eval_train_examples: 200,
        ..TrainConfig::default()
    }
}

#[test]
fn momentum_update_matches_hand_steps() {
    let (m, wd, lr) = (0.9, 0.1, 0.5);
    let mut opt = Sgd::new(m, wd);
    let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
    let grads = [[0.5, 1.0], [-1.0, 0.25], [2.0, 0.0]];
    // v1 = g1; θ1 = θ0 − lr(v1 + wdθ0), and so on
    let mut theta = [1.0, -2.0];
    let mut v = [0.0, 0.0];
    for g in grads {
        for i in 0..2 {
            v[i] = m * v[i] + g[i];
            theta[i] -= lr * (v[i] + wd * theta[i]);
        }
        opt.step(&mut p, &[Tensor::vector(g.to_vec())], lr).unwrap();
    }
    assert_eq!(p[0].data(), &theta);
    // hand value of the first coordinate after three steps
    let t1: f64 = 1.0 - 0.5 * (0.5 + 0.1);
    let v2: f64 = 0.9 * 0.5 - 1.0;
    let t2 = t1 - 0.5 * (v2 + 0.1 * t1);
    let v3 = 0.9 * v2 + 2.0;
    let t3 = t2 - 0.5 * (v3 + 0.1 * t2);
    assert!((p[0].data()[0] - t3).abs() < 1e-15);
}

#[test]
fn schedule_lookup_and_parsing() {
    let s: LrSchedule = "0:0.05,40:0.005".parse().unwrap();
    assert_eq!(s.lr_at(0), 0.05);
    assert_eq!(s.lr_at(39), 0.05);
    assert_eq!(s.lr_at(40), 0.005);
    assert_eq!(s.boundaries().collect::<Vec<_>>(), vec![40]);
    assert_eq!(s, TrainConfig::default().schedule);
    assert_eq!(s.to_string().parse::<LrSchedule>().unwrap(), s);
    assert_eq!("0.1".parse::<LrSchedule>().unwrap().lr_at(7), 0.1);
    assert!("5:0.1".parse::<LrSchedule>().is_err());
    assert!("0:-1".parse::<LrSchedule>().is_err());
    assert!("0:0.1,0:0.2".parse::<LrSchedule>().is_err());
}

#[test]
fn config_invariants() {
    let mut c = TrainConfig::default();
    c.validate().unwrap();
    c.momentum = 1.0;
    assert!(c.validate().is_err());
    c.momentum = 0.5;
    c.batch_size = 0;
    assert!(c.validate().is_err());
}

#[test]
fn zero_model_predicts_class_zero_everywhere() {
    let ds = crate::data::glyph_dataset(50, 50, 1).unwrap();
    let arch = Architecture::build(ArchPreset::Linear, ds.input, 10, 10.0).unwrap();
    let m = ClassifierModel::zeros(arch);
    assert_eq!(evaluate_accuracy(&m, &ds.test).unwrap(), 0.1);
}

#[test]
fn separable_blobs_are_learned() {
    let out = train(&blobs_cfg(50)).unwrap();
    out.report.check().unwrap();
    let last = out.report.epochs.last().unwrap();
    assert!(last.test_acc >= 0.99, "{}", last.test_acc);
    assert_eq!(out.report.epochs.len(), 50);
    assert!(out.report.epochs.iter().all(|e| (0.0..=1.0).contains(&e.train_acc)));
    assert_eq!(out.report.steps.len(), 50 * 7);
}

#[test]
fn runs_replay_exactly() {
    let mut cfg = blobs_cfg(2);
    cfg.arch = ArchPreset::Mlp(vec![8]);
    cfg.reg = RegularizerConfig::preset(RegMode::ScoreMatching);
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(a.report.epochs[0].loss, b.report.epochs[0].loss);
    assert_eq!(a.report.steps, b.report.steps);
    assert_eq!(a.model.params, b.model.params);
    cfg.seed = 1;
    assert_ne!(train(&cfg).unwrap().report.steps, a.report.steps);
}

#[test]
fn checkpoints_at_boundaries_and_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = blobs_cfg(4);
    cfg.schedule = "0:0.05,2:0.01".parse().unwrap();
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let out = train(&cfg).unwrap();
    let names: Vec<String> = out
        .report
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["epoch2.ckpt", "final.ckpt"]);
    let loaded = load_model(out.report.final_checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(
        evaluate_accuracy(&loaded, &out.dataset.test).unwrap().to_bits(),
        evaluate_accuracy(&out.model, &out.dataset.test).unwrap().to_bits()
    );
}

#[test]
fn divergence_keeps_last_finite_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = blobs_cfg(3);
    cfg.schedule = LrSchedule::constant(1e305).unwrap();
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let out = train(&cfg).unwrap();
    let d = out.report.divergence.clone().expect("diverges");
    assert_eq!(out.report.check().unwrap_err().exit_code(), 4);
    assert!(out.model.params.iter().all(|(_, t)| t.all_finite()));
    assert!(dir.path().join("last_finite.ckpt").exists());
    assert!(d.epoch < 3);
}

#[test]
fn mismatched_model_is_rejected() {
    let cfg = blobs_cfg(1);
    let ds = cfg.data.open(10, 10, 0).unwrap();
    let arch = Architecture::build(ArchPreset::Linear, crate::models::InputShape::flat(3), 2, 10.0).unwrap();
    let mut m = ClassifierModel::zeros(arch);
    assert!(train_model(&mut m, &ds, &cfg, &mut |_, _| Ok(())).is_err());
}

#[test]
fn single_cell_sweep_equals_single_run() {
    let mut cfg = blobs_cfg(3);
    cfg.arch = ArchPreset::Mlp(vec![8]);
    cfg.reg = RegularizerConfig::preset(RegMode::ScoreMatching);
    let grid = SweepGrid {
        lambdas: vec![cfg.reg.lambda, -1.0],
        mus: vec![cfg.reg.mu],
    };
    let report = sweep(&cfg, &grid, None, &crate::evaluation::SamplerConfig::default(), 0).unwrap();
    let single = train(&cfg).unwrap();
    assert_eq!(report.cells[0].accuracy, single.report.final_test_accuracy());
    assert!(report.cells[1].error.as_deref().unwrap().starts_with("usage"));
    assert!(report.to_csv().lines().count() == 3);
    assert!(report.to_table().contains(" / -"));
    assert!(sweep(
        &cfg,
        &SweepGrid {
            lambdas: vec![],
            mus: vec![1.0]
        },
        None,
        &Default::default(),
        0
    )
    .is_err());
}

#[test]
fn report_csv_layout() {
    let out = train(&blobs_cfg(1)).unwrap();
    let csv = out.report.to_csv();
    assert!(csv.starts_with("epoch,lr,train_acc,test_acc,total,ce,h,grad_norm,stability\n"));
    assert_eq!(csv.lines().count(), 2);
    assert!(out
        .report
        .steps_csv()
        .starts_with("step,total,ce,h,grad_norm,stability\n"));
}
