use butterflow::butterfly::Init;
use butterflow::data::spec::standard_normal;
use butterflow::data::toy2d::toy2d;
use butterflow::data::Dataset;
use butterflow::flow::{FlowConfig, FlowModel, MixConfig, ParamKind, Shape};
use butterflow::train::{backward, mean_nll, EmaMode, MetricSplit, TrainConfig, Trainer};
use butterflow::Error;

fn flat(d: usize, steps: usize, mix: MixConfig, seed: u64) -> FlowConfig {
    FlowConfig {
        shape: Shape::Flat(d),
        levels: 1,
        steps,
        coupling_channels: 16,
        mix,
        seed,
    }
}

fn rot(m: usize) -> MixConfig {
    MixConfig {
        butterfly_levels: vec![m],
        init: Init::Rotation,
        ..MixConfig::default()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn train_config(iters: u64) -> TrainConfig {
    TrainConfig {
        max_iters: iters,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn identity_model_at_origin_has_only_log_det_gradients() {
    let d = 4;
    let model = FlowModel::new(flat(d, 2, MixConfig { butterfly_levels: vec![2], ..MixConfig::default() }, 0)).unwrap();
    let (_, g) = backward(&model, &[vec![0.0; d], vec![0.0; d]], 1).unwrap();
    let coupling_raw = -(1.0 - sigmoid(2.0));
    for t in &g.tensors {
        let expect = |i: usize| -> f64 {
            if t.name.ends_with("actnorm.log_scale") {
                -1.0
            } else if t.name.contains(".mix.") && t.name.ends_with(".weights") {
                // d log|ad - bc| / d(a, b, c, d) at the identity pair.
                [-1.0, 0.0, 0.0, -1.0][i % 4]
            } else if t.name.ends_with("coupling.net.l2.bias") && i < d / 2 {
                coupling_raw
            } else {
                0.0
            }
        };
        for (i, v) in t.data.iter().enumerate() {
            assert!((v - expect(i)).abs() < 1e-15, "{}[{i}] = {v}", t.name);
        }
    }
}

#[test]
fn actnorm_log_scale_gradient_counts_sites() {
    let cfg = FlowConfig {
        shape: Shape::Seq { channels: 2, length: 8 },
        levels: 1,
        steps: 1,
        coupling_channels: 8,
        mix: MixConfig::default(),
        seed: 0,
    };
    let model = FlowModel::new(cfg).unwrap();
    let (_, g) = backward(&model, &[vec![0.0; 16]], 1).unwrap();
    let ls = g.get("level0.step0.actnorm.log_scale").unwrap();
    // After squeeze: 4 channels at 4 sites.
    assert_eq!(ls.data, vec![-4.0; 4]);
}

#[test]
fn backward_is_independent_of_thread_count() {
    let mut model = FlowModel::new(flat(8, 2, rot(3), 4)).unwrap();
    model.perturb(9, 0.1).unwrap();
    let ds = standard_normal(8, 50, 1).unwrap();
    let (a, ga) = backward(&model, &ds.train, 1).unwrap();
    for threads in [2, 3, 8] {
        let (b, gb) = backward(&model, &ds.train, threads).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ga, gb);
    }
    assert!((a - mean_nll(&model, &ds.train).unwrap()).abs() < 1e-12);
}

fn singular_pair_model(det: f64) -> FlowModel {
    let mut model = FlowModel::new(flat(2, 1, MixConfig::default(), 0)).unwrap();
    let mut t = model.export();
    let w = t
        .tensors
        .iter_mut()
        .find(|t| t.name == "level0.step0.mix.f0.weights")
        .unwrap();
    w.data = vec![1.0, 1.0, 1.0, 1.0 + det];
    model.import(&t).unwrap();
    model
}

#[test]
fn shrinking_pair_determinant_blows_up_the_loss() {
    let x = vec![vec![0.3, -0.2]];
    let base = mean_nll(&singular_pair_model(1.0), &x).unwrap();
    let mut last = base;
    for det in [1e-3, 1e-6, 1e-12] {
        let nll = mean_nll(&singular_pair_model(det), &x).unwrap();
        assert!(nll > last);
        last = nll;
    }
    // Exactly -log(det) nats above the unit-determinant model, minus the
    // change in the prior term.
    assert!(last > 20.0, "nll = {last}");
    assert!(last - base > -(1e-12f64).ln() - 1.0);
    let err = backward(&singular_pair_model(0.0), &x, 1).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { ref layer } if layer.contains("mix")), "{err:?}");
}

#[test]
fn zero_iterations_leave_model_unchanged() {
    let ds = toy2d("two_rings", 64, 0).unwrap();
    let model = FlowModel::new(flat(2, 2, MixConfig::default(), 0)).unwrap();
    let mut t = Trainer::new(model.clone(), train_config(0)).unwrap();
    let metrics = t.run(&ds, |_, _| {}).unwrap();
    assert!(metrics.is_empty());
    assert_eq!(t.model, model);
}

fn run(seed: u64, iters: u64, threads: usize, ds: &Dataset) -> Trainer {
    let model = FlowModel::new(flat(8, 2, rot(3), seed)).unwrap();
    let mut t = Trainer::new(
        model,
        TrainConfig {
            threads,
            seed,
            ema: EmaMode::Butterfly,
            ..train_config(iters)
        },
    )
    .unwrap();
    t.run(ds, |_, _| {}).unwrap();
    t
}

#[test]
fn training_is_deterministic() {
    let ds = standard_normal(8, 256, 3).unwrap();
    let a = run(5, 100, 1, &ds);
    let b = run(5, 100, 4, &ds);
    assert_eq!(a.model.export(), b.model.export());
    assert_eq!(a.state(), b.state());
    let c = run(6, 100, 1, &ds);
    assert_ne!(a.model.export(), c.model.export());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ds = standard_normal(8, 256, 3).unwrap();
    let full = run(2, 30, 1, &ds);
    let half = run(2, 12, 1, &ds);
    let model = FlowModel::new(flat(8, 2, rot(3), 2)).unwrap();
    let mut resumed = Trainer::restore(model, half.config.clone(), &half.state()).unwrap();
    assert_eq!(resumed.iter(), 12);
    resumed.config.max_iters = 30;
    resumed.run(&ds, |_, _| {}).unwrap();
    assert_eq!(resumed.state(), full.state());
}

#[test]
fn butterfly_ema_only_touches_butterfly_parameters() {
    let ds = standard_normal(8, 256, 3).unwrap();
    let t = run(1, 20, 1, &ds);
    let live = t.model.export();
    let eval = t.eval_model().unwrap().export();
    let mut changed = 0;
    for (a, b) in live.tensors.iter().zip(&eval.tensors) {
        if a.kind == ParamKind::Butterfly {
            changed += usize::from(a.data != b.data);
        } else {
            assert_eq!(a, b);
        }
    }
    assert!(changed > 0);
}

#[test]
fn frozen_butterfly_group_stays_at_init() {
    let ds = standard_normal(8, 128, 3).unwrap();
    let model = FlowModel::new(flat(8, 2, MixConfig { butterfly_levels: vec![3], ..MixConfig::default() }, 0)).unwrap();
    let before = model.export();
    let mut t = Trainer::new(
        model,
        TrainConfig {
            train_butterfly: false,
            ..train_config(20)
        },
    )
    .unwrap();
    t.run(&ds, |_, _| {}).unwrap();
    let after = t.model.export();
    for (a, b) in before.tensors.iter().zip(&after.tensors) {
        if a.kind == ParamKind::Butterfly {
            assert_eq!(a, b);
        }
    }
    assert_ne!(before, after);
}

#[test]
fn persistent_non_finite_loss_aborts() {
    let mut ds = standard_normal(4, 64, 0).unwrap();
    let mut model = FlowModel::new(flat(4, 1, MixConfig::default(), 0)).unwrap();
    model.initialize(&ds.train).unwrap();
    for x in &mut ds.train {
        x[0] = f64::INFINITY;
    }
    let mut t = Trainer::new(model, train_config(100)).unwrap();
    let mut seen = 0;
    let err = t.run(&ds, |_, _| seen += 1).unwrap_err();
    assert!(matches!(err, Error::TrainingAborted(_)), "{err:?}");
    assert_eq!(seen, 4);
    assert_eq!(t.iter(), 5);
}

#[test]
fn metrics_follow_the_schedule() {
    let ds = toy2d("moons", 256, 1).unwrap();
    let model = FlowModel::new(flat(2, 2, MixConfig::default(), 0)).unwrap();
    let mut t = Trainer::new(
        model,
        TrainConfig {
            eval_every: 5,
            ..train_config(12)
        },
    )
    .unwrap();
    let m = t.run(&ds, |_, _| {}).unwrap();
    let train: Vec<_> = m.iter().filter(|m| m.split == MetricSplit::Train).collect();
    let val: Vec<u64> = m.iter().filter(|m| m.split == MetricSplit::Val).map(|m| m.iter).collect();
    assert_eq!(train.len(), 12);
    assert_eq!(val, vec![5, 10, 12]);
    assert!((train[4].lr - 0.0005).abs() < 1e-15);
    assert!(train.iter().all(|m| m.bpd.is_none() && m.nll_nats_per_dim.is_finite()));
}

#[test]
fn two_rings_loss_trends_down() {
    let ds = toy2d("two_rings", 4096, 0).unwrap();
    let model = FlowModel::new(FlowConfig {
        coupling_channels: 32,
        ..flat(2, 4, MixConfig::default(), 0)
    })
    .unwrap();
    let mut t = Trainer::new(
        model,
        TrainConfig {
            schedule: butterflow::train::LrSchedule {
                base: 3e-3,
                ..Default::default()
            },
            ..train_config(5000)
        },
    )
    .unwrap();
    let m = t.run(&ds, |_, _| {}).unwrap();
    let train: Vec<f64> = m
        .iter()
        .filter(|m| m.split == MetricSplit::Train)
        .map(|m| m.nll_nats_per_dim)
        .collect();
    let avg = |end: usize| train[end - 500..end].iter().sum::<f64>() / 500.0;
    assert!(avg(5000) < avg(500), "{} vs {}", avg(5000), avg(500));
}
