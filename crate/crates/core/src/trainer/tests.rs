use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::council::{BiasCouncil, CouncilConfig, CouncilOptimizer};
use crate::nn::{Activation, Algorithm, DenseLayer, Matrix, Mlp, OptimizerState};
use crate::synth::{generate, BiasedSample, GroupCounts, SplitCounts, SynthSpec};

fn small_cfg(method: Method) -> TrainerConfig {
    TrainerConfig {
        method,
        lambda: 1.0,
        council: CouncilConfig {
            n_heads: 2,
            ..CouncilConfig::default()
        },
        lr: 1e-2,
        batch_size: 16,
        max_epochs: 3,
        hidden: vec![4],
        trunk: vec![4],
        ..TrainerConfig::default()
    }
}

fn toy(seed: u64) -> crate::synth::Splits {
    let counts = SplitCounts {
        train: GroupCounts::new(30, 3, 3, 30),
        val: GroupCounts::balanced(5),
        test: GroupCounts::balanced(5),
    };
    generate(&SynthSpec::toy2d(counts, seed)).unwrap()
}

fn sample(x: [f64; 2], y: u8, b: u8) -> BiasedSample {
    BiasedSample { x: x.to_vec(), y, t: y, b }
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
    }
    assert!(matches!("jtt".parse::<Method>(), Err(crate::Error::Config(_))));
}

#[test]
fn config_rejects_bad_values() {
    let base = TrainerConfig::default();
    base.validate().unwrap();
    for bad in [
        TrainerConfig { lambda: -1.0, ..base.clone() },
        TrainerConfig { epsilon: 0.0, ..base.clone() },
        TrainerConfig { lr: 0.0, ..base.clone() },
        TrainerConfig { batch_size: 0, ..base.clone() },
        TrainerConfig { max_epochs: 0, ..base.clone() },
        TrainerConfig { trunk: vec![], ..base.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(crate::Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn lambda_zero_is_confidence_weighted_cross_entropy() {
    let data = toy(3);
    let cfg = TrainerConfig {
        lambda: 0.0,
        ..small_cfg(Method::AdaAbc)
    };
    let mut session = Session::new(&data.train, cfg.clone()).unwrap();
    let indices: Vec<usize> = (0..16).collect();
    let (x, labels) = data.train.batch(&indices);
    let c: Vec<f64> = session
        .council()
        .unwrap()
        .predict(&x)
        .unwrap()
        .iter()
        .zip(&labels)
        .map(|(p, &y)| if y == 1 { p.get() } else { 1.0 - p.get() })
        .collect();

    let mut reference = session.model().clone();
    let probs = reference.forward_proba(&x).unwrap();
    let upstream: Vec<f64> = probs
        .iter()
        .zip(&labels)
        .zip(&c)
        .map(|((&s, &y), &c)| if y == 1 { c * (-1.0 / s) } else { -(c * (-1.0 / (1.0 - s))) })
        .collect();
    let grads = reference.backward(&Matrix::column_vector(upstream).unwrap()).unwrap();
    OptimizerState::adam(cfg.lr).unwrap().step(&mut reference, &grads).unwrap();

    let losses = session.step(&indices, &mut ()).unwrap();
    assert_eq!(losses.objective, losses.agreement);
    assert_eq!(session.model().max_abs_diff(&reference).unwrap(), 0.0);
}

/// Four samples, a logistic debiasing model and plain SGD, so the debiasing
/// update can be written out by hand.
#[test]
fn one_step_trace_matches_hand_computation() {
    let train = Dataset::new(
        2,
        vec![
            sample([1.0, 0.5], 1, 1),
            sample([-0.5, 1.0], 0, 1),
            sample([0.2, -1.0], 1, 0),
            sample([-1.0, -0.3], 0, 0),
        ],
    )
    .unwrap();
    let cfg = TrainerConfig {
        lambda: 2.0,
        optimizer: Algorithm::Sgd,
        lr: 0.5,
        hidden: vec![],
        trunk: vec![3],
        council: CouncilConfig {
            n_heads: 2,
            subset_fraction: 0.5,
            ..CouncilConfig::default()
        },
        ..small_cfg(Method::AdaAbc)
    };
    let (w, bias) = ([0.3, -0.2], 0.1);
    let model = Mlp::new(vec![DenseLayer::new(
        Matrix::from_vec(1, 2, w.to_vec()).unwrap(),
        vec![bias],
        Activation::Sigmoid,
    )
    .unwrap()])
    .unwrap();
    let mut session = Session::with_model(&train, cfg.clone(), model).unwrap();
    let indices = [0, 1, 2, 3];
    let (x, labels) = train.batch(&indices);

    let mut council_ref = session.council().unwrap().clone();
    let p: Vec<f64> = council_ref.predict(&x).unwrap().iter().map(|d| d.get()).collect();
    let mut council_opt = CouncilOptimizer::new(&council_ref, Algorithm::Sgd, cfg.lr).unwrap();
    council_ref.gce_step(&x, &indices, &labels, &mut council_opt).unwrap();

    // dℓ/dz for z the logit: dℓ/dc̃ · dc̃/ds̃ · s̃(1-s̃).
    let (mut gw, mut gb) = ([0.0; 2], 0.0);
    for (r, s) in train.samples().iter().enumerate() {
        let z = w[0] * s.x[0] + w[1] * s.x[1] + bias;
        let s1 = 1.0 / (1.0 + (-z).exp());
        let (c, d, sign) = if s.y == 1 { (p[r], s1, 1.0) } else { (1.0 - p[r], 1.0 - s1, -1.0) };
        let inner = d * (1.0 - c) + c * (1.0 - d) + cfg.epsilon;
        let dl_dd = -c / d - cfg.lambda * (1.0 - c) * (1.0 - 2.0 * c) / inner;
        let dz = dl_dd * sign * s1 * (1.0 - s1) / 4.0;
        gw[0] += dz * s.x[0];
        gw[1] += dz * s.x[1];
        gb += dz;
    }
    let want_w = [w[0] - cfg.lr * gw[0], w[1] - cfg.lr * gw[1]];
    let want_b = bias - cfg.lr * gb;

    session.step(&indices, &mut ()).unwrap();
    let layer = &session.model().layers()[0];
    for (got, want) in layer.weights().as_slice().iter().zip(want_w) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((layer.bias()[0] - want_b).abs() < 1e-12);
    assert_eq!(session.council().unwrap(), &council_ref);
}

#[test]
fn council_is_frozen_during_the_debias_update() {
    let data = toy(4);
    let mut session = Session::new(&data.train, small_cfg(Method::AdaAbc)).unwrap();
    let mut before: Option<Vec<u64>> = None;
    let mut checked = 0;
    let mut observer = |event: TrainEvent<'_>| match event {
        TrainEvent::BeforeDebiasUpdate { indices, biased, council, .. } => {
            let council = council.unwrap();
            let (x, _) = data.train.batch(indices);
            assert_eq!(council.predict(&x).unwrap(), biased);
            before = Some(council.param_bits());
        }
        TrainEvent::AfterDebiasUpdate { council, .. } => {
            assert_eq!(before.take().unwrap(), council.unwrap().param_bits());
            checked += 1;
        }
    };
    let order = session.epoch_order();
    let mut last_after: Option<Vec<u64>> = None;
    for chunk in order.chunks(16) {
        session.step(chunk, &mut observer).unwrap();
        let now = session.council().unwrap().param_bits();
        assert_ne!(last_after.as_ref(), Some(&now), "council must move once per batch");
        last_after = Some(now);
    }
    assert_eq!(checked, order.chunks(16).count());
}

#[test]
fn runs_are_deterministic() {
    let data = toy(5);
    for method in Method::ALL {
        let cfg = small_cfg(method);
        let a = train(&data.train, &data.val, &cfg).unwrap();
        let b = train(&data.train, &data.val, &cfg).unwrap();
        assert_eq!(a.record.to_json(), b.record.to_json());
        assert_eq!(a.record.epochs_csv(), b.record.epochs_csv());
        assert_eq!(a.model, b.model);
        assert_eq!(a.council.is_some(), method.uses_council());
    }
}

#[test]
fn record_tracks_epochs_and_best() {
    let data = toy(6);
    let out = train(&data.train, &data.val, &small_cfg(Method::AdaAbc)).unwrap();
    let r = &out.record;
    assert_eq!(r.status, RunStatus::Completed);
    assert_eq!(r.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(r.epochs.iter().all(|e| e.agreement.is_finite() && e.gce.unwrap().is_finite()));
    let best = r.best_epoch.unwrap();
    let top = r.epochs.iter().map(|e| e.val.overall_auc.unwrap()).fold(f64::MIN, f64::max);
    let first_top = r.epochs.iter().position(|e| e.val.overall_auc.unwrap() == top).unwrap();
    assert_eq!(best, first_top);
    assert_eq!(evaluate_groups(&out.model, &data.val).unwrap(), r.epochs[best].val);
    let parsed = RunRecord::from_json(&r.to_json()).unwrap();
    assert_eq!(&parsed, r);
    assert_eq!(r.epochs_csv().lines().count(), 4);
}

#[test]
fn patience_stops_early() {
    let data = toy(7);
    let cfg = TrainerConfig {
        lr: 1e-9,
        optimizer: Algorithm::Sgd,
        max_epochs: 20,
        patience: 2,
        ..small_cfg(Method::Erm)
    };
    let out = train(&data.train, &data.val, &cfg).unwrap();
    assert_eq!(out.record.status, RunStatus::EarlyStopped);
    assert!(out.record.epochs.len() < 20);
}

#[test]
fn entry_points_check_the_method() {
    let data = toy(8);
    assert!(train_ada_abc(&data.train, &data.val, &small_cfg(Method::Erm)).is_err());
    assert!(train_baseline(&data.train, &data.val, &small_cfg(Method::AdaAbc)).is_err());
}

#[test]
fn validation_without_both_classes_is_rejected() {
    let data = toy(9);
    let one_class = Dataset::new(2, vec![sample([0.0, 0.0], 1, 1), sample([1.0, 0.0], 1, 0)]).unwrap();
    let err = train(&data.train, &one_class, &small_cfg(Method::Erm)).unwrap_err();
    assert!(matches!(err, crate::Error::Config(_)), "{err}");
}

#[test]
fn divergence_aborts_with_partial_record() {
    let data = toy(10);
    let cfg = TrainerConfig {
        optimizer: Algorithm::Sgd,
        lr: 1e300,
        max_epochs: 5,
        ..small_cfg(Method::Erm)
    };
    match train(&data.train, &data.val, &cfg) {
        Err(e @ crate::Error::Diverged { .. }) => {
            assert!(e.is_numeric());
            let crate::Error::Diverged { record, .. } = e else { unreachable!() };
            assert_eq!(record.status, RunStatus::Diverged);
            assert!(record.epochs.iter().all(|e| e.objective.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn erm_fits_separable_unbiased_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<BiasedSample> = (0..200)
        .map(|i| {
            let y = (i % 2) as u8;
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let x0 = sign * rng.random_range(0.5..2.0);
            sample([x0, rng.random_range(-1.0..1.0)], y, rng.random_range(0..2))
        })
        .collect();
    let data = Dataset::new(2, samples).unwrap();
    let cfg = TrainerConfig {
        lr: 1e-2,
        max_epochs: 30,
        ..small_cfg(Method::Erm)
    };
    let out = train(&data, &data, &cfg).unwrap();
    let block = evaluate_groups(&out.model, &data).unwrap();
    let c = block.cells;
    for acc in [c.t1b1, c.t1b0, c.t0b1, c.t0b0] {
        assert_eq!(acc, Some(1.0), "{block:?}");
    }
}

fn constant_model(p: f64) -> Mlp {
    let logit = (p / (1.0 - p)).ln();
    Mlp::new(vec![DenseLayer::new(Matrix::zeros(1, 2), vec![logit], Activation::Sigmoid).unwrap()]).unwrap()
}

#[test]
fn constant_model_gives_uniform_grid() {
    let g = export_decision_grid(&constant_model(0.3), Bounds::square(2.0), 7, 5).unwrap();
    assert_eq!(g.values.len(), 35);
    assert!(g.values.iter().all(|&v| (v - 0.3).abs() < 1e-12));
}

#[test]
fn grid_values_equal_single_forwards() {
    let m = Mlp::init(&[2, 5, 1], Activation::Relu, Activation::Sigmoid, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let bounds = Bounds { x_min: -1.0, x_max: 3.0, y_min: 0.0, y_max: 2.0 };
    let g = export_decision_grid(&m, bounds, 2, 2).unwrap();
    let corners = [(-1.0, 0.0), (3.0, 0.0), (-1.0, 2.0), (3.0, 2.0)];
    for (v, (x, y)) in g.values.iter().zip(corners) {
        let single = m.predict_proba(&Matrix::from_vec(1, 2, vec![x, y]).unwrap()).unwrap()[0];
        assert_eq!(*v, single);
    }
    let one = export_decision_grid(&m, bounds, 1, 1).unwrap();
    assert_eq!(one.point(0, 0), (1.0, 1.0));
    assert_eq!(one.to_csv().lines().count(), 2);
}

#[test]
fn grid_needs_two_inputs_and_positive_resolution() {
    let m = Mlp::init(&[3, 1], Activation::Relu, Activation::Sigmoid, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(export_decision_grid(&m, Bounds::square(1.0), 4, 4), Err(crate::Error::Config(_))));
    assert!(matches!(
        export_decision_grid(&constant_model(0.5), Bounds::square(1.0), 0, 4),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn axis_alignment_of_axis_models() {
    let axis = |wx: f64, wy: f64| {
        Mlp::new(vec![DenseLayer::new(Matrix::from_vec(1, 2, vec![wx, wy]).unwrap(), vec![0.0], Activation::Sigmoid)
            .unwrap()])
        .unwrap()
    };
    let target = export_decision_grid(&axis(5.0, 0.0), Bounds::square(1.0), 10, 10).unwrap();
    let bias = export_decision_grid(&axis(0.0, 5.0), Bounds::square(1.0), 10, 10).unwrap();
    let flipped = export_decision_grid(&axis(0.0, -5.0), Bounds::square(1.0), 10, 10).unwrap();
    assert_eq!(target.axis_alignment(), AxisAlignment { target: 1.0, bias: 0.5 });
    assert_eq!(bias.axis_alignment(), AxisAlignment { target: 0.5, bias: 1.0 });
    assert_eq!(bias.sign_agreement(&flipped).unwrap(), 0.0);
    assert_eq!(bias.sign_agreement(&target).unwrap(), 0.5);
}

#[test]
fn hand_built_council_is_used() {
    let data = toy(12);
    let mut session = Session::new(&data.train, small_cfg(Method::AdaAbc)).unwrap();
    let council = BiasCouncil::build(
        CouncilConfig { n_heads: 3, ..CouncilConfig::default() },
        &[2, 5],
        data.train.len(),
        99,
    )
    .unwrap();
    session.set_council(council.clone()).unwrap();
    assert_eq!(session.council().unwrap().n_heads(), 3);
    let mut erm = Session::new(&data.train, small_cfg(Method::Erm)).unwrap();
    assert!(erm.set_council(council).is_err());
}
