use cmp_core::graph::{generate_sbm, make_split, sample_negative_edges, Graph, SbmConfig, Split};
use cmp_core::nn::{load_checkpoint, save_checkpoint, Form, GraphIndex, Method, Model, ModelSpec, ParamStore, Variant};
use cmp_core::train::{adam_step, quantile, summarize, train, AdamState, TrainConfig};
use cmp_core::{Error, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_variants() -> Vec<Variant> {
    [Form::Sage, Form::Gat].into_iter().flat_map(|f| Method::ALL.map(|m| Variant::new(f, m))).collect()
}

/// Plain scalar Adam with decoupled decay, written out independently.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, x: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        let x = x - lr * wd * x;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let mhat = self.m / (1.0 - b1.powi(self.t));
        let vhat = self.v / (1.0 - b2.powi(self.t));
        x - lr * mhat / (vhat.sqrt() + eps)
    }
}

fn store(values: &[f64]) -> ParamStore {
    let mut p = ParamStore::default();
    p.push("w", Tensor::vector(values.to_vec()));
    p
}

#[test]
fn adam_matches_scalar_reference_for_ten_steps() {
    let cfg = TrainConfig { weight_decay: 5e-4, ..TrainConfig::default() };
    let init = [1.0, -0.3, 2.5, 0.0];
    let mut params = store(&init);
    let mut state = AdamState::default();
    let mut refs: Vec<(f64, ScalarAdam)> = init.iter().map(|&x| (x, ScalarAdam { m: 0.0, v: 0.0, t: 0 })).collect();
    // Gradient of Σ (x³/3 − x) + a changing offset so moments see varied inputs.
    for step in 0..10 {
        let grads: Vec<f64> = params.tensors[0].data().iter().map(|x| x * x - 1.0 + 0.1 * step as f64).collect();
        for ((x, r), &g) in refs.iter_mut().zip(&grads) {
            *x = r.step(*x, g, cfg.lr, cfg.weight_decay);
        }
        adam_step(&mut params, &[Tensor::vector(grads)], &mut state, &cfg).unwrap();
        for (a, (b, _)) in params.tensors[0].data().iter().zip(&refs) {
            assert!((a - b).abs() <= 1e-12, "step {step}: {a} vs {b}");
        }
    }
    assert_eq!(state.step, 10);
}

#[test]
fn zero_gradient_without_decay_is_a_no_op() {
    let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut params = store(&[0.7, -1.2]);
    let before = params.clone();
    let mut state = AdamState::default();
    for _ in 0..3 {
        adam_step(&mut params, &[Tensor::zeros(&[2])], &mut state, &cfg).unwrap();
    }
    assert_eq!(params, before);
}

#[test]
fn first_step_on_a_quadratic_moves_toward_zero() {
    let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut params = store(&[1.0]);
    // f(x) = x²/2 → f'(1) = 1.
    adam_step(&mut params, &[Tensor::vector(vec![1.0])], &mut AdamState::default(), &cfg).unwrap();
    let x = params.tensors[0].data()[0];
    assert!(x < 1.0 && 1.0 - x <= cfg.lr * (1.0 + 1e-6));
}

#[test]
fn adam_rejects_bad_gradients() {
    let cfg = TrainConfig::default();
    let mut params = store(&[1.0, 2.0]);
    let err = adam_step(&mut params, &[Tensor::vector(vec![f64::NAN, 0.0])], &mut AdamState::default(), &cfg).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient { ref name } if name == "w"));
    assert_eq!(params, store(&[1.0, 2.0]));
    assert!(adam_step(&mut params, &[Tensor::zeros(&[3])], &mut AdamState::default(), &cfg).is_err());
    assert!(adam_step(&mut params, &[], &mut AdamState::default(), &cfg).is_err());
}

/// Two classes with separable features; edges mostly within classes.
fn toy_graph(seed: u64) -> Graph {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let feats: Vec<f64> = labels
        .iter()
        .flat_map(|&y| {
            let centre = if y == 0 { 1.0 } else { -1.0 };
            let noise: [f64; 4] = std::array::from_fn(|_| r.random_range(-0.3..0.3));
            [centre + noise[0], noise[1], noise[2], -centre + noise[3]]
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { 0.3 } else { 0.02 };
            if r.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let g = Graph::new(Tensor::matrix(n, 4, feats).unwrap(), labels, &edges).unwrap();
    sample_negative_edges(g, None, seed).unwrap()
}

fn spec(g: &Graph, variant: Variant, hidden: usize) -> ModelSpec {
    ModelSpec { hidden_dim: hidden, ..ModelSpec::new(g.feature_dim(), g.num_classes, variant) }
}

#[test]
fn separable_toy_graph_is_fit_by_every_variant() {
    let g = toy_graph(1);
    let split = make_split(&g, 0.5, 1).unwrap();
    let cfg = TrainConfig { patience: 200, ..TrainConfig::default() };
    for v in all_variants() {
        let (m, _) = train(&spec(&g, v, 8), &g, &split, &cfg, 3).unwrap();
        assert!(m.curves.iter().all(|c| c.train_loss.is_finite()), "{v}");
        assert!(m.curves.iter().any(|c| c.train_acc == 1.0), "{v} never fit the training set");
    }
}

#[test]
fn patience_zero_stops_after_first_non_improving_epoch() {
    let g = toy_graph(2);
    let split = make_split(&g, 0.5, 2).unwrap();
    let cfg = TrainConfig { patience: 0, ..TrainConfig::default() };
    let (m, _) = train(&spec(&g, Variant::new(Form::Sage, Method::Standard), 8), &g, &split, &cfg, 1).unwrap();
    let accs: Vec<f64> = m.curves.iter().map(|c| c.val_acc).collect();
    // Every epoch but the last strictly improved; the last did not.
    assert!(accs.windows(2).take(accs.len() - 2).all(|w| w[1] > w[0]), "{accs:?}");
    if m.epochs_run < cfg.max_epochs {
        assert!(accs[accs.len() - 1] <= accs[accs.len() - 2]);
        assert_eq!(m.best_val_epoch + 2, m.epochs_run);
    }
}

fn small_sbm(seed: u64) -> Graph {
    let cfg = SbmConfig { n: 120, c: 4, p_in: 0.2, p_out: 0.03, feat_dim: 8, seed };
    sample_negative_edges(generate_sbm(&cfg).unwrap(), None, seed).unwrap()
}

#[test]
fn best_validation_snapshot_is_reported() {
    let g = small_sbm(5);
    let split = make_split(&g, 0.1, 5).unwrap();
    let cfg = TrainConfig { max_epochs: 60, patience: 10, ..TrainConfig::default() };
    for v in all_variants() {
        let (m, model) = train(&spec(&g, v, 16), &g, &split, &cfg, 8).unwrap();
        let best = m.curves.iter().map(|c| c.val_acc).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(m.best_val_acc, best);
        let first = m.curves.iter().position(|c| c.val_acc == best).unwrap();
        assert_eq!(m.best_val_epoch, first, "{v}");
        assert!(m.best_val_epoch < m.epochs_run && m.epochs_run <= cfg.max_epochs);
        assert!((0.0..=1.0).contains(&m.test_accuracy));
        // The returned parameters reproduce the snapshot's validation accuracy.
        let index = GraphIndex::new(&g).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &g.features, &index).unwrap();
        let pred = cmp_core::nn::predictions(tape.value(fwd.logits));
        assert!((cmp_core::nn::accuracy(&pred, &g.labels, &split.val) - best).abs() < 1e-12, "{v}");
        assert!((cmp_core::nn::accuracy(&pred, &g.labels, &split.test) - m.test_accuracy).abs() < 1e-12, "{v}");
    }
}

#[test]
fn same_seed_gives_identical_metrics() {
    let g = small_sbm(6);
    let split = make_split(&g, 0.1, 6).unwrap();
    let cfg = TrainConfig { max_epochs: 25, patience: 25, ..TrainConfig::default() };
    for v in [Variant::new(Form::Sage, Method::Cmp), Variant::new(Form::Gat, Method::Cmp), Variant::new(Form::Sage, Method::Cl)] {
        let a = train(&spec(&g, v, 16), &g, &split, &cfg, 42).unwrap();
        let b = train(&spec(&g, v, 16), &g, &split, &cfg, 42).unwrap();
        assert_eq!(a, b, "{v}");
        let c = train(&spec(&g, v, 16), &g, &split, &cfg, 43).unwrap();
        assert_ne!(a.1.params, c.1.params);
    }
}

#[test]
fn training_input_errors() {
    let g = small_sbm(7);
    let split = make_split(&g, 0.1, 7).unwrap();
    let bare = generate_sbm(&SbmConfig { n: 120, c: 4, p_in: 0.2, p_out: 0.03, feat_dim: 8, seed: 7 }).unwrap();
    let cfg = TrainConfig::default();
    for m in [Method::Cmp, Method::Unconstrained, Method::Cl] {
        let err = train(&spec(&bare, Variant::new(Form::Sage, m), 8), &bare, &split, &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::MissingNegativeEdges(_)), "{m:?}: {err}");
    }
    assert!(train(&spec(&bare, Variant::new(Form::Sage, Method::Standard), 8), &bare, &split, &TrainConfig { max_epochs: 2, patience: 1, ..cfg.clone() }, 1).is_ok());
    let empty = Split { train: vec![], ..split.clone() };
    assert!(matches!(train(&spec(&g, Variant::new(Form::Sage, Method::Cmp), 8), &g, &empty, &cfg, 1), Err(Error::EmptyMask)));
    for bad in [TrainConfig { patience: 300, ..cfg.clone() }, TrainConfig { lr: 0.0, ..cfg.clone() }, TrainConfig { seeds: vec![], ..cfg.clone() }] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn divergence_reports_the_epoch() {
    let g = toy_graph(4);
    let split = make_split(&g, 0.5, 4).unwrap();
    let cfg = TrainConfig { lr: 1e200, weight_decay: 0.0, max_epochs: 50, patience: 50, ..TrainConfig::default() };
    match train(&spec(&g, Variant::new(Form::Sage, Method::Standard), 8), &g, &split, &cfg, 1) {
        Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
        Err(Error::NonFiniteGradient { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|r| r.0.epochs_run)),
    }
}

#[test]
fn summaries() {
    let s = summarize(&[0.4; 5]).unwrap();
    assert_eq!((s.median, s.q25, s.q75), (0.4, 0.4, 0.4));
    let s = summarize(&[0.3, 0.1, 0.5, 0.2, 0.4]).unwrap();
    assert!((s.median - 0.3).abs() < 1e-15 && (s.q25 - 0.2).abs() < 1e-15 && (s.q75 - 0.4).abs() < 1e-15);
    assert_eq!(s.count, 5);
    assert!(matches!(summarize(&[]), Err(Error::Empty(_))));
    assert!((quantile(&[1.0, 2.0, 3.0, 4.0], 0.5) - 2.5).abs() < 1e-15);
}

#[test]
fn checkpoints_round_trip_exactly() {
    let g = small_sbm(8);
    let dir = tempfile::tempdir().unwrap();
    for v in all_variants() {
        let model = Model::init(spec(&g, v, 8), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let path = dir.path().join(v.to_string());
        save_checkpoint(&path, &model.params).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model.params, "{v}");
    }
    assert!(matches!(load_checkpoint(&dir.path().join("nope")), Err(Error::Io { .. })));
}
