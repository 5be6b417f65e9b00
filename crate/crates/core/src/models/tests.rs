use rand::Rng as _;

use super::*;
use crate::datagen::{gen_switch_feature, generate, HmmConfig, Regime, TruthMask};
use crate::gradcore::gradcheck::check_all;
use crate::rng::rng;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// Plain-loop GRU over one sample, written from the textbook recurrence.
fn reference_gru(p: &GruParams<f64>, x: &[f64], t: usize) -> Vec<f64> {
    let d = p.input_dim();
    let h = p.hidden();
    let (w, b, u) = (p.w.data(), p.b.data(), p.u.data());
    let mut state = vec![0.0; h];
    let mut out = Vec::new();
    for s in 0..t {
        let xt = &x[s * d..(s + 1) * d];
        let gate = |block: usize, j: usize, hv: &[f64]| {
            let col = block * h + j;
            let mut v = b[col];
            for (k, xv) in xt.iter().enumerate() {
                v += xv * w[k * 3 * h + col];
            }
            for (k, hk) in hv.iter().enumerate() {
                v += hk * u[k * 3 * h + col];
            }
            v
        };
        let z: Vec<f64> = (0..h).map(|j| sig(gate(0, j, &state))).collect();
        let r: Vec<f64> = (0..h).map(|j| sig(gate(1, j, &state))).collect();
        let rh: Vec<f64> = (0..h).map(|j| r[j] * state[j]).collect();
        let cand: Vec<f64> = (0..h).map(|j| gate(2, j, &rh).tanh()).collect();
        state = (0..h).map(|j| (1.0 - z[j]) * state[j] + z[j] * cand[j]).collect();
        let logit = p.b_out.data()[0] + (0..h).map(|j| state[j] * p.w_out.data()[j]).sum::<f64>();
        out.push(sig(logit));
    }
    out
}

fn random_x(n: usize, t: usize, d: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(&[n, t, d], |_| r.gen_range(-2.0..2.0))
}

fn small_switch(n: usize, t: usize) -> crate::datagen::Dataset {
    let mut c = HmmConfig::switch_feature();
    c.n = n;
    c.t = t;
    gen_switch_feature(&c, 17).unwrap()
}

#[test]
fn zero_network_outputs_one_half() {
    let m = GruClassifier::new(GruParams::<f64>::zeros(3, 5)).unwrap();
    let p = m.predict(&random_x(4, 6, 3, 1)).unwrap();
    assert!(p.data().iter().all(|&v| v == 0.5));
}

#[test]
fn gru_matches_plain_loop_reference() {
    let params = GruParams::<f64>::init(3, 7, 4);
    let m = GruClassifier::new(params.clone()).unwrap();
    let x = random_x(5, 9, 3, 2);
    let p = m.predict(&x).unwrap();
    for i in 0..5 {
        let reference = reference_gru(&params, x.row(i).unwrap().data(), 9);
        for (s, r) in reference.iter().enumerate() {
            assert!((p.at(&[i, s]) - r).abs() < 1e-12);
        }
    }
    // a single step is one cell application
    let x1 = random_x(2, 1, 3, 3);
    let p1 = m.predict(&x1).unwrap();
    for i in 0..2 {
        assert!((p1.at(&[i, 0]) - reference_gru(&params, x1.row(i).unwrap().data(), 1)[0]).abs() < 1e-12);
    }
}

#[test]
fn bce_input_gradient_matches_finite_differences() {
    let m = GruClassifier::new(GruParams::<f64>::init(2, 6, 9)).unwrap();
    let mut r = rng(5);
    for trial in 0..10 {
        let x = random_x(3, 4, 2, 100 + trial);
        let y = Tensor::from_fn(&[3, 4], |_| if r.gen::<bool>() { 1.0 } else { 0.0 });
        let report = check_all(&[x], 1e-5, 1e-6, |g, v| {
            let z = m.forward(g, v[0])?;
            let yv = g.constant(y.clone());
            super::gru::bce_with_logits(g, z, yv)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}

#[test]
fn zero_epochs_return_the_initialisation() {
    let ds = small_switch(8, 10);
    let cfg = TrainConfig {
        epochs: 0,
        hidden: 4,
        ..TrainConfig::default()
    };
    let (p, report) = train_classifier(&ds, &cfg, 3).unwrap();
    assert_eq!(p, GruParams::init(3, 4, 3));
    assert!(report.loss.is_empty());
}

#[test]
fn training_is_deterministic_and_loss_trends_down() {
    let ds = small_switch(48, 16);
    let cfg = TrainConfig {
        epochs: 40,
        lr: 1e-2,
        batch_size: 16,
        hidden: 8,
    };
    let (a, report) = train_classifier(&ds, &cfg, 1).unwrap();
    let (b, _) = train_classifier(&ds, &cfg, 1).unwrap();
    assert_eq!(a, b);
    let windows: Vec<f64> = report.loss.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(windows.windows(2).all(|w| w[1] <= w[0]), "{windows:?}");
    assert!(report.accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
}

#[test]
fn training_rejects_regression_data() {
    let ds = generate(Regime::RareTime, 0).unwrap();
    assert!(matches!(train_classifier(&ds, &TrainConfig::default(), 0), Err(Error::Config(_))));
}

#[test]
fn whitebox_graph_matches_direct_formula() {
    let ds = generate(Regime::RareObservationDiffgroups, 4).unwrap().subset(&[0, 1, 2, 3, 4, 5]).unwrap();
    let m = Whitebox::for_dataset(&ds).unwrap();
    let mut g = Graph::new();
    let x = g.constant(ds.x.clone());
    let y = PredictModel::<f64>::forward(&m, &mut g, x).unwrap();
    assert!(g.value(y).max_abs_diff(&ds.y).unwrap() < 1e-12);
    let zero = PredictModel::<f64>::predict(&m, &Tensor::zeros(&[6, 50, 50])).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn whitebox_gradient_matches_finite_differences() {
    let mut truth = TruthMask::empty(2, 3, 4);
    for (i, t, d) in [(0, 0, 1), (0, 0, 2), (0, 2, 3), (1, 1, 0), (1, 1, 3)] {
        truth.set(i, t, d, true);
    }
    let m = Whitebox::new(truth, vec![1, 2]).unwrap();
    let report = check_all(&[random_x(2, 3, 4, 8)], 1e-5, 1e-6, |g, v| {
        let y = m.forward(g, v[0])?;
        g.sum(y)
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-4);
}

#[test]
fn batch_prediction_equals_per_sample_loop() {
    let m = GruClassifier::new(GruParams::<f64>::init(3, 6, 2)).unwrap();
    let x = random_x(300, 5, 3, 6);
    let batch = m.predict(&x).unwrap();
    assert!(batch.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    for i in [0, 127, 128, 299] {
        let single = m.predict(&x.rows(&[i]).unwrap()).unwrap();
        for s in 0..5 {
            assert!((single.at(&[0, s]) - batch.at(&[i, s])).abs() < 1e-12);
        }
    }

    let ds = generate(Regime::RareTimeDiffgroups, 1).unwrap();
    let wb = Whitebox::for_dataset(&ds).unwrap();
    let all = PredictModel::<f64>::predict(&wb, &ds.x).unwrap();
    for i in [0, 33, 99] {
        let one = PredictModel::<f64>::predict(&wb.subset(&[i]).unwrap(), &ds.x.rows(&[i]).unwrap()).unwrap();
        assert!(one.max_abs_diff(&all.rows(&[i]).unwrap()).unwrap() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let p = GruParams::<f64>::init(3, 5, 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gru.json");
    p.save(&path).unwrap();
    let back = GruParams::<f64>::load(&path).unwrap();
    assert_eq!(back, p);
    assert!(back.u.data().iter().zip(p.u.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let text = p.to_checkpoint().to_json().unwrap();
    assert!(Checkpoint::<f64>::from_json(&text, "mask-state").is_err());
    let bumped = text.replace("\"version\":1", "\"version\":9");
    assert!(matches!(Checkpoint::<f64>::from_json(&bumped, "gru-classifier"), Err(Error::Format(_))));
}

#[test]
fn models_refuse_foreign_regimes() {
    let gru = GruClassifier::new(GruParams::<f64>::zeros(3, 2)).unwrap();
    assert!(ensure_compatible(&gru, Regime::State).is_ok());
    assert!(matches!(ensure_compatible(&gru, Regime::RareTime), Err(Error::Config(_))));
    let wb = Whitebox::new(TruthMask::empty(1, 4, 2), vec![0]).unwrap();
    assert!(ensure_compatible::<f64>(&wb, Regime::RareObservation).is_ok());
    assert!(ensure_compatible::<f64>(&wb, Regime::SwitchFeature).is_err());
    assert!(PredictModel::<f64>::predict(&wb, &Tensor::zeros(&[2, 4, 2])).is_err());
}
