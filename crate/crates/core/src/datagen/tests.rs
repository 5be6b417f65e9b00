use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::rng::rng;

// Autocovariances of an AR(p) with unit innovations, from the Yule-Walker
// system γ_k = Σ_j φ_j γ_|k−j| (+1 at k = 0).
fn yule_walker_variance(phi: &[f64]) -> f64 {
    let p = phi.len();
    let mut a = DMatrix::<f64>::identity(p + 1, p + 1);
    let mut b = DVector::<f64>::zeros(p + 1);
    b[0] = 1.0;
    for k in 0..=p {
        for (j, &c) in phi.iter().enumerate() {
            let lag = (k as isize - (j as isize + 1)).unsigned_abs();
            a[(k, lag)] -= c;
        }
    }
    a.lu().solve(&b).unwrap()[0]
}

// Left eigenvector for eigenvalue 1, normalised to a distribution.
fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let k = p.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    // replace the last balance equation by the normalisation
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

fn occupancy(spec: &HmmSpec, steps: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let path = sample_states(spec, steps, &mut r).unwrap();
    let mut counts = vec![0.0; spec.states()];
    for s in path {
        counts[s] += 1.0;
    }
    counts.iter().map(|c| c / steps as f64).collect()
}

#[test]
fn arma_defaults_and_zero_noise() {
    assert_eq!(ArmaProcess::default().coeffs, vec![0.25, 0.1, 0.05]);
    let mut s = vec![0.0; 64];
    ArmaProcess::default().filter(&mut s);
    assert!(s.iter().all(|&v| v == 0.0));

    // impulse response: 1, φ1, φ1² + φ2
    let mut s = vec![1.0, 0.0, 0.0];
    ArmaProcess::default().filter(&mut s);
    assert_eq!(s[1], 0.25);
    assert!((s[2] - (0.0625 + 0.1)).abs() < 1e-15);
}

#[test]
fn arma_variance_matches_yule_walker() {
    let process = ArmaProcess::default();
    let series = process.sample(100_000, &mut rng(11));
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / series.len() as f64;
    let oracle = yule_walker_variance(&process.coeffs);
    assert!((var / oracle - 1.0).abs() < 0.05, "empirical {var} vs {oracle}");
}

#[test]
fn arma_rejects_short_series() {
    assert!(matches!(gen_arma(2, 3, 2, 0), Err(Error::Config(_))));
    assert_eq!(gen_arma(2, 4, 3, 0).unwrap().shape(), &[2, 4, 3]);
}

#[test]
fn rare_time_ungrouped_layout() {
    let spec = make_rare_spec(&RareConfig::new(RareKind::Time, false), 3).unwrap();
    assert!(spec.group.iter().all(|&g| g == 0));
    for i in 0..100 {
        assert_eq!(spec.truth.count_sample(i), 5 * 26);
        let steps: Vec<usize> = (0..50).filter(|&t| spec.truth.get(i, t, 12)).collect();
        assert_eq!(steps.len(), 5);
        assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
        for t in 0..50 {
            for d in 0..50 {
                let expect = steps.contains(&t) && (12..38).contains(&d);
                assert_eq!(spec.truth.get(i, t, d), expect);
            }
        }
    }
}

#[test]
fn rare_observation_ungrouped_layout() {
    let spec = make_rare_spec(&RareConfig::new(RareKind::Observation, false), 4).unwrap();
    for i in 0..100 {
        assert_eq!(spec.truth.count_sample(i), 5 * 26);
        let obs: Vec<usize> = (0..50).filter(|&d| spec.truth.get(i, 20, d)).collect();
        assert_eq!(obs.len(), 5);
        for t in 0..50 {
            for d in 0..50 {
                assert_eq!(spec.truth.get(i, t, d), (12..38).contains(&t) && obs.contains(&d));
            }
        }
    }
}

#[test]
fn grouped_layouts_split_evenly_with_distinct_windows() {
    let spec = make_rare_spec(&RareConfig::new(RareKind::Time, true), 5).unwrap();
    assert_eq!(spec.group.iter().filter(|&&g| g == 1).count(), 50);
    assert_eq!(spec.group.iter().filter(|&&g| g == 2).count(), 50);
    let mut starts = [Vec::new(), Vec::new()];
    for (i, &g) in spec.group.iter().enumerate() {
        let (lo, hi, cells) = if g == 1 { (0, 25, 5 * 25) } else { (12, 38, 5 * 26) };
        assert_eq!(spec.truth.count_sample(i), cells);
        let t0 = (0..50).find(|&t| spec.truth.get(i, t, lo)).unwrap();
        assert!(spec.truth.get(i, t0, hi - 1) && !spec.truth.get(i, t0, hi % 50));
        starts[g as usize - 1].push(t0);
    }
    let max1 = starts[0].iter().max().unwrap();
    let min2 = starts[1].iter().min().unwrap();
    assert!(max1 < min2, "group start ranges overlap");

    let spec = make_rare_spec(&RareConfig::new(RareKind::Observation, true), 6).unwrap();
    for (i, &g) in spec.group.iter().enumerate() {
        let (window, pool) = if g == 1 { (0..25, 0..25) } else { (12..38, 25..50) };
        let obs: Vec<usize> = (0..50).filter(|&d| spec.truth.get(i, window.start, d)).collect();
        assert_eq!(obs.len(), 5);
        assert!(obs.iter().all(|d| pool.contains(d)));
        assert_eq!(spec.truth.count_sample(i), 5 * window.len());
    }
}

#[test]
fn invalid_rare_kind_is_a_config_error() {
    assert!(matches!("sideways".parse::<RareKind>(), Err(Error::Config(_))));
    assert!(matches!("switch".parse::<Regime>(), Err(Error::Config(_))));
    let mut c = RareConfig::new(RareKind::Time, false);
    c.d = 20;
    assert!(matches!(make_rare_spec(&c, 0), Err(Error::Config(_))));
}

#[test]
fn whitebox_examples() {
    let mut truth = TruthMask::empty(2, 3, 2);
    let x = Tensor::<f64>::zeros(&[2, 3, 2]);
    truth.set(0, 1, 0, true);
    assert!(whitebox_regress(&x, &truth, &[0, 0]).unwrap().data().iter().all(|&v| v == 0.0));

    let mut x = Tensor::<f64>::zeros(&[2, 3, 2]);
    x.set(&[0, 1, 0], 2.0);
    let y = whitebox_regress(&x, &truth, &[0, 0]).unwrap();
    assert_eq!(y.data(), &[0.0, 4.0, 0.0, 0.0, 0.0, 0.0]);

    // two salient cells (1, 2) at one step: sum of squares vs square of sum
    let mut truth = TruthMask::empty(1, 1, 2);
    truth.set(0, 0, 0, true);
    truth.set(0, 0, 1, true);
    let x = Tensor::from_f64(&[1, 1, 2], &[1.0, 2.0]).unwrap();
    let g2 = whitebox_regress(&x, &truth, &[2]).unwrap().item().unwrap();
    let g1 = whitebox_regress(&x, &truth, &[1]).unwrap().item().unwrap();
    assert_eq!((g1, g2), (1.0 + 4.0, (1.0f64 + 2.0).powi(2)));
}

#[test]
fn truth_cells_are_the_only_causal_inputs() {
    for regime in [Regime::RareTime, Regime::RareObservationDiffgroups] {
        let ds = generate(regime, 9).unwrap();
        let mut clipped = ds.x.clone();
        for (k, v) in clipped.data_mut().iter_mut().enumerate() {
            if !ds.truth.cells()[k] {
                *v = 0.0;
            }
        }
        assert_eq!(whitebox_regress(&clipped, &ds.truth, &ds.group).unwrap(), ds.y);
    }
}

#[test]
fn switch_feature_transition_and_frozen_state() {
    let spec = switch_feature_spec();
    spec.validate().unwrap();
    assert_eq!(spec.transition[0], vec![0.95, 0.02, 0.03]);
    assert_eq!(spec.initial, vec![1.0 / 3.0; 3]);

    let frozen = vec![vec![0usize; 30]; 8];
    let ds = emit(Regime::SwitchFeature, &spec, &frozen, 1).unwrap();
    for i in 0..8 {
        for t in 0..30 {
            assert!(ds.truth.get(i, t, 0) && !ds.truth.get(i, t, 1) && !ds.truth.get(i, t, 2));
        }
    }
    let p = ds.label_probabilities().unwrap();
    assert_eq!(p.at(&[3, 7]), crate::gradcore::sigmoid(ds.x.at(&[3, 7, 0])));
}

#[test]
fn bad_transition_rows_are_rejected() {
    let mut spec = state_spec();
    spec.transition[1] = vec![0.2, 0.9];
    assert!(matches!(spec.validate(), Err(Error::Config(_))));
    let mut spec = state_spec();
    spec.emissions.pop();
    assert!(spec.validate().is_err());
}

#[test]
fn switch_feature_occupancy_matches_stationary_distribution() {
    let spec = switch_feature_spec();
    let oracle = stationary(&spec.transition);
    let emp = occupancy(&spec, 100_000, 21);
    for (e, o) in emp.iter().zip(&oracle) {
        assert!((e - o).abs() < 0.02, "occupancy {emp:?} vs {oracle:?}");
    }
}

#[test]
fn state_regime_properties() {
    let spec = state_spec();
    assert_eq!(spec.initial, vec![0.5, 0.5]);
    assert_eq!(spec.transition, vec![vec![0.1, 0.9], vec![0.1, 0.9]]);
    let oracle = stationary(&spec.transition);
    assert!((oracle[1] - 0.9).abs() < 1e-12);
    let emp = occupancy(&spec, 100_000, 22);
    assert!((emp[1] - 0.9).abs() < 0.02);

    let mut config = HmmConfig::state();
    config.n = 50;
    let ds = gen_state(&config, 2).unwrap();
    let (n, t, _) = ds.dims();
    for i in 0..n {
        for s in 0..t {
            assert!(!ds.truth.get(i, s, 0));
            assert!(ds.truth.get(i, s, 1) ^ ds.truth.get(i, s, 2));
        }
    }
    assert!(ds.y.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn gp_covariance_matches_rbf_kernel() {
    let spec = HmmSpec {
        initial: vec![1.0],
        transition: vec![vec![1.0]],
        emissions: vec![Emission::GpPath {
            mean: vec![0.3],
            length: 0.2,
            variance: 0.1,
            jitter: 1e-6,
        }],
        driver: vec![0],
    };
    let (n, t) = (10_000, 12);
    let ds = emit(Regime::SwitchFeature, &spec, &vec![vec![0; t]; n], 5).unwrap();
    let x = ds.x.data();
    let kernel = rbf_kernel(t, 0.2, 0.1);
    let mut worst: f64 = 0.0;
    for a in 0..t {
        for b in 0..t {
            let cov = (0..n).map(|i| (x[i * t + a] - 0.3) * (x[i * t + b] - 0.3)).sum::<f64>() / n as f64;
            let target = kernel[(a, b)] + if a == b { 1e-6 } else { 0.0 };
            worst = worst.max((cov - target).abs());
        }
    }
    // four standard errors of a variance-0.1 second moment
    let tol = 4.0 * 0.1 * (2.0f64 / n as f64).sqrt();
    assert!(worst < tol, "covariance error {worst} > {tol}");
}

#[test]
fn generators_are_pure_functions_of_the_seed() {
    let mut c = HmmConfig::switch_feature();
    c.n = 20;
    assert_eq!(gen_switch_feature(&c, 4).unwrap(), gen_switch_feature(&c, 4).unwrap());
    assert_ne!(gen_switch_feature(&c, 4).unwrap().x, gen_switch_feature(&c, 5).unwrap().x);
    assert_eq!(generate(Regime::RareTime, 8).unwrap(), generate(Regime::RareTime, 8).unwrap());
    assert_eq!(
        make_rare_spec(&RareConfig::new(RareKind::Observation, true), 1).unwrap(),
        make_rare_spec(&RareConfig::new(RareKind::Observation, true), 1).unwrap()
    );
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = HmmConfig::state();
    c.n = 7;
    c.t = 9;
    let ds = gen_state(&c, 3).unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    let back: Dataset = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert!(back.x.data().iter().zip(ds.x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let grouped = generate(Regime::RareTimeDiffgroups, 2).unwrap().subset(&[0, 5, 9]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &grouped).unwrap();
    assert_eq!(read_dataset::<f64>(dir.path()).unwrap(), grouped);

    std::fs::write(dir.path().join("group.csv"), "group\n1\n7\n2\n").unwrap();
    assert!(read_dataset::<f64>(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn whitebox_ignores_non_truth_cells(seed in 0u64..1000, noise in prop::collection::vec(-3.0f64..3.0, 4 * 6 * 5)) {
        let mut c = RareConfig::new(RareKind::Time, seed % 2 == 0);
        c.n = 4; c.t = 6; c.d = 5; c.salient = 2;
        c.window = 1..4;
        c.group_windows = [0..2, 2..5];
        let spec = make_rare_spec(&c, seed).unwrap();
        let x = gen_arma(4, 6, 5, seed).unwrap();
        let base = whitebox_regress(&x, &spec.truth, &spec.group).unwrap();
        let mut moved = x.clone();
        for (k, v) in moved.data_mut().iter_mut().enumerate() {
            if !spec.truth.cells()[k] {
                *v += noise[k];
            }
        }
        prop_assert_eq!(whitebox_regress(&moved, &spec.truth, &spec.group).unwrap(), base);
        for i in 0..4 {
            prop_assert!(spec.truth.count_sample(i) > 0);
        }
    }
}
