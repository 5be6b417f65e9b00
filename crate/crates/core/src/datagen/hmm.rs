use nalgebra::{DMatrix, DVector};
use rand::distributions::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Regime, TruthMask};
use crate::error::{Error, Result};
use crate::gradcore::{sigmoid, Tensor};
use crate::rng::{derive_named, rng, Rng};

/// Per-state emission law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Emission {
    /// One Gaussian-process path per feature over the whole horizon, offset
    /// by `mean`; while the state is active the emitted value follows it.
    GpPath {
        mean: Vec<f64>,
        length: f64,
        variance: f64,
        jitter: f64,
    },
    /// Independent diagonal Gaussian at every step.
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl Emission {
    pub fn mean(&self) -> &[f64] {
        match self {
            Emission::GpPath { mean, .. } | Emission::Gaussian { mean, .. } => mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmSpec {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emissions: Vec<Emission>,
    /// Feature whose value sets the label probability in each state.
    pub driver: Vec<usize>,
}

impl HmmSpec {
    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn features(&self) -> usize {
        self.emissions.first().map_or(0, |e| e.mean().len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states();
        if k == 0 {
            return Err(Error::Config("HMM needs at least one state".into()));
        }
        let stochastic = |row: &[f64]| row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        if !stochastic(&self.initial) {
            return Err(Error::Config("initial probabilities must sum to 1".into()));
        }
        if self.transition.len() != k || self.transition.iter().any(|r| r.len() != k || !stochastic(r)) {
            return Err(Error::Config(format!("transition must be a {k}x{k} row-stochastic matrix")));
        }
        if self.emissions.len() != k || self.driver.len() != k {
            return Err(Error::Config(format!("need {k} emissions and drivers")));
        }
        let d = self.features();
        if d == 0 || self.emissions.iter().any(|e| e.mean().len() != d) {
            return Err(Error::Config("emission means must share one nonzero width".into()));
        }
        if self.driver.iter().any(|&j| j >= d) {
            return Err(Error::Config("driver feature out of range".into()));
        }
        for e in &self.emissions {
            let ok = match *e {
                Emission::GpPath {
                    length,
                    variance,
                    jitter,
                    ..
                } => length > 0.0 && variance > 0.0 && jitter >= 0.0,
                Emission::Gaussian { std, .. } => std > 0.0,
            };
            if !ok {
                return Err(Error::Config("emission scale parameters must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Three-state chain whose GP-path emissions switch the label-driving
/// feature with the state.
pub fn switch_feature_spec() -> HmmSpec {
    let gp = |mean: [f64; 3]| Emission::GpPath {
        mean: mean.to_vec(),
        length: 0.2,
        variance: 0.1,
        jitter: 1e-6,
    };
    HmmSpec {
        initial: vec![1.0 / 3.0; 3],
        transition: vec![vec![0.95, 0.02, 0.03], vec![0.02, 0.95, 0.03], vec![0.03, 0.02, 0.95]],
        emissions: vec![gp([0.8, -0.5, -0.2]), gp([0.0, -1.0, 0.0]), gp([-0.2, -0.2, 0.8])],
        driver: vec![0, 1, 2],
    }
}

/// Two-state chain with Gaussian emissions; the first feature never drives
/// the label.
pub fn state_spec() -> HmmSpec {
    let g = |mean: [f64; 3]| Emission::Gaussian {
        mean: mean.to_vec(),
        std: 1.0,
    };
    HmmSpec {
        initial: vec![0.5, 0.5],
        transition: vec![vec![0.1, 0.9], vec![0.1, 0.9]],
        emissions: vec![g([0.1, 1.6, 0.5]), g([-0.1, -0.4, -1.5])],
        driver: vec![1, 2],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub regime: Regime,
    pub n: usize,
    pub t: usize,
    pub spec: HmmSpec,
}

impl HmmConfig {
    pub fn switch_feature() -> Self {
        Self {
            regime: Regime::SwitchFeature,
            n: 1000,
            t: 100,
            spec: switch_feature_spec(),
        }
    }

    pub fn state() -> Self {
        Self {
            regime: Regime::State,
            n: 1000,
            t: 200,
            spec: state_spec(),
        }
    }
}

/// Markov chain path of length `t`.
pub fn sample_states(spec: &HmmSpec, t: usize, r: &mut Rng) -> Result<Vec<usize>> {
    let bad = |_| Error::Config("invalid HMM probabilities".into());
    let init = WeightedIndex::new(&spec.initial).map_err(bad)?;
    let rows = spec
        .transition
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(bad))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(t);
    let mut s = init.sample(r);
    for step in 0..t {
        if step > 0 {
            s = rows[s].sample(r);
        }
        out.push(s);
    }
    Ok(out)
}

/// RBF Gram matrix over `t` points evenly spaced on [0, 1].
pub fn rbf_kernel(t: usize, length: f64, variance: f64) -> DMatrix<f64> {
    let tau = |i: usize| if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 };
    DMatrix::from_fn(t, t, |i, j| {
        let dt = tau(i) - tau(j);
        variance * (-dt * dt / (2.0 * length * length)).exp()
    })
}

fn gp_factor(t: usize, length: f64, variance: f64, jitter: f64) -> Result<DMatrix<f64>> {
    let mut k = rbf_kernel(t, length, variance);
    for i in 0..t {
        k[(i, i)] += jitter;
    }
    k.cholesky()
        .map(|c| c.l())
        .ok_or(Error::Numerics { op: "cholesky" })
}

/// Emits inputs, labels and truth for fixed state paths (one per sample).
pub fn emit(regime: Regime, spec: &HmmSpec, states: &[Vec<usize>], seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let n = states.len();
    let t = states.first().map_or(0, Vec::len);
    if n == 0 || t == 0 || states.iter().any(|s| s.len() != t) {
        return Err(Error::Config("state paths must be nonempty and of equal length".into()));
    }
    let k = spec.states();
    if states.iter().flatten().any(|&s| s >= k) {
        return Err(Error::Config("state index out of range".into()));
    }
    let d = spec.features();
    let factors = spec
        .emissions
        .iter()
        .map(|e| match *e {
            Emission::GpPath {
                length,
                variance,
                jitter,
                ..
            } => gp_factor(t, length, variance, jitter).map(Some),
            Emission::Gaussian { .. } => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut er = rng(derive_named(seed, "emission"));
    let mut lr = rng(derive_named(seed, "labels"));
    let mut x = Tensor::zeros(&[n, t, d]);
    let mut y = Tensor::zeros(&[n, t]);
    let mut truth = TruthMask::empty(n, t, d);
    for (i, path) in states.iter().enumerate() {
        // GP paths for every state, indexed [state][feature][step]
        let mut paths: Vec<Vec<DVector<f64>>> = Vec::with_capacity(k);
        for (e, f) in spec.emissions.iter().zip(&factors) {
            let mut per_feature = Vec::new();
            if let Some(l) = f {
                for &m in e.mean() {
                    let z = DVector::from_fn(t, |_, _| StandardNormal.sample(&mut er));
                    per_feature.push(l * z + DVector::from_element(t, m));
                }
            }
            paths.push(per_feature);
        }
        for (step, &s) in path.iter().enumerate() {
            for j in 0..d {
                let v = match &spec.emissions[s] {
                    Emission::GpPath { .. } => paths[s][j][step],
                    Emission::Gaussian { mean, std } => {
                        let z: f64 = StandardNormal.sample(&mut er);
                        mean[j] + std * z
                    }
                };
                x.set(&[i, step, j], v);
            }
            let driver = spec.driver[s];
            truth.set(i, step, driver, true);
            let p = sigmoid(x.at(&[i, step, driver]));
            let label = if lr.gen::<f64>() < p { 1.0 } else { 0.0 };
            y.set(&[i, step], label);
        }
    }
    Ok(Dataset {
        regime,
        seed,
        x,
        y,
        truth,
        group: vec![0; n],
    })
}

pub fn gen_hmm(config: &HmmConfig, seed: u64) -> Result<Dataset> {
    config.spec.validate()?;
    if config.n == 0 || config.t == 0 {
        return Err(Error::Config("HMM regimes need N, T >= 1".into()));
    }
    let mut sr = rng(derive_named(seed, "states"));
    let states = (0..config.n)
        .map(|_| sample_states(&config.spec, config.t, &mut sr))
        .collect::<Result<Vec<_>>>()?;
    emit(config.regime, &config.spec, &states, seed)
}

pub fn gen_switch_feature(config: &HmmConfig, seed: u64) -> Result<Dataset> {
    gen_hmm(config, seed)
}

pub fn gen_state(config: &HmmConfig, seed: u64) -> Result<Dataset> {
    gen_hmm(config, seed)
}
