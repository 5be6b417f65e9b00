use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{derive_named, rng};

/// Autoregressive recursion `x[t] = Σ_k φ_k x[t−1−k] + ε[t]` started from a
/// zero state.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmaProcess {
    pub coeffs: Vec<f64>,
}

impl Default for ArmaProcess {
    fn default() -> Self {
        Self {
            coeffs: vec![0.25, 0.1, 0.05],
        }
    }
}

impl ArmaProcess {
    /// Runs the recursion in place over a noise sequence.
    pub fn filter(&self, series: &mut [f64]) {
        for t in 0..series.len() {
            let mut v = series[t];
            for (k, &phi) in self.coeffs.iter().enumerate() {
                if t > k {
                    v += phi * series[t - 1 - k];
                }
            }
            series[t] = v;
        }
    }

    pub fn sample(&self, len: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
        let mut s: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        self.filter(&mut s);
        s
    }
}

/// `[N, T, D]` tensor whose every `(sample, observation)` series is an
/// independent draw of the default process.
pub fn gen_arma(n: usize, t: usize, d: usize, seed: u64) -> Result<Tensor<f64>> {
    if n == 0 || d == 0 || t < 4 {
        return Err(Error::Config(format!("ARMA needs N, D >= 1 and T >= 4 (got {n}, {t}, {d})")));
    }
    let process = ArmaProcess::default();
    let mut r = rng(derive_named(seed, "arma"));
    let mut x = Tensor::zeros(&[n, t, d]);
    let data = x.data_mut();
    for i in 0..n {
        for j in 0..d {
            let s = process.sample(t, &mut r);
            for (k, v) in s.into_iter().enumerate() {
                data[(i * t + k) * d + j] = v;
            }
        }
    }
    Ok(x)
}
