use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::{gru_sequence, linear, uniform};
use super::{Checkpoint, ModelKind, OutputKind, PredictModel};
use crate::datagen::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::gradcore::{AdamState, Graph, Tensor, Var};
use crate::rng::{derive_named, derive_seed, rng};
use crate::scalar::Scalar;

const CHECKPOINT_KIND: &str = "gru-classifier";
/// Samples per forward pass in [`GruClassifier::predict`].
const PREDICT_CHUNK: usize = 128;

/// Single-layer GRU with a per-step logit readout.
///
/// Gate blocks in `w`, `b` and `u` are ordered (update, reset, candidate).
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<S> {
    /// `[D, 3H]`
    pub w: Tensor<S>,
    /// `[3H]`
    pub b: Tensor<S>,
    /// `[H, 3H]`
    pub u: Tensor<S>,
    /// `[H, 1]`
    pub w_out: Tensor<S>,
    /// `[1]`
    pub b_out: Tensor<S>,
}

impl<S: Scalar> GruParams<S> {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w: Tensor::zeros(&[d, 3 * h]),
            b: Tensor::zeros(&[3 * h]),
            u: Tensor::zeros(&[h, 3 * h]),
            w_out: Tensor::zeros(&[h, 1]),
            b_out: Tensor::zeros(&[1]),
        }
    }

    /// Every entry uniform in ±1/√H.
    pub fn init(d: usize, h: usize, seed: u64) -> Self {
        let mut r = rng(derive_named(seed, "gru-init"));
        let bound = 1.0 / (h as f64).sqrt();
        Self {
            w: uniform(&[d, 3 * h], bound, &mut r),
            b: uniform(&[3 * h], bound, &mut r),
            u: uniform(&[h, 3 * h], bound, &mut r),
            w_out: uniform(&[h, 1], bound, &mut r),
            b_out: uniform(&[1], bound, &mut r),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim(), self.hidden());
        let shapes: [(&Tensor<S>, &[usize]); 5] = [
            (&self.w, &[d, 3 * h]),
            (&self.b, &[3 * h]),
            (&self.u, &[h, 3 * h]),
            (&self.w_out, &[h, 1]),
            (&self.b_out, &[1]),
        ];
        for (t, s) in shapes {
            if t.shape() != s {
                return Err(shape_err!("GRU parameter shape {:?}, expected {:?}", t.shape(), s));
            }
        }
        Ok(())
    }

    fn tensors(&self) -> [&Tensor<S>; 5] {
        [&self.w, &self.b, &self.u, &self.w_out, &self.b_out]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<S>; 5] {
        [&mut self.w, &mut self.b, &mut self.u, &mut self.w_out, &mut self.b_out]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint<S> {
        let mut ck = Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::json!({"input_dim": self.input_dim(), "hidden": self.hidden()}),
        );
        for (name, t) in ["w", "b", "u", "w_out", "b_out"].into_iter().zip(self.tensors()) {
            ck.insert(name, t);
        }
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint<S>) -> Result<Self> {
        let p = Self {
            w: ck.take("w")?,
            b: ck.take("b")?,
            u: ck.take("u")?,
            w_out: ck.take("w_out")?,
            b_out: ck.take("b_out")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, CHECKPOINT_KIND)?)
    }
}

struct GruVars {
    w: Var,
    b: Var,
    u: Var,
    w_out: Var,
    b_out: Var,
}

impl GruVars {
    fn insert<S: Scalar>(g: &mut Graph<S>, p: &GruParams<S>, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor<S>| g.leaf(t.clone(), trainable);
        Self {
            w: leaf(&p.w),
            b: leaf(&p.b),
            u: leaf(&p.u),
            w_out: leaf(&p.w_out),
            b_out: leaf(&p.b_out),
        }
    }

    fn all(&self) -> [Var; 5] {
        [self.w, self.b, self.u, self.w_out, self.b_out]
    }
}

/// Per-step logits `[N,T]`.
fn logits<S: Scalar>(g: &mut Graph<S>, x: Var, v: &GruVars) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let hs = gru_sequence(g, x, v.w, v.b, v.u, false)?;
    let z = linear(g, hs, v.w_out, v.b_out)?;
    g.reshape(z, &xs[..2])
}

/// Mean per-step binary cross-entropy from logits, `softplus(z) − y z`.
pub(crate) fn bce_with_logits<S: Scalar>(g: &mut Graph<S>, z: Var, y: Var) -> Result<Var> {
    let sp = g.softplus(z)?;
    let yz = g.mul(y, z)?;
    let l = g.sub(sp, yz)?;
    g.mean(l)
}

/// Frozen GRU classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct GruClassifier<S> {
    pub params: GruParams<S>,
}

impl<S: Scalar> GruClassifier<S> {
    pub fn new(params: GruParams<S>) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl<S: Scalar> PredictModel<S> for GruClassifier<S> {
    fn kind(&self) -> ModelKind {
        ModelKind::Gru
    }

    fn output(&self) -> OutputKind {
        OutputKind::Probability
    }

    fn forward(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let xs = g.shape(x);
        if xs.len() != 3 || xs[2] != self.params.input_dim() {
            return Err(shape_err!("GRU expects [N,T,{}], got {:?}", self.params.input_dim(), xs));
        }
        let v = GruVars::insert(g, &self.params, false);
        logits(g, x, &v)
    }

    fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let n = *x.shape().first().ok_or_else(|| shape_err!("GRU input is a scalar"))?;
        let mut parts = Vec::new();
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
            let mut g = Graph::new();
            let v = g.constant(x.rows(&idx)?);
            let z = self.forward(&mut g, v)?;
            parts.push(g.value(z).map(crate::gradcore::sigmoid));
        }
        let t = x.shape()[1];
        let data: Vec<S> = parts.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::new(vec![n, t], data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-4,
            batch_size: 32,
            hidden: 200,
        }
    }
}

/// Per-epoch training statistics, accumulated over the minibatches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Minimises mean per-step binary cross-entropy against the stored labels
/// with Adam over shuffled minibatches.
pub fn train_classifier<S: Scalar>(ds: &Dataset<S>, cfg: &TrainConfig, seed: u64) -> Result<(GruParams<S>, TrainReport)> {
    ds.validate()?;
    if !ds.regime.is_classification() {
        return Err(Error::Config(format!("{} has no class labels", ds.regime)));
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch_size, hidden and lr must be positive".into()));
    }
    let (n, t, d) = ds.dims();
    let mut params = GruParams::init(d, cfg.hidden, seed);
    let mut adam = AdamState::for_params(S::lit(cfg.lr), &params.tensors());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..n).collect();
    let shuffle_seed = derive_named(seed, "gru-shuffle");

    for epoch in 0..cfg.epochs {
        let diverged = |e: Error| Error::Training {
            epoch,
            reason: e.to_string(),
        };
        order.shuffle(&mut rng(derive_seed(shuffle_seed, epoch as u64)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = ds.x.rows(batch)?;
            let y = ds.y.rows(batch)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let yv = g.constant(y);
            let vars = GruVars::insert(&mut g, &params, true);
            let z = logits(&mut g, xv, &vars).map_err(diverged)?;
            let loss = bce_with_logits(&mut g, z, yv).map_err(diverged)?;
            let lv = g.value(loss).item()?.as_f64();
            if !lv.is_finite() {
                return Err(diverged(Error::Numerics { op: "bce" }));
            }
            loss_sum += lv * batch.len() as f64;
            correct += g
                .value(z)
                .data()
                .iter()
                .zip(g.value(yv).data())
                .filter(|(&zi, &yi)| (zi > S::zero()) == (yi > S::lit(0.5)))
                .count();
            let mut grads = g.backward(loss).map_err(diverged)?;
            let gs = vars
                .all()
                .iter()
                .map(|&v| grads.take(v).ok_or_else(|| diverged(Error::Numerics { op: "gradient" })))
                .collect::<Result<Vec<_>>>()?;
            let grefs: Vec<&Tensor<S>> = gs.iter().collect();
            adam.step(&mut params.tensors_mut(), &grefs)?;
            if !params.all_finite() {
                return Err(diverged(Error::Numerics { op: "adam" }));
            }
        }
        report.loss.push(loss_sum / n as f64);
        report.accuracy.push(correct as f64 / (n * t) as f64);
        log::debug!(
            "gru epoch {epoch}: loss {:.5} acc {:.4}",
            report.loss[epoch],
            report.accuracy[epoch]
        );
    }
    Ok((params, report))
}
