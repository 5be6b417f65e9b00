//! The contrastive, locally sparse perturbation explainer.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gates::{apply_perturbation_graph, Reduction, reg_term_graph, smooth_mu_graph, sparse_gate_graph};
use super::perturb::{PerturbKind, PerturbNet};
use super::trend::TrendNet;
use super::triplet::{contrastive_loss_graph, select_triplets, Distance, HingeSign, TripletCounts};
use crate::datagen::Regime;
use crate::error::{shape_err, Error, Result};
use crate::gradcore::{AdamState, Graph, Tensor, Var};
use crate::models::{Checkpoint, OutputKind, PredictModel};
use crate::rng::{derive_named, derive_seed, rng};
use crate::scalar::Scalar;

pub const MASK_STATE_KIND: &str = "mask-state";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContraConfig {
    /// Weight of the expected-ℓ0 penalty.
    pub alpha: f64,
    /// Weight of the contrastive term; 0 drops it.
    pub beta: f64,
    /// Gate noise standard deviation.
    pub delta: f64,
    /// Triplet margin `b`.
    pub margin: f64,
    pub triplets: TripletCounts,
    pub epochs: usize,
    pub lr: f64,
    pub distance: Distance,
    pub hinge_sign: HingeSign,
    /// When false, `μ′ = μ` (the trend network is bypassed).
    pub trend: bool,
    pub trend_hidden: usize,
    pub perturb: PerturbKind,
    /// Hidden width of the perturbation network; `None` means D.
    pub perturb_hidden: Option<usize>,
    /// Reduction of the per-sample gate penalty over its `T·D` cells:
    /// expected count (sum) or expected fraction (mean) of open gates.
    pub reg_reduction: Reduction,
    /// Reduction of the L1 size term of `x^r` over its `T·D` cells.
    pub l1_reduction: Reduction,
}

impl Default for ContraConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            delta: 0.5,
            margin: 1.0,
            triplets: TripletCounts::default(),
            epochs: 500,
            lr: 0.01,
            distance: Distance::Manhattan,
            hinge_sign: HingeSign::AsPrinted,
            trend: true,
            trend_hidden: 32,
            perturb: PerturbKind::BiGru,
            perturb_hidden: None,
            reg_reduction: Reduction::Mean,
            l1_reduction: Reduction::Sum,
        }
    }
}

impl ContraConfig {
    /// Per-regime settings used for the reference experiments.
    pub fn for_regime(regime: Regime) -> Self {
        let base = Self::default();
        match regime {
            Regime::SwitchFeature => Self {
                alpha: 1.0,
                beta: 2.0,
                delta: 0.8,
                ..base
            },
            Regime::State => Self {
                alpha: 2.0,
                beta: 1.0,
                delta: 0.5,
                ..base
            },
            _ => Self {
                alpha: 0.1,
                beta: 0.1,
                delta: 0.5,
                lr: 0.1,
                epochs: 200,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.trend_hidden == 0 || self.perturb_hidden == Some(0) {
            return bad("hidden widths must be positive");
        }
        match self.triplets {
            TripletCounts::Fraction(f) if !(f > 0.0 && f <= 1.0) => bad("triplet fraction must lie in (0, 1]"),
            TripletCounts::Fixed { positives, negatives } if positives == 0 || negatives == 0 => {
                bad("triplet counts must be at least 1")
            }
            _ => Ok(()),
        }
    }
}

/// Learned parameters of one fit: gate means, trend and perturbation nets.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskState<S> {
    /// `[N,T,D]`
    pub mu: Tensor<S>,
    pub trend: TrendNet<S>,
    pub perturb: PerturbNet<S>,
    pub use_trend: bool,
}

impl<S: Scalar> MaskState<S> {
    pub fn init(shape: [usize; 3], cfg: &ContraConfig, seed: u64) -> Self {
        let [_, t, d] = shape;
        let mut r = rng(derive_named(seed, "mu-init"));
        let mu = crate::models::layers::uniform(&shape, 0.5, &mut r);
        let trend = TrendNet::init(t, d, cfg.trend_hidden, &mut rng(derive_named(seed, "trend-init")));
        let perturb = PerturbNet::init(
            cfg.perturb,
            d,
            cfg.perturb_hidden.unwrap_or(d),
            &mut rng(derive_named(seed, "perturb-init")),
        );
        Self {
            mu,
            trend,
            perturb,
            use_trend: cfg.trend,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.mu.shape();
        [s[0], s[1], s[2]]
    }

    pub fn validate(&self) -> Result<()> {
        let [_, t, d] = self.shape();
        if self.trend.steps() != t || self.trend.observations() != d || self.perturb.observations() != d {
            return Err(shape_err!("mask state components disagree with μ shape {:?}", self.mu.shape()));
        }
        if !self.mu.all_finite() {
            return Err(Error::Numerics { op: "mask-state" });
        }
        Ok(())
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = vec![&mut self.mu];
        v.extend(self.trend.tensors_mut());
        v.extend(self.perturb.tensors_mut());
        v
    }

    fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut v = vec![&self.mu];
        v.extend(self.trend.tensors());
        v.extend(self.perturb.tensors());
        v
    }

    pub fn to_checkpoint(&self) -> Checkpoint<S> {
        let mut ck = Checkpoint::new(
            MASK_STATE_KIND,
            serde_json::json!({"perturb": self.perturb.kind, "use_trend": self.use_trend}),
        );
        ck.insert("mu", &self.mu);
        for (name, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.trend.tensors()) {
            ck.insert(&format!("trend.{name}"), t);
        }
        for (name, t) in self.perturb.names().iter().zip(self.perturb.tensors()) {
            ck.insert(&format!("perturb.{name}"), t);
        }
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint<S>) -> Result<Self> {
        let kind: PerturbKind = serde_json::from_value(ck.meta["perturb"].clone())?;
        let use_trend = ck.meta["use_trend"]
            .as_bool()
            .ok_or_else(|| Error::Format("mask state lacks use_trend".into()))?;
        let mu = ck.take("mu")?;
        let trend = TrendNet {
            w1: ck.take("trend.w1")?,
            b1: ck.take("trend.b1")?,
            w2: ck.take("trend.w2")?,
            b2: ck.take("trend.b2")?,
        };
        let names: &[&str] = match kind {
            PerturbKind::BiGru => &super::perturb::BIGRU_NAMES,
            PerturbKind::Mlp => &super::perturb::MLP_NAMES,
        };
        let params = names
            .iter()
            .map(|n| ck.take(&format!("perturb.{n}")))
            .collect::<Result<Vec<_>>>()?;
        let state = Self {
            mu,
            trend,
            perturb: PerturbNet { kind, params },
            use_trend,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, MASK_STATE_KIND)?)
    }
}

/// Loss components of one epoch, already weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub preservation: f64,
    pub sparsity: f64,
    pub contrastive: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome<S> {
    pub state: MaskState<S>,
    pub trace: Vec<LossTerms>,
    /// Deduplicated warnings raised while fitting.
    pub notes: Vec<String>,
}

/// The noise tensor for `epoch`, `ε ~ N(0, δ²)` per cell.
pub fn gate_noise<S: Scalar>(shape: &[usize], delta: f64, seed: u64, epoch: usize) -> Result<Tensor<S>> {
    let normal = Normal::new(0.0, delta).map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng(derive_seed(derive_named(seed, "gate-noise"), epoch as u64));
    Ok(Tensor::from_fn(shape, |_| S::lit(normal.sample(&mut r))))
}

/// What the preservation loss compares against.
pub(crate) enum Reference<S> {
    Values(Tensor<S>),
    Probabilities(Tensor<S>),
}

fn reference<S: Scalar>(model: &dyn PredictModel<S>, x: &Tensor<S>) -> Result<Reference<S>> {
    let out = model.predict(x)?;
    Ok(match model.output() {
        OutputKind::Regression => Reference::Values(out),
        OutputKind::Probability => Reference::Probabilities(out),
    })
}

fn preservation<S: Scalar>(g: &mut Graph<S>, out: Var, target: &Reference<S>) -> Result<Var> {
    match target {
        Reference::Values(y) => {
            let y = g.constant(y.clone());
            let d = g.sub(out, y)?;
            let d = g.square(d)?;
            g.mean(d)
        }
        Reference::Probabilities(p) => {
            // cross-entropy with soft targets, in logit form
            let p = g.constant(p.clone());
            let sp = g.softplus(out)?;
            let pz = g.mul(p, out)?;
            let l = g.sub(sp, pz)?;
            g.mean(l)
        }
    }
}

/// One epoch's objective: the scalar loss, its weighted components and the
/// trainable leaves in [`MaskState`] tensor order.
pub(crate) struct Objective {
    pub loss: Var,
    pub preservation: Var,
    pub sparsity: Var,
    pub contrastive: Option<Var>,
    pub leaves: Vec<Var>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn build_objective<S: Scalar>(
    g: &mut Graph<S>,
    state: &MaskState<S>,
    x: &Tensor<S>,
    model: &dyn PredictModel<S>,
    target: &Reference<S>,
    noise: &Tensor<S>,
    cfg: &ContraConfig,
    triplet_seed: u64,
    notes: &mut Vec<String>,
) -> Result<Objective> {
    let n = state.shape()[0];
    let xv = g.constant(x.clone());
    let mu = g.param(state.mu.clone());
    let tv = state.trend.insert(g, state.use_trend);
    let pv = state.perturb.insert(g, true);
    let mu_s = if state.use_trend {
        let tau = state.trend.forward(g, xv, &tv)?;
        smooth_mu_graph(g, mu, tau)?
    } else {
        mu
    };
    let eps = g.constant(noise.clone());
    let m = sparse_gate_graph(g, mu_s, eps)?;
    let xr = state.perturb.forward(g, xv, &pv)?;
    let phi = apply_perturbation_graph(g, xv, m, xr)?;
    let out = model.forward(g, phi)?;
    let pres = preservation(g, out, target)?;

    let reg = reg_term_graph(g, mu_s, S::lit(cfg.delta))?;
    let reg = g.sum(reg)?;
    let cells = match cfg.reg_reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => (x.numel() / n) as f64,
    };
    let sparsity = g.scale(reg, S::lit(cfg.alpha / (n as f64 * cells)))?;
    let mut loss = g.add(pres, sparsity)?;

    let mut contrastive = None;
    if cfg.beta > 0.0 {
        let selection = select_triplets(g.value(xr), cfg.triplets, triplet_seed)?;
        for note in selection.notes {
            if !notes.contains(&note) {
                notes.push(note);
            }
        }
        let per = contrastive_loss_graph(g, xr, &selection.triplets, S::lit(cfg.margin), cfg.distance, cfg.hinge_sign, cfg.l1_reduction)?;
        let c = g.sum(per)?;
        let c = g.scale(c, S::lit(cfg.beta / n as f64))?;
        loss = g.add(loss, c)?;
        contrastive = Some(c);
    }
    let mut leaves = vec![mu];
    leaves.extend(tv.all());
    leaves.extend(pv);
    Ok(Objective {
        loss,
        preservation: pres,
        sparsity,
        contrastive,
        leaves,
    })
}

/// Evaluates the full objective for fixed noise and triplet seed. Used by
/// gradient checks; not part of the fitting loop.
pub fn objective_value<S: Scalar>(
    state: &MaskState<S>,
    x: &Tensor<S>,
    model: &dyn PredictModel<S>,
    noise: &Tensor<S>,
    cfg: &ContraConfig,
    triplet_seed: u64,
) -> Result<S> {
    let target = reference(model, x)?;
    let mut g = Graph::new();
    let mut notes = Vec::new();
    let obj = build_objective(&mut g, state, x, model, &target, noise, cfg, triplet_seed, &mut notes)?;
    g.value(obj.loss).item()
}

/// Gradient of [`objective_value`] for every tensor of the state, in the
/// order `μ`, trend, perturbation.
pub fn objective_gradients<S: Scalar>(
    state: &MaskState<S>,
    x: &Tensor<S>,
    model: &dyn PredictModel<S>,
    noise: &Tensor<S>,
    cfg: &ContraConfig,
    triplet_seed: u64,
) -> Result<Vec<Tensor<S>>> {
    let target = reference(model, x)?;
    let mut g = Graph::new();
    let mut notes = Vec::new();
    let obj = build_objective(&mut g, state, x, model, &target, noise, cfg, triplet_seed, &mut notes)?;
    let grads = g.backward(obj.loss)?;
    Ok(obj
        .leaves
        .iter()
        .zip(state.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect())
}

/// Jointly fits gate means, trend and perturbation networks with Adam.
/// Noise and triplets are redrawn each epoch from streams derived from
/// `seed`.
pub fn fit_contralsp<S: Scalar>(
    x: &Tensor<S>,
    model: &dyn PredictModel<S>,
    cfg: &ContraConfig,
    seed: u64,
) -> Result<FitOutcome<S>> {
    cfg.validate()?;
    let shape: [usize; 3] = match x.shape() {
        &[n, t, d] if n > 0 && t > 0 && d > 0 => [n, t, d],
        other => return Err(shape_err!("expected a non-empty [N,T,D] batch, got {other:?}")),
    };
    if !x.all_finite() {
        return Err(Error::Numerics { op: "input" });
    }
    if cfg.beta > 0.0 && shape[0] < 3 {
        return Err(Error::Config("the contrastive term needs at least three samples".into()));
    }
    let target = reference(model, x)?;
    let mut state = MaskState::init(shape, cfg, seed);
    let mut adam = AdamState::for_params(S::lit(cfg.lr), &state.tensors());
    let triplet_stream = derive_named(seed, "triplets");
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut notes = Vec::new();

    for epoch in 0..cfg.epochs {
        let diverged = |e: Error| Error::Training {
            epoch,
            reason: e.to_string(),
        };
        let noise = gate_noise(&shape, cfg.delta, seed, epoch)?;
        let mut g = Graph::new();
        let obj = build_objective(
            &mut g,
            &state,
            x,
            model,
            &target,
            &noise,
            cfg,
            derive_seed(triplet_stream, epoch as u64),
            &mut notes,
        )
        .map_err(diverged)?;
        let scalar = |v: Var| g.value(v).item().map(|s| s.as_f64());
        let terms = LossTerms {
            total: scalar(obj.loss)?,
            preservation: scalar(obj.preservation)?,
            sparsity: scalar(obj.sparsity)?,
            contrastive: obj.contrastive.map(scalar).transpose()?.unwrap_or(0.0),
        };
        if !terms.total.is_finite() {
            return Err(diverged(Error::Numerics { op: "loss" }));
        }
        trace.push(terms);
        let grads = g.backward(obj.loss).map_err(diverged)?;
        let gs: Vec<Tensor<S>> = obj
            .leaves
            .iter()
            .zip(state.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        let grefs: Vec<&Tensor<S>> = gs.iter().collect();
        adam.step(&mut state.tensors_mut(), &grefs)?;
        if !state.tensors().iter().all(|t| t.all_finite()) {
            return Err(diverged(Error::Numerics { op: "adam" }));
        }
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            log::debug!(
                "contralsp epoch {epoch}: total {:.5} pres {:.5} reg {:.5} cntr {:.5}",
                terms.total,
                terms.preservation,
                terms.sparsity,
                terms.contrastive
            );
        }
    }
    Ok(FitOutcome { state, trace, notes })
}

/// Noise-free mask `clamp(μ ⊙ σ(τ(x) ⊙ μ), 0, 1)`.
pub fn infer_mask<S: Scalar>(state: &MaskState<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape() != state.mu.shape() {
        return Err(shape_err!("mask state is {:?}, input {:?}", state.mu.shape(), x.shape()));
    }
    let mu_s = if state.use_trend {
        let tau = state.trend.apply(x)?;
        super::gates::smooth_mu(&state.mu, &tau)?
    } else {
        state.mu.clone()
    };
    Ok(mu_s.map(|v| v.max(S::zero()).min(S::one())))
}

/// The learned counterfactual `x^r` for `x`.
pub fn perturbation<S: Scalar>(state: &MaskState<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    state.perturb.apply(x)
}
