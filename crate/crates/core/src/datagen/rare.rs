use std::ops::Range;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{gen_arma, Dataset, Regime, TruthMask};
use crate::error::{shape_err, Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{derive_named, rng};
use crate::scalar::Scalar;

/// Which axis carries the rare salient set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RareKind {
    Time,
    Observation,
}

impl FromStr for RareKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(RareKind::Time),
            "observation" => Ok(RareKind::Observation),
            other => Err(Error::Config(format!("unknown rare kind `{other}` (expected time|observation)"))),
        }
    }
}

/// Layout of a white-box regime. Index ranges are 0-based and half-open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareConfig {
    pub kind: RareKind,
    pub grouped: bool,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    /// Salient steps (Time) or observations (Observation) per sample.
    pub salient: usize,
    /// Fixed window on the other axis when ungrouped.
    pub window: Range<usize>,
    /// Fixed windows for groups 1 and 2.
    pub group_windows: [Range<usize>; 2],
}

impl RareConfig {
    /// N=100, T=50, D=50; fixed window 13..=38 (1-based), group windows
    /// 1..=25 and 13..=38.
    pub fn new(kind: RareKind, grouped: bool) -> Self {
        Self {
            kind,
            grouped,
            n: 100,
            t: 50,
            d: 50,
            salient: 5,
            window: 12..38,
            group_windows: [0..25, 12..38],
        }
    }

    pub fn paper(regime: Regime) -> Result<Self> {
        let kind = regime
            .rare_kind()
            .ok_or_else(|| Error::Config(format!("{regime} is not a white-box regime")))?;
        Ok(Self::new(kind, regime.grouped()))
    }

    pub fn regime(&self) -> Regime {
        match (self.kind, self.grouped) {
            (RareKind::Time, false) => Regime::RareTime,
            (RareKind::Time, true) => Regime::RareTimeDiffgroups,
            (RareKind::Observation, false) => Regime::RareObservation,
            (RareKind::Observation, true) => Regime::RareObservationDiffgroups,
        }
    }

    fn window_for(&self, group: u8) -> &Range<usize> {
        match group {
            1 => &self.group_windows[0],
            2 => &self.group_windows[1],
            _ => &self.window,
        }
    }

    /// Axis lengths (drawn axis, fixed-window axis).
    fn axes(&self) -> (usize, usize) {
        match self.kind {
            RareKind::Time => (self.t, self.d),
            RareKind::Observation => (self.d, self.t),
        }
    }

    /// Candidates on the drawn axis for a group: start positions for Time,
    /// observation indices for Observation. Groups get disjoint halves.
    fn pool_for(&self, group: u8) -> Range<usize> {
        let (len, _) = self.axes();
        let full = match self.kind {
            RareKind::Time => 0..len + 1 - self.salient,
            RareKind::Observation => 0..len,
        };
        let mid = full.start + (full.end - full.start) / 2;
        match group {
            1 => full.start..mid,
            2 => mid..full.end,
            _ => full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.t < 4 {
            return Err(Error::Config("white-box regimes need N, D >= 1 and T >= 4".into()));
        }
        if self.grouped && self.n < 2 {
            return Err(Error::Config("grouped regimes need at least two samples".into()));
        }
        let (len, other) = self.axes();
        if self.salient == 0 || self.salient > len {
            return Err(Error::Config(format!("{} salient entries on an axis of {len}", self.salient)));
        }
        let groups: &[u8] = if self.grouped { &[1, 2] } else { &[0] };
        for &g in groups {
            let w = self.window_for(g);
            if w.start >= w.end || w.end > other {
                return Err(Error::Config(format!("window {w:?} invalid for axis of {other}")));
            }
            let pool = self.pool_for(g);
            let need = match self.kind {
                RareKind::Time => 1,
                RareKind::Observation => self.salient,
            };
            if pool.len() < need {
                return Err(Error::Config(format!("group {g} has {} candidates, needs {need}", pool.len())));
            }
        }
        Ok(())
    }
}

/// Ground truth and group labels of a white-box regime.
#[derive(Clone, Debug, PartialEq)]
pub struct RareSpec {
    pub truth: TruthMask,
    pub group: Vec<u8>,
}

pub fn make_rare_spec(config: &RareConfig, seed: u64) -> Result<RareSpec> {
    config.validate()?;
    let n = config.n;
    let mut group = vec![0u8; n];
    if config.grouped {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(derive_named(seed, "groups")));
        for (rank, &i) in order.iter().enumerate() {
            group[i] = if rank < n / 2 { 1 } else { 2 };
        }
    }
    let mut r = rng(derive_named(seed, "salient"));
    let mut truth = TruthMask::empty(n, config.t, config.d);
    for (i, &g) in group.iter().enumerate() {
        let window = config.window_for(g).clone();
        let pool = config.pool_for(g);
        match config.kind {
            RareKind::Time => {
                let start = r.gen_range(pool);
                for t in start..start + config.salient {
                    for d in window.clone() {
                        truth.set(i, t, d, true);
                    }
                }
            }
            RareKind::Observation => {
                let picks = sample(&mut r, pool.len(), config.salient);
                for k in picks.iter() {
                    let d = pool.start + k;
                    for t in window.clone() {
                        truth.set(i, t, d, true);
                    }
                }
            }
        }
    }
    Ok(RareSpec { truth, group })
}

/// White-box response: per step, the sum of squares of the salient cells
/// (ungrouped and group 1) or the square of their sum (group 2); zero at
/// steps without salient cells.
pub fn whitebox_regress<S: Scalar>(x: &Tensor<S>, truth: &TruthMask, group: &[u8]) -> Result<Tensor<S>> {
    let xs = x.shape();
    if xs.len() != 3 || truth.shape() != [xs[0], xs[1], xs[2]] || group.len() != xs[0] {
        return Err(shape_err!(
            "whitebox input {:?} vs truth {:?} and {} groups",
            xs,
            truth.shape(),
            group.len()
        ));
    }
    let (n, t, d) = (xs[0], xs[1], xs[2]);
    let data = x.data();
    let mut y = vec![S::zero(); n * t];
    for i in 0..n {
        for s in 0..t {
            let base = (i * t + s) * d;
            let (mut sq, mut sum) = (S::zero(), S::zero());
            for j in 0..d {
                if truth.cells()[base + j] {
                    let v = data[base + j];
                    sq = sq + v * v;
                    sum = sum + v;
                }
            }
            y[i * t + s] = if group[i] == 2 { sum * sum } else { sq };
        }
    }
    Tensor::new(vec![n, t], y)
}

/// ARMA inputs plus the salient layout and white-box targets.
pub fn gen_rare(config: &RareConfig, seed: u64) -> Result<Dataset> {
    let spec = make_rare_spec(config, seed)?;
    let x = gen_arma(config.n, config.t, config.d, seed)?;
    let y = whitebox_regress(&x, &spec.truth, &spec.group)?;
    Ok(Dataset {
        regime: config.regime(),
        seed,
        x,
        y,
        truth: spec.truth,
        group: spec.group,
    })
}
