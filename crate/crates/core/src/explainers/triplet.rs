//! Triplet construction over perturbations and the contrastive loss.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gates::Reduction;
use crate::error::{shape_err, Error, Result};
use crate::gradcore::{Graph, Tensor, Var};
use crate::rng::{rng, Rng};
use crate::scalar::Scalar;

const MAX_ITERS: usize = 50;
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    /// Mean absolute elementwise difference.
    #[default]
    Manhattan,
    /// Root mean squared elementwise difference.
    Euclidean,
    /// One minus cosine similarity.
    Cosine,
}

/// Sign of the margin inside the hinge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HingeSign {
    /// `max(0, D_an − D_ap − b)`
    #[default]
    AsPrinted,
    /// `max(0, D_an − D_ap + b)`
    Flipped,
}

/// How many positives and negatives each anchor receives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripletCounts {
    /// `K± = max(1, ⌊f · |cluster|⌋)` for the anchor's and the other cluster.
    Fraction(f64),
    Fixed { positives: usize, negatives: usize },
}

impl Default for TripletCounts {
    fn default() -> Self {
        TripletCounts::Fraction(0.2)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletSet {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    /// 0 or 1 per sample.
    pub labels: Vec<u8>,
    pub iterations: usize,
    /// Set when k-medians left a cluster empty and a random split was used.
    pub fallback: bool,
}

impl Clustering {
    pub fn members(&self, c: u8) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }
}

fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn as_rows<S: Scalar>(x: &Tensor<S>) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = *x.shape().first().ok_or_else(|| shape_err!("triplets need a batch"))?;
    let len = x.numel().checked_div(n).unwrap_or(0);
    let data = x.to_f64_vec();
    Ok(((0..n).map(|i| data[i * len..(i + 1) * len].to_vec()).collect(), n))
}

/// Two-cluster k-medians under Manhattan distance, seeded with the
/// farthest pair. Ties in assignment go to cluster 0.
pub fn two_medians(points: &[Vec<f64>], r: &mut Rng) -> Result<Clustering> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Config("clustering needs at least two samples".into()));
    }
    let (mut best, mut pair) = (-1.0, (0, 1));
    for i in 0..n {
        for j in i + 1..n {
            let d = manhattan(&points[i], &points[j]);
            if d > best {
                best = d;
                pair = (i, j);
            }
        }
    }
    let mut centroids = [points[pair.0].clone(), points[pair.1].clone()];
    let mut labels = vec![u8::MAX; n];
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        let next: Vec<u8> = points
            .iter()
            .map(|p| u8::from(manhattan(p, &centroids[1]) < manhattan(p, &centroids[0])))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c as u8).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut column = vec![0.0; members.len()];
            for (k, v) in centroid.iter_mut().enumerate() {
                for (slot, m) in column.iter_mut().zip(&members) {
                    *slot = m[k];
                }
                *v = median_of(&mut column);
            }
        }
    }
    let fallback = labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1);
    if fallback {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(r);
        for (rank, &i) in order.iter().enumerate() {
            labels[i] = u8::from(rank >= n / 2);
        }
    }
    Ok(Clustering {
        labels,
        iterations,
        fallback,
    })
}

/// Result of [`select_triplets`].
#[derive(Clone, Debug)]
pub struct TripletSelection {
    pub triplets: Vec<TripletSet>,
    pub clustering: Clustering,
    pub notes: Vec<String>,
}

/// Clusters the batch in two, then for every anchor takes the nearest
/// same-cluster members as positives and a uniform draw without
/// replacement from the other cluster as negatives.
pub fn select_triplets<S: Scalar>(xr: &Tensor<S>, counts: TripletCounts, seed: u64) -> Result<TripletSelection> {
    let (points, n) = as_rows(xr)?;
    if let TripletCounts::Fixed { positives, negatives } = counts {
        if positives == 0 || negatives == 0 || n < positives + negatives + 1 {
            return Err(Error::Config(format!(
                "batch of {n} cannot supply {positives} positives and {negatives} negatives"
            )));
        }
    }
    let mut r = rng(seed);
    let clustering = two_medians(&points, &mut r)?;
    let mut notes = Vec::new();
    if clustering.fallback {
        notes.push("k-medians left a cluster empty; using a random bipartition".to_string());
    }
    let clusters = [clustering.members(0), clustering.members(1)];
    let want = |size: usize, fixed: usize| match counts {
        TripletCounts::Fraction(f) => ((f * size as f64).floor() as usize).max(1),
        TripletCounts::Fixed { .. } => fixed,
    };
    let (fixed_pos, fixed_neg) = match counts {
        TripletCounts::Fixed { positives, negatives } => (positives, negatives),
        TripletCounts::Fraction(_) => (0, 0),
    };
    let mut saturated = 0usize;
    let mut triplets = Vec::with_capacity(n);
    for anchor in 0..n {
        let c = clustering.labels[anchor] as usize;
        let own = &clusters[c];
        let other = &clusters[1 - c];
        let mut candidates: Vec<(f64, usize)> = own
            .iter()
            .filter(|&&j| j != anchor)
            .map(|&j| (manhattan(&points[anchor], &points[j]), j))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k_pos = want(own.len(), fixed_pos);
        if k_pos > candidates.len() {
            saturated += 1;
        }
        let positives: Vec<usize> = candidates.iter().take(k_pos).map(|&(_, j)| j).collect();
        let k_neg = want(other.len(), fixed_neg).min(other.len());
        let negatives: Vec<usize> = sample(&mut r, other.len(), k_neg).iter().map(|k| other[k]).collect();
        triplets.push(TripletSet {
            anchor,
            positives,
            negatives,
        });
    }
    if saturated > 0 {
        log::debug!("{saturated} anchors had fewer same-cluster members than K+");
        notes.push("some anchors had fewer same-cluster members than K+; all were used".to_string());
    }
    for note in &notes {
        log::info!("{note}");
    }
    Ok(TripletSelection {
        triplets,
        clustering,
        notes,
    })
}

/// Distance between two rank-2 `[P, L]` blocks, row by row, as `[P]`.
/// Upper bound on the cells of one gathered block of pair rows.
const PAIR_BLOCK_CELLS: usize = 1 << 18;

fn pair_distance<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var, kind: Distance) -> Result<Var> {
    let eps = S::lit(NORM_EPS);
    match kind {
        Distance::Manhattan => {
            let d = g.sub(a, b)?;
            let d = g.abs(d)?;
            g.mean_axis(d, 1)
        }
        Distance::Euclidean => {
            let d = g.sub(a, b)?;
            let d = g.square(d)?;
            let m = g.mean_axis(d, 1)?;
            let m = g.add_scalar(m, eps)?;
            g.sqrt(m)
        }
        Distance::Cosine => {
            let ab = g.mul(a, b)?;
            let dot = g.sum_axis(ab, 1)?;
            let norm = |g: &mut Graph<S>, v: Var| -> Result<Var> {
                let s = g.square(v)?;
                let s = g.sum_axis(s, 1)?;
                let s = g.add_scalar(s, eps)?;
                g.sqrt(s)
            };
            let na = norm(g, a)?;
            let nb = norm(g, b)?;
            let den = g.mul(na, nb)?;
            let cos = g.div(dot, den)?;
            g.rsub_scalar(S::one(), cos)
        }
    }
}

/// Per-anchor contrastive loss `[N]` for perturbations `xr: [N, …]`:
/// hinge on the mean negative and positive distances plus the mean
/// absolute value of the anchor's perturbation. Anchors without positives
/// (singleton clusters) contribute only the L1 term.
pub fn contrastive_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    xr: Var,
    triplets: &[TripletSet],
    margin: S,
    kind: Distance,
    hinge: HingeSign,
    l1: Reduction,
) -> Result<Var> {
    let shape = g.shape(xr).to_vec();
    let n = *shape.first().ok_or_else(|| shape_err!("contrastive loss needs a batch"))?;
    let len: usize = shape[1..].iter().product();
    if triplets.len() != n {
        return Err(shape_err!("{} triplet sets for {} samples", triplets.len(), n));
    }
    let mut anchors = Vec::new();
    let mut others = Vec::new();
    let mut wp: Vec<S> = Vec::new();
    let mut wn: Vec<S> = Vec::new();
    let mut entries: Vec<(usize, bool, S)> = Vec::new();
    let mut active = Vec::with_capacity(n);
    for (i, set) in triplets.iter().enumerate() {
        if set.anchor != i {
            return Err(Error::Config(format!("triplet {i} is anchored at {}", set.anchor)));
        }
        if set.negatives.is_empty() {
            return Err(Error::Config(format!("anchor {i} has no negatives")));
        }
        if set.positives.is_empty() {
            // a singleton cluster: the anchor only pays the L1 term
            active.push(S::zero());
            continue;
        }
        active.push(S::one());
        for (list, pos) in [(&set.positives, true), (&set.negatives, false)] {
            let w = S::one() / S::lit(list.len() as f64);
            for &j in list {
                anchors.push(i);
                others.push(j);
                entries.push((i, pos, w));
            }
        }
    }
    let p = anchors.len();
    if p == 0 {
        let flat = g.reshape(xr, &[n, len])?;
        let size = g.abs(flat)?;
        return l1.apply(g, size);
    }
    wp.resize(n * p, S::zero());
    wn.resize(n * p, S::zero());
    for (k, &(i, pos, w)) in entries.iter().enumerate() {
        if pos {
            wp[i * p + k] = w;
        } else {
            wn[i * p + k] = w;
        }
    }
    let flat = g.reshape(xr, &[n, len])?;
    // Pairs are gathered in blocks so no intermediate grows past a few MB.
    let block = (PAIR_BLOCK_CELLS / len.max(1)).max(1);
    let mut parts = Vec::new();
    for (ia, ib) in anchors.chunks(block).zip(others.chunks(block)) {
        let a = g.gather_rows(flat, ia)?;
        let b = g.gather_rows(flat, ib)?;
        parts.push(pair_distance(g, a, b, kind)?);
    }
    let d = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
    let d = g.reshape(d, &[p, 1])?;
    let wp = g.constant(Tensor::new(vec![n, p], wp)?);
    let wn = g.constant(Tensor::new(vec![n, p], wn)?);
    let d_ap = g.matmul(wp, d)?;
    let d_an = g.matmul(wn, d)?;
    let gap = g.sub(d_an, d_ap)?;
    let shift = match hinge {
        HingeSign::AsPrinted => -margin,
        HingeSign::Flipped => margin,
    };
    let gap = g.add_scalar(gap, shift)?;
    let hinge = g.relu(gap)?;
    let hinge = g.reshape(hinge, &[n])?;
    let active = g.constant(Tensor::new(vec![n], active)?);
    let hinge = g.mul(hinge, active)?;
    let size = g.abs(flat)?;
    let size = l1.apply(g, size)?;
    g.add(hinge, size)
}

/// Contrastive loss of one anchor against explicit positive and negative
/// perturbations of the same shape, with the L1 term averaged over cells.
pub fn contrastive_loss<S: Scalar>(
    anchor: &Tensor<S>,
    positives: &[Tensor<S>],
    negatives: &[Tensor<S>],
    margin: S,
    kind: Distance,
    hinge: HingeSign,
) -> Result<S> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Config("contrastive loss needs positives and negatives".into()));
    }
    let mut rows = vec![anchor.clone()];
    rows.extend(positives.iter().cloned());
    rows.extend(negatives.iter().cloned());
    let batch = Tensor::stack_rows(&rows)?;
    let k = positives.len();
    let set = TripletSet {
        anchor: 0,
        positives: (1..=k).collect(),
        negatives: (k + 1..rows.len()).collect(),
    };
    // only the anchor's row matters; the other rows get dummy sets
    let mut sets = vec![set];
    for i in 1..rows.len() {
        sets.push(TripletSet {
            anchor: i,
            positives: vec![0],
            negatives: vec![0],
        });
    }
    let mut g = Graph::new();
    let xr = g.constant(batch);
    let per = contrastive_loss_graph(&mut g, xr, &sets, margin, kind, hinge, Reduction::Mean)?;
    Ok(g.value(per).data()[0])
}

/// Plain distance between two equally shaped tensors.
pub fn distance<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, kind: Distance) -> Result<S> {
    if a.shape() != b.shape() {
        return Err(shape_err!("distance between {:?} and {:?}", a.shape(), b.shape()));
    }
    let len = a.numel();
    let mut g = Graph::new();
    let av = g.constant(a.clone().reshape(&[1, len])?);
    let bv = g.constant(b.clone().reshape(&[1, len])?);
    let d = pair_distance(&mut g, av, bv, kind)?;
    Ok(g.value(d).data()[0])
}
