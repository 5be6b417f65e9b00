//! Central finite-difference gradient checks.
//!
//! Only forward evaluation is used to build the numeric estimate, so the
//! check is independent of the reverse sweep it validates.

use crate::error::Result;
use crate::scalar::Scalar;

use super::{Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// (input index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Checks every element of every input.
pub fn check_all<S, F>(inputs: &[Tensor<S>], h: f64, floor: f64, build: F) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var>,
{
    let which: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_entries(inputs, &which, h, floor, build)
}

/// Checks only the listed (input, element) entries.
pub fn check_entries<S, F>(
    inputs: &[Tensor<S>],
    which: &[(usize, usize)],
    h: f64,
    floor: f64,
    build: F,
) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor<S>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let eval = |perturbed: &[Tensor<S>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.value(root).item()?.as_f64())
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    for &(i, j) in which {
        let x0 = work[i].data()[j];
        work[i].data_mut()[j] = x0 + S::lit(h);
        let up = eval(&work)?;
        work[i].data_mut()[j] = x0 - S::lit(h);
        let down = eval(&work)?;
        work[i].data_mut()[j] = x0;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].data()[j].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = (i, j);
        }
        report.checked += 1;
    }
    Ok(report)
}
