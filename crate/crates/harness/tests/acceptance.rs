//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Full-scale runs are cached under `CONTRALSP_ACCEPTANCE_DIR` (default
//! `target/tmp/acceptance`), so an interrupted run resumes and a finished
//! one replays in seconds. `CONTRALSP_ACCEPTANCE_ONLY=1,6,9` selects
//! criteria (the rest print SKIP); `CONTRALSP_ACCEPTANCE_STRICT=1` turns any FAIL into a non-zero
//! exit status.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use contralsp_core::datagen::{Regime, TruthMask};
use contralsp_core::explainers::{
    apply_perturbation, gate_noise, infer_mask, objective_gradients, objective_value, reg_term, select_triplets,
    ContraConfig, Distance, ExplainerId, MaskState, PerturbKind, Reduction, TripletCounts,
};
use contralsp_core::gradcore::gradcheck::check_all;
use contralsp_core::gradcore::{Graph, Tensor, Var};
use contralsp_core::metrics::{aup_aur, mask_entropy, mask_information, substitution_metrics, Substitution};
use contralsp_core::models::{GruClassifier, GruParams, PredictModel, Whitebox};
use contralsp_harness::ablation::Toggle;
use contralsp_harness::config::SubstitutionSettings;
use contralsp_harness::{run_ablation, run_experiment, ExperimentConfig, ExperimentSummary, RunOptions};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    /// The classifier under explanation missed its quality gate.
    Blocked,
}

struct Verdict {
    status: Status,
    detail: String,
}

impl Verdict {
    fn check(ok: bool, detail: String) -> Self {
        let status = if ok { Status::Pass } else { Status::Fail };
        Self { status, detail }
    }
}

type Outcome = Result<Verdict, String>;

fn root() -> PathBuf {
    std::env::var_os("CONTRALSP_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn config(regime: Regime, explainers: &[ExplainerId], seeds: &[u64]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(regime);
    cfg.explainers = explainers.to_vec();
    cfg.seeds = seeds.to_vec();
    cfg.out_dir = root().join(regime.name());
    cfg.cache_dir = Some(root().join("cache"));
    // Fits are shared between criteria through the result cache; per-run
    // exports would tie a cached fit to one output directory.
    cfg.export.saliency_csv = false;
    match regime {
        Regime::RareTime => cfg.distribution = true,
        Regime::State => {
            cfg.substitution = Some(SubstitutionSettings {
                top_q: 0.2,
                mode: Substitution::Average,
            })
        }
        _ => {}
    }
    cfg
}

fn run(cfg: &ExperimentConfig) -> Result<ExperimentSummary, String> {
    let s = run_experiment(cfg).map_err(|e| e.to_string())?;
    if s.partial {
        return Err(format!("{} seed runs failed: {:?}", s.failures.len(), s.failures));
    }
    Ok(s)
}

fn mean(s: &ExperimentSummary, id: ExplainerId, metric: &str) -> Result<f64, String> {
    s.mean(id, metric).ok_or_else(|| format!("no {metric} for {id}"))
}

fn reproduction(regime: Regime, min_aup: f64, min_aur: f64) -> Outcome {
    let s = run(&config(regime, &[ExplainerId::Contralsp], &SEEDS))?;
    let aup = mean(&s, ExplainerId::Contralsp, "aup")?;
    let aur = mean(&s, ExplainerId::Contralsp, "aur")?;
    Ok(Verdict::check(
        aup >= min_aup && aur >= min_aur,
        format!("{regime}: AUP {aup:.3} (need >= {min_aup}), AUR {aur:.3} (need >= {min_aur}) over 5 seeds"),
    ))
}

fn c1() -> Outcome {
    reproduction(Regime::RareObservation, 0.97, 0.95)
}

fn c2() -> Outcome {
    reproduction(Regime::RareTime, 0.97, 0.90)
}

fn c3() -> Outcome {
    let pairs = [
        (Regime::RareObservationDiffgroups, Regime::RareObservation),
        (Regime::RareTimeDiffgroups, Regime::RareTime),
    ];
    let baselines = [ExplainerId::Fo, ExplainerId::Afo, ExplainerId::Ig];
    let mut ok = true;
    let mut parts = Vec::new();
    for (grouped, plain) in pairs {
        let base = run(&config(plain, &[ExplainerId::Contralsp], &SEEDS))?;
        let mut all = vec![ExplainerId::Contralsp];
        all.extend(baselines);
        let s = run(&config(grouped, &all, &SEEDS))?;
        let g = mean(&s, ExplainerId::Contralsp, "aur")?;
        let u = mean(&base, ExplainerId::Contralsp, "aur")?;
        ok &= g >= u - 0.05;
        let mut text = format!("{grouped}: AUR {g:.3} vs ungrouped {u:.3}");
        for id in baselines {
            let b = mean(&s, id, "aur")?;
            ok &= b < 0.3;
            text.push_str(&format!(", {id} {b:.3}"));
        }
        parts.push(text);
    }
    Ok(Verdict::check(ok, format!("{} (loss <= 0.05, baselines < 0.3)", parts.join("; "))))
}

fn c4() -> Outcome {
    let s = run(&config(Regime::SwitchFeature, &[ExplainerId::Contralsp], &SEEDS))?;
    let t = s.target.as_ref().ok_or("no target info")?;
    let aup = mean(&s, ExplainerId::Contralsp, "aup")?;
    let aur = mean(&s, ExplainerId::Contralsp, "aur")?;
    let detail = format!(
        "AUP {aup:.3} (need >= 0.90), AUR {aur:.3} (need >= 0.65); target clean agreement {:.3}, label accuracy {:.3}, Bayes {:.3}",
        t.clean_agreement, t.label_accuracy, t.bayes_accuracy
    );
    if !t.gate_passed {
        return Ok(Verdict {
            status: Status::Blocked,
            detail: format!("blocked by target: {detail}"),
        });
    }
    Ok(Verdict::check(aup >= 0.90 && aur >= 0.65, detail))
}

fn c5() -> Outcome {
    let toggles = [Toggle::NoTriplet, Toggle::NoTrend, Toggle::Both];
    let mut ok = true;
    let mut parts = Vec::new();
    for regime in [Regime::SwitchFeature, Regime::State] {
        let base = config(regime, &[ExplainerId::Contralsp], &ABLATION_SEEDS);
        let table = run_ablation(&base, &toggles, &RunOptions::default()).map_err(|e| e.to_string())?;
        if let Some(v) = table.variants.iter().find(|v| v.partial) {
            return Err(format!("{regime} {} has failed seeds", v.label));
        }
        let full = table.variant("full").and_then(|v| v.mean("aup")).ok_or("missing full row")?;
        let mut text = format!("{regime}: full {full:.3}");
        for v in table.variants.iter().filter(|v| v.label != "full") {
            let a = v.mean("aup").ok_or("missing aup")?;
            ok &= full >= a - 0.02;
            text.push_str(&format!(", {} {a:.3}", v.label));
        }
        parts.push(text);
    }
    Ok(Verdict::check(ok, format!("mean AUP over 3 seeds: {}", parts.join("; "))))
}

fn c6() -> Outcome {
    let mut r = StdRng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let delta = r.gen_range(0.1..1.0);
        let mu: Tensor<f64> = Tensor::from_fn(&[1, 8, 5], |_| r.gen_range(-1.5 * delta..1.5 * delta));
        let normal = Normal::<f64>::new(0.0, delta).map_err(|e| e.to_string())?;
        let draws = 100_000;
        let mut open = 0u64;
        for _ in 0..draws {
            // ℓ0 count of the clamped noisy gate.
            open += mu.data().iter().filter(|&&m| (m + normal.sample(&mut r)).clamp(0.0, 1.0) > 0.0).count() as u64;
        }
        let mc = open as f64 / draws as f64;
        let exact = reg_term(&mu, delta).map_err(|e| e.to_string())?;
        worst = worst.max((mc - exact).abs() / exact);
    }
    Ok(Verdict::check(
        worst < 0.005,
        format!("worst relative error {worst:.2e} over 20 settings at 1e5 draws (need < 5e-3)"),
    ))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut StdRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// Values at least 1e-3 away from every kink.
fn off_kinks(shape: &[usize], kinks: &[f64], r: &mut StdRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = r.gen_range(-2.0..2.0);
        if kinks.iter().all(|k| (v - k).abs() > 1e-3) {
            break v;
        }
    })
}

fn weighted_sum(g: &mut Graph<f64>, v: Var) -> contralsp_core::Result<Var> {
    let shape = g.shape(v).to_vec();
    let w = g.constant(Tensor::from_fn(&shape, |i| 0.3 + 0.1 * ((i * 7) % 11) as f64));
    let p = g.mul(v, w)?;
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> contralsp_core::Result<Var>>;
type Kernel = (&'static str, Box<dyn Fn(&mut StdRng) -> Vec<Tensor<f64>>>, Build);

fn unary(name: &'static str, lo: f64, hi: f64, kinks: &'static [f64], op: fn(&mut Graph<f64>, Var) -> contralsp_core::Result<Var>) -> Kernel {
    (
        name,
        Box::new(move |r| {
            vec![if kinks.is_empty() {
                uniform(&[3, 4], lo, hi, r)
            } else {
                off_kinks(&[3, 4], kinks, r)
            }]
        }),
        Box::new(move |g, v| {
            let y = op(g, v[0])?;
            weighted_sum(g, y)
        }),
    )
}

fn binary(name: &'static str, op: fn(&mut Graph<f64>, Var, Var) -> contralsp_core::Result<Var>) -> Kernel {
    (
        name,
        Box::new(|r| {
            let shapes: [(&[usize], &[usize]); 3] = [(&[3, 4], &[3, 4]), (&[2, 3, 4], &[4]), (&[2, 1, 4], &[3, 1])];
            let (a, b) = shapes[r.gen_range(0..3)];
            vec![uniform(a, -2.0, 2.0, r), uniform(b, 0.5, 2.0, r)]
        }),
        Box::new(move |g, v| {
            let y = op(g, v[0], v[1])?;
            weighted_sum(g, y)
        }),
    )
}

fn kernels() -> Vec<Kernel> {
    vec![
        unary("sigmoid", -4.0, 4.0, &[], |g, v| g.sigmoid(v)),
        unary("tanh", -3.0, 3.0, &[], |g, v| g.tanh(v)),
        unary("relu", 0.0, 0.0, &[0.0], |g, v| g.relu(v)),
        unary("erf", -3.0, 3.0, &[], |g, v| g.erf(v)),
        unary("exp", -3.0, 3.0, &[], |g, v| g.exp(v)),
        unary("log", 0.1, 5.0, &[], |g, v| g.log(v)),
        unary("abs", 0.0, 0.0, &[0.0], |g, v| g.abs(v)),
        unary("square", -3.0, 3.0, &[], |g, v| g.square(v)),
        unary("sqrt", 0.1, 5.0, &[], |g, v| g.sqrt(v)),
        unary("softplus", -6.0, 6.0, &[], |g, v| g.softplus(v)),
        unary("clamp", 0.0, 0.0, &[-0.5, 1.0], |g, v| g.clamp(v, -0.5, 1.0)),
        unary("scale", -3.0, 3.0, &[], |g, v| g.scale(v, -1.7)),
        unary("add_scalar", -3.0, 3.0, &[], |g, v| g.add_scalar(v, 0.25)),
        binary("add", |g, a, b| g.add(a, b)),
        binary("sub", |g, a, b| g.sub(a, b)),
        binary("mul", |g, a, b| g.mul(a, b)),
        binary("div", |g, a, b| g.div(a, b)),
        (
            "matmul",
            Box::new(|r| match r.gen_range(0..3) {
                0 => vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[4, 2], -1.0, 1.0, r)],
                1 => vec![uniform(&[2, 3, 4], -1.0, 1.0, r), uniform(&[4, 5], -1.0, 1.0, r)],
                _ => vec![uniform(&[2, 3, 4], -1.0, 1.0, r), uniform(&[2, 4, 3], -1.0, 1.0, r)],
            }),
            Box::new(|g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y)
            }),
        ),
        (
            "structural",
            Box::new(|r| {
                vec![
                    uniform(&[2, 3, 4], -1.0, 1.0, r),
                    uniform(&[2, 2, 4], -1.0, 1.0, r),
                    uniform(&[3, 1], -1.0, 1.0, r),
                ]
            }),
            Box::new(|g, v| {
                let cat = g.concat(&[v[0], v[1]], 1)?;
                let sl = g.slice(cat, 1, 1, 4)?;
                let pm = g.permute(sl, &[2, 0, 1])?;
                let sa = g.sum_axis(pm, 1)?;
                let ma = g.mean_axis(sa, 0)?;
                let rs = g.reshape(ma, &[3, 1])?;
                let bc = g.broadcast_to(v[2], &[3, 5])?;
                let prod = g.mul(bc, rs)?;
                let gr = g.gather_rows(prod, &[2, 0, 2])?;
                let st = g.stack(&[gr, gr], 0)?;
                let m = g.mean(st)?;
                let s = weighted_sum(g, sa)?;
                g.add(m, s)
            }),
        ),
        (
            "gru_cell",
            Box::new(|r| {
                vec![
                    uniform(&[2, 3, 9], -1.0, 1.0, r),
                    uniform(&[2, 3], -1.0, 1.0, r),
                    uniform(&[3, 9], -0.8, 0.8, r),
                ]
            }),
            Box::new(|g, v| {
                let mut h = v[1];
                for step in 0..3 {
                    h = g.gru_cell(v[0], step, h, v[2])?;
                }
                weighted_sum(g, h)
            }),
        ),
    ]
}

/// Largest relative error between analytic and central-difference
/// gradients of the full explainer objective at 20 random parameters.
fn objective_error(model: &dyn PredictModel<f64>, x: &Tensor<f64>, cfg: &ContraConfig, seed: u64) -> contralsp_core::Result<f64> {
    let shape = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let state = MaskState::<f64>::init(shape, cfg, seed);
    let noise = gate_noise(x.shape(), cfg.delta, seed, 0)?;
    let grads = objective_gradients(&state, x, model, &noise, cfg, seed)?;
    let mut r = StdRng::seed_from_u64(seed ^ 0x5eed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let which = r.gen_range(0..grads.len());
        let k = r.gen_range(0..grads[which].numel());
        let eval = |shift: f64| {
            let mut s = state.clone();
            let target = match which {
                0 => &mut s.mu,
                1..=4 => s.trend.tensors_mut().swap_remove(which - 1),
                _ => &mut s.perturb.params[which - 5],
            };
            target.data_mut()[k] += shift;
            objective_value(&s, x, model, &noise, cfg, seed)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let analytic = grads[which].data()[k];
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
    }
    Ok(worst)
}

fn c7() -> Outcome {
    let mut kernel_worst = (0.0f64, "");
    for (name, make, build) in kernels() {
        for trial in 0..100 {
            let mut r = StdRng::seed_from_u64(7000 + trial);
            let report = check_all(&make(&mut r), 1e-5, 1e-6, &build).map_err(|e| format!("{name}: {e}"))?;
            if report.max_rel_err > kernel_worst.0 {
                kernel_worst = (report.max_rel_err, name);
            }
        }
    }
    let mut composite: f64 = 0.0;
    for trial in 0..100u64 {
        let mut r = StdRng::seed_from_u64(8000 + trial);
        let (n, t, d) = (r.gen_range(4..8), r.gen_range(3..6), r.gen_range(2..4));
        let x = uniform(&[n, t, d], -1.5, 1.5, &mut r);
        let cfg = ContraConfig {
            epochs: 1,
            alpha: r.gen_range(0.1..2.0),
            beta: r.gen_range(0.1..2.0),
            delta: r.gen_range(0.2..1.0),
            perturb: if trial % 2 == 0 { PerturbKind::BiGru } else { PerturbKind::Mlp },
            perturb_hidden: Some(3),
            trend_hidden: 4,
            trend: trial % 5 != 4,
            distance: [Distance::Manhattan, Distance::Euclidean, Distance::Cosine][(trial % 3) as usize],
            reg_reduction: if trial % 7 == 0 { Reduction::Sum } else { Reduction::Mean },
            ..ContraConfig::default()
        };
        let err = if trial % 2 == 0 {
            let mut truth = TruthMask::empty(n, t, d);
            for i in 0..n {
                truth.set(i, r.gen_range(0..t), r.gen_range(0..d), true);
            }
            let group = (0..n).map(|_| r.gen_range(1..=2)).collect();
            let wb = Whitebox::new(truth, group).map_err(|e| e.to_string())?;
            objective_error(&wb, &x, &cfg, trial)
        } else {
            let gru = GruClassifier::new(GruParams::<f64>::init(d, 4, trial)).map_err(|e| e.to_string())?;
            objective_error(&gru, &x, &cfg, trial)
        }
        .map_err(|e| format!("objective trial {trial}: {e}"))?;
        composite = composite.max(err);
    }
    Ok(Verdict::check(
        kernel_worst.0 < 1e-4 && composite < 1e-3,
        format!(
            "kernels worst {:.2e} ({}) over 100 trials each (need < 1e-4); objective worst {composite:.2e} over 100 trials (need < 1e-3)",
            kernel_worst.0, kernel_worst.1
        ),
    ))
}

fn random_instance(r: &mut StdRng, shape: [usize; 3]) -> (Tensor<f64>, TruthMask) {
    let n: usize = shape.iter().product();
    let mask = Tensor::from_fn(&shape, |_| r.gen::<f64>());
    let mut cells: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
    if !cells.contains(&true) {
        cells[r.gen_range(0..n)] = true;
    }
    (mask, TruthMask::new(shape, cells).expect("shape matches"))
}

/// Per-threshold counting, then the trapezoid over the uniform grid.
fn brute_areas(mask: &Tensor<f64>, truth: &TruthMask) -> (f64, f64) {
    let (mut prec, mut rec) = (Vec::new(), Vec::new());
    for k in 1..100 {
        let th = k as f64 / 100.0;
        let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
        for (c, &m) in mask.data().iter().enumerate() {
            match (m > th, truth.cells()[c]) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
        if tp + fp > 0.0 {
            prec.push(tp / (tp + fp));
        }
        rec.push(tp / (tp + fnn));
    }
    let area = |v: &[f64]| match v.len() {
        0 => 0.0,
        1 => v[0],
        m => (1..m).map(|i| 0.5 * (v[i] + v[i - 1])).sum::<f64>() / (m - 1) as f64,
    };
    (area(&prec), area(&rec))
}

/// Substitution scores recomputed with explicit loops: cells chosen by
/// repeated arg-max, fills from the sample's own feature means.
fn brute_substitution(model: &dyn PredictModel<f64>, x: &Tensor<f64>, mask: &Tensor<f64>, q: f64, mode: Substitution) -> [f64; 4] {
    let (n, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = (q * (t * d) as f64).floor() as usize;
    let mut removed = x.clone();
    let mut kept = x.clone();
    for i in 0..n {
        let mut taken = vec![false; t * d];
        for _ in 0..k {
            let mut best = None;
            for c in 0..t * d {
                let v = mask.at(&[i, c / d, c % d]);
                if !taken[c] && best.map_or(true, |(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            taken[best.expect("cells left").0] = true;
        }
        for c in 0..t * d {
            let (s, f) = (c / d, c % d);
            let fill = match mode {
                Substitution::Zero => 0.0,
                Substitution::Average => (0..t).map(|u| x.at(&[i, u, f])).sum::<f64>() / t as f64,
            };
            if taken[c] {
                removed.set(&[i, s, f], fill);
            } else {
                kept.set(&[i, s, f], fill);
            }
        }
    }
    let p0 = model.predict(x).expect("predict");
    let pr = model.predict(&removed).expect("predict");
    let pk = model.predict(&kept).expect("predict");
    let m = p0.numel() as f64;
    let mut out = [0.0; 4];
    for j in 0..p0.numel() {
        let (a, b, c) = (p0.data()[j], pr.data()[j], pk.data()[j]);
        let y = a > 0.5;
        let cls = |p: f64| if y { p } else { 1.0 - p };
        let bq = b.clamp(1e-12, 1.0 - 1e-12);
        out[0] += f64::from(u8::from((b > 0.5) == y)) / m;
        out[1] += (a * (a / bq).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - bq)).ln()) / m;
        out[2] += (cls(a) - cls(c)) / m;
        out[3] += (cls(a) - cls(b)) / m;
    }
    out
}

fn c8() -> Outcome {
    let mut r = StdRng::seed_from_u64(8);
    let (mut curve, mut info, mut subst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..60 {
        let shape = [r.gen_range(1..5), r.gen_range(2..6), r.gen_range(1..4)];
        let (mask, truth) = random_instance(&mut r, shape);
        let (aup, aur) = aup_aur(&mask, &truth).map_err(|e| e.to_string())?;
        let (bp, br) = brute_areas(&mask, &truth);
        curve = curve.max((aup - bp).abs()).max((aur - br).abs());

        let (mut im, mut sm) = (0.0, 0.0);
        for (c, &m) in mask.data().iter().enumerate() {
            if truth.cells()[c] {
                let m = m.clamp(1e-6, 1.0 - 1e-6);
                im -= (1.0 - m).ln();
                sm -= m * m.ln() + (1.0 - m) * (1.0 - m).ln();
            }
        }
        let got_im = mask_information(&mask, &truth).map_err(|e| e.to_string())?;
        let got_sm = mask_entropy(&mask, &truth).map_err(|e| e.to_string())?;
        info = info.max((got_im - im).abs()).max((got_sm - sm).abs());

        let (n, t, d) = (r.gen_range(2..5), r.gen_range(3..7), r.gen_range(2..4));
        let x = uniform(&[n, t, d], -2.0, 2.0, &mut r);
        let mask = uniform(&[n, t, d], 0.0, 1.0, &mut r);
        let model = GruClassifier::new(GruParams::<f64>::init(d, 3, trial)).map_err(|e| e.to_string())?;
        let mode = if trial % 2 == 0 { Substitution::Average } else { Substitution::Zero };
        let q = r.gen_range(0.2..0.8);
        let s = substitution_metrics(&model, &x, &mask, q, mode).map_err(|e| e.to_string())?;
        let b = brute_substitution(&model, &x, &mask, q, mode);
        for (got, want) in [s.acc, s.ce, s.suff, s.comp].into_iter().zip(b) {
            subst = subst.max((got - want).abs());
        }
    }
    Ok(Verdict::check(
        curve < 1e-9 && info < 1e-12 && subst < 1e-9,
        format!("60 instances: AUP/AUR {curve:.1e} (need < 1e-9), I_m/S_m {info:.1e} (< 1e-12), substitution {subst:.1e} (< 1e-9)"),
    ))
}

fn c9() -> Outcome {
    let mut violations = Vec::new();
    for batch in 0..100u64 {
        let mut r = StdRng::seed_from_u64(9000 + batch);
        let (n, t, d) = (r.gen_range(6..20), r.gen_range(2..6), r.gen_range(1..4));
        let x = uniform(&[n, t, d], -100.0, 100.0, &mut r);
        let xr = uniform(&[n, t, d], -5.0, 5.0, &mut r);
        let keep = apply_perturbation(&x, &Tensor::ones(&[n, t, d]), &xr).map_err(|e| e.to_string())?;
        let fill = apply_perturbation(&x, &Tensor::zeros(&[n, t, d]), &xr).map_err(|e| e.to_string())?;
        if keep != x || fill != xr {
            violations.push(format!("batch {batch}: blend end points"));
        }

        let cfg = ContraConfig {
            trend: batch % 2 == 0,
            trend_hidden: 4,
            ..ContraConfig::default()
        };
        let mut state = MaskState::<f64>::init([n, t, d], &cfg, batch);
        state.mu = uniform(&[n, t, d], -3.0, 3.0, &mut r);
        let m = infer_mask(&state, &x).map_err(|e| e.to_string())?;
        if !m.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            violations.push(format!("batch {batch}: mask outside [0, 1]"));
        }

        let frac = r.gen_range(0.1..0.9);
        let sel = select_triplets(&xr, TripletCounts::Fraction(frac), batch).map_err(|e| e.to_string())?;
        if sel.triplets.len() != n {
            violations.push(format!("batch {batch}: {} triplet sets for {n} samples", sel.triplets.len()));
        }
        for (i, set) in sel.triplets.iter().enumerate() {
            let own = sel.clustering.members(sel.clustering.labels[i]);
            let other = sel.clustering.members(1 - sel.clustering.labels[i]);
            let k_pos = ((frac * own.len() as f64).floor() as usize).max(1).min(own.len() - 1);
            let k_neg = ((frac * other.len() as f64).floor() as usize).max(1).min(other.len());
            let mut neg = set.negatives.clone();
            neg.sort_unstable();
            neg.dedup();
            let disjoint = set.anchor == i
                && !set.positives.contains(&i)
                && !set.negatives.contains(&i)
                && set.positives.iter().all(|p| !set.negatives.contains(p));
            if !disjoint || set.positives.len() != k_pos || set.negatives.len() != k_neg || neg.len() != k_neg {
                violations.push(format!("batch {batch}: anchor {i}"));
            }
        }
    }
    Ok(Verdict::check(
        violations.is_empty(),
        if violations.is_empty() {
            "blend end points exact, masks in [0, 1], triplet invariants hold on 100 batches".into()
        } else {
            format!("{} violations, first: {}", violations.len(), violations[0])
        },
    ))
}

fn c10() -> Outcome {
    let s = run(&config(Regime::State, &[ExplainerId::Contralsp, ExplainerId::Fo], &SEEDS))?;
    let ours = mean(&s, ExplainerId::Contralsp, "comp")?;
    let fo = mean(&s, ExplainerId::Fo, "comp")?;
    Ok(Verdict::check(ours > fo, format!("State Comp at top 20%: contralsp {ours:.4} vs fo {fo:.4} over 5 seeds")))
}

fn c11() -> Outcome {
    let s = run(&config(Regime::RareTime, &[ExplainerId::Contralsp], &SEEDS))?;
    if s.distribution.len() != SEEDS.len() {
        return Err(format!("{} distribution reports for {} seeds", s.distribution.len(), SEEDS.len()));
    }
    let avg = |f: &dyn Fn(&contralsp_harness::experiment::DistributionReport) -> f64| {
        s.distribution.iter().map(f).sum::<f64>() / s.distribution.len() as f64
    };
    let (kde, kde_shift) = (avg(&|d| d.learned.kde_score), avg(&|d| d.shifted.kde_score));
    let (kl, kl_mean, kl_zero) = (avg(&|d| d.learned.kl), avg(&|d| d.mean.kl), avg(&|d| d.zero.kl));
    Ok(Verdict::check(
        kde > kde_shift && kl < kl_mean,
        format!(
            "KDE-score learned {kde:.2} vs +10σ shift {kde_shift:.2}; KL learned {kl:.4} vs mean fill {kl_mean:.4} (zero fill {kl_zero:.4})"
        ),
    ))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    contralsp_harness::tune_allocator();
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "rare-observation reproduction", c1),
        (2, "rare-time reproduction", c2),
        (3, "diffgroups robustness", c3),
        (4, "switch-feature soft target", c4),
        (5, "ablation ordering", c5),
        (6, "regularizer identity", c6),
        (7, "gradient correctness", c7),
        (8, "metric oracle equivalence", c8),
        (9, "perturbation identities", c9),
        (10, "state substitution comprehensiveness", c10),
        (11, "distribution analysis", c11),
    ];
    let only: Option<Vec<u32>> = std::env::var("CONTRALSP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("CONTRALSP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    println!("acceptance results in {}", root().display());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("SKIP {id:>2} {name}: not selected by CONTRALSP_ACCEPTANCE_ONLY");
            continue;
        }
        let started = Instant::now();
        let (label, detail) = match f() {
            Ok(v) => match v.status {
                Status::Pass => ("PASS", v.detail),
                Status::Fail => ("FAIL", v.detail),
                Status::Blocked => ("BLOCKED", v.detail),
            },
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if label == "FAIL" {
            failed += 1;
        }
        println!("{label} {id:>2} {name}: {detail} [{:.0}s]", started.elapsed().as_secs_f64());
    }
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
