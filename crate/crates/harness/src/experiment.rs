//! One regime, several explainers, several seeds.

use std::path::{Path, PathBuf};

use contralsp_core::datagen::{generate, Dataset, Regime, TruthMask};
use contralsp_core::explainers::{
    apply_perturbation, baseline_afo, baseline_fo, baseline_ig, fit_contralsp, infer_mask, perturbation, ContraConfig,
    ExplainerId, FitOutcome, SaliencyMap, IG_STEPS,
};
use contralsp_core::gradcore::Tensor;
use contralsp_core::metrics::{
    aggregate, distribution_analysis, substitute, substitution_metrics, AggregateRow, DistributionScores,
    MetricsReport, Substitution, SubstitutionEntry,
};
use contralsp_core::models::{GruClassifier, PredictModel, Whitebox};
use contralsp_core::rng::{derive_named, rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{content_key, load_or_train_target, read_json, write_json, Store, TargetInfo};
use crate::config::{ExperimentConfig, SubstitutionSettings};
use crate::error::{HarnessError, Result};
use crate::heatmap::write_heatmap;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Ignore cached seed results; trained targets are still reused.
    pub fresh: bool,
}

/// Data, target and ground truth for one seed.
pub struct SeedData {
    pub seed: u64,
    /// Rows of the source dataset that are explained.
    pub indices: Vec<usize>,
    pub x: Tensor<f64>,
    pub truth: TruthMask,
    pub model: Box<dyn PredictModel<f64>>,
}

/// Shared state of a run: the classification dataset and target, if any.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub contra: ContraConfig,
    pub store: Store,
    pub shared: Option<(Dataset, GruClassifier<f64>, TargetInfo)>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let store = Store::new(config.cache_dir());
        let shared = if config.regime.is_classification() {
            let ds = generate(config.regime, config.data_seed)?;
            let (model, info) = load_or_train_target(&store, &ds, &config.target)?;
            if !info.gate_passed {
                log::warn!(
                    "target quality gate failed: clean agreement {:.3} (train accuracy {:.3})",
                    info.clean_agreement,
                    info.train_accuracy
                );
            }
            Some((ds, model, info))
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            contra: config.contra_config()?,
            store,
            shared,
        })
    }

    pub fn target(&self) -> Option<&TargetInfo> {
        self.shared.as_ref().map(|(_, _, info)| info)
    }

    pub fn seed_data(&self, seed: u64) -> Result<SeedData> {
        match &self.shared {
            None => {
                let ds = generate(self.config.regime, seed)?;
                let model = Whitebox::for_dataset(&ds)?;
                Ok(SeedData {
                    seed,
                    indices: (0..ds.len()).collect(),
                    x: ds.x,
                    truth: ds.truth,
                    model: Box::new(model),
                })
            }
            Some((ds, model, _)) => {
                let k = self.config.explain_count(ds.len());
                let mut indices =
                    rand::seq::index::sample(&mut rng(derive_named(seed, "explain-subset")), ds.len(), k).into_vec();
                indices.sort_unstable();
                Ok(SeedData {
                    seed,
                    x: ds.x.rows(&indices)?,
                    truth: ds.truth.rows(&indices)?,
                    indices,
                    model: Box::new(model.clone()),
                })
            }
        }
    }

    fn result_key(&self, explainer: ExplainerId, seed: u64) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            kind: &'static str,
            version: &'static str,
            regime: Regime,
            explainer: ExplainerId,
            seed: u64,
            contra: Option<&'a ContraConfig>,
            target: Option<&'a str>,
            explain_samples: Option<usize>,
            substitution: Option<&'a SubstitutionSettings>,
            distribution: bool,
        }
        let contralsp = explainer == ExplainerId::Contralsp;
        content_key(&Key {
            kind: "seed-result",
            version: env!("CARGO_PKG_VERSION"),
            regime: self.config.regime,
            explainer,
            seed,
            contra: contralsp.then_some(&self.contra),
            target: self.target().map(|t| t.key.as_str()),
            explain_samples: self.config.regime.is_classification().then(|| {
                self.config.explain_count(self.shared.as_ref().map_or(0, |(ds, _, _)| ds.len()))
            }),
            substitution: self.config.substitution.as_ref(),
            distribution: contralsp && self.config.distribution,
        })
    }
}

/// A saliency map and, for the learned explainer, the fit that produced it.
pub struct Explanation {
    pub explainer: ExplainerId,
    pub mask: Tensor<f64>,
    pub fit: Option<FitOutcome<f64>>,
}

pub fn explain(
    explainer: ExplainerId,
    data: &SeedData,
    contra: &ContraConfig,
) -> Result<Explanation> {
    let model = data.model.as_ref();
    let (mask, fit) = match explainer {
        ExplainerId::Contralsp => {
            let fit = fit_contralsp(&data.x, model, contra, data.seed)?;
            for note in &fit.notes {
                log::info!("seed {}: {note}", data.seed);
            }
            (infer_mask(&fit.state, &data.x)?, Some(fit))
        }
        ExplainerId::Fo => (baseline_fo(model, &data.x)?.into_tensor(), None),
        ExplainerId::Afo => (baseline_afo(model, &data.x, data.seed)?.into_tensor(), None),
        ExplainerId::Ig => (baseline_ig(model, &data.x, IG_STEPS)?.into_tensor(), None),
    };
    Ok(Explanation { explainer, mask, fit })
}

/// Perturbed inputs `Φ(x, m, fill)` for the learned fill and its controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub seed: u64,
    /// Counterfactuals from the perturbation network.
    pub learned: DistributionScores,
    pub zero: DistributionScores,
    /// Per-sample temporal mean of each feature.
    pub mean: DistributionScores,
    /// `x + 10σ` with σ the per-feature standard deviation.
    pub shifted: DistributionScores,
}

pub fn shifted_control(x: &Tensor<f64>, sigmas: f64) -> Tensor<f64> {
    let d = *x.shape().last().unwrap_or(&1);
    let rows = (x.numel() / d.max(1)) as f64;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for (k, &v) in x.data().iter().enumerate() {
        mean[k % d] += v / rows;
    }
    for (k, &v) in x.data().iter().enumerate() {
        sq[k % d] += (v - mean[k % d]).powi(2) / rows;
    }
    let mut out = x.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        *v += sigmas * sq[k % d].sqrt();
    }
    out
}

pub fn distribution_report(seed: u64, x: &Tensor<f64>, mask: &Tensor<f64>, xr: &Tensor<f64>) -> Result<DistributionReport> {
    let (n, len) = (x.shape()[0], x.numel() / x.shape()[0].max(1));
    let every: Vec<Vec<usize>> = vec![(0..len).collect(); n];
    let fills = [
        xr.clone(),
        Tensor::zeros(x.shape()),
        substitute(x, &every, Substitution::Average, false)?,
    ];
    let mut scores = Vec::new();
    for fill in &fills {
        scores.push(distribution_analysis(x, &apply_perturbation(x, mask, fill)?)?);
    }
    Ok(DistributionReport {
        seed,
        learned: scores[0],
        zero: scores[1],
        mean: scores[2],
        shifted: distribution_analysis(x, &shifted_control(x, 10.0))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SeedResult {
    report: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distribution: Option<DistributionReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub explainer: ExplainerId,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerSummary {
    pub explainer: ExplainerId,
    pub reports: Vec<MetricsReport>,
    pub aggregate: Vec<AggregateRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub regime: Regime,
    pub seeds: Vec<u64>,
    pub explainers: Vec<ExplainerSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distribution: Vec<DistributionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetInfo>,
    pub failures: Vec<SeedFailure>,
    /// True when some seed failed; aggregates cover completed seeds only.
    pub partial: bool,
}

impl ExperimentSummary {
    pub fn explainer(&self, id: ExplainerId) -> Option<&ExplainerSummary> {
        self.explainers.iter().find(|e| e.explainer == id)
    }

    /// Mean of `metric` over the completed seeds of `id`.
    pub fn mean(&self, id: ExplainerId, metric: &str) -> Option<f64> {
        self.explainer(id)?.aggregate.iter().find(|r| r.metric == metric).map(|r| r.mean)
    }

    /// Per-seed values of `metric` for `id`, in seed order.
    pub fn values(&self, id: ExplainerId, metric: &str) -> Vec<f64> {
        self.explainer(id).map_or_else(Vec::new, |e| {
            e.reports
                .iter()
                .filter_map(|r| r.values().into_iter().find(|(m, _)| *m == metric).map(|(_, v)| v))
                .collect()
        })
    }
}

fn seed_paths(out: &Path, explainer: ExplainerId, seed: u64) -> (PathBuf, PathBuf) {
    let dir = out.join(explainer.name());
    (dir.join(format!("seed-{seed}.json")), dir.join(format!("seed-{seed}.saliency.csv")))
}

fn export(cfg: &ExperimentConfig, data: &SeedData, exp: &Explanation) -> Result<()> {
    let (_, csv_path) = seed_paths(&cfg.out_dir, exp.explainer, data.seed);
    let dir = csv_path.parent().expect("seed paths live in a directory");
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    if cfg.export.saliency_csv {
        SaliencyMap::new(exp.mask.clone())?.write_csv(&csv_path)?;
        if let Some(fit) = &exp.fit {
            fit.state.save(&dir.join(format!("seed-{}.mask-state.json", data.seed)))?;
        }
    }
    if cfg.export.heatmaps {
        let [n, t, d] = data.truth.shape();
        let len = t * d;
        for i in 0..n.min(cfg.export.heatmap_samples) {
            let path = dir.join(format!("seed-{}-sample-{}.png", data.seed, data.indices[i]));
            let truth = &data.truth.cells()[i * len..(i + 1) * len];
            write_heatmap(&path, &exp.mask.data()[i * len..(i + 1) * len], Some(truth), t, d)?;
        }
    }
    Ok(())
}

fn exports_present(cfg: &ExperimentConfig, data: &SeedData, explainer: ExplainerId) -> bool {
    let (_, csv_path) = seed_paths(&cfg.out_dir, explainer, data.seed);
    let first_heatmap = data
        .indices
        .first()
        .map(|i| csv_path.with_file_name(format!("seed-{}-sample-{i}.png", data.seed)));
    (!cfg.export.saliency_csv || csv_path.exists())
        && (!cfg.export.heatmaps || cfg.export.heatmap_samples == 0 || first_heatmap.is_some_and(|p| p.exists()))
}

fn run_seed_explainer(p: &Prepared, data: &SeedData, explainer: ExplainerId, opts: &RunOptions) -> Result<SeedResult> {
    let cfg = &p.config;
    let key = p.result_key(explainer, data.seed)?;
    if !opts.fresh && exports_present(cfg, data, explainer) {
        if let Some(hit) = p.store.get::<SeedResult>("results", &key) {
            log::info!("{} {} seed {}: cached result", cfg.regime, explainer, data.seed);
            write_json(&seed_paths(&cfg.out_dir, explainer, data.seed).0, &hit.report)?;
            return Ok(hit);
        }
    }
    let started = std::time::Instant::now();
    let exp = explain(explainer, data, &p.contra)?;
    let mut report = MetricsReport::evaluate(cfg.regime, data.seed, explainer, &exp.mask, &data.truth)?;
    if let Some(s) = &cfg.substitution {
        let scores = substitution_metrics(data.model.as_ref(), &data.x, &exp.mask, s.top_q, s.mode)?;
        report.substitution = Some(SubstitutionEntry::new(s.top_q, s.mode, scores));
    }
    let distribution = match (&exp.fit, cfg.distribution) {
        (Some(fit), true) => {
            let xr = perturbation(&fit.state, &data.x)?;
            Some(distribution_report(data.seed, &data.x, &exp.mask, &xr)?)
        }
        _ => None,
    };
    export(cfg, data, &exp)?;
    log::info!(
        "{} {} seed {}: aup {:.3} aur {:.3} in {:.0}s",
        cfg.regime,
        explainer,
        data.seed,
        report.aup,
        report.aur,
        started.elapsed().as_secs_f64()
    );
    let result = SeedResult { report, distribution };
    write_json(&seed_paths(&cfg.out_dir, explainer, data.seed).0, &result.report)?;
    p.store.put("results", &key, &result)?;
    Ok(result)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment_with(config, &RunOptions::default())
}

/// Runs every (seed, explainer) pair, writes per-seed reports and the
/// aggregate tables, and returns the summary. A failing seed is logged and
/// left out of the aggregates; configuration errors abort the whole run.
pub fn run_experiment_with(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let p = Prepared::new(config)?;
    let cfg = &p.config;
    let run_seed = |&seed: &u64| {
            let data = p.seed_data(seed);
            let results = cfg
                .explainers
                .iter()
                .map(|&id| {
                    let r = match &data {
                        Ok(d) => run_seed_explainer(&p, d, id, opts),
                        Err(e) => Err(HarnessError::Config(format!("seed data: {e}"))),
                    };
                    (id, r)
                })
                .collect();
            (seed, results)
    };
    // Worker threads only pay off with more than one core; on glibc they
    // also bypass the allocator tuning of the main thread.
    let per_seed: Vec<(u64, Vec<(ExplainerId, Result<SeedResult>)>)> = if rayon::current_num_threads() > 1 {
        cfg.seeds.par_iter().map(run_seed).collect()
    } else {
        cfg.seeds.iter().map(run_seed).collect()
    };

    let mut failures = Vec::new();
    let mut distribution = Vec::new();
    let mut by_explainer: Vec<(ExplainerId, Vec<MetricsReport>)> =
        cfg.explainers.iter().map(|&id| (id, Vec::new())).collect();
    for (seed, results) in per_seed {
        for (id, r) in results {
            match r {
                Ok(res) => {
                    by_explainer.iter_mut().find(|(e, _)| *e == id).expect("listed").1.push(res.report);
                    distribution.extend(res.distribution);
                }
                Err(e) if e.exit_code() == 2 => return Err(e),
                Err(e) => {
                    log::error!("{} {id} seed {seed} failed: {e}", cfg.regime);
                    failures.push(SeedFailure {
                        seed,
                        explainer: id,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    let explainers = by_explainer
        .into_iter()
        .map(|(explainer, reports)| ExplainerSummary {
            explainer,
            aggregate: aggregate(&reports),
            reports,
        })
        .collect();
    let summary = ExperimentSummary {
        regime: cfg.regime,
        seeds: cfg.seeds.clone(),
        explainers,
        distribution,
        target: p.target().cloned(),
        partial: !failures.is_empty(),
        failures,
    };
    write_summary(&cfg.out_dir, &summary)?;
    Ok(summary)
}

pub fn write_summary(out: &Path, summary: &ExperimentSummary) -> Result<()> {
    write_json(&out.join("summary.json"), summary)?;
    for e in &summary.explainers {
        let path = out.join(e.explainer.name()).join("aggregate.csv");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|err| HarnessError::io(dir, err))?;
        }
        contralsp_core::metrics::write_aggregate_csv(&e.aggregate, &path)?;
    }
    crate::cache::write_file(&out.join("summary.md"), &crate::tables::summary_markdown(summary))
}

pub fn load_summary(out: &Path) -> Result<ExperimentSummary> {
    read_json(&out.join("summary.json"))
}
