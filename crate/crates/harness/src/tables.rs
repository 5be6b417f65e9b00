//! Markdown renderings of experiment and ablation results.

use std::fmt::Write as _;

use crate::ablation::AblationTable;
use crate::experiment::ExperimentSummary;

fn cell(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

/// One row per explainer, one column per metric, `mean ± std` over seeds.
pub fn summary_markdown(s: &ExperimentSummary) -> String {
    let mut metrics: Vec<&str> = Vec::new();
    for e in &s.explainers {
        for r in &e.aggregate {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
    }
    let mut out = format!("## {}\n\n| explainer | seeds |", s.regime);
    for m in &metrics {
        let _ = write!(out, " {m} |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(metrics.len()));
    out.push('\n');
    for e in &s.explainers {
        let _ = write!(out, "| {} | {} |", e.explainer, e.reports.len());
        for m in &metrics {
            match e.aggregate.iter().find(|r| r.metric == *m) {
                Some(r) => {
                    let _ = write!(out, " {} |", cell(r.mean, r.std));
                }
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    if let Some(t) = &s.target {
        let _ = write!(
            out,
            "\nTarget: label accuracy {:.3} (Bayes {:.3}), clean agreement {:.3}, gate {}.\n",
            t.label_accuracy,
            t.bayes_accuracy,
            t.clean_agreement,
            if t.gate_passed { "passed" } else { "failed" }
        );
    }
    if !s.distribution.is_empty() {
        let n = s.distribution.len() as f64;
        let avg = |f: &dyn Fn(&crate::experiment::DistributionReport) -> f64| {
            s.distribution.iter().map(f).sum::<f64>() / n
        };
        out.push_str("\n| perturbation | KDE-score | KL |\n|---|---|---|\n");
        let rows: [(&str, f64, f64); 4] = [
            ("learned", avg(&|d| d.learned.kde_score), avg(&|d| d.learned.kl)),
            ("zero", avg(&|d| d.zero.kde_score), avg(&|d| d.zero.kl)),
            ("mean", avg(&|d| d.mean.kde_score), avg(&|d| d.mean.kl)),
            ("shifted +10σ", avg(&|d| d.shifted.kde_score), avg(&|d| d.shifted.kl)),
        ];
        for (name, kde, kl) in rows {
            let _ = writeln!(out, "| {name} | {kde:.3} | {kl:.4} |");
        }
    }
    if s.partial {
        out.push_str("\nPartial run; failed seeds:\n");
        for f in &s.failures {
            let _ = writeln!(out, "- {} seed {}: {}", f.explainer, f.seed, f.error);
        }
    }
    out
}

/// One row per variant with the four ground-truth metrics.
pub fn ablation_markdown(t: &AblationTable) -> String {
    const METRICS: [&str; 4] = ["aup", "aur", "i_m", "s_m"];
    let mut out = format!("## {} ablation\n\n| variant | seeds |", t.regime);
    for m in METRICS {
        let _ = write!(out, " {m} |");
    }
    out.push_str("\n|---|---|---|---|---|---|\n");
    for v in &t.variants {
        let _ = write!(out, "| {} | {} |", v.label, v.n_seeds());
        for m in METRICS {
            match v.row(m) {
                Some(r) => {
                    let _ = write!(out, " {} |", cell(r.mean, r.std));
                }
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    out
}
