use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contralsp_core::datagen::{generate, write_dataset};
use contralsp_harness::cache::{load_or_train_target, Store};
use contralsp_harness::experiment::{explain, load_summary, Prepared};
use contralsp_harness::{run_ablation, run_experiment_with, ExperimentConfig, HarnessError, Result, RunOptions, Toggle};

#[derive(Parser)]
#[command(name = "contralsp", version, about = "Sparse-gate perturbation explanations for time-series models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write PNG heatmaps of explained samples.
    #[arg(long)]
    export_heatmaps: bool,
    /// Recompute seed results even when cached.
    #[arg(long)]
    fresh: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.export.heatmaps |= self.export_heatmaps;
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        RunOptions { fresh: self.fresh }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the datasets the config would use.
    Generate(Common),
    /// Train (or load from cache) the classification target.
    TrainTarget(Common),
    /// Fit the explainers and export saliency maps without scoring them.
    Explain(Common),
    /// Fit, score and tabulate every explainer over the seeds.
    Evaluate(Common),
    /// Compare the learned explainer with components removed or swept.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// `no-triplet`, `no-trend`, `both`, `distance=<kind>` or
        /// `sweep:alpha=a1,a2;beta=b1,b2`. Repeatable.
        #[arg(long = "toggle", required = true)]
        toggles: Vec<String>,
    },
    /// Print the tables of a finished run.
    Report {
        /// Output directory of the run.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.load()?;
            let seeds = if cfg.regime.is_classification() {
                vec![cfg.data_seed]
            } else {
                cfg.seeds.clone()
            };
            for seed in seeds {
                let ds = generate(cfg.regime, seed)?;
                let dir = cfg.out_dir.join("data").join(format!("{}-seed-{seed}", cfg.regime));
                write_dataset(&dir, &ds)?;
                println!("{}", dir.display());
            }
        }
        Command::TrainTarget(c) => {
            let cfg = c.load()?;
            if !cfg.regime.is_classification() {
                return Err(HarnessError::Config(format!("{} uses the white-box target; nothing to train", cfg.regime)));
            }
            let ds = generate(cfg.regime, cfg.data_seed)?;
            let (_, info) = load_or_train_target(&Store::new(cfg.cache_dir()), &ds, &cfg.target)?;
            println!("{}", serde_json::to_string_pretty(&info)?);
        }
        Command::Explain(c) => {
            let mut cfg = c.load()?;
            cfg.export.saliency_csv = true;
            let p = Prepared::new(&cfg)?;
            for &seed in &cfg.seeds {
                let data = p.seed_data(seed)?;
                for &id in &cfg.explainers {
                    let exp = explain(id, &data, &p.contra)?;
                    let path = cfg.out_dir.join(id.name()).join(format!("seed-{seed}.saliency.csv"));
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
                    }
                    contralsp_core::explainers::SaliencyMap::new(exp.mask)?.write_csv(&path)?;
                    println!("{}", path.display());
                }
            }
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let summary = run_experiment_with(&cfg, &c.options())?;
            print!("{}", contralsp_harness::tables::summary_markdown(&summary));
            if summary.partial {
                return Err(HarnessError::Partial(summary.failures.len()));
            }
        }
        Command::Ablate { common, toggles } => {
            let cfg = common.load()?;
            let toggles = toggles.iter().map(|t| t.parse::<Toggle>()).collect::<Result<Vec<_>>>()?;
            let table = run_ablation(&cfg, &toggles, &common.options())?;
            print!("{}", contralsp_harness::tables::ablation_markdown(&table));
        }
        Command::Report { out } => {
            let summary = load_summary(&out)?;
            print!("{}", contralsp_harness::tables::summary_markdown(&summary));
            let ablation = out.join("ablation").join("ablation.md");
            if let Ok(text) = std::fs::read_to_string(&ablation) {
                print!("\n{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    contralsp_harness::tune_allocator();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
