use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use annobudget::dataset::dataset_stats;
use annobudget::experiment::{
    emit_plot_data, read_report_table, run_budget_experiment, run_llm_experiment, select_best_epoch, EpochFiles,
    ExperimentConfig, ManifestEntry, Strategy,
};
use annobudget::folds::{assign_folds, ConceptCategories};
use annobudget::llm::{
    annotate_batch, select_few_shot, AnnotationCache, Annotator, AnnotatorConfig, ConstraintMode, HttpBackend,
    PromptTemplate, PromptVariant,
};
use annobudget::metrics::{concept_ndcgs, ensemble_average, metric_name};
use annobudget::sampling::{budget_curve, sample_random_k, select_top_k, Budget};
use annobudget::{Dataset, ScoreTable};

#[derive(Parser)]
#[command(author, version, about = "Annotation-budget simulation and NDCG evaluation for sentence ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-concept and per-label counts of a dataset.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign concepts to six stratified folds.
    Folds {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON object {concept: 0..3}; one shared category when omitted.
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-concept budgeted selections.
    Sample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "random")]
        strategy: Strategy,
        #[arg(long, value_delimiter = ',', default_value = "100,200,300,400,500,600,700,800,900,1000")]
        k: Vec<Budget>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Ranking scores for the top-k strategy.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Macro NDCG of a score file against gold labels.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,100")]
        cutoffs: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average several score files.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the epoch with the best validation NDCG@10.
    SelectEpoch {
        /// Validation sentences with gold labels.
        #[arg(long)]
        dataset: PathBuf,
        /// Validation score files, one per epoch, in epoch order.
        #[arg(long, num_args = 1.., required = true)]
        epochs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a budget or LLM experiment from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<Budget>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        variant: Option<PromptVariant>,
        #[arg(long)]
        max_in_flight: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate a dataset with an OpenAI-compatible endpoint.
    Annotate {
        #[arg(long)]
        dataset: PathBuf,
        /// Labeled sentences to draw the four few-shot examples from.
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "original")]
        variant: PromptVariant,
        /// Template file; the built-in guidelines for the variant otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 8)]
        max_in_flight: usize,
        #[arg(long, default_value_t = 0)]
        few_shot_seed: u64,
        /// Send a client-projection request instead of a guided choice.
        #[arg(long)]
        no_guided_choice: bool,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Long-form CSV for plotting from a report.json.
    PlotData {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Stats { dataset, out } => {
            let d = Dataset::from_path(&dataset)?;
            let json = serde_json::to_string_pretty(&dataset_stats(&d))?;
            println!("{json}");
            if let Some(out) = out {
                write(&out, "stats.json", &(json + "\n"))?;
            }
        }
        Command::Folds {
            dataset,
            categories,
            seed,
            out,
        } => {
            let d = Dataset::from_path(&dataset)?;
            let cats = match categories {
                Some(p) => ConceptCategories::from_path(p)?,
                None => ConceptCategories::uniform(d.concepts()),
            };
            let folds = assign_folds(d.concepts(), &cats, seed)?;
            let path = write(&out, "folds.json", &(folds.to_json() + "\n"))?;
            eprintln!("wrote {}", path.display());
        }
        Command::Sample {
            dataset,
            strategy,
            k,
            seeds,
            scores,
            out,
        } => {
            let d = Dataset::from_path(&dataset)?;
            let ranking = scores.map(ScoreTable::from_path).transpose()?;
            let dir = out.join("selections");
            for &budget in &k {
                match strategy {
                    Strategy::Random => {
                        for &seed in &seeds {
                            let s = sample_random_k(&d, budget, seed);
                            write(&dir, &format!("k{budget}-seed{seed}.json"), &(s.to_json() + "\n"))?;
                        }
                    }
                    Strategy::TopK => {
                        let Some(ranking) = &ranking else { bail!("--strategy top-k needs --scores") };
                        let s = select_top_k(&d, ranking, budget)?;
                        write(&dir, &format!("k{budget}.json"), &(s.to_json() + "\n"))?;
                    }
                    Strategy::Llm => bail!("the llm strategy does not sample; use `annotate`"),
                }
            }
            let mut csv = String::from("k,sentences\n");
            for (budget, total) in budget_curve(&d, &k)? {
                csv.push_str(&format!("{budget},{total}\n"));
            }
            write(&out, "budget_curve.csv", &csv)?;
            print!("{csv}");
        }
        Command::Evaluate {
            dataset,
            scores,
            cutoffs,
            out,
        } => {
            let d = Dataset::from_path(&dataset)?;
            let s = ScoreTable::from_path(&scores)?;
            let mut report = serde_json::Map::new();
            for &c in &cutoffs {
                let per_concept = concept_ndcgs(&d, &s, c, d.concepts())?;
                if per_concept.is_empty() {
                    bail!("dataset has no concepts");
                }
                let mean = per_concept.values().map(|e| e.ndcg).sum::<f64>() / per_concept.len() as f64;
                println!("{}\t{mean}", metric_name(c));
                report.insert(
                    metric_name(c),
                    serde_json::json!({ "macro": mean, "per_concept": per_concept }),
                );
            }
            if let Some(out) = out {
                write(&out, "evaluation.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
            }
        }
        Command::Ensemble { scores, out } => {
            let tables = scores
                .iter()
                .map(ScoreTable::from_path)
                .collect::<annobudget::Result<Vec<_>>>()?;
            let mean = ensemble_average(&tables)?;
            let path = write(&out, "ensemble.jsonl", &mean.to_jsonl())?;
            eprintln!("wrote {} ({} sentences)", path.display(), mean.len());
        }
        Command::SelectEpoch { dataset, epochs, out } => {
            let d = Dataset::from_path(&dataset)?;
            let entry = ManifestEntry {
                k: Budget::Full,
                split: 0,
                seed: 0,
                epochs: epochs
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| EpochFiles {
                        epoch: i as u32 + 1,
                        validation: p.clone(),
                        test: p,
                    })
                    .collect(),
            };
            let choice = select_best_epoch(&entry, &d)?;
            println!("epoch {}\tndcg@10 {}", choice.epoch, choice.validation_ndcg);
            if let Some(out) = out {
                let json = serde_json::json!({
                    "epoch": choice.epoch,
                    "validation_ndcg@10": choice.validation_ndcg,
                    "scores": choice.test,
                });
                write(&out, "select_epoch.json", &(serde_json::to_string_pretty(&json)? + "\n"))?;
            }
        }
        Command::Experiment {
            config,
            strategy,
            k,
            seeds,
            cutoffs,
            endpoint,
            model,
            variant,
            max_in_flight,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(v) = strategy {
                cfg.strategy = v;
            }
            if let Some(v) = k {
                cfg.k = v;
            }
            if let Some(v) = seeds {
                cfg.seeds = v;
            }
            if let Some(v) = cutoffs {
                cfg.cutoffs = v;
            }
            if let Some(v) = endpoint {
                cfg.llm.endpoint = v;
            }
            if let Some(v) = model {
                cfg.llm.model = v;
            }
            if let Some(v) = variant {
                cfg.llm.variants = vec![v];
            }
            if let Some(v) = max_in_flight {
                cfg.llm.max_in_flight = v;
            }
            if let Some(v) = out {
                cfg.output = v;
            }
            cfg.validate()?;

            match cfg.strategy {
                Strategy::Llm => {
                    if cfg.llm.endpoint.is_empty() || cfg.llm.model.is_empty() {
                        bail!("the llm strategy needs an endpoint and a model");
                    }
                    let (dataset, folds) = cfg.load_inputs()?;
                    let backend = Arc::new(HttpBackend::from_env(&cfg.llm.endpoint)?);
                    let report = run_llm_experiment(&cfg, &dataset, &folds, backend)?;
                    print!("{}", report.to_csv(&cfg.cutoffs)?);
                    if report.failed() > 0 {
                        eprintln!("{} sentences failed to annotate", report.failed());
                        return Ok(false);
                    }
                }
                Strategy::Random | Strategy::TopK => {
                    let report = run_budget_experiment(&cfg)?;
                    print!("{}", report.table.to_wide_csv()?);
                    eprintln!(
                        "{} grid cells, {} evaluated, {} missing",
                        report.cells,
                        report.runs.len(),
                        report.missing.len()
                    );
                    for m in report.missing.iter().take(20) {
                        eprintln!("  missing: {m}");
                    }
                    if !report.is_complete() {
                        return Ok(false);
                    }
                }
            }
        }
        Command::Annotate {
            dataset,
            train,
            variant,
            template,
            endpoint,
            model,
            max_in_flight,
            few_shot_seed,
            no_guided_choice,
            cache,
            out,
        } => {
            let d = Dataset::from_path(&dataset)?;
            let train = Dataset::from_path(&train)?;
            let few_shot = select_few_shot(&train, few_shot_seed)?;
            if few_shot.overlaps(&d) {
                bail!("few-shot examples overlap the sentences being annotated");
            }
            let template = match template {
                Some(p) => PromptTemplate::from_path(variant, p)?,
                None => PromptTemplate::builtin(variant),
            };
            let mut config = AnnotatorConfig::new(model);
            if no_guided_choice {
                config.mode = ConstraintMode::ClientProjection;
            }
            let cache = AnnotationCache::open(cache.unwrap_or_else(|| out.join("cache").join("annotations.jsonl")))?;
            let backend = Arc::new(HttpBackend::from_env(&endpoint)?);
            let annotator = Annotator::new(backend, config, template, few_shot).with_cache(Arc::new(cache));
            let outcome = annotate_batch(&d, &annotator, max_in_flight)?;
            write(&out, &format!("annotations-{variant}.jsonl"), &outcome.to_jsonl())?;
            write(&out, &format!("llm_scores-{variant}.jsonl"), &outcome.scores.to_jsonl())?;
            let failed = outcome.failures().count();
            eprintln!(
                "annotated {} of {} sentences ({} from cache, {} failed)",
                outcome.scores.len(),
                d.len(),
                outcome.cache_hits(),
                failed
            );
            for (id, e) in outcome.failures().take(20) {
                eprintln!("  {id}: {e}");
            }
            if failed > 0 {
                return Ok(false);
            }
        }
        Command::PlotData { report, out } => {
            let table = read_report_table(&report)?;
            let path = write(&out, "plot_data.csv", &emit_plot_data(&table)?)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
