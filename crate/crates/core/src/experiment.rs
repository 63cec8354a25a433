//! Budget and LLM experiments.
//!
//! The toolkit never trains models. A budget experiment runs in two phases:
//! it first writes one selection manifest per grid cell `(k, split, seed)` for
//! an external trainer, then, once the trainer has produced per-epoch score
//! files for the validation and test concepts, picks the best epoch of every
//! cell by validation NDCG@10 and aggregates test NDCG over splits and seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ScoreTable};
use crate::error::{Error, Result};
use crate::folds::{assign_folds, cv_plan, ConceptCategories, CvSplit, FoldAssignment};
use crate::label::RelevanceLabel;
use crate::llm::{
    annotate_batch, select_few_shot, AnnotationCache, Annotator, AnnotatorConfig, CompletionBackend, ConstraintMode,
    PromptTemplate, PromptVariant,
};
use crate::metrics::{accuracy, aggregate_runs, macro_ndcg, metric_name, weighted_f1, AggregateRow, RunResult};
use crate::sampling::{sample_random_k, select_top_k, Budget, SubsetSelection};

/// Cutoff used to choose among epochs.
pub const SELECTION_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "top-k")]
    TopK,
    #[serde(rename = "llm")]
    Llm,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "top-k" | "topk" => Ok(Strategy::TopK),
            "llm" => Ok(Strategy::Llm),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_cutoffs() -> Vec<usize> {
    vec![10, 100]
}

fn default_max_in_flight() -> usize {
    8
}

fn default_variants() -> Vec<PromptVariant> {
    vec![PromptVariant::Original, PromptVariant::Improved]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_variants")]
    pub variants: Vec<PromptVariant>,
    /// Template file per variant; the built-in guideline text otherwise.
    #[serde(default)]
    pub templates: BTreeMap<PromptVariant, PathBuf>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub few_shot_seed: u64,
    #[serde(default)]
    pub mode: ConstraintMode,
    /// JSON object mapping concept to provision text.
    #[serde(default)]
    pub provisions: Option<PathBuf>,
    /// Defaults to `<output>/cache/annotations.jsonl`.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model: String::new(),
            variants: default_variants(),
            templates: BTreeMap::new(),
            max_in_flight: default_max_in_flight(),
            few_shot_seed: 0,
            mode: ConstraintMode::default(),
            provisions: None,
            cache: None,
        }
    }
}

/// One experiment, read from a JSON document. Relative paths are resolved
/// against the directory of that document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Concept → category map; all concepts share one category when absent.
    #[serde(default)]
    pub categories: Option<PathBuf>,
    /// A precomputed fold assignment; computed from `fold_seed` when absent.
    #[serde(default)]
    pub folds: Option<PathBuf>,
    #[serde(default)]
    pub fold_seed: u64,
    pub strategy: Strategy,
    #[serde(default = "Budget::default_grid")]
    pub k: Vec<Budget>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    /// Scores used to rank training sentences for the top-k strategy.
    #[serde(default)]
    pub ranking_scores: Option<PathBuf>,
    /// Per-epoch score files produced by the external trainer.
    #[serde(default)]
    pub epochs: Option<PathBuf>,
    #[serde(default)]
    pub llm: LlmConfig,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// A config with every default applied.
    pub fn new(dataset: impl Into<PathBuf>, strategy: Strategy, output: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            categories: None,
            folds: None,
            fold_seed: 0,
            strategy,
            k: Budget::default_grid(),
            seeds: default_seeds(),
            cutoffs: default_cutoffs(),
            ranking_scores: None,
            epochs: None,
            llm: LlmConfig::default(),
            output: output.into(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.dataset);
        join(&mut self.output);
        for p in [
            &mut self.categories,
            &mut self.folds,
            &mut self.ranking_scores,
            &mut self.epochs,
            &mut self.llm.provisions,
            &mut self.llm.cache,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        for p in self.llm.templates.values_mut() {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() {
            return Err(Error::Config("empty k grid".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("empty seed list".into()));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::Config("cutoffs must be non-empty and positive".into()));
        }
        if self.llm.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    /// Loads the dataset and the fold assignment.
    pub fn load_inputs(&self) -> Result<(Dataset, FoldAssignment)> {
        let dataset = Dataset::from_path(&self.dataset)?;
        let folds = match &self.folds {
            Some(path) => FoldAssignment::from_path(path)?,
            None => {
                let categories = match &self.categories {
                    Some(path) => ConceptCategories::from_path(path)?,
                    None => ConceptCategories::uniform(dataset.concepts()),
                };
                assign_folds(dataset.concepts(), &categories, self.fold_seed)?
            }
        };
        Ok((dataset, folds))
    }
}

/// One epoch checkpoint of one trained model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochFiles {
    pub epoch: u32,
    pub validation: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub k: Budget,
    pub split: usize,
    pub seed: u64,
    pub epochs: Vec<EpochFiles>,
}

/// Score files of every trained model, keyed by grid cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpochManifest {
    entries: BTreeMap<GridCell, ManifestEntry>,
}

impl EpochManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for entry in entries {
            let cell = GridCell {
                k: entry.k,
                split: entry.split,
                seed: entry.seed,
            };
            if map.insert(cell, entry).is_some() {
                return Err(Error::DuplicateRun(cell.to_string()));
            }
        }
        Ok(EpochManifest { entries: map })
    }

    /// Reads a JSON array of entries; relative paths are resolved against
    /// the manifest's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for entry in &mut entries {
            for e in &mut entry.epochs {
                for p in [&mut e.validation, &mut e.test] {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        EpochManifest::new(entries)
    }

    pub fn get(&self, cell: &GridCell) -> Option<&ManifestEntry> {
        self.entries.get(cell)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.values()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochChoice {
    pub epoch: u32,
    pub validation_ndcg: f64,
    pub test: PathBuf,
}

/// Index of the best validation score; the earliest wins ties.
pub fn best_epoch_index(validation_scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in validation_scores.iter().enumerate() {
        if best.is_none_or(|b| s > validation_scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks the epoch with the highest validation macro NDCG@10.
pub fn select_best_epoch(entry: &ManifestEntry, validation: &Dataset) -> Result<EpochChoice> {
    let mut epochs = entry.epochs.clone();
    epochs.sort_by_key(|e| e.epoch);
    if epochs.is_empty() {
        return Err(Error::Config(format!(
            "no epochs listed for split {} seed {} k {}",
            entry.split, entry.seed, entry.k
        )));
    }
    let mut values = Vec::with_capacity(epochs.len());
    for e in &epochs {
        let scores = ScoreTable::from_path(&e.validation).map_err(|err| {
            Error::Config(format!(
                "split {} seed {} epoch {}: validation scores: {err}",
                entry.split, entry.seed, e.epoch
            ))
        })?;
        values.push(macro_ndcg(validation, &scores, SELECTION_CUTOFF, validation.concepts())?);
    }
    let best = best_epoch_index(&values).expect("non-empty");
    Ok(EpochChoice {
        epoch: epochs[best].epoch,
        validation_ndcg: values[best],
        test: epochs[best].test.clone(),
    })
}

/// One training run of the budget grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub k: Budget,
    pub split: usize,
    pub seed: u64,
}

impl std::fmt::Display for GridCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k={} split={} seed={}", self.k, self.split, self.seed)
    }
}

impl GridCell {
    pub fn file_stem(&self) -> String {
        format!("k{}-split{}-seed{}", self.k, self.split, self.seed)
    }
}

/// Every `(k, split, seed)` combination, in that nesting order.
pub fn enumerate_grid(ks: &[Budget], splits: usize, seeds: &[u64]) -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(ks.len() * splits * seeds.len());
    for &k in ks {
        for split in 0..splits {
            for &seed in seeds {
                cells.push(GridCell { k, split, seed });
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct CellPlan {
    pub cell: GridCell,
    pub split: CvSplit,
    pub selection: SubsetSelection,
}

/// Aggregated rows sorted by budget (numeric, `full` last) then cutoff.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<AggregateRow>,
}

impl ReportTable {
    /// Budgets × `ndcg@c mean, std` columns.
    pub fn to_wide_csv(&self) -> Result<String> {
        let metrics: Vec<String> = {
            let mut seen = Vec::new();
            for r in &self.rows {
                if !seen.contains(&r.metric) {
                    seen.push(r.metric.clone());
                }
            }
            seen
        };
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string()];
        for m in &metrics {
            header.push(m.clone());
            header.push(format!("{m}_std"));
        }
        wtr.write_record(&header)?;
        let budgets: BTreeSet<Budget> = self.rows.iter().map(|r| r.k).collect();
        for k in budgets {
            let mut record = vec![k.to_string()];
            for m in &metrics {
                match self.rows.iter().find(|r| r.k == k && &r.metric == m) {
                    Some(r) => {
                        record.push(r.mean.to_string());
                        record.push(r.std.to_string());
                    }
                    None => record.extend([String::new(), String::new()]),
                }
            }
            wtr.write_record(&record)?;
        }
        csv_string(wtr)
    }
}

fn csv_string(wtr: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = wtr.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Long-form `k,metric,mean,std` CSV at full precision.
pub fn emit_plot_data(report: &ReportTable) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["k", "metric", "mean", "std"])?;
    for row in &report.rows {
        wtr.write_record([row.k.to_string(), row.metric.clone(), row.mean.to_string(), row.std.to_string()])?;
    }
    csv_string(wtr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub k: Budget,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Reads CSV written by [`emit_plot_data`].
pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {:?} in plot data", field(i))))
        };
        rows.push(PlotRow {
            k: field(0).parse()?,
            metric: field(1).to_string(),
            mean: num(2)?,
            std: num(3)?,
        });
    }
    Ok(rows)
}

/// Outcome of a budget experiment.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BudgetReport {
    pub cells: usize,
    pub runs: Vec<RunResult>,
    pub chosen_epochs: BTreeMap<String, u32>,
    /// Cells without usable score files, with the reason.
    pub missing: Vec<String>,
    pub table: ReportTable,
}

impl BudgetReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Phase one: the training selection of every grid cell.
pub fn plan_budget_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    folds: &FoldAssignment,
    ranking_scores: Option<&ScoreTable>,
) -> Result<Vec<CellPlan>> {
    let plan = cv_plan(folds);
    let mut out = Vec::new();
    for cell in enumerate_grid(&cfg.k, plan.len(), &cfg.seeds) {
        let split = plan[cell.split].clone();
        let train = dataset.restrict(folds.concepts_in(&split.train));
        let selection = match cfg.strategy {
            Strategy::Random => sample_random_k(&train, cell.k, cell.seed),
            Strategy::TopK => {
                let scores = ranking_scores
                    .ok_or_else(|| Error::Config("top-k strategy needs ranking_scores".into()))?;
                // trainer seed varies, the selection does not
                let mut s = select_top_k(&train, scores, cell.k)?;
                s.seed = Some(cell.seed);
                s
            }
            Strategy::Llm => return Err(Error::Config("llm strategy has no budget grid".into())),
        };
        out.push(CellPlan { cell, split, selection });
    }
    Ok(out)
}

/// Phase two: choose epochs, score the test concepts, aggregate.
///
/// Budgets whose grid is incomplete are left out of the table and listed in
/// `missing`.
pub fn evaluate_budget_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    folds: &FoldAssignment,
    manifest: &EpochManifest,
) -> Result<BudgetReport> {
    let plan = cv_plan(folds);
    let test = dataset.restrict(folds.test_concepts());
    let cells = enumerate_grid(&cfg.k, plan.len(), &cfg.seeds);
    let mut report = BudgetReport {
        cells: cells.len(),
        ..Default::default()
    };
    for cell in &cells {
        let Some(entry) = manifest.get(cell) else {
            report.missing.push(format!("{cell}: no manifest entry"));
            continue;
        };
        let validation = dataset.restrict(folds.concepts_in(&[plan[cell.split].validation]));
        let outcome = select_best_epoch(entry, &validation).and_then(|choice| {
            let scores = ScoreTable::from_path(&choice.test)?;
            let ndcg = cfg
                .cutoffs
                .iter()
                .map(|&c| Ok((c, macro_ndcg(&test, &scores, c, test.concepts())?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok((choice.epoch, ndcg))
        });
        match outcome {
            Ok((epoch, ndcg)) => {
                report.chosen_epochs.insert(cell.to_string(), epoch);
                report.runs.push(RunResult {
                    k: cell.k,
                    split: cell.split,
                    seed: cell.seed,
                    ndcg,
                });
            }
            Err(e) => {
                warn!("{cell}: {e}");
                report.missing.push(format!("{cell}: {e}"));
            }
        }
    }

    let per_budget = plan.len() * cfg.seeds.len();
    let complete: Vec<RunResult> = cfg
        .k
        .iter()
        .filter(|&&k| report.runs.iter().filter(|r| r.k == k).count() == per_budget)
        .flat_map(|&k| report.runs.iter().filter(move |r| r.k == k).cloned())
        .collect();
    report.table = ReportTable {
        rows: aggregate_runs(&complete)?,
    };
    Ok(report)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs both phases from a config, writing everything under `cfg.output`:
/// `folds.json`, `selections/<cell>.json`, and when an epoch manifest is
/// configured `report.json`, `report.csv`, `report_table.csv`, `plot_data.csv`.
pub fn run_budget_experiment(cfg: &ExperimentConfig) -> Result<BudgetReport> {
    let (dataset, folds) = cfg.load_inputs()?;
    let ranking = cfg.ranking_scores.as_ref().map(ScoreTable::from_path).transpose()?;
    let plans = plan_budget_experiment(cfg, &dataset, &folds, ranking.as_ref())?;

    write_file(&cfg.output.join("folds.json"), &(folds.to_json() + "\n"))?;
    for plan in &plans {
        let path = cfg
            .output
            .join("selections")
            .join(format!("{}.json", plan.cell.file_stem()));
        write_file(&path, &(plan.selection.to_json() + "\n"))?;
    }
    info!("wrote {} selection manifests", plans.len());

    let Some(manifest_path) = &cfg.epochs else {
        return Ok(BudgetReport {
            cells: plans.len(),
            missing: plans.iter().map(|p| format!("{}: no manifest entry", p.cell)).collect(),
            ..Default::default()
        });
    };
    let manifest = EpochManifest::from_path(manifest_path)?;
    let report = evaluate_budget_experiment(cfg, &dataset, &folds, &manifest)?;
    write_budget_report(&report, &cfg.output)?;
    Ok(report)
}

pub fn write_budget_report(report: &BudgetReport, out: &Path) -> Result<()> {
    write_file(&out.join("report.json"), &(serde_json::to_string_pretty(report)? + "\n"))?;
    let plot = emit_plot_data(&report.table)?;
    write_file(&out.join("report.csv"), &plot)?;
    write_file(&out.join("plot_data.csv"), &plot)?;
    write_file(&out.join("report_table.csv"), &report.table.to_wide_csv()?)
}

/// Reads the aggregated table back out of a `report.json`.
pub fn read_report_table(path: impl AsRef<Path>) -> Result<ReportTable> {
    #[derive(Deserialize)]
    struct Partial {
        table: ReportTable,
    }
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str::<Partial>(&text)?.table)
}

/// One row of the LLM experiment table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmReportRow {
    pub variant: PromptVariant,
    pub annotated: usize,
    pub failed: usize,
    pub cache_hits: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// Macro NDCG per cutoff; empty when some sentences failed to annotate.
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LlmReport {
    pub model: String,
    pub test_sentences: usize,
    pub rows: Vec<LlmReportRow>,
}

impl LlmReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().map(|r| r.failed).sum()
    }

    /// `prompt,accuracy,f1,ndcg@…,annotated,failed`.
    pub fn to_csv(&self, cutoffs: &[usize]) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["prompt".to_string(), "accuracy".into(), "f1".into()];
        header.extend(cutoffs.iter().map(|&c| metric_name(c)));
        header.extend(["annotated".to_string(), "failed".into()]);
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.variant.to_string(), row.accuracy.to_string(), row.weighted_f1.to_string()];
            record.extend(cutoffs.iter().map(|c| row.ndcg.get(c).map(f64::to_string).unwrap_or_default()));
            record.extend([row.annotated.to_string(), row.failed.to_string()]);
            wtr.write_record(&record)?;
        }
        csv_string(wtr)
    }
}

/// Annotates the test concepts with every configured prompt variant and
/// scores the result. Few-shot examples come from the CV concepts.
pub fn run_llm_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    folds: &FoldAssignment,
    backend: Arc<dyn CompletionBackend>,
) -> Result<LlmReport> {
    let train = dataset.restrict(folds.cv_concepts());
    let test = dataset.restrict(folds.test_concepts());
    let gold: Vec<RelevanceLabel> = test
        .records()
        .iter()
        .map(|r| r.gold_label.ok_or_else(|| Error::MissingGoldLabel(r.id.clone())))
        .collect::<Result<_>>()?;
    let few_shot = select_few_shot(&train, cfg.llm.few_shot_seed)?;
    if few_shot.overlaps(&test) {
        return Err(Error::Config("few-shot examples overlap the evaluated sentences".into()));
    }
    let provisions: BTreeMap<String, String> = match &cfg.llm.provisions {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)?
        }
        None => BTreeMap::new(),
    };
    let cache_path = cfg
        .llm
        .cache
        .clone()
        .unwrap_or_else(|| cfg.output.join("cache").join("annotations.jsonl"));
    let cache = Arc::new(AnnotationCache::open(&cache_path)?);

    let mut report = LlmReport {
        model: cfg.llm.model.clone(),
        test_sentences: test.len(),
        rows: Vec::new(),
    };
    for &variant in &cfg.llm.variants {
        let template = match cfg.llm.templates.get(&variant) {
            Some(path) => PromptTemplate::from_path(variant, path)?,
            None => PromptTemplate::builtin(variant),
        };
        let mut config = AnnotatorConfig::new(cfg.llm.model.clone());
        config.mode = cfg.llm.mode;
        let annotator = Annotator::new(backend.clone(), config, template, few_shot.clone())
            .with_cache(cache.clone())
            .with_provisions(provisions.clone());
        let outcome = annotate_batch(&test, &annotator, cfg.llm.max_in_flight)?;

        let mut pred = Vec::new();
        let mut matched_gold = Vec::new();
        for ((_, result), &g) in outcome.results.iter().zip(&gold) {
            if let Ok(r) = result {
                pred.push(r.label);
                matched_gold.push(g);
            }
        }
        let failed = outcome.failures().count();
        for (id, e) in outcome.failures().take(5) {
            warn!("{variant}: {id}: {e}");
        }
        let (acc, f1) = if pred.is_empty() {
            (0.0, 0.0)
        } else {
            (accuracy(&pred, &matched_gold)?, weighted_f1(&pred, &matched_gold)?)
        };
        let ndcg = if failed == 0 && !test.is_empty() {
            cfg.cutoffs
                .iter()
                .map(|&c| Ok((c, macro_ndcg(&test, &outcome.scores, c, test.concepts())?)))
                .collect::<Result<BTreeMap<_, _>>>()?
        } else {
            BTreeMap::new()
        };

        write_file(
            &cfg.output.join(format!("annotations-{variant}.jsonl")),
            &outcome.to_jsonl(),
        )?;
        write_file(
            &cfg.output.join(format!("llm_scores-{variant}.jsonl")),
            &outcome.scores.to_jsonl(),
        )?;
        report.rows.push(LlmReportRow {
            variant,
            annotated: pred.len(),
            failed,
            cache_hits: outcome.cache_hits(),
            accuracy: acc,
            weighted_f1: f1,
            ndcg,
        });
    }

    write_file(&cfg.output.join("llm_report.csv"), &report.to_csv(&cfg.cutoffs)?)?;
    // cache hits differ between runs; keep them out of the persisted report
    let mut persisted = serde_json::to_value(&report)?;
    if let Some(rows) = persisted.get_mut("rows").and_then(|r| r.as_array_mut()) {
        for row in rows {
            if let Some(obj) = row.as_object_mut() {
                obj.remove("cache_hits");
            }
        }
    }
    write_file(
        &cfg.output.join("llm_report.json"),
        &(serde_json::to_string_pretty(&persisted)? + "\n"),
    )?;
    Ok(report)
}
