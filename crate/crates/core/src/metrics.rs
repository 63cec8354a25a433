//! Ranking and classification metrics, score ensembling and run aggregation.
//!
//! NDCG follows the graded-relevance definition
//!
//! ```text
//! NDCG(S, k) = (1 / Z_k) * Σ_{i=1..k} rel(s_i) / log2(i + 1)
//! ```
//!
//! with positions 1-based and `Z_k` the DCG of the ideal (descending)
//! arrangement of the same relevances. Lists shorter than `k` are summed over
//! the available positions. When `Z_k = 0` the score is defined as 0.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ScoreTable};
use crate::error::{Error, Result};
use crate::label::RelevanceLabel;
use crate::sampling::{rank_ids, Budget};

/// Discounted cumulative gain over the first `min(k, len)` positions.
pub fn dcg(relevances: &[u8], k: usize) -> f64 {
    relevances
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| f64::from(rel) / ((i + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NdcgEvaluation {
    pub k: usize,
    pub dcg: f64,
    pub ideal_dcg: f64,
    pub ndcg: f64,
    /// Set when the ideal DCG is zero and `ndcg` was defined as 0.
    pub degenerate: bool,
}

/// NDCG@k of a relevance list given in ranked order.
pub fn ndcg_of(relevances: &[u8], k: usize) -> NdcgEvaluation {
    let actual = dcg(relevances, k);
    let mut ideal = relevances.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let ideal_dcg = dcg(&ideal, k);
    let degenerate = ideal_dcg <= 0.0;
    let ndcg = if degenerate {
        0.0
    } else {
        actual / ideal_dcg
    };
    NdcgEvaluation {
        k,
        dcg: actual,
        ideal_dcg,
        ndcg,
        degenerate,
    }
}

/// Sentences of one concept in ranked order with their gold relevances.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub concept: String,
    pub ids: Vec<String>,
    pub relevances: Vec<u8>,
}

impl RankedList {
    pub fn ndcg(&self, k: usize) -> NdcgEvaluation {
        ndcg_of(&self.relevances, k)
    }
}

/// Ranks one concept by descending score (ties by ascending id).
pub fn rank_concept(dataset: &Dataset, scores: &ScoreTable, concept: &str) -> Result<RankedList> {
    if !dataset.contains_concept(concept) {
        return Err(Error::UnknownConcept(concept.to_string()));
    }
    let ranked = rank_ids(dataset, scores, concept)?;
    let mut ids = Vec::with_capacity(ranked.len());
    let mut relevances = Vec::with_capacity(ranked.len());
    for (id, _) in ranked {
        let label = dataset
            .get(id)
            .and_then(|r| r.gold_label)
            .ok_or_else(|| Error::MissingGoldLabel(id.to_string()))?;
        ids.push(id.to_string());
        relevances.push(label.value());
    }
    Ok(RankedList {
        concept: concept.to_string(),
        ids,
        relevances,
    })
}

/// Per-concept NDCG@k in ascending concept order.
pub fn concept_ndcgs<'a>(
    dataset: &Dataset,
    scores: &ScoreTable,
    k: usize,
    concepts: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeMap<String, NdcgEvaluation>> {
    concepts
        .into_iter()
        .map(|c| Ok((c.to_string(), rank_concept(dataset, scores, c)?.ndcg(k))))
        .collect()
}

/// Unweighted mean of per-concept NDCG@k.
pub fn macro_ndcg<'a>(
    dataset: &Dataset,
    scores: &ScoreTable,
    k: usize,
    concepts: impl IntoIterator<Item = &'a str>,
) -> Result<f64> {
    let per_concept = concept_ndcgs(dataset, scores, k, concepts)?;
    if per_concept.is_empty() {
        return Err(Error::Empty("concept list"));
    }
    Ok(per_concept.values().map(|e| e.ndcg).sum::<f64>() / per_concept.len() as f64)
}

/// Macro NDCG@k over every concept of `dataset`.
pub fn dataset_ndcg(dataset: &Dataset, scores: &ScoreTable, k: usize) -> Result<f64> {
    macro_ndcg(dataset, scores, k, dataset.concepts())
}

fn check_aligned(pred: &[RelevanceLabel], gold: &[RelevanceLabel]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    Ok(())
}

/// Fraction of positions where `pred` equals `gold`.
pub fn accuracy(pred: &[RelevanceLabel], gold: &[RelevanceLabel]) -> Result<f64> {
    check_aligned(pred, gold)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Support-weighted mean of per-class F1 over the four labels.
pub fn weighted_f1(pred: &[RelevanceLabel], gold: &[RelevanceLabel]) -> Result<f64> {
    check_aligned(pred, gold)?;
    let mut tp = [0usize; 4];
    let mut predicted = [0usize; 4];
    let mut support = [0usize; 4];
    for (p, g) in pred.iter().zip(gold) {
        predicted[p.index()] += 1;
        support[g.index()] += 1;
        if p == g {
            tp[p.index()] += 1;
        }
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    for c in 0..4 {
        if support[c] == 0 {
            continue;
        }
        let precision = if predicted[c] == 0 { 0.0 } else { tp[c] as f64 / predicted[c] as f64 };
        let recall = tp[c] as f64 / support[c] as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        total += support[c] as f64 / n * f1;
    }
    Ok(total)
}

/// Per-id arithmetic mean of several score tables over identical id sets.
pub fn ensemble_average(tables: &[ScoreTable]) -> Result<ScoreTable> {
    let (first, rest) = tables.split_first().ok_or(Error::Empty("score table list"))?;
    for table in rest {
        if table.len() != first.len() || table.ids().ne(first.ids()) {
            let a: BTreeSet<&str> = first.ids().collect();
            let b: BTreeSet<&str> = table.ids().collect();
            let diff = a.symmetric_difference(&b).next().copied().unwrap_or_default();
            return Err(Error::IdSetMismatch(diff.to_string()));
        }
    }
    let provenance = format!(
        "mean({})",
        tables.iter().map(|t| t.provenance.as_str()).collect::<Vec<_>>().join(", ")
    );
    let n = tables.len() as f64;
    ScoreTable::from_entries(
        provenance,
        first.iter().map(|(id, _)| {
            let sum: f64 = tables.iter().map(|t| t.get(id).expect("id sets checked")).sum();
            (id.to_string(), sum / n)
        }),
    )
}

/// Test-set metrics of one trained model: one budget, one CV split, one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub k: Budget,
    pub split: usize,
    pub seed: u64,
    /// Macro NDCG keyed by cutoff.
    pub ndcg: BTreeMap<usize, f64>,
}

/// Mean and spread of one metric at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub k: Budget,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
    pub splits: usize,
}

pub fn metric_name(cutoff: usize) -> String {
    format!("ndcg@{cutoff}")
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Split-then-seed aggregation.
///
/// For each budget, the split values of each seed are averaged first; the
/// reported mean and population standard deviation are taken over those
/// per-seed averages. Every budget must have a result for every
/// `(split, seed)` pair seen anywhere in `results`.
pub fn aggregate_runs(results: &[RunResult]) -> Result<Vec<AggregateRow>> {
    if results.is_empty() {
        return Ok(Vec::new());
    }
    let splits: BTreeSet<usize> = results.iter().map(|r| r.split).collect();
    let seeds: BTreeSet<u64> = results.iter().map(|r| r.seed).collect();
    let cutoffs: BTreeSet<usize> = results.iter().flat_map(|r| r.ndcg.keys().copied()).collect();

    let mut cells: BTreeMap<(Budget, u64, usize), &RunResult> = BTreeMap::new();
    for r in results {
        if cells.insert((r.k, r.seed, r.split), r).is_some() {
            return Err(Error::DuplicateRun(format!("k={} split={} seed={}", r.k, r.split, r.seed)));
        }
    }
    let budgets: BTreeSet<Budget> = results.iter().map(|r| r.k).collect();

    let mut missing = Vec::new();
    for &k in &budgets {
        for &seed in &seeds {
            for &split in &splits {
                match cells.get(&(k, seed, split)) {
                    None => missing.push(format!("k={k} split={split} seed={seed}")),
                    Some(r) => {
                        for c in &cutoffs {
                            if !r.ndcg.contains_key(c) {
                                missing.push(format!("k={k} split={split} seed={seed} {}", metric_name(*c)));
                            }
                        }
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }

    let mut rows = Vec::new();
    for &k in &budgets {
        for &cutoff in &cutoffs {
            let per_seed: Vec<f64> = seeds
                .iter()
                .map(|&seed| {
                    let split_values: Vec<f64> = splits.iter().map(|&split| cells[&(k, seed, split)].ndcg[&cutoff]).collect();
                    mean(&split_values)
                })
                .collect();
            rows.push(AggregateRow {
                k,
                metric: metric_name(cutoff),
                mean: mean(&per_seed),
                std: population_std(&per_seed),
                seeds: seeds.len(),
                splits: splits.len(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RelevanceLabel::*;

    const TOL: f64 = 1e-9;

    #[test]
    fn dcg_values() {
        assert!((dcg(&[3], 1) - 3.0).abs() < TOL);
        assert!((dcg(&[0, 3], 2) - 3.0 / 3f64.log2()).abs() < TOL);
        assert!((dcg(&[0, 3], 2) - 1.892_789_260_714_372).abs() < 1e-12);
        assert_eq!(dcg(&[], 10), 0.0);
        assert_eq!(dcg(&[3, 3], 0), 0.0);
    }

    #[test]
    fn ndcg_values() {
        assert!((ndcg_of(&[3, 2, 1, 0], 4).ndcg - 1.0).abs() < TOL);
        let e = ndcg_of(&[0, 3], 2);
        assert!((e.dcg - 1.892_789).abs() < 1e-6);
        assert!((e.ideal_dcg - 3.0).abs() < TOL);
        assert!((e.ndcg - 0.630_930).abs() < 1e-6);
        let zero = ndcg_of(&[0, 0, 0], 3);
        assert_eq!(zero.ndcg, 0.0);
        assert!(zero.degenerate);
    }

    #[test]
    fn short_list_truncates() {
        // fewer sentences than k: ideal uses the same items
        assert!((ndcg_of(&[2, 3], 10).ndcg - (2.0 + 3.0 / 3f64.log2()) / (3.0 + 2.0 / 3f64.log2())).abs() < TOL);
        assert_eq!(ndcg_of(&[3], 10).ndcg, 1.0);
        assert_eq!(ndcg_of(&[0], 10).ndcg, 0.0);
    }

    #[test]
    fn accuracy_and_f1_identity() {
        let gold = [NoValue, HighValue, CertainValue, PotentialValue];
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        assert!((weighted_f1(&gold, &gold).unwrap() - 1.0).abs() < TOL);
    }

    #[test]
    fn accuracy_half() {
        let pred = [NoValue; 4];
        let gold = [NoValue, NoValue, HighValue, HighValue];
        assert_eq!(accuracy(&pred, &gold).unwrap(), 0.5);
    }

    #[test]
    fn weighted_f1_three_classes() {
        // gold: 3×no, 2×potential, 1×high
        // pred: no,no,potential | potential,no | potential
        // no:        tp=2 pred=3 sup=3 -> P=2/3 R=2/3 F=2/3
        // potential: tp=1 pred=3 sup=2 -> P=1/3 R=1/2 F=2/5
        // high:      tp=0 pred=0 sup=1 -> F=0
        // weighted = 3/6*2/3 + 2/6*2/5 + 1/6*0 = 1/3 + 2/15 = 7/15
        let gold = [NoValue, NoValue, NoValue, PotentialValue, PotentialValue, HighValue];
        let pred = [NoValue, NoValue, PotentialValue, PotentialValue, NoValue, PotentialValue];
        assert!((weighted_f1(&pred, &gold).unwrap() - 7.0 / 15.0).abs() < TOL);
        assert!((accuracy(&pred, &gold).unwrap() - 0.5).abs() < TOL);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            accuracy(&[NoValue], &[]).unwrap_err(),
            Error::LengthMismatch { left: 1, right: 0 }
        ));
        assert!(weighted_f1(&[NoValue], &[NoValue, HighValue]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn ensemble_mean() {
        let a = ScoreTable::from_entries("a", [("x", 1.0)]).unwrap();
        let b = ScoreTable::from_entries("b", [("x", 3.0)]).unwrap();
        assert_eq!(ensemble_average(&[a.clone(), b.clone()]).unwrap().get("x"), Some(2.0));
        let single = ensemble_average(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.iter().collect::<Vec<_>>(), a.iter().collect::<Vec<_>>());
        let c = ScoreTable::from_entries("c", [("y", 3.0)]).unwrap();
        assert!(matches!(ensemble_average(&[a, c]).unwrap_err(), Error::IdSetMismatch(_)));
        assert!(ensemble_average(&[]).is_err());
    }

    fn run(k: usize, split: usize, seed: u64, v: f64) -> RunResult {
        RunResult {
            k: Budget::Limit(k),
            split,
            seed,
            ndcg: BTreeMap::from([(10, v), (100, v)]),
        }
    }

    #[test]
    fn aggregate_constant_grid() {
        let runs: Vec<_> = (0..4).flat_map(|s| (0..5).map(move |seed| run(100, s, seed, 0.42))).collect();
        let rows = aggregate_runs(&runs).unwrap();
        assert_eq!(rows.len(), 2);
        for row in rows {
            assert!((row.mean - 0.42).abs() < 1e-12);
            assert!(row.std.abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_two_seeds() {
        // seed 0 split values average to 0.7, seed 1 to 0.8
        let runs = vec![
            run(100, 0, 0, 0.6),
            run(100, 1, 0, 0.8),
            run(100, 0, 1, 0.75),
            run(100, 1, 1, 0.85),
        ];
        let rows = aggregate_runs(&runs).unwrap();
        assert!((rows[0].mean - 0.75).abs() < 1e-12);
        assert!((rows[0].std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn aggregate_reports_missing_cells() {
        let runs = vec![run(100, 0, 0, 0.5), run(100, 1, 0, 0.5), run(200, 0, 0, 0.5)];
        match aggregate_runs(&runs).unwrap_err() {
            Error::IncompleteGrid(missing) => assert_eq!(missing, vec!["k=200 split=1 seed=0"]),
            e => panic!("{e}"),
        }
        let dup = vec![run(100, 0, 0, 0.5), run(100, 0, 0, 0.6)];
        assert!(matches!(aggregate_runs(&dup).unwrap_err(), Error::DuplicateRun(_)));
    }
}
