//! Cross-validation harness, repetition averaging, parameter sweeps and the
//! run-rejection rule for unsupervised runs whose final state count misses
//! the label count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{apply_overrides, derive_seed, ExperimentConfig, ExperimentMode};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::evaluation::{coarse_grain, compute_metrics, CategoryMetrics, EvalReport};
use crate::hmm::{train_semisupervised, train_unsupervised};
use crate::mapping::{build_weight_matrix, optimal_mapping};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub repetition: usize,
    pub fold: usize,
    pub report: EvalReport,
    /// 3-label report (Problem / Solution / Other), present when the label
    /// set contains Problem and Solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRun {
    pub repetition: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub reason: String,
}

/// Arithmetic means of every metric over a set of reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub num_reports: usize,
    pub micro_accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_category: Vec<CategoryMetrics>,
}

pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Option<AggregateReport> {
    let reports: Vec<&EvalReport> = reports.into_iter().collect();
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let categories = reports[0].per_category.len();
    let per_category = (0..categories)
        .map(|c| CategoryMetrics {
            label: reports[0].per_category[c].label.clone(),
            accuracy: mean(&|r| r.per_category[c].accuracy),
            precision: mean(&|r| r.per_category[c].precision),
            recall: mean(&|r| r.per_category[c].recall),
            f1: mean(&|r| r.per_category[c].f1),
        })
        .collect();
    Some(AggregateReport {
        num_reports: reports.len(),
        micro_accuracy: mean(&|r| r.micro_accuracy),
        micro_precision: mean(&|r| r.micro_precision),
        micro_recall: mean(&|r| r.micro_recall),
        micro_f1: mean(&|r| r.micro_f1),
        macro_accuracy: mean(&|r| r.macro_accuracy),
        macro_precision: mean(&|r| r.macro_precision),
        macro_recall: mean(&|r| r.macro_recall),
        macro_f1: mean(&|r| r.macro_f1),
        per_category,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub reports: Vec<FoldReport>,
    pub rejected: Vec<RejectedRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_aggregate: Option<AggregateReport>,
    pub warnings: Vec<String>,
}

impl RunResult {
    fn from_parts(reports: Vec<FoldReport>, rejected: Vec<RejectedRun>, warnings: Vec<String>) -> RunResult {
        let agg = aggregate(reports.iter().map(|f| &f.report));
        let coarse_agg = aggregate(reports.iter().filter_map(|f| f.coarse.as_ref()));
        RunResult { reports, rejected, aggregate: agg, coarse_aggregate: coarse_agg, warnings }
    }
}

/// Deals shuffled thread indices into `folds` round-robin piles.
pub fn partition_folds(num_threads: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Parameter(format!("folds must be >= 2, got {folds}")));
    }
    if num_threads < folds {
        return Err(Error::Validation(format!(
            "cannot split {num_threads} threads into {folds} folds"
        )));
    }
    let mut indices: Vec<usize> = (0..num_threads).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut parts = vec![Vec::new(); folds];
    for (i, t) in indices.into_iter().enumerate() {
        parts[i % folds].push(t);
    }
    Ok(parts)
}

fn coarse_applicable(corpus: &Corpus) -> bool {
    corpus.label_set.index_of("Problem").is_some() && corpus.label_set.index_of("Solution").is_some()
}

fn labeled_pairs(
    corpus: &Corpus,
    threads: &[usize],
    assignment: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    let ranges = corpus.thread_ranges();
    let gold = corpus.gold_label_indices();
    let mut pred_out = Vec::new();
    let mut gold_out = Vec::new();
    let mut flat = 0usize;
    for &t in threads {
        for i in ranges[t].clone() {
            if let Some(g) = gold[i] {
                pred_out.push(assignment[flat]);
                gold_out.push(g);
            }
            flat += 1;
        }
    }
    (pred_out, gold_out)
}

fn make_fold_report(
    corpus: &Corpus,
    repetition: usize,
    fold: usize,
    pred: &[usize],
    gold: &[usize],
) -> Result<FoldReport> {
    let report = compute_metrics(pred, gold, &corpus.label_set)?;
    let coarse = if coarse_applicable(corpus) {
        let (cp, cl) = coarse_grain(pred, &corpus.label_set);
        let (cg, _) = coarse_grain(gold, &corpus.label_set);
        Some(compute_metrics(&cp, &cg, &cl)?)
    } else {
        None
    };
    Ok(FoldReport { repetition, fold, report, coarse })
}

/// Randomized n-fold cross-validation where each fold once initializes the
/// priors and the remaining n-1 folds are decoded and evaluated. Repeats
/// with fresh shuffles and reports the means.
///
/// Prior initialization needs fully labeled threads, so a training fold is
/// reduced to its fully labeled members (partially labeled threads still
/// get decoded and evaluated as part of the other folds); a fold with none
/// is recorded as rejected.
pub fn crossval_semisupervised(corpus: &Corpus, config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    if !corpus.posts().any(|p| p.gold_label.is_some()) {
        return Err(Error::Validation("semi-supervised cross-validation requires gold labels".into()));
    }
    let fully_labeled: Vec<bool> = corpus
        .threads
        .iter()
        .map(|t| t.posts.iter().all(|p| p.gold_label.is_some()))
        .collect();
    let mut reports = Vec::new();
    let mut rejected = Vec::new();
    let mut warnings = Vec::new();
    let partial = fully_labeled.iter().filter(|&&l| !l).count();
    if partial > 0 {
        warnings.push(format!(
            "{partial} thread(s) contain unlabeled posts and only serve for evaluation"
        ));
    }
    for rep in 0..config.repetitions {
        let folds = partition_folds(
            corpus.num_threads(),
            config.folds,
            derive_seed(config.master_seed, &[rep as u64]),
        )?;
        for (f, fold) in folds.iter().enumerate() {
            let train: Vec<usize> = fold.iter().copied().filter(|&t| fully_labeled[t]).collect();
            if train.is_empty() {
                rejected.push(RejectedRun {
                    repetition: rep,
                    fold: Some(f),
                    reason: "no fully labeled thread in the training fold".into(),
                });
                continue;
            }
            let eval: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != f)
                .flat_map(|(_, fold)| fold.iter().copied())
                .collect();
            let mut model_cfg = config.model.clone();
            model_cfg.seed = derive_seed(config.master_seed, &[rep as u64, f as u64]);
            match train_semisupervised(corpus, &train, &eval, &model_cfg) {
                Ok(outcome) => {
                    warnings.extend(outcome.warnings.iter().map(|w| format!("rep {rep} fold {f}: {w}")));
                    let (pred, gold) = labeled_pairs(corpus, &eval, &outcome.assignment);
                    reports.push(make_fold_report(corpus, rep, f, &pred, &gold)?);
                }
                Err(Error::Training(reason)) => {
                    rejected.push(RejectedRun { repetition: rep, fold: Some(f), reason });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(RunResult::from_parts(reports, rejected, warnings))
}

/// Unsupervised runs decode the full corpus. A run whose final distinct
/// state count differs from the label count is recorded as rejected; the
/// rest are mapped to labels with the Kuhn-Munkres assignment and evaluated.
pub fn run_unsupervised_experiment(corpus: &Corpus, config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    if !corpus.posts().any(|p| p.gold_label.is_some()) {
        return Err(Error::Validation("evaluation requires gold labels".into()));
    }
    let all_threads: Vec<usize> = (0..corpus.num_threads()).collect();
    let num_labels = corpus.label_set.len();
    let mut reports = Vec::new();
    let mut rejected = Vec::new();
    for rep in 0..config.repetitions {
        let mut model_cfg = config.model.clone();
        model_cfg.seed = derive_seed(config.master_seed, &[rep as u64]);
        let outcome = match train_unsupervised(corpus, &model_cfg) {
            Ok(o) => o,
            Err(Error::Training(reason)) => {
                rejected.push(RejectedRun { repetition: rep, fold: None, reason });
                continue;
            }
            Err(e) => return Err(e),
        };
        let num_states = outcome.params.num_states;
        let distinct = {
            let mut seen = vec![false; num_states];
            for &s in &outcome.assignment {
                seen[s] = true;
            }
            seen.iter().filter(|&&s| s).count()
        };
        if distinct != num_labels {
            rejected.push(RejectedRun {
                repetition: rep,
                fold: None,
                reason: format!(
                    "run produced {distinct} clusters, expected {num_labels} (the label count)"
                ),
            });
            continue;
        }
        let gold = corpus.gold_label_indices();
        let w = build_weight_matrix(&outcome.assignment, &gold, num_states, num_labels)?;
        let mapping = optimal_mapping(&w);
        let mapped: Vec<usize> = outcome
            .assignment
            .iter()
            .map(|&s| mapping.label_for(s))
            .collect();
        let (pred, gold) = labeled_pairs(corpus, &all_threads, &mapped);
        reports.push(make_fold_report(corpus, rep, 0, &pred, &gold)?);
    }
    Ok(RunResult::from_parts(reports, rejected, Vec::new()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub overrides: std::collections::BTreeMap<String, serde_json::Value>,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    /// Index into `runs` of the best mean micro-accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_micro: Option<usize>,
    /// Index into `runs` of the best mean macro-accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_macro: Option<usize>,
}

/// Cartesian product of the grid entries, in sorted key order.
fn grid_points(
    grid: &std::collections::BTreeMap<String, Vec<serde_json::Value>>,
) -> Vec<std::collections::BTreeMap<String, serde_json::Value>> {
    let mut points = vec![std::collections::BTreeMap::new()];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.insert(key.clone(), v.clone());
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Executes every grid point and records which configuration wins each
/// headline metric. An empty grid is a single run of the base config.
pub fn sweep(corpus: &Corpus, config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let points = grid_points(&config.grid);
    let mut runs = Vec::with_capacity(points.len());
    for overrides in points {
        let model = apply_overrides(&config.model, &overrides)?;
        let point_cfg = ExperimentConfig { model, ..config.clone() };
        let result = match config.mode {
            ExperimentMode::Unsupervised => run_unsupervised_experiment(corpus, &point_cfg)?,
            ExperimentMode::SemiSupervised => crossval_semisupervised(corpus, &point_cfg)?,
        };
        runs.push(SweepRun { overrides, result });
    }
    let best_by = |f: &dyn Fn(&AggregateReport) -> f64| {
        let mut best: Option<(usize, f64)> = None;
        for (i, run) in runs.iter().enumerate() {
            if let Some(agg) = &run.result.aggregate {
                let v = f(agg);
                match best {
                    Some((_, bv)) if bv >= v => {}
                    _ => best = Some((i, v)),
                }
            }
        }
        best.map(|(i, _)| i)
    };
    let best_micro = best_by(&|a| a.micro_accuracy);
    let best_macro = best_by(&|a| a.macro_accuracy);
    Ok(SweepResult { runs, best_micro, best_macro })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{LmType, ModelConfig};
    use crate::synthetic::{generate, SyntheticSpec};

    fn spec(seed: u64) -> SyntheticSpec {
        let mut s = SyntheticSpec::three_state(seed);
        s.num_threads = 40;
        s
    }

    fn exp_config() -> ExperimentConfig {
        let mut model = ModelConfig::default();
        model.label_set = vec!["Problem".into(), "Solution".into(), "Other".into()];
        model.initial_num_clusters = 3;
        model.merge_insertion_states = false;
        model.lm_type = LmType::Unigram;
        model.max_num_iterations = 30;
        ExperimentConfig {
            model,
            folds: 5,
            repetitions: 1,
            master_seed: 7,
            mode: ExperimentMode::Unsupervised,
            grid: Default::default(),
        }
    }

    #[test]
    fn folds_partition_every_thread_exactly_once() {
        let folds = partition_folds(100, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut seen = vec![false; 100];
        for f in &folds {
            for &t in f {
                assert!(!seen[t], "thread {t} in two folds");
                seen[t] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn remainders_distribute_round_robin() {
        let folds = partition_folds(93, 10, 3).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 93);
        sizes.sort_unstable();
        assert_eq!(sizes, vec![9, 9, 9, 9, 9, 9, 9, 10, 10, 10]);
    }

    #[test]
    fn too_few_threads_for_the_folds_is_an_error() {
        assert!(partition_folds(3, 5, 1).is_err());
        assert!(partition_folds(10, 1, 1).is_err());
    }

    #[test]
    fn crossval_reports_every_fold_and_aggregates() {
        let corpus = generate(&spec(31)).unwrap();
        let mut cfg = exp_config();
        cfg.mode = ExperimentMode::SemiSupervised;
        let result = crossval_semisupervised(&corpus, &cfg).unwrap();
        assert_eq!(result.reports.len(), 5);
        let agg = result.aggregate.as_ref().unwrap();
        assert_eq!(agg.num_reports, 5);
        let mean: f64 =
            result.reports.iter().map(|r| r.report.micro_accuracy).sum::<f64>() / 5.0;
        assert!((agg.micro_accuracy - mean).abs() < 1e-12);
        assert!(result.coarse_aggregate.is_some());
    }

    #[test]
    fn crossval_is_reproducible_bit_for_bit() {
        let corpus = generate(&spec(32)).unwrap();
        let mut cfg = exp_config();
        cfg.mode = ExperimentMode::SemiSupervised;
        let a = crossval_semisupervised(&corpus, &cfg).unwrap();
        let b = crossval_semisupervised(&corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn unsupervised_experiment_produces_a_report_on_the_happy_path() {
        let corpus = generate(&spec(33)).unwrap();
        let result = run_unsupervised_experiment(&corpus, &exp_config()).unwrap();
        assert_eq!(result.reports.len(), 1);
        assert!(result.rejected.is_empty());
        assert!(result.aggregate.is_some());
    }

    #[test]
    fn aggressive_merging_gets_recorded_as_rejected() {
        let corpus = generate(&spec(34)).unwrap();
        let mut cfg = exp_config();
        cfg.model.initial_num_clusters = 8;
        cfg.model.merge_insertion_states = true;
        cfg.model.state_size_threshold = 100_000;
        let result = run_unsupervised_experiment(&corpus, &cfg).unwrap();
        assert!(result.reports.is_empty());
        assert_eq!(result.rejected.len(), 1);
        assert!(result.aggregate.is_none());
    }

    #[test]
    fn repetitions_average_over_seeded_runs() {
        let corpus = generate(&spec(35)).unwrap();
        let mut cfg = exp_config();
        cfg.repetitions = 3;
        let result = run_unsupervised_experiment(&corpus, &cfg).unwrap();
        assert_eq!(result.reports.len() + result.rejected.len(), 3);
        if let Some(agg) = &result.aggregate {
            assert_eq!(agg.num_reports, result.reports.len());
        }
    }

    #[test]
    fn ten_repetition_gmm_config_averages_ten_seeded_runs() {
        let mut s = spec(39);
        s.num_threads = 25;
        let corpus = generate(&s).unwrap();
        let mut cfg = exp_config();
        cfg.model.use_gmm = true;
        cfg.model.gmm_vector_dim = 15;
        cfg.model.max_num_iterations = 8;
        cfg.repetitions = 10;
        let result = run_unsupervised_experiment(&corpus, &cfg).unwrap();
        assert_eq!(result.reports.len() + result.rejected.len(), 10);
        if let Some(agg) = &result.aggregate {
            assert_eq!(agg.num_reports, result.reports.len());
            let mean = result.reports.iter().map(|r| r.report.micro_accuracy).sum::<f64>()
                / result.reports.len() as f64;
            assert!((agg.micro_accuracy - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_sweep_equals_the_direct_run() {
        let corpus = generate(&spec(36)).unwrap();
        let cfg = exp_config();
        let direct = run_unsupervised_experiment(&corpus, &cfg).unwrap();
        let swept = sweep(&corpus, &cfg).unwrap();
        assert_eq!(swept.runs.len(), 1);
        assert_eq!(swept.runs[0].result, direct);
        assert_eq!(swept.best_micro, Some(0));
    }

    #[test]
    fn sweep_picks_the_best_survivor() {
        let corpus = generate(&spec(37)).unwrap();
        let mut cfg = exp_config();
        cfg.grid.insert(
            "stateSizeThreshold".to_string(),
            vec![serde_json::json!(0), serde_json::json!(100000)],
        );
        cfg.grid.insert("mergeInsertionStates".to_string(), vec![serde_json::json!(true)]);
        let swept = sweep(&corpus, &cfg).unwrap();
        assert_eq!(swept.runs.len(), 2);
        // the oversized threshold collapses and gets rejected
        let rejected_count: usize = swept.runs.iter().map(|r| r.result.rejected.len()).sum();
        assert!(rejected_count >= 1);
        let best = swept.best_micro.unwrap();
        assert!(swept.runs[best].result.aggregate.is_some());
    }

    #[test]
    fn aggregate_mean_is_order_invariant() {
        let corpus = generate(&spec(38)).unwrap();
        let mut cfg = exp_config();
        cfg.mode = ExperimentMode::SemiSupervised;
        let result = crossval_semisupervised(&corpus, &cfg).unwrap();
        let forward = aggregate(result.reports.iter().map(|r| &r.report)).unwrap();
        let reversed = aggregate(result.reports.iter().rev().map(|r| &r.report)).unwrap();
        assert!((forward.micro_accuracy - reversed.micro_accuracy).abs() < 1e-12);
        assert!((forward.macro_f1 - reversed.macro_f1).abs() < 1e-12);
    }
}
