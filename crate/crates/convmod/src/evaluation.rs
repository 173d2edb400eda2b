//! Confusion matrices, the per-category and micro/macro metric suite, the
//! four baselines and the coarse-grained label collapse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabelSet, Thread};
use crate::error::{Error, Result};

/// Square count matrix over the label set; rows are actual labels, columns
/// are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(num_labels: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; num_labels]; num_labels] }
    }

    pub fn from_pairs(predicted: &[usize], gold: &[usize], num_labels: usize) -> Self {
        let mut m = ConfusionMatrix::new(num_labels);
        for (&p, &g) in predicted.iter().zip(gold) {
            m.counts[g][p] += 1;
        }
        m
    }

    pub fn count(&self, actual: usize, predicted: usize) -> usize {
        self.counts[actual][predicted]
    }

    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, label: usize) -> usize {
        self.counts[label][label]
    }

    pub fn predicted_as(&self, label: usize) -> usize {
        self.counts.iter().map(|row| row[label]).sum()
    }

    pub fn actual(&self, label: usize) -> usize {
        self.counts[label].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub label: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_category: Vec<CategoryMetrics>,
    pub micro_accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    pub num_posts: usize,
}

fn ratio(num: f64, denom: f64) -> f64 {
    if denom == 0.0 {
        0.0
    } else {
        num / denom
    }
}

/// Computes every metric of the suite. Precision or recall with a zero
/// denominator is 0 by convention, as is the F1 of a zero P + R. The macro
/// F1 comes from macro P and macro R, not from averaging per-class F1.
pub fn compute_metrics(predicted: &[usize], gold: &[usize], labels: &LabelSet) -> Result<EvalReport> {
    if predicted.len() != gold.len() {
        return Err(Error::Parameter(format!(
            "prediction and gold sequences differ in length: {} vs {}",
            predicted.len(),
            gold.len()
        )));
    }
    let k = labels.len();
    if let Some(&bad) = predicted.iter().chain(gold).find(|&&l| l >= k) {
        return Err(Error::Parameter(format!("label index {bad} outside the label set")));
    }
    let confusion = ConfusionMatrix::from_pairs(predicted, gold, k);
    let num_predictions = predicted.len() as f64;
    let num_posts = gold.len() as f64;

    let mut per_category = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion.true_positives(c) as f64;
        let predicted_c = confusion.predicted_as(c) as f64;
        let actual_c = confusion.actual(c) as f64;
        // true negatives: actual non-c posts predicted as non-c
        let tn = num_predictions - actual_c - predicted_c + tp;
        let accuracy = ratio(tp + tn, num_predictions);
        let precision = ratio(tp, predicted_c);
        let recall = ratio(tp, actual_c);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        per_category.push(CategoryMetrics {
            label: labels.name(c).to_string(),
            accuracy,
            precision,
            recall,
            f1,
        });
    }

    let tp_sum: usize = (0..k).map(|c| confusion.true_positives(c)).sum();
    let micro_accuracy = ratio(tp_sum as f64, num_predictions);
    let micro_precision = micro_accuracy;
    let micro_recall = ratio(tp_sum as f64, num_posts);
    let micro_f1 = ratio(
        2.0 * micro_precision * micro_recall,
        micro_precision + micro_recall,
    );
    let kf = k as f64;
    let macro_accuracy = per_category.iter().map(|m| m.accuracy).sum::<f64>() / kf;
    let macro_precision = per_category.iter().map(|m| m.precision).sum::<f64>() / kf;
    let macro_recall = per_category.iter().map(|m| m.recall).sum::<f64>() / kf;
    let macro_f1 = ratio(2.0 * macro_precision * macro_recall, macro_precision + macro_recall);

    Ok(EvalReport {
        per_category,
        micro_accuracy,
        micro_precision,
        micro_recall,
        micro_f1,
        macro_accuracy,
        macro_precision,
        macro_recall,
        macro_f1,
        confusion,
        num_posts: gold.len(),
    })
}

impl EvalReport {
    /// Plain-text table for terminal output.
    pub fn render_table(&self, labels: &LabelSet) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let width = labels.names().iter().map(|n| n.len()).max().unwrap_or(8).max(8);
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}", "category", "A", "P", "R", "F1");
        for m in &self.per_category {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
                m.label, m.accuracy, m.precision, m.recall, m.f1
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            "micro", self.micro_accuracy, self.micro_precision, self.micro_recall, self.micro_f1
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            "macro", self.macro_accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        let _ = writeln!(out, "posts evaluated: {}", self.num_posts);
        out
    }
}

/// Uniform i.i.d. label per post, deterministic per seed. Thread-major order.
pub fn baseline_random(corpus: &Corpus, labels: &LabelSet, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..corpus.num_posts()).map(|_| rng.gen_range(0..labels.len())).collect()
}

/// The corpus-majority gold label for every post; ties break to the
/// lexicographically first label name.
pub fn baseline_majority(corpus: &Corpus) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; corpus.label_set.len()];
    let mut any = false;
    for post in corpus.posts() {
        if let Some(label) = &post.gold_label {
            if let Some(i) = corpus.label_set.index_of(label.as_str()) {
                counts[i] += 1;
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::Validation("the majority baseline requires gold labels".into()));
    }
    let max = *counts.iter().max().unwrap();
    let majority = (0..counts.len())
        .filter(|&i| counts[i] == max)
        .min_by(|&a, &b| corpus.label_set.name(a).cmp(corpus.label_set.name(b)))
        .unwrap();
    Ok(vec![majority; corpus.num_posts()])
}

fn positional_labels(labels: &LabelSet) -> Result<(usize, usize, usize)> {
    let problem = labels
        .index_of("Problem")
        .ok_or_else(|| Error::Config("heuristic baselines require a 'Problem' label".into()))?;
    let solution = labels
        .index_of("Solution")
        .ok_or_else(|| Error::Config("heuristic baselines require a 'Solution' label".into()))?;
    let other = labels
        .index_of("Other")
        .ok_or_else(|| Error::Config("heuristic baselines require an 'Other' label".into()))?;
    Ok((problem, solution, other))
}

/// Problem-Solution Heuristic 1: Problem for the first post, Other for the
/// last, Solution for the rest. A single post is Problem.
pub fn baseline_ps_heuristic1(thread: &Thread, labels: &LabelSet) -> Result<Vec<usize>> {
    let (problem, solution, other) = positional_labels(labels)?;
    let n = thread.len();
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                problem
            } else if i == n - 1 {
                other
            } else {
                solution
            }
        })
        .collect())
}

/// Problem-Solution Heuristic 2: Problem for the first post, Solution for
/// the second, Other for the rest.
pub fn baseline_ps_heuristic2(thread: &Thread, labels: &LabelSet) -> Result<Vec<usize>> {
    let (problem, solution, other) = positional_labels(labels)?;
    Ok((0..thread.len())
        .map(|i| match i {
            0 => problem,
            1 => solution,
            _ => other,
        })
        .collect())
}

/// The 3-label coarse-grained label set.
pub fn coarse_label_set() -> LabelSet {
    LabelSet::new(vec!["Problem".into(), "Solution".into(), "Other".into()])
}

/// Collapses every label except Problem and Solution into Other, returning
/// the remapped sequence and the 3-label set it indexes into.
pub fn coarse_grain(sequence: &[usize], labels: &LabelSet) -> (Vec<usize>, LabelSet) {
    let coarse = coarse_label_set();
    let mapped = sequence
        .iter()
        .map(|&l| match labels.name(l) {
            "Problem" => 0,
            "Solution" => 1,
            _ => 2,
        })
        .collect();
    (mapped, coarse)
}
