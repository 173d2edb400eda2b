//! Emission families: additive-smoothed n-gram language models, the
//! word/POS linear combination, fractional per-gram lambda, discrete feature
//! models and the Gaussian-mixture emission.

pub mod features;
pub mod gmm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::error::{Error, Result};
use crate::preprocess::{extract_ngrams, GramKind};

pub use features::{
    extract_features, extract_raw_features, fit_feature_model, fit_feature_models,
    score_post_features, Feature, FeatureDiscretizer, FeatureModel, PostFeatures,
    RawPostFeatures, AUTHOR_BUCKETS, NUMERIC_BINS, NUM_FEATURES,
};
pub use gmm::{fit_gmm, score_post_gmm, GaussianMixture, GmmComponent, VARIANCE_FLOOR};

/// Additive-smoothed categorical over one state's n-grams, with one extra
/// bucket for unseen grams: p(g) = (count(g) + d1) / (total + d1 * (V + 1)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageModel {
    counts: BTreeMap<String, u64>,
    total: u64,
    vocab_size: usize,
    delta1: f64,
    pub kind: GramKind,
    pub n: usize,
}

impl LanguageModel {
    /// Fits a model from gram occurrence lists (one list per post of the
    /// state). `vocab_size` is the number of distinct grams of this kind in
    /// the whole corpus, which keeps scores comparable across states. An
    /// empty post set yields the uniform smoothed model.
    pub fn from_gram_lists<'a, I, L>(
        lists: I,
        kind: GramKind,
        n: usize,
        delta1: f64,
        vocab_size: usize,
    ) -> Result<LanguageModel>
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = &'a String>,
    {
        if !(delta1 > 0.0) {
            return Err(Error::Parameter(format!("delta1 must be > 0, got {delta1}")));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0u64;
        for list in lists {
            for gram in list {
                *counts.entry(gram.clone()).or_insert(0) += 1;
                total += 1;
            }
        }
        Ok(LanguageModel { counts, total, vocab_size, delta1, kind, n })
    }

    fn denominator(&self) -> f64 {
        self.total as f64 + self.delta1 * (self.vocab_size as f64 + 1.0)
    }

    /// Smoothed probability of a gram; grams never counted for this state
    /// (vocab or not) fall into the unseen bucket mass.
    pub fn prob(&self, gram: &str) -> f64 {
        let c = self.counts.get(gram).copied().unwrap_or(0);
        (c as f64 + self.delta1) / self.denominator()
    }

    pub fn log_prob(&self, gram: &str) -> f64 {
        self.prob(gram).ln()
    }

    pub fn unseen_prob(&self) -> f64 {
        self.delta1 / self.denominator()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Probability mass over the vocab plus the unseen bucket. Always 1 up
    /// to rounding; kept as an explicit check for the normalization
    /// invariant.
    pub fn distribution_sum(&self) -> f64 {
        let counted: f64 = self.counts.values().map(|&c| c as f64 + self.delta1).sum();
        let uncounted = self.vocab_size.saturating_sub(self.counts.len()) as f64 * self.delta1;
        (counted + uncounted + self.delta1) / self.denominator()
    }

    /// Sum of log-probabilities over a gram occurrence list.
    pub fn score_grams(&self, grams: &[String]) -> f64 {
        grams.iter().map(|g| self.log_prob(g)).sum()
    }
}

/// Fits a language model straight from posts, extracting the grams here.
pub fn fit_language_model(
    posts: &[&Post],
    kind: GramKind,
    n: usize,
    delta1: f64,
    vocab_size: usize,
) -> Result<LanguageModel> {
    let mut lists = Vec::with_capacity(posts.len());
    for post in posts {
        lists.push(extract_ngrams(post, n, kind)?.grams);
    }
    LanguageModel::from_gram_lists(lists.iter().map(|l| l.iter()), kind, n, delta1, vocab_size)
}

/// Log-probability of a post under one state's language model.
pub fn score_post_lm(post: &Post, lm: &LanguageModel) -> Result<f64> {
    let bag = extract_ngrams(post, lm.n, lm.kind)?;
    Ok(lm.score_grams(&bag.grams))
}

/// Word/POS combined emission: sum over positions j of
/// log[lambda * p(W_j | L) + (1 - lambda) * p(POS_j | PL)].
/// Word and POS grams pair by position, so they must have equal length.
pub fn score_post_combined(
    word_grams: &[String],
    pos_grams: &[String],
    word_lm: &LanguageModel,
    pos_lm: &LanguageModel,
    lambda: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("lambda must be in [0, 1], got {lambda}")));
    }
    if word_grams.len() != pos_grams.len() {
        return Err(Error::Parameter(format!(
            "word/POS gram lists must pair by position: {} vs {}",
            word_grams.len(),
            pos_grams.len()
        )));
    }
    let mut score = 0.0;
    for (w, p) in word_grams.iter().zip(pos_grams) {
        score += (lambda * word_lm.prob(w) + (1.0 - lambda) * pos_lm.prob(p)).ln();
    }
    Ok(score)
}

/// Per-(gram, state) frequency fractions for the fractional-lambda emission:
/// frac(k, g) = count of g in state k / total count of g.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FreqTable {
    per_state: BTreeMap<String, Vec<u64>>,
    num_states: usize,
}

impl FreqTable {
    pub fn build<'a, I, L>(lists: I, assignment: &[usize], num_states: usize) -> FreqTable
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = &'a String>,
    {
        let mut per_state: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for (list, &state) in lists.into_iter().zip(assignment) {
            for gram in list {
                per_state.entry(gram.clone()).or_insert_with(|| vec![0; num_states])[state] += 1;
            }
        }
        FreqTable { per_state, num_states }
    }

    /// Fraction of the gram's corpus occurrences that fall in `state`;
    /// 0 for grams never seen.
    pub fn fraction(&self, gram: &str, state: usize) -> f64 {
        match self.per_state.get(gram) {
            Some(counts) => {
                let total: u64 = counts.iter().sum();
                if total == 0 {
                    0.0
                } else {
                    counts[state] as f64 / total as f64
                }
            }
            None => 0.0,
        }
    }
}

/// lambda(w, pos, k) = WordFrac / (WordFrac + PosFrac); both zero gives 0.5.
pub fn fractional_lambda(word_frac: f64, pos_frac: f64) -> f64 {
    let denom = word_frac + pos_frac;
    if denom == 0.0 {
        0.5
    } else {
        word_frac / denom
    }
}

/// Word and POS frequency tables built from the previous iteration's labels
/// (or the initial clusters / training labels on the first iteration).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FracLambdaTables {
    pub word: FreqTable,
    pub pos: FreqTable,
}

impl FracLambdaTables {
    pub fn lambda(&self, word_gram: &str, pos_gram: &str, state: usize) -> f64 {
        fractional_lambda(self.word.fraction(word_gram, state), self.pos.fraction(pos_gram, state))
    }
}

/// Combined emission with the per-gram fractional lambda.
pub fn score_post_fractional(
    word_grams: &[String],
    pos_grams: &[String],
    word_lm: &LanguageModel,
    pos_lm: &LanguageModel,
    tables: &FracLambdaTables,
    state: usize,
) -> Result<f64> {
    if word_grams.len() != pos_grams.len() {
        return Err(Error::Parameter(format!(
            "word/POS gram lists must pair by position: {} vs {}",
            word_grams.len(),
            pos_grams.len()
        )));
    }
    let mut score = 0.0;
    for (w, p) in word_grams.iter().zip(pos_grams) {
        let lambda = tables.lambda(w, p, state);
        score += (lambda * word_lm.prob(w) + (1.0 - lambda) * pos_lm.prob(p)).ln();
    }
    Ok(score)
}
