//! The discrete post-feature emission: structural, metadata, textual and
//! lexical features, quartile discretization and per-state categoricals.

use serde::{Deserialize, Serialize};

use crate::corpus::Thread;
use crate::preprocess::{cosine_similarity, PostVector};

pub const NUM_FEATURES: usize = 19;
/// Quartile bins for numeric features.
pub const NUMERIC_BINS: usize = 4;
/// Author identities are hashed into this many buckets to keep the
/// categorical domain bounded.
pub const AUTHOR_BUCKETS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feature {
    ThreadPosition,
    AuthorIdentity,
    PrevPostSameAuthor,
    AuthorPostCount,
    AuthorPrevPostCount,
    TokenCount,
    TypeTokenRatio,
    AvgThreadSimilarity,
    InitialPostSimilarity,
    HasQuestionMark,
    PrevHasQuestionMark,
    HasExclamationMark,
    HasQuoteUrlImage,
    HasThanks,
    HasSameOrSimilar,
    HasDid,
    WhWordCount,
    ModalVerbCount,
    ProperNounCount,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::ThreadPosition,
        Feature::AuthorIdentity,
        Feature::PrevPostSameAuthor,
        Feature::AuthorPostCount,
        Feature::AuthorPrevPostCount,
        Feature::TokenCount,
        Feature::TypeTokenRatio,
        Feature::AvgThreadSimilarity,
        Feature::InitialPostSimilarity,
        Feature::HasQuestionMark,
        Feature::PrevHasQuestionMark,
        Feature::HasExclamationMark,
        Feature::HasQuoteUrlImage,
        Feature::HasThanks,
        Feature::HasSameOrSimilar,
        Feature::HasDid,
        Feature::WhWordCount,
        Feature::ModalVerbCount,
        Feature::ProperNounCount,
    ];

    pub fn index(self) -> usize {
        Feature::ALL.iter().position(|&f| f == self).unwrap()
    }

    /// Numeric features get quartile-binned; the rest are already discrete.
    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            Feature::ThreadPosition
                | Feature::AuthorPostCount
                | Feature::AuthorPrevPostCount
                | Feature::TokenCount
                | Feature::TypeTokenRatio
                | Feature::AvgThreadSimilarity
                | Feature::InitialPostSimilarity
                | Feature::WhWordCount
                | Feature::ModalVerbCount
                | Feature::ProperNounCount
        )
    }

    pub fn domain_size(self) -> usize {
        if self.is_numeric() {
            NUMERIC_BINS
        } else if self == Feature::AuthorIdentity {
            AUTHOR_BUCKETS
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::ThreadPosition => "threadPosition",
            Feature::AuthorIdentity => "authorIdentity",
            Feature::PrevPostSameAuthor => "prevPostSameAuthor",
            Feature::AuthorPostCount => "authorPostCount",
            Feature::AuthorPrevPostCount => "authorPrevPostCount",
            Feature::TokenCount => "tokenCount",
            Feature::TypeTokenRatio => "typeTokenRatio",
            Feature::AvgThreadSimilarity => "avgThreadSimilarity",
            Feature::InitialPostSimilarity => "initialPostSimilarity",
            Feature::HasQuestionMark => "hasQuestionMark",
            Feature::PrevHasQuestionMark => "prevHasQuestionMark",
            Feature::HasExclamationMark => "hasExclamationMark",
            Feature::HasQuoteUrlImage => "hasQuoteUrlImage",
            Feature::HasThanks => "hasThanks",
            Feature::HasSameOrSimilar => "hasSameOrSimilar",
            Feature::HasDid => "hasDid",
            Feature::WhWordCount => "whWordCount",
            Feature::ModalVerbCount => "modalVerbCount",
            Feature::ProperNounCount => "properNounCount",
        }
    }
}

/// Raw feature values before discretization. Binary features are 0/1 and the
/// author identity is already a bucket id.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPostFeatures {
    pub values: [f64; NUM_FEATURES],
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const WH_WORDS: [&str; 5] = ["why", "where", "what", "when", "how"];

/// Computes the raw feature vector of one post. `vectors` holds the thread's
/// unigram count vectors (used for the similarity features, thread-local
/// index order).
pub fn extract_raw_features(
    thread: &Thread,
    vectors: &[PostVector],
    post_pos: usize,
) -> RawPostFeatures {
    assert_eq!(thread.posts.len(), vectors.len());
    let post = &thread.posts[post_pos];
    let mut v = [0.0; NUM_FEATURES];

    v[Feature::ThreadPosition.index()] = post_pos as f64;
    v[Feature::AuthorIdentity.index()] = (fnv1a(&post.author_id) % AUTHOR_BUCKETS as u64) as f64;
    v[Feature::PrevPostSameAuthor.index()] =
        (post_pos > 0 && thread.posts[post_pos - 1].author_id == post.author_id) as u8 as f64;
    v[Feature::AuthorPostCount.index()] = thread
        .posts
        .iter()
        .filter(|p| p.author_id == post.author_id)
        .count() as f64;
    v[Feature::AuthorPrevPostCount.index()] = thread.posts[..post_pos]
        .iter()
        .filter(|p| p.author_id == post.author_id)
        .count() as f64;

    v[Feature::TokenCount.index()] = post.tokens.len() as f64;
    let distinct: std::collections::HashSet<&str> = post.surfaces().collect();
    v[Feature::TypeTokenRatio.index()] = distinct.len() as f64 / post.tokens.len() as f64;

    let avg_sim = if vectors.len() > 1 {
        let sum: f64 = vectors
            .iter()
            .enumerate()
            .filter(|(z, _)| *z != post_pos)
            .map(|(_, other)| cosine_similarity(&vectors[post_pos], other))
            .sum();
        sum / (vectors.len() - 1) as f64
    } else {
        0.0
    };
    v[Feature::AvgThreadSimilarity.index()] = avg_sim;
    // the initial post scores its own self-similarity so that a later post
    // with an identical vector gets the bit-same value
    v[Feature::InitialPostSimilarity.index()] = cosine_similarity(&vectors[post_pos], &vectors[0]);

    let has = |pred: &dyn Fn(&str) -> bool| post.surfaces().any(pred) as u8 as f64;
    v[Feature::HasQuestionMark.index()] = has(&|s| s.contains('?'));
    v[Feature::PrevHasQuestionMark.index()] = if post_pos > 0 {
        thread.posts[post_pos - 1].surfaces().any(|s| s.contains('?')) as u8 as f64
    } else {
        0.0
    };
    v[Feature::HasExclamationMark.index()] = has(&|s| s.contains('!'));
    let marker_token = |s: &str| {
        s.eq_ignore_ascii_case("[quote]") || s.eq_ignore_ascii_case("[url]") || s.eq_ignore_ascii_case("[img]")
    };
    v[Feature::HasQuoteUrlImage.index()] =
        (post.has_quote || post.has_url || post.has_image || post.surfaces().any(marker_token))
            as u8 as f64;
    v[Feature::HasThanks.index()] = has(&|s| s.eq_ignore_ascii_case("thanks"));
    v[Feature::HasSameOrSimilar.index()] =
        has(&|s| s.eq_ignore_ascii_case("same") || s.eq_ignore_ascii_case("similar"));
    v[Feature::HasDid.index()] = has(&|s| s.eq_ignore_ascii_case("did"));
    v[Feature::WhWordCount.index()] = post
        .surfaces()
        .filter(|s| WH_WORDS.iter().any(|w| s.eq_ignore_ascii_case(w)))
        .count() as f64;
    v[Feature::ModalVerbCount.index()] = post
        .tokens
        .iter()
        .filter(|t| t.pos.as_deref() == Some("MD"))
        .count() as f64;
    v[Feature::ProperNounCount.index()] = post
        .tokens
        .iter()
        .filter(|t| matches!(t.pos.as_deref(), Some("NNP") | Some("NNPS")))
        .count() as f64;

    RawPostFeatures { values: v }
}

/// Quartile thresholds for the numeric features, fitted on the
/// prior-initialization data (the training fold when semi-supervised, the
/// whole corpus otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiscretizer {
    thresholds: Vec<Option<[f64; 3]>>,
}

impl FeatureDiscretizer {
    pub fn fit(raw: &[RawPostFeatures]) -> FeatureDiscretizer {
        let mut thresholds = Vec::with_capacity(NUM_FEATURES);
        for feature in Feature::ALL {
            if !feature.is_numeric() {
                thresholds.push(None);
                continue;
            }
            let mut values: Vec<f64> = raw.iter().map(|r| r.values[feature.index()]).collect();
            if values.is_empty() {
                thresholds.push(Some([0.0, 0.0, 0.0]));
                continue;
            }
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |k: usize| values[(values.len() - 1) * k / 4];
            thresholds.push(Some([q(1), q(2), q(3)]));
        }
        FeatureDiscretizer { thresholds }
    }

    pub fn discretize(&self, raw: &RawPostFeatures) -> PostFeatures {
        let mut values = [0u8; NUM_FEATURES];
        for feature in Feature::ALL {
            let i = feature.index();
            let x = raw.values[i];
            values[i] = match &self.thresholds[i] {
                Some([q1, q2, q3]) => {
                    if x <= *q1 {
                        0
                    } else if x <= *q2 {
                        1
                    } else if x <= *q3 {
                        2
                    } else {
                        3
                    }
                }
                None => x as u8,
            };
        }
        PostFeatures { values }
    }
}

/// One discretized value per feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostFeatures {
    pub values: [u8; NUM_FEATURES],
}

impl PostFeatures {
    pub fn get(&self, feature: Feature) -> u8 {
        self.values[feature.index()]
    }
}

/// Extracts and discretizes the feature vector of one post.
pub fn extract_features(
    thread: &Thread,
    vectors: &[PostVector],
    post_pos: usize,
    discretizer: &FeatureDiscretizer,
) -> PostFeatures {
    discretizer.discretize(&extract_raw_features(thread, vectors, post_pos))
}

/// Additive-smoothed categorical over one feature's bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    counts: Vec<u64>,
    total: u64,
    delta1: f64,
}

impl Categorical {
    fn fit(values: impl IntoIterator<Item = u8>, domain: usize, delta1: f64) -> Categorical {
        let mut counts = vec![0u64; domain];
        let mut total = 0u64;
        for v in values {
            if (v as usize) < domain {
                counts[v as usize] += 1;
            }
            // out-of-domain values still count toward the total and will be
            // scored as smoothed-unseen
            total += 1;
        }
        Categorical { counts, total, delta1 }
    }

    pub fn prob(&self, value: u8) -> f64 {
        let denom = self.total as f64 + self.delta1 * self.counts.len() as f64;
        let c = self.counts.get(value as usize).copied().unwrap_or(0);
        (c as f64 + self.delta1) / denom
    }

    pub fn distribution_sum(&self) -> f64 {
        (0..self.counts.len() as u8).map(|v| self.prob(v)).sum()
    }
}

/// Per-feature categoricals for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    dists: Vec<Categorical>,
}

impl FeatureModel {
    pub fn prob(&self, feature: Feature, value: u8) -> f64 {
        self.dists[feature.index()].prob(value)
    }

    pub fn distributions(&self) -> &[Categorical] {
        &self.dists
    }
}

/// Fits one state's feature model. An empty post set yields uniform
/// categoricals.
pub fn fit_feature_model(features: &[&PostFeatures], delta1: f64) -> FeatureModel {
    let dists = Feature::ALL
        .iter()
        .map(|f| {
            Categorical::fit(
                features.iter().map(|pf| pf.values[f.index()]),
                f.domain_size(),
                delta1,
            )
        })
        .collect();
    FeatureModel { dists }
}

/// Fits per-state feature models from a flat assignment.
pub fn fit_feature_models(
    features: &[PostFeatures],
    assignment: &[usize],
    num_states: usize,
    delta1: f64,
) -> Vec<FeatureModel> {
    (0..num_states)
        .map(|k| {
            let members: Vec<&PostFeatures> = features
                .iter()
                .zip(assignment)
                .filter(|(_, &s)| s == k)
                .map(|(f, _)| f)
                .collect();
            fit_feature_model(&members, delta1)
        })
        .collect()
}

/// Sum over features of log p(value | state).
pub fn score_post_features(features: &PostFeatures, model: &FeatureModel) -> f64 {
    Feature::ALL
        .iter()
        .map(|f| model.prob(*f, features.values[f.index()]).ln())
        .sum()
}
