//! Per-post model inputs: gram lists, discretized features and GMM vectors,
//! precomputed once per corpus so EM iterations only fit and score.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::config::{CharLmMode, ModelConfig};
use crate::corpus::{Corpus, Post};
use crate::emission::{extract_raw_features, FeatureDiscretizer, PostFeatures, RawPostFeatures};
use crate::error::{Error, Result};
use crate::preprocess::{
    extract_ngrams, extract_skip_bigrams, is_stopword, vectorize_bag, GramKind, NGramBag,
    PostVector,
};

pub const SKIP_BIGRAM_MAX_SKIP: usize = 2;

/// The top-frequency unigram axes that GMM vectors project onto.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmmSpace {
    pub grams: Vec<String>,
}

impl GmmSpace {
    pub fn dim(&self) -> usize {
        self.grams.len()
    }

    fn project(&self, unigrams: &[String]) -> Vec<f64> {
        let index: BTreeMap<&str, usize> = self
            .grams
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let mut v = vec![0.0; self.grams.len()];
        for g in unigrams {
            if let Some(&i) = index.get(g.as_str()) {
                v[i] += 1.0;
            }
        }
        v
    }
}

/// Sizes and fitted reference data shared by training, scoring and decoding.
/// The smoothing vocabulary sizes cover every thread handed to the trainer;
/// the discretizer and GMM space are fitted on the prior-initialization
/// threads only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpaces {
    pub word_vocab_size: usize,
    pub pos_vocab_size: usize,
    pub char_vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretizer: Option<FeatureDiscretizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm_space: Option<GmmSpace>,
}

/// Everything the emission families need to score one post.
#[derive(Debug, Clone, PartialEq)]
pub struct PostObservation {
    pub word_grams: Option<Vec<String>>,
    pub pos_grams: Option<Vec<String>>,
    pub char_grams: Option<Vec<String>>,
    pub features: Option<PostFeatures>,
    pub gmm_vector: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    /// Thread-major, one entry per post.
    pub posts: Vec<PostObservation>,
    pub thread_ranges: Vec<Range<usize>>,
    pub spaces: ObservationSpaces,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn thread(&self, t: usize) -> &[PostObservation] {
        &self.posts[self.thread_ranges[t].clone()]
    }
}

fn content_token_filter(post: &Post, config: &ModelConfig) -> Post {
    if !config.remove_stopwords {
        return post.clone();
    }
    let mut filtered = post.clone();
    filtered.tokens.retain(|t| !is_stopword(&t.surface));
    if filtered.tokens.is_empty() {
        // a post that is all stopwords keeps its tokens rather than vanish
        return post.clone();
    }
    filtered
}

/// Word-side gram bag per config: lmType n-grams or skip-bigrams.
pub fn word_bag(post: &Post, config: &ModelConfig) -> Result<NGramBag> {
    let p = content_token_filter(post, config);
    if config.use_skipgrams {
        Ok(extract_skip_bigrams(&p, SKIP_BIGRAM_MAX_SKIP))
    } else {
        extract_ngrams(&p, config.lm_type.order(), GramKind::Word)
    }
}

fn pos_bag(post: &Post, config: &ModelConfig) -> Result<NGramBag> {
    let p = content_token_filter(post, config);
    extract_ngrams(&p, config.lm_type.order(), GramKind::Pos)
}

fn char_bag(post: &Post, config: &ModelConfig) -> Result<NGramBag> {
    let p = content_token_filter(post, config);
    extract_ngrams(&p, config.char_ngram_order, GramKind::Char)
}

fn distinct_gram_count<'a>(bags: impl Iterator<Item = &'a NGramBag>) -> usize {
    let mut set = std::collections::HashSet::new();
    for bag in bags {
        for g in &bag.grams {
            set.insert(g.as_str());
        }
    }
    set.len()
}

/// Builds per-post observations for the whole corpus.
///
/// `prior_threads` selects the threads whose data fits the feature
/// discretizer and the GMM vector space: the training fold when
/// semi-supervised, every thread otherwise (`None`).
pub fn build_observations(
    corpus: &Corpus,
    config: &ModelConfig,
    prior_threads: Option<&[usize]>,
) -> Result<ObservationSet> {
    let thread_ranges = corpus.thread_ranges();
    let num_posts = corpus.num_posts();
    let is_prior: Vec<bool> = match prior_threads {
        None => vec![true; corpus.num_threads()],
        Some(idx) => {
            let mut v = vec![false; corpus.num_threads()];
            for &t in idx {
                v[t] = true;
            }
            v
        }
    };

    let need_word = config.char_lm_mode != CharLmMode::Isolation;
    let need_char = config.char_lm_mode != CharLmMode::Off;

    let mut word_bags: Vec<Option<NGramBag>> = Vec::with_capacity(num_posts);
    let mut pos_bags: Vec<Option<NGramBag>> = Vec::with_capacity(num_posts);
    let mut char_bags: Vec<Option<NGramBag>> = Vec::with_capacity(num_posts);
    for post in corpus.posts() {
        word_bags.push(if need_word { Some(word_bag(post, config)?) } else { None });
        pos_bags.push(if config.use_pos_model { Some(pos_bag(post, config)?) } else { None });
        char_bags.push(if need_char { Some(char_bag(post, config)?) } else { None });
    }

    let word_vocab_size = distinct_gram_count(word_bags.iter().flatten());
    let pos_vocab_size = distinct_gram_count(pos_bags.iter().flatten());
    let char_vocab_size = distinct_gram_count(char_bags.iter().flatten());

    // features: per-thread unigram vectors feed the similarity features;
    // the discretizer is fitted on prior threads only
    let mut features: Vec<Option<PostFeatures>> = vec![None; num_posts];
    let mut discretizer = None;
    if config.use_feature_model {
        let mut raw: Vec<RawPostFeatures> = Vec::with_capacity(num_posts);
        for thread in &corpus.threads {
            let vectors: Vec<PostVector> = thread
                .posts
                .iter()
                .map(|p| {
                    extract_ngrams(p, 1, GramKind::Word).map(|bag| vectorize_bag(&bag, &corpus.vocab))
                })
                .collect::<Result<_>>()?;
            for pos in 0..thread.posts.len() {
                raw.push(extract_raw_features(thread, &vectors, pos));
            }
        }
        let prior_raw: Vec<RawPostFeatures> = thread_ranges
            .iter()
            .enumerate()
            .filter(|(t, _)| is_prior[*t])
            .flat_map(|(_, r)| raw[r.clone()].iter().cloned())
            .collect();
        let disc = FeatureDiscretizer::fit(&prior_raw);
        for (i, r) in raw.iter().enumerate() {
            features[i] = Some(disc.discretize(r));
        }
        discretizer = Some(disc);
    }

    // GMM vectors project onto the top-frequency unigrams of prior threads
    let mut gmm_vectors: Vec<Option<Vec<f64>>> = vec![None; num_posts];
    let mut gmm_space = None;
    if config.use_gmm {
        let mut unigram_lists: Vec<Vec<String>> = Vec::with_capacity(num_posts);
        for post in corpus.posts() {
            unigram_lists.push(extract_ngrams(post, 1, GramKind::Word)?.grams);
        }
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for (t, range) in thread_ranges.iter().enumerate() {
            if !is_prior[t] {
                continue;
            }
            for list in &unigram_lists[range.clone()] {
                for g in list {
                    *freq.entry(g.as_str()).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let space = GmmSpace {
            grams: ranked
                .into_iter()
                .take(config.gmm_vector_dim)
                .map(|(g, _)| g.to_string())
                .collect(),
        };
        if space.grams.is_empty() {
            return Err(Error::Training("no unigrams available for GMM vectors".into()));
        }
        for (i, list) in unigram_lists.iter().enumerate() {
            gmm_vectors[i] = Some(space.project(list));
        }
        gmm_space = Some(space);
    }

    let spaces = ObservationSpaces {
        word_vocab_size,
        pos_vocab_size,
        char_vocab_size,
        discretizer,
        gmm_space,
    };
    let posts = word_bags
        .into_iter()
        .zip(pos_bags)
        .zip(char_bags)
        .zip(features)
        .zip(gmm_vectors)
        .map(|((((w, p), c), f), g)| PostObservation {
            word_grams: w.map(|b| b.grams),
            pos_grams: p.map(|b| b.grams),
            char_grams: c.map(|b| b.grams),
            features: f,
            gmm_vector: g,
        })
        .collect();
    Ok(ObservationSet { posts, thread_ranges, spaces })
}

/// Rebuilds observations against a saved model's spaces (sizes, discretizer
/// and GMM axes come from the model, not the new corpus).
pub fn build_observations_with_spaces(
    corpus: &Corpus,
    config: &ModelConfig,
    spaces: &ObservationSpaces,
) -> Result<ObservationSet> {
    let mut built = build_observations(corpus, config, None)?;
    if config.use_feature_model {
        let disc = spaces
            .discretizer
            .as_ref()
            .ok_or_else(|| Error::ModelFile("model lacks the feature discretizer".into()))?;
        // re-discretize raw features with the model's thresholds
        let mut idx = 0usize;
        for thread in &corpus.threads {
            let vectors: Vec<PostVector> = thread
                .posts
                .iter()
                .map(|p| {
                    extract_ngrams(p, 1, GramKind::Word).map(|bag| vectorize_bag(&bag, &corpus.vocab))
                })
                .collect::<Result<_>>()?;
            for pos in 0..thread.posts.len() {
                let raw = extract_raw_features(thread, &vectors, pos);
                built.posts[idx].features = Some(disc.discretize(&raw));
                idx += 1;
            }
        }
    }
    if config.use_gmm {
        let space = spaces
            .gmm_space
            .as_ref()
            .ok_or_else(|| Error::ModelFile("model lacks the GMM vector space".into()))?;
        for (i, post) in corpus.posts().enumerate() {
            let unigrams = extract_ngrams(post, 1, GramKind::Word)?.grams;
            built.posts[i].gmm_vector = Some(space.project(&unigrams));
        }
    }
    built.spaces = spaces.clone();
    Ok(built)
}
