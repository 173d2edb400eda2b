//! Model and experiment configuration.
//!
//! Config files are JSON and use the same parameter names as the library API
//! (`initialNumClusters`, `stateSizeThreshold`, `lmType`, `delta1`, ...), so a
//! config file doubles as a record of the run. Every field has a default and
//! an empty object `{}` is a valid config.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N-gram order of the word (and POS) language models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmType {
    Unigram,
    Bigram,
}

impl LmType {
    pub fn order(self) -> usize {
        match self {
            LmType::Unigram => 1,
            LmType::Bigram => 2,
        }
    }
}

/// How character n-gram language models participate in emission scoring.
///
/// `Isolation` replaces the word language model with a character one;
/// `Combined` keeps the word model and multiplies in the character factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharLmMode {
    Off,
    Isolation,
    Combined,
}

pub fn default_label_set() -> Vec<String> {
    [
        "Problem",
        "Solution",
        "Clarification-Request",
        "Clarification",
        "Feedback",
        "Other",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// All knobs of the conversation-model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of clusters requested from the initial agglomerative clustering.
    pub initial_num_clusters: usize,
    /// Merge states smaller than `state_size_threshold` into one noise state.
    pub merge_insertion_states: bool,
    pub state_size_threshold: usize,
    pub lm_type: LmType,
    /// Smoothing constant for language and feature models.
    pub delta1: f64,
    /// Smoothing constant for initial-state and transition probabilities.
    pub delta2: f64,
    pub max_num_iterations: usize,
    pub num_mixture_components: usize,
    /// Word-vs-POS mixing weight of the combined emission; 1.0 reduces to the
    /// plain word model.
    pub lambda: f64,
    pub use_pos_model: bool,
    pub use_feature_model: bool,
    pub use_gmm: bool,
    /// Cluster on per-post embedding vectors instead of n-gram count vectors.
    pub use_embeddings: bool,
    /// Per-gram lambda estimated from state-conditional frequency fractions.
    pub use_fractional_lambda: bool,
    pub char_lm_mode: CharLmMode,
    pub char_ngram_order: usize,
    /// Replace word n-grams with skip-bigrams (gap of at most two tokens).
    pub use_skipgrams: bool,
    /// TF-IDF weighting of clustering vectors. Off by default: it did not
    /// help in the original experiments.
    pub use_tfidf: bool,
    pub case_fold: bool,
    /// Off by default: stopword removal degraded performance.
    pub remove_stopwords: bool,
    pub label_set: Vec<String>,
    /// Relative tolerance on the total observation log-probability.
    pub convergence_tol: f64,
    /// Dimensionality cap of the top-unigram count vectors fed to the GMM.
    pub gmm_vector_dim: usize,
    /// Normalize emission scores across states for each post before decoding.
    /// Does not change decoded paths, only the convergence totals.
    pub per_post_normalization: bool,
    /// Row-stochastic transition estimation instead of the default global
    /// normalization over all (i, j) pairs.
    pub row_normalize_transitions: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            initial_num_clusters: 30,
            merge_insertion_states: true,
            state_size_threshold: 25,
            lm_type: LmType::Unigram,
            delta1: 1e-2,
            delta2: 1e-9,
            max_num_iterations: 100,
            num_mixture_components: 3,
            lambda: 0.999,
            use_pos_model: false,
            use_feature_model: false,
            use_gmm: false,
            use_embeddings: false,
            use_fractional_lambda: false,
            char_lm_mode: CharLmMode::Off,
            char_ngram_order: 3,
            use_skipgrams: false,
            use_tfidf: false,
            case_fold: true,
            remove_stopwords: false,
            label_set: default_label_set(),
            convergence_tol: 1e-6,
            gmm_vector_dim: 100,
            per_post_normalization: false,
            row_normalize_transitions: false,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta1 > 0.0) || !self.delta1.is_finite() {
            return Err(Error::Parameter(format!("delta1 must be > 0, got {}", self.delta1)));
        }
        if !(self.delta2 > 0.0) || !self.delta2.is_finite() {
            return Err(Error::Parameter(format!("delta2 must be > 0, got {}", self.delta2)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Parameter(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.initial_num_clusters < 1 {
            return Err(Error::Parameter("initialNumClusters must be >= 1".into()));
        }
        if self.num_mixture_components < 1 {
            return Err(Error::Parameter("numMixtureComponents must be >= 1".into()));
        }
        if self.char_ngram_order < 1 {
            return Err(Error::Parameter("charNGramOrder must be >= 1".into()));
        }
        if self.gmm_vector_dim < 1 {
            return Err(Error::Parameter("gmmVectorDim must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Parameter("convergenceTol must be > 0".into()));
        }
        if self.label_set.is_empty() {
            return Err(Error::Config("labelSet must not be empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.label_set {
            if !seen.insert(name) {
                return Err(Error::Config(format!("duplicate label '{name}' in labelSet")));
            }
        }
        if self.use_gmm && self.use_pos_model {
            return Err(Error::Config("the GMM emission cannot be combined with the POS model".into()));
        }
        if self.use_gmm && self.use_fractional_lambda {
            return Err(Error::Config("the GMM emission cannot be combined with fractional lambda".into()));
        }
        if self.use_gmm && self.char_lm_mode != CharLmMode::Off {
            return Err(Error::Config("the GMM emission cannot be combined with character LMs".into()));
        }
        if self.char_lm_mode == CharLmMode::Isolation && self.use_pos_model {
            return Err(Error::Config(
                "charLmMode=isolation removes the word model, so word/POS pairing is undefined".into(),
            ));
        }
        if self.use_fractional_lambda && !self.use_pos_model {
            return Err(Error::Config("useFractionalLambda requires usePosModel".into()));
        }
        Ok(())
    }

    /// True when loading requires a POS tag on every token.
    pub fn requires_pos(&self) -> bool {
        self.use_pos_model
    }

    /// Gram order used for word-side bags (skip-bigrams are order 2).
    pub fn word_order(&self) -> usize {
        if self.use_skipgrams {
            2
        } else {
            self.lm_type.order()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExperimentMode {
    Unsupervised,
    SemiSupervised,
}

/// A cross-validation / sweep harness configuration wrapping a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub folds: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub mode: ExperimentMode,
    /// Parameter grid for `sweep`: model field name -> candidate values.
    pub grid: BTreeMap<String, Vec<serde_json::Value>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            folds: 5,
            repetitions: 1,
            master_seed: 42,
            mode: ExperimentMode::Unsupervised,
            grid: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.repetitions < 1 {
            return Err(Error::Parameter("repetitions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Applies `name -> value` overrides to a config by JSON field name.
/// Unknown names are rejected.
pub fn apply_overrides(
    base: &ModelConfig,
    overrides: &BTreeMap<String, serde_json::Value>,
) -> Result<ModelConfig> {
    let mut value = serde_json::to_value(base).expect("config serializes");
    let obj = value.as_object_mut().expect("config is an object");
    for (key, v) in overrides {
        if !obj.contains_key(key) {
            return Err(Error::Parameter(format!("unknown config parameter '{key}'")));
        }
        obj.insert(key.clone(), v.clone());
    }
    let cfg: ModelConfig = serde_json::from_value(value)
        .map_err(|e| Error::Parameter(format!("bad override value: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Deterministically derives a child seed from a base seed and a tag path,
/// e.g. `derive_seed(master, &[rep, fold])`. Splitmix64 mixing.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags {
        x = x
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(t.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn empty_json_is_a_valid_config() {
        let cfg: ModelConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ModelConfig::default());
        let exp: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(exp, ExperimentConfig::default());
    }

    #[test]
    fn table_parameter_names_round_trip() {
        let cfg = ModelConfig::default();
        let json = serde_json::to_value(&cfg).unwrap();
        for key in [
            "initialNumClusters",
            "mergeInsertionStates",
            "stateSizeThreshold",
            "lmType",
            "delta1",
            "delta2",
            "maxNumIterations",
            "numMixtureComponents",
            "lambda",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["lmType"], "unigram");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.lambda = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Parameter(_))));
        let mut cfg = ModelConfig::default();
        cfg.delta1 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.use_gmm = true;
        cfg.use_pos_model = true;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_apply_by_field_name() {
        let base = ModelConfig::default();
        let mut ov = BTreeMap::new();
        ov.insert("delta1".to_string(), serde_json::json!(0.1));
        ov.insert("initialNumClusters".to_string(), serde_json::json!(6));
        let cfg = apply_overrides(&base, &ov).unwrap();
        assert_eq!(cfg.delta1, 0.1);
        assert_eq!(cfg.initial_num_clusters, 6);

        let mut bad = BTreeMap::new();
        bad.insert("noSuchParam".to_string(), serde_json::json!(1));
        assert!(apply_overrides(&base, &bad).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        let a = derive_seed(7, &[0, 0]);
        let b = derive_seed(7, &[0, 1]);
        let c = derive_seed(7, &[1, 0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[0, 0]));
    }
}
