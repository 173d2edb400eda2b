//! Model serialization: fitted HMM parameters plus everything decoding
//! needs (config, state-to-label names, discretizer, GMM axes) in one JSON
//! file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hmm::observations::{build_observations_with_spaces, ObservationSpaces};
use crate::hmm::{viterbi, HmmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub config: ModelConfig,
    pub label_set: Vec<String>,
    /// Label name attached to each state id.
    pub state_labels: Vec<String>,
    pub params: HmmParams,
    pub spaces: ObservationSpaces,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl SavedModel {
    pub fn new(
        config: ModelConfig,
        label_set: Vec<String>,
        state_labels: Vec<String>,
        params: HmmParams,
        spaces: ObservationSpaces,
    ) -> SavedModel {
        SavedModel {
            format_version: MODEL_FORMAT_VERSION,
            config,
            label_set,
            state_labels,
            params,
            spaces,
        }
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<SavedModel> {
        let text = fs::read_to_string(path)?;
        let model: SavedModel =
            serde_json::from_str(&text).map_err(|e| Error::ModelFile(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        if model.state_labels.len() != model.params.num_states {
            return Err(Error::ModelFile("state label list does not match the state count".into()));
        }
        Ok(model)
    }

    /// Decodes a corpus under this model: per-post state ids (thread-major)
    /// without any re-estimation. Grams unknown to the model score through
    /// the unseen bucket.
    pub fn decode(&self, corpus: &Corpus) -> Result<Vec<usize>> {
        let obs = build_observations_with_spaces(corpus, &self.config, &self.spaces)?;
        let mut out = Vec::with_capacity(obs.len());
        for range in &obs.thread_ranges {
            let (path, _) =
                viterbi(&obs.posts[range.clone()], &self.params, self.config.per_post_normalization)?;
            out.extend(path);
        }
        Ok(out)
    }

    /// Decoded label names per post.
    pub fn decode_labels(&self, corpus: &Corpus) -> Result<Vec<String>> {
        Ok(self
            .decode(corpus)?
            .into_iter()
            .map(|s| self.state_labels[s].clone())
            .collect())
    }
}
