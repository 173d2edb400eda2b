//! Synthetic corpora sampled from a planted HMM with (mostly) disjoint
//! per-state vocabularies. Gold labels carry the generating state, which
//! gives recovery tests an exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ModelConfig;
use crate::corpus::{CategoryLabel, Corpus, Post, Thread, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_states: usize,
    pub num_threads: usize,
    pub min_thread_len: usize,
    pub max_thread_len: usize,
    /// Exclusive word types per state.
    pub vocab_per_state: usize,
    /// Probability that a token is drawn from the shared pool instead of the
    /// state's exclusive vocabulary.
    pub shared_vocab_frac: f64,
    pub min_post_len: usize,
    pub max_post_len: usize,
    pub pi: Vec<f64>,
    /// Row-stochastic generator transitions.
    pub trans: Vec<Vec<f64>>,
    pub num_pos_tags: usize,
    /// Probability that a token's tag is the state's preferred tag.
    pub pos_informative: f64,
    pub with_embeddings: bool,
    pub embedding_dim: usize,
    pub label_names: Vec<String>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The planted three-state corpus used by the recovery checks:
    /// 200 threads of 3 to 10 posts, 90% of each state's vocabulary
    /// exclusive to it, informative POS tags. Posts are long relative to the
    /// state vocabularies so that count vectors approximate the state word
    /// distributions and complete linkage separates cleanly.
    pub fn three_state(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_states: 3,
            num_threads: 200,
            min_thread_len: 3,
            max_thread_len: 10,
            vocab_per_state: 15,
            shared_vocab_frac: 0.1,
            min_post_len: 18,
            max_post_len: 36,
            pi: vec![0.7, 0.2, 0.1],
            trans: vec![
                vec![0.15, 0.65, 0.20],
                vec![0.30, 0.40, 0.30],
                vec![0.20, 0.30, 0.50],
            ],
            num_pos_tags: 6,
            pos_informative: 0.7,
            with_embeddings: false,
            embedding_dim: 8,
            label_names: vec!["Problem".into(), "Solution".into(), "Other".into()],
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_states < 1
            || self.label_names.len() != self.num_states
            || self.pi.len() != self.num_states
            || self.trans.len() != self.num_states
        {
            return Err(Error::Parameter("inconsistent synthetic spec dimensions".into()));
        }
        if self.min_thread_len < 1 || self.min_thread_len > self.max_thread_len {
            return Err(Error::Parameter("bad thread length range".into()));
        }
        if self.min_post_len < 1 || self.min_post_len > self.max_post_len {
            return Err(Error::Parameter("bad post length range".into()));
        }
        Ok(())
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let mut x: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        if x < p {
            return i;
        }
        x -= p;
    }
    probs.len() - 1
}

/// Samples a corpus from the planted model. Every post is gold-labeled with
/// its generating state's label name.
pub fn generate(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // per-state exclusive vocabularies plus one shared pool
    let state_words: Vec<Vec<String>> = (0..spec.num_states)
        .map(|s| (0..spec.vocab_per_state).map(|i| format!("w{s}x{i}")).collect())
        .collect();
    let shared_count = ((spec.vocab_per_state as f64 * spec.shared_vocab_frac).ceil() as usize).max(1);
    let shared_words: Vec<String> = (0..shared_count).map(|i| format!("shared{i}")).collect();

    let mut threads = Vec::with_capacity(spec.num_threads);
    for t in 0..spec.num_threads {
        let len = rng.gen_range(spec.min_thread_len..=spec.max_thread_len);
        let mut state = sample_categorical(&mut rng, &spec.pi);
        let mut posts = Vec::with_capacity(len);
        for y in 0..len {
            if y > 0 {
                state = sample_categorical(&mut rng, &spec.trans[state]);
            }
            let post_len = rng.gen_range(spec.min_post_len..=spec.max_post_len);
            let tokens: Vec<Token> = (0..post_len)
                .map(|_| {
                    let surface = if rng.gen::<f64>() < spec.shared_vocab_frac {
                        shared_words[rng.gen_range(0..shared_words.len())].clone()
                    } else {
                        state_words[state][rng.gen_range(0..spec.vocab_per_state)].clone()
                    };
                    let tag = if rng.gen::<f64>() < spec.pos_informative {
                        format!("TAG{}", state % spec.num_pos_tags)
                    } else {
                        format!("TAG{}", rng.gen_range(0..spec.num_pos_tags))
                    };
                    Token::new(surface, tag)
                })
                .collect();
            let embedding = if spec.with_embeddings {
                let dim = spec.embedding_dim.max(spec.num_states);
                Some(
                    (0..dim)
                        .map(|d| {
                            let z: f64 = rng.sample(StandardNormal);
                            if d == state {
                                2.0 + 0.3 * z
                            } else {
                                0.3 * z
                            }
                        })
                        .collect(),
                )
            } else {
                None
            };
            let author = if y == 0 {
                format!("op{t}")
            } else {
                format!("u{t}x{}", rng.gen_range(0..3))
            };
            posts.push(Post {
                post_index: y,
                author_id: author,
                tokens,
                gold_label: Some(CategoryLabel(spec.label_names[state].clone())),
                embedding,
                has_quote: false,
                has_url: rng.gen::<f64>() < 0.1,
                has_image: false,
            });
        }
        threads.push(Thread { thread_id: format!("synthetic{t}"), posts });
    }

    let mut cfg = ModelConfig::default();
    cfg.label_set = spec.label_names.clone();
    Corpus::from_threads(threads, &cfg)
}
