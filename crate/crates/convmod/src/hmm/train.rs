//! EM training: cluster-initialized unsupervised runs and label-initialized
//! semi-supervised runs, both with hard Viterbi reassignment.

use std::ops::Range;

use crate::clusterer::{cluster_distances, merge_small_states, ClusterAssignment, DistanceMatrix};
use crate::config::{derive_seed, CharLmMode, ModelConfig};
use crate::corpus::{Corpus, Vocab};
use crate::emission::{
    fit_feature_model, fit_gmm, FracLambdaTables, FreqTable, GaussianMixture, LanguageModel,
};
use crate::error::{Error, Result};
use crate::hmm::observations::{build_observations, word_bag, ObservationSet, PostObservation};
use crate::hmm::{
    estimate_initial_probs, estimate_transition_probs, viterbi_decode, EmissionParams, HmmParams,
    StateEmission, TrainingTrace,
};
use crate::preprocess::{tfidf_weight, vectorize_bag, GramKind, PostVector};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final per-post state ids. Thread-major over the decoded threads:
    /// the whole corpus when unsupervised, the evaluation threads when
    /// semi-supervised (where ids are label indices).
    pub assignment: Vec<usize>,
    pub params: HmmParams,
    pub trace: TrainingTrace,
    pub warnings: Vec<String>,
}

fn gram_lists_for_state<'a>(
    obs: &'a ObservationSet,
    members: &[usize],
    pick: impl Fn(&'a PostObservation) -> Option<&'a Vec<String>>,
) -> Vec<&'a Vec<String>> {
    members
        .iter()
        .filter_map(|&i| pick(&obs.posts[i]))
        .collect()
}

/// Fits every per-state emission model from a hard assignment.
/// `fit_round` salts the per-state GMM seeds so restarts differ across EM
/// iterations but stay reproducible.
fn fit_emissions(
    obs: &ObservationSet,
    assignment: &[usize],
    num_states: usize,
    config: &ModelConfig,
    fit_round: u64,
) -> Result<EmissionParams> {
    let mut states = Vec::with_capacity(num_states);
    for k in 0..num_states {
        let members: Vec<usize> = (0..obs.len()).filter(|&i| assignment[i] == k).collect();
        let emission = if config.use_gmm {
            let vectors: Vec<Vec<f64>> = members
                .iter()
                .filter_map(|&i| obs.posts[i].gmm_vector.clone())
                .collect();
            let dim = obs
                .spaces
                .gmm_space
                .as_ref()
                .map(|s| s.dim())
                .unwrap_or_else(|| vectors.first().map_or(1, Vec::len));
            let gmm = if vectors.is_empty() {
                GaussianMixture::standard(dim)
            } else {
                fit_gmm(
                    &vectors,
                    config.num_mixture_components,
                    derive_seed(config.seed, &[fit_round, k as u64]),
                )?
            };
            let features = if config.use_feature_model {
                let feats: Vec<_> = members
                    .iter()
                    .filter_map(|&i| obs.posts[i].features.as_ref())
                    .collect();
                Some(fit_feature_model(&feats, config.delta1))
            } else {
                None
            };
            StateEmission::Gmm { gmm, features }
        } else {
            let word = if config.char_lm_mode == CharLmMode::Isolation {
                None
            } else {
                let lists = gram_lists_for_state(obs, &members, |p| p.word_grams.as_ref());
                Some(LanguageModel::from_gram_lists(
                    lists.iter().map(|l| l.iter()),
                    GramKind::Word,
                    config.word_order(),
                    config.delta1,
                    obs.spaces.word_vocab_size,
                )?)
            };
            let pos = if config.use_pos_model {
                let lists = gram_lists_for_state(obs, &members, |p| p.pos_grams.as_ref());
                Some(LanguageModel::from_gram_lists(
                    lists.iter().map(|l| l.iter()),
                    GramKind::Pos,
                    config.lm_type.order(),
                    config.delta1,
                    obs.spaces.pos_vocab_size,
                )?)
            } else {
                None
            };
            let chars = if config.char_lm_mode != CharLmMode::Off {
                let lists = gram_lists_for_state(obs, &members, |p| p.char_grams.as_ref());
                Some(LanguageModel::from_gram_lists(
                    lists.iter().map(|l| l.iter()),
                    GramKind::Char,
                    config.char_ngram_order,
                    config.delta1,
                    obs.spaces.char_vocab_size,
                )?)
            } else {
                None
            };
            let features = if config.use_feature_model {
                let feats: Vec<_> = members
                    .iter()
                    .filter_map(|&i| obs.posts[i].features.as_ref())
                    .collect();
                Some(fit_feature_model(&feats, config.delta1))
            } else {
                None
            };
            StateEmission::Lm { word, pos, chars, features }
        };
        states.push(emission);
    }

    let frac_tables = if config.use_fractional_lambda {
        let word_lists: Vec<&[String]> = obs
            .posts
            .iter()
            .map(|p| p.word_grams.as_deref().unwrap_or(&[]))
            .collect();
        let pos_lists: Vec<&[String]> = obs
            .posts
            .iter()
            .map(|p| p.pos_grams.as_deref().unwrap_or(&[]))
            .collect();
        Some(FracLambdaTables {
            word: FreqTable::build(word_lists.iter().map(|l| l.iter()), assignment, num_states),
            pos: FreqTable::build(pos_lists.iter().map(|l| l.iter()), assignment, num_states),
        })
    } else {
        None
    };

    Ok(EmissionParams { states, lambda: config.lambda, frac_tables })
}

fn fit_hmm_params(
    obs: &ObservationSet,
    assignment: &[usize],
    ranges: &[Range<usize>],
    num_states: usize,
    config: &ModelConfig,
    fit_round: u64,
) -> Result<HmmParams> {
    let emissions = fit_emissions(obs, assignment, num_states, config, fit_round)?;
    let pi = estimate_initial_probs(assignment, ranges, num_states, config.delta2);
    let phi = estimate_transition_probs(
        assignment,
        ranges,
        num_states,
        config.delta2,
        config.row_normalize_transitions,
    );
    Ok(HmmParams { pi, phi, emissions, num_states })
}

/// Decodes the listed threads; returns the flat assignment (in the given
/// thread order) and the summed path log-probability.
fn decode_threads(
    obs: &ObservationSet,
    threads: &[usize],
    params: &HmmParams,
    config: &ModelConfig,
) -> Result<(Vec<usize>, f64)> {
    let log_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    let log_phi: Vec<Vec<f64>> = params
        .phi
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();
    let mut assignment = Vec::new();
    let mut total = 0.0;
    for &t in threads {
        let range = obs.thread_ranges[t].clone();
        let mut scores = Vec::with_capacity(range.len());
        for i in range {
            let mut row = Vec::with_capacity(params.num_states);
            for s in 0..params.num_states {
                row.push(params.emissions.score(&obs.posts[i], s)?);
            }
            if config.per_post_normalization {
                let z = crate::emission::gmm::log_sum_exp(&row);
                for v in row.iter_mut() {
                    *v -= z;
                }
            }
            scores.push(row);
        }
        let (path, lp) = viterbi_decode(&log_pi, &log_phi, &scores);
        assignment.extend(path);
        total += lp;
    }
    Ok((assignment, total))
}

fn relative_delta(current: f64, previous: f64) -> f64 {
    (current - previous).abs() / previous.abs().max(1e-12)
}

/// Builds the clustering vectors: embeddings when configured, word-gram
/// count vectors (optionally TF-IDF weighted) otherwise.
fn initial_assignment(corpus: &Corpus, config: &ModelConfig) -> Result<ClusterAssignment> {
    let k = config.initial_num_clusters;
    if config.use_embeddings {
        let vectors: Vec<Vec<f64>> = corpus
            .posts()
            .map(|p| {
                p.embedding.clone().ok_or_else(|| {
                    Error::Config("useEmbeddings is on but the corpus has no embeddings".into())
                })
            })
            .collect::<Result<_>>()?;
        if k > vectors.len() {
            return Err(Error::Parameter(format!(
                "initialNumClusters {k} exceeds the number of posts {}",
                vectors.len()
            )));
        }
        cluster_distances(DistanceMatrix::from_embeddings(&vectors), k)
    } else {
        // clustering always runs on word-gram count vectors over the
        // corpus-wide gram vocabulary, whatever emission family is in play
        let bags: Vec<_> = corpus
            .posts()
            .map(|p| word_bag(p, config))
            .collect::<Result<_>>()?;
        let mut gram_vocab = Vocab::default();
        for bag in &bags {
            for g in &bag.grams {
                gram_vocab.insert(g);
            }
        }
        let mut vectors: Vec<PostVector> =
            bags.iter().map(|b| vectorize_bag(b, &gram_vocab)).collect();
        if config.use_tfidf {
            tfidf_weight(&mut vectors);
        }
        if k > vectors.len() {
            return Err(Error::Parameter(format!(
                "initialNumClusters {k} exceeds the number of posts {}",
                vectors.len()
            )));
        }
        cluster_distances(DistanceMatrix::from_vectors(&vectors), k)
    }
}

/// Unsupervised EM: cluster for priors, then iterate
/// (merge small states, fit emissions, estimate pi/phi, Viterbi) until the
/// total observation log-probability converges or `maxNumIterations` is hit.
pub fn train_unsupervised(corpus: &Corpus, config: &ModelConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.max_num_iterations < 1 {
        return Err(Error::Parameter("maxNumIterations must be >= 1 for unsupervised training".into()));
    }
    let obs = build_observations(corpus, config, None)?;
    if obs.is_empty() {
        return Err(Error::Validation("cannot train on an empty corpus".into()));
    }
    let all_threads: Vec<usize> = (0..corpus.num_threads()).collect();
    let initial = initial_assignment(corpus, config)?;

    let mut assignment = initial.labels;
    let mut num_states = initial.num_states;
    let mut log_probs: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut params: Option<HmmParams> = None;

    for iteration in 1..=config.max_num_iterations {
        if config.merge_insertion_states {
            let merged = merge_small_states(
                &ClusterAssignment { labels: assignment.clone(), num_states },
                config.state_size_threshold,
            );
            assignment = merged.labels;
            num_states = merged.num_states;
        }
        if num_states < 2 {
            return Err(Error::Training(format!(
                "state count collapsed to {num_states} at iteration {iteration}"
            )));
        }
        let fitted = fit_hmm_params(
            &obs,
            &assignment,
            &obs.thread_ranges,
            num_states,
            config,
            iteration as u64,
        )?;
        let (new_assignment, lp) = decode_threads(&obs, &all_threads, &fitted, config)?;
        params = Some(fitted);
        assignment = new_assignment;
        log_probs.push(lp);

        let distinct = ClusterAssignment { labels: assignment.clone(), num_states }.distinct_states();
        if distinct < 2 {
            return Err(Error::Training(format!(
                "decoded states collapsed to {distinct} at iteration {iteration}"
            )));
        }
        if log_probs.len() >= 2 {
            let prev = log_probs[log_probs.len() - 2];
            if relative_delta(lp, prev) < config.convergence_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        assignment,
        params: params.expect("at least one iteration ran"),
        trace: TrainingTrace { log_probs, converged },
        warnings: Vec::new(),
    })
}

/// Semi-supervised EM. Emissions, pi and phi are first fitted from the gold
/// labels of the training threads; EM then re-estimates from the evaluation
/// threads' own assignments only. State ids are label indices throughout.
/// `maxNumIterations = 0` decodes once under the supervised priors with no
/// re-estimation (and an empty trace).
pub fn train_semisupervised(
    corpus: &Corpus,
    train_threads: &[usize],
    eval_threads: &[usize],
    config: &ModelConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.use_embeddings {
        return Err(Error::Config(
            "semi-supervised training takes priors from labels, not embedding clusters".into(),
        ));
    }
    if train_threads.is_empty() {
        return Err(Error::Parameter("semi-supervised training requires a non-empty training fold".into()));
    }
    let num_states = corpus.label_set.len();
    let obs = build_observations(corpus, config, Some(train_threads))?;

    // gold-label assignment over the training threads
    let mut train_assignment = Vec::new();
    let mut train_ranges: Vec<Range<usize>> = Vec::new();
    let mut cursor = 0usize;
    let mut train_flat_indices: Vec<usize> = Vec::new();
    for &t in train_threads {
        let range = obs.thread_ranges[t].clone();
        let thread = &corpus.threads[t];
        for (offset, post) in thread.posts.iter().enumerate() {
            let label = post.gold_label.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "training thread '{}' post {} lacks a gold label",
                    thread.thread_id, post.post_index
                ))
            })?;
            let idx = corpus.label_set.index_of(label.as_str()).expect("validated at load");
            train_assignment.push(idx);
            train_flat_indices.push(range.start + offset);
        }
        train_ranges.push(cursor..cursor + thread.posts.len());
        cursor += thread.posts.len();
    }

    let mut warnings = Vec::new();
    let mut seen = vec![false; num_states];
    for &s in &train_assignment {
        seen[s] = true;
    }
    for (i, &present) in seen.iter().enumerate() {
        if !present {
            warnings.push(format!(
                "label '{}' absent from the training fold; its emissions fall back to the uniform smoothed model",
                corpus.label_set.name(i)
            ));
        }
    }

    // view of the training posts only, for the supervised fit
    let train_obs = ObservationSet {
        posts: train_flat_indices.iter().map(|&i| obs.posts[i].clone()).collect(),
        thread_ranges: train_ranges.clone(),
        spaces: obs.spaces.clone(),
    };
    let mut params = fit_hmm_params(&train_obs, &train_assignment, &train_ranges, num_states, config, 0)?;

    if config.max_num_iterations == 0 {
        let (assignment, _) = decode_threads(&obs, eval_threads, &params, config)?;
        return Ok(TrainOutcome {
            assignment,
            params,
            trace: TrainingTrace { log_probs: Vec::new(), converged: false },
            warnings,
        });
    }

    // eval-side ranges in eval-thread order for re-estimation
    let mut eval_ranges: Vec<Range<usize>> = Vec::new();
    let mut at = 0usize;
    for &t in eval_threads {
        let len = obs.thread_ranges[t].len();
        eval_ranges.push(at..at + len);
        at += len;
    }
    let eval_obs = ObservationSet {
        posts: eval_threads
            .iter()
            .flat_map(|&t| obs.posts[obs.thread_ranges[t].clone()].iter().cloned())
            .collect(),
        thread_ranges: eval_ranges.clone(),
        spaces: obs.spaces.clone(),
    };

    let mut assignment = Vec::new();
    let mut log_probs: Vec<f64> = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_num_iterations {
        let (new_assignment, lp) = decode_threads(&obs, eval_threads, &params, config)?;
        assignment = new_assignment;
        log_probs.push(lp);
        if log_probs.len() >= 2 {
            let prev = log_probs[log_probs.len() - 2];
            if relative_delta(lp, prev) < config.convergence_tol {
                converged = true;
                break;
            }
        }
        if iteration < config.max_num_iterations {
            params = fit_hmm_params(
                &eval_obs,
                &assignment,
                &eval_ranges,
                num_states,
                config,
                iteration as u64,
            )?;
        }
    }

    Ok(TrainOutcome {
        assignment,
        params,
        trace: TrainingTrace { log_probs, converged },
        warnings,
    })
}
