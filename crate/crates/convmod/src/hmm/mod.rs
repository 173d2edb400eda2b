//! HMM parameters, Viterbi decoding and the EM training loops in
//! unsupervised and semi-supervised modes.

pub mod model_file;
pub mod observations;
pub mod train;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::emission::gmm::log_sum_exp;
use crate::emission::{
    score_post_combined, score_post_features, score_post_fractional, FeatureModel,
    FracLambdaTables, GaussianMixture, LanguageModel,
};
use crate::error::{Error, Result};

pub use model_file::SavedModel;
pub use observations::{build_observations, ObservationSet, ObservationSpaces, PostObservation};
pub use train::{train_semisupervised, train_unsupervised, TrainOutcome};

/// One state's emission distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StateEmission {
    Lm {
        /// Word n-gram model; absent when the character model runs in
        /// isolation.
        word: Option<LanguageModel>,
        pos: Option<LanguageModel>,
        chars: Option<LanguageModel>,
        features: Option<FeatureModel>,
    },
    Gmm {
        gmm: GaussianMixture,
        features: Option<FeatureModel>,
    },
}

/// All per-state emission models plus the shared mixing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub states: Vec<StateEmission>,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frac_tables: Option<FracLambdaTables>,
}

impl EmissionParams {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Log emission score of one post observation under one state.
    pub fn score(&self, obs: &observations::PostObservation, state: usize) -> Result<f64> {
        let mut total = 0.0;
        match &self.states[state] {
            StateEmission::Lm { word, pos, chars, features } => {
                match (word, pos) {
                    (Some(word_lm), Some(pos_lm)) => {
                        let word_grams = obs.word_grams.as_deref().unwrap_or(&[]);
                        let pos_grams = obs.pos_grams.as_deref().unwrap_or(&[]);
                        total += match &self.frac_tables {
                            Some(tables) => score_post_fractional(
                                word_grams, pos_grams, word_lm, pos_lm, tables, state,
                            )?,
                            None => score_post_combined(
                                word_grams, pos_grams, word_lm, pos_lm, self.lambda,
                            )?,
                        };
                    }
                    (Some(word_lm), None) => {
                        total += word_lm.score_grams(obs.word_grams.as_deref().unwrap_or(&[]));
                    }
                    (None, _) => {}
                }
                if let Some(char_lm) = chars {
                    total += char_lm.score_grams(obs.char_grams.as_deref().unwrap_or(&[]));
                }
                if let Some(fm) = features {
                    let pf = obs.features.as_ref().ok_or_else(|| {
                        Error::Training("feature model present but no features extracted".into())
                    })?;
                    total += score_post_features(pf, fm);
                }
            }
            StateEmission::Gmm { gmm, features } => {
                let x = obs.gmm_vector.as_ref().ok_or_else(|| {
                    Error::Training("GMM emission present but no post vector built".into())
                })?;
                total += gmm.log_density(x)?;
                if let Some(fm) = features {
                    let pf = obs.features.as_ref().ok_or_else(|| {
                        Error::Training("feature model present but no features extracted".into())
                    })?;
                    total += score_post_features(pf, fm);
                }
            }
        }
        Ok(total)
    }
}

/// Initial-state vector, transition matrix and per-state emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub pi: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub emissions: EmissionParams,
    pub num_states: usize,
}

/// Per-iteration total observation log-probability of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub log_probs: Vec<f64>,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn iterations(&self) -> usize {
        self.log_probs.len()
    }
}

/// pi_i = (init_counts_i + d2) / (sum_k init_counts_k + d2 * numStates),
/// counting first posts of threads.
pub fn estimate_initial_probs(
    assignment: &[usize],
    thread_ranges: &[Range<usize>],
    num_states: usize,
    delta2: f64,
) -> Vec<f64> {
    let mut counts = vec![0u64; num_states];
    for range in thread_ranges {
        if range.start < range.end {
            counts[assignment[range.start]] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + delta2 * num_states as f64;
    counts.iter().map(|&c| (c as f64 + delta2) / denom).collect()
}

/// phi_{i,j} = (trans_counts_{i,j} + d2) / (sum_{k,l} trans_counts_{k,l} +
/// d2 * numStates^2): the normalization is global over all (i, j) pairs.
/// `row_normalize` switches to the conventional row-stochastic estimate for
/// comparison runs.
pub fn estimate_transition_probs(
    assignment: &[usize],
    thread_ranges: &[Range<usize>],
    num_states: usize,
    delta2: f64,
    row_normalize: bool,
) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0u64; num_states]; num_states];
    for range in thread_ranges {
        for a in range.start..range.end.saturating_sub(1) {
            counts[assignment[a]][assignment[a + 1]] += 1;
        }
    }
    if row_normalize {
        counts
            .iter()
            .map(|row| {
                let row_total: u64 = row.iter().sum();
                let denom = row_total as f64 + delta2 * num_states as f64;
                row.iter().map(|&c| (c as f64 + delta2) / denom).collect()
            })
            .collect()
    } else {
        let total: u64 = counts.iter().flatten().sum();
        let denom = total as f64 + delta2 * (num_states * num_states) as f64;
        counts
            .iter()
            .map(|row| row.iter().map(|&c| (c as f64 + delta2) / denom).collect())
            .collect()
    }
}

/// Transition counts used by the estimators; exposed for direct checks.
pub fn transition_counts(
    assignment: &[usize],
    thread_ranges: &[Range<usize>],
    num_states: usize,
) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; num_states]; num_states];
    for range in thread_ranges {
        for a in range.start..range.end.saturating_sub(1) {
            counts[assignment[a]][assignment[a + 1]] += 1;
        }
    }
    counts
}

/// Most likely state sequence for one thread given log-space parameters and
/// a per-post per-state emission score matrix. Ties resolve to the
/// lexicographically smallest optimal sequence (lower state ids win).
///
/// The recursion runs back-to-front, so a path's value associates as
/// pi + (b_1 + (phi + (b_2 + ...))); oracle comparisons must sum in the same
/// order to be bit-exact.
pub fn viterbi_decode(
    log_pi: &[f64],
    log_phi: &[Vec<f64>],
    scores: &[Vec<f64>],
) -> (Vec<usize>, f64) {
    let t_len = scores.len();
    let s_len = log_pi.len();
    assert!(t_len > 0, "viterbi needs at least one observation");

    // beta[t][s]: best score of the path suffix starting at t in state s
    let mut beta = vec![vec![0.0f64; s_len]; t_len];
    let mut choice = vec![vec![0usize; s_len]; t_len];
    for s in 0..s_len {
        beta[t_len - 1][s] = scores[t_len - 1][s];
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0usize;
            for j in 0..s_len {
                let v = log_phi[s][j] + beta[t + 1][j];
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            beta[t][s] = scores[t][s] + best;
            choice[t][s] = best_j;
        }
    }

    let mut best = f64::NEG_INFINITY;
    let mut first = 0usize;
    for s in 0..s_len {
        let v = log_pi[s] + beta[0][s];
        if v > best {
            best = v;
            first = s;
        }
    }
    let mut path = Vec::with_capacity(t_len);
    path.push(first);
    for t in 0..t_len - 1 {
        let next = choice[t][path[t]];
        path.push(next);
    }
    (path, best)
}

/// Viterbi over one thread's observations under full HMM parameters.
/// Returns the path and its log-probability.
pub fn viterbi(
    obs: &[observations::PostObservation],
    params: &HmmParams,
    per_post_normalization: bool,
) -> Result<(Vec<usize>, f64)> {
    let log_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    let log_phi: Vec<Vec<f64>> = params
        .phi
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();
    let mut scores = Vec::with_capacity(obs.len());
    for o in obs {
        let mut row = Vec::with_capacity(params.num_states);
        for s in 0..params.num_states {
            row.push(params.emissions.score(o, s)?);
        }
        if per_post_normalization {
            let z = log_sum_exp(&row);
            for v in row.iter_mut() {
                *v -= z;
            }
        }
        scores.push(row);
    }
    Ok(viterbi_decode(&log_pi, &log_phi, &scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_probs_follow_the_formula() {
        // counts [1, 1] -> [0.5, 0.5] for any delta2
        let assignment = vec![0, 1, 1, 0];
        let ranges = vec![0..2, 2..4];
        let pi = estimate_initial_probs(&assignment, &ranges, 2, 0.3);
        assert!((pi[0] - 0.5).abs() < 1e-12);
        assert!((pi[1] - 0.5).abs() < 1e-12);

        // counts [2, 0], tiny delta2
        let assignment = vec![0, 1, 0, 1];
        let pi = estimate_initial_probs(&assignment, &ranges, 2, 1e-9);
        assert!((pi[0] - (2.0 + 1e-9) / (2.0 + 2e-9)).abs() < 1e-15);
        assert!((pi[1] - 1e-9 / (2.0 + 2e-9)).abs() < 1e-15);
        assert!((pi[0] - 1.0).abs() < 1e-9);

        // counts [0, 0]: pure smoothing
        let pi = estimate_initial_probs(&[], &[], 2, 0.5);
        assert_eq!(pi, vec![0.5, 0.5]);
    }

    #[test]
    fn pi_sums_to_one() {
        let assignment = vec![1, 0, 2, 2, 1, 0];
        let ranges = vec![0..3, 3..6];
        for delta2 in [1e-9, 0.01, 1.0] {
            let pi = estimate_initial_probs(&assignment, &ranges, 3, delta2);
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transition_probs_normalize_globally() {
        // counts [[1,1],[1,1]] -> all 0.25
        let assignment = vec![0, 0, 1, 1, 0, 1];
        // transitions: 0->0, 0->1, 1->1, 1->0(thread break? no)
        // thread 1: [0,0,1] -> 0->0, 0->1 ; thread 2: [1,0,1] -> 1->0, 0->1
        let ranges = vec![0..3, 3..6];
        let counts = transition_counts(&assignment, &ranges, 2);
        assert_eq!(counts, vec![vec![1, 2], vec![1, 0]]);

        let sym = vec![0, 0, 1, 1, 1, 0, 0, 1];
        let sym_ranges = vec![0..4, 4..8];
        // thread 1: 0->0, 0->1, 1->1 ; thread 2: 1->0, 0->0, 0->1
        let counts = transition_counts(&sym, &sym_ranges, 2);
        assert_eq!(counts, vec![vec![2, 2], vec![1, 1]]);

        let phi = estimate_transition_probs(&[0, 0, 1, 1, 0, 1, 1, 0], &[0..2, 2..4, 4..6, 6..8], 2, 0.7, false);
        // counts [[1,0],[1? ...]] -- threads of length 2: 0->0, 1->1, 0->1, 1->0
        let total: f64 = phi.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for row in &phi {
            for &v in row {
                assert!((v - (1.0 + 0.7) / (4.0 + 0.7 * 4.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transition_example_matches_substitution() {
        // counts [[3,1],[0,0]], delta2 = 1e-9
        let assignment = vec![0, 0, 0, 0, 1];
        let ranges = vec![0..5];
        let phi = estimate_transition_probs(&assignment, &ranges, 2, 1e-9, false);
        let denom = 4.0 + 1e-9 * 4.0;
        assert!((phi[0][0] - (3.0 + 1e-9) / denom).abs() < 1e-15);
        assert!((phi[0][1] - (1.0 + 1e-9) / denom).abs() < 1e-15);
        assert!(phi[1][0] < 1e-9);
        assert!(phi[1][1] < 1e-9);
        assert!((phi[0][0] - 0.75).abs() < 1e-9);
        assert!((phi[0][1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn single_thread_counting_example() {
        // thread [s0, s0, s1] -> counts [[1,1],[0,0]]
        let counts = transition_counts(&[0, 0, 1], &[0..3], 2);
        assert_eq!(counts, vec![vec![1, 1], vec![0, 0]]);
    }

    #[test]
    fn row_normalized_mode_is_row_stochastic() {
        let assignment = vec![0, 0, 1, 0, 1, 1];
        let ranges = vec![0..6];
        let phi = estimate_transition_probs(&assignment, &ranges, 2, 0.01, true);
        for row in &phi {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    /// Exhaustive path enumeration summed in the decoder's association
    /// order, with lexicographic-first tie handling.
    fn enumerate_best(
        log_pi: &[f64],
        log_phi: &[Vec<f64>],
        scores: &[Vec<f64>],
    ) -> (Vec<usize>, f64) {
        let t_len = scores.len();
        let s_len = log_pi.len();
        fn tail(path: &[usize], t: usize, log_phi: &[Vec<f64>], scores: &[Vec<f64>]) -> f64 {
            if t == path.len() - 1 {
                scores[t][path[t]]
            } else {
                scores[t][path[t]] + (log_phi[path[t]][path[t + 1]] + tail(path, t + 1, log_phi, scores))
            }
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut path = vec![0usize; t_len];
        loop {
            let value = log_pi[path[0]] + tail(&path, 0, log_phi, scores);
            match &best {
                Some((bv, _)) if *bv >= value => {}
                _ => best = Some((value, path.clone())),
            }
            // odometer increment in lexicographic order
            let mut i = t_len;
            loop {
                if i == 0 {
                    return best.map(|(v, p)| (p, v)).unwrap();
                }
                i -= 1;
                path[i] += 1;
                if path[i] < s_len {
                    break;
                }
                path[i] = 0;
            }
        }
    }

    #[test]
    fn two_state_example_decodes_to_the_hand_checked_path() {
        let pi = [0.6f64, 0.4];
        let phi = [[0.7f64, 0.3], [0.4, 0.6]];
        let b = [[0.9f64, 0.2], [0.3, 0.8]];
        let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
        let log_phi: Vec<Vec<f64>> = phi.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        let scores: Vec<Vec<f64>> = b.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        let (path, lp) = viterbi_decode(&log_pi, &log_phi, &scores);
        assert_eq!(path, vec![0, 1]);
        assert!((lp.exp() - 0.1296).abs() < 1e-10);
    }

    #[test]
    fn single_observation_reduces_to_argmax_of_pi_times_b() {
        let log_pi = vec![0.3f64.ln(), 0.7f64.ln()];
        let log_phi = vec![vec![0.5f64.ln(); 2]; 2];
        let scores = vec![vec![0.9f64.ln(), 0.2f64.ln()]];
        let (path, lp) = viterbi_decode(&log_pi, &log_phi, &scores);
        // 0.3*0.9 = 0.27 vs 0.7*0.2 = 0.14
        assert_eq!(path, vec![0]);
        assert!((lp - (0.3f64 * 0.9).ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_everything_ties_to_all_zeros() {
        let log_pi = vec![0.25f64.ln(); 4];
        let log_phi = vec![vec![0.25f64.ln(); 4]; 4];
        let scores = vec![vec![0.5f64.ln(); 4]; 5];
        let (path, _) = viterbi_decode(&log_pi, &log_phi, &scores);
        assert_eq!(path, vec![0; 5]);
    }

    #[test]
    fn matches_exhaustive_enumeration_on_random_hmms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..300 {
            let s_len = rng.gen_range(2..=5);
            let t_len = rng.gen_range(2..=7);
            // mix continuous params with a coarse grid so ties occur
            let grid = trial % 3 == 0;
            let gen = |rng: &mut ChaCha8Rng| -> f64 {
                if grid {
                    -(rng.gen_range(1..=4) as f64) * 0.5
                } else {
                    -rng.gen::<f64>() * 4.0
                }
            };
            let log_pi: Vec<f64> = (0..s_len).map(|_| gen(&mut rng)).collect();
            let log_phi: Vec<Vec<f64>> =
                (0..s_len).map(|_| (0..s_len).map(|_| gen(&mut rng)).collect()).collect();
            let scores: Vec<Vec<f64>> =
                (0..t_len).map(|_| (0..s_len).map(|_| gen(&mut rng)).collect()).collect();
            let (fast, flp) = viterbi_decode(&log_pi, &log_phi, &scores);
            let (slow, slp) = enumerate_best(&log_pi, &log_phi, &scores);
            assert_eq!(fast, slow, "trial {trial}");
            assert_eq!(flp, slp, "trial {trial}");
        }
    }
}
