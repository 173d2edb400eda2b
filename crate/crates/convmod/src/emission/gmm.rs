//! Diagonal-covariance Gaussian mixtures fitted with EM, used as the
//! alternative emission family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

const MAX_EM_ITERATIONS: usize = 100;
const LL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    components: Vec<GmmComponent>,
    dim: usize,
    /// Log-likelihood after each accepted EM step, non-decreasing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ll_trace: Vec<f64>,
}

impl GaussianMixture {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn ll_trace(&self) -> &[f64] {
        &self.ll_trace
    }

    /// A single standard-normal component; stands in for states with no
    /// posts, mirroring the uniform fallback of empty language models.
    pub fn standard(dim: usize) -> GaussianMixture {
        GaussianMixture {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: vec![0.0; dim],
                variance: vec![1.0; dim],
            }],
            dim,
            ll_trace: Vec::new(),
        }
    }

    fn component_log_density(c: &GmmComponent, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for d in 0..x.len() {
            let var = c.variance[d];
            let diff = x[d] - c.mean[d];
            s += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + diff * diff / var);
        }
        s
    }

    /// Log of the weighted component-density sum.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Parameter(format!(
                "vector has dim {}, mixture expects {}",
                x.len(),
                self.dim
            )));
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + Self::component_log_density(c, x))
            .collect();
        Ok(log_sum_exp(&terms))
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// EM-fits a diagonal-covariance mixture, deterministic for a given seed.
/// Means start at the data mean plus unit-scaled Gaussian noise; requesting
/// more components than vectors reduces the component count.
pub fn fit_gmm(vectors: &[Vec<f64>], num_components: usize, seed: u64) -> Result<GaussianMixture> {
    if num_components < 1 {
        return Err(Error::Parameter("numMixtureComponents must be >= 1".into()));
    }
    if vectors.is_empty() {
        return Err(Error::Parameter("fit_gmm requires at least one vector".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Parameter("fit_gmm vectors must share one dimensionality".into()));
    }
    let k = num_components.min(vectors.len());
    let m = vectors.len();

    let mut data_mean = vec![0.0; dim];
    for v in vectors {
        for d in 0..dim {
            data_mean[d] += v[d];
        }
    }
    for d in 0..dim {
        data_mean[d] /= m as f64;
    }
    let mut data_var = vec![0.0; dim];
    for v in vectors {
        for d in 0..dim {
            let diff = v[d] - data_mean[d];
            data_var[d] += diff * diff;
        }
    }
    for d in 0..dim {
        data_var[d] = (data_var[d] / m as f64).max(VARIANCE_FLOOR);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components: Vec<GmmComponent> = (0..k)
        .map(|_| {
            let mean = (0..dim)
                .map(|d| {
                    let z: f64 = rng.sample(StandardNormal);
                    data_mean[d] + z * data_var[d].sqrt()
                })
                .collect();
            GmmComponent { weight: 1.0 / k as f64, mean, variance: data_var.clone() }
        })
        .collect();

    let mut ll_trace: Vec<f64> = Vec::new();
    let mut resp = vec![vec![0.0; k]; m];
    let mut before_m_step = components.clone();
    for _ in 0..MAX_EM_ITERATIONS {
        // E-step: responsibilities and current log-likelihood
        let mut ll = 0.0;
        for (i, x) in vectors.iter().enumerate() {
            let terms: Vec<f64> = components
                .iter()
                .map(|c| c.weight.ln() + GaussianMixture::component_log_density(c, x))
                .collect();
            let norm = log_sum_exp(&terms);
            ll += norm;
            for j in 0..k {
                resp[i][j] = (terms[j] - norm).exp();
            }
        }
        if let Some(&prev) = ll_trace.last() {
            // the variance floor can stall the objective; never accept a step
            // that lowers it
            if ll < prev - 1e-12 {
                components = before_m_step;
                break;
            }
            ll_trace.push(ll);
            if (ll - prev).abs() < LL_TOLERANCE {
                break;
            }
        } else {
            ll_trace.push(ll);
        }

        // M-step
        before_m_step = components.clone();
        for j in 0..k {
            let nj: f64 = (0..m).map(|i| resp[i][j]).sum();
            if nj <= 0.0 {
                // a component with no responsibility mass dies; zeroing its
                // weight keeps the weight vector summing to 1
                components[j].weight = 0.0;
                continue;
            }
            let mut mean = vec![0.0; dim];
            for (i, x) in vectors.iter().enumerate() {
                for d in 0..dim {
                    mean[d] += resp[i][j] * x[d];
                }
            }
            for d in 0..dim {
                mean[d] /= nj;
            }
            let mut var = vec![0.0; dim];
            for (i, x) in vectors.iter().enumerate() {
                for d in 0..dim {
                    let diff = x[d] - mean[d];
                    var[d] += resp[i][j] * diff * diff;
                }
            }
            for d in 0..dim {
                var[d] = (var[d] / nj).max(VARIANCE_FLOOR);
            }
            components[j] = GmmComponent { weight: nj / m as f64, mean, variance: var };
        }
    }

    Ok(GaussianMixture { components, dim, ll_trace })
}

/// Log-density of one post vector under a state's mixture.
pub fn score_post_gmm(x: &[f64], gmm: &GaussianMixture) -> Result<f64> {
    gmm.log_density(x)
}
