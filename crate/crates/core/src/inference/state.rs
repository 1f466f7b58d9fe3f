use serde::{Deserialize, Serialize};

use crate::types::HyperParams;

use super::corpus::Corpus;
use super::variant::ChannelKind;

/// Constants of one engine run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub alpha: f64,
    /// Hinge weight after the variant has been applied.
    pub penalty_c: f64,
    pub k_max: usize,
}

/// Gaussian posterior over one channel's appearance rows, with that
/// channel's noise and prior variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPosterior {
    pub kind: ChannelKind,
    pub dim: usize,
    pub noise_var: f64,
    pub appearance_var: f64,
    /// Posterior means, row-major `k_max x dim`.
    pub phi: Vec<f64>,
    /// Posterior isotropic variance per factor.
    pub sigma_k2: Vec<f64>,
}

impl ChannelPosterior {
    pub fn phi_row(&self, k: usize) -> &[f64] {
        &self.phi[k * self.dim..(k + 1) * self.dim]
    }

    pub fn phi_row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.phi[k * self.dim..(k + 1) * self.dim]
    }

    /// `D σ_k² + ‖Φ_k‖²`, the second moment of appearance row `k`.
    pub fn second_moment(&self, k: usize) -> f64 {
        self.dim as f64 * self.sigma_k2[k] + dot(self.phi_row(k), self.phi_row(k))
    }
}

/// The global (shared across bags) part of the posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceModel {
    pub k_max: usize,
    pub channels: Vec<ChannelPosterior>,
}

/// Per-bag posterior: Beta sticks and Bernoulli factor means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagPosterior {
    pub num_tracks: usize,
    pub k_max: usize,
    /// `(τ_k1, τ_k2)` per factor.
    pub tau: Vec<[f64; 2]>,
    /// Row-major `num_tracks x k_max`.
    pub nu: Vec<f64>,
}

impl BagPosterior {
    pub fn initial(num_tracks: usize, k_max: usize, alpha: f64, mask: &[bool]) -> Self {
        let row: Vec<f64> = mask.iter().map(|&m| if m { 0.5 } else { 0.0 }).collect();
        BagPosterior {
            num_tracks,
            k_max,
            tau: vec![[alpha, 1.0]; k_max],
            nu: row.repeat(num_tracks),
        }
    }

    pub fn nu(&self, j: usize, k: usize) -> f64 {
        self.nu[j * self.k_max + k]
    }

    pub fn nu_row(&self, j: usize) -> &[f64] {
        &self.nu[j * self.k_max..(j + 1) * self.k_max]
    }

    pub fn set_nu(&mut self, j: usize, k: usize, v: f64) {
        self.nu[j * self.k_max + k] = v;
    }

    /// `Σ_j ν_jk`.
    pub fn nu_count(&self, k: usize) -> f64 {
        (0..self.num_tracks).map(|j| self.nu(j, k)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub appearance: AppearanceModel,
    pub bags: Vec<BagPosterior>,
}

impl VariationalState {
    /// Checks positivity, ranges, finiteness and masking against `corpus`.
    pub fn check_invariants(&self, corpus: &Corpus) -> Result<(), String> {
        if self.bags.len() != corpus.bags.len() {
            return Err(format!(
                "{} bag posteriors for {} bags",
                self.bags.len(),
                corpus.bags.len()
            ));
        }
        for ch in &self.appearance.channels {
            if ch.sigma_k2.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(format!("{:?}: non-positive sigma_k2", ch.kind));
            }
            if ch.phi.iter().any(|v| !v.is_finite()) {
                return Err(format!("{:?}: non-finite phi", ch.kind));
            }
        }
        for (i, (post, cbag)) in self.bags.iter().zip(&corpus.bags).enumerate() {
            if post
                .tau
                .iter()
                .flatten()
                .any(|&t| !(t > 0.0 && t.is_finite()))
            {
                return Err(format!("bag {i}: non-positive tau"));
            }
            for j in 0..post.num_tracks {
                for k in 0..post.k_max {
                    let v = post.nu(j, k);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(format!("bag {i}: nu[{j}][{k}] = {v} outside [0,1]"));
                    }
                    if !cbag.mask[k] && v != 0.0 {
                        return Err(format!("bag {i}: masked nu[{j}][{k}] = {v}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Initial state: `τ = (α, 1)`, `ν = 0.5` (0 where masked), `Φ = 0`,
/// `σ_k² = 1`, and channel variances from `hp`.
pub fn init_state(corpus: &Corpus, hp: &HyperParams) -> VariationalState {
    let k_max = corpus.k_max;
    let channels = corpus
        .channels
        .iter()
        .zip(&corpus.dims)
        .map(|(&kind, &dim)| {
            let (noise_var, appearance_var) = kind.initial_variances(&corpus.space, hp);
            ChannelPosterior {
                kind,
                dim,
                noise_var,
                appearance_var,
                phi: vec![0.0; k_max * dim],
                sigma_k2: vec![1.0; k_max],
            }
        })
        .collect();
    let bags = corpus
        .bags
        .iter()
        .map(|b| BagPosterior::initial(b.num_tracks, k_max, hp.alpha, &b.mask))
        .collect();
    VariationalState {
        appearance: AppearanceModel { k_max, channels },
        bags,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
