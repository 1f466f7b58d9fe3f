//! Stick-breaking expectations under the Beta posteriors of one bag.
//!
//! `E[log(1 - ∏_{t≤k} v_t)]` has no closed form. It is replaced by the
//! multinomial lower bound ℒ_k, whose auxiliary distribution q_k· over
//! `m ∈ 0..=k` is chosen to make the bound as tight as possible.

use crate::special::digamma;

/// Digamma values of one bag's sticks.
#[derive(Clone, Debug)]
pub struct StickDigammas {
    /// Ψ(τ_k1)
    pub a: Vec<f64>,
    /// Ψ(τ_k2)
    pub b: Vec<f64>,
    /// Ψ(τ_k1 + τ_k2)
    pub ab: Vec<f64>,
}

impl StickDigammas {
    pub fn new(tau: &[[f64; 2]]) -> Self {
        StickDigammas {
            a: tau.iter().map(|t| digamma(t[0])).collect(),
            b: tau.iter().map(|t| digamma(t[1])).collect(),
            ab: tau.iter().map(|t| digamma(t[0] + t[1])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `Σ_{t≤k} (Ψ(τ_t1) - Ψ(τ_t1 + τ_t2))` for every k, i.e. `E[log π_k]`.
    pub fn expected_log_prior(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.a
            .iter()
            .zip(&self.ab)
            .map(|(a, ab)| {
                acc += a - ab;
                acc
            })
            .collect()
    }

    /// Unnormalized log-weights `Ψ(τ_m2) + Σ_{n<m} Ψ(τ_n1) - Σ_{n≤m} Ψ(τ_n1+τ_n2)`.
    /// They do not depend on k; q_k· is their softmax over `0..=k`.
    pub fn log_weights(&self) -> Vec<f64> {
        let mut sum_a = 0.0;
        let mut sum_ab = 0.0;
        (0..self.len())
            .map(|m| {
                sum_ab += self.ab[m];
                let w = self.b[m] + sum_a - sum_ab;
                sum_a += self.a[m];
                w
            })
            .collect()
    }
}

/// Tightest multinomial q_k· for factor `k` (0-based), of length `k + 1`.
pub fn compute_q(tau: &[[f64; 2]], k: usize) -> Vec<f64> {
    let dg = StickDigammas::new(&tau[..=k]);
    softmax(&dg.log_weights())
}

/// ℒ_k for an arbitrary distribution `q` over `0..=k`.
pub fn lower_bound(tau: &[[f64; 2]], k: usize, q: &[f64]) -> f64 {
    let dg = StickDigammas::new(&tau[..=k]);
    lower_bound_with(&dg, k, q)
}

pub(crate) fn lower_bound_with(dg: &StickDigammas, k: usize, q: &[f64]) -> f64 {
    debug_assert_eq!(q.len(), k + 1);
    // tail[m] = Σ_{n=m}^{k} q_n, accumulated from the right
    let mut value = 0.0;
    let mut tail = 0.0;
    for m in (0..=k).rev() {
        let above = tail; // Σ_{n=m+1}^{k} q_n
        tail += q[m];
        value += q[m] * dg.b[m] + above * dg.a[m] - tail * dg.ab[m];
    }
    let entropy: f64 = -q.iter().map(|&p| crate::special::xlogx(p)).sum::<f64>();
    value + entropy
}

fn softmax(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// q_k· and ℒ_k for every factor of a bag.
#[derive(Clone, Debug)]
pub struct StickBound {
    /// `q[k]` has `k + 1` entries.
    pub q: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub digammas: StickDigammas,
}

impl StickBound {
    /// Optimal q for the current τ.
    pub fn compute(tau: &[[f64; 2]]) -> Self {
        let digammas = StickDigammas::new(tau);
        let w = digammas.log_weights();
        let q: Vec<Vec<f64>> = (0..tau.len()).map(|k| softmax(&w[..=k])).collect();
        let lower = q
            .iter()
            .enumerate()
            .map(|(k, qk)| lower_bound_with(&digammas, k, qk))
            .collect();
        StickBound { q, lower, digammas }
    }

    /// ℒ_k at `tau` with q held at a previously computed value.
    pub fn with_q(tau: &[[f64; 2]], q: Vec<Vec<f64>>) -> Self {
        let digammas = StickDigammas::new(tau);
        let lower = q
            .iter()
            .enumerate()
            .map(|(k, qk)| lower_bound_with(&digammas, k, qk))
            .collect();
        StickBound { q, lower, digammas }
    }
}
