//! The surrogate objective minimized by the sweeps:
//!
//! `KL(sticks) + KL(assignments) + KL(appearance) - E[log-likelihood]
//!  + C · Σ hinge`
//!
//! with `E[log(1 - ∏ v)]` replaced by its lower bound ℒ_k, which makes the
//! whole expression an upper bound on the constrained free energy.

use serde::{Deserialize, Serialize};

use crate::constraints::Hinge;
use crate::par::{self, Exec};
use crate::special::{bernoulli_neg_entropy, ln_gamma};

use super::corpus::{Corpus, CorpusBag};
use super::state::{
    dot, AppearanceModel, BagPosterior, ChannelPosterior, EngineParams, VariationalState,
};
use super::sticks::StickBound;
use super::updates::hinge_expectation;

/// Per-bag pieces of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BagTerms {
    pub kl_sticks: f64,
    pub kl_assignments: f64,
    /// `-Σ_j E[log p(x_j)]`.
    pub neg_log_likelihood: f64,
    /// Unweighted hinge sum.
    pub hinge: f64,
}

impl BagTerms {
    pub fn total(&self, penalty_c: f64) -> f64 {
        self.kl_sticks + self.kl_assignments + self.neg_log_likelihood + penalty_c * self.hinge
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub kl_sticks: f64,
    pub kl_assignments: f64,
    pub kl_appearance: f64,
    pub neg_log_likelihood: f64,
    pub hinge: f64,
    pub penalty_c: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.kl_sticks
            + self.kl_assignments
            + self.kl_appearance
            + self.neg_log_likelihood
            + self.penalty_c * self.hinge
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("KL(sticks)", self.kl_sticks),
            ("KL(assignments)", self.kl_assignments),
            ("KL(appearance)", self.kl_appearance),
            ("negative log-likelihood", self.neg_log_likelihood),
            ("hinge penalty", self.hinge),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `KL(Beta(τ_k1, τ_k2) || Beta(α, 1))` summed over factors.
pub fn kl_sticks(tau: &[[f64; 2]], bound: &StickBound, alpha: f64) -> f64 {
    let dg = &bound.digammas;
    let mut kl = 0.0;
    for (k, &[t1, t2]) in tau.iter().enumerate() {
        kl += (t1 - alpha) * (dg.a[k] - dg.ab[k]) + (t2 - 1.0) * (dg.b[k] - dg.ab[k])
            - ln_gamma(t1)
            - ln_gamma(t2)
            + ln_gamma(t1 + t2);
    }
    kl - tau.len() as f64 * alpha.ln()
}

/// `Σ_j Σ_k [-ν E[log π_k] - (1-ν) ℒ_k + ν ln ν + (1-ν) ln(1-ν)]`.
pub fn kl_assignments(post: &BagPosterior, bound: &StickBound) -> f64 {
    let elog_pi = bound.digammas.expected_log_prior();
    let mut kl = 0.0;
    for j in 0..post.num_tracks {
        for k in 0..post.k_max {
            let nu = post.nu(j, k);
            kl += -nu * elog_pi[k] - (1.0 - nu) * bound.lower[k] + bernoulli_neg_entropy(nu);
        }
    }
    kl
}

/// `Σ_k [(D σ_k² + ‖Φ_k‖²) / (2σ_A²) - D/2 (1 + ln(σ_k²/σ_A²))]`.
pub fn kl_appearance(ch: &ChannelPosterior) -> f64 {
    let d = ch.dim as f64;
    (0..ch.sigma_k2.len())
        .map(|k| {
            ch.second_moment(k) / (2.0 * ch.appearance_var)
                - 0.5 * d * (1.0 + (ch.sigma_k2[k] / ch.appearance_var).ln())
        })
        .sum()
}

/// `E‖x_j - z_j A‖²` for one track of one channel:
/// `‖x - Σ ν_k Φ_k‖² + Σ_k [ν_k (1-ν_k) ‖Φ_k‖² + ν_k D σ_k²]`.
pub fn expected_sq_error(ch: &ChannelPosterior, x: &[f64], nu_row: &[f64]) -> f64 {
    let mut resid = x.to_vec();
    let mut extra = 0.0;
    for (k, &nu) in nu_row.iter().enumerate() {
        if nu == 0.0 {
            continue;
        }
        let phi = ch.phi_row(k);
        for (r, p) in resid.iter_mut().zip(phi) {
            *r -= nu * p;
        }
        extra += nu * (1.0 - nu) * dot(phi, phi) + nu * ch.dim as f64 * ch.sigma_k2[k];
    }
    dot(&resid, &resid) + extra
}

pub fn neg_log_likelihood(
    post: &BagPosterior,
    cbag: &CorpusBag,
    appearance: &AppearanceModel,
) -> f64 {
    let mut nll = 0.0;
    for (c, ch) in appearance.channels.iter().enumerate() {
        let norm = 0.5 * ch.dim as f64 * (2.0 * std::f64::consts::PI * ch.noise_var).ln();
        for j in 0..post.num_tracks {
            let err = expected_sq_error(ch, cbag.track(c, ch.dim, j), post.nu_row(j));
            nll += err / (2.0 * ch.noise_var) + norm;
        }
    }
    nll
}

pub fn hinge_sum(post: &BagPosterior, hinges: &[Hinge]) -> f64 {
    hinges
        .iter()
        .map(|h| (1.0 - hinge_expectation(post, h)).max(0.0))
        .sum()
}

pub fn bag_terms(
    post: &BagPosterior,
    cbag: &CorpusBag,
    appearance: &AppearanceModel,
    alpha: f64,
    bound: &StickBound,
) -> BagTerms {
    BagTerms {
        kl_sticks: kl_sticks(&post.tau, bound, alpha),
        kl_assignments: kl_assignments(post, bound),
        neg_log_likelihood: neg_log_likelihood(post, cbag, appearance),
        hinge: hinge_sum(post, &cbag.hinges),
    }
}

fn assemble(
    parts: &[BagTerms],
    appearance: Option<&AppearanceModel>,
    penalty_c: f64,
) -> ObjectiveTerms {
    let mut t = ObjectiveTerms {
        penalty_c,
        ..ObjectiveTerms::default()
    };
    t.kl_sticks = par::ordered_sum(parts.iter().map(|p| p.kl_sticks));
    t.kl_assignments = par::ordered_sum(parts.iter().map(|p| p.kl_assignments));
    t.neg_log_likelihood = par::ordered_sum(parts.iter().map(|p| p.neg_log_likelihood));
    t.hinge = par::ordered_sum(parts.iter().map(|p| p.hinge));
    if let Some(app) = appearance {
        t.kl_appearance = par::ordered_sum(app.channels.iter().map(kl_appearance));
    }
    t
}

/// Objective at the current state, with q chosen optimally for the current τ.
pub fn compute_objective(
    state: &VariationalState,
    corpus: &Corpus,
    params: &EngineParams,
    exec: Exec,
) -> ObjectiveTerms {
    let parts = par::map(exec, &state.bags, |i, post| {
        let bound = StickBound::compute(&post.tau);
        bag_terms(
            post,
            &corpus.bags[i],
            &state.appearance,
            params.alpha,
            &bound,
        )
    });
    assemble(&parts, Some(&state.appearance), params.penalty_c)
}

/// Objective with each bag's q held at `qs[i]` instead of re-optimized.
pub fn objective_with_q(
    state: &VariationalState,
    corpus: &Corpus,
    params: &EngineParams,
    qs: &[Vec<Vec<f64>>],
) -> ObjectiveTerms {
    let parts: Vec<BagTerms> = state
        .bags
        .iter()
        .enumerate()
        .map(|(i, post)| {
            let bound = StickBound::with_q(&post.tau, qs[i].clone());
            bag_terms(
                post,
                &corpus.bags[i],
                &state.appearance,
                params.alpha,
                &bound,
            )
        })
        .collect();
    assemble(&parts, Some(&state.appearance), params.penalty_c)
}

/// Objective restricted to the per-bag terms (the appearance KL is constant
/// when the appearance model is frozen).
pub fn local_objective(
    state: &VariationalState,
    corpus: &Corpus,
    params: &EngineParams,
    exec: Exec,
) -> ObjectiveTerms {
    let parts = par::map(exec, &state.bags, |i, post| {
        let bound = StickBound::compute(&post.tau);
        bag_terms(
            post,
            &corpus.bags[i],
            &state.appearance,
            params.alpha,
            &bound,
        )
    });
    assemble(&parts, None, params.penalty_c)
}

/// Locates the first non-finite parameter of the state, for diagnostics.
pub fn first_non_finite_parameter(state: &VariationalState) -> Option<String> {
    for ch in &state.appearance.channels {
        if let Some(k) = ch.sigma_k2.iter().position(|v| !v.is_finite()) {
            return Some(format!("sigma_k2[{k}] of the {:?} channel", ch.kind));
        }
        if let Some(i) = ch.phi.iter().position(|v| !v.is_finite()) {
            return Some(format!(
                "phi[{}][{}] of the {:?} channel",
                i / ch.dim,
                i % ch.dim,
                ch.kind
            ));
        }
        if !ch.noise_var.is_finite() || !ch.appearance_var.is_finite() {
            return Some(format!("variances of the {:?} channel", ch.kind));
        }
    }
    for (i, b) in state.bags.iter().enumerate() {
        if let Some(k) = b
            .tau
            .iter()
            .position(|t| !t[0].is_finite() || !t[1].is_finite())
        {
            return Some(format!("tau[{k}] of bag {i}"));
        }
        if let Some(p) = b.nu.iter().position(|v| !v.is_finite()) {
            return Some(format!("nu[{}][{}] of bag {i}", p / b.k_max, p % b.k_max));
        }
    }
    None
}
