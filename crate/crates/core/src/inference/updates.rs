//! Closed-form coordinate updates and the full block sweep.

use crate::constraints::Hinge;
use crate::par::{self, Exec};
use crate::special::sigmoid;

use super::corpus::{Corpus, CorpusBag};
use super::state::{dot, AppearanceModel, BagPosterior, EngineParams, VariationalState};
use super::sticks::StickBound;

/// Per bag and channel, the current reconstruction `Σ_l ν_jl Φ_l` of every
/// track (row-major `num_tracks x dim`).
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub bags: Vec<Vec<Vec<f64>>>,
}

impl Reconstruction {
    pub fn compute(state: &VariationalState, exec: Exec) -> Self {
        let bags = par::map(exec, &state.bags, |_, post| {
            state
                .appearance
                .channels
                .iter()
                .map(|ch| {
                    let mut out = vec![0.0; post.num_tracks * ch.dim];
                    for j in 0..post.num_tracks {
                        let row = &mut out[j * ch.dim..(j + 1) * ch.dim];
                        for k in 0..post.k_max {
                            let nu = post.nu(j, k);
                            if nu != 0.0 {
                                for (r, p) in row.iter_mut().zip(ch.phi_row(k)) {
                                    *r += nu * p;
                                }
                            }
                        }
                    }
                    out
                })
                .collect()
        });
        Reconstruction { bags }
    }
}

/// `σ_k² = (1/σ_A² + Σ_i Σ_j ν_jk / σ_n²)^-1`, stored and returned.
pub fn update_sigma_k2(state: &mut VariationalState, channel: usize, k: usize) -> f64 {
    let count = par::ordered_sum(state.bags.iter().map(|b| b.nu_count(k)));
    let ch = &mut state.appearance.channels[channel];
    let v = 1.0 / (1.0 / ch.appearance_var + count / ch.noise_var);
    ch.sigma_k2[k] = v;
    v
}

/// `Φ_k = (σ_k² / σ_n²) Σ_i Σ_j ν_jk (x_j - Σ_{l≠k} ν_jl Φ_l)`, stored and
/// returned. Uses the current σ_k² and keeps `recon` in step with the new Φ_k.
pub fn update_phi(
    state: &mut VariationalState,
    corpus: &Corpus,
    recon: &mut Reconstruction,
    channel: usize,
    k: usize,
    exec: Exec,
) -> Vec<f64> {
    let dim = corpus.dims[channel];
    let old: Vec<f64> = state.appearance.channels[channel].phi_row(k).to_vec();
    let parts = par::map(exec, &state.bags, |i, post| {
        let feats = &corpus.bags[i].features[channel];
        let rec = &recon.bags[i][channel];
        let mut acc = vec![0.0; dim];
        for j in 0..post.num_tracks {
            let nu = post.nu(j, k);
            if nu == 0.0 {
                continue;
            }
            let x = &feats[j * dim..(j + 1) * dim];
            let r = &rec[j * dim..(j + 1) * dim];
            for d in 0..dim {
                acc[d] += nu * (x[d] - (r[d] - nu * old[d]));
            }
        }
        acc
    });
    let mut total = vec![0.0; dim];
    for p in &parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let ch = &mut state.appearance.channels[channel];
    let scale = ch.sigma_k2[k] / ch.noise_var;
    let new: Vec<f64> = total.iter().map(|v| v * scale).collect();
    ch.phi_row_mut(k).copy_from_slice(&new);

    let delta: Vec<f64> = new.iter().zip(&old).map(|(n, o)| n - o).collect();
    let bags = &state.bags;
    par::for_each_mut(exec, &mut recon.bags, |i, rb| {
        let post = &bags[i];
        let rec = &mut rb[channel];
        for j in 0..post.num_tracks {
            let nu = post.nu(j, k);
            if nu == 0.0 {
                continue;
            }
            for (r, dlt) in rec[j * dim..(j + 1) * dim].iter_mut().zip(&delta) {
                *r += nu * dlt;
            }
        }
    });
    new
}

/// Stick posteriors of one bag given the multinomials in `bound`:
///
/// `τ_k1 = α + Σ_{m≥k} n_m + Σ_{m>k} (N - n_m) Σ_{s=k+1}^{m} q_ms`
/// `τ_k2 = 1 + Σ_{m≥k} (N - n_m) q_mk`
///
/// with `n_m = Σ_j ν_jm`.
pub fn update_tau(post: &mut BagPosterior, alpha: f64, bound: &StickBound) {
    let kmax = post.k_max;
    let n = post.num_tracks as f64;
    let counts: Vec<f64> = (0..kmax).map(|m| post.nu_count(m)).collect();
    let mut t1 = vec![alpha; kmax];
    let mut t2 = vec![1.0; kmax];
    for m in 0..kmax {
        let off = n - counts[m];
        let qm = &bound.q[m];
        // contributions of factor m to every k <= m
        let mut above = 0.0; // Σ_{s=k+1}^{m} q_ms
        for k in (0..=m).rev() {
            t1[k] += counts[m] + off * above;
            t2[k] += off * qm[k];
            above += qm[k];
        }
    }
    for (k, t) in post.tau.iter_mut().enumerate() {
        *t = [t1[k], t2[k]];
    }
}

/// The two parts of the Bernoulli logit ζ_jk: everything except the
/// constraint coupling, and the coupling sum that is scaled by C.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaParts {
    pub base: f64,
    pub coupling: f64,
}

impl ZetaParts {
    pub fn total(&self, penalty_c: f64) -> f64 {
        self.base + penalty_c * self.coupling
    }
}

/// Which hinge terms of a bag are active (expectation below 1).
pub fn active_hinges(post: &BagPosterior, hinges: &[Hinge]) -> Vec<bool> {
    hinges
        .iter()
        .map(|h| hinge_expectation(post, h) < 1.0)
        .collect()
}

/// `Σ_j ν_js ν_ja` for a pair, `Σ_j ν_jk` for a singleton.
pub fn hinge_expectation(post: &BagPosterior, h: &Hinge) -> f64 {
    match *h {
        Hinge::Pair { subject, action } => (0..post.num_tracks)
            .map(|j| post.nu(j, subject) * post.nu(j, action))
            .sum(),
        Hinge::Single(k) => post.nu_count(k),
    }
}

fn coupling(post: &BagPosterior, hinges: &[Hinge], active: &[bool], j: usize, k: usize) -> f64 {
    let mut c = 0.0;
    for (h, &on) in hinges.iter().zip(active) {
        if !on {
            continue;
        }
        match *h {
            Hinge::Pair { subject, action } => {
                if subject == k {
                    c += post.nu(j, action);
                }
                if action == k {
                    c += post.nu(j, subject);
                }
            }
            Hinge::Single(f) => {
                if f == k {
                    c += 1.0;
                }
            }
        }
    }
    c
}

/// ζ_jk evaluated from scratch (residual `x_j - Σ_{l≠k} ν_jl Φ_l` formed
/// directly). `active` are the hinge indicators to use.
pub fn zeta_parts(
    post: &BagPosterior,
    cbag: &CorpusBag,
    appearance: &AppearanceModel,
    bound: &StickBound,
    active: &[bool],
    j: usize,
    k: usize,
) -> ZetaParts {
    let prior = bound.digammas.expected_log_prior()[k] - bound.lower[k];
    let mut lik = 0.0;
    for (c, ch) in appearance.channels.iter().enumerate() {
        let x = cbag.track(c, ch.dim, j);
        let mut resid = x.to_vec();
        for l in (0..post.k_max).filter(|&l| l != k) {
            let nu = post.nu(j, l);
            for (r, p) in resid.iter_mut().zip(ch.phi_row(l)) {
                *r -= nu * p;
            }
        }
        lik +=
            -ch.second_moment(k) / (2.0 * ch.noise_var) + dot(ch.phi_row(k), &resid) / ch.noise_var;
    }
    ZetaParts {
        base: prior + lik,
        coupling: coupling(post, &cbag.hinges, active, j, k),
    }
}

/// Single-coordinate update `ν_jk = L_k σ(ζ_jk)`, with hinge indicators taken
/// from the current ν. Stores and returns the new value.
pub fn update_nu(
    post: &mut BagPosterior,
    cbag: &CorpusBag,
    appearance: &AppearanceModel,
    params: &EngineParams,
    bound: &StickBound,
    j: usize,
    k: usize,
) -> f64 {
    let v = if cbag.mask[k] {
        let active = active_hinges(post, &cbag.hinges);
        sigmoid(zeta_parts(post, cbag, appearance, bound, &active, j, k).total(params.penalty_c))
    } else {
        0.0
    };
    post.set_nu(j, k, v);
    v
}

/// One pass over all ν of a bag, factor-major (`k` outer, `j` inner), each
/// coordinate using the latest values of the others. Hinge indicators are
/// fixed at their values from the start of the pass.
pub fn update_bag_nu(
    post: &mut BagPosterior,
    cbag: &CorpusBag,
    appearance: &AppearanceModel,
    params: &EngineParams,
    bound: &StickBound,
    recon: &mut [Vec<f64>],
) {
    let active = active_hinges(post, &cbag.hinges);
    let prior_base = bound.digammas.expected_log_prior();
    let channels = &appearance.channels;
    for k in 0..post.k_max {
        if !cbag.mask[k] {
            for j in 0..post.num_tracks {
                let old = post.nu(j, k);
                if old != 0.0 {
                    shift_recon(recon, appearance, j, k, -old);
                    post.set_nu(j, k, 0.0);
                }
            }
            continue;
        }
        let mut base_k = prior_base[k] - bound.lower[k];
        for ch in channels {
            base_k -= ch.second_moment(k) / (2.0 * ch.noise_var);
        }
        for j in 0..post.num_tracks {
            let old = post.nu(j, k);
            let mut zeta = base_k;
            for (c, ch) in channels.iter().enumerate() {
                let d = ch.dim;
                let x = cbag.track(c, d, j);
                let r = &recon[c][j * d..(j + 1) * d];
                let phi = ch.phi_row(k);
                let mut s = 0.0;
                for t in 0..d {
                    s += phi[t] * (x[t] - (r[t] - old * phi[t]));
                }
                zeta += s / ch.noise_var;
            }
            if params.penalty_c != 0.0 {
                zeta += params.penalty_c * coupling(post, &cbag.hinges, &active, j, k);
            }
            let new = sigmoid(zeta);
            if new != old {
                shift_recon(recon, appearance, j, k, new - old);
                post.set_nu(j, k, new);
            }
        }
    }
}

fn shift_recon(
    recon: &mut [Vec<f64>],
    appearance: &AppearanceModel,
    j: usize,
    k: usize,
    delta: f64,
) {
    for (c, ch) in appearance.channels.iter().enumerate() {
        let d = ch.dim;
        for (r, p) in recon[c][j * d..(j + 1) * d].iter_mut().zip(ch.phi_row(k)) {
            *r += delta * p;
        }
    }
}

/// Updates τ, then q and ℒ, then ν of one bag with the global parameters
/// frozen. Returns the bound used by the ν pass.
pub fn update_bag_locals(
    post: &mut BagPosterior,
    cbag: &CorpusBag,
    appearance: &AppearanceModel,
    params: &EngineParams,
    recon: &mut [Vec<f64>],
) -> StickBound {
    let bound = StickBound::compute(&post.tau);
    update_tau(post, params.alpha, &bound);
    let bound = StickBound::compute(&post.tau);
    update_bag_nu(post, cbag, appearance, params, &bound, recon);
    bound
}

/// One full block-coordinate sweep:
/// 1. for each channel, for k in order: σ_k² then Φ_k;
/// 2. for each bag (in parallel): q → τ → q, ℒ → ν.
///
/// Returns the per-bag bounds used in the ν passes.
pub fn sweep(
    state: &mut VariationalState,
    corpus: &Corpus,
    params: &EngineParams,
    exec: Exec,
) -> Vec<StickBound> {
    let mut recon = Reconstruction::compute(state, exec);
    for c in 0..state.appearance.channels.len() {
        for k in 0..params.k_max {
            update_sigma_k2(state, c, k);
            update_phi(state, corpus, &mut recon, c, k, exec);
        }
    }
    sweep_locals(state, corpus, params, &mut recon, exec)
}

/// Step 2 of [`sweep`] on its own; used when the appearance model is frozen.
pub fn sweep_locals(
    state: &mut VariationalState,
    corpus: &Corpus,
    params: &EngineParams,
    recon: &mut Reconstruction,
    exec: Exec,
) -> Vec<StickBound> {
    let appearance = &state.appearance;
    let mut slots: Vec<(&mut BagPosterior, &mut Vec<Vec<f64>>, Option<StickBound>)> = state
        .bags
        .iter_mut()
        .zip(recon.bags.iter_mut())
        .map(|(p, r)| (p, r, None))
        .collect();
    par::for_each_mut(exec, &mut slots, |i, (post, rec, bound)| {
        *bound = Some(update_bag_locals(
            post,
            &corpus.bags[i],
            appearance,
            params,
            rec,
        ));
    });
    slots
        .into_iter()
        .map(|(_, _, b)| b.expect("every bag updated"))
        .collect()
}
