//! Reference oracles for testing `siibp`.
//!
//! Everything here is written for clarity over speed and shares no formula
//! code with the engine: Monte-Carlo expectations over Beta sticks, central
//! finite differences, literal loop transcriptions of the closed-form
//! updates, and generators of small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::digamma;

use siibp::constraints::Hinge;
use siibp::inference::{BagPosterior, Corpus, CorpusBag, EngineParams, VariationalState};
use siibp::{ConceptSpace, Dataset, HyperParams, LabelTuple, PerConcept, Track, VideoBag};

/// A Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Welford accumulation over an iterator of draws.
    pub fn from_draws(draws: impl IntoIterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for x in draws {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        McEstimate {
            mean,
            stderr: (var / n as f64).sqrt(),
            samples: n,
        }
    }
}

/// Estimates `E[log(1 - ∏_{t=1}^{k} v_t)]` with independent
/// `v_t ~ Beta(τ_t1, τ_t2)`; `k` counts sticks (1-based).
pub fn mc_expect_log_one_minus_prod(
    tau: &[[f64; 2]],
    k: usize,
    samples: usize,
    seed: u64,
) -> McEstimate {
    assert!(k >= 1 && k <= tau.len(), "k must be in 1..=tau.len()");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rests = complements(&tau[..k]);
    McEstimate::from_draws((0..samples).map(|_| {
        let log_prod: f64 = rests.iter().map(|b| (-b.sample(&mut rng)).ln_1p()).sum();
        (-log_prod.exp_m1()).ln()
    }))
}

// Draws `1 - v ~ Beta(τ_2, τ_1)` directly: sticks near 1 would otherwise
// round to exactly 1 and send the logarithm to -inf.
fn complements(tau: &[[f64; 2]]) -> Vec<Beta<f64>> {
    tau.iter()
        .map(|t| Beta::new(t[1], t[0]).expect("positive Beta parameters"))
        .collect()
}

/// Estimates for every prefix `k = 1..=tau.len()` from one set of stick
/// draws; entry `k - 1` is the estimate for the first `k` sticks.
pub fn mc_expect_log_one_minus_prod_prefixes(
    tau: &[[f64; 2]],
    samples: usize,
    seed: u64,
) -> Vec<McEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rests = complements(tau);
    let mut cols = vec![Vec::with_capacity(samples); tau.len()];
    for _ in 0..samples {
        let mut log_prod = 0.0;
        for (b, col) in rests.iter().zip(cols.iter_mut()) {
            log_prod += (-b.sample(&mut rng)).ln_1p();
            col.push((-log_prod.exp_m1()).ln());
        }
    }
    cols.into_iter().map(McEstimate::from_draws).collect()
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Result<Vec<f64>, String> {
    let mut p = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + step;
        let up = f(&p);
        p[i] = x[i] - step;
        let down = f(&p);
        p[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(format!("non-finite evaluation at coordinate {i}"));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// `max_i |a_i - b_i| / max_i |b_i|`, or the absolute difference when `b`
/// is all zeros.
pub fn rel_inf_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

// ---- literal transcriptions ----

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `σ_k² = (1/σ_A² + (1/σ_n²) Σ_i Σ_j ν_jk)^-1`.
pub fn naive_sigma_k2(state: &VariationalState, channel: usize, k: usize) -> f64 {
    let ch = &state.appearance.channels[channel];
    let mut total = 0.0;
    for bag in &state.bags {
        for j in 0..bag.num_tracks {
            total += bag.nu[j * bag.k_max + k];
        }
    }
    1.0 / (1.0 / ch.appearance_var + total / ch.noise_var)
}

/// `Φ_k = (σ_k²/σ_n²) Σ_i Σ_j ν_jk (x_j - Σ_{l≠k} ν_jl Φ_l)`.
pub fn naive_phi(state: &VariationalState, corpus: &Corpus, channel: usize, k: usize) -> Vec<f64> {
    let ch = &state.appearance.channels[channel];
    let d = ch.dim;
    let mut sum = vec![0.0; d];
    for (bag, cbag) in state.bags.iter().zip(&corpus.bags) {
        for j in 0..bag.num_tracks {
            let nu_k = bag.nu[j * bag.k_max + k];
            for t in 0..d {
                let x = cbag.features[channel][j * d + t];
                let mut others = 0.0;
                for l in 0..bag.k_max {
                    if l != k {
                        others += bag.nu[j * bag.k_max + l] * ch.phi[l * d + t];
                    }
                }
                sum[t] += nu_k * (x - others);
            }
        }
    }
    sum.iter()
        .map(|s| s / ch.noise_var * ch.sigma_k2[k])
        .collect()
}

/// `q_km ∝ exp(Ψ(τ_m2) + Σ_{n<m} Ψ(τ_n1) - Σ_{n≤m} Ψ(τ_n1+τ_n2))` for
/// `m = 0..=k` (0-based).
pub fn naive_q(tau: &[[f64; 2]], k: usize) -> Vec<f64> {
    let mut w = Vec::new();
    for m in 0..=k {
        let mut v = digamma(tau[m][1]);
        for n in 0..m {
            v += digamma(tau[n][0]);
        }
        for n in 0..=m {
            v -= digamma(tau[n][0] + tau[n][1]);
        }
        w.push(v);
    }
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `ℒ_k = Σ_m q_m Ψ(τ_m2) + Σ_m (Σ_{n>m} q_n) Ψ(τ_m1)
///      - Σ_m (Σ_{n≥m} q_n) Ψ(τ_m1+τ_m2) - Σ_m q_m log q_m`.
pub fn naive_lower_bound(tau: &[[f64; 2]], k: usize, q: &[f64]) -> f64 {
    let mut total = 0.0;
    for m in 0..=k {
        total += q[m] * digamma(tau[m][1]);
        let mut above = 0.0;
        for n in m + 1..=k {
            above += q[n];
        }
        total += above * digamma(tau[m][0]);
        let mut from = 0.0;
        for n in m..=k {
            from += q[n];
        }
        total -= from * digamma(tau[m][0] + tau[m][1]);
        if q[m] > 0.0 {
            total -= q[m] * q[m].ln();
        }
    }
    total
}

/// τ of one bag from the multinomials `q[m]` (each of length `m + 1`).
pub fn naive_tau(bag: &BagPosterior, alpha: f64, q: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = bag.num_tracks as f64;
    let count = |m: usize| -> f64 {
        let mut c = 0.0;
        for j in 0..bag.num_tracks {
            c += bag.nu[j * bag.k_max + m];
        }
        c
    };
    let mut out = Vec::new();
    for k in 0..bag.k_max {
        let mut t1 = alpha;
        for m in k..bag.k_max {
            t1 += count(m);
        }
        for m in k + 1..bag.k_max {
            let mut s = 0.0;
            for r in k + 1..=m {
                s += q[m][r];
            }
            t1 += (n - count(m)) * s;
        }
        let mut t2 = 1.0;
        for m in k..bag.k_max {
            t2 += (n - count(m)) * q[m][k];
        }
        out.push([t1, t2]);
    }
    out
}

/// Hinge indicators `Σ_j ν_js ν_ja < 1` / `Σ_j ν_jk < 1`.
pub fn naive_active(bag: &BagPosterior, hinges: &[Hinge]) -> Vec<bool> {
    hinges
        .iter()
        .map(|h| {
            let mut e = 0.0;
            for j in 0..bag.num_tracks {
                e += match *h {
                    Hinge::Pair { subject, action } => {
                        bag.nu[j * bag.k_max + subject] * bag.nu[j * bag.k_max + action]
                    }
                    Hinge::Single(k) => bag.nu[j * bag.k_max + k],
                };
            }
            e < 1.0
        })
        .collect()
}

/// The Bernoulli logit of track `j`, factor `k`, split into the part that
/// does not depend on C and the coupling sum multiplied by C.
pub fn naive_zeta(
    bag: &BagPosterior,
    cbag: &CorpusBag,
    state: &VariationalState,
    lower: &[f64],
    active: &[bool],
    j: usize,
    k: usize,
) -> (f64, f64) {
    let mut z = 0.0;
    for t in 0..=k {
        z += digamma(bag.tau[t][0]) - digamma(bag.tau[t][0] + bag.tau[t][1]);
    }
    z -= lower[k];
    for (c, ch) in state.appearance.channels.iter().enumerate() {
        let d = ch.dim;
        let phi_k = &ch.phi[k * d..(k + 1) * d];
        z -= (d as f64 * ch.sigma_k2[k] + vdot(phi_k, phi_k)) / (2.0 * ch.noise_var);
        let mut resid = cbag.features[c][j * d..(j + 1) * d].to_vec();
        for l in 0..bag.k_max {
            if l == k {
                continue;
            }
            for t in 0..d {
                resid[t] -= bag.nu[j * bag.k_max + l] * ch.phi[l * d + t];
            }
        }
        z += vdot(phi_k, &resid) / ch.noise_var;
    }
    let mut coupling = 0.0;
    for (h, &on) in cbag.hinges.iter().zip(active) {
        if !on {
            continue;
        }
        match *h {
            Hinge::Pair { subject, action } => {
                if subject == k {
                    coupling += bag.nu[j * bag.k_max + action];
                }
                if action == k {
                    coupling += bag.nu[j * bag.k_max + subject];
                }
            }
            Hinge::Single(f) => {
                if f == k {
                    coupling += 1.0;
                }
            }
        }
    }
    (z, coupling)
}

fn logistic(z: f64) -> f64 {
    let z = z.clamp(-500.0, 500.0);
    1.0 / (1.0 + (-z).exp())
}

/// Every intermediate of one literal sweep, for elementwise comparison.
#[derive(Clone, Debug)]
pub struct NaiveSweep {
    /// Per channel, σ_k² for every k.
    pub sigma_k2: Vec<Vec<f64>>,
    /// Per channel, Φ row-major.
    pub phi: Vec<Vec<f64>>,
    /// Per bag: q used by the ν pass, ℒ, τ and ν.
    pub q: Vec<Vec<Vec<f64>>>,
    pub lower: Vec<Vec<f64>>,
    pub tau: Vec<Vec<[f64; 2]>>,
    pub nu: Vec<Vec<f64>>,
    pub state: VariationalState,
}

/// One full sweep in the engine's documented order, by literal loops:
/// for each channel and k, σ_k² then Φ_k; then per bag q → τ → q, ℒ → ν
/// (k outer, j inner, hinge indicators from the start of the pass).
pub fn naive_sweep(state: &VariationalState, corpus: &Corpus, params: &EngineParams) -> NaiveSweep {
    let mut s = state.clone();
    for c in 0..s.appearance.channels.len() {
        for k in 0..params.k_max {
            let v = naive_sigma_k2(&s, c, k);
            s.appearance.channels[c].sigma_k2[k] = v;
            let phi = naive_phi(&s, corpus, c, k);
            let d = s.appearance.channels[c].dim;
            s.appearance.channels[c].phi[k * d..(k + 1) * d].copy_from_slice(&phi);
        }
    }
    let mut qs = Vec::new();
    let mut lowers = Vec::new();
    for i in 0..s.bags.len() {
        let q_old: Vec<Vec<f64>> = (0..params.k_max)
            .map(|k| naive_q(&s.bags[i].tau, k))
            .collect();
        let tau = naive_tau(&s.bags[i], params.alpha, &q_old);
        s.bags[i].tau = tau;
        let q: Vec<Vec<f64>> = (0..params.k_max)
            .map(|k| naive_q(&s.bags[i].tau, k))
            .collect();
        let lower: Vec<f64> = (0..params.k_max)
            .map(|k| naive_lower_bound(&s.bags[i].tau, k, &q[k]))
            .collect();
        let cbag = &corpus.bags[i];
        let active = naive_active(&s.bags[i], &cbag.hinges);
        for k in 0..params.k_max {
            for j in 0..s.bags[i].num_tracks {
                let v = if cbag.mask[k] {
                    let (base, coupling) = naive_zeta(&s.bags[i], cbag, &s, &lower, &active, j, k);
                    logistic(base + params.penalty_c * coupling)
                } else {
                    0.0
                };
                let km = s.bags[i].k_max;
                s.bags[i].nu[j * km + k] = v;
            }
        }
        qs.push(q);
        lowers.push(lower);
    }
    NaiveSweep {
        sigma_k2: s
            .appearance
            .channels
            .iter()
            .map(|c| c.sigma_k2.clone())
            .collect(),
        phi: s
            .appearance
            .channels
            .iter()
            .map(|c| c.phi.clone())
            .collect(),
        tau: s.bags.iter().map(|b| b.tau.clone()).collect(),
        nu: s.bags.iter().map(|b| b.nu.clone()).collect(),
        q: qs,
        lower: lowers,
        state: s,
    }
}

/// `σ_A² = Σ_k (D σ_k² + ‖Φ_k‖²)/(K D)` and
/// `σ_n² = Σ_i Σ_j (‖x‖² - 2 E[z]A x + E[z U zᵀ]) / (Σ N_i D)` per channel,
/// with `E[z U zᵀ] = Σ_k ν_k (D σ_k² + ‖Φ_k‖²) + Σ_{k≠l} ν_k ν_l Φ_k·Φ_l`.
pub fn naive_hyperparams(state: &VariationalState, corpus: &Corpus) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (c, ch) in state.appearance.channels.iter().enumerate() {
        let d = ch.dim;
        let kk = ch.sigma_k2.len();
        let mut a = 0.0;
        for k in 0..kk {
            a += d as f64 * ch.sigma_k2[k]
                + vdot(&ch.phi[k * d..(k + 1) * d], &ch.phi[k * d..(k + 1) * d]);
        }
        let appearance = a / (kk * d) as f64;
        let mut total = 0.0;
        let mut tracks = 0usize;
        for (bag, cbag) in state.bags.iter().zip(&corpus.bags) {
            for j in 0..bag.num_tracks {
                tracks += 1;
                let x = &cbag.features[c][j * d..(j + 1) * d];
                let nu = &bag.nu[j * bag.k_max..(j + 1) * bag.k_max];
                let mut e = vdot(x, x);
                for k in 0..kk {
                    let pk = &ch.phi[k * d..(k + 1) * d];
                    e -= 2.0 * nu[k] * vdot(pk, x);
                    e += nu[k] * (d as f64 * ch.sigma_k2[k] + vdot(pk, pk));
                    for l in 0..kk {
                        if l != k {
                            e += nu[k] * nu[l] * vdot(pk, &ch.phi[l * d..(l + 1) * d]);
                        }
                    }
                }
                total += e;
            }
        }
        out.push((total / (tracks * d) as f64, appearance));
    }
    out
}

// ---- random instances ----

/// Shape limits of a random instance.
#[derive(Clone, Copy, Debug)]
pub struct InstanceShape {
    pub max_bags: usize,
    pub max_tracks: usize,
    pub max_k: usize,
    pub max_dim: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            max_bags: 4,
            max_tracks: 5,
            max_k: 6,
            max_dim: 4,
        }
    }
}

/// A random dataset (features O(1), random valid label sets) and
/// hyperparameters with `K_max ≤ shape.max_k`.
pub fn random_instance(seed: u64, shape: InstanceShape) -> (Dataset, HyperParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_max = rng.random_range(2..=shape.max_k);
    let num_subjects = rng.random_range(1..=k_max / 2);
    let num_actions = rng.random_range(1..=(k_max - num_subjects).min(k_max / 2).max(1));
    let num_background = k_max - num_subjects - num_actions;
    let space = ConceptSpace::new(
        num_subjects,
        num_actions,
        num_background,
        rng.random_range(1..=shape.max_dim),
        rng.random_range(1..=shape.max_dim),
    )
    .expect("valid space");
    let bags = (0..rng.random_range(1..=shape.max_bags))
        .map(|i| {
            let n = rng.random_range(1..=shape.max_tracks);
            let tracks = (0..n)
                .map(|_| Track {
                    subject_features: (0..space.subject_dim)
                        .map(|_| rng.random_range(-1.5..1.5))
                        .collect(),
                    action_features: (0..space.action_dim)
                        .map(|_| rng.random_range(-1.5..1.5))
                        .collect(),
                    ground_truth: None,
                })
                .collect();
            let mut labels = Vec::new();
            for _ in 0..rng.random_range(0..=3) {
                let s = rng
                    .random_bool(0.8)
                    .then(|| rng.random_range(0..num_subjects));
                let a = if s.is_none() || rng.random_bool(0.7) {
                    Some(rng.random_range(0..num_actions))
                } else {
                    None
                };
                labels.push(LabelTuple {
                    subject: s,
                    action: a,
                });
            }
            VideoBag {
                id: format!("r{i}"),
                labels,
                tracks,
            }
        })
        .collect();
    let hp = HyperParams {
        alpha: rng.random_range(0.5..5.0),
        penalty_c: rng.random_range(0.0..3.0),
        k_max,
        noise_var: PerConcept {
            subject: rng.random_range(0.3..2.0),
            action: rng.random_range(0.3..2.0),
        },
        appearance_var: PerConcept {
            subject: rng.random_range(0.5..3.0),
            action: rng.random_range(0.5..3.0),
        },
        estimate_variances: false,
    };
    (Dataset::new(space, bags).expect("valid dataset"), hp)
}

/// Moves an initial state to a generic point: random τ, unmasked ν in
/// (0.05, 0.95), Φ entries in (-1, 1), σ_k² in (0.1, 1).
pub fn perturb_state(state: &mut VariationalState, corpus: &Corpus, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for ch in &mut state.appearance.channels {
        for v in &mut ch.phi {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in &mut ch.sigma_k2 {
            *v = rng.random_range(0.1..1.0);
        }
    }
    for (bag, cbag) in state.bags.iter_mut().zip(&corpus.bags) {
        for t in &mut bag.tau {
            *t = [rng.random_range(0.3..6.0), rng.random_range(0.3..6.0)];
        }
        for j in 0..bag.num_tracks {
            for k in 0..bag.k_max {
                let v = if cbag.mask[k] {
                    rng.random_range(0.05..0.95)
                } else {
                    0.0
                };
                bag.nu[j * bag.k_max + k] = v;
            }
        }
    }
}
