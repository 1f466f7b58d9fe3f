//! The training driver (inner sweeps plus outer variance re-estimation) and
//! test-time inference with a frozen appearance model.

use serde::{Deserialize, Serialize};

use crate::decode::{self, DecodedBag, MetricsReport};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::types::{ConceptSpace, Dataset, HyperParams};

use super::corpus::{Corpus, LabelMode};
use super::objective::expected_sq_error;
use super::objective::{
    compute_objective, first_non_finite_parameter, local_objective, ObjectiveTerms,
};
use super::state::{init_state, AppearanceModel, BagPosterior, EngineParams, VariationalState};
use super::updates::{hinge_expectation, sweep, sweep_locals, Reconstruction};
use super::variant::{ChannelKind, Variant};

/// Floor applied to a re-estimated noise variance.
pub const NOISE_VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub inner_max_iters: usize,
    pub outer_max_iters: usize,
    pub inner_rel_tol: f64,
    pub outer_rel_tol: f64,
    /// Recorded in every output. Initialization is deterministic, so the
    /// seed does not change the result.
    pub seed: u64,
    pub variant: Variant,
    /// Map over bags on the ambient rayon pool.
    pub parallel: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            inner_max_iters: 200,
            outer_max_iters: 10,
            inner_rel_tol: 1e-3,
            outer_rel_tol: 1e-4,
            seed: 0,
            variant: Variant::WscSiibp,
            parallel: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.inner_max_iters == 0 || self.outer_max_iters == 0 {
            return Err(Error::validation("iteration limits must be >= 1"));
        }
        if !(self.inner_rel_tol > 0.0 && self.outer_rel_tol > 0.0) {
            return Err(Error::validation("tolerances must be > 0"));
        }
        Ok(())
    }

    fn exec(&self) -> Exec {
        Exec::from_flag(self.parallel)
    }
}

/// Final variances of one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelVariances {
    pub channel: ChannelKind,
    pub noise_var: f64,
    pub appearance_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub variant: Variant,
    pub seed: u64,
    pub alpha: f64,
    /// Hinge weight actually applied (0 for the unconstrained variants).
    pub penalty_c: f64,
    pub k_max: usize,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub inner_converged: bool,
    pub outer_converged: bool,
    /// `(sweep, objective)`; sweep 0 is the initial state.
    pub objective_trace: Vec<(usize, f64)>,
    pub final_objective: ObjectiveTerms,
    pub variances: Vec<ChannelVariances>,
    pub constraints: ConstraintSummary,
    pub decoded: Vec<DecodedBag>,
    pub metrics: Option<MetricsReport>,
}

/// What a fitted model carries to test time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub variant: Variant,
    pub space: ConceptSpace,
    pub alpha: f64,
    /// Hinge weight as given (the variant decides whether it applies).
    pub penalty_c: f64,
    pub k_max: usize,
    pub appearance: AppearanceModel,
    pub meta: FitMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub seed: u64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub final_objective: f64,
}

impl TrainedModel {
    pub fn engine_params(&self) -> EngineParams {
        EngineParams {
            alpha: self.alpha,
            penalty_c: self.variant.effective_penalty(self.penalty_c),
            k_max: self.k_max,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub state: VariationalState,
    pub model: TrainedModel,
    pub report: FitReport,
}

fn rel_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / cur.abs()
}

fn checked_objective(
    state: &VariationalState,
    corpus: &Corpus,
    params: &EngineParams,
    exec: Exec,
    when: &str,
) -> Result<ObjectiveTerms> {
    let terms = compute_objective(state, corpus, params, exec);
    if terms.total().is_finite() {
        return Ok(terms);
    }
    let culprit = first_non_finite_parameter(state)
        .or_else(|| terms.first_non_finite().map(str::to_string))
        .unwrap_or_else(|| "objective total".to_string());
    Err(Error::Numerical(format!(
        "non-finite objective {when}: first non-finite quantity is {culprit}"
    )))
}

/// Closed-form variance re-estimation for every channel:
/// `σ_A² = Σ_k (D σ_k² + ‖Φ_k‖²) / (K D)` and
/// `σ_n² = Σ_i Σ_j E‖x_j - z_j A‖² / (Σ_i N_i · D)`.
pub fn update_hyperparams(state: &mut VariationalState, corpus: &Corpus) -> Vec<ChannelVariances> {
    let total_tracks = corpus.num_tracks() as f64;
    let mut out = Vec::with_capacity(state.appearance.channels.len());
    for c in 0..state.appearance.channels.len() {
        let ch = &state.appearance.channels[c];
        let d = ch.dim as f64;
        let k = ch.sigma_k2.len() as f64;
        let appearance_var =
            par::ordered_sum((0..ch.sigma_k2.len()).map(|k| ch.second_moment(k))) / (k * d);
        let sq = par::ordered_sum(state.bags.iter().zip(&corpus.bags).map(|(post, cbag)| {
            par::ordered_sum(
                (0..post.num_tracks)
                    .map(|j| expected_sq_error(ch, cbag.track(c, ch.dim, j), post.nu_row(j))),
            )
        }));
        let mut noise_var = sq / (total_tracks * d);
        if !(noise_var >= NOISE_VAR_FLOOR) {
            log::warn!(
                "{:?} channel: re-estimated noise variance {noise_var:e} clamped to {NOISE_VAR_FLOOR:e}",
                ch.kind
            );
            noise_var = NOISE_VAR_FLOOR;
        }
        let ch = &mut state.appearance.channels[c];
        ch.noise_var = noise_var;
        ch.appearance_var = appearance_var;
        out.push(ChannelVariances {
            channel: ch.kind,
            noise_var,
            appearance_var,
        });
    }
    out
}

/// Slack below which an expectation constraint counts as met. The mean-field
/// fixed point of a constraint with a single supporting track sits at
/// `sigmoid(zeta + C) < 1`, so an exact test flags saturation round-off.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-3;

/// Expectation-constraint status at the end of a fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSummary {
    pub total: usize,
    /// Constraints with `1 - E > CONSTRAINT_TOLERANCE`.
    pub violated: usize,
    pub bags_with_violation: usize,
    /// Constraints with `E < 1` at all.
    pub strictly_below_one: usize,
    pub bags_strictly_below_one: usize,
    pub max_gap: f64,
}

pub fn constraint_violations(state: &VariationalState, corpus: &Corpus) -> ConstraintSummary {
    let mut out = ConstraintSummary::default();
    for (post, cbag) in state.bags.iter().zip(&corpus.bags) {
        let (mut loose, mut strict) = (0, 0);
        for h in &cbag.hinges {
            let gap = 1.0 - hinge_expectation(post, h);
            out.total += 1;
            out.max_gap = out.max_gap.max(gap);
            strict += usize::from(gap > 0.0);
            loose += usize::from(gap > CONSTRAINT_TOLERANCE);
        }
        out.violated += loose;
        out.bags_with_violation += usize::from(loose > 0);
        out.strictly_below_one += strict;
        out.bags_strictly_below_one += usize::from(strict > 0);
    }
    out
}

fn variances_of(state: &VariationalState) -> Vec<ChannelVariances> {
    state
        .appearance
        .channels
        .iter()
        .map(|ch| ChannelVariances {
            channel: ch.kind,
            noise_var: ch.noise_var,
            appearance_var: ch.appearance_var,
        })
        .collect()
}

/// Fits the model to `dataset` with its weak labels.
pub fn fit(dataset: &Dataset, hp: &HyperParams, opts: &FitOptions) -> Result<FitOutput> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot fit an empty dataset"));
    }
    hp.validate(dataset.space())?;
    opts.validate()?;
    let exec = opts.exec();
    let corpus = Corpus::build(dataset, opts.variant, hp.k_max, LabelMode::WithLabels)?;
    let params = EngineParams {
        alpha: hp.alpha,
        penalty_c: opts.variant.effective_penalty(hp.penalty_c),
        k_max: hp.k_max,
    };
    let mut state = init_state(&corpus, hp);

    let mut current =
        checked_objective(&state, &corpus, &params, exec, "at initialization")?.total();
    let mut trace = vec![(0, current)];
    let mut sweeps = 0;
    let mut outer = 0;
    let mut inner_converged = false;
    let mut outer_converged = false;
    let mut outer_prev = current;

    while outer < opts.outer_max_iters {
        outer += 1;
        inner_converged = false;
        for _ in 0..opts.inner_max_iters {
            sweep(&mut state, &corpus, &params, exec);
            sweeps += 1;
            let next = checked_objective(
                &state,
                &corpus,
                &params,
                exec,
                &format!("after sweep {sweeps}"),
            )?
            .total();
            trace.push((sweeps, next));
            let change = rel_change(current, next);
            current = next;
            if change <= opts.inner_rel_tol {
                inner_converged = true;
                break;
            }
        }
        log::info!("outer iteration {outer}: {sweeps} sweeps, objective {current:.6e}");
        if !hp.estimate_variances {
            outer_converged = true;
            break;
        }
        update_hyperparams(&mut state, &corpus);
        current =
            checked_objective(&state, &corpus, &params, exec, "after variance update")?.total();
        if rel_change(outer_prev, current) <= opts.outer_rel_tol {
            outer_converged = true;
            break;
        }
        outer_prev = current;
    }

    let final_terms = checked_objective(&state, &corpus, &params, exec, "at the end of the fit")?;
    let constraints = constraint_violations(&state, &corpus);
    let decoded =
        decode::decode_dataset(&state.bags, dataset, decode::DEFAULT_BACKGROUND_THRESHOLD)?;
    let metrics = if dataset.has_ground_truth() {
        Some(decode::score(&decoded, &state.bags, dataset)?)
    } else {
        None
    };
    let model = TrainedModel {
        variant: opts.variant,
        space: dataset.space().clone(),
        alpha: hp.alpha,
        penalty_c: hp.penalty_c,
        k_max: hp.k_max,
        appearance: state.appearance.clone(),
        meta: FitMeta {
            seed: opts.seed,
            inner_iterations: sweeps,
            outer_iterations: outer,
            final_objective: final_terms.total(),
        },
    };
    let report = FitReport {
        variant: opts.variant,
        seed: opts.seed,
        alpha: hp.alpha,
        penalty_c: params.penalty_c,
        k_max: hp.k_max,
        inner_iterations: sweeps,
        outer_iterations: outer,
        inner_converged,
        outer_converged,
        objective_trace: trace,
        final_objective: final_terms,
        variances: variances_of(&state),
        constraints,
        decoded,
        metrics,
    };
    Ok(FitOutput {
        state,
        model,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        let f = FitOptions::default();
        PredictOptions {
            max_iters: f.inner_max_iters,
            rel_tol: f.inner_rel_tol,
            seed: f.seed,
            parallel: f.parallel,
        }
    }
}

impl From<&FitOptions> for PredictOptions {
    fn from(f: &FitOptions) -> Self {
        PredictOptions {
            max_iters: f.inner_max_iters,
            rel_tol: f.inner_rel_tol,
            seed: f.seed,
            parallel: f.parallel,
        }
    }
}

/// Posteriors of test bags under a frozen appearance model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub variant: Variant,
    pub mode: LabelMode,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub ids: Vec<String>,
    pub bags: Vec<BagPosterior>,
}

/// Test-time inference: only τ and ν of the test bags are optimized.
pub fn predict(
    model: &TrainedModel,
    test: &Dataset,
    opts: &PredictOptions,
    mode: LabelMode,
) -> Result<Prediction> {
    let ts = test.space();
    let ms = &model.space;
    if ts.subject_dim != ms.subject_dim || ts.action_dim != ms.action_dim {
        return Err(Error::validation(format!(
            "test feature dimensions (subject {}, action {}) do not match the model (subject {}, action {})",
            ts.subject_dim, ts.action_dim, ms.subject_dim, ms.action_dim
        )));
    }
    if ts.num_subjects != ms.num_subjects || ts.num_actions != ms.num_actions {
        return Err(Error::validation(format!(
            "test classes ({} subjects, {} actions) do not match the model ({}, {})",
            ts.num_subjects, ts.num_actions, ms.num_subjects, ms.num_actions
        )));
    }
    if opts.max_iters == 0 || !(opts.rel_tol > 0.0) {
        return Err(Error::validation(
            "predict needs max_iters >= 1 and rel_tol > 0",
        ));
    }
    let exec = Exec::from_flag(opts.parallel);
    let corpus = Corpus::build(test, model.variant, model.k_max, mode)?;
    let params = model.engine_params();
    let bags = corpus
        .bags
        .iter()
        .map(|b| BagPosterior::initial(b.num_tracks, model.k_max, model.alpha, &b.mask))
        .collect();
    let mut state = VariationalState {
        appearance: model.appearance.clone(),
        bags,
    };
    let ids = test.bags().iter().map(|b| b.id.clone()).collect();
    if test.is_empty() {
        return Ok(Prediction {
            variant: model.variant,
            mode,
            seed: opts.seed,
            iterations: 0,
            converged: true,
            ids,
            bags: state.bags,
        });
    }
    let mut recon = Reconstruction::compute(&state, exec);
    let mut current = local_objective(&state, &corpus, &params, exec).total();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iters {
        sweep_locals(&mut state, &corpus, &params, &mut recon, exec);
        iterations += 1;
        let next = local_objective(&state, &corpus, &params, exec).total();
        if !next.is_finite() {
            let culprit =
                first_non_finite_parameter(&state).unwrap_or_else(|| "objective total".into());
            return Err(Error::Numerical(format!(
                "non-finite objective after predict sweep {iterations}: first non-finite quantity is {culprit}"
            )));
        }
        let change = rel_change(current, next);
        current = next;
        if change <= opts.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Prediction {
        variant: model.variant,
        mode,
        seed: opts.seed,
        iterations,
        converged,
        ids,
        bags: state.bags,
    })
}
