//! Truncated mean-field inference: state, closed-form updates, the surrogate
//! objective, and the fit/predict drivers.

mod corpus;
mod fit;
pub mod objective;
mod state;
pub mod sticks;
pub mod updates;
mod variant;

pub use corpus::{Corpus, CorpusBag, LabelMode};
pub use fit::{
    constraint_violations, fit, predict, update_hyperparams, ChannelVariances, ConstraintSummary,
    FitMeta, FitOptions, FitOutput, FitReport, PredictOptions, Prediction, TrainedModel,
    CONSTRAINT_TOLERANCE, NOISE_VAR_FLOOR,
};
pub use objective::{compute_objective, objective_with_q, ObjectiveTerms};
pub use state::{
    init_state, AppearanceModel, BagPosterior, ChannelPosterior, EngineParams, VariationalState,
};
pub use sticks::{compute_q, lower_bound, StickBound};
pub use variant::{ChannelKind, Variant};
