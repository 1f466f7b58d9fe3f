//! Weakly supervised localization of heterogeneous concept pairs (subject,
//! action) in bags of tracks with a constrained, stacked, integrative Indian
//! Buffet Process and truncated mean-field variational inference.
//!
//! ```no_run
//! use siibp::{inference, io, HyperParams};
//!
//! let data = io::load_dataset("train.json")?;
//! let out = inference::fit(&data, &HyperParams::default(), &inference::FitOptions::default())?;
//! io::save_model(&out.model, "model.json")?;
//! # Ok::<(), siibp::Error>(())
//! ```

pub mod constraints;
pub mod decode;
mod error;
pub mod inference;
pub mod io;
mod par;
pub mod sampler;
pub mod special;
pub mod types;

pub use constraints::{build_constraints, ConstraintSet, Hinge};
pub use error::{Error, Result};
pub use par::Exec;
pub use types::{
    Concept, ConceptSpace, Dataset, GroundTruth, HyperParams, LabelTuple, PerConcept, Track,
    VideoBag,
};
