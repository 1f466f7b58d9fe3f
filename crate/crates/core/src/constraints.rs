//! Location constraints derived from a bag's weak labels.
//!
//! Every tuple must be witnessed by some track (co-activation for pairs,
//! activation for singletons); these become hinge penalties on expectations.
//! A class absent from the bag's labels may not be activated at all, which
//! is the factor mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ConceptSpace, LabelTuple, VideoBag};

/// A hinge penalty term in factor-index form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hinge {
    /// `max(0, 1 - Σ_j ν_js ν_ja)`.
    Pair { subject: usize, action: usize },
    /// `max(0, 1 - Σ_j ν_jk)`.
    Single(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSet {
    /// `(subject class, action class)` for every `(s, a)` tuple.
    pub pairs: Vec<(usize, usize)>,
    /// Subject classes of `(s, ∅)` tuples.
    pub singleton_subjects: Vec<usize>,
    /// Action classes of `(∅, a)` tuples.
    pub singleton_actions: Vec<usize>,
    /// `mask[k]` is true when factor `k` may be active in this bag.
    pub mask: Vec<bool>,
}

/// Builds the constraint set of one bag.
pub fn build_constraints(
    bag: &VideoBag,
    space: &ConceptSpace,
    k_max: usize,
) -> Result<ConstraintSet> {
    build_from_labels(&bag.labels, space, k_max)
        .map_err(|e| Error::validation(format!("{e} in video {}", bag.id)))
}

pub(crate) fn build_from_labels(
    labels: &[LabelTuple],
    space: &ConceptSpace,
    k_max: usize,
) -> std::result::Result<ConstraintSet, String> {
    if k_max < space.num_labeled() {
        return Err(format!(
            "k_max {k_max} smaller than the number of labeled factors {}",
            space.num_labeled()
        ));
    }
    let mut set = ConstraintSet {
        pairs: Vec::new(),
        singleton_subjects: Vec::new(),
        singleton_actions: Vec::new(),
        mask: vec![false; k_max],
    };
    for m in &mut set.mask[space.num_labeled()..] {
        *m = true;
    }
    for tuple in labels {
        tuple.validate(space)?;
        match (tuple.subject, tuple.action) {
            (Some(s), Some(a)) => push_unique(&mut set.pairs, (s, a)),
            (Some(s), None) => push_unique(&mut set.singleton_subjects, s),
            (None, Some(a)) => push_unique(&mut set.singleton_actions, a),
            (None, None) => unreachable!("rejected by validate"),
        }
        if let Some(s) = tuple.subject {
            set.mask[space.subject_factor(s)] = true;
        }
        if let Some(a) = tuple.action {
            set.mask[space.action_factor(a)] = true;
        }
    }
    Ok(set)
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

impl ConstraintSet {
    /// No labels known: every factor admissible and nothing to witness.
    pub fn unconstrained(k_max: usize) -> Self {
        ConstraintSet {
            pairs: Vec::new(),
            singleton_subjects: Vec::new(),
            singleton_actions: Vec::new(),
            mask: vec![true; k_max],
        }
    }

    /// Hinge terms with class indices translated to factor indices.
    pub fn hinges(&self, space: &ConceptSpace) -> Vec<Hinge> {
        let mut out = Vec::with_capacity(
            self.pairs.len() + self.singleton_subjects.len() + self.singleton_actions.len(),
        );
        out.extend(self.pairs.iter().map(|&(s, a)| Hinge::Pair {
            subject: space.subject_factor(s),
            action: space.action_factor(a),
        }));
        out.extend(
            self.singleton_subjects
                .iter()
                .map(|&s| Hinge::Single(space.subject_factor(s))),
        );
        out.extend(
            self.singleton_actions
                .iter()
                .map(|&a| Hinge::Single(space.action_factor(a))),
        );
        out
    }

    pub fn num_constraints(&self) -> usize {
        self.pairs.len() + self.singleton_subjects.len() + self.singleton_actions.len()
    }
}
