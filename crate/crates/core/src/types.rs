//! Domain values shared by every module: the concept space and its factor
//! layout, weak label tuples, tracks, bags and hyperparameters.
//!
//! Class indices are 0-based everywhere in code and in files.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two heterogeneous concept types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concept {
    Subject,
    Action,
}

impl Concept {
    pub const ALL: [Concept; 2] = [Concept::Subject, Concept::Action];

    pub fn name(self) -> &'static str {
        match self {
            Concept::Subject => "subject",
            Concept::Action => "action",
        }
    }
}

/// A value held once per concept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerConcept<T> {
    pub subject: T,
    pub action: T,
}

impl<T: Copy> PerConcept<T> {
    pub fn splat(v: T) -> Self {
        PerConcept {
            subject: v,
            action: v,
        }
    }

    pub fn get(&self, c: Concept) -> T {
        match c {
            Concept::Subject => self.subject,
            Concept::Action => self.action,
        }
    }

    pub fn set(&mut self, c: Concept, v: T) {
        match c {
            Concept::Subject => self.subject = v,
            Concept::Action => self.action = v,
        }
    }
}

/// Class counts and feature dimensions.
///
/// Latent factors are laid out as `[subjects | actions | background]`: factor
/// `s` is subject class `s`, factor `num_subjects + a` is action class `a`, and
/// every factor from `num_labeled()` on is a background factor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptSpace {
    pub num_subjects: usize,
    pub num_actions: usize,
    pub num_background: usize,
    pub subject_dim: usize,
    pub action_dim: usize,
}

impl ConceptSpace {
    pub fn new(
        num_subjects: usize,
        num_actions: usize,
        num_background: usize,
        subject_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        let space = ConceptSpace {
            num_subjects,
            num_actions,
            num_background,
            subject_dim,
            action_dim,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_dim == 0 || self.action_dim == 0 {
            return Err(Error::validation(format!(
                "feature dimensions must be >= 1 (subject {}, action {})",
                self.subject_dim, self.action_dim
            )));
        }
        Ok(())
    }

    /// Number of factors tied to a class (`K_s + K_a`).
    pub fn num_labeled(&self) -> usize {
        self.num_subjects + self.num_actions
    }

    pub fn num_classes(&self, c: Concept) -> usize {
        match c {
            Concept::Subject => self.num_subjects,
            Concept::Action => self.num_actions,
        }
    }

    pub fn dim(&self, c: Concept) -> usize {
        match c {
            Concept::Subject => self.subject_dim,
            Concept::Action => self.action_dim,
        }
    }

    pub fn subject_factor(&self, s: usize) -> usize {
        s
    }

    pub fn action_factor(&self, a: usize) -> usize {
        self.num_subjects + a
    }

    /// Factor index of class `class` of concept `c`.
    pub fn factor(&self, c: Concept, class: usize) -> usize {
        match c {
            Concept::Subject => self.subject_factor(class),
            Concept::Action => self.action_factor(class),
        }
    }

    /// Factor index range of one concept's classes.
    pub fn factor_range(&self, c: Concept) -> std::ops::Range<usize> {
        match c {
            Concept::Subject => 0..self.num_subjects,
            Concept::Action => self.num_subjects..self.num_labeled(),
        }
    }

    /// The class a factor stands for, or `None` for a background factor.
    pub fn factor_class(&self, k: usize) -> Option<(Concept, usize)> {
        if k < self.num_subjects {
            Some((Concept::Subject, k))
        } else if k < self.num_labeled() {
            Some((Concept::Action, k - self.num_subjects))
        } else {
            None
        }
    }
}

/// A weak label tuple `(s, a)`, `(s, ∅)` or `(∅, a)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(
    from = "(Option<usize>, Option<usize>)",
    into = "(Option<usize>, Option<usize>)"
)]
pub struct LabelTuple {
    pub subject: Option<usize>,
    pub action: Option<usize>,
}

impl From<(Option<usize>, Option<usize>)> for LabelTuple {
    fn from((subject, action): (Option<usize>, Option<usize>)) -> Self {
        LabelTuple { subject, action }
    }
}

impl From<LabelTuple> for (Option<usize>, Option<usize>) {
    fn from(t: LabelTuple) -> Self {
        (t.subject, t.action)
    }
}

impl LabelTuple {
    pub fn pair(subject: usize, action: usize) -> Self {
        LabelTuple {
            subject: Some(subject),
            action: Some(action),
        }
    }

    pub fn subject_only(subject: usize) -> Self {
        LabelTuple {
            subject: Some(subject),
            action: None,
        }
    }

    pub fn action_only(action: usize) -> Self {
        LabelTuple {
            subject: None,
            action: Some(action),
        }
    }

    pub fn get(&self, c: Concept) -> Option<usize> {
        match c {
            Concept::Subject => self.subject,
            Concept::Action => self.action,
        }
    }

    pub fn validate(&self, space: &ConceptSpace) -> std::result::Result<(), String> {
        if self.subject.is_none() && self.action.is_none() {
            return Err("label tuple (null, null) is not allowed".into());
        }
        for c in Concept::ALL {
            if let Some(idx) = self.get(c) {
                if idx >= space.num_classes(c) {
                    return Err(format!(
                        "{} label {} out of range (num classes {})",
                        c.name(),
                        idx,
                        space.num_classes(c)
                    ));
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for LabelTuple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |i| i.to_string());
        write!(f, "({},{})", show(self.subject), show(self.action))
    }
}

/// Per-track ground truth, used only for evaluation. `None` means background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(
    from = "(Option<usize>, Option<usize>)",
    into = "(Option<usize>, Option<usize>)"
)]
pub struct GroundTruth {
    pub subject: Option<usize>,
    pub action: Option<usize>,
}

impl From<(Option<usize>, Option<usize>)> for GroundTruth {
    fn from((subject, action): (Option<usize>, Option<usize>)) -> Self {
        GroundTruth { subject, action }
    }
}

impl From<GroundTruth> for (Option<usize>, Option<usize>) {
    fn from(t: GroundTruth) -> Self {
        (t.subject, t.action)
    }
}

impl GroundTruth {
    pub fn get(&self, c: Concept) -> Option<usize> {
        match c {
            Concept::Subject => self.subject,
            Concept::Action => self.action,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub subject_features: Vec<f64>,
    pub action_features: Vec<f64>,
    pub ground_truth: Option<GroundTruth>,
}

impl Track {
    pub fn features(&self, c: Concept) -> &[f64] {
        match c {
            Concept::Subject => &self.subject_features,
            Concept::Action => &self.action_features,
        }
    }
}

/// A video: a bag of tracks with its weak label set.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoBag {
    pub id: String,
    pub labels: Vec<LabelTuple>,
    pub tracks: Vec<Track>,
}

impl VideoBag {
    pub fn num_tracks(&self) -> usize {
        self.tracks.len()
    }

    /// Drops repeated tuples, keeping first occurrences in order.
    pub fn dedup_labels(&mut self) {
        let mut seen = HashSet::new();
        self.labels.retain(|t| seen.insert(*t));
    }

    fn validate(&self, space: &ConceptSpace) -> Result<()> {
        if self.tracks.is_empty() {
            return Err(Error::validation(format!(
                "video {} has no tracks",
                self.id
            )));
        }
        for (l, tuple) in self.labels.iter().enumerate() {
            tuple
                .validate(space)
                .map_err(|e| Error::validation(format!("{e} at video {} label {l}", self.id)))?;
        }
        for (j, track) in self.tracks.iter().enumerate() {
            for c in Concept::ALL {
                let feats = track.features(c);
                let want = space.dim(c);
                if feats.len() != want {
                    return Err(Error::validation(format!(
                        "feat_{} length {} \u{2260} {} at video {} track {}",
                        c.name(),
                        feats.len(),
                        want,
                        self.id,
                        j
                    )));
                }
                if let Some(d) = feats.iter().position(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "non-finite feat_{}[{}] at video {} track {}",
                        c.name(),
                        d,
                        self.id,
                        j
                    )));
                }
            }
            if let Some(gt) = track.ground_truth {
                for c in Concept::ALL {
                    if let Some(idx) = gt.get(c) {
                        if idx >= space.num_classes(c) {
                            return Err(Error::validation(format!(
                                "ground-truth {} {} out of range at video {} track {}",
                                c.name(),
                                idx,
                                self.id,
                                j
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// A validated collection of bags over one concept space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    space: ConceptSpace,
    bags: Vec<VideoBag>,
}

impl Dataset {
    /// Validates every bag and deduplicates label tuples.
    pub fn new(space: ConceptSpace, mut bags: Vec<VideoBag>) -> Result<Self> {
        space.validate()?;
        let mut ids = HashSet::new();
        for bag in &mut bags {
            bag.validate(&space)?;
            bag.dedup_labels();
            if !ids.insert(bag.id.clone()) {
                return Err(Error::validation(format!("duplicate video id {}", bag.id)));
            }
        }
        Ok(Dataset { space, bags })
    }

    pub fn space(&self) -> &ConceptSpace {
        &self.space
    }

    pub fn bags(&self) -> &[VideoBag] {
        &self.bags
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn num_tracks(&self) -> usize {
        self.bags.iter().map(VideoBag::num_tracks).sum()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.bags
            .iter()
            .all(|b| b.tracks.iter().all(|t| t.ground_truth.is_some()))
    }

    /// Splits into (first `n` bags, rest).
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.bags.len());
        let head = Dataset {
            space: self.space.clone(),
            bags: self.bags[..n].to_vec(),
        };
        let tail = Dataset {
            space: self.space.clone(),
            bags: self.bags[n..].to_vec(),
        };
        (head, tail)
    }
}

/// Model constants and the initial noise/appearance variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// IBP sparsity prior.
    pub alpha: f64,
    /// Weight of the hinge penalties on the location constraints.
    pub penalty_c: f64,
    /// Truncation level of the stick-breaking prior.
    pub k_max: usize,
    /// Noise variance per concept.
    pub noise_var: PerConcept<f64>,
    /// Prior variance of the appearance rows per concept.
    pub appearance_var: PerConcept<f64>,
    /// Re-estimate the variances between inner loops.
    pub estimate_variances: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 100.0,
            penalty_c: 0.5,
            k_max: 30,
            noise_var: PerConcept::splat(1.0),
            appearance_var: PerConcept::splat(1.0),
            estimate_variances: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, space: &ConceptSpace) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.penalty_c >= 0.0 && self.penalty_c.is_finite()) {
            return Err(Error::validation(format!(
                "C must be >= 0, got {}",
                self.penalty_c
            )));
        }
        if self.k_max < space.num_labeled() || self.k_max == 0 {
            return Err(Error::validation(format!(
                "k_max {} must be >= K_s + K_a = {} and >= 1",
                self.k_max,
                space.num_labeled()
            )));
        }
        for c in Concept::ALL {
            for (name, v) in [
                ("noise", self.noise_var.get(c)),
                ("appearance", self.appearance_var.get(c)),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::validation(format!(
                        "{} {name} variance must be > 0, got {v}",
                        c.name()
                    )));
                }
            }
        }
        Ok(())
    }
}
