use serde::{Deserialize, Serialize};

use crate::constraints::{build_from_labels, ConstraintSet, Hinge};
use crate::error::{Error, Result};
use crate::types::{ConceptSpace, Dataset, LabelTuple};

use super::variant::{ChannelKind, Variant};

/// Whether test bags carry their weak labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    WithLabels,
    /// No labels: every factor admissible, no location penalties.
    FreeAnnotation,
}

/// One bag as the engine sees it: features per channel, factor mask and hinge
/// terms. Ground truth never reaches this type.
#[derive(Clone, Debug)]
pub struct CorpusBag {
    pub num_tracks: usize,
    /// Per channel, row-major `num_tracks x dim`.
    pub features: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub hinges: Vec<Hinge>,
}

impl CorpusBag {
    pub fn track(&self, channel: usize, dim: usize, j: usize) -> &[f64] {
        &self.features[channel][j * dim..(j + 1) * dim]
    }
}

/// The observed part of a dataset arranged for inference.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub space: ConceptSpace,
    pub k_max: usize,
    pub channels: Vec<ChannelKind>,
    pub dims: Vec<usize>,
    pub bags: Vec<CorpusBag>,
}

impl Corpus {
    pub fn build(
        dataset: &Dataset,
        variant: Variant,
        k_max: usize,
        mode: LabelMode,
    ) -> Result<Self> {
        let space = dataset.space().clone();
        if k_max < space.num_labeled() {
            return Err(Error::validation(format!(
                "k_max {k_max} must be >= K_s + K_a = {}",
                space.num_labeled()
            )));
        }
        let channels = variant.channels().to_vec();
        let dims: Vec<usize> = channels.iter().map(|c| c.dim(&space)).collect();
        let mut bags = Vec::with_capacity(dataset.len());
        for bag in dataset.bags() {
            let constraints = match mode {
                LabelMode::FreeAnnotation => ConstraintSet::unconstrained(k_max),
                LabelMode::WithLabels => {
                    let labels = project_labels(&bag.labels, variant);
                    build_from_labels(&labels, &space, k_max)
                        .map_err(|e| Error::validation(format!("{e} in video {}", bag.id)))?
                }
            };
            let features = channels
                .iter()
                .zip(&dims)
                .map(|(ch, &d)| {
                    let mut buf = Vec::with_capacity(bag.num_tracks() * d);
                    for t in &bag.tracks {
                        ch.extend_features(t, &mut buf);
                    }
                    buf
                })
                .collect();
            bags.push(CorpusBag {
                num_tracks: bag.num_tracks(),
                features,
                hinges: constraints.hinges(&space),
                mask: constraints.mask,
            });
        }
        Ok(Corpus {
            space,
            k_max,
            channels,
            dims,
            bags,
        })
    }

    pub fn num_tracks(&self) -> usize {
        self.bags.iter().map(|b| b.num_tracks).sum()
    }
}

fn project_labels(labels: &[LabelTuple], variant: Variant) -> Vec<LabelTuple> {
    match variant.label_projection() {
        None => labels.to_vec(),
        Some(c) => {
            let mut out: Vec<LabelTuple> = Vec::new();
            for t in labels {
                if let Some(idx) = t.get(c) {
                    let p = match c {
                        crate::types::Concept::Subject => LabelTuple::subject_only(idx),
                        crate::types::Concept::Action => LabelTuple::action_only(idx),
                    };
                    if !out.contains(&p) {
                        out.push(p);
                    }
                }
            }
            out
        }
    }
}
