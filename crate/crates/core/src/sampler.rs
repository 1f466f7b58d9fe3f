//! Synthetic datasets drawn from the stacked integrative IBP, with the
//! planted appearance rows and activations kept for recovery tests.
//!
//! The factor pool is truncated at `K_s + K_a + K_bg`. Every bag draws its own
//! sticks `v_t ~ Beta(α, 1)`, activations `z_jk ~ Bern(∏_{t≤k} v_t)` and
//! features `x^e_j = Σ_k z_jk a^e_k + N(0, σ_ne² I)`. A bag's weak labels are
//! the tuples that co-occur on its tracks, each then deleted with probability
//! `label_noise`.
//!
//! Randomness is deterministic in `seed`: the planted rows use one ChaCha8
//! stream and every (attempt, bag) pair its own stream, so a configuration
//! always yields the same dataset.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Concept, ConceptSpace, Dataset, GroundTruth, LabelTuple, PerConcept, Track, VideoBag,
};

/// Draws of `z` allowed before giving up on covering every class.
pub const MAX_ATTEMPTS: u32 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackCount {
    Fixed(usize),
    Range { min: usize, max: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub space: ConceptSpace,
    pub num_videos: usize,
    pub tracks_per_video: TrackCount,
    pub alpha: f64,
    pub noise_var: PerConcept<f64>,
    pub appearance_var: PerConcept<f64>,
    /// Probability of deleting each label tuple.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep at most one active labeled factor per concept on each track
    /// (chosen uniformly among the drawn ones), so every track has a single
    /// well-defined ground-truth subject and action.
    #[serde(default = "yes")]
    pub exclusive_labels: bool,
}

fn yes() -> bool {
    true
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            space: ConceptSpace {
                num_subjects: 3,
                num_actions: 3,
                num_background: 2,
                subject_dim: 16,
                action_dim: 16,
            },
            num_videos: 50,
            tracks_per_video: TrackCount::Fixed(10),
            alpha: 2.0,
            noise_var: PerConcept::splat(0.5),
            appearance_var: PerConcept::splat(1.0),
            label_noise: 0.0,
            seed: 0,
            exclusive_labels: true,
        }
    }
}

impl GenConfig {
    pub fn num_factors(&self) -> usize {
        self.space.num_labeled() + self.space.num_background
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.num_videos == 0 {
            return Err(Error::validation("num_videos must be >= 1"));
        }
        match self.tracks_per_video {
            TrackCount::Fixed(0) => return Err(Error::validation("tracks_per_video must be >= 1")),
            TrackCount::Range { min, max } if min == 0 || min > max => {
                return Err(Error::validation(format!(
                    "invalid tracks_per_video range {min}..={max}"
                )))
            }
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        for c in Concept::ALL {
            for v in [self.noise_var.get(c), self.appearance_var.get(c)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::validation(format!(
                        "{} variances must be > 0, got {v}",
                        c.name()
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::validation(format!(
                "label_noise must be in [0, 1), got {}",
                self.label_noise
            )));
        }
        if self.num_factors() == 0 {
            return Err(Error::validation("the concept space has no factors"));
        }
        Ok(())
    }
}

/// `π_k = ∏_{t≤k} v_t`.
pub fn prior_from_sticks(v: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    v.iter()
        .map(|&t| {
            acc *= t;
            acc
        })
        .collect()
}

/// Stick-breaking prior truncated at `k_max`, with `v_t ~ Beta(α, 1)` drawn
/// as `U^{1/α}`.
pub fn sample_stick_breaking<R: Rng + ?Sized>(
    alpha: f64,
    k_max: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::validation(format!("alpha must be > 0, got {alpha}")));
    }
    let v: Vec<f64> = (0..k_max)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            u.powf(1.0 / alpha)
        })
        .collect();
    Ok(prior_from_sticks(&v))
}

/// Appearance rows of every generating factor, row-major `K x D^e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub num_factors: usize,
    pub subject_rows: Vec<f64>,
    pub action_rows: Vec<f64>,
}

impl PlantedModel {
    pub fn row(&self, c: Concept, k: usize, space: &ConceptSpace) -> &[f64] {
        let d = space.dim(c);
        let rows = match c {
            Concept::Subject => &self.subject_rows,
            Concept::Action => &self.action_rows,
        };
        &rows[k * d..(k + 1) * d]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledDataset {
    pub dataset: Dataset,
    pub planted: PlantedModel,
    /// Per bag, the stick prior π.
    pub priors: Vec<Vec<f64>>,
    /// Per bag and track, the activation vector z.
    pub activations: Vec<Vec<Vec<bool>>>,
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, var: f64, rng: &mut R) -> Vec<f64> {
    let sd = var.sqrt();
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            sd * e
        })
        .collect()
}

/// Features `Σ_k z_k a^e_k + noise` of one track.
pub fn render_track<R: Rng + ?Sized>(
    z: &[bool],
    planted: &PlantedModel,
    space: &ConceptSpace,
    noise_var: PerConcept<f64>,
    rng: &mut R,
) -> PerConcept<Vec<f64>> {
    let mut out = PerConcept {
        subject: Vec::new(),
        action: Vec::new(),
    };
    for c in Concept::ALL {
        let mut x = gaussian_vec(space.dim(c), noise_var.get(c), rng);
        for (k, _) in z.iter().enumerate().filter(|(_, &on)| on) {
            for (xi, a) in x.iter_mut().zip(planted.row(c, k, space)) {
                *xi += a;
            }
        }
        match c {
            Concept::Subject => out.subject = x,
            Concept::Action => out.action = x,
        }
    }
    out
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_activations<R: Rng + ?Sized>(
    pi: &[f64],
    space: &ConceptSpace,
    exclusive: bool,
    rng: &mut R,
) -> Vec<bool> {
    let mut z: Vec<bool> = pi.iter().map(|&p| rng.random::<f64>() < p).collect();
    if exclusive {
        for c in Concept::ALL {
            let on: Vec<usize> = space.factor_range(c).filter(|&k| z[k]).collect();
            if on.len() > 1 {
                let keep = on[rng.random_range(0..on.len())];
                for k in on {
                    z[k] = k == keep;
                }
            }
        }
    }
    z
}

/// Lowest-index active class of each concept.
fn ground_truth_of(z: &[bool], space: &ConceptSpace) -> GroundTruth {
    let first = |c: Concept| {
        space
            .factor_range(c)
            .find(|&k| z[k])
            .map(|k| k - space.factor_range(c).start)
    };
    GroundTruth {
        subject: first(Concept::Subject),
        action: first(Concept::Action),
    }
}

fn labels_of(truths: &[GroundTruth]) -> Vec<LabelTuple> {
    let set: BTreeSet<LabelTuple> = truths
        .iter()
        .filter(|g| g.subject.is_some() || g.action.is_some())
        .map(|g| LabelTuple {
            subject: g.subject,
            action: g.action,
        })
        .collect();
    set.into_iter().collect()
}

struct RawBag {
    pi: Vec<f64>,
    z: Vec<Vec<bool>>,
    gt: Vec<GroundTruth>,
}

pub fn sample_dataset(cfg: &GenConfig) -> Result<SampledDataset> {
    cfg.validate()?;
    let space = &cfg.space;
    let k = cfg.num_factors();
    let mut rng = stream_rng(cfg.seed, 0);
    let planted = PlantedModel {
        num_factors: k,
        subject_rows: gaussian_vec(k * space.subject_dim, cfg.appearance_var.subject, &mut rng),
        action_rows: gaussian_vec(k * space.action_dim, cfg.appearance_var.action, &mut rng),
    };

    let mut raw = Vec::new();
    let mut covered = false;
    for attempt in 0..MAX_ATTEMPTS {
        raw.clear();
        let mut seen = vec![false; space.num_labeled()];
        for i in 0..cfg.num_videos {
            let mut rng = stream_rng(cfg.seed, (u64::from(attempt) << 32) | (i as u64 + 1));
            let n = match cfg.tracks_per_video {
                TrackCount::Fixed(n) => n,
                TrackCount::Range { min, max } => rng.random_range(min..=max),
            };
            let pi = sample_stick_breaking(cfg.alpha, k, &mut rng)?;
            let z: Vec<Vec<bool>> = (0..n)
                .map(|_| draw_activations(&pi, space, cfg.exclusive_labels, &mut rng))
                .collect();
            let gt: Vec<GroundTruth> = z.iter().map(|zj| ground_truth_of(zj, space)).collect();
            for zj in &z {
                for (s, on) in seen.iter_mut().zip(zj) {
                    *s |= on;
                }
            }
            raw.push(RawBag { pi, z, gt });
        }
        if seen.iter().all(|&s| s) {
            covered = true;
            break;
        }
    }
    if !covered {
        return Err(Error::validation(format!(
            "no draw in {MAX_ATTEMPTS} attempts activated every labeled class; raise alpha or the number of tracks"
        )));
    }

    let mut bags = Vec::with_capacity(cfg.num_videos);
    let mut priors = Vec::with_capacity(cfg.num_videos);
    let mut activations = Vec::with_capacity(cfg.num_videos);
    for (i, rb) in raw.into_iter().enumerate() {
        // features and label noise use a stream disjoint from the z draws
        let mut rng = stream_rng(cfg.seed ^ 0x5eed_f00d_0000_0000, i as u64 + 1);
        let tracks =
            rb.z.iter()
                .zip(&rb.gt)
                .map(|(zj, &g)| {
                    let x = render_track(zj, &planted, space, cfg.noise_var, &mut rng);
                    Track {
                        subject_features: x.subject,
                        action_features: x.action,
                        ground_truth: Some(g),
                    }
                })
                .collect();
        let labels = labels_of(&rb.gt)
            .into_iter()
            .filter(|_| !(cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise))
            .collect();
        bags.push(VideoBag {
            id: format!("v{i}"),
            labels,
            tracks,
        });
        priors.push(rb.pi);
        activations.push(rb.z);
    }
    Ok(SampledDataset {
        dataset: Dataset::new(space.clone(), bags)?,
        planted,
        priors,
        activations,
    })
}
