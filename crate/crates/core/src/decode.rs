//! Track labels and localizations from fitted posteriors, and scoring against
//! planted ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::BagPosterior;
use crate::types::{Concept, ConceptSpace, Dataset, LabelTuple, PerConcept, VideoBag};

/// A winning Bernoulli mean below this decodes as background.
pub const DEFAULT_BACKGROUND_THRESHOLD: f64 = 0.5;

/// Thresholds `0.00, 0.05, ..., 1.00`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Localization {
    pub tuple: LabelTuple,
    pub track: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedBag {
    pub id: String,
    /// Per track; `None` is background.
    pub subject: Vec<Option<usize>>,
    pub action: Vec<Option<usize>>,
    /// Selected track for each of the bag's label tuples, in label order.
    pub localization: Vec<Localization>,
}

/// Argmax over one concept's factor range; lowest index wins ties.
fn argmax_class(row: &[f64], space: &ConceptSpace, c: Concept, threshold: f64) -> Option<usize> {
    let range = space.factor_range(c);
    let first = range.start;
    let mut best: Option<(usize, f64)> = None;
    for k in range {
        if best.is_none_or(|(_, v)| row[k] > v) {
            best = Some((k, row[k]));
        }
    }
    match best {
        Some((k, v)) if v > 0.0 && v >= threshold => Some(k - first),
        _ => None,
    }
}

/// Per-track `(subject, action)` labels of one bag.
pub fn decode_tracks(
    post: &BagPosterior,
    space: &ConceptSpace,
    threshold: f64,
) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    (0..post.num_tracks)
        .map(|j| {
            let row = post.nu_row(j);
            (
                argmax_class(row, space, Concept::Subject, threshold),
                argmax_class(row, space, Concept::Action, threshold),
            )
        })
        .unzip()
}

/// The track that best witnesses `tuple`: `argmax_j ν_js ν_ja` for a pair,
/// `argmax_j ν_jk` for a singleton; lowest index wins ties.
pub fn localize(
    post: &BagPosterior,
    space: &ConceptSpace,
    labels: &[LabelTuple],
    tuple: LabelTuple,
) -> Result<usize> {
    if !labels.contains(&tuple) {
        return Err(Error::validation(format!(
            "tuple {tuple} is not among the bag's labels"
        )));
    }
    let score = |j: usize| -> f64 {
        let s = tuple
            .subject
            .map_or(1.0, |s| post.nu(j, space.subject_factor(s)));
        let a = tuple
            .action
            .map_or(1.0, |a| post.nu(j, space.action_factor(a)));
        s * a
    };
    let mut best = 0;
    let mut best_score = score(0);
    for j in 1..post.num_tracks {
        let v = score(j);
        if v > best_score {
            best = j;
            best_score = v;
        }
    }
    Ok(best)
}

pub fn decode_bag(
    post: &BagPosterior,
    bag: &VideoBag,
    space: &ConceptSpace,
    threshold: f64,
) -> Result<DecodedBag> {
    if post.num_tracks != bag.num_tracks() {
        return Err(Error::validation(format!(
            "posterior has {} tracks but video {} has {}",
            post.num_tracks,
            bag.id,
            bag.num_tracks()
        )));
    }
    let (subject, action) = decode_tracks(post, space, threshold);
    let localization = bag
        .labels
        .iter()
        .map(|&t| {
            Ok(Localization {
                tuple: t,
                track: localize(post, space, &bag.labels, t)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DecodedBag {
        id: bag.id.clone(),
        subject,
        action,
        localization,
    })
}

pub fn decode_dataset(
    posts: &[BagPosterior],
    dataset: &Dataset,
    threshold: f64,
) -> Result<Vec<DecodedBag>> {
    check_lengths(posts.len(), dataset)?;
    posts
        .iter()
        .zip(dataset.bags())
        .map(|(p, b)| decode_bag(p, b, dataset.space(), threshold))
        .collect()
}

fn check_lengths(n: usize, dataset: &Dataset) -> Result<()> {
    if n != dataset.len() {
        return Err(Error::validation(format!(
            "{n} decoded bags for a dataset of {} videos",
            dataset.len()
        )));
    }
    Ok(())
}

/// Average precision of one ranked list (`true` marks a positive), ranked by
/// descending score with ties kept in input order. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub concept: Concept,
    pub class: usize,
    /// Tracks whose ground truth is this class.
    pub support: usize,
    /// Fraction of those tracks decoded as this class.
    pub recall: Option<f64>,
    pub average_precision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_tracks: usize,
    /// Over all tracks; background must be decoded as background.
    pub subject_accuracy: f64,
    pub action_accuracy: f64,
    /// Tracks whose ground truth has both a subject and an action.
    pub pair_tracks: usize,
    /// Over the pair tracks: correct only if both labels are correct.
    pub pairwise_accuracy: Option<f64>,
    pub pair_subject_accuracy: Option<f64>,
    pub pair_action_accuracy: Option<f64>,
    /// Mean over non-background classes with at least one positive.
    pub mean_average_precision: PerConcept<Option<f64>>,
    /// Fraction of (bag, tuple) pairs whose selected track carries the tuple.
    pub localization_hit_rate: Option<f64>,
    pub localizations: usize,
    pub per_class: Vec<ClassMetrics>,
}

fn fraction(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Scores decoded bags (and the posteriors they came from, for ranking)
/// against the dataset's ground truth.
pub fn score(
    decoded: &[DecodedBag],
    posts: &[BagPosterior],
    dataset: &Dataset,
) -> Result<MetricsReport> {
    check_lengths(decoded.len(), dataset)?;
    check_lengths(posts.len(), dataset)?;
    let space = dataset.space();
    let mut n = 0;
    let mut correct = PerConcept::splat(0usize);
    let mut pair_tracks = 0;
    let mut pair_correct = 0;
    let mut pair_concept = PerConcept::splat(0usize);
    let mut hits = 0;
    let mut localizations = 0;
    let mut class_support: Vec<(Concept, usize, usize, usize)> = Vec::new();
    for c in Concept::ALL {
        for class in 0..space.num_classes(c) {
            class_support.push((c, class, 0, 0));
        }
    }
    let class_slot = |c: Concept, class: usize| match c {
        Concept::Subject => class,
        Concept::Action => space.num_subjects + class,
    };

    for (dec, bag) in decoded.iter().zip(dataset.bags()) {
        if dec.subject.len() != bag.num_tracks() || dec.action.len() != bag.num_tracks() {
            return Err(Error::validation(format!(
                "decoded track count mismatch at video {}",
                bag.id
            )));
        }
        for (j, track) in bag.tracks.iter().enumerate() {
            let gt = track.ground_truth.ok_or_else(|| {
                Error::validation(format!(
                    "missing ground truth at video {} track {j}",
                    bag.id
                ))
            })?;
            n += 1;
            let pred = [
                (Concept::Subject, dec.subject[j]),
                (Concept::Action, dec.action[j]),
            ];
            let ok: Vec<bool> = pred.iter().map(|&(c, p)| p == gt.get(c)).collect();
            for (&(c, _), &o) in pred.iter().zip(&ok) {
                if o {
                    correct.set(c, correct.get(c) + 1);
                }
                if let Some(class) = gt.get(c) {
                    let slot = &mut class_support[class_slot(c, class)];
                    slot.2 += 1;
                    slot.3 += usize::from(o);
                }
            }
            if gt.subject.is_some() && gt.action.is_some() {
                pair_tracks += 1;
                pair_correct += usize::from(ok[0] && ok[1]);
                for (&(c, _), &o) in pred.iter().zip(&ok) {
                    if o {
                        pair_concept.set(c, pair_concept.get(c) + 1);
                    }
                }
            }
        }
        for loc in &dec.localization {
            let gt = bag
                .tracks
                .get(loc.track)
                .and_then(|t| t.ground_truth)
                .ok_or_else(|| {
                    Error::validation(format!(
                        "localization track {} invalid at video {}",
                        loc.track, bag.id
                    ))
                })?;
            localizations += 1;
            let hit = loc.tuple.subject.is_none_or(|s| gt.subject == Some(s))
                && loc.tuple.action.is_none_or(|a| gt.action == Some(a));
            hits += usize::from(hit);
        }
    }

    let mut per_class = Vec::with_capacity(class_support.len());
    let mut ap_sum = PerConcept::splat(0.0);
    let mut ap_count = PerConcept::splat(0usize);
    for &(c, class, support, ok) in &class_support {
        let k = space.factor(c, class);
        let mut scores = Vec::with_capacity(n);
        let mut positive = Vec::with_capacity(n);
        for (post, bag) in posts.iter().zip(dataset.bags()) {
            for (j, t) in bag.tracks.iter().enumerate() {
                scores.push(post.nu(j, k));
                positive.push(t.ground_truth.and_then(|g| g.get(c)) == Some(class));
            }
        }
        let ap = average_precision(&scores, &positive);
        if let Some(v) = ap {
            ap_sum.set(c, ap_sum.get(c) + v);
            ap_count.set(c, ap_count.get(c) + 1);
        }
        per_class.push(ClassMetrics {
            concept: c,
            class,
            support,
            recall: fraction(ok, support),
            average_precision: ap,
        });
    }
    let map_of = |c: Concept| (ap_count.get(c) > 0).then(|| ap_sum.get(c) / ap_count.get(c) as f64);

    Ok(MetricsReport {
        num_tracks: n,
        subject_accuracy: fraction(correct.subject, n).unwrap_or(0.0),
        action_accuracy: fraction(correct.action, n).unwrap_or(0.0),
        pair_tracks,
        pairwise_accuracy: fraction(pair_correct, pair_tracks),
        pair_subject_accuracy: fraction(pair_concept.subject, pair_tracks),
        pair_action_accuracy: fraction(pair_concept.action, pair_tracks),
        mean_average_precision: PerConcept {
            subject: map_of(Concept::Subject),
            action: map_of(Concept::Action),
        },
        localization_hit_rate: fraction(hits, localizations),
        localizations,
        per_class,
    })
}

/// Background and foreground recall of one concept at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub threshold: f64,
    pub subject_background_recall: Option<f64>,
    pub subject_foreground_recall: Option<f64>,
    pub action_background_recall: Option<f64>,
    pub action_foreground_recall: Option<f64>,
}

/// Recall of background tracks (decoded as background) against recall of
/// labeled tracks (decoded as their class) as the threshold varies.
pub fn threshold_sweep(
    posts: &[BagPosterior],
    dataset: &Dataset,
    thresholds: &[f64],
) -> Result<Vec<RecallRow>> {
    check_lengths(posts.len(), dataset)?;
    if !dataset.has_ground_truth() {
        return Err(Error::validation(
            "threshold sweep needs ground truth on every track",
        ));
    }
    let space = dataset.space();
    Ok(thresholds
        .iter()
        .map(|&th| {
            // [concept][bg hits, bg total, fg hits, fg total]
            let mut acc = [[0usize; 4]; 2];
            for (post, bag) in posts.iter().zip(dataset.bags()) {
                let (subj, act) = decode_tracks(post, space, th);
                for (j, t) in bag.tracks.iter().enumerate() {
                    let gt = t.ground_truth.expect("checked above");
                    for (ci, (pred, truth)) in [(subj[j], gt.subject), (act[j], gt.action)]
                        .into_iter()
                        .enumerate()
                    {
                        let slot = if truth.is_none() { 0 } else { 2 };
                        acc[ci][slot + 1] += 1;
                        acc[ci][slot] += usize::from(pred == truth);
                    }
                }
            }
            RecallRow {
                threshold: th,
                subject_background_recall: fraction(acc[0][0], acc[0][1]),
                subject_foreground_recall: fraction(acc[0][2], acc[0][3]),
                action_background_recall: fraction(acc[1][0], acc[1][1]),
                action_foreground_recall: fraction(acc[1][2], acc[1][3]),
            }
        })
        .collect())
}

/// Everything `eval` writes: decoded bags, metrics at one threshold, and the
/// recall sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Provenance only; evaluation itself is deterministic.
    #[serde(default)]
    pub seed: u64,
    pub threshold: f64,
    pub metrics: MetricsReport,
    pub recall_sweep: Vec<RecallRow>,
    pub decoded: Vec<DecodedBag>,
}

pub fn evaluate(
    posts: &[BagPosterior],
    dataset: &Dataset,
    threshold: f64,
    thresholds: &[f64],
) -> Result<Evaluation> {
    let decoded = decode_dataset(posts, dataset, threshold)?;
    let metrics = score(&decoded, posts, dataset)?;
    let recall_sweep = threshold_sweep(posts, dataset, thresholds)?;
    Ok(Evaluation {
        seed: 0,
        threshold,
        metrics,
        recall_sweep,
        decoded,
    })
}
