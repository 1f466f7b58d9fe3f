//! JSON file formats for datasets, models, predictions and reports, and the
//! TOML generation config. See `docs/formats.md`.
//!
//! Floats are written with 17 significant digits (`{:.16e}`) and parsed with
//! correct rounding, so every `f64` survives a save/load cycle bit-for-bit.
//! Objects are indented; arrays of scalars stay on one line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decode::Evaluation;
use crate::error::{Error, Result};
use crate::inference::{
    AppearanceModel, BagPosterior, ChannelKind, ChannelPosterior, FitMeta, FitReport, LabelMode,
    Prediction, TrainedModel, Variant,
};
use crate::sampler::GenConfig;
use crate::types::{ConceptSpace, Dataset, GroundTruth, LabelTuple, Track, VideoBag};

pub const FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Renders a JSON value with every float as `{:.16e}`.
pub fn to_json_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().expect("f64 number");
                write!(out, "{x:.16e}").expect("write to string");
            } else {
                write!(out, "{n}").expect("write to string");
            }
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
            } else if items.iter().all(is_scalar) {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, indent);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    pad(out, indent + 2);
                    write_value(out, item, indent + 2);
                    out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
                }
                pad(out, indent);
                out.push(']');
            }
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 2);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

fn pad(out: &mut String, n: usize) {
    out.extend(std::iter::repeat_n(' ', n));
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    format_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    let value = serde_json::to_value(Envelope {
        format_version: FORMAT_VERSION,
        kind,
        body,
    })
    .map_err(|e| format_err(path, format!("cannot serialize {kind}: {e}")))?;
    fs::write(path, to_json_string(&value)).map_err(|e| io_err(path, e))
}

#[derive(Deserialize)]
struct Header {
    format_version: Value,
    kind: Value,
}

/// Parses `path`, checks its version and kind, and deserializes the body;
/// schema errors cite the JSON path of the offending element.
fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| format_err(path, format!("invalid JSON: {e}")))?;
    let header: Header = serde_json::from_value(value.clone())
        .map_err(|_| format_err(path, "missing format_version or kind"))?;
    if header.format_version != FORMAT_VERSION {
        return Err(format_err(
            path,
            format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    if header.kind != kind {
        return Err(format_err(
            path,
            format!("expected a {kind} file, found kind {}", header.kind),
        ));
    }
    if let Value::Object(map) = &mut value {
        map.remove("format_version");
        map.remove("kind");
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let at = e.path().to_string();
        format_err(path, format!("{} at {}", e.into_inner(), at))
    })
}

// ---- datasets ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    space: ConceptSpace,
    /// The sampler configuration, for generated datasets. Informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GenConfig>,
    videos: Vec<VideoRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoRecord {
    id: String,
    labels: Vec<LabelTuple>,
    tracks: Vec<TrackRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    feat_subject: Vec<f64>,
    feat_action: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruth>,
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, None, path.as_ref())
}

/// Like [`save_dataset`], also recording the configuration that produced it.
pub fn save_generated_dataset(
    dataset: &Dataset,
    cfg: &GenConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_dataset(dataset, Some(cfg), path.as_ref())
}

fn write_dataset(dataset: &Dataset, generator: Option<&GenConfig>, path: &Path) -> Result<()> {
    let file = DatasetFile {
        space: dataset.space().clone(),
        generator: generator.cloned(),
        videos: dataset
            .bags()
            .iter()
            .map(|b| VideoRecord {
                id: b.id.clone(),
                labels: b.labels.clone(),
                tracks: b
                    .tracks
                    .iter()
                    .map(|t| TrackRecord {
                        feat_subject: t.subject_features.clone(),
                        feat_action: t.action_features.clone(),
                        ground_truth: t.ground_truth,
                    })
                    .collect(),
            })
            .collect(),
    };
    write_json(path, "dataset", &file)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file: DatasetFile = read_json(path, "dataset")?;
    let bags = file
        .videos
        .into_iter()
        .map(|v| VideoBag {
            id: v.id,
            labels: v.labels,
            tracks: v
                .tracks
                .into_iter()
                .map(|t| Track {
                    subject_features: t.feat_subject,
                    action_features: t.feat_action,
                    ground_truth: t.ground_truth,
                })
                .collect(),
        })
        .collect();
    Dataset::new(file.space, bags).map_err(|e| revalidate(path, e))
}

fn revalidate(path: &Path, e: Error) -> Error {
    match e {
        Error::Validation(msg) => format_err(path, msg),
        other => other,
    }
}

// ---- models ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHyper {
    alpha: f64,
    penalty_c: f64,
    k_max: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelRecord {
    channel: ChannelKind,
    dim: usize,
    noise_var: f64,
    appearance_var: f64,
    sigma_k2: Vec<f64>,
    phi: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    variant: Variant,
    space: ConceptSpace,
    hyperparams: ModelHyper,
    channels: Vec<ChannelRecord>,
    meta: FitMeta,
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let file = ModelFile {
        variant: model.variant,
        space: model.space.clone(),
        hyperparams: ModelHyper {
            alpha: model.alpha,
            penalty_c: model.penalty_c,
            k_max: model.k_max,
        },
        channels: model
            .appearance
            .channels
            .iter()
            .map(|ch| ChannelRecord {
                channel: ch.kind,
                dim: ch.dim,
                noise_var: ch.noise_var,
                appearance_var: ch.appearance_var,
                sigma_k2: ch.sigma_k2.clone(),
                phi: ch.phi.chunks(ch.dim).map(<[f64]>::to_vec).collect(),
            })
            .collect(),
        meta: model.meta.clone(),
    };
    write_json(path.as_ref(), "model", &file)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let file: ModelFile = read_json(path, "model")?;
    file.space.validate().map_err(|e| revalidate(path, e))?;
    let k_max = file.hyperparams.k_max;
    let expected = file.variant.channels();
    if file.channels.len() != expected.len() {
        return Err(format_err(
            path,
            format!(
                "variant {} needs {} channels, found {}",
                file.variant,
                expected.len(),
                file.channels.len()
            ),
        ));
    }
    let mut channels = Vec::with_capacity(expected.len());
    for (c, (rec, &kind)) in file.channels.into_iter().zip(expected).enumerate() {
        let at = |what: &str| format!("{what} at channels[{c}]");
        if rec.channel != kind {
            return Err(format_err(
                path,
                at(&format!(
                    "channel {:?} where {kind:?} expected",
                    rec.channel
                )),
            ));
        }
        if rec.dim != kind.dim(&file.space) {
            return Err(format_err(
                path,
                at(&format!(
                    "dim {} \u{2260} {}",
                    rec.dim,
                    kind.dim(&file.space)
                )),
            ));
        }
        if rec.sigma_k2.len() != k_max || rec.phi.len() != k_max {
            return Err(format_err(
                path,
                at(&format!("factor count differs from k_max {k_max}")),
            ));
        }
        if let Some(k) = rec.phi.iter().position(|row| row.len() != rec.dim) {
            return Err(format_err(
                path,
                at(&format!(
                    "phi[{k}] length {} \u{2260} {}",
                    rec.phi[k].len(),
                    rec.dim
                )),
            ));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if let Some(k) = rec.sigma_k2.iter().position(|&v| !positive(v)) {
            return Err(format_err(path, at(&format!("sigma_k2[{k}] must be > 0"))));
        }
        if !positive(rec.noise_var) || !positive(rec.appearance_var) {
            return Err(format_err(path, at("variances must be > 0")));
        }
        channels.push(ChannelPosterior {
            kind,
            dim: rec.dim,
            noise_var: rec.noise_var,
            appearance_var: rec.appearance_var,
            phi: rec.phi.concat(),
            sigma_k2: rec.sigma_k2,
        });
    }
    Ok(TrainedModel {
        variant: file.variant,
        space: file.space,
        alpha: file.hyperparams.alpha,
        penalty_c: file.hyperparams.penalty_c,
        k_max,
        appearance: AppearanceModel { k_max, channels },
        meta: file.meta,
    })
}

// ---- predictions ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    id: String,
    tau: Vec<[f64; 2]>,
    nu: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionFile {
    variant: Variant,
    mode: LabelMode,
    seed: u64,
    iterations: usize,
    converged: bool,
    k_max: usize,
    videos: Vec<PredictionRecord>,
}

pub fn save_predictions(pred: &Prediction, k_max: usize, path: impl AsRef<Path>) -> Result<()> {
    let file = PredictionFile {
        variant: pred.variant,
        mode: pred.mode,
        seed: pred.seed,
        iterations: pred.iterations,
        converged: pred.converged,
        k_max,
        videos: pred
            .ids
            .iter()
            .zip(&pred.bags)
            .map(|(id, b)| PredictionRecord {
                id: id.clone(),
                tau: b.tau.clone(),
                nu: b.nu.chunks(b.k_max.max(1)).map(<[f64]>::to_vec).collect(),
            })
            .collect(),
    };
    write_json(path.as_ref(), "predictions", &file)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Prediction> {
    let path = path.as_ref();
    let file: PredictionFile = read_json(path, "predictions")?;
    let k_max = file.k_max;
    let mut ids = Vec::with_capacity(file.videos.len());
    let mut bags = Vec::with_capacity(file.videos.len());
    for (i, v) in file.videos.into_iter().enumerate() {
        if v.tau.len() != k_max {
            return Err(format_err(
                path,
                format!(
                    "tau length {} \u{2260} k_max {k_max} at videos[{i}]",
                    v.tau.len()
                ),
            ));
        }
        if let Some(k) = v.tau.iter().position(|t| !(t[0] > 0.0 && t[1] > 0.0)) {
            return Err(format_err(
                path,
                format!("tau must be > 0 at videos[{i}].tau[{k}]"),
            ));
        }
        for (j, row) in v.nu.iter().enumerate() {
            if row.len() != k_max {
                return Err(format_err(
                    path,
                    format!(
                        "nu row length {} \u{2260} k_max {k_max} at videos[{i}].nu[{j}]",
                        row.len()
                    ),
                ));
            }
            if let Some(k) = row.iter().position(|x| !(0.0..=1.0).contains(x)) {
                return Err(format_err(
                    path,
                    format!("nu outside [0, 1] at videos[{i}].nu[{j}][{k}]"),
                ));
            }
        }
        ids.push(v.id);
        bags.push(BagPosterior {
            num_tracks: v.nu.len(),
            k_max,
            tau: v.tau,
            nu: v.nu.concat(),
        });
    }
    Ok(Prediction {
        variant: file.variant,
        mode: file.mode,
        seed: file.seed,
        iterations: file.iterations,
        converged: file.converged,
        ids,
        bags,
    })
}

// ---- reports ----

pub fn save_report(report: &FitReport, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), "fit-report", report)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<FitReport> {
    read_json(path.as_ref(), "fit-report")
}

pub fn save_metrics(eval: &Evaluation, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), "metrics", eval)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Evaluation> {
    read_json(path.as_ref(), "metrics")
}

/// Writes a tab-separated table with a header row; floats as `{:.16e}`.
pub fn save_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<TableCell>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(TableCell::render).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub enum TableCell {
    Int(u64),
    Float(f64),
    Text(String),
    Missing,
}

impl TableCell {
    fn render(&self) -> String {
        match self {
            TableCell::Int(v) => v.to_string(),
            TableCell::Float(v) => format!("{v:.16e}"),
            TableCell::Text(s) => s.clone(),
            TableCell::Missing => "NA".to_string(),
        }
    }
}

impl From<Option<f64>> for TableCell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(TableCell::Missing, TableCell::Float)
    }
}

// ---- generation config ----

pub fn load_gen_config(path: impl AsRef<Path>) -> Result<GenConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cfg: GenConfig = toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    cfg.validate().map_err(|e| revalidate(path, e))?;
    Ok(cfg)
}

pub fn gen_config_to_toml(cfg: &GenConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Format {
        path: PathBuf::new(),
        msg: e.to_string(),
    })
}
