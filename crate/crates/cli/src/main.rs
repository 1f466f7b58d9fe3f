//! `siibp`: generate synthetic data, fit, predict, evaluate and sweep.
//!
//! Data goes to files only; progress and diagnostics go to standard error
//! (`RUST_LOG` controls verbosity, default `info`). Exit status: 0 on
//! success, 1 on I/O failure, 2 on invalid input or malformed files, 3 on a
//! numerical failure during inference.

mod grid;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use siibp::decode::{default_thresholds, evaluate, DEFAULT_BACKGROUND_THRESHOLD};
use siibp::inference::{fit, predict, FitOptions, LabelMode, PredictOptions, Variant};
use siibp::io::{self, TableCell};
use siibp::sampler::sample_dataset;
use siibp::{Error, HyperParams, PerConcept, Result};

#[derive(Parser, Debug)]
#[command(
    name = "siibp",
    version,
    about = "Weakly supervised subject/action tagging with a stacked IBP"
)]
struct Cli {
    /// Worker threads for per-bag parallelism. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset from a TOML generation config.
    Generate(GenerateArgs),
    /// Fit a model to a labeled dataset.
    Fit(FitArgs),
    /// Infer track assignments for a dataset under a fitted model.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Grid search over K_max, alpha and C on a train/validation split.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// IBP concentration.
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    /// Truncation level.
    #[arg(long, default_value_t = 30)]
    kmax: usize,
    /// Hinge penalty weight.
    #[arg(long = "c", default_value_t = 0.5)]
    penalty_c: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_var_subject: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_var_action: f64,
    #[arg(long, default_value_t = 1.0)]
    appearance_var_subject: f64,
    #[arg(long, default_value_t = 1.0)]
    appearance_var_action: f64,
    /// Keep the initial variances instead of re-estimating them.
    #[arg(long)]
    fixed_variances: bool,
    /// wsc-siibp, ws-siibp, wsc-sibp or ws-sibp.
    #[arg(long, default_value = "wsc-siibp")]
    variant: Variant,
    #[arg(long, default_value_t = 200)]
    inner_iters: usize,
    #[arg(long, default_value_t = 10)]
    outer_iters: usize,
    /// Relative objective change that ends the inner loop.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Relative objective change that ends the outer loop.
    #[arg(long, default_value_t = 1e-4)]
    outer_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            penalty_c: self.penalty_c,
            k_max: self.kmax,
            noise_var: PerConcept {
                subject: self.noise_var_subject,
                action: self.noise_var_action,
            },
            appearance_var: PerConcept {
                subject: self.appearance_var_subject,
                action: self.appearance_var_action,
            },
            estimate_variances: !self.fixed_variances,
        }
    }

    fn options(&self, parallel: bool) -> FitOptions {
        FitOptions {
            inner_max_iters: self.inner_iters,
            outer_max_iters: self.outer_iters,
            inner_rel_tol: self.tol,
            outer_rel_tol: self.outer_tol,
            seed: self.seed,
            variant: self.variant,
            parallel,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Objective trace table; defaults to the report path with extension
    /// `trace.tsv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    model_args: ModelArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ignore the video labels: every factor is admissible and no location
    /// constraints apply.
    #[arg(long)]
    free_annotation: bool,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Background/foreground recall per threshold; defaults to the metrics
    /// path with extension `recall.tsv`.
    #[arg(long)]
    recall_table: Option<PathBuf>,
    /// Minimum winning assignment for a non-background decision.
    #[arg(long, default_value_t = DEFAULT_BACKGROUND_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Grid axis `name=start:step:end` or `name=v1,v2,...` for name in
    /// kmax, alpha, c. Repeat for several axes; axes not given use the
    /// single-value flags.
    #[arg(long = "grid", required = true)]
    grid: Vec<String>,
    /// Ranked results table.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of videos (taken from the end) held out for validation.
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    /// Validate without labels instead of with them.
    #[arg(long)]
    free_annotation: bool,
    #[command(flatten)]
    model_args: ModelArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        Error::Validation(_) | Error::Format { .. } => 2,
        Error::Numerical(_) => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Validation("--threads must be >= 1".into()));
    }
    let parallel = cli.threads > 1;
    with_threads(cli.threads, || match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a, parallel),
        Command::Predict(a) => cmd_predict(a, parallel),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a, parallel),
    })
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Validation(format!("cannot start {n} worker threads: {e}")))?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T>(n: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
    if n > 1 {
        log::warn!("built without the parallel feature; --threads {n} runs on one thread");
    }
    f()
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = io::load_gen_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let sampled = sample_dataset(&cfg)?;
    log::info!(
        "sampled {} videos, {} tracks (seed {})",
        sampled.dataset.len(),
        sampled.dataset.num_tracks(),
        cfg.seed
    );
    io::save_generated_dataset(&sampled.dataset, &cfg, &a.out)
}

fn cmd_fit(a: FitArgs, parallel: bool) -> Result<()> {
    let data = io::load_dataset(&a.data)?;
    let out = fit(
        &data,
        &a.model_args.hyper(),
        &a.model_args.options(parallel),
    )?;
    let r = &out.report;
    log::info!(
        "{} sweeps over {} outer iterations, objective {:.6e}, {} of {} bags with an unmet constraint",
        r.inner_iterations,
        r.outer_iterations,
        r.final_objective.total(),
        r.constraints.bags_with_violation,
        data.len()
    );
    if let Some(acc) = r.metrics.as_ref().and_then(|m| m.pairwise_accuracy) {
        log::info!("training pairwise accuracy {acc:.4}");
    }
    io::save_model(&out.model, &a.model)?;
    io::save_report(r, &a.report)?;
    let trace = a.trace.unwrap_or_else(|| sibling(&a.report, "trace.tsv"));
    let rows: Vec<Vec<TableCell>> = r
        .objective_trace
        .iter()
        .map(|&(it, obj)| vec![TableCell::Int(it as u64), TableCell::Float(obj)])
        .collect();
    io::save_table(trace, &["iteration", "objective"], &rows)
}

fn cmd_predict(a: PredictArgs, parallel: bool) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let data = io::load_dataset(&a.data)?;
    let opts = PredictOptions {
        max_iters: a.max_iters,
        rel_tol: a.tol,
        seed: a.seed,
        parallel,
    };
    let mode = if a.free_annotation {
        LabelMode::FreeAnnotation
    } else {
        LabelMode::WithLabels
    };
    let pred = predict(&model, &data, &opts, mode)?;
    log::info!("{} sweeps, converged: {}", pred.iterations, pred.converged);
    io::save_predictions(&pred, model.k_max, &a.out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let pred = io::load_predictions(&a.predictions)?;
    let data = io::load_dataset(&a.data)?;
    if pred.ids.len() != data.len() || pred.ids.iter().zip(data.bags()).any(|(id, b)| *id != b.id) {
        return Err(Error::Validation(format!(
            "{} does not hold predictions for the videos of {} in order",
            a.predictions.display(),
            a.data.display()
        )));
    }
    let mut eval = evaluate(&pred.bags, &data, a.threshold, &default_thresholds())?;
    eval.seed = a.seed;
    let m = &eval.metrics;
    log::info!(
        "subject {:.4}, action {:.4}, pairwise {}",
        m.subject_accuracy,
        m.action_accuracy,
        m.pairwise_accuracy
            .map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    io::save_metrics(&eval, &a.out)?;
    let table = a
        .recall_table
        .unwrap_or_else(|| sibling(&a.out, "recall.tsv"));
    let rows: Vec<Vec<TableCell>> = eval
        .recall_sweep
        .iter()
        .map(|r| {
            vec![
                TableCell::Float(r.threshold),
                r.subject_background_recall.into(),
                r.subject_foreground_recall.into(),
                r.action_background_recall.into(),
                r.action_foreground_recall.into(),
            ]
        })
        .collect();
    io::save_table(
        table,
        &[
            "threshold",
            "subject_background_recall",
            "subject_foreground_recall",
            "action_background_recall",
            "action_foreground_recall",
        ],
        &rows,
    )
}

struct SweepRow {
    point: grid::Point,
    score: f64,
    pairwise: Option<f64>,
    subject: f64,
    action: f64,
    objective: f64,
}

fn cmd_sweep(a: SweepArgs, parallel: bool) -> Result<()> {
    if !(a.valid_fraction > 0.0 && a.valid_fraction < 1.0) {
        return Err(Error::Validation(
            "--valid-fraction must lie in (0, 1)".into(),
        ));
    }
    let data = io::load_dataset(&a.data)?;
    let n_valid = ((data.len() as f64) * a.valid_fraction).round() as usize;
    if n_valid == 0 || n_valid >= data.len() {
        return Err(Error::Validation(format!(
            "cannot hold out {} of {} videos",
            a.valid_fraction,
            data.len()
        )));
    }
    let (train, valid) = data.split_at(data.len() - n_valid);
    if !valid.has_ground_truth() {
        return Err(Error::Validation(
            "validation videos need ground truth on every track".into(),
        ));
    }
    let axes: Vec<grid::AxisSpec> = a
        .grid
        .iter()
        .map(|s| grid::AxisSpec::parse(s))
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::Validation)?;
    let base = grid::Point {
        k_max: a.model_args.kmax,
        alpha: a.model_args.alpha,
        c: a.model_args.penalty_c,
    };
    let points =
        grid::expand(&axes, base, data.space().num_labeled()).map_err(Error::Validation)?;
    let mode = if a.free_annotation {
        LabelMode::FreeAnnotation
    } else {
        LabelMode::WithLabels
    };
    let opts = a.model_args.options(parallel);

    let mut rows = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let hp = HyperParams {
            alpha: p.alpha,
            penalty_c: p.c,
            k_max: p.k_max,
            ..a.model_args.hyper()
        };
        let out = fit(&train, &hp, &opts)?;
        let pred = predict(&out.model, &valid, &PredictOptions::from(&opts), mode)?;
        let eval = evaluate(&pred.bags, &valid, DEFAULT_BACKGROUND_THRESHOLD, &[])?;
        let m = eval.metrics;
        let score = m
            .pairwise_accuracy
            .unwrap_or(0.5 * (m.subject_accuracy + m.action_accuracy));
        log::info!(
            "[{}/{}] kmax {} alpha {} c {}: validation accuracy {score:.4}",
            i + 1,
            points.len(),
            p.k_max,
            p.alpha,
            p.c
        );
        rows.push(SweepRow {
            point: *p,
            score,
            pairwise: m.pairwise_accuracy,
            subject: m.subject_accuracy,
            action: m.action_accuracy,
            objective: out.report.final_objective.total(),
        });
    }
    // stable: ties keep grid order
    rows.sort_by(|x, y| y.score.total_cmp(&x.score));
    let table: Vec<Vec<TableCell>> = rows
        .iter()
        .enumerate()
        .map(|(rank, r)| {
            vec![
                TableCell::Int(rank as u64 + 1),
                TableCell::Int(r.point.k_max as u64),
                TableCell::Float(r.point.alpha),
                TableCell::Float(r.point.c),
                TableCell::Float(r.score),
                r.pairwise.into(),
                TableCell::Float(r.subject),
                TableCell::Float(r.action),
                TableCell::Float(r.objective),
                TableCell::Text(a.model_args.variant.to_string()),
                TableCell::Int(a.model_args.seed),
            ]
        })
        .collect();
    io::save_table(
        &a.out,
        &[
            "rank",
            "kmax",
            "alpha",
            "c",
            "validation_accuracy",
            "pairwise_accuracy",
            "subject_accuracy",
            "action_accuracy",
            "train_objective",
            "variant",
            "seed",
        ],
        &table,
    )
}
