//! End-to-end acceptance checks. Runs every criterion, prints one line per
//! criterion and exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::digamma;

use siibp::decode::{decode_dataset, score, DEFAULT_BACKGROUND_THRESHOLD};
use siibp::inference::updates::{self, Reconstruction};
use siibp::inference::{
    compute_objective, compute_q, constraint_violations, fit, init_state, lower_bound,
    objective_with_q, predict, Corpus, EngineParams, FitOptions, FitOutput, LabelMode,
    PredictOptions, StickBound, Variant, VariationalState,
};
use siibp::io::gen_config_to_toml;
use siibp::sampler::{sample_dataset, GenConfig};
use siibp::{Dataset, Exec, HyperParams, PerConcept};
use siibp_testkit::{
    fd_gradient, mc_expect_log_one_minus_prod_prefixes, naive_sweep, perturb_state,
    random_instance, rel_inf_error, InstanceShape, DEFAULT_FD_STEP,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    // libtest-style flags such as --nocapture are accepted and ignored
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("bound validity", bound_validity),
        ("stationarity of closed-form updates", stationarity),
        ("oracle equivalence", oracle_equivalence),
        ("monotone surrogate at C=0", monotone_surrogate),
        ("constraint semantics", constraint_semantics),
        ("synthetic recovery", synthetic_recovery),
        ("test inference", test_inference),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {} ({name}): {} [{secs:.1}s] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() < limit
}

// ---- 1 ----

fn bound_validity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut configs, mut violations, mut worst_k1) = (0, Vec::new(), 0.0f64);
    // ten random stick vectors, each scored at every prefix k = 1..10
    for v in 0..10 {
        let tau: Vec<[f64; 2]> = (0..10)
            .map(|_| {
                [
                    10f64.powf(rng.random_range(-1.0..1.3)),
                    10f64.powf(rng.random_range(-1.0..1.3)),
                ]
            })
            .collect();
        let mc = mc_expect_log_one_minus_prod_prefixes(&tau, 1_000_000, 100 + v);
        for (k, est) in mc.iter().enumerate() {
            configs += 1;
            let bound = lower_bound(&tau, k, &compute_q(&tau, k));
            if !(bound <= est.mean + 3.0 * est.stderr) {
                violations.push(format!(
                    "v{v} k{}: {bound:e} > {:e} + 3*{:e}",
                    k + 1,
                    est.mean,
                    est.stderr
                ));
            }
        }
        let exact = digamma(tau[0][1]) - digamma(tau[0][0] + tau[0][1]);
        worst_k1 = worst_k1.max((lower_bound(&tau, 0, &compute_q(&tau, 0)) - exact).abs());
    }
    let fast = within(start, Duration::from_secs(30));
    outcome(
        violations.is_empty() && worst_k1 <= 1e-12 && fast,
        format!(
            "{configs} configurations, {} above MC + 3 stderr {violations:?}; max |L_1 - exact| = {worst_k1:.1e}; under 30 s: {fast}",
            violations.len()
        ),
    )
}

// ---- shared random-instance setup for 2 to 4 ----

fn instance(seed: u64) -> (Corpus, EngineParams, VariationalState) {
    let (data, hp) = random_instance(seed, InstanceShape::default());
    let corpus = Corpus::build(&data, Variant::WscSiibp, hp.k_max, LabelMode::WithLabels).unwrap();
    let params = EngineParams {
        alpha: hp.alpha,
        penalty_c: hp.penalty_c,
        k_max: hp.k_max,
    };
    let mut state = init_state(&corpus, &hp);
    perturb_state(&mut state, &corpus, seed);
    (corpus, params, state)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// ---- 2 ----

fn stationarity() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    for seed in 1000..1020 {
        let (corpus, params, mut state) = instance(seed);
        let mut qs: Vec<Vec<Vec<f64>>> = state
            .bags
            .iter()
            .map(|b| StickBound::compute(&b.tau).q)
            .collect();
        let mut recon = Reconstruction::compute(&state, Exec::Sequential);
        for c in 0..state.appearance.channels.len() {
            for k in 0..params.k_max {
                let v = updates::update_sigma_k2(&mut state, c, k);
                let g = fd_gradient(
                    |p| {
                        let mut s = state.clone();
                        s.appearance.channels[c].sigma_k2[k] = p[0];
                        objective_with_q(&s, &corpus, &params, &qs).total()
                    },
                    &[v],
                    DEFAULT_FD_STEP,
                )
                .unwrap();
                worst[0] = worst[0].max(max_abs(&g));
                let row =
                    updates::update_phi(&mut state, &corpus, &mut recon, c, k, Exec::Sequential);
                let g = fd_gradient(
                    |p| {
                        let mut s = state.clone();
                        s.appearance.channels[c].phi_row_mut(k).copy_from_slice(p);
                        objective_with_q(&s, &corpus, &params, &qs).total()
                    },
                    &row,
                    DEFAULT_FD_STEP,
                )
                .unwrap();
                worst[1] = worst[1].max(max_abs(&g));
            }
        }
        for i in 0..state.bags.len() {
            let bound = StickBound::compute(&state.bags[i].tau);
            updates::update_tau(&mut state.bags[i], params.alpha, &bound);
            qs[i] = bound.q;
            let x: Vec<f64> = state.bags[i].tau.iter().flatten().copied().collect();
            let g = fd_gradient(
                |p| {
                    let mut s = state.clone();
                    for (t, v) in s.bags[i].tau.iter_mut().zip(p.chunks(2)) {
                        *t = [v[0], v[1]];
                    }
                    objective_with_q(&s, &corpus, &params, &qs).total()
                },
                &x,
                DEFAULT_FD_STEP,
            )
            .unwrap();
            worst[2] = worst[2].max(max_abs(&g));
        }
    }
    let fast = within(start, Duration::from_secs(60));
    outcome(
        worst.iter().all(|&w| w <= 1e-4) && fast,
        format!(
            "20 instances; max |grad| sigma {:.1e}, phi {:.1e}, tau {:.1e} (limit 1e-4); under 60 s: {fast}",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---- 3 ----

fn oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 2000..2050 {
        let (corpus, params, state) = instance(seed);
        let oracle = naive_sweep(&state, &corpus, &params);
        let mut s = state;
        let bounds = updates::sweep(&mut s, &corpus, &params, Exec::Sequential);
        for (c, ch) in s.appearance.channels.iter().enumerate() {
            worst = worst.max(rel_inf_error(&ch.sigma_k2, &oracle.sigma_k2[c]));
            worst = worst.max(rel_inf_error(&ch.phi, &oracle.phi[c]));
        }
        for (i, (bag, bound)) in s.bags.iter().zip(&bounds).enumerate() {
            let tau: Vec<f64> = bag.tau.iter().flatten().copied().collect();
            let want: Vec<f64> = oracle.tau[i].iter().flatten().copied().collect();
            worst = worst.max(rel_inf_error(&tau, &want));
            worst = worst.max(rel_inf_error(&bound.lower, &oracle.lower[i]));
            for (q, w) in bound.q.iter().zip(&oracle.q[i]) {
                worst = worst.max(rel_inf_error(q, w));
            }
            worst = worst.max(rel_inf_error(&bag.nu, &oracle.nu[i]));
        }
    }
    outcome(
        worst <= 1e-10,
        format!("50 instances; max relative deviation {worst:.1e} (limit 1e-10)"),
    )
}

// ---- 4 ----

fn monotone_surrogate() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for seed in 3000..3020 {
        let (corpus, mut params, mut state) = instance(seed);
        params.penalty_c = 0.0;
        let mut prev = compute_objective(&state, &corpus, &params, Exec::Sequential).total();
        for _ in 0..100 {
            updates::sweep(&mut state, &corpus, &params, Exec::Sequential);
            let cur = compute_objective(&state, &corpus, &params, Exec::Sequential).total();
            worst = worst.max((cur - prev) / prev.abs());
            prev = cur;
        }
    }
    outcome(
        worst <= 1e-8,
        format!("20 instances x 100 sweeps; largest relative increase {worst:.1e} (slack 1e-8)"),
    )
}

// ---- shared synthetic setup for 5 to 7 ----

fn recovery_config(seed: u64, videos: usize) -> GenConfig {
    GenConfig {
        num_videos: videos,
        noise_var: PerConcept {
            subject: 0.5,
            action: 2.0,
        },
        appearance_var: PerConcept {
            subject: 1.0,
            action: 4.0,
        },
        seed,
        ..GenConfig::default()
    }
}

fn recovery_hyper(cfg: &GenConfig, penalty_c: f64) -> HyperParams {
    HyperParams {
        alpha: cfg.alpha,
        penalty_c,
        k_max: 10,
        noise_var: PerConcept::splat(1.0),
        appearance_var: PerConcept::splat(1.0),
        estimate_variances: true,
    }
}

/// Masked (bag, factor) entries that are not exactly zero after a fit.
fn mask_breaches(out: &FitOutput, data: &Dataset, variant: Variant) -> usize {
    let corpus = Corpus::build(data, variant, out.model.k_max, LabelMode::WithLabels).unwrap();
    let mut n = 0;
    for (post, cbag) in out.state.bags.iter().zip(&corpus.bags) {
        for j in 0..post.num_tracks {
            n += (0..post.k_max)
                .filter(|&k| !cbag.mask[k] && post.nu(j, k) != 0.0)
                .count();
        }
    }
    if variant == Variant::WscSiibp {
        for (post, bag) in out.state.bags.iter().zip(data.bags()) {
            let cs = siibp::build_constraints(bag, data.space(), out.model.k_max).unwrap();
            for j in 0..post.num_tracks {
                n += (0..post.k_max)
                    .filter(|&k| !cs.mask[k] && post.nu(j, k) != 0.0)
                    .count();
            }
        }
    }
    n
}

// ---- 5 ----

fn constraint_semantics() -> Outcome {
    const PENALTY: f64 = 20.0;
    let seeds = 10;
    let converged = FitOptions {
        inner_rel_tol: 1e-6,
        inner_max_iters: 1000,
        ..FitOptions::default()
    };
    let (mut bags, mut loose, mut strict, mut breaches) = (0, 0, 0, 0);
    for seed in 0..seeds {
        let cfg = GenConfig {
            seed,
            ..GenConfig::default()
        };
        let data = sample_dataset(&cfg).unwrap().dataset;
        let out = fit(&data, &recovery_hyper(&cfg, PENALTY), &converged).unwrap();
        breaches += mask_breaches(&out, &data, Variant::WscSiibp);
        let corpus = Corpus::build(&data, Variant::WscSiibp, 10, LabelMode::WithLabels).unwrap();
        let summary = constraint_violations(&out.state, &corpus);
        bags += data.len();
        loose += summary.bags_with_violation;
        strict += summary.bags_strictly_below_one;
    }
    let frac = loose as f64 / bags as f64;
    outcome(
        breaches == 0 && frac <= 0.05,
        format!(
            "C={PENALTY}, {seeds} noiseless datasets fitted to a relative tolerance of 1e-6: {loose}/{bags} bags ({:.1}%) \
             with a constraint short of 1 by more than {:.0e} (limit 5%); {strict} bags short by any amount; \
             {breaches} nonzero masked assignments",
            100.0 * frac,
            siibp::inference::CONSTRAINT_TOLERANCE
        ),
    )
}

// ---- 6 ----

fn synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let variants = [Variant::WscSiibp, Variant::WsSiibp, Variant::WscSibp];
    let mut acc = [0.0; 3];
    let mut breaches = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let cfg = recovery_config(seed, 50);
        let data = sample_dataset(&cfg).unwrap().dataset;
        for (v, &variant) in variants.iter().enumerate() {
            let opts = FitOptions {
                variant,
                seed,
                ..FitOptions::default()
            };
            let out = fit(&data, &recovery_hyper(&cfg, 5.0), &opts).unwrap();
            breaches += mask_breaches(&out, &data, variant);
            acc[v] += out.report.metrics.unwrap().pairwise_accuracy.unwrap();
        }
    }
    let mean = acc.map(|a| a / seeds as f64);
    let space = recovery_config(0, 1).space;
    let chance = 1.0 / (space.num_subjects * space.num_actions) as f64;
    let fast = within(start, Duration::from_secs(120));
    let pass = mean[0] >= 3.0 * chance
        && mean[0] >= mean[1]
        && mean[0] >= mean[2]
        && breaches == 0
        && fast;
    outcome(
        pass,
        format!(
            "mean pairwise accuracy over {seeds} seeds: wsc-siibp {:.4}, ws-siibp {:.4}, wsc-sibp {:.4}; 3x chance = {:.4}; \
             {breaches} nonzero masked assignments; under 120 s: {fast}",
            mean[0],
            mean[1],
            mean[2],
            3.0 * chance
        ),
    )
}

// ---- 7 ----

fn test_inference() -> Outcome {
    let mut gap = PerConcept::splat(0.0f64);
    let mut with_acc = PerConcept::splat(0.0f64);
    let seeds = 5;
    for seed in 0..seeds {
        let cfg = recovery_config(100 + seed, 70);
        let data = sample_dataset(&cfg).unwrap().dataset;
        let (train, test) = data.split_at(50);
        let out = fit(&train, &recovery_hyper(&cfg, 5.0), &FitOptions::default()).unwrap();
        let accuracy = |mode| {
            let pred = predict(&out.model, &test, &PredictOptions::default(), mode).unwrap();
            let decoded = decode_dataset(&pred.bags, &test, DEFAULT_BACKGROUND_THRESHOLD).unwrap();
            let m = score(&decoded, &pred.bags, &test).unwrap();
            (m.subject_accuracy, m.action_accuracy)
        };
        let (ws, wa) = accuracy(LabelMode::WithLabels);
        let (fs_, fa) = accuracy(LabelMode::FreeAnnotation);
        with_acc.subject += ws / seeds as f64;
        with_acc.action += wa / seeds as f64;
        gap.subject += (ws - fs_) / seeds as f64;
        gap.action += (wa - fa) / seeds as f64;
    }
    outcome(
        gap.subject.abs() <= 0.10 && gap.action.abs() <= 0.10,
        format!(
            "20 held-out bags x {seeds} seeds: with-labels accuracy subject {:.3}, action {:.3}; \
             free-annotation gap subject {:+.1} pp, action {:+.1} pp (limit 10 pp)",
            with_acc.subject,
            with_acc.action,
            100.0 * gap.subject,
            100.0 * gap.action
        ),
    )
}

// ---- 8 ----

fn run_cli(dir: &Path, threads: usize, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_siibp"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        num_videos: 24,
        ..recovery_config(8, 24)
    };
    fs::write(
        root.path().join("gen.toml"),
        gen_config_to_toml(&cfg).unwrap(),
    )
    .unwrap();
    let steps: [&[&str]; 6] = [
        &[
            "generate",
            "--config",
            "../gen.toml",
            "--out",
            "data.json",
            "--seed",
            "5",
        ],
        &[
            "fit",
            "--data",
            "data.json",
            "--model",
            "model.json",
            "--report",
            "report.json",
            "--alpha",
            "2",
            "--kmax",
            "10",
            "--c",
            "5",
            "--seed",
            "5",
        ],
        &[
            "predict",
            "--model",
            "model.json",
            "--data",
            "data.json",
            "--out",
            "pred.json",
            "--seed",
            "5",
        ],
        &[
            "predict",
            "--model",
            "model.json",
            "--data",
            "data.json",
            "--out",
            "free.json",
            "--free-annotation",
            "--seed",
            "5",
        ],
        &[
            "eval",
            "--predictions",
            "pred.json",
            "--data",
            "data.json",
            "--out",
            "metrics.json",
            "--seed",
            "5",
        ],
        &[
            "sweep",
            "--data",
            "data.json",
            "--grid",
            "c=0,5",
            "--alpha",
            "2",
            "--kmax",
            "10",
            "--out",
            "sweep.tsv",
            "--seed",
            "5",
        ],
    ];
    let thread_counts = [1, 2, 4];
    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for &t in &thread_counts {
        let dir = root.path().join(format!("t{t}"));
        fs::create_dir(&dir).unwrap();
        for step in steps {
            if let Err(e) = run_cli(&dir, t, step) {
                return outcome(false, format!("--threads {t}: {e}"));
            }
        }
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    let names: Vec<&String> = outputs[0].iter().map(|f| &f.0).collect();
    let differing: Vec<&String> = names
        .iter()
        .enumerate()
        .filter(|&(i, _)| outputs[1..].iter().any(|o| o.get(i) != outputs[0].get(i)))
        .map(|(_, n)| *n)
        .collect();
    let identical = outputs.iter().all(|o| *o == outputs[0]);
    outcome(
        identical,
        format!(
            "{} output files from generate/fit/predict/eval/sweep compared across --threads {thread_counts:?}: {}",
            outputs[0].len(),
            if identical { "byte-identical".to_string() } else { format!("differ in {differing:?}") }
        ),
    )
}
