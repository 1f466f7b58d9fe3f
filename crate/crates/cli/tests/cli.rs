use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use siibp::io::{gen_config_to_toml, load_model, load_report};
use siibp::sampler::GenConfig;
use siibp::{ConceptSpace, PerConcept};

fn siibp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siibp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = siibp(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, videos: usize, seed: u64) -> PathBuf {
    let cfg = GenConfig {
        space: ConceptSpace::new(3, 3, 2, 8, 8).unwrap(),
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
    };
    let p = dir.join(format!("gen{seed}.toml"));
    fs::write(&p, gen_config_to_toml(&cfg).unwrap()).unwrap();
    p
}

fn generate(dir: &Path, videos: usize, seed: u64) -> String {
    let cfg = write_config(dir, videos, seed);
    let data = dir.join(format!("data{seed}.json"));
    ok(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    s(&data).to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--alpha", "2", "--kmax", "10", "--c", "5"];

#[test]
fn fit_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), 12, 1);
    let mut files = Vec::new();
    for run in 0..2 {
        let m = dir.path().join(format!("m{run}.json"));
        let r = dir.path().join(format!("r{run}.json"));
        let mut args = vec![
            "fit",
            "--data",
            &data,
            "--model",
            s(&m),
            "--report",
            s(&r),
            "--seed",
            "7",
        ];
        args.extend(SMALL);
        ok(&args);
        files.push((fs::read(&m).unwrap(), fs::read(&r).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let report = load_report(dir.path().join("r0.json")).unwrap();
    assert_eq!(report.seed, 7);
    let trace = fs::read_to_string(dir.path().join("r0.trace.tsv")).unwrap();
    assert!(trace.starts_with("iteration\tobjective\n0\t"));
    assert_eq!(trace.lines().count(), report.objective_trace.len() + 1);
}

#[test]
fn unconstrained_variant_equals_zero_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), 12, 2);
    let p = |n: &str| dir.path().join(n);
    ok(&[
        "fit",
        "--data",
        &data,
        "--model",
        s(&p("a.json")),
        "--report",
        s(&p("ra.json")),
        "--variant",
        "ws-siibp",
        "--kmax",
        "10",
        "--alpha",
        "2",
    ]);
    ok(&[
        "fit",
        "--data",
        &data,
        "--model",
        s(&p("b.json")),
        "--report",
        s(&p("rb.json")),
        "--variant",
        "wsc-siibp",
        "--c",
        "0",
        "--kmax",
        "10",
        "--alpha",
        "2",
    ]);
    let (a, b) = (
        load_model(p("a.json")).unwrap(),
        load_model(p("b.json")).unwrap(),
    );
    assert_eq!(a.appearance, b.appearance);
    let (ra, rb) = (
        load_report(p("ra.json")).unwrap(),
        load_report(p("rb.json")).unwrap(),
    );
    assert_eq!(ra.objective_trace, rb.objective_trace);
    assert_eq!(ra.decoded, rb.decoded);
}

#[test]
fn predict_and_eval_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), 12, 3);
    let p = |n: &str| dir.path().join(n);
    let (m, r) = (p("m.json"), p("r.json"));
    let mut args = vec!["fit", "--data", &data, "--model", s(&m), "--report", s(&r)];
    args.extend(SMALL);
    ok(&args);
    ok(&[
        "predict",
        "--model",
        s(&p("m.json")),
        "--data",
        &data,
        "--out",
        s(&p("pred.json")),
        "--free-annotation",
        "--seed",
        "4",
    ]);
    ok(&[
        "eval",
        "--predictions",
        s(&p("pred.json")),
        "--data",
        &data,
        "--out",
        s(&p("met.json")),
        "--seed",
        "4",
    ]);
    let pred = fs::read_to_string(p("pred.json")).unwrap();
    assert!(pred.contains("\"kind\": \"predictions\"") && pred.contains("\"seed\": 4"));
    assert!(fs::read_to_string(p("met.json"))
        .unwrap()
        .contains("\"seed\": 4"));
    let recall = fs::read_to_string(p("met.recall.tsv")).unwrap();
    assert_eq!(recall.lines().count(), 22);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let missing = siibp(&[
        "fit",
        "--data",
        s(&p("none.json")),
        "--model",
        "m",
        "--report",
        "r",
    ]);
    assert_eq!(missing.status.code(), Some(1));

    fs::write(
        p("bad.json"),
        "{\"format_version\": 1, \"kind\": \"model\"}",
    )
    .unwrap();
    let wrong_kind = siibp(&[
        "fit",
        "--data",
        s(&p("bad.json")),
        "--model",
        "m",
        "--report",
        "r",
    ]);
    assert_eq!(wrong_kind.status.code(), Some(2));

    let data = generate(dir.path(), 6, 4);
    let too_small = siibp(&[
        "fit",
        "--data",
        &data,
        "--model",
        s(&p("m")),
        "--report",
        s(&p("r")),
        "--kmax",
        "3",
    ]);
    assert_eq!(too_small.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&too_small.stderr).contains("validation"));

    let empty_grid = siibp(&[
        "sweep",
        "--data",
        &data,
        "--grid",
        "c=5:1:0",
        "--out",
        s(&p("t.tsv")),
    ]);
    assert_eq!(empty_grid.status.code(), Some(2));

    let unknown = siibp(&[
        "fit",
        "--data",
        &data,
        "--model",
        "m",
        "--report",
        "r",
        "--variant",
        "nope",
    ]);
    assert_eq!(unknown.status.code(), Some(2));
}

fn column(table: &str, name: &str) -> usize {
    table
        .lines()
        .next()
        .unwrap()
        .split('\t')
        .position(|c| c == name)
        .unwrap()
}

#[test]
fn sweep_prefers_a_positive_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let (mut best, mut zero) = (0.0, 0.0);
    for seed in 0..5 {
        let data = generate(dir.path(), 30, 10 + seed);
        let out = dir.path().join(format!("sweep{seed}.tsv"));
        ok(&[
            "sweep",
            "--data",
            &data,
            "--grid",
            "c=0:2.5:5",
            "--alpha",
            "2",
            "--kmax",
            "10",
            "--out",
            s(&out),
        ]);
        let table = fs::read_to_string(&out).unwrap();
        let (ci, ai) = (column(&table, "c"), column(&table, "validation_accuracy"));
        let rows: Vec<Vec<&str>> = table
            .lines()
            .skip(1)
            .map(|l| l.split('\t').collect())
            .collect();
        assert_eq!(rows.len(), 3);
        best += rows[0][ai].parse::<f64>().unwrap();
        let z = rows
            .iter()
            .find(|r| r[ci].parse::<f64>().unwrap() == 0.0)
            .unwrap();
        zero += z[ai].parse::<f64>().unwrap();
    }
    assert!(best > zero, "best {best} vs C=0 {zero}");
}
