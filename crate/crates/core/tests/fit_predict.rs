use siibp::decode::{default_thresholds, evaluate, DEFAULT_BACKGROUND_THRESHOLD};
use siibp::inference::{fit, predict, FitOptions, LabelMode, PredictOptions, Variant};
use siibp::io::{
    load_model, load_predictions, load_report, save_model, save_predictions, save_report,
};
use siibp::sampler::{sample_dataset, GenConfig};
use siibp::{ConceptSpace, Dataset, Error, HyperParams};

fn data(seed: u64, videos: usize) -> Dataset {
    let cfg = GenConfig {
        num_videos: videos,
        space: ConceptSpace::new(3, 3, 2, 6, 6).unwrap(),
        seed,
        ..GenConfig::default()
    };
    sample_dataset(&cfg).unwrap().dataset
}

fn hp() -> HyperParams {
    HyperParams {
        alpha: 2.0,
        penalty_c: 5.0,
        k_max: 10,
        ..HyperParams::default()
    }
}

#[test]
fn fit_report_is_consistent() {
    let d = data(1, 20);
    let out = fit(&d, &hp(), &FitOptions::default()).unwrap();
    let r = &out.report;
    assert_eq!(r.objective_trace[0].0, 0);
    assert_eq!(r.objective_trace.len(), r.inner_iterations + 1);
    // the closing variance re-estimate can only lower the objective
    assert!(r.final_objective.total() <= r.objective_trace.last().unwrap().1);
    assert_eq!(r.decoded.len(), d.len());
    assert!(r.metrics.is_some());
    assert!(r.constraints.bags_with_violation <= r.constraints.bags_strictly_below_one);
    assert_eq!(out.model.meta.final_objective, r.final_objective.total());
    for (post, bag) in out.state.bags.iter().zip(d.bags()) {
        let cs = siibp::build_constraints(bag, d.space(), 10).unwrap();
        for j in 0..post.num_tracks {
            for k in (0..10).filter(|&k| !cs.mask[k]) {
                assert_eq!(post.nu(j, k), 0.0);
            }
        }
    }
}

#[test]
fn unpenalized_fit_trace_descends() {
    let d = data(2, 15);
    let hp = HyperParams {
        penalty_c: 0.0,
        ..hp()
    };
    let out = fit(&d, &hp, &FitOptions::default()).unwrap();
    for w in out.report.objective_trace.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-8 * w[0].1.abs(), "{:?}", w);
    }
}

#[test]
fn unconstrained_variants_report_zero_penalty() {
    let d = data(3, 10);
    for v in [Variant::WsSiibp, Variant::WsSibp] {
        let out = fit(
            &d,
            &hp(),
            &FitOptions {
                variant: v,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_eq!(out.report.penalty_c, 0.0);
        assert_eq!(out.model.penalty_c, 5.0);
    }
}

#[test]
fn parallel_fit_is_bit_identical() {
    let d = data(4, 12);
    let a = fit(&d, &hp(), &FitOptions::default()).unwrap();
    let b = fit(
        &d,
        &hp(),
        &FitOptions {
            parallel: true,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.model, b.model);
}

#[test]
fn empty_dataset_is_rejected() {
    let d = Dataset::new(ConceptSpace::new(1, 1, 0, 2, 2).unwrap(), vec![]).unwrap();
    assert!(matches!(
        fit(&d, &hp(), &FitOptions::default()),
        Err(Error::Validation(_))
    ));
}

#[test]
fn predict_with_labels_and_free() {
    let d = data(5, 30);
    let (train, test) = d.split_at(20);
    let out = fit(&train, &hp(), &FitOptions::default()).unwrap();
    let opts = PredictOptions::default();
    let with = predict(&out.model, &test, &opts, LabelMode::WithLabels).unwrap();
    let free = predict(&out.model, &test, &opts, LabelMode::FreeAnnotation).unwrap();
    assert_eq!(with.bags.len(), test.len());
    assert_eq!(with.ids, free.ids);
    assert_eq!(
        with,
        predict(&out.model, &test, &opts, LabelMode::WithLabels).unwrap()
    );
    let eval = evaluate(
        &with.bags,
        &test,
        DEFAULT_BACKGROUND_THRESHOLD,
        &default_thresholds(),
    )
    .unwrap();
    assert_eq!(eval.recall_sweep.len(), 21);
    let chance = 1.0 / 9.0;
    assert!(eval.metrics.pairwise_accuracy.unwrap() > chance);
}

#[test]
fn predict_rejects_mismatched_space() {
    let d = data(6, 10);
    let out = fit(&d, &hp(), &FitOptions::default()).unwrap();
    let other = sample_dataset(&GenConfig {
        num_videos: 3,
        space: ConceptSpace::new(3, 3, 2, 5, 6).unwrap(),
        ..GenConfig::default()
    })
    .unwrap()
    .dataset;
    let err = predict(
        &out.model,
        &other,
        &PredictOptions::default(),
        LabelMode::FreeAnnotation,
    )
    .unwrap_err();
    assert!(err.to_string().contains("dimensions"), "{err}");
}

#[test]
fn model_report_and_predictions_survive_files() {
    let d = data(7, 10);
    let (train, test) = d.split_at(7);
    let out = fit(&train, &hp(), &FitOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mp = dir.path().join("model.json");
    save_model(&out.model, &mp).unwrap();
    let model = load_model(&mp).unwrap();
    assert_eq!(model, out.model);

    let rp = dir.path().join("report.json");
    save_report(&out.report, &rp).unwrap();
    assert_eq!(load_report(&rp).unwrap(), out.report);

    let pred = predict(
        &model,
        &test,
        &PredictOptions::default(),
        LabelMode::WithLabels,
    )
    .unwrap();
    let pp = dir.path().join("pred.json");
    save_predictions(&pred, model.k_max, &pp).unwrap();
    assert_eq!(load_predictions(&pp).unwrap(), pred);
}
