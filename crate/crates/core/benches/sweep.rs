//! One full inference sweep over a sampled corpus, on the calling thread
//! versus mapped over bags on the rayon pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use siibp::inference::{init_state, updates, Corpus, EngineParams, LabelMode, Variant};
use siibp::sampler::{sample_dataset, GenConfig};
use siibp::{Exec, HyperParams};

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(20);
    for videos in [50, 200] {
        let cfg = GenConfig {
            num_videos: videos,
            ..GenConfig::default()
        };
        let data = sample_dataset(&cfg).expect("valid config").dataset;
        let hp = HyperParams {
            alpha: 3.0,
            k_max: 10,
            ..HyperParams::default()
        };
        let corpus =
            Corpus::build(&data, Variant::WscSiibp, hp.k_max, LabelMode::WithLabels).unwrap();
        let params = EngineParams {
            alpha: hp.alpha,
            penalty_c: hp.penalty_c,
            k_max: hp.k_max,
        };
        let start = init_state(&corpus, &hp);
        for (name, exec) in [
            ("sequential", Exec::Sequential),
            ("parallel", Exec::Parallel),
        ] {
            group.bench_with_input(BenchmarkId::new(name, videos), &exec, |b, &exec| {
                b.iter_batched(
                    || start.clone(),
                    |mut state| {
                        updates::sweep(&mut state, &corpus, &params, exec);
                        state
                    },
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
