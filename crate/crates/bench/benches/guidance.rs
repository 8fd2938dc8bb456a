use abds_bench::{input_row, mlp_model, schedule};
use abds_core::guidance::{guidance_reverse_match, guided_sample, ideal_guidance_gmm};
use abds_core::{EpsModel, GmmDistribution, GuidanceConfig, Sampler, SimilarityKernel, Strategy};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn edits(c: &mut Criterion) {
    let model = mlp_model();
    let sched = schedule();
    let y = input_row();
    let mut group = c.benchmark_group("edit");
    group.sample_size(10);
    for strategy in [
        Strategy::None,
        Strategy::ForwardMatch,
        Strategy::ReverseMatch,
    ] {
        let g = GuidanceConfig::new(strategy, 0.3, 1.0).unwrap();
        for (name, sampler) in [
            ("ddpm", Sampler::Ddpm),
            ("ddim20", Sampler::Ddim { steps: 20 }),
        ] {
            group.bench_function(format!("{}/{name}", strategy.name()), |b| {
                b.iter(|| guided_sample(&model, &sched, &g, black_box(&y), 0, sampler).unwrap())
            });
        }
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let model = mlp_model();
    let sched = schedule();
    let y = input_row();
    let k = SimilarityKernel::new(0.3).unwrap();
    c.bench_function("mlp/eps", |b| {
        b.iter(|| model.eps(black_box(&y), 100, &sched).unwrap())
    });
    c.bench_function("mlp/reverse_match", |b| {
        b.iter(|| guidance_reverse_match(black_box(&y), &y, 100, &model, &sched, k).unwrap())
    });

    let gmm = GmmDistribution::new(
        vec![0.3, 0.7],
        vec![vec![-1.0; 8], vec![1.0; 8]],
        vec![vec![0.2; 8], vec![0.5; 8]],
    )
    .unwrap();
    let x = vec![0.3; 8];
    let y8 = vec![-0.4; 8];
    c.bench_function("gmm/ideal", |b| {
        b.iter(|| ideal_guidance_gmm(black_box(&x), &y8, 100, &gmm, &sched, k).unwrap())
    });
    c.bench_function("gmm/reverse_match", |b| {
        b.iter(|| guidance_reverse_match(black_box(&x), &y8, 100, &gmm, &sched, k).unwrap())
    });
}

criterion_group!(benches, edits, gradients);
criterion_main!(benches);
