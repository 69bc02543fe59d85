use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use entcell::localization::{collect_activations, stability_scores};
use entcell::organism::LogitMode;
use entcell::pipeline::baseline_stats;
use entcell::steering::{initial_delta, steering_gradient};
use entcell::{HookSet, SteeringConfig};
use entcell_bench::{problem, scenario};
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let (scenario, _) = scenario(50);
    let prompts = scenario.baseline_prompts(8).unwrap().prompts;
    let layers = scenario.organism.num_layers();
    let mut group = c.benchmark_group("forward");
    group.bench_function("logits", |b| {
        b.iter(|| {
            for p in &prompts {
                black_box(scenario.organism.forward(p, &HookSet::default(), LogitMode::Last).unwrap());
            }
        })
    });
    group.bench_function("record_all_layers", |b| {
        b.iter(|| {
            for p in &prompts {
                black_box(scenario.organism.forward(p, &HookSet::record_all(layers), LogitMode::None).unwrap());
            }
        })
    });
    group.finish();
}

fn stability(c: &mut Criterion) {
    let (scenario, _) = scenario(50);
    let stats = baseline_stats(&scenario, 100, 1e-6).unwrap();
    let mut group = c.benchmark_group("stability");
    for k in [2usize, 8] {
        let bundle = scenario.canonical_prompts("Q76", k).unwrap();
        let acts = collect_activations(&scenario.organism, &bundle).unwrap();
        let z = entcell::localization::normalize(acts.view(), &stats).unwrap();
        group.bench_with_input(BenchmarkId::new("scores", k), &z, |b, z| {
            b.iter(|| black_box(stability_scores(z.view(), 1e-6).unwrap()))
        });
    }
    group.finish();
}

fn steering(c: &mut Criterion) {
    let (scenario, spec) = scenario(40);
    let problem = problem(&scenario, &spec);
    let config = SteeringConfig {
        layer: scenario.organism.ground_truth().planted_cells["Q76"].layer,
        ..SteeringConfig::default()
    };
    let delta = initial_delta(scenario.organism.hidden_dim(), 7);
    c.bench_function("steering/gradient", |b| {
        b.iter(|| black_box(steering_gradient(&scenario.organism, &problem, &delta, &config).unwrap()))
    });
}

criterion_group!(benches, forward, stability, steering);
criterion_main!(benches);
