use criterion::{criterion_group, criterion_main, Criterion};

use skembed_core::embed::{self, EmbeddingProblem};
use skembed_core::lattice::WalkKernel;
use skembed_core::lp::Sense;
use skembed_core::presets;

fn bench_solver(c: &mut Criterion) {
    let inst = presets::uniform_shell(2, 0.5, 4.0, 2.0, 3.0, 1.0, Sense::Min).unwrap();
    let kernel = WalkKernel::new(&inst.spec);

    let mut group = c.benchmark_group("embedding");
    group.sample_size(10);
    for &reduce in &[false, true] {
        let built = embed::build_problem(
            &inst.spec,
            &kernel,
            EmbeddingProblem {
                mu: inst.mu.clone(),
                nu: inst.nu.clone(),
                alpha: inst.alpha,
                sense: inst.sense,
                allow_boundary_target: false,
                symmetry_reduction: reduce,
            },
        )
        .unwrap();
        let name = if reduce { "exact-reduced" } else { "exact-full" };
        group.bench_function(name, |b| {
            b.iter(|| {
                embed::solve(&inst.spec, &kernel, &built, embed::Method::Exact).unwrap()
            })
        });
    }
    group.bench_function("build", |b| {
        b.iter(|| {
            embed::build_problem(
                &inst.spec,
                &kernel,
                EmbeddingProblem {
                    mu: inst.mu.clone(),
                    nu: inst.nu.clone(),
                    alpha: inst.alpha,
                    sense: inst.sense,
                    allow_boundary_target: false,
                    symmetry_reduction: true,
                },
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_solver);
criterion_main!(benches);
