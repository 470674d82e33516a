//! Data-parallel hot paths on the default rayon pool against a one-thread
//! pool. Build with `--no-default-features` to time the sequential fallback
//! itself (the pool comparison is then skipped).

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use latmom::hmc::{LogDensity, SamplerConfig};
use latmom::model::{ExactSas, Posterior};
use latmom::posterior::hmc_run;
use latmom::simstudy::{default_fit_prior, default_fit_spec, simulate, SimDesign};
use latmom::surface::{generate_grid, simulate_probabilities, GridRanges};
use std::hint::black_box;

fn workloads(c: &mut Criterion, label: &str, run: &dyn Fn(&mut (dyn FnMut() + Send))) {
    let sim = simulate(&SimDesign { n_subjects: 250, replications: 1, ..Default::default() }, 1).unwrap();
    let spec = default_fit_spec();
    let post = Posterior::new(&sim.panel, &spec, default_fit_prior(), ExactSas).unwrap();
    let x = vec![0.1; post.dim()];
    let mut g = vec![0.0; post.dim()];
    c.bench_function(&format!("log_posterior_gradient/{label}"), |b| {
        b.iter(|| run(&mut || {
            black_box(post.log_density_grad(black_box(&x), &mut g));
        }))
    });

    let grid = generate_grid(GridRanges::default(), [16, 4, 8, 8], 500).unwrap();
    c.bench_function(&format!("surface_monte_carlo/{label}"), |b| {
        b.iter(|| run(&mut || {
            black_box(simulate_probabilities(&grid, 3));
        }))
    });

    let small = simulate(&SimDesign { n_subjects: 40, replications: 1, ..Default::default() }, 2).unwrap();
    let cfg = SamplerConfig { chains: 4, iterations: 60, warmup: 30, ..Default::default() };
    let mut group = c.benchmark_group("hmc_four_chains");
    group.sample_size(10);
    group.bench_function(label, |b| {
        b.iter_batched(
            || (),
            |_| run(&mut || {
                black_box(hmc_run(&small.panel, &spec, &default_fit_prior(), &cfg).unwrap());
            }),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    workloads(c, "one_thread", &|f| single.install(|| f()));
    workloads(c, "default_pool", &|f| f());
}

#[cfg(not(feature = "parallel"))]
fn bench(c: &mut Criterion) {
    workloads(c, "sequential_build", &|f| f());
}

criterion_group!(benches, bench);
criterion_main!(benches);
