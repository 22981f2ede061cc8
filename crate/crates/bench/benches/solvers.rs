use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kpo_bench::Fixture;
use kpo_core::{
    build_liouvillian, fit_arctan, husimi_q, integrate_heterodyne, qfi_mixed, spectrum, steady_state,
    HeterodyneOptions, HusimiSpec, NoiseStream, SweepRecord, SweepSchedule, C64,
};

fn generator(c: &mut Criterion) {
    let mut group = c.benchmark_group("master_equation");
    for dim in [20, 30] {
        let fx = Fixture::new(dim);
        let me = fx.master_equation();
        let rho = fx.rho.to_vec();
        let mut out = vec![C64::new(0.0, 0.0); rho.len()];
        group.bench_with_input(BenchmarkId::new("apply", dim), &dim, |b, _| {
            b.iter(|| me.apply(1.5, black_box(&rho), &mut out))
        });
        group.bench_with_input(BenchmarkId::new("apply_hermitian", dim), &dim, |b, _| {
            b.iter(|| me.apply_hermitian(1.5, black_box(&rho), &mut out))
        });
    }
    group.finish();
}

fn steady_and_spectrum(c: &mut Criterion) {
    let mut group = c.benchmark_group("liouvillian");
    group.sample_size(10);
    for dim in [15, 25] {
        let fx = Fixture::new(dim);
        let l = build_liouvillian(&fx.params, fx.space, &fx.env, true);
        group.bench_with_input(BenchmarkId::new("steady_state", dim), &dim, |b, _| b.iter(|| steady_state(&l).unwrap()));
        if dim <= 15 {
            group.bench_with_input(BenchmarkId::new("spectrum", dim), &dim, |b, _| b.iter(|| spectrum(&l, 2).unwrap()));
        }
    }
    group.finish();
}

fn heterodyne(c: &mut Criterion) {
    let fx = Fixture::new(20);
    let schedule = SweepSchedule::new(2.0, 1.0, 0.5).unwrap();
    let options = HeterodyneOptions { samples: 10, ..HeterodyneOptions::default() };
    let mut group = c.benchmark_group("heterodyne");
    group.sample_size(10);
    group.bench_function("500_steps_dim20", |b| {
        b.iter(|| {
            let mut noise = NoiseStream::new(1, 0);
            integrate_heterodyne(&fx.params, &schedule, Some(&fx.rho), &mut noise, fx.space, &fx.env, &options).unwrap()
        })
    });
    group.finish();
}

fn analysis(c: &mut Criterion) {
    let fx = Fixture::new(20);
    let spec = HusimiSpec { half_width: 6.0, points: 101 };
    c.bench_function("husimi_q_101x101_dim20", |b| b.iter(|| husimi_q(&fx.rho, &spec).unwrap()));

    let deltas: Vec<f64> = (0..500).map(|i| 15.0 - 25.0 * i as f64 / 499.0).collect();
    let phi: Vec<f64> = deltas.iter().map(|d| (2.0 * (d + 1.8)).atan() + 0.3).collect();
    let record = SweepRecord::from_phase(deltas, phi);
    c.bench_function("fit_arctan_500", |b| b.iter(|| fit_arctan(black_box(&record), -6.0, 6.0).unwrap()));

    let mut group = c.benchmark_group("qfi");
    group.sample_size(10);
    group.bench_function("qfi_mixed_dim15", |b| {
        let p = kpo_core::SystemParams::thermal_qfi().with_delta(1.5);
        let space = kpo_core::FockSpace::new(15).unwrap();
        b.iter(|| qfi_mixed(&p, &fx.env, space, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, generator, steady_and_spectrum, heterodyne, analysis);
criterion_main!(benches);
