//! Micro-benchmarks of the simulator hot paths: schedule construction,
//! noiseless queries across branch sizes, noisy full vs pruned shots, and
//! the pruning set arithmetic.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use qram_core::{
    build_schedule, run_noiseless, run_noisy, unreliable_set, DataTable, FaultSite,
    FidelityMetric, Mode, NodeId, NoiseSpec, QueryContext, Register, SparseState, TreeShape,
};

fn context(n: u8, eps: f64, seed: u64) -> QueryContext {
    let shape = TreeShape::new(n, 1).unwrap();
    let schedule = build_schedule(shape).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let table = DataTable::random(shape, &mut rng);
    QueryContext::new(schedule, table, NoiseSpec::depolarizing(eps)).unwrap()
}

fn bench_schedule(c: &mut Criterion) {
    c.bench_function("build_schedule_n14", |b| {
        let shape = TreeShape::new(14, 1).unwrap();
        b.iter(|| build_schedule(black_box(shape)).unwrap());
    });
}

fn bench_noiseless(c: &mut Criterion) {
    let mut group = c.benchmark_group("noiseless_query");
    for branches in [32u64, 1024] {
        let ctx = context(14, 0.0, 1);
        let input = SparseState::uniform_over(0..branches);
        group.bench_with_input(BenchmarkId::from_parameter(branches), &branches, |b, _| {
            b.iter(|| run_noiseless(black_box(&input), &ctx.table, &ctx.schedule).unwrap());
        });
    }
    group.finish();
}

fn bench_noisy_modes(c: &mut Criterion) {
    let mut group = c.benchmark_group("noisy_shot_n10");
    let ctx = context(10, 1e-3, 2);
    let input = SparseState::uniform_over(0..1024u64);
    for (name, mode) in [("full", Mode::Full), ("pruned", Mode::Pruned)] {
        group.bench_function(name, |b| {
            let mut shot = 0u64;
            b.iter(|| {
                shot += 1;
                run_noisy(
                    black_box(&ctx),
                    &input,
                    mode,
                    7,
                    shot,
                    None,
                    FidelityMetric::Bus,
                    None,
                )
                .unwrap()
            });
        });
    }
    group.finish();
}

fn bench_unreliable_set(c: &mut Criterion) {
    let shape = TreeShape::new(16, 1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let faults: Vec<FaultSite> = (0..64)
        .map(|_| {
            let layer = rand::Rng::gen_range(&mut rng, 0..=shape.n);
            FaultSite {
                node: NodeId { layer, pos: rand::Rng::gen_range(&mut rng, 0..(1u32 << layer)) },
                register: Register::Address,
                timestep: 0,
            }
        })
        .collect();
    c.bench_function("unreliable_set_64_faults_n16", |b| {
        b.iter(|| unreliable_set(black_box(&faults), shape).unwrap());
    });
}

criterion_group!(
    benches,
    bench_schedule,
    bench_noiseless,
    bench_noisy_modes,
    bench_unreliable_set
);
criterion_main!(benches);
