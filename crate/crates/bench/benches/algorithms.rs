use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::rngs::StdRng;
use rand::SeedableRng;

use quicfsm_core::alphabet::HandshakeMode;
use quicfsm_core::automata::random::random_machine;
use quicfsm_core::differ::{canonical_lts, lts_diff, LtsDiffParams};
use quicfsm_core::harness::derive_initial_keys;
use quicfsm_core::learner::{learn, wp_suite, LearnerParams, SimulatedOracle};
use quicfsm_core::mockqut::{bundled_alphabet, reference_model, FaultProfile};
use quicfsm_core::optimizer::optimize;

fn learning(c: &mut Criterion) {
    let mut group = c.benchmark_group("learn");
    for n in [4, 8, 12] {
        let m = random_machine(&mut StdRng::seed_from_u64(n as u64), n, 5, 3, true);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| learn(m.inputs(), &mut SimulatedOracle::new(m.clone()), &LearnerParams::default()).unwrap())
        });
    }
    group.finish();
}

fn conformance_suite(c: &mut Criterion) {
    let m = random_machine(&mut StdRng::seed_from_u64(7), 10, 5, 3, true);
    c.bench_function("wp_suite n=10 k=5 extra=2", |b| b.iter(|| wp_suite(black_box(&m), 2)));
}

fn analysis(c: &mut Criterion) {
    let mode = HandshakeMode::RetryClientAuth;
    let reference = reference_model(mode, &bundled_alphabet(mode));
    let faulty = FaultProfile::KeyRetention.apply(&reference).unwrap();
    let (a, b) = (canonical_lts(&reference), canonical_lts(&faulty));
    let params = LtsDiffParams::default();
    c.bench_function("lts_diff reference vs key-retention", |bench| bench.iter(|| lts_diff(black_box(&a), black_box(&b), &params)));
    c.bench_function("optimize reference", |bench| bench.iter(|| optimize(black_box(&reference))));
}

fn key_schedule(c: &mut Criterion) {
    let dcid = [0x83, 0x94, 0xc8, 0xf0, 0x3e, 0x51, 0x57, 0x08];
    c.bench_function("derive_initial_keys", |b| b.iter(|| derive_initial_keys(black_box(&dcid), 1).unwrap()));
}

criterion_group!(benches, learning, conformance_suite, analysis, key_schedule);
criterion_main!(benches);
