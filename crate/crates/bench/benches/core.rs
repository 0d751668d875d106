use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use rsp_core::bits::BitString;
use rsp_core::entcf::{self, BasisChoice};
use rsp_core::gf2::{self, gf_mul, FieldElement};
use rsp_core::protocol::{run_multi_round, MultiRoundConfig, SimulatedProver};
use rsp_core::{rigidity, unclonable as uc};

fn field(c: &mut Criterion) {
    let x = FieldElement::new(0x1234_5678, 32).unwrap();
    let y = FieldElement::new(0x0bad_f00d, 32).unwrap();
    c.bench_function("gf_mul w=32", |b| b.iter(|| gf_mul(black_box(&x), black_box(&y)).unwrap()));
    let k = gf2::pip_sample(16, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    let v = BitString::from_u64(0xbeef, 16);
    c.bench_function("pip_eval w=16", |b| b.iter(|| gf2::pip_eval(black_box(&k), black_box(&v)).unwrap()));
}

fn claw_free(c: &mut Criterion) {
    let kp = entcf::gen(BasisChoice::Hadamard, 8, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
    c.bench_function("entcf eval w=8", |b| b.iter(|| entcf::eval(black_box(&kp.key), 1, black_box(0x5a))));
}

fn protocol(c: &mut Criterion) {
    let mut group = c.benchmark_group("multi-round");
    group.sample_size(20);
    for n in [2, 4, 8] {
        let cfg = MultiRoundConfig { n, m: 4, width: 3, seed: 3, ..Default::default() };
        group.bench_function(format!("honest n={n}"), |b| b.iter(|| run_multi_round(&cfg, &mut SimulatedProver::honest(3)).unwrap()));
    }
    group.finish();
}

fn applications(c: &mut Criterion) {
    let mut group = c.benchmark_group("applications");
    group.sample_size(10);
    group.bench_function("breidbart exact λ=2", |b| {
        b.iter(|| uc::cloning_experiment_exact(&uc::breidbart_attack(), 2).unwrap())
    });
    let dev = rigidity::device_from_honest(2, 2, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
    group.bench_function("pauli grid n=2", |b| b.iter(|| rigidity::pauli_grid(black_box(&dev)).unwrap()));
    group.finish();
}

criterion_group!(benches, field, claw_free, protocol, applications);
criterion_main!(benches);
