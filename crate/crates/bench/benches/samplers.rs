use criterion::{criterion_group, criterion_main, Criterion};
use geomgw::sampler::{
    sample_condensation, sample_conditioned, sample_kesten, sample_poisson_tree,
    CondensationGenerator, Rng,
};
use geomgw::OffspringParams;

fn samplers(c: &mut Criterion) {
    let p = OffspringParams::new(0.5, 0.5).unwrap();
    let mut rng = Rng::new(1);
    c.bench_function("conditioned n=50 a=10", |b| {
        b.iter(|| sample_conditioned(&p, 50, 10, &mut rng, 3).unwrap())
    });
    c.bench_function("kesten h=5", |b| {
        b.iter(|| sample_kesten(&p, &mut rng, 5).unwrap())
    });
    c.bench_function("poisson theta=1 h=5", |b| {
        b.iter(|| sample_poisson_tree(&p, 1.0, &mut rng, 5).unwrap())
    });
    for (name, g) in [
        ("inhomogeneous", CondensationGenerator::Inhomogeneous),
        ("two-type", CondensationGenerator::TwoType),
    ] {
        c.bench_function(&format!("condensation {name} h=4"), |b| {
            b.iter(|| sample_condensation(&p, &mut rng, 4, 2, g).unwrap())
        });
    }
}

criterion_group!(benches, samplers);
criterion_main!(benches);
