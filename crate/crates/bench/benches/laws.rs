use criterion::{black_box, criterion_group, criterion_main, Criterion};
use geomgw::exactlaw::{aggregated_tv, conditioned_ratio, script_h, z_pmf, LawFamily, TreeLaw};
use geomgw::OffspringParams;

fn exact(c: &mut Criterion) {
    let p = OffspringParams::new(0.5, 0.5).unwrap();
    c.bench_function("z_pmf n=1000", |b| {
        b.iter(|| z_pmf(&p, black_box(1000), black_box(40)).unwrap())
    });
    c.bench_function("conditioned_ratio n=500", |b| {
        b.iter(|| conditioned_ratio(&p, black_box(500), 3, 4, 25).unwrap())
    });
    c.bench_function("script_h theta=1", |b| {
        b.iter(|| script_h(&p, black_box(3), 5, 1.0).unwrap())
    });
    let conditioned = TreeLaw::new(p, LawFamily::Conditioned { n: 30, a: 30 }, 2, Some(2)).unwrap();
    let limit = TreeLaw::new(p, LawFamily::Condensation, 2, Some(2)).unwrap();
    c.bench_function("aggregated_tv h=2 D=20", |b| {
        b.iter(|| aggregated_tv(&conditioned, &limit, black_box(20)).unwrap())
    });
}

criterion_group!(benches, exact);
criterion_main!(benches);
