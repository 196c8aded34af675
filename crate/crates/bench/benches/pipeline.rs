use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use icrt_core::cuttree;
use icrt_core::{frag, icrt, prune, ptree, ProbVector, ThetaSpec};

fn bench_ptree(c: &mut Criterion) {
    let mut g = c.benchmark_group("ptree_sample");
    for n in [1_000, 100_000] {
        let p = ProbVector::uniform(n).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| b.iter(|| ptree::sample_ptree(black_box(p), 1)));
    }
    g.finish();
}

fn bench_prune(c: &mut Criterion) {
    let n = 50_000;
    let p = ProbVector::uniform(n).unwrap();
    let t = ptree::sample_ptree(&p, 3);
    let ord = prune::sample_order(&t, &p, 4).unwrap();
    c.bench_function("prune_50k", |b| b.iter(|| prune::prune(black_box(&t), &ord, &p).unwrap()));
}

fn bench_line_breaking(c: &mut Criterion) {
    let spec = ThetaSpec::power_law(0.5, 10_000, 0.6, true).unwrap();
    c.bench_function("line_breaking_k10k", |b| b.iter(|| icrt::build_line_breaking(black_box(&spec), 10_000, 5).unwrap()));
}

fn bench_frag(c: &mut Criterion) {
    let spec = ThetaSpec::brownian();
    let sk = icrt::build_line_breaking(&spec, 10_000, 6).unwrap();
    c.bench_function("frag_m500", |b| {
        b.iter(|| {
            let h = frag::simulate(black_box(&sk), &spec, 500, 7).unwrap();
            cuttree::delta_matrix(&h).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_ptree, bench_prune, bench_line_breaking, bench_frag
}
criterion_main!(benches);
