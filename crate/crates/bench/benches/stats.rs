use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use teleop_core::stats::{compare_conditions, friedman, wilcoxon_signed_rank, PairedData};
use teleop_core::RngStream;

fn normals(rng: &mut RngStream, n: usize, shift: f64) -> Vec<f64> {
    (0..n).map(|_| rng.next_normal() + shift).collect()
}

fn paired(n: usize) -> PairedData {
    let mut rng = RngStream::new(3, 0);
    let cols = [normals(&mut rng, n, 0.0), normals(&mut rng, n, 0.3), normals(&mut rng, n, 0.8)];
    let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    PairedData::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap()
}

fn wilcoxon(c: &mut Criterion) {
    let mut rng = RngStream::new(5, 0);
    for n in [12usize, 200] {
        let x = normals(&mut rng, n, 0.2);
        let y = normals(&mut rng, n, 0.0);
        c.bench_function(&format!("wilcoxon_n{n}"), |b| {
            b.iter(|| wilcoxon_signed_rank(black_box(&x), black_box(&y), 0.05).unwrap())
        });
    }
}

fn friedman_and_battery(c: &mut Criterion) {
    let data = paired(15);
    c.bench_function("friedman_k3_n15", |b| b.iter(|| friedman(black_box(&data), 0.05).unwrap()));
    c.bench_function("compare_conditions_k3_n15", |b| {
        b.iter(|| compare_conditions(black_box(&data), 0.05).unwrap())
    });
}

criterion_group!(benches, wilcoxon, friedman_and_battery);
criterion_main!(benches);
