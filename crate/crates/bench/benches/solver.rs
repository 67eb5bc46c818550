use std::hint::black_box;

use covadj::lasso::{fit_lasso_matrix, lambda_max, LassoConfig};
use covadj::rng::{stream, Purpose};
use covadj::Matrix;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

/// Centered uniform design with a sparse linear signal.
fn problem(m: usize, p: usize) -> (Matrix, Vec<f64>) {
    let mut rng = stream(1, 0, Purpose::Other);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let mut c: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mu = c.iter().sum::<f64>() / m as f64;
            c.iter_mut().for_each(|v| *v -= mu);
            c
        })
        .collect();
    let x = Matrix::from_columns(m, &cols).unwrap();
    let mut y: Vec<f64> = (0..m)
        .map(|i| 3.0 * x.get(i, 0) - 2.0 * x.get(i, 1) + x.get(i, 2) + rng.random_range(-0.5..0.5))
        .collect();
    let mu = y.iter().sum::<f64>() / m as f64;
    y.iter_mut().for_each(|v| *v -= mu);
    (x, y)
}

fn lasso(c: &mut Criterion) {
    let cfg = LassoConfig::default();
    for (m, p) in [(100, 100), (200, 100), (1000, 500)] {
        let (x, y) = problem(m, p);
        let lambda = 0.05 * lambda_max(&x, &y);
        c.bench_function(&format!("lasso {m}x{p}"), |b| {
            b.iter(|| fit_lasso_matrix(black_box(&x), black_box(&y), lambda, &cfg, None).unwrap())
        });
    }
}

criterion_group!(benches, lasso);
criterion_main!(benches);
