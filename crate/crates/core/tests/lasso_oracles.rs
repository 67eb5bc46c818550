use covadj::data::Arm;
use covadj::lasso::{
    fit_lasso, fit_lasso_matrix, fit_ols, fit_ols_with_intercept, kkt_violation, lambda_max, lambda_rate, objective,
    select_lambda_cv, sparsity_min_n, CenteredDesign, LassoConfig, Scope,
};
use covadj::rng::{stream, Purpose};
use covadj::{Error, Matrix};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(m: usize, p: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, 0, Purpose::Other);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..m).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
        .collect();
    Matrix::from_columns(m, &cols).unwrap()
}

fn centered(mut x: Matrix, mut y: Vec<f64>) -> (Matrix, Vec<f64>) {
    for j in 0..x.cols() {
        let c = x.col_mut(j);
        let mu = c.iter().sum::<f64>() / c.len() as f64;
        c.iter_mut().for_each(|v| *v -= mu);
    }
    let mu = y.iter().sum::<f64>() / y.len() as f64;
    y.iter_mut().for_each(|v| *v -= mu);
    (x, y)
}

fn design(x: Matrix, y: Vec<f64>) -> CenteredDesign {
    let m = y.len();
    CenteredDesign {
        rows: x,
        response: y,
        arm: Arm::Treated,
        scope: Scope::Pooled,
        blocks: vec![0; m],
        units: (0..m).collect(),
    }
}

/// Gaussian elimination with partial pivoting on `A x = b`.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Normal equations `XᵀX β = Xᵀy` formed element by element.
fn normal_equations(x: &Matrix, y: &[f64]) -> Vec<f64> {
    let p = x.cols();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let a = (0..p).map(|i| (0..p).map(|j| dot(x.col(i), x.col(j))).collect()).collect();
    let b = (0..p).map(|j| dot(x.col(j), y)).collect();
    solve(a, b)
}

/// Accelerated proximal gradient, run long enough to serve as a reference.
fn fista(x: &Matrix, y: &[f64], lambda: f64) -> Vec<f64> {
    let m = y.len() as f64;
    let p = x.cols();
    // Lipschitz bound from the Frobenius norm.
    let lip = (0..p).map(|j| x.col(j).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / m;
    let step = 1.0 / lip;
    let mut beta = vec![0.0; p];
    let mut z = beta.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let fitted = x.mul_vec(&z);
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| b - a).collect();
        let grad = x.tr_mul_vec(&resid);
        let next: Vec<f64> = (0..p)
            .map(|j| {
                let v = z[j] - step * grad[j] / m;
                v.signum() * (v.abs() - step * lambda).max(0.0)
            })
            .collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let moved: f64 = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        z = next.iter().zip(&beta).map(|(n, b)| n + (t - 1.0) / t_next * (n - b)).collect();
        beta = next;
        t = t_next;
        if moved < 1e-13 {
            break;
        }
    }
    beta
}

#[test]
fn single_column_soft_threshold() {
    let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![2.0], vec![-2.0]]).unwrap();
    let y = vec![2.0, -2.0, 4.0, -4.0];
    let fit = fit_lasso(&design(x, y), 0.5, &LassoConfig::default()).unwrap();
    assert!((fit.beta[0] - 1.8).abs() < 1e-12);
}

#[test]
fn zero_penalty_matches_normal_equations() {
    let (x, _) = centered(gaussian(50, 3, 1), vec![0.0; 50]);
    let noise = gaussian(50, 1, 2);
    let y: Vec<f64> = (0..50).map(|i| x.get(i, 0) - 2.0 * x.get(i, 1) + 0.5 * x.get(i, 2) + noise.get(i, 0)).collect();
    let (x, y) = centered(x, y);
    let fit = fit_lasso_matrix(&x, &y, 0.0, &LassoConfig::default(), None).unwrap();
    let ols = normal_equations(&x, &y);
    for (a, b) in fit.beta.iter().zip(&ols) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    let via_qr = fit_ols(&design(x, y)).unwrap();
    for (a, b) in via_qr.iter().zip(&ols) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn intercept_ols_matches_normal_equations() {
    let x = gaussian(50, 4, 3);
    let noise = gaussian(50, 1, 4);
    let y: Vec<f64> = (0..50).map(|i| 3.0 + x.get(i, 0) + 0.25 * x.get(i, 3) + noise.get(i, 0)).collect();
    let mut xi = Matrix::from_col_major(50, 1, vec![1.0; 50]).unwrap();
    for j in 0..4 {
        xi.push_col(x.col(j)).unwrap();
    }
    let oracle = normal_equations(&xi, &y);
    let coef = fit_ols_with_intercept(&x, &y).unwrap();
    for (a, b) in coef.iter().zip(&oracle[1..]) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn exact_line_and_square_systems() {
    let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![5.0]]).unwrap();
    let coef = fit_ols_with_intercept(&x, &[2.0, 4.0, 10.0]).unwrap();
    assert!((coef[0] - 2.0).abs() < 1e-12);
    let (sq, y) = centered(gaussian(4, 4, 5), vec![1.0, 2.0, 3.0, 5.0]);
    assert!(matches!(fit_ols(&design(sq, y)), Err(Error::SingularDesign(_))));
}

#[test]
fn penalty_rate_values() {
    assert!((lambda_rate(100, 100, 1.0) - 0.2146).abs() < 5e-5);
    let r = lambda_rate(400, 50, 2.0) / lambda_rate(800, 50, 2.0);
    assert!((r - 2f64.sqrt()).abs() < 1e-12);
    let need = sparsity_min_n(5, 100);
    assert!(need > 530.0 && need < 531.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solutions_are_certified_and_agree_with_proximal_gradient(
        seed in 0u64..1_000_000,
        m in 15usize..60,
        p in 2usize..30,
        frac in 0.01f64..1.2,
    ) {
        let (x, _) = centered(gaussian(m, p, seed), vec![0.0; m]);
        let noise = gaussian(m, 1, seed + 7);
        let y: Vec<f64> = (0..m).map(|i| 2.0 * x.get(i, 0) - x.get(i, p - 1) + noise.get(i, 0)).collect();
        let (x, y) = centered(x, y);
        let lambda = frac * lambda_max(&x, &y);
        let fit = fit_lasso_matrix(&x, &y, lambda, &LassoConfig::default(), None).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(kkt_violation(&x, &y, &fit.beta, lambda) <= 1e-6 * (1.0 + lambda));
        if frac >= 1.0 {
            prop_assert!(fit.beta.iter().all(|b| *b == 0.0));
        }
        let reference = fista(&x, &y, lambda);
        let (a, b) = (objective(&x, &y, &fit.beta, lambda), objective(&x, &y, &reference, lambda));
        prop_assert!(a <= b + 1e-9 * (1.0 + b.abs()), "descent {} vs reference {}", a, b);
    }
}

#[test]
fn short_wide_designs_are_certified() {
    for seed in 0..30 {
        let m = 3 + (seed as usize % 6);
        let (x, _) = centered(gaussian(m, 100, seed), vec![0.0; m]);
        let y: Vec<f64> = (0..m).map(|i| 5.0 * x.get(i, 0) + (i as f64).sin()).collect();
        let (x, y) = centered(x, y);
        let lambda = lambda_max(&x, &y) / 80.0;
        let fit = fit_lasso_matrix(&x, &y, lambda, &LassoConfig::default(), None).unwrap();
        assert!(fit.converged, "seed {seed}");
        assert!(fit.active_count < m, "seed {seed}: {} active for {m} rows", fit.active_count);
    }
}

#[test]
fn pure_noise_selects_the_empty_model() {
    let mut empty = 0;
    for seed in 0..20 {
        let (x, _) = centered(gaussian(100, 20, seed), vec![0.0; 100]);
        let (_, y) = centered(Matrix::zeros(100, 0), gaussian(100, 1, 1000 + seed).col(0).to_vec());
        let d = design(x, y);
        let sel = select_lambda_cv(&d, 5, None, &LassoConfig::default(), &mut stream(seed, 0, Purpose::CrossValidation)).unwrap();
        assert!(sel.lambda >= 0.3 * d.lambda_max(), "seed {seed}: {} vs {}", sel.lambda, d.lambda_max());
        let fit = fit_lasso(&d, sel.lambda, &LassoConfig::default()).unwrap();
        if fit.active_count == 0 {
            empty += 1;
        }
    }
    assert!(empty >= 15, "{empty} of 20 empty fits");
}

#[test]
fn strong_signal_is_recovered() {
    let mut hits = 0;
    for seed in 0..100 {
        let (x, _) = centered(gaussian(500, 20, 50 + seed), vec![0.0; 500]);
        let mut rng = stream(seed, 1, Purpose::Other);
        let y: Vec<f64> = (0..500).map(|i| 1.5 * x.get(i, 4) + rng.random_range(-1.0..1.0)).collect();
        let (x, y) = centered(x, y);
        let d = design(x, y);
        let sel = select_lambda_cv(&d, 5, None, &LassoConfig::default(), &mut stream(seed, 0, Purpose::CrossValidation)).unwrap();
        let fit = fit_lasso(&d, sel.lambda, &LassoConfig::default()).unwrap();
        if fit.beta[4] != 0.0 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits} of 100");
}

#[test]
fn single_point_grid_is_returned_verbatim() {
    let (x, y) = centered(gaussian(30, 4, 9), gaussian(30, 1, 10).col(0).to_vec());
    let d = design(x, y);
    let sel = select_lambda_cv(&d, 5, Some(&[0.123]), &LassoConfig::default(), &mut stream(1, 0, Purpose::CrossValidation)).unwrap();
    assert_eq!(sel.lambda, 0.123);
}
