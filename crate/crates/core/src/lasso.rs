//! Penalized least squares on stratum-centered designs.
//!
//! The Lasso solver is cyclic coordinate descent with exact soft-threshold
//! updates on the objective `(1/2m)‖y − Xβ‖² + λ‖β‖₁`. Columns are visited
//! in input order. After a full cycle the solver iterates over the active
//! set only, returning to full cycles until no coordinate moves by more than
//! the tolerance and the KKT conditions hold. A converged solution is then
//! re-solved exactly on its support when that certifies at least as well.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::data::{stratum_summaries, Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, dot, Matrix};

/// Which units a design covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scope {
    /// All strata, each unit centered at its own stratum-arm mean.
    Pooled,
    /// A single stratum (zero-based index).
    Stratum(usize),
}

#[derive(Debug, Clone)]
pub struct CenteredDesign {
    /// `X_i − X̄_[k]a` for the units in scope.
    pub rows: Matrix,
    /// `Y_i − Ȳ_[k]a`
    pub response: Vec<f64>,
    pub arm: Arm,
    pub scope: Scope,
    /// Stratum of every row.
    pub blocks: Vec<usize>,
    /// Dataset index of every row.
    pub units: Vec<usize>,
}

impl CenteredDesign {
    pub fn m(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.rows.cols()
    }

    /// `‖Xᵀy/m‖_∞`, the smallest penalty with an all-zero solution.
    pub fn lambda_max(&self) -> f64 {
        lambda_max(&self.rows, &self.response)
    }
}

pub fn lambda_max(x: &Matrix, y: &[f64]) -> f64 {
    let m = y.len().max(1) as f64;
    (0..x.cols()).map(|j| (dot(x.col(j), y) / m).abs()).fold(0.0, f64::max)
}

/// Builds the arm-`arm` design, centered within each stratum.
///
/// Pooled designs need every stratum to contain at least one unit of the
/// arm; a single unit centers to a zero row. Single-stratum designs need at
/// least two units.
pub fn build_centered_design(ds: &TrialDataset, arm: Arm, scope: Scope) -> Result<CenteredDesign> {
    let summaries = stratum_summaries(ds);
    let strata: Vec<usize> = match scope {
        Scope::Pooled => (0..ds.k()).collect(),
        Scope::Stratum(k) => {
            if k >= ds.k() {
                return Err(Error::Dimension(format!("stratum index {k} out of range (K = {})", ds.k())));
            }
            vec![k]
        }
    };
    let needed = match scope {
        Scope::Pooled => 1,
        Scope::Stratum(_) => 2,
    };
    for &k in &strata {
        let count = summaries[k].count(arm);
        if count == 0 {
            return Err(Error::ArmEmpty {
                stratum: ds.stratum_label(k).to_string(),
                arm: arm.as_str(),
            });
        }
        if count < needed {
            return Err(Error::DegenerateStratum {
                stratum: ds.stratum_label(k).to_string(),
                arm: arm.as_str(),
                count,
                needed,
            });
        }
    }
    let mut units = Vec::new();
    let mut blocks = Vec::new();
    for &k in &strata {
        for i in ds.units_in(k, arm) {
            units.push(i);
            blocks.push(k);
        }
    }
    let p = ds.p();
    let x = ds.covariates();
    let mut rows = Matrix::zeros(units.len(), p);
    let mut response = Vec::with_capacity(units.len());
    for (r, (&i, &k)) in units.iter().zip(&blocks).enumerate() {
        let means = summaries[k].arm(arm).expect("arm checked non-empty");
        response.push(ds.outcomes()[i] - means.outcome);
        for j in 0..p {
            rows.set(r, j, x.get(i, j) - means.covariates[j]);
        }
    }
    Ok(CenteredDesign {
        rows,
        response,
        arm,
        scope,
        blocks,
        units,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LassoConfig {
    /// Convergence threshold on the largest coordinate change in a cycle.
    pub tol: f64,
    pub max_iter: usize,
    /// KKT certificate threshold, scaled by `1 + λ`.
    pub kkt_tol: f64,
    /// Fit on unit-variance columns and map coefficients back.
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 10_000,
            kkt_tol: 1e-6,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub active_count: usize,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_violation: f64,
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Lasso objective `(1/2m)‖y − Xβ‖² + λ‖β‖₁`.
pub fn objective(x: &Matrix, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let fitted = x.mul_vec(beta);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    rss / (2.0 * y.len() as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_violation(x: &Matrix, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let m = y.len() as f64;
    let fitted = x.mul_vec(beta);
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    (0..x.cols())
        .map(|j| {
            let grad = -dot(x.col(j), &resid) / m;
            if beta[j] == 0.0 {
                (grad.abs() - lambda).max(0.0)
            } else {
                (grad + lambda * beta[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn fit_lasso(design: &CenteredDesign, lambda: f64, cfg: &LassoConfig) -> Result<LassoFit> {
    fit_lasso_matrix(&design.rows, &design.response, lambda, cfg, None)
}

/// Coordinate-descent Lasso on an arbitrary (already centered) design,
/// optionally warm-started.
pub fn fit_lasso_matrix(
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    cfg: &LassoConfig,
    warm: Option<&[f64]>,
) -> Result<LassoFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Validation(format!("penalty {lambda} must be a finite non-negative number")));
    }
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!("design has {} rows, response {}", x.rows(), y.len())));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lasso design"));
    }
    if cfg.standardize {
        let scales: Vec<f64> = (0..x.cols())
            .map(|j| {
                let c = x.col(j);
                (dot(c, c) / c.len().max(1) as f64).sqrt()
            })
            .collect();
        let mut xs = x.clone();
        for (j, &s) in scales.iter().enumerate() {
            if s > 0.0 {
                xs.col_mut(j).iter_mut().for_each(|v| *v /= s);
            }
        }
        let warm_scaled: Option<Vec<f64>> =
            warm.map(|w| w.iter().zip(&scales).map(|(b, s)| if *s > 0.0 { b * s } else { 0.0 }).collect());
        let inner = LassoConfig {
            standardize: false,
            ..*cfg
        };
        let mut fit = coordinate_descent(&xs, y, lambda, &inner, warm_scaled.as_deref());
        for (b, &s) in fit.beta.iter_mut().zip(&scales) {
            if s > 0.0 {
                *b /= s;
            }
        }
        fit.kkt_violation = kkt_violation(&xs, y, &fit.beta.iter().zip(&scales).map(|(b, s)| b * s).collect::<Vec<_>>(), lambda);
        return Ok(fit);
    }
    Ok(coordinate_descent(x, y, lambda, cfg, warm))
}

/// Above this many columns the solver works on residuals instead of the
/// `p × p` Gram matrix.
const GRAM_MAX_COLS: usize = 1000;

fn coordinate_descent(x: &Matrix, y: &[f64], lambda: f64, cfg: &LassoConfig, warm: Option<&[f64]>) -> LassoFit {
    if x.cols() > GRAM_MAX_COLS {
        return coordinate_descent_naive(x, y, lambda, cfg, warm);
    }
    let gram = Gram::new(x, y);
    let mut fit = gram.solve(lambda, cfg, warm, None);
    // Certify on the data, not on the cross-products.
    fit.kkt_violation = kkt_violation(x, y, &fit.beta, lambda);
    fit.converged = fit.converged && fit.kkt_violation <= cfg.kkt_tol * (1.0 + lambda);
    fit
}

/// Scaled cross-products `XᵀX/m`, `Xᵀy/m` and `yᵀy/m`.
struct Gram {
    p: usize,
    g: Vec<f64>,
    c: Vec<f64>,
    yy: f64,
}

impl Gram {
    fn new(x: &Matrix, y: &[f64]) -> Self {
        let p = x.cols();
        let mf = y.len().max(1) as f64;
        let mut g = vec![0.0; p * p];
        for j in 0..p {
            for k in 0..=j {
                let v = dot(x.col(j), x.col(k)) / mf;
                g[j * p + k] = v;
                g[k * p + j] = v;
            }
        }
        Self {
            p,
            g,
            c: x.tr_mul_vec(y).into_iter().map(|v| v / mf).collect(),
            yy: dot(y, y) / mf,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.g[j * self.p..(j + 1) * self.p]
    }

    /// `‖y − Xβ‖²/m` given `q = Gβ`.
    fn rss(&self, beta: &[f64], q: &[f64]) -> f64 {
        (self.yy - 2.0 * dot(&self.c, beta) + dot(beta, q)).max(0.0)
    }

    fn kkt(&self, beta: &[f64], q: &[f64], lambda: f64) -> f64 {
        (0..self.p)
            .map(|j| {
                let grad = q[j] - self.c[j];
                if beta[j] == 0.0 {
                    (grad.abs() - lambda).max(0.0)
                } else {
                    (grad + lambda * beta[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    fn product(&self, beta: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.p];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                linalg::axpy(b, self.col(j), &mut q);
            }
        }
        q
    }

    /// Exact solve on the current support. Null directions of `X_A` are
    /// walked out first (fit unchanged, `‖β‖₁` non-increasing, one
    /// coefficient reaches zero per step); the full-rank system
    /// `G_AA β_A = c_A − λ s_A` is then solved and accepted only if the
    /// signs survive and the KKT certificate holds.
    fn polish(&self, beta: &[f64], lambda: f64, kkt_limit: f64) -> Option<Vec<f64>> {
        let mut b = beta.to_vec();
        loop {
            let support: Vec<usize> = (0..self.p).filter(|&j| b[j] != 0.0).collect();
            if support.is_empty() {
                break;
            }
            let na = support.len();
            let mut ga = Matrix::zeros(na, na);
            for (ci, &j) in support.iter().enumerate() {
                for (ri, &i) in support.iter().enumerate() {
                    ga.set(ri, ci, self.g[j * self.p + i]);
                }
            }
            let rhs: Vec<f64> = support.iter().map(|&j| self.c[j] - lambda * b[j].signum()).collect();
            let ls = linalg::lstsq(&ga, &rhs).ok()?;
            if ls.rank == na {
                let flips = support.iter().zip(&ls.coef).any(|(&j, &v)| v == 0.0 || v.signum() != b[j].signum());
                if flips {
                    return None;
                }
                for (&j, &v) in support.iter().zip(&ls.coef) {
                    b[j] = v;
                }
                break;
            }
            // Express the first aliased column through the accepted ones.
            let dep = ls.aliased.iter().position(|&a| a)?;
            let kept: Vec<usize> = (0..na).filter(|&i| !ls.aliased[i]).collect();
            let w = linalg::lstsq(&ga.select_cols(&kept), ga.col(dep)).ok()?;
            let mut d = vec![0.0; na];
            d[dep] = 1.0;
            for (c, &i) in kept.iter().enumerate() {
                d[i] = -w.coef[c];
            }
            let slope: f64 = support.iter().zip(&d).map(|(&j, di)| b[j].signum() * di).sum();
            if slope > 0.0 {
                d.iter_mut().for_each(|v| *v = -*v);
            }
            let (hit, t) = support
                .iter()
                .zip(&d)
                .enumerate()
                .filter(|(_, (&j, &di))| b[j] * di < 0.0)
                .map(|(i, (&j, &di))| (i, -b[j] / di))
                .min_by(|x, y| x.1.total_cmp(&y.1))?;
            for (&j, di) in support.iter().zip(&d) {
                b[j] += t * di;
            }
            b[support[hit]] = 0.0;
        }
        let q = self.product(&b);
        (self.kkt(&b, &q, lambda) <= kkt_limit).then_some(b)
    }

    /// Exact piecewise-linear path from `λ_max` down to `lambda`
    /// (LARS with the Lasso drop rule). Returns `None` when the active
    /// system turns singular or the step budget runs out.
    fn homotopy(&self, lambda: f64, kkt_limit: f64) -> Option<Vec<f64>> {
        let p = self.p;
        let mut b = vec![0.0; p];
        let mut r = self.c.clone();
        let (first, lmax) = r
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if lambda >= lmax {
            return Some(b);
        }
        let mut lam = lmax;
        let mut active = vec![first];
        let mut sign = vec![r[first].signum()];
        let budget = 8 * p + 100;
        for _ in 0..budget {
            let na = active.len();
            let mut ga = Matrix::zeros(na, na);
            for (ci, &j) in active.iter().enumerate() {
                for (ri, &i) in active.iter().enumerate() {
                    ga.set(ri, ci, self.g[j * p + i]);
                }
            }
            let ls = linalg::lstsq(&ga, &sign).ok()?;
            if ls.rank < na {
                return None;
            }
            let v = ls.coef;
            let mut a = vec![0.0; p];
            for (&j, &vj) in active.iter().zip(&v) {
                linalg::axpy(vj, self.col(j), &mut a);
            }
            let mut step = lam - lambda;
            let mut event: Option<(bool, usize)> = None;
            for j in 0..p {
                if active.contains(&j) {
                    continue;
                }
                for (num, den) in [(lam - r[j], 1.0 - a[j]), (lam + r[j], 1.0 + a[j])] {
                    if den > 1e-12 {
                        let t = num / den;
                        if t > 1e-14 && t < step {
                            step = t;
                            event = Some((true, j));
                        }
                    }
                }
            }
            for (i, (&j, &vj)) in active.iter().zip(&v).enumerate() {
                if vj != 0.0 {
                    let t = -b[j] / vj;
                    if t > 1e-14 && t < step {
                        step = t;
                        event = Some((false, i));
                    }
                }
            }
            for (&j, &vj) in active.iter().zip(&v) {
                b[j] += step * vj;
            }
            for j in 0..p {
                r[j] -= step * a[j];
            }
            lam -= step;
            match event {
                None => {
                    let q = self.product(&b);
                    return (self.kkt(&b, &q, lambda) <= kkt_limit).then_some(b);
                }
                Some((true, j)) => {
                    active.push(j);
                    sign.push(r[j].signum());
                }
                Some((false, i)) => {
                    b[active[i]] = 0.0;
                    active.remove(i);
                    sign.remove(i);
                    if active.is_empty() {
                        return None;
                    }
                }
            }
        }
        None
    }

    /// Covariance-update coordinate descent: the gradient `Gβ − c` is
    /// maintained directly, so untouched coordinates cost O(1).
    ///
    /// With `relative_tol`, a cycle counts as converged once every
    /// coordinate's objective decrease `G_jj·Δβ_j²` falls below
    /// `relative_tol · yᵀy/m` and no KKT certificate is required; this is
    /// only used for cross-validation paths.
    fn solve(&self, lambda: f64, cfg: &LassoConfig, warm: Option<&[f64]>, relative_tol: Option<f64>) -> LassoFit {
        let p = self.p;
        let diag: Vec<f64> = (0..p).map(|j| self.g[j * p + j]).collect();
        let mut beta: Vec<f64> = match warm {
            Some(w) if w.len() == p => w.iter().zip(&diag).map(|(b, d)| if *d > 0.0 { *b } else { 0.0 }).collect(),
            _ => vec![0.0; p],
        };
        let mut q = self.product(&beta);
        let kkt_limit = match relative_tol {
            Some(_) => f64::INFINITY,
            None => cfg.kkt_tol * (1.0 + lambda),
        };
        let tol = match relative_tol {
            Some(r) => r * self.yy,
            None => cfg.tol,
        };
        let mut iterations = 0;
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        let mut full_cycle = true;
        let mut active: Vec<usize> = Vec::new();
        #[cfg(debug_assertions)]
        let mut last_obj = f64::INFINITY;

        while iterations < cfg.max_iter {
            iterations += 1;
            // Slow progress usually means a flat direction in a wide,
            // short design; try to finish exactly.
            if relative_tol.is_none() && iterations % POLISH_EVERY == 0 {
                let exact = self.polish(&beta, lambda, kkt_limit).or_else(|| {
                    (iterations == POLISH_EVERY).then(|| self.homotopy(lambda, kkt_limit)).flatten()
                });
                if let Some(b) = exact {
                    beta = b;
                    q = self.product(&beta);
                    kkt = self.kkt(&beta, &q, lambda);
                    converged = true;
                    break;
                }
            }
            let mut max_change: f64 = 0.0;
            let mut update = |j: usize, beta: &mut [f64], q: &mut [f64]| {
                let d = diag[j];
                if d == 0.0 {
                    return;
                }
                let old = beta[j];
                let rho = self.c[j] - q[j] + d * old;
                let new = soft_threshold(rho, lambda) / d;
                if new != old {
                    linalg::axpy(new - old, self.col(j), q);
                    beta[j] = new;
                    let delta = match relative_tol {
                        Some(_) => d * (new - old) * (new - old),
                        None => (new - old).abs(),
                    };
                    max_change = max_change.max(delta);
                }
            };
            if full_cycle {
                for j in 0..p {
                    update(j, &mut beta, &mut q);
                }
            } else {
                for &j in &active {
                    update(j, &mut beta, &mut q);
                }
            }
            #[cfg(debug_assertions)]
            {
                let obj = 0.5 * dot(&beta, &q) - dot(&self.c, &beta) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
                debug_assert!(
                    obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()),
                    "coordinate descent objective increased: {last_obj} -> {obj}"
                );
                last_obj = obj;
            }
            if max_change < tol {
                if full_cycle {
                    q = self.product(&beta);
                    kkt = self.kkt(&beta, &q, lambda);
                    if kkt <= kkt_limit {
                        converged = true;
                        // Finish on the support exactly when that certifies
                        // at least as well.
                        if relative_tol.is_none() {
                            if let Some(b) = self.polish(&beta, lambda, kkt) {
                                let qb = self.product(&b);
                                let kb = self.kkt(&b, &qb, lambda);
                                if kb <= kkt {
                                    (beta, kkt) = (b, kb);
                                }
                            }
                        }
                        break;
                    }
                    #[cfg(debug_assertions)]
                    {
                        last_obj = f64::INFINITY;
                    }
                } else {
                    full_cycle = true;
                }
            } else if full_cycle {
                active = (0..p).filter(|&j| beta[j] != 0.0).collect();
                full_cycle = active.is_empty();
            }
        }
        if !converged {
            q = self.product(&beta);
            kkt = self.kkt(&beta, &q, lambda);
        }
        let active_count = beta.iter().filter(|b| **b != 0.0).count();
        LassoFit {
            beta,
            lambda,
            active_count,
            iterations,
            converged,
            kkt_violation: kkt,
        }
    }
}

fn coordinate_descent_naive(x: &Matrix, y: &[f64], lambda: f64, cfg: &LassoConfig, warm: Option<&[f64]>) -> LassoFit {
    let m = y.len();
    let p = x.cols();
    let mf = m.max(1) as f64;
    let col_sq: Vec<f64> = (0..p).map(|j| dot(x.col(j), x.col(j)) / mf).collect();
    let mut beta = match warm {
        Some(w) if w.len() == p => w.iter().zip(&col_sq).map(|(b, c)| if *c > 0.0 { *b } else { 0.0 }).collect(),
        _ => vec![0.0; p],
    };
    let mut resid = y.to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            linalg::axpy(-b, x.col(j), &mut resid);
        }
    }
    let kkt_limit = cfg.kkt_tol * (1.0 + lambda);
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut full_cycle = true;
    let mut active: Vec<usize> = Vec::new();
    #[cfg(debug_assertions)]
    let mut last_obj = f64::INFINITY;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        let mut update = |j: usize, beta: &mut [f64], resid: &mut [f64]| {
            let cj = col_sq[j];
            if cj == 0.0 {
                return;
            }
            let old = beta[j];
            let rho = dot(x.col(j), resid) / mf + cj * old;
            let new = soft_threshold(rho, lambda) / cj;
            if new != old {
                linalg::axpy(old - new, x.col(j), resid);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        };
        if full_cycle {
            for j in 0..p {
                update(j, &mut beta, &mut resid);
            }
        } else {
            for &j in &active {
                update(j, &mut beta, &mut resid);
            }
        }
        #[cfg(debug_assertions)]
        {
            let obj = dot(&resid, &resid) / (2.0 * mf) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
            debug_assert!(
                obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()),
                "coordinate descent objective increased: {last_obj} -> {obj}"
            );
            last_obj = obj;
        }
        if max_change < cfg.tol {
            if full_cycle {
                kkt = kkt_violation(x, y, &beta, lambda);
                if kkt <= kkt_limit {
                    converged = true;
                    break;
                }
                // Residual drift: refresh it and keep cycling.
                resid = y.to_vec();
                for (j, &b) in beta.iter().enumerate() {
                    if b != 0.0 {
                        linalg::axpy(-b, x.col(j), &mut resid);
                    }
                }
                #[cfg(debug_assertions)]
                {
                    last_obj = f64::INFINITY;
                }
            } else {
                full_cycle = true;
            }
        } else if full_cycle {
            active = (0..p).filter(|&j| beta[j] != 0.0).collect();
            full_cycle = active.is_empty();
        }
    }
    if !converged {
        kkt = kkt_violation(x, y, &beta, lambda);
    }
    let active_count = beta.iter().filter(|b| **b != 0.0).count();
    LassoFit {
        beta,
        lambda,
        active_count,
        iterations,
        converged,
        kkt_violation: kkt,
    }
}

/// Ordinary least squares on a centered design (no intercept needed).
/// Rank deficiency is an error.
pub fn fit_ols(design: &CenteredDesign) -> Result<Vec<f64>> {
    strict_ols(&design.rows, &design.response, 0)
}

/// OLS of `y` on `[1, X]`; returns only the covariate coefficients.
pub fn fit_ols_with_intercept(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let mut xi = Matrix::from_col_major(x.rows(), 1, vec![1.0; x.rows()])?;
    for j in 0..x.cols() {
        xi.push_col(x.col(j))?;
    }
    let coef = strict_ols(&xi, y, 1)?;
    Ok(coef[1..].to_vec())
}

fn strict_ols(x: &Matrix, y: &[f64], intercept: usize) -> Result<Vec<f64>> {
    let m = x.rows();
    let p = x.cols();
    if m <= p {
        return Err(Error::SingularDesign(format!(
            "{m} observations for {} coefficients",
            p
        )));
    }
    let ls = linalg::lstsq(x, y)?;
    if ls.rank < p {
        let names: Vec<String> = ls
            .aliased
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(j, _)| (j - intercept.min(j)).to_string())
            .collect();
        return Err(Error::SingularDesign(format!(
            "rank {} < {p}; aliased covariate column(s) {}",
            ls.rank,
            names.join(", ")
        )));
    }
    Ok(ls.coef)
}

/// OLS on a centered design that drops aliased columns (in input order)
/// instead of failing; returns the coefficients and the number of
/// covariates actually estimated.
pub fn fit_ols_dropping_aliased(design: &CenteredDesign) -> Result<(Vec<f64>, usize)> {
    let ls = linalg::lstsq(&design.rows, &design.response)?;
    Ok((ls.coef, ls.rank))
}

/// Penalty rate `c·sqrt(log p / n)`.
pub fn lambda_rate(n: usize, p: usize, c: f64) -> f64 {
    debug_assert!(n >= 2 && p >= 2, "lambda_rate needs n >= 2 and p >= 2");
    let n = n.max(2) as f64;
    let p = p.max(2) as f64;
    c * (p.ln() / n).sqrt()
}

/// Sample size beyond which `s²(log p)²/n < 1`, the sparsity condition
/// that goes with the penalty rate.
pub fn sparsity_min_n(s: usize, p: usize) -> f64 {
    let l = (p.max(2) as f64).ln();
    (s * s) as f64 * l * l
}

/// Default cross-validation grid: `points` log-spaced values from `λ_max`
/// down to `λ_max / ratio`.
pub fn default_grid(lambda_max: f64, points: usize, ratio: f64) -> Vec<f64> {
    if points <= 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(0.0)];
    }
    let lo = (lambda_max / ratio).ln();
    let hi = lambda_max.ln();
    (0..points)
        .map(|i| (hi + (lo - hi) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CvSelection {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub se_error: Vec<f64>,
    pub folds: usize,
    /// Set when cross-validation was impossible and the rate was used.
    pub fallback: bool,
}

/// Stratum-balanced fold labels: rows of each stratum are shuffled and dealt
/// round-robin, continuing the rotation across strata.
pub fn stratified_folds<R: Rng + ?Sized>(blocks: &[usize], folds: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    for &b in blocks {
        if !seen.contains(&b) {
            seen.push(b);
        }
    }
    let mut labels = vec![0; blocks.len()];
    let mut next = 0;
    for b in seen {
        order.clear();
        order.extend((0..blocks.len()).filter(|&i| blocks[i] == b));
        order.shuffle(rng);
        for &i in &order {
            labels[i] = next % folds;
            next += 1;
        }
    }
    labels
}

/// Training fraction of variance explained at which a path stops early.
const PATH_MAX_R2: f64 = 0.999;
/// Cycles between exact-solve attempts in a slow descent.
const POLISH_EVERY: usize = 200;
/// Stopping rule of cross-validation path fits, relative to `yᵀy/m`.
const PATH_REL_TOL: f64 = 1e-9;
/// Relative gain in explained variance below which a path stops early.
const PATH_MIN_GAIN: f64 = 1e-5;

/// Warm-started fits along a penalty path sharing one set of
/// cross-products.
struct PathSolver<'a> {
    gram: Option<Gram>,
    x: &'a Matrix,
    y: &'a [f64],
    cfg: &'a LassoConfig,
}

impl<'a> PathSolver<'a> {
    fn new(x: &'a Matrix, y: &'a [f64], cfg: &'a LassoConfig) -> Self {
        let gram = (!cfg.standardize && x.cols() <= GRAM_MAX_COLS).then(|| Gram::new(x, y));
        Self { gram, x, y, cfg }
    }

    /// Coefficients and training fraction of variance explained.
    fn fit(&self, lambda: f64, warm: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        match &self.gram {
            Some(gram) => {
                let fit = gram.solve(lambda, self.cfg, warm, Some(PATH_REL_TOL));
                let q = gram.product(&fit.beta);
                let r2 = if gram.yy > 0.0 { 1.0 - gram.rss(&fit.beta, &q) / gram.yy } else { 0.0 };
                Ok((fit.beta, r2))
            }
            None => {
                let fit = fit_lasso_matrix(self.x, self.y, lambda, self.cfg, warm)?;
                let yy = dot(self.y, self.y);
                let fitted = self.x.mul_vec(&fit.beta);
                let rss: f64 = self.y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
                Ok((fit.beta, if yy > 0.0 { 1.0 - rss / yy } else { 0.0 }))
            }
        }
    }
}

/// K-fold cross-validation with the one-standard-error rule: returns the
/// largest penalty whose mean held-out error is within one standard error
/// of the minimum.
pub fn select_lambda_cv<R: Rng + ?Sized>(
    design: &CenteredDesign,
    folds: usize,
    grid: Option<&[f64]>,
    cfg: &LassoConfig,
    rng: &mut R,
) -> Result<CvSelection> {
    let m = design.m();
    let p = design.p();
    let lmax = design.lambda_max();
    let mut grid: Vec<f64> = match grid {
        Some(g) if !g.is_empty() => g.to_vec(),
        Some(_) => return Err(Error::Validation("empty penalty grid".into())),
        None => default_grid(lmax, 50, 1000.0),
    };
    grid.sort_by(|a, b| b.total_cmp(a));
    if grid.len() == 1 {
        return Ok(CvSelection {
            lambda: grid[0],
            grid: grid.clone(),
            mean_error: vec![f64::NAN],
            se_error: vec![f64::NAN],
            folds: 0,
            fallback: false,
        });
    }
    if folds < 2 {
        return Err(Error::Validation("cross-validation needs at least two folds".into()));
    }
    let folds = folds.min(m);
    if folds < 2 {
        return Ok(CvSelection {
            lambda: lambda_rate(m.max(2), p.max(2), 1.0),
            grid,
            mean_error: vec![],
            se_error: vec![],
            folds: 0,
            fallback: true,
        });
    }
    let labels = stratified_folds(&design.blocks, folds, rng);
    let g = grid.len();
    let mut errors = vec![vec![0.0; g]; folds];
    for (f, fold_err) in errors.iter_mut().enumerate() {
        let train: Vec<usize> = (0..m).filter(|&i| labels[i] != f).collect();
        let test: Vec<usize> = (0..m).filter(|&i| labels[i] == f).collect();
        let xt = design.rows.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| design.response[i]).collect();
        let xv = design.rows.select_rows(&test);
        let yv: Vec<f64> = test.iter().map(|&i| design.response[i]).collect();
        let path = PathSolver::new(&xt, &yt, cfg);
        let mut warm: Option<Vec<f64>> = None;
        let mut prev_r2 = 0.0;
        let mut gi = 0;
        while gi < g {
            let (beta, r2) = path.fit(grid[gi], warm.as_deref())?;
            let pred = xv.mul_vec(&beta);
            fold_err[gi] = yv.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / yv.len() as f64;
            warm = Some(beta);
            gi += 1;
            // Once the training fit is saturated, smaller penalties no
            // longer change the predictions appreciably.
            if r2 >= PATH_MAX_R2 || (r2 > 0.0 && r2 - prev_r2 < PATH_MIN_GAIN * r2) {
                let last = fold_err[gi - 1];
                fold_err[gi..].iter_mut().for_each(|e| *e = last);
                break;
            }
            prev_r2 = r2;
        }
    }
    let ff = folds as f64;
    let mean_error: Vec<f64> = (0..g).map(|gi| errors.iter().map(|e| e[gi]).sum::<f64>() / ff).collect();
    let se_error: Vec<f64> = (0..g)
        .map(|gi| {
            let mu = mean_error[gi];
            let var = errors.iter().map(|e| (e[gi] - mu).powi(2)).sum::<f64>() / (ff - 1.0);
            (var / ff).sqrt()
        })
        .collect();
    let best = (0..g).fold(0, |b, i| if mean_error[i] < mean_error[b] { i } else { b });
    let threshold = mean_error[best] + se_error[best];
    let chosen = (0..g).find(|&i| mean_error[i] <= threshold).unwrap_or(best);
    Ok(CvSelection {
        lambda: grid[chosen],
        grid,
        mean_error,
        se_error,
        folds,
        fallback: false,
    })
}
