//! Variance estimation and Wald intervals for the estimators.

use serde::Serialize;

use crate::data::Arm;
use crate::error::{Error, Result};
use crate::estimators::{Selected, TreatmentEffectEstimate};
use crate::linalg::{quad_form, Matrix};

/// Variance components of an estimate. The asymptotic variance of
/// `√n(τ̂ − τ)` is estimated by `varsigma_r + varsigma_hr`.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    pub pi: f64,
    pub n: usize,
    /// Within-stratum residual variance term.
    pub varsigma_r: f64,
    /// Between-stratum heterogeneity term.
    pub varsigma_hr: f64,
    /// Degrees-of-freedom adjusted within-stratum term, when computed.
    pub varsigma_r_adjusted: Option<f64>,
    pub total: f64,
    pub se_tau: f64,
}

impl VarianceEstimate {
    fn finish(mut self) -> Result<Self> {
        let r = self.varsigma_r_adjusted.unwrap_or(self.varsigma_r);
        self.total = r + self.varsigma_hr;
        self.se_tau = (self.total / self.n as f64).sqrt();
        if !self.se_tau.is_finite() {
            return Err(Error::NonFinite("variance estimate"));
        }
        Ok(self)
    }
}

/// Per stratum-arm residual moments.
#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    count: usize,
    mean: f64,
    /// Sum of squared deviations from the cell mean.
    ss: f64,
}

struct Moments {
    /// cells[k][0] treated, cells[k][1] control
    cells: Vec<[Cell; 2]>,
    proportions: Vec<f64>,
    arm_means: [f64; 2],
}

fn moments(est: &TreatmentEffectEstimate) -> Result<Moments> {
    let k_count = est.summaries.len();
    let mut cells = vec![[Cell::default(); 2]; k_count];
    let mut arm_sum = [0.0; 2];
    let mut arm_count = [0usize; 2];
    for (i, &r) in est.residuals.iter().enumerate() {
        let a = usize::from(!est.treated[i]);
        let c = &mut cells[est.strata[i]][a];
        c.count += 1;
        c.mean += r;
        arm_sum[a] += r;
        arm_count[a] += 1;
    }
    for (k, row) in cells.iter_mut().enumerate() {
        for (a, c) in row.iter_mut().enumerate() {
            if c.count == 0 {
                return Err(Error::ArmEmpty {
                    stratum: est.stratum_labels[k].clone(),
                    arm: Arm::BOTH[a].as_str(),
                });
            }
            c.mean /= c.count as f64;
        }
    }
    for (i, &r) in est.residuals.iter().enumerate() {
        let a = usize::from(!est.treated[i]);
        let c = &mut cells[est.strata[i]][a];
        c.ss += (r - c.mean) * (r - c.mean);
    }
    Ok(Moments {
        cells,
        proportions: est.summaries.iter().map(|s| s.proportion).collect(),
        arm_means: [arm_sum[0] / arm_count[0] as f64, arm_sum[1] / arm_count[1] as f64],
    })
}

fn check_pi(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("target allocation {pi} must lie in (0, 1)")))
    }
}

/// Unadjusted variance components at target allocation `pi`.
pub fn variance_components(est: &TreatmentEffectEstimate, pi: f64) -> Result<VarianceEstimate> {
    check_pi(pi)?;
    let m = moments(est)?;
    let mut within = [0.0; 2];
    let mut hetero = 0.0;
    for (k, row) in m.cells.iter().enumerate() {
        let pk = m.proportions[k];
        for a in 0..2 {
            within[a] += pk * row[a].ss / row[a].count as f64;
        }
        let d = (row[0].mean - m.arm_means[0]) - (row[1].mean - m.arm_means[1]);
        hetero += pk * d * d;
    }
    VarianceEstimate {
        pi,
        n: est.n(),
        varsigma_r: within[0] / pi + within[1] / (1.0 - pi),
        varsigma_hr: hetero,
        varsigma_r_adjusted: None,
        total: f64::NAN,
        se_tau: f64::NAN,
    }
    .finish()
}

/// Degrees-of-freedom adjusted variance. Common-mode vectors inflate each arm
/// term by `n/(n − ŝ(a) − 1)`; specific-mode vectors replace the cell
/// divisor `n_[k]a` by `n_[k]a − ŝ_[k](a) − 1`.
pub fn df_adjust(ve: &VarianceEstimate, est: &TreatmentEffectEstimate) -> Result<VarianceEstimate> {
    let adj = est.adjustment.as_ref().ok_or(Error::MissingSelection)?;
    let m = moments(est)?;
    let pi = ve.pi;
    check_pi(pi)?;
    let weight = [1.0 / pi, 1.0 / (1.0 - pi)];
    let exhausted = |k: Option<usize>, a: usize, count: usize, selected: usize| Error::DfExhausted {
        stratum: k.map_or_else(|| "(all)".to_string(), |k| est.stratum_labels[k].clone()),
        arm: Arm::BOTH[a].as_str(),
        count,
        selected,
    };
    let adjusted = match &adj.selected {
        Selected::Common { treated, control } => {
            let n = est.n();
            let s = [*treated, *control];
            let mut total = 0.0;
            for a in 0..2 {
                if n <= s[a] + 1 {
                    return Err(exhausted(None, a, n, s[a]));
                }
                let term: f64 = m
                    .cells
                    .iter()
                    .zip(&m.proportions)
                    .map(|(row, pk)| pk * row[a].ss / row[a].count as f64)
                    .sum();
                total += weight[a] * term * n as f64 / (n - s[a] - 1) as f64;
            }
            total
        }
        Selected::Specific { treated, control } => {
            let s = [treated, control];
            if treated.len() != m.cells.len() || control.len() != m.cells.len() {
                return Err(Error::Dimension("selected counts do not cover every stratum".into()));
            }
            let n = est.n();
            let mut total = 0.0;
            for (k, row) in m.cells.iter().enumerate() {
                for a in 0..2 {
                    let c = row[a].count;
                    let sel = s[a][k];
                    if adj.is_substituted(Arm::BOTH[a], k) {
                        // Residuals come from the pooled fit, so its
                        // correction applies.
                        if n <= sel + 1 {
                            return Err(exhausted(None, a, n, sel));
                        }
                        total += weight[a] * m.proportions[k] * row[a].ss / c as f64 * n as f64 / (n - sel - 1) as f64;
                        continue;
                    }
                    if c <= sel + 1 {
                        return Err(exhausted(Some(k), a, c, sel));
                    }
                    total += weight[a] * m.proportions[k] * row[a].ss / (c - sel - 1) as f64;
                }
            }
            total
        }
    };
    VarianceEstimate {
        varsigma_r_adjusted: Some(adjusted),
        ..ve.clone()
    }
    .finish()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }
}

/// Wald interval `τ̂ ± z_{1−(1−level)/2}·se`.
pub fn confidence_interval(estimate: f64, se: f64, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!("confidence level {level} must lie in (0, 1)")));
    }
    if !se.is_finite() || se < 0.0 || !estimate.is_finite() {
        return Err(Error::NonFinite("confidence interval input"));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    Ok(ConfidenceInterval {
        estimate,
        lower: estimate - z * se,
        upper: estimate + z * se,
        level,
    })
}

/// Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative error).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn check_symmetric(a: &Matrix, what: &str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension(format!("{what} is {}x{}, not square", a.rows(), a.cols())));
    }
    let scale = a.as_col_major().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..a.rows() {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-10 * (1.0 + scale) {
                return Err(Error::Validation(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Asymptotic variance reduction of the common adjustment relative to the
/// difference in means: `−β*ᵀΣβ* / (π(1−π))`, with `Σ` the within-stratum
/// covariate covariance and `β*` the limiting mixed vector.
pub fn asymptotic_delta_common(sigma: &Matrix, beta_star: &[f64], pi: f64) -> Result<f64> {
    check_pi(pi)?;
    check_symmetric(sigma, "covariance")?;
    if beta_star.len() != sigma.rows() {
        return Err(Error::Dimension(format!(
            "vector of length {} for a {}x{} covariance",
            beta_star.len(),
            sigma.rows(),
            sigma.cols()
        )));
    }
    Ok(-quad_form(sigma, beta_star) / (pi * (1.0 - pi)))
}

/// Further reduction of the specific adjustment over the common one:
/// `−(Σ_k p_k β*_kᵀΣ_kβ*_k − β*ᵀΣβ*) / (π(1−π))`.
pub fn asymptotic_delta_specific(
    sigmas: &[Matrix],
    weights: &[f64],
    betas: &[Vec<f64>],
    sigma: &Matrix,
    beta_star: &[f64],
    pi: f64,
) -> Result<f64> {
    check_pi(pi)?;
    if sigmas.len() != weights.len() || betas.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} covariances, {} weights and {} vectors",
            sigmas.len(),
            weights.len(),
            betas.len()
        )));
    }
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("stratum weights must be nonnegative and sum to 1, got {wsum}")));
    }
    let pooled = -asymptotic_delta_common(sigma, beta_star, pi)?;
    let mut within = 0.0;
    for ((s, w), b) in sigmas.iter().zip(weights).zip(betas) {
        within += w * -asymptotic_delta_common(s, b, pi)?;
    }
    Ok(-(within - pooled))
}
