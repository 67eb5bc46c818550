//! Treatment-effect estimators: the stratified difference in means and the
//! family of regression-adjusted estimators built on
//!
//! ```text
//! Σ_k p_n[k] [ {Ȳ_[k]1 − (X̄_[k]1 − X̄_[k])ᵀβ̂_[k](1)} − {Ȳ_[k]0 − (X̄_[k]0 − X̄_[k])ᵀβ̂_[k](0)} ]
//! ```
//!
//! with OLS or Lasso adjustment vectors that are either shared across strata
//! ("common") or fitted per stratum ("specific").

use serde::Serialize;

use crate::data::{stratum_summaries, Arm, StratumSummary, TrialDataset};
use crate::error::{Error, Result};
use crate::lasso::{
    build_centered_design, fit_lasso, fit_ols, fit_ols_dropping_aliased, fit_ols_with_intercept, lambda_rate,
    select_lambda_cv, CenteredDesign, LassoConfig, Scope,
};
use crate::linalg::{dot, Matrix};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Stratified difference in means.
    DiffInMeans,
    OlsCommon,
    OlsSpecific,
    LassoCommon,
    LassoSpecific,
    /// User-supplied adjustment vectors.
    General,
}

impl EstimatorKind {
    /// The five estimators compared in simulation tables, in table order.
    pub const TABLE: [EstimatorKind; 5] = [
        EstimatorKind::DiffInMeans,
        EstimatorKind::OlsCommon,
        EstimatorKind::OlsSpecific,
        EstimatorKind::LassoCommon,
        EstimatorKind::LassoSpecific,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::DiffInMeans => "tau",
            EstimatorKind::OlsCommon => "tau_ols",
            EstimatorKind::OlsSpecific => "tilde_tau_ols",
            EstimatorKind::LassoCommon => "tau_lasso",
            EstimatorKind::LassoSpecific => "tilde_tau_lasso",
            EstimatorKind::General => "tau_gen",
        }
    }

    pub fn parse(s: &str) -> Option<EstimatorKind> {
        let s = s.trim().to_ascii_lowercase();
        Some(match s.as_str() {
            "tau" | "dim" | "diff" | "tau_hat" => EstimatorKind::DiffInMeans,
            "tau_ols" | "ols" | "ols_common" => EstimatorKind::OlsCommon,
            "tilde_tau_ols" | "ols_specific" => EstimatorKind::OlsSpecific,
            "tau_lasso" | "lasso" | "lasso_common" => EstimatorKind::LassoCommon,
            "tilde_tau_lasso" | "lasso_specific" => EstimatorKind::LassoSpecific,
            _ => return None,
        })
    }

    /// Whether the estimator uses the high-dimensional covariate set.
    pub fn is_lasso(self) -> bool {
        matches!(self, EstimatorKind::LassoCommon | EstimatorKind::LassoSpecific)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Coefficients {
    Common { treated: Vec<f64>, control: Vec<f64> },
    Specific { treated: Vec<Vec<f64>>, control: Vec<Vec<f64>> },
}

/// Number of covariates with nonzero (or estimated) coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Selected {
    Common { treated: usize, control: usize },
    Specific { treated: Vec<usize>, control: Vec<usize> },
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostic {
    pub arm: Arm,
    pub scope: Scope,
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    /// The stratum-arm could not be fitted and the degenerate-stratum policy
    /// supplied its coefficients.
    pub substituted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjustedVectors {
    pub coefficients: Coefficients,
    pub selected: Selected,
    pub diagnostics: Vec<FitDiagnostic>,
}

impl AdjustedVectors {
    pub fn common(treated: Vec<f64>, control: Vec<f64>) -> Self {
        let selected = Selected::Common {
            treated: nonzero(&treated),
            control: nonzero(&control),
        };
        Self {
            coefficients: Coefficients::Common { treated, control },
            selected,
            diagnostics: vec![],
        }
    }

    pub fn specific(treated: Vec<Vec<f64>>, control: Vec<Vec<f64>>) -> Self {
        let selected = Selected::Specific {
            treated: treated.iter().map(|b| nonzero(b)).collect(),
            control: control.iter().map(|b| nonzero(b)).collect(),
        };
        Self {
            coefficients: Coefficients::Specific { treated, control },
            selected,
            diagnostics: vec![],
        }
    }

    pub fn zeros_common(p: usize) -> Self {
        Self::common(vec![0.0; p], vec![0.0; p])
    }

    pub fn beta(&self, arm: Arm, k: usize) -> &[f64] {
        match (&self.coefficients, arm) {
            (Coefficients::Common { treated, .. }, Arm::Treated) => treated,
            (Coefficients::Common { control, .. }, Arm::Control) => control,
            (Coefficients::Specific { treated, .. }, Arm::Treated) => &treated[k],
            (Coefficients::Specific { control, .. }, Arm::Control) => &control[k],
        }
    }

    pub fn is_specific(&self) -> bool {
        matches!(self.coefficients, Coefficients::Specific { .. })
    }

    /// True when the stratum-`k` vector of `arm` was borrowed from the
    /// common fit under [`DegeneratePolicy::CommonFallback`].
    pub fn is_substituted(&self, arm: Arm, k: usize) -> bool {
        self.diagnostics
            .iter()
            .any(|d| d.substituted && d.arm == arm && d.scope == Scope::Stratum(k))
    }

    fn validate(&self, p: usize, k: usize) -> Result<()> {
        let check = |v: &[f64], what: &str| {
            if v.len() != p {
                Err(Error::Dimension(format!("{what} has length {}, expected p = {p}", v.len())))
            } else if v.iter().any(|b| !b.is_finite()) {
                Err(Error::NonFinite("adjustment vector"))
            } else {
                Ok(())
            }
        };
        match &self.coefficients {
            Coefficients::Common { treated, control } => {
                check(treated, "treated vector")?;
                check(control, "control vector")
            }
            Coefficients::Specific { treated, control } => {
                if treated.len() != k || control.len() != k {
                    return Err(Error::Dimension(format!(
                        "specific vectors cover {}/{} strata, expected K = {k}",
                        treated.len(),
                        control.len()
                    )));
                }
                treated.iter().chain(control).try_for_each(|v| check(v, "stratum vector"))
            }
        }
    }
}

fn nonzero(v: &[f64]) -> usize {
    v.iter().filter(|b| **b != 0.0).count()
}

#[derive(Debug, Clone, Serialize)]
pub struct TreatmentEffectEstimate {
    pub tau_hat: f64,
    pub kind: EstimatorKind,
    /// Transformed outcome `r̂_i` of every unit at its observed arm.
    pub residuals: Vec<f64>,
    pub treated: Vec<bool>,
    pub strata: Vec<usize>,
    pub stratum_labels: Vec<String>,
    pub summaries: Vec<StratumSummary>,
    pub adjustment: Option<AdjustedVectors>,
}

impl TreatmentEffectEstimate {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    /// Residuals of the units observed in `arm`, paired with their index.
    pub fn residuals_in(&self, arm: Arm) -> Vec<(usize, f64)> {
        self.residuals
            .iter()
            .enumerate()
            .filter(|(i, _)| self.treated[*i] == arm.is_treated())
            .map(|(i, &r)| (i, r))
            .collect()
    }

    /// Realized overall treated fraction `n1/n`.
    pub fn realized_pi(&self) -> f64 {
        self.treated.iter().filter(|&&t| t).count() as f64 / self.n() as f64
    }
}

fn check_arms(ds: &TrialDataset, summaries: &[StratumSummary]) -> Result<()> {
    for s in summaries {
        if let Some(arm) = s.empty_arm() {
            return Err(Error::ArmEmpty {
                stratum: ds.stratum_label(s.k).to_string(),
                arm: arm.as_str(),
            });
        }
    }
    Ok(())
}

/// Stratified difference in means `Σ_k p_n[k](Ȳ_[k]1 − Ȳ_[k]0)`.
pub fn tau_hat(ds: &TrialDataset) -> Result<TreatmentEffectEstimate> {
    let summaries = stratum_summaries(ds);
    check_arms(ds, &summaries)?;
    let mut tau = 0.0;
    for s in &summaries {
        let y1 = s.treated.as_ref().map(|m| m.outcome).unwrap_or(f64::NAN);
        let y0 = s.control.as_ref().map(|m| m.outcome).unwrap_or(f64::NAN);
        tau += s.proportion * (y1 - y0);
    }
    Ok(TreatmentEffectEstimate {
        tau_hat: tau,
        kind: EstimatorKind::DiffInMeans,
        residuals: ds.outcomes().to_vec(),
        treated: ds.treated().to_vec(),
        strata: ds.strata().to_vec(),
        stratum_labels: ds.stratum_labels().to_vec(),
        summaries,
        adjustment: None,
    })
}

/// General regression-adjusted estimator with given adjustment vectors.
pub fn tau_gen(ds: &TrialDataset, adj: AdjustedVectors) -> Result<TreatmentEffectEstimate> {
    tau_gen_as(ds, adj, EstimatorKind::General)
}

fn tau_gen_as(ds: &TrialDataset, adj: AdjustedVectors, kind: EstimatorKind) -> Result<TreatmentEffectEstimate> {
    adj.validate(ds.p(), ds.k())?;
    let summaries = stratum_summaries(ds);
    check_arms(ds, &summaries)?;
    let p = ds.p();
    let mut tau = 0.0;
    let mut mixed: Vec<Vec<f64>> = Vec::with_capacity(ds.k());
    for s in &summaries {
        let (m1, m0) = match (&s.treated, &s.control) {
            (Some(a), Some(b)) => (a, b),
            _ => unreachable!("arms checked"),
        };
        let b1 = adj.beta(Arm::Treated, s.k);
        let b0 = adj.beta(Arm::Control, s.k);
        let d1: Vec<f64> = (0..p).map(|j| m1.covariates[j] - s.covariate_means[j]).collect();
        let d0: Vec<f64> = (0..p).map(|j| m0.covariates[j] - s.covariate_means[j]).collect();
        let adj1 = m1.outcome - dot(&d1, b1);
        let adj0 = m0.outcome - dot(&d0, b0);
        tau += s.proportion * (adj1 - adj0);
        let pik = s.pi;
        mixed.push((0..p).map(|j| (1.0 - pik) * b1[j] + pik * b0[j]).collect());
    }
    let x = ds.covariates();
    let residuals = (0..ds.n())
        .map(|i| {
            let beta = &mixed[ds.strata()[i]];
            let fit: f64 = (0..p).map(|j| x.get(i, j) * beta[j]).sum();
            ds.outcomes()[i] - fit
        })
        .collect();
    if !tau.is_finite() {
        return Err(Error::NonFinite("treatment effect estimate"));
    }
    Ok(TreatmentEffectEstimate {
        tau_hat: tau,
        kind,
        residuals,
        treated: ds.treated().to_vec(),
        strata: ds.strata().to_vec(),
        stratum_labels: ds.stratum_labels().to_vec(),
        summaries,
        adjustment: Some(adj),
    })
}

/// How the Lasso penalty is chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaChoice {
    /// The same penalty for every fit.
    Fixed { lambda: f64 },
    /// Separate penalties per arm (shared across strata in specific mode).
    PerArm { treated: f64, control: f64 },
    /// Per stratum and arm (specific mode only), indexed by stratum.
    PerStratum { treated: Vec<f64>, control: Vec<f64> },
    /// K-fold cross-validation with the one-standard-error rule, run
    /// independently for each fit.
    Cv { folds: usize },
    /// `c·sqrt(log p / m)` with `m` the rows of the fitted design.
    Rate { c: f64 },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Cv { folds: 5 }
    }
}

/// What to do with a stratum-arm too small for its own fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Return a degenerate-stratum error.
    #[default]
    Fail,
    /// Use the stratum-common vector of the same arm.
    CommonFallback,
}

/// Intercept handling for the stratum-common OLS vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OlsIntercept {
    /// One global intercept per arm.
    #[default]
    Global,
    /// Stratum-centered regression (per-stratum intercepts).
    StratumCentered,
}

/// Treatment of collinear columns in stratum-specific OLS fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AliasPolicy {
    /// Columns that are linear combinations of earlier ones within the
    /// stratum-arm get a zero coefficient and do not count as selected.
    #[default]
    Drop,
    /// Any rank deficiency is an error.
    Strict,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct EstimatorConfig {
    pub lambda: LambdaChoice,
    pub lasso: LassoConfig,
    /// Seed for cross-validation fold shuffles.
    pub seed: u64,
    /// Stream index (e.g. replication number) for cross-validation shuffles.
    pub stream: u64,
    pub degenerate: DegeneratePolicy,
    pub ols_intercept: OlsIntercept,
    pub alias: AliasPolicy,
}

/// Runs the named estimator. `General` is not available here.
pub fn estimate(ds: &TrialDataset, kind: EstimatorKind, cfg: &EstimatorConfig) -> Result<TreatmentEffectEstimate> {
    match kind {
        EstimatorKind::DiffInMeans => tau_hat(ds),
        EstimatorKind::OlsCommon => tau_ols_common(ds, cfg),
        EstimatorKind::OlsSpecific => tau_ols_specific(ds, cfg),
        EstimatorKind::LassoCommon => tau_lasso_common(ds, cfg),
        EstimatorKind::LassoSpecific => tau_lasso_specific(ds, cfg),
        EstimatorKind::General => Err(Error::Contract("the general estimator needs explicit adjustment vectors".into())),
    }
}

fn arm_matrix(ds: &TrialDataset, arm: Arm) -> (Matrix, Vec<f64>) {
    let idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.treated()[i] == arm.is_treated()).collect();
    let x = ds.covariates().select_rows(&idx);
    let y = idx.iter().map(|&i| ds.outcomes()[i]).collect();
    (x, y)
}

fn common_ols_vector(ds: &TrialDataset, arm: Arm, cfg: &EstimatorConfig) -> Result<Vec<f64>> {
    let hint = |e: Error| match e {
        Error::SingularDesign(msg) => Error::SingularDesign(format!(
            "{msg} in the {} arm; consider a Lasso-adjusted estimator",
            arm.as_str()
        )),
        other => other,
    };
    match cfg.ols_intercept {
        OlsIntercept::Global => {
            let (x, y) = arm_matrix(ds, arm);
            fit_ols_with_intercept(&x, &y).map_err(hint)
        }
        OlsIntercept::StratumCentered => {
            let d = build_centered_design(ds, arm, Scope::Pooled)?;
            fit_ols(&d).map_err(hint)
        }
    }
}

/// Stratum-common OLS adjustment.
pub fn tau_ols_common(ds: &TrialDataset, cfg: &EstimatorConfig) -> Result<TreatmentEffectEstimate> {
    let summaries = stratum_summaries(ds);
    check_arms(ds, &summaries)?;
    let p = ds.p();
    let b1 = common_ols_vector(ds, Arm::Treated, cfg)?;
    let b0 = common_ols_vector(ds, Arm::Control, cfg)?;
    let mut adj = AdjustedVectors::common(b1, b0);
    adj.selected = Selected::Common { treated: p, control: p };
    tau_gen_as(ds, adj, EstimatorKind::OlsCommon)
}

/// Stratum-specific OLS adjustment.
pub fn tau_ols_specific(ds: &TrialDataset, cfg: &EstimatorConfig) -> Result<TreatmentEffectEstimate> {
    let summaries = stratum_summaries(ds);
    check_arms(ds, &summaries)?;
    let k_count = ds.k();
    let mut betas: [Vec<Vec<f64>>; 2] = [Vec::with_capacity(k_count), Vec::with_capacity(k_count)];
    let mut selected: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut diagnostics = Vec::new();
    let mut fallback: [Option<Vec<f64>>; 2] = [None, None];
    for k in 0..k_count {
        for (a, arm) in Arm::BOTH.into_iter().enumerate() {
            let fitted = build_centered_design(ds, arm, Scope::Stratum(k)).and_then(|d| {
                let count = d.m();
                let too_small = |needed: usize| Error::DegenerateStratum {
                    stratum: ds.stratum_label(k).to_string(),
                    arm: arm.as_str(),
                    count,
                    needed,
                };
                match cfg.alias {
                    AliasPolicy::Drop => {
                        let (b, rank) = fit_ols_dropping_aliased(&d)?;
                        // An interpolating fit leaves no residual degrees of freedom.
                        if count <= rank + 1 {
                            return Err(too_small(rank + 2));
                        }
                        Ok((b, rank))
                    }
                    AliasPolicy::Strict => {
                        if count <= d.p() + 1 {
                            return Err(too_small(d.p() + 2));
                        }
                        fit_ols(&d).map(|b| {
                            let p = b.len();
                            (b, p)
                        })
                    }
                }
            });
            let (beta, s, substituted) = match fitted {
                Ok((b, rank)) => (b, rank, false),
                Err(e @ Error::DegenerateStratum { .. }) => match cfg.degenerate {
                    DegeneratePolicy::Fail => return Err(e),
                    DegeneratePolicy::CommonFallback => {
                        if fallback[a].is_none() {
                            fallback[a] = Some(common_ols_vector(ds, arm, cfg)?);
                        }
                        let b = fallback[a].clone().expect("set above");
                        let s = ds.p();
                        (b, s, true)
                    }
                },
                Err(e) => return Err(e),
            };
            diagnostics.push(FitDiagnostic {
                arm,
                scope: Scope::Stratum(k),
                lambda: None,
                iterations: 1,
                converged: true,
                kkt_violation: 0.0,
                substituted,
            });
            betas[a].push(beta);
            selected[a].push(s);
        }
    }
    let [bt, bc] = betas;
    let [st, sc] = selected;
    let mut adj = AdjustedVectors::specific(bt, bc);
    adj.selected = Selected::Specific { treated: st, control: sc };
    adj.diagnostics = diagnostics;
    tau_gen_as(ds, adj, EstimatorKind::OlsSpecific)
}

fn lambda_for(
    design: &CenteredDesign,
    cfg: &EstimatorConfig,
    arm: Arm,
    stratum_key: u64,
) -> Result<f64> {
    Ok(match &cfg.lambda {
        LambdaChoice::Fixed { lambda } => *lambda,
        LambdaChoice::PerArm { treated, control } => match arm {
            Arm::Treated => *treated,
            Arm::Control => *control,
        },
        LambdaChoice::PerStratum { treated, control } => {
            let k = match design.scope {
                Scope::Stratum(k) => k,
                Scope::Pooled => {
                    return Err(Error::Contract("per-stratum penalties need stratum-specific fits".into()))
                }
            };
            let v = match arm {
                Arm::Treated => treated,
                Arm::Control => control,
            };
            *v.get(k)
                .ok_or_else(|| Error::Dimension(format!("no penalty supplied for stratum {k}")))?
        }
        LambdaChoice::Rate { c } => lambda_rate(design.m().max(2), design.p().max(2), *c),
        LambdaChoice::Cv { folds } => {
            let key = stratum_key * 2 + u64::from(arm.is_treated());
            let mut rng = substream(cfg.seed, cfg.stream, Purpose::CrossValidation, key);
            select_lambda_cv(design, *folds, None, &cfg.lasso, &mut rng)?.lambda
        }
    })
}

fn lasso_vector(design: &CenteredDesign, cfg: &EstimatorConfig, stratum_key: u64) -> Result<(Vec<f64>, FitDiagnostic)> {
    let lambda = lambda_for(design, cfg, design.arm, stratum_key)?;
    let fit = fit_lasso(design, lambda, &cfg.lasso)?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            kkt_violation: fit.kkt_violation,
        });
    }
    let diag = FitDiagnostic {
        arm: design.arm,
        scope: design.scope,
        lambda: Some(lambda),
        iterations: fit.iterations,
        converged: fit.converged,
        kkt_violation: fit.kkt_violation,
        substituted: false,
    };
    Ok((fit.beta, diag))
}

fn common_lasso_vector(ds: &TrialDataset, arm: Arm, cfg: &EstimatorConfig) -> Result<(Vec<f64>, FitDiagnostic)> {
    let d = build_centered_design(ds, arm, Scope::Pooled)?;
    lasso_vector(&d, cfg, 0)
}

/// Stratum-common Lasso adjustment.
pub fn tau_lasso_common(ds: &TrialDataset, cfg: &EstimatorConfig) -> Result<TreatmentEffectEstimate> {
    let summaries = stratum_summaries(ds);
    check_arms(ds, &summaries)?;
    if matches!(cfg.lambda, LambdaChoice::PerStratum { .. }) {
        return Err(Error::Contract("per-stratum penalties need the stratum-specific estimator".into()));
    }
    let (b1, d1) = common_lasso_vector(ds, Arm::Treated, cfg)?;
    let (b0, d0) = common_lasso_vector(ds, Arm::Control, cfg)?;
    let mut adj = AdjustedVectors::common(b1, b0);
    adj.diagnostics = vec![d1, d0];
    tau_gen_as(ds, adj, EstimatorKind::LassoCommon)
}

/// Stratum-specific Lasso adjustment.
pub fn tau_lasso_specific(ds: &TrialDataset, cfg: &EstimatorConfig) -> Result<TreatmentEffectEstimate> {
    let summaries = stratum_summaries(ds);
    check_arms(ds, &summaries)?;
    let k_count = ds.k();
    let mut betas: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut diagnostics = Vec::new();
    let mut fallback: [Option<(Vec<f64>, FitDiagnostic)>; 2] = [None, None];
    for k in 0..k_count {
        for (a, arm) in Arm::BOTH.into_iter().enumerate() {
            let fitted = build_centered_design(ds, arm, Scope::Stratum(k)).and_then(|d| {
                let (beta, diag) = lasso_vector(&d, cfg, k as u64 + 1)?;
                let s = nonzero(&beta);
                // Under the fallback policy an interpolating fit is as
                // unusable as a singleton arm.
                if cfg.degenerate == DegeneratePolicy::CommonFallback && d.m() <= s + 1 {
                    return Err(Error::DegenerateStratum {
                        stratum: ds.stratum_label(k).to_string(),
                        arm: arm.as_str(),
                        count: d.m(),
                        needed: s + 2,
                    });
                }
                Ok((beta, diag))
            });
            let (beta, diag) = match fitted {
                Ok(v) => v,
                Err(e @ Error::DegenerateStratum { .. }) => match cfg.degenerate {
                    DegeneratePolicy::Fail => return Err(e),
                    DegeneratePolicy::CommonFallback => {
                        if fallback[a].is_none() {
                            fallback[a] = Some(common_lasso_vector(ds, arm, cfg)?);
                        }
                        let (b, mut d) = fallback[a].clone().expect("set above");
                        d.scope = Scope::Stratum(k);
                        d.substituted = true;
                        (b, d)
                    }
                },
                Err(e) => return Err(e),
            };
            betas[a].push(beta);
            diagnostics.push(diag);
        }
    }
    let [bt, bc] = betas;
    let mut adj = AdjustedVectors::specific(bt, bc);
    adj.diagnostics = diagnostics;
    tau_gen_as(ds, adj, EstimatorKind::LassoSpecific)
}
