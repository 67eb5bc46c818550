//! Data-generating models, the Monte Carlo replication runner and report
//! rendering.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Arm, PotentialOutcomes, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig, EstimatorKind, TreatmentEffectEstimate};
use crate::linalg::Matrix;
use crate::randomization::{assign_all_with, RandomizationScheme, Unit, Variant};
use crate::rng::{stream, substream, Purpose, StreamRng};
use crate::variance::{confidence_interval, df_adjust, variance_components};

/// Covariate law, outcome surfaces and stratification of a simulation model.
///
/// `draw` must consume randomness only from the supplied stream so that
/// replications stay reproducible.
pub trait ModelLaw: Send + Sync + fmt::Debug {
    fn base_names(&self) -> Vec<String>;
    fn draw(&self, rng: &mut StreamRng) -> Vec<f64>;
    /// Mean outcome surface `g_a(x)` (without the intercept `μ_a`).
    fn g(&self, arm: Arm, x: &[f64]) -> f64;
    /// Noise scale `σ_a(x)`.
    fn sigma(&self, arm: Arm, x: &[f64]) -> f64;
    /// Stratum code and label.
    fn stratum(&self, x: &[f64]) -> (usize, String);
    /// Levels of the minimization factors.
    fn margins(&self, x: &[f64]) -> Vec<usize>;
    /// Number of minimization factors.
    fn margin_count(&self) -> usize;
    /// Base columns that are functions of the stratum alone.
    fn strata_columns(&self) -> Vec<usize>;
    /// Lag-one correlation of the extra Gaussian covariates (Toeplitz
    /// covariance `ρ^|i−j|`).
    fn extra_correlation(&self) -> f64 {
        0.0
    }
    /// `E{g_1(X) − g_0(X)}` when known in closed form.
    fn exact_effect(&self) -> Option<f64> {
        None
    }
    /// One oracle draw with expectation `E{g_1(X) − g_0(X)}`. Laws may
    /// average out discrete components exactly to cut the variance.
    fn effect_draw(&self, rng: &mut StreamRng) -> f64 {
        let x = self.draw(rng);
        self.g(Arm::Treated, &x) - self.g(Arm::Control, &x)
    }
}

fn unif(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Debug)]
struct Model1;

impl ModelLaw for Model1 {
    fn base_names(&self) -> Vec<String> {
        vec!["x1".into(), "x2".into()]
    }

    fn draw(&self, rng: &mut StreamRng) -> Vec<f64> {
        let x1 = if rng.random::<f64>() < 0.4 { 1.0 } else { 2.0 };
        let x2 = unif(rng, -2.0, 2.0);
        vec![x1, x2]
    }

    fn g(&self, _: Arm, x: &[f64]) -> f64 {
        10.0 * x[0] + 20.0 * x[0] * x[1]
    }

    fn sigma(&self, arm: Arm, _: &[f64]) -> f64 {
        match arm {
            Arm::Treated => 5.0,
            Arm::Control => 3.0,
        }
    }

    fn stratum(&self, x: &[f64]) -> (usize, String) {
        let l = x[0] as usize;
        (l - 1, format!("x1={l}"))
    }

    fn margins(&self, x: &[f64]) -> Vec<usize> {
        vec![x[0] as usize - 1]
    }

    fn margin_count(&self) -> usize {
        1
    }

    fn strata_columns(&self) -> Vec<usize> {
        vec![0]
    }

    fn exact_effect(&self) -> Option<f64> {
        Some(0.0)
    }
}

#[derive(Debug)]
struct Model2 {
    beta: Beta<f64>,
}

impl Model2 {
    fn new() -> Self {
        Self {
            beta: Beta::new(3.0, 4.0).expect("valid shape"),
        }
    }

    fn x2s(x2: f64) -> f64 {
        if x2 > 1.0 {
            2.0
        } else {
            1.0
        }
    }

    fn x3s(x3: f64) -> f64 {
        if x3 > 0.0 {
            2.0
        } else {
            1.0
        }
    }
}

impl ModelLaw for Model2 {
    fn base_names(&self) -> Vec<String> {
        vec!["x1".into(), "x2".into(), "x3".into(), "x4".into()]
    }

    fn draw(&self, rng: &mut StreamRng) -> Vec<f64> {
        let x1 = self.beta.sample(rng);
        let x2 = unif(rng, -2.0, 2.0);
        let x4 = if rng.random::<f64>() < 0.6 { 3.0 } else { 5.0 };
        vec![x1, x2, x1 * x2, x4]
    }

    fn g(&self, arm: Arm, x: &[f64]) -> f64 {
        match arm {
            Arm::Treated => 15.0 * x[0].ln() * x[3],
            Arm::Control => 15.0 * x[0] + 7.0 * x[1] + 5.0 * x[2] + 6.0 * x[3],
        }
    }

    fn sigma(&self, arm: Arm, x: &[f64]) -> f64 {
        match arm {
            Arm::Treated => 2.0 * Self::x2s(x[1]),
            Arm::Control => Self::x3s(x[2]),
        }
    }

    fn stratum(&self, x: &[f64]) -> (usize, String) {
        let s = Self::x2s(x[1]) as usize;
        let f = x[3] as usize;
        ((s - 1) * 2 + usize::from(f == 5), format!("x2s={s},x4={f}"))
    }

    fn margins(&self, x: &[f64]) -> Vec<usize> {
        vec![Self::x2s(x[1]) as usize - 1, usize::from(x[3] == 5.0)]
    }

    fn margin_count(&self) -> usize {
        2
    }

    fn strata_columns(&self) -> Vec<usize> {
        vec![3]
    }

    fn extra_correlation(&self) -> f64 {
        0.5
    }

    /// Sums over the two levels of `x4` given `(x1, x2)`.
    fn effect_draw(&self, rng: &mut StreamRng) -> f64 {
        let x1 = self.beta.sample(rng);
        let x2 = unif(rng, -2.0, 2.0);
        [(3.0, 0.6), (5.0, 0.4)]
            .iter()
            .map(|&(x4, w)| {
                let x = [x1, x2, x1 * x2, x4];
                w * (self.g(Arm::Treated, &x) - self.g(Arm::Control, &x))
            })
            .sum()
    }
}

#[derive(Debug)]
struct Model3 {
    beta: Beta<f64>,
}

impl ModelLaw for Model3 {
    fn base_names(&self) -> Vec<String> {
        (1..=5).map(|j| format!("x{j}")).collect()
    }

    fn draw(&self, rng: &mut StreamRng) -> Vec<f64> {
        let x1 = self.beta.sample(rng);
        let x2 = rng.random_range(1..=4) as f64;
        let x3 = unif(rng, -2.0, 2.0);
        let u: f64 = rng.random();
        let x4 = if u < 0.3 {
            1.0
        } else if u < 0.9 {
            2.0
        } else {
            3.0
        };
        let x5: f64 = rng.sample(StandardNormal);
        vec![x1, x2, x3, x4, x5]
    }

    fn g(&self, _: Arm, x: &[f64]) -> f64 {
        2.0 * x[0] + 8.0 * x[1] + 10.0 * x[2] + 3.0 * x[3] + 6.0 * x[4]
    }

    fn sigma(&self, arm: Arm, _: &[f64]) -> f64 {
        match arm {
            Arm::Treated => 3.0,
            Arm::Control => 1.0,
        }
    }

    fn stratum(&self, x: &[f64]) -> (usize, String) {
        let a = x[1] as usize;
        let b = x[3] as usize;
        ((a - 1) * 3 + (b - 1), format!("x2={a},x4={b}"))
    }

    fn margins(&self, x: &[f64]) -> Vec<usize> {
        vec![x[1] as usize - 1, x[3] as usize - 1]
    }

    fn margin_count(&self) -> usize {
        2
    }

    fn strata_columns(&self) -> Vec<usize> {
        vec![1, 3]
    }

    fn exact_effect(&self) -> Option<f64> {
        Some(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Model1,
    Model2,
    Model3,
    Custom,
}

impl ModelId {
    pub fn label(self) -> &'static str {
        match self {
            ModelId::Model1 => "1",
            ModelId::Model2 => "2",
            ModelId::Model3 => "3",
            ModelId::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<ModelId> {
        match s.trim().to_ascii_lowercase().trim_start_matches("model") {
            "1" => Some(ModelId::Model1),
            "2" => Some(ModelId::Model2),
            "3" => Some(ModelId::Model3),
            _ => None,
        }
    }
}

fn builtin(id: ModelId) -> &'static dyn ModelLaw {
    static M1: Model1 = Model1;
    static M2: OnceLock<Model2> = OnceLock::new();
    static M3: OnceLock<Model3> = OnceLock::new();
    match id {
        ModelId::Model1 => &M1,
        ModelId::Model2 => M2.get_or_init(Model2::new),
        ModelId::Model3 => M3.get_or_init(|| Model3 {
            beta: Beta::new(2.0, 2.0).expect("valid shape"),
        }),
        ModelId::Custom => unreachable!("custom models carry their own law"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub mu0: f64,
    pub mu1: f64,
    /// Total covariate dimension handed to the Lasso estimators.
    pub p: usize,
    #[serde(skip)]
    custom: Option<Arc<dyn ModelLaw>>,
}

impl ModelSpec {
    pub fn new(id: ModelId, p: usize) -> Result<Self> {
        if id == ModelId::Custom {
            return Err(Error::Validation("custom models are built with ModelSpec::custom".into()));
        }
        Self::checked(Self {
            id,
            mu0: 0.0,
            mu1: 0.0,
            p,
            custom: None,
        })
    }

    /// Built-in model at the default dimension p = 100.
    pub fn builtin(id: ModelId) -> Result<Self> {
        Self::new(id, 100)
    }

    pub fn custom(law: Arc<dyn ModelLaw>, p: usize) -> Result<Self> {
        Self::checked(Self {
            id: ModelId::Custom,
            mu0: 0.0,
            mu1: 0.0,
            p,
            custom: Some(law),
        })
    }

    pub fn with_intercepts(mut self, mu0: f64, mu1: f64) -> Result<Self> {
        self.mu0 = mu0;
        self.mu1 = mu1;
        Self::checked(self)
    }

    fn checked(self) -> Result<Self> {
        let base = self.law().base_names().len();
        if self.p < base {
            return Err(Error::Validation(format!(
                "dimension p = {} is below the {base} base covariates of model {}",
                self.p,
                self.id.label()
            )));
        }
        if !self.mu0.is_finite() || !self.mu1.is_finite() {
            return Err(Error::Validation("intercepts must be finite".into()));
        }
        Ok(self)
    }

    pub fn law(&self) -> &dyn ModelLaw {
        match &self.custom {
            Some(law) => law.as_ref(),
            None => builtin(self.id),
        }
    }

    pub fn base_count(&self) -> usize {
        self.law().base_names().len()
    }

    /// Equal minimization weights, one per factor.
    pub fn equal_weights(&self) -> Vec<f64> {
        vec![1.0; self.law().margin_count()]
    }
}

/// A generated sample before assignment. Both potential outcomes are held
/// here; only `reveal` turns them into observed data.
#[derive(Debug, Clone)]
pub struct Population {
    covariates: Matrix,
    names: Vec<String>,
    base_count: usize,
    strata: Vec<usize>,
    labels: Vec<String>,
    margins: Vec<Vec<usize>>,
    truth: PotentialOutcomes,
}

impl Population {
    pub fn n(&self) -> usize {
        self.strata.len()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn stratum_labels(&self) -> &[String] {
        &self.labels
    }

    pub fn base_count(&self) -> usize {
        self.base_count
    }

    /// What the randomization rule may see about each unit.
    pub fn units(&self) -> Vec<Unit> {
        self.strata
            .iter()
            .zip(&self.margins)
            .map(|(&stratum, m)| Unit {
                stratum,
                margins: m.clone(),
            })
            .collect()
    }

    /// Observed dataset under `treated`, carrying the potential outcomes
    /// only for coverage accounting.
    pub fn reveal(&self, treated: &[bool]) -> Result<TrialDataset> {
        if treated.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} assignments for {} units",
                treated.len(),
                self.n()
            )));
        }
        let y = treated
            .iter()
            .enumerate()
            .map(|(i, &t)| if t { self.truth.treated[i] } else { self.truth.control[i] })
            .collect();
        TrialDataset::new(y, treated.to_vec(), self.labels.as_slice(), self.covariates.clone(), self.names.clone())?
            .with_truth(self.truth.clone())
    }
}

/// Draws `n` units from `model`.
pub fn generate(model: &ModelSpec, n: usize, rng: &mut StreamRng) -> Result<Population> {
    if n < 2 {
        return Err(Error::Validation(format!("sample size {n} must be at least 2")));
    }
    let law = model.law();
    let mut names = law.base_names();
    let base = names.len();
    let p = model.p;
    names.extend((base + 1..=p).map(|j| format!("x{j}")));
    let rho = law.extra_correlation();
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = Matrix::zeros(n, p);
    let mut strata = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut margins = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    for i in 0..n {
        let xi = law.draw(rng);
        for (j, &v) in xi.iter().enumerate() {
            x.set(i, j, v);
        }
        let mut prev = 0.0;
        for j in base..p {
            let z: f64 = rng.sample(StandardNormal);
            let v = if j == base { z } else { rho * prev + innovation * z };
            x.set(i, j, v);
            prev = v;
        }
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        y0.push(model.mu0 + law.g(Arm::Control, &xi) + law.sigma(Arm::Control, &xi) * e0);
        y1.push(model.mu1 + law.g(Arm::Treated, &xi) + law.sigma(Arm::Treated, &xi) * e1);
        let (code, label) = law.stratum(&xi);
        strata.push(code);
        labels.push(label);
        margins.push(law.margins(&xi));
    }
    Ok(Population {
        covariates: x,
        names,
        base_count: base,
        strata,
        labels,
        margins,
        truth: PotentialOutcomes {
            treated: y1,
            control: y0,
        },
    })
}

/// Monte Carlo value with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleValue {
    pub value: f64,
    pub se: f64,
    pub draws: usize,
}

const ORACLE_SEED: u64 = 0x7a11_5eed_0f0c_ac1e;
const ORACLE_CHUNK: usize = 100_000;
pub const ORACLE_DRAWS: usize = 10_000_000;

/// Estimates `E{g_1(X) − g_0(X)}` from independent covariate draws.
pub fn effect_oracle(law: &dyn ModelLaw, draws: usize, seed: u64) -> OracleValue {
    let chunks = draws.div_ceil(ORACLE_CHUNK);
    let parts: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64, Purpose::Oracle, 0);
            let m = ORACLE_CHUNK.min(draws - c * ORACLE_CHUNK);
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..m {
                let d = law.effect_draw(&mut rng);
                s += d;
                ss += d * d;
            }
            (s, ss, m)
        })
        .collect();
    let (s, ss, m) = parts
        .into_iter()
        .fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mean = s / m as f64;
    let var = (ss / m as f64 - mean * mean) * m as f64 / (m as f64 - 1.0);
    OracleValue {
        value: mean,
        se: (var / m as f64).sqrt(),
        draws: m,
    }
}

/// Population treatment effect of `model` and, when it was estimated by
/// simulation, the oracle that produced it.
pub fn true_tau_with_oracle(model: &ModelSpec) -> (f64, Option<OracleValue>) {
    static MODEL2: OnceLock<OracleValue> = OnceLock::new();
    let shift = model.mu1 - model.mu0;
    let law = model.law();
    if let Some(v) = law.exact_effect() {
        return (shift + v, None);
    }
    let oracle = match model.id {
        ModelId::Model2 => *MODEL2.get_or_init(|| effect_oracle(law, ORACLE_DRAWS, ORACLE_SEED)),
        _ => effect_oracle(law, ORACLE_DRAWS, ORACLE_SEED),
    };
    (shift + oracle.value, Some(oracle))
}

pub fn true_tau(model: &ModelSpec) -> f64 {
    true_tau_with_oracle(model).0
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub scheme: RandomizationScheme,
    pub n: usize,
    pub reps: usize,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub level: f64,
    /// Settings shared by every estimator; `seed` and `stream` are
    /// overwritten per replication.
    pub estimator: EstimatorConfig,
    /// Drop stratum-defining columns from the OLS covariate set.
    pub ols_exclude_strata: bool,
    /// Worker threads; `None` uses the global pool. Not echoed in reports,
    /// which are identical for every thread count.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(model: ModelSpec, scheme: RandomizationScheme, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            model,
            scheme,
            n,
            reps,
            estimators: EstimatorKind::TABLE.to_vec(),
            seed,
            level: 0.95,
            estimator: EstimatorConfig::default(),
            ols_exclude_strata: false,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if let Variant::PocockSimon { weights, .. } = &self.scheme.variant {
            let margins = self.model.law().margin_count();
            if weights.len() != margins {
                return Err(Error::Validation(format!(
                    "{} minimization weights for {margins} margins",
                    weights.len()
                )));
            }
        }
        if !(self.scheme.pi > 0.0 && self.scheme.pi < 1.0) {
            return Err(Error::Validation(format!("allocation {} must lie in (0, 1)", self.scheme.pi)));
        }
        if self.reps == 0 {
            return Err(Error::Validation("at least one replication is required".into()));
        }
        if self.n < 2 {
            return Err(Error::Validation(format!("sample size {} must be at least 2", self.n)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Validation(format!("confidence level {} must lie in (0, 1)", self.level)));
        }
        if self.estimators.contains(&EstimatorKind::General) {
            return Err(Error::Validation("the general estimator cannot be simulated".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Validation("thread count must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one estimator in one replication.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RepEstimate {
    pub tau: f64,
    pub se_unadj: f64,
    pub covers_unadj: bool,
    /// `None` when the estimator has no adjusted variance or the
    /// degrees of freedom ran out.
    pub se_adj: Option<f64>,
    pub covers_adj: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RepOutcome {
    Ok(RepEstimate),
    /// Adjusted variance unavailable because the degrees of freedom ran out.
    DfExhausted(RepEstimate),
    Failed { reason: String },
}

impl RepOutcome {
    pub fn estimate(&self) -> Option<&RepEstimate> {
        match self {
            RepOutcome::Ok(e) | RepOutcome::DfExhausted(e) => Some(e),
            RepOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub estimator: EstimatorKind,
    pub bias: f64,
    pub sd: f64,
    pub se_unadj: f64,
    pub se_adj: Option<f64>,
    pub cp_unadj: f64,
    pub cp_adj: Option<f64>,
    /// Replications in which the estimator could not be computed.
    pub failures: usize,
    /// Replications whose adjusted variance was unavailable.
    pub df_failures: usize,
    /// Replications entering the moments.
    pub used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    pub config: SimConfig,
    pub true_tau: f64,
    pub oracle: Option<OracleValue>,
    pub rows: Vec<ReportRow>,
    /// Per-replication outcomes, indexed `[rep][estimator]`.
    #[serde(skip)]
    pub outcomes: Vec<Vec<RepOutcome>>,
}

impl ReplicationReport {
    pub fn row(&self, kind: EstimatorKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == kind)
    }
}

fn evaluate(est: &TreatmentEffectEstimate, pi: f64, level: f64, truth: f64) -> Result<RepOutcome> {
    let ve = variance_components(est, pi)?;
    let ci = confidence_interval(est.tau_hat, ve.se_tau, level)?;
    let mut out = RepEstimate {
        tau: est.tau_hat,
        se_unadj: ve.se_tau,
        covers_unadj: ci.covers(truth),
        se_adj: None,
        covers_adj: None,
    };
    if est.adjustment.is_none() {
        return Ok(RepOutcome::Ok(out));
    }
    match df_adjust(&ve, est) {
        Ok(adj) => {
            let ci = confidence_interval(est.tau_hat, adj.se_tau, level)?;
            out.se_adj = Some(adj.se_tau);
            out.covers_adj = Some(ci.covers(truth));
            Ok(RepOutcome::Ok(out))
        }
        Err(Error::DfExhausted { .. }) => Ok(RepOutcome::DfExhausted(out)),
        Err(e) => Err(e),
    }
}

fn ols_columns(cfg: &SimConfig) -> Vec<usize> {
    let law = cfg.model.law();
    let drop = if cfg.ols_exclude_strata { law.strata_columns() } else { vec![] };
    (0..cfg.model.base_count()).filter(|j| !drop.contains(j)).collect()
}

/// Runs a single replication.
pub fn run_replication(cfg: &SimConfig, rep: u64, truth: f64) -> Vec<RepOutcome> {
    let fail_all = |e: Error| {
        let reason = e.to_string();
        cfg.estimators
            .iter()
            .map(|_| RepOutcome::Failed { reason: reason.clone() })
            .collect()
    };
    let mut data_rng = stream(cfg.seed, rep, Purpose::Data);
    let pop = match generate(&cfg.model, cfg.n, &mut data_rng) {
        Ok(p) => p,
        Err(e) => return fail_all(e),
    };
    let mut assign_rng = stream(cfg.seed, rep, Purpose::Assign);
    let full = match assign_all_with(&cfg.scheme, &pop.units(), &mut assign_rng).and_then(|t| pop.reveal(&t)) {
        Ok(d) => d,
        Err(e) => return fail_all(e),
    };
    let ols = full.select_covariates(&ols_columns(cfg));
    let ecfg = EstimatorConfig {
        seed: cfg.seed,
        stream: rep,
        ..cfg.estimator.clone()
    };
    cfg.estimators
        .iter()
        .map(|&kind| {
            let ds = if kind.is_lasso() { &full } else { &ols };
            estimate(ds, kind, &ecfg)
                .and_then(|est| evaluate(&est, cfg.scheme.pi, cfg.level, truth))
                .unwrap_or_else(|e| RepOutcome::Failed { reason: e.to_string() })
        })
        .collect()
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn aggregate(model: &str, kind: EstimatorKind, col: &[&RepOutcome], truth: f64) -> ReportRow {
    let ok: Vec<&RepEstimate> = col.iter().filter_map(|o| o.estimate()).collect();
    let taus: Vec<f64> = ok.iter().map(|e| e.tau).collect();
    let ses: Vec<f64> = ok.iter().map(|e| e.se_unadj).collect();
    let cover = ok.iter().filter(|e| e.covers_unadj).count();
    let adj: Vec<(f64, bool)> = ok
        .iter()
        .filter_map(|e| Some((e.se_adj?, e.covers_adj?)))
        .collect();
    let has_adj = kind != EstimatorKind::DiffInMeans;
    ReportRow {
        model: model.to_string(),
        estimator: kind,
        bias: mean(&taus) - truth,
        sd: sample_sd(&taus),
        se_unadj: mean(&ses),
        se_adj: (has_adj && !adj.is_empty()).then(|| mean(&adj.iter().map(|a| a.0).collect::<Vec<_>>())),
        cp_unadj: if ok.is_empty() { f64::NAN } else { cover as f64 / ok.len() as f64 },
        cp_adj: (has_adj && !adj.is_empty()).then(|| adj.iter().filter(|a| a.1).count() as f64 / adj.len() as f64),
        failures: col.len() - ok.len(),
        df_failures: col.iter().filter(|o| matches!(o, RepOutcome::DfExhausted(_))).count(),
        used: ok.len(),
    }
}

/// Runs `cfg.reps` replications and aggregates them in replication order,
/// so the report does not depend on the number of worker threads.
pub fn run_replications(cfg: &SimConfig) -> Result<ReplicationReport> {
    cfg.validate()?;
    let (truth, oracle) = true_tau_with_oracle(&cfg.model);
    let work = || -> Vec<Vec<RepOutcome>> {
        (0..cfg.reps as u64)
            .into_par_iter()
            .map(|r| run_replication(cfg, r, truth))
            .collect()
    };
    let outcomes = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Validation(format!("cannot start {t} worker threads: {e}")))?
            .install(work),
        None => work(),
    };
    let label = cfg.model.id.label();
    let rows = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let col: Vec<&RepOutcome> = outcomes.iter().map(|o| &o[j]).collect();
            aggregate(label, kind, &col, truth)
        })
        .collect();
    Ok(ReplicationReport {
        config: cfg.clone(),
        true_tau: truth,
        oracle,
        rows,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Some(ReportFormat::Csv),
            "markdown" | "md" => Some(ReportFormat::Markdown),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "Model", "Estimator", "Bias", "SD", "SE-unadj", "SE-adj", "CP-unadj", "CP-adj", "Failures",
];

pub const SCHEMA_VERSION: u32 = 1;

fn fmt2(v: f64) -> String {
    if v.is_finite() {
        let s = format!("{v:.2}");
        // avoid "-0.00"
        if s == "-0.00" {
            "0.00".into()
        } else {
            s
        }
    } else {
        "-".into()
    }
}

fn table_cells(row: &ReportRow) -> [String; 9] {
    [
        row.model.clone(),
        row.estimator.name().to_string(),
        fmt2(row.bias),
        fmt2(row.sd),
        fmt2(row.se_unadj),
        row.se_adj.map_or("-".into(), fmt2),
        fmt2(row.cp_unadj),
        row.cp_adj.map_or("-".into(), fmt2),
        row.failures.to_string(),
    ]
}

/// Renders a report. Table formats round to two decimals; JSON keeps full
/// precision and echoes the configuration.
pub fn emit_report(report: &ReplicationReport, format: ReportFormat) -> String {
    emit_rows(&report.rows, format, Some(report))
}

/// Several reports as one table (rows in input order); JSON nests each
/// report under `reports`.
pub fn emit_reports(reports: &[ReplicationReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let items: Vec<serde_json::Value> = reports
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "config": r.config,
                        "true_tau": r.true_tau,
                        "oracle": r.oracle,
                        "rows": r.rows,
                    })
                })
                .collect();
            let value = serde_json::json!({ "schema_version": SCHEMA_VERSION, "reports": items });
            let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
            s.push('\n');
            s
        }
        _ => {
            let rows: Vec<ReportRow> = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
            emit_rows(&rows, format, None)
        }
    }
}

fn emit_rows(rows: &[ReportRow], format: ReportFormat, report: Option<&ReplicationReport>) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = REPORT_COLUMNS.join(",");
            out.push('\n');
            for r in rows {
                out.push_str(&table_cells(r).join(","));
                out.push('\n');
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n", REPORT_COLUMNS.join(" | "));
            out.push_str(&format!("|{}\n", "---|".repeat(REPORT_COLUMNS.len())));
            for r in rows {
                out.push_str(&format!("| {} |\n", table_cells(r).join(" | ")));
            }
            out
        }
        ReportFormat::Json => {
            let value = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "config": report.map(|r| &r.config),
                "true_tau": report.map(|r| r.true_tau),
                "oracle": report.and_then(|r| r.oracle),
                "rows": rows,
            });
            let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
            s.push('\n');
            s
        }
    }
}
