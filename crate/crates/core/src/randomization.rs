//! Sequential covariate-adaptive treatment assignment.
//!
//! Unequal allocation is handled through the π-normalized imbalance
//! `n1/π − n0/(1−π)`, which has the sign of `n1 − π·n` and reduces to the
//! plain count difference (times 2) when π = 1/2.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    /// Independent Bernoulli(π) assignment.
    Simple,
    /// Permuted blocks within each stratum.
    StratifiedBlock { block_size: usize },
    /// Efron's biased coin within each stratum.
    StratifiedBiasedCoin { bias: f64 },
    /// Wei's adaptive biased coin within each stratum, linear allocation rule.
    WeiAdaptive,
    /// Pocock–Simon minimization over marginal factor levels.
    PocockSimon { bias: f64, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomizationScheme {
    pub variant: Variant,
    /// Target treated fraction.
    pub pi: f64,
}

impl RandomizationScheme {
    pub fn new(variant: Variant, pi: f64) -> Result<Self> {
        let s = Self { variant, pi };
        s.validate()?;
        Ok(s)
    }

    pub fn simple(pi: f64) -> Result<Self> {
        Self::new(Variant::Simple, pi)
    }

    pub fn stratified_block(block_size: usize, pi: f64) -> Result<Self> {
        Self::new(Variant::StratifiedBlock { block_size }, pi)
    }

    pub fn biased_coin(bias: f64, pi: f64) -> Result<Self> {
        Self::new(Variant::StratifiedBiasedCoin { bias }, pi)
    }

    pub fn pocock_simon(bias: f64, weights: Vec<f64>, pi: f64) -> Result<Self> {
        Self::new(Variant::PocockSimon { bias, weights }, pi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            // Simple randomization also accepts the degenerate endpoints.
            let endpoint = (self.pi == 0.0 || self.pi == 1.0) && self.variant == Variant::Simple;
            if !endpoint {
                return Err(Error::Validation(format!("allocation π = {} must lie in (0, 1)", self.pi)));
            }
        }
        match &self.variant {
            Variant::Simple | Variant::WeiAdaptive => Ok(()),
            Variant::StratifiedBlock { block_size } => {
                let ones = *block_size as f64 * self.pi;
                if *block_size == 0 || (ones - ones.round()).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "block size {block_size} times π = {} is not an integer",
                        self.pi
                    )));
                }
                Ok(())
            }
            Variant::StratifiedBiasedCoin { bias } => check_bias(*bias),
            Variant::PocockSimon { bias, weights } => {
                check_bias(*bias)?;
                if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::Validation("margin weights must be non-negative with positive sum".into()));
                }
                Ok(())
            }
        }
    }

    /// Number of treated units in a complete block.
    pub fn block_treated(&self) -> Option<usize> {
        match self.variant {
            Variant::StratifiedBlock { block_size } => Some((block_size as f64 * self.pi).round() as usize),
            _ => None,
        }
    }
}

fn check_bias(p: f64) -> Result<()> {
    if p > 0.5 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("biased-coin probability {p} must lie in (1/2, 1]")))
    }
}

/// What the assignment rule may look at for an incoming unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Unit {
    pub stratum: usize,
    /// Level of each minimization factor.
    pub margins: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArmCounts {
    pub treated: usize,
    pub control: usize,
}

impl ArmCounts {
    pub fn total(&self) -> usize {
        self.treated + self.control
    }

    fn add(&mut self, treated: bool) {
        if treated {
            self.treated += 1;
        } else {
            self.control += 1;
        }
    }

    /// `n1 − π·n`
    pub fn deficit(&self, pi: f64) -> f64 {
        self.treated as f64 - pi * self.total() as f64
    }

    /// `|n1/π − n0/(1−π)|`
    pub fn normalized_imbalance(&self, pi: f64) -> f64 {
        (self.treated as f64 / pi - self.control as f64 / (1.0 - pi)).abs()
    }
}

#[derive(Debug, Clone)]
pub struct AssignmentState {
    scheme: RandomizationScheme,
    strata: HashMap<usize, ArmCounts>,
    blocks: HashMap<usize, Vec<bool>>,
    margins: Vec<HashMap<usize, ArmCounts>>,
    emitted: usize,
}

impl AssignmentState {
    pub fn new(scheme: RandomizationScheme) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            scheme,
            strata: HashMap::new(),
            blocks: HashMap::new(),
            margins: Vec::new(),
            emitted: 0,
        })
    }

    pub fn scheme(&self) -> &RandomizationScheme {
        &self.scheme
    }

    pub fn stratum_counts(&self, stratum: usize) -> ArmCounts {
        self.strata.get(&stratum).copied().unwrap_or_default()
    }

    pub fn margin_counts(&self, margin: usize, level: usize) -> ArmCounts {
        self.margins
            .get(margin)
            .and_then(|m| m.get(&level))
            .copied()
            .unwrap_or_default()
    }

    /// Units not yet drawn from the stratum's current block.
    pub fn block_residue(&self, stratum: usize) -> usize {
        self.blocks.get(&stratum).map_or(0, Vec::len)
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Overwrites a stratum's running counts; used to probe the rule from a
    /// chosen state.
    pub fn force_stratum_counts(&mut self, stratum: usize, counts: ArmCounts) {
        self.strata.insert(stratum, counts);
    }

    /// Probability that the next unit is treated, given the current state.
    pub fn treatment_probability(&self, unit: &Unit) -> Result<f64> {
        let pi = self.scheme.pi;
        let counts = self.stratum_counts(unit.stratum);
        Ok(match &self.scheme.variant {
            Variant::Simple => pi,
            Variant::StratifiedBlock { .. } => {
                return Err(Error::Contract(
                    "block randomization has no closed-form per-unit probability".into(),
                ))
            }
            Variant::StratifiedBiasedCoin { bias } => {
                let d = counts.deficit(pi);
                if d.abs() < 1e-9 {
                    0.5
                } else if d > 0.0 {
                    1.0 - bias
                } else {
                    *bias
                }
            }
            Variant::WeiAdaptive => {
                let nk = counts.total();
                let x = if nk == 0 { 0.0 } else { counts.deficit(pi) / nk as f64 };
                (pi - x / 2.0).clamp(0.0, 1.0)
            }
            Variant::PocockSimon { bias, weights } => {
                if weights.len() != unit.margins.len() {
                    return Err(Error::Contract(format!(
                        "{} margin weights but unit has {} margin levels",
                        weights.len(),
                        unit.margins.len()
                    )));
                }
                let treat = self.minimization_score(unit, weights, true);
                let ctrl = self.minimization_score(unit, weights, false);
                if (treat - ctrl).abs() <= 1e-9 * (1.0 + treat.abs().max(ctrl.abs())) {
                    pi
                } else if treat < ctrl {
                    *bias
                } else {
                    1.0 - bias
                }
            }
        })
    }

    /// Weighted sum of post-assignment marginal imbalances if the unit were
    /// assigned to the given arm.
    pub fn minimization_score(&self, unit: &Unit, weights: &[f64], treated: bool) -> f64 {
        let pi = self.scheme.pi;
        unit.margins
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(m, (&level, &w))| {
                let mut c = self.margin_counts(m, level);
                c.add(treated);
                w * c.normalized_imbalance(pi)
            })
            .sum()
    }

    pub fn assign_next<R: Rng + ?Sized>(&mut self, unit: &Unit, rng: &mut R) -> Result<bool> {
        let treated = match &self.scheme.variant {
            Variant::StratifiedBlock { block_size } => {
                let size = *block_size;
                let ones = self.scheme.block_treated().unwrap_or(0);
                let block = self.blocks.entry(unit.stratum).or_default();
                if block.is_empty() {
                    let mut fresh: Vec<bool> = (0..size).map(|i| i < ones).collect();
                    fresh.shuffle(rng);
                    // Drawn from the back.
                    fresh.reverse();
                    *block = fresh;
                }
                block.pop().ok_or_else(|| Error::Contract("empty block".into()))?
            }
            Variant::Simple => self.scheme.pi >= 1.0 || rng.random::<f64>() < self.scheme.pi,
            _ => {
                let prob = self.treatment_probability(unit)?;
                rng.random::<f64>() < prob
            }
        };
        self.strata.entry(unit.stratum).or_default().add(treated);
        if self.margins.len() < unit.margins.len() {
            self.margins.resize_with(unit.margins.len(), HashMap::new);
        }
        for (m, &level) in unit.margins.iter().enumerate() {
            self.margins[m].entry(level).or_default().add(treated);
        }
        self.emitted += 1;
        Ok(treated)
    }
}

/// Assigns every unit in order with a fresh state seeded from `seed`.
pub fn assign_all(scheme: &RandomizationScheme, units: &[Unit], seed: u64) -> Result<Vec<bool>> {
    let mut rng = rng::stream(seed, 0, Purpose::Assign);
    assign_all_with(scheme, units, &mut rng)
}

pub fn assign_all_with(scheme: &RandomizationScheme, units: &[Unit], rng: &mut StreamRng) -> Result<Vec<bool>> {
    let mut state = AssignmentState::new(scheme.clone())?;
    units.iter().map(|u| state.assign_next(u, rng)).collect()
}
