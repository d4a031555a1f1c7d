//! Empirical-Bayes borrowing across baskets.
//!
//! Each basket first gets its own conjugate posterior. Pairwise similarity
//! of those posteriors (one minus the Jensen-Shannon divergence, raised to
//! `epsilon` and thresholded at `tau`) gives the weight with which basket `k`
//! contributes its prior-plus-data to basket `b`'s pooled posterior.

use std::collections::HashMap;

use crate::distributions::{beta_cdf, jsd_beta, BetaParams};
use crate::error::{Error, Result};

/// Beta(s1, s2) prior shared by every basket.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub s1: f64,
    pub s2: f64,
}

impl PriorSpec {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        let p = Self { s1, s2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s1.is_finite() && self.s2.is_finite() && self.s1 > 0.0 && self.s2 > 0.0) {
            return Err(Error::Config(format!(
                "prior shapes must be positive, got s1={}, s2={}",
                self.s1, self.s2
            )));
        }
        Ok(())
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { s1: 0.1, s2: 0.2 }
    }
}

/// Responders and evaluated patients contributing to one basket's posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BasketCounts {
    responders: u32,
    evaluated: u32,
}

impl BasketCounts {
    pub fn new(responders: u32, evaluated: u32) -> Result<Self> {
        if responders > evaluated {
            return Err(Error::Contract(format!(
                "responders ({responders}) exceed evaluated patients ({evaluated})"
            )));
        }
        Ok(Self { responders, evaluated })
    }

    pub fn responders(&self) -> u32 {
        self.responders
    }

    pub fn evaluated(&self) -> u32 {
        self.evaluated
    }

    pub fn non_responders(&self) -> u32 {
        self.evaluated - self.responders
    }
}

/// Logarithm base of the Jensen-Shannon divergence.
///
/// In bits the divergence lies in [0, 1], so dissimilar baskets get weights
/// near zero. In nats it is capped at `ln 2`, which puts a floor of
/// `(1 - ln 2)^epsilon` under every weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JsdUnit {
    #[default]
    Bits,
    Nats,
}

impl JsdUnit {
    pub fn from_nats(self, jsd: f64) -> f64 {
        match self {
            Self::Bits => (jsd / std::f64::consts::LN_2).min(1.0),
            Self::Nats => jsd,
        }
    }
}

/// Power `epsilon` and threshold `tau` of the similarity weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BorrowConfig {
    pub epsilon: f64,
    pub tau: f64,
    #[serde(default)]
    pub jsd_unit: JsdUnit,
}

impl BorrowConfig {
    pub fn new(epsilon: f64, tau: f64) -> Result<Self> {
        let c = Self { epsilon, tau, jsd_unit: JsdUnit::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn with_unit(self, jsd_unit: JsdUnit) -> Self {
        Self { jsd_unit, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

impl Default for BorrowConfig {
    fn default() -> Self {
        Self { epsilon: 2.0, tau: 0.0, jsd_unit: JsdUnit::default() }
    }
}

/// Symmetric B x B borrowing weights with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    size: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn identity(size: usize) -> Self {
        let mut w = vec![0.0; size * size];
        for b in 0..size {
            w[b * size + b] = 1.0;
        }
        Self { size, w }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, b: usize, k: usize) -> f64 {
        self.w[b * self.size + k]
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.w[b * self.size..(b + 1) * self.size]
    }

    fn set_pair(&mut self, b: usize, k: usize, value: f64) {
        self.w[b * self.size + k] = value;
        self.w[k * self.size + b] = value;
    }
}

/// Memo table for pairwise JSD values.
///
/// Posteriors in a simulation are always prior plus integer counts, so the
/// same pairs recur constantly. Lookups are exact (keyed on bit patterns),
/// which keeps cached and uncached results identical.
#[derive(Debug, Default)]
pub struct JsdCache {
    table: HashMap<[u64; 4], f64>,
}

impl JsdCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn jsd(&mut self, p: &BetaParams, q: &BetaParams) -> Result<f64> {
        let a = [p.alpha().to_bits(), p.beta().to_bits()];
        let b = [q.alpha().to_bits(), q.beta().to_bits()];
        let key = if a <= b { [a[0], a[1], b[0], b[1]] } else { [b[0], b[1], a[0], a[1]] };
        if let Some(&v) = self.table.get(&key) {
            return Ok(v);
        }
        let v = jsd_beta(p, q)?;
        self.table.insert(key, v);
        Ok(v)
    }
}

/// Per-basket posteriors without sharing: `Beta(s1 + r_b, s2 + n_b - r_b)`.
pub fn basket_posteriors(prior: &PriorSpec, counts: &[BasketCounts]) -> Result<Vec<BetaParams>> {
    counts
        .iter()
        .map(|c| {
            BetaParams::new(
                prior.s1 + c.responders as f64,
                prior.s2 + c.non_responders() as f64,
            )
        })
        .collect()
}

/// Similarity weights from unshared posteriors.
pub fn borrow_weights(posteriors: &[BetaParams], cfg: &BorrowConfig) -> Result<WeightMatrix> {
    borrow_weights_cached(posteriors, cfg, &mut JsdCache::new())
}

pub fn borrow_weights_cached(
    posteriors: &[BetaParams],
    cfg: &BorrowConfig,
    cache: &mut JsdCache,
) -> Result<WeightMatrix> {
    if posteriors.is_empty() {
        return Err(Error::Contract("borrow_weights needs at least one posterior".into()));
    }
    let mut w = WeightMatrix::identity(posteriors.len());
    for b in 0..posteriors.len() {
        for k in (b + 1)..posteriors.len() {
            let jsd = cfg.jsd_unit.from_nats(cache.jsd(&posteriors[b], &posteriors[k])?);
            let similarity = (1.0 - jsd).powf(cfg.epsilon);
            w.set_pair(b, k, if similarity > cfg.tau { similarity } else { 0.0 });
        }
    }
    Ok(w)
}

/// Pooled posterior for basket `b`:
/// `Beta(sum_k w_bk (s1 + r_k), sum_k w_bk (s2 + n_k - r_k))`.
pub fn pooled_posterior(
    b: usize,
    w: &WeightMatrix,
    prior: &PriorSpec,
    counts: &[BasketCounts],
) -> Result<BetaParams> {
    if w.size() != counts.len() || b >= counts.len() {
        return Err(Error::Contract(format!(
            "basket {b} with a {}x{} weight matrix and {} count entries",
            w.size(),
            w.size(),
            counts.len()
        )));
    }
    let (mut alpha, mut beta) = (0.0, 0.0);
    for (wk, c) in w.row(b).iter().zip(counts) {
        alpha += wk * (prior.s1 + c.responders as f64);
        beta += wk * (prior.s2 + c.non_responders() as f64);
    }
    BetaParams::new(alpha, beta)
}

fn check_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::Domain(format!("null response rate must lie in (0, 1), got {phi}")));
    }
    Ok(())
}

/// `P(theta < phi)` under `post`.
pub fn futility_probability(post: &BetaParams, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    beta_cdf(phi, post)
}

/// `P(theta > phi)` under `post`.
pub fn efficacy_probability(post: &BetaParams, phi: f64) -> Result<f64> {
    Ok(1.0 - futility_probability(post, phi)?)
}

/// Full pipeline for one basket: unshared posteriors, weights, pooling.
pub fn borrowed_posterior(
    b: usize,
    prior: &PriorSpec,
    cfg: &BorrowConfig,
    counts: &[BasketCounts],
    cache: &mut JsdCache,
) -> Result<BetaParams> {
    let posteriors = basket_posteriors(prior, counts)?;
    let w = borrow_weights_cached(&posteriors, cfg, cache)?;
    pooled_posterior(b, &w, prior, counts)
}
