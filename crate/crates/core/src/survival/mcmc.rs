//! Adaptive component-wise random-walk Metropolis for the Weibull regression.
//!
//! The chain runs on `(ln kappa, beta0, betas...)`. Each iteration updates
//! every coordinate once. Step sizes are tuned in batches during burn-in and
//! frozen afterwards, so the retained draws come from a fixed kernel.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{normal_log_prior, FollowUpRecord, ImputationModelKind, RegressionDraw};
use crate::distributions::MAX_WEIBULL_SHAPE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub thin: usize,
    /// Retained draws, i.e. the number of imputations J.
    pub draws: usize,
    pub initial_step: f64,
    pub target_acceptance: f64,
    pub adapt_batch: usize,
}

impl McmcConfig {
    /// Burn-in 10000, thinning 70, J = 100.
    pub fn paper() -> Self {
        Self {
            burn_in: 10_000,
            thin: 70,
            draws: 100,
            initial_step: 0.5,
            target_acceptance: 0.35,
            adapt_batch: 50,
        }
    }

    /// Short chains for CI and quick exploration.
    pub fn fast() -> Self {
        Self { burn_in: 2_000, thin: 10, draws: 50, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in == 0 || self.thin == 0 || self.draws == 0 || self.adapt_batch == 0 {
            return Err(Error::Config(format!("MCMC counts must be positive: {self:?}")));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::Config(format!("MCMC step must be positive: {}", self.initial_step)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config(format!(
                "target acceptance must lie in (0, 1): {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Debug, Clone)]
pub struct McmcFit {
    pub draws: Vec<RegressionDraw>,
    /// Post-burn-in acceptance rate per coordinate.
    pub acceptance: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Per-group summaries: the likelihood only needs event counts, the sum of
/// log event times and the log observed times.
#[derive(Debug, Clone, Default)]
struct Group {
    events: f64,
    sum_ln_event_x: f64,
    ln_x: Vec<f64>,
}

struct Target {
    groups: Vec<Group>,
}

impl Target {
    fn new(data: &[FollowUpRecord], num_groups: usize, shared: bool) -> Result<Self> {
        let mut groups = vec![Group::default(); num_groups];
        for rec in data {
            let g = if shared { 0 } else { rec.basket };
            let group = groups
                .get_mut(g)
                .ok_or_else(|| Error::Contract(format!("record for unknown basket {}", rec.basket)))?;
            if rec.responded {
                if rec.x <= 0.0 {
                    return Err(Error::Contract("responder with zero observed time".into()));
                }
                group.events += 1.0;
                group.sum_ln_event_x += rec.x.ln();
            }
            // x = 0 adds nothing to the cumulative hazard
            if rec.x > 0.0 {
                group.ln_x.push(rec.x.ln());
            }
        }
        Ok(Self { groups })
    }

    /// `sum_i x_i^kappa` per group.
    fn power_sums(&self, kappa: f64) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.ln_x.iter().map(|&l| (kappa * l).exp()).sum())
            .collect()
    }

    fn log_likelihood(&self, kappa: f64, log_scales: &[f64], power_sums: &[f64]) -> f64 {
        let ln_kappa = kappa.ln();
        self.groups
            .iter()
            .zip(log_scales)
            .zip(power_sums)
            .map(|((g, &ls), &ps)| {
                g.events * (ln_kappa - kappa * ls) + (kappa - 1.0) * g.sum_ln_event_x
                    - (-kappa * ls).exp() * ps
            })
            .sum()
    }
}

/// Chain state in sampling coordinates.
struct State {
    coords: Vec<f64>,
    power_sums: Vec<f64>,
    log_target: f64,
}

fn log_scales(coords: &[f64], num_groups: usize) -> Vec<f64> {
    (0..num_groups)
        .map(|g| coords[1] + if g == 0 { 0.0 } else { coords[1 + g] })
        .collect()
}

fn evaluate(target: &Target, coords: &[f64], power_sums: &[f64]) -> f64 {
    let u = coords[0];
    let kappa = u.exp();
    if !(kappa > 0.0 && kappa < MAX_WEIBULL_SHAPE) {
        return f64::NEG_INFINITY;
    }
    let ll = target.log_likelihood(kappa, &log_scales(coords, target.groups.len()), power_sums);
    let prior: f64 = coords[1..].iter().map(|&b| normal_log_prior(b)).sum();
    // flat prior on kappa, Jacobian of kappa = exp(u)
    let v = ll + prior + u;
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

/// Draws `cfg.draws` posterior samples after `cfg.burn_in` iterations,
/// keeping every `cfg.thin`-th state. Deterministic given the rng state.
pub fn mcmc_fit<R: Rng + ?Sized>(
    data: &[FollowUpRecord],
    kind: ImputationModelKind,
    num_baskets: usize,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<McmcFit> {
    cfg.validate()?;
    let extra = kind.num_coefficients(num_baskets)?;
    let shared = extra == 0;
    let num_groups = if shared { 1 } else { num_baskets };
    let target = Target::new(data, num_groups, shared)?;
    let dim = 2 + extra;

    // start from the exponential-model estimate of the common scale
    let events: f64 = target.groups.iter().map(|g| g.events).sum();
    let exposure: f64 = data.iter().map(|r| r.x).sum();
    let mut coords = vec![0.0; dim];
    coords[1] = ((exposure + 1.0) / (events + 1.0)).ln();
    let power_sums = target.power_sums(1.0);
    let log_target = evaluate(&target, &coords, &power_sums);
    if !log_target.is_finite() {
        return Err(Error::Numerical("MCMC start has zero posterior density".into()));
    }
    let mut state = State { coords, power_sums, log_target };

    let mut steps = vec![cfg.initial_step; dim];
    let mut batch_accepts = vec![0usize; dim];
    let mut batch = 0usize;
    let mut kept_accepts = vec![0usize; dim];
    let total = cfg.burn_in + cfg.draws * cfg.thin;
    let mut draws = Vec::with_capacity(cfg.draws);

    for iter in 0..total {
        for (j, step) in steps.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            let mut proposal = state.coords.clone();
            proposal[j] += step * z;
            let ps = if j == 0 {
                target.power_sums(proposal[0].exp())
            } else {
                state.power_sums.clone()
            };
            let lt = evaluate(&target, &proposal, &ps);
            let log_u: f64 = rng.random::<f64>().ln();
            if lt.is_finite() && log_u < lt - state.log_target {
                state = State { coords: proposal, power_sums: ps, log_target: lt };
                if iter < cfg.burn_in {
                    batch_accepts[j] += 1;
                } else {
                    kept_accepts[j] += 1;
                }
            }
        }

        if iter < cfg.burn_in && (iter + 1) % cfg.adapt_batch == 0 {
            batch += 1;
            let delta = (1.0 / (batch as f64).sqrt()).min(0.5);
            for (step, acc) in steps.iter_mut().zip(batch_accepts.iter_mut()) {
                let rate = *acc as f64 / cfg.adapt_batch as f64;
                *step *= if rate > cfg.target_acceptance { delta.exp() } else { (-delta).exp() };
                *acc = 0;
            }
        }

        if iter >= cfg.burn_in && (iter + 1 - cfg.burn_in).is_multiple_of(cfg.thin) {
            draws.push(RegressionDraw {
                kappa: state.coords[0].exp(),
                beta0: state.coords[1],
                betas: state.coords[2..].to_vec(),
            });
        }
    }

    let sampled = (cfg.draws * cfg.thin) as f64;
    let acceptance: Vec<f64> = kept_accepts.iter().map(|&a| a as f64 / sampled).collect();
    let warnings = acceptance
        .iter()
        .enumerate()
        .filter(|(_, &a)| !(0.05..=0.95).contains(&a))
        .map(|(j, a)| format!("coordinate {j} acceptance rate {a:.3} outside [0.05, 0.95]"))
        .collect();
    Ok(McmcFit { draws, acceptance, warnings })
}
