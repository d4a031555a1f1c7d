//! Censored Weibull time-to-response model and multiple imputation of
//! responses that are still pending at an interim analysis.
//!
//! Two variants of the scale regression are supported. `Shared` uses one
//! intercept for every basket; `BasketCovariate` adds reference-coded basket
//! dummies (basket 0 is the reference), so basket `b > 0` has log-scale
//! `beta0 + betas[b - 1]`. The shape `kappa` is common to all baskets.

mod imputation;
mod mcmc;

pub use imputation::{
    conditional_response_prob, impute_responses, mi_futility, mi_futility_from_draws, MiDesign,
    MiEstimate,
};
pub use mcmc::{mcmc_fit, McmcConfig, McmcFit};

use crate::distributions::{weibull_log_pdf, weibull_log_survival, WeibullParams, MAX_WEIBULL_SHAPE};
use crate::error::{Error, Result};

/// Standard deviation of the Normal priors on regression coefficients
/// (variance 100).
pub const COEF_PRIOR_SD: f64 = 10.0;

/// What is known about one enrolled patient at an analysis time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowUpRecord {
    pub basket: usize,
    /// Observed time `min(c, t)`, in months.
    pub x: f64,
    /// Response observed by the analysis time.
    pub responded: bool,
    /// Follow-up still shorter than the response window, no response yet.
    pub missing: bool,
}

impl FollowUpRecord {
    pub fn new(basket: usize, x: f64, responded: bool, missing: bool) -> Result<Self> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::Contract(format!("observed time must be >= 0, got {x}")));
        }
        if responded && missing {
            return Err(Error::Contract("a responder cannot be missing".into()));
        }
        Ok(Self { basket, x, responded, missing })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ImputationModelKind {
    /// Same shape and scale for all baskets.
    Shared,
    /// Basket dummies on the log-scale.
    BasketCovariate,
}

impl ImputationModelKind {
    /// Number of basket coefficients beyond the intercept.
    pub fn num_coefficients(&self, num_baskets: usize) -> Result<usize> {
        match self {
            Self::Shared => Ok(0),
            Self::BasketCovariate if num_baskets >= 2 => Ok(num_baskets - 1),
            Self::BasketCovariate => Err(Error::Contract(
                "the basket-covariate model needs at least two baskets".into(),
            )),
        }
    }
}

/// One posterior draw of the Weibull regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDraw {
    pub kappa: f64,
    pub beta0: f64,
    /// Basket effects for baskets `1..B`; empty for the shared model.
    pub betas: Vec<f64>,
}

impl RegressionDraw {
    pub fn log_scale(&self, basket: usize) -> Result<f64> {
        if self.betas.is_empty() || basket == 0 {
            return Ok(self.beta0);
        }
        self.betas
            .get(basket - 1)
            .map(|b| self.beta0 + b)
            .ok_or_else(|| Error::Contract(format!("no coefficient for basket {basket}")))
    }

    pub fn weibull(&self, basket: usize) -> Result<WeibullParams> {
        WeibullParams::new(self.kappa, self.log_scale(basket)?.exp())
    }
}

/// Log-likelihood of right-censored Weibull data: `ln f(x)` for responders,
/// `ln S(x)` for everyone else (pending and complete non-responders alike).
pub fn censored_log_likelihood(data: &[FollowUpRecord], draw: &RegressionDraw) -> Result<f64> {
    let mut total = 0.0;
    for rec in data {
        let w = draw.weibull(rec.basket)?;
        total += if rec.responded {
            weibull_log_pdf(rec.x, &w)?
        } else {
            weibull_log_survival(rec.x, &w)?
        };
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("non-finite log-likelihood for {draw:?}")));
    }
    Ok(total)
}

pub(crate) fn normal_log_prior(v: f64) -> f64 {
    let var = COEF_PRIOR_SD * COEF_PRIOR_SD;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - v * v / (2.0 * var)
}

/// Log-likelihood plus Normal(0, 100) priors on every coefficient and a flat
/// prior on `kappa` over (0, 10). Returns `-inf` outside the support.
pub fn log_posterior(draw: &RegressionDraw, data: &[FollowUpRecord]) -> f64 {
    if !(draw.kappa > 0.0 && draw.kappa < MAX_WEIBULL_SHAPE) {
        return f64::NEG_INFINITY;
    }
    let prior = normal_log_prior(draw.beta0)
        + draw.betas.iter().map(|&b| normal_log_prior(b)).sum::<f64>()
        - MAX_WEIBULL_SHAPE.ln();
    match censored_log_likelihood(data, draw) {
        Ok(ll) => ll + prior,
        Err(_) => f64::NEG_INFINITY,
    }
}
