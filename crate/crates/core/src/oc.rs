//! Operating characteristics aggregated over simulated trials.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trial::{ScenarioSpec, TrialResult};

/// Rates within this distance above `phi` still count as null.
const NULL_RATE_SLACK: f64 = 1e-9;

/// Which baskets have a true response rate at or below `phi`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthLabels {
    null_true: Vec<bool>,
}

impl TruthLabels {
    pub fn new(null_true: Vec<bool>) -> Self {
        Self { null_true }
    }

    pub fn from_scenario(scn: &ScenarioSpec) -> Result<Self> {
        let rates = scn.true_rates()?;
        Ok(Self::new(rates.into_iter().map(|r| r <= scn.phi + NULL_RATE_SLACK).collect()))
    }

    pub fn num_baskets(&self) -> usize {
        self.null_true.len()
    }

    pub fn null_true(&self, basket: usize) -> bool {
        self.null_true[basket]
    }
}

/// A Monte Carlo proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub estimate: f64,
    pub se: f64,
}

impl Proportion {
    pub fn from_count(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self { estimate: p, se: (p * (1.0 - p) / n as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasketOC {
    pub pet: Proportion,
    pub ess: f64,
    null_true: bool,
    rejection: Proportion,
}

impl BasketOC {
    pub fn null_true(&self) -> bool {
        self.null_true
    }

    /// Rejection rate of a null-true basket.
    pub fn basketwise_alpha(&self) -> Result<Proportion> {
        if self.null_true {
            Ok(self.rejection)
        } else {
            Err(Error::Contract("basket-wise alpha is only defined for null-true baskets".into()))
        }
    }

    /// Rejection rate of a null-false basket.
    pub fn power(&self) -> Result<Proportion> {
        if self.null_true {
            Err(Error::Contract("power is only defined for null-false baskets".into()))
        } else {
            Ok(self.rejection)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OCReport {
    pub baskets: Vec<BasketOC>,
    /// Mean trial duration, months.
    pub etd: f64,
    /// Mean number of correct decisions per trial.
    pub ecd: f64,
    /// `None` when no basket is null-true.
    pub trialwise_alpha: Option<Proportion>,
    pub replicates: usize,
    pub failures: usize,
}

/// Averages replicate results. `failures` is left at zero for the caller.
pub fn aggregate(results: &[TrialResult], truth: &TruthLabels) -> Result<OCReport> {
    if results.is_empty() {
        return Err(Error::Contract("cannot aggregate zero trial results".into()));
    }
    let nb = truth.num_baskets();
    if let Some(r) = results.iter().find(|r| r.baskets.len() != nb) {
        return Err(Error::Contract(format!(
            "result has {} baskets, truth labels have {nb}",
            r.baskets.len()
        )));
    }
    let reps = results.len();
    let mut stops = vec![0usize; nb];
    let mut rejects = vec![0usize; nb];
    let mut enrolled = vec![0usize; nb];
    let (mut correct, mut any_false_reject, mut duration) = (0usize, 0usize, 0.0);
    for res in results {
        let mut false_reject = false;
        for (b, o) in res.baskets.iter().enumerate() {
            stops[b] += o.stopped_early as usize;
            rejects[b] += o.final_reject as usize;
            enrolled[b] += o.enrolled;
            correct += (o.final_reject != truth.null_true(b)) as usize;
            false_reject |= o.final_reject && truth.null_true(b);
        }
        any_false_reject += false_reject as usize;
        duration += res.duration;
    }
    let baskets = (0..nb)
        .map(|b| BasketOC {
            pet: Proportion::from_count(stops[b], reps),
            ess: enrolled[b] as f64 / reps as f64,
            null_true: truth.null_true(b),
            rejection: Proportion::from_count(rejects[b], reps),
        })
        .collect();
    let any_null = (0..nb).any(|b| truth.null_true(b));
    Ok(OCReport {
        baskets,
        etd: duration / reps as f64,
        ecd: correct as f64 / reps as f64,
        trialwise_alpha: any_null.then(|| Proportion::from_count(any_false_reject, reps)),
        replicates: reps,
        failures: 0,
    })
}
