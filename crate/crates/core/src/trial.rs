//! Simulation of one basket trial: Poisson accrual, Weibull response times,
//! interim futility analyses under a missing-data strategy, and a final
//! efficacy analysis per surviving basket.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::borrowing::{
    borrowed_posterior, efficacy_probability, futility_probability, BasketCounts, BorrowConfig,
    JsdCache, PriorSpec,
};
use crate::distributions::{weibull_cdf, weibull_sample, weibull_scale_for_rate, WeibullParams};
use crate::error::{Error, Result};
use crate::rng::Substreams;
use crate::survival::{mi_futility, FollowUpRecord, ImputationModelKind, McmcConfig, MiDesign};

/// Slack (months) when comparing follow-up against event times that were
/// themselves computed as `arrival + time`.
const TIME_EPS: f64 = 1e-9;

/// How responses that are still pending at an interim are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Pending responses count as non-responses.
    NI,
    /// Only patients with a known outcome are evaluated.
    OD,
    /// Accrual pauses until every enrolled outcome is known.
    CD,
    /// Multiple imputation, one Weibull model for all baskets.
    MI,
    /// Multiple imputation with basket as a covariate.
    MIC,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Self::NI, Self::OD, Self::CD, Self::MI, Self::MIC];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NI => "NI",
            Self::OD => "OD",
            Self::CD => "CD",
            Self::MI => "MI",
            Self::MIC => "MIC",
        }
    }

    pub fn uses_mcmc(&self) -> bool {
        matches!(self, Self::MI | Self::MIC)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}' (expected NI, OD, CD, MI or MIC)")))
    }
}

/// Data-generating scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub true_shape: f64,
    pub true_scales: Vec<f64>,
    /// Response window `T`, months.
    pub window: f64,
    /// Patients per month, per basket.
    pub accrual_rate: f64,
    pub basket_size: usize,
    pub phi: f64,
}

impl ScenarioSpec {
    /// Scenario whose baskets have the given `T`-month response rates.
    pub fn from_rates(
        rates: &[f64],
        shape: f64,
        window: f64,
        accrual_rate: f64,
        basket_size: usize,
        phi: f64,
    ) -> Result<Self> {
        let true_scales = rates
            .iter()
            .map(|&r| weibull_scale_for_rate(r, shape, window))
            .collect::<Result<Vec<_>>>()?;
        let scn = Self { true_shape: shape, true_scales, window, accrual_rate, basket_size, phi };
        scn.validate()?;
        Ok(scn)
    }

    pub fn num_baskets(&self) -> usize {
        self.true_scales.len()
    }

    pub fn weibull(&self, basket: usize) -> Result<WeibullParams> {
        WeibullParams::new(self.true_shape, self.true_scales[basket])
    }

    /// True response probabilities `F(T)`.
    pub fn true_rates(&self) -> Result<Vec<f64>> {
        (0..self.num_baskets()).map(|b| weibull_cdf(self.window, &self.weibull(b)?)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_baskets() < 2 {
            return Err(Error::Config("a scenario needs at least two baskets".into()));
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(Error::Config(format!("response window must be > 0, got {}", self.window)));
        }
        if !(self.accrual_rate > 0.0 && self.accrual_rate.is_finite()) {
            return Err(Error::Config(format!("accrual rate must be > 0, got {}", self.accrual_rate)));
        }
        if self.basket_size == 0 || self.basket_size > u32::MAX as usize {
            return Err(Error::Config(format!("invalid basket size {}", self.basket_size)));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(Error::Config(format!("phi must lie in (0, 1), got {}", self.phi)));
        }
        for (b, rate) in self.true_rates()?.into_iter().enumerate() {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::Config(format!("basket {b} has degenerate response rate {rate}")));
            }
        }
        Ok(())
    }
}

/// Decision rule and analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub prior: PriorSpec,
    pub borrow: BorrowConfig,
    pub gamma_interim: f64,
    pub gamma_final: f64,
    /// Enrollment counts at which each basket has an interim analysis.
    pub interim_counts: Vec<usize>,
    pub strategy: Strategy,
    pub mcmc: McmcConfig,
}

impl DesignSpec {
    pub fn validate(&self, basket_size: usize) -> Result<()> {
        self.prior.validate()?;
        self.borrow.validate()?;
        self.mcmc.validate()?;
        for (name, g) in [("gamma_interim", self.gamma_interim), ("gamma_final", self.gamma_final)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {g}")));
            }
        }
        let mut prev = 0;
        for &k in &self.interim_counts {
            if k <= prev || k >= basket_size {
                return Err(Error::Config(format!(
                    "interim counts {:?} must be strictly increasing and within 1..{basket_size}",
                    self.interim_counts
                )));
            }
            prev = k;
        }
        Ok(())
    }
}

/// One simulated patient. `arrival` is calendar time in months.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientRecord {
    pub basket: usize,
    pub arrival: f64,
    pub latent_response_time: f64,
}

impl PatientRecord {
    pub fn responds(&self, window: f64) -> bool {
        self.latent_response_time <= window
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasketOutcome {
    pub stopped_early: bool,
    /// Zero-based index of the interim that stopped the basket.
    pub stop_interim: Option<usize>,
    pub enrolled: usize,
    pub final_reject: bool,
    /// Calendar time of the stop or of the final analysis.
    pub decision_time: f64,
}

/// Record of one analysis, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisLog {
    pub basket: usize,
    pub time: f64,
    /// `None` for the final analysis.
    pub interim: Option<usize>,
    /// Futility probability at interims, efficacy probability at the final.
    pub probability: f64,
    /// Pending records of the analysed basket in the snapshot.
    pub target_missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub baskets: Vec<BasketOutcome>,
    pub duration: f64,
    pub analyses: Vec<AnalysisLog>,
    pub mcmc_warnings: usize,
}

/// Enrollment triggers: halfway, then evenly spaced over the second half.
pub fn interim_schedule(basket_size: usize, num_interims: usize) -> Result<Vec<usize>> {
    let half = basket_size / 2;
    let step = (basket_size - half) / 3;
    let schedule = match num_interims {
        1 => vec![half],
        3 => vec![half, half + step, half + 2 * step],
        _ => {
            return Err(Error::Config(format!(
                "unsupported number of interims {num_interims} (expected 1 or 3)"
            )))
        }
    };
    if half == 0 || (num_interims == 3 && step == 0) {
        return Err(Error::Config(format!(
            "basket size {basket_size} too small for {num_interims} interim(s)"
        )));
    }
    Ok(schedule)
}

/// Patients of one basket from its own stream.
pub fn generate_basket_patients<R: Rng + ?Sized>(
    scn: &ScenarioSpec,
    basket: usize,
    rng: &mut R,
) -> Result<Vec<PatientRecord>> {
    let gaps = Exp::new(scn.accrual_rate)
        .map_err(|e| Error::Config(format!("accrual rate {}: {e}", scn.accrual_rate)))?;
    let w = scn.weibull(basket)?;
    let mut arrival = 0.0;
    let mut out = Vec::with_capacity(scn.basket_size);
    for _ in 0..scn.basket_size {
        arrival += gaps.sample(rng);
        let u = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        out.push(PatientRecord { basket, arrival, latent_response_time: weibull_sample(&w, u)? });
    }
    Ok(out)
}

/// All baskets' patients, each basket drawn from its own substream.
pub fn generate_basket_data(scn: &ScenarioSpec, streams: &Substreams) -> Result<Vec<PatientRecord>> {
    let mut all = Vec::with_capacity(scn.num_baskets() * scn.basket_size);
    for b in 0..scn.num_baskets() {
        all.extend(generate_basket_patients(scn, b, &mut streams.patient_data(b))?);
    }
    Ok(all)
}

/// Follow-up state of every patient enrolled by `time`.
pub fn snapshot_at(time: f64, patients: &[PatientRecord], window: f64) -> Result<Vec<FollowUpRecord>> {
    if !(time >= 0.0) {
        return Err(Error::Contract(format!("snapshot time must be >= 0, got {time}")));
    }
    let mut out = Vec::new();
    for p in patients.iter().filter(|p| p.arrival <= time) {
        let c = (time - p.arrival).min(window);
        let t = p.latent_response_time;
        let rec = if t <= window && t <= c + TIME_EPS {
            FollowUpRecord::new(p.basket, t, true, false)?
        } else if c < window - TIME_EPS {
            FollowUpRecord::new(p.basket, c, false, true)?
        } else {
            FollowUpRecord::new(p.basket, window, false, false)?
        };
        out.push(rec);
    }
    Ok(out)
}

/// Per-basket counts under NI or OD.
pub fn effective_counts(
    snapshot: &[FollowUpRecord],
    strategy: Strategy,
    num_baskets: usize,
) -> Result<Vec<BasketCounts>> {
    let include_missing = match strategy {
        Strategy::NI => true,
        Strategy::OD => false,
        other => {
            return Err(Error::Contract(format!("effective_counts is undefined for {other}")))
        }
    };
    let mut responders = vec![0u32; num_baskets];
    let mut evaluated = vec![0u32; num_baskets];
    for rec in snapshot {
        if rec.basket >= num_baskets {
            return Err(Error::Contract(format!("record for unknown basket {}", rec.basket)));
        }
        if rec.missing && !include_missing {
            continue;
        }
        evaluated[rec.basket] += 1;
        responders[rec.basket] += rec.responded as u32;
    }
    responders.into_iter().zip(evaluated).map(|(r, n)| BasketCounts::new(r, n)).collect()
}

/// Interim futility probability for `target` under the design's strategy.
pub(crate) fn interim_futility<R: Rng + ?Sized>(
    snapshot: &[FollowUpRecord],
    scn: &ScenarioSpec,
    design: &DesignSpec,
    target: usize,
    rng: &mut R,
    cache: &mut JsdCache,
) -> Result<(f64, Vec<String>)> {
    let nb = scn.num_baskets();
    let mut observed = |strategy| -> Result<f64> {
        let counts = effective_counts(snapshot, strategy, nb)?;
        let post = borrowed_posterior(target, &design.prior, &design.borrow, &counts, cache)?;
        futility_probability(&post, scn.phi)
    };
    match design.strategy {
        Strategy::NI => Ok((observed(Strategy::NI)?, vec![])),
        Strategy::OD | Strategy::CD => Ok((observed(Strategy::OD)?, vec![])),
        Strategy::MI | Strategy::MIC => {
            let kind = if design.strategy == Strategy::MI {
                ImputationModelKind::Shared
            } else {
                ImputationModelKind::BasketCovariate
            };
            let mi = MiDesign {
                kind,
                num_baskets: nb,
                prior: &design.prior,
                borrow: &design.borrow,
                mcmc: &design.mcmc,
                phi: scn.phi,
                window: scn.window,
            };
            let est = mi_futility(snapshot, &mi, target, rng, cache)?;
            Ok((est.probability, est.warnings))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Active,
    Stopped,
    Finished,
}

struct BasketState {
    latent: Vec<f64>,
    /// Current arrival times; entries past a pending pause are provisional.
    arrival: Vec<f64>,
    next_interim: usize,
    status: Status,
    outcome: BasketOutcome,
}

impl BasketState {
    /// Time at which the outcomes of the first `m` patients are all known.
    fn resolution_time(&self, m: usize, window: f64) -> f64 {
        (0..m).map(|i| self.arrival[i] + self.latent[i].min(window)).fold(0.0, f64::max)
    }
}

struct Sim<'a> {
    scn: &'a ScenarioSpec,
    design: &'a DesignSpec,
    baskets: Vec<BasketState>,
}

impl Sim<'_> {
    fn n(&self) -> usize {
        self.scn.basket_size
    }

    /// Patients that can be enrolled in basket `b` by `time`, ignoring arrivals.
    fn enrollment_cap(&self, b: usize, time: f64) -> usize {
        let s = &self.baskets[b];
        match s.status {
            Status::Stopped => s.outcome.enrolled,
            Status::Finished => self.n(),
            Status::Active => match self.design.interim_counts.get(s.next_interim) {
                // a CD basket waiting for its analysis enrolls nobody past the trigger
                Some(&k) if self.design.strategy == Strategy::CD && s.arrival[k - 1] <= time => k,
                _ => self.n(),
            },
        }
    }

    fn snapshot(&self, time: f64) -> Result<Vec<FollowUpRecord>> {
        let mut enrolled = Vec::new();
        for (b, s) in self.baskets.iter().enumerate() {
            let cap = self.enrollment_cap(b, time);
            enrolled.extend((0..cap).map(|i| PatientRecord {
                basket: b,
                arrival: s.arrival[i],
                latent_response_time: s.latent[i],
            }));
        }
        snapshot_at(time, &enrolled, self.scn.window)
    }

    /// Next event of an active basket: (time, interim index or None for final).
    fn next_event(&self, b: usize) -> Option<(f64, Option<usize>)> {
        let s = &self.baskets[b];
        if s.status != Status::Active {
            return None;
        }
        let w = self.scn.window;
        Some(match self.design.interim_counts.get(s.next_interim) {
            Some(&k) if self.design.strategy == Strategy::CD => {
                (s.resolution_time(k, w), Some(s.next_interim))
            }
            Some(&k) => (s.arrival[k - 1], Some(s.next_interim)),
            None => (s.resolution_time(self.n(), w), None),
        })
    }
}

/// Simulates one trial. Patient data come from per-basket substreams, so
/// every strategy sees the same patients for a given replicate.
pub fn run_trial(scn: &ScenarioSpec, design: &DesignSpec, streams: &Substreams) -> Result<TrialResult> {
    run_trial_cached(scn, design, streams, &mut JsdCache::new())
}

pub fn run_trial_cached(
    scn: &ScenarioSpec,
    design: &DesignSpec,
    streams: &Substreams,
    cache: &mut JsdCache,
) -> Result<TrialResult> {
    scn.validate()?;
    design.validate(scn.basket_size)?;
    let nb = scn.num_baskets();
    let n = scn.basket_size;
    let mut baskets = Vec::with_capacity(nb);
    for b in 0..nb {
        let patients = generate_basket_patients(scn, b, &mut streams.patient_data(b))?;
        baskets.push(BasketState {
            latent: patients.iter().map(|p| p.latent_response_time).collect(),
            arrival: patients.iter().map(|p| p.arrival).collect(),
            next_interim: 0,
            status: Status::Active,
            outcome: BasketOutcome {
                stopped_early: false,
                stop_interim: None,
                enrolled: n,
                final_reject: false,
                decision_time: 0.0,
            },
        });
    }
    let mut sim = Sim { scn, design, baskets };
    let mut analyses = Vec::new();
    let mut mcmc_warnings = 0;

    loop {
        // earliest pending event; ties go to the lower basket index
        let mut next: Option<(f64, usize, Option<usize>)> = None;
        for b in 0..nb {
            if let Some((t, interim)) = sim.next_event(b) {
                if next.is_none_or(|(best, _, _)| t < best) {
                    next = Some((t, b, interim));
                }
            }
        }
        let Some((time, b, interim)) = next else { break };
        let snapshot = sim.snapshot(time)?;
        let target_missing = snapshot.iter().filter(|r| r.basket == b && r.missing).count();

        match interim {
            Some(j) => {
                let k = design.interim_counts[j];
                if design.strategy == Strategy::CD && target_missing > 0 {
                    return Err(Error::Contract(format!(
                        "complete-data analysis of basket {b} has {target_missing} pending records"
                    )));
                }
                let mut rng = streams.analysis(analyses.len());
                let (prob, warnings) = interim_futility(&snapshot, scn, design, b, &mut rng, cache)?;
                mcmc_warnings += warnings.len();
                analyses.push(AnalysisLog { basket: b, time, interim: Some(j), probability: prob, target_missing });
                let s = &mut sim.baskets[b];
                if prob > design.gamma_interim {
                    s.status = Status::Stopped;
                    s.outcome = BasketOutcome {
                        stopped_early: true,
                        stop_interim: Some(j),
                        enrolled: k,
                        final_reject: false,
                        decision_time: time,
                    };
                } else {
                    s.next_interim += 1;
                    if design.strategy == Strategy::CD {
                        // accrual resumes now; later patients keep their gaps
                        let shift = time - s.arrival[k - 1];
                        s.arrival[k..].iter_mut().for_each(|a| *a += shift);
                    }
                }
            }
            None => {
                let counts = effective_counts(&snapshot, Strategy::OD, nb)?;
                let post = borrowed_posterior(b, &design.prior, &design.borrow, &counts, cache)?;
                let prob = efficacy_probability(&post, scn.phi)?;
                analyses.push(AnalysisLog { basket: b, time, interim: None, probability: prob, target_missing });
                let s = &mut sim.baskets[b];
                s.status = Status::Finished;
                s.outcome.final_reject = prob > design.gamma_final;
                s.outcome.decision_time = time;
            }
        }
    }

    let baskets: Vec<BasketOutcome> = sim.baskets.into_iter().map(|s| s.outcome).collect();
    let duration = baskets.iter().map(|o| o.decision_time).fold(0.0, f64::max);
    Ok(TrialResult { baskets, duration, analyses, mcmc_warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::borrowing::borrow_weights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario(rates: &[f64], lambda: f64, n: usize) -> ScenarioSpec {
        ScenarioSpec::from_rates(rates, 4.0, 3.0, lambda, n, 0.3).unwrap()
    }

    fn design(strategy: Strategy, interims: Vec<usize>) -> DesignSpec {
        DesignSpec {
            prior: PriorSpec::default(),
            borrow: BorrowConfig::default(),
            gamma_interim: 0.95,
            gamma_final: 0.975,
            interim_counts: interims,
            strategy,
            mcmc: McmcConfig::fast(),
        }
    }

    fn rec(basket: usize, x: f64, responded: bool, missing: bool) -> FollowUpRecord {
        FollowUpRecord::new(basket, x, responded, missing).unwrap()
    }

    fn patient(arrival: f64, t: f64) -> PatientRecord {
        PatientRecord { basket: 0, arrival, latent_response_time: t }
    }

    #[test]
    fn schedules() {
        assert_eq!(interim_schedule(24, 3).unwrap(), vec![12, 16, 20]);
        assert_eq!(interim_schedule(36, 3).unwrap(), vec![18, 24, 30]);
        assert_eq!(interim_schedule(24, 1).unwrap(), vec![12]);
        assert_eq!(interim_schedule(36, 1).unwrap(), vec![18]);
        assert!(interim_schedule(24, 2).is_err());
        assert!(interim_schedule(1, 1).is_err());
        assert!(interim_schedule(3, 3).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("mic".parse::<Strategy>().unwrap(), Strategy::MIC);
        assert!("XX".parse::<Strategy>().is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ScenarioSpec::from_rates(&[0.3], 4.0, 3.0, 1.0, 24, 0.3).is_err());
        assert!(ScenarioSpec::from_rates(&[0.3, 0.3], 4.0, 3.0, 0.0, 24, 0.3).is_err());
        assert!(ScenarioSpec::from_rates(&[0.3, 1.0], 4.0, 3.0, 1.0, 24, 0.3).is_err());
        let d = design(Strategy::OD, vec![12, 12]);
        assert!(d.validate(24).is_err());
        assert!(design(Strategy::OD, vec![24]).validate(24).is_err());
        assert!(design(Strategy::OD, vec![12, 16, 20]).validate(24).is_ok());
    }

    #[test]
    fn mean_arrival_of_patient_24() {
        let scn = scenario(&[0.3, 0.3], 1.5, 24);
        let reps = 10_000;
        let total: f64 = (0..reps)
            .map(|r| {
                let mut rng = Substreams::new(11, r).patient_data(0);
                generate_basket_patients(&scn, 0, &mut rng).unwrap()[23].arrival
            })
            .sum();
        // Gamma(24, rate 1.5) mean 16, sd 3.27 / sqrt(1e4)
        assert!((total / reps as f64 - 16.0).abs() < 0.2);
    }

    #[test]
    fn response_fraction_matches_rate() {
        let scn = scenario(&[0.5, 0.5], 1.5, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hits = 0;
        for _ in 0..100 {
            let ps = generate_basket_patients(&scn, 0, &mut rng).unwrap();
            hits += ps.iter().filter(|p| p.responds(3.0)).count();
        }
        assert!((hits as f64 / 1e5 - 0.50).abs() < 0.005);
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let scn = scenario(&[0.1, 0.5, 0.3], 0.5, 24);
        let a = generate_basket_data(&scn, &Substreams::new(1, 0)).unwrap();
        assert_eq!(a, generate_basket_data(&scn, &Substreams::new(1, 0)).unwrap());
        assert_ne!(a, generate_basket_data(&scn, &Substreams::new(1, 1)).unwrap());
        assert_eq!(a.len(), 72);
        for b in 0..3 {
            let ps: Vec<_> = a.iter().filter(|p| p.basket == b).collect();
            assert_eq!(ps.len(), 24);
            assert!(ps.windows(2).all(|w| w[0].arrival < w[1].arrival));
            assert!(ps.iter().all(|p| p.arrival > 0.0 && p.latent_response_time > 0.0));
        }
    }

    #[test]
    fn snapshot_cases() {
        let ps = [patient(0.0, 2.5), patient(1.0, 0.5), patient(0.5, 5.0), patient(2.5, 0.1)];
        let s = snapshot_at(2.0, &ps, 3.0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], rec(0, 2.0, false, true));
        assert_eq!(s[1], rec(0, 0.5, true, false));
        assert_eq!(s[2], rec(0, 1.5, false, true));
        let s = snapshot_at(10.0, &ps, 3.0).unwrap();
        assert!(s.iter().all(|r| !r.missing));
        assert_eq!(s[2], rec(0, 3.0, false, false));
        assert_eq!(s[0], rec(0, 2.5, true, false));
        assert!(snapshot_at(-1.0, &ps, 3.0).is_err());
    }

    #[test]
    fn snapshot_at_resolution_time_is_complete() {
        let scn = scenario(&[0.3, 0.5], 1.5, 24);
        for r in 0..200 {
            let ps = generate_basket_patients(&scn, 1, &mut Substreams::new(3, r).patient_data(1)).unwrap();
            let t = ps.iter().map(|p| p.arrival + p.latent_response_time.min(3.0)).fold(0.0, f64::max);
            assert!(snapshot_at(t, &ps, 3.0).unwrap().iter().all(|r| !r.missing));
        }
    }

    #[test]
    fn interim_follow_up_illustration() {
        // 4 patients per month, interim when patient 20 arrives
        let scn = scenario(&[0.3, 0.3], 4.0, 20);
        let reps = 40_000;
        let mut complete = 0usize;
        for r in 0..reps {
            let ps = generate_basket_patients(&scn, 0, &mut Substreams::new(9, r).patient_data(0)).unwrap();
            let t = ps[19].arrival;
            complete += ps.iter().filter(|p| p.arrival <= t - 3.0).count();
        }
        let mean = complete as f64 / reps as f64;
        // given the 20th arrival at tau the other 19 are uniform on (0, tau):
        // E = 19 E[(1 - 3/tau)+] with tau ~ Gamma(20, rate 4)
        let ln_norm = 20.0 * 4f64.ln() - statrs::function::gamma::ln_gamma(20.0);
        let h = 1e-4;
        let oracle: f64 = (0..200_000)
            .map(|i| 3.0 + (i as f64 + 0.5) * h)
            .map(|t| 19.0 * (1.0 - 3.0 / t) * (ln_norm + 19.0 * t.ln() - 4.0 * t).exp() * h)
            .sum();
        assert!((mean - oracle).abs() < 0.1, "{mean} vs {oracle}");
        // the illustrated realization (8 of 20 complete) is a typical one
        assert!((oracle - 8.0).abs() < 1.5);
    }

    #[test]
    fn effective_count_examples() {
        let mut snap = vec![rec(0, 0.4, true, false); 3];
        snap.extend(vec![rec(0, 3.0, false, false); 5]);
        snap.extend(vec![rec(0, 1.0, false, true); 12]);
        snap.push(rec(1, 1.0, false, true));
        let ni = effective_counts(&snap, Strategy::NI, 2).unwrap();
        let od = effective_counts(&snap, Strategy::OD, 2).unwrap();
        assert_eq!((ni[0].responders(), ni[0].evaluated()), (3, 20));
        assert_eq!((od[0].responders(), od[0].evaluated()), (3, 8));
        assert_eq!((ni[1].responders(), ni[1].evaluated()), (0, 1));
        assert_eq!((od[1].responders(), od[1].evaluated()), (0, 0));
        let complete: Vec<_> = snap.iter().copied().filter(|r| !r.missing).collect();
        assert_eq!(
            effective_counts(&complete, Strategy::NI, 2).unwrap(),
            effective_counts(&complete, Strategy::OD, 2).unwrap()
        );
        assert!(effective_counts(&snap, Strategy::MI, 2).is_err());
        assert!(effective_counts(&snap, Strategy::NI, 1).is_err());
    }

    #[test]
    fn strategies_coincide_on_complete_data() {
        let scn = scenario(&[0.1, 0.3], 1.5, 24);
        let snap: Vec<_> = (0..10)
            .map(|i| rec(i % 2, if i < 3 { 1.0 } else { 3.0 }, i < 3, false))
            .collect();
        let mut probs = vec![];
        for s in Strategy::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let d = design(s, vec![12]);
            probs.push(interim_futility(&snap, &scn, &d, 0, &mut rng, &mut JsdCache::new()).unwrap().0);
        }
        assert!(probs.iter().all(|&p| p == probs[0]), "{probs:?}");
        // and equal to the direct pipeline
        let counts = effective_counts(&snap, Strategy::OD, 2).unwrap();
        let w = borrow_weights(
            &crate::borrowing::basket_posteriors(&PriorSpec::default(), &counts).unwrap(),
            &BorrowConfig::default(),
        )
        .unwrap();
        let post = crate::borrowing::pooled_posterior(0, &w, &PriorSpec::default(), &counts).unwrap();
        assert_eq!(probs[0], futility_probability(&post, 0.3).unwrap());
    }

    fn check_result_invariants(res: &TrialResult, scn: &ScenarioSpec) {
        for o in &res.baskets {
            if o.stopped_early {
                assert!(o.enrolled < scn.basket_size && !o.final_reject && o.stop_interim.is_some());
            } else {
                assert_eq!(o.enrolled, scn.basket_size);
                assert!(o.stop_interim.is_none());
            }
            assert!(o.decision_time <= res.duration);
        }
        assert!(res.analyses.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn unreachable_threshold_never_stops() {
        let scn = scenario(&[0.1, 0.1], 1.5, 24);
        for s in [Strategy::NI, Strategy::OD, Strategy::CD] {
            let mut d = design(s, vec![12, 16, 20]);
            d.gamma_interim = 1.0;
            for r in 0..50 {
                let res = run_trial(&scn, &d, &Substreams::new(2, r)).unwrap();
                assert!(res.baskets.iter().all(|o| !o.stopped_early && o.enrolled == 24));
                assert_eq!(res.analyses.len(), 2 * 4);
            }
        }
    }

    #[test]
    fn cd_analyses_see_no_pending_target_records() {
        let scn = scenario(&[0.1, 0.5, 0.3], 1.5, 24);
        let d = design(Strategy::CD, vec![12, 16, 20]);
        let mut stops = 0;
        for r in 0..100 {
            let res = run_trial(&scn, &d, &Substreams::new(4, r)).unwrap();
            check_result_invariants(&res, &scn);
            assert!(res.analyses.iter().all(|a| a.target_missing == 0));
            stops += res.baskets.iter().filter(|o| o.stopped_early).count();
        }
        assert!(stops > 0);
    }

    #[test]
    fn final_decisions_agree_between_ni_and_od_without_stops() {
        let scn = scenario(&[0.3, 0.5], 1.5, 24);
        let mut ni = design(Strategy::NI, vec![12]);
        let mut od = design(Strategy::OD, vec![12]);
        ni.gamma_interim = 1.0;
        od.gamma_interim = 1.0;
        let mut rejects = 0;
        for r in 0..100 {
            let streams = Substreams::new(6, r);
            let a = run_trial(&scn, &ni, &streams).unwrap();
            let b = run_trial(&scn, &od, &streams).unwrap();
            assert_eq!(a.baskets, b.baskets);
            assert_eq!(a.duration, b.duration);
            rejects += a.baskets[1].final_reject as usize;
        }
        assert!(rejects > 0);
    }

    #[test]
    fn cd_takes_at_least_as_long_as_od() {
        let scn = scenario(&[0.1, 0.3], 1.5, 24);
        for interims in [vec![12], vec![12, 16, 20]] {
            let mut cd = design(Strategy::CD, interims.clone());
            let mut od = design(Strategy::OD, interims);
            cd.gamma_interim = 1.0;
            od.gamma_interim = 1.0;
            for r in 0..100 {
                let streams = Substreams::new(8, r);
                let a = run_trial(&scn, &cd, &streams).unwrap();
                let b = run_trial(&scn, &od, &streams).unwrap();
                assert!(a.duration >= b.duration - 1e-12);
                for (x, y) in a.baskets.iter().zip(&b.baskets) {
                    assert!(x.decision_time >= y.decision_time - 1e-12);
                }
            }
        }
    }

    #[test]
    fn ni_stops_more_often_than_od() {
        let scn = scenario(&[0.1, 0.1], 1.5, 24);
        let count = |s| {
            (0..300)
                .map(|r| {
                    let res = run_trial(&scn, &design(s, vec![12]), &Substreams::new(10, r)).unwrap();
                    check_result_invariants(&res, &scn);
                    res.baskets.iter().filter(|o| o.stopped_early).count()
                })
                .sum::<usize>()
        };
        assert!(count(Strategy::NI) > count(Strategy::OD));
    }

    #[test]
    fn imputation_strategies_run_and_are_reproducible() {
        let scn = scenario(&[0.5, 0.1], 1.5, 24);
        let mut d = design(Strategy::MIC, vec![12]);
        d.mcmc = McmcConfig { burn_in: 300, thin: 2, draws: 10, ..McmcConfig::fast() };
        for s in [Strategy::MI, Strategy::MIC] {
            d.strategy = s;
            let a = run_trial(&scn, &d, &Substreams::new(12, 0)).unwrap();
            let b = run_trial(&scn, &d, &Substreams::new(12, 0)).unwrap();
            assert_eq!(a, b);
            check_result_invariants(&a, &scn);
        }
    }

    #[test]
    fn stopped_basket_data_stay_in_pool() {
        let scn = scenario(&[0.1, 0.5], 0.5, 24);
        let d = design(Strategy::OD, vec![12]);
        for r in 0..200 {
            let streams = Substreams::new(13, r);
            let res = run_trial(&scn, &d, &streams).unwrap();
            if !(res.baskets[0].stopped_early && !res.baskets[1].stopped_early) {
                continue;
            }
            let t = res.baskets[1].decision_time;
            let ps = generate_basket_data(&scn, &streams).unwrap();
            let mut pool: Vec<_> = ps.iter().filter(|p| p.basket == 0).take(12).copied().collect();
            pool.extend(ps.iter().filter(|p| p.basket == 1).copied());
            let counts = effective_counts(&snapshot_at(t, &pool, 3.0).unwrap(), Strategy::OD, 2).unwrap();
            assert_eq!(counts[0].evaluated(), 12);
            let post = borrowed_posterior(1, &d.prior, &d.borrow, &counts, &mut JsdCache::new()).unwrap();
            let logged = res.analyses.iter().find(|a| a.basket == 1 && a.interim.is_none()).unwrap();
            assert_eq!(logged.probability, efficacy_probability(&post, 0.3).unwrap());
            return;
        }
        panic!("no replicate with basket 0 stopped and basket 1 continuing");
    }
}
