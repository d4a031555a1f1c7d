use rand::Rng;

use super::{mcmc_fit, FollowUpRecord, ImputationModelKind, McmcConfig, RegressionDraw};
use crate::borrowing::{
    borrowed_posterior, futility_probability, BasketCounts, BorrowConfig, JsdCache, PriorSpec,
};
use crate::distributions::WeibullParams;
use crate::error::{Error, Result};

/// Probability that a patient still pending at follow-up `x` responds by
/// `window`: `(F(T) - F(x)) / (1 - F(x))`.
pub fn conditional_response_prob(x: f64, window: f64, w: &WeibullParams) -> Result<f64> {
    if !(x >= 0.0 && x < window) {
        return Err(Error::Domain(format!(
            "pending follow-up must lie in [0, {window}), got {x}"
        )));
    }
    // 1 - S(T)/S(x), written on the cumulative-hazard scale
    let dh = w.cumulative_hazard(window) - w.cumulative_hazard(x);
    Ok((-(-dh).exp_m1()).clamp(0.0, 1.0))
}

/// Per-basket counts with each pending response replaced by a Bernoulli
/// draw. Every enrolled patient is evaluated; observed responses are kept.
pub fn impute_responses<R: Rng + ?Sized>(
    draw: &RegressionDraw,
    snapshot: &[FollowUpRecord],
    window: f64,
    num_baskets: usize,
    rng: &mut R,
) -> Result<Vec<BasketCounts>> {
    let mut responders = vec![0u32; num_baskets];
    let mut evaluated = vec![0u32; num_baskets];
    for rec in snapshot {
        if rec.basket >= num_baskets {
            return Err(Error::Contract(format!("record for unknown basket {}", rec.basket)));
        }
        evaluated[rec.basket] += 1;
        if rec.responded {
            responders[rec.basket] += 1;
        } else if rec.missing {
            let omega = conditional_response_prob(rec.x, window, &draw.weibull(rec.basket)?)?;
            if rng.random::<f64>() < omega {
                responders[rec.basket] += 1;
            }
        }
    }
    responders
        .into_iter()
        .zip(evaluated)
        .map(|(r, n)| BasketCounts::new(r, n))
        .collect()
}

/// Model and decision settings shared by every imputation.
#[derive(Debug, Clone, Copy)]
pub struct MiDesign<'a> {
    pub kind: ImputationModelKind,
    pub num_baskets: usize,
    pub prior: &'a PriorSpec,
    pub borrow: &'a BorrowConfig,
    pub mcmc: &'a McmcConfig,
    pub phi: f64,
    pub window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiEstimate {
    /// `P(theta_b < phi | r, w)` averaged over imputations.
    pub probability: f64,
    /// False when nothing was pending and no model was fitted.
    pub imputed: bool,
    pub warnings: Vec<String>,
}

/// Average futility probability for `target` over imputed datasets, one per
/// posterior draw. Weights are recomputed from each imputed dataset.
pub fn mi_futility_from_draws<R: Rng + ?Sized>(
    draws: &[RegressionDraw],
    snapshot: &[FollowUpRecord],
    design: &MiDesign<'_>,
    target: usize,
    rng: &mut R,
    cache: &mut JsdCache,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Contract("multiple imputation needs at least one draw".into()));
    }
    let mut total = 0.0;
    for draw in draws {
        let counts = impute_responses(draw, snapshot, design.window, design.num_baskets, rng)?;
        let post = borrowed_posterior(target, design.prior, design.borrow, &counts, cache)?;
        total += futility_probability(&post, design.phi)?;
    }
    Ok(total / draws.len() as f64)
}

/// Multiple-imputation futility probability for basket `target`.
///
/// With nothing pending the complete-data probability is returned directly
/// (every imputation would be identical).
pub fn mi_futility<R: Rng + ?Sized>(
    snapshot: &[FollowUpRecord],
    design: &MiDesign<'_>,
    target: usize,
    rng: &mut R,
    cache: &mut JsdCache,
) -> Result<MiEstimate> {
    if target >= design.num_baskets {
        return Err(Error::Contract(format!("target basket {target} out of range")));
    }
    if !snapshot.iter().any(|r| r.missing) {
        let dummy = RegressionDraw { kappa: 1.0, beta0: 0.0, betas: vec![] };
        let counts = impute_responses(&dummy, snapshot, design.window, design.num_baskets, rng)?;
        let post = borrowed_posterior(target, design.prior, design.borrow, &counts, cache)?;
        return Ok(MiEstimate {
            probability: futility_probability(&post, design.phi)?,
            imputed: false,
            warnings: vec![],
        });
    }
    let fit = mcmc_fit(snapshot, design.kind, design.num_baskets, design.mcmc, rng)?;
    let probability = mi_futility_from_draws(&fit.draws, snapshot, design, target, rng, cache)?;
    Ok(MiEstimate { probability, imputed: true, warnings: fit.warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::weibull_cdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(b: usize, x: f64, responded: bool, missing: bool) -> FollowUpRecord {
        FollowUpRecord::new(b, x, responded, missing).unwrap()
    }

    fn draw(kappa: f64, sigma: f64) -> RegressionDraw {
        RegressionDraw { kappa, beta0: sigma.ln(), betas: vec![] }
    }

    /// A small two-basket snapshot with pending patients in both baskets.
    fn toy_snapshot() -> Vec<FollowUpRecord> {
        vec![
            rec(0, 0.8, true, false),
            rec(0, 3.0, false, false),
            rec(0, 3.0, false, false),
            rec(0, 1.1, false, true),
            rec(1, 2.2, true, false),
            rec(1, 3.0, false, false),
            rec(1, 0.4, false, true),
        ]
    }

    #[test]
    fn omega_limits_and_errors() {
        let w = WeibullParams::new(4.0, 3.88).unwrap();
        let at0 = conditional_response_prob(0.0, 3.0, &w).unwrap();
        assert!((at0 - weibull_cdf(3.0, &w).unwrap()).abs() < 1e-14);
        assert!(conditional_response_prob(3.0 - 1e-12, 3.0, &w).unwrap() < 1e-9);
        assert!(conditional_response_prob(3.0, 3.0, &w).is_err());
        assert!(conditional_response_prob(-0.1, 3.0, &w).is_err());
    }

    #[test]
    fn omega_strictly_decreasing() {
        for kappa in [0.5, 1.0, 4.0] {
            let w = WeibullParams::new(kappa, 3.5).unwrap();
            let vals: Vec<f64> = (0..30)
                .map(|i| conditional_response_prob(i as f64 * 0.1, 3.0, &w).unwrap())
                .collect();
            for p in vals.windows(2) {
                assert!(p[1] < p[0], "kappa {kappa}: {vals:?}");
            }
        }
    }

    #[test]
    fn omega_matches_conditional_sampling() {
        let w = WeibullParams::new(4.0, 3.88).unwrap();
        let exact = conditional_response_prob(1.5, 3.0, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (mut kept, mut hits) = (0usize, 0usize);
        while kept < 1_000_000 {
            let t = crate::distributions::weibull_sample(&w, rng.random_range(1e-15..1.0)).unwrap();
            if t > 1.5 {
                kept += 1;
                if t <= 3.0 {
                    hits += 1;
                }
            }
        }
        let mc = hits as f64 / kept as f64;
        let se = (mc * (1.0 - mc) / kept as f64).sqrt();
        assert!((exact - mc).abs() < 3.0 * se, "{exact} vs {mc}");
    }

    #[test]
    fn nothing_pending_keeps_observed_counts() {
        let snap = vec![rec(0, 1.0, true, false), rec(0, 3.0, false, false), rec(1, 3.0, false, false)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let c = impute_responses(&draw(4.0, 3.88), &snap, 3.0, 2, &mut rng).unwrap();
            assert_eq!(c, vec![BasketCounts::new(1, 2).unwrap(), BasketCounts::new(0, 1).unwrap()]);
        }
    }

    #[test]
    fn imputed_responders_follow_binomial() {
        // F(T) = 0.5 for every pending patient at x = 0
        let sigma = crate::distributions::weibull_scale_for_rate(0.5, 4.0, 3.0).unwrap();
        let n = 40;
        let snap: Vec<_> = (0..n).map(|_| rec(0, 0.0, false, true)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reps = 10_000;
        let total: u64 = (0..reps)
            .map(|_| impute_responses(&draw(4.0, sigma), &snap, 3.0, 1, &mut rng).unwrap()[0].responders() as u64)
            .sum();
        let mean = total as f64 / reps as f64;
        assert!((mean - n as f64 / 2.0).abs() < 3.0 * (n as f64).sqrt() / 2.0, "{mean}");
        // a much tighter check on the mean itself
        assert!((mean - 20.0).abs() < 4.0 * (10.0f64 / reps as f64).sqrt(), "{mean}");
    }

    #[test]
    fn vanishing_omega_imputes_nothing() {
        let snap: Vec<_> = (0..20).map(|i| rec(0, 0.1 * i as f64, false, true)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = impute_responses(&draw(4.0, 1e6), &snap, 3.0, 1, &mut rng).unwrap();
        assert_eq!(c[0].responders(), 0);
        assert_eq!(c[0].evaluated(), 20);
    }

    fn design<'a>(prior: &'a PriorSpec, borrow: &'a BorrowConfig, mcmc: &'a McmcConfig) -> MiDesign<'a> {
        MiDesign {
            kind: ImputationModelKind::Shared,
            num_baskets: 2,
            prior,
            borrow,
            mcmc,
            phi: 0.3,
            window: 3.0,
        }
    }

    #[test]
    fn complete_data_short_circuits() {
        let (prior, borrow, mcmc) = (PriorSpec::default(), BorrowConfig::default(), McmcConfig::fast());
        let d = design(&prior, &borrow, &mcmc);
        let snap = vec![rec(0, 1.0, true, false), rec(0, 3.0, false, false), rec(1, 3.0, false, false)];
        let mut cache = JsdCache::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let est = mi_futility(&snap, &d, 0, &mut rng, &mut cache).unwrap();
        let counts = [BasketCounts::new(1, 2).unwrap(), BasketCounts::new(0, 1).unwrap()];
        let post = borrowed_posterior(0, &prior, &borrow, &counts, &mut cache).unwrap();
        assert_eq!(est.probability, futility_probability(&post, 0.3).unwrap());
        assert!(!est.imputed);

        // every draw gives the same value too
        let draws = vec![draw(4.0, 3.0), draw(2.0, 5.0), draw(1.0, 1.0)];
        let avg = mi_futility_from_draws(&draws, &snap, &d, 0, &mut rng, &mut cache).unwrap();
        assert!((avg - est.probability).abs() < 1e-15);
    }

    #[test]
    fn single_draw_equals_single_imputation() {
        let (prior, borrow, mcmc) = (PriorSpec::default(), BorrowConfig::default(), McmcConfig::fast());
        let d = design(&prior, &borrow, &mcmc);
        let snap = toy_snapshot();
        let dr = draw(4.0, 3.5);
        let mut cache = JsdCache::new();
        let got = mi_futility_from_draws(std::slice::from_ref(&dr), &snap, &d, 1, &mut ChaCha8Rng::seed_from_u64(4), &mut cache)
            .unwrap();
        let counts = impute_responses(&dr, &snap, 3.0, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let post = borrowed_posterior(1, &prior, &borrow, &counts, &mut cache).unwrap();
        assert_eq!(got, futility_probability(&post, 0.3).unwrap());
    }

    #[test]
    fn matches_enumeration_over_imputation_patterns() {
        let (prior, borrow, mcmc) = (PriorSpec::default(), BorrowConfig::default(), McmcConfig::fast());
        let d = design(&prior, &borrow, &mcmc);
        let snap = toy_snapshot();
        let draws = [draw(4.0, 3.2), draw(3.1, 4.4), draw(5.5, 3.9)];
        let mut cache = JsdCache::new();

        // observed part: basket 0 has 1/3 with one pending, basket 1 has 1/2 with one pending
        let pending = [(0usize, 1.1), (1usize, 0.4)];
        let base = [(1u32, 4u32), (1u32, 3u32)];
        let mut exact = 0.0;
        let mut var_sum = 0.0;
        for dr in &draws {
            let omegas: Vec<f64> = pending
                .iter()
                .map(|&(b, x)| conditional_response_prob(x, 3.0, &dr.weibull(b).unwrap()).unwrap())
                .collect();
            let (mut mean, mut second) = (0.0, 0.0);
            for y0 in 0..2u32 {
                for y1 in 0..2u32 {
                    let p = (if y0 == 1 { omegas[0] } else { 1.0 - omegas[0] })
                        * (if y1 == 1 { omegas[1] } else { 1.0 - omegas[1] });
                    let counts = [
                        BasketCounts::new(base[0].0 + y0, base[0].1).unwrap(),
                        BasketCounts::new(base[1].0 + y1, base[1].1).unwrap(),
                    ];
                    let post = borrowed_posterior(0, &prior, &borrow, &counts, &mut cache).unwrap();
                    let f = futility_probability(&post, 0.3).unwrap();
                    mean += p * f;
                    second += p * f * f;
                }
            }
            exact += mean / draws.len() as f64;
            var_sum += second - mean * mean;
        }

        let reps = 3000;
        let many: Vec<RegressionDraw> = (0..reps).flat_map(|_| draws.iter().cloned()).collect();
        let got = mi_futility_from_draws(&many, &snap, &d, 0, &mut ChaCha8Rng::seed_from_u64(5), &mut cache)
            .unwrap();
        // variance of the mean of J independent, per-draw-cycled terms
        let j = many.len() as f64;
        let se = (var_sum * reps as f64).sqrt() / j;
        assert!((got - exact).abs() < 2.0 * se, "{got} vs {exact} (se {se})");
    }

    #[test]
    fn fitted_imputation_is_reproducible() {
        let (prior, borrow, mcmc) = (PriorSpec::default(), BorrowConfig::default(), McmcConfig::fast());
        let d = MiDesign { kind: ImputationModelKind::BasketCovariate, ..design(&prior, &borrow, &mcmc) };
        let snap = toy_snapshot();
        let run = |seed| {
            let mut cache = JsdCache::new();
            mi_futility(&snap, &d, 0, &mut ChaCha8Rng::seed_from_u64(seed), &mut cache).unwrap()
        };
        let a = run(6);
        assert!(a.imputed);
        assert!((0.0..=1.0).contains(&a.probability));
        assert_eq!(a, run(6));
    }
}
