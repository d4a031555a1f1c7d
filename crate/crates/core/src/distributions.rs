//! Beta and Weibull primitives.
//!
//! Everything here is a pure function of its arguments. The Jensen-Shannon
//! divergence uses a fixed midpoint rule on a graded grid that is built once
//! and shared read-only.

use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Upper end of the uniform prior support for the Weibull shape.
pub const MAX_WEIBULL_SHAPE: f64 = 10.0;

/// Shape pair of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
            return Err(Error::Domain(format!(
                "Beta shapes must be finite and positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// `ln B(alpha, beta)`.
    pub fn ln_beta_fn(&self) -> f64 {
        ln_gamma(self.alpha) + ln_gamma(self.beta) - ln_gamma(self.alpha + self.beta)
    }
}

/// Shape (kappa) and scale (sigma) of a Weibull distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    shape: f64,
    scale: f64,
}

impl WeibullParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && shape <= MAX_WEIBULL_SHAPE) {
            return Err(Error::Domain(format!(
                "Weibull shape must lie in (0, {MAX_WEIBULL_SHAPE}], got {shape}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Domain(format!(
                "Weibull scale must be finite and positive, got {scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Cumulative hazard `(t / sigma)^kappa`.
    #[inline]
    pub(crate) fn cumulative_hazard(&self, t: f64) -> f64 {
        (t / self.scale).powf(self.shape)
    }
}

// ---------------------------------------------------------------------------
// Beta
// ---------------------------------------------------------------------------

const CF_MAX_ITER: usize = 10_000;
const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;

/// Regularized incomplete beta `I_x(alpha, beta) = P(theta <= x)`.
pub fn beta_cdf(x: f64, p: &BetaParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("beta_cdf needs x in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let (a, b) = (p.alpha, p.beta);
    let ln_front = a * x.ln() + b * (-x).ln_1p() - p.ln_beta_fn();
    let value = if x > a / (a + b) {
        1.0 - (ln_front.exp() / b) * incbeta_cf(b, a, 1.0 - x)?
    } else {
        (ln_front.exp() / a) * incbeta_cf(a, b, x)?
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Continued fraction for the incomplete beta, modified Lentz evaluation.
fn incbeta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(Error::Numerical(format!(
        "incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})"
    )))
}

/// Log density of a Beta distribution on the open unit interval.
pub fn beta_log_pdf(x: f64, p: &BetaParams) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("beta_log_pdf needs x in (0, 1), got {x}")));
    }
    Ok((p.alpha - 1.0) * x.ln() + (p.beta - 1.0) * (-x).ln_1p() - p.ln_beta_fn())
}

// ---------------------------------------------------------------------------
// Jensen-Shannon divergence
// ---------------------------------------------------------------------------

/// Cells of the production midpoint rule.
pub const JSD_CELLS: usize = 4096;
/// Grading exponent of the map `x = s^k / (s^k + (1-s)^k)`.
const JSD_GRADING: f64 = 10.0;
/// Largest accepted Richardson error estimate.
const JSD_TOLERANCE: f64 = 1e-6;

/// Precomputed `ln x`, `ln(1-x)` and `ln dx/ds` at the midpoint of every cell.
#[derive(Debug)]
struct GradedGrid {
    ln_x: Vec<f64>,
    ln_1mx: Vec<f64>,
    ln_jac: Vec<f64>,
}

impl GradedGrid {
    fn new(cells: usize) -> Self {
        let k = JSD_GRADING;
        let mut ln_x = Vec::with_capacity(cells);
        let mut ln_1mx = Vec::with_capacity(cells);
        let mut ln_jac = Vec::with_capacity(cells);
        for i in 0..cells {
            let s = (i as f64 + 0.5) / cells as f64;
            let ls = s.ln();
            let l1s = (-s).ln_1p();
            let den = log_add_exp(k * ls, k * l1s);
            ln_x.push(k * ls - den);
            ln_1mx.push(k * l1s - den);
            ln_jac.push(k.ln() + (k - 1.0) * (ls + l1s) - 2.0 * den);
        }
        Self { ln_x, ln_1mx, ln_jac }
    }

    /// Midpoint-rule JSD (natural log) on this grid.
    fn jsd(&self, p: &BetaParams, q: &BetaParams) -> f64 {
        let (lbp, lbq) = (p.ln_beta_fn(), q.ln_beta_fn());
        let mut sum = 0.0;
        for i in 0..self.ln_x.len() {
            let (lx, l1x, lj) = (self.ln_x[i], self.ln_1mx[i], self.ln_jac[i]);
            let lp = (p.alpha - 1.0) * lx + (p.beta - 1.0) * l1x - lbp;
            let lq = (q.alpha - 1.0) * lx + (q.beta - 1.0) * l1x - lbq;
            let lm = log_add_exp(lp, lq) - std::f64::consts::LN_2;
            // p ln(p/m) -> 0 as p -> 0, exp underflow gives exactly that.
            sum += 0.5 * (lp + lj).exp() * (lp - lm) + 0.5 * (lq + lj).exp() * (lq - lm);
        }
        sum / self.ln_x.len() as f64
    }
}

fn grid(cells: usize) -> &'static GradedGrid {
    static FINE: OnceLock<GradedGrid> = OnceLock::new();
    static COARSE: OnceLock<GradedGrid> = OnceLock::new();
    match cells {
        JSD_CELLS => FINE.get_or_init(|| GradedGrid::new(JSD_CELLS)),
        c if c == JSD_CELLS / 2 => COARSE.get_or_init(|| GradedGrid::new(JSD_CELLS / 2)),
        _ => unreachable!("only the production grids are cached"),
    }
}

/// Jensen-Shannon divergence between two Beta densities, natural log.
///
/// The result lies in `[0, ln 2]`. Identical parameters short-circuit to 0.
/// Fails if the Richardson estimate from a half-resolution pass exceeds 1e-6.
pub fn jsd_beta(p: &BetaParams, q: &BetaParams) -> Result<f64> {
    if p == q {
        return Ok(0.0);
    }
    let fine = grid(JSD_CELLS).jsd(p, q);
    let coarse = grid(JSD_CELLS / 2).jsd(p, q);
    let err = (fine - coarse).abs() / 3.0;
    if !fine.is_finite() || err > JSD_TOLERANCE {
        return Err(Error::Numerical(format!(
            "JSD quadrature did not converge for {p:?} vs {q:?} (estimate {fine}, error {err:e})"
        )));
    }
    Ok(fine.clamp(0.0, std::f64::consts::LN_2))
}

/// Same rule as [`jsd_beta`] with an arbitrary cell count and no error check.
pub fn jsd_beta_cells(p: &BetaParams, q: &BetaParams, cells: usize) -> f64 {
    GradedGrid::new(cells).jsd(p, q)
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

// ---------------------------------------------------------------------------
// Weibull
// ---------------------------------------------------------------------------

/// `F(t) = 1 - exp(-(t/sigma)^kappa)`.
pub fn weibull_cdf(t: f64, w: &WeibullParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("weibull_cdf needs t >= 0, got {t}")));
    }
    Ok(-(-w.cumulative_hazard(t)).exp_m1())
}

/// Inverse-transform draw `sigma * (-ln(1-u))^(1/kappa)`.
pub fn weibull_sample(w: &WeibullParams, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("weibull_sample needs u in (0, 1), got {u}")));
    }
    Ok(w.scale * (-(-u).ln_1p()).powf(1.0 / w.shape))
}

pub fn weibull_log_pdf(t: f64, w: &WeibullParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("weibull_log_pdf needs t > 0, got {t}")));
    }
    let z = (t / w.scale).ln();
    Ok(w.shape.ln() - w.scale.ln() + (w.shape - 1.0) * z - (w.shape * z).exp())
}

pub fn weibull_log_survival(t: f64, w: &WeibullParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("weibull_log_survival needs t >= 0, got {t}")));
    }
    Ok(-w.cumulative_hazard(t))
}

/// Scale that gives response probability `rate` by time `window`:
/// solves `F(window; shape, sigma) = rate`.
pub fn weibull_scale_for_rate(rate: f64, shape: f64, window: f64) -> Result<f64> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Domain(format!("response rate must lie in (0, 1), got {rate}")));
    }
    if !(shape > 0.0 && window > 0.0) {
        return Err(Error::Domain(format!(
            "shape and window must be positive, got shape={shape}, window={window}"
        )));
    }
    Ok(window / (-(-rate).ln_1p()).powf(1.0 / shape))
}
