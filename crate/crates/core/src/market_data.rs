//! Market term structures: discount curve, CDS quotes, bootstrapped
//! hazard/survival curve, futures forward curve and ATM implied vols.
//!
//! All tenors are ideal year fractions (month = 1/12). Curves are
//! immutable after construction and safe to share across threads.

use crate::error::{EngineError, Result};
use crate::math::roots::brent;

/// Hazard rates are searched in `(0, HAZARD_CAP]` during bootstrap.
const HAZARD_CAP: f64 = 10.0;

/// Continuously-compounded zero curve, linear in the zero rate between
/// nodes and flat beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroCurve {
    nodes: Vec<(f64, f64)>,
}

impl ZeroCurve {
    pub fn new(nodes: Vec<(f64, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(EngineError::invalid("zero curve", "no nodes"));
        }
        let mut prev = 0.0;
        for (i, &(t, r)) in nodes.iter().enumerate() {
            if !t.is_finite() || !r.is_finite() {
                return Err(EngineError::invalid(
                    "zero curve",
                    format!("non-finite node {i}"),
                ));
            }
            if t <= prev || t <= 0.0 {
                return Err(EngineError::invalid(
                    "zero curve",
                    format!("tenors must be strictly increasing and positive (node {i}: {t})"),
                ));
            }
            prev = t;
        }
        Ok(ZeroCurve { nodes })
    }

    /// Flat curve at rate `r`.
    pub fn flat(r: f64) -> Self {
        ZeroCurve {
            nodes: vec![(1.0, r)],
        }
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    /// Interpolated zero rate at `t` (flat extrapolation on both ends).
    pub fn zero_rate(&self, t: f64) -> f64 {
        let n = &self.nodes;
        if t <= n[0].0 {
            return n[0].1;
        }
        if t >= n[n.len() - 1].0 {
            return n[n.len() - 1].1;
        }
        let k = n.partition_point(|&(ti, _)| ti < t);
        let (t0, r0) = n[k - 1];
        let (t1, r1) = n[k];
        r0 + (r1 - r0) * (t - t0) / (t1 - t0)
    }

    /// Discount factor `D(0, t) = exp(-z(t) t)`.
    pub fn discount_factor(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(EngineError::domain(format!(
                "discount_factor: negative tenor {t}"
            )));
        }
        Ok((-self.zero_rate(t) * t).exp())
    }

    /// Forward discount factor `D(s, t) = D(0,t) / D(0,s)` for `s <= t`.
    pub fn forward_discount(&self, s: f64, t: f64) -> Result<f64> {
        if t < s {
            return Err(EngineError::domain(format!(
                "forward_discount: t {t} < s {s}"
            )));
        }
        Ok(self.discount_factor(t)? / self.discount_factor(s)?)
    }
}

/// Running-spread CDS quotes for one counterparty.
#[derive(Debug, Clone, PartialEq)]
pub struct CdsQuoteSet {
    /// Quote maturities in years, strictly increasing.
    pub maturities: Vec<f64>,
    /// Spreads as decimals per year (100bp = 0.01).
    pub spreads: Vec<f64>,
    /// Recovery fraction used for stripping, in [0, 1).
    pub recovery: f64,
    /// Premium payments per year.
    pub payments_per_year: u32,
}

impl CdsQuoteSet {
    pub fn new(
        maturities: Vec<f64>,
        spreads: Vec<f64>,
        recovery: f64,
        payments_per_year: u32,
    ) -> Result<Self> {
        if maturities.len() != spreads.len() || maturities.is_empty() {
            return Err(EngineError::invalid(
                "cds quotes",
                "maturities and spreads must be non-empty and equal length",
            ));
        }
        let mut prev = 0.0;
        for (i, &m) in maturities.iter().enumerate() {
            if m <= prev {
                return Err(EngineError::invalid(
                    "cds quotes",
                    format!("maturities must be strictly increasing and positive (index {i})"),
                ));
            }
            prev = m;
        }
        if let Some(i) = spreads.iter().position(|s| *s < 0.0 || !s.is_finite()) {
            return Err(EngineError::invalid(
                "cds quotes",
                format!("spread at index {i} is negative or non-finite"),
            ));
        }
        if !(0.0..1.0).contains(&recovery) {
            return Err(EngineError::invalid(
                "cds quotes",
                format!("recovery {recovery} outside [0, 1)"),
            ));
        }
        if payments_per_year == 0 {
            return Err(EngineError::invalid(
                "cds quotes",
                "payment frequency is zero",
            ));
        }
        Ok(CdsQuoteSet {
            maturities,
            spreads,
            recovery,
            payments_per_year,
        })
    }

    pub fn loss_given_default(&self) -> f64 {
        1.0 - self.recovery
    }
}

/// Premium schedule for a CDS of maturity `m`: payment dates stepping
/// `1/freq` from zero; the final date must land on the maturity.
pub fn cds_schedule(maturity: f64, payments_per_year: u32) -> Result<Vec<f64>> {
    let dt = 1.0 / payments_per_year as f64;
    let n = (maturity / dt).round();
    if n < 1.0 || ((n * dt) - maturity).abs() > 1e-9 {
        return Err(EngineError::invalid(
            "cds schedule",
            format!(
                "maturity {maturity} is not a whole number of periods at {payments_per_year}/yr"
            ),
        ));
    }
    Ok((1..=n as usize).map(|i| i as f64 * dt).collect())
}

/// Market default term structure: piecewise-constant hazard rates, so the
/// cumulative hazard is piecewise linear with `Λ(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardCurve {
    /// Segment right endpoints, strictly increasing.
    tenors: Vec<f64>,
    /// Hazard rate on each segment.
    hazards: Vec<f64>,
    /// Cumulative hazard at each tenor.
    cum: Vec<f64>,
}

impl HazardCurve {
    /// Builds from per-segment hazard rates.
    pub fn from_piecewise_hazard(tenors: Vec<f64>, hazards: Vec<f64>) -> Result<Self> {
        if tenors.len() != hazards.len() || tenors.is_empty() {
            return Err(EngineError::invalid(
                "hazard curve",
                "tenors and hazards must be non-empty and equal length",
            ));
        }
        let mut prev = 0.0;
        let mut cum = Vec::with_capacity(tenors.len());
        let mut acc = 0.0;
        for (i, (&t, &h)) in tenors.iter().zip(hazards.iter()).enumerate() {
            if t <= prev {
                return Err(EngineError::invalid(
                    "hazard curve",
                    format!("tenors must be strictly increasing and positive (index {i})"),
                ));
            }
            if h < 0.0 || !h.is_finite() {
                return Err(EngineError::invalid(
                    "hazard curve",
                    format!("hazard at index {i} is negative or non-finite"),
                ));
            }
            acc += h * (t - prev);
            cum.push(acc);
            prev = t;
        }
        Ok(HazardCurve {
            tenors,
            hazards,
            cum,
        })
    }

    /// Builds from `(tenor, cumulative hazard)` nodes.
    pub fn from_cumulative_nodes(nodes: Vec<(f64, f64)>) -> Result<Self> {
        let mut tenors = Vec::with_capacity(nodes.len());
        let mut hazards = Vec::with_capacity(nodes.len());
        let (mut pt, mut pc) = (0.0, 0.0);
        for (i, &(t, c)) in nodes.iter().enumerate() {
            if t <= pt {
                return Err(EngineError::invalid(
                    "hazard curve",
                    format!("tenors must be strictly increasing and positive (index {i})"),
                ));
            }
            if c < pc - 1e-15 {
                return Err(EngineError::invalid(
                    "hazard curve",
                    format!("cumulative hazard decreases at index {i}"),
                ));
            }
            tenors.push(t);
            hazards.push(((c - pc) / (t - pt)).max(0.0));
            pt = t;
            pc = c;
        }
        Self::from_piecewise_hazard(tenors, hazards)
    }

    /// Flat hazard `h` out to `horizon`.
    pub fn flat(h: f64, horizon: f64) -> Self {
        Self::from_piecewise_hazard(vec![horizon], vec![h]).expect("valid flat curve")
    }

    /// Zero default risk out to `horizon`.
    pub fn zero(horizon: f64) -> Self {
        Self::flat(0.0, horizon)
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    pub fn hazards(&self) -> &[f64] {
        &self.hazards
    }

    /// Cumulative hazard `Λ(t)`, piecewise linear; beyond the last tenor
    /// the final hazard rate extends flat.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = self.tenors.partition_point(|&ti| ti < t);
        if k == 0 {
            return self.hazards[0] * t;
        }
        let base = self.cum[k - 1];
        let t0 = self.tenors[k - 1];
        let h = if k < self.tenors.len() {
            self.hazards[k]
        } else {
            *self.hazards.last().unwrap()
        };
        base + h * (t - t0)
    }

    /// Market survival probability `Q(τ > t) = exp(-Λ(t))`.
    pub fn survival_probability(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(EngineError::domain(format!(
                "survival_probability: negative tenor {t}"
            )));
        }
        Ok((-self.cumulative_hazard(t)).exp())
    }
}

/// Receiver CDS value per unit notional: premium leg (coupons plus
/// accrual-on-default at the period midpoint) minus protection leg, with
/// default integrals discretized over the premium periods.
pub fn cds_value(
    hazard: &HazardCurve,
    curve: &ZeroCurve,
    spread: f64,
    lgd: f64,
    schedule: &[f64],
) -> Result<f64> {
    if schedule.is_empty() {
        return Err(EngineError::invalid("cds schedule", "empty schedule"));
    }
    let mut coupons = 0.0;
    let mut accrual = 0.0;
    let mut protection = 0.0;
    let mut t_prev = 0.0;
    let mut q_prev = 1.0;
    for &t in schedule {
        let alpha = t - t_prev;
        let q = hazard.survival_probability(t)?;
        let mid = 0.5 * (t_prev + t);
        let d_mid = curve.discount_factor(mid)?;
        let dq = q_prev - q;
        coupons += alpha * curve.discount_factor(t)? * q;
        accrual += (mid - t_prev) * d_mid * dq;
        protection += d_mid * dq;
        t_prev = t;
        q_prev = q;
    }
    Ok(spread * (coupons + accrual) - lgd * protection)
}

/// Bootstraps piecewise-constant hazards so every quoted CDS reprices to
/// zero at its quoted spread. Sequential in maturity; each bucket is
/// solved to 1e-12 on CDS value.
pub fn strip_hazard_curve(quotes: &CdsQuoteSet, curve: &ZeroCurve) -> Result<HazardCurve> {
    let lgd = quotes.loss_given_default();
    let mut tenors: Vec<f64> = Vec::with_capacity(quotes.maturities.len());
    let mut hazards: Vec<f64> = Vec::with_capacity(quotes.maturities.len());

    for (&maturity, &spread) in quotes.maturities.iter().zip(quotes.spreads.iter()) {
        let schedule = cds_schedule(maturity, quotes.payments_per_year)?;
        let value_at = |h: f64| -> Result<f64> {
            let mut t = tenors.clone();
            let mut hz = hazards.clone();
            t.push(maturity);
            hz.push(h);
            let trial = HazardCurve::from_piecewise_hazard(t, hz)?;
            cds_value(&trial, curve, spread, lgd, &schedule)
        };

        let f0 = value_at(0.0)?;
        if f0 < -1e-12 {
            return Err(EngineError::calibration(format!(
                "CDS quote at {maturity}y implies a negative hazard rate (arbitrageable quote set)"
            )));
        }
        let h = if f0.abs() <= 1e-12 {
            0.0
        } else {
            let f_cap = value_at(HAZARD_CAP)?;
            if f_cap > 0.0 {
                return Err(EngineError::calibration(format!(
                    "no hazard rate in (0, {HAZARD_CAP}] reprices the CDS at {maturity}y"
                )));
            }
            brent(
                |h| value_at(h).unwrap_or(f64::NAN),
                0.0,
                HAZARD_CAP,
                1e-12,
                200,
            )
            .ok_or_else(|| {
                EngineError::calibration(format!(
                    "hazard bootstrap failed to bracket a root at {maturity}y"
                ))
            })?
        };
        tenors.push(maturity);
        hazards.push(h.max(0.0));
    }
    HazardCurve::from_piecewise_hazard(tenors, hazards)
}

/// Futures/forward price quotes `F^M(0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCurveQuotes {
    pub nodes: Vec<(f64, f64)>,
}

impl ForwardCurveQuotes {
    pub fn new(nodes: Vec<(f64, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(EngineError::invalid("forward curve", "no nodes"));
        }
        let mut prev = 0.0;
        for (i, &(t, f)) in nodes.iter().enumerate() {
            if t <= prev {
                return Err(EngineError::invalid(
                    "forward curve",
                    format!("maturities must be strictly increasing and positive (node {i})"),
                ));
            }
            if f <= 0.0 || !f.is_finite() {
                return Err(EngineError::invalid(
                    "forward curve",
                    format!("price at node {i} must be strictly positive"),
                ));
            }
            prev = t;
        }
        Ok(ForwardCurveQuotes { nodes })
    }
}

/// ATM implied volatility quotes.
#[derive(Debug, Clone, PartialEq)]
pub struct AtmVolQuotes {
    pub nodes: Vec<(f64, f64)>,
}

impl AtmVolQuotes {
    pub fn new(nodes: Vec<(f64, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(EngineError::invalid("atm vols", "no nodes"));
        }
        let mut prev = 0.0;
        for (i, &(t, v)) in nodes.iter().enumerate() {
            if t <= prev {
                return Err(EngineError::invalid(
                    "atm vols",
                    format!("expiries must be strictly increasing and positive (node {i})"),
                ));
            }
            if v <= 0.0 || !v.is_finite() {
                return Err(EngineError::invalid(
                    "atm vols",
                    format!("vol at node {i} must be strictly positive"),
                ));
            }
            prev = t;
        }
        Ok(AtmVolQuotes { nodes })
    }
}

#[cfg(test)]
pub(crate) fn test_zero_curve() -> ZeroCurve {
    ZeroCurve::new(vec![
        (0.25, 0.0268),
        (0.5, 0.0292),
        (2.0, 0.0340),
        (5.0, 0.0427),
        (10.0, 0.0487),
        (30.0, 0.05376),
    ])
    .unwrap()
}

#[cfg(test)]
pub(crate) fn test_bank_quotes() -> CdsQuoteSet {
    CdsQuoteSet::new(
        vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
        vec![0.0345, 0.0332, 0.0287, 0.0256, 0.0232, 0.0217],
        0.4,
        4,
    )
    .unwrap()
}

#[cfg(test)]
pub(crate) fn test_airline_quotes() -> CdsQuoteSet {
    CdsQuoteSet::new(
        vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
        vec![0.0076, 0.0082, 0.0104, 0.0122, 0.0139, 0.0154],
        0.4,
        4,
    )
    .unwrap()
}
