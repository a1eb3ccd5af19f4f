//! Closed-form and semi-analytic valuation: forward contracts, options on
//! forwards, commodity swaps, fair strikes and the independence-case CVA
//! as a default-probability-weighted strip of options.

use crate::error::{EngineError, Result};
use crate::market_data::{HazardCurve, ZeroCurve};
use crate::math::quadrature::gauss_hermite;
use crate::math::special::norm_cdf;
use crate::oil_model::{
    forward_log_variance, forward_price, total_variance, transition_moments, OilParams, OilShift,
    OilState,
};

/// Which side of the contract the investor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Pays the fixed price, receives the commodity: value `S - K`.
    Payer,
    /// Receives the fixed price: value `K - S`.
    Receiver,
}

impl Side {
    pub fn sign(&self) -> f64 {
        match self {
            Side::Payer => 1.0,
            Side::Receiver => -1.0,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Payer => write!(f, "payer"),
            Side::Receiver => write!(f, "receiver"),
        }
    }
}

/// Agreement to exchange the commodity at `maturity` for strike `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardContract {
    pub maturity: f64,
    pub strike: f64,
    pub side: Side,
    /// Contract size in barrels.
    pub notional: f64,
}

impl ForwardContract {
    pub fn new(maturity: f64, strike: f64, side: Side, notional: f64) -> Result<Self> {
        if !(maturity > 0.0) {
            return Err(EngineError::invalid("maturity", "must be > 0"));
        }
        if !(notional > 0.0) {
            return Err(EngineError::invalid("notional", "must be > 0"));
        }
        Ok(ForwardContract {
            maturity,
            strike,
            side,
            notional,
        })
    }
}

/// Fixed-for-floating commodity swap: at each `payment_times[i]` the payer
/// receives `notionals[i] · (S - K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommoditySwap {
    pub payment_times: Vec<f64>,
    pub notionals: Vec<f64>,
    pub strike: f64,
    pub side: Side,
}

impl CommoditySwap {
    pub fn new(
        payment_times: Vec<f64>,
        notionals: Vec<f64>,
        strike: f64,
        side: Side,
    ) -> Result<Self> {
        if payment_times.is_empty() || payment_times.len() != notionals.len() {
            return Err(EngineError::invalid(
                "swap",
                "payment times and notionals must be non-empty and equal length",
            ));
        }
        let mut prev = 0.0;
        for (i, &t) in payment_times.iter().enumerate() {
            if t <= prev {
                return Err(EngineError::invalid(
                    "swap",
                    format!("payment times must be strictly increasing and positive (index {i})"),
                ));
            }
            prev = t;
        }
        if let Some(i) = notionals.iter().position(|a| !(*a > 0.0)) {
            return Err(EngineError::invalid(
                "swap",
                format!("notional at index {i} must be > 0"),
            ));
        }
        Ok(CommoditySwap {
            payment_times,
            notionals,
            strike,
            side,
        })
    }

    /// Evenly spaced swap: `periods_per_year` payments per year out to
    /// `maturity`, unit notional per period.
    pub fn evenly_spaced(
        maturity: f64,
        periods_per_year: u32,
        strike: f64,
        side: Side,
        notional_per_period: f64,
    ) -> Result<Self> {
        let n = (maturity * periods_per_year as f64).round() as usize;
        if n == 0 {
            return Err(EngineError::invalid("swap", "no payment periods"));
        }
        let times = (1..=n)
            .map(|i| i as f64 / periods_per_year as f64)
            .collect();
        CommoditySwap::new(times, vec![notional_per_period; n], strike, side)
    }

    pub fn maturity(&self) -> f64 {
        *self.payment_times.last().unwrap()
    }

    pub fn with_strike(&self, strike: f64) -> Self {
        CommoditySwap {
            strike,
            ..self.clone()
        }
    }

    /// Fixed-leg annuity `Σ α_i D(0, T_i)`.
    pub fn annuity(&self, curve: &ZeroCurve) -> Result<f64> {
        let mut a = 0.0;
        for (&t, &alpha) in self.payment_times.iter().zip(self.notionals.iter()) {
            a += alpha * curve.discount_factor(t)?;
        }
        Ok(a)
    }
}

/// Payer forward value `D(t,T) (F(t,T) - K) · notional`; receiver negates.
pub fn forward_value(
    c: &ForwardContract,
    p: &OilParams,
    shift: &OilShift,
    state: &OilState,
    curve: &ZeroCurve,
) -> Result<f64> {
    if state.t > c.maturity {
        return Err(EngineError::domain(format!(
            "forward_value: valuation time {} after maturity {}",
            state.t, c.maturity
        )));
    }
    let f = forward_price(p, shift, state, c.maturity)?;
    let d = curve.forward_discount(state.t, c.maturity)?;
    Ok(c.side.sign() * d * (f - c.strike) * c.notional)
}

/// Option (exercise `T_j`) on the payer forward with maturity `T`:
///
/// ```text
/// E_t[ D(t,T_j) (Fwdp(T_j,T;K))⁺ ]
///   = D(t,T) [ e^{M + V̄/2} Φ((M + V̄ - ln K)/√V̄) - K Φ((M - ln K)/√V̄) ]
/// M  = x e^{-k_x (T-t)} + L + μ_L (T-t) + φ(T) + V(T,T_j)/2
/// V̄  = forward-log variance over (t, T_j] damped to T
/// ```
///
/// The receiver-side exposure option `(K - F)⁺` uses the Gaussian
/// complement. With `V̄ = 0` both reduce to discounted intrinsic value.
pub fn option_on_forward(
    p: &OilParams,
    shift: &OilShift,
    curve: &ZeroCurve,
    state: &OilState,
    t_exercise: f64,
    maturity: f64,
    strike: f64,
    side: Side,
) -> Result<f64> {
    let t = state.t;
    if !(t <= t_exercise && t_exercise <= maturity) {
        return Err(EngineError::domain(format!(
            "option_on_forward: need t <= T_j <= T, got {t}, {t_exercise}, {maturity}"
        )));
    }
    if !(strike > 0.0) {
        return Err(EngineError::domain("option_on_forward: strike must be > 0"));
    }
    let d = curve.forward_discount(t, maturity)?;
    let tau = maturity - t;
    let m = state.x * (-p.k_x * tau).exp()
        + state.l
        + p.mu_l * tau
        + shift.value(maturity)
        + 0.5 * total_variance(p, t_exercise, maturity)?;
    let v = forward_log_variance(p, t, t_exercise, maturity)?;
    if v <= 1e-30 {
        let intrinsic = (m.exp() - strike).max(0.0);
        return Ok(match side {
            Side::Payer => d * intrinsic,
            Side::Receiver => d * (strike - m.exp()).max(0.0),
        });
    }
    let sq = v.sqrt();
    let d1 = (m + v - strike.ln()) / sq;
    let d2 = (m - strike.ln()) / sq;
    let value = match side {
        Side::Payer => (m + 0.5 * v).exp() * norm_cdf(d1) - strike * norm_cdf(d2),
        Side::Receiver => strike * norm_cdf(-d2) - (m + 0.5 * v).exp() * norm_cdf(-d1),
    };
    Ok(d * value)
}

/// Value of the swap payments at `T_i >= from` (inclusive up to a small
/// tolerance), seen from `state.t`.
pub fn remaining_swap_value(
    s: &CommoditySwap,
    p: &OilParams,
    shift: &OilShift,
    state: &OilState,
    curve: &ZeroCurve,
    from: f64,
) -> Result<f64> {
    let mut v = 0.0;
    for (&t_i, &alpha) in s.payment_times.iter().zip(s.notionals.iter()) {
        if t_i < from - 1e-9 {
            continue;
        }
        let f = forward_price(p, shift, state, t_i)?;
        v += alpha * curve.forward_discount(state.t, t_i)? * (f - s.strike);
    }
    Ok(s.side.sign() * v)
}

/// Swap value at `state.t`: the sum of its remaining forward legs.
pub fn swap_value(
    s: &CommoditySwap,
    p: &OilParams,
    shift: &OilShift,
    state: &OilState,
    curve: &ZeroCurve,
) -> Result<f64> {
    if state.t > s.maturity() {
        return Err(EngineError::domain(
            "swap_value: valuation after final payment".to_string(),
        ));
    }
    remaining_swap_value(s, p, shift, state, curve, state.t)
}

/// The strike that zeroes the swap: annuity-weighted average of forwards
/// over the remaining payments.
pub fn fair_strike(
    s: &CommoditySwap,
    p: &OilParams,
    shift: &OilShift,
    state: &OilState,
    curve: &ZeroCurve,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t_i, &alpha) in s.payment_times.iter().zip(s.notionals.iter()) {
        if t_i < state.t - 1e-9 {
            continue;
        }
        let w = alpha * curve.forward_discount(state.t, t_i)?;
        num += w * forward_price(p, shift, state, t_i)?;
        den += w;
    }
    if den <= 0.0 {
        return Err(EngineError::domain("fair_strike: empty annuity"));
    }
    Ok(num / den)
}

/// Fixed-leg present value `K Σ α_i D(0, T_i)`.
pub fn fixed_leg_value(s: &CommoditySwap, curve: &ZeroCurve) -> Result<f64> {
    Ok(s.strike * s.annuity(curve)?)
}

/// Independence-case CVA for a forward: `LGD Σ_j Q(T_{j-1} < τ <= T_j) ·
/// OptionOnForward(T_j)`, the option strip weighted by market bucket
/// default probabilities.
pub fn cva_forward_independent(
    c: &ForwardContract,
    bucket_grid: &[f64],
    market: &HazardCurve,
    lgd: f64,
    p: &OilParams,
    shift: &OilShift,
    state0: &OilState,
    curve: &ZeroCurve,
) -> Result<f64> {
    validate_bucket_grid(bucket_grid, c.maturity)?;
    let mut cva = 0.0;
    let mut t_prev = 0.0;
    for &t_j in bucket_grid {
        let dq = market.survival_probability(t_prev)? - market.survival_probability(t_j)?;
        let opt = option_on_forward(
            p,
            shift,
            curve,
            state0,
            t_j,
            c.maturity,
            c.strike,
            c.side,
        )?;
        cva += dq * opt * c.notional;
        t_prev = t_j;
    }
    Ok(lgd * cva)
}

/// Semi-analytic exposure option on the residual swap at bucket date
/// `t_j`: `E[ D(0,t_j) ( Σ_{T_i >= t_j} α_i Fwdp(t_j, T_i; K) )⁺ ]`.
///
/// Conditional on the short factor, the residual value is
/// `e^L A(x) - B` with `A > 0`, so the inner expectation over the
/// lognormal `e^L` is a Black-style closed form; the outer integral over
/// the Gaussian `x` runs on Gauss–Hermite nodes. The integrand is smooth,
/// so the quadrature converges to well below Monte Carlo resolution.
pub fn swap_exposure_option(
    s: &CommoditySwap,
    p: &OilParams,
    shift: &OilShift,
    curve: &ZeroCurve,
    state0: &OilState,
    t_j: f64,
    side: Side,
    quad_points: usize,
) -> Result<f64> {
    if t_j < state0.t {
        return Err(EngineError::domain(
            "swap_exposure_option: bucket before valuation".to_string(),
        ));
    }
    // Residual-payment coefficients: value = e^L · Σ w_i e^{b_i x} - B.
    let mut ws: Vec<(f64, f64)> = Vec::new();
    let mut annuity_rem = 0.0;
    for (&t_i, &alpha) in s.payment_times.iter().zip(s.notionals.iter()) {
        if t_i < t_j - 1e-9 {
            continue;
        }
        let tau = t_i - t_j;
        let disc = curve.forward_discount(t_j, t_i)?;
        let a_i =
            p.mu_l * tau + shift.value(t_i) + 0.5 * total_variance(p, t_j, t_i)?;
        ws.push((alpha * disc * a_i.exp(), (-p.k_x * tau).exp()));
        annuity_rem += alpha * disc;
    }
    if ws.is_empty() {
        return Ok(0.0);
    }
    let b = s.strike * annuity_rem;

    let m = transition_moments(p, state0.t, t_j)?;
    let (mx, ml) = m.mean(state0.x, state0.l);
    let disc0 = curve.forward_discount(state0.t, t_j)?;

    let black = |mean_l: f64, var_l: f64, a: f64| -> f64 {
        // E[(a e^L - b)^+] for L ~ N(mean_l, var_l), receiver mirrored.
        if a <= 0.0 {
            return 0.0;
        }
        if var_l <= 1e-30 {
            let v = a * mean_l.exp() - b;
            return match side {
                Side::Payer => v.max(0.0),
                Side::Receiver => (-v).max(0.0),
            };
        }
        let sq = var_l.sqrt();
        let lnk = (b / a).ln();
        let d1 = (mean_l + var_l - lnk) / sq;
        let d2 = (mean_l - lnk) / sq;
        let fwd_part = a * (mean_l + 0.5 * var_l).exp();
        match side {
            Side::Payer => fwd_part * norm_cdf(d1) - b * norm_cdf(d2),
            Side::Receiver => b * norm_cdf(-d2) - fwd_part * norm_cdf(-d1),
        }
    };

    let value = if m.var_x <= 1e-30 {
        // Degenerate short factor: single conditioning point.
        let a: f64 = ws.iter().map(|&(w, bi)| w * (mx * bi).exp()).sum();
        black(ml, m.var_l, a)
    } else {
        let beta = m.cov_xl / m.var_x;
        let var_l_cond = (m.var_l - m.cov_xl * m.cov_xl / m.var_x).max(0.0);
        let sx = m.var_x.sqrt();
        let (nodes, weights) = gauss_hermite(quad_points);
        let norm = 1.0 / std::f64::consts::PI.sqrt();
        let mut acc = 0.0;
        for (gh_x, gh_w) in nodes.iter().zip(weights.iter()) {
            let x = mx + std::f64::consts::SQRT_2 * sx * gh_x;
            let a: f64 = ws.iter().map(|&(w, bi)| w * (x * bi).exp()).sum();
            let mean_l = ml + beta * (x - mx);
            acc += gh_w * black(mean_l, var_l_cond, a);
        }
        acc * norm
    };
    Ok(disc0 * value)
}

/// Independence-case CVA for a swap: the option strip with semi-analytic
/// residual-swap options.
pub fn cva_swap_independent(
    s: &CommoditySwap,
    bucket_grid: &[f64],
    market: &HazardCurve,
    lgd: f64,
    p: &OilParams,
    shift: &OilShift,
    state0: &OilState,
    curve: &ZeroCurve,
    quad_points: usize,
) -> Result<f64> {
    validate_bucket_grid(bucket_grid, s.maturity())?;
    let mut cva = 0.0;
    let mut t_prev = 0.0;
    for &t_j in bucket_grid {
        let dq = market.survival_probability(t_prev)? - market.survival_probability(t_j)?;
        if dq > 0.0 {
            cva += dq
                * swap_exposure_option(s, p, shift, curve, state0, t_j, s.side, quad_points)?;
        }
        t_prev = t_j;
    }
    Ok(lgd * cva)
}

fn validate_bucket_grid(grid: &[f64], maturity: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(EngineError::invalid("bucket grid", "empty grid"));
    }
    let mut prev = 0.0;
    for &t in grid {
        if t <= prev {
            return Err(EngineError::invalid(
                "bucket grid",
                "must be strictly increasing from 0",
            ));
        }
        prev = t;
    }
    if (prev - maturity).abs() > 1e-9 {
        return Err(EngineError::invalid(
            "bucket grid",
            format!("grid must end at the product maturity {maturity}, ends at {prev}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{test_zero_curve, ForwardCurveQuotes};
    use crate::oil_model::{calibrate_shift, test_oil_params};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup() -> (OilParams, OilShift, OilState, ZeroCurve) {
        let p = test_oil_params();
        let fwd = ForwardCurveQuotes::new(vec![
            (1.0 / 12.0, 122.0),
            (0.5, 123.5),
            (1.0, 124.8),
            (2.0, 126.2),
            (3.0, 127.2),
            (4.0, 128.3),
            (5.0, 129.3),
        ])
        .unwrap();
        let (x0, l0) = (0.0, 122.0f64.ln());
        let shift = calibrate_shift(&p, &fwd, x0, l0).unwrap();
        (p, shift, OilState::new(x0, l0, 0.0), test_zero_curve())
    }

    #[test]
    fn forward_value_at_fair_strike_is_zero() {
        let (p, shift, s0, curve) = setup();
        let f = forward_price(&p, &shift, &s0, 3.0).unwrap();
        let c = ForwardContract::new(3.0, f, Side::Payer, 1.0).unwrap();
        assert_relative_eq!(
            forward_value(&c, &p, &shift, &s0, &curve).unwrap(),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn forward_value_zero_strike_is_discounted_forward() {
        let (p, shift, s0, curve) = setup();
        let c = ForwardContract::new(2.0, 0.0, Side::Payer, 1.0).unwrap();
        let expected = curve.discount_factor(2.0).unwrap()
            * forward_price(&p, &shift, &s0, 2.0).unwrap();
        assert_relative_eq!(
            forward_value(&c, &p, &shift, &s0, &curve).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn forward_value_receiver_negates() {
        let (p, shift, s0, curve) = setup();
        let cp = ForwardContract::new(2.0, 100.0, Side::Payer, 2.0).unwrap();
        let cr = ForwardContract::new(2.0, 100.0, Side::Receiver, 2.0).unwrap();
        let vp = forward_value(&cp, &p, &shift, &s0, &curve).unwrap();
        let vr = forward_value(&cr, &p, &shift, &s0, &curve).unwrap();
        assert_relative_eq!(vp, -vr, epsilon = 1e-12);
    }

    #[test]
    fn forward_value_rejects_stale_valuation() {
        let (p, shift, _, curve) = setup();
        let c = ForwardContract::new(1.0, 100.0, Side::Payer, 1.0).unwrap();
        let late = OilState::new(0.0, 4.8, 2.0);
        assert!(forward_value(&c, &p, &shift, &late, &curve).is_err());
    }

    #[test]
    fn option_zero_strike_limit_is_forward_value() {
        let (p, shift, s0, curve) = setup();
        let v = option_on_forward(&p, &shift, &curve, &s0, 2.5, 5.0, 1e-12, Side::Payer).unwrap();
        let fwd = curve.discount_factor(5.0).unwrap()
            * forward_price(&p, &shift, &s0, 5.0).unwrap();
        assert_relative_eq!(v, fwd, max_relative = 1e-9);
    }

    #[test]
    fn option_zero_variance_is_intrinsic() {
        let curve = test_zero_curve();
        let p = OilParams::new(0.7, 0.0, 0.0, 0.0, 0.0).unwrap();
        let shift = OilShift::zero();
        let s0 = OilState::new(0.0, 120.0f64.ln(), 0.0);
        // immediate exercise, all vols zero
        let v = option_on_forward(&p, &shift, &curve, &s0, 0.0, 5.0, 110.0, Side::Payer).unwrap();
        let intrinsic =
            curve.discount_factor(5.0).unwrap() * (120.0f64 - 110.0);
        assert_relative_eq!(v, intrinsic, epsilon = 1e-9);
        let vr =
            option_on_forward(&p, &shift, &curve, &s0, 0.0, 5.0, 130.0, Side::Receiver).unwrap();
        let intrinsic_r = curve.discount_factor(5.0).unwrap() * (130.0f64 - 120.0);
        assert_relative_eq!(vr, intrinsic_r, epsilon = 1e-9);
    }

    #[test]
    fn option_matches_monte_carlo() {
        // Brute-force oracle: one exact Gaussian draw of (x, L) at T_j,
        // evaluate the discounted positive part of the residual forward.
        let (p, shift, s0, curve) = setup();
        let (t_j, maturity, strike) = (2.5, 5.0, 126.0);
        let closed =
            option_on_forward(&p, &shift, &curve, &s0, t_j, maturity, strike, Side::Payer)
                .unwrap();

        let m = transition_moments(&p, 0.0, t_j).unwrap();
        let (mx, ml) = m.mean(s0.x, s0.l);
        let rho = m.step_correlation();
        let (sx, sl) = (m.var_x.sqrt(), m.var_l.sqrt());
        let n = 400_000;
        let mut rng = ChaCha8Rng::seed_from_u64(20250808);
        let disc = curve.discount_factor(maturity).unwrap();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let w1: f64 = StandardNormal.sample(&mut rng);
            let w2: f64 = StandardNormal.sample(&mut rng);
            let mut pay = 0.0;
            for sgn in [1.0, -1.0] {
                let zx = sgn * w1;
                let zl = sgn * (rho * w1 + (1.0 - rho * rho).sqrt() * w2);
                let st = OilState::new(mx + sx * zx, ml + sl * zl, t_j);
                let f = forward_price(&p, &shift, &st, maturity).unwrap();
                pay += 0.5 * disc * (f - strike).max(0.0);
            }
            sum += pay;
            sum_sq += pay * pay;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (closed - mean).abs() < 3.0 * se,
            "closed {closed} vs MC {mean} (3se {})",
            3.0 * se
        );
    }

    #[test]
    fn option_monotone_and_convex_in_strike() {
        let (p, shift, s0, curve) = setup();
        let strikes: Vec<f64> = (1..40).map(|i| 60.0 + 4.0 * i as f64).collect();
        let vals: Vec<f64> = strikes
            .iter()
            .map(|&k| {
                option_on_forward(&p, &shift, &curve, &s0, 2.0, 5.0, k, Side::Payer).unwrap()
            })
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for w in vals.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-9);
        }
    }

    #[test]
    fn option_put_call_parity() {
        let (p, shift, s0, curve) = setup();
        for &k in &[100.0, 126.0, 150.0] {
            let call =
                option_on_forward(&p, &shift, &curve, &s0, 2.0, 5.0, k, Side::Payer).unwrap();
            let put =
                option_on_forward(&p, &shift, &curve, &s0, 2.0, 5.0, k, Side::Receiver).unwrap();
            let c = ForwardContract::new(5.0, k, Side::Payer, 1.0).unwrap();
            let fwd = forward_value(&c, &p, &shift, &s0, &curve).unwrap();
            assert_relative_eq!(call - put, fwd, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn swap_single_payment_equals_forward() {
        let (p, shift, s0, curve) = setup();
        let s = CommoditySwap::new(vec![3.0], vec![2.0], 120.0, Side::Payer).unwrap();
        let c = ForwardContract::new(3.0, 120.0, Side::Payer, 2.0).unwrap();
        assert_relative_eq!(
            swap_value(&s, &p, &shift, &s0, &curve).unwrap(),
            forward_value(&c, &p, &shift, &s0, &curve).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn swap_at_fair_strike_is_worthless() {
        let (p, shift, s0, curve) = setup();
        let proto = CommoditySwap::evenly_spaced(5.0, 12, 0.0, Side::Payer, 1.0).unwrap();
        let k = fair_strike(&proto, &p, &shift, &s0, &curve).unwrap();
        let s = proto.with_strike(k);
        let v = swap_value(&s, &p, &shift, &s0, &curve).unwrap();
        assert!(v.abs() < 1e-9 * k * s.annuity(&curve).unwrap());
    }

    #[test]
    fn swap_value_is_sum_of_forward_legs() {
        let (p, shift, s0, curve) = setup();
        let s = CommoditySwap::new(
            vec![1.0, 2.0, 3.0],
            vec![1.0, 2.0, 0.5],
            115.0,
            Side::Receiver,
        )
        .unwrap();
        let mut total = 0.0;
        for (&t, &a) in s.payment_times.iter().zip(s.notionals.iter()) {
            let c = ForwardContract::new(t, 115.0, Side::Receiver, a).unwrap();
            total += forward_value(&c, &p, &shift, &s0, &curve).unwrap();
        }
        assert_relative_eq!(
            swap_value(&s, &p, &shift, &s0, &curve).unwrap(),
            total,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fair_strike_of_flat_curve_is_the_flat_price() {
        let p = test_oil_params();
        let flat = 117.0;
        let nodes: Vec<(f64, f64)> = (1..=10).map(|i| (0.5 * i as f64, flat)).collect();
        let shift =
            calibrate_shift(&p, &ForwardCurveQuotes::new(nodes).unwrap(), 0.0, flat.ln())
                .unwrap();
        let s0 = OilState::new(0.0, flat.ln(), 0.0);
        let s = CommoditySwap::evenly_spaced(5.0, 2, 0.0, Side::Payer, 1.0).unwrap();
        let k = fair_strike(&s, &p, &shift, &s0, &test_zero_curve()).unwrap();
        assert_relative_eq!(k, flat, max_relative = 1e-12);
    }

    #[test]
    fn fair_strike_two_period_hand_weighted() {
        let (p, shift, s0, curve) = setup();
        let s = CommoditySwap::new(vec![1.0, 2.0], vec![3.0, 1.0], 0.0, Side::Payer).unwrap();
        let f1 = forward_price(&p, &shift, &s0, 1.0).unwrap();
        let f2 = forward_price(&p, &shift, &s0, 2.0).unwrap();
        let d1 = curve.discount_factor(1.0).unwrap();
        let d2 = curve.discount_factor(2.0).unwrap();
        let expected = (3.0 * d1 * f1 + d2 * f2) / (3.0 * d1 + d2);
        assert_relative_eq!(
            fair_strike(&s, &p, &shift, &s0, &curve).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fixed_leg_zero_strike_is_zero() {
        let (_, _, _, curve) = setup();
        let s = CommoditySwap::evenly_spaced(5.0, 12, 0.0, Side::Payer, 1.0).unwrap();
        assert_eq!(fixed_leg_value(&s, &curve).unwrap(), 0.0);
    }

    #[test]
    fn independent_forward_cva_trivial_cases() {
        let (p, shift, s0, curve) = setup();
        let c = ForwardContract::new(5.0, 126.0, Side::Payer, 1.0).unwrap();
        let grid: Vec<f64> = (1..=60).map(|i| i as f64 / 12.0).collect();
        let market = HazardCurve::flat(0.03, 10.0);
        let zero_lgd =
            cva_forward_independent(&c, &grid, &market, 0.0, &p, &shift, &s0, &curve).unwrap();
        assert_eq!(zero_lgd, 0.0);
        let no_risk = cva_forward_independent(
            &c,
            &grid,
            &HazardCurve::zero(10.0),
            0.6,
            &p,
            &shift,
            &s0,
            &curve,
        )
        .unwrap();
        assert_eq!(no_risk, 0.0);
        let some =
            cva_forward_independent(&c, &grid, &market, 0.6, &p, &shift, &s0, &curve).unwrap();
        assert!(some > 0.0);
    }

    #[test]
    fn swap_exposure_option_single_payment_matches_closed_form() {
        let (p, shift, s0, curve) = setup();
        let s = CommoditySwap::new(vec![5.0], vec![1.0], 126.0, Side::Payer).unwrap();
        let semi = swap_exposure_option(&s, &p, &shift, &curve, &s0, 2.5, Side::Payer, 96).unwrap();
        let closed =
            option_on_forward(&p, &shift, &curve, &s0, 2.5, 5.0, 126.0, Side::Payer).unwrap();
        assert_relative_eq!(semi, closed, max_relative = 1e-8);
    }

    #[test]
    fn swap_exposure_option_matches_monte_carlo() {
        let (p, shift, s0, curve) = setup();
        let s = CommoditySwap::evenly_spaced(5.0, 12, 126.0, Side::Payer, 1.0).unwrap();
        let t_j = 2.0;
        let semi =
            swap_exposure_option(&s, &p, &shift, &curve, &s0, t_j, Side::Payer, 96).unwrap();

        let m = transition_moments(&p, 0.0, t_j).unwrap();
        let (mx, ml) = m.mean(s0.x, s0.l);
        let rho = m.step_correlation();
        let (sx, sl) = (m.var_x.sqrt(), m.var_l.sqrt());
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let w1: f64 = StandardNormal.sample(&mut rng);
            let w2: f64 = StandardNormal.sample(&mut rng);
            let st = OilState::new(
                mx + sx * w1,
                ml + sl * (rho * w1 + (1.0 - rho * rho).sqrt() * w2),
                t_j,
            );
            let res = remaining_swap_value(&s, &p, &shift, &st, &curve, t_j).unwrap();
            let v = curve.discount_factor(t_j).unwrap() * res.max(0.0);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (semi - mean).abs() < 3.0 * se,
            "payer semi {semi} vs MC {mean} (3se {})",
            3.0 * se
        );
    }

    #[test]
    fn swap_exposure_receiver_matches_monte_carlo() {
        let (p, shift, s0, curve) = setup();
        let s = CommoditySwap::evenly_spaced(5.0, 12, 126.0, Side::Payer, 1.0).unwrap();
        let t_j = 2.0;
        let semi =
            swap_exposure_option(&s, &p, &shift, &curve, &s0, t_j, Side::Receiver, 96).unwrap();
        let m = transition_moments(&p, 0.0, t_j).unwrap();
        let (mx, ml) = m.mean(s0.x, s0.l);
        let rho = m.step_correlation();
        let (sx, sl) = (m.var_x.sqrt(), m.var_l.sqrt());
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let w1: f64 = StandardNormal.sample(&mut rng);
            let w2: f64 = StandardNormal.sample(&mut rng);
            let st = OilState::new(
                mx + sx * w1,
                ml + sl * (rho * w1 + (1.0 - rho * rho).sqrt() * w2),
                t_j,
            );
            let res = remaining_swap_value(&s, &p, &shift, &st, &curve, t_j).unwrap();
            let v = curve.discount_factor(t_j).unwrap() * (-res).max(0.0);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (semi - mean).abs() < 3.0 * se,
            "receiver semi {semi} vs MC {mean} (3se {})",
            3.0 * se
        );
    }

    #[test]
    fn independent_swap_cva_scales_with_lgd_and_risk() {
        let (p, shift, s0, curve) = setup();
        let s = CommoditySwap::evenly_spaced(5.0, 12, 126.0, Side::Payer, 1.0).unwrap();
        let grid: Vec<f64> = (1..=60).map(|i| i as f64 / 12.0).collect();
        let low = HazardCurve::flat(0.01, 10.0);
        let high = HazardCurve::flat(0.03, 10.0);
        let v_low =
            cva_swap_independent(&s, &grid, &low, 0.6, &p, &shift, &s0, &curve, 64).unwrap();
        let v_high =
            cva_swap_independent(&s, &grid, &high, 0.6, &p, &shift, &s0, &curve, 64).unwrap();
        let v_lgd =
            cva_swap_independent(&s, &grid, &high, 0.3, &p, &shift, &s0, &curve, 64).unwrap();
        assert!(v_high > v_low && v_low > 0.0);
        assert_relative_eq!(v_lgd, 0.5 * v_high, epsilon = 1e-12);
    }
}
