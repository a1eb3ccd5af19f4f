//! Shifted two-factor commodity spot model.
//!
//! Log spot is `ln S(t) = x(t) + L(t) + φ(t)`: a mean-reverting short-term
//! deviation `x`, an arithmetic-Brownian equilibrium level `L` (drivers
//! correlated at `ρ_{x,L}`), and a deterministic shift `φ` fitted to the
//! futures curve. Transitions are jointly Gaussian and simulated exactly.
//!
//! Forward price:
//!
//! ```text
//! F(t,T) = exp( x(t) e^{-k_x (T-t)} + L(t) + μ_L (T-t) + φ(T) + V(T,t)/2 )
//! ```
//!
//! with `V(T,t)` the conditional variance of `x(T) + L(T)`. The model is
//! the short-term/equilibrium reparametrization of the classical spot +
//! convenience-yield model; `map_gibson_schwartz` converts parameters.

use crate::error::{EngineError, Result};
use crate::market_data::{AtmVolQuotes, ForwardCurveQuotes};
use crate::math::optim::nelder_mead;

/// Two-factor model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OilParams {
    /// Mean-reversion speed of the short-term factor (1/year, > 0).
    pub k_x: f64,
    /// Short-term factor volatility (1/√year, >= 0).
    pub sigma_x: f64,
    /// Equilibrium level volatility (1/√year, >= 0).
    pub sigma_l: f64,
    /// Instantaneous correlation between the factor drivers, in [-1, 1].
    pub rho_xl: f64,
    /// Equilibrium drift (1/year). Zero by default; the shift absorbs it.
    pub mu_l: f64,
}

impl OilParams {
    pub fn new(k_x: f64, sigma_x: f64, sigma_l: f64, rho_xl: f64, mu_l: f64) -> Result<Self> {
        if !(k_x > 0.0) || !k_x.is_finite() {
            return Err(EngineError::invalid("k_x", format!("{k_x} must be > 0")));
        }
        if sigma_x < 0.0 || sigma_l < 0.0 || !sigma_x.is_finite() || !sigma_l.is_finite() {
            return Err(EngineError::invalid(
                "sigma",
                format!("volatilities must be >= 0 (σ_x={sigma_x}, σ_L={sigma_l})"),
            ));
        }
        if !(-1.0..=1.0).contains(&rho_xl) {
            return Err(EngineError::invalid(
                "rho_xl",
                format!("{rho_xl} outside [-1, 1]"),
            ));
        }
        if !mu_l.is_finite() {
            return Err(EngineError::invalid("mu_l", "must be finite"));
        }
        Ok(OilParams {
            k_x,
            sigma_x,
            sigma_l,
            rho_xl,
            mu_l,
        })
    }

    /// Scales both factor volatilities, as in the volatility sweeps.
    pub fn with_vol_multiplier(&self, m: f64) -> Result<Self> {
        OilParams::new(
            self.k_x,
            self.sigma_x * m,
            self.sigma_l * m,
            self.rho_xl,
            self.mu_l,
        )
    }

    /// Instantaneous spot variance `σ_x² + σ_L² + 2 ρ σ_x σ_L`.
    pub fn spot_variance(&self) -> f64 {
        self.sigma_x * self.sigma_x
            + self.sigma_l * self.sigma_l
            + 2.0 * self.rho_xl * self.sigma_x * self.sigma_l
    }
}

/// Factor state at an observation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OilState {
    /// Short-term log deviation.
    pub x: f64,
    /// Equilibrium log level.
    pub l: f64,
    /// Observation time in years.
    pub t: f64,
}

impl OilState {
    pub fn new(x: f64, l: f64, t: f64) -> Self {
        OilState { x, l, t }
    }

    /// Spot price given a shift: `exp(x + L + φ(t))`.
    pub fn spot(&self, shift: &OilShift) -> f64 {
        (self.x + self.l + shift.value(self.t)).exp()
    }
}

/// Conditional law of `(x(t), L(t))` given `(x(s), L(s))`: an affine mean
/// map plus a Gaussian covariance depending only on `t - s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMoments {
    /// Mean of x is `x(s) · x_decay`.
    pub x_decay: f64,
    /// Mean of L is `L(s) + l_drift`.
    pub l_drift: f64,
    pub var_x: f64,
    pub var_l: f64,
    pub cov_xl: f64,
}

impl TransitionMoments {
    pub fn mean(&self, x: f64, l: f64) -> (f64, f64) {
        (x * self.x_decay, l + self.l_drift)
    }

    /// Variance of `x + L` over the step.
    pub fn total_variance(&self) -> f64 {
        self.var_x + self.var_l + 2.0 * self.cov_xl
    }

    /// Correlation of the step innovations (degenerate cases map to 0).
    pub fn step_correlation(&self) -> f64 {
        let denom = (self.var_x * self.var_l).sqrt();
        if denom > 0.0 {
            (self.cov_xl / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Joint Gaussian transition moments of the factor pair over `[s, t]`.
pub fn transition_moments(p: &OilParams, s: f64, t: f64) -> Result<TransitionMoments> {
    if t < s {
        return Err(EngineError::domain(format!(
            "transition_moments: t {t} < s {s}"
        )));
    }
    let dt = t - s;
    let e1 = (-p.k_x * dt).exp();
    let e2 = (-2.0 * p.k_x * dt).exp();
    Ok(TransitionMoments {
        x_decay: e1,
        l_drift: p.mu_l * dt,
        var_x: p.sigma_x * p.sigma_x / (2.0 * p.k_x) * (1.0 - e2),
        var_l: p.sigma_l * p.sigma_l * dt,
        cov_xl: p.rho_xl * p.sigma_x * p.sigma_l / p.k_x * (1.0 - e1),
    })
}

/// Variance `V(T, t)` of `x(T) + L(T)` given time-`t` information.
pub fn total_variance(p: &OilParams, t: f64, maturity: f64) -> Result<f64> {
    Ok(transition_moments(p, t, maturity)?.total_variance())
}

/// Variance of `ln F(T_j, T)` seen from `t <= T_j <= T`: the short factor
/// is damped by `e^{-k_x (T - T_j)}` before it enters the forward.
pub fn forward_log_variance(p: &OilParams, t: f64, t_exercise: f64, maturity: f64) -> Result<f64> {
    if !(t <= t_exercise && t_exercise <= maturity) {
        return Err(EngineError::domain(format!(
            "forward_log_variance: need t <= T_j <= T, got {t}, {t_exercise}, {maturity}"
        )));
    }
    let m = transition_moments(p, t, t_exercise)?;
    let damp = (-p.k_x * (maturity - t_exercise)).exp();
    Ok(damp * damp * m.var_x + m.var_l + 2.0 * damp * m.cov_xl)
}

/// One exact Gaussian transition step. The shocks are standard normals
/// carrying the step correlation `cov_xl/(sd_x·sd_L)` (the caller's
/// factorization is responsible for that structure).
pub fn evolve_oil_state(
    p: &OilParams,
    state: &OilState,
    dt: f64,
    shocks: (f64, f64),
) -> Result<OilState> {
    if dt < 0.0 {
        return Err(EngineError::domain(format!(
            "evolve_oil_state: negative dt {dt}"
        )));
    }
    let m = transition_moments(p, state.t, state.t + dt)?;
    let (mx, ml) = m.mean(state.x, state.l);
    Ok(OilState {
        x: mx + m.var_x.sqrt() * shocks.0,
        l: ml + m.var_l.sqrt() * shocks.1,
        t: state.t + dt,
    })
}

/// Deterministic forward-curve shift `φ` on a maturity grid, linear
/// between nodes and flat beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct OilShift {
    nodes: Vec<(f64, f64)>,
}

impl OilShift {
    pub fn new(nodes: Vec<(f64, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(EngineError::invalid("oil shift", "no nodes"));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, &(t, phi)) in nodes.iter().enumerate() {
            if t <= prev || t < 0.0 {
                return Err(EngineError::invalid(
                    "oil shift",
                    format!("maturities must be strictly increasing and nonnegative (node {i})"),
                ));
            }
            if !phi.is_finite() {
                return Err(EngineError::invalid(
                    "oil shift",
                    format!("non-finite shift at node {i}"),
                ));
            }
            prev = t;
        }
        Ok(OilShift { nodes })
    }

    /// Identically-zero shift.
    pub fn zero() -> Self {
        OilShift {
            nodes: vec![(0.0, 0.0)],
        }
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn value(&self, t: f64) -> f64 {
        let n = &self.nodes;
        if t <= n[0].0 {
            return n[0].1;
        }
        if t >= n[n.len() - 1].0 {
            return n[n.len() - 1].1;
        }
        let k = n.partition_point(|&(ti, _)| ti < t);
        let (t0, p0) = n[k - 1];
        let (t1, p1) = n[k];
        p0 + (p1 - p0) * (t - t0) / (t1 - t0)
    }
}

/// Forward price `F(t, T)` for a state at `t` and maturity `T >= t`.
pub fn forward_price(
    p: &OilParams,
    shift: &OilShift,
    state: &OilState,
    maturity: f64,
) -> Result<f64> {
    if maturity < state.t {
        return Err(EngineError::domain(format!(
            "forward_price: maturity {maturity} before state time {}",
            state.t
        )));
    }
    let tau = maturity - state.t;
    let v = total_variance(p, state.t, maturity)?;
    Ok((state.x * (-p.k_x * tau).exp()
        + state.l
        + p.mu_l * tau
        + shift.value(maturity)
        + 0.5 * v)
        .exp())
}

/// Fits `φ` so the model forward curve reproduces the market exactly at
/// the quote nodes:
/// `φ(T) = ln F^M(0,T) - x₀ e^{-k_x T} - L₀ - μ_L T - V(T,0)/2`.
pub fn calibrate_shift(
    p: &OilParams,
    fwd: &ForwardCurveQuotes,
    x0: f64,
    l0: f64,
) -> Result<OilShift> {
    let mut nodes = Vec::with_capacity(fwd.nodes.len());
    for &(t, f_mkt) in &fwd.nodes {
        let v = total_variance(p, 0.0, t)?;
        let phi = f_mkt.ln() - x0 * (-p.k_x * t).exp() - l0 - p.mu_l * t - 0.5 * v;
        nodes.push((t, phi));
    }
    OilShift::new(nodes)
}

/// Parameters of the spot + convenience-yield formulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibsonSchwartzParams {
    pub k_q: f64,
    pub alpha: f64,
    pub sigma_s: f64,
    pub sigma_q: f64,
    pub rho_qs: f64,
    pub r: f64,
}

/// Maps convenience-yield parameters onto the two-factor form:
///
/// ```text
/// k_x = k_q,  μ_L = r - α - σ_S²/2,  σ_x = σ_q / k_q,
/// σ_L² = σ_S² + σ_q²/k_q² - 2 ρ_qS σ_S σ_q / k_q,
/// ρ_xL = (σ_S ρ_qS - σ_q/k_q) / σ_L .
/// ```
pub fn map_gibson_schwartz(g: &GibsonSchwartzParams) -> Result<OilParams> {
    if !(g.k_q > 0.0) {
        return Err(EngineError::invalid("k_q", format!("{} must be > 0", g.k_q)));
    }
    if g.sigma_s < 0.0 || g.sigma_q < 0.0 {
        return Err(EngineError::invalid("sigma", "volatilities must be >= 0"));
    }
    if !(-1.0..=1.0).contains(&g.rho_qs) {
        return Err(EngineError::invalid(
            "rho_qs",
            format!("{} outside [-1, 1]", g.rho_qs),
        ));
    }
    let sigma_x = g.sigma_q / g.k_q;
    let var_l =
        g.sigma_s * g.sigma_s + sigma_x * sigma_x - 2.0 * g.rho_qs * g.sigma_s * sigma_x;
    if var_l < -1e-14 {
        return Err(EngineError::invalid(
            "gibson-schwartz",
            format!("σ_L² = {var_l} is negative"),
        ));
    }
    let sigma_l = var_l.max(0.0).sqrt();
    let numer = g.sigma_s * g.rho_qs - sigma_x;
    let rho_xl = if sigma_l > 0.0 {
        (numer / sigma_l).clamp(-1.0, 1.0)
    } else if numer.abs() < 1e-14 {
        0.0
    } else {
        return Err(EngineError::invalid(
            "gibson-schwartz",
            "σ_L = 0 with a nonzero correlation numerator (singular map)",
        ));
    };
    let mu_l = g.r - g.alpha - 0.5 * g.sigma_s * g.sigma_s;
    OilParams::new(g.k_q, sigma_x, sigma_l, rho_xl, mu_l)
}

/// Model ATM implied volatility for an option on the future expiring with
/// the future: `sqrt(V(T,0)/T)`.
pub fn model_atm_vol(p: &OilParams, expiry: f64) -> Result<f64> {
    if expiry <= 0.0 {
        return Err(EngineError::domain(format!(
            "model_atm_vol: expiry {expiry} must be > 0"
        )));
    }
    Ok((forward_log_variance(p, 0.0, expiry, expiry)? / expiry).sqrt())
}

/// Least-squares fit of `(k_x, σ_x, σ_L, ρ_xL)` to ATM vol quotes with
/// `μ_L` held at its initial value. Optimizes in transformed coordinates
/// (logs for positive parameters, atanh for the correlation) so the
/// iterates always satisfy the parameter invariants.
pub fn calibrate_oil_params(quotes: &AtmVolQuotes, init: &OilParams) -> Result<OilParams> {
    if quotes.nodes.len() < 4 {
        return Err(EngineError::calibration(format!(
            "ATM vol calibration needs at least 4 quotes, got {}",
            quotes.nodes.len()
        )));
    }
    let mu_l = init.mu_l;
    let decode = |v: &[f64]| -> OilParams {
        OilParams {
            k_x: v[0].exp().clamp(1e-8, 1e4),
            sigma_x: v[1].exp().min(1e4),
            sigma_l: v[2].exp().min(1e4),
            rho_xl: v[3].tanh(),
            mu_l,
        }
    };
    let objective = |v: &[f64]| -> f64 {
        let p = decode(v);
        quotes
            .nodes
            .iter()
            .map(|&(t, q)| {
                let m = model_atm_vol(&p, t).unwrap_or(f64::INFINITY);
                (m - q) * (m - q)
            })
            .sum()
    };
    let x0 = vec![
        init.k_x.max(1e-6).ln(),
        init.sigma_x.max(1e-6).ln(),
        init.sigma_l.max(1e-6).ln(),
        init.rho_xl.clamp(-0.999, 0.999).atanh(),
    ];
    let first = nelder_mead(objective, &x0, 0.4, 1e-12, 20_000);
    // Restart from the solution; cheap insurance that the simplex did not
    // collapse early on a flat valley.
    let second = nelder_mead(objective, &first.x, 0.05, 1e-13, 20_000);
    let best = if second.fx <= first.fx { &second } else { &first };
    if !best.converged && best.fx > 1e-8 {
        return Err(EngineError::calibration(format!(
            "ATM vol fit did not converge: best objective {:.3e} at {:?}",
            best.fx,
            decode(&best.x)
        )));
    }
    OilParams::new(
        decode(&best.x).k_x,
        decode(&best.x).sigma_x,
        decode(&best.x).sigma_l,
        decode(&best.x).rho_xl,
        mu_l,
    )
}

/// Calibrated model bundle: parameters, shift and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedOilModel {
    pub params: OilParams,
    pub shift: OilShift,
    pub x0: f64,
    pub l0: f64,
}

impl CalibratedOilModel {
    pub fn state0(&self) -> OilState {
        OilState::new(self.x0, self.l0, 0.0)
    }

    /// Text serialization at 17 significant digits (bit-exact round trip).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("oil_model v1\n");
        s.push_str(&format!("k_x {:.16e}\n", self.params.k_x));
        s.push_str(&format!("sigma_x {:.16e}\n", self.params.sigma_x));
        s.push_str(&format!("sigma_l {:.16e}\n", self.params.sigma_l));
        s.push_str(&format!("rho_xl {:.16e}\n", self.params.rho_xl));
        s.push_str(&format!("mu_l {:.16e}\n", self.params.mu_l));
        s.push_str(&format!("x0 {:.16e}\n", self.x0));
        s.push_str(&format!("l0 {:.16e}\n", self.l0));
        s.push_str(&format!("shift_nodes {}\n", self.shift.nodes().len()));
        for &(t, phi) in self.shift.nodes() {
            s.push_str(&format!("{:.16e} {:.16e}\n", t, phi));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, msg: &str| EngineError::Parse {
            file: "oil model".into(),
            line: line + 1,
            message: msg.into(),
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty document"))?;
        if header.trim() != "oil_model v1" {
            return Err(parse_err(0, "expected 'oil_model v1' header"));
        }
        let mut fields = std::collections::HashMap::new();
        let mut shift_nodes = None;
        for (i, line) in lines.by_ref() {
            let mut it = line.split_whitespace();
            let key = it
                .next()
                .ok_or_else(|| parse_err(i, "expected 'key value'"))?;
            let val: f64 = it
                .next()
                .ok_or_else(|| parse_err(i, "missing value"))?
                .parse()
                .map_err(|_| parse_err(i, "bad float"))?;
            if key == "shift_nodes" {
                let n = val as usize;
                let mut nodes = Vec::with_capacity(n);
                for _ in 0..n {
                    let (j, line) = lines
                        .next()
                        .ok_or_else(|| parse_err(i, "truncated shift grid"))?;
                    let mut nums = line.split_whitespace().map(str::parse::<f64>);
                    let t = nums
                        .next()
                        .ok_or_else(|| parse_err(j, "missing tenor"))?
                        .map_err(|_| parse_err(j, "bad float"))?;
                    let phi = nums
                        .next()
                        .ok_or_else(|| parse_err(j, "missing shift"))?
                        .map_err(|_| parse_err(j, "bad float"))?;
                    nodes.push((t, phi));
                }
                shift_nodes = Some(nodes);
                break;
            }
            fields.insert(key.to_string(), val);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| parse_err(0, &format!("missing field {k}")))
        };
        Ok(CalibratedOilModel {
            params: OilParams::new(
                get("k_x")?,
                get("sigma_x")?,
                get("sigma_l")?,
                get("rho_xl")?,
                get("mu_l")?,
            )?,
            shift: OilShift::new(
                shift_nodes.ok_or_else(|| parse_err(0, "missing shift grid"))?,
            )?,
            x0: get("x0")?,
            l0: get("l0")?,
        })
    }
}

/// Base-case parameter set used across tests (the calibrated case study).
#[cfg(test)]
pub(crate) fn test_oil_params() -> OilParams {
    OilParams::new(0.7170, 0.3522, 0.19, -0.0392, 0.0).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_step_is_identity() {
        let p = test_oil_params();
        let m = transition_moments(&p, 1.5, 1.5).unwrap();
        assert_relative_eq!(m.x_decay, 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.var_x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.var_l, 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.cov_xl, 0.0, epsilon = 1e-15);

        let s = OilState::new(0.2, 4.5, 1.5);
        let s2 = evolve_oil_state(&p, &s, 0.0, (1.3, -0.4)).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn zero_correlation_kills_covariance() {
        let p = OilParams::new(0.7, 0.3, 0.2, 0.0, 0.0).unwrap();
        let m = transition_moments(&p, 0.0, 2.0).unwrap();
        assert_eq!(m.cov_xl, 0.0);
    }

    #[test]
    fn rejects_backward_step() {
        let p = test_oil_params();
        assert!(transition_moments(&p, 1.0, 0.5).is_err());
    }

    #[test]
    fn one_year_variance_matches_euler_oracle() {
        // Independent fine-grid Euler simulation of dx = -k x dt + σ dW.
        let p = test_oil_params();
        let n_paths = 50_000;
        let n_steps = 2_000;
        let dt = 1.0 / n_steps as f64;
        let sq_dt = dt.sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12345);
        let normal = StandardNormal;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_paths {
            let mut x = 0.0_f64;
            for _ in 0..n_steps {
                let z: f64 = normal.sample(&mut rng);
                x += -p.k_x * x * dt + p.sigma_x * sq_dt * z;
            }
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n_paths as f64;
        let var = sum_sq / n_paths as f64 - mean * mean;
        let var_se = var * (2.0 / n_paths as f64).sqrt();

        let m = transition_moments(&p, 0.0, 1.0).unwrap();
        let expected = p.sigma_x * p.sigma_x / (2.0 * p.k_x) * (1.0 - (-2.0 * p.k_x).exp());
        assert_relative_eq!(m.var_x, expected, epsilon = 1e-15);
        assert!(
            (var - expected).abs() < 3.0 * var_se,
            "MC var {var} vs formula {expected} (3se {})",
            3.0 * var_se
        );
    }

    #[test]
    fn transitions_compose_exactly() {
        let p = test_oil_params();
        let (s, u, t) = (0.3, 1.1, 2.7);
        let a = transition_moments(&p, s, u).unwrap();
        let b = transition_moments(&p, u, t).unwrap();
        let c = transition_moments(&p, s, t).unwrap();
        // x(t) = decay_b (decay_a x + εa) + εb
        assert_relative_eq!(a.x_decay * b.x_decay, c.x_decay, epsilon = 1e-12);
        assert_relative_eq!(a.l_drift + b.l_drift, c.l_drift, epsilon = 1e-12);
        assert_relative_eq!(
            b.x_decay * b.x_decay * a.var_x + b.var_x,
            c.var_x,
            epsilon = 1e-12
        );
        assert_relative_eq!(a.var_l + b.var_l, c.var_l, epsilon = 1e-12);
        assert_relative_eq!(b.x_decay * a.cov_xl + b.cov_xl, c.cov_xl, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_step_with_zero_vols() {
        let p = OilParams::new(0.7, 0.0, 0.0, 0.0, 0.05).unwrap();
        let s = OilState::new(0.3, 4.0, 0.0);
        let s2 = evolve_oil_state(&p, &s, 2.0, (1.0, -1.0)).unwrap();
        assert_relative_eq!(s2.x, 0.3 * (-1.4f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(s2.l, 4.0 + 0.1, epsilon = 1e-15);
    }

    #[test]
    fn one_step_sample_moments_match() {
        let p = test_oil_params();
        let m = transition_moments(&p, 0.0, 0.5).unwrap();
        let rho_step = m.step_correlation();
        let n = 1_000_000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let normal = StandardNormal;
        let s0 = OilState::new(0.1, 4.6, 0.0);
        let (mut sx, mut sxx, mut sl, mut sll, mut sxl) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let w1: f64 = normal.sample(&mut rng);
            let w2: f64 = normal.sample(&mut rng);
            let z2 = rho_step * w1 + (1.0 - rho_step * rho_step).sqrt() * w2;
            let s = evolve_oil_state(&p, &s0, 0.5, (w1, z2)).unwrap();
            sx += s.x;
            sxx += s.x * s.x;
            sl += s.l;
            sll += s.l * s.l;
            sxl += s.x * s.l;
        }
        let nf = n as f64;
        let (mx, ml) = (sx / nf, sl / nf);
        let vx = sxx / nf - mx * mx;
        let vl = sll / nf - ml * ml;
        let cxl = sxl / nf - mx * ml;
        let (emx, eml) = m.mean(s0.x, s0.l);
        // 3 standard errors on each sample moment.
        assert!((mx - emx).abs() < 3.0 * (m.var_x / nf).sqrt());
        assert!((ml - eml).abs() < 3.0 * (m.var_l / nf).sqrt());
        assert!((vx - m.var_x).abs() < 3.0 * m.var_x * (2.0 / nf).sqrt());
        assert!((vl - m.var_l).abs() < 3.0 * m.var_l * (2.0 / nf).sqrt());
        let se_c = ((m.var_x * m.var_l + m.cov_xl * m.cov_xl) / nf).sqrt();
        assert!((cxl - m.cov_xl).abs() < 3.0 * se_c);
    }

    #[test]
    fn forward_at_maturity_is_spot() {
        let p = test_oil_params();
        let shift = OilShift::new(vec![(0.0, 0.02), (5.0, 0.04)]).unwrap();
        let st = OilState::new(0.15, 4.7, 1.2);
        let f = forward_price(&p, &shift, &st, 1.2).unwrap();
        assert_relative_eq!(f, st.spot(&shift), epsilon = 1e-14);
    }

    #[test]
    fn calibrated_shift_reproduces_market_nodes() {
        let p = test_oil_params();
        let fwd = ForwardCurveQuotes::new(vec![
            (1.0 / 12.0, 122.0),
            (0.5, 123.5),
            (1.0, 124.8),
            (2.0, 126.2),
            (3.5, 127.9),
            (5.0, 129.3),
        ])
        .unwrap();
        let (x0, l0) = (0.0, 122.0f64.ln());
        let shift = calibrate_shift(&p, &fwd, x0, l0).unwrap();
        let s0 = OilState::new(x0, l0, 0.0);
        for &(t, f_mkt) in &fwd.nodes {
            let f = forward_price(&p, &shift, &s0, t).unwrap();
            assert!(
                (f / f_mkt - 1.0).abs() <= 1e-12,
                "node {t}: {f} vs {f_mkt}"
            );
        }
    }

    #[test]
    fn shift_vanishes_when_market_is_model() {
        // Market generated by the unshifted model => φ ≡ 0 at nodes.
        let p = test_oil_params();
        let (x0, l0) = (0.05, 4.8);
        let zero = OilShift::zero();
        let s0 = OilState::new(x0, l0, 0.0);
        let nodes: Vec<(f64, f64)> = [0.5, 1.0, 2.0, 5.0]
            .iter()
            .map(|&t| (t, forward_price(&p, &zero, &s0, t).unwrap()))
            .collect();
        let shift =
            calibrate_shift(&p, &ForwardCurveQuotes::new(nodes).unwrap(), x0, l0).unwrap();
        for &(_, phi) in shift.nodes() {
            assert!(phi.abs() < 1e-14);
        }
    }

    #[test]
    fn single_node_shift_formula() {
        let p = test_oil_params();
        let fwd = ForwardCurveQuotes::new(vec![(1.0, 120.0)]).unwrap();
        let shift = calibrate_shift(&p, &fwd, 0.0, 110.0f64.ln()).unwrap();
        let v10 = total_variance(&p, 0.0, 1.0).unwrap();
        let expected = (120.0f64 / 110.0).ln() - 0.5 * v10;
        assert_relative_eq!(shift.value(1.0), expected, epsilon = 1e-14);
    }

    #[test]
    fn gibson_schwartz_no_convenience_noise() {
        let g = GibsonSchwartzParams {
            k_q: 1.3,
            alpha: 0.02,
            sigma_s: 0.31,
            sigma_q: 0.0,
            rho_qs: -0.4,
            r: 0.03,
        };
        let p = map_gibson_schwartz(&g).unwrap();
        assert_relative_eq!(p.sigma_x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.sigma_l, 0.31, epsilon = 1e-15);
        assert_relative_eq!(p.rho_xl, -0.4, epsilon = 1e-14);
    }

    #[test]
    fn gibson_schwartz_worked_example() {
        let g = GibsonSchwartzParams {
            k_q: 1.0,
            alpha: 0.0,
            sigma_s: 0.3,
            sigma_q: 0.2,
            rho_qs: 0.0,
            r: 0.0,
        };
        let p = map_gibson_schwartz(&g).unwrap();
        assert_relative_eq!(p.sigma_x, 0.2, epsilon = 1e-15);
        assert_relative_eq!(p.sigma_l, 0.13f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(p.rho_xl, -0.2 / 0.13f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn gibson_schwartz_variance_identity() {
        // σ_x² + σ_L² + 2 ρ σ_x σ_L = σ_S² under the map.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let u = |rng: &mut rand_chacha::ChaCha8Rng| {
                rand::Rng::random_range(rng, 0.0..1.0)
            };
            let g = GibsonSchwartzParams {
                k_q: 0.05 + 3.0 * u(&mut rng),
                alpha: -0.1 + 0.2 * u(&mut rng),
                sigma_s: 0.01 + 0.8 * u(&mut rng),
                sigma_q: 0.01 + 0.8 * u(&mut rng),
                rho_qs: -0.99 + 1.98 * u(&mut rng),
                r: 0.05 * u(&mut rng),
            };
            let p = map_gibson_schwartz(&g).unwrap();
            assert_relative_eq!(
                p.spot_variance(),
                g.sigma_s * g.sigma_s,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
            assert!(p.rho_xl.abs() <= 1.0);
        }
    }

    #[test]
    fn atm_vol_single_factor_is_flat() {
        let p = OilParams::new(0.7, 0.0, 0.23, 0.0, 0.0).unwrap();
        for t in [0.25, 1.0, 5.0] {
            assert_relative_eq!(model_atm_vol(&p, t).unwrap(), 0.23, epsilon = 1e-14);
        }
    }

    #[test]
    fn atm_vol_short_expiry_limit() {
        let p = test_oil_params();
        let lim = p.spot_variance().sqrt();
        assert_relative_eq!(model_atm_vol(&p, 1e-8).unwrap(), lim, epsilon = 1e-6);
        assert!(model_atm_vol(&p, 0.0).is_err());
    }

    #[test]
    fn atm_vol_term_structure_decreases() {
        let p = test_oil_params();
        let v: Vec<f64> = [0.25, 1.0, 3.0, 5.0]
            .iter()
            .map(|&t| model_atm_vol(&p, t).unwrap())
            .collect();
        assert!(v[0] > v[1] && v[1] > v[2] && v[2] > v[3], "{v:?}");
    }

    #[test]
    fn vol_calibration_round_trip() {
        let truth = test_oil_params();
        let nodes: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&t| (t, model_atm_vol(&truth, t).unwrap()))
            .collect();
        let quotes = AtmVolQuotes::new(nodes).unwrap();
        let init = OilParams::new(0.5, 0.25, 0.25, 0.1, 0.0).unwrap();
        let fit = calibrate_oil_params(&quotes, &init).unwrap();
        assert!((fit.k_x - truth.k_x).abs() < 1e-4, "k_x {}", fit.k_x);
        assert!((fit.sigma_x - truth.sigma_x).abs() < 1e-4);
        assert!((fit.sigma_l - truth.sigma_l).abs() < 1e-4);
        assert!((fit.rho_xl - truth.rho_xl).abs() < 1e-4);
    }

    #[test]
    fn vol_calibration_flat_quotes_degenerate() {
        let sigma = 0.27;
        let nodes: Vec<(f64, f64)> = [0.5, 1.0, 2.0, 3.0, 5.0]
            .iter()
            .map(|&t| (t, sigma))
            .collect();
        let quotes = AtmVolQuotes::new(nodes).unwrap();
        let init = OilParams::new(0.8, 0.2, 0.2, 0.0, 0.0).unwrap();
        let fit = calibrate_oil_params(&quotes, &init).unwrap();
        assert!(fit.sigma_x < 1e-3, "σ_x {}", fit.sigma_x);
        assert!((fit.sigma_l - sigma).abs() < 1e-4, "σ_L {}", fit.sigma_l);
    }

    #[test]
    fn vol_calibration_noisy_quotes_beats_truth() {
        let truth = test_oil_params();
        let noise = [0.01, -0.008, 0.006, -0.01, 0.009, -0.004, 0.007, -0.006];
        let nodes: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .zip(noise.iter())
            .map(|(&t, &e)| (t, model_atm_vol(&truth, t).unwrap() * (1.0 + e)))
            .collect();
        let quotes = AtmVolQuotes::new(nodes).unwrap();
        let obj = |p: &OilParams| -> f64 {
            quotes
                .nodes
                .iter()
                .map(|&(t, q)| {
                    let m = model_atm_vol(p, t).unwrap();
                    (m - q) * (m - q)
                })
                .sum()
        };
        let fit = calibrate_oil_params(&quotes, &truth).unwrap();
        assert!(obj(&fit) <= obj(&truth) + 1e-15);
    }

    #[test]
    fn variance_decomposes_across_exercise() {
        // V(T, t) = V(T, T_j) + V̄(t, T, T_j)
        let p = test_oil_params();
        let (t, tj, tt) = (0.0, 2.5, 5.0);
        let lhs = total_variance(&p, t, tt).unwrap();
        let rhs = total_variance(&p, tj, tt).unwrap()
            + forward_log_variance(&p, t, tj, tt).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn serialization_round_trip_bit_exact() {
        let p = test_oil_params();
        let shift = OilShift::new(vec![
            (1.0 / 12.0, 0.012345678901234567),
            (2.0, -0.09876543210987654),
            (5.0, 0.3333333333333333),
        ])
        .unwrap();
        let model = CalibratedOilModel {
            params: p,
            shift,
            x0: 0.0,
            l0: 4.804021044733257,
        };
        let text = model.to_text();
        let back = CalibratedOilModel::from_text(&text).unwrap();
        assert_eq!(model, back);
    }
}
