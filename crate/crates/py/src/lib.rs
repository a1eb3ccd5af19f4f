//! Python bindings: the main curve, model and valuation surfaces of the
//! CR-CVA engine exposed as a `crcva_py` extension module.
//!
//! The classes wrap the calibrated Rust objects; operations mirror the
//! library API (strip a hazard curve, calibrate the two-factor model, fit
//! the intensity shift, price, and run the joint Monte Carlo CVA).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use crcva_core::credit_model as credit;
use crcva_core::cva_engine as engine;
use crcva_core::error::EngineError;
use crcva_core::market_data as market;
use crcva_core::oil_model as oil;
use crcva_core::pricers;

fn err(e: EngineError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_side(side: &str) -> PyResult<pricers::Side> {
    match side {
        "payer" => Ok(pricers::Side::Payer),
        "receiver" => Ok(pricers::Side::Receiver),
        other => Err(PyValueError::new_err(format!(
            "side must be 'payer' or 'receiver', got '{other}'"
        ))),
    }
}

/// Continuously-compounded zero curve.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct ZeroCurve {
    inner: market::ZeroCurve,
}

#[pymethods]
impl ZeroCurve {
    /// Build from `(tenor_years, zero_rate)` nodes.
    #[new]
    fn new(nodes: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(ZeroCurve {
            inner: market::ZeroCurve::new(nodes).map_err(err)?,
        })
    }

    fn discount_factor(&self, t: f64) -> PyResult<f64> {
        self.inner.discount_factor(t).map_err(err)
    }

    fn zero_rate(&self, t: f64) -> f64 {
        self.inner.zero_rate(t)
    }

    fn __repr__(&self) -> String {
        format!("ZeroCurve({} nodes)", self.inner.nodes().len())
    }
}

/// Bootstrapped market survival curve (piecewise-constant hazards).
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct HazardCurve {
    inner: market::HazardCurve,
}

#[pymethods]
impl HazardCurve {
    /// Build directly from per-segment hazards.
    #[new]
    fn new(tenors: Vec<f64>, hazards: Vec<f64>) -> PyResult<Self> {
        Ok(HazardCurve {
            inner: market::HazardCurve::from_piecewise_hazard(tenors, hazards).map_err(err)?,
        })
    }

    fn survival_probability(&self, t: f64) -> PyResult<f64> {
        self.inner.survival_probability(t).map_err(err)
    }

    fn cumulative_hazard(&self, t: f64) -> f64 {
        self.inner.cumulative_hazard(t)
    }

    fn hazards(&self) -> Vec<f64> {
        self.inner.hazards().to_vec()
    }

    fn tenors(&self) -> Vec<f64> {
        self.inner.tenors().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("HazardCurve({} segments)", self.inner.hazards().len())
    }
}

/// Bootstraps piecewise-constant hazards from CDS quotes
/// `(maturity_years, spread_bps)` so each quote reprices to par.
#[pyfunction]
#[pyo3(signature = (maturities, spreads_bps, curve, recovery=0.4, payments_per_year=4))]
fn strip_hazard_curve(
    maturities: Vec<f64>,
    spreads_bps: Vec<f64>,
    curve: &ZeroCurve,
    recovery: f64,
    payments_per_year: u32,
) -> PyResult<HazardCurve> {
    let spreads = spreads_bps.iter().map(|s| s / 1e4).collect();
    let quotes = market::CdsQuoteSet::new(maturities, spreads, recovery, payments_per_year)
        .map_err(err)?;
    Ok(HazardCurve {
        inner: market::strip_hazard_curve(&quotes, &curve.inner).map_err(err)?,
    })
}

/// Calibrated two-factor commodity model (parameters, curve shift and
/// initial factor state).
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct OilModel {
    inner: oil::CalibratedOilModel,
}

#[pymethods]
impl OilModel {
    /// Build from explicit parameters; the shift is fitted to the forward
    /// quotes `(maturity_years, price)`.
    #[new]
    #[pyo3(signature = (k_x, sigma_x, sigma_l, rho_xl, forward_nodes, mu_l=0.0))]
    fn new(
        k_x: f64,
        sigma_x: f64,
        sigma_l: f64,
        rho_xl: f64,
        forward_nodes: Vec<(f64, f64)>,
        mu_l: f64,
    ) -> PyResult<Self> {
        let params = oil::OilParams::new(k_x, sigma_x, sigma_l, rho_xl, mu_l).map_err(err)?;
        let quotes = market::ForwardCurveQuotes::new(forward_nodes).map_err(err)?;
        let x0 = 0.0;
        let l0 = quotes.nodes[0].1.ln();
        let shift = oil::calibrate_shift(&params, &quotes, x0, l0).map_err(err)?;
        Ok(OilModel {
            inner: oil::CalibratedOilModel {
                params,
                shift,
                x0,
                l0,
            },
        })
    }

    /// Full calibration: least-squares on ATM vols, then the curve shift.
    #[staticmethod]
    #[pyo3(signature = (atm_nodes, forward_nodes, init=None))]
    fn calibrate(
        atm_nodes: Vec<(f64, f64)>,
        forward_nodes: Vec<(f64, f64)>,
        init: Option<(f64, f64, f64, f64)>,
    ) -> PyResult<Self> {
        let quotes = market::AtmVolQuotes::new(atm_nodes).map_err(err)?;
        let (k, sx, sl, r) = init.unwrap_or((0.5, 0.25, 0.25, 0.0));
        let start = oil::OilParams::new(k, sx, sl, r, 0.0).map_err(err)?;
        let params = oil::calibrate_oil_params(&quotes, &start).map_err(err)?;
        OilModel::new(
            params.k_x,
            params.sigma_x,
            params.sigma_l,
            params.rho_xl,
            forward_nodes,
            params.mu_l,
        )
    }

    /// `(k_x, sigma_x, sigma_l, rho_xl, mu_l)`.
    fn params(&self) -> (f64, f64, f64, f64, f64) {
        let p = &self.inner.params;
        (p.k_x, p.sigma_x, p.sigma_l, p.rho_xl, p.mu_l)
    }

    fn forward_price(&self, maturity: f64) -> PyResult<f64> {
        oil::forward_price(
            &self.inner.params,
            &self.inner.shift,
            &self.inner.state0(),
            maturity,
        )
        .map_err(err)
    }

    fn atm_vol(&self, expiry: f64) -> PyResult<f64> {
        oil::model_atm_vol(&self.inner.params, expiry).map_err(err)
    }

    /// Serialized calibrated state (17 significant digits).
    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(OilModel {
            inner: oil::CalibratedOilModel::from_text(text).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        let p = &self.inner.params;
        format!(
            "OilModel(k_x={:.4}, sigma_x={:.4}, sigma_l={:.4}, rho_xl={:.4})",
            p.k_x, p.sigma_x, p.sigma_l, p.rho_xl
        )
    }
}

/// Maps spot/convenience-yield parameters to the two-factor form; returns
/// `(k_x, sigma_x, sigma_l, rho_xl, mu_l)`.
#[pyfunction]
fn map_gibson_schwartz(
    k_q: f64,
    alpha: f64,
    sigma_s: f64,
    sigma_q: f64,
    rho_qs: f64,
    r: f64,
) -> PyResult<(f64, f64, f64, f64, f64)> {
    let g = oil::GibsonSchwartzParams {
        k_q,
        alpha,
        sigma_s,
        sigma_q,
        rho_qs,
        r,
    };
    let p = oil::map_gibson_schwartz(&g).map_err(err)?;
    Ok((p.k_x, p.sigma_x, p.sigma_l, p.rho_xl, p.mu_l))
}

/// CIR++ credit model: parameters plus the shift fitted to a market
/// hazard curve on a grid.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct CreditModel {
    params: credit::CirParams,
    shift: credit::CreditShift,
    psi_violations: usize,
}

#[pymethods]
impl CreditModel {
    #[new]
    #[pyo3(signature = (y0, kappa, mu, nu, market, grid, strict=false))]
    fn new(
        y0: f64,
        kappa: f64,
        mu: f64,
        nu: f64,
        market: &HazardCurve,
        grid: Vec<f64>,
        strict: bool,
    ) -> PyResult<Self> {
        let params = credit::CirParams::new(y0, kappa, mu, nu).map_err(err)?;
        if strict {
            let shift = credit::fit_credit_shift(&params, &market.inner, &grid).map_err(err)?;
            Ok(CreditModel {
                params,
                shift,
                psi_violations: 0,
            })
        } else {
            let (shift, violations) =
                credit::fit_credit_shift_relaxed(&params, &market.inner, &grid).map_err(err)?;
            Ok(CreditModel {
                params,
                shift,
                psi_violations: violations.len(),
            })
        }
    }

    /// Closed-form CIR bond `E[exp(-∫ y)]`.
    fn zcb_price(&self, t: f64) -> PyResult<f64> {
        credit::cir_zcb_price(&self.params, t).map_err(err)
    }

    /// Model survival `e^{-Ψ(t)} P_CIR(0, t)`.
    fn survival(&self, t: f64) -> PyResult<f64> {
        credit::model_survival(&self.params, &self.shift, t).map_err(err)
    }

    #[getter]
    fn feller_indicator(&self) -> f64 {
        self.params.feller_indicator()
    }

    #[getter]
    fn psi_violations(&self) -> usize {
        self.psi_violations
    }

    fn __repr__(&self) -> String {
        format!(
            "CreditModel(y0={}, kappa={}, mu={}, nu={}, feller={:+.4})",
            self.params.y0,
            self.params.kappa,
            self.params.mu,
            self.params.nu,
            self.params.feller_indicator()
        )
    }
}

/// Black-style closed form for an option exercising at `t_exercise` on the
/// forward with the given maturity.
#[pyfunction]
#[pyo3(signature = (oil_model, curve, t_exercise, maturity, strike, side="payer"))]
fn option_on_forward(
    oil_model: &OilModel,
    curve: &ZeroCurve,
    t_exercise: f64,
    maturity: f64,
    strike: f64,
    side: &str,
) -> PyResult<f64> {
    pricers::option_on_forward(
        &oil_model.inner.params,
        &oil_model.inner.shift,
        &curve.inner,
        &oil_model.inner.state0(),
        t_exercise,
        maturity,
        strike,
        parse_side(side)?,
    )
    .map_err(err)
}

fn build_swap(
    maturity: f64,
    payments_per_year: u32,
    strike: f64,
    side: pricers::Side,
) -> PyResult<pricers::CommoditySwap> {
    pricers::CommoditySwap::evenly_spaced(maturity, payments_per_year, strike, side, 1.0)
        .map_err(err)
}

/// Annuity-weighted fair strike of an evenly spaced swap.
#[pyfunction]
fn fair_strike(
    oil_model: &OilModel,
    curve: &ZeroCurve,
    maturity: f64,
    payments_per_year: u32,
) -> PyResult<f64> {
    let swap = build_swap(maturity, payments_per_year, 0.0, pricers::Side::Payer)?;
    pricers::fair_strike(
        &swap,
        &oil_model.inner.params,
        &oil_model.inner.shift,
        &oil_model.inner.state0(),
        &curve.inner,
    )
    .map_err(err)
}

/// Fixed-leg present value `K Σ α_i D(0, T_i)`.
#[pyfunction]
fn fixed_leg_value(
    curve: &ZeroCurve,
    maturity: f64,
    payments_per_year: u32,
    strike: f64,
) -> PyResult<f64> {
    let swap = build_swap(maturity, payments_per_year, strike, pricers::Side::Payer)?;
    pricers::fixed_leg_value(&swap, &curve.inner).map_err(err)
}

/// Semi-analytic independence-case swap CVA (option strip).
#[pyfunction]
#[pyo3(signature = (oil_model, curve, market, maturity, payments_per_year, strike, side="payer", lgd=0.6))]
#[allow(clippy::too_many_arguments)]
fn cva_swap_independent(
    oil_model: &OilModel,
    curve: &ZeroCurve,
    market: &HazardCurve,
    maturity: f64,
    payments_per_year: u32,
    strike: f64,
    side: &str,
    lgd: f64,
) -> PyResult<f64> {
    let swap = build_swap(maturity, payments_per_year, strike, parse_side(side)?)?;
    let grid: Vec<f64> = (1..=(maturity * 12.0).round() as usize)
        .map(|i| i as f64 / 12.0)
        .collect();
    pricers::cva_swap_independent(
        &swap,
        &grid,
        &market.inner,
        lgd,
        &oil_model.inner.params,
        &oil_model.inner.shift,
        &oil_model.inner.state0(),
        &curve.inner,
        96,
    )
    .map_err(err)
}

/// Market-to-driver correlation map `ρ̄ → ρ1`.
#[pyfunction]
fn map_market_correlation(rho_bar: f64, oil_model: &OilModel) -> PyResult<f64> {
    Ok(engine::map_market_correlation(rho_bar, &oil_model.inner.params)
        .map_err(err)?
        .rho1)
}

/// Joint Monte Carlo CR-CVA for an evenly spaced swap on a monthly bucket
/// grid. Returns a dict with the estimate, its standard error and the
/// derived quantities.
#[pyfunction]
#[pyo3(signature = (oil_model, credit_model, curve, maturity, payments_per_year, strike,
    side="payer", rho_bar=0.0, paths=50_000, seed=42, lgd=0.6, antithetic=true,
    estimator="intensity-weighted", parallel=true))]
#[allow(clippy::too_many_arguments)]
fn cva_swap<'py>(
    py: Python<'py>,
    oil_model: &OilModel,
    credit_model: &CreditModel,
    curve: &ZeroCurve,
    maturity: f64,
    payments_per_year: u32,
    strike: f64,
    side: &str,
    rho_bar: f64,
    paths: usize,
    seed: u64,
    lgd: f64,
    antithetic: bool,
    estimator: &str,
    parallel: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let side = parse_side(side)?;
    let swap = build_swap(maturity, payments_per_year, strike, side)?;
    let corr =
        engine::map_market_correlation(rho_bar, &oil_model.inner.params).map_err(err)?;
    let model = engine::JointModel {
        oil: oil_model.inner.clone(),
        cir: credit_model.params,
        credit_shift: credit_model.shift.clone(),
        corr,
    };
    let mut cfg = engine::SimulationConfig::monthly(maturity, paths, seed, lgd).map_err(err)?;
    cfg.antithetic = antithetic;
    cfg.parallel = parallel;
    cfg.estimator = match estimator {
        "intensity-weighted" => engine::EstimatorMode::IntensityWeighted,
        "indicator" => engine::EstimatorMode::Indicator,
        other => {
            return Err(PyValueError::new_err(format!(
                "estimator must be 'intensity-weighted' or 'indicator', got '{other}'"
            )))
        }
    };
    let product = engine::Product::Swap(swap);
    let result = py
        .detach(|| engine::cva_monte_carlo(&product, &model, &curve.inner, &cfg))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("cva", result.cva)?;
    out.set_item("std_error", result.std_error)?;
    out.set_item("cva_pct_of_fixed_leg", result.cva_pct_of_fixed_leg)?;
    out.set_item("adjusted_strike", result.adjusted_strike)?;
    out.set_item("fixed_leg", result.fixed_leg)?;
    out.set_item("annuity", result.annuity)?;
    out.set_item("rho1", corr.rho1)?;
    Ok(out)
}

#[pymodule]
fn crcva_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<ZeroCurve>()?;
    m.add_class::<HazardCurve>()?;
    m.add_class::<OilModel>()?;
    m.add_class::<CreditModel>()?;
    m.add_function(wrap_pyfunction!(strip_hazard_curve, m)?)?;
    m.add_function(wrap_pyfunction!(map_gibson_schwartz, m)?)?;
    m.add_function(wrap_pyfunction!(option_on_forward, m)?)?;
    m.add_function(wrap_pyfunction!(fair_strike, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_leg_value, m)?)?;
    m.add_function(wrap_pyfunction!(cva_swap_independent, m)?)?;
    m.add_function(wrap_pyfunction!(map_market_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(cva_swap, m)?)?;
    Ok(())
}
