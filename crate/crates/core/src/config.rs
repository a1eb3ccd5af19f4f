//! Run configuration and market-data file loading.
//!
//! Market files are two-column CSVs with a header row; the run config is
//! a JSON document referencing them (paths resolved relative to the
//! config file). Validation is exhaustive: every violation is reported,
//! not just the first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::credit_model::{fit_credit_shift_relaxed, CirParams, CreditShift};
use crate::cva_engine::{
    map_market_correlation, CorrelationSpec, EstimatorMode, JointModel, Product,
    SimulationConfig, SweepSpec,
};
use crate::error::{EngineError, Result};
use crate::market_data::{
    strip_hazard_curve, AtmVolQuotes, CdsQuoteSet, ForwardCurveQuotes, HazardCurve, ZeroCurve,
};
use crate::oil_model::{calibrate_oil_params, calibrate_shift, CalibratedOilModel, OilParams};
use crate::pricers::{CommoditySwap, Side};

/// Serialized oil parameter block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct OilParamsConfig {
    pub k_x: f64,
    pub sigma_x: f64,
    pub sigma_l: f64,
    pub rho_xl: f64,
    #[serde(default)]
    pub mu_l: f64,
}

impl OilParamsConfig {
    pub fn to_params(&self) -> Result<OilParams> {
        OilParams::new(self.k_x, self.sigma_x, self.sigma_l, self.rho_xl, self.mu_l)
    }
}

/// Serialized CIR parameter block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CirParamsConfig {
    pub y0: f64,
    pub kappa: f64,
    pub mu: f64,
    pub nu: f64,
}

impl CirParamsConfig {
    pub fn to_params(&self) -> Result<CirParams> {
        CirParams::new(self.y0, self.kappa, self.mu, self.nu)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CdsFilesConfig {
    pub bank: String,
    pub airline: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SwapConfig {
    pub maturity_years: f64,
    pub payments_per_year: u32,
    /// Fixed strike; omit to use the fair strike at calibration time.
    #[serde(default)]
    pub strike: Option<f64>,
    #[serde(default = "default_notional")]
    pub notional_per_period: f64,
}

fn default_notional() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub antithetic: bool,
    #[serde(default = "default_lgd")]
    pub lgd: f64,
    #[serde(default = "default_estimator")]
    pub estimator: String,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_paths() -> usize {
    200_000
}
fn default_seed() -> u64 {
    42
}
fn default_true() -> bool {
    true
}
fn default_lgd() -> f64 {
    0.6
}
fn default_estimator() -> String {
    "intensity-weighted".into()
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            paths: default_paths(),
            seed: default_seed(),
            antithetic: true,
            lgd: default_lgd(),
            estimator: default_estimator(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepSection {
    pub rho_bars: Vec<f64>,
    /// Intensity volatility column values (applied to both counterparties
    /// as multipliers of their base ν).
    pub cir_vol_values: Vec<f64>,
    pub oil_vol_mults: Vec<f64>,
    /// Intensity volatility held fixed while the oil axis varies.
    pub oil_axis_cir_value: f64,
    /// Spot-vol label for the oil multiplier columns.
    pub sigma_s_base: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            rho_bars: vec![-0.689, -0.276, -0.138, 0.0, 0.138, 0.276, 0.689],
            cir_vol_values: vec![0.0295, 0.295, 0.59],
            oil_vol_mults: vec![0.1, 0.5, 1.0, 2.0],
            oil_axis_cir_value: 0.59,
            sigma_s_base: 0.3285,
        }
    }
}

/// The run configuration document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub zero_curve: String,
    pub cds_quotes: CdsFilesConfig,
    pub forward_curve: String,
    pub atm_vols: String,
    #[serde(default = "default_recovery")]
    pub recovery: f64,
    #[serde(default = "default_freq")]
    pub cds_payments_per_year: u32,
    /// Starting point for the ATM-vol calibration.
    pub oil_params_init: OilParamsConfig,
    /// Calibrated values; when present the vol calibration is skipped.
    #[serde(default)]
    pub oil_params: Option<OilParamsConfig>,
    pub cir_params: BTreeMap<String, CirParamsConfig>,
    pub swap: SwapConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub provenance: Vec<String>,
}

fn default_recovery() -> f64 {
    0.4
}
fn default_freq() -> u32 {
    4
}

/// Loaded market curves plus quotes.
#[derive(Debug, Clone)]
pub struct MarketBundle {
    pub curve: ZeroCurve,
    pub bank_quotes: CdsQuoteSet,
    pub airline_quotes: CdsQuoteSet,
    pub forward_quotes: ForwardCurveQuotes,
    pub atm_quotes: AtmVolQuotes,
}

/// A fully loaded and validated case: config + market data + provenance.
#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub config: RunConfig,
    pub market: MarketBundle,
    pub base_dir: PathBuf,
}

/// Reads a two-column CSV with a header row; `#` lines and blanks are
/// skipped. Errors carry file and line.
pub fn read_two_column_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::Parse {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(EngineError::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: format!("expected 2 comma-separated fields, got {}", fields.len()),
            });
        }
        match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
            (Ok(a), Ok(b)) => rows.push((a, b)),
            _ if !saw_header => {
                saw_header = true;
            }
            _ => {
                return Err(EngineError::Parse {
                    file: path.display().to_string(),
                    line: i + 1,
                    message: format!("cannot parse '{line}' as two numbers"),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(EngineError::Parse {
            file: path.display().to_string(),
            line: 0,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Loads, resolves and validates a run configuration. All invariant
/// violations are reported together.
pub fn load_market_config(path: &Path) -> Result<CaseStudy> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::Parse {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| EngineError::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut violations: Vec<String> = Vec::new();
    let resolve = |rel: &str| base_dir.join(rel);

    let curve = read_two_column_csv(&resolve(&config.zero_curve))
        .and_then(ZeroCurve::new)
        .map_err(|e| violations.push(format!("zero curve: {e}")))
        .ok();
    let load_cds = |rel: &str, violations: &mut Vec<String>| {
        read_two_column_csv(&resolve(rel))
            .and_then(|rows| {
                let (m, s): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
                // spreads quoted in bps
                let spreads = s.iter().map(|v| v / 1e4).collect();
                CdsQuoteSet::new(m, spreads, config.recovery, config.cds_payments_per_year)
            })
            .map_err(|e| violations.push(format!("cds quotes ({rel}): {e}")))
            .ok()
    };
    let bank_quotes = load_cds(&config.cds_quotes.bank, &mut violations);
    let airline_quotes = load_cds(&config.cds_quotes.airline, &mut violations);
    let forward_quotes = read_two_column_csv(&resolve(&config.forward_curve))
        .and_then(ForwardCurveQuotes::new)
        .map_err(|e| violations.push(format!("forward curve: {e}")))
        .ok();
    let atm_quotes = read_two_column_csv(&resolve(&config.atm_vols))
        .and_then(AtmVolQuotes::new)
        .map_err(|e| violations.push(format!("atm vols: {e}")))
        .ok();

    if let Err(e) = config.oil_params_init.to_params() {
        violations.push(format!("oil_params_init: {e}"));
    }
    if let Some(op) = &config.oil_params {
        if let Err(e) = op.to_params() {
            violations.push(format!("oil_params: {e}"));
        }
    }
    for name in ["bank", "airline"] {
        match config.cir_params.get(name) {
            None => violations.push(format!("cir_params: missing entry '{name}'")),
            Some(c) => {
                if let Err(e) = c.to_params() {
                    violations.push(format!("cir_params.{name}: {e}"));
                }
            }
        }
    }
    if !(config.swap.maturity_years > 0.0) {
        violations.push("swap.maturity_years must be > 0".into());
    }
    if config.swap.payments_per_year == 0 {
        violations.push("swap.payments_per_year must be >= 1".into());
    }
    if let Some(k) = config.swap.strike {
        if !(k > 0.0) {
            violations.push("swap.strike must be > 0".into());
        }
    }
    if config.simulation.paths == 0 {
        violations.push("simulation.paths must be >= 1".into());
    }
    if !(0.0..=1.0).contains(&config.simulation.lgd) {
        violations.push("simulation.lgd must be in [0, 1]".into());
    }
    if parse_estimator(&config.simulation.estimator).is_none() {
        violations.push(format!(
            "simulation.estimator '{}' (expected 'intensity-weighted' or 'indicator')",
            config.simulation.estimator
        ));
    }
    for &v in config
        .sweep
        .cir_vol_values
        .iter()
        .chain(config.sweep.oil_vol_mults.iter())
    {
        if !(v > 0.0) {
            violations.push(format!("sweep: non-positive volatility value {v}"));
        }
    }

    if !violations.is_empty() {
        return Err(EngineError::Config(violations));
    }
    Ok(CaseStudy {
        config,
        market: MarketBundle {
            curve: curve.unwrap(),
            bank_quotes: bank_quotes.unwrap(),
            airline_quotes: airline_quotes.unwrap(),
            forward_quotes: forward_quotes.unwrap(),
            atm_quotes: atm_quotes.unwrap(),
        },
        base_dir,
    })
}

fn parse_estimator(s: &str) -> Option<EstimatorMode> {
    match s {
        "intensity-weighted" => Some(EstimatorMode::IntensityWeighted),
        "indicator" => Some(EstimatorMode::Indicator),
        _ => None,
    }
}

impl CaseStudy {
    /// Counterparty CDS quotes for a side: the payer of the swap faces the
    /// bank, the receiver faces the airline.
    pub fn quotes_for(&self, side: Side) -> &CdsQuoteSet {
        match side {
            Side::Payer => &self.market.bank_quotes,
            Side::Receiver => &self.market.airline_quotes,
        }
    }

    pub fn cir_for(&self, side: Side) -> Result<CirParams> {
        let key = match side {
            Side::Payer => "bank",
            Side::Receiver => "airline",
        };
        self.config.cir_params[key].to_params()
    }

    pub fn hazard_for(&self, side: Side) -> Result<HazardCurve> {
        strip_hazard_curve(self.quotes_for(side), &self.market.curve)
    }

    /// Oil parameters: configured override, or the least-squares ATM fit.
    pub fn oil_params(&self) -> Result<OilParams> {
        match &self.config.oil_params {
            Some(op) => op.to_params(),
            None => calibrate_oil_params(
                &self.market.atm_quotes,
                &self.config.oil_params_init.to_params()?,
            ),
        }
    }

    /// Initial factor state: x0 = 0, L0 = ln(first forward quote).
    pub fn initial_state(&self) -> (f64, f64) {
        (0.0, self.market.forward_quotes.nodes[0].1.ln())
    }

    pub fn calibrated_oil(&self) -> Result<CalibratedOilModel> {
        let params = self.oil_params()?;
        let (x0, l0) = self.initial_state();
        Ok(CalibratedOilModel {
            params,
            shift: calibrate_shift(&params, &self.market.forward_quotes, x0, l0)?,
            x0,
            l0,
        })
    }

    pub fn sim_config(&self) -> Result<SimulationConfig> {
        let mut cfg = SimulationConfig::monthly(
            self.config.swap.maturity_years,
            self.config.simulation.paths,
            self.config.simulation.seed,
            self.config.simulation.lgd,
        )?;
        cfg.antithetic = self.config.simulation.antithetic;
        cfg.parallel = self.config.simulation.parallel;
        cfg.estimator = parse_estimator(&self.config.simulation.estimator)
            .ok_or_else(|| EngineError::invalid("estimator", &self.config.simulation.estimator))?;
        Ok(cfg)
    }

    /// The configured swap from the given side, using the fair strike when
    /// no strike is configured.
    pub fn swap(&self, side: Side, oil: &CalibratedOilModel) -> Result<CommoditySwap> {
        let proto = CommoditySwap::evenly_spaced(
            self.config.swap.maturity_years,
            self.config.swap.payments_per_year,
            1.0,
            side,
            self.config.swap.notional_per_period,
        )?;
        let strike = match self.config.swap.strike {
            Some(k) => k,
            None => crate::pricers::fair_strike(
                &proto,
                &oil.params,
                &oil.shift,
                &oil.state0(),
                &self.market.curve,
            )?,
        };
        Ok(proto.with_strike(strike))
    }

    /// Assembles the joint model for a scenario. Returns the model, the
    /// relaxed-fit ψ diagnostics count and the credit shift used.
    pub fn joint_model(
        &self,
        side: Side,
        oil: &CalibratedOilModel,
        rho_bar: f64,
        oil_vol_mult: f64,
        cir_vol_mult: f64,
        grid: &[f64],
    ) -> Result<(JointModel, usize)> {
        let oil_params = oil.params.with_vol_multiplier(oil_vol_mult)?;
        let shift = if oil_vol_mult == 1.0 {
            oil.shift.clone()
        } else {
            calibrate_shift(&oil_params, &self.market.forward_quotes, oil.x0, oil.l0)?
        };
        let cir = self.cir_for(side)?.with_vol_multiplier(cir_vol_mult)?;
        let hazard = self.hazard_for(side)?;
        let (credit_shift, violations): (CreditShift, _) =
            fit_credit_shift_relaxed(&cir, &hazard, grid)?;
        let corr: CorrelationSpec = map_market_correlation(rho_bar, &oil_params)?;
        Ok((
            JointModel {
                oil: CalibratedOilModel {
                    params: oil_params,
                    shift,
                    x0: oil.x0,
                    l0: oil.l0,
                },
                cir,
                credit_shift,
                corr,
            },
            violations.len(),
        ))
    }

    /// Sweep spec for the credit-volatility axis (columns are ν values).
    pub fn credit_sweep_spec(&self, side: Side) -> Result<SweepSpec> {
        let base = self.cir_for(side)?.nu;
        Ok(SweepSpec {
            rho_bars: self.config.sweep.rho_bars.clone(),
            oil_vol_mults: vec![1.0],
            cir_vol_mults: self
                .config
                .sweep
                .cir_vol_values
                .iter()
                .map(|v| v / base)
                .collect(),
        })
    }

    /// Sweep spec for the oil-volatility axis (ν held at the configured
    /// fixed value).
    pub fn oil_sweep_spec(&self, side: Side) -> Result<SweepSpec> {
        let base = self.cir_for(side)?.nu;
        Ok(SweepSpec {
            rho_bars: self.config.sweep.rho_bars.clone(),
            oil_vol_mults: self.config.sweep.oil_vol_mults.clone(),
            cir_vol_mults: vec![self.config.sweep.oil_axis_cir_value / base],
        })
    }

    pub fn product(&self, side: Side, oil: &CalibratedOilModel) -> Result<Product> {
        Ok(Product::Swap(self.swap(side, oil)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    #[test]
    fn loads_the_case_study_with_defaults() {
        let case = load_market_config(&data_dir().join("case_study.json")).unwrap();
        assert_eq!(case.market.bank_quotes.spreads.len(), 6);
        assert!((case.market.bank_quotes.spreads[5] - 0.0217).abs() < 1e-12);
        assert_eq!(case.config.simulation.paths, 200_000);
        assert_eq!(case.config.sweep.rho_bars.len(), 7);
        assert!(!case.config.provenance.is_empty());
        let cfg = case.sim_config().unwrap();
        assert_eq!(cfg.grid.len(), 60);
    }

    #[test]
    fn rejects_negative_spread_naming_the_field() {
        let dir = tempfile::tempdir().unwrap();
        for f in [
            "zero_curve.csv",
            "cds_airline.csv",
            "forward_curve.csv",
            "atm_vols.csv",
            "case_study.json",
        ] {
            std::fs::copy(data_dir().join(f), dir.path().join(f)).unwrap();
        }
        std::fs::write(
            dir.path().join("cds_bank.csv"),
            "maturity_years,spread_bps\n1,-5\n",
        )
        .unwrap();
        let err = load_market_config(&dir.path().join("case_study.json")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cds quotes"), "{msg}");
        assert!(msg.contains("spread"), "{msg}");
    }

    #[test]
    fn reports_multiple_violations_together() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["zero_curve.csv", "forward_curve.csv", "atm_vols.csv"] {
            std::fs::copy(data_dir().join(f), dir.path().join(f)).unwrap();
        }
        std::fs::write(
            dir.path().join("cds_bank.csv"),
            "maturity_years,spread_bps\n1,-5\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("cds_airline.csv"),
            "maturity_years,spread_bps\n2,10\n1,12\n",
        )
        .unwrap();
        let mut cfg: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(data_dir().join("case_study.json")).unwrap(),
        )
        .unwrap();
        cfg["simulation"]["lgd"] = serde_json::json!(1.7);
        std::fs::write(
            dir.path().join("case_study.json"),
            serde_json::to_string_pretty(&cfg).unwrap(),
        )
        .unwrap();
        let err = load_market_config(&dir.path().join("case_study.json")).unwrap_err();
        match err {
            EngineError::Config(list) => {
                assert!(list.len() >= 3, "want all violations, got {list:?}")
            }
            other => panic!("expected Config error, got {other}"),
        }
    }

    #[test]
    fn config_round_trip_is_identical() {
        let case = load_market_config(&data_dir().join("case_study.json")).unwrap();
        let text = serde_json::to_string_pretty(&case.config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for f in [
            "zero_curve.csv",
            "cds_bank.csv",
            "cds_airline.csv",
            "forward_curve.csv",
            "atm_vols.csv",
        ] {
            std::fs::copy(data_dir().join(f), dir.path().join(f)).unwrap();
        }
        std::fs::write(dir.path().join("case_study.json"), &text).unwrap();
        let again = load_market_config(&dir.path().join("case_study.json")).unwrap();
        assert_eq!(case.config, again.config);
        assert_eq!(case.market.curve, again.market.curve);
        assert_eq!(case.market.bank_quotes, again.market.bank_quotes);
        assert_eq!(case.market.forward_quotes, again.market.forward_quotes);
    }

    #[test]
    fn csv_reader_diagnoses_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "a,b\n1,2\nx,y\n").unwrap();
        let err = read_two_column_csv(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") || msg.contains(":3"), "{msg}");
    }

    #[test]
    fn fair_strike_of_bundled_data_is_126() {
        let case = load_market_config(&data_dir().join("case_study.json")).unwrap();
        // pin the calibrated parameters so this test does not re-fit vols
        let mut case = case;
        case.config.oil_params = Some(OilParamsConfig {
            k_x: 0.7170,
            sigma_x: 0.3522,
            sigma_l: 0.19,
            rho_xl: -0.0392,
            mu_l: 0.0,
        });
        let oil = case.calibrated_oil().unwrap();
        let swap = case.swap(Side::Payer, &oil).unwrap();
        assert!((swap.strike - 126.0).abs() < 1e-9); // configured strike
        let fair = crate::pricers::fair_strike(
            &swap,
            &oil.params,
            &oil.shift,
            &oil.state0(),
            &case.market.curve,
        )
        .unwrap();
        assert!((fair - 126.0).abs() < 1e-4, "fair strike {fair}");
        let pcs = crate::pricers::swap_value(
            &swap,
            &oil.params,
            &oil.shift,
            &oil.state0(),
            &case.market.curve,
        )
        .unwrap();
        assert!(pcs.abs() < 0.01, "PCS(0; 126) = {pcs}");
    }
}
