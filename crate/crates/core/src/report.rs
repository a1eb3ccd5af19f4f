//! Result rows, CSV emission and the paper-style report tables.
//!
//! The CSV column order is stable and documented in the README:
//! `scenario_id, rho_bar, oil_vol_mult, cir_vol_mult, nu_value, sigma_s,
//! side, estimator, cva_usd, std_error, cva_pct_of_fixed_leg,
//! adjusted_strike, fixed_leg, psi_violations, status, message`.

use std::fmt::Write as _;
use std::path::Path;

use crate::cva_engine::{EstimatorMode, SweepCell};
use crate::error::{EngineError, Result};
use crate::oil_model::{model_atm_vol, OilParams};
use crate::pricers::Side;

/// One report row: a sweep cell flattened for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario_id: String,
    pub rho_bar: f64,
    pub oil_vol_mult: f64,
    pub cir_vol_mult: f64,
    /// Absolute intensity volatility for the cell.
    pub nu_value: f64,
    /// Spot-vol column label (base σ_S times the oil multiplier).
    pub sigma_s: f64,
    pub side: Side,
    pub estimator: EstimatorMode,
    pub cva_usd: f64,
    pub std_error: f64,
    pub cva_pct_of_fixed_leg: f64,
    pub adjusted_strike: f64,
    pub fixed_leg: f64,
    pub psi_violations: usize,
    pub status: String,
    pub message: String,
}

impl ResultRow {
    /// Flattens a sweep cell. `nu_base` and `sigma_s_base` provide the
    /// absolute column labels.
    pub fn from_cell(
        cell: &SweepCell,
        side: Side,
        nu_base: f64,
        sigma_s_base: f64,
        id_prefix: &str,
        index: usize,
    ) -> ResultRow {
        let (cva, se, pct, strike, fixed, psi, status, message, estimator) = match &cell.outcome {
            Ok(r) => (
                r.cva,
                r.std_error,
                r.cva_pct_of_fixed_leg,
                r.adjusted_strike,
                r.fixed_leg,
                r.psi_violations,
                "ok".to_string(),
                String::new(),
                r.scenario.estimator,
            ),
            Err(msg) => (
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                0,
                "failed".to_string(),
                msg.clone(),
                EstimatorMode::IntensityWeighted,
            ),
        };
        ResultRow {
            scenario_id: format!("{id_prefix}-{index:03}"),
            rho_bar: cell.rho_bar,
            oil_vol_mult: cell.oil_vol_mult,
            cir_vol_mult: cell.cir_vol_mult,
            nu_value: nu_base * cell.cir_vol_mult,
            sigma_s: sigma_s_base * cell.oil_vol_mult,
            side,
            estimator,
            cva_usd: cva,
            std_error: se,
            cva_pct_of_fixed_leg: pct,
            adjusted_strike: strike,
            fixed_leg: fixed,
            psi_violations: psi,
            status,
            message,
        }
    }
}

pub const CSV_HEADER: &str = "scenario_id,rho_bar,oil_vol_mult,cir_vol_mult,nu_value,sigma_s,side,estimator,cva_usd,std_error,cva_pct_of_fixed_leg,adjusted_strike,fixed_leg,psi_violations,status,message";

fn estimator_str(e: EstimatorMode) -> &'static str {
    match e {
        EstimatorMode::IntensityWeighted => "intensity-weighted",
        EstimatorMode::Indicator => "indicator",
    }
}

/// Renders rows as CSV (stable column order, deterministic formatting).
pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            r.scenario_id,
            r.rho_bar,
            r.oil_vol_mult,
            r.cir_vol_mult,
            r.nu_value,
            r.sigma_s,
            r.side,
            estimator_str(r.estimator),
            r.cva_usd,
            r.std_error,
            r.cva_pct_of_fixed_leg,
            r.adjusted_strike,
            r.fixed_leg,
            r.psi_violations,
            r.status,
            r.message.replace(',', ";"),
        );
    }
    out
}

/// Parses rows back from the CSV emitted by [`results_to_csv`].
pub fn results_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(EngineError::Parse {
                file: "results csv".into(),
                line: 1,
                message: "missing or unexpected header".into(),
            })
        }
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 16 {
            return Err(EngineError::Parse {
                file: "results csv".into(),
                line: i + 1,
                message: format!("expected 16 fields, got {}", f.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            if s == "NaN" {
                return Ok(f64::NAN);
            }
            s.parse().map_err(|_| EngineError::Parse {
                file: "results csv".into(),
                line: i + 1,
                message: format!("bad {what}: '{s}'"),
            })
        };
        rows.push(ResultRow {
            scenario_id: f[0].to_string(),
            rho_bar: num(f[1], "rho_bar")?,
            oil_vol_mult: num(f[2], "oil_vol_mult")?,
            cir_vol_mult: num(f[3], "cir_vol_mult")?,
            nu_value: num(f[4], "nu_value")?,
            sigma_s: num(f[5], "sigma_s")?,
            side: match f[6] {
                "payer" => Side::Payer,
                "receiver" => Side::Receiver,
                other => {
                    return Err(EngineError::Parse {
                        file: "results csv".into(),
                        line: i + 1,
                        message: format!("bad side '{other}'"),
                    })
                }
            },
            estimator: match f[7] {
                "indicator" => EstimatorMode::Indicator,
                _ => EstimatorMode::IntensityWeighted,
            },
            cva_usd: num(f[8], "cva_usd")?,
            std_error: num(f[9], "std_error")?,
            cva_pct_of_fixed_leg: num(f[10], "cva_pct")?,
            adjusted_strike: num(f[11], "adjusted_strike")?,
            fixed_leg: num(f[12], "fixed_leg")?,
            psi_violations: num(f[13], "psi_violations")? as usize,
            status: f[14].to_string(),
            message: f[15..].join(","),
        });
    }
    Ok(rows)
}

/// Renders the paper-layout table: one block of two lines per `ρ̄` (the
/// adjustment and the adjusted strike), columns along the volatility axis.
/// Every cell carries its Monte Carlo uncertainty.
pub fn render_table(rows: &[ResultRow], axis: TableAxis, fixed_leg: f64) -> Result<String> {
    if rows.is_empty() {
        return Err(EngineError::invalid("report", "no results to render"));
    }
    let mut rho_bars: Vec<f64> = rows.iter().map(|r| r.rho_bar).collect();
    rho_bars.sort_by(f64::total_cmp);
    rho_bars.dedup();
    let mut cols: Vec<f64> = rows.iter().map(|r| axis.key(r)).collect();
    cols.sort_by(f64::total_cmp);
    cols.dedup();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "CR-CVA table ({}), fixed leg {:.2} USD",
        axis.label(),
        fixed_leg
    );
    let _ = write!(out, "{:>8} |", "rho_bar%");
    for c in &cols {
        let _ = write!(out, " {:>24}", format!("{} = {}", axis.short(), c));
    }
    out.push('\n');
    let width = 10 + cols.len() * 25;
    out.push_str(&"-".repeat(width));
    out.push('\n');
    for rb in &rho_bars {
        let _ = write!(out, "{:>8} |", format!("{:+.1}", rb * 100.0));
        for c in &cols {
            let cell = rows
                .iter()
                .find(|r| r.rho_bar == *rb && axis.key(r) == *c);
            match cell {
                Some(r) if r.status == "ok" => {
                    let _ = write!(
                        out,
                        " {:>24}",
                        format!("{:.2} ± {:.2}", r.cva_usd, r.std_error)
                    );
                }
                Some(_) => {
                    let _ = write!(out, " {:>24}", "failed");
                }
                None => {
                    let _ = write!(out, " {:>24}", "-");
                }
            }
        }
        out.push('\n');
        let _ = write!(out, "{:>8} |", "K_adj");
        for c in &cols {
            let cell = rows
                .iter()
                .find(|r| r.rho_bar == *rb && axis.key(r) == *c);
            match cell {
                Some(r) if r.status == "ok" => {
                    let _ = write!(
                        out,
                        " {:>24}",
                        format!(
                            "{:.2} ± {:.2}",
                            r.adjusted_strike,
                            r.std_error / implied_annuity(r)
                        )
                    );
                }
                _ => {
                    let _ = write!(out, " {:>24}", "-");
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Annuity recovered from the row: `fixed = K·A` and `K_adj = K - s·cva/A`
/// give `A = (fixed - s·cva) / K_adj`.
fn implied_annuity(r: &ResultRow) -> f64 {
    (r.fixed_leg - r.side.sign() * r.cva_usd) / r.adjusted_strike
}

/// Which volatility axis a table varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableAxis {
    /// Columns are intensity volatility values ν.
    CreditVol,
    /// Columns are spot-vol labels σ_S.
    OilVol,
}

impl TableAxis {
    fn key(&self, r: &ResultRow) -> f64 {
        match self {
            TableAxis::CreditVol => r.nu_value,
            TableAxis::OilVol => r.sigma_s,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            TableAxis::CreditVol => "effect of credit spread volatility",
            TableAxis::OilVol => "effect of oil volatility",
        }
    }

    fn short(&self) -> &'static str {
        match self {
            TableAxis::CreditVol => "nu",
            TableAxis::OilVol => "sigma_S",
        }
    }
}

/// Model implied-vol term structure `(T, vol)` pairs for plotting, at the
/// base parameters and at a multiplied variant.
pub fn vol_term_structure(
    p: &OilParams,
    mult: f64,
    expiries: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let scaled = p.with_vol_multiplier(mult)?;
    expiries
        .iter()
        .map(|&t| {
            Ok((
                t,
                model_atm_vol(p, t)?,
                model_atm_vol(&scaled, t)?,
            ))
        })
        .collect()
}

/// Writes the report artifacts for one sweep: the CSV, the rendered
/// table, and the vol term-structure data. Pure function of its inputs;
/// rendering twice produces identical bytes.
pub fn render_report(
    rows: &[ResultRow],
    axis: TableAxis,
    fixed_leg: f64,
    oil_params: &OilParams,
    out_dir: &Path,
    stem: &str,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(format!("{stem}.csv")), results_to_csv(rows))?;
    std::fs::write(
        out_dir.join(format!("{stem}.txt")),
        render_table(rows, axis, fixed_leg)?,
    )?;
    let expiries: Vec<f64> = (1..=60).map(|i| i as f64 / 12.0).collect();
    let ts = vol_term_structure(oil_params, 2.0, &expiries)?;
    let mut vols = String::from("expiry_years,model_vol,model_vol_x2\n");
    for (t, v, v2) in ts {
        let _ = writeln!(vols, "{t:.6},{v:.6},{v2:.6}");
    }
    std::fs::write(out_dir.join("vol_term_structure.csv"), vols)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(rho: f64, nu: f64, cva: f64) -> ResultRow {
        ResultRow {
            scenario_id: format!("t-{rho}-{nu}"),
            rho_bar: rho,
            oil_vol_mult: 1.0,
            cir_vol_mult: nu / 0.5945,
            nu_value: nu,
            sigma_s: 0.3285,
            side: Side::Payer,
            estimator: EstimatorMode::IntensityWeighted,
            cva_usd: cva,
            std_error: 0.3,
            cva_pct_of_fixed_leg: 100.0 * cva / 6852.35,
            adjusted_strike: 126.0 - cva / (6852.35 / 126.0),
            fixed_leg: 6852.35,
            psi_violations: 0,
            status: "ok".into(),
            message: String::new(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![sample_row(0.0, 0.59, 63.42), sample_row(0.689, 0.59, 152.05)];
        let csv = results_to_csv(&rows);
        let back = results_from_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].scenario_id, rows[0].scenario_id);
        assert!((back[1].cva_usd - 152.05).abs() < 1e-9);
        assert_eq!(back[1].side, Side::Payer);
    }

    #[test]
    fn single_cell_table_renders() {
        let rows = vec![sample_row(0.0, 0.59, 63.42)];
        let table = render_table(&rows, TableAxis::CreditVol, 6852.35).unwrap();
        assert!(table.contains("63.42"), "{table}");
        assert!(table.contains("+0.0"), "{table}");
    }

    #[test]
    fn seven_by_three_layout_matches() {
        let mut rows = Vec::new();
        for &rho in &[-0.689, -0.276, -0.138, 0.0, 0.138, 0.276, 0.689] {
            for &nu in &[0.0295, 0.295, 0.59] {
                rows.push(sample_row(rho, nu, 50.0 + rho * 100.0 + nu));
            }
        }
        let table = render_table(&rows, TableAxis::CreditVol, 6852.35).unwrap();
        // 7 ρ̄ blocks of two lines each plus header and rule
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3 + 14, "{table}");
        assert!(lines[1].contains("nu = 0.0295"));
        assert!(lines[1].contains("nu = 0.59"));
        assert!(table.contains("-68.9"));
        assert!(table.contains("+68.9"));
        // every data cell carries its uncertainty
        for block in lines.iter().skip(3) {
            if block.contains('.') {
                assert!(block.contains('±') || block.contains("K_adj"), "{block}");
            }
        }
    }

    #[test]
    fn percentage_arithmetic() {
        let r = sample_row(0.0, 0.59, 63.42);
        assert!((r.cva_pct_of_fixed_leg - 0.9255).abs() < 1e-3);
    }

    #[test]
    fn rendering_is_idempotent() {
        let rows = vec![sample_row(0.0, 0.59, 63.42), sample_row(0.138, 0.295, 70.0)];
        let a = render_table(&rows, TableAxis::CreditVol, 6852.35).unwrap();
        let b = render_table(&rows, TableAxis::CreditVol, 6852.35).unwrap();
        assert_eq!(a, b);
        let c1 = results_to_csv(&rows);
        let c2 = results_to_csv(&rows);
        assert_eq!(c1, c2);
    }
}
