//! Command-line front end: load market data, calibrate, price, compute
//! CVA, run sweeps and render report tables.
//!
//! Exit codes: 0 success, 2 configuration error, 3 calibration failure,
//! 4 simulation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crcva_core::config::{load_market_config, CaseStudy};
use crcva_core::credit_model::CalibratedCreditModel;
use crcva_core::cva_engine::{cva_monte_carlo, run_sweep, Product, SweepInputs};
use crcva_core::error::EngineError;
use crcva_core::pricers::{fair_strike, fixed_leg_value, swap_value, Side};
use crcva_core::report::{
    render_report, render_table, results_from_csv, results_to_csv, ResultRow, TableAxis,
};

#[derive(Parser)]
#[command(
    name = "crcva",
    about = "Counterparty-risk CVA engine for commodity forwards and swaps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Payer,
    Receiver,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::Payer => Side::Payer,
            SideArg::Receiver => Side::Receiver,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    IntensityWeighted,
    Indicator,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Credit,
    Oil,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Contract side whose counterparty is priced.
    #[arg(long, value_enum, default_value = "payer")]
    side: SideArg,
    /// RNG seed (fixed default from the config, never entropy).
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo path count.
    #[arg(long)]
    paths: Option<usize>,
    /// Loss given default for the adjustment.
    #[arg(long)]
    lgd: Option<f64>,
    /// Market correlation corr(dλ, dS).
    #[arg(long, default_value_t = 0.0)]
    rho_bar: f64,
    /// Multiplier on both commodity factor volatilities.
    #[arg(long, default_value_t = 1.0)]
    oil_vol_mult: f64,
    /// Multiplier on the intensity volatility ν.
    #[arg(long, default_value_t = 1.0)]
    cir_vol_mult: f64,
    /// Estimator variant.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Force the deterministic single-threaded reference mode.
    #[arg(long)]
    single_thread: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the commodity and credit models; write serialized state.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Price the configured swap without counterparty risk.
    Price {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "payer")]
        side: SideArg,
    },
    /// Compute the CR-CVA for one scenario.
    Cva {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run a correlation × volatility scenario grid.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Which volatility axis the columns vary.
        #[arg(long, value_enum, default_value = "credit")]
        axis: AxisArg,
    },
    /// Render tables from a previously written results CSV.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Results CSV produced by `cva` or `sweep`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value = "credit")]
        axis: AxisArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(common: &CommonArgs) -> Result<CaseStudy, EngineError> {
    let case = load_market_config(&common.config)?;
    for note in &case.config.provenance {
        eprintln!("note: {note}");
    }
    Ok(case)
}

fn apply_overrides(case: &mut CaseStudy, s: &ScenarioArgs) {
    if let Some(seed) = s.seed {
        case.config.simulation.seed = seed;
    }
    if let Some(paths) = s.paths {
        case.config.simulation.paths = paths;
    }
    if let Some(lgd) = s.lgd {
        case.config.simulation.lgd = lgd;
    }
    if let Some(est) = s.estimator {
        case.config.simulation.estimator = match est {
            EstimatorArg::IntensityWeighted => "intensity-weighted".into(),
            EstimatorArg::Indicator => "indicator".into(),
        };
    }
    if s.single_thread {
        case.config.simulation.parallel = false;
    }
}

fn run(cli: Cli) -> Result<(), EngineError> {
    match cli.command {
        Command::Calibrate { common } => {
            let case = load(&common)?;
            let oil = case.calibrated_oil()?;
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(common.out.join("oil_model.txt"), oil.to_text())?;
            println!(
                "oil params: k_x {:.6} sigma_x {:.6} sigma_l {:.6} rho_xl {:+.6}",
                oil.params.k_x, oil.params.sigma_x, oil.params.sigma_l, oil.params.rho_xl
            );
            let grid = case.sim_config()?.grid;
            for (side, name) in [(Side::Payer, "bank"), (Side::Receiver, "airline")] {
                let hazard = case.hazard_for(side)?;
                let cir = case.cir_for(side)?;
                let (shift, violations) =
                    crcva_core::credit_model::fit_credit_shift_relaxed(&cir, &hazard, &grid)?;
                if !violations.is_empty() {
                    eprintln!(
                        "note: {name} credit shift needs ψ < 0 on {} grid intervals (kept; survival fit is exact)",
                        violations.len()
                    );
                }
                let model = CalibratedCreditModel { params: cir, shift };
                std::fs::write(
                    common.out.join(format!("credit_{name}.txt")),
                    model.to_text(),
                )?;
                println!(
                    "{name}: hazard nodes {:?} bp, feller {:+.4}",
                    hazard
                        .hazards()
                        .iter()
                        .map(|h| (h * 1e4).round())
                        .collect::<Vec<_>>(),
                    cir.feller_indicator()
                );
            }
            println!("calibrated state written to {}", common.out.display());
            Ok(())
        }
        Command::Price { common, side } => {
            let case = load(&common)?;
            let side: Side = side.into();
            let oil = case.calibrated_oil()?;
            let swap = case.swap(side, &oil)?;
            let s0 = oil.state0();
            let value = swap_value(&swap, &oil.params, &oil.shift, &s0, &case.market.curve)?;
            let fair = fair_strike(&swap, &oil.params, &oil.shift, &s0, &case.market.curve)?;
            let fixed = fixed_leg_value(&swap, &case.market.curve)?;
            let annuity = swap.annuity(&case.market.curve)?;
            println!("side              {side}");
            println!("strike            {:.4} USD/bbl", swap.strike);
            println!("fair strike       {fair:.4} USD/bbl");
            println!("swap value        {value:.4} USD");
            println!("fixed leg value   {fixed:.4} USD");
            println!("annuity           {annuity:.6}");
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(
                common.out.join("price.csv"),
                format!(
                    "side,strike,fair_strike,swap_value,fixed_leg,annuity\n{side},{:.6},{fair:.6},{value:.6},{fixed:.6},{annuity:.6}\n",
                    swap.strike
                ),
            )?;
            Ok(())
        }
        Command::Cva { common, scenario } => {
            let mut case = load(&common)?;
            apply_overrides(&mut case, &scenario);
            let side: Side = scenario.side.into();
            let oil = case.calibrated_oil()?;
            let cfg = case.sim_config()?;
            let (model, psi_violations) = case.joint_model(
                side,
                &oil,
                scenario.rho_bar,
                scenario.oil_vol_mult,
                scenario.cir_vol_mult,
                &cfg.grid,
            )?;
            if psi_violations > 0 {
                eprintln!(
                    "note: credit shift needs ψ < 0 on {psi_violations} grid intervals (survival fit still exact)"
                );
            }
            let product = case.product(side, &oil)?;
            let mut result = cva_monte_carlo(&product, &model, &case.market.curve, &cfg)?;
            result.scenario.oil_vol_mult = scenario.oil_vol_mult;
            result.scenario.cir_vol_mult = scenario.cir_vol_mult;
            result.psi_violations = psi_violations;
            println!("side              {side}");
            println!("rho_bar           {:+.4}", scenario.rho_bar);
            println!("cva               {:.4} USD", result.cva);
            println!("std error         {:.4} USD", result.std_error);
            println!("cva % fixed leg   {:.4}%", result.cva_pct_of_fixed_leg);
            println!("adjusted strike   {:.4} USD/bbl", result.adjusted_strike);
            let nu_base = case.cir_for(side)?.nu;
            let row = ResultRow::from_cell(
                &crcva_core::cva_engine::SweepCell {
                    rho_bar: scenario.rho_bar,
                    oil_vol_mult: scenario.oil_vol_mult,
                    cir_vol_mult: scenario.cir_vol_mult,
                    outcome: Ok(result),
                },
                side,
                nu_base,
                case.config.sweep.sigma_s_base,
                "cva",
                0,
            );
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(common.out.join("cva.csv"), results_to_csv(&[row]))?;
            println!("result written to {}", common.out.join("cva.csv").display());
            Ok(())
        }
        Command::Sweep {
            common,
            scenario,
            axis,
        } => {
            let mut case = load(&common)?;
            apply_overrides(&mut case, &scenario);
            let side: Side = scenario.side.into();
            let oil = case.calibrated_oil()?;
            let cfg = case.sim_config()?;
            let product: Product = case.product(side, &oil)?;
            let spec = match axis {
                AxisArg::Credit => case.credit_sweep_spec(side)?,
                AxisArg::Oil => case.oil_sweep_spec(side)?,
            };
            let hazard = case.hazard_for(side)?;
            let quotes = case.quotes_for(side).clone();
            let inputs = SweepInputs {
                product: &product,
                curve: &case.market.curve,
                fwd_quotes: &case.market.forward_quotes,
                market_hazard: &hazard,
                survival_check_at: &quotes.maturities,
                oil_base: oil.params,
                cir_base: case.cir_for(side)?,
                x0: oil.x0,
                l0: oil.l0,
                config: &cfg,
            };
            let cells = run_sweep(&inputs, &spec);
            let nu_base = case.cir_for(side)?.nu;
            let stem = match axis {
                AxisArg::Credit => format!("sweep_{side}_credit_vol"),
                AxisArg::Oil => format!("sweep_{side}_oil_vol"),
            };
            let rows: Vec<ResultRow> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    ResultRow::from_cell(
                        c,
                        side,
                        nu_base,
                        case.config.sweep.sigma_s_base,
                        &stem,
                        i,
                    )
                })
                .collect();
            for r in rows.iter().filter(|r| r.status != "ok") {
                eprintln!(
                    "note: cell (rho_bar {:+.3}, oil x{}, nu {:.4}) failed: {}",
                    r.rho_bar, r.oil_vol_mult, r.nu_value, r.message
                );
            }
            let table_axis = match axis {
                AxisArg::Credit => TableAxis::CreditVol,
                AxisArg::Oil => TableAxis::OilVol,
            };
            let fixed = fixed_leg_value(&case.swap(side, &oil)?, &case.market.curve)?;
            render_report(&rows, table_axis, fixed, &oil.params, &common.out, &stem)?;
            println!(
                "{} cells written to {}",
                rows.len(),
                common.out.join(format!("{stem}.csv")).display()
            );
            print!("{}", render_table(&rows, table_axis, fixed)?);
            Ok(())
        }
        Command::Report {
            common,
            results,
            axis,
        } => {
            let case = load(&common)?;
            let text = std::fs::read_to_string(&results)?;
            let rows = results_from_csv(&text)?;
            let oil = case.calibrated_oil()?;
            let table_axis = match axis {
                AxisArg::Credit => TableAxis::CreditVol,
                AxisArg::Oil => TableAxis::OilVol,
            };
            let fixed = rows
                .iter()
                .find(|r| r.fixed_leg.is_finite())
                .map(|r| r.fixed_leg)
                .unwrap_or(0.0);
            let stem = results
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("report")
                .to_string();
            render_report(
                &rows,
                table_axis,
                fixed,
                &oil.params,
                &common.out,
                &format!("{stem}_rendered"),
            )?;
            print!("{}", render_table(&rows, table_axis, fixed)?);
            Ok(())
        }
    }
}
