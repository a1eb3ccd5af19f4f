//! End-to-end checks of the `crcva` command-line tool: pipeline stages,
//! output files, exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_crcva")
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn copy_data(dir: &Path) {
    for f in [
        "zero_curve.csv",
        "cds_bank.csv",
        "cds_airline.csv",
        "forward_curve.csv",
        "atm_vols.csv",
        "case_study.json",
    ] {
        std::fs::copy(data_dir().join(f), dir.join(f)).unwrap();
    }
}

/// Writes a copy of the case study with small simulation settings and a
/// reduced sweep grid so CLI runs stay fast.
fn small_config(dir: &Path) -> PathBuf {
    copy_data(dir);
    let path = dir.join("case_study.json");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    cfg["simulation"]["paths"] = serde_json::json!(2000);
    cfg["sweep"]["rho_bars"] = serde_json::json!([-0.276, 0.0, 0.276]);
    cfg["sweep"]["cir_vol_values"] = serde_json::json!([0.295, 0.59]);
    cfg["sweep"]["oil_vol_mults"] = serde_json::json!([0.5, 1.0]);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn calibrate_writes_round_trippable_state() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = tmp.path().join("out");
    let res = Command::new(exe())
        .args(["calibrate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // provenance notes are echoed
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("217 bps"), "{stderr}");

    let oil_text = std::fs::read_to_string(out.join("oil_model.txt")).unwrap();
    let oil = crcva_core::oil_model::CalibratedOilModel::from_text(&oil_text).unwrap();
    assert!((oil.params.k_x - 0.7170).abs() < 5e-3);
    assert_eq!(oil.to_text(), oil_text);

    for name in ["credit_bank.txt", "credit_airline.txt"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let model = crcva_core::credit_model::CalibratedCreditModel::from_text(&text).unwrap();
        assert_eq!(model.to_text(), text);
    }
}

#[test]
fn price_reports_the_fair_strike() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = tmp.path().join("out");
    let res = Command::new(exe())
        .args(["price", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("fair strike       126.000"), "{stdout}");
    let csv = std::fs::read_to_string(out.join("price.csv")).unwrap();
    assert!(csv.starts_with("side,strike,fair_strike,swap_value,fixed_leg,annuity"));
}

#[test]
fn cva_writes_result_row() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = tmp.path().join("out");
    let res = Command::new(exe())
        .args([
            "cva",
            "--config",
            config.to_str().unwrap(),
            "--rho-bar",
            "0.138",
            "--side",
            "receiver",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows =
        crcva_core::report::results_from_csv(&std::fs::read_to_string(out.join("cva.csv")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].side, crcva_core::pricers::Side::Receiver);
    assert!(rows[0].cva_usd > 0.0);
    assert!(rows[0].std_error > 0.0);
}

#[test]
fn sweep_writes_grid_and_report_rerenders() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = tmp.path().join("out");
    let res = Command::new(exe())
        .args([
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--axis",
            "credit",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv_path = out.join("sweep_payer_credit_vol.csv");
    let rows =
        crcva_core::report::results_from_csv(&std::fs::read_to_string(&csv_path).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 3 * 2, "3 correlations x 2 vol columns");
    assert!(out.join("sweep_payer_credit_vol.txt").exists());
    assert!(out.join("vol_term_structure.csv").exists());

    // re-render from the CSV through the report stage
    let res2 = Command::new(exe())
        .args([
            "report",
            "--config",
            config.to_str().unwrap(),
            "--results",
            csv_path.to_str().unwrap(),
            "--axis",
            "credit",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(res2.status.success());
    let rendered = String::from_utf8_lossy(&res2.stdout);
    assert!(rendered.contains("nu = 0.59"), "{rendered}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let res = Command::new(exe())
        .args(["price", "--config"])
        .arg(tmp.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));

    // negative spread in a data file
    let config = small_config(tmp.path());
    std::fs::write(
        tmp.path().join("cds_bank.csv"),
        "maturity_years,spread_bps\n1,-5\n",
    )
    .unwrap();
    let res = Command::new(exe())
        .args(["price", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));

    // infeasible correlation is a scenario-input error
    let config2 = small_config(tmp.path());
    let res = Command::new(exe())
        .args([
            "cva",
            "--config",
            config2.to_str().unwrap(),
            "--rho-bar",
            "0.99",
            "--paths",
            "100",
        ])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("feasible"));
}

#[test]
fn calibration_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    // steeply collapsing spreads imply a negative forward hazard
    std::fs::write(
        tmp.path().join("cds_bank.csv"),
        "maturity_years,spread_bps\n1,500\n5,20\n",
    )
    .unwrap();
    let res = Command::new(exe())
        .args([
            "cva",
            "--config",
            config.to_str().unwrap(),
            "--paths",
            "100",
        ])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
