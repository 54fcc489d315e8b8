mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::sample_data_dir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defi-parity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn data(name: &str) -> String {
    sample_data_dir().join(name).to_string_lossy().into_owned()
}

fn backtest(out: &Path, methods: &str) -> Output {
    run(&[
        "backtest",
        "--scores",
        &data("scores.csv"),
        "--yields",
        &data("yields.csv"),
        "--fx",
        &data("fx.csv"),
        "--method",
        methods,
        "--start",
        "2021-12-01",
        "--end",
        "2022-05-22",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn allocate_prints_weights() {
    let o = run(&["allocate", "--scores", &data("scores.csv"), "--method", "erc"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("aave-v2") && text.contains("portfolio risk"));
}

#[test]
fn allocate_json_weights_sum_to_one() {
    let o = run(&["allocate", "--scores", &data("scores.csv"), "--method", "tvl", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let sum: f64 = v["weights"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() <= 1e-12);
    assert_eq!(v["method"], "tvl");
}

#[test]
fn solver_budget_exhaustion_exits_3() {
    let o = run(&["allocate", "--scores", &data("scores.csv"), "--method", "erc", "--max-iter", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn bad_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("scores.csv");
    std::fs::write(&bad, "protocol_id,name,chain,score,tvl\na,A,Ethereum,1.0,\nb,B,Ethereum,-2,\n").unwrap();
    let o = run(&["allocate", "--scores", bad.to_str().unwrap(), "--method", "ew"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scores.csv:3:"), "{err}");
}

#[test]
fn missing_file_exits_4() {
    let o = run(&["allocate", "--scores", "/nonexistent/scores.csv", "--method", "ew"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let o = backtest(&file.join("out"), "ew");
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn backtest_then_report_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let o = backtest(dir.path(), "ew,tvl,erc");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ledger_ew.csv", "ledger_tvl.csv", "ledger_erc.csv", "comparison.csv", "monthly_report.csv", "plot_data.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let ledger = dir.path().to_str().unwrap();

    let table = run(&["report", "--ledger", ledger]);
    assert_eq!(table.status.code(), Some(0));
    let backtest_stdout = String::from_utf8(o.stdout).unwrap();
    let table = String::from_utf8(table.stdout).unwrap();
    // the backtest prints the same tables it writes
    assert!(backtest_stdout.contains(&table));

    let csv = run(&["report", "--ledger", ledger, "--format", "csv"]);
    assert_eq!(csv.stdout, std::fs::read(dir.path().join("monthly_report.csv")).unwrap());

    let json = run(&["report", "--ledger", ledger, "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
}

#[test]
fn backtest_outputs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(backtest(a.path(), "erc,ew").status.success());
    assert!(backtest(b.path(), "ew,erc").status.success());
    for f in ["ledger_ew.csv", "ledger_erc.csv", "comparison.csv", "monthly_report.csv", "plot_data.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn fetch_without_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fetch", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_method_is_a_usage_error() {
    let o = run(&["allocate", "--scores", &data("scores.csv"), "--method", "minvar"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_defaults_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[defaults]\nmax_iter = 1\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "allocate", "--scores", &data("scores.csv"), "--method", "erc"]);
    assert_eq!(o.status.code(), Some(3));
}
