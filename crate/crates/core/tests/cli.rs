//! End-to-end checks of the `epikit` binary. Preset outputs are compared
//! against files in `tests/golden`; run with `EPIKIT_BLESS=1` to rewrite them.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epikit::calibrate::{fermi_dirac_eval, FermiDiracParams, FitProblem, SirFit};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_epikit"));
    c.env_remove("EPIKIT_SEED").env_remove("EPIKIT_DATA_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn fields_match(a: &str, b: &str) -> bool {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()) + 1e-12,
        _ => a == b,
    }
}

/// Compare text line by line, numbers to a relative 1e-9.
fn assert_same_table(name: &str, got: &str, want: &str) {
    let (g, w): (Vec<&str>, Vec<&str>) = (got.lines().collect(), want.lines().collect());
    assert_eq!(g.len(), w.len(), "{name}: line count differs");
    for (k, (a, b)) in g.iter().zip(&w).enumerate() {
        let split = |s: &'static str| move |l: &&str| l.split(s).map(str::to_string).collect::<Vec<_>>();
        let (fa, fb) = if a.starts_with('#') {
            (split(" = ")(a), split(" = ")(b))
        } else {
            (split(",")(a), split(",")(b))
        };
        let same = fa.len() == fb.len() && fa.iter().zip(&fb).all(|(x, y)| fields_match(x, y));
        assert!(same, "{name}: line {} differs\n  got:  {a}\n  want: {b}", k + 1);
    }
}

fn check_golden(name: &str, args: &[&str]) {
    let got = stdout_ok(args);
    let path = golden_dir().join(name);
    if std::env::var_os("EPIKIT_BLESS").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden file {}; rerun with EPIKIT_BLESS=1", path.display()));
    // Byte-identical by default. A platform whose libm rounds differently can
    // set EPIKIT_GOLDEN_TOLERANT=1 to compare numbers to a relative 1e-9.
    if std::env::var_os("EPIKIT_GOLDEN_TOLERANT").is_some() {
        assert_same_table(name, &got, &want);
    } else if got != want {
        assert_same_table(name, &got, &want);
        panic!("{name}: output matches to 1e-9 but is not byte-identical");
    }
}

#[test]
fn golden_simulate_presets() {
    for p in ["fig3", "fig4", "fig5a", "fig5b", "fig5c", "fig5d", "fig5e", "fig5f", "ebola"] {
        check_golden(&format!("simulate_{p}.csv"), &["simulate", "--preset", p, "--sample-every", "5"]);
    }
}

#[test]
fn golden_linear_seir() {
    check_golden("linear_seir_fig3.csv", &["linear-seir", "--preset", "fig3", "--eval-grid", "0:100:5", "--compare"]);
}

#[test]
fn golden_spatial_presets() {
    check_golden("spatial_fig8a.csv", &["spatial", "--preset", "fig8a", "--snapshot-every", "5"]);
    check_golden("spatial_fig8b.csv", &["spatial", "--preset", "fig8b", "--snapshot-every", "50"]);
    check_golden("spatial_fig9.csv", &["spatial", "--preset", "fig9", "--snapshot-every", "5"]);
}

#[test]
fn golden_stability() {
    check_golden("stability_fig10b.csv", &["stability", "--preset", "fig10b", "--k-steps", "51"]);
    check_golden(
        "stability_sweep.csv",
        &["stability", "--preset", "fig10b", "--turing-sweep", "--sweep-steps", "40"],
    );
}

#[test]
fn golden_gillespie_presets() {
    check_golden("gillespie_sir_single.csv", &["gillespie", "--preset", "sir-single", "--runs", "20"]);
    check_golden("gillespie_sir_lattice.csv", &["gillespie", "--preset", "sir-lattice", "--runs", "8"]);
    check_golden(
        "gillespie_events.csv",
        &["gillespie", "--preset", "sir-single", "--events", "--t-end", "2"],
    );
}

#[test]
fn golden_langevin() {
    check_golden(
        "langevin_fig8a_real.csv",
        &[
            "langevin", "--preset", "fig8a", "--noise", "real", "--scale", "1000", "--dt", "0.02", "--t-end", "10",
        ],
    );
}

#[test]
fn golden_data_commands() {
    let f = fixture("cases.csv");
    check_golden("data_ingest.csv", &["data", "ingest", &f]);
    check_golden("data_diff.csv", &["data", "diff", &f]);
    check_golden("data_ma.csv", &["data", "ma", &f, "--window", "7"]);
}

#[test]
fn help_lists_every_subcommand() {
    let help = stdout_ok(&["--help"]);
    for c in [
        "simulate", "linear-seir", "spatial", "stability", "gillespie", "langevin", "fit", "fit-curve", "data", "schema",
    ] {
        assert!(help.contains(c), "{c} missing from help");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["simulate", "--preset", "fig3", "--bogus"],
        vec!["simulate"],
        vec!["gillespie", "--preset", "sir-single", "--runs", "1"],
        vec!["nonsense"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn bad_scenario_points_at_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, r#"{"model": "seir", "params": {"beta0": -1}}"#).unwrap();
    let out = run(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epikit schema scenario"), "{err}");
}

#[test]
fn complex_noise_at_unit_density_aborts_numerically() {
    let out = run(&["langevin", "--preset", "fig8a", "--dt", "0.02", "--t-end", "20"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_flag_and_environment_agree() {
    let a = stdout_ok(&["gillespie", "--preset", "sir-single", "--runs", "4", "--seed", "7"]);
    let b = bin()
        .args(["gillespie", "--preset", "sir-single", "--runs", "4"])
        .env("EPIKIT_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(a, String::from_utf8(b.stdout).unwrap());
    let c = stdout_ok(&["gillespie", "--preset", "sir-single", "--runs", "4", "--seed", "8"]);
    assert_ne!(a, c);
}

#[test]
fn ebola_metadata() {
    let out = stdout_ok(&["simulate", "--preset", "ebola", "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    epikit::schema::validate(epikit::schema::SchemaKind::Table, &doc).unwrap();
    let r0 = doc["meta"]["R0"].as_f64().unwrap();
    assert!((r0 - 0.266 / 0.0533).abs() < 1e-12);
    assert!(doc["meta"]["r_eff_crossing"].as_f64().unwrap() > 200.0);
}

#[test]
fn moving_average_of_a_constant_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut text = String::from("date,cases,deaths\n");
    for d in 1..=20 {
        text.push_str(&format!("2020-04-{d:02},{},{}\n", 50 * d, 2 * d));
    }
    std::fs::write(&path, text).unwrap();
    let out = stdout_ok(&["data", "ma", path.to_str().unwrap(), "--window", "5"]);
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(out.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h.contains("cases")).unwrap();
    for rec in rdr.records() {
        let v: f64 = rec.unwrap()[col].parse().unwrap();
        assert!((v - 50.0).abs() < 1e-12, "{v}");
    }
}

#[test]
fn files_and_plots_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig5c.json");
    let plot = dir.path().join("fig5c.svg");
    stdout_ok(&[
        "simulate",
        "--preset",
        "fig5c",
        "--out",
        out.to_str().unwrap(),
        "--plot",
        plot.to_str().unwrap(),
    ]);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["columns"][0], "t");
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("<svg"));
}

#[test]
fn schemas_print_as_json() {
    for k in ["scenario", "spatial", "gillespie", "table"] {
        let s = stdout_ok(&["schema", k]);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v.get("$schema").is_some() || v.get("type").is_some(), "{k}");
    }
}

fn write_cases(path: &Path, cumulative: &[f64]) {
    let mut text = String::from("date,cases,deaths\n");
    let start = chrono::NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
    for (d, c) in cumulative.iter().enumerate() {
        let date = start + chrono::Days::new(d as u64);
        text.push_str(&format!("{date},{},0\n", c.round() as u64));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn fit_recovers_sir_rates_from_a_case_file() {
    let n = 1e4;
    let times: Vec<f64> = (0..60).map(f64::from).collect();
    let model = SirFit { n, i0: 5.0 };
    let s = FitProblem::synthesize(&model, &[0.5, 0.25], &times, &[1], 0.05).unwrap();
    let cumulative: Vec<f64> = s.iter().map(|row| n - row[0]).collect();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sir.csv");
    write_cases(&data, &cumulative);
    let out = stdout_ok(&[
        "fit",
        "--model",
        "sir",
        "--data",
        data.to_str().unwrap(),
        "--p0",
        "0.4,0.3",
        "--n",
        "10000",
        "--i0",
        "5",
    ]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    let p: Vec<f64> = doc["p"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    // Counts are rounded to integers, which limits the attainable accuracy.
    assert!((p[0] / 0.5 - 1.0).abs() < 1e-2, "{p:?}");
    assert!((p[1] / 0.25 - 1.0).abs() < 1e-2, "{p:?}");
    assert!(doc["grad_check"].as_f64().unwrap() < 1e-4);
}

#[test]
fn fit_curve_recovers_fermi_dirac_parameters() {
    let truth = FermiDiracParams {
        a: 10.0,
        t0: 50.0,
        gamma_fd: 0.08,
    };
    let cumulative: Vec<f64> = (0..120).map(|t| fermi_dirac_eval(&truth, t as f64)).collect();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fd.csv");
    write_cases(&data, &cumulative);
    let out = stdout_ok(&["fit-curve", "--data", data.to_str().unwrap()]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((doc["a"].as_f64().unwrap() / 10.0 - 1.0).abs() < 1e-3, "{doc}");
    assert!((doc["t0"].as_f64().unwrap() / 50.0 - 1.0).abs() < 1e-2, "{doc}");
    assert!((doc["gamma"].as_f64().unwrap() / 0.08 - 1.0).abs() < 1e-2, "{doc}");
}
