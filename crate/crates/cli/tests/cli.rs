use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use addmar::datagen::{simulate_series, stabilize, stream_rng};
use addmar::io::{parse_series, write_series, ModelFile};
use addmar::model::{AdditiveMarParams, MatrixSeries, Penalties};
use addmar::solver::{fit, SolverConfig};
use addmar::Matrix;
use rand::Rng;
use tempfile::TempDir;

fn addmar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_addmar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn simulated(dir: &TempDir, body: &str, seed: &str) -> PathBuf {
    let cfg = write_config(dir, "sim.toml", body);
    let out = dir.path().join(format!("series_{seed}.csv"));
    let o = addmar(&["simulate", "--config", &s(&cfg), "--out", &s(&out), "--seed", seed]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_writes_series_and_truth() {
    let dir = TempDir::new().unwrap();
    let out = simulated(&dir, "d1 = 2\nd2 = 2\nT = 3\nr1 = 1\nr2 = 1\ne1 = 0.25\ne2 = 0.25\n", "1");
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert_eq!(text.lines().next().unwrap(), "t,i,j,value");
    let truth = ModelFile::read(&dir.path().join("series_1.truth.json")).unwrap();
    assert_eq!((truth.d1, truth.d2), (2, 2));
    assert!(truth.solver.is_none());
}

#[test]
fn zero_truth_and_noise_give_zero_values() {
    let dir = TempDir::new().unwrap();
    let out = simulated(&dir, "d1 = 2\nd2 = 3\nT = 5\n[noise]\nkind = \"iid\"\nsigma = 0.0\n", "4");
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0.0")));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let body = "d1 = 3\nd2 = 2\nT = 20\nr1 = 1\nr2 = 1\ne1 = 0.2\ne2 = 0.2\n";
    let a = fs::read(simulated(&dir, body, "9")).unwrap();
    let cfg = write_config(&dir, "sim.toml", body);
    let other = dir.path().join("again.csv");
    assert!(addmar(&["simulate", "--config", &s(&cfg), "--out", &s(&other), "--seed", "9"]).status.success());
    assert_eq!(a, fs::read(&other).unwrap());
    assert_eq!(
        fs::read(dir.path().join("series_9.truth.json")).unwrap(),
        fs::read(dir.path().join("again.truth.json")).unwrap()
    );
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", "d1 = 2\nd2 = 2\nT = 3\nunknown_key = 1\n");
    let o = addmar(&["simulate", "--config", &s(&cfg), "--out", &s(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));
}

#[test]
fn missing_input_is_an_io_error() {
    let o = addmar(&["fit", "--data", "/nonexistent/series.csv", "--lambda-l1", "1", "--lambda-s1", "1", "--lambda-l2", "1", "--lambda-s2", "1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn fixed_penalty_fit_matches_library() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d1 = 4\nd2 = 3\nT = 60\nr1 = 1\nr2 = 1\ne1 = 0.2\ne2 = 0.2\n", "3");
    let model = dir.path().join("model.json");
    let report = dir.path().join("report.txt");
    let o = addmar(&[
        "fit", "--data", &s(&data), "--lambda-l1", "0.05", "--lambda-s1", "0.02", "--lambda-l2", "0.05",
        "--lambda-s2", "0.02", "--out", &s(&model), "--report", &s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let series = parse_series(&data).unwrap();
    let lib = fit(&series, &Penalties::new(0.05, 0.02, 0.05, 0.02).unwrap(), &SolverConfig::default()).unwrap();
    let file = ModelFile::read(&model).unwrap();
    let cli_obj = file.solver.as_ref().unwrap().objective;
    assert!((cli_obj - lib.final_objective()).abs() <= 1e-10 * lib.final_objective().abs());
    assert_eq!(file.params().unwrap(), lib.params);

    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("objective trace:"));
    assert!(text.contains("The rank of L1_hat turns out to be"));
    assert!(text.contains("edge density:"));
    assert!(text.contains("AIC:"));
    assert!(text.contains("row network"));
}

#[test]
fn huge_penalty_gives_zero_model() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d1 = 3\nd2 = 2\nT = 30\nr1 = 1\nr2 = 1\ne1 = 0.2\ne2 = 0.2\n", "5");
    let model = dir.path().join("model.json");
    let o = addmar(&[
        "fit", "--data", &s(&data), "--lambda-l1", "1e9", "--lambda-s1", "1e9", "--lambda-l2", "1e9", "--lambda-s2",
        "1e9", "--out", &s(&model),
    ]);
    assert!(o.status.success());
    let f = ModelFile::read(&model).unwrap();
    assert!(f.l1.iter().chain(&f.s1).chain(&f.l2).chain(&f.s2).all(|v| *v == 0.0));
}

#[test]
fn partial_penalties_are_rejected() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d1 = 2\nd2 = 2\nT = 20\n", "2");
    let o = addmar(&["fit", "--data", &s(&data), "--lambda-l1", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = addmar(&["fit", "--data", &s(&data), "--criterion", "oracle-rank"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_series_names_the_offending_cell() {
    let dir = TempDir::new().unwrap();
    let missing = write_config(&dir, "missing.csv", "t,i,j,value\n0,0,0,1\n0,0,1,1\n1,0,0,1\n");
    let o = addmar(&["fit", "--data", &s(&missing), "--grid", "auto"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t=1, i=0, j=1"));

    let dup = write_config(&dir, "dup.csv", "t,i,j,value\n0,0,0,1\n0,0,0,2\n1,0,0,1\n");
    let o = addmar(&["fit", "--data", &s(&dup), "--grid", "auto"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert!(err.contains("duplicate") && err.contains("line 3"), "{err}");
}

#[test]
fn forecast_rows_and_errors() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d1 = 2\nd2 = 3\nT = 8\nr1 = 1\nr2 = 1\ne1 = 0.25\ne2 = 0.2\n", "6");
    let zero = dir.path().join("zero.json");
    ModelFile::from_params(&AdditiveMarParams::zeros(2, 3)).write(&zero).unwrap();

    let o = addmar(&["forecast", "--model", &s(&zero), "--data", &s(&data), "--horizon", "2"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows[0].starts_with("8,0,0,"));
    assert!(rows[11].starts_with("9,1,2,"));
    assert!(rows.iter().all(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap() == 0.0));

    let o = addmar(&["forecast", "--model", &s(&zero), "--data", &s(&data), "--horizon", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let other = dir.path().join("other.json");
    ModelFile::from_params(&AdditiveMarParams::zeros(3, 3)).write(&other).unwrap();
    let o = addmar(&["forecast", "--model", &s(&other), "--data", &s(&data), "--horizon", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn noise_free_fit_forecasts_held_out_matrix() {
    let mut rng = stream_rng(21, 0);
    let a = Matrix::from_row_slice(3, 3, &[0.5, 0.3, 0.0, -0.3, 0.5, 0.1, 0.0, 0.1, 0.45]);
    let b = Matrix::from_row_slice(2, 2, &[0.4, -0.2, 0.2, 0.4]);
    // persistent dynamics so the last observations are far from zero
    let (a, b, _) = stabilize(&a, &b, 0.97).unwrap();
    let truth = AdditiveMarParams::new(a, Matrix::zeros(3, 3), b, Matrix::zeros(2, 2)).unwrap();
    let y0 = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
    let data = simulate_series(&truth, &y0, 36, None, &mut rng).unwrap().into_inner();
    let y_last = data.last().unwrap().clone();
    let held_out = truth.apply(&y_last);
    assert!(held_out.norm() > 0.05);
    let series = MatrixSeries::new(data).unwrap();

    let dir = TempDir::new().unwrap();
    let path = dir.path().join("clean.csv");
    write_series(&path, &series).unwrap();
    let model = dir.path().join("m.json");
    let o = addmar(&[
        "fit", "--data", &s(&path), "--lambda-l1", "1e-7", "--lambda-s1", "1e-7", "--lambda-l2", "1e-7", "--lambda-s2",
        "1e-7", "--out", &s(&model), "--report", &s(&dir.path().join("r.txt")),
    ]);
    assert!(o.status.success());
    let o = addmar(&["forecast", "--model", &s(&model), "--data", &s(&path), "--horizon", "1"]);
    assert!(o.status.success());
    let mut pred = Matrix::zeros(3, 2);
    for line in String::from_utf8(o.stdout).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], "36");
        pred[(f[1].parse().unwrap(), f[2].parse().unwrap())] = f[3].parse().unwrap();
    }
    assert!((pred - held_out).norm() < 1e-3);
}

#[test]
fn backtest_table_shape_and_errors() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d1 = 3\nd2 = 2\nT = 24\nr1 = 1\nr2 = 1\ne1 = 0.2\ne2 = 0.25\n", "8");
    let out = dir.path().join("bt.txt");
    let o = addmar(&[
        "backtest", "--data", &s(&data), "--horizon", "2", "--models", "sparse_var", "--grid-points", "3", "--out",
        &s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "horizon,sparse_var");
    assert_eq!(body.len(), 2);
    assert_eq!(body[1].split(',').count(), 2);

    let short = simulated(&dir, "d1 = 2\nd2 = 2\nT = 12\n", "9");
    let o = addmar(&["backtest", "--data", &s(&short), "--horizon", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = addmar(&["backtest", "--data", &s(&data), "--models", "bilinear"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn panel_shaped_input_with_aic_grid() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d1 = 16\nd2 = 11\nT = 71\nr1 = 2\nr2 = 2\ne1 = 0.1\ne2 = 0.1\n", "10");
    let report = dir.path().join("r.txt");
    let o = addmar(&["fit", "--data", &s(&data), "--grid", "auto", "--grid-points", "4", "--report", &s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let line = text.lines().find(|l| l.starts_with("The rank of L1_hat")).unwrap();
    let r1: usize = line.split("be ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let r2: usize = line.split("be ").nth(2).unwrap().trim_end_matches('.').parse().unwrap();
    assert!(r1 <= 16 && r2 <= 11);
}

#[test]
fn invalid_thread_setting_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_addmar"))
        .args(["forecast", "--model", "m.json", "--data", "d.csv", "--horizon", "1"])
        .env("ADDMAR_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
