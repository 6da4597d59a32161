use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_mtfuse");

fn mtfuse(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data.csv");
    let (code, err) = mtfuse(&["synth", "--m", "3", "--n", "25", "--dim", "2", "--seed", "5", "--out", path(&data)]);
    assert_eq!(code, 0, "{err}");
    data
}

#[test]
fn synth_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let truth = dir.path().join("truth.csv");
    assert_eq!(mtfuse(&["synth", "--m", "3", "--n", "25", "--dim", "2", "--out", path(&data), "--truth", path(&truth)]).0, 0);
    let text = fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "task,y,x1,x2");
    assert_eq!(text.lines().count(), 1 + 3 * 25);
    assert_eq!(fs::read_to_string(&truth).unwrap().lines().count(), 4);

    for method in ["fused", "stl", "dp"] {
        let coef = dir.path().join(format!("{method}.csv"));
        let (code, err) = mtfuse(&["fit", "--data", path(&data), "--method", method, "--out", path(&coef)]);
        assert_eq!(code, 0, "{err}");
        let text = fs::read_to_string(&coef).unwrap();
        assert_eq!(text.lines().next().unwrap(), "task,theta0,theta1,theta2");
        assert_eq!(text.lines().count(), 4);
    }
}

#[test]
fn cv_prints_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = Command::new(BIN).args(["cv", "--data", path(&data), "--c-grid", "0.1,0.5", "--folds", "3"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.lines().filter(|l| l.ends_with("true")).count(), 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    assert_eq!(mtfuse(&["fit", "--no-such-flag"]).0, 2);
    assert_eq!(mtfuse(&["fit", "--data", path(&data), "--method", "svm"]).0, 2);
    assert_eq!(mtfuse(&["fit", "--data", path(&data), "--tau", "1.5"]).0, 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "replications = 0\n").unwrap();
    assert_eq!(mtfuse(&["experiment", "--config", path(&bad)]).0, 2);
    fs::write(&bad, "[scale]\nmm = 3\n").unwrap();
    assert_eq!(mtfuse(&["experiment", "--config", path(&bad)]).0, 2);
    assert_eq!(mtfuse(&["experiment", "--config", path(&dir.path().join("missing.toml"))]).0, 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mtfuse(&["fit", "--data", path(&dir.path().join("none.csv"))]).0, 3);
    let data = dir.path().join("d.csv");
    fs::write(&data, "task,y,x\na,1,2\na,2,abc\n").unwrap();
    let (code, err) = mtfuse(&["fit", "--data", path(&data)]);
    assert_eq!(code, 3);
    assert!(err.contains("row 2"), "{err}");
    assert_eq!(mtfuse(&["fit", "--data", path(&data), "--response-col", "demand"]).0, 3);
}

#[test]
fn convergence_failure_in_fit_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = dir.path().join("tight.toml");
    fs::write(&cfg, "[solver]\nmax_outer_iters = 1\ntol_abs = 1e-12\ntol_rel = 1e-12\n").unwrap();
    let (code, err) = mtfuse(&["fit", "--data", path(&data), "--config", path(&cfg), "--c", "0.3"]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let out = dir.path().join("out");
    fs::write(&cfg, "deltas = [0.5]\nreplications = 3\nmethods = [\"dp\"]\nout_dir = \"elsewhere\"\n[scale]\nm = 3\nn = 20\nn_test = 5\ndim = 2\n").unwrap();
    let (code, err) = mtfuse(&["experiment", "--config", path(&cfg), "--out", path(&out), "--replications", "2"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 3);
    assert!(out.join("summary.csv").exists() && out.join("plotdata.csv").exists());
}

#[test]
fn newsvendor_on_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sales.csv");
    let mut text = String::from("store,date,demand,temp\n");
    for store in ["a", "b"] {
        for month in 1..=4 {
            for day in 1..=10 {
                let temp = (day * 7 % 5) as f64;
                let demand = 20.0 + 2.0 * temp + (day % 3) as f64;
                text.push_str(&format!("{store},2019-{month:02}-{day:02},{demand},{temp}\n"));
            }
        }
    }
    fs::write(&data, text).unwrap();
    let out = dir.path().join("nv");
    let args = ["newsvendor", "--data", path(&data), "--time-col", "date", "--task-col", "store", "--response-col", "demand"];
    let (code, err) = mtfuse(&[&args[..], &["--months", "1,2", "--test-months", "2", "--out", path(&out)]].concat());
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 1 + 2 * 3);
    let (code, _) = mtfuse(&[&args[..], &["--months", "3", "--test-months", "2", "--out", path(&out)]].concat());
    assert_eq!(code, 3);
}

#[test]
fn run_maps_parse_failures() {
    let err = mtfuse_pipeline::cli::run(["mtfuse", "frobnicate"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
