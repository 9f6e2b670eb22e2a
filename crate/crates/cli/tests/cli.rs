use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn binned_gp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binned-gp"))
        .args(args)
        .env("BINNED_GP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = binned_gp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Parses a prediction CSV into its header and numeric rows.
fn read_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let k = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[k]).collect()
}

#[test]
fn synth_fit_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let listing = ok(&["synth", "robot", "--out", &path(d, "robot"), "--seed", "4"]);
    assert_eq!(listing.lines().count(), 3);
    let report = ok(&["fit", &path(d, "robot/train.csv"), "--out", &path(d, "model.json")]);
    assert!(report.contains("converged=true"), "{report}");
    let pred = ok(&["predict", &path(d, "model.json"), &path(d, "robot/queries.csv")]);
    let (header, rows) = read_csv(&pred);
    assert_eq!(header, ["x1", "mean", "variance", "lower", "upper"]);
    assert_eq!(rows.len(), 41);
    let truth = fs::read_to_string(d.join("robot/truth.csv")).unwrap();
    let (_, truth) = read_csv(&truth);
    // speed equals time in the robot scenario; the interior is well constrained
    for (r, t) in rows.iter().zip(&truth).filter(|(r, _)| (2.0..=8.0).contains(&r[0])) {
        assert!((r[1] - t[1]).abs() < 1.5, "t={} mean {} truth {}", r[0], r[1], t[1]);
        assert!(r[3] <= r[1] && r[1] <= r[4]);
    }

    // bins fed back in as region queries reproduce their own integrals closely
    let bins = "s1,t1\n0,8\n4,6\n";
    fs::write(d.join("bins.csv"), bins).unwrap();
    let pred = ok(&["predict", &path(d, "model.json"), &path(d, "bins.csv"), "--mode", "integral"]);
    let (header, rows) = read_csv(&pred);
    assert_eq!(header[..2], ["s1", "t1"]);
    let mean = column(&header, &rows, "mean");
    assert!((mean[0] - 32.0).abs() < 3.0 && (mean[1] - 10.0).abs() < 2.0, "{mean:?}");
}

#[test]
fn fit_output_is_deterministic_and_model_round_trips() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "sampled", "--out", &path(d, "s"), "--seed", "2"]);
    ok(&["fit", &path(d, "s/train.csv"), "--out", &path(d, "a.json")]);
    ok(&["fit", &path(d, "s/train.csv"), "--out", &path(d, "b.json")]);
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    // model to stdout is the same document
    let stdout = ok(&["fit", &path(d, "s/train.csv")]);
    assert_eq!(stdout.trim_end().as_bytes(), a.as_slice());
    let p1 = ok(&["predict", &path(d, "a.json"), &path(d, "s/queries.csv")]);
    let p2 = ok(&["predict", &path(d, "b.json"), &path(d, "s/queries.csv")]);
    assert_eq!(p1, p2);
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for scenario in ["robot", "histogram", "audience", "polygons", "sampled"] {
        ok(&["synth", scenario, "--out", &path(d, "a"), "--seed", "9", "--epsilon", "1"]);
        ok(&["synth", scenario, "--out", &path(d, "b"), "--seed", "9", "--epsilon", "1"]);
        ok(&["synth", scenario, "--out", &path(d, "c"), "--seed", "10", "--epsilon", "1"]);
        let train = if scenario == "polygons" { "train.json" } else { "train.csv" };
        for f in [train, "truth.csv"] {
            let a = fs::read(d.join("a").join(f)).unwrap();
            assert_eq!(a, fs::read(d.join("b").join(f)).unwrap(), "{scenario} {f}");
        }
        let a = fs::read(d.join("a").join(train)).unwrap();
        assert_ne!(a, fs::read(d.join("c").join(train)).unwrap(), "{scenario}");
    }
}

#[test]
fn empty_input_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let f = path(dir.path(), "empty.csv");
    fs::write(&f, "").unwrap();
    let out = binned_gp(&["fit", &f]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn malformed_row_reports_its_line() {
    let dir = TempDir::new().unwrap();
    let f = path(dir.path(), "bad.csv");
    fs::write(
        &f,
        "{\"dims\":1,\"kind\":\"sum\",\"noise\":\"homoscedastic\"}\ns1,t1,y\n0,1,2\n1,0.5,3\n",
    )
    .unwrap();
    let out = binned_gp(&["fit", &f]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");

    fs::write(
        &f,
        "{\"dims\":1,\"kind\":\"sum\",\"noise\":\"homoscedastic\"}\ns1,t1,y\n0,1,2\n1,2,3,4\n",
    )
    .unwrap();
    let out = binned_gp(&["fit", &f]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn zero_iterations_echo_the_initial_hyperparameters() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "robot", "--out", &path(d, "r"), "--seed", "1"]);
    let report = ok(&["fit", &path(d, "r/train.csv"), "--max-iters", "0", "--out", &path(d, "m.json")]);
    assert!(report.contains("iterations=0"), "{report}");
    let model: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m.json")).unwrap()).unwrap();
    let hp = &model["fit"]["hyperparameters"];
    let y: Vec<f64> = model["data"]["y"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    // the default initial lengthscale is a quarter of the data span
    assert_eq!(hp["lengthscales"][0].as_f64().unwrap(), 2.0);
    let alpha = hp["alpha"].as_f64().unwrap();
    assert!(alpha > 0.0);
    assert!((hp["noise_variance"].as_f64().unwrap() - 0.1 * alpha).abs() < 1e-12 * alpha);
    assert_eq!(y.len(), 4);
}

#[test]
fn nonneg_mode_adds_a_bounded_link_column() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "histogram", "--out", &path(d, "h"), "--seed", "3", "--epsilon", "0.1"]);
    ok(&["fit", &path(d, "h/train.csv"), "--out", &path(d, "m.json")]);
    let pred = ok(&[
        "predict",
        &path(d, "m.json"),
        &path(d, "h/queries.csv"),
        "--mode",
        "nonneg",
        "--virtual-grid",
        "20",
    ]);
    let (header, rows) = read_csv(&pred);
    assert_eq!(header.last().unwrap(), "link_mean");
    assert_eq!(rows.len(), 100);
    let link = column(&header, &rows, "link_mean");
    assert!(link.iter().all(|p| (0.0..=1.0).contains(p)));
    let var = column(&header, &rows, "variance");
    assert!(var.iter().all(|v| *v >= 0.0));
}

#[test]
fn mode_and_query_shape_must_agree() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "robot", "--out", &path(d, "r")]);
    ok(&["fit", &path(d, "r/train.csv"), "--out", &path(d, "m.json")]);
    let out = binned_gp(&["predict", &path(d, "m.json"), &path(d, "r/queries.csv"), "--mode", "integral"]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(d.join("q2.csv"), "x1,x2\n1,2\n").unwrap();
    let out = binned_gp(&["predict", &path(d, "m.json"), &path(d, "q2.csv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn include_noise_widens_the_band_by_the_noise_variance() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "robot", "--out", &path(d, "r")]);
    ok(&["fit", &path(d, "r/train.csv"), "--out", &path(d, "m.json")]);
    fs::write(d.join("q.csv"), "x1\n5\n").unwrap();
    let (h, plain) = read_csv(&ok(&["predict", &path(d, "m.json"), &path(d, "q.csv")]));
    let (_, noisy) = read_csv(&ok(&["predict", &path(d, "m.json"), &path(d, "q.csv"), "--include-noise"]));
    let model: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m.json")).unwrap()).unwrap();
    let s2 = model["fit"]["hyperparameters"]["noise_variance"].as_f64().unwrap();
    let v = column(&h, &plain, "variance")[0];
    let vn = column(&h, &noisy, "variance")[0];
    assert!((vn - v - s2).abs() < 1e-12 * (1.0 + vn));
    assert_eq!(column(&h, &plain, "mean"), column(&h, &noisy, "mean"));
}

#[test]
fn polygon_files_fit_and_predict() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "polygons", "--out", &path(d, "p"), "--seed", "1"]);
    let report = ok(&["fit", &path(d, "p/train.json"), "--rects", "8", "--out", &path(d, "m.json")]);
    assert!(report.contains("converged="), "{report}");
    let pred = ok(&["predict", &path(d, "m.json"), &path(d, "p/queries.json"), "--mode", "integral"]);
    let (header, rows) = read_csv(&pred);
    assert_eq!(header[0], "region");
    let truth = read_csv(&fs::read_to_string(d.join("p/truth.csv")).unwrap()).1;
    assert_eq!(rows.len(), truth.len());
    assert!(column(&header, &rows, "mean").iter().all(|m| m.is_finite() && *m > 0.0));

    let out = binned_gp(&["fit", &path(d, "p/train.json"), "--rects", "8", "--density", "8"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_is_deterministic() {
    let args = ["bench", "robot", "--repeats", "2", "--seed", "5", "--bootstrap", "200"];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    let lines: Vec<&str> = a.lines().collect();
    assert!(lines[0].starts_with("method\trmse"));
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("integral"));
}

#[test]
fn unknown_names_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["synth", "census", "--out", dir.path().to_str().unwrap()],
        vec!["bench", "census"],
        vec!["bench", "robot", "--methods", "magic"],
        vec!["fit"],
        vec!["frobnicate"],
    ] {
        let out = binned_gp(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn help_goes_to_stdout() {
    let help = ok(&["--help"]);
    for verb in ["fit", "predict", "synth", "bench"] {
        assert!(help.contains(verb));
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_binned-gp"))
        .args(["--help"])
        .env("BINNED_GP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
