use std::path::Path;
use std::process::{Command, Output};

fn shapecal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapecal"))
        .args(args)
        .current_dir(dir)
        .env("SHAPECAL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_then_calibrate_barrel() {
    let dir = tempfile::tempdir().unwrap();
    ok(&shapecal(&["synth", "--out", "scene.json", "--cameras", "2", "--target", "4x4", "--seed", "3"], dir.path()));
    let csv = std::fs::read_to_string(dir.path().join("scene.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x,y,xhat,yhat");
    assert_eq!(csv.lines().count(), 1 + 2 * 16);

    ok(&shapecal(&["calibrate", "scene.csv", "--shape", "barrel", "--rbar", "1", "--out", "model.json"], dir.path()));
    let model = std::fs::read_to_string(dir.path().join("model.json")).unwrap();
    assert!(model.contains("Polynomial") || model.contains("polynomial"), "{model}");
}

#[test]
fn shaped_calibration_requires_rbar() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "x,y,xhat,yhat\n0.5,0,0.49,0\n").unwrap();
    let o = shapecal(&["calibrate", "c.csv", "--shape", "barrel"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_csv_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "x,y,xhat,yhat\n0.5,zero,0.49,0\n").unwrap();
    let o = shapecal(&["calibrate", "c.csv"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains('2'));
}

#[test]
fn identity_undistort_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    ok(&shapecal(&["synth", "--out", "s.json", "--cameras", "1", "--target", "2x2"], dir.path()));
    ok(&shapecal(&["calibrate", "s.csv", "--out", "m.json"], dir.path()));
    std::fs::write(dir.path().join("p.csv"), "xhat,yhat\n0.1,0.2\n-0.3,0.0\n").unwrap();
    let o = shapecal(&["undistort", "p.csv", "--model", "m.json"], dir.path());
    ok(&o);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().next().unwrap(), "xhat,yhat,x,y,error");
    assert_eq!(out.lines().count(), 3);

    let o = shapecal(&["curve", "--model", "m.json", "--samples", "5"], dir.path());
    ok(&o);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 6);
}

#[test]
fn experiment_reports_each_method_and_sigma() {
    let dir = tempfile::tempdir().unwrap();
    ok(&shapecal(
        &["experiment", "--trials", "2", "--sigmas", "1", "--seed", "5", "--json", "r.json", "--csv", "r.csv"],
        dir.path(),
    ));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2, "{csv}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert!(json.get("summary").is_some());
}
