use std::path::Path;
use std::process::{Command, Output};

fn harvest_sim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harvest-sim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_builtin_beacon_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest_sim(&["run", "--builtin", "beacon", "--out", "res"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("res/report.json")).unwrap();
    assert!(report.contains("\"outages\": 0"));
    assert!(dir.path().join("res/waveform.csv").exists());
}

#[test]
fn missing_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest_sim(&["run", "nowhere.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.json"));
}

#[test]
fn sweep_over_polling_rate() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest_sim(
        &["sweep", "--builtin", "bridge-apc", "--param", "solution.fs", "--values", "0.5,4,20", "--out", "sw"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("sw/sweep.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "outages").expect("outages column");
    let outages: Vec<u64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(outages.len(), 3);
    assert!(outages[0] >= 1 && outages[1] == 0 && outages[2] >= 1, "{outages:?}");
}

fn validate(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> (Option<i32>, Vec<serde_json::Value>) {
    let shown = harvest_sim(&["show", "beacon"], dir);
    let mut v: serde_json::Value = serde_json::from_slice(&shown.stdout).unwrap();
    edit(&mut v);
    std::fs::write(dir.join("s.json"), v.to_string()).unwrap();
    let o = harvest_sim(&["validate", "s.json"], dir);
    (o.status.code(), serde_json::from_str(&stdout(&o)).unwrap())
}

#[test]
fn validate_reports_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (code, diags) = validate(dir.path(), |_| {});
    assert_eq!((code, diags.len()), (Some(0), 0));

    let (code, diags) = validate(dir.path(), |v| v["dt"] = 0.0.into());
    assert_eq!(code, Some(2));
    assert!(diags.iter().any(|d| d["path"] == "dt"), "{diags:?}");

    let (code, diags) = validate(dir.path(), |v| {
        v["solution"]["thresholds"]["v_psleep"] = 2.0.into();
        v["solution"]["thresholds"]["v_pclose"] = 2.5.into();
    });
    assert_eq!(code, Some(2));
    assert!(
        diags.iter().any(|d| d["path"].as_str().unwrap().starts_with("solution.thresholds")),
        "{diags:?}"
    );
}

#[test]
fn band_and_size_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest_sim(
        &[
            "band", "--capacitance", "10e-6", "--thresholds", "3.3,3.2,2.6,2.4", "--base-power", "27e-6",
            "--checkpoint-energy", "5e-6", "--max-dv-dt", "2", "--min-harvest", "50e-6", "--fs", "0.5,4,20",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.len(), 3);

    let o = harvest_sim(&["band", "--capacitance", "1e-5", "--thresholds", "3,2", "--base-power", "0", "--checkpoint-energy", "0", "--max-dv-dt", "1", "--min-harvest", "0", "--fs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = harvest_sim(&["size", "--e-task", "23.86e-3", "--v-start", "5.2", "--v-close", "3.7"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let c = v["min_capacitance"].as_f64().unwrap();
    assert!((c - 2.0 * 23.86e-3 / (5.2 * 5.2 - 3.7 * 3.7)).abs() < 1e-15);
}
