use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ridechain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ridechain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = ridechain(&[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(code(&ridechain(&["teleport"])), 2);
    assert_eq!(code(&ridechain(&["exact", "--warp", "9"])), 2);
}

#[test]
fn validation_failures_exit_1_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = ridechain(&["exact", "--grid", "2x2", "--drivers", "9", "--capacity", "2", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
    let out = ridechain(&["couple", "--capacity", "3", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("out-of-scope"));
    let out = ridechain(&["simulate", "--policy", "nadap:1.5", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
}

#[test]
fn exact_reports_the_uniform_limit() {
    let dir = tempfile::tempdir().unwrap();
    for (policy, want) in [("nadap:0.8:origin", 0.4), ("nadap:1", 0.4), ("nadap:0.8", 0.36)] {
        let out_dir = dir.path().join(policy.replace(':', "_"));
        let out = ridechain(&[
            "exact", "--grid", "2x2", "--drivers", "2", "--capacity", "2", "--arrivals", "uniform:0.0625", "--policy",
            policy, "--out", s(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let report = json(&out_dir.join("report.json"));
        let got = report["limiting_objective"].as_f64().unwrap();
        assert!((got - want).abs() < 1e-10, "{policy}: {got}");
        assert_eq!(report["closed_form"].as_f64().unwrap(), 0.4);
        assert_eq!(report["irreducible"], true);
        let stationary = fs::read_to_string(out_dir.join("stationary.csv")).unwrap();
        assert_eq!(stationary.lines().count(), 11);
        assert!(stationary.starts_with("state,pi\n"));
    }
}

#[test]
fn config_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# shared\ndrivers = 3\ncapacity = 2\npolicy = rand:ESWN\nepisodes = 5\n").unwrap();
    let out_dir = dir.path().join("e");
    let out = ridechain(&["--config", s(&cfg), "exact", "--drivers", "1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["command"]["drivers"], 1);
    assert_eq!(manifest["command"]["policy"], "rand:ESWN");
    assert_eq!(manifest["command"]["capacity"], 2);
}

#[test]
fn json_format_writes_row_objects() {
    let dir = tempfile::tempdir().unwrap();
    let out = ridechain(&["couple", "--format", "json", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst_beta="));
    let rows = json(&dir.path().join("coupling.json"));
    let first = &rows.as_array().unwrap()[0];
    for key in ["pair_rank_x", "pair_rank_y", "expected_d_prime", "ratio"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn simulate_writes_all_curves_and_records_a_drawn_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ridechain(&["simulate", "--rounds", "50", "--runs", "8", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["wt.csv", "obj.csv", "error.csv", "fit.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let header = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("wt.csv"), "t,mean,stderr");
    assert_eq!(header("obj.csv"), "T,running_avg");
    assert_eq!(header("error.csv"), "t,delta,delta_hat");
    let manifest = json(&dir.path().join("manifest.json"));
    assert!(manifest["command"]["seed"].as_u64().is_some());
    let again = dir.path().join("again");
    let out = ridechain(&["rerun", "--manifest", s(&dir.path().join("manifest.json")), "--out", s(&again)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(dir.path().join("wt.csv")).unwrap(), fs::read(again.join("wt.csv")).unwrap());
}

#[test]
fn rerun_rejects_tampered_manifests_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    assert_eq!(code(&ridechain(&["fixture", "--trips", "200", "--seed", "1", "--out", s(&fx)])), 0);
    let model = dir.path().join("m").join("model.csv");
    let trips = fx.join("trips.csv");
    assert_eq!(code(&ridechain(&["ingest", "--input", s(&trips), "--grid", "3x3", "--out", s(&model)])), 0);
    let manifest = dir.path().join("m").join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["outputs"][0]["sha256"] = "00".into();
    let forged = dir.path().join("forged.json");
    fs::write(&forged, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = ridechain(&["rerun", "--manifest", s(&forged), "--out", s(&dir.path().join("r1"))]);
    assert_eq!(code(&out), 1);

    let mut body = fs::read_to_string(&trips).unwrap();
    body.push_str("X,2013-01-01 08:00:00,2013-01-01 08:10:00,40.75,-73.98,40.75,-73.98\n");
    fs::write(&trips, body).unwrap();
    let out = ridechain(&["rerun", "--manifest", s(&manifest), "--out", s(&dir.path().join("r2"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn fixture_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&ridechain(&["fixture", "--trips", "100", "--seed", "7", "--out", s(d)])), 0);
    }
    assert_eq!(fs::read(a.join("trips.csv")).unwrap(), fs::read(b.join("trips.csv")).unwrap());
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn vi_emits_heatmap_with_valid_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let out = ridechain(&["vi", "--drivers", "1", "--episodes", "20", "--seed", "4", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("location,time_covered,drop_rate,start_pct"));
    for line in lines {
        let v: Vec<f64> = line.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| (0.0..=100.0).contains(x)));
        assert!(v[2] <= v[1]);
    }
    let policy = fs::read_to_string(dir.path().join("policy.csv")).unwrap();
    assert_eq!(policy.lines().count(), 1 + 4 * 16);
}

#[test]
fn lower_bound_mode_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = ridechain(&["mixing", "--lower-bound", "50,5", "--t-max", "500", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    let report = json(&dir.path().join("report.json"));
    assert!(report["max_closed_form_error"].as_f64().unwrap() < 1e-12);
}
