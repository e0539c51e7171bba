use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blendsa::sim::{durable_spec, scenario_spec};
use blendsa::sweep::SweepResult;
use blendsa::tabular::{read_csv, ColumnTable, Schema, TableView};
use serde_json::{json, Value};
use tempfile::TempDir;

fn blendsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blendsa")).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every `*.csv` in `dir` must read back through its `*.schema.json`.
fn check_csvs(dir: &Path) -> usize {
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            let stem = p.file_stem().unwrap().to_str().unwrap();
            let schema: Schema = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.schema.json"))).unwrap()).unwrap();
            read_csv(&p, &schema).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    n
}

fn read_table(dir: &Path, stem: &str) -> ColumnTable {
    let schema: Schema = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.schema.json"))).unwrap()).unwrap();
    read_csv(dir.join(format!("{stem}.csv")), &schema).unwrap()
}

fn column(t: &ColumnTable, name: &str) -> Vec<Option<f64>> {
    let c = t.column(name).unwrap();
    (0..t.n_rows()).map(|i| c.get(i)).collect()
}

fn assert_same_dirs(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = fs::read_dir(b).unwrap().map(|e| e.unwrap().file_name()).collect();
    other.sort();
    assert_eq!(names, other);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

/// Scenario data in `dir/gen` and a config using `assignment` in `dir/cfg.json`.
fn scenario_setup(dir: &Path, n: usize, assignment: &str, extra: Value) -> PathBuf {
    ok(blendsa(&["simulate", "--gen-only", "--n", &n.to_string(), "--seed", "5", "--out", s(&dir.join("gen"))]));
    let mut cfg = json!({
        "data": "gen/data.csv",
        "schema": "gen/data.schema.json",
        "spec": serde_json::to_value(scenario_spec(assignment).unwrap()).unwrap(),
        "m": 2,
        "b": 0,
        "seed": 9,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let p = dir.join("cfg.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn gen_only_twice_gives_identical_files() {
    let d = TempDir::new().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        ok(blendsa(&["simulate", "--gen-only", "--n", "1000", "--seed", "1", "--out", s(out)]));
    }
    assert_same_dirs(&a, &b);
    assert_eq!(check_csvs(&a), 2);
    let data = read_table(&a, "data");
    assert_eq!(data.n_rows(), 1000);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 4);
}

#[test]
fn durable_generation_round_trips() {
    let d = TempDir::new().unwrap();
    ok(blendsa(&["simulate", "--durable", "--n", "400", "--seed", "2", "--out", s(d.path())]));
    assert_eq!(check_csvs(d.path()), 2);
    assert!(read_table(d.path(), "data").column("CCS0").is_some());
}

#[test]
fn simulate_bias_table_has_one_row_per_delta() {
    let d = TempDir::new().unwrap();
    ok(blendsa(&[
        "simulate", "--scenario", "1", "--assignment", "III", "--delta-grid", "-0.2:0.2:0.1", "--reps", "3", "--n", "300",
        "--m", "2", "--seed", "7", "--out", s(d.path()),
    ]));
    let bias = read_table(d.path(), "bias");
    assert_eq!(bias.n_rows(), 5);
    for name in ["(Intercept)", "X", "Z1", "X:Z1"] {
        assert!(bias.column(&format!("pct_bias[{name}]")).is_some(), "{name}");
        assert!(bias.column(&format!("mc_se[{name}]")).is_some(), "{name}");
    }
    let bad = blendsa(&["simulate", "--scenario", "1", "--assignment", "XYZ", "--reps", "1", "--seed", "7", "--out", s(d.path())]);
    assert_eq!(code(&bad), 2);
}

/// Complete data with no missingness: the blended fit is plain OLS.
#[test]
fn analyze_complete_data_matches_ols() {
    let d = TempDir::new().unwrap();
    let n = 60;
    let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 17) as f64 / 4.0).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, x)| 1.5 - 0.7 * x + ((i * 13) % 7) as f64 / 10.0).collect();
    let mut csv = String::from("X,Y\n");
    for i in 0..n {
        csv.push_str(&format!("{},{}\n", x[i], y[i]));
    }
    fs::write(d.path().join("data.csv"), csv).unwrap();
    let cfg = json!({
        "data": "data.csv",
        "schema": {"columns": [{"name": "X", "kind": "continuous"}, {"name": "Y", "kind": "continuous"}]},
        "spec": {
            "analysis": "Y ~ X",
            "sub_mechanisms": [{"name": "y", "variables": ["Y"], "method": "ipw", "model": "~ X"}]
        },
        "b": 0,
        "seed": 1,
    });
    fs::write(d.path().join("cfg.json"), cfg.to_string()).unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        ok(blendsa(&["analyze", "--config", s(&d.path().join("cfg.json")), "--out", s(out)]));
    }
    assert_same_dirs(&a, &b);
    assert_eq!(check_csvs(&a), 2);

    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let sxy: f64 = x.iter().zip(&y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = x.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let est = column(&read_table(&a, "estimates"), "estimate");
    assert!((est[0].unwrap() - intercept).abs() < 1e-10, "{est:?} vs {intercept}");
    assert!((est[1].unwrap() - slope).abs() < 1e-10, "{est:?} vs {slope}");
}

#[test]
fn analyze_defaults_to_b300_m10() {
    let d = TempDir::new().unwrap();
    let mut csv = String::from("X,Y\n");
    for i in 0..40 {
        csv.push_str(&format!("{},{}\n", i % 5, (i * 7 % 11) as f64 * 0.5));
    }
    fs::write(d.path().join("data.csv"), csv).unwrap();
    let cfg = json!({
        "data": "data.csv",
        "schema": {"columns": [{"name": "X", "kind": "continuous"}, {"name": "Y", "kind": "continuous"}]},
        "spec": {"analysis": "Y ~ X", "sub_mechanisms": [{"name": "y", "variables": ["Y"], "method": "ipw", "model": "~ X"}]},
        "seed": 3,
    });
    fs::write(d.path().join("cfg.json"), cfg.to_string()).unwrap();
    ok(blendsa(&["analyze", "--config", s(&d.path().join("cfg.json")), "--out", s(&d.path().join("o"))]));
    let summary: Value = serde_json::from_str(&fs::read_to_string(d.path().join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["b"], 300);
    assert_eq!(summary["m"], 10);
    let est = read_table(&d.path().join("o"), "estimates");
    assert!(column(&est, "ci_lo").iter().all(Option::is_some));
}

#[test]
fn analyze_scenario_with_bootstrap_is_deterministic_across_thread_counts() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(d.path(), 400, "IMI", json!({"b": 20, "delta": [0, -0.4, 0]}));
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(blendsa(&["--threads", "1", "analyze", "--config", s(&cfg), "--out", s(&a)]));
    ok(blendsa(&["--threads", "4", "analyze", "--config", s(&cfg), "--out", s(&b)]));
    assert_same_dirs(&a, &b);
    let diag = read_table(&a, "diagnostics");
    assert_eq!(diag.n_rows(), 2 * 3);
}

#[test]
fn one_axis_sweep_has_41_cells_and_flags_the_anchor() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(d.path(), 300, "III", json!({}));
    let out = d.path().join("o");
    ok(blendsa(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "3"]));
    assert!(!out.join("heatmap.svg").exists());
    assert_eq!(check_csvs(&out), 1);
    let schema: Schema = serde_json::from_str(&fs::read_to_string(out.join("sweep.schema.json")).unwrap()).unwrap();
    let result = SweepResult::read_csv(fs::File::open(out.join("sweep.csv")).unwrap(), &schema).unwrap();
    assert_eq!(result.cells.len(), 41);
    let anchors: Vec<_> = result.cells.iter().filter(|c| c.is_mar_anchor()).collect();
    assert_eq!(anchors.len(), 1);
    assert_eq!(anchors[0].delta, vec![0.0, 0.0, 0.0]);

    let sweep = read_table(&out, "sweep");
    assert_eq!(sweep.n_rows(), 41 * 4);
    let flagged = column(&sweep, "mar_anchor").iter().filter(|v| **v == Some(1.0)).count();
    assert_eq!(flagged, 4);
}

#[test]
fn two_way_sweep_renders_matching_heatmap_deterministically() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(
        d.path(),
        300,
        "IMI",
        json!({"sweep": [{"mechanism": 2, "grid": "-1:1:0.5"}, {"mechanism": 3, "grid": [-0.2, 0, 0.2, 0.4]}]}),
    );
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(blendsa(&["--threads", "2", "sweep", "--config", s(&cfg), "--out", s(&a)]));
    ok(blendsa(&["--threads", "3", "sweep", "--config", s(&cfg), "--out", s(&b), "--coefficient", "X"]));
    assert_same_dirs(&a, &b);
    let svg = fs::read_to_string(a.join("heatmap.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches(r#"class="cell""#).count(), 20);
    assert_eq!(svg.matches(r#"class="tick""#).count(), 5 + 4);
    for tag in ["legend-min", "legend-mid", "legend-max"] {
        assert!(svg.contains(tag), "{tag}");
    }
    let schema: Schema = serde_json::from_str(&fs::read_to_string(a.join("sweep.schema.json")).unwrap()).unwrap();
    let result = SweepResult::read_csv(fs::File::open(a.join("sweep.csv")).unwrap(), &schema).unwrap();
    assert_eq!(result.cells.len(), 20);
}

#[test]
fn more_than_two_axes_is_refused_with_the_cell_count() {
    let d = TempDir::new().unwrap();
    ok(blendsa(&["simulate", "--durable", "--n", "300", "--seed", "2", "--out", s(&d.path().join("gen"))]));
    let cfg = json!({
        "data": "gen/data.csv",
        "schema": "gen/data.schema.json",
        "spec": serde_json::to_value(durable_spec("IMIIM").unwrap()).unwrap(),
        "seed": 1,
    });
    let p = d.path().join("cfg.json");
    fs::write(&p, cfg.to_string()).unwrap();
    let out = blendsa(&["sweep", "--config", s(&p), "--out", s(&d.path().join("o")), "--axis", "1", "--axis", "2", "--axis", "4"]);
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains(&(41 * 41 * 41).to_string()), "{msg}");
    assert!(msg.contains("--full-grid"), "{msg}");
    assert!(!d.path().join("o/sweep.csv").exists());
}

#[test]
fn partial_sweep_exits_4_and_annotates_failed_cells() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(d.path(), 400, "IMI", json!({"sweep": [{"mechanism": 3, "grid": [0, 20, 40]}]}));
    let out = d.path().join("o");
    let run = blendsa(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&run), 4, "{}", String::from_utf8_lossy(&run.stderr));
    let schema: Schema = serde_json::from_str(&fs::read_to_string(out.join("sweep.schema.json")).unwrap()).unwrap();
    let result = SweepResult::read_csv(fs::File::open(out.join("sweep.csv")).unwrap(), &schema).unwrap();
    assert_eq!(result.cells.len(), 3);
    let anchor = result.cells.iter().find(|c| c.is_mar_anchor()).unwrap();
    assert!(anchor.error.is_none() && anchor.theta_hat.is_some());
    assert!(result.n_failed() >= 1);
    for c in result.cells.iter().filter(|c| c.theta_hat.is_none()) {
        assert!(c.error.as_deref().is_some_and(|e| !e.is_empty()));
    }
    assert!(out.join("manifest.json").exists());
}

#[test]
fn config_errors_exit_2_with_json_pointer() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(d.path(), 200, "IMI", json!({}));
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    let out = d.path().join("o");

    v["spec"]["sub_mechanisms"][1]["method"] = json!("mice");
    fs::write(&cfg, v.to_string()).unwrap();
    let r = blendsa(&["analyze", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("/spec/sub_mechanisms/1"), "{}", String::from_utf8_lossy(&r.stderr));

    v["spec"]["sub_mechanisms"][1]["method"] = json!("mi");
    v["m"] = json!("ten");
    fs::write(&cfg, v.to_string()).unwrap();
    let r = blendsa(&["analyze", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("/m"));

    v["m"] = json!(2);
    v.as_object_mut().unwrap().remove("seed");
    fs::write(&cfg, v.to_string()).unwrap();
    let r = blendsa(&["analyze", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("seed"));

    v["seed"] = json!(1);
    v["delta"] = json!([0.3, 0, 0]);
    fs::write(&cfg, v.to_string()).unwrap();
    let r = blendsa(&["analyze", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("/delta"));
    assert!(!out.exists());
}

#[test]
fn singular_analysis_design_exits_3() {
    let d = TempDir::new().unwrap();
    let mut csv = String::from("X,X2,Y\n");
    for i in 0..30 {
        csv.push_str(&format!("{},{},{}\n", i % 4, 2 * (i % 4), i % 7));
    }
    fs::write(d.path().join("data.csv"), csv).unwrap();
    let cfg = json!({
        "data": "data.csv",
        "schema": {"columns": [
            {"name": "X", "kind": "continuous"}, {"name": "X2", "kind": "continuous"}, {"name": "Y", "kind": "continuous"}
        ]},
        "spec": {"analysis": "Y ~ X + X2", "sub_mechanisms": [{"name": "y", "variables": ["Y"], "method": "ipw", "model": "~ X"}]},
        "b": 0,
        "seed": 1,
    });
    fs::write(d.path().join("cfg.json"), cfg.to_string()).unwrap();
    let r = blendsa(&["analyze", "--config", s(&d.path().join("cfg.json")), "--out", s(&d.path().join("o"))]);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn diagnose_mi_shift_and_refuses_cox() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(d.path(), 400, "IMI", json!({}));
    let out = d.path().join("o");
    ok(blendsa(&["diagnose", "--config", s(&cfg), "--out", s(&out), "--mechanism", "2", "--grid", "-1:1:0.5"]));
    assert_eq!(check_csvs(&out), 1);
    let t = read_table(&out, "connecting");
    assert_eq!(t.n_rows(), 5);
    let value: Vec<f64> = column(&t, "value").into_iter().map(Option::unwrap).collect();
    // binary Z2: average imputed value rises with δ
    assert!(value.windows(2).all(|w| w[0] < w[1]), "{value:?}");
    assert_eq!(column(&t, "shift")[2], Some(0.0));
    assert_eq!(column(&t, "exact_shift")[4], Some(1.0));

    let r = blendsa(&["diagnose", "--config", s(&cfg), "--out", s(&d.path().join("c")), "--mechanism", "1"]);
    assert_eq!(code(&r), 2);
}

/// Intercept-only selection model on a binary variable: the connecting
/// probability at δ = 0 is the observed proportion.
#[test]
fn diagnose_binary_ipw_collapses_to_observed_proportion() {
    let d = TempDir::new().unwrap();
    let mut csv = String::from("A,V,Y\n");
    let mut ones = 0;
    let mut seen = 0;
    for i in 0..50 {
        let v = if i % 5 == 0 {
            String::new()
        } else {
            let v = u8::from(i % 3 == 0);
            ones += usize::from(v);
            seen += 1;
            v.to_string()
        };
        csv.push_str(&format!("{},{},{}\n", i % 2, v, (i * 7 % 13) as f64 / 3.0));
    }
    fs::write(d.path().join("data.csv"), csv).unwrap();
    let cfg = json!({
        "data": "data.csv",
        "schema": {"columns": [
            {"name": "A", "kind": "binary"}, {"name": "V", "kind": "binary"}, {"name": "Y", "kind": "continuous"}
        ]},
        "spec": {
            "analysis": "Y ~ A + V",
            "sub_mechanisms": [{"name": "v", "variables": ["V"], "method": "ipw", "model": "~ 1", "sensitivity": [{"column": "V"}]}]
        },
        "seed": 1,
        "m": 1,
    });
    fs::write(d.path().join("cfg.json"), cfg.to_string()).unwrap();
    let out = d.path().join("o");
    ok(blendsa(&["diagnose", "--config", s(&d.path().join("cfg.json")), "--out", s(&out), "--grid", "-0.5:0.5:0.5", "--mechanism", "1"]));
    let t = read_table(&out, "connecting");
    let v = column(&t, "value");
    let p = ones as f64 / seen as f64;
    assert!((v[1].unwrap() - p).abs() < 1e-9, "{v:?} vs {p}");
    // larger δ makes V = 1 more likely to be observed, so fewer ones remain among R = 0
    assert!(v[0].unwrap() > v[1].unwrap() && v[1].unwrap() > v[2].unwrap(), "{v:?}");
}

#[test]
fn tipping_writes_a_point_inside_the_interval() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(d.path(), 400, "III", json!({"b": 20, "tipping": {"mechanism": 3, "coefficient": "Z1"}}));
    let out = d.path().join("o");
    ok(blendsa(&["tipping", "--config", s(&cfg), "--out", s(&out), "--interval", "-1:1"]));
    let t: Value = serde_json::from_str(&fs::read_to_string(out.join("tipping.json")).unwrap()).unwrap();
    assert_eq!(t["coefficient"], "Z1");
    assert_eq!(t["b"], 20);
    if let Some(x) = t["delta_star"].as_f64() {
        assert!((-1.0..=1.0).contains(&x));
    } else {
        assert!(t["delta_star"].is_null());
    }
    let again = d.path().join("o2");
    ok(blendsa(&["tipping", "--config", s(&cfg), "--out", s(&again), "--interval", "-1:1"]));
    assert_same_dirs(&out, &again);
}

#[test]
fn published_config_schema_matches_the_loader() {
    let schema: Value = serde_json::from_str(include_str!("../config.schema.json")).unwrap();
    let props = schema["properties"].as_object().unwrap();
    let d = TempDir::new().unwrap();
    // a config naming every published property loads
    let cfg = scenario_setup(
        d.path(),
        200,
        "IMI",
        json!({
            "delta": [0, 0, 0], "sweep": [{"mechanism": 2, "grid": "-0.3:0.3:0.3"}], "alpha": 0.1, "weight_cap": 50.0,
            "per_cell_ci": false, "full_grid": false, "heatmap_coefficient": "X",
            "tipping": {"mechanism": 3, "coefficient": "X", "interval": [-1, 1]},
        }),
    );
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    for k in props.keys() {
        assert!(keys.contains(&k), "{k} missing from the test config");
    }
    for k in &keys {
        assert!(props.contains_key(*k), "{k} not published");
    }
    let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(required, ["data", "schema", "spec", "seed"]);
    ok(blendsa(&["analyze", "--config", s(&cfg), "--out", s(&d.path().join("o"))]));

    v["colour"] = json!("blue");
    fs::write(&cfg, v.to_string()).unwrap();
    let r = blendsa(&["analyze", "--config", s(&cfg), "--out", s(&d.path().join("p"))]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("colour"));
}

#[test]
fn manifest_records_config_hash() {
    let d = TempDir::new().unwrap();
    let cfg = scenario_setup(d.path(), 200, "III", json!({}));
    let out = d.path().join("o");
    ok(blendsa(&["analyze", "--config", s(&cfg), "--out", s(&out)]));
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "analyze");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    for f in &files {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(files.contains(&"estimates.csv") && files.contains(&"summary.json"));
}
