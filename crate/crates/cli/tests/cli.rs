use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nudge_core::compliance::{predict_probs, ComplianceModel};
use nudge_core::design::closed_form_unconstrained;
use nudge_core::model::{load_cohort, write_dataset, NudgePropensity, Schema};
use nudge_core::simulation::{generate_dataset, DgpConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn nudge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nudge")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn study(dir: &Path, name: &str, n: usize, e_z: f64, seed: u64) -> PathBuf {
    let cfg = DgpConfig { n, ..DgpConfig::default() };
    let e = NudgePropensity::constant(n, e_z).unwrap();
    let data = generate_dataset(&cfg, &e, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let path = dir.join(name);
    write_dataset(&data, &path).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn fitted_model(dir: &Path) -> PathBuf {
    let pilot = study(dir, "pilot.csv", 2000, 0.5, 1);
    let model = dir.join("model.json");
    let out = nudge(&["fit-pilot", s(&pilot), "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn fit_pilot_happy_path_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = fitted_model(dir.path());
    assert!(model.exists());
    let m: ComplianceModel<f64> = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m.beta_z0.len(), 7);

    let pilot = fs::read_to_string(dir.path().join("pilot.csv")).unwrap();
    let no_z: String = pilot
        .lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.remove(7);
            cells.join(",") + "\n"
        })
        .collect();
    let bad = dir.path().join("no_z.csv");
    fs::write(&bad, no_z).unwrap();
    let out = nudge(&["fit-pilot", s(&bad), "--schema", "x=intercept,x1,score;z=z;w=w"]);
    assert_eq!(out.status.code(), Some(2));

    let all_z = study(dir.path(), "all_z.csv", 500, 1.0, 2);
    let out = nudge(&["fit-pilot", s(&all_z), "--out", s(&dir.path().join("m2.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("arm"));

    let out = nudge(&["fit-pilot", s(&dir.path().join("missing.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn design_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let model = fitted_model(dir.path());
    let cohort = study(dir.path(), "cohort.csv", 1000, 0.5, 3);

    let free = dir.path().join("free.csv");
    let out = nudge(&["design", s(&cohort), s(&model), "--out", s(&free)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: ComplianceModel<f64> = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    let schema = Schema::infer(&nudge_core::model::csv_headers(&cohort).unwrap()).unwrap();
    let x = load_cohort::<f64>(&cohort, &schema).unwrap().x;
    let oracle = closed_form_unconstrained(&predict_probs(&m, &x).unwrap());
    let got = nudge_core::model::load_propensity::<f64>(&free).unwrap();
    let err = got.as_slice().iter().zip(oracle.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-5, "{err}");
    let diag = json(&free.with_extension("json"));
    assert!(diag["inflation_ratio"].as_f64().unwrap() <= 1.0 + 1e-9);

    let con = dir.path().join("con.csv");
    let out = nudge(&["design", s(&cohort), s(&model), "--budget", "0.4", "--monotone", "--out", s(&con)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = json(&con.with_extension("json"));
    assert!((diag["mean_e_w"].as_f64().unwrap() - 0.4).abs() <= 1e-6);
    assert!(diag["inflation_ratio"].as_f64().unwrap() >= 1.0 - 1e-9);

    let cfile = dir.path().join("cons.toml");
    fs::write(&cfile, "gain_reference = 1e9\n").unwrap();
    let out = nudge(&[
        "design", s(&cohort), s(&model), "--constraints", s(&cfile), "--budget", "0.4", "--gain-rho", "0.9",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("infeasible"));

    fs::write(&cfile, "budgett = 0.4\n").unwrap();
    let out = nudge(&["design", s(&cohort), s(&model), "--constraints", s(&cfile)]);
    assert_eq!(out.status.code(), Some(2));
    let out = nudge(&["design", s(&cohort), s(&model), "--budget", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = study(dir.path(), "full.csv", 3000, 0.5, 4);
    let design = dir.path().join("design.csv");
    fs::write(&design, format!("e_z\n{}", "0.5\n".repeat(3000))).unwrap();
    for (method, tag) in [("plugin", "plugin"), ("crossfit", "crossfit"), ("wls", "wls")] {
        let out_path = dir.path().join(format!("{method}.json"));
        let out = nudge(&["estimate", s(&data), s(&design), "--method", method, "--out", s(&out_path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v = json(&out_path);
        assert_eq!(v["method"], tag);
        assert!(v["tau_late"].as_f64().unwrap().is_finite());
        assert_eq!(v["gamma_hat"].as_array().unwrap().len(), 7);
        if method == "wls" {
            let lo = v["diagnostics"]["variance_ratio_min"].as_f64().unwrap();
            let hi = v["diagnostics"]["variance_ratio_max"].as_f64().unwrap();
            assert!(lo >= 0.5 - 1e-12 && hi <= 2.0 + 1e-12, "{lo} {hi}");
        }
    }

    let model = fitted_model(dir.path());
    let out_path = dir.path().join("boot.json");
    let out = nudge(&[
        "estimate", s(&data), s(&design), "--model", s(&model), "--bootstrap", "100", "--seed", "3", "--out", s(&out_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out_path);
    assert!(v["ci"]["lo"].as_f64().unwrap() <= v["ci"]["hi"].as_f64().unwrap());

    let short = dir.path().join("short.csv");
    fs::write(&short, "e_z\n0.5\n").unwrap();
    assert_eq!(nudge(&["estimate", s(&data), s(&short)]).status.code(), Some(2));
    assert_eq!(nudge(&["estimate", s(&data), s(&design), "--bootstrap", "10"]).status.code(), Some(2));
}

#[test]
fn simulate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(
        &cfg,
        r#"
n_grid = [200]
replications = 2
n_oracle = 20000
objective_n = 200

[[designs]]
name = "optimal"
kind = "optimal"
budget = 0.4
monotone = true

[[designs]]
name = "rdd"
kind = "rdd"
budget = 0.4

[[designs]]
name = "rct"
kind = "rct"
e_z = 0.5
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let t = Instant::now();
    let out = nudge(&["simulate", s(&cfg), "--out", s(&out_dir), "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(t.elapsed() < Duration::from_secs(10));
    let results = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count() - 1, 3 * nudge_core::simulation::METRICS.len());
    for f in ["objectives.csv", "truth.csv", "variance.svg", "mse.svg"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    fs::write(&cfg, "replications = 1\n").unwrap();
    assert_eq!(nudge(&["simulate", s(&cfg)]).status.code(), Some(2));
}
