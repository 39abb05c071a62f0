mod common;

use std::path::Path;
use std::process::{Command, Output};

use constrained_mfg::cli::scenario::AtomSpec;
use constrained_mfg::cli::{
    compare_dirs, Scenario, CERTIFICATE_FILE, ETA_FILE, EXIT_CONVERGED, EXIT_NOT_CONVERGED, EXIT_VALIDATION, FLOW_FILE,
    SCENARIO_FILE, TRACE_FILE, UNIQUENESS_FILE, VALUE_GRID_FILE,
};
use constrained_mfg::equilibrium::verify;
use constrained_mfg::measures::read_arc_measure_json;
use tempfile::TempDir;

fn cmfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmfg")).args(args).env("CMFG_THREADS", "1").output().unwrap()
}

fn run(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cmfg(&args)
}

fn write_scenario(dir: &TempDir, name: &str, s: &Scenario) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, s.to_json().unwrap()).unwrap();
    path
}

fn capped_crowd() -> Scenario {
    let mut s = common::load_scenario("crowd");
    s.solver.max_outer_iters = 2;
    s.value_grid.per_dim = 5;
    s
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn trivial_run_converges_and_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(&common::scenario_path("trivial"), &out, &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONVERGED), "{}", stderr(&o));
    for f in [SCENARIO_FILE, ETA_FILE, FLOW_FILE, CERTIFICATE_FILE, TRACE_FILE, VALUE_GRID_FILE] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join(UNIQUENESS_FILE).exists());
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(CERTIFICATE_FILE)).unwrap()).unwrap();
    assert_eq!(cert["converged"], true);
    assert_eq!(cert["certificate"]["exploitability"], 0.0);
}

#[test]
fn atom_outside_the_domain_is_a_validation_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let mut s = common::load_scenario("trivial");
    s.initial[2] = AtomSpec { point: vec![3.0, 0.0], weight: s.initial[2].weight };
    let path = write_scenario(&dir, "bad.json", &s);
    let out = dir.path().join("out");
    let o = run(&path, &out, &[]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
    let msg = stderr(&o);
    assert!(msg.contains("initial[2]") && msg.contains("atom 2"), "{msg}");
    assert!(!out.join(ETA_FILE).exists());
}

#[test]
fn malformed_scenarios_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let good = std::fs::read_to_string(common::scenario_path("trivial")).unwrap();
    let cases = [
        ("unknown.json", good.replacen("\"steps\"", "\"stepz\"", 1)),
        ("syntax.json", good[..good.len() / 2].to_string()),
        ("variant.json", good.replacen("\"ball\"", "\"torus\"", 1)),
    ];
    for (name, text) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        let o = run(&path, &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(EXIT_VALIDATION), "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains("error"), "{name}");
    }
    let o = run(&dir.path().join("missing.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
    assert_eq!(cmfg(&["run", "--scenario"]).status.code(), Some(EXIT_VALIDATION));
    assert_eq!(cmfg(&["--help"]).status.code(), Some(EXIT_CONVERGED));
}

#[test]
fn capped_run_exits_not_converged_with_artifacts() {
    let dir = TempDir::new().unwrap();
    let path = write_scenario(&dir, "capped.json", &capped_crowd());
    let out = dir.path().join("out");
    let o = run(&path, &out, &[]);
    assert_eq!(o.status.code(), Some(EXIT_NOT_CONVERGED), "{}", stderr(&o));
    assert!(out.join(CERTIFICATE_FILE).is_file());
    assert!(stderr(&o).contains("not converged"));
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let path = write_scenario(&dir, "capped.json", &capped_crowd());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&path, &a, &["--seed", "11"]);
    run(&path, &b, &["--seed", "11"]);
    for f in [SCENARIO_FILE, ETA_FILE, FLOW_FILE, CERTIFICATE_FILE, TRACE_FILE, VALUE_GRID_FILE] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let s = Scenario::load(&a.join(SCENARIO_FILE)).unwrap();
    assert_eq!(s.seed, 11);
}

#[test]
fn reloaded_eta_reproduces_the_certificate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(&common::scenario_path("lq"), &out, &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONVERGED), "{}", stderr(&o));
    let scenario = Scenario::load(&out.join(SCENARIO_FILE)).unwrap();
    let inst = scenario.instance().unwrap();
    let eta = read_arc_measure_json(&out.join(ETA_FILE)).unwrap();
    let cert = verify(
        &eta,
        &inst.game,
        &inst.best_response,
        inst.solver.seed,
        inst.solver.exploitability_tol,
        inst.solver.execution,
    )
    .unwrap();
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(CERTIFICATE_FILE)).unwrap()).unwrap();
    let saved = &saved["certificate"];
    let fresh = serde_json::to_value(&cert).unwrap();
    for key in ["exploitability_passed", "energy_passed", "marginal_passed", "feasibility_passed"] {
        assert_eq!(saved[key], fresh[key], "{key}");
    }
    assert_eq!(saved["flow_holder"]["passed"], fresh["flow_holder"]["passed"]);
    assert!((saved["exploitability"].as_f64().unwrap() - cert.exploitability).abs() <= 1e-9);
}

#[test]
fn compare_reports_zero_for_identical_runs() {
    let dir = TempDir::new().unwrap();
    let lq = dir.path().join("lq");
    assert_eq!(run(&common::scenario_path("lq"), &lq, &[]).status.code(), Some(EXIT_CONVERGED));
    let r = compare_dirs(&lq, &lq).unwrap();
    assert_eq!(r.comparison.u_sup_difference, 0.0);
    assert_eq!(r.comparison.max_flow_d1, 0.0);
    assert!(!r.uniqueness_expected);
    assert_eq!(r.within_tolerance, None);

    let o = cmfg(&["compare", lq.to_str().unwrap(), lq.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONVERGED));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["u_sup_difference"], 0.0);
    assert!(printed["within_tolerance"].is_null());

    let crowd = dir.path().join("crowd");
    let path = write_scenario(&dir, "capped.json", &capped_crowd());
    run(&path, &crowd, &[]);
    let r = compare_dirs(&crowd, &crowd).unwrap();
    assert!(r.uniqueness_expected);
    assert_eq!(r.within_tolerance, Some(true));
    assert_eq!(r.comparison.max_monotonicity_gap, Some(0.0));

    let o = cmfg(&["compare", lq.to_str().unwrap(), dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
}
