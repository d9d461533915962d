use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const INFLOW: &str = "[inflow]
gamma = 3
b0 = 0.12
rho0 = 0.11428571428571428
u0 = 0.35
r0 = 1
r1 = 1.02
theta0 = 0.5
";

fn run(dir: &Path, mode: &str, cfg: &str, extra: &[&str], threads: Option<&str>) -> Output {
    let path = dir.join("run.cfg");
    std::fs::write(&path, cfg).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_epnozzle"));
    cmd.arg(mode).arg("--config").arg(&path).arg("--out").arg(dir.join("out")).args(extra);
    cmd.env_remove("EPNOZZLE_THREADS");
    if let Some(t) = threads {
        cmd.env("EPNOZZLE_THREADS", t);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("process exited normally")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

fn p3_cfg(sigma: f64) -> String {
    format!(
        "{INFLOW}[run]\nm = 2\nn_nodes = 17\nseed = 3\n[potential3d]\nu1_en.0.0 = {}\ne_en.0.0 = {}\nb_star.0.0.0 = {}\n",
        1e-1 * sigma,
        2e-1 * sigma,
        1e-1 * sigma
    )
}

fn axi_cfg(scale: f64) -> String {
    format!(
        "{INFLOW}[run]\nm = 2\nn_nodes = 17\n[axisym]\nu1_en.1 = {}\nu2_en.0 = {}\ns_en.1 = {}\nphi_ex.0 = {}\n",
        0.4 * scale,
        scale,
        scale,
        0.4 * scale
    )
}

#[test]
fn background_run_writes_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{INFLOW}[run]\nn_nodes = 40\n");
    let o = run(dir.path(), "background", &cfg, &[], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/background.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "r,rho,U,E,Phi,c2,K");
    assert_eq!(lines.len() - 1, 40);
    let rep = report(dir.path());
    assert_eq!(rep["status"], "converged");
    assert!(rep["background"]["mass_flux_defect"].as_f64().unwrap() <= 1e-10);
    assert_eq!(rep["multiplier"]["admissible"], true);
}

#[test]
fn background_mode_reports_an_inadmissible_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{}[run]\nn_nodes = 17\n", INFLOW.replace("r1 = 1.02", "r1 = 1.4"));
    let o = run(dir.path(), "background", &cfg, &["--verify"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(dir.path());
    assert_eq!(rep["multiplier"]["admissible"], false);
    assert_eq!(rep["multiplier"]["exit_code"], 14);
    // the same data are fatal for a perturbation solver
    let dir2 = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir2.path(), "potential3d", &cfg, &[], None)), 14);
}

#[test]
fn background_verify_measures_fourth_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{}[run]\nn_nodes = 17\n", INFLOW.replace("r1 = 1.02", "r1 = 1.4"));
    let o = run(dir.path(), "background", &cfg, &["--verify"], None);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    let rates = v["rates"].as_array().unwrap();
    assert!(rates.iter().filter(|r| r["status"] == "ok").count() >= 3);
    for r in rates.iter().filter(|r| r["status"] == "ok") {
        assert!(r["rate"].as_f64().unwrap() >= 3.5, "{r}");
    }
}

#[test]
fn potential3d_at_zero_data_takes_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "potential3d", &p3_cfg(0.0), &[], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(dir.path());
    assert_eq!(rep["solver"]["iterations"], 1);
    assert!(dir.path().join("out/state_psi.csv").exists());
    assert!(dir.path().join("out/state_Psi.csv").exists());
}

#[test]
fn potential3d_verify_passes_at_small_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "potential3d", &p3_cfg(1e-2), &["--verify"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    // the coarse max-norm residuals sit above the roundoff floor and shrink at least fourfold
    let ok: Vec<&Value> = v["rates"].as_array().unwrap().iter().filter(|r| r["status"] == "ok").collect();
    assert!(!ok.is_empty(), "{v}");
    for r in ok {
        assert!(r["coarse"].as_f64().unwrap() / r["fine"].as_f64().unwrap() >= 4.0, "{r}");
    }
}

#[test]
fn verify_mode_reuses_a_converged_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = axi_cfg(1e-3);
    assert_eq!(code(&run(dir.path(), "axisym", &cfg, &[], None)), 0);
    let o = run(dir.path(), "verify", &cfg, &[], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(v["mode"], "axisym");
    assert_eq!(v["passed"], true);
}

#[test]
fn verify_without_a_run_is_a_missing_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), "verify", &axi_cfg(1e-3), &[], None)), 30);
}

#[test]
fn verify_against_a_different_config_is_a_missing_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), "axisym", &axi_cfg(1e-3), &[], None)), 0);
    assert_eq!(code(&run(dir.path(), "verify", &axi_cfg(2e-3), &[], None)), 30);
}

#[test]
fn identical_resolutions_are_a_degenerate_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{INFLOW}[run]\nn_nodes = 33\nrefine = 1\n");
    assert_eq!(code(&run(dir.path(), "background", &cfg, &["--verify"], None)), 31);
}

#[test]
fn oversized_axisym_data_diverge_without_a_converged_state() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "axisym", &axi_cfg(1e-1), &[], None);
    assert_eq!(code(&o), 16, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(dir.path());
    assert_eq!(rep["status"], "failed");
    assert_eq!(rep["converged"], false);
    assert_eq!(rep["error"]["exit_code"], 16);
    assert!(!rep["error"]["history"].as_array().unwrap().is_empty());
    assert!(!dir.path().join("out/fields.csv").exists());
}

#[test]
fn a_failed_run_removes_stale_state_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), "axisym", &axi_cfg(1e-3), &[], None)), 0);
    assert!(dir.path().join("out/fields.csv").exists());
    assert_eq!(code(&run(dir.path(), "axisym", &axi_cfg(1e-1), &[], None)), 16);
    assert!(!dir.path().join("out/fields.csv").exists());
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let files = ["report.json", "fields.csv", "background.csv"];
    let mut seen: Vec<Vec<Vec<u8>>> = Vec::new();
    for threads in [Some("1"), Some("3"), None] {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(code(&run(dir.path(), "axisym", &axi_cfg(1e-3), &[], threads)), 0);
        seen.push(files.iter().map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap()).collect());
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));

    let mut p3: Vec<Vec<Vec<u8>>> = Vec::new();
    for threads in [Some("2"), None] {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(code(&run(dir.path(), "potential3d", &p3_cfg(1e-2), &[], threads)), 0);
        let names = ["report.json", "state_psi.csv", "state_Psi.csv"];
        p3.push(names.iter().map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap()).collect());
    }
    assert_eq!(p3[0], p3[1]);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        format!("{INFLOW}[run]\nbogus = 1\n"),
        INFLOW.replace("gamma = 3\n", ""),
        format!("{INFLOW}[nowhere]\n"),
        format!("{INFLOW}[run]\nm = 2\nm = 3\n"),
        format!("{INFLOW}[run]\nm = two\n"),
    ] {
        let o = run(dir.path(), "background", &bad, &[], None);
        assert_eq!(code(&o), 2, "{bad}");
    }
}

#[test]
fn bad_thread_counts_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for t in ["0", "-1", "many"] {
        assert_eq!(code(&run(dir.path(), "background", INFLOW, &[], Some(t))), 2, "{t}");
    }
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_epnozzle"))
        .args(["background", "--config"])
        .arg(dir.path().join("absent.cfg"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn shipped_configs_run() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (mode, file) in [("background", "background.cfg"), ("background", "background_order.cfg"), ("axisym", "axisym.cfg")] {
        let dir = tempfile::tempdir().unwrap();
        let text = std::fs::read_to_string(root.join(file)).unwrap();
        let o = run(dir.path(), mode, &text, &[], None);
        assert_eq!(code(&o), 0, "{file}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
