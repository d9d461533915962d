//! Two-resolution self-convergence checks.
//!
//! Residual rates compare the base run with one refined by `refine` in both
//! m and the radial interval count. The background, being cheap, uses three
//! levels so that the rate of the solution itself can be estimated.
//!
//! Residuals that are already at roundoff cannot show a rate. Second radial
//! derivatives of interpolated modal rows carry an error of about ε A / h²,
//! where A bounds the perturbation amplitude, so the floor at each level is the
//! larger of the configured absolute floor and `FLOOR_FACTOR` ε A / h².

use std::path::Path;

use epnozzle_core::axisym::AxiProblem;
use epnozzle_core::potential3d::Problem3D;
use epnozzle_core::spectral::ModalField;
use serde::Serialize;
use serde_json::Value;

use crate::output::write_json;
use crate::run::{background_stage, solve_bg};
use crate::{CliError, Mode, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Rate {
    pub name: String,
    pub coarse: f64,
    pub fine: f64,
    /// None when the comparison is at the roundoff floor.
    pub rate: Option<f64>,
    /// "ok", "roundoff" or "fail".
    pub status: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormChange {
    pub name: String,
    pub coarse: f64,
    pub fine: f64,
    pub relative_change: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub mode: &'static str,
    /// (m, n_nodes) of every level used.
    pub levels: Vec<(usize, usize)>,
    pub refine: usize,
    /// Configured absolute floor; level floors may be larger, see the module docs.
    pub floor: f64,
    pub level_floors: Vec<f64>,
    pub min_rate: f64,
    pub rates: Vec<Rate>,
    pub norms: Vec<NormChange>,
    pub passed: bool,
}

/// Rates `coarse -> fine`; each level has its own roundoff floor.
fn rate(name: &str, coarse: f64, fine: f64, refine: usize, floors: (f64, f64), min_rate: f64) -> Rate {
    let (r, status) = if coarse <= floors.0 {
        (None, "roundoff")
    } else if fine <= floors.1 {
        // the refined level reached its floor; the ratio only bounds the rate from below
        (Some((coarse / floors.1).ln() / (refine as f64).ln()), "roundoff")
    } else {
        let r = (coarse / fine).ln() / (refine as f64).ln();
        (Some(r), if r >= min_rate { "ok" } else { "fail" })
    };
    Rate { name: name.to_string(), coarse, fine, rate: r, status }
}

const FLOOR_FACTOR: f64 = 10.0;

/// Sum over fields and modes of the largest modal coefficient: a bound on the sup norm.
fn amplitude(fields: &[&ModalField]) -> f64 {
    fields
        .iter()
        .map(|f| (0..f.n_modes()).map(|k| f.row(k).iter().fold(0.0f64, |m, v| m.max(v.abs()))).sum::<f64>())
        .sum()
}

fn roundoff_floor(cfg: &RunConfig, n: usize, amp: f64) -> f64 {
    let h = (cfg.inflow.r1 - cfg.inflow.r0) / (n - 1) as f64;
    cfg.verify_floor.max(FLOOR_FACTOR * f64::EPSILON * amp / (h * h))
}

fn norm_change(name: &str, coarse: f64, fine: f64) -> NormChange {
    let scale = fine.abs().max(f64::MIN_POSITIVE);
    NormChange { name: name.to_string(), coarse, fine, relative_change: (coarse - fine).abs() / scale }
}

fn refined_nodes(n: usize, factor: usize) -> usize {
    (n - 1) * factor + 1
}

/// Re-solves `mode` at the base and refined resolutions and rates the residuals.
pub fn compare(mode: Mode, cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let k = cfg.refine;
    if k <= 1 {
        return Err(CliError::DegenerateComparison(format!(
            "refine = {k} compares a resolution with itself"
        )));
    }
    let (floor, min_rate) = (cfg.verify_floor, cfg.verify_min_rate);
    let mut rates = Vec::new();
    let mut norms = Vec::new();
    let levels;
    let mut level_floors = Vec::new();
    match mode {
        Mode::Background | Mode::Verify => {
            let ns = [cfg.n_nodes, refined_nodes(cfg.n_nodes, k), refined_nodes(cfg.n_nodes, k * k)];
            let b: Vec<_> = ns.iter().map(|&n| solve_bg(cfg, n)).collect::<Result<_, _>>()?;
            levels = ns.iter().map(|&n| (0, n)).collect();
            let fields: [(&str, fn(&epnozzle_core::background::BackgroundSolution) -> &Vec<f64>); 4] = [
                ("U", |s| &s.u_bar),
                ("E", |s| &s.e_bar),
                ("Phi", |s| &s.phi_bar),
                ("rho", |s| &s.rho_bar),
            ];
            for (name, get) in fields {
                let (f0, f1, f2) = (get(&b[0]), get(&b[1]), get(&b[2]));
                let scale = f2.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let mut d1 = 0.0f64;
                let mut d2 = 0.0f64;
                for i in 0..f0.len() {
                    d1 = d1.max((f0[i] - f1[i * k]).abs());
                    d2 = d2.max((f1[i * k] - f2[i * k * k]).abs());
                }
                rates.push(rate(name, d1, d2, k, (floor * scale, floor * scale), min_rate));
            }
            norms.push(norm_change("mass_flux_defect", b[0].mass_flux_defect(), b[1].mass_flux_defect()));
            norms.push(norm_change("supersonic_margin", b[0].supersonic_margin(), b[1].supersonic_margin()));
        }
        Mode::Potential3d => {
            let res: Vec<_> = [(cfg.m, cfg.n_nodes), (cfg.m * k, refined_nodes(cfg.n_nodes, k))]
                .iter()
                .map(|&(m, n)| {
                    let (bg, _) = background_stage(cfg, n)?;
                    let p = Problem3D::new(&bg, &cfg.data3d, m)?;
                    let (st, rep) = p.picard_iterate(&cfg.picard)?;
                    let fl = roundoff_floor(cfg, n, amplitude(&[&st.psi, &st.psi_cap]));
                    Ok(((m, n), p.residual_potential(&st, 2)?, rep, fl))
                })
                .collect::<Result<_, CliError>>()?;
            levels = res.iter().map(|r| r.0).collect();
            let (a, b) = (&res[0], &res[1]);
            let f = (a.3, b.3);
            level_floors = vec![a.3, b.3];
            for (name, x, y) in [
                ("eq1_l2", a.1.eq1_l2, b.1.eq1_l2),
                ("eq1_max", a.1.eq1_max, b.1.eq1_max),
                ("eq2_l2", a.1.eq2_l2, b.1.eq2_l2),
                ("eq2_max", a.1.eq2_max, b.1.eq2_max),
            ] {
                rates.push(rate(name, x, y, k, f, min_rate));
            }
            norms.push(norm_change("norm_h1", a.2.norm_h1, b.2.norm_h1));
            norms.push(norm_change("norm_h4", a.2.norm_h4, b.2.norm_h4));
            norms.push(norm_change("kappa", a.2.kappa, b.2.kappa));
        }
        Mode::Axisym => {
            let res: Vec<_> = [(cfg.m, cfg.n_nodes), (cfg.m * k, refined_nodes(cfg.n_nodes, k))]
                .iter()
                .map(|&(m, n)| {
                    let (bg, _) = background_stage(cfg, n)?;
                    let p = AxiProblem::new(&bg, &cfg.data_axi, m)?;
                    let (st, rep) = p.outer_iterate(&cfg.axi)?;
                    let fl = roundoff_floor(cfg, n, amplitude(&[&st.v1, &st.v2, &st.v3, &st.w1, &st.w2, &st.w3]));
                    Ok(((m, n), p.residual_axi(&st, 2)?, rep, fl))
                })
                .collect::<Result<_, CliError>>()?;
            levels = res.iter().map(|r| r.0).collect();
            let (a, b) = (&res[0].1, &res[1].1);
            let f = (res[0].3, res[1].3);
            level_floors = vec![f.0, f.1];
            for (name, x, y) in [
                ("continuity", a.continuity[0], b.continuity[0]),
                ("momentum_r", a.momentum_r[0], b.momentum_r[0]),
                ("momentum_theta", a.momentum_theta[0], b.momentum_theta[0]),
                ("momentum_z", a.momentum_z[0], b.momentum_z[0]),
                ("entropy", a.entropy[0], b.entropy[0]),
                ("poisson", a.poisson[0], b.poisson[0]),
                ("vorticity_identity", a.vorticity_identity, b.vorticity_identity),
            ] {
                rates.push(rate(name, x, y, k, f, min_rate));
            }
            let (ra, rb) = (&res[0].2, &res[1].2);
            norms.push(norm_change("norm_v", ra.norm_v, rb.norm_v));
            norms.push(norm_change("norm_w", ra.norm_w, rb.norm_w));
            norms.push(norm_change("kappa", ra.kappa, rb.kappa));
        }
    }
    let passed = rates.iter().all(|r| r.status != "fail");
    Ok(VerifyReport { mode: mode.name(), levels, refine: k, floor, level_floors, min_rate, rates, norms, passed })
}

/// Runs the comparison, writes `verify.json`, and fails if any rate is too low.
pub fn verify_and_write(mode: Mode, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let rep = compare(mode, cfg)?;
    let value = serde_json::to_value(&rep).map_err(|e| CliError::Io(e.to_string()))?;
    write_json(out, "verify.json", &value)?;
    if !rep.passed {
        let bad: Vec<String> = rep.rates.iter().filter(|r| r.status == "fail").map(|r| r.name.clone()).collect();
        return Err(CliError::VerificationFailed(format!("rate below {} for {}", rep.min_rate, bad.join(", "))));
    }
    Ok(())
}

/// `verify` mode: requires a converged run of the same config in `out`.
pub fn verify_run_dir(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let path = out.join("report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| CliError::MissingRun(format!("no report.json in {}", out.display())))?;
    let report: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::MissingRun(format!("{}: unreadable report: {e}", path.display())))?;
    if report["status"] != "converged" {
        return Err(CliError::MissingRun(format!("{} does not hold a converged run", out.display())));
    }
    if report["provenance"]["config_hash"] != cfg.hash.as_str() {
        return Err(CliError::MissingRun(format!("{} was produced by a different config", out.display())));
    }
    let mode = report["mode"].as_str().and_then(Mode::from_name).filter(|m| *m != Mode::Verify);
    let mode = mode.ok_or_else(|| CliError::MissingRun("report names no solver mode".into()))?;
    verify_and_write(mode, cfg, out)
}
