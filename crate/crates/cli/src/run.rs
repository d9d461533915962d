//! Pipeline: background, multiplier, then the selected perturbation solver.

use std::path::Path;

use epnozzle_core::axisym::{AxiProblem, AxisymState};
use epnozzle_core::background::{
    check_admissibility, eval_linear_coeffs, solve_background_with, solve_multiplier, BackgroundOptions,
    BackgroundSolution, MultiplierSolution,
};
use epnozzle_core::potential3d::{PerturbationState, Problem3D};
use epnozzle_core::spectral::SineBasis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::output::{background_csv, modal_csv, table_csv, write_file, write_json};
use crate::{verify, CliError, Mode, RunConfig};

/// Files a run may produce; removed up front so a failed run never leaves an old state behind.
pub const OUTPUT_FILES: [&str; 6] =
    ["background.csv", "state_psi.csv", "state_Psi.csv", "fields.csv", "report.json", "verify.json"];

/// Runs `mode` and writes its outputs into `out`.
pub fn execute(mode: Mode, cfg: &RunConfig, out: &Path, with_verify: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    if mode == Mode::Verify {
        return verify::verify_run_dir(cfg, out);
    }
    for f in OUTPUT_FILES {
        let p = out.join(f);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        }
    }
    match solve(mode, cfg, out) {
        Ok(report) => {
            write_json(out, "report.json", &report)?;
            if with_verify {
                verify::verify_and_write(mode, cfg, out)?;
            }
            Ok(())
        }
        Err(e) => {
            write_json(out, "report.json", &failure_report(mode, cfg, &e))?;
            Err(e)
        }
    }
}

pub fn provenance(cfg: &RunConfig) -> Value {
    json!({
        "config_hash": cfg.hash,
        "m": cfg.m,
        "n_nodes": cfg.n_nodes,
        "refine": cfg.refine,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn failure_report(mode: Mode, cfg: &RunConfig, e: &CliError) -> Value {
    let (origin, history) = match e {
        CliError::Solver(se) => (Some(se.origin().to_string()), se.history().map(|h| h.to_vec())),
        _ => (None, None),
    };
    json!({
        "mode": mode.name(),
        "status": "failed",
        "converged": false,
        "error": {
            "kind": e.kind(),
            "exit_code": e.exit_code(),
            "message": e.to_string(),
            "origin": origin,
            "history": history,
        },
        "provenance": provenance(cfg),
    })
}

pub fn solve_bg(cfg: &RunConfig, n_nodes: usize) -> Result<BackgroundSolution, CliError> {
    let opts = BackgroundOptions { sonic_floor: cfg.sonic_floor };
    Ok(solve_background_with(&cfg.inflow, n_nodes, &opts)?)
}

fn multiplier(bg: &BackgroundSolution) -> Result<MultiplierSolution, CliError> {
    let lin = eval_linear_coeffs(bg)?;
    Ok(solve_multiplier(bg, &lin)?)
}

/// Background and multiplier; the perturbation solvers need both.
pub fn background_stage(cfg: &RunConfig, n_nodes: usize) -> Result<(BackgroundSolution, MultiplierSolution), CliError> {
    let bg = solve_bg(cfg, n_nodes)?;
    let mult = multiplier(&bg)?;
    Ok((bg, mult))
}

fn multiplier_json(mult: &MultiplierSolution) -> Value {
    json!({
        "admissible": true,
        "lambda0": mult.lambda0,
        "condition_margins": mult.condition_margins,
        "xi": mult.xi,
        "mu_bar": mult.mu_bar,
        "a_frak": mult.a_frak,
    })
}

fn background_json(cfg: &RunConfig, bg: &BackgroundSolution, multiplier: Value) -> Result<Value, CliError> {
    let adm = check_admissibility(&cfg.inflow)?;
    Ok(json!({
        "background": {
            "n_nodes": bg.len(),
            "mass_flux_defect": bg.mass_flux_defect(),
            "bernoulli_defect": bg.bernoulli_defect(),
            "supersonic_margin": bg.supersonic_margin(),
            "j0": bg.j0,
            "k0": bg.k0,
            "phi_exit": bg.phi_exit(),
            "admissibility": adm,
        },
        "multiplier": multiplier,
    }))
}

fn merge(base: &mut Value, extra: Value) {
    if let (Value::Object(a), Value::Object(b)) = (base, extra) {
        a.extend(b);
    }
}

fn solve(mode: Mode, cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let bg = solve_bg(cfg, cfg.n_nodes)?;
    // Background mode still succeeds without a multiplier and records why.
    let mult = match (multiplier(&bg), mode) {
        (Ok(m), _) => multiplier_json(&m),
        (Err(CliError::Solver(e)), Mode::Background | Mode::Verify) => json!({
            "admissible": false,
            "exit_code": e.exit_code(),
            "message": e.to_string(),
        }),
        (Err(e), _) => return Err(e),
    };
    write_file(out, "background.csv", &background_csv(&bg))?;
    let mut report = json!({
        "mode": mode.name(),
        "status": "converged",
        "converged": true,
        "provenance": provenance(cfg),
    });
    merge(&mut report, background_json(cfg, &bg, mult)?);
    match mode {
        Mode::Background | Mode::Verify => {}
        Mode::Potential3d => {
            let p = Problem3D::new(&bg, &cfg.data3d, cfg.m)?;
            let (state, rep) = p.picard_iterate(&cfg.picard)?;
            let residual = p.residual_potential(&state, 2)?;
            write_file(out, "state_psi.csv", &modal_csv(&p.cs, &bg.grid_r, &state.psi))?;
            write_file(out, "state_Psi.csv", &modal_csv(&p.cs, &bg.grid_r, &state.psi_cap))?;
            merge(
                &mut report,
                json!({
                    "solver": rep,
                    "residual": residual,
                    "wall_defects": wall_defects_3d(&p, &state, cfg.seed),
                }),
            );
        }
        Mode::Axisym => {
            let p = AxiProblem::new(&bg, &cfg.data_axi, cfg.m)?;
            let (st, rep) = p.outer_iterate(&cfg.axi)?;
            let residual = p.residual_axi(&st, 2)?;
            let rows = p.node_fields(&st)?;
            write_file(out, "fields.csv", &table_csv("r,z,U1,U2,U3,rho,Phi,K,S,omega2,L", &rows))?;
            merge(
                &mut report,
                json!({
                    "solver": rep,
                    "residual": residual,
                    "wall_defects": wall_defects_axi(&p, &st),
                }),
            );
        }
    }
    Ok(report)
}

/// Normal derivatives of ψ and Ψ on the side walls at seeded sample points.
fn wall_defects_3d(p: &Problem3D, st: &PerturbationState, seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0 = p.bg.inflow.theta0;
    let (mut dt, mut dz) = (0.0f64, 0.0f64);
    for node in 0..p.grid.len() {
        let cols = [st.psi.column(node), st.psi_cap.column(node)];
        for _ in 0..4 {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let t: f64 = rng.gen_range(-theta0..=theta0);
            for c in &cols {
                for side in [-1.0, 1.0] {
                    dt = dt.max(p.cs.eval_at(c, side * theta0, z, 1, 0).abs());
                    dz = dz.max(p.cs.eval_at(c, t, side, 0, 1).abs());
                }
            }
        }
    }
    json!({ "dtheta_max": dt, "dz_max": dz })
}

/// U3, U1 U3 and ∂z of the cosine fields on z = ±1 at every radial node.
fn wall_defects_axi(p: &AxiProblem, st: &AxisymState) -> Value {
    let m = p.cs.n_modes() - 1;
    let sb = SineBasis::z(m);
    let (mut u3m, mut b12, mut dz) = (0.0f64, 0.0f64, 0.0f64);
    for node in 0..p.grid.len() {
        for z in [-1.0, 1.0] {
            let u3: f64 = (1..=m).map(|j| st.v2.row(j)[node] * sb.eval(j, z, 0)).sum();
            let u1 = p.bg.u_bar[node] + p.cs.eval_at(&st.v1.column(node), 0.0, z, 0, 0);
            u3m = u3m.max(u3.abs());
            b12 = b12.max((u1 * u3).abs());
            for f in [&st.v1, &st.v3, &st.w1, &st.w2, &st.w3] {
                dz = dz.max(p.cs.eval_at(&f.column(node), 0.0, z, 0, 1).abs());
            }
        }
    }
    json!({ "u3_max": u3m, "u1u3_max": b12, "dz_max": dz })
}
