//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::Command;
use std::time::Instant;

use epnozzle_core::axisym::{AxiConfig, AxiProblem, AxisymState, BoundaryDataAxi};
use epnozzle_core::background::{eval_linear_coeffs, solve_background, solve_multiplier, InflowData};
use epnozzle_core::potential3d::{BoundaryData3D, PicardConfig, Problem3D};
use epnozzle_core::spectral::{ModalTable, SineBasis};
use epnozzle_core::Error;

fn inflow(r1: f64) -> InflowData {
    InflowData { gamma: 3.0, b0: 0.12, rho0: 0.04 / 0.35, u0: 0.35, s0: 0.0, e0: 0.0, r0: 1.0, r1, theta0: 0.5 }
}

/// Collects the individual checks of one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }
}

fn data3d(sigma: f64) -> BoundaryData3D {
    let shape = BoundaryData3D {
        b_star: vec![(0, 0, 0, 0.2), (2, 0, 1, 0.01)],
        u1_en: ModalTable::new(vec![(0, 0, 1.0), (2, 0, 0.01), (0, 2, -0.01)]),
        e_en: ModalTable::new(vec![(0, 0, 0.3), (0, 2, 0.005)]),
        phi_ex: ModalTable::new(vec![(0, 0, 0.1), (2, 2, 0.0005)]),
    };
    let s0 = shape.sigma(&inflow(1.02));
    shape.scaled(sigma / s0)
}

fn table(v: &[(usize, f64)]) -> ModalTable {
    ModalTable { entries: v.iter().map(|&(j, c)| (0, j, c)).collect() }
}

fn data_axi(sigma: f64) -> BoundaryDataAxi {
    let shape = BoundaryDataAxi {
        b_star: vec![(0, 0, 0.1)],
        u1_en: table(&[(0, 0.5), (1, 0.2)]),
        u2_en: table(&[(0, 0.5), (1, 0.2)]),
        u3_en: table(&[(1, 0.3)]),
        k_en: table(&[(1, 0.2)]),
        s_en: table(&[(1, 0.5)]),
        e_en: table(&[(0, 0.3)]),
        phi_ex: table(&[(0, 0.2)]),
    };
    let s0 = shape.sigma(&inflow(1.02));
    shape.scaled(sigma / s0)
}

fn p3(data: &BoundaryData3D, m: usize, n: usize) -> Result<Problem3D, Error> {
    Problem3D::new(&solve_background(&inflow(1.02), n)?, data, m)
}

fn pa(data: &BoundaryDataAxi, m: usize, n: usize) -> Result<AxiProblem, Error> {
    AxiProblem::new(&solve_background(&inflow(1.02), n)?, data, m)
}

fn background_invariants(c: &mut Checks) -> Result<(), Error> {
    let t = Instant::now();
    let bg = solve_background(&inflow(1.02), 512)?;
    let secs = t.elapsed().as_secs_f64();
    c.check(bg.mass_flux_defect() <= 1e-10, format!("mass flux defect {:.2e}", bg.mass_flux_defect()));
    c.check(bg.bernoulli_defect() <= 1e-8, format!("Bernoulli defect {:.2e}", bg.bernoulli_defect()));
    c.check(bg.supersonic_margin() > 0.0, format!("supersonic margin {:.3e}", bg.supersonic_margin()));
    c.check(secs < 1.0, format!("{secs:.3}s"));
    Ok(())
}

fn multiplier_suite(c: &mut Checks) -> Result<(), Error> {
    let t = Instant::now();
    let bg = solve_background(&inflow(1.02), 129)?;
    let lin = eval_linear_coeffs(&bg)?;
    let m = solve_multiplier(&bg, &lin)?;
    let secs = t.elapsed().as_secs_f64();
    c.check(m.lambda0 > 0.0, format!("lambda0 {:.3e}", m.lambda0));
    let slack = m.condition_margins[1..].iter().fold(f64::INFINITY, |a, v| a.min(*v));
    c.check(m.condition_margins[0] > 0.0 && slack >= m.lambda0 - 1e-12, format!("min slack {slack:.3e}"));

    // Riccati residual from independent centred differences of the profile
    let [a0, a1, a2] = m.a_frak;
    let (h, n) = (4e-5, 200);
    let w = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let mut worst = 0.0f64;
    for k in 4..n - 4 {
        let r = 1.0 + 0.02 * k as f64 / n as f64;
        let z = |s: f64| m.profile.eval(s).0;
        let zp = (1..=4).map(|j| w[j - 1] * (z(r + j as f64 * h) - z(r - j as f64 * h))).sum::<f64>() / h;
        let zr = z(r);
        worst = worst.max((-zp - a2 * zr * zr + 2.0 * a1 * zr - a0 - m.lambda0).abs());
    }
    c.check(worst <= 1e-8, format!("Riccati residual {worst:.2e}"));

    let long = solve_background(&inflow(1.2), 129)?;
    let stretched = solve_multiplier(&long, &eval_linear_coeffs(&long)?);
    c.check(matches!(stretched, Err(Error::MultiplierFailure { .. })), "r1 = 1.2 is rejected");
    c.check(secs < 1.0, format!("{secs:.3}s"));
    Ok(())
}

fn zero_fixed_points(c: &mut Checks) -> Result<(), Error> {
    let t = Instant::now();
    let p = p3(&BoundaryData3D::zero(), 8, 129)?;
    let (s, rep) = p.picard_iterate(&PicardConfig::default())?;
    let dev = s.psi.max_abs().max(s.psi_cap.max_abs());
    c.check(rep.iterations <= 2 && dev <= 1e-10, format!("3D: {} it, deviation {dev:.1e}", rep.iterations));

    let p = pa(&BoundaryDataAxi::zero(), 8, 129)?;
    let (st, rep) = p.outer_iterate(&AxiConfig::default())?;
    let mut dev = [&st.v1, &st.v2, &st.v3, &st.w1, &st.w2, &st.w3].iter().fold(0.0f64, |a, f| a.max(f.max_abs()));
    for row in p.node_fields(&st)? {
        let i = p.grid.r.iter().position(|r| *r == row[0]).expect("node radius");
        dev = dev.max((row[5] - p.bg.rho_bar[i]).abs());
    }
    c.check(rep.outer_iterations <= 2 && dev <= 1e-10, format!("axisym: {} it, deviation {dev:.1e}", rep.outer_iterations));
    let secs = t.elapsed().as_secs_f64();
    c.check(secs < 10.0, format!("{secs:.2}s"));
    Ok(())
}

fn linear_response(c: &mut Checks) -> Result<(), Error> {
    let t = Instant::now();
    let norm3 = |sigma: f64| -> Result<f64, Error> {
        let p = p3(&data3d(sigma), 8, 129)?;
        let (s, _) = p.picard_iterate(&PicardConfig::default())?;
        Ok(p.h1(&s.psi, &s.psi_cap))
    };
    let r3 = norm3(5e-4)? / norm3(1e-3)?;
    c.check((0.45..=0.55).contains(&r3), format!("3D ratio {r3:.4}"));
    let norma = |sigma: f64| -> Result<f64, Error> {
        let (_, rep) = pa(&data_axi(sigma), 8, 129)?.outer_iterate(&AxiConfig::default())?;
        Ok(rep.norm_v.hypot(rep.norm_w))
    };
    let ra = norma(5e-4)? / norma(1e-3)?;
    c.check((0.45..=0.55).contains(&ra), format!("axisym ratio {ra:.4}"));
    let secs = t.elapsed().as_secs_f64();
    c.check(secs < 120.0, format!("{secs:.2}s"));
    Ok(())
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

fn contraction(c: &mut Checks) -> Result<(), Error> {
    let mut q3 = Vec::new();
    for sigma in [1e-1, 5e-2, 2.5e-2] {
        let (_, rep) = p3(&data3d(sigma), 4, 33)?.picard_iterate(&PicardConfig::default())?;
        q3.push(rep.q);
    }
    let dec3 = q3.windows(2).filter(|w| w[1] < w[0]).count();
    c.check(q3.iter().all(|q| *q < 1.0) && dec3 == 2, format!("Picard q {}, {dec3}/2 decreasing", sci(&q3)));

    let (mut qo, mut qi) = (Vec::new(), Vec::new());
    for sigma in [1.0, 0.5, 0.25] {
        let (_, rep) = pa(&data_axi(sigma), 8, 65)?.outer_iterate(&AxiConfig::default())?;
        qo.push(rep.outer_q);
        qi.push(rep.inner_q);
    }
    for (name, q) in [("outer", &qo), ("inner", &qi)] {
        let dec = q.windows(2).filter(|w| w[1] < w[0]).count();
        c.check(q.iter().all(|v| *v < 1.0) && dec == 2, format!("{name} q {}, {dec}/2 decreasing", sci(q)));
    }
    Ok(())
}

fn residual_convergence(c: &mut Checks) -> Result<(), Error> {
    let t = Instant::now();
    let res3 = |m, n| -> Result<_, Error> {
        let p = p3(&data3d(1e-3), m, n)?;
        let (s, _) = p.picard_iterate(&PicardConfig::default())?;
        p.residual_potential(&s, 2)
    };
    let (a, b) = (res3(2, 17)?, res3(4, 33)?);
    for (name, x, y) in [("eq1", a.eq1_l2, b.eq1_l2), ("eq2", a.eq2_l2, b.eq2_l2)] {
        c.check(x >= 4.0 * y, format!("3D {name} {x:.2e} -> {y:.2e}"));
    }
    let resa = |m, n| -> Result<_, Error> {
        let p = pa(&data_axi(1.0), m, n)?;
        let (st, _) = p.outer_iterate(&AxiConfig::default())?;
        p.residual_axi(&st, 2)
    };
    let (a, b) = (resa(2, 17)?, resa(4, 33)?);
    for (name, x, y) in [
        ("continuity", a.continuity[0], b.continuity[0]),
        ("momentum_r", a.momentum_r[0], b.momentum_r[0]),
        ("momentum_theta", a.momentum_theta[0], b.momentum_theta[0]),
        ("momentum_z", a.momentum_z[0], b.momentum_z[0]),
        ("entropy", a.entropy[0], b.entropy[0]),
        ("poisson", a.poisson[0], b.poisson[0]),
    ] {
        c.check(x >= 4.0 * y, format!("axisym {name} {x:.2e} -> {y:.2e}"));
    }
    let secs = t.elapsed().as_secs_f64();
    c.check(secs < 300.0, format!("{secs:.2}s"));
    Ok(())
}

fn transport_collapse(c: &mut Checks) -> Result<(), Error> {
    let p = pa(&data_axi(1.0), 8, 129)?;
    let (st, rep) = p.outer_iterate(&AxiConfig::default())?;
    let spread = rep.collapse_spread.iter().fold(0.0f64, |a, v| a.max(*v));
    c.check(spread <= 1e-6, format!("spread {spread:.1e}"));
    let res = p.residual_axi(&st, 2)?;
    c.check(res.vorticity_identity <= 1e-6, format!("vorticity identity {:.1e}", res.vorticity_identity));

    let irrot = BoundaryDataAxi {
        u1_en: table(&[(0, 1e-3), (1, 5e-4)]),
        u3_en: table(&[(1, 4e-4)]),
        e_en: table(&[(0, 1e-3)]),
        phi_ex: table(&[(0, 2e-4)]),
        b_star: vec![(0, 0, 1e-3)],
        ..Default::default()
    };
    let p = pa(&irrot, 8, 129)?;
    let (st, _) = p.outer_iterate(&AxiConfig::default())?;
    let w = p.residual_axi(&st, 2)?.omega2_max;
    c.check(w <= 1e-8, format!("irrotational omega2 {w:.1e}"));
    Ok(())
}

/// Largest |f(w+h) - f(w-h)| for even fields at the walls w, sampled on a few offsets.
fn reflection_defect(eval: impl Fn(f64) -> f64, wall: f64) -> f64 {
    [1e-3, 0.05, 0.3].iter().fold(0.0f64, |a, h| a.max((eval(wall + h) - eval(wall - h)).abs()))
}

fn symmetry_and_compatibility(c: &mut Checks) -> Result<(), Error> {
    let p = p3(&data3d(1e-2), 6, 65)?;
    let (s, rep) = p.picard_iterate(&PicardConfig::default())?;
    let odd = rep.odd_energy_fraction[0].max(rep.odd_energy_fraction[1]);
    c.check(odd <= 1e-12, format!("3D odd fraction {odd:.1e}"));
    let theta0 = p.bg.inflow.theta0;
    let mut wall = 0.0f64;
    for node in [0, 20, 64] {
        for col in [s.psi.column(node), s.psi_cap.column(node)] {
            for x in [-0.7, 0.1, 0.45] {
                for side in [-1.0, 1.0] {
                    wall = wall.max(reflection_defect(|t| p.cs.eval_at(&col, t, x, 0, 0), side * theta0));
                    wall = wall.max(reflection_defect(|z| p.cs.eval_at(&col, x * theta0, z, 0, 0), side));
                    wall = wall.max(p.cs.eval_at(&col, side * theta0, x, 1, 0).abs());
                    wall = wall.max(p.cs.eval_at(&col, x * theta0, side, 0, 1).abs());
                }
            }
        }
    }
    c.check(wall <= 1e-12, format!("3D wall defect {wall:.1e}"));

    let even = BoundaryDataAxi {
        u1_en: table(&[(0, 1e-3), (2, 5e-4)]),
        u2_en: table(&[(2, 4e-4)]),
        u3_en: table(&[(2, 3e-4)]),
        k_en: table(&[(2, 2e-4)]),
        s_en: table(&[(0, 1e-3), (2, 1e-3)]),
        ..Default::default()
    };
    let (_, rep) = pa(&even, 8, 65)?.outer_iterate(&AxiConfig::default())?;
    c.check(rep.odd_energy_fraction <= 1e-12, format!("axisym odd fraction {:.1e}", rep.odd_energy_fraction));

    let p = pa(&data_axi(1.0), 8, 65)?;
    let (st, _) = p.outer_iterate(&AxiConfig::default())?;
    c.check(axi_wall_defect(&p, &st) <= 1e-12, format!("axisym wall defect {:.1e}", axi_wall_defect(&p, &st)));
    Ok(())
}

fn axi_wall_defect(p: &AxiProblem, st: &AxisymState) -> f64 {
    let m = p.cs.n_modes() - 1;
    let sb = SineBasis::z(m);
    let mut worst = 0.0f64;
    for i in [0, 20, 64] {
        let u3 = |z: f64| (1..=m).map(|j| st.v2.row(j)[i] * sb.eval(j, z, 0)).sum::<f64>();
        for side in [-1.0, 1.0] {
            // U3 is odd about each wall, the cosine fields even
            worst = worst.max(u3(side).abs());
            for h in [1e-3, 0.05, 0.3] {
                worst = worst.max((u3(side + h) + u3(side - h)).abs());
            }
            for f in [&st.v1, &st.v3, &st.w1, &st.w2, &st.w3] {
                let col = f.column(i);
                worst = worst.max(reflection_defect(|z| p.cs.eval_at(&col, 0.0, z, 0, 0), side));
            }
        }
    }
    worst
}

/// Runs the CLI on oversized axisymmetric data and inspects what it leaves behind.
fn cli_divergence(c: &mut Checks) -> std::io::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("oversized.cfg");
    let text = "[inflow]\ngamma = 3\nb0 = 0.12\nrho0 = 0.11428571428571428\nu0 = 0.35\nr0 = 1\nr1 = 1.02\ntheta0 = 0.5\n\
                [run]\nm = 2\nn_nodes = 17\n[axisym]\nu1_en.0 = 0.1\nu1_en.1 = 0.04\nu2_en.0 = 0.1\ns_en.1 = 0.1\nphi_ex.0 = 0.04\n";
    std::fs::write(&cfg, text)?;
    let out = dir.path().join("out");
    let run = Command::new(env!("CARGO_BIN_EXE_epnozzle")).arg("axisym").arg("--config").arg(&cfg).arg("--out").arg(&out).output()?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json"))?)?;
    c.check(run.status.code() == Some(16), format!("CLI exit {:?}", run.status.code()));
    let history = report["error"]["history"].as_array().map_or(0, |h| h.len());
    c.check(
        report["converged"] == false && history > 0 && !out.join("fields.csv").exists(),
        format!("failure report with {history} history entries, no state file"),
    );
    Ok(())
}

fn guarded_failure(c: &mut Checks) -> Result<(), Error> {
    if let Err(e) = cli_divergence(c) {
        c.check(false, format!("CLI run: {e}"));
    }

    let e = p3(&data3d(100.0), 4, 33)?.picard_iterate(&PicardConfig::default()).unwrap_err();
    c.check(matches!(e, Error::Divergence { .. }) && e.history().is_some_and(|h| !h.is_empty()), "3D divergence with history");
    let e = pa(&data_axi(100.0), 8, 65)?.outer_iterate(&AxiConfig::default()).unwrap_err();
    c.check(matches!(e, Error::Divergence { .. }), "axisym divergence");

    let open3 = PicardConfig { delta_star: f64::INFINITY, ..Default::default() };
    let e = p3(&data3d(100.0), 4, 33)?.picard_iterate(&open3).unwrap_err();
    c.check(matches!(e, Error::Vacuum { .. }), format!("3D vacuum guard ({})", e.kind()));
    let open = AxiConfig { delta1_star: f64::INFINITY, delta2_star: f64::INFINITY, ..Default::default() };
    let e = pa(&data_axi(100.0), 8, 65)?.outer_iterate(&open).unwrap_err();
    c.check(matches!(e, Error::Vacuum { .. }), format!("axisym vacuum guard ({})", e.kind()));
    let slow = BoundaryDataAxi { u1_en: table(&[(0, -0.95 * 0.35 * 2f64.sqrt())]), ..Default::default() };
    let e = pa(&slow, 4, 33)?.outer_iterate(&open).unwrap_err();
    c.check(matches!(e, Error::Stagnation { .. }), format!("stagnation guard ({})", e.kind()));
    Ok(())
}

type Criterion = (&'static str, fn(&mut Checks) -> Result<(), Error>);

fn main() {
    let criteria: [Criterion; 9] = [
        ("background invariants", background_invariants),
        ("multiplier suite", multiplier_suite),
        ("zero-perturbation fixed points", zero_fixed_points),
        ("linear response", linear_response),
        ("contraction", contraction),
        ("full-system residual self-convergence", residual_convergence),
        ("transport collapse", transport_collapse),
        ("symmetry and wall compatibility", symmetry_and_compatibility),
        ("guarded failure", guarded_failure),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let mut c = Checks::default();
        if let Err(e) = run(&mut c) {
            c.check(false, format!("unexpected error: {e}"));
        }
        let verdict = if c.failed.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {} {name}: {verdict} [{}]", k + 1, c.notes.join("; "));
        if !c.failed.is_empty() {
            failures += 1;
            println!("    failed: {}", c.failed.join("; "));
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
