//! Cylindrically symmetric background flow and everything derived from it.
//!
//! The background solves
//!
//! ```text
//! U' = (r U E + c^2 U) / (r (U^2 - c^2)),   E' = rho - b0 - E / r,
//! rho = J0 / (r U),   c^2 = gamma e^{S0} rho^{gamma-1},
//! ```
//!
//! with Phi' = E and Phi(r0) = 0. The potential is integrated as a third
//! component so that it carries the same fourth-order accuracy as (U, E).

use serde::Serialize;

use crate::error::{invalid, Error, Location, Origin, Result};

const MODULE: &str = "background";

/// Constants of the inflow problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InflowData {
    pub gamma: f64,
    pub b0: f64,
    pub rho0: f64,
    pub u0: f64,
    pub s0: f64,
    pub e0: f64,
    pub r0: f64,
    pub r1: f64,
    pub theta0: f64,
}

impl InflowData {
    /// Mass flux r0 rho0 U0.
    pub fn j0(&self) -> f64 {
        self.r0 * self.rho0 * self.u0
    }

    /// Bernoulli constant; Phi vanishes at the entrance.
    pub fn k0(&self) -> f64 {
        let g = self.gamma;
        0.5 * self.u0 * self.u0 + g * self.s0.exp() * self.rho0.powf(g - 1.0) / (g - 1.0)
    }

    pub fn with_r1(&self, r1: f64) -> Self {
        Self { r1, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let o = Origin::new(MODULE, "check_admissibility");
        let finite = [
            self.gamma, self.b0, self.rho0, self.u0, self.s0, self.e0, self.r0, self.r1, self.theta0,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid(o, "non-finite inflow constant"));
        }
        if self.gamma <= 1.0 {
            return Err(invalid(o, format!("gamma = {} must exceed 1", self.gamma)));
        }
        if self.gamma == 2.0 {
            return Err(invalid(o, "gamma = 2 makes the flux bound exponent undefined"));
        }
        if self.rho0 <= 0.0 {
            return Err(invalid(o, format!("rho0 = {} must be positive", self.rho0)));
        }
        if self.u0 <= 0.0 {
            return Err(invalid(o, format!("U0 = {} must be positive", self.u0)));
        }
        if self.b0 <= 0.0 {
            return Err(invalid(o, format!("b0 = {} must be positive", self.b0)));
        }
        if !(self.r0 > 0.0 && self.r1 > self.r0) {
            return Err(invalid(o, format!("need 0 < r0 < r1, got r0 = {}, r1 = {}", self.r0, self.r1)));
        }
        if !(self.theta0 > 0.0 && self.theta0 < std::f64::consts::FRAC_PI_2) {
            return Err(invalid(o, format!("theta0 = {} outside (0, pi/2)", self.theta0)));
        }
        Ok(())
    }
}

/// Closed-form bounds of the admissibility window and the strict checks against them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub j0: f64,
    pub j_sharp: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub flux_ok: bool,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

impl AdmissibilityReport {
    pub fn passes(&self) -> bool {
        self.flux_ok && self.lower_ok && self.upper_ok
    }
}

pub fn check_admissibility(inflow: &InflowData) -> Result<AdmissibilityReport> {
    inflow.validate()?;
    let g = inflow.gamma;
    let a = g * inflow.s0.exp();
    let r0 = inflow.r0;
    let j0 = inflow.j0();
    let j_sharp = (r0.powf(2.0 * (2.0 * g - 1.0)) / (2f64.powf(g + 1.0) * a.powi(3)))
        .powf(1.0 / (2.0 * (g - 2.0)));
    let u_lo = (a * j0.powf(g - 1.0) / r0.powf(g - 1.0)).powf(1.0 / (g + 1.0));
    let u_hi = (2.0 * r0 * j0).cbrt();
    Ok(AdmissibilityReport {
        j0,
        j_sharp,
        u_lo,
        u_hi,
        flux_ok: j0 > 0.0 && j0 < j_sharp,
        lower_ok: u_lo < inflow.u0,
        upper_ok: inflow.u0 < u_hi,
    })
}

/// Tunables of the background integration.
#[derive(Debug, Clone, Copy)]
pub struct BackgroundOptions {
    /// Abort when U^2 - c^2 drops below this multiple of c^2(r0).
    pub sonic_floor: f64,
}

impl Default for BackgroundOptions {
    fn default() -> Self {
        Self { sonic_floor: 1e-6 }
    }
}

/// Radial profiles of the background flow on a uniform grid.
#[derive(Debug, Clone)]
pub struct BackgroundSolution {
    pub inflow: InflowData,
    pub grid_r: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub e_bar: Vec<f64>,
    pub phi_bar: Vec<f64>,
    pub c2_bar: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub k_bar: Vec<f64>,
    /// U' and E' from the right-hand side of the ODE.
    pub u_prime: Vec<f64>,
    pub e_prime: Vec<f64>,
    pub k0: f64,
    pub j0: f64,
}

/// Right-hand side (U', E') of the background system at (r, U, E).
pub fn background_rhs(inflow: &InflowData, r: f64, u: f64, e: f64) -> (f64, f64) {
    let g = inflow.gamma;
    let rho = inflow.j0() / (r * u);
    let c2 = g * inflow.s0.exp() * rho.powf(g - 1.0);
    let du = (r * u * e + c2 * u) / (r * (u * u - c2));
    let de = rho - inflow.b0 - e / r;
    (du, de)
}

pub fn solve_background(inflow: &InflowData, n_nodes: usize) -> Result<BackgroundSolution> {
    solve_background_with(inflow, n_nodes, &BackgroundOptions::default())
}

pub fn solve_background_with(
    inflow: &InflowData,
    n_nodes: usize,
    opts: &BackgroundOptions,
) -> Result<BackgroundSolution> {
    let o = Origin::new(MODULE, "solve_background");
    let adm = check_admissibility(inflow)?;
    if !adm.passes() {
        return Err(Error::Inadmissible {
            origin: o,
            msg: format!(
                "J0 = {} (J# = {}), U0 = {} (window ({}, {}))",
                adm.j0, adm.j_sharp, inflow.u0, adm.u_lo, adm.u_hi
            ),
        });
    }
    if n_nodes < 16 {
        return Err(invalid(o, format!("n_nodes = {n_nodes} below the minimum of 16")));
    }
    let (r0, r1) = (inflow.r0, inflow.r1);
    let h = (r1 - r0) / (n_nodes - 1) as f64;
    if !(h > 1e-13 * r0) {
        return Err(Error::StepUnderflow { origin: o, h });
    }
    let g = inflow.gamma;
    let es = inflow.s0.exp();
    let j0 = inflow.j0();
    let c2_of = |r: f64, u: f64| g * es * (j0 / (r * u)).powf(g - 1.0);
    let floor = opts.sonic_floor * c2_of(r0, inflow.u0);

    let f = |r: f64, y: [f64; 3]| -> [f64; 3] {
        let (du, de) = background_rhs(inflow, r, y[0], y[1]);
        [du, de, y[1]]
    };
    let mut y = [inflow.u0, inflow.e0, 0.0];
    let mut states = Vec::with_capacity(n_nodes);
    states.push(y);
    let mut grid = Vec::with_capacity(n_nodes);
    grid.push(r0);
    for k in 0..n_nodes - 1 {
        let r = r0 + h * k as f64;
        let k1 = f(r, y);
        let k2 = f(r + 0.5 * h, add(y, k1, 0.5 * h));
        let k3 = f(r + 0.5 * h, add(y, k2, 0.5 * h));
        let k4 = f(r + h, add(y, k3, h));
        for q in 0..3 {
            y[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
        }
        let rn = if k + 2 == n_nodes { r1 } else { r0 + h * (k + 1) as f64 };
        let margin = y[0] * y[0] - c2_of(rn, y[0]);
        if !y.iter().all(|v| v.is_finite()) || !(y[0] > 0.0) || !(margin >= floor) {
            return Err(Error::SonicDegeneration { origin: o, at: Location::radial(rn), margin });
        }
        states.push(y);
        grid.push(rn);
    }

    let k0 = inflow.k0();
    let n = n_nodes;
    let mut sol = BackgroundSolution {
        inflow: *inflow,
        grid_r: grid,
        rho_bar: Vec::with_capacity(n),
        u_bar: Vec::with_capacity(n),
        e_bar: Vec::with_capacity(n),
        phi_bar: Vec::with_capacity(n),
        c2_bar: Vec::with_capacity(n),
        p_bar: Vec::with_capacity(n),
        k_bar: Vec::with_capacity(n),
        u_prime: Vec::with_capacity(n),
        e_prime: Vec::with_capacity(n),
        k0,
        j0,
    };
    for (r, s) in sol.grid_r.iter().zip(&states) {
        let (u, e, phi) = (s[0], s[1], s[2]);
        let rho = j0 / (r * u);
        let c2 = c2_of(*r, u);
        let (du, de) = background_rhs(inflow, *r, u, e);
        sol.rho_bar.push(rho);
        sol.u_bar.push(u);
        sol.e_bar.push(e);
        sol.phi_bar.push(phi);
        sol.c2_bar.push(c2);
        sol.p_bar.push(es * rho.powf(g));
        sol.k_bar.push(0.5 * u * u + c2 / (g - 1.0) - phi);
        sol.u_prime.push(du);
        sol.e_prime.push(de);
    }
    Ok(sol)
}

fn add(y: [f64; 3], k: [f64; 3], s: f64) -> [f64; 3] {
    [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]]
}

impl BackgroundSolution {
    pub fn len(&self) -> usize {
        self.grid_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_r.is_empty()
    }

    /// Re-solve on a grid with `factor` times as many intervals; old nodes are kept.
    pub fn refined(&self, factor: usize) -> Result<BackgroundSolution> {
        solve_background(&self.inflow, (self.len() - 1) * factor + 1)
    }

    /// max |r rho U - J0| / J0 over the nodes.
    pub fn mass_flux_defect(&self) -> f64 {
        self.grid_r
            .iter()
            .zip(self.rho_bar.iter().zip(&self.u_bar))
            .map(|(r, (rho, u))| (r * rho * u - self.j0).abs() / self.j0)
            .fold(0.0, f64::max)
    }

    /// max |K - K0| / |K0| over the nodes.
    pub fn bernoulli_defect(&self) -> f64 {
        self.k_bar.iter().map(|k| (k - self.k0).abs() / self.k0.abs()).fold(0.0, f64::max)
    }

    /// min over nodes of U^2 - c^2.
    pub fn supersonic_margin(&self) -> f64 {
        self.u_bar
            .iter()
            .zip(&self.c2_bar)
            .map(|(u, c2)| u * u - c2)
            .fold(f64::INFINITY, f64::min)
    }

    /// Bernoulli form of the sound speed, (gamma-1)(K0 + Phi - U^2/2).
    ///
    /// Perturbation solvers evaluate the background through this form so that a
    /// zero perturbation reproduces their own closure exactly.
    pub fn c2_bernoulli(&self, i: usize) -> f64 {
        (self.inflow.gamma - 1.0) * (self.k0 + self.phi_bar[i] - 0.5 * self.u_bar[i] * self.u_bar[i])
    }

    pub fn phi_exit(&self) -> f64 {
        self.phi_bar[self.len() - 1]
    }
}

/// Background coefficients of the linearized perturbation operators.
#[derive(Debug, Clone)]
pub struct LinearCoeffs {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub b3: Vec<f64>,
    pub a11: Vec<f64>,
    pub a22: Vec<f64>,
    pub a33: Vec<f64>,
    /// Axisymmetric naming: B11 = A11, B22 = A33, B12 = 0.
    pub b11: Vec<f64>,
    pub b22: Vec<f64>,
    pub b12: Vec<f64>,
    pub a11_prime: Vec<f64>,
    pub a22_prime: Vec<f64>,
    pub a33_prime: Vec<f64>,
    /// min over the grid of b3 - 1/(2 r^2), and where it is attained.
    pub xi: f64,
    pub xi_at: f64,
    pub mu_bar: f64,
}

pub fn eval_linear_coeffs(bg: &BackgroundSolution) -> Result<LinearCoeffs> {
    let c = raw_coeffs(bg);
    if c.xi <= 0.0 {
        return Err(Error::NozzleTooLong {
            origin: Origin::new(MODULE, "eval_linear_coeffs"),
            xi: c.xi,
            at: Location::radial(c.xi_at),
        });
    }
    Ok(c)
}

fn raw_coeffs(bg: &BackgroundSolution) -> LinearCoeffs {
    let g = bg.inflow.gamma;
    let n = bg.len();
    let mut c = LinearCoeffs {
        a1: vec![0.0; n],
        a2: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        b3: vec![0.0; n],
        a11: vec![0.0; n],
        a22: vec![0.0; n],
        a33: vec![0.0; n],
        b11: vec![0.0; n],
        b22: vec![0.0; n],
        b12: vec![0.0; n],
        a11_prime: vec![0.0; n],
        a22_prime: vec![0.0; n],
        a33_prime: vec![0.0; n],
        xi: f64::INFINITY,
        xi_at: bg.grid_r[0],
        mu_bar: 0.0,
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let r = bg.grid_r[i];
        let (u, e, rho, c2, up) = (bg.u_bar[i], bg.e_bar[i], bg.rho_bar[i], bg.c2_bar[i], bg.u_prime[i]);
        let rho_p = rho * (-1.0 / r - up / u);
        let c2_p = (g - 1.0) * c2 * rho_p / rho;
        c.a1[i] = (c2 - (g - 1.0) * u * u) / r - (g + 1.0) * u * up + e;
        c.a2[i] = rho * u / c2;
        c.b1[i] = u;
        c.b2[i] = (g - 1.0) * (up + u / r);
        c.b3[i] = rho / c2;
        c.a11[i] = c2 - u * u;
        c.a22[i] = c2 / (r * r);
        c.a33[i] = c2;
        c.b11[i] = c.a11[i];
        c.b22[i] = c2;
        c.a11_prime[i] = c2_p - 2.0 * u * up;
        c.a22_prime[i] = c2_p / (r * r) - 2.0 * c2 / (r * r * r);
        c.a33_prime[i] = c2_p;
        let x = c.b3[i] - 0.5 / (r * r);
        if x < c.xi {
            c.xi = x;
            c.xi_at = r;
        }
        for v in [-c.a11[i], c.a22[i], c.a33[i]] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    c.mu_bar = lo.min(1.0 / hi).min(1.0 - f64::EPSILON);
    c
}

/// Closed-form solution of the constant-coefficient Riccati equation
/// -Z' - a2 Z^2 + 2 a1 Z - a0 = lambda0 on [r0, r0 + len].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiccatiProfile {
    pub r0: f64,
    pub len: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub lambda0: f64,
    /// sqrt(D) for the trigonometric branch, 0 for the constant branch.
    pub sqrt_d: f64,
    /// Phase of the cotangent, or the constant value when sqrt_d = 0.
    pub phase: f64,
}

impl RiccatiProfile {
    /// Build the profile for a given margin, or None if Z cannot stay positive and finite.
    pub fn new(r0: f64, len: f64, a: [f64; 3], lambda0: f64) -> Option<Self> {
        let [a0, a1, a2] = a;
        let d = a2 * (a0 + lambda0) - a1 * a1;
        if d <= 0.0 {
            let z = (a1 + (-d).sqrt()) / a2;
            if !(z > 0.0) {
                return None;
            }
            return Some(Self { r0, len, a0, a1, a2, lambda0, sqrt_d: 0.0, phase: z });
        }
        let sd = d.sqrt();
        // arccot(-a1/sd) in (0, pi)
        let window = 1f64.atan2(-a1 / sd);
        let spare = window - sd * len;
        if !(spare > 0.0) {
            return None;
        }
        Some(Self { r0, len, a0, a1, a2, lambda0, sqrt_d: sd, phase: 0.5 * spare })
    }

    /// (Z, Z') at r.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        if self.sqrt_d == 0.0 {
            return (self.phase, 0.0);
        }
        let sd = self.sqrt_d;
        let y = sd / self.a2 / (sd * (r - self.r0) + self.phase).tan();
        let z = self.a1 / self.a2 + y;
        let zp = -sd * sd / self.a2 - self.a2 * y * y;
        (z, zp)
    }

    pub fn residual(&self, z: f64, zp: f64) -> f64 {
        -zp - self.a2 * z * z + 2.0 * self.a1 * z - self.a0 - self.lambda0
    }
}

/// Energy multiplier Z and the margins it achieves.
#[derive(Debug, Clone, Serialize)]
pub struct MultiplierSolution {
    pub grid_r: Vec<f64>,
    pub z: Vec<f64>,
    pub z_prime: Vec<f64>,
    pub lambda0: f64,
    pub a_frak: [f64; 3],
    pub a1_parts: [f64; 3],
    pub xi: f64,
    pub mu_bar: f64,
    /// min Z, then the minima of conditions (ii), (iii), (iv) over the grid.
    pub condition_margins: [f64; 4],
    pub profile: RiccatiProfile,
}

/// The three multiplier constants and the components of the middle one.
pub fn multiplier_constants(coeffs: &LinearCoeffs) -> ([f64; 3], [f64; 3]) {
    let (mu, xi) = (coeffs.mu_bar, coeffs.xi);
    let n = coeffs.a1.len();
    let mut a0 = f64::NEG_INFINITY;
    let mut a2 = f64::NEG_INFINITY;
    let mut parts = [f64::INFINITY; 3];
    for i in 0..n {
        a0 = a0.max(4.0 * coeffs.a2[i].powi(2) / (mu * xi));
        a2 = a2.max(4.0 / mu * (coeffs.b1[i].powi(2) + coeffs.b2[i].powi(2) / xi));
        parts[0] = parts[0].min(-(0.5 * coeffs.a11_prime[i] - coeffs.a1[i]) / coeffs.a11[i]);
        parts[1] = parts[1].min(-coeffs.a22_prime[i] / (2.0 * coeffs.a22[i]));
        parts[2] = parts[2].min(-coeffs.a33_prime[i] / (2.0 * coeffs.a33[i]));
    }
    let a1 = parts[0].min(parts[1]).min(parts[2]);
    ([a0, a1, a2], parts)
}

/// Left sides of conditions (ii)-(iv) at node i for multiplier values (Z, Z').
pub fn multiplier_conditions(coeffs: &LinearCoeffs, i: usize, z: f64, zp: f64) -> [f64; 3] {
    let xi = coeffs.xi;
    let f = 2.0 * (coeffs.b1[i].powi(2) + coeffs.b2[i].powi(2) / xi) * z * z
        + 2.0 * coeffs.a2[i].powi(2) / xi;
    [
        0.5 * (zp * coeffs.a11[i] + z * coeffs.a11_prime[i]) - coeffs.a1[i] * z - f,
        -0.5 * (zp * coeffs.a22[i] + z * coeffs.a22_prime[i]),
        -0.5 * (zp * coeffs.a33[i] + z * coeffs.a33_prime[i]),
    ]
}

fn margins(bg: &BackgroundSolution, coeffs: &LinearCoeffs, p: &RiccatiProfile) -> ([f64; 4], Vec<f64>, Vec<f64>) {
    let mut m = [f64::INFINITY; 4];
    let mut zs = Vec::with_capacity(bg.len());
    let mut zps = Vec::with_capacity(bg.len());
    for (i, r) in bg.grid_r.iter().enumerate() {
        let (z, zp) = p.eval(*r);
        let c = multiplier_conditions(coeffs, i, z, zp);
        m[0] = m[0].min(z);
        for q in 0..3 {
            m[q + 1] = m[q + 1].min(c[q]);
        }
        zs.push(z);
        zps.push(zp);
    }
    (m, zs, zps)
}

fn feasible(m: &[f64; 4], lambda0: f64) -> bool {
    m[0] > 0.0 && m[1..].iter().all(|v| *v >= lambda0) && m.iter().all(|v| v.is_finite())
}

/// Multiplier for a requested margin; fails if that margin is not achievable.
pub fn multiplier_at(bg: &BackgroundSolution, coeffs: &LinearCoeffs, lambda0: f64) -> Result<MultiplierSolution> {
    let o = Origin::new(MODULE, "solve_multiplier");
    if coeffs.xi <= 0.0 {
        return Err(Error::MultiplierFailure { origin: o, msg: format!("xi = {:e} is not positive", coeffs.xi) });
    }
    if !(lambda0 > 0.0) {
        return Err(Error::MultiplierFailure { origin: o, msg: format!("lambda0 = {lambda0:e} must be positive") });
    }
    let (a, parts) = multiplier_constants(coeffs);
    let r0 = bg.grid_r[0];
    let len = bg.grid_r[bg.len() - 1] - r0;
    let p = RiccatiProfile::new(r0, len, a, lambda0).ok_or_else(|| Error::MultiplierFailure {
        origin: o,
        msg: format!("no positive Riccati solution on [r0, r1] for lambda0 = {lambda0:e}"),
    })?;
    let (m, z, z_prime) = margins(bg, coeffs, &p);
    if !feasible(&m, lambda0) {
        return Err(Error::MultiplierFailure {
            origin: o,
            msg: format!("conditions fail for lambda0 = {lambda0:e}: margins {m:?}"),
        });
    }
    Ok(MultiplierSolution {
        grid_r: bg.grid_r.clone(),
        z,
        z_prime,
        lambda0,
        a_frak: a,
        a1_parts: parts,
        xi: coeffs.xi,
        mu_bar: coeffs.mu_bar,
        condition_margins: m,
        profile: p,
    })
}

/// Largest margin lambda0 found by bisection on [0, 10 max(a0, 1)].
pub fn solve_multiplier(bg: &BackgroundSolution, coeffs: &LinearCoeffs) -> Result<MultiplierSolution> {
    let o = Origin::new(MODULE, "solve_multiplier");
    if coeffs.xi <= 0.0 {
        return Err(Error::MultiplierFailure { origin: o, msg: format!("xi = {:e} is not positive", coeffs.xi) });
    }
    let (a, _) = multiplier_constants(coeffs);
    let r0 = bg.grid_r[0];
    let len = bg.grid_r[bg.len() - 1] - r0;
    let ok = |lam: f64| {
        RiccatiProfile::new(r0, len, a, lam)
            .map(|p| feasible(&margins(bg, coeffs, &p).0, lam))
            .unwrap_or(false)
    };
    let (mut lo, mut hi) = (0.0, 10.0 * a[0].max(1.0));
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::MultiplierFailure {
            origin: o,
            msg: format!("no lambda0 > 0 admits a positive multiplier on [{}, {}]", r0, r0 + len),
        });
    }
    multiplier_at(bg, coeffs, lo)
}
