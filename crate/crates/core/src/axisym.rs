//! Axisymmetric flow with swirl, entropy and Bernoulli variations.
//!
//! The perturbation is split into V = (U1 − Ū, U3, Φ − Φ̄), solved from a
//! first-order deformation-curl system plus a Poisson equation, and
//! W = (U2, K − K0, S − S0), carried along streamlines of the mass flux.
//!
//! For frozen W the V-system is
//!
//! ```text
//! B11 ∂r V1 + B12 (∂r V2 + ∂z V1) + B22 ∂z V2 + ā1 V1 + b̄1 ∂r V3 + b̄2 V3 = G1
//! ∂r V2 − ∂z V1 = G2
//! ΔV3 + ā2 V1 − b̄3 V3 = G3
//! ```
//!
//! with B11 = c² − U1², B12 = −U1 U3, B22 = c² − U3². G1 collects everything
//! else of the expanded continuity equation
//!
//! ```text
//! (c²−U1²)∂rU1 + (c²−U3²)∂zU3 − U1U3(∂rU3+∂zU1) + (U·∇)Φ + c²U1/r
//!     = U2 (U·∇)U2 − (U·∇)K + c²/(γ−1) (U·∇)S,
//! ```
//!
//! minus its value at the background, so that G1 vanishes for V = W = 0.
//! The curl part is removed by φ1 (∂rr φ1 + ∂zz φ1 = G2, Neumann in r,
//! Dirichlet in z); what remains is a gradient Q = ∇ψ solved by the shared
//! modal engine.
//!
//! Discretization in z: cosine modes for V1, V3, W, ψ, Ψ; sine modes
//! sin(jπz), j ≥ 1, for V2, φ1, G2 and the entrance U3.

use rayon::prelude::*;
use serde::Serialize;

use crate::background::{eval_linear_coeffs, BackgroundSolution, InflowData, LinearCoeffs};
use crate::error::{invalid, Error, Location, Origin, Result};
use crate::galerkin::{h1_norm, h4_proxy_norm, BvpOptions, ModalSystem, PrincipalPerturbation, RadialCoeffs};
use crate::linalg::{BandedLu, RadialGrid};
use crate::spectral::{CosineBasis, CrossSection, ModalField, ModalTable, Quadrature1D, SineBasis};

const MODULE: &str = "axisym";

/// Boundary data as deviations from the background.
///
/// Tables hold axial coefficients `(0, j, value)`. `u3_en` uses the sine
/// family (j ≥ 1), all others the cosine family. `b_star` entries
/// `(j, p, c)` add `c (r − r0)^p β_j(z)` to b* − b0.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundaryDataAxi {
    pub b_star: Vec<(usize, usize, f64)>,
    pub u1_en: ModalTable,
    pub u2_en: ModalTable,
    pub u3_en: ModalTable,
    pub k_en: ModalTable,
    pub s_en: ModalTable,
    pub e_en: ModalTable,
    pub phi_ex: ModalTable,
}

fn cos_weight(j: usize, order: i32) -> f64 {
    let b = CosineBasis::z(j);
    b.sup(j) * (1.0 + b.wavenumber(j)).powi(order)
}

fn axial_norm(t: &ModalTable, order: i32, sine: bool) -> f64 {
    t.entries
        .iter()
        .map(|&(_, j, v)| {
            let w = if sine { (1.0 + j as f64 * std::f64::consts::PI).powi(order) } else { cos_weight(j, order) };
            v.abs() * w
        })
        .sum()
}

impl BoundaryDataAxi {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            b_star: self.b_star.iter().map(|&(j, p, v)| (j, p, a * v)).collect(),
            u1_en: self.u1_en.scaled(a),
            u2_en: self.u2_en.scaled(a),
            u3_en: self.u3_en.scaled(a),
            k_en: self.k_en.scaled(a),
            s_en: self.s_en.scaled(a),
            e_en: self.e_en.scaled(a),
            phi_ex: self.phi_ex.scaled(a),
        }
    }

    /// Weighted modal size: C² for b*, C³ for U1, U3 and E, C⁴ for U2, K, S and Φ.
    pub fn sigma(&self, inflow: &InflowData) -> f64 {
        let len = inflow.r1 - inflow.r0;
        let b: f64 = self
            .b_star
            .iter()
            .map(|&(j, p, v)| {
                let pf = p as f64;
                let mut radial = len.powi(p as i32);
                if p >= 1 {
                    radial += pf * len.powi(p as i32 - 1);
                }
                if p >= 2 {
                    radial += pf * (pf - 1.0) * len.powi(p as i32 - 2);
                }
                v.abs() * radial * cos_weight(j, 2)
            })
            .sum();
        b + axial_norm(&self.u1_en, 3, false)
            + axial_norm(&self.u3_en, 3, true)
            + axial_norm(&self.e_en, 3, false)
            + axial_norm(&self.u2_en, 4, false)
            + axial_norm(&self.k_en, 4, false)
            + axial_norm(&self.s_en, 4, false)
            + axial_norm(&self.phi_ex, 4, false)
    }

    /// Size of the transported data alone (U2, K, S).
    pub fn transport_size(&self) -> f64 {
        axial_norm(&self.u2_en, 4, false) + axial_norm(&self.k_en, 4, false) + axial_norm(&self.s_en, 4, false)
    }
}

/// Sampled sine family sin(jπz) on the axial nodes; row 0 is identically zero.
#[derive(Debug, Clone)]
pub struct SineTable {
    pub n_modes: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    d: [Vec<f64>; 3],
}

impl SineTable {
    fn new(m: usize, rule: &Quadrature1D) -> Self {
        let b = SineBasis::z(m);
        let nq = rule.nodes.len();
        let mut d = [vec![0.0; (m + 1) * nq], vec![0.0; (m + 1) * nq], vec![0.0; (m + 1) * nq]];
        for j in 1..=m {
            for (q, z) in rule.nodes.iter().enumerate() {
                for (o, dd) in d.iter_mut().enumerate() {
                    dd[j * nq + q] = b.eval(j, *z, o);
                }
            }
        }
        Self { n_modes: m + 1, nodes: rule.nodes.clone(), weights: rule.weights.clone(), d }
    }

    pub fn synthesize(&self, coeffs: &[f64], order: usize, out: &mut [f64]) {
        let nq = self.nodes.len();
        out.fill(0.0);
        for (j, c) in coeffs.iter().enumerate().skip(1) {
            if *c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&self.d[order][j * nq..(j + 1) * nq]) {
                *o += c * v;
            }
        }
    }

    pub fn project(&self, grid: &[f64], out: &mut [f64]) {
        let nq = self.nodes.len();
        out[0] = 0.0;
        for (j, o) in out.iter_mut().enumerate().skip(1) {
            let row = &self.d[0][j * nq..(j + 1) * nq];
            *o = (0..nq).map(|q| self.weights[q] * row[q] * grid[q]).sum();
        }
    }
}

/// Streamline potential of the meridional mass flux.
#[derive(Debug, Clone, Serialize)]
pub struct StreamFunction {
    /// 𝓛 at the grid nodes, `l[i * n_z + q]`.
    pub l: Vec<f64>,
    pub n_z: usize,
    /// Cosine coefficients of r0 ρ U1 at the entrance; 𝓛(r0, ·) is their antiderivative.
    pub entrance: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    /// max |𝓛 by the z-integral at r − 𝓛| over the grid.
    pub path_defect: f64,
    /// max over r of |𝓛(r, ±1) − 𝓛(r0, ±1)|.
    pub wall_defect: f64,
}

impl StreamFunction {
    /// 𝓛(r0, z) and its z-derivative.
    pub fn entrance_value(&self, z: f64) -> (f64, f64) {
        antiderivative(&self.entrance, z)
    }

    /// z at the entrance with 𝓛(r0, z) = value; safeguarded Newton iteration.
    pub fn inverse(&self, value: f64) -> f64 {
        if value <= self.lo {
            return -1.0;
        }
        if value >= self.hi {
            return 1.0;
        }
        let (mut a, mut b) = (-1.0f64, 1.0f64);
        let mut z = -1.0 + 2.0 * (value - self.lo) / (self.hi - self.lo);
        for _ in 0..100 {
            let (f, df) = self.entrance_value(z);
            let g = f - value;
            if g < 0.0 {
                a = z;
            } else {
                b = z;
            }
            let mut next = z - g / df;
            if !(next > a && next < b) || df <= 0.0 {
                next = 0.5 * (a + b);
            }
            if (next - z).abs() <= 1e-15 {
                return next;
            }
            z = next;
        }
        z
    }
}

/// Antiderivative from −1 of a cosine series and the series itself.
fn antiderivative(c: &[f64], z: f64) -> (f64, f64) {
    let b = CosineBasis::z(c.len() - 1);
    let mut f = c[0] * (z + 1.0) * b.eval(0, 0.0, 0);
    let mut df = c[0] * b.eval(0, 0.0, 0);
    for (j, cj) in c.iter().enumerate().skip(1) {
        let k = j as f64 * std::f64::consts::PI;
        f += cj * (k * z).sin() / k;
        df += cj * (k * z).cos();
    }
    (f, df)
}

/// Iterate of the two-layer fixed point. V2 is stored in sine coefficients.
#[derive(Debug, Clone)]
pub struct AxisymState {
    pub v1: ModalField,
    pub v2: ModalField,
    pub v3: ModalField,
    pub w1: ModalField,
    pub w2: ModalField,
    pub w3: ModalField,
    pub stream: Option<StreamFunction>,
}

/// Loop controls for both layers.
#[derive(Debug, Clone, Copy)]
pub struct AxiConfig {
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Ball radius for W in the H⁴ proxy norm.
    pub delta1_star: f64,
    /// Ball radius for V in the H⁴ proxy norm.
    pub delta2_star: f64,
    pub damping: f64,
    /// Stagnation floor as a fraction of U0.
    pub u1_floor: f64,
    /// Allowed excursion of 𝓛 outside the entrance range, relative to J0.
    pub range_tol: f64,
    pub bvp: BvpOptions,
}

impl Default for AxiConfig {
    fn default() -> Self {
        Self {
            tol_inner: 1e-10,
            tol_outer: 1e-10,
            max_inner: 50,
            max_outer: 30,
            delta1_star: 1.0,
            delta2_star: 1.0,
            damping: 1.0,
            u1_floor: 0.1,
            range_tol: 1e-8,
            bvp: BvpOptions::default(),
        }
    }
}

/// History of one inner solve.
#[derive(Debug, Clone, Serialize)]
pub struct InnerReport {
    pub history: Vec<f64>,
    pub ratios: Vec<f64>,
    pub q: f64,
}

/// Outcome of a converged two-layer run.
#[derive(Debug, Clone, Serialize)]
pub struct AxiReport {
    pub outer_iterations: usize,
    pub outer_history: Vec<f64>,
    pub outer_ratios: Vec<f64>,
    pub outer_q: f64,
    pub inner: Vec<InnerReport>,
    pub inner_q: f64,
    pub kappa: f64,
    pub kappa_background: f64,
    /// max |W − f(𝓛)| for (r W1 / r0, W2, W3), f read off the entrance.
    pub collapse_spread: [f64; 3],
    pub wall_defect: f64,
    pub path_defect: f64,
    pub norm_v: f64,
    pub norm_w: f64,
    /// Share of the state energy carried by odd axial modes.
    pub odd_energy_fraction: f64,
    pub sigma: f64,
}

/// Residual norms of the full axisymmetric system.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AxiResidual {
    pub continuity: [f64; 2],
    pub momentum_r: [f64; 2],
    pub momentum_theta: [f64; 2],
    pub momentum_z: [f64; 2],
    pub entropy: [f64; 2],
    pub bernoulli: [f64; 2],
    pub poisson: [f64; 2],
    /// L² norm of U1(∂rU3 − ∂zU1) − (U2∂zU2 + e^S ρ^{γ−1}∂zS/(γ−1) − ∂zK).
    pub vorticity_identity: f64,
    pub omega2_max: f64,
    pub n_r: usize,
    pub n_z: usize,
}

impl AxiResidual {
    /// Largest L² norm over the six equations.
    pub fn max_l2(&self) -> f64 {
        [self.continuity, self.momentum_r, self.momentum_theta, self.momentum_z, self.entropy, self.poisson]
            .iter()
            .map(|v| v[0])
            .fold(0.0, f64::max)
    }
}

/// Pointwise perturbation values and first derivatives.
#[derive(Debug, Clone, Copy, Default)]
struct PointIn {
    v: [f64; 3],
    vr: [f64; 3],
    vz: [f64; 3],
    w: [f64; 3],
    wr: [f64; 3],
    wz: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct PointOut {
    u1: f64,
    u3: f64,
    h: f64,
    c2: f64,
    rho: f64,
    b11: f64,
    b12: f64,
    b22: f64,
    lower: f64,
    g2: f64,
}

/// Node samples for every state field: value, ∂r, ∂z, on the axial nodes.
struct Samples {
    p: Vec<PointIn>,
}

/// Axisymmetric problem at fixed resolution (m axial modes, n_nodes radial).
#[derive(Debug, Clone)]
pub struct AxiProblem {
    pub bg: BackgroundSolution,
    pub lin: LinearCoeffs,
    pub cs: CrossSection,
    pub sine: SineTable,
    pub grid: RadialGrid,
    pub data: BoundaryDataAxi,
    pub lift: ModalField,
    e_dev: Vec<f64>,
    phi_dev: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    u3: Vec<f64>,
    k: Vec<f64>,
    s: Vec<f64>,
    b_star: ModalField,
}

impl AxiProblem {
    /// Axial trapezoid rule with 2m + 2 nodes.
    pub fn new(bg: &BackgroundSolution, data: &BoundaryDataAxi, m: usize) -> Result<Self> {
        Self::with_nodes(bg, data, m, 2 * m + 2)
    }

    pub fn with_nodes(bg: &BackgroundSolution, data: &BoundaryDataAxi, m: usize, n_z: usize) -> Result<Self> {
        let o = Origin::new(MODULE, "new");
        if m == 0 {
            return Err(invalid(o, "at least one axial mode beyond the constant is required"));
        }
        if data.u3_en.entries.iter().any(|e| e.1 == 0 && e.2 != 0.0) {
            return Err(invalid(o, "u3_en uses sin(j pi z), j >= 1"));
        }
        for t in [&data.u1_en, &data.u2_en, &data.u3_en, &data.k_en, &data.s_en, &data.e_en, &data.phi_ex] {
            if t.entries.iter().any(|e| e.0 != 0) {
                return Err(invalid(o, "axisymmetric tables carry no angular index"));
            }
        }
        let lin = eval_linear_coeffs(bg)?;
        let cs = CrossSection::axisymmetric(m, n_z);
        let rule = Quadrature1D::trapezoid(n_z, -1.0, 1.0);
        let sine = SineTable::new(m, &rule);
        let grid = RadialGrid::from_nodes(bg.grid_r.clone());
        let n = grid.len();
        let dense = |t: &ModalTable| t.dense(&cs);
        let (e_dev, phi_dev) = (dense(&data.e_en), dense(&data.phi_ex));
        let r1 = grid.r1();
        let mut lift = ModalField::for_section(&cs, n);
        let mut b_star = ModalField::for_section(&cs, n);
        for i in 0..n {
            let r = grid.r[i];
            let col: Vec<f64> = (0..=m).map(|j| (r - r1) * e_dev[j] + phi_dev[j]).collect();
            lift.set_column(i, &col);
            let mut b = vec![0.0; m + 1];
            for &(j, p, v) in &data.b_star {
                if j <= m {
                    b[j] += v * (r - grid.r0()).powi(p as i32);
                }
            }
            b_star.set_column(i, &b);
        }
        let u1 = dense(&data.u1_en);
        let mut g = vec![0.0; n_z];
        cs.synthesize(&u1, 0, 0, &mut g);
        for (q, v) in g.iter().enumerate() {
            if bg.inflow.u0 + v <= 0.0 {
                return Err(invalid(o, format!("entrance velocity {} <= 0 at z={}", bg.inflow.u0 + v, cs.z.nodes[q])));
            }
        }
        Ok(Self {
            bg: bg.clone(),
            lin,
            u2: dense(&data.u2_en),
            u3: dense(&data.u3_en),
            k: dense(&data.k_en),
            s: dense(&data.s_en),
            u1,
            cs,
            sine,
            grid,
            data: data.clone(),
            lift,
            e_dev,
            phi_dev,
            b_star,
        })
    }

    pub fn n_z(&self) -> usize {
        self.cs.n_points()
    }

    pub fn zero_state(&self) -> AxisymState {
        let n = self.grid.len();
        let z = || ModalField::for_section(&self.cs, n);
        AxisymState { v1: z(), v2: z(), v3: z(), w1: z(), w2: z(), w3: z(), stream: None }
    }

    fn rderiv(&self, f: &ModalField) -> ModalField {
        let mut out = f.clone();
        for k in 0..f.n_modes() {
            let d = self.grid.deriv1(f.row(k));
            out.row_mut(k).copy_from_slice(&d);
        }
        out
    }

    fn cos_synth(&self, c: &[f64], dz: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_z()];
        self.cs.synthesize(c, 0, dz, &mut out);
        out
    }

    fn sin_synth(&self, c: &[f64], dz: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_z()];
        self.sine.synthesize(c, dz, &mut out);
        out
    }

    fn cos_project(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cs.n_modes()];
        self.cs.project(g, &mut out);
        out
    }

    fn samples(&self, i: usize, st: &AxisymState, d: &[ModalField; 6]) -> Samples {
        let nz = self.n_z();
        let fields = [&st.v1, &st.v2, &st.v3, &st.w1, &st.w2, &st.w3];
        let mut p = vec![PointIn::default(); nz];
        for (f, (field, dr)) in fields.iter().zip(d.iter()).enumerate() {
            let sine = f == 1;
            let c = field.column(i);
            let cr = dr.column(i);
            let (val, zd, rd) = if sine {
                (self.sin_synth(&c, 0), self.sin_synth(&c, 1), self.sin_synth(&cr, 0))
            } else {
                (self.cos_synth(&c, 0), self.cos_synth(&c, 1), self.cos_synth(&cr, 0))
            };
            for q in 0..nz {
                if f < 3 {
                    p[q].v[f] = val[q];
                    p[q].vr[f] = rd[q];
                    p[q].vz[f] = zd[q];
                } else {
                    p[q].w[f - 3] = val[q];
                    p[q].wr[f - 3] = rd[q];
                    p[q].wz[f - 3] = zd[q];
                }
            }
        }
        Samples { p }
    }

    fn closure_h(&self, i: usize, u1: f64, u2: f64, u3: f64, v3: f64, w2: f64) -> f64 {
        self.bg.k0 + w2 + self.bg.phi_bar[i] + v3 - 0.5 * (u1 * u1 + u2 * u2 + u3 * u3)
    }

    fn density(&self, c2: f64, w3: f64) -> f64 {
        let g = self.bg.inflow.gamma;
        (c2 / (g * (self.bg.inflow.s0 + w3).exp())).powf(1.0 / (g - 1.0))
    }

    fn point(&self, i: usize, p: &PointIn) -> PointOut {
        let g = self.bg.inflow.gamma;
        let r = self.grid.r[i];
        let u1 = self.bg.u_bar[i] + p.v[0];
        let u2 = p.w[0];
        let u3 = p.v[1];
        let h = self.closure_h(i, u1, u2, u3, p.v[2], p.w[1]);
        let c2 = (g - 1.0) * h;
        let rho = self.density(c2, p.w[2]);
        let b11 = c2 - u1 * u1;
        let b22 = c2 - u3 * u3;
        let b12 = -u1 * u3;
        let adv = |fr: f64, fz: f64| u1 * fr + u3 * fz;
        let rhs = u2 * adv(p.wr[0], p.wz[0]) - adv(p.wr[1], p.wz[1]) + c2 / (g - 1.0) * adv(p.wr[2], p.wz[2]);
        let lower = b11 * self.bg.u_prime[i] + u1 * (self.bg.e_bar[i] + p.vr[2]) + u3 * p.vz[2] + c2 * u1 / r - rhs;
        // e^S rho^(gamma-1) = c^2 / gamma
        let g2 = (u2 * p.wz[0] + c2 / g * p.wz[2] / (g - 1.0) - p.wz[1]) / u1;
        PointOut { u1, u3, h, c2, rho, b11, b12, b22, lower, g2 }
    }

    /// Grid density ρ = 𝓗(K, S, Φ, U) at the solve nodes, `rho[i * n_z + q]`.
    pub fn density_closure(&self, st: &AxisymState) -> Result<Vec<f64>> {
        let o = Origin::new(MODULE, "density_closure");
        let d = self.derivs(st);
        let nz = self.n_z();
        let mut out = vec![0.0; self.grid.len() * nz];
        for i in 0..self.grid.len() {
            let s = self.samples(i, st, &d);
            for q in 0..nz {
                let p = self.point(i, &s.p[q]);
                if p.h <= 0.0 {
                    return Err(Error::Vacuum { origin: o, at: Location::rz(self.grid.r[i], self.cs.z.nodes[q]), arg: p.h });
                }
                out[i * nz + q] = p.rho;
            }
        }
        Ok(out)
    }

    fn derivs(&self, st: &AxisymState) -> [ModalField; 6] {
        [
            self.rderiv(&st.v1),
            self.rderiv(&st.v2),
            self.rderiv(&st.v3),
            self.rderiv(&st.w1),
            self.rderiv(&st.w2),
            self.rderiv(&st.w3),
        ]
    }

    /// Sine-mode Poisson solve ∂rr φ + ∂zz φ = g with ∂r φ = 0 at r0, r1.
    pub fn solve_phi1(&self, g2: &ModalField) -> Result<ModalField> {
        let o = Origin::new(MODULE, "solve_phi1");
        let n = self.grid.len();
        let mut phi = ModalField::for_section(&self.cs, n);
        for j in 1..self.cs.n_modes() {
            let rhs = g2.row(j);
            if rhs.iter().all(|v| *v == 0.0) {
                continue;
            }
            let k2 = (j as f64 * std::f64::consts::PI).powi(2);
            let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
            let st = |s: &crate::linalg::Stencil| s.w.iter().enumerate().map(|(q, w)| (s.start + q, *w)).collect::<Vec<_>>();
            rows.push(st(&self.grid.d1[0]));
            for i in 1..n - 1 {
                let mut row = st(&self.grid.d2[i]);
                for e in row.iter_mut() {
                    if e.0 == i {
                        e.1 -= k2;
                    }
                }
                rows.push(row);
            }
            rows.push(st(&self.grid.d1[n - 1]));
            let (mut kl, mut ku) = (0, 0);
            for (i, row) in rows.iter().enumerate() {
                for (c, _) in row {
                    if *c < i {
                        kl = kl.max(i - c);
                    } else {
                        ku = ku.max(c - i);
                    }
                }
            }
            let mut lu = BandedLu::new(n, kl, ku);
            for (i, row) in rows.iter().enumerate() {
                for (c, v) in row {
                    lu.add(i, *c, *v);
                }
            }
            lu.factor(1e-14, o)?;
            let mut b = rhs.to_vec();
            b[0] = 0.0;
            b[n - 1] = 0.0;
            lu.solve_in_place(&mut b);
            phi.row_mut(j).copy_from_slice(&b);
        }
        Ok(phi)
    }

    /// One application of the inner map: new V for given (V̂, Ŵ).
    pub fn inner_step(&self, st: &AxisymState, bvp: &BvpOptions, u1_floor: f64) -> Result<(ModalField, ModalField, ModalField)> {
        let o = Origin::new(MODULE, "assemble_axi");
        let n = self.grid.len();
        let nz = self.n_z();
        let nm = self.cs.n_modes();
        let d = self.derivs(st);
        let lin = &self.lin;
        let floor = u1_floor * self.bg.inflow.u0;

        struct NodeOut {
            g1: Vec<f64>,
            g2: Vec<f64>,
            g3: Vec<f64>,
            b: [Vec<f64>; 3],
        }
        let per_node: Vec<Result<NodeOut>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let r = self.grid.r[i];
                let s = self.samples(i, st, &d);
                let zero = self.point(i, &PointIn::default());
                let mut out = NodeOut { g1: vec![0.0; nz], g2: vec![0.0; nz], g3: vec![0.0; nz], b: Default::default() };
                for b in out.b.iter_mut() {
                    *b = vec![0.0; nz];
                }
                for q in 0..nz {
                    let pi = &s.p[q];
                    let p = self.point(i, pi);
                    let loc = Location::rz(r, self.cs.z.nodes[q]);
                    if p.h <= 0.0 {
                        return Err(Error::Vacuum { origin: o, at: loc, arg: p.h });
                    }
                    if p.u1 <= floor {
                        return Err(Error::Stagnation { origin: o, at: loc, u1: p.u1 });
                    }
                    out.g1[q] = lin.a1[i] * pi.v[0] + lin.b1[i] * pi.vr[2] + lin.b2[i] * pi.v[2] - p.lower + zero.lower;
                    out.g2[q] = p.g2;
                    out.g3[q] = p.rho - zero.rho + lin.a2[i] * pi.v[0] - lin.b3[i] * pi.v[2];
                    out.b[0][q] = p.b11;
                    out.b[1][q] = p.b12;
                    out.b[2][q] = p.b22;
                }
                Ok(out)
            })
            .collect();
        let mut nodes = Vec::with_capacity(n);
        for r in per_node {
            nodes.push(r?);
        }

        // curl part
        let mut g2 = ModalField::for_section(&self.cs, n);
        let mut tmp = vec![0.0; nm];
        for (i, nd) in nodes.iter().enumerate() {
            self.sine.project(&nd.g2, &mut tmp);
            g2.set_column(i, &tmp);
        }
        let phi = self.solve_phi1(&g2)?;
        let phi_r = self.rderiv(&phi);
        let mut phi_rr = phi.clone();
        for j in 0..nm {
            let v = self.grid.deriv2(phi.row(j));
            phi_rr.row_mut(j).copy_from_slice(&v);
        }
        let kz = |j: usize| j as f64 * std::f64::consts::PI;
        // ∂z of sin(jπz) is jπ cos(jπz); the cosine basis has β_j = cos(jπz) for j ≥ 1
        let to_cos = |f: &ModalField, i: usize| -> Vec<f64> { (0..nm).map(|j| kz(j) * f.row(j)[i]).collect() };
        let u3_dz: Vec<f64> = (0..nm).map(|j| kz(j) * self.u3[j]).collect();
        let u3_dz_grid = self.cos_synth(&u3_dz, 0);

        let mut pert = PrincipalPerturbation::zeros(n * nz);
        let mut load_u = ModalField::for_section(&self.cs, n);
        let mut load_v = ModalField::for_section(&self.cs, n);
        for (i, nd) in nodes.iter().enumerate() {
            let r = self.grid.r[i];
            let phi_rz = self.cos_synth(&to_cos(&phi_r, i), 0);
            let phi_rr_g = self.sin_synth(&phi_rr.column(i), 0);
            let phi_zz_g = self.sin_synth(&phi.column(i), 2);
            let mut g4 = vec![0.0; nz];
            for q in 0..nz {
                let (b11, b12, b22) = (nd.b[0][q], nd.b[1][q], nd.b[2][q]);
                g4[q] = nd.g1[q] - ((b22 - b11) * phi_rz[q] + b22 * u3_dz_grid[q] + b12 * (phi_rr_g[q] - phi_zz_g[q]));
                pert.d_a11[i * nz + q] = b11 - lin.b11[i];
                pert.a13[i * nz + q] = b12;
                pert.d_a33[i * nz + q] = b22 - lin.b22[i];
            }
            let mut cu = self.cos_project(&g4);
            let mut cv = self.cos_project(&nd.g3);
            let phi_z = to_cos(&phi, i);
            for j in 0..nm {
                let tau = kz(j) * kz(j);
                let l = self.lift.row(j)[i];
                cu[j] -= -lin.a1[i] * phi_z[j] + lin.b1[i] * self.e_dev[j] + lin.b2[i] * l;
                let lap = self.e_dev[j] / r - tau * ((r - self.grid.r1()) * self.e_dev[j] + self.phi_dev[j]);
                cv[j] -= self.b_star.row(j)[i] + lap - lin.a2[i] * phi_z[j] - lin.b3[i] * l;
            }
            load_u.set_column(i, &cu);
            load_v.set_column(i, &cv);
        }
        let phi_z0 = to_cos(&phi, 0);
        let slope: Vec<f64> = (0..nm).map(|j| self.u1[j] + phi_z0[j]).collect();
        let sys = ModalSystem {
            cs: self.cs.clone(),
            grid: self.grid.clone(),
            coeffs: RadialCoeffs {
                a11: lin.b11.clone(),
                a22: vec![0.0; n],
                a33: lin.b22.clone(),
                a1: lin.a1.clone(),
                a2: lin.a2.clone(),
                b1: lin.b1.clone(),
                b2: lin.b2.clone(),
                b3: lin.b3.clone(),
            },
            pert: Some(pert),
            load_u,
            load_v,
            entrance_slope: slope,
        };
        let (psi, cap, _) = sys.solve(bvp)?;
        // undo the transformation
        let psi_r = self.rderiv(&psi);
        let mut v1 = psi_r;
        let mut v2 = ModalField::for_section(&self.cs, n);
        let mut v3 = cap;
        v3.axpy(1.0, &self.lift);
        for j in 0..nm {
            for i in 0..n {
                v1.row_mut(j)[i] -= kz(j) * phi.row(j)[i];
                if j >= 1 {
                    v2.row_mut(j)[i] = -kz(j) * psi.row(j)[i] + phi_r.row(j)[i] + self.u3[j];
                }
            }
        }
        Ok((v1, v2, v3))
    }

    fn norm_v(&self, v1: &ModalField, v2: &ModalField, v3: &ModalField) -> f64 {
        let zero = ModalField::for_section(&self.cs, self.grid.len());
        (h1_norm(&self.cs, &self.grid, v1, v2).powi(2) + h1_norm(&self.cs, &self.grid, v3, &zero).powi(2)).sqrt()
    }

    /// Discrete H¹ distance between the V parts of two states.
    pub fn v_change(&self, a: &AxisymState, b: &AxisymState) -> f64 {
        let diff = |x: &ModalField, y: &ModalField| {
            let mut d = x.clone();
            d.axpy(-1.0, y);
            d
        };
        self.norm_v(&diff(&a.v1, &b.v1), &diff(&a.v2, &b.v2), &diff(&a.v3, &b.v3))
    }

    /// Discrete H¹ distance between the W parts of two states.
    pub fn w_change(&self, a: &AxisymState, b: &AxisymState) -> f64 {
        let diff = |x: &ModalField, y: &ModalField| {
            let mut d = x.clone();
            d.axpy(-1.0, y);
            d
        };
        self.norm_v(&diff(&a.w1, &b.w1), &diff(&a.w2, &b.w2), &diff(&a.w3, &b.w3))
    }

    /// Fixed point of the inner map for frozen W, starting from `st`.
    pub fn inner_fixed_point(&self, st: &AxisymState, cfg: &AxiConfig) -> Result<(AxisymState, InnerReport)> {
        let o = Origin::new(MODULE, "inner_fixed_point");
        let mut cur = st.clone();
        let mut history = Vec::new();
        let mut growth = 0;
        for it in 1..=cfg.max_inner {
            let (mut v1, mut v2, mut v3) = self.inner_step(&cur, &cfg.bvp, cfg.u1_floor)?;
            if cfg.damping < 1.0 {
                let w = cfg.damping;
                for (new, old) in [(&mut v1, &cur.v1), (&mut v2, &cur.v2), (&mut v3, &cur.v3)] {
                    *new = new.scaled(w);
                    new.axpy(1.0 - w, old);
                }
            }
            let next = AxisymState { v1, v2, v3, ..cur.clone() };
            let change = self.v_change(&next, &cur);
            cur = next;
            if let Some(prev) = history.last() {
                growth = if change > *prev { growth + 1 } else { 0 };
            }
            history.push(change);
            let norm = h4_proxy_norm(&self.cs, &self.grid, &[&cur.v1, &cur.v2, &cur.v3]);
            if !norm.is_finite() || norm > cfg.delta2_star || growth >= 3 {
                let msg = if growth >= 3 {
                    "inner change grew in 3 consecutive iterations".to_string()
                } else {
                    format!("V left the admissible ball: H4 proxy {norm:e} > {:e}", cfg.delta2_star)
                };
                return Err(Error::Divergence { origin: o, iterations: it, msg, history });
            }
            if change < cfg.tol_inner {
                let ratios = ratios(&history);
                let q = ratios.iter().cloned().fold(0.0, f64::max);
                return Ok((cur, InnerReport { history, ratios, q }));
            }
        }
        Err(Error::NotConverged {
            origin: o,
            iterations: cfg.max_inner,
            last_change: *history.last().unwrap_or(&f64::NAN),
            history,
        })
    }

    /// 𝓛(r, z) = ∫_{-1}^{z} r0 ρ U1(r0, s) ds − ∫_{r0}^{r} s ρ U3(s, z) ds.
    pub fn build_stream_function(&self, st: &AxisymState) -> Result<StreamFunction> {
        let o = Origin::new(MODULE, "build_stream_function");
        let n = self.grid.len();
        let nz = self.n_z();
        let d = self.derivs(st);
        let mut flux_r = vec![0.0; n * nz];
        let mut flux_z = vec![0.0; n * nz];
        for i in 0..n {
            let r = self.grid.r[i];
            let s = self.samples(i, st, &d);
            for q in 0..nz {
                let p = self.point(i, &s.p[q]);
                if p.h <= 0.0 {
                    return Err(Error::Vacuum { origin: o, at: Location::rz(r, self.cs.z.nodes[q]), arg: p.h });
                }
                flux_r[i * nz + q] = r * p.rho * p.u1;
                flux_z[i * nz + q] = r * p.rho * p.u3;
            }
        }
        let entrance = self.cos_project(&flux_r[0..nz]);
        let mut l = vec![0.0; n * nz];
        for q in 0..nz {
            let col: Vec<f64> = (0..n).map(|i| flux_z[i * nz + q]).collect();
            let cum = self.grid.cumulative(&col);
            let (f0, _) = antiderivative(&entrance, self.cs.z.nodes[q]);
            for i in 0..n {
                l[i * nz + q] = f0 - cum[i];
            }
        }
        for i in 0..n {
            for q in 0..nz - 1 {
                if l[i * nz + q + 1] <= l[i * nz + q] {
                    return Err(Error::MonotonicityFailure { origin: o, at: Location::rz(self.grid.r[i], self.cs.z.nodes[q]) });
                }
            }
        }
        let lo = antiderivative(&entrance, -1.0).0;
        let hi = antiderivative(&entrance, 1.0).0;
        let (mut path, mut wall) = (0.0f64, 0.0f64);
        for i in 0..n {
            let c = self.cos_project(&flux_r[i * nz..(i + 1) * nz]);
            for q in 0..nz {
                let alt = lo + antiderivative(&c, self.cs.z.nodes[q]).0;
                path = path.max((alt - l[i * nz + q]).abs());
            }
            wall = wall.max((l[i * nz] - lo).abs()).max((l[i * nz + nz - 1] - hi).abs());
        }
        Ok(StreamFunction { l, n_z: nz, entrance, lo, hi, path_defect: path, wall_defect: wall })
    }

    fn transported(&self, stream: &StreamFunction, r: f64, value: f64) -> [f64; 3] {
        let t = stream.inverse(value);
        let e = |c: &[f64]| self.cs.eval_at(c, 0.0, t, 0, 0);
        [self.grid.r0() / r * e(&self.u2), e(&self.k), e(&self.s)]
    }

    /// New W from the stream function: data at the entrance foot point of each node.
    pub fn transport_update(&self, stream: &StreamFunction) -> Result<(ModalField, ModalField, ModalField)> {
        let o = Origin::new(MODULE, "transport_update");
        let n = self.grid.len();
        let nz = self.n_z();
        let tol = self.bg.j0 * 1e-8;
        let mut w = [
            ModalField::for_section(&self.cs, n),
            ModalField::for_section(&self.cs, n),
            ModalField::for_section(&self.cs, n),
        ];
        for i in 0..n {
            let r = self.grid.r[i];
            let mut g = [vec![0.0; nz], vec![0.0; nz], vec![0.0; nz]];
            for q in 0..nz {
                let v = stream.l[i * nz + q];
                if v < stream.lo - tol || v > stream.hi + tol {
                    return Err(Error::InverseOutOfRange {
                        origin: o,
                        at: Location::rz(r, self.cs.z.nodes[q]),
                        value: v,
                        lo: stream.lo,
                        hi: stream.hi,
                    });
                }
                let t = self.transported(stream, r, v);
                for f in 0..3 {
                    g[f][q] = t[f];
                }
            }
            for f in 0..3 {
                let c = self.cos_project(&g[f]);
                w[f].set_column(i, &c);
            }
        }
        let [w1, w2, w3] = w;
        Ok((w1, w2, w3))
    }

    /// Two-layer iteration: inner fixed point for V, then transport for W.
    pub fn outer_iterate(&self, cfg: &AxiConfig) -> Result<(AxisymState, AxiReport)> {
        let o = Origin::new(MODULE, "outer_iterate");
        if !(cfg.damping > 0.0 && cfg.damping <= 1.0) || cfg.tol_inner <= 0.0 || cfg.tol_outer <= 0.0 {
            return Err(invalid(o, "damping must lie in (0, 1] and tolerances must be positive"));
        }
        let mut st = self.zero_state();
        let mut history = Vec::new();
        let mut inner = Vec::new();
        let mut growth = 0;
        for it in 1..=cfg.max_outer {
            let (next, rep) = self.inner_fixed_point(&st, cfg).map_err(|e| with_outer_history(e, &history))?;
            inner.push(rep);
            let stream = self.build_stream_function(&next)?;
            let (w1, w2, w3) = self.transport_update(&stream)?;
            let new = AxisymState { w1, w2, w3, stream: Some(stream), ..next };
            let change = self.w_change(&new, &st);
            st = new;
            if let Some(prev) = history.last() {
                growth = if change > *prev { growth + 1 } else { 0 };
            }
            history.push(change);
            let norm = h4_proxy_norm(&self.cs, &self.grid, &[&st.w1, &st.w2, &st.w3]);
            if !norm.is_finite() || norm > cfg.delta1_star || growth >= 3 {
                let msg = if growth >= 3 {
                    "transport change grew in 3 consecutive iterations".to_string()
                } else {
                    format!("W left the admissible ball: H4 proxy {norm:e} > {:e}", cfg.delta1_star)
                };
                return Err(Error::Divergence { origin: o, iterations: it, msg, history });
            }
            if change < cfg.tol_outer {
                // bring V in line with the final W
                let (fin, rep) = self.inner_fixed_point(&st, cfg)?;
                inner.push(rep);
                let stream = self.build_stream_function(&fin)?;
                st = AxisymState { stream: Some(stream), ..fin };
                let kappa = self.check_supersonic(&st)?;
                let stream = st.stream.as_ref().expect("stream set above");
                let report = AxiReport {
                    outer_iterations: it,
                    outer_ratios: ratios(&history),
                    outer_q: ratios(&history).iter().cloned().fold(0.0, f64::max),
                    inner_q: inner.iter().map(|r| r.q).fold(0.0, f64::max),
                    inner,
                    kappa,
                    kappa_background: self.bg.supersonic_margin(),
                    collapse_spread: self.collapse_spread(&st)?,
                    wall_defect: stream.wall_defect,
                    path_defect: stream.path_defect,
                    norm_v: self.norm_v(&st.v1, &st.v2, &st.v3),
                    norm_w: self.norm_v(&st.w1, &st.w2, &st.w3),
                    odd_energy_fraction: odd_fraction(&st),
                    sigma: self.data.sigma(&self.bg.inflow),
                    outer_history: history,
                };
                return Ok((st, report));
            }
        }
        Err(Error::NotConverged {
            origin: o,
            iterations: cfg.max_outer,
            last_change: *history.last().unwrap_or(&f64::NAN),
            history,
        })
    }

    /// κ = min over the grid of U1² − c².
    pub fn check_supersonic(&self, st: &AxisymState) -> Result<f64> {
        let o = Origin::new(MODULE, "check_supersonic");
        let d = self.derivs(st);
        let mut kappa = f64::INFINITY;
        for i in 0..self.grid.len() {
            let s = self.samples(i, st, &d);
            for q in 0..self.n_z() {
                let p = self.point(i, &s.p[q]);
                let m = p.u1 * p.u1 - p.c2;
                if m <= 0.0 {
                    return Err(Error::SupersonicityLost {
                        origin: o,
                        at: Location::rz(self.grid.r[i], self.cs.z.nodes[q]),
                        margin: m,
                    });
                }
                kappa = kappa.min(m);
            }
        }
        Ok(kappa)
    }

    /// Spread of the synthesized W about the entrance relation W = f(𝓛).
    pub fn collapse_spread(&self, st: &AxisymState) -> Result<[f64; 3]> {
        let stream = match &st.stream {
            Some(s) => s.clone(),
            None => self.build_stream_function(st)?,
        };
        let nz = self.n_z();
        let mut spread = [0.0f64; 3];
        for i in 0..self.grid.len() {
            let r = self.grid.r[i];
            let w = [self.cos_synth(&st.w1.column(i), 0), self.cos_synth(&st.w2.column(i), 0), self.cos_synth(&st.w3.column(i), 0)];
            for q in 0..nz {
                let f = self.transported(&stream, r, stream.l[i * nz + q]);
                let scale = [r / self.grid.r0(), 1.0, 1.0];
                for k in 0..3 {
                    spread[k] = spread[k].max(scale[k] * (w[k][q] - f[k]).abs());
                }
            }
        }
        Ok(spread)
    }

    /// Values of (U1, U2, U3) and W at an arbitrary point of the nozzle.
    pub fn eval_at(&self, st: &AxisymState, r: f64, z: f64) -> ([f64; 3], [f64; 3]) {
        let w = self.grid.interp_weights(r);
        let zb = &self.cs.z_basis;
        let sb = SineBasis::z(self.cs.n_modes() - 1);
        let row_at = |f: &ModalField, j: usize| -> f64 { w.w.iter().enumerate().map(|(k, wk)| wk[0] * f.row(j)[w.start + k]).sum() };
        let (mut v1, mut v2) = (0.0, 0.0);
        let mut ws = [0.0; 3];
        for j in 0..self.cs.n_modes() {
            let c = zb.eval(j, z, 0);
            v1 += row_at(&st.v1, j) * c;
            if j >= 1 {
                v2 += row_at(&st.v2, j) * sb.eval(j, z, 0);
            }
            for (f, wf) in [&st.w1, &st.w2, &st.w3].into_iter().zip(ws.iter_mut()) {
                *wf += row_at(f, j) * c;
            }
        }
        let (ub, _, _) = self.grid.interp(&self.bg.u_bar, r);
        ([ub + v1, ws[0], v2], ws)
    }

    /// Node values for output: (r, z, U1, U2, U3, ρ, Φ, K, S, ω2, 𝓛).
    pub fn node_fields(&self, st: &AxisymState) -> Result<Vec<[f64; 11]>> {
        let stream = match &st.stream {
            Some(s) => s.clone(),
            None => self.build_stream_function(st)?,
        };
        let d = self.derivs(st);
        let nz = self.n_z();
        let mut out = Vec::with_capacity(self.grid.len() * nz);
        for i in 0..self.grid.len() {
            let s = self.samples(i, st, &d);
            for q in 0..nz {
                let pi = &s.p[q];
                let p = self.point(i, pi);
                out.push([
                    self.grid.r[i],
                    self.cs.z.nodes[q],
                    p.u1,
                    pi.w[0],
                    p.u3,
                    p.rho,
                    self.bg.phi_bar[i] + pi.v[2],
                    self.bg.k0 + pi.w[1],
                    self.bg.inflow.s0 + pi.w[2],
                    pi.vz[0] - pi.vr[1],
                    stream.l[i * nz + q],
                ]);
            }
        }
        Ok(out)
    }

    /// Residuals of the full system on a grid refined by `factor` in r and z.
    pub fn residual_axi(&self, st: &AxisymState, factor: usize) -> Result<AxiResidual> {
        let fine_bg = self.bg.refined(factor)?;
        let fg = RadialGrid::from_nodes(fine_bg.grid_r.clone());
        let m = self.cs.n_modes() - 1;
        let nzf = factor * self.n_z();
        let cs = CrossSection::axisymmetric(m, nzf);
        let rule = Quadrature1D::trapezoid(nzf, -1.0, 1.0);
        let sine = SineTable::new(m, &rule);
        let g = self.bg.inflow.gamma;
        let r0 = self.grid.r0();
        let fields = [&st.v1, &st.v2, &st.v3, &st.w1, &st.w2, &st.w3];

        let per: Vec<[f64; 17]> = (0..fg.len())
            .into_par_iter()
            .map(|i| {
                let r = fg.r[i];
                let w = self.grid.interp_weights(r);
                // value, ∂r, ∂rr, ∂z, ∂zz, ∂rz of each field on the fine axial nodes
                let mut s: Vec<[Vec<f64>; 6]> = Vec::new();
                for (f, field) in fields.iter().enumerate() {
                    let mut c = [vec![0.0; m + 1], vec![0.0; m + 1], vec![0.0; m + 1]];
                    for j in 0..=m {
                        for (k, wk) in w.w.iter().enumerate() {
                            let v = field.row(j)[w.start + k];
                            for o in 0..3 {
                                c[o][j] += wk[o] * v;
                            }
                        }
                    }
                    let syn = |cc: &Vec<f64>, dz: usize| {
                        let mut out = vec![0.0; nzf];
                        if f == 1 {
                            sine.synthesize(cc, dz, &mut out);
                        } else {
                            cs.synthesize(cc, 0, dz, &mut out);
                        }
                        out
                    };
                    s.push([syn(&c[0], 0), syn(&c[1], 0), syn(&c[2], 0), syn(&c[0], 1), syn(&c[0], 2), syn(&c[1], 1)]);
                }
                let mut bcol = vec![0.0; m + 1];
                for &(j, p, v) in &self.data.b_star {
                    if j <= m {
                        bcol[j] += v * (r - r0).powi(p as i32);
                    }
                }
                let mut bs = vec![0.0; nzf];
                cs.synthesize(&bcol, 0, 0, &mut bs);
                let (ub, up, eb, ep) = (fine_bg.u_bar[i], fine_bg.u_prime[i], fine_bg.e_bar[i], fine_bg.e_prime[i]);
                let mut acc = [0.0f64; 17];
                for q in 0..nzf {
                    let val = |f: usize, k: usize| s[f][k][q];
                    let u1 = ub + val(0, 0);
                    let (u1r, u1z, u1rr) = (up + val(0, 1), val(0, 3), 0.0);
                    let _ = u1rr;
                    let (u2, u2r, u2z) = (val(3, 0), val(3, 1), val(3, 3));
                    let (u3, u3r, u3z) = (val(1, 0), val(1, 1), val(1, 3));
                    let phi_r = eb + val(2, 1);
                    let phi_z = val(2, 3);
                    let lap_phi = ep + eb / r + val(2, 2) + val(2, 1) / r + val(2, 4);
                    let (k, kr, kz) = (fine_bg.k0 + val(4, 0), val(4, 1), val(4, 3));
                    let (sv, sr, sz) = (fine_bg.inflow.s0 + val(5, 0), val(5, 1), val(5, 3));
                    let phi = fine_bg.phi_bar[i] + val(2, 0);
                    let h = k + phi - 0.5 * (u1 * u1 + u2 * u2 + u3 * u3);
                    let c2 = (g - 1.0) * h;
                    let rho = (c2.max(0.0) / (g * sv.exp())).powf(1.0 / (g - 1.0));
                    let hr = kr + phi_r - (u1 * u1r + u2 * u2r + u3 * u3r);
                    let hz = kz + phi_z - (u1 * u1z + u2 * u2z + u3 * u3z);
                    let rho_r = rho * (hr / c2 - sr / (g - 1.0));
                    let rho_z = rho * (hz / c2 - sz / (g - 1.0));
                    let p = sv.exp() * rho.powf(g);
                    let p_r = p * (sr + g * rho_r / rho);
                    let p_z = p * (sz + g * rho_z / rho);
                    let cont = rho * u1 + r * (rho_r * u1 + rho * u1r) + r * (rho_z * u3 + rho * u3z);
                    let mr = rho * (u1 * u1r + u3 * u1z - u2 * u2 / r) + p_r - rho * phi_r;
                    let mt = rho * (u1 * u2r + u3 * u2z + u1 * u2 / r);
                    let mz = rho * (u1 * u3r + u3 * u3z) + p_z - rho * phi_z;
                    let ent = u1 * sr + u3 * sz;
                    let ber = u1 * kr + u3 * kz;
                    let poi = lap_phi - rho + fine_bg.inflow.b0 + bs[q];
                    let omega = u1z - u3r;
                    let vort = u1 * (u3r - u1z) - (u2 * u2z + sv.exp() * rho.powf(g - 1.0) * sz / (g - 1.0) - kz);
                    let wq = cs.weight(q);
                    for (e, v) in [cont, mr, mt, mz, ent, ber, poi].iter().enumerate() {
                        acc[2 * e] += wq * v * v;
                        acc[2 * e + 1] = acc[2 * e + 1].max(v.abs());
                    }
                    acc[14] += wq * vort * vort;
                    acc[15] = acc[15].max(omega.abs());
                }
                acc
            })
            .collect();
        let norm = |e: usize| -> [f64; 2] {
            let l2: Vec<f64> = per.iter().map(|a| a[2 * e]).collect();
            [fg.integrate(&l2).sqrt(), per.iter().fold(0.0, |m, a| m.max(a[2 * e + 1]))]
        };
        let vort: Vec<f64> = per.iter().map(|a| a[14]).collect();
        Ok(AxiResidual {
            continuity: norm(0),
            momentum_r: norm(1),
            momentum_theta: norm(2),
            momentum_z: norm(3),
            entropy: norm(4),
            bernoulli: norm(5),
            poisson: norm(6),
            vorticity_identity: fg.integrate(&vort).sqrt(),
            omega2_max: per.iter().fold(0.0, |m, a| m.max(a[15])),
            n_r: fg.len(),
            n_z: nzf,
        })
    }
}

fn odd_fraction(st: &AxisymState) -> f64 {
    let f = [&st.v1, &st.v2, &st.v3, &st.w1, &st.w2, &st.w3];
    let total: f64 = f.iter().map(|x| x.energy()).sum();
    let odd: f64 = f.iter().map(|x| x.odd_energy(1)).sum();
    if total > 0.0 {
        odd / total
    } else {
        0.0
    }
}

fn ratios(history: &[f64]) -> Vec<f64> {
    let floor = 1e-9 * history.first().copied().unwrap_or(0.0);
    history.windows(2).filter(|w| w[1] > floor && w[0] > 0.0).map(|w| w[1] / w[0]).collect()
}

/// Inner failures carry the inner history; prepend nothing but keep the kind.
fn with_outer_history(e: Error, _outer: &[f64]) -> Error {
    e
}
