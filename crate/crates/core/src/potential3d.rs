//! Three-dimensional irrotational perturbation of the background flow.
//!
//! The unknowns are ψ = φ − φ̄ (velocity potential) and Ψ = Φ − Φ̄
//! (electric potential). In non-divergence form the potential equation reads
//!
//! ```text
//! Σ A_ij ∂_ij ψ + A11 Ū' + c² φ_r / r + φ_r φ_θ² / r³ + ∇φ·∇Φ = 0,
//! c² = (γ−1)(K0 + Φ − |∇φ|²/2),
//! ```
//!
//! with A11 = c² − φ_r², A22 = c²/r² − φ_θ²/r⁴, A33 = c² − φ_z²,
//! A12 = −φ_r φ_θ / r², A13 = −φ_r φ_z, A23 = −φ_θ φ_z / r². Moving the
//! linearization of the lower-order part to the left gives the right side
//! F1 = ā1 ψ_r + b̄1 Ψ_r + b̄2 Ψ − N(ψ, Ψ) + N(0, 0), which is quadratic in
//! the perturbation. The Poisson equation becomes
//! ΔΨ + ā2 ψ_r − b̄3 Ψ = ρ − ρ̄ + ā2 ψ_r − b̄3 Ψ − (b* − b0) =: F2.

use rayon::prelude::*;
use serde::Serialize;

use crate::background::{eval_linear_coeffs, BackgroundSolution, InflowData, LinearCoeffs};
use crate::error::{invalid, Error, Location, Origin, Result};
use crate::galerkin::{h1_norm, h4_proxy_norm, BvpOptions, ModalSystem, PrincipalPerturbation, RadialCoeffs};
use crate::linalg::RadialGrid;
use crate::spectral::{CosineBasis, CrossSection, ModalField, ModalTable};

const MODULE: &str = "potential3d";

/// Boundary data as deviations from the background trace.
///
/// `b_star` entries `(i, j, p, c)` contribute `c (r − r0)^p ϑ_i(θ) β_j(z)` to
/// b* − b0. The three tables are cosine coefficients of U1_en − U0,
/// E_en − E0 and Φ_ex − Φ̄(r1).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundaryData3D {
    pub b_star: Vec<(usize, usize, usize, f64)>,
    pub u1_en: ModalTable,
    pub e_en: ModalTable,
    pub phi_ex: ModalTable,
}

/// Sup norm of ϑ_i β_j times the derivative weight (1 + √μ_i + √τ_j)^order.
fn mode_weight(theta0: f64, i: usize, j: usize, order: i32) -> f64 {
    let tb = CosineBasis::theta(theta0, i);
    let zb = CosineBasis::z(j);
    tb.sup(i) * zb.sup(j) * (1.0 + tb.wavenumber(i) + zb.wavenumber(j)).powi(order)
}

/// Weighted modal norm of a cosine table with derivative weight `order`.
pub fn table_norm(theta0: f64, t: &ModalTable, order: i32) -> f64 {
    t.entries.iter().map(|&(i, j, v)| v.abs() * mode_weight(theta0, i, j, order)).sum()
}

impl BoundaryData3D {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            b_star: self.b_star.iter().map(|&(i, j, p, v)| (i, j, p, a * v)).collect(),
            u1_en: self.u1_en.scaled(a),
            e_en: self.e_en.scaled(a),
            phi_ex: self.phi_ex.scaled(a),
        }
    }

    /// Size of the data: C² of b*, C³ of U1_en and E_en, C⁴ of Φ_ex, each
    /// bounded through weighted modal coefficients.
    pub fn sigma(&self, inflow: &InflowData) -> f64 {
        let t0 = inflow.theta0;
        let len = inflow.r1 - inflow.r0;
        let b: f64 = self
            .b_star
            .iter()
            .map(|&(i, j, p, v)| {
                let pf = p as f64;
                let mut radial = len.powi(p as i32);
                if p >= 1 {
                    radial += pf * len.powi(p as i32 - 1);
                }
                if p >= 2 {
                    radial += pf * (pf - 1.0) * len.powi(p as i32 - 2);
                }
                v.abs() * radial * mode_weight(t0, i, j, 2)
            })
            .sum();
        b + table_norm(t0, &self.u1_en, 3) + table_norm(t0, &self.e_en, 3) + table_norm(t0, &self.phi_ex, 4)
    }

    /// Modal coefficients of b* − b0 at radius r.
    pub fn b_star_modal(&self, cs: &CrossSection, r: f64, r0: f64) -> Vec<f64> {
        let mut out = vec![0.0; cs.n_modes()];
        for &(i, j, p, v) in &self.b_star {
            if i < cs.theta.n_modes && j < cs.z.n_modes {
                out[cs.index(i, j)] += v * (r - r0).powi(p as i32);
            }
        }
        out
    }
}

/// Iterate (ψ, Ψ) of the fixed-point loop.
#[derive(Debug, Clone)]
pub struct PerturbationState {
    pub psi: ModalField,
    /// Full Ψ = Φ − Φ̄, boundary lift included.
    pub psi_cap: ModalField,
    pub iteration: usize,
    pub change: f64,
}

/// Grid samples of the nonlinear coefficients and the projected loads.
#[derive(Debug, Clone)]
pub struct CoefficientFields {
    pub pert: PrincipalPerturbation,
    pub f3: ModalField,
    pub f4: ModalField,
    pub f5: Vec<f64>,
    /// min over the grid of K0 + Φ − |∇φ|²/2.
    pub density_arg_min: f64,
    /// min over the grid of |∇φ|² − c².
    pub kappa: f64,
    /// min of (−A11, A22, A33, 1/max of the same) over the grid.
    pub mu1: f64,
    /// min over the grid of the smaller eigenvalue of [[A22, A23], [A23, A33]].
    pub min_eig_23: f64,
}

/// Controls of the Picard loop.
#[derive(Debug, Clone, Copy)]
pub struct PicardConfig {
    pub tol_fix: f64,
    pub max_iter: usize,
    /// Radius of the admissible ball in the H⁴ proxy norm.
    pub delta_star: f64,
    /// 1 is the plain map; smaller values average with the previous iterate.
    pub damping: f64,
    pub bvp: BvpOptions,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { tol_fix: 1e-10, max_iter: 50, delta_star: 1.0, damping: 1.0, bvp: BvpOptions::default() }
    }
}

/// Outcome of a converged Picard run.
#[derive(Debug, Clone, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// Discrete H¹ norm of successive differences.
    pub history: Vec<f64>,
    /// Ratios of successive differences above the noise level.
    pub ratios: Vec<f64>,
    pub q: f64,
    pub gmres_iterations: Vec<usize>,
    pub kappa: f64,
    pub kappa_background: f64,
    pub norm_h1: f64,
    pub norm_h4: f64,
    pub sigma: f64,
    pub delta_star: f64,
    pub odd_energy_fraction: [f64; 2],
}

/// Residual norms of the full potential system on a verification grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PotentialResidual {
    pub eq1_l2: f64,
    pub eq1_max: f64,
    pub eq2_l2: f64,
    pub eq2_max: f64,
    /// Max |curl ∇φ| from the synthesized mixed derivatives.
    pub curl_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_z: usize,
}

/// Per-point perturbation samples at one radial node.
struct NodeSamples {
    psi_r: Vec<f64>,
    psi_t: Vec<f64>,
    psi_z: Vec<f64>,
    cap: Vec<f64>,
    cap_r: Vec<f64>,
    cap_t: Vec<f64>,
    cap_z: Vec<f64>,
}

/// Pointwise closure quantities at one sample point.
#[derive(Debug, Clone, Copy)]
struct Point {
    phi_r: f64,
    phi_t: f64,
    phi_z: f64,
    grad2: f64,
    h: f64,
    c2: f64,
}

/// The problem definition on fixed (m, n_nodes) resolution.
#[derive(Debug, Clone)]
pub struct Problem3D {
    pub bg: BackgroundSolution,
    pub lin: LinearCoeffs,
    pub cs: CrossSection,
    pub grid: RadialGrid,
    pub data: BoundaryData3D,
    /// Boundary lift ℓ = (r − r1)(E_en − E0) + (Φ_ex − Φ̄(r1)).
    pub lift: ModalField,
    lift_e: Vec<f64>,
    b_star: ModalField,
    f5: Vec<f64>,
}

impl Problem3D {
    /// Cross-section with the default trapezoid rule of 2m + 2 nodes.
    pub fn new(bg: &BackgroundSolution, data: &BoundaryData3D, m: usize) -> Result<Self> {
        Self::with_section(bg, data, CrossSection::new(bg.inflow.theta0, m))
    }

    pub fn with_section(bg: &BackgroundSolution, data: &BoundaryData3D, cs: CrossSection) -> Result<Self> {
        let o = Origin::new(MODULE, "new");
        let lin = eval_linear_coeffs(bg)?;
        let grid = RadialGrid::from_nodes(bg.grid_r.clone());
        let n = grid.len();
        let e = data.e_en.dense(&cs);
        let p = data.phi_ex.dense(&cs);
        let f5 = data.u1_en.dense(&cs);
        let r1 = grid.r1();
        let mut lift = ModalField::for_section(&cs, n);
        let mut b_star = ModalField::for_section(&cs, n);
        for i in 0..n {
            let r = grid.r[i];
            let col: Vec<f64> = (0..cs.n_modes()).map(|k| (r - r1) * e[k] + p[k]).collect();
            lift.set_column(i, &col);
            b_star.set_column(i, &data.b_star_modal(&cs, r, grid.r0()));
        }
        // entrance velocity must stay positive
        let mut g = vec![0.0; cs.n_points()];
        cs.synthesize(&f5, 0, 0, &mut g);
        for (q, v) in g.iter().enumerate() {
            if bg.inflow.u0 + v <= 0.0 {
                let (t, z) = cs.point(q);
                return Err(invalid(o, format!("entrance velocity {} <= 0 at theta={t}, z={z}", bg.inflow.u0 + v)));
            }
        }
        Ok(Self { bg: bg.clone(), lin, cs, grid, data: data.clone(), lift, lift_e: e, b_star, f5 })
    }

    pub fn zero_state(&self) -> PerturbationState {
        let n = self.grid.len();
        PerturbationState {
            psi: ModalField::for_section(&self.cs, n),
            psi_cap: ModalField::for_section(&self.cs, n),
            iteration: 0,
            change: 0.0,
        }
    }

    fn radial_derivs(&self, f: &ModalField) -> ModalField {
        let mut out = f.clone();
        for k in 0..f.n_modes() {
            let d = self.grid.deriv1(f.row(k));
            out.row_mut(k).copy_from_slice(&d);
        }
        out
    }

    fn samples(&self, i: usize, psi: &ModalField, psi_r: &ModalField, cap: &ModalField, cap_r: &ModalField) -> NodeSamples {
        let np = self.cs.n_points();
        let syn = |f: &ModalField, dt: usize, dz: usize| {
            let mut out = vec![0.0; np];
            self.cs.synthesize(&f.column(i), dt, dz, &mut out);
            out
        };
        NodeSamples {
            psi_r: syn(psi_r, 0, 0),
            psi_t: syn(psi, 1, 0),
            psi_z: syn(psi, 0, 1),
            cap: syn(cap, 0, 0),
            cap_r: syn(cap_r, 0, 0),
            cap_t: syn(cap, 1, 0),
            cap_z: syn(cap, 0, 1),
        }
    }

    fn point(&self, i: usize, psi_r: f64, psi_t: f64, psi_z: f64, cap: f64) -> Point {
        let r = self.grid.r[i];
        let phi_r = self.bg.u_bar[i] + psi_r;
        let grad2 = phi_r * phi_r + psi_t * psi_t / (r * r) + psi_z * psi_z;
        let h = self.bg.k0 + self.bg.phi_bar[i] + cap - 0.5 * grad2;
        Point { phi_r, phi_t: psi_t, phi_z: psi_z, grad2, h, c2: (self.bg.inflow.gamma - 1.0) * h }
    }

    /// Lower-order part N of the potential equation.
    fn lower_order(&self, i: usize, p: &Point, cap_r: f64, cap_t: f64, cap_z: f64) -> f64 {
        let r = self.grid.r[i];
        let a11 = p.c2 - p.phi_r * p.phi_r;
        a11 * self.bg.u_prime[i]
            + p.c2 * p.phi_r / r
            + p.phi_r * p.phi_t * p.phi_t / (r * r * r)
            + p.phi_r * (self.bg.e_bar[i] + cap_r)
            + p.phi_t * cap_t / (r * r)
            + p.phi_z * cap_z
    }

    fn density(&self, c2: f64) -> f64 {
        let g = self.bg.inflow.gamma;
        (c2 / (g * self.bg.inflow.s0.exp())).powf(1.0 / (g - 1.0))
    }

    /// Coefficients and loads at a given iterate.
    pub fn assemble_coeffs(&self, state: &PerturbationState) -> Result<CoefficientFields> {
        let o = Origin::new(MODULE, "assemble_coeffs");
        let n = self.grid.len();
        let np = self.cs.n_points();
        let nm = self.cs.n_modes();
        let psi_r = self.radial_derivs(&state.psi);
        let cap_r = self.radial_derivs(&state.psi_cap);
        let lin = &self.lin;

        struct NodeOut {
            pert: [Vec<f64>; 6],
            f1: Vec<f64>,
            f2: Vec<f64>,
            arg_min: f64,
            kappa: f64,
            lo: f64,
            hi: f64,
            eig: f64,
        }

        let per_node: Vec<Result<NodeOut>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let r = self.grid.r[i];
                let s = self.samples(i, &state.psi, &psi_r, &state.psi_cap, &cap_r);
                let zero = self.point(i, 0.0, 0.0, 0.0, 0.0);
                let n0 = self.lower_order(i, &zero, 0.0, 0.0, 0.0);
                let rho0 = self.density(zero.c2);
                let mut out = NodeOut {
                    pert: Default::default(),
                    f1: vec![0.0; np],
                    f2: vec![0.0; np],
                    arg_min: f64::INFINITY,
                    kappa: f64::INFINITY,
                    lo: f64::INFINITY,
                    hi: 0.0,
                    eig: f64::INFINITY,
                };
                for f in out.pert.iter_mut() {
                    *f = vec![0.0; np];
                }
                for q in 0..np {
                    let p = self.point(i, s.psi_r[q], s.psi_t[q], s.psi_z[q], s.cap[q]);
                    let loc = || {
                        let (t, z) = self.cs.point(q);
                        Location::rtz(r, t, z)
                    };
                    if p.h <= 0.0 {
                        return Err(Error::Vacuum { origin: o, at: loc(), arg: p.h });
                    }
                    if p.grad2 - p.c2 <= 0.0 {
                        return Err(Error::SupersonicityLost { origin: o, at: loc(), margin: p.grad2 - p.c2 });
                    }
                    out.arg_min = out.arg_min.min(p.h);
                    out.kappa = out.kappa.min(p.grad2 - p.c2);
                    let a11 = p.c2 - p.phi_r * p.phi_r;
                    let a22 = p.c2 / (r * r) - p.phi_t * p.phi_t / (r * r * r * r);
                    let a33 = p.c2 - p.phi_z * p.phi_z;
                    let a12 = -p.phi_r * p.phi_t / (r * r);
                    let a13 = -p.phi_r * p.phi_z;
                    let a23 = -p.phi_t * p.phi_z / (r * r);
                    out.pert[0][q] = a11 - lin.a11[i];
                    out.pert[1][q] = a12;
                    out.pert[2][q] = a13;
                    out.pert[3][q] = a22 - lin.a22[i];
                    out.pert[4][q] = a23;
                    out.pert[5][q] = a33 - lin.a33[i];
                    for v in [-a11, a22, a33] {
                        out.lo = out.lo.min(v);
                        out.hi = out.hi.max(v);
                    }
                    let (tr, det) = (a22 + a33, a22 * a33 - a23 * a23);
                    out.eig = out.eig.min(0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt()));
                    let nl = self.lower_order(i, &p, s.cap_r[q], s.cap_t[q], s.cap_z[q]);
                    out.f1[q] = lin.a1[i] * s.psi_r[q] + lin.b1[i] * s.cap_r[q] + lin.b2[i] * s.cap[q] - nl + n0;
                    out.f2[q] = self.density(p.c2) - rho0 + lin.a2[i] * s.psi_r[q] - lin.b3[i] * s.cap[q];
                }
                Ok(out)
            })
            .collect();

        let mut pert = PrincipalPerturbation::zeros(n * np);
        let mut f3 = ModalField::for_section(&self.cs, n);
        let mut f4 = ModalField::for_section(&self.cs, n);
        let (mut arg_min, mut kappa, mut lo, mut hi, mut eig) = (f64::INFINITY, f64::INFINITY, f64::INFINITY, 0.0f64, f64::INFINITY);
        let mut c3 = vec![0.0; nm];
        let mut c4 = vec![0.0; nm];
        for (i, res) in per_node.into_iter().enumerate() {
            let out = res?;
            let dst = [&mut pert.d_a11, &mut pert.a12, &mut pert.a13, &mut pert.d_a22, &mut pert.a23, &mut pert.d_a33];
            for (d, s) in dst.into_iter().zip(&out.pert) {
                d[i * np..(i + 1) * np].copy_from_slice(s);
            }
            arg_min = arg_min.min(out.arg_min);
            kappa = kappa.min(out.kappa);
            lo = lo.min(out.lo);
            hi = hi.max(out.hi);
            eig = eig.min(out.eig);
            let r = self.grid.r[i];
            self.cs.project(&out.f1, &mut c3);
            self.cs.project(&out.f2, &mut c4);
            for k in 0..nm {
                let (mu, tau) = self.cs.eigen(k);
                let l = self.lift.row(k)[i];
                let e = self.lift_e[k];
                c3[k] -= lin.b1[i] * e + lin.b2[i] * l;
                let lap = e / r - (mu / (r * r) + tau) * l;
                c4[k] -= self.b_star.row(k)[i] + lap - lin.b3[i] * l;
            }
            f3.set_column(i, &c3);
            f4.set_column(i, &c4);
        }
        Ok(CoefficientFields {
            pert,
            f3,
            f4,
            f5: self.f5.clone(),
            density_arg_min: arg_min,
            kappa,
            mu1: lo.min(1.0 / hi),
            min_eig_23: eig,
        })
    }

    fn radial_coeffs(&self) -> RadialCoeffs {
        let l = &self.lin;
        RadialCoeffs {
            a11: l.a11.clone(),
            a22: l.a22.clone(),
            a33: l.a33.clone(),
            a1: l.a1.clone(),
            a2: l.a2.clone(),
            b1: l.b1.clone(),
            b2: l.b2.clone(),
            b3: l.b3.clone(),
        }
    }

    /// Modal system for the linear problem frozen at the given coefficients.
    pub fn galerkin_reduce(&self, cf: CoefficientFields) -> ModalSystem {
        ModalSystem {
            cs: self.cs.clone(),
            grid: self.grid.clone(),
            coeffs: self.radial_coeffs(),
            pert: Some(cf.pert),
            load_u: cf.f3,
            load_v: cf.f4,
            entrance_slope: cf.f5,
        }
    }

    /// One application of the fixed-point map: returns (ψ, Ψ) and GMRES iterations.
    pub fn step(&self, state: &PerturbationState, bvp: &BvpOptions) -> Result<(ModalField, ModalField, usize)> {
        let cf = self.assemble_coeffs(state)?;
        let sys = self.galerkin_reduce(cf);
        let (psi, mut cap, info) = sys.solve(bvp)?;
        cap.axpy(1.0, &self.lift);
        Ok((psi, cap, info.iterations))
    }

    pub fn h1(&self, psi: &ModalField, cap: &ModalField) -> f64 {
        h1_norm(&self.cs, &self.grid, psi, cap)
    }

    pub fn h4(&self, state: &PerturbationState) -> f64 {
        h4_proxy_norm(&self.cs, &self.grid, &[&state.psi, &state.psi_cap])
    }

    /// Fixed-point iteration of the frozen-coefficient linear problem.
    pub fn picard_iterate(&self, cfg: &PicardConfig) -> Result<(PerturbationState, PicardReport)> {
        let o = Origin::new(MODULE, "picard_iterate");
        if !(cfg.damping > 0.0 && cfg.damping <= 1.0) || cfg.tol_fix <= 0.0 || cfg.max_iter == 0 {
            return Err(invalid(o, "damping must lie in (0, 1], tol_fix > 0, max_iter > 0"));
        }
        let mut state = self.zero_state();
        let mut history = Vec::new();
        let mut gmres_its = Vec::new();
        let mut growth = 0;
        let mut converged = false;
        for it in 1..=cfg.max_iter {
            let (mut psi, mut cap, gi) = self.step(&state, &cfg.bvp)?;
            gmres_its.push(gi);
            if cfg.damping < 1.0 {
                let w = cfg.damping;
                psi = psi.scaled(w);
                psi.axpy(1.0 - w, &state.psi);
                cap = cap.scaled(w);
                cap.axpy(1.0 - w, &state.psi_cap);
            }
            let mut dpsi = psi.clone();
            dpsi.axpy(-1.0, &state.psi);
            let mut dcap = cap.clone();
            dcap.axpy(-1.0, &state.psi_cap);
            let change = self.h1(&dpsi, &dcap);
            state = PerturbationState { psi, psi_cap: cap, iteration: it, change };
            if let Some(prev) = history.last() {
                growth = if change > *prev { growth + 1 } else { 0 };
            }
            history.push(change);
            let norm = self.h4(&state);
            if !change.is_finite() || !norm.is_finite() || norm > cfg.delta_star || growth >= 3 {
                let msg = if growth >= 3 {
                    "change grew in 3 consecutive iterations".to_string()
                } else {
                    format!("iterate left the admissible ball: H4 proxy {norm:e} > {:e}", cfg.delta_star)
                };
                return Err(Error::Divergence { origin: o, iterations: it, msg, history });
            }
            if change < cfg.tol_fix {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                origin: o,
                iterations: cfg.max_iter,
                last_change: *history.last().unwrap_or(&f64::NAN),
                history,
            });
        }
        let kappa = self.check_supersonic(&state)?;
        let ratios = contraction_ratios(&history);
        let q = ratios.iter().cloned().fold(0.0, f64::max);
        let total = state.psi.energy() + state.psi_cap.energy();
        let frac = |axis| {
            if total > 0.0 {
                (state.psi.odd_energy(axis) + state.psi_cap.odd_energy(axis)) / total
            } else {
                0.0
            }
        };
        let report = PicardReport {
            iterations: state.iteration,
            ratios,
            q,
            gmres_iterations: gmres_its,
            kappa,
            kappa_background: self.bg.supersonic_margin(),
            norm_h1: self.h1(&state.psi, &state.psi_cap),
            norm_h4: self.h4(&state),
            sigma: self.data.sigma(&self.bg.inflow),
            delta_star: cfg.delta_star,
            odd_energy_fraction: [frac(0), frac(1)],
            history,
        };
        Ok((state, report))
    }

    /// κ = min over the grid of |∇φ|² − c²; an error if it is not positive.
    pub fn check_supersonic(&self, state: &PerturbationState) -> Result<f64> {
        let o = Origin::new(MODULE, "check_supersonic");
        let psi_r = self.radial_derivs(&state.psi);
        let cap_r = self.radial_derivs(&state.psi_cap);
        let mut kappa = f64::INFINITY;
        for i in 0..self.grid.len() {
            let s = self.samples(i, &state.psi, &psi_r, &state.psi_cap, &cap_r);
            for q in 0..self.cs.n_points() {
                let p = self.point(i, s.psi_r[q], s.psi_t[q], s.psi_z[q], s.cap[q]);
                let m = p.grad2 - p.c2;
                if m <= 0.0 {
                    let (t, z) = self.cs.point(q);
                    return Err(Error::SupersonicityLost { origin: o, at: Location::rtz(self.grid.r[i], t, z), margin: m });
                }
                kappa = kappa.min(m);
            }
        }
        Ok(kappa)
    }

    /// Residuals of the conservative potential system on a grid refined by
    /// `factor` in r and in both cross-section directions.
    pub fn residual_potential(&self, state: &PerturbationState, factor: usize) -> Result<PotentialResidual> {
        let fine_bg = self.bg.refined(factor)?;
        let fine_grid = RadialGrid::from_nodes(fine_bg.grid_r.clone());
        let m = self.cs.theta.n_modes - 1;
        let nq = factor * (2 * m + 2);
        let cs = CrossSection::with_nodes(self.bg.inflow.theta0, m, nq, nq);
        let np = cs.n_points();
        let nm = cs.n_modes();
        let g = self.bg.inflow.gamma;
        let r0 = self.grid.r0();

        let per_node: Vec<(f64, f64, f64, f64, f64)> = (0..fine_grid.len())
            .into_par_iter()
            .map(|i| {
                let r = fine_grid.r[i];
                let w = self.grid.interp_weights(r);
                let mut cols = [[vec![0.0; nm], vec![0.0; nm], vec![0.0; nm]], [vec![0.0; nm], vec![0.0; nm], vec![0.0; nm]]];
                for (f, c) in [&state.psi, &state.psi_cap].into_iter().zip(cols.iter_mut()) {
                    for k in 0..nm {
                        let row = f.row(k);
                        for (q, wq) in w.w.iter().enumerate() {
                            let v = row[w.start + q];
                            for o in 0..3 {
                                c[o][k] += wq[o] * v;
                            }
                        }
                    }
                }
                let syn = |c: &Vec<f64>, dt: usize, dz: usize| {
                    let mut out = vec![0.0; np];
                    cs.synthesize(c, dt, dz, &mut out);
                    out
                };
                let [p0, p1, p2] = &cols[0];
                let [c0, c1, c2] = &cols[1];
                let (psi_r, psi_t, psi_z) = (syn(p1, 0, 0), syn(p0, 1, 0), syn(p0, 0, 1));
                let (psi_rr, psi_rt, psi_rz) = (syn(p2, 0, 0), syn(p1, 1, 0), syn(p1, 0, 1));
                let (psi_tt, psi_tz, psi_zz) = (syn(p0, 2, 0), syn(p0, 1, 1), syn(p0, 0, 2));
                let psi_zt = syn(p0, 1, 1);
                let psi_tr = syn(p1, 1, 0);
                let (cap, cap_r, cap_t, cap_z) = (syn(c0, 0, 0), syn(c1, 0, 0), syn(c0, 1, 0), syn(c0, 0, 1));
                let (cap_rr, cap_tt, cap_zz) = (syn(c2, 0, 0), syn(c0, 2, 0), syn(c0, 0, 2));
                let mut bcol = vec![0.0; nm];
                for &(i2, j2, p, v) in &self.data.b_star {
                    if i2 <= m && j2 <= m {
                        bcol[cs.index(i2, j2)] += v * (r - r0).powi(p as i32);
                    }
                }
                let bs = syn(&bcol, 0, 0);

                let (ub, eb, up, ep) = (fine_bg.u_bar[i], fine_bg.e_bar[i], fine_bg.u_prime[i], fine_bg.e_prime[i]);
                let (mut s1, mut m1, mut s2, mut m2, mut curl) = (0.0, 0.0f64, 0.0, 0.0f64, 0.0f64);
                for q in 0..np {
                    let phi_r = ub + psi_r[q];
                    let (phi_t, phi_z) = (psi_t[q], psi_z[q]);
                    let grad2 = phi_r * phi_r + phi_t * phi_t / (r * r) + phi_z * phi_z;
                    let c2 = (g - 1.0) * (fine_bg.k0 + fine_bg.phi_bar[i] + cap[q] - 0.5 * grad2);
                    let rho = (c2.max(0.0) / (g * fine_bg.inflow.s0.exp())).powf(1.0 / (g - 1.0));
                    let principal = (c2 - phi_r * phi_r) * (up + psi_rr[q])
                        + (c2 / (r * r) - phi_t * phi_t / r.powi(4)) * psi_tt[q]
                        + (c2 - phi_z * phi_z) * psi_zz[q]
                        - 2.0 * phi_r * phi_t / (r * r) * psi_rt[q]
                        - 2.0 * phi_r * phi_z * psi_rz[q]
                        - 2.0 * phi_t * phi_z / (r * r) * psi_tz[q];
                    let lower = c2 * phi_r / r
                        + phi_r * phi_t * phi_t / r.powi(3)
                        + phi_r * (eb + cap_r[q])
                        + phi_t * cap_t[q] / (r * r)
                        + phi_z * cap_z[q];
                    let e1 = r * rho / c2 * (principal + lower);
                    let lap = ep + eb / r + cap_rr[q] + cap_r[q] / r + cap_tt[q] / (r * r) + cap_zz[q];
                    let e2 = lap - rho + fine_bg.inflow.b0 + bs[q];
                    let wq = cs.weight(q);
                    s1 += wq * e1 * e1;
                    s2 += wq * e2 * e2;
                    m1 = m1.max(e1.abs());
                    m2 = m2.max(e2.abs());
                    curl = curl.max((psi_tz[q] - psi_zt[q]).abs()).max((psi_rt[q] - psi_tr[q]).abs());
                }
                (s1, m1, s2, m2, curl)
            })
            .collect();

        let w1: Vec<f64> = per_node.iter().map(|v| v.0).collect();
        let w2: Vec<f64> = per_node.iter().map(|v| v.2).collect();
        Ok(PotentialResidual {
            eq1_l2: fine_grid.integrate(&w1).sqrt(),
            eq1_max: per_node.iter().fold(0.0, |a, v| a.max(v.1)),
            eq2_l2: fine_grid.integrate(&w2).sqrt(),
            eq2_max: per_node.iter().fold(0.0, |a, v| a.max(v.3)),
            curl_max: per_node.iter().fold(0.0, |a, v| a.max(v.4)),
            n_r: fine_grid.len(),
            n_theta: nq,
            n_z: nq,
        })
    }
}

/// Successive-difference ratios, skipping pairs whose newer difference is
/// below 1e-9 of the first one (roundoff in the difference dominates there).
pub fn contraction_ratios(history: &[f64]) -> Vec<f64> {
    let floor = 1e-9 * history.first().copied().unwrap_or(0.0);
    history.windows(2).filter(|w| w[1] > floor && w[0] > 0.0).map(|w| w[1] / w[0]).collect()
}
