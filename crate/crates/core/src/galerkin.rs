//! Galerkin-reduced radial two-point problem shared by both perturbation solvers.
//!
//! For every cross-section mode k the unknowns are two radial functions
//! U_k (the hyperbolic potential) and V_k (the elliptic potential). The
//! equations, projected on mode k, read
//!
//! ```text
//! <A11 u_rr + 2 A12 u_rt + 2 A13 u_rz + A22 u_tt + 2 A23 u_tz + A33 u_zz>_k
//!     + a1 U_k' + b1 V_k' + b2 V_k = F_k
//! V_k'' + V_k' / r - (mu_k / r^2 + tau_k) V_k + a2 U_k' - b3 V_k = G_k
//! U_k(r0) = 0,  U_k'(r0) = H_k,  V_k'(r0) = 0,  V_k(r1) = 0.
//! ```
//!
//! The A-coefficients are the background values plus grid-sampled
//! perturbations; the perturbation part couples the modes and is applied
//! matrix-free by synthesis, pointwise multiplication and projection.

use rayon::prelude::*;

use crate::error::{Error, Origin, Result};
use crate::linalg::{gmres, BandedLu, GmresInfo, RadialGrid};
use crate::spectral::{CrossSection, ModalField};

/// Background radial profiles entering the modal operator.
#[derive(Debug, Clone)]
pub struct RadialCoeffs {
    pub a11: Vec<f64>,
    pub a22: Vec<f64>,
    pub a33: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Perturbation parts of the principal coefficients on the cross-section grid.
///
/// Each vector holds `n_r * n_points` samples, node-major. The diagonal
/// entries are stored as differences from the background profile.
#[derive(Debug, Clone)]
pub struct PrincipalPerturbation {
    pub d_a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a13: Vec<f64>,
    pub d_a22: Vec<f64>,
    pub a23: Vec<f64>,
    pub d_a33: Vec<f64>,
}

impl PrincipalPerturbation {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_a11: vec![0.0; n],
            a12: vec![0.0; n],
            a13: vec![0.0; n],
            d_a22: vec![0.0; n],
            a23: vec![0.0; n],
            d_a33: vec![0.0; n],
        }
    }

    fn fields(&self) -> [&Vec<f64>; 6] {
        [&self.d_a11, &self.a12, &self.a13, &self.d_a22, &self.a23, &self.d_a33]
    }
}

/// The modal two-point boundary value problem.
#[derive(Debug, Clone)]
pub struct ModalSystem {
    pub cs: CrossSection,
    pub grid: RadialGrid,
    pub coeffs: RadialCoeffs,
    pub pert: Option<PrincipalPerturbation>,
    /// Projected right side of the hyperbolic equation, per mode and node.
    pub load_u: ModalField,
    /// Projected right side of the elliptic equation.
    pub load_v: ModalField,
    /// Entrance values of U_k'.
    pub entrance_slope: Vec<f64>,
}

/// Solver controls for [`ModalSystem::solve`].
#[derive(Debug, Clone, Copy)]
pub struct BvpOptions {
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
    pub pivot_tol: f64,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-13, restart: 40, max_iter: 400, pivot_tol: 1e-14 }
    }
}

// (derivative order in theta, in z) of the six principal terms, and the
// radial derivative of U they act on
const TERMS: [(usize, usize, usize, f64); 6] = [
    (0, 0, 2, 1.0), // A11 u_rr
    (1, 0, 1, 2.0), // 2 A12 u_rt
    (0, 1, 1, 2.0), // 2 A13 u_rz
    (2, 0, 0, 1.0), // A22 u_tt
    (1, 1, 0, 2.0), // 2 A23 u_tz
    (0, 2, 0, 1.0), // A33 u_zz
];

impl ModalSystem {
    pub fn n_modes(&self) -> usize {
        self.cs.n_modes()
    }

    pub fn n_r(&self) -> usize {
        self.grid.len()
    }

    pub fn unknowns(&self) -> usize {
        2 * self.n_modes() * self.n_r()
    }

    /// Mode-diagonal coefficients (of U'', U', U) at every node for mode k.
    fn diagonal(&self, k: usize) -> Vec<[f64; 3]> {
        let n = self.n_r();
        let (mu, tau) = self.cs.eigen(k);
        let c = &self.coeffs;
        let mut out: Vec<[f64; 3]> = (0..n)
            .map(|i| [c.a11[i], c.a1[i], -mu * c.a22[i] - tau * c.a33[i]])
            .collect();
        if let Some(p) = &self.pert {
            let (ki, kj) = self.cs.mode(k);
            let np = self.cs.n_points();
            let nz = self.cs.z.n_nodes();
            for (node, o) in out.iter_mut().enumerate() {
                for (f, (dt, dz, dr, w)) in p.fields().iter().zip(TERMS) {
                    let g = &f[node * np..(node + 1) * np];
                    let mut s = 0.0;
                    for (q, gv) in g.iter().enumerate() {
                        if *gv == 0.0 {
                            continue;
                        }
                        let (a, b) = (q / nz, q % nz);
                        s += self.cs.weight(q)
                            * gv
                            * self.cs.theta.at(dt, ki, a)
                            * self.cs.z.at(dz, kj, b)
                            * self.cs.theta.at(0, ki, a)
                            * self.cs.z.at(0, kj, b);
                    }
                    o[2 - dr] += w * s;
                }
            }
        }
        out
    }

    /// Sparse rows of the mode-k block for the given diagonal coefficients.
    fn block_rows(&self, k: usize, diag: &[[f64; 3]]) -> Vec<Vec<(usize, f64)>> {
        let n = self.n_r();
        let (mu, tau) = self.cs.eigen(k);
        let g = &self.grid;
        let c = &self.coeffs;
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(2 * n);
        rows.push(vec![(0, 1.0)]);
        rows.push(g.d1[0].w.iter().enumerate().map(|(q, w)| (2 * (g.d1[0].start + q) + 1, *w)).collect());
        rows.push(g.d1[0].w.iter().enumerate().map(|(q, w)| (2 * (g.d1[0].start + q), *w)).collect());
        for i in 1..n - 1 {
            let r = g.r[i];
            let [c2, c1, c0] = diag[i];
            let mut u = Vec::new();
            let (s1, s2) = (&g.d1[i], &g.d2[i]);
            for q in 0..s2.w.len() {
                let node = s2.start + q;
                let mut vu = c2 * s2.w[q] + c1 * s1.w[q];
                let mut vv = c.b1[i] * s1.w[q];
                if node == i {
                    vu += c0;
                    vv += c.b2[i];
                }
                u.push((2 * node, vu));
                u.push((2 * node + 1, vv));
            }
            rows.push(u);
            let mut v = Vec::new();
            for q in 0..s2.w.len() {
                let node = s2.start + q;
                let mut vv = s2.w[q] + s1.w[q] / r;
                if node == i {
                    vv -= mu / (r * r) + tau + c.b3[i];
                }
                v.push((2 * node + 1, vv));
                v.push((2 * node, c.a2[i] * s1.w[q]));
            }
            rows.push(v);
        }
        rows.push(vec![(2 * (n - 1) + 1, 1.0)]);
        rows
    }

    fn factor_block(&self, k: usize, pivot_tol: f64) -> Result<BandedLu> {
        let diag = self.diagonal(k);
        let rows = self.block_rows(k, &diag);
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, row) in rows.iter().enumerate() {
            for (j, _) in row {
                if *j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        let mut lu = BandedLu::new(rows.len(), kl, ku);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row {
                lu.add(i, *j, *v);
            }
        }
        let (mi, mj) = self.cs.mode(k);
        lu.factor(pivot_tol, Origin::new("galerkin", "solve_modal_bvp")).map_err(|e| match e {
            Error::SingularSystem { origin, msg } => {
                Error::SingularSystem { origin, msg: format!("mode ({mi},{mj}): {msg}") }
            }
            other => other,
        })?;
        Ok(lu)
    }

    /// Apply the full operator to x (layout: mode-major blocks of interleaved U, V).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let nm = self.n_modes();
        let n = self.n_r();
        let g = &self.grid;
        let c = &self.coeffs;
        // radial derivatives of every mode
        let mut u = vec![0.0; nm * n];
        let mut v = vec![0.0; nm * n];
        for k in 0..nm {
            for i in 0..n {
                u[k * n + i] = x[k * 2 * n + 2 * i];
                v[k * n + i] = x[k * 2 * n + 2 * i + 1];
            }
        }
        let deriv = |f: &[f64], second: bool| -> Vec<f64> {
            let mut out = vec![0.0; nm * n];
            for k in 0..nm {
                let row = &f[k * n..(k + 1) * n];
                let d = if second { g.deriv2(row) } else { g.deriv1(row) };
                out[k * n..(k + 1) * n].copy_from_slice(&d);
            }
            out
        };
        let (u1, u2, v1, v2) = (deriv(&u, false), deriv(&u, true), deriv(&v, false), deriv(&v, true));

        // mode-coupling contribution of the perturbed principal part, per node
        let coupling: Vec<Vec<f64>> = match &self.pert {
            None => Vec::new(),
            Some(p) => (1..n - 1)
                .into_par_iter()
                .map(|i| {
                    let np = self.cs.n_points();
                    let col = |f: &[f64]| (0..nm).map(|k| f[k * n + i]).collect::<Vec<f64>>();
                    let cols = [col(&u), col(&u1), col(&u2)];
                    let mut acc = vec![0.0; np];
                    let mut tmp = vec![0.0; np];
                    for (f, (dt, dz, dr, w)) in p.fields().iter().zip(TERMS) {
                        let fs = &f[i * np..(i + 1) * np];
                        if fs.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        self.cs.synthesize(&cols[dr], dt, dz, &mut tmp);
                        for q in 0..np {
                            acc[q] += w * fs[q] * tmp[q];
                        }
                    }
                    let mut out = vec![0.0; nm];
                    self.cs.project(&acc, &mut out);
                    out
                })
                .collect(),
        };

        let mut y = vec![0.0; x.len()];
        for k in 0..nm {
            let (mu, tau) = self.cs.eigen(k);
            let b = &mut y[k * 2 * n..(k + 1) * 2 * n];
            let at = |f: &[f64], i: usize| f[k * n + i];
            b[0] = at(&u, 0);
            b[1] = at(&v1, 0);
            b[2] = at(&u1, 0);
            for i in 1..n - 1 {
                let r = g.r[i];
                let mut eu = c.a11[i] * at(&u2, i) + c.a1[i] * at(&u1, i)
                    - (mu * c.a22[i] + tau * c.a33[i]) * at(&u, i)
                    + c.b1[i] * at(&v1, i)
                    + c.b2[i] * at(&v, i);
                if !coupling.is_empty() {
                    eu += coupling[i - 1][k];
                }
                let ev = at(&v2, i) + at(&v1, i) / r - (mu / (r * r) + tau + c.b3[i]) * at(&v, i)
                    + c.a2[i] * at(&u1, i);
                b[2 * i + 1] = eu;
                b[2 * i + 2] = ev;
            }
            b[2 * n - 1] = at(&v, n - 1);
        }
        y
    }

    /// Right-hand side vector in the layout of [`ModalSystem::apply`].
    pub fn rhs(&self) -> Vec<f64> {
        let nm = self.n_modes();
        let n = self.n_r();
        let mut b = vec![0.0; 2 * nm * n];
        for k in 0..nm {
            let blk = &mut b[k * 2 * n..(k + 1) * 2 * n];
            blk[2] = self.entrance_slope[k];
            for i in 1..n - 1 {
                blk[2 * i + 1] = self.load_u.row(k)[i];
                blk[2 * i + 2] = self.load_v.row(k)[i];
            }
        }
        b
    }

    pub fn pack(&self, u: &ModalField, v: &ModalField) -> Vec<f64> {
        let nm = self.n_modes();
        let n = self.n_r();
        let mut x = vec![0.0; 2 * nm * n];
        for k in 0..nm {
            for i in 0..n {
                x[k * 2 * n + 2 * i] = u.row(k)[i];
                x[k * 2 * n + 2 * i + 1] = v.row(k)[i];
            }
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (ModalField, ModalField) {
        let n = self.n_r();
        let mut u = ModalField::for_section(&self.cs, n);
        let mut v = ModalField::for_section(&self.cs, n);
        for k in 0..self.n_modes() {
            for i in 0..n {
                u.row_mut(k)[i] = x[k * 2 * n + 2 * i];
                v.row_mut(k)[i] = x[k * 2 * n + 2 * i + 1];
            }
        }
        (u, v)
    }

    /// Solve for (U, V); returns the two modal fields and GMRES statistics.
    pub fn solve(&self, opts: &BvpOptions) -> Result<(ModalField, ModalField, GmresInfo)> {
        let (x, info) = self.solve_rhs(&self.rhs(), opts)?;
        let (u, v) = self.unpack(&x);
        Ok((u, v, info))
    }

    /// Solve the discrete system for an arbitrary right side in packed layout.
    pub fn solve_rhs(&self, b: &[f64], opts: &BvpOptions) -> Result<(Vec<f64>, GmresInfo)> {
        let o = Origin::new("galerkin", "solve_modal_bvp");
        let nm = self.n_modes();
        let n = self.n_r();
        if b.iter().all(|v| *v == 0.0) {
            return Ok((b.to_vec(), GmresInfo { iterations: 0, rel_residual: 0.0 }));
        }
        let blocks: Vec<BandedLu> =
            (0..nm).into_par_iter().map(|k| self.factor_block(k, opts.pivot_tol)).collect::<Result<_>>()?;
        let precond = |z: &mut [f64]| {
            z.par_chunks_mut(2 * n).zip(blocks.par_iter()).for_each(|(blk, lu)| lu.solve_in_place(blk));
        };
        if self.pert.is_none() {
            // block diagonal: the preconditioner is the exact inverse
            let mut x = b.to_vec();
            precond(&mut x);
            return Ok((x, GmresInfo { iterations: 0, rel_residual: 0.0 }));
        }
        gmres(|v| self.apply(v), precond, b, opts.restart, opts.max_iter, opts.rel_tol, o)
    }

    /// Max-norm residual of the discrete equations for a candidate solution.
    pub fn residual(&self, u: &ModalField, v: &ModalField) -> f64 {
        let x = self.pack(u, v);
        let ax = self.apply(&x);
        ax.iter().zip(self.rhs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// The six coupling matrices at one node, row = test mode, column = trial mode.
    ///
    /// Entries follow the projected operator: A1 multiplies U'', A2 and A3
    /// multiply U', A5 multiplies U, A4 and A6 enter with a minus sign on U.
    pub fn coupling_matrices(&self, node: usize) -> [Vec<f64>; 6] {
        let nm = self.n_modes();
        let np = self.cs.n_points();
        let nz = self.cs.z.n_nodes();
        let c = &self.coeffs;
        let bgv = [c.a11[node], 0.0, 0.0, c.a22[node], 0.0, c.a33[node]];
        let mut fields: [Vec<f64>; 6] = Default::default();
        for (t, f) in fields.iter_mut().enumerate() {
            *f = vec![bgv[t]; np];
            if let Some(p) = &self.pert {
                for (q, v) in f.iter_mut().enumerate() {
                    *v += p.fields()[t][node * np + q];
                }
            }
        }
        let mut mats: [Vec<f64>; 6] = Default::default();
        for (t, (dt, dz, _dr, w)) in TERMS.iter().enumerate() {
            let mut m = vec![0.0; nm * nm];
            for row in 0..nm {
                let (ki, kj) = self.cs.mode(row);
                for col in 0..nm {
                    let (i, j) = self.cs.mode(col);
                    let mut s = 0.0;
                    for q in 0..np {
                        let (a, b) = (q / nz, q % nz);
                        let trial = self.cs.theta.at(*dt, i, a) * self.cs.z.at(*dz, j, b);
                        let test = self.cs.theta.at(0, ki, a) * self.cs.z.at(0, kj, b);
                        s += self.cs.weight(q) * fields[t][q] * trial * test;
                    }
                    m[row * nm + col] = w * s;
                }
            }
            // the second-derivative terms carry -mu, -tau; report them positive
            if t == 3 || t == 5 {
                m.iter_mut().for_each(|v| *v = -*v);
            }
            mats[t] = m;
        }
        mats
    }
}

/// Discrete H^1 norm of a modal pair over the nozzle.
pub fn h1_norm(cs: &CrossSection, grid: &RadialGrid, u: &ModalField, v: &ModalField) -> f64 {
    let mut s = 0.0;
    for f in [u, v] {
        for k in 0..f.n_modes() {
            let (mu, tau) = cs.eigen(k);
            let row = f.row(k);
            let d = grid.deriv1(row);
            let integrand: Vec<f64> = row
                .iter()
                .zip(&d)
                .zip(&grid.r)
                .map(|((a, b), r)| (1.0 + mu / (r * r) + tau) * a * a + b * b)
                .collect();
            s += grid.integrate(&integrand);
        }
    }
    s.sqrt()
}

/// Discrete H^4 proxy: modal weights to the fourth power plus radial
/// derivatives up to second order.
pub fn h4_proxy_norm(cs: &CrossSection, grid: &RadialGrid, fields: &[&ModalField]) -> f64 {
    let mut s = 0.0;
    for f in fields {
        for k in 0..f.n_modes() {
            let (mu, tau) = cs.eigen(k);
            let lam = 1.0 + mu + tau;
            let row = f.row(k);
            let d1 = grid.deriv1(row);
            let d2 = grid.deriv2(row);
            let integrand: Vec<f64> = (0..row.len())
                .map(|i| lam.powi(4) * row[i] * row[i] + lam.powi(3) * d1[i] * d1[i] + lam.powi(2) * d2[i] * d2[i])
                .collect();
            s += grid.integrate(&integrand);
        }
    }
    s.sqrt()
}
