//! Cosine bases on the cross-section, quadrature and modal transforms.
//!
//! Modes are stored row-major: index `k = i * (m_z + 1) + j` for the pair
//! (i, j) of angular and axial indices.

use std::f64::consts::PI;

use serde::Serialize;

/// Orthonormal cosine family on (-a, a): `sqrt(1/(2a))` for k = 0 and
/// `sqrt(1/a) cos(k pi x / a)` for k >= 1. Derivatives at x = +-a of odd
/// order vanish for every member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineBasis {
    pub half: f64,
    pub m: usize,
}

pub type ThetaBasis = CosineBasis;
pub type ZBasis = CosineBasis;

impl CosineBasis {
    pub fn theta(theta0: f64, m: usize) -> Self {
        Self { half: theta0, m }
    }

    pub fn z(m: usize) -> Self {
        Self { half: 1.0, m }
    }

    pub fn len(&self) -> usize {
        self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Wavenumber k pi / a.
    pub fn wavenumber(&self, k: usize) -> f64 {
        k as f64 * PI / self.half
    }

    /// Eigenvalue of -d^2/dx^2.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.wavenumber(k).powi(2)
    }

    pub fn norm(&self, k: usize) -> f64 {
        if k == 0 {
            (0.5 / self.half).sqrt()
        } else {
            (1.0 / self.half).sqrt()
        }
    }

    /// d^order/dx^order of member k at x.
    pub fn eval(&self, k: usize, x: f64, order: usize) -> f64 {
        if k == 0 {
            return if order == 0 { self.norm(0) } else { 0.0 };
        }
        let w = self.wavenumber(k);
        let (s, c) = (w * x).sin_cos();
        let v = match order % 4 {
            0 => c,
            1 => -s,
            2 => -c,
            _ => s,
        };
        self.norm(k) * w.powi(order as i32) * v
    }

    /// Sup norm of member k.
    pub fn sup(&self, k: usize) -> f64 {
        self.norm(k)
    }
}

/// Orthonormal sine family `sqrt(1/a) sin(k pi x / a)`, k = 1..=m, on (-a, a).
///
/// These are the odd partners of [`CosineBasis`]: they vanish at x = +-a
/// together with all even derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineBasis {
    pub half: f64,
    pub m: usize,
}

impl SineBasis {
    pub fn z(m: usize) -> Self {
        Self { half: 1.0, m }
    }

    pub fn wavenumber(&self, k: usize) -> f64 {
        k as f64 * PI / self.half
    }

    /// d^order/dx^order of member k (k >= 1) at x.
    pub fn eval(&self, k: usize, x: f64, order: usize) -> f64 {
        let w = self.wavenumber(k);
        let (s, c) = (w * x).sin_cos();
        let v = match order % 4 {
            0 => s,
            1 => c,
            2 => -s,
            _ => -c,
        };
        (1.0 / self.half).sqrt() * w.powi(order as i32) * v
    }
}

/// One-dimensional quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature1D {
    /// Gauss-Legendre rule with n nodes on [a, b].
    pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for i in 0..(n + 1) / 2 {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = mid - half * x;
            nodes[n - 1 - i] = mid + half * x;
            weights[i] = w * half;
            weights[n - 1 - i] = w * half;
        }
        Self { nodes, weights }
    }

    /// Endpoint-inclusive trapezoid rule with n nodes on [a, b].
    ///
    /// On (-a, a) it integrates cos(k pi x / a) exactly for k < 2(n - 1),
    /// so products of cosine modes up to m are exact once n >= 2m + 2.
    pub fn trapezoid(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 2);
        let h = (b - a) / (n - 1) as f64;
        let nodes = (0..n)
            .map(|q| if q == n - 1 { b } else { a + h * q as f64 })
            .collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor rule on D = (-theta0, theta0) x (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorQuadrature {
    pub theta: Quadrature1D,
    pub z: Quadrature1D,
}

impl TensorQuadrature {
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut s = 0.0;
        for (t, wt) in self.theta.nodes.iter().zip(&self.theta.weights) {
            for (z, wz) in self.z.nodes.iter().zip(&self.z.weights) {
                s += wt * wz * f(*t, *z);
            }
        }
        s
    }
}

/// Gauss-Legendre tensor rule with the given node counts.
pub fn quadrature_rule(n_theta: usize, n_z: usize, theta0: f64) -> TensorQuadrature {
    TensorQuadrature {
        theta: Quadrature1D::gauss_legendre(n_theta, -theta0, theta0),
        z: Quadrature1D::gauss_legendre(n_z, -1.0, 1.0),
    }
}

/// Sampled basis functions and derivatives on a fixed set of nodes.
#[derive(Debug, Clone)]
pub struct Table1D {
    pub n_modes: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `d[order][k * n_nodes + q]`, order 0..=2.
    pub d: [Vec<f64>; 3],
    pub eigen: Vec<f64>,
}

impl Table1D {
    pub fn cosine(basis: &CosineBasis, rule: &Quadrature1D) -> Self {
        let nq = rule.len();
        let nm = basis.len();
        let mut d = [vec![0.0; nm * nq], vec![0.0; nm * nq], vec![0.0; nm * nq]];
        for k in 0..nm {
            for (q, x) in rule.nodes.iter().enumerate() {
                for (o, dd) in d.iter_mut().enumerate() {
                    dd[k * nq + q] = basis.eval(k, *x, o);
                }
            }
        }
        Self {
            n_modes: nm,
            nodes: rule.nodes.clone(),
            weights: rule.weights.clone(),
            d,
            eigen: (0..nm).map(|k| basis.eigenvalue(k)).collect(),
        }
    }

    /// Single constant mode of value 1 with unit weight: the angular factor
    /// of an axisymmetric field.
    pub fn unit() -> Self {
        Self {
            n_modes: 1,
            nodes: vec![0.0],
            weights: vec![1.0],
            d: [vec![1.0], vec![0.0], vec![0.0]],
            eigen: vec![0.0],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn at(&self, order: usize, k: usize, q: usize) -> f64 {
        self.d[order][k * self.nodes.len() + q]
    }
}

/// Cross-section discretization: a tensor of an angular and an axial table.
#[derive(Debug, Clone)]
pub struct CrossSection {
    pub theta: Table1D,
    pub z: Table1D,
    pub theta_basis: Option<CosineBasis>,
    pub z_basis: CosineBasis,
}

impl CrossSection {
    /// Full 3D cross-section with trapezoid rules of 2m + 2 nodes per direction.
    pub fn new(theta0: f64, m: usize) -> Self {
        Self::with_nodes(theta0, m, 2 * m + 2, 2 * m + 2)
    }

    pub fn with_nodes(theta0: f64, m: usize, n_theta: usize, n_z: usize) -> Self {
        let tb = CosineBasis::theta(theta0, m);
        let zb = CosineBasis::z(m);
        Self {
            theta: Table1D::cosine(&tb, &Quadrature1D::trapezoid(n_theta, -theta0, theta0)),
            z: Table1D::cosine(&zb, &Quadrature1D::trapezoid(n_z, -1.0, 1.0)),
            theta_basis: Some(tb),
            z_basis: zb,
        }
    }

    pub fn with_rule(theta0: f64, m: usize, rule: &TensorQuadrature) -> Self {
        let tb = CosineBasis::theta(theta0, m);
        let zb = CosineBasis::z(m);
        Self {
            theta: Table1D::cosine(&tb, &rule.theta),
            z: Table1D::cosine(&zb, &rule.z),
            theta_basis: Some(tb),
            z_basis: zb,
        }
    }

    /// Axisymmetric section: z modes only, angular factor identically 1.
    pub fn axisymmetric(m: usize, n_z: usize) -> Self {
        let zb = CosineBasis::z(m);
        Self {
            theta: Table1D::unit(),
            z: Table1D::cosine(&zb, &Quadrature1D::trapezoid(n_z, -1.0, 1.0)),
            theta_basis: None,
            z_basis: zb,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.theta.n_modes * self.z.n_modes
    }

    pub fn n_points(&self) -> usize {
        self.theta.n_nodes() * self.z.n_nodes()
    }

    pub fn mz(&self) -> usize {
        self.z.n_modes
    }

    pub fn mode(&self, k: usize) -> (usize, usize) {
        (k / self.z.n_modes, k % self.z.n_modes)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.z.n_modes + j
    }

    /// (mu_i, tau_j) for mode k.
    pub fn eigen(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.mode(k);
        (self.theta.eigen[i], self.z.eigen[j])
    }

    /// Grid point (theta, z) of flat point index p (theta outer).
    pub fn point(&self, p: usize) -> (f64, f64) {
        let nz = self.z.n_nodes();
        (self.theta.nodes[p / nz], self.z.nodes[p % nz])
    }

    pub fn weight(&self, p: usize) -> f64 {
        let nz = self.z.n_nodes();
        self.theta.weights[p / nz] * self.z.weights[p % nz]
    }

    /// Field values (or derivatives of order dt in theta, dz in z) at the grid.
    pub fn synthesize(&self, coeffs: &[f64], dt: usize, dz: usize, out: &mut [f64]) {
        let (mt, mz) = (self.theta.n_modes, self.z.n_modes);
        let (nt, nz) = (self.theta.n_nodes(), self.z.n_nodes());
        debug_assert_eq!(coeffs.len(), mt * mz);
        let zt = &self.z.d[dz];
        let tt = &self.theta.d[dt];
        let mut tmp = vec![0.0; mt * nz];
        for i in 0..mt {
            let row = &mut tmp[i * nz..(i + 1) * nz];
            for j in 0..mz {
                let c = coeffs[i * mz + j];
                if c == 0.0 {
                    continue;
                }
                let zrow = &zt[j * nz..(j + 1) * nz];
                for (v, b) in row.iter_mut().zip(zrow) {
                    *v += c * b;
                }
            }
        }
        out.fill(0.0);
        for i in 0..mt {
            let trow = &tt[i * nt..(i + 1) * nt];
            let row = &tmp[i * nz..(i + 1) * nz];
            for (a, ta) in trow.iter().enumerate() {
                if *ta == 0.0 {
                    continue;
                }
                let o = &mut out[a * nz..(a + 1) * nz];
                for (v, r) in o.iter_mut().zip(row) {
                    *v += ta * r;
                }
            }
        }
    }

    /// Modal coefficients of grid samples by the tensor quadrature.
    pub fn project(&self, grid: &[f64], out: &mut [f64]) {
        let (mt, mz) = (self.theta.n_modes, self.z.n_modes);
        let (nt, nz) = (self.theta.n_nodes(), self.z.n_nodes());
        debug_assert_eq!(grid.len(), nt * nz);
        let zt = &self.z.d[0];
        let tt = &self.theta.d[0];
        // contract over z first
        let mut tmp = vec![0.0; nt * mz];
        for a in 0..nt {
            let g = &grid[a * nz..(a + 1) * nz];
            for j in 0..mz {
                let zrow = &zt[j * nz..(j + 1) * nz];
                let mut s = 0.0;
                for b in 0..nz {
                    s += self.z.weights[b] * zrow[b] * g[b];
                }
                tmp[a * mz + j] = s;
            }
        }
        for i in 0..mt {
            let trow = &tt[i * nt..(i + 1) * nt];
            for j in 0..mz {
                let mut s = 0.0;
                for a in 0..nt {
                    s += self.theta.weights[a] * trow[a] * tmp[a * mz + j];
                }
                out[i * mz + j] = s;
            }
        }
    }

    /// Evaluate a modal expansion (or a derivative) at an arbitrary point.
    pub fn eval_at(&self, coeffs: &[f64], theta: f64, z: f64, dt: usize, dz: usize) -> f64 {
        let mz = self.z.n_modes;
        let mut s = 0.0;
        for i in 0..self.theta.n_modes {
            let ti = match &self.theta_basis {
                Some(b) => b.eval(i, theta, dt),
                None => {
                    if dt == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if ti == 0.0 {
                continue;
            }
            for j in 0..mz {
                s += coeffs[i * mz + j] * ti * self.z_basis.eval(j, z, dz);
            }
        }
        s
    }

    /// Sup norm of the basis product for mode k.
    pub fn mode_sup(&self, k: usize) -> f64 {
        let (i, j) = self.mode(k);
        let t = self.theta_basis.map(|b| b.sup(i)).unwrap_or(1.0);
        t * self.z_basis.sup(j)
    }
}

/// Radial coefficient functions of a modal expansion, one row per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalField {
    pub n_theta_modes: usize,
    pub n_z_modes: usize,
    pub n_r: usize,
    /// `data[k * n_r + node]`
    pub data: Vec<f64>,
}

impl ModalField {
    pub fn zeros(n_theta_modes: usize, n_z_modes: usize, n_r: usize) -> Self {
        Self { n_theta_modes, n_z_modes, n_r, data: vec![0.0; n_theta_modes * n_z_modes * n_r] }
    }

    pub fn for_section(cs: &CrossSection, n_r: usize) -> Self {
        Self::zeros(cs.theta.n_modes, cs.z.n_modes, n_r)
    }

    pub fn n_modes(&self) -> usize {
        self.n_theta_modes * self.n_z_modes
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_r..(k + 1) * self.n_r]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n_r..(k + 1) * self.n_r]
    }

    pub fn get(&self, i: usize, j: usize, node: usize) -> f64 {
        self.data[(i * self.n_z_modes + j) * self.n_r + node]
    }

    /// Coefficients of all modes at one radial node.
    pub fn column(&self, node: usize) -> Vec<f64> {
        (0..self.n_modes()).map(|k| self.data[k * self.n_r + node]).collect()
    }

    pub fn set_column(&mut self, node: usize, values: &[f64]) {
        for (k, v) in values.iter().enumerate() {
            self.data[k * self.n_r + node] = *v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, a: f64, other: &ModalField) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> ModalField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// Energy in modes whose angular (axis 0) or axial (axis 1) index is odd.
    pub fn odd_energy(&self, axis: usize) -> f64 {
        let mut s = 0.0;
        for k in 0..self.n_modes() {
            let (i, j) = (k / self.n_z_modes, k % self.n_z_modes);
            let idx = if axis == 0 { i } else { j };
            if idx % 2 == 1 {
                s += self.row(k).iter().map(|v| v * v).sum::<f64>();
            }
        }
        s
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Sparse list of modal coefficients `(i, j, value)` as read from a config table.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModalTable {
    pub entries: Vec<(usize, usize, f64)>,
}

impl ModalTable {
    pub fn new(entries: Vec<(usize, usize, f64)>) -> Self {
        Self { entries }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.2 == 0.0)
    }

    /// Coefficients in the mode order of `cs`; entries beyond the truncation are dropped.
    pub fn dense(&self, cs: &CrossSection) -> Vec<f64> {
        let mut out = vec![0.0; cs.n_modes()];
        for &(i, j, v) in &self.entries {
            if i < cs.theta.n_modes && j < cs.z.n_modes {
                out[cs.index(i, j)] += v;
            }
        }
        out
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { entries: self.entries.iter().map(|&(i, j, v)| (i, j, a * v)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let q = Quadrature1D::gauss_legendre(5, -1.0, 2.0);
        let v = q.integrate(|x| x.powi(9) - 3.0 * x.powi(4));
        let exact = (2f64.powi(10) - 1.0) / 10.0 - 3.0 * (2f64.powi(5) + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-11);
    }

    #[test]
    fn trapezoid_is_exact_for_cosine_products() {
        let b = CosineBasis::theta(0.7, 6);
        let q = Quadrature1D::trapezoid(14, -0.7, 0.7);
        for i in 0..=6 {
            for k in 0..=6 {
                let v = q.integrate(|x| b.eval(i, x, 0) * b.eval(k, x, 0));
                let e = if i == k { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-13, "({i},{k}) -> {v}");
            }
        }
    }
}
