//! Radial finite differences, banded LU and restarted GMRES.
//!
//! All radial grids in this crate are uniform. Derivative stencils are
//! fourth order: five points centred in the interior, six points one-sided
//! at the two nodes nearest each end.

use crate::error::{Error, Origin, Result};

/// Finite-difference weights for derivatives 0..=order at `x0` from nodes `xs`.
///
/// Returns `c[k][j]`, the weight of node `j` in the k-th derivative.
pub fn fornberg(x0: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// One row of a derivative stencil: the first node index and its weights.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub start: usize,
    pub w: Vec<f64>,
}

impl Stencil {
    #[inline]
    pub fn apply(&self, f: &[f64]) -> f64 {
        self.w.iter().zip(&f[self.start..]).map(|(w, v)| w * v).sum()
    }
}

/// A uniform radial grid with precomputed derivative stencils.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub r: Vec<f64>,
    pub h: f64,
    pub d1: Vec<Stencil>,
    pub d2: Vec<Stencil>,
    /// Trapezoid weights for integrals over [r0, r1].
    pub trap: Vec<f64>,
}

impl RadialGrid {
    pub fn uniform(r0: f64, r1: f64, n: usize) -> Self {
        assert!(n >= 6, "radial grid needs at least 6 nodes");
        let h = (r1 - r0) / (n - 1) as f64;
        let r: Vec<f64> = (0..n)
            .map(|i| if i == n - 1 { r1 } else { r0 + h * i as f64 })
            .collect();
        Self::from_nodes(r)
    }

    pub fn from_nodes(r: Vec<f64>) -> Self {
        let n = r.len();
        assert!(n >= 6, "radial grid needs at least 6 nodes");
        let h = (r[n - 1] - r[0]) / (n - 1) as f64;
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for i in 0..n {
            let (start, len) = if i < 2 {
                (0, 6)
            } else if i + 2 >= n {
                (n - 6, 6)
            } else {
                (i - 2, 5)
            };
            let c = fornberg(r[i], &r[start..start + len], 2);
            d1.push(Stencil { start, w: c[1].clone() });
            d2.push(Stencil { start, w: c[2].clone() });
        }
        let mut trap = vec![h; n];
        trap[0] = 0.5 * h;
        trap[n - 1] = 0.5 * h;
        Self { r, h, d1, d2, trap }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn r0(&self) -> f64 {
        self.r[0]
    }

    pub fn r1(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    pub fn deriv1(&self, f: &[f64]) -> Vec<f64> {
        self.d1.iter().map(|s| s.apply(f)).collect()
    }

    pub fn deriv2(&self, f: &[f64]) -> Vec<f64> {
        self.d2.iter().map(|s| s.apply(f)).collect()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.trap.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Running integral from r0, exact for cubics on each interval.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        let n = self.r.len();
        let h = self.h;
        let mut out = vec![0.0; n];
        for k in 0..n - 1 {
            // integral over [r_k, r_{k+1}] of the cubic through four nearby nodes
            let s = if k == 0 { 0 } else if k + 2 >= n { n - 4 } else { k - 1 };
            let w = match k - s {
                0 => [9.0, 19.0, -5.0, 1.0],
                1 => [-1.0, 13.0, 13.0, -1.0],
                _ => [1.0, -5.0, 19.0, 9.0],
            };
            let seg: f64 = (0..4).map(|q| w[q] * f[s + q]).sum::<f64>() * h / 24.0;
            out[k + 1] = out[k] + seg;
        }
        out
    }

    /// Local 6-point Lagrange reconstruction at `x`: value, first and second derivative.
    pub fn interp(&self, f: &[f64], x: f64) -> (f64, f64, f64) {
        let w = self.interp_weights(x);
        let mut v = [0.0; 3];
        for (k, wk) in w.w.iter().enumerate() {
            let fk = f[w.start + k];
            v[0] += wk[0] * fk;
            v[1] += wk[1] * fk;
            v[2] += wk[2] * fk;
        }
        (v[0], v[1], v[2])
    }

    pub fn interp_weights(&self, x: f64) -> InterpWeights {
        let n = self.r.len();
        let t = ((x - self.r[0]) / self.h).floor();
        let k = if t < 0.0 { 0 } else { (t as usize).min(n - 2) };
        let start = k.saturating_sub(2).min(n - 6);
        let c = fornberg(x, &self.r[start..start + 6], 2);
        let w = (0..6).map(|j| [c[0][j], c[1][j], c[2][j]]).collect();
        InterpWeights { start, w }
    }
}

/// Weights for value, first and second derivative at one point.
#[derive(Debug, Clone)]
pub struct InterpWeights {
    pub start: usize,
    pub w: Vec<[f64; 3]>,
}

/// Banded matrix with LU factorization by partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    // row-major band storage, width 2*kl+ku+1 (room for pivoting fill)
    ab: Vec<f64>,
    piv: Vec<usize>,
    factored: bool,
}

impl BandedLu {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        Self { n, kl, ku, ab: vec![0.0; n * w], piv: vec![0; n], factored: false }
    }

    #[inline]
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // column offset j - i shifted so that j = i - kl maps to 0
        i * self.width() + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return 0.0;
        }
        self.ab[self.idx(i, j)]
    }

    /// In-place LU. Fails on a pivot below `rel_tol` times the largest entry.
    pub fn factor(&mut self, rel_tol: f64, origin: Origin) -> Result<()> {
        let n = self.n;
        let kl = self.kl;
        let ucols = kl + self.ku;
        let scale = self.ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Err(Error::SingularSystem { origin, msg: "zero matrix".into() });
        }
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= rel_tol * scale {
                return Err(Error::SingularSystem {
                    origin,
                    msg: format!("pivot {best:e} at row {k} of {n}"),
                });
            }
            self.piv[k] = p;
            let last_col = (k + ucols).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.ab[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.ab[ik] = l;
                for j in k + 1..=last_col {
                    let kj = self.ab[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.ab[ij] -= l * kj;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored);
        let n = self.n;
        let kl = self.kl;
        let ucols = kl + self.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.ab[self.idx(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + ucols).min(n - 1) {
                s -= self.ab[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.ab[self.idx(k, k)];
        }
    }
}

/// Outcome of a GMRES solve.
#[derive(Debug, Clone)]
pub struct GmresInfo {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Right-preconditioned restarted GMRES for `A x = b`, starting from x = 0.
///
/// `apply` computes `A v`, `precond` overwrites its argument with `M^{-1} v`.
pub fn gmres<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    restart: usize,
    max_iter: usize,
    rel_tol: f64,
    origin: Origin,
) -> Result<(Vec<f64>, GmresInfo)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, GmresInfo { iterations: 0, rel_residual: 0.0 }));
    }
    let mut total = 0;
    let mut r = b.to_vec();
    let mut rel = 1.0;
    let mut stalls = 0;
    while total < max_iter {
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= rel_tol {
            break;
        }
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
        v.push(r.iter().map(|x| x / beta).collect());
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        let start_rel = rel;
        for k in 0..restart {
            let mut z = v[k].clone();
            precond(&mut z);
            let mut w = apply(&z);
            // modified Gram-Schmidt, applied twice for stability
            for _ in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let hij = dot(&w, vj);
                    h[j][k] += hij;
                    axpy(-hij, vj, &mut w);
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let (c, s) = givens(h[k][k], h[k + 1][k]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = c * h[k][k] + s * h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            k_used = k + 1;
            total += 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= rel_tol || hn == 0.0 || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|x| x / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut dx = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &v[j], &mut dx);
        }
        precond(&mut dx);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        rel = norm(&r) / bnorm;
        if rel <= rel_tol {
            break;
        }
        if rel > 0.5 * start_rel {
            stalls += 1;
            if stalls >= 3 {
                // attainable accuracy reached: accept if it is still small
                if rel <= 1e-9 {
                    break;
                }
                return Err(Error::SingularSystem {
                    origin,
                    msg: format!("GMRES stagnated at relative residual {rel:e}"),
                });
            }
        } else {
            stalls = 0;
        }
    }
    if rel > rel_tol.max(1e-9) {
        return Err(Error::SingularSystem {
            origin,
            msg: format!("GMRES reached {total} iterations at relative residual {rel:e}"),
        });
    }
    Ok((x, GmresInfo { iterations: total, rel_residual: rel }))
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_weights_are_classical() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let c = fornberg(0.0, &xs, 2);
        let d1 = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        let d2 = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for j in 0..5 {
            assert!((c[1][j] - d1[j]).abs() < 1e-14);
            assert!((c[2][j] - d2[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_exact_on_quartics() {
        let g = RadialGrid::uniform(1.0, 1.3, 11);
        let f: Vec<f64> = g.r.iter().map(|r| r.powi(4) - 2.0 * r).collect();
        let d1 = g.deriv1(&f);
        let d2 = g.deriv2(&f);
        for (i, r) in g.r.iter().enumerate() {
            assert!((d1[i] - (4.0 * r.powi(3) - 2.0)).abs() < 1e-9);
            assert!((d2[i] - 12.0 * r * r).abs() < 1e-7);
        }
    }

    #[test]
    fn cumulative_integral_is_fourth_order() {
        let err = |n| {
            let g = RadialGrid::uniform(0.0, 1.0, n);
            let f: Vec<f64> = g.r.iter().map(|r| (3.0 * r).exp()).collect();
            let c = g.cumulative(&f);
            g.r.iter()
                .zip(&c)
                .map(|(r, v)| (v - ((3.0 * r).exp() - 1.0) / 3.0).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(21) / err(41);
        assert!(ratio > 13.0, "ratio {ratio}");
    }

    #[test]
    fn banded_lu_matches_dense_solution() {
        let n = 12;
        let mut m = BandedLu::new(n, 2, 3);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 4).min(n) {
                let v = ((i * 7 + j * 3) % 11) as f64 - 5.0 + if i == j { 0.1 } else { 0.0 };
                m.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| dot(&dense[i], &x)).collect();
        m.factor(1e-14, Origin::new("linalg", "test")).unwrap();
        m.solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 40;
        let a = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = 4.0 * v[i];
                    if i > 0 {
                        s -= 1.5 * v[i - 1];
                    }
                    if i + 1 < n {
                        s += 0.7 * v[i + 1];
                    }
                    s
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let (x, info) = gmres(a, |_| {}, &b, 20, 200, 1e-13, Origin::new("linalg", "test")).unwrap();
        let r: Vec<f64> = a(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&r) / norm(&b) < 1e-12);
        assert!(info.iterations > 0);
    }
}
