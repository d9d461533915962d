use std::f64::consts::PI;

use epnozzle_core::spectral::*;
use proptest::prelude::*;

const THETA0: f64 = 0.6;

#[test]
fn gauss_legendre_tensor_rule_normalization_and_orthogonality() {
    let m = 4;
    let tb = CosineBasis::theta(THETA0, m);
    let zb = CosineBasis::z(m);
    let q = quadrature_rule(2 * (m + 1), 2 * (m + 1), THETA0);
    let v = q.integrate(|t, z| tb.eval(0, t, 0).powi(2) * zb.eval(0, z, 0).powi(2));
    assert!((v - 1.0).abs() < 1e-13);
    // cosine products are not polynomials: a rule well above 2(m+1) nodes is
    // needed before they integrate to roundoff
    let q = quadrature_rule(24, 24, THETA0);
    let v = q.integrate(|t, z| tb.eval(1, t, 0) * tb.eval(2, t, 0) * zb.eval(0, z, 0).powi(2));
    assert!(v.abs() < 1e-13);
}

#[test]
fn gauss_legendre_integrates_quadratic_exactly() {
    let q = quadrature_rule(4, 4, THETA0);
    let v = q.integrate(|t, z| t * t + z * z);
    let exact = 2.0 * THETA0 * (THETA0 * THETA0 / 3.0) * 2.0 + 2.0 * THETA0 * (2.0 / 3.0);
    assert!((v - exact).abs() < 1e-12);
}

#[test]
fn projection_of_single_modes() {
    let cs = CrossSection::new(THETA0, 5);
    let n = cs.n_points();
    let mut grid = vec![0.0; n];
    let mut c = vec![0.0; cs.n_modes()];
    let tb = CosineBasis::theta(THETA0, 5);
    let zb = CosineBasis::z(5);
    for p in 0..n {
        let (t, z) = cs.point(p);
        grid[p] = tb.eval(2, t, 0) * zb.eval(3, z, 0);
    }
    cs.project(&grid, &mut c);
    for k in 0..cs.n_modes() {
        let e = if cs.mode(k) == (2, 3) { 1.0 } else { 0.0 };
        assert!((c[k] - e).abs() <= 1e-13, "mode {:?}: {}", cs.mode(k), c[k]);
    }
    cs.project(&vec![0.0; n], &mut c);
    assert!(c.iter().all(|v| *v == 0.0));

    for p in 0..n {
        let (t, z) = cs.point(p);
        grid[p] = (PI * t / THETA0).cos() * (PI * z).cos();
    }
    cs.project(&grid, &mut c);
    assert!((c[cs.index(1, 1)] - THETA0.sqrt()).abs() <= 1e-12);
}

#[test]
fn constant_mode_synthesizes_constant() {
    let cs = CrossSection::new(THETA0, 3);
    let mut c = vec![0.0; cs.n_modes()];
    c[0] = 1.0;
    let mut g = vec![0.0; cs.n_points()];
    cs.synthesize(&c, 0, 0, &mut g);
    let expect = 1.0 / (2.0 * THETA0).sqrt() / 2f64.sqrt();
    assert!(g.iter().all(|v| (v - expect).abs() < 1e-15));
}

#[test]
fn theta_derivative_of_first_mode() {
    let cs = CrossSection::new(THETA0, 3);
    let mut c = vec![0.0; cs.n_modes()];
    c[cs.index(1, 0)] = 1.0;
    let mut g = vec![0.0; cs.n_points()];
    cs.synthesize(&c, 1, 0, &mut g);
    let mu1 = (PI / THETA0).powi(2);
    for p in 0..cs.n_points() {
        let (t, _) = cs.point(p);
        let direct = -mu1.sqrt() * (1.0 / THETA0).sqrt() * (PI * t / THETA0).sin() / 2f64.sqrt();
        assert!((g[p] - direct).abs() <= 1e-12);
    }
}

#[test]
fn eigen_relation_by_second_differences() {
    let tb = CosineBasis::theta(THETA0, 4);
    let zb = CosineBasis::z(4);
    let err = |h: f64| {
        let mut e: f64 = 0.0;
        for k in 1..=4 {
            for x in [-0.31, 0.05, 0.27] {
                let d2 = (tb.eval(k, x + h, 0) - 2.0 * tb.eval(k, x, 0) + tb.eval(k, x - h, 0)) / (h * h);
                e = e.max((d2 + tb.eigenvalue(k) * tb.eval(k, x, 0)).abs());
                let d2 = (zb.eval(k, x + h, 0) - 2.0 * zb.eval(k, x, 0) + zb.eval(k, x - h, 0)) / (h * h);
                e = e.max((d2 + zb.eigenvalue(k) * zb.eval(k, x, 0)).abs());
            }
        }
        e
    };
    let order = (err(1e-3) / err(5e-4)).log2();
    assert!((order - 2.0).abs() < 0.1, "order {order}");
}

#[test]
fn wall_derivatives_vanish() {
    let tb = CosineBasis::theta(THETA0, 8);
    let zb = CosineBasis::z(8);
    for k in 0..=8 {
        for s in [-1.0, 1.0] {
            for o in [1, 3] {
                assert!(tb.eval(k, s * THETA0, o).abs() <= 1e-12 * tb.wavenumber(k).max(1.0).powi(o as i32));
                assert!(zb.eval(k, s, o).abs() <= 1e-12 * zb.wavenumber(k).max(1.0).powi(o as i32));
            }
        }
    }
}

#[test]
fn synthesized_fields_are_even_across_walls() {
    let cs = CrossSection::new(THETA0, 6);
    let c: Vec<f64> = (0..cs.n_modes()).map(|k| ((k * 37 % 11) as f64 - 5.0) / (1.0 + k as f64)).collect();
    for h in [1e-3, 1e-2, 0.1] {
        for z in [-0.4, 0.3] {
            for s in [-1.0, 1.0] {
                let t = s * THETA0;
                let d = cs.eval_at(&c, t + h, z, 0, 0) - cs.eval_at(&c, t - h, z, 0, 0);
                assert!(d.abs() < 1e-12);
                let d3 = cs.eval_at(&c, t + h, z, 1, 0) + cs.eval_at(&c, t - h, z, 1, 0);
                assert!(d3.abs() < 1e-11);
            }
            let d = cs.eval_at(&c, 0.2, 1.0 + h, 0, 0) - cs.eval_at(&c, 0.2, 1.0 - h, 0, 0);
            assert!(d.abs() < 1e-12);
        }
    }
}

#[test]
fn sine_family_vanishes_at_walls_with_even_derivatives() {
    let sb = SineBasis::z(6);
    for k in 1..=6 {
        for s in [-1.0, 1.0] {
            assert!(sb.eval(k, s, 0).abs() < 1e-14);
            assert!(sb.eval(k, s, 2).abs() < 1e-11);
        }
    }
}

proptest! {
    #[test]
    fn project_inverts_synthesize(seed in proptest::collection::vec(-1.0f64..1.0, 49)) {
        let cs = CrossSection::new(THETA0, 6);
        let mut g = vec![0.0; cs.n_points()];
        cs.synthesize(&seed, 0, 0, &mut g);
        let mut back = vec![0.0; cs.n_modes()];
        cs.project(&g, &mut back);
        for (a, b) in seed.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn parseval_holds(seed in proptest::collection::vec(-1.0f64..1.0, 36)) {
        let cs = CrossSection::new(THETA0, 5);
        let mut g = vec![0.0; cs.n_points()];
        cs.synthesize(&seed, 0, 0, &mut g);
        let l2: f64 = (0..cs.n_points()).map(|p| cs.weight(p) * g[p] * g[p]).sum();
        let sum: f64 = seed.iter().map(|c| c * c).sum();
        prop_assert!((l2 - sum).abs() <= 1e-12 * sum.max(1.0));
    }

    #[test]
    fn gauss_legendre_rule_projects_band_limited_fields(seed in proptest::collection::vec(-1.0f64..1.0, 16)) {
        let rule = quadrature_rule(30, 30, THETA0);
        let cs = CrossSection::with_rule(THETA0, 3, &rule);
        let mut g = vec![0.0; cs.n_points()];
        cs.synthesize(&seed, 0, 0, &mut g);
        let mut back = vec![0.0; cs.n_modes()];
        cs.project(&g, &mut back);
        for (a, b) in seed.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
