use std::f64::consts::PI;

use choquard_core::bubble::{riesz_potential_closed_form, riesz_potential_quadrature, BubbleParams};
use choquard_core::constants::{sphere_area, universal_constants};
use choquard_core::quadrature::QuadratureSpec;

/// Composite Simpson on r = tan θ, θ ∈ [0, π/2): an oracle independent of the
/// library's Gauss–Kronrod path.
fn simpson_radial(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let m = 200_000;
    let hi = PI / 2.0;
    let h = hi / m as f64;
    let g = |t: f64| {
        if t >= hi {
            return 0.0;
        }
        let r = t.tan();
        let c = t.cos();
        r.powi(n as i32 - 1) * f(r) / (c * c)
    };
    let mut s = g(0.0) + g(hi);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * g(k as f64 * h);
    }
    sphere_area(n) * s * h / 3.0
}

#[test]
fn gamma0_and_c1_against_simpson_oracle() {
    for (n, mu) in [(3usize, 1.0), (4, 2.0), (5, 1.5)] {
        let c = universal_constants(n, mu, &QuadratureSpec::default()).unwrap();
        let nf = n as f64;
        let g0 = (nf * (nf - 2.0) * simpson_radial(n, |r| (1.0 + r * r).powf(-nf))).powf(-0.5);
        let c1 = simpson_radial(n, |r| (1.0 + r * r).powf(-(nf + 2.0) / 2.0));
        assert!((c.gamma0 - g0).abs() < 1e-9 * g0, "n={n}: {} vs {g0}", c.gamma0);
        assert!((c.c1 - c1).abs() < 1e-9 * c1, "n={n}: {} vs {c1}", c.c1);
    }
}

#[test]
fn closed_form_values_in_three_and_four_dimensions() {
    let c3 = universal_constants(3, 1.0, &QuadratureSpec::default()).unwrap();
    assert!((c3.gamma0 - 2.0 / (PI * 3f64.sqrt())).abs() < 1e-12);
    assert!((c3.c1 - 4.0 * PI / 3.0).abs() < 1e-10);
    let c4 = universal_constants(4, 2.0, &QuadratureSpec::default()).unwrap();
    assert!((c4.gamma0 - 3f64.sqrt() / (2.0 * PI)).abs() < 1e-12);
    assert!((c4.c1 - PI * PI / 2.0).abs() < 1e-10);
}

#[test]
fn s_tilde_routes_agree() {
    for (n, mu) in [(3usize, 1.0), (3, 2.0), (4, 2.0), (5, 1.0)] {
        let c = universal_constants(n, mu, &QuadratureSpec::default()).unwrap();
        assert!(c.s_tilde_gap < 1e-6, "n={n} mu={mu}: gap {}", c.s_tilde_gap);
    }
}

#[test]
fn riesz_closed_form_is_radial_and_matches_quadrature() {
    let c = universal_constants(3, 1.0, &QuadratureSpec::default()).unwrap();
    let p = BubbleParams::new(vec![0.1, -0.2, 0.3], 2.0).unwrap();
    let q = QuadratureSpec::default();
    let dirs = [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [-0.48, 0.6, 0.64]];
    for r in [0.0, 0.3, 1.1] {
        let mut vals = Vec::new();
        for d in dirs {
            let x: Vec<f64> = (0..3).map(|i| p.center[i] + r * d[i]).collect();
            let closed = riesz_potential_closed_form(&p, &x, &c);
            let brute = riesz_potential_quadrature(&p, &x, &c, &q).unwrap();
            assert!(
                (closed - brute.value).abs() < 1e-6 * closed + brute.error,
                "r={r}: {closed} vs {} ± {}",
                brute.value,
                brute.error
            );
            vals.push(closed);
        }
        assert!(vals.iter().all(|v| (v - vals[0]).abs() < 1e-13 * vals[0]));
    }
}
