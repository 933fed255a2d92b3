//! One-dimensional quadrature primitives.
//!
//! Adaptive Gauss–Kronrod (7/15) is the workhorse for smooth radial
//! integrals, including semi-infinite ranges through `x = a + t/(1-t)`.
//! Tanh–sinh handles integrable endpoint singularities, and fixed
//! Gauss–Legendre rules back the tensor-product quadratures used as
//! brute-force oracles elsewhere in the crate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resolution and tolerance settings shared by every radial and
/// whole-space integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Relative tolerance of adaptive 1-D integrals.
    pub rel_tol: f64,
    /// Maximum number of interval bisections per adaptive integral.
    pub max_subdivisions: usize,
    /// Whole-space integrals are truncated at `r_cut_factor / lambda`.
    pub r_cut_factor: f64,
    /// Number of Gauss–Legendre nodes per panel in tensor-product rules.
    pub gauss_order: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            max_subdivisions: 2000,
            r_cut_factor: 50.0,
            gauss_order: 48,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::domain("quadrature tolerance must lie in (0,1)"));
        }
        if self.max_subdivisions == 0 || self.gauss_order < 2 {
            return Err(Error::domain("quadrature resolution must be positive"));
        }
        if !(self.r_cut_factor > 0.0) {
            return Err(Error::domain("truncation radius factor must be positive"));
        }
        Ok(())
    }
}

/// Value and error estimate of an adaptive integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<Estimate> {
    integrate_with_breaks(f, &[a, b], rel_tol, max_subdivisions)
}

/// Adaptive integration over consecutive panels `breaks[i]..breaks[i+1]`.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<Estimate> {
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        let (value, error) = gk15(&f, w[0], w[1]);
        total += value;
        total_err += error;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    let abs_floor = 1e-300;
    let mut splits = 0;
    while total_err > (rel_tol * total.abs()).max(abs_floor) {
        if splits >= max_subdivisions {
            return Err(Error::QuadratureNonConvergence {
                tol: rel_tol,
                estimate: total,
                error: total_err,
            });
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // interval exhausted in floating point; keep its contribution
            return Err(Error::QuadratureNonConvergence {
                tol: rel_tol,
                estimate: total,
                error: total_err,
            });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        splits += 1;
        if splits % 64 == 0 {
            // re-sum to shed accumulated rounding in the running totals
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.error).sum();
        }
    }
    Ok(Estimate {
        value: total,
        error: total_err,
    })
}

/// Integral of `f` over `[a, ∞)` via `x = a + t/(1-t)`.
///
/// `scale` places the bulk of the mapped panels near `a + scale`; use the
/// natural length scale of the integrand (for bubbles, `1/lambda`).
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    scale: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<Estimate> {
    let g = |t: f64| {
        let s = 1.0 - t;
        let x = a + scale * t / s;
        let v = f(x) * scale / (s * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate_with_breaks(
        g,
        &[0.0, 0.25, 0.5, 0.75, 0.9, 1.0],
        rel_tol,
        max_subdivisions,
    )
}

/// Tanh–sinh quadrature over `[a, b]`, tolerant of integrable endpoint
/// singularities. The integrand receives `(x, x - a, b - x)` so that
/// distances to the endpoints stay accurate near the singular ends.
pub fn tanh_sinh<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<Estimate> {
    let half = 0.5 * (b - a);
    let t_max = 3.5;
    let eval = |t: f64| -> f64 {
        let u = std::f64::consts::FRAC_PI_2 * t.sinh();
        // distance to the nearer endpoint without cancellation
        let e = (-2.0 * u.abs()).exp();
        let near = 2.0 * half * e / (1.0 + e);
        let far = 2.0 * half - near;
        let (dl, dr) = if u < 0.0 { (near, far) } else { (far, near) };
        let x = if u < 0.0 { a + dl } else { b - dr };
        let cu = u.cosh();
        let w = std::f64::consts::FRAC_PI_2 * t.cosh() / (cu * cu);
        if dl <= 0.0 || dr <= 0.0 {
            return 0.0;
        }
        let v = f(x, dl, dr) * w * half;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut step = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * step <= t_max {
        let t = k as f64 * step;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut estimate = sum * step;
    for _level in 0..12 {
        step *= 0.5;
        let mut k = 1;
        while k as f64 * step <= t_max {
            let t = k as f64 * step;
            sum += eval(t) + eval(-t);
            k += 2;
        }
        let next = sum * step;
        let diff = (next - estimate).abs();
        estimate = next;
        if diff <= rel_tol * estimate.abs() || diff == 0.0 {
            return Ok(Estimate {
                value: estimate,
                error: diff,
            });
        }
    }
    Err(Error::QuadratureNonConvergence {
        tol: rel_tol,
        estimate,
        error: f64::NAN,
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if order == 0 { 1.0 } else { p1 };
            dp = n * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule mapped onto `[a, b]` with `panels` equal panels.
pub fn composite_gauss(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let width = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * width * (xi + 1.0), 0.5 * width * wi));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_transcendental() {
        let e = integrate(|x| x.powi(5), 0.0, 2.0, 1e-12, 100).unwrap();
        assert!((e.value - 64.0 / 6.0).abs() < 1e-12);
        let e = integrate(f64::sin, 0.0, std::f64::consts::PI, 1e-12, 100).unwrap();
        assert!((e.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn semi_infinite_lorentzian() {
        let e = integrate_to_infinity(|x| 1.0 / (1.0 + x * x), 0.0, 1.0, 1e-12, 500).unwrap();
        assert!((e.value - std::f64::consts::FRAC_PI_2).abs() < 1e-11);
    }

    #[test]
    fn tanh_sinh_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2 and ∫_0^1 ln x dx = -1
        let e = tanh_sinh(|_, dl, _| dl.powf(-0.5), 0.0, 1.0, 1e-12).unwrap();
        assert!((e.value - 2.0).abs() < 1e-10, "{}", e.value);
        let e = tanh_sinh(|_, dl, _| dl.ln(), 0.0, 1.0, 1e-12).unwrap();
        assert!((e.value + 1.0).abs() < 1e-10, "{}", e.value);
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn non_convergence_is_reported() {
        let r = integrate(|x| (1.0 / x).sin() / x, 1e-9, 1.0, 1e-14, 5);
        assert!(matches!(r, Err(Error::QuadratureNonConvergence { .. })));
    }
}
