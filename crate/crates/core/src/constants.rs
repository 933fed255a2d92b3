//! Critical exponents and the universal constants of the bubble family.
//!
//! Everything here is a pure function of `(n, mu)` evaluated with adaptive
//! radial quadrature. The normalized sharp constant `S̃_HL` is produced twice:
//! once through the Gamma-function route `γ₀^{2-2·2*_μ} A_HL` and once as the
//! reciprocal of the whole-space double integral of `U^{2*_μ} U^{2*_μ}`; the
//! report keeps both so the gap between them is always visible.

use std::cell::Cell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_to_infinity, tanh_sinh, QuadratureSpec};

/// The three exponents attached to `(n, mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub n: usize,
    pub mu: f64,
    /// Lower critical exponent `(2n-μ)/n`.
    pub two_mu_lower: f64,
    /// Upper critical exponent `(2n-μ)/(n-2)`.
    pub two_mu_star: f64,
    /// Sobolev exponent `2n/(n-2)`.
    pub two_star: f64,
}

pub fn critical_exponents(n: usize, mu: f64) -> Result<ExponentSet> {
    if n < 3 {
        return Err(Error::domain(format!("dimension must be at least 3, got {n}")));
    }
    let nf = n as f64;
    if !(mu > 0.0 && mu < nf) {
        return Err(Error::domain(format!("mu must lie in (0, {n}), got {mu}")));
    }
    Ok(ExponentSet {
        n,
        mu,
        two_mu_lower: (2.0 * nf - mu) / nf,
        two_mu_star: (2.0 * nf - mu) / (nf - 2.0),
        two_star: 2.0 * nf / (nf - 2.0),
    })
}

impl ExponentSet {
    pub fn dim(&self) -> f64 {
        self.n as f64
    }

    /// Power of `λ` in the bubble amplitude, `(n-2)/2`.
    pub fn bubble_power(&self) -> f64 {
        (self.dim() - 2.0) / 2.0
    }
}

/// Surface area of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0)
}

/// Sharp Hardy–Littlewood–Sobolev constant `C_{n,μ}` for `t = 2n/(2n-μ)`.
pub fn hls_sharp_constant(n: usize, mu: f64) -> f64 {
    let nf = n as f64;
    PI.powf(mu / 2.0) * gamma((nf - mu) / 2.0) / gamma(nf - mu / 2.0)
        * (gamma(nf) / gamma(nf / 2.0)).powf((nf - mu) / nf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalConstants {
    pub exponents: ExponentSet,
    /// `(n(n-2) ∫ (1+|x|²)^{-n})^{-1/2}`, the factor making `|∇U|₂ = 1`.
    pub gamma0: f64,
    /// `∫ (1+|x|²)^{-(n+2)/2}`.
    pub c1: f64,
    pub hls_sharp: f64,
    /// Best Sobolev constant, `|∇δ|₂² / |δ|_{2*}²` for the standard bubble.
    pub sobolev: f64,
    pub a_hl: f64,
    /// Canonical `S̃_HL = γ₀^{2-2·2*_μ} A_HL`.
    pub s_tilde_hl: f64,
    /// `1 / ∬ U^{2*_μ}(x) U^{2*_μ}(y) |x-y|^{-μ}` by direct quadrature.
    pub s_tilde_hl_direct: f64,
    /// Relative gap `|direct - canonical| / canonical`.
    pub s_tilde_gap: f64,
}

impl UniversalConstants {
    /// `S_HL = S̃_HL^{1/(2·2*_μ)}`, the infimum of `|u|_{1Ω} / ‖u‖_HL`.
    pub fn s_hl(&self) -> f64 {
        self.s_tilde_hl.powf(1.0 / (2.0 * self.exponents.two_mu_star))
    }

    /// Amplitude `c` for which `c·δ_{(a,λ)}` solves the unscaled whole-space equation.
    pub fn unscaled_solution_prefactor(&self) -> f64 {
        let n = self.exponents.dim();
        let mu = self.exponents.mu;
        (n * (n - 2.0)).powf((n - 2.0) / 4.0)
            * self.hls_sharp.powf((2.0 - n) / (2.0 * (n - mu + 2.0)))
            * self
                .sobolev
                .powf(((n - mu) * (2.0 - n)) / (4.0 * (n - mu + 2.0)))
    }

    /// Leading coefficient `n(n-2) γ₀ c₁` of every Robin/Green correction.
    pub fn interaction_coefficient(&self) -> f64 {
        let n = self.exponents.dim();
        n * (n - 2.0) * self.gamma0 * self.c1
    }
}

fn radial<F: Fn(f64) -> f64>(n: usize, f: F, q: &QuadratureSpec) -> Result<f64> {
    let nm1 = n as i32 - 1;
    let e = integrate_to_infinity(
        |r| r.powi(nm1) * f(r),
        0.0,
        1.0,
        q.rel_tol,
        q.max_subdivisions,
    )?;
    Ok(sphere_area(n) * e.value)
}

pub fn gamma0(n: usize, q: &QuadratureSpec) -> Result<f64> {
    let nf = n as f64;
    let i = radial(n, |r| (1.0 + r * r).powf(-nf), q)?;
    Ok((nf * (nf - 2.0) * i).powf(-0.5))
}

pub fn c1(n: usize, q: &QuadratureSpec) -> Result<f64> {
    let nf = n as f64;
    radial(n, |r| (1.0 + r * r).powf(-(nf + 2.0) / 2.0), q)
}

fn sobolev_cache() -> &'static Mutex<HashMap<(usize, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Best Sobolev constant, computed as the Sobolev quotient of `δ_{(0,1)}`.
pub fn sobolev_constant(n: usize, q: &QuadratureSpec) -> Result<f64> {
    let key = (n, q.rel_tol.to_bits());
    if let Some(&s) = sobolev_cache().lock().expect("cache poisoned").get(&key) {
        return Ok(s);
    }
    let nf = n as f64;
    let two_star = 2.0 * nf / (nf - 2.0);
    let grad = radial(
        n,
        |r| {
            let g = (nf - 2.0) * r * (1.0 + r * r).powf(-nf / 2.0);
            g * g
        },
        q,
    )?;
    let lp = radial(n, |r| (1.0 + r * r).powf(-nf), q)?;
    let s = grad / lp.powf(2.0 / two_star);
    sobolev_cache()
        .lock()
        .expect("cache poisoned")
        .insert(key, s);
    Ok(s)
}

/// Spherical mean of `|x - y|^{-μ}` over `|x| = r`, `|y| = s` in `R^n`.
pub fn spherical_kernel_mean(n: usize, mu: f64, r: f64, s: f64, rel_tol: f64) -> Result<f64> {
    let (lo, hi) = if r < s { (r, s) } else { (s, r) };
    if lo == 0.0 || lo < 1e-5 * hi {
        let eps = lo / hi;
        let nf = n as f64;
        // second-order expansion in r/s; the first-order term averages out
        return Ok(hi.powf(-mu) * (1.0 + eps * eps * mu * (mu + 2.0 - nf) / (2.0 * nf)));
    }
    if n == 3 {
        let d = hi - lo;
        let sum = hi + lo;
        let v = if (mu - 2.0).abs() < 1e-12 {
            (sum / d).ln() / (2.0 * r * s)
        } else {
            (sum.powf(2.0 - mu) - d.powf(2.0 - mu)) / (2.0 * r * s * (2.0 - mu))
        };
        return Ok(v);
    }
    let ratio = sphere_area(n - 1) / sphere_area(n);
    let d2 = (r - s) * (r - s);
    let rs4 = 4.0 * r * s;
    let e = tanh_sinh(
        |phi, dl, _| {
            let sh = (0.5 * dl).sin();
            (d2 + rs4 * sh * sh).powf(-mu / 2.0) * phi.sin().powi(n as i32 - 2)
        },
        0.0,
        PI,
        rel_tol,
    )?;
    Ok(ratio * e.value)
}

/// `∬ ρ(|x|) ρ(|y|) |x-y|^{-μ} dx dy` for a radial density, by radial reduction.
///
/// `scale` is the length scale of `ρ` and sets the semi-infinite mapping.
pub fn radial_hls_double_integral<F>(n: usize, mu: f64, rho: F, scale: f64, q: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let area = sphere_area(n);
    let nm1 = n as i32 - 1;
    let inner_tol = (q.rel_tol * 0.1).max(1e-13);
    let failed = Cell::new(false);
    let kernel = |r: f64, s: f64| match spherical_kernel_mean(n, mu, r, s, inner_tol) {
        Ok(k) => k,
        Err(_) => {
            failed.set(true);
            0.0
        }
    };
    // split at s = r where the spherical kernel may be singular
    let potential = |r: f64| -> Result<f64> {
        let near = if r > 0.0 {
            tanh_sinh(|s, _, _| s.powi(nm1) * rho(s) * kernel(r, s), 0.0, r, inner_tol)?.value
        } else {
            0.0
        };
        let far = tanh_sinh(
            |t, _, dr| {
                let s = r + scale * t / dr;
                s.powi(nm1) * rho(s) * kernel(r, s) * scale / (dr * dr)
            },
            0.0,
            1.0,
            inner_tol,
        )?
        .value;
        Ok(area * (near + far))
    };
    let e = integrate_to_infinity(
        |r| match potential(r) {
            Ok(p) => r.powi(nm1) * rho(r) * p,
            Err(_) => {
                failed.set(true);
                0.0
            }
        },
        0.0,
        scale,
        q.rel_tol.max(1e-9),
        q.max_subdivisions,
    )?;
    if failed.get() {
        return Err(Error::QuadratureNonConvergence {
            tol: inner_tol,
            estimate: area * e.value,
            error: f64::NAN,
        });
    }
    Ok(area * e.value)
}

/// `∬_{B_R×B_R} ρ(|x|) ρ(|y|) |x-y|^{-μ} dx dy` for a radial density.
pub fn radial_hls_double_integral_ball<F>(n: usize, mu: f64, rho: F, r_max: f64, q: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let area = sphere_area(n);
    let nm1 = n as i32 - 1;
    let inner_tol = (q.rel_tol * 0.1).max(1e-13);
    let failed = Cell::new(false);
    let kernel = |r: f64, s: f64| match spherical_kernel_mean(n, mu, r, s, inner_tol) {
        Ok(k) => k,
        Err(_) => {
            failed.set(true);
            0.0
        }
    };
    let potential = |r: f64| -> Result<f64> {
        let near = if r > 0.0 {
            tanh_sinh(|s, _, _| s.powi(nm1) * rho(s) * kernel(r, s), 0.0, r, inner_tol)?.value
        } else {
            0.0
        };
        let far = if r < r_max {
            tanh_sinh(|s, _, _| s.powi(nm1) * rho(s) * kernel(r, s), r, r_max, inner_tol)?.value
        } else {
            0.0
        };
        Ok(area * (near + far))
    };
    let e = integrate(
        |r| match potential(r) {
            Ok(p) => r.powi(nm1) * rho(r) * p,
            Err(_) => {
                failed.set(true);
                0.0
            }
        },
        0.0,
        r_max,
        q.rel_tol.max(1e-9),
        q.max_subdivisions,
    )?;
    if failed.get() {
        return Err(Error::QuadratureNonConvergence {
            tol: inner_tol,
            estimate: area * e.value,
            error: f64::NAN,
        });
    }
    Ok(area * e.value)
}

pub fn universal_constants(n: usize, mu: f64, q: &QuadratureSpec) -> Result<UniversalConstants> {
    let exponents = critical_exponents(n, mu)?;
    q.validate()?;
    let nf = n as f64;
    let g0 = gamma0(n, q)?;
    let c1 = c1(n, q)?;
    let c_hls = hls_sharp_constant(n, mu);
    let s = sobolev_constant(n, q)?;
    let a_hl = (nf * (nf - 2.0)).powf((nf - mu + 2.0) / 2.0) / c_hls * s.powf((mu - nf) / 2.0);
    let tms = exponents.two_mu_star;
    let s_tilde = g0.powf(2.0 - 2.0 * tms) * a_hl;

    // ρ = U^{2*_μ} with U = γ₀ δ_{(0,1)}
    let amp = g0.powf(tms);
    let decay = -(2.0 * nf - mu) / 2.0;
    let double = radial_hls_double_integral(n, mu, |r| amp * (1.0 + r * r).powf(decay), 1.0, q)?;
    let direct = 1.0 / double;
    Ok(UniversalConstants {
        exponents,
        gamma0: g0,
        c1,
        hls_sharp: c_hls,
        sobolev: s,
        a_hl,
        s_tilde_hl: s_tilde,
        s_tilde_hl_direct: direct,
        s_tilde_gap: (direct - s_tilde).abs() / s_tilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponents_match_formulas() {
        let e = critical_exponents(3, 1.0).unwrap();
        assert!((e.two_mu_lower - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.two_mu_star, 5.0);
        assert_eq!(e.two_star, 6.0);
        let e = critical_exponents(4, 2.0).unwrap();
        assert_eq!((e.two_mu_lower, e.two_mu_star, e.two_star), (1.5, 3.0, 4.0));
    }

    #[test]
    fn exponents_reject_bad_input() {
        assert!(matches!(critical_exponents(3, 3.0), Err(Error::Domain(_))));
        assert!(matches!(critical_exponents(3, 0.0), Err(Error::Domain(_))));
        assert!(matches!(critical_exponents(2, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn upper_exponent_decreases_in_mu() {
        for n in 3..7 {
            let mut prev = f64::INFINITY;
            for k in 1..20 {
                let mu = n as f64 * k as f64 / 20.0;
                let e = critical_exponents(n, mu).unwrap();
                assert!(e.two_mu_star < prev);
                assert!(e.two_mu_lower <= e.two_mu_star);
                prev = e.two_mu_star;
            }
        }
    }

    #[test]
    fn sobolev_constant_dimension_three() {
        // Aubin–Talenti value 3 (π/2)^{4/3}
        let s = sobolev_constant(3, &QuadratureSpec::default()).unwrap();
        let exact = 3.0 * (PI / 2.0).powf(4.0 / 3.0);
        assert!((s - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn spherical_mean_generic_matches_closed_form() {
        // the n = 3 closed form against the generic angular quadrature
        for &(r, s) in &[(0.3, 1.7), (1.0, 1.1), (2.0, 0.5)] {
            let closed = spherical_kernel_mean(3, 1.3, r, s, 1e-12).unwrap();
            let ratio = sphere_area(2) / sphere_area(3);
            let generic = ratio
                * tanh_sinh(
                    |phi, _, _| (r * r + s * s - 2.0 * r * s * phi.cos()).powf(-0.65) * phi.sin(),
                    0.0,
                    PI,
                    1e-12,
                )
                .unwrap()
                .value;
            assert!((closed - generic).abs() < 1e-10 * closed, "{closed} {generic}");
        }
    }

    #[test]
    fn prefactor_is_power_of_a_hl() {
        let c = universal_constants(3, 1.0, &QuadratureSpec::default()).unwrap();
        let n = 3.0;
        let expected = c.a_hl.powf((n - 2.0) / (2.0 * (n - 1.0 + 2.0)));
        assert!((c.unscaled_solution_prefactor() - expected).abs() < 1e-12 * expected);
    }
}
