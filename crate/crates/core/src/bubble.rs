//! The bubble family `δ_{(a,λ)}`, its unit-gradient normalization
//! `U_{(a,λ)} = γ₀ δ_{(a,λ)}`, the Riesz potential of `U^{2*_μ}` and
//! pointwise Choquard residuals.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::constants::{sphere_area, UniversalConstants};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_with_breaks, tanh_sinh, Estimate, QuadratureSpec};

/// Concentration point, scale and weight of one bubble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams {
    pub center: Vec<f64>,
    pub scale: f64,
    pub weight: f64,
}

impl BubbleParams {
    pub fn new(center: Vec<f64>, scale: f64) -> Result<Self> {
        Self::weighted(center, scale, 1.0)
    }

    pub fn weighted(center: Vec<f64>, scale: f64, weight: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(format!("bubble scale must be positive, got {scale}")));
        }
        if !(weight >= 0.0) {
            return Err(Error::domain(format!("bubble weight must be nonnegative, got {weight}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("bubble center must be finite"));
        }
        Ok(BubbleParams {
            center,
            scale,
            weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn distance_to(&self, x: &[f64]) -> f64 {
        self.center
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `δ_{(a,λ)}` as a function of the distance `r = |x - a|`.
    pub fn delta_radial(&self, r: f64) -> f64 {
        let p = (self.dim() as f64 - 2.0) / 2.0;
        let lr = self.scale * r;
        self.scale.powf(p) * (1.0 + lr * lr).powf(-p)
    }

    pub fn delta(&self, x: &[f64]) -> f64 {
        self.delta_radial(self.distance_to(x))
    }

    /// `-Δ U_{(a,λ)} = n(n-2) γ₀^{-4/(n-2)} U^{2*-1}` at distance `r`.
    pub fn neg_laplacian_u_radial(&self, r: f64, gamma0: f64) -> f64 {
        let n = self.dim() as f64;
        let lr = self.scale * r;
        n * (n - 2.0) * gamma0 * self.scale.powf((n + 2.0) / 2.0) * (1.0 + lr * lr).powf(-(n + 2.0) / 2.0)
    }
}

/// Evaluates `δ_{(a,λ)}(x)`, or `U_{(a,λ)}(x)` when `gamma0` is given.
pub fn bubble_eval(p: &BubbleParams, x: &[f64], gamma0: Option<f64>) -> f64 {
    p.delta(x) * gamma0.unwrap_or(1.0)
}

/// `∫ U^{2*_μ}(y) |x-y|^{-μ} dy` in closed form.
pub fn riesz_potential_closed_form(p: &BubbleParams, x: &[f64], consts: &UniversalConstants) -> f64 {
    let e = &consts.exponents;
    let n = e.dim();
    let u = consts.gamma0 * p.delta(x);
    n * (n - 2.0) / (consts.s_tilde_hl * consts.gamma0.powf(4.0 / (n - 2.0))) * u.powf(e.two_star - e.two_mu_star)
}

/// Brute-force nested quadrature of the Riesz potential of `U^{2*_μ}`,
/// in polar coordinates about `x`, truncated at `R_cut = r_cut_factor/λ`.
///
/// The returned error adds the quadrature error to an analytic bound on the
/// discarded tail.
pub fn riesz_potential_quadrature(
    p: &BubbleParams,
    x: &[f64],
    consts: &UniversalConstants,
    q: &QuadratureSpec,
) -> Result<Estimate> {
    let e = &consts.exponents;
    let n = e.n;
    let nf = n as f64;
    let mu = e.mu;
    let lam = p.scale;
    let d = p.distance_to(x);
    let r_cut = q.r_cut_factor / lam + d;
    let tms = e.two_mu_star;
    let g0 = consts.gamma0;
    let rho = |w: f64| (g0 * p.delta_radial(w)).powf(tms);
    let sphere_ratio = sphere_area(n - 1) / sphere_area(n);
    let tol = q.rel_tol.max(1e-9);

    // spherical mean of ρ(|x + rω - a|) over ω
    let shell_mean = |r: f64| -> f64 {
        if d == 0.0 || r == 0.0 {
            return rho(r + d);
        }
        let integrand = |phi: f64| {
            let w2 = d * d + r * r + 2.0 * d * r * phi.cos();
            rho(w2.max(0.0).sqrt()) * phi.sin().powi(n as i32 - 2)
        };
        // the shell passes closest to a at φ = π; grade panels toward it
        let mut breaks = vec![0.0, PI / 2.0];
        let closest = (r - d).abs().max(1.0 / lam);
        let mut gap = PI / 2.0;
        while gap > 1e-3 * closest / (r + d) && breaks.len() < 40 {
            gap *= 0.25;
            breaks.push(PI - gap);
        }
        breaks.push(PI);
        match integrate_with_breaks(integrand, &breaks, tol, 4000) {
            Ok(v) => sphere_ratio * v.value,
            Err(_) => f64::NAN,
        }
    };

    let radial = |r: f64| r.powf(nf - 1.0 - mu) * shell_mean(r);
    let scale = 1.0 / lam;
    let mut breaks = vec![0.0];
    let mut b = scale.min(d.max(scale)) * 0.25;
    while b < r_cut {
        breaks.push(b);
        b *= 2.0;
    }
    if d > 0.0 {
        for extra in [d - scale, d, d + scale] {
            if extra > 0.0 && extra < r_cut {
                breaks.push(extra);
            }
        }
    }
    breaks.push(r_cut);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    // first panel with tanh–sinh: r^{n-1-μ} may be singular at 0
    let first = tanh_sinh(|r, _, _| radial(r), breaks[0], breaks[1], tol)?;
    let rest = integrate_with_breaks(radial, &breaks[1..], tol, 4000)?;
    let value = sphere_area(n) * (first.value + rest.value);
    if !value.is_finite() {
        return Err(Error::QuadratureNonConvergence {
            tol,
            estimate: value,
            error: f64::NAN,
        });
    }
    // tail: ρ(y) ≤ A (λ|y-a|)^{-(2n-μ)} and |y-a| ≥ r - d beyond the cut
    let amp = (g0 * lam.powf(e.bubble_power())).powf(tms) * lam.powf(-(2.0 * nf - mu));
    let tail = integrate(
        |t: f64| {
            let r = r_cut / t;
            let v = r.powf(nf - 1.0 - mu) * (r - d).powf(-(2.0 * nf - mu));
            v * r_cut / (t * t)
        },
        1e-12,
        1.0,
        1e-6,
        200,
    )?;
    let tail_bound = sphere_area(n) * amp * tail.value;
    Ok(Estimate {
        value,
        error: sphere_area(n) * (first.error + rest.error) + tail_bound,
    })
}

/// Importance-sampled Monte Carlo estimate of the Riesz potential of
/// `U^{2*_μ}`. Samples are drawn exactly from the normalized density
/// `U^{2*_μ} / ∫U^{2*_μ}` (no truncation), so the estimator is the mass
/// times the sample mean of `|x-y|^{-μ}`. Finite variance requires `2μ < n`.
pub fn riesz_potential_monte_carlo(
    p: &BubbleParams,
    x: &[f64],
    consts: &UniversalConstants,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let e = &consts.exponents;
    let n = e.n;
    let nf = n as f64;
    let mu = e.mu;
    if samples < 2 {
        return Err(Error::domain("Monte Carlo needs at least two samples"));
    }
    let lam = p.scale;
    // λ|y-a| = tan θ with sin²θ ~ Beta(n/2, (n-μ)/2)
    let dist = Beta::new(nf / 2.0, (nf - mu) / 2.0).map_err(|e| Error::domain(e.to_string()))?;
    let mass = (consts.gamma0 * lam.powf(e.bubble_power())).powf(e.two_mu_star)
        * lam.powf(-nf)
        * sphere_area(n)
        * 0.5
        * beta(nf / 2.0, (nf - mu) / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut dir = vec![0.0; n];
    for _ in 0..samples {
        let s: f64 = dist.sample(&mut rng);
        let t = (s / (1.0 - s)).sqrt();
        let mut norm = 0.0f64;
        for c in dir.iter_mut() {
            *c = StandardNormal.sample(&mut rng);
            norm += *c * *c;
        }
        let norm = norm.sqrt();
        let mut dist2 = 0.0;
        for i in 0..n {
            let y = p.center[i] + t / lam * dir[i] / norm;
            dist2 += (x[i] - y) * (x[i] - y);
        }
        let k = dist2.powf(-mu / 2.0);
        sum += k;
        sum2 += k * k;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = (sum2 / m - mean * mean).max(0.0) * m / (m - 1.0);
    Ok(Estimate {
        value: mass * mean,
        error: mass * (var / m).sqrt(),
    })
}

/// Which form of the critical equation a residual is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualNormalization {
    /// `-Δu = S̃_HL (|·|^{-μ} * u^{2*_μ}) u^{2*_μ-1}`, satisfied by `U_{(a,λ)}`.
    UnitGradient,
    /// `-Δu = (|·|^{-μ} * |u|^{2*_μ}) |u|^{2*_μ-2} u`, satisfied by `c·δ_{(a,λ)}`
    /// with the classification prefactor `c`.
    Unscaled,
}

impl ResidualNormalization {
    pub fn coefficient(&self, consts: &UniversalConstants) -> f64 {
        match self {
            ResidualNormalization::UnitGradient => consts.s_tilde_hl,
            ResidualNormalization::Unscaled => 1.0,
        }
    }
}

/// Whole-space bubble profile entering a residual evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BubbleProfile {
    /// The unit-gradient bubble `U_{(a,λ)} = γ₀ δ_{(a,λ)}`.
    Normalized,
    /// `amplitude · δ_{(a,λ)}`.
    Scaled(f64),
}

/// Pointwise residual of a whole-space bubble profile at `points`.
///
/// The Laplacian is the `(2n+1)`-point stencil with step `fd_step`; the
/// nonlocal factor uses the closed-form Riesz potential. Asking the unscaled
/// normalization of the `γ₀`-normalized profile is refused.
pub fn bubble_residual(
    p: &BubbleParams,
    profile: BubbleProfile,
    points: &[Vec<f64>],
    normalization: ResidualNormalization,
    consts: &UniversalConstants,
    fd_step: f64,
) -> Result<Vec<f64>> {
    let e = &consts.exponents;
    if p.dim() != e.n {
        return Err(Error::domain("bubble dimension differs from the constants' dimension"));
    }
    if !(fd_step > 0.0) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let amplitude = match (profile, normalization) {
        (BubbleProfile::Normalized, ResidualNormalization::Unscaled) => {
            return Err(Error::NormalizationMismatch(
                "the gamma0-normalized bubble solves the unit-gradient form; pass an explicit amplitude for the unscaled form"
                    .into(),
            ))
        }
        (BubbleProfile::Normalized, _) => consts.gamma0,
        (BubbleProfile::Scaled(c), _) => c,
    };
    let coef = normalization.coefficient(consts);
    let ratio = amplitude / consts.gamma0;
    let tms = e.two_mu_star;
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        if x.len() != e.n {
            return Err(Error::domain("sample point has the wrong dimension"));
        }
        let u = |y: &[f64]| amplitude * p.delta(y);
        let center = u(x);
        let mut lap = 0.0;
        let mut y = x.clone();
        for i in 0..e.n {
            y[i] = x[i] + fd_step;
            let up = u(&y);
            y[i] = x[i] - fd_step;
            let dn = u(&y);
            y[i] = x[i];
            lap += (up - 2.0 * center + dn) / (fd_step * fd_step);
        }
        // potential of (ratio·U)^{2*_μ}
        let pot = ratio.powf(tms) * riesz_potential_closed_form(p, x, consts);
        out.push(-lap - coef * pot * center.abs().powf(tms - 2.0) * center);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::universal_constants;

    fn consts31() -> UniversalConstants {
        universal_constants(3, 1.0, &QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn bubble_peak_values() {
        let p = BubbleParams::new(vec![0.0; 3], 1.0).unwrap();
        assert_eq!(bubble_eval(&p, &[0.0; 3], None), 1.0);
        let p = BubbleParams::new(vec![0.0; 3], 4.0).unwrap();
        assert_eq!(bubble_eval(&p, &[0.0; 3], None), 2.0);
    }

    #[test]
    fn bubble_rejects_nonpositive_scale() {
        assert!(BubbleParams::new(vec![0.0; 3], 0.0).is_err());
        assert!(BubbleParams::new(vec![0.0; 3], -1.0).is_err());
    }

    #[test]
    fn normalized_bubble_carries_gamma0() {
        let c = consts31();
        let p = BubbleParams::new(vec![0.1, 0.2, 0.3], 3.0).unwrap();
        let x = [0.4, -0.1, 0.0];
        assert_eq!(bubble_eval(&p, &x, Some(c.gamma0)), c.gamma0 * p.delta(&x));
    }

    #[test]
    fn riesz_closed_form_peak_scaling() {
        let c = consts31();
        let e = c.exponents;
        let p1 = BubbleParams::new(vec![0.0; 3], 1.0).unwrap();
        let lam = 3.7;
        let pl = BubbleParams::new(vec![0.0; 3], lam).unwrap();
        let v1 = riesz_potential_closed_form(&p1, &[0.0; 3], &c);
        let vl = riesz_potential_closed_form(&pl, &[0.0; 3], &c);
        let expected = lam.powf((e.dim() - 2.0) * (e.two_star - e.two_mu_star) / 2.0) * v1;
        assert!((vl - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn riesz_closed_form_matches_monte_carlo() {
        let c = consts31();
        let p = BubbleParams::new(vec![0.0; 3], 1.0).unwrap();
        let closed = riesz_potential_closed_form(&p, &[0.0; 3], &c);
        let mc = riesz_potential_monte_carlo(&p, &[0.0; 3], &c, 200_000, 11).unwrap();
        assert!(
            (mc.value - closed).abs() < 4.0 * mc.error,
            "mc {} ± {} vs {}",
            mc.value,
            mc.error,
            closed
        );
    }

    #[test]
    fn residual_vanishes_for_normalized_bubble() {
        let c = consts31();
        let p = BubbleParams::new(vec![0.0; 3], 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..6).map(|k| vec![0.3 * k as f64, 0.1, -0.2]).collect();
        let h = 1e-3;
        let r = bubble_residual(&p, BubbleProfile::Normalized, &pts, ResidualNormalization::UnitGradient, &c, h)
            .unwrap();
        for (x, v) in pts.iter().zip(&r) {
            let scale = p.neg_laplacian_u_radial(p.distance_to(x), c.gamma0);
            assert!(v.abs() < 1e-5 * scale.max(1e-3), "{v} at {x:?}");
        }
    }

    #[test]
    fn residual_vanishes_for_unscaled_solution() {
        let c = consts31();
        let p = BubbleParams::new(vec![0.2, 0.0, 0.0], 2.0).unwrap();
        let amp = c.unscaled_solution_prefactor();
        let pts: Vec<Vec<f64>> = (0..5).map(|k| vec![0.1 * k as f64, 0.05, 0.0]).collect();
        let r = bubble_residual(&p, BubbleProfile::Scaled(amp), &pts, ResidualNormalization::Unscaled, &c, 1e-3)
            .unwrap();
        let peak = amp * 3.0 * p.delta(&p.center).powi(5);
        for v in r {
            assert!(v.abs() < 1e-5 * peak, "{v}");
        }
    }

    #[test]
    fn wrong_amplitude_leaves_residual() {
        let c = consts31();
        let p = BubbleParams::new(vec![0.0; 3], 1.0).unwrap();
        let pts = vec![vec![0.0; 3], vec![0.5, 0.0, 0.0]];
        let r = bubble_residual(
            &p,
            BubbleProfile::Scaled(2.0 * c.gamma0),
            &pts,
            ResidualNormalization::UnitGradient,
            &c,
            1e-3,
        )
        .unwrap();
        assert!(r.iter().all(|v| v.abs() > 1e-2));
    }

    #[test]
    fn normalization_mismatch_is_reported() {
        let c = consts31();
        let p = BubbleParams::new(vec![0.0; 3], 1.0).unwrap();
        let r = bubble_residual(
            &p,
            BubbleProfile::Normalized,
            &[vec![0.0; 3]],
            ResidualNormalization::Unscaled,
            &c,
            1e-3,
        );
        assert!(matches!(r, Err(Error::NormalizationMismatch(_))));
    }
}
