//! The Hardy–Littlewood–Sobolev double integral on grids, the functionals
//! I, J₁ and J, the H¹₀ gradient of J and the HLS inequality margin.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::bubble::{BubbleParams, ResidualNormalization};
use crate::constants::{radial_hls_double_integral, radial_hls_double_integral_ball, sphere_area, UniversalConstants};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::fft3::{next_smooth, Fft3};
use crate::grid::{make_grid, Grid, ScalarField};
use crate::poisson::{poisson_solve, SolverOptions};
use crate::quadrature::{composite_gauss, integrate_to_infinity, QuadratureSpec};
use crate::reduce::{chunked_sum, CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyMethod {
    Direct,
    Fft,
}

/// ∫_{[−1/2,1/2]³} |z|^{−μ} dz, the unit-cell average of the kernel.
///
/// Splitting the cube into six pyramids by the largest coordinate reduces
/// the integral to 24 (1/2)^{3−μ}/(3−μ) ∫∫_{[0,1]²} (1+s²+t²)^{−μ/2}.
pub fn cell_average_constant(mu: f64) -> f64 {
    let nodes = composite_gauss(0.0, 1.0, 4, 20);
    let mut face = 0.0;
    for &(s, ws) in &nodes {
        for &(t, wt) in &nodes {
            face += ws * wt * (1.0 + s * s + t * t).powf(-mu / 2.0);
        }
    }
    24.0 * 0.5f64.powf(3.0 - mu) / (3.0 - mu) * face
}

/// Desingularized |x−y|^{−μ} on a grid: the cell average on the diagonal,
/// midpoint values elsewhere.
pub struct HlsKernel {
    grid: Arc<Grid>,
    mu: f64,
    dims: [usize; 3],
    table: Vec<f64>,
    fft: OnceLock<FftKernel>,
}

struct FftKernel {
    plan: Fft3,
    symbol: Vec<f64>,
}

impl std::fmt::Debug for HlsKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HlsKernel").field("mu", &self.mu).field("dims", &self.dims).finish()
    }
}

impl HlsKernel {
    pub fn new(grid: &Arc<Grid>, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 3.0) {
            return Err(Error::domain(format!("kernel exponent {mu} outside (0, 3)")));
        }
        let dims = grid.dims();
        let h = grid.h();
        let mut table = vec![0.0; dims[0] * dims[1] * dims[2]];
        table
            .par_chunks_mut(dims[1] * dims[2])
            .enumerate()
            .for_each(|(i, plane)| {
                for j in 0..dims[1] {
                    for k in 0..dims[2] {
                        let r2 = (i * i + j * j + k * k) as f64;
                        plane[j * dims[2] + k] = if r2 == 0.0 { 0.0 } else { (h * h * r2).powf(-mu / 2.0) };
                    }
                }
            });
        table[0] = cell_average_constant(mu) * h.powf(-mu);
        Ok(HlsKernel {
            grid: grid.clone(),
            mu,
            dims,
            table,
            fft: OnceLock::new(),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// K_h at lattice offset (|di|, |dj|, |dk|).
    pub fn value(&self, off: [usize; 3]) -> f64 {
        self.table[(off[0] * self.dims[1] + off[1]) * self.dims[2] + off[2]]
    }

    fn fft_kernel(&self) -> &FftKernel {
        self.fft.get_or_init(|| {
            let m = self.dims;
            let p = m.map(|d| next_smooth(2 * d - 1));
            let plan = Fft3::new(p);
            let wrap = |a: usize, m: usize, p: usize| -> Option<usize> {
                if a < m {
                    Some(a)
                } else if a > p - m {
                    Some(p - a)
                } else {
                    None
                }
            };
            let mut data = vec![Complex::new(0.0, 0.0); plan.len()];
            for a in 0..p[0] {
                let Some(x) = wrap(a, m[0], p[0]) else { continue };
                for b in 0..p[1] {
                    let Some(y) = wrap(b, m[1], p[1]) else { continue };
                    for c in 0..p[2] {
                        let Some(z) = wrap(c, m[2], p[2]) else { continue };
                        data[(a * p[1] + b) * p[2] + c].re = self.value([x, y, z]);
                    }
                }
            }
            plan.forward(&mut data);
            // the wrapped kernel is even, so its transform is real
            let symbol = data.iter().map(|c| c.re).collect();
            FftKernel { plan, symbol }
        })
    }

    /// V_i = h^n Σ_j K_h(x_i − x_j) ρ_j.
    pub fn potential(&self, rho: &[f64], method: EnergyMethod) -> Result<Vec<f64>> {
        let grid = &self.grid;
        if rho.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        let w = grid.weight();
        match method {
            EnergyMethod::Direct => {
                let offs: Vec<[usize; 3]> = (0..grid.len()).map(|i| grid.box_offset(i)).collect();
                let mut v = vec![0.0; grid.len()];
                v.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                    for (o, slot) in chunk.iter_mut().enumerate() {
                        let oi = offs[c * CHUNK + o];
                        let mut s = 0.0;
                        for (oj, r) in offs.iter().zip(rho) {
                            let d = [oi[0].abs_diff(oj[0]), oi[1].abs_diff(oj[1]), oi[2].abs_diff(oj[2])];
                            s += self.value(d) * r;
                        }
                        *slot = s * w;
                    }
                });
                Ok(v)
            }
            EnergyMethod::Fft => {
                let fk = self.fft_kernel();
                let p = fk.plan.dims();
                let mut data = vec![Complex::new(0.0, 0.0); fk.plan.len()];
                let idx = |o: [usize; 3]| (o[0] * p[1] + o[1]) * p[2] + o[2];
                for (i, r) in rho.iter().enumerate() {
                    data[idx(grid.box_offset(i))].re = *r;
                }
                fk.plan.forward(&mut data);
                data.par_iter_mut().zip(&fk.symbol).for_each(|(d, s)| *d *= *s);
                fk.plan.inverse(&mut data);
                let scale = w / fk.plan.len() as f64;
                Ok((0..grid.len()).map(|i| data[idx(grid.box_offset(i))].re * scale).collect())
            }
        }
    }

    /// D = h^n Σ_i ρ_i V_i for the density ρ.
    pub fn energy_of_density(&self, rho: &[f64], method: EnergyMethod) -> Result<f64> {
        let v = self.potential(rho, method)?;
        Ok(chunked_sum(rho.len(), |i| rho[i] * v[i]) * self.grid.weight())
    }

    /// D(u) with ρ = |u|^power.
    pub fn energy(&self, u: &ScalarField, power: f64, method: EnergyMethod) -> Result<f64> {
        self.check(u)?;
        let rho: Vec<f64> = u.values().iter().map(|v| v.abs().powf(power)).collect();
        self.energy_of_density(&rho, method)
    }

    fn check(&self, u: &ScalarField) -> Result<()> {
        if self.grid.same_as(u.grid()) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// D(u) = ∬ |u|^{2*_μ}(x)|u|^{2*_μ}(y)|x−y|^{−μ} on the grid.
pub fn hls_energy(u: &ScalarField, mu: f64, method: EnergyMethod) -> Result<f64> {
    let q = crate::constants::critical_exponents(3, mu)?.two_mu_star;
    HlsKernel::new(u.grid(), mu)?.energy(u, q, method)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// |u|²_{1Ω} of the field as given.
    pub dirichlet: f64,
    /// The remaining entries refer to u/|u|_{1Ω}.
    #[serde(rename = "D")]
    pub d: f64,
    pub hls_norm: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "J1")]
    pub j1: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub lambda_star: f64,
    /// |f′(λ*)|/λ* for f(λ) = I(λu).
    pub stationarity_residual: f64,
}

pub fn evaluate_functionals(
    u: &ScalarField,
    consts: &UniversalConstants,
    kernel: &HlsKernel,
    method: EnergyMethod,
) -> Result<EnergyBreakdown> {
    let q = consts.exponents.two_mu_star;
    let norm = u.dirichlet_norm();
    if norm == 0.0 {
        return Err(Error::ZeroField);
    }
    let v = u.scaled(1.0 / norm);
    let d = kernel.energy(&v, q, method)?;
    if !(d > 0.0) {
        return Err(Error::ZeroField);
    }
    let hls_norm = d.powf(1.0 / (2.0 * q));
    let lambda_star = hls_norm.powf(-q / (q - 1.0));
    let fprime = lambda_star - lambda_star.powf(2.0 * q - 1.0) * d;
    let stationarity_residual = fprime.abs() / lambda_star;
    if stationarity_residual > 1e-8 {
        return Err(Error::NormalizationMismatch(format!(
            "maximizer of λ ↦ I(λu) fails stationarity by {stationarity_residual:e}"
        )));
    }
    Ok(EnergyBreakdown {
        dirichlet: norm * norm,
        d,
        hls_norm,
        i: 0.5 - d / (2.0 * q),
        j1: (0.5 - 1.0 / (2.0 * q)) * d.powf(-1.0 / (q - 1.0)),
        j: 1.0 / d,
        lambda_star,
        stationarity_residual,
    })
}

/// J(u) = |u|_{1Ω}^{2·2*_μ}/D(u), the value of 1/D on the ray through u.
pub fn functional_j(u: &ScalarField, consts: &UniversalConstants, kernel: &HlsKernel, method: EnergyMethod) -> Result<f64> {
    let q = consts.exponents.two_mu_star;
    let d = kernel.energy(u, q, method)?;
    if d == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(u.dirichlet_norm().powf(2.0 * q) / d)
}

/// Gradient in ⟨·,·⟩ of u ↦ 1/D(u); with `tangential`, its component
/// orthogonal to u, which is the gradient of J restricted to the sphere.
pub fn grad_j(
    u: &ScalarField,
    consts: &UniversalConstants,
    kernel: &HlsKernel,
    method: EnergyMethod,
    tangential: bool,
    solver: &SolverOptions,
) -> Result<ScalarField> {
    kernel.check(u)?;
    if u.is_zero() {
        return Err(Error::ZeroField);
    }
    let q = consts.exponents.two_mu_star;
    let rho: Vec<f64> = u.values().iter().map(|v| v.abs().powf(q)).collect();
    let pot = kernel.potential(&rho, method)?;
    let d = chunked_sum(rho.len(), |i| rho[i] * pot[i]) * kernel.grid.weight();
    let c = -2.0 * q / (d * d);
    let density: Vec<f64> = u
        .values()
        .iter()
        .zip(&pot)
        .map(|(&x, &p)| c * p * x.abs().powf(q - 2.0) * x)
        .collect();
    let g = poisson_solve(&ScalarField::from_values(u.grid(), density)?, solver)?;
    if !tangential {
        return Ok(g);
    }
    let gu = crate::grid::dirichlet_inner_product(&g, u)?;
    let uu = crate::grid::dirichlet_inner_product(u, u)?;
    g.axpy(-gu / uu, u)
}

/// |u|_{1Ω}/‖u‖_HL − S_HL.
pub fn hls_inequality_margin(
    u: &ScalarField,
    consts: &UniversalConstants,
    kernel: &HlsKernel,
    method: EnergyMethod,
) -> Result<f64> {
    let q = consts.exponents.two_mu_star;
    let d = kernel.energy(u, q, method)?;
    if d == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(u.dirichlet_norm() / d.powf(1.0 / (2.0 * q)) - consts.s_hl())
}

/// Pointwise −Δ_h u − c(K_h∗|u|^{2*_μ})|u|^{2*_μ−2}u on the grid, with c = S̃_HL
/// or 1 according to `normalization`.
pub fn field_choquard_residual(
    u: &ScalarField,
    consts: &UniversalConstants,
    kernel: &HlsKernel,
    normalization: ResidualNormalization,
    method: EnergyMethod,
) -> Result<ScalarField> {
    kernel.check(u)?;
    let q = consts.exponents.two_mu_star;
    let rho: Vec<f64> = u.values().iter().map(|v| v.abs().powf(q)).collect();
    let pot = kernel.potential(&rho, method)?;
    let c = normalization.coefficient(consts);
    let lap = u.neg_laplacian();
    let vals = lap
        .values()
        .iter()
        .zip(u.values())
        .zip(&pot)
        .map(|((l, &x), p)| l - c * p * x.abs().powf(q - 2.0) * x)
        .collect();
    ScalarField::from_values(u.grid(), vals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedBubbleJ {
    pub j: f64,
    pub gradient_grid: f64,
    pub gradient_tail: f64,
    pub d_grid: f64,
    pub d_tail: f64,
    pub nodes: usize,
}

/// J(δ_{(a,λ)}) in R³ from a grid on B(a, r_cut) plus analytic tails for the
/// gradient integral and the double integral outside the ball.
pub fn whole_space_bubble_j(
    p: &BubbleParams,
    r_cut: f64,
    h: f64,
    consts: &UniversalConstants,
    q: &QuadratureSpec,
) -> Result<TruncatedBubbleJ> {
    let e = &consts.exponents;
    let n = e.dim();
    if p.dim() != 3 {
        return Err(Error::Unsupported("truncated-grid bubbles are three-dimensional".into()));
    }
    let lam = p.scale;
    let ball = Domain::ball(p.center.clone(), r_cut)?;
    let grid = make_grid(&ball, h)?;
    let u = ScalarField::from_fn(&grid, |x| p.delta(x));
    let gradient_grid = grid.dirichlet_energy_with_trace(u.values(), |x| p.delta(x));
    let dprime2 = |r: f64| {
        let g = (n - 2.0) * lam.powf((n + 2.0) / 2.0) * r * (1.0 + lam * lam * r * r).powf(-n / 2.0);
        r * r * g * g
    };
    let gradient_tail = sphere_area(3) * integrate_to_infinity(dprime2, r_cut, 1.0 / lam, q.rel_tol, q.max_subdivisions)?.value;
    let kernel = HlsKernel::new(&grid, e.mu)?;
    let d_grid = kernel.energy(&u, e.two_mu_star, EnergyMethod::Fft)?;
    let rho = |r: f64| p.delta_radial(r).powf(e.two_mu_star);
    let all = radial_hls_double_integral(3, e.mu, rho, 1.0 / lam, q)?;
    let inner = radial_hls_double_integral_ball(3, e.mu, rho, r_cut, q)?;
    let d_tail = all - inner;
    let j = (gradient_grid + gradient_tail).powf(e.two_mu_star) / (d_grid + d_tail);
    Ok(TruncatedBubbleJ {
        j,
        gradient_grid,
        gradient_tail,
        d_grid,
        d_tail,
        nodes: grid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::universal_constants;

    #[test]
    fn cell_average_limits() {
        assert!((cell_average_constant(1e-12) - 1.0).abs() < 1e-10);
        // μ = 1: reference value from an independent cubature of 1/|z| over the unit cube
        let brute = {
            let m = 200;
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        let z = [i, j, k].map(|c| (c as f64 + 0.5) / m as f64 - 0.5);
                        s += (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt().recip();
                    }
                }
            }
            s / (m * m * m) as f64
        };
        assert!((cell_average_constant(1.0) - brute).abs() < 2e-3 * brute);
    }

    #[test]
    fn zero_field_and_homogeneity() {
        let g = make_grid(&Domain::unit_ball(3), 0.25).unwrap();
        let k = HlsKernel::new(&g, 1.0).unwrap();
        assert_eq!(k.energy(&ScalarField::zeros(&g), 5.0, EnergyMethod::Direct).unwrap(), 0.0);
        let u = ScalarField::from_fn(&g, |x| 1.0 - x[0] * x[0] - x[1] * x[1] - x[2] * x[2]);
        let d1 = k.energy(&u, 5.0, EnergyMethod::Direct).unwrap();
        let d2 = k.energy(&u.scaled(1.7), 5.0, EnergyMethod::Direct).unwrap();
        assert!((d2 / d1 / 1.7f64.powi(10) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_masses_by_hand() {
        let cube = Domain::cuboid(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let h = 0.125;
        let g = make_grid(&cube, h).unwrap();
        let a = g.nearest_node(&[0.25, 0.25, 0.5]).unwrap();
        let b = g.nearest_node(&[0.75, 0.5, 0.5]).unwrap();
        let mut vals = vec![0.0; g.len()];
        vals[a] = 1.0;
        vals[b] = 1.0;
        let u = ScalarField::from_values(&g, vals).unwrap();
        let k = HlsKernel::new(&g, 1.0).unwrap();
        let w = h.powi(3);
        let dist = (0.5f64 * 0.5 + 0.25 * 0.25).sqrt();
        let hand = 2.0 * cell_average_constant(1.0) / h * w * w + 2.0 * w * w / dist;
        for m in [EnergyMethod::Direct, EnergyMethod::Fft] {
            let d = k.energy(&u, 5.0, m).unwrap();
            assert!((d - hand).abs() < 1e-12 * hand, "{m:?}");
        }
    }

    #[test]
    fn fft_agrees_with_direct() {
        let g = make_grid(&Domain::annulus(vec![0.0; 3], 0.3, 1.0).unwrap(), 0.15).unwrap();
        let k = HlsKernel::new(&g, 1.3).unwrap();
        let u = ScalarField::from_fn(&g, |x| (x[0] + 1.2).powi(2) * (1.0 - x[1] * x[1] - x[2] * x[2]).abs());
        let a = k.energy(&u, 4.0, EnergyMethod::Direct).unwrap();
        let b = k.energy(&u, 4.0, EnergyMethod::Fft).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn breakdown_relations() {
        let c = universal_constants(3, 1.0, &Default::default()).unwrap();
        let g = make_grid(&Domain::unit_ball(3), 0.2).unwrap();
        let k = HlsKernel::new(&g, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |x| 1.0 - (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]));
        let e = evaluate_functionals(&u, &c, &k, EnergyMethod::Fft).unwrap();
        assert!((e.j * e.d - 1.0).abs() < 1e-14);
        assert!(e.j > c.s_tilde_hl);
        let rescaled = u.scaled(1.0 / e.hls_norm / u.dirichlet_norm());
        let e2 = evaluate_functionals(&rescaled, &c, &k, EnergyMethod::Fft).unwrap();
        assert!((e2.j - e.j).abs() < 1e-12 * e.j);
        assert!(matches!(
            evaluate_functionals(&ScalarField::zeros(&g), &c, &k, EnergyMethod::Fft),
            Err(Error::ZeroField)
        ));
    }

    #[test]
    fn tangential_gradient_is_orthogonal() {
        let c = universal_constants(3, 1.0, &Default::default()).unwrap();
        let g = make_grid(&Domain::unit_ball(3), 0.2).unwrap();
        let k = HlsKernel::new(&g, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |x| (1.0 - x[0] * x[0] - x[1] * x[1] - x[2] * x[2]) * (1.0 + 0.3 * x[0]));
        let t = grad_j(&u, &c, &k, EnergyMethod::Fft, true, &Default::default()).unwrap();
        let full = grad_j(&u, &c, &k, EnergyMethod::Fft, false, &Default::default()).unwrap();
        let tu = crate::grid::dirichlet_inner_product(&t, &u).unwrap();
        let fu = crate::grid::dirichlet_inner_product(&full, &u).unwrap();
        assert!(tu.abs() < 1e-10 * fu.abs());
    }

    #[test]
    fn margin_is_scale_invariant() {
        let c = universal_constants(3, 1.0, &Default::default()).unwrap();
        let g = make_grid(&Domain::unit_ball(3), 0.2).unwrap();
        let k = HlsKernel::new(&g, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |x| (1.0 - x[0] * x[0] - x[1] * x[1] - x[2] * x[2]).powi(2));
        let m1 = hls_inequality_margin(&u, &c, &k, EnergyMethod::Fft).unwrap();
        let m2 = hls_inequality_margin(&u.scaled(3.5), &c, &k, EnergyMethod::Fft).unwrap();
        assert!(m1 > 0.0);
        assert!((m1 - m2).abs() < 1e-12 * (1.0 + m1.abs()));
    }
}
