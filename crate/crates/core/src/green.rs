//! Dirichlet Green function G(a,x) = γ₀|x−a|^{2−n} − H(a,x), its regular
//! part H and the Robin function H(a,a).

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::grid::{make_grid, ScalarField};
use crate::poisson::{dirichlet_solve, SolveStats, SolverOptions};
use crate::quadrature::Estimate;
use crate::reduce::chunked_sum;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The singular part γ₀|x−a|^{2−n}.
pub fn singular_part(a: &[f64], x: &[f64], gamma0: f64) -> f64 {
    gamma0 * dist(a, x).powf(2.0 - a.len() as f64)
}

/// H(a,x) on a ball by the image construction. For the unit ball at the
/// origin this is γ₀(|a|²|x|² − 2a·x + 1)^{(2−n)/2}; other balls follow by
/// translation and scaling.
pub fn harmonic_part_ball(a: &[f64], x: &[f64], ball: &Domain, gamma0: f64) -> Result<f64> {
    let Domain::Ball { center, radius } = ball else {
        return Err(Error::domain("closed-form harmonic part needs a ball"));
    };
    if ball.boundary_distance(a) <= 0.0 {
        return Err(Error::domain("source point must lie strictly inside the ball"));
    }
    let n = a.len() as f64;
    let a1: Vec<f64> = a.iter().zip(center).map(|(p, c)| (p - c) / radius).collect();
    let x1: Vec<f64> = x.iter().zip(center).map(|(p, c)| (p - c) / radius).collect();
    let aa: f64 = a1.iter().map(|v| v * v).sum();
    let xx: f64 = x1.iter().map(|v| v * v).sum();
    let ax: f64 = a1.iter().zip(&x1).map(|(p, q)| p * q).sum();
    let q = aa * xx - 2.0 * ax + 1.0;
    Ok(radius.powf(2.0 - n) * gamma0 * q.powf((2.0 - n) / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum GreenMethod {
    Grid {
        h: f64,
        #[serde(default)]
        solver: Option<SolverOptions>,
    },
    Wos {
        walks: usize,
        /// Absolute shell width; `None` means 1e-4 × diameter.
        shell: Option<f64>,
        seed: u64,
    },
}

impl GreenMethod {
    pub fn grid(h: f64) -> Self {
        GreenMethod::Grid { h, solver: None }
    }

    pub fn wos(walks: usize, seed: u64) -> Self {
        GreenMethod::Wos {
            walks,
            shell: None,
            seed,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GreenMethod::Grid { .. } => "grid",
            GreenMethod::Wos { .. } => "wos",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Representation {
    BallClosedForm,
    Grid { field: ScalarField, stats: SolveStats },
    WalkOnSpheres { walks: usize, shell: f64, seed: u64 },
}

/// H(a,·) for one source point.
#[derive(Debug, Clone)]
pub struct HarmonicCorrection {
    pub source: Vec<f64>,
    pub domain: Domain,
    pub gamma0: f64,
    pub repr: Representation,
}

pub fn harmonic_part_closed(a: &[f64], ball: &Domain, gamma0: f64) -> Result<HarmonicCorrection> {
    harmonic_part_ball(a, a, ball, gamma0)?;
    Ok(HarmonicCorrection {
        source: a.to_vec(),
        domain: ball.clone(),
        gamma0,
        repr: Representation::BallClosedForm,
    })
}

pub fn harmonic_part_numeric(
    a: &[f64],
    domain: &Domain,
    method: &GreenMethod,
    gamma0: f64,
) -> Result<HarmonicCorrection> {
    let d = domain.boundary_distance(a);
    if d <= 0.0 {
        return Err(Error::domain("source point must lie strictly inside the domain"));
    }
    let repr = match *method {
        GreenMethod::Grid { h, solver } => {
            if h >= d {
                return Err(Error::domain(format!(
                    "mesh width {h} does not resolve the boundary distance {d} of the source"
                )));
            }
            let grid = make_grid(domain, h)?;
            let src = a.to_vec();
            let (field, stats) = dirichlet_solve(
                &grid,
                None,
                |y| singular_part(&src, y, gamma0),
                &solver.unwrap_or_default(),
            )?;
            Representation::Grid { field, stats }
        }
        GreenMethod::Wos { walks, shell, seed } => {
            if walks == 0 {
                return Err(Error::domain("walk-on-spheres needs at least one walk"));
            }
            let shell = shell.unwrap_or(1e-4 * domain.diameter());
            if !(shell > 0.0) {
                return Err(Error::domain("shell width must be positive"));
            }
            Representation::WalkOnSpheres { walks, shell, seed }
        }
    };
    Ok(HarmonicCorrection {
        source: a.to_vec(),
        domain: domain.clone(),
        gamma0,
        repr,
    })
}

impl HarmonicCorrection {
    pub fn method_label(&self) -> &'static str {
        match self.repr {
            Representation::BallClosedForm => "closed",
            Representation::Grid { .. } => "grid",
            Representation::WalkOnSpheres { .. } => "wos",
        }
    }

    pub fn grid_field(&self) -> Option<&ScalarField> {
        match &self.repr {
            Representation::Grid { field, .. } => Some(field),
            _ => None,
        }
    }

    /// H(a,x) with an error estimate (standard error for walk-on-spheres,
    /// zero for the other representations).
    pub fn eval(&self, x: &[f64]) -> Result<Estimate> {
        match &self.repr {
            Representation::BallClosedForm => Ok(Estimate {
                value: harmonic_part_ball(&self.source, x, &self.domain, self.gamma0)?,
                error: 0.0,
            }),
            Representation::Grid { field, .. } => Ok(Estimate {
                value: self.interpolate_grid(field, x),
                error: 0.0,
            }),
            Representation::WalkOnSpheres { walks, shell, seed } => {
                let src = self.source.clone();
                let g0 = self.gamma0;
                walk_on_spheres(&self.domain, x, |y| singular_part(&src, y, g0), *walks, *shell, *seed)
            }
        }
    }

    /// Trilinear interpolation; lattice corners outside the domain carry the
    /// boundary datum, which is harmonic there.
    fn interpolate_grid(&self, field: &ScalarField, x: &[f64]) -> f64 {
        let grid = field.grid();
        if let Some(i) = grid.nearest_node(x) {
            if dist(&grid.position(i), x) < 1e-12 * grid.h() {
                return field.values()[i];
            }
        }
        let h = grid.h();
        let anchor = grid.domain().anchor();
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let s = (x[k] - anchor[k]) / h;
            base[k] = s.floor() as i64;
            frac[k] = s - base[k] as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut key = base;
            let mut w = 1.0;
            for k in 0..3 {
                if corner >> k & 1 == 1 {
                    key[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = match grid.index_of(&key) {
                Some(i) => field.values()[i],
                None => {
                    let p: Vec<f64> = (0..3).map(|k| anchor[k] + h * key[k] as f64).collect();
                    singular_part(&self.source, &p, self.gamma0)
                }
            };
            acc += w * v;
        }
        acc
    }
}

/// Walk-on-spheres estimate of the harmonic extension of `g` evaluated at `x`.
/// Walk `k` draws from the ChaCha stream `k` of `seed`, so the result does not
/// depend on scheduling.
pub fn walk_on_spheres<G>(domain: &Domain, x: &[f64], g: G, walks: usize, shell: f64, seed: u64) -> Result<Estimate>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let d0 = domain.boundary_distance(x);
    if shell >= d0 {
        return Err(Error::ShellTooWide { shell, distance: d0 });
    }
    let n = x.len();
    let samples: Vec<f64> = (0..walks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut pos = x.to_vec();
            let mut dir = vec![0.0; n];
            loop {
                let d = domain.boundary_distance(&pos);
                if d < shell {
                    return g(&domain.closest_boundary_point(&pos));
                }
                let mut norm = 0.0f64;
                for v in dir.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                    norm += *v * *v;
                }
                let s = d / norm.sqrt();
                pos.iter_mut().zip(&dir).for_each(|(p, v)| *p += s * v);
            }
        })
        .collect();
    let m = walks as f64;
    let mean = chunked_sum(walks, |i| samples[i]) / m;
    let var = chunked_sum(walks, |i| (samples[i] - mean).powi(2)) / (m - 1.0).max(1.0);
    Ok(Estimate {
        value: mean,
        error: (var / m).sqrt(),
    })
}

/// G(a,x) = γ₀|x−a|^{2−n} − H(a,x).
pub fn green_eval(x: &[f64], correction: &HarmonicCorrection) -> Result<Estimate> {
    let a = &correction.source;
    if dist(a, x) <= 1e-14 * correction.domain.diameter() {
        return Err(Error::Singularity);
    }
    let h = correction.eval(x)?;
    Ok(Estimate {
        value: singular_part(a, x, correction.gamma0) - h.value,
        error: h.error,
    })
}

/// H(a,a). Grid representations read the solved regular part at `a` itself.
pub fn robin_function(a: &[f64], domain: &Domain, method: Option<&GreenMethod>, gamma0: f64) -> Result<Estimate> {
    let corr = match method {
        None => harmonic_part_closed(a, domain, gamma0)?,
        Some(m) => harmonic_part_numeric(a, domain, m, gamma0)?,
    };
    corr.eval(a)
}

/// Shared grid for many sources: H(a,·) solves reuse one lattice.
pub fn harmonic_parts_on_grid(
    sources: &[Vec<f64>],
    domain: &Domain,
    h: f64,
    gamma0: f64,
    solver: &SolverOptions,
) -> Result<Vec<HarmonicCorrection>> {
    let grid = make_grid(domain, h)?;
    sources
        .iter()
        .map(|a| {
            if domain.boundary_distance(a) <= h {
                return Err(Error::domain("source too close to the boundary for this mesh"));
            }
            let src = a.clone();
            let (field, stats) = dirichlet_solve(&grid, None, |y| singular_part(&src, y, gamma0), solver)?;
            Ok(HarmonicCorrection {
                source: a.clone(),
                domain: domain.clone(),
                gamma0,
                repr: Representation::Grid { field, stats },
            })
        })
        .collect()
}

pub fn shared_grid(corrections: &[HarmonicCorrection]) -> Option<Arc<crate::grid::Grid>> {
    corrections.first()?.grid_field().map(|f| f.grid().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    const G0: f64 = 0.367_552_596_947_861;

    #[test]
    fn ball_center_is_constant() {
        let b = Domain::unit_ball(3);
        for x in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.5], [0.0, 0.99, 0.0]] {
            assert!((harmonic_part_ball(&[0.0; 3], &x, &b, G0).unwrap() - G0).abs() < 1e-15);
        }
    }

    #[test]
    fn ball_robin_value() {
        let b = Domain::unit_ball(3);
        let h = harmonic_part_ball(&[0.5, 0.0, 0.0], &[0.5, 0.0, 0.0], &b, G0).unwrap();
        assert!((h - 4.0 / 3.0 * G0).abs() < 1e-14);
        assert!((h - 0.490_070_129_263_815).abs() < 1e-6);
    }

    #[test]
    fn ball_boundary_matches_singular_part() {
        let b = Domain::unit_ball(3);
        let a = [0.2, 0.3, -0.1];
        let x = [0.0, 0.6, 0.8];
        let h = harmonic_part_ball(&a, &x, &b, G0).unwrap();
        assert!((h - singular_part(&a, &x, G0)).abs() < 1e-13);
    }

    #[test]
    fn scaled_ball_by_change_of_variables() {
        let b = Domain::ball(vec![1.0, 2.0, 3.0], 2.0).unwrap();
        let a = [1.5, 2.0, 3.0];
        let x = [1.0, 1.0, 4.0];
        let h = harmonic_part_ball(&a, &x, &b, G0).unwrap();
        let h1 = harmonic_part_ball(&[0.25, 0.0, 0.0], &[0.0, -0.5, 0.5], &Domain::unit_ball(3), G0).unwrap();
        assert!((h - h1 / 2.0).abs() < 1e-14);
        let y = [3.0, 2.0, 3.0];
        assert!((harmonic_part_ball(&a, &y, &b, G0).unwrap() - singular_part(&a, &y, G0)).abs() < 1e-13);
    }

    #[test]
    fn green_at_half_radius_from_center() {
        let c = harmonic_part_closed(&[0.0; 3], &Domain::unit_ball(3), G0).unwrap();
        let g = green_eval(&[0.0, 0.5, 0.0], &c).unwrap();
        assert!((g.value - G0).abs() < 1e-14);
        assert!(matches!(green_eval(&[0.0; 3], &c), Err(Error::Singularity)));
    }

    #[test]
    fn green_symmetry_closed_form() {
        let b = Domain::unit_ball(3);
        let p = [0.1, -0.4, 0.3];
        let q = [-0.5, 0.2, 0.1];
        let gpq = green_eval(&q, &harmonic_part_closed(&p, &b, G0).unwrap()).unwrap().value;
        let gqp = green_eval(&p, &harmonic_part_closed(&q, &b, G0).unwrap()).unwrap().value;
        assert!(gpq > 0.0);
        assert!((gpq - gqp).abs() < 1e-14);
    }

    #[test]
    fn wos_reproducible_and_shell_checked() {
        let b = Domain::unit_ball(3);
        let m = GreenMethod::wos(2000, 11);
        let c = harmonic_part_numeric(&[0.0; 3], &b, &m, G0).unwrap();
        let e1 = c.eval(&[0.0; 3]).unwrap();
        let e2 = c.eval(&[0.0; 3]).unwrap();
        assert_eq!(e1.value.to_bits(), e2.value.to_bits());
        assert!((e1.value - G0).abs() < 1e-3);
        let wide = GreenMethod::Wos {
            walks: 10,
            shell: Some(0.5),
            seed: 0,
        };
        let c = harmonic_part_numeric(&[0.0; 3], &b, &wide, G0).unwrap();
        assert!(matches!(c.eval(&[0.7, 0.0, 0.0]), Err(Error::ShellTooWide { .. })));
    }

    #[test]
    fn grid_robin_close_to_closed_form() {
        let b = Domain::unit_ball(3);
        let h = robin_function(&[0.5, 0.0, 0.0], &b, Some(&GreenMethod::grid(0.05)), G0).unwrap();
        assert!((h.value / (4.0 / 3.0 * G0) - 1.0).abs() < 1e-3, "{}", h.value);
    }
}
