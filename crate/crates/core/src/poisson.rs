//! Dirichlet problems −Δ_h w = f on the interior lattice, solved by
//! Jacobi-preconditioned conjugate gradients.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::reduce::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual ‖b − Aw‖₂/‖b‖₂ at which iteration stops.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves h²(−Δ_h) w = b, i.e. the stencil system scaled by h².
pub fn solve_scaled(grid: &Grid, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = grid.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = grid.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for it in 1..=opts.max_iter {
        grid.apply_scaled_laplacian(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= opts.rel_tol {
            return Ok((x, SolveStats { iterations: it, residual: res }));
        }
        z.par_iter_mut()
            .zip(&r)
            .zip(&inv_diag)
            .for_each(|((zi, ri), di)| *zi = ri * di);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: res,
    })
}

/// w with −Δ_h w = rhs in Ω and w = 0 on ∂Ω.
pub fn poisson_solve(rhs: &ScalarField, opts: &SolverOptions) -> Result<ScalarField> {
    let grid = rhs.grid();
    let h2 = grid.h() * grid.h();
    let b: Vec<f64> = rhs.values().iter().map(|v| v * h2).collect();
    let (w, _) = solve_scaled(grid, &b, opts)?;
    ScalarField::from_values(grid, w)
}

/// w with −Δ_h w = f in Ω and w = g on ∂Ω.
pub fn dirichlet_solve<F>(
    grid: &Arc<Grid>,
    f: Option<&ScalarField>,
    g: F,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveStats)>
where
    F: Fn(&[f64; 3]) -> f64 + Sync,
{
    let h2 = grid.h() * grid.h();
    let mut b: Vec<f64> = grid.boundary_load(g).iter().map(|v| v * h2).collect();
    if let Some(f) = f {
        if !grid.same_as(f.grid()) {
            return Err(Error::GridMismatch);
        }
        b.iter_mut().zip(f.values()).for_each(|(bi, fi)| *bi += fi * h2);
    }
    let (w, stats) = solve_scaled(grid, &b, opts)?;
    Ok((ScalarField::from_values(grid, w)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::grid::{dirichlet_inner_product, make_grid};

    #[test]
    fn zero_rhs_gives_zero() {
        let g = make_grid(&Domain::unit_ball(3), 0.2).unwrap();
        let w = poisson_solve(&ScalarField::zeros(&g), &SolverOptions::default()).unwrap();
        assert!(w.is_zero());
    }

    #[test]
    fn manufactured_bump_is_recovered() {
        let g = make_grid(&Domain::annulus(vec![0.0; 3], 0.3, 1.0).unwrap(), 0.08).unwrap();
        let bump = ScalarField::from_fn(&g, |x| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            ((r - 0.3) * (1.0 - r)).max(0.0) * (1.0 + x[0])
        });
        let w = poisson_solve(&bump.neg_laplacian(), &SolverOptions::default()).unwrap();
        let err = w.values().iter().zip(bump.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8 * bump.max(), "{err}");
    }

    #[test]
    fn green_identity_and_linearity() {
        let g = make_grid(&Domain::unit_ball(3), 0.1).unwrap();
        let f1 = ScalarField::from_fn(&g, |x| 1.0 + x[0]);
        let f2 = ScalarField::from_fn(&g, |x| (3.0 * x[1]).cos() * x[2]);
        let v = ScalarField::from_fn(&g, |x| (x[0] - x[2]).exp());
        let o = SolverOptions { rel_tol: 1e-12, ..Default::default() };
        let w1 = poisson_solve(&f1, &o).unwrap();
        let lhs = dirichlet_inner_product(&w1, &v).unwrap();
        let rhs = f1.l2_inner(&v).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * rhs.abs());
        let combo = f1.scaled(2.0).axpy(-3.0, &f2).unwrap();
        let wc = poisson_solve(&combo, &o).unwrap();
        let w2 = poisson_solve(&f2, &o).unwrap();
        let pred = w1.scaled(2.0).axpy(-3.0, &w2).unwrap();
        let scale = pred.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in wc.values().iter().zip(pred.values()) {
            assert!((a - b).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn harmonic_data_is_reproduced_closely() {
        // A linear function is harmonic and the cut stencil is exact on it.
        let g = make_grid(&Domain::unit_ball(3), 0.1).unwrap();
        let lin = |x: &[f64; 3]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2];
        let (w, _) = dirichlet_solve(&g, None, lin, &SolverOptions { rel_tol: 1e-13, ..Default::default() }).unwrap();
        let err = (0..g.len()).map(|i| (w.values()[i] - lin(&g.position(i))).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let g = make_grid(&Domain::unit_ball(3), 0.05).unwrap();
        let f = ScalarField::from_fn(&g, |_| 1.0);
        let r = poisson_solve(&f, &SolverOptions { rel_tol: 1e-14, max_iter: 3 });
        assert!(matches!(r, Err(Error::NonConvergence { iterations: 3, .. })));
    }
}
