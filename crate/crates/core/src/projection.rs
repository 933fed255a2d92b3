//! Projected bubbles PU_{(a,λ)}: the H¹₀ projection of U_{(a,λ)} onto the
//! domain, either solved on the grid or approximated by U − H(a,·)/λ^{(n−2)/2}.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bubble::BubbleParams;
use crate::constants::UniversalConstants;
use crate::error::{Error, Result};
use crate::green::{green_eval, HarmonicCorrection};
use crate::grid::{dirichlet_inner_product, Grid, ScalarField};
use crate::poisson::{poisson_solve, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Approx,
    Solve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    /// Below this value of λ·d(a,∂Ω) the result carries a regime warning.
    pub regime_floor: f64,
    pub solver: SolverOptions,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            regime_floor: 5.0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedBubble {
    pub params: BubbleParams,
    pub method: ProjectionMethod,
    pub field: ScalarField,
    /// Largest negative value removed by the approx clamp.
    pub clamp_magnitude: f64,
    /// λ·d(a,∂Ω)
    pub regime: f64,
    pub regime_warning: bool,
}

/// −ΔU_{(a,λ)} sampled on the grid.
pub fn bubble_rhs(p: &BubbleParams, grid: &Arc<Grid>, gamma0: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| p.neg_laplacian_u_radial(p.distance_to(x), gamma0))
}

pub fn project_bubble(
    p: &BubbleParams,
    grid: &Arc<Grid>,
    method: ProjectionMethod,
    gamma0: f64,
    correction: Option<&HarmonicCorrection>,
    opts: &ProjectionOptions,
) -> Result<ProjectedBubble> {
    let domain = grid.domain();
    let d = domain.boundary_distance(&p.center);
    if d <= 0.0 {
        return Err(Error::domain("bubble center must lie inside the domain"));
    }
    let regime = p.scale * d;
    let (field, clamp_magnitude) = match method {
        ProjectionMethod::Solve => (poisson_solve(&bubble_rhs(p, grid, gamma0), &opts.solver)?, 0.0),
        ProjectionMethod::Approx => {
            let corr = correction.ok_or_else(|| Error::domain("approx projection needs a harmonic correction"))?;
            if corr.source != p.center {
                return Err(Error::domain("harmonic correction is for a different source point"));
            }
            let damp = p.scale.powf(-(p.dim() as f64 - 2.0) / 2.0);
            let mut values = Vec::with_capacity(grid.len());
            for x in grid.positions() {
                values.push(gamma0 * p.delta(&x) - damp * corr.eval(&x)?.value);
            }
            let clamp = values.iter().fold(0.0f64, |m, v| m.max(-v));
            values.iter_mut().for_each(|v| *v = v.max(0.0));
            (ScalarField::from_values(grid, values)?, clamp)
        }
    };
    Ok(ProjectedBubble {
        params: p.clone(),
        method,
        field,
        clamp_magnitude,
        regime,
        regime_warning: regime < opts.regime_floor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyComparison {
    pub measured: f64,
    pub predicted: f64,
    pub residual: f64,
    pub regime_warning: bool,
}

impl EnergyComparison {
    fn new(measured: f64, predicted: f64, regime_warning: bool) -> Self {
        EnergyComparison {
            measured,
            predicted,
            residual: measured - predicted,
            regime_warning,
        }
    }
}

/// 1 − γ₀n(n−2)c₁H(a,a)/λ^{n−2}
pub fn predicted_self_energy(lambda: f64, robin: f64, consts: &UniversalConstants) -> f64 {
    let n = consts.exponents.dim();
    1.0 - consts.interaction_coefficient() * robin / lambda.powf(n - 2.0)
}

/// n(n−2)γ₀c₁G(a_i,a_j)/λ^{n−2}
pub fn predicted_cross_energy(lambda: f64, green: f64, consts: &UniversalConstants) -> f64 {
    let n = consts.exponents.dim();
    consts.interaction_coefficient() * green / lambda.powf(n - 2.0)
}

pub fn pu_self_energy(
    pb: &ProjectedBubble,
    consts: &UniversalConstants,
    correction: &HarmonicCorrection,
) -> Result<EnergyComparison> {
    let measured = dirichlet_inner_product(&pb.field, &pb.field)?;
    let robin = correction.eval(&pb.params.center)?.value;
    Ok(EnergyComparison::new(
        measured,
        predicted_self_energy(pb.params.scale, robin, consts),
        pb.regime_warning,
    ))
}

/// `correction_i` is H(a_i,·); G(a_i,a_j) is read from it.
pub fn pu_cross_energy(
    pb_i: &ProjectedBubble,
    pb_j: &ProjectedBubble,
    consts: &UniversalConstants,
    correction_i: &HarmonicCorrection,
) -> Result<EnergyComparison> {
    if pb_i.params.scale != pb_j.params.scale {
        return Err(Error::DistinctScales);
    }
    if pb_i.params.center == pb_j.params.center {
        return Err(Error::CoincidentPoints(0, 1));
    }
    let measured = dirichlet_inner_product(&pb_i.field, &pb_j.field)?;
    let g = green_eval(&pb_j.params.center, correction_i)?.value;
    Ok(EnergyComparison::new(
        measured,
        predicted_cross_energy(pb_i.params.scale, g, consts),
        pb_i.regime_warning || pb_j.regime_warning,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaCheck {
    pub nodes_checked: usize,
    /// max over boundary-adjacent nodes of |θ(x)| / (γ₀ λ^{−(n+2)/2} |x−a|^{−n})
    pub max_ratio: f64,
    pub holds: bool,
}

/// Checks |U − PU − H/λ^{(n−2)/2}| ≤ γ₀/(λ^{(n+2)/2}|x−a|^n) at nodes with a
/// stencil arm leaving the domain.
pub fn theta_bound_check(pb: &ProjectedBubble, gamma0: f64, correction: &HarmonicCorrection) -> Result<ThetaCheck> {
    let grid = pb.field.grid();
    let p = &pb.params;
    let n = p.dim() as f64;
    let damp = p.scale.powf(-(n - 2.0) / 2.0);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for i in 0..grid.len() {
        if !(0..6).any(|d| grid.neighbor(i, d).is_none()) {
            continue;
        }
        let x = grid.position(i);
        let r = p.distance_to(&x);
        let theta = gamma0 * p.delta(&x) - pb.field.values()[i] - damp * correction.eval(&x)?.value;
        let bound = gamma0 * p.scale.powf(-(n + 2.0) / 2.0) * r.powf(-n);
        worst = worst.max(theta.abs() / bound);
        checked += 1;
    }
    Ok(ThetaCheck {
        nodes_checked: checked,
        max_ratio: worst,
        holds: worst <= 1.0,
    })
}

/// Largest |u − v| over nodes at distance ≥ `exclude` from `center`.
pub fn sup_gap(u: &ScalarField, v: &ScalarField, center: &[f64], exclude: f64) -> Result<f64> {
    u.check_same_grid(v)?;
    let grid = u.grid();
    let mut m = 0.0f64;
    for i in 0..grid.len() {
        let x = grid.position(i);
        let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if r >= exclude {
            m = m.max((u.values()[i] - v.values()[i]).abs());
        }
    }
    Ok(m)
}

/// Removes the O(h²) term from values measured at two mesh widths.
pub fn richardson(h1: f64, x1: f64, h2: f64, x2: f64) -> f64 {
    let (a, b) = (h1 * h1, h2 * h2);
    (a * x2 - b * x1) / (a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::green::harmonic_part_closed;
    use crate::grid::make_grid;

    const G0: f64 = 0.367_552_596_947_861;

    #[test]
    fn richardson_kills_quadratic_term() {
        let f = |h: f64| 2.0 + 3.0 * h * h;
        assert!((richardson(0.1, f(0.1), 0.05, f(0.05)) - 2.0).abs() < 1e-14);
        assert!((richardson(0.3, f(0.3), 0.1, f(0.1)) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn solve_projection_is_positive_and_below_bubble() {
        let g = make_grid(&Domain::unit_ball(3), 0.1).unwrap();
        let p = BubbleParams::new(vec![0.1, 0.0, 0.0], 6.0).unwrap();
        let pb = project_bubble(&p, &g, ProjectionMethod::Solve, G0, None, &Default::default()).unwrap();
        for (i, x) in g.positions().enumerate() {
            let v = pb.field.values()[i];
            assert!(v >= 0.0);
            assert!(v <= G0 * p.delta(&x) + 1e-8);
        }
        assert!(!pb.regime_warning);
    }

    #[test]
    fn approx_clamps_and_warns() {
        let b = Domain::unit_ball(3);
        let g = make_grid(&b, 0.1).unwrap();
        let a = vec![0.7, 0.0, 0.0];
        let p = BubbleParams::new(a.clone(), 3.0).unwrap();
        let corr = harmonic_part_closed(&a, &b, G0).unwrap();
        let pb = project_bubble(&p, &g, ProjectionMethod::Approx, G0, Some(&corr), &Default::default()).unwrap();
        assert!(pb.regime_warning);
        assert!(pb.field.min() >= 0.0);
        assert!(pb.clamp_magnitude >= 0.0);
    }

    #[test]
    fn cross_energy_refuses_distinct_scales() {
        let b = Domain::unit_ball(3);
        let g = make_grid(&b, 0.2).unwrap();
        let c = crate::constants::universal_constants(3, 1.0, &Default::default()).unwrap();
        let p1 = BubbleParams::new(vec![0.2, 0.0, 0.0], 4.0).unwrap();
        let p2 = BubbleParams::new(vec![-0.2, 0.0, 0.0], 5.0).unwrap();
        let o = ProjectionOptions::default();
        let b1 = project_bubble(&p1, &g, ProjectionMethod::Solve, G0, None, &o).unwrap();
        let b2 = project_bubble(&p2, &g, ProjectionMethod::Solve, G0, None, &o).unwrap();
        let h = harmonic_part_closed(&p1.center, &b, G0).unwrap();
        assert!(matches!(pu_cross_energy(&b1, &b2, &c, &h), Err(Error::DistinctScales)));
    }

    #[test]
    fn predicted_self_energy_tends_to_one() {
        let c = crate::constants::universal_constants(3, 1.0, &Default::default()).unwrap();
        let v = predicted_self_energy(1e9, c.gamma0, &c);
        assert!((v - 1.0).abs() < 1e-8);
        let at8 = predicted_self_energy(8.0, c.gamma0, &c);
        let direct = 1.0 - c.gamma0 * c.gamma0 * 3.0 * c.c1 / 8.0;
        assert!((at8 - direct).abs() < 1e-14);
    }
}
