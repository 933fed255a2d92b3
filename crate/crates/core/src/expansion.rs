//! Multi-bubble energy expansion for a common concentration scale, the
//! interaction parameter ε_ij and the upper bounds on J of normalized
//! bubble sums.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bubble::BubbleParams;
use crate::constants::UniversalConstants;
use crate::domain::Domain;
use crate::energy::{functional_j, EnergyMethod, HlsKernel};
use crate::error::{Error, Result};
use crate::green::{green_eval, harmonic_part_closed, harmonic_parts_on_grid, HarmonicCorrection};
use crate::grid::{make_grid, ScalarField};
use crate::poisson::SolverOptions;
use crate::projection::{project_bubble, richardson, ProjectionMethod, ProjectionOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleConfiguration {
    pub bubbles: Vec<BubbleParams>,
    pub domain: Domain,
}

fn lex(a: &BubbleParams, b: &BubbleParams) -> Ordering {
    for (x, y) in a.center.iter().zip(&b.center) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.scale.total_cmp(&b.scale).then(a.weight.total_cmp(&b.weight))
}

impl BubbleConfiguration {
    pub fn new(bubbles: Vec<BubbleParams>, domain: Domain) -> Result<Self> {
        if bubbles.is_empty() {
            return Err(Error::domain("a configuration needs at least one bubble"));
        }
        for b in &bubbles {
            if b.dim() != domain.dim() {
                return Err(Error::domain("bubble and domain dimensions differ"));
            }
            if domain.boundary_distance(&b.center) <= 0.0 {
                return Err(Error::domain("concentration points must lie inside the domain"));
            }
        }
        Ok(BubbleConfiguration { bubbles, domain })
    }

    pub fn p(&self) -> usize {
        self.bubbles.len()
    }

    /// Bubbles sorted lexicographically by (center, scale, weight).
    pub fn canonical(&self) -> Self {
        let mut bubbles = self.bubbles.clone();
        bubbles.sort_by(lex);
        BubbleConfiguration {
            bubbles,
            domain: self.domain.clone(),
        }
    }

    pub fn common_scale(&self) -> Result<f64> {
        let l = self.bubbles[0].scale;
        if self.bubbles.iter().any(|b| b.scale != l) {
            return Err(Error::DistinctScales);
        }
        Ok(l)
    }

    /// d_a = min_{i≠j} |a_i − a_j|; infinite for one bubble.
    pub fn separation(&self) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..self.p() {
            for j in i + 1..self.p() {
                d = d.min(self.bubbles[i].distance_to(&self.bubbles[j].center));
            }
        }
        d
    }

    pub fn min_boundary_distance(&self) -> f64 {
        self.bubbles
            .iter()
            .map(|b| self.domain.boundary_distance(&b.center))
            .fold(f64::INFINITY, f64::min)
    }

    fn check_distinct(&self) -> Result<()> {
        for i in 0..self.p() {
            for j in i + 1..self.p() {
                if self.bubbles[i].center == self.bubbles[j].center {
                    return Err(Error::CoincidentPoints(i, j));
                }
            }
        }
        Ok(())
    }

    /// Σ α_i PU_i on `grid` with grid-solved projections.
    pub fn projected_sum(&self, grid: &std::sync::Arc<crate::grid::Grid>, gamma0: f64, solver: &SolverOptions) -> Result<ScalarField> {
        let opts = ProjectionOptions {
            solver: *solver,
            ..Default::default()
        };
        let mut sum = ScalarField::zeros(grid);
        for b in &self.bubbles {
            let pb = project_bubble(b, grid, ProjectionMethod::Solve, gamma0, None, &opts)?;
            sum = sum.axpy(b.weight, &pb.field)?;
        }
        Ok(sum)
    }
}

/// J of the normalized bubble sum on a grid of width `h`.
pub fn direct_j(config: &BubbleConfiguration, h: f64, consts: &UniversalConstants, solver: &SolverOptions) -> Result<f64> {
    let grid = make_grid(&config.domain, h)?;
    let sum = config.projected_sum(&grid, consts.gamma0, solver)?;
    let kernel = HlsKernel::new(&grid, consts.exponents.mu)?;
    functional_j(&sum, consts, &kernel, EnergyMethod::Fft)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectSpec {
    pub h: f64,
    /// Also evaluate at h/2 and extrapolate the O(h²) term away.
    pub richardson: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionOptions {
    /// Mesh width for Green-function solves on non-ball domains.
    pub green_h: f64,
    pub direct: Option<DirectSpec>,
    pub solver: SolverOptions,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        ExpansionOptions {
            green_h: 0.025,
            direct: None,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub p: usize,
    pub lambda: f64,
    pub d_a: f64,
    pub leading: f64,
    pub correction: f64,
    pub predicted_j: f64,
    pub direct_j: Option<f64>,
    /// Grid values of J behind `direct_j`: (h, J_h) pairs.
    pub direct_samples: Vec<(f64, f64)>,
    pub gap: Option<f64>,
    /// λ·d_a
    pub regime_separation: f64,
    /// λ·min_i d(a_i, ∂Ω)
    pub regime_boundary: f64,
    pub green_source: String,
    pub robin: Vec<f64>,
}

/// Robin values H(a_i,a_i) and symmetric Green values G(a_i,a_j).
pub fn green_matrix(
    config: &BubbleConfiguration,
    gamma0: f64,
    green_h: f64,
    solver: &SolverOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, String)> {
    let p = config.p();
    let sources: Vec<Vec<f64>> = config.bubbles.iter().map(|b| b.center.clone()).collect();
    let (corrs, label): (Vec<HarmonicCorrection>, &str) = match config.domain {
        Domain::Ball { .. } => (
            sources
                .iter()
                .map(|a| harmonic_part_closed(a, &config.domain, gamma0))
                .collect::<Result<_>>()?,
            "closed",
        ),
        _ => (harmonic_parts_on_grid(&sources, &config.domain, green_h, gamma0, solver)?, "grid"),
    };
    let mut robin = vec![0.0; p];
    let mut g = vec![vec![0.0; p]; p];
    for i in 0..p {
        robin[i] = corrs[i].eval(&sources[i])?.value;
        for j in 0..p {
            if i != j {
                g[i][j] = green_eval(&sources[j], &corrs[i])?.value;
            }
        }
    }
    for i in 0..p {
        for j in i + 1..p {
            let s = 0.5 * (g[i][j] + g[j][i]);
            g[i][j] = s;
            g[j][i] = s;
        }
    }
    Ok((robin, g, label.to_string()))
}

/// The bracketed interaction sum of the expansion.
pub fn interaction_sum(alpha: &[f64], robin: &[f64], green: &[Vec<f64>], q: f64) -> f64 {
    let s2: f64 = alpha.iter().map(|a| a * a).sum();
    let s2q: f64 = alpha.iter().map(|a| a.powf(2.0 * q)).sum();
    let mut t = 0.0;
    for i in 0..alpha.len() {
        t += (alpha[i] * alpha[i] / s2 - 2.0 * alpha[i].powf(2.0 * q) / s2q) * robin[i];
        for k in 0..alpha.len() {
            if k != i {
                t += (2.0 * alpha[i].powf(2.0 * q - 1.0) * alpha[k] / s2q - alpha[i] * alpha[k] / s2) * green[i][k];
            }
        }
    }
    t
}

/// S̃_HL (Σα_i²)^{2*_μ}/Σα_i^{2·2*_μ}
pub fn leading_term(alpha: &[f64], consts: &UniversalConstants) -> f64 {
    let q = consts.exponents.two_mu_star;
    let s2: f64 = alpha.iter().map(|a| a * a).sum();
    let s2q: f64 = alpha.iter().map(|a| a.powf(2.0 * q)).sum();
    consts.s_tilde_hl * s2.powf(q) / s2q
}

pub fn expansion_j(config: &BubbleConfiguration, consts: &UniversalConstants, opts: &ExpansionOptions) -> Result<ExpansionReport> {
    let config = config.canonical();
    let lambda = config.common_scale()?;
    config.check_distinct()?;
    let e = &consts.exponents;
    let n = e.dim();
    let q = e.two_mu_star;
    let alpha: Vec<f64> = config.bubbles.iter().map(|b| b.weight).collect();
    if alpha.iter().all(|a| *a == 0.0) {
        return Err(Error::ZeroField);
    }
    let (robin, green, source) = green_matrix(&config, consts.gamma0, opts.green_h, &opts.solver)?;
    let leading = leading_term(&alpha, consts);
    let bracket = interaction_sum(&alpha, &robin, &green, q);
    let predicted_j = leading * (1.0 - q * consts.interaction_coefficient() / lambda.powf(n - 2.0) * bracket);
    let mut direct_samples = Vec::new();
    let direct_j = match opts.direct {
        None => None,
        Some(spec) => {
            let j1 = direct_j(&config, spec.h, consts, &opts.solver)?;
            direct_samples.push((spec.h, j1));
            if spec.richardson {
                let h2 = spec.h / 2.0;
                let j2 = direct_j(&config, h2, consts, &opts.solver)?;
                direct_samples.push((h2, j2));
                Some(richardson(spec.h, j1, h2, j2))
            } else {
                Some(j1)
            }
        }
    };
    let d_a = config.separation();
    Ok(ExpansionReport {
        p: config.p(),
        lambda,
        d_a,
        leading,
        correction: predicted_j - leading,
        predicted_j,
        direct_j,
        direct_samples,
        gap: direct_j.map(|d| (predicted_j - d).abs()),
        regime_separation: lambda * d_a,
        regime_boundary: lambda * config.min_boundary_distance(),
        green_source: source,
        robin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsVariant {
    /// λ_i|a_i − a_j|² inside the bracket.
    AsWritten,
    /// λ_iλ_j|a_i − a_j|² inside the bracket.
    Symmetric,
}

/// (λ_i/λ_j + λ_j/λ_i + c|a_i−a_j|²)^{(2−n)/2}
pub fn eps_interaction(bi: &BubbleParams, bj: &BubbleParams, variant: EpsVariant) -> f64 {
    let n = bi.dim() as f64;
    let d2 = bi.distance_to(&bj.center).powi(2);
    let c = match variant {
        EpsVariant::AsWritten => bi.scale,
        EpsVariant::Symmetric => bi.scale * bj.scale,
    };
    (bi.scale / bj.scale + bj.scale / bi.scale + c * d2).powf((2.0 - n) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub j: f64,
    pub eps: f64,
    pub slack: f64,
    /// (p+ε)^{2*_μ−1} S̃_HL
    pub bound_upper_eps: f64,
    pub margin_upper_eps: f64,
    pub holds_upper_eps: bool,
    /// p^{2*_μ−1} S̃_HL (1 + slack)
    pub bound_degenerate: f64,
    pub margin_degenerate: f64,
    pub holds_degenerate: bool,
}

/// Compares J of the normalized bubble sum, computed by `energy`, with both
/// upper bounds.
pub fn bound_checks<F>(config: &BubbleConfiguration, consts: &UniversalConstants, eps: f64, slack: f64, energy: F) -> Result<BoundReport>
where
    F: Fn(&BubbleConfiguration) -> Result<f64>,
{
    let q = consts.exponents.two_mu_star;
    let p = config.p() as f64;
    let j = energy(config)?;
    let b1 = (p + eps).powf(q - 1.0) * consts.s_tilde_hl;
    let b2 = p.powf(q - 1.0) * consts.s_tilde_hl * (1.0 + slack);
    Ok(BoundReport {
        j,
        eps,
        slack,
        bound_upper_eps: b1,
        margin_upper_eps: b1 - j,
        holds_upper_eps: j <= b1,
        bound_degenerate: b2,
        margin_degenerate: b2 - j,
        holds_degenerate: j <= b2,
    })
}

/// Smallest λ with S̃(1 + 2*_μ n(n−2)γ₀c₁H(a,a)/λ^{n−2}) ≤ (1+ε)^{2*_μ−1}S̃.
pub fn single_bubble_threshold(robin: f64, eps: f64, consts: &UniversalConstants) -> f64 {
    let e = &consts.exponents;
    let n = e.dim();
    let room = (1.0 + eps).powf(e.two_mu_star - 1.0) - 1.0;
    (e.two_mu_star * consts.interaction_coefficient() * robin / room).powf(1.0 / (n - 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::universal_constants;

    fn consts() -> UniversalConstants {
        universal_constants(3, 1.0, &Default::default()).unwrap()
    }

    #[test]
    fn single_bubble_expansion_form() {
        let c = consts();
        let a = vec![0.2, -0.1, 0.3];
        let cfg = BubbleConfiguration::new(vec![BubbleParams::weighted(a.clone(), 20.0, 0.7).unwrap()], Domain::unit_ball(3)).unwrap();
        let r = expansion_j(&cfg, &c, &Default::default()).unwrap();
        let h = crate::green::harmonic_part_ball(&a, &a, &Domain::unit_ball(3), c.gamma0).unwrap();
        let want = c.s_tilde_hl * (1.0 + 5.0 * c.interaction_coefficient() * h / 20.0);
        assert!((r.predicted_j - want).abs() < 1e-12 * want);
        assert!(r.correction > 0.0);
        assert!((r.leading - c.s_tilde_hl).abs() < 1e-12 * c.s_tilde_hl);
    }

    #[test]
    fn equal_weights_leading_term() {
        let c = consts();
        for p in 1..5 {
            let alpha = vec![1.0 / p as f64; p];
            let want = c.s_tilde_hl * (p as f64).powf(4.0);
            assert!((leading_term(&alpha, &c) - want).abs() < 1e-12 * want);
        }
        let l = leading_term(&[0.3, 0.5, 0.2], &c);
        assert!(l <= c.s_tilde_hl * 3f64.powf(4.0) * (1.0 + 1e-12));
    }

    #[test]
    fn distinct_scales_and_coincident_points_rejected() {
        let c = consts();
        let b = Domain::unit_ball(3);
        let cfg = BubbleConfiguration::new(
            vec![BubbleParams::new(vec![0.1, 0.0, 0.0], 8.0).unwrap(), BubbleParams::new(vec![-0.1, 0.0, 0.0], 9.0).unwrap()],
            b.clone(),
        )
        .unwrap();
        assert!(matches!(expansion_j(&cfg, &c, &Default::default()), Err(Error::DistinctScales)));
        let cfg = BubbleConfiguration::new(
            vec![BubbleParams::new(vec![0.1, 0.0, 0.0], 8.0).unwrap(), BubbleParams::new(vec![0.1, 0.0, 0.0], 8.0).unwrap()],
            b,
        )
        .unwrap();
        assert!(matches!(expansion_j(&cfg, &c, &Default::default()), Err(Error::CoincidentPoints(_, _))));
    }

    #[test]
    fn permutation_invariance() {
        let c = consts();
        let b = Domain::unit_ball(3);
        let p1 = BubbleParams::weighted(vec![0.3, 0.0, 0.1], 12.0, 0.6).unwrap();
        let p2 = BubbleParams::weighted(vec![-0.2, 0.2, 0.0], 12.0, 0.4).unwrap();
        let r1 = expansion_j(&BubbleConfiguration::new(vec![p1.clone(), p2.clone()], b.clone()).unwrap(), &c, &Default::default()).unwrap();
        let r2 = expansion_j(&BubbleConfiguration::new(vec![p2, p1], b).unwrap(), &c, &Default::default()).unwrap();
        assert_eq!(r1.predicted_j.to_bits(), r2.predicted_j.to_bits());
    }

    #[test]
    fn eps_values() {
        let a = BubbleParams::new(vec![0.0; 3], 7.0).unwrap();
        assert!((eps_interaction(&a, &a, EpsVariant::AsWritten) - 0.5f64.sqrt()).abs() < 1e-15);
        let b = BubbleParams::new(vec![0.5, 0.0, 0.0], 7.0).unwrap();
        let want = (2.0 + 7.0 * 0.25f64).powf(-0.5);
        assert!((eps_interaction(&a, &b, EpsVariant::AsWritten) - want).abs() < 1e-15);
        let want = (2.0 + 49.0 * 0.25f64).powf(-0.5);
        assert!((eps_interaction(&a, &b, EpsVariant::Symmetric) - want).abs() < 1e-15);
        let far = BubbleParams::new(vec![0.0; 3], 7e6).unwrap();
        assert!(eps_interaction(&a, &far, EpsVariant::AsWritten) < 1e-3);
    }

    #[test]
    fn threshold_inverts_single_bubble_expansion() {
        let c = consts();
        let lam = single_bubble_threshold(c.gamma0, 0.25, &c);
        let j = c.s_tilde_hl * (1.0 + 5.0 * c.interaction_coefficient() * c.gamma0 / lam);
        assert!((j - 1.25f64.powi(4) * c.s_tilde_hl).abs() < 1e-9 * j);
    }
}
