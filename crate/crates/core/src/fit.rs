//! Best approximation of a field by Σ α_i PU_{(a_i,λ_i)} in the Dirichlet
//! norm, and membership in the neighborhoods V(p, ε).

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubble::BubbleParams;
use crate::error::{Error, Result};
use crate::expansion::{eps_interaction, EpsVariant};
use crate::grid::{dirichlet_inner_product, Grid, ScalarField};
use crate::poisson::{poisson_solve, SolverOptions};
use crate::reduce::chunked_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once an accepted step lowers the residual by less than this fraction.
    pub tol: f64,
    /// Number of screened starting points tried for the first bubble.
    pub starts: usize,
    /// Screening scales; those with λh > 1 are skipped unless none remain.
    pub scales: Vec<f64>,
    /// Start-lattice spacing in mesh widths.
    pub spacing: usize,
    pub solver: SolverOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 60,
            tol: 1e-12,
            starts: 4,
            scales: vec![4.0, 8.0, 16.0, 32.0],
            spacing: 4,
            solver: SolverOptions {
                rel_tol: 1e-11,
                max_iter: 20_000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBubble {
    pub alpha: f64,
    pub center: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p: usize,
    pub bubbles: Vec<FittedBubble>,
    /// |u − Σ α_i PU_i|_{1Ω}
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn params(&self) -> Vec<BubbleParams> {
        self.bubbles
            .iter()
            .map(|b| BubbleParams {
                center: b.center.clone(),
                scale: b.lambda,
                weight: b.alpha,
            })
            .collect()
    }
}

type Theta = [f64; 4];

fn theta_of(b: &BubbleParams) -> Theta {
    [b.center[0], b.center[1], b.center[2], b.scale.ln()]
}

fn lex_theta(a: &Theta, b: &Theta) -> Ordering {
    for k in 0..4 {
        match a[k].total_cmp(&b[k]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// −ΔU_{(a,λ)} and its derivatives in (a, ln λ), n = 3.
fn source_terms(grid: &Grid, theta: &Theta, gamma0: f64, with_derivs: bool) -> Vec<Vec<f64>> {
    let lam = theta[3].exp();
    let amp = 3.0 * gamma0 * lam.powf(2.5);
    let l2 = lam * lam;
    let count = if with_derivs { 5 } else { 1 };
    let mut out = vec![vec![0.0; grid.len()]; count];
    for i in 0..grid.len() {
        let x = grid.position(i);
        let dx = [x[0] - theta[0], x[1] - theta[1], x[2] - theta[2]];
        let s = 1.0 + l2 * (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]);
        let f = amp / (s * s * s.sqrt());
        out[0][i] = f;
        if with_derivs {
            for k in 0..3 {
                out[1 + k][i] = f * 5.0 * l2 * dx[k] / s;
            }
            out[4][i] = f * 2.5 * (2.0 - s) / s;
        }
    }
    out
}

struct Problem<'a> {
    u: &'a ScalarField,
    grid: Arc<Grid>,
    gamma0: f64,
    opts: &'a FitOptions,
}

#[derive(Clone)]
struct State {
    thetas: Vec<Theta>,
    pus: Vec<ScalarField>,
    alpha: Vec<f64>,
    residual: f64,
}

/// min_{α ≥ 0} −2αᵀb + αᵀGα by enumerating active sets.
fn nonneg_least_squares(g: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut best = (0.0, vec![0.0; p]);
    for mask in 1u32..(1 << p) {
        let idx: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
        let m = idx.len();
        let mut a = vec![vec![0.0; m + 1]; m];
        let scale = idx.iter().map(|&i| g[i][i]).fold(0.0, f64::max);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[r][c] = g[i][j];
            }
            a[r][r] += 1e-14 * scale;
            a[r][m] = b[i];
        }
        let Some(x) = solve_dense(a) else { continue };
        if x.iter().any(|v| *v < 0.0) {
            continue;
        }
        let mut full = vec![0.0; p];
        for (r, &i) in idx.iter().enumerate() {
            full[i] = x[r];
        }
        let mut obj = 0.0;
        for i in 0..p {
            obj -= 2.0 * full[i] * b[i];
            for j in 0..p {
                obj += full[i] * g[i][j] * full[j];
            }
        }
        if obj < best.0 {
            best = (obj, full);
        }
    }
    best.1
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            for c in col..=m {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let mut s = a[r][m];
        for c in r + 1..m {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

impl<'a> Problem<'a> {
    fn solve(&self, rhs: Vec<f64>) -> Result<ScalarField> {
        poisson_solve(&ScalarField::from_values(&self.grid, rhs)?, &self.opts.solver)
    }

    fn admissible(&self, t: &Theta) -> bool {
        let h = self.grid.h();
        self.grid.domain().boundary_distance(&t[..3]) > h && t[3].exp() * h <= 4.0 && t.iter().all(|v| v.is_finite())
    }

    fn evaluate(&self, thetas: Vec<Theta>) -> Result<State> {
        let pus = thetas
            .iter()
            .map(|t| self.solve(source_terms(&self.grid, t, self.gamma0, false).swap_remove(0)))
            .collect::<Result<Vec<_>>>()?;
        self.assemble(thetas, pus)
    }

    fn assemble(&self, thetas: Vec<Theta>, pus: Vec<ScalarField>) -> Result<State> {
        let p = pus.len();
        let mut g = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for i in 0..p {
            b[i] = dirichlet_inner_product(self.u, &pus[i])?;
            for j in i..p {
                let v = dirichlet_inner_product(&pus[i], &pus[j])?;
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        let alpha = nonneg_least_squares(&g, &b);
        let r = self.residual_field(&pus, &alpha)?;
        Ok(State {
            thetas,
            pus,
            alpha,
            residual: r.dirichlet_norm(),
        })
    }

    fn residual_field(&self, pus: &[ScalarField], alpha: &[f64]) -> Result<ScalarField> {
        let mut r = self.u.clone();
        for (pu, a) in pus.iter().zip(alpha) {
            r = r.axpy(-a, pu)?;
        }
        Ok(r)
    }

    /// Levenberg–Marquardt on the positions and log-scales with the
    /// weights re-solved at every trial point.
    fn refine(&self, start: Vec<Theta>, trace: &mut Vec<f64>) -> Result<(State, bool, usize)> {
        let mut state = self.evaluate(start)?;
        trace.push(state.residual);
        let mut damping = 1e-3;
        let p = state.thetas.len();
        let dim = 4 * p;
        for it in 1..=self.opts.max_iter {
            if state.residual == 0.0 {
                return Ok((state, true, it - 1));
            }
            let r = self.residual_field(&state.pus, &state.alpha)?;
            let mut cols = Vec::with_capacity(dim);
            for (i, t) in state.thetas.iter().enumerate() {
                let terms = source_terms(&self.grid, t, self.gamma0, true);
                for rhs in terms.into_iter().skip(1) {
                    let scaled = rhs.into_iter().map(|v| v * state.alpha[i]).collect();
                    cols.push(self.solve(scaled)?);
                }
            }
            // Kaufman's variable projection: drop the part of each column the
            // re-solved weights absorb.
            let active: Vec<&ScalarField> = state.pus.iter().zip(&state.alpha).filter(|(_, a)| **a > 0.0).map(|(f, _)| f).collect();
            if !active.is_empty() {
                let na = active.len();
                let mut gram = vec![vec![0.0; na]; na];
                for i in 0..na {
                    for j in 0..na {
                        gram[i][j] = dirichlet_inner_product(active[i], active[j])?;
                    }
                }
                for c in cols.iter_mut() {
                    let mut a = gram.clone();
                    for (i, row) in a.iter_mut().enumerate() {
                        row.push(dirichlet_inner_product(active[i], c)?);
                    }
                    if let Some(coef) = solve_dense(a) {
                        for (f, k) in active.iter().zip(coef) {
                            *c = c.axpy(-k, f)?;
                        }
                    }
                }
            }
            let mut m = vec![vec![0.0; dim]; dim];
            let mut grad = vec![0.0; dim];
            for k in 0..dim {
                grad[k] = dirichlet_inner_product(&cols[k], &r)?;
                for l in k..dim {
                    let v = dirichlet_inner_product(&cols[k], &cols[l])?;
                    m[k][l] = v;
                    m[l][k] = v;
                }
            }
            let mdiag: Vec<f64> = (0..dim).map(|k| if m[k][k] > 0.0 { m[k][k] } else { 1.0 }).collect();
            let mut accepted = None;
            while damping < 1e10 {
                let mut a = vec![vec![0.0; dim + 1]; dim];
                for k in 0..dim {
                    for l in 0..dim {
                        a[k][l] = m[k][l];
                    }
                    a[k][k] += damping * mdiag[k] + 1e-15 * mdiag[k];
                    a[k][dim] = grad[k];
                }
                let Some(step) = solve_dense(a) else {
                    damping *= 4.0;
                    continue;
                };
                let trial: Vec<Theta> = state
                    .thetas
                    .iter()
                    .enumerate()
                    .map(|(i, t)| std::array::from_fn(|k| t[k] + step[4 * i + k]))
                    .collect();
                if !trial.iter().all(|t| self.admissible(t)) {
                    damping *= 4.0;
                    continue;
                }
                let next = self.evaluate(trial)?;
                if next.residual < state.residual {
                    damping = (damping / 3.0).max(1e-12);
                    accepted = Some(next);
                    break;
                }
                damping *= 4.0;
            }
            match accepted {
                None => return Ok((state, true, it)),
                Some(next) => {
                    let drop = state.residual - next.residual;
                    let small = drop <= self.opts.tol * state.residual;
                    state = next;
                    trace.push(state.residual);
                    if small {
                        return Ok((state, true, it));
                    }
                }
            }
        }
        let n = self.opts.max_iter;
        Ok((state, false, n))
    }

    /// Starting points ranked by ⟨v, PU_s⟩ = h³ Σ v·(−ΔU_s), which needs no solve.
    fn screen(&self, v: &ScalarField, count: usize) -> Vec<Theta> {
        let grid = &self.grid;
        let h = grid.h();
        let step = self.opts.spacing.max(1) as i64;
        let mut sites = Vec::new();
        for i in 0..grid.len() {
            let key = grid.lattice_key(i);
            if key.iter().all(|k| k.rem_euclid(step) == 0) && grid.domain().boundary_distance(&grid.position(i)) > 2.0 * h {
                sites.push(grid.position(i));
            }
        }
        // lattice sums of under-resolved profiles overrate large scales
        let mut scales: Vec<f64> = self.opts.scales.iter().copied().filter(|l| l * h <= 1.0).collect();
        if scales.is_empty() {
            scales.extend(self.opts.scales.iter().copied().reduce(f64::min));
        }
        let mut cands: Vec<Theta> = Vec::new();
        for s in &sites {
            for lam in &scales {
                cands.push([s[0], s[1], s[2], lam.ln()]);
            }
        }
        let w = grid.weight();
        let scores: Vec<f64> = cands
            .par_iter()
            .map(|t| {
                let lam = t[3].exp();
                let l2 = lam * lam;
                let amp = 3.0 * self.gamma0 * lam.powf(2.5);
                chunked_sum(grid.len(), |i| {
                    let x = grid.position(i);
                    let r2 = (x[0] - t[0]).powi(2) + (x[1] - t[1]).powi(2) + (x[2] - t[2]).powi(2);
                    let s = 1.0 + l2 * r2;
                    v.values()[i] * amp / (s * s * s.sqrt())
                }) * w
            })
            .collect();
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(lex_theta(&cands[a], &cands[b])));
        order.into_iter().take(count).map(|i| cands[i]).collect()
    }

    fn pursue(&self, first: Theta, p: usize) -> Result<(State, bool, usize, Vec<f64>)> {
        let mut trace = Vec::new();
        let (mut state, mut conv, mut iters) = self.refine(vec![first], &mut trace)?;
        while state.thetas.len() < p {
            let r = self.residual_field(&state.pus, &state.alpha)?;
            let next = self.screen(&r, 1);
            let Some(t) = next.first() else { break };
            let mut thetas = state.thetas.clone();
            thetas.push(*t);
            let (s, c, k) = self.refine(thetas, &mut trace)?;
            state = s;
            conv = c;
            iters += k;
        }
        Ok((state, conv, iters, trace))
    }
}

/// Locally minimizes |u − Σ α_i PU_{(a_i,λ_i)}|_{1Ω}. Without `init`, the
/// best of several screened starts wins, ties broken by the parameters.
pub fn bubble_fit(u: &ScalarField, p: usize, init: Option<&[BubbleParams]>, gamma0: f64, opts: &FitOptions) -> Result<FitResult> {
    if p == 0 {
        return Err(Error::domain("fit needs p ≥ 1"));
    }
    if p > 8 {
        return Err(Error::Unsupported("fits with more than 8 bubbles".into()));
    }
    if u.is_zero() {
        return Err(Error::ZeroField);
    }
    let prob = Problem {
        u,
        grid: u.grid().clone(),
        gamma0,
        opts,
    };
    let mut outcomes = Vec::new();
    match init {
        Some(init) => {
            if init.len() != p {
                return Err(Error::domain("initial configuration size differs from p"));
            }
            let thetas: Vec<Theta> = init.iter().map(theta_of).collect();
            if !thetas.iter().all(|t| prob.admissible(t)) {
                return Err(Error::domain("initial configuration outside the admissible set"));
            }
            let mut trace = Vec::new();
            let (s, c, k) = prob.refine(thetas, &mut trace)?;
            outcomes.push((s, c, k, trace));
        }
        None => {
            for start in prob.screen(u, opts.starts.max(1)) {
                outcomes.push(prob.pursue(start, p)?);
            }
        }
    }
    let key = |s: &State| {
        let mut ts = s.thetas.clone();
        ts.sort_by(lex_theta);
        ts
    };
    outcomes.sort_by(|a, b| {
        a.0.residual.total_cmp(&b.0.residual).then_with(|| {
            let (ka, kb) = (key(&a.0), key(&b.0));
            ka.iter().zip(&kb).map(|(x, y)| lex_theta(x, y)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
        })
    });
    let (state, converged, iterations, trace) = outcomes.swap_remove(0);
    let mut bubbles: Vec<FittedBubble> = state
        .thetas
        .iter()
        .zip(&state.alpha)
        .map(|(t, a)| FittedBubble {
            alpha: *a,
            center: t[..3].to_vec(),
            lambda: t[3].exp(),
        })
        .collect();
    bubbles.sort_by(|a, b| lex_theta(&[a.center[0], a.center[1], a.center[2], a.lambda], &[b.center[0], b.center[1], b.center[2], b.lambda]));
    Ok(FitResult {
        p,
        bubbles,
        residual: state.residual,
        converged,
        iterations,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MembershipStatus {
    Member,
    NonMember,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub p: usize,
    pub eps: f64,
    pub status: MembershipStatus,
    /// ε − residual
    pub residual_margin: f64,
    /// min λ_i − 1/ε
    pub scale_margin: f64,
    /// min λ_i d(a_i,∂Ω) − 1/ε
    pub boundary_margin: f64,
    /// ε − max ε_ij (∞ for p = 1)
    pub interaction_margin: f64,
    pub min_alpha: f64,
    pub fit: Option<FitResult>,
    pub note: Option<String>,
}

pub fn v_membership(
    u: &ScalarField,
    p: usize,
    eps: f64,
    variant: EpsVariant,
    gamma0: f64,
    opts: &FitOptions,
) -> Result<Membership> {
    if !(eps > 0.0) {
        return Err(Error::domain("ε must be positive"));
    }
    let indeterminate = |note: String, fit: Option<FitResult>| Membership {
        p,
        eps,
        status: MembershipStatus::Indeterminate,
        residual_margin: f64::NAN,
        scale_margin: f64::NAN,
        boundary_margin: f64::NAN,
        interaction_margin: f64::NAN,
        min_alpha: f64::NAN,
        fit,
        note: Some(note),
    };
    let fit = match bubble_fit(u, p, None, gamma0, opts) {
        Ok(f) => f,
        Err(e) if e.is_numeric_failure() => return Ok(indeterminate(e.to_string(), None)),
        Err(e) => return Err(e),
    };
    if !fit.converged {
        return Ok(indeterminate("fit did not converge".into(), Some(fit)));
    }
    let domain = u.grid().domain();
    let params = fit.params();
    let scale_margin = params.iter().map(|b| b.scale).fold(f64::INFINITY, f64::min) - 1.0 / eps;
    let boundary_margin = params
        .iter()
        .map(|b| b.scale * domain.boundary_distance(&b.center))
        .fold(f64::INFINITY, f64::min)
        - 1.0 / eps;
    let mut max_eps = f64::NEG_INFINITY;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                max_eps = max_eps.max(eps_interaction(&params[i], &params[j], variant));
            }
        }
    }
    let interaction_margin = eps - max_eps;
    let residual_margin = eps - fit.residual;
    let min_alpha = params.iter().map(|b| b.weight).fold(f64::INFINITY, f64::min);
    let member = residual_margin > 0.0 && scale_margin > 0.0 && boundary_margin > 0.0 && interaction_margin > 0.0 && min_alpha > 0.0;
    Ok(Membership {
        p,
        eps,
        status: if member { MembershipStatus::Member } else { MembershipStatus::NonMember },
        residual_margin,
        scale_margin,
        boundary_margin,
        interaction_margin,
        min_alpha,
        fit: Some(fit),
        note: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::grid::make_grid;
    use crate::projection::bubble_rhs;

    const G0: f64 = 0.367_552_596_947_861;

    #[test]
    fn source_derivatives_match_differences() {
        let g = make_grid(&Domain::unit_ball(3), 0.25).unwrap();
        let t: Theta = [0.1, -0.05, 0.2, 6f64.ln()];
        let base = source_terms(&g, &t, G0, true);
        let p = BubbleParams::new(t[..3].to_vec(), 6.0).unwrap();
        let f = bubble_rhs(&p, &g, G0);
        for i in 0..g.len() {
            assert!((f.values()[i] - base[0][i]).abs() < 1e-12 * f.values()[i]);
        }
        for k in 0..4 {
            let e = 1e-6;
            let mut tp = t;
            tp[k] += e;
            let mut tm = t;
            tm[k] -= e;
            let fp = source_terms(&g, &tp, G0, false).swap_remove(0);
            let fm = source_terms(&g, &tm, G0, false).swap_remove(0);
            for i in 0..g.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * e);
                assert!((fd - base[1 + k][i]).abs() < 1e-6 * (1.0 + fd.abs()), "k={k}");
            }
        }
    }

    #[test]
    fn nnls_drops_negative_weights() {
        let g = vec![vec![1.0, 0.9], vec![0.9, 1.0]];
        let a = nonneg_least_squares(&g, &[1.0, 0.5]);
        assert_eq!(a[1], 0.0);
        assert!((a[0] - 1.0).abs() < 1e-12);
        let a = nonneg_least_squares(&[vec![2.0, 0.0], vec![0.0, 1.0]], &[1.0, 3.0]);
        assert!((a[0] - 0.5).abs() < 1e-12 && (a[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn self_fit_from_nearby_start() {
        let g = make_grid(&Domain::unit_ball(3), 1.0 / 12.0).unwrap();
        let truth = BubbleParams::new(vec![0.1, 0.0, -0.1], 6.0).unwrap();
        let pu = poisson_solve(&bubble_rhs(&truth, &g, G0), &Default::default()).unwrap();
        let u = pu.scaled(1.0 / pu.dirichlet_norm());
        let init = BubbleParams::new(vec![0.15, 0.05, -0.05], 5.0).unwrap();
        let f = bubble_fit(&u, 1, Some(&[init]), G0, &FitOptions::default()).unwrap();
        assert!(f.converged);
        let b = &f.bubbles[0];
        assert!((b.lambda / 6.0 - 1.0).abs() < 1e-4, "{b:?}");
        assert!(truth.distance_to(&b.center) < 1e-4);
        assert!((b.alpha - 1.0 / pu.dirichlet_norm()).abs() < 1e-4);
        assert!(f.residual < 1e-5);
    }
}
