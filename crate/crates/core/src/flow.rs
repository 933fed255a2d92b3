//! Normalized gradient flow u̇ = −∂J(u) on the nonnegative part of the unit
//! Dirichlet sphere, with backtracking so that J never increases.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bubble::BubbleParams;
use crate::constants::UniversalConstants;
use crate::energy::{functional_j, grad_j, EnergyMethod, HlsKernel};
use crate::error::{Error, Result};
use crate::expansion::EpsVariant;
use crate::fit::{v_membership, FitOptions, FitResult, Membership, MembershipStatus};
use crate::grid::{Grid, ScalarField};
use crate::poisson::{poisson_solve, SolverOptions};
use crate::projection::bubble_rhs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SeedKind {
    SingleBubble { center: Vec<f64>, lambda: f64 },
    MultiBubble { bubbles: Vec<BubbleParams> },
    RandomBump { seed: u64, bumps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub time: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub u: ScalarField,
    pub time: f64,
    pub history: Vec<HistoryEntry>,
    pub dt: f64,
    grad: Option<ScalarField>,
}

impl FlowState {
    pub fn j(&self) -> f64 {
        self.history.last().map(|h| h.j).unwrap_or(f64::NAN)
    }

    pub fn grad_norm(&self) -> f64 {
        self.history.last().map(|h| h.grad_norm).unwrap_or(f64::NAN)
    }

    pub fn accepted_steps(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Initial step; by default 0.02/|∂J(u₀)|.
    pub dt: Option<f64>,
    /// Growth cap, as a multiple of the initial step.
    pub dt_max_factor: f64,
    /// Backtracking floor, as a multiple of the initial step.
    pub dt_min_factor: f64,
    pub growth: f64,
    pub method: EnergyMethod,
    pub solver: SolverOptions,
    /// Accepted steps between snapshots.
    pub snapshot_every: usize,
    pub max_steps: usize,
    /// Stop once max u > alarm_factor·h^{−(n−2)/2}.
    pub alarm_factor: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            dt: None,
            dt_max_factor: 4.0,
            dt_min_factor: 1e-8,
            growth: 1.25,
            method: EnergyMethod::Fft,
            solver: SolverOptions::default(),
            snapshot_every: 50,
            max_steps: 1000,
            alarm_factor: 0.5,
        }
    }
}

/// Everything a trajectory needs besides its state.
pub struct Flow {
    pub consts: UniversalConstants,
    pub kernel: HlsKernel,
    pub opts: FlowOptions,
    dt_scale: std::sync::OnceLock<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    Accepted,
    Stagnated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowStatus {
    Horizon,
    StepLimit,
    Stagnation,
    ConcentrationAlarm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub grad_norm: f64,
    pub max: f64,
    #[serde(skip)]
    pub field: Option<ScalarField>,
}

#[derive(Debug, Clone)]
pub struct FlowSummary {
    pub state: FlowState,
    pub status: FlowStatus,
    pub snapshots: Vec<Snapshot>,
    pub j_limit: f64,
    /// Nearest level p^{2*_μ−1}S̃_HL.
    pub level: usize,
}

/// Nearest p ≥ 1 to J in the ladder p^{2*_μ−1}S̃_HL.
pub fn classify_level(j: f64, consts: &UniversalConstants) -> usize {
    let q = consts.exponents.two_mu_star;
    let mut best = (f64::INFINITY, 1);
    for p in 1..=64usize {
        let gap = (j - (p as f64).powf(q - 1.0) * consts.s_tilde_hl).abs();
        if gap < best.0 {
            best = (gap, p);
        }
    }
    best.1
}

fn normalize_nonneg(mut u: ScalarField) -> Result<ScalarField> {
    u.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let norm = u.dirichlet_norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroField);
    }
    Ok(u.scaled(1.0 / norm))
}

/// Builds a seed on `grid`: bubbles enter through their H¹₀ projections.
pub fn seed_field(kind: &SeedKind, grid: &Arc<Grid>, gamma0: f64, solver: &SolverOptions) -> Result<ScalarField> {
    let domain = grid.domain();
    let project = |b: &BubbleParams| -> Result<ScalarField> {
        if domain.boundary_distance(&b.center) <= 0.0 {
            return Err(Error::domain("seed bubble center outside the domain"));
        }
        Ok(poisson_solve(&bubble_rhs(b, grid, gamma0), solver)?.scaled(b.weight))
    };
    let raw = match kind {
        SeedKind::SingleBubble { center, lambda } => project(&BubbleParams::new(center.clone(), *lambda)?)?,
        SeedKind::MultiBubble { bubbles } => {
            let mut acc = ScalarField::zeros(grid);
            for b in bubbles {
                acc = acc.axpy(1.0, &project(b)?)?;
            }
            acc
        }
        SeedKind::RandomBump { seed, bumps } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let (lo, hi) = domain.bounding_box();
            let scale = domain.inradius();
            let mut centers = Vec::new();
            while centers.len() < *bumps {
                let c: Vec<f64> = (0..3).map(|k| rng.gen_range(lo[k]..hi[k])).collect();
                let d = domain.boundary_distance(&c);
                if d > 0.1 * scale {
                    let w = rng.gen_range(0.15..0.5) * d;
                    let amp = rng.gen_range(0.5..1.5);
                    centers.push((c, w, amp));
                }
            }
            ScalarField::from_fn(grid, |x| {
                let d = domain.boundary_distance(x).max(0.0);
                let envelope = (d / scale).min(1.0);
                envelope
                    * centers
                        .iter()
                        .map(|(c, w, a)| {
                            let r2: f64 = x.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum();
                            a * (-r2 / (2.0 * w * w)).exp()
                        })
                        .sum::<f64>()
            })
        }
    };
    normalize_nonneg(raw)
}

impl Flow {
    pub fn new(grid: &Arc<Grid>, consts: UniversalConstants, opts: FlowOptions) -> Result<Self> {
        let kernel = HlsKernel::new(grid, consts.exponents.mu)?;
        Ok(Flow {
            consts,
            kernel,
            opts,
            dt_scale: std::sync::OnceLock::new(),
        })
    }

    fn gradient(&self, u: &ScalarField) -> Result<ScalarField> {
        grad_j(u, &self.consts, &self.kernel, self.opts.method, true, &self.opts.solver)
    }

    fn j(&self, u: &ScalarField) -> Result<f64> {
        functional_j(u, &self.consts, &self.kernel, self.opts.method)
    }

    /// Wraps a seed field, clamped and normalized, as a state at time 0.
    pub fn start(&self, seed: ScalarField) -> Result<FlowState> {
        let on_sphere = seed.min() >= 0.0 && (seed.dirichlet_norm() - 1.0).abs() <= 1e-12;
        let u = if on_sphere { seed } else { normalize_nonneg(seed)? };
        let g = self.gradient(&u)?;
        let gn = g.dirichlet_norm();
        let dt = match self.opts.dt {
            Some(dt) => dt,
            None => 0.02 / gn.max(f64::MIN_POSITIVE),
        };
        let _ = self.dt_scale.set(dt);
        Ok(FlowState {
            history: vec![HistoryEntry {
                time: 0.0,
                j: self.j(&u)?,
                grad_norm: gn,
            }],
            u,
            time: 0.0,
            dt,
            grad: Some(g),
        })
    }

    /// One accepted explicit step, halving dt on any increase of J.
    pub fn step(&self, state: &mut FlowState) -> Result<StepStatus> {
        let g = match state.grad.take() {
            Some(g) => g,
            None => self.gradient(&state.u)?,
        };
        let base = *self.dt_scale.get_or_init(|| state.dt);
        let floor = base * self.opts.dt_min_factor;
        let cap = base * self.opts.dt_max_factor;
        let j0 = state.j();
        let mut dt = state.dt;
        loop {
            if dt < floor {
                state.grad = Some(g);
                state.dt = floor;
                return Ok(StepStatus::Stagnated);
            }
            let trial = match normalize_nonneg(state.u.axpy(-dt, &g)?) {
                Ok(t) => t,
                Err(Error::ZeroField) => {
                    dt *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let jt = self.j(&trial)?;
            if jt <= j0 {
                let gt = self.gradient(&trial)?;
                state.time += dt;
                state.history.push(HistoryEntry {
                    time: state.time,
                    j: jt,
                    grad_norm: gt.dirichlet_norm(),
                });
                state.u = trial;
                state.grad = Some(gt);
                state.dt = (dt * self.opts.growth).min(cap);
                return Ok(StepStatus::Accepted);
            }
            dt *= 0.5;
        }
    }

    /// Iterates until `horizon` in flow time, the step limit, stagnation, or
    /// the concentration alarm. Snapshots include the seed and the final state.
    pub fn run<F>(&self, mut state: FlowState, horizon: f64, mut on_snapshot: F) -> Result<FlowSummary>
    where
        F: FnMut(&Snapshot),
    {
        if !(horizon >= 0.0) {
            return Err(Error::domain("horizon must be nonnegative"));
        }
        let h = state.u.grid().h();
        let alarm = self.opts.alarm_factor * h.powf(-0.5);
        let mut snapshots = Vec::new();
        let mut take = |state: &FlowState, snaps: &mut Vec<Snapshot>| {
            let s = Snapshot {
                step: state.accepted_steps(),
                time: state.time,
                j: state.j(),
                grad_norm: state.grad_norm(),
                max: state.u.max(),
                field: Some(state.u.clone()),
            };
            on_snapshot(&s);
            snaps.push(s);
        };
        take(&state, &mut snapshots);
        let status = loop {
            if state.time >= horizon {
                break FlowStatus::Horizon;
            }
            if state.accepted_steps() >= self.opts.max_steps {
                break FlowStatus::StepLimit;
            }
            if state.u.max() > alarm {
                break FlowStatus::ConcentrationAlarm;
            }
            if self.step(&mut state)? == StepStatus::Stagnated {
                break FlowStatus::Stagnation;
            }
            if state.accepted_steps() % self.opts.snapshot_every.max(1) == 0 {
                take(&state, &mut snapshots);
            }
        };
        if snapshots.last().map(|s| s.step) != Some(state.accepted_steps()) {
            take(&state, &mut snapshots);
        }
        let j_limit = state.j();
        Ok(FlowSummary {
            level: classify_level(j_limit, &self.consts),
            state,
            status,
            snapshots,
            j_limit,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcentrationReport {
    #[serde(rename = "J")]
    pub j: f64,
    pub level: usize,
    pub eps: f64,
    pub memberships: Vec<Membership>,
    /// Every p whose membership holds; several may.
    pub holding: Vec<usize>,
}

impl ConcentrationReport {
    pub fn best_fit(&self, p: usize) -> Option<&FitResult> {
        self.memberships.iter().find(|m| m.p == p).and_then(|m| m.fit.as_ref())
    }
}

pub fn concentration_diagnostics(
    u: &ScalarField,
    p_max: usize,
    eps: f64,
    variant: EpsVariant,
    consts: &UniversalConstants,
    fit: &FitOptions,
) -> Result<ConcentrationReport> {
    if p_max == 0 {
        return Err(Error::domain("p_max must be at least 1"));
    }
    let kernel = HlsKernel::new(u.grid(), consts.exponents.mu)?;
    let j = functional_j(u, consts, &kernel, EnergyMethod::Fft)?;
    let memberships = (1..=p_max)
        .map(|p| v_membership(u, p, eps, variant, consts.gamma0, fit))
        .collect::<Result<Vec<_>>>()?;
    let holding = memberships
        .iter()
        .filter(|m| m.status == MembershipStatus::Member)
        .map(|m| m.p)
        .collect();
    Ok(ConcentrationReport {
        j,
        level: classify_level(j, consts),
        eps,
        memberships,
        holding,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotEntry {
    #[serde(flatten)]
    pub snapshot: Snapshot,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowManifest {
    pub status: FlowStatus,
    pub steps: usize,
    pub time: f64,
    pub j_limit: f64,
    pub level: usize,
    pub snapshots: Vec<SnapshotEntry>,
    pub history: Vec<HistoryEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<ConcentrationReport>,
}

impl FlowSummary {
    /// Writes snapshot_XXXXXX.bin files, history.csv and returns the manifest.
    pub fn write_artifacts(&self, dir: &Path) -> Result<FlowManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for s in &self.snapshots {
            let file = format!("snapshot_{:06}.bin", s.step);
            if let Some(f) = &s.field {
                f.write_binary(&dir.join(&file))?;
            }
            entries.push(SnapshotEntry {
                snapshot: s.clone(),
                file,
            });
        }
        write_history_csv(&self.state.history, &dir.join("history.csv"))?;
        Ok(FlowManifest {
            status: self.status,
            steps: self.state.accepted_steps(),
            time: self.state.time,
            j_limit: self.j_limit,
            level: self.level,
            snapshots: entries,
            history: self.state.history.clone(),
            diagnostics: Vec::new(),
        })
    }
}

pub fn write_history_csv(history: &[HistoryEntry], path: &Path) -> Result<()> {
    let mut out = String::from("time,J,grad_norm\n");
    for h in history {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", h.time, h.j, h.grad_norm));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::universal_constants;
    use crate::domain::Domain;
    use crate::grid::make_grid;

    fn setup(h: f64) -> (Arc<Grid>, UniversalConstants) {
        let g = make_grid(&Domain::unit_ball(3), h).unwrap();
        (g, universal_constants(3, 1.0, &Default::default()).unwrap())
    }

    #[test]
    fn seeds_live_on_the_positive_sphere() {
        let (g, c) = setup(0.125);
        let s = SolverOptions::default();
        for kind in [
            SeedKind::SingleBubble { center: vec![0.0; 3], lambda: 8.0 },
            SeedKind::RandomBump { seed: 7, bumps: 3 },
        ] {
            let u = seed_field(&kind, &g, c.gamma0, &s).unwrap();
            assert!((u.dirichlet_norm() - 1.0).abs() < 1e-12);
            assert!(u.min() >= 0.0);
        }
        let a = seed_field(&SeedKind::RandomBump { seed: 7, bumps: 3 }, &g, c.gamma0, &s).unwrap();
        let b = seed_field(&SeedKind::RandomBump { seed: 7, bumps: 3 }, &g, c.gamma0, &s).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn zero_seed_is_rejected() {
        let (g, _) = setup(0.25);
        assert!(matches!(normalize_nonneg(ScalarField::zeros(&g)), Err(Error::ZeroField)));
        let neg = ScalarField::from_fn(&g, |_| -1.0);
        assert!(matches!(normalize_nonneg(neg), Err(Error::ZeroField)));
    }

    #[test]
    fn first_step_lowers_j_and_clamps() {
        let (g, c) = setup(0.125);
        let flow = Flow::new(&g, c.clone(), FlowOptions::default()).unwrap();
        let mut u = seed_field(&SeedKind::SingleBubble { center: vec![0.1, 0.0, 0.0], lambda: 4.0 }, &g, c.gamma0, &Default::default()).unwrap();
        u.values_mut()[0] = -1e-3;
        let mut st = flow.start(u).unwrap();
        assert!(st.u.min() >= 0.0);
        let j0 = st.j();
        assert_eq!(flow.step(&mut st).unwrap(), StepStatus::Accepted);
        assert!(st.j() < j0);
        assert!((st.u.dirichlet_norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_horizon_returns_seed() {
        let (g, c) = setup(0.25);
        let flow = Flow::new(&g, c.clone(), FlowOptions::default()).unwrap();
        let u = seed_field(&SeedKind::SingleBubble { center: vec![0.0; 3], lambda: 3.0 }, &g, c.gamma0, &Default::default()).unwrap();
        let st = flow.start(u.clone()).unwrap();
        let sum = flow.run(st, 0.0, |_| {}).unwrap();
        assert_eq!(sum.status, FlowStatus::Horizon);
        assert_eq!(sum.state.u.values(), u.values());
        assert_eq!(sum.snapshots.len(), 1);
    }

    #[test]
    fn level_ladder() {
        let c = universal_constants(3, 1.0, &Default::default()).unwrap();
        assert_eq!(classify_level(c.s_tilde_hl * 1.01, &c), 1);
        assert_eq!(classify_level(c.s_tilde_hl * 16.0, &c), 2);
        assert_eq!(classify_level(0.0, &c), 1);
    }
}
