use choquard_core::bubble::BubbleParams;
use choquard_core::constants::{universal_constants, UniversalConstants};
use choquard_core::domain::Domain;
use choquard_core::expansion::EpsVariant;
use choquard_core::fit::{v_membership, FitOptions, MembershipStatus};
use choquard_core::flow::{seed_field, Flow, FlowOptions, FlowStatus, SeedKind};
use choquard_core::grid::{make_grid, ScalarField};
use choquard_core::poisson::{poisson_solve, SolverOptions};
use choquard_core::projection::bubble_rhs;

fn consts() -> UniversalConstants {
    universal_constants(3, 1.0, &Default::default()).unwrap()
}

#[test]
fn flow_respects_horizon_and_writes_artifacts() {
    let c = consts();
    let g = make_grid(&Domain::unit_ball(3), 0.2).unwrap();
    let opts = FlowOptions {
        snapshot_every: 2,
        ..Default::default()
    };
    let kind = SeedKind::RandomBump { seed: 3, bumps: 2 };
    let seed = seed_field(&kind, &g, c.gamma0, &opts.solver).unwrap();
    let flow = Flow::new(&g, c.clone(), opts).unwrap();
    let state = flow.start(seed).unwrap();
    let horizon = 5.0 * state.dt;
    let mut seen = 0;
    let summary = flow.run(state, horizon, |_| seen += 1).unwrap();
    assert_eq!(summary.status, FlowStatus::Horizon);
    assert!(summary.state.time >= horizon);
    assert_eq!(seen, summary.snapshots.len());
    let js: Vec<f64> = summary.state.history.iter().map(|h| h.j).collect();
    assert!(js.windows(2).all(|w| w[1] <= w[0]));

    let dir = tempfile::tempdir().unwrap();
    let manifest = summary.write_artifacts(dir.path()).unwrap();
    assert_eq!(manifest.steps, summary.state.accepted_steps());
    let last = manifest.snapshots.last().unwrap();
    let back = ScalarField::read_binary(&dir.path().join(&last.file), &g).unwrap();
    assert_eq!(back.values(), summary.state.u.values());
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), js.len() + 1);
}

#[test]
fn step_limit_stops_the_flow() {
    let c = consts();
    let g = make_grid(&Domain::unit_ball(3), 0.25).unwrap();
    let opts = FlowOptions {
        max_steps: 3,
        ..Default::default()
    };
    let kind = SeedKind::SingleBubble {
        center: vec![0.1, 0.0, 0.0],
        lambda: 2.0,
    };
    let seed = seed_field(&kind, &g, c.gamma0, &opts.solver).unwrap();
    let flow = Flow::new(&g, c, opts).unwrap();
    let summary = flow.run(flow.start(seed).unwrap(), f64::INFINITY, |_| {}).unwrap();
    assert_eq!(summary.status, FlowStatus::StepLimit);
    assert_eq!(summary.state.accepted_steps(), 3);
}

fn normalized_pu(g: &std::sync::Arc<choquard_core::grid::Grid>, center: [f64; 3], lambda: f64, gamma0: f64) -> ScalarField {
    let b = BubbleParams::new(center.to_vec(), lambda).unwrap();
    let pu = poisson_solve(&bubble_rhs(&b, g, gamma0), &SolverOptions::default()).unwrap();
    pu.scaled(1.0 / pu.dirichlet_norm())
}

#[test]
fn concentrated_bubble_is_in_v1() {
    let c = consts();
    let g = make_grid(&Domain::unit_ball(3), 1.0 / 12.0).unwrap();
    let u = normalized_pu(&g, [0.05, 0.0, -0.04], 6.0, c.gamma0);
    let m = v_membership(&u, 1, 0.25, EpsVariant::AsWritten, c.gamma0, &FitOptions::default()).unwrap();
    assert_eq!(m.status, MembershipStatus::Member, "{m:?}");
    assert!(m.residual_margin > 0.2);
    assert!((m.fit.unwrap().bubbles[0].lambda - 6.0).abs() < 1e-3);
}

#[test]
fn flat_bubble_is_outside_v1() {
    let c = consts();
    let g = make_grid(&Domain::unit_ball(3), 1.0 / 8.0).unwrap();
    let u = normalized_pu(&g, [0.0; 3], 2.0, c.gamma0);
    let m = v_membership(&u, 1, 0.25, EpsVariant::AsWritten, c.gamma0, &FitOptions::default()).unwrap();
    assert_eq!(m.status, MembershipStatus::NonMember, "{:?} {:?}", m.note, m.fit);
    assert!(m.scale_margin < 0.0);
}

#[test]
fn membership_rejects_nonpositive_eps() {
    let c = consts();
    let g = make_grid(&Domain::unit_ball(3), 0.25).unwrap();
    let u = normalized_pu(&g, [0.0; 3], 2.0, c.gamma0);
    assert!(v_membership(&u, 1, 0.0, EpsVariant::AsWritten, c.gamma0, &FitOptions::default()).is_err());
}
