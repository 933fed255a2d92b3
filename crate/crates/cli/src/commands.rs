use std::f64::consts::PI;
use std::path::PathBuf;

use choquard_core::bubble::{riesz_potential_closed_form, riesz_potential_monte_carlo, riesz_potential_quadrature, BubbleParams};
use choquard_core::constants::{universal_constants, UniversalConstants};
use choquard_core::domain::Domain;
use choquard_core::energy::{evaluate_functionals, hls_inequality_margin, EnergyMethod, HlsKernel};
use choquard_core::expansion::{expansion_j, BubbleConfiguration, DirectSpec, EpsVariant, ExpansionOptions};
use choquard_core::fit::{bubble_fit, v_membership, FitOptions};
use choquard_core::flow::{concentration_diagnostics, seed_field, Flow, FlowOptions, SeedKind};
use choquard_core::green::{green_eval, harmonic_part_closed, harmonic_part_numeric, GreenMethod, HarmonicCorrection};
use choquard_core::grid::{make_grid, ScalarField};
use choquard_core::projection::{project_bubble, pu_self_energy, theta_bound_check, ProjectionMethod, ProjectionOptions};

use crate::config::{NumList, PointList};
use crate::report::{to_json_string, Record};
use crate::{record, CliError, Command, Context, Outcome};

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// `p` evenly placed points: the center for p = 1 on balls and boxes, a
/// ring at half radius (balls) or mid-radius (annuli), a line across boxes.
pub fn default_points(domain: &Domain, p: usize) -> Vec<Vec<f64>> {
    let ring = |c: &[f64], r: f64| -> Vec<Vec<f64>> {
        (0..p)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / p as f64;
                vec![c[0] + r * t.cos(), c[1] + r * t.sin(), c[2]]
            })
            .collect()
    };
    match domain {
        Domain::Ball { center, radius } if p > 1 => ring(center, 0.5 * radius),
        Domain::Ball { center, .. } => vec![center.clone()],
        Domain::Annulus { center, inner, outer } => ring(center, 0.5 * (inner + outer)),
        Domain::Box { lo, hi } => (0..p)
            .map(|k| {
                let mut x: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
                x[0] = lo[0] + (k as f64 + 1.0) / (p as f64 + 1.0) * (hi[0] - lo[0]);
                x
            })
            .collect(),
    }
}

fn point(v: Option<NumList>) -> Result<Option<Vec<f64>>, CliError> {
    match v {
        Some(NumList(x)) if x.len() == 3 => Ok(Some(x)),
        Some(_) => Err(invalid("points need three coordinates")),
        None => Ok(None),
    }
}

struct Setup {
    domain: Domain,
    consts: UniversalConstants,
}

fn setup(ctx: &Context) -> Result<Setup, CliError> {
    let domain: Domain = ctx.config.domain.parse()?;
    if ctx.config.n != 3 && ctx.config.command != "constants" {
        return Err(CliError::Validation(format!(
            "{} runs on three-dimensional grids only",
            ctx.config.command
        )));
    }
    let consts = universal_constants(ctx.config.n, ctx.config.mu, &ctx.config.quadrature)?;
    Ok(Setup { domain, consts })
}

fn energy_method(s: &str) -> Result<EnergyMethod, CliError> {
    match s {
        "fft" => Ok(EnergyMethod::Fft),
        "direct" => Ok(EnergyMethod::Direct),
        _ => Err(invalid(format!("unknown energy method '{s}'"))),
    }
}

fn load_field(ctx: &mut Context, field: Option<PathBuf>, domain: &Domain) -> Result<ScalarField, CliError> {
    let path: String = ctx.resolver.required("field", field.map(|p| p.display().to_string()))?;
    let grid = make_grid(domain, ctx.config.h)?;
    Ok(ScalarField::read_binary(std::path::Path::new(&path), &grid)?)
}

pub fn execute(ctx: &mut Context, command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Constants => constants(ctx),
        Command::VerifyRiesz { radii, lambda, samples } => verify_riesz(ctx, radii, lambda, samples),
        Command::Green {
            sources,
            method,
            walks,
            green_h,
            target,
        } => green(ctx, sources, method, walks, green_h, target),
        Command::Project {
            center,
            lambdas,
            method,
            green_h,
        } => project(ctx, center, lambdas, method, green_h),
        Command::Energy { field, energy_method } => energy(ctx, field, energy_method),
        Command::Expand {
            p,
            lambda,
            centers,
            weights,
            direct,
            direct_h,
            richardson,
            green_h,
        } => expand(ctx, p, lambda, centers, weights, direct, direct_h, richardson, green_h),
        Command::Fit {
            field,
            p,
            eps,
            eps_variant,
            starts,
        } => fit(ctx, field, p, eps, eps_variant, starts),
        Command::Flow {
            seed_kind,
            center,
            centers,
            lambda,
            bumps,
            steps,
            horizon,
            snapshot_every,
            dt,
            p_max,
            eps,
        } => flow(
            ctx,
            FlowArgs {
                seed_kind,
                center,
                centers,
                lambda,
                bumps,
                steps,
                horizon,
                snapshot_every,
                dt,
                p_max,
                eps,
            },
        ),
    }
}

fn outcome(columns: Vec<&'static str>, records: Vec<Record>, summary: Vec<String>) -> Outcome {
    Outcome {
        columns,
        records,
        summary,
        artifacts: None,
    }
}

fn constants(ctx: &mut Context) -> Result<Outcome, CliError> {
    let c = universal_constants(ctx.config.n, ctx.config.mu, &ctx.config.quadrature)?;
    let e = &c.exponents;
    let rec = record! {
        "n" => e.n, "mu" => e.mu,
        "two_mu_lower" => e.two_mu_lower, "two_mu_star" => e.two_mu_star, "two_star" => e.two_star,
        "gamma0" => c.gamma0, "c1" => c.c1, "hls_sharp" => c.hls_sharp, "sobolev" => c.sobolev,
        "a_hl" => c.a_hl, "s_tilde_hl" => c.s_tilde_hl, "s_tilde_hl_direct" => c.s_tilde_hl_direct,
        "s_tilde_gap" => c.s_tilde_gap, "s_hl" => c.s_hl(),
    };
    let summary = vec![
        format!("n = {}, mu = {}", e.n, e.mu),
        format!("2_mu = {:.6}  2*_mu = {:.6}  2* = {:.6}", e.two_mu_lower, e.two_mu_star, e.two_star),
        format!("gamma0 = {:.6}", c.gamma0),
        format!("c1 = {:.6}", c.c1),
        format!("S_HL~ = {:.6} (direct {:.6}, gap {:.2e})", c.s_tilde_hl, c.s_tilde_hl_direct, c.s_tilde_gap),
    ];
    let cols = vec![
        "n", "mu", "two_mu_lower", "two_mu_star", "two_star", "gamma0", "c1", "hls_sharp", "sobolev", "a_hl",
        "s_tilde_hl", "s_tilde_hl_direct", "s_tilde_gap", "s_hl",
    ];
    Ok(outcome(cols, vec![rec], summary))
}

fn verify_riesz(ctx: &mut Context, radii: Option<NumList>, lambda: Option<f64>, samples: Option<usize>) -> Result<Outcome, CliError> {
    let radii = ctx.resolver.get("radii", radii, NumList(vec![0.0, 0.5, 1.0, 2.0]))?.0;
    let lambda = ctx.resolver.get("lambda", lambda, 1.0)?;
    let samples = ctx.resolver.get("samples", samples, 0usize)?;
    let c = universal_constants(ctx.config.n, ctx.config.mu, &ctx.config.quadrature)?;
    let n = ctx.config.n;
    let b = BubbleParams::new(vec![0.0; n], lambda)?;
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for r in radii {
        let mut x = vec![0.0; n];
        x[0] = r;
        let closed = riesz_potential_closed_form(&b, &x, &c);
        let quad = riesz_potential_quadrature(&b, &x, &c, &ctx.config.quadrature)?;
        let rel = (quad.value - closed).abs() / closed;
        let mc = if samples > 0 {
            Some(riesz_potential_monte_carlo(&b, &x, &c, samples, ctx.config.seed)?)
        } else {
            None
        };
        summary.push(format!("|x| = {r}: closed {closed:.8e}  quadrature {:.8e}  rel err {rel:.2e}", quad.value));
        records.push(record! {
            "r" => r, "closed" => closed, "quadrature" => quad.value, "quadrature_error" => quad.error,
            "rel_err" => rel, "monte_carlo" => mc.map(|m| m.value), "monte_carlo_error" => mc.map(|m| m.error),
        });
    }
    let cols = vec!["r", "closed", "quadrature", "quadrature_error", "rel_err", "monte_carlo", "monte_carlo_error"];
    Ok(outcome(cols, records, summary))
}

fn green_method(name: &str, domain: &Domain, h: f64, walks: usize, seed: u64) -> Result<Option<GreenMethod>, CliError> {
    match name {
        "closed" if matches!(domain, Domain::Ball { .. }) => Ok(None),
        "closed" => Err(invalid("closed-form Green functions exist for balls only")),
        "grid" => Ok(Some(GreenMethod::grid(h))),
        "wos" => Ok(Some(GreenMethod::wos(walks, seed))),
        _ => Err(invalid(format!("unknown Green method '{name}'"))),
    }
}

fn correction(a: &[f64], domain: &Domain, method: Option<&GreenMethod>, gamma0: f64) -> Result<HarmonicCorrection, CliError> {
    Ok(match method {
        None => harmonic_part_closed(a, domain, gamma0)?,
        Some(m) => harmonic_part_numeric(a, domain, m, gamma0)?,
    })
}

fn green(
    ctx: &mut Context,
    sources: Option<PointList>,
    method: Option<String>,
    walks: Option<usize>,
    green_h: Option<f64>,
    target: Option<NumList>,
) -> Result<Outcome, CliError> {
    let s = setup(ctx)?;
    let sources = ctx.resolver.get("sources", sources, PointList(default_points(&s.domain, 1)))?.0;
    let default_method = if matches!(s.domain, Domain::Ball { .. }) { "closed" } else { "grid" };
    let method = ctx.resolver.get("method", method, default_method.to_string())?;
    let walks = ctx.resolver.get("walks", walks, 100_000usize)?;
    let green_h = ctx.resolver.get("green-h", green_h, ctx.config.h)?;
    let target = point(ctx.resolver.opt("target", target)?)?;
    let m = green_method(&method, &s.domain, green_h, walks, ctx.config.seed)?;
    let g0 = s.consts.gamma0;
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for a in &sources {
        let corr = correction(a, &s.domain, m.as_ref(), g0)?;
        let robin = corr.eval(a)?;
        let closed = match s.domain {
            Domain::Ball { .. } => Some(harmonic_part_closed(a, &s.domain, g0)?.eval(a)?.value),
            _ => None,
        };
        let g = match &target {
            Some(t) => Some(green_eval(t, &corr)?.value),
            None => None,
        };
        summary.push(format!("a = {a:?}: H(a,a) = {:.8e} ± {:.1e} [{}]", robin.value, robin.error, corr.method_label()));
        records.push(record! {
            "ax" => a[0], "ay" => a[1], "az" => a[2], "robin" => robin.value, "robin_error" => robin.error,
            "method" => corr.method_label(), "robin_closed" => closed, "target_green" => g,
        });
    }
    let cols = vec!["ax", "ay", "az", "robin", "robin_error", "method", "robin_closed", "target_green"];
    Ok(outcome(cols, records, summary))
}

fn project(
    ctx: &mut Context,
    center: Option<NumList>,
    lambdas: Option<NumList>,
    method: Option<String>,
    green_h: Option<f64>,
) -> Result<Outcome, CliError> {
    let s = setup(ctx)?;
    let center = match point(ctx.resolver.opt("center", center)?)? {
        Some(c) => c,
        None => default_points(&s.domain, 1).remove(0),
    };
    let lambdas = ctx.resolver.get("lambdas", lambdas, NumList(vec![4.0, 8.0, 16.0]))?.0;
    let method = match ctx.resolver.get("method", method, "solve".to_string())?.as_str() {
        "solve" => ProjectionMethod::Solve,
        "approx" => ProjectionMethod::Approx,
        other => return Err(invalid(format!("unknown projection method '{other}'"))),
    };
    let green_h = ctx.resolver.get("green-h", green_h, ctx.config.h)?;
    let g0 = s.consts.gamma0;
    let grid = make_grid(&s.domain, ctx.config.h)?;
    let gm = match s.domain {
        Domain::Ball { .. } => None,
        _ => Some(GreenMethod::grid(green_h)),
    };
    let corr = correction(&center, &s.domain, gm.as_ref(), g0)?;
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for lam in lambdas {
        let b = BubbleParams::new(center.clone(), lam)?;
        let pb = project_bubble(&b, &grid, method, g0, Some(&corr), &ProjectionOptions::default())?;
        let cmp = pu_self_energy(&pb, &s.consts, &corr)?;
        let theta = theta_bound_check(&pb, g0, &corr)?;
        summary.push(format!(
            "lambda = {lam}: <PU,PU> = {:.8}  predicted {:.8}  residual {:.2e}{}",
            cmp.measured,
            cmp.predicted,
            cmp.residual,
            if cmp.regime_warning { "  (outside the asymptotic regime)" } else { "" }
        ));
        records.push(record! {
            "lambda" => lam, "measured" => cmp.measured, "predicted" => cmp.predicted, "residual" => cmp.residual,
            "regime" => pb.regime, "regime_warning" => cmp.regime_warning, "clamp" => pb.clamp_magnitude,
            "theta_max_ratio" => theta.max_ratio, "theta_holds" => theta.holds,
        });
    }
    let cols = vec![
        "lambda", "measured", "predicted", "residual", "regime", "regime_warning", "clamp", "theta_max_ratio", "theta_holds",
    ];
    Ok(outcome(cols, records, summary))
}

fn energy(ctx: &mut Context, field: Option<PathBuf>, method: Option<String>) -> Result<Outcome, CliError> {
    let s = setup(ctx)?;
    let method = energy_method(&ctx.resolver.get("energy-method", method, "fft".to_string())?)?;
    let u = load_field(ctx, field, &s.domain)?;
    let kernel = HlsKernel::new(u.grid(), ctx.config.mu)?;
    let e = evaluate_functionals(&u, &s.consts, &kernel, method)?;
    let margin = hls_inequality_margin(&u, &s.consts, &kernel, method)?;
    let summary = vec![
        format!("|u|^2 = {:.10e}", e.dirichlet),
        format!("D = {:.10e}  J = {:.10e}  J1 = {:.10e}", e.d, e.j, e.j1),
        format!("HLS margin = {margin:.6e}"),
    ];
    let rec = record! {
        "dirichlet" => e.dirichlet, "D" => e.d, "hls_norm" => e.hls_norm, "I" => e.i, "J1" => e.j1, "J" => e.j,
        "lambda_star" => e.lambda_star, "stationarity_residual" => e.stationarity_residual, "hls_margin" => margin,
    };
    let cols = vec!["dirichlet", "D", "hls_norm", "I", "J1", "J", "lambda_star", "stationarity_residual", "hls_margin"];
    Ok(outcome(cols, vec![rec], summary))
}

#[allow(clippy::too_many_arguments)]
fn expand(
    ctx: &mut Context,
    p: Option<usize>,
    lambda: Option<f64>,
    centers: Option<PointList>,
    weights: Option<NumList>,
    direct: bool,
    direct_h: Option<f64>,
    richardson: bool,
    green_h: Option<f64>,
) -> Result<Outcome, CliError> {
    let s = setup(ctx)?;
    let p = ctx.resolver.get("p", p, 1usize)?;
    if p == 0 {
        return Err(invalid("p must be at least 1"));
    }
    let lambda: f64 = ctx.resolver.required("lambda", lambda)?;
    let centers = ctx.resolver.get("centers", centers, PointList(default_points(&s.domain, p)))?.0;
    let weights = ctx.resolver.get("weights", weights, NumList(vec![1.0; p]))?.0;
    if centers.len() != p || weights.len() != p {
        return Err(invalid("centers and weights must list p entries"));
    }
    let direct = ctx.resolver.flag("direct", direct)?;
    let richardson = ctx.resolver.flag("richardson", richardson)?;
    let direct_h = ctx.resolver.get("direct-h", direct_h, ctx.config.h)?;
    let green_h = ctx.resolver.get("green-h", green_h, ExpansionOptions::default().green_h)?;
    let bubbles = centers
        .into_iter()
        .zip(&weights)
        .map(|(c, w)| BubbleParams::weighted(c, lambda, *w))
        .collect::<choquard_core::Result<Vec<_>>>()?;
    let config = BubbleConfiguration::new(bubbles, s.domain.clone())?;
    let opts = ExpansionOptions {
        green_h,
        direct: direct.then_some(DirectSpec { h: direct_h, richardson }),
        ..Default::default()
    };
    let r = expansion_j(&config, &s.consts, &opts)?;
    let ratio = r.gap.map(|g| g / r.correction.abs());
    let mut summary = vec![format!(
        "p = {} lambda = {}: leading {:.8e}  predicted_J {:.8e}  correction {:.4e}",
        r.p, r.lambda, r.leading, r.predicted_j, r.correction
    )];
    if let (Some(d), Some(g)) = (r.direct_j, r.gap) {
        summary.push(format!("direct_J {d:.8e}  gap {g:.4e} ({:.1}% of the correction)", 100.0 * g / r.correction.abs()));
    }
    let rec = record! {
        "p" => r.p, "lambda" => r.lambda, "d_a" => r.d_a, "leading" => r.leading, "correction" => r.correction,
        "predicted_J" => r.predicted_j, "direct_J" => r.direct_j, "gap" => r.gap, "gap_over_correction" => ratio,
        "regime_separation" => r.regime_separation, "regime_boundary" => r.regime_boundary,
        "green_source" => r.green_source.clone(),
    };
    let cols = vec![
        "p", "lambda", "d_a", "leading", "correction", "predicted_J", "direct_J", "gap", "gap_over_correction",
        "regime_separation", "regime_boundary", "green_source",
    ];
    Ok(outcome(cols, vec![rec], summary))
}

fn eps_variant(s: &str) -> Result<EpsVariant, CliError> {
    match s {
        "as-written" => Ok(EpsVariant::AsWritten),
        "symmetric" => Ok(EpsVariant::Symmetric),
        _ => Err(invalid(format!("unknown eps variant '{s}'"))),
    }
}

fn fit(
    ctx: &mut Context,
    field: Option<PathBuf>,
    p: Option<usize>,
    eps: Option<f64>,
    variant: Option<String>,
    starts: Option<usize>,
) -> Result<Outcome, CliError> {
    let s = setup(ctx)?;
    let p = ctx.resolver.get("p", p, 1usize)?;
    let eps = ctx.resolver.opt("eps", eps)?;
    let variant = eps_variant(&ctx.resolver.get("eps-variant", variant, "as-written".to_string())?)?;
    let opts = FitOptions {
        starts: ctx.resolver.get("starts", starts, FitOptions::default().starts)?,
        ..Default::default()
    };
    let u = load_field(ctx, field, &s.domain)?;
    let (result, membership) = match eps {
        Some(eps) => {
            let m = v_membership(&u, p, eps, variant, s.consts.gamma0, &opts)?;
            let f = m
                .fit
                .clone()
                .ok_or_else(|| CliError::Numeric(m.note.clone().unwrap_or_else(|| "fit failed".into())))?;
            (f, Some(m))
        }
        None => (bubble_fit(&u, p, None, s.consts.gamma0, &opts)?, None),
    };
    let mut summary = vec![format!(
        "p = {}: residual {:.6e}, {} after {} iterations",
        p,
        result.residual,
        if result.converged { "converged" } else { "not converged" },
        result.iterations
    )];
    if let Some(m) = &membership {
        summary.push(format!("V({}, {}) membership: {:?}", p, m.eps, m.status));
    }
    let mut records = Vec::new();
    for (k, b) in result.bubbles.iter().enumerate() {
        summary.push(format!("  bubble {k}: alpha {:.6} center {:?} lambda {:.6}", b.alpha, b.center, b.lambda));
        let mut rec = record! {
            "index" => k, "alpha" => b.alpha, "ax" => b.center[0], "ay" => b.center[1], "az" => b.center[2],
            "lambda" => b.lambda, "residual" => result.residual, "converged" => result.converged,
            "iterations" => result.iterations,
        };
        if let Some(m) = &membership {
            rec.extend(record! {
                "status" => format!("{:?}", m.status).to_lowercase(), "residual_margin" => m.residual_margin,
                "scale_margin" => m.scale_margin, "boundary_margin" => m.boundary_margin,
                "interaction_margin" => m.interaction_margin,
            });
        }
        records.push(rec);
    }
    let mut cols = vec!["index", "alpha", "ax", "ay", "az", "lambda", "residual", "converged", "iterations"];
    if membership.is_some() {
        cols.extend(["status", "residual_margin", "scale_margin", "boundary_margin", "interaction_margin"]);
    }
    Ok(outcome(cols, records, summary))
}

struct FlowArgs {
    seed_kind: Option<String>,
    center: Option<NumList>,
    centers: Option<PointList>,
    lambda: Option<f64>,
    bumps: Option<usize>,
    steps: Option<usize>,
    horizon: Option<f64>,
    snapshot_every: Option<usize>,
    dt: Option<f64>,
    p_max: Option<usize>,
    eps: Option<f64>,
}

fn flow(ctx: &mut Context, a: FlowArgs) -> Result<Outcome, CliError> {
    let s = setup(ctx)?;
    let r = &mut ctx.resolver;
    let lambda = r.get("lambda", a.lambda, 4.0)?;
    let kind = match r.get("seed-kind", a.seed_kind, "single".to_string())?.as_str() {
        "single" => SeedKind::SingleBubble {
            center: point(r.opt("center", a.center)?)?.unwrap_or_else(|| default_points(&s.domain, 1).remove(0)),
            lambda,
        },
        "multi" => {
            let centers = r.get("centers", a.centers, PointList(default_points(&s.domain, 2)))?.0;
            SeedKind::MultiBubble {
                bubbles: centers
                    .into_iter()
                    .map(|c| BubbleParams::new(c, lambda))
                    .collect::<choquard_core::Result<_>>()?,
            }
        }
        "random" => SeedKind::RandomBump {
            seed: ctx.config.seed,
            bumps: r.get("bumps", a.bumps, 3usize)?,
        },
        other => return Err(invalid(format!("unknown seed kind '{other}'"))),
    };
    let defaults = FlowOptions::default();
    let opts = FlowOptions {
        dt: r.opt("dt", a.dt)?,
        max_steps: r.get("steps", a.steps, 500usize)?,
        snapshot_every: r.get("snapshot-every", a.snapshot_every, defaults.snapshot_every)?,
        ..defaults
    };
    let horizon = r.get("horizon", a.horizon, f64::INFINITY)?;
    if !(horizon >= 0.0) {
        return Err(invalid("horizon must be nonnegative"));
    }
    let p_max = r.get("p-max", a.p_max, 0usize)?;
    let eps = r.get("eps", a.eps, 0.25)?;
    let grid = make_grid(&s.domain, ctx.config.h)?;
    let seed = seed_field(&kind, &grid, s.consts.gamma0, &opts.solver)?;
    let engine = Flow::new(&grid, s.consts.clone(), opts)?;
    let state = engine.start(seed)?;
    let summary = engine.run(state, horizon, |_| {})?;
    let diagnostics = if p_max > 0 {
        vec![concentration_diagnostics(
            &summary.state.u,
            p_max,
            eps,
            EpsVariant::AsWritten,
            &s.consts,
            &FitOptions::default(),
        )?]
    } else {
        Vec::new()
    };
    let mut lines = vec![
        format!("status {:?} after {} accepted steps, t = {:.6e}", summary.status, summary.state.accepted_steps(), summary.state.time),
        format!("J = {:.8e}, nearest level p = {}", summary.j_limit, summary.level),
    ];
    for d in &diagnostics {
        lines.push(format!("memberships at eps = {}: {:?}", d.eps, d.holding));
    }
    let records = summary
        .state
        .history
        .iter()
        .enumerate()
        .map(|(k, h)| record! {"step" => k, "time" => h.time, "J" => h.j, "grad_norm" => h.grad_norm})
        .collect();
    let artifacts = move |dir: &std::path::Path| -> Result<Vec<String>, CliError> {
        let sub = dir.join("flow");
        let mut manifest = summary.write_artifacts(&sub)?;
        manifest.diagnostics = diagnostics;
        let path = sub.join("manifest.json");
        std::fs::write(&path, to_json_string(&manifest)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(vec![format!("manifest: {}", path.display())])
    };
    Ok(Outcome {
        columns: vec!["step", "time", "J", "grad_norm"],
        records,
        summary: lines,
        artifacts: Some(Box::new(artifacts)),
    })
}
