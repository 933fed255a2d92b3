//! Command-line front end: configuration, dispatch and reports.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{default_workers, ConfigFile, NumList, PointList, Resolver, RunConfig};
use crate::report::{emit_report, Format, Report};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

impl From<choquard_core::Error> for CliError {
    fn from(e: choquard_core::Error) -> Self {
        if e.is_numeric_failure() {
            CliError::Numeric(e.to_string())
        } else if matches!(e, choquard_core::Error::Io { .. }) {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "choquard", version, about = "Bubble expansions, Green functions and gradient flows for the critical Choquard problem")]
pub struct Cli {
    /// key = value file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    /// ball:R, annulus:r_in,r_out, box:lo,hi, ...
    #[arg(long, global = true)]
    pub domain: Option<String>,
    /// Mesh width.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Relative tolerance of the 1-D quadratures.
    #[arg(long, global = true)]
    pub quad_tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exponents and universal constants.
    Constants,
    /// Closed-form Riesz potential of a bubble against quadrature.
    VerifyRiesz {
        #[arg(long)]
        radii: Option<NumList>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Monte Carlo samples per point; 0 skips the Monte Carlo column.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Robin function and Green function values.
    Green {
        #[arg(long)]
        sources: Option<PointList>,
        /// closed, grid or wos
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        walks: Option<usize>,
        #[arg(long)]
        green_h: Option<f64>,
        #[arg(long)]
        target: Option<NumList>,
    },
    /// Projected-bubble self energies against their expansion.
    Project {
        #[arg(long)]
        center: Option<NumList>,
        #[arg(long)]
        lambdas: Option<NumList>,
        /// solve or approx
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        green_h: Option<f64>,
    },
    /// Energy breakdown of a stored field.
    Energy {
        #[arg(long)]
        field: Option<PathBuf>,
        /// fft or direct
        #[arg(long)]
        energy_method: Option<String>,
    },
    /// Multi-bubble energy expansion, optionally against a direct grid value.
    Expand {
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        centers: Option<PointList>,
        #[arg(long)]
        weights: Option<NumList>,
        #[arg(long)]
        direct: bool,
        #[arg(long)]
        direct_h: Option<f64>,
        #[arg(long)]
        richardson: bool,
        #[arg(long)]
        green_h: Option<f64>,
    },
    /// Best p-bubble fit of a stored field.
    Fit {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        p: Option<usize>,
        /// Also test membership in V(p, eps).
        #[arg(long)]
        eps: Option<f64>,
        /// as-written or symmetric
        #[arg(long)]
        eps_variant: Option<String>,
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Gradient flow with snapshots and a trajectory manifest.
    Flow {
        /// single, multi or random
        #[arg(long)]
        seed_kind: Option<String>,
        #[arg(long)]
        center: Option<NumList>,
        #[arg(long)]
        centers: Option<PointList>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        bumps: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        snapshot_every: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        /// Run concentration diagnostics for p = 1..p_max on the final state.
        #[arg(long)]
        p_max: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::VerifyRiesz { .. } => "verify-riesz",
            Command::Green { .. } => "green",
            Command::Project { .. } => "project",
            Command::Energy { .. } => "energy",
            Command::Expand { .. } => "expand",
            Command::Fit { .. } => "fit",
            Command::Flow { .. } => "flow",
        }
    }
}

/// Shared, resolved settings handed to each subcommand.
pub struct Context<'a> {
    pub config: RunConfig,
    pub resolver: Resolver<'a>,
}

/// What a subcommand produced; nothing is written until it returns.
pub struct Outcome {
    pub columns: Vec<&'static str>,
    pub records: Vec<report::Record>,
    pub summary: Vec<String>,
    pub artifacts: Option<Box<dyn FnOnce(&std::path::Path) -> Result<Vec<String>, CliError>>>,
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut r = Resolver::new(&file);
    let n = r.get("n", cli.n, 3usize)?;
    let mu = r.get("mu", cli.mu, 1.0)?;
    let domain = r.get("domain", cli.domain.clone(), "ball:1".to_string())?;
    let h = r.get("h", cli.h, 0.05)?;
    let seed = r.get("seed", cli.seed, 0u64)?;
    let workers_opt = r.opt("workers", cli.workers)?;
    let out = r.get("out", cli.out.as_ref().map(|p| p.display().to_string()), "choquard-out".to_string())?;
    let format = r.get("format", cli.format, Format::Csv)?;
    let mut quadrature = choquard_core::quadrature::QuadratureSpec::default();
    quadrature.rel_tol = r.get("quad-tol", cli.quad_tol, quadrature.rel_tol)?;
    quadrature.validate()?;
    let workers = default_workers(workers_opt)?;
    if workers == 0 {
        return Err(CliError::Validation("worker count must be positive".into()));
    }
    if !(h > 0.0) {
        return Err(CliError::Validation("mesh width must be positive".into()));
    }
    // The global pool can be configured once per process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    // shared keys live in the RunConfig itself
    let global_keys = ["n", "mu", "domain", "h", "seed", "workers", "out", "format", "quad-tol"];
    r.params.retain(|k, _| !global_keys.contains(&k.as_str()));
    let name = cli.command.name();
    let mut ctx = Context {
        config: RunConfig {
            command: name.to_string(),
            domain,
            h,
            mu,
            n,
            output_dir: PathBuf::from(&out),
            params: Default::default(),
            quadrature,
            seed,
            workers,
        },
        resolver: r,
    };
    let outcome = commands::execute(&mut ctx, cli.command)?;
    ctx.config.params = std::mem::take(&mut ctx.resolver.params);
    let dir = ctx.config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("{name}.{}", format.extension()));
    let report = Report::new(ctx.config, &outcome.columns, outcome.records);
    emit_report(&report, format, &path)?;
    let mut lines = outcome.summary;
    if let Some(write) = outcome.artifacts {
        lines.extend(write(&dir)?);
    }
    lines.push(format!("report: {}", path.display()));
    Ok(lines)
}

/// Parses `argv`, runs the subcommand and returns the process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
