//! Thin command-line front end over the `sublap` library: each subcommand
//! loads an optional TOML run configuration, applies flag overrides, runs the
//! matching suite from [`sublap::report`] and writes JSON/CSV artifacts.
//!
//! Exit codes: `0` when every check passes, `1` on a check failure, `2` on
//! configuration or usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sublap::report::{self, Command as SuiteCommand, RunConfig};
use sublap::{Error, ModelFamily};

#[derive(Parser)]
#[command(
    name = "sublap",
    version,
    about = "Intrinsic sub-Laplacians on model hypersurfaces: identity suites, \
             Riemannian-approximation studies and radial diffusion simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Verify the geometric identities on a model hypersurface.
    VerifyIdentities {
        #[command(flatten)]
        common: CommonArgs,
        /// Sample count for the identity sweeps.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Riemannian-approximation convergence study.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated, strictly decreasing eps schedule.
        #[arg(long, value_parser = parse_f64_list)]
        eps: Option<Vec<f64>>,
        /// Radial grid resolution.
        #[arg(long)]
        radial_points: Option<usize>,
        /// Angular grid resolution.
        #[arg(long)]
        angular_points: Option<usize>,
    },
    /// Simulate the diffusion with generator Delta/2 on the hypersurface.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Simulate and compare the radial law against the 1D reference process.
    RadialCompare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration document (TOML); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family.
    #[arg(long, value_parser = parse_family)]
    family: Option<ModelFamily>,
    /// Dimension parameter n >= 1.
    #[arg(long)]
    n: Option<usize>,
    /// Curvature parameter k > 0 (sphere and ads).
    #[arg(long)]
    k: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (falls back to $SUBLAP_OUT_DIR, then ./sublap-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Time horizon T.
    #[arg(long)]
    horizon: Option<f64>,
    /// Euler-Maruyama step.
    #[arg(long)]
    step: Option<f64>,
    /// Start radius.
    #[arg(long)]
    r0: Option<f64>,
    /// Hitting threshold delta.
    #[arg(long)]
    hit_threshold: Option<f64>,
    /// Guard radius for explosion monitoring.
    #[arg(long)]
    guard: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_parser = parse_f64_list)]
    snapshots: Option<Vec<f64>>,
    /// Randomize the start angles.
    #[arg(long)]
    random_start_angles: bool,
}

fn parse_family(s: &str) -> Result<ModelFamily, String> {
    match s {
        "heisenberg" => Ok(ModelFamily::Heisenberg),
        "sphere" => Ok(ModelFamily::Sphere),
        "ads" => Ok(ModelFamily::AntiDeSitter),
        other => Err(format!(
            "unknown family `{other}` (expected heisenberg, sphere or ads)"
        )),
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|tok| tok.trim().parse::<f64>().map_err(|e| format!("bad number `{tok}`: {e}")))
        .collect()
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig {
            samples: 1000,
            seed: 42,
            ..RunConfig::default()
        },
    };
    if let Some(family) = common.family {
        cfg.model.family = family;
    }
    if let Some(n) = common.n {
        cfg.model.n = n;
    }
    if let Some(k) = common.k {
        cfg.model.k = Some(k);
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.sim.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn apply_sim_args(cfg: &mut RunConfig, sim: &SimArgs) {
    if let Some(paths) = sim.paths {
        cfg.sim.paths = paths;
    }
    if let Some(horizon) = sim.horizon {
        cfg.sim.horizon = horizon;
        if cfg.sim.snapshot_times == vec![1.0] {
            cfg.sim.snapshot_times = vec![horizon];
        }
    }
    if let Some(step) = sim.step {
        cfg.sim.step = step;
    }
    if let Some(r0) = sim.r0 {
        cfg.sim.r0 = r0;
    }
    if let Some(delta) = sim.hit_threshold {
        cfg.sim.hit_threshold = delta;
    }
    if let Some(guard) = sim.guard {
        cfg.sim.guard_radius = guard;
    }
    if let Some(times) = &sim.snapshots {
        cfg.sim.snapshot_times = times.clone();
    }
    if sim.random_start_angles {
        cfg.sim.random_start_angles = true;
    }
}

fn build_config(cli: &CliCommand) -> Result<RunConfig, Error> {
    let mut cfg = match cli {
        CliCommand::VerifyIdentities { common, samples } => {
            let mut cfg = load_config(common)?;
            cfg.command = Some(SuiteCommand::VerifyIdentities);
            if let Some(samples) = samples {
                cfg.samples = *samples;
            }
            cfg
        }
        CliCommand::Converge {
            common,
            eps,
            radial_points,
            angular_points,
        } => {
            let mut cfg = load_config(common)?;
            cfg.command = Some(SuiteCommand::Converge);
            if let Some(eps) = eps {
                cfg.converge.eps_schedule = eps.clone();
            }
            if let Some(r) = radial_points {
                cfg.converge.radial_points = *r;
            }
            if let Some(a) = angular_points {
                cfg.converge.angular_points = *a;
            }
            cfg
        }
        CliCommand::Simulate { common, sim } => {
            let mut cfg = load_config(common)?;
            cfg.command = Some(SuiteCommand::Simulate);
            apply_sim_args(&mut cfg, sim);
            cfg
        }
        CliCommand::RadialCompare { common, sim } => {
            let mut cfg = load_config(common)?;
            cfg.command = Some(SuiteCommand::RadialCompare);
            apply_sim_args(&mut cfg, sim);
            cfg
        }
    };
    if cfg.samples == 0 {
        cfg.samples = 1000;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match build_config(&cli.command) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };
    match report::run(&cfg) {
        Ok(suite) => {
            print!("{}", suite.render());
            eprintln!("runtime: {:.2}s", suite.runtime_seconds);
            if suite.overall_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
