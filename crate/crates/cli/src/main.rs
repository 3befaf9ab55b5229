//! `lw2`: weighted negative Sobolev norms, Witten potentials and embeddings of
//! densities on the unit square, plus the numerical experiments.
//!
//! Reports are JSON on stdout; `--json <path>` also writes them to a file.
//! Exit codes: 0 success, 2 invalid input, 3 non-convergence, 4 internal error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use lw2::embedding::{Embedder, DEFAULT_DEGREE};
use lw2::experiments::{
    self, CircleKind, CircleParams, EchoConfig, Metric, DEFAULT_DIRECTIONS, DEFAULT_EPSILONS,
    DEFAULT_N, GAUSSIAN_TAU, PAIR_G, PAIR_H, SCALING_TAU, STRIPED_TAU, TIMING_N, TIMING_REPEATS,
    TIMING_TAU, TRANSLATE_EPSILON, VARIANCE_EPSILON,
};
use lw2::io::{read_density, write_grid, GridFormat};
use lw2::oracles::{make_translated_grid, AnalyticDensity, GaussianSpec};
use lw2::potential::{build_potential, DEFAULT_FLOOR};
use lw2::solver::{SolverConfig, WittenSolver, DEFAULT_TAU, DEFAULT_TOL};
use lw2::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "lw2",
    version,
    about = "Linearized W2 distances via the regularized Witten Laplacian"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Grid points per side (2^k + 1); defaults depend on the command.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Heat time for the potential; defaults depend on the command.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Relative residual target of the conjugate-gradient solve.
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Iteration cap; default ceil(10 sqrt(1 + max|V|)) + 100.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Positivity floor on the smoothed amplitude, relative to its maximum.
    #[arg(long, global = true, default_value_t = DEFAULT_FLOOR)]
    floor: f64,
    /// Output grid file, or output directory for circle tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the JSON report to this path.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
}

impl Global {
    fn solver_config(&self, default_tau: f64) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            tau: self.tau.unwrap_or(default_tau),
            floor: self.floor,
        }
    }

    fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("--out is required for this command".into()))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Weighted norm of (f - g) / f_tau.
    Norm {
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        g: PathBuf,
    },
    /// Write the regularized potential V_tau of a density as a grid.
    Potential {
        #[arg(long)]
        f: PathBuf,
    },
    /// Write the embedding Phi_f(g) as a grid.
    Embed {
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        g: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEGREE)]
        degree: usize,
    },
    /// Sample an analytic density onto a grid.
    MakeDensity {
        #[arg(long, value_enum)]
        kind: DensityKind,
        /// Comma-separated `key=value` pairs: mean1, mean2, sigma1, sigma2 (gaussian) and shift1, shift2.
        #[arg(long, default_value = "")]
        params: String,
    },
    /// Run one of the numerical experiments.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DensityKind {
    Gaussian,
    Striped,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CircleKindArg {
    Translate,
    Variance,
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// Weighted norm of the reference Gaussian pair against its closed-form W2.
    Gaussian {
        /// Compare the reference with itself.
        #[arg(long)]
        g_equals_f: bool,
    },
    /// Distortion of the epsilon-circle under the witten, sobolev and euclid metrics.
    Circle {
        #[arg(long, value_enum, default_value = "translate")]
        kind: CircleKindArg,
        #[arg(long, value_enum, default_value = "striped")]
        density: DensityKind,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_DIRECTIONS)]
        directions: usize,
        /// Standard deviations `s1,s2` of a centred Gaussian density (default: the reference widths).
        #[arg(long, value_delimiter = ',')]
        sigma: Option<Vec<f64>>,
    },
    /// Log-log slope of |W2 - norm| against epsilon.
    Scaling {
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Wall time of weighted-norm evaluations on the striped density.
    Timing {
        #[arg(long, default_value_t = TIMING_REPEATS)]
        repeats: usize,
    },
    /// Embedded distance of the g, h Gaussian pair against W2(g, h).
    EmbedDemo {
        #[arg(long, default_value_t = DEFAULT_DEGREE)]
        degree: usize,
        /// Use h = g.
        #[arg(long)]
        h_equals_g: bool,
    },
}

/// A JSON report and whether the run counts as converged.
struct Outcome {
    report: Value,
    failure: Option<Error>,
}

impl Outcome {
    fn ok(report: impl Serialize) -> Result<Self> {
        Ok(Self {
            report: serde_json::to_value(report)?,
            failure: None,
        })
    }

    fn checked(
        report: impl Serialize,
        converged: bool,
        iterations: usize,
        residual: f64,
    ) -> Result<Self> {
        let failure = (!converged).then_some(Error::NonConvergence {
            iterations,
            residual,
        });
        Ok(Self {
            report: serde_json::to_value(report)?,
            failure,
        })
    }
}

fn parse_params(text: &str) -> Result<BTreeMap<String, f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("parameter {pair:?} is not key=value"))
            })?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| Error::InvalidInput(format!("parameter {k}: {e}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn make_density(global: &Global, kind: DensityKind, params: &str) -> Result<Outcome> {
    let n = global.n.unwrap_or(DEFAULT_N);
    let mut p = parse_params(params)?;
    let mut take = |key: &str, default: f64| p.remove(key).unwrap_or(default);
    let shift = [take("shift1", 0.0), take("shift2", 0.0)];
    let density = match kind {
        DensityKind::Gaussian => {
            let r = GaussianSpec::reference();
            let mean = [take("mean1", r.mean[0]), take("mean2", r.mean[1])];
            let sigma = [take("sigma1", r.sigma[0]), take("sigma2", r.sigma[1])];
            AnalyticDensity::Gaussian(GaussianSpec::new(mean, sigma)?)
        }
        DensityKind::Striped => AnalyticDensity::Striped,
    };
    if let Some(key) = p.keys().next() {
        return Err(Error::InvalidInput(format!(
            "unknown parameter {key:?} for this density"
        )));
    }
    let sampled = make_translated_grid(&density, shift, n)?;
    let meta = json!({
        "density": density,
        "shift": shift,
        "n": n,
        "boundary_mass": sampled.boundary_mass,
        "warned": sampled.warned(),
    });
    let out = global.require_out()?;
    write_grid(
        out,
        sampled.grid.field(),
        GridFormat::from_path(out),
        Some(&meta),
    )?;
    Outcome::ok(meta)
}

fn norm(global: &Global, f: &Path, g: &Path) -> Result<Outcome> {
    let (f, g) = (read_density(f)?, read_density(g)?);
    let cfg = global.solver_config(DEFAULT_TAU);
    let r = WittenSolver::new(&f, cfg)?.norm(&g)?;
    let report = json!({ "config": EchoConfig::new(f.n(), &cfg, None), "result": r });
    Outcome::checked(report, r.converged, r.iterations, r.residual)
}

fn potential(global: &Global, f: &Path) -> Result<Outcome> {
    let f = read_density(f)?;
    let cfg = global.solver_config(DEFAULT_TAU);
    let pot = build_potential(&f, cfg.tau, cfg.floor)?;
    let meta = json!({
        "config": EchoConfig::new(f.n(), &cfg, None),
        "v_max": pot.v_max(),
        "clamped_points": pot.clamped_points(),
        "null_residual": pot.null_residual()?,
    });
    let out = global.require_out()?;
    write_grid(out, pot.v(), GridFormat::from_path(out), Some(&meta))?;
    Outcome::ok(meta)
}

fn embed(global: &Global, f: &Path, g: &Path, degree: usize) -> Result<Outcome> {
    let (f, g) = (read_density(f)?, read_density(g)?);
    let cfg = global.solver_config(DEFAULT_TAU);
    let embedder = Embedder::new(&f, cfg, degree)?;
    let e = embedder.embed(&g)?;
    let meta = json!({
        "config": EchoConfig::new(f.n(), &cfg, Some(degree)),
        "tau": e.tau(),
        "degree": e.cheb_degree(),
        "bound": e.spectral_bound(),
        "norm": e.norm()?,
        "solver_norm": e.solver_norm(),
        "isometry_error": e.isometry_error()?,
        "chebyshev_error": embedder.chebyshev().error_estimate(),
        "chebyshev_warning": embedder.chebyshev().warning(),
    });
    let out = global.require_out()?;
    write_grid(out, e.phi(), GridFormat::from_path(out), Some(&meta))?;
    Outcome::ok(meta)
}

fn experiment(global: &Global, which: &Experiment) -> Result<Outcome> {
    let n = global.n.unwrap_or(DEFAULT_N);
    match which {
        Experiment::Gaussian { g_equals_f } => {
            let cfg = global.solver_config(GAUSSIAN_TAU);
            let comparison = if *g_equals_f {
                GaussianSpec::reference()
            } else {
                GaussianSpec::reference().shifted(PAIR_G.0, PAIR_G.1)?
            };
            let r = experiments::gaussian_check_with(&comparison, n, cfg)?;
            let (c, it, res) = (r.converged, r.iterations, r.residual);
            Outcome::checked(r, c, it, res)
        }
        Experiment::Circle {
            kind,
            density,
            epsilon,
            directions,
            sigma,
        } => {
            let kind = match kind {
                CircleKindArg::Translate => CircleKind::Translate,
                CircleKindArg::Variance => CircleKind::Variance,
            };
            let density = match density {
                DensityKind::Striped => AnalyticDensity::Striped,
                DensityKind::Gaussian => {
                    let s = match sigma.as_deref() {
                        None => GaussianSpec::reference().sigma,
                        Some(&[s1, s2]) => [s1, s2],
                        Some(other) => {
                            return Err(Error::InvalidInput(format!(
                                "--sigma takes two values, got {}",
                                other.len()
                            )));
                        }
                    };
                    AnalyticDensity::Gaussian(GaussianSpec::new([0.5, 0.5], s)?)
                }
            };
            let default_tau = if density == AnalyticDensity::Striped {
                STRIPED_TAU
            } else {
                GAUSSIAN_TAU
            };
            let default_eps = if kind == CircleKind::Variance {
                VARIANCE_EPSILON
            } else {
                TRANSLATE_EPSILON
            };
            let params = CircleParams {
                kind,
                density,
                epsilon: epsilon.unwrap_or(default_eps),
                directions: *directions,
                n,
            };
            let r = experiments::circle(&params, global.solver_config(default_tau))?;
            if let Some(dir) = &global.out {
                fs::create_dir_all(dir)?;
                let prefix = if kind == CircleKind::Variance {
                    "variance"
                } else {
                    "translate"
                };
                for metric in Metric::ALL {
                    let path = dir.join(format!("{prefix}_{}.csv", metric.name()));
                    experiments::write_circle_csv(fs::File::create(path)?, r.set(metric))?;
                }
            }
            Outcome::ok(r)
        }
        Experiment::Scaling { epsilons } => {
            let eps = epsilons
                .clone()
                .unwrap_or_else(|| DEFAULT_EPSILONS.to_vec());
            let cfg = global.solver_config(SCALING_TAU);
            Outcome::ok(experiments::scaling(
                n,
                cfg,
                experiments::default_scaling_direction(),
                &eps,
            )?)
        }
        Experiment::Timing { repeats } => {
            let n = global.n.unwrap_or(TIMING_N);
            Outcome::ok(experiments::timing(
                n,
                global.solver_config(TIMING_TAU),
                *repeats,
            )?)
        }
        Experiment::EmbedDemo { degree, h_equals_g } => {
            let cfg = global.solver_config(GAUSSIAN_TAU);
            let r = GaussianSpec::reference();
            let g = r.shifted(PAIR_G.0, PAIR_G.1)?;
            let h = if *h_equals_g {
                g
            } else {
                r.shifted(PAIR_H.0, PAIR_H.1)?
            };
            Outcome::ok(experiments::embed_demo_with(&g, &h, n, cfg, *degree)?)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Norm { f, g: other } => norm(g, f, other),
        Command::Potential { f } => potential(g, f),
        Command::Embed {
            f,
            g: other,
            degree,
        } => embed(g, f, other, *degree),
        Command::MakeDensity { kind, params } => make_density(g, *kind, params),
        Command::Experiment { which } => experiment(g, which),
    }
}

fn emit(global: &Global, report: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    writeln!(std::io::stdout().lock(), "{text}")?;
    if let Some(path) = &global.json {
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = run(&cli).and_then(|outcome| {
        emit(&cli.global, &outcome.report)?;
        outcome.failure.map_or(Ok(()), Err)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
