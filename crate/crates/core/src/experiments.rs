//! Drivers for the numerical experiments: Gaussian linearization check, circle
//! distortion sets, remainder scaling, timing and the embedding demo.
//!
//! Every report carries the effective configuration it was produced with.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{embedding_distance, Embedder};
use crate::error::{Error, Result};
use crate::grid::{l2_distance, DensityGrid};
use crate::oracles::{
    make_gaussian_grid, make_striped_bump_grid, make_translated_grid, w2_gaussian_diag,
    AnalyticDensity, GaussianSpec,
};
use crate::potential::DEFAULT_FLOOR;
use crate::solver::{unweighted_hm1_norm, SolverConfig, WittenSolver, DEFAULT_TOL};
use crate::spectral::EIGENVALUE_CONVENTION;

pub const DEFAULT_N: usize = 257;
pub const DEFAULT_DIRECTIONS: usize = 32;
pub const MIN_DIRECTIONS: usize = 16;
/// Heat time for experiments on the reference Gaussian. Its smallest variance is
/// `(1/16)^2 ~ 3.9e-3`, and smoothing widens each variance by `tau`, so the time is
/// kept at grid scale.
pub const GAUSSIAN_TAU: f64 = 1e-5;
/// Heat time for circle experiments on the striped density. The stripes have period
/// 1/8 and heat smoothing acts over a length `sqrt(2 tau)`, which must stay below it.
pub const STRIPED_TAU: f64 = 1e-3;
/// Heat time for the timing harness.
pub const TIMING_TAU: f64 = 1e-2;
/// The remainder fit compares against the unsmoothed linearization.
pub const SCALING_TAU: f64 = 0.0;
pub const DEFAULT_EPSILONS: [f64; 4] = [4e-3, 2e-3, 1e-3, 5e-4];
pub const TRANSLATE_EPSILON: f64 = 5e-3;
pub const VARIANCE_EPSILON: f64 = 2e-3;
pub const TIMING_N: usize = 129;
pub const TIMING_REPEATS: usize = 128;
pub const MIN_REPEATS: usize = 8;

/// Mean and standard-deviation offsets of the comparison Gaussians.
pub const PAIR_G: ([f64; 2], [f64; 2]) = ([0.001, 0.002], [0.001, 0.003]);
pub const PAIR_H: ([f64; 2], [f64; 2]) = ([0.003, -0.002], [-0.001, 0.002]);

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EchoConfig {
    pub n: usize,
    pub tau: f64,
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub floor: f64,
    pub degree: Option<usize>,
    pub eigenvalue_convention: String,
}

impl EchoConfig {
    pub fn new(n: usize, cfg: &SolverConfig, degree: Option<usize>) -> Self {
        Self {
            n,
            tau: cfg.tau,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            floor: cfg.floor,
            degree,
            eigenvalue_convention: EIGENVALUE_CONVENTION.to_string(),
        }
    }
}

/// Solver settings with a given heat time and the remaining defaults.
pub fn config_with_tau(tau: f64) -> SolverConfig {
    SolverConfig {
        tol: DEFAULT_TOL,
        max_iter: None,
        tau,
        floor: DEFAULT_FLOOR,
    }
}

fn offset(spec: &GaussianSpec, by: ([f64; 2], [f64; 2])) -> Result<GaussianSpec> {
    spec.shifted(by.0, by.1)
}

// ---------------------------------------------------------------------------
// Gaussian linearization check

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianCheckReport {
    pub config: EchoConfig,
    pub reference: GaussianSpec,
    pub comparison: GaussianSpec,
    pub norm: f64,
    pub analytic_w2: f64,
    pub gap: f64,
    pub iterations: usize,
    pub residual: f64,
    pub v_max: f64,
    pub converged: bool,
}

/// Weighted norm of the reference Gaussian against `comparison`, next to the closed-form distance.
pub fn gaussian_check_with(
    comparison: &GaussianSpec,
    n: usize,
    cfg: SolverConfig,
) -> Result<GaussianCheckReport> {
    let reference = GaussianSpec::reference();
    let f = make_gaussian_grid(&reference, n)?.into_grid();
    let g = make_gaussian_grid(comparison, n)?.into_grid();
    let r = WittenSolver::new(&f, cfg)?.norm(&g)?;
    let analytic_w2 = w2_gaussian_diag(&reference, comparison);
    Ok(GaussianCheckReport {
        config: EchoConfig::new(n, &cfg, None),
        reference,
        comparison: *comparison,
        norm: r.value,
        analytic_w2,
        gap: (r.value - analytic_w2).abs(),
        iterations: r.iterations,
        residual: r.residual,
        v_max: r.v_max,
        converged: r.converged,
    })
}

/// [`gaussian_check_with`] for the standard comparison Gaussian.
pub fn gaussian_check(n: usize, cfg: SolverConfig) -> Result<GaussianCheckReport> {
    gaussian_check_with(&offset(&GaussianSpec::reference(), PAIR_G)?, n, cfg)
}

// ---------------------------------------------------------------------------
// Circle distortion sets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CircleKind {
    /// Move the density by `epsilon v`.
    Translate,
    /// Change the Gaussian standard deviations by `epsilon v`.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Witten,
    Sobolev,
    Euclid,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Witten, Metric::Sobolev, Metric::Euclid];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Witten => "witten",
            Metric::Sobolev => "sobolev",
            Metric::Euclid => "euclid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleRow {
    pub theta: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircleSetResult {
    pub metric: Metric,
    pub epsilon: f64,
    pub rows: Vec<CircleRow>,
    /// `max radius / min radius`.
    pub ratio: f64,
}

impl CircleSetResult {
    fn from_rows(metric: Metric, epsilon: f64, rows: Vec<CircleRow>) -> Self {
        let max = rows
            .iter()
            .map(|r| r.radius)
            .fold(f64::NEG_INFINITY, f64::max);
        let min = rows.iter().map(|r| r.radius).fold(f64::INFINITY, f64::min);
        Self {
            metric,
            epsilon,
            rows,
            ratio: max / min,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircleReport {
    pub config: EchoConfig,
    pub kind: CircleKind,
    pub density: AnalyticDensity,
    pub directions: usize,
    pub epsilon: f64,
    pub sets: Vec<CircleSetResult>,
    /// Largest iteration count over the weighted solves.
    pub max_iterations: usize,
    pub v_max: f64,
}

impl CircleReport {
    pub fn set(&self, metric: Metric) -> &CircleSetResult {
        self.sets
            .iter()
            .find(|s| s.metric == metric)
            .expect("all metrics are computed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleParams {
    pub kind: CircleKind,
    pub density: AnalyticDensity,
    pub epsilon: f64,
    pub directions: usize,
    pub n: usize,
}

/// Radii of the three metric images of the `directions` unit vectors.
pub fn circle(params: &CircleParams, cfg: SolverConfig) -> Result<CircleReport> {
    let CircleParams {
        kind,
        density,
        epsilon,
        directions,
        n,
    } = *params;
    if directions < MIN_DIRECTIONS {
        return Err(Error::invalid(format!(
            "need at least {MIN_DIRECTIONS} directions, got {directions}"
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let spec = match (kind, density) {
        (CircleKind::Variance, AnalyticDensity::Striped) => {
            return Err(Error::invalid(
                "the variance experiment needs a Gaussian density",
            ))
        }
        (_, AnalyticDensity::Gaussian(spec)) => Some(spec),
        _ => None,
    };
    let f = match density {
        AnalyticDensity::Gaussian(spec) => make_gaussian_grid(&spec, n)?.into_grid(),
        AnalyticDensity::Striped => make_striped_bump_grid(n)?.into_grid(),
    };
    let solver = WittenSolver::new(&f, cfg)?;
    let comparison = |v: [f64; 2]| -> Result<DensityGrid> {
        let sampled = match kind {
            CircleKind::Translate => make_translated_grid(&density, v, n)?,
            CircleKind::Variance => {
                let s = spec.expect("checked above").shifted([0.0, 0.0], v)?;
                make_gaussian_grid(&s, n)?
            }
        };
        Ok(sampled.into_grid())
    };
    let per_direction: Vec<(f64, [f64; 3], usize)> = (0..directions)
        .into_par_iter()
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / directions as f64;
            let g = comparison([epsilon * theta.cos(), epsilon * theta.sin()])?;
            let w = solver.norm(&g)?.require_converged()?;
            let s = unweighted_hm1_norm(&f, &g)?;
            let e = l2_distance(f.field(), g.field())?;
            Ok((theta, [w.value, s, e], w.iterations))
        })
        .collect::<Result<_>>()?;
    let sets = Metric::ALL
        .iter()
        .enumerate()
        .map(|(m, &metric)| {
            let rows = per_direction
                .iter()
                .map(|(theta, r, _)| CircleRow {
                    theta: *theta,
                    radius: r[m],
                })
                .collect();
            CircleSetResult::from_rows(metric, epsilon, rows)
        })
        .collect();
    Ok(CircleReport {
        config: EchoConfig::new(n, &cfg, None),
        kind,
        density,
        directions,
        epsilon,
        sets,
        max_iterations: per_direction.iter().map(|p| p.2).max().unwrap_or(0),
        v_max: solver.potential().v_max(),
    })
}

/// Writes `theta,radius` rows with a header line.
pub fn write_circle_csv<W: Write>(out: W, set: &CircleSetResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in &set.rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the layout written by [`write_circle_csv`].
pub fn read_circle_csv<R: Read>(input: R) -> Result<Vec<CircleRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_error)?;
    if headers != vec!["theta", "radius"] {
        return Err(Error::invalid(format!(
            "expected header theta,radius, got {headers:?}"
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("circle csv: {e}"))
}

// ---------------------------------------------------------------------------
// Remainder scaling

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub norm: f64,
    pub analytic_w2: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingResult {
    pub config: EchoConfig,
    /// Unit direction in `(d mean_1, d mean_2, d sigma_1, d sigma_2)`.
    pub direction: [f64; 4],
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log abs_error` against `log epsilon`.
    pub slope: f64,
}

/// Direction of the standard comparison Gaussian, scaled to unit distance.
pub fn default_scaling_direction() -> [f64; 4] {
    let d = [PAIR_G.0[0], PAIR_G.0[1], PAIR_G.1[0], PAIR_G.1[1]];
    let len = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.map(|x| x / len)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(
            "slope fit needs at least two matched points",
        ));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("slope fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Gap between the weighted norm and the closed-form distance along a fixed direction.
pub fn scaling(
    n: usize,
    cfg: SolverConfig,
    direction: [f64; 4],
    epsilons: &[f64],
) -> Result<ScalingResult> {
    if epsilons.len() < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 epsilon values, got {}",
            epsilons.len()
        )));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) || !(epsilons[epsilons.len() - 1] > 0.0) {
        return Err(Error::invalid(
            "epsilons must be positive and strictly decreasing",
        ));
    }
    if epsilons[0] / epsilons[epsilons.len() - 1] < 8.0 {
        return Err(Error::invalid("epsilons must span at least a factor of 8"));
    }
    let len = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(len > 0.0) {
        return Err(Error::invalid("direction must be nonzero"));
    }
    let direction = direction.map(|x| x / len);
    let reference = GaussianSpec::reference();
    let f = make_gaussian_grid(&reference, n)?.into_grid();
    let solver = WittenSolver::new(&f, cfg)?;
    let rows = epsilons
        .iter()
        .map(|&eps| {
            let d = direction.map(|x| eps * x);
            let spec = reference.shifted([d[0], d[1]], [d[2], d[3]])?;
            let g = make_gaussian_grid(&spec, n)?.into_grid();
            let r = solver.norm(&g)?.require_converged()?;
            let w2 = w2_gaussian_diag(&reference, &spec);
            Ok(ScalingRow {
                epsilon: eps,
                norm: r.value,
                analytic_w2: w2,
                abs_error: (w2 - r.value).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.abs_error).collect();
    let slope = log_log_slope(&x, &y)?;
    Ok(ScalingResult {
        config: EchoConfig::new(n, &cfg, None),
        direction,
        rows,
        slope,
    })
}

// ---------------------------------------------------------------------------
// Timing

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub config: EchoConfig,
    pub repeats: usize,
    pub mean_seconds: f64,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub v_max: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
}

/// Wall time of complete weighted-norm evaluations (potential, deflation and solve)
/// on the striped density against translates in `repeats` directions.
pub fn timing(n: usize, cfg: SolverConfig, repeats: usize) -> Result<TimingReport> {
    if repeats < MIN_REPEATS {
        return Err(Error::invalid(format!(
            "need at least {MIN_REPEATS} repeats, got {repeats}"
        )));
    }
    let f = make_striped_bump_grid(n)?.into_grid();
    let comparisons = (0..repeats)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / repeats as f64;
            let v = [
                TRANSLATE_EPSILON * theta.cos(),
                TRANSLATE_EPSILON * theta.sin(),
            ];
            Ok(make_translated_grid(&AnalyticDensity::Striped, v, n)?.into_grid())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut times = Vec::with_capacity(repeats);
    let mut iterations = Vec::with_capacity(repeats);
    let mut v_max = 0.0;
    for g in &comparisons {
        let start = Instant::now();
        let r = WittenSolver::new(&f, cfg)?.norm(g)?.require_converged()?;
        times.push(start.elapsed().as_secs_f64());
        iterations.push(r.iterations);
        v_max = r.v_max;
    }
    let mean_seconds = times.iter().sum::<f64>() / repeats as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let median_seconds = if repeats % 2 == 1 {
        sorted[repeats / 2]
    } else {
        0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2])
    };
    Ok(TimingReport {
        config: EchoConfig::new(n, &cfg, None),
        repeats,
        mean_seconds,
        median_seconds,
        min_seconds: sorted[0],
        max_seconds: sorted[repeats - 1],
        v_max,
        mean_iterations: iterations.iter().sum::<usize>() as f64 / repeats as f64,
        max_iterations: iterations.iter().copied().max().unwrap_or(0),
    })
}

// ---------------------------------------------------------------------------
// Embedding demo

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedDemoReport {
    pub config: EchoConfig,
    pub reference: GaussianSpec,
    pub g: GaussianSpec,
    pub h: GaussianSpec,
    pub distance: f64,
    pub analytic_w2: f64,
    pub gap: f64,
    /// Relative gaps between `||Phi||` and the solver norm for `g` and `h`.
    pub isometry_error_g: f64,
    pub isometry_error_h: f64,
    pub spectral_bound: f64,
    pub chebyshev_error: f64,
    pub chebyshev_warning: bool,
}

/// Embeds `g` and `h` relative to the reference Gaussian and compares their distance with `W2(g, h)`.
pub fn embed_demo_with(
    g: &GaussianSpec,
    h: &GaussianSpec,
    n: usize,
    cfg: SolverConfig,
    degree: usize,
) -> Result<EmbedDemoReport> {
    let reference = GaussianSpec::reference();
    let f = make_gaussian_grid(&reference, n)?.into_grid();
    let embedder = Embedder::new(&f, cfg, degree)?;
    let pg = embedder.embed(&make_gaussian_grid(g, n)?.into_grid())?;
    let ph = embedder.embed(&make_gaussian_grid(h, n)?.into_grid())?;
    let distance = embedding_distance(&pg, &ph)?;
    let analytic_w2 = w2_gaussian_diag(g, h);
    Ok(EmbedDemoReport {
        config: EchoConfig::new(n, &cfg, Some(degree)),
        reference,
        g: *g,
        h: *h,
        distance,
        analytic_w2,
        gap: (distance - analytic_w2).abs(),
        isometry_error_g: pg.isometry_error()?,
        isometry_error_h: ph.isometry_error()?,
        spectral_bound: pg.spectral_bound(),
        chebyshev_error: embedder.chebyshev().error_estimate(),
        chebyshev_warning: embedder.chebyshev().warning(),
    })
}

/// [`embed_demo_with`] for the standard `g`, `h` pair.
pub fn embed_demo(n: usize, cfg: SolverConfig, degree: usize) -> Result<EmbedDemoReport> {
    let reference = GaussianSpec::reference();
    embed_demo_with(
        &offset(&reference, PAIR_G)?,
        &offset(&reference, PAIR_H)?,
        n,
        cfg,
        degree,
    )
}
