//! Isometric embedding of the weighted negative Sobolev norm into L^2.
//!
//! `Phi_f(g) = H^{-1/2} u~` is evaluated as `H^{1/2} (H^{-1} u~)`: the inverse comes
//! from the conjugate-gradient solver and the square root from a Chebyshev
//! expansion of `sqrt(x)` on `[0, b]`, applied to `H` by the Clenshaw recurrence.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{inner_product, l2_distance, DensityGrid, WorkField};
use crate::solver::{NormResult, SolverConfig, WittenSolver};
use crate::spectral::max_eigenvalue;

pub const DEFAULT_DEGREE: usize = 200;
pub const MIN_DEGREE: usize = 8;
/// Sup-norm error of the expansion, relative to `sqrt(b)`, above which the approximation is flagged.
pub const SQRT_REL_TOL: f64 = 1e-2;

/// Chebyshev expansion of `sqrt(x)` on `[0, b]`.
#[derive(Debug, Clone, Serialize)]
pub struct ChebApprox {
    degree: usize,
    interval_upper: f64,
    /// `c_0 .. c_d`, with `sqrt(x) ~ sum_k c_k T_k(2x/b - 1)`.
    coefficients: Vec<f64>,
    error_estimate: f64,
    warning: bool,
}

impl ChebApprox {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interval_upper(&self) -> f64 {
        self.interval_upper
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Sampled sup-norm error on `[0, b]`.
    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    pub fn warning(&self) -> bool {
        self.warning
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = 2.0 * x / self.interval_upper - 1.0;
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coefficients[1..].iter().rev() {
            let b0 = c + 2.0 * t * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coefficients[0] + t * b1 - b2
    }
}

/// Interpolates `sqrt(x)` at the `degree + 1` Chebyshev points of `[0, b]`.
pub fn chebyshev_sqrt(degree: usize, b: f64) -> Result<ChebApprox> {
    if degree < MIN_DEGREE {
        return Err(Error::invalid(format!(
            "Chebyshev degree must be at least {MIN_DEGREE}, got {degree}"
        )));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!(
            "interval upper bound must be positive, got {b}"
        )));
    }
    let m = degree + 1;
    let angles: Vec<f64> = (0..m)
        .map(|j| std::f64::consts::PI * (j as f64 + 0.5) / m as f64)
        .collect();
    let samples: Vec<f64> = angles
        .iter()
        .map(|a| (0.5 * b * (a.cos() + 1.0)).sqrt())
        .collect();
    let coefficients: Vec<f64> = (0..m)
        .map(|k| {
            let s: f64 = samples
                .iter()
                .zip(&angles)
                .map(|(v, a)| v * (k as f64 * a).cos())
                .sum();
            let scale = if k == 0 { 1.0 } else { 2.0 };
            scale * s / m as f64
        })
        .collect();
    let mut approx = ChebApprox {
        degree,
        interval_upper: b,
        coefficients,
        error_estimate: 0.0,
        warning: false,
    };
    // Quadratic spacing resolves the kink at 0.
    let dense = 40 * m;
    let err = (0..=dense)
        .map(|i| {
            let x = b * (i as f64 / dense as f64).powi(2);
            (approx.eval(x) - x.sqrt()).abs()
        })
        .fold(0.0f64, f64::max);
    approx.error_estimate = err;
    approx.warning = err > SQRT_REL_TOL * b.sqrt();
    if approx.warning {
        log::warn!("sqrt expansion of degree {degree} on [0, {b:.3e}] has error {err:.3e}");
    }
    Ok(approx)
}

/// Upper bound on the spectrum of `H_tau = -Delta + V_tau` on an `n x n` grid.
pub fn spectral_bound(n: usize, v_max_positive: f64) -> f64 {
    max_eigenvalue(n) + v_max_positive.max(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingField {
    #[serde(skip)]
    phi: WorkField,
    tau: f64,
    cheb_degree: usize,
    spectral_bound: f64,
    /// Solver norm of the same perturbation, for the isometry diagnostic.
    solver_norm: f64,
    converged: bool,
}

impl EmbeddingField {
    pub fn phi(&self) -> &WorkField {
        &self.phi
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cheb_degree(&self) -> usize {
        self.cheb_degree
    }

    pub fn spectral_bound(&self) -> f64 {
        self.spectral_bound
    }

    pub fn solver_norm(&self) -> f64 {
        self.solver_norm
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// `||phi||` in trapezoid L^2.
    pub fn norm(&self) -> Result<f64> {
        Ok(inner_product(&self.phi, &self.phi)?.max(0.0).sqrt())
    }

    /// `| ||phi|| - solver_norm | / solver_norm`, or the absolute gap when the solver norm vanishes.
    pub fn isometry_error(&self) -> Result<f64> {
        let gap = (self.norm()? - self.solver_norm).abs();
        Ok(if self.solver_norm > 0.0 {
            gap / self.solver_norm
        } else {
            gap
        })
    }
}

/// A reference density prepared for embedding several comparison densities.
#[derive(Debug, Clone)]
pub struct Embedder {
    solver: WittenSolver,
    cheb: ChebApprox,
    /// `f_tau^{1/2}` normalized in trapezoid L^2.
    null: WorkField,
}

impl Embedder {
    pub fn new(f: &DensityGrid, cfg: SolverConfig, degree: usize) -> Result<Self> {
        let solver = WittenSolver::new(f, cfg)?;
        let pot = solver.potential();
        let cheb = chebyshev_sqrt(degree, spectral_bound(pot.n(), pot.v_max_positive()))?;
        let s = pot.sqrt_f_tau();
        let null = s.scaled(1.0 / inner_product(s, s)?.sqrt())?;
        Ok(Self { solver, cheb, null })
    }

    pub fn solver(&self) -> &WittenSolver {
        &self.solver
    }

    pub fn chebyshev(&self) -> &ChebApprox {
        &self.cheb
    }

    /// `p(H) v` for the stored expansion `p ~ sqrt`, with `H` rescaled onto `[-1, 1]`.
    pub fn apply_sqrt_h(&self, v: &WorkField) -> Result<WorkField> {
        let pot = self.solver.potential();
        let scale = 2.0 / self.cheb.interval_upper;
        let shifted = |x: &WorkField| -> Result<WorkField> {
            pot.apply_h(x)?.zip_with(x, |h, x| scale * h - x)
        };
        let c = &self.cheb.coefficients;
        let mut b1 = WorkField::zeros(v.n())?;
        let mut b2 = WorkField::zeros(v.n())?;
        for &ck in c[1..].iter().rev() {
            let t = shifted(&b1)?;
            let b0 = WorkField::from_raw(
                v.n(),
                v.values()
                    .iter()
                    .zip(t.values())
                    .zip(b2.values())
                    .map(|((vi, ti), bi)| ck * vi + 2.0 * ti - bi)
                    .collect(),
            );
            b2 = b1;
            b1 = b0;
        }
        let t = shifted(&b1)?;
        let out: Vec<f64> = v
            .values()
            .iter()
            .zip(t.values())
            .zip(b2.values())
            .map(|((vi, ti), bi)| c[0] * vi + ti - bi)
            .collect();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::internal("non-finite value in Chebyshev recurrence"));
        }
        Ok(WorkField::from_raw(v.n(), out))
    }

    fn deflate(&self, v: &WorkField) -> Result<WorkField> {
        let c = inner_product(v, &self.null)?;
        v.zip_with(&self.null, |a, b| a - c * b)
    }

    fn finish(&self, psi_tilde: &WorkField, result: &NormResult) -> Result<EmbeddingField> {
        let phi = self.apply_sqrt_h(&self.deflate(psi_tilde)?)?;
        Ok(EmbeddingField {
            phi,
            tau: self.solver.config().tau,
            cheb_degree: self.cheb.degree,
            spectral_bound: self.cheb.interval_upper,
            solver_norm: result.value,
            converged: result.converged,
        })
    }

    /// `Phi_f(g)`. Non-convergence of the inner solve is an error.
    pub fn embed(&self, g: &DensityGrid) -> Result<EmbeddingField> {
        let (_, psi_tilde, result) = self.solver.solve_witten(g)?;
        let result = result.require_converged()?;
        self.finish(&psi_tilde, &result)
    }

    /// Embeds an arbitrary `u~` (already divided by `f_tau^{1/2}`).
    pub fn embed_tilde(&self, u_tilde: &WorkField) -> Result<EmbeddingField> {
        let (psi_tilde, result) = self.solver.solve_tilde(u_tilde, 0.0)?;
        let result = result.require_converged()?;
        self.finish(&psi_tilde, &result)
    }
}

/// `Phi_f(g)` with a fresh solver.
pub fn embed(
    f: &DensityGrid,
    g: &DensityGrid,
    cfg: SolverConfig,
    degree: usize,
) -> Result<EmbeddingField> {
    Embedder::new(f, cfg, degree)?.embed(g)
}

/// L^2 distance between two embeddings of the same reference.
pub fn embedding_distance(a: &EmbeddingField, b: &EmbeddingField) -> Result<f64> {
    if a.tau != b.tau || a.spectral_bound != b.spectral_bound {
        return Err(Error::invalid(format!(
            "embeddings disagree on tau or spectral bound ({}, {:.6e}) vs ({}, {:.6e})",
            a.tau, a.spectral_bound, b.tau, b.spectral_bound
        )));
    }
    l2_distance(&a.phi, &b.phi)
}
