//! Weighted negative Sobolev norm by preconditioned conjugate gradient.
//!
//! With `Psi = (-Delta)^{1/2} psi` the equation `H_tau psi = u~` becomes
//! `A Psi = (-Delta)^{-1/2} u~` where
//! `A = Id - P_1 + (-Delta)^{-1/2} V_tau (-Delta)^{-1/2}` is a bounded
//! symmetric perturbation of the identity. `A` has the one-dimensional null
//! space spanned by `(-Delta)^{1/2} f_tau^{1/2}`, which is deflated from both
//! the right-hand side and the iterates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_product, integrate, same_size, DensityGrid, WorkField};
use crate::potential::{build_potential, check_normalized, WittenPotential, DEFAULT_FLOOR};
use crate::spectral::{apply_fractional_laplacian, eigenvalue, CosineBasis, SpectralCoeffs};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_TAU: f64 = 1e-3;
/// Largest `|int (f - g)|` accepted before deflation.
pub const MASS_DEFECT_TOL: f64 = 1e-10;
/// Largest `||A w|| / ||w||` accepted for the deflation direction.
pub const DEFLATION_CHECK_TOL: f64 = 1e-6;
/// Negative pairings down to this magnitude are treated as roundoff and clamped to zero.
pub const NEGATIVE_PAIRING_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    /// Relative residual target `||U - A Psi|| / ||U||`.
    pub tol: f64,
    /// Iteration cap; `None` selects `ceil(10 sqrt(1 + v_max)) + 100`.
    pub max_iter: Option<usize>,
    pub tau: f64,
    pub floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            tau: DEFAULT_TAU,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl SolverConfig {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn effective_max_iter(&self, v_max: f64) -> usize {
        self.max_iter
            .unwrap_or_else(|| (10.0 * (1.0 + v_max).sqrt()).ceil() as usize + 100)
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == Some(0) {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NormResult {
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
    pub v_max: f64,
    pub mass_defect: f64,
    pub converged: bool,
}

impl NormResult {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

/// `A xi = xi - P_1 xi + (-Delta)^{-1/2} [V_tau (-Delta)^{-1/2} xi]`, with the
/// multiplication by `V_tau` done on the grid.
pub fn apply_a(pot: &WittenPotential, xi: &SpectralCoeffs) -> Result<SpectralCoeffs> {
    let basis = CosineBasis::for_size(pot.n())?;
    apply_a_with(&basis, pot, xi)
}

fn apply_a_with(
    basis: &CosineBasis,
    pot: &WittenPotential,
    xi: &SpectralCoeffs,
) -> Result<SpectralCoeffs> {
    if xi.n() != pot.n() {
        return Err(Error::invalid(format!(
            "coefficient size {} does not match potential size {}",
            xi.n(),
            pot.n()
        )));
    }
    let spatial = basis.inverse(&apply_fractional_laplacian(xi, -0.5))?;
    let weighted = WorkField::new(
        pot.n(),
        spatial
            .values()
            .iter()
            .zip(pot.v().values())
            .map(|(a, v)| a * v)
            .collect(),
    )?;
    let mut out = apply_fractional_laplacian(&basis.forward(&weighted)?, -0.5);
    for (o, (idx, &x)) in out
        .coeffs_mut()
        .iter_mut()
        .zip(xi.coeffs().iter().enumerate())
    {
        if idx != 0 {
            *o += x;
        }
    }
    Ok(out)
}

/// Unit vector `(-Delta)^{1/2} f_tau^{1/2}` spanning the null space of `A`.
pub fn deflation_vector(pot: &WittenPotential) -> Result<SpectralCoeffs> {
    let basis = CosineBasis::for_size(pot.n())?;
    deflation_vector_with(&basis, pot)
}

fn deflation_vector_with(basis: &CosineBasis, pot: &WittenPotential) -> Result<SpectralCoeffs> {
    let mut w = apply_fractional_laplacian(&basis.forward(pot.sqrt_f_tau())?, 0.5);
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(Error::internal("deflation vector vanished"));
    }
    for c in w.coeffs_mut() {
        *c /= norm;
    }
    let aw = apply_a_with(basis, pot, &w)?;
    let ratio = aw.norm();
    if !(ratio <= DEFLATION_CHECK_TOL) {
        return Err(Error::internal(format!(
            "deflation direction is not a null vector of A: ||Aw||/||w|| = {ratio:.3e}"
        )));
    }
    Ok(w)
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn deflate(v: &mut SpectralCoeffs, w: &SpectralCoeffs) {
    let c = v.dot(w);
    axpy(-c, w.coeffs(), v.coeffs_mut());
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: SpectralCoeffs,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// A reference density prepared for repeated solves: potential, deflation direction and settings.
#[derive(Debug, Clone)]
pub struct WittenSolver {
    pot: WittenPotential,
    basis: Arc<CosineBasis>,
    deflation: SpectralCoeffs,
    reference: DensityGrid,
    cfg: SolverConfig,
    max_iter: usize,
}

impl WittenSolver {
    pub fn new(f: &DensityGrid, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let pot = build_potential(f, cfg.tau, cfg.floor)?;
        Self::from_potential(f, pot, cfg)
    }

    pub fn from_potential(
        f: &DensityGrid,
        pot: WittenPotential,
        cfg: SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let basis = CosineBasis::for_size(pot.n())?;
        let deflation = deflation_vector_with(&basis, &pot)?;
        let max_iter = cfg.effective_max_iter(pot.v_max());
        Ok(Self {
            pot,
            basis,
            deflation,
            reference: f.clone(),
            cfg,
            max_iter,
        })
    }

    pub fn potential(&self) -> &WittenPotential {
        &self.pot
    }

    pub fn deflation(&self) -> &SpectralCoeffs {
        &self.deflation
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }

    pub fn reference(&self) -> &DensityGrid {
        &self.reference
    }

    pub fn apply_a(&self, xi: &SpectralCoeffs) -> Result<SpectralCoeffs> {
        apply_a_with(&self.basis, &self.pot, xi)
    }

    /// `u~ = (f - g) / f_tau^{1/2}` together with the mass defect `|int (f - g)|`.
    pub fn perturbation(&self, g: &DensityGrid) -> Result<(WorkField, f64)> {
        check_normalized(g, "comparison density")?;
        same_size(self.reference.field(), g.field())?;
        let diff = self.reference.field().zip_with(g.field(), |a, b| a - b)?;
        let defect = integrate(&diff).abs();
        if defect > MASS_DEFECT_TOL {
            return Err(Error::invalid(format!(
                "mass defect {defect:.3e} exceeds {MASS_DEFECT_TOL:e}"
            )));
        }
        Ok((diff.zip_with(self.pot.sqrt_f_tau(), |d, s| d / s)?, defect))
    }

    /// Solves `A Psi = rhs` on the complement of the deflation direction.
    pub fn solve(&self, rhs: &SpectralCoeffs) -> Result<CgOutcome> {
        let n = self.pot.n();
        let w = &self.deflation;
        let mut b = rhs.clone();
        deflate(&mut b, w);
        let b_norm = b.norm();
        let mut x = SpectralCoeffs::zeros(n)?;
        if b_norm == 0.0 {
            return Ok(CgOutcome {
                solution: x,
                iterations: 0,
                residual: 0.0,
                converged: true,
            });
        }
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        let mut best = (1.0, x.clone());
        let mut iterations = 0;
        while iterations < self.max_iter {
            iterations += 1;
            let q = self.apply_a(&p)?;
            let curvature = p.dot(&q);
            if !(curvature > 0.0) {
                return Err(Error::internal(format!(
                    "non-positive curvature {curvature:.3e} in conjugate gradient at iteration {iterations}"
                )));
            }
            let alpha = rr / curvature;
            axpy(alpha, p.coeffs(), x.coeffs_mut());
            axpy(-alpha, q.coeffs(), r.coeffs_mut());
            deflate(&mut x, w);
            deflate(&mut r, w);
            let rr_new = r.dot(&r);
            let rel = rr_new.sqrt() / b_norm;
            if rel < best.0 {
                best = (rel, x.clone());
            }
            if rel <= self.cfg.tol {
                let true_rel = self.true_residual(&b, &x)? / b_norm;
                if true_rel <= self.cfg.tol {
                    return Ok(CgOutcome {
                        solution: x,
                        iterations,
                        residual: true_rel,
                        converged: true,
                    });
                }
                // Recursive residual drifted; restart from the true one.
                r = self.residual_vector(&b, &x)?;
                p = r.clone();
                rr = r.dot(&r);
                continue;
            }
            let beta = rr_new / rr;
            for (pi, ri) in p.coeffs_mut().iter_mut().zip(r.coeffs()) {
                *pi = ri + beta * *pi;
            }
            rr = rr_new;
        }
        let (_, x) = best;
        let residual = self.true_residual(&b, &x)? / b_norm;
        log::warn!("conjugate gradient stopped at {iterations} iterations, relative residual {residual:.3e}");
        Ok(CgOutcome {
            solution: x,
            iterations,
            residual,
            converged: residual <= self.cfg.tol,
        })
    }

    fn residual_vector(&self, b: &SpectralCoeffs, x: &SpectralCoeffs) -> Result<SpectralCoeffs> {
        let ax = self.apply_a(x)?;
        let mut r = b.clone();
        axpy(-1.0, ax.coeffs(), r.coeffs_mut());
        deflate(&mut r, &self.deflation);
        Ok(r)
    }

    fn true_residual(&self, b: &SpectralCoeffs, x: &SpectralCoeffs) -> Result<f64> {
        Ok(self.residual_vector(b, x)?.norm())
    }

    /// Solves `H_tau psi~ = u~` for a given `u~` and returns `psi~` with the result.
    /// `mass_defect` is echoed into the result unchanged.
    pub fn solve_tilde(
        &self,
        u_tilde: &WorkField,
        mass_defect: f64,
    ) -> Result<(WorkField, NormResult)> {
        let rhs = apply_fractional_laplacian(&self.basis.forward(u_tilde)?, -0.5);
        let cg = self.solve(&rhs)?;
        let psi_tilde = self
            .basis
            .inverse(&apply_fractional_laplacian(&cg.solution, -0.5))?;
        let pairing = inner_product(u_tilde, &psi_tilde)?;
        let value = if pairing >= 0.0 {
            pairing.sqrt()
        } else if pairing >= -NEGATIVE_PAIRING_TOL {
            0.0
        } else {
            return Err(Error::internal(format!(
                "negative energy pairing {pairing:.3e}"
            )));
        };
        let result = NormResult {
            value,
            iterations: cg.iterations,
            residual: cg.residual,
            v_max: self.pot.v_max(),
            mass_defect,
            converged: cg.converged,
        };
        Ok((psi_tilde, result))
    }

    /// Solves `H_tau psi~ = u~` and returns `(u~, psi~, result)`.
    pub fn solve_witten(&self, g: &DensityGrid) -> Result<(WorkField, WorkField, NormResult)> {
        let (u_tilde, mass_defect) = self.perturbation(g)?;
        let (psi_tilde, result) = self.solve_tilde(&u_tilde, mass_defect)?;
        Ok((u_tilde, psi_tilde, result))
    }

    /// `|| (f - g) / f_tau ||` in the weighted negative Sobolev norm of `f_tau`.
    pub fn norm(&self, g: &DensityGrid) -> Result<NormResult> {
        Ok(self.solve_witten(g)?.2)
    }
}

/// Weighted `H^{-1}(d mu_tau)` norm of `(f - g) / f_tau`. A non-converged solve is
/// reported through `NormResult::converged`, carrying the best iterate found.
pub fn weighted_hm1_norm(
    f: &DensityGrid,
    g: &DensityGrid,
    cfg: SolverConfig,
) -> Result<NormResult> {
    WittenSolver::new(f, cfg)?.norm(g)
}

/// Unweighted `H^{-1}(dx)` norm of `f - g`, evaluated in closed form on the cosine coefficients.
pub fn unweighted_hm1_norm(f: &DensityGrid, g: &DensityGrid) -> Result<f64> {
    same_size(f.field(), g.field())?;
    let diff = f.field().zip_with(g.field(), |a, b| a - b)?;
    let defect = integrate(&diff).abs();
    if defect > MASS_DEFECT_TOL {
        return Err(Error::invalid(format!(
            "mass defect {defect:.3e} exceeds {MASS_DEFECT_TOL:e}"
        )));
    }
    let coeffs = CosineBasis::for_size(f.n())?.forward(&diff)?;
    let n = f.n();
    let terms: Vec<f64> = coeffs
        .coeffs()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(idx, a)| a * a / eigenvalue(idx / n, idx % n))
        .collect();
    Ok(crate::grid::pairwise_sum(&terms).sqrt())
}
