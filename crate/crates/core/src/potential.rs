//! The regularized Witten potential.
//!
//! Given a density `f` and a heat time `tau`, the smoothed amplitude is
//! `s = exp(tau Delta) sqrt(f)`, clamped below at `floor * max(s)`. Then
//! `f_tau = s^2` and `V_tau = (Delta s) / s`, so that `H_tau = -Delta + V_tau`
//! annihilates `s` exactly at the discrete level.

use crate::error::{Error, Result};
use crate::grid::{integrate, same_size, DensityGrid, WorkField};
use crate::spectral::{apply_laplacian, heat_semigroup, CosineBasis};

/// Default positivity floor on the smoothed amplitude, relative to its maximum.
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Mass tolerance accepted for densities that were not normalized in-process.
pub(crate) const MASS_TOL: f64 = 1e-10;

pub(crate) fn check_normalized(f: &DensityGrid, what: &str) -> Result<()> {
    if f.is_normalized() {
        return Ok(());
    }
    let mass = f.mass();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::invalid(format!(
            "{what} is not normalized (mass {mass:.15})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct WittenPotential {
    tau: f64,
    floor: f64,
    v: WorkField,
    f_tau: DensityGrid,
    sqrt_f_tau: WorkField,
    v_max: f64,
    /// Number of grid points raised to the floor.
    clamped: usize,
}

impl WittenPotential {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// `V_tau` on the grid.
    pub fn v(&self) -> &WorkField {
        &self.v
    }

    pub fn f_tau(&self) -> &DensityGrid {
        &self.f_tau
    }

    /// `f_tau^{1/2}`, the null direction of `H_tau`.
    pub fn sqrt_f_tau(&self) -> &WorkField {
        &self.sqrt_f_tau
    }

    /// `max |V_tau|`.
    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// `max(max V_tau, 0)`.
    pub fn v_max_positive(&self) -> f64 {
        self.v.values().iter().cloned().fold(0.0, f64::max)
    }

    pub fn clamped_points(&self) -> usize {
        self.clamped
    }

    pub fn n(&self) -> usize {
        self.v.n()
    }

    /// `H_tau psi = -Delta psi + V_tau psi`, evaluated spectrally.
    pub fn apply_h(&self, psi: &WorkField) -> Result<WorkField> {
        same_size(psi, &self.v)?;
        let basis = CosineBasis::for_size(self.n())?;
        let lap = basis.inverse(&apply_laplacian(&basis.forward(psi)?))?;
        let out = lap
            .values()
            .iter()
            .zip(psi.values())
            .zip(self.v.values())
            .map(|((&l, &p), &v)| -l + v * p)
            .collect();
        WorkField::new(self.n(), out)
    }

    /// `||H_tau f_tau^{1/2}|| / ||Delta f_tau^{1/2}||` in trapezoid L^2.
    pub fn null_residual(&self) -> Result<f64> {
        let basis = CosineBasis::for_size(self.n())?;
        let lap = basis.inverse(&apply_laplacian(&basis.forward(&self.sqrt_f_tau)?))?;
        let h = self.apply_h(&self.sqrt_f_tau)?;
        let num = integrate(&h.zip_with(&h, |a, b| a * b)?).sqrt();
        let den = integrate(&lap.zip_with(&lap, |a, b| a * b)?).sqrt();
        Ok(if den == 0.0 { num } else { num / den })
    }
}

/// Builds `V_tau` and its companions from a normalized density.
pub fn build_potential(f: &DensityGrid, tau: f64, floor: f64) -> Result<WittenPotential> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::invalid(format!(
            "positivity floor must be positive, got {floor}"
        )));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "heat time must be finite and nonnegative, got {tau}"
        )));
    }
    check_normalized(f, "reference density")?;
    let n = f.n();
    let basis = CosineBasis::for_size(n)?;
    let amplitude = f.field().map(f64::sqrt)?;
    let smoothed = if tau == 0.0 {
        amplitude
    } else {
        basis.inverse(&heat_semigroup(&basis.forward(&amplitude)?, tau)?)?
    };
    let peak = smoothed
        .values()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::internal("smoothed amplitude has no positive values"));
    }
    let lower = floor * peak;
    let mut clamped = 0;
    let s: Vec<f64> = smoothed
        .values()
        .iter()
        .map(|&v| {
            if v < lower {
                clamped += 1;
                lower
            } else {
                v
            }
        })
        .collect();
    let s = WorkField::new(n, s)?;
    let lap = basis.inverse(&apply_laplacian(&basis.forward(&s)?))?;
    let v = lap.zip_with(&s, |l, a| l / a)?;
    let v_max = v.max_abs();
    let f_tau = DensityGrid::from_field(s.map(|a| a * a)?)?;
    Ok(WittenPotential {
        tau,
        floor,
        v,
        f_tau,
        sqrt_f_tau: s,
        v_max,
        clamped,
    })
}

/// Maximum pointwise gap, over points with non-negligible density, between `V_tau` and the alternate form
/// `V = |grad F|^2 / 4 - Delta F / 2` with `F = -log f_tau`, where the
/// derivatives of `F` are taken spectrally.
///
/// `F` is expanded through the derivatives of `f_tau` (`grad F = -grad f_tau / f_tau`,
/// `Delta F = -Delta f_tau / f_tau + |grad f_tau|^2 / f_tau^2`), which keeps the
/// expansion on a Neumann-compatible function.
///
/// Points where `f_tau < ALT_FORM_CUTOFF * max f_tau` are skipped: there the floor and the
/// tails put both forms at the mercy of rounding in `Delta s / s`.
pub fn potential_alternate_form_check(f: &DensityGrid, tau: f64) -> Result<f64> {
    let pot = build_potential(f, tau, DEFAULT_FLOOR)?;
    alternate_form_gap_where(&pot, ALT_FORM_CUTOFF)
}

/// Relative density below which the alternate-form diagnostic ignores a point.
pub const ALT_FORM_CUTOFF: f64 = 1e-8;

/// Maximum gap over the whole grid, floored points included.
pub fn alternate_form_gap(pot: &WittenPotential) -> Result<f64> {
    alternate_form_gap_where(pot, 0.0)
}

/// As [`alternate_form_gap`], restricted to points with `f_tau >= rel_threshold * max f_tau`.
pub fn alternate_form_gap_where(pot: &WittenPotential, rel_threshold: f64) -> Result<f64> {
    let n = pot.n();
    let basis = CosineBasis::for_size(n)?;
    let ft = pot.f_tau().field();
    let coeffs = basis.forward(ft)?;
    let (gx, gy) = basis.gradient(&coeffs)?;
    let lap = basis.inverse(&apply_laplacian(&coeffs))?;
    let cutoff = rel_threshold * ft.max_abs();
    let mut gap = 0.0f64;
    for idx in 0..n * n {
        let fv = ft.values()[idx];
        if fv < cutoff {
            continue;
        }
        let grad_f_sq = gx.values()[idx].powi(2) + gy.values()[idx].powi(2);
        let grad_big_f_sq = grad_f_sq / (fv * fv);
        let lap_big_f = -lap.values()[idx] / fv + grad_big_f_sq;
        let alt = 0.25 * grad_big_f_sq - 0.5 * lap_big_f;
        gap = gap.max((alt - pot.v().values()[idx]).abs());
    }
    Ok(gap)
}
