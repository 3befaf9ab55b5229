//! Reference values: closed-form W2 formulas, the analytic densities used by the
//! experiments, and a dense direct-solve verifier for small grids.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate, normalize_density, DensityGrid, WorkField};
use crate::potential::{build_potential, DEFAULT_FLOOR};
use crate::solver::{apply_a, deflation_vector, MASS_DEFECT_TOL};
use crate::spectral::{apply_fractional_laplacian, CosineBasis, SpectralCoeffs};

/// Boundary mass above which sampled densities are flagged.
pub const BOUNDARY_MASS_WARN: f64 = 1e-8;

/// Axis-aligned Gaussian: mean and per-axis standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: [f64; 2],
    pub sigma: [f64; 2],
}

impl GaussianSpec {
    pub fn new(mean: [f64; 2], sigma: [f64; 2]) -> Result<Self> {
        if !(sigma[0] > 0.0 && sigma[1] > 0.0) {
            return Err(Error::invalid(format!(
                "standard deviations must be positive, got {sigma:?}"
            )));
        }
        if mean.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite Gaussian parameters"));
        }
        Ok(Self { mean, sigma })
    }

    /// Mean (1/2, 1/2), sigma (1/16, 1/14): the reference Gaussian of the demonstrations.
    pub fn reference() -> Self {
        Self {
            mean: [0.5, 0.5],
            sigma: [1.0 / 16.0, 1.0 / 14.0],
        }
    }

    pub fn shifted(&self, d_mean: [f64; 2], d_sigma: [f64; 2]) -> Result<Self> {
        Self::new(
            [self.mean[0] + d_mean[0], self.mean[1] + d_mean[1]],
            [self.sigma[0] + d_sigma[0], self.sigma[1] + d_sigma[1]],
        )
    }

    pub fn pdf(&self, x1: f64, x2: f64) -> f64 {
        let z1 = (x1 - self.mean[0]) / self.sigma[0];
        let z2 = (x2 - self.mean[1]) / self.sigma[1];
        (-0.5 * (z1 * z1 + z2 * z2)).exp() / (2.0 * PI * self.sigma[0] * self.sigma[1])
    }

    /// Probability mass outside the unit square.
    pub fn boundary_mass(&self) -> f64 {
        let outside = |m: f64, s: f64| {
            0.5 * libm::erfc(m / (s * SQRT_2)) + 0.5 * libm::erfc((1.0 - m) / (s * SQRT_2))
        };
        let o1 = outside(self.mean[0], self.sigma[0]);
        let o2 = outside(self.mean[1], self.sigma[1]);
        o1 + o2 - o1 * o2
    }
}

/// `W2^2 = |m_a - m_b|^2 + |sigma_a - sigma_b|^2` for diagonal Gaussians.
pub fn w2_gaussian_diag(a: &GaussianSpec, b: &GaussianSpec) -> f64 {
    let sq = |x: f64| x * x;
    (sq(a.mean[0] - b.mean[0])
        + sq(a.mean[1] - b.mean[1])
        + sq(a.sigma[0] - b.sigma[0])
        + sq(a.sigma[1] - b.sigma[1]))
    .sqrt()
}

/// `W2(mu, nu_v)` from `W2(mu, nu)` when `nu` has the mean of `mu` and is translated by `v`.
pub fn w2_translate(base: f64, v: [f64; 2]) -> Result<f64> {
    if !(base >= 0.0) {
        return Err(Error::invalid(format!(
            "base distance must be nonnegative, got {base}"
        )));
    }
    Ok((base * base + v[0] * v[0] + v[1] * v[1]).sqrt())
}

/// 1-D W2 between densities sampled on the endpoint-inclusive grid of [0, 1], via
/// quantile functions. The piecewise-linear CDF is inverted cell by cell and the squared
/// quantile gap is integrated with the midpoint rule on `m` points.
pub fn w2_1d_quantile(f: &[f64], g: &[f64], m: usize) -> Result<f64> {
    if f.len() != g.len() || f.len() < 2 {
        return Err(Error::invalid(
            "1-D densities must have equal length of at least 2",
        ));
    }
    if m < 1024 {
        return Err(Error::invalid(format!(
            "need at least 1024 quadrature points, got {m}"
        )));
    }
    let cf = cumulative(f)?;
    let cg = cumulative(g)?;
    let h = 1.0 / (f.len() - 1) as f64;
    let mut acc = 0.0;
    for j in 0..m {
        let t = (j as f64 + 0.5) / m as f64;
        let d = quantile(&cf, t, h) - quantile(&cg, t, h);
        acc += d * d;
    }
    Ok((acc / m as f64).sqrt())
}

fn cumulative(density: &[f64]) -> Result<Vec<f64>> {
    if density.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("1-D density must be finite and nonnegative"));
    }
    let h = 1.0 / (density.len() - 1) as f64;
    let mut cdf = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for w in density.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        cdf.push(acc);
    }
    if (acc - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!(
            "1-D density has mass {acc:.12}, expected 1"
        )));
    }
    Ok(cdf)
}

/// Leftmost `x` with `F(x) >= t` for the piecewise-linear CDF.
fn quantile(cdf: &[f64], t: f64, h: f64) -> f64 {
    let idx = cdf.partition_point(|&c| c < t);
    if idx == 0 {
        return 0.0;
    }
    if idx >= cdf.len() {
        return 1.0;
    }
    let (lo, hi) = (cdf[idx - 1], cdf[idx]);
    let frac = if hi > lo { (t - lo) / (hi - lo) } else { 0.0 };
    ((idx - 1) as f64 + frac) * h
}

/// Smooth transition: 0 for `s <= 0`, 1 for `s >= 1`.
fn smooth_step(s: f64) -> f64 {
    let e = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let a = e(s);
    let b = e(1.0 - s);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Bump supported in [0.1, 0.9], equal to 1 on [0.2, 0.8].
pub fn bump_1d(t: f64) -> f64 {
    smooth_step((t - 0.1) / 0.1) * smooth_step((0.9 - t) / 0.1)
}

/// Unnormalized striped density `exp(9 x1) (cos(16 pi x1) + 1) zeta(x1) zeta(x2)`.
fn striped_raw(x1: f64, x2: f64) -> f64 {
    (9.0 * x1).exp() * ((16.0 * PI * x1).cos() + 1.0) * bump_1d(x1) * bump_1d(x2)
}

/// Analytic densities the experiments are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyticDensity {
    Gaussian(GaussianSpec),
    Striped,
}

impl AnalyticDensity {
    /// Unnormalized value at a point.
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            AnalyticDensity::Gaussian(spec) => spec.pdf(x1, x2),
            AnalyticDensity::Striped => striped_raw(x1, x2),
        }
    }
}

/// A sampled, normalized density with its mass outside the unit square.
#[derive(Debug, Clone)]
pub struct SampledDensity {
    pub grid: DensityGrid,
    pub boundary_mass: f64,
}

impl SampledDensity {
    pub fn warned(&self) -> bool {
        self.boundary_mass > BOUNDARY_MASS_WARN
    }

    pub fn into_grid(self) -> DensityGrid {
        self.grid
    }
}

fn sample(density: &AnalyticDensity, n: usize, shift: [f64; 2]) -> Result<SampledDensity> {
    let raw = DensityGrid::from_fn(n, |x1, x2| density.eval(x1 + shift[0], x2 + shift[1]))?;
    let boundary_mass = match density {
        AnalyticDensity::Gaussian(spec) => spec
            .shifted([-shift[0], -shift[1]], [0.0, 0.0])?
            .boundary_mass(),
        AnalyticDensity::Striped => {
            let lo = 0.1 - shift[0].abs().max(shift[1].abs());
            if lo >= 0.0 && shift.iter().all(|s| s.abs() <= 0.1) {
                0.0
            } else {
                let home = integrate(&WorkField::from_fn(n, striped_raw)?);
                (1.0 - raw.mass() / home).max(0.0)
            }
        }
    };
    let grid = normalize_density(&raw)?;
    let out = SampledDensity {
        grid,
        boundary_mass,
    };
    if out.warned() {
        log::warn!(
            "sampled density loses {:.3e} of its mass outside the unit square",
            boundary_mass
        );
    }
    Ok(out)
}

pub fn make_gaussian_grid(spec: &GaussianSpec, n: usize) -> Result<SampledDensity> {
    sample(&AnalyticDensity::Gaussian(*spec), n, [0.0, 0.0])
}

pub fn make_striped_bump_grid(n: usize) -> Result<SampledDensity> {
    if n < 129 {
        return Err(Error::invalid(format!(
            "striped density needs n >= 129 to resolve its stripes, got {n}"
        )));
    }
    sample(&AnalyticDensity::Striped, n, [0.0, 0.0])
}

/// Re-evaluates `f(x + v)` on the grid and normalizes.
pub fn make_translated_grid(
    base: &AnalyticDensity,
    v: [f64; 2],
    n: usize,
) -> Result<SampledDensity> {
    sample(base, n, v)
}

/// Smooth positive density built from the cosine modes with `k1, k2 <= 3`, with
/// amplitudes drawn from `seed` and damped like `1 / (1 + k1^2 + k2^2)`. Values lie
/// in `[0.5, 1.5]` before normalization.
pub fn random_smooth_density(n: usize, seed: u64) -> Result<DensityGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps: Vec<(f64, f64, f64)> = (0..4)
        .flat_map(|k1| (0..4).map(move |k2| (k1 as f64, k2 as f64)))
        .filter(|&(k1, k2)| k1 + k2 > 0.0)
        .map(|(k1, k2)| {
            (
                k1,
                k2,
                rng.random_range(-1.0..1.0) / (1.0 + k1 * k1 + k2 * k2),
            )
        })
        .collect();
    let total: f64 = amps.iter().map(|a| a.2.abs()).sum();
    let grid = DensityGrid::from_fn(n, |x1, x2| {
        let s: f64 = amps
            .iter()
            .map(|&(k1, k2, a)| a * (PI * k1 * x1).cos() * (PI * k2 * x2).cos())
            .sum();
        1.0 + 0.5 * s / total
    })?;
    normalize_density(&grid)
}

/// Brute-force verifier for the conjugate-gradient path on small grids: assembles `A`
/// column by column and solves `(A + w w^T) Psi = U` directly.
pub fn dense_norm_oracle(f: &DensityGrid, g: &DensityGrid, tau: f64) -> Result<f64> {
    let n = f.n();
    if n > 33 {
        return Err(Error::invalid(format!(
            "dense oracle supports n <= 33, got {n}"
        )));
    }
    let pot = build_potential(f, tau, DEFAULT_FLOOR)?;
    let basis = CosineBasis::for_size(n)?;
    let w = deflation_vector(&pot)?;
    let dim = n * n;

    let diff = f.field().zip_with(g.field(), |a, b| a - b)?;
    if integrate(&diff).abs() > MASS_DEFECT_TOL {
        return Err(Error::invalid("mass defect too large"));
    }
    let u_tilde = diff.zip_with(pot.sqrt_f_tau(), |d, s| d / s)?;
    let mut rhs = DVector::from_vec(
        apply_fractional_laplacian(&basis.forward(&u_tilde)?, -0.5).into_coeffs(),
    );
    let wv = DVector::from_vec(w.coeffs().to_vec());
    let along = rhs.dot(&wv);
    rhs -= &wv * along;
    if rhs.norm() == 0.0 {
        return Ok(0.0);
    }

    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut unit = vec![0.0; dim];
    for col in 0..dim {
        unit[col] = 1.0;
        let image = apply_a(&pot, &SpectralCoeffs::new(n, unit.clone())?)?;
        a.set_column(col, &DVector::from_column_slice(image.coeffs()));
        unit[col] = 0.0;
    }
    let sym = (&a + a.transpose()) * 0.5;
    let pinned = sym + &wv * wv.transpose();
    let psi = match pinned.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => pinned
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::internal("dense system is singular"))?,
    };
    let pairing = rhs.dot(&psi);
    if pairing < -1e-14 {
        return Err(Error::internal(format!(
            "dense oracle produced negative pairing {pairing:e}"
        )));
    }
    Ok(pairing.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_w2_examples() {
        let f = GaussianSpec::reference();
        assert_eq!(w2_gaussian_diag(&f, &f), 0.0);
        let g = f.shifted([0.001, 0.002], [0.001, 0.003]).unwrap();
        let h = f.shifted([0.003, -0.002], [-0.001, 0.002]).unwrap();
        assert_abs_diff_eq!(w2_gaussian_diag(&g, &h), 2.5e-5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(w2_gaussian_diag(&f, &g), 1.5e-5f64.sqrt(), epsilon = 1e-15);
        let t = f.shifted([0.003, 0.004], [0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w2_gaussian_diag(&f, &t), 5e-3, epsilon = 1e-15);
        assert!(GaussianSpec::new([0.5, 0.5], [0.0, 0.1]).is_err());
    }

    #[test]
    fn translation_formula() {
        assert_abs_diff_eq!(
            w2_translate(0.0, [3e-3, 4e-3]).unwrap(),
            5e-3,
            epsilon = 1e-16
        );
        assert_abs_diff_eq!(
            w2_translate(5e-3, [0.0, 0.0]).unwrap(),
            5e-3,
            epsilon = 1e-16
        );
        assert!(w2_translate(-1.0, [0.0, 0.0]).is_err());
        // Two steps of v along one axis, starting from a measure with the same mean.
        let v = 2e-3;
        let once = w2_translate(0.0, [v, 0.0]).unwrap();
        assert_abs_diff_eq!(once, v, epsilon = 1e-18);
        let base = GaussianSpec::reference();
        let moved = base.shifted([2.0 * v, 0.0], [0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            w2_gaussian_diag(&base, &moved),
            w2_translate(0.0, [2.0 * v, 0.0]).unwrap(),
            epsilon = 1e-16
        );
    }

    fn gauss_1d(len: usize, mu: f64, sigma: f64) -> Vec<f64> {
        let h = 1.0 / (len - 1) as f64;
        let raw: Vec<f64> = (0..len)
            .map(|i| (-0.5 * ((i as f64 * h - mu) / sigma).powi(2)).exp())
            .collect();
        let mass: f64 = raw.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        raw.into_iter().map(|v| v / mass).collect()
    }

    #[test]
    fn quantile_w2_gaussians() {
        let f = gauss_1d(4097, 0.5, 0.1);
        assert_abs_diff_eq!(w2_1d_quantile(&f, &f, 4096).unwrap(), 0.0, epsilon = 1e-15);
        let g = gauss_1d(4097, 0.52, 0.1);
        assert_abs_diff_eq!(w2_1d_quantile(&f, &g, 4096).unwrap(), 0.02, epsilon = 1e-4);
        let g = gauss_1d(4097, 0.5, 0.12);
        assert_abs_diff_eq!(w2_1d_quantile(&f, &g, 4096).unwrap(), 0.02, epsilon = 1e-4);
        assert!(w2_1d_quantile(&f, &g, 100).is_err());
        let unnormalized: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        assert!(w2_1d_quantile(&unnormalized, &g, 4096).is_err());
    }

    #[test]
    fn quantile_agrees_with_closed_form_sweep() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (m1, m2) = (rng.random_range(0.4..0.6), rng.random_range(0.4..0.6));
            let (s1, s2) = (rng.random_range(0.05..0.1), rng.random_range(0.05..0.1));
            let q = w2_1d_quantile(&gauss_1d(4097, m1, s1), &gauss_1d(4097, m2, s2), 8192).unwrap();
            let closed = ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt();
            assert_abs_diff_eq!(q, closed, epsilon = 1e-4);
        }
    }

    #[test]
    fn gaussian_grid_properties() {
        let sym = GaussianSpec::new([0.5, 0.5], [0.08, 0.06]).unwrap();
        let s = make_gaussian_grid(&sym, 65).unwrap();
        let n = 65;
        for i in 0..n {
            for j in 0..n {
                assert_abs_diff_eq!(
                    s.grid.field().get(i, j),
                    s.grid.field().get(n - 1 - i, n - 1 - j),
                    epsilon = 1e-14
                );
            }
        }
        let r = make_gaussian_grid(&GaussianSpec::reference(), 257).unwrap();
        assert_abs_diff_eq!(r.grid.mass(), 1.0, epsilon = 1e-12);
        assert!(!r.warned());
        let wide =
            make_gaussian_grid(&GaussianSpec::new([0.5, 0.5], [0.25, 0.25]).unwrap(), 33).unwrap();
        assert!(wide.warned());
    }

    fn argmax(grid: &DensityGrid) -> (usize, usize) {
        let n = grid.n();
        let idx = grid
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        (idx / n, idx % n)
    }

    #[test]
    fn gaussian_peak_and_translation() {
        let n = 129;
        let spec = GaussianSpec::new([0.4, 0.55], [0.07, 0.05]).unwrap();
        let grid = make_gaussian_grid(&spec, n).unwrap().grid;
        let nearest = |m: f64| (m * (n - 1) as f64).round() as usize;
        assert_eq!(argmax(&grid), (nearest(0.4), nearest(0.55)));

        let base = AnalyticDensity::Gaussian(spec);
        let same = make_translated_grid(&base, [0.0, 0.0], n).unwrap().grid;
        assert_eq!(same, grid);
        let delta = 5.0 / (n - 1) as f64;
        let moved = make_translated_grid(&base, [delta, 0.0], n).unwrap().grid;
        let (i0, j0) = argmax(&grid);
        let (i1, j1) = argmax(&moved);
        assert_eq!(i0 - i1, (delta * (n - 1) as f64).round() as usize);
        assert_eq!(j0, j1);
        assert_abs_diff_eq!(moved.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn striped_density_structure() {
        let n = 257;
        let s = make_striped_bump_grid(n).unwrap();
        assert_abs_diff_eq!(s.grid.mass(), 1.0, epsilon = 1e-12);
        let h = 1.0 / (n - 1) as f64;
        for i in 0..n {
            for j in 0..n {
                let (x1, x2) = (i as f64 * h, j as f64 * h);
                let outside = !(0.1..=0.9).contains(&x1) || !(0.1..=0.9).contains(&x2);
                if outside {
                    assert_eq!(s.grid.field().get(i, j), 0.0);
                }
            }
        }
        // Minima of the stripe factor: sign changes of its derivative on a fine scan.
        let factor = |x: f64| (16.0 * PI * x).cos() + 1.0;
        let m = 100_000;
        let mut minima = 0;
        for k in 1..m {
            let (a, b, c) = (
                factor((k - 1) as f64 / m as f64),
                factor(k as f64 / m as f64),
                factor((k + 1) as f64 / m as f64),
            );
            if b < a && b <= c {
                minima += 1;
            }
        }
        assert_eq!(minima, 8);
        assert!(make_striped_bump_grid(65).is_err());
    }

    #[test]
    fn bump_profile() {
        assert_eq!(bump_1d(0.05), 0.0);
        assert_eq!(bump_1d(0.95), 0.0);
        assert_eq!(bump_1d(0.5), 1.0);
        assert_eq!(bump_1d(0.2), 1.0);
        assert!(bump_1d(0.15) > 0.0 && bump_1d(0.15) < 1.0);
    }
}
