//! Neumann cosine basis on the unit square and the diagonal operators built on it.
//!
//! The basis functions are `phi_k(x) = c_k1 c_k2 cos(pi k1 x1) cos(pi k2 x2)` for
//! `0 <= k1, k2 <= n - 1`. With `c_0 = c_{n-1} = 1` and `c_k = sqrt(2)` otherwise
//! they are exactly orthonormal under the trapezoid rule on the endpoint-inclusive
//! grid, so the forward transform is an isometry from (grid, trapezoid L^2) onto
//! (coefficients, Euclidean). The last index is the Nyquist mode `(-1)^i`,
//! which has unit trapezoid norm without the `sqrt(2)`.
//!
//! Eigenvalues of `-Delta` are `pi^2 (k1^2 + k2^2)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustdct::{Dct1, DctPlanner, Dst1};

use crate::error::{Error, Result};
use crate::grid::{check_size, WorkField};

/// Tag recorded in reports for the eigenvalue convention in use.
pub const EIGENVALUE_CONVENTION: &str = "pi2(k1^2+k2^2)";

/// Coefficients in the orthonormal cosine basis, `coeffs[k1 * n + k2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    n: usize,
    coeffs: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn new(n: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_size(n)?;
        if coeffs.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                n * n,
                coeffs.len()
            )));
        }
        Ok(Self { n, coeffs })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![0.0; n * n])
    }

    pub(crate) fn from_raw(n: usize, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), n * n);
        Self { n, coeffs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn get(&self, k1: usize, k2: usize) -> f64 {
        self.coeffs[k1 * self.n + k2]
    }

    /// Euclidean pairing; equals the trapezoid L^2 pairing of the synthesized fields.
    pub fn dot(&self, other: &SpectralCoeffs) -> f64 {
        debug_assert_eq!(self.n, other.n);
        crate::grid::pairwise_sum(
            &self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a * b)
                .collect::<Vec<_>>(),
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn map_modes(&self, f: impl Fn(usize, usize, f64) -> f64) -> SpectralCoeffs {
        let n = self.n;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &a)| f(idx / n, idx % n, a))
            .collect();
        SpectralCoeffs { n, coeffs }
    }
}

/// `lambda(k1, k2) = pi^2 (k1^2 + k2^2)`.
#[inline]
pub fn eigenvalue(k1: usize, k2: usize) -> f64 {
    PI * PI * ((k1 * k1 + k2 * k2) as f64)
}

/// Tabulated Neumann eigenvalues of `-Delta` for a grid size.
#[derive(Debug, Clone)]
pub struct EigenvalueTable {
    n: usize,
    lambda: Vec<f64>,
}

impl EigenvalueTable {
    pub fn new(n: usize) -> Result<Self> {
        check_size(n)?;
        let lambda = (0..n * n).map(|idx| eigenvalue(idx / n, idx % n)).collect();
        Ok(Self { n, lambda })
    }

    pub fn get(&self, k1: usize, k2: usize) -> f64 {
        self.lambda[k1 * self.n + k2]
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    /// Largest eigenvalue, `2 pi^2 (n - 1)^2`.
    pub fn max(&self) -> f64 {
        max_eigenvalue(self.n)
    }
}

pub fn max_eigenvalue(n: usize) -> f64 {
    let m = (n - 1) as f64;
    2.0 * PI * PI * m * m
}

/// Planned transforms for one grid size.
pub struct CosineBasis {
    n: usize,
    dct: Arc<dyn Dct1<f64>>,
    dst: Arc<dyn Dst1<f64>>,
    /// Per-axis factor mapping raw DCT-I output to orthonormal coefficients.
    forward_scale: Vec<f64>,
    /// Per-axis factor mapping coefficients to raw DCT-I input for synthesis.
    inverse_scale: Vec<f64>,
    /// Orthonormalization constants `c_k`.
    norm_const: Vec<f64>,
}

impl std::fmt::Debug for CosineBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosineBasis").field("n", &self.n).finish()
    }
}

#[derive(Clone, Copy)]
enum LineOp {
    Cosine,
    Sine,
}

impl CosineBasis {
    fn build(n: usize) -> Result<Self> {
        check_size(n)?;
        let mut planner = DctPlanner::new();
        let dct = planner.plan_dct1(n);
        let dst = planner.plan_dst1(n - 2);
        let m = (n - 1) as f64;
        let sqrt2 = std::f64::consts::SQRT_2;
        let is_end = |k: usize| k == 0 || k == n - 1;
        let norm_const = (0..n)
            .map(|k| if is_end(k) { 1.0 } else { sqrt2 })
            .collect();
        let forward_scale = (0..n)
            .map(|k| if is_end(k) { 1.0 / m } else { sqrt2 / m })
            .collect();
        let inverse_scale = (0..n)
            .map(|k| if is_end(k) { 2.0 } else { sqrt2 })
            .collect();
        Ok(Self {
            n,
            dct,
            dst,
            forward_scale,
            inverse_scale,
            norm_const,
        })
    }

    /// Shared, lazily planned basis for grid size `n`.
    pub fn for_size(n: usize) -> Result<Arc<CosineBasis>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<CosineBasis>>>> = OnceLock::new();
        check_size(n)?;
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("basis cache poisoned");
        if let Some(b) = guard.get(&n) {
            return Ok(Arc::clone(b));
        }
        let basis = Arc::new(Self::build(n)?);
        guard.insert(n, Arc::clone(&basis));
        Ok(basis)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn lines(&self, data: &mut [f64], op: LineOp) {
        let n = self.n;
        match op {
            LineOp::Cosine => {
                let len = self.dct.get_scratch_len();
                data.par_chunks_mut(n).for_each_init(
                    || vec![0.0; len],
                    |scratch, line| self.dct.process_dct1_with_scratch(line, scratch),
                );
            }
            LineOp::Sine => {
                let len = self.dst.get_scratch_len();
                data.par_chunks_mut(n).for_each_init(
                    || vec![0.0; len],
                    |scratch, line| {
                        self.dst
                            .process_dst1_with_scratch(&mut line[1..n - 1], scratch);
                        line[0] = 0.0;
                        line[n - 1] = 0.0;
                    },
                );
            }
        }
    }

    /// Orthonormal double-cosine coefficients of the grid samples.
    pub fn forward(&self, field: &WorkField) -> Result<SpectralCoeffs> {
        self.check(field.n())?;
        let n = self.n;
        let mut data = field.values().to_vec();
        self.lines(&mut data, LineOp::Cosine);
        transpose(&mut data, n);
        self.lines(&mut data, LineOp::Cosine);
        transpose(&mut data, n);
        for (idx, v) in data.iter_mut().enumerate() {
            *v *= self.forward_scale[idx / n] * self.forward_scale[idx % n];
        }
        Ok(SpectralCoeffs::from_raw(n, data))
    }

    /// Synthesizes grid samples from coefficients.
    pub fn inverse(&self, coeffs: &SpectralCoeffs) -> Result<WorkField> {
        self.check(coeffs.n())?;
        let n = self.n;
        let mut data: Vec<f64> = coeffs
            .coeffs()
            .iter()
            .enumerate()
            .map(|(idx, &a)| a * self.inverse_scale[idx / n] * self.inverse_scale[idx % n])
            .collect();
        self.lines(&mut data, LineOp::Cosine);
        transpose(&mut data, n);
        self.lines(&mut data, LineOp::Cosine);
        transpose(&mut data, n);
        finite_field(n, data)
    }

    /// Spectral gradient `(d/dx1, d/dx2)` of the field represented by `coeffs`, on the grid.
    pub fn gradient(&self, coeffs: &SpectralCoeffs) -> Result<(WorkField, WorkField)> {
        self.check(coeffs.n())?;
        let n = self.n;
        let c = &self.norm_const;
        // Synthesize sum_k a_k c_k1 c_k2 (-pi k_axis) sin(...) cos(...): sine lines along the
        // differentiated axis, cosine lines along the other. The DCT-I synthesis needs the
        // endpoint doubling; DST-I takes interior modes as they are.
        let deriv = |axis: usize| -> Result<WorkField> {
            let mut data: Vec<f64> = (0..n * n)
                .map(|idx| {
                    let (k1, k2) = (idx / n, idx % n);
                    let (k_diff, k_cos) = if axis == 0 { (k1, k2) } else { (k2, k1) };
                    let endpoint_double = if k_cos == 0 || k_cos == n - 1 {
                        2.0
                    } else {
                        1.0
                    };
                    coeffs.get(k1, k2) * c[k1] * c[k2] * (-PI * k_diff as f64) * endpoint_double
                })
                .collect();
            // Rows of `data` run along k2 (the x2 axis).
            if axis == 0 {
                self.lines(&mut data, LineOp::Cosine);
                transpose(&mut data, n);
                self.lines(&mut data, LineOp::Sine);
                transpose(&mut data, n);
            } else {
                self.lines(&mut data, LineOp::Sine);
                transpose(&mut data, n);
                self.lines(&mut data, LineOp::Cosine);
                transpose(&mut data, n);
            }
            finite_field(n, data)
        };
        Ok((deriv(0)?, deriv(1)?))
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.n {
            return Err(Error::invalid(format!(
                "grid size {n} does not match basis size {}",
                self.n
            )));
        }
        Ok(())
    }
}

fn finite_field(n: usize, data: Vec<f64>) -> Result<WorkField> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::internal(
            "spectral synthesis produced non-finite values",
        ));
    }
    Ok(WorkField::from_raw(n, data))
}

fn transpose(data: &mut [f64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

pub fn dct_forward(field: &WorkField) -> Result<SpectralCoeffs> {
    CosineBasis::for_size(field.n())?.forward(field)
}

pub fn dct_inverse(coeffs: &SpectralCoeffs) -> Result<WorkField> {
    CosineBasis::for_size(coeffs.n())?.inverse(coeffs)
}

/// `(-Delta)^gamma` with the zero mode passed through unchanged, so the operator is
/// invertible for every real `gamma`.
pub fn apply_fractional_laplacian(coeffs: &SpectralCoeffs, gamma: f64) -> SpectralCoeffs {
    if gamma == 0.0 {
        return coeffs.clone();
    }
    coeffs.map_modes(|k1, k2, a| {
        if k1 == 0 && k2 == 0 {
            a
        } else {
            a * eigenvalue(k1, k2).powf(gamma)
        }
    })
}

/// The true Laplacian `Delta`: mode `k` scaled by `-lambda_k`, constants mapped to zero.
pub fn apply_laplacian(coeffs: &SpectralCoeffs) -> SpectralCoeffs {
    coeffs.map_modes(|k1, k2, a| -eigenvalue(k1, k2) * a)
}

/// Neumann heat semigroup: mode `k` scaled by `exp(-tau lambda_k)`.
pub fn heat_semigroup(coeffs: &SpectralCoeffs, tau: f64) -> Result<SpectralCoeffs> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "heat time must be finite and nonnegative, got {tau}"
        )));
    }
    if tau == 0.0 {
        return Ok(coeffs.clone());
    }
    Ok(coeffs.map_modes(|k1, k2, a| {
        if k1 == 0 && k2 == 0 {
            a
        } else {
            a * (-tau * eigenvalue(k1, k2)).exp()
        }
    }))
}

/// Projection onto constants: keeps only the `(0, 0)` coefficient.
pub fn project_constant(coeffs: &SpectralCoeffs) -> SpectralCoeffs {
    coeffs.map_modes(|k1, k2, a| if k1 == 0 && k2 == 0 { a } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, WorkField};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::SQRT_2;

    fn random_field(n: usize, seed: u64) -> WorkField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WorkField::new(n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct O(n^4) evaluation of the orthonormal coefficients by trapezoid quadrature.
    fn naive_forward(field: &WorkField) -> Vec<f64> {
        let n = field.n();
        let w = crate::grid::trapezoid_weights(n);
        let m = (n - 1) as f64;
        let c = |k: usize| if k == 0 || k == n - 1 { 1.0 } else { SQRT_2 };
        let mut out = vec![0.0; n * n];
        for k1 in 0..n {
            for k2 in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let phi = c(k1)
                            * c(k2)
                            * (PI * (k1 * i) as f64 / m).cos()
                            * (PI * (k2 * j) as f64 / m).cos();
                        s += w[i] * w[j] * field.get(i, j) * phi;
                    }
                }
                out[k1 * n + k2] = s;
            }
        }
        out
    }

    #[test]
    fn forward_matches_quadrature_oracle() {
        let f = random_field(17, 1);
        let fast = dct_forward(&f).unwrap();
        let slow = naive_forward(&f);
        for (a, b) in fast.coeffs().iter().zip(&slow) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn constant_and_single_mode() {
        let n = 33;
        let one = WorkField::from_fn(n, |_, _| 1.0).unwrap();
        let c = dct_forward(&one).unwrap();
        for (idx, &a) in c.coeffs().iter().enumerate() {
            assert_abs_diff_eq!(a, if idx == 0 { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
        let mode = WorkField::from_fn(n, |x, _| SQRT_2 * (PI * x).cos()).unwrap();
        let c = dct_forward(&mode).unwrap();
        for (idx, &a) in c.coeffs().iter().enumerate() {
            assert_abs_diff_eq!(a, if idx == n { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
        let back = dct_inverse(&c).unwrap();
        for (a, b) in back.values().iter().zip(mode.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let back = dct_inverse(&dct_forward(&one).unwrap()).unwrap();
        for &v in back.values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for (n, seed) in [(9, 2), (65, 3), (257, 4)] {
            let f = random_field(n, seed);
            let c = dct_forward(&f).unwrap();
            let back = dct_inverse(&c).unwrap();
            let err = back
                .values()
                .iter()
                .zip(f.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-12 * f.max_abs(), "n={n} round trip error {err:e}");
            let energy = integrate(&f.zip_with(&f, |a, b| a * b).unwrap());
            assert!((c.dot(&c) - energy).abs() <= 1e-10 * energy);
        }
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(CosineBasis::for_size(16).is_err());
        let c = SpectralCoeffs::zeros(9).unwrap();
        assert!(CosineBasis::for_size(17).unwrap().inverse(&c).is_err());
    }

    #[test]
    fn eigenvalue_table() {
        let t = EigenvalueTable::new(17).unwrap();
        assert_eq!(t.get(0, 0), 0.0);
        assert!(t.values()[1..].iter().all(|&l| l > 0.0));
        assert_abs_diff_eq!(
            t.values().iter().cloned().fold(0.0, f64::max),
            t.max(),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(t.get(1, 0), PI * PI);
    }

    #[test]
    fn fractional_laplacian_examples() {
        let n = 33;
        let one = dct_forward(&WorkField::from_fn(n, |_, _| 1.0).unwrap()).unwrap();
        for g in [-1.0, -0.5, 0.5, 2.0] {
            assert_eq!(apply_fractional_laplacian(&one, g).get(0, 0), one.get(0, 0));
        }
        let mode =
            dct_forward(&WorkField::from_fn(n, |x, _| SQRT_2 * (PI * x).cos()).unwrap()).unwrap();
        let out = dct_inverse(&apply_fractional_laplacian(&mode, 1.0)).unwrap();
        let expected = WorkField::from_fn(n, |x, _| PI * PI * SQRT_2 * (PI * x).cos()).unwrap();
        for (a, b) in out.values().iter().zip(expected.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn fractional_laplacian_composition() {
        let f = random_field(65, 5);
        let c = dct_forward(&f).unwrap();
        let gammas = [-1.0, -0.5, 0.5, 1.0];
        for &g1 in &gammas {
            for &g2 in &gammas {
                let lhs = apply_fractional_laplacian(&apply_fractional_laplacian(&c, g1), g2);
                let rhs = apply_fractional_laplacian(&c, g1 + g2);
                let scale = rhs.norm().max(c.norm());
                let diff = lhs
                    .coeffs()
                    .iter()
                    .zip(rhs.coeffs())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(diff <= 1e-11 * scale, "gamma {g1}+{g2}: {diff:e}");
            }
        }
        let back = dct_inverse(&apply_fractional_laplacian(
            &apply_fractional_laplacian(&c, 0.5),
            -0.5,
        ))
        .unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn heat_examples() {
        let n = 33;
        let f = random_field(n, 6);
        let c = dct_forward(&f).unwrap();
        assert_eq!(heat_semigroup(&c, 0.0).unwrap(), c);
        assert!(heat_semigroup(&c, -1e-3).is_err());

        let mode =
            dct_forward(&WorkField::from_fn(n, |x, _| SQRT_2 * (PI * x).cos()).unwrap()).unwrap();
        let decayed = heat_semigroup(&mode, 1.0).unwrap();
        assert_abs_diff_eq!(decayed.get(1, 0), (-PI * PI).exp(), epsilon = 1e-14);

        let two_step = heat_semigroup(&heat_semigroup(&c, 1e-3).unwrap(), 2e-3).unwrap();
        let one_step = heat_semigroup(&c, 3e-3).unwrap();
        for (a, b) in two_step.coeffs().iter().zip(one_step.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let smoothed = heat_semigroup(&c, 1e-2).unwrap();
        assert_eq!(smoothed.get(0, 0), c.get(0, 0));
        assert!(smoothed.norm() <= c.norm());
    }

    #[test]
    fn constant_projection() {
        let f = random_field(17, 7);
        let c = dct_forward(&f).unwrap();
        let p = project_constant(&c);
        assert_eq!(project_constant(&p), p);
        assert_abs_diff_eq!(p.get(0, 0), integrate(&f), epsilon = 1e-14);
        let zero_mean = SpectralCoeffs::new(
            17,
            c.coeffs()
                .iter()
                .enumerate()
                .map(|(i, &a)| if i == 0 { 0.0 } else { a })
                .collect(),
        )
        .unwrap();
        assert!(project_constant(&zero_mean)
            .coeffs()
            .iter()
            .all(|&a| a == 0.0));
    }

    #[test]
    fn gradient_of_resolved_modes() {
        let n = 33;
        let f = WorkField::from_fn(n, |x, y| {
            (PI * x).cos() * (3.0 * PI * y).cos() + (2.0 * PI * y).cos()
        })
        .unwrap();
        let (gx, gy) = CosineBasis::for_size(n)
            .unwrap()
            .gradient(&dct_forward(&f).unwrap())
            .unwrap();
        let ex = WorkField::from_fn(n, |x, y| -PI * (PI * x).sin() * (3.0 * PI * y).cos()).unwrap();
        let ey = WorkField::from_fn(n, |x, y| {
            -3.0 * PI * (PI * x).cos() * (3.0 * PI * y).sin() - 2.0 * PI * (2.0 * PI * y).sin()
        })
        .unwrap();
        for (a, b) in gx.values().iter().zip(ex.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
        for (a, b) in gy.values().iter().zip(ey.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }
}
