//! Endpoint-inclusive grids on the unit square and trapezoid quadrature.
//!
//! A grid of size `n` samples a function at `x_i = i / (n - 1)` along each
//! axis, stored row-major with the first index running along `x1`. Only
//! `n = 2^k + 1` with `k >= 3` is accepted, which is what the DCT-I based
//! spectral machinery expects.

use crate::error::{Error, Result};

/// Tolerance on the trapezoid mass of a grid flagged as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Returns `true` if `n = 2^k + 1` for some `k >= 3`.
pub fn is_valid_size(n: usize) -> bool {
    n >= 9 && (n - 1).is_power_of_two()
}

pub(crate) fn check_size(n: usize) -> Result<()> {
    if is_valid_size(n) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "grid size {n} is not of the form 2^k + 1 with k >= 3"
        )))
    }
}

/// One-dimensional trapezoid weights for `n` endpoint-inclusive points on [0, 1].
pub fn trapezoid_weights(n: usize) -> Vec<f64> {
    let h = 1.0 / (n - 1) as f64;
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Pairwise summation with a fixed split order, so results do not depend
/// on how the caller schedules work.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// A finite real function sampled on the grid; no sign constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkField {
    n: usize,
    values: Vec<f64>,
}

impl WorkField {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        check_size(n)?;
        if values.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} values for a {n}x{n} grid, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { n, values })
    }

    /// Zero field; `n` must be a valid grid size.
    pub fn zeros(n: usize) -> Result<Self> {
        check_size(n)?;
        Ok(Self {
            n,
            values: vec![0.0; n * n],
        })
    }

    /// Samples `f(x1, x2)` at the grid points.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_size(n)?;
        let h = 1.0 / (n - 1) as f64;
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            let x1 = i as f64 * h;
            for j in 0..n {
                values.push(f(x1, j as f64 * h));
            }
        }
        Self::new(n, values)
    }

    /// Internal constructor for values already known to be finite and sized.
    pub(crate) fn from_raw(n: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * n);
        Self { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise map; fails if the map produces non-finite values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.n, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields of the same size.
    pub fn zip_with(&self, other: &WorkField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_size(self, other)?;
        Self::new(
            self.n,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.map(|v| c * v)
    }
}

pub(crate) fn same_size(a: &WorkField, b: &WorkField) -> Result<()> {
    if a.n != b.n {
        return Err(Error::invalid(format!(
            "grid size mismatch: {} vs {}",
            a.n, b.n
        )));
    }
    Ok(())
}

/// A nonnegative density sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    field: WorkField,
    normalized: bool,
}

impl DensityGrid {
    /// Wraps raw samples, rejecting negative values. The result is not flagged normalized.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_field(WorkField::new(n, values)?)
    }

    pub fn from_field(field: WorkField) -> Result<Self> {
        if let Some(pos) = field.values.iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "density has a negative value {} at flat index {pos}",
                field.values[pos]
            )));
        }
        Ok(Self {
            field,
            normalized: false,
        })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::from_field(WorkField::from_fn(n, f)?)
    }

    pub fn n(&self) -> usize {
        self.field.n
    }

    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    pub fn field(&self) -> &WorkField {
        &self.field
    }

    pub fn into_field(self) -> WorkField {
        self.field
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.field)
    }
}

impl AsRef<WorkField> for WorkField {
    fn as_ref(&self) -> &WorkField {
        self
    }
}

impl AsRef<WorkField> for DensityGrid {
    fn as_ref(&self) -> &WorkField {
        &self.field
    }
}

/// Trapezoid-rule integral over [0, 1]^2.
pub fn integrate(field: &WorkField) -> f64 {
    let n = field.n;
    let w = trapezoid_weights(n);
    let rows: Vec<f64> = field
        .values
        .chunks_exact(n)
        .zip(&w)
        .map(|(row, &wi)| {
            let terms: Vec<f64> = row.iter().zip(&w).map(|(v, wj)| v * wj).collect();
            wi * pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&rows)
}

/// L^2(dx) pairing of two fields by trapezoid quadrature.
pub fn inner_product(a: &WorkField, b: &WorkField) -> Result<f64> {
    Ok(integrate(&a.zip_with(b, |x, y| x * y)?))
}

/// Rescales a density to unit trapezoid mass.
pub fn normalize_density(f: &DensityGrid) -> Result<DensityGrid> {
    let mass = f.mass();
    if !(mass > 0.0) {
        return Err(Error::invalid(format!(
            "density has non-positive mass {mass:e}"
        )));
    }
    let field = f.field.scaled(1.0 / mass)?;
    let normalized = (integrate(&field) - 1.0).abs() <= NORMALIZATION_TOL;
    if !normalized {
        return Err(Error::internal("normalized density misses unit mass"));
    }
    Ok(DensityGrid { field, normalized })
}

/// `||f - g||_{L^2(dx)}`.
pub fn l2_distance(f: &WorkField, g: &WorkField) -> Result<f64> {
    let diff = f.zip_with(g, |a, b| a - b)?;
    Ok(inner_product(&diff, &diff)?.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn valid_sizes() {
        assert!(is_valid_size(9));
        assert!(is_valid_size(257));
        assert!(is_valid_size(513));
        assert!(!is_valid_size(5));
        assert!(!is_valid_size(256));
        assert!(!is_valid_size(100));
        assert!(WorkField::zeros(10).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for k in 3..=10 {
            let w = trapezoid_weights((1 << k) + 1);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn integrate_constants_and_modes() {
        for n in [9, 33, 129] {
            let one = WorkField::from_fn(n, |_, _| 1.0).unwrap();
            assert_abs_diff_eq!(integrate(&one), 1.0, epsilon = 1e-14);
        }
        let c = WorkField::from_fn(9, |x, _| (PI * x).cos()).unwrap();
        assert_abs_diff_eq!(integrate(&c), 0.0, epsilon = 1e-12);
        let c2 = WorkField::from_fn(33, |x, _| (PI * x).cos().powi(2)).unwrap();
        assert_abs_diff_eq!(integrate(&c2), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let mut v = vec![0.0; 81];
        v[5] = f64::NAN;
        assert!(matches!(WorkField::new(9, v), Err(Error::InvalidInput(_))));
        assert!(WorkField::new(9, vec![0.0; 80]).is_err());
    }

    #[test]
    fn inner_products() {
        let n = 33;
        let one = WorkField::from_fn(n, |_, _| 1.0).unwrap();
        let c1 = WorkField::from_fn(n, |x, _| (PI * x).cos()).unwrap();
        let c2 = WorkField::from_fn(n, |x, _| (2.0 * PI * x).cos()).unwrap();
        assert_abs_diff_eq!(inner_product(&one, &one).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(inner_product(&c1, &c2).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inner_product(&c1, &c1).unwrap(), 0.5, epsilon = 1e-12);
        let small = WorkField::zeros(17).unwrap();
        assert!(inner_product(&one, &small).is_err());
    }

    #[test]
    fn normalization() {
        let f = DensityGrid::from_fn(17, |_, _| 3.0).unwrap();
        let g = normalize_density(&f).unwrap();
        assert!(g.is_normalized());
        for &v in g.values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
        }
        let zero = DensityGrid::from_fn(17, |_, _| 0.0).unwrap();
        assert!(matches!(
            normalize_density(&zero),
            Err(Error::InvalidInput(_))
        ));
        assert!(DensityGrid::from_fn(17, |x, _| x - 0.5).is_err());
    }

    #[test]
    fn normalize_recovers_scaled_density() {
        let bump = |x: f64, y: f64| (-((x - 0.5).powi(2) + (y - 0.4).powi(2)) / 0.02).exp();
        let f = normalize_density(&DensityGrid::from_fn(65, bump).unwrap()).unwrap();
        let doubled = DensityGrid::new(65, f.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        let back = normalize_density(&doubled).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let again = normalize_density(&f).unwrap();
        for (a, b) in again.values().iter().zip(f.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2_distance_single_mode() {
        let n = 33;
        let f = WorkField::from_fn(n, |x, _| 1.0 + (PI * x).cos()).unwrap();
        let g = WorkField::from_fn(n, |_, _| 1.0).unwrap();
        assert_abs_diff_eq!(l2_distance(&f, &f).unwrap(), 0.0);
        assert_abs_diff_eq!(l2_distance(&f, &g).unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
    }

    fn field_strategy(n: usize) -> impl Strategy<Value = WorkField> {
        prop::collection::vec(-10.0f64..10.0, n * n)
            .prop_map(move |v| WorkField::new(n, v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn integrate_is_linear(a in field_strategy(9), b in field_strategy(9), x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let combo = a.zip_with(&b, |p, q| x * p + y * q).unwrap();
            let lhs = integrate(&combo);
            let rhs = x * integrate(&a) + y * integrate(&b);
            let scale = x.abs() * a.max_abs() + y.abs() * b.max_abs();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn l2_triangle_inequality(a in field_strategy(9), b in field_strategy(9), c in field_strategy(9)) {
            let ab = l2_distance(&a, &b).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-10);
        }
    }
}
