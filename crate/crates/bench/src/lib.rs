//! Shared fixtures for the benchmarks.

use lw2::oracles::{make_translated_grid, AnalyticDensity};
use lw2::solver::{SolverConfig, WittenSolver};
use lw2::{DensityGrid, Result};

/// Striped reference density and a small translate of it, the timing workload.
pub struct StripedPair {
    pub f: DensityGrid,
    pub g: DensityGrid,
}

impl StripedPair {
    pub fn new(n: usize, shift: [f64; 2]) -> Result<Self> {
        let f = make_translated_grid(&AnalyticDensity::Striped, [0.0, 0.0], n)?.grid;
        let g = make_translated_grid(&AnalyticDensity::Striped, shift, n)?.grid;
        Ok(Self { f, g })
    }

    pub fn solver(&self, tau: f64) -> Result<WittenSolver> {
        WittenSolver::new(&self.f, SolverConfig::with_tau(tau))
    }
}
