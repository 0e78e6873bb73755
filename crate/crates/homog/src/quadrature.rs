//! Uniform collocation grid and periodic trapezoidal quadrature.
//!
//! On a periodic cell the trapezoidal rule collapses to the plain mean of
//! the samples times the cell area, and it integrates trigonometric modes
//! below the Nyquist frequency exactly. Grid points sit at cell corners
//! `(2pi i / n, 2pi j / n)`, the same locations as the FEM nodes, so nodal
//! projection between the two representations is index-for-index.

use crate::material::{CELL_AREA, CELL_SIDE};
use std::fmt;

/// Default grid resolution: 128 x 128 = 16384 collocation points.
pub const DEFAULT_GRID_N: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuadratureError {
    ZeroResolution,
    /// A sample slice did not have one value per grid point.
    LengthMismatch { expected: usize, got: usize },
}

impl fmt::Display for QuadratureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadratureError::ZeroResolution => write!(f, "grid resolution must be at least 1"),
            QuadratureError::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} samples, got {got}")
            }
        }
    }
}

impl std::error::Error for QuadratureError {}

/// An `n x n` grid over the periodic cell. Point `idx` has row-major layout
/// `idx = iy * n + ix`, matching the FEM degree-of-freedom numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollocationGrid {
    n: usize,
}

impl CollocationGrid {
    pub fn new(n: usize) -> Result<Self, QuadratureError> {
        if n == 0 {
            return Err(QuadratureError::ZeroResolution);
        }
        Ok(CollocationGrid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of points, `n * n`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `2pi / n`.
    pub fn spacing(&self) -> f64 {
        CELL_SIDE / self.n as f64
    }

    /// Quadrature weight per point, `(2pi / n)^2`.
    pub fn weight(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Coordinates of point `idx`.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        debug_assert!(idx < self.len());
        let ix = idx % self.n;
        let iy = idx / self.n;
        let h = self.spacing();
        [h * ix as f64, h * iy as f64]
    }

    /// All points in index order.
    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Integral over the cell of a field sampled at the grid points.
    pub fn integrate(&self, samples: &[f64]) -> Result<f64, QuadratureError> {
        if samples.len() != self.len() {
            return Err(QuadratureError::LengthMismatch {
                expected: self.len(),
                got: samples.len(),
            });
        }
        let sum: f64 = samples.iter().sum();
        Ok(sum / samples.len() as f64 * CELL_AREA)
    }

    /// Mean of a field sampled at the grid points (the integral divided by
    /// the cell area).
    pub fn mean(&self, samples: &[f64]) -> Result<f64, QuadratureError> {
        Ok(self.integrate(samples)? / CELL_AREA)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn constant_integrates_to_cell_area() {
        let g = CollocationGrid::new(16).unwrap();
        let ones = vec![1.0; g.len()];
        assert!((g.integrate(&ones).unwrap() - CELL_AREA).abs() <= 1e-12);
    }

    #[test]
    fn low_modes_integrate_exactly() {
        // Trigonometric polynomials below Nyquist are integrated to machine
        // precision by the periodic trapezoidal rule.
        let g = CollocationGrid::new(32).unwrap();
        for (m, n) in [(1, 0), (0, 1), (3, 2), (7, 7), (15, 1)] {
            let vals: Vec<f64> = g
                .points()
                .map(|x| (m as f64 * x[0] + n as f64 * x[1]).sin() + 0.25)
                .collect();
            let integral = g.integrate(&vals).unwrap();
            assert!(
                (integral - 0.25 * CELL_AREA).abs() <= 1e-10,
                "mode ({m},{n}): {integral}"
            );
        }
    }

    #[test]
    fn product_mode_quadrature() {
        // cos^2(m x1) has mean 1/2 for 0 < m < n/2.
        let g = CollocationGrid::new(64).unwrap();
        let vals: Vec<f64> = g.points().map(|x| (5.0 * x[0]).cos().powi(2)).collect();
        assert!((g.mean(&vals).unwrap() - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn points_cover_the_half_open_cell() {
        let g = CollocationGrid::new(8).unwrap();
        assert_eq!(g.len(), 64);
        let first = g.point(0);
        assert_eq!(first, [0.0, 0.0]);
        for p in g.points() {
            assert!(p[0] >= 0.0 && p[0] < TAU);
            assert!(p[1] >= 0.0 && p[1] < TAU);
        }
        // Row-major: index n is the first point of the second row.
        let p = g.point(8);
        assert_eq!(p, [0.0, g.spacing()]);
    }

    #[test]
    fn grid_points_align_with_fem_nodes() {
        // Interface coordinates pi/2 and 3pi/2 are hit exactly when n is a
        // multiple of 4.
        let g = CollocationGrid::new(128).unwrap();
        let p = g.point(32);
        assert_eq!(p[0], std::f64::consts::FRAC_PI_2);
        let q = g.point(96);
        assert_eq!(q[0], 3.0 * std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn wrong_sample_count_is_rejected() {
        let g = CollocationGrid::new(4).unwrap();
        assert!(matches!(
            g.integrate(&[0.0; 3]),
            Err(QuadratureError::LengthMismatch { .. })
        ));
        assert!(CollocationGrid::new(0).is_err());
    }
}
