//! Cell geometry and the two-phase conductivity field.
//!
//! The periodic cell is the square `[0, 2pi)^2`; the inclusion is the square
//! `(pi/2, 3pi/2)^2`. On the interface itself (a measure-zero set) the sharp
//! coefficients take tensor-product midpoint values — see [`sharp_indicator`]
//! — so that grid quadrature aligned with the interface stays second-order
//! accurate. Conductivity is isotropic in both phases, `gamma * I`, but the
//! public tensor accessors return the full 2x2 matrix so anisotropic
//! extensions keep the same call sites.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;

/// Side length of the periodic cell.
pub const CELL_SIDE: f64 = TAU;
/// Area of the periodic cell.
pub const CELL_AREA: f64 = TAU * TAU;
/// Area fraction of the inclusion (a `pi x pi` square in a `2pi x 2pi` cell).
pub const INCLUSION_FRACTION: f64 = 0.25;

/// Errors from material construction and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum MaterialError {
    /// A conductivity value was zero or negative.
    NonPositivePhase(f64),
    /// The smoothing width was zero or negative.
    NonPositiveEpsilon(f64),
    /// A spatial derivative of the coefficient was requested on the sharp
    /// two-phase field, which is discontinuous across the interface.
    PiecewiseGradient,
}

impl fmt::Display for MaterialError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaterialError::NonPositivePhase(g) => {
                write!(f, "phase conductivity must be positive, got {g}")
            }
            MaterialError::NonPositiveEpsilon(e) => {
                write!(f, "smoothing width must be positive, got {e}")
            }
            MaterialError::PiecewiseGradient => {
                write!(f, "the piecewise coefficient has no pointwise gradient")
            }
        }
    }
}

impl std::error::Error for MaterialError {}

/// The two phase conductivities. `gamma_mat` fills the cell outside the
/// inclusion, `gamma_inc` fills the inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePair {
    pub gamma_mat: f64,
    pub gamma_inc: f64,
}

impl PhasePair {
    pub fn new(gamma_mat: f64, gamma_inc: f64) -> Result<Self, MaterialError> {
        for g in [gamma_mat, gamma_inc] {
            if !(g > 0.0) || !g.is_finite() {
                return Err(MaterialError::NonPositivePhase(g));
            }
        }
        Ok(PhasePair {
            gamma_mat,
            gamma_inc,
        })
    }

    /// The contrast pair used throughout the experiments: matrix 1, inclusion 0.1.
    pub fn standard() -> Self {
        PhasePair {
            gamma_mat: 1.0,
            gamma_inc: 0.1,
        }
    }
}

/// Wrap a coordinate into the fundamental cell `[0, 2pi)`.
pub fn wrap(t: f64) -> f64 {
    t.rem_euclid(TAU)
}

/// Smoothed phase indicator: 0 deep in the matrix, 1 deep in the inclusion,
/// transition width of order `epsilon` around `t = pi/2` and `t = 3pi/2`.
pub fn smooth_indicator(t: f64, epsilon: f64) -> Result<f64, MaterialError> {
    if !(epsilon > 0.0) {
        return Err(MaterialError::NonPositiveEpsilon(epsilon));
    }
    Ok(0.5 * (1.0 + ((t - FRAC_PI_2).sin() / epsilon).tanh()))
}

/// Derivative of [`smooth_indicator`] in `t`. At `t = pi/2` this is
/// `1/(2 epsilon)`, the steepest point of the transition.
pub fn smooth_indicator_deriv(t: f64, epsilon: f64) -> Result<f64, MaterialError> {
    if !(epsilon > 0.0) {
        return Err(MaterialError::NonPositiveEpsilon(epsilon));
    }
    let s = (t - FRAC_PI_2).sin() / epsilon;
    let sech2 = 1.0 - s.tanh() * s.tanh();
    Ok(0.5 * sech2 * (t - FRAC_PI_2).cos() / epsilon)
}

/// Sharp phase indicator per axis: 1 strictly inside `(pi/2, 3pi/2)`, 0
/// strictly outside, and 1/2 exactly on the two boundary lines. This is the
/// pointwise limit of [`smooth_indicator`] as `epsilon -> 0`.
///
/// The half weight on the boundary is what makes grid quadrature of a
/// coefficient built from this indicator second-order accurate when grid
/// lines land on the interface (the trapezoidal treatment of a jump): with
/// `n` points per axis and `n` divisible by four, the indicator sums to
/// exactly `n/2` along an axis, so the tensor-product inclusion fraction
/// comes out exactly 1/4 instead of `(n/2 - 1)^2 / n^2`.
pub fn sharp_indicator(t: f64) -> f64 {
    const LO: f64 = FRAC_PI_2;
    const HI: f64 = 3.0 * FRAC_PI_2;
    if t == LO || t == HI {
        0.5
    } else if LO < t && t < HI {
        1.0
    } else {
        0.0
    }
}

/// The conductivity field over the cell: either the sharp two-phase layout or
/// its tanh-smoothed regularization with transition width `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialField {
    pub phases: PhasePair,
    /// `None` for the sharp field, `Some(epsilon)` for the smoothed one.
    pub epsilon: Option<f64>,
}

impl MaterialField {
    pub fn piecewise(phases: PhasePair) -> Self {
        MaterialField {
            phases,
            epsilon: None,
        }
    }

    pub fn smoothed(phases: PhasePair, epsilon: f64) -> Result<Self, MaterialError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(MaterialError::NonPositiveEpsilon(epsilon));
        }
        Ok(MaterialField {
            phases,
            epsilon: Some(epsilon),
        })
    }

    pub fn is_smoothed(&self) -> bool {
        self.epsilon.is_some()
    }

    /// Scalar coefficient `gamma(x)`.
    ///
    /// The sharp field takes the tensor-product midpoint value on the
    /// inclusion boundary (see [`sharp_indicator`]): quadrature grids whose
    /// lines meet the boundary then integrate the conductivity energy to
    /// second order instead of carrying a one-sided O(h) phase-counting
    /// bias.
    pub fn gamma(&self, x: [f64; 2]) -> f64 {
        let (x1, x2) = (wrap(x[0]), wrap(x[1]));
        let PhasePair {
            gamma_mat,
            gamma_inc,
        } = self.phases;
        match self.epsilon {
            None => {
                // Short-circuit the pure phases so in-phase values are the
                // exact configured conductivities, not an affine combination
                // that rounds.
                match sharp_indicator(x1) * sharp_indicator(x2) {
                    0.0 => gamma_mat,
                    1.0 => gamma_inc,
                    q => gamma_mat - (gamma_mat - gamma_inc) * q,
                }
            }
            Some(eps) => {
                let p1 = smooth_indicator(x1, eps).expect("validated epsilon");
                let p2 = smooth_indicator(x2, eps).expect("validated epsilon");
                gamma_mat - (gamma_mat - gamma_inc) * p1 * p2
            }
        }
    }

    /// Conductivity tensor `A(x) = gamma(x) I`.
    pub fn conductivity(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let g = self.gamma(x);
        [[g, 0.0], [0.0, g]]
    }

    /// Gradient of the scalar coefficient. Only the smoothed field has one.
    pub fn gamma_gradient(&self, x: [f64; 2]) -> Result<[f64; 2], MaterialError> {
        let eps = self.epsilon.ok_or(MaterialError::PiecewiseGradient)?;
        let (x1, x2) = (wrap(x[0]), wrap(x[1]));
        let PhasePair {
            gamma_mat,
            gamma_inc,
        } = self.phases;
        let p1 = smooth_indicator(x1, eps)?;
        let p2 = smooth_indicator(x2, eps)?;
        let d1 = smooth_indicator_deriv(x1, eps)?;
        let d2 = smooth_indicator_deriv(x2, eps)?;
        let c = gamma_mat - gamma_inc;
        Ok([-c * d1 * p2, -c * p1 * d2])
    }

    /// Scalar resistivity `beta(x)`, equal to `1 / gamma(x)` within each
    /// phase.
    ///
    /// On the sharp field's interface lines (a measure-zero set) the
    /// resistivity takes its own tensor-product midpoint of the two phase
    /// resistivities rather than `1 / gamma` of the midpoint conductivity.
    /// Each coefficient is the integrand of its own energy, so each gets the
    /// trapezoidal jump treatment separately; this keeps grid quadrature of
    /// the resistivity energy second-order accurate and reproduces the exact
    /// harmonic phase average for the unit flux on aligned grids.
    pub fn beta(&self, x: [f64; 2]) -> f64 {
        match self.epsilon {
            None => {
                let (x1, x2) = (wrap(x[0]), wrap(x[1]));
                let beta_mat = 1.0 / self.phases.gamma_mat;
                let beta_inc = 1.0 / self.phases.gamma_inc;
                match sharp_indicator(x1) * sharp_indicator(x2) {
                    0.0 => beta_mat,
                    1.0 => beta_inc,
                    q => beta_mat - (beta_mat - beta_inc) * q,
                }
            }
            Some(_) => 1.0 / self.gamma(x),
        }
    }

    /// Resistivity tensor `A(x)^{-1} = beta(x) I`.
    pub fn resistivity(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let b = self.beta(x);
        [[b, 0.0], [0.0, b]]
    }

    /// Gradient of the resistivity, `-grad(gamma) / gamma^2`. Smoothed only.
    pub fn beta_gradient(&self, x: [f64; 2]) -> Result<[f64; 2], MaterialError> {
        let g = self.gamma(x);
        let dg = self.gamma_gradient(x)?;
        Ok([-dg[0] / (g * g), -dg[1] / (g * g)])
    }
}

/// Closed-form effective conductivity of the sharp layout:
/// `gamma_mat * sqrt((gamma_mat + 3 gamma_inc) / (3 gamma_mat + gamma_inc))`.
/// For phases (1, 0.1) this is 0.6476 to four decimals.
pub fn exact_effective(phases: PhasePair) -> f64 {
    let (a, b) = (phases.gamma_mat, phases.gamma_inc);
    a * ((a + 3.0 * b) / (3.0 * a + b)).sqrt()
}

/// Arithmetic (upper) and harmonic (lower) phase averages at inclusion
/// volume fraction `f`. The classical a-priori bounds on any microstructure
/// with these phases, 0.775 and 1/3.25 for the standard pair at f = 1/4.
pub fn voigt_reuss(phases: PhasePair, fraction: f64) -> (f64, f64) {
    debug_assert!((0.0..=1.0).contains(&fraction));
    let PhasePair {
        gamma_mat,
        gamma_inc,
    } = phases;
    let voigt = (1.0 - fraction) * gamma_mat + fraction * gamma_inc;
    let reuss = 1.0 / ((1.0 - fraction) / gamma_mat + fraction / gamma_inc);
    (voigt, reuss)
}

/// Inverse of a 2x2 matrix. Panics on an exactly singular input; the
/// conductivity tensors this is applied to are positive definite.
pub fn inv2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    assert!(det != 0.0, "singular 2x2 matrix");
    [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ]
}

/// Matrix-vector product for 2x2 blocks.
pub fn matvec2(a: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}
