//! Automatic differentiation: second-order jets for spatial derivatives and
//! a Wengert tape for parameter gradients.
//!
//! A [`Jet2`] carries value, spatial gradient, and symmetric Hessian through
//! arithmetic. It is generic over [`Scalar`], so the same network and
//! residual code evaluates either on `f64` (spatial derivatives only) or on
//! tape variables [`tape::Var`] (forward-over-reverse: reverse sweeping the
//! recorded jet computation yields parameter gradients of any residual).

pub mod tape;

pub use tape::{Tape, Var};

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdError {
    DivisionByZero,
    LengthMismatch { expected: usize, got: usize },
    /// A variable from a different tape was passed to a tape operation.
    ForeignVar,
    /// `Tape::leaves` was called on a tape that already holds nodes.
    LeavesAlreadyBound,
}

impl fmt::Display for AdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdError::DivisionByZero => write!(f, "division by zero in jet arithmetic"),
            AdError::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} values, got {got}")
            }
            AdError::ForeignVar => write!(f, "variable does not belong to this tape"),
            AdError::LeavesAlreadyBound => {
                write!(f, "tape already has nodes; clear it before binding leaves")
            }
        }
    }
}

impl std::error::Error for AdError {}

pub type AdResult<T> = Result<T, AdError>;

/// Number-like values a jet can be built over. `f64` gives plain evaluation;
/// [`tape::Var`] records every operation for a later reverse sweep.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant of the same kind as `self`.
    fn lift(self, c: f64) -> Self;
    /// The numeric value.
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    /// `self * b + acc`, fused where the representation allows it.
    fn mul_add(self, b: Self, acc: Self) -> Self;
    /// `self * c` for a plain constant.
    fn scale(self, c: f64) -> Self;
    /// `self + c` for a plain constant.
    fn add_c(self, c: f64) -> Self;
}

impl Scalar for f64 {
    fn lift(self, c: f64) -> f64 {
        c
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> f64 {
        f64::sin(self)
    }
    fn cos(self) -> f64 {
        f64::cos(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn mul_add(self, b: f64, acc: f64) -> f64 {
        f64::mul_add(self, b, acc)
    }
    fn scale(self, c: f64) -> f64 {
        self * c
    }
    fn add_c(self, c: f64) -> f64 {
        self + c
    }
}

/// Value, spatial gradient, and Hessian of a field at one point. The Hessian
/// is stored as `[d11, d12, d22]`; symmetry holds by construction, so the
/// mixed entry exists once.
#[derive(Debug, Clone, Copy)]
pub struct Jet2<S> {
    pub v: S,
    pub d: [S; 2],
    pub h: [S; 3],
}

impl Jet2<f64> {
    /// A constant field: value `c`, zero derivatives.
    pub fn constant(c: f64) -> Self {
        Jet2 {
            v: c,
            d: [0.0; 2],
            h: [0.0; 3],
        }
    }

    /// The coordinate function `x[axis]` seeded at value `x`.
    pub fn coord(x: f64, axis: usize) -> Self {
        assert!(axis < 2);
        let mut d = [0.0; 2];
        d[axis] = 1.0;
        Jet2 {
            v: x,
            d,
            h: [0.0; 3],
        }
    }
}

impl<S: Scalar> Jet2<S> {
    /// A constant jet of the same scalar kind as `like`.
    pub fn constant_like(c: f64, like: S) -> Self {
        let z = like.lift(0.0);
        Jet2 {
            v: like.lift(c),
            d: [z, z],
            h: [z, z, z],
        }
    }

    /// Coordinate jet of the same scalar kind as `like`.
    pub fn coord_like(x: f64, axis: usize, like: S) -> Self {
        assert!(axis < 2);
        let z = like.lift(0.0);
        let mut d = [z, z];
        d[axis] = like.lift(1.0);
        Jet2 {
            v: like.lift(x),
            d,
            h: [z, z, z],
        }
    }

    /// Hessian entry `(i, j)`, honoring symmetry.
    pub fn hess(&self, i: usize, j: usize) -> S {
        match (i, j) {
            (0, 0) => self.h[0],
            (1, 1) => self.h[2],
            (0, 1) | (1, 0) => self.h[1],
            _ => panic!("hessian index out of range"),
        }
    }

    /// Trace of the Hessian.
    pub fn laplacian(&self) -> S {
        self.h[0] + self.h[2]
    }

    /// Multiply every component by a plain constant.
    pub fn scale(self, c: f64) -> Self {
        Jet2 {
            v: self.v.scale(c),
            d: [self.d[0].scale(c), self.d[1].scale(c)],
            h: [self.h[0].scale(c), self.h[1].scale(c), self.h[2].scale(c)],
        }
    }

    /// Multiply by a scalar that does not depend on position (a parameter,
    /// for instance). Componentwise, since its spatial derivatives vanish.
    pub fn scale_s(self, s: S) -> Self {
        Jet2 {
            v: self.v * s,
            d: [self.d[0] * s, self.d[1] * s],
            h: [self.h[0] * s, self.h[1] * s, self.h[2] * s],
        }
    }

    /// Fused `self * s + acc` with a position-independent scalar `s`.
    pub fn mul_s_add(self, s: S, acc: Self) -> Self {
        Jet2 {
            v: self.v.mul_add(s, acc.v),
            d: [
                self.d[0].mul_add(s, acc.d[0]),
                self.d[1].mul_add(s, acc.d[1]),
            ],
            h: [
                self.h[0].mul_add(s, acc.h[0]),
                self.h[1].mul_add(s, acc.h[1]),
                self.h[2].mul_add(s, acc.h[2]),
            ],
        }
    }

    /// Add a position-independent scalar to the value component.
    pub fn add_s(mut self, s: S) -> Self {
        self.v = self.v + s;
        self
    }

    /// Chain rule for a univariate map with value `fv` and derivatives `f1`,
    /// `f2` at `self.v`.
    fn chain(self, fv: S, f1: S, f2: S) -> Self {
        let [d1, d2] = self.d;
        Jet2 {
            v: fv,
            d: [f1 * d1, f1 * d2],
            h: [
                (f2 * d1).mul_add(d1, f1 * self.h[0]),
                (f2 * d1).mul_add(d2, f1 * self.h[1]),
                (f2 * d2).mul_add(d2, f1 * self.h[2]),
            ],
        }
    }

    pub fn sin(self) -> Self {
        let s = self.v.sin();
        let c = self.v.cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let s = self.v.sin();
        let c = self.v.cos();
        self.chain(c, -s, -c)
    }

    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        let one = self.v.lift(1.0);
        let f1 = one - t * t;
        let f2 = t.scale(-2.0) * f1;
        self.chain(t, f1, f2)
    }

    /// Reciprocal. Fails when the value is zero.
    pub fn recip(self) -> AdResult<Self> {
        if self.v.value() == 0.0 {
            return Err(AdError::DivisionByZero);
        }
        let one = self.v.lift(1.0);
        let r = one / self.v;
        // 1/u: f' = -1/u^2, f'' = 2/u^3.
        let f1 = -(r * r);
        let f2 = (r * r * r).scale(2.0);
        Ok(self.chain(r, f1, f2))
    }

    /// Quotient of jets. Fails when the divisor's value is zero.
    pub fn div(self, rhs: Self) -> AdResult<Self> {
        Ok(self * rhs.recip()?)
    }
}

impl<S: Scalar> Add for Jet2<S> {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Jet2 {
            v: self.v + r.v,
            d: [self.d[0] + r.d[0], self.d[1] + r.d[1]],
            h: [self.h[0] + r.h[0], self.h[1] + r.h[1], self.h[2] + r.h[2]],
        }
    }
}

impl<S: Scalar> Sub for Jet2<S> {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        Jet2 {
            v: self.v - r.v,
            d: [self.d[0] - r.d[0], self.d[1] - r.d[1]],
            h: [self.h[0] - r.h[0], self.h[1] - r.h[1], self.h[2] - r.h[2]],
        }
    }
}

impl<S: Scalar> Neg for Jet2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet2 {
            v: -self.v,
            d: [-self.d[0], -self.d[1]],
            h: [-self.h[0], -self.h[1], -self.h[2]],
        }
    }
}

impl<S: Scalar> Mul for Jet2<S> {
    type Output = Self;
    /// Full product rule through second order:
    /// `(fg)_ij = f g_ij + g f_ij + f_i g_j + f_j g_i`.
    fn mul(self, r: Self) -> Self {
        let (f, g) = (self, r);
        let v = f.v * g.v;
        let d = [
            f.d[0].mul_add(g.v, f.v * g.d[0]),
            f.d[1].mul_add(g.v, f.v * g.d[1]),
        ];
        let h = [
            f.h[0].mul_add(g.v, f.v.mul_add(g.h[0], (f.d[0] * g.d[0]).scale(2.0))),
            f.h[1].mul_add(
                g.v,
                f.v.mul_add(g.h[1], f.d[0].mul_add(g.d[1], f.d[1] * g.d[0])),
            ),
            f.h[2].mul_add(g.v, f.v.mul_add(g.h[2], (f.d[1] * g.d[1]).scale(2.0))),
        ];
        Jet2 { v, d, h }
    }
}

/// Evaluate a field builder at a point, returning value, gradient, and
/// Hessian. The builder receives coordinate jets for `x1` and `x2`.
pub fn jet_eval<F>(f: F, x: [f64; 2]) -> AdResult<Jet2<f64>>
where
    F: Fn(Jet2<f64>, Jet2<f64>) -> AdResult<Jet2<f64>>,
{
    f(Jet2::coord(x[0], 0), Jet2::coord(x[1], 1))
}
