//! Residuals and losses for the four solver variants.
//!
//! Primal: the corrector potential `u` for a unit loading `xi`, with flux
//! `A (xi + grad u)`. Dual: the stream function `w` for a loading `zeta`,
//! with field `zeta + Q grad w` where `Q` is the quarter-turn
//! `[[0, -1], [1, 0]]`, so `Q grad w = (-d2 w, d1 w)` and periodic
//! divergence-free fields come for free. Strong residuals need a
//! differentiable coefficient and therefore refuse the sharp material; weak
//! residuals integrate against test-function gradients and accept both.

use crate::autodiff::{Jet2, Scalar};
use crate::material::{matvec2, MaterialError, MaterialField};
use crate::network::PeriodicNet;
use crate::par::{self, Reduction};
use crate::quadrature::{CollocationGrid, QuadratureError};
use crate::test_bases::{BasisError, BasisTable, Gram};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Which side of the primal-dual pair a solver works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Primal,
    Dual,
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Form::Primal => write!(f, "primal"),
            Form::Dual => write!(f, "dual"),
        }
    }
}

#[derive(Debug)]
pub enum LossError {
    /// The strong residual was asked for on the sharp two-phase field.
    StrongNeedsSmooth,
    Material(MaterialError),
    Quadrature(QuadratureError),
    Basis(BasisError),
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::StrongNeedsSmooth => write!(
                f,
                "strong residuals need the smoothed material; the sharp field has no pointwise coefficient derivative"
            ),
            LossError::Material(e) => write!(f, "{e}"),
            LossError::Quadrature(e) => write!(f, "{e}"),
            LossError::Basis(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LossError {}

impl From<MaterialError> for LossError {
    fn from(e: MaterialError) -> Self {
        LossError::Material(e)
    }
}

impl From<QuadratureError> for LossError {
    fn from(e: QuadratureError) -> Self {
        LossError::Quadrature(e)
    }
}

impl From<BasisError> for LossError {
    fn from(e: BasisError) -> Self {
        LossError::Basis(e)
    }
}

/// Material samples on the collocation grid, shared by every loss
/// evaluation. Gradient tables exist only for the smoothed field.
#[derive(Debug, Clone)]
pub struct MaterialTable {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub dgamma: Option<[Vec<f64>; 2]>,
    pub dbeta: Option<[Vec<f64>; 2]>,
}

pub fn tabulate_material(mat: &MaterialField, grid: &CollocationGrid) -> MaterialTable {
    let n = grid.len();
    let mut gamma = vec![0.0; n];
    let mut beta = vec![0.0; n];
    par::fill_slice(&mut gamma, |i| mat.gamma(grid.point(i)));
    par::fill_slice(&mut beta, |i| mat.beta(grid.point(i)));
    let (dgamma, dbeta) = if mat.is_smoothed() {
        let mut dg = [vec![0.0; n], vec![0.0; n]];
        let mut db = [vec![0.0; n], vec![0.0; n]];
        for axis in 0..2 {
            par::fill_slice(&mut dg[axis], |i| {
                mat.gamma_gradient(grid.point(i)).expect("smoothed")[axis]
            });
            par::fill_slice(&mut db[axis], |i| {
                mat.beta_gradient(grid.point(i)).expect("smoothed")[axis]
            });
        }
        (Some(dg), Some(db))
    } else {
        (None, None)
    };
    MaterialTable {
        gamma,
        beta,
        dgamma,
        dbeta,
    }
}

/// Strong primal residual at one point, generic over the scalar kind:
/// `grad(gamma) . (xi + grad u) + gamma laplacian(u)`.
pub fn strong_primal_residual_s<S: Scalar>(
    jet: &Jet2<S>,
    gamma: f64,
    dgamma: [f64; 2],
    xi: [f64; 2],
) -> S {
    let t1 = jet.d[0].add_c(xi[0]).scale(dgamma[0]);
    let t2 = jet.d[1].add_c(xi[1]).scale(dgamma[1]);
    jet.laplacian().scale(gamma) + t1 + t2
}

/// Strong dual residual at one point:
/// `d1(beta v2) - d2(beta v1)` with `v = zeta + Q grad w`, which expands to
/// `grad(beta) x v + beta laplacian(w)` (the mixed second derivative of `w`
/// cancels identically).
pub fn strong_dual_residual_s<S: Scalar>(
    jet: &Jet2<S>,
    beta: f64,
    dbeta: [f64; 2],
    zeta: [f64; 2],
) -> S {
    let v1 = (-jet.d[1]).add_c(zeta[0]);
    let v2 = jet.d[0].add_c(zeta[1]);
    jet.laplacian().scale(beta) + v2.scale(dbeta[0]) - v1.scale(dbeta[1])
}

/// Strong primal residual of a network at a point.
pub fn strong_primal_residual(
    net: &PeriodicNet,
    mat: &MaterialField,
    xi: [f64; 2],
    x: [f64; 2],
) -> Result<f64, LossError> {
    if !mat.is_smoothed() {
        return Err(LossError::StrongNeedsSmooth);
    }
    let jet = net.forward(x);
    Ok(strong_primal_residual_s(
        &jet,
        mat.gamma(x),
        mat.gamma_gradient(x)?,
        xi,
    ))
}

/// Strong dual residual of a network at a point.
pub fn strong_dual_residual(
    net: &PeriodicNet,
    mat: &MaterialField,
    zeta: [f64; 2],
    x: [f64; 2],
) -> Result<f64, LossError> {
    if !mat.is_smoothed() {
        return Err(LossError::StrongNeedsSmooth);
    }
    let jet = net.forward(x);
    Ok(strong_dual_residual_s(
        &jet,
        mat.beta(x),
        mat.beta_gradient(x)?,
        zeta,
    ))
}

/// Mean squared strong residual over the grid. Pointwise reference path;
/// training uses the batched engine, which must agree with this.
pub fn strong_loss_reference(
    net: &PeriodicNet,
    mat: &MaterialField,
    form: Form,
    loading: [f64; 2],
    grid: &CollocationGrid,
    red: Reduction,
) -> Result<f64, LossError> {
    if !mat.is_smoothed() {
        return Err(LossError::StrongNeedsSmooth);
    }
    let n = grid.len();
    let sum = par::sum_indexed(n, red, |i| {
        let x = grid.point(i);
        let jet = net.forward(x);
        let r = match form {
            Form::Primal => strong_primal_residual_s(
                &jet,
                mat.gamma(x),
                mat.gamma_gradient(x).expect("smoothed"),
                loading,
            ),
            Form::Dual => strong_dual_residual_s(
                &jet,
                mat.beta(x),
                mat.beta_gradient(x).expect("smoothed"),
                loading,
            ),
        };
        r * r
    });
    Ok(sum / n as f64)
}

/// Weak primal residual vector: entry `k` is the integral of
/// `grad(phi_k) . A (xi + grad u)`.
pub fn weak_residual_primal(
    net: &PeriodicNet,
    mat: &MaterialField,
    xi: [f64; 2],
    table: &BasisTable,
    grid: &CollocationGrid,
    red: Reduction,
) -> Result<Vec<f64>, LossError> {
    if table.pts != grid.len() {
        return Err(LossError::Basis(BasisError::LengthMismatch {
            expected: grid.len(),
            got: table.pts,
        }));
    }
    let w = grid.weight();
    let (n_t, pts) = (table.n_t, table.pts);
    Ok(par::sum_vectors(pts, n_t, red, |p, acc| {
        let x = grid.point(p);
        let jet = net.forward(x);
        let a = mat.conductivity(x);
        let flux = matvec2(a, [xi[0] + jet.d[0], xi[1] + jet.d[1]]);
        for (k, r) in acc.iter_mut().enumerate() {
            *r += w * (table.g1[k * pts + p] * flux[0] + table.g2[k * pts + p] * flux[1]);
        }
    }))
}

/// Weak dual residual vector: entry `k` is the integral of
/// `(Q grad psi_k) . A^{-1} (zeta + Q grad w)`.
pub fn weak_residual_dual(
    net: &PeriodicNet,
    mat: &MaterialField,
    zeta: [f64; 2],
    table: &BasisTable,
    grid: &CollocationGrid,
    red: Reduction,
) -> Result<Vec<f64>, LossError> {
    if table.pts != grid.len() {
        return Err(LossError::Basis(BasisError::LengthMismatch {
            expected: grid.len(),
            got: table.pts,
        }));
    }
    let w = grid.weight();
    let (n_t, pts) = (table.n_t, table.pts);
    Ok(par::sum_vectors(pts, n_t, red, |p, acc| {
        let x = grid.point(p);
        let jet = net.forward(x);
        let ai = mat.resistivity(x);
        let field = matvec2(ai, [zeta[0] - jet.d[1], zeta[1] + jet.d[0]]);
        for (k, r) in acc.iter_mut().enumerate() {
            // Q grad psi = (-g2, g1).
            let qg = [-table.g2[k * pts + p], table.g1[k * pts + p]];
            *r += w * (qg[0] * field[0] + qg[1] * field[1]);
        }
    }))
}

/// The Gram-weighted weak loss `r^T G^{-1} r`.
pub fn weak_loss(r: &[f64], gram: &Gram) -> Result<f64, LossError> {
    Ok(gram.weighted_square(r)?)
}

/// Precomputed weak-residual coefficients: with these, the residual vector
/// is `r = C1 v1 + C2 v2` over the pointwise trial field `v`, and the seed
/// for the backward pass is `C^T s`. Primal: `C_d[k, p] = w gamma_p
/// g_d(phi_k, p)` against `v = xi + grad u`. Dual:
/// `C[k, p] = w beta_p (Q grad psi_k)` against `v = zeta + Q grad w`.
#[derive(Debug, Clone)]
pub struct WeakTables {
    pub n_t: usize,
    pub pts: usize,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

pub fn weak_tables(
    form: Form,
    table: &BasisTable,
    mtab: &MaterialTable,
    grid: &CollocationGrid,
) -> WeakTables {
    assert_eq!(table.pts, grid.len());
    let w = grid.weight();
    let (n_t, pts) = (table.n_t, table.pts);
    let mut c1 = vec![0.0; n_t * pts];
    let mut c2 = vec![0.0; n_t * pts];
    match form {
        Form::Primal => {
            for k in 0..n_t {
                for p in 0..pts {
                    c1[k * pts + p] = w * mtab.gamma[p] * table.g1[k * pts + p];
                    c2[k * pts + p] = w * mtab.gamma[p] * table.g2[k * pts + p];
                }
            }
        }
        Form::Dual => {
            for k in 0..n_t {
                for p in 0..pts {
                    c1[k * pts + p] = -w * mtab.beta[p] * table.g2[k * pts + p];
                    c2[k * pts + p] = w * mtab.beta[p] * table.g1[k * pts + p];
                }
            }
        }
    }
    WeakTables { n_t, pts, c1, c2 }
}

impl WeakTables {
    /// Residual vector from the pointwise trial field components.
    pub fn residual(&self, v1: &[f64], v2: &[f64]) -> Vec<f64> {
        assert_eq!(v1.len(), self.pts);
        assert_eq!(v2.len(), self.pts);
        let mut r = vec![0.0; self.n_t];
        crate::batch::gemm_nn(self.n_t, self.pts, 1, &self.c1, v1, 0.0, &mut r);
        crate::batch::gemm_nn(self.n_t, self.pts, 1, &self.c2, v2, 1.0, &mut r);
        r
    }

    /// Pointwise seeds `(C1^T s, C2^T s)` for a weight vector `s`.
    pub fn seeds(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(s.len(), self.n_t);
        let mut d1 = vec![0.0; self.pts];
        let mut d2 = vec![0.0; self.pts];
        crate::batch::gemm_tn(self.pts, self.n_t, 1, &self.c1, s, 0.0, &mut d1);
        crate::batch::gemm_tn(self.pts, self.n_t, 1, &self.c2, s, 0.0, &mut d2);
        (d1, d2)
    }
}
