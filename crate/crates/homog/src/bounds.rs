//! Quick quadrature estimates of the homogenized coefficient and
//! guaranteed bounds via P1 projection.
//!
//! Quick estimates evaluate the primal/dual energies with the collocation
//! rule and carry no ordering guarantee. Guaranteed bounds project the
//! network onto the P1 space of an aligned mesh, where fluxes are constant
//! per triangle and the energy integrals against the sharp coefficient are
//! exact, so any trial pair brackets the true coefficient: the primal
//! energy of an admissible field can only over-shoot the infimum, and the
//! reciprocal dual energy can only under-shoot it.

use crate::fem::{self, FemError, TriMesh};
use crate::material::{exact_effective, wrap, MaterialField, PhasePair};
use crate::network::PeriodicNet;
use crate::par::{self, Reduction};
use crate::quadrature::CollocationGrid;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug)]
pub enum BoundsError {
    /// Projection by value copy needs the collocation grid and mesh to
    /// share their nodes.
    GridMeshMismatch { grid_n: usize, mesh_n: usize },
    LengthMismatch { expected: usize, got: usize },
    Fem(FemError),
}

impl fmt::Display for BoundsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundsError::GridMeshMismatch { grid_n, mesh_n } => write!(
                f,
                "collocation grid ({grid_n} per side) does not share nodes with the mesh ({mesh_n} per side)"
            ),
            BoundsError::LengthMismatch { expected, got } => {
                write!(f, "value vector length {got} does not match {expected} nodes")
            }
            BoundsError::Fem(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for BoundsError {}

impl From<FemError> for BoundsError {
    fn from(e: FemError) -> Self {
        BoundsError::Fem(e)
    }
}

/// Mean of the primal energy density sampled at grid points, from gradient
/// component tables (the training loop reuses its forward channels here).
pub fn quick_estimate_primal_from(
    gamma: &[f64],
    d1: &[f64],
    d2: &[f64],
    xi: [f64; 2],
    red: Reduction,
) -> f64 {
    let n = gamma.len();
    assert_eq!(d1.len(), n);
    assert_eq!(d2.len(), n);
    par::sum_indexed(n, red, |p| {
        let v1 = xi[0] + d1[p];
        let v2 = xi[1] + d2[p];
        gamma[p] * (v1 * v1 + v2 * v2)
    }) / n as f64
}

/// Reciprocal mean of the dual energy density: the scalar estimate is
/// `1 / B_11` for the loading `zeta`.
pub fn quick_estimate_dual_from(
    beta: &[f64],
    d1: &[f64],
    d2: &[f64],
    zeta: [f64; 2],
    red: Reduction,
) -> f64 {
    let n = beta.len();
    assert_eq!(d1.len(), n);
    assert_eq!(d2.len(), n);
    let b11 = par::sum_indexed(n, red, |p| {
        let v1 = zeta[0] - d2[p];
        let v2 = zeta[1] + d1[p];
        beta[p] * (v1 * v1 + v2 * v2)
    }) / n as f64;
    1.0 / b11
}

/// Quick primal estimate of a network on the collocation grid.
pub fn quick_estimate_primal(
    net: &PeriodicNet,
    mat: &MaterialField,
    xi: [f64; 2],
    grid: &CollocationGrid,
    red: Reduction,
) -> f64 {
    par::sum_indexed(grid.len(), red, |p| {
        let x = grid.point(p);
        let jet = net.forward(x);
        let v1 = xi[0] + jet.d[0];
        let v2 = xi[1] + jet.d[1];
        mat.gamma(x) * (v1 * v1 + v2 * v2)
    }) / grid.len() as f64
}

/// Quick dual estimate `1 / B_11` of a stream-function network.
pub fn quick_estimate_dual(
    net: &PeriodicNet,
    mat: &MaterialField,
    zeta: [f64; 2],
    grid: &CollocationGrid,
    red: Reduction,
) -> f64 {
    let b11 = par::sum_indexed(grid.len(), red, |p| {
        let x = grid.point(p);
        let jet = net.forward(x);
        let v1 = zeta[0] - jet.d[1];
        let v2 = zeta[1] + jet.d[0];
        mat.beta(x) * (v1 * v1 + v2 * v2)
    }) / grid.len() as f64;
    1.0 / b11
}

/// Nodal interpolation of a network onto the P1 space.
pub fn project_to_p1(net: &PeriodicNet, mesh: &TriMesh) -> Vec<f64> {
    let mut dofs = vec![0.0; mesh.n_dofs()];
    par::fill_slice(&mut dofs, |d| net.value_at(mesh.node(d)));
    dofs
}

/// Projection by copying collocation-grid values: valid exactly when grid
/// points and mesh nodes coincide (same resolution), since both use the
/// same row-major layout over the same lattice.
pub fn project_grid_values(
    values: &[f64],
    grid: &CollocationGrid,
    mesh: &TriMesh,
) -> Result<Vec<f64>, BoundsError> {
    if grid.n() != mesh.n() {
        return Err(BoundsError::GridMeshMismatch {
            grid_n: grid.n(),
            mesh_n: mesh.n(),
        });
    }
    if values.len() != grid.len() {
        return Err(BoundsError::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    Ok(values.to_vec())
}

/// Value and gradient of a P1 field at an arbitrary (wrapped) point.
pub fn p1_value_and_gradient(mesh: &TriMesh, dofs: &[f64], x: [f64; 2]) -> (f64, [f64; 2]) {
    let h = mesh.spacing();
    let n = mesh.n();
    let px = wrap(x[0]);
    let py = wrap(x[1]);
    let ix = ((px / h) as usize).min(n - 1);
    let iy = ((py / h) as usize).min(n - 1);
    let (lx, ly) = (px - ix as f64 * h, py - iy as f64 * h);
    // The cell diagonal runs lower-left to upper-right; below it lies the
    // "lower" triangle.
    let t = 2 * (iy * n + ix) + usize::from(ly > lx);
    let tri = mesh.tri(t);
    let g = fem::tri_gradient(mesh, dofs, t);
    let v0 = dofs[tri.dofs[0]];
    let a = tri.verts[0];
    (v0 + g[0] * (px - a[0]) + g[1] * (py - a[1]), g)
}

/// Signed relative deviations of the four reported numbers from the
/// closed-form reference.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RelativeErrors {
    pub primal_estimate: f64,
    pub dual_estimate: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
}

/// Quick estimates plus guaranteed bounds for one trained pair. The bounds
/// always refer to the sharp material; the quick estimates carry no
/// ordering guarantee.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundReport {
    pub primal_estimate: f64,
    pub dual_estimate: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    /// Relative spread of the quick estimates, `(primal - dual) / primal`.
    pub gap: f64,
    pub exact_reference: f64,
    pub relative_errors: RelativeErrors,
}

/// Exact per-triangle energies of projected trial fields against the sharp
/// coefficient: the guaranteed (upper, lower) pair.
pub fn guaranteed_pair(
    mesh: &TriMesh,
    phases: PhasePair,
    primal_dofs: &[f64],
    dual_dofs: &[f64],
    xi: [f64; 2],
    zeta: [f64; 2],
) -> Result<(f64, f64), BoundsError> {
    for dofs in [primal_dofs, dual_dofs] {
        if dofs.len() != mesh.n_dofs() {
            return Err(BoundsError::LengthMismatch {
                expected: mesh.n_dofs(),
                got: dofs.len(),
            });
        }
    }
    let mat = MaterialField::piecewise(phases);
    let upper = fem::energy_with(mesh, |x| mat.gamma(x), xi, primal_dofs, false);
    let b11 = fem::energy_with(mesh, |x| mat.beta(x), zeta, dual_dofs, true);
    Ok((upper, 1.0 / b11))
}

/// Assemble the full report from projected fields and previously computed
/// quick estimates.
#[allow(clippy::too_many_arguments)]
pub fn guaranteed_bounds(
    mesh: &TriMesh,
    phases: PhasePair,
    primal_dofs: &[f64],
    dual_dofs: &[f64],
    xi: [f64; 2],
    zeta: [f64; 2],
    primal_estimate: f64,
    dual_estimate: f64,
) -> Result<BoundReport, BoundsError> {
    let (upper_bound, lower_bound) = guaranteed_pair(mesh, phases, primal_dofs, dual_dofs, xi, zeta)?;
    let exact_reference = exact_effective(phases);
    let rel = |v: f64| (v - exact_reference) / exact_reference;
    Ok(BoundReport {
        primal_estimate,
        dual_estimate,
        upper_bound,
        lower_bound,
        gap: (primal_estimate - dual_estimate) / primal_estimate,
        exact_reference,
        relative_errors: RelativeErrors {
            primal_estimate: rel(primal_estimate),
            dual_estimate: rel(dual_estimate),
            upper_bound: rel(upper_bound),
            lower_bound: rel(lower_bound),
        },
    })
}
