//! P1 finite-element benchmark on the periodic cell.
//!
//! The cell is cut into an `n x n` grid of squares, each split along its
//! lower-left to upper-right diagonal. Degrees of freedom are the `n * n`
//! periodic grid nodes; triangles on the right and top rim wrap around.
//! Coefficients are sampled at triangle centroids, which is exact for the
//! sharp material whenever `n` is a multiple of four, because the inclusion
//! edges then lie on mesh lines and every triangle is single-phase.
//!
//! The primal solve minimizes the energy of `xi + grad u` against `A`; the
//! dual solve minimizes the energy of `zeta + Q grad w` against `A^{-1}`.
//! Since the quarter-turn `Q` preserves dot products, both stiffness
//! matrices are weighted Laplacians and only the load vectors differ.

pub mod sparse;

use crate::losses::Form;
use crate::material::{CELL_AREA, MaterialField};
use crate::par::{self, Reduction};
use sparse::{jacobi_cg, Csr, SparseError};
use std::f64::consts::TAU;
use std::fmt;

#[derive(Debug)]
pub enum FemError {
    /// Mesh lines must contain the inclusion edges so triangles stay
    /// single-phase; that needs `n` divisible by four.
    ResolutionNotMultipleOfFour { n: usize },
    NonConvergence { iterations: usize, residual: f64 },
    LengthMismatch { expected: usize, got: usize },
    Sparse(SparseError),
}

impl fmt::Display for FemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FemError::ResolutionNotMultipleOfFour { n } => {
                write!(f, "mesh resolution {n} is not a positive multiple of four")
            }
            FemError::NonConvergence {
                iterations,
                residual,
            } => write!(
                f,
                "conjugate gradients stopped after {iterations} iterations at relative residual {residual:.3e}"
            ),
            FemError::LengthMismatch { expected, got } => {
                write!(f, "value vector length {got} does not match {expected} degrees of freedom")
            }
            FemError::Sparse(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FemError {}

impl From<SparseError> for FemError {
    fn from(e: SparseError) -> Self {
        FemError::Sparse(e)
    }
}

/// One triangle: periodic degree-of-freedom indices plus unwrapped vertex
/// coordinates (rim triangles keep coordinates beyond the cell so their
/// geometry is right even though their indices wrap).
#[derive(Debug, Clone, Copy)]
pub struct Tri {
    pub dofs: [usize; 3],
    pub verts: [[f64; 2]; 3],
}

/// Structured periodic triangulation. Triangles are implicit: cell
/// `(ix, iy)` holds triangle `2 (iy n + ix)` (lower: lower-left,
/// lower-right, upper-right) and its successor (upper: lower-left,
/// upper-right, upper-left).
#[derive(Debug, Clone, Copy)]
pub struct TriMesh {
    n: usize,
    h: f64,
}

impl TriMesh {
    pub fn periodic(n: usize) -> Result<TriMesh, FemError> {
        if n == 0 || n % 4 != 0 {
            return Err(FemError::ResolutionNotMultipleOfFour { n });
        }
        Ok(TriMesh { n, h: TAU / n as f64 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn n_dofs(&self) -> usize {
        self.n * self.n
    }

    pub fn n_tris(&self) -> usize {
        2 * self.n * self.n
    }

    /// Every triangle has the same area `h^2 / 2`.
    pub fn tri_area(&self) -> f64 {
        0.5 * self.h * self.h
    }

    /// Periodic degree of freedom for grid node `(ix, iy)`.
    pub fn dof(&self, ix: usize, iy: usize) -> usize {
        (iy % self.n) * self.n + (ix % self.n)
    }

    /// Coordinates of a degree of freedom's representative node.
    pub fn node(&self, dof: usize) -> [f64; 2] {
        [(dof % self.n) as f64 * self.h, (dof / self.n) as f64 * self.h]
    }

    pub fn tri(&self, t: usize) -> Tri {
        debug_assert!(t < self.n_tris());
        let cell = t / 2;
        let ix = cell % self.n;
        let iy = cell / self.n;
        let (x0, y0) = (ix as f64 * self.h, iy as f64 * self.h);
        let ll = ([x0, y0], self.dof(ix, iy));
        let lr = ([x0 + self.h, y0], self.dof(ix + 1, iy));
        let ur = ([x0 + self.h, y0 + self.h], self.dof(ix + 1, iy + 1));
        let ul = ([x0, y0 + self.h], self.dof(ix, iy + 1));
        let picked = if t % 2 == 0 { [ll, lr, ur] } else { [ll, ur, ul] };
        Tri {
            dofs: [picked[0].1, picked[1].1, picked[2].1],
            verts: [picked[0].0, picked[1].0, picked[2].0],
        }
    }
}

/// Constant gradients of the three barycentric basis functions.
pub fn p1_gradients(verts: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let [a, b, c] = *verts;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ]
}

pub fn centroid(verts: &[[f64; 2]; 3]) -> [f64; 2] {
    [
        (verts[0][0] + verts[1][0] + verts[2][0]) / 3.0,
        (verts[0][1] + verts[1][1] + verts[2][1]) / 3.0,
    ]
}

fn maybe_rotate(g: [f64; 2], rotate: bool) -> [f64; 2] {
    if rotate {
        [-g[1], g[0]]
    } else {
        g
    }
}

/// Assemble the weighted-Laplacian stiffness and load for a scalar
/// coefficient sampled at centroids. With `rotate` the load pairs the
/// quarter-turned test gradients against the loading (the stream-function
/// form); the stiffness is unchanged because the quarter-turn preserves
/// dot products.
pub(crate) fn assemble_with(
    mesh: &TriMesh,
    coef: impl Fn([f64; 2]) -> f64 + Sync + Send,
    loading: [f64; 2],
    rotate: bool,
) -> (Vec<(usize, usize, f64)>, Vec<f64>) {
    let area = mesh.tri_area();
    let pieces = par::map_chunks(mesh.n_tris(), |range| {
        let mut trips = Vec::with_capacity(range.len() * 9);
        let mut load = Vec::with_capacity(range.len() * 3);
        for t in range {
            let tri = mesh.tri(t);
            let g = p1_gradients(&tri.verts);
            let c = coef(centroid(&tri.verts));
            for i in 0..3 {
                for j in 0..3 {
                    let k = area * c * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    trips.push((tri.dofs[i], tri.dofs[j], k));
                }
                let gi = maybe_rotate(g[i], rotate);
                load.push((
                    tri.dofs[i],
                    -area * c * (gi[0] * loading[0] + gi[1] * loading[1]),
                ));
            }
        }
        (trips, load)
    });
    let mut triplets = Vec::with_capacity(mesh.n_tris() * 9);
    let mut b = vec![0.0; mesh.n_dofs()];
    for (trips, load) in pieces {
        triplets.extend(trips);
        for (dof, v) in load {
            b[dof] += v;
        }
    }
    (triplets, b)
}

/// Pin one degree of freedom to zero to remove the constant null space:
/// drop its row and column and put a unit on the diagonal.
pub(crate) fn pin_dof(
    triplets: Vec<(usize, usize, f64)>,
    b: &mut [f64],
    dof: usize,
) -> Vec<(usize, usize, f64)> {
    let mut kept: Vec<_> = triplets
        .into_iter()
        .filter(|&(i, j, _)| i != dof && j != dof)
        .collect();
    kept.push((dof, dof, 1.0));
    b[dof] = 0.0;
    kept
}

/// Assemble the pinned system for a cell problem in either form.
pub fn assemble(
    mesh: &TriMesh,
    mat: &MaterialField,
    form: Form,
    loading: [f64; 2],
) -> Result<(Csr, Vec<f64>), FemError> {
    let (triplets, mut b) = match form {
        Form::Primal => assemble_with(mesh, |x| mat.gamma(x), loading, false),
        Form::Dual => assemble_with(mesh, |x| mat.beta(x), loading, true),
    };
    let triplets = pin_dof(triplets, &mut b, 0);
    Ok((Csr::from_triplets(mesh.n_dofs(), &triplets)?, b))
}

/// A converged periodic cell solve. Values are mean-shifted so the
/// corrector has zero average.
#[derive(Debug, Clone)]
pub struct FemSolution {
    pub n: usize,
    pub form: Form,
    pub loading: [f64; 2],
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn solve(
    mesh: &TriMesh,
    mat: &MaterialField,
    form: Form,
    loading: [f64; 2],
    tol: f64,
    max_iter: usize,
) -> Result<FemSolution, FemError> {
    let (a, b) = assemble(mesh, mat, form, loading)?;
    let (mut x, report) = jacobi_cg(&a, &b, tol, max_iter)?;
    if !report.converged {
        return Err(FemError::NonConvergence {
            iterations: report.iterations,
            residual: report.residual,
        });
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in &mut x {
        *v -= mean;
    }
    Ok(FemSolution {
        n: mesh.n(),
        form,
        loading,
        values: x,
        iterations: report.iterations,
        residual: report.residual,
    })
}

/// Gradient of a P1 field on triangle `t`.
pub fn tri_gradient(mesh: &TriMesh, values: &[f64], t: usize) -> [f64; 2] {
    let tri = mesh.tri(t);
    let g = p1_gradients(&tri.verts);
    let mut out = [0.0, 0.0];
    for i in 0..3 {
        out[0] += values[tri.dofs[i]] * g[i][0];
        out[1] += values[tri.dofs[i]] * g[i][1];
    }
    out
}

/// Cell-averaged energy density of `loading + field` against the
/// coefficient, where `field` is the (optionally quarter-turned) gradient
/// of the P1 potential.
pub(crate) fn energy_with(
    mesh: &TriMesh,
    coef: impl Fn([f64; 2]) -> f64 + Sync + Send,
    loading: [f64; 2],
    values: &[f64],
    rotate: bool,
) -> f64 {
    let area = mesh.tri_area();
    let total = par::sum_indexed(mesh.n_tris(), Reduction::Ordered, |t| {
        let tri = mesh.tri(t);
        let g = maybe_rotate(tri_gradient(mesh, values, t), rotate);
        let v = [loading[0] + g[0], loading[1] + g[1]];
        area * coef(centroid(&tri.verts)) * (v[0] * v[0] + v[1] * v[1])
    });
    total / CELL_AREA
}

/// Effective-coefficient estimate in the loading direction. The primal
/// energy over-estimates and the reciprocal dual energy under-estimates,
/// so the pair brackets the homogenized coefficient.
pub fn effective_estimate(
    mesh: &TriMesh,
    mat: &MaterialField,
    sol: &FemSolution,
) -> Result<f64, FemError> {
    if sol.values.len() != mesh.n_dofs() {
        return Err(FemError::LengthMismatch {
            expected: mesh.n_dofs(),
            got: sol.values.len(),
        });
    }
    Ok(match sol.form {
        Form::Primal => energy_with(mesh, |x| mat.gamma(x), sol.loading, &sol.values, false),
        Form::Dual => {
            1.0 / energy_with(mesh, |x| mat.beta(x), sol.loading, &sol.values, true)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{exact_effective, voigt_reuss, PhasePair};
    use std::f64::consts::PI;

    #[test]
    fn resolution_must_be_multiple_of_four() {
        assert!(matches!(
            TriMesh::periodic(6),
            Err(FemError::ResolutionNotMultipleOfFour { n: 6 })
        ));
        assert!(matches!(
            TriMesh::periodic(0),
            Err(FemError::ResolutionNotMultipleOfFour { n: 0 })
        ));
        assert!(TriMesh::periodic(8).is_ok());
    }

    #[test]
    fn triangle_areas_tile_the_cell() {
        let mesh = TriMesh::periodic(8).unwrap();
        let total = mesh.tri_area() * mesh.n_tris() as f64;
        assert!((total - CELL_AREA).abs() <= 1e-12);
        // Signed area from the vertex coordinates agrees and is positive.
        for t in [0, 1, 17, mesh.n_tris() - 1] {
            let tri = mesh.tri(t);
            let [a, b, c] = tri.verts;
            let two_a = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            assert!((0.5 * two_a - mesh.tri_area()).abs() <= 1e-12);
        }
    }

    #[test]
    fn rim_triangles_wrap_their_dofs() {
        let mesh = TriMesh::periodic(4).unwrap();
        // Top-right cell, lower triangle: corners (3,3), (4,3), (4,4) wrap
        // to dofs 15, 12, 0.
        let tri = mesh.tri(2 * (3 * 4 + 3));
        assert_eq!(tri.dofs, [15, 12, 0]);
        // Its geometry stays unwrapped.
        assert!((tri.verts[1][0] - TAU).abs() <= 1e-12);
        assert!((tri.verts[2][1] - TAU).abs() <= 1e-12);
    }

    #[test]
    fn p1_gradients_partition_of_unity() {
        let verts = [[0.3, 0.1], [1.7, 0.4], [0.9, 2.0]];
        let g = p1_gradients(&verts);
        for d in 0..2 {
            let s: f64 = (0..3).map(|i| g[i][d]).sum();
            assert!(s.abs() <= 1e-14);
        }
        // Each basis function is affine, one at its own vertex and zero at
        // the others; rebuild it from the gradient and check all nine
        // vertex values.
        let lam = |x: [f64; 2], i: usize| {
            let v = verts[i];
            1.0 + g[i][0] * (x[0] - v[0]) + g[i][1] * (x[1] - v[1])
        };
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((lam(verts[j], i) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn homogeneous_material_has_zero_corrector() {
        let mesh = TriMesh::periodic(8).unwrap();
        let phases = PhasePair::new(0.7, 0.7).unwrap();
        let mat = MaterialField::piecewise(phases);
        let sol = solve(&mesh, &mat, Form::Primal, [1.0, 0.0], 1e-12, 1000).unwrap();
        assert!(sol.values.iter().all(|v| v.abs() <= 1e-10));
        let est = effective_estimate(&mesh, &mat, &sol).unwrap();
        assert!((est - 0.7).abs() <= 1e-12);
        let dual = solve(&mesh, &mat, Form::Dual, [1.0, 0.0], 1e-12, 1000).unwrap();
        let est = effective_estimate(&mesh, &mat, &dual).unwrap();
        assert!((est - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn laminate_estimates_are_exact_means() {
        // Stripes in x1 aligned with the mesh: the corrector is piecewise
        // linear in x1, so the P1 space contains it and the energy equals
        // the harmonic mean exactly. Loading across the stripes sees the
        // arithmetic mean with a zero corrector.
        let mesh = TriMesh::periodic(8).unwrap();
        let (a, b) = (1.0, 4.0);
        let stripes = move |x: [f64; 2]| if x[0] < PI { a } else { b };
        let (trips, mut rhs) = assemble_with(&mesh, stripes, [1.0, 0.0], false);
        let trips = pin_dof(trips, &mut rhs, 0);
        let k = Csr::from_triplets(mesh.n_dofs(), &trips).unwrap();
        let (mut x, report) = jacobi_cg(&k, &rhs, 1e-13, 2000).unwrap();
        assert!(report.converged);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        let est = energy_with(&mesh, stripes, [1.0, 0.0], &x, false);
        let harmonic = 2.0 * a * b / (a + b);
        assert!((est - harmonic).abs() <= 1e-10, "{est} vs {harmonic}");

        let (trips, mut rhs) = assemble_with(&mesh, stripes, [0.0, 1.0], false);
        let trips = pin_dof(trips, &mut rhs, 0);
        let k = Csr::from_triplets(mesh.n_dofs(), &trips).unwrap();
        let (x, _) = jacobi_cg(&k, &rhs, 1e-13, 2000).unwrap();
        assert!(x.iter().all(|v| v.abs() <= 1e-10));
        let est = energy_with(&mesh, stripes, [0.0, 1.0], &x, false);
        let arithmetic = 0.5 * (a + b);
        assert!((est - arithmetic).abs() <= 1e-10, "{est} vs {arithmetic}");
    }

    #[test]
    fn square_inclusion_estimates_bracket_the_reference() {
        let mesh = TriMesh::periodic(16).unwrap();
        let phases = PhasePair::standard();
        let mat = MaterialField::piecewise(phases);
        let exact = exact_effective(phases);
        let upper = {
            let sol = solve(&mesh, &mat, Form::Primal, [1.0, 0.0], 1e-12, 4000).unwrap();
            effective_estimate(&mesh, &mat, &sol).unwrap()
        };
        let lower = {
            let sol = solve(&mesh, &mat, Form::Dual, [1.0, 0.0], 1e-12, 4000).unwrap();
            effective_estimate(&mesh, &mat, &sol).unwrap()
        };
        assert!(lower < exact && exact < upper, "{lower} < {exact} < {upper}");
        // Even this coarse mesh lands within a percent on each side.
        assert!(upper - lower <= 0.02 * exact, "gap {}", upper - lower);
        let (voigt, reuss) = voigt_reuss(phases, 0.25);
        assert!(reuss < lower && upper < voigt);
    }

    #[test]
    fn small_system_matches_dense_lu_both_forms() {
        let mesh = TriMesh::periodic(8).unwrap();
        let mat = MaterialField::piecewise(PhasePair::standard());
        for form in [Form::Primal, Form::Dual] {
            let (a, b) = assemble(&mesh, &mat, form, [1.0, 0.0]).unwrap();
            let (x, report) = jacobi_cg(&a, &b, 1e-14, 4000).unwrap();
            assert!(report.converged);
            let lu = a.to_dense().lu();
            let xd = lu.solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
            for i in 0..mesh.n_dofs() {
                assert!(
                    (x[i] - xd[i]).abs() <= 1e-10,
                    "{form} dof {i}: {} vs {}",
                    x[i],
                    xd[i]
                );
            }
        }
    }

    #[test]
    fn solve_is_bitwise_reproducible_across_par_modes() {
        let mesh = TriMesh::periodic(8).unwrap();
        let mat = MaterialField::piecewise(PhasePair::standard());
        let a = solve(&mesh, &mat, Form::Primal, [1.0, 0.0], 1e-12, 2000).unwrap();
        let b = crate::par::with_sequential(|| {
            solve(&mesh, &mat, Form::Primal, [1.0, 0.0], 1e-12, 2000).unwrap()
        });
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn solution_has_zero_mean() {
        let mesh = TriMesh::periodic(8).unwrap();
        let mat = MaterialField::piecewise(PhasePair::standard());
        let sol = solve(&mesh, &mat, Form::Primal, [1.0, 0.0], 1e-12, 2000).unwrap();
        let mean = sol.values.iter().sum::<f64>() / sol.values.len() as f64;
        assert!(mean.abs() <= 1e-12);
        assert!(sol.values.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn nonconvergence_is_an_error() {
        let mesh = TriMesh::periodic(8).unwrap();
        let mat = MaterialField::piecewise(PhasePair::standard());
        assert!(matches!(
            solve(&mesh, &mat, Form::Primal, [1.0, 0.0], 1e-14, 2),
            Err(FemError::NonConvergence { .. })
        ));
    }
}
