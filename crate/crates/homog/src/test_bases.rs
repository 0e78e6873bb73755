//! Test function bases for the weak-form losses, and the Gram weighting.
//!
//! Two families: trigonometric modes `sin/cos(m x1 + n x2)` enumerated over
//! a frequency rectangle, and small fixed random periodic networks. The weak
//! loss is `r^T G^{-1} r`; for the spectral family the customary weighting
//! is the closed-form diagonal `1/(m^2 + n^2)` (a constant factor off the
//! true Gram diagonal, which only rescales the loss), while the network
//! family gets its numeric Gram matrix, with a diagonal fallback when that
//! matrix is too ill-conditioned to factor trustworthily.

use crate::batch::{gemm_nt, BatchWorkspace, MASK_GRAD};
use crate::network::{NetworkConfig, PeriodicNet};
use crate::par;
use crate::quadrature::CollocationGrid;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum BasisError {
    /// The frequency rectangle contains no nonzero mode.
    EmptySpectral { m_max: usize, n_max: usize },
    /// A network basis needs at least one member.
    EmptyNetwork,
    /// The numeric Gram diagonal had a zero entry, so even the diagonal
    /// weighting is singular.
    ZeroDiagonal { index: usize },
    /// Cholesky failed on a matrix the eigenvalue screen accepted.
    NotPositiveDefinite,
    LengthMismatch { expected: usize, got: usize },
}

impl fmt::Display for BasisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisError::EmptySpectral { m_max, n_max } => {
                write!(f, "spectral rectangle ({m_max}, {n_max}) has no nonzero mode")
            }
            BasisError::EmptyNetwork => write!(f, "network basis needs at least one member"),
            BasisError::ZeroDiagonal { index } => {
                write!(f, "gram diagonal entry {index} is zero")
            }
            BasisError::NotPositiveDefinite => {
                write!(f, "gram matrix is not positive definite")
            }
            BasisError::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} residual entries, got {got}")
            }
        }
    }
}

impl std::error::Error for BasisError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Parity {
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Mode {
    parity: Parity,
    m: usize,
    n: usize,
}

/// Trigonometric test functions over the frequency rectangle
/// `0 <= m <= m_max, 0 <= n <= n_max, (m, n) != (0, 0)`: first every sine,
/// then every cosine, each family in lexicographic `(m, n)` order. The
/// cardinality is `2 ((m_max + 1)(n_max + 1) - 1)`.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub m_max: usize,
    pub n_max: usize,
    modes: Vec<Mode>,
}

impl SpectralBasis {
    pub fn new(m_max: usize, n_max: usize) -> Result<Self, BasisError> {
        if (m_max + 1) * (n_max + 1) <= 1 {
            return Err(BasisError::EmptySpectral { m_max, n_max });
        }
        let freq = (0..=m_max)
            .flat_map(|m| (0..=n_max).map(move |n| (m, n)))
            .filter(|&(m, n)| (m, n) != (0, 0));
        let mut modes: Vec<Mode> = freq
            .clone()
            .map(|(m, n)| Mode {
                parity: Parity::Sin,
                m,
                n,
            })
            .collect();
        modes.extend(freq.map(|(m, n)| Mode {
            parity: Parity::Cos,
            m,
            n,
        }));
        Ok(SpectralBasis { m_max, n_max, modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn value(&self, k: usize, x: [f64; 2]) -> f64 {
        let Mode { parity, m, n } = self.modes[k];
        let arg = m as f64 * x[0] + n as f64 * x[1];
        match parity {
            Parity::Sin => arg.sin(),
            Parity::Cos => arg.cos(),
        }
    }

    pub fn grad(&self, k: usize, x: [f64; 2]) -> [f64; 2] {
        let Mode { parity, m, n } = self.modes[k];
        let (mf, nf) = (m as f64, n as f64);
        let arg = mf * x[0] + nf * x[1];
        match parity {
            Parity::Sin => [mf * arg.cos(), nf * arg.cos()],
            Parity::Cos => [-mf * arg.sin(), -nf * arg.sin()],
        }
    }

    /// The closed-form inverse diagonal weighting `1/(m^2 + n^2)`.
    pub fn inverse_gram_diag(&self) -> Vec<f64> {
        self.modes
            .iter()
            .map(|mode| 1.0 / ((mode.m * mode.m + mode.n * mode.n) as f64))
            .collect()
    }
}

/// Fixed random periodic networks used as test functions. Member `k` is
/// initialized from `seed + k` and never trained.
#[derive(Debug, Clone)]
pub struct NetworkBasis {
    pub config: NetworkConfig,
    pub seed: u64,
    nets: Vec<PeriodicNet>,
}

impl NetworkBasis {
    pub fn new(config: NetworkConfig, n_members: usize, seed: u64) -> Result<Self, BasisError> {
        if n_members == 0 {
            return Err(BasisError::EmptyNetwork);
        }
        let nets = (0..n_members)
            .map(|k| PeriodicNet::init(config, seed + k as u64))
            .collect();
        Ok(NetworkBasis { config, seed, nets })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn members(&self) -> &[PeriodicNet] {
        &self.nets
    }
}

/// Either test family behind one interface.
#[derive(Debug, Clone)]
pub enum TestBasis {
    Spectral(SpectralBasis),
    Network(NetworkBasis),
}

impl TestBasis {
    pub fn len(&self) -> usize {
        match self {
            TestBasis::Spectral(s) => s.len(),
            TestBasis::Network(n) => n.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, k: usize, x: [f64; 2]) -> f64 {
        match self {
            TestBasis::Spectral(s) => s.value(k, x),
            TestBasis::Network(n) => n.nets[k].value_at(x),
        }
    }

    pub fn grad(&self, k: usize, x: [f64; 2]) -> [f64; 2] {
        match self {
            TestBasis::Spectral(s) => s.grad(k, x),
            TestBasis::Network(n) => {
                let jet = n.nets[k].forward(x);
                jet.d
            }
        }
    }
}

/// Cached test-function gradients on a collocation grid: row `k` holds the
/// two gradient components of function `k` at every grid point.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub n_t: usize,
    pub pts: usize,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

/// Evaluate every test-function gradient on the grid once.
pub fn tabulate(basis: &TestBasis, grid: &CollocationGrid) -> BasisTable {
    let n_t = basis.len();
    let pts = grid.len();
    let mut g1 = vec![0.0; n_t * pts];
    let mut g2 = vec![0.0; n_t * pts];
    match basis {
        TestBasis::Spectral(s) => {
            for k in 0..n_t {
                let (r1, r2) = (&mut g1[k * pts..(k + 1) * pts], &mut g2[k * pts..(k + 1) * pts]);
                par::fill_slice(r1, |q| s.grad(k, grid.point(q))[0]);
                par::fill_slice(r2, |q| s.grad(k, grid.point(q))[1]);
            }
        }
        TestBasis::Network(nb) => {
            let points: Vec<[f64; 2]> = grid.points().collect();
            let mut ws = BatchWorkspace::new(nb.config, &points);
            for (k, net) in nb.nets.iter().enumerate() {
                ws.forward(&net.params, MASK_GRAD);
                g1[k * pts..(k + 1) * pts].copy_from_slice(ws.output().comp(crate::batch::CD1));
                g2[k * pts..(k + 1) * pts].copy_from_slice(ws.output().comp(crate::batch::CD2));
            }
        }
    }
    BasisTable { n_t, pts, g1, g2 }
}

/// Conditioning summary of a numeric Gram matrix.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GramReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub condition: f64,
}

/// The weighting `G^{-1}` applied to weak residual vectors.
#[derive(Clone)]
pub enum Gram {
    /// Cholesky-factored full matrix.
    Full {
        chol: Cholesky<f64, Dyn>,
        report: GramReport,
    },
    /// Diagonal of the numeric Gram matrix; `apply_inverse` divides by it.
    Diagonal { diag: Vec<f64> },
    /// Closed-form inverse diagonal; `apply_inverse` multiplies by it.
    InverseDiagonal { inv_diag: Vec<f64> },
}

impl fmt::Debug for Gram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gram::Full { report, .. } => f.debug_struct("Gram::Full").field("report", report).finish(),
            Gram::Diagonal { diag } => f.debug_struct("Gram::Diagonal").field("len", &diag.len()).finish(),
            Gram::InverseDiagonal { inv_diag } => f
                .debug_struct("Gram::InverseDiagonal")
                .field("len", &inv_diag.len())
                .finish(),
        }
    }
}

impl Gram {
    pub fn len(&self) -> usize {
        match self {
            Gram::Full { chol, .. } => chol.l_dirty().nrows(),
            Gram::Diagonal { diag } => diag.len(),
            Gram::InverseDiagonal { inv_diag } => inv_diag.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `s = G^{-1} r`.
    pub fn apply_inverse(&self, r: &[f64]) -> Result<Vec<f64>, BasisError> {
        if r.len() != self.len() {
            return Err(BasisError::LengthMismatch {
                expected: self.len(),
                got: r.len(),
            });
        }
        Ok(match self {
            Gram::Full { chol, .. } => {
                let s = chol.solve(&DVector::from_column_slice(r));
                s.as_slice().to_vec()
            }
            Gram::Diagonal { diag } => r.iter().zip(diag).map(|(x, d)| x / d).collect(),
            Gram::InverseDiagonal { inv_diag } => {
                r.iter().zip(inv_diag).map(|(x, d)| x * d).collect()
            }
        })
    }

    /// The weighted square `r^T G^{-1} r`.
    pub fn weighted_square(&self, r: &[f64]) -> Result<f64, BasisError> {
        let s = self.apply_inverse(r)?;
        Ok(r.iter().zip(&s).map(|(a, b)| a * b).sum())
    }
}

/// Numeric Gram matrix of the tabulated gradients:
/// `G_kl = integral of grad(phi_k) . grad(phi_l)`.
pub fn numeric_gram(table: &BasisTable, grid: &CollocationGrid) -> DMatrix<f64> {
    assert_eq!(table.pts, grid.len());
    let n_t = table.n_t;
    let w = grid.weight();
    let mut g = vec![0.0; n_t * n_t];
    gemm_nt(n_t, table.pts, n_t, &table.g1, &table.g1, 0.0, &mut g);
    gemm_nt(n_t, table.pts, n_t, &table.g2, &table.g2, 1.0, &mut g);
    DMatrix::from_fn(n_t, n_t, |i, j| w * g[i * n_t + j])
}

pub fn gram_report(g: &DMatrix<f64>) -> GramReport {
    let eig = g.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    GramReport {
        min_eigenvalue: min,
        max_eigenvalue: max,
        condition: if min != 0.0 { max / min } else { f64::INFINITY },
    }
}

/// Outcome of [`select_gram`]: which weighting was chosen and why.
pub struct GramChoice {
    pub gram: Gram,
    pub report: GramReport,
    pub fell_back: bool,
}

/// Build the weighting for a network basis: the full numeric Gram unless its
/// smallest eigenvalue is below `tau` times the largest, in which case the
/// diagonal weighting takes over (the caller logs the event; the choice is
/// recorded in the returned flag).
pub fn select_gram(
    table: &BasisTable,
    grid: &CollocationGrid,
    tau: f64,
) -> Result<GramChoice, BasisError> {
    let g = numeric_gram(table, grid);
    let report = gram_report(&g);
    if !(report.min_eigenvalue > tau * report.max_eigenvalue) {
        let gram = diagonal_fallback(&g)?;
        return Ok(GramChoice {
            gram,
            report,
            fell_back: true,
        });
    }
    let chol = g.cholesky().ok_or(BasisError::NotPositiveDefinite)?;
    Ok(GramChoice {
        gram: Gram::Full { chol, report },
        report,
        fell_back: false,
    })
}

/// Diagonal weighting from a numeric Gram matrix. A zero diagonal entry
/// means a test function with identically zero gradient; that is an error,
/// not something to paper over.
pub fn diagonal_fallback(g: &DMatrix<f64>) -> Result<Gram, BasisError> {
    let diag: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)]).collect();
    if let Some(index) = diag.iter().position(|&d| d == 0.0) {
        return Err(BasisError::ZeroDiagonal { index });
    }
    Ok(Gram::Diagonal { diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn spectral_cardinalities() {
        assert_eq!(SpectralBasis::new(5, 5).unwrap().len(), 70);
        assert_eq!(SpectralBasis::new(7, 7).unwrap().len(), 126);
        assert_eq!(SpectralBasis::new(1, 1).unwrap().len(), 6);
        assert_eq!(SpectralBasis::new(0, 2).unwrap().len(), 4);
        assert!(SpectralBasis::new(0, 0).is_err());
    }

    #[test]
    fn spectral_gradients_are_exact() {
        let b = SpectralBasis::new(3, 3).unwrap();
        let x = [0.73, 2.19];
        let h = 1e-6;
        for k in 0..b.len() {
            let g = b.grad(k, x);
            let d0 = (b.value(k, [x[0] + h, x[1]]) - b.value(k, [x[0] - h, x[1]])) / (2.0 * h);
            let d1 = (b.value(k, [x[0], x[1] + h]) - b.value(k, [x[0], x[1] - h])) / (2.0 * h);
            assert!((g[0] - d0).abs() <= 1e-8 * (1.0 + d0.abs()));
            assert!((g[1] - d1).abs() <= 1e-8 * (1.0 + d1.abs()));
        }
    }

    #[test]
    fn numeric_spectral_gram_is_diagonal_with_known_entries() {
        // The true Gram diagonal is 2 pi^2 (m^2 + n^2); off-diagonal entries
        // vanish by orthogonality. This pins both the tabulation and the
        // closed-form inverse diagonal (up to the conventional constant).
        let basis = SpectralBasis::new(3, 3).unwrap();
        let grid = CollocationGrid::new(32).unwrap();
        let table = tabulate(&TestBasis::Spectral(basis.clone()), &grid);
        let g = numeric_gram(&table, &grid);
        let inv = basis.inverse_gram_diag();
        for i in 0..basis.len() {
            let expect = 2.0 * PI * PI / inv[i];
            assert!(
                (g[(i, i)] - expect).abs() <= 1e-8 * expect,
                "diag {i}: {} vs {expect}",
                g[(i, i)]
            );
            for j in 0..basis.len() {
                if i != j {
                    assert!(g[(i, j)].abs() <= 1e-8 * expect, "off ({i},{j}): {}", g[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn network_basis_members_are_distinct_and_reproducible() {
        let cfg = NetworkConfig::new(4, 4, 1).unwrap();
        let a = NetworkBasis::new(cfg, 5, 100).unwrap();
        let b = NetworkBasis::new(cfg, 5, 100).unwrap();
        for (x, y) in a.members().iter().zip(b.members()) {
            assert_eq!(x.params, y.params);
        }
        assert_ne!(a.members()[0].params, a.members()[1].params);
        assert!(NetworkBasis::new(cfg, 0, 1).is_err());
    }

    #[test]
    fn network_tabulation_matches_pointwise_forward() {
        let cfg = NetworkConfig::new(4, 4, 2).unwrap();
        let basis = TestBasis::Network(NetworkBasis::new(cfg, 3, 7).unwrap());
        let grid = CollocationGrid::new(8).unwrap();
        let table = tabulate(&basis, &grid);
        for k in 0..3 {
            for q in [0, 17, 63] {
                let g = basis.grad(k, grid.point(q));
                assert!((table.g1[k * 64 + q] - g[0]).abs() <= 1e-12);
                assert!((table.g2[k * 64 + q] - g[1]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn full_gram_solve_agrees_with_direct_inverse() {
        let cfg = NetworkConfig::new(3, 3, 1).unwrap();
        let basis = TestBasis::Network(NetworkBasis::new(cfg, 6, 21).unwrap());
        let grid = CollocationGrid::new(16).unwrap();
        let table = tabulate(&basis, &grid);
        let choice = select_gram(&table, &grid, 1e-10).unwrap();
        assert!(!choice.fell_back);
        let g = numeric_gram(&table, &grid);
        let r: Vec<f64> = (0..6).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        let s = choice.gram.apply_inverse(&r).unwrap();
        let back = &g * DVector::from_column_slice(&s);
        for (a, b) in back.iter().zip(&r) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
        // Quadratic form is positive for nonzero input.
        assert!(choice.gram.weighted_square(&r).unwrap() > 0.0);
    }

    #[test]
    fn weighted_square_invariant_under_recombination() {
        // Recombining the basis rows by an invertible T sends r to T r and
        // G to T G T^T, leaving r^T G^{-1} r unchanged.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let cfg = NetworkConfig::new(3, 3, 1).unwrap();
        let nb = NetworkBasis::new(cfg, 5, 33).unwrap();
        let grid = CollocationGrid::new(16).unwrap();
        let table = tabulate(&TestBasis::Network(nb.clone()), &grid);
        let n_t = table.n_t;
        let t = DMatrix::from_fn(n_t, n_t, |_, _| rng.gen_range(-1.0..1.0))
            + DMatrix::identity(n_t, n_t) * 2.0;
        // Recombine the tabulated gradients.
        let mut mixed = table.clone();
        for (dst, src) in [(&mut mixed.g1, &table.g1), (&mut mixed.g2, &table.g2)] {
            for k in 0..n_t {
                for q in 0..table.pts {
                    dst[k * table.pts + q] = (0..n_t)
                        .map(|l| t[(k, l)] * src[l * table.pts + q])
                        .sum();
                }
            }
        }
        let r: Vec<f64> = (0..n_t).map(|i| 0.2 + (i as f64).cos()).collect();
        let tr: Vec<f64> = (0..n_t)
            .map(|k| (0..n_t).map(|l| t[(k, l)] * r[l]).sum())
            .collect();
        let base = select_gram(&table, &grid, 1e-12).unwrap();
        let mix = select_gram(&mixed, &grid, 1e-12).unwrap();
        assert!(!base.fell_back && !mix.fell_back);
        let a = base.gram.weighted_square(&r).unwrap();
        let b = mix.gram.weighted_square(&tr).unwrap();
        assert!((a - b).abs() <= 1e-8 * a.abs(), "{a} vs {b}");
    }

    #[test]
    fn ill_conditioned_gram_falls_back_to_diagonal() {
        // Duplicate a member: the Gram matrix becomes exactly singular.
        let cfg = NetworkConfig::new(3, 3, 1).unwrap();
        let nb = NetworkBasis::new(cfg, 4, 55).unwrap();
        let grid = CollocationGrid::new(16).unwrap();
        let mut table = tabulate(&TestBasis::Network(nb), &grid);
        let pts = table.pts;
        let row0g1 = table.g1[0..pts].to_vec();
        let row0g2 = table.g2[0..pts].to_vec();
        table.g1[pts..2 * pts].copy_from_slice(&row0g1);
        table.g2[pts..2 * pts].copy_from_slice(&row0g2);
        let choice = select_gram(&table, &grid, 1e-10).unwrap();
        assert!(choice.fell_back);
        assert!(matches!(choice.gram, Gram::Diagonal { .. }));
        // The diagonal weighting still works.
        let r = vec![1.0; table.n_t];
        assert!(choice.gram.weighted_square(&r).unwrap() > 0.0);
    }

    #[test]
    fn zero_gradient_member_is_an_error() {
        let cfg = NetworkConfig::new(3, 3, 1).unwrap();
        let nb = NetworkBasis::new(cfg, 3, 66).unwrap();
        let grid = CollocationGrid::new(8).unwrap();
        let mut table = tabulate(&TestBasis::Network(nb), &grid);
        let pts = table.pts;
        table.g1[0..pts].fill(0.0);
        table.g2[0..pts].fill(0.0);
        // The constant member zeroes a Gram row; the screen must fall back,
        // and the fallback must refuse the zero diagonal.
        let err = select_gram(&table, &grid, 1e-10);
        assert!(matches!(err, Err(BasisError::ZeroDiagonal { index: 0 })));
    }

    #[test]
    fn apply_inverse_checks_length() {
        let g = Gram::InverseDiagonal {
            inv_diag: vec![1.0, 0.5],
        };
        assert!(matches!(
            g.apply_inverse(&[1.0]),
            Err(BasisError::LengthMismatch { expected: 2, got: 1 })
        ));
    }
}
