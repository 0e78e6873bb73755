//! Compressed sparse rows and a Jacobi-preconditioned conjugate-gradient
//! solver: the small amount of linear algebra the periodic P1 systems need.

use crate::par::{self, Reduction};
use std::fmt;

#[derive(Debug)]
pub enum SparseError {
    EmptyMatrix,
    IndexOutOfBounds { index: usize, n: usize },
    LengthMismatch { expected: usize, got: usize },
    ZeroDiagonal { row: usize },
    /// The iteration direction lost positive curvature; the matrix is not
    /// symmetric positive definite.
    Breakdown { iteration: usize },
}

impl fmt::Display for SparseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparseError::EmptyMatrix => write!(f, "matrix dimension must be positive"),
            SparseError::IndexOutOfBounds { index, n } => {
                write!(f, "triplet index {index} out of bounds for dimension {n}")
            }
            SparseError::LengthMismatch { expected, got } => {
                write!(f, "vector length {got} does not match dimension {expected}")
            }
            SparseError::ZeroDiagonal { row } => {
                write!(f, "row {row} has a zero or missing diagonal entry")
            }
            SparseError::Breakdown { iteration } => {
                write!(f, "conjugate gradients broke down at iteration {iteration}")
            }
        }
    }
}

impl std::error::Error for SparseError {}

/// Square sparse matrix in compressed-sparse-row form with sorted,
/// duplicate-free columns within each row.
#[derive(Debug, Clone)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Csr, SparseError> {
        if n == 0 {
            return Err(SparseError::EmptyMatrix);
        }
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(SparseError::IndexOutOfBounds { index: i.max(j), n });
            }
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Csr {
            n,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `y = A x`, rows computed independently in parallel.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        par::fill_slice(y, |i| {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            acc
        });
    }

    pub fn diagonal(&self) -> Result<Vec<f64>, SparseError> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.vals[k];
                }
            }
            if d[i] == 0.0 {
                return Err(SparseError::ZeroDiagonal { row: i });
            }
        }
        Ok(d)
    }

    /// Dense copy for small-system cross-checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.vals[k];
            }
        }
        m
    }
}

/// Outcome of a conjugate-gradient solve. The per-iteration residual
/// history is kept for diagnosis but excluded from serialized records.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side norm.
    pub residual: f64,
    pub converged: bool,
    #[serde(skip)]
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    par::sum_indexed(a.len(), Reduction::Ordered, |i| a[i] * b[i])
}

/// Jacobi-preconditioned conjugate gradients from a zero start. Stops when
/// the residual norm falls below `tol` times the right-hand side norm.
pub fn jacobi_cg(
    a: &Csr,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport), SparseError> {
    let n = a.n();
    if b.len() != n {
        return Err(SparseError::LengthMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let inv_diag: Vec<f64> = a.diagonal()?.iter().map(|d| 1.0 / d).collect();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
                history: Vec::new(),
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();
    let mut rel = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..max_iter {
        rel = dot(&r, &r).sqrt() / bnorm;
        history.push(rel);
        if rel <= tol {
            converged = true;
            iterations = it;
            break;
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(SparseError::Breakdown { iteration: it });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations = it + 1;
    }
    if !converged {
        rel = dot(&r, &r).sqrt() / bnorm;
        history.push(rel);
        converged = rel <= tol;
    }
    Ok((
        x,
        CgReport {
            iterations,
            residual: rel,
            converged,
            history,
        },
    ))
}
