//! Thin wrappers over the sparse direct solvers.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Coordinate-form accumulator; duplicates are summed on assembly.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    rows: usize,
    cols: usize,
    data: Vec<Triplet<usize, usize, f64>>,
}

impl Triplets {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data.push(Triplet::new(i, j, v));
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn build(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.rows, self.cols, &self.data)
            .map_err(|e| Error::Solver(format!("assembly failed: {e:?}")))
    }
}

/// `y = A x`.
pub fn mul(a: &SparseColMat<usize, f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    let cp = a.col_ptr();
    let ri = a.row_idx();
    let v = a.val();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for k in cp[j]..cp[j + 1] {
            y[ri[k]] += v[k] * xj;
        }
    }
    y
}

fn to_mat(b: &[f64]) -> Mat<f64> {
    Mat::from_fn(b.len(), 1, |i, _| b[i])
}

fn from_mat(x: &Mat<f64>) -> Vec<f64> {
    (0..x.nrows()).map(|i| x[(i, 0)]).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Symmetric positive definite factorization.
pub struct CholeskySolver {
    matrix: SparseColMat<usize, f64>,
    llt: Llt<usize, f64>,
}

impl CholeskySolver {
    pub fn new(a: SparseColMat<usize, f64>) -> Result<Self> {
        let llt = a
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Solver(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(Self { matrix: a, llt })
    }

    pub fn matrix(&self) -> &SparseColMat<usize, f64> {
        &self.matrix
    }

    /// Solves `A x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        refine(&self.matrix, b, |r| from_mat(&self.llt.solve(to_mat(r))))
    }
}

/// General sparse LU factorization.
pub struct LuSolver {
    matrix: SparseColMat<usize, f64>,
    lu: Lu<usize, f64>,
}

impl LuSolver {
    pub fn new(a: SparseColMat<usize, f64>) -> Result<Self> {
        let lu = a
            .sp_lu()
            .map_err(|e| Error::Solver(format!("LU factorization failed: {e:?}")))?;
        Ok(Self { matrix: a, lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = refine(&self.matrix, b, |r| from_mat(&self.lu.solve(to_mat(r))));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("singular system".into()));
        }
        Ok(x)
    }
}

fn refine(a: &SparseColMat<usize, f64>, b: &[f64], solve: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut x = solve(b);
    let ax = mul(a, &x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    let dx = solve(&r);
    for (x, d) in x.iter_mut().zip(dx) {
        *x += d;
    }
    x
}

/// Relative residual `‖A x − b‖ / ‖b‖`.
pub fn relative_residual(a: &SparseColMat<usize, f64>, x: &[f64], b: &[f64]) -> f64 {
    let ax = mul(a, x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    let nb = norm(b);
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}
