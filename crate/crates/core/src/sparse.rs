//! Thin wrapper over the faer sparse LU factorization.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Row-major accumulator for a square sparse matrix.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::with_capacity(n * 9),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.entries.push(Triplet::new(row, col, val));
        }
    }

    pub fn factor(&self) -> Result<Factored> {
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| Error::LinearSolve(format!("assembly failed: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::LinearSolve(format!("factorization failed: {e:?}")))?;
        Ok(Factored { n: self.n, lu, mat })
    }
}

/// A factored sparse matrix.
pub struct Factored {
    n: usize,
    lu: Lu<usize, f64>,
    mat: SparseColMat<usize, f64>,
}

impl std::fmt::Debug for Factored {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Factored(n = {})", self.n)
    }
}

impl Factored {
    /// Solves and returns (solution, relative residual).
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let b = Col::from_fn(self.n, |i| rhs[i]);
        let x = self.lu.solve(&b);
        let sol: Vec<f64> = (0..self.n).map(|i| x[i]).collect();
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("non-finite solution".into()));
        }
        let r = &self.mat * &x - &b;
        let rn = (0..self.n).map(|i| r[i].abs()).fold(0.0, f64::max);
        let bn = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let xn = sol.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let scale = bn.max(xn * self.max_entry()).max(1e-300);
        Ok((sol, rn / scale))
    }

    fn max_entry(&self) -> f64 {
        self.mat.val().iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}
