//! Compressed-row sparse matrices and a Jacobi-preconditioned conjugate
//! gradient solver for the SPD systems produced by assembly.

use crate::error::{invalid, Error, Result};

/// Square sparse matrix in compressed-row form. Column indices are sorted and
/// unique within every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Build from raw CSR arrays, checking structural invariants.
    pub fn from_csr(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n + 1 || row_ptr[0] != 0 {
            return invalid("row_ptr must have length n+1 and start at 0");
        }
        if col_idx.len() != vals.len() || *row_ptr.last().unwrap() != col_idx.len() {
            return invalid("col_idx/vals length disagrees with row_ptr");
        }
        for i in 0..n {
            if row_ptr[i] > row_ptr[i + 1] {
                return invalid("row_ptr must be nondecreasing");
            }
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= n) {
                return invalid(format!("row {i} has unsorted, duplicate or out-of-range columns"));
            }
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub(crate) fn from_parts_unchecked(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Self {
        Self {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        m.vals.copy_from_slice(d);
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// True when every stored `(i,j)` equals `(j,i)` bit for bit.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .all(|k| self.get(self.col_idx[k], i).to_bits() == self.vals[k].to_bits())
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return invalid(format!(
                "matvec dimension mismatch: matrix is {}, vector is {}",
                self.n,
                x.len()
            ));
        }
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut r = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                r += self.vals[k] * x[self.col_idx[k]];
            }
            s += x[i] * r;
        }
        s
    }

    /// `a·self + b·other` for two matrices sharing one sparsity pattern.
    pub fn linear_combination(&self, a: f64, other: &SparseMatrix, b: f64) -> Result<SparseMatrix> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return invalid("linear_combination needs identical sparsity patterns");
        }
        let vals = self
            .vals
            .iter()
            .zip(&other.vals)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            vals,
        })
    }

    /// Principal submatrix on `keep`, where `index[i]` is the new position of
    /// row/column `i` (or `None` when dropped). `keep` must be increasing.
    pub fn restrict(&self, keep: &[usize], index: &[Option<usize>]) -> SparseMatrix {
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &i in keep {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if let Some(j) = index[self.col_idx[k]] {
                    col_idx.push(j);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n: keep.len(),
            row_ptr,
            col_idx,
            vals,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// Iteration cap; `None` means `10·n`.
    pub max_iters: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖`, recomputed from the returned iterate.
    pub relative_residual: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` for symmetric positive definite `A` with Jacobi-
/// preconditioned CG, starting from zero.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], opts: &CgOptions) -> Result<CgSolution> {
    cg_solve_from(a, b, vec![0.0; b.len()], opts)
}

/// Residual norm below which rounding in `b − Ax` dominates:
/// `‖ (nnz_i + 1) ε (|A||x| + |b|)_i ‖₂`, doubled.
fn rounding_floor(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.n {
        let (lo, hi) = (a.row_ptr[i], a.row_ptr[i + 1]);
        let mut m = b[i].abs();
        for k in lo..hi {
            m += (a.vals[k] * x[a.col_idx[k]]).abs();
        }
        let g = (hi - lo + 1) as f64 * f64::EPSILON * m;
        s += g * g;
    }
    2.0 * s.sqrt()
}

/// As [`cg_solve`], from an initial guess. A residual at the rounding floor
/// of `b − Ax` is accepted even when it exceeds `rel_tol·‖b‖`.
pub fn cg_solve_from(
    a: &SparseMatrix,
    b: &[f64],
    x0: Vec<f64>,
    opts: &CgOptions,
) -> Result<CgSolution> {
    let n = a.n();
    if b.len() != n || x0.len() != n {
        return invalid(format!(
            "cg_solve dimension mismatch: matrix is {n}, rhs is {}, guess is {}",
            b.len(),
            x0.len()
        ));
    }
    if !(opts.rel_tol > 0.0) {
        return invalid("rel_tol must be positive");
    }
    let max_iters = opts.max_iters.unwrap_or(10 * n.max(1));
    if max_iters == 0 {
        return invalid("max_iters must be at least 1");
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = opts.rel_tol * bnorm;
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = x0;
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    // Outer loop restarts from the true residual whenever the recursive one
    // claims convergence but the recomputed one disagrees.
    loop {
        a.matvec_into(&x, &mut ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        let true_res = norm2(&r);
        if true_res <= target || true_res <= rounding_floor(a, &x, b) {
            return Ok(CgSolution {
                x,
                iterations,
                relative_residual: true_res / bnorm,
            });
        }
        if iterations >= max_iters {
            return Err(Error::NonConvergence {
                iterations,
                residual: true_res / bnorm,
            });
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
            p[i] = z[i];
        }
        let mut rz = dot(&r, &z);
        while iterations < max_iters {
            a.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if norm2(&r) <= target {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn laplacian_1d_interior() -> SparseMatrix {
        // n = 4 cells, h = 1/4: interior block of the unit-coefficient stiffness.
        SparseMatrix::from_csr(
            3,
            vec![0, 2, 5, 7],
            vec![0, 1, 0, 1, 2, 1, 2],
            vec![8.0, -4.0, -4.0, 8.0, -4.0, -4.0, 8.0],
        )
        .unwrap()
    }

    #[test]
    fn matvec_examples() {
        let i3 = SparseMatrix::identity(3);
        assert_eq!(i3.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let l = laplacian_1d_interior();
        assert_eq!(l.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![4.0, 0.0, 4.0]);
        let z = SparseMatrix::from_csr(2, vec![0, 0, 0], vec![], vec![]).unwrap();
        assert_eq!(z.matvec(&[5.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(l.matvec(&[1.0]).is_err());
    }

    #[test]
    fn from_csr_validates() {
        assert!(SparseMatrix::from_csr(2, vec![0, 2, 3], vec![1, 0, 1], vec![1.0; 3]).is_err());
        assert!(SparseMatrix::from_csr(2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, vec![0, 1], vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn cg_examples() {
        let d = SparseMatrix::from_diagonal(&[2.0, 2.0, 2.0]);
        let s = cg_solve(&d, &[2.0, 4.0, 6.0], &CgOptions::default()).unwrap();
        for (a, b) in s.x.iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }

        // -u'' = 1 with P1 on h = 1/4: load h per interior node.
        let l = laplacian_1d_interior();
        let s = cg_solve(&l, &[0.25; 3], &CgOptions::default()).unwrap();
        for (a, b) in s.x.iter().zip([0.09375, 0.125, 0.09375]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }

        let s = cg_solve(&l, &[0.0; 3], &CgOptions::default()).unwrap();
        assert_eq!(s.x, vec![0.0; 3]);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let n = 200;
        let mut row_ptr = vec![0];
        let mut col = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            if i > 0 {
                col.push(i - 1);
                vals.push(-1.0);
            }
            col.push(i);
            vals.push(2.0);
            if i + 1 < n {
                col.push(i + 1);
                vals.push(-1.0);
            }
            row_ptr.push(col.len());
        }
        let a = SparseMatrix::from_csr(n, row_ptr, col, vals).unwrap();
        let opts = CgOptions {
            rel_tol: 1e-12,
            max_iters: Some(5),
        };
        match cg_solve(&a, &vec![1.0; n], &opts) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(cg_solve(&a, &[1.0], &opts).is_err());
    }

    fn random_spd(n: usize, seed: &[f64]) -> SparseMatrix {
        // Tridiagonal, strictly diagonally dominant, symmetric.
        let mut row_ptr = vec![0];
        let mut col = Vec::new();
        let mut vals = Vec::new();
        let off = |i: usize| -0.5 - seed[i % seed.len()].abs();
        for i in 0..n {
            if i > 0 {
                col.push(i - 1);
                vals.push(off(i - 1));
            }
            col.push(i);
            vals.push(3.0 + 2.0 * seed[(i + 1) % seed.len()].abs());
            if i + 1 < n {
                col.push(i + 1);
                vals.push(off(i));
            }
            row_ptr.push(col.len());
        }
        SparseMatrix::from_csr(n, row_ptr, col, vals).unwrap()
    }

    proptest! {
        #[test]
        fn symmetric_matvec_is_self_adjoint(
            seed in proptest::collection::vec(-1.0f64..1.0, 8),
            x in proptest::collection::vec(-1.0f64..1.0, 20),
            y in proptest::collection::vec(-1.0f64..1.0, 20),
        ) {
            let a = random_spd(20, &seed);
            prop_assert!(a.is_symmetric());
            let lhs = dot(&x, &a.matvec(&y).unwrap());
            let rhs = dot(&y, &a.matvec(&x).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn cg_meets_residual_contract(
            seed in proptest::collection::vec(-1.0f64..1.0, 8),
            b in proptest::collection::vec(-1.0f64..1.0, 30),
        ) {
            let a = random_spd(30, &seed);
            let s = cg_solve(&a, &b, &CgOptions::default()).unwrap();
            let ax = a.matvec(&s.x).unwrap();
            let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res <= 1e-10 * norm2(&b) + 1e-300);
        }
    }
}
