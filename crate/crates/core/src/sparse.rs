//! Compressed sparse row matrices and the faer-backed factorizations used on them.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Mat, MatMut, Side};

use crate::error::LinalgError;

/// Square CSR matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix, summing duplicate entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &sorted {
            assert!(i < n && j < n, "triplet ({i},{j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_triplets(n, &[])
    }

    pub fn identity_scaled(diag: &[f64]) -> Self {
        let t: Vec<_> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(diag.len(), &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Iterates over `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.vals[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn mul_cvec(&self, x: &[c64]) -> Vec<c64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let mut acc = c64::new(0.0, 0.0);
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += x[self.col_idx[k]] * self.vals[k];
                }
                acc
            })
            .collect()
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.vals[k] * y[self.col_idx[k]];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// Hermitian form `xᴴ A x` for real symmetric `A`.
    pub fn cquad(&self, x: &[c64]) -> f64 {
        let ax = self.mul_cvec(x);
        x.iter().zip(&ax).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Sum of scaled matrices `Σ c_k A_k`; the pattern is the union of the inputs.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        let n = terms.first().map(|t| t.1.n).unwrap_or(0);
        let mut trip = Vec::new();
        for (c, a) in terms {
            assert_eq!(a.n, n);
            trip.extend(a.triplets().map(|(i, j, v)| (i, j, c * v)));
        }
        CsrMatrix::from_triplets(n, &trip)
    }

    /// Principal submatrix on `idx`.
    pub fn restrict(&self, idx: &[usize]) -> CsrMatrix {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let trip: Vec<_> = self
            .triplets()
            .filter(|&(i, j, _)| pos[i] != usize::MAX && pos[j] != usize::MAX)
            .map(|(i, j, v)| (pos[i], pos[j], v))
            .collect();
        CsrMatrix::from_triplets(idx.len(), &trip)
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let trip: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &trip).expect("valid triplets")
    }

    /// Complex matrix `Σ c_k A_k` in faer's column format.
    pub fn complex_combination(terms: &[(c64, &CsrMatrix)]) -> SparseColMat<usize, c64> {
        let n = terms.first().map(|t| t.1.n).unwrap_or(0);
        let mut trip = Vec::new();
        for (c, a) in terms {
            trip.extend(a.triplets().map(|(i, j, v)| Triplet::new(i, j, *c * v)));
        }
        SparseColMat::try_new_from_triplets(n, n, &trip).expect("valid triplets")
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdSolver {
    llt: Llt<usize, f64>,
    n: usize,
}

impl SpdSolver {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let symbolic = SpdPattern::new(a)?;
        symbolic.factor(a)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        self.llt
            .solve_in_place(MatMut::from_column_major_slice_mut(x, self.n, 1));
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves with real and imaginary parts separately.
    pub fn solve_complex(&self, b: &[c64]) -> Vec<c64> {
        let mut re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let mut im: Vec<f64> = b.iter().map(|z| z.im).collect();
        self.solve_in_place(&mut re);
        self.solve_in_place(&mut im);
        re.into_iter()
            .zip(im)
            .map(|(a, b)| c64::new(a, b))
            .collect()
    }
}

/// Symbolic Cholesky analysis reused across matrices sharing one pattern.
#[derive(Clone)]
pub struct SpdPattern {
    symbolic: SymbolicLlt<usize>,
    n: usize,
}

impl SpdPattern {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let m = a.to_faer();
        let symbolic = SymbolicLlt::try_new(m.symbolic(), Side::Lower)
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(Self { symbolic, n: a.n })
    }

    /// Numeric factorization. `a` must have the analyzed pattern.
    pub fn factor(&self, a: &CsrMatrix) -> Result<SpdSolver, LinalgError> {
        let m = a.to_faer();
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), m.as_ref(), Side::Lower)
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(SpdSolver { llt, n: self.n })
    }
}

/// Sparse LU of a complex matrix, with plain and conjugate solves.
pub struct ComplexLu {
    lu: Lu<usize, c64>,
    n: usize,
}

impl ComplexLu {
    pub fn new(a: &SparseColMat<usize, c64>) -> Result<Self, LinalgError> {
        let symbolic = SymbolicLu::try_new(a.symbolic())
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Self::with_symbolic(&symbolic, a)
    }

    pub fn symbolic(a: &SparseColMat<usize, c64>) -> Result<SymbolicLu<usize>, LinalgError> {
        SymbolicLu::try_new(a.symbolic()).map_err(|e| LinalgError::Factorization(format!("{e:?}")))
    }

    pub fn with_symbolic(
        symbolic: &SymbolicLu<usize>,
        a: &SparseColMat<usize, c64>,
    ) -> Result<Self, LinalgError> {
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), a.as_ref())
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(Self { lu, n: a.nrows() })
    }

    pub fn solve_in_place(&self, x: &mut [c64]) {
        assert_eq!(x.len(), self.n);
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(x, self.n, 1));
    }

    /// Solves `conj(A) x = b`.
    pub fn solve_conjugate_in_place(&self, x: &mut [c64]) {
        assert_eq!(x.len(), self.n);
        self.lu
            .solve_conjugate_in_place(MatMut::from_column_major_slice_mut(x, self.n, 1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn spd_solve_matches_matvec() {
        let a = tridiag(7);
        let x: Vec<f64> = (0..7).map(|i| (i as f64).sin() + 0.5).collect();
        let b = a.mul_vec(&x);
        let y = SpdSolver::new(&a).unwrap().solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn complex_lu_and_conjugate_solve() {
        let a = tridiag(6);
        let z = CsrMatrix::complex_combination(&[
            (c64::new(1.0, 0.0), &a),
            (c64::new(0.0, 2.0), &CsrMatrix::identity_scaled(&[1.0; 6])),
        ]);
        let lu = ComplexLu::new(&z).unwrap();
        let x: Vec<c64> = (0..6).map(|i| c64::new(i as f64, 1.0 - i as f64)).collect();
        let mut b: Vec<c64> = (0..6)
            .map(|i| a.mul_cvec(&x)[i] + x[i] * c64::new(0.0, 2.0))
            .collect();
        lu.solve_in_place(&mut b);
        for (p, q) in x.iter().zip(&b) {
            assert!((p - q).norm() < 1e-12);
        }
        let mut c: Vec<c64> = (0..6)
            .map(|i| a.mul_cvec(&x)[i] + x[i] * c64::new(0.0, -2.0))
            .collect();
        lu.solve_conjugate_in_place(&mut c);
        for (p, q) in x.iter().zip(&c) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn restrict_picks_principal_block() {
        let a = tridiag(5);
        let r = a.restrict(&[1, 2, 4]);
        assert_eq!(r.get(0, 1), -1.0);
        assert_eq!(r.get(1, 2), 0.0);
        assert_eq!(r.get(2, 2), 4.0);
    }
}
