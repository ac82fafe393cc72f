//! Shared numerical kernels: compressed sparse rows, dense SVD and
//! eigendecompositions for small matrices, and the mean-zero pressure
//! projector.
//!
//! Dense factorizations are reserved for patch, coarse, and oracle sizes;
//! the global system is only ever touched through sparse matrix-vector
//! products.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::{Error, Result};

/// Size cap for dense factorizations.
pub const DENSE_CAP: usize = 5000;

/// Sparse matrix in compressed-sparse-row form with `u32` column indices.
///
/// Column indices are sorted and unique within each row, and the
/// accumulation order of `matvec` is fixed (row-major, ascending columns),
/// so products are bit-reproducible across runs.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from a sorted-unique structure produced by [`PatternBuilder`].
    pub fn from_parts(nrows: usize, ncols: usize, row_ptr: Vec<usize>, cols: Vec<u32>) -> Self {
        debug_assert_eq!(row_ptr.len(), nrows + 1);
        let nnz = *row_ptr.last().unwrap_or(&0);
        debug_assert_eq!(cols.len(), nnz);
        Self {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(u32, u32, f64)> = triplets
            .iter()
            .map(|&(i, j, v)| {
                assert!(i < nrows && j < ncols, "triplet index out of bounds");
                (i as u32, j as u32, v)
            })
            .collect();
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut out_cols: Vec<u32> = Vec::with_capacity(entries.len());
        let mut out_vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut out_ptr = vec![0usize; nrows + 1];
        let mut k = 0;
        for i in 0..nrows as u32 {
            while k < entries.len() && entries[k].0 == i {
                let col = entries[k].1;
                let mut v = 0.0;
                while k < entries.len() && entries[k].0 == i && entries[k].1 == col {
                    v += entries[k].2;
                    k += 1;
                }
                out_cols.push(col);
                out_vals.push(v);
            }
            out_ptr[i as usize + 1] = out_cols.len();
        }
        Self {
            nrows,
            ncols,
            row_ptr: out_ptr,
            cols: out_cols,
            vals: out_vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn row_mut(&mut self, i: usize) -> (&[u32], &mut [f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &mut self.vals[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Adds `v` to entry (i, j); the entry must exist in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        let cols = &self.cols[lo..hi];
        match cols.binary_search(&(j as u32)) {
            Ok(p) => self.vals[lo + p] += v,
            Err(_) => panic!("entry ({i}, {j}) not present in sparsity pattern"),
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = acc;
        }
    }

    /// y += alpha * A x.
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] += alpha * acc;
        }
    }

    /// y = A^T x (used for residual restriction through embeddings).
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.fill(0.0);
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let xi = x[i];
            if xi != 0.0 {
                for k in lo..hi {
                    y[self.cols[k] as usize] += self.vals[k] * xi;
                }
            }
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut cols = vec![0u32; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut next = counts.clone();
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for k in lo..hi {
                let j = self.cols[k] as usize;
                let p = next[j];
                cols[p] = i as u32;
                vals[p] = self.vals[k];
                next[j] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            cols,
            vals,
        }
    }

    /// Maximum absolute asymmetry |A - A^T| relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let mut max_entry = 0.0f64;
        let mut max_diff = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                max_entry = max_entry.max(v.abs());
                let d = (v - self.get(j as usize, i)).abs();
                max_diff = max_diff.max(d);
            }
        }
        if max_entry == 0.0 {
            0.0
        } else {
            max_diff / max_entry
        }
    }

    /// Dense copy (for oracle-sized problems and local extraction tests).
    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j as usize)] = v;
            }
        }
        m
    }

    /// Extracts the dense submatrix with the given (global) row/column ids.
    pub fn extract_dense(&self, rows: &[u32], cols: &[u32]) -> Mat<f64> {
        let mut pos_of_col = std::collections::HashMap::with_capacity(cols.len());
        for (p, &c) in cols.iter().enumerate() {
            pos_of_col.insert(c, p);
        }
        let mut m = Mat::zeros(rows.len(), cols.len());
        for (ri, &r) in rows.iter().enumerate() {
            let (rc, rv) = self.row(r as usize);
            for (&j, &v) in rc.iter().zip(rv) {
                if let Some(&p) = pos_of_col.get(&j) {
                    m[(ri, p)] = v;
                }
            }
        }
        m
    }

    /// Converts to a faer column-major sparse matrix (for sparse LU).
    pub fn to_faer(&self) -> faer::sparse::SparseColMat<usize, f64> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push(faer::sparse::Triplet::new(i, j as usize, v));
            }
        }
        faer::sparse::SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .expect("CSR indices are in bounds")
    }
}

/// Builds a CSR pattern row by row; columns are deduplicated and sorted.
pub struct PatternBuilder {
    ncols: usize,
    rows: Vec<Vec<u32>>,
}

impl PatternBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    pub fn insert(&mut self, row: usize, cols: impl IntoIterator<Item = u32>) {
        self.rows[row].extend(cols);
    }

    pub fn build(self) -> SparseMatrix {
        let nrows = self.rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0usize);
        let mut cols = Vec::new();
        for mut r in self.rows {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(&r);
            row_ptr.push(cols.len());
        }
        SparseMatrix::from_parts(nrows, self.ncols, row_ptr, cols)
    }
}

/// Thin SVD of a dense matrix: returns `(U, sigma, V)` with `A = U diag(sigma) V^T`
/// and non-increasing singular values.
///
/// Rejects matrices larger than [`DENSE_CAP`] in either dimension; larger
/// systems must go through sparse paths.
pub fn svd(a: &Mat<f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    let (m, n) = (a.nrows(), a.ncols());
    if m.max(n) > DENSE_CAP {
        return Err(Error::Oversized {
            size: m.max(n),
            cap: DENSE_CAP,
        });
    }
    let f = a.thin_svd().map_err(|_| Error::SvdFailure)?;
    let sigma: Vec<f64> = f.S().column_vector().iter().copied().collect();
    Ok((f.U().to_owned(), sigma, f.V().to_owned()))
}

/// Moore-Penrose pseudo-inverse backed by a truncated SVD.
///
/// Singular values below `tol_rel * sigma_max` are treated as an exact
/// kernel: their directions are dropped, so outputs carry no kernel
/// component. `kernel_dim` reports how many were dropped.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    u: Mat<f64>,
    v: Mat<f64>,
    /// Reciprocal singular values, zeroed on the truncated tail.
    sigma_inv: Vec<f64>,
    kernel_dim: usize,
}

impl PseudoInverse {
    pub fn new(a: &Mat<f64>, tol_rel: f64) -> Result<Self> {
        let (u, sigma, v) = svd(a)?;
        let smax = sigma.first().copied().unwrap_or(0.0);
        let cut = tol_rel * smax;
        let mut kernel_dim = 0;
        let sigma_inv = sigma
            .iter()
            .map(|&s| {
                if s <= cut || smax == 0.0 {
                    kernel_dim += 1;
                    0.0
                } else {
                    1.0 / s
                }
            })
            .collect();
        Ok(Self {
            u,
            v,
            sigma_inv,
            kernel_dim,
        })
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    /// x = A^+ r.
    pub fn apply(&self, r: &[f64], x: &mut [f64]) {
        let k = self.sigma_inv.len();
        let mut t = vec![0.0; k];
        // t = Sigma^+ U^T r
        for j in 0..k {
            if self.sigma_inv[j] == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for i in 0..r.len() {
                acc += self.u[(i, j)] * r[i];
            }
            t[j] = acc * self.sigma_inv[j];
        }
        for i in 0..x.len() {
            let mut acc = 0.0;
            for j in 0..k {
                acc += self.v[(i, j)] * t[j];
            }
            x[i] = acc;
        }
    }
}

/// Kernel-aware pseudo-inverse of a symmetric matrix with strongly
/// non-uniform block scales (saddle systems over wide parameter ranges).
///
/// The matrix is symmetrically equilibrated (`D A D` with the inverse
/// square roots of the row max-norms) before the SVD, so the truncation
/// threshold separates round-off zeros from physics regardless of the
/// original scaling. A known kernel vector is removed from inputs and
/// outputs explicitly; the SVD must then confirm exactly that kernel
/// dimension, anything else is reported.
#[derive(Debug, Clone)]
pub struct KernelAwarePseudoInverse {
    d: Vec<f64>,
    pinv: PseudoInverse,
    kernel: Option<(Vec<f64>, f64)>,
}

impl KernelAwarePseudoInverse {
    pub fn new(a: &Mat<f64>, tol_rel: f64, kernel: Option<Vec<f64>>) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let mut d = vec![1.0; n];
        for i in 0..n {
            let mut row_max = 0.0f64;
            for j in 0..n {
                row_max = row_max.max(a[(i, j)].abs());
            }
            if row_max > 0.0 {
                d[i] = 1.0 / row_max.sqrt();
            }
        }
        let scaled = Mat::from_fn(n, n, |i, j| d[i] * a[(i, j)] * d[j]);
        let pinv = PseudoInverse::new(&scaled, tol_rel)?;
        let kernel = kernel.map(|k| {
            let norm2 = dot(&k, &k);
            (k, norm2)
        });
        Ok(Self { d, pinv, kernel })
    }

    pub fn kernel_dim(&self) -> usize {
        self.pinv.kernel_dim()
    }

    /// x solves `A x = r` (with the kernel component of `r` discarded) and
    /// carries no kernel component itself.
    pub fn apply(&self, r: &[f64], x: &mut [f64]) {
        let n = self.d.len();
        let mut rp = r.to_vec();
        if let Some((k, k2)) = &self.kernel {
            let proj = dot(k, &rp) / k2;
            for (ri, ki) in rp.iter_mut().zip(k) {
                *ri -= proj * ki;
            }
        }
        for (ri, di) in rp.iter_mut().zip(&self.d) {
            *ri *= di;
        }
        let mut y = vec![0.0; n];
        self.pinv.apply(&rp, &mut y);
        for i in 0..n {
            x[i] = self.d[i] * y[i];
        }
        if let Some((k, k2)) = &self.kernel {
            let proj = dot(k, x) / k2;
            for (xi, ki) in x.iter_mut().zip(k) {
                *xi -= proj * ki;
            }
        }
    }
}

/// Eigendecomposition of a symmetric matrix; returns eigenvalues ascending.
pub fn self_adjoint_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    if a.nrows().max(a.ncols()) > DENSE_CAP {
        return Err(Error::Oversized {
            size: a.nrows(),
            cap: DENSE_CAP,
        });
    }
    let mut ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::SvdFailure)?;
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

/// Exact sparse solver for a symmetric matrix with a known one-dimensional
/// kernel, via the bordered system `[[A, c], [c^T, 0]]`.
///
/// For right-hand sides orthogonal to the kernel vector `c` this reproduces
/// the Moore-Penrose solution of `A x = r` with `c^T x = 0`; kernel
/// components of the input are absorbed by the multiplier. Used where the
/// coarse operator exceeds the dense SVD cap.
pub struct BorderedSparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl BorderedSparseLu {
    pub fn new(a: &SparseMatrix, kernel: &[f64]) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let mut triplets = Vec::with_capacity(a.nnz() + 2 * n);
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push(faer::sparse::Triplet::new(i, j as usize, v));
            }
        }
        for (i, &c) in kernel.iter().enumerate() {
            if c != 0.0 {
                triplets.push(faer::sparse::Triplet::new(i, n, c));
                triplets.push(faer::sparse::Triplet::new(n, i, c));
            }
        }
        let mat =
            faer::sparse::SparseColMat::try_new_from_triplets(n + 1, n + 1, &triplets)
                .map_err(|e| Error::SparseFactorization(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::SparseFactorization(format!("{e:?}")))?;
        Ok(Self { lu, n })
    }

    pub fn solve(&self, r: &[f64], x: &mut [f64]) {
        let mut rhs = Mat::zeros(self.n + 1, 1);
        for (i, &v) in r.iter().enumerate() {
            rhs[(i, 0)] = v;
        }
        let sol = self.lu.solve(&rhs);
        for i in 0..self.n {
            x[i] = sol[(i, 0)];
        }
    }
}

/// Plain sparse LU for nonsingular coarse operators.
pub struct SparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let lu = a
            .to_faer()
            .sp_lu()
            .map_err(|e| Error::SparseFactorization(format!("{e:?}")))?;
        Ok(Self { lu, n: a.nrows() })
    }

    pub fn solve(&self, r: &[f64], x: &mut [f64]) {
        let mut rhs = Mat::zeros(self.n, 1);
        for (i, &v) in r.iter().enumerate() {
            rhs[(i, 0)] = v;
        }
        let sol = self.lu.solve(&rhs);
        for i in 0..self.n {
            x[i] = sol[(i, 0)];
        }
    }
}

/// Removes the weighted mean from the pressure block of a monolithic vector.
///
/// The weights are the cell measures (the pressure basis is orthonormal per
/// cell, so only the constant mode of each cell carries weight). Idempotent;
/// leaves the displacement and velocity blocks untouched.
#[derive(Debug, Clone)]
pub struct MeanZeroProjector {
    p_offset: usize,
    /// Integral of each pressure basis function over its cell.
    weights: Vec<f64>,
    /// Coefficients of the constant-1 pressure function.
    constant: Vec<f64>,
    /// <weights, constant> = measure of the domain.
    denom: f64,
}

impl MeanZeroProjector {
    pub fn new(p_offset: usize, weights: Vec<f64>, constant: Vec<f64>) -> Self {
        assert_eq!(weights.len(), constant.len());
        let denom: f64 = weights.iter().zip(&constant).map(|(w, c)| w * c).sum();
        assert!(denom > 0.0);
        Self {
            p_offset,
            weights,
            constant,
            denom,
        }
    }

    /// Weighted mean of the pressure block (the integral of p over the domain
    /// divided by the domain measure).
    pub fn mean(&self, x: &[f64]) -> f64 {
        let p = &x[self.p_offset..self.p_offset + self.weights.len()];
        self.weights.iter().zip(p).map(|(w, v)| w * v).sum::<f64>() / self.denom
    }

    pub fn project(&self, x: &mut [f64]) {
        let m = self.mean(x);
        let p = &mut x[self.p_offset..self.p_offset + self.weights.len()];
        for (v, c) in p.iter_mut().zip(&self.constant) {
            *v -= m * c;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csr_from_triplets_dedups_and_sorts() {
        let a = SparseMatrix::from_triplets(
            2,
            3,
            &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, -1.0)],
        );
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 2), 1.5);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(1, 1), -1.0);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn matvec_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut triplets = Vec::new();
        for i in 0..40 {
            for _ in 0..8 {
                triplets.push((i, rng.random_range(0..40), rng.random::<f64>() - 0.5));
            }
        }
        let a = SparseMatrix::from_triplets(40, 40, &triplets);
        let x: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let mut y1 = vec![0.0; 40];
        let mut y2 = vec![0.0; 40];
        a.matvec(&x, &mut y1);
        a.matvec(&x, &mut y2);
        assert_eq!(y1, y2, "bit-identical across runs");
    }

    #[test]
    fn svd_identity_and_diag() {
        let eye = Mat::<f64>::identity(3, 3);
        let (_, s, _) = svd(&eye).unwrap();
        assert_eq!(s.len(), 3);
        for v in &s {
            assert!((v - 1.0).abs() < 1e-14);
        }

        let mut d = Mat::<f64>::zeros(2, 2);
        d[(0, 0)] = 3.0;
        let (_, s, _) = svd(&d).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-14);
        assert!(s[1].abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Mat::from_fn(20, 20, |_, _| rng.random::<f64>() - 0.5);
        let (u, s, v) = svd(&a).unwrap();
        let mut err = 0.0f64;
        for i in 0..20 {
            for j in 0..20 {
                let mut acc = 0.0;
                for k in 0..20 {
                    acc += u[(i, k)] * s[k] * v[(j, k)];
                }
                err = err.max((acc - a[(i, j)]).abs());
            }
        }
        assert!(err <= 1e-12 * s[0] * 20.0, "reconstruction error {err}");
        for w in s.windows(2) {
            assert!(w[0] >= w[1], "singular values non-increasing");
        }
    }

    #[test]
    fn svd_rejects_oversized() {
        let a = Mat::<f64>::zeros(DENSE_CAP + 1, 1);
        assert!(matches!(svd(&a), Err(Error::Oversized { .. })));
    }

    #[test]
    fn pseudo_inverse_moore_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // rank-4 10x10 matrix
        let b = Mat::from_fn(10, 4, |_, _| rng.random::<f64>() - 0.5);
        let c = Mat::from_fn(4, 10, |_, _| rng.random::<f64>() - 0.5);
        let a = &b * &c;
        let pinv = PseudoInverse::new(&a, 1e-12).unwrap();
        assert_eq!(pinv.kernel_dim(), 6);

        // materialize A^+ column by column
        let mut ap = Mat::<f64>::zeros(10, 10);
        for j in 0..10 {
            let mut e = vec![0.0; 10];
            e[j] = 1.0;
            let mut x = vec![0.0; 10];
            pinv.apply(&e, &mut x);
            for i in 0..10 {
                ap[(i, j)] = x[i];
            }
        }
        let aa = &a * &ap * &a;
        let pp = &ap * &a * &ap;
        let apa = &a * &ap; // must be symmetric
        let pa = &ap * &a; // must be symmetric
        let mut err = 0.0f64;
        for i in 0..10 {
            for j in 0..10 {
                err = err.max((aa[(i, j)] - a[(i, j)]).abs());
                err = err.max((pp[(i, j)] - ap[(i, j)]).abs());
                err = err.max((apa[(i, j)] - apa[(j, i)]).abs());
                err = err.max((pa[(i, j)] - pa[(j, i)]).abs());
            }
        }
        assert!(err < 1e-10, "Moore-Penrose identity residual {err}");
    }

    #[test]
    fn bordered_lu_matches_pseudo_inverse() {
        // symmetric singular matrix with kernel (1,1,1)/sqrt(3)
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
                (0, 2, -1.0),
                (2, 0, -1.0),
            ],
        );
        let kernel = vec![1.0, 1.0, 1.0];
        let solver = BorderedSparseLu::new(&a, &kernel).unwrap();
        let r = vec![1.0, 0.0, -1.0]; // orthogonal to kernel
        let mut x = vec![0.0; 3];
        solver.solve(&r, &mut x);

        let pinv = PseudoInverse::new(&a.to_dense(), 1e-12).unwrap();
        let mut x_svd = vec![0.0; 3];
        pinv.apply(&r, &mut x_svd);
        for i in 0..3 {
            assert!((x[i] - x_svd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_zero_projector_basics() {
        // two cells of measure 1/2 each, one mode per cell
        let proj = MeanZeroProjector::new(1, vec![0.5, 0.5], vec![1.0, 1.0]);
        let mut x = vec![7.0, 3.0, 3.0];
        proj.project(&mut x);
        assert_eq!(x[0], 7.0, "non-pressure block untouched");
        assert!(x[1].abs() < 1e-14 && x[2].abs() < 1e-14, "constant killed");

        let mut y = vec![0.0, 1.0, -1.0];
        let y0 = y.clone();
        proj.project(&mut y);
        assert_eq!(y, y0, "already mean-zero input unchanged");
        proj.project(&mut y);
        assert!(proj.mean(&y).abs() <= 1e-14);
    }
}
