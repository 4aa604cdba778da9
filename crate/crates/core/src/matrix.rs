//! Dense column-major matrices.
//!
//! Storage follows the same canonical sweep as tensors: the row index varies
//! fastest, so `data[r + c * rows]` holds entry `(r, c)`. Column slices are
//! therefore contiguous.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix entry by entry from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; rows * cols];
        for c in 0..cols {
            for r in 0..rows {
                data[r + c * rows] = f(r, c);
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(Error::Shape("ragged row list".into()));
        }
        Ok(Self::from_fn(nr, nc, |r, c| rows[r][c]))
    }

    pub fn column_vector(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + c * self.rows]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + c * self.rows] = v;
    }

    /// Contiguous column-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        (0..self.cols).map(|c| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scale(&self, a: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * a).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        Ok(self.add(&other.scale(-1.0))?)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // k-outer loop keeps both inner accesses column-contiguous
        for c in 0..other.cols {
            let ocol = &mut out.data[c * self.rows..(c + 1) * self.rows];
            for k in 0..self.cols {
                let b = other.data[k + c * other.rows];
                if b == 0.0 {
                    continue;
                }
                let acol = &self.data[k * self.rows..(k + 1) * self.rows];
                for r in 0..self.rows {
                    ocol[r] += acol[r] * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a vector of length `cols`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec {}x{} with vector of {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for c in 0..self.cols {
            let x = v[c];
            if x == 0.0 {
                continue;
            }
            for r in 0..self.rows {
                out[r] += self.get(r, c) * x;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Keeps the first `k` columns.
    pub fn truncate_cols(&self, k: usize) -> Matrix {
        let k = k.min(self.cols);
        Matrix { rows: self.rows, cols: k, data: self.data[..self.rows * k].to_vec() }
    }

    /// Columns `lo..hi` as a new matrix.
    pub fn col_range(&self, lo: usize, hi: usize) -> Matrix {
        assert!(lo <= hi && hi <= self.cols);
        Matrix {
            rows: self.rows,
            cols: hi - lo,
            data: self.data[self.rows * lo..self.rows * hi].to_vec(),
        }
    }

    /// Horizontal concatenation `[A | B | ...]`.
    pub fn hcat(blocks: &[&Matrix]) -> Result<Matrix> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Shape("hcat blocks disagree on row count".into()));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Block-diagonal assembly of square or rectangular blocks.
    pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for c in 0..b.cols {
                for r in 0..b.rows {
                    out.set(r0 + r, c0 + c, b.get(r, c));
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    /// `diag(d)` as a square matrix.
    pub fn diag(d: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m.set(i, i, x);
        }
        m
    }

    /// Maximum absolute deviation of `selfᵀ self` from the identity.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.transpose().matmul(self).expect("gram");
        let mut worst = 0.0_f64;
        for c in 0..g.cols() {
            for r in 0..g.rows() {
                let want = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g.get(r, c) - want).abs());
            }
        }
        worst
    }
}

/// Kronecker product with `[U ⊗ V]_{(ik),(jl)} = u_{ij} v_{kl}`: the left
/// operand indexes the slow (block) position, the right operand the fast one.
pub fn kronecker(u: &Matrix, v: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(u.rows() * v.rows(), u.cols() * v.cols());
    for j in 0..u.cols() {
        for i in 0..u.rows() {
            let uij = u.get(i, j);
            if uij == 0.0 {
                continue;
            }
            for l in 0..v.cols() {
                for k in 0..v.rows() {
                    out.set(i * v.rows() + k, j * v.cols() + l, uij * v.get(k, l));
                }
            }
        }
    }
    out
}

/// Block-matrix Kronecker (Khatri-Rao) product: given block partitions
/// `[U_1 ... U_L]` and `[V_1 ... V_L]`, returns `[(U_1 ⊗ V_1) ... (U_L ⊗ V_L)]`.
///
/// Every `U_l` must share a row count and likewise every `V_l`, so the
/// per-block Kronecker factors are conformable for horizontal concatenation.
pub fn khatri_rao_block(us: &[&Matrix], vs: &[&Matrix]) -> Result<Matrix> {
    if us.len() != vs.len() {
        return Err(Error::Shape(format!(
            "khatri-rao block counts differ: {} vs {}",
            us.len(),
            vs.len()
        )));
    }
    if us.is_empty() {
        return Err(Error::Value("khatri-rao of zero blocks".into()));
    }
    let ur = us[0].rows();
    let vr = vs[0].rows();
    if us.iter().any(|u| u.rows() != ur) || vs.iter().any(|v| v.rows() != vr) {
        return Err(Error::Shape("khatri-rao blocks disagree on row count".into()));
    }
    let prods: Vec<Matrix> = us.iter().zip(vs).map(|(u, v)| kronecker(u, v)).collect();
    Matrix::hcat(&prods.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // entry-formula oracle: [U ⊗ V]_{(ik),(jl)} = u_{ij} v_{kl}
    fn kron_oracle(u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::from_fn(u.rows() * v.rows(), u.cols() * v.cols(), |r, c| {
            let (i, k) = (r / v.rows(), r % v.rows());
            let (j, l) = (c / v.cols(), c % v.cols());
            u.get(i, j) * v.get(k, l)
        })
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.row(0), vec![19.0, 22.0]);
        assert_eq!(c.row(1), vec![43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn column_major_layout() {
        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.col(1), &[3.0, 4.0]);
    }

    #[test]
    fn kronecker_frozen_example() {
        // [[1,2]] ⊗ [[3],[4]] = [[3,6],[4,8]]
        let u = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let k = kronecker(&u, &v);
        assert_eq!(k.row(0), vec![3.0, 6.0]);
        assert_eq!(k.row(1), vec![4.0, 8.0]);
    }

    #[test]
    fn kronecker_matches_entry_oracle() {
        let u = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 - 2.5);
        let v = Matrix::from_fn(2, 4, |r, c| (r * 4 + c) as f64 * 0.5 + 1.0);
        let k = kronecker(&u, &v);
        let o = kron_oracle(&u, &v);
        assert_abs_diff_eq!(k.sub(&o).unwrap().max_abs(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn kronecker_transpose_distributes() {
        let u = Matrix::from_fn(3, 2, |r, c| (r as f64) - 1.3 * c as f64);
        let v = Matrix::from_fn(2, 3, |r, c| (c as f64) + 0.7 * r as f64);
        let lhs = kronecker(&u, &v).transpose();
        let rhs = kronecker(&u.transpose(), &v.transpose());
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn kronecker_mixed_product_on_vectors() {
        // (U ⊗ V)(x ⊗ y) = (U x) ⊗ (V y)
        let u = Matrix::from_fn(3, 2, |r, c| (r + 2 * c) as f64 * 0.3 - 0.4);
        let v = Matrix::from_fn(2, 2, |r, c| 1.0 / (1.0 + (r + c) as f64));
        let x = Matrix::column_vector(&[1.5, -2.0]);
        let y = Matrix::column_vector(&[0.5, 3.0]);
        let lhs = kronecker(&u, &v).matmul(&kronecker(&x, &y)).unwrap();
        let rhs = kronecker(&u.matmul(&x).unwrap(), &v.matmul(&y).unwrap());
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn khatri_rao_frozen_scalar_blocks() {
        // blocks [a],[b] with [c],[d] -> [[ac, bd]]
        let a = Matrix::new(1, 1, vec![2.0]).unwrap();
        let b = Matrix::new(1, 1, vec![3.0]).unwrap();
        let c = Matrix::new(1, 1, vec![5.0]).unwrap();
        let d = Matrix::new(1, 1, vec![7.0]).unwrap();
        let kr = khatri_rao_block(&[&a, &b], &[&c, &d]).unwrap();
        assert_eq!(kr.rows(), 1);
        assert_eq!(kr.cols(), 2);
        assert_eq!(kr.row(0), vec![10.0, 21.0]);
    }

    #[test]
    fn khatri_rao_dimension_bookkeeping() {
        // U row count 2, V row count 3; per-block Kronecker widths 2 and 3
        // give a 6x5 result.
        let u1 = Matrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let u2 = Matrix::from_fn(2, 1, |r, _| r as f64 + 1.0);
        let v1 = Matrix::from_fn(3, 1, |r, _| r as f64 - 1.0);
        let v2 = Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        let kr = khatri_rao_block(&[&u1, &u2], &[&v1, &v2]).unwrap();
        assert_eq!((kr.rows(), kr.cols()), (6, 5));
        // each block is the plain Kronecker of its pair
        let k1 = kronecker(&u1, &v1);
        let k2 = kronecker(&u2, &v2);
        assert!(kr.col_range(0, 2).sub(&k1).unwrap().max_abs() == 0.0);
        assert!(kr.col_range(2, 5).sub(&k2).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn khatri_rao_block_count_mismatch() {
        let a = Matrix::zeros(1, 1);
        assert!(khatri_rao_block(&[&a, &a], &[&a]).is_err());
    }

    #[test]
    fn block_diag_and_hcat() {
        let a = Matrix::identity(2);
        let b = Matrix::from_fn(1, 2, |_, c| c as f64 + 1.0);
        let d = Matrix::block_diag(&[&a, &b]);
        assert_eq!((d.rows(), d.cols()), (3, 4));
        assert_eq!(d.get(2, 2), 1.0);
        assert_eq!(d.get(2, 3), 2.0);
        assert_eq!(d.get(0, 2), 0.0);
        let h = Matrix::hcat(&[&a, &a]).unwrap();
        assert_eq!((h.rows(), h.cols()), (2, 4));
    }
}
