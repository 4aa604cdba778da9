//! Dense tensors in canonical order.
//!
//! The canonical element order puts the mode-0 index fastest: entry
//! `(i_0, ..., i_{M-1})` lives at `i_0 + I_0 * (i_1 + I_1 * (i_2 + ...))`.
//! Flattening along mode 0 is therefore a reinterpretation of the storage,
//! and `vec` equals the column stacking of that flattening.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Value("tensor must have at least one mode".into()));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Value(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; shape.len()];
        for lin in 0..t.len() {
            t.decompose(lin, &mut idx);
            t.data[lin] = f(&idx);
        }
        Ok(t)
    }

    /// Order-1 tensor from a vector.
    pub fn from_vec1(v: Vec<f64>) -> Self {
        let n = v.len();
        Self { shape: vec![n], data: v }
    }

    /// Tensor from canonical-order data (mode 0 fastest).
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("bad tensor shape {shape:?}")));
        }
        if data.len() != want {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?} ({want} expected)",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn extent(&self, m: usize) -> usize {
        self.shape[m]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Canonical-order storage; equals `vec` of the tensor.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Stride of mode `m` in the canonical layout.
    #[inline]
    pub fn stride(&self, m: usize) -> usize {
        self.shape[..m].iter().product()
    }

    #[inline]
    fn linear(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        for m in (0..idx.len()).rev() {
            debug_assert!(idx[m] < self.shape[m]);
            lin = lin * self.shape[m] + idx[m];
        }
        lin
    }

    /// Writes the multi-index of linear position `lin` into `idx`.
    #[inline]
    pub fn decompose(&self, mut lin: usize, idx: &mut [usize]) {
        for (m, &e) in self.shape.iter().enumerate() {
            idx[m] = lin % e;
            lin /= e;
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let lin = self.linear(idx);
        self.data[lin] = v;
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

    pub fn scale(&self, a: f64) -> DenseTensor {
        DenseTensor { shape: self.shape.clone(), data: self.data.iter().map(|x| x * a).collect() }
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("add {:?} with {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(DenseTensor { shape: self.shape.clone(), data })
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.add(&other.scale(-1.0))
    }

    /// Relative Frobenius distance `‖self - other‖ / ‖self‖` (absolute when
    /// `self` is zero).
    pub fn relative_error(&self, other: &DenseTensor) -> Result<f64> {
        let diff = self.sub(other)?.frobenius_norm();
        let base = self.frobenius_norm();
        Ok(if base > 0.0 { diff / base } else { diff })
    }

    /// Flattens along mode `m`.
    ///
    /// Row `j` is the mode-`m` index; the column index sweeps the remaining
    /// modes with smaller mode numbers varying more rapidly:
    /// `k = Σ_{n≠m} i_n · Π_{l<n, l≠m} I_l`.
    pub fn matrixize(&self, m: usize) -> Result<Matrix> {
        self.check_mode(m)?;
        let rows = self.shape[m];
        let cols = self.len() / rows;
        if m == 0 {
            // mode 0 is the storage order itself
            return Matrix::new(rows, cols, self.data.clone());
        }
        let inner = self.stride(m); // product of extents below m
        let mut out = Matrix::zeros(rows, cols);
        let block = inner * rows;
        // linear = lo + inner * (j + rows * hi), column = lo + inner * hi
        for (lin, &v) in self.data.iter().enumerate() {
            let lo = lin % inner;
            let j = (lin / inner) % rows;
            let hi = lin / block;
            out.set(j, lo + inner * hi, v);
        }
        Ok(out)
    }

    /// Inverse of [`matrixize`]: rebuilds a tensor of `shape` from its
    /// mode-`m` flattening.
    pub fn tensorize(mat: &Matrix, m: usize, shape: &[usize]) -> Result<DenseTensor> {
        if m >= shape.len() {
            return Err(Error::Value(format!("mode {m} out of range for shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if mat.rows() != shape[m] || mat.rows() * mat.cols() != n {
            return Err(Error::Shape(format!(
                "cannot tensorize {}x{} along mode {m} into {shape:?}",
                mat.rows(),
                mat.cols()
            )));
        }
        if m == 0 {
            return DenseTensor::new(shape.to_vec(), mat.as_slice().to_vec());
        }
        let mut t = DenseTensor::zeros(shape)?;
        let inner: usize = shape[..m].iter().product();
        let rows = shape[m];
        let block = inner * rows;
        for lin in 0..n {
            let lo = lin % inner;
            let j = (lin / inner) % rows;
            let hi = lin / block;
            t.data[lin] = mat.get(j, lo + inner * hi);
        }
        Ok(t)
    }

    /// Mode-`m` product `self ×_m B`, defined by
    /// `(self ×_m B)_[m] = B · self_[m]`. `B` must have `extent(m)` columns;
    /// the result has `B.rows()` in mode `m`.
    pub fn mode_product(&self, m: usize, b: &Matrix) -> Result<DenseTensor> {
        self.check_mode(m)?;
        if b.cols() != self.shape[m] {
            return Err(Error::Shape(format!(
                "mode-{m} product: {}x{} against extent {}",
                b.rows(),
                b.cols(),
                self.shape[m]
            )));
        }
        let flat = self.matrixize(m)?;
        let prod = b.matmul(&flat)?;
        let mut shape = self.shape.clone();
        shape[m] = b.rows();
        Self::tensorize(&prod, m, &shape)
    }

    /// Applies `factors[m]` along every mode (skipping `None` entries).
    pub fn mode_products(&self, factors: &[Option<&Matrix>]) -> Result<DenseTensor> {
        if factors.len() != self.order() {
            return Err(Error::Shape(format!(
                "{} factors for order-{} tensor",
                factors.len(),
                self.order()
            )));
        }
        let mut t = self.clone();
        for (m, f) in factors.iter().enumerate() {
            if let Some(b) = f {
                t = t.mode_product(m, b)?;
            }
        }
        Ok(t)
    }

    fn check_mode(&self, m: usize) -> Result<()> {
        if m >= self.order() {
            return Err(Error::Value(format!(
                "mode {m} out of range for order-{} tensor",
                self.order()
            )));
        }
        Ok(())
    }
}
