//! Dense matrices and third-order tensors.
//!
//! Storage is row-major everywhere: a [`Matrix`] with `rows x cols` keeps
//! element `(i, j)` at `i * cols + j`, and a [`Tensor3`] with extents
//! `(I1, I2, I3)` keeps element `(i1, i2, i3)` at `(i1 * I2 + i2) * I3 + i3`.
//! Indices are zero-based; modes are named 1, 2 and 3.
//!
//! # Unfolding convention
//!
//! The mode-n unfolding places index `i_n` on the rows. The two remaining
//! indices are kept in their tensor order and flattened row-major, the later
//! one varying fastest:
//!
//! | mode | shape            | column of `(i1, i2, i3)` |
//! |------|------------------|--------------------------|
//! | 1    | `I1 x (I2 * I3)` | `i2 * I3 + i3`           |
//! | 2    | `I2 x (I1 * I3)` | `i1 * I3 + i3`           |
//! | 3    | `I3 x (I1 * I2)` | `i1 * I2 + i2`           |
//!
//! Mode products, HOSVD and the adapter gradients all go through the same
//! `(outer, I_n, inner)` view of the data, so this is the only place the
//! ordering is defined.

use crate::error::{CraftError, Result};

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(CraftError::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_mode(mode: usize) -> Result<()> {
    if (1..=3).contains(&mode) {
        Ok(())
    } else {
        Err(CraftError::InvalidMode(mode))
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CraftError::DimensionMismatch(format!(
                "matrix extents must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(CraftError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Convenient in tests and examples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(CraftError::DimensionMismatch(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix extents must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Trusted constructor for results of arithmetic on valid inputs.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "matrix index out of bounds");
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(CraftError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = vec![0.0; self.rows * n];
        for i in 0..self.rows {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(self.rows, n, out))
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(CraftError::DimensionMismatch(format!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = vec![0.0; self.rows * other.rows];
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(Matrix::from_raw(self.rows, other.rows, out))
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(CraftError::DimensionMismatch(format!(
                "cannot multiply transpose of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = vec![0.0; self.cols * n];
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(Matrix::from_raw(self.cols, n, out))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x * s).collect(),
        )
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CraftError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// `‖AᵀA − I‖_F`, the orthonormality defect of the columns.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.t_matmul(self).expect("AᵀA is always conformable");
        let n = gram.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = gram.data[i * n + j] - target;
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense third-order tensor of `f64`, row-major over `(i1, i2, i3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(CraftError::DimensionMismatch(format!(
                "tensor extents must be positive, got {dims:?}"
            )));
        }
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(CraftError::DimensionMismatch(format!(
                "tensor {dims:?} needs {len} values, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(!dims.contains(&0), "tensor extents must be positive");
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = 0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    t.data[idx] = f(i, j, k);
                    idx += 1;
                }
            }
        }
        t
    }

    pub(crate) fn from_raw(dims: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let [a, b, c] = self.dims;
        assert!(i < a && j < b && k < c, "tensor index out of bounds");
        self.data[(i * b + j) * c + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Stacks equally shaped matrices along a new leading mode.
    ///
    /// The result has extents `(mats.len(), rows, cols)` and
    /// `result(l, i, j) == mats[l](i, j)`.
    pub fn stack_layers(mats: &[Matrix]) -> Result<Tensor3> {
        let first = mats.first().ok_or(CraftError::Empty("layer list"))?;
        let shape = first.shape();
        if let Some(bad) = mats.iter().position(|m| m.shape() != shape) {
            return Err(CraftError::DimensionMismatch(format!(
                "layer {bad} has shape {:?}, expected {shape:?}",
                mats[bad].shape()
            )));
        }
        let mut data = Vec::with_capacity(mats.len() * shape.0 * shape.1);
        for m in mats {
            data.extend_from_slice(m.as_slice());
        }
        Ok(Tensor3::from_raw([mats.len(), shape.0, shape.1], data))
    }

    /// Mode-1 slice `self(layer, :, :)` (zero-based).
    pub fn layer(&self, layer: usize) -> Result<Matrix> {
        let [n, rows, cols] = self.dims;
        if layer >= n {
            return Err(CraftError::IndexOutOfRange {
                what: "layer",
                value: layer,
                len: n,
            });
        }
        let stride = rows * cols;
        Ok(Matrix::from_raw(
            rows,
            cols,
            self.data[layer * stride..(layer + 1) * stride].to_vec(),
        ))
    }

    /// `(outer, extent, inner)` view of the data around mode `mode`.
    fn split(dims: [usize; 3], mode: usize) -> (usize, usize, usize) {
        let n = mode - 1;
        let outer = dims[..n].iter().product();
        let inner = dims[n + 1..].iter().product();
        (outer, dims[n], inner)
    }

    /// Mode-n unfolding. See the module docs for the column ordering.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        check_mode(mode)?;
        let (outer, extent, inner) = Self::split(self.dims, mode);
        let cols = outer * inner;
        let mut out = vec![0.0; extent * cols];
        for o in 0..outer {
            for i in 0..extent {
                let src = &self.data[(o * extent + i) * inner..][..inner];
                out[i * cols + o * inner..][..inner].copy_from_slice(src);
            }
        }
        Ok(Matrix::from_raw(extent, cols, out))
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(m: &Matrix, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
        check_mode(mode)?;
        if dims.contains(&0) {
            return Err(CraftError::DimensionMismatch(format!(
                "tensor extents must be positive, got {dims:?}"
            )));
        }
        let (outer, extent, inner) = Self::split(dims, mode);
        if m.shape() != (extent, outer * inner) {
            return Err(CraftError::DimensionMismatch(format!(
                "mode-{mode} unfolding of {dims:?} must be {extent}x{}, got {}x{}",
                outer * inner,
                m.rows(),
                m.cols()
            )));
        }
        let cols = outer * inner;
        let mut data = vec![0.0; m.as_slice().len()];
        for o in 0..outer {
            for i in 0..extent {
                data[(o * extent + i) * inner..][..inner]
                    .copy_from_slice(&m.as_slice()[i * cols + o * inner..][..inner]);
            }
        }
        Ok(Tensor3::from_raw(dims, data))
    }

    /// Mode-n product `self ×ₙ u` with `u` of shape `J x I_n`.
    ///
    /// `out(.., j, ..) = Σ_i u(j, i) · self(.., i, ..)`.
    pub fn mode_n_product(&self, u: &Matrix, mode: usize) -> Result<Tensor3> {
        check_mode(mode)?;
        let (outer, extent, inner) = Self::split(self.dims, mode);
        if u.cols() != extent {
            return Err(CraftError::DimensionMismatch(format!(
                "mode-{mode} product needs a matrix with {extent} columns, got {}x{}",
                u.rows(),
                u.cols()
            )));
        }
        let new_extent = u.rows();
        let mut out = vec![0.0; outer * new_extent * inner];
        for o in 0..outer {
            let src = &self.data[o * extent * inner..][..extent * inner];
            let dst = &mut out[o * new_extent * inner..][..new_extent * inner];
            for j in 0..new_extent {
                let dst_fiber = &mut dst[j * inner..][..inner];
                for (i, &w) in u.row(j).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (d, &s) in dst_fiber.iter_mut().zip(&src[i * inner..][..inner]) {
                        *d += w * s;
                    }
                }
            }
        }
        let mut dims = self.dims;
        dims[mode - 1] = new_extent;
        Ok(Tensor3::from_raw(dims, out))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn inner(&self, other: &Tensor3) -> Result<f64> {
        self.check_same(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        Tensor3::from_raw(self.dims, self.data.iter().map(|x| x * s).collect())
    }

    fn check_same(&self, other: &Tensor3) -> Result<()> {
        if self.dims != other.dims {
            return Err(CraftError::DimensionMismatch(format!(
                "tensor {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.check_same(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor3::from_raw(self.dims, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq_tensor(dims: [usize; 3]) -> Tensor3 {
        let n = dims.iter().product::<usize>();
        Tensor3::new(dims, (1..=n).map(|x| x as f64).collect()).unwrap()
    }

    /// Lists the mode-n fibers of `t` explicitly: for every fixed pair of
    /// remaining indices (in lexicographic order), the vector obtained by
    /// sweeping index n.
    fn fibers(t: &Tensor3, mode: usize) -> Vec<Vec<f64>> {
        let [a, b, c] = t.dims();
        let mut out = Vec::new();
        match mode {
            1 => {
                for j in 0..b {
                    for k in 0..c {
                        out.push((0..a).map(|i| t.get(i, j, k)).collect());
                    }
                }
            }
            2 => {
                for i in 0..a {
                    for k in 0..c {
                        out.push((0..b).map(|j| t.get(i, j, k)).collect());
                    }
                }
            }
            _ => {
                for i in 0..a {
                    for j in 0..b {
                        out.push((0..c).map(|k| t.get(i, j, k)).collect());
                    }
                }
            }
        }
        out
    }

    fn matrix_from_columns(cols: &[Vec<f64>]) -> Matrix {
        Matrix::from_fn(cols[0].len(), cols.len(), |i, j| cols[j][i])
    }

    #[test]
    fn stack_two_by_two() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let t = Tensor3::stack_layers(&[a, b]).unwrap();
        assert_eq!(t.dims(), [2, 2, 2]);
        assert_eq!(t.get(1, 0, 1), 6.0);
        assert_eq!(t.get(0, 1, 0), 3.0);
    }

    #[test]
    fn stack_single_scalar() {
        let t = Tensor3::stack_layers(&[Matrix::from_rows(&[vec![2.5]]).unwrap()]).unwrap();
        assert_eq!(t.dims(), [1, 1, 1]);
        assert_eq!(t.get(0, 0, 0), 2.5);
    }

    #[test]
    fn stack_rejects_mismatch_with_index() {
        let err = Tensor3::stack_layers(&[
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 3),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("layer 2"), "{err}");
        assert!(Tensor3::stack_layers(&[]).is_err());
    }

    #[test]
    fn stack_then_slice_round_trips() {
        let mats: Vec<Matrix> = (0..12)
            .map(|l| Matrix::from_fn(64, 64, |i, j| (l * 10_000 + i * 64 + j) as f64))
            .collect();
        let t = Tensor3::stack_layers(&mats).unwrap();
        assert_eq!(t.dims(), [12, 64, 64]);
        for (l, m) in mats.iter().enumerate() {
            assert_eq!(&t.layer(l).unwrap(), m);
        }
        assert!(t.layer(12).is_err());
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(matches!(
            Tensor3::new([1, 1, 2], vec![0.0, f64::NAN]),
            Err(CraftError::NonFinite { index: 1 })
        ));
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(Tensor3::new([0, 1, 1], vec![]).is_err());
        assert!(Tensor3::new([2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn unfold_shapes() {
        let t = Tensor3::zeros([2, 3, 4]);
        assert_eq!(t.unfold(1).unwrap().shape(), (2, 12));
        assert_eq!(t.unfold(2).unwrap().shape(), (3, 8));
        assert_eq!(t.unfold(3).unwrap().shape(), (4, 6));
        assert!(t.unfold(1).unwrap().as_slice().iter().all(|&x| x == 0.0));
        assert!(matches!(t.unfold(0), Err(CraftError::InvalidMode(0))));
        assert!(matches!(t.unfold(4), Err(CraftError::InvalidMode(4))));
    }

    #[test]
    fn unfold_matches_fiber_enumeration() {
        let t = seq_tensor([2, 2, 2]);
        for mode in 1..=3 {
            let expected = matrix_from_columns(&fibers(&t, mode));
            assert_eq!(t.unfold(mode).unwrap(), expected, "mode {mode}");
        }
        // mode-2 fibers of 1..8 written out by hand
        let m2 = t.unfold(2).unwrap();
        assert_eq!(m2.row(0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(m2.row(1), &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn fold_hand_enumerated_mode3() {
        let t = seq_tensor([2, 2, 2]);
        let m3 = Matrix::from_rows(&[vec![1.0, 3.0, 5.0, 7.0], vec![2.0, 4.0, 6.0, 8.0]]).unwrap();
        assert_eq!(Tensor3::fold(&m3, 3, [2, 2, 2]).unwrap(), t);
        assert_eq!(
            Tensor3::fold(&Matrix::zeros(3, 20), 2, [4, 3, 5]).unwrap(),
            Tensor3::zeros([4, 3, 5])
        );
        assert!(Tensor3::fold(&m3, 3, [2, 2, 3]).is_err());
    }

    #[test]
    fn mode_product_examples() {
        let ones = Tensor3::new([2, 2, 2], vec![1.0; 8]).unwrap();
        let u = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let out = ones.mode_n_product(&u, 2).unwrap();
        assert_eq!(out.dims(), [2, 1, 2]);
        assert!(out.as_slice().iter().all(|&x| x == 2.0));

        let t = seq_tensor([3, 4, 5]);
        for (mode, n) in [(1, 3), (2, 4), (3, 5)] {
            assert_eq!(t.mode_n_product(&Matrix::identity(n), mode).unwrap(), t);
        }
        assert!(t.mode_n_product(&Matrix::identity(4), 1).is_err());
    }

    #[test]
    fn mode_product_elementwise_definition() {
        let t = seq_tensor([2, 3, 2]);
        let u = Matrix::from_fn(4, 3, |j, i| (j as f64) - 0.5 * i as f64);
        let out = t.mode_n_product(&u, 2).unwrap();
        for i1 in 0..2 {
            for j in 0..4 {
                for i3 in 0..2 {
                    let expected: f64 = (0..3).map(|i2| t.get(i1, i2, i3) * u.get(j, i2)).sum();
                    assert_eq!(out.get(i1, j, i3), expected);
                }
            }
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Tensor3::zeros([2, 3, 1]).frobenius_norm(), 0.0);
        assert_eq!(
            Tensor3::new([1, 1, 1], vec![3.0]).unwrap().frobenius_norm(),
            3.0
        );
        assert_eq!(seq_tensor([2, 2, 2]).frobenius_norm(), 204f64.sqrt());
    }

    fn tensor_strategy(max: usize) -> impl Strategy<Value = Tensor3> {
        (1..=max, 1..=max, 1..=max).prop_flat_map(|(a, b, c)| {
            proptest::collection::vec(-10.0..10.0f64, a * b * c)
                .prop_map(move |data| Tensor3::new([a, b, c], data).unwrap())
        })
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-2.0..2.0f64, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn fold_inverts_unfold(t in tensor_strategy(8), mode in 1usize..=3) {
            let back = Tensor3::fold(&t.unfold(mode).unwrap(), mode, t.dims()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn unfold_of_product_is_matrix_product(
            (t, u, mode) in (tensor_strategy(6), 1usize..=3, 1usize..=5).prop_flat_map(|(t, mode, j)| {
                let n = t.dims()[mode - 1];
                (Just(t), matrix_strategy(j, n), Just(mode))
            })
        ) {
            let lhs = t.mode_n_product(&u, mode).unwrap().unfold(mode).unwrap();
            let rhs = u.matmul(&t.unfold(mode).unwrap()).unwrap();
            let scale = rhs.frobenius_norm().max(1e-300);
            prop_assert!(lhs.sub(&rhs).unwrap().frobenius_norm() <= 1e-12 * scale);
        }

        #[test]
        fn distinct_mode_products_commute(
            (t, a, b) in tensor_strategy(5).prop_flat_map(|t| {
                let [i1, i2, _] = t.dims();
                (Just(t), matrix_strategy(3, i1), matrix_strategy(2, i2))
            })
        ) {
            let ab = t.mode_n_product(&a, 1).unwrap().mode_n_product(&b, 2).unwrap();
            let ba = t.mode_n_product(&b, 2).unwrap().mode_n_product(&a, 1).unwrap();
            let scale = ab.frobenius_norm().max(1e-300);
            prop_assert!(ab.sub(&ba).unwrap().frobenius_norm() <= 1e-12 * scale);
        }

        #[test]
        fn orthogonal_product_preserves_norm(t in tensor_strategy(6), mode in 1usize..=3, angle in 0.0..6.28f64) {
            // Block-diagonal Givens rotation acting on the first two indices of the mode.
            let n = t.dims()[mode - 1];
            let q = Matrix::from_fn(n, n, |i, j| match (i, j) {
                (0, 0) | (1, 1) if n > 1 => angle.cos(),
                (0, 1) if n > 1 => -angle.sin(),
                (1, 0) if n > 1 => angle.sin(),
                _ if i == j => 1.0,
                _ => 0.0,
            });
            let before = t.frobenius_norm();
            let after = t.mode_n_product(&q, mode).unwrap().frobenius_norm();
            prop_assert!((before - after).abs() <= 1e-12 * before.max(1e-300));
        }
    }
}
