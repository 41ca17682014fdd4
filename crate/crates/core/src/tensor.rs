//! Dense `rows × cols × channels` tensors stored row-major with channels fastest.
//!
//! The flat index of element `(x, y, c)` is `(x * cols + y) * channels + c`, where
//! `x` is the row and `y` the column. Every feature map, image plane and weight
//! block in the crate is one of these.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating-point width used for a process run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    /// 64-bit; used by gradient checks and oracle comparisons.
    Test,
    /// 32-bit; used for training and inference.
    Train,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::Test => 64,
            Precision::Train => 32,
        }
    }
}

/// Element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `C = A·B` (or `C += A·B` when `accumulate`) for row-major operands with explicit
    /// row/column strides. `A` is `m×k`, `B` is `k×n`, `C` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        c: &mut [Self],
        accumulate: bool,
    );
}

fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    (rsa, csa): (usize, usize),
    b_len: usize,
    (rsb, csb): (usize, usize),
    c_len: usize,
) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(last(m, k, rsa, csa) <= a_len, "gemm: A out of bounds");
    assert!(last(k, n, rsb, csb) <= b_len, "gemm: B out of bounds");
    assert!(m * n <= c_len, "gemm: C out of bounds");
}

macro_rules! impl_scalar {
    ($ty:ty, $prec:expr, $kernel:ident) => {
        impl Scalar for $ty {
            const PRECISION: Precision = $prec;

            #[inline]
            fn lit(v: f64) -> Self {
                v as $ty
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
                accumulate: bool,
            ) {
                check_gemm_bounds(m, k, n, a.len(), a_strides, b.len(), b_strides, c.len());
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: bounds checked above; C is row-major m×n and does not alias A or B.
                unsafe {
                    matrixmultiply::$kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, Precision::Train, sgemm);
impl_scalar!(f64, Precision::Test, dgemm);

/// Spatial and channel extent of a tensor. All dimensions are at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    rows: usize,
    cols: usize,
    channels: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "dimensions must be positive, got ({rows}, {cols}, {channels})"
            )));
        }
        Ok(Shape {
            rows,
            cols,
            channels,
        })
    }

    /// Caller guarantees every dimension is non-zero.
    pub(crate) fn new_unchecked(rows: usize, cols: usize, channels: usize) -> Self {
        debug_assert!(rows > 0 && cols > 0 && channels > 0);
        Shape {
            rows,
            cols,
            channels,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn with_channels(self, channels: usize) -> Result<Self> {
        Shape::new(self.rows, self.cols, channels)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.rows && y < self.cols && c < self.channels);
        (x * self.cols + y) * self.channels + c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.rows, self.cols, self.channels)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    /// Tensor of the given `(rows, cols, channels)` with every element set to `fill`.
    pub fn new(dims: (usize, usize, usize), fill: T) -> Result<Self> {
        let shape = Shape::new(dims.0, dims.1, dims.2)?;
        Ok(Self::filled(shape, fill))
    }

    pub fn filled(shape: Shape, fill: T) -> Self {
        Tensor {
            shape,
            data: vec![fill; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(x, y, c)` for every element.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for x in 0..shape.rows {
            for y in 0..shape.cols {
                for c in 0..shape.channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.shape.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.shape.index(x, y, c);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes differ, {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Inner product accumulated in `f64`, in flat index order.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies channels `start..start + count` into a new tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Self> {
        let c = self.shape.channels;
        if count == 0 || start + count > c {
            return Err(Error::shape(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + count
            )));
        }
        let shape = Shape::new_unchecked(self.shape.rows, self.shape.cols, count);
        let mut data = Vec::with_capacity(shape.len());
        for px in self.data.chunks_exact(c) {
            data.extend_from_slice(&px[start..start + count]);
        }
        Ok(Tensor { shape, data })
    }

    /// Splits along channels into consecutive blocks of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let total: usize = sizes.iter().sum();
        if total != self.shape.channels {
            return Err(Error::shape(format!(
                "split sizes sum to {total}, tensor has {} channels",
                self.shape.channels
            )));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let part = self.channel_slice(start, n);
                start += n;
                part
            })
            .collect()
    }

    /// Edge-replicates rows and columns so both become multiples of `m`.
    /// Returns the padded tensor together with the original shape for [`crop_spatial`](Self::crop_spatial).
    pub fn pad_to_multiple(&self, m: usize) -> Result<(Self, Shape)> {
        if m == 0 {
            return Err(Error::Argument("pad multiple must be >= 1".into()));
        }
        let s = self.shape;
        let rows = s.rows.div_ceil(m) * m;
        let cols = s.cols.div_ceil(m) * m;
        if rows == s.rows && cols == s.cols {
            return Ok((self.clone(), s));
        }
        let out_shape = Shape::new_unchecked(rows, cols, s.channels);
        let c = s.channels;
        let mut data = Vec::with_capacity(out_shape.len());
        for x in 0..rows {
            let sx = x.min(s.rows - 1);
            let row = &self.data[sx * s.cols * c..(sx + 1) * s.cols * c];
            data.extend_from_slice(row);
            let last = &row[(s.cols - 1) * c..];
            for _ in s.cols..cols {
                data.extend_from_slice(last);
            }
        }
        Ok((
            Tensor {
                shape: out_shape,
                data,
            },
            s,
        ))
    }

    /// Top-left aligned crop to `target`; channel counts must agree.
    pub fn crop_spatial(&self, target: Shape) -> Result<Self> {
        let s = self.shape;
        if target.channels != s.channels {
            return Err(Error::shape(format!(
                "crop: channel count {} differs from {}",
                target.channels, s.channels
            )));
        }
        if target.rows > s.rows || target.cols > s.cols {
            return Err(Error::shape(format!("crop: target {target} exceeds source {s}")));
        }
        if target == s {
            return Ok(self.clone());
        }
        self.window(0, 0, target.rows, target.cols)
    }

    /// Copies the `rows × cols` window whose top-left corner is `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, rows: usize, cols: usize) -> Result<Self> {
        let s = self.shape;
        if rows == 0 || cols == 0 || x0 + rows > s.rows || y0 + cols > s.cols {
            return Err(Error::shape(format!(
                "window ({x0}, {y0}) + ({rows}, {cols}) outside {s}"
            )));
        }
        let c = s.channels;
        let shape = Shape::new_unchecked(rows, cols, c);
        let mut data = Vec::with_capacity(shape.len());
        for x in x0..x0 + rows {
            let start = (x * s.cols + y0) * c;
            data.extend_from_slice(&self.data[start..start + cols * c]);
        }
        Ok(Tensor { shape, data })
    }
}

/// Concatenates tensors along the channel axis, preserving part order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("concat_channels: empty list".into()))?;
    let (rows, cols) = (first.rows(), first.cols());
    for p in parts {
        if p.rows() != rows || p.cols() != cols {
            return Err(Error::shape(format!(
                "concat_channels: spatial size {} does not match {}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let channels: usize = parts.iter().map(|p| p.channels()).sum();
    let shape = Shape::new_unchecked(rows, cols, channels);
    let mut data = Vec::with_capacity(shape.len());
    for px in 0..rows * cols {
        for p in parts {
            let c = p.channels();
            data.extend_from_slice(&p.data[px * c..(px + 1) * c]);
        }
    }
    Ok(Tensor { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(rows: usize, cols: usize, ch: usize) -> Tensor<f64> {
        let shape = Shape::new(rows, cols, ch).unwrap();
        Tensor::from_vec(shape, (0..shape.len()).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn new_fills() {
        let t = Tensor::<f64>::new((2, 2, 1), 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f64>::new((1, 1, 4), 1.0).unwrap();
        assert_eq!(t.data(), &[1.0; 4]);
        let t = Tensor::<f64>::new((3, 2, 2), 0.5).unwrap();
        assert_eq!(t.data().len(), 12);
        assert!(t.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn new_rejects_zero_dims() {
        assert!(matches!(
            Tensor::<f32>::new((0, 2, 1), 0.0),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::<f32>::new((2, 2, 0), 0.0).is_err());
    }

    #[test]
    fn concat_preserves_order() {
        let a = Tensor::<f64>::new((1, 1, 1), 3.0).unwrap();
        let b = Tensor::<f64>::new((1, 1, 1), 7.0).unwrap();
        let ab = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.data(), &[3.0, 7.0]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_four_replica_maps() {
        let parts: Vec<_> = (0..4)
            .map(|i| Tensor::<f32>::new((48, 48, 16), i as f32).unwrap())
            .collect();
        let refs: Vec<_> = parts.iter().collect();
        let out = concat_channels(&refs).unwrap();
        assert_eq!(out.shape(), Shape::new(48, 48, 64).unwrap());
        assert_eq!(out.get(5, 9, 17), 1.0);
        assert_eq!(out.get(5, 9, 63), 3.0);
    }

    #[test]
    fn concat_errors() {
        assert!(matches!(
            concat_channels::<f32>(&[]),
            Err(Error::Argument(_))
        ));
        let a = Tensor::<f32>::new((2, 2, 1), 0.0).unwrap();
        let b = Tensor::<f32>::new((2, 3, 1), 0.0).unwrap();
        assert!(matches!(concat_channels(&[&a, &b]), Err(Error::Shape(_))));
    }

    #[test]
    fn arithmetic_identities() {
        let x = seq(3, 2, 2);
        let zeros = Tensor::zeros(x.shape());
        assert_eq!(x.add(&zeros).unwrap(), x);
        assert_eq!(x.scale(1.0), x);
        assert_eq!(x.sub(&x).unwrap(), zeros);
        assert!(x.add(&seq(2, 3, 2)).is_err());
    }

    #[test]
    fn pad_already_aligned() {
        let t = seq(4, 4, 1);
        let (p, orig) = t.pad_to_multiple(4).unwrap();
        assert_eq!(p, t);
        assert_eq!(orig, t.shape());
    }

    #[test]
    fn pad_replicates_last_row() {
        let t = seq(5, 4, 1);
        let (p, _) = t.pad_to_multiple(4).unwrap();
        assert_eq!(p.shape(), Shape::new(8, 4, 1).unwrap());
        for x in 5..8 {
            for y in 0..4 {
                assert_eq!(p.get(x, y, 0), t.get(4, y, 0));
            }
        }
    }

    #[test]
    fn pad_single_pixel() {
        let t = Tensor::<f64>::new((1, 1, 1), 0.25).unwrap();
        let (p, _) = t.pad_to_multiple(4).unwrap();
        assert_eq!(p.shape(), Shape::new(4, 4, 1).unwrap());
        assert!(p.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn crop_examples() {
        let t = seq(4, 4, 1);
        assert_eq!(t.crop_spatial(t.shape()).unwrap(), t);
        let c = t.crop_spatial(Shape::new(2, 2, 1).unwrap()).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 4.0, 5.0]);
        assert!(t.crop_spatial(Shape::new(5, 4, 1).unwrap()).is_err());
        assert!(t.crop_spatial(Shape::new(2, 2, 2).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn index_is_a_bijection(rows in 1usize..6, cols in 1usize..6, ch in 1usize..5) {
            let shape = Shape::new(rows, cols, ch).unwrap();
            let mut seen = vec![false; shape.len()];
            let mut t = Tensor::<f64>::zeros(shape);
            for x in 0..rows { for y in 0..cols { for c in 0..ch {
                let i = shape.index(x, y, c);
                prop_assert!(i < shape.len());
                prop_assert!(!seen[i]);
                seen[i] = true;
                let v = (x * 100 + y * 10 + c) as f64;
                t.set(x, y, c, v);
                prop_assert_eq!(t.get(x, y, c), v);
            }}}
        }

        #[test]
        fn split_then_concat_is_identity(
            rows in 1usize..5, cols in 1usize..5,
            sizes in proptest::collection::vec(1usize..4, 1..5),
            seed in any::<u64>(),
        ) {
            let ch: usize = sizes.iter().sum();
            let shape = Shape::new(rows, cols, ch).unwrap();
            let t = Tensor::<f64>::from_fn(shape, |x, y, c| {
                ((seed ^ (x * 7919 + y * 104729 + c) as u64) % 1000) as f64 / 7.0
            });
            let parts = t.split_channels(&sizes).unwrap();
            let refs: Vec<_> = parts.iter().collect();
            prop_assert_eq!(concat_channels(&refs).unwrap(), t);
        }

        #[test]
        fn pad_then_crop_is_identity(rows in 1usize..11, cols in 1usize..11, m in 1usize..6) {
            let t = seq(rows, cols, 2);
            let (p, orig) = t.pad_to_multiple(m).unwrap();
            prop_assert_eq!(p.rows() % m, 0);
            prop_assert_eq!(p.cols() % m, 0);
            prop_assert_eq!(p.crop_spatial(orig).unwrap(), t);
        }

        #[test]
        fn add_commutes(vals in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let shape = Shape::new(2, 3, 2).unwrap();
            let a = Tensor::from_vec(shape, vals.clone()).unwrap();
            let b = Tensor::from_vec(shape, vals.iter().rev().cloned().collect()).unwrap();
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        }
    }
}
