//! Same-padded 2-D convolution and its adjoint (transposed convolution).
//!
//! Weights of an ordinary convolution are laid out as `(kh, kw, cin, cout)`
//! flattened into a tensor of shape `(kh, kw, cin·cout)`. A transposed
//! convolution is defined as the adjoint of the ordinary convolution that maps
//! its output back to its input, and stores that convolution's weights:
//! `(kh, kw, out_channels, in_channels)`. Both forms therefore share one
//! lowering: im2col blocks multiplied against the `(kh·kw·cin) × cout` weight
//! matrix, and col2im scatter-adds for the adjoint.
//!
//! Padding follows the "same" rule: output size is `⌈H / stride⌉`, the total
//! padding is `max((out − 1)·stride + k − H, 0)` and the smaller half goes on top/left.
//! Every reduction runs in a fixed order, so results do not depend on blocking
//! or thread count.

use super::OpGrad;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Upper bound on elements in one im2col block.
const BLOCK_ELEMS: usize = 1 << 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(k: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            kernel_h: k,
            kernel_w: k,
            in_channels,
            out_channels,
            stride,
            transposed: false,
        }
    }

    pub fn transposed(k: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            transposed: true,
            ..Self::conv(k, in_channels, out_channels, stride)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let odd = |k: usize| k >= 1 && k % 2 == 1;
        if !odd(self.kernel_h) || !odd(self.kernel_w) {
            return Err(Error::Spec(format!(
                "kernel {}x{} must have odd dimensions",
                self.kernel_h, self.kernel_w
            )));
        }
        if !(1..=2).contains(&self.stride) {
            return Err(Error::Spec(format!("stride {} not in {{1, 2}}", self.stride)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Spec("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new_unchecked(
            self.kernel_h,
            self.kernel_w,
            self.in_channels * self.out_channels,
        )
    }

    pub fn weight_count(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels * self.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    /// Spatial output size for an input of `rows × cols`.
    pub fn output_size(&self, rows: usize, cols: usize) -> (usize, usize) {
        if self.transposed {
            (rows * self.stride, cols * self.stride)
        } else {
            (rows.div_ceil(self.stride), cols.div_ceil(self.stride))
        }
    }

    /// Multiply-accumulate count of one application to a `rows × cols` input.
    pub fn macs(&self, rows: usize, cols: usize) -> u64 {
        let taps = (self.kernel_h * self.kernel_w * self.in_channels * self.out_channels) as u64;
        let pixels = if self.transposed {
            rows * cols
        } else {
            let (r, c) = self.output_size(rows, cols);
            r * c
        };
        pixels as u64 * taps
    }
}

/// Geometry of the ordinary convolution that both forms are lowered onto.
#[derive(Debug, Clone, Copy)]
struct Lowering {
    in_rows: usize,
    in_cols: usize,
    cin: usize,
    out_rows: usize,
    out_cols: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

fn same_padding(input: usize, output: usize, k: usize, stride: usize) -> usize {
    ((output - 1) * stride + k).saturating_sub(input) / 2
}

impl Lowering {
    fn new(spec: &ConvSpec, in_rows: usize, in_cols: usize, cin: usize, cout: usize) -> Self {
        let out_rows = in_rows.div_ceil(spec.stride);
        let out_cols = in_cols.div_ceil(spec.stride);
        Lowering {
            in_rows,
            in_cols,
            cin,
            out_rows,
            out_cols,
            cout,
            kh: spec.kernel_h,
            kw: spec.kernel_w,
            stride: spec.stride,
            pad_top: same_padding(in_rows, out_rows, spec.kernel_h, spec.stride),
            pad_left: same_padding(in_cols, out_cols, spec.kernel_w, spec.stride),
        }
    }

    /// Lowering for an ordinary convolution applied to `x`.
    fn for_conv(spec: &ConvSpec, x: Shape) -> Self {
        Self::new(spec, x.rows(), x.cols(), spec.in_channels, spec.out_channels)
    }

    /// Lowering of the convolution whose adjoint is the transposed `spec` applied to `y`.
    fn for_transposed(spec: &ConvSpec, y: Shape) -> Self {
        Self::new(
            spec,
            y.rows() * spec.stride,
            y.cols() * spec.stride,
            spec.out_channels,
            spec.in_channels,
        )
    }

    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn out_pixels(&self) -> usize {
        self.out_rows * self.out_cols
    }

    fn block_rows(&self) -> usize {
        (BLOCK_ELEMS / self.k()).max(1)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Source pixel for output pixel `(ox, oy)` and tap `(dx, dy)`, if inside the input.
    #[inline]
    fn source(&self, ox: usize, oy: usize, dx: usize, dy: usize) -> Option<(usize, usize)> {
        let ix = (ox * self.stride + dx).checked_sub(self.pad_top)?;
        let iy = (oy * self.stride + dy).checked_sub(self.pad_left)?;
        (ix < self.in_rows && iy < self.in_cols).then_some((ix, iy))
    }

    /// Fills `cols` with the patches of output pixels `p0 .. p0 + n`.
    fn im2col<T: Scalar>(&self, x: &[T], p0: usize, n: usize, cols: &mut [T]) {
        let k = self.k();
        let cin = self.cin;
        for (row, p) in (p0..p0 + n).enumerate() {
            let (ox, oy) = (p / self.out_cols, p % self.out_cols);
            let dst = &mut cols[row * k..(row + 1) * k];
            for dx in 0..self.kh {
                for dy in 0..self.kw {
                    let off = (dx * self.kw + dy) * cin;
                    let tap = &mut dst[off..off + cin];
                    match self.source(ox, oy, dx, dy) {
                        Some((ix, iy)) => {
                            let s = (ix * self.in_cols + iy) * cin;
                            tap.copy_from_slice(&x[s..s + cin]);
                        }
                        None => tap.fill(T::zero()),
                    }
                }
            }
        }
    }

    /// Scatter-adds patch gradients of output pixels `p0 .. p0 + n` into `dx`.
    fn col2im<T: Scalar>(&self, dcols: &[T], p0: usize, n: usize, dx: &mut [T]) {
        let k = self.k();
        let cin = self.cin;
        for (row, p) in (p0..p0 + n).enumerate() {
            let (ox, oy) = (p / self.out_cols, p % self.out_cols);
            let src = &dcols[row * k..(row + 1) * k];
            for ddx in 0..self.kh {
                for ddy in 0..self.kw {
                    if let Some((ix, iy)) = self.source(ox, oy, ddx, ddy) {
                        let off = (ddx * self.kw + ddy) * cin;
                        let d = (ix * self.in_cols + iy) * cin;
                        for (acc, &g) in dx[d..d + cin].iter_mut().zip(&src[off..off + cin]) {
                            *acc = *acc + g;
                        }
                    }
                }
            }
        }
    }

    /// `out = lower(x) · W`, shape `out_pixels × cout`.
    fn forward<T: Scalar>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let (k, cout, n_total) = (self.k(), self.cout, self.out_pixels());
        let mut out = vec![T::zero(); n_total * cout];
        if self.is_pointwise() {
            T::gemm(n_total, k, cout, x, (k, 1), w, (cout, 1), &mut out, false);
            return out;
        }
        let block = self.block_rows();
        let mut cols = vec![T::zero(); block.min(n_total) * k];
        let mut p0 = 0;
        while p0 < n_total {
            let n = block.min(n_total - p0);
            self.im2col(x, p0, n, &mut cols);
            T::gemm(
                n,
                k,
                cout,
                &cols,
                (k, 1),
                w,
                (cout, 1),
                &mut out[p0 * cout..(p0 + n) * cout],
                false,
            );
            p0 += n;
        }
        out
    }

    /// Adjoint of [`forward`](Self::forward) in `x`: `dx = lowerᵀ(dy · Wᵀ)`.
    fn adjoint<T: Scalar>(&self, dy: &[T], w: &[T]) -> Vec<T> {
        let (k, cout, n_total) = (self.k(), self.cout, self.out_pixels());
        let mut dx = vec![T::zero(); self.in_rows * self.in_cols * self.cin];
        if self.is_pointwise() {
            T::gemm(n_total, cout, k, dy, (cout, 1), w, (1, cout), &mut dx, false);
            return dx;
        }
        let block = self.block_rows();
        let mut dcols = vec![T::zero(); block.min(n_total) * k];
        let mut p0 = 0;
        while p0 < n_total {
            let n = block.min(n_total - p0);
            T::gemm(
                n,
                cout,
                k,
                &dy[p0 * cout..(p0 + n) * cout],
                (cout, 1),
                w,
                (1, cout),
                &mut dcols[..n * k],
                false,
            );
            self.col2im(&dcols, p0, n, &mut dx);
            p0 += n;
        }
        dx
    }

    /// Gradient of `⟨dy, forward(x, W)⟩` with respect to `W`: `lower(x)ᵀ · dy`.
    fn weight_grad<T: Scalar>(&self, x: &[T], dy: &[T]) -> Vec<T> {
        let (k, cout, n_total) = (self.k(), self.cout, self.out_pixels());
        let mut dw = vec![T::zero(); k * cout];
        if self.is_pointwise() {
            T::gemm(k, n_total, cout, x, (1, k), dy, (cout, 1), &mut dw, false);
            return dw;
        }
        let block = self.block_rows();
        let mut cols = vec![T::zero(); block.min(n_total) * k];
        let mut p0 = 0;
        while p0 < n_total {
            let n = block.min(n_total - p0);
            self.im2col(x, p0, n, &mut cols);
            T::gemm(
                k,
                n,
                cout,
                &cols,
                (1, k),
                &dy[p0 * cout..(p0 + n) * cout],
                (cout, 1),
                &mut dw,
                p0 > 0,
            );
            p0 += n;
        }
        dw
    }
}

fn check_params<T: Scalar>(spec: &ConvSpec, w: &Tensor<T>, b: &[T]) -> Result<()> {
    spec.validate()?;
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape(format!(
            "weights {} do not match kernel {}",
            w.shape(),
            spec.weight_shape()
        )));
    }
    if b.len() != spec.out_channels {
        return Err(Error::shape(format!(
            "bias length {} != out_channels {}",
            b.len(),
            spec.out_channels
        )));
    }
    Ok(())
}

fn check_input<T: Scalar>(spec: &ConvSpec, x: &Tensor<T>, transposed: bool) -> Result<()> {
    if spec.transposed != transposed {
        return Err(Error::Argument(format!(
            "spec.transposed = {} passed to the {} convolution",
            spec.transposed,
            if transposed { "transposed" } else { "ordinary" }
        )));
    }
    if x.channels() != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, layer expects {}",
            x.channels(),
            spec.in_channels
        )));
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], b: &[T]) {
    for px in out.chunks_exact_mut(b.len()) {
        for (v, &bias) in px.iter_mut().zip(b) {
            *v = *v + bias;
        }
    }
}

fn bias_grad<T: Scalar>(upstream: &Tensor<T>) -> Vec<T> {
    let c = upstream.channels();
    let mut db = vec![T::zero(); c];
    for px in upstream.data().chunks_exact(c) {
        for (acc, &g) in db.iter_mut().zip(px) {
            *acc = *acc + g;
        }
    }
    db
}

fn check_upstream<T: Scalar>(upstream: &Tensor<T>, rows: usize, cols: usize, ch: usize) -> Result<()> {
    let expected = Shape::new(rows, cols, ch)?;
    if upstream.shape() != expected {
        return Err(Error::shape(format!(
            "upstream gradient {} does not match forward output {expected}",
            upstream.shape()
        )));
    }
    Ok(())
}

/// `out[x,y,o] = b[o] + Σ w[dx,dy,i,o]·x_pad[stride·x+dx, stride·y+dy, i]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &[T], spec: &ConvSpec) -> Result<Tensor<T>> {
    check_params(spec, w, b)?;
    check_input(spec, x, false)?;
    let low = Lowering::for_conv(spec, x.shape());
    let mut out = low.forward(x.data(), w.data());
    add_bias(&mut out, b);
    Tensor::from_vec(Shape::new(low.out_rows, low.out_cols, low.cout)?, out)
}

/// Adjoint of [`conv2d`] for the same weights; output is `stride ×` the input size.
pub fn transposed_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_params(spec, w, b)?;
    check_input(spec, x, true)?;
    let low = Lowering::for_transposed(spec, x.shape());
    let mut out = low.adjoint(x.data(), w.data());
    add_bias(&mut out, b);
    Tensor::from_vec(Shape::new(low.in_rows, low.in_cols, low.cin)?, out)
}

pub fn backward_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    upstream: &Tensor<T>,
) -> Result<OpGrad<T>> {
    check_input(spec, x, false)?;
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape("weights do not match spec"));
    }
    let low = Lowering::for_conv(spec, x.shape());
    check_upstream(upstream, low.out_rows, low.out_cols, low.cout)?;
    let dx = low.adjoint(upstream.data(), w.data());
    let dw = low.weight_grad(x.data(), upstream.data());
    Ok(OpGrad {
        d_input: Tensor::from_vec(x.shape(), dx)?,
        d_weights: Some(Tensor::from_vec(spec.weight_shape(), dw)?),
        d_bias: Some(bias_grad(upstream)),
    })
}

pub fn backward_transposed_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    upstream: &Tensor<T>,
) -> Result<OpGrad<T>> {
    check_input(spec, x, true)?;
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape("weights do not match spec"));
    }
    let low = Lowering::for_transposed(spec, x.shape());
    check_upstream(upstream, low.in_rows, low.in_cols, low.cin)?;
    let dx = low.forward(upstream.data(), w.data());
    let dw = low.weight_grad(upstream.data(), x.data());
    Ok(OpGrad {
        d_input: Tensor::from_vec(x.shape(), dx)?,
        d_weights: Some(Tensor::from_vec(spec.weight_shape(), dw)?),
        d_bias: Some(bias_grad(upstream)),
    })
}

/// Dispatches on `spec.transposed`.
pub fn apply<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &[T], spec: &ConvSpec) -> Result<Tensor<T>> {
    if spec.transposed {
        transposed_conv2d(x, w, b, spec)
    } else {
        conv2d(x, w, b, spec)
    }
}

/// Dispatches on `spec.transposed`.
pub fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    upstream: &Tensor<T>,
) -> Result<OpGrad<T>> {
    if spec.transposed {
        backward_transposed_conv2d(x, w, spec, upstream)
    } else {
        backward_conv2d(x, w, spec, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1() {
        let spec = ConvSpec::conv(1, 3, 3, 1);
        let mut w = Tensor::<f64>::zeros(spec.weight_shape());
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_fn(Shape::new(4, 5, 3).unwrap(), |a, b, c| (a * 15 + b * 3 + c) as f64);
        assert_eq!(conv2d(&x, &w, &[0.0; 3], &spec).unwrap(), x);
        let tspec = ConvSpec::transposed(1, 3, 3, 1);
        assert_eq!(transposed_conv2d(&x, &w, &[0.0; 3], &tspec).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_ones() {
        let spec = ConvSpec::conv(3, 1, 1, 1);
        let w = Tensor::filled(spec.weight_shape(), 1.0f64);
        let x = Tensor::<f64>::new((3, 3, 1), 1.0).unwrap();
        let y = conv2d(&x, &w, &[0.0], &spec).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn stride_shapes() {
        let spec = ConvSpec::conv(3, 1, 1, 2);
        let w = Tensor::filled(spec.weight_shape(), 1.0f64);
        let x = Tensor::<f64>::new((4, 4, 1), 1.0).unwrap();
        assert_eq!(conv2d(&x, &w, &[0.0], &spec).unwrap().shape(), Shape::new(2, 2, 1).unwrap());
        let tspec = ConvSpec::transposed(3, 1, 1, 2);
        let y = Tensor::<f64>::new((2, 2, 1), 1.0).unwrap();
        assert_eq!(
            transposed_conv2d(&y, &w, &[0.0], &tspec).unwrap().shape(),
            Shape::new(4, 4, 1).unwrap()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = ConvSpec::conv(3, 2, 1, 1);
        let w = Tensor::filled(spec.weight_shape(), 1.0f64);
        let x = Tensor::<f64>::new((4, 4, 1), 1.0).unwrap();
        assert!(matches!(conv2d(&x, &w, &[0.0], &spec), Err(Error::Shape(_))));
        assert!(transposed_conv2d(&x, &w, &[0.0], &spec).is_err());
        let even = ConvSpec::conv(2, 1, 1, 1);
        assert!(matches!(even.validate(), Err(Error::Spec(_))));
        assert!(ConvSpec::conv(3, 1, 1, 3).validate().is_err());
    }

    #[test]
    fn mac_counts() {
        let spec = ConvSpec::conv(3, 64, 64, 2);
        assert_eq!(spec.macs(96, 96), 48 * 48 * 9 * 64 * 64);
        let t = ConvSpec::transposed(3, 64, 64, 2);
        assert_eq!(t.macs(48, 48), 48 * 48 * 9 * 64 * 64);
    }

    #[test]
    fn bias_broadcasts_per_channel() {
        let spec = ConvSpec::conv(3, 1, 2, 1);
        let w = Tensor::<f64>::zeros(spec.weight_shape());
        let x = Tensor::<f64>::new((2, 2, 1), 5.0).unwrap();
        let y = conv2d(&x, &w, &[1.5, -2.0], &spec).unwrap();
        assert_eq!(y.data(), &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
    }
}
