//! Pure index permutations: lossless pooling (space-to-depth), its inverse
//! sub-pixel upscaling (depth-to-space), and the replica-interleaving reshuffle.
//!
//! Lossless pooling with factor `r` maps a plane `M` of size `H × W` to a tensor
//! `T` of size `H/r × W/r × r²` by
//!
//! ```text
//! T[x, y, c] = M[r·x + (c mod r), r·y + ⌊c / r⌋],   c = 0 .. r²−1
//! ```
//!
//! This is the 0-based form of the 1-based definition
//! `T[x,y,c] = M[r·x − ((r² − c) mod r), r·y − ⌊(r² − c)/r⌋]`: substituting
//! `x = x'+1`, `c = c'+1` and using `(r² − 1 − c') mod r = r − 1 − (c' mod r)` and
//! `⌊(r² − 1 − c')/r⌋ = r − 1 − ⌊c'/r⌋` gives the rows and columns above.
//! Multi-channel inputs are pooled channel by channel; output channel
//! `ci·r² + c` holds replica `c` of input channel `ci`.

use super::OpGrad;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

fn check_factor(r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::Argument("factor r must be >= 1".into()));
    }
    Ok(())
}

/// Space-to-depth rearrangement; a permutation of the input elements.
pub fn lossless_pool<T: Scalar>(m: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    check_factor(r)?;
    let s = m.shape();
    if s.rows() % r != 0 || s.cols() % r != 0 {
        return Err(Error::shape(format!(
            "lossless_pool: {s} not divisible by r = {r}"
        )));
    }
    let rr = r * r;
    let out_shape = Shape::new_unchecked(s.rows() / r, s.cols() / r, s.channels() * rr);
    let src = m.data();
    let mut data = Vec::with_capacity(out_shape.len());
    for x in 0..out_shape.rows() {
        for y in 0..out_shape.cols() {
            for ci in 0..s.channels() {
                for c in 0..rr {
                    data.push(src[s.index(r * x + c % r, r * y + c / r, ci)]);
                }
            }
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Depth-to-space rearrangement; the exact inverse of [`lossless_pool`].
pub fn subpixel_upscale<T: Scalar>(t: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    check_factor(r)?;
    let s = t.shape();
    let rr = r * r;
    if s.channels() % rr != 0 {
        return Err(Error::shape(format!(
            "subpixel_upscale: {} channels not divisible by r² = {rr}",
            s.channels()
        )));
    }
    let out_ch = s.channels() / rr;
    let out_shape = Shape::new_unchecked(s.rows() * r, s.cols() * r, out_ch);
    let src = t.data();
    let mut data = Vec::with_capacity(out_shape.len());
    for i in 0..out_shape.rows() {
        for j in 0..out_shape.cols() {
            let sub = i % r + r * (j % r);
            for ci in 0..out_ch {
                data.push(src[s.index(i / r, j / r, ci * rr + sub)]);
            }
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Source channel of output channel `c` under the reshuffle with `n` features per replica.
#[inline]
pub fn reshuffle_source(c: usize, n: usize, r: usize) -> usize {
    let rr = r * r;
    c / rr + n * (c % rr)
}

/// The full reshuffle permutation: entry `c` is the input channel copied to output channel `c`.
pub fn reshuffle_permutation(n: usize, r: usize) -> Vec<usize> {
    (0..n * r * r).map(|c| reshuffle_source(c, n, r)).collect()
}

fn check_reshuffle(channels: usize, n: usize, r: usize) -> Result<()> {
    check_factor(r)?;
    if n == 0 || channels != n * r * r {
        return Err(Error::shape(format!(
            "reshuffle: expected n·r² = {} channels, got {channels}",
            n * r * r
        )));
    }
    Ok(())
}

fn permute_channels<T: Scalar>(t: &Tensor<T>, perm: &[usize], inverse: bool) -> Tensor<T> {
    let c = t.channels();
    let mut data = vec![T::zero(); t.data().len()];
    for (src_px, dst_px) in t.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
        for (out_c, &in_c) in perm.iter().enumerate() {
            if inverse {
                dst_px[in_c] = src_px[out_c];
            } else {
                dst_px[out_c] = src_px[in_c];
            }
        }
    }
    Tensor::from_vec(t.shape(), data).expect("same shape")
}

/// Interleaves the concatenated per-replica feature maps: output channel `c`
/// takes input channel `⌊c/r²⌋ + n·(c mod r²)`.
pub fn reshuffle<T: Scalar>(f: &Tensor<T>, n: usize, r: usize) -> Result<Tensor<T>> {
    check_reshuffle(f.channels(), n, r)?;
    Ok(permute_channels(f, &reshuffle_permutation(n, r), false))
}

/// Inverse of [`reshuffle`].
pub fn unshuffle<T: Scalar>(f: &Tensor<T>, n: usize, r: usize) -> Result<Tensor<T>> {
    check_reshuffle(f.channels(), n, r)?;
    Ok(permute_channels(f, &reshuffle_permutation(n, r), true))
}

fn check_upstream<T: Scalar>(upstream: &Tensor<T>, expected: Shape, op: &str) -> Result<()> {
    if upstream.shape() != expected {
        return Err(Error::shape(format!(
            "{op} backward: upstream {} does not match forward output {expected}",
            upstream.shape()
        )));
    }
    Ok(())
}

/// Gradient of [`lossless_pool`]: the inverse permutation applied to `upstream`.
pub fn backward_lossless_pool<T: Scalar>(
    input_shape: Shape,
    r: usize,
    upstream: &Tensor<T>,
) -> Result<OpGrad<T>> {
    check_factor(r)?;
    let expected = Shape::new(
        input_shape.rows() / r,
        input_shape.cols() / r,
        input_shape.channels() * r * r,
    )?;
    check_upstream(upstream, expected, "lossless_pool")?;
    Ok(OpGrad::input_only(subpixel_upscale(upstream, r)?))
}

/// Gradient of [`subpixel_upscale`].
pub fn backward_subpixel_upscale<T: Scalar>(
    input_shape: Shape,
    r: usize,
    upstream: &Tensor<T>,
) -> Result<OpGrad<T>> {
    check_factor(r)?;
    let expected = Shape::new(
        input_shape.rows() * r,
        input_shape.cols() * r,
        input_shape.channels() / (r * r),
    )?;
    check_upstream(upstream, expected, "subpixel_upscale")?;
    Ok(OpGrad::input_only(lossless_pool(upstream, r)?))
}

/// Gradient of [`reshuffle`].
pub fn backward_reshuffle<T: Scalar>(
    upstream: &Tensor<T>,
    n: usize,
    r: usize,
) -> Result<OpGrad<T>> {
    Ok(OpGrad::input_only(unshuffle(upstream, n, r)?))
}
