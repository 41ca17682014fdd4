//! Forward and backward forms of every operation in the network graph.

pub mod conv;
pub mod rearrange;

pub use conv::{
    backward_conv2d, backward_transposed_conv2d, conv2d, transposed_conv2d, ConvSpec,
};
pub use rearrange::{
    backward_lossless_pool, backward_reshuffle, backward_subpixel_upscale, lossless_pool,
    reshuffle, reshuffle_permutation, subpixel_upscale, unshuffle,
};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Gradients produced by one backward step. Parameter-free ops leave the
/// weight and bias parts empty.
#[derive(Debug, Clone)]
pub struct OpGrad<T: Scalar> {
    pub d_input: Tensor<T>,
    pub d_weights: Option<Tensor<T>>,
    pub d_bias: Option<Vec<T>>,
}

impl<T: Scalar> OpGrad<T> {
    pub fn input_only(d_input: Tensor<T>) -> Self {
        OpGrad {
            d_input,
            d_weights: None,
            d_bias: None,
        }
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Passes `upstream` where the forward input was strictly positive. `forward`
/// may be either the pre- or post-activation tensor; both have the same support.
pub fn backward_relu<T: Scalar>(forward: &Tensor<T>, upstream: &Tensor<T>) -> Result<OpGrad<T>> {
    if forward.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "relu backward: upstream {} vs forward {}",
            upstream.shape(),
            forward.shape()
        )));
    }
    let data = forward
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&f, &g)| if f > T::zero() { g } else { T::zero() })
        .collect();
    Ok(OpGrad::input_only(Tensor::from_vec(forward.shape(), data)?))
}
