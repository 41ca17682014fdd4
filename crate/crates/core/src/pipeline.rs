//! Whole-image upscaling: bicubic front end, optional network refinement of
//! luma, bicubic chroma.

use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::resample::{self, ResampleSpec};
use crate::tensor::{concat_channels, Scalar, Tensor};

/// Upper bound on output pixels.
pub const MAX_OUTPUT_PIXELS: usize = 1 << 28;

/// Output size for `rows × cols` upscaled by `scale`, or a resource error when it is too large.
pub fn target_size(rows: usize, cols: usize, scale: u32) -> Result<(usize, usize)> {
    let s = scale as usize;
    let out = rows
        .checked_mul(s)
        .zip(cols.checked_mul(s))
        .filter(|(r, c)| r.checked_mul(*c).is_some_and(|p| p <= MAX_OUTPUT_PIXELS));
    out.ok_or_else(|| {
        Error::Resource(format!(
            "{rows}x{cols} upscaled by {scale} exceeds {MAX_OUTPUT_PIXELS} pixels"
        ))
    })
}

/// Runs the network on a bicubic-upscaled luma plane in `[0, 255]`, padding to
/// the architecture's required multiple. Returns luma in `[0, 255]`.
pub fn refine<T: Scalar>(params: &ModelParams<T>, bicubic: &Tensor<f64>) -> Result<Tensor<f64>> {
    let x = bicubic.map(|v| (v / 255.0).clamp(0.0, 1.0)).cast::<T>();
    let (padded, original) = x.pad_to_multiple(params.arch().required_multiple())?;
    let out = model::infer(params, &padded)?.crop_spatial(original)?;
    Ok(out.cast::<f64>().map(|v| v.clamp(0.0, 1.0) * 255.0))
}

/// Upscales a luma plane in `[0, 255]`; bicubic only when `params` is `None`.
pub fn upscale_luma<T: Scalar>(
    params: Option<&ModelParams<T>>,
    lr: &Tensor<f64>,
    scale: u32,
) -> Result<Tensor<f64>> {
    target_size(lr.rows(), lr.cols(), scale)?;
    let up = resample::resize_bicubic(lr, &ResampleSpec::upscale(scale)?)?;
    match params {
        Some(p) => refine(p, &up),
        None => Ok(up),
    }
}

/// Upscales a gray or RGB image in `[0, 255]`. RGB goes through YCbCr; only
/// luma is refined, chroma is bicubic. Output is clamped to `[0, 255]`.
pub fn upscale_image<T: Scalar>(
    params: Option<&ModelParams<T>>,
    img: &Tensor<f64>,
    scale: u32,
) -> Result<Tensor<f64>> {
    match img.channels() {
        1 => Ok(upscale_luma(params, img, scale)?.map(|v| v.clamp(0.0, 255.0))),
        3 => {
            target_size(img.rows(), img.cols(), scale)?;
            let ycc = resample::rgb_to_ycbcr(img)?;
            let y = upscale_luma(params, &ycc.channel_slice(0, 1)?, scale)?;
            let chroma = resample::resize_bicubic(&ycc.channel_slice(1, 2)?, &ResampleSpec::upscale(scale)?)?;
            resample::ycbcr_to_rgb(&concat_channels(&[&y, &chroma])?)
        }
        c => Err(Error::shape(format!("expected 1 or 3 channels, got {c}"))),
    }
}
