//! Bicubic resampling and BT.601 colour conversion, following the conventions of
//! the benchmark resizer used by super-resolution evaluations (MATLAB `imresize`).
//!
//! Resampling is separable: rows first, then columns. Output pixel `u` (0-based)
//! samples source coordinate `(u + 0.5)/scale − 0.5`. When downscaling with
//! antialiasing the cubic kernel is stretched by `1/scale`. Every weight row is
//! renormalised to sum to one and taps that fall outside the image are mirrored
//! back in (edge sample repeated).

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = −0.5`.
pub fn cubic_kernel(t: f64) -> f64 {
    let a = CUBIC_A;
    let x = t.abs();
    let x2 = x * x;
    let x3 = x2 * x;
    if x <= 1.0 {
        (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    } else if x < 2.0 {
        a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// A rational scale factor and whether the kernel is stretched for antialiasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleSpec {
    num: u32,
    den: u32,
    antialias: bool,
}

impl ResampleSpec {
    /// Factor `num / den`; antialiasing is enabled exactly when the factor is below one.
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Argument(format!("scale factor {num}/{den} must be positive")));
        }
        Ok(ResampleSpec {
            num,
            den,
            antialias: num < den,
        })
    }

    pub fn upscale(s: u32) -> Result<Self> {
        Self::new(s, 1)
    }

    pub fn downscale(s: u32) -> Result<Self> {
        Self::new(1, s)
    }

    pub fn factor(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn antialias(&self) -> bool {
        self.antialias
    }

    /// Output length for an input of `len` samples: `⌈len · factor⌉`.
    pub fn output_len(&self, len: usize) -> usize {
        (len as u64 * self.num as u64).div_ceil(self.den as u64) as usize
    }
}

/// Per-output-sample taps: source indices and normalised weights.
#[derive(Debug, Clone)]
pub struct Contributions {
    pub taps: Vec<Vec<(usize, f64)>>,
}

fn mirror(i: i64, len: usize) -> usize {
    let period = 2 * len as i64;
    let m = i.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Weight table for resampling `in_len` samples to `out_len` at `scale`.
pub fn contributions(in_len: usize, out_len: usize, scale: f64, antialias: bool) -> Contributions {
    let stretch = antialias && scale < 1.0;
    let width = if stretch { 4.0 / scale } else { 4.0 };
    let taps_per = width.ceil() as i64 + 2;
    let taps = (0..out_len)
        .map(|u| {
            let center = (u as f64 + 0.5) / scale - 0.5;
            let left = (center - width / 2.0).floor() as i64;
            let mut row: Vec<(i64, f64)> = (0..taps_per)
                .map(|j| {
                    let idx = left + j;
                    let d = center - idx as f64;
                    let w = if stretch {
                        scale * cubic_kernel(d * scale)
                    } else {
                        cubic_kernel(d)
                    };
                    (idx, w)
                })
                .collect();
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            for (_, w) in &mut row {
                *w /= sum;
            }
            row.into_iter()
                .filter(|&(_, w)| w != 0.0)
                .map(|(i, w)| (mirror(i, in_len), w))
                .collect()
        })
        .collect();
    Contributions { taps }
}

fn resize_axis<T: Scalar>(img: &Tensor<T>, out_len: usize, scale: f64, antialias: bool, along_rows: bool) -> Tensor<T> {
    let s = img.shape();
    let (in_len, out_shape) = if along_rows {
        (s.rows(), Shape::new_unchecked(out_len, s.cols(), s.channels()))
    } else {
        (s.cols(), Shape::new_unchecked(s.rows(), out_len, s.channels()))
    };
    let table = contributions(in_len, out_len, scale, antialias);
    Tensor::from_fn(out_shape, |x, y, c| {
        let (u, fixed) = if along_rows { (x, y) } else { (y, x) };
        let acc: f64 = table.taps[u]
            .iter()
            .map(|&(i, w)| {
                let v = if along_rows { img.get(i, fixed, c) } else { img.get(fixed, i, c) };
                w * v.as_f64()
            })
            .sum();
        T::lit(acc)
    })
}

/// Resizes every channel by `spec`'s factor, rows first then columns.
pub fn resize_bicubic<T: Scalar>(img: &Tensor<T>, spec: &ResampleSpec) -> Result<Tensor<T>> {
    let out_rows = spec.output_len(img.rows());
    let out_cols = spec.output_len(img.cols());
    resize_axes(img, out_rows, out_cols, spec.factor(), spec.antialias(), true)
}

/// As [`resize_bicubic`] but columns first; used to check separability.
pub fn resize_bicubic_cols_first<T: Scalar>(img: &Tensor<T>, spec: &ResampleSpec) -> Result<Tensor<T>> {
    let out_rows = spec.output_len(img.rows());
    let out_cols = spec.output_len(img.cols());
    resize_axes(img, out_rows, out_cols, spec.factor(), spec.antialias(), false)
}

fn resize_axes<T: Scalar>(
    img: &Tensor<T>,
    out_rows: usize,
    out_cols: usize,
    scale: f64,
    antialias: bool,
    rows_first: bool,
) -> Result<Tensor<T>> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::shape(format!(
            "resize target ({out_rows}, {out_cols}) must be positive"
        )));
    }
    if rows_first {
        let tmp = resize_axis(img, out_rows, scale, antialias, true);
        Ok(resize_axis(&tmp, out_cols, scale, antialias, false))
    } else {
        let tmp = resize_axis(img, out_cols, scale, antialias, false);
        Ok(resize_axis(&tmp, out_rows, scale, antialias, true))
    }
}

/// Rounds to the nearest integer level and clamps to `[0, 255]`, as an 8-bit store would.
pub fn quantize_u8<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| T::lit(v.as_f64().round().clamp(0.0, 255.0)))
}

/// The degradation model: antialiased bicubic downscale by `s`, stored as 8-bit.
/// Input and output are in `[0, 255]`.
pub fn degrade<T: Scalar>(hr: &Tensor<T>, s: u32) -> Result<Tensor<T>> {
    Ok(quantize_u8(&resize_bicubic(hr, &ResampleSpec::downscale(s)?)?))
}

/// Trims rows and columns down to multiples of `s`.
pub fn mod_crop<T: Scalar>(img: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let rows = img.rows() - img.rows() % s;
    let cols = img.cols() - img.cols() % s;
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "image {} smaller than scale {s}",
            img.shape()
        )));
    }
    img.crop_spatial(Shape::new(rows, cols, img.channels())?)
}

const YCBCR_OFFSET: [f64; 3] = [16.0, 128.0, 128.0];
const YCBCR_MATRIX: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];

fn ycbcr_inverse() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| {
        let m = YCBCR_MATRIX.map(|row| row.map(|v| v / 255.0));
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
            }
        }
        inv
    })
}

fn check_rgb<T: Scalar>(img: &Tensor<T>) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::shape(format!(
            "colour conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    Ok(())
}

/// BT.601 studio-swing RGB → YCbCr on `[0, 255]` values; inputs are clamped first.
pub fn rgb_to_ycbcr<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    check_rgb(img)?;
    let mut out = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let rgb = [0, 1, 2].map(|i| px[i].as_f64().clamp(0.0, 255.0));
        for (row, off) in YCBCR_MATRIX.iter().zip(YCBCR_OFFSET) {
            let v = off + (row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2]) / 255.0;
            out.push(T::lit(v));
        }
    }
    Tensor::from_vec(img.shape(), out)
}

/// Inverse of [`rgb_to_ycbcr`]; the result is clamped to `[0, 255]`.
pub fn ycbcr_to_rgb<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    check_rgb(img)?;
    let inv = ycbcr_inverse();
    let mut out = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let d = [0, 1, 2].map(|i| px[i].as_f64() - YCBCR_OFFSET[i]);
        for row in inv {
            let v = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
            out.push(T::lit(v.clamp(0.0, 255.0)));
        }
    }
    Tensor::from_vec(img.shape(), out)
}

/// Y channel of an RGB image, or the image itself when it has one channel.
pub fn luma<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => rgb_to_ycbcr(img)?.channel_slice(0, 1),
        c => Err(Error::shape(format!("expected 1 or 3 channels, got {c}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, ch: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(rows, cols, ch).unwrap(), |_, _, _| rng.random_range(0.0..255.0))
    }

    #[test]
    fn kernel_knots() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(-1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert_eq!(cubic_kernel(3.5), 0.0);
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..1000 {
            let t = i as f64 * 1e-3;
            let s: f64 = (-3..=3).map(|k| cubic_kernel(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12, "t = {t}: {s}");
        }
    }

    #[test]
    fn weight_rows_sum_to_one() {
        for (inl, outl, scale, aa) in [(96, 24, 0.25, true), (24, 96, 4.0, false), (17, 6, 1.0 / 3.0, true), (5, 15, 3.0, false)] {
            let c = contributions(inl, outl, scale, aa);
            for row in &c.taps {
                let s: f64 = row.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|t| t.0 < inl));
            }
        }
    }

    #[test]
    fn mirror_indices() {
        assert_eq!(mirror(-1, 5), 0);
        assert_eq!(mirror(-2, 5), 1);
        assert_eq!(mirror(5, 5), 4);
        assert_eq!(mirror(6, 5), 3);
        assert_eq!(mirror(2, 5), 2);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::<f64>::new((13, 17, 2), 87.25).unwrap();
        for spec in [ResampleSpec::downscale(4).unwrap(), ResampleSpec::upscale(3).unwrap(), ResampleSpec::new(2, 3).unwrap()] {
            let out = resize_bicubic(&img, &spec).unwrap();
            assert!(out.data().iter().all(|v| (v - 87.25).abs() < 1e-12));
        }
    }

    #[test]
    fn unit_factor_is_identity() {
        let img = random_image(9, 7, 1, 1);
        let out = resize_bicubic(&img, &ResampleSpec::new(1, 1).unwrap()).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn separable_in_either_order() {
        let img = random_image(24, 20, 1, 2);
        for spec in [ResampleSpec::downscale(4).unwrap(), ResampleSpec::upscale(4).unwrap()] {
            let a = resize_bicubic(&img, &spec).unwrap();
            let b = resize_bicubic_cols_first(&img, &spec).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
        }
    }

    fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }

    #[test]
    fn smooth_ramp_survives_round_trip() {
        let img = Tensor::from_fn(Shape::new(64, 64, 1).unwrap(), |x, y, _| {
            128.0 + 60.0 * ((x as f64) / 20.0).sin() * ((y as f64) / 25.0).cos()
        });
        let lr = resize_bicubic(&img, &ResampleSpec::downscale(2).unwrap()).unwrap();
        let up = resize_bicubic(&lr, &ResampleSpec::upscale(2).unwrap()).unwrap();
        assert!(psnr(&img, &up) > 40.0, "{}", psnr(&img, &up));
    }

    #[test]
    fn noise_round_trip_is_deterministic() {
        let img = random_image(32, 32, 1, 9);
        let run = || {
            let lr = resize_bicubic(&img, &ResampleSpec::downscale(4).unwrap()).unwrap();
            psnr(&img, &resize_bicubic(&lr, &ResampleSpec::upscale(4).unwrap()).unwrap())
        };
        let (a, b) = (run(), run());
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn output_lengths() {
        let down = ResampleSpec::downscale(4).unwrap();
        assert!(down.antialias());
        assert_eq!(down.output_len(96), 24);
        assert_eq!(down.output_len(97), 25);
        assert!(!ResampleSpec::upscale(4).unwrap().antialias());
        assert!(ResampleSpec::new(0, 1).is_err());
    }

    #[test]
    fn ycbcr_white_and_black() {
        let white = Tensor::<f64>::new((1, 1, 3), 255.0).unwrap();
        let y = rgb_to_ycbcr(&white).unwrap();
        assert!((y.get(0, 0, 0) - 235.0).abs() < 1e-9);
        assert!((y.get(0, 0, 1) - 128.0).abs() < 1e-9);
        let black = Tensor::<f64>::new((1, 1, 3), 0.0).unwrap();
        assert!((rgb_to_ycbcr(&black).unwrap().get(0, 0, 0) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn ycbcr_round_trip() {
        let img = random_image(16, 16, 3, 4);
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0);
    }

    #[test]
    fn luma_channel_handling() {
        let g = random_image(4, 4, 1, 5);
        assert_eq!(luma(&g).unwrap(), g);
        assert_eq!(luma(&random_image(4, 4, 3, 5)).unwrap().channels(), 1);
        assert!(luma(&random_image(4, 4, 2, 5)).is_err());
    }

    #[test]
    fn mod_crop_trims() {
        let img = random_image(10, 13, 1, 6);
        let c = mod_crop(&img, 4).unwrap();
        assert_eq!((c.rows(), c.cols()), (8, 12));
        assert!(mod_crop(&random_image(3, 8, 1, 6), 4).is_err());
    }
}
