//! PSNR and SSIM under the usual super-resolution benchmark conventions, and
//! dataset-level evaluation.
//!
//! Per image: luma (stored as 8-bit), mod-crop to the scale, antialiased
//! bicubic downscale stored as 8-bit, upscale with the method under test,
//! round the result to 8-bit, shave `scale` pixels from every border, then
//! PSNR (peak 255) and SSIM (11×11 Gaussian window, σ = 1.5, valid region).

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::imageio;
use crate::resample::{self, ResampleSpec};
use crate::tensor::{Scalar, Shape, Tensor};

pub const PEAK: f64 = 255.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "metric operands differ in shape: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> &'static [f64; SSIM_WINDOW] {
    static W: OnceLock<[f64; SSIM_WINDOW]> = OnceLock::new();
    W.get_or_init(|| {
        let half = (SSIM_WINDOW / 2) as f64;
        let mut w = [0.0; SSIM_WINDOW];
        for (i, v) in w.iter_mut().enumerate() {
            let d = i as f64 - half;
            *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
        let s: f64 = w.iter().sum();
        w.map(|v| v / s)
    })
}

/// Valid-region separable filtering of a single-channel plane given as rows × cols.
fn filter_valid(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let w = gaussian_window();
    let (or, oc) = (rows + 1 - SSIM_WINDOW, cols + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; rows * oc];
    for x in 0..rows {
        let row = &data[x * cols..(x + 1) * cols];
        for y in 0..oc {
            tmp[x * oc + y] = w.iter().zip(&row[y..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for x in 0..or {
        for y in 0..oc {
            out[x * oc + y] = (0..SSIM_WINDOW).map(|i| w[i] * tmp[(x + i) * oc + y]).sum();
        }
    }
    out
}

/// Mean local SSIM; with `luminance` false only the contrast-structure factor is averaged.
fn ssim_plane(a: &[f64], b: &[f64], rows: usize, cols: usize, peak: f64, luminance: bool) -> f64 {
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, rows, cols);
    let mu_b = filter_valid(b, rows, cols);
    let aa = filter_valid(&prod(|x, _| x * x), rows, cols);
    let bb = filter_valid(&prod(|_, y| y * y), rows, cols);
    let ab = filter_valid(&prod(|x, y| x * y), rows, cols);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += if luminance {
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            num / den
        } else {
            (2.0 * cov + c2) / (va + vb + c2)
        };
    }
    total / n as f64
}

/// Mean SSIM over the valid region, averaged across channels.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    if a.rows() < SSIM_WINDOW || a.cols() < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}",
            a.shape()
        )));
    }
    let ch = a.channels();
    let mut total = 0.0;
    for c in 0..ch {
        let pa = a.channel_slice(c, 1)?;
        let pb = b.channel_slice(c, 1)?;
        total += ssim_plane(pa.data(), pb.data(), a.rows(), a.cols(), peak, true);
    }
    Ok(total / ch as f64)
}

/// Removes `s` pixels from each side.
pub fn shave_border<T: Scalar>(img: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    if s == 0 {
        return Ok(img.clone());
    }
    if img.rows() <= 2 * s || img.cols() <= 2 * s {
        return Err(Error::Argument(format!(
            "cannot shave {s} pixels from {}",
            img.shape()
        )));
    }
    img.window(s, s, img.rows() - 2 * s, img.cols() - 2 * s)
}

/// HR luma (8-bit levels, mod-cropped) and its degraded LR counterpart.
pub fn prepare_pair(hr: &Tensor<f64>, scale: u32) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let y = resample::quantize_u8(&resample::luma(hr)?);
    let y = resample::mod_crop(&y, scale as usize)?;
    let lr = resample::degrade(&y, scale)?;
    Ok((y, lr))
}

/// PSNR and SSIM of `sr` against `hr` after 8-bit rounding and a `shave`-pixel border crop.
pub fn score(hr: &Tensor<f64>, sr: &Tensor<f64>, shave: usize) -> Result<(f64, f64)> {
    same_shape(hr, sr)?;
    let sr = resample::quantize_u8(sr);
    let a = shave_border(hr, shave)?;
    let b = shave_border(&sr, shave)?;
    Ok((psnr(&a, &b, PEAK)?, ssim(&a, &b, PEAK)?))
}

/// Maps an LR luma plane in `[0, 255]` to an SR plane `scale` times larger.
pub type Upscaler<'a> = dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>> + Sync + 'a;

/// Plain bicubic upscaling by `scale`.
pub fn bicubic_upscaler(scale: u32) -> impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> + Sync {
    move |lr| resample::resize_bicubic(lr, &ResampleSpec::upscale(scale)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Wall time of the upscaler call.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub scale: u32,
    pub shave: usize,
    pub entries: Vec<EvalEntry>,
    /// Images that could not be evaluated, with the reason.
    pub failures: Vec<(String, String)>,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// Mean over finite values; `+∞` when every entry is infinite, NaN when empty.
    pub fn mean_psnr(&self) -> f64 {
        let finite: Vec<f64> = self.entries.iter().map(|e| e.psnr).filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return if self.entries.is_empty() { f64::NAN } else { f64::INFINITY };
        }
        finite.iter().sum::<f64>() / finite.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.entries.iter().map(|e| e.ssim).sum::<f64>() / self.entries.len() as f64
    }

    pub fn mean_seconds(&self) -> f64 {
        self.entries.iter().map(|e| e.seconds).sum::<f64>() / self.entries.len() as f64
    }

    /// `PSNR=<x> SSIM=<y> N=<n>`
    pub fn aggregate_line(&self) -> String {
        format!(
            "PSNR={} SSIM={:.4} N={}",
            fmt_psnr(self.mean_psnr()),
            self.mean_ssim(),
            self.entries.len()
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# method={} scale={} shave={}\nname,psnr_db,ssim,seconds\n",
            self.method, self.scale, self.shave
        );
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", e.name, fmt_psnr(e.psnr), e.ssim, e.seconds);
        }
        let _ = writeln!(
            s,
            "mean,{},{:.6},{:.6}",
            fmt_psnr(self.mean_psnr()),
            self.mean_ssim(),
            self.mean_seconds()
        );
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, self.to_csv().as_bytes())
    }
}

fn evaluate_one(hr: &Tensor<f64>, upscaler: &Upscaler, scale: u32) -> Result<(f64, f64, f64)> {
    let (y, lr) = prepare_pair(hr, scale)?;
    let start = Instant::now();
    let sr = upscaler(&lr)?;
    let seconds = start.elapsed().as_secs_f64();
    let (p, s) = score(&y, &sr, scale as usize)?;
    Ok((p, s, seconds))
}

/// Evaluates already-decoded HR images (RGB or gray, `[0, 255]`) in parallel; order is preserved.
pub fn evaluate_images(
    images: &[(String, Tensor<f64>)],
    upscaler: &Upscaler,
    scale: u32,
    method: &str,
) -> Result<EvalReport> {
    let results: Vec<_> = images
        .par_iter()
        .map(|(name, hr)| (name.clone(), evaluate_one(hr, upscaler, scale)))
        .collect();
    assemble(results, scale, method)
}

fn assemble(results: Vec<(String, Result<(f64, f64, f64)>)>, scale: u32, method: &str) -> Result<EvalReport> {
    let mut report = EvalReport {
        method: method.to_string(),
        scale,
        shave: scale as usize,
        entries: Vec::new(),
        failures: Vec::new(),
    };
    for (name, r) in results {
        match r {
            Ok((psnr, ssim, seconds)) => report.entries.push(EvalEntry { name, psnr, ssim, seconds }),
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                report.failures.push((name, e.to_string()));
            }
        }
    }
    if report.entries.is_empty() {
        return Err(Error::Argument("no image could be evaluated".into()));
    }
    Ok(report)
}

/// Evaluates every PNG in `hr_dir`; writes the CSV report when `report_path` is given.
pub fn evaluate_set(
    hr_dir: &Path,
    upscaler: &Upscaler,
    scale: u32,
    method: &str,
    report_path: Option<&Path>,
) -> Result<EvalReport> {
    let paths = imageio::list_images(hr_dir)?;
    let results: Vec<_> = paths
        .par_iter()
        .map(|p| {
            let name = imageio::image_name(p);
            let r = imageio::read_image(p).and_then(|img| evaluate_one(&img.pixels, upscaler, scale));
            (name, r)
        })
        .collect();
    let report = assemble(results, scale, method)?;
    if let Some(path) = report_path {
        report.write_csv(path)?;
    }
    Ok(report)
}

/// Checkerboard of `cell`-pixel squares alternating between `lo` and `hi`.
pub fn checkerboard(rows: usize, cols: usize, cell: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(Shape::new_unchecked(rows, cols, 1), |x, y, _| {
        if (x / cell + y / cell) % 2 == 0 {
            lo
        } else {
            hi
        }
    })
}
