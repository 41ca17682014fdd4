//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use lpcn::model::{self, ModelParams};
use lpcn::ops::ConvSpec;
use lpcn::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, ch: usize) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(rows, cols, ch).unwrap(), |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Direct sliding-window convolution with TensorFlow-style "same" zero padding.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], spec: &ConvSpec) -> Tensor<f64> {
    let (h, wd, cin) = (x.rows(), x.cols(), x.channels());
    let (kh, kw, s, cout) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.out_channels);
    let oh = h.div_ceil(s);
    let ow = wd.div_ceil(s);
    let pad_top = ((oh - 1) * s + kh).saturating_sub(h) / 2;
    let pad_left = ((ow - 1) * s + kw).saturating_sub(wd) / 2;
    let mut out = Tensor::zeros(Shape::new(oh, ow, cout).unwrap());
    for ox in 0..oh {
        for oy in 0..ow {
            for o in 0..cout {
                let mut acc = b[o];
                for dx in 0..kh {
                    for dy in 0..kw {
                        let ix = (ox * s + dx) as isize - pad_top as isize;
                        let iy = (oy * s + dy) as isize - pad_left as isize;
                        if ix < 0 || iy < 0 || ix >= h as isize || iy >= wd as isize {
                            continue;
                        }
                        for i in 0..cin {
                            let wi = ((dx * kw + dy) * cin + i) * cout + o;
                            acc += w.data()[wi] * x.get(ix as usize, iy as usize, i);
                        }
                    }
                }
                out.set(ox, oy, o, acc);
            }
        }
    }
    out
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` over all coordinates of `point`,
/// where `numeric` is the central difference of `f` with step `h`.
///
/// A coordinate whose step straddles a ReLU kink is re-probed once with step
/// `h / 100`; a wrong gradient disagrees at both steps.
pub fn max_fd_error(
    point: &[f64],
    analytic: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut p = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let mut err = f64::INFINITY;
        for step in [h, h / 100.0] {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            err = err.min((analytic[i] - numeric).abs() / analytic[i].abs().max(1.0));
            if err < 1e-6 {
                break;
            }
        }
        worst = worst.max(err);
    }
    worst
}

/// Input for the whole-model checks: smooth values in `[0, 1]`.
pub fn model_input(rng: &mut impl Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(n, n, 1).unwrap(), |_, _, _| rng.random_range(0.0..1.0))
}

/// Flattens every weight and bias into one vector in layer order.
pub fn flatten(params: &ModelParams<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for l in params.layers() {
        v.extend_from_slice(l.weights.data());
        v.extend_from_slice(&l.bias);
    }
    v
}

pub fn flatten_grads(g: &model::Gradients<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &g.layers {
        v.extend_from_slice(l.d_weights.data());
        v.extend_from_slice(&l.d_bias);
    }
    v
}

pub fn unflatten(params: &mut ModelParams<f64>, flat: &[f64]) {
    let mut at = 0;
    for l in params.layers_mut() {
        let n = l.weights.data().len();
        l.weights.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
        let m = l.bias.len();
        l.bias.copy_from_slice(&flat[at..at + m]);
        at += m;
    }
}

/// Worst relative error between the model's analytic parameter gradient of
/// `⟨upstream, forward(x)⟩` and central differences.
pub fn model_fd_error(params: &ModelParams<f64>, x: &Tensor<f64>, upstream: &Tensor<f64>, h: f64) -> f64 {
    let f = model::forward(params, x, true).unwrap();
    let grads = model::backward(params, f.context.as_ref().unwrap(), upstream).unwrap();
    let analytic = flatten_grads(&grads);
    let mut probe = params.clone();
    max_fd_error(&flatten(params), &analytic, h, |p| {
        unflatten(&mut probe, p);
        model::infer(&probe, x).unwrap().dot(upstream).unwrap()
    })
}

/// Textured luma in `[0, 255]`: a few random sinusoids plus mild hash noise.
pub fn textured_luma(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                r.random_range(0.05..0.6),
                r.random_range(0.05..0.6),
                r.random_range(0.0..6.28),
                r.random_range(15.0..40.0),
            )
        })
        .collect();
    Tensor::from_fn(Shape::new(rows, cols, 1).unwrap(), |x, y, _| {
        let mut v = 128.0;
        for &(fx, fy, ph, amp) in &waves {
            v += amp * (fx * x as f64 + fy * y as f64 + ph).sin();
        }
        v += ((x * 7919 + y * 104_729 + seed as usize * 31) % 13) as f64 - 6.0;
        v.clamp(0.0, 255.0)
    })
}
