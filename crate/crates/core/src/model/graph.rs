//! Forward evaluation and reverse-mode gradients of the assembled network.
//!
//! Branch A: lossless pool → one convolution per replica → concatenate →
//! reshuffle → encoder-decoder → head convolution → sub-pixel upscale.
//! Branch B (plus mode): convolution at full resolution → the same
//! encoder-decoder → single-filter head. The two images are concatenated as
//! `[A, B]` and mixed by the 1×1 fusion layer.

use super::arch::{LayerId, Mode};
use super::params::{Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::ops::{self, conv, rearrange};
use crate::tensor::{concat_channels, Scalar, Shape, Tensor};

/// Intermediates of one encoder-decoder pass.
#[derive(Debug, Clone)]
struct EncDecContext<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
struct BranchAContext<T: Scalar> {
    replicas: Vec<Tensor<T>>,
    replica_out: Vec<Tensor<T>>,
    encdec: EncDecContext<T>,
    encdec_out: Tensor<T>,
}

#[derive(Debug, Clone)]
struct BranchBContext<T: Scalar> {
    input: Tensor<T>,
    conv_out: Tensor<T>,
    encdec: EncDecContext<T>,
    encdec_out: Tensor<T>,
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Context<T: Scalar> {
    mode: Mode,
    fingerprint: u32,
    generation: u64,
    input_shape: Shape,
    a: BranchAContext<T>,
    b: Option<BranchBContext<T>>,
    fusion_in: Option<Tensor<T>>,
}

impl<T: Scalar> Context<T> {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }
}

/// Which branch images receive upstream gradient in plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branches {
    Both,
    OnlyA,
    OnlyB,
}

/// Outputs of a forward pass. `branch_a` / `branch_b` are the two intermediate
/// images in plus mode; in basic mode `branch_a` equals `output`.
#[derive(Debug, Clone)]
pub struct Forward<T: Scalar> {
    pub output: Tensor<T>,
    pub branch_a: Tensor<T>,
    pub branch_b: Option<Tensor<T>>,
    pub context: Option<Context<T>>,
}

fn layer_params<T: Scalar>(params: &ModelParams<T>, id: LayerId) -> (&Tensor<T>, &[T], conv::ConvSpec) {
    let layer = params.layer(id).expect("layer present for this mode");
    (&layer.weights, &layer.bias, layer.spec)
}

fn apply_layer<T: Scalar>(params: &ModelParams<T>, id: LayerId, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (w, b, spec) = layer_params(params, id);
    conv::apply(x, w, b, &spec)
}

fn encdec_forward<T: Scalar>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    keep: bool,
) -> Result<(Tensor<T>, Option<EncDecContext<T>>)> {
    let arch = params.arch();
    let n = arch.encdec.len();
    let mut skip_out: Vec<Option<Tensor<T>>> = vec![None; n];
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut h = x.clone();
    for (j, layer) in arch.encdec.iter().enumerate() {
        let mut z = apply_layer(params, LayerId::EncDec(j), &h)?;
        for &(k, d) in &arch.skip_pairs {
            if d == j {
                let src = skip_out[k].as_ref().expect("encoder output recorded");
                z.add_assign(src)?;
            }
        }
        if layer.relu {
            ops::relu_in_place(&mut z);
        }
        if arch.skip_pairs.iter().any(|&(k, _)| k == j) {
            skip_out[j] = Some(z.clone());
        }
        if keep {
            inputs.push(std::mem::replace(&mut h, z));
            outputs.push(h.clone());
        } else {
            h = z;
        }
    }
    let ctx = keep.then_some(EncDecContext { inputs, outputs });
    Ok((h, ctx))
}

fn encdec_backward<T: Scalar>(
    params: &ModelParams<T>,
    ctx: &EncDecContext<T>,
    d_out: Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor<T>> {
    let arch = params.arch();
    let n = arch.encdec.len();
    let mut skip_grad: Vec<Option<Tensor<T>>> = vec![None; n];
    let mut g = d_out;
    for j in (0..n).rev() {
        if let Some(sg) = skip_grad[j].take() {
            g.add_assign(&sg)?;
        }
        if arch.encdec[j].relu {
            g = ops::backward_relu(&ctx.outputs[j], &g)?.d_input;
        }
        for &(k, d) in &arch.skip_pairs {
            if d == j {
                match &mut skip_grad[k] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        let id = LayerId::EncDec(j);
        let (w, _, spec) = layer_params(params, id);
        let og = conv::backward(&ctx.inputs[j], w, &spec, &g)?;
        let index = arch.layer_index(id).expect("encdec layer");
        grads.accumulate(index, og.d_weights.as_ref().unwrap(), og.d_bias.as_ref().unwrap())?;
        g = og.d_input;
    }
    Ok(g)
}

fn check_input<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<()> {
    let m = params.arch().required_multiple();
    if x.channels() != 1 {
        return Err(Error::Shape(format!(
            "network input must be a single luma plane, got {} channels",
            x.channels()
        )));
    }
    if x.rows() % m != 0 || x.cols() % m != 0 {
        return Err(Error::Shape(format!(
            "input {} must have rows and columns divisible by {m}",
            x.shape()
        )));
    }
    Ok(())
}

fn branch_a_forward<T: Scalar>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    keep: bool,
) -> Result<(Tensor<T>, Option<BranchAContext<T>>)> {
    let arch = params.arch();
    let r = arch.r;
    let pooled = rearrange::lossless_pool(x, r)?;
    let replicas = pooled.split_channels(&vec![1; arch.replicas()])?;
    let mut replica_out = Vec::with_capacity(replicas.len());
    for (i, rep) in replicas.iter().enumerate() {
        let mut z = apply_layer(params, LayerId::Replica(i), rep)?;
        ops::relu_in_place(&mut z);
        replica_out.push(z);
    }
    let refs: Vec<_> = replica_out.iter().collect();
    let fused = rearrange::reshuffle(&concat_channels(&refs)?, arch.per_replica(), r)?;
    let (e, encdec) = encdec_forward(params, &fused, keep)?;
    let head = apply_layer(params, LayerId::Head, &e)?;
    let sr = rearrange::subpixel_upscale(&head, r)?;
    let ctx = keep.then(|| BranchAContext {
        replicas,
        replica_out,
        encdec: encdec.expect("kept"),
        encdec_out: e,
    });
    Ok((sr, ctx))
}

fn branch_a_backward<T: Scalar>(
    params: &ModelParams<T>,
    ctx: &BranchAContext<T>,
    d_sr: &Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<()> {
    let arch = params.arch();
    let r = arch.r;
    let d_head = rearrange::lossless_pool(d_sr, r)?;
    let (w, _, spec) = layer_params(params, LayerId::Head);
    let og = conv::backward(&ctx.encdec_out, w, &spec, &d_head)?;
    grads.accumulate(
        arch.layer_index(LayerId::Head).unwrap(),
        og.d_weights.as_ref().unwrap(),
        og.d_bias.as_ref().unwrap(),
    )?;
    let d_fused = encdec_backward(params, &ctx.encdec, og.d_input, grads)?;
    let d_cat = rearrange::unshuffle(&d_fused, arch.per_replica(), r)?;
    let d_parts = d_cat.split_channels(&vec![arch.per_replica(); arch.replicas()])?;
    for (i, d) in d_parts.iter().enumerate() {
        let d = ops::backward_relu(&ctx.replica_out[i], d)?.d_input;
        let id = LayerId::Replica(i);
        let (w, _, spec) = layer_params(params, id);
        let og = conv::backward(&ctx.replicas[i], w, &spec, &d)?;
        grads.accumulate(
            arch.layer_index(id).unwrap(),
            og.d_weights.as_ref().unwrap(),
            og.d_bias.as_ref().unwrap(),
        )?;
    }
    Ok(())
}

fn branch_b_forward<T: Scalar>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    keep: bool,
) -> Result<(Tensor<T>, Option<BranchBContext<T>>)> {
    let mut z = apply_layer(params, LayerId::BranchBConv, x)?;
    ops::relu_in_place(&mut z);
    let (e, encdec) = encdec_forward(params, &z, keep)?;
    let sr = apply_layer(params, LayerId::BranchBHead, &e)?;
    let ctx = keep.then(|| BranchBContext {
        input: x.clone(),
        conv_out: z,
        encdec: encdec.expect("kept"),
        encdec_out: e,
    });
    Ok((sr, ctx))
}

fn branch_b_backward<T: Scalar>(
    params: &ModelParams<T>,
    ctx: &BranchBContext<T>,
    d_sr: &Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<()> {
    let arch = params.arch();
    let (w, _, spec) = layer_params(params, LayerId::BranchBHead);
    let og = conv::backward(&ctx.encdec_out, w, &spec, d_sr)?;
    grads.accumulate(
        arch.layer_index(LayerId::BranchBHead).unwrap(),
        og.d_weights.as_ref().unwrap(),
        og.d_bias.as_ref().unwrap(),
    )?;
    let d_z = encdec_backward(params, &ctx.encdec, og.d_input, grads)?;
    let d_z = ops::backward_relu(&ctx.conv_out, &d_z)?.d_input;
    let (w, _, spec) = layer_params(params, LayerId::BranchBConv);
    let og = conv::backward(&ctx.input, w, &spec, &d_z)?;
    grads.accumulate(
        arch.layer_index(LayerId::BranchBConv).unwrap(),
        og.d_weights.as_ref().unwrap(),
        og.d_bias.as_ref().unwrap(),
    )?;
    Ok(())
}

/// Runs the network on a bicubic-upscaled luma plane in `[0, 1]`. Rows and
/// columns must be multiples of [`ArchSpec::required_multiple`](super::ArchSpec::required_multiple).
pub fn forward<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>, keep_context: bool) -> Result<Forward<T>> {
    check_input(params, x)?;
    let (sr_a, a_ctx) = branch_a_forward(params, x, keep_context)?;
    let context = |a, b, fusion_in| Context {
        mode: params.mode(),
        fingerprint: params.arch().fingerprint(),
        generation: params.generation(),
        input_shape: x.shape(),
        a,
        b,
        fusion_in,
    };
    match params.mode() {
        Mode::LpcnSr => Ok(Forward {
            output: sr_a.clone(),
            branch_a: sr_a,
            branch_b: None,
            context: a_ctx.map(|a| context(a, None, None)),
        }),
        Mode::LpcnSrPlus => {
            let (sr_b, b_ctx) = branch_b_forward(params, x, keep_context)?;
            let fusion_in = concat_channels(&[&sr_a, &sr_b])?;
            let output = apply_layer(params, LayerId::Fusion, &fusion_in)?;
            let ctx = match (a_ctx, b_ctx) {
                (Some(a), Some(b)) => Some(context(a, Some(b), Some(fusion_in))),
                _ => None,
            };
            Ok(Forward {
                output,
                branch_a: sr_a,
                branch_b: Some(sr_b),
                context: ctx,
            })
        }
    }
}

/// Gradients of `⟨d_output, forward(params, x)⟩` with respect to every parameter.
/// Shared encoder-decoder gradients are the sum over both branches.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    context: &Context<T>,
    d_output: &Tensor<T>,
) -> Result<Gradients<T>> {
    backward_branches(params, context, d_output, Branches::Both)
}

/// As [`backward`], restricting upstream gradient to the selected branch images.
pub fn backward_branches<T: Scalar>(
    params: &ModelParams<T>,
    ctx: &Context<T>,
    d_output: &Tensor<T>,
    branches: Branches,
) -> Result<Gradients<T>> {
    if ctx.mode != params.mode() || ctx.fingerprint != params.arch().fingerprint() {
        return Err(Error::State("context was produced by a different architecture".into()));
    }
    if ctx.generation != params.generation() {
        return Err(Error::State("context is stale: parameters changed since forward".into()));
    }
    if d_output.shape() != ctx.input_shape {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match output {}",
            d_output.shape(),
            ctx.input_shape
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    match params.mode() {
        Mode::LpcnSr => branch_a_backward(params, &ctx.a, d_output, &mut grads)?,
        Mode::LpcnSrPlus => {
            let fusion_in = ctx
                .fusion_in
                .as_ref()
                .ok_or_else(|| Error::State("context lacks fusion input".into()))?;
            let b_ctx = ctx
                .b
                .as_ref()
                .ok_or_else(|| Error::State("context lacks branch B".into()))?;
            let (w, _, spec) = layer_params(params, LayerId::Fusion);
            let og = conv::backward(fusion_in, w, &spec, d_output)?;
            grads.accumulate(
                params.arch().layer_index(LayerId::Fusion).unwrap(),
                og.d_weights.as_ref().unwrap(),
                og.d_bias.as_ref().unwrap(),
            )?;
            let parts = og.d_input.split_channels(&[1, 1])?;
            if branches != Branches::OnlyB {
                branch_a_backward(params, &ctx.a, &parts[0], &mut grads)?;
            }
            if branches != Branches::OnlyA {
                branch_b_backward(params, b_ctx, &parts[1], &mut grads)?;
            }
        }
    }
    Ok(grads)
}

/// Inference convenience: forward without keeping intermediates.
pub fn infer<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward(params, x, false)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchSpec};

    fn ramp(n: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(n, n, 1).unwrap(), |x, y, _| ((x * 7 + y * 3) % 11) as f64 / 11.0)
    }

    #[test]
    fn shape_contract_both_modes() {
        for mode in [Mode::LpcnSr, Mode::LpcnSrPlus] {
            let p: ModelParams<f32> = build_model(ArchSpec::default_for(mode), 5).unwrap();
            let x = ramp(96).cast::<f32>();
            let out = infer(&p, &x).unwrap();
            assert_eq!(out.shape(), x.shape());
            assert!(out.all_finite());
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p: ModelParams<f64> = build_model(ArchSpec::default_for(Mode::LpcnSr), 5).unwrap();
        assert!(matches!(infer(&p, &ramp(12)), Err(Error::Shape(_))));
        let rgb = Tensor::<f64>::new((16, 16, 3), 0.0).unwrap();
        assert!(matches!(infer(&p, &rgb), Err(Error::Shape(_))));
    }

    #[test]
    fn fusion_at_init_averages() {
        let p: ModelParams<f64> = build_model(ArchSpec::default_for(Mode::LpcnSrPlus), 2).unwrap();
        let f = forward(&p, &ramp(32), false).unwrap();
        let b = f.branch_b.unwrap();
        let avg = f.branch_a.add(&b).unwrap().scale(0.5);
        assert!(f.output.max_abs_diff(&avg).unwrap() < 1e-15);
    }

    #[test]
    fn basic_mode_matches_branch_a_of_plus() {
        let plus: ModelParams<f64> = build_model(ArchSpec::default_for(Mode::LpcnSrPlus), 9).unwrap();
        let layers = plus.layers()[..plus.arch().layers().len() - 3].to_vec();
        let basic = ModelParams::from_layers(ArchSpec::default_for(Mode::LpcnSr), layers).unwrap();
        let x = ramp(16);
        let a = forward(&plus, &x, false).unwrap().branch_a;
        assert_eq!(infer(&basic, &x).unwrap(), a);
    }

    #[test]
    fn shared_encdec_reaches_both_branches() {
        let mut p: ModelParams<f64> = build_model(ArchSpec::default_for(Mode::LpcnSrPlus), 4).unwrap();
        let x = ramp(16);
        let before = forward(&p, &x, false).unwrap();
        for w in p.layer_mut(LayerId::EncDec(9)).unwrap().bias.iter_mut() {
            *w += 0.25;
        }
        let after = forward(&p, &x, false).unwrap();
        assert_ne!(before.branch_a, after.branch_a);
        assert_ne!(before.branch_b, after.branch_b);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for mode in [Mode::LpcnSr, Mode::LpcnSrPlus] {
            let p: ModelParams<f64> = build_model(ArchSpec::reduced(mode, 2, 8, &[1, 2]), 4).unwrap();
            let x = ramp(8);
            let f = forward(&p, &x, true).unwrap();
            let g = backward(&p, f.context.as_ref().unwrap(), &Tensor::zeros(x.shape())).unwrap();
            assert!(g.is_zero());
        }
    }

    #[test]
    fn stale_or_foreign_context_rejected() {
        let mut p: ModelParams<f64> = build_model(ArchSpec::reduced(Mode::LpcnSr, 2, 8, &[1, 2]), 4).unwrap();
        let x = ramp(8);
        let ctx = forward(&p, &x, true).unwrap().context.unwrap();
        let up = Tensor::zeros(x.shape());
        assert!(backward(&p, &ctx, &up).is_ok());
        assert!(matches!(
            backward(&p, &ctx, &Tensor::zeros(Shape::new(16, 16, 1).unwrap())),
            Err(Error::Shape(_))
        ));
        let other: ModelParams<f64> =
            build_model(ArchSpec::reduced(Mode::LpcnSrPlus, 2, 8, &[1, 2]), 4).unwrap();
        assert!(matches!(backward(&other, &ctx, &up), Err(Error::State(_))));
        p.layers_mut()[0].bias[0] = 1.0;
        assert!(matches!(backward(&p, &ctx, &up), Err(Error::State(_))));
    }

    #[test]
    fn front_pool_is_lossless_inside_graph() {
        let p: ModelParams<f64> = build_model(ArchSpec::default_for(Mode::LpcnSr), 1).unwrap();
        let x = ramp(16);
        let ctx = forward(&p, &x, true).unwrap().context.unwrap();
        let refs: Vec<_> = ctx.a.replicas.iter().collect();
        let restored = rearrange::subpixel_upscale(&concat_channels(&refs).unwrap(), 2).unwrap();
        assert_eq!(restored, x);
    }
}
