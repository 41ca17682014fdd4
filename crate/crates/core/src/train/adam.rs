//! Bias-corrected Adam, and the optimizer sidecar file.
//!
//! ```text
//! "LPCO" | version: u32 | arch fingerprint: u32 | model crc: u32 | t: u64 | seed: u64 |
//! cursor: u64 | layers: u32 | layers × (len: u32, m: len × f32, v: len × f32) | crc32: u32
//! ```
//!
//! `model crc` is the CRC32 of the body of the model file saved with this state, so a
//! mismatched pair is caught on resume.

use std::path::Path;

use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::tensor::Scalar;

pub const OPTIMIZER_MAGIC: &[u8; 4] = b"LPCO";
pub const OPTIMIZER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::Argument(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter group, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One group per layer: weights followed by bias.
    pub fn for_params(params: &ModelParams<T>) -> Self {
        let sizes: Vec<usize> = params
            .layers()
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .collect();
        Self::new(&sizes)
    }
}

/// Updates one parameter group in place for step `t` (already incremented).
pub fn adam_update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one_b1 = T::lit(1.0 - cfg.beta1);
    let one_b2 = T::lit(1.0 - cfg.beta2);
    let bc1 = T::lit(1.0 - cfg.beta1.powf(t as f64));
    let bc2 = T::lit(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.epsilon);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + one_b1 * g[i];
        v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step over every layer of `params`.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.layers().len();
    if grads.layers.len() != n || state.m.len() != n {
        return Err(Error::State(format!(
            "{n} parameter layers, {} gradient layers, {} optimizer groups",
            grads.layers.len(),
            state.m.len()
        )));
    }
    for (i, (layer, g)) in params.layers().iter().zip(&grads.layers).enumerate() {
        let nw = layer.weights.data().len();
        let size = nw + layer.bias.len();
        if g.d_weights.data().len() != nw || g.d_bias.len() != layer.bias.len() || state.m[i].len() != size {
            return Err(Error::State(format!("layer {} does not match its gradient or optimizer state", layer.id)));
        }
    }
    state.t += 1;
    let t = state.t;
    for (i, layer) in params.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[i];
        let nw = layer.weights.data().len();
        let (mw, mb) = state.m[i].split_at_mut(nw);
        let (vw, vb) = state.v[i].split_at_mut(nw);
        adam_update(layer.weights.data_mut(), g.d_weights.data(), mw, vw, t, cfg);
        adam_update(&mut layer.bias, &g.d_bias, mb, vb, t, cfg);
    }
    Ok(())
}

/// Optimizer state plus the sampler position needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerCheckpoint {
    pub fingerprint: u32,
    pub model_crc: u32,
    pub seed: u64,
    /// Index of the next sample in the seeded epoch sequence.
    pub cursor: u64,
    pub state: AdamState<f32>,
}

pub fn encode_optimizer(ck: &OptimizerCheckpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(OPTIMIZER_MAGIC);
    w.u32(OPTIMIZER_VERSION);
    w.u32(ck.fingerprint);
    w.u32(ck.model_crc);
    w.u64(ck.state.t);
    w.u64(ck.seed);
    w.u64(ck.cursor);
    w.u32(ck.state.m.len() as u32);
    for (m, v) in ck.state.m.iter().zip(&ck.state.v) {
        w.u32(m.len() as u32);
        w.f32s(m.iter().copied());
        w.f32s(v.iter().copied());
    }
    w.finish_with_crc()
}

pub fn decode_optimizer(bytes: &[u8]) -> Result<OptimizerCheckpoint> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(OPTIMIZER_MAGIC)?;
    r.expect_version(OPTIMIZER_VERSION)?;
    let body = binio::verify_crc(bytes)?;
    let mut r = ByteReader::new(body);
    r.take(8, "header")?;
    let fingerprint = r.u32("fingerprint")?;
    let model_crc = r.u32("model_crc")?;
    let t = r.u64("t")?;
    let seed = r.u64("seed")?;
    let cursor = r.u64("cursor")?;
    let groups = r.u32("layers")? as usize;
    if groups > r.remaining() / 4 {
        return Err(Error::format("layers", format!("implausible count {groups}")));
    }
    let mut m = Vec::with_capacity(groups);
    let mut v = Vec::with_capacity(groups);
    for i in 0..groups {
        let len = r.u32("group.len")? as usize;
        let field = format!("group[{i}]");
        m.push(r.f32s(len, &field)?);
        let vi = r.f32s(len, &field)?;
        if vi.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::format(field, "second moment must be non-negative"));
        }
        v.push(vi);
    }
    r.expect_end()?;
    Ok(OptimizerCheckpoint {
        fingerprint,
        model_crc,
        seed,
        cursor,
        state: AdamState { t, m, v },
    })
}

pub fn save_optimizer(ck: &OptimizerCheckpoint, path: &Path) -> Result<()> {
    binio::write_atomic(path, &encode_optimizer(ck))
}

pub fn load_optimizer(path: &Path) -> Result<OptimizerCheckpoint> {
    decode_optimizer(&binio::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchSpec, Mode};

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        for g in [0.3f64, -2.0, 1e-3] {
            let mut p = [1.0f64];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, 1, &cfg);
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.epsilon);
            assert!((p[0] - expected).abs() < 1e-15, "{g}");
        }
    }

    #[test]
    fn zero_gradient_fresh_state_is_identity() {
        let mut p: ModelParams<f32> = build_model(ArchSpec::reduced(Mode::LpcnSrPlus, 2, 8, &[1, 2]), 1).unwrap();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut s = AdamState::for_params(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.t, 1);
        for (a, b) in p.layers().iter().zip(before.layers()) {
            let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.weights.data()), bits(b.weights.data()));
            assert_eq!(bits(&a.bias), bits(&b.bias));
        }
    }

    #[test]
    fn scalar_quadratic_converges() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=200 {
            let g = [2.0 * (p[0] - 3.0)];
            adam_update(&mut p, &g, &mut m, &mut v, t, &cfg);
        }
        assert!((p[0] - 3.0).abs() < 0.05, "{}", p[0]);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut p: ModelParams<f32> = build_model(ArchSpec::reduced(Mode::LpcnSrPlus, 2, 8, &[1, 2]), 1).unwrap();
        let other: ModelParams<f32> = build_model(ArchSpec::reduced(Mode::LpcnSr, 2, 8, &[1, 2]), 1).unwrap();
        let g = Gradients::zeros_like(&other);
        let mut s = AdamState::for_params(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()),
            Err(Error::State(_))
        ));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn optimizer_file_round_trip_and_faults() {
        let mut state = AdamState::<f32>::new(&[3, 2]);
        state.t = 7;
        state.m[0] = vec![0.5, -1.0, 2.0];
        state.v[1] = vec![0.25, 1e-9];
        let ck = OptimizerCheckpoint {
            fingerprint: 0xdead_beef,
            model_crc: 42,
            seed: 9,
            cursor: 1234,
            state,
        };
        let bytes = encode_optimizer(&ck);
        assert_eq!(decode_optimizer(&bytes).unwrap(), ck);

        let mut bad = bytes.clone();
        bad[2] = b'X';
        assert!(matches!(decode_optimizer(&bad), Err(Error::Format { field, .. }) if field == "magic"));
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        let e = decode_optimizer(&bad).unwrap_err().to_string();
        assert!(e.contains("checksum mismatch"), "{e}");
        assert!(decode_optimizer(&bytes[..bytes.len() - 3]).is_err());
    }
}
