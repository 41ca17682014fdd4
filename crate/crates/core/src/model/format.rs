//! Model files.
//!
//! ```text
//! "LPCN" | version: u32 | mode: u8 | architecture table | payload | crc32: u32
//! ```
//!
//! The architecture table is a sequence of little-endian `u32`: the mode code
//! again, `r`; the five
//! fixed convolutions (replica, branch-B conv, head, branch-B head, fusion) as
//! `kh, kw, cin, cout, stride, transposed`; the encoder-decoder length followed
//! by one `kh, kw, cin, cout, stride, transposed, relu` row per layer; the skip
//! count followed by `(encoder, decoder)` pairs. The payload holds each layer's
//! weights then biases as little-endian `f32`, in layer order. The CRC covers
//! every preceding byte.

use std::path::Path;

use super::arch::{ArchSpec, EncDecLayer, Mode};
use super::params::{Layer, ModelParams};
use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::{Scalar, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"LPCN";
pub const MODEL_VERSION: u32 = 1;

/// Largest layer count or channel count accepted when decoding, to reject garbage early.
const SANITY_LIMIT: u32 = 1 << 16;

fn put_conv(w: &mut ByteWriter, s: &ConvSpec) {
    for v in [s.kernel_h, s.kernel_w, s.in_channels, s.out_channels, s.stride] {
        w.u32(v as u32);
    }
    w.u32(s.transposed as u32);
}

/// Encodes the architecture table. Also the input to [`ArchSpec::fingerprint`].
pub fn encode_arch(arch: &ArchSpec) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u32(arch.mode.code() as u32);
    w.u32(arch.r as u32);
    for s in [
        &arch.replica_conv,
        &arch.branch_b_conv,
        &arch.head_conv,
        &arch.branch_b_head,
        &arch.fusion_conv,
    ] {
        put_conv(&mut w, s);
    }
    w.u32(arch.encdec.len() as u32);
    for l in &arch.encdec {
        put_conv(&mut w, &l.conv);
        w.u32(l.relu as u32);
    }
    w.u32(arch.skip_pairs.len() as u32);
    for &(k, d) in &arch.skip_pairs {
        w.u32(k as u32);
        w.u32(d as u32);
    }
    w.into_inner()
}

fn bounded(r: &mut ByteReader, field: &str) -> Result<usize> {
    let v = r.u32(field)?;
    if v > SANITY_LIMIT {
        return Err(Error::format(field, format!("implausible value {v}")));
    }
    Ok(v as usize)
}

fn flag(r: &mut ByteReader, field: &str) -> Result<bool> {
    match r.u32(field)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::format(field, format!("flag must be 0 or 1, got {v}"))),
    }
}

fn get_conv(r: &mut ByteReader, field: &str) -> Result<ConvSpec> {
    Ok(ConvSpec {
        kernel_h: bounded(r, field)?,
        kernel_w: bounded(r, field)?,
        in_channels: bounded(r, field)?,
        out_channels: bounded(r, field)?,
        stride: bounded(r, field)?,
        transposed: flag(r, field)?,
    })
}

fn decode_arch_body(r: &mut ByteReader, mode: Mode) -> Result<ArchSpec> {
    let table_mode = r.u32("arch.mode")?;
    if table_mode != mode.code() as u32 {
        return Err(Error::format("arch.mode", "does not match mode byte"));
    }
    let rr = bounded(r, "arch.r")?;
    let replica_conv = get_conv(r, "arch.replica_conv")?;
    let branch_b_conv = get_conv(r, "arch.branch_b_conv")?;
    let head_conv = get_conv(r, "arch.head_conv")?;
    let branch_b_head = get_conv(r, "arch.branch_b_head")?;
    let fusion_conv = get_conv(r, "arch.fusion_conv")?;
    let n = bounded(r, "arch.encdec_len")?;
    let mut encdec = Vec::with_capacity(n);
    for _ in 0..n {
        let conv = get_conv(r, "arch.encdec")?;
        let relu = flag(r, "arch.encdec")?;
        encdec.push(EncDecLayer { conv, relu });
    }
    let k = bounded(r, "arch.skip_len")?;
    let mut skip_pairs = Vec::with_capacity(k);
    for _ in 0..k {
        skip_pairs.push((bounded(r, "arch.skip_pairs")?, bounded(r, "arch.skip_pairs")?));
    }
    let arch = ArchSpec {
        mode,
        r: rr,
        replica_conv,
        branch_b_conv,
        encdec,
        skip_pairs,
        head_conv,
        branch_b_head,
        fusion_conv,
    };
    arch.validate()
        .map_err(|e| Error::format("arch", e.to_string()))?;
    Ok(arch)
}

pub fn encode_model<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u8(params.mode().code());
    w.bytes(&encode_arch(params.arch()));
    for layer in params.layers() {
        w.f32s(layer.weights.data().iter().map(|v| v.as_f64() as f32));
        w.f32s(layer.bias.iter().map(|v| v.as_f64() as f32));
    }
    w.finish_with_crc()
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    r.expect_version(MODEL_VERSION)?;
    let body = binio::verify_crc(bytes)?;
    let mut r = ByteReader::new(body);
    r.take(8, "header")?;
    let code = r.u8("mode")?;
    let mode = Mode::from_code(code)
        .ok_or_else(|| Error::format("mode", format!("unknown mode {code}")))?;
    let arch = decode_arch_body(&mut r, mode)?;
    let mut layers = Vec::new();
    for (id, spec) in arch.layers() {
        let field = format!("payload.{id}");
        let w = r.f32s(spec.weight_count(), &field)?;
        let b = r.f32s(spec.out_channels, &field)?;
        layers.push(Layer {
            id,
            spec,
            weights: Tensor::from_vec(
                spec.weight_shape(),
                w.into_iter().map(|v| T::lit(v as f64)).collect(),
            )?,
            bias: b.into_iter().map(|v| T::lit(v as f64)).collect(),
        });
    }
    r.expect_end()?;
    ModelParams::from_layers(arch, layers)
}

/// Writes the model atomically.
pub fn save_model<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    binio::write_atomic(path, &encode_model(params))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    decode_model(&binio::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn field_of(e: Error) -> String {
        match e {
            Error::Format { field, .. } => field,
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        for mode in [Mode::LpcnSr, Mode::LpcnSrPlus] {
            let p: ModelParams<f32> = build_model(ArchSpec::default_for(mode), 3).unwrap();
            let bytes = encode_model(&p);
            let q: ModelParams<f32> = decode_model(&bytes).unwrap();
            assert_eq!(p, q);
            assert_eq!(encode_model(&q), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let p: ModelParams<f32> = build_model(ArchSpec::reduced(Mode::LpcnSrPlus, 2, 8, &[1, 2]), 3).unwrap();
        let bytes = encode_model(&p);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(field_of(decode_model::<f32>(&bad).unwrap_err()), "magic");

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(field_of(decode_model::<f32>(&bad).unwrap_err()), "version");

        let truncated = &bytes[..bytes.len() - 10];
        assert_eq!(field_of(decode_model::<f32>(truncated).unwrap_err()), "crc");

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 20] ^= 0x40;
        let err = decode_model::<f32>(&bad).unwrap_err();
        assert!(err.to_string().contains("checksum mismatch"));
    }

    #[test]
    fn unknown_mode_named() {
        let p: ModelParams<f32> = build_model(ArchSpec::default_for(Mode::LpcnSr), 3).unwrap();
        let mut bytes = encode_model(&p);
        bytes.truncate(bytes.len() - 4);
        bytes[8] = 2;
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        let err = decode_model::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("unknown mode"), "{err}");
        assert_eq!(field_of(err), "mode");
    }
}
