use std::fmt;

use crate::error::{Error, Result};
use crate::ops::ConvSpec;

/// Which output the network produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Pooled-replica branch only.
    LpcnSr,
    /// Pooled-replica branch plus the full-resolution branch, fused by a 1×1 convolution.
    LpcnSrPlus,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::LpcnSr => 0,
            Mode::LpcnSrPlus => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Mode::LpcnSr),
            1 => Some(Mode::LpcnSrPlus),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::LpcnSr => "lpcn",
            Mode::LpcnSrPlus => "lpcn-plus",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lpcn" | "lpcn-sr" => Ok(Mode::LpcnSr),
            "lpcn-plus" | "lpcn-sr-plus" => Ok(Mode::LpcnSrPlus),
            other => Err(Error::Argument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncDecLayer {
    pub conv: ConvSpec,
    pub relu: bool,
}

/// Identifies one parameterised layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerId {
    /// Convolution applied to pooled replica `i`.
    Replica(usize),
    /// Layer `i` of the shared encoder-decoder.
    EncDec(usize),
    /// Convolution producing the `r²` sub-pixel channels of branch A.
    Head,
    /// First full-resolution convolution of branch B.
    BranchBConv,
    /// Single-filter convolution producing branch B's image.
    BranchBHead,
    /// 1×1 convolution mixing the two branch images.
    Fusion,
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Replica(i) => write!(f, "replica.{i}"),
            LayerId::EncDec(i) => write!(f, "encdec.{i}"),
            LayerId::Head => f.write_str("head"),
            LayerId::BranchBConv => f.write_str("branch_b.conv"),
            LayerId::BranchBHead => f.write_str("branch_b.head"),
            LayerId::Fusion => f.write_str("fusion"),
        }
    }
}

/// Declarative description of the network graph.
///
/// The encoder-decoder is a list of layers whose first half are ordinary
/// convolutions and second half transposed convolutions. A skip pair
/// `(k, d)` adds the output of encoder layer `k` to the pre-activation output of
/// decoder layer `d`; indices are 0-based positions in `encdec`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub mode: Mode,
    pub r: usize,
    pub replica_conv: ConvSpec,
    pub branch_b_conv: ConvSpec,
    pub encdec: Vec<EncDecLayer>,
    pub skip_pairs: Vec<(usize, usize)>,
    pub head_conv: ConvSpec,
    pub branch_b_head: ConvSpec,
    pub fusion_conv: ConvSpec,
}

/// Builds a symmetric encoder-decoder from the encoder strides.
///
/// Layer `L−1−k` is paired with encoder layer `k`, so each decoder layer undoes
/// the stride of the encoder layer that follows its partner, and the first decoder
/// layer has stride 1. The first encoder stride must be 1 for the outermost pair
/// to line up.
pub fn symmetric_encdec(
    channels: usize,
    kernel: usize,
    encoder_strides: &[usize],
) -> (Vec<EncDecLayer>, Vec<(usize, usize)>) {
    let half = encoder_strides.len();
    let mut layers: Vec<EncDecLayer> = encoder_strides
        .iter()
        .map(|&s| EncDecLayer {
            conv: ConvSpec::conv(kernel, channels, channels, s),
            relu: true,
        })
        .collect();
    for j in 0..half {
        let stride = if j == 0 { 1 } else { encoder_strides[half - j] };
        layers.push(EncDecLayer {
            conv: ConvSpec::transposed(kernel, channels, channels, stride),
            relu: true,
        });
    }
    let skips = (0..half).map(|k| (k, 2 * half - 1 - k)).collect();
    (layers, skips)
}

impl ArchSpec {
    /// The default network: r = 2, sixteen filters per replica, a ten-layer
    /// 64-channel encoder-decoder with encoder strides `[1, 2, 1, 2, 1]`.
    pub fn default_for(mode: Mode) -> Self {
        let (encdec, skip_pairs) = symmetric_encdec(64, 3, &[1, 2, 1, 2, 1]);
        ArchSpec {
            mode,
            r: 2,
            replica_conv: ConvSpec::conv(3, 1, 16, 1),
            branch_b_conv: ConvSpec::conv(3, 1, 64, 1),
            encdec,
            skip_pairs,
            head_conv: ConvSpec::conv(3, 64, 4, 1),
            branch_b_head: ConvSpec::conv(3, 64, 1, 1),
            fusion_conv: ConvSpec::conv(1, 2, 1, 1),
        }
    }

    /// A small variant with the same topology, for gradient checks and quick tests.
    pub fn reduced(mode: Mode, per_replica: usize, channels: usize, encoder_strides: &[usize]) -> Self {
        let r = 2;
        let (encdec, skip_pairs) = symmetric_encdec(channels, 3, encoder_strides);
        ArchSpec {
            mode,
            r,
            replica_conv: ConvSpec::conv(3, 1, per_replica, 1),
            branch_b_conv: ConvSpec::conv(3, 1, per_replica * r * r, 1),
            encdec,
            skip_pairs,
            head_conv: ConvSpec::conv(3, channels, r * r, 1),
            branch_b_head: ConvSpec::conv(3, channels, 1, 1),
            fusion_conv: ConvSpec::conv(1, 2, 1, 1),
        }
    }

    pub fn replicas(&self) -> usize {
        self.r * self.r
    }

    /// Features per replica, `n`.
    pub fn per_replica(&self) -> usize {
        self.replica_conv.out_channels
    }

    /// Product of the encoder strides.
    pub fn encoder_reduction(&self) -> usize {
        self.encdec[..self.encdec.len() / 2]
            .iter()
            .map(|l| l.conv.stride)
            .product()
    }

    /// Input rows and columns must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        self.r * self.encoder_reduction()
    }

    /// Every parameterised layer in storage order.
    pub fn layers(&self) -> Vec<(LayerId, ConvSpec)> {
        let mut out: Vec<_> = (0..self.replicas())
            .map(|i| (LayerId::Replica(i), self.replica_conv))
            .collect();
        out.extend(
            self.encdec
                .iter()
                .enumerate()
                .map(|(i, l)| (LayerId::EncDec(i), l.conv)),
        );
        out.push((LayerId::Head, self.head_conv));
        if self.mode == Mode::LpcnSrPlus {
            out.push((LayerId::BranchBConv, self.branch_b_conv));
            out.push((LayerId::BranchBHead, self.branch_b_head));
            out.push((LayerId::Fusion, self.fusion_conv));
        }
        out
    }

    /// Storage position of `id`, if the layer exists in this mode.
    pub fn layer_index(&self, id: LayerId) -> Option<usize> {
        let rr = self.replicas();
        let l = self.encdec.len();
        let plus = self.mode == Mode::LpcnSrPlus;
        match id {
            LayerId::Replica(i) if i < rr => Some(i),
            LayerId::EncDec(i) if i < l => Some(rr + i),
            LayerId::Head => Some(rr + l),
            LayerId::BranchBConv if plus => Some(rr + l + 1),
            LayerId::BranchBHead if plus => Some(rr + l + 2),
            LayerId::Fusion if plus => Some(rr + l + 3),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, s)| s.param_count()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Spec(msg));
        if self.r == 0 {
            return fail("r must be >= 1".into());
        }
        for (id, spec) in self.layers() {
            spec.validate()
                .map_err(|e| Error::Spec(format!("{id}: {e}")))?;
        }
        // Branch B and fusion are checked even in the basic mode so a spec is valid for both.
        for (name, spec) in [
            ("branch_b.conv", &self.branch_b_conv),
            ("branch_b.head", &self.branch_b_head),
            ("fusion", &self.fusion_conv),
        ] {
            spec.validate()
                .map_err(|e| Error::Spec(format!("{name}: {e}")))?;
        }
        let plain = |name: &str, s: &ConvSpec, cin: usize, cout: Option<usize>| -> Result<()> {
            if s.transposed || s.stride != 1 {
                return Err(Error::Spec(format!("{name} must be a stride-1 ordinary convolution")));
            }
            if s.in_channels != cin {
                return Err(Error::Spec(format!(
                    "{name} expects {} input channels, graph provides {cin}",
                    s.in_channels
                )));
            }
            if let Some(c) = cout {
                if s.out_channels != c {
                    return Err(Error::Spec(format!(
                        "{name} must produce {c} channels, has {}",
                        s.out_channels
                    )));
                }
            }
            Ok(())
        };

        let l = self.encdec.len();
        if l < 2 || l % 2 != 0 {
            return fail(format!("encoder-decoder needs an even number >= 2 of layers, got {l}"));
        }
        let fused = self.per_replica() * self.replicas();
        plain("replica", &self.replica_conv, 1, None)?;
        plain("branch_b.conv", &self.branch_b_conv, 1, Some(fused))?;

        let mut ch = fused;
        for (i, layer) in self.encdec.iter().enumerate() {
            let want_transposed = i >= l / 2;
            if layer.conv.transposed != want_transposed {
                return fail(format!(
                    "encdec.{i} must be a {} convolution",
                    if want_transposed { "transposed" } else { "ordinary" }
                ));
            }
            if layer.conv.in_channels != ch {
                return fail(format!(
                    "encdec.{i} expects {} channels, receives {ch}",
                    layer.conv.in_channels
                ));
            }
            ch = layer.conv.out_channels;
        }
        if ch != fused {
            return fail(format!(
                "encoder-decoder must return {fused} channels, returns {ch}"
            ));
        }
        plain("head", &self.head_conv, ch, Some(self.replicas()))?;
        plain("branch_b.head", &self.branch_b_head, ch, Some(1))?;
        if self.fusion_conv.kernel_h != 1 || self.fusion_conv.kernel_w != 1 {
            return fail("fusion must be a 1x1 convolution".into());
        }
        plain("fusion", &self.fusion_conv, 2, Some(1))?;

        // Trace spatial sizes on the smallest admissible input to check skip pairs.
        let down: usize = self.encoder_reduction();
        let up: usize = self.encdec[l / 2..].iter().map(|x| x.conv.stride).product();
        if down != up {
            return fail(format!(
                "decoder upsamples by {up} but encoder downsamples by {down}"
            ));
        }
        let probe = self.required_multiple() * 3;
        let mut sizes = Vec::with_capacity(l);
        let (mut h, mut w) = (probe / self.r, probe / self.r);
        for layer in &self.encdec {
            (h, w) = layer.conv.output_size(h, w);
            sizes.push((h, w, layer.conv.out_channels));
        }
        for &(k, d) in &self.skip_pairs {
            if k >= l / 2 || d < l / 2 || d >= l {
                return fail(format!("skip ({k}, {d}) must run from an encoder to a decoder layer"));
            }
            if sizes[k] != sizes[d] {
                return fail(format!(
                    "skip ({k}, {d}) joins mismatched outputs {:?} and {:?}",
                    sizes[k], sizes[d]
                ));
            }
        }
        Ok(())
    }

    /// CRC32 of the serialised layer table; identifies compatible parameter sets.
    pub fn fingerprint(&self) -> u32 {
        crc32fast::hash(&super::format::encode_arch(self))
    }
}
