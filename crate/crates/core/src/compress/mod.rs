//! Activation codecs and message accounting.
//!
//! A [`CompressorSpec`] names a codec and its wire widths. [`compress`] turns
//! an activation into a [`CompressedMessage`] and [`decompress`] reverses it;
//! [`message_bytes`] gives the exact number of bytes each direction of the
//! exchange carries.

mod ae;
mod feedback;
mod matching;
mod message;
mod quant;
mod sparse;

pub use ae::{
    ae_compress, ae_decompress, ae_fit, ae_gradient, read_ae_params, read_ae_params_file, write_ae_params,
    write_ae_params_file, AeFit, AeGradient, AeHyper, AeParams,
};
pub use feedback::{error_feedback_step, ErrorFeedbackState};
pub use matching::{matched_k, MatchMode};
pub use message::{
    decode_message, encode_gradient, encode_message, frame_header_len, message_bytes, CompressedMessage, Direction,
    Payload, WireFormat,
};
pub use quant::{dequantize, quant_compress};
pub use sparse::{randk_compress, sparse_decompress, topk_compress};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which codec to apply and with what parameters.
///
/// `k` for the sparsifiers counts kept elements per token (per row of the
/// last dimension); a tensor with `r` rows keeps `k * r` elements overall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressorKind {
    Identity,
    Topk {
        k: usize,
    },
    Randk {
        k: usize,
        seed: u64,
    },
    Quant {
        bits: u8,
        /// Elements per (scale, zero) group; defaults to the row length.
        group_len: Option<usize>,
    },
    Ae {
        code_dim: usize,
    },
}

/// Serialized as a flat table: `kind` plus exactly the fields that kind uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub value_bytes: u8,
    pub index_bytes: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Identity,
    Topk,
    Randk,
    Quant,
    Ae,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bits: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code_dim: Option<usize>,
    #[serde(default = "default_value_bytes")]
    value_bytes: u8,
    #[serde(default = "default_index_bytes")]
    index_bytes: u8,
}

impl TryFrom<RawSpec> for CompressorSpec {
    type Error = String;

    fn try_from(raw: RawSpec) -> Result<Self, String> {
        let present = [
            ("k", raw.k.is_some()),
            ("seed", raw.seed.is_some()),
            ("bits", raw.bits.is_some()),
            ("group_len", raw.group_len.is_some()),
            ("code_dim", raw.code_dim.is_some()),
        ];
        let (allowed, kind): (&[&str], _) = match raw.kind {
            KindTag::Identity => (&[], CompressorKind::Identity),
            KindTag::Topk => (
                &["k"],
                CompressorKind::Topk {
                    k: raw.k.ok_or("topk requires `k`")?,
                },
            ),
            KindTag::Randk => (
                &["k", "seed"],
                CompressorKind::Randk {
                    k: raw.k.ok_or("randk requires `k`")?,
                    seed: raw.seed.ok_or("randk requires `seed`")?,
                },
            ),
            KindTag::Quant => (
                &["bits", "group_len"],
                CompressorKind::Quant {
                    bits: raw.bits.ok_or("quant requires `bits`")?,
                    group_len: raw.group_len,
                },
            ),
            KindTag::Ae => (
                &["code_dim"],
                CompressorKind::Ae {
                    code_dim: raw.code_dim.ok_or("ae requires `code_dim`")?,
                },
            ),
        };
        if let Some((name, _)) = present.iter().find(|(n, p)| *p && !allowed.contains(n)) {
            return Err(format!("field `{name}` does not apply to {:?}", raw.kind).to_lowercase());
        }
        Ok(CompressorSpec {
            kind,
            value_bytes: raw.value_bytes,
            index_bytes: raw.index_bytes,
        })
    }
}

impl From<CompressorSpec> for RawSpec {
    fn from(spec: CompressorSpec) -> Self {
        let mut raw = RawSpec {
            kind: KindTag::Identity,
            k: None,
            seed: None,
            bits: None,
            group_len: None,
            code_dim: None,
            value_bytes: spec.value_bytes,
            index_bytes: spec.index_bytes,
        };
        match spec.kind {
            CompressorKind::Identity => {}
            CompressorKind::Topk { k } => {
                raw.kind = KindTag::Topk;
                raw.k = Some(k);
            }
            CompressorKind::Randk { k, seed } => {
                raw.kind = KindTag::Randk;
                raw.k = Some(k);
                raw.seed = Some(seed);
            }
            CompressorKind::Quant { bits, group_len } => {
                raw.kind = KindTag::Quant;
                raw.bits = Some(bits);
                raw.group_len = group_len;
            }
            CompressorKind::Ae { code_dim } => {
                raw.kind = KindTag::Ae;
                raw.code_dim = Some(code_dim);
            }
        }
        raw
    }
}

fn default_value_bytes() -> u8 {
    2
}

fn default_index_bytes() -> u8 {
    4
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind) -> Self {
        Self {
            kind,
            value_bytes: default_value_bytes(),
            index_bytes: default_index_bytes(),
        }
    }

    pub fn identity() -> Self {
        Self::new(CompressorKind::Identity)
    }

    pub fn wire(&self) -> WireFormat {
        WireFormat {
            value_bytes: self.value_bytes,
            index_bytes: self.index_bytes,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == CompressorKind::Identity
    }

    /// Checks the kind-specific fields against a hidden size `h`.
    pub fn validate(&self, h: usize) -> Result<()> {
        self.wire().validate()?;
        match self.kind {
            CompressorKind::Identity => Ok(()),
            CompressorKind::Topk { k } | CompressorKind::Randk { k, .. } => {
                if k == 0 || k > h {
                    return Err(Error::Parameter(format!("k = {k} per token must lie in 1..={h}")));
                }
                Ok(())
            }
            CompressorKind::Quant { bits, group_len } => {
                check_bits(bits)?;
                let g = group_len.unwrap_or(h);
                if g == 0 || !h.is_multiple_of(g) {
                    return Err(Error::Parameter(format!(
                        "group length {g} must divide the hidden size {h}"
                    )));
                }
                Ok(())
            }
            CompressorKind::Ae { code_dim } => {
                if code_dim == 0 || code_dim > h {
                    return Err(Error::Parameter(format!(
                        "code dimension {code_dim} must lie in 1..={h}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Short label such as `topk(k=16)`.
    pub fn label(&self) -> String {
        match self.kind {
            CompressorKind::Identity => "identity".into(),
            CompressorKind::Topk { k } => format!("topk(k={k})"),
            CompressorKind::Randk { k, .. } => format!("randk(k={k})"),
            CompressorKind::Quant { bits, .. } => format!("quant(bits={bits})"),
            CompressorKind::Ae { code_dim } => format!("ae(c={code_dim})"),
        }
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    match bits {
        2 | 4 | 8 => Ok(()),
        _ => Err(Error::Parameter(format!("bits must be 2, 4 or 8, got {bits}"))),
    }
}

/// Compresses `x` according to `spec`. AE codecs need `ae`.
pub fn compress(spec: &CompressorSpec, x: &Tensor, ae: Option<&AeParams>) -> Result<CompressedMessage> {
    let rows = x.rows();
    match spec.kind {
        CompressorKind::Identity => Ok(CompressedMessage::dense(x)),
        CompressorKind::Topk { k } => topk_compress(x, k * rows),
        CompressorKind::Randk { k, seed } => randk_compress(x, k * rows, seed),
        CompressorKind::Quant { bits, group_len } => quant_compress(x, bits, group_len.unwrap_or(x.last_dim())),
        CompressorKind::Ae { .. } => {
            let params = ae.ok_or_else(|| Error::Parameter("AE codec used without parameters".into()))?;
            ae_compress(x, params)
        }
    }
}

/// Reconstructs the activation carried by `msg`.
pub fn decompress(msg: &CompressedMessage, ae: Option<&AeParams>) -> Result<Tensor> {
    match &msg.payload {
        Payload::Dense { values } => Tensor::new(msg.shape.clone(), values.clone()),
        Payload::Sparse { .. } => sparse_decompress(msg),
        Payload::Quantized { .. } => dequantize(msg),
        Payload::Code { .. } => {
            let params = ae.ok_or_else(|| Error::Parameter("code message decoded without AE parameters".into()))?;
            ae_decompress(msg, params)
        }
    }
}
