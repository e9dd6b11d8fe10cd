use super::message::{CompressedMessage, Payload};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-group min-max uniform quantization.
///
/// Each run of `group_len` consecutive elements (never crossing a row) gets
/// `scale = (max - min) / (2^bits - 1)` and codes
/// `round((x - min) / scale)`, rounding half away from zero. A constant group
/// stores scale 0 and all-zero codes. Scales and zeros are kept as `f32`.
pub fn quant_compress(x: &Tensor, bits: u8, group_len: usize) -> Result<CompressedMessage> {
    super::check_bits(bits)?;
    if group_len == 0 || x.last_dim() % group_len != 0 {
        return Err(Error::Parameter(format!(
            "group length {group_len} must divide the last dimension {}",
            x.last_dim()
        )));
    }
    let levels = ((1u32 << bits) - 1) as f64;
    let groups = x.numel() / group_len;
    let mut codes = Vec::with_capacity(x.numel());
    let mut scales = Vec::with_capacity(groups);
    let mut zeros = Vec::with_capacity(groups);
    for group in x.data().chunks(group_len) {
        let (lo, hi) = group.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let scale = if hi > lo {
            ((hi as f64 - lo as f64) / levels) as f32
        } else {
            0.0
        };
        scales.push(scale);
        zeros.push(lo);
        if scale == 0.0 {
            codes.extend(std::iter::repeat_n(0u8, group.len()));
            continue;
        }
        for &v in group {
            let q = ((v as f64 - lo as f64) / scale as f64).round();
            codes.push(q.clamp(0.0, levels) as u8);
        }
    }
    Ok(CompressedMessage {
        shape: x.shape().to_vec(),
        payload: Payload::Quantized {
            codes,
            scales,
            zeros,
            bits,
            group_len,
        },
    })
}

/// `zero + code * scale` per element, evaluated in `f64` then rounded.
pub fn dequantize(msg: &CompressedMessage) -> Result<Tensor> {
    let Payload::Quantized {
        codes,
        scales,
        zeros,
        group_len,
        ..
    } = &msg.payload
    else {
        return Err(Error::Format("expected a quantized message".into()));
    };
    msg.validate()?;
    let data = codes
        .chunks(*group_len)
        .zip(scales.iter().zip(zeros))
        .flat_map(|(group, (&s, &z))| group.iter().map(move |&c| (z as f64 + f64::from(c) * s as f64) as f32))
        .collect();
    Tensor::new(msg.shape.clone(), data)
}
