//! Compressed messages, their byte accounting and wire encoding.
//!
//! A frame is a header followed by a payload:
//!
//! ```text
//! tag u8 | direction u8 | value_bytes u8 | rank u8 | extents u64 x rank | params | payload
//! ```
//!
//! `tag` is 0 dense, 1 sparse, 2 quantized, 3 code. `params` are `k: u64`
//! (sparse), `bits: u8, group_len: u64` (quantized), `code_dim: u64` (code)
//! and empty for dense. Values are little-endian IEEE half (`value_bytes = 2`)
//! or single (`value_bytes = 4`) precision; indices are `u32`; quantization
//! codes are packed LSB-first and followed by one `(scale, zero)` pair of
//! `f32` per group.
//!
//! The payload length is exactly [`message_bytes`] for the frame's direction.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Activation sent downstream.
    Forward,
    /// Gradient with respect to that activation, sent back upstream.
    Backward,
}

/// Byte widths used on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFormat {
    pub value_bytes: u8,
    pub index_bytes: u8,
}

impl Default for WireFormat {
    fn default() -> Self {
        Self {
            value_bytes: 2,
            index_bytes: 4,
        }
    }
}

impl WireFormat {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.value_bytes, 2 | 4) {
            return Err(Error::Parameter(format!(
                "value_bytes must be 2 or 4, got {}",
                self.value_bytes
            )));
        }
        if self.index_bytes != 4 {
            return Err(Error::Parameter(format!(
                "index_bytes must be 4, got {}",
                self.index_bytes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense {
        values: Vec<f32>,
    },
    Sparse {
        values: Vec<f32>,
        /// Strictly increasing flat indices into the original tensor.
        indices: Vec<u32>,
    },
    Quantized {
        /// One code per element, each `< 2^bits`.
        codes: Vec<u8>,
        scales: Vec<f32>,
        zeros: Vec<f32>,
        bits: u8,
        group_len: usize,
    },
    Code {
        /// Row-major `[rows, code_dim]`.
        values: Vec<f32>,
        code_dim: usize,
    },
}

/// A compressed activation together with the shape it decodes to.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl CompressedMessage {
    pub fn dense(x: &Tensor) -> Self {
        Self {
            shape: x.shape().to_vec(),
            payload: Payload::Dense {
                values: x.data().to_vec(),
            },
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn tag(&self) -> u8 {
        match self.payload {
            Payload::Dense { .. } => 0,
            Payload::Sparse { .. } => 1,
            Payload::Quantized { .. } => 2,
            Payload::Code { .. } => 3,
        }
    }

    /// Number of real values a gradient for this message carries.
    pub fn gradient_len(&self) -> usize {
        match &self.payload {
            Payload::Dense { values } => values.len(),
            Payload::Sparse { values, .. } => values.len(),
            // Autograd only produces floating-point gradients, so the
            // backward message has the decompressed activation's size.
            Payload::Quantized { .. } => self.numel(),
            Payload::Code { values, .. } => values.len(),
        }
    }

    /// Checks the structural invariants of the payload.
    pub fn validate(&self) -> Result<()> {
        let numel = self.numel();
        match &self.payload {
            Payload::Dense { values } => {
                if values.len() != numel {
                    return Err(Error::Format("dense payload length differs from shape".into()));
                }
            }
            Payload::Sparse { values, indices } => {
                if values.len() != indices.len() || values.is_empty() {
                    return Err(Error::Format("sparse values and indices differ in length".into()));
                }
                if indices.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Format("sparse indices not strictly increasing".into()));
                }
                if *indices.last().unwrap() as usize >= numel {
                    return Err(Error::Format("sparse index out of range".into()));
                }
            }
            Payload::Quantized {
                codes,
                scales,
                zeros,
                bits,
                group_len,
            } => {
                super::check_bits(*bits)?;
                if codes.len() != numel || *group_len == 0 || !numel.is_multiple_of(*group_len) {
                    return Err(Error::Format("quantized payload does not match its grouping".into()));
                }
                let groups = numel / group_len;
                if scales.len() != groups || zeros.len() != groups {
                    return Err(Error::Format("one (scale, zero) pair per group required".into()));
                }
                if codes.iter().any(|&c| u32::from(c) >= 1u32 << bits) {
                    return Err(Error::Format(format!("code exceeds {bits}-bit range")));
                }
            }
            Payload::Code { values, code_dim } => {
                let last = *self.shape.last().unwrap_or(&0);
                if *code_dim == 0 || values.len() != numel / last * code_dim {
                    return Err(Error::Format("code payload does not match its shape".into()));
                }
            }
        }
        Ok(())
    }
}

/// Exact payload bytes for one direction of the exchange.
pub fn message_bytes(msg: &CompressedMessage, direction: Direction, wire: &WireFormat) -> u64 {
    let vb = u64::from(wire.value_bytes);
    let ib = u64::from(wire.index_bytes);
    let numel = msg.numel() as u64;
    match (direction, &msg.payload) {
        (Direction::Forward, Payload::Dense { values }) => values.len() as u64 * vb,
        (Direction::Forward, Payload::Sparse { values, .. }) => values.len() as u64 * (vb + ib),
        (Direction::Forward, Payload::Quantized { bits, scales, .. }) => {
            (numel * u64::from(*bits)).div_ceil(8) + scales.len() as u64 * 2 * 4
        }
        (Direction::Forward, Payload::Code { values, .. }) => values.len() as u64 * vb,
        (Direction::Backward, _) => msg.gradient_len() as u64 * vb,
    }
}

/// Serializes `msg` as a forward frame.
pub fn encode_message(msg: &CompressedMessage, wire: &WireFormat) -> Result<Vec<u8>> {
    wire.validate()?;
    msg.validate()?;
    let mut out = header(msg, Direction::Forward, wire)?;
    match &msg.payload {
        Payload::Dense { values } | Payload::Code { values, .. } => put_values(&mut out, values, wire),
        Payload::Sparse { values, indices } => {
            put_values(&mut out, values, wire);
            for i in indices {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        Payload::Quantized {
            codes,
            scales,
            zeros,
            bits,
            ..
        } => {
            out.extend_from_slice(&pack_codes(codes, *bits));
            for (s, z) in scales.iter().zip(zeros) {
                out.extend_from_slice(&s.to_le_bytes());
                out.extend_from_slice(&z.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Serializes the gradient that flows back for `msg`.
///
/// `gradient` must hold [`CompressedMessage::gradient_len`] values.
pub fn encode_gradient(msg: &CompressedMessage, gradient: &[f32], wire: &WireFormat) -> Result<Vec<u8>> {
    wire.validate()?;
    msg.validate()?;
    if gradient.len() != msg.gradient_len() {
        return Err(Error::Dimension(format!(
            "gradient has {} values, message expects {}",
            gradient.len(),
            msg.gradient_len()
        )));
    }
    let mut out = header(msg, Direction::Backward, wire)?;
    put_values(&mut out, gradient, wire);
    Ok(out)
}

/// Length of the frame header preceding the payload.
pub fn frame_header_len(msg: &CompressedMessage) -> usize {
    let params = match msg.payload {
        Payload::Dense { .. } => 0,
        Payload::Sparse { .. } | Payload::Code { .. } => 8,
        Payload::Quantized { .. } => 9,
    };
    4 + 8 * msg.shape.len() + params
}

/// Parses a forward frame produced by [`encode_message`].
///
/// Half-precision frames decode to the nearest `f32` of each half value.
pub fn decode_message(frame: &[u8]) -> Result<(CompressedMessage, WireFormat)> {
    let mut r = Reader { buf: frame, pos: 0 };
    let tag = r.u8()?;
    if r.u8()? != 0 {
        return Err(Error::Format("not a forward frame".into()));
    }
    let wire = WireFormat {
        value_bytes: r.u8()?,
        index_bytes: 4,
    };
    wire.validate()?;
    let rank = r.u8()? as usize;
    if rank == 0 {
        return Err(Error::Format("zero rank".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.usize()?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let payload = match tag {
        0 => Payload::Dense {
            values: r.values(numel, &wire)?,
        },
        1 => {
            let k = r.usize()?;
            let values = r.values(k, &wire)?;
            let mut indices = Vec::with_capacity(k);
            for _ in 0..k {
                indices.push(u32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            Payload::Sparse { values, indices }
        }
        2 => {
            let bits = r.u8()?;
            super::check_bits(bits)?;
            let group_len = r.usize()?;
            if group_len == 0 || numel % group_len != 0 {
                return Err(Error::Format("bad quantization group length".into()));
            }
            let packed = r.take((numel * bits as usize).div_ceil(8))?;
            let codes = unpack_codes(packed, bits, numel);
            let groups = numel / group_len;
            let (mut scales, mut zeros) = (Vec::with_capacity(groups), Vec::with_capacity(groups));
            for _ in 0..groups {
                scales.push(r.f32()?);
                zeros.push(r.f32()?);
            }
            Payload::Quantized {
                codes,
                scales,
                zeros,
                bits,
                group_len,
            }
        }
        3 => {
            let code_dim = r.usize()?;
            let rows = numel / shape[rank - 1];
            Payload::Code {
                values: r.values(rows * code_dim, &wire)?,
                code_dim,
            }
        }
        t => return Err(Error::Format(format!("unknown message tag {t}"))),
    };
    if r.pos != frame.len() {
        return Err(Error::Format("trailing bytes after message".into()));
    }
    let msg = CompressedMessage { shape, payload };
    msg.validate()?;
    Ok((msg, wire))
}

fn header(msg: &CompressedMessage, direction: Direction, wire: &WireFormat) -> Result<Vec<u8>> {
    let rank = u8::try_from(msg.shape.len()).map_err(|_| Error::Format("rank exceeds 255".into()))?;
    let mut out = Vec::with_capacity(frame_header_len(msg) + message_bytes(msg, direction, wire) as usize);
    out.push(msg.tag());
    out.push(match direction {
        Direction::Forward => 0,
        Direction::Backward => 1,
    });
    out.push(wire.value_bytes);
    out.push(rank);
    for &d in &msg.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &msg.payload {
        Payload::Dense { .. } => {}
        Payload::Sparse { values, .. } => out.extend_from_slice(&(values.len() as u64).to_le_bytes()),
        Payload::Quantized { bits, group_len, .. } => {
            out.push(*bits);
            out.extend_from_slice(&(*group_len as u64).to_le_bytes());
        }
        Payload::Code { code_dim, .. } => out.extend_from_slice(&(*code_dim as u64).to_le_bytes()),
    }
    Ok(out)
}

fn put_values(out: &mut Vec<u8>, values: &[f32], wire: &WireFormat) {
    match wire.value_bytes {
        2 => {
            for v in values {
                out.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
            }
        }
        _ => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

fn pack_codes(codes: &[u8], bits: u8) -> Vec<u8> {
    let bits = bits as usize;
    let mut out = vec![0u8; (codes.len() * bits).div_ceil(8)];
    for (i, &c) in codes.iter().enumerate() {
        let bit = i * bits;
        // bits is 2, 4 or 8, so a code never straddles a byte.
        out[bit / 8] |= c << (bit % 8);
    }
    out
}

fn unpack_codes(packed: &[u8], bits: u8, n: usize) -> Vec<u8> {
    let bits = bits as usize;
    let mask = ((1u16 << bits) - 1) as u8;
    (0..n)
        .map(|i| {
            let bit = i * bits;
            (packed[bit / 8] >> (bit % 8)) & mask
        })
        .collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("message truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format("length overflows".into()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn values(&mut self, n: usize, wire: &WireFormat) -> Result<Vec<f32>> {
        let width = wire.value_bytes as usize;
        let raw = self.take(
            n.checked_mul(width)
                .ok_or_else(|| Error::Format("length overflows".into()))?,
        )?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| match width {
                2 => f16::from_le_bytes([c[0], c[1]]).to_f32(),
                _ => f32::from_le_bytes(c.try_into().unwrap()),
            })
            .collect())
    }
}
