use serde::{Deserialize, Serialize};

use super::layer::{layer_forward, sum_partials, LayerWeights};
use super::{serialized_bytes, AeBank, CompressionPlacement, Fidelity, Location, Site};
use crate::compress::{ae_compress, ae_decompress, compress, decompress, CompressedMessage, CompressorKind, Payload};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    /// Partials (or AE codes) summed in flight.
    AllReduce,
    /// Sparse or quantized partials gathered and summed by each receiver.
    AllGather,
}

/// One simulated tensor-parallel collective.
///
/// Byte counts are per rank and come from serializing each rank's message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectiveLog {
    pub location: Location,
    pub micro_batch: usize,
    pub collective: CollectiveKind,
    pub codec: String,
    pub forward_bytes: Vec<u64>,
    pub backward_bytes: Vec<u64>,
    /// Dense per-rank bytes of the same partial.
    pub baseline_forward_bytes: u64,
    pub baseline_backward_bytes: u64,
    /// Reduced output against the exact sum of partials.
    pub fidelity: Fidelity,
}

impl CollectiveLog {
    pub fn total_forward_bytes(&self) -> u64 {
        self.forward_bytes.iter().sum()
    }
}

/// Forward of layer `layer` split over `tp` simulated workers.
///
/// Without compression the partial outputs are summed (all-reduce). With an
/// AE placement each worker encodes its partial, the codes are summed, and
/// the sum is decoded once. Other codecs compress each partial, gather all
/// messages and sum the decompressed partials. Two collectives are logged.
pub fn tp_forward_sim(
    x: &Tensor,
    weights: &LayerWeights,
    heads: usize,
    layer: usize,
    tp: usize,
    placement: &CompressionPlacement,
    bank: &AeBank,
) -> Result<(Tensor, Vec<CollectiveLog>)> {
    let h = x.last_dim();
    if tp == 0 || h % tp != 0 || (3 * h) % tp != 0 || (4 * h) % tp != 0 || !heads.is_multiple_of(tp) {
        return Err(Error::Plan(format!(
            "tp = {tp} must divide h = {h}, 3h, 4h and {heads} heads"
        )));
    }
    let mut logs = Vec::with_capacity(2);
    let compressing = placement.applies(layer, Site::TpCollective);
    let out = layer_forward(x, weights, heads, tp, &mut |collective, partials| {
        let location = Location::tp(layer, collective);
        let (reduced, log) = if compressing {
            compressed_reduce(location, partials, placement, bank)?
        } else {
            dense_reduce(location, partials, placement)?
        };
        logs.push(log);
        Ok(reduced)
    })?;
    Ok((out, logs))
}

fn baseline_bytes(partial: &Tensor, placement: &CompressionPlacement) -> Result<(u64, u64)> {
    serialized_bytes(&CompressedMessage::dense(partial), &placement.compressor.wire())
}

fn dense_reduce(
    location: Location,
    partials: Vec<Tensor>,
    placement: &CompressionPlacement,
) -> Result<(Tensor, CollectiveLog)> {
    let (fwd, bwd) = baseline_bytes(&partials[0], placement)?;
    let ranks = partials.len();
    let reduced = sum_partials(partials)?;
    Ok((
        reduced,
        CollectiveLog {
            location,
            micro_batch: 0,
            collective: CollectiveKind::AllReduce,
            codec: "identity".into(),
            forward_bytes: vec![fwd; ranks],
            backward_bytes: vec![bwd; ranks],
            baseline_forward_bytes: fwd,
            baseline_backward_bytes: bwd,
            fidelity: Fidelity::EXACT,
        },
    ))
}

fn compressed_reduce(
    location: Location,
    partials: Vec<Tensor>,
    placement: &CompressionPlacement,
    bank: &AeBank,
) -> Result<(Tensor, CollectiveLog)> {
    let wire = placement.compressor.wire();
    let (base_fwd, base_bwd) = baseline_bytes(&partials[0], placement)?;
    let exact = sum_partials(partials.clone())?;
    let mut forward_bytes = Vec::with_capacity(partials.len());
    let mut backward_bytes = Vec::with_capacity(partials.len());

    let (reduced, collective) = if let CompressorKind::Ae { .. } = placement.compressor.kind {
        let params = bank
            .get(&location)
            .ok_or_else(|| Error::Parameter(format!("no AE parameters for {location:?}")))?;
        let mut code_sum: Option<Vec<f32>> = None;
        let mut shape = Vec::new();
        for p in &partials {
            let msg = ae_compress(p, params)?;
            let (f, b) = serialized_bytes(&msg, &wire)?;
            forward_bytes.push(f);
            backward_bytes.push(b);
            let Payload::Code { values, .. } = msg.payload else {
                unreachable!("AE encoder yields code payloads")
            };
            shape = msg.shape;
            code_sum = Some(match code_sum {
                None => values,
                Some(acc) => acc.iter().zip(&values).map(|(a, b)| a + b).collect(),
            });
        }
        let summed = CompressedMessage {
            shape,
            payload: Payload::Code {
                values: code_sum.expect("at least one worker"),
                code_dim: params.code_dim(),
            },
        };
        (ae_decompress(&summed, params)?, CollectiveKind::AllReduce)
    } else {
        let mut decoded = Vec::with_capacity(partials.len());
        for p in &partials {
            let msg = compress(&placement.compressor, p, None)?;
            let (f, b) = serialized_bytes(&msg, &wire)?;
            forward_bytes.push(f);
            backward_bytes.push(b);
            decoded.push(decompress(&msg, None)?);
        }
        (sum_partials(decoded)?, CollectiveKind::AllGather)
    };

    let fidelity = Fidelity::between(&reduced, &exact)?;
    Ok((
        reduced,
        CollectiveLog {
            location,
            micro_batch: 0,
            collective,
            codec: placement.compressor.label(),
            forward_bytes,
            backward_bytes,
            baseline_forward_bytes: base_fwd,
            baseline_backward_bytes: base_bwd,
            fidelity,
        },
    ))
}
