use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::layer::{layer_forward, sum_partials, transformer_layer_forward, LayerWeights};
use super::tp::{tp_forward_sim, CollectiveLog};
use super::{serialized_bytes, AeBank, CompressionPlacement, Fidelity, Location, ModelConfig, ParallelPlan, Site};
use crate::compress::{compress, decompress, CompressedMessage, CompressorKind, ErrorFeedbackState};
use crate::error::{Error, Result};
use crate::tensor::{random_tensor, Distribution, SplitMix64, Tensor};

#[derive(Debug, Clone)]
enum Weights {
    Seeded(u64),
    Explicit(Vec<LayerWeights>),
}

/// A stack of encoder layers.
///
/// Seeded models generate each layer's weights on demand, so a large model
/// never holds more than one layer in memory.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: Weights,
}

impl Model {
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            weights: Weights::Seeded(seed),
        })
    }

    pub fn explicit(config: ModelConfig, layers: Vec<LayerWeights>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layers {
            return Err(Error::Parameter(format!(
                "{} layer weight sets for a {}-layer model",
                layers.len(),
                config.layers
            )));
        }
        if let Some(bad) = layers.iter().position(|w| w.hidden() != config.hidden) {
            return Err(Error::Dimension(format!(
                "layer {bad} weights are not sized for h = {}",
                config.hidden
            )));
        }
        Ok(Self {
            config,
            weights: Weights::Explicit(layers),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layer(&self, i: usize) -> Result<Cow<'_, LayerWeights>> {
        if i >= self.config.layers {
            return Err(Error::Parameter(format!("layer {i} outside 0..{}", self.config.layers)));
        }
        match &self.weights {
            Weights::Seeded(seed) => {
                let layer_seed = SplitMix64::new(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64();
                Ok(Cow::Owned(LayerWeights::seeded(self.config.hidden, layer_seed)?))
            }
            Weights::Explicit(layers) => Ok(Cow::Borrowed(&layers[i])),
        }
    }

    /// Single-worker forward through every layer.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for i in 0..self.config.layers {
            let w = self.layer(i)?;
            y = transformer_layer_forward(&y, &w, self.config.heads)?;
        }
        Ok(y)
    }
}

/// Seeded standard-normal input of shape `[B, s, h]`.
pub fn model_input(config: &ModelConfig, seed: u64) -> Result<Tensor> {
    random_tensor(
        &[config.batch, config.seq_len, config.hidden],
        seed,
        Distribution::Gaussian,
    )
}

/// Splits `[B, s, h]` along the batch into `m` equal micro-batches.
pub fn split_micro_batches(x: &Tensor, m: usize) -> Result<Vec<Tensor>> {
    if x.rank() != 3 {
        return Err(Error::Dimension(format!("expected [B, s, h], got {:?}", x.shape())));
    }
    let batch = x.shape()[0];
    if m == 0 || batch % m != 0 {
        return Err(Error::Plan(format!("{m} micro-batches do not divide batch {batch}")));
    }
    let per = batch / m;
    let chunk = per * x.shape()[1] * x.shape()[2];
    (0..m)
        .map(|i| {
            Tensor::new(
                vec![per, x.shape()[1], x.shape()[2]],
                x.data()[i * chunk..(i + 1) * chunk].to_vec(),
            )
        })
        .collect()
}

/// One activation crossing a stage boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryLog {
    /// Boundary `b` joins stage `b` to stage `b + 1`.
    pub boundary: usize,
    pub micro_batch: usize,
    pub producer_layer: usize,
    pub consumer_layer: usize,
    pub codec: String,
    pub forward_bytes: u64,
    pub backward_bytes: u64,
    pub baseline_forward_bytes: u64,
    pub baseline_backward_bytes: u64,
    pub fidelity: Fidelity,
}

/// Result of [`pp_forward_sim`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    /// Final activation per micro-batch.
    pub outputs: Vec<Tensor>,
    pub boundaries: Vec<BoundaryLog>,
    pub collectives: Vec<CollectiveLog>,
}

impl PipelineRun {
    /// Micro-batch outputs joined back into one `[B, s, h]` tensor.
    pub fn joined_output(&self) -> Result<Tensor> {
        let first = self
            .outputs
            .first()
            .ok_or_else(|| Error::Dimension("run has no outputs".into()))?;
        let mut shape = first.shape().to_vec();
        shape[0] *= self.outputs.len();
        let data = self.outputs.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::new(shape, data)
    }

    /// Forward bytes summed over micro-batches, per boundary.
    pub fn boundary_forward_bytes(&self) -> BTreeMap<usize, u64> {
        let mut out = BTreeMap::new();
        for b in &self.boundaries {
            *out.entry(b.boundary).or_insert(0) += b.forward_bytes;
        }
        out
    }
}

/// Layer index whose output crosses boundary `b`.
fn producer(config: &ModelConfig, plan: &ParallelPlan, b: usize) -> usize {
    (b + 1) * plan.layers_per_stage(config) - 1
}

/// A boundary compresses when its consumer layer lies in the placement range.
fn boundary_compressed(config: &ModelConfig, plan: &ParallelPlan, placement: &CompressionPlacement, b: usize) -> bool {
    placement.applies(producer(config, plan, b) + 1, Site::PpBoundary)
}

/// Every location where `placement` compresses under `plan`.
pub(crate) fn compressed_locations(
    config: &ModelConfig,
    plan: &ParallelPlan,
    placement: &CompressionPlacement,
) -> Vec<Location> {
    let mut out = BTreeSet::new();
    for layer in 0..config.layers {
        if placement.applies(layer, Site::TpCollective) {
            out.insert(Location::TpAttention { layer });
            out.insert(Location::TpMlp { layer });
        }
    }
    for b in 0..plan.pp.saturating_sub(1) {
        if boundary_compressed(config, plan, placement, b) {
            out.insert(Location::PpBoundary { boundary: b });
        }
    }
    out.into_iter().collect()
}

/// Uncompressed forward over `inputs`, recording the activations seen at
/// `locations`: every worker's partial for TP sites, the crossing tensor for
/// stage boundaries.
pub(crate) fn capture(
    model: &Model,
    plan: &ParallelPlan,
    locations: &[Location],
    inputs: &[Tensor],
) -> Result<BTreeMap<Location, Vec<Tensor>>> {
    let config = model.config();
    plan.validate(config)?;
    let wanted: BTreeSet<Location> = locations.iter().copied().collect();
    let mut captured: BTreeMap<Location, Vec<Tensor>> = BTreeMap::new();
    let mut acts: Vec<Tensor> = inputs.to_vec();
    let lps = plan.layers_per_stage(config);
    for layer in 0..config.layers {
        let w = model.layer(layer)?;
        for act in acts.iter_mut() {
            *act = layer_forward(act, &w, config.heads, plan.tp, &mut |collective, partials| {
                let loc = Location::tp(layer, collective);
                if wanted.contains(&loc) {
                    captured.entry(loc).or_default().extend(partials.iter().cloned());
                }
                sum_partials(partials)
            })?;
        }
        if (layer + 1) % lps == 0 && layer + 1 < config.layers {
            let loc = Location::PpBoundary {
                boundary: (layer + 1) / lps - 1,
            };
            if wanted.contains(&loc) {
                captured.entry(loc).or_default().extend(acts.iter().cloned());
            }
        }
    }
    Ok(captured)
}

/// Pipeline-parallel forward of `x` split into `plan.micro_batches`.
///
/// Each layer runs through [`tp_forward_sim`] with `plan.tp` workers. At each
/// of the `pp - 1` stage boundaries the activation is compressed and
/// reconstructed when the consumer layer is in the placement range and
/// `pp_boundary` is among its sites; with error feedback enabled, each
/// boundary carries its own residual across micro-batches.
pub fn pp_forward_sim(
    model: &Model,
    plan: &ParallelPlan,
    placement: &CompressionPlacement,
    bank: &AeBank,
    x: &Tensor,
) -> Result<PipelineRun> {
    let config = model.config();
    plan.validate(config)?;
    placement.validate(config)?;
    if x.shape() != [config.batch, config.seq_len, config.hidden] {
        return Err(Error::Dimension(format!(
            "input {:?} does not match model [{}, {}, {}]",
            x.shape(),
            config.batch,
            config.seq_len,
            config.hidden
        )));
    }
    let mut acts = split_micro_batches(x, plan.micro_batches)?;
    let lps = plan.layers_per_stage(config);
    let wire = placement.compressor.wire();
    let is_ae = matches!(placement.compressor.kind, CompressorKind::Ae { .. });
    let mut boundaries = Vec::new();
    let mut collectives = Vec::new();
    let mut feedback: BTreeMap<usize, ErrorFeedbackState> = BTreeMap::new();

    for layer in 0..config.layers {
        let w = model.layer(layer)?;
        for (mb, act) in acts.iter_mut().enumerate() {
            let (y, logs) = tp_forward_sim(act, &w, config.heads, layer, plan.tp, placement, bank)?;
            *act = y;
            collectives.extend(logs.into_iter().map(|l| CollectiveLog { micro_batch: mb, ..l }));
        }
        if (layer + 1) % lps != 0 || layer + 1 == config.layers {
            continue;
        }
        let b = (layer + 1) / lps - 1;
        let compressed = boundary_compressed(config, plan, placement, b);
        let loc = Location::PpBoundary { boundary: b };
        for (mb, act) in acts.iter_mut().enumerate() {
            let (base_fwd, base_bwd) = serialized_bytes(&CompressedMessage::dense(act), &wire)?;
            let mut log = BoundaryLog {
                boundary: b,
                micro_batch: mb,
                producer_layer: layer,
                consumer_layer: layer + 1,
                codec: "identity".into(),
                forward_bytes: base_fwd,
                backward_bytes: base_bwd,
                baseline_forward_bytes: base_fwd,
                baseline_backward_bytes: base_bwd,
                fidelity: Fidelity::EXACT,
            };
            if compressed {
                let ae = if is_ae {
                    Some(
                        bank.get(&loc)
                            .ok_or_else(|| Error::Parameter(format!("no AE parameters for {loc:?}")))?,
                    )
                } else {
                    None
                };
                let msg = if placement.error_feedback {
                    let state = match feedback.entry(b) {
                        std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(ErrorFeedbackState::new(act.shape())?)
                        }
                    };
                    state.step(act, &placement.compressor, ae)?
                } else {
                    compress(&placement.compressor, act, ae)?
                };
                let (fwd, bwd) = serialized_bytes(&msg, &wire)?;
                let received = decompress(&msg, ae)?;
                log.codec = placement.compressor.label();
                log.forward_bytes = fwd;
                log.backward_bytes = bwd;
                log.fidelity = Fidelity::between(&received, act)?;
                *act = received;
            }
            boundaries.push(log);
        }
    }
    Ok(PipelineRun {
        outputs: acts,
        boundaries,
        collectives,
    })
}
