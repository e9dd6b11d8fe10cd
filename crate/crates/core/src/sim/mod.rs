//! Desk-scale functional simulation of tensor- and pipeline-parallel
//! transformer execution, with compression applied at the collective and
//! stage-boundary sites.

mod config;
mod layer;
mod perturb;
mod pipeline;
mod pp;
mod tp;

pub use config::{CompressionPlacement, LayerRange, ModelConfig, ParallelPlan, Site};
pub use layer::{sum_partials, transformer_layer_forward, Collective, LayerWeights};
pub use perturb::{perturbation_report, PerturbationEntry, PerturbationReport, Sweep};
pub use pipeline::{pipeline_makespan_sim, trace_json, EventKind, PipelineSchedule, TimelineEvent};
pub use pp::{model_input, pp_forward_sim, split_micro_batches, BoundaryLog, Model, PipelineRun};
pub use tp::{tp_forward_sim, CollectiveKind, CollectiveLog};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compress::{ae_fit, AeHyper, AeParams, CompressorKind, Direction, WireFormat};
use crate::compress::{encode_gradient, encode_message, CompressedMessage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A point in the model where an activation is communicated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "site", rename_all = "snake_case", deny_unknown_fields)]
pub enum Location {
    /// Reduction after the attention-output projection of `layer`.
    TpAttention { layer: usize },
    /// Reduction after the second MLP projection of `layer`.
    TpMlp { layer: usize },
    /// Activation leaving pipeline stage `boundary` for stage `boundary + 1`.
    PpBoundary { boundary: usize },
}

impl Location {
    pub(crate) fn tp(layer: usize, collective: Collective) -> Self {
        match collective {
            Collective::Attention => Location::TpAttention { layer },
            Collective::Mlp => Location::TpMlp { layer },
        }
    }
}

/// Deviation of a reconstructed activation from the exact one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fidelity {
    pub max_abs: f64,
    pub relative: f64,
}

impl Fidelity {
    pub const EXACT: Fidelity = Fidelity {
        max_abs: 0.0,
        relative: 0.0,
    };

    pub fn between(actual: &Tensor, reference: &Tensor) -> Result<Self> {
        Ok(Self {
            max_abs: actual.max_abs_diff(reference)? as f64,
            relative: actual.relative_deviation(reference)?,
        })
    }
}

/// Where autoencoder parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum AeSource {
    /// Trained on activations captured from an uncompressed run.
    Fit {
        #[serde(default = "AeSource::default_lr")]
        lr: f64,
        #[serde(default = "AeSource::default_epochs")]
        epochs: usize,
        #[serde(default)]
        seed: u64,
        /// Calibration batches of the model's batch size drawn for capture.
        #[serde(default = "AeSource::default_calibration_batches")]
        calibration_batches: usize,
    },
    /// Untrained Xavier-uniform parameters.
    Xavier { seed: u64 },
}

impl AeSource {
    fn default_lr() -> f64 {
        AeHyper::default().lr
    }

    fn default_epochs() -> usize {
        AeHyper::default().epochs
    }

    fn default_calibration_batches() -> usize {
        16
    }

    /// Batches of calibration input this source needs; zero when untrained.
    pub fn calibration_batches(&self) -> usize {
        match self {
            AeSource::Fit {
                calibration_batches, ..
            } => *calibration_batches,
            AeSource::Xavier { .. } => 0,
        }
    }
}

impl Default for AeSource {
    fn default() -> Self {
        let hyper = AeHyper::default();
        AeSource::Fit {
            lr: hyper.lr,
            epochs: hyper.epochs,
            seed: hyper.seed,
            calibration_batches: Self::default_calibration_batches(),
        }
    }
}

/// Autoencoder parameters per compressed location.
#[derive(Debug, Clone, Default)]
pub struct AeBank {
    params: BTreeMap<Location, AeParams>,
    /// Final training MSE per fitted location.
    pub fit_mse: BTreeMap<Location, f64>,
}

impl AeBank {
    pub fn get(&self, loc: &Location) -> Option<&AeParams> {
        self.params.get(loc)
    }

    pub fn insert(&mut self, loc: Location, params: AeParams) {
        self.params.insert(loc, params);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// One parameter set per location where `placement` applies an AE.
    ///
    /// Empty when the placement's codec is not an autoencoder.
    pub fn build(
        source: &AeSource,
        model: &Model,
        plan: &ParallelPlan,
        placement: &CompressionPlacement,
        calibration: &[Tensor],
    ) -> Result<Self> {
        let CompressorKind::Ae { code_dim } = placement.compressor.kind else {
            return Ok(Self::default());
        };
        let locations = pp::compressed_locations(model.config(), plan, placement);
        let mut bank = Self::default();
        match source {
            AeSource::Xavier { seed } => {
                for (i, loc) in locations.iter().enumerate() {
                    let params = AeParams::xavier(model.config().hidden, code_dim, seed.wrapping_add(i as u64))?;
                    bank.insert(*loc, params);
                }
            }
            &AeSource::Fit { lr, epochs, seed, .. } => {
                let captured = pp::capture(model, plan, &locations, calibration)?;
                for (i, loc) in locations.iter().enumerate() {
                    let samples = captured
                        .get(loc)
                        .ok_or_else(|| Error::Parameter(format!("no activations captured at {loc:?}")))?;
                    let hyper = AeHyper {
                        lr,
                        epochs,
                        seed: seed.wrapping_add(i as u64),
                    };
                    let fit = ae_fit(samples, code_dim, &hyper)?;
                    bank.fit_mse.insert(*loc, fit.final_mse);
                    bank.insert(*loc, fit.params);
                }
            }
        }
        Ok(bank)
    }
}

/// Payload bytes of `msg`, measured by serializing it in each direction.
pub(crate) fn serialized_bytes(msg: &CompressedMessage, wire: &WireFormat) -> Result<(u64, u64)> {
    use crate::compress::message_bytes;
    let forward = encode_message(msg, wire)?;
    let gradient = vec![0.0f32; msg.gradient_len()];
    let backward = encode_gradient(msg, &gradient, wire)?;
    let header = crate::compress::frame_header_len(msg) as u64;
    let sizes = (forward.len() as u64 - header, backward.len() as u64 - header);
    debug_assert_eq!(sizes.0, message_bytes(msg, Direction::Forward, wire));
    debug_assert_eq!(sizes.1, message_bytes(msg, Direction::Backward, wire));
    Ok(sizes)
}
