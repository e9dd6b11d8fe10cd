use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::compress::CompressorSpec;
use crate::error::{Error, Result};

/// Transformer geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub batch: usize,
    /// Carried for completeness; no simulated layer uses it.
    #[serde(default = "ModelConfig::default_vocab")]
    pub vocab: usize,
}

impl ModelConfig {
    fn default_vocab() -> usize {
        30522
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("seq_len", self.seq_len),
            ("batch", self.batch),
            ("vocab", self.vocab),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("model.{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "{} heads do not divide hidden size {}",
                self.heads, self.hidden
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Tensor- and pipeline-parallel degrees plus micro-batching. Each defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelPlan {
    pub tp: usize,
    pub pp: usize,
    pub micro_batches: usize,
}

impl Default for ParallelPlan {
    fn default() -> Self {
        Self {
            tp: 1,
            pp: 1,
            micro_batches: 1,
        }
    }
}

impl ParallelPlan {
    /// Checks the plan against a model: `pp | layers`, `m | batch`, and `tp`
    /// dividing the head count (hence `h`, `3h` and `4h`).
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.tp == 0 || self.pp == 0 || self.micro_batches == 0 {
            return Err(Error::Plan("tp, pp and micro_batches must be positive".into()));
        }
        if !model.layers.is_multiple_of(self.pp) {
            return Err(Error::Plan(format!(
                "{} pipeline stages do not divide {} layers",
                self.pp, model.layers
            )));
        }
        if !model.heads.is_multiple_of(self.tp) || !model.hidden.is_multiple_of(self.tp) {
            return Err(Error::Plan(format!(
                "tensor-parallel degree {} must divide heads ({}) and hidden size ({})",
                self.tp, model.heads, model.hidden
            )));
        }
        if !model.batch.is_multiple_of(self.micro_batches) {
            return Err(Error::Plan(format!(
                "{} micro-batches do not divide batch {}",
                self.micro_batches, model.batch
            )));
        }
        Ok(())
    }

    pub fn layers_per_stage(&self, model: &ModelConfig) -> usize {
        model.layers / self.pp
    }
}

/// Where compression may be applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// The two tensor-parallel collectives of each layer.
    TpCollective,
    /// Activations crossing a pipeline stage boundary.
    PpBoundary,
}

/// Inclusive layer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct LayerRange {
    pub lo: usize,
    pub hi: usize,
}

impl TryFrom<[usize; 2]> for LayerRange {
    type Error = String;

    fn try_from([lo, hi]: [usize; 2]) -> Result<Self, String> {
        if lo > hi {
            return Err(format!("layer range [{lo}, {hi}] is empty"));
        }
        Ok(Self { lo, hi })
    }
}

impl From<LayerRange> for [usize; 2] {
    fn from(r: LayerRange) -> Self {
        [r.lo, r.hi]
    }
}

impl LayerRange {
    pub fn contains(&self, layer: usize) -> bool {
        (self.lo..=self.hi).contains(&layer)
    }

    /// The last `count` of `layers` layers.
    pub fn last(layers: usize, count: usize) -> Option<Self> {
        (count > 0 && count <= layers).then(|| Self {
            lo: layers - count,
            hi: layers - 1,
        })
    }
}

/// Which layers and sites compress, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionPlacement {
    pub layers: LayerRange,
    pub sites: BTreeSet<Site>,
    pub compressor: CompressorSpec,
    #[serde(default)]
    pub error_feedback: bool,
}

impl CompressionPlacement {
    /// No compression anywhere.
    pub fn identity(model: &ModelConfig) -> Self {
        Self {
            layers: LayerRange {
                lo: 0,
                hi: model.layers - 1,
            },
            sites: BTreeSet::new(),
            compressor: CompressorSpec::identity(),
            error_feedback: false,
        }
    }

    /// `compressor` on the last half of the layers at both sites.
    pub fn default_for(model: &ModelConfig, compressor: CompressorSpec) -> Self {
        let count = (model.layers / 2).max(1);
        Self {
            layers: LayerRange::last(model.layers, count).expect("model has layers"),
            sites: [Site::TpCollective, Site::PpBoundary].into(),
            compressor,
            error_feedback: false,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.layers.lo > self.layers.hi || self.layers.hi >= model.layers {
            return Err(Error::Parameter(format!(
                "layer range [{}, {}] outside 0..{}",
                self.layers.lo, self.layers.hi, model.layers
            )));
        }
        self.compressor.validate(model.hidden)
    }

    /// Whether `site` compresses for `layer`.
    pub fn applies(&self, layer: usize, site: Site) -> bool {
        !self.compressor.is_identity() && self.sites.contains(&site) && self.layers.contains(layer)
    }
}
