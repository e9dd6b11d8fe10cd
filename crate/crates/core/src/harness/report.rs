use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentSpec;
use crate::cost::{CostCoefficients, FitReport, LayerPrediction, ScalingRow};
use crate::error::{Error, Result};
use crate::sim::{Fidelity, Location, PerturbationReport};
use crate::tensor::SpectrumCurve;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub spec: ExperimentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<FidelityBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<BytesBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Predictions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSummary>,
    /// Wall-clock measurements; the only non-deterministic block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<CodecTiming>>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub(crate) fn new(spec: ExperimentSpec, provenance: Provenance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            spec,
            fidelity: None,
            bytes: None,
            perturbation: None,
            predictions: None,
            fit: None,
            spectrum: None,
            timings: None,
            provenance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("cannot encode report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a report, rejecting unknown fields and other schema versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid report: {e}")))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "report schema {} is not the supported version {SCHEMA_VERSION}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityBlock {
    /// Final output against the uncompressed run of the same plan.
    pub output: Fidelity,
    pub sites: Vec<SiteFidelity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteFidelity {
    pub location: Location,
    pub micro_batch: usize,
    pub codec: String,
    pub fidelity: Fidelity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BytesBlock {
    pub forward: u64,
    pub backward: u64,
    pub baseline_forward: u64,
    pub baseline_backward: u64,
    pub sites: Vec<SiteBytes>,
}

/// Bytes of one communication event, summed over sending ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteBytes {
    pub location: Location,
    pub micro_batch: usize,
    pub codec: String,
    pub ranks: usize,
    pub forward: u64,
    pub backward: u64,
    pub baseline_forward: u64,
    pub baseline_backward: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predictions {
    pub coefficients: CostCoefficients,
    /// The configured model at its micro-batch size.
    pub model: LayerPrediction,
    pub single_node: Vec<LayerPrediction>,
    pub scaling: Vec<ScalingRow>,
    pub pipeline: PipelinePrediction,
}

/// Fill-drain schedule of the configured model and plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelinePrediction {
    pub stages: usize,
    pub micro_batches: usize,
    pub stage_time: f64,
    pub hop_time: f64,
    pub makespan: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSummary {
    pub rows: usize,
    pub cols: usize,
    pub top: Vec<TopMass>,
    pub curve: SpectrumCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopMass {
    pub k: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecTiming {
    pub preset: String,
    pub codec: String,
    pub elements: usize,
    pub forward_bytes: u64,
    pub backward_bytes: u64,
    pub encode_ns: Vec<u64>,
    pub decode_ns: Vec<u64>,
    pub median_encode_ns: u64,
    pub median_decode_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficient_notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ae_fits: Vec<AeFitRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeFitRecord {
    pub location: Location,
    pub final_mse: f64,
}
