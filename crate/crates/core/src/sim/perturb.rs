use serde::{Deserialize, Serialize};

use super::pp::{pp_forward_sim, Model};
use super::{AeBank, AeSource, CompressionPlacement, LayerRange, ParallelPlan};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A family of placements differing only in their layer range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "sweep", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    /// Compress the last `n` layers for each listed `n` (0 means none).
    LastLayers { counts: Vec<usize> },
    /// Compress `width` consecutive layers starting at each listed layer.
    Window { width: usize, starts: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationEntry {
    pub sweep: String,
    /// `None` when nothing is compressed.
    pub layers: Option<LayerRange>,
    pub max_abs: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationReport {
    pub codec: String,
    pub entries: Vec<PerturbationEntry>,
}

/// Output deviation of each swept placement from the uncompressed run of
/// the same plan on `x`. AE parameters are rebuilt per placement from
/// `source`, fitted on the `calibration` micro-batches.
pub fn perturbation_report(
    model: &Model,
    plan: &ParallelPlan,
    base: &CompressionPlacement,
    sweeps: &[Sweep],
    source: &AeSource,
    calibration: &[Tensor],
    x: &Tensor,
) -> Result<PerturbationReport> {
    let config = model.config();
    let identity = CompressionPlacement::identity(config);
    let reference = pp_forward_sim(model, plan, &identity, &AeBank::default(), x)?.joined_output()?;
    let mut entries = Vec::new();
    for sweep in sweeps {
        let (name, ranges) = ranges(sweep, config.layers)?;
        for layers in ranges {
            let output = match layers {
                None => reference.clone(),
                Some(range) => {
                    let placement = CompressionPlacement {
                        layers: range,
                        ..base.clone()
                    };
                    let bank = AeBank::build(source, model, plan, &placement, calibration)?;
                    pp_forward_sim(model, plan, &placement, &bank, x)?.joined_output()?
                }
            };
            entries.push(PerturbationEntry {
                sweep: name.into(),
                layers,
                max_abs: output.max_abs_diff(&reference)? as f64,
                relative: output.relative_deviation(&reference)?,
            });
        }
    }
    Ok(PerturbationReport {
        codec: base.compressor.label(),
        entries,
    })
}

fn ranges(sweep: &Sweep, layers: usize) -> Result<(&'static str, Vec<Option<LayerRange>>)> {
    match sweep {
        Sweep::LastLayers { counts } => {
            let mut out = Vec::with_capacity(counts.len());
            for &n in counts {
                if n > layers {
                    return Err(Error::Parameter(format!(
                        "cannot compress the last {n} of {layers} layers"
                    )));
                }
                out.push(LayerRange::last(layers, n));
            }
            Ok(("last_layers", out))
        }
        Sweep::Window { width, starts } => {
            if *width == 0 {
                return Err(Error::Parameter("window width must be positive".into()));
            }
            let mut out = Vec::with_capacity(starts.len());
            for &lo in starts {
                let hi = lo + width - 1;
                if hi >= layers {
                    return Err(Error::Parameter(format!("window [{lo}, {hi}] outside 0..{layers}")));
                }
                out.push(Some(LayerRange { lo, hi }));
            }
            Ok(("window", out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{CompressorKind, CompressorSpec};
    use crate::sim::{model_input, ModelConfig};

    fn setup() -> (Model, Tensor) {
        let cfg = ModelConfig {
            layers: 4,
            hidden: 16,
            heads: 2,
            seq_len: 4,
            batch: 2,
            vocab: 10,
        };
        (Model::seeded(cfg, 9).unwrap(), model_input(&cfg, 10).unwrap())
    }

    #[test]
    fn zero_layers_and_identity_are_exact() {
        let (model, x) = setup();
        let plan = ParallelPlan {
            tp: 2,
            pp: 2,
            micro_batches: 1,
        };
        let sweeps = [
            Sweep::LastLayers { counts: vec![0, 2, 4] },
            Sweep::Window {
                width: 2,
                starts: vec![0, 2],
            },
        ];
        let ident = CompressionPlacement::default_for(model.config(), CompressorSpec::identity());
        let r = perturbation_report(&model, &plan, &ident, &sweeps, &AeSource::default(), &[], &x).unwrap();
        assert_eq!(r.entries.len(), 5);
        assert!(r.entries.iter().all(|e| e.max_abs == 0.0 && e.relative == 0.0));

        let topk =
            CompressionPlacement::default_for(model.config(), CompressorSpec::new(CompressorKind::Topk { k: 4 }));
        let r = perturbation_report(&model, &plan, &topk, &sweeps, &AeSource::default(), &[], &x).unwrap();
        assert_eq!(r.entries[0].max_abs, 0.0);
        assert!(r.entries[1].max_abs > 0.0);
        let again = perturbation_report(&model, &plan, &topk, &sweeps, &AeSource::default(), &[], &x).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn out_of_range_sweeps_rejected() {
        let (model, x) = setup();
        let plan = ParallelPlan::default();
        let p = CompressionPlacement::identity(model.config());
        let bad = [Sweep::Window {
            width: 3,
            starts: vec![2],
        }];
        assert!(perturbation_report(&model, &plan, &p, &bad, &AeSource::default(), &[], &x).is_err());
        let bad = [Sweep::LastLayers { counts: vec![5] }];
        assert!(perturbation_report(&model, &plan, &p, &bad, &AeSource::default(), &[], &x).is_err());
    }
}
