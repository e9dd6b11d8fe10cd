//! Experiment configuration, dispatch and reporting.

mod bench;
mod config;
mod report;

pub use bench::bench_compressors;
pub use config::{
    emit_config, parse_config, parse_config_for_mode, BenchConfig, CoeffSource, ExperimentSpec, FitConfig, Mode,
    Overrides, PredictConfig, Preset, SimulateConfig, SpectrumConfig, SpectrumSource,
};
pub use report::{
    AeFitRecord, BytesBlock, CodecTiming, ExperimentReport, FidelityBlock, PipelinePrediction, Predictions, Provenance,
    SiteBytes, SiteFidelity, SpectrumSummary, TopMass, SCHEMA_VERSION,
};

use serde_json::Value;

use crate::cost::{
    fit_coefficients, layer_time, read_measurements, weak_scaling_table, CostCoefficients, LayerPrediction,
};
use crate::error::{Error, Result};
use crate::sim::{
    model_input, perturbation_report, pipeline_makespan_sim, pp_forward_sim, split_micro_batches, trace_json, AeBank,
    CompressionPlacement, Fidelity, Model, ModelConfig, PipelineRun,
};
use crate::tensor::{random_tensor, read_tensor_file, singular_spectrum, Tensor};

/// Report plus the optional schedule trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub trace: Option<Value>,
}

impl RunOutput {
    /// Writes the report and trace to the paths named in the spec.
    pub fn write_files(&self) -> Result<()> {
        if let Some(path) = &self.report.spec.out {
            self.report.write(path)?;
        }
        if let (Some(path), Some(trace)) = (&self.report.spec.trace, &self.trace) {
            let text = serde_json::to_string_pretty(trace).map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Seed offsets keep the weights, evaluation input and calibration input
/// independent.
const INPUT_STREAM: u64 = 0x5EED_0001;
const CALIBRATION_STREAM: u64 = 0x5EED_0002;

/// Runs `spec` in its mode. Errors carry the mode name.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutput> {
    let mode = spec.mode;
    let result = match mode {
        Mode::Simulate => simulate(spec),
        Mode::Predict => predict(spec),
        Mode::Fit => fit(spec),
        Mode::Bench => bench(spec),
        Mode::Spectrum => spectrum(spec),
    };
    result.map_err(|e| Error::Mode {
        mode: mode.name(),
        source: Box::new(e),
    })
}

fn provenance(spec: &ExperimentSpec) -> Provenance {
    Provenance {
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        coefficients: None,
        coefficient_notes: Vec::new(),
        ae_fits: Vec::new(),
    }
}

fn load_coeffs(spec: &ExperimentSpec, prov: &mut Provenance) -> Result<CostCoefficients> {
    let (k, notes, source) = spec.coeffs.load()?;
    prov.coefficients = Some(source);
    prov.coefficient_notes = notes;
    Ok(k)
}

/// Fill-drain schedule of the configured model under the cost model.
fn pipeline(spec: &ExperimentSpec, k: &CostCoefficients) -> Result<(PipelinePrediction, Value)> {
    let (m, plan) = (&spec.model, &spec.plan);
    let mb = (m.batch / plan.micro_batches) as u64;
    let stage_time = plan.layers_per_stage(m) as f64 * layer_time(mb, m.seq_len as u64, m.hidden as u64, k);
    let hop_time = (mb * m.seq_len as u64 * m.hidden as u64) as f64 / k.w;
    let schedule = pipeline_makespan_sim(plan.pp, plan.micro_batches, stage_time, hop_time)?;
    Ok((
        PipelinePrediction {
            stages: plan.pp,
            micro_batches: plan.micro_batches,
            stage_time,
            hop_time,
            makespan: schedule.makespan,
        },
        trace_json(&schedule),
    ))
}

/// Seeded calibration micro-batches for AE fitting, `calibration_batches`
/// times the model batch, split at the plan's micro-batch size.
fn calibration_set(spec: &ExperimentSpec) -> Result<Vec<Tensor>> {
    let batches = spec.ae.calibration_batches();
    if batches == 0 {
        return Ok(Vec::new());
    }
    let config = ModelConfig {
        batch: spec.model.batch * batches,
        ..spec.model
    };
    split_micro_batches(
        &model_input(&config, spec.seed ^ CALIBRATION_STREAM)?,
        spec.plan.micro_batches * batches,
    )
}

fn simulate(spec: &ExperimentSpec) -> Result<RunOutput> {
    let mut prov = provenance(spec);
    let model = Model::seeded(spec.model, spec.seed)?;
    let x = model_input(&spec.model, spec.seed ^ INPUT_STREAM)?;
    let calibration = calibration_set(spec)?;
    let bank = AeBank::build(&spec.ae, &model, &spec.plan, &spec.placement, &calibration)?;
    prov.ae_fits = bank
        .fit_mse
        .iter()
        .map(|(location, mse)| AeFitRecord {
            location: *location,
            final_mse: *mse,
        })
        .collect();

    let run = pp_forward_sim(&model, &spec.plan, &spec.placement, &bank, &x)?;
    let identity = CompressionPlacement::identity(&spec.model);
    let output =
        if spec.placement == identity || spec.placement.sites.is_empty() || spec.placement.compressor.is_identity() {
            Fidelity::EXACT
        } else {
            let reference = pp_forward_sim(&model, &spec.plan, &identity, &AeBank::default(), &x)?;
            Fidelity::between(&run.joined_output()?, &reference.joined_output()?)?
        };

    let trace = match &spec.trace {
        Some(_) => {
            let k = load_coeffs(spec, &mut prov)?;
            Some(pipeline(spec, &k)?.1)
        }
        None => None,
    };
    let perturbation = if spec.simulate.sweeps.is_empty() {
        None
    } else {
        Some(perturbation_report(
            &model,
            &spec.plan,
            &spec.placement,
            &spec.simulate.sweeps,
            &spec.ae,
            &calibration,
            &x,
        )?)
    };

    let mut report = ExperimentReport::new(spec.clone(), prov);
    let (fidelity, bytes) = site_blocks(&run, output);
    report.fidelity = Some(fidelity);
    report.bytes = Some(bytes);
    report.perturbation = perturbation;
    Ok(RunOutput { report, trace })
}

fn site_blocks(run: &PipelineRun, output: Fidelity) -> (FidelityBlock, BytesBlock) {
    let mut sites = Vec::new();
    let mut bytes = Vec::new();
    for c in &run.collectives {
        sites.push(SiteFidelity {
            location: c.location,
            micro_batch: c.micro_batch,
            codec: c.codec.clone(),
            fidelity: c.fidelity,
        });
        let ranks = c.forward_bytes.len();
        bytes.push(SiteBytes {
            location: c.location,
            micro_batch: c.micro_batch,
            codec: c.codec.clone(),
            ranks,
            forward: c.forward_bytes.iter().sum(),
            backward: c.backward_bytes.iter().sum(),
            baseline_forward: c.baseline_forward_bytes * ranks as u64,
            baseline_backward: c.baseline_backward_bytes * ranks as u64,
        });
    }
    for b in &run.boundaries {
        let location = crate::sim::Location::PpBoundary { boundary: b.boundary };
        sites.push(SiteFidelity {
            location,
            micro_batch: b.micro_batch,
            codec: b.codec.clone(),
            fidelity: b.fidelity,
        });
        bytes.push(SiteBytes {
            location,
            micro_batch: b.micro_batch,
            codec: b.codec.clone(),
            ranks: 1,
            forward: b.forward_bytes,
            backward: b.backward_bytes,
            baseline_forward: b.baseline_forward_bytes,
            baseline_backward: b.baseline_backward_bytes,
        });
    }
    let total = |f: fn(&SiteBytes) -> u64| bytes.iter().map(f).sum();
    let block = BytesBlock {
        forward: total(|s| s.forward),
        backward: total(|s| s.backward),
        baseline_forward: total(|s| s.baseline_forward),
        baseline_backward: total(|s| s.baseline_backward),
        sites: bytes,
    };
    (FidelityBlock { output, sites }, block)
}

fn predict(spec: &ExperimentSpec) -> Result<RunOutput> {
    let mut prov = provenance(spec);
    let k = load_coeffs(spec, &mut prov)?;
    let p = &spec.predict;
    let single_node = p
        .hidden
        .iter()
        .map(|&h| LayerPrediction::at(p.micro_batch_size, p.seq_len, h, &k))
        .collect();
    let scaling = weak_scaling_table(&p.rows, &k, p.micro_batch_size, p.seq_len)?;
    let m = &spec.model;
    let model = LayerPrediction::at(
        (m.batch / spec.plan.micro_batches) as u64,
        m.seq_len as u64,
        m.hidden as u64,
        &k,
    );
    let (pipeline, trace) = pipeline(spec, &k)?;
    let mut report = ExperimentReport::new(spec.clone(), prov);
    report.predictions = Some(Predictions {
        coefficients: k,
        model,
        single_node,
        scaling,
        pipeline,
    });
    Ok(RunOutput {
        report,
        trace: spec.trace.as_ref().map(|_| trace),
    })
}

fn fit(spec: &ExperimentSpec) -> Result<RunOutput> {
    let cfg = spec
        .fit
        .as_ref()
        .ok_or_else(|| Error::Parameter("no [fit] section".into()))?;
    let mut prov = provenance(spec);
    let base = load_coeffs(spec, &mut prov)?;
    let measurements = read_measurements(&cfg.measurements)?;
    let fitted = fit_coefficients(&measurements, &base)?;
    if let Some(path) = &cfg.write {
        let mut notes = vec![
            format!(
                "Fitted from {} ({} measurements).",
                cfg.measurements.display(),
                measurements.len()
            ),
            format!(
                "Carried over from {}: {}.",
                prov.coefficients.as_deref().unwrap_or("base"),
                fitted.retained.join(", ")
            ),
        ];
        if let Some(w) = fitted.comm.as_ref().and_then(|c| c.warning.clone()) {
            notes.push(format!("Warning: {w}."));
        }
        std::fs::write(path, fitted.coefficients.to_text(&notes)).map_err(|e| Error::io(path, e))?;
    }
    let mut report = ExperimentReport::new(spec.clone(), prov);
    report.fit = Some(fitted);
    Ok(RunOutput { report, trace: None })
}

fn bench(spec: &ExperimentSpec) -> Result<RunOutput> {
    let timings = bench_compressors(spec)?;
    let mut report = ExperimentReport::new(spec.clone(), provenance(spec));
    report.timings = Some(timings);
    Ok(RunOutput { report, trace: None })
}

fn spectrum(spec: &ExperimentSpec) -> Result<RunOutput> {
    let matrix: Tensor = match &spec.spectrum.input {
        SpectrumSource::Random {
            rows,
            cols,
            distribution,
        } => random_tensor(&[*rows, *cols], spec.seed, *distribution)?,
        SpectrumSource::File { path } => read_tensor_file(path)?.flatten_rows(),
        SpectrumSource::Activation { layer } => {
            let model = Model::seeded(spec.model, spec.seed)?;
            let mut y = model_input(&spec.model, spec.seed ^ INPUT_STREAM)?;
            for i in 0..=*layer {
                let w = model.layer(i)?;
                y = crate::sim::transformer_layer_forward(&y, &w, spec.model.heads)?;
            }
            y.flatten_rows()
        }
    };
    let curve = singular_spectrum(&matrix)?;
    let top = spec
        .spectrum
        .top
        .iter()
        .map(|&k| TopMass {
            k,
            mass: curve.mass_of_top(k),
        })
        .collect();
    let mut report = ExperimentReport::new(spec.clone(), provenance(spec));
    report.spectrum = Some(SpectrumSummary {
        rows: matrix.shape()[0],
        cols: matrix.shape()[1],
        top,
        curve,
    });
    Ok(RunOutput { report, trace: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> ExperimentSpec {
        parse_config(text, "test").unwrap()
    }

    #[test]
    fn identity_simulation_is_exact() {
        let s = spec("mode = \"simulate\"\npreset = \"w/o\"\n[plan]\ntp = 2\npp = 2\nmicro_batches = 2\n");
        let out = run(&s).unwrap();
        let f = out.report.fidelity.unwrap();
        assert_eq!(f.output, Fidelity::EXACT);
        assert!(f.sites.iter().all(|s| s.fidelity == Fidelity::EXACT));
        let b = out.report.bytes.unwrap();
        assert_eq!(b.forward, b.baseline_forward);
        // 4 layers x 2 collectives x 2 micro-batches, plus 1 boundary x 2.
        assert_eq!(b.sites.len(), 16 + 2);
    }

    #[test]
    fn compressed_simulation_reports_deviation_and_savings() {
        let s = spec("mode = \"simulate\"\npreset = \"A1\"\n[plan]\npp = 2\n[ae]\nsource = \"fit\"\nepochs = 20\n");
        let out = run(&s).unwrap();
        assert!(out.report.fidelity.unwrap().output.max_abs > 0.0);
        let b = out.report.bytes.unwrap();
        assert!(b.forward < b.baseline_forward);
        assert_eq!(out.report.provenance.ae_fits.len(), 2 * 2 + 1);
    }

    #[test]
    fn simulate_is_deterministic_and_round_trips() {
        let s = spec("mode = \"simulate\"\npreset = \"T1\"\nseed = 3\n[simulate]\nsweeps = [{ sweep = \"window\", width = 2, starts = [0, 2] }]\n");
        let a = run(&s).unwrap().report.to_json().unwrap();
        let b = run(&s).unwrap().report.to_json().unwrap();
        assert_eq!(a, b);
        let parsed = ExperimentReport::from_json(&a).unwrap();
        assert_eq!(parsed.to_json().unwrap(), a);
    }

    #[test]
    fn predict_trend_and_trace() {
        let mut s = spec("mode = \"predict\"\n[plan]\npp = 2\nmicro_batches = 2\n");
        s.trace = Some("unused.json".into());
        let out = run(&s).unwrap();
        let p = out.report.predictions.unwrap();
        assert!(p.scaling[..5].windows(2).all(|w| w[0].speedup > w[1].speedup));
        assert_eq!(p.pipeline.makespan, 3.0 * p.pipeline.stage_time + p.pipeline.hop_time);
        assert_eq!(out.trace.unwrap().as_array().unwrap().len(), 2 * 2 + 2);
    }

    #[test]
    fn spectrum_modes() {
        let out = run(&spec("mode = \"spectrum\"\n")).unwrap();
        let s = out.report.spectrum.unwrap();
        assert_eq!((s.rows, s.cols), (64, 64));
        assert!(s.top[1].mass < 0.8);
        let out = run(&spec(
            "mode = \"spectrum\"\n[spectrum.input]\nsource = \"activation\"\nlayer = 1\n",
        ))
        .unwrap();
        assert_eq!(out.report.spectrum.unwrap().rows, 16);
    }

    #[test]
    fn errors_carry_mode() {
        let s = spec("mode = \"fit\"\n[fit]\nmeasurements = \"/nonexistent/m.csv\"\n");
        let err = run(&s).unwrap_err();
        assert!(err.to_string().starts_with("fit mode"), "{err}");
        assert_eq!(err.code(), "E_PARSE");
    }

    #[test]
    fn unknown_report_fields_rejected() {
        let out = run(&spec("mode = \"predict\"\n")).unwrap();
        let mut v: Value = serde_json::from_str(&out.report.to_json().unwrap()).unwrap();
        v["extra"] = Value::Bool(true);
        assert!(ExperimentReport::from_json(&v.to_string()).is_err());
        v.as_object_mut().unwrap().remove("extra");
        v["schema_version"] = Value::from(99);
        assert!(ExperimentReport::from_json(&v.to_string()).is_err());
    }
}
