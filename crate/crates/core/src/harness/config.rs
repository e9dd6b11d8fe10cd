use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compress::{matched_k, CompressorKind, CompressorSpec, MatchMode};
use crate::cost::{CostCoefficients, ScalingGeometry, REFERENCE_SCALING_ROWS};
use crate::error::{Error, Result};
use crate::sim::{AeSource, CompressionPlacement, LayerRange, ModelConfig, ParallelPlan, Site, Sweep};
use crate::tensor::Distribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Predict,
    Fit,
    Bench,
    Spectrum,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Predict => "predict",
            Mode::Fit => "fit",
            Mode::Bench => "bench",
            Mode::Spectrum => "spectrum",
        }
    }
}

/// Named compressor settings.
///
/// `A1`/`A2`: autoencoder with code width 50/100. `T1`..`T4` (Top-K) and
/// `R1`..`R4` (Random-K) are matched to those widths: 1 and 2 at the same
/// forward bytes per token, 3 and 4 at the same kept count. `Q1`..`Q3`:
/// 2-, 4- and 8-bit quantization. `w/o`: no compression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Preset {
    A1,
    A2,
    T1,
    T2,
    T3,
    T4,
    R1,
    R2,
    R3,
    R4,
    Q1,
    Q2,
    Q3,
    Without,
}

const PRESETS: [(Preset, &str); 14] = [
    (Preset::A1, "A1"),
    (Preset::A2, "A2"),
    (Preset::T1, "T1"),
    (Preset::T2, "T2"),
    (Preset::T3, "T3"),
    (Preset::T4, "T4"),
    (Preset::R1, "R1"),
    (Preset::R2, "R2"),
    (Preset::R3, "R3"),
    (Preset::R4, "R4"),
    (Preset::Q1, "Q1"),
    (Preset::Q2, "Q2"),
    (Preset::Q3, "Q3"),
    (Preset::Without, "w/o"),
];

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = PRESETS.iter().find(|(p, _)| p == self).map(|(_, n)| *n).unwrap_or("?");
        f.write_str(name)
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PRESETS.iter().find(|(_, n)| *n == s).map(|(p, _)| *p).ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|(_, n)| *n).collect();
            format!("unknown preset {s:?}; expected one of {}", names.join(", "))
        })
    }
}

impl TryFrom<String> for Preset {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Preset> for String {
    fn from(p: Preset) -> Self {
        p.to_string()
    }
}

impl Preset {
    /// The compressor this preset names for hidden size `h`. Random-K
    /// presets draw indices from `seed`.
    pub fn compressor(self, h: usize, seed: u64) -> Result<CompressorSpec> {
        let base = CompressorSpec::identity();
        let (vb, ib) = (base.value_bytes, base.index_bytes);
        let sparse = |mode, c, random: bool| -> Result<CompressorSpec> {
            let k = matched_k(mode, h, c, vb, ib)?;
            Ok(CompressorSpec::new(if random {
                CompressorKind::Randk { k, seed }
            } else {
                CompressorKind::Topk { k }
            }))
        };
        let spec = match self {
            Preset::A1 => CompressorSpec::new(CompressorKind::Ae { code_dim: 50 }),
            Preset::A2 => CompressorSpec::new(CompressorKind::Ae { code_dim: 100 }),
            Preset::T1 => sparse(MatchMode::SameCost, 50, false)?,
            Preset::T2 => sparse(MatchMode::SameCost, 100, false)?,
            Preset::T3 => sparse(MatchMode::SameRatio, 50, false)?,
            Preset::T4 => sparse(MatchMode::SameRatio, 100, false)?,
            Preset::R1 => sparse(MatchMode::SameCost, 50, true)?,
            Preset::R2 => sparse(MatchMode::SameCost, 100, true)?,
            Preset::R3 => sparse(MatchMode::SameRatio, 50, true)?,
            Preset::R4 => sparse(MatchMode::SameRatio, 100, true)?,
            Preset::Q1 => CompressorSpec::new(CompressorKind::Quant {
                bits: 2,
                group_len: None,
            }),
            Preset::Q2 => CompressorSpec::new(CompressorKind::Quant {
                bits: 4,
                group_len: None,
            }),
            Preset::Q3 => CompressorSpec::new(CompressorKind::Quant {
                bits: 8,
                group_len: None,
            }),
            Preset::Without => base,
        };
        spec.validate(h)?;
        Ok(spec)
    }
}

/// Where cost coefficients come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CoeffSource {
    /// The bundled V100-class file.
    #[default]
    Fixture,
    File(PathBuf),
    Inline(CostCoefficients),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawCoeffs {
    File(PathBuf),
    Inline(CostCoefficients),
}

impl CoeffSource {
    /// Coefficients plus provenance lines and a source label.
    pub fn load(&self) -> Result<(CostCoefficients, Vec<String>, String)> {
        match self {
            CoeffSource::Fixture => {
                let (k, prov) = CostCoefficients::parse(crate::cost::FIXTURE_COEFFICIENTS, "<bundled fixture>")?;
                Ok((k, prov, "bundled:coeffs_v100.txt".into()))
            }
            CoeffSource::File(path) => {
                let (k, prov) = CostCoefficients::load(path)?;
                Ok((k, prov, format!("file:{}", path.display())))
            }
            CoeffSource::Inline(k) => {
                k.validate()?;
                Ok((*k, Vec::new(), "inline".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Perturbation sweeps run after the main simulation.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweeps: Vec<Sweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub micro_batch_size: u64,
    pub seq_len: u64,
    /// Hidden sizes for single-node predictions.
    pub hidden: Vec<u64>,
    pub rows: Vec<ScalingGeometry>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            micro_batch_size: 16,
            seq_len: 128,
            hidden: (0..6).map(|i| 2048 << i).collect(),
            rows: REFERENCE_SCALING_ROWS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub presets: Vec<Preset>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repetitions: 10,
            presets: vec![
                Preset::Without,
                Preset::A1,
                Preset::T1,
                Preset::R1,
                Preset::Q1,
                Preset::Q2,
            ],
        }
    }
}

/// Matrix whose spectrum is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumSource {
    /// Seeded random matrix.
    Random {
        rows: usize,
        cols: usize,
        distribution: Distribution,
    },
    /// Tensor fixture file; leading dimensions are flattened into rows.
    File { path: PathBuf },
    /// Output of `layer` in an uncompressed forward of the configured model,
    /// one row per token.
    Activation { layer: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub input: SpectrumSource,
    /// Report the cumulative mass of the top `k` values for each entry.
    pub top: Vec<usize>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            input: SpectrumSource::Random {
                rows: 64,
                cols: 64,
                distribution: Distribution::Gaussian,
            },
            top: vec![8, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// CSV with columns `kind,size,time`.
    pub measurements: PathBuf,
    /// Where to write the fitted coefficient file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write: Option<PathBuf>,
}

/// A validated experiment.
///
/// `placement.compressor` is always resolved: when `preset` is set it holds
/// the preset's expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub seed: u64,
    pub preset: Option<Preset>,
    pub coeffs: CoeffSource,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub model: ModelConfig,
    pub plan: ParallelPlan,
    pub placement: CompressionPlacement,
    pub ae: AeSource,
    pub simulate: SimulateConfig,
    pub predict: PredictConfig,
    pub bench: BenchConfig,
    pub spectrum: SpectrumConfig,
    pub fit: Option<FitConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawPlacement {
    #[serde(skip_serializing_if = "Option::is_none")]
    layers: Option<LayerRange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sites: Option<BTreeSet<Site>>,
    error_feedback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    compressor: Option<CompressorSpec>,
}

fn default_model() -> ModelConfig {
    ModelConfig {
        layers: 4,
        hidden: 64,
        heads: 4,
        seq_len: 8,
        batch: 2,
        vocab: 30522,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    mode: Mode,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coeffs: Option<RawCoeffs>,
    #[serde(default = "default_model")]
    model: ModelConfig,
    #[serde(default)]
    plan: ParallelPlan,
    #[serde(default)]
    placement: RawPlacement,
    #[serde(default)]
    ae: AeSource,
    #[serde(default)]
    simulate: SimulateConfig,
    #[serde(default)]
    predict: PredictConfig,
    #[serde(default)]
    bench: BenchConfig,
    #[serde(default)]
    spectrum: SpectrumConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitConfig>,
}

fn at(origin: &str, field: &str, e: impl fmt::Display) -> Error {
    Error::parse(format!("{origin}: {field}"), e.to_string())
}

fn resolve(raw: RawSpec, origin: &str) -> Result<ExperimentSpec> {
    let model = raw.model;
    model.validate().map_err(|e| at(origin, "model", e))?;
    raw.plan.validate(&model).map_err(|e| at(origin, "plan", e))?;

    let compressor = match (raw.preset, raw.placement.compressor) {
        (Some(p), Some(_)) => {
            return Err(at(
                origin,
                "placement.compressor",
                format!("preset {p} already fixes the compressor"),
            ))
        }
        (Some(p), None) => p
            .compressor(model.hidden, raw.seed)
            .map_err(|e| at(origin, "preset", e))?,
        (None, Some(c)) => c,
        (None, None) => CompressorSpec::identity(),
    };
    let placement = if raw.preset == Some(Preset::Without) {
        CompressionPlacement {
            error_feedback: raw.placement.error_feedback,
            ..CompressionPlacement::identity(&model)
        }
    } else {
        let default = CompressionPlacement::default_for(&model, compressor);
        CompressionPlacement {
            layers: raw.placement.layers.unwrap_or(default.layers),
            sites: raw.placement.sites.unwrap_or(default.sites),
            compressor,
            error_feedback: raw.placement.error_feedback,
        }
    };
    placement.validate(&model).map_err(|e| at(origin, "placement", e))?;

    if let AeSource::Fit {
        lr,
        epochs,
        calibration_batches,
        ..
    } = raw.ae
    {
        if !(lr.is_finite() && lr > 0.0) || epochs == 0 || calibration_batches == 0 {
            return Err(at(
                origin,
                "ae",
                "lr must be positive, epochs and calibration_batches at least 1",
            ));
        }
    }
    for sweep in &raw.simulate.sweeps {
        let ok = match sweep {
            Sweep::LastLayers { counts } => counts.iter().all(|&n| n <= model.layers),
            Sweep::Window { width, starts } => *width > 0 && starts.iter().all(|&s| s + width <= model.layers),
        };
        if !ok {
            return Err(at(
                origin,
                "simulate.sweeps",
                format!("{sweep:?} does not fit {} layers", model.layers),
            ));
        }
    }
    let p = &raw.predict;
    if p.micro_batch_size == 0 || p.seq_len == 0 || p.hidden.contains(&0) {
        return Err(at(
            origin,
            "predict",
            "micro_batch_size, seq_len and hidden sizes must be positive",
        ));
    }
    if let Some(bad) = p.rows.iter().find(|r| r.batch % p.micro_batch_size != 0) {
        return Err(at(
            origin,
            "predict.rows",
            format!(
                "micro-batch size {} does not divide batch {}",
                p.micro_batch_size, bad.batch
            ),
        ));
    }
    if raw.bench.repetitions == 0 {
        return Err(at(origin, "bench.repetitions", "must be at least 1"));
    }
    for preset in &raw.bench.presets {
        preset
            .compressor(model.hidden, raw.seed)
            .map_err(|e| at(origin, "bench.presets", format!("{preset}: {e}")))?;
    }
    match &raw.spectrum.input {
        SpectrumSource::Random { rows, cols, .. } if *rows == 0 || *cols == 0 || *rows > 2048 || *cols > 2048 => {
            return Err(at(origin, "spectrum.input", "rows and cols must lie in 1..=2048"));
        }
        SpectrumSource::Activation { layer } if *layer >= model.layers => {
            return Err(at(
                origin,
                "spectrum.input.layer",
                format!("outside 0..{}", model.layers),
            ));
        }
        _ => {}
    }
    if raw.spectrum.top.contains(&0) {
        return Err(at(origin, "spectrum.top", "entries must be at least 1"));
    }
    if raw.mode == Mode::Fit && raw.fit.is_none() {
        return Err(at(
            origin,
            "fit",
            "fit mode needs a [fit] section naming the measurements",
        ));
    }
    let coeffs = match raw.coeffs {
        None => CoeffSource::Fixture,
        Some(RawCoeffs::File(p)) => CoeffSource::File(p),
        Some(RawCoeffs::Inline(k)) => {
            k.validate().map_err(|e| at(origin, "coeffs", e))?;
            CoeffSource::Inline(k)
        }
    };
    Ok(ExperimentSpec {
        mode: raw.mode,
        seed: raw.seed,
        preset: raw.preset,
        coeffs,
        out: raw.out,
        trace: raw.trace,
        model,
        plan: raw.plan,
        placement,
        ae: raw.ae,
        simulate: raw.simulate,
        predict: raw.predict,
        bench: raw.bench,
        spectrum: raw.spectrum,
        fit: raw.fit,
    })
}

impl From<&ExperimentSpec> for RawSpec {
    fn from(s: &ExperimentSpec) -> Self {
        RawSpec {
            mode: s.mode,
            seed: s.seed,
            preset: s.preset,
            out: s.out.clone(),
            trace: s.trace.clone(),
            coeffs: match &s.coeffs {
                CoeffSource::Fixture => None,
                CoeffSource::File(p) => Some(RawCoeffs::File(p.clone())),
                CoeffSource::Inline(k) => Some(RawCoeffs::Inline(*k)),
            },
            model: s.model,
            plan: s.plan,
            placement: RawPlacement {
                layers: Some(s.placement.layers),
                sites: Some(s.placement.sites.clone()),
                error_feedback: s.placement.error_feedback,
                compressor: s.preset.is_none().then_some(s.placement.compressor),
            },
            ae: s.ae,
            simulate: s.simulate.clone(),
            predict: s.predict.clone(),
            bench: s.bench.clone(),
            spectrum: s.spectrum.clone(),
            fit: s.fit.clone(),
        }
    }
}

impl Serialize for ExperimentSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawSpec::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ExperimentSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawSpec::deserialize(deserializer)?;
        resolve(raw, "spec").map_err(serde::de::Error::custom)
    }
}

/// Parses a TOML experiment config. `origin` names the source in errors.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentSpec> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    parse_table(table, origin)
}

/// Command-line values that replace their config counterparts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub coeffs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

/// As [`parse_config`], with the mode taken from `mode` when the text names
/// none (a text naming a different mode is rejected) and `overrides`
/// applied before validation.
pub fn parse_config_for_mode(text: &str, origin: &str, mode: Mode, overrides: &Overrides) -> Result<ExperimentSpec> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    match table.get("mode") {
        None => {
            table.insert("mode".into(), toml::Value::String(mode.name().into()));
        }
        Some(toml::Value::String(m)) if m == mode.name() => {}
        Some(other) => {
            return Err(at(
                origin,
                "mode",
                format!("config names mode {other} but `{}` was requested", mode.name()),
            ))
        }
    }
    if let Some(seed) = overrides.seed {
        let seed = i64::try_from(seed).map_err(|_| at("--seed", "seed", "must not exceed 2^63 - 1"))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    let paths = [
        ("coeffs", &overrides.coeffs),
        ("out", &overrides.out),
        ("trace", &overrides.trace),
    ];
    for (key, value) in paths {
        if let Some(p) = value {
            let text = p.to_str().ok_or_else(|| at(origin, key, "path is not valid UTF-8"))?;
            table.insert(key.into(), toml::Value::String(text.into()));
        }
    }
    parse_table(table, origin)
}

fn parse_table(table: toml::Table, origin: &str) -> Result<ExperimentSpec> {
    let raw: RawSpec = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        at(origin, if path == "." { "<root>" } else { &path }, e.into_inner())
    })?;
    resolve(raw, origin)
}

/// Canonical TOML for `spec`; [`parse_config`] reads it back unchanged.
pub fn emit_config(spec: &ExperimentSpec) -> Result<String> {
    toml::to_string(&RawSpec::from(spec)).map_err(|e| Error::Format(format!("cannot emit config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentSpec> {
        parse_config(text, "test.toml")
    }

    const BASE: &str = r#"
mode = "simulate"
seed = 7
[model]
layers = 24
hidden = 1024
heads = 16
seq_len = 8
batch = 2
"#;

    #[test]
    fn presets_expand() {
        let with = |p: &str| parse(&format!("preset = \"{p}\"\n{BASE}")).unwrap();
        let a1 = with("A1");
        assert_eq!(a1.placement.compressor.kind, CompressorKind::Ae { code_dim: 50 });
        assert_eq!((a1.placement.layers.lo, a1.placement.layers.hi), (12, 23));
        assert_eq!(a1.placement.sites.len(), 2);
        assert_eq!(with("T3").placement.compressor.kind, CompressorKind::Topk { k: 50 });
        assert_eq!(with("T1").placement.compressor.kind, CompressorKind::Topk { k: 16 });
        assert_eq!(
            with("R2").placement.compressor.kind,
            CompressorKind::Randk { k: 33, seed: 7 }
        );
        assert_eq!(
            with("Q3").placement.compressor.kind,
            CompressorKind::Quant {
                bits: 8,
                group_len: None
            }
        );
        let wo = with("w/o");
        assert_eq!(wo.placement, CompressionPlacement::identity(&wo.model));
    }

    #[test]
    fn preset_conflicts_with_explicit_compressor() {
        let text = format!("preset = \"A1\"\n{BASE}\n[placement.compressor]\nkind = \"topk\"\nk = 3\n");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("placement.compressor"), "{err}");
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse(&format!("{BASE}\nlayer_count = 3\n")).unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
        assert!(err.to_string().contains("model"), "{err}");
        let err = parse(&format!("{BASE}\n[bench]\nrepetition = 3\n")).unwrap_err();
        assert!(err.to_string().contains("bench"), "{err}");
    }

    #[test]
    fn invariant_violations_rejected() {
        assert!(parse(&BASE.replace("heads = 16", "heads = 3")).is_err());
        let err = parse(&format!("{BASE}\n[plan]\npp = 5\n")).unwrap_err();
        assert!(err.to_string().contains("plan"), "{err}");
        assert!(parse(&format!("{BASE}\n[placement]\nlayers = [3, 30]\n")).is_err());
        assert!(parse(&BASE.replace("simulate", "fit")).is_err());
        assert!(parse(&format!("preset = \"Z9\"\n{BASE}")).is_err());
    }

    #[test]
    fn round_trip() {
        let texts = [
            format!("preset = \"T2\"\n{BASE}"),
            format!("{BASE}\n[placement]\nlayers = [2, 5]\nsites = [\"pp_boundary\"]\nerror_feedback = true\n[placement.compressor]\nkind = \"quant\"\nbits = 4\ngroup_len = 256\n"),
            format!("coeffs = \"c.txt\"\n{BASE}\n[simulate]\nsweeps = [{{ sweep = \"last_layers\", counts = [0, 4] }}]\n"),
            "mode = \"predict\"\n[coeffs]\nalpha = 1e-12\nbeta = 1e-6\nc = 0.1\nd = 4096\ngamma = 1e-7\nw = 1e5\ne = 64\n".to_string(),
            "mode = \"fit\"\n[fit]\nmeasurements = \"m.csv\"\nwrite = \"out.txt\"\n".to_string(),
            "mode = \"spectrum\"\n[spectrum]\ntop = [4]\n[spectrum.input]\nsource = \"activation\"\nlayer = 2\n".to_string(),
        ];
        for t in &texts {
            let spec = parse(t).unwrap();
            let emitted = emit_config(&spec).unwrap();
            assert_eq!(parse(&emitted).unwrap(), spec, "{emitted}");
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ExperimentSpec>(&json).unwrap(), spec);
        }
    }

    #[test]
    fn mode_injection() {
        let none = Overrides::default();
        let text = BASE.replace("mode = \"simulate\"\n", "");
        assert_eq!(
            parse_config_for_mode(&text, "t", Mode::Predict, &none).unwrap().mode,
            Mode::Predict
        );
        assert!(parse_config_for_mode(BASE, "t", Mode::Predict, &none).is_err());
        assert_eq!(
            parse_config_for_mode(BASE, "t", Mode::Simulate, &none).unwrap().mode,
            Mode::Simulate
        );
    }

    #[test]
    fn calibration_batches_default_and_bounds() {
        let spec = parse_config(BASE, "t").unwrap();
        assert_eq!(spec.ae.calibration_batches(), 16);
        let text = format!("{BASE}\n[ae]\nsource = \"fit\"\ncalibration_batches = 0\n");
        assert!(parse_config(&text, "t").is_err());
        let text = format!("{BASE}\n[ae]\nsource = \"xavier\"\nseed = 3\n");
        assert_eq!(parse_config(&text, "t").unwrap().ae.calibration_batches(), 0);
    }

    #[test]
    fn overrides_apply_before_preset_expansion() {
        let o = Overrides {
            seed: Some(99),
            coeffs: Some("k.txt".into()),
            out: Some("r.json".into()),
            trace: None,
        };
        let s = parse_config_for_mode(&format!("preset = \"R1\"\n{BASE}"), "t", Mode::Simulate, &o).unwrap();
        assert_eq!(s.seed, 99);
        assert_eq!(s.placement.compressor.kind, CompressorKind::Randk { k: 16, seed: 99 });
        assert_eq!(s.coeffs, CoeffSource::File("k.txt".into()));
        assert_eq!(s.out, Some("r.json".into()));
        let big = Overrides {
            seed: Some(u64::MAX),
            ..Overrides::default()
        };
        assert!(parse_config_for_mode(BASE, "t", Mode::Simulate, &big).is_err());
    }

    #[test]
    fn preset_names_round_trip() {
        for (p, n) in PRESETS {
            assert_eq!(p.to_string(), n);
            assert_eq!(n.parse::<Preset>().unwrap(), p);
        }
    }
}
