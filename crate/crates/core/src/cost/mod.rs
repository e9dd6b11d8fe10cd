//! Analytical per-layer and cluster throughput model for AE-compressed
//! model-parallel training.
//!
//! Times are in whatever unit the coefficients were fitted in; the bundled
//! fixture uses milliseconds.

mod fit;
mod scaling;

pub use fit::{
    fit_alpha, fit_coefficients, fit_comm_piecewise, fit_gamma, read_measurements, AlphaFit, CommFit, FitReport,
    Measurement, MeasurementKind,
};
pub use scaling::{
    cluster_speedup, cluster_time, cluster_time_ae, weak_scaling_table, ScalingGeometry, ScalingRow,
    REFERENCE_SCALING_ROWS,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Text of the bundled V100-class coefficient file.
pub const FIXTURE_COEFFICIENTS: &str = include_str!("../../fixtures/coeffs_v100.txt");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCoefficients {
    /// Time per FLOP.
    pub alpha: f64,
    /// Time per message element above the threshold.
    pub beta: f64,
    /// Latency floor below the threshold.
    pub c: f64,
    /// Message-size threshold in elements.
    pub d: f64,
    /// AE encode plus decode time per activation element.
    pub gamma: f64,
    /// Inter-node bandwidth in elements per time unit.
    pub w: f64,
    /// Encoder output width.
    pub e: f64,
}

const KEYS: [&str; 7] = ["alpha", "beta", "c", "d", "gamma", "w", "e"];

impl CostCoefficients {
    pub fn fixture() -> Self {
        Self::parse(FIXTURE_COEFFICIENTS, "<bundled fixture>")
            .expect("bundled coefficient file parses")
            .0
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in KEYS.iter().zip(self.values()) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!(
                    "coefficient {k} = {v} must be finite and non-negative"
                )));
            }
        }
        if self.d < 1.0 {
            return Err(Error::Parameter(format!("threshold d = {} must be at least 1", self.d)));
        }
        if self.w <= 0.0 {
            return Err(Error::Parameter("bandwidth w must be positive".into()));
        }
        if self.beta * self.d < self.c {
            log::warn!(
                "t_comm is not monotone: beta*d = {} is below c = {}",
                self.beta * self.d,
                self.c
            );
        }
        Ok(())
    }

    fn values(&self) -> [f64; 7] {
        [self.alpha, self.beta, self.c, self.d, self.gamma, self.w, self.e]
    }

    /// Parses `key = value` lines. `#` starts a comment; comment lines are
    /// returned as provenance. Every key must appear exactly once.
    pub fn parse(text: &str, origin: &str) -> Result<(Self, Vec<String>)> {
        let mut values = BTreeMap::new();
        let mut provenance = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let (body, comment) = match raw.split_once('#') {
                Some((b, c)) => (b, Some(c.trim())),
                None => (raw, None),
            };
            if let Some(c) = comment.filter(|c| !c.is_empty()) {
                provenance.push(c.to_string());
            }
            let body = body.trim();
            if body.is_empty() {
                continue;
            }
            let at = |msg: String| Error::parse(origin, format!("line {}: {msg}", no + 1));
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {body:?}")))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(at(format!("unknown coefficient {k:?}")));
            }
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| at(format!("{k}: {:?} is not a number", v.trim())))?;
            if values.insert(k.to_string(), v).is_some() {
                return Err(at(format!("{k} given twice")));
            }
        }
        let get = |k: &str| {
            values
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(origin, format!("missing coefficient {k}")))
        };
        let coeffs = Self {
            alpha: get("alpha")?,
            beta: get("beta")?,
            c: get("c")?,
            d: get("d")?,
            gamma: get("gamma")?,
            w: get("w")?,
            e: get("e")?,
        };
        coeffs.validate().map_err(|e| Error::parse(origin, e.to_string()))?;
        Ok((coeffs, provenance))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Inverse of [`CostCoefficients::parse`]; `{:e}` formatting round-trips exactly.
    pub fn to_text(&self, provenance: &[String]) -> String {
        let mut out = String::new();
        for line in provenance {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        for (k, v) in KEYS.iter().zip(self.values()) {
            out.push_str(&format!("{k} = {v:e}\n"));
        }
        out
    }
}

/// `96 B s h^2 + 16 B s^2 h`: forward, backward and recomputation FLOPs of
/// one layer.
pub fn flops_per_layer(b: u64, s: u64, h: u64) -> f64 {
    let (b, s, h) = (b as f64, s as f64, h as f64);
    96.0 * b * s * h * h + 16.0 * b * s * s * h
}

/// Piecewise communication time: `c` below `d` elements, `beta * x` from `d` up.
pub fn t_comm(msg_elems: f64, k: &CostCoefficients) -> f64 {
    if msg_elems < k.d {
        k.c
    } else {
        k.beta * msg_elems
    }
}

/// Per-layer time without compression.
pub fn layer_time(b: u64, s: u64, h: u64, k: &CostCoefficients) -> f64 {
    k.alpha * flops_per_layer(b, s, h) + t_comm((b * s * h) as f64, k)
}

/// Per-layer time with an AE of width `e` on the collective.
pub fn layer_time_ae(b: u64, s: u64, h: u64, k: &CostCoefficients) -> f64 {
    let tokens = (b * s) as f64;
    k.alpha * flops_per_layer(b, s, h) + t_comm(tokens * k.e, k) + k.gamma * tokens * h as f64
}

/// `layer_time / layer_time_ae`; the layer count cancels.
pub fn speedup_single_node(b: u64, s: u64, h: u64, k: &CostCoefficients) -> f64 {
    layer_time(b, s, h, k) / layer_time_ae(b, s, h, k)
}

/// Single-layer prediction at one geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPrediction {
    pub batch: u64,
    pub seq_len: u64,
    pub hidden: u64,
    pub flops: f64,
    pub time: f64,
    pub time_ae: f64,
    pub speedup: f64,
}

impl LayerPrediction {
    pub fn at(b: u64, s: u64, h: u64, k: &CostCoefficients) -> Self {
        Self {
            batch: b,
            seq_len: s,
            hidden: h,
            flops: flops_per_layer(b, s, h),
            time: layer_time(b, s, h, k),
            time_ae: layer_time_ae(b, s, h, k),
            speedup: speedup_single_node(b, s, h, k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CostCoefficients {
        CostCoefficients {
            alpha: 1.0,
            beta: 10.0,
            c: 0.2,
            d: 2.0,
            gamma: 1.0,
            w: 1.0,
            e: 1.0,
        }
    }

    #[test]
    fn flops_formula() {
        assert_eq!(flops_per_layer(1, 1, 1), 112.0);
        assert!(flops_per_layer(1, 8, 2048) > 3.0 * flops_per_layer(1, 8, 1024));
    }

    #[test]
    fn comm_threshold() {
        let k = CostCoefficients::fixture();
        assert_eq!(k.d, 409600.0);
        assert_eq!(t_comm(409599.0, &k), k.c);
        assert_eq!(t_comm(409600.0, &k), k.beta * 409600.0);
    }

    #[test]
    fn hand_layer_times() {
        let k = toy();
        assert_eq!(layer_time(1, 1, 2, &k), 436.0);
        assert!((layer_time_ae(1, 1, 2, &k) - 418.2).abs() < 1e-12);
        assert!((speedup_single_node(1, 1, 2, &k) - 436.0 / 418.2).abs() < 1e-15);
        assert!((speedup_single_node(1, 1, 2, &k) - 1.0426).abs() < 1e-4);
    }

    #[test]
    fn degenerate_ae_matches_plain() {
        let mut k = CostCoefficients::fixture();
        k.gamma = 0.0;
        k.e = 1024.0;
        assert_eq!(layer_time(16, 128, 1024, &k), layer_time_ae(16, 128, 1024, &k));
        assert_eq!(speedup_single_node(16, 128, 1024, &k), 1.0);
    }

    #[test]
    fn small_code_hits_latency_floor() {
        let k = CostCoefficients::fixture();
        let t = layer_time_ae(16, 128, 4096, &k);
        let expect = k.alpha * flops_per_layer(16, 128, 4096) + k.c + k.gamma * (16 * 128 * 4096) as f64;
        assert_eq!(t, expect);
    }

    #[test]
    fn text_round_trip() {
        let (k, prov) = CostCoefficients::parse(FIXTURE_COEFFICIENTS, "fixture").unwrap();
        assert!(!prov.is_empty());
        let (again, prov2) = CostCoefficients::parse(&k.to_text(&prov), "echo").unwrap();
        assert_eq!(k, again);
        assert_eq!(prov, prov2);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = CostCoefficients::parse("alpha = 1\nbogus = 2\n", "f.txt").unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(CostCoefficients::parse("alpha = x", "f").is_err());
        let missing = FIXTURE_COEFFICIENTS.replace("gamma", "# gamma");
        assert!(CostCoefficients::parse(&missing, "f")
            .unwrap_err()
            .to_string()
            .contains("gamma"));
        let neg = FIXTURE_COEFFICIENTS.replace("beta = 2.5e-6", "beta = -1");
        assert!(CostCoefficients::parse(&neg, "f").is_err());
    }
}
