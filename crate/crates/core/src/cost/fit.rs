use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CostCoefficients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    /// `size` is a FLOP count.
    Comp,
    /// `size` is a message length in elements.
    Comm,
    /// `size` is the number of activation elements passed through the AE.
    Overhead,
}

/// One row of a measurement CSV (`kind,size,time`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub size: f64,
    pub time: f64,
}

pub fn read_measurements(path: impl AsRef<Path>) -> Result<Vec<Measurement>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(&origin, e.to_string()))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Measurement>().enumerate() {
        let m = row.map_err(|e| Error::parse(&origin, format!("row {}: {e}", i + 1)))?;
        if !(m.size.is_finite() && m.time.is_finite() && m.size >= 0.0 && m.time >= 0.0) {
            return Err(Error::parse(
                &origin,
                format!("row {}: size and time must be non-negative", i + 1),
            ));
        }
        out.push(m);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaFit {
    pub alpha: f64,
    /// Index of the point the fit used.
    pub chosen: usize,
    /// `time / flops` of every point with positive FLOPs, for comparison.
    pub per_point: Vec<Option<f64>>,
}

/// Time per FLOP taken from the single largest-FLOP measurement. Smaller
/// workloads under-utilize the device and would overstate alpha.
pub fn fit_alpha(points: &[(f64, f64)]) -> Result<AlphaFit> {
    let chosen = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.0 > 0.0)
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Fit("alpha needs at least one measurement with positive FLOPs".into()))?;
    let per_point = points.iter().map(|&(f, t)| (f > 0.0).then(|| t / f)).collect();
    Ok(AlphaFit {
        alpha: points[chosen].1 / points[chosen].0,
        chosen,
        per_point,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommFit {
    /// Latency floor; `None` when every point sits above the threshold.
    pub c: Option<f64>,
    /// Per-element slope; `None` when every point sits below the threshold.
    pub beta: Option<f64>,
    /// Smallest message size treated as bandwidth-bound.
    pub d: Option<f64>,
    pub sse: f64,
    pub warning: Option<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn slope_through_origin(points: &[(f64, f64)]) -> Option<f64> {
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    (sxx > 0.0).then(|| points.iter().map(|p| p.0 * p.1).sum::<f64>() / sxx)
}

fn sse_const(points: &[(f64, f64)], c: f64) -> f64 {
    points.iter().map(|p| (p.1 - c).powi(2)).sum()
}

fn sse_linear(points: &[(f64, f64)], beta: f64) -> f64 {
    points.iter().map(|p| (p.1 - beta * p.0).powi(2)).sum()
}

/// Piecewise fit of `(size, time)` points.
///
/// Every measured size is tried as the breakpoint `d`: points below it fit
/// a constant `c` (their mean), points at or above it a line through the
/// origin. The breakpoint with the least total squared error wins. If a
/// single regime explains the data at least as well, that regime is
/// returned with the other parameter unset and a warning.
pub fn fit_comm_piecewise(points: &[(f64, f64)]) -> Result<CommFit> {
    if points.len() < 4 {
        return Err(Error::Fit(format!(
            "piecewise fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scale: f64 = pts.iter().map(|p| p.1 * p.1).sum();
    let tol = 1e-12 * scale;

    let mut best: Option<CommFit> = None;
    for split in 1..pts.len() {
        if pts[split].0 == pts[split - 1].0 {
            continue;
        }
        let (left, right) = pts.split_at(split);
        let c = mean(&left.iter().map(|p| p.1).collect::<Vec<_>>());
        let Some(beta) = slope_through_origin(right) else {
            continue;
        };
        let sse = sse_const(left, c) + sse_linear(right, beta);
        if best.as_ref().is_none_or(|b| sse < b.sse) {
            best = Some(CommFit {
                c: Some(c),
                beta: Some(beta),
                d: Some(pts[split].0),
                sse,
                warning: None,
            });
        }
    }

    let times: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let c_all = mean(&times);
    let below = CommFit {
        c: Some(c_all),
        beta: None,
        d: None,
        sse: sse_const(&pts, c_all),
        warning: Some("all points fit the latency regime; beta is undetermined".into()),
    };
    let above = slope_through_origin(&pts).map(|beta| CommFit {
        c: None,
        beta: Some(beta),
        d: Some(pts[0].0),
        sse: sse_linear(&pts, beta),
        warning: Some("all points fit the bandwidth regime; c is undetermined".into()),
    });
    let single = match above {
        Some(a) if a.sse < below.sse => a,
        _ => below,
    };
    let fit = match best {
        Some(b) if b.sse + tol < single.sse => b,
        _ => single,
    };
    if let Some(w) = &fit.warning {
        log::warn!("{w}");
    } else if let (Some(c), Some(beta), Some(d)) = (fit.c, fit.beta, fit.d) {
        if beta * d < c {
            log::warn!("fitted t_comm is not monotone: beta*d = {} < c = {c}", beta * d);
        }
    }
    Ok(fit)
}

/// Least-squares slope through the origin of `(elements, time)` points.
pub fn fit_gamma(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Fit(format!(
            "gamma needs at least 2 points, got {}",
            points.len()
        )));
    }
    slope_through_origin(points).ok_or_else(|| Error::Fit("gamma points all have zero size".into()))
}

/// Coefficients fitted from a measurement set, with what was kept from the
/// base set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub coefficients: CostCoefficients,
    pub alpha: Option<AlphaFit>,
    pub comm: Option<CommFit>,
    pub gamma: Option<f64>,
    /// Coefficients carried over from the base set.
    pub retained: Vec<String>,
}

/// Fits every coefficient the measurements cover; the rest come from `base`.
pub fn fit_coefficients(measurements: &[Measurement], base: &CostCoefficients) -> Result<FitReport> {
    let of = |kind| -> Vec<(f64, f64)> {
        measurements
            .iter()
            .filter(|m| m.kind == kind)
            .map(|m| (m.size, m.time))
            .collect()
    };
    let (comp, comm, over) = (
        of(MeasurementKind::Comp),
        of(MeasurementKind::Comm),
        of(MeasurementKind::Overhead),
    );
    if comp.is_empty() && comm.is_empty() && over.is_empty() {
        return Err(Error::Fit("no measurements".into()));
    }
    let mut k = *base;
    let mut retained = vec!["w".to_string(), "e".to_string()];

    let alpha = if comp.is_empty() {
        retained.push("alpha".into());
        None
    } else {
        let f = fit_alpha(&comp)?;
        k.alpha = f.alpha;
        Some(f)
    };
    let comm_fit = if comm.is_empty() {
        retained.extend(["beta".into(), "c".into(), "d".into()]);
        None
    } else {
        let f = fit_comm_piecewise(&comm)?;
        match f.c {
            Some(c) => k.c = c,
            None => retained.push("c".into()),
        }
        match f.beta {
            Some(b) => k.beta = b,
            None => retained.push("beta".into()),
        }
        match f.d {
            Some(d) if f.c.is_some() && f.beta.is_some() => k.d = d,
            _ => retained.push("d".into()),
        }
        Some(f)
    };
    let gamma = if over.is_empty() {
        retained.push("gamma".into());
        None
    } else {
        let g = fit_gamma(&over)?;
        k.gamma = g;
        Some(g)
    };
    retained.sort();
    k.validate()?;
    Ok(FitReport {
        coefficients: k,
        alpha,
        comm: comm_fit,
        gamma,
        retained,
    })
}
