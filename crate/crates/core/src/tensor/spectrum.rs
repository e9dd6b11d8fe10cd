use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 30;
const OFF_TOLERANCE: f64 = 1e-12;
const MAX_EXTENT: usize = 2048;

/// Singular values in non-increasing order with their cumulative share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumCurve {
    pub singular_values: Vec<f64>,
    /// `cumulative_mass[i] = sum(sigma[..=i]) / sum(sigma)`. All ones for a
    /// zero matrix.
    pub cumulative_mass: Vec<f64>,
    pub sweeps: usize,
}

impl SpectrumCurve {
    /// Share of the total singular mass held by the top `k` values.
    pub fn mass_of_top(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            k => self.cumulative_mass[k.min(self.cumulative_mass.len()) - 1],
        }
    }
}

/// Singular spectrum of a matrix by one-sided (Hestenes) Jacobi.
///
/// Rotations act on whichever side of `x` yields the smaller Gram matrix.
/// Sweeps stop once the off-diagonal Gram mass falls below `1e-12` of the
/// diagonal mass, or after 30 sweeps.
pub fn singular_spectrum<T: Scalar>(x: &Tensor<T>) -> Result<SpectrumCurve> {
    let (m, n) = x.matrix_dims()?;
    if m > MAX_EXTENT || n > MAX_EXTENT {
        return Err(Error::Dimension(format!(
            "spectrum limited to {MAX_EXTENT}x{MAX_EXTENT}, got {m}x{n}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::Parameter("spectrum input has non-finite values".into()));
    }
    // Columns of the working matrix; there are min(m, n) of them.
    let mut cols: Vec<Vec<f64>> = if n <= m {
        (0..n)
            .map(|j| (0..m).map(|i| x.data()[i * n + j].to_f64()).collect())
            .collect()
    } else {
        (0..m).map(|i| x.row(i).iter().map(|v| v.to_f64()).collect()).collect()
    };

    let k = cols.len();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        let mut off = 0.0;
        let mut diag = 0.0;
        for c in &cols {
            diag += dot(c, c).powi(2);
        }
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                off += 2.0 * gamma * gamma;
                if gamma == 0.0 {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (a, b) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (ap, aq) = (*a, *b);
                    *a = c * ap - s * aq;
                    *b = s * ap + c * aq;
                }
            }
        }
        sweeps += 1;
        if off.sqrt() <= OFF_TOLERANCE * diag.sqrt() {
            break;
        }
    }

    let mut singular_values: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = singular_values.iter().sum();
    let cumulative_mass = if total > 0.0 {
        let mut acc = 0.0;
        let mut mass: Vec<f64> = singular_values
            .iter()
            .map(|s| {
                acc += s;
                acc / total
            })
            .collect();
        *mass.last_mut().unwrap() = 1.0;
        mass
    } else {
        vec![1.0; singular_values.len()]
    };
    Ok(SpectrumCurve {
        singular_values,
        cumulative_mass,
        sweeps,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
