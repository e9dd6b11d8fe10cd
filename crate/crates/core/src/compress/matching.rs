use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a sparsifier is sized against an autoencoder of code width `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Same forward bytes per token: value plus index per kept element
    /// against `c` code values.
    SameCost,
    /// Same number of kept reals per token: `k = c`.
    SameRatio,
}

/// Kept elements per token for a sparsifier matched to AE width `c`.
pub fn matched_k(mode: MatchMode, h: usize, c: usize, value_bytes: u8, index_bytes: u8) -> Result<usize> {
    if c == 0 || c > h {
        return Err(Error::Parameter(format!("code width {c} must lie in 1..={h}")));
    }
    let k = match mode {
        MatchMode::SameCost => c * value_bytes as usize / (value_bytes as usize + index_bytes as usize),
        MatchMode::SameRatio => c,
    };
    if k < 1 {
        return Err(Error::Parameter(format!(
            "matching c = {c} under {mode:?} leaves no element to keep"
        )));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_cost_counts_index_bytes() {
        // 50 half-precision code values = 100 B; each kept element costs 6 B.
        assert_eq!(matched_k(MatchMode::SameCost, 1024, 50, 2, 4).unwrap(), 16);
        assert_eq!(matched_k(MatchMode::SameCost, 1024, 100, 2, 4).unwrap(), 33);
    }

    #[test]
    fn same_ratio_keeps_c() {
        assert_eq!(matched_k(MatchMode::SameRatio, 1024, 50, 2, 4).unwrap(), 50);
        assert_eq!(matched_k(MatchMode::SameRatio, 64, 64, 2, 4).unwrap(), 64);
    }

    #[test]
    fn degenerate_results_rejected() {
        assert!(matched_k(MatchMode::SameCost, 1024, 2, 2, 4).is_err());
        assert!(matched_k(MatchMode::SameRatio, 8, 9, 2, 4).is_err());
    }
}
