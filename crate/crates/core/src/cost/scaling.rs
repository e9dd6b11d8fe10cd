use serde::{Deserialize, Serialize};

use super::{layer_time, layer_time_ae, CostCoefficients};
use crate::error::{Error, Result};

/// Model and cluster size of one weak-scaling point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingGeometry {
    pub hidden: u64,
    pub layers: u64,
    pub nodes: u64,
    /// Global batch size.
    pub batch: u64,
}

/// Published weak-scaling geometries: hidden size, layers, nodes, global batch.
pub const REFERENCE_SCALING_ROWS: [ScalingGeometry; 7] = [
    geometry(6144, 40, 1, 1024),
    geometry(8192, 48, 2, 1536),
    geometry(10240, 60, 4, 1792),
    geometry(12288, 80, 8, 2304),
    geometry(16384, 96, 16, 2176),
    geometry(20480, 105, 35, 2528),
    geometry(25600, 128, 64, 3072),
];

const fn geometry(hidden: u64, layers: u64, nodes: u64, batch: u64) -> ScalingGeometry {
    ScalingGeometry {
        hidden,
        layers,
        nodes,
        batch,
    }
}

/// One evaluated point. `micro_batches` is `batch / micro_batch_size`; the
/// per-layer times use the micro-batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingRow {
    pub hidden: u64,
    pub layers: u64,
    pub nodes: u64,
    pub batch: u64,
    pub micro_batches: u64,
    pub micro_batch_size: u64,
    pub seq_len: u64,
    pub time: f64,
    pub time_ae: f64,
    pub speedup: f64,
}

impl ScalingRow {
    pub fn new(g: ScalingGeometry, micro_batch_size: u64, seq_len: u64, k: &CostCoefficients) -> Result<Self> {
        if g.hidden == 0 || g.layers == 0 || g.nodes == 0 || g.batch == 0 || micro_batch_size == 0 || seq_len == 0 {
            return Err(Error::Parameter(format!("scaling row {g:?} has a zero dimension")));
        }
        if !g.batch.is_multiple_of(micro_batch_size) {
            return Err(Error::Parameter(format!(
                "micro-batch size {micro_batch_size} does not divide batch {}",
                g.batch
            )));
        }
        let mut row = Self {
            hidden: g.hidden,
            layers: g.layers,
            nodes: g.nodes,
            batch: g.batch,
            micro_batches: g.batch / micro_batch_size,
            micro_batch_size,
            seq_len,
            time: 0.0,
            time_ae: 0.0,
            speedup: 0.0,
        };
        row.time = cluster_time(&row, k);
        row.time_ae = cluster_time_ae(&row, k);
        row.speedup = cluster_speedup(&row, k);
        Ok(row)
    }

    /// Per-stage time of one micro-batch: `L * T / n`.
    pub fn stage_time(&self, k: &CostCoefficients) -> f64 {
        self.layers as f64 * layer_time(self.micro_batch_size, self.seq_len, self.hidden, k) / self.nodes as f64
    }

    /// Inter-node transfer of one uncompressed micro-batch activation.
    pub fn hop_time(&self, k: &CostCoefficients) -> f64 {
        (self.micro_batch_size * self.seq_len * self.hidden) as f64 / k.w
    }

    fn stage_time_ae(&self, k: &CostCoefficients) -> f64 {
        self.layers as f64 * layer_time_ae(self.micro_batch_size, self.seq_len, self.hidden, k) / self.nodes as f64
    }

    fn hop_time_ae(&self, k: &CostCoefficients) -> f64 {
        (self.micro_batch_size * self.seq_len) as f64 * k.e / k.w
    }

    /// `((m - 1) / n + 1) * L`, the number of layer times on the critical path.
    fn depth(&self) -> f64 {
        ((self.micro_batches - 1) as f64 / self.nodes as f64 + 1.0) * self.layers as f64
    }
}

/// Fill-drain time of one mini-batch without compression:
/// `(m + n - 1) * (L T / n) + (n - 1) * B s h / w`.
pub fn cluster_time(row: &ScalingRow, k: &CostCoefficients) -> f64 {
    let (m, n) = (row.micro_batches, row.nodes);
    (m + n - 1) as f64 * row.stage_time(k) + (n - 1) as f64 * row.hop_time(k)
}

/// As [`cluster_time`] with AE-compressed layers and transfers.
pub fn cluster_time_ae(row: &ScalingRow, k: &CostCoefficients) -> f64 {
    let (m, n) = (row.micro_batches, row.nodes);
    (m + n - 1) as f64 * row.stage_time_ae(k) + (n - 1) as f64 * row.hop_time_ae(k)
}

/// `cluster_time / cluster_time_ae`, evaluated per critical-path layer so
/// that a single node reduces exactly to the single-layer ratio.
pub fn cluster_speedup(row: &ScalingRow, k: &CostCoefficients) -> f64 {
    let depth = row.depth();
    let inter = (row.nodes - 1) as f64;
    let t = layer_time(row.micro_batch_size, row.seq_len, row.hidden, k);
    let t_ae = layer_time_ae(row.micro_batch_size, row.seq_len, row.hidden, k);
    (t + inter * row.hop_time(k) / depth) / (t_ae + inter * row.hop_time_ae(k) / depth)
}

pub fn weak_scaling_table(
    rows: &[ScalingGeometry],
    k: &CostCoefficients,
    micro_batch_size: u64,
    seq_len: u64,
) -> Result<Vec<ScalingRow>> {
    rows.iter()
        .map(|&g| ScalingRow::new(g, micro_batch_size, seq_len, k))
        .collect()
}
