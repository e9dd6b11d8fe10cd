//! Pre-norm transformer encoder layer with a pluggable tensor-parallel split.

use crate::error::{Error, Result};
use crate::tensor::{matmul_last, rowwise_softmax, SplitMix64, Tensor};

const LN_EPS: f64 = 1e-5;

/// Parameters of one encoder layer.
///
/// The fused QKV projection stores the query, key and value blocks side by
/// side (`[Q | K | V]`, each `h` wide); head `j` owns columns
/// `j*d..(j+1)*d` of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Vec<f32>,
    pub ln1_bias: Vec<f32>,
    pub qkv: Tensor,
    pub qkv_bias: Vec<f32>,
    pub attn_out: Tensor,
    pub attn_out_bias: Vec<f32>,
    pub ln2_gain: Vec<f32>,
    pub ln2_bias: Vec<f32>,
    pub mlp_in: Tensor,
    pub mlp_in_bias: Vec<f32>,
    pub mlp_out: Tensor,
    pub mlp_out_bias: Vec<f32>,
}

impl LayerWeights {
    /// All-zero weights, including layer-norm gains.
    pub fn zeros(h: usize) -> Result<Self> {
        Ok(Self {
            ln1_gain: vec![0.0; h],
            ln1_bias: vec![0.0; h],
            qkv: Tensor::zeros(&[h, 3 * h])?,
            qkv_bias: vec![0.0; 3 * h],
            attn_out: Tensor::zeros(&[h, h])?,
            attn_out_bias: vec![0.0; h],
            ln2_gain: vec![0.0; h],
            ln2_bias: vec![0.0; h],
            mlp_in: Tensor::zeros(&[h, 4 * h])?,
            mlp_in_bias: vec![0.0; 4 * h],
            mlp_out: Tensor::zeros(&[4 * h, h])?,
            mlp_out_bias: vec![0.0; h],
        })
    }

    /// Seeded initialisation: matrices `N(0, 0.02^2)`, biases `N(0, 0.01^2)`,
    /// layer-norm gains `1 + N(0, 0.01^2)`.
    pub fn seeded(h: usize, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let mut spare: Option<f64> = None;
        let mut normal = |std: f64| -> f32 {
            let z = spare.take().unwrap_or_else(|| {
                let (a, b) = rng.gaussian_pair();
                spare = Some(b);
                a
            });
            (z * std) as f32
        };
        let mut vec = |n: usize, mean: f32, std: f64| -> Vec<f32> { (0..n).map(|_| mean + normal(std)).collect() };
        let ln1_gain = vec(h, 1.0, 0.01);
        let ln1_bias = vec(h, 0.0, 0.01);
        let qkv_bias = vec(3 * h, 0.0, 0.01);
        let attn_out_bias = vec(h, 0.0, 0.01);
        let ln2_gain = vec(h, 1.0, 0.01);
        let ln2_bias = vec(h, 0.0, 0.01);
        let mlp_in_bias = vec(4 * h, 0.0, 0.01);
        let mlp_out_bias = vec(h, 0.0, 0.01);
        let mut matrix = |rows: usize, cols: usize| Tensor::new(vec![rows, cols], vec(rows * cols, 0.0, 0.02));
        Ok(Self {
            qkv: matrix(h, 3 * h)?,
            attn_out: matrix(h, h)?,
            mlp_in: matrix(h, 4 * h)?,
            mlp_out: matrix(4 * h, h)?,
            ln1_gain,
            ln1_bias,
            qkv_bias,
            attn_out_bias,
            ln2_gain,
            ln2_bias,
            mlp_in_bias,
            mlp_out_bias,
        })
    }

    pub fn hidden(&self) -> usize {
        self.ln1_gain.len()
    }

    fn check(&self, h: usize) -> Result<()> {
        let ok = self.ln1_gain.len() == h
            && self.ln1_bias.len() == h
            && self.qkv.shape() == [h, 3 * h]
            && self.qkv_bias.len() == 3 * h
            && self.attn_out.shape() == [h, h]
            && self.attn_out_bias.len() == h
            && self.ln2_gain.len() == h
            && self.ln2_bias.len() == h
            && self.mlp_in.shape() == [h, 4 * h]
            && self.mlp_in_bias.len() == 4 * h
            && self.mlp_out.shape() == [4 * h, h]
            && self.mlp_out_bias.len() == h;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("layer weights are not all sized for h = {h}")))
        }
    }
}

/// The two row-parallel reductions of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Collective {
    Attention,
    Mlp,
}

/// Sums per-worker partial outputs of a row-split GEMM.
pub type Reduce<'a> = dyn FnMut(Collective, Vec<Tensor>) -> Result<Tensor> + 'a;

/// Exact all-reduce: partials summed in worker order.
pub fn sum_partials(partials: Vec<Tensor>) -> Result<Tensor> {
    let mut iter = partials.into_iter();
    let mut acc = iter
        .next()
        .ok_or_else(|| Error::Dimension("no partial outputs to reduce".into()))?;
    for p in iter {
        acc = acc.add(&p)?;
    }
    Ok(acc)
}

/// One pre-norm encoder layer: `x + Attn(LN(x))`, then `+ MLP(LN(.))` with GELU.
pub fn transformer_layer_forward(x: &Tensor, weights: &LayerWeights, heads: usize) -> Result<Tensor> {
    layer_forward(x, weights, heads, 1, &mut |_, parts| sum_partials(parts))
}

/// Layer forward split over `tp` workers.
///
/// The QKV and first MLP projections are split by columns (whole heads per
/// worker), the attention-output and second MLP projections by rows; each
/// row-split GEMM yields `tp` partial outputs that `reduce` combines.
pub(crate) fn layer_forward(
    x: &Tensor,
    w: &LayerWeights,
    heads: usize,
    tp: usize,
    reduce: &mut Reduce<'_>,
) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dimension(format!(
            "expected [B, s, h] input, got {:?}",
            x.shape()
        )));
    }
    let h = x.last_dim();
    w.check(h)?;
    if heads == 0 || h % heads != 0 {
        return Err(Error::Dimension(format!("{heads} heads do not divide h = {h}")));
    }
    if tp == 0 || !heads.is_multiple_of(tp) {
        return Err(Error::Plan(format!("tp = {tp} does not divide {heads} heads")));
    }
    let (batch, seq) = (x.shape()[0], x.shape()[1]);
    let d = h / heads;
    let shard = h / tp;
    let heads_per = heads / tp;

    // Attention block.
    let a = layer_norm(x, &w.ln1_gain, &w.ln1_bias)?;
    let mut partials = Vec::with_capacity(tp);
    for r in 0..tp {
        let cols = r * shard..(r + 1) * shard;
        let wqkv = Tensor::concat_last(&[
            w.qkv.slice_last(cols.clone())?,
            w.qkv.slice_last(h + cols.start..h + cols.end)?,
            w.qkv.slice_last(2 * h + cols.start..2 * h + cols.end)?,
        ])?;
        let bqkv: Vec<f32> = [0, h, 2 * h]
            .iter()
            .flat_map(|&o| w.qkv_bias[o + cols.start..o + cols.end].iter().copied())
            .collect();
        let qkv = matmul_last(&a, &wqkv)?.add_row_vector(&bqkv)?;
        let ctx = attention(&qkv, batch, seq, heads_per, d)?;
        partials.push(matmul_last(&ctx, &w.attn_out.slice_rows(cols)?)?);
    }
    let attn = reduce(Collective::Attention, partials)?.add_row_vector(&w.attn_out_bias)?;
    let x1 = x.add(&attn)?;

    // MLP block.
    let m = layer_norm(&x1, &w.ln2_gain, &w.ln2_bias)?;
    let ff = 4 * h / tp;
    let mut partials = Vec::with_capacity(tp);
    for r in 0..tp {
        let cols = r * ff..(r + 1) * ff;
        let u = matmul_last(&m, &w.mlp_in.slice_last(cols.clone())?)?
            .add_row_vector(&w.mlp_in_bias[cols.clone()])?
            .map(gelu);
        partials.push(matmul_last(&u, &w.mlp_out.slice_rows(cols)?)?);
    }
    let mlp = reduce(Collective::Mlp, partials)?.add_row_vector(&w.mlp_out_bias)?;
    x1.add(&mlp)
}

/// Scaled dot-product attention over `[Q | K | V]` laid out per head.
fn attention(qkv: &Tensor, batch: usize, seq: usize, heads: usize, d: usize) -> Result<Tensor> {
    let width = heads * d;
    let row_len = 3 * width;
    let scale = 1.0 / (d as f32).sqrt();
    let mut ctx = vec![0.0f32; batch * seq * width];
    for b in 0..batch {
        for j in 0..heads {
            let block = |offset: usize| -> Result<Tensor> {
                let mut data = Vec::with_capacity(seq * d);
                for t in 0..seq {
                    let base = (b * seq + t) * row_len + offset + j * d;
                    data.extend_from_slice(&qkv.data()[base..base + d]);
                }
                Tensor::new(vec![seq, d], data)
            };
            let (q, k, v) = (block(0)?, block(width)?, block(2 * width)?);
            let scores = matmul_last(&q, &k.transpose()?)?.scale(scale);
            let out = matmul_last(&rowwise_softmax(&scores), &v)?;
            for t in 0..seq {
                let dst = (b * seq + t) * width + j * d;
                ctx[dst..dst + d].copy_from_slice(out.row(t));
            }
        }
    }
    Tensor::new(vec![batch, seq, width], ctx)
}

fn layer_norm(x: &Tensor, gain: &[f32], bias: &[f32]) -> Result<Tensor> {
    let h = x.last_dim();
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / h as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / h as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..h {
            out.push((((row[i] as f64 - mean) * inv) as f32) * gain[i] + bias[i]);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// GELU, tanh approximation.
fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}
