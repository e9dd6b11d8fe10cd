use std::time::Instant;

use super::config::ExperimentSpec;
use super::report::CodecTiming;
use crate::compress::{compress, decompress, AeParams, CompressorKind};
use crate::error::Result;
use crate::sim::serialized_bytes;
use crate::tensor::{random_tensor, Distribution};

fn median(values: &[u64]) -> u64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Host wall time of encode and decode for each configured preset on a
/// seeded `[B, s, h]` activation. AE presets use untrained parameters.
pub fn bench_compressors(spec: &ExperimentSpec) -> Result<Vec<CodecTiming>> {
    let m = &spec.model;
    let x = random_tensor::<f32>(&[m.batch, m.seq_len, m.hidden], spec.seed, Distribution::Gaussian)?;
    let reps = spec.bench.repetitions;
    let mut out = Vec::with_capacity(spec.bench.presets.len());
    for preset in &spec.bench.presets {
        let codec = preset.compressor(m.hidden, spec.seed)?;
        let ae = match codec.kind {
            CompressorKind::Ae { code_dim } => Some(AeParams::xavier(m.hidden, code_dim, spec.seed)?),
            _ => None,
        };
        let mut encode_ns = Vec::with_capacity(reps);
        let mut decode_ns = Vec::with_capacity(reps);
        let mut bytes = (0, 0);
        for _ in 0..reps {
            let t0 = Instant::now();
            let msg = compress(&codec, &x, ae.as_ref())?;
            let t1 = Instant::now();
            let y = decompress(&msg, ae.as_ref())?;
            let t2 = Instant::now();
            std::hint::black_box(&y);
            encode_ns.push((t1 - t0).as_nanos() as u64);
            decode_ns.push((t2 - t1).as_nanos() as u64);
            bytes = serialized_bytes(&msg, &codec.wire())?;
        }
        log::debug!("{preset}: median encode {} ns", median(&encode_ns));
        out.push(CodecTiming {
            preset: preset.to_string(),
            codec: codec.label(),
            elements: x.numel(),
            forward_bytes: bytes.0,
            backward_bytes: bytes.1,
            median_encode_ns: median(&encode_ns),
            median_decode_ns: median(&decode_ns),
            encode_ns,
            decode_ns,
        });
    }
    Ok(out)
}
