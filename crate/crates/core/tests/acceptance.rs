//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use actcomp::compress::{
    ae_fit, ae_gradient, compress, decompress, encode_gradient, encode_message, frame_header_len, quant_compress,
    randk_compress, sparse_decompress, topk_compress, AeHyper, AeParams, CompressedMessage, CompressorKind,
    CompressorSpec, Payload,
};
use actcomp::cost::{
    cluster_speedup, cluster_time, flops_per_layer, speedup_single_node, weak_scaling_table, CostCoefficients,
    ScalingGeometry, ScalingRow, REFERENCE_SCALING_ROWS,
};
use actcomp::harness::{parse_config, run};
use actcomp::sim::{
    model_input, pipeline_makespan_sim, pp_forward_sim, AeBank, AeSource, CompressionPlacement, LayerRange, Model,
    ModelConfig, ParallelPlan, PipelineSchedule, Site,
};
use actcomp::tensor::{matmul, random_tensor, singular_spectrum, Distribution, SplitMix64};
use actcomp::Tensor;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn err(e: actcomp::Error) -> String {
    format!("error[{}]: {e}", e.code())
}

fn tp_equivalence() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        layers: 4,
        hidden: 64,
        heads: 4,
        seq_len: 8,
        batch: 2,
        vocab: 30522,
    };
    let model = Model::seeded(config, 11).map_err(err)?;
    let x = model_input(&config, 12).map_err(err)?;
    let placement = CompressionPlacement::identity(&config);
    let bank = AeBank::default();
    let plan = |tp| ParallelPlan {
        tp,
        pp: 1,
        micro_batches: 1,
    };
    let reference = pp_forward_sim(&model, &plan(1), &placement, &bank, &x)
        .and_then(|r| r.joined_output())
        .map_err(err)?;
    let mut worst = 0.0f64;
    for tp in [2, 4] {
        let y = pp_forward_sim(&model, &plan(tp), &placement, &bank, &x)
            .and_then(|r| r.joined_output())
            .map_err(err)?;
        let rel = y.relative_deviation(&reference).map_err(err)?;
        ensure(rel <= 1e-4, || format!("tp={tp}: relative deviation {rel:e} > 1e-4"))?;
        worst = worst.max(rel);
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("max relative deviation {worst:.2e}"))
}

fn random_case(rng: &mut SplitMix64, case: u64) -> Result<Tensor, String> {
    let rank = 1 + rng.below(3) as usize;
    let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(16) as usize).collect();
    let dist = if case.is_multiple_of(2) {
        Distribution::Gaussian
    } else {
        Distribution::Uniform
    };
    let scale = 10f32.powi(rng.below(7) as i32 - 3);
    let x = random_tensor::<f32>(&shape, rng.next_u64(), dist).map_err(err)?;
    Ok(x.scale(scale))
}

fn topk_oracle(x: &Tensor, k: usize) -> BTreeSet<u32> {
    let mut order: Vec<usize> = (0..x.numel()).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (x.data()[a].abs(), x.data()[b].abs());
        vb.partial_cmp(&va).unwrap().then(a.cmp(&b))
    });
    order[..k].iter().map(|&i| i as u32).collect()
}

fn codec_bounds() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(2024);
    let mut worst_ratio = 0.0f64;
    for case in 0..1000u64 {
        let x = random_case(&mut rng, case)?;
        let h = x.last_dim();
        for bits in [2u8, 4, 8] {
            let msg = quant_compress(&x, bits, h).map_err(err)?;
            let y = decompress(&msg, None).map_err(err)?;
            let Payload::Quantized { scales, .. } = &msg.payload else {
                return Err("quantizer produced a non-quantized payload".into());
            };
            for (i, (&a, &b)) in x.data().iter().zip(y.data()).enumerate() {
                let scale = scales[i / h] as f64;
                let e = (a as f64 - b as f64).abs();
                ensure(e <= scale / 2.0 + 1e-7, || {
                    format!("case {case}, bits {bits}, element {i}: error {e:e} > scale/2 + 1e-7 (scale {scale:e})")
                })?;
                if scale > 0.0 {
                    worst_ratio = worst_ratio.max(e / scale);
                }
            }
        }
        let n = x.numel();
        let full_top = sparse_decompress(&topk_compress(&x, n).map_err(err)?).map_err(err)?;
        let full_rand = sparse_decompress(&randk_compress(&x, n, rng.next_u64()).map_err(err)?).map_err(err)?;
        ensure(full_top == x, || format!("case {case}: topk(k=numel) is not exact"))?;
        ensure(full_rand == x, || format!("case {case}: randk(k=numel) is not exact"))?;
        let k = 1 + rng.below(n as u64) as usize;
        let Payload::Sparse { indices, .. } = topk_compress(&x, k).map_err(err)?.payload else {
            return Err("topk produced a non-sparse payload".into());
        };
        let kept: BTreeSet<u32> = indices.into_iter().collect();
        ensure(kept == topk_oracle(&x, k), || {
            format!("case {case}: topk(k={k}) kept set differs from sort")
        })?;
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("1000 tensors, worst quant error {worst_ratio:.3} x scale"))
}

fn flops_oracle() -> Outcome {
    let mut points = 0;
    for b in [1u64, 2, 4] {
        for s in [8u64, 16, 32] {
            for h in [32u64, 64, 128] {
                let gemm = 24 * b * s * h * h + 4 * b * s * s * h;
                let got = flops_per_layer(b, s, h);
                ensure(got == (4 * gemm) as f64, || {
                    format!("B={b} s={s} h={h}: {got} != {}", 4 * gemm)
                })?;
                points += 1;
            }
        }
    }
    Ok(format!("{points} grid points exact"))
}

const TP_PAIRS: [(f64, f64); 3] = [(1.0, 0.5), (0.75, 0.25), (0.5, 2.0)];

fn dyadic_coefficients() -> CostCoefficients {
    CostCoefficients {
        alpha: 2f64.powi(-30),
        beta: 2f64.powi(-18),
        c: 0.25,
        d: 4096.0,
        gamma: 2f64.powi(-24),
        w: 2f64.powi(16),
        e: 64.0,
    }
}

fn scaling_row(nodes: u64, micro_batches: u64, k: &CostCoefficients) -> Result<ScalingRow, String> {
    let g = ScalingGeometry {
        hidden: 64,
        layers: 12,
        nodes,
        batch: micro_batches * 2,
    };
    ScalingRow::new(g, 2, 8, k).map_err(err)
}

fn pipeline_oracle() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for n in 1..=4usize {
        for m in 1..=8usize {
            for (t, p) in TP_PAIRS {
                let s = pipeline_makespan_sim(n, m, t, p).map_err(err)?;
                let expect = (m + n - 1) as f64 * t + (n - 1) as f64 * p;
                ensure(s.makespan == expect, || {
                    format!("n={n} m={m} t={t} p={p}: {} != {expect}", s.makespan)
                })?;
                ensure(s.makespan == PipelineSchedule::closed_form(n, m, t, p), || {
                    "closed form mismatch".into()
                })?;
                checked += 1;
            }
            let dyadic = dyadic_coefficients();
            let fixture = CostCoefficients::fixture();
            for (k, tol) in [(&dyadic, 0.0), (&fixture, 1e-12)] {
                let row = scaling_row(n as u64, m as u64, k)?;
                let engine = pipeline_makespan_sim(n, m, row.stage_time(k), row.hop_time(k)).map_err(err)?;
                let numerator = cluster_time(&row, k);
                let rel = (numerator - engine.makespan).abs() / engine.makespan;
                ensure(rel <= tol, || {
                    format!(
                        "n={n} m={m}: cluster time {numerator} vs engine {} (tol {tol})",
                        engine.makespan
                    )
                })?;
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{checked} makespans matched"))
}

fn speedup_algebra() -> Outcome {
    let k = CostCoefficients::fixture();
    for g in REFERENCE_SCALING_ROWS {
        let single = ScalingGeometry { nodes: 1, ..g };
        let row = ScalingRow::new(single, 16, 128, &k).map_err(err)?;
        let (a, b) = (cluster_speedup(&row, &k), speedup_single_node(16, 128, g.hidden, &k));
        ensure(a == b, || format!("h={}: cluster {a} != single {b}", g.hidden))?;
    }
    let hs: Vec<u64> = (0..6).map(|i| 2048u64 << i).collect();
    let speedups: Vec<f64> = hs.iter().map(|&h| speedup_single_node(16, 128, h, &k)).collect();
    for (i, &h) in hs.iter().enumerate() {
        ensure((16 * 128 * h) as f64 >= k.d, || {
            format!("h={h} below the size threshold")
        })?;
        if i > 0 {
            ensure(speedups[i] <= speedups[i - 1], || {
                format!("speedup rises from {} to {} at h={h}", speedups[i - 1], speedups[i])
            })?;
        }
    }
    let (at4k, at64k) = ((speedups[1] - 1.0).abs(), (speedups[5] - 1.0).abs());
    ensure(at64k < at4k, || {
        format!("|s-1| at 65536 ({at64k}) not below 4096 ({at4k})")
    })?;
    let shown: Vec<String> = speedups.iter().map(|s| format!("{s:.2}")).collect();
    Ok(format!("single-node speedups {}", shown.join(", ")))
}

fn scaling_trend() -> Outcome {
    let k = CostCoefficients::fixture();
    let rows = weak_scaling_table(&REFERENCE_SCALING_ROWS, &k, 16, 128).map_err(err)?;
    let s: Vec<f64> = rows.iter().map(|r| r.speedup).collect();
    ensure(s[..5].windows(2).all(|w| w[0] > w[1]), || {
        format!("rows 1-5 not strictly decreasing: {s:?}")
    })?;
    ensure(s.iter().all(|&v| v > 1.0), || format!("speedup at or below 1: {s:?}"))?;
    let shown: Vec<String> = s.iter().map(|v| format!("{v:.3}")).collect();
    Ok(format!("speedups {}", shown.join(", ")))
}

fn low_rank(tokens: usize, h: usize, c: usize, noise: f32, seed: u64) -> Result<Tensor, String> {
    let z = random_tensor::<f32>(&[tokens, c], seed, Distribution::Gaussian).map_err(err)?;
    let a = random_tensor::<f32>(&[c, h], seed + 1, Distribution::Gaussian)
        .map_err(err)?
        .scale(1.0 / (c as f32).sqrt());
    let n = random_tensor::<f32>(&[tokens, h], seed + 2, Distribution::Gaussian)
        .map_err(err)?
        .scale(noise);
    matmul(&z, &a).and_then(|x| x.add(&n)).map_err(err)
}

fn loss_at(samples: &[Tensor], enc: &[f32], dec: &[f32], h: usize, c: usize) -> Result<f64, String> {
    let params = AeParams::new(
        Tensor::new(vec![h, c], enc.to_vec()).map_err(err)?,
        Tensor::new(vec![c, h], dec.to_vec()).map_err(err)?,
    )
    .map_err(err)?;
    ae_gradient(samples, &params).map(|g| g.loss).map_err(err)
}

fn ae_optimality() -> Outcome {
    let start = Instant::now();
    let (tokens, h, c) = (512, 64, 8);
    let x = low_rank(tokens, h, c, 0.02, 77)?;
    let spectrum = singular_spectrum(&x.cast::<f64>()).map_err(err)?;
    let tail: f64 = spectrum.singular_values[c..].iter().map(|s| s * s).sum();
    let optimum = tail / (tokens * h) as f64;
    let second_moment = x.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.numel() as f64;
    let hyper = AeHyper {
        lr: 0.05,
        epochs: 100_000,
        seed: 5,
    };
    let fit = ae_fit(std::slice::from_ref(&x), c, &hyper).map_err(err)?;
    ensure(fit.final_mse <= 1.1 * optimum, || {
        format!("MSE {:e} exceeds 1.1 x PCA optimum {optimum:e}", fit.final_mse)
    })?;
    ensure(fit.final_mse <= 1e-3 * second_moment, || {
        format!("MSE {:e} exceeds 1e-3 x second moment {second_moment:e}", fit.final_mse)
    })?;

    let samples = [x.slice_rows(0..128).map_err(err)?];
    let params = AeParams::xavier(h, c, 9).map_err(err)?;
    let grad = ae_gradient(&samples, &params).map_err(err)?;
    let enc = params.encoder().data().to_vec();
    let dec = params.decoder().data().to_vec();
    let (mut diff2, mut norm2) = (0.0f64, 0.0f64);
    for which in 0..2 {
        let base = if which == 0 { &enc } else { &dec };
        let analytic = if which == 0 { &grad.encoder } else { &grad.decoder };
        for i in 0..base.len() {
            let (mut plus, mut minus) = (base.clone(), base.clone());
            plus[i] = base[i] + 1e-3;
            minus[i] = base[i] - 1e-3;
            let step = plus[i] as f64 - minus[i] as f64;
            let (lp, lm) = if which == 0 {
                (
                    loss_at(&samples, &plus, &dec, h, c)?,
                    loss_at(&samples, &minus, &dec, h, c)?,
                )
            } else {
                (
                    loss_at(&samples, &enc, &plus, h, c)?,
                    loss_at(&samples, &enc, &minus, h, c)?,
                )
            };
            let fd = (lp - lm) / step;
            diff2 += (fd - analytic[i]).powi(2);
            norm2 += analytic[i].powi(2);
        }
    }
    let rel = (diff2 / norm2).sqrt();
    ensure(rel <= 1e-4, || {
        format!("gradient differs from finite differences by {rel:e} relative")
    })?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "MSE {:.3e} vs optimum {optimum:.3e} ({:.3}x); gradient rel. error {rel:.1e}",
        fit.final_mse,
        fit.final_mse / optimum
    ))
}

fn serialized(msg: &CompressedMessage, spec: &CompressorSpec) -> Result<(u64, u64), String> {
    let wire = spec.wire();
    let header = frame_header_len(msg);
    let fwd = encode_message(msg, &wire).map_err(err)?.len() - header;
    let grad = vec![0.0f32; msg.gradient_len()];
    let bwd = encode_gradient(msg, &grad, &wire).map_err(err)?.len() - header;
    Ok((fwd as u64, bwd as u64))
}

fn byte_accounting() -> Outcome {
    let (h, c) = (1024usize, 100usize);
    let config = ModelConfig {
        layers: 24,
        hidden: h,
        heads: 16,
        seq_len: 4,
        batch: 2,
        vocab: 30522,
    };
    let plan = ParallelPlan {
        tp: 1,
        pp: 4,
        micro_batches: 1,
    };
    let model = Model::seeded(config, 3).map_err(err)?;
    let x = model_input(&config, 4).map_err(err)?;
    let placement = |compressor| CompressionPlacement {
        layers: LayerRange::last(24, 12).expect("24 layers"),
        sites: [Site::PpBoundary].into(),
        compressor,
        error_feedback: false,
    };
    let probe = random_tensor::<f32>(&[config.batch, config.seq_len, h], 8, Distribution::Gaussian).map_err(err)?;

    let ae_spec = CompressorSpec::new(CompressorKind::Ae { code_dim: c });
    let ae_place = placement(ae_spec);
    let bank = AeBank::build(&AeSource::Xavier { seed: 1 }, &model, &plan, &ae_place, &[]).map_err(err)?;
    let run = pp_forward_sim(&model, &plan, &ae_place, &bank, &x).map_err(err)?;
    let dense_spec = CompressorSpec::identity();
    let dense = serialized(&CompressedMessage::dense(&probe), &dense_spec)?;
    let ae_params = AeParams::xavier(h, c, 1).map_err(err)?;
    let ae = serialized(&compress(&ae_spec, &probe, Some(&ae_params)).map_err(err)?, &ae_spec)?;
    ensure(run.boundaries.len() == 3, || {
        format!("expected 3 boundaries, got {}", run.boundaries.len())
    })?;
    for b in &run.boundaries {
        ensure(
            b.baseline_forward_bytes == dense.0 && b.baseline_backward_bytes == dense.1,
            || format!("boundary {}: baseline differs from serialized dense size", b.boundary),
        )?;
        if b.boundary == 0 {
            ensure(
                b.forward_bytes == b.baseline_forward_bytes && b.backward_bytes == b.baseline_backward_bytes,
                || "first boundary bytes changed".into(),
            )?;
        } else {
            ensure((b.forward_bytes, b.backward_bytes) == ae, || {
                format!("boundary {}: counts differ from serialized AE size", b.boundary)
            })?;
            ensure(
                b.forward_bytes * h as u64 == b.baseline_forward_bytes * c as u64,
                || {
                    format!(
                        "boundary {}: forward {} is not baseline {} x c/h",
                        b.boundary, b.forward_bytes, b.baseline_forward_bytes
                    )
                },
            )?;
        }
    }

    let q_spec = CompressorSpec::new(CompressorKind::Quant {
        bits: 4,
        group_len: None,
    });
    let q_run = pp_forward_sim(&model, &plan, &placement(q_spec), &AeBank::default(), &x).map_err(err)?;
    let q = serialized(&compress(&q_spec, &probe, None).map_err(err)?, &q_spec)?;
    for b in q_run.boundaries.iter().filter(|b| b.boundary > 0) {
        ensure(b.backward_bytes == b.baseline_backward_bytes, || {
            format!(
                "quant boundary {}: backward {} != dense {}",
                b.boundary, b.backward_bytes, b.baseline_backward_bytes
            )
        })?;
        ensure((b.forward_bytes, b.backward_bytes) == q, || {
            format!("quant boundary {}: counts differ from serialized size", b.boundary)
        })?;
    }
    Ok(format!(
        "boundary forward bytes {} -> {} (x{})",
        dense.0,
        ae.0,
        dense.0 as f64 / ae.0 as f64
    ))
}

fn spectrum_check() -> Outcome {
    let start = Instant::now();
    let u = random_tensor::<f64>(&[64, 8], 31, Distribution::Gaussian).map_err(err)?;
    let v = random_tensor::<f64>(&[8, 64], 32, Distribution::Gaussian).map_err(err)?;
    let low = singular_spectrum(&matmul(&u, &v).map_err(err)?).map_err(err)?;
    let gauss =
        singular_spectrum(&random_tensor::<f64>(&[64, 64], 33, Distribution::Gaussian).map_err(err)?).map_err(err)?;
    let (m8, m32) = (low.mass_of_top(8), gauss.mass_of_top(32));
    ensure(m8 >= 0.999, || format!("rank-8 top-8 mass {m8}"))?;
    ensure(m32 < 0.80, || format!("gaussian top-32 mass {m32}"))?;
    within(start.elapsed(), 2.0)?;
    Ok(format!("rank-8 top-8 mass {m8:.6}; gaussian top-32 mass {m32:.3}"))
}

const SIMULATE: &str = r#"
mode = "simulate"
seed = 21
preset = "A1"

[model]
layers = 4
hidden = 64
heads = 4
seq_len = 8
batch = 2

[plan]
tp = 2
pp = 2
micro_batches = 2

[simulate]
sweeps = [{ sweep = "last_layers", counts = [1, 2] }]
"#;

fn determinism() -> Outcome {
    let predict = SIMULATE.replace("mode = \"simulate\"", "mode = \"predict\"").replace(
        "\n[simulate]\nsweeps = [{ sweep = \"last_layers\", counts = [1, 2] }]\n",
        "\n",
    );
    let mut sizes = Vec::new();
    for text in [SIMULATE, predict.as_str()] {
        let mut reports = Vec::new();
        for _ in 0..2 {
            let spec = parse_config(text, "acceptance").map_err(err)?;
            let out = run(&spec).map_err(err)?;
            ensure(out.report.timings.is_none(), || "unexpected timing block".into())?;
            reports.push(out.report.to_json().map_err(err)?);
        }
        ensure(reports[0] == reports[1], || {
            format!("{} reports differ between runs", text.lines().nth(1).unwrap_or(""))
        })?;
        sizes.push(reports[0].len());
    }
    Ok(format!(
        "simulate {} bytes, predict {} bytes, identical",
        sizes[0], sizes[1]
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("tp equivalence", tp_equivalence),
        ("codec bounds", codec_bounds),
        ("flops oracle", flops_oracle),
        ("pipeline oracle", pipeline_oracle),
        ("speedup algebra", speedup_algebra),
        ("weak-scaling trend", scaling_trend),
        ("ae optimality", ae_optimality),
        ("byte accounting", byte_accounting),
        ("spectrum", spectrum_check),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {name} ({secs:.2} s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2} {name} ({secs:.2} s): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
