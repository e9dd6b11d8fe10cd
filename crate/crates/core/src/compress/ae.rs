//! Linear autoencoder codec and its trainer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use super::message::{CompressedMessage, Payload};
use crate::error::{Error, Result};
use crate::tensor::{matmul_last, read_tensor, write_tensor, SplitMix64, Tensor};

const PARAMS_VERSION: u64 = 1;

/// Encoder `[h, c]` and decoder `[c, h]` of one compressed layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AeParams {
    encoder: Tensor,
    decoder: Tensor,
}

impl AeParams {
    pub fn new(encoder: Tensor, decoder: Tensor) -> Result<Self> {
        let (h, c) = encoder.matrix_dims()?;
        if decoder.shape() != [c, h] {
            return Err(Error::Dimension(format!(
                "decoder shape {:?} does not invert encoder shape {:?}",
                decoder.shape(),
                encoder.shape()
            )));
        }
        if !encoder.is_finite() || !decoder.is_finite() {
            return Err(Error::Parameter("AE parameters must be finite".into()));
        }
        Ok(Self { encoder, decoder })
    }

    /// Encoder and decoder both the identity (`c = h`).
    pub fn identity(h: usize) -> Result<Self> {
        Self::new(Tensor::identity(h)?, Tensor::identity(h)?)
    }

    /// Xavier-uniform initialisation: entries uniform on `±sqrt(6 / (h + c))`.
    pub fn xavier(h: usize, c: usize, seed: u64) -> Result<Self> {
        let limit = (6.0 / (h + c) as f64).sqrt();
        let mut rng = SplitMix64::new(seed);
        let mut draw = |_| ((2.0 * rng.next_f64() - 1.0) * limit) as f32;
        let encoder = Tensor::from_fn(&[h, c], &mut draw)?;
        let decoder = Tensor::from_fn(&[c, h], &mut draw)?;
        Self::new(encoder, decoder)
    }

    pub fn hidden(&self) -> usize {
        self.encoder.shape()[0]
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.shape()[1]
    }

    pub fn encoder(&self) -> &Tensor {
        &self.encoder
    }

    pub fn decoder(&self) -> &Tensor {
        &self.decoder
    }
}

/// `code = x · W_e`, shape `[..., c]`.
pub fn ae_compress(x: &Tensor, params: &AeParams) -> Result<CompressedMessage> {
    if x.last_dim() != params.hidden() {
        return Err(Error::Dimension(format!(
            "activation width {} does not match AE input {}",
            x.last_dim(),
            params.hidden()
        )));
    }
    let code = matmul_last(x, &params.encoder)?;
    Ok(CompressedMessage {
        shape: x.shape().to_vec(),
        payload: Payload::Code {
            values: code.into_data(),
            code_dim: params.code_dim(),
        },
    })
}

/// `code · W_d`, restoring the original shape.
pub fn ae_decompress(msg: &CompressedMessage, params: &AeParams) -> Result<Tensor> {
    let Payload::Code { values, code_dim } = &msg.payload else {
        return Err(Error::Format("expected a code message".into()));
    };
    msg.validate()?;
    if *code_dim != params.code_dim() || msg.shape.last() != Some(&params.hidden()) {
        return Err(Error::Dimension(format!(
            "code of width {code_dim} for shape {:?} does not match AE {}x{}",
            msg.shape,
            params.hidden(),
            params.code_dim()
        )));
    }
    let mut code_shape = msg.shape.clone();
    *code_shape.last_mut().unwrap() = *code_dim;
    let code = Tensor::new(code_shape, values.clone())?;
    matmul_last(&code, &params.decoder)
}

/// Full-batch gradient-descent settings for [`ae_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeHyper {
    #[serde(default = "AeHyper::default_lr")]
    pub lr: f64,
    #[serde(default = "AeHyper::default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl AeHyper {
    fn default_lr() -> f64 {
        1e-2
    }

    fn default_epochs() -> usize {
        200
    }
}

impl Default for AeHyper {
    fn default() -> Self {
        Self {
            lr: Self::default_lr(),
            epochs: Self::default_epochs(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AeFit {
    pub params: AeParams,
    /// Mean squared error per element after training.
    pub final_mse: f64,
    /// Per-element MSE after each epoch; non-increasing.
    pub history: Vec<f64>,
    /// Learning rate when training stopped.
    pub final_lr: f64,
}

/// Loss and gradients of the reconstruction objective at given parameters.
#[derive(Debug, Clone)]
pub struct AeGradient {
    /// `mean_tokens ||x - x W_e W_d||^2`.
    pub loss: f64,
    /// Row-major `[h, c]`.
    pub encoder: Vec<f64>,
    /// Row-major `[c, h]`.
    pub decoder: Vec<f64>,
}

/// Second-moment matrix `S = X^T X / tokens` of the stacked samples.
struct Moments {
    h: usize,
    s: Vec<f64>,
    tokens: usize,
    second_moment: f64,
}

impl Moments {
    fn new(samples: &[Tensor]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Parameter("ae_fit needs at least one sample".into()))?;
        let h = first.last_dim();
        let mut s = vec![0.0; h * h];
        let mut tokens = 0;
        for x in samples {
            if x.last_dim() != h {
                return Err(Error::Dimension(format!(
                    "sample width {} differs from {h}",
                    x.last_dim()
                )));
            }
            for r in 0..x.rows() {
                let row = x.row(r);
                for i in 0..h {
                    let xi = row[i] as f64;
                    for j in 0..h {
                        s[i * h + j] += xi * row[j] as f64;
                    }
                }
            }
            tokens += x.rows();
        }
        for v in &mut s {
            *v /= tokens as f64;
        }
        let second_moment = (0..h).map(|i| s[i * h + i]).sum::<f64>() / h as f64;
        Ok(Self {
            h,
            s,
            tokens,
            second_moment,
        })
    }

    /// Loss and gradients at `(we [h×c], wd [c×h])`.
    ///
    /// With `E = W_e W_d - I`, the loss is `tr(E^T S E)`, and the gradients
    /// are `2 S E W_d^T` and `2 W_e^T S E`.
    fn evaluate(&self, we: &[f64], wd: &[f64], c: usize) -> AeGradient {
        let h = self.h;
        // S E = (S W_e) W_d - S, O(h^2 c) rather than O(h^3).
        let sw = mul(&self.s, we, h, h, c);
        let mut se = mul(&sw, wd, h, c, h);
        for (v, s) in se.iter_mut().zip(&self.s) {
            *v -= s;
        }
        let ew = mul(we, wd, h, c, h);
        let mut loss = 0.0;
        for i in 0..h {
            for j in 0..h {
                let e = ew[i * h + j] - if i == j { 1.0 } else { 0.0 };
                loss += e * se[i * h + j];
            }
        }
        // grad_we = 2 SE Wd^T  [h×c]
        let mut g_we = vec![0.0; h * c];
        for i in 0..h {
            for p in 0..c {
                let mut acc = 0.0;
                for j in 0..h {
                    acc += se[i * h + j] * wd[p * h + j];
                }
                g_we[i * c + p] = 2.0 * acc;
            }
        }
        // grad_wd = 2 We^T SE  [c×h]
        let mut g_wd = vec![0.0; c * h];
        for p in 0..c {
            for j in 0..h {
                let mut acc = 0.0;
                for i in 0..h {
                    acc += we[i * c + p] * se[i * h + j];
                }
                g_wd[p * h + j] = 2.0 * acc;
            }
        }
        AeGradient {
            loss,
            encoder: g_we,
            decoder: g_wd,
        }
    }
}

fn mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// Loss and gradients of `mean_tokens ||x - x W_e W_d||^2` over `samples`.
pub fn ae_gradient(samples: &[Tensor], params: &AeParams) -> Result<AeGradient> {
    let m = Moments::new(samples)?;
    if m.h != params.hidden() {
        return Err(Error::Dimension("samples and AE differ in width".into()));
    }
    let we: Vec<f64> = params.encoder.data().iter().map(|&v| v as f64).collect();
    let wd: Vec<f64> = params.decoder.data().iter().map(|&v| v as f64).collect();
    Ok(m.evaluate(&we, &wd, params.code_dim()))
}

/// Trains a linear autoencoder by full-batch gradient descent.
///
/// The objective is the squared reconstruction error summed over the hidden
/// dimension and averaged over tokens; reported MSE values divide it by `h`.
/// Parameters start from [`AeParams::xavier`]. Each step is
/// `lr / second_moment` times the gradient, so `lr` does not depend on the
/// scale of the samples. A step that raises the loss is rejected and the
/// learning rate halved, so the loss history never increases. A non-finite loss aborts with [`Error::Training`].
pub fn ae_fit(samples: &[Tensor], c: usize, hyper: &AeHyper) -> Result<AeFit> {
    let m = Moments::new(samples)?;
    let h = m.h;
    if c == 0 || c > h {
        return Err(Error::Parameter(format!("code dimension {c} must lie in 1..={h}")));
    }
    if !(hyper.lr > 0.0 && hyper.lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate {} must be positive", hyper.lr)));
    }
    if !m.s.iter().all(|v| v.is_finite()) {
        return Err(Error::Training {
            epoch: 0,
            reason: "samples are not finite".into(),
        });
    }
    let init = AeParams::xavier(h, c, hyper.seed)?;
    let mut we: Vec<f64> = init.encoder.data().iter().map(|&v| v as f64).collect();
    let mut wd: Vec<f64> = init.decoder.data().iter().map(|&v| v as f64).collect();
    let mut lr = hyper.lr;
    let mut current = m.evaluate(&we, &wd, c);
    let mut history = Vec::with_capacity(hyper.epochs);

    let norm = if m.second_moment > 0.0 { m.second_moment } else { 1.0 };

    for epoch in 1..=hyper.epochs {
        let step = lr / norm;
        let cand_we: Vec<f64> = we.iter().zip(&current.encoder).map(|(w, g)| w - step * g).collect();
        let cand_wd: Vec<f64> = wd.iter().zip(&current.decoder).map(|(w, g)| w - step * g).collect();
        let next = m.evaluate(&cand_we, &cand_wd, c);
        if !next.loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("loss became {} at learning rate {lr}", next.loss),
            });
        }
        if next.loss > current.loss {
            lr *= 0.5;
            debug!("ae_fit epoch {epoch}: loss rose, learning rate now {lr}");
        } else {
            we = cand_we;
            wd = cand_wd;
            current = next;
        }
        history.push(current.loss / h as f64);
    }

    let to_tensor = |shape: &[usize], v: &[f64]| Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f32).collect());
    let params = AeParams::new(to_tensor(&[h, c], &we)?, to_tensor(&[c, h], &wd)?)?;
    debug!(
        "ae_fit: h={h} c={c} tokens={} second moment {:.3e} final mse {:.3e}",
        m.tokens,
        m.second_moment,
        current.loss / h as f64
    );
    Ok(AeFit {
        params,
        final_mse: current.loss / h as f64,
        history,
        final_lr: lr,
    })
}

/// Writes AE parameters: `version: u64, h: u64, c: u64`, then the encoder
/// and decoder as tensor fixtures.
pub fn write_ae_params<W: Write>(params: &AeParams, mut w: W) -> Result<()> {
    let mut header = Vec::with_capacity(24);
    for v in [PARAMS_VERSION, params.hidden() as u64, params.code_dim() as u64] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&header).map_err(|e| Error::io("AE parameters", e))?;
    write_tensor(&params.encoder, &mut w)?;
    write_tensor(&params.decoder, &mut w)
}

pub fn read_ae_params<R: Read>(mut r: R) -> Result<AeParams> {
    use crate::tensor::fixture_read_u64 as read_u64;
    let version = read_u64(&mut r)?;
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!("unsupported AE parameter version {version}")));
    }
    let h = read_u64(&mut r)? as usize;
    let c = read_u64(&mut r)? as usize;
    let encoder = read_tensor(&mut r)?;
    let decoder = read_tensor(&mut r)?;
    if encoder.shape() != [h, c] {
        return Err(Error::Format(format!(
            "header says {h}x{c} but encoder is {:?}",
            encoder.shape()
        )));
    }
    AeParams::new(encoder, decoder)
}

pub fn write_ae_params_file(params: &AeParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_ae_params(params, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ae_params_file(path: impl AsRef<Path>) -> Result<AeParams> {
    let path = path.as_ref();
    read_ae_params(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{matmul, random_tensor, Distribution};

    #[test]
    fn identity_params_are_exact() {
        let x = random_tensor::<f32>(&[2, 3, 6], 1, Distribution::Gaussian).unwrap();
        let p = AeParams::identity(6).unwrap();
        let y = ae_decompress(&ae_compress(&x, &p).unwrap(), &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn coordinate_projection_roundtrip() {
        let (h, c) = (6, 2);
        let sel = Tensor::from_fn(&[h, c], |i| if i / c == i % c { 1.0 } else { 0.0 }).unwrap();
        let p = AeParams::new(sel.clone(), sel.transpose().unwrap()).unwrap();
        let x = Tensor::from_fn(&[4, h], |i| if i % h < c { (i as f32) * 0.5 - 3.0 } else { 0.0 }).unwrap();
        let y = ae_decompress(&ae_compress(&x, &p).unwrap(), &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_two_matmuls() {
        let x = random_tensor::<f32>(&[5, 12], 2, Distribution::Gaussian).unwrap();
        let p = AeParams::xavier(12, 4, 3).unwrap();
        let y = ae_decompress(&ae_compress(&x, &p).unwrap(), &p).unwrap();
        let expected = matmul(&matmul(&x, p.encoder()).unwrap(), p.decoder()).unwrap();
        assert!(y.max_abs_diff(&expected).unwrap() <= 1e-6);
    }

    #[test]
    fn width_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 5]).unwrap();
        let p = AeParams::xavier(6, 2, 0).unwrap();
        assert!(matches!(ae_compress(&x, &p), Err(Error::Dimension(_))));
        assert!(AeParams::new(Tensor::zeros(&[4, 2]).unwrap(), Tensor::zeros(&[4, 2]).unwrap()).is_err());
    }

    #[test]
    fn full_width_reaches_identity() {
        let x = random_tensor::<f32>(&[64, 8], 4, Distribution::Gaussian).unwrap();
        let fit = ae_fit(
            std::slice::from_ref(&x),
            8,
            &AeHyper {
                lr: 0.05,
                epochs: 2000,
                seed: 1,
            },
        )
        .unwrap();
        let second: f64 = x.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.numel() as f64;
        assert!(fit.final_mse <= 1e-6 * second, "{} vs {}", fit.final_mse, second);
    }

    #[test]
    fn history_never_increases() {
        let x = random_tensor::<f32>(&[100, 16], 5, Distribution::Gaussian).unwrap();
        let fit = ae_fit(
            &[x],
            4,
            &AeHyper {
                lr: 0.5,
                epochs: 300,
                seed: 2,
            },
        )
        .unwrap();
        assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.final_lr < 0.5);
    }

    #[test]
    fn divergence_names_epoch() {
        let x = random_tensor::<f32>(&[10, 4], 6, Distribution::Gaussian).unwrap();
        let hyper = AeHyper {
            lr: 1e200,
            ..AeHyper::default()
        };
        let err = ae_fit(&[x], 2, &hyper).unwrap_err();
        assert!(matches!(err, Error::Training { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ae_fit(&[], 2, &AeHyper::default()).is_err());
        let x = Tensor::<f32>::zeros(&[3, 4]).unwrap();
        assert!(ae_fit(std::slice::from_ref(&x), 5, &AeHyper::default()).is_err());
        let y = Tensor::<f32>::zeros(&[3, 5]).unwrap();
        assert!(ae_fit(&[x, y], 2, &AeHyper::default()).is_err());
    }

    #[test]
    fn params_file_roundtrip() {
        let p = AeParams::xavier(8, 3, 11).unwrap();
        let mut buf = Vec::new();
        write_ae_params(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], &1u64.to_le_bytes());
        assert_eq!(read_ae_params(&buf[..]).unwrap(), p);
        buf[0] = 9;
        assert!(read_ae_params(&buf[..]).is_err());
    }
}
