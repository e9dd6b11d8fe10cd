use super::{compress, decompress, AeParams, CompressedMessage, CompressorSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compression residual carried between successive messages of one stream.
///
/// One state belongs to one stream; it must not be shared between
/// concurrently running streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFeedbackState {
    residual: Tensor,
}

impl ErrorFeedbackState {
    pub fn new(shape: &[usize]) -> Result<Self> {
        Ok(Self {
            residual: Tensor::zeros(shape)?,
        })
    }

    pub fn residual(&self) -> &Tensor {
        &self.residual
    }

    /// Compresses `x + residual` and keeps what the message failed to carry.
    pub fn step(&mut self, x: &Tensor, inner: &CompressorSpec, ae: Option<&AeParams>) -> Result<CompressedMessage> {
        if x.shape() != self.residual.shape() {
            return Err(Error::State(format!(
                "state holds shape {:?}, input has {:?}",
                self.residual.shape(),
                x.shape()
            )));
        }
        let corrected = x.add(&self.residual)?;
        let msg = compress(inner, &corrected, ae)?;
        let sent = decompress(&msg, ae)?;
        self.residual = corrected.sub(&sent)?;
        Ok(msg)
    }
}

/// Functional form of [`ErrorFeedbackState::step`].
pub fn error_feedback_step(
    state: &ErrorFeedbackState,
    x: &Tensor,
    inner: &CompressorSpec,
    ae: Option<&AeParams>,
) -> Result<(CompressedMessage, ErrorFeedbackState)> {
    let mut next = state.clone();
    let msg = next.step(x, inner, ae)?;
    Ok((msg, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{CompressorKind, Payload};
    use crate::tensor::{random_tensor, Distribution};

    #[test]
    fn identity_keeps_zero_residual() {
        let mut state = ErrorFeedbackState::new(&[3, 4]).unwrap();
        for seed in 0..5 {
            let x = random_tensor::<f32>(&[3, 4], seed, Distribution::Gaussian).unwrap();
            state.step(&x, &CompressorSpec::identity(), None).unwrap();
            assert!(state.residual().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn first_step_equals_plain_compression() {
        let x = random_tensor::<f32>(&[2, 8], 3, Distribution::Gaussian).unwrap();
        let spec = CompressorSpec::new(CompressorKind::Topk { k: 2 });
        let state = ErrorFeedbackState::new(&[2, 8]).unwrap();
        let (msg, _) = error_feedback_step(&state, &x, &spec, None).unwrap();
        assert_eq!(msg, compress(&spec, &x, None).unwrap());
    }

    /// Brute-force top-1 error feedback on a constant vector, in f64.
    fn oracle_sends(x: &[f64], steps: usize) -> Vec<usize> {
        let mut residual = vec![0.0; x.len()];
        let mut sent = Vec::new();
        for _ in 0..steps {
            let y: Vec<f64> = x.iter().zip(&residual).map(|(a, r)| a + r).collect();
            let mut best = 0;
            for i in 1..y.len() {
                if y[i].abs() > y[best].abs() {
                    best = i;
                }
            }
            residual = y.clone();
            residual[best] = 0.0;
            sent.push(best);
        }
        sent
    }

    fn sends(x: &[f32], steps: usize) -> Vec<usize> {
        let x = Tensor::new(vec![1, x.len()], x.to_vec()).unwrap();
        let spec = CompressorSpec::new(CompressorKind::Topk { k: 1 });
        let mut state = ErrorFeedbackState::new(x.shape()).unwrap();
        (0..steps)
            .map(|_| {
                let msg = state.step(&x, &spec, None).unwrap();
                let Payload::Sparse { indices, .. } = msg.payload else {
                    unreachable!()
                };
                indices[0] as usize
            })
            .collect()
    }

    #[test]
    fn near_equal_coordinates_all_sent_within_n_steps() {
        let x = [1.0f32, -0.9375, 0.875, 0.8125];
        let expected = oracle_sends(&[1.0, -0.9375, 0.875, 0.8125], 4);
        assert_eq!(expected, vec![0, 1, 2, 3]);
        assert_eq!(sends(&x, 4), expected);
    }

    #[test]
    fn spread_coordinates_need_more_steps() {
        // With a 4:1 magnitude spread the smallest coordinate first wins on
        // step 7, not within 4 steps.
        let x = [4.0f32, -3.0, 2.0, 1.0];
        let expected = oracle_sends(&[4.0, -3.0, 2.0, 1.0], 7);
        assert_eq!(expected, vec![0, 1, 0, 2, 1, 0, 3]);
        assert_eq!(sends(&x, 7), expected);
    }

    #[test]
    fn shape_mismatch_is_state_error() {
        let mut state = ErrorFeedbackState::new(&[2, 2]).unwrap();
        let x = Tensor::<f32>::zeros(&[4]).unwrap();
        assert!(matches!(
            state.step(&x, &CompressorSpec::identity(), None),
            Err(Error::State(_))
        ));
    }
}
