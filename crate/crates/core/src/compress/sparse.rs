use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::message::{CompressedMessage, Payload};
use crate::error::{Error, Result};
use crate::tensor::{SplitMix64, Tensor};

fn check_k(x: &Tensor, k: usize) -> Result<()> {
    if k == 0 || k > x.numel() {
        return Err(Error::Parameter(format!(
            "k = {k} outside 1..={} for a tensor of shape {:?}",
            x.numel(),
            x.shape()
        )));
    }
    if x.numel() > u32::MAX as usize + 1 {
        return Err(Error::Parameter("tensor too large for 32-bit indices".into()));
    }
    Ok(())
}

fn gather(x: &Tensor, mut indices: Vec<u32>) -> CompressedMessage {
    indices.sort_unstable();
    let values = indices.iter().map(|&i| x.data()[i as usize]).collect();
    CompressedMessage {
        shape: x.shape().to_vec(),
        payload: Payload::Sparse { values, indices },
    }
}

/// Keeps the `k` entries of largest magnitude over the whole tensor.
///
/// Equal magnitudes are ordered by flat index, lower first.
pub fn topk_compress(x: &Tensor, k: usize) -> Result<CompressedMessage> {
    check_k(x, k)?;
    let data = x.data();
    let by_rank = |a: &u32, b: &u32| -> Ordering {
        let (va, vb) = (data[*a as usize].abs(), data[*b as usize].abs());
        vb.total_cmp(&va).then(a.cmp(b))
    };
    let mut order: Vec<u32> = (0..data.len() as u32).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
    }
    Ok(gather(x, order))
}

/// Keeps `k` distinct positions drawn uniformly without replacement.
///
/// Positions come from Floyd's sampling over a [`SplitMix64`] seeded with
/// `seed`, so the selection depends only on `(numel, k, seed)`.
pub fn randk_compress(x: &Tensor, k: usize, seed: u64) -> Result<CompressedMessage> {
    check_k(x, k)?;
    let n = x.numel() as u64;
    let mut rng = SplitMix64::new(seed);
    let mut chosen = BTreeSet::new();
    for j in n - k as u64..n {
        let t = rng.below(j + 1);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    Ok(gather(x, chosen.into_iter().map(|i| i as u32).collect()))
}

/// Scatters sparse values into a zero tensor of the original shape.
pub fn sparse_decompress(msg: &CompressedMessage) -> Result<Tensor> {
    let Payload::Sparse { values, indices } = &msg.payload else {
        return Err(Error::Format("expected a sparse message".into()));
    };
    msg.validate()?;
    let mut data = vec![0.0f32; msg.numel()];
    for (&i, &v) in indices.iter().zip(values) {
        data[i as usize] = v;
    }
    Tensor::new(msg.shape.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{random_tensor, Distribution};

    fn kept(msg: &CompressedMessage) -> (Vec<u32>, Vec<f32>) {
        match &msg.payload {
            Payload::Sparse { values, indices } => (indices.clone(), values.clone()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn topk_hand_example() {
        let x = Tensor::new(vec![4], vec![1.0, -3.0, 0.5, 2.0]).unwrap();
        let (idx, vals) = kept(&topk_compress(&x, 2).unwrap());
        assert_eq!(idx, vec![1, 3]);
        assert_eq!(vals, vec![-3.0, 2.0]);
    }

    #[test]
    fn topk_ties_prefer_lower_index() {
        let x = Tensor::new(vec![5], vec![1.0, -2.0, 2.0, 0.0, -2.0]).unwrap();
        let (idx, _) = kept(&topk_compress(&x, 2).unwrap());
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn topk_matches_full_sort() {
        let x = random_tensor::<f32>(&[100], 77, Distribution::Gaussian).unwrap();
        let mut order: Vec<usize> = (0..100).collect();
        order.sort_by(|&a, &b| x.data()[b].abs().partial_cmp(&x.data()[a].abs()).unwrap());
        let mut expected: Vec<u32> = order[..10].iter().map(|&i| i as u32).collect();
        expected.sort();
        assert_eq!(kept(&topk_compress(&x, 10).unwrap()).0, expected);
    }

    #[test]
    fn full_k_roundtrips() {
        let x = random_tensor::<f32>(&[3, 7], 5, Distribution::Uniform).unwrap();
        assert_eq!(sparse_decompress(&topk_compress(&x, 21).unwrap()).unwrap(), x);
        for seed in [0, 1, 99] {
            assert_eq!(sparse_decompress(&randk_compress(&x, 21, seed).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn k_out_of_range() {
        let x = Tensor::<f32>::zeros(&[4]).unwrap();
        assert!(matches!(topk_compress(&x, 0), Err(Error::Parameter(_))));
        assert!(matches!(randk_compress(&x, 5, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn randk_is_deterministic_and_distinct() {
        let x = random_tensor::<f32>(&[50], 1, Distribution::Gaussian).unwrap();
        let a = randk_compress(&x, 20, 42).unwrap();
        assert_eq!(a, randk_compress(&x, 20, 42).unwrap());
        a.validate().unwrap();
        assert_ne!(kept(&a).0, kept(&randk_compress(&x, 20, 43).unwrap()).0);
    }

    #[test]
    fn randk_single_draw_is_uniform() {
        // 10^4 draws of k=1 from 10 slots: each count should sit within
        // 3 sigma of 1000, sigma = sqrt(10^4 * 0.1 * 0.9) = 30.
        let x = Tensor::new(vec![10], (1..=10).map(|v| v as f32).collect()).unwrap();
        let mut counts = [0usize; 10];
        for seed in 0..10_000u64 {
            counts[kept(&randk_compress(&x, 1, seed).unwrap()).0[0] as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 90.0, "{counts:?}");
        }
    }

    #[test]
    fn decompressed_nonzeros_are_exactly_kept_set() {
        let x = random_tensor::<f32>(&[8, 8], 3, Distribution::Gaussian).unwrap();
        let msg = topk_compress(&x, 9).unwrap();
        let y = sparse_decompress(&msg).unwrap();
        let nz: Vec<u32> = (0..64u32).filter(|&i| y.data()[i as usize] != 0.0).collect();
        assert_eq!(nz, kept(&msg).0);
    }
}
