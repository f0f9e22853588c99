use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Permutation of `len` positions drawn from `seed`; seed 0 is the identity.
pub fn shuffle_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    if seed != 0 {
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    perm
}

/// Moves pixels with one permutation of the H·W positions, shared by every
/// frame and channel: output position `i` takes input position `perm[i]`.
/// Works on `…×H×W` tensors with at least two axes.
pub fn spatial_shuffle<T: Scalar>(clip: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let shape = clip.shape();
    if shape.len() < 2 {
        return shape_err(format!("spatial shuffle needs …×H×W, got {shape:?}"));
    }
    let hw = shape[shape.len() - 2] * shape[shape.len() - 1];
    let perm = shuffle_permutation(hw, seed);
    let mut out = clip.clone();
    for (dst, src) in out.data_mut().chunks_mut(hw).zip(clip.data().chunks(hw)) {
        for (d, &p) in dst.iter_mut().zip(&perm) {
            *d = src[p];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_zero_is_identity() {
        let x = Tensor::<f32>::from_fn(vec![3, 4, 5, 5], |i| i as f32);
        assert_eq!(spatial_shuffle(&x, 0).unwrap(), x);
    }

    #[test]
    fn time_series_and_multisets_survive() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 4, 4], |i| ((i * 37) % 23) as f32);
        let y = spatial_shuffle(&x, 99).unwrap();
        let perm = shuffle_permutation(16, 99);
        for c in 0..2 {
            for t in 0..3 {
                let base = (c * 3 + t) * 16;
                let mut a = x.data()[base..base + 16].to_vec();
                let mut b = y.data()[base..base + 16].to_vec();
                for (i, &p) in perm.iter().enumerate() {
                    assert_eq!(b[i], a[p]);
                }
                a.sort_by(f32::total_cmp);
                b.sort_by(f32::total_cmp);
                assert_eq!(a, b);
            }
        }
    }
}
