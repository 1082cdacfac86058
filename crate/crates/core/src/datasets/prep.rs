use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("normalization range [{lo}, {hi}] is empty")));
    }
    Ok(())
}

/// Affine map of `[lo, hi]` onto `[0, 1]`.
pub fn normalize<T: Scalar>(raw: &Tensor<T>, lo: f64, hi: f64) -> Result<Tensor<T>> {
    check_range(lo, hi)?;
    let (lo, span) = (T::of(lo), T::of(hi - lo));
    Ok(raw.map(|v| (v - lo) / span))
}

/// Inverse of [`normalize`].
pub fn denormalize<T: Scalar>(x: &Tensor<T>, lo: f64, hi: f64) -> Result<Tensor<T>> {
    check_range(lo, hi)?;
    let (lo, span) = (T::of(lo), T::of(hi - lo));
    Ok(x.map(|v| v * span + lo))
}

/// How to cut a dataset into train, validation and test parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Shares summing to one; rounding leftovers go to the training part.
    Fractions([f64; 3]),
    /// Absolute sizes; samples beyond their sum are left out.
    Counts([usize; 3]),
}

/// Shuffled, disjoint index sets `[train, val, test]` over `n` samples.
pub fn split(n: usize, how: Split, seed: u64) -> Result<[Vec<usize>; 3]> {
    let sizes = match how {
        Split::Fractions(f) => {
            if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("split fractions {f:?} must be in [0,1] and sum to 1")));
            }
            let val = (f[1] * n as f64).floor() as usize;
            let test = (f[2] * n as f64).floor() as usize;
            [n - val - test, val, test]
        }
        Split::Counts(c) => {
            if c.iter().sum::<usize>() > n {
                return Err(Error::Config(format!("split counts {c:?} exceed {n} samples")));
            }
            c
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(sizes[0]);
    let (val, rest) = rest.split_at(sizes[1]);
    let test = &rest[..sizes[2]];
    Ok([train.to_vec(), val.to_vec(), test.to_vec()])
}
