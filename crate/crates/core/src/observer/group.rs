//! Folding of `delta` consecutive frames into the channel axis.
//!
//! For a row-major `[.., T, C, H, W]` tensor the frame `i*delta + j` lands in
//! group `i`, channel block `j`, which is a pure reshape.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `[.., T, C, H, W] -> [.., T/delta, C*delta, H, W]`.
pub fn group<T: Scalar>(y: &Tensor<T>, delta: usize) -> Result<Tensor<T>> {
    let r = y.rank();
    if r < 4 {
        return Err(Error::dim("rank", "grouping needs [.., T, C, H, W]"));
    }
    let (t, c) = (y.shape()[r - 4], y.shape()[r - 3]);
    if delta == 0 || t % delta != 0 {
        return Err(Error::Grouping { t, delta });
    }
    let mut shape = y.shape().to_vec();
    shape[r - 4] = t / delta;
    shape[r - 3] = c * delta;
    y.clone().reshape(&shape)
}

/// Inverse of [`group`]: `[.., G, C*delta, H, W] -> [.., G*delta, C, H, W]`.
pub fn degroup<T: Scalar>(y: &Tensor<T>, delta: usize) -> Result<Tensor<T>> {
    let r = y.rank();
    if r < 4 {
        return Err(Error::dim("rank", "degrouping needs [.., G, C*delta, H, W]"));
    }
    let (g, cd) = (y.shape()[r - 4], y.shape()[r - 3]);
    if delta == 0 || cd % delta != 0 {
        return Err(Error::dim(
            "channel",
            format!("{cd} channels are not divisible by delta {delta}"),
        ));
    }
    let mut shape = y.shape().to_vec();
    shape[r - 4] = g * delta;
    shape[r - 3] = cd / delta;
    y.clone().reshape(&shape)
}
