use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::{conv2d_with, conv_transpose2d_with, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

pub const POWER_MAX_ITERS: usize = 200;
pub const POWER_TOL: f64 = 1e-4;

/// Input grid on which a convolution weight acts as a linear operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperatorGeometry {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value of `x -> conv2d(x, weight)` on the given grid,
/// by power iteration on the normal operator.
///
/// `weight` is `[Cout, Cin, kh, kw]`. Returns the best estimate with
/// `converged = false` if the tolerance is not reached in time.
pub fn spectral_norm(
    weight: &Tensor<f64>,
    geom: OperatorGeometry,
    seed: u64,
) -> Result<SpectralEstimate> {
    if weight.rank() != 4 {
        return Err(Error::dim("weight rank", "expected [Cout, Cin, kh, kw]"));
    }
    let g = ConvGeom::new(
        weight.shape()[1],
        geom.height,
        geom.width,
        weight.shape()[2],
        weight.shape()[3],
        geom.stride,
        geom.padding,
    )?;
    let shape = [1, g.channels, g.height, g.width];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Tensor::<f64>::uniform(&shape, -1.0, 1.0, &mut rng);
    let norm = v.frobenius();
    v = v.map(|x| x / norm);

    let mut sigma = 0.0;
    for it in 1..=POWER_MAX_ITERS {
        let u = conv2d_with(&v, weight, None, &g);
        let next = u.frobenius();
        let w = conv_transpose2d_with(&u, weight, None, &g);
        let wn = w.frobenius();
        if wn == 0.0 {
            return Ok(SpectralEstimate {
                sigma: 0.0,
                iterations: it,
                converged: true,
            });
        }
        v = w.map(|x| x / wn);
        if it > 1 && (next - sigma).abs() <= POWER_TOL * next {
            return Ok(SpectralEstimate {
                sigma: next,
                iterations: it,
                converged: true,
            });
        }
        sigma = next;
    }
    Ok(SpectralEstimate {
        sigma,
        iterations: POWER_MAX_ITERS,
        converged: false,
    })
}
