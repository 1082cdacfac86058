//! Pixel error and structural similarity metrics.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-frame values and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Framewise {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl Framewise {
    fn from_frames(per_frame: Vec<f64>) -> Self {
        let mean = per_frame.iter().sum::<f64>() / per_frame.len().max(1) as f64;
        Self { per_frame, mean }
    }
}

/// `(samples, frames, channels, pixels per channel)` of a `[T, C, H, W]` or
/// `[N, T, C, H, W]` sequence.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [t, c, h, w] => Ok((1, t, c, h * w)),
        [n, t, c, h, w] => Ok((n, t, c, h * w)),
        _ => Err(Error::dim("sequence", format!("expected [N,] T, C, H, W, got {shape:?}"))),
    }
}

fn framewise<T: Scalar>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
    f: impl Fn(f64) -> f64,
) -> Result<Framewise> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(
            "sequence",
            format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
        ));
    }
    let (n, t, c, hw) = layout(pred.shape())?;
    let frame = c * hw;
    let mut per = vec![0.0; t];
    for s in 0..n {
        for (k, acc) in per.iter_mut().enumerate() {
            let off = (s * t + k) * frame;
            let p = &pred.data()[off..off + frame];
            let g = &truth.data()[off..off + frame];
            let sum: f64 = p.iter().zip(g).map(|(a, b)| f(a.as_f64() - b.as_f64())).sum();
            *acc += sum / frame as f64;
        }
    }
    Ok(Framewise::from_frames(per.into_iter().map(|v| v / n as f64).collect()))
}

/// Per-pixel mean squared error of every frame index, averaged over samples.
pub fn mse<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<Framewise> {
    framewise(pred, truth, |e| e * e)
}

/// Per-pixel mean absolute error of every frame index, averaged over samples.
pub fn mae<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<Framewise> {
    framewise(pred, truth, f64::abs)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ssim {
    pub value: f64,
    /// The frame was smaller than the window and global statistics were used.
    pub global: bool,
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean local SSIM of two `h x w` frames with an 11x11 Gaussian window
/// (sigma 1.5) over valid positions; frames smaller than the window use
/// global statistics.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> Result<Ssim> {
    if a.len() != h * w || b.len() != h * w || h == 0 || w == 0 {
        return Err(Error::dim("frame", format!("expected {h}x{w} pixels")));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = (h * w) as f64;
        let mx = a.iter().sum::<f64>() / n;
        let my = b.iter().sum::<f64>() / n;
        let vx = a.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = b.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = a.iter().zip(b).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        return Ok(Ssim {
            value: ssim_formula(mx, my, vx, vy, cxy, c1, c2),
            global: true,
        });
    }
    let g = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    // separable filtering: rows first, then columns
    let filter = |img: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut rows = vec![0.0; h * ow];
        for i in 0..h {
            for j in 0..ow {
                rows[i * ow + j] = (0..SSIM_WINDOW).map(|k| g[k] * img(i * w + j + k)).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                out[i * ow + j] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(i + k) * ow + j]).sum();
            }
        }
        out
    };
    let mx = filter(&|i| a[i]);
    let my = filter(&|i| b[i]);
    let xx = filter(&|i| a[i] * a[i]);
    let yy = filter(&|i| b[i] * b[i]);
    let xy = filter(&|i| a[i] * b[i]);
    let total: f64 = (0..oh * ow)
        .map(|p| {
            let (ux, uy) = (mx[p], my[p]);
            ssim_formula(ux, uy, xx[p] - ux * ux, yy[p] - uy * uy, xy[p] - ux * uy, c1, c2)
        })
        .sum();
    Ok(Ssim {
        value: total / (oh * ow) as f64,
        global: false,
    })
}

/// SSIM of every frame index, averaged over samples and channels.
pub fn ssim_framewise<T: Scalar>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
    data_range: f64,
) -> Result<(Framewise, bool)> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim("sequence", "prediction and truth shapes differ"));
    }
    let (n, t, c, _) = layout(pred.shape())?;
    let r = pred.rank();
    let (h, w) = (pred.shape()[r - 2], pred.shape()[r - 1]);
    let mut per = vec![0.0; t];
    let mut global = false;
    let conv = |x: &[T]| x.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    for s in 0..n {
        for (k, acc) in per.iter_mut().enumerate() {
            for ch in 0..c {
                let off = ((s * t + k) * c + ch) * h * w;
                let res = ssim(
                    &conv(&pred.data()[off..off + h * w]),
                    &conv(&truth.data()[off..off + h * w]),
                    h,
                    w,
                    data_range,
                )?;
                global |= res.global;
                *acc += res.value;
            }
        }
    }
    let per = per.into_iter().map(|v| v / (n * c) as f64).collect();
    Ok((Framewise::from_frames(per), global))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn constant_offset() {
        let p = Tensor::<f64>::full(&[3, 1, 4, 4], 0.7);
        let t = Tensor::<f64>::full(&[3, 1, 4, 4], 0.2);
        assert!((mse(&p, &t).unwrap().mean - 0.25).abs() < 1e-15);
        assert!((mae(&p, &t).unwrap().mean - 0.5).abs() < 1e-15);
        assert_eq!(mse(&t, &t).unwrap().mean, 0.0);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<f64> = (0..256).map(|_| rng.gen()).collect();
        assert!((ssim(&a, &a, 16, 16, 1.0).unwrap().value - 1.0).abs() < 1e-9);
        let zeros = vec![0.0; 256];
        let ones = vec![1.0; 256];
        let c1 = 1e-4;
        let s = ssim(&zeros, &ones, 16, 16, 1.0).unwrap();
        assert!((s.value - c1 / (1.0 + c1)).abs() < 1e-12);
        let small = ssim(&zeros[..64], &ones[..64], 8, 8, 1.0).unwrap();
        assert!(small.global);
    }

    #[test]
    fn ssim_matches_direct_formula() {
        // brute-force weighted statistics at every valid window position
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..256).map(|_| rng.gen()).collect();
        let b: Vec<f64> = a.iter().map(|v| 0.8 * v + 0.1 * rng.gen::<f64>() + 0.05).collect();
        let g = gaussian_window();
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for u in 0..11 {
                    for v in 0..11 {
                        let wgt = g[u] * g[v];
                        let (x, y) = (a[(i + u) * 16 + j + v], b[(i + u) * 16 + j + v]);
                        mx += wgt * x;
                        my += wgt * y;
                        xx += wgt * x * x;
                        yy += wgt * y * y;
                        xy += wgt * x * y;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * (xy - mx * my) + c2))
                    / ((mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2));
            }
        }
        let got = ssim(&a, &b, 16, 16, 1.0).unwrap().value;
        assert!((got - total / 36.0).abs() < 1e-12);
        let shifted: Vec<f64> = b.iter().map(|v| v + 0.2).collect();
        assert!(ssim(&a, &shifted, 16, 16, 1.0).unwrap().value < got);
    }
}
