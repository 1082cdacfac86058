//! Convolution kernels over NCHW tensors.
//!
//! Both directions lower to im2col + GEMM. A transposed convolution is the
//! adjoint of a convolution whose "image" is the transposed convolution's
//! output, so the same column layout serves both.

use rayon::prelude::*;

use super::scalar::{gemm, Mat};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of a convolution from an image of `channels x height x width`
/// to an output grid of `out_h x out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if kh > height + 2 * padding {
            return Err(Error::dim(
                "height",
                format!("kernel {kh} exceeds padded height {}", height + 2 * padding),
            ));
        }
        if kw > width + 2 * padding {
            return Err(Error::dim(
                "width",
                format!("kernel {kw} exceeds padded width {}", width + 2 * padding),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            padding,
            out_h: (height + 2 * padding - kh) / stride + 1,
            out_w: (width + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Output extent of a transposed convolution.
pub fn conv_transpose_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if output_padding >= stride {
        return Err(Error::Config(format!(
            "output_padding {output_padding} must be below stride {stride}"
        )));
    }
    let full = (input - 1) * stride + kernel + output_padding;
    if full <= 2 * padding {
        return Err(Error::dim(
            "spatial",
            format!("transposed convolution output would be empty for input {input}"),
        ));
    }
    Ok(full - 2 * padding)
}

pub(crate) fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - pad;
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for (ow, d) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - pad;
                        *d = if iw < 0 || iw >= g.width as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back into `img`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let p = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - pad;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    let line = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    for (ow, &v) in line.iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - pad;
                        if iw >= 0 && iw < g.width as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_rank4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.rank() != 4 {
        return Err(Error::dim(
            format!("{what} rank"),
            format!("expected rank 4, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::dim(
                "bias axis 0",
                format!("expected [{channels}], got {:?}", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Geometry for `conv2d(input, weight)`; the weight is `[Cout, Cin, kh, kw]`.
pub fn conv2d_geom<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    check_rank4(input, "input")?;
    check_rank4(weight, "weight")?;
    let (c_in, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    if weight.shape()[1] != c_in {
        return Err(Error::dim(
            "weight axis 1",
            format!(
                "weight expects {} input channels, input has {c_in}",
                weight.shape()[1]
            ),
        ));
    }
    ConvGeom::new(c_in, h, w, weight.shape()[2], weight.shape()[3], stride, padding)
}

/// Geometry for `conv_transpose2d`, expressed as the adjoint convolution
/// from the transposed output back onto the input grid.
pub fn conv_transpose2d_geom<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<ConvGeom> {
    check_rank4(input, "input")?;
    check_rank4(weight, "weight")?;
    let (c_in, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    if weight.shape()[0] != c_in {
        return Err(Error::dim(
            "weight axis 0",
            format!(
                "weight expects {} input channels, input has {c_in}",
                weight.shape()[0]
            ),
        ));
    }
    let (c_out, kh, kw) = (weight.shape()[1], weight.shape()[2], weight.shape()[3]);
    let oh = conv_transpose_extent(h, kh, stride, padding, output_padding)?;
    let ow = conv_transpose_extent(w, kw, stride, padding, output_padding)?;
    let g = ConvGeom::new(c_out, oh, ow, kh, kw, stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok(g)
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (c, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = b.data()[c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], batch: usize, channels: usize) -> Vec<T> {
    let plane = dy.len() / (batch * channels);
    let mut db = vec![T::zero(); channels];
    for sample in dy.chunks(channels * plane) {
        for (c, chunk) in sample.chunks(plane).enumerate() {
            db[c] += chunk.iter().copied().sum::<T>();
        }
    }
    db
}

/// Sums per-sample partial results in sample order.
fn ordered_sum<T: Scalar>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    acc
}

/// Cross-correlation of `input [N,Cin,H,W]` with `weight [Cout,Cin,kh,kw]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv2d_geom(input, weight, stride, padding)?;
    let c_out = weight.shape()[0];
    check_bias(bias, c_out)?;
    Ok(conv2d_with(input, weight, bias, &g))
}

pub(crate) fn conv2d_with<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let n = input.shape()[0];
    let c_out = weight.shape()[0];
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); n * c_out * p];
    out.par_chunks_mut(c_out * p)
        .zip(input.data().par_chunks(g.image_len()))
        .for_each_init(
            || vec![T::zero(); k * p],
            |cols, (o, x)| {
                im2col(x, g, cols);
                gemm(c_out, k, p, Mat::Plain(weight.data()), Mat::Plain(cols), T::zero(), o);
                add_bias(o, bias, p);
            },
        );
    Tensor::from_vec(&[n, c_out, g.out_h, g.out_w], out).expect("conv output shape")
}

/// Gradients of `conv2d` given upstream `dy`.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    g: &ConvGeom,
    dy: &[T],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let n = input.shape()[0];
    let c_out = weight.shape()[0];
    let (k, p) = (g.col_rows(), g.col_cols());
    let db = bias_grad(dy, n, c_out);

    let mut dx = need_input.then(|| vec![T::zero(); input.numel()]);
    let dw_parts: Vec<Vec<T>> = match dx.as_mut() {
        Some(dx) => dx
            .par_chunks_mut(g.image_len())
            .zip(dy.par_chunks(c_out * p))
            .zip(input.data().par_chunks(g.image_len()))
            .map_init(
                || vec![T::zero(); k * p],
                |cols, ((dxi, dyi), xi)| {
                    gemm(k, c_out, p, Mat::Trans(weight.data()), Mat::Plain(dyi), T::zero(), cols);
                    col2im(cols, g, dxi);
                    if need_weight {
                        im2col(xi, g, cols);
                        let mut dw = vec![T::zero(); c_out * k];
                        gemm(c_out, p, k, Mat::Plain(dyi), Mat::Trans(cols), T::zero(), &mut dw);
                        dw
                    } else {
                        Vec::new()
                    }
                },
            )
            .collect(),
        None if need_weight => dy
            .par_chunks(c_out * p)
            .zip(input.data().par_chunks(g.image_len()))
            .map_init(
                || vec![T::zero(); k * p],
                |cols, (dyi, xi)| {
                    im2col(xi, g, cols);
                    let mut dw = vec![T::zero(); c_out * k];
                    gemm(c_out, p, k, Mat::Plain(dyi), Mat::Trans(cols), T::zero(), &mut dw);
                    dw
                },
            )
            .collect(),
        None => Vec::new(),
    };
    let dw = need_weight.then(|| ordered_sum(dw_parts, weight.numel()));
    (dx, dw, db)
}

/// Transposed convolution of `input [N,Cin,H,W]` with `weight [Cin,Cout,kh,kw]`.
///
/// Output extent is `(H-1)*stride - 2*padding + kh + output_padding`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_transpose2d_geom(input, weight, stride, padding, output_padding)?;
    check_bias(bias, weight.shape()[1])?;
    Ok(conv_transpose2d_with(input, weight, bias, &g))
}

pub(crate) fn conv_transpose2d_with<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let n = input.shape()[0];
    let c_in = input.shape()[1];
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); n * g.image_len()];
    out.par_chunks_mut(g.image_len())
        .zip(input.data().par_chunks(c_in * p))
        .for_each_init(
            || vec![T::zero(); k * p],
            |cols, (o, x)| {
                gemm(k, c_in, p, Mat::Trans(weight.data()), Mat::Plain(x), T::zero(), cols);
                col2im(cols, g, o);
                add_bias(o, bias, g.height * g.width);
            },
        );
    Tensor::from_vec(&[n, g.channels, g.height, g.width], out).expect("conv_transpose shape")
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    g: &ConvGeom,
    dy: &[T],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let n = input.shape()[0];
    let c_in = input.shape()[1];
    let (k, p) = (g.col_rows(), g.col_cols());
    let db = bias_grad(dy, n, g.channels);
    let mut dx = need_input.then(|| vec![T::zero(); input.numel()]);
    let mut dw_parts = Vec::new();
    if need_input || need_weight {
        let per_sample = |cols: &mut Vec<T>, dyi: &[T], xi: &[T], dxi: Option<&mut [T]>| {
            im2col(dyi, g, cols);
            if let Some(dxi) = dxi {
                gemm(c_in, k, p, Mat::Plain(weight.data()), Mat::Plain(cols), T::zero(), dxi);
            }
            if need_weight {
                let mut dw = vec![T::zero(); c_in * k];
                gemm(c_in, p, k, Mat::Plain(xi), Mat::Trans(cols), T::zero(), &mut dw);
                dw
            } else {
                Vec::new()
            }
        };
        dw_parts = match dx.as_mut() {
            Some(dx) => dx
                .par_chunks_mut(c_in * p)
                .zip(dy.par_chunks(g.image_len()))
                .zip(input.data().par_chunks(c_in * p))
                .map_init(
                    || vec![T::zero(); k * p],
                    |cols, ((dxi, dyi), xi)| per_sample(cols, dyi, xi, Some(dxi)),
                )
                .collect(),
            None => dy
                .par_chunks(g.image_len())
                .zip(input.data().par_chunks(c_in * p))
                .map_init(
                    || vec![T::zero(); k * p],
                    |cols, (dyi, xi)| per_sample(cols, dyi, xi, None),
                )
                .collect(),
        };
    }
    let dw = need_weight.then(|| ordered_sum(dw_parts, weight.numel()));
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Direct six-nested-loop cross-correlation.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        for s in 0..n {
            for o in 0..co {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[o]);
                        for c in 0..ci {
                            for a in 0..kh {
                                for bb in 0..kw {
                                    let ih = (i * stride + a) as isize - pad as isize;
                                    let iw = (j * stride + bb) as isize - pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                        acc += x.data()[((s * ci + c) * h + ih as usize) * wd + iw as usize]
                                            * w.data()[((o * ci + c) * kh + a) * kw + bb];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((s * co + o) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[2, 1, 5, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap(), x);
        assert_eq!(conv_transpose2d(&x, &w, Some(&b), 1, 0, 0).unwrap(), x);
    }

    #[test]
    fn strided_conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[4], -1.0, 1.0, &mut rng);
        let y = conv2d(&x, &w, Some(&b), 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
        let want = naive_conv(&x, &w, Some(&b), 2, 1);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, pad, h) in &[(1, 0, 5), (1, 1, 5), (2, 1, 5), (2, 1, 8), (3, 2, 9)] {
            let x = Tensor::<f64>::uniform(&[1, 2, h, h], -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
            let g = conv2d_geom(&x, &w, stride, pad).unwrap();
            let y = Tensor::<f64>::uniform(&[1, 3, g.out_h, g.out_w], -1.0, 1.0, &mut rng);
            let op = (h + 2 * pad - 3) % stride;
            let lhs = conv2d(&x, &w, None, stride, pad).unwrap().dot(&y).unwrap();
            let back = conv_transpose2d(&y, &w, None, stride, pad, op).unwrap();
            assert_eq!(back.shape(), x.shape());
            let rhs = x.dot(&back).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "stride {stride}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn stride_two_upsampling_doubles_extent() {
        let x = Tensor::<f64>::ones(&[1, 4, 4, 4]);
        let w = Tensor::<f64>::ones(&[4, 2, 3, 3]);
        let y = conv_transpose2d(&x, &w, None, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 8]);
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let x = Tensor::<f64>::ones(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::ones(&[1, 3, 3, 3]);
        match conv2d(&x, &w, None, 1, 0) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "weight axis 1"),
            other => panic!("unexpected {other:?}"),
        }
        let big = Tensor::<f64>::ones(&[1, 2, 9, 9]);
        let w2 = Tensor::<f64>::ones(&[1, 2, 9, 9]);
        assert!(conv2d(&x, &w2, None, 1, 0).is_err());
        assert!(conv2d(&big, &w2, None, 1, 0).is_ok());
        assert!(matches!(
            conv_transpose2d(&x, &Tensor::ones(&[2, 1, 3, 3]), None, 2, 1, 2),
            Err(Error::Config(_))
        ));
    }
}
