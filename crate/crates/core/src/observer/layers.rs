//! Building blocks: strided conv blocks, transposed conv blocks, and the
//! four-branch Inception block.

use rand_chacha::ChaCha8Rng;

use super::config::GN_EPS;
use crate::error::Result;
use crate::tensor::params::fan_in;
use crate::tensor::{Binding, Init, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

pub const INCEPTION_KERNELS: [usize; 4] = [3, 5, 7, 11];

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl Norm {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        groups: usize,
    ) -> Result<Self> {
        let gamma = store.add(
            format!("{prefix}.gamma"),
            Tensor::ones(&[channels]),
            Init::Constant(1.0),
        )?;
        let beta = store.add(
            format!("{prefix}.beta"),
            Tensor::zeros(&[channels]),
            Init::Constant(0.0),
        )?;
        Ok(Self {
            gamma,
            beta,
            groups,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        tape.group_norm(x, self.groups, b.var(self.gamma), b.var(self.beta), GN_EPS)
    }
}

/// Convolution weight and bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let shape = [c_out, c_in, kernel, kernel];
        let fi = fan_in(&shape);
        let weight = store.init(format!("{prefix}.weight"), &shape, Init::KaimingUniform, fi, rng)?;
        let bias = store.init(format!("{prefix}.bias"), &[c_out], Init::KaimingUniform, fi, rng)?;
        Ok(Self {
            weight,
            bias,
            kernel,
            padding: kernel / 2,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        b: &Binding,
        x: Var,
        stride: usize,
    ) -> Result<Var> {
        tape.conv2d(x, b.var(self.weight), Some(b.var(self.bias)), stride, self.padding)
    }
}

/// Conv -> GroupNorm -> LeakyReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Norm,
    pub stride: usize,
    pub slope: f64,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        groups: usize,
        slope: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, &format!("{prefix}.conv"), c_in, c_out, 3, rng)?,
            norm: Norm::new(store, &format!("{prefix}.norm"), c_out, groups)?,
            stride,
            slope,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, b, x, self.stride)?;
        let y = self.norm.forward(tape, b, y)?;
        tape.leaky_relu(y, self.slope)
    }
}

/// ConvTranspose -> GroupNorm -> LeakyReLU, or a bare transposed conv when
/// `norm` is absent.
#[derive(Clone, Debug)]
pub struct DeconvBlock {
    pub weight: ParamId,
    pub bias: ParamId,
    pub norm: Option<Norm>,
    pub stride: usize,
    pub output_padding: usize,
    pub slope: f64,
}

impl DeconvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        output_padding: usize,
        groups: Option<usize>,
        slope: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let shape = [c_in, c_out, 3, 3];
        let fi = fan_in(&shape);
        let weight = store.init(format!("{prefix}.deconv.weight"), &shape, Init::KaimingUniform, fi, rng)?;
        let bias = store.init(format!("{prefix}.deconv.bias"), &[c_out], Init::KaimingUniform, fi, rng)?;
        let norm = match groups {
            Some(g) => Some(Norm::new(store, &format!("{prefix}.norm"), c_out, g)?),
            None => None,
        };
        Ok(Self {
            weight,
            bias,
            norm,
            stride,
            output_padding,
            slope,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        let y = tape.conv_transpose2d(
            x,
            b.var(self.weight),
            Some(b.var(self.bias)),
            self.stride,
            1,
            self.output_padding,
        )?;
        match &self.norm {
            Some(norm) => {
                let y = norm.forward(tape, b, y)?;
                tape.leaky_relu(y, self.slope)
            }
            None => Ok(y),
        }
    }
}

/// 1x1 entry convolution feeding four same-padded branches (3, 5, 7, 11)
/// whose outputs are summed, then optionally GroupNorm and LeakyReLU.
#[derive(Clone, Debug)]
pub struct InceptionBlock {
    pub entry: Conv,
    pub branches: Vec<Conv>,
    pub norm: Option<Norm>,
    pub slope: Option<f64>,
    pub c_in: usize,
    pub c_hidden: usize,
    pub c_out: usize,
}

impl InceptionBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        groups: Option<usize>,
        slope: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let c_hidden = (c_out / 2).max(1);
        let entry = Conv::new(store, &format!("{prefix}.entry"), c_in, c_hidden, 1, rng)?;
        let branches = INCEPTION_KERNELS
            .iter()
            .map(|&k| Conv::new(store, &format!("{prefix}.branch{k}"), c_hidden, c_out, k, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = match groups {
            Some(g) => Some(Norm::new(store, &format!("{prefix}.norm"), c_out, g)?),
            None => None,
        };
        Ok(Self {
            entry,
            branches,
            norm,
            slope,
            c_in,
            c_hidden,
            c_out,
        })
    }

    /// Linear block whose entry is the identity (`c_hidden = channels`), whose
    /// 3x3 branch passes the centre tap through, and whose other branches and
    /// biases are zero.
    pub fn identity<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
    ) -> Result<Self> {
        let eye = |k: usize| {
            let mut w = Tensor::<T>::zeros(&[channels, channels, k, k]);
            if k == 1 || k == 3 {
                let c = k / 2;
                for i in 0..channels {
                    w.data_mut()[((i * channels + i) * k + c) * k + c] = T::one();
                }
            }
            w
        };
        let mk = |store: &mut ParamStore<T>, name: String, k: usize| -> Result<Conv> {
            let weight = store.add(format!("{name}.weight"), eye(k), Init::Constant(0.0))?;
            let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[channels]), Init::Constant(0.0))?;
            Ok(Conv {
                weight,
                bias,
                kernel: k,
                padding: k / 2,
            })
        };
        let entry = mk(store, format!("{prefix}.entry"), 1)?;
        let branches = INCEPTION_KERNELS
            .iter()
            .map(|&k| mk(store, format!("{prefix}.branch{k}"), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entry,
            branches,
            norm: None,
            slope: None,
            c_in: channels,
            c_hidden: channels,
            c_out: channels,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        let h = self.entry.forward(tape, b, x, 1)?;
        let mut acc: Option<Var> = None;
        for branch in &self.branches {
            let y = branch.forward(tape, b, h, 1)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        let mut y = acc.expect("four branches");
        if let Some(norm) = &self.norm {
            y = norm.forward(tape, b, y)?;
        }
        if let Some(slope) = self.slope {
            y = tape.leaky_relu(y, slope)?;
        }
        Ok(y)
    }

    /// The single `[c_out, c_in, 11, 11]` kernel equal to the entry conv
    /// composed with the summed branches (biases excluded).
    pub fn effective_kernel<T: Scalar>(&self, store: &ParamStore<T>) -> Tensor<f64> {
        let kmax = *INCEPTION_KERNELS.last().unwrap();
        let mut summed = vec![0.0; self.c_out * self.c_hidden * kmax * kmax];
        for branch in &self.branches {
            let w = store.value(branch.weight);
            let k = branch.kernel;
            let off = (kmax - k) / 2;
            for o in 0..self.c_out {
                for h in 0..self.c_hidden {
                    for i in 0..k {
                        for j in 0..k {
                            summed[((o * self.c_hidden + h) * kmax + i + off) * kmax + j + off] +=
                                w.data()[((o * self.c_hidden + h) * k + i) * k + j].as_f64();
                        }
                    }
                }
            }
        }
        let entry = store.value(self.entry.weight); // [c_hidden, c_in, 1, 1]
        let mut eff = vec![0.0; self.c_out * self.c_in * kmax * kmax];
        for o in 0..self.c_out {
            for i in 0..self.c_in {
                for h in 0..self.c_hidden {
                    let e = entry.data()[h * self.c_in + i].as_f64();
                    if e == 0.0 {
                        continue;
                    }
                    let src = &summed[(o * self.c_hidden + h) * kmax * kmax..][..kmax * kmax];
                    let dst = &mut eff[(o * self.c_in + i) * kmax * kmax..][..kmax * kmax];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += e * s;
                    }
                }
            }
        }
        Tensor::from_vec(&[self.c_out, self.c_in, kmax, kmax], eff).expect("effective kernel")
    }
}

/// A chain of Inception blocks.
#[derive(Clone, Debug)]
pub struct InceptionStack {
    pub blocks: Vec<InceptionBlock>,
}

impl InceptionStack {
    /// `count` blocks; the first maps `c_in -> c_mid`, the last maps to `c_out`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        count: usize,
        c_in: usize,
        c_mid: usize,
        c_out: usize,
        groups: &dyn Fn(usize) -> usize,
        slope: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(count);
        for i in 0..count {
            let cin = if i == 0 { c_in } else { c_mid };
            let cout = if i + 1 == count { c_out } else { c_mid };
            blocks.push(InceptionBlock::new(
                store,
                &format!("{prefix}.block{i}"),
                cin,
                cout,
                Some(groups(cout)),
                Some(slope),
                rng,
            )?);
        }
        Ok(Self { blocks })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        self.blocks.iter().try_fold(x, |h, blk| blk.forward(tape, b, h))
    }
}
