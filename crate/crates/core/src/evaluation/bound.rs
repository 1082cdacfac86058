//! Capacity terms of the covering-number generalization bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observer::config::encoder_stride;
use crate::observer::layers::InceptionBlock;
use crate::observer::{ObserverModel, Projection};
use crate::tensor::{spectral_norm, OperatorGeometry, Tensor};

/// Lipschitz constants of the activations in use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::LeakyRelu => 1.0,
            Activation::Sigmoid => 0.25,
            Activation::Identity => 1.0,
        }
    }
}

/// Norm bounds and geometry of one convolutional layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBound {
    /// Frobenius norm of the kernel.
    pub a: f64,
    /// Spectral norm of the induced linear map.
    pub s: f64,
    pub rho: f64,
    /// Number of kernels (output channels).
    pub c: f64,
    /// Entries per kernel (`C_in * kh * kw`).
    pub r: f64,
    /// Input dimension (`C_in * H * W`).
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Main-path layers in order; the entry at `a_index` is the `A` layer
    /// and only its `rho` and `s` are used from it.
    pub layers: Vec<LayerBound>,
    pub a_index: usize,
    pub d_a: f64,
    pub a_a: f64,
    pub s_a: f64,
    /// The `B` shortcut, absent when `B` is disabled.
    pub vine: Option<LayerBound>,
    /// Encoder layers feeding the shortcut.
    pub n_s: usize,
    /// Training sample count.
    pub n: f64,
    /// Lipschitz constant of the loss.
    pub eta: f64,
    /// Upper bound of the loss.
    pub m: f64,
    /// Confidence parameter.
    pub delta: f64,
    /// Frobenius norm of the training inputs.
    pub x_frob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    #[serde(rename = "R_S")]
    pub r_s: f64,
    #[serde(rename = "R_V")]
    pub r_v: f64,
    #[serde(rename = "R")]
    pub r: f64,
    /// `16 n^{-5/8} (||X||_F R / eta)^{1/4}`.
    #[serde(rename = "term")]
    pub rademacher_term: f64,
    /// Twice the Rademacher term plus `M sqrt(log(1/delta) / 2n)`.
    pub bound_gap: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.a_index >= self.layers.len() {
            return Err(Error::Config("bound inputs need the layer list and the A position".into()));
        }
        if self.n_s > self.layers.len() {
            return Err(Error::Config("encoder depth exceeds the layer list".into()));
        }
        if self.n.is_nan() || self.n < 1.0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.m > 0.0 && self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("eta and M must be positive and delta in (0, 1)".into()));
        }
        let nums = self
            .layers
            .iter()
            .chain(self.vine.iter())
            .flat_map(|l| [l.a, l.s, l.rho, l.c, l.r, l.d])
            .chain([self.d_a, self.a_a, self.s_a, self.x_frob]);
        for v in nums {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("bound input {v} is not a finite nonnegative number")));
            }
        }
        Ok(())
    }
}

fn layer_term(l: &LayerBound) -> f64 {
    if l.a == 0.0 {
        return 0.0;
    }
    l.c * l.c * l.r * l.r * l.a * (l.d / l.c).sqrt() / l.s
}

/// `16 n^{-5/8} (||X||_F R / eta)^{1/4}`.
pub fn rademacher_term(n: f64, x_frob: f64, r: f64, eta: f64) -> f64 {
    16.0 * n.powf(-5.0 / 8.0) * (x_frob * r / eta).powf(0.25)
}

pub fn bound_diagnostics(inp: &BoundInputs) -> Result<BoundDiagnostics> {
    inp.validate()?;
    let l_s = inp.layers.len();
    let prod: f64 = inp.layers.iter().map(|l| l.rho * l.s).product();
    let mut sum = if inp.a_a == 0.0 {
        0.0
    } else {
        inp.d_a.powi(4) * inp.a_a / inp.s_a
    };
    // the layer sum runs to L_S - 1
    for (i, l) in inp.layers.iter().enumerate().take(l_s - 1) {
        if i != inp.a_index {
            sum += layer_term(l);
        }
    }
    let r_s = 2.0 * prod * sum * (l_s * l_s) as f64;
    let r_v = match &inp.vine {
        Some(b) => {
            let enc: f64 = inp.layers[..inp.n_s].iter().map(|l| l.rho * l.s).product();
            let inner = if b.a == 0.0 {
                0.0
            } else {
                b.rho * b.c * b.c * b.r * b.r * b.a * (b.d / b.c).sqrt()
            };
            2.0 * enc * inner
        }
        None => 0.0,
    };
    let r = (r_s.sqrt() + r_v.sqrt()).powi(2);
    let term = rademacher_term(inp.n, inp.x_frob, r, inp.eta);
    let gap = 2.0 * term + inp.m * ((1.0 / inp.delta).ln() / (2.0 * inp.n)).sqrt();
    let out = BoundDiagnostics {
        r_s,
        r_v,
        r,
        rademacher_term: term,
        bound_gap: gap,
    };
    if ![r_s, r_v, r, term, gap].iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("bound diagnostics overflowed: {out:?}")));
    }
    Ok(out)
}

/// Loss and data constants that are not part of the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSettings {
    pub n: f64,
    pub eta: f64,
    pub m: f64,
    pub delta: f64,
    pub x_frob: f64,
}

fn conv_layer(
    weight: &Tensor<f64>,
    geom: OperatorGeometry,
    rho: f64,
    seed: u64,
) -> Result<LayerBound> {
    let sh = weight.shape();
    let s = spectral_norm(weight, geom, seed)?.sigma;
    Ok(LayerBound {
        a: weight.frobenius(),
        s,
        rho,
        c: sh[0] as f64,
        r: (sh[1] * sh[2] * sh[3]) as f64,
        d: (sh[1] * geom.height * geom.width) as f64,
    })
}

fn inception_layer(
    blk: &InceptionBlock,
    model: &ObserverModel<f64>,
    hw: (usize, usize),
    seed: u64,
) -> Result<LayerBound> {
    let eff = blk.effective_kernel(&model.store);
    let geom = OperatorGeometry {
        height: hw.0,
        width: hw.1,
        stride: 1,
        padding: eff.shape()[2] / 2,
    };
    let rho = if blk.slope.is_some() {
        Activation::LeakyRelu
    } else {
        Activation::Identity
    };
    conv_layer(&eff, geom, rho.lipschitz(), seed)
}

/// Collects per-layer norms of `model`, collapsing each Inception block to
/// its composed single kernel. Decoder layers use the adjoint convolution,
/// which has the same spectral norm.
pub fn bound_inputs(model: &ObserverModel<f64>, settings: BoundSettings, seed: u64) -> Result<BoundInputs> {
    let cfg = &model.config;
    let plan = cfg.spatial_plan();
    let latent = cfg.latent_hw();
    let mut layers = Vec::new();
    let mut k = seed;
    let mut next = || {
        k += 1;
        k
    };
    for (i, blk) in model.encoder.iter().enumerate() {
        let (h, w) = plan[i];
        let geom = OperatorGeometry {
            height: h,
            width: w,
            stride: encoder_stride(i),
            padding: 1,
        };
        let wt = model.store.value(blk.conv.weight);
        layers.push(conv_layer(wt, geom, Activation::LeakyRelu.lipschitz(), next())?);
    }
    for blk in model.h_inv.blocks.iter().chain(&model.t_fwd.blocks) {
        layers.push(inception_layer(blk, model, latent, next())?);
    }
    let a = model.a_tensor();
    let a_index = layers.len();
    let s_a = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    layers.push(LayerBound {
        a: a.frobenius(),
        s: s_a,
        rho: Activation::Identity.lipschitz(),
        c: 1.0,
        r: 1.0,
        d: a.numel() as f64,
    });
    for blk in model.t_inv.blocks.iter().chain(&model.h_fwd.blocks) {
        layers.push(inception_layer(blk, model, latent, next())?);
    }
    for (d, blk) in model.decoder.iter().enumerate() {
        let e = cfg.n_s - 1 - d;
        let (h, w) = plan[e];
        let wt = model.store.value(blk.weight);
        // [C_in, C_out, k, k] acts as the adjoint of a conv on the output grid
        let adj = OperatorGeometry {
            height: h,
            width: w,
            stride: blk.stride,
            padding: 1,
        };
        let s = spectral_norm(wt, adj, next())?.sigma;
        let sh = wt.shape();
        let (hi, wi) = plan[e + 1];
        let rho = if blk.norm.is_some() {
            Activation::LeakyRelu
        } else {
            Activation::Identity
        };
        layers.push(LayerBound {
            a: wt.frobenius(),
            s,
            rho: rho.lipschitz(),
            c: sh[1] as f64,
            r: (sh[0] * sh[2] * sh[3]) as f64,
            d: (sh[0] * hi * wi) as f64,
        });
    }
    let vine = match &model.b {
        Projection::None => None,
        Projection::Conv(c) => {
            let wt = model.store.value(c.weight);
            let geom = OperatorGeometry {
                height: latent.0,
                width: latent.1,
                stride: 1,
                padding: c.padding,
            };
            Some(conv_layer(wt, geom, Activation::Identity.lipschitz(), next())?)
        }
        Projection::Inception(blk) => Some(inception_layer(blk, model, latent, next())?),
    };
    Ok(BoundInputs {
        layers,
        a_index,
        d_a: a.numel() as f64,
        a_a: a.frobenius(),
        s_a,
        vine,
        n_s: cfg.n_s,
        n: settings.n,
        eta: settings.eta,
        m: settings.m,
        delta: settings.delta,
        x_frob: settings.x_frob,
    })
}
