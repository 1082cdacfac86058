use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{encoder_stride, AConstraint, BVariant, ObserverConfig};
use super::layers::{Conv, ConvBlock, DeconvBlock, InceptionBlock, InceptionStack};
use crate::error::{Error, Result};
use crate::tensor::params::fan_in;
use crate::tensor::{Binding, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// The driving projection `B: x -> xi`.
#[derive(Clone, Debug)]
pub enum Projection {
    None,
    Conv(Conv),
    Inception(InceptionBlock),
}

impl Projection {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Option<Var>> {
        Ok(match self {
            Projection::None => None,
            Projection::Conv(c) => Some(c.forward(tape, b, x, 1)?),
            Projection::Inception(blk) => Some(blk.forward(tape, b, x)?),
        })
    }
}

/// Encoder activations of one grouped input.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Output of every encoder block; the last one is `x`.
    pub blocks: Vec<Var>,
    pub x: Var,
    pub z: Var,
    pub xi: Var,
}

/// Predictions of one observer step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub xi_hat: Var,
    pub z_hat: Var,
    pub x_hat: Var,
    pub y_hat: Var,
}

#[derive(Clone, Debug)]
pub struct ObserverModel<T> {
    pub config: ObserverConfig,
    pub store: ParamStore<T>,
    pub encoder: Vec<ConvBlock>,
    pub h_inv: InceptionStack,
    pub t_fwd: InceptionStack,
    pub a_raw: ParamId,
    pub b: Projection,
    pub t_inv: InceptionStack,
    pub h_fwd: InceptionStack,
    pub decoder: Vec<DeconvBlock>,
}

impl<T: Scalar> ObserverModel<T> {
    pub fn new(config: ObserverConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = &config;
        let groups = |c: usize| cfg.groups_for(c);
        let plan = cfg.spatial_plan();

        let mut encoder = Vec::with_capacity(cfg.n_s);
        for i in 0..cfg.n_s {
            let c_in = if i == 0 { cfg.grouped_channels() } else { cfg.c_s };
            encoder.push(ConvBlock::new(
                &mut store,
                &format!("enc{i}"),
                c_in,
                cfg.c_s,
                encoder_stride(i),
                groups(cfg.c_s),
                cfg.slope,
                &mut rng,
            )?);
        }
        let h_inv = InceptionStack::new(&mut store, "h_inv", cfg.n_h, cfg.c_s, cfg.c_h, cfg.c_h, &groups, cfg.slope, &mut rng)?;
        let t_fwd = InceptionStack::new(&mut store, "t", cfg.n_t, cfg.c_h, cfg.c_t, cfg.c_t, &groups, cfg.slope, &mut rng)?;

        let a_shape = cfg.a_shape();
        let a_raw = store.init("a_raw", &a_shape, cfg.a_init, fan_in(&a_shape), &mut rng)?;
        let b = match cfg.b_variant {
            BVariant::None => Projection::None,
            BVariant::Conv1x1 => Projection::Conv(Conv::new(&mut store, "b", cfg.c_s, cfg.c_t, 1, &mut rng)?),
            BVariant::Conv3x3 => Projection::Conv(Conv::new(&mut store, "b", cfg.c_s, cfg.c_t, 3, &mut rng)?),
            BVariant::Inception => Projection::Inception(InceptionBlock::new(
                &mut store, "b", cfg.c_s, cfg.c_t, None, None, &mut rng,
            )?),
        };

        let t_inv = InceptionStack::new(&mut store, "t_inv", cfg.n_t, cfg.c_t, cfg.c_t, cfg.c_h, &groups, cfg.slope, &mut rng)?;
        let h_fwd = InceptionStack::new(&mut store, "h", cfg.n_h, cfg.c_h, cfg.c_h, cfg.c_s, &groups, cfg.slope, &mut rng)?;

        let mut decoder = Vec::with_capacity(cfg.n_s);
        for d in 0..cfg.n_s {
            // decoder block d undoes encoder block n_s - 1 - d
            let e = cfg.n_s - 1 - d;
            let s = encoder_stride(e);
            let (hi, wi) = plan[e];
            let (ho, wo) = plan[e + 1];
            let op_h = hi - 1 - (ho - 1) * s;
            let op_w = wi - 1 - (wo - 1) * s;
            if op_h != op_w {
                return Err(Error::Config(format!(
                    "decoder block {d} needs output padding {op_h} by {op_w}; use frames whose height and width share parity"
                )));
            }
            let last = d + 1 == cfg.n_s;
            let c_out = if last { cfg.grouped_channels() } else { cfg.c_s };
            decoder.push(DeconvBlock::new(
                &mut store,
                &format!("dec{d}"),
                cfg.c_s,
                c_out,
                s,
                op_h,
                (!last).then(|| groups(c_out)),
                cfg.slope,
                &mut rng,
            )?);
        }

        Ok(Self {
            config,
            store,
            encoder,
            h_inv,
            t_fwd,
            a_raw,
            b,
            t_inv,
            h_fwd,
            decoder,
        })
    }

    /// The same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> ObserverModel<U> {
        ObserverModel {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            h_inv: self.h_inv.clone(),
            t_fwd: self.t_fwd.clone(),
            a_raw: self.a_raw,
            b: self.b.clone(),
            t_inv: self.t_inv.clone(),
            h_fwd: self.h_fwd.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Replaces `T` and `T^-1` with linear identity stacks. Needs `c_h == c_t`.
    pub fn identity_transforms(&mut self) -> Result<()> {
        let c = self.config.c_t;
        if self.config.c_h != c {
            return Err(Error::Config("identity transforms need c_h == c_t".into()));
        }
        let mk = |store: &mut ParamStore<T>, prefix: &str, n: usize| -> Result<InceptionStack> {
            let blocks = (0..n)
                .map(|i| InceptionBlock::identity(store, &format!("{prefix}.block{i}"), c))
                .collect::<Result<Vec<_>>>()?;
            Ok(InceptionStack { blocks })
        };
        let n = self.config.n_t;
        self.t_fwd = mk(&mut self.store, "t_id", n)?;
        self.t_inv = mk(&mut self.store, "t_inv_id", n)?;
        Ok(())
    }

    /// Layer count of the main path: encoder, `h^-1`, `T`, `A`, `T^-1`, `h`, decoder.
    pub fn depth(&self) -> usize {
        2 * (self.config.n_s + self.config.n_h + self.config.n_t) + 1
    }

    pub fn spatial_encode(&self, tape: &mut Tape<T>, b: &Binding, y: Var) -> Result<Vec<Var>> {
        let cfg = &self.config;
        tape.value(y).expect_shape(
            &[tape.shape(y)[0], cfg.grouped_channels(), cfg.height, cfg.width],
            "grouped input",
        )?;
        let mut outs = Vec::with_capacity(self.encoder.len());
        let mut h = y;
        for blk in &self.encoder {
            h = blk.forward(tape, b, h)?;
            outs.push(h);
        }
        Ok(outs)
    }

    /// `h^-1`.
    pub fn state_estimate(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        self.h_inv.forward(tape, b, x)
    }

    /// `T`.
    pub fn dynamic_transform(&self, tape: &mut Tape<T>, b: &Binding, z: Var) -> Result<Var> {
        self.t_fwd.forward(tape, b, z)
    }

    /// Encoder, `h^-1` and `T` in sequence.
    pub fn encode(&self, tape: &mut Tape<T>, b: &Binding, y: Var) -> Result<Encoded> {
        let blocks = self.spatial_encode(tape, b, y)?;
        let x = *blocks.last().expect("n_s > 0");
        let z = self.state_estimate(tape, b, x)?;
        let xi = self.dynamic_transform(tape, b, z)?;
        Ok(Encoded { blocks, x, z, xi })
    }

    /// The constrained coefficient tensor `A`.
    pub fn a_effective(&self, tape: &mut Tape<T>, b: &Binding) -> Var {
        let raw = b.var(self.a_raw);
        match self.config.a_constraint {
            AConstraint::Sigmoid => tape.sigmoid(raw),
            AConstraint::Clamp => {
                let [lo, hi] = self.config.a_clamp;
                tape.clamp(raw, lo, hi)
            }
            AConstraint::None => raw,
        }
    }

    /// Value of `A` outside any pass.
    pub fn a_tensor(&self) -> Tensor<T> {
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape, false);
        let a = self.a_effective(&mut tape, &b);
        tape.value(a).clone()
    }

    /// `xi_hat = A ∘ xi_prev + B(x_prev)`.
    pub fn forecast_step(
        &self,
        tape: &mut Tape<T>,
        b: &Binding,
        xi_prev: Var,
        x_prev: Var,
    ) -> Result<Var> {
        let a = self.a_effective(tape, b);
        let ax = tape.hadamard(xi_prev, a)?;
        match self.b.forward(tape, b, x_prev)? {
            Some(bx) => tape.add(ax, bx),
            None => Ok(ax),
        }
    }

    /// `T^-1`, plus the input of `T` when skips are on.
    pub fn dynamic_invert(
        &self,
        tape: &mut Tape<T>,
        b: &Binding,
        xi_hat: Var,
        t_input: Option<Var>,
    ) -> Result<Var> {
        let z_hat = self.t_inv.forward(tape, b, xi_hat)?;
        match t_input {
            Some(z) if self.config.skips => tape.add(z_hat, z),
            _ => Ok(z_hat),
        }
    }

    /// `h`, plus the input of `h^-1` when skips are on.
    pub fn latent_output(
        &self,
        tape: &mut Tape<T>,
        b: &Binding,
        z_hat: Var,
        h_input: Option<Var>,
    ) -> Result<Var> {
        let x_hat = self.h_fwd.forward(tape, b, z_hat)?;
        match h_input {
            Some(x) if self.config.skips => tape.add(x_hat, x),
            _ => Ok(x_hat),
        }
    }

    /// Decoder; `enc_blocks` are the encoder block outputs for the skips.
    pub fn spatial_decode(
        &self,
        tape: &mut Tape<T>,
        b: &Binding,
        x_hat: Var,
        enc_blocks: Option<&[Var]>,
    ) -> Result<Var> {
        let n_s = self.decoder.len();
        let mut h = x_hat;
        for (d, blk) in self.decoder.iter().enumerate() {
            h = blk.forward(tape, b, h)?;
            if let Some(enc) = enc_blocks.filter(|_| self.config.skips) {
                if d + 1 < n_s {
                    h = tape.add(h, enc[n_s - 2 - d])?;
                }
            }
        }
        Ok(h)
    }

    /// Steps after encoding: forecast, invert, output, decode.
    pub fn step_from(
        &self,
        tape: &mut Tape<T>,
        b: &Binding,
        enc: &Encoded,
        xi_prev: Var,
    ) -> Result<StepOutput> {
        let xi_hat = self.forecast_step(tape, b, xi_prev, enc.x)?;
        let z_hat = self.dynamic_invert(tape, b, xi_hat, Some(enc.z))?;
        let x_hat = self.latent_output(tape, b, z_hat, Some(enc.x))?;
        let y_hat = self.spatial_decode(tape, b, x_hat, Some(&enc.blocks))?;
        Ok(StepOutput {
            xi_hat,
            z_hat,
            x_hat,
            y_hat,
        })
    }

    /// Runs `f` on a gradient-free tape and returns the resulting value.
    pub fn eval<F>(&self, f: F) -> Result<Tensor<T>>
    where
        F: FnOnce(&Self, &mut Tape<T>, &Binding) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape, false);
        let out = f(self, &mut tape, &b)?;
        Ok(tape.value(out).clone())
    }

    /// Plain-tensor encoder, `[N, C*delta, H, W] -> [N, C_S, h, w]`.
    pub fn encode_tensor(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval(|m, t, b| {
            let yv = t.constant(y.clone());
            Ok(*m.spatial_encode(t, b, yv)?.last().unwrap())
        })
    }

    /// Plain-tensor decoder without encoder skips.
    pub fn decode_tensor(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval(|m, t, b| {
            let xv = t.constant(x.clone());
            m.spatial_decode(t, b, xv, None)
        })
    }

    /// Plain-tensor `forecast_step`.
    pub fn forecast_step_tensor(&self, xi: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval(|m, t, b| {
            let xiv = t.constant(xi.clone());
            let xv = t.constant(x.clone());
            m.forecast_step(t, b, xiv, xv)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(cfg: ObserverConfig) -> ObserverModel<f64> {
        ObserverModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn micro_shapes_and_depth() {
        let m = model(ObserverConfig::micro());
        assert_eq!(m.depth(), 9);
        let y = Tensor::<f64>::zeros(&[2, 2, 16, 16]);
        let x = m.encode_tensor(&y).unwrap();
        assert_eq!(x.shape(), &[2, 8, 8, 8]);
        let back = m.decode_tensor(&x).unwrap();
        assert_eq!(back.shape(), &[2, 2, 16, 16]);
    }

    #[test]
    fn odd_frames_close_geometry() {
        let mut cfg = ObserverConfig::micro();
        cfg.height = 15;
        cfg.width = 15;
        cfg.n_s = 3;
        let m = model(cfg);
        let x = m.encode_tensor(&Tensor::zeros(&[1, 2, 15, 15])).unwrap();
        assert_eq!(x.shape(), &[1, 8, 4, 4]);
        assert_eq!(m.decode_tensor(&x).unwrap().shape(), &[1, 2, 15, 15]);
    }

    #[test]
    fn mixed_parity_is_a_config_error() {
        let mut cfg = ObserverConfig::micro();
        cfg.height = 16;
        cfg.width = 15;
        assert!(matches!(ObserverModel::<f64>::new(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn sigmoid_a_in_open_interval() {
        let mut cfg = ObserverConfig::micro();
        cfg.a_init = crate::tensor::Init::Normal;
        let m = model(cfg);
        let a = m.a_tensor();
        assert_eq!(a.shape(), &[16, 8, 8]);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forecast_step_cases() {
        let mut cfg = ObserverConfig::micro();
        cfg.b_variant = BVariant::None;
        let mut m = model(cfg);
        // sigmoid(0) = 0.5
        m.store.get_mut(m.a_raw).value.data_mut().fill(0.0);
        let xi = Tensor::full(&[1, 16, 8, 8], 8.0);
        let x = Tensor::zeros(&[1, 8, 8, 8]);
        let out = m.forecast_step_tensor(&xi, &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 4.0));

        // zero state leaves only B(x)
        let m = model(ObserverConfig::micro());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[1, 8, 8, 8], -1.0, 1.0, &mut rng);
        let out = m.forecast_step_tensor(&Tensor::zeros(&[1, 16, 8, 8]), &x).unwrap();
        let bx = m
            .eval(|m, t, b| {
                let xv = t.constant(x.clone());
                Ok(m.b.forward(t, b, xv)?.unwrap())
            })
            .unwrap();
        assert_eq!(out, bx);
    }

    #[test]
    fn identity_transforms_invert_exactly() {
        let mut cfg = ObserverConfig::micro();
        cfg.skips = false;
        cfg.n_t = 2;
        let mut m = model(cfg);
        m.identity_transforms().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Tensor::<f64>::uniform(&[1, 16, 8, 8], -1.0, 1.0, &mut rng);
        let round = m
            .eval(|m, t, b| {
                let zv = t.constant(z.clone());
                let xi = m.dynamic_transform(t, b, zv)?;
                m.dynamic_invert(t, b, xi, Some(zv))
            })
            .unwrap();
        assert_eq!(round, z);
    }

    #[test]
    fn latent_channel_maps() {
        let m = model(ObserverConfig::micro());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform(&[1, 8, 8, 8], -1.0, 1.0, &mut rng);
        let (z, x_hat) = {
            let mut t = Tape::new();
            let b = m.store.bind(&mut t, false);
            let xv = t.constant(x.clone());
            let z = m.state_estimate(&mut t, &b, xv).unwrap();
            let xh = m.latent_output(&mut t, &b, z, Some(xv)).unwrap();
            (t.value(z).shape().to_vec(), t.value(xh).shape().to_vec())
        };
        assert_eq!(z, vec![1, 16, 8, 8]);
        assert_eq!(x_hat, vec![1, 8, 8, 8]);
    }
}
