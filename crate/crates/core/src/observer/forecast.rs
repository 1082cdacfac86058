//! Multi-step rollout over frame groups.

use super::config::Handoff;
use super::group::{degroup, group};
use super::model::{ObserverModel, StepOutput};
use crate::error::{Error, Result};
use crate::tensor::{Binding, Scalar, Tape, Tensor, Var};

/// Origin of the frames a step was driven by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputSource {
    /// Observed group with this index.
    Observed(usize),
    /// Prediction made by the step with this index.
    Predicted(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub source: InputSource,
    /// Index of the predicted group counted from the start of the input.
    pub target_group: usize,
    pub out: StepOutput,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub steps: Vec<StepRecord>,
    /// Predicted future frames, `[N, tau, C, H, W]`.
    pub frames: Var,
    pub input_groups: usize,
}

impl Rollout {
    /// Steps whose predictions lie beyond the observed window.
    pub fn future_steps(&self) -> impl Iterator<Item = &StepRecord> {
        let g = self.input_groups;
        self.steps.iter().filter(move |s| s.target_group >= g)
    }
}

/// Records the rollout on `tape`.
///
/// `y_in` is `[N, T_in, C, H, W]`. One step is taken per group boundary: while
/// observed groups remain, a step is driven by them; afterwards by the
/// previous step's prediction.
pub fn rollout<T: Scalar>(
    model: &ObserverModel<T>,
    tape: &mut Tape<T>,
    b: &Binding,
    y_in: Var,
    horizon: usize,
) -> Result<Rollout> {
    let cfg = &model.config;
    let delta = cfg.delta;
    let shape = tape.shape(y_in).to_vec();
    if shape.len() != 5 || shape[2..] != [cfg.channels, cfg.height, cfg.width] {
        return Err(Error::dim(
            "input sequence",
            format!(
                "expected [N, T, {}, {}, {}], got {shape:?}",
                cfg.channels, cfg.height, cfg.width
            ),
        ));
    }
    let (n, t_in) = (shape[0], shape[1]);
    if t_in % delta != 0 {
        return Err(Error::Grouping { t: t_in, delta });
    }
    if horizon == 0 || !horizon.is_multiple_of(delta) {
        return Err(Error::Grouping { t: horizon, delta });
    }
    let g_in = t_in / delta;
    let g_out = horizon / delta;
    let gc = cfg.grouped_channels();
    let grouped = tape.reshape(y_in, &[n, g_in, gc, cfg.height, cfg.width])?;
    let observed = |tape: &mut Tape<T>, g: usize| -> Result<Var> {
        let v = tape.narrow(grouped, g, 1)?;
        tape.reshape(v, &[n, gc, cfg.height, cfg.width])
    };

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut xi_carry: Option<Var> = None;
    for step in 0..g_in + g_out - 1 {
        let (input, source) = if step < g_in {
            (observed(tape, step)?, InputSource::Observed(step))
        } else {
            (steps[step - 1].out.y_hat, InputSource::Predicted(step - 1))
        };
        let enc = model.encode(tape, b, input)?;
        let xi_prev = match (cfg.handoff, xi_carry) {
            (Handoff::Chain, Some(xi)) => xi,
            _ => enc.xi,
        };
        let out = model.step_from(tape, b, &enc, xi_prev)?;
        if !tape.value(out.y_hat).all_finite() || !tape.value(out.xi_hat).all_finite() {
            return Err(Error::Numerical(format!("non-finite activations at group step {step}")));
        }
        xi_carry = Some(out.xi_hat);
        steps.push(StepRecord {
            step,
            source,
            target_group: step + 1,
            out,
        });
    }

    let mut parts = Vec::with_capacity(g_out);
    for s in steps.iter().filter(|s| s.target_group >= g_in) {
        parts.push(tape.reshape(s.out.y_hat, &[n, 1, gc, cfg.height, cfg.width])?);
    }
    let cat = tape.concat(&parts)?;
    let frames = tape.reshape(cat, &[n, horizon, cfg.channels, cfg.height, cfg.width])?;
    Ok(Rollout {
        steps,
        frames,
        input_groups: g_in,
    })
}

/// Latent targets `(x, z, xi)` of each future group of `y_future`
/// (`[N, tau, C, H, W]`), detached from the tape's gradient flow.
pub fn latent_targets<T: Scalar>(
    model: &ObserverModel<T>,
    tape: &mut Tape<T>,
    b: &Binding,
    y_future: &Tensor<T>,
) -> Result<Vec<[Var; 3]>> {
    let cfg = &model.config;
    let grouped = group(y_future, cfg.delta)?;
    let g = grouped.shape()[1];
    let mut out = Vec::with_capacity(g);
    for k in 0..g {
        let yk = grouped.narrow_axis1(k, 1)?;
        let shape = [yk.shape()[0], yk.shape()[2], yk.shape()[3], yk.shape()[4]];
        let yk = tape.constant(yk.reshape(&shape)?);
        let enc = model.encode(tape, b, yk)?;
        out.push([tape.detach(enc.x), tape.detach(enc.z), tape.detach(enc.xi)]);
    }
    Ok(out)
}

/// Forecasts `horizon` frames after `y_in` (`[T_in, C, H, W]` or
/// `[N, T_in, C, H, W]`), returning the same rank.
pub fn forecast_sequence<T: Scalar>(
    model: &ObserverModel<T>,
    y_in: &Tensor<T>,
    horizon: usize,
) -> Result<Tensor<T>> {
    let batched = y_in.rank() == 5;
    let y = if batched {
        y_in.clone()
    } else {
        let mut s = vec![1];
        s.extend_from_slice(y_in.shape());
        y_in.clone().reshape(&s)?
    };
    let out = model.eval(|m, tape, b| {
        let yv = tape.constant(y);
        Ok(rollout(m, tape, b, yv, horizon)?.frames)
    })?;
    if batched {
        Ok(out)
    } else {
        let s = out.shape()[1..].to_vec();
        out.reshape(&s)
    }
}

/// Degrouped view of one grouped prediction, `[N, C*delta, H, W] -> [N, delta, C, H, W]`.
pub fn group_frames<T: Scalar>(y_hat: &Tensor<T>, delta: usize) -> Result<Tensor<T>> {
    let mut s = vec![y_hat.shape()[0], 1];
    s.extend_from_slice(&y_hat.shape()[1..]);
    degroup(&y_hat.clone().reshape(&s)?, delta)
}
