use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observer::forecast::{latent_targets, rollout};
use crate::observer::ObserverModel;
use crate::tensor::{Binding, Scalar, Tape, Tensor, Var};

/// Weights of the loss terms. `lambda0` scales the absolute error inside the
/// frame term, `lambda1..3` the latent terms for `x`, `z` and `xi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be a finite nonnegative number")));
            }
        }
        Ok(())
    }

    fn latent(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_y: f64,
    pub l_x: f64,
    pub l_z: f64,
    pub l_xi: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(self, f: f64) -> Self {
        Self {
            l_y: self.l_y * f,
            l_x: self.l_x * f,
            l_z: self.l_z * f,
            l_xi: self.l_xi * f,
            total: self.total * f,
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.l_y += other.l_y;
        self.l_x += other.l_x;
        self.l_z += other.l_z;
        self.l_xi += other.l_xi;
        self.total += other.total;
    }
}

/// Loss terms as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_y: Var,
    pub l_x: Var,
    pub l_z: Var,
    pub l_xi: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossBreakdown {
        let v = |x: Var| tape.value(x).data()[0].as_f64();
        LossBreakdown {
            l_y: v(self.l_y),
            l_x: v(self.l_x),
            l_z: v(self.l_z),
            l_xi: v(self.l_xi),
            total: v(self.total),
        }
    }
}

/// Records the loss terms.
///
/// `pred` and `truth` are `[N, L, ..]` frame sequences. `pred_latents` and
/// `target_latents` hold `(x, z, xi)` per group step; the targets should
/// already be detached.
pub fn loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    truth: Var,
    pred_latents: &[[Var; 3]],
    target_latents: &[[Var; 3]],
    weights: &LossWeights,
) -> Result<LossVars> {
    let shape = tape.shape(pred).to_vec();
    if shape != tape.shape(truth) {
        return Err(Error::dim(
            "frames",
            format!("prediction {shape:?} vs truth {:?}", tape.shape(truth)),
        ));
    }
    if shape.len() < 2 {
        return Err(Error::dim("frames", "expected [N, L, ..]"));
    }
    if pred_latents.len() != target_latents.len() || pred_latents.is_empty() {
        return Err(Error::dim(
            "latent steps",
            format!("{} predicted vs {} targets", pred_latents.len(), target_latents.len()),
        ));
    }
    let (n, l) = (shape[0], shape[1]);
    let e = tape.sub(pred, truth)?;
    let sq = tape.sum_squares(e);
    let ab = tape.sum_abs(e);
    let ab = tape.scale(ab, weights.lambda0);
    let l_y = tape.add(sq, ab)?;
    let l_y = tape.scale(l_y, 1.0 / (n * l) as f64);

    let steps = pred_latents.len();
    let mut terms = [l_y; 3];
    for (slot, term) in terms.iter_mut().enumerate() {
        let mut acc: Option<Var> = None;
        for (p, t) in pred_latents.iter().zip(target_latents) {
            let d = tape.sub(p[slot], t[slot])?;
            let s = tape.sum_squares(d);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        *term = tape.scale(acc.unwrap(), 1.0 / (n * steps) as f64);
    }

    let mut total = l_y;
    for (term, lambda) in terms.iter().zip(weights.latent()) {
        let w = tape.scale(*term, lambda);
        total = tape.add(total, w)?;
    }
    Ok(LossVars {
        l_y,
        l_x: terms[0],
        l_z: terms[1],
        l_xi: terms[2],
        total,
    })
}

/// Plain-value loss evaluation.
pub fn compute_losses<T: Scalar>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
    pred_latents: &[[Tensor<T>; 3]],
    target_latents: &[[Tensor<T>; 3]],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let t = tape.constant(truth.clone());
    let mut put = |ls: &[[Tensor<T>; 3]]| -> Vec<[Var; 3]> {
        ls.iter()
            .map(|l| {
                [
                    tape.constant(l[0].clone()),
                    tape.constant(l[1].clone()),
                    tape.constant(l[2].clone()),
                ]
            })
            .collect()
    };
    let pl = put(pred_latents);
    let tl = put(target_latents);
    Ok(loss_on_tape(&mut tape, p, t, &pl, &tl, weights)?.values(&tape))
}

/// Loss of forecasting `y_out` (`[N, T_out, C, H, W]`) from `y_in`.
pub fn batch_loss<T: Scalar>(
    model: &ObserverModel<T>,
    tape: &mut Tape<T>,
    b: &Binding,
    y_in: &Tensor<T>,
    y_out: &Tensor<T>,
    weights: &LossWeights,
) -> Result<LossVars> {
    let horizon = y_out.shape().get(1).copied().unwrap_or(0);
    let yv = tape.constant(y_in.clone());
    let r = rollout(model, tape, b, yv, horizon)?;
    let preds: Vec<[Var; 3]> = r
        .future_steps()
        .map(|s| [s.out.x_hat, s.out.z_hat, s.out.xi_hat])
        .collect();
    let targets = latent_targets(model, tape, b, y_out)?;
    let truth = tape.constant(y_out.clone());
    loss_on_tape(tape, r.frames, truth, &preds, &targets, weights)
}
