use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Init;

/// Parameterization of the driving projection `B`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BVariant {
    None,
    Conv1x1,
    Conv3x3,
    #[default]
    Inception,
}

/// How the raw coefficient tensor is mapped to the effective `A`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AConstraint {
    #[default]
    Sigmoid,
    Clamp,
    None,
}

/// Where the linear state of a group step comes from once the first group
/// has been processed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Handoff {
    /// Carry the previous prediction `xi_hat` forward.
    #[default]
    Chain,
    /// Re-derive `xi` from the step's (observed or predicted) input frames.
    Recompute,
}

fn default_slope() -> f64 {
    0.2
}

fn default_clamp() -> [f64; 2] {
    [0.01, 0.99]
}

fn default_true() -> bool {
    true
}

fn default_a_init() -> Init {
    Init::KaimingUniform
}

/// Architecture hyperparameters of an [`ObserverModel`](super::ObserverModel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub delta: usize,
    /// Encoder/decoder block count and width.
    pub n_s: usize,
    pub c_s: usize,
    /// Inception blocks and width of `h` and its inverse.
    pub n_h: usize,
    pub c_h: usize,
    /// Inception blocks and width of `T` and its inverse.
    pub n_t: usize,
    pub c_t: usize,
    #[serde(default)]
    pub b_variant: BVariant,
    #[serde(default)]
    pub a_constraint: AConstraint,
    #[serde(default = "default_clamp")]
    pub a_clamp: [f64; 2],
    #[serde(default = "default_a_init")]
    pub a_init: Init,
    #[serde(default = "default_true")]
    pub skips: bool,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default)]
    pub handoff: Handoff,
    /// Group-norm group count; `None` picks `min(8, C)` or 1 if that does not divide.
    #[serde(default)]
    pub gn_groups: Option<usize>,
}

/// Stride of encoder block `i`: 2, 1, 2, 1, ...
pub fn encoder_stride(i: usize) -> usize {
    if i.is_multiple_of(2) {
        2
    } else {
        1
    }
}

pub(crate) const GN_EPS: f64 = 1e-5;

/// Default group count for `channels`.
pub fn default_groups(channels: usize) -> usize {
    let g = channels.min(8);
    if channels.is_multiple_of(g) {
        g
    } else {
        1
    }
}

impl ObserverConfig {
    /// The gradient-check micro configuration.
    pub fn micro() -> Self {
        Self {
            channels: 1,
            height: 16,
            width: 16,
            t_in: 2,
            t_out: 2,
            delta: 2,
            n_s: 2,
            c_s: 8,
            n_h: 1,
            c_h: 16,
            n_t: 1,
            c_t: 16,
            b_variant: BVariant::Inception,
            a_constraint: AConstraint::Sigmoid,
            a_clamp: default_clamp(),
            a_init: Init::KaimingUniform,
            skips: true,
            slope: default_slope(),
            handoff: Handoff::Chain,
            gn_groups: None,
        }
    }

    pub fn groups_for(&self, channels: usize) -> usize {
        match self.gn_groups {
            Some(g) if g > 0 && channels.is_multiple_of(g) => g,
            Some(_) => 1,
            None => default_groups(channels),
        }
    }

    /// Channels of one grouped input, `C * delta`.
    pub fn grouped_channels(&self) -> usize {
        self.channels * self.delta
    }

    /// Spatial extents after each encoder block, starting with the input.
    pub fn spatial_plan(&self) -> Vec<(usize, usize)> {
        let mut plan = vec![(self.height, self.width)];
        for i in 0..self.n_s {
            let s = encoder_stride(i);
            let (h, w) = plan[i];
            plan.push(((h - 1) / s + 1, (w - 1) / s + 1));
        }
        plan
    }

    /// Latent grid `(h, w)` of `x`, `z` and `xi`.
    pub fn latent_hw(&self) -> (usize, usize) {
        *self.spatial_plan().last().unwrap()
    }

    /// Shape of `A` and of one sample of `xi`.
    pub fn a_shape(&self) -> [usize; 3] {
        let (h, w) = self.latent_hw();
        [self.c_t, h, w]
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("delta", self.delta),
            ("n_s", self.n_s),
            ("c_s", self.c_s),
            ("n_h", self.n_h),
            ("c_h", self.c_h),
            ("n_t", self.n_t),
            ("c_t", self.c_t),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.t_in.is_multiple_of(self.delta) {
            return Err(Error::Grouping {
                t: self.t_in,
                delta: self.delta,
            });
        }
        if !self.t_out.is_multiple_of(self.delta) {
            return Err(Error::Grouping {
                t: self.t_out,
                delta: self.delta,
            });
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Config(format!("slope {} outside [0,1)", self.slope)));
        }
        let [lo, hi] = self.a_clamp;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "clamp interval [{lo}, {hi}] must lie inside (0, 1)"
            )));
        }
        if matches!(self.a_init, Init::Constant(_)) {
            return Err(Error::Config("A init must be normal, uniform or kaiming-uniform".into()));
        }
        if let Some(g) = self.gn_groups {
            if g == 0 {
                return Err(Error::Config("gn_groups must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_plan_arithmetic() {
        let mut cfg = ObserverConfig::micro();
        cfg.height = 64;
        cfg.width = 64;
        cfg.n_s = 4;
        assert_eq!(cfg.spatial_plan(), vec![(64, 64), (32, 32), (32, 32), (16, 16), (16, 16)]);
        cfg.height = 128;
        cfg.width = 128;
        cfg.n_s = 2;
        assert_eq!(cfg.latent_hw(), (64, 64));
        cfg.height = 7;
        cfg.width = 5;
        cfg.n_s = 3;
        assert_eq!(cfg.latent_hw(), (2, 2));
    }

    #[test]
    fn groups_default() {
        assert_eq!(default_groups(64), 8);
        assert_eq!(default_groups(4), 4);
        assert_eq!(default_groups(12), 1);
    }

    #[test]
    fn validation() {
        let mut cfg = ObserverConfig::micro();
        assert!(cfg.validate().is_ok());
        cfg.t_out = 3;
        assert!(matches!(cfg.validate(), Err(Error::Grouping { t: 3, delta: 2 })));
        let mut cfg = ObserverConfig::micro();
        cfg.a_clamp = [0.0, 1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ObserverConfig::micro()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ObserverConfig>(v).is_err());
    }
}
