//! Verification suites shared by the `gradcheck` and `convergence` subcommands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::learning::{loss_on_tape, LossWeights};
use crate::observer::{latent_error_decay, latent_targets, rollout, AConstraint, DecayReport, ObserverConfig, ObserverModel};
use crate::tensor::{
    finite_diff_check, Binding, GradCheckOptions, GradCheckReport, Init, ParamStore, Tape, Tensor, Var,
};

type Objective = Box<dyn Fn(&mut Tape<f64>, &Binding) -> Result<Var>>;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

/// Values bounded away from zero, so piecewise ops stay off their kinks.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// `<out, w>` with a fixed random `w`, so every output coordinate matters.
fn project(tape: &mut Tape<f64>, out: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = Tensor::uniform(tape.shape(out), -1.0, 1.0, rng);
    let w = tape.constant(w);
    let p = tape.hadamard(out, w)?;
    Ok(tape.sum(p))
}

fn store(leaves: &[(&str, Tensor<f64>)]) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for (name, t) in leaves {
        s.add(*name, t.clone(), Init::Uniform)?;
    }
    Ok(s)
}

fn op_cases(seed: u64) -> Result<Vec<(&'static str, ParamStore<f64>, Objective)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| away_from_zero(shape, &mut rng);
    let mut cases: Vec<(&'static str, ParamStore<f64>, Objective)> = Vec::new();
    let proj_seed = seed.wrapping_add(1);
    macro_rules! case {
        ($name:expr, $leaves:expr, |$t:ident, $v:ident| $body:expr) => {{
            let obj: Objective = Box::new(move |$t: &mut Tape<f64>, b: &Binding| {
                let $v = b.vars();
                let out: Var = $body;
                project($t, out, &mut ChaCha8Rng::seed_from_u64(proj_seed))
            });
            cases.push(($name, store(&$leaves)?, obj));
        }};
    }
    case!("conv2d", [("x", r(&[2, 3, 7, 6])), ("w", r(&[4, 3, 3, 3])), ("b", r(&[4]))], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?
    });
    case!("conv_transpose2d", [("x", r(&[2, 4, 4, 3])), ("w", r(&[4, 3, 3, 3])), ("b", r(&[3]))], |t, v| {
        t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 1)?
    });
    case!("group_norm", [("x", r(&[2, 4, 3, 3])), ("g", r(&[4])), ("b", r(&[4]))], |t, v| {
        t.group_norm(v[0], 2, v[1], v[2], 1e-5)?
    });
    case!("leaky_relu", [("x", r(&[3, 5]))], |t, v| t.leaky_relu(v[0], 0.2)?);
    case!("sigmoid", [("x", r(&[3, 5]))], |t, v| t.sigmoid(v[0]));
    case!("clamp", [("x", r(&[3, 5]))], |t, v| t.clamp(v[0], -0.5, 0.5));
    case!("hadamard", [("a", r(&[2, 3, 2, 2])), ("b", r(&[3, 2, 2]))], |t, v| t.hadamard(v[0], v[1])?);
    case!("add", [("a", r(&[4, 3])), ("b", r(&[4, 3]))], |t, v| t.add(v[0], v[1])?);
    case!("sub", [("a", r(&[4, 3])), ("b", r(&[4, 3]))], |t, v| t.sub(v[0], v[1])?);
    case!("scale", [("x", r(&[4, 3]))], |t, v| t.scale(v[0], -1.7));
    case!("sum", [("x", r(&[4, 3]))], |t, v| t.sum(v[0]));
    case!("sum_squares", [("x", r(&[4, 3]))], |t, v| t.sum_squares(v[0]));
    case!("sum_abs", [("x", r(&[4, 3]))], |t, v| t.sum_abs(v[0]));
    case!("reshape", [("x", r(&[2, 6]))], |t, v| t.reshape(v[0], &[3, 4])?);
    case!("narrow", [("x", r(&[2, 5, 3]))], |t, v| t.narrow(v[0], 1, 3)?);
    case!("concat", [("a", r(&[2, 2, 3])), ("b", r(&[2, 1, 3]))], |t, v| t.concat(&[v[0], v[1]])?);
    Ok(cases)
}

/// Micro configuration with two group steps, so the recursion is exercised.
pub fn gradcheck_config() -> ObserverConfig {
    ObserverConfig {
        t_out: 4,
        ..ObserverConfig::micro()
    }
}

/// Checks every differentiable tape op and the full training loss of a
/// micro model in f64. `coords` caps the entries checked per parameter
/// tensor of the model.
pub fn gradcheck_suite(opts: GradCheckOptions, coords: usize, batch: usize) -> Result<Vec<CaseResult>> {
    let seed = opts.seed;
    let mut out = Vec::new();
    for (name, mut store, f) in op_cases(seed)? {
        let report = finite_diff_check(f, &mut store, GradCheckOptions { loss_floor: 0.0, ..opts })?;
        out.push(CaseResult {
            name: name.to_string(),
            report,
        });
    }

    let cfg = gradcheck_config();
    let model = ObserverModel::<f64>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let shape = |t| [batch, t, cfg.channels, cfg.height, cfg.width];
    let y_in = Tensor::uniform(&shape(cfg.t_in), 0.0, 1.0, &mut rng);
    let y_out = Tensor::uniform(&shape(cfg.t_out), 0.0, 1.0, &mut rng);
    let weights = LossWeights {
        lambda0: 1.0,
        lambda1: 0.5,
        lambda2: 0.3,
        lambda3: 0.2,
    };
    // The loss stops gradients at its latent targets, so they are frozen at
    // the unperturbed parameters for the difference quotients as well.
    let targets: Vec<[Tensor<f64>; 3]> = {
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape, false);
        latent_targets(&model, &mut tape, &b, &y_out)?
            .iter()
            .map(|l| l.map(|v| tape.value(v).clone()))
            .collect()
    };
    let mut store = model.store.clone();
    let report = finite_diff_check(
        |tape, b| {
            let yv = tape.constant(y_in.clone());
            let r = rollout(&model, tape, b, yv, cfg.t_out)?;
            let preds: Vec<[Var; 3]> = r
                .future_steps()
                .map(|s| [s.out.x_hat, s.out.z_hat, s.out.xi_hat])
                .collect();
            let fixed: Vec<[Var; 3]> = targets
                .iter()
                .map(|l| l.clone().map(|t| tape.constant(t)))
                .collect();
            let truth = tape.constant(y_out.clone());
            Ok(loss_on_tape(tape, r.frames, truth, &preds, &fixed, &weights)?.total)
        },
        &mut store,
        GradCheckOptions {
            max_coords_per_param: Some(coords),
            ..opts
        },
    )?;
    out.push(CaseResult {
        name: "composed loss".into(),
        report,
    });
    Ok(out)
}

/// Outcome of the latent error decay check on one model.
#[derive(Clone, Debug)]
pub struct DecayCase {
    pub seed: u64,
    pub report: DecayReport,
}

/// Latent error decay of one random model per seed under `constraint`.
pub fn decay_suite(
    base: &ObserverConfig,
    constraint: AConstraint,
    a_init: Init,
    seeds: std::ops::Range<u64>,
    k_max: usize,
) -> Result<Vec<DecayCase>> {
    let cfg = ObserverConfig {
        a_constraint: constraint,
        a_init,
        ..base.clone()
    };
    seeds
        .map(|seed| {
            let model = ObserverModel::<f64>::new(cfg.clone(), seed)?;
            decay_probe(&model, seed, k_max)
        })
        .collect()
}

/// Latent error decay of `model` from two random initial states driven by
/// random latent inputs drawn from `seed`.
pub fn decay_probe(model: &ObserverModel<f64>, seed: u64, k_max: usize) -> Result<DecayCase> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let a = cfg.a_shape();
    let (h, w) = cfg.latent_hw();
    let xi_a = Tensor::uniform(&[1, a[0], a[1], a[2]], -1.0, 1.0, &mut rng);
    let xi_b = Tensor::uniform(&[1, a[0], a[1], a[2]], -1.0, 1.0, &mut rng);
    let xs: Vec<Tensor<f64>> = (0..5)
        .map(|_| Tensor::uniform(&[1, cfg.c_s, h, w], -1.0, 1.0, &mut rng))
        .collect();
    let report = latent_error_decay(model, &xi_a, &xi_b, &xs, k_max)?;
    Ok(DecayCase { seed, report })
}
