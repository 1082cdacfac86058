use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Binding, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates checked per parameter tensor; `None` checks all.
    pub max_coords_per_param: Option<usize>,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Further floor as a multiple of `|f(θ)|`, which scales with the
    /// rounding noise of the difference quotient.
    pub loss_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_coords_per_param: None,
            floor: 1e-6,
            loss_floor: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

fn eval<F>(f: &mut F, store: &ParamStore<f64>) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, false);
    let loss = f(&mut tape, &b)?;
    let v = tape.value(loss).data()[0];
    if !v.is_finite() {
        return Err(Error::Numerical(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of the scalar objective `f` against central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε`, returning the largest relative error
/// `|a - n| / max(|a|, |n|, floor, loss_floor * |f(θ)|)`.
pub fn finite_diff_check<F>(
    mut f: F,
    store: &mut ParamStore<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &Binding) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&opts.eps) {
        return Err(Error::Config(format!(
            "finite-difference step {} outside [1e-6, 1e-3]",
            opts.eps
        )));
    }
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape, true);
    let loss = f(&mut tape, &binding)?;
    let f0 = tape.value(loss).data()[0];
    if !f0.is_finite() {
        return Err(Error::Numerical("objective is not finite".into()));
    }
    let floor = opts.floor.max(opts.loss_floor * f0.abs());
    let mut grads = tape.backward(loss)?;
    drop(tape);
    store.assign_grads(&binding, &mut grads);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let analytic = store.get(id).grad.as_ref().map_or(0.0, |g| g.data()[i]);
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let plus = eval(&mut f, store);
            store.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let minus = eval(&mut f, store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::<f64>::new();
        store
            .add(
                "x",
                Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap(),
                Init::Uniform,
            )
            .unwrap();
        let report = finite_diff_check(
            |t, b| {
                let x = b.vars()[0];
                let s = t.sum_squares(x);
                Ok(t.scale(s, 1.5))
            },
            &mut store,
            GradCheckOptions {
                eps: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::ones(&[1]), Init::Uniform).unwrap();
        let opts = GradCheckOptions {
            eps: 1e-2,
            ..Default::default()
        };
        assert!(finite_diff_check(|t, b| Ok(t.sum(b.vars()[0])), &mut store, opts).is_err());
        let res = finite_diff_check(
            |t, b| {
                let x = b.vars()[0];
                let nan = t.constant(Tensor::full(&[1], f64::NAN));
                t.hadamard(x, nan).map(|v| t.sum(v))
            },
            &mut store,
            GradCheckOptions::default(),
        );
        assert!(matches!(res, Err(Error::Numerical(_))));
    }
}
