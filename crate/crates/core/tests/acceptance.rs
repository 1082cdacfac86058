//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stob::cli::{self, decay_probe, decay_suite, gradcheck_suite, Command, ExperimentConfig, KindArg};
use stob::datasets::DatasetFile;
use stob::evaluation::bound::rademacher_term;
use stob::evaluation::{
    bound_diagnostics, bound_inputs, confusion_counts, csi, dbz, hss, mae, mse, ssim, MetricsReport,
};
use stob::learning::{compute_losses, Checkpoint, LossWeights, Trainer};
use stob::observer::{
    degroup, group, rollout, AConstraint, Handoff, InputSource, ObserverConfig, ObserverModel,
};
use stob::tensor::{GradCheckOptions, Init, Tape, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = stob::Result<Outcome>;
type Criterion<'a> = (&'a str, Box<dyn Fn() -> Check + 'a>);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn gradients() -> Check {
    let start = Instant::now();
    let opts = GradCheckOptions {
        eps: 1e-5,
        floor: 1e-6,
        loss_floor: 1e-4,
        seed: 0,
        max_coords_per_param: None,
    };
    let cases = gradcheck_suite(opts, 12, 1)?;
    let worst = cases
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .unwrap();
    let composed = cases.last().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = cases.iter().all(|c| c.report.max_rel_error < 1e-5) && secs < 120.0;
    Ok(outcome(
        pass,
        format!(
            "{} checks, worst {} {:.2e}, composed loss {:.2e} over {} coords, {:.1}s",
            cases.len(),
            worst.name,
            worst.report.max_rel_error,
            composed.report.max_rel_error,
            composed.report.coords_checked,
            secs
        ),
    ))
}

fn decay() -> Check {
    let base = ObserverConfig::micro();
    let sig = decay_suite(&base, AConstraint::Sigmoid, Init::KaimingUniform, 0..20, 50)?;
    let held = sig.iter().filter(|c| c.report.holds()).count();
    // the bare envelope without the rounding allowance
    let bare = sig
        .iter()
        .filter(|c| c.report.errors.iter().zip(&c.report.envelope).all(|(e, b)| e <= b))
        .count();
    let rho = sig.iter().map(|c| c.report.rho).fold(0.0, f64::max);
    let free = decay_suite(&base, AConstraint::None, Init::Normal, 0..20, 50)?;
    let broken = free.iter().filter(|c| !c.report.holds()).count();
    Ok(outcome(
        held == 20 && rho < 1.0 && broken > 0,
        format!(
            "sigmoid: {held}/20 within bound ({bare}/20 within bare envelope), max A {rho:.4}; \
             unconstrained: {broken}/20 violate"
        ),
    ))
}

fn structure() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = true;
    for (t, delta) in [(4, 4), (10, 10), (10, 5), (15, 5), (6, 2), (4, 1)] {
        let y = Tensor::<f32>::uniform(&[2, t, 2, 5, 3], -1.0, 1.0, &mut rng);
        let back = degroup(&group(&y, delta)?, delta)?;
        exact &= back.shape() == y.shape()
            && back.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let mut geometry = Vec::new();
    for name in ["taxibj", "mnist", "cikm"] {
        let c = ExperimentConfig::preset(name)?.model;
        // encoder and decoder geometry does not depend on the latent widths
        let small = ObserverConfig {
            c_h: 4,
            c_t: 4,
            n_h: 1,
            n_t: 1,
            ..c.clone()
        };
        let m = ObserverModel::<f32>::new(small, 0)?;
        let y = Tensor::<f32>::uniform(&[1, c.channels * c.delta, c.height, c.width], 0.0, 1.0, &mut rng);
        let x = m.encode_tensor(&y)?;
        let out = m.decode_tensor(&x)?;
        geometry.push((name, out.shape() == y.shape(), x.shape().to_vec()));
    }
    let geo_ok = geometry.iter().all(|g| g.1);

    let cfg = ObserverConfig::micro();
    let data = Tensor::<f32>::uniform(&[6, 4, 1, 16, 16], 0.0, 1.0, &mut rng);
    let json = "{\"case\":\"resume\"}";
    let make = || {
        Trainer::new(
            ObserverModel::<f32>::new(cfg.clone(), 5).unwrap(),
            stob::learning::AdamConfig::with_lr(1e-3),
            LossWeights {
                lambda0: 1.0,
                lambda1: 0.1,
                lambda2: 0.1,
                lambda3: 0.1,
            },
            2,
            9,
        )
    };
    let mut straight = make()?;
    let s1 = straight.train_epoch(&data)?;
    let s2 = straight.train_epoch(&data)?;
    let mut first = make()?;
    let r1 = first.train_epoch(&data)?;
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("c.stob");
    Checkpoint::from_trainer(&first, json).save(&path)?;
    let mut resumed = make()?;
    Checkpoint::<f32>::load(&path)?.restore_into(&mut resumed, json)?;
    let r2 = resumed.train_epoch(&data)?;
    let same_params = straight
        .model
        .store
        .iter()
        .zip(resumed.model.store.iter())
        .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let same_loss = s1.loss == r1.loss && s2.loss == r2.loss;

    Ok(outcome(
        exact && geo_ok && same_params && same_loss,
        format!(
            "degroup(group) bit-exact: {exact}; geometry {}; resume: params {}, losses {}",
            geometry
                .iter()
                .map(|(n, ok, x)| format!("{n} {} latent {:?}", if *ok { "ok" } else { "MISMATCH" }, &x[1..]))
                .collect::<Vec<_>>()
                .join(", "),
            if same_params { "bit-identical" } else { "differ" },
            if same_loss { "identical" } else { "differ" },
        ),
    ))
}

fn metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut skill_ok = true;
    for _ in 0..100 {
        let p: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0..=255) as f64).collect();
        let g: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0..=255) as f64).collect();
        let (pd, gd): (Vec<f64>, Vec<f64>) = (p.iter().map(|&v| dbz(v)).collect(), g.iter().map(|&v| dbz(v)).collect());
        for th in [5.0, 20.0, 40.0] {
            let (mut tp, mut fn_, mut fp, mut tn) = (0i64, 0i64, 0i64, 0i64);
            for i in 0..32 {
                for j in 0..32 {
                    let k = i * 32 + j;
                    let (a, b) = (p[k] * 95.0 / 255.0 - 10.0 >= th, g[k] * 95.0 / 255.0 - 10.0 >= th);
                    match (a, b) {
                        (true, true) => tp += 1,
                        (false, true) => fn_ += 1,
                        (true, false) => fp += 1,
                        (false, false) => tn += 1,
                    }
                }
            }
            let c = confusion_counts(&pd, &gd, th)?;
            let h_den = (tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn);
            let h = if h_den == 0 { 0.0 } else { (2 * (tp * tn - fn_ * fp)) as f64 / h_den as f64 };
            let s_den = tp + fn_ + fp;
            let s = if s_den == 0 { 0.0 } else { tp as f64 / s_den as f64 };
            skill_ok &= [c.tp, c.fn_, c.fp, c.tn] == [tp as u64, fn_ as u64, fp as u64, tn as u64]
                && hss(&c).value == h
                && csi(&c).value == s;
        }
    }
    let endpoints = dbz(0.0) == -10.0 && dbz(255.0) == 85.0;

    let x: Vec<f64> = (0..64 * 64).map(|_| rng.gen()).collect();
    let self_ssim = ssim(&x, &x, 64, 64, 1.0)?.value;

    let a = Tensor::<f64>::uniform(&[3, 4, 2, 8, 8], 0.0, 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[3, 4, 2, 8, 8], 0.0, 1.0, &mut rng);
    let (m, e) = (mse(&a, &b)?, mae(&a, &b)?);
    let mut worst: f64 = 0.0;
    for t in 0..4 {
        let (mut sq, mut ab) = (0.0, 0.0);
        for n in 0..3 {
            for k in 0..128 {
                let i = (n * 4 + t) * 128 + k;
                let d = a.data()[i] - b.data()[i];
                sq += d * d;
                ab += d.abs();
            }
        }
        worst = worst
            .max((m.per_frame[t] - sq / 384.0).abs())
            .max((e.per_frame[t] - ab / 384.0).abs());
    }
    Ok(outcome(
        skill_ok && endpoints && (self_ssim - 1.0).abs() <= 1e-9 && worst <= 1e-12,
        format!(
            "HSS/CSI on 100 grids x 3 thresholds: {}; dBZ endpoints {endpoints}; ssim(x,x)-1 = {:.1e}; \
             MSE/MAE oracle gap {:.1e}",
            if skill_ok { "exact" } else { "MISMATCH" },
            self_ssim - 1.0,
            worst
        ),
    ))
}

fn losses() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred = Tensor::<f64>::uniform(&[2, 4, 1, 6, 6], 0.0, 1.0, &mut rng);
    let truth = Tensor::<f64>::uniform(&[2, 4, 1, 6, 6], 0.0, 1.0, &mut rng);
    let lat = |rng: &mut ChaCha8Rng| {
        [
            Tensor::<f64>::uniform(&[2, 3, 2, 2], -1.0, 1.0, rng),
            Tensor::<f64>::uniform(&[2, 5, 2, 2], -1.0, 1.0, rng),
            Tensor::<f64>::uniform(&[2, 5, 2, 2], -1.0, 1.0, rng),
        ]
    };
    let pl = vec![lat(&mut rng), lat(&mut rng)];
    let tl = vec![lat(&mut rng), lat(&mut rng)];
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w = LossWeights {
            lambda0: rng.gen_range(0.0..2.0),
            lambda1: rng.gen_range(0.0..2.0),
            lambda2: rng.gen_range(0.0..2.0),
            lambda3: rng.gen_range(0.0..2.0),
        };
        let l = compute_losses(&pred, &truth, &pl, &tl, &w)?;
        let sum = l.l_y + w.lambda1 * l.l_x + w.lambda2 * l.l_z + w.lambda3 * l.l_xi;
        worst = worst.max(rel(l.total, sum));
    }

    let w = ExperimentConfig::preset("mnist")?.loss;
    let l = compute_losses(&pred, &truth, &pl, &tl, &w)?;
    let (mut sq, mut ab) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(truth.data()) {
        sq += (p - t) * (p - t);
        ab += (p - t).abs();
    }
    let frame_only = (sq + w.lambda0 * ab) / (2.0 * 4.0);
    Ok(outcome(
        worst <= 1e-12 && l.total == l.l_y && rel(l.l_y, frame_only) <= 1e-12,
        format!(
            "composition rel gap {worst:.1e} over 50 weight draws; moving-mnist weights: total == L_y {}, \
             L_y vs oracle {:.1e}",
            l.total == l.l_y,
            rel(l.l_y, frame_only)
        ),
    ))
}

fn run_cli(cmd: Command) -> stob::Result<()> {
    match cli::dispatch(cmd)? {
        0 => Ok(()),
        code => Err(stob::Error::Contract(format!("command exited with {code}"))),
    }
}

fn learning(dir: &Path) -> Check {
    let start = Instant::now();
    let train = dir.join("train.stds");
    let test = dir.join("test.stds");
    for (n, seed, out) in [(2000, 0, &train), (200, 1, &test)] {
        run_cli(Command::Generate {
            kind: KindArg::Blobs,
            n,
            t: 8,
            hw: 64,
            seed,
            out: out.clone(),
        })?;
    }
    let ckpt = dir.join("desk.stob");
    run_cli(Command::Train {
        config: "mnist-desk".into(),
        data: Some(train),
        out: ckpt.clone(),
        log: None,
        epochs: None,
        resume: false,
    })?;
    let stem = dir.join("metrics");
    run_cli(Command::Evaluate {
        ckpt: ckpt.clone(),
        data: test.clone(),
        out: stem.clone(),
        thresholds: vec![5.0, 20.0, 40.0],
        bound: false,
    })?;
    let report = MetricsReport::load(&stem.with_extension("json"))?;
    let seqs = DatasetFile::<f32>::read(&test)?.frames;
    let cfg = ExperimentConfig::preset("mnist-desk")?;
    let (y_in, y_out) = stob::learning::split_frames(&seqs, cfg.model.t_in, cfg.model.t_out)?;
    let persistence = cli::persistence_mse(&y_in, &y_out)?;
    let ratio = report.aggregate.mse / persistence;
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        ratio <= 0.5 && cfg.training.epochs <= 50,
        format!(
            "test MSE {:.5} vs persistence {:.5} (ratio {:.3}) after {} epochs in {:.0}s; framewise MSE [{}]",
            report.aggregate.mse,
            persistence,
            ratio,
            cfg.training.epochs,
            secs,
            report
                .per_frame
                .mse
                .iter()
                .map(|v| format!("{v:.5}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ))
}

fn bounds(dir: &Path) -> Check {
    let mut scale_gap: f64 = 0.0;
    for n in [10.0, 1234.0, 2.0e5] {
        let ratio = rademacher_term(n, 37.0, 5.5, 2.0) / rademacher_term(2.0 * n, 37.0, 5.5, 2.0);
        scale_gap = scale_gap.max(rel(ratio, 2f64.powf(5.0 / 8.0)));
    }
    let ckpt = dir.join("desk.stob");
    if !ckpt.exists() {
        return Ok(outcome(false, "no trained checkpoint"));
    }
    let (cfg, model) = cli::load_model::<f64>(&ckpt)?;
    let seqs = DatasetFile::<f64>::read(&dir.join("train.stds"))?.frames;
    let settings = cli::bound_settings(&cfg.model, &seqs, 1.0, 1.0, 0.05)?;
    let d = bound_diagnostics(&bound_inputs(&model, settings, cfg.seed)?)?;
    let identity = rel(d.r, (d.r_s.sqrt() + d.r_v.sqrt()).powi(2));
    let finite = [d.r_s, d.r_v, d.r, d.rademacher_term, d.bound_gap].iter().all(|v| v.is_finite());
    Ok(outcome(
        scale_gap <= 1e-12 && identity <= 1e-12 && finite,
        format!(
            "n vs 2n ratio gap {scale_gap:.1e}; R identity gap {identity:.1e}; trained: R_S {:.3e}, R_V {:.3e}, \
             R {:.3e}, term {:.3e}",
            d.r_s, d.r_v, d.r, d.rademacher_term
        ),
    ))
}

fn recursion() -> Check {
    let base = ExperimentConfig::preset("cikm-desk")?.model;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = Tensor::<f64>::uniform(&[1, base.t_in, 1, base.height, base.width], 0.0, 1.0, &mut rng);
    let mut outs = Vec::new();
    let mut chained = true;
    let mut decays = true;
    for handoff in [Handoff::Chain, Handoff::Recompute] {
        let cfg = ObserverConfig {
            handoff,
            ..base.clone()
        };
        let model = ObserverModel::<f64>::new(cfg, 2)?;
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let r = rollout(&model, &mut tape, &b, yv, base.t_out)?;
        let future: Vec<_> = r.future_steps().collect();
        chained &= future.len() == 2
            && future[0].source == InputSource::Observed(0)
            && future[1].source == InputSource::Predicted(0);
        outs.push(tape.value(r.frames).clone());
        decays &= (0..3).map(|s| decay_probe(&model, s, 50)).all(|c| c.is_ok_and(|c| c.report.holds()));
    }
    let diff = outs[0].zip_map(&outs[1], |a, b| a - b)?.max_abs();
    let first_same = outs[0].narrow_axis1(0, base.delta)?.data() == outs[1].narrow_axis1(0, base.delta)?.data();
    Ok(outcome(
        chained && diff > 0.0 && first_same && decays,
        format!(
            "5 -> 10 with group size 5: two steps, second fed by the first: {chained}; first group equal across \
             hand-off modes: {first_same}; max |chain - recompute| {diff:.3e}; decay holds in both: {decays}"
        ),
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let checks: Vec<Criterion> = vec![
        ("gradient soundness", Box::new(gradients)),
        ("latent decay", Box::new(decay)),
        ("structural exactness", Box::new(structure)),
        ("metric oracles", Box::new(metrics)),
        ("loss composition", Box::new(losses)),
        ("desk-scale learning", Box::new(|| learning(dir.path()))),
        ("bound diagnostics", Box::new(|| bounds(dir.path()))),
        ("multi-step recursion", Box::new(recursion)),
    ];
    let mut failed = 0;
    let total = Instant::now();
    for (i, (name, f)) in checks.iter().enumerate() {
        let t = Instant::now();
        let o = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {}: {} ({}) [{:.1}s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0?}",
        checks.len() - failed,
        Duration::from_secs(total.elapsed().as_secs())
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
