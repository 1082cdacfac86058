use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig, StepOutcome};
use super::loss::{batch_loss, LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::observer::ObserverModel;
use crate::tensor::{Scalar, Tape, Tensor};

/// Consecutive skipped updates after which training stops.
pub const MAX_CONSECUTIVE_SKIPS: u32 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    pub loss: LossBreakdown,
    pub seconds: f64,
    pub batches: usize,
    pub skipped: usize,
}

/// Splits `[N, T, C, H, W]` sequences into the observed prefix and the
/// `t_out` frames that follow it.
pub fn split_frames<T: Scalar>(
    seqs: &Tensor<T>,
    t_in: usize,
    t_out: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if seqs.rank() != 5 || seqs.shape()[1] < t_in + t_out {
        return Err(Error::dim(
            "sequence",
            format!("{:?} does not hold {t_in} + {t_out} frames", seqs.shape()),
        ));
    }
    Ok((seqs.narrow_axis1(0, t_in)?, seqs.narrow_axis1(t_in, t_out)?))
}

/// Samples `idx` of `data` along axis 0.
pub fn gather<T: Scalar>(data: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let inner: usize = data.shape()[1..].iter().product();
    let mut out = Vec::with_capacity(idx.len() * inner);
    for &i in idx {
        if i >= data.shape()[0] {
            return Err(Error::dim("sample", format!("index {i} out of range")));
        }
        out.extend_from_slice(&data.data()[i * inner..(i + 1) * inner]);
    }
    let mut shape = data.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(&shape, out)
}

/// Model, optimizer and shuffling state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: ObserverModel<T>,
    pub optimizer: Adam<T>,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub rng: ChaCha8Rng,
    pub epoch: u64,
    pub consecutive_skips: u32,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        model: ObserverModel<T>,
        adam: AdamConfig,
        weights: LossWeights,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        adam.validate()?;
        weights.validate()?;
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let optimizer = Adam::new(adam, &model.store);
        Ok(Self {
            model,
            optimizer,
            weights,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
            consecutive_skips: 0,
        })
    }

    /// One pass over `data` (`[N, T, C, H, W]`, `T >= t_in + t_out`) in a
    /// freshly shuffled order.
    pub fn train_epoch(&mut self, data: &Tensor<T>) -> Result<EpochStats> {
        let n = data.shape().first().copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::Contract("training set is empty".into()));
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let (t_in, t_out) = (self.model.config.t_in, self.model.config.t_out);

        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        let mut skipped = 0;
        let mut samples = 0;
        for (bi, idx) in order.chunks(self.batch_size).enumerate() {
            let batch = gather(data, idx)?;
            let (y_in, y_out) = split_frames(&batch, t_in, t_out)?;
            let mut tape = Tape::new();
            let binding = self.model.store.bind(&mut tape, true);
            let lv = batch_loss(&self.model, &mut tape, &binding, &y_in, &y_out, &self.weights)
                .map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!("batch {bi}: {msg}")),
                    other => other,
                })?;
            let values = lv.values(&tape);
            let mut grads = tape.backward(lv.total)?;
            drop(tape);
            self.model.store.assign_grads(&binding, &mut grads);
            let outcome = if values.total.is_finite() {
                self.optimizer.step(&mut self.model.store)?
            } else {
                StepOutcome::Skipped
            };
            self.model.store.zero_grads();
            match outcome {
                StepOutcome::Applied => {
                    self.consecutive_skips = 0;
                    sum.accumulate(&values.scaled(idx.len() as f64));
                    batches += 1;
                    samples += idx.len();
                }
                StepOutcome::Skipped => {
                    skipped += 1;
                    self.consecutive_skips += 1;
                    log::warn!("epoch {} batch {bi}: non-finite gradient, update skipped", self.epoch + 1);
                    if self.consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
                        return Err(Error::Numerical(format!(
                            "batch {bi}: {MAX_CONSECUTIVE_SKIPS} consecutive non-finite updates"
                        )));
                    }
                }
            }
        }
        self.epoch += 1;
        let loss = if samples > 0 {
            sum.scaled(1.0 / samples as f64)
        } else {
            LossBreakdown::default()
        };
        Ok(EpochStats {
            epoch: self.epoch,
            loss,
            seconds: start.elapsed().as_secs_f64(),
            batches,
            skipped,
        })
    }
}

/// Mean loss over `data` without updating anything.
pub fn evaluate_loss<T: Scalar>(
    model: &ObserverModel<T>,
    data: &Tensor<T>,
    weights: &LossWeights,
    batch_size: usize,
) -> Result<LossBreakdown> {
    let n = data.shape()[0];
    let mut sum = LossBreakdown::default();
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = gather(data, chunk)?;
        let (y_in, y_out) = split_frames(&batch, model.config.t_in, model.config.t_out)?;
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape, false);
        let lv = batch_loss(model, &mut tape, &b, &y_in, &y_out, weights)?;
        sum.accumulate(&lv.values(&tape).scaled(chunk.len() as f64));
    }
    Ok(sum.scaled(1.0 / n as f64))
}

/// Per-epoch CSV log `epoch,L_y,L_x,L_z,L_xi,total,seconds`.
pub struct MetricsLog {
    out: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            out: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        };
        log.line("epoch,L_y,L_x,L_z,L_xi,total,seconds")?;
        Ok(log)
    }

    /// Continues an existing log, writing the header only if the file is new.
    pub fn append(path: &Path) -> Result<Self> {
        let fresh = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            out: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        };
        if fresh {
            log.line("epoch,L_y,L_x,L_z,L_xi,total,seconds")?;
        }
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn record(&mut self, stats: &EpochStats) -> Result<()> {
        let l = &stats.loss;
        self.line(&format!(
            "{},{},{},{},{},{},{:.3}",
            stats.epoch, l.l_y, l.l_x, l.l_z, l.l_xi, l.total, stats.seconds
        ))
    }
}
