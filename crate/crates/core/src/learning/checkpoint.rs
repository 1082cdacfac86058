//! Binary training snapshots.
//!
//! Layout (little-endian): magic `STOB`, `u32` version, config JSON
//! (`u32` length + bytes), `u32` parameter count and one record per
//! parameter (`u32` name length, name, `u8` dtype tag, `u32` rank, `u64`
//! extents, payload), the Adam section (`lr`, `beta1`, `beta2`, `eps` as
//! `f64`, `u64` step, first then second moment records), `u64` epoch, `u32`
//! consecutive skips, and the shuffling RNG (32-byte seed, `u64` stream,
//! `u128` word position).

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde_json::Value;

use super::adam::{Adam, AdamConfig};
use super::trainer::Trainer;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"STOB";
pub const VERSION: u32 = 1;

/// Decoded snapshot.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config_json: String,
    pub params: Vec<(String, Tensor<T>)>,
    pub adam: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub epoch: u64,
    pub consecutive_skips: u32,
    pub rng: ChaCha8Rng,
}

/// Serializes `value` with sorted keys and no whitespace.
pub fn canonical_json<S: serde::Serialize>(value: &S) -> Result<String> {
    // serde_json's map type keeps keys sorted
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Human-readable list of keys whose values differ between two JSON documents.
pub fn config_diff(expected: &str, found: &str) -> Result<Vec<String>> {
    let (mut a, mut b) = (BTreeMap::new(), BTreeMap::new());
    flatten("", &serde_json::from_str(expected)?, &mut a);
    flatten("", &serde_json::from_str(found)?, &mut b);
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let missing = "<absent>".to_string();
    Ok(keys
        .into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| {
            format!(
                "{k}: expected {}, checkpoint has {}",
                a.get(k).unwrap_or(&missing),
                b.get(k).unwrap_or(&missing)
            )
        })
        .collect())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_trainer(trainer: &Trainer<T>, config_json: &str) -> Self {
        Self {
            config_json: config_json.to_string(),
            params: trainer
                .model
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            adam: trainer.optimizer.config,
            step: trainer.optimizer.step,
            m: trainer.optimizer.m.clone(),
            v: trainer.optimizer.v.clone(),
            epoch: trainer.epoch,
            consecutive_skips: trainer.consecutive_skips,
            rng: trainer.rng.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&self.config_json);
        w.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            w.tensor(name, t);
        }
        w.f64(self.adam.lr);
        w.f64(self.adam.beta1);
        w.f64(self.adam.beta2);
        w.f64(self.adam.eps);
        w.u64(self.step);
        for moments in [&self.m, &self.v] {
            for ((name, _), t) in self.params.iter().zip(moments) {
                w.tensor(name, t);
            }
        }
        w.u64(self.epoch);
        w.u32(self.consecutive_skips);
        w.bytes(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.bytes(&self.rng.get_word_pos().to_le_bytes());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let config_json = r.str("config")?;
        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let (name, _, t) = r.tensor()?;
            params.push((name, t));
        }
        let adam = AdamConfig {
            lr: r.f64("lr")?,
            beta1: r.f64("beta1")?,
            beta2: r.f64("beta2")?,
            eps: r.f64("eps")?,
        };
        let step = r.u64("step")?;
        let mut moments = [Vec::new(), Vec::new()];
        for slot in &mut moments {
            for (name, p) in &params {
                let at = r.offset();
                let (mname, _, t) = r.tensor::<T>()?;
                if &mname != name || t.shape() != p.shape() {
                    return Err(Error::Format {
                        offset: at,
                        msg: format!("moment record {mname} does not match parameter {name}"),
                    });
                }
                slot.push(t);
            }
        }
        let [m, v] = moments;
        let epoch = r.u64("epoch")?;
        let consecutive_skips = r.u32("skip counter")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
        let stream = r.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().unwrap());
        r.finish()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            config_json,
            params,
            adam,
            step,
            m,
            v,
            epoch,
            consecutive_skips,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses unless the stored configuration equals `expected_json`.
    pub fn check_config(&self, expected_json: &str) -> Result<()> {
        let diff = config_diff(expected_json, &self.config_json)?;
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Mismatch(diff.join("; ")))
        }
    }

    /// Overwrites the values of a store with the same layout.
    pub fn apply_params(&self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Mismatch(format!(
                "model has {} parameters, checkpoint {}",
                store.len(),
                self.params.len()
            )));
        }
        for (p, (name, t)) in store.iter().zip(&self.params) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {} {:?} vs checkpoint {name} {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
        }
        for (p, (_, t)) in store.iter_mut().zip(&self.params) {
            p.value = t.clone();
            p.grad = None;
        }
        Ok(())
    }

    /// Copies the snapshot into a trainer built from the same configuration.
    pub fn restore_into(&self, trainer: &mut Trainer<T>, expected_json: &str) -> Result<()> {
        self.check_config(expected_json)?;
        self.apply_params(&mut trainer.model.store)?;
        trainer.optimizer = Adam {
            config: self.adam,
            step: self.step,
            m: self.m.clone(),
            v: self.v.clone(),
        };
        trainer.epoch = self.epoch;
        trainer.consecutive_skips = self.consecutive_skips;
        trainer.rng = self.rng.clone();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::LossWeights;
    use crate::observer::{ObserverConfig, ObserverModel};

    fn trainer() -> Trainer<f64> {
        let m = ObserverModel::new(ObserverConfig::micro(), 0).unwrap();
        Trainer::new(m, AdamConfig::with_lr(1e-3), LossWeights::default(), 2, 0).unwrap()
    }

    #[test]
    fn byte_identical_round_trip() {
        let mut t = trainer();
        let data = Tensor::<f64>::full(&[3, 4, 1, 16, 16], 0.5);
        t.train_epoch(&data).unwrap();
        let cfg = canonical_json(&t.model.config).unwrap();
        let a = Checkpoint::from_trainer(&t, &cfg).to_bytes();
        let b = Checkpoint::<f64>::from_bytes(&a).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatch_lists_keys() {
        let t = trainer();
        let cfg = canonical_json(&t.model.config).unwrap();
        let ck = Checkpoint::from_trainer(&t, &cfg);
        let mut other = t.model.config.clone();
        other.c_s = 4;
        let err = ck.check_config(&canonical_json(&other).unwrap()).unwrap_err();
        assert!(matches!(&err, Error::Mismatch(m) if m.contains("c_s")), "{err}");
    }

    #[test]
    fn format_errors() {
        let t = trainer();
        let bytes = Checkpoint::from_trainer(&t, "{}").to_bytes();
        let err = Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(Checkpoint::<f64>::load(Path::new("")), Err(Error::Io { .. })));
    }
}
