use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bound::BoundDiagnostics;
use super::metrics::{mae, mse, ssim_framewise};
use super::radar::{confusion_counts, csi, dbz_normalized, hss, ConfusionCounts, Score};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerFrame {
    pub mse: Vec<f64>,
    pub mae: Vec<f64>,
    pub ssim: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    /// Some frame was below the SSIM window and used global statistics.
    pub ssim_global_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub hss: f64,
    pub csi: f64,
    pub hss_degenerate: bool,
    pub csi_degenerate: bool,
    pub counts: ConfusionCounts,
}

impl Skill {
    fn from_counts(counts: ConfusionCounts) -> Self {
        let (h, c): (Score, Score) = (hss(&counts), csi(&counts));
        Self {
            hss: h.value,
            csi: c.value,
            hss_degenerate: h.degenerate,
            csi_degenerate: c.degenerate,
            counts,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub per_frame: PerFrame,
    pub aggregate: Aggregate,
    /// Keyed by the dBZ threshold.
    pub thresholds: BTreeMap<String, Skill>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundDiagnostics>,
}

/// Hex SHA-256 of a configuration document.
pub fn config_hash(canonical_json: &str) -> String {
    hex::encode(Sha256::digest(canonical_json.as_bytes()))
}

fn threshold_key(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Metrics of normalized predictions against the truth (`[N,] T, C, H, W`).
/// Skill scores pool every pixel per threshold after mapping `[0, 1]` to dBZ.
pub fn evaluate<T: Scalar>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
    thresholds: &[f64],
    config_hash: String,
) -> Result<MetricsReport> {
    let m = mse(pred, truth)?;
    let a = mae(pred, truth)?;
    let (s, global) = ssim_framewise(pred, truth, 1.0)?;
    let p: Vec<f64> = pred.data().iter().map(|v| dbz_normalized(v.as_f64())).collect();
    let g: Vec<f64> = truth.data().iter().map(|v| dbz_normalized(v.as_f64())).collect();
    let mut skills = BTreeMap::new();
    for &t in thresholds {
        skills.insert(threshold_key(t), Skill::from_counts(confusion_counts(&p, &g, t)?));
    }
    Ok(MetricsReport {
        config_hash,
        aggregate: Aggregate {
            mse: m.mean,
            mae: a.mean,
            ssim: s.mean,
            ssim_global_fallback: global,
        },
        per_frame: PerFrame {
            mse: m.per_frame,
            mae: a.per_frame,
            ssim: s.per_frame,
        },
        thresholds: skills,
        bound: None,
    })
}

/// Per-frame skill scores, each frame index pooled over samples.
pub fn skill_per_frame<T: Scalar>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
    threshold: f64,
) -> Result<Vec<Skill>> {
    let r = pred.rank();
    if pred.shape() != truth.shape() || !(r == 4 || r == 5) {
        return Err(Error::dim("sequence", "expected matching [N,] T, C, H, W"));
    }
    let (n, t) = if r == 5 { (pred.shape()[0], pred.shape()[1]) } else { (1, pred.shape()[0]) };
    let frame = pred.numel() / (n * t);
    let mut out = Vec::with_capacity(t);
    for k in 0..t {
        let mut c = ConfusionCounts::default();
        for s in 0..n {
            let off = (s * t + k) * frame;
            let conv = |x: &[T]| x.iter().map(|v| dbz_normalized(v.as_f64())).collect::<Vec<_>>();
            let counts = confusion_counts(
                &conv(&pred.data()[off..off + frame]),
                &conv(&truth.data()[off..off + frame]),
                threshold,
            )?;
            c.merge(&counts);
        }
        out.push(Skill::from_counts(c));
    }
    Ok(out)
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `frame,mse,mae,ssim` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,mse,mae,ssim\n");
        let pf = &self.per_frame;
        for i in 0..pf.mse.len() {
            let _ = writeln!(s, "{},{},{},{}", i + 1, pf.mse[i], pf.mae[i], pf.ssim[i]);
        }
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn emit(&self, stem: &Path) -> Result<()> {
        let json = stem.with_extension("json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = stem.with_extension("csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Binary PGM (`P5`, maxval 255) of an `h x w` frame with values in `[0, 1]`.
pub fn pgm_bytes(frame: &[f64], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Dumps ground truth, prediction and `|GT - PF|` frames of one
/// `[T, C, H, W]` sequence as `gt_TT_cC.pgm`, `pf_...` and `diff_...`.
pub fn render_frames<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>, dir: &Path) -> Result<usize> {
    if pred.shape() != truth.shape() || pred.rank() != 4 {
        return Err(Error::dim("sequence", "expected matching [T, C, H, W]"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [t, c, h, w] = [pred.shape()[0], pred.shape()[1], pred.shape()[2], pred.shape()[3]];
    let mut written = 0;
    for k in 0..t {
        for ch in 0..c {
            let off = (k * c + ch) * h * w;
            let p: Vec<f64> = pred.data()[off..off + h * w].iter().map(|v| v.as_f64()).collect();
            let g: Vec<f64> = truth.data()[off..off + h * w].iter().map(|v| v.as_f64()).collect();
            let d: Vec<f64> = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).collect();
            for (tag, frame) in [("gt", &g), ("pf", &p), ("diff", &d)] {
                let path = dir.join(format!("{tag}_{:02}_c{ch}.pgm", k + 1));
                std::fs::write(&path, pgm_bytes(frame, h, w)).map_err(|e| Error::io(&path, e))?;
                written += 1;
            }
        }
    }
    Ok(written)
}
