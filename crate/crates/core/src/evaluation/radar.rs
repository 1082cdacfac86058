//! Reflectivity conversion and thresholded categorical scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel value in `[0, 255]` to reflectivity in dBZ.
pub fn dbz(p: f64) -> f64 {
    p * 95.0 / 255.0 - 10.0
}

/// Normalized pixel value in `[0, 1]` to dBZ.
pub fn dbz_normalized(v: f64) -> f64 {
    dbz(v * 255.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn merge(&mut self, o: &Self) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.fp += o.fp;
        self.tn += o.tn;
    }
}

/// Binarizes both fields at `value >= threshold` and counts agreement.
pub fn confusion_counts(pred_dbz: &[f64], truth_dbz: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    if pred_dbz.len() != truth_dbz.len() {
        return Err(Error::dim(
            "pixels",
            format!("{} predicted vs {} observed", pred_dbz.len(), truth_dbz.len()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred_dbz.iter().zip(truth_dbz) {
        match (p >= threshold, t >= threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fn_ += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// A score with a flag set when its denominator vanished and 0 was returned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: i128, den: i128) -> Score {
    if den == 0 {
        Score {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Score {
            value: num as f64 / den as f64,
            degenerate: false,
        }
    }
}

/// Heidke skill score `2(TP*TN - FN*FP) / ((TP+FN)(FN+TN) + (TP+FP)(FP+TN))`.
pub fn hss(c: &ConfusionCounts) -> Score {
    let (tp, fn_, fp, tn) = (c.tp as i128, c.fn_ as i128, c.fp as i128, c.tn as i128);
    ratio(2 * (tp * tn - fn_ * fp), (tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn))
}

/// Critical success index `TP / (TP + FN + FP)`.
pub fn csi(c: &ConfusionCounts) -> Score {
    ratio(c.tp as i128, (c.tp + c.fn_ + c.fp) as i128)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn dbz_points() {
        assert_eq!(dbz(0.0), -10.0);
        assert_eq!(dbz(255.0), 85.0);
        assert_eq!(dbz(127.5), 37.5);
    }

    #[test]
    fn score_cases() {
        let perfect = ConfusionCounts { tp: 5, fn_: 0, fp: 0, tn: 7 };
        assert_eq!(hss(&perfect).value, 1.0);
        assert_eq!(csi(&perfect).value, 1.0);
        let c = ConfusionCounts { tp: 1, fn_: 1, fp: 2, tn: 0 };
        assert_eq!(csi(&c).value, 0.25);
        let none = ConfusionCounts { tp: 0, fn_: 0, fp: 0, tn: 9 };
        assert_eq!(hss(&none), Score { value: 0.0, degenerate: true });
        assert_eq!(csi(&none), Score { value: 0.0, degenerate: true });
        let c = ConfusionCounts { tp: 0, fn_: 3, fp: 1, tn: 2 };
        assert_eq!(csi(&c), Score { value: 0.0, degenerate: false });
        let all_fp = confusion_counts(&[50.0; 4], &[0.0; 4], 20.0).unwrap();
        assert_eq!(all_fp, ConfusionCounts { tp: 0, fn_: 0, fp: 4, tn: 0 });
        // ties count as positive
        assert_eq!(confusion_counts(&[20.0], &[20.0], 20.0).unwrap().tp, 1);
    }

    proptest! {
        #[test]
        fn score_ranges(tp in 0u64..1000, fn_ in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000) {
            let c = ConfusionCounts { tp, fn_, fp, tn };
            let h = hss(&c).value;
            let s = csi(&c).value;
            prop_assert!((-1.0..=1.0).contains(&h));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s == 1.0, fn_ == 0 && fp == 0 && tp > 0);
            prop_assert_eq!(h == 1.0, fn_ == 0 && fp == 0 && tp > 0 && tn > 0);
        }

        #[test]
        fn counts_conserve_pixels(v in prop::collection::vec((0.0f64..255.0, 0.0f64..255.0), 1..200), th in -10.0f64..85.0) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.iter().map(|&(a, b)| (dbz(a), dbz(b))).unzip();
            let c = confusion_counts(&p, &t, th).unwrap();
            prop_assert_eq!(c.total() as usize, v.len());
        }
    }
}
