//! Segmentation metrics (IoU, sensitivity, accuracy, ROC AUC) and the poly
//! learning-rate schedule.

use std::fmt;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProbabilityMap3D, VoxelMask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn confusion(pred: &VoxelMask, gt: &VoxelMask) -> Result<ConfusionCounts> {
    gt.check_dims(pred.dims())?;
    let mut c = ConfusionCounts::default();
    Zip::from(pred.data())
        .and(gt.data())
        .for_each(|&p, &g| match (p, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        });
    Ok(c)
}

/// A ratio that may have had a zero denominator. 0/0 is reported as 1.0
/// (empty prediction against empty truth is a perfect match) and flagged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> Ratio {
    if den == 0 {
        Ratio {
            value: 1.0,
            degenerate: true,
        }
    } else {
        Ratio {
            value: num as f64 / den as f64,
            degenerate: false,
        }
    }
}

/// TP / (TP + FP + FN)
pub fn iou(c: &ConfusionCounts) -> Ratio {
    ratio(c.tp, c.tp + c.fp + c.fn_)
}

/// TP / (TP + FN)
pub fn sen(c: &ConfusionCounts) -> Ratio {
    ratio(c.tp, c.tp + c.fn_)
}

/// (TP + TN) / (TP + FP + TN + FN)
pub fn acc(c: &ConfusionCounts) -> Ratio {
    ratio(c.tp + c.tn, c.total())
}

/// Area under the ROC curve over the voxels of `region` (all voxels when
/// absent). The curve steps through every distinct score and the area is
/// integrated with the trapezoidal rule, which counts tied
/// positive/negative pairs as one half.
pub fn auc(scores: &ProbabilityMap3D, gt: &VoxelMask, region: Option<&VoxelMask>) -> Result<f64> {
    let dims = scores.dims();
    gt.check_dims(dims)?;
    if let Some(r) = region {
        r.check_dims(dims)?;
    }
    let mut pairs: Vec<(f32, bool)> = match region {
        Some(r) => scores
            .data()
            .iter()
            .zip(gt.data().iter())
            .zip(r.data().iter())
            .filter(|(_, &keep)| keep)
            .map(|((&s, &g), _)| (s, g))
            .collect(),
        None => scores
            .data()
            .iter()
            .copied()
            .zip(gt.data().iter().copied())
            .collect(),
    };
    auc_of_pairs(&mut pairs)
}

/// Trapezoidal ROC area of `(score, is_positive)` pairs.
pub fn auc_of_pairs(pairs: &mut [(f32, bool)]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.1).count() as u128;
    let negatives = pairs.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // twice the area in units of (one positive) x (one negative)
    let mut doubled: u128 = 0;
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut i = 0;
    while i < pairs.len() {
        let score = pairs[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < pairs.len() && pairs[i].0 == score {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled += (fp - fp0) * (tp + tp0);
    }
    Ok(doubled as f64 / (2 * positives * negatives) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub base_lr: f64,
    pub iter: u64,
    pub max_iter: u64,
    pub power: f64,
}

/// `base_lr * (1 - iter / max_iter)^power`
pub fn poly_lr(p: &ScheduleParams) -> Result<f64> {
    if p.max_iter == 0 {
        return Err(Error::Domain("max_iter must be positive".into()));
    }
    if p.iter > p.max_iter {
        return Err(Error::Domain(format!(
            "iter {} exceeds max_iter {}",
            p.iter, p.max_iter
        )));
    }
    if !(p.base_lr > 0.0 && p.power > 0.0) {
        return Err(Error::Domain("base_lr and power must be positive".into()));
    }
    if p.iter == 0 {
        return Ok(p.base_lr);
    }
    let remaining = 1.0 - p.iter as f64 / p.max_iter as f64;
    Ok(p.base_lr * remaining.powf(p.power))
}

/// One evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou: f64,
    pub sen: f64,
    pub acc: f64,
    pub auc: Option<f64>,
    pub flags: Vec<String>,
}

impl MetricsReport {
    pub fn evaluate(
        pred: &VoxelMask,
        gt: &VoxelMask,
        scores: Option<&ProbabilityMap3D>,
    ) -> Result<Self> {
        let c = confusion(pred, gt)?;
        let mut report = Self::from_counts(&c);
        match scores.map(|s| auc(s, gt, None)) {
            Some(Ok(a)) => report.auc = Some(a),
            Some(Err(Error::UndefinedAuc)) => report.flags.push("auc_undefined".into()),
            Some(Err(e)) => return Err(e),
            None => report.flags.push("auc_absent".into()),
        }
        Ok(report)
    }

    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let mut flags = Vec::new();
        let mut take = |name: &str, r: Ratio| {
            if r.degenerate {
                flags.push(format!("{name}_degenerate"));
            }
            r.value
        };
        let iou = take("iou", iou(c));
        let sen = take("sen", sen(c));
        let acc = take("acc", acc(c));
        Self {
            iou,
            sen,
            acc,
            auc: None,
            flags,
        }
    }

    pub const CSV_HEADER: &'static str = "method,iou,sen,acc,auc,flags";

    pub fn csv_row(&self, method: &str) -> String {
        let auc = self
            .auc
            .map_or_else(|| "NA".to_string(), |a| format!("{a:.6}"));
        format!(
            "{method},{:.6},{:.6},{:.6},{auc},{}",
            self.iou,
            self.sen,
            self.acc,
            self.flags.join(";")
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "IoU {:.4} SEN {:.4} ACC {:.4}",
            self.iou, self.sen, self.acc
        )?;
        if let Some(a) = self.auc {
            write!(f, " AUC {a:.4}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn mask(v: &[bool]) -> VoxelMask {
        VoxelMask::new(Array3::from_shape_vec((1, 1, v.len()), v.to_vec()).unwrap())
    }

    fn counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    #[test]
    fn confusion_cases() {
        let c = confusion(&mask(&[true, true, false]), &mask(&[true, false, false])).unwrap();
        assert_eq!(c, counts(1, 1, 1, 0));
        let m = mask(&[true, false, true]);
        let c = confusion(&m, &m).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&mask(&[false; 5]), &mask(&[false; 5])).unwrap();
        assert_eq!(c.tn, 5);
        assert!(confusion(&mask(&[false; 5]), &mask(&[false; 4])).is_err());
    }

    #[test]
    fn ratio_formulas() {
        assert_eq!(iou(&counts(2, 0, 1, 1)).value, 0.5);
        assert_eq!(acc(&counts(1, 7, 1, 1)).value, 0.8);
        let s = sen(&counts(0, 3, 2, 0));
        assert_eq!(s.value, 1.0);
        assert!(s.degenerate);
    }

    #[test]
    fn small_aucs() {
        assert_eq!(auc_of_pairs(&mut [(0.9, true), (0.8, false)]).unwrap(), 1.0);
        assert_eq!(auc_of_pairs(&mut [(0.5, true), (0.5, false)]).unwrap(), 0.5);
        let mut v = [(0.1, false), (0.4, false), (0.35, true), (0.8, true)];
        assert_eq!(auc_of_pairs(&mut v).unwrap(), 0.75);
        assert!(matches!(
            auc_of_pairs(&mut [(0.1, true)]),
            Err(Error::UndefinedAuc)
        ));
    }

    #[test]
    fn auc_region_restricts() {
        let s = ProbabilityMap3D::new(
            Array3::from_shape_vec((1, 1, 4), vec![0.9, 0.1, 0.2, 0.8]).unwrap(),
        )
        .unwrap();
        let gt = mask(&[true, false, true, false]);
        assert_eq!(auc(&s, &gt, None).unwrap(), 0.75);
        let region = mask(&[true, true, false, false]);
        assert_eq!(auc(&s, &gt, Some(&region)).unwrap(), 1.0);
    }

    #[test]
    fn poly_schedule() {
        let p = |iter, max_iter| ScheduleParams {
            base_lr: 1e-4,
            iter,
            max_iter,
            power: 0.9,
        };
        assert_eq!(poly_lr(&p(0, 100)).unwrap(), 1e-4);
        assert_eq!(poly_lr(&p(100, 100)).unwrap(), 0.0);
        // (0.75)^0.9 evaluated at 40 digits
        let expect = 7.718895067235704e-5;
        assert!((poly_lr(&p(25, 100)).unwrap() - expect).abs() / expect < 1e-12);
        assert!(matches!(poly_lr(&p(0, 0)), Err(Error::Domain(_))));
        assert!(poly_lr(&p(101, 100)).is_err());
    }

    #[test]
    fn report_row_without_auc() {
        let r =
            MetricsReport::evaluate(&mask(&[true, false]), &mask(&[true, false]), None).unwrap();
        assert_eq!(r.csv_row("x"), "x,1.000000,1.000000,1.000000,NA,auc_absent");
    }
}
