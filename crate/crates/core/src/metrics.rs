//! Pixel-level segmentation metrics.
//!
//! Counts are one-vs-rest per class and aggregated corpus-wide (sum the
//! counts over all images, then take ratios). Background is one of the
//! classes averaged.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::ClassMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// True-positive, false-positive and false-negative pixel counts per class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        ConfusionCounts {
            classes: vec![ClassCounts::default(); n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

impl AddAssign<&ConfusionCounts> for ConfusionCounts {
    fn add_assign(&mut self, rhs: &ConfusionCounts) {
        assert_eq!(
            self.classes.len(),
            rhs.classes.len(),
            "class count mismatch"
        );
        for (a, b) in self.classes.iter_mut().zip(&rhs.classes) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
    }
}

pub fn confusion_counts(
    pred: &ClassMask,
    gt: &ClassMask,
    n_classes: usize,
) -> Result<ConfusionCounts> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Data(format!(
            "prediction {}×{} vs ground truth {}×{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut counts = ConfusionCounts::new(n_classes);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p as usize, g as usize);
        if p >= n_classes || g >= n_classes {
            return Err(Error::Data(format!(
                "class index {} out of range",
                p.max(g)
            )));
        }
        if p == g {
            counts.classes[p].tp += 1;
        } else {
            counts.classes[p].fp += 1;
            counts.classes[g].fn_ += 1;
        }
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, with every `0/0` taken as `0`.
pub fn f1_per_class(counts: &ConfusionCounts) -> Vec<f64> {
    counts
        .classes
        .iter()
        .map(|c| {
            let p = ratio(c.tp, c.tp + c.fp);
            let r = ratio(c.tp, c.tp + c.fn_);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iou {
    pub value: f64,
    /// Class appears in neither prediction nor ground truth.
    pub absent: bool,
}

/// `TP / (TP + FP + FN)`; an empty union gives `1` flagged absent.
pub fn iou_per_class(counts: &ConfusionCounts) -> Vec<Iou> {
    counts
        .classes
        .iter()
        .map(|c| {
            let union = c.tp + c.fp + c.fn_;
            if union == 0 {
                Iou {
                    value: 1.0,
                    absent: true,
                }
            } else {
                Iou {
                    value: c.tp as f64 / union as f64,
                    absent: false,
                }
            }
        })
        .collect()
}

/// Unweighted means of F1 and IoU over the classes that are present.
pub fn mean_metrics(counts: &ConfusionCounts) -> Result<(f64, f64)> {
    let f1 = f1_per_class(counts);
    let iou = iou_per_class(counts);
    let present: Vec<usize> = (0..iou.len()).filter(|&i| !iou[i].absent).collect();
    if present.is_empty() {
        return Err(Error::UndefinedMetrics);
    }
    let n = present.len() as f64;
    Ok((
        present.iter().map(|&i| f1[i]).sum::<f64>() / n,
        present.iter().map(|&i| iou[i].value).sum::<f64>() / n,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub f1: f64,
    pub iou: f64,
    pub absent: bool,
}

/// JSON evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: String,
    pub per_class: BTreeMap<String, ClassReport>,
    pub mean_f1: f64,
    pub mean_iou: f64,
    pub n_images: usize,
}

impl EvalReport {
    pub fn from_counts(counts: &ConfusionCounts, n_images: usize) -> Result<Self> {
        let (mean_f1, mean_iou) = mean_metrics(counts)?;
        let per_class = f1_per_class(counts)
            .into_iter()
            .zip(iou_per_class(counts))
            .enumerate()
            .map(|(c, (f1, iou))| {
                (
                    c.to_string(),
                    ClassReport {
                        f1,
                        iou: iou.value,
                        absent: iou.absent,
                    },
                )
            })
            .collect();
        Ok(EvalReport {
            aggregation:
                "corpus-level: counts summed over images, then ratios; background included".into(),
            per_class,
            mean_f1,
            mean_iou,
            n_images,
        })
    }
}
