//! Confusion matrices, per-class IoU / mIoU, training stability and
//! per-class transfer gains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C x C` counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::invalid("labels", format!("{} predictions for {} labels", pred.len(), gt.len())));
        }
        if let Some(&bad) = pred.iter().chain(gt).find(|&&v| v as usize >= self.classes) {
            return Err(Error::invalid("labels", format!("class {bad} outside [0, {})", self.classes)));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::invalid("confusion", format!("{} vs {} classes", self.classes, other.classes)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

pub fn confusion(pred: &[u8], gt: &[u8], classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` where the class is absent from both prediction and truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub miou_subset: Option<f64>,
    pub subset: Option<Vec<usize>>,
    pub pixel_count: u64,
    pub class_count: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// `IoU_c = TP / (TP + FP + FN)`; classes with an empty union are left out
/// of the means.
pub fn iou_report(cm: &ConfusionMatrix, subset: Option<&[usize]>) -> Result<MetricReport> {
    let c = cm.classes;
    let per_class_iou: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|g| cm.get(g, k)).sum::<u64>() - tp;
            let union = tp + fp + fn_;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let miou = mean_defined(per_class_iou.iter().copied())
        .ok_or_else(|| Error::invalid("confusion", "every class has an empty union"))?;
    let miou_subset = match subset {
        Some(s) => {
            if let Some(bad) = s.iter().find(|&&k| k >= c) {
                return Err(Error::invalid("subset", format!("class {bad} outside [0, {c})")));
            }
            mean_defined(s.iter().map(|&k| per_class_iou[k]))
        }
        None => None,
    };
    Ok(MetricReport {
        per_class_iou,
        miou,
        miou_subset,
        subset: subset.map(<[usize]>::to_vec),
        pixel_count: cm.total(),
        class_count: c,
    })
}

pub const DEFAULT_WINDOW_FRACTION: f64 = 1.0 / 3.0;
pub const MIN_WINDOW_POINTS: usize = 5;

/// Population standard deviation of the last `ceil(n * window_fraction)`
/// evaluation points.
pub fn stability_index(miou: &[f64], window_fraction: f64) -> Result<f64> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::invalid("window_fraction", format!("{window_fraction} not in (0, 1]")));
    }
    let w = ((miou.len() as f64 * window_fraction).ceil() as usize).min(miou.len());
    if w < MIN_WINDOW_POINTS {
        return Err(Error::invalid(
            "stability window",
            format!("{w} evaluation points, need at least {MIN_WINDOW_POINTS}"),
        ));
    }
    let tail = &miou[miou.len() - w..];
    let mean = tail.iter().sum::<f64>() / w as f64;
    Ok((tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferGain {
    /// `None` where either report leaves the class undefined.
    pub gains: Vec<Option<f64>>,
    /// Classes with a negative gain.
    pub negative: Vec<usize>,
}

pub fn transfer_gain(adapted: &MetricReport, baseline: &MetricReport) -> Result<TransferGain> {
    if adapted.class_count != baseline.class_count {
        return Err(Error::invalid(
            "class_count",
            format!("adapted {} vs baseline {}", adapted.class_count, baseline.class_count),
        ));
    }
    let gains: Vec<Option<f64>> = adapted
        .per_class_iou
        .iter()
        .zip(&baseline.per_class_iou)
        .map(|(a, b)| Some((*a)? - (*b)?))
        .collect();
    let negative = gains
        .iter()
        .enumerate()
        .filter(|(_, g)| matches!(g, Some(v) if *v < 0.0))
        .map(|(k, _)| k)
        .collect();
    Ok(TransferGain { gains, negative })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_instance() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let r = iou_report(&cm, None).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou - 0.58333).abs() < 1e-5);
        let r = iou_report(&cm, Some(&[1])).unwrap();
        assert_eq!(r.miou_subset, Some(2.0 / 3.0));
    }

    #[test]
    fn perfect_and_single_pixel() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(1, 1), cm.get(2, 2), cm.get(0, 1)), (1, 1, 2, 0));
        let r = iou_report(&cm, None).unwrap();
        assert!(r.per_class_iou.iter().all(|v| *v == Some(1.0)));
        assert_eq!(r.miou, 1.0);
        let cm = confusion(&[0], &[1], 2).unwrap();
        assert_eq!(cm.get(1, 0), 1);
    }

    #[test]
    fn empty_union_is_excluded() {
        let r = iou_report(&confusion(&[0, 0], &[0, 0], 3).unwrap(), None).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(1.0), None, None]);
        assert_eq!(r.miou, 1.0);
        assert!(iou_report(&ConfusionMatrix::new(2), None).is_err());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        assert!(confusion(&[2], &[0], 2).is_err());
        assert!(confusion(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn stability_examples() {
        assert_eq!(stability_index(&[42.0; 15], DEFAULT_WINDOW_FRACTION).unwrap(), 0.0);
        let alt: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 40.0 } else { 50.0 }).collect();
        assert!((stability_index(&alt, DEFAULT_WINDOW_FRACTION).unwrap() - 5.0).abs() < 1e-12);
        assert!(stability_index(&[1.0; 6], DEFAULT_WINDOW_FRACTION).is_err());
        assert!(stability_index(&[1.0; 6], 0.0).is_err());
    }

    #[test]
    fn gains_example() {
        let rep = |v: [f64; 2]| MetricReport {
            per_class_iou: v.iter().map(|x| Some(*x)).collect(),
            miou: (v[0] + v[1]) / 2.0,
            miou_subset: None,
            subset: None,
            pixel_count: 1,
            class_count: 2,
        };
        let g = transfer_gain(&rep([0.5, 0.4]), &rep([0.3, 0.5])).unwrap();
        assert!((g.gains[0].unwrap() - 0.2).abs() < 1e-12);
        assert!((g.gains[1].unwrap() + 0.1).abs() < 1e-12);
        assert_eq!(g.negative, vec![1]);
        let same = transfer_gain(&rep([0.3, 0.5]), &rep([0.3, 0.5])).unwrap();
        assert!(same.gains.iter().all(|g| *g == Some(0.0)) && same.negative.is_empty());
    }
}
