//! Single-class detection metrics: IoU, average precision and mAP over IoU
//! thresholds, plus the patched-versus-clean evaluation protocol.

mod evaluate;

pub use evaluate::{evaluate_patch, EvalRecord, EvalSettings, Evaluator};

use crate::boxes::{BBox, Detection};
use crate::error::{Error, Result};

/// How the precision/recall curve is integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ApMode {
    /// Interpolated precision sampled at recall `0.00, 0.01, ..., 1.00`.
    #[default]
    Interp101,
    /// Area under the monotone precision envelope at every recall step.
    AllPoints,
}

/// IoU of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.iou(b))
}

/// `0.50, 0.55, ..., 0.95`, each the nearest double to its decimal.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

/// Cumulative precision and recall after each detection, in confidence order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Ranks detections of all images by descending confidence; ties resolve by
/// image index, then by position within the image.
fn ranked(dets: &[Vec<Detection>]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| (0..ds.len()).map(move |k| (img, k)))
        .collect();
    order.sort_by(|&(ia, ka), &(ib, kb)| {
        dets[ib][kb]
            .confidence
            .total_cmp(&dets[ia][ka].confidence)
            .then(ia.cmp(&ib))
            .then(ka.cmp(&kb))
    });
    order
}

/// Greedy matching: each detection, in rank order, claims the unmatched
/// ground-truth box of highest IoU (lowest index on ties) if that IoU is at
/// least `threshold`.
pub fn pr_curve(dets: &[Vec<Detection>], gts: &[Vec<BBox>], threshold: f64) -> Result<PrCurve> {
    if dets.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} detection lists for {} ground-truth lists",
            dets.len(),
            gts.len()
        )));
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = PrCurve::default();
    for (img, k) in ranked(dets) {
        let d = &dets[img][k].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts[img].iter().enumerate() {
            if matched[img][j] {
                continue;
            }
            let v = d.iou(g);
            if v >= threshold && best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, _)) => {
                matched[img][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
    }
    Ok(curve)
}

impl PrCurve {
    pub fn average_precision(&self, mode: ApMode) -> f64 {
        let n = self.precision.len();
        if n == 0 {
            return 0.0;
        }
        let mut env = self.precision.clone();
        for i in (0..n - 1).rev() {
            env[i] = env[i].max(env[i + 1]);
        }
        match mode {
            ApMode::Interp101 => {
                let mut sum = 0.0;
                let mut i = 0;
                for r in 0..=100 {
                    let level = f64::from(r) / 100.0;
                    while i < n && self.recall[i] < level {
                        i += 1;
                    }
                    if i < n {
                        sum += env[i];
                    }
                }
                sum / 101.0
            }
            ApMode::AllPoints => {
                let mut area = 0.0;
                let mut prev = 0.0;
                for i in 0..n {
                    area += (self.recall[i] - prev) * env[i];
                    prev = self.recall[i];
                }
                area
            }
        }
    }
}

/// Dataset-level AP at one IoU threshold; `None` when there is no ground
/// truth at all (AP undefined).
pub fn average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<BBox>],
    threshold: f64,
    mode: ApMode,
) -> Result<Option<f64>> {
    let curve = pr_curve(dets, gts, threshold)?;
    if gts.iter().all(Vec::is_empty) {
        return Ok(None);
    }
    Ok(Some(curve.average_precision(mode)))
}

/// Mean of dataset-level AP across `thresholds`.
pub fn map_range(
    dets: &[Vec<Detection>],
    gts: &[Vec<BBox>],
    thresholds: &[f64],
    mode: ApMode,
) -> Result<Option<f64>> {
    if thresholds.is_empty() {
        return Err(Error::invalid("at least one IoU threshold is required"));
    }
    let mut sum = 0.0;
    for &t in thresholds {
        match average_precision(dets, gts, t, mode)? {
            Some(ap) => sum += ap,
            None => return Ok(None),
        }
    }
    Ok(Some(sum / thresholds.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn d(bbox: BBox, confidence: f64) -> Detection {
        Detection { bbox, confidence }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        assert!((iou(&a, &b(1.0, 1.0, 3.0, 3.0)).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        let bad = BBox {
            x1: 1.0,
            y1: 1.0,
            x2: 1.0,
            y2: 3.0,
        };
        assert!(iou(&a, &bad).is_err());
    }

    #[test]
    fn perfect_and_empty() {
        let gt = vec![vec![b(0.0, 0.0, 4.0, 4.0)], vec![b(1.0, 1.0, 5.0, 9.0)]];
        let perfect: Vec<Vec<Detection>> =
            gt.iter().map(|g| g.iter().map(|&x| d(x, 1.0)).collect()).collect();
        for mode in [ApMode::Interp101, ApMode::AllPoints] {
            assert_eq!(
                map_range(&perfect, &gt, &coco_thresholds(), mode).unwrap(),
                Some(1.0)
            );
            assert_eq!(
                average_precision(&[vec![], vec![]], &gt, 0.5, mode).unwrap(),
                Some(0.0)
            );
        }
    }

    #[test]
    fn empty_ground_truth_is_skipped() {
        let dets = vec![vec![d(b(0.0, 0.0, 1.0, 1.0), 0.5)]];
        assert_eq!(
            average_precision(&dets, &[vec![]], 0.5, ApMode::Interp101).unwrap(),
            None
        );
    }

    #[test]
    fn false_positive_ranking() {
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0)]];
        let tp = d(b(0.0, 0.0, 10.0, 10.0), 0.9);
        let fp_low = d(b(50.0, 50.0, 60.0, 60.0), 0.8);
        let fp_high = d(b(50.0, 50.0, 60.0, 60.0), 0.95);
        let ap = |dets: Vec<Detection>| {
            average_precision(&[dets], &gt, 0.5, ApMode::Interp101)
                .unwrap()
                .unwrap()
        };
        assert_eq!(ap(vec![tp, fp_low]), 1.0);
        assert!((ap(vec![tp, fp_high]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shifted_box_fixture() {
        // IoU exactly 60/100
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0)]];
        let dets = vec![vec![d(b(0.0, 0.0, 10.0, 6.0), 0.9)]];
        assert_eq!(gt[0][0].iou(&dets[0][0].bbox), 0.6);
        let m = map_range(&dets, &gt, &coco_thresholds(), ApMode::Interp101)
            .unwrap()
            .unwrap();
        assert_eq!(m, 0.3);
        let m50 = map_range(&dets, &gt, &[0.5], ApMode::Interp101).unwrap();
        assert_eq!(m50, average_precision(&dets, &gt, 0.5, ApMode::Interp101).unwrap());
    }

    #[test]
    fn needs_a_threshold() {
        assert!(map_range(&[vec![]], &[vec![]], &[], ApMode::Interp101).is_err());
    }

    #[test]
    fn all_points_mode() {
        // TP, FP, TP with two GT: recall steps 0.5 @ p=1 and 1.0 @ p=2/3
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0), b(20.0, 0.0, 30.0, 10.0)]];
        let dets = vec![vec![
            d(b(0.0, 0.0, 10.0, 10.0), 0.9),
            d(b(50.0, 50.0, 60.0, 60.0), 0.8),
            d(b(20.0, 0.0, 30.0, 10.0), 0.7),
        ]];
        let ap = average_precision(&dets, &gt, 0.5, ApMode::AllPoints)
            .unwrap()
            .unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }
}
