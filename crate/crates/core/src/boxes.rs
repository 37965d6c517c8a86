use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Ground-truth boxes carry no class or score.
pub type GtBox = BBox;

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::invalid(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn longer_side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Clips into `[0, w] x [0, h]`; `None` if nothing is left.
    pub fn clip(&self, w: f64, h: f64) -> Option<Self> {
        let b = Self {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }

    /// Intersection over union. Both boxes are assumed valid.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = iw * ih;
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}

/// A scored detector output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

/// Greedy non-maximum suppression: visit by descending confidence (ties by
/// input order) and drop any candidate whose IoU with a kept box exceeds
/// `iou_threshold`.
pub fn nms(mut candidates: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .confidence
            .total_cmp(&candidates[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = candidates[i];
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    candidates.clear();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, c: f64) -> Detection {
        Detection {
            bbox: BBox::new(x1, y1, x2, y2).unwrap(),
            confidence: c,
        }
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn overlapping_lower_confidence_is_suppressed() {
        let kept = nms(
            vec![det(0.0, 0.0, 10.0, 10.0, 0.6), det(1.0, 1.0, 11.0, 11.0, 0.9)],
            0.5,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    /// Brute-force oracle: a box survives iff no higher-ranked *surviving*
    /// box overlaps it, evaluated by explicit fixpoint over all boxes.
    fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<Detection> {
        let n = dets.len();
        let rank = |i: usize, j: usize| {
            dets[i].confidence > dets[j].confidence
                || (dets[i].confidence == dets[j].confidence && i < j)
        };
        let mut alive = vec![None::<bool>; n];
        while alive.iter().any(|a| a.is_none()) {
            for i in 0..n {
                if alive[i].is_some() {
                    continue;
                }
                let higher: Vec<usize> = (0..n).filter(|&j| j != i && rank(j, i)).collect();
                if higher.iter().all(|&j| alive[j].is_some()) {
                    let killed = higher
                        .iter()
                        .any(|&j| alive[j] == Some(true) && dets[j].bbox.iou(&dets[i].bbox) > thr);
                    alive[i] = Some(!killed);
                }
            }
        }
        let mut out: Vec<usize> = (0..n).filter(|&i| alive[i] == Some(true)).collect();
        out.sort_by(|&a, &b| if rank(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
        out.into_iter().map(|i| dets[i]).collect()
    }

    #[test]
    fn nms_matches_brute_force_on_small_sets() {
        let pool = [
            det(0.0, 0.0, 10.0, 10.0, 0.9),
            det(2.0, 2.0, 12.0, 12.0, 0.8),
            det(5.0, 5.0, 15.0, 15.0, 0.7),
            det(30.0, 30.0, 40.0, 40.0, 0.6),
            det(31.0, 31.0, 41.0, 41.0, 0.95),
        ];
        for mask in 1u32..(1 << pool.len()) {
            let dets: Vec<Detection> = (0..pool.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| pool[i])
                .collect();
            for thr in [0.1, 0.3, 0.5] {
                assert_eq!(nms(dets.clone(), thr), nms_oracle(&dets, thr));
            }
        }
    }
}
