use eigenpatch::boxes::{BBox, Detection};
use eigenpatch::metrics::{average_precision, coco_thresholds, iou, map_range, ApMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Area of the intersection over the union counted on a fine raster.
fn raster_iou(a: &BBox, b: &BBox, cells_per_unit: f64) -> f64 {
    let x0 = a.x1.min(b.x1);
    let y0 = a.y1.min(b.y1);
    let x1 = a.x2.max(b.x2);
    let y1 = a.y2.max(b.y2);
    let nx = ((x1 - x0) * cells_per_unit).round() as usize;
    let ny = ((y1 - y0) * cells_per_unit).round() as usize;
    let (mut inter, mut union) = (0u64, 0u64);
    for iy in 0..ny {
        let y = y0 + (iy as f64 + 0.5) / cells_per_unit;
        for ix in 0..nx {
            let x = x0 + (ix as f64 + 0.5) / cells_per_unit;
            let ia = a.contains_point(x, y);
            let ib = b.contains_point(x, y);
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    inter as f64 / union as f64
}

#[test]
fn iou_matches_raster_counts() {
    let b = |x1, y1, x2, y2| BBox::new(x1, y1, x2, y2).unwrap();
    let cases = [
        (b(0.0, 0.0, 2.0, 2.0), b(1.0, 1.0, 3.0, 3.0)),
        (b(0.0, 0.0, 10.0, 10.0), b(0.0, 0.0, 10.0, 6.0)),
        (b(0.0, 0.0, 4.0, 1.0), b(2.0, 0.0, 6.0, 1.0)),
        (b(1.0, 1.0, 3.0, 3.0), b(5.0, 5.0, 7.0, 7.0)),
    ];
    for (a, c) in cases {
        // integer corners: a raster of 1/2 unit counts areas exactly
        let r = raster_iou(&a, &c, 2.0);
        assert!((iou(&a, &c).unwrap() - r).abs() < 1e-9, "{a:?} {c:?}");
    }
    assert!((iou(&cases[0].0, &cases[0].1).unwrap() - 1.0 / 7.0).abs() < 1e-9);
}

/// Brute force: for every prefix of the ranked list redo the greedy matching
/// from scratch, then take the best precision at each recall level.
fn oracle_ap(dets: &[Vec<Detection>], gts: &[Vec<BBox>], thr: f64) -> Option<f64> {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, usize)> = Vec::new();
    for (i, ds) in dets.iter().enumerate() {
        for k in 0..ds.len() {
            ranked.push((i, k));
        }
    }
    // stable insertion sort on confidence, descending
    for a in 1..ranked.len() {
        let mut b = a;
        while b > 0 && dets[ranked[b].0][ranked[b].1].confidence > dets[ranked[b - 1].0][ranked[b - 1].1].confidence {
            ranked.swap(b, b - 1);
            b -= 1;
        }
    }
    let mut points = Vec::new();
    for m in 1..=ranked.len() {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for &(i, k) in &ranked[..m] {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts[i].iter().enumerate() {
                let v = dets[i][k].bbox.iou(g);
                if !used[i][j] && v >= thr && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                used[i][j] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / m as f64));
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = f64::from(r) / 100.0;
        sum += points
            .iter()
            .filter(|(rec, _)| *rec >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
    }
    Some(sum / 101.0)
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x = rng.gen_range(0..6) as f64;
    let y = rng.gen_range(0..6) as f64;
    BBox::new(x, y, x + rng.gen_range(1..5) as f64, y + rng.gen_range(1..5) as f64).unwrap()
}

fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<Vec<Detection>>, Vec<Vec<BBox>>) {
    let images = rng.gen_range(1..=3);
    let mut gts: Vec<Vec<BBox>> = (0..images)
        .map(|_| (0..rng.gen_range(0..=3)).map(|_| random_box(rng)).collect())
        .collect();
    let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); images];
    for _ in 0..rng.gen_range(0..=6) {
        let i = rng.gen_range(0..images);
        let bbox = if !gts[i].is_empty() && rng.gen_bool(0.6) {
            let g = gts[i][rng.gen_range(0..gts[i].len())];
            BBox::new(g.x1, g.y1, g.x2 + rng.gen_range(0..2) as f64, g.y2).unwrap()
        } else {
            random_box(rng)
        };
        // coarse confidences produce ties
        let confidence = f64::from(rng.gen_range(1..=8)) / 8.0;
        dets[i].push(Detection { bbox, confidence });
    }
    if gts.iter().all(Vec::is_empty) && rng.gen_bool(0.8) {
        gts[0].push(random_box(rng));
    }
    (dets, gts)
}

#[test]
fn average_precision_equals_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..3000 {
        let (dets, gts) = random_fixture(&mut rng);
        for thr in coco_thresholds() {
            let got = average_precision(&dets, &gts, thr, ApMode::Interp101).unwrap();
            assert_eq!(got, oracle_ap(&dets, &gts, thr), "case {case} thr {thr}");
        }
    }
}

#[test]
fn shifted_box_fixture_is_three_tenths() {
    let gt = vec![vec![BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()]];
    let det = vec![vec![Detection {
        bbox: BBox::new(0.0, 0.0, 10.0, 6.0).unwrap(),
        confidence: 0.7,
    }]];
    assert_eq!(map_range(&det, &gt, &coco_thresholds(), ApMode::Interp101).unwrap(), Some(0.3));
    assert_eq!(map_range(&det, &gt, &coco_thresholds(), ApMode::AllPoints).unwrap(), Some(0.3));
}

proptest! {
    #[test]
    fn ap_depends_only_on_confidence_order(seed in 0u64..10_000, a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_fixture(&mut rng);
        // strictly increasing map into (0, 1)
        let remap = |c: f64| 1.0 / (1.0 + (-(a * c + b)).exp());
        let moved: Vec<Vec<Detection>> = dets
            .iter()
            .map(|ds| ds.iter().map(|d| Detection { bbox: d.bbox, confidence: remap(d.confidence) }).collect())
            .collect();
        for mode in [ApMode::Interp101, ApMode::AllPoints] {
            prop_assert_eq!(
                map_range(&dets, &gts, &coco_thresholds(), mode).unwrap(),
                map_range(&moved, &gts, &coco_thresholds(), mode).unwrap()
            );
        }
    }
}
