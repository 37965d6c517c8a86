//! Patch optimization: random placement inside target boxes, objectness
//! suppression plus a smoothness penalty, AdamW on the patch pixels.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boxes::BBox;
use crate::data::Scene;
use crate::detector::{DetectorModel, GRID_STRIDE};
use crate::diffmath::warp::{homography_from_points, mul3, Mat3};
use crate::diffmath::{JitterGains, NodeId, SampleGrid, Tape, Tensor, Warp};
use crate::error::{Error, Result};
use crate::patchset::Patch;

pub use crate::optim::{adamw_step, AdamState, AdamW, Scheduler};

/// How per-cell objectness is reduced to one loss value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObjectnessAgg {
    #[default]
    Mean,
    Max,
}

impl fmt::Display for ObjectnessAgg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectnessAgg::Mean => "mean",
            ObjectnessAgg::Max => "max",
        })
    }
}

impl FromStr for ObjectnessAgg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(ObjectnessAgg::Mean),
            "max" => Ok(ObjectnessAgg::Max),
            other => Err(Error::invalid(format!("unknown objectness reduction {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub epochs: usize,
    pub scheduler: Scheduler,
    /// Patch side as a fraction of the longer box side.
    pub resize_range: [f64; 2],
    pub rotation_bound_deg: f64,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    /// Corner displacement bound as a fraction of the half side.
    pub perspective_scale: f64,
    pub lr0: f64,
    pub tv_weight: f64,
    pub weight_decay: f64,
    pub objectness: ObjectnessAgg,
    /// `(C, H, W)` of the trained patch.
    pub patch_shape: (usize, usize, usize),
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            scheduler: Scheduler::STEP_DEFAULT,
            resize_range: [0.75, 1.0],
            rotation_bound_deg: 30.0,
            brightness: [0.9, 1.1],
            contrast: [0.95, 1.05],
            saturation: [0.97, 1.03],
            perspective_scale: 0.5,
            lr0: 0.01,
            tv_weight: 0.1,
            weight_decay: 0.0,
            objectness: ObjectnessAgg::Mean,
            patch_shape: (3, 64, 64),
            seed: 0,
        }
    }
}

/// The five parameterizations used for the reference population, by run
/// label: `(label, patches, epochs, scheduler, resize range, rotation)`.
pub const PRESETS: [(u32, usize, usize, &str, [f64; 2], f64); 5] = [
    (191, 175, 100, "step", [0.75, 1.0], 30.0),
    (885, 100, 100, "cosine", [0.75, 1.0], 30.0),
    (905, 50, 100, "step", [0.75, 1.0], 45.0),
    (371, 25, 125, "step", [0.5, 0.75], 30.0),
    (243, 25, 125, "step", [0.5, 0.75], 45.0),
];

impl AttackConfig {
    /// One of [`PRESETS`] by run label.
    pub fn preset(label: u32) -> Option<Self> {
        PRESETS
            .iter()
            .find(|p| p.0 == label)
            .map(|&(_, _, epochs, sched, resize, rot)| Self {
                epochs,
                scheduler: sched.parse().expect("preset scheduler names are valid"),
                resize_range: resize,
                rotation_bound_deg: rot,
                ..Self::default()
            })
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.resize_range;
        let in_range = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        let (c, h, w) = self.patch_shape;
        let problems = [
            (self.epochs == 0, "epochs must be positive"),
            (!(0.0 < lo && lo <= hi && hi <= 1.0), "resize range must satisfy 0 < lo <= hi <= 1"),
            (!(self.rotation_bound_deg >= 0.0 && self.rotation_bound_deg < 180.0), "rotation bound must lie in [0, 180)"),
            (!(in_range(self.brightness) && in_range(self.contrast) && in_range(self.saturation)), "jitter ranges must be positive and ordered"),
            (!(0.0..1.0).contains(&self.perspective_scale), "perspective scale must lie in [0, 1)"),
            (!(self.lr0 > 0.0 && self.lr0.is_finite()), "lr0 must be positive"),
            (!(self.tv_weight >= 0.0 && self.tv_weight.is_finite()), "tv weight must be non-negative"),
            (!(self.weight_decay >= 0.0 && self.weight_decay.is_finite()), "weight decay must be non-negative"),
            (!((c == 1 || c == 3) && h >= 4 && w >= 4), "patch shape must be 1 or 3 channels, at least 4x4"),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::invalid(format!("attack config: {msg}"))),
            None => Ok(()),
        }
    }

    /// Flat `key=value` description, recorded in patch metadata and run
    /// manifests.
    pub fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("epochs".to_string(), self.epochs.to_string()),
            ("scheduler".into(), self.scheduler.to_string()),
        ];
        if let Scheduler::Step { gamma, .. } = self.scheduler {
            out.push(("step_gamma".into(), gamma.to_string()));
            out.push((
                "step_size".into(),
                self.scheduler.step_size(self.epochs).unwrap_or(0).to_string(),
            ));
        }
        let pair = |r: [f64; 2]| format!("{},{}", r[0], r[1]);
        out.extend([
            ("resize_range".into(), pair(self.resize_range)),
            ("rotation_bound_deg".into(), self.rotation_bound_deg.to_string()),
            ("brightness".into(), pair(self.brightness)),
            ("contrast".into(), pair(self.contrast)),
            ("saturation".into(), pair(self.saturation)),
            ("perspective_scale".into(), self.perspective_scale.to_string()),
            ("lr0".into(), self.lr0.to_string()),
            ("tv_weight".into(), self.tv_weight.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("objectness".into(), self.objectness.to_string()),
            (
                "patch_shape".into(),
                format!("{}x{}x{}", self.patch_shape.0, self.patch_shape.1, self.patch_shape.2),
            ),
            ("seed".into(), self.seed.to_string()),
        ]);
        out
    }
}

/// Placement of one patch copy relative to a target box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformParams {
    /// Side of the (pre-perspective) square in pixels.
    pub scale: f64,
    pub rotation_deg: f64,
    /// Offset of the quad center from the box center, pixels.
    pub dx: f64,
    pub dy: f64,
    /// Inward `(x, y)` corner displacements, pixels: top-left, top-right,
    /// bottom-right, bottom-left.
    pub corner_offsets: [[f64; 2]; 4],
    pub gains: JitterGains,
}

const MIN_SIDE: f64 = 2.0;

impl TransformParams {
    /// Axis-aligned square of side `fraction * longer side`, centered, no
    /// jitter. `None` when the side is below two pixels.
    pub fn centered(bbox: &BBox, fraction: f64) -> Option<Self> {
        let scale = fraction * bbox.longer_side();
        (scale >= MIN_SIDE).then_some(Self {
            scale,
            rotation_deg: 0.0,
            dx: 0.0,
            dy: 0.0,
            corner_offsets: [[0.0; 2]; 4],
            gains: JitterGains::NONE,
        })
    }

    /// Quad corners relative to the quad center, before translation.
    fn local_quad(&self) -> [[f64; 2]; 4] {
        let h = self.scale / 2.0;
        let o = &self.corner_offsets;
        let raw = [
            [-h + o[0][0], -h + o[0][1]],
            [h - o[1][0], -h + o[1][1]],
            [h - o[2][0], h - o[2][1]],
            [-h + o[3][0], h - o[3][1]],
        ];
        let (s, c) = (self.rotation_deg * PI / 180.0).sin_cos();
        raw.map(|[x, y]| [c * x - s * y, s * x + c * y])
    }

    /// Quad corners in image coordinates (pixel `i` spans `[i, i + 1]`).
    pub fn quad(&self, bbox: &BBox) -> [[f64; 2]; 4] {
        let (cx, cy) = bbox.center();
        self.local_quad()
            .map(|[x, y]| [x + cx + self.dx, y + cy + self.dy])
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Random placement: scale, perspective, rotation, then a translation that
/// keeps the quad inside `bbox` where possible (centered along an axis where
/// it cannot fit). `None` signals a box too small for the smallest patch.
pub fn sample_transform(rng: &mut ChaCha8Rng, cfg: &AttackConfig, bbox: &BBox) -> Option<TransformParams> {
    let scale = uniform(rng, cfg.resize_range) * bbox.longer_side();
    let max_off = cfg.perspective_scale * scale / 2.0;
    let mut corner_offsets = [[0.0; 2]; 4];
    for c in &mut corner_offsets {
        for v in c.iter_mut() {
            *v = uniform(rng, [0.0, max_off]);
        }
    }
    let b = cfg.rotation_bound_deg;
    let rotation_deg = uniform(rng, [-b, b]);
    let gains = JitterGains {
        brightness: uniform(rng, cfg.brightness),
        contrast: uniform(rng, cfg.contrast),
        saturation: uniform(rng, cfg.saturation),
    };
    let mut t = TransformParams {
        scale,
        rotation_deg,
        dx: 0.0,
        dy: 0.0,
        corner_offsets,
        gains,
    };
    let q = t.local_quad();
    let (cx, cy) = bbox.center();
    let span = |k: usize| {
        let lo = q.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = q.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (xl, xh) = span(0);
    let (yl, yh) = span(1);
    let pick = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if lo <= hi { uniform(rng, [lo, hi]) } else { (lo + hi) / 2.0 };
    t.dx = pick(rng, bbox.x1 - cx - xl, bbox.x2 - cx - xh);
    t.dy = pick(rng, bbox.y1 - cy - yl, bbox.y2 - cy - yh);
    (scale >= MIN_SIDE).then_some(t)
}

fn translate(dx: f64, dy: f64) -> Mat3 {
    [1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0]
}

/// Gather table that maps the patch onto the quad of `t` in an image of
/// `image_hw`.
pub fn placement_grid(
    patch_hw: (usize, usize),
    image_hw: (usize, usize),
    bbox: &BBox,
    t: &TransformParams,
) -> Result<SampleGrid> {
    let quad = t.quad(bbox);
    let (ph, pw) = (patch_hw.0 as f64, patch_hw.1 as f64);
    let corners = [[0.0, 0.0], [pw, 0.0], [pw, ph], [0.0, ph]];
    let to_patch = homography_from_points(&quad, &corners)?;
    // output index -> image coords -> patch coords -> patch index
    let h_px = mul3(&translate(-0.5, -0.5), &mul3(&to_patch, &translate(0.5, 0.5)));
    let warp = Warp::from_pixel_homography(&h_px, patch_hw, image_hw);
    let (ih, iw) = image_hw;
    let lo = |k: usize| quad.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let hi = |k: usize, n: usize| (quad.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as usize).min(n);
    let region = [lo(1).min(ih), hi(1, ih), lo(0).min(iw), hi(0, iw)];
    SampleGrid::new(&warp, patch_hw, image_hw, Some(region))
}

/// Jitters, warps and alpha-composites the patch over `image` on the tape.
pub fn apply_patch(
    tape: &mut Tape,
    image: NodeId,
    patch: NodeId,
    bbox: &BBox,
    t: &TransformParams,
) -> Result<NodeId> {
    let (_, ih, iw) = tape.value(image).dims3()?;
    let (_, ph, pw) = tape.value(patch).dims3()?;
    let jittered = if t.gains == JitterGains::NONE {
        patch
    } else {
        tape.color_jitter(patch, t.gains)?
    };
    let grid = placement_grid((ph, pw), (ih, iw), bbox, t)?;
    let (warped, mask) = tape.sample(jittered, Arc::new(grid))?;
    tape.composite(image, warped, mask)
}

/// Patched copy of `image` with one patch per `(box, placement)`.
pub fn apply_patch_image(image: &Tensor, patch: &Patch, placements: &[(BBox, TransformParams)]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut x = tape.constant(image.clone());
    let p = tape.constant(patch.pixels().clone());
    for (b, t) in placements {
        x = apply_patch(&mut tape, x, p, b, t)?;
    }
    Ok(tape.value(x).clone())
}

/// Grid cells whose centers lie inside any box, as a `[1, G, G]` 0/1 mask.
pub fn covered_cells(gt: &[BBox], grid: usize) -> Tensor {
    let st = GRID_STRIDE as f64;
    let mut m = vec![0.0; grid * grid];
    for gy in 0..grid {
        for gx in 0..grid {
            let (x, y) = ((gx as f64 + 0.5) * st, (gy as f64 + 0.5) * st);
            if gt.iter().any(|b| b.contains_point(x, y)) {
                m[gy * grid + gx] = 1.0;
            }
        }
    }
    Tensor::new(vec![1, grid, grid], m).expect("mask is finite")
}

/// Mean (or max) sigmoid objectness over cells covered by the boxes. With no
/// boxes the loss is a constant zero. Boxes too small to cover any cell
/// center fall back to the cell holding their center.
pub fn objectness_loss(tape: &mut Tape, raw: NodeId, gt: &[BBox], agg: ObjectnessAgg) -> Result<NodeId> {
    if gt.is_empty() {
        warn!("objectness loss without target boxes is zero");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let (_, g, _) = tape.value(raw).dims3()?;
    let mut mask = covered_cells(gt, g);
    if mask.sum() == 0.0 {
        let st = GRID_STRIDE as f64;
        let mut m = vec![0.0; g * g];
        for b in gt {
            let (cx, cy) = b.center();
            let gx = ((cx / st) as usize).min(g - 1);
            let gy = ((cy / st) as usize).min(g - 1);
            m[gy * g + gx] = 1.0;
        }
        mask = Tensor::new(vec![1, g, g], m)?;
    }
    let obj = tape.select_channels(raw, 0, 1)?;
    let prob = tape.sigmoid(obj);
    match agg {
        ObjectnessAgg::Mean => {
            let n = mask.sum();
            let w = Tensor::new(vec![1, g, g], mask.data().iter().map(|v| v / n).collect())?;
            tape.weighted_sum(prob, w)
        }
        ObjectnessAgg::Max => tape.masked_max(prob, &mask),
    }
}

/// Anisotropic total variation, normalized by the number of neighbour pairs
/// and averaged over channels.
pub fn tv_loss(tape: &mut Tape, patch: NodeId) -> Result<NodeId> {
    tape.total_variation(patch)
}

/// Full attack loss for one scene; returns `(loss, patch leaf)` on `tape`.
pub fn attack_loss(
    tape: &mut Tape,
    model: &DetectorModel,
    scene: &Scene,
    patch: &Tensor,
    placements: &[(BBox, TransformParams)],
    cfg: &AttackConfig,
) -> Result<(NodeId, NodeId)> {
    let p = tape.leaf(patch.clone(), true);
    let mut x = tape.constant(scene.image.clone());
    for (b, t) in placements {
        x = apply_patch(tape, x, p, b, t)?;
    }
    let raw = model.forward_on(tape, x, false)?.output;
    let lo = objectness_loss(tape, raw, &scene.gt, cfg.objectness)?;
    let tv = tv_loss(tape, p)?;
    let tv = tape.scale(tv, cfg.tv_weight);
    Ok((tape.add(lo, tv)?, p))
}

/// Samples a placement for every box of the scene, dropping skipped boxes.
pub fn sample_placements(rng: &mut ChaCha8Rng, cfg: &AttackConfig, gt: &[BBox]) -> Vec<(BBox, TransformParams)> {
    gt.iter()
        .filter_map(|b| match sample_transform(rng, cfg, b) {
            Some(t) => Some((*b, t)),
            None => {
                debug!("box {b:?} too small for a patch; skipped");
                None
            }
        })
        .collect()
}

/// Optimizes one patch from a seeded random start. Returns the final patch
/// (with provenance metadata) and the mean loss of every epoch.
pub fn train_patch(model: &DetectorModel, scenes: &[Scene], cfg: &AttackConfig) -> Result<(Patch, Vec<f64>)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::invalid("patch training needs at least one scene"));
    }
    let (c, h, w) = cfg.patch_shape;
    let mut pixels = Patch::init_random(c, h, w, cfg.seed)?.pixels().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let mut state = AdamState::new(pixels.len());
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.scheduler.lr(cfg.lr0, epoch, cfg.epochs)?;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let scene = &scenes[i];
            let placements = sample_placements(&mut rng, cfg, &scene.gt);
            let mut tape = Tape::new();
            let (loss, p) = attack_loss(&mut tape, model, scene, &pixels, &placements, cfg)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                history.push(value);
                return Err(Error::Diverged { epoch, history });
            }
            total += value;
            let grad = tape
                .backward(loss)?
                .take(p)
                .unwrap_or_else(|| vec![0.0; pixels.len()]);
            let data = pixels.data_mut();
            if let Err(e) = adamw_step(data, &grad, &mut state, lr, &opt) {
                warn!("patch step failed in epoch {epoch}: {e}");
                history.push(f64::NAN);
                return Err(Error::Diverged { epoch, history });
            }
            data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        let mean = total / scenes.len() as f64;
        debug!("patch seed {} epoch {epoch}: loss {mean:.5}", cfg.seed);
        history.push(mean);
    }
    info!(
        "patch seed {} trained: loss {:.4} -> {:.4}",
        cfg.seed,
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    let mut patch = Patch::new(pixels)?;
    for (k, v) in cfg.describe() {
        patch = patch.with_meta(k, v);
    }
    patch = patch
        .with_meta("detector_hash", model.hash())
        .with_meta("final_loss", format!("{:.6}", history.last().copied().unwrap_or(f64::NAN)));
    Ok((patch, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn presets_match_reference_rows() {
        let c = AttackConfig::preset(885).unwrap();
        assert_eq!(c.scheduler, Scheduler::Cosine);
        assert_eq!(c.epochs, 100);
        let c = AttackConfig::preset(243).unwrap();
        assert_eq!((c.epochs, c.resize_range, c.rotation_bound_deg), (125, [0.5, 0.75], 45.0));
        assert_eq!(PRESETS.iter().map(|p| p.1).sum::<usize>(), 375);
        assert!(AttackConfig::preset(1).is_none());
        for p in PRESETS {
            AttackConfig::preset(p.0).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn degenerate_ranges_give_centered_square() {
        let cfg = AttackConfig {
            resize_range: [1.0, 1.0],
            rotation_bound_deg: 0.0,
            perspective_scale: 0.0,
            brightness: [1.0, 1.0],
            contrast: [1.0, 1.0],
            saturation: [1.0, 1.0],
            ..AttackConfig::default()
        };
        let b = bx(10.0, 20.0, 50.0, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_transform(&mut rng, &cfg, &b).unwrap();
        assert_eq!(t.scale, 80.0);
        let q = t.quad(&b);
        // wider than the box horizontally: centered; exact fit vertically
        assert_eq!(q[0], [-10.0, 20.0]);
        assert_eq!(q[2], [70.0, 100.0]);
    }

    #[test]
    fn small_boxes_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_transform(&mut rng, &AttackConfig::default(), &bx(0.0, 0.0, 1.5, 1.0)).is_none());
        assert!(TransformParams::centered(&bx(0.0, 0.0, 2.0, 2.0), 0.75).is_none());
    }

    #[test]
    fn objectness_fixed_logits() {
        let gt = [bx(0.0, 0.0, 40.0, 40.0)];
        for (logit, expect) in [(-100.0, 0.0), (0.0, 0.5)] {
            let mut tape = Tape::new();
            let mut raw = Tensor::full(&[5, 4, 4], 0.0);
            raw.data_mut()[..16].iter_mut().for_each(|v| *v = logit);
            let r = tape.constant(raw);
            let l = objectness_loss(&mut tape, r, &gt, ObjectnessAgg::Mean).unwrap();
            assert!((tape.value(l).item() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn objectness_matches_cell_enumeration() {
        let gt = [bx(0.0, 0.0, 30.0, 20.0), bx(40.0, 40.0, 64.0, 64.0)];
        let mut raw = Tensor::full(&[5, 4, 4], 0.0);
        for (i, v) in raw.data_mut()[..16].iter_mut().enumerate() {
            *v = i as f64 * 0.3 - 2.0;
        }
        let mut sum = 0.0;
        let mut n = 0;
        for gy in 0..4 {
            for gx in 0..4 {
                let (x, y) = (gx as f64 * 16.0 + 8.0, gy as f64 * 16.0 + 8.0);
                if gt.iter().any(|b| x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2) {
                    sum += crate::diffmath::sigmoid(raw.at3(0, gy, gx));
                    n += 1;
                }
            }
        }
        assert_eq!(n, 2 + 4);
        let mut tape = Tape::new();
        let r = tape.constant(raw.clone());
        let mean = objectness_loss(&mut tape, r, &gt, ObjectnessAgg::Mean).unwrap();
        assert!((tape.value(mean).item() - sum / n as f64).abs() < 1e-12);
        let empty = objectness_loss(&mut tape, r, &[], ObjectnessAgg::Mean).unwrap();
        assert_eq!(tape.value(empty).item(), 0.0);
    }

    #[test]
    fn identity_placement_of_image_crop_is_noop() {
        let s = 32;
        let img = Tensor::new(vec![3, s, s], (0..3 * s * s).map(|i| (i % 97) as f64 / 96.0).collect()).unwrap();
        let b = bx(8.0, 4.0, 24.0, 20.0);
        let mut crop = Vec::new();
        for ch in 0..3 {
            for y in 4..20 {
                for x in 8..24 {
                    crop.push(img.at3(ch, y, x));
                }
            }
        }
        let patch = Patch::new(Tensor::new(vec![3, 16, 16], crop).unwrap()).unwrap();
        let t = TransformParams::centered(&b, 1.0).unwrap();
        let out = apply_patch_image(&img, &patch, &[(b, t)]).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-12);

        let black = Patch::gray(3, 16, 16, 0.0).unwrap();
        let out = apply_patch_image(&img, &black, &[(b, t)]).unwrap();
        for y in 0..s {
            for x in 0..s {
                let inside = (4..20).contains(&y) && (8..24).contains(&x);
                for ch in 0..3 {
                    if inside {
                        assert_eq!(out.at3(ch, y, x), 0.0);
                    } else {
                        assert_eq!(out.at3(ch, y, x), img.at3(ch, y, x));
                    }
                }
            }
        }
    }
}
