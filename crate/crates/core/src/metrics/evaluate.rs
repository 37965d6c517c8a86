//! Patched-versus-clean evaluation: the patch is pasted at the center of
//! every ground-truth box at a fixed fraction of the longer side, with no
//! random transform, and mAP is compared against the clean baseline.

use rayon::prelude::*;

use super::{average_precision, coco_thresholds, ApMode};
use crate::attack::{apply_patch_image, TransformParams};
use crate::boxes::{BBox, Detection};
use crate::data::Scene;
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::patchset::Patch;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    /// Patch side as a fraction of the longer box side.
    pub scale: f64,
    pub ap_mode: ApMode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conf_threshold: 0.25,
            nms_iou: 0.5,
            scale: 0.75,
            ap_mode: ApMode::Interp101,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub detections: Vec<Vec<Detection>>,
    /// AP at each of the ten thresholds `0.50..=0.95`.
    pub ap_by_threshold: Vec<f64>,
    pub map50: f64,
    pub map50_95: f64,
    /// `baseline - patched`; zero for the baseline itself.
    pub delta_map50: f64,
    pub delta_map50_95: f64,
    pub placed_boxes: usize,
    pub skipped_boxes: usize,
}

/// Caches clean detections for one model and scene list.
pub struct Evaluator<'a> {
    model: &'a DetectorModel,
    scenes: &'a [Scene],
    settings: EvalSettings,
    gts: Vec<Vec<BBox>>,
    baseline: EvalRecord,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a DetectorModel, scenes: &'a [Scene], settings: EvalSettings) -> Result<Self> {
        if scenes.iter().all(|s| s.gt.is_empty()) {
            return Err(Error::invalid("evaluation needs at least one ground-truth box"));
        }
        let gts = scenes.iter().map(|s| s.gt.clone()).collect();
        let detections = scenes
            .par_iter()
            .map(|s| model.detect(&s.image, settings.conf_threshold, settings.nms_iou))
            .collect::<Result<Vec<_>>>()?;
        let mut ev = Self {
            model,
            scenes,
            settings,
            gts,
            baseline: EvalRecord {
                detections: Vec::new(),
                ap_by_threshold: Vec::new(),
                map50: 0.0,
                map50_95: 0.0,
                delta_map50: 0.0,
                delta_map50_95: 0.0,
                placed_boxes: 0,
                skipped_boxes: 0,
            },
        };
        ev.baseline = ev.record(detections, 0, 0, None)?;
        Ok(ev)
    }

    pub fn settings(&self) -> &EvalSettings {
        &self.settings
    }

    pub fn baseline(&self) -> &EvalRecord {
        &self.baseline
    }

    fn record(
        &self,
        detections: Vec<Vec<Detection>>,
        placed: usize,
        skipped: usize,
        baseline: Option<&EvalRecord>,
    ) -> Result<EvalRecord> {
        let mut ap = Vec::with_capacity(10);
        for t in coco_thresholds() {
            ap.push(
                average_precision(&detections, &self.gts, t, self.settings.ap_mode)?
                    .expect("ground truth checked non-empty"),
            );
        }
        let map50 = ap[0];
        let map50_95 = ap.iter().sum::<f64>() / ap.len() as f64;
        let (d50, d95) = baseline.map_or((0.0, 0.0), |b| (b.map50 - map50, b.map50_95 - map50_95));
        Ok(EvalRecord {
            detections,
            ap_by_threshold: ap,
            map50,
            map50_95,
            delta_map50: d50,
            delta_map50_95: d95,
            placed_boxes: placed,
            skipped_boxes: skipped,
        })
    }

    /// Evaluates `patch` centered in every box.
    pub fn evaluate(&self, patch: &Patch) -> Result<EvalRecord> {
        let scale = self.settings.scale;
        let per_image = self
            .scenes
            .par_iter()
            .map(|s| {
                let mut placements = Vec::new();
                let mut skipped = 0;
                for b in &s.gt {
                    match TransformParams::centered(b, scale) {
                        Some(t) => placements.push((*b, t)),
                        None => skipped += 1,
                    }
                }
                let image = apply_patch_image(&s.image, patch, &placements)?;
                let dets = self
                    .model
                    .detect(&image, self.settings.conf_threshold, self.settings.nms_iou)?;
                Ok((dets, placements.len(), skipped))
            })
            .collect::<Result<Vec<_>>>()?;
        let placed = per_image.iter().map(|p| p.1).sum();
        let skipped = per_image.iter().map(|p| p.2).sum();
        let detections = per_image.into_iter().map(|p| p.0).collect();
        self.record(detections, placed, skipped, Some(&self.baseline))
    }
}

/// One-shot evaluation; `None` evaluates the clean scenes.
pub fn evaluate_patch(
    model: &DetectorModel,
    scenes: &[Scene],
    patch: Option<&Patch>,
    settings: EvalSettings,
) -> Result<EvalRecord> {
    let ev = Evaluator::new(model, scenes, settings)?;
    match patch {
        Some(p) => ev.evaluate(p),
        None => Ok(ev.baseline.clone()),
    }
}
