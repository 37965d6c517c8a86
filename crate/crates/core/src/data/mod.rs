//! Scenes: letterboxing, the synthetic generator, detector-regenerated
//! ground truth and the on-disk dataset layout.

mod disk;
mod letterbox;
mod synth;

pub use disk::{load_dataset, parse_labels, read_manifest, write_dataset, Split};
pub use letterbox::{letterbox, Letterbox};
pub use synth::{gen_synthetic, SynthConfig};

use log::{info, warn};

use crate::boxes::BBox;
use crate::detector::DetectorModel;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// A detector-sized image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Tensor,
    pub gt: Vec<BBox>,
}

impl Scene {
    /// Side length of the square image.
    pub fn size(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Outcome of [`regenerate_gt`].
#[derive(Clone, Debug)]
pub struct Regenerated {
    pub scenes: Vec<Scene>,
    /// Ids of scenes left without any box.
    pub dropped: Vec<String>,
}

/// Replaces each scene's ground truth by the detector's own clean detections
/// with confidence above `conf_threshold`, keeping only detections whose best
/// IoU with a true box is at least `min_visibility`.
pub fn regenerate_gt(
    model: &DetectorModel,
    scenes: &[Scene],
    conf_threshold: f64,
    nms_iou: f64,
    min_visibility: f64,
) -> Result<Regenerated> {
    let mut out = Regenerated {
        scenes: Vec::with_capacity(scenes.len()),
        dropped: Vec::new(),
    };
    for scene in scenes {
        let dets = model.detect(&scene.image, conf_threshold, nms_iou)?;
        let gt: Vec<BBox> = dets
            .iter()
            .filter(|d| {
                scene
                    .gt
                    .iter()
                    .any(|t| t.iou(&d.bbox) >= min_visibility)
            })
            .map(|d| d.bbox)
            .collect();
        if gt.is_empty() {
            warn!("scene {} lost all boxes during ground-truth regeneration", scene.id);
            out.dropped.push(scene.id.clone());
        } else {
            out.scenes.push(Scene {
                id: scene.id.clone(),
                image: scene.image.clone(),
                gt,
            });
        }
    }
    if out.scenes.is_empty() && !scenes.is_empty() {
        return Err(Error::invalid(format!(
            "ground-truth regeneration dropped every scene: {}",
            out.dropped.join(", ")
        )));
    }
    info!(
        "regenerated ground truth: kept {} scenes, dropped {}",
        out.scenes.len(),
        out.dropped.len()
    );
    Ok(out)
}
