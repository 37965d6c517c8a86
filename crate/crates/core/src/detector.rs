//! A small anchor-free, single-class grid detector.
//!
//! Four 2x2 stride-2 convolutions take a `3 x S x S` image to a
//! `32 x S/16 x S/16` feature map, two 3x3 convolutions widen the receptive
//! field, and a 1x1 head predicts per cell `(objectness, tx, ty, tw, th)`.
//! A cell at `(gx, gy)` decodes to center `((gx + 0.5 + tx) * 16, ...)` and
//! size `16 * exp(tw)`.
//!
//! Weight file `EDET` (little-endian): magic, version `u16 = 1`, input size
//! `u32`, layer count `u32`, then per layer `stride u32, pad u32, act u8`,
//! kernel shape as four `u32`, kernel values, bias values (all `f64`).

use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::binio::{put_f64s, put_u16, put_u32, Reader};
use crate::boxes::{nms, BBox, Detection};
use crate::data::Scene;
use crate::diffmath::{sigmoid, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{map_range, ApMode};
use crate::optim::{adamw_step, AdamState, AdamW, Scheduler};

pub const GRID_STRIDE: usize = 16;
const MAGIC: &[u8] = b"EDET";
const VERSION: u16 = 1;
const LEAK: f64 = 0.1;
const MAX_LOG_SIZE: f64 = 6.0;

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    kernels: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
    activation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    input_size: usize,
    layers: Vec<Layer>,
}

/// Tape handles of a forward pass.
pub struct ForwardNodes {
    pub output: NodeId,
    /// `(kernels, bias)` leaves per layer.
    pub params: Vec<(NodeId, NodeId)>,
}

impl DetectorModel {
    /// Random initialization; `input_size` must be a positive multiple of 16.
    pub fn init(input_size: usize, seed: u64) -> Result<Self> {
        if input_size == 0 || input_size % GRID_STRIDE != 0 {
            return Err(Error::invalid(format!(
                "input size {input_size} is not a positive multiple of {GRID_STRIDE}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // (c_in, c_out, k, stride, pad, activation)
        let spec = [
            (3, 8, 2, 2, 0, true),
            (8, 16, 2, 2, 0, true),
            (16, 32, 2, 2, 0, true),
            (32, 32, 2, 2, 0, true),
            (32, 32, 3, 1, 1, true),
            (32, 32, 3, 1, 1, true),
            (32, 5, 1, 1, 0, false),
        ];
        let layers = spec
            .iter()
            .map(|&(ci, co, k, stride, pad, activation)| {
                let fan_in = (ci * k * k) as f64;
                let bound = if activation {
                    (6.0 / fan_in).sqrt()
                } else {
                    0.1 / fan_in.sqrt()
                };
                let kernels = (0..co * ci * k * k)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let mut bias = vec![0.0; co];
                if !activation {
                    bias[0] = -4.0;
                }
                Layer {
                    kernels: Tensor::from_parts(vec![co, ci, k, k], kernels),
                    bias: Tensor::from_parts(vec![co], bias),
                    stride,
                    pad,
                    activation,
                }
            })
            .collect();
        Ok(Self { input_size, layers })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn grid_size(&self) -> usize {
        self.input_size / GRID_STRIDE
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernels.len() + l.bias.len())
            .sum()
    }

    /// Replaces the kernels (or bias) of one layer; shapes must match.
    pub(crate) fn set_layer_param(&mut self, layer: usize, kernels: bool, value: Tensor) {
        let l = &mut self.layers[layer];
        let slot = if kernels { &mut l.kernels } else { &mut l.bias };
        assert_eq!(slot.shape(), value.shape());
        *slot = value;
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.input_size;
        if shape != [3, s, s] {
            return Err(Error::shape(format!(
                "detector expects [3, {s}, {s}], got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Parameters become gradient leaves
    /// when `trainable`, constants otherwise.
    pub fn forward_on(&self, tape: &mut Tape, image: NodeId, trainable: bool) -> Result<ForwardNodes> {
        self.check_input(tape.value(image).shape())?;
        let mut x = image;
        let mut params = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let k = tape.leaf(l.kernels.clone(), trainable);
            let b = tape.leaf(l.bias.clone(), trainable);
            x = tape.conv2d(x, k, l.stride, l.pad)?;
            x = tape.bias_add(x, b)?;
            if l.activation {
                x = tape.leaky_relu(x, LEAK);
            }
            params.push((k, b));
        }
        Ok(ForwardNodes { output: x, params })
    }

    /// Raw `[5, G, G]` output; objectness stays a logit.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = self.forward_on(&mut tape, x, false)?.output;
        Ok(tape.value(out).clone())
    }

    pub fn detect(&self, image: &Tensor, conf_threshold: f64, nms_iou: f64) -> Result<Vec<Detection>> {
        decode(&self.forward(image)?, self.input_size, conf_threshold, nms_iou)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = MAGIC.to_vec();
        put_u16(&mut buf, VERSION);
        put_u32(&mut buf, self.input_size);
        put_u32(&mut buf, self.layers.len());
        for l in &self.layers {
            put_u32(&mut buf, l.stride);
            put_u32(&mut buf, l.pad);
            buf.push(u8::from(l.activation));
            for &d in l.kernels.shape() {
                put_u32(&mut buf, d);
            }
            put_f64s(&mut buf, l.kernels.data());
            put_f64s(&mut buf, l.bias.data());
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.expect_version(VERSION)?;
        let input_size = r.usize32("input size")?;
        let n = r.usize32("layer count")?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let stride = r.usize32("stride")?;
            let pad = r.usize32("pad")?;
            let at = r.offset();
            let activation = match r.u8("activation flag")? {
                0 => false,
                1 => true,
                v => return Err(Error::parse(at, format!("activation flag {v}"))),
            };
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.usize32("kernel dim")?;
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len
                .filter(|&l| l <= buf.len())
                .ok_or_else(|| Error::parse(r.offset(), format!("kernel shape {shape:?}")))?;
            let kernels = Tensor::from_parts(shape.to_vec(), r.f64s(len, "kernels")?);
            let bias = Tensor::from_parts(vec![shape[0]], r.f64s(shape[0], "bias")?);
            layers.push(Layer {
                kernels,
                bias,
                stride,
                pad,
                activation,
            });
        }
        if !r.is_at_end() {
            return Err(Error::parse(r.offset(), "trailing bytes"));
        }
        let model = Self { input_size, layers };
        // shape-check the whole stack once
        model.forward(&Tensor::zeros(&[3, input_size, input_size]))
            .map_err(|e| Error::parse(0, format!("inconsistent layer stack: {e}")))?;
        Ok(model)
    }

    /// Hex SHA-256 of the serialized weights.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and checks the weights against an expected hash.
    pub fn load_pinned(path: &Path, expected_hash: &str) -> Result<Self> {
        let bytes = fs::read(path)?;
        let found = hex::encode(Sha256::digest(&bytes));
        if found != expected_hash {
            return Err(Error::HashMismatch {
                what: path.display().to_string(),
                expected: expected_hash.to_string(),
                found,
            });
        }
        Self::from_bytes(&bytes)
    }
}

/// Turns a raw `[5, G, G]` grid into detections: sigmoid objectness strictly
/// above `conf_threshold`, boxes clipped to the image, then greedy NMS.
pub fn decode(raw: &Tensor, image_size: usize, conf_threshold: f64, nms_iou: f64) -> Result<Vec<Detection>> {
    let (c, gh, gw) = raw.dims3()?;
    if c != 5 {
        return Err(Error::shape(format!("raw grid needs 5 channels, got {c}")));
    }
    let stride = image_size as f64 / gw as f64;
    let s = image_size as f64;
    let mut cands = Vec::new();
    for gy in 0..gh {
        for gx in 0..gw {
            let conf = sigmoid(raw.at3(0, gy, gx));
            if conf <= conf_threshold {
                continue;
            }
            let cx = (gx as f64 + 0.5 + raw.at3(1, gy, gx)) * stride;
            let cy = (gy as f64 + 0.5 + raw.at3(2, gy, gx)) * stride;
            let w = stride * raw.at3(3, gy, gx).clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE).exp();
            let h = stride * raw.at3(4, gy, gx).clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE).exp();
            let b = BBox {
                x1: cx - w / 2.0,
                y1: cy - h / 2.0,
                x2: cx + w / 2.0,
                y2: cy + h / 2.0,
            };
            if let Some(bbox) = b.clip(s, s) {
                cands.push(Detection {
                    bbox,
                    confidence: conf,
                });
            }
        }
    }
    Ok(nms(cands, nms_iou))
}

/// Per-cell regression targets `(cell index, [tx, ty, tw, th])`. Each box
/// owns the cell holding its center plus the horizontal and vertical
/// neighbours nearest to that center, so adjacent cells learn the same box
/// and their duplicates fall to NMS. Center cells are claimed first; a cell
/// already taken is skipped.
pub fn assign_targets(gt: &[BBox], grid: usize) -> Vec<(usize, [f64; 4])> {
    let st = GRID_STRIDE as f64;
    let mut out: Vec<(usize, [f64; 4])> = Vec::new();
    let claim = |out: &mut Vec<(usize, [f64; 4])>, b: &BBox, gx: usize, gy: usize| {
        let cell = gy * grid + gx;
        if out.iter().any(|(c, _)| *c == cell) {
            debug!("two boxes share cell ({gx}, {gy}); keeping the first");
            return;
        }
        let (cx, cy) = b.center();
        out.push((
            cell,
            [
                cx / st - gx as f64 - 0.5,
                cy / st - gy as f64 - 0.5,
                (b.width() / st).ln(),
                (b.height() / st).ln(),
            ],
        ));
    };
    let home = |b: &BBox| {
        let (cx, cy) = b.center();
        let fx = cx / st;
        let fy = cy / st;
        ((fx as usize).min(grid - 1), (fy as usize).min(grid - 1), fx, fy)
    };
    for b in gt {
        let (gx, gy, _, _) = home(b);
        claim(&mut out, b, gx, gy);
    }
    for b in gt {
        let (gx, gy, fx, fy) = home(b);
        let nx = if fx - (gx as f64) < 0.5 { gx.checked_sub(1) } else { Some(gx + 1).filter(|&x| x < grid) };
        let ny = if fy - (gy as f64) < 0.5 { gy.checked_sub(1) } else { Some(gy + 1).filter(|&y| y < grid) };
        if let Some(nx) = nx {
            claim(&mut out, b, nx, gy);
        }
        if let Some(ny) = ny {
            claim(&mut out, b, gx, ny);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Weight of the L1 box term relative to objectness.
    pub box_weight: f64,
    /// Weight of the mean objectness term over background cells.
    pub neg_weight: f64,
    /// Weight of the mean objectness term over non-positive cells whose
    /// center lies inside a box (parts of a figure away from its center).
    pub inside_neg_weight: f64,
    /// Chance that a training object gets a flat-colored square pasted over
    /// its center (teaches the detector to ignore plain occluders).
    pub occlusion_prob: f64,
    /// Occluder side as a fraction of the longer box side.
    pub occlusion_range: [f64; 2],
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub min_scenes: usize,
    /// Validation mAP@.5 below this fails training.
    pub min_map50: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_size: 160,
            epochs: 40,
            batch_size: 8,
            lr: 2e-3,
            weight_decay: 1e-4,
            box_weight: 3.0,
            neg_weight: 2.0,
            inside_neg_weight: 1.0,
            occlusion_prob: 0.8,
            occlusion_range: [0.5, 0.85],
            conf_threshold: 0.25,
            nms_iou: 0.5,
            min_scenes: 100,
            min_map50: 0.70,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorReport {
    pub epoch_losses: Vec<f64>,
    pub val_map50: f64,
}

/// Loss of one image on a fresh tape; returns the tape, the loss node and the
/// parameter leaves.
pub fn image_loss(
    model: &DetectorModel,
    image: Tensor,
    gt: &[BBox],
    cfg: &DetectorConfig,
) -> Result<(Tape, NodeId, ForwardNodes)> {
    let g = model.grid_size();
    let cells = g * g;
    let targets = assign_targets(gt, g);
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let fw = model.forward_on(&mut tape, x, true)?;
    let obj = tape.select_channels(fw.output, 0, 1)?;
    let reg = tape.select_channels(fw.output, 1, 4)?;

    // negatives split into cells inside some box and background cells,
    // each group averaged on its own
    let st = GRID_STRIDE as f64;
    let mut positive = vec![false; cells];
    for (cell, _) in &targets {
        positive[*cell] = true;
    }
    let inside: Vec<bool> = (0..cells)
        .map(|c| {
            let (x, y) = (((c % g) as f64 + 0.5) * st, ((c / g) as f64 + 0.5) * st);
            !positive[c] && gt.iter().any(|b| b.contains_point(x, y))
        })
        .collect();
    let n_pos = targets.len();
    let n_inside = inside.iter().filter(|&&v| v).count();
    let n_background = cells - n_pos - n_inside;
    let mut obj_t = vec![0.0; cells];
    let mut obj_w: Vec<f64> = inside
        .iter()
        .map(|&v| match v {
            true => cfg.inside_neg_weight / n_inside as f64,
            false if n_background > 0 => cfg.neg_weight / n_background as f64,
            false => 0.0,
        })
        .collect();
    let mut reg_t = vec![0.0; 4 * cells];
    let mut reg_w = vec![0.0; 4 * cells];
    for (cell, t) in &targets {
        obj_t[*cell] = 1.0;
        obj_w[*cell] = 1.0 / n_pos as f64;
        for k in 0..4 {
            reg_t[k * cells + cell] = t[k];
            reg_w[k * cells + cell] = cfg.box_weight / n_pos as f64;
        }
    }
    let lo = tape.bce_with_logits(
        obj,
        Tensor::from_parts(vec![1, g, g], obj_t),
        Tensor::from_parts(vec![1, g, g], obj_w),
    )?;
    let lb = tape.weighted_l1(
        reg,
        Tensor::from_parts(vec![4, g, g], reg_t),
        Tensor::from_parts(vec![4, g, g], reg_w),
    )?;
    let loss = tape.add(lo, lb)?;
    Ok((tape, loss, fw))
}

/// Pastes flat-colored squares over some object centers.
fn occlude(image: &Tensor, gt: &[BBox], cfg: &DetectorConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let mut img = image.clone();
    let s = cfg.input_size;
    for b in gt {
        if !rng.gen_bool(cfg.occlusion_prob) {
            continue;
        }
        let side = rng.gen_range(cfg.occlusion_range[0]..=cfg.occlusion_range[1]) * b.longer_side();
        // background-toned grays are the hard case: they erase the torso
        let color: [f64; 3] = if rng.gen_bool(0.75) {
            let v = if rng.gen_bool(0.5) { rng.gen_range(0.3..0.6) } else { rng.gen::<f64>() };
            [v; 3]
        } else {
            [rng.gen(), rng.gen(), rng.gen()]
        };
        let (cx, cy) = b.center();
        let x0 = (cx - side / 2.0).round().max(0.0) as usize;
        let y0 = (cy - side / 2.0).round().max(0.0) as usize;
        let x1 = ((cx + side / 2.0).round().max(0.0) as usize).min(s);
        let y1 = ((cy + side / 2.0).round().max(0.0) as usize).min(s);
        let d = img.data_mut();
        for (ch, &c) in color.iter().enumerate() {
            for y in y0..y1 {
                for x in x0..x1 {
                    d[(ch * s + y) * s + x] = c;
                }
            }
        }
    }
    img
}

/// mAP@.5 of `model` on `scenes`.
pub fn detection_map50(model: &DetectorModel, scenes: &[Scene], conf: f64, nms_iou: f64) -> Result<f64> {
    let mut dets = Vec::with_capacity(scenes.len());
    for s in scenes {
        dets.push(model.detect(&s.image, conf, nms_iou)?);
    }
    let gts: Vec<Vec<BBox>> = scenes.iter().map(|s| s.gt.clone()).collect();
    Ok(map_range(&dets, &gts, &[0.5], ApMode::Interp101)?.unwrap_or(0.0))
}

/// Trains from scratch with AdamW under a cosine schedule. Fails when the
/// validation mAP@.5 stays below `cfg.min_map50`.
pub fn train_detector(
    train: &[Scene],
    val: &[Scene],
    cfg: &DetectorConfig,
) -> Result<(DetectorModel, DetectorReport)> {
    if train.len() < cfg.min_scenes {
        return Err(Error::invalid(format!(
            "detector training needs at least {} scenes, got {}",
            cfg.min_scenes,
            train.len()
        )));
    }
    if val.is_empty() || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid(
            "detector training needs validation scenes, epochs and a batch size",
        ));
    }
    let mut model = DetectorModel::init(cfg.input_size, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_de7e);
    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let mut states: Vec<(AdamState, AdamState)> = model
        .layers
        .iter()
        .map(|l| (AdamState::new(l.kernels.len()), AdamState::new(l.bias.len())))
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = Scheduler::Cosine.lr(cfg.lr, epoch, cfg.epochs)?;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<(Vec<f64>, Vec<f64>)> = model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.kernels.len()], vec![0.0; l.bias.len()]))
                .collect();
            for &i in batch {
                let scene = &train[i];
                let image = occlude(&scene.image, &scene.gt, cfg, &mut rng);
                let (tape, loss, fw) = image_loss(&model, image, &scene.gt, cfg)?;
                epoch_loss += tape.value(loss).item();
                let mut g = tape.backward(loss)?;
                for ((k, b), (gk, gb)) in fw.params.iter().zip(grads.iter_mut()) {
                    let dk = g.take(*k).expect("trainable kernels");
                    let db = g.take(*b).expect("trainable bias");
                    gk.iter_mut().zip(&dk).for_each(|(a, d)| *a += d);
                    gb.iter_mut().zip(&db).for_each(|(a, d)| *a += d);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for ((layer, (gk, gb)), (sk, sb)) in model
                .layers
                .iter_mut()
                .zip(grads.iter_mut())
                .zip(states.iter_mut())
            {
                gk.iter_mut().for_each(|v| *v *= inv);
                gb.iter_mut().for_each(|v| *v *= inv);
                adamw_step(layer.kernels.data_mut(), gk, sk, lr, &opt)?;
                adamw_step(layer.bias.data_mut(), gb, sb, lr, &opt)?;
            }
        }
        let mean = epoch_loss / train.len() as f64;
        if !mean.is_finite() {
            losses.push(mean);
            return Err(Error::Diverged {
                epoch,
                history: losses,
            });
        }
        info!("detector epoch {epoch}: loss {mean:.5} (lr {lr:.2e})");
        losses.push(mean);
    }
    let val_map50 = detection_map50(&model, val, cfg.conf_threshold, cfg.nms_iou)?;
    info!("detector validation mAP@.5 = {val_map50:.4}");
    if val_map50 < cfg.min_map50 {
        return Err(Error::TrainingFailure {
            map50: val_map50,
            required: cfg.min_map50,
            losses,
        });
    }
    Ok((
        model,
        DetectorReport {
            epoch_losses: losses,
            val_map50,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape() {
        let m = DetectorModel::init(160, 0).unwrap();
        let out = m.forward(&Tensor::full(&[3, 160, 160], 0.5)).unwrap();
        assert_eq!(out.shape(), [5, 10, 10]);
        assert!(m.forward(&Tensor::zeros(&[3, 96, 96])).is_err());
        assert!(DetectorModel::init(100, 0).is_err());
    }

    #[test]
    fn decode_cases() {
        let mut raw = Tensor::full(&[5, 4, 4], 0.0);
        raw.data_mut()[..16].iter_mut().for_each(|v| *v = -100.0);
        assert!(decode(&raw, 64, 0.25, 0.5).unwrap().is_empty());
        raw.data_mut()[5] = 3.0; // cell (1, 1)
        let d = decode(&raw, 64, 0.25, 0.5).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(16.0, 16.0, 32.0, 32.0).unwrap());
    }

    #[test]
    fn targets_invert_decode() {
        let b = BBox::new(21.0, 40.0, 57.0, 99.0).unwrap();
        let t = assign_targets(&[b], 10);
        let (cell, [tx, ty, tw, th]) = t[0];
        let mut raw = Tensor::full(&[5, 10, 10], -50.0);
        let d = raw.data_mut();
        d[cell] = 5.0;
        d[100 + cell] = tx;
        d[200 + cell] = ty;
        d[300 + cell] = tw;
        d[400 + cell] = th;
        let out = decode(&raw, 160, 0.25, 0.5).unwrap();
        assert!(out[0].bbox.iou(&b) > 1.0 - 1e-12);
        assert_eq!(t.len(), 3);
        for (cell, [tx, ty, tw, th]) in &t {
            let mut raw = Tensor::full(&[5, 10, 10], -50.0);
            let d = raw.data_mut();
            d[*cell] = 5.0;
            d[100 + cell] = *tx;
            d[200 + cell] = *ty;
            d[300 + cell] = *tw;
            d[400 + cell] = *th;
            let out = decode(&raw, 160, 0.25, 0.5).unwrap();
            assert!(out[0].bbox.iou(&b) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn weights_round_trip() {
        let m = DetectorModel::init(64, 3).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(DetectorModel::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(DetectorModel::from_bytes(&bad), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(
            DetectorModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Parse { .. })
        ));
    }
}
