//! Seeded finite-difference checks of every differentiable operation and of
//! the composed attack loss. Shared by the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::{attack_loss, sample_placements, AttackConfig};
use crate::data::{gen_synthetic, SynthConfig};
use crate::detector::{image_loss, DetectorConfig, DetectorModel};
use crate::diffmath::gradcheck::{central_difference, central_difference_at, relative_error, STEP};
use crate::diffmath::{JitterGains, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Uniform values in `[lo, hi)` kept 1e-3 away from every kink.
fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > 1e-3) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Reduces any node to a scalar with fixed, non-uniform weights.
fn reduce(tape: &mut Tape, out: NodeId) -> Result<NodeId> {
    let v = tape.value(out);
    if v.is_scalar() {
        return Ok(out);
    }
    let w: Vec<f64> = (0..v.len()).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let w = Tensor::new(v.shape().to_vec(), w)?;
    tape.weighted_sum(out, w)
}

/// Largest relative error over all inputs of `f`.
fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId>) -> Result<f64> {
    let run = |xs: &[Tensor], grad: bool| -> Result<(Tape, NodeId, Vec<NodeId>)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| tape.leaf(x.clone(), grad)).collect();
        let out = f(&mut tape, &ids)?;
        let out = reduce(&mut tape, out)?;
        Ok((tape, out, ids))
    };
    let (tape, out, ids) = run(inputs, true)?;
    let mut grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    for (j, id) in ids.iter().enumerate() {
        let analytic = grads.take(*id).unwrap_or_else(|| vec![0.0; inputs[j].len()]);
        let mut failure = None;
        let numeric = central_difference(&inputs[j], STEP, |probe| {
            let mut xs = inputs.to_vec();
            xs[j] = probe.clone();
            match run(&xs, false) {
                Ok((t, o, _)) => t.value(o).item(),
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Relative gradient error of every tape operation for one seed.
pub fn op_gradient_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Vec::new();

    let x = random(rng, &[2, 6, 6], -1.0, 1.0, &[]);
    let k = random(rng, &[3, 2, 3, 3], -1.0, 1.0, &[]);
    out.push(("conv2d", check(&[x.clone(), k], |t, v| t.conv2d(v[0], v[1], 1, 1))?));
    let k2 = random(rng, &[3, 2, 2, 2], -1.0, 1.0, &[]);
    out.push(("conv2d_stride2", check(&[x.clone(), k2], |t, v| t.conv2d(v[0], v[1], 2, 0))?));
    let b = random(rng, &[2], -1.0, 1.0, &[]);
    out.push(("bias_add", check(&[x.clone(), b], |t, v| t.bias_add(v[0], v[1]))?));
    out.push(("sigmoid", check(&[x.clone()], |t, v| Ok(t.sigmoid(v[0])))?));
    let xk = random(rng, &[2, 4, 5], -1.0, 1.0, &[0.0]);
    out.push(("leaky_relu", check(&[xk], |t, v| Ok(t.leaky_relu(v[0], 0.1)))?));
    let y = random(rng, &[2, 6, 6], -1.0, 1.0, &[]);
    out.push(("add", check(&[x.clone(), y.clone()], |t, v| t.add(v[0], v[1]))?));
    out.push(("sub", check(&[x.clone(), y.clone()], |t, v| t.sub(v[0], v[1]))?));
    out.push(("mul", check(&[x.clone(), y], |t, v| t.mul(v[0], v[1]))?));
    let c = rng.gen_range(-2.0..2.0);
    out.push(("scale", check(&[x.clone()], |t, v| Ok(t.scale(v[0], c)))?));
    let xc = random(rng, &[3, 4, 4], -0.5, 1.5, &[0.0, 1.0]);
    out.push(("clamp01", check(&[xc], |t, v| Ok(t.clamp01(v[0])))?));
    out.push(("sum", check(&[x.clone()], |t, v| Ok(t.sum(v[0])))?));
    let w = random(rng, &[2, 6, 6], -1.0, 1.0, &[]);
    out.push(("weighted_sum", check(&[x.clone()], |t, v| t.weighted_sum(v[0], w.clone()))?));
    let mask = Tensor::new(vec![2, 6, 6], (0..72).map(|i| f64::from(u8::from(i % 3 != 0))).collect())?;
    out.push(("masked_max", check(&[x.clone()], |t, v| t.masked_max(v[0], &mask))?));
    out.push(("select_channels", check(&[x.clone()], |t, v| t.select_channels(v[0], 1, 1))?));

    let img = random(rng, &[3, 5, 5], 0.0, 1.0, &[]);
    let gains = JitterGains {
        brightness: rng.gen_range(0.8..1.2),
        contrast: rng.gen_range(0.7..1.3),
        saturation: rng.gen_range(0.5..1.5),
    };
    out.push(("color_jitter", check(&[img.clone()], |t, v| t.color_jitter(v[0], gains))?));

    let a = rng.gen_range(-0.5..0.5_f64);
    let s = rng.gen_range(0.7..1.2);
    let theta = [s * a.cos(), -s * a.sin(), rng.gen_range(-0.2..0.2), s * a.sin(), s * a.cos(), rng.gen_range(-0.2..0.2)];
    out.push(("affine_sample", check(&[img.clone()], |t, v| Ok(t.affine_sample(v[0], theta, 7, 6)?.0))?));
    let mut h = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for v in h.iter_mut().take(8) {
        *v += rng.gen_range(-0.15..0.15);
    }
    out.push(("homography_sample", check(&[img.clone()], |t, v| Ok(t.homography_sample(v[0], h, 6, 7)?.0))?));

    let base = random(rng, &[3, 5, 5], 0.0, 1.0, &[]);
    let m = random(rng, &[1, 5, 5], 0.0, 1.0, &[]);
    out.push(("composite", check(&[base.clone(), img.clone()], |t, v| t.composite(v[0], v[1], m.clone()))?));
    let gray = random(rng, &[1, 5, 5], 0.0, 1.0, &[]);
    out.push(("composite_broadcast", check(&[base, gray], |t, v| t.composite(v[0], v[1], m.clone()))?));

    let logits = random(rng, &[1, 4, 4], -4.0, 4.0, &[]);
    let targets = random(rng, &[1, 4, 4], 0.0, 1.0, &[]);
    let weights = random(rng, &[1, 4, 4], 0.0, 1.0, &[]);
    out.push((
        "bce_with_logits",
        check(&[logits], |t, v| t.bce_with_logits(v[0], targets.clone(), weights.clone()))?,
    ));
    let x4 = random(rng, &[4, 3, 3], -1.0, 1.0, &[]);
    // keep every residual away from the kink of |.|
    let shift = random(rng, &[4, 3, 3], 0.05, 0.5, &[]);
    let sign: Vec<f64> = (0..36).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let tl = Tensor::new(
        vec![4, 3, 3],
        x4.data().iter().zip(shift.data()).zip(&sign).map(|((a, d), s)| a + d * s).collect(),
    )?;
    let wl = random(rng, &[4, 3, 3], 0.0, 1.0, &[]);
    out.push(("weighted_l1", check(&[x4], |t, v| t.weighted_l1(v[0], tl.clone(), wl.clone()))?));
    out.push(("total_variation", check(&[img], |t, v| t.total_variation(v[0]))?));
    Ok(out)
}

/// Relative error of the attack-loss gradient with respect to the patch,
/// through jitter, perspective warp, compositing, the detector and TV.
pub fn attack_gradient_error(seed: u64) -> Result<f64> {
    let size = 64;
    let model = DetectorModel::init(size, seed)?;
    let synth = SynthConfig {
        size,
        ..SynthConfig::default()
    };
    let scene = gen_synthetic(1, &synth, seed)?.remove(0);
    let cfg = AttackConfig {
        patch_shape: (3, 6, 6),
        ..AttackConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placements = sample_placements(&mut rng, &cfg, &scene.gt);
    if placements.is_empty() {
        return Err(Error::invalid(format!("seed {seed}: no placement")));
    }
    let patch = random(&mut rng, &[3, 6, 6], 0.05, 0.95, &[]);
    let mut tape = Tape::new();
    let (loss, p) = attack_loss(&mut tape, &model, &scene, &patch, &placements, &cfg)?;
    let analytic = tape.backward(loss)?.take(p).unwrap_or_else(|| vec![0.0; patch.len()]);
    let numeric = central_difference(&patch, STEP, |probe| {
        let mut t = Tape::new();
        attack_loss(&mut t, &model, &scene, probe, &placements, &cfg)
            .map(|(l, _)| t.value(l).item())
            .unwrap_or(f64::NAN)
    });
    Ok(relative_error(&analytic, &numeric))
}

/// Relative error of the detector training loss with respect to a sample of
/// weights from every layer.
pub fn detector_gradient_error(seed: u64) -> Result<f64> {
    let size = 32;
    let model = DetectorModel::init(size, seed)?;
    let synth = SynthConfig {
        size,
        height_range: [0.3, 0.5],
        max_objects: 2,
        ..SynthConfig::default()
    };
    let scene = gen_synthetic(1, &synth, seed)?.remove(0);
    let weights = DetectorConfig {
        box_weight: 1.5,
        neg_weight: 2.0,
        inside_neg_weight: 0.5,
        ..DetectorConfig::default()
    };
    let (tape, loss, fw) = image_loss(&model, scene.image.clone(), &scene.gt, &weights)?;
    let mut grads = tape.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for (layer, &(kid, bid)) in fw.params.iter().enumerate() {
        for (id, is_kernel) in [(kid, true), (bid, false)] {
            let analytic = grads.take(id).unwrap_or_default();
            let value = tape.value(id).clone();
            let coords: Vec<usize> = (0..4).map(|_| rng.gen_range(0..value.len())).collect();
            let numeric = central_difference_at(&value, &coords, STEP, |probe| {
                let mut m = model.clone();
                m.set_layer_param(layer, is_kernel, probe.clone());
                image_loss(&m, scene.image.clone(), &scene.gt, &weights)
                    .map(|(t, l, _)| t.value(l).item())
                    .unwrap_or(f64::NAN)
            });
            let picked: Vec<f64> = coords.iter().map(|&i| analytic.get(i).copied().unwrap_or(0.0)).collect();
            worst = worst.max(relative_error(&picked, &numeric));
        }
    }
    Ok(worst)
}
