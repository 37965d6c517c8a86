//! Procedural scenes: smooth colored backgrounds with one to four
//! stick-figure targets in saturated colors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Scene;
use crate::boxes::BBox;
use crate::detector::GRID_STRIDE;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Figure height range as a fraction of the image side.
    pub height_range: [f64; 2],
    /// Figure width / height range.
    pub aspect_range: [f64; 2],
    /// Background nodes per axis minus one.
    pub background_cells: usize,
    /// Inclusive range of textured clutter objects (stripes, checkers) per
    /// scene; these are negatives for the detector.
    pub clutter_range: [usize; 2],
    /// Clutter side range as a fraction of the image side.
    pub clutter_size: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 160,
            min_objects: 1,
            max_objects: 4,
            height_range: [0.175, 0.4],
            aspect_range: [0.7, 1.0],
            background_cells: 4,
            clutter_range: [0, 3],
            clutter_size: [0.1, 0.3],
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.size >= 32
            && self.min_objects >= 1
            && self.min_objects <= self.max_objects
            && 0.0 < self.height_range[0]
            && self.height_range[0] <= self.height_range[1]
            && self.height_range[1] < 0.9
            && 0.0 < self.aspect_range[0]
            && self.aspect_range[0] <= self.aspect_range[1]
            && self.aspect_range[1] * self.height_range[1] < 0.9
            && self.background_cells >= 1
            && self.clutter_range[0] <= self.clutter_range[1]
            && 0.0 < self.clutter_size[0]
            && self.clutter_size[0] <= self.clutter_size[1]
            && self.clutter_size[1] < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad synthetic scene config {self:?}")))
        }
    }
}

/// `count` scenes named `synth-<seed>-<index>`; scene `i` draws from its own
/// stream so the result does not depend on scheduling.
pub fn gen_synthetic(count: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<Scene>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::invalid("scene count must be at least 1"));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            render_scene(&mut rng, cfg, format!("synth-{seed}-{i:05}"))
        })
        .collect())
}

fn render_scene(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String) -> Scene {
    let s = cfg.size;
    let mut img = background(rng, s, cfg.background_cells);
    for _ in 0..rng.gen_range(cfg.clutter_range[0]..=cfg.clutter_range[1]) {
        clutter(rng, cfg, &mut img);
    }
    let target = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut gt: Vec<BBox> = Vec::new();
    let mut cells: Vec<(usize, usize)> = Vec::new();
    let mut attempts = 0;
    while gt.len() < target && attempts < 200 {
        attempts += 1;
        let fig = Figure::sample(rng, cfg);
        let Some(bbox) = fig.bounds(s) else { continue };
        let (cx, cy) = bbox.center();
        let cell = ((cx / GRID_STRIDE as f64) as usize, (cy / GRID_STRIDE as f64) as usize);
        let clear = gt.iter().all(|g| {
            g.x2 + 2.0 <= bbox.x1 || bbox.x2 + 2.0 <= g.x1 || g.y2 + 2.0 <= bbox.y1 || bbox.y2 + 2.0 <= g.y1
        });
        if !clear || cells.contains(&cell) {
            continue;
        }
        fig.draw(&mut img, s);
        gt.push(bbox);
        cells.push(cell);
    }
    for v in img.iter_mut() {
        *v = (*v * 255.0).round() / 255.0;
    }
    Scene {
        id,
        image: Tensor::new(vec![3, s, s], img).expect("rendered values are finite"),
        gt,
    }
}

/// Bilinear upsampling of a coarse random color grid, values in `[0.3, 0.6]`.
fn background(rng: &mut ChaCha8Rng, s: usize, cells: usize) -> Vec<f64> {
    let n = cells + 1;
    let nodes: Vec<f64> = (0..3 * n * n).map(|_| rng.gen_range(0.3..0.6)).collect();
    let mut img = vec![0.0; 3 * s * s];
    let step = (s - 1) as f64 / cells as f64;
    for y in 0..s {
        let gy = y as f64 / step;
        let y0 = (gy.floor() as usize).min(cells - 1);
        let fy = gy - y0 as f64;
        for x in 0..s {
            let gx = x as f64 / step;
            let x0 = (gx.floor() as usize).min(cells - 1);
            let fx = gx - x0 as f64;
            for ch in 0..3 {
                let at = |yy: usize, xx: usize| nodes[(ch * n + yy) * n + xx];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                img[(ch * s + y) * s + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    img
}

/// A striped or checkered rectangle in two saturated colors.
fn clutter(rng: &mut ChaCha8Rng, cfg: &SynthConfig, img: &mut [f64]) {
    let s = cfg.size;
    let side = |rng: &mut ChaCha8Rng| {
        ((rng.gen_range(cfg.clutter_size[0]..=cfg.clutter_size[1]) * s as f64) as usize).max(2)
    };
    let (w, h) = (side(rng), side(rng));
    let x0 = rng.gen_range(0..=s - w);
    let y0 = rng.gen_range(0..=s - h);
    let period = rng.gen_range(2..=5);
    let kind = rng.gen_range(0..3);
    let colors = [vivid(rng), vivid(rng)];
    for y in 0..h {
        for x in 0..w {
            let phase = match kind {
                0 => x / period,
                1 => y / period,
                _ => x / period + y / period,
            };
            for ch in 0..3 {
                img[(ch * s + y0 + y) * s + x0 + x] = colors[phase % 2][ch];
            }
        }
    }
}

/// Each channel near 0 or near 1, so figures stand out from the background.
fn vivid(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut c = [0.0; 3];
    for v in &mut c {
        *v = if rng.gen_bool(0.5) {
            rng.gen_range(0.0..0.15)
        } else {
            rng.gen_range(0.85..1.0)
        };
    }
    c
}

struct Figure {
    cx: f64,
    cy: f64,
    h: f64,
    w: f64,
    hand_y: [f64; 2],
    foot_x: [f64; 2],
    skin: [f64; 3],
    shirt: [f64; 3],
    pants: [f64; 3],
}

enum Part {
    Head,
    Torso,
    Limb,
    Leg,
}

impl Figure {
    fn sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let s = cfg.size as f64;
        let h = rng.gen_range(cfg.height_range[0]..=cfg.height_range[1]) * s;
        let w = rng.gen_range(cfg.aspect_range[0]..=cfg.aspect_range[1]) * h;
        let cx = rng.gen_range(w / 2.0 + 2.0..=s - w / 2.0 - 2.0);
        let cy = rng.gen_range(h / 2.0 + 2.0..=s - h / 2.0 - 2.0);
        let leg_r = 0.045 * h;
        let max_foot = (0.25 * h).min(w / 2.0 - leg_r).max(0.08 * h);
        let mut hand_y = [0.0; 2];
        let mut foot_x = [0.0; 2];
        for k in 0..2 {
            hand_y[k] = rng.gen_range(-0.35..0.1) * h;
            foot_x[k] = rng.gen_range(0.08 * h..=max_foot);
        }
        Self {
            cx,
            cy,
            h,
            w,
            hand_y,
            foot_x,
            skin: vivid(rng),
            shirt: vivid(rng),
            pants: vivid(rng),
        }
    }

    /// Part covering local point `(u, v)`, topmost first.
    fn part_at(&self, u: f64, v: f64) -> Option<Part> {
        let h = self.h;
        let head_r = 0.11 * h;
        let neck = -0.5 * h + 2.0 * head_r;
        if (u * u + (v + 0.5 * h - head_r).powi(2)).sqrt() <= head_r {
            return Some(Part::Head);
        }
        let arm_r = 0.035 * h;
        let torso_hw = 0.13 * h;
        for side in [-1.0, 1.0] {
            let k = usize::from(side > 0.0);
            let shoulder = (side * (torso_hw - 0.02 * h), neck + 0.03 * h);
            let hand = (side * (self.w / 2.0 - arm_r), self.hand_y[k]);
            if segment_distance((u, v), shoulder, hand) <= arm_r {
                return Some(Part::Limb);
            }
        }
        if rounded_rect((u, v), (-torso_hw, neck - 0.01 * h, torso_hw, 0.08 * h), 0.04 * h) {
            return Some(Part::Torso);
        }
        let leg_r = 0.045 * h;
        for side in [-1.0, 1.0] {
            let k = usize::from(side > 0.0);
            let hip = (side * 0.06 * h, 0.05 * h);
            let foot = (side * self.foot_x[k], 0.5 * h - leg_r);
            if segment_distance((u, v), hip, foot) <= leg_r {
                return Some(Part::Leg);
            }
        }
        None
    }

    fn pixels(&self, s: usize) -> impl Iterator<Item = (usize, usize, Part)> + '_ {
        let x0 = (self.cx - self.w / 2.0 - 1.0).floor().max(0.0) as usize;
        let x1 = ((self.cx + self.w / 2.0 + 1.0).ceil() as usize).min(s);
        let y0 = (self.cy - self.h / 2.0 - 1.0).floor().max(0.0) as usize;
        let y1 = ((self.cy + self.h / 2.0 + 1.0).ceil() as usize).min(s);
        (y0..y1).flat_map(move |y| {
            (x0..x1).filter_map(move |x| {
                self.part_at(x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy)
                    .map(|p| (x, y, p))
            })
        })
    }

    /// Tight box around the rendered pixels.
    fn bounds(&self, s: usize) -> Option<BBox> {
        let mut b: Option<[usize; 4]> = None;
        for (x, y, _) in self.pixels(s) {
            let e = b.get_or_insert([x, y, x, y]);
            e[0] = e[0].min(x);
            e[1] = e[1].min(y);
            e[2] = e[2].max(x);
            e[3] = e[3].max(y);
        }
        let [x1, y1, x2, y2] = b?;
        BBox::new(x1 as f64, y1 as f64, (x2 + 1) as f64, (y2 + 1) as f64).ok()
    }

    fn draw(&self, img: &mut [f64], s: usize) {
        let px: Vec<(usize, usize, Part)> = self.pixels(s).collect();
        for (x, y, part) in px {
            let color = match part {
                Part::Head => self.skin,
                Part::Torso | Part::Limb => self.shirt,
                Part::Leg => self.pants,
            };
            for (ch, v) in color.iter().enumerate() {
                img[(ch * s + y) * s + x] = *v;
            }
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn rounded_rect(p: (f64, f64), (x1, y1, x2, y2): (f64, f64, f64, f64), r: f64) -> bool {
    let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0);
    let dx = ((p.0 - cx).abs() - ((x2 - x1) / 2.0 - r)).max(0.0);
    let dy = ((p.1 - cy).abs() - ((y2 - y1) / 2.0 - r)).max(0.0);
    dx * dx + dy * dy <= r * r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_reproducible() {
        let cfg = SynthConfig::default();
        let a = gen_synthetic(6, &cfg, 9).unwrap();
        let b = gen_synthetic(6, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_synthetic(6, &cfg, 10).unwrap());
    }

    #[test]
    fn boxes_are_large_inside_and_one_per_cell() {
        let cfg = SynthConfig::default();
        let s = cfg.size as f64;
        for scene in gen_synthetic(40, &cfg, 3).unwrap() {
            assert!((1..=4).contains(&scene.gt.len()));
            let mut cells = Vec::new();
            for b in &scene.gt {
                assert!(b.area() >= (0.05 * s).powi(2));
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= s && b.y2 <= s);
                let (cx, cy) = b.center();
                let cell = ((cx / 16.0) as usize, (cy / 16.0) as usize);
                assert!(!cells.contains(&cell));
                cells.push(cell);
            }
            assert!(scene.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pixels_are_eight_bit_exact() {
        let scene = &gen_synthetic(1, &SynthConfig::default(), 1).unwrap()[0];
        for v in scene.image.data() {
            assert_eq!((v * 255.0).round() / 255.0, *v);
        }
    }
}
