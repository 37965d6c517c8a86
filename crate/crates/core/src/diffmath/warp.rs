//! Bilinear resampling under affine and projective warps.
//!
//! Warps are expressed on the normalized `[-1, 1]^2` grid with corner
//! alignment: pixel `0` maps to `-1` and pixel `n - 1` maps to `+1`. A warp
//! maps *output* coordinates to *source* coordinates. Samples falling outside
//! the source are zero and flagged in the coverage mask.

use crate::error::{Error, Result};

use super::Tensor;

/// Row-major 3x3 matrix.
pub type Mat3 = [f64; 9];

const SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Warp {
    /// 2x3 affine matrix, row-major.
    Affine([f64; 6]),
    /// 3x3 homography, row-major.
    Homography(Mat3),
}

impl Warp {
    pub fn identity() -> Self {
        Warp::Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    fn matrix(&self) -> Mat3 {
        match *self {
            Warp::Affine(t) => [t[0], t[1], t[2], t[3], t[4], t[5], 0.0, 0.0, 1.0],
            Warp::Homography(h) => h,
        }
    }

    /// Normalized warp equivalent to a pixel-space map `output px -> source px`.
    pub fn from_pixel_homography(h_px: &Mat3, src_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        let n_src = normalizer(src_hw);
        let n_out_inv = denormalizer(out_hw);
        Warp::Homography(mul3(&mul3(&n_src, h_px), &n_out_inv))
    }

    fn check_finite(&self) -> Result<()> {
        if self.matrix().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("warp matrix {:?}", self.matrix())))
        }
    }
}

/// pixel -> normalized
fn normalizer((h, w): (usize, usize)) -> Mat3 {
    let sx = if w > 1 { 2.0 / (w - 1) as f64 } else { 0.0 };
    let sy = if h > 1 { 2.0 / (h - 1) as f64 } else { 0.0 };
    [sx, 0.0, -1.0, 0.0, sy, -1.0, 0.0, 0.0, 1.0]
}

/// normalized -> pixel
fn denormalizer((h, w): (usize, usize)) -> Mat3 {
    let hx = (w.max(1) - 1) as f64 / 2.0;
    let hy = (h.max(1) - 1) as f64 / 2.0;
    [hx, 0.0, hx, 0.0, hy, hy, 0.0, 0.0, 1.0]
}

pub fn mul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
        }
    }
    out
}

pub fn apply3(m: &Mat3, x: f64, y: f64) -> Option<(f64, f64)> {
    let d = m[6] * x + m[7] * y + m[8];
    if d <= 1e-12 {
        return None;
    }
    Some((
        (m[0] * x + m[1] * y + m[2]) / d,
        (m[3] * x + m[4] * y + m[5]) / d,
    ))
}

pub fn invert3(m: &Mat3) -> Result<Mat3> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    if det.abs() < 1e-15 || !det.is_finite() {
        return Err(Error::invalid("singular 3x3 matrix"));
    }
    let inv = [
        m[4] * m[8] - m[5] * m[7],
        m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3],
    ];
    Ok(inv.map(|v| v / det))
}

/// Homography mapping the four `from` points onto the four `to` points.
pub fn homography_from_points(from: &[[f64; 2]; 4], to: &[[f64; 2]; 4]) -> Result<Mat3> {
    // h33 = 1; eight unknowns, two equations per correspondence.
    let mut a = [[0.0f64; 9]; 8];
    for (i, (p, q)) in from.iter().zip(to).enumerate() {
        let (x, y, u, v) = (p[0], p[1], q[0], q[1]);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::invalid("degenerate point correspondence"));
        }
        a.swap(col, pivot);
        for r in 0..8 {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..9 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let mut h = [0.0; 9];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    h[8] = 1.0;
    Ok(h)
}

#[derive(Clone, Debug)]
struct Sample {
    out: u32,
    src: [u32; 4],
    weight: [f64; 4],
}

/// Precomputed bilinear gather table for one warp.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    src_hw: (usize, usize),
    out_hw: (usize, usize),
    samples: Vec<Sample>,
    mask: Tensor,
}

impl SampleGrid {
    /// Builds the table for all output pixels, or only those inside `region`
    /// (`[y0, y1, x0, x1)` half-open) when given; pixels outside the region are
    /// treated as uncovered.
    pub fn new(
        warp: &Warp,
        src_hw: (usize, usize),
        out_hw: (usize, usize),
        region: Option<[usize; 4]>,
    ) -> Result<Self> {
        warp.check_finite()?;
        let (sh, sw) = src_hw;
        let (oh, ow) = out_hw;
        if sh == 0 || sw == 0 || oh == 0 || ow == 0 {
            return Err(Error::shape(format!(
                "warp sizes must be non-zero: src {src_hw:?}, out {out_hw:?}"
            )));
        }
        let m = mul3(
            &mul3(&denormalizer(src_hw), &warp.matrix()),
            &normalizer(out_hw),
        );
        let [y0, y1, x0, x1] = region.unwrap_or([0, oh, 0, ow]);
        let (y1, x1) = (y1.min(oh), x1.min(ow));
        let mut samples = Vec::new();
        let mut mask = vec![0.0; oh * ow];
        for oy in y0..y1 {
            for ox in x0..x1 {
                let Some((sx, sy)) = apply3(&m, ox as f64, oy as f64) else {
                    continue;
                };
                let (Some(sx), Some(sy)) = (snap(sx, sw), snap(sy, sh)) else {
                    continue;
                };
                let (ix, fx) = split(sx, sw);
                let (iy, fy) = split(sy, sh);
                let ix1 = (ix + 1).min(sw - 1);
                let iy1 = (iy + 1).min(sh - 1);
                let out = oy * ow + ox;
                mask[out] = 1.0;
                samples.push(Sample {
                    out: out as u32,
                    src: [
                        (iy * sw + ix) as u32,
                        (iy * sw + ix1) as u32,
                        (iy1 * sw + ix) as u32,
                        (iy1 * sw + ix1) as u32,
                    ],
                    weight: [
                        (1.0 - fy) * (1.0 - fx),
                        (1.0 - fy) * fx,
                        fy * (1.0 - fx),
                        fy * fx,
                    ],
                });
            }
        }
        Ok(Self {
            src_hw,
            out_hw,
            samples,
            mask: Tensor::from_parts(vec![1, oh, ow], mask),
        })
    }

    pub fn src_hw(&self) -> (usize, usize) {
        self.src_hw
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.out_hw
    }

    /// `[1, out_h, out_w]` coverage: 1 where the sample landed inside the source.
    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn covered(&self) -> usize {
        self.samples.len()
    }

    pub fn forward(&self, src: &Tensor) -> Result<Tensor> {
        let (c, h, w) = src.dims3()?;
        if (h, w) != self.src_hw {
            return Err(Error::shape(format!(
                "warp built for {:?} source, got {h}x{w}",
                self.src_hw
            )));
        }
        let (oh, ow) = self.out_hw;
        let x = src.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let xs = &x[ch * h * w..(ch + 1) * h * w];
            let os = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for s in &self.samples {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += s.weight[k] * xs[s.src[k] as usize];
                }
                os[s.out as usize] = acc;
            }
        }
        Ok(Tensor::from_parts(vec![c, oh, ow], out))
    }

    pub fn backward(&self, grad_out: &[f64], channels: usize) -> Vec<f64> {
        let (h, w) = self.src_hw;
        let (oh, ow) = self.out_hw;
        let mut gx = vec![0.0; channels * h * w];
        for ch in 0..channels {
            let go = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
            let gs = &mut gx[ch * h * w..(ch + 1) * h * w];
            for s in &self.samples {
                let g = go[s.out as usize];
                if g != 0.0 {
                    for k in 0..4 {
                        gs[s.src[k] as usize] += s.weight[k] * g;
                    }
                }
            }
        }
        gx
    }
}

/// Pixel coordinate snapped onto the grid, or `None` when outside `[0, n-1]`.
fn snap(v: f64, n: usize) -> Option<f64> {
    let hi = (n - 1) as f64;
    if v < -SNAP || v > hi + SNAP {
        return None;
    }
    let r = v.round();
    Some(if (v - r).abs() <= SNAP { r } else { v }.clamp(0.0, hi))
}

fn split(v: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let i = (v.floor() as usize).min(n - 2);
    (i, v - i as f64)
}
