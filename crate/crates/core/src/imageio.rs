//! 8-bit PNG bridge for `[C, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a one- or three-channel tensor as PNG, clamping into `[0, 1]`.
pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = t.dims3()?;
    let px = h * w;
    let d = t.data();
    match c {
        1 => {
            let buf = d.iter().map(|&v| to_u8(v)).collect();
            GrayImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from dims")
                .save(path)?;
        }
        3 => {
            let mut buf = Vec::with_capacity(3 * px);
            for p in 0..px {
                for ch in 0..3 {
                    buf.push(to_u8(d[ch * px + p]));
                }
            }
            RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from dims")
                .save(path)?;
        }
        _ => {
            return Err(Error::shape(format!(
                "PNG export needs 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

/// Reads any PNG as a three-channel tensor scaled to `[0, 1]`.
pub fn load_png_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = w * h;
    let mut data = vec![0.0; 3 * px];
    for (p, pixel) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * px + p] = f64::from(pixel[ch]) / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Tiles `[C, H, W]` tensors into one grid image, `cols` per row, with a
/// one-pixel white gutter. Each tile is min-max normalised when `normalize`.
pub fn tile(tiles: &[Tensor], cols: usize, normalize: bool) -> Result<Tensor> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::invalid("nothing to tile"))?;
    let (c, h, w) = first.dims3()?;
    let cols = cols.clamp(1, tiles.len());
    let rows = tiles.len().div_ceil(cols);
    let (gh, gw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    let mut out = vec![1.0; c * gh * gw];
    for (i, t) in tiles.iter().enumerate() {
        if t.shape() != first.shape() {
            return Err(Error::shape("tiles must share a shape"));
        }
        let (lo, hi) = if normalize {
            let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        } else {
            (0.0, 1.0)
        };
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (oy, ox) = ((i / cols) * (h + 1) + 1, (i % cols) * (w + 1) + 1);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ch * gh + oy + y) * gw + ox + x] = (t.at3(ch, y, x) - lo) / span;
                }
            }
        }
    }
    Tensor::new(vec![c, gh, gw], out)
}
