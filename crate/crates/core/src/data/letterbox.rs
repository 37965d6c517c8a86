use crate::boxes::BBox;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const PAD_VALUE: f64 = 0.5;

/// Geometry of an aspect-preserving resize to `size x size` with centered
/// gray padding on the short axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Letterbox {
    pub src_w: usize,
    pub src_h: usize,
    pub size: usize,
    pub new_w: usize,
    pub new_h: usize,
    pub pad_x: usize,
    pub pad_y: usize,
}

impl Letterbox {
    pub fn new(src_w: usize, src_h: usize, size: usize) -> Result<Self> {
        if src_w == 0 || src_h == 0 || size == 0 {
            return Err(Error::invalid(format!(
                "cannot letterbox {src_w}x{src_h} into {size}"
            )));
        }
        let scale = size as f64 / src_w.max(src_h) as f64;
        let new_w = ((src_w as f64 * scale).round() as usize).clamp(1, size);
        let new_h = ((src_h as f64 * scale).round() as usize).clamp(1, size);
        Ok(Self {
            src_w,
            src_h,
            size,
            new_w,
            new_h,
            pad_x: (size - new_w) / 2,
            pad_y: (size - new_h) / 2,
        })
    }

    pub fn scale_x(&self) -> f64 {
        self.new_w as f64 / self.src_w as f64
    }

    pub fn scale_y(&self) -> f64 {
        self.new_h as f64 / self.src_h as f64
    }

    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.scale_x() + self.pad_x as f64,
            y * self.scale_y() + self.pad_y as f64,
        )
    }

    pub fn unmap_point(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.pad_x as f64) / self.scale_x(),
            (y - self.pad_y as f64) / self.scale_y(),
        )
    }

    pub fn map_box(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.map_point(b.x1, b.y1);
        let (x2, y2) = self.map_point(b.x2, b.y2);
        BBox { x1, y1, x2, y2 }
    }

    pub fn unmap_box(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.unmap_point(b.x1, b.y1);
        let (x2, y2) = self.unmap_point(b.x2, b.y2);
        BBox { x1, y1, x2, y2 }
    }

    /// Bilinear half-pixel resampling into the padded square.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = image.dims3()?;
        if (w, h) != (self.src_w, self.src_h) {
            return Err(Error::shape(format!(
                "letterbox built for {}x{}, image is {w}x{h}",
                self.src_w, self.src_h
            )));
        }
        let s = self.size;
        let src = image.data();
        let mut out = vec![PAD_VALUE; c * s * s];
        let (sx, sy) = (self.scale_x(), self.scale_y());
        let taps = |o: usize, scale: f64, n: usize| {
            let p = ((o as f64 + 0.5) / scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = p.floor() as usize;
            (i0, (i0 + 1).min(n - 1), p - i0 as f64)
        };
        for oy in 0..self.new_h {
            let (y0, y1, fy) = taps(oy, sy, h);
            for ox in 0..self.new_w {
                let (x0, x1, fx) = taps(ox, sx, w);
                for ch in 0..c {
                    let at = |y: usize, x: usize| src[(ch * h + y) * w + x];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    out[(ch * s + oy + self.pad_y) * s + ox + self.pad_x] =
                        top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Tensor::new(vec![c, s, s], out)
    }
}

/// Letterboxes `image` to `size x size`.
pub fn letterbox(image: &Tensor, size: usize) -> Result<(Tensor, Letterbox)> {
    let (_, h, w) = image.dims3()?;
    let lb = Letterbox::new(w, h, size)?;
    Ok((lb.apply(image)?, lb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        let n = c * h * w;
        Tensor::new(vec![c, h, w], (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn square_input_is_pure_resize() {
        let lb = Letterbox::new(320, 320, 160).unwrap();
        assert_eq!((lb.pad_x, lb.pad_y, lb.new_w, lb.new_h), (0, 0, 160, 160));
    }

    #[test]
    fn two_to_one_pads_a_quarter() {
        let lb = Letterbox::new(320, 160, 160).unwrap();
        assert_eq!((lb.pad_x, lb.pad_y), (0, 40));
        let (img, _) = letterbox(&ramp(3, 160, 320), 160).unwrap();
        assert_eq!(img.at3(1, 0, 7), PAD_VALUE);
        assert_eq!(img.at3(1, 159, 7), PAD_VALUE);
        assert_ne!(img.at3(1, 40, 7), PAD_VALUE);
    }

    #[test]
    fn idempotent_on_letterboxed_input() {
        let (once, _) = letterbox(&ramp(3, 30, 50), 40).unwrap();
        let (twice, lb) = letterbox(&once, 40).unwrap();
        assert_eq!((lb.pad_x, lb.pad_y), (0, 0));
        assert_eq!(once, twice);
    }

    #[test]
    fn box_round_trip() {
        for (w, h) in [(640, 480), (333, 517), (100, 100), (1000, 37)] {
            let lb = Letterbox::new(w, h, 160).unwrap();
            let b = BBox::new(0.1 * w as f64, 0.2 * h as f64, 0.7 * w as f64, 0.9 * h as f64).unwrap();
            let back = lb.unmap_box(&lb.map_box(&b));
            for (a, z) in [(b.x1, back.x1), (b.y1, back.y1), (b.x2, back.x2), (b.y2, back.y2)] {
                assert!((a - z).abs() < 0.51, "{w}x{h}: {a} vs {z}");
            }
        }
    }
}
