//! 2-D cross-correlation over `[C, H, W]` inputs via im2col.

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [c_in, h, w] = *input else {
            return Err(Error::shape(format!("conv2d input must be [C,H,W], got {input:?}")));
        };
        let [c_out, kc, kh, kw] = *kernels else {
            return Err(Error::shape(format!(
                "conv2d kernels must be [C_out,C_in,kh,kw], got {kernels:?}"
            )));
        };
        if kc != c_in {
            return Err(Error::shape(format!(
                "conv2d kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if kh == 0 || kw == 0 || kh > ph || kw > pw {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {ph}x{pw}"
            )));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::shape(format!(
                "conv2d output size is fractional: ({ph}-{kh})/{stride} x ({pw}-{kw})/{stride}"
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    /// Output positions `o` along an axis of length `len` with `o*stride + k - pad` in range.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(s)
        } else {
            0
        };
        let top = len - 1 + self.pad;
        if top < k {
            return 0..0;
        }
        let hi = ((top - k) / s + 1).min(out_len);
        lo..hi.max(lo)
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.c_out, self.out_h, self.out_w]
    }
}

/// Unrolled input patches: row `(ic, ky, kx)`, column `(oy, ox)`; zero
/// where the window hits padding.
fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let mut cols = vec![0.0; g.c_in * g.kh * g.kw * plane];
    let s = g.stride;
    for ic in 0..g.c_in {
        let x_c = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let rows = g.valid(ky, g.h, g.out_h);
            for kx in 0..g.kw {
                let cols_x = g.valid(kx, g.w, g.out_w);
                let r = (ic * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[r * plane..(r + 1) * plane];
                for oy in rows.clone() {
                    let iy = oy * s + ky - g.pad;
                    let x_row = &x_c[iy * g.w..(iy + 1) * g.w];
                    let d_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in cols_x.clone() {
                        d_row[ox] = x_row[ox * s + kx - g.pad];
                    }
                }
            }
        }
    }
    cols
}

/// Inverse of [`im2col`]: accumulates patch gradients back onto the input.
fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let mut gx = vec![0.0; g.c_in * g.h * g.w];
    let s = g.stride;
    for ic in 0..g.c_in {
        let gx_c = &mut gx[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let rows = g.valid(ky, g.h, g.out_h);
            for kx in 0..g.kw {
                let cols_x = g.valid(kx, g.w, g.out_w);
                let r = (ic * g.kh + ky) * g.kw + kx;
                let src = &cols[r * plane..(r + 1) * plane];
                for oy in rows.clone() {
                    let iy = oy * s + ky - g.pad;
                    let g_row = &mut gx_c[iy * g.w..(iy + 1) * g.w];
                    let s_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in cols_x.clone() {
                        g_row[ox * s + kx - g.pad] += s_row[ox];
                    }
                }
            }
        }
    }
    gx
}

/// Dot product with four independent partial sums so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

pub fn forward(input: &Tensor, kernels: &Tensor, g: &ConvGeometry) -> Tensor {
    let plane = g.out_h * g.out_w;
    let depth = g.c_in * g.kh * g.kw;
    let cols = im2col(input.data(), g);
    let k = kernels.data();
    let mut out = vec![0.0; g.c_out * plane];
    for oc in 0..g.c_out {
        let o = &mut out[oc * plane..(oc + 1) * plane];
        for r in 0..depth {
            axpy(o, k[oc * depth + r], &cols[r * plane..(r + 1) * plane]);
        }
    }
    Tensor::from_parts(g.output_shape().to_vec(), out)
}

pub fn backward_input(kernels: &Tensor, grad_out: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let depth = g.c_in * g.kh * g.kw;
    let k = kernels.data();
    let mut gcols = vec![0.0; depth * plane];
    for oc in 0..g.c_out {
        let go = &grad_out[oc * plane..(oc + 1) * plane];
        for r in 0..depth {
            axpy(&mut gcols[r * plane..(r + 1) * plane], k[oc * depth + r], go);
        }
    }
    col2im(&gcols, g)
}

pub fn backward_kernels(input: &Tensor, grad_out: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let depth = g.c_in * g.kh * g.kw;
    let cols = im2col(input.data(), g);
    let mut gk = vec![0.0; g.c_out * depth];
    for oc in 0..g.c_out {
        let go = &grad_out[oc * plane..(oc + 1) * plane];
        for r in 0..depth {
            gk[oc * depth + r] = dot(go, &cols[r * plane..(r + 1) * plane]);
        }
    }
    gk
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive reference with explicit zero padding.
    fn reference(input: &Tensor, kernels: &Tensor, g: &ConvGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.c_out * g.out_h * g.out_w];
        for oc in 0..g.c_out {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0.0;
                    for ic in 0..g.c_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += kernels.data()[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx]
                                    * input.at3(ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    out[(oc * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_reference_with_padding_and_stride() {
        let input = Tensor::new(vec![2, 6, 6], (0..72).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let kernels =
            Tensor::new(vec![3, 2, 2, 2], (0..24).map(|i| (i as f64 * 0.91).cos()).collect())
                .unwrap();
        for (stride, pad) in [(1, 0), (2, 0), (1, 1), (2, 1)] {
            let Ok(g) = ConvGeometry::new(input.shape(), kernels.shape(), stride, pad) else {
                continue;
            };
            let fast = forward(&input, &kernels, &g);
            let slow = reference(&input, &kernels, &g);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fractional_output_is_rejected() {
        let err = ConvGeometry::new(&[3, 160, 160], &[8, 3, 3, 3], 2, 1).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn channel_mismatch_names_dims() {
        let err = ConvGeometry::new(&[2, 4, 4], &[1, 3, 1, 1], 1, 0).unwrap_err();
        assert!(err.to_string().contains("3 input channels"));
    }
}
