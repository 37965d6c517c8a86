//! Dense `f64` tensors with a small reverse-mode tape: just enough for the
//! detector forward pass, patch compositing and the attack losses.

pub mod conv;
pub mod gradcheck;
mod tape;
mod tensor;
pub mod warp;

pub use tape::{sigmoid, Gradients, JitterGains, NodeId, Pointwise, Tape};
pub use tensor::Tensor;
pub use warp::{SampleGrid, Warp};

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::gradcheck::{central_difference, relative_error, STEP};
    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Analytic gradient of `build` w.r.t. its input next to the numerical one.
    fn grads(x: &Tensor, build: impl Fn(&mut Tape, NodeId) -> NodeId) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone(), true);
        let root = build(&mut tape, leaf);
        let analytic = tape.backward(root).unwrap().get(leaf).unwrap().into_data();
        let numeric = central_difference(x, STEP, |p| {
            let mut t = Tape::new();
            let l = t.leaf(p.clone(), false);
            let r = build(&mut t, l);
            t.value(r).item()
        });
        (analytic, numeric)
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let x = random(&[1, 3, 3], 1);
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let k = tape.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv2d(xi, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[10.0]);
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let k = random(&[2, 1, 3, 3], 7);
        let x = random(&[1, 4, 4], 8);
        let (a, n) = grads(&x, |t, xi| {
            let kk = t.constant(k.clone());
            let y = t.conv2d(xi, kk, 1, 1).unwrap();
            t.sum(y)
        });
        assert!(relative_error(&a, &n) < 1e-5);
    }

    #[test]
    fn conv_kernel_gradient_matches_finite_differences() {
        let x = random(&[2, 6, 6], 3);
        let k = random(&[3, 2, 2, 2], 4);
        let (a, n) = grads(&k, |t, ki| {
            let xi = t.constant(x.clone());
            let y = t.conv2d(xi, ki, 2, 0).unwrap();
            let y2 = t.mul(y, y).unwrap();
            t.sum(y2)
        });
        assert!(relative_error(&a, &n) < 1e-6);
    }

    #[test]
    fn pointwise_examples() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::new(vec![1], vec![0.0]).unwrap(), true);
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);
        let g = tape.backward(s).unwrap().get(z).unwrap();
        assert_eq!(g.item(), 0.25);

        let m = tape.constant(Tensor::new(vec![1], vec![-2.0]).unwrap());
        let r = tape.leaky_relu(m, 0.1);
        assert!((tape.value(r).item() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_slope_matches_finite_differences_tightly() {
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let (a, n) = grads(&x, |t, xi| t.sigmoid(xi));
        assert!((a[0] - 0.25).abs() < 1e-15);
        assert!((a[0] - n[0]).abs() < 1e-8);
    }

    #[test]
    fn binary_pointwise_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.pointwise(Pointwise::Mul, a, Some(b)).is_err());
        assert!(tape.pointwise(Pointwise::Sub, a, None).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(random(&[2, 3], 5), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap().get(x).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap().get(x).unwrap();
        assert_eq!(g.data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn identity_affine_reproduces_source() {
        let src = random(&[3, 5, 7], 11);
        let mut tape = Tape::new();
        let s = tape.constant(src.clone());
        let (y, mask) = tape
            .affine_sample(s, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 5, 7)
            .unwrap();
        assert_eq!(tape.value(y).data(), src.data());
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn half_turn_flips_both_axes() {
        let src = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(src);
        let (y, _) = tape
            .affine_sample(s, [-1.0, 0.0, 0.0, 0.0, -1.0, 0.0], 2, 2)
            .unwrap();
        // permutation oracle: out[i][j] = src[1-i][1-j]
        assert_eq!(tape.value(y).data(), &[4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn affine_rejects_non_finite_theta() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[1, 2, 2]));
        assert!(tape
            .affine_sample(s, [f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0], 2, 2)
            .is_err());
    }

    #[test]
    fn affine_gradient_matches_finite_differences() {
        let src = random(&[2, 6, 6], 21);
        let w = random(&[2, 9, 8], 22);
        let theta = [0.7, -0.3, 0.1, 0.25, 0.8, -0.05];
        let (a, n) = grads(&src, |t, s| {
            let (y, _) = t.affine_sample(s, theta, 9, 8).unwrap();
            t.weighted_sum(y, w.clone()).unwrap()
        });
        assert!(relative_error(&a, &n) < 1e-4);
    }

    #[test]
    fn out_of_bounds_samples_are_zero_and_unmasked() {
        let src = Tensor::full(&[1, 4, 4], 0.8);
        let mut tape = Tape::new();
        let s = tape.constant(src);
        // shrink the source into the middle half of the output
        let (y, mask) = tape
            .affine_sample(s, [2.0, 0.0, 0.0, 0.0, 2.0, 0.0], 9, 9)
            .unwrap();
        let v = tape.value(y);
        for (o, m) in v.data().iter().zip(mask.data()) {
            if *m == 0.0 {
                assert_eq!(*o, 0.0);
            } else {
                assert!((o - 0.8).abs() < 1e-12);
            }
        }
        assert_eq!(mask.data().iter().filter(|&&m| m == 1.0).count(), 25);
    }

    #[test]
    fn homography_identity_reproduces_source() {
        let src = random(&[1, 4, 6], 3);
        let mut tape = Tape::new();
        let s = tape.constant(src.clone());
        let (y, _) = tape
            .homography_sample(s, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 4, 6)
            .unwrap();
        assert_eq!(tape.value(y).data(), src.data());
    }

    #[test]
    fn total_variation_examples() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full(&[3, 4, 4], 0.3));
        let tv = tape.total_variation(c).unwrap();
        assert_eq!(tape.value(tv).item(), 0.0);

        let p = tape.constant(Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap());
        let tv = tape.total_variation(p).unwrap();
        assert_eq!(tape.value(tv).item(), 1.0);
    }

    #[test]
    fn composite_with_empty_mask_is_bit_exact() {
        let base = random(&[3, 4, 4], 1);
        let mut tape = Tape::new();
        let b = tape.constant(base.clone());
        let o = tape.constant(random(&[3, 4, 4], 2));
        let y = tape.composite(b, o, Tensor::zeros(&[1, 4, 4])).unwrap();
        assert_eq!(tape.value(y), &base);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let x = random(&[3, 8, 8], 9);
        let k = random(&[4, 3, 2, 2], 10);
        let run = || {
            let mut t = Tape::new();
            let xi = t.constant(x.clone());
            let ki = t.constant(k.clone());
            let y = t.conv2d(xi, ki, 2, 0).unwrap();
            let y = t.leaky_relu(y, 0.1);
            t.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}
