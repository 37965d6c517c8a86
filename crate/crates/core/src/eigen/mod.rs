//! Principal components of a patch population ("eigenpatches").
//!
//! The basis is computed with the snapshot method: eigenvectors `v_j` of the
//! `n x n` Gram matrix of the (optionally mean-centred) flattened patches are
//! lifted to patch space as `E_j = X^T v_j / sqrt(mu_j)`. With `n` patches of
//! dimension `D`, this costs `O(n^2 D)` instead of a `D x D` eigenproblem.
//!
//! Reconstruction of patch `i` from the top `k` components is
//! `mean + sum_j w[i][j] E_j` where `w[i][j] = <P_i - mean, E_j>`. With
//! `center = false` the mean is zero and this is a bare linear combination.

mod jacobi;

use std::fs;
use std::path::Path;

pub use jacobi::symmetric_eigen;

use crate::binio::{put_f64s, put_u16, put_u32, Reader};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::patchset::{Patch, PatchSet};

const MAGIC: &[u8] = b"EPCA";
const VERSION: u16 = 1;

/// Gram eigenvalues at or below this fraction of the largest are treated as
/// zero; their directions cannot be lifted stably.
const RELATIVE_RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    shape: (usize, usize, usize),
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    n_input: usize,
    centered: bool,
}

/// Per-patch coordinates in the basis, `n_input x k_max`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// A reconstructed patch together with its unclamped values.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub patch: Patch,
    pub raw: Vec<f64>,
}

/// Fits the basis to `set`. Needs at least two patches.
pub fn fit(set: &PatchSet, center: bool) -> Result<(EigenBasis, WeightMatrix)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 patches, got {n}")));
    }
    let shape = set.shape();
    let d = shape.0 * shape.1 * shape.2;

    let mut mean = vec![0.0; d];
    if center {
        for p in set {
            for (m, v) in mean.iter_mut().zip(p.pixels().data()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
    }
    let rows: Vec<Vec<f64>> = set
        .iter()
        .map(|p| p.pixels().data().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut gram = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let g = dot(&rows[a], &rows[b]);
            gram[a * n + b] = g;
            gram[b * n + a] = g;
        }
    }
    let (mu, v) = symmetric_eigen(&gram, n);

    let k_max = if center { n - 1 } else { n }.min(d);
    let tol = RELATIVE_RANK_TOL * mu[0].max(1.0);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k_max);
    let mut eigenvalues = Vec::with_capacity(k_max);
    let denom = if center { (n - 1) as f64 } else { n as f64 };
    for j in 0..k_max {
        if mu[j] <= tol {
            break;
        }
        let scale = 1.0 / mu[j].sqrt();
        let mut e = vec![0.0; d];
        for (i, row) in rows.iter().enumerate() {
            let c = v[i * n + j] * scale;
            if c != 0.0 {
                for (ek, rk) in e.iter_mut().zip(row) {
                    *ek += c * rk;
                }
            }
        }
        if !orthonormalize(&mut e, &components) {
            break;
        }
        components.push(e);
        eigenvalues.push(mu[j] / denom);
    }
    // Zero-variance directions: complete with canonical vectors.
    let mut axis = 0;
    while components.len() < k_max && axis < d {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        axis += 1;
        if orthonormalize(&mut e, &components) {
            components.push(e);
            eigenvalues.push(0.0);
        }
    }
    for e in &mut components {
        fix_sign(e);
    }

    let mut weights = Vec::with_capacity(n * k_max);
    for row in &rows {
        weights.extend(components.iter().map(|e| dot(row, e)));
    }
    let basis = EigenBasis {
        shape,
        mean,
        components,
        eigenvalues,
        n_input: n,
        centered: center,
    };
    Ok((
        basis,
        WeightMatrix {
            rows: n,
            cols: k_max,
            data: weights,
        },
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-pass modified Gram-Schmidt of `e` against `basis`, then normalise.
/// Returns false when `e` has (numerically) no component outside the span.
fn orthonormalize(e: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let before = dot(e, e).sqrt();
    if before == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(e, b);
            e.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let norm = dot(e, e).sqrt();
    if norm <= 1e-6 * before {
        return false;
    }
    e.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Makes the entry of largest magnitude positive (first one on ties).
fn fix_sign(e: &mut [f64]) {
    let mut best = 0;
    for (i, v) in e.iter().enumerate() {
        if v.abs() > e[best].abs() {
            best = i;
        }
    }
    if e[best] < 0.0 {
        e.iter_mut().for_each(|x| *x = -*x);
    }
}

impl EigenBasis {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k_max(&self) -> usize {
        self.components.len()
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.components[j]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Component `j` as a `[C, H, W]` tensor (raw values, not clamped).
    pub fn component_image(&self, j: usize) -> Tensor {
        let (c, h, w) = self.shape;
        Tensor::from_parts(vec![c, h, w], self.components[j].clone())
    }

    pub fn mean_image(&self) -> Tensor {
        let (c, h, w) = self.shape;
        Tensor::from_parts(vec![c, h, w], self.mean.clone())
    }

    /// Coordinates of an arbitrary patch: `<P - mean, E_j>` for every component.
    pub fn project(&self, patch: &Patch) -> Result<Vec<f64>> {
        if patch.shape() != self.shape {
            return Err(Error::shape(format!(
                "patch {:?} does not match basis {:?}",
                patch.shape(),
                self.shape
            )));
        }
        let centred: Vec<f64> = patch
            .pixels()
            .data()
            .iter()
            .zip(&self.mean)
            .map(|(v, m)| v - m)
            .collect();
        Ok(self.components.iter().map(|e| dot(&centred, e)).collect())
    }

    /// `mean + sum_{j<k} weights[j] E_j`, clamped into a valid patch. `k`
    /// must be in `1..=k_max`.
    pub fn reconstruct(&self, weights: &[f64], k: usize) -> Result<Reconstruction> {
        if k == 0 || k > self.k_max() {
            return Err(Error::invalid(format!(
                "k = {k} outside 1..={}",
                self.k_max()
            )));
        }
        if weights.len() < k {
            return Err(Error::invalid(format!(
                "{} weights given for k = {k}",
                weights.len()
            )));
        }
        self.combine(&weights[..k], k)
    }

    /// `mean + sum_{j<k} coeffs[j] E_j`, clamped. `k = 0` yields the mean.
    pub fn combine(&self, coeffs: &[f64], k: usize) -> Result<Reconstruction> {
        if coeffs.len() != k {
            return Err(Error::invalid(format!(
                "{} coefficients given for k = {k}",
                coeffs.len()
            )));
        }
        if k > self.k_max() {
            return Err(Error::invalid(format!("k = {k} exceeds k_max = {}", self.k_max())));
        }
        let mut raw = self.mean.clone();
        self.accumulate(&mut raw, coeffs);
        self.finish(raw)
    }

    /// `sum_{j<k} coeffs[j] E_j` without the mean term.
    pub fn combine_without_mean(&self, coeffs: &[f64]) -> Result<Reconstruction> {
        if coeffs.len() > self.k_max() {
            return Err(Error::invalid(format!(
                "{} coefficients exceed k_max = {}",
                coeffs.len(),
                self.k_max()
            )));
        }
        let mut raw = vec![0.0; self.dim()];
        self.accumulate(&mut raw, coeffs);
        self.finish(raw)
    }

    fn accumulate(&self, raw: &mut [f64], coeffs: &[f64]) {
        for (c, e) in coeffs.iter().zip(&self.components) {
            if *c != 0.0 {
                raw.iter_mut().zip(e).for_each(|(r, x)| *r += c * x);
            }
        }
    }

    fn finish(&self, raw: Vec<f64>) -> Result<Reconstruction> {
        let (c, h, w) = self.shape;
        let patch = Patch::clamp01(Tensor::new(vec![c, h, w], raw.clone())?)?;
        Ok(Reconstruction { patch, raw })
    }

    /// Unweighted mean of the first `k` components (coefficients `1/k`),
    /// raw and unclamped; optionally with the data mean added.
    pub fn mean_of_components(&self, k: usize, with_mean: bool) -> Result<Tensor> {
        if k == 0 || k > self.k_max() {
            return Err(Error::invalid(format!("k = {k} outside 1..={}", self.k_max())));
        }
        let coeffs = vec![1.0 / k as f64; k];
        let mut raw = if with_mean {
            self.mean.clone()
        } else {
            vec![0.0; self.dim()]
        };
        self.accumulate(&mut raw, &coeffs);
        let (c, h, w) = self.shape;
        Tensor::new(vec![c, h, w], raw)
    }

    /// Fraction of total variance captured by the first `k` components.
    pub fn explained_variance(&self, k: usize) -> Result<f64> {
        if k > self.k_max() {
            return Err(Error::invalid(format!("k = {k} exceeds k_max = {}", self.k_max())));
        }
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return Ok(1.0);
        }
        Ok((self.eigenvalues[..k].iter().sum::<f64>() / total).clamp(0.0, 1.0))
    }

    /// Serialises the basis with its weight matrix (`EPCA` format).
    pub fn to_bytes(&self, weights: &WeightMatrix) -> Vec<u8> {
        let (c, h, w) = self.shape;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        put_u32(&mut out, self.dim());
        put_u32(&mut out, self.k_max());
        put_u32(&mut out, self.n_input);
        put_u32(&mut out, c);
        put_u32(&mut out, h);
        put_u32(&mut out, w);
        out.push(u8::from(self.centered));
        put_f64s(&mut out, &self.mean);
        put_f64s(&mut out, &self.eigenvalues);
        for e in &self.components {
            put_f64s(&mut out, e);
        }
        put_f64s(&mut out, &weights.data);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<(Self, WeightMatrix)> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.expect_version(VERSION)?;
        let at = r.offset();
        let d = r.usize32("D")?;
        let k_max = r.usize32("k_max")?;
        let n_input = r.usize32("n_input")?;
        let shape = (r.usize32("C")?, r.usize32("H")?, r.usize32("W")?);
        if shape.0 * shape.1 * shape.2 != d || k_max > d || k_max > n_input {
            return Err(Error::parse(at, "inconsistent basis header"));
        }
        let centered = r.u8("centered")? != 0;
        let mean = r.f64s(d, "mean")?;
        let eigenvalues = r.f64s(k_max, "eigenvalues")?;
        let components = (0..k_max)
            .map(|_| r.f64s(d, "component"))
            .collect::<Result<Vec<_>>>()?;
        let data = r.f64s(n_input * k_max, "weights")?;
        if !r.is_at_end() {
            return Err(Error::parse(r.offset(), "trailing bytes after basis"));
        }
        Ok((
            Self {
                shape,
                mean,
                components,
                eigenvalues,
                n_input,
                centered,
            },
            WeightMatrix {
                rows: n_input,
                cols: k_max,
                data,
            },
        ))
    }

    pub fn save(&self, weights: &WeightMatrix, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes(weights))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, WeightMatrix)> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_set(n: usize, c: usize, h: usize, w: usize, seed: u64) -> PatchSet {
        PatchSet::new(
            (0..n)
                .map(|i| Patch::init_random(c, h, w, seed * 1000 + i as u64).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn needs_two_patches() {
        assert!(fit(&random_set(1, 1, 4, 4, 0), true).is_err());
    }

    #[test]
    fn identical_patches_have_zero_variance() {
        let p = Patch::init_random(3, 4, 4, 5).unwrap();
        let set = PatchSet::new(vec![p.clone(); 5]).unwrap();
        let (basis, _) = fit(&set, true).unwrap();
        assert!(basis.eigenvalues().iter().all(|&v| v == 0.0));
        assert_eq!(basis.k_max(), 4);
        for (m, v) in basis.mean().iter().zip(p.pixels().data()) {
            assert!((m - v).abs() < 1e-15);
        }
        assert_eq!(basis.explained_variance(2).unwrap(), 1.0);
    }

    #[test]
    fn two_patches_span_one_direction() {
        let set = random_set(2, 3, 4, 4, 1);
        let (basis, weights) = fit(&set, true).unwrap();
        assert_eq!(basis.k_max(), 1);
        assert_eq!(basis.eigenvalues().iter().filter(|&&v| v > 1e-12).count(), 1);
        assert_eq!(basis.explained_variance(1).unwrap(), 1.0);
        // 2x2 Gram by hand: with d = P1 - P2, both centred rows are +-d/2,
        // the single Gram eigenvalue is |d|^2 / 2 and the sample variance
        // along it is the same value divided by n - 1 = 1.
        let a = set.get(0).unwrap().pixels().data();
        let b = set.get(1).unwrap().pixels().data();
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((basis.eigenvalues()[0] - d2 / 2.0).abs() < 1e-12);
        let w0 = weights.row(0)[0];
        assert!((w0.abs() - d2.sqrt() / 2.0).abs() < 1e-12);
        assert!((weights.row(0)[0] + weights.row(1)[0]).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let set = random_set(6, 3, 4, 4, 2);
        let (basis, weights) = fit(&set, true).unwrap();
        for (i, p) in set.iter().enumerate() {
            let r = basis.reconstruct(weights.row(i), basis.k_max()).unwrap();
            let err = r
                .raw
                .iter()
                .zip(p.pixels().data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "patch {i}: {err}");
        }
    }

    #[test]
    fn uncentered_mode_is_a_bare_combination() {
        let set = random_set(4, 1, 4, 4, 3);
        let (basis, weights) = fit(&set, false).unwrap();
        assert_eq!(basis.k_max(), 4);
        assert!(basis.mean().iter().all(|&m| m == 0.0));
        let r = basis.reconstruct(weights.row(2), 4).unwrap();
        for (a, b) in r.raw.iter().zip(set.get(2).unwrap().pixels().data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn k_out_of_range() {
        let set = random_set(4, 1, 4, 4, 4);
        let (basis, weights) = fit(&set, true).unwrap();
        assert!(basis.reconstruct(weights.row(0), 0).is_err());
        assert!(basis.reconstruct(weights.row(0), 4).is_err());
        assert!(basis.combine(&[1.0, 2.0], 3).is_err());
        assert!(basis.explained_variance(4).is_err());
    }

    #[test]
    fn combine_examples() {
        let set = random_set(5, 3, 4, 4, 6);
        let (basis, weights) = fit(&set, true).unwrap();
        let zero = basis.combine(&[0.0, 0.0], 2).unwrap();
        assert_eq!(zero.raw, basis.mean());
        let a = basis.combine(&weights.row(1)[..3], 3).unwrap();
        let b = basis.reconstruct(weights.row(1), 3).unwrap();
        assert_eq!(a.raw, b.raw);
        assert_eq!(basis.combine(&[], 0).unwrap().raw, basis.mean());
    }

    #[test]
    fn explained_variance_is_monotone_and_complete() {
        let set = random_set(8, 1, 4, 4, 7);
        let (basis, _) = fit(&set, true).unwrap();
        let mut last = 0.0;
        for k in 0..=basis.k_max() {
            let v = basis.explained_variance(k).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!((last - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_convention_holds() {
        let set = random_set(7, 3, 4, 4, 8);
        let (basis, _) = fit(&set, true).unwrap();
        for e in basis.components() {
            let big = e.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn archive_round_trip() {
        let set = random_set(4, 1, 4, 4, 9);
        let (basis, weights) = fit(&set, true).unwrap();
        let (b2, w2) = EigenBasis::from_bytes(&basis.to_bytes(&weights)).unwrap();
        assert_eq!(basis, b2);
        assert_eq!(weights, w2);
        let mut bad = basis.to_bytes(&weights);
        bad[1] = b'X';
        assert!(matches!(EigenBasis::from_bytes(&bad), Err(Error::Parse { offset: 0, .. })));
    }
}
