//! Patches and patch populations, with the `EPCH` / `EPSET` archive formats.
//!
//! `EPCH` (little-endian): magic `"EPCH"`, version `u16 = 1`, `C, H, W` as
//! `u32`, `C*H*W` `f64` values, then a `u32`-length-prefixed UTF-8 metadata
//! string of `key=value` lines. `EPSET`: magic `"EPSET"`, `u32` count, then
//! that many concatenated `EPCH` records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{put_f64s, put_string, put_u16, put_u32, Reader};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::imageio;

const PATCH_MAGIC: &[u8] = b"EPCH";
const SET_MAGIC: &[u8] = b"EPSET";
const VERSION: u16 = 1;

/// Number of gray control patches: values `k / 10` for `k = 0..=10`.
pub const GRAY_CONTROL_COUNT: usize = 11;

/// Provenance as ordered `key=value` pairs.
pub type PatchMeta = BTreeMap<String, String>;

/// A `[C, H, W]` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pixels: Tensor,
    meta: PatchMeta,
}

impl Patch {
    pub fn new(pixels: Tensor) -> Result<Self> {
        let (c, h, w) = pixels.dims3()?;
        validate_dims(c, h, w)?;
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("patch value {v} outside [0, 1]")));
        }
        Ok(Self {
            pixels,
            meta: PatchMeta::new(),
        })
    }

    /// Clips every value into `[0, 1]`.
    pub fn clamp01(pixels: Tensor) -> Result<Self> {
        let clipped = pixels.map(|v| v.clamp(0.0, 1.0));
        Self::new(clipped)
    }

    /// I.i.d. uniform `[0, 1]` values.
    pub fn init_random(c: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        validate_dims(c, h, w)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w).map(|_| rng.gen::<f64>()).collect();
        Self::new(Tensor::new(vec![c, h, w], data)?)
    }

    pub fn gray(c: usize, h: usize, w: usize, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("gray value {value} outside [0, 1]")));
        }
        validate_dims(c, h, w)?;
        Self::new(Tensor::full(&[c, h, w], value))
    }

    /// The standard control set: gray values `0.0, 0.1, ..., 1.0`.
    pub fn gray_controls(c: usize, h: usize, w: usize) -> Result<Vec<Self>> {
        (0..GRAY_CONTROL_COUNT)
            .map(|k| {
                let mut p = Self::gray(c, h, w, k as f64 / 10.0)?;
                p.meta.insert("gray".into(), format!("{}", k as f64 / 10.0));
                Ok(p)
            })
            .collect()
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.pixels.dims3().expect("validated at construction")
    }

    pub fn meta(&self) -> &PatchMeta {
        &self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, h, w) = self.shape();
        let mut out = Vec::with_capacity(18 + 8 * c * h * w);
        out.extend_from_slice(PATCH_MAGIC);
        put_u16(&mut out, VERSION);
        put_u32(&mut out, c);
        put_u32(&mut out, h);
        put_u32(&mut out, w);
        put_f64s(&mut out, self.pixels.data());
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        put_string(&mut out, &meta);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let p = Self::read(&mut r)?;
        if !r.is_at_end() {
            return Err(Error::parse(r.offset(), "trailing bytes after patch record"));
        }
        Ok(p)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(PATCH_MAGIC)?;
        r.expect_version(VERSION)?;
        let at = r.offset();
        let (c, h, w) = (r.usize32("C")?, r.usize32("H")?, r.usize32("W")?);
        validate_dims(c, h, w).map_err(|e| Error::parse(at, e.to_string()))?;
        let at = r.offset();
        let data = r.f64s(c * h * w, "pixels")?;
        let mut patch = Self::new(Tensor::new(vec![c, h, w], data)?)
            .map_err(|e| Error::parse(at, e.to_string()))?;
        let at = r.offset();
        let meta = r.string("metadata")?;
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(at, format!("metadata line without '=': {line:?}")))?;
            patch.meta.insert(k.to_string(), v.to_string());
        }
        Ok(patch)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// 8-bit lossless PNG for viewing; not a source of truth.
    pub fn export_png(&self, path: &Path) -> Result<()> {
        imageio::save_png(&self.pixels, path)
    }
}

fn validate_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if !(c == 1 || c == 3) {
        return Err(Error::invalid(format!("patch needs 1 or 3 channels, got {c}")));
    }
    if h < 4 || w < 4 {
        return Err(Error::invalid(format!("patch must be at least 4x4, got {h}x{w}")));
    }
    Ok(())
}

/// A non-empty, uniformly shaped, insertion-ordered population of patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    patches: Vec<Patch>,
}

impl PatchSet {
    pub fn new(patches: Vec<Patch>) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::invalid("a patch set needs at least one patch"))?;
        let shape = first.shape();
        if let Some((i, p)) = patches.iter().enumerate().find(|(_, p)| p.shape() != shape) {
            return Err(Error::shape(format!(
                "patch {i} has shape {:?}, set has {shape:?}",
                p.shape()
            )));
        }
        Ok(Self { patches })
    }

    pub fn push(&mut self, patch: Patch) -> Result<()> {
        if patch.shape() != self.shape() {
            return Err(Error::shape(format!(
                "cannot append {:?} patch to a {:?} set",
                patch.shape(),
                self.shape()
            )));
        }
        self.patches.push(patch);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.patches[0].shape()
    }

    pub fn get(&self, i: usize) -> Option<&Patch> {
        self.patches.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Patch> {
        self.patches.iter()
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    /// Subset in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let picked = indices
            .iter()
            .map(|&i| {
                self.patches
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("patch index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(picked)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SET_MAGIC);
        put_u32(&mut out, self.patches.len());
        for p in &self.patches {
            out.extend_from_slice(&p.to_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(SET_MAGIC)?;
        let n = r.usize32("count")?;
        let mut patches = Vec::with_capacity(n.min(4096));
        let mut shape = None;
        for _ in 0..n {
            let at = r.offset();
            let p = Patch::read(&mut r)?;
            if *shape.get_or_insert(p.shape()) != p.shape() {
                return Err(Error::parse(at, "patch shape differs from the set"));
            }
            patches.push(p);
        }
        if !r.is_at_end() {
            return Err(Error::parse(r.offset(), "trailing bytes after patch set"));
        }
        Self::new(patches).map_err(|e| Error::parse(r.offset(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl<'a> IntoIterator for &'a PatchSet {
    type Item = &'a Patch;
    type IntoIter = std::slice::Iter<'a, Patch>;

    fn into_iter(self) -> Self::IntoIter {
        self.patches.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_patch() {
        let a = Patch::init_random(3, 8, 8, 42).unwrap();
        let b = Patch::init_random(3, 8, 8, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Patch::init_random(3, 8, 8, 43).unwrap());
    }

    #[test]
    fn random_patch_mean_concentrates() {
        for seed in 0..100 {
            let p = Patch::init_random(3, 64, 64, seed).unwrap();
            let d = p.pixels().data();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            assert!((0.45..=0.55).contains(&mean), "seed {seed}: mean {mean}");
            assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(Patch::init_random(2, 8, 8, 0).is_err());
        assert!(Patch::init_random(3, 3, 8, 0).is_err());
        assert!(Patch::gray(1, 4, 4, 1.5).is_err());
    }

    #[test]
    fn gray_patches() {
        assert!(Patch::gray(3, 4, 4, 0.0).unwrap().pixels().data().iter().all(|&v| v == 0.0));
        assert!(Patch::gray(3, 4, 4, 1.0).unwrap().pixels().data().iter().all(|&v| v == 1.0));
        let controls = Patch::gray_controls(3, 4, 4).unwrap();
        assert_eq!(controls.len(), 11);
        for (k, p) in controls.iter().enumerate() {
            assert_eq!(p.pixels().data()[0], k as f64 / 10.0);
        }
    }

    #[test]
    fn clamp01_clips() {
        let t = Tensor::new(vec![1, 4, 4], {
            let mut v = vec![0.5; 16];
            v[0] = 1.5;
            v[1] = -0.2;
            v
        })
        .unwrap();
        let p = Patch::clamp01(t).unwrap();
        assert_eq!(p.pixels().data()[0], 1.0);
        assert_eq!(p.pixels().data()[1], 0.0);
        assert_eq!(p.pixels().data()[2], 0.5);
        let again = Patch::clamp01(p.pixels().clone()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let p = Patch::init_random(3, 5, 6, 9)
            .unwrap()
            .with_meta("run", 191)
            .with_meta("epoch", 30);
        let q = Patch::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.meta()["run"], "191");
    }

    #[test]
    fn set_round_trip_reports_count() {
        let set = PatchSet::new((0..4).map(|s| Patch::init_random(1, 4, 4, s).unwrap()).collect())
            .unwrap();
        let back = PatchSet::from_bytes(&set.to_bytes()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back, set);
    }

    #[test]
    fn corrupted_magic_is_a_parse_error() {
        let mut bytes = Patch::gray(1, 4, 4, 0.5).unwrap().to_bytes();
        bytes[0] = b'X';
        match Patch::from_bytes(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = Patch::gray(1, 4, 4, 0.5).unwrap().to_bytes();
        match Patch::from_bytes(&bytes[..40]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn push_rejects_shape_mismatch() {
        let mut set = PatchSet::new(vec![Patch::gray(3, 4, 4, 0.1).unwrap()]).unwrap();
        assert!(set.push(Patch::gray(3, 5, 4, 0.1).unwrap()).is_err());
        assert!(PatchSet::new(vec![]).is_err());
    }
}
