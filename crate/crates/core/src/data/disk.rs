//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.txt      one "<id> <split>" per line, in dataset order
//! <dir>/images/<id>.png   any size, RGB or gray
//! <dir>/labels/<id>.txt   one "cx cy w h" per box, normalized to [0, 1]
//! ```
//!
//! Label lines hold exactly four whitespace-separated decimal numbers;
//! `cx, cy` must lie in `[0, 1]` and `w, h` in `(0, 1]`. Lines that are empty
//! or whitespace-only are ignored; anything else is an error naming the file
//! and line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::{letterbox, Scene};
use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::imageio;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    /// Detector training.
    Train,
    /// Detector validation.
    Val,
    /// Patch optimization.
    Attack,
    /// Patch evaluation.
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Attack, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Attack => "attack",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?}")))
    }
}

fn text_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Text {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses label text into normalized `(cx, cy, w, h)` tuples.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<[f64; 4]>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(text_err(
                path,
                i + 1,
                format!("expected 4 fields \"cx cy w h\", found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 4];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| text_err(path, i + 1, format!("not a finite number: {f:?}")))?;
        }
        let [cx, cy, w, h] = v;
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return Err(text_err(path, i + 1, "box center outside [0, 1]"));
        }
        if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return Err(text_err(path, i + 1, "box size outside (0, 1]"));
        }
        out.push(v);
    }
    Ok(out)
}

/// Reads `manifest.txt` into `(id, split)` pairs.
pub fn read_manifest(dir: &Path) -> Result<Vec<(String, Split)>> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, split] = fields[..] else {
            return Err(text_err(&path, i + 1, "expected \"<id> <split>\""));
        };
        let split = split
            .parse()
            .map_err(|e: Error| text_err(&path, i + 1, e.to_string()))?;
        out.push((id.to_string(), split));
    }
    Ok(out)
}

fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("images").join(format!("{id}.png"))
}

fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("labels").join(format!("{id}.txt"))
}

/// Writes scenes as PNG + label text and the manifest.
pub fn write_dataset(dir: &Path, scenes: &[(Scene, Split)]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut manifest = String::new();
    for (scene, split) in scenes {
        let (_, h, w) = scene.image.dims3()?;
        imageio::save_png(&scene.image, &image_path(dir, &scene.id))?;
        let mut labels = String::new();
        for b in &scene.gt {
            let (cx, cy) = b.center();
            labels.push_str(&format!(
                "{} {} {} {}\n",
                cx / w as f64,
                cy / h as f64,
                b.width() / w as f64,
                b.height() / h as f64
            ));
        }
        fs::write(label_path(dir, &scene.id), labels)?;
        manifest.push_str(&format!("{} {split}\n", scene.id));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Loads every manifest entry, letterboxed to `size`, in manifest order.
/// Boxes that end up with no area after letterboxing are dropped.
pub fn load_dataset(dir: &Path, size: usize) -> Result<Vec<(Scene, Split)>> {
    read_manifest(dir)?
        .into_par_iter()
        .map(|(id, split)| {
            let img = imageio::load_png_rgb(&image_path(dir, &id))?;
            let lpath = label_path(dir, &id);
            let labels = parse_labels(&fs::read_to_string(&lpath)?, &lpath)?;
            let (_, h, w) = img.dims3()?;
            let (image, lb) = letterbox(&img, size)?;
            let s = size as f64;
            let gt = labels
                .iter()
                .filter_map(|&[cx, cy, bw, bh]| {
                    let src = BBox {
                        x1: (cx - bw / 2.0) * w as f64,
                        y1: (cy - bh / 2.0) * h as f64,
                        x2: (cx + bw / 2.0) * w as f64,
                        y2: (cy + bh / 2.0) * h as f64,
                    };
                    lb.map_box(&src).clip(s, s)
                })
                .collect();
            Ok((Scene { id, image, gt }, split))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rules() {
        let p = Path::new("x.txt");
        let ok = parse_labels("0.5 0.5 0.2 0.4\n\n   \n0 1 1 1e-3\n", p).unwrap();
        assert_eq!(ok, vec![[0.5, 0.5, 0.2, 0.4], [0.0, 1.0, 1.0, 0.001]]);
        for bad in ["0.5 0.5 0.2", "0.5 0.5 0.2 0.4 0", "0.5 0.5 0 0.4", "1.5 0.5 0.2 0.2", "a b c d", "0.5 nan 0.1 0.1"] {
            let err = parse_labels(&format!("0.1 0.1 0.1 0.1\n{bad}\n"), p).unwrap_err();
            assert!(matches!(err, Error::Text { line: 2, .. }), "{bad}: {err}");
        }
    }

    #[test]
    fn splits_parse() {
        for s in Split::ALL {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
        assert!("dev".parse::<Split>().is_err());
    }
}
