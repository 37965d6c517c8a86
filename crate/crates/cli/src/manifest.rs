//! Per-stage manifests: the settings a stage ran with, the hashes of the
//! upstream files it consumed and of the files it wrote.
//!
//! ```text
//! command = train-detector
//! config.seed = 0
//! input.data/stage.manifest = 3f2a...
//! output.detector/model.edet = 9b1c...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE: &str = "stage.manifest";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// A pipeline stage: its directory under the run root and the command that
/// produces it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data,
    Detector,
    Patches,
    Pca,
    Recon,
}

impl Stage {
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Detector => "detector",
            Stage::Patches => "patches",
            Stage::Pca => "pca",
            Stage::Recon => "recon",
        }
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::Data => "gen-data",
            Stage::Detector => "train-detector",
            Stage::Patches => "train-patches",
            Stage::Pca => "pca-fit",
            Stage::Recon => "reconstruct",
        }
    }

    pub fn manifest_rel(self) -> String {
        format!("{}/{FILE}", self.dir())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Records the current hash of `rel` (relative to `root`) as an input.
    pub fn input(&mut self, root: &Path, rel: &str) -> Result<(), CliError> {
        let h = sha256_file(&root.join(rel))?;
        self.set(format!("input.{rel}"), h);
        Ok(())
    }

    pub fn output(&mut self, root: &Path, rel: &str) -> Result<(), CliError> {
        let h = sha256_file(&root.join(rel))?;
        self.set(format!("output.{rel}"), h);
        Ok(())
    }

    fn prefixed<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rel| (rel, v.as_str())))
    }

    pub fn outputs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.prefixed("output.")
    }

    pub fn inputs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.prefixed("input.")
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut m = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ")?;
            m.set(k, v);
        }
        Some(m)
    }

    pub fn write(&self, root: &Path, stage: Stage) -> Result<PathBuf, CliError> {
        self.write_to(root, &stage.manifest_rel())
    }

    pub fn write_to(&self, root: &Path, rel: &str) -> Result<PathBuf, CliError> {
        let path = root.join(rel);
        fs::write(&path, self.to_text()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Loads the manifest of `stage` and checks that every file it lists (as
/// input or output) still has the recorded hash.
pub fn require(root: &Path, stage: Stage) -> Result<Manifest, CliError> {
    require_file(root, &stage.manifest_rel(), stage.command())
}

/// [`require`] for any manifest path; `command` is what regenerates it.
pub fn require_file(root: &Path, rel: &str, command: &str) -> Result<Manifest, CliError> {
    let rerun = |what: String| {
        CliError::Stale(format!(
            "{what}; rerun `eigenpatch {command} --out {}`",
            root.display()
        ))
    };
    let path = root.join(rel);
    let text = fs::read_to_string(&path).map_err(|_| rerun(format!("missing artifacts ({} not found)", path.display())))?;
    let m = Manifest::parse(&text).ok_or_else(|| rerun(format!("{} is malformed", path.display())))?;
    for (rel, want) in m.outputs() {
        match sha256_file(&root.join(rel)) {
            Ok(h) if h == want => {}
            Ok(_) => return Err(rerun(format!("{rel} changed after `{command}` wrote it"))),
            Err(_) => return Err(rerun(format!("{rel} is missing"))),
        }
    }
    for (rel, want) in m.inputs() {
        match sha256_file(&root.join(rel)) {
            Ok(h) if h == want => {}
            _ => return Err(rerun(format!("artifacts of `{command}` are stale: upstream {rel} changed"))),
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampered_output_is_stale() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("data")).unwrap();
        fs::write(root.join("data/a.txt"), "one").unwrap();
        let mut m = Manifest::new("gen-data");
        m.output(root, "data/a.txt").unwrap();
        m.write(root, Stage::Data).unwrap();
        assert_eq!(require(root, Stage::Data).unwrap(), m);

        fs::write(root.join("data/a.txt"), "two").unwrap();
        let e = require(root, Stage::Data).unwrap_err();
        assert!(matches!(e, CliError::Stale(_)));
        assert!(e.to_string().contains("eigenpatch gen-data"), "{e}");
        assert!(matches!(require(root, Stage::Pca), Err(CliError::Stale(_))));
    }

    #[test]
    fn text_round_trip() {
        let mut m = Manifest::new("pca-fit");
        m.set("config.k_list", "2,4,all");
        m.set("input.patches/population.epset", "ab");
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }
}
