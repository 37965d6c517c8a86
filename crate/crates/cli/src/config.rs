//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use eigenpatch::attack::ObjectnessAgg;
use eigenpatch::detector::DetectorConfig;
use eigenpatch::metrics::{ApMode, EvalSettings};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub size: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub attack_scenes: usize,
    pub test_scenes: usize,
    pub detector_epochs: usize,
    pub detector_batch: usize,
    pub detector_lr: f64,
    pub detector_weight_decay: f64,
    pub detector_box_weight: f64,
    pub detector_neg_weight: f64,
    pub detector_inside_neg_weight: f64,
    pub detector_occlusion_prob: f64,
    pub detector_min_map50: f64,
    pub min_visibility: f64,
    pub patch_size: usize,
    pub attack_lr0: f64,
    pub attack_tv_weight: f64,
    pub attack_objectness: ObjectnessAgg,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub scale: f64,
    pub ap_mode: ApMode,
    pub pca_center: bool,
    /// Component counts for reconstructions, capped at k_max; `0` (written
    /// `all`) stands for k_max.
    pub k_list: Vec<usize>,
    /// Set sizes for the set-size sweep; `0` stands for the whole population.
    pub sweep_sizes: Vec<usize>,
    pub sweep_max_k: usize,
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Self {
        let det = DetectorConfig::default();
        Self {
            seed: 0,
            size: 160,
            train_scenes: 800,
            val_scenes: 100,
            attack_scenes: 64,
            test_scenes: 100,
            detector_epochs: 40,
            detector_batch: det.batch_size,
            detector_lr: det.lr,
            detector_weight_decay: det.weight_decay,
            detector_box_weight: det.box_weight,
            detector_neg_weight: det.neg_weight,
            detector_inside_neg_weight: det.inside_neg_weight,
            detector_occlusion_prob: det.occlusion_prob,
            detector_min_map50: det.min_map50,
            min_visibility: 0.5,
            patch_size: 64,
            attack_lr0: 0.01,
            attack_tv_weight: 0.1,
            attack_objectness: ObjectnessAgg::Mean,
            conf_threshold: det.conf_threshold,
            nms_iou: det.nms_iou,
            scale: 0.75,
            ap_mode: ApMode::Interp101,
            pca_center: true,
            k_list: vec![2, 4, 8, 16, 32, 64, 128, 256],
            sweep_sizes: vec![2, 8, 16, 0],
            sweep_max_k: 64,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Invalid(format!("config key {key}: cannot parse {value:?}: {e}")))
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|v| match v.trim() {
            "all" => Ok(0),
            v => parse(key, v),
        })
        .collect()
}

fn list_string(v: &[usize]) -> String {
    v.iter()
        .map(|k| if *k == 0 { "all".to_string() } else { k.to_string() })
        .collect::<Vec<_>>()
        .join(",")
}

impl Config {
    /// Reads a config file over the defaults. Blank lines and `#` comments
    /// are ignored; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Invalid(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            "train_scenes" => self.train_scenes = parse(key, value)?,
            "val_scenes" => self.val_scenes = parse(key, value)?,
            "attack_scenes" => self.attack_scenes = parse(key, value)?,
            "test_scenes" => self.test_scenes = parse(key, value)?,
            "detector_epochs" => self.detector_epochs = parse(key, value)?,
            "detector_batch" => self.detector_batch = parse(key, value)?,
            "detector_lr" => self.detector_lr = parse(key, value)?,
            "detector_weight_decay" => self.detector_weight_decay = parse(key, value)?,
            "detector_box_weight" => self.detector_box_weight = parse(key, value)?,
            "detector_neg_weight" => self.detector_neg_weight = parse(key, value)?,
            "detector_inside_neg_weight" => self.detector_inside_neg_weight = parse(key, value)?,
            "detector_occlusion_prob" => self.detector_occlusion_prob = parse(key, value)?,
            "detector_min_map50" => self.detector_min_map50 = parse(key, value)?,
            "min_visibility" => self.min_visibility = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "attack_lr0" => self.attack_lr0 = parse(key, value)?,
            "attack_tv_weight" => self.attack_tv_weight = parse(key, value)?,
            "attack_objectness" => self.attack_objectness = parse(key, value)?,
            "conf_threshold" => self.conf_threshold = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "ap_mode" => {
                self.ap_mode = match value {
                    "101" | "interp101" | "coco" => ApMode::Interp101,
                    "all-points" | "voc" => ApMode::AllPoints,
                    _ => return Err(CliError::Invalid(format!("config key ap_mode: unknown mode {value:?}"))),
                }
            }
            "pca_center" => self.pca_center = parse(key, value)?,
            "k_list" => self.k_list = parse_list(key, value)?,
            "sweep_sizes" => self.sweep_sizes = parse_list(key, value)?,
            "sweep_max_k" => self.sweep_max_k = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => return Err(CliError::Invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Invalid(format!("config: {m}")));
        if self.size == 0 || self.size % 16 != 0 {
            return bad("size must be a positive multiple of 16");
        }
        if [self.train_scenes, self.val_scenes, self.attack_scenes, self.test_scenes].contains(&0) {
            return bad("every split needs at least one scene");
        }
        if !(0.0 < self.scale && self.scale <= 1.0) {
            return bad("scale must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("conf_threshold and nms_iou must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return bad("min_visibility must lie in [0, 1]");
        }
        if self.k_list.is_empty() {
            return bad("k_list must not be empty");
        }
        if self.sweep_sizes.iter().any(|&n| n == 1) || self.sweep_sizes.is_empty() {
            return bad("sweep_sizes must be at least 2 (or `all`)");
        }
        if self.patch_size < 4 || self.workers == 0 || self.sweep_max_k == 0 {
            return bad("patch_size must be >= 4, workers and sweep_max_k positive");
        }
        Ok(())
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            input_size: self.size,
            epochs: self.detector_epochs,
            batch_size: self.detector_batch,
            lr: self.detector_lr,
            weight_decay: self.detector_weight_decay,
            box_weight: self.detector_box_weight,
            neg_weight: self.detector_neg_weight,
            inside_neg_weight: self.detector_inside_neg_weight,
            occlusion_prob: self.detector_occlusion_prob,
            conf_threshold: self.conf_threshold,
            nms_iou: self.nms_iou,
            min_map50: self.detector_min_map50,
            seed: self.seed,
            ..DetectorConfig::default()
        }
    }

    pub fn eval(&self) -> EvalSettings {
        EvalSettings {
            conf_threshold: self.conf_threshold,
            nms_iou: self.nms_iou,
            scale: self.scale,
            ap_mode: self.ap_mode,
        }
    }

    /// Every key with its value, in a fixed order; `workers` is left out
    /// because it never changes results.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("size", self.size.to_string()),
            ("train_scenes", self.train_scenes.to_string()),
            ("val_scenes", self.val_scenes.to_string()),
            ("attack_scenes", self.attack_scenes.to_string()),
            ("test_scenes", self.test_scenes.to_string()),
            ("detector_epochs", self.detector_epochs.to_string()),
            ("detector_batch", self.detector_batch.to_string()),
            ("detector_lr", self.detector_lr.to_string()),
            ("detector_weight_decay", self.detector_weight_decay.to_string()),
            ("detector_box_weight", self.detector_box_weight.to_string()),
            ("detector_neg_weight", self.detector_neg_weight.to_string()),
            ("detector_inside_neg_weight", self.detector_inside_neg_weight.to_string()),
            ("detector_occlusion_prob", self.detector_occlusion_prob.to_string()),
            ("detector_min_map50", self.detector_min_map50.to_string()),
            ("min_visibility", self.min_visibility.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("attack_lr0", self.attack_lr0.to_string()),
            ("attack_tv_weight", self.attack_tv_weight.to_string()),
            ("attack_objectness", self.attack_objectness.to_string()),
            ("conf_threshold", self.conf_threshold.to_string()),
            ("nms_iou", self.nms_iou.to_string()),
            ("scale", self.scale.to_string()),
            (
                "ap_mode",
                match self.ap_mode {
                    ApMode::Interp101 => "interp101".into(),
                    ApMode::AllPoints => "all-points".into(),
                },
            ),
            ("pca_center", self.pca_center.to_string()),
            ("k_list", list_string(&self.k_list)),
            ("sweep_sizes", list_string(&self.sweep_sizes)),
            ("sweep_max_k", self.sweep_max_k.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# small run\nsize = 96\n\nk_list = 2, 4,all\nap_mode = voc # trailing\n").unwrap();
        let c = Config::from_file(&p).unwrap();
        assert_eq!(c.size, 96);
        assert_eq!(c.k_list, vec![2, 4, 0]);
        assert_eq!(c.ap_mode, ApMode::AllPoints);
        assert_eq!(c.train_scenes, Config::default().train_scenes);
    }

    #[test]
    fn errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cfg");
        std::fs::write(&p, "size = 160\nbogus = 1\n").unwrap();
        let e = Config::from_file(&p).unwrap_err().to_string();
        assert!(e.contains(":2:") && e.contains("bogus"), "{e}");
        std::fs::write(&p, "size = 100\n").unwrap();
        assert!(Config::from_file(&p).is_err());
    }

    #[test]
    fn every_entry_round_trips() {
        let mut c = Config::default();
        c.seed = 9;
        c.sweep_sizes = vec![2, 0];
        let mut d = Config::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        d.workers = c.workers;
        assert_eq!(c, d);
    }
}
