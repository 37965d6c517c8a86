//! The pipeline commands. Each reads its upstream artifacts from the run
//! directory, checks their hashes, and writes its own artifacts plus a
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use eigenpatch::attack::{train_patch, AttackConfig};
use eigenpatch::boxes::BBox;
use eigenpatch::data::{gen_synthetic, load_dataset, regenerate_gt, write_dataset, Scene, Split, SynthConfig};
use eigenpatch::detector::{self, DetectorModel};
use eigenpatch::eigen::{fit, EigenBasis};
use eigenpatch::imageio;
use eigenpatch::metrics::{EvalRecord, Evaluator};
use eigenpatch::patchset::{Patch, PatchSet, GRAY_CONTROL_COUNT};

use crate::config::{parse_list, Config};
use crate::manifest::{require, require_file, Manifest, Stage};
use crate::plan::ExperimentPlan;
use crate::{CliError, Common};

pub const CONFIG_FILE: &str = "config.txt";
pub const EVAL_HEADER: [&str; 9] = [
    "run_id",
    "patch_id",
    "k",
    "map50",
    "map50_95",
    "delta_map50",
    "delta_map50_95",
    "placed_boxes",
    "skipped_boxes",
];

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::io(path, e))
}

/// Defaults, then the run's saved config (or `--config`), then flags.
pub fn load_config(c: &Common) -> Result<Config, CliError> {
    let saved = c.out.join(CONFIG_FILE);
    let mut cfg = match &c.config {
        Some(p) => Config::from_file(p)?,
        None if saved.exists() => Config::from_file(&saved)?,
        None => Config::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(s) = c.scale {
        cfg.scale = s;
    }
    if let Some(k) = &c.k_list {
        cfg.k_list = parse_list("--k-list", k)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn record_config(m: &mut Manifest, cfg: &Config) {
    for (k, v) in cfg.entries() {
        m.set(format!("config.{k}"), v);
    }
}

pub fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    io(path, w.flush())
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    io(path, fs::create_dir_all(path))
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn synth_config(cfg: &Config) -> SynthConfig {
    SynthConfig {
        size: cfg.size,
        ..SynthConfig::default()
    }
}

pub fn gen_data(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let root = &c.out;
    let dir = root.join(Stage::Data.dir());
    for sub in ["images", "labels"] {
        let p = dir.join(sub);
        if p.is_dir() {
            io(&p, fs::remove_dir_all(&p))?;
        }
    }
    mkdir(&dir)?;
    let counts = [
        (Split::Train, cfg.train_scenes),
        (Split::Val, cfg.val_scenes),
        (Split::Attack, cfg.attack_scenes),
        (Split::Test, cfg.test_scenes),
    ];
    let synth = synth_config(&cfg);
    let mut tagged = Vec::new();
    for (i, (split, n)) in counts.iter().enumerate() {
        let seed = cfg.seed.wrapping_mul(16).wrapping_add(i as u64 + 1);
        for mut s in gen_synthetic(*n, &synth, seed)? {
            s.id = format!("{split}-{}", s.id);
            tagged.push((s, *split));
        }
    }
    write_dataset(&dir, &tagged)?;

    let mut rows = Vec::new();
    for (s, split) in &tagged {
        for (j, b) in s.gt.iter().enumerate() {
            rows.push(vec![
                s.id.clone(),
                split.to_string(),
                j.to_string(),
                b.x1.to_string(),
                b.y1.to_string(),
                b.x2.to_string(),
                b.y2.to_string(),
            ]);
        }
    }
    write_csv(&dir.join("scenes.csv"), &["scene_id", "split", "box", "x1", "y1", "x2", "y2"], &rows)?;
    let cfg_text: String = cfg.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    io(&root.join(CONFIG_FILE), fs::write(root.join(CONFIG_FILE), cfg_text))?;

    let mut m = Manifest::new("gen-data");
    record_config(&mut m, &cfg);
    m.output(root, CONFIG_FILE)?;
    m.output(root, "data/manifest.txt")?;
    m.output(root, "data/scenes.csv")?;
    for (s, _) in &tagged {
        m.output(root, &format!("data/images/{}.png", s.id))?;
        m.output(root, &format!("data/labels/{}.txt", s.id))?;
    }
    m.write(root, Stage::Data)?;
    println!("wrote {} scenes to {}", tagged.len(), dir.display());
    Ok(())
}

fn load_split(root: &Path, cfg: &Config, split: Split) -> Result<Vec<Scene>, CliError> {
    Ok(load_dataset(&root.join("data"), cfg.size)?
        .into_iter()
        .filter(|(_, s)| *s == split)
        .map(|(scene, _)| scene)
        .collect())
}

pub fn train_detector(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let root = &c.out;
    require(root, Stage::Data)?;
    let all = load_dataset(&root.join("data"), cfg.size)?;
    let pick = |split: Split| -> Vec<Scene> {
        all.iter().filter(|(_, s)| *s == split).map(|(x, _)| x.clone()).collect()
    };
    let (train, val) = (pick(Split::Train), pick(Split::Val));
    let dir = root.join(Stage::Detector.dir());
    mkdir(&dir)?;
    let (model, report) = detector::train_detector(&train, &val, &cfg.detector())?;
    model.save(&dir.join("model.edet"))?;
    let rows: Vec<Vec<String>> = report
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(e, l)| vec![e.to_string(), f6(*l)])
        .collect();
    write_csv(&dir.join("training.csv"), &["epoch", "loss"], &rows)?;
    write_csv(
        &dir.join("quality.csv"),
        &["split", "scenes", "map50"],
        &[vec!["val".into(), val.len().to_string(), f6(report.val_map50)]],
    )?;

    let mut gt_rows = Vec::new();
    let mut m = Manifest::new("train-detector");
    for split in [Split::Attack, Split::Test] {
        let regen = regenerate_gt(&model, &pick(split), cfg.conf_threshold, cfg.nms_iou, cfg.min_visibility)?;
        if !regen.dropped.is_empty() {
            warn!("{split}: {} scenes dropped without boxes: {}", regen.dropped.len(), regen.dropped.join(", "));
        }
        m.set(format!("dropped.{split}"), regen.dropped.len());
        for s in &regen.scenes {
            for b in &s.gt {
                gt_rows.push(vec![
                    split.to_string(),
                    s.id.clone(),
                    b.x1.to_string(),
                    b.y1.to_string(),
                    b.x2.to_string(),
                    b.y2.to_string(),
                ]);
            }
        }
    }
    write_csv(&dir.join("gt.csv"), &["split", "scene_id", "x1", "y1", "x2", "y2"], &gt_rows)?;

    record_config(&mut m, &cfg);
    m.set("detector_hash", model.hash());
    m.set("val_map50", f6(report.val_map50));
    m.input(root, &Stage::Data.manifest_rel())?;
    for f in ["model.edet", "training.csv", "quality.csv", "gt.csv"] {
        m.output(root, &format!("detector/{f}"))?;
    }
    m.write(root, Stage::Detector)?;
    println!("detector trained: validation mAP@.5 {:.4}", report.val_map50);
    Ok(())
}

fn load_model(root: &Path) -> Result<(DetectorModel, Manifest), CliError> {
    let m = require(root, Stage::Detector)?;
    let hash = m
        .get("detector_hash")
        .ok_or_else(|| CliError::Stale("detector manifest lacks a model hash; rerun `eigenpatch train-detector`".into()))?;
    Ok((DetectorModel::load_pinned(&root.join("detector/model.edet"), hash)?, m))
}

/// Scenes of `split` carrying the regenerated ground truth; scenes without
/// regenerated boxes are left out.
pub fn regenerated_scenes(root: &Path, cfg: &Config, split: Split) -> Result<Vec<Scene>, CliError> {
    let path = root.join("detector/gt.csv");
    let mut gt: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    let mut r = csv::Reader::from_path(&path)?;
    for rec in r.records() {
        let rec = rec?;
        if rec.get(0) != Some(&split.to_string()) {
            continue;
        }
        let num = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Invalid(format!("{}: bad number in {rec:?}", path.display())))
        };
        let b = BBox::new(num(2)?, num(3)?, num(4)?, num(5)?)?;
        gt.entry(rec.get(1).unwrap_or_default().to_string()).or_default().push(b);
    }
    Ok(load_split(root, cfg, split)?
        .into_iter()
        .filter_map(|mut s| {
            let boxes = gt.remove(&s.id)?;
            s.gt = boxes;
            Some(s)
        })
        .collect())
}

fn patch_seed(seed: u64, label: u32, index: usize) -> u64 {
    (seed << 32) ^ (u64::from(label) << 12) ^ index as u64
}

pub fn train_patches(c: &Common, plan_name: &str) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let root = &c.out;
    let plan = ExperimentPlan::resolve(plan_name)?;
    let (model, _) = load_model(root)?;
    let scenes = regenerated_scenes(root, &cfg, Split::Attack)?;
    if scenes.is_empty() {
        return Err(CliError::Invalid("the attack split has no scene with regenerated ground truth".into()));
    }
    let base = AttackConfig {
        lr0: cfg.attack_lr0,
        tv_weight: cfg.attack_tv_weight,
        objectness: cfg.attack_objectness,
        patch_shape: (3, cfg.patch_size, cfg.patch_size),
        ..AttackConfig::default()
    };
    let mut jobs = Vec::new();
    for row in &plan.rows {
        for i in 0..row.patches {
            let id = format!("{}-{i:03}", row.label);
            jobs.push((row.label, id, plan.attack_config(row, &base, patch_seed(cfg.seed, row.label, i))));
        }
    }
    info!("training {} patches on {} scenes with {} workers", jobs.len(), scenes.len(), cfg.workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let trained: Vec<(Patch, Vec<f64>)> = pool.install(|| {
        jobs.par_iter()
            .map(|(label, id, ac)| {
                let (p, h) = train_patch(&model, &scenes, ac)?;
                info!("patch {id} done, final loss {:.4}", h.last().copied().unwrap_or(f64::NAN));
                Ok((p.with_meta("run_id", label).with_meta("patch_id", id), h))
            })
            .collect::<Result<_, eigenpatch::Error>>()
    })?;

    let dir = root.join(Stage::Patches.dir());
    if dir.is_dir() {
        io(&dir, fs::remove_dir_all(&dir))?;
    }
    mkdir(&dir)?;
    let mut m = Manifest::new("train-patches");
    record_config(&mut m, &cfg);
    io(&dir, fs::write(dir.join("plan.txt"), plan.to_text()))?;
    let mut history = Vec::new();
    let mut set = Vec::new();
    for ((label, id, _), (patch, h)) in jobs.iter().zip(trained) {
        let sub = dir.join(label.to_string());
        mkdir(&sub)?;
        let path = sub.join(format!("{id}.epch"));
        patch.save(&path)?;
        m.output(root, &rel(root, &path))?;
        for (e, l) in h.iter().enumerate() {
            history.push(vec![label.to_string(), id.clone(), e.to_string(), f6(*l)]);
        }
        set.push(patch);
    }
    let tiles: Vec<_> = set.iter().map(|p| p.pixels().clone()).collect();
    imageio::save_png(&imageio::tile(&tiles, 15, false)?, &dir.join("population.png"))?;
    PatchSet::new(set)?.save(&dir.join("population.epset"))?;
    write_csv(&dir.join("history.csv"), &["run_id", "patch_id", "epoch", "loss"], &history)?;
    m.input(root, &Stage::Detector.manifest_rel())?;
    for f in ["plan.txt", "population.epset", "population.png", "history.csv"] {
        m.output(root, &format!("patches/{f}"))?;
    }
    m.write(root, Stage::Patches)?;
    println!("trained {} patches into {}", jobs.len(), dir.display());
    Ok(())
}

fn load_population(root: &Path) -> Result<PatchSet, CliError> {
    require(root, Stage::Patches)?;
    Ok(PatchSet::load(&root.join("patches/population.epset"))?)
}

fn meta_or(p: &Patch, key: &str, fallback: String) -> String {
    p.meta().get(key).cloned().unwrap_or(fallback)
}

pub fn pca_fit(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let root = &c.out;
    let set = load_population(root)?;
    let (basis, weights) = fit(&set, cfg.pca_center)?;
    let dir = root.join(Stage::Pca.dir());
    mkdir(&dir)?;
    basis.save(&weights, &dir.join("basis.epca"))?;
    let mut rows = Vec::new();
    for j in 0..basis.k_max() {
        rows.push(vec![
            (j + 1).to_string(),
            format!("{:.9e}", basis.eigenvalues()[j]),
            f6(basis.explained_variance(j + 1)?),
        ]);
    }
    write_csv(&dir.join("eigenvalues.csv"), &["component", "eigenvalue", "explained_cumulative"], &rows)?;

    // eigenpatch images: components, data mean, and the unweighted mean of the
    // first sixteen components with and without the data mean
    let k16 = basis.k_max().min(16);
    let comps: Vec<_> = (0..k16).map(|j| basis.component_image(j)).collect();
    imageio::save_png(&imageio::tile(&comps, 8, true)?, &dir.join("components.png"))?;
    imageio::save_png(&basis.mean_image(), &dir.join("mean.png"))?;
    for (with_mean, name) in [(true, "mean16_with_mean.png"), (false, "mean16_without_mean.png")] {
        let img = basis.mean_of_components(k16, with_mean)?;
        imageio::save_png(&imageio::tile(&[img], 1, true)?, &dir.join(name))?;
    }

    let mut m = Manifest::new("pca-fit");
    record_config(&mut m, &cfg);
    m.set("k_max", basis.k_max());
    m.set("n_input", basis.n_input());
    m.input(root, &Stage::Patches.manifest_rel())?;
    for f in [
        "basis.epca",
        "eigenvalues.csv",
        "components.png",
        "mean.png",
        "mean16_with_mean.png",
        "mean16_without_mean.png",
    ] {
        m.output(root, &format!("pca/{f}"))?;
    }
    m.write(root, Stage::Pca)?;
    println!(
        "fitted {} components from {} patches; first 8 explain {:.1}% of the variance",
        basis.k_max(),
        set.len(),
        100.0 * basis.explained_variance(basis.k_max().min(8))?
    );
    Ok(())
}

/// `k_list` capped at `k_max`, sorted, without duplicates; `0` means k_max.
pub fn effective_k_list(list: &[usize], k_max: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = list
        .iter()
        .map(|&k| if k == 0 { k_max } else { k.min(k_max) })
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Distance from `x` to the affine span of `points`.
pub fn affine_span_residual(points: &[&[f64]], x: &[f64]) -> f64 {
    let origin = points[0];
    let mut q: Vec<Vec<f64>> = Vec::new();
    for p in &points[1..] {
        let mut v: Vec<f64> = p.iter().zip(origin).map(|(a, b)| a - b).collect();
        for _ in 0..2 {
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    let mut r: Vec<f64> = x.iter().zip(origin).map(|(a, b)| a - b).collect();
    for _ in 0..2 {
        for u in &q {
            let d: f64 = r.iter().zip(u).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
    }
    r.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn tag(p: Patch, src: &Patch, k: usize) -> Patch {
    p.with_meta("run_id", meta_or(src, "run_id", "-".into()))
        .with_meta("patch_id", meta_or(src, "patch_id", "-".into()))
        .with_meta("k", k)
}

pub fn reconstruct(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let root = &c.out;
    let set = load_population(root)?;
    require(root, Stage::Pca)?;
    let (basis, weights) = EigenBasis::load(&root.join("pca/basis.epca"))?;
    if basis.n_input() != set.len() {
        return Err(CliError::Stale("basis and population disagree; rerun `eigenpatch pca-fit`".into()));
    }
    let dir = root.join(Stage::Recon.dir());
    if dir.is_dir() {
        io(&dir, fs::remove_dir_all(&dir))?;
    }
    mkdir(&dir)?;
    let mut m = Manifest::new("reconstruct");
    record_config(&mut m, &cfg);

    let ks = effective_k_list(&cfg.k_list, basis.k_max());
    let mut err_rows = Vec::new();
    for &k in &ks {
        let mut out = Vec::with_capacity(set.len());
        for (i, p) in set.iter().enumerate() {
            let r = basis.reconstruct(weights.row(i), k)?;
            let l2 = r.raw.iter().zip(p.pixels().data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            err_rows.push(vec![
                meta_or(p, "run_id", "-".into()),
                meta_or(p, "patch_id", i.to_string()),
                k.to_string(),
                format!("{l2:.9e}"),
            ]);
            out.push(tag(r.patch, p, k));
        }
        let path = dir.join(format!("k-{k:03}.epset"));
        PatchSet::new(out)?.save(&path)?;
        m.output(root, &rel(root, &path))?;
    }
    write_csv(&dir.join("errors.csv"), &["run_id", "patch_id", "k", "l2_error"], &err_rows)?;
    m.set("k_list", ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));

    // set-size sweep: fit on the first n of a seeded permutation, rebuild
    // the whole population from that basis
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    order.shuffle(&mut rng);
    let mut sizes: Vec<usize> = cfg
        .sweep_sizes
        .iter()
        .map(|&n| if n == 0 { set.len() } else { n.min(set.len()) })
        .collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut sweep_rows = Vec::new();
    for &n in &sizes {
        let subset = set.select(&order[..n])?;
        let (b, _) = fit(&subset, cfg.pca_center)?;
        let k = n.min(cfg.sweep_max_k).min(b.k_max());
        let inputs: Vec<&[f64]> = subset.iter().map(|p| p.pixels().data()).collect();
        let mut out = Vec::with_capacity(set.len());
        for (i, p) in set.iter().enumerate() {
            let r = b.reconstruct(&b.project(p)?, k)?;
            let residual = affine_span_residual(&inputs, &r.raw);
            sweep_rows.push(vec![
                n.to_string(),
                k.to_string(),
                meta_or(p, "run_id", "-".into()),
                meta_or(p, "patch_id", i.to_string()),
                format!("{residual:.3e}"),
            ]);
            out.push(tag(r.patch, p, k).with_meta("n", n));
        }
        let path = dir.join(format!("sweep-n{n:03}.epset"));
        PatchSet::new(out)?.save(&path)?;
        m.output(root, &rel(root, &path))?;
    }
    write_csv(&dir.join("sweep.csv"), &["n", "k", "run_id", "patch_id", "span_residual"], &sweep_rows)?;
    m.input(root, &Stage::Pca.manifest_rel())?;
    m.input(root, &Stage::Patches.manifest_rel())?;
    m.output(root, "recon/errors.csv")?;
    m.output(root, "recon/sweep.csv")?;
    m.write(root, Stage::Recon)?;
    println!(
        "reconstructed {} patches at k = {:?}; set-size sweep over n = {:?}",
        set.len(),
        ks,
        sizes
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalMode {
    None,
    Gray(usize),
    Trained,
    Pca,
    Sweep,
    File(PathBuf),
}

impl EvalMode {
    pub fn parse(s: &str) -> Self {
        match s {
            "none" => EvalMode::None,
            "gray" => EvalMode::Gray(GRAY_CONTROL_COUNT),
            "trained" => EvalMode::Trained,
            "pca" => EvalMode::Pca,
            "sweep" => EvalMode::Sweep,
            path => EvalMode::File(PathBuf::from(path)),
        }
    }

    /// Basename of the CSV and manifest under `eval/`.
    pub fn name(&self) -> String {
        match self {
            EvalMode::None => "none".into(),
            EvalMode::Gray(_) => "gray".into(),
            EvalMode::Trained => "trained".into(),
            EvalMode::Pca => "pca".into(),
            EvalMode::Sweep => "sweep".into(),
            EvalMode::File(p) => format!(
                "file-{}",
                p.file_stem().map_or("patch".into(), |s| s.to_string_lossy().into_owned())
            ),
        }
    }
}

fn eval_row(run_id: &str, patch_id: &str, k: &str, r: &EvalRecord) -> Vec<String> {
    vec![
        run_id.into(),
        patch_id.into(),
        k.into(),
        f6(r.map50),
        f6(r.map50_95),
        f6(r.delta_map50),
        f6(r.delta_map50_95),
        r.placed_boxes.to_string(),
        r.skipped_boxes.to_string(),
    ]
}

/// Gray levels `0, 1/(n-1), ..., 1`; eleven levels are the standard controls.
pub fn gray_patches(n: usize, size: usize) -> Result<Vec<Patch>, CliError> {
    if n == GRAY_CONTROL_COUNT {
        return Ok(Patch::gray_controls(3, size, size)?);
    }
    if n < 2 {
        return Err(CliError::Invalid("--gray needs at least 2 levels".into()));
    }
    (0..n)
        .map(|i| {
            let v = i as f64 / (n - 1) as f64;
            Ok(Patch::gray(3, size, size, v)?.with_meta("gray", v))
        })
        .collect()
}

fn eval_set(ev: &Evaluator, set: &[Patch], k: &str, rows: &mut Vec<Vec<String>>) -> Result<(), CliError> {
    for (i, p) in set.iter().enumerate() {
        let r = ev.evaluate(p)?;
        let k = meta_or(p, "k", k.into());
        rows.push(eval_row(&meta_or(p, "run_id", "-".into()), &meta_or(p, "patch_id", i.to_string()), &k, &r));
    }
    Ok(())
}

pub fn evaluate(c: &Common, mode: &EvalMode) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let root = &c.out;
    let (model, _) = load_model(root)?;
    let scenes = regenerated_scenes(root, &cfg, Split::Test)?;
    if scenes.is_empty() {
        return Err(CliError::Invalid("the test split has no scene with regenerated ground truth".into()));
    }
    let ev = Evaluator::new(&model, &scenes, cfg.eval())?;
    let mut m = Manifest::new("evaluate");
    record_config(&mut m, &cfg);
    m.set("mode", mode.name());
    m.input(root, &Stage::Detector.manifest_rel())?;
    let mut rows = Vec::new();
    let mut header: Vec<&str> = EVAL_HEADER.to_vec();
    match mode {
        EvalMode::None => rows.push(eval_row("none", "none", "none", ev.baseline())),
        EvalMode::Gray(n) => {
            for p in gray_patches(*n, cfg.patch_size)? {
                let v = meta_or(&p, "gray", "?".into());
                let r = ev.evaluate(&p)?;
                rows.push(eval_row("gray", &format!("gray-{v}"), "gray", &r));
            }
        }
        EvalMode::Trained => {
            let set = load_population(root)?;
            m.input(root, &Stage::Patches.manifest_rel())?;
            eval_set(&ev, set.patches(), "trained", &mut rows)?;
        }
        EvalMode::Pca | EvalMode::Sweep => {
            let rm = require(root, Stage::Recon)?;
            m.input(root, &Stage::Recon.manifest_rel())?;
            let prefix = if *mode == EvalMode::Pca { "recon/k-" } else { "recon/sweep-n" };
            let files: Vec<String> = rm.outputs().filter(|(f, _)| f.starts_with(prefix)).map(|(f, _)| f.to_string()).collect();
            if *mode == EvalMode::Sweep {
                header.insert(0, "n");
            }
            for f in files {
                let set = PatchSet::load(&root.join(&f))?;
                let mut part = Vec::new();
                eval_set(&ev, set.patches(), "?", &mut part)?;
                for (mut row, p) in part.into_iter().zip(set.iter()) {
                    if *mode == EvalMode::Sweep {
                        row.insert(0, meta_or(p, "n", "?".into()));
                    }
                    rows.push(row);
                }
            }
        }
        EvalMode::File(path) => {
            let bytes = io(path, fs::read(path))?;
            let patches = match Patch::from_bytes(&bytes) {
                Ok(p) => vec![p],
                Err(_) => PatchSet::from_bytes(&bytes)
                    .map_err(|e| CliError::Invalid(format!("{}: neither a patch nor a patch set: {e}", path.display())))?
                    .patches()
                    .to_vec(),
            };
            let stem = mode.name();
            for (i, p) in patches.iter().enumerate() {
                let r = ev.evaluate(p)?;
                rows.push(eval_row(&stem, &meta_or(p, "patch_id", i.to_string()), &meta_or(p, "k", "file".into()), &r));
            }
        }
    }
    let dir = root.join("eval");
    mkdir(&dir)?;
    let name = mode.name();
    let csv_rel = format!("eval/{name}.csv");
    write_csv(&root.join(&csv_rel), &header, &rows)?;
    m.output(root, &csv_rel)?;
    m.write_to(root, &format!("eval/{name}.manifest"))?;

    let col = header.iter().position(|h| *h == "delta_map50").unwrap_or(5);
    let deltas: Vec<f64> = rows.iter().filter_map(|r| r[col].parse().ok()).collect();
    let (mean, std) = crate::table::mean_std(&deltas);
    println!(
        "{name}: baseline mAP@.5 {:.4}, {} rows, mean ΔmAP@.5 {mean:.4} ± {std:.4} -> {}",
        ev.baseline().map50,
        rows.len(),
        root.join(&csv_rel).display()
    );
    Ok(())
}

/// Checks the manifest of an evaluation CSV; `None` when it was never run.
pub fn require_eval(root: &Path, name: &str) -> Result<Option<PathBuf>, CliError> {
    let rel = format!("eval/{name}.manifest");
    if !root.join(&rel).exists() {
        return Ok(None);
    }
    let flag = match name {
        "gray" => "--gray 11".to_string(),
        other => format!("--patch {other}"),
    };
    require_file(root, &rel, &format!("evaluate {flag}"))?;
    Ok(Some(root.join(format!("eval/{name}.csv"))))
}
