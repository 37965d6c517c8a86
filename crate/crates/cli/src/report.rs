//! Tables and plots from the evaluation CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::pipeline::{f6, load_config, require_eval};
use crate::svg::{Plot, Reference, Series};
use crate::table::{read_eval, summarize, EvalRow, Summary};
use crate::{CliError, Common};

const BLUE: &str = "#1f77b4";
const ORANGE: &str = "#ff7f0e";
const RED: &str = "#d62728";
const GRAY: &str = "#7f7f7f";

fn pm((m, s): (f64, f64)) -> String {
    format!("{m:.2} ± {s:.2}")
}

/// Groups rows by a numeric key, in ascending key order.
fn by_key(rows: &[EvalRow], key: impl Fn(&EvalRow) -> Option<usize>) -> BTreeMap<usize, Vec<EvalRow>> {
    let mut out: BTreeMap<usize, Vec<EvalRow>> = BTreeMap::new();
    for r in rows {
        if let Some(k) = key(r) {
            out.entry(k).or_default().push(r.clone());
        }
    }
    out
}

fn series(groups: &BTreeMap<usize, Summary>, name: &str, color: &'static str, pick: fn(&Summary) -> (f64, f64)) -> Series {
    Series {
        name: name.into(),
        color,
        xs: groups.keys().map(|&k| k as f64).collect(),
        mean: groups.values().map(|s| pick(s).0).collect(),
        std: groups.values().map(|s| pick(s).1).collect(),
    }
}

pub fn report(c: &Common) -> Result<(), CliError> {
    load_config(c)?;
    let root = &c.out;
    let load = |name: &str| -> Result<Option<Vec<EvalRow>>, CliError> {
        require_eval(root, name)?.map(|p| read_eval(&p)).transpose()
    };
    let none = load("none")?.ok_or_else(|| {
        CliError::Stale(format!(
            "no baseline evaluation; run `eigenpatch evaluate --patch none --out {}`",
            root.display()
        ))
    })?;
    let gray = load("gray")?;
    let trained = load("trained")?;
    let pca = load("pca")?;
    let sweep = load("sweep")?;

    let dir = root.join("report");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    // table in the layout: patch | n | mAP@.5 | mAP@.5:.95 | deltas
    let mut rows: Vec<(String, Summary)> = vec![("No".into(), summarize(&none))];
    if let Some(g) = &gray {
        rows.push(("Gray value".into(), summarize(g)));
    }
    if let Some(t) = &trained {
        rows.push(("Trained".into(), summarize(t)));
    }
    let pca_groups: BTreeMap<usize, Summary> = pca
        .as_deref()
        .map(|p| by_key(p, |r| r.k.parse().ok()).iter().map(|(k, v)| (*k, summarize(v))).collect())
        .unwrap_or_default();
    for (k, s) in &pca_groups {
        rows.push((format!("PCA({k}) recovered"), s.clone()));
    }

    let mut csv_rows = Vec::new();
    let mut md = String::from(
        "| Patch | n | mAP@.5 | mAP@.5:.95 | ΔmAP@.5 | ΔmAP@.5:.95 |\n|---|---|---|---|---|---|\n",
    );
    for (name, s) in &rows {
        md.push_str(&format!(
            "| {name} | {} | {} | {} | {} | {} |\n",
            s.count,
            pm(s.map50),
            pm(s.map50_95),
            pm(s.delta_map50),
            pm(s.delta_map50_95)
        ));
        let mut r = vec![name.clone(), s.count.to_string()];
        for (m, d) in [s.map50, s.map50_95, s.delta_map50, s.delta_map50_95] {
            r.push(f6(m));
            r.push(f6(d));
        }
        csv_rows.push(r);
    }
    let path = dir.join("table.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "patch",
        "n",
        "map50_mean",
        "map50_std",
        "map50_95_mean",
        "map50_95_std",
        "delta_map50_mean",
        "delta_map50_std",
        "delta_map50_95_mean",
        "delta_map50_95_std",
    ])?;
    for r in &csv_rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let write = |name: &str, text: &str| -> Result<(), CliError> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    write("table.md", &md)?;

    let trained_summary = trained.as_deref().map(summarize);
    let refs = |pick: fn(&Summary) -> (f64, f64), label: &str| -> Vec<Reference> {
        trained_summary
            .iter()
            .map(|s| Reference {
                name: format!("trained {label}"),
                color: RED,
                y: pick(s).0,
            })
            .collect()
    };
    let mut figures = Vec::new();
    if !pca_groups.is_empty() {
        let mut references = refs(|s| s.delta_map50, "Δ@.5");
        references.extend(refs(|s| s.delta_map50_95, "Δ@.5:.95").into_iter().map(|r| Reference { color: GRAY, ..r }));
        let plot = Plot {
            title: "mAP drop of reconstructed patches".into(),
            x_label: "principal components k".into(),
            y_label: "mAP drop (baseline − patched)".into(),
            log2_x: true,
            series: vec![
                series(&pca_groups, "ΔmAP@.5", BLUE, |s| s.delta_map50),
                series(&pca_groups, "ΔmAP@.5:.95", ORANGE, |s| s.delta_map50_95),
            ],
            references,
        };
        write("drop_vs_k.svg", &plot.render())?;
        figures.push("drop_vs_k.svg");
    }
    if let Some(sw) = &sweep {
        let groups: BTreeMap<usize, Summary> = by_key(sw, |r| r.n).iter().map(|(k, v)| (*k, summarize(v))).collect();
        let plot = Plot {
            title: "mAP drop versus PCA input set size".into(),
            x_label: "input patches n (min(n, 64) components)".into(),
            y_label: "mAP drop (baseline − patched)".into(),
            log2_x: true,
            series: vec![
                series(&groups, "ΔmAP@.5", BLUE, |s| s.delta_map50),
                series(&groups, "ΔmAP@.5:.95", ORANGE, |s| s.delta_map50_95),
            ],
            references: refs(|s| s.delta_map50, "Δ@.5"),
        };
        write("drop_vs_set_size.svg", &plot.render())?;
        figures.push("drop_vs_set_size.svg");
        let mut sw_md = String::from("| n | patches | ΔmAP@.5 | ΔmAP@.5:.95 |\n|---|---|---|---|\n");
        for (n, s) in &groups {
            sw_md.push_str(&format!("| {n} | {} | {} | {} |\n", s.count, pm(s.delta_map50), pm(s.delta_map50_95)));
        }
        write("sweep.md", &sw_md)?;
    }

    let mut doc = String::from("# Run report\n\n");
    doc.push_str(&md);
    doc.push_str("\nValues are mean ± sample standard deviation over patches; Δ is baseline minus patched.\n\n");
    for f in &figures {
        doc.push_str(&format!("![{f}]({f})\n\n"));
    }
    if root.join("pca/components.png").exists() {
        doc.push_str("Eigenpatches: `pca/components.png` (first sixteen components), `pca/mean16_with_mean.png` and `pca/mean16_without_mean.png` (their unweighted mean with and without the data mean).\n");
    }
    write("report.md", &doc)?;
    print!("{md}");
    println!("report written to {}", dir.display());
    Ok(())
}

/// Convenience for tests and tools: the summary row of one evaluation CSV.
pub fn summarize_csv(path: &Path) -> Result<Summary, CliError> {
    Ok(summarize(&read_eval(path)?))
}
