use std::path::Path;

use crate::CliError;

/// Mean and sample standard deviation; the deviation is 0 for fewer than
/// two values.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One evaluation CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub n: Option<usize>,
    pub run_id: String,
    pub patch_id: String,
    pub k: String,
    pub map50: f64,
    pub map50_95: f64,
    pub delta_map50: f64,
    pub delta_map50_95: f64,
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Invalid(format!("{}: missing column {name}", path.display())))
    };
    let cols = [
        col("run_id")?,
        col("patch_id")?,
        col("k")?,
        col("map50")?,
        col("map50_95")?,
        col("delta_map50")?,
        col("delta_map50_95")?,
    ];
    let n_col = headers.iter().position(|h| h == "n");
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let num = |i: usize| -> Result<f64, CliError> {
            get(i)
                .parse()
                .map_err(|_| CliError::Invalid(format!("{}: bad number in {rec:?}", path.display())))
        };
        out.push(EvalRow {
            n: n_col.and_then(|i| get(i).parse().ok()),
            run_id: get(cols[0]),
            patch_id: get(cols[1]),
            k: get(cols[2]),
            map50: num(cols[3])?,
            map50_95: num(cols[4])?,
            delta_map50: num(cols[5])?,
            delta_map50_95: num(cols[6])?,
        });
    }
    Ok(out)
}

/// Aggregate of a group of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub map50: (f64, f64),
    pub map50_95: (f64, f64),
    pub delta_map50: (f64, f64),
    pub delta_map50_95: (f64, f64),
}

pub fn summarize<'a>(rows: impl IntoIterator<Item = &'a EvalRow>) -> Summary {
    let rows: Vec<&EvalRow> = rows.into_iter().collect();
    let pick = |f: fn(&EvalRow) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
    Summary {
        count: rows.len(),
        map50: pick(|r| r.map50),
        map50_95: pick(|r| r.map50_95),
        delta_map50: pick(|r| r.delta_map50),
        delta_map50_95: pick(|r| r.delta_map50_95),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
