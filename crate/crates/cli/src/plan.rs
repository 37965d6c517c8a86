//! Patch-population plans: which attack parameterizations to train and how
//! many patches of each.

use std::path::Path;

use eigenpatch::attack::{AttackConfig, Scheduler, PRESETS};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct PlanRow {
    pub label: u32,
    pub patches: usize,
    pub epochs: usize,
    pub scheduler: Scheduler,
    pub resize_range: [f64; 2],
    pub rotation_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub rows: Vec<PlanRow>,
}

/// Patch counts of the desk-scale plan, in preset order.
const DESK_COUNTS: [usize; 5] = [35, 20, 10, 5, 5];
const DESK_EPOCHS: usize = 30;

impl ExperimentPlan {
    /// The reference table shrunk to 75 patches at 30 epochs.
    pub fn desk() -> Self {
        Self::from_presets(|i, _, _| (DESK_COUNTS[i], DESK_EPOCHS))
    }

    /// The full reference table: 375 patches at 100 or 125 epochs.
    pub fn full() -> Self {
        Self::from_presets(|_, n, e| (n, e))
    }

    fn from_presets(pick: impl Fn(usize, usize, usize) -> (usize, usize)) -> Self {
        let rows = PRESETS
            .iter()
            .enumerate()
            .map(|(i, &(label, n, e, sched, resize, rot))| {
                let (patches, epochs) = pick(i, n, e);
                PlanRow {
                    label,
                    patches,
                    epochs,
                    scheduler: sched.parse().expect("preset scheduler names are valid"),
                    resize_range: resize,
                    rotation_deg: rot,
                }
            })
            .collect();
        Self { rows }
    }

    /// `default`, `full`, or a plan file.
    pub fn resolve(name: &str) -> Result<Self, CliError> {
        match name {
            "default" | "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            path => Self::from_file(Path::new(path)),
        }
    }

    /// One row per line: `label patches epochs scheduler lo,hi rotation`.
    /// `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read plan {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let err = |m: &str| format!("line {}: {m}", i + 1);
            if f.len() != 6 {
                return Err(err("expected `label patches epochs scheduler lo,hi rotation`"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("bad number {s:?}")));
            let (lo, hi) = f[4].split_once(',').ok_or_else(|| err("resize range must be lo,hi"))?;
            rows.push(PlanRow {
                label: f[0].parse().map_err(|_| err("bad label"))?,
                patches: f[1].parse().map_err(|_| err("bad patch count"))?,
                epochs: f[2].parse().map_err(|_| err("bad epoch count"))?,
                scheduler: f[3].parse().map_err(|e| err(&format!("{e}")))?,
                resize_range: [num(lo)?, num(hi)?],
                rotation_deg: num(f[5])?,
            });
        }
        let plan = Self { rows };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.population() < 2 {
            return Err("plan needs at least two patches in total".into());
        }
        let mut labels: Vec<u32> = self.rows.iter().map(|r| r.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.rows.len() {
            return Err("plan labels must be unique".into());
        }
        for r in &self.rows {
            self.attack_config(r, &AttackConfig::default(), 0)
                .validate()
                .map_err(|e| format!("run {}: {e}", r.label))?;
        }
        Ok(())
    }

    pub fn population(&self) -> usize {
        self.rows.iter().map(|r| r.patches).sum()
    }

    /// The attack config of one patch: the row's parameterization over `base`.
    pub fn attack_config(&self, row: &PlanRow, base: &AttackConfig, seed: u64) -> AttackConfig {
        AttackConfig {
            epochs: row.epochs,
            scheduler: row.scheduler,
            resize_range: row.resize_range,
            rotation_bound_deg: row.rotation_deg,
            seed,
            ..base.clone()
        }
    }

    /// The plan in file syntax.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# label patches epochs scheduler resize rotation\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{} {} {} {} {},{} {}\n",
                r.label, r.patches, r.epochs, r.scheduler, r.resize_range[0], r.resize_range[1], r.rotation_deg
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_plan_shrinks_reference_table() {
        let p = ExperimentPlan::desk();
        assert_eq!(p.population(), 75);
        assert!(p.rows.iter().all(|r| r.epochs == 30));
        assert_eq!(ExperimentPlan::full().population(), 375);
        assert_eq!(ExperimentPlan::full().rows[4].epochs, 125);
    }

    #[test]
    fn text_round_trip() {
        let p = ExperimentPlan::full();
        assert_eq!(ExperimentPlan::parse(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(ExperimentPlan::parse("191 5 30 step 0.75,1.0").is_err());
        assert!(ExperimentPlan::parse("191 5 30 warm 0.75,1.0 30").is_err());
        assert!(ExperimentPlan::parse("191 5 30 step 0.75,1.5 30").is_err());
        assert!(ExperimentPlan::parse("1 2 3 step 0.5,1 0\n1 2 3 step 0.5,1 0").is_err());
        assert!(ExperimentPlan::parse("# nothing\n").is_err());
    }
}
