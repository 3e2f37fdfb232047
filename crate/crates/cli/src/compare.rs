//! Step-aligned comparison of two runs' windowed-error series.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::manifest::Manifest;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub steps: usize,
    pub first_step: Option<usize>,
    pub last_step: Option<usize>,
    pub auc_a: f64,
    pub auc_b: f64,
    /// `auc_a − auc_b`; negative when run A learns faster.
    pub auc_difference: f64,
    pub max_abs_difference: f64,
    #[serde(skip)]
    pub rows: Vec<(usize, f64, f64)>,
}

/// Mean windowed error per step across the replicates of a run.
pub fn mean_series(manifest: &Manifest, dir: &Path) -> Result<BTreeMap<usize, f64>> {
    if manifest.metrics.is_empty() {
        bail!("run `{}` lists no metric files", manifest.experiment);
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for m in &manifest.metrics {
        let path = dir.join(&m.file);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .with_context(|| format!("{} has no `{name}` column", path.display()))
        };
        let (si, ei) = (col("step")?, col("windowed_error")?);
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            let parse_err = || format!("{}:{}: malformed row", path.display(), n + 2);
            let step: usize = cells.get(si).with_context(parse_err)?.parse().with_context(parse_err)?;
            let err: f64 = cells.get(ei).with_context(parse_err)?.parse().with_context(parse_err)?;
            let e = sums.entry(step).or_insert((0.0, 0));
            e.0 += err;
            e.1 += 1;
        }
    }
    Ok(sums.into_iter().map(|(s, (t, n))| (s, t / n as f64)).collect())
}

/// Compares runs A and B over their common steps below `auc_steps`.
pub fn compare(a: &Path, b: &Path, auc_steps: Option<usize>) -> Result<Comparison> {
    let (ma, da) = Manifest::load(a)?;
    let (mb, db) = Manifest::load(b)?;
    let cols = |m: &Manifest| m.metrics.first().map(|f| f.columns.clone()).unwrap_or_default();
    if cols(&ma) != cols(&mb) {
        bail!(
            "metric schemas differ: [{}] vs [{}]",
            cols(&ma).join(","),
            cols(&mb).join(",")
        );
    }
    let sa = mean_series(&ma, &da)?;
    let sb = mean_series(&mb, &db)?;
    let limit = auc_steps.unwrap_or(usize::MAX);
    let rows: Vec<(usize, f64, f64)> = sa
        .iter()
        .filter(|(s, _)| **s < limit)
        .filter_map(|(s, ea)| sb.get(s).map(|eb| (*s, *ea, *eb)))
        .collect();
    if rows.is_empty() {
        bail!("the runs share no recorded steps");
    }
    let n = rows.len() as f64;
    let auc_a = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let auc_b = rows.iter().map(|r| r.2).sum::<f64>() / n;
    Ok(Comparison {
        run_a: a.display().to_string(),
        run_b: b.display().to_string(),
        steps: rows.len(),
        first_step: rows.first().map(|r| r.0),
        last_step: rows.last().map(|r| r.0),
        auc_a,
        auc_b,
        auc_difference: auc_a - auc_b,
        max_abs_difference: rows.iter().map(|r| (r.1 - r.2).abs()).fold(0.0, f64::max),
        rows,
    })
}
