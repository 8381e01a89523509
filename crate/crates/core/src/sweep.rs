//! Cartesian sweeps over `p` or the scheme, times seeds.
//!
//! Layout of a sweep directory:
//!
//! ```text
//! <out>/<axis>=<value>/seed-<s>/{config.txt,metrics.jsonl,eval.csv,checkpoint.bin}
//! <out>/summary.csv   cell,seed,status,metric,K,value   (final evaluation, one row per metric)
//! <out>/median.csv    cell,metric,K,median,runs         (median over completed seeds)
//! ```

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SchemeName};
use crate::error::{Error, Result};
use crate::metrics::to_csv;
use crate::train::{train, write_run, RunRecord};

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    P(Vec<f64>),
    Scheme(Vec<SchemeName>),
}

impl SweepAxis {
    fn labels(&self) -> Vec<String> {
        match self {
            SweepAxis::P(ps) => ps.iter().map(|p| format!("p={p}")).collect(),
            SweepAxis::Scheme(ss) => ss.iter().map(|s| format!("scheme={s}")).collect(),
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepAxis::P(v) => v.len(),
            SweepAxis::Scheme(v) => v.len(),
        }
    }

    fn apply(&self, i: usize, cfg: &mut RunConfig) {
        match self {
            SweepAxis::P(ps) => cfg.p = ps[i],
            SweepAxis::Scheme(ss) => cfg.scheme = ss[i],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
}

#[derive(Debug)]
pub struct CellResult {
    pub label: String,
    pub seed: u64,
    pub outcome: std::result::Result<RunRecord, String>,
}

impl SweepSpec {
    /// Every cell's configuration, axis-major.
    pub fn cells(&self) -> Result<Vec<(String, RunConfig)>> {
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        if self.axis.len() == 0 {
            return Err(Error::Config("sweep axis has no values".into()));
        }
        if matches!(self.axis, SweepAxis::P(_)) && self.base.scheme != SchemeName::ThrP {
            return Err(Error::Config(format!(
                "a p sweep needs scheme thr_p, not {}",
                self.base.scheme
            )));
        }
        let mut out = Vec::new();
        for (i, label) in self.axis.labels().into_iter().enumerate() {
            for &seed in &self.seeds {
                let mut cfg = self.base.clone();
                self.axis.apply(i, &mut cfg);
                cfg.seed = seed;
                cfg.validate()?;
                out.push((label.clone(), cfg));
            }
        }
        Ok(out)
    }
}

/// Runs every cell. A failing cell is recorded and the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<CellResult>> {
    let cells = spec.cells()?;
    Ok(cells
        .into_par_iter()
        .map(|(label, cfg)| {
            let outcome = train(&cfg).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("{label} seed {}: {e}", cfg.seed);
            }
            CellResult {
                label,
                seed: cfg.seed,
                outcome,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub cell: String,
    pub seed: u64,
    pub status: String,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MedianRow {
    pub cell: String,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub median: f64,
    pub runs: usize,
}

/// Final-evaluation rows for every cell; failed cells get one `error` row.
pub fn summary_rows(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for c in cells {
        match &c.outcome {
            Ok(rec) => {
                let last = rec.evals.last().map(|r| r.step);
                for r in rec.evals.iter().filter(|r| Some(r.step) == last) {
                    rows.push(SummaryRow {
                        cell: c.label.clone(),
                        seed: c.seed,
                        status: "ok".into(),
                        metric: r.metric.clone(),
                        k: r.k,
                        value: r.value,
                    });
                }
            }
            Err(e) => rows.push(SummaryRow {
                cell: c.label.clone(),
                seed: c.seed,
                status: format!("error: {e}"),
                metric: String::new(),
                k: 0,
                value: f64::NAN,
            }),
        }
    }
    rows
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median of each (cell, metric, K) over completed seeds, in first-seen order.
pub fn median_rows(summary: &[SummaryRow]) -> Vec<MedianRow> {
    let mut keys: Vec<(String, String, usize)> = Vec::new();
    for r in summary.iter().filter(|r| r.status == "ok") {
        let key = (r.cell.clone(), r.metric.clone(), r.k);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(cell, metric, k)| {
            let mut vals: Vec<f64> = summary
                .iter()
                .filter(|r| r.status == "ok" && r.cell == cell && r.metric == metric && r.k == k)
                .map(|r| r.value)
                .collect();
            let runs = vals.len();
            MedianRow {
                median: median(&mut vals).unwrap_or(f64::NAN),
                cell,
                metric,
                k,
                runs,
            }
        })
        .collect()
}

/// Refuses to reuse a non-empty directory unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() && !force {
        return Err(Error::Config(format!(
            "{} already holds results; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_sweep(dir: &Path, cells: &[CellResult]) -> Result<()> {
    for c in cells {
        if let Ok(rec) = &c.outcome {
            write_run(&dir.join(&c.label).join(format!("seed-{}", c.seed)), rec)?;
        }
    }
    let summary = summary_rows(cells);
    std::fs::write(dir.join("summary.csv"), to_csv(&summary)?)?;
    std::fs::write(dir.join("median.csv"), to_csv(&median_rows(&summary))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            steps: 2,
            questions: 6,
            groups_per_batch: 2,
            updates_per_batch: 1,
            eval_every: 0,
            eval_samples: 4,
            eval_k: vec![1, 4],
            ..RunConfig::default()
        }
    }

    #[test]
    fn validation() {
        let spec = SweepSpec {
            base: tiny(),
            axis: SweepAxis::Scheme(vec![SchemeName::Grpo]),
            seeds: vec![],
        };
        assert!(spec.cells().is_err());
        let spec = SweepSpec {
            base: tiny(),
            axis: SweepAxis::P(vec![0.1]),
            seeds: vec![1],
        };
        assert!(spec.cells().is_err(), "p sweep on grpo");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn sweep_writes_and_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep");
        let spec = SweepSpec {
            base: RunConfig {
                scheme: SchemeName::ThrP,
                ..tiny()
            },
            axis: SweepAxis::P(vec![-0.2, 0.2]),
            seeds: vec![0, 1],
        };
        prepare_dir(&out, false).unwrap();
        let cells = run_sweep(&spec).unwrap();
        assert_eq!(cells.len(), 4);
        write_sweep(&out, &cells).unwrap();
        assert!(out.join("p=-0.2/seed-1/metrics.jsonl").exists());
        let med = std::fs::read_to_string(out.join("median.csv")).unwrap();
        assert!(med.starts_with("cell,metric,K,median,runs\n"));
        assert!(prepare_dir(&out, false).is_err());
        assert!(prepare_dir(&out, true).is_ok());
    }
}
