use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::agent::{read_metrics_csv, MetricsRow, CSV_COLUMNS};
use crate::error::{Error, Result};

/// Summary of one metric at one step across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    /// Population convention: zero for a single seed.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl ColumnStats {
    /// `None` for no values. Values are sorted first so the result does not
    /// depend on input order.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            min: v[0],
            max: v[v.len() - 1],
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// Runs contributing a row at this step.
    pub runs: usize,
    /// Indexed like [`metric_columns`].
    pub columns: Vec<Option<ColumnStats>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub runs: usize,
    pub steps: Vec<StepStats>,
}

/// Every CSV column except `step`.
pub fn metric_columns() -> &'static [&'static str] {
    &CSV_COLUMNS[1..]
}

fn column_index(column: &str) -> Result<usize> {
    metric_columns()
        .iter()
        .position(|c| *c == column)
        .ok_or_else(|| Error::Invalid(format!("unknown metric column {column:?}")))
}

impl AggregateStats {
    /// `(step, stats)` for every step where `column` has data.
    pub fn series(&self, column: &str) -> Result<Vec<(u64, ColumnStats)>> {
        let i = column_index(column)?;
        Ok(self
            .steps
            .iter()
            .filter_map(|s| s.columns[i].map(|c| (s.step, c)))
            .collect())
    }

    pub fn last(&self, column: &str) -> Result<Option<ColumnStats>> {
        Ok(self.series(column)?.last().map(|(_, c)| *c))
    }
}

/// Align runs on the step column. Empty cells are skipped, never filled in.
pub fn aggregate_rows(runs: &[Vec<MetricsRow>]) -> Result<AggregateStats> {
    if runs.is_empty() {
        return Err(Error::Invalid("nothing to aggregate".into()));
    }
    let mut by_step: BTreeMap<u64, Vec<&MetricsRow>> = BTreeMap::new();
    for run in runs {
        for row in run {
            by_step.entry(row.step).or_default().push(row);
        }
    }
    let steps = by_step
        .into_iter()
        .map(|(step, rows)| StepStats {
            step,
            runs: rows.len(),
            columns: metric_columns()
                .iter()
                .map(|c| {
                    let vals: Vec<f64> = rows.iter().filter_map(|r| r.value(c)).collect();
                    ColumnStats::of(&vals)
                })
                .collect(),
        })
        .collect();
    Ok(AggregateStats {
        runs: runs.len(),
        steps,
    })
}

pub fn aggregate_files(paths: &[PathBuf]) -> Result<AggregateStats> {
    let runs = paths
        .iter()
        .map(|p| read_metrics_csv(p))
        .collect::<Result<Vec<_>>>()?;
    aggregate_rows(&runs)
}

/// Header: `step,runs`, then `<col>_mean,<col>_std,<col>_min,<col>_max` per
/// metric column.
pub fn write_aggregate_csv<W: Write>(out: W, agg: &AggregateStats) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "runs".to_string()];
    for c in metric_columns() {
        for s in ["mean", "std", "min", "max"] {
            header.push(format!("{c}_{s}"));
        }
    }
    w.write_record(&header)?;
    for s in &agg.steps {
        let mut rec = vec![s.step.to_string(), s.runs.to_string()];
        for c in &s.columns {
            match c {
                Some(c) => rec.extend([c.mean, c.std, c.min, c.max].map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn save_aggregate_csv(path: &Path, agg: &AggregateStats) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_aggregate_csv(std::io::BufWriter::new(f), agg)
}
