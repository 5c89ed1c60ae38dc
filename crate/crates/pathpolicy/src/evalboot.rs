//! Nonparametric bootstrap intervals and comparison tables.
//!
//! Replicates resample rows with replacement and re-run the full estimator,
//! so the interval reflects every fitted ingredient, not just the final
//! average. Replicate `i` always draws its rows from stream `i` of the
//! seeded generator: results are identical across thread counts and runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Data that can produce a copy of itself restricted to the given rows
/// (with repetition, in order).
pub trait Resample: Sync {
    fn len(&self) -> usize;
    fn resample(&self, rows: &[usize]) -> Self;
}

impl Resample for Dataset {
    fn len(&self) -> usize {
        self.n()
    }

    fn resample(&self, rows: &[usize]) -> Self {
        self.take_rows(rows)
    }
}

impl Resample for Vec<f64> {
    fn len(&self) -> usize {
        self.len()
    }

    fn resample(&self, rows: &[usize]) -> Self {
        rows.iter().map(|&r| self[r]).collect()
    }
}

/// A point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage, e.g. `0.95`.
    pub level: f64,
    /// Replicates that produced an estimate.
    pub replicates: usize,
    /// Replicates skipped because the estimator failed on them.
    pub failed: usize,
    pub seed: u64,
}

/// Percentile bootstrap interval for `estimator` on `data`.
///
/// The point estimate comes from the full data and its failure is a hard
/// error. Individual replicate failures (a resample can lose a stratum or
/// separate a logistic fit) are skipped and counted; more than 10% of them
/// failing invalidates the interval.
pub fn bootstrap_ci<D, F>(data: &D, estimator: F, b: usize, level: f64, seed: u64) -> Result<CiReport>
where
    D: Resample,
    F: Fn(&D) -> Result<f64> + Sync,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} is outside (0, 1)")));
    }
    if b < 2 {
        return Err(Error::Config(format!("{b} bootstrap replicates cannot form an interval")));
    }
    let n = data.len();
    if n == 0 {
        return Err(Error::BadData("cannot bootstrap an empty dataset".into()));
    }

    let point = estimator(data)?;

    let streams = StreamRng::new(seed);
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|idx| {
            let mut gen = streams.stream(idx as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng::index(&mut gen, n)).collect();
            estimator(&data.resample(&rows)).ok()
        })
        .collect();

    let mut values: Vec<f64> = draws.iter().filter_map(|v| *v).collect();
    let failed = b - values.len();
    if failed * 10 > b {
        return Err(Error::ReplicateFailure { failed, total: b });
    }
    values.sort_by(|a, b| a.total_cmp(b));

    let alpha = (1.0 - level) / 2.0;
    Ok(CiReport {
        point,
        lower: values[nearest_rank(alpha, values.len())],
        upper: values[nearest_rank(1.0 - alpha, values.len())],
        level,
        replicates: values.len(),
        failed,
        seed,
    })
}

/// Zero-based nearest-rank index for quantile `q` among `m` sorted values.
fn nearest_rank(q: f64, m: usize) -> usize {
    let rank = (q * m as f64).ceil() as usize;
    rank.clamp(1, m) - 1
}

/// One formatted cell: `point (lower, upper)` at two decimals.
pub fn format_cell(ci: &CiReport) -> String {
    format!("{:.2} ({:.2}, {:.2})", ci.point, ci.lower, ci.upper)
}

/// A labeled grid of interval estimates, one row per method or policy and
/// one column per estimand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    columns: Vec<String>,
    rows: Vec<(String, Vec<Option<CiReport>>)>,
}

impl ComparisonTable {
    pub fn new(columns: Vec<String>) -> Self {
        ComparisonTable { columns, rows: Vec::new() }
    }

    pub fn push_row(&mut self, label: impl Into<String>, cells: Vec<Option<CiReport>>) -> Result<()> {
        if cells.len() != self.columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "row has {} cells, table has {} columns",
                cells.len(),
                self.columns.len()
            )));
        }
        self.rows.push((label.into(), cells));
        Ok(())
    }

    /// Fixed-width text rendering with aligned columns.
    pub fn render_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = vec![std::iter::once(String::new())
            .chain(self.columns.iter().cloned())
            .collect()];
        for (label, cells) in &self.rows {
            let mut line = vec![label.clone()];
            line.extend(cells.iter().map(|c| match c {
                Some(ci) => format_cell(ci),
                None => "-".into(),
            }));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..=self.columns.len())
            .map(|j| grid.iter().map(|row| row[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &grid {
            let mut line = String::new();
            for (j, cell) in row.iter().enumerate() {
                if j > 0 {
                    line.push_str("  ");
                }
                line.push_str(cell);
                line.push_str(&" ".repeat(widths[j] - cell.len()));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    /// Machine-readable rendering: one row per (label, column) pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,column,point,lower,upper,level,replicates,failed\n");
        for (label, cells) in &self.rows {
            for (col, cell) in self.columns.iter().zip(cells) {
                match cell {
                    Some(ci) => out.push_str(&format!(
                        "{label},{col},{},{},{},{},{},{}\n",
                        ci.point, ci.lower, ci.upper, ci.level, ci.replicates, ci.failed
                    )),
                    None => out.push_str(&format!("{label},{col},,,,,,\n")),
                }
            }
        }
        out
    }
}
