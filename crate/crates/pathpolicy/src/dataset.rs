//! Column-major longitudinal datasets and their CSV round trip.
//!
//! Discrete columns are stored as bytes; the final outcome is a float
//! column. CSV files carry a header matching [`Layout::column_names`],
//! binary values as bare `0`/`1`, and the final outcome in scientific
//! notation with 17 significant digits so the value round-trips exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layout::Layout;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    layout: Layout,
    /// Discrete columns, in layout order; each has length `n`.
    cols: Vec<Vec<u8>>,
    /// Final outcome column.
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(layout: Layout, cols: Vec<Vec<u8>>, y: Vec<f64>) -> Result<Self> {
        let d = Dataset { layout, cols, y };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        if self.cols.len() != self.layout.n_discrete() {
            return Err(Error::BadData(format!(
                "{} discrete columns for a layout with {}",
                self.cols.len(),
                self.layout.n_discrete()
            )));
        }
        let n = self.y.len();
        for (c, col) in self.cols.iter().enumerate() {
            if col.len() != n {
                return Err(Error::BadData(format!(
                    "column {} has {} rows, outcome has {n}",
                    self.layout.col_ref(c),
                    col.len()
                )));
            }
            let card = self.layout.col_card(c);
            if let Some(v) = col.iter().find(|&&v| v >= card) {
                return Err(Error::BadData(format!(
                    "column {} contains value {v}, cardinality is {card}",
                    self.layout.col_ref(c)
                )));
            }
        }
        if let Some(v) = self.y.iter().find(|v| !v.is_finite()) {
            return Err(Error::BadData(format!("outcome contains non-finite value {v}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn col(&self, idx: usize) -> &[u8] {
        &self.cols[idx]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Copy one row's discrete values into `buf` (resized as needed).
    pub fn read_row(&self, row: usize, buf: &mut Vec<u8>) {
        buf.clear();
        buf.extend(self.cols.iter().map(|c| c[row]));
    }

    /// New dataset holding the given rows (repeats allowed), in order.
    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        let cols = self
            .cols
            .iter()
            .map(|col| rows.iter().map(|&r| col[r]).collect())
            .collect();
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Dataset { layout: self.layout.clone(), cols, y }
    }

    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.layout.column_names().join(","))?;
        let mut line = String::new();
        for r in 0..self.n() {
            line.clear();
            for col in &self.cols {
                line.push_str(itoa(col[r]));
                line.push(',');
            }
            line.push_str(&format!("{:.16e}", self.y[r]));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv(std::io::BufWriter::new(file))
    }

    /// Parse a CSV produced by [`Dataset::to_csv`]. When `layout` is absent
    /// the shape is inferred from the header and the baseline cardinality
    /// from the data (at least 2).
    pub fn from_csv<R: BufRead>(reader: R, layout: Option<&Layout>) -> Result<Dataset> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::BadData("empty file".into()))??;
        let names: Vec<&str> = header.trim().split(',').collect();

        let inferred = match layout {
            Some(l) => l.clone(),
            None => layout_from_header(&names)?,
        };
        let expected = inferred.column_names();
        if names != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::BadData(format!(
                "header mismatch: got [{}], expected [{}]",
                names.join(","),
                expected.join(",")
            )));
        }

        let n_cols = inferred.n_cols();
        let mut cols: Vec<Vec<u8>> = vec![Vec::new(); inferred.n_discrete()];
        let mut y = Vec::new();
        let mut max_w0 = 0u8;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != n_cols {
                return Err(Error::BadData(format!(
                    "row {}: {} fields, expected {n_cols}",
                    lineno + 2,
                    fields.len()
                )));
            }
            for (c, f) in fields[..n_cols - 1].iter().enumerate() {
                let v: u8 = f.parse().map_err(|_| {
                    Error::BadData(format!("row {}: bad value {f:?} in {}", lineno + 2, expected[c]))
                })?;
                if c == 0 {
                    max_w0 = max_w0.max(v);
                }
                cols[c].push(v);
            }
            let v: f64 = fields[n_cols - 1].parse().map_err(|_| {
                Error::BadData(format!("row {}: bad outcome {:?}", lineno + 2, fields[n_cols - 1]))
            })?;
            y.push(v);
        }

        let final_layout = match layout {
            Some(l) => l.clone(),
            None => Layout {
                baseline_card: inferred.baseline_card.max(max_w0 + 1).max(2),
                ..inferred
            },
        };
        Dataset::new(final_layout, cols, y)
    }

    pub fn read_csv(path: &Path, layout: Option<&Layout>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Dataset::from_csv(std::io::BufReader::new(file), layout)
    }
}

fn itoa(v: u8) -> &'static str {
    const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
    DIGITS[v as usize % 10]
}

/// Reconstruct the layout shape from a header like `W0,A1,M1_1,W1`.
fn layout_from_header(names: &[&str]) -> Result<Layout> {
    if names.first() != Some(&"W0") {
        return Err(Error::BadData("header must start with W0".into()));
    }
    let mut dims = Vec::new();
    let mut i = 1;
    let mut stage = 0;
    while i < names.len() {
        stage += 1;
        if names[i] != format!("A{stage}") {
            return Err(Error::BadData(format!("expected A{stage} at column {i}")));
        }
        i += 1;
        let mut dim = 0;
        while i < names.len() && *names[i] == format!("M{stage}_{}", dim + 1) {
            dim += 1;
            i += 1;
        }
        if dim == 0 {
            return Err(Error::BadData(format!("stage {stage} has no mediator columns")));
        }
        if i >= names.len() || *names[i] != format!("W{stage}") {
            return Err(Error::BadData(format!("expected W{stage} after stage-{stage} mediators")));
        }
        dims.push(dim);
        i += 1;
    }
    if stage == 0 {
        return Err(Error::BadData("header has no stages".into()));
    }
    Layout::new(stage, 2, dims)
}
