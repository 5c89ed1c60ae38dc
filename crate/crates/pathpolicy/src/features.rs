//! Declarative feature maps over dataset columns.
//!
//! A feature map is a list of terms, each an intercept, a single column
//! effect, or a pairwise product. Multi-valued columns can enter through
//! indicator (dummy) factors. Maps are plain data so fitted models carry
//! their own design description and serialize losslessly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{ColRef, Layout};

/// One multiplicative factor: a column read either numerically or as an
/// indicator `I{col == level}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub col: ColRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
}

impl Factor {
    pub fn col(col: ColRef) -> Self {
        Factor { col, level: None }
    }

    pub fn dummy(col: ColRef, level: u8) -> Self {
        Factor { col, level: Some(level) }
    }

    fn eval(&self, layout: &Layout, row: &[u8]) -> f64 {
        let v = row[layout.col_index(self.col).expect("validated column")];
        match self.level {
            None => f64::from(v),
            Some(l) => f64::from(u8::from(v == l)),
        }
    }
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.level {
            None => write!(f, "{}", self.col),
            Some(l) => write!(f, "I{{{}={}}}", self.col, l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Single(Factor),
    Pair(Factor, Factor),
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Single(a) => write!(f, "{a}"),
            Term::Pair(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub terms: Vec<Term>,
}

impl FeatureMap {
    pub fn new(terms: Vec<Term>) -> Self {
        FeatureMap { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Check every referenced column exists, is not the final outcome, and
    /// dummy levels fit the column's cardinality.
    pub fn validate(&self, layout: &Layout) -> Result<()> {
        let check = |f: &Factor| -> Result<()> {
            let idx = layout.col_index(f.col)?;
            if idx == layout.outcome_col() {
                return Err(Error::ShapeMismatch(format!(
                    "the final outcome {} cannot be a feature",
                    f.col
                )));
            }
            if let Some(l) = f.level {
                if l >= layout.col_card(idx) {
                    return Err(Error::ShapeMismatch(format!(
                        "dummy level {l} out of range for {}",
                        f.col
                    )));
                }
            }
            Ok(())
        };
        for t in &self.terms {
            match t {
                Term::Intercept => {}
                Term::Single(a) => check(a)?,
                Term::Pair(a, b) => {
                    check(a)?;
                    check(b)?;
                }
            }
        }
        if self.terms.is_empty() {
            return Err(Error::ShapeMismatch("feature map has no terms".into()));
        }
        Ok(())
    }

    pub fn eval_into(&self, layout: &Layout, row: &[u8], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.terms.len());
        for (slot, t) in self.terms.iter().enumerate() {
            out[slot] = match t {
                Term::Intercept => 1.0,
                Term::Single(a) => a.eval(layout, row),
                Term::Pair(a, b) => a.eval(layout, row) * b.eval(layout, row),
            };
        }
    }

    pub fn eval(&self, layout: &Layout, row: &[u8]) -> Vec<f64> {
        let mut out = vec![0.0; self.terms.len()];
        self.eval_into(layout, row, &mut out);
        out
    }

    pub fn dot(&self, layout: &Layout, row: &[u8], coef: &[f64]) -> f64 {
        debug_assert_eq!(coef.len(), self.terms.len());
        let mut acc = 0.0;
        for (t, &c) in self.terms.iter().zip(coef) {
            let x = match t {
                Term::Intercept => 1.0,
                Term::Single(a) => a.eval(layout, row),
                Term::Pair(a, b) => a.eval(layout, row) * b.eval(layout, row),
            };
            acc += c * x;
        }
        acc
    }

    pub fn describe(&self) -> String {
        self.terms.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" + ")
    }

    /// Highest column index any term reads; `None` for an intercept-only map.
    pub fn max_col(&self, layout: &Layout) -> Result<Option<usize>> {
        let mut max = None;
        for t in &self.terms {
            let factors: &[Factor] = match t {
                Term::Intercept => &[],
                Term::Single(a) => std::slice::from_ref(a),
                Term::Pair(a, b) => &[*a, *b],
            };
            for f in factors {
                let idx = layout.col_index(f.col)?;
                if max.is_none_or(|m| idx > m) {
                    max = Some(idx);
                }
            }
        }
        Ok(max)
    }

    /// Divide every term by the numeric factor for `col`; each term must
    /// contain it exactly once. Turns a treatment-contrast map into the map
    /// of its history coefficients.
    pub fn factor_out(&self, col: ColRef) -> Result<FeatureMap> {
        let target = Factor::col(col);
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let reduced = match t {
                Term::Single(a) if *a == target => Some(Term::Intercept),
                Term::Pair(a, b) if *a == target && *b != target => Some(Term::Single(*b)),
                Term::Pair(a, b) if *b == target && *a != target => Some(Term::Single(*a)),
                _ => None,
            };
            match reduced {
                Some(r) => terms.push(r),
                None => {
                    return Err(Error::ShapeMismatch(format!(
                        "term {t} does not contain {col} exactly once"
                    )))
                }
            }
        }
        Ok(FeatureMap { terms })
    }
}

/// Main-effect factors for a set of columns: numeric for binary columns,
/// indicator contrasts (levels 1..card) for multi-valued ones.
pub fn main_factors(layout: &Layout, cols: impl IntoIterator<Item = usize>) -> Vec<Factor> {
    let mut out = Vec::new();
    for c in cols {
        let card = layout.col_card(c);
        let col = layout.col_ref(c);
        if card == 2 {
            out.push(Factor::col(col));
        } else {
            for l in 1..card {
                out.push(Factor::dummy(col, l));
            }
        }
    }
    out
}
