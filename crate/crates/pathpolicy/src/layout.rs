//! Column layout shared by datasets, models, policies, and learners.
//!
//! Observations follow a fixed longitudinal order: a baseline covariate `W0`,
//! then for each stage `i` a binary treatment `Ai`, a vector of binary
//! mediator components `Mi_1..Mi_m`, and an outcome `Wi`. Intermediate
//! outcomes are binary; the final outcome `WK` is real-valued and is always
//! the last column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symbolic reference to a column, independent of the concrete layout.
///
/// Stages are 1-based; mediator components are 0-based within their stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColRef {
    W0,
    A(usize),
    M(usize, usize),
    W(usize),
}

impl std::fmt::Display for ColRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColRef::W0 => write!(f, "W0"),
            ColRef::A(i) => write!(f, "A{i}"),
            ColRef::M(i, c) => write!(f, "M{i}_{}", c + 1),
            ColRef::W(i) => write!(f, "W{i}"),
        }
    }
}

/// Shape of one longitudinal dataset: stage count, baseline cardinality, and
/// mediator dimension per stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub stages: usize,
    pub baseline_card: u8,
    pub mediator_dims: Vec<usize>,
}

impl Layout {
    pub fn new(stages: usize, baseline_card: u8, mediator_dims: Vec<usize>) -> Result<Self> {
        let layout = Layout { stages, baseline_card, mediator_dims };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("layout needs at least one stage".into()));
        }
        if self.baseline_card < 2 {
            return Err(Error::Config("baseline cardinality must be at least 2".into()));
        }
        if self.mediator_dims.len() != self.stages {
            return Err(Error::Config(format!(
                "mediator_dims has {} entries for {} stages",
                self.mediator_dims.len(),
                self.stages
            )));
        }
        if self.mediator_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("every stage needs at least one mediator component".into()));
        }
        Ok(())
    }

    /// Total number of columns, including the final real-valued outcome.
    pub fn n_cols(&self) -> usize {
        1 + self.stages + self.mediator_dims.iter().sum::<usize>() + self.stages
    }

    /// Number of discrete columns (everything except the final outcome).
    pub fn n_discrete(&self) -> usize {
        self.n_cols() - 1
    }

    pub fn w0_col(&self) -> usize {
        0
    }

    /// Column of treatment `A_stage` (stage is 1-based).
    pub fn a_col(&self, stage: usize) -> usize {
        debug_assert!(stage >= 1 && stage <= self.stages);
        1 + self.mediator_dims[..stage - 1].iter().map(|d| d + 2).sum::<usize>()
    }

    /// Column of mediator component `M{stage}_{comp+1}`.
    pub fn m_col(&self, stage: usize, comp: usize) -> usize {
        debug_assert!(comp < self.mediator_dims[stage - 1]);
        self.a_col(stage) + 1 + comp
    }

    /// Column of outcome `W_stage`; `stage == stages` is the final outcome.
    pub fn w_col(&self, stage: usize) -> usize {
        self.a_col(stage) + 1 + self.mediator_dims[stage - 1]
    }

    pub fn outcome_col(&self) -> usize {
        self.w_col(self.stages)
    }

    /// Cardinality of a discrete column.
    pub fn col_card(&self, col: usize) -> u8 {
        if col == 0 {
            self.baseline_card
        } else {
            debug_assert!(col < self.n_discrete());
            2
        }
    }

    pub fn col_ref(&self, col: usize) -> ColRef {
        if col == 0 {
            return ColRef::W0;
        }
        for stage in 1..=self.stages {
            if col == self.a_col(stage) {
                return ColRef::A(stage);
            }
            let m0 = self.m_col(stage, 0);
            if col >= m0 && col < m0 + self.mediator_dims[stage - 1] {
                return ColRef::M(stage, col - m0);
            }
            if col == self.w_col(stage) {
                return ColRef::W(stage);
            }
        }
        unreachable!("column {col} out of range")
    }

    pub fn col_index(&self, col: ColRef) -> Result<usize> {
        let bad = |msg: String| Err(Error::ShapeMismatch(msg));
        match col {
            ColRef::W0 => Ok(0),
            ColRef::A(i) => {
                if i >= 1 && i <= self.stages {
                    Ok(self.a_col(i))
                } else {
                    bad(format!("no treatment A{i} in a {}-stage layout", self.stages))
                }
            }
            ColRef::M(i, c) => {
                if i >= 1 && i <= self.stages && c < self.mediator_dims[i - 1] {
                    Ok(self.m_col(i, c))
                } else {
                    bad(format!("no mediator component M{i}_{} in this layout", c + 1))
                }
            }
            ColRef::W(i) => {
                if i >= 1 && i <= self.stages {
                    Ok(self.w_col(i))
                } else {
                    bad(format!("no outcome W{i} in a {}-stage layout", self.stages))
                }
            }
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.n_cols()).map(|c| self.col_ref(c).to_string()).collect()
    }

    /// Columns observed before the stage-`stage` treatment decision.
    pub fn history_cols(&self, stage: usize) -> std::ops::Range<usize> {
        0..self.a_col(stage)
    }

    /// Number of joint configurations of the stage-`stage` history.
    pub fn stratum_count(&self, stage: usize) -> usize {
        self.history_cols(stage).map(|c| self.col_card(c) as usize).product()
    }

    /// Mixed-radix index of a history configuration; the earliest column is
    /// the most significant digit.
    pub fn stratum_of(&self, stage: usize, row: &[u8]) -> usize {
        let mut idx = 0usize;
        for c in self.history_cols(stage) {
            idx = idx * self.col_card(c) as usize + row[c] as usize;
        }
        idx
    }

    /// Inverse of [`Layout::stratum_of`]: the history values for a stratum.
    pub fn stratum_values(&self, stage: usize, mut idx: usize) -> Vec<u8> {
        let cols: Vec<usize> = self.history_cols(stage).collect();
        let mut vals = vec![0u8; cols.len()];
        for (slot, &c) in cols.iter().enumerate().rev() {
            let card = self.col_card(c) as usize;
            vals[slot] = (idx % card) as u8;
            idx /= card;
        }
        vals
    }

    /// Mixed-radix index over an arbitrary column range of a row buffer.
    pub fn config_index(&self, cols: std::ops::Range<usize>, row: &[u8]) -> usize {
        let mut idx = 0usize;
        for c in cols {
            idx = idx * self.col_card(c) as usize + row[c] as usize;
        }
        idx
    }

    /// Number of joint configurations over a column range.
    pub fn config_count(&self, cols: std::ops::Range<usize>) -> usize {
        cols.map(|c| self.col_card(c) as usize).product()
    }
}
