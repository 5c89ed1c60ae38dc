//! Deterministic treatment rules.
//!
//! A policy holds one rule per stage; each rule maps the observed history
//! before that stage's treatment to an action in {0, 1}. Rules come in three
//! shapes: an explicit table over history strata, a threshold on a single
//! column, or the sign of a linear score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::layout::{ColRef, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Treat when the column value is strictly below the cutoff.
    Below,
    /// Treat when the column value is strictly above the cutoff.
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Action per history stratum, indexed by [`Layout::stratum_of`].
    Table { actions: Vec<u8> },
    /// `I{col < cutoff}` or `I{col > cutoff}`.
    Threshold { column: ColRef, cutoff: f64, direction: Direction },
    /// `I{w'x > 0}` over a feature map of the history.
    LinearScore { features: FeatureMap, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// One rule per stage, first stage first.
    pub rules: Vec<Rule>,
}

impl Policy {
    pub fn new(rules: Vec<Rule>) -> Self {
        Policy { rules }
    }

    /// The policy taking action `a` at every stage and history.
    pub fn constant(layout: &Layout, a: u8) -> Self {
        let rules = (1..=layout.stages)
            .map(|s| Rule::Table { actions: vec![a; layout.stratum_count(s)] })
            .collect();
        Policy { rules }
    }

    pub fn validate(&self, layout: &Layout) -> Result<()> {
        if self.rules.len() != layout.stages {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} rules for {} stages",
                self.rules.len(),
                layout.stages
            )));
        }
        for (i, rule) in self.rules.iter().enumerate() {
            let stage = i + 1;
            match rule {
                Rule::Table { actions } => {
                    if actions.len() != layout.stratum_count(stage) {
                        return Err(Error::ShapeMismatch(format!(
                            "stage {stage} table has {} entries for {} strata",
                            actions.len(),
                            layout.stratum_count(stage)
                        )));
                    }
                    if actions.iter().any(|&a| a > 1) {
                        return Err(Error::ShapeMismatch(format!(
                            "stage {stage} table contains a non-binary action"
                        )));
                    }
                }
                Rule::Threshold { column, .. } => {
                    let idx = layout.col_index(*column)?;
                    if idx >= layout.a_col(stage) {
                        return Err(Error::ShapeMismatch(format!(
                            "stage {stage} threshold reads {column}, which is not in its history"
                        )));
                    }
                }
                Rule::LinearScore { features, weights } => {
                    features.validate(layout)?;
                    if weights.len() != features.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "stage {stage} score has {} weights for {} features",
                            weights.len(),
                            features.len()
                        )));
                    }
                    // every feature must be measurable at decision time
                    let history_end = layout.a_col(stage);
                    let reads_future = features.terms.iter().any(|t| {
                        let cols: Vec<ColRef> = match t {
                            crate::features::Term::Intercept => vec![],
                            crate::features::Term::Single(f) => vec![f.col],
                            crate::features::Term::Pair(a, b) => vec![a.col, b.col],
                        };
                        cols.iter().any(|c| layout.col_index(*c).unwrap() >= history_end)
                    });
                    if reads_future {
                        return Err(Error::ShapeMismatch(format!(
                            "stage {stage} score reads columns after its decision point"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Action at `stage` (1-based) for a row whose history columns are filled.
    pub fn decide(&self, layout: &Layout, stage: usize, row: &[u8]) -> u8 {
        match &self.rules[stage - 1] {
            Rule::Table { actions } => actions[layout.stratum_of(stage, row)],
            Rule::Threshold { column, cutoff, direction } => {
                let v = f64::from(row[layout.col_index(*column).expect("validated")]);
                match direction {
                    Direction::Below => u8::from(v < *cutoff),
                    Direction::Above => u8::from(v > *cutoff),
                }
            }
            Rule::LinearScore { features, weights } => {
                u8::from(features.dot(layout, row, weights) > 0.0)
            }
        }
    }

    /// Compact human-readable form, e.g. `f=1` for an always-treat table.
    pub fn describe(&self, layout: &Layout) -> String {
        let parts: Vec<String> = self
            .rules
            .iter()
            .enumerate()
            .map(|(i, rule)| match rule {
                Rule::Table { actions } => {
                    if actions.iter().all(|&a| a == 1) {
                        "f=1".to_string()
                    } else if actions.iter().all(|&a| a == 0) {
                        "f=0".to_string()
                    } else {
                        let _ = layout;
                        format!(
                            "table[{}]",
                            actions.iter().map(|a| a.to_string()).collect::<String>()
                        )
                    }
                }
                Rule::Threshold { column, cutoff, direction } => {
                    let op = match direction {
                        Direction::Below => "<",
                        Direction::Above => ">",
                    };
                    format!("I{{{column} {op} {cutoff}}}")
                }
                Rule::LinearScore { .. } => format!("score(stage {})", i + 1),
            })
            .collect();
        parts.join("; ")
    }
}
