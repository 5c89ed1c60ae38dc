//! Structural model specifications and forward simulation.
//!
//! A spec fixes a longitudinal data-generating process: a baseline covariate,
//! then per stage a binary treatment, a vector of binary mediator components,
//! and an outcome. Intermediate outcomes are binary; the final one is
//! Gaussian. An optional hidden confounder feeds every outcome column (and
//! only those). All conditional tables are dense arrays indexed mixed-radix
//! over the parent columns in layout order, earliest column most significant;
//! for outcome columns the confounder value is the most significant digit.
//!
//! Treatments and mediators must respect a positivity floor so inverse
//! weighting is well defined downstream. Outcome tables may be degenerate.

pub(crate) mod intervention;
mod simulate;

pub use intervention::{EdgeAssignment, Intervention, MediatorSelector, PolicySource};
pub use simulate::{simulate, simulate_counterfactual};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, SpecViolation};
use crate::layout::Layout;

fn default_positivity_floor() -> f64 {
    0.01
}

/// Hidden confounder: a latent categorical root with edges into every
/// outcome column. It never appears in simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confounder {
    pub card: u8,
    /// Marginal distribution, length `card`.
    pub marginal: Vec<f64>,
}

/// Conditional tables for one stage.
///
/// `treatment[h]` is `p(A=1)` for history stratum `h`. `mediators[c][h*2+a]`
/// is `p(M_c=1)` given the history stratum and treatment; components are
/// independent given those. `intermediate` is `p(W=1)` indexed by confounder
/// value (most significant) then the configuration of every earlier column;
/// it is present exactly when the stage is not the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageLaw {
    pub treatment: Vec<f64>,
    pub mediators: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<Vec<f64>>,
}

/// Full data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSpec {
    pub stages: usize,
    pub baseline_card: u8,
    pub mediator_dims: Vec<usize>,
    #[serde(default = "default_positivity_floor")]
    pub positivity_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confounder: Option<Confounder>,
    /// `w0[u]` is the baseline distribution given confounder value `u`;
    /// a single row when there is no confounder.
    pub w0: Vec<Vec<f64>>,
    pub stage_laws: Vec<StageLaw>,
    /// Mean of the final outcome, indexed by confounder value (most
    /// significant) then the configuration of every discrete column.
    pub outcome_mean: Vec<f64>,
    pub outcome_sigma: f64,
}

static POINT_MASS: [f64; 1] = [1.0];

impl ScmSpec {
    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.stages, self.baseline_card, self.mediator_dims.clone())
    }

    pub fn u_card(&self) -> usize {
        self.confounder.as_ref().map_or(1, |c| c.card as usize)
    }

    pub fn u_marginal(&self) -> &[f64] {
        self.confounder.as_ref().map_or(&POINT_MASS, |c| &c.marginal)
    }

    /// `p(A_stage = 1)` for the history in `row`.
    pub fn treat_prob(&self, layout: &Layout, stage: usize, row: &[u8]) -> f64 {
        self.stage_laws[stage - 1].treatment[layout.stratum_of(stage, row)]
    }

    /// `p(M_{stage,comp} = 1)` for the history and treatment in `row`.
    pub fn mediator_prob(&self, layout: &Layout, stage: usize, comp: usize, row: &[u8]) -> f64 {
        let idx = layout.config_index(0..layout.a_col(stage) + 1, row);
        self.stage_laws[stage - 1].mediators[comp][idx]
    }

    /// `p(W_stage = 1)` for an intermediate outcome, given the confounder
    /// value and every earlier column in `row`.
    pub fn intermediate_prob(&self, layout: &Layout, stage: usize, u: usize, row: &[u8]) -> f64 {
        let cfgs = layout.config_count(0..layout.w_col(stage));
        let idx = layout.config_index(0..layout.w_col(stage), row);
        self.stage_laws[stage - 1].intermediate.as_ref().expect("validated intermediate")
            [u * cfgs + idx]
    }

    /// Mean of the final outcome given the confounder value and every
    /// discrete column in `row`.
    pub fn outcome_mean_at(&self, layout: &Layout, u: usize, row: &[u8]) -> f64 {
        let cfgs = layout.config_count(0..layout.outcome_col());
        let idx = layout.config_index(0..layout.outcome_col(), row);
        self.outcome_mean[u * cfgs + idx]
    }

    /// Short hex fingerprint of the spec's canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Check shapes and probability constraints, reporting every violation.
    pub fn validate(&self) -> Result<Layout> {
        let layout = self.layout()?;
        let mut bad = Vec::new();
        let floor = self.positivity_floor;
        if !(0.0..0.5).contains(&floor) {
            return Err(Error::Config(format!(
                "positivity floor {floor} must lie in [0, 0.5)"
            )));
        }
        if !self.outcome_sigma.is_finite() || self.outcome_sigma < 0.0 {
            return Err(Error::Config(format!(
                "outcome sigma {} must be finite and nonnegative",
                self.outcome_sigma
            )));
        }

        if let Some(c) = &self.confounder {
            if c.card < 2 {
                bad.push(SpecViolation::BadShape {
                    vertex: "U".into(),
                    detail: "confounder cardinality must be at least 2 (omit it otherwise)".into(),
                });
            } else if c.marginal.len() != c.card as usize {
                bad.push(SpecViolation::BadShape {
                    vertex: "U".into(),
                    detail: format!(
                        "marginal has {} entries for cardinality {}",
                        c.marginal.len(),
                        c.card
                    ),
                });
            } else {
                check_categorical("U", 0, &c.marginal, &mut bad);
            }
        }
        let u_card = self.u_card();

        if self.w0.len() != u_card {
            bad.push(SpecViolation::BadShape {
                vertex: "W0".into(),
                detail: format!("{} rows for {} confounder values", self.w0.len(), u_card),
            });
        } else {
            for (u, row) in self.w0.iter().enumerate() {
                if row.len() != self.baseline_card as usize {
                    bad.push(SpecViolation::BadShape {
                        vertex: "W0".into(),
                        detail: format!(
                            "row {u} has {} entries for cardinality {}",
                            row.len(),
                            self.baseline_card
                        ),
                    });
                } else {
                    check_categorical("W0", u, row, &mut bad);
                }
            }
        }

        if self.stage_laws.len() != self.stages {
            bad.push(SpecViolation::BadShape {
                vertex: "stage_laws".into(),
                detail: format!("{} entries for {} stages", self.stage_laws.len(), self.stages),
            });
            return Err(Error::InvalidSpec(bad));
        }

        for stage in 1..=self.stages {
            let law = &self.stage_laws[stage - 1];
            let strata = layout.stratum_count(stage);
            let a_name = format!("A{stage}");
            if law.treatment.len() != strata {
                bad.push(SpecViolation::BadShape {
                    vertex: a_name.clone(),
                    detail: format!("{} entries for {strata} history strata", law.treatment.len()),
                });
            } else {
                check_floored(&a_name, &law.treatment, floor, &mut bad);
            }

            let dim = self.mediator_dims[stage - 1];
            if law.mediators.len() != dim {
                bad.push(SpecViolation::BadShape {
                    vertex: format!("M{stage}"),
                    detail: format!("{} component tables for dimension {dim}", law.mediators.len()),
                });
            } else {
                for (c, table) in law.mediators.iter().enumerate() {
                    let name = format!("M{stage}_{}", c + 1);
                    if table.len() != strata * 2 {
                        bad.push(SpecViolation::BadShape {
                            vertex: name,
                            detail: format!(
                                "{} entries for {} (history, treatment) configurations",
                                table.len(),
                                strata * 2
                            ),
                        });
                    } else {
                        check_floored(&name, table, floor, &mut bad);
                    }
                }
            }

            let w_name = format!("W{stage}");
            if stage < self.stages {
                match &law.intermediate {
                    None => bad.push(SpecViolation::BadShape {
                        vertex: w_name,
                        detail: "intermediate outcome table missing".into(),
                    }),
                    Some(table) => {
                        let want = u_card * layout.config_count(0..layout.w_col(stage));
                        if table.len() != want {
                            bad.push(SpecViolation::BadShape {
                                vertex: w_name,
                                detail: format!("{} entries, expected {want}", table.len()),
                            });
                        } else {
                            check_bernoulli(&w_name, table, &mut bad);
                        }
                    }
                }
            } else if law.intermediate.is_some() {
                bad.push(SpecViolation::BadShape {
                    vertex: w_name,
                    detail: "last stage must not carry an intermediate table".into(),
                });
            }
        }

        let want = u_card * layout.config_count(0..layout.outcome_col());
        if self.outcome_mean.len() != want {
            bad.push(SpecViolation::BadShape {
                vertex: format!("W{}", self.stages),
                detail: format!("{} mean entries, expected {want}", self.outcome_mean.len()),
            });
        } else if let Some((row, v)) =
            self.outcome_mean.iter().enumerate().find(|(_, v)| !v.is_finite())
        {
            bad.push(SpecViolation::MalformedCpt {
                vertex: format!("W{}", self.stages),
                row,
                detail: format!("non-finite mean {v}"),
            });
        }

        if bad.is_empty() {
            Ok(layout)
        } else {
            Err(Error::InvalidSpec(bad))
        }
    }
}

fn check_categorical(vertex: &str, row: usize, probs: &[f64], bad: &mut Vec<SpecViolation>) {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        bad.push(SpecViolation::MalformedCpt {
            vertex: vertex.into(),
            row,
            detail: "probability outside [0, 1]".into(),
        });
        return;
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        bad.push(SpecViolation::MalformedCpt {
            vertex: vertex.into(),
            row,
            detail: format!("probabilities sum to {sum}, not 1"),
        });
    }
}

fn check_bernoulli(vertex: &str, probs: &[f64], bad: &mut Vec<SpecViolation>) {
    for (row, p) in probs.iter().enumerate() {
        if !p.is_finite() || *p < 0.0 || *p > 1.0 {
            bad.push(SpecViolation::MalformedCpt {
                vertex: vertex.into(),
                row,
                detail: format!("probability {p} outside [0, 1]"),
            });
        }
    }
}

fn check_floored(vertex: &str, probs: &[f64], floor: f64, bad: &mut Vec<SpecViolation>) {
    for (row, p) in probs.iter().enumerate() {
        if !p.is_finite() || *p < 0.0 || *p > 1.0 {
            bad.push(SpecViolation::MalformedCpt {
                vertex: vertex.into(),
                row,
                detail: format!("probability {p} outside [0, 1]"),
            });
        } else if *p < floor || *p > 1.0 - floor {
            bad.push(SpecViolation::Positivity { vertex: vertex.into(), row, prob: *p });
        }
    }
}


#[cfg(test)]
mod tests {
    use super::test_specs::{small, small_confounded};
    use super::*;

    #[test]
    fn valid_specs_pass() {
        assert!(small().validate().is_ok());
        assert!(small_confounded().validate().is_ok());
    }

    #[test]
    fn violations_are_collected_not_shortcircuited() {
        let mut spec = small();
        spec.stage_laws[0].treatment = vec![0.005, 0.5]; // breaches the floor
        spec.stage_laws[0].mediators[0][2] = 1.4; // outside [0, 1]
        spec.w0 = vec![vec![0.5, 0.6]]; // does not sum to 1
        let err = spec.validate().unwrap_err();
        match err {
            Error::InvalidSpec(list) => {
                assert_eq!(list.len(), 3, "{list:?}");
                assert!(list.iter().any(|v| matches!(v, SpecViolation::Positivity { .. })));
                assert!(matches!(&list[0], SpecViolation::MalformedCpt { vertex, .. } if vertex == "W0"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn shape_errors_name_the_vertex() {
        let mut spec = small();
        spec.stage_laws[0].mediators[0].pop();
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("M1_1"), "{err}");

        let mut spec = small();
        spec.stage_laws[0].intermediate = Some(vec![0.5; 8]);
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("last stage"), "{err}");
    }

    #[test]
    fn confounded_tables_need_the_u_dimension() {
        let mut spec = small_confounded();
        spec.outcome_mean.truncate(8);
        assert!(spec.validate().is_err());
        let mut spec = small_confounded();
        spec.w0.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn degenerate_outcome_tables_are_legal() {
        let mut spec = small();
        spec.w0 = vec![vec![1.0, 0.0]];
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn json_roundtrip_and_fingerprint() {
        let spec = small_confounded();
        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back: ScmSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.fingerprint(), back.fingerprint());
        assert_eq!(spec.fingerprint().len(), 16);
        assert_ne!(spec.fingerprint(), small().fingerprint());

        // defaulted floor and unknown keys
        let v: ScmSpec = serde_json::from_str(
            &json.replace("\"positivity_floor\": 0.01,", ""),
        )
        .unwrap();
        assert_eq!(v.positivity_floor, 0.01);
        assert!(serde_json::from_str::<ScmSpec>(&json.replace("\"stages\"", "\"stage\"")).is_err());
    }

    #[test]
    fn lookup_helpers_use_layout_order() {
        let spec = small();
        let layout = spec.validate().unwrap();
        // row = (W0, A1, M1_1)
        assert_eq!(spec.treat_prob(&layout, 1, &[1, 0, 0]), 0.7);
        assert_eq!(spec.mediator_prob(&layout, 1, 0, &[1, 0, 0]), 0.3);
        assert_eq!(spec.mediator_prob(&layout, 1, 0, &[0, 1, 0]), 0.7);
        assert_eq!(spec.outcome_mean_at(&layout, 0, &[1, 1, 1]), 4.0);
        assert_eq!(spec.outcome_mean_at(&layout, 0, &[0, 1, 1]), 3.5);
    }
}
