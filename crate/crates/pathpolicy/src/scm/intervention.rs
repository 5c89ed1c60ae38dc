//! Interventions on treatment edges.
//!
//! Every intervention here is an assignment to the edges leaving treatment
//! vertices. A plain treatment intervention carries one value per stage on
//! all of that stage's outgoing edges; an edge intervention assigns values
//! edge by edge; a path intervention routes a rule's decisions everywhere
//! except into chosen mediator components, which receive a fixed reference
//! history instead. If any edge out of a treatment is assigned, all of them
//! must be, so downstream vertices never mix intervened and natural values
//! of the same treatment.
//!
//! The treatment column emitted in counterfactual data is, by convention,
//! the value carried on the edge into the same stage's outcome.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{ColRef, Layout};
use crate::policy::Policy;

/// Where intervened treatment values come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    /// Draw each treatment from the observed mechanism. As a treatment
    /// intervention this is a no-op; inside a path intervention it leaves
    /// treatments observational while mediators see the reference.
    Observational,
    /// Decide each treatment from the realized history.
    Policy(Policy),
}

impl PolicySource {
    pub fn validate(&self, layout: &Layout) -> Result<()> {
        match self {
            PolicySource::Observational => Ok(()),
            PolicySource::Policy(p) => p.validate(layout),
        }
    }
}

/// Which mediator components receive the reference history under a path
/// intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediatorSelector {
    All,
    /// Pairs `(stage, component)`; stages are 1-based, components 0-based.
    Components(Vec<(usize, usize)>),
}

impl MediatorSelector {
    pub fn validate(&self, layout: &Layout) -> Result<()> {
        if let MediatorSelector::Components(list) = self {
            let mut seen = std::collections::HashSet::new();
            for &(stage, comp) in list {
                layout.col_index(ColRef::M(stage, comp))?;
                if !seen.insert((stage, comp)) {
                    return Err(Error::InterventionMismatch(format!(
                        "mediator component M{stage}_{} selected twice",
                        comp + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn selects(&self, stage: usize, comp: usize) -> bool {
        match self {
            MediatorSelector::All => true,
            MediatorSelector::Components(list) => list.contains(&(stage, comp)),
        }
    }
}

/// Value carried on the edge from `A{from_stage}` to column `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeAssignment {
    pub from_stage: usize,
    pub to: ColRef,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intervention {
    /// Set every stage's treatment; all outgoing edges carry the decision.
    Treatments(PolicySource),
    /// Assign edge values directly. Stages with no assigned edges stay
    /// natural; stages with any must have every outgoing edge assigned.
    Edges(Vec<EdgeAssignment>),
    /// Route `policy` decisions along all edges except those into selected
    /// mediator components, which see the fixed `reference` history.
    Path { policy: PolicySource, reference: Vec<u8>, mediators: MediatorSelector },
}

impl Intervention {
    /// The do-nothing intervention; simulating under it reproduces the
    /// observational draw exactly.
    pub fn none() -> Self {
        Intervention::Treatments(PolicySource::Observational)
    }

    /// `do(A1 = actions[0], ..., AK = actions[K-1])`.
    pub fn fixed(layout: &Layout, actions: &[u8]) -> Result<Self> {
        if actions.len() != layout.stages {
            return Err(Error::InterventionMismatch(format!(
                "{} actions for {} stages",
                actions.len(),
                layout.stages
            )));
        }
        let rules = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| crate::policy::Rule::Table {
                actions: vec![a; layout.stratum_count(i + 1)],
            })
            .collect();
        Ok(Intervention::Treatments(PolicySource::Policy(Policy::new(rules))))
    }

    pub fn validate(&self, layout: &Layout) -> Result<()> {
        self.lower(layout).map(|_| ())
    }

    /// Check the intervention against a layout and resolve it to one edge
    /// function per stage and target column.
    pub(crate) fn lower(&self, layout: &Layout) -> Result<Plan> {
        let mut plan = Plan { stages: vec![None; layout.stages], policy: None };
        match self {
            Intervention::Treatments(source) => {
                source.validate(layout)?;
                let edge = match source {
                    PolicySource::Observational => EdgeSource::Natural,
                    PolicySource::Policy(p) => {
                        plan.policy = Some(p.clone());
                        EdgeSource::Decision
                    }
                };
                for (i, s) in plan.stages.iter_mut().enumerate() {
                    let per_col = vec![edge; layout.n_cols()];
                    *s = Some(StagePlan::new(per_col, layout.a_col(i + 1) + 1));
                }
            }
            Intervention::Edges(assignments) => {
                let mut per_stage: Vec<Option<Vec<Option<u8>>>> = vec![None; layout.stages];
                for a in assignments {
                    if a.from_stage < 1 || a.from_stage > layout.stages {
                        return Err(Error::InterventionMismatch(format!(
                            "no treatment A{} in a {}-stage layout",
                            a.from_stage, layout.stages
                        )));
                    }
                    let to = layout.col_index(a.to).map_err(|_| {
                        Error::InterventionMismatch(format!("edge target {} does not exist", a.to))
                    })?;
                    if to <= layout.a_col(a.from_stage) {
                        return Err(Error::InterventionMismatch(format!(
                            "{} is not downstream of A{}",
                            a.to, a.from_stage
                        )));
                    }
                    if a.value > 1 {
                        return Err(Error::InterventionMismatch(format!(
                            "edge value {} is not a binary treatment level",
                            a.value
                        )));
                    }
                    let slots = per_stage[a.from_stage - 1]
                        .get_or_insert_with(|| vec![None; layout.n_cols()]);
                    if slots[to].replace(a.value).is_some() {
                        return Err(Error::InterventionMismatch(format!(
                            "edge A{} -> {} assigned twice",
                            a.from_stage, a.to
                        )));
                    }
                }
                for (i, slots) in per_stage.into_iter().enumerate() {
                    let Some(slots) = slots else { continue };
                    let stage = i + 1;
                    let missing: Vec<String> = (layout.a_col(stage) + 1..layout.n_cols())
                        .filter(|&c| slots[c].is_none())
                        .map(|c| layout.col_ref(c).to_string())
                        .collect();
                    if !missing.is_empty() {
                        return Err(Error::InterventionMismatch(format!(
                            "stage {stage} assigns some edges but not those into {}",
                            missing.join(", ")
                        )));
                    }
                    let per_col = slots
                        .into_iter()
                        .map(|v| v.map_or(EdgeSource::Natural, EdgeSource::Fixed))
                        .collect();
                    plan.stages[i] = Some(StagePlan::new(per_col, layout.a_col(stage) + 1));
                }
            }
            Intervention::Path { policy, reference, mediators } => {
                policy.validate(layout)?;
                mediators.validate(layout)?;
                if reference.len() != layout.stages {
                    return Err(Error::InterventionMismatch(format!(
                        "reference has {} entries for {} stages",
                        reference.len(),
                        layout.stages
                    )));
                }
                if reference.iter().any(|&a| a > 1) {
                    return Err(Error::InterventionMismatch(
                        "reference treatments must be binary".into(),
                    ));
                }
                let main = match policy {
                    PolicySource::Observational => EdgeSource::Natural,
                    PolicySource::Policy(p) => {
                        plan.policy = Some(p.clone());
                        EdgeSource::Decision
                    }
                };
                for from in 1..=layout.stages {
                    let mut per_col = vec![main; layout.n_cols()];
                    for stage in from..=layout.stages {
                        for comp in 0..layout.mediator_dims[stage - 1] {
                            if mediators.selects(stage, comp) {
                                per_col[layout.m_col(stage, comp)] =
                                    EdgeSource::Fixed(reference[from - 1]);
                            }
                        }
                    }
                    plan.stages[from - 1] = Some(StagePlan::new(per_col, layout.a_col(from) + 1));
                }
            }
        }
        Ok(plan)
    }
}

/// Value source for one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EdgeSource {
    /// The treatment's own natural draw.
    Natural,
    Fixed(u8),
    /// The plan policy's decision at this stage.
    Decision,
}

/// Edge functions for one intervened treatment.
#[derive(Debug, Clone)]
pub(crate) struct StagePlan {
    /// Value presented to each downstream column, indexed by column.
    per_col: Vec<EdgeSource>,
    pub needs_natural: bool,
    pub needs_decision: bool,
}

impl StagePlan {
    /// `first_target` is the first column downstream of the treatment; flag
    /// computation ignores the unused upstream slots.
    fn new(per_col: Vec<EdgeSource>, first_target: usize) -> Self {
        let needs_natural = per_col[first_target..].contains(&EdgeSource::Natural);
        let needs_decision = per_col[first_target..].contains(&EdgeSource::Decision);
        StagePlan { per_col, needs_natural, needs_decision }
    }

    pub fn edge_into(&self, col: usize) -> EdgeSource {
        self.per_col[col]
    }
}

/// A validated intervention, resolved per stage.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    /// `None` marks a stage left natural (its vertex transmits itself).
    pub stages: Vec<Option<StagePlan>>,
    pub policy: Option<Policy>,
}

impl Plan {
    pub fn stage(&self, stage: usize) -> Option<&StagePlan> {
        self.stages[stage - 1].as_ref()
    }
}
