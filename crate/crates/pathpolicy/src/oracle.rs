//! Ground truth, derived without the identification layer.
//!
//! Values here come from brute force over the structural model itself:
//! [`exact_value`] sums the raw counterfactual mean over every configuration
//! of the hidden confounder and all observed columns, using only the spec's
//! structural tables, and [`exact_optimal_policy`] finds the best regime by
//! scoring every decision table in the class rather than by dynamic
//! programming. Agreement between these numbers and the identification
//! functionals or the learners is therefore evidence, not construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{Mode, TERM_BUDGET};
use crate::layout::{ColRef, Layout};
use crate::policy::{Policy, Rule};
use crate::scm::intervention::{EdgeSource, Plan};
use crate::scm::{Intervention, PolicySource, ScmSpec};

/// Cap on the number of decision tables a brute-force search may score.
pub const POLICY_BUDGET: u64 = 1 << 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactValueReport {
    pub value: f64,
    /// Leaves actually summed (zero-probability branches are pruned).
    pub terms: u64,
    pub spec_fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalPolicyReport {
    pub mode: Mode,
    pub policy: Policy,
    pub value: f64,
    pub policies_searched: u64,
    pub spec_fingerprint: String,
}

/// Mean outcome in the intervened world, by structural enumeration.
pub fn exact_value(spec: &ScmSpec, intervention: &Intervention) -> Result<ExactValueReport> {
    exact_value_budgeted(spec, intervention, TERM_BUDGET)
}

pub fn exact_value_budgeted(
    spec: &ScmSpec,
    intervention: &Intervention,
    budget: u128,
) -> Result<ExactValueReport> {
    let layout = spec.validate()?;
    let plan = intervention.lower(&layout)?;
    check_terms(spec, &layout, &plan, budget)?;
    let (value, terms) = run(spec, &layout, &plan);
    Ok(ExactValueReport { value, terms, spec_fingerprint: spec.fingerprint() })
}

/// Best decision-table regime for the mode, found by scoring every table.
///
/// Ties go to the candidate earliest in enumeration order, which maps every
/// tied stratum to action 0.
pub fn exact_optimal_policy(spec: &ScmSpec, mode: &Mode) -> Result<OptimalPolicyReport> {
    exact_optimal_policy_budgeted(spec, mode, POLICY_BUDGET)
}

pub fn exact_optimal_policy_budgeted(
    spec: &ScmSpec,
    mode: &Mode,
    policy_budget: u64,
) -> Result<OptimalPolicyReport> {
    let layout = spec.validate()?;
    mode.validate(&layout)?;
    let bits: usize = (1..=layout.stages).map(|s| layout.stratum_count(s)).sum();
    if bits >= 63 {
        return Err(Error::CardinalityOverflow { required: u128::MAX, budget: policy_budget.into() });
    }
    let total = 1u64 << bits;
    if u128::from(total) > u128::from(policy_budget) {
        return Err(Error::CardinalityOverflow {
            required: total.into(),
            budget: policy_budget.into(),
        });
    }

    // One lowering shared by all candidates; only the decision rule varies.
    let base = mode
        .intervention(&PolicySource::Policy(Policy::constant(&layout, 0)))
        .lower(&layout)?;
    check_terms(spec, &layout, &base, TERM_BUDGET)?;

    let best = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut plan = base.clone();
            plan.policy = Some(decode_policy(&layout, idx));
            (run(spec, &layout, &plan).0, idx)
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .expect("at least one candidate");

    Ok(OptimalPolicyReport {
        mode: mode.clone(),
        policy: decode_policy(&layout, best.1),
        value: best.0,
        policies_searched: total,
        spec_fingerprint: spec.fingerprint(),
    })
}

/// Decision table for candidate `idx`; bit 0 is stage 1, stratum 0.
fn decode_policy(layout: &Layout, mut idx: u64) -> Policy {
    let rules = (1..=layout.stages)
        .map(|stage| {
            let actions = (0..layout.stratum_count(stage))
                .map(|_| {
                    let a = (idx & 1) as u8;
                    idx >>= 1;
                    a
                })
                .collect();
            Rule::Table { actions }
        })
        .collect();
    Policy::new(rules)
}

fn check_terms(spec: &ScmSpec, layout: &Layout, plan: &Plan, budget: u128) -> Result<()> {
    let mut required =
        (spec.u_card() as u128).saturating_mul(u128::from(layout.baseline_card));
    for stage in 1..=layout.stages {
        let branches = match plan.stage(stage) {
            None => 2,
            Some(sp) if sp.needs_natural => 2,
            Some(_) => 1,
        };
        let binaries = layout.mediator_dims[stage - 1] + usize::from(stage < layout.stages);
        required = required.saturating_mul(branches).saturating_mul(1u128 << binaries.min(127));
    }
    if required > budget {
        return Err(Error::CardinalityOverflow { required, budget });
    }
    Ok(())
}

#[derive(Clone, Copy, Default)]
struct StageValues {
    natural: Option<u8>,
    decision: Option<u8>,
}

impl StageValues {
    fn get(&self, source: EdgeSource) -> u8 {
        match source {
            EdgeSource::Natural => self.natural.expect("natural value in scope"),
            EdgeSource::Fixed(v) => v,
            EdgeSource::Decision => self.decision.expect("decision in scope"),
        }
    }
}

struct StructEnum<'a> {
    spec: &'a ScmSpec,
    layout: &'a Layout,
    plan: &'a Plan,
    u: usize,
    row: Vec<u8>,
    view: Vec<u8>,
    values: Vec<StageValues>,
    sum: f64,
    carry: f64,
    terms: u64,
}

fn run(spec: &ScmSpec, layout: &Layout, plan: &Plan) -> (f64, u64) {
    let mut e = StructEnum {
        spec,
        layout,
        plan,
        u: 0,
        row: vec![0; layout.n_discrete()],
        view: vec![0; layout.n_discrete()],
        values: vec![StageValues::default(); layout.stages],
        sum: 0.0,
        carry: 0.0,
        terms: 0,
    };
    let marginal = spec.u_marginal().to_vec();
    for (u, &pu) in marginal.iter().enumerate() {
        e.u = u;
        e.descend(0, pu);
    }
    (e.sum, e.terms)
}

impl StructEnum<'_> {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn build_view(&mut self, target: usize) {
        self.view[..target].copy_from_slice(&self.row[..target]);
        for stage in 1..=self.layout.stages {
            let a = self.layout.a_col(stage);
            if a >= target {
                break;
            }
            if let Some(sp) = self.plan.stage(stage) {
                self.view[a] = self.values[stage - 1].get(sp.edge_into(target));
            }
        }
    }

    fn descend(&mut self, col: usize, weight: f64) {
        if weight == 0.0 {
            return;
        }
        if col == self.layout.n_discrete() {
            self.build_view(self.layout.outcome_col());
            let mean = self.spec.outcome_mean_at(self.layout, self.u, &self.view);
            self.add(weight * mean);
            self.terms += 1;
            return;
        }
        match self.layout.col_ref(col) {
            ColRef::W0 => {
                for v in 0..self.layout.baseline_card {
                    self.row[0] = v;
                    self.descend(1, weight * self.spec.w0[self.u][v as usize]);
                }
            }
            ColRef::A(stage) => {
                self.build_view(col);
                match self.plan.stage(stage) {
                    None => {
                        let p1 = self.spec.treat_prob(self.layout, stage, &self.view);
                        for a in 0..2u8 {
                            self.row[col] = a;
                            self.descend(col + 1, weight * if a == 1 { p1 } else { 1.0 - p1 });
                        }
                    }
                    Some(sp) => {
                        let decision = sp.needs_decision.then(|| {
                            self.plan.policy.as_ref().expect("policy").decide(
                                self.layout,
                                stage,
                                &self.view,
                            )
                        });
                        let emit = sp.edge_into(self.layout.w_col(stage));
                        if sp.needs_natural {
                            let p1 = self.spec.treat_prob(self.layout, stage, &self.view);
                            for a in 0..2u8 {
                                let vals = StageValues { natural: Some(a), decision };
                                self.values[stage - 1] = vals;
                                self.row[col] = vals.get(emit);
                                self.descend(col + 1, weight * if a == 1 { p1 } else { 1.0 - p1 });
                            }
                        } else {
                            let vals = StageValues { natural: None, decision };
                            self.values[stage - 1] = vals;
                            self.row[col] = vals.get(emit);
                            self.descend(col + 1, weight);
                        }
                    }
                }
            }
            ColRef::M(stage, comp) => {
                self.build_view(col);
                let p1 = self.spec.mediator_prob(self.layout, stage, comp, &self.view);
                for m in 0..2u8 {
                    self.row[col] = m;
                    self.descend(col + 1, weight * if m == 1 { p1 } else { 1.0 - p1 });
                }
            }
            ColRef::W(stage) => {
                self.build_view(col);
                let p1 = self.spec.intermediate_prob(self.layout, stage, self.u, &self.view);
                for w in 0..2u8 {
                    self.row[col] = w;
                    self.descend(col + 1, weight * if w == 1 { p1 } else { 1.0 - p1 });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{self, TrueLaws};
    use crate::scm::test_specs::{small, small_confounded};
    use crate::scm::MediatorSelector;

    #[test]
    fn structural_values_match_hand_sums() {
        let spec = small();
        let layout = spec.validate().unwrap();
        let one = exact_value(&spec, &Intervention::fixed(&layout, &[1]).unwrap()).unwrap();
        assert!((one.value - 3.375).abs() < 1e-12);
        assert_eq!(one.terms, 4);
        assert_eq!(one.spec_fingerprint, spec.fingerprint());
        let obs = exact_value(&spec, &Intervention::none()).unwrap();
        assert!((obs.value - 2.5575).abs() < 1e-12);
    }

    #[test]
    fn confounded_value_enumerates_the_confounder() {
        let spec = small_confounded();
        let layout = spec.validate().unwrap();
        let one = exact_value(&spec, &Intervention::fixed(&layout, &[1]).unwrap()).unwrap();
        assert!((one.value - 2.775).abs() < 1e-12, "{}", one.value);
        assert_eq!(one.terms, 8);
    }

    #[test]
    fn structural_and_identified_values_agree() {
        // the same quantities through completely different laws
        for spec in [small(), small_confounded()] {
            let laws = TrueLaws::new(&spec).unwrap();
            let layout = spec.validate().unwrap();
            let ivs = vec![
                Intervention::none(),
                Intervention::fixed(&layout, &[0]).unwrap(),
                Intervention::Path {
                    policy: PolicySource::Observational,
                    reference: vec![1],
                    mediators: MediatorSelector::All,
                },
            ];
            for iv in ivs {
                let structural = exact_value(&spec, &iv).unwrap().value;
                let identified = ident::interventional_mean(&laws, &iv).unwrap();
                assert!((structural - identified).abs() < 1e-12, "{structural} vs {identified}");
            }
        }
    }

    #[test]
    fn brute_force_finds_the_known_optima() {
        let spec = small();
        let overall = exact_optimal_policy(&spec, &Mode::Overall).unwrap();
        assert!((overall.value - 3.375).abs() < 1e-12);
        assert_eq!(overall.policies_searched, 4);
        let layout = spec.validate().unwrap();
        assert_eq!(overall.policy.decide(&layout, 1, &[0, 0, 0]), 1);
        assert_eq!(overall.policy.decide(&layout, 1, &[1, 0, 0]), 1);

        let path = exact_optimal_policy(
            &spec,
            &Mode::Path { reference: vec![0], mediators: MediatorSelector::All },
        )
        .unwrap();
        assert!((path.value - 2.625).abs() < 1e-12);
        assert_eq!(path.policy.decide(&layout, 1, &[0, 0, 0]), 1);
        assert_eq!(path.policy.decide(&layout, 1, &[1, 0, 0]), 1);
    }

    #[test]
    fn ties_resolve_to_the_all_zero_side() {
        // outcome ignores treatment and mediator entirely
        let mut spec = small();
        spec.outcome_mean = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        let report = exact_optimal_policy(&spec, &Mode::Overall).unwrap();
        let layout = spec.validate().unwrap();
        assert_eq!(report.policy.decide(&layout, 1, &[0, 0, 0]), 0);
        assert_eq!(report.policy.decide(&layout, 1, &[1, 0, 0]), 0);
        assert!((report.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn policy_budget_is_enforced() {
        let spec = small();
        let err = exact_optimal_policy_budgeted(&spec, &Mode::Overall, 2).unwrap_err();
        assert!(matches!(err, Error::CardinalityOverflow { required: 4, budget: 2 }));
    }
}
