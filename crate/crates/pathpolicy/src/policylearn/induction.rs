//! Backward induction over history strata, and the plug-in learner built
//! on top of it.
//!
//! Induction runs against any [`LawProvider`], so the same code produces
//! exact optima from true laws and estimated optima from fitted models.
//! For path modes the provider is wrapped in the working-law view first;
//! treatments then keep their observational role and the recursion needs
//! no other changes.

use std::collections::HashMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ident::{LawProvider, Mode, TildeView};
use crate::layout::Layout;
use crate::policy::{Policy, Rule};
use crate::policylearn::config::ModelConfig;
use crate::policylearn::nuisance::{fit_nuisances, NuisanceSet};
use crate::policylearn::{Diagnostics, FitResult, Learner};

pub struct InducedPolicy {
    pub policy: Policy,
    /// Mean outcome of the policy in the world the mode describes.
    pub value: f64,
    /// `q[stage - 1][stratum] = [Q(h, 0), Q(h, 1)]`.
    pub q: Vec<Vec<[f64; 2]>>,
}

/// Optimal decision tables for the mode, by dynamic programming on the
/// provider's laws. Ties pick action 0.
pub fn induce_optimal(provider: &dyn LawProvider, mode: &Mode) -> Result<InducedPolicy> {
    mode.validate(provider.layout())?;
    match mode {
        Mode::Overall => induce(provider),
        Mode::Path { reference, mediators } => {
            let view = TildeView::new(provider, reference, mediators)?;
            induce(&view)
        }
    }
}

fn induce(p: &dyn LawProvider) -> Result<InducedPolicy> {
    let layout = p.layout().clone();
    let k = layout.stages;
    let mut q_tables: Vec<Vec<[f64; 2]>> = Vec::with_capacity(k);
    let mut rules: Vec<Rule> = Vec::with_capacity(k);
    let mut v_next: Vec<f64> = Vec::new();

    for stage in (1..=k).rev() {
        let strata = layout.stratum_count(stage);
        let mut q = vec![[0.0f64; 2]; strata];
        let mut actions = vec![0u8; strata];
        let mut row = vec![0u8; layout.n_discrete()];
        for s in 0..strata {
            let h = layout.stratum_values(stage, s);
            row[..h.len()].copy_from_slice(&h);
            for a in 0..2u8 {
                row[layout.a_col(stage)] = a;
                q[s][a as usize] = continuation(p, &layout, stage, &mut row, &v_next)?;
            }
            actions[s] = u8::from(q[s][1] > q[s][0]);
        }
        v_next = q.iter().map(|c| c[0].max(c[1])).collect();
        q_tables.insert(0, q);
        rules.insert(0, Rule::Table { actions });
    }

    let mut value = 0.0;
    for (s, v) in v_next.iter().enumerate() {
        value += p.w0_prob(s as u8)? * v;
    }
    Ok(InducedPolicy { policy: Policy::new(rules), value, q: q_tables })
}

/// `E[continuation | history, action]`: averages the stage mediators and,
/// before the last stage, the intermediate outcome into the next stage's
/// value function. At the last stage the continuation is the outcome mean.
fn continuation(
    p: &dyn LawProvider,
    layout: &Layout,
    stage: usize,
    row: &mut Vec<u8>,
    v_next: &[f64],
) -> Result<f64> {
    let dims = layout.mediator_dims[stage - 1];
    let mut total = 0.0;
    for mask in 0..(1usize << dims) {
        for c in 0..dims {
            row[layout.m_col(stage, c)] = ((mask >> c) & 1) as u8;
        }
        let mut wgt = 1.0;
        for c in 0..dims {
            let p1 = p.mediator_prob(stage, c, row)?;
            wgt *= if row[layout.m_col(stage, c)] == 1 { p1 } else { 1.0 - p1 };
        }
        if wgt == 0.0 {
            continue;
        }
        if stage == layout.stages {
            total += wgt * p.outcome_mean(row)?;
        } else {
            let p1 = p.intermediate_prob(stage, row)?;
            for w in 0..2u8 {
                let pw = if w == 1 { p1 } else { 1.0 - p1 };
                if pw == 0.0 {
                    continue;
                }
                row[layout.w_col(stage)] = w;
                total += wgt * pw * v_next[layout.stratum_of(stage + 1, row)];
            }
        }
    }
    Ok(total)
}

/// Every history stratum observed at least `min_stratum` times must contain
/// both treatment arms; otherwise fitted contrasts there are extrapolation.
pub fn check_treatment_positivity(data: &Dataset, min_stratum: usize) -> Result<()> {
    let layout = data.layout();
    let mut row = vec![0u8; layout.n_discrete()];
    let mut violations = Vec::new();
    for stage in 1..=layout.stages {
        let mut counts: HashMap<usize, [usize; 2]> = HashMap::new();
        for i in 0..data.n() {
            data.read_row(i, &mut row);
            let arm = counts.entry(layout.stratum_of(stage, &row)).or_default();
            arm[row[layout.a_col(stage)] as usize] += 1;
        }
        for (s, arms) in counts {
            if arms[0] + arms[1] >= min_stratum && (arms[0] == 0 || arms[1] == 0) {
                violations.push(format!(
                    "stage {stage} history {:?} has {} rows but only arm {}",
                    layout.stratum_values(stage, s),
                    arms[0] + arms[1],
                    u8::from(arms[0] == 0),
                ));
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        violations.sort();
        Err(Error::PositivityFailure(violations.join("; ")))
    }
}

/// Fit the outcome-side models and read the optimum off them.
pub fn plugin(data: &Dataset, mode: &Mode, config: &ModelConfig) -> Result<FitResult> {
    mode.validate(data.layout())?;
    check_treatment_positivity(data, config.positivity_min_stratum)?;
    let set = NuisanceSet { propensity: false, mediator: true, intermediate: true, outcome: true };
    let nuis = fit_nuisances(data, config, set)?;
    let induced = induce_optimal(&nuis, mode)?;
    Ok(FitResult {
        learner: Learner::Plugin,
        mode: mode.clone(),
        policy: induced.policy,
        value_estimate: induced.value,
        blip: None,
        models: super::named_models(&nuis),
        diagnostics: Diagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::TrueLaws;
    use crate::oracle;
    use crate::scm::simulate;
    use crate::scm::test_specs::{small, small_confounded};
    use crate::scm::MediatorSelector;

    fn path_mode() -> Mode {
        Mode::Path { reference: vec![0], mediators: MediatorSelector::All }
    }

    #[test]
    fn true_law_induction_matches_brute_force() {
        for spec in [small(), small_confounded()] {
            let laws = TrueLaws::new(&spec).unwrap();
            for mode in [Mode::Overall, path_mode()] {
                let induced = induce_optimal(&laws, &mode).unwrap();
                let brute = oracle::exact_optimal_policy(&spec, &mode).unwrap();
                assert!(
                    (induced.value - brute.value).abs() < 1e-12,
                    "{} vs {}",
                    induced.value,
                    brute.value
                );
                assert_eq!(induced.policy, brute.policy);
            }
        }
    }

    #[test]
    fn known_optima_come_out_exactly() {
        let laws = TrueLaws::new(&small()).unwrap();
        let overall = induce_optimal(&laws, &Mode::Overall).unwrap();
        assert!((overall.value - 3.375).abs() < 1e-12);
        let path = induce_optimal(&laws, &path_mode()).unwrap();
        assert!((path.value - 2.625).abs() < 1e-12);
        // stage-1 treatment contrasts at each baseline value
        assert!((overall.q[0][0][1] - overall.q[0][0][0] - 1.65).abs() < 1e-12);
        assert!((overall.q[0][1][1] - overall.q[0][1][0] - 1.60).abs() < 1e-12);
        assert!((path.q[0][0][1] - path.q[0][0][0] - 0.90).abs() < 1e-12);
        assert!((path.q[0][1][1] - path.q[0][1][0] - 0.85).abs() < 1e-12);
    }

    #[test]
    fn plugin_learns_the_optimum_from_data() {
        let spec = small();
        let data = simulate(&spec, 50_000, 401).unwrap();
        let layout = data.layout().clone();
        for (mode, truth) in [(Mode::Overall, 3.375), (path_mode(), 2.625)] {
            let fit = plugin(&data, &mode, &ModelConfig::default()).unwrap();
            assert_eq!(fit.policy.decide(&layout, 1, &[0, 0, 0]), 1);
            assert_eq!(fit.policy.decide(&layout, 1, &[1, 0, 0]), 1);
            assert!((fit.value_estimate - truth).abs() < 0.05, "{}", fit.value_estimate);
            assert!(fit.models.iter().any(|m| m.role == "outcome"));
            assert!(!fit.models.iter().any(|m| m.role.starts_with("propensity")));
        }
    }

    #[test]
    fn one_armed_strata_fail_the_positivity_check() {
        let layout = Layout { stages: 1, baseline_card: 2, mediator_dims: vec![1] };
        let mut w0 = Vec::new();
        let mut a = Vec::new();
        for i in 0..40 {
            w0.push(u8::from(i % 2 == 0));
            // arm 0 never appears when w0 = 1
            a.push(if i % 2 == 0 { u8::from(i % 4 == 0) } else { 1 });
        }
        let n = w0.len();
        let data = Dataset::new(layout, vec![w0, a, vec![0; n]], vec![0.0; n]).unwrap();
        let err = check_treatment_positivity(&data, 10).unwrap_err();
        assert!(matches!(err, Error::PositivityFailure(_)));
        assert!(err.to_string().contains("stage 1"));
        assert!(check_treatment_positivity(&data, 21).is_ok());
    }
}
