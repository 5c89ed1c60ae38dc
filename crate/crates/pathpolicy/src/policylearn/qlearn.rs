//! Recursive stage-value regressions.
//!
//! Working backwards, each stage regresses the next stage's fitted value
//! (the outcome itself at the last stage) on history and treatment. In a
//! path mode every stage's regression is reweighted by the density ratio
//! that moves the observed mediators from their observed treatment history
//! to the reference one; with those weights the regressions target the
//! working-law value functions directly and no mediator or intermediate
//! law needs to be integrated over.

use crate::dataset::Dataset;
use crate::error::Result;
use crate::ident::Mode;
use crate::layout::Layout;
use crate::models::{fit_linear, FittedModel};
use crate::policy::{Policy, Rule};
use crate::policylearn::config::ModelConfig;
use crate::policylearn::induction::check_treatment_positivity;
use crate::policylearn::nuisance::{fit_nuisances, NuisanceModels, NuisanceSet};
use crate::policylearn::{
    mediator_ratio, named_models, Diagnostics, FitResult, Learner, NamedModel, WeightAudit,
};

pub fn q_learn(data: &Dataset, mode: &Mode, config: &ModelConfig) -> Result<FitResult> {
    let layout = data.layout().clone();
    mode.validate(&layout)?;
    check_treatment_positivity(data, config.positivity_min_stratum)?;

    let mediator_nuis: Option<NuisanceModels> = match mode {
        Mode::Path { .. } if !config.force_unit_weights => {
            let set = NuisanceSet { mediator: true, ..NuisanceSet::default() };
            Some(fit_nuisances(data, config, set)?)
        }
        _ => None,
    };

    let mut audit = WeightAudit::new(config);
    let mut pseudo: Vec<f64> = data.y().to_vec();
    let mut q_models: Vec<Option<FittedModel>> = vec![None; layout.stages];
    let mut row = vec![0u8; layout.n_discrete()];
    let mut scratch = Vec::new();
    let mut value_estimate = 0.0;

    for stage in (1..=layout.stages).rev() {
        let weights = match (&mediator_nuis, mode) {
            (Some(nuis), Mode::Path { reference, mediators }) => {
                let mut w = Vec::with_capacity(data.n());
                for i in 0..data.n() {
                    data.read_row(i, &mut row);
                    let ratio = mediator_ratio(
                        nuis, &layout, &row, stage, reference, mediators, &mut audit, &mut scratch,
                    )?;
                    w.push(audit.finish(ratio));
                }
                Some(w)
            }
            _ => None,
        };

        let map = config.q_map(&layout, stage)?;
        let fit = fit_linear(&layout, &map, data, &pseudo, weights.as_deref(), &config.fit)?;

        // fitted value at the observed history feeds the previous stage
        let a_col = layout.a_col(stage);
        let fitted_value = |row: &mut Vec<u8>| {
            let keep = row[a_col];
            row[a_col] = 0;
            let q0 = fit.predict_row(&layout, row);
            row[a_col] = 1;
            let q1 = fit.predict_row(&layout, row);
            row[a_col] = keep;
            q0.max(q1)
        };
        if stage > 1 {
            for i in 0..data.n() {
                data.read_row(i, &mut row);
                pseudo[i] = fitted_value(&mut row);
            }
        } else {
            let mut total = 0.0;
            for i in 0..data.n() {
                data.read_row(i, &mut row);
                total += fitted_value(&mut row);
            }
            value_estimate = total / data.n() as f64;
        }
        q_models[stage - 1] = Some(fit);
    }

    let policy = policy_from_q(&layout, &q_models);
    let mut models: Vec<NamedModel> = q_models
        .into_iter()
        .enumerate()
        .map(|(i, m)| NamedModel { role: format!("q[{}]", i + 1), model: m.expect("fitted") })
        .collect();
    if let Some(nuis) = &mediator_nuis {
        models.extend(named_models(nuis));
    }

    let mut diagnostics: Diagnostics = audit.into_diagnostics();
    if config.force_unit_weights && matches!(mode, Mode::Path { .. }) {
        diagnostics.notes.push("mediator reweighting disabled by configuration".into());
    }

    Ok(FitResult {
        learner: Learner::QLearn,
        mode: mode.clone(),
        policy,
        value_estimate,
        blip: None,
        models,
        diagnostics,
    })
}

fn policy_from_q(layout: &Layout, q_models: &[Option<FittedModel>]) -> Policy {
    let mut rules = Vec::with_capacity(layout.stages);
    for stage in 1..=layout.stages {
        let fit = q_models[stage - 1].as_ref().expect("fitted");
        let mut actions = Vec::with_capacity(layout.stratum_count(stage));
        let mut row = vec![0u8; layout.n_discrete()];
        for s in 0..layout.stratum_count(stage) {
            let h = layout.stratum_values(stage, s);
            row[..h.len()].copy_from_slice(&h);
            row[layout.a_col(stage)] = 0;
            let q0 = fit.predict_row(layout, &row);
            row[layout.a_col(stage)] = 1;
            let q1 = fit.predict_row(layout, &row);
            actions.push(u8::from(q1 > q0));
        }
        rules.push(Rule::Table { actions });
    }
    Policy::new(rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::simulate;
    use crate::scm::test_specs::small;
    use crate::scm::MediatorSelector;

    fn path_mode() -> Mode {
        Mode::Path { reference: vec![0], mediators: MediatorSelector::All }
    }

    fn coef_map(fit: &FitResult, role: &str) -> Vec<f64> {
        fit.models.iter().find(|m| m.role == role).unwrap().model.coef.clone()
    }

    #[test]
    fn overall_stage_values_recover_the_known_surface() {
        let spec = small();
        let data = simulate(&spec, 60_000, 101).unwrap();
        let layout = data.layout().clone();
        let fit = q_learn(&data, &Mode::Overall, &ModelConfig::default()).unwrap();
        // design order is [1, W0, A1, A1*W0]
        let truth = [1.4, 0.7, 1.65, -0.05];
        let coef = coef_map(&fit, "q[1]");
        for (j, t) in truth.iter().enumerate() {
            assert!((coef[j] - t).abs() < 0.07, "coord {j}: {coef:?}");
        }
        assert!((fit.value_estimate - 3.375).abs() < 0.05, "{}", fit.value_estimate);
        assert_eq!(fit.policy.decide(&layout, 1, &[0, 0, 0]), 1);
        assert_eq!(fit.policy.decide(&layout, 1, &[1, 0, 0]), 1);
        assert_eq!(fit.diagnostics.max_weight, 0.0);
    }

    #[test]
    fn reweighting_shifts_the_treatment_contrast_to_the_working_law() {
        let spec = small();
        let data = simulate(&spec, 60_000, 103).unwrap();
        let layout = data.layout().clone();
        let fit = q_learn(&data, &path_mode(), &ModelConfig::default()).unwrap();
        let truth = [1.4, 0.7, 0.9, -0.05];
        let coef = coef_map(&fit, "q[1]");
        for (j, t) in truth.iter().enumerate() {
            assert!((coef[j] - t).abs() < 0.07, "coord {j}: {coef:?}");
        }
        assert!((fit.value_estimate - 2.625).abs() < 0.05, "{}", fit.value_estimate);
        assert_eq!(fit.policy.decide(&layout, 1, &[0, 0, 0]), 1);
        assert!(fit.diagnostics.max_weight >= 1.0);
        assert!(fit.models.iter().any(|m| m.role == "mediator[1][1]"));
    }

    #[test]
    fn unit_weights_fall_back_to_the_overall_contrast() {
        let spec = small();
        let data = simulate(&spec, 60_000, 103).unwrap();
        let cfg = ModelConfig { force_unit_weights: true, ..ModelConfig::default() };
        let fit = q_learn(&data, &path_mode(), &cfg).unwrap();
        let coef = coef_map(&fit, "q[1]");
        // without the ratio the contrast reverts to the overall one
        assert!((coef[2] - 1.65).abs() < 0.07, "{coef:?}");
        assert!(fit.diagnostics.notes.iter().any(|n| n.contains("disabled")));
    }
}
