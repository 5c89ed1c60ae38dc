//! Learner configuration and default feature recipes.
//!
//! Every conditional model gets a default design built from the layout:
//! main effects of the conditioning history, plus treatment interactions
//! where the model is a treatment contrast. Any of them can be replaced
//! per stage through the override fields, which is how misspecification
//! experiments are expressed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{main_factors, Factor, FeatureMap, Term};
use crate::layout::{ColRef, Layout};
use crate::models::FitConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub fit: FitConfig,
    /// Hard cap on any single observation weight.
    pub weight_cap: f64,
    /// Smallest probability allowed in a weight denominator.
    pub positivity_floor: f64,
    /// History strata seen at least this often must contain both arms.
    pub positivity_min_stratum: usize,
    /// Ignore mediator reweighting and fit everything unweighted.
    pub force_unit_weights: bool,
    pub propensity_features: Option<Vec<FeatureMap>>,
    pub mediator_features: Option<Vec<Vec<FeatureMap>>>,
    pub intermediate_features: Option<Vec<FeatureMap>>,
    pub outcome_features: Option<FeatureMap>,
    pub q_features: Option<Vec<FeatureMap>>,
    pub blip_features: Option<Vec<FeatureMap>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fit: FitConfig::default(),
            weight_cap: 50.0,
            positivity_floor: 0.01,
            positivity_min_stratum: 10,
            force_unit_weights: false,
            propensity_features: None,
            mediator_features: None,
            intermediate_features: None,
            outcome_features: None,
            q_features: None,
            blip_features: None,
        }
    }
}

fn history_mains(layout: &Layout, stage: usize) -> Vec<Factor> {
    main_factors(layout, layout.history_cols(stage))
}

/// `p(A_stage = 1 | history)`: intercept and history main effects.
pub fn default_propensity(layout: &Layout, stage: usize) -> FeatureMap {
    let mut terms = vec![Term::Intercept];
    terms.extend(history_mains(layout, stage).into_iter().map(Term::Single));
    FeatureMap::new(terms)
}

fn with_treatment_contrast(layout: &Layout, stage: usize, mut terms: Vec<Term>) -> FeatureMap {
    let a = Factor::col(ColRef::A(stage));
    terms.push(Term::Single(a));
    terms.extend(history_mains(layout, stage).into_iter().map(|f| Term::Pair(a, f)));
    FeatureMap::new(terms)
}

/// `p(M = 1 | history, A)`: history mains plus a full treatment contrast.
pub fn default_mediator(layout: &Layout, stage: usize) -> FeatureMap {
    let mut terms = vec![Term::Intercept];
    terms.extend(history_mains(layout, stage).into_iter().map(Term::Single));
    with_treatment_contrast(layout, stage, terms)
}

/// `p(W_stage = 1 | ...)`: the mediator recipe plus mediator main effects.
pub fn default_intermediate(layout: &Layout, stage: usize) -> FeatureMap {
    let mut map = default_mediator(layout, stage);
    for comp in 0..layout.mediator_dims[stage - 1] {
        map.terms.push(Term::Single(Factor::col(ColRef::M(stage, comp))));
    }
    map
}

/// `E[Y | history, A_K, M_K]` with treatment interactions for both.
pub fn default_outcome(layout: &Layout) -> FeatureMap {
    let k = layout.stages;
    let a = Factor::col(ColRef::A(k));
    let mut terms = vec![Term::Intercept];
    terms.extend(history_mains(layout, k).into_iter().map(Term::Single));
    let meds: Vec<Factor> =
        (0..layout.mediator_dims[k - 1]).map(|c| Factor::col(ColRef::M(k, c))).collect();
    terms.extend(meds.iter().copied().map(Term::Single));
    terms.push(Term::Single(a));
    terms.extend(history_mains(layout, k).into_iter().map(|f| Term::Pair(a, f)));
    terms.extend(meds.iter().copied().map(|m| Term::Pair(a, m)));
    FeatureMap::new(terms)
}

/// Stage value regression: history mains and a treatment contrast.
pub fn default_q(layout: &Layout, stage: usize) -> FeatureMap {
    let mut terms = vec![Term::Intercept];
    terms.extend(history_mains(layout, stage).into_iter().map(Term::Single));
    with_treatment_contrast(layout, stage, terms)
}

/// Treatment-effect blip: the treatment contrast alone, no baseline terms.
pub fn default_blip(layout: &Layout, stage: usize) -> FeatureMap {
    with_treatment_contrast(layout, stage, Vec::new())
}

fn stage_override<'a, T>(slot: &'a Option<Vec<T>>, stage: usize, stages: usize, role: &str) -> Result<Option<&'a T>> {
    match slot {
        None => Ok(None),
        Some(v) if v.len() == stages => Ok(Some(&v[stage - 1])),
        Some(v) => Err(Error::Config(format!(
            "{role} overrides cover {} stages, layout has {stages}",
            v.len()
        ))),
    }
}

fn check_scope(map: &FeatureMap, layout: &Layout, limit: usize, role: &str) -> Result<()> {
    map.validate(layout)?;
    if let Some(max) = map.max_col(layout)? {
        if max > limit {
            return Err(Error::Config(format!(
                "{role} features read column {}, past their scope",
                layout.col_ref(max)
            )));
        }
    }
    Ok(())
}

impl ModelConfig {
    pub fn propensity_map(&self, layout: &Layout, stage: usize) -> Result<FeatureMap> {
        let map = stage_override(&self.propensity_features, stage, layout.stages, "propensity")?
            .cloned()
            .unwrap_or_else(|| default_propensity(layout, stage));
        check_scope(&map, layout, layout.a_col(stage).saturating_sub(1), "propensity")?;
        Ok(map)
    }

    pub fn mediator_map(&self, layout: &Layout, stage: usize, comp: usize) -> Result<FeatureMap> {
        let map = match stage_override(&self.mediator_features, stage, layout.stages, "mediator")? {
            Some(per_comp) => match per_comp.get(comp) {
                Some(m) => m.clone(),
                None => {
                    return Err(Error::Config(format!(
                        "no mediator override for stage {stage} component {comp}"
                    )))
                }
            },
            None => default_mediator(layout, stage),
        };
        check_scope(&map, layout, layout.a_col(stage), "mediator")?;
        Ok(map)
    }

    pub fn intermediate_map(&self, layout: &Layout, stage: usize) -> Result<FeatureMap> {
        if stage >= layout.stages {
            return Err(Error::Config("intermediate models exist only before the last stage".into()));
        }
        let map =
            stage_override(&self.intermediate_features, stage, layout.stages - 1, "intermediate")?
                .cloned()
                .unwrap_or_else(|| default_intermediate(layout, stage));
        check_scope(&map, layout, layout.w_col(stage) - 1, "intermediate")?;
        Ok(map)
    }

    pub fn outcome_map(&self, layout: &Layout) -> Result<FeatureMap> {
        let map = self.outcome_features.clone().unwrap_or_else(|| default_outcome(layout));
        check_scope(&map, layout, layout.outcome_col() - 1, "outcome")?;
        Ok(map)
    }

    pub fn q_map(&self, layout: &Layout, stage: usize) -> Result<FeatureMap> {
        let map = stage_override(&self.q_features, stage, layout.stages, "stage value")?
            .cloned()
            .unwrap_or_else(|| default_q(layout, stage));
        check_scope(&map, layout, layout.a_col(stage), "stage value")?;
        Ok(map)
    }

    /// The blip map must be a pure treatment contrast: every term carries
    /// the stage treatment exactly once, so the policy it implies can be
    /// evaluated from history alone.
    pub fn blip_map(&self, layout: &Layout, stage: usize) -> Result<FeatureMap> {
        let map = stage_override(&self.blip_features, stage, layout.stages, "blip")?
            .cloned()
            .unwrap_or_else(|| default_blip(layout, stage));
        check_scope(&map, layout, layout.a_col(stage), "blip")?;
        map.factor_out(ColRef::A(stage)).map_err(|e| {
            Error::Config(format!("stage {stage} blip features are not a treatment contrast: {e}"))
        })?;
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_stage_layout() -> Layout {
        Layout { stages: 2, baseline_card: 2, mediator_dims: vec![1, 1] }
    }

    #[test]
    fn default_recipes_have_the_expected_shape() {
        let layout = two_stage_layout();
        assert_eq!(default_propensity(&layout, 1).describe(), "1 + W0");
        assert_eq!(default_propensity(&layout, 2).describe(), "1 + W0 + A1 + M1_1 + W1");
        assert_eq!(default_mediator(&layout, 1).describe(), "1 + W0 + A1 + A1*W0");
        assert_eq!(
            default_intermediate(&layout, 1).describe(),
            "1 + W0 + A1 + A1*W0 + M1_1"
        );
        assert_eq!(default_q(&layout, 1).describe(), "1 + W0 + A1 + A1*W0");
        assert_eq!(default_blip(&layout, 1).describe(), "A1 + A1*W0");
        let outcome = default_outcome(&layout);
        assert!(outcome.describe().contains("A2*M2_1"));
        assert!(outcome.describe().contains("A2*W1"));
    }

    #[test]
    fn multivalued_baseline_enters_through_dummies() {
        let layout = Layout { stages: 1, baseline_card: 4, mediator_dims: vec![1] };
        let map = default_propensity(&layout, 1);
        assert_eq!(map.describe(), "1 + I{W0=1} + I{W0=2} + I{W0=3}");
    }

    #[test]
    fn override_lengths_are_checked() {
        let layout = two_stage_layout();
        let cfg = ModelConfig {
            q_features: Some(vec![default_q(&layout, 1)]),
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.q_map(&layout, 1), Err(Error::Config(_))));
    }

    #[test]
    fn out_of_scope_features_are_rejected() {
        let layout = two_stage_layout();
        // stage-1 propensity must not look at the stage-1 mediator
        let bad = FeatureMap::new(vec![
            Term::Intercept,
            Term::Single(Factor::col(ColRef::M(1, 0))),
        ]);
        let cfg = ModelConfig {
            propensity_features: Some(vec![bad, default_propensity(&layout, 2)]),
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.propensity_map(&layout, 1), Err(Error::Config(_))));
        assert!(cfg.propensity_map(&layout, 2).is_ok());
    }

    #[test]
    fn blip_maps_must_carry_the_treatment() {
        let layout = two_stage_layout();
        let bad = FeatureMap::new(vec![Term::Intercept]);
        let cfg = ModelConfig {
            blip_features: Some(vec![bad, default_blip(&layout, 2)]),
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.blip_map(&layout, 1), Err(Error::Config(_))));
        assert!(cfg.blip_map(&layout, 2).is_ok());
    }

    #[test]
    fn config_json_roundtrip_with_partial_fields() {
        let text = r#"{ "weight_cap": 25.0, "force_unit_weights": true }"#;
        let cfg: ModelConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.weight_cap, 25.0);
        assert!(cfg.force_unit_weights);
        assert_eq!(cfg.positivity_floor, 0.01);
        let err = serde_json::from_str::<ModelConfig>(r#"{ "weigth_cap": 1 }"#);
        assert!(err.is_err());
    }
}
