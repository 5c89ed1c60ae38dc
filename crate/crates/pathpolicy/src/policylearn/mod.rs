//! Learning treatment regimes from observed trajectories.
//!
//! Four routes to a policy and its value, differing in which conditional
//! models they lean on:
//!
//! * [`plugin`]: fit the outcome-side models, then read the optimum off
//!   them by backward induction.
//! * [`q_learn`]: recursive stage-value regressions; path modes reweight
//!   each stage by a mediator density ratio instead of refitting laws.
//! * [`g_estimate`]: moment conditions for the treatment-effect blips,
//!   leaving everything else unmodeled.
//! * [`value_search`]: score a finite candidate class with inverse
//!   probability or augmented estimators and keep the best.
//!
//! All of them accept the same [`Mode`](crate::ident::Mode), so switching a
//! study between the overall regime problem and a path-restricted one is a
//! one-line change.

mod config;
mod gest;
mod induction;
mod nuisance;
mod qlearn;
mod value;

use serde::{Deserialize, Serialize};

pub use config::{
    default_blip, default_intermediate, default_mediator, default_outcome, default_propensity,
    default_q, ModelConfig,
};
pub use gest::g_estimate;
pub use induction::{check_treatment_positivity, induce_optimal, plugin, InducedPolicy};
pub use nuisance::{fit_nuisances, FrequencyProvider, NuisanceModels, NuisanceSet};
pub use qlearn::q_learn;
pub use value::{
    estimate_value, value_ipw_with, value_robust_with, value_search, SearchResult, ValueEstimate,
    ValueEstimator,
};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ident::Mode;
use crate::layout::Layout;
use crate::models::FittedModel;
use crate::policy::Policy;
use crate::scm::MediatorSelector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Plugin,
    QLearn,
    GEstimate,
}

impl std::str::FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plugin" => Ok(Learner::Plugin),
            "qlearn" | "q-learn" | "q_learn" => Ok(Learner::QLearn),
            "gestimate" | "g-estimate" | "g_estimate" | "gest" => Ok(Learner::GEstimate),
            other => Err(Error::Config(format!(
                "unknown learner '{other}' (expected plugin, qlearn, or gestimate)"
            ))),
        }
    }
}

impl std::fmt::Display for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Learner::Plugin => "plugin",
            Learner::QLearn => "qlearn",
            Learner::GEstimate => "gestimate",
        })
    }
}

/// Weight bookkeeping shared by every estimator that divides by a fitted
/// probability. `max_weight` stays 0 when no weights were used at all.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub truncated_weights: u64,
    pub floored_denominators: u64,
    pub max_weight: f64,
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub fn absorb(&mut self, other: &Diagnostics) {
        self.truncated_weights += other.truncated_weights;
        self.floored_denominators += other.floored_denominators;
        self.max_weight = self.max_weight.max(other.max_weight);
        self.notes.extend(other.notes.iter().cloned());
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedModel {
    pub role: String,
    pub model: FittedModel,
}

/// Blip coefficients per stage with sandwich standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlipEstimate {
    pub psi: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub learner: Learner,
    pub mode: Mode,
    pub policy: Policy,
    pub value_estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blip: Option<BlipEstimate>,
    pub models: Vec<NamedModel>,
    pub diagnostics: Diagnostics,
}

/// Run one of the model-based learners.
pub fn fit(data: &Dataset, learner: Learner, mode: &Mode, config: &ModelConfig) -> Result<FitResult> {
    match learner {
        Learner::Plugin => plugin(data, mode, config),
        Learner::QLearn => q_learn(data, mode, config),
        Learner::GEstimate => g_estimate(data, mode, config),
    }
}

fn named_models(nuis: &NuisanceModels) -> Vec<NamedModel> {
    let mut out = Vec::new();
    if let Some(fits) = &nuis.propensity {
        for (i, m) in fits.iter().enumerate() {
            out.push(NamedModel { role: format!("propensity[{}]", i + 1), model: m.clone() });
        }
    }
    if let Some(stages) = &nuis.mediator {
        for (i, comps) in stages.iter().enumerate() {
            for (c, m) in comps.iter().enumerate() {
                out.push(NamedModel {
                    role: format!("mediator[{}][{}]", i + 1, c + 1),
                    model: m.clone(),
                });
            }
        }
    }
    if let Some(fits) = &nuis.intermediate {
        for (i, m) in fits.iter().enumerate() {
            out.push(NamedModel { role: format!("intermediate[{}]", i + 1), model: m.clone() });
        }
    }
    if let Some(m) = &nuis.outcome {
        out.push(NamedModel { role: "outcome".into(), model: m.clone() });
    }
    out
}

/// Clamps weight denominators and caps finished weights, counting both.
pub(crate) struct WeightAudit {
    floor: f64,
    cap: f64,
    truncated: u64,
    floored: u64,
    max: f64,
}

impl WeightAudit {
    pub(crate) fn new(config: &ModelConfig) -> Self {
        WeightAudit {
            floor: config.positivity_floor,
            cap: config.weight_cap,
            truncated: 0,
            floored: 0,
            max: 0.0,
        }
    }

    /// A probability about to be divided by.
    pub(crate) fn den(&mut self, p: f64) -> f64 {
        if p < self.floor {
            self.floored += 1;
            self.floor
        } else {
            p
        }
    }

    /// Final weight for one observation.
    pub(crate) fn finish(&mut self, raw: f64) -> f64 {
        let w = if raw > self.cap {
            self.truncated += 1;
            self.cap
        } else {
            raw
        };
        self.max = self.max.max(w);
        w
    }

    pub(crate) fn into_diagnostics(self) -> Diagnostics {
        Diagnostics {
            truncated_weights: self.truncated,
            floored_denominators: self.floored,
            max_weight: self.max,
            notes: Vec::new(),
        }
    }
}

/// Probability that a binary column takes `value` given `p(value = 1)`.
pub(crate) fn prob_of(value: u8, p_one: f64) -> f64 {
    if value == 1 {
        p_one
    } else {
        1.0 - p_one
    }
}

/// Density ratio of the observed stage mediators between the reference
/// treatment history and the observed one, over selected components only.
/// Denominators are floored through the audit; the caller caps the product.
pub(crate) fn mediator_ratio(
    provider: &dyn crate::ident::LawProvider,
    layout: &Layout,
    row: &[u8],
    stage: usize,
    reference: &[u8],
    selector: &MediatorSelector,
    audit: &mut WeightAudit,
    scratch: &mut Vec<u8>,
) -> Result<f64> {
    scratch.clear();
    scratch.extend_from_slice(row);
    for s in 1..=stage {
        scratch[layout.a_col(s)] = reference[s - 1];
    }
    let mut ratio = 1.0;
    for comp in 0..layout.mediator_dims[stage - 1] {
        if !selector.selects(stage, comp) {
            continue;
        }
        let observed = row[layout.m_col(stage, comp)];
        let num = prob_of(observed, provider.mediator_prob(stage, comp, scratch)?);
        let den = prob_of(observed, provider.mediator_prob(stage, comp, row)?);
        ratio *= num / audit.den(den);
    }
    Ok(ratio)
}
