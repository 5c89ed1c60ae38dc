//! Sampling-based value estimators for a fixed policy, and search over a
//! finite candidate class.
//!
//! These are single-stage estimators. The inverse probability form only
//! needs treatment (and, for path modes, mediator) models; the augmented
//! form adds an outcome regression and stays consistent when one of the
//! model groups is wrong.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ident::{LawProvider, Mode};
use crate::layout::Layout;
use crate::policy::Policy;
use crate::policylearn::config::ModelConfig;
use crate::policylearn::nuisance::{fit_nuisances, NuisanceSet};
use crate::policylearn::{mediator_ratio, prob_of, Diagnostics, WeightAudit};
use crate::scm::MediatorSelector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueEstimator {
    Ipw,
    Robust,
}

impl std::str::FromStr for ValueEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipw" => Ok(ValueEstimator::Ipw),
            "robust" | "aipw" => Ok(ValueEstimator::Robust),
            other => Err(Error::Config(format!(
                "unknown value estimator '{other}' (expected ipw or robust)"
            ))),
        }
    }
}

impl std::fmt::Display for ValueEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ValueEstimator::Ipw => "ipw",
            ValueEstimator::Robust => "robust",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub policy: Policy,
    pub value: f64,
    pub candidate_values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn require_single_stage(layout: &Layout) -> Result<()> {
    if layout.stages != 1 {
        return Err(Error::Unsupported(
            "sampling-based value estimators handle a single decision stage".into(),
        ));
    }
    Ok(())
}

/// Inverse probability weighted value of `policy` under `mode`, using the
/// provider's treatment (and mediator) laws.
pub fn value_ipw_with(
    provider: &dyn LawProvider,
    data: &Dataset,
    policy: &Policy,
    mode: &Mode,
    config: &ModelConfig,
) -> Result<ValueEstimate> {
    let layout = data.layout().clone();
    require_single_stage(&layout)?;
    mode.validate(&layout)?;
    policy.validate(&layout)?;

    let mut audit = WeightAudit::new(config);
    let mut row = vec![0u8; layout.n_discrete()];
    let mut scratch = Vec::new();
    let a_col = layout.a_col(1);
    let mut total = 0.0;
    for i in 0..data.n() {
        data.read_row(i, &mut row);
        let f = policy.decide(&layout, 1, &row);
        if row[a_col] != f {
            continue;
        }
        let pi = prob_of(f, provider.treat_prob(1, &row)?);
        let mut raw = 1.0 / audit.den(pi);
        if let Mode::Path { reference, mediators } = mode {
            raw *= mediator_ratio(
                provider, &layout, &row, 1, reference, mediators, &mut audit, &mut scratch,
            )?;
        }
        total += audit.finish(raw) * data.y()[i];
    }
    Ok(ValueEstimate { value: total / data.n() as f64, diagnostics: audit.into_diagnostics() })
}

/// `E[Y | baseline, action]` composed from mediator and outcome models.
fn composed_mean(
    provider: &dyn LawProvider,
    layout: &Layout,
    row: &mut Vec<u8>,
    mediator_treatment: Option<u8>,
) -> Result<f64> {
    let dims = layout.mediator_dims[0];
    let keep: Vec<u8> = (0..dims).map(|c| row[layout.m_col(1, c)]).collect();
    let action = row[layout.a_col(1)];
    let mut total = 0.0;
    for mask in 0..(1usize << dims) {
        for c in 0..dims {
            row[layout.m_col(1, c)] = ((mask >> c) & 1) as u8;
        }
        let mut wgt = 1.0;
        row[layout.a_col(1)] = mediator_treatment.unwrap_or(action);
        for c in 0..dims {
            let p1 = provider.mediator_prob(1, c, row)?;
            wgt *= prob_of(row[layout.m_col(1, c)], p1);
        }
        row[layout.a_col(1)] = action;
        if wgt == 0.0 {
            continue;
        }
        total += wgt * provider.outcome_mean(row)?;
    }
    for (c, v) in keep.into_iter().enumerate() {
        row[layout.m_col(1, c)] = v;
    }
    Ok(total)
}

/// Augmented value estimate; stays consistent under one wrong model group.
///
/// The overall form is the usual augmented inverse probability estimator.
/// The path form combines three terms so that any two correct model groups
/// out of treatment, mediator, and outcome suffice; it requires the
/// all-components mediator contrast because its centering term identifies
/// the mediator law from rows treated at the reference.
pub fn value_robust_with(
    provider: &dyn LawProvider,
    data: &Dataset,
    policy: &Policy,
    mode: &Mode,
    config: &ModelConfig,
) -> Result<ValueEstimate> {
    let layout = data.layout().clone();
    require_single_stage(&layout)?;
    mode.validate(&layout)?;
    policy.validate(&layout)?;

    let mut audit = WeightAudit::new(config);
    let mut row = vec![0u8; layout.n_discrete()];
    let mut scratch = Vec::new();
    let a_col = layout.a_col(1);
    let n = data.n();
    let mut total = 0.0;

    match mode {
        Mode::Overall => {
            for i in 0..n {
                data.read_row(i, &mut row);
                let f = policy.decide(&layout, 1, &row);
                let observed = row[a_col];
                row[a_col] = f;
                let mu_f = composed_mean(provider, &layout, &mut row, None)?;
                let mut term = mu_f;
                if observed == f {
                    let den = audit.den(prob_of(f, provider.treat_prob(1, &row)?));
                    let w = audit.finish(1.0 / den);
                    term += w * (data.y()[i] - mu_f);
                }
                row[a_col] = observed;
                total += term;
            }
        }
        Mode::Path { reference, mediators } => {
            if !matches!(mediators, MediatorSelector::All) {
                return Err(Error::Unsupported(
                    "the augmented path estimator needs the all-components mediator contrast"
                        .into(),
                ));
            }
            let a_ref = reference[0];
            for i in 0..n {
                data.read_row(i, &mut row);
                let f = policy.decide(&layout, 1, &row);
                let observed = row[a_col];

                // outcome model at the policy action, observed mediators
                row[a_col] = f;
                let mu_obs_m = provider.outcome_mean(&row)?;
                // its average over the reference mediator law
                let eta = composed_mean(provider, &layout, &mut row, Some(a_ref))?;
                row[a_col] = observed;

                let mut term = eta;
                if observed == f {
                    let den = audit.den(prob_of(f, provider.treat_prob(1, &row)?));
                    let ratio = mediator_ratio(
                        provider, &layout, &row, 1, reference, mediators, &mut audit, &mut scratch,
                    )?;
                    let w = audit.finish(ratio / den);
                    term += w * (data.y()[i] - mu_obs_m);
                }
                if observed == a_ref {
                    let den = audit.den(prob_of(a_ref, provider.treat_prob(1, &row)?));
                    let w = audit.finish(1.0 / den);
                    term += w * (mu_obs_m - eta);
                }
                total += term;
            }
        }
    }
    Ok(ValueEstimate { value: total / n as f64, diagnostics: audit.into_diagnostics() })
}

fn nuisance_set(estimator: ValueEstimator) -> NuisanceSet {
    match estimator {
        ValueEstimator::Ipw => NuisanceSet { propensity: true, mediator: true, ..NuisanceSet::default() },
        ValueEstimator::Robust => {
            NuisanceSet { propensity: true, mediator: true, outcome: true, ..NuisanceSet::default() }
        }
    }
}

/// Fit the models the estimator needs, then evaluate `policy`.
pub fn estimate_value(
    data: &Dataset,
    policy: &Policy,
    mode: &Mode,
    estimator: ValueEstimator,
    config: &ModelConfig,
) -> Result<ValueEstimate> {
    require_single_stage(data.layout())?;
    let nuis = fit_nuisances(data, config, nuisance_set(estimator))?;
    match estimator {
        ValueEstimator::Ipw => value_ipw_with(&nuis, data, policy, mode, config),
        ValueEstimator::Robust => value_robust_with(&nuis, data, policy, mode, config),
    }
}

/// Score every candidate with shared fitted models and keep the best; ties
/// go to the earliest candidate.
pub fn value_search(
    data: &Dataset,
    candidates: &[Policy],
    mode: &Mode,
    estimator: ValueEstimator,
    config: &ModelConfig,
) -> Result<SearchResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyClass);
    }
    require_single_stage(data.layout())?;
    let nuis = fit_nuisances(data, config, nuisance_set(estimator))?;
    let mut values = Vec::with_capacity(candidates.len());
    let mut diagnostics = Diagnostics::default();
    for policy in candidates {
        let est = match estimator {
            ValueEstimator::Ipw => value_ipw_with(&nuis, data, policy, mode, config)?,
            ValueEstimator::Robust => value_robust_with(&nuis, data, policy, mode, config)?,
        };
        diagnostics.absorb(&est.diagnostics);
        values.push(est.value);
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Ok(SearchResult {
        best_index: best,
        policy: candidates[best].clone(),
        value: values[best],
        candidate_values: values,
        diagnostics,
    })
}
