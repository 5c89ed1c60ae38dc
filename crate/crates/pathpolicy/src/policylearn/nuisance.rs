//! Fitted conditional models assembled into a law the identification and
//! induction machinery can evaluate.

use std::collections::HashMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ident::LawProvider;
use crate::layout::Layout;
use crate::models::{fit_linear, fit_logistic, FittedModel};
use crate::policylearn::config::ModelConfig;

/// Which conditional models a learner needs fitted.
#[derive(Debug, Clone, Copy, Default)]
pub struct NuisanceSet {
    pub propensity: bool,
    pub mediator: bool,
    pub intermediate: bool,
    pub outcome: bool,
}

impl NuisanceSet {
    pub fn all() -> Self {
        NuisanceSet { propensity: true, mediator: true, intermediate: true, outcome: true }
    }
}

/// Regression fits for each conditional law, with the empirical baseline
/// marginal. Slots a learner did not request stay empty and asking them
/// for a probability is an error rather than a silent default.
pub struct NuisanceModels {
    layout: Layout,
    pub w0: Vec<f64>,
    pub propensity: Option<Vec<FittedModel>>,
    pub mediator: Option<Vec<Vec<FittedModel>>>,
    pub intermediate: Option<Vec<FittedModel>>,
    pub outcome: Option<FittedModel>,
}

pub fn fit_nuisances(
    data: &Dataset,
    config: &ModelConfig,
    set: NuisanceSet,
) -> Result<NuisanceModels> {
    let layout = data.layout().clone();
    if data.n() == 0 {
        return Err(Error::BadData("cannot fit models on an empty dataset".into()));
    }

    let mut w0 = vec![0.0; layout.baseline_card as usize];
    for &v in data.col(0) {
        w0[v as usize] += 1.0;
    }
    let n = data.n() as f64;
    for p in &mut w0 {
        *p /= n;
    }

    let propensity = if set.propensity {
        let mut fits = Vec::with_capacity(layout.stages);
        for stage in 1..=layout.stages {
            let map = config.propensity_map(&layout, stage)?;
            let targets = data.col(layout.a_col(stage)).to_vec();
            fits.push(fit_logistic(&layout, &map, data, &targets, None, &config.fit)?);
        }
        Some(fits)
    } else {
        None
    };

    let mediator = if set.mediator {
        let mut fits = Vec::with_capacity(layout.stages);
        for stage in 1..=layout.stages {
            let mut comps = Vec::with_capacity(layout.mediator_dims[stage - 1]);
            for comp in 0..layout.mediator_dims[stage - 1] {
                let map = config.mediator_map(&layout, stage, comp)?;
                let targets = data.col(layout.m_col(stage, comp)).to_vec();
                comps.push(fit_logistic(&layout, &map, data, &targets, None, &config.fit)?);
            }
            fits.push(comps);
        }
        Some(fits)
    } else {
        None
    };

    let intermediate = if set.intermediate && layout.stages > 1 {
        let mut fits = Vec::with_capacity(layout.stages - 1);
        for stage in 1..layout.stages {
            let map = config.intermediate_map(&layout, stage)?;
            let targets = data.col(layout.w_col(stage)).to_vec();
            fits.push(fit_logistic(&layout, &map, data, &targets, None, &config.fit)?);
        }
        Some(fits)
    } else {
        None
    };

    let outcome = if set.outcome {
        let map = config.outcome_map(&layout)?;
        Some(fit_linear(&layout, &map, data, data.y(), None, &config.fit)?)
    } else {
        None
    };

    Ok(NuisanceModels { layout, w0, propensity, mediator, intermediate, outcome })
}

impl NuisanceModels {
    fn missing(role: &str) -> Error {
        Error::Unsupported(format!("no fitted {role} model is available"))
    }
}

impl LawProvider for NuisanceModels {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn w0_prob(&self, w0: u8) -> Result<f64> {
        self.w0
            .get(w0 as usize)
            .copied()
            .ok_or_else(|| Error::ShapeMismatch(format!("baseline level {w0} out of range")))
    }

    fn treat_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        let fits = self.propensity.as_ref().ok_or_else(|| Self::missing("propensity"))?;
        Ok(fits[stage - 1].predict_row(&self.layout, row))
    }

    fn mediator_prob(&self, stage: usize, comp: usize, row: &[u8]) -> Result<f64> {
        let fits = self.mediator.as_ref().ok_or_else(|| Self::missing("mediator"))?;
        Ok(fits[stage - 1][comp].predict_row(&self.layout, row))
    }

    fn intermediate_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        let fits = self.intermediate.as_ref().ok_or_else(|| Self::missing("intermediate outcome"))?;
        Ok(fits[stage - 1].predict_row(&self.layout, row))
    }

    fn outcome_mean(&self, row: &[u8]) -> Result<f64> {
        let fit = self.outcome.as_ref().ok_or_else(|| Self::missing("outcome"))?;
        Ok(fit.predict_row(&self.layout, row))
    }
}

/// Saturated empirical law: every conditional probability is an exact count
/// ratio over the observed configurations. Useful as a model-free reference
/// in small discrete problems; queries about configurations the data never
/// produced fail rather than extrapolate.
pub struct FrequencyProvider {
    layout: Layout,
    n: f64,
    w0: Vec<f64>,
    /// For each non-baseline discrete column: config of all earlier columns
    /// mapped to (count with this column = 1, total count).
    tables: Vec<HashMap<usize, (f64, f64)>>,
    /// Full discrete config mapped to (outcome sum, count).
    outcome: HashMap<usize, (f64, f64)>,
}

impl FrequencyProvider {
    pub fn new(data: &Dataset) -> Result<Self> {
        let layout = data.layout().clone();
        if data.n() == 0 {
            return Err(Error::BadData("cannot tabulate an empty dataset".into()));
        }
        let mut w0 = vec![0.0; layout.baseline_card as usize];
        let mut tables = vec![HashMap::new(); layout.n_discrete()];
        let mut outcome: HashMap<usize, (f64, f64)> = HashMap::new();
        let mut row = vec![0u8; layout.n_discrete()];
        for i in 0..data.n() {
            data.read_row(i, &mut row);
            w0[row[0] as usize] += 1.0;
            for c in 1..layout.n_discrete() {
                let key = layout.config_index(0..c, &row);
                let slot = tables[c].entry(key).or_insert((0.0, 0.0));
                slot.0 += f64::from(row[c]);
                slot.1 += 1.0;
            }
            let key = layout.config_index(0..layout.n_discrete(), &row);
            let slot = outcome.entry(key).or_insert((0.0, 0.0));
            slot.0 += data.y()[i];
            slot.1 += 1.0;
        }
        let n = data.n() as f64;
        for p in &mut w0 {
            *p /= n;
        }
        Ok(FrequencyProvider { layout, n, w0, tables, outcome })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    fn lookup(&self, col: usize, row: &[u8]) -> Result<f64> {
        let key = self.layout.config_index(0..col, row);
        match self.tables[col].get(&key) {
            Some((ones, total)) => Ok(ones / total),
            None => Err(Error::PositivityFailure(format!(
                "no observations for the history of {}",
                self.layout.col_ref(col)
            ))),
        }
    }
}

impl LawProvider for FrequencyProvider {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn w0_prob(&self, w0: u8) -> Result<f64> {
        self.w0
            .get(w0 as usize)
            .copied()
            .ok_or_else(|| Error::ShapeMismatch(format!("baseline level {w0} out of range")))
    }

    fn treat_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        self.lookup(self.layout.a_col(stage), row)
    }

    fn mediator_prob(&self, stage: usize, comp: usize, row: &[u8]) -> Result<f64> {
        self.lookup(self.layout.m_col(stage, comp), row)
    }

    fn intermediate_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        self.lookup(self.layout.w_col(stage), row)
    }

    fn outcome_mean(&self, row: &[u8]) -> Result<f64> {
        let key = self.layout.config_index(0..self.layout.n_discrete(), row);
        match self.outcome.get(&key) {
            Some((sum, count)) => Ok(sum / count),
            None => Err(Error::PositivityFailure(
                "no observations for this outcome configuration".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident;
    use crate::scm::simulate;
    use crate::scm::test_specs::small;

    #[test]
    fn fitted_laws_track_the_truth() {
        let spec = small();
        let data = simulate(&spec, 40_000, 31).unwrap();
        let layout = data.layout().clone();
        let nuis = fit_nuisances(&data, &ModelConfig::default(), NuisanceSet::all()).unwrap();
        for w in 0..2u8 {
            let row = vec![w, 0, 0];
            let truth = 0.3 + 0.4 * f64::from(w);
            assert!((nuis.treat_prob(1, &row).unwrap() - truth).abs() < 0.02);
            for a in 0..2u8 {
                let row = vec![w, a, 0];
                let truth = spec.mediator_prob(&layout, 1, 0, &row);
                assert!((nuis.mediator_prob(1, 0, &row).unwrap() - truth).abs() < 0.03);
                for m in 0..2u8 {
                    let row = vec![w, a, m];
                    let truth = spec.outcome_mean_at(&layout, 0, &row);
                    assert!((nuis.outcome_mean(&row).unwrap() - truth).abs() < 0.05);
                }
            }
        }
        assert!((nuis.w0_prob(1).unwrap() - 0.5).abs() < 0.02);
        assert!(nuis.intermediate.is_none());
    }

    #[test]
    fn unrequested_slots_refuse_to_answer() {
        let spec = small();
        let data = simulate(&spec, 500, 1).unwrap();
        let set = NuisanceSet { outcome: true, ..NuisanceSet::default() };
        let nuis = fit_nuisances(&data, &ModelConfig::default(), set).unwrap();
        assert!(nuis.outcome_mean(&[0, 0, 0]).is_ok());
        assert!(matches!(nuis.treat_prob(1, &[0, 0, 0]), Err(Error::Unsupported(_))));
        assert!(matches!(nuis.mediator_prob(1, 0, &[0, 0, 0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn frequencies_reproduce_observed_means_exactly() {
        let spec = small();
        let data = simulate(&spec, 3_000, 77).unwrap();
        let freq = FrequencyProvider::new(&data).unwrap();
        // the g-formula over exact empirical tables is the sample mean
        let mean = ident::observational_mean(&freq).unwrap();
        let direct = data.y().iter().sum::<f64>() / data.n() as f64;
        assert!((mean - direct).abs() < 1e-10, "{mean} vs {direct}");
    }

    #[test]
    fn unseen_configurations_are_positivity_failures() {
        let layout = Layout { stages: 1, baseline_card: 2, mediator_dims: vec![1] };
        // only w0 = 0 rows observed
        let data = Dataset::new(
            layout.clone(),
            vec![vec![0, 0, 0, 0], vec![0, 1, 0, 1], vec![1, 0, 1, 0]],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let freq = FrequencyProvider::new(&data).unwrap();
        assert!(matches!(
            freq.treat_prob(1, &[1, 0, 0]),
            Err(Error::PositivityFailure(_))
        ));
        assert!((freq.treat_prob(1, &[0, 0, 0]).unwrap() - 0.5).abs() < 1e-12);
    }
}
