//! Logistic and linear model fitting.
//!
//! Both fitters take a [`FeatureMap`] plus a dataset and build the design
//! matrix themselves, so a fitted model can later score an arbitrary row
//! without the caller tracking column order. Targets are passed separately
//! because most of them are derived (pseudo-outcomes, component slices)
//! rather than raw columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::layout::Layout;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Convergence: largest absolute score coordinate.
    pub tol: f64,
    /// Optional L2 penalty on all coefficients; zero means none.
    pub ridge: f64,
    /// Coefficient norm beyond which a logistic fit is declared separated.
    pub separation_norm: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { max_iter: 100, tol: 1e-8, ridge: 0.0, separation_norm: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub features: FeatureMap,
    pub coef: Vec<f64>,
    /// Model-based standard errors (inverse information or OLS formula).
    pub se: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Residual scale; linear fits only.
    pub sigma: Option<f64>,
    pub ridge: f64,
    pub weighted: bool,
}

impl FittedModel {
    pub fn linear_predictor(&self, layout: &Layout, row: &[u8]) -> f64 {
        self.features.dot(layout, row, &self.coef)
    }

    /// Probability for logistic models, conditional mean for linear ones.
    pub fn predict_row(&self, layout: &Layout, row: &[u8]) -> f64 {
        let eta = self.linear_predictor(layout, row);
        match self.kind {
            ModelKind::Logistic => expit(eta),
            ModelKind::Linear => eta,
        }
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// log(1 + exp(x)) without overflow.
fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn design(layout: &Layout, map: &FeatureMap, data: &Dataset) -> Result<DMatrix<f64>> {
    map.validate(layout)?;
    let n = data.n();
    let p = map.len();
    let mut x = DMatrix::zeros(n, p);
    let mut row = vec![0u8; layout.n_discrete()];
    let mut feats = vec![0.0; p];
    for i in 0..n {
        data.read_row(i, &mut row);
        map.eval_into(layout, &row, &mut feats);
        for j in 0..p {
            x[(i, j)] = feats[j];
        }
    }
    Ok(x)
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} observations",
                w.len(),
                n
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::BadData("weights must be finite and nonnegative".into()));
        }
    }
    Ok(())
}

fn weight_at(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

/// Penalized Bernoulli log likelihood at `coef`; exposed for gradient checks.
pub fn logistic_loglik(
    layout: &Layout,
    map: &FeatureMap,
    data: &Dataset,
    targets: &[u8],
    weights: Option<&[f64]>,
    ridge: f64,
    coef: &[f64],
) -> Result<f64> {
    let x = design(layout, map, data)?;
    check_targets_binary(targets, data.n())?;
    check_weights(weights, data.n())?;
    let beta = DVector::from_column_slice(coef);
    let eta = &x * &beta;
    let mut ll = 0.0;
    for i in 0..data.n() {
        let w = weight_at(weights, i);
        ll += w * (f64::from(targets[i]) * eta[i] - log1pexp(eta[i]));
    }
    Ok(ll - 0.5 * ridge * beta.norm_squared())
}

/// Score (gradient of [`logistic_loglik`]) at `coef`.
pub fn logistic_score(
    layout: &Layout,
    map: &FeatureMap,
    data: &Dataset,
    targets: &[u8],
    weights: Option<&[f64]>,
    ridge: f64,
    coef: &[f64],
) -> Result<Vec<f64>> {
    let x = design(layout, map, data)?;
    check_targets_binary(targets, data.n())?;
    check_weights(weights, data.n())?;
    let beta = DVector::from_column_slice(coef);
    let eta = &x * &beta;
    let mut g: DVector<f64> = DVector::zeros(map.len());
    for i in 0..data.n() {
        let w = weight_at(weights, i);
        let resid = f64::from(targets[i]) - expit(eta[i]);
        for j in 0..map.len() {
            g[j] += w * resid * x[(i, j)];
        }
    }
    g -= &beta * ridge;
    Ok(g.as_slice().to_vec())
}

fn check_targets_binary(targets: &[u8], n: usize) -> Result<()> {
    if targets.len() != n {
        return Err(Error::ShapeMismatch(format!("{} targets for {} observations", targets.len(), n)));
    }
    if targets.iter().any(|&t| t > 1) {
        return Err(Error::BadData("logistic targets must be 0 or 1".into()));
    }
    Ok(())
}

/// Damped Newton fit of a Bernoulli regression.
pub fn fit_logistic(
    layout: &Layout,
    map: &FeatureMap,
    data: &Dataset,
    targets: &[u8],
    weights: Option<&[f64]>,
    cfg: &FitConfig,
) -> Result<FittedModel> {
    let x = design(layout, map, data)?;
    check_targets_binary(targets, data.n())?;
    check_weights(weights, data.n())?;
    let n = data.n();
    let p = map.len();
    let mut beta = DVector::zeros(p);

    let merit = |b: &DVector<f64>| {
        let eta = &x * b;
        let mut ll = 0.0;
        for i in 0..n {
            ll += weight_at(weights, i) * (f64::from(targets[i]) * eta[i] - log1pexp(eta[i]));
        }
        ll - 0.5 * cfg.ridge * b.norm_squared()
    };

    let mut grad_norm = f64::INFINITY;
    for iter in 0..cfg.max_iter {
        let eta = &x * &beta;
        let mut g: DVector<f64> = DVector::zeros(p);
        let mut info: DMatrix<f64> = DMatrix::zeros(p, p);
        for i in 0..n {
            let w = weight_at(weights, i);
            let mu = expit(eta[i]);
            let resid = f64::from(targets[i]) - mu;
            let curv = w * mu * (1.0 - mu);
            for j in 0..p {
                g[j] += w * resid * x[(i, j)];
                for k in j..p {
                    info[(j, k)] += curv * x[(i, j)] * x[(i, k)];
                }
            }
        }
        for j in 0..p {
            info[(j, j)] += cfg.ridge;
            g[j] -= cfg.ridge * beta[j];
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
        grad_norm = g.amax();
        if grad_norm <= cfg.tol {
            let cov = info
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Singular("information matrix is not positive definite".into()))?
                .inverse();
            let se = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
            return Ok(FittedModel {
                kind: ModelKind::Logistic,
                features: map.clone(),
                coef: beta.as_slice().to_vec(),
                se,
                iterations: iter,
                grad_norm,
                sigma: None,
                ridge: cfg.ridge,
                weighted: weights.is_some(),
            });
        }
        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("information matrix is not positive definite".into()))?
            .solve(&g);
        let base = merit(&beta);
        // Expected merit gain of the full step; once it sinks toward the
        // merit's own float resolution a line search can only stall, and
        // Newton is safe anyway that close to the optimum.
        let predicted = 0.5 * g.dot(&step);
        if predicted <= 1e-8 * (1.0 + base.abs()) {
            beta += &step;
        } else {
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = &beta + &step * scale;
                if merit(&trial) > base {
                    beta = trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                // flat to machine precision; treat the current point as the optimum
                break;
            }
        }
        if beta.norm() > cfg.separation_norm {
            return Err(Error::Separation { norm: beta.norm(), limit: cfg.separation_norm });
        }
    }
    if grad_norm <= cfg.tol * 1e4 {
        // stalled line search near the optimum still counts, with honest diagnostics
        let eta = &x * &beta;
        let mut info: DMatrix<f64> = DMatrix::zeros(p, p);
        for i in 0..n {
            let mu = expit(eta[i]);
            let curv = weight_at(weights, i) * mu * (1.0 - mu);
            for j in 0..p {
                for k in j..p {
                    info[(j, k)] += curv * x[(i, j)] * x[(i, k)];
                }
            }
        }
        for j in 0..p {
            info[(j, j)] += cfg.ridge;
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
        let cov = info
            .cholesky()
            .ok_or_else(|| Error::Singular("information matrix is not positive definite".into()))?
            .inverse();
        let se = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
        return Ok(FittedModel {
            kind: ModelKind::Logistic,
            features: map.clone(),
            coef: beta.as_slice().to_vec(),
            se,
            iterations: cfg.max_iter,
            grad_norm,
            sigma: None,
            ridge: cfg.ridge,
            weighted: weights.is_some(),
        });
    }
    Err(Error::MaxIterations { iters: cfg.max_iter, grad: grad_norm })
}

/// Weighted least squares via the normal equations, with a rank check.
pub fn fit_linear(
    layout: &Layout,
    map: &FeatureMap,
    data: &Dataset,
    targets: &[f64],
    weights: Option<&[f64]>,
    cfg: &FitConfig,
) -> Result<FittedModel> {
    let x = design(layout, map, data)?;
    let n = data.n();
    let p = map.len();
    if targets.len() != n {
        return Err(Error::ShapeMismatch(format!("{} targets for {} observations", targets.len(), n)));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadData("linear targets must be finite".into()));
    }
    check_weights(weights, n)?;

    // fold weights in as sqrt scaling so the rank check sees the same system
    let mut xw = x.clone();
    let mut yw = DVector::from_column_slice(targets);
    let mut n_used = n;
    if let Some(w) = weights {
        n_used = w.iter().filter(|v| **v > 0.0).count();
        for i in 0..n {
            let s = w[i].sqrt();
            yw[i] *= s;
            for j in 0..p {
                xw[(i, j)] *= s;
            }
        }
    }
    if n_used < p {
        return Err(Error::Singular(format!("{p} coefficients but only {n_used} usable observations")));
    }

    let qr = xw.clone().col_piv_qr();
    let diag = qr.r().map_diagonal(|v| v.abs());
    let dmax = diag.max();
    if cfg.ridge == 0.0 && (dmax == 0.0 || diag.min() <= dmax * 1e-10) {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }

    let mut gram = xw.transpose() * &xw;
    for j in 0..p {
        gram[(j, j)] += cfg.ridge;
    }
    let xty = xw.transpose() * &yw;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
    let beta = chol.solve(&xty);

    // residual must be orthogonal to the (penalized) design
    let resid = &yw - &xw * &beta;
    let mut check = xw.transpose() * &resid;
    check -= &beta * cfg.ridge;
    let scale = yw.norm().max(1.0);
    if check.amax() > 1e-8 * scale {
        return Err(Error::Singular("normal equations solve failed the orthogonality check".into()));
    }

    let df = n_used.saturating_sub(p);
    if df == 0 && cfg.ridge == 0.0 && n_used == p {
        // interpolating fit; residual scale is identically zero
    }
    let rss = resid.norm_squared();
    let sigma = if df > 0 { (rss / df as f64).sqrt() } else { 0.0 };
    let cov = chol.inverse();
    let se = (0..p).map(|j| (cov[(j, j)] * sigma * sigma).sqrt()).collect();

    Ok(FittedModel {
        kind: ModelKind::Linear,
        features: map.clone(),
        coef: beta.as_slice().to_vec(),
        se,
        iterations: 1,
        grad_norm: check.amax(),
        sigma: Some(sigma),
        ridge: cfg.ridge,
        weighted: weights.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{main_factors, Factor, FeatureMap, Term};
    use crate::layout::ColRef;
    use crate::scm::simulate;
    use crate::scm::test_specs::small;

    fn propensity_map(layout: &Layout) -> FeatureMap {
        let mut terms = vec![Term::Intercept];
        terms.extend(main_factors(layout, layout.history_cols(1)).into_iter().map(Term::Single));
        FeatureMap::new(terms)
    }

    /// Deterministic dataset with exact 0.3 / 0.7 treatment frequencies by W0.
    fn frequency_data() -> Dataset {
        let layout = Layout { stages: 1, baseline_card: 2, mediator_dims: vec![1] };
        let mut w0 = Vec::new();
        let mut a = Vec::new();
        for rep in 0..10 {
            for lvl in 0..2u8 {
                let p1 = if lvl == 0 { 3 } else { 7 };
                w0.push(lvl);
                a.push(u8::from(rep < p1));
            }
        }
        let n = w0.len();
        Dataset::new(layout, vec![w0, a, vec![0; n]], vec![0.0; n]).unwrap()
    }

    #[test]
    fn saturated_logistic_recovers_exact_frequencies() {
        let data = frequency_data();
        let layout = data.layout().clone();
        let targets: Vec<u8> = data.col(1).to_vec();
        let map = propensity_map(&layout);
        let fit = fit_logistic(&layout, &map, &data, &targets, None, &FitConfig::default()).unwrap();
        assert!((fit.coef[0] - logit(0.3)).abs() < 1e-6, "{:?}", fit.coef);
        assert!((fit.predict_row(&layout, &[1, 0, 0]) - 0.7).abs() < 1e-4);
        assert!(fit.grad_norm <= 1e-8);
        assert!(!fit.weighted);
    }

    #[test]
    fn logistic_recovers_simulated_propensity() {
        let spec = small();
        let data = simulate(&spec, 50_000, 11).unwrap();
        let layout = data.layout().clone();
        let targets: Vec<u8> = data.col(layout.a_col(1)).to_vec();
        let map = propensity_map(&layout);
        let fit = fit_logistic(&layout, &map, &data, &targets, None, &FitConfig::default()).unwrap();
        assert!((fit.coef[0] - logit(0.3)).abs() < 0.06, "{:?}", fit.coef);
        assert!((fit.coef[1] - (logit(0.7) - logit(0.3))).abs() < 0.09, "{:?}", fit.coef);
        assert!(fit.se[0] > 0.0 && fit.se[0] < 0.05);
    }

    #[test]
    fn score_matches_finite_differences() {
        let spec = small();
        let data = simulate(&spec, 400, 5).unwrap();
        let layout = data.layout().clone();
        let targets: Vec<u8> = data.col(layout.a_col(1)).to_vec();
        let map = propensity_map(&layout);
        let coef = vec![0.3, -0.4];
        let weights: Vec<f64> = (0..data.n()).map(|i| 0.5 + (i % 3) as f64).collect();
        let g = logistic_score(&layout, &map, &data, &targets, Some(&weights), 0.7, &coef).unwrap();
        let h = 1e-6;
        for j in 0..coef.len() {
            let mut up = coef.clone();
            let mut dn = coef.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (logistic_loglik(&layout, &map, &data, &targets, Some(&weights), 0.7, &up)
                .unwrap()
                - logistic_loglik(&layout, &map, &data, &targets, Some(&weights), 0.7, &dn)
                    .unwrap())
                / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-5, "coord {j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn separation_is_detected() {
        // treatment exactly equals the baseline indicator
        let layout = Layout { stages: 1, baseline_card: 2, mediator_dims: vec![1] };
        let w0: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
        let a = w0.clone();
        let n = w0.len();
        let data = Dataset::new(layout.clone(), vec![w0, a, vec![0; n]], vec![0.0; n]).unwrap();
        let targets: Vec<u8> = data.col(1).to_vec();
        let map = propensity_map(&layout);
        let err = fit_logistic(&layout, &map, &data, &targets, None, &FitConfig::default());
        assert!(matches!(err, Err(Error::Separation { .. })), "{err:?}");
    }

    #[test]
    fn duplicate_column_is_singular() {
        let spec = small();
        let data = simulate(&spec, 200, 9).unwrap();
        let layout = data.layout().clone();
        let dup = FeatureMap::new(vec![
            Term::Intercept,
            Term::Single(Factor::col(ColRef::W0)),
            Term::Single(Factor::col(ColRef::W0)),
        ]);
        let y = data.y().to_vec();
        let err = fit_linear(&layout, &dup, &data, &y, None, &FitConfig::default());
        assert!(matches!(err, Err(Error::Singular(_))), "{err:?}");
        let targets: Vec<u8> = data.col(layout.a_col(1)).to_vec();
        let err = fit_logistic(&layout, &dup, &data, &targets, None, &FitConfig::default());
        assert!(matches!(err, Err(Error::Singular(_))), "{err:?}");
    }

    fn outcome_map(_layout: &Layout) -> FeatureMap {
        FeatureMap::new(vec![
            Term::Intercept,
            Term::Single(Factor::col(ColRef::W0)),
            Term::Single(Factor::col(ColRef::A(1))),
            Term::Single(Factor::col(ColRef::M(1, 0))),
            Term::Pair(Factor::col(ColRef::A(1)), Factor::col(ColRef::M(1, 0))),
        ])
    }

    #[test]
    fn noiseless_linear_fit_is_exact() {
        let spec = small();
        let mut data = simulate(&spec, 500, 3).unwrap();
        let layout = data.layout().clone();
        let map = outcome_map(&layout);
        // overwrite the outcome with an exact linear function of the features
        let truth = [1.0, 0.5, 1.0, 2.0, -0.5];
        let mut row = vec![0u8; layout.n_discrete()];
        let y: Vec<f64> = (0..data.n())
            .map(|i| {
                data.read_row(i, &mut row);
                map.dot(&layout, &row, &truth)
            })
            .collect();
        data = Dataset::new(layout.clone(), (0..layout.n_discrete()).map(|c| data.col(c).to_vec()).collect(), y.clone()).unwrap();
        let fit = fit_linear(&layout, &map, &data, &y, None, &FitConfig::default()).unwrap();
        for (b, t) in fit.coef.iter().zip(truth.iter()) {
            assert!((b - t).abs() < 1e-10, "{:?}", fit.coef);
        }
        assert!(fit.sigma.unwrap() < 1e-10);
    }

    #[test]
    fn linear_fit_recovers_outcome_surface() {
        let spec = small();
        let data = simulate(&spec, 60_000, 21).unwrap();
        let layout = data.layout().clone();
        let map = outcome_map(&layout);
        let y = data.y().to_vec();
        let fit = fit_linear(&layout, &map, &data, &y, None, &FitConfig::default()).unwrap();
        let truth = [1.0, 0.5, 1.0, 2.0, -0.5];
        for (j, t) in truth.iter().enumerate() {
            assert!((fit.coef[j] - t).abs() < 0.06, "coord {j}: {:?}", fit.coef);
        }
        let s = fit.sigma.unwrap();
        assert!((s - 1.0).abs() < 0.02, "sigma {s}");
    }

    #[test]
    fn zero_weights_match_subsetting() {
        let spec = small();
        let data = simulate(&spec, 2_000, 17).unwrap();
        let layout = data.layout().clone();
        let map = outcome_map(&layout);
        let y = data.y().to_vec();
        let keep: Vec<usize> = (0..data.n()).filter(|i| i % 3 != 0).collect();
        let weights: Vec<f64> = (0..data.n()).map(|i| f64::from(u8::from(i % 3 != 0))).collect();
        let via_weights =
            fit_linear(&layout, &map, &data, &y, Some(&weights), &FitConfig::default()).unwrap();
        let sub = data.take_rows(&keep);
        let suby = sub.y().to_vec();
        let via_subset = fit_linear(&layout, &map, &sub, &suby, None, &FitConfig::default()).unwrap();
        for (a, b) in via_weights.coef.iter().zip(via_subset.coef.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((via_weights.sigma.unwrap() - via_subset.sigma.unwrap()).abs() < 1e-10);
    }

    #[test]
    fn fitted_models_roundtrip_through_json() {
        let data = frequency_data();
        let layout = data.layout().clone();
        let targets: Vec<u8> = data.col(1).to_vec();
        let map = propensity_map(&layout);
        let fit = fit_logistic(&layout, &map, &data, &targets, None, &FitConfig::default()).unwrap();
        let text = serde_json::to_string(&fit).unwrap();
        let back: FittedModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back.coef, fit.coef);
        assert_eq!(back.kind, ModelKind::Logistic);
        let p = back.predict_row(&layout, &[0, 0, 0]);
        assert!((p - 0.3).abs() < 1e-4);
    }
}
