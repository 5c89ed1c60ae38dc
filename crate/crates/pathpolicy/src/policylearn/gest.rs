//! Structural nested mean models for the treatment-effect blips.
//!
//! The blip at each stage is the effect of treating now (and acting
//! optimally afterwards) against not treating, as a linear function of
//! history. Coefficients solve moment conditions that pair the blipped-down
//! outcome with the treatment residual, so only the propensity needs a
//! model; the outcome law stays free. Because each stage's moment involves
//! only its own and later coefficients, the system solves exactly by one
//! linear solve per stage, working backwards.
//!
//! In a path mode (single stage) the outcome is first carried to the
//! reference mediator scale by the observed-mediator density ratio; the
//! same moment then targets the path-restricted blip.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ident::{LawProvider, Mode};
use crate::layout::ColRef;
use crate::policy::{Policy, Rule};
use crate::policylearn::config::ModelConfig;
use crate::policylearn::induction::check_treatment_positivity;
use crate::policylearn::nuisance::{fit_nuisances, NuisanceSet};
use crate::policylearn::{
    mediator_ratio, named_models, BlipEstimate, Diagnostics, FitResult, Learner, WeightAudit,
};

pub fn g_estimate(data: &Dataset, mode: &Mode, config: &ModelConfig) -> Result<FitResult> {
    let layout = data.layout().clone();
    mode.validate(&layout)?;
    check_treatment_positivity(data, config.positivity_min_stratum)?;
    if matches!(mode, Mode::Path { .. }) && layout.stages != 1 {
        return Err(Error::Unsupported(
            "path-restricted blip estimation handles a single decision stage".into(),
        ));
    }
    estimate(data, mode, config)
}

struct StageDesign {
    stripped: crate::features::FeatureMap,
    /// Blip features of history alone, per row.
    x: Vec<Vec<f64>>,
    /// Treatment residual `A - p(A = 1 | H)` per row.
    resid: Vec<f64>,
    a: Vec<f64>,
}

fn estimate(data: &Dataset, mode: &Mode, config: &ModelConfig) -> Result<FitResult> {
    let layout = data.layout().clone();
    let k = layout.stages;
    let n = data.n();

    let set = NuisanceSet {
        propensity: true,
        mediator: matches!(mode, Mode::Path { .. }),
        ..NuisanceSet::default()
    };
    let nuis = fit_nuisances(data, config, set)?;

    let mut audit = WeightAudit::new(config);
    let mut row = vec![0u8; layout.n_discrete()];
    let mut scratch = Vec::new();

    // outcome on the scale the blips describe
    let outcome: Vec<f64> = match mode {
        Mode::Overall => data.y().to_vec(),
        Mode::Path { reference, mediators } => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                data.read_row(i, &mut row);
                let ratio = mediator_ratio(
                    &nuis, &layout, &row, 1, reference, mediators, &mut audit, &mut scratch,
                )?;
                out.push(audit.finish(ratio) * data.y()[i]);
            }
            out
        }
    };

    let mut designs = Vec::with_capacity(k);
    for stage in 1..=k {
        let map = config.blip_map(&layout, stage)?;
        let stripped = map.factor_out(ColRef::A(stage))?;
        let mut x = Vec::with_capacity(n);
        let mut resid = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            data.read_row(i, &mut row);
            x.push(stripped.eval(&layout, &row));
            let observed = row[layout.a_col(stage)];
            let pi = nuis.treat_prob(stage, &row)?;
            resid.push(f64::from(observed) - pi);
            a.push(f64::from(observed));
        }
        designs.push(StageDesign { stripped, x, resid, a });
    }

    // backwards, each stage a single linear solve given the later ones
    let mut psi: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut contrasts: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut regrets: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut carry = vec![0.0f64; n];
    for stage in (1..=k).rev() {
        let sd = &designs[stage - 1];
        let p = sd.stripped.len();
        let mut b = DMatrix::<f64>::zeros(p, p);
        let mut c = DVector::<f64>::zeros(p);
        for i in 0..n {
            let xi = &sd.x[i];
            let target = sd.resid[i] * (outcome[i] + carry[i]);
            let curve = sd.resid[i] * sd.a[i];
            for j in 0..p {
                c[j] += xi[j] * target;
                for l in 0..p {
                    b[(j, l)] += xi[j] * curve * xi[l];
                }
            }
        }
        let solved = b
            .lu()
            .solve(&c)
            .ok_or_else(|| Error::Singular(format!("stage {stage} blip system is singular")))?;
        let coef: Vec<f64> = solved.as_slice().to_vec();
        let mut contrast = Vec::with_capacity(n);
        let mut regret = Vec::with_capacity(n);
        for i in 0..n {
            let ct: f64 = sd.x[i].iter().zip(&coef).map(|(x, w)| x * w).sum();
            let rg = ct.max(0.0) - sd.a[i] * ct;
            carry[i] += rg;
            contrast.push(ct);
            regret.push(rg);
        }
        psi[stage - 1] = coef;
        contrasts[stage - 1] = contrast;
        regrets[stage - 1] = regret;
    }

    let se = sandwich(&designs, &psi, &contrasts, &regrets, &outcome)?;

    let value_estimate =
        (0..n).map(|i| outcome[i] + carry[i]).sum::<f64>() / n as f64;

    let rules: Vec<Rule> = designs
        .iter()
        .zip(&psi)
        .map(|(sd, coef)| Rule::LinearScore {
            features: sd.stripped.clone(),
            weights: coef.clone(),
        })
        .collect();
    let policy = Policy::new(rules);
    policy.validate(&layout)?;

    let mut diagnostics: Diagnostics = audit.into_diagnostics();
    if matches!(mode, Mode::Overall) {
        diagnostics = Diagnostics::default();
    }

    Ok(FitResult {
        learner: Learner::GEstimate,
        mode: mode.clone(),
        policy,
        value_estimate,
        blip: Some(BlipEstimate { psi, se }),
        models: named_models(&nuis),
        diagnostics,
    })
}

/// Sandwich covariance of the stacked moments, treating fitted weights and
/// propensities as fixed; the estimating equations are differentiable in
/// the coefficients except on the measure-zero tie set.
fn sandwich(
    designs: &[StageDesign],
    psi: &[Vec<f64>],
    contrasts: &[Vec<f64>],
    regrets: &[Vec<f64>],
    outcome: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let k = designs.len();
    let n = outcome.len();
    let dims: Vec<usize> = psi.iter().map(Vec::len).collect();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0usize, |acc, d| {
            let start = *acc;
            *acc += d;
            Some(start)
        })
        .collect();
    let total: usize = dims.iter().sum();

    let mut jac = DMatrix::<f64>::zeros(total, total);
    let mut omega = DMatrix::<f64>::zeros(total, total);
    let mut m = DVector::<f64>::zeros(total);
    let scale = 1.0 / n as f64;

    for i in 0..n {
        // carry of strictly later stages, per stage
        for (si, sd) in designs.iter().enumerate() {
            let later: f64 = (si + 1..k).map(|sj| regrets[sj][i]).sum();
            let g = outcome[i] + later - sd.a[i] * contrasts[si][i];
            let base = sd.resid[i];
            for j in 0..dims[si] {
                m[offsets[si] + j] = sd.x[i][j] * base * g;
            }
        }
        for r in 0..total {
            for c in 0..total {
                omega[(r, c)] += scale * m[r] * m[c];
            }
        }
        for (si, sd) in designs.iter().enumerate() {
            let base = sd.resid[i];
            for j in 0..dims[si] {
                let lead = sd.x[i][j] * base;
                // own block
                for l in 0..dims[si] {
                    jac[(offsets[si] + j, offsets[si] + l)] -=
                        scale * lead * sd.a[i] * sd.x[i][l];
                }
                // later blocks through the regret terms
                for sj in si + 1..k {
                    let slope = f64::from(contrasts[sj][i] > 0.0) - designs[sj].a[i];
                    for l in 0..dims[sj] {
                        jac[(offsets[si] + j, offsets[sj] + l)] +=
                            scale * lead * slope * designs[sj].x[i][l];
                    }
                }
            }
        }
    }

    let inv = jac
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("blip moment jacobian is singular".into()))?;
    let cov = (&inv * omega * inv.transpose()) * scale;
    let mut se = Vec::with_capacity(k);
    for (si, d) in dims.iter().enumerate() {
        se.push((0..*d).map(|j| cov[(offsets[si] + j, offsets[si] + j)].sqrt()).collect());
    }
    Ok(se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Layout;
    use crate::scm::simulate;
    use crate::scm::test_specs::small;
    use crate::scm::MediatorSelector;

    fn path_mode() -> Mode {
        Mode::Path { reference: vec![0], mediators: MediatorSelector::All }
    }

    #[test]
    fn overall_blip_matches_the_known_contrast() {
        let spec = small();
        let data = simulate(&spec, 80_000, 211).unwrap();
        let layout = data.layout().clone();
        let fit = g_estimate(&data, &Mode::Overall, &ModelConfig::default()).unwrap();
        let blip = fit.blip.as_ref().unwrap();
        // blip design order is [A1, A1*W0] so coefficients are (level, slope)
        let truth = [1.65, -0.05];
        for (j, t) in truth.iter().enumerate() {
            assert!((blip.psi[0][j] - t).abs() < 0.06, "{:?}", blip.psi);
            assert!(blip.se[0][j] > 0.0 && blip.se[0][j] < 0.1, "{:?}", blip.se);
            assert!((blip.psi[0][j] - t).abs() < 3.5 * blip.se[0][j]);
        }
        assert_eq!(fit.policy.decide(&layout, 1, &[0, 0, 0]), 1);
        assert_eq!(fit.policy.decide(&layout, 1, &[1, 0, 0]), 1);
        assert!((fit.value_estimate - 3.375).abs() < 0.05, "{}", fit.value_estimate);
    }

    #[test]
    fn path_blip_matches_the_known_contrast() {
        let spec = small();
        let data = simulate(&spec, 80_000, 223).unwrap();
        let layout = data.layout().clone();
        let fit = g_estimate(&data, &path_mode(), &ModelConfig::default()).unwrap();
        let blip = fit.blip.as_ref().unwrap();
        let truth = [0.9, -0.05];
        for (j, t) in truth.iter().enumerate() {
            assert!((blip.psi[0][j] - t).abs() < 0.06, "{:?}", blip.psi);
            assert!((blip.psi[0][j] - t).abs() < 3.5 * blip.se[0][j], "{:?}", blip.se);
        }
        assert_eq!(fit.policy.decide(&layout, 1, &[0, 0, 0]), 1);
        assert!((fit.value_estimate - 2.625).abs() < 0.05, "{}", fit.value_estimate);
        assert!(fit.models.iter().any(|m| m.role.starts_with("mediator")));
    }

    #[test]
    fn no_effect_means_no_blip() {
        let mut spec = small();
        // outcome depends on baseline only
        spec.outcome_mean = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        let data = simulate(&spec, 40_000, 227).unwrap();
        for mode in [Mode::Overall, path_mode()] {
            let fit = g_estimate(&data, &mode, &ModelConfig::default()).unwrap();
            let blip = fit.blip.as_ref().unwrap();
            for (p, s) in blip.psi[0].iter().zip(blip.se[0].iter()) {
                assert!(p.abs() < 3.5 * s, "{:?} vs {:?}", blip.psi, blip.se);
            }
            assert!((fit.value_estimate - 1.5).abs() < 0.05);
        }
    }

    #[test]
    fn path_mode_requires_one_stage() {
        let layout = Layout { stages: 2, baseline_card: 2, mediator_dims: vec![1, 1] };
        let cols: Vec<Vec<u8>> = (0..6).map(|_| vec![0, 1, 0, 1]).collect();
        let data = Dataset::new(layout, cols, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mode = Mode::Path { reference: vec![0, 0], mediators: MediatorSelector::All };
        let err = g_estimate(&data, &mode, &ModelConfig::default());
        assert!(matches!(err, Err(Error::Unsupported(_))), "{err:?}");
    }
}
