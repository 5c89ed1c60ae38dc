//! Exact identification of interventional and path-specific values.
//!
//! Everything here consumes only observational conditional laws through
//! [`LawProvider`]: the baseline marginal, treatment propensities, mediator
//! component laws, intermediate outcome laws, and the final outcome mean.
//! [`interventional_mean`] sums the identifying functional for any edge
//! intervention over all configurations of the observed columns: each factor
//! is the observational law of its column, evaluated with treatment parents
//! replaced by the values their intervened edges carry. With no intervention
//! this is the observational mean; with all edges from a stage carrying that
//! stage's decision it is the usual g-formula; with mediator edges pinned to
//! a reference history it is the value of a path-specific policy.
//!
//! [`TrueLaws`] backs the provider with a structural spec, marginalizing the
//! hidden confounder out of every outcome law via its running posterior. The
//! identity between functionals computed here and raw counterfactual means
//! computed by structural enumeration is checked end to end in the test
//! suite rather than assumed.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::layout::{ColRef, Layout};
use crate::rng::{self, StreamRng};
use crate::scm::{Intervention, MediatorSelector, PolicySource, ScmSpec};

/// Observational conditional laws of one longitudinal process.
///
/// Implementations may cover only part of the interface (a fitted propensity
/// model knows nothing about outcome means); unsupported queries return
/// [`Error::Unsupported`] so estimators can state exactly which laws they
/// need.
pub trait LawProvider: Sync {
    fn layout(&self) -> &Layout;

    /// `p(W0 = w0)`.
    fn w0_prob(&self, w0: u8) -> Result<f64>;

    /// `p(A_stage = 1 | history)`; reads the history columns of `row`.
    fn treat_prob(&self, stage: usize, row: &[u8]) -> Result<f64>;

    /// `p(M_{stage,comp} = 1 | history, treatment)`; reads history columns
    /// and the stage treatment from `row`.
    fn mediator_prob(&self, stage: usize, comp: usize, row: &[u8]) -> Result<f64>;

    /// `p(W_stage = 1 | everything earlier)` for an intermediate outcome.
    fn intermediate_prob(&self, stage: usize, row: &[u8]) -> Result<f64>;

    /// `E[W_K | everything earlier]`.
    fn outcome_mean(&self, row: &[u8]) -> Result<f64>;
}

/// What a learned regime is optimized for: the overall mean outcome, or the
/// outcome reached only through treatment's non-mediator pathways, holding
/// selected mediator components at a fixed reference history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Overall,
    Path { reference: Vec<u8>, mediators: MediatorSelector },
}

impl Mode {
    pub fn validate(&self, layout: &Layout) -> Result<()> {
        if let Mode::Path { reference, mediators } = self {
            mediators.validate(layout)?;
            if reference.len() != layout.stages {
                return Err(Error::Config(format!(
                    "reference has {} entries for {} stages",
                    reference.len(),
                    layout.stages
                )));
            }
            if reference.iter().any(|&a| a > 1) {
                return Err(Error::Config("reference treatments must be binary".into()));
            }
        }
        Ok(())
    }

    /// The intervention whose mean defines this mode's value for `source`.
    pub fn intervention(&self, source: &PolicySource) -> Intervention {
        match self {
            Mode::Overall => Intervention::Treatments(source.clone()),
            Mode::Path { reference, mediators } => Intervention::Path {
                policy: source.clone(),
                reference: reference.clone(),
                mediators: mediators.clone(),
            },
        }
    }
}

/// Hard cap on enumeration size; exceeding it is a configuration error.
pub const TERM_BUDGET: u128 = 1 << 24;

/// Mean outcome in the world `intervention` induces, by exact summation.
pub fn interventional_mean(provider: &dyn LawProvider, intervention: &Intervention) -> Result<f64> {
    enumerate(provider, intervention, TERM_BUDGET, Leaf::OutcomeMean)
}

/// As [`interventional_mean`] with an explicit term budget.
pub fn interventional_mean_budgeted(
    provider: &dyn LawProvider,
    intervention: &Intervention,
    budget: u128,
) -> Result<f64> {
    enumerate(provider, intervention, budget, Leaf::OutcomeMean)
}

/// Total probability mass of the identifying functional; equals one for any
/// valid provider and intervention, which makes it a cheap integrity check.
pub fn total_mass(provider: &dyn LawProvider, intervention: &Intervention) -> Result<f64> {
    enumerate(provider, intervention, TERM_BUDGET, Leaf::Unit)
}

pub fn observational_mean(provider: &dyn LawProvider) -> Result<f64> {
    interventional_mean(provider, &Intervention::none())
}

/// Value of setting every treatment by `source` (g-formula).
pub fn g_value(provider: &dyn LawProvider, source: &PolicySource) -> Result<f64> {
    interventional_mean(provider, &Intervention::Treatments(source.clone()))
}

/// Mean outcome under a direct edge assignment.
pub fn edge_g_value(provider: &dyn LawProvider, intervention: &Intervention) -> Result<f64> {
    match intervention {
        Intervention::Edges(_) => interventional_mean(provider, intervention),
        _ => Err(Error::Config("edge_g_value expects an edge assignment".into())),
    }
}

/// Value of running `source` along non-mediator paths while the selected
/// mediator components see the fixed `reference` history.
pub fn path_policy_value(
    provider: &dyn LawProvider,
    source: &PolicySource,
    reference: &[u8],
    mediators: &MediatorSelector,
) -> Result<f64> {
    interventional_mean(
        provider,
        &Intervention::Path {
            policy: source.clone(),
            reference: reference.to_vec(),
            mediators: mediators.clone(),
        },
    )
}

/// Value of `source` under `mode`.
pub fn mode_value(provider: &dyn LawProvider, source: &PolicySource, mode: &Mode) -> Result<f64> {
    interventional_mean(provider, &mode.intervention(source))
}

#[derive(Clone, Copy)]
enum Leaf {
    OutcomeMean,
    Unit,
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

#[derive(Clone, Copy, Default)]
struct StageValues {
    natural: Option<u8>,
    decision: Option<u8>,
}

impl StageValues {
    fn resolve(&self, source: crate::scm::intervention::EdgeSource) -> u8 {
        use crate::scm::intervention::EdgeSource;
        match source {
            EdgeSource::Natural => self.natural.expect("natural value enumerated"),
            EdgeSource::Fixed(v) => v,
            EdgeSource::Decision => self.decision.expect("decision computed"),
        }
    }
}

struct Enumerator<'a> {
    provider: &'a dyn LawProvider,
    layout: &'a Layout,
    plan: &'a crate::scm::intervention::Plan,
    leaf: Leaf,
    row: Vec<u8>,
    view: Vec<u8>,
    values: Vec<StageValues>,
    acc: Kahan,
}

fn enumerate(
    provider: &dyn LawProvider,
    intervention: &Intervention,
    budget: u128,
    leaf: Leaf,
) -> Result<f64> {
    let layout = provider.layout();
    let plan = intervention.lower(layout)?;

    let mut required = u128::from(layout.baseline_card);
    for stage in 1..=layout.stages {
        let branches = match plan.stage(stage) {
            None => 2,
            Some(sp) if sp.needs_natural => 2,
            Some(_) => 1,
        };
        // treatment, then one binary branch per mediator component and
        // intermediate outcome
        let binaries = layout.mediator_dims[stage - 1] + usize::from(stage < layout.stages);
        required = required
            .saturating_mul(branches)
            .saturating_mul(1u128 << binaries.min(127));
    }
    if required > budget {
        return Err(Error::CardinalityOverflow { required, budget });
    }

    let mut e = Enumerator {
        provider,
        layout,
        plan: &plan,
        leaf,
        row: vec![0; layout.n_discrete()],
        view: vec![0; layout.n_discrete()],
        values: vec![StageValues::default(); layout.stages],
        acc: Kahan::default(),
    };
    e.descend(0, 1.0)?;
    Ok(e.acc.sum)
}

impl Enumerator<'_> {
    /// Fill `view` with what the vertex at `target` sees: realized values,
    /// intervened treatments replaced by their edge values into `target`.
    fn build_view(&mut self, target: usize) {
        self.view[..target].copy_from_slice(&self.row[..target]);
        for stage in 1..=self.layout.stages {
            let a = self.layout.a_col(stage);
            if a >= target {
                break;
            }
            if let Some(sp) = self.plan.stage(stage) {
                self.view[a] = self.values[stage - 1].resolve(sp.edge_into(target));
            }
        }
    }

    fn descend(&mut self, col: usize, weight: f64) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        if col == self.layout.n_discrete() {
            self.build_view(self.layout.outcome_col());
            let value = match self.leaf {
                Leaf::OutcomeMean => self.provider.outcome_mean(&self.view)?,
                Leaf::Unit => 1.0,
            };
            self.acc.add(weight * value);
            return Ok(());
        }
        match self.layout.col_ref(col) {
            ColRef::W0 => {
                for v in 0..self.layout.baseline_card {
                    let p = self.provider.w0_prob(v)?;
                    self.row[0] = v;
                    self.descend(1, weight * p)?;
                }
            }
            ColRef::A(stage) => {
                self.build_view(col);
                match self.plan.stage(stage) {
                    None => {
                        let p1 = self.provider.treat_prob(stage, &self.view)?;
                        for a in 0..2u8 {
                            self.row[col] = a;
                            let p = if a == 1 { p1 } else { 1.0 - p1 };
                            self.descend(col + 1, weight * p)?;
                        }
                    }
                    Some(sp) => {
                        let decision = sp.needs_decision.then(|| {
                            let f = self.plan.policy.as_ref().expect("plan carries policy");
                            f.decide(self.layout, stage, &self.view)
                        });
                        let emit = sp.edge_into(self.layout.w_col(stage));
                        if sp.needs_natural {
                            let p1 = self.provider.treat_prob(stage, &self.view)?;
                            for a in 0..2u8 {
                                let vals = StageValues { natural: Some(a), decision };
                                self.values[stage - 1] = vals;
                                self.row[col] = vals.resolve(emit);
                                let p = if a == 1 { p1 } else { 1.0 - p1 };
                                self.descend(col + 1, weight * p)?;
                            }
                        } else {
                            let vals = StageValues { natural: None, decision };
                            self.values[stage - 1] = vals;
                            self.row[col] = vals.resolve(emit);
                            self.descend(col + 1, weight)?;
                        }
                    }
                }
            }
            ColRef::M(stage, comp) => {
                self.build_view(col);
                let p1 = self.provider.mediator_prob(stage, comp, &self.view)?;
                for m in 0..2u8 {
                    self.row[col] = m;
                    let p = if m == 1 { p1 } else { 1.0 - p1 };
                    self.descend(col + 1, weight * p)?;
                }
            }
            ColRef::W(stage) => {
                self.build_view(col);
                let p1 = self.provider.intermediate_prob(stage, &self.view)?;
                for w in 0..2u8 {
                    self.row[col] = w;
                    let p = if w == 1 { p1 } else { 1.0 - p1 };
                    self.descend(col + 1, weight * p)?;
                }
            }
        }
        Ok(())
    }
}

/// Observational laws of a structural spec, with the hidden confounder
/// marginalized out of every outcome law.
pub struct TrueLaws {
    spec: ScmSpec,
    layout: Layout,
}

impl TrueLaws {
    pub fn new(spec: &ScmSpec) -> Result<Self> {
        let layout = spec.validate()?;
        Ok(TrueLaws { spec: spec.clone(), layout })
    }

    pub fn spec(&self) -> &ScmSpec {
        &self.spec
    }

    /// Unnormalized posterior over confounder values given the outcome
    /// columns of `row` strictly before column `before`. Treatment and
    /// mediator factors do not involve the confounder and cancel.
    fn posterior(&self, row: &[u8], before: usize) -> Vec<f64> {
        let mut wt: Vec<f64> = self.spec.u_marginal().to_vec();
        if before > 0 {
            for (u, w) in wt.iter_mut().enumerate() {
                *w *= self.spec.w0[u][row[0] as usize];
            }
        }
        for stage in 1..self.layout.stages {
            let c = self.layout.w_col(stage);
            if c >= before {
                break;
            }
            for (u, w) in wt.iter_mut().enumerate() {
                let p1 = self.spec.intermediate_prob(&self.layout, stage, u, row);
                *w *= if row[c] == 1 { p1 } else { 1.0 - p1 };
            }
        }
        wt
    }

    fn mix(&self, row: &[u8], before: usize, per_u: impl Fn(usize) -> f64) -> Result<f64> {
        let wt = self.posterior(row, before);
        let mass: f64 = wt.iter().sum();
        if mass <= 0.0 {
            return Err(Error::PositivityFailure(
                "conditioning on a zero-probability history".into(),
            ));
        }
        Ok(wt.iter().enumerate().map(|(u, w)| w * per_u(u)).sum::<f64>() / mass)
    }

    /// Sample the working distribution in which treatments stay
    /// observational but selected mediator components see the fixed
    /// `reference` history. Row by row the draw follows that factorization
    /// directly, resampling the confounder from its running posterior for
    /// outcome columns, so it shares nothing with the edge-intervened
    /// structural sampler it is checked against.
    pub fn simulate_tilde(
        &self,
        reference: &[u8],
        mediators: &MediatorSelector,
        n: usize,
        seed: u64,
    ) -> Result<Dataset> {
        use rayon::prelude::*;
        Mode::Path { reference: reference.to_vec(), mediators: mediators.clone() }
            .validate(&self.layout)?;
        let rng = StreamRng::new(seed);
        let rows: Vec<(Vec<u8>, f64)> = (0..n)
            .into_par_iter()
            .map(|r| self.draw_tilde_row(reference, mediators, &rng, r as u64))
            .collect();
        let mut cols = vec![Vec::with_capacity(n); self.layout.n_discrete()];
        let mut y = Vec::with_capacity(n);
        for (row, out) in rows {
            for (c, v) in row.into_iter().enumerate() {
                cols[c].push(v);
            }
            y.push(out);
        }
        Dataset::new(self.layout.clone(), cols, y)
    }

    fn draw_tilde_row(
        &self,
        reference: &[u8],
        mediators: &MediatorSelector,
        rng: &StreamRng,
        r: u64,
    ) -> (Vec<u8>, f64) {
        let layout = &self.layout;
        let mut row = vec![0u8; layout.n_discrete()];
        let mut scratch = vec![0u8; layout.n_discrete()];
        let w0_marg: Vec<f64> = (0..layout.baseline_card)
            .map(|v| self.w0_prob(v).expect("valid spec"))
            .collect();
        row[0] = rng::categorical(&mut rng.at(r, 1), &w0_marg);
        for stage in 1..=layout.stages {
            let a = layout.a_col(stage);
            let p = self.spec.treat_prob(layout, stage, &row);
            row[a] = rng::bernoulli(&mut rng.at(r, a as u32 + 1), p);
            for comp in 0..layout.mediator_dims[stage - 1] {
                let c = layout.m_col(stage, comp);
                scratch[..c].copy_from_slice(&row[..c]);
                if mediators.selects(stage, comp) {
                    for s in 1..=stage {
                        scratch[layout.a_col(s)] = reference[s - 1];
                    }
                }
                let p = self.spec.mediator_prob(layout, stage, comp, &scratch);
                row[c] = rng::bernoulli(&mut rng.at(r, c as u32 + 1), p);
            }
            if stage < layout.stages {
                let c = layout.w_col(stage);
                let p = self.intermediate_prob(stage, &row).expect("reachable history");
                row[c] = rng::bernoulli(&mut rng.at(r, c as u32 + 1), p);
            }
        }
        // final outcome: confounder from its posterior, then the Gaussian
        let wt = self.posterior(&row, layout.outcome_col());
        let mass: f64 = wt.iter().sum();
        let probs: Vec<f64> = wt.iter().map(|w| w / mass).collect();
        let u = rng::categorical(&mut rng.at(r, 0), &probs) as usize;
        let mean = self.spec.outcome_mean_at(layout, u, &row);
        let y = rng::gaussian(
            &mut rng.at(r, layout.outcome_col() as u32 + 1),
            mean,
            self.spec.outcome_sigma,
        );
        (row, y)
    }
}

impl LawProvider for TrueLaws {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn w0_prob(&self, w0: u8) -> Result<f64> {
        let m = self.spec.u_marginal();
        Ok((0..self.spec.u_card()).map(|u| m[u] * self.spec.w0[u][w0 as usize]).sum())
    }

    fn treat_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        Ok(self.spec.treat_prob(&self.layout, stage, row))
    }

    fn mediator_prob(&self, stage: usize, comp: usize, row: &[u8]) -> Result<f64> {
        Ok(self.spec.mediator_prob(&self.layout, stage, comp, row))
    }

    fn intermediate_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        self.mix(row, self.layout.w_col(stage), |u| {
            self.spec.intermediate_prob(&self.layout, stage, u, row)
        })
    }

    fn outcome_mean(&self, row: &[u8]) -> Result<f64> {
        self.mix(row, self.layout.outcome_col(), |u| {
            self.spec.outcome_mean_at(&self.layout, u, row)
        })
    }
}

/// A provider view of the working distribution for a path mode: treatments,
/// outcomes, and unselected mediator components keep their observational
/// laws, while selected components are evaluated at the reference history.
pub struct TildeView<'a> {
    inner: &'a dyn LawProvider,
    reference: Vec<u8>,
    mediators: MediatorSelector,
}

impl<'a> TildeView<'a> {
    pub fn new(
        inner: &'a dyn LawProvider,
        reference: &[u8],
        mediators: &MediatorSelector,
    ) -> Result<Self> {
        Mode::Path { reference: reference.to_vec(), mediators: mediators.clone() }
            .validate(inner.layout())?;
        Ok(TildeView { inner, reference: reference.to_vec(), mediators: mediators.clone() })
    }
}

impl LawProvider for TildeView<'_> {
    fn layout(&self) -> &Layout {
        self.inner.layout()
    }

    fn w0_prob(&self, w0: u8) -> Result<f64> {
        self.inner.w0_prob(w0)
    }

    fn treat_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        self.inner.treat_prob(stage, row)
    }

    fn mediator_prob(&self, stage: usize, comp: usize, row: &[u8]) -> Result<f64> {
        if !self.mediators.selects(stage, comp) {
            return self.inner.mediator_prob(stage, comp, row);
        }
        let layout = self.inner.layout();
        let mut r = row.to_vec();
        for s in 1..=stage {
            r[layout.a_col(s)] = self.reference[s - 1];
        }
        self.inner.mediator_prob(stage, comp, &r)
    }

    fn intermediate_prob(&self, stage: usize, row: &[u8]) -> Result<f64> {
        self.inner.intermediate_prob(stage, row)
    }

    fn outcome_mean(&self, row: &[u8]) -> Result<f64> {
        self.inner.outcome_mean(row)
    }
}
