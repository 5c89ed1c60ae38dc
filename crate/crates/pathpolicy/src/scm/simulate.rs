//! Forward sampling, observational and intervened.
//!
//! Each (row, vertex) pair owns a fixed counter-based generator slot, so a
//! draw depends only on the seed, the row index, and the vertex, never on
//! how many other draws happened. Simulating under the do-nothing
//! intervention therefore reproduces the observational dataset bit for bit,
//! and a counterfactual run is coupled draw-by-draw to its observational
//! counterpart.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::layout::Layout;
use crate::rng::{self, StreamRng};

use super::intervention::{EdgeSource, Intervention, Plan, StagePlan};
use super::ScmSpec;

/// Vertex id for a discrete column; slot 0 is reserved for the confounder.
fn vertex(col: usize) -> u32 {
    col as u32 + 1
}

/// Draw an observational dataset.
pub fn simulate(spec: &ScmSpec, n: usize, seed: u64) -> Result<Dataset> {
    let layout = spec.validate()?;
    let rng = StreamRng::new(seed);
    let rows: Vec<(Vec<u8>, f64)> = (0..n)
        .into_par_iter()
        .map(|r| draw_observational(spec, &layout, &rng, r as u64))
        .collect();
    assemble(layout, rows)
}

/// Draw a dataset from the world the intervention induces. Treatment
/// columns record the value carried on the edge into the same stage's
/// outcome; the confounder, when present, is marginalized out by sampling
/// and never emitted.
pub fn simulate_counterfactual(
    spec: &ScmSpec,
    intervention: &Intervention,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let layout = spec.validate()?;
    let plan = intervention.lower(&layout)?;
    let rng = StreamRng::new(seed);
    let rows: Vec<(Vec<u8>, f64)> = (0..n)
        .into_par_iter()
        .map(|r| draw_intervened(spec, &layout, &plan, &rng, r as u64))
        .collect();
    assemble(layout, rows)
}

fn assemble(layout: Layout, rows: Vec<(Vec<u8>, f64)>) -> Result<Dataset> {
    let n_discrete = layout.n_discrete();
    let mut cols = vec![Vec::with_capacity(rows.len()); n_discrete];
    let mut y = Vec::with_capacity(rows.len());
    for (row, out) in rows {
        for (c, v) in row.into_iter().enumerate() {
            cols[c].push(v);
        }
        y.push(out);
    }
    Dataset::new(layout, cols, y)
}

fn draw_observational(spec: &ScmSpec, layout: &Layout, rng: &StreamRng, r: u64) -> (Vec<u8>, f64) {
    let u = draw_u(spec, rng, r);
    let mut row = vec![0u8; layout.n_discrete()];
    row[0] = rng::categorical(&mut rng.at(r, vertex(0)), &spec.w0[u]);
    for stage in 1..=layout.stages {
        let a = layout.a_col(stage);
        row[a] = rng::bernoulli(&mut rng.at(r, vertex(a)), spec.treat_prob(layout, stage, &row));
        for comp in 0..layout.mediator_dims[stage - 1] {
            let c = layout.m_col(stage, comp);
            let p = spec.mediator_prob(layout, stage, comp, &row);
            row[c] = rng::bernoulli(&mut rng.at(r, vertex(c)), p);
        }
        if stage < layout.stages {
            let c = layout.w_col(stage);
            let p = spec.intermediate_prob(layout, stage, u, &row);
            row[c] = rng::bernoulli(&mut rng.at(r, vertex(c)), p);
        }
    }
    let mean = spec.outcome_mean_at(layout, u, &row);
    let y = rng::gaussian(&mut rng.at(r, vertex(layout.outcome_col())), mean, spec.outcome_sigma);
    (row, y)
}

fn draw_u(spec: &ScmSpec, rng: &StreamRng, r: u64) -> usize {
    match &spec.confounder {
        None => 0,
        Some(c) => rng::categorical(&mut rng.at(r, 0), &c.marginal) as usize,
    }
}

/// Per-stage values an intervened treatment can hand to its edges.
#[derive(Clone, Copy, Default)]
struct StageValues {
    natural: Option<u8>,
    decision: Option<u8>,
}

impl StageValues {
    fn resolve(&self, source: EdgeSource) -> u8 {
        match source {
            EdgeSource::Natural => self.natural.expect("natural value drawn"),
            EdgeSource::Fixed(v) => v,
            EdgeSource::Decision => self.decision.expect("decision computed"),
        }
    }
}

fn draw_intervened(
    spec: &ScmSpec,
    layout: &Layout,
    plan: &Plan,
    rng: &StreamRng,
    r: u64,
) -> (Vec<u8>, f64) {
    let u = draw_u(spec, rng, r);
    let mut row = vec![0u8; layout.n_discrete()];
    let mut view = vec![0u8; layout.n_discrete()];
    let mut values = vec![StageValues::default(); layout.stages];
    row[0] = rng::categorical(&mut rng.at(r, vertex(0)), &spec.w0[u]);

    // What `target` sees: realized values, with each intervened treatment
    // replaced by the value on its edge into `target`.
    let build_view = |row: &[u8], values: &[StageValues], view: &mut [u8], target: usize| {
        view[..target].copy_from_slice(&row[..target]);
        for stage in 1..=layout.stages {
            let a = layout.a_col(stage);
            if a >= target {
                break;
            }
            if let Some(sp) = plan.stage(stage) {
                view[a] = values[stage - 1].resolve(sp.edge_into(target));
            }
        }
    };

    for stage in 1..=layout.stages {
        let a = layout.a_col(stage);
        build_view(&row, &values, &mut view, a);
        match plan.stage(stage) {
            None => {
                let p = spec.treat_prob(layout, stage, &view);
                row[a] = rng::bernoulli(&mut rng.at(r, vertex(a)), p);
            }
            Some(sp) => {
                row[a] = resolve_stage(spec, layout, plan, sp, stage, &view, rng, r, &mut values);
            }
        }
        for comp in 0..layout.mediator_dims[stage - 1] {
            let c = layout.m_col(stage, comp);
            build_view(&row, &values, &mut view, c);
            let p = spec.mediator_prob(layout, stage, comp, &view);
            row[c] = rng::bernoulli(&mut rng.at(r, vertex(c)), p);
        }
        if stage < layout.stages {
            let c = layout.w_col(stage);
            build_view(&row, &values, &mut view, c);
            let p = spec.intermediate_prob(layout, stage, u, &view);
            row[c] = rng::bernoulli(&mut rng.at(r, vertex(c)), p);
        }
    }

    let out_col = layout.outcome_col();
    build_view(&row, &values, &mut view, out_col);
    let mean = spec.outcome_mean_at(layout, u, &view);
    let y = rng::gaussian(&mut rng.at(r, vertex(out_col)), mean, spec.outcome_sigma);
    (row, y)
}

/// Draw or decide the values an intervened stage needs and return the one
/// it emits (the edge into its own outcome).
#[allow(clippy::too_many_arguments)]
fn resolve_stage(
    spec: &ScmSpec,
    layout: &Layout,
    plan: &Plan,
    sp: &StagePlan,
    stage: usize,
    view: &[u8],
    rng: &StreamRng,
    r: u64,
    values: &mut [StageValues],
) -> u8 {
    let a = layout.a_col(stage);
    if sp.needs_natural {
        let p = spec.treat_prob(layout, stage, view);
        values[stage - 1].natural = Some(rng::bernoulli(&mut rng.at(r, vertex(a)), p));
    }
    if sp.needs_decision {
        let f = plan.policy.as_ref().expect("plan with decisions carries a policy");
        values[stage - 1].decision = Some(f.decide(layout, stage, view));
    }
    values[stage - 1].resolve(sp.edge_into(layout.w_col(stage)))
}
