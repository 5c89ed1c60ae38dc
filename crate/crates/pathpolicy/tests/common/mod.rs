//! Seeded random processes, policies and interventions shared by the
//! integration suites. Probabilities stay well inside (0, 1) so positivity
//! holds, and every draw comes from the caller's generator, so a failing
//! case replays from its seed.
//!
//! Each suite links its own copy, so not every helper is used everywhere.
#![allow(dead_code)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathpolicy::layout::{ColRef, Layout};
use pathpolicy::policy::{Policy, Rule};
use pathpolicy::scm::{
    Confounder, EdgeAssignment, Intervention, MediatorSelector, PolicySource, ScmSpec, StageLaw,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn pick(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((uniform(rng) * n as f64) as usize).min(n - 1)
}

pub fn bit(rng: &mut ChaCha8Rng) -> u8 {
    (rng.next_u64() & 1) as u8
}

fn prob(rng: &mut ChaCha8Rng) -> f64 {
    0.05 + 0.9 * uniform(rng)
}

fn simplex(rng: &mut ChaCha8Rng, card: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..card).map(|_| 0.05 + uniform(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A random hidden-confounder process with the given number of stages.
pub fn random_spec(rng: &mut ChaCha8Rng, stages: usize) -> ScmSpec {
    let baseline_card = 2 + pick(rng, 2) as u8;
    let mediator_dims = (0..stages).map(|_| 1 + pick(rng, 2)).collect();
    random_spec_with(rng, stages, baseline_card, mediator_dims)
}

/// Same process family with the shape pinned by the caller.
pub fn random_spec_with(
    rng: &mut ChaCha8Rng,
    stages: usize,
    baseline_card: u8,
    mediator_dims: Vec<usize>,
) -> ScmSpec {
    let u_card = 2 + pick(rng, 2) as u8;
    let layout = Layout::new(stages, baseline_card, mediator_dims.clone()).unwrap();

    let w0 = (0..u_card).map(|_| simplex(rng, baseline_card as usize)).collect();
    let stage_laws = (1..=stages)
        .map(|stage| {
            let treatment = (0..layout.stratum_count(stage)).map(|_| prob(rng)).collect();
            let mediators = (0..mediator_dims[stage - 1])
                .map(|_| {
                    let rows = layout.config_count(0..layout.a_col(stage) + 1);
                    (0..rows).map(|_| prob(rng)).collect()
                })
                .collect();
            let intermediate = (stage < stages).then(|| {
                let rows = layout.config_count(0..layout.w_col(stage));
                (0..u_card as usize * rows).map(|_| prob(rng)).collect()
            });
            StageLaw { treatment, mediators, intermediate }
        })
        .collect();
    let outcome_rows = layout.config_count(0..layout.outcome_col());
    let outcome_mean = (0..u_card as usize * outcome_rows)
        .map(|_| 4.0 * uniform(rng) - 2.0)
        .collect();

    let spec = ScmSpec {
        stages,
        baseline_card,
        mediator_dims,
        positivity_floor: 0.01,
        confounder: Some(Confounder { card: u_card, marginal: simplex(rng, u_card as usize) }),
        w0,
        stage_laws,
        outcome_mean,
        outcome_sigma: 0.3 + uniform(rng),
    };
    spec.validate().expect("generated spec is valid");
    spec
}

pub fn random_policy(rng: &mut ChaCha8Rng, layout: &Layout) -> Policy {
    let rules = (1..=layout.stages)
        .map(|stage| Rule::Table {
            actions: (0..layout.stratum_count(stage)).map(|_| bit(rng)).collect(),
        })
        .collect();
    Policy::new(rules)
}

pub fn random_source(rng: &mut ChaCha8Rng, layout: &Layout) -> PolicySource {
    if bit(rng) == 0 {
        PolicySource::Observational
    } else {
        PolicySource::Policy(random_policy(rng, layout))
    }
}

pub fn random_reference(rng: &mut ChaCha8Rng, stages: usize) -> Vec<u8> {
    (0..stages).map(|_| bit(rng)).collect()
}

/// A nonempty mediator selection; half the time everything.
pub fn random_selector(rng: &mut ChaCha8Rng, layout: &Layout) -> MediatorSelector {
    if bit(rng) == 0 {
        return MediatorSelector::All;
    }
    let all: Vec<(usize, usize)> = (1..=layout.stages)
        .flat_map(|s| (0..layout.mediator_dims[s - 1]).map(move |c| (s, c)))
        .collect();
    let mut chosen: Vec<(usize, usize)> =
        all.iter().copied().filter(|_| bit(rng) == 1).collect();
    if chosen.is_empty() {
        chosen.push(all[pick(rng, all.len())]);
    }
    MediatorSelector::Components(chosen)
}

pub fn random_path_intervention(rng: &mut ChaCha8Rng, layout: &Layout) -> Intervention {
    Intervention::Path {
        policy: random_source(rng, layout),
        reference: random_reference(rng, layout.stages),
        mediators: random_selector(rng, layout),
    }
}

/// A random edge intervention. When the process is confounded, every edge
/// from one treatment into an intermediate or final outcome carries one
/// common value: those columns share the hidden cause, so conditionals
/// evaluated at clashing edge values would not correspond to any single
/// counterfactual world.
pub fn random_edge_intervention(
    rng: &mut ChaCha8Rng,
    layout: &Layout,
    confounded: bool,
) -> Intervention {
    let mut edges = Vec::new();
    for from_stage in 1..=layout.stages {
        if uniform(rng) < 0.3 {
            continue;
        }
        let w_common = bit(rng);
        for col in layout.a_col(from_stage) + 1..layout.n_cols() {
            let to = layout.col_ref(col);
            let value = match to {
                ColRef::W(_) if confounded => w_common,
                _ => bit(rng),
            };
            edges.push(EdgeAssignment { from_stage, to, value });
        }
    }
    Intervention::Edges(edges)
}
