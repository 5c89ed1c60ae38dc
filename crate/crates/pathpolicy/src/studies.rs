//! Reproducible worked examples.
//!
//! Each study fixes a known data-generating process, simulates one dataset,
//! runs the relevant learners or searches in both the overall and the
//! path-restricted mode, and writes everything an inspection needs: the
//! data, one JSON file per fit, and a comparison table of bootstrap
//! intervals. Given the same options a study writes byte-identical files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evalboot::{bootstrap_ci, ComparisonTable};
use crate::ident::Mode;
use crate::layout::ColRef;
use crate::policy::{Direction, Policy, Rule};
use crate::policylearn::{fit, value_search, Learner, ModelConfig, ValueEstimator};
use crate::scm::{simulate, Confounder, MediatorSelector, ScmSpec, StageLaw};

/// One stage, binary baseline, one mediator component. The mediator carries
/// a large share of the treatment effect, so the overall and path-restricted
/// optima have visibly different values.
pub fn toy1_spec() -> ScmSpec {
    ScmSpec {
        stages: 1,
        baseline_card: 2,
        mediator_dims: vec![1],
        positivity_floor: 0.01,
        confounder: None,
        w0: vec![vec![0.5, 0.5]],
        stage_laws: vec![StageLaw {
            treatment: vec![0.3, 0.7],
            mediators: vec![vec![0.2, 0.7, 0.3, 0.8]],
            intermediate: None,
        }],
        // mean indexed by (W0, A1, M1_1), W0 most significant
        outcome_mean: vec![1.0, 3.0, 2.0, 3.5, 1.5, 3.5, 2.5, 4.0],
        outcome_sigma: 1.0,
    }
}

/// Two stages with every dependence the layout allows except two deliberate
/// gaps: the second mediator reads only the latest state, and nothing is
/// confounded. All conditionals stay linear on the logistic or mean scale,
/// so the default model recipes are correctly specified.
pub fn toy2_spec() -> ScmSpec {
    let expit = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut w1 = Vec::with_capacity(8);
    let mut a2 = Vec::with_capacity(16);
    let mut m2 = Vec::with_capacity(32);
    let mut outcome = Vec::with_capacity(64);
    for w0 in 0..2 {
        for a1 in 0..2 {
            for m1 in 0..2 {
                let (w0f, a1f, m1f) = (f64::from(w0), f64::from(a1), f64::from(m1));
                w1.push(expit(-0.4 + 0.5 * w0f + 0.7 * a1f + 0.6 * m1f));
                for w1v in 0..2 {
                    let w1f = f64::from(w1v);
                    a2.push(expit(-0.3 + 0.3 * w0f + 0.4 * a1f + 0.3 * m1f + 0.5 * w1f));
                    for a2v in 0..2 {
                        let a2f = f64::from(a2v);
                        m2.push(0.35 + 0.3 * a2f + 0.1 * w1f + 0.05 * a2f * w1f);
                        for m2v in 0..2 {
                            let m2f = f64::from(m2v);
                            outcome.push(
                                0.3 + 0.4 * w0f + 0.3 * a1f + 0.4 * m1f + 0.5 * w1f
                                    + 0.9 * a2f + 1.1 * m2f - 0.7 * a2f * m2f,
                            );
                        }
                    }
                }
            }
        }
    }
    ScmSpec {
        stages: 2,
        baseline_card: 2,
        mediator_dims: vec![1, 1],
        positivity_floor: 0.01,
        confounder: None,
        w0: vec![vec![0.5, 0.5]],
        stage_laws: vec![
            StageLaw {
                treatment: vec![0.4, 0.6],
                mediators: vec![vec![0.3, 0.6, 0.4, 0.75]],
                intermediate: Some(w1),
            },
            StageLaw { treatment: a2, mediators: vec![m2], intermediate: None },
        ],
        outcome_mean: outcome,
        outcome_sigma: 1.0,
    }
}

/// One stage, six baseline levels. Treatment helps directly but suppresses
/// a beneficial mediator, and its direct benefit decays with the baseline.
/// Treating everyone whose baseline is below a cutoff is optimal at cutoff
/// 3 overall but cutoff 4 (or, tied, 5) once the mediator response is
/// pinned to its untreated law: silencing the suppression makes treatment
/// worth extending to one more level.
pub fn counter_spec() -> ScmSpec {
    let mut mediators = Vec::with_capacity(12);
    let mut outcome = Vec::with_capacity(24);
    for k in 0..6 {
        let kf = f64::from(k);
        for a in 0..2 {
            let af = f64::from(a);
            mediators.push(0.75 - 0.35 * af + 0.02 * kf);
            for m in 0..2 {
                outcome.push(0.3 * kf + af - 0.25 * af * kf + 1.2 * f64::from(m));
            }
        }
    }
    ScmSpec {
        stages: 1,
        baseline_card: 6,
        mediator_dims: vec![1],
        positivity_floor: 0.01,
        confounder: None,
        w0: vec![vec![1.0 / 6.0; 6]],
        stage_laws: vec![StageLaw {
            treatment: (0..6).map(|k| 0.65 - 0.05 * f64::from(k)).collect(),
            mediators: vec![mediators],
            intermediate: None,
        }],
        outcome_mean: outcome,
        outcome_sigma: 0.8,
    }
}

/// The toy1 process with the outcome cut loose from treatment and mediator;
/// every blip and every contrast is exactly zero.
pub fn null_effect_spec() -> ScmSpec {
    let mut spec = toy1_spec();
    spec.outcome_mean = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
    spec
}

/// Hidden-confounder variant of toy1; observational adjustment is biased
/// here, which negative-control checks rely on.
pub fn confounded_spec() -> ScmSpec {
    let mut spec = toy1_spec();
    spec.confounder = Some(Confounder { card: 2, marginal: vec![0.6, 0.4] });
    spec.w0 = vec![vec![0.7, 0.3], vec![0.2, 0.8]];
    spec.outcome_mean = (0..16).map(|i| (i % 8) as f64 * 0.5 + (i / 8) as f64).collect();
    spec
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Toy1,
    Toy2,
    Counter,
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy1" => Ok(Study::Toy1),
            "toy2" => Ok(Study::Toy2),
            "counter" => Ok(Study::Counter),
            other => Err(Error::Config(format!(
                "unknown study '{other}' (expected toy1, toy2 or counter)"
            ))),
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Study::Toy1 => "toy1",
            Study::Toy2 => "toy2",
            Study::Counter => "counter",
        })
    }
}

/// Overrides for a study's sample size, replicate count and seed.
#[derive(Debug, Clone, Copy, Default)]
pub struct StudyOptions {
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct StudyReport {
    pub study: Study,
    pub spec_fingerprint: String,
    pub table: ComparisonTable,
    pub notes: Vec<String>,
    pub files: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("fits"))?;
        Ok(Writer { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn put(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn put_json<T: serde::Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.put(rel, &text)
    }
}

fn both_modes(stages: usize) -> [(String, Mode); 2] {
    [
        ("overall".into(), Mode::Overall),
        (
            "path".into(),
            Mode::Path { reference: vec![0; stages], mediators: MediatorSelector::All },
        ),
    ]
}

/// All four decision tables over a binary baseline.
fn binary_tables(layout: &crate::layout::Layout) -> Vec<Policy> {
    [[0, 0], [1, 1], [0, 1], [1, 0]]
        .into_iter()
        .map(|t| Policy::new(vec![Rule::Table { actions: t.to_vec() }]))
        .map(|p| {
            debug_assert!(p.validate(layout).is_ok());
            p
        })
        .collect()
}

/// Treat-below-cutoff rules over every cutoff the baseline admits.
pub fn threshold_candidates(baseline_card: u8) -> Vec<Policy> {
    (0..=baseline_card)
        .map(|alpha| {
            Policy::new(vec![Rule::Threshold {
                column: ColRef::W0,
                cutoff: f64::from(alpha),
                direction: Direction::Below,
            }])
        })
        .collect()
}

/// Simulate a study's dataset, run its fits, and write every result under
/// `dir`. The same study, options and directory layout always produce the
/// same bytes.
pub fn run_study(study: Study, dir: &Path, options: &StudyOptions) -> Result<StudyReport> {
    let (spec, n_default, b_default, seed_default) = match study {
        Study::Toy1 => (toy1_spec(), 8_000, 200, 1001),
        Study::Toy2 => (toy2_spec(), 6_000, 100, 2002),
        Study::Counter => (counter_spec(), 20_000, 200, 3003),
    };
    let n = options.n.unwrap_or(n_default);
    let b = options.replicates.unwrap_or(b_default);
    let seed = options.seed.unwrap_or(seed_default);
    let boot_seed = seed.wrapping_add(1);

    let layout = spec.validate()?;
    let data = simulate(&spec, n, seed)?;
    let mut writer = Writer::new(dir)?;
    let mut csv = Vec::new();
    data.to_csv(&mut csv)?;
    writer.put("data.csv", std::str::from_utf8(&csv).expect("csv is ascii"))?;

    let config = ModelConfig::default();
    let modes = both_modes(layout.stages);
    let mut table = ComparisonTable::new(modes.iter().map(|(name, _)| name.clone()).collect());
    let mut notes = Vec::new();

    let learners: &[Learner] = match study {
        Study::Toy1 => &[Learner::Plugin, Learner::QLearn, Learner::GEstimate],
        Study::Toy2 => &[Learner::Plugin, Learner::QLearn],
        Study::Counter => &[],
    };
    for &learner in learners {
        let mut cells = Vec::new();
        for (mode_name, mode) in &modes {
            let full = fit(&data, learner, mode, &config)?;
            notes.push(format!("{learner} ({mode_name}): {}", full.policy.describe(&layout)));
            writer.put_json(&format!("fits/{learner}_{mode_name}.json"), &full)?;
            let ci = bootstrap_ci(
                &data,
                |d: &Dataset| fit(d, learner, mode, &config).map(|f| f.value_estimate),
                b,
                0.95,
                boot_seed,
            )?;
            cells.push(Some(ci));
        }
        table.push_row(learner.to_string(), cells)?;
    }

    let candidates = match study {
        Study::Toy1 => Some(binary_tables(&layout)),
        Study::Toy2 => None,
        Study::Counter => Some(threshold_candidates(spec.baseline_card)),
    };
    if let Some(candidates) = candidates {
        let mut cells = Vec::new();
        for (mode_name, mode) in &modes {
            let full = value_search(&data, &candidates, mode, ValueEstimator::Robust, &config)?;
            notes.push(format!(
                "search ({mode_name}): {}",
                full.policy.describe(&layout)
            ));
            writer.put_json(&format!("fits/search_{mode_name}.json"), &full)?;
            let ci = bootstrap_ci(
                &data,
                |d: &Dataset| {
                    value_search(d, &candidates, mode, ValueEstimator::Robust, &config)
                        .map(|s| s.value)
                },
                b,
                0.95,
                boot_seed,
            )?;
            cells.push(Some(ci));
        }
        table.push_row("search", cells)?;
    }

    if study == Study::Counter {
        let observed = bootstrap_ci(
            &data,
            |d: &Dataset| Ok(d.y().iter().sum::<f64>() / d.n() as f64),
            b,
            0.95,
            boot_seed,
        )?;
        table.push_row("observed", vec![Some(observed.clone()), Some(observed)])?;
    }

    writer.put("table.txt", &table.render_text())?;
    writer.put("table.csv", &table.to_csv())?;

    Ok(StudyReport {
        study,
        spec_fingerprint: spec.fingerprint(),
        table,
        notes,
        files: writer.files,
    })
}
