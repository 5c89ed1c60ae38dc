//! Command-line interface.
//!
//! Every subcommand reads and writes plain files (JSON specs and policies,
//! CSV data) so runs can be scripted and diffed. Exit codes separate the
//! caller's problems from the data's: 2 for configuration and input errors,
//! 3 for numerical failures during estimation.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ident::Mode;
use crate::layout::Layout;
use crate::oracle;
use crate::policy::{Policy, Rule};
use crate::policylearn::{
    estimate_value, fit, value_search, Learner, ModelConfig, ValueEstimator,
};
use crate::scm::{simulate, MediatorSelector, PolicySource, ScmSpec};
use crate::studies::{run_study, threshold_candidates, Study, StudyOptions};

#[derive(Parser)]
#[command(
    name = "pathpolicy",
    version,
    about = "Optimal treatment regimes for overall and path-restricted effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a model specification
    Simulate(SimulateArgs),
    /// Learn an optimal regime from a dataset
    Fit(FitArgs),
    /// Estimate the value of a given policy
    Evaluate(EvaluateArgs),
    /// Rank candidate policies by estimated value
    Search(SearchArgs),
    /// Exact values and optima by full enumeration of a specification
    Oracle(OracleArgs),
    /// Run a named worked example end to end
    Study(StudyArgs),
}

/// Estimand selection, shared by every data-facing subcommand.
#[derive(Args)]
struct ModeArgs {
    /// 'overall' for the total treatment effect, 'path' for the effect
    /// along the paths that bypass the selected mediators
    #[arg(long, default_value = "overall")]
    mode: String,
    /// Path mode: reference treatments, one per stage, e.g. '0,0'
    /// (default all zero)
    #[arg(long)]
    reference: Option<String>,
    /// Path mode: which mediator components follow the reference law,
    /// 'all-mediators' or 'subset:STAGE.COMP,...' with 1-based components
    #[arg(long, default_value = "all-mediators")]
    edges: String,
}

impl ModeArgs {
    fn build(&self, layout: &Layout) -> Result<Mode> {
        let mode = match self.mode.as_str() {
            "overall" => {
                if self.reference.is_some() {
                    return Err(Error::Config(
                        "--reference only applies to --mode path".into(),
                    ));
                }
                if self.edges != "all-mediators" {
                    return Err(Error::Config("--edges only applies to --mode path".into()));
                }
                Mode::Overall
            }
            "path" => {
                let reference = match &self.reference {
                    Some(text) => parse_u8_list(text, "--reference")?,
                    None => vec![0; layout.stages],
                };
                Mode::Path { reference, mediators: parse_edges(&self.edges)? }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown mode '{other}' (expected overall or path)"
                )))
            }
        };
        mode.validate(layout)?;
        Ok(mode)
    }

    fn describe(&self) -> &str {
        &self.mode
    }
}

fn parse_u8_list(text: &str, flag: &str) -> Result<Vec<u8>> {
    text.split(',')
        .map(|f| {
            f.trim()
                .parse::<u8>()
                .map_err(|_| Error::Config(format!("{flag}: bad entry {f:?}")))
        })
        .collect()
}

fn parse_edges(text: &str) -> Result<MediatorSelector> {
    if text == "all-mediators" {
        return Ok(MediatorSelector::All);
    }
    let Some(list) = text.strip_prefix("subset:") else {
        return Err(Error::Config(format!(
            "--edges must be 'all-mediators' or 'subset:STAGE.COMP,...', got {text:?}"
        )));
    };
    let mut comps = Vec::new();
    for item in list.split(',') {
        let parse = |part: Option<&str>| {
            part.and_then(|p| p.trim().parse::<usize>().ok())
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::Config(format!("--edges: bad component {item:?}")))
        };
        let mut halves = item.split('.');
        let stage = parse(halves.next())?;
        let comp = parse(halves.next())?;
        if halves.next().is_some() {
            return Err(Error::Config(format!("--edges: bad component {item:?}")));
        }
        comps.push((stage, comp - 1));
    }
    Ok(MediatorSelector::Components(comps))
}

/// Model configuration: an optional JSON file plus flag overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Model configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cap estimation weights at this value
    #[arg(long)]
    weight_cap: Option<f64>,
    /// Floor under weight denominators
    #[arg(long)]
    positivity_floor: Option<f64>,
    /// Skip mediator reweighting in the path-mode Q-learner
    #[arg(long)]
    unit_weights: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ModelConfig> {
        let mut config: ModelConfig = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => ModelConfig::default(),
        };
        if let Some(cap) = self.weight_cap {
            config.weight_cap = cap;
        }
        if let Some(floor) = self.positivity_floor {
            config.positivity_floor = floor;
        }
        if self.unit_weights {
            config.force_unit_weights = true;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Model specification JSON
    #[arg(long)]
    spec: PathBuf,
    /// Rows to simulate
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// plugin, qlearn or gestimate
    #[arg(long)]
    learner: String,
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the full fit as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Policy JSON to evaluate
    #[arg(long)]
    policy: PathBuf,
    /// ipw or robust
    #[arg(long, default_value = "robust")]
    estimator: String,
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the estimate as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// JSON array of candidate policies
    #[arg(long, conflicts_with = "thresholds")]
    candidates: Option<PathBuf>,
    /// Search treat-below-cutoff rules over every baseline cutoff
    #[arg(long)]
    thresholds: bool,
    /// ipw or robust
    #[arg(long, default_value = "robust")]
    estimator: String,
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the search result as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Model specification JSON
    #[arg(long)]
    spec: PathBuf,
    #[command(flatten)]
    mode: ModeArgs,
    /// Enumerate all decision rules and report the best
    #[arg(long)]
    optimal: bool,
    /// Policy JSON whose exact value to compute
    #[arg(long, conflicts_with_all = ["optimal", "fixed"])]
    policy: Option<PathBuf>,
    /// Fixed treatments, one per stage, e.g. '1,0'
    #[arg(long, conflicts_with = "optimal")]
    fixed: Option<String>,
    /// Cap on policies (with --optimal) or enumeration terms
    #[arg(long)]
    budget: Option<u64>,
    /// Write the report as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// toy1, toy2 or counter
    #[arg(long)]
    name: String,
    /// Directory for the study's outputs
    #[arg(long)]
    out: PathBuf,
    /// Override the study's sample size
    #[arg(long)]
    n: Option<usize>,
    /// Override the bootstrap replicate count
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the simulation seed
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_class() {
                2
            } else {
                3
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Search(args) => cmd_search(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Study(args) => cmd_study(args),
    }
}

/// Honor PATHPOLICY_THREADS when set; rayon otherwise sizes its pool from
/// the machine.
fn init_threads() -> Result<()> {
    let Ok(text) = std::env::var("PATHPOLICY_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Config(format!("PATHPOLICY_THREADS must be a positive integer, got {text:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn read_spec(path: &Path) -> Result<ScmSpec> {
    let spec: ScmSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
    spec.validate()?;
    Ok(spec)
}

fn read_policy(path: &Path, layout: &Layout) -> Result<Policy> {
    let policy: Policy = serde_json::from_str(&fs::read_to_string(path)?)?;
    policy.validate(layout)?;
    Ok(policy)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn maybe_write<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    if let Some(path) = out {
        write_json(path, value)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let data = simulate(&spec, args.n, args.seed)?;
    data.write_csv(&args.out)?;
    println!(
        "wrote {} rows to {} (spec {})",
        data.n(),
        args.out.display(),
        spec.fingerprint()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let data = Dataset::read_csv(&args.data, None)?;
    let layout = data.layout().clone();
    let learner: Learner = args.learner.parse()?;
    let mode = args.mode.build(&layout)?;
    let config = args.config.load()?;
    let result = fit(&data, learner, &mode, &config)?;

    println!("learner: {}", result.learner);
    println!("mode: {}", args.mode.describe());
    println!("value estimate: {:.4}", result.value_estimate);
    println!("policy: {}", result.policy.describe(&layout));
    if let Some(blip) = &result.blip {
        for (i, (psi, se)) in blip.psi.iter().zip(&blip.se).enumerate() {
            let coefs: Vec<String> = psi
                .iter()
                .zip(se)
                .map(|(p, s)| format!("{p:.4} (se {s:.4})"))
                .collect();
            println!("stage {} blip: {}", i + 1, coefs.join(", "));
        }
    }
    print_diagnostics(&result.diagnostics);
    maybe_write(&args.out, &result)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let data = Dataset::read_csv(&args.data, None)?;
    let layout = data.layout().clone();
    let policy = read_policy(&args.policy, &layout)?;
    let estimator: ValueEstimator = args.estimator.parse()?;
    let mode = args.mode.build(&layout)?;
    let config = args.config.load()?;
    let result = estimate_value(&data, &policy, &mode, estimator, &config)?;

    println!("policy: {}", policy.describe(&layout));
    println!("mode: {}", args.mode.describe());
    println!("estimator: {estimator}");
    println!("value estimate: {:.4}", result.value);
    print_diagnostics(&result.diagnostics);
    maybe_write(&args.out, &result)
}

fn cmd_search(args: SearchArgs) -> Result<()> {
    let data = Dataset::read_csv(&args.data, None)?;
    let layout = data.layout().clone();
    let candidates: Vec<Policy> = match (&args.candidates, args.thresholds) {
        (Some(path), false) => {
            let list: Vec<Policy> = serde_json::from_str(&fs::read_to_string(path)?)?;
            for p in &list {
                p.validate(&layout)?;
            }
            list
        }
        (None, true) => threshold_candidates(layout.baseline_card),
        (None, false) => {
            return Err(Error::Config("pass --candidates FILE or --thresholds".into()))
        }
        (Some(_), true) => unreachable!("clap rejects the combination"),
    };
    let estimator: ValueEstimator = args.estimator.parse()?;
    let mode = args.mode.build(&layout)?;
    let config = args.config.load()?;
    let result = value_search(&data, &candidates, &mode, estimator, &config)?;

    for (i, (policy, value)) in candidates.iter().zip(&result.candidate_values).enumerate() {
        let mark = if i == result.best_index { " <- best" } else { "" };
        println!("[{i}] {:.4}  {}{mark}", value, policy.describe(&layout));
    }
    println!("best value estimate: {:.4}", result.value);
    print_diagnostics(&result.diagnostics);
    maybe_write(&args.out, &result)
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let layout = spec.validate()?;
    let mode = args.mode.build(&layout)?;

    if args.optimal {
        let report = match args.budget {
            Some(b) => oracle::exact_optimal_policy_budgeted(&spec, &mode, b)?,
            None => oracle::exact_optimal_policy(&spec, &mode)?,
        };
        println!("searched {} policies", report.policies_searched);
        println!("optimal value: {:.10}", report.value);
        println!("policy: {}", report.policy.describe(&layout));
        return maybe_write(&args.out, &report);
    }

    let source = match (&args.policy, &args.fixed) {
        (Some(path), None) => PolicySource::Policy(read_policy(path, &layout)?),
        (None, Some(text)) => {
            let actions = parse_u8_list(text, "--fixed")?;
            if actions.len() != layout.stages {
                return Err(Error::Config(format!(
                    "--fixed lists {} actions for {} stages",
                    actions.len(),
                    layout.stages
                )));
            }
            let rules = (1..=layout.stages)
                .map(|s| Rule::Table {
                    actions: vec![actions[s - 1]; layout.stratum_count(s)],
                })
                .collect();
            PolicySource::Policy(Policy::new(rules))
        }
        (None, None) => PolicySource::Observational,
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    let intervention = mode.intervention(&source);
    let report = match args.budget {
        Some(b) => oracle::exact_value_budgeted(&spec, &intervention, u128::from(b))?,
        None => oracle::exact_value(&spec, &intervention)?,
    };
    println!("exact value: {:.10}", report.value);
    println!("terms summed: {}", report.terms);
    maybe_write(&args.out, &report)
}

fn cmd_study(args: StudyArgs) -> Result<()> {
    let study: Study = args.name.parse()?;
    let options = StudyOptions { n: args.n, replicates: args.replicates, seed: args.seed };
    let report = run_study(study, &args.out, &options)?;

    println!("study {} (spec {})", report.study, report.spec_fingerprint);
    print!("{}", report.table.render_text());
    for note in &report.notes {
        println!("  {note}");
    }
    println!("wrote {} files under {}", report.files.len(), args.out.display());
    Ok(())
}

fn print_diagnostics(diag: &crate::policylearn::Diagnostics) {
    if diag.truncated_weights > 0 || diag.floored_denominators > 0 {
        println!(
            "weights: {} truncated, {} denominators floored, max {:.2}",
            diag.truncated_weights, diag.floored_denominators, diag.max_weight
        );
    }
    for note in &diag.notes {
        println!("note: {note}");
    }
}
