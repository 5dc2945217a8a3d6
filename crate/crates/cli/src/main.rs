//! `vicrl` — one binary for every workflow: dataset collection, penalized
//! model training, policy extraction, gradient checking, multi-seed studies,
//! and policy evaluation. Every run writes a manifest (resolved config, seed,
//! versions, input hashes) next to its outputs, and identical manifests yield
//! byte-identical primary CSV files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use vicrl_core::dataset::{self, collect, OfflineDataset};
use vicrl_core::dynamics::{DynamicsHead, TabularDynamicsModel};
use vicrl_core::error::{Error, Result};
use vicrl_core::mdp::{
    chain_mdp, gridworld_mdp, policy_return, random_mdp, value_iteration, TabularMdp,
    TabularPolicy,
};
use vicrl_core::oracle::{
    augmented_loss_resolved, exact_theorem_gradient, finite_difference, mc_theorem_gradient,
};
use vicrl_core::planner::{plan_actor_critic, plan_tabular, visitation_uncertainty, GaussianActor, PlannerConfig};
use vicrl_core::regulator::{collect_continuous, evaluate_controller, GradedController, Regulator};
use vicrl_core::study::{
    line_plot_svg, study_benchmark, study_model_error, study_uncertainty_sweep, StudyResult,
    QUALITY_GRADES,
};
use vicrl_core::training::{train_nll_only, train_vipo, TrainConfig, TrainedModel};
use vicrl_core::value::solve_vd;

/// Prefix for environment-variable config overrides. `VICRL_LAMBDA=0.5`
/// overrides the top-level `lambda` key; `__` descends into nested objects
/// (`VICRL_TRAIN__LAMBDA` targets `train.lambda`).
const ENV_PREFIX: &str = "VICRL_";

#[derive(Parser)]
#[command(name = "vicrl", version, about = "Offline model-based RL laboratory")]
struct Cli {
    /// Base seed; overrides every `seed` field of the loaded config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for member-parallel training (1 = fully sequential).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an offline dataset from a named toy environment.
    Collect(CollectArgs),
    /// Train a dynamics model on an offline dataset (penalized by default).
    TrainModel(TrainArgs),
    /// Extract a policy from a trained model.
    Plan(PlanArgs),
    /// Compare the closed-form gradient with finite differences and sampling.
    GradCheck(GradCheckArgs),
    /// Run a scripted multi-seed study: model-error, uncertainty, or benchmark.
    Study(StudyArgs),
    /// Evaluate a saved policy on the true environment.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// JSON config; see CollectConfig for keys and defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Offline dataset (JSON-lines of transitions).
    #[arg(long)]
    dataset: PathBuf,
    /// JSON config mirroring TrainConfig; unset keys take the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Train the plain likelihood baseline instead of the penalized objective.
    #[arg(long)]
    nll_only: bool,
}

#[derive(Args)]
struct PlanArgs {
    /// Trained model JSON (tabular or ensemble; the planner is chosen by kind).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// PlannerConfig JSON for ensembles, TabularPlanConfig JSON for tabular models.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Check spec JSON; omitted = bundled defaults (4-state, 2-action instance).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Study name: model-error | uncertainty | benchmark.
    name: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Policy JSON: a tabular policy (with --mdp) or a Gaussian actor.
    #[arg(long)]
    policy: PathBuf,
    /// True MDP JSON; presence selects exact tabular evaluation.
    #[arg(long)]
    mdp: Option<PathBuf>,
    /// JSON config; see EvalConfig (regulator rollout evaluation only).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Subcommand configs (strict: unknown keys are rejected)
// ---------------------------------------------------------------------------

/// Dataset-generation spec shared by `collect` and the studies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CollectConfig {
    /// chain | gridworld | regulator
    env: String,
    n_episodes: usize,
    horizon: usize,
    /// Behavior quality: weight on the optimal policy in the optimal/uniform
    /// mix (tabular), or on the expert controller (regulator).
    expert_weight: f64,
    chain_states: usize,
    chain_slip: f64,
    gamma: f64,
    /// Regulator process noise.
    noise_std: f64,
    /// Re-tag a tabular collection as 1-D continuous data (integer-valued
    /// vectors), so ensemble training and the drop machinery apply to it.
    embed_continuous: bool,
    seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            env: "chain".into(),
            n_episodes: 100,
            horizon: 40,
            expert_weight: 0.5,
            chain_states: 5,
            chain_slip: 0.1,
            gamma: 0.99,
            noise_std: 0.05,
            embed_continuous: false,
            seed: 0,
        }
    }
}

/// Exact pessimistic value iteration on a tabular model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TabularPlanConfig {
    beta: f64,
    gamma: f64,
    tol: f64,
    seed: u64,
}

impl Default for TabularPlanConfig {
    fn default() -> Self {
        Self { beta: 1.0, gamma: 0.99, tol: 1e-9, seed: 0 }
    }
}

/// Random-instance spec for the gradient check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GradSpec {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    lambda: f64,
    /// Monte-Carlo sample count for the sampled-estimator column.
    n_samples: usize,
    fd_step: f64,
    /// Maximum allowed |exact − fd| / max(|exact|, |fd|).
    tolerance: f64,
    /// Coordinates below this magnitude (both exact and fd) are not scored.
    min_magnitude: f64,
    seed: u64,
}

impl Default for GradSpec {
    fn default() -> Self {
        Self {
            n_states: 4,
            n_actions: 2,
            gamma: 0.9,
            lambda: 0.5,
            n_samples: 200_000,
            fd_step: 1e-5,
            tolerance: 1e-4,
            min_magnitude: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelErrorStudyConfig {
    data: CollectConfig,
    train: TrainConfig,
    n_seeds: usize,
}

impl Default for ModelErrorStudyConfig {
    fn default() -> Self {
        Self { data: CollectConfig::default(), train: TrainConfig::default(), n_seeds: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct UncertaintyStudyConfig {
    data: CollectConfig,
    train: TrainConfig,
    drop_ratios: Vec<f64>,
    radius: f64,
    n_anchors: usize,
    n_seeds: usize,
}

impl Default for UncertaintyStudyConfig {
    fn default() -> Self {
        Self {
            data: CollectConfig { env: "regulator".into(), ..CollectConfig::default() },
            train: TrainConfig::default(),
            drop_ratios: (0..=10).map(|i| i as f64 / 10.0).collect(),
            radius: 0.8,
            n_anchors: 8,
            n_seeds: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BenchmarkStudyConfig {
    envs: Vec<String>,
    qualities: Vec<String>,
    train: TrainConfig,
    beta: f64,
    n_episodes: usize,
    horizon: usize,
    chain_states: usize,
    chain_slip: f64,
    gamma: f64,
    n_seeds: usize,
}

impl Default for BenchmarkStudyConfig {
    fn default() -> Self {
        Self {
            envs: vec!["chain".into(), "gridworld".into()],
            qualities: vec!["random".into(), "medium".into(), "expert".into()],
            train: TrainConfig::default(),
            beta: 1.0,
            n_episodes: 150,
            horizon: 40,
            chain_states: 5,
            chain_slip: 0.1,
            gamma: 0.99,
            n_seeds: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    episodes: usize,
    horizon: usize,
    gamma: f64,
    noise_std: f64,
    seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 200, horizon: 20, gamma: 0.99, noise_std: 0.05, seed: 0 }
    }
}

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

/// Reads the JSON config file (or `{}`), layers `VICRL_*` environment
/// overrides on top, and strictly parses into `T` (unknown keys rejected).
fn load_config<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))?
        }
        None => Value::Object(serde_json::Map::new()),
    };
    if !value.is_object() {
        return Err(Error::invalid("config root must be a JSON object"));
    }
    for (key, raw) in std::env::vars() {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let parsed = serde_json::from_str::<Value>(&raw).unwrap_or(Value::String(raw));
        let path: Vec<String> = rest.split("__").map(|s| s.to_lowercase()).collect();
        let mut node = &mut value;
        for seg in &path[..path.len() - 1] {
            node = node
                .as_object_mut()
                .expect("config nodes are objects")
                .entry(seg.clone())
                .or_insert_with(|| Value::Object(serde_json::Map::new()));
            if !node.is_object() {
                return Err(Error::invalid(format!("override {key} descends into a non-object")));
            }
        }
        node.as_object_mut()
            .expect("config nodes are objects")
            .insert(path.last().unwrap().clone(), parsed);
    }
    serde_json::from_value(value).map_err(|e| Error::invalid(format!("config: {e}")))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    versions: BTreeMap<String, String>,
    seed: u64,
    jobs: usize,
    /// The fully resolved config (defaults applied, overrides merged).
    config: Value,
    /// SHA-256 of every input file, keyed by the path as given.
    inputs: BTreeMap<String, String>,
}

fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    jobs: usize,
    config: Value,
    inputs: &[(&Path, String)],
) -> Result<()> {
    let mut versions = BTreeMap::new();
    versions.insert("vicrl-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("vicrl-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
    let manifest = Manifest {
        command: command.to_string(),
        versions,
        seed,
        jobs,
        config,
        inputs: inputs
            .iter()
            .map(|(p, h)| (p.display().to_string(), h.clone()))
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Environment construction shared by collect/study/eval
// ---------------------------------------------------------------------------

fn build_tabular_env(name: &str, cfg: &CollectConfig) -> Result<TabularMdp> {
    match name {
        "chain" => Ok(chain_mdp(cfg.chain_states, cfg.chain_slip, cfg.gamma)),
        "gridworld" => Ok(gridworld_mdp(cfg.gamma)),
        other => Err(Error::invalid(format!("unknown tabular environment '{other}'"))),
    }
}

fn behavior_policy(mdp: &TabularMdp, expert_weight: f64) -> TabularPolicy {
    let (_, optimal) = value_iteration(mdp, 1e-10);
    let uniform = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
    optimal.mix(&uniform, expert_weight)
}

/// Generates the dataset a CollectConfig describes, plus an env descriptor.
fn generate_dataset(cfg: &CollectConfig) -> Result<(OfflineDataset, Value)> {
    match cfg.env.as_str() {
        "regulator" => {
            let env = Regulator {
                noise_std: cfg.noise_std,
                horizon: cfg.horizon,
                gamma: cfg.gamma,
            };
            let controller = GradedController::new(cfg.expert_weight);
            let ds = collect_continuous(&env, &controller, cfg.n_episodes, cfg.seed)?;
            let doc = serde_json::json!({
                "env": "regulator",
                "noise_std": cfg.noise_std,
                "horizon": cfg.horizon,
                "gamma": cfg.gamma,
            });
            Ok((ds, doc))
        }
        name => {
            let mdp = build_tabular_env(name, cfg)?;
            let behavior = behavior_policy(&mdp, cfg.expert_weight);
            let mut ds = collect(&mdp, &behavior, cfg.n_episodes, cfg.horizon, cfg.seed)?;
            if cfg.embed_continuous {
                ds.space = vicrl_core::dataset::SpaceDescriptor::Continuous {
                    state_dim: 1,
                    action_dim: 1,
                };
            }
            let doc = serde_json::from_str(&mdp.to_json())?;
            Ok((ds, doc))
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn run_collect(args: &CollectArgs, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut cfg: CollectConfig = load_config(args.config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&args.out)?;
    let (ds, env_doc) = generate_dataset(&cfg)?;
    dataset::save(&ds, &args.out.join("dataset.jsonl"))?;
    println!("wrote {} ({} transitions)", args.out.join("dataset.jsonl").display(), ds.len());
    write_text(&args.out.join("env.json"), &(serde_json::to_string_pretty(&env_doc)? + "\n"))?;
    write_manifest(&args.out, "collect", cfg.seed, jobs, serde_json::to_value(&cfg)?, &[])
}

fn run_train(args: &TrainArgs, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut cfg: TrainConfig = load_config(args.config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = dataset::load(&args.dataset)?;
    fs::create_dir_all(&args.out)?;
    let (model, report) = if args.nll_only {
        train_nll_only(&ds, &cfg)?
    } else {
        train_vipo(&ds, &cfg)?
    };
    write_text(
        &args.out.join("model.json"),
        &(serde_json::to_string_pretty(&model)? + "\n"),
    )?;
    write_text(&args.out.join("report.csv"), &report.to_csv())?;
    println!(
        "trained {} for {} iterations ({:.1}s)",
        report.model_handle,
        report.records.len(),
        report.wall_clock_seconds
    );
    let mut config_value = serde_json::to_value(&cfg)?;
    config_value
        .as_object_mut()
        .expect("TrainConfig serializes to an object")
        .insert("nll_only".into(), Value::Bool(args.nll_only));
    write_manifest(
        &args.out,
        "train-model",
        cfg.seed,
        jobs,
        config_value,
        &[(&args.dataset, hash_file(&args.dataset)?)],
    )
}

fn run_plan(args: &PlanArgs, seed: Option<u64>, jobs: usize) -> Result<()> {
    let model: TrainedModel = serde_json::from_str(&fs::read_to_string(&args.model)?)
        .map_err(|e| Error::invalid(format!("model {}: {e}", args.model.display())))?;
    let ds = dataset::load(&args.dataset)?;
    fs::create_dir_all(&args.out)?;
    let inputs = [
        (args.model.as_path(), hash_file(&args.model)?),
        (args.dataset.as_path(), hash_file(&args.dataset)?),
    ];
    match &model {
        TrainedModel::Ensemble(ensemble) => {
            let mut cfg: PlannerConfig = load_config(args.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = plan_actor_critic(ensemble, &ds, &cfg)?;
            write_text(
                &args.out.join("actor.json"),
                &(serde_json::to_string_pretty(&outcome.actor)? + "\n"),
            )?;
            write_text(&args.out.join("curve.csv"), &outcome.report.to_csv())?;
            write_manifest(&args.out, "plan", cfg.seed, jobs, serde_json::to_value(&cfg)?, &inputs)
        }
        TrainedModel::Tabular(tabular) => {
            let mut cfg: TabularPlanConfig = load_config(args.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let uncertainty = visitation_uncertainty(&ds)?;
            let plan = plan_tabular(tabular, &uncertainty, cfg.beta, cfg.gamma, cfg.tol)?;
            write_text(&args.out.join("policy.json"), &(plan.policy.to_json() + "\n"))?;
            let mut csv = String::from("state,value,action\n");
            for s in 0..plan.value.len() {
                let action = (0..plan.q.ncols())
                    .max_by(|&a, &b| plan.q[[s, a]].total_cmp(&plan.q[[s, b]]))
                    .unwrap_or(0);
                csv.push_str(&format!("{s},{:.12e},{action}\n", plan.value[s]));
            }
            write_text(&args.out.join("plan.csv"), &csv)?;
            write_manifest(&args.out, "plan", cfg.seed, jobs, serde_json::to_value(&cfg)?, &inputs)
        }
    }
}

fn run_grad_check(args: &GradCheckArgs, seed: Option<u64>, jobs: usize) -> Result<bool> {
    let mut spec: GradSpec = load_config(args.spec.as_deref())?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    fs::create_dir_all(&args.out)?;

    let mdp = random_mdp(spec.n_states, spec.n_actions, spec.gamma, spec.seed);
    let behavior = TabularPolicy::uniform(spec.n_states, spec.n_actions);
    let ds = collect(&mdp, &behavior, 12, 8, spec.seed.wrapping_add(1))?;
    let mut rng = StdRng::seed_from_u64(spec.seed.wrapping_add(2));
    let mut model = TabularDynamicsModel::init_random(spec.n_states, spec.n_actions, &mut rng);
    for r in model.reward_table.iter_mut() {
        *r = rng.gen_range(-1.0..1.0);
    }
    let policy = TabularPolicy::random(spec.n_states, spec.n_actions, &mut rng);
    let vd = solve_vd(&ds, spec.gamma, 1e-11, 5_000_000)?.value;
    let batch = &ds.transitions;

    let exact = exact_theorem_gradient(
        &model, &policy, &vd, &mdp.rho0, spec.lambda, spec.gamma, batch,
    )?;
    let params = model.flat_params();
    let fd = finite_difference(
        |p| {
            augmented_loss_resolved(
                &model, &policy, &vd, &mdp.rho0, spec.lambda, spec.gamma, batch, p,
            )
        },
        &params,
        spec.fd_step,
    )?;
    let mut mc_rng = StdRng::seed_from_u64(spec.seed.wrapping_add(3));
    let mc_term = mc_theorem_gradient(
        &model, &policy, &vd, &mdp.rho0, spec.lambda, spec.gamma, spec.n_samples, &mut mc_rng,
    )?;
    let nll_grad = model.nll_grad(batch)?;

    let mut csv = String::from("coordinate,exact,fd,mc,rel_error\n");
    let mut max_rel: f64 = 0.0;
    let mut scored = 0usize;
    for i in 0..exact.len() {
        let mc = nll_grad[i] + mc_term[i];
        let magnitude = exact[i].abs().max(fd[i].abs());
        let rel = if magnitude > spec.min_magnitude {
            scored += 1;
            (exact[i] - fd[i]).abs() / magnitude
        } else {
            0.0
        };
        max_rel = max_rel.max(rel);
        csv.push_str(&format!(
            "{i},{:.12e},{:.12e},{:.12e},{:.3e}\n",
            exact[i], fd[i], mc, rel
        ));
    }
    write_text(&args.out.join("check.csv"), &csv)?;
    write_manifest(
        &args.out,
        "grad-check",
        spec.seed,
        jobs,
        serde_json::to_value(&spec)?,
        &[],
    )?;
    let pass = max_rel < spec.tolerance;
    println!(
        "grad-check {}: max relative error {max_rel:.3e} over {scored} scored coordinates (threshold {:.1e})",
        if pass { "PASS" } else { "FAIL" },
        spec.tolerance
    );
    Ok(pass)
}

fn write_study_outputs(out: &Path, result: &StudyResult) -> Result<()> {
    write_text(&out.join("study.csv"), &result.to_csv())?;
    write_text(&out.join("study.json"), &(result.to_json() + "\n"))?;
    let mut metrics: Vec<&str> = result.rows.iter().map(|r| r.metric.as_str()).collect();
    metrics.dedup();
    metrics.sort_unstable();
    metrics.dedup();
    for metric in metrics {
        let series: Vec<(String, Vec<(f64, f64)>)> = result
            .rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| {
                let points = r
                    .per_seed
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (i as f64, *v))
                    .collect();
                (r.condition.clone(), points)
            })
            .collect();
        let svg = line_plot_svg(&format!("{} — {metric}", result.name), &series);
        write_text(&out.join(format!("plot_{metric}.svg")), &svg)?;
    }
    Ok(())
}

fn run_study(args: &StudyArgs, seed: Option<u64>, jobs: usize) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    match args.name.as_str() {
        "model-error" => {
            let mut cfg: ModelErrorStudyConfig = load_config(args.config.as_deref())?;
            if let Some(s) = seed {
                cfg.data.seed = s;
                cfg.train.seed = s;
            }
            let (ds, _) = generate_dataset(&cfg.data)?;
            let mut nll_cfg = cfg.train.clone();
            nll_cfg.lambda = 0.0;
            let result = study_model_error(&ds, &nll_cfg, &cfg.train, cfg.n_seeds)?;
            write_study_outputs(&args.out, &result)?;
            write_manifest(&args.out, "study model-error", cfg.train.seed, jobs, serde_json::to_value(&cfg)?, &[])
        }
        "uncertainty" => {
            let mut cfg: UncertaintyStudyConfig = load_config(args.config.as_deref())?;
            if let Some(s) = seed {
                cfg.data.seed = s;
                cfg.train.seed = s;
            }
            let (ds, _) = generate_dataset(&cfg.data)?;
            let result = study_uncertainty_sweep(
                &ds,
                &cfg.drop_ratios,
                cfg.radius,
                cfg.n_anchors,
                &cfg.train,
                cfg.n_seeds,
            )?;
            write_study_outputs(&args.out, &result)?;
            write_manifest(&args.out, "study uncertainty", cfg.train.seed, jobs, serde_json::to_value(&cfg)?, &[])
        }
        "benchmark" => {
            let mut cfg: BenchmarkStudyConfig = load_config(args.config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let env_cfg = CollectConfig {
                chain_states: cfg.chain_states,
                chain_slip: cfg.chain_slip,
                gamma: cfg.gamma,
                ..CollectConfig::default()
            };
            let envs: Vec<(String, TabularMdp)> = cfg
                .envs
                .iter()
                .map(|name| Ok((name.clone(), build_tabular_env(name, &env_cfg)?)))
                .collect::<Result<_>>()?;
            let qualities: Vec<(String, f64)> = cfg
                .qualities
                .iter()
                .map(|q| {
                    QUALITY_GRADES
                        .iter()
                        .find(|(name, _)| name == q)
                        .map(|(name, w)| (name.to_string(), *w))
                        .ok_or_else(|| Error::invalid(format!("unknown quality grade '{q}'")))
                })
                .collect::<Result<_>>()?;
            let result = study_benchmark(
                &envs,
                &qualities,
                &cfg.train,
                cfg.beta,
                cfg.n_episodes,
                cfg.horizon,
                cfg.n_seeds,
            )?;
            write_study_outputs(&args.out, &result)?;
            write_manifest(&args.out, "study benchmark", cfg.train.seed, jobs, serde_json::to_value(&cfg)?, &[])
        }
        other => Err(Error::invalid(format!(
            "unknown study '{other}' (expected model-error, uncertainty, or benchmark)"
        ))),
    }
}

fn run_eval(args: &EvalArgs, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut cfg: EvalConfig = load_config(args.config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&args.out)?;
    let policy_text = fs::read_to_string(&args.policy)?;
    let mut inputs = vec![(args.policy.as_path(), hash_file(&args.policy)?)];
    let csv = match &args.mdp {
        Some(mdp_path) => {
            let mdp = TabularMdp::from_json(&fs::read_to_string(mdp_path)?)?;
            let policy = TabularPolicy::from_json(&policy_text)?;
            inputs.push((mdp_path.as_path(), hash_file(mdp_path)?));
            let ret = policy_return(&mdp, &policy)?;
            format!("metric,value\npolicy_return,{ret:.12e}\n")
        }
        None => {
            let actor: GaussianActor = serde_json::from_str(&policy_text)
                .map_err(|e| Error::invalid(format!("actor {}: {e}", args.policy.display())))?;
            let env = Regulator {
                noise_std: cfg.noise_std,
                horizon: cfg.horizon,
                gamma: cfg.gamma,
            };
            let ret = evaluate_controller(&env, &actor, cfg.episodes, cfg.seed);
            format!("metric,value\nmean_return,{ret:.12e}\n")
        }
    };
    write_text(&args.out.join("eval.csv"), &csv)?;
    write_manifest(&args.out, "eval", cfg.seed, jobs, serde_json::to_value(&cfg)?, &inputs)
}

// ---------------------------------------------------------------------------
// Entry point and exit-code mapping
// ---------------------------------------------------------------------------

/// 1 = validation error (bad flags, malformed config/inputs), 2 = runtime
/// failure (divergence, non-convergence, io).
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Parse { .. } => 1,
        _ => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Collect(args) => run_collect(args, cli.seed, cli.jobs).map(|()| 0),
        Command::TrainModel(args) => run_train(args, cli.seed, cli.jobs).map(|()| 0),
        Command::Plan(args) => run_plan(args, cli.seed, cli.jobs).map(|()| 0),
        Command::GradCheck(args) => {
            run_grad_check(args, cli.seed, cli.jobs).map(|pass| if pass { 0 } else { 2 })
        }
        Command::Study(args) => run_study(args, cli.seed, cli.jobs).map(|()| 0),
        Command::Eval(args) => run_eval(args, cli.seed, cli.jobs).map(|()| 0),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(1);
    }
    // worker pool for member-parallel sections; 1 keeps runs fully sequential
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
