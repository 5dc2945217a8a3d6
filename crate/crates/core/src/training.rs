//! Penalized dynamics-model training: the likelihood objective plus a penalty
//! on the squared gap between the data-side and model-side value functions,
//! the sampled practical gradient of that objective, and the full training
//! loop in tabular (exactly solved values) and ensemble (fitted value
//! networks) modes.

use std::time::Instant;

use rand::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{estimate_behavior_policy, split, OfflineDataset, SpaceDescriptor, Transition};
use crate::dynamics::{
    DynamicsHead, GaussianEnsemble, TabularDynamicsModel, DEFAULT_N_MEMBERS, LOG_VAR_BOUNDS,
};
use crate::error::{ensure_finite, Error, Result};
use crate::net::{Adam, Layout, ParamVector, ValuePair};
use crate::rng::{stream, stream_rng, STREAM_BATCH, STREAM_INIT, STREAM_MODEL, STREAM_SPLIT, STREAM_VALUE};
use crate::value::{fit_vd_msbe, fit_vm, solve_vd, solve_vm_tabular, StateValue, TabularValue};

/// Fraction of the dataset used for gradient updates; the rest monitors
/// held-out prediction error for the convergence rule.
pub const TRAIN_FRACTION: f64 = 0.9;
/// Cap on rows used for the logged inconsistency probes in continuous mode.
const VIC_PROBE_ROWS: usize = 512;

const VD_TOL: f64 = 1e-9;
const VD_MAX_ITERS: usize = 5_000_000;
const VM_TOL: f64 = 1e-8;

/// All knobs of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the value-gap penalty.
    pub lambda: f64,
    pub model_lr: f64,
    pub value_lr: f64,
    /// Soft target-update rate for fitted value networks.
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub max_outer_iters: usize,
    /// Stop after this many consecutive updates that fail the improvement bar.
    pub invalid_update_patience: usize,
    /// Minimum relative held-out improvement for an update to count as valid.
    pub improvement_threshold: f64,
    pub n_members: usize,
    pub seed: u64,
    /// Value-network refresh steps per outer iteration (continuous mode).
    pub vm_inner_steps: usize,
    /// Hidden layer widths shared by ensemble members and fitted value nets.
    pub hidden_sizes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.35,
            model_lr: 1e-3,
            value_lr: 1e-4,
            tau: 5e-3,
            gamma: 0.99,
            batch_size: 256,
            max_outer_iters: 1000,
            invalid_update_patience: 5,
            improvement_threshold: 0.01,
            n_members: DEFAULT_N_MEMBERS,
            seed: 0,
            vm_inner_steps: 200,
            hidden_sizes: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.improvement_threshold > 0.0 && self.improvement_threshold < 1.0) {
            return Err(Error::invalid("improvement_threshold must lie in (0,1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0,1)"));
        }
        if !(self.model_lr > 0.0 && self.value_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau must lie in [0,1]"));
        }
        if self.n_members == 0 {
            return Err(Error::invalid("n_members must be at least 1"));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer widths must be at least 1"));
        }
        Ok(())
    }
}

/// One logged outer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub nll: f64,
    pub l_vic_rho0: f64,
    pub l_vic_data: f64,
    pub augmented_loss: f64,
    pub grad_norm: f64,
    pub vd_residual: f64,
    pub vm_residual: f64,
}

/// Training log: per-iteration records plus run-level metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub wall_clock_seconds: f64,
    /// Where the final model lives (descriptor, or a path once saved).
    pub model_handle: String,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iter,nll,l_vic_rho0,l_vic_data,augmented_loss,grad_norm,vd_residual,vm_residual\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.iter,
                r.nll,
                r.l_vic_rho0,
                r.l_vic_data,
                r.augmented_loss,
                r.grad_norm,
                r.vd_residual,
                r.vm_residual
            ));
        }
        out
    }
}

/// The trained artifact: a tabular model or a Gaussian ensemble, depending on
/// the dataset's space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Tabular(TabularDynamicsModel),
    Ensemble(GaussianEnsemble),
}

impl TrainedModel {
    pub fn as_tabular(&self) -> Option<&TabularDynamicsModel> {
        match self {
            TrainedModel::Tabular(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_ensemble(&self) -> Option<&GaussianEnsemble> {
        match self {
            TrainedModel::Ensemble(e) => Some(e),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Held-out prediction error of whichever variant this is.
    pub fn prediction_error(&self, batch: &[Transition]) -> Result<f64> {
        match self {
            TrainedModel::Tabular(m) => m.prediction_error(batch),
            TrainedModel::Ensemble(e) => e.prediction_error(batch),
        }
    }
}

/// Weighted mean of (V_d(s) − V_m(s))² over a weighted state set.
pub fn value_inconsistency(
    vd: &dyn StateValue,
    vm: &dyn StateValue,
    states: &[(Vec<f64>, f64)],
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::invalid("inconsistency needs at least one state"));
    }
    let total_w: f64 = states.iter().map(|(_, w)| w).sum();
    if !(total_w > 0.0 && total_w.is_finite()) {
        return Err(Error::invalid("state weights must have positive finite sum"));
    }
    let mut acc = 0.0;
    for (s, w) in states {
        let gap = vd.value(s) - vm.value(s);
        acc += w * gap * gap;
    }
    ensure_finite(acc / total_w, "value inconsistency")
}

/// Likelihood loss plus `lambda` times the value gap over the batch's start
/// states.
pub fn augmented_loss<M: DynamicsHead>(
    model: &M,
    vd: &dyn StateValue,
    vm: &dyn StateValue,
    batch: &[Transition],
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let nll = model.nll_loss(batch)?;
    if lambda == 0.0 {
        return Ok(nll);
    }
    let states: Vec<(Vec<f64>, f64)> = batch.iter().map(|t| (t.s.clone(), 1.0)).collect();
    Ok(nll + lambda * value_inconsistency(vd, vm, &states)?)
}

/// Practical sampled gradient of the augmented objective: the analytic
/// likelihood gradient minus, per batch row, 2λ·(V̄_d(s) − V̄_m(s)) times the
/// score of one fresh model draw at (s, a) weighted by its bootstrapped value
/// r̂ + γ·V̄_m(ŝ').
pub fn surrogate_gradient<M: DynamicsHead>(
    model: &M,
    vd_target: &dyn StateValue,
    vm_target: &dyn StateValue,
    batch: &[Transition],
    lambda: f64,
    gamma: f64,
    rng: &mut StdRng,
) -> Result<Vec<f64>> {
    let mut grad = model.nll_grad(batch)?;
    if lambda > 0.0 {
        let w = -2.0 * lambda / batch.len() as f64;
        for t in batch {
            let gap = vd_target.value(&t.s) - vm_target.value(&t.s);
            if gap == 0.0 {
                continue;
            }
            let (r_hat, s_hat) = model.sample(&t.s, &t.a, rng);
            let boot = r_hat + gamma * vm_target.value(&s_hat);
            model.accumulate_score(&t.s, &t.a, r_hat, &s_hat, w * gap * boot, &mut grad)?;
        }
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            context: "surrogate gradient".into(),
            value: *bad,
        });
    }
    Ok(grad)
}

/// Exact-expectation form of `surrogate_gradient` for tabular models: the
/// fresh draw is replaced by full enumeration over next states. Used by
/// oracle comparisons and the training loop's diagnostics.
pub fn surrogate_gradient_exact(
    model: &TabularDynamicsModel,
    vd_target: &TabularValue,
    vm_target: &TabularValue,
    batch: &[Transition],
    lambda: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut grad = model.nll_grad(batch)?;
    if lambda > 0.0 {
        let w = -2.0 * lambda / batch.len() as f64;
        for t in batch {
            let (s, a) = (t.s_index(), t.a_index());
            let gap = vd_target.v[s] - vm_target.v[s];
            if gap == 0.0 {
                continue;
            }
            let probs = model.probs_row(s, a);
            let r_hat = model.reward_table[[s, a]];
            for (k, p_k) in probs.iter().enumerate() {
                let boot = r_hat + gamma * vm_target.v[k];
                let factor = w * gap * p_k * boot;
                for (j, p_j) in probs.iter().enumerate() {
                    let indicator = if j == k { 1.0 } else { 0.0 };
                    grad[model.logit_coord(s, a, j)] += factor * (indicator - p_j);
                }
            }
        }
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            context: "exact surrogate gradient".into(),
            value: *bad,
        });
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// Tracks the held-out improvement rule: an update is valid only if it
/// improves the monitored error by at least `threshold` relative.
struct Validity {
    prev_error: f64,
    consecutive_invalid: usize,
}

impl Validity {
    fn new(initial_error: f64) -> Self {
        Self {
            prev_error: initial_error,
            consecutive_invalid: 0,
        }
    }

    /// Feeds the post-update error; returns true when patience is exhausted.
    fn exhausted(&mut self, new_error: f64, threshold: f64, patience: usize) -> bool {
        let improvement = (self.prev_error - new_error) / self.prev_error.abs().max(1e-12);
        if improvement >= threshold {
            self.consecutive_invalid = 0;
        } else {
            self.consecutive_invalid += 1;
        }
        self.prev_error = new_error;
        self.consecutive_invalid >= patience
    }
}

fn draw_batch(dataset: &OfflineDataset, size: usize, rng: &mut StdRng) -> Vec<Transition> {
    let n = dataset.len();
    (0..size)
        .map(|_| dataset.transitions[rng.gen_range(0..n)].clone())
        .collect()
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Start-state weight sets for the two logged inconsistency flavors:
/// uniform over distinct start states, and frequency-weighted over rows.
fn tabular_state_weights(
    dataset: &OfflineDataset,
    n_states: usize,
) -> (Vec<(Vec<f64>, f64)>, Vec<(Vec<f64>, f64)>) {
    let mut counts = vec![0.0f64; n_states];
    for t in &dataset.transitions {
        counts[t.s_index()] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let mut uniform = Vec::new();
    let mut weighted = Vec::new();
    for (s, c) in counts.iter().enumerate() {
        if *c > 0.0 {
            uniform.push((vec![s as f64], 1.0));
            weighted.push((vec![s as f64], c / total));
        }
    }
    (uniform, weighted)
}

fn record_push(
    records: &mut Vec<TrainRecord>,
    iter: usize,
    nll: f64,
    l_vic_rho0: f64,
    l_vic_data: f64,
    lambda: f64,
    grad_norm: f64,
    vd_residual: f64,
    vm_residual: f64,
) -> Result<()> {
    let rec = TrainRecord {
        iter,
        nll: ensure_finite(nll, "nll")?,
        l_vic_rho0: ensure_finite(l_vic_rho0, "l_vic_rho0")?,
        l_vic_data: ensure_finite(l_vic_data, "l_vic_data")?,
        augmented_loss: ensure_finite(nll + lambda * l_vic_data, "augmented_loss")?,
        grad_norm: ensure_finite(grad_norm, "grad_norm")?,
        vd_residual: ensure_finite(vd_residual, "vd_residual")?,
        vm_residual: ensure_finite(vm_residual, "vm_residual")?,
    };
    records.push(rec);
    Ok(())
}

fn run_tabular(
    dataset: &OfflineDataset,
    config: &TrainConfig,
    with_penalty: bool,
) -> Result<(TabularDynamicsModel, TrainReport)> {
    let start = Instant::now();
    let (n_states, n_actions) = dataset.tabular_sizes()?;
    let (train, held) = split(dataset, TRAIN_FRACTION, stream(config.seed, STREAM_SPLIT))?;
    let eval_set = if held.is_empty() { &train } else { &held };
    let lambda = if with_penalty { config.lambda } else { 0.0 };

    let mut init_rng = stream_rng(config.seed, STREAM_INIT);
    let mut model = TabularDynamicsModel::init_random(n_states, n_actions, &mut init_rng);

    // data-side quantities are model-free: estimated once, frozen
    let (policy, vd, vd_residual, rho0_states, data_states) = if with_penalty {
        let policy = estimate_behavior_policy(&train)?;
        let sol = solve_vd(&train, config.gamma, VD_TOL, VD_MAX_ITERS)?;
        let (uniform, weighted) = tabular_state_weights(&train, n_states);
        (Some(policy), Some(sol.value), sol.residual, uniform, weighted)
    } else {
        (None, None, 0.0, Vec::new(), Vec::new())
    };

    let mut adam = Adam::new(model.param_count(), config.model_lr);
    let mut batch_rng = stream_rng(config.seed, STREAM_BATCH);
    let mut sample_rng = stream_rng(config.seed, STREAM_MODEL);
    let mut validity = Validity::new(model.prediction_error(&eval_set.transitions)?);
    let mut records = Vec::new();

    for iter in 0..config.max_outer_iters {
        // model-side value refresh precedes the gradient step
        let (vm, vm_residual) = if with_penalty {
            let sol = solve_vm_tabular(
                &model,
                policy.as_ref().unwrap(),
                config.gamma,
                VM_TOL,
            )?;
            (Some(sol.value), sol.residual)
        } else {
            (None, 0.0)
        };

        let batch = draw_batch(&train, config.batch_size, &mut batch_rng);
        let nll = model.nll_loss(&batch)?;
        let grad = match (&vd, &vm) {
            (Some(vd), Some(vm)) => surrogate_gradient(
                &model,
                vd,
                vm,
                &batch,
                lambda,
                config.gamma,
                &mut sample_rng,
            )?,
            _ => model.nll_grad(&batch)?,
        };
        let mut theta = model.flat_params();
        adam.step(&mut theta, &grad);
        model.set_flat_params(&theta)?;

        let (l_vic_rho0, l_vic_data) = match (&vd, &vm) {
            (Some(vd), Some(vm)) => (
                value_inconsistency(vd, vm, &rho0_states)?,
                value_inconsistency(vd, vm, &data_states)?,
            ),
            _ => (0.0, 0.0),
        };
        record_push(
            &mut records,
            iter,
            nll,
            l_vic_rho0,
            l_vic_data,
            lambda,
            l2_norm(&grad),
            vd_residual,
            vm_residual,
        )?;

        let err = model.prediction_error(&eval_set.transitions)?;
        if validity.exhausted(err, config.improvement_threshold, config.invalid_update_patience) {
            break;
        }
    }

    let report = TrainReport {
        records,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        model_handle: format!("tabular({n_states}x{n_actions})"),
    };
    Ok((model, report))
}

/// Per-member mutable training state that is independent of the others.
struct MemberAux {
    vm_pair: ValuePair,
    adam: Adam,
    batch_rng: StdRng,
    sample_rng: StdRng,
    vm_rng: StdRng,
}

struct MemberStep {
    nll: f64,
    l_vic_rho0: f64,
    l_vic_data: f64,
    grad_norm: f64,
    vm_residual: f64,
}

fn run_ensemble(
    dataset: &OfflineDataset,
    config: &TrainConfig,
    with_penalty: bool,
) -> Result<(GaussianEnsemble, TrainReport)> {
    let start = Instant::now();
    let (state_dim, action_dim) = match dataset.space {
        SpaceDescriptor::Continuous { state_dim, action_dim } => (state_dim, action_dim),
        SpaceDescriptor::Tabular { .. } => {
            return Err(Error::invalid("ensemble training expects a continuous dataset"))
        }
    };
    let (train, held) = split(dataset, TRAIN_FRACTION, stream(config.seed, STREAM_SPLIT))?;
    let eval_set = if held.is_empty() { &train } else { &held };
    let lambda = if with_penalty { config.lambda } else { 0.0 };

    let mut init_rng = stream_rng(config.seed, STREAM_INIT);
    let mut ensemble = GaussianEnsemble::new(
        config.n_members,
        state_dim,
        action_dim,
        &config.hidden_sizes,
        LOG_VAR_BOUNDS,
        &mut init_rng,
    )?;

    // probe rows for the logged inconsistency values
    let probe: Vec<(Vec<f64>, f64)> = train
        .transitions
        .iter()
        .take(VIC_PROBE_ROWS)
        .map(|t| (t.s.clone(), 1.0))
        .collect();

    let value_layout = |input: usize| -> Layout {
        Layout::new(
            std::iter::once(input)
                .chain(config.hidden_sizes.iter().copied())
                .chain(std::iter::once(1))
                .collect(),
        )
    };

    // data-side value net: fit once, frozen afterwards
    let (vd_pair, vd_residual) = if with_penalty {
        let mut vd_rng = stream_rng(stream(config.seed, STREAM_VALUE), 0);
        let mut pair = ValuePair::new(
            ParamVector::init_uniform(value_layout(state_dim), &mut vd_rng),
            config.tau,
        )?;
        let curves = fit_vd_msbe(&train, &mut pair, config)?;
        let residual = curves.last().map(|c| c.residual).unwrap_or(0.0);
        (Some(pair), residual)
    } else {
        (None, 0.0)
    };

    let mut aux: Vec<MemberAux> = (0..config.n_members)
        .map(|k| -> Result<MemberAux> {
            let vm_pair = if with_penalty {
                let mut rng = stream_rng(stream(config.seed, STREAM_VALUE), 1 + k as u64);
                ValuePair::new(
                    ParamVector::init_uniform(value_layout(state_dim), &mut rng),
                    config.tau,
                )?
            } else {
                // placeholder, never evaluated without the penalty
                ValuePair::new(ParamVector::zeros(value_layout(state_dim)), config.tau)?
            };
            Ok(MemberAux {
                vm_pair,
                adam: Adam::new(ensemble.members[k].param_count(), config.model_lr),
                batch_rng: stream_rng(stream(config.seed, STREAM_BATCH), k as u64),
                sample_rng: stream_rng(stream(config.seed, STREAM_MODEL), k as u64),
                vm_rng: stream_rng(stream(config.seed, STREAM_VALUE), 1000 + k as u64),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut validity = Validity::new(ensemble.prediction_error(&eval_set.transitions)?);
    let mut records = Vec::new();

    for iter in 0..config.max_outer_iters {
        // members are independent given the frozen data-side values
        let steps: Vec<MemberStep> = ensemble
            .members
            .par_iter_mut()
            .zip(aux.par_iter_mut())
            .map(|(member, aux)| -> Result<MemberStep> {
                let (l_vic_rho0, l_vic_data, vm_residual) = if let Some(vd_pair) = &vd_pair {
                    let curves = fit_vm(&train, &*member, &mut aux.vm_pair, config, &mut aux.vm_rng)?;
                    let vm_residual = curves.last().map(|c| c.residual).unwrap_or(0.0);
                    let vic =
                        value_inconsistency(&vd_pair.primary, &aux.vm_pair.primary, &probe)?;
                    (vic, vic, vm_residual)
                } else {
                    (0.0, 0.0, 0.0)
                };

                let batch = draw_batch(&train, config.batch_size, &mut aux.batch_rng);
                let nll = member.nll_loss(&batch)?;
                let grad = if let Some(vd_pair) = &vd_pair {
                    surrogate_gradient(
                        &*member,
                        &vd_pair.target,
                        &aux.vm_pair.target,
                        &batch,
                        lambda,
                        config.gamma,
                        &mut aux.sample_rng,
                    )?
                } else {
                    member.nll_grad(&batch)?
                };
                let mut theta = member.flat_params();
                aux.adam.step(&mut theta, &grad);
                member.set_flat_params(&theta)?;

                Ok(MemberStep {
                    nll,
                    l_vic_rho0,
                    l_vic_data,
                    grad_norm: l2_norm(&grad),
                    vm_residual,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let k = steps.len() as f64;
        record_push(
            &mut records,
            iter,
            steps.iter().map(|s| s.nll).sum::<f64>() / k,
            steps.iter().map(|s| s.l_vic_rho0).sum::<f64>() / k,
            steps.iter().map(|s| s.l_vic_data).sum::<f64>() / k,
            lambda,
            steps.iter().map(|s| s.grad_norm).sum::<f64>() / k,
            vd_residual,
            steps.iter().map(|s| s.vm_residual).sum::<f64>() / k,
        )?;

        let err = ensemble.prediction_error(&eval_set.transitions)?;
        if validity.exhausted(err, config.improvement_threshold, config.invalid_update_patience) {
            break;
        }
    }

    let report = TrainReport {
        records,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        model_handle: format!("ensemble({} members)", config.n_members),
    };
    Ok((ensemble, report))
}

///// Full penalized training loop. Dispatches on the dataset's space: tabular
/// datasets train an exact tabular model, continuous datasets a Gaussian
/// ensemble with per-member value penalties.
pub fn train_vipo(dataset: &OfflineDataset, config: &TrainConfig) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    match dataset.space {
        SpaceDescriptor::Tabular { .. } => {
            let (model, report) = run_tabular(dataset, config, true)?;
            Ok((TrainedModel::Tabular(model), report))
        }
        SpaceDescriptor::Continuous { .. } => {
            let (model, report) = run_ensemble(dataset, config, true)?;
            Ok((TrainedModel::Ensemble(model), report))
        }
    }
}

/// Plain maximum-likelihood training with the same batching, optimizer state,
/// and stopping rule, but no value machinery at all.
pub fn train_nll_only(dataset: &OfflineDataset, config: &TrainConfig) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    match dataset.space {
        SpaceDescriptor::Tabular { .. } => {
            let (model, report) = run_tabular(dataset, config, false)?;
            Ok((TrainedModel::Tabular(model), report))
        }
        SpaceDescriptor::Continuous { .. } => {
            let (model, report) = run_ensemble(dataset, config, false)?;
            Ok((TrainedModel::Ensemble(model), report))
        }
    }
}
