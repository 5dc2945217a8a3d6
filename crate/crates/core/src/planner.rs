//! Policy extraction from a learned dynamics model: a soft actor-critic loop
//! with uncertainty-penalized synthetic targets for continuous tasks, and an
//! exact pessimistic value-iteration planner for tabular models.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::prelude::*;
use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{OfflineDataset, SpaceDescriptor, Transition};
use crate::dynamics::{
    max_aleatoric_uncertainty, GaussianEnsemble, SampleDynamics, TabularDynamicsModel,
};
use crate::error::{ensure_finite, Error, Result};
use crate::mdp::TabularPolicy;
use crate::net::{sigmoid, Adam, Layout, ParamVector, ValuePair};
use crate::rng::{stream_rng, STREAM_BATCH, STREAM_ENV, STREAM_INIT, STREAM_MODEL, STREAM_VALUE};

pub const ACTOR_LOG_STD_BOUNDS: (f64, f64) = (-5.0, 2.0);
/// Keeps the squashing correction ln(1 − tanh²z + ε) finite at saturation.
const SQUASH_EPS: f64 = 1e-6;
/// Inner samples per member when estimating value spread during training.
const TRAIN_INNER_SAMPLES: usize = 4;

/// Which per-pair uncertainty feeds the synthetic-target penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    /// Spread across ensemble members of model-propagated critic targets.
    BellmanInconsistency,
    /// Largest member's predictive-covariance magnitude.
    MaxAleatoric,
}

/// Actor-critic planner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Model rollout length.
    pub h: usize,
    /// Fraction of each batch drawn from the real dataset.
    pub real_ratio: f64,
    /// Uncertainty penalty scale on synthetic targets.
    pub beta: f64,
    /// Entropy temperature.
    pub alpha: f64,
    pub k_critics: usize,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub n_steps: usize,
    /// Gradient steps between rollout refreshes.
    pub rollout_every: usize,
    /// Start states per rollout refresh.
    pub n_starts: usize,
    pub uncertainty: UncertaintyKind,
    pub seed: u64,
    /// Hidden layer widths for the actor and critic networks.
    pub hidden_sizes: Vec<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            h: 5,
            real_ratio: 0.5,
            beta: 1.0,
            alpha: 0.2,
            k_critics: 2,
            gamma: 0.99,
            tau: 5e-3,
            batch_size: 256,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            n_steps: 2000,
            rollout_every: 250,
            n_starts: 256,
            uncertainty: UncertaintyKind::BellmanInconsistency,
            seed: 0,
            hidden_sizes: vec![64, 64],
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h < 1 {
            return Err(Error::invalid("rollout length must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(Error::invalid("real_ratio must lie in [0,1]"));
        }
        if self.k_critics < 2 {
            return Err(Error::invalid("need at least 2 critics"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0,1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau must lie in [0,1]"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be finite and non-negative"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.n_steps == 0 || self.rollout_every == 0 || self.n_starts == 0
        {
            return Err(Error::invalid("counts must be positive"));
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer widths must be at least 1"));
        }
        Ok(())
    }
}

/// Bounded FIFO store for model-generated transitions.
#[derive(Debug, Clone)]
pub struct SyntheticBuffer {
    transitions: VecDeque<Transition>,
    pub capacity: usize,
}

impl SyntheticBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self {
            transitions: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.transitions.len() == self.capacity {
            self.transitions.pop_front();
        }
        self.transitions.push_back(t);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = Transition>) {
        for t in items {
            self.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.transitions[idx]
    }

    pub fn sample(&self, rng: &mut StdRng) -> &Transition {
        &self.transitions[rng.gen_range(0..self.transitions.len())]
    }
}

/// Anything that maps states to (possibly random) action vectors.
pub trait Controller {
    fn act(&self, s: &[f64], rng: &mut StdRng) -> Vec<f64>;
}

impl Controller for TabularPolicy {
    fn act(&self, s: &[f64], rng: &mut StdRng) -> Vec<f64> {
        vec![self.sample_action(s[0] as usize, rng) as f64]
    }
}

/// Squashed diagonal-Gaussian policy: a = tanh(μ(s) + σ(s)·ε).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianActor {
    pub params: ParamVector,
    pub state_dim: usize,
    pub action_dim: usize,
    pub log_std_bounds: (f64, f64),
}

impl GaussianActor {
    pub fn init(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut StdRng) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self {
            params: ParamVector::init_uniform(Layout::new(sizes), rng),
            state_dim,
            action_dim,
            log_std_bounds: ACTOR_LOG_STD_BOUNDS,
        }
    }

    /// Network head split into (mean, σ, raw-log-std, sigmoid(raw)).
    fn head(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let out = self.params.forward(s)?;
        let (mean, raw) = out.split_at(self.action_dim);
        let (lo, hi) = self.log_std_bounds;
        let sigma: Vec<f64> = raw
            .iter()
            .map(|&r| (lo + (hi - lo) * sigmoid(r)).exp())
            .collect();
        Ok((mean.to_vec(), sigma, raw.to_vec()))
    }

    /// Deterministic action at the squashed mean.
    pub fn act_mean(&self, s: &[f64]) -> Result<Vec<f64>> {
        let (mean, _, _) = self.head(s)?;
        Ok(mean.iter().map(|m| m.tanh()).collect())
    }

    /// Action and log-density for a fixed noise draw ε.
    pub fn action_logprob_given_noise(&self, s: &[f64], eps: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (mean, sigma, _) = self.head(s)?;
        let mut action = Vec::with_capacity(self.action_dim);
        let mut logp = 0.0;
        for i in 0..self.action_dim {
            let z = mean[i] + sigma[i] * eps[i];
            let t = z.tanh();
            action.push(t);
            logp += -0.5 * (2.0 * std::f64::consts::PI).ln()
                - sigma[i].ln()
                - 0.5 * eps[i] * eps[i]
                - (1.0 - t * t + SQUASH_EPS).ln();
        }
        Ok((action, logp))
    }

    /// Samples an action along with its log-density and the noise used.
    pub fn sample_with_logprob(
        &self,
        s: &[f64],
        rng: &mut StdRng,
    ) -> Result<(Vec<f64>, f64, Vec<f64>)> {
        let eps: Vec<f64> = (0..self.action_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (action, logp) = self.action_logprob_given_noise(s, &eps)?;
        Ok((action, logp, eps))
    }
}

impl Controller for GaussianActor {
    fn act(&self, s: &[f64], rng: &mut StdRng) -> Vec<f64> {
        self.sample_with_logprob(s, rng)
            .expect("actor/state dimension mismatch")
            .0
    }
}

fn min_q(critics: &[ParamVector], sa: &[f64]) -> Result<(usize, f64)> {
    let mut best = (0usize, f64::INFINITY);
    for (k, c) in critics.iter().enumerate() {
        let q = c.forward(sa)?[0];
        if q < best.1 {
            best = (k, q);
        }
    }
    Ok(best)
}

fn concat_sa(s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut sa = Vec::with_capacity(s.len() + a.len());
    sa.extend_from_slice(s);
    sa.extend_from_slice(a);
    sa
}

/// Loss α·logπ(a|s) − min_k Q_k(s,a) at a fixed noise draw, with its gradient
/// with respect to the actor parameters accumulated into `acc` (scaled).
/// Reparameterization: ε is held fixed, so the action moves with the policy.
pub fn actor_loss_grad(
    actor: &GaussianActor,
    s: &[f64],
    eps: &[f64],
    critics: &[ParamVector],
    alpha: f64,
    scale: f64,
    acc: &mut [f64],
) -> Result<f64> {
    let (mean, sigma, raw) = actor.head(s)?;
    let ad = actor.action_dim;
    let mut action = Vec::with_capacity(ad);
    let mut tanh_z = Vec::with_capacity(ad);
    let mut logp = 0.0;
    for i in 0..ad {
        let z = mean[i] + sigma[i] * eps[i];
        let t = z.tanh();
        tanh_z.push(t);
        action.push(t);
        logp += -0.5 * (2.0 * std::f64::consts::PI).ln()
            - sigma[i].ln()
            - 0.5 * eps[i] * eps[i]
            - (1.0 - t * t + SQUASH_EPS).ln();
    }
    let sa = concat_sa(s, &action);
    let (k_min, q) = min_q(critics, &sa)?;
    let loss = alpha * logp - q;

    // ∂q/∂a through the minimizing critic's input gradient
    let q_input_grad = critics[k_min].grad_input(&sa, &[1.0])?;
    let (lo, hi) = actor.log_std_bounds;
    let mut upstream = vec![0.0; 2 * ad];
    for i in 0..ad {
        let t = tanh_z[i];
        let u = 1.0 - t * t + SQUASH_EPS;
        let dlogp_dz = 2.0 * t * (1.0 - t * t) / u;
        let dloss_da = -q_input_grad[actor.state_dim + i];
        let dloss_dz = alpha * dlogp_dz + dloss_da * (1.0 - t * t);
        // σ enters through z = μ + σε and through the −ln σ density term
        let dloss_dsigma = dloss_dz * eps[i] + alpha * (-1.0 / sigma[i]);
        let sig = sigmoid(raw[i]);
        upstream[i] = dloss_dz;
        upstream[ad + i] = dloss_dsigma * sigma[i] * (hi - lo) * sig * (1.0 - sig);
    }
    actor.params.accumulate_grad(s, &upstream, scale, acc)?;
    Ok(loss)
}

/// Rolls `policy` through `model` for `h` steps from dataset start states.
pub fn rollout<M: SampleDynamics, C: Controller>(
    model: &M,
    dataset: &OfflineDataset,
    policy: &C,
    h: usize,
    n_starts: usize,
    rng: &mut StdRng,
) -> Result<Vec<Transition>> {
    if h < 1 {
        return Err(Error::invalid("rollout length must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("cannot pick rollout starts from an empty dataset"));
    }
    let mut out = Vec::with_capacity(h * n_starts);
    for _ in 0..n_starts {
        let mut s = dataset.transitions[rng.gen_range(0..dataset.len())].s.clone();
        for _ in 0..h {
            let a = policy.act(&s, rng);
            let (r, s_next) = model.sample_next(&s, &a, rng);
            out.push(Transition {
                s: s.clone(),
                a,
                r,
                s_next: s_next.clone(),
                done: false,
            });
            s = s_next;
        }
    }
    Ok(out)
}

/// Spread across ensemble members of the model-propagated critic target:
/// each member estimates γ·E[min_k Q̄(s', a')] with s' drawn from that member
/// and a' from the policy; returns the population standard deviation.
/// Members share one random stream so identical members yield exactly zero.
pub fn bellman_inconsistency<M: SampleDynamics, C: Controller>(
    members: &[M],
    critics_target: &[ParamVector],
    policy: &C,
    s: &[f64],
    a: &[f64],
    gamma: f64,
    n_inner: usize,
    rng: &mut StdRng,
) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::invalid("value-spread uncertainty needs at least 2 members"));
    }
    if critics_target.is_empty() || n_inner == 0 {
        return Err(Error::invalid("need critics and at least one inner sample"));
    }
    let common_seed: u64 = rng.gen();
    let mut estimates = Vec::with_capacity(members.len());
    for member in members {
        let mut crn = StdRng::seed_from_u64(common_seed);
        let mut total = 0.0;
        for _ in 0..n_inner {
            let (_, s_next) = member.sample_next(s, a, &mut crn);
            let a_next = policy.act(&s_next, &mut crn);
            let sa = concat_sa(&s_next, &a_next);
            total += gamma * min_q(critics_target, &sa)?.1;
        }
        estimates.push(total / n_inner as f64);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Critic regression target: y = r + γ(1−done)[min_k Q̄(s',a') − α·logπ(a'|s')],
/// minus β·uncertainty when the transition is synthetic.
pub fn penalized_target(
    t: &Transition,
    critics_target: &[ParamVector],
    policy: &GaussianActor,
    config: &PlannerConfig,
    uncertainty: f64,
    synthetic: bool,
    rng: &mut StdRng,
) -> Result<f64> {
    if !(uncertainty >= 0.0 && uncertainty.is_finite()) {
        return Err(Error::invalid("uncertainty must be finite and non-negative"));
    }
    let (a_next, logp, _) = policy.sample_with_logprob(&t.s_next, rng)?;
    let sa = concat_sa(&t.s_next, &a_next);
    let q = min_q(critics_target, &sa)?.1;
    let cont = if t.done {
        0.0
    } else {
        config.gamma * (q - config.alpha * logp)
    };
    let mut y = t.r + cont;
    if synthetic {
        y -= config.beta * uncertainty;
    }
    ensure_finite(y, "critic target")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub step: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Mean min-critic value of the squashed-mean action over probe states:
    /// a model-side estimate of the policy's value, not a true-env return.
    pub eval_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub records: Vec<PlanRecord>,
    pub wall_clock_seconds: f64,
}

impl PlanReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,critic_loss,actor_loss,eval_return\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e}\n",
                r.step, r.critic_loss, r.actor_loss, r.eval_return
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub actor: GaussianActor,
    pub critics: Vec<ValuePair>,
    pub report: PlanReport,
}

/// Soft actor-critic over mixed real/synthetic batches with penalized
/// synthetic targets. Targets are always computed from the target critics for
/// the entire batch before any primary update.
pub fn plan_actor_critic(
    model: &GaussianEnsemble,
    dataset: &OfflineDataset,
    config: &PlannerConfig,
) -> Result<PlanOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("planning needs a nonempty dataset"));
    }
    let (sd, ad) = match dataset.space {
        SpaceDescriptor::Continuous {
            state_dim,
            action_dim,
        } => (state_dim, action_dim),
        SpaceDescriptor::Tabular { .. } => {
            return Err(Error::invalid(
                "actor-critic planning expects continuous data; use the tabular planner",
            ))
        }
    };
    let start = Instant::now();
    let mut init_rng = stream_rng(config.seed, STREAM_INIT);
    let mut actor = GaussianActor::init(sd, ad, &config.hidden_sizes, &mut init_rng);
    let mut critic_sizes = vec![sd + ad];
    critic_sizes.extend_from_slice(&config.hidden_sizes);
    critic_sizes.push(1);
    let mut critics: Vec<ValuePair> = Vec::with_capacity(config.k_critics);
    for _ in 0..config.k_critics {
        let net = ParamVector::init_uniform(Layout::new(critic_sizes.clone()), &mut init_rng);
        critics.push(ValuePair::new(net, config.tau)?);
    }
    let mut actor_opt = Adam::new(actor.params.len(), config.actor_lr);
    let mut critic_opts: Vec<Adam> = critics
        .iter()
        .map(|c| Adam::new(c.primary.len(), config.critic_lr))
        .collect();

    let mut batch_rng = stream_rng(config.seed, STREAM_BATCH);
    let mut model_rng = stream_rng(config.seed, STREAM_MODEL);
    let mut rollout_rng = stream_rng(config.seed, STREAM_ENV);
    let mut noise_rng = stream_rng(config.seed, STREAM_VALUE);

    let mut buffer = SyntheticBuffer::new((10 * config.n_starts * config.h).max(1));
    let probe: Vec<Vec<f64>> = dataset
        .transitions
        .iter()
        .take(64)
        .map(|t| t.s.clone())
        .collect();
    let record_interval = (config.n_steps / 100).max(1);
    let b = config.batch_size;
    let mut records = Vec::new();

    for step in 0..config.n_steps {
        if step % config.rollout_every == 0 {
            let fresh = rollout(
                model,
                dataset,
                &actor,
                config.h,
                config.n_starts,
                &mut rollout_rng,
            )?;
            buffer.extend(fresh);
        }

        let n_real = if buffer.is_empty() {
            b
        } else {
            ((config.real_ratio * b as f64).round() as usize).min(b)
        };
        let mut batch: Vec<(Transition, bool)> = Vec::with_capacity(b);
        for _ in 0..n_real {
            let t = dataset.transitions[batch_rng.gen_range(0..dataset.len())].clone();
            batch.push((t, false));
        }
        for _ in n_real..b {
            batch.push((buffer.sample(&mut batch_rng).clone(), true));
        }

        // targets first, from a snapshot of the target networks
        let target_nets: Vec<ParamVector> = critics.iter().map(|c| c.target.clone()).collect();
        let mut targets = Vec::with_capacity(b);
        for (t, synthetic) in &batch {
            let u = if *synthetic && config.beta > 0.0 {
                match config.uncertainty {
                    UncertaintyKind::BellmanInconsistency => bellman_inconsistency(
                        &model.members,
                        &target_nets,
                        &actor,
                        &t.s,
                        &t.a,
                        config.gamma,
                        TRAIN_INNER_SAMPLES,
                        &mut model_rng,
                    )?,
                    UncertaintyKind::MaxAleatoric => {
                        max_aleatoric_uncertainty(model, &t.s, &t.a)?
                    }
                }
            } else {
                0.0
            };
            targets.push(penalized_target(
                t,
                &target_nets,
                &actor,
                config,
                u,
                *synthetic,
                &mut model_rng,
            )?);
        }

        let mut critic_loss = 0.0;
        for (pair, opt) in critics.iter_mut().zip(critic_opts.iter_mut()) {
            let mut grad = vec![0.0; pair.primary.len()];
            let mut loss = 0.0;
            for ((t, _), y) in batch.iter().zip(&targets) {
                let sa = concat_sa(&t.s, &t.a);
                let q = pair.primary.forward(&sa)?[0];
                let resid = q - y;
                loss += resid * resid;
                pair.primary
                    .accumulate_grad(&sa, &[2.0 * resid / b as f64], 1.0, &mut grad)?;
            }
            loss /= b as f64;
            ensure_finite(loss, "critic loss")?;
            opt.step(&mut pair.primary.values, &grad);
            critic_loss += loss;
        }
        critic_loss /= config.k_critics as f64;

        let primaries: Vec<ParamVector> = critics.iter().map(|c| c.primary.clone()).collect();
        let mut actor_grad = vec![0.0; actor.params.len()];
        let mut actor_loss = 0.0;
        for (t, _) in &batch {
            let eps: Vec<f64> = (0..ad)
                .map(|_| noise_rng.sample::<f64, _>(StandardNormal))
                .collect();
            actor_loss += actor_loss_grad(
                &actor,
                &t.s,
                &eps,
                &primaries,
                config.alpha,
                1.0 / b as f64,
                &mut actor_grad,
            )?;
        }
        actor_loss /= b as f64;
        ensure_finite(actor_loss, "actor loss")?;
        actor_opt.step(&mut actor.params.values, &actor_grad);

        for pair in critics.iter_mut() {
            pair.soft_update();
        }

        if step % record_interval == 0 || step + 1 == config.n_steps {
            let mut eval = 0.0;
            for s in &probe {
                let a = actor.act_mean(s)?;
                eval += min_q(&primaries, &concat_sa(s, &a))?.1;
            }
            eval /= probe.len() as f64;
            records.push(PlanRecord {
                step,
                critic_loss,
                actor_loss,
                eval_return: ensure_finite(eval, "probe value estimate")?,
            });
        }
    }

    Ok(PlanOutcome {
        actor,
        critics,
        report: PlanReport {
            records,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Result of exact pessimistic planning on a tabular model.
#[derive(Debug, Clone)]
pub struct TabularPlan {
    pub policy: TabularPolicy,
    pub value: Array1<f64>,
    pub q: Array2<f64>,
    pub iters: usize,
}

/// Value iteration on the model with rewards r̂(s,a) − β·U(s,a), run until the
/// sup-norm change drops below `tol`; returns the greedy deterministic policy.
pub fn plan_tabular(
    model: &TabularDynamicsModel,
    uncertainty: &Array2<f64>,
    beta: f64,
    gamma: f64,
    tol: f64,
) -> Result<TabularPlan> {
    let (ns, na) = (model.n_states(), model.n_actions());
    if uncertainty.dim() != (ns, na) {
        return Err(Error::invalid("uncertainty table shape mismatch"));
    }
    if uncertainty.iter().any(|u| !u.is_finite()) || !beta.is_finite() {
        return Err(Error::invalid("uncertainty and beta must be finite"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid("gamma must lie in [0,1)"));
    }
    if tol <= 0.0 {
        return Err(Error::invalid("tol must be positive"));
    }
    let mut penalized = Array2::zeros((ns, na));
    let mut probs = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            penalized[[s, a]] = model.reward_table[[s, a]] - beta * uncertainty[[s, a]];
            probs.push(model.probs_row(s, a));
        }
    }
    let max_iters = 10_000_000usize;
    let mut v = Array1::<f64>::zeros(ns);
    let mut iters = 0;
    loop {
        let mut next = Array1::<f64>::zeros(ns);
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let row = &probs[s * na + a];
                let q: f64 = penalized[[s, a]]
                    + gamma * row.iter().zip(v.iter()).map(|(p, vj)| p * vj).sum::<f64>();
                best = best.max(q);
            }
            next[s] = best;
        }
        let residual = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        iters += 1;
        if residual <= tol {
            break;
        }
        if iters >= max_iters {
            return Err(Error::Convergence {
                iters,
                residual,
                tol,
            });
        }
    }
    let mut q = Array2::zeros((ns, na));
    let mut actions = Vec::with_capacity(ns);
    for s in 0..ns {
        let mut best = (0usize, f64::NEG_INFINITY);
        for a in 0..na {
            let row = &probs[s * na + a];
            q[[s, a]] = penalized[[s, a]]
                + gamma * row.iter().zip(v.iter()).map(|(p, vj)| p * vj).sum::<f64>();
            if q[[s, a]] > best.1 {
                best = (a, q[[s, a]]);
            }
        }
        actions.push(best.0);
    }
    Ok(TabularPlan {
        policy: TabularPolicy::greedy(&actions, na),
        value: v,
        q,
        iters,
    })
}

/// Count-based pessimism table for the tabular pipeline: U(s,a) = 1/√(1+N(s,a)).
pub fn visitation_uncertainty(dataset: &OfflineDataset) -> Result<Array2<f64>> {
    let (ns, na) = dataset.tabular_sizes()?;
    let mut counts = Array2::<f64>::zeros((ns, na));
    for t in &dataset.transitions {
        counts[[t.s_index(), t.a_index()]] += 1.0;
    }
    Ok(counts.mapv(|c| 1.0 / (1.0 + c).sqrt()))
}
