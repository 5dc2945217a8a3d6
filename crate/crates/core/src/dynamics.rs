//! Learned dynamics models P(s', r | s, a) in two interchangeable forms:
//! an exactly differentiable tabular softmax model (the oracle substrate) and
//! a practical ensemble of diagonal-Gaussian heads.
//!
//! Tabular rewards are a deterministic table, so the tabular likelihood
//! decomposes into a categorical next-state term plus a squared reward error,
//! with no reward-noise nuisance in the gradient oracles.

use ndarray::prelude::*;
use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{OfflineDataset, Transition};
use crate::error::{ensure_finite, Error, Result};
use crate::net::{sigmoid, Layout, ParamVector};
use crate::rng::sample_categorical;

/// Default ensemble size.
pub const DEFAULT_N_MEMBERS: usize = 7;
/// Default smooth clamp range for per-dimension log-variances.
pub const LOG_VAR_BOUNDS: (f64, f64) = (-10.0, 0.5);
/// Laplace pseudo-count used by the tabular maximum-likelihood fit.
pub const MLE_SMOOTHING: f64 = 1e-3;

/// Anything that can draw (r, s') given (s, a) — single heads and ensembles.
pub trait SampleDynamics {
    fn sample_next(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>);
}

impl SampleDynamics for TabularDynamicsModel {
    fn sample_next(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>) {
        DynamicsHead::sample(self, s, a, rng)
    }
}

impl SampleDynamics for GaussianMember {
    fn sample_next(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>) {
        DynamicsHead::sample(self, s, a, rng)
    }
}

impl SampleDynamics for GaussianEnsemble {
    fn sample_next(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>) {
        self.sample(s, a, rng)
    }
}

/// Common interface of trainable dynamics heads: flat parameters, likelihood
/// loss/gradient, sampling, and the per-sample score ∇ log P(s', r | s, a).
pub trait DynamicsHead {
    fn param_count(&self) -> usize;
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, values: &[f64]) -> Result<()>;
    fn nll_loss(&self, batch: &[Transition]) -> Result<f64>;
    /// Analytic gradient of `nll_loss` over the flat parameters.
    fn nll_grad(&self, batch: &[Transition]) -> Result<Vec<f64>>;
    fn sample(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>);
    /// acc += factor · ∇ log P(s_next, r | s, a)
    fn accumulate_score(
        &self,
        s: &[f64],
        a: &[f64],
        r: f64,
        s_next: &[f64],
        factor: f64,
        acc: &mut [f64],
    ) -> Result<()>;
    /// Mean squared error of the model's mean prediction of (s', r); for the
    /// tabular head the next-state part is the probabilistic (Brier) error.
    fn prediction_error(&self, batch: &[Transition]) -> Result<f64>;
}

// ---------------------------------------------------------------------------
// Tabular softmax model
// ---------------------------------------------------------------------------

/// Dense tabular model: next-state distributions are row-softmaxes of
/// `logits`, rewards come from a deterministic table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDynamicsModel {
    pub logits: Array3<f64>,
    pub reward_table: Array2<f64>,
}

pub(crate) fn embedded_index(x: &[f64]) -> usize {
    debug_assert_eq!(x.len(), 1, "expected a tabular-embedded scalar");
    x[0] as usize
}

impl TabularDynamicsModel {
    pub fn new(logits: Array3<f64>, reward_table: Array2<f64>) -> Result<Self> {
        let (s, a, s2) = logits.dim();
        if s2 != s || reward_table.dim() != (s, a) {
            return Err(Error::invalid("tabular model tensor shapes disagree"));
        }
        if logits.iter().chain(reward_table.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("tabular model has non-finite entries"));
        }
        Ok(Self { logits, reward_table })
    }

    /// Random small-logit model; the starting point for training runs.
    pub fn init_random(n_states: usize, n_actions: usize, rng: &mut StdRng) -> Self {
        let logits = Array3::from_shape_fn((n_states, n_actions, n_states), |_| {
            rng.gen_range(-0.1..0.1)
        });
        let reward_table = Array2::zeros((n_states, n_actions));
        Self { logits, reward_table }
    }

    /// Model whose softmax rows equal the true kernel and whose rewards equal
    /// the true table (zero-probability entries get a floor of 1e-300).
    pub fn from_mdp(mdp: &crate::mdp::TabularMdp) -> Self {
        let logits = mdp.transition.mapv(|p| p.max(1e-300).ln());
        Self {
            logits,
            reward_table: mdp.reward.clone(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.logits.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.logits.dim().1
    }

    /// softmax(logits[s][a])
    pub fn probs_row(&self, s: usize, a: usize) -> Vec<f64> {
        let row = self.logits.slice(s![s, a, ..]);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Full transition tensor implied by the logits.
    pub fn transition_tensor(&self) -> Array3<f64> {
        let (s_n, a_n, _) = self.logits.dim();
        let mut t = Array3::zeros((s_n, a_n, s_n));
        for s in 0..s_n {
            for a in 0..a_n {
                for (s2, p) in self.probs_row(s, a).into_iter().enumerate() {
                    t[[s, a, s2]] = p;
                }
            }
        }
        t
    }

    /// State-to-state kernel under a policy.
    pub fn policy_kernel(&self, policy: &crate::mdp::TabularPolicy) -> Array2<f64> {
        let (s_n, a_n, _) = self.logits.dim();
        let mut kernel = Array2::zeros((s_n, s_n));
        for s in 0..s_n {
            for a in 0..a_n {
                let w = policy.probs[[s, a]];
                if w == 0.0 {
                    continue;
                }
                for (s2, p) in self.probs_row(s, a).into_iter().enumerate() {
                    kernel[[s, s2]] += w * p;
                }
            }
        }
        kernel
    }

    /// Flat coordinate of logits[s][a][k].
    pub fn logit_coord(&self, s: usize, a: usize, k: usize) -> usize {
        (s * self.n_actions() + a) * self.n_states() + k
    }

    /// Flat coordinate of reward_table[s][a].
    pub fn reward_coord(&self, s: usize, a: usize) -> usize {
        self.n_states() * self.n_actions() * self.n_states() + s * self.n_actions() + a
    }

    fn check_batch(&self, batch: &[Transition]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        for t in batch {
            if t.s.len() != 1 || t.a.len() != 1 || t.s_next.len() != 1 {
                return Err(Error::invalid("tabular model needs tabular-embedded transitions"));
            }
            if t.s_index() >= self.n_states()
                || t.s_next_index() >= self.n_states()
                || t.a_index() >= self.n_actions()
            {
                return Err(Error::invalid("transition index out of model range"));
            }
        }
        Ok(())
    }
}

impl DynamicsHead for TabularDynamicsModel {
    fn param_count(&self) -> usize {
        let (s, a, _) = self.logits.dim();
        s * a * s + s * a
    }

    fn flat_params(&self) -> Vec<f64> {
        self.logits
            .iter()
            .chain(self.reward_table.iter())
            .copied()
            .collect()
    }

    fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::invalid("flat parameter length mismatch"));
        }
        let n_logits = self.logits.len();
        for (dst, src) in self.logits.iter_mut().zip(&values[..n_logits]) {
            *dst = *src;
        }
        for (dst, src) in self.reward_table.iter_mut().zip(&values[n_logits..]) {
            *dst = *src;
        }
        Ok(())
    }

    fn nll_loss(&self, batch: &[Transition]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for t in batch {
            let (s, a) = (t.s_index(), t.a_index());
            let p = self.probs_row(s, a)[t.s_next_index()];
            let r_err = self.reward_table[[s, a]] - t.r;
            total += -p.ln() + r_err * r_err;
        }
        ensure_finite(total / batch.len() as f64, "tabular nll")
    }

    fn nll_grad(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let mut grad = vec![0.0; self.param_count()];
        let w = 1.0 / batch.len() as f64;
        for t in batch {
            let (s, a) = (t.s_index(), t.a_index());
            let probs = self.probs_row(s, a);
            for (k, p) in probs.iter().enumerate() {
                let indicator = if k == t.s_next_index() { 1.0 } else { 0.0 };
                grad[self.logit_coord(s, a, k)] += w * (p - indicator);
            }
            grad[self.reward_coord(s, a)] += w * 2.0 * (self.reward_table[[s, a]] - t.r);
        }
        Ok(grad)
    }

    fn sample(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>) {
        let (si, ai) = (embedded_index(s), embedded_index(a));
        let probs = self.probs_row(si, ai);
        let s2 = sample_categorical(&probs, rng);
        (self.reward_table[[si, ai]], vec![s2 as f64])
    }

    /// Categorical score only: the reward is deterministic, so the score has
    /// no reward-table block (the exact reward path lives in the oracle module).
    fn accumulate_score(
        &self,
        s: &[f64],
        a: &[f64],
        _r: f64,
        s_next: &[f64],
        factor: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        let (si, ai) = (embedded_index(s), embedded_index(a));
        let target = embedded_index(s_next);
        let probs = self.probs_row(si, ai);
        for (k, p) in probs.iter().enumerate() {
            let indicator = if k == target { 1.0 } else { 0.0 };
            acc[self.logit_coord(si, ai, k)] += factor * (indicator - p);
        }
        Ok(())
    }

    fn prediction_error(&self, batch: &[Transition]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for t in batch {
            let (s, a) = (t.s_index(), t.a_index());
            let probs = self.probs_row(s, a);
            for (k, p) in probs.iter().enumerate() {
                let indicator = if k == t.s_next_index() { 1.0 } else { 0.0 };
                total += (p - indicator) * (p - indicator);
            }
            let r_err = self.reward_table[[s, a]] - t.r;
            total += r_err * r_err;
        }
        ensure_finite(total / batch.len() as f64, "tabular prediction error")
    }
}

/// Empirical transition frequencies (Laplace-smoothed) and mean rewards.
pub fn fit_mle_tabular(dataset: &OfflineDataset) -> Result<TabularDynamicsModel> {
    let (n_states, n_actions) = dataset.tabular_sizes()?;
    let mut counts = Array3::<f64>::zeros((n_states, n_actions, n_states));
    let mut r_sum = Array2::<f64>::zeros((n_states, n_actions));
    for t in &dataset.transitions {
        counts[[t.s_index(), t.a_index(), t.s_next_index()]] += 1.0;
        r_sum[[t.s_index(), t.a_index()]] += t.r;
    }
    let mut logits = Array3::zeros((n_states, n_actions, n_states));
    let mut reward_table = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        for a in 0..n_actions {
            let row_count: f64 = counts.slice(s![s, a, ..]).sum();
            let denom = row_count + MLE_SMOOTHING * n_states as f64;
            for k in 0..n_states {
                logits[[s, a, k]] = ((counts[[s, a, k]] + MLE_SMOOTHING) / denom).ln();
            }
            if row_count > 0.0 {
                reward_table[[s, a]] = r_sum[[s, a]] / row_count;
            }
        }
    }
    TabularDynamicsModel::new(logits, reward_table)
}

// ---------------------------------------------------------------------------
// Gaussian ensemble
// ---------------------------------------------------------------------------

/// One diagonal-Gaussian head over the concatenated target x = [s'; r]
/// (reward last). The network maps [s; a] to [mean; raw log-variance]; raw
/// log-variances are squashed smoothly into `log_var_bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMember {
    pub params: ParamVector,
    pub state_dim: usize,
    pub action_dim: usize,
    pub log_var_bounds: (f64, f64),
}

impl GaussianMember {
    pub fn layout(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Layout {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * (state_dim + 1));
        Layout::new(sizes)
    }

    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        log_var_bounds: (f64, f64),
        rng: &mut StdRng,
    ) -> Self {
        assert!(log_var_bounds.0 < log_var_bounds.1);
        Self {
            params: ParamVector::init_uniform(Self::layout(state_dim, action_dim, hidden), rng),
            state_dim,
            action_dim,
            log_var_bounds,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.state_dim + 1
    }

    fn clamp_log_var(&self, raw: f64) -> f64 {
        let (lo, hi) = self.log_var_bounds;
        lo + (hi - lo) * sigmoid(raw)
    }

    fn clamp_log_var_deriv(&self, raw: f64) -> f64 {
        let (lo, hi) = self.log_var_bounds;
        let s = sigmoid(raw);
        (hi - lo) * s * (1.0 - s)
    }

    fn input_of(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(s.len() + a.len());
        input.extend_from_slice(s);
        input.extend_from_slice(a);
        input
    }

    /// (mean, log_var, raw_log_var) of x = [s'; r] at (s, a).
    pub fn head(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let out = self.params.forward(&self.input_of(s, a))?;
        let d = self.out_dim();
        let mean = out[..d].to_vec();
        let raw = out[d..].to_vec();
        let log_var = raw.iter().map(|&v| self.clamp_log_var(v)).collect();
        Ok((mean, log_var, raw))
    }

    fn target_of(t: &Transition) -> Vec<f64> {
        let mut x = t.s_next.clone();
        x.push(t.r);
        x
    }

    /// Per-sample loss (μ−x)ᵀ Σ⁻¹ (μ−x) + log det Σ.
    pub fn sample_nll(&self, t: &Transition) -> Result<f64> {
        let (mean, log_var, _) = self.head(&t.s, &t.a)?;
        let x = Self::target_of(t);
        let mut loss = 0.0;
        for d in 0..self.out_dim() {
            let resid = mean[d] - x[d];
            loss += resid * resid * (-log_var[d]).exp() + log_var[d];
        }
        Ok(loss)
    }

    /// acc += scale · ∇ of the per-sample loss above.
    fn accumulate_nll_grad(&self, t: &Transition, scale: f64, acc: &mut [f64]) -> Result<()> {
        let input = self.input_of(&t.s, &t.a);
        let (mean, log_var, raw) = self.head(&t.s, &t.a)?;
        let x = Self::target_of(t);
        let d_out = self.out_dim();
        let mut upstream = vec![0.0; 2 * d_out];
        for d in 0..d_out {
            let inv_var = (-log_var[d]).exp();
            let resid = mean[d] - x[d];
            upstream[d] = 2.0 * resid * inv_var;
            upstream[d_out + d] =
                (1.0 - resid * resid * inv_var) * self.clamp_log_var_deriv(raw[d]);
        }
        self.params.accumulate_grad(&input, &upstream, scale, acc)?;
        Ok(())
    }
}

impl DynamicsHead for GaussianMember {
    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.params.values.clone()
    }

    fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::invalid("flat parameter length mismatch"));
        }
        self.params.values.copy_from_slice(values);
        Ok(())
    }

    fn nll_loss(&self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        let mut total = 0.0;
        for t in batch {
            total += self.sample_nll(t)?;
        }
        ensure_finite(total / batch.len() as f64, "gaussian nll")
    }

    fn nll_grad(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        let mut grad = vec![0.0; self.param_count()];
        let w = 1.0 / batch.len() as f64;
        for t in batch {
            self.accumulate_nll_grad(t, w, &mut grad)?;
        }
        Ok(grad)
    }

    fn sample(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>) {
        let (mean, log_var, _) = self.head(s, a).expect("head evaluation");
        let d = self.out_dim();
        let mut draw = Vec::with_capacity(d);
        for i in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            draw.push(mean[i] + (0.5 * log_var[i]).exp() * eps);
        }
        let r = draw.pop().unwrap();
        (r, draw)
    }

    /// True Gaussian score: ∇ log N(x; μ, diag Σ) through the head network.
    fn accumulate_score(
        &self,
        s: &[f64],
        a: &[f64],
        r: f64,
        s_next: &[f64],
        factor: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        let input = self.input_of(s, a);
        let (mean, log_var, raw) = self.head(s, a)?;
        let mut x = s_next.to_vec();
        x.push(r);
        let d_out = self.out_dim();
        let mut upstream = vec![0.0; 2 * d_out];
        for d in 0..d_out {
            let inv_var = (-log_var[d]).exp();
            let resid = x[d] - mean[d];
            upstream[d] = resid * inv_var;
            upstream[d_out + d] =
                0.5 * (resid * resid * inv_var - 1.0) * self.clamp_log_var_deriv(raw[d]);
        }
        self.params.accumulate_grad(&input, &upstream, factor, acc)?;
        Ok(())
    }

    fn prediction_error(&self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        let mut total = 0.0;
        for t in batch {
            let (mean, _, _) = self.head(&t.s, &t.a)?;
            let x = Self::target_of(t);
            for d in 0..self.out_dim() {
                total += (mean[d] - x[d]) * (mean[d] - x[d]);
            }
        }
        ensure_finite(total / batch.len() as f64, "gaussian prediction error")
    }
}

/// N independently initialized Gaussian heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEnsemble {
    pub members: Vec<GaussianMember>,
}

impl GaussianEnsemble {
    pub fn new(
        n_members: usize,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        log_var_bounds: (f64, f64),
        rng: &mut StdRng,
    ) -> Result<Self> {
        if n_members == 0 {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        let members = (0..n_members)
            .map(|_| GaussianMember::new(state_dim, action_dim, hidden, log_var_bounds, rng))
            .collect();
        Ok(Self { members })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    /// Mean member NLL.
    pub fn nll_loss(&self, batch: &[Transition]) -> Result<f64> {
        let mut total = 0.0;
        for m in &self.members {
            total += m.nll_loss(batch)?;
        }
        Ok(total / self.members.len() as f64)
    }

    /// Draws from a uniformly chosen member.
    pub fn sample(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>) {
        let k = rng.gen_range(0..self.members.len());
        self.members[k].sample(s, a, rng)
    }

    /// Squared error of the ensemble-mean prediction of (s', r).
    pub fn prediction_error(&self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        let d_out = self.members[0].out_dim();
        let mut total = 0.0;
        for t in batch {
            let mut mean = vec![0.0; d_out];
            for m in &self.members {
                let (mu, _, _) = m.head(&t.s, &t.a)?;
                for d in 0..d_out {
                    mean[d] += mu[d] / self.members.len() as f64;
                }
            }
            let x = GaussianMember::target_of(t);
            for d in 0..d_out {
                total += (mean[d] - x[d]) * (mean[d] - x[d]);
            }
        }
        ensure_finite(total / batch.len() as f64, "ensemble prediction error")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// max_k ‖Σ_k(s,a)‖_F over the ensemble's diagonal covariances.
pub fn max_aleatoric_uncertainty(ensemble: &GaussianEnsemble, s: &[f64], a: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for m in &ensemble.members {
        let (_, log_var, _) = m.head(s, a)?;
        let frob = log_var
            .iter()
            .map(|lv| (2.0 * lv).exp())
            .sum::<f64>()
            .sqrt();
        best = best.max(frob);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect, SpaceDescriptor};
    use crate::mdp::{random_mdp, TabularPolicy};
    use approx::assert_abs_diff_eq;

    fn batch_from(ds: &OfflineDataset) -> &[Transition] {
        &ds.transitions
    }

    #[test]
    fn uniform_softmax_pays_log_k_per_sample() {
        let model = TabularDynamicsModel::new(
            Array3::zeros((3, 2, 3)),
            Array2::zeros((3, 2)),
        )
        .unwrap();
        let batch = vec![Transition::tabular(0, 1, 0.0, 2)];
        let nll = model.nll_loss(&batch).unwrap();
        assert_abs_diff_eq!(nll, 3.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn tabular_nll_matches_direct_formula() {
        let mut rng = StdRng::seed_from_u64(1);
        let model = TabularDynamicsModel::init_random(3, 2, &mut rng);
        let mdp = random_mdp(3, 2, 0.9, 2);
        let ds = collect(&mdp, &TabularPolicy::uniform(3, 2), 5, 6, 3).unwrap();
        let got = model.nll_loss(batch_from(&ds)).unwrap();
        let mut expect = 0.0;
        for t in &ds.transitions {
            let probs = model.probs_row(t.s_index(), t.a_index());
            let rhat = model.reward_table[[t.s_index(), t.a_index()]];
            expect += -probs[t.s_next_index()].ln() + (rhat - t.r).powi(2);
        }
        expect /= ds.len() as f64;
        assert_abs_diff_eq!(got, expect, epsilon = 1e-13);
    }

    #[test]
    fn gaussian_nll_is_zero_at_unit_covariance_exact_mean() {
        // single linear layer so we can pin outputs exactly
        let mut member = GaussianMember {
            params: ParamVector::zeros(GaussianMember::layout(1, 1, &[])),
            state_dim: 1,
            action_dim: 1,
            log_var_bounds: (-10.0, 0.5),
        };
        // out_dim = 2 (s', r); outputs = [mean_s, mean_r, raw_s, raw_r]
        // choose raw so that the clamped log-variance is exactly 0
        let (lo, hi) = member.log_var_bounds;
        let p = (0.0 - lo) / (hi - lo);
        let raw_for_zero = (p / (1.0 - p)).ln();
        let n_in = 2;
        let n_out = 4;
        let bias_off = n_out * n_in;
        member.params.values[bias_off] = 0.7; // mean s'
        member.params.values[bias_off + 1] = -0.3; // mean r
        member.params.values[bias_off + 2] = raw_for_zero;
        member.params.values[bias_off + 3] = raw_for_zero;
        let t = Transition {
            s: vec![0.0],
            a: vec![0.0],
            r: -0.3,
            s_next: vec![0.7],
            done: false,
        };
        assert_abs_diff_eq!(member.sample_nll(&t).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_nll_matches_direct_formula() {
        let mut rng = StdRng::seed_from_u64(4);
        let member = GaussianMember::new(2, 1, &[8], LOG_VAR_BOUNDS, &mut rng);
        let t = Transition {
            s: vec![0.3, -0.6],
            a: vec![0.9],
            r: 0.4,
            s_next: vec![-0.2, 1.1],
            done: false,
        };
        let got = member.nll_loss(std::slice::from_ref(&t)).unwrap();
        let (mean, log_var, _) = member.head(&t.s, &t.a).unwrap();
        let x = [t.s_next[0], t.s_next[1], t.r];
        let mut expect = 0.0;
        for d in 0..3 {
            expect += (mean[d] - x[d]).powi(2) / log_var[d].exp() + log_var[d];
        }
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn log_variances_stay_inside_bounds() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut member = GaussianMember::new(1, 1, &[4], (-10.0, 0.5), &mut rng);
        // blow up the raw outputs; clamped values must stay in range
        for v in member.params.values.iter_mut() {
            *v *= 100.0;
        }
        for seed in 0..20 {
            let mut r2 = StdRng::seed_from_u64(seed);
            let s = [r2.gen_range(-5.0..5.0)];
            let a = [r2.gen_range(-5.0..5.0)];
            let (_, log_var, _) = member.head(&s, &a).unwrap();
            for lv in log_var {
                assert!((-10.0..=0.5).contains(&lv), "log_var {lv} escaped bounds");
            }
        }
    }

    #[test]
    fn gradient_is_zero_at_exact_mle() {
        // exact (unsmoothed) MLE: softmax equals empirical frequencies,
        // rewards equal empirical means, so the gradient vanishes
        let mdp = random_mdp(3, 2, 0.9, 8);
        let ds = collect(&mdp, &TabularPolicy::uniform(3, 2), 60, 10, 9).unwrap();
        let (n_states, n_actions) = (3, 2);
        let mut counts = Array3::<f64>::zeros((n_states, n_actions, n_states));
        let mut r_sum = Array2::<f64>::zeros((n_states, n_actions));
        for t in &ds.transitions {
            counts[[t.s_index(), t.a_index(), t.s_next_index()]] += 1.0;
            r_sum[[t.s_index(), t.a_index()]] += t.r;
        }
        let mut logits = Array3::zeros((n_states, n_actions, n_states));
        let mut rewards = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            for a in 0..n_actions {
                let row: f64 = counts.slice(s![s, a, ..]).sum();
                assert!(row > 0.0, "test requires full (s,a) coverage");
                for k in 0..n_states {
                    // empirical frequencies, floored to keep logits finite
                    logits[[s, a, k]] = (counts[[s, a, k]] / row).max(1e-300).ln();
                }
                rewards[[s, a]] = r_sum[[s, a]] / row;
            }
        }
        let model = TabularDynamicsModel::new(logits, rewards).unwrap();
        let grad = model.nll_grad(batch_from(&ds)).unwrap();
        let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(max < 1e-8, "gradient at MLE has max coordinate {max}");
    }

    #[test]
    fn single_sample_gradient_is_softmax_identity() {
        let mut rng = StdRng::seed_from_u64(11);
        let model = TabularDynamicsModel::init_random(2, 1, &mut rng);
        let batch = vec![Transition::tabular(0, 0, 0.0, 1)];
        let grad = model.nll_grad(&batch).unwrap();
        let p = model.probs_row(0, 0);
        assert_abs_diff_eq!(grad[model.logit_coord(0, 0, 0)], p[0], epsilon = 1e-14);
        assert_abs_diff_eq!(grad[model.logit_coord(0, 0, 1)], p[1] - 1.0, epsilon = 1e-14);
    }

    fn fd_check<M: DynamicsHead + Clone>(model: &M, batch: &[Transition], tol: f64) {
        let grad = model.nll_grad(batch).unwrap();
        let mut work = model.clone();
        let mut theta = model.flat_params();
        let step = 1e-6;
        for i in 0..theta.len() {
            let orig = theta[i];
            theta[i] = orig + step;
            work.set_flat_params(&theta).unwrap();
            let hi = work.nll_loss(batch).unwrap();
            theta[i] = orig - step;
            work.set_flat_params(&theta).unwrap();
            let lo = work.nll_loss(batch).unwrap();
            theta[i] = orig;
            let fd = (hi - lo) / (2.0 * step);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (fd - grad[i]).abs() / denom < tol,
                "coord {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
        work.set_flat_params(&theta).unwrap();
    }

    #[test]
    fn tabular_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(12);
        let mut model = TabularDynamicsModel::init_random(3, 2, &mut rng);
        model.logits.mapv_inplace(|v| v * 10.0); // move away from uniform
        let mdp = random_mdp(3, 2, 0.9, 13);
        let ds = collect(&mdp, &TabularPolicy::uniform(3, 2), 4, 8, 14).unwrap();
        fd_check(&model, batch_from(&ds), 1e-5);
    }

    #[test]
    fn gaussian_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(15);
        let member = GaussianMember::new(2, 1, &[6, 6], LOG_VAR_BOUNDS, &mut rng);
        let batch: Vec<Transition> = (0..5)
            .map(|i| Transition {
                s: vec![0.1 * i as f64, -0.2],
                a: vec![0.3],
                r: 0.05 * i as f64,
                s_next: vec![0.2, 0.1 * i as f64],
                done: false,
            })
            .collect();
        fd_check(&member, &batch, 1e-5);
    }

    #[test]
    fn gaussian_score_matches_finite_differences_of_log_density() {
        let mut rng = StdRng::seed_from_u64(16);
        let member = GaussianMember::new(1, 1, &[5], LOG_VAR_BOUNDS, &mut rng);
        let (s, a, r, s_next) = ([0.4], [-0.7], 0.2, [0.9]);
        let mut score = vec![0.0; member.param_count()];
        member
            .accumulate_score(&s, &a, r, &s_next, 1.0, &mut score)
            .unwrap();
        let log_density = |m: &GaussianMember| -> f64 {
            let (mean, log_var, _) = m.head(&s, &a).unwrap();
            let x = [s_next[0], r];
            let mut ld = 0.0;
            for d in 0..2 {
                ld += -0.5 * (x[d] - mean[d]).powi(2) / log_var[d].exp() - 0.5 * log_var[d];
            }
            ld
        };
        let step = 1e-6;
        let mut work = member.clone();
        for i in 0..member.param_count() {
            let orig = work.params.values[i];
            work.params.values[i] = orig + step;
            let hi = log_density(&work);
            work.params.values[i] = orig - step;
            let lo = log_density(&work);
            work.params.values[i] = orig;
            let fd = (hi - lo) / (2.0 * step);
            let denom = fd.abs().max(score[i].abs()).max(1e-8);
            assert!((fd - score[i]).abs() / denom < 1e-5, "coord {i}");
        }
    }

    #[test]
    fn dominant_logit_always_sampled() {
        let mut logits = Array3::zeros((2, 1, 2));
        logits[[0, 0, 1]] = 1e6;
        let model =
            TabularDynamicsModel::new(logits, Array2::from_elem((2, 1), 0.25)).unwrap();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let (r, s2) = DynamicsHead::sample(&model, &[0.0], &[0.0], &mut rng);
            assert_eq!(s2, vec![1.0]);
            assert_eq!(r, 0.25);
        }
    }

    #[test]
    fn tight_gaussian_samples_stay_near_mean() {
        let mut rng = StdRng::seed_from_u64(18);
        let mut member = GaussianMember::new(1, 1, &[4], (-10.0, 0.5), &mut rng);
        // drive raw log-variance to the bottom of the clamp range
        let n_out = 4;
        let n_in_last = *member.params.layout.sizes.iter().rev().nth(1).unwrap();
        let off = member.params.len() - n_out * (n_in_last + 1);
        for v in member.params.values[off..].iter_mut() {
            *v = -60.0;
        }
        let (mean, log_var, _) = member.head(&[0.2], &[0.1]).unwrap();
        assert!(log_var.iter().all(|lv| (lv - -10.0).abs() < 1e-6));
        let sigma = (-5.0f64).exp();
        for _ in 0..1000 {
            let (r, s2) = member.sample(&[0.2], &[0.1], &mut rng);
            assert!((s2[0] - mean[0]).abs() < 6.0 * sigma);
            assert!((r - mean[1]).abs() < 6.0 * sigma);
        }
    }

    #[test]
    fn sampling_frequencies_match_softmax() {
        let mut rng = StdRng::seed_from_u64(19);
        let model = TabularDynamicsModel::init_random(4, 1, &mut rng);
        let probs = model.probs_row(2, 0);
        let n = 100_000usize;
        let mut counts = vec![0.0; 4];
        for _ in 0..n {
            let (_, s2) = DynamicsHead::sample(&model, &[2.0], &[0.0], &mut rng);
            counts[s2[0] as usize] += 1.0;
        }
        for k in 0..4 {
            let f = counts[k] / n as f64;
            let se = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
            assert!((f - probs[k]).abs() <= 3.0 * se, "state {k}: {f} vs {}", probs[k]);
        }
    }

    #[test]
    fn mle_concentrates_on_observed_next_state() {
        let transitions = vec![Transition::tabular(0, 0, 1.0, 1); 50];
        let ds = OfflineDataset::new(
            transitions,
            SpaceDescriptor::Tabular {
                n_states: 2,
                n_actions: 1,
            },
        )
        .unwrap();
        let model = fit_mle_tabular(&ds).unwrap();
        let p = model.probs_row(0, 0);
        assert!(p[1] > 0.9999);
        assert_abs_diff_eq!(model.reward_table[[0, 0]], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mle_backs_off_to_uniform_for_unseen_pairs() {
        let ds = OfflineDataset::new(
            vec![Transition::tabular(0, 0, 0.0, 1)],
            SpaceDescriptor::Tabular {
                n_states: 3,
                n_actions: 2,
            },
        )
        .unwrap();
        let model = fit_mle_tabular(&ds).unwrap();
        let p = model.probs_row(2, 1);
        for k in 0..3 {
            assert_abs_diff_eq!(p[k], 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_eq!(model.reward_table[[2, 1]], 0.0);
    }

    #[test]
    fn mle_recovers_true_kernel_within_tv_bound() {
        let mdp = random_mdp(3, 2, 0.9, 20);
        let ds = collect(&mdp, &TabularPolicy::uniform(3, 2), 1000, 10, 21).unwrap();
        let model = fit_mle_tabular(&ds).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                if !ds.transitions.iter().any(|t| t.s_index() == s && t.a_index() == a) {
                    continue;
                }
                let p = model.probs_row(s, a);
                let tv: f64 = (0..3)
                    .map(|k| (p[k] - mdp.transition[[s, a, k]]).abs())
                    .sum::<f64>()
                    / 2.0;
                assert!(tv < 0.05, "row ({s},{a}) tv={tv}");
            }
        }
    }

    #[test]
    fn mle_is_a_local_nll_minimum() {
        let mdp = random_mdp(3, 2, 0.9, 22);
        let ds = collect(&mdp, &TabularPolicy::uniform(3, 2), 500, 10, 23).unwrap();
        let model = fit_mle_tabular(&ds).unwrap();
        let base = model.nll_loss(batch_from(&ds)).unwrap();
        let mut rng = StdRng::seed_from_u64(24);
        let theta = model.flat_params();
        for _ in 0..20 {
            let mut dir: Vec<f64> = (0..theta.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm: f64 = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|d| *d *= 1e-5 / norm);
            let mut work = model.clone();
            let perturbed: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + d).collect();
            work.set_flat_params(&perturbed).unwrap();
            let nll = work.nll_loss(batch_from(&ds)).unwrap();
            assert!(nll >= base - 1e-8, "perturbation reduced NLL by {}", base - nll);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_for_any_logits() {
        let mut rng = StdRng::seed_from_u64(25);
        for _ in 0..20 {
            let logits = Array3::from_shape_fn((3, 2, 3), |_| rng.gen_range(-500.0..500.0));
            let model = TabularDynamicsModel::new(logits, Array2::zeros((3, 2))).unwrap();
            for s in 0..3 {
                for a in 0..2 {
                    let sum: f64 = model.probs_row(s, a).iter().sum();
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn frobenius_uncertainty_of_identity_covariance() {
        let mut rng = StdRng::seed_from_u64(26);
        let mut ens = GaussianEnsemble::new(3, 1, 1, &[4], (-10.0, 0.5), &mut rng).unwrap();
        // force log_var = 0 on every member (sigmoid(raw) = 10/10.5)
        let p: f64 = (0.0 + 10.0) / 10.5;
        let raw = (p / (1.0 - p)).ln();
        for m in ens.members.iter_mut() {
            let n_out = 4;
            let n_in_last = *m.params.layout.sizes.iter().rev().nth(1).unwrap();
            let off = m.params.len() - n_out * (n_in_last + 1);
            // zero the last layer weights, set raw log-var biases
            for v in m.params.values[off..].iter_mut() {
                *v = 0.0;
            }
            let bias_off = m.params.len() - n_out;
            m.params.values[bias_off + 2] = raw;
            m.params.values[bias_off + 3] = raw;
        }
        let u = max_aleatoric_uncertainty(&ens, &[0.3], &[0.4]).unwrap();
        assert_abs_diff_eq!(u, 2.0f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn uncertainty_takes_the_max_and_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(27);
        let ens = GaussianEnsemble::new(5, 2, 1, &[6], LOG_VAR_BOUNDS, &mut rng).unwrap();
        let (s, a) = ([0.5, -0.3], [0.8]);
        let got = max_aleatoric_uncertainty(&ens, &s, &a).unwrap();
        let mut brute = f64::NEG_INFINITY;
        for m in &ens.members {
            let (_, log_var, _) = m.head(&s, &a).unwrap();
            let f = log_var.iter().map(|lv| lv.exp().powi(2)).sum::<f64>().sqrt();
            brute = brute.max(f);
        }
        assert_abs_diff_eq!(got, brute, epsilon = 1e-12);
        // member order must not matter
        let mut reversed = ens.clone();
        reversed.members.reverse();
        let got_rev = max_aleatoric_uncertainty(&reversed, &s, &a).unwrap();
        assert_abs_diff_eq!(got, got_rev, epsilon = 1e-15);
        // inflating any one member's variances can only raise the report
        for k in 0..ens.n_members() {
            let mut wider = ens.clone();
            let biases = wider.members[k].params.layout.param_count()
                - wider.members[k].out_dim();
            for v in wider.members[k].params.values[biases..].iter_mut() {
                *v += 0.3;
            }
            let u = max_aleatoric_uncertainty(&wider, &s, &a).unwrap();
            assert!(u >= got - 1e-12, "member {k}: {u} < {got}");
        }
    }

    #[test]
    fn ensemble_serializes_round_trip() {
        let mut rng = StdRng::seed_from_u64(28);
        let ens = GaussianEnsemble::new(2, 2, 1, &[4], LOG_VAR_BOUNDS, &mut rng).unwrap();
        let back = GaussianEnsemble::from_json(&ens.to_json()).unwrap();
        assert_eq!(ens, back);
    }
}
