//! The two value functions the penalty compares: V_d, the fixed point of the
//! empirical backup built from the dataset alone, and V_m, the fixed point of
//! the backup induced by a learned dynamics model.
//!
//! Tabular mode solves both exactly; continuous mode fits small networks by
//! stochastic Bellman regression with soft target tracking.

use ndarray::prelude::*;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::dynamics::{SampleDynamics, TabularDynamicsModel};
use crate::error::{Error, Result};
use crate::mdp::{solve_discounted_system, TabularPolicy};
use crate::net::{Adam, ValuePair};
use crate::rng::{stream_rng, STREAM_VALUE};
use crate::training::TrainConfig;

/// A value vector over tabular states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularValue {
    pub v: Array1<f64>,
}

impl TabularValue {
    pub fn new(v: Array1<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("value vector has non-finite entries"));
        }
        Ok(Self { v })
    }

    pub fn zeros(n: usize) -> Self {
        Self { v: Array1::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn sup_distance(&self, other: &TabularValue) -> f64 {
        crate::mdp::sup_distance(&self.v, &other.v)
    }
}

/// Evaluate a state value on arbitrary (tabular-embedded or continuous) states.
pub trait StateValue {
    fn value(&self, s: &[f64]) -> f64;
}

impl StateValue for TabularValue {
    fn value(&self, s: &[f64]) -> f64 {
        self.v[s[0] as usize]
    }
}

impl StateValue for ValuePair {
    fn value(&self, s: &[f64]) -> f64 {
        self.primary.forward(s).expect("value net forward")[0]
    }
}

impl StateValue for crate::net::ParamVector {
    fn value(&self, s: &[f64]) -> f64 {
        self.forward(s).expect("value net forward")[0]
    }
}

/// Fixed-point solve outcome: the values, the final sup-norm Bellman residual,
/// and how many backups were applied.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: TabularValue,
    pub residual: f64,
    pub iters: usize,
}

/// One application of the data backup: states with transitions get the mean of
/// r + γ·v(s') over their outgoing samples, uncovered states get 0.
pub fn empirical_bellman(
    dataset: &OfflineDataset,
    v: &TabularValue,
    gamma: f64,
) -> Result<TabularValue> {
    let (n_states, _) = dataset.tabular_sizes()?;
    if v.len() != n_states {
        return Err(Error::invalid(format!(
            "value vector has {} entries for {} states",
            v.len(),
            n_states
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let mut sums = vec![0.0; n_states];
    let mut counts = vec![0.0; n_states];
    for t in &dataset.transitions {
        let s = t.s_index();
        sums[s] += t.r + gamma * v.v[t.s_next_index()];
        counts[s] += 1.0;
    }
    let out = Array1::from_iter(
        sums.iter()
            .zip(&counts)
            .map(|(sum, c)| if *c > 0.0 { sum / c } else { 0.0 }),
    );
    TabularValue::new(out)
}

/// Fixed point of the data backup, iterated from `init`.
pub fn solve_vd_from(
    dataset: &OfflineDataset,
    init: TabularValue,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveResult> {
    if tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut v = init;
    let mut residual = f64::INFINITY;
    for iters in 1..=max_iter {
        let next = empirical_bellman(dataset, &v, gamma)?;
        residual = v.sup_distance(&next);
        v = next;
        if residual <= tol {
            return Ok(SolveResult { value: v, residual, iters });
        }
    }
    Err(Error::Convergence {
        iters: max_iter,
        residual,
        tol,
    })
}

/// Fixed point of the data backup from the zero vector.
pub fn solve_vd(
    dataset: &OfflineDataset,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveResult> {
    let (n_states, _) = dataset.tabular_sizes()?;
    solve_vd_from(dataset, TabularValue::zeros(n_states), gamma, tol, max_iter)
}

/// Exact fixed point of the model backup under `policy` via the linear system
/// (I − γ P_θ^μ) V = r_θ^μ.
pub fn solve_vm_tabular(
    model: &TabularDynamicsModel,
    policy: &TabularPolicy,
    gamma: f64,
    tol: f64,
) -> Result<SolveResult> {
    let n_states = model.n_states();
    let n_actions = model.n_actions();
    if policy.n_states() != n_states || policy.n_actions() != n_actions {
        return Err(Error::invalid("policy shape does not match model"));
    }
    let kernel = model.policy_kernel(policy);
    let mut reward = Array1::zeros(n_states);
    for s in 0..n_states {
        for a in 0..n_actions {
            reward[s] += policy.probs[[s, a]] * model.reward_table[[s, a]];
        }
    }
    let v = solve_discounted_system(&kernel, &reward, gamma)?;
    // one backup to certify the fixed point
    let backup = &reward + &(gamma * kernel.dot(&v));
    let residual = crate::mdp::sup_distance(&v, &backup);
    if residual > tol.max(1e-10) {
        return Err(Error::Convergence {
            iters: 1,
            residual,
            tol,
        });
    }
    Ok(SolveResult {
        value: TabularValue::new(v)?,
        residual,
        iters: 1,
    })
}

/// One row of a fitting curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub residual: f64,
}

/// CSV rendering of a fitting curve (header + one row per step).
pub fn curves_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss,residual\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.step, p.loss, p.residual));
    }
    out
}

enum TargetSource<'a, M: SampleDynamics> {
    Data,
    Model(&'a M, &'a mut StdRng),
}

/// Shared regression loop for both value-fitting modes: each step draws a
/// mini-batch of dataset rows, builds targets y = r + γ·V̄(s') (from the data
/// row or from a fresh model draw at the row's (s, a)), and takes one Adam
/// step on the squared error, followed by a soft target update.
fn fit_value_loop<M: SampleDynamics>(
    dataset: &OfflineDataset,
    pair: &mut ValuePair,
    gamma: f64,
    lr: f64,
    batch_size: usize,
    n_steps: usize,
    mut source: TargetSource<M>,
    mut batch_rng: StdRng,
) -> Result<Vec<CurvePoint>> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot fit values on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let n = dataset.len();
    let mut adam = Adam::new(pair.primary.len(), lr);
    let mut grad = vec![0.0; pair.primary.len()];
    let mut curves = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut residual = 0.0f64;
        for _ in 0..batch_size {
            let t = &dataset.transitions[batch_rng.gen_range(0..n)];
            let y = match &mut source {
                TargetSource::Data => {
                    let bootstrap = if t.done {
                        0.0
                    } else {
                        pair.target.forward(&t.s_next)?[0]
                    };
                    t.r + gamma * bootstrap
                }
                TargetSource::Model(model, rng) => {
                    let (r_hat, s_hat) = model.sample_next(&t.s, &t.a, &mut **rng);
                    r_hat + gamma * pair.target.forward(&s_hat)?[0]
                }
            };
            let v_s = pair.primary.forward(&t.s)?[0];
            let resid = v_s - y;
            loss += resid * resid / batch_size as f64;
            residual = residual.max(resid.abs());
            pair.primary
                .accumulate_grad(&t.s, &[2.0 * resid], 1.0 / batch_size as f64, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                context: "value regression loss".into(),
                value: loss,
            });
        }
        adam.step(&mut pair.primary.values, &grad);
        pair.soft_update();
        curves.push(CurvePoint { step, loss, residual });
    }
    Ok(curves)
}

/// Fits V_d by stochastic Bellman regression on the dataset's own rows.
/// Runs `config.max_outer_iters` steps at `config.value_lr`.
pub fn fit_vd_msbe(
    dataset: &OfflineDataset,
    pair: &mut ValuePair,
    config: &TrainConfig,
) -> Result<Vec<CurvePoint>> {
    let batch_rng = stream_rng(config.seed, STREAM_VALUE);
    fit_value_loop::<TabularDynamicsModel>(
        dataset,
        pair,
        config.gamma,
        config.value_lr,
        config.batch_size,
        config.max_outer_iters,
        TargetSource::Data,
        batch_rng,
    )
}

/// Fits V_m: states and actions come from dataset rows, rewards and next
/// states from one fresh model draw per row per step. Runs
/// `config.vm_inner_steps` steps, so repeated calls warm-start the fit.
pub fn fit_vm<M: SampleDynamics>(
    dataset: &OfflineDataset,
    model: &M,
    pair: &mut ValuePair,
    config: &TrainConfig,
    rng: &mut StdRng,
) -> Result<Vec<CurvePoint>> {
    // fresh batch stream per call so warm-start refreshes see new batches
    let batch_rng = StdRng::seed_from_u64(rng.gen());
    fit_value_loop(
        dataset,
        pair,
        config.gamma,
        config.value_lr,
        config.batch_size,
        config.vm_inner_steps,
        TargetSource::Model(model, rng),
        batch_rng,
    )
}
