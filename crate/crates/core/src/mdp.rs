//! Ground-truth tabular MDPs, policies, and exact evaluation oracles.
//!
//! Everything learned elsewhere in the workspace is judged against the exact
//! quantities computed here: Bellman backups, fixed-point values, and returns.

use ndarray::prelude::*;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_categorical;

/// Tolerance used when validating that probability rows sum to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP (S, A, P, r, rho0, gamma) with dense tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// transition[[s, a, s']] = P(s' | s, a)
    pub transition: Array3<f64>,
    /// reward[[s, a]] = r(s, a), bounded by `r_max` in absolute value
    pub reward: Array2<f64>,
    /// Initial state distribution.
    pub rho0: Array1<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

/// A stochastic policy over a finite MDP; `probs[[s, a]] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub probs: Array2<f64>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, expected 1")));
    }
    if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    Ok(())
}

impl TabularMdp {
    /// Validates and builds an MDP; `r_max` is taken as max |reward| (or 1 if all zero).
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        rho0: Array1<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_next != n_states {
            return Err(Error::invalid(format!(
                "transition tensor is {n_states}x{n_actions}x{n_next}, last axis must be {n_states}"
            )));
        }
        if reward.dim() != (n_states, n_actions) {
            return Err(Error::invalid("reward table shape mismatch"));
        }
        if rho0.len() != n_states {
            return Err(Error::invalid("rho0 length mismatch"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = transition.slice(s![s, a, ..]);
                check_distribution(row.as_slice().unwrap(), &format!("transition[{s}][{a}]"))?;
            }
        }
        check_distribution(rho0.as_slice().unwrap(), "rho0")?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("reward table has non-finite entries"));
        }
        let r_max = reward.iter().fold(0.0f64, |m, r| m.max(r.abs())).max(1.0);
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            rho0,
            gamma,
            r_max,
        })
    }

    /// State-to-state kernel under `policy`: P^mu(s, s') = sum_a mu(a|s) P(s'|s,a).
    pub fn policy_kernel(&self, policy: &TabularPolicy) -> Array2<f64> {
        let mut p = Array2::zeros((self.n_states, self.n_states));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = policy.probs[[s, a]];
                if w == 0.0 {
                    continue;
                }
                for s2 in 0..self.n_states {
                    p[[s, s2]] += w * self.transition[[s, a, s2]];
                }
            }
        }
        p
    }

    /// Expected immediate reward under `policy`: r^mu(s) = sum_a mu(a|s) r(s,a).
    pub fn policy_reward(&self, policy: &TabularPolicy) -> Array1<f64> {
        let mut r = Array1::zeros(self.n_states);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                r[s] += policy.probs[[s, a]] * self.reward[[s, a]];
            }
        }
        r
    }

    /// Samples an initial state from rho0.
    pub fn sample_initial(&self, rng: &mut StdRng) -> usize {
        sample_categorical(self.rho0.as_slice().unwrap(), rng)
    }

    /// Samples s' ~ P(·|s, a).
    pub fn sample_next(&self, s: usize, a: usize, rng: &mut StdRng) -> usize {
        let row = self.transition.slice(s![s, a, ..]);
        sample_categorical(row.as_slice().unwrap(), rng)
    }

    /// Serializes to the canonical JSON document.
    pub fn to_json(&self) -> String {
        let doc = MdpDoc {
            n_states: self.n_states,
            n_actions: self.n_actions,
            transition: self
                .transition
                .outer_iter()
                .map(|per_s| per_s.outer_iter().map(|row| row.to_vec()).collect())
                .collect(),
            reward: self.reward.outer_iter().map(|row| row.to_vec()).collect(),
            rho0: self.rho0.to_vec(),
            gamma: self.gamma,
        };
        serde_json::to_string_pretty(&doc).expect("mdp document serializes")
    }

    /// Parses and validates the canonical JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDoc = serde_json::from_str(text)?;
        let (s, a) = (doc.n_states, doc.n_actions);
        if doc.transition.len() != s || doc.transition.iter().any(|t| t.len() != a) {
            return Err(Error::invalid("transition shape does not match n_states/n_actions"));
        }
        let mut transition = Array3::zeros((s, a, s));
        for (i, per_s) in doc.transition.iter().enumerate() {
            for (j, row) in per_s.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::invalid("transition row length mismatch"));
                }
                for (k, p) in row.iter().enumerate() {
                    transition[[i, j, k]] = *p;
                }
            }
        }
        if doc.reward.len() != s || doc.reward.iter().any(|r| r.len() != a) {
            return Err(Error::invalid("reward shape mismatch"));
        }
        let mut reward = Array2::zeros((s, a));
        for (i, row) in doc.reward.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                reward[[i, j]] = *r;
            }
        }
        TabularMdp::new(transition, reward, Array1::from(doc.rho0), doc.gamma)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDoc {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    rho0: Vec<f64>,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.outer_iter().enumerate() {
            check_distribution(row.as_slice().unwrap(), &format!("policy row {s}"))?;
        }
        Ok(Self { probs })
    }

    pub fn to_json(&self) -> String {
        let doc = PolicyDoc {
            probs: self.probs.outer_iter().map(|row| row.to_vec()).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("policy document serializes")
    }

    /// Parses and validates (rows must be distributions) the JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDoc = serde_json::from_str(text)?;
        let n_states = doc.probs.len();
        let n_actions = doc.probs.first().map_or(0, |r| r.len());
        if n_states == 0 || n_actions == 0 || doc.probs.iter().any(|r| r.len() != n_actions) {
            return Err(Error::invalid("policy rows must be nonempty and rectangular"));
        }
        let mut probs = Array2::zeros((n_states, n_actions));
        for (s, row) in doc.probs.iter().enumerate() {
            for (a, p) in row.iter().enumerate() {
                probs[[s, a]] = *p;
            }
        }
        TabularPolicy::new(probs)
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy taking `actions[s]` at state s.
    pub fn greedy(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, a) in actions.iter().enumerate() {
            probs[[s, *a]] = 1.0;
        }
        Self { probs }
    }

    /// Row-wise Dirichlet(1) random policy.
    pub fn random(n_states: usize, n_actions: usize, rng: &mut StdRng) -> Self {
        let mut probs = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            let mut row: Vec<f64> = (0..n_actions).map(|_| -rng.gen::<f64>().ln()).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            for (a, p) in row.iter().enumerate() {
                probs[[s, a]] = *p;
            }
        }
        Self { probs }
    }

    /// Per-state mixture w·self + (1−w)·other.
    pub fn mix(&self, other: &TabularPolicy, w: f64) -> Self {
        Self {
            probs: w * &self.probs + (1.0 - w) * &other.probs,
        }
    }

    pub fn sample_action(&self, s: usize, rng: &mut StdRng) -> usize {
        let row = self.probs.row(s);
        sample_categorical(row.as_slice().unwrap(), rng)
    }
}

/// One application of the policy Bellman operator: (T^mu v)(s) = E[r + gamma v(s')].
pub fn apply_bellman(mdp: &TabularMdp, policy: &TabularPolicy, v: &Array1<f64>) -> Result<Array1<f64>> {
    if v.len() != mdp.n_states {
        return Err(Error::invalid(format!(
            "value vector has length {}, expected {}",
            v.len(),
            mdp.n_states
        )));
    }
    if policy.probs.dim() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::invalid("policy shape does not match mdp"));
    }
    let mut out = Array1::zeros(mdp.n_states);
    for s in 0..mdp.n_states {
        let mut acc = 0.0;
        for a in 0..mdp.n_actions {
            let w = policy.probs[[s, a]];
            if w == 0.0 {
                continue;
            }
            let mut cont = 0.0;
            for s2 in 0..mdp.n_states {
                cont += mdp.transition[[s, a, s2]] * v[s2];
            }
            acc += w * (mdp.reward[[s, a]] + mdp.gamma * cont);
        }
        out[s] = acc;
    }
    Ok(out)
}

/// Iterates the Bellman operator from `init` until the sup-norm step is ≤ tol.
pub fn exact_value_from(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    init: Array1<f64>,
    tol: f64,
) -> Result<Array1<f64>> {
    if tol <= 0.0 {
        return Err(Error::invalid("tol must be positive"));
    }
    let mut v = init;
    let max_iter = 4_000_000usize;
    for i in 0..max_iter {
        let next = apply_bellman(mdp, policy, &v)?;
        let step = sup_distance(&next, &v);
        v = next;
        if step <= tol {
            return Ok(v);
        }
        if i == max_iter - 1 {
            return Err(Error::Convergence {
                iters: max_iter,
                residual: step,
                tol,
            });
        }
    }
    unreachable!()
}

/// V^mu by fixed-point iteration from zero (the tested path; see `exact_value_direct`).
pub fn exact_value(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<Array1<f64>> {
    exact_value_from(mdp, policy, Array1::zeros(mdp.n_states), tol)
}

/// V^mu by direct linear solve of (I − gamma P^mu) V = r^mu (the oracle path).
pub fn exact_value_direct(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Array1<f64>> {
    if policy.probs.dim() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::invalid("policy shape does not match mdp"));
    }
    let p = mdp.policy_kernel(policy);
    let r = mdp.policy_reward(policy);
    solve_discounted_system(&p, &r, mdp.gamma)
}

/// Solves (I − gamma P) x = b for a row-stochastic P.
pub fn solve_discounted_system(p: &Array2<f64>, b: &Array1<f64>, gamma: f64) -> Result<Array1<f64>> {
    let n = b.len();
    let mut m = nalgebra::DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] -= gamma * p[[i, j]];
        }
    }
    let rhs = nalgebra::DVector::from_iterator(n, b.iter().copied());
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("discounted system is singular"))?;
    Ok(Array1::from_iter(sol.iter().copied()))
}

/// J(pi) = <rho0, V^pi>, computed from the direct linear solve.
pub fn policy_return(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let v = exact_value_direct(mdp, policy)?;
    Ok(mdp.rho0.dot(&v))
}

/// Optimal values and a greedy optimal policy for arbitrary dense (P, r, gamma).
///
/// Shared by the truth oracle below and by planning on learned models.
pub fn value_iteration_dense(
    transition: &Array3<f64>,
    reward: &Array2<f64>,
    gamma: f64,
    tol: f64,
) -> (Array1<f64>, Vec<usize>) {
    let (n_states, n_actions, _) = transition.dim();
    let mut v = Array1::zeros(n_states);
    loop {
        let mut next = Array1::zeros(n_states);
        for s in 0..n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                let mut q = reward[[s, a]];
                for s2 in 0..n_states {
                    q += gamma * transition[[s, a, s2]] * v[s2];
                }
                best = best.max(q);
            }
            next[s] = best;
        }
        let step = sup_distance(&next, &v);
        v = next;
        if step <= tol {
            break;
        }
    }
    let mut actions = vec![0usize; n_states];
    for s in 0..n_states {
        let mut best = f64::NEG_INFINITY;
        for a in 0..n_actions {
            let mut q = reward[[s, a]];
            for s2 in 0..n_states {
                q += gamma * transition[[s, a, s2]] * v[s2];
            }
            if q > best {
                best = q;
                actions[s] = a;
            }
        }
    }
    (v, actions)
}

/// Optimal values and greedy policy on the true MDP.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> (Array1<f64>, TabularPolicy) {
    let (v, actions) = value_iteration_dense(&mdp.transition, &mdp.reward, mdp.gamma, tol);
    (v, TabularPolicy::greedy(&actions, mdp.n_actions))
}

pub fn sup_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

// ---------------------------------------------------------------------------
// Built-in environments
// ---------------------------------------------------------------------------

/// Linear chain of `n` states: action 1 steps right, action 0 steps left,
/// each succeeding with prob 1−slip (otherwise staying). The rightmost state
/// is absorbing and pays reward 1 on every action.
pub fn chain_mdp(n: usize, slip: f64, gamma: f64) -> TabularMdp {
    assert!(n >= 2, "chain needs at least 2 states");
    let mut transition = Array3::zeros((n, 2, n));
    let mut reward = Array2::zeros((n, 2));
    for s in 0..n - 1 {
        let left = s.saturating_sub(1);
        let right = s + 1;
        transition[[s, 0, left]] += 1.0 - slip;
        transition[[s, 0, s]] += slip;
        transition[[s, 1, right]] += 1.0 - slip;
        transition[[s, 1, s]] += slip;
    }
    for a in 0..2 {
        transition[[n - 1, a, n - 1]] = 1.0;
        reward[[n - 1, a]] = 1.0;
    }
    let mut rho0 = Array1::zeros(n);
    rho0[0] = 1.0;
    TabularMdp::new(transition, reward, rho0, gamma).expect("chain construction is valid")
}

/// 5×5 gridworld: start top-left, absorbing goal bottom-right paying +1,
/// three cliff cells on the bottom row paying −1 and teleporting to start.
/// Moves succeed with prob 0.85 and slip sideways with prob 0.075 each.
pub fn gridworld_mdp(gamma: f64) -> TabularMdp {
    const W: usize = 5;
    let n = W * W;
    let idx = |row: usize, col: usize| row * W + col;
    let start = idx(0, 0);
    let goal = idx(4, 4);
    let cliffs = [idx(4, 1), idx(4, 2), idx(4, 3)];
    // action -> (drow, dcol): up, down, left, right
    let deltas: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    let perp = |a: usize| -> [usize; 2] {
        if a < 2 {
            [2, 3]
        } else {
            [0, 1]
        }
    };
    let step = |s: usize, a: usize| -> usize {
        let (row, col) = (s / W, s % W);
        let (dr, dc) = deltas[a];
        let nr = row as isize + dr;
        let nc = col as isize + dc;
        if nr < 0 || nr >= W as isize || nc < 0 || nc >= W as isize {
            s
        } else {
            idx(nr as usize, nc as usize)
        }
    };
    let mut transition = Array3::zeros((n, 4, n));
    let mut reward = Array2::zeros((n, 4));
    for s in 0..n {
        for a in 0..4 {
            if s == goal {
                transition[[s, a, goal]] = 1.0;
                reward[[s, a]] = 1.0;
            } else if cliffs.contains(&s) {
                transition[[s, a, start]] = 1.0;
                reward[[s, a]] = -1.0;
            } else {
                transition[[s, a, step(s, a)]] += 0.85;
                let [p1, p2] = perp(a);
                transition[[s, a, step(s, p1)]] += 0.075;
                transition[[s, a, step(s, p2)]] += 0.075;
            }
        }
    }
    let mut rho0 = Array1::zeros(n);
    rho0[start] = 1.0;
    TabularMdp::new(transition, reward, rho0, gamma).expect("gridworld construction is valid")
}

/// Dense random MDP: Dirichlet(1) transition rows and rho0, rewards U(−1, 1).
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> TabularMdp {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let row: Vec<f64> = (0..n_states).map(|_| -rng.gen::<f64>().ln()).collect();
            let total: f64 = row.iter().sum();
            for (s2, w) in row.iter().enumerate() {
                transition[[s, a, s2]] = w / total;
            }
        }
    }
    let reward = Array2::from_shape_fn((n_states, n_actions), |_| rng.gen_range(-1.0..1.0));
    let rho: Vec<f64> = (0..n_states).map(|_| -rng.gen::<f64>().ln()).collect();
    let total: f64 = rho.iter().sum();
    let rho0 = Array1::from_iter(rho.into_iter().map(|w| w / total));
    TabularMdp::new(transition, reward, rho0, gamma).expect("random mdp construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_self_loop(gamma: f64) -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 1, 1), 1.0),
            Array2::from_elem((1, 1), 1.0),
            Array1::from(vec![1.0]),
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn bellman_on_self_loop_returns_reward() {
        let mdp = single_self_loop(0.9);
        let pol = TabularPolicy::uniform(1, 1);
        let out = apply_bellman(&mdp, &pol, &Array1::zeros(1)).unwrap();
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bellman_with_gamma_zero_is_expected_reward() {
        let mdp = random_mdp(4, 3, 0.0, 11);
        let pol = TabularPolicy::random(4, 3, &mut StdRng::seed_from_u64(5));
        let v = Array1::from(vec![5.0, -2.0, 0.3, 9.0]);
        let out = apply_bellman(&mdp, &pol, &v).unwrap();
        let expected = mdp.policy_reward(&pol);
        for s in 0..4 {
            assert_abs_diff_eq!(out[s], expected[s], epsilon = 1e-14);
        }
    }

    #[test]
    fn bellman_matches_exhaustive_enumeration() {
        let mdp = random_mdp(3, 2, 0.9, 42);
        let pol = TabularPolicy::random(3, 2, &mut StdRng::seed_from_u64(7));
        let v = Array1::from(vec![1.0, 2.0, 3.0]);
        let out = apply_bellman(&mdp, &pol, &v).unwrap();
        for s in 0..3 {
            let mut acc = 0.0;
            for a in 0..2 {
                for s2 in 0..3 {
                    acc += pol.probs[[s, a]]
                        * mdp.transition[[s, a, s2]]
                        * (mdp.reward[[s, a]] + 0.9 * v[s2]);
                }
            }
            assert_abs_diff_eq!(out[s], acc, epsilon = 1e-13);
        }
    }

    #[test]
    fn bellman_rejects_wrong_length() {
        let mdp = single_self_loop(0.9);
        let pol = TabularPolicy::uniform(1, 1);
        assert!(apply_bellman(&mdp, &pol, &Array1::zeros(3)).is_err());
    }

    #[test]
    fn value_of_self_loop_is_geometric_series() {
        let mdp = single_self_loop(0.9);
        let pol = TabularPolicy::uniform(1, 1);
        let v = exact_value(&mdp, &pol, 1e-12).unwrap();
        assert_abs_diff_eq!(v[0], 10.0, epsilon = 1e-9);
        let direct = exact_value_direct(&mdp, &pol).unwrap();
        assert_abs_diff_eq!(direct[0], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn value_of_zero_rewards_is_zero() {
        let mut mdp = random_mdp(5, 2, 0.95, 3);
        mdp.reward.fill(0.0);
        let pol = TabularPolicy::uniform(5, 2);
        let v = exact_value(&mdp, &pol, 1e-12).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn value_of_two_state_chain_matches_linear_solve() {
        // s0 -> s1 deterministic, s1 absorbing; r = [1, 0]; gamma = 0.5.
        let mut transition = Array3::zeros((2, 1, 2));
        transition[[0, 0, 1]] = 1.0;
        transition[[1, 0, 1]] = 1.0;
        let mut reward = Array2::zeros((2, 1));
        reward[[0, 0]] = 1.0;
        let mdp = TabularMdp::new(transition, reward, Array1::from(vec![1.0, 0.0]), 0.5).unwrap();
        let pol = TabularPolicy::uniform(2, 1);
        let iter = exact_value(&mdp, &pol, 1e-12).unwrap();
        let direct = exact_value_direct(&mdp, &pol).unwrap();
        assert_abs_diff_eq!(iter[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(iter[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(direct[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(direct[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn iterative_and_direct_values_agree_on_random_mdps() {
        for seed in 0..10 {
            let mdp = random_mdp(6, 3, 0.9, seed);
            let pol = TabularPolicy::random(6, 3, &mut StdRng::seed_from_u64(seed + 100));
            let a = exact_value(&mdp, &pol, 1e-11).unwrap();
            let b = exact_value_direct(&mdp, &pol).unwrap();
            assert!(sup_distance(&a, &b) < 1e-9);
        }
    }

    #[test]
    fn value_is_bounded_by_rmax_over_one_minus_gamma() {
        for seed in 0..10 {
            let mdp = random_mdp(5, 2, 0.95, seed);
            let pol = TabularPolicy::random(5, 2, &mut StdRng::seed_from_u64(seed));
            let v = exact_value_direct(&mdp, &pol).unwrap();
            let bound = mdp.r_max / (1.0 - mdp.gamma) + 1e-9;
            assert!(v.iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn fixed_point_residual_is_within_tol() {
        let mdp = random_mdp(5, 3, 0.9, 21);
        let pol = TabularPolicy::random(5, 3, &mut StdRng::seed_from_u64(2));
        let tol = 1e-10;
        let v = exact_value(&mdp, &pol, tol).unwrap();
        let tv = apply_bellman(&mdp, &pol, &v).unwrap();
        assert!(sup_distance(&tv, &v) <= tol);
    }

    #[test]
    fn two_initializations_agree() {
        let mdp = random_mdp(5, 3, 0.9, 77);
        let pol = TabularPolicy::random(5, 3, &mut StdRng::seed_from_u64(8));
        let tol = 1e-9;
        let from_zero = exact_value(&mdp, &pol, tol).unwrap();
        let init = Array1::from(vec![3.0, -7.0, 0.0, 11.0, 2.5]);
        let from_rand = exact_value_from(&mdp, &pol, init, tol).unwrap();
        let bound = 2.0 * tol / (1.0 - mdp.gamma);
        assert!(sup_distance(&from_zero, &from_rand) <= bound);
    }

    #[test]
    fn return_with_point_mass_rho0_is_initial_state_value() {
        let mdp = chain_mdp(4, 0.1, 0.9);
        let pol = TabularPolicy::uniform(4, 2);
        let v = exact_value_direct(&mdp, &pol).unwrap();
        let j = policy_return(&mdp, &pol).unwrap();
        assert_abs_diff_eq!(j, v[0], epsilon = 1e-12);
    }

    #[test]
    fn return_of_zero_rewards_is_zero() {
        let mut mdp = random_mdp(4, 2, 0.9, 9);
        mdp.reward.fill(0.0);
        let pol = TabularPolicy::uniform(4, 2);
        assert!(policy_return(&mdp, &pol).unwrap().abs() < 1e-12);
    }

    #[test]
    fn return_with_uniform_rho0_is_mean_value() {
        let mut mdp = random_mdp(3, 2, 0.8, 31);
        mdp.rho0 = Array1::from_elem(3, 1.0 / 3.0);
        let pol = TabularPolicy::random(3, 2, &mut StdRng::seed_from_u64(4));
        let j = policy_return(&mdp, &pol).unwrap();
        let v = exact_value_direct(&mdp, &pol).unwrap();
        assert_abs_diff_eq!(j, v.mean().unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn contraction_holds_on_random_mdps() {
        let mut rng = StdRng::seed_from_u64(55);
        for seed in 0..20 {
            let mdp = random_mdp(5, 2, 0.7 + 0.02 * seed as f64 % 0.3, seed);
            let pol = TabularPolicy::random(5, 2, &mut rng);
            let v = Array1::from_shape_fn(5, |_| rng.gen_range(-5.0..5.0));
            let w = Array1::from_shape_fn(5, |_| rng.gen_range(-5.0..5.0));
            let tv = apply_bellman(&mdp, &pol, &v).unwrap();
            let tw = apply_bellman(&mdp, &pol, &w).unwrap();
            assert!(sup_distance(&tv, &tw) <= mdp.gamma * sup_distance(&v, &w) + 1e-12);
        }
    }

    #[test]
    fn return_is_invariant_under_state_relabeling() {
        let mdp = random_mdp(4, 2, 0.9, 13);
        let pol = TabularPolicy::random(4, 2, &mut StdRng::seed_from_u64(14));
        let perm = [2usize, 0, 3, 1];
        let mut t = Array3::zeros((4, 2, 4));
        let mut r = Array2::zeros((4, 2));
        let mut rho = Array1::zeros(4);
        let mut p = Array2::zeros((4, 2));
        for s in 0..4 {
            rho[perm[s]] = mdp.rho0[s];
            for a in 0..2 {
                r[[perm[s], a]] = mdp.reward[[s, a]];
                p[[perm[s], a]] = pol.probs[[s, a]];
                for s2 in 0..4 {
                    t[[perm[s], a, perm[s2]]] = mdp.transition[[s, a, s2]];
                }
            }
        }
        let permuted = TabularMdp::new(t, r, rho, mdp.gamma).unwrap();
        let permuted_pol = TabularPolicy::new(p).unwrap();
        let j1 = policy_return(&mdp, &pol).unwrap();
        let j2 = policy_return(&permuted, &permuted_pol).unwrap();
        assert_abs_diff_eq!(j1, j2, epsilon = 1e-11);
    }

    #[test]
    fn constructors_produce_valid_mdps() {
        let c = chain_mdp(6, 0.15, 0.95);
        assert_eq!(c.n_states, 6);
        assert_eq!(c.reward[[5, 0]], 1.0);
        let g = gridworld_mdp(0.95);
        assert_eq!(g.n_states, 25);
        assert_eq!(g.n_actions, 4);
        // cliff cells teleport to start
        assert_eq!(g.transition[[21, 2, 0]], 1.0);
        let r = random_mdp(7, 3, 0.9, 1);
        assert_eq!(r.transition.dim(), (7, 3, 7));
    }

    #[test]
    fn json_round_trip_preserves_mdp() {
        let mdp = random_mdp(3, 2, 0.85, 17);
        let text = mdp.to_json();
        let back = TabularMdp::from_json(&text).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn json_rejects_bad_rows_and_unknown_fields() {
        let mdp = random_mdp(2, 2, 0.85, 17);
        let mut doc: serde_json::Value = serde_json::from_str(&mdp.to_json()).unwrap();
        doc["transition"][0][0][0] = 0.75.into();
        assert!(TabularMdp::from_json(&doc.to_string()).is_err());
        let mut doc2: serde_json::Value = serde_json::from_str(&mdp.to_json()).unwrap();
        doc2["extra"] = 1.into();
        assert!(TabularMdp::from_json(&doc2.to_string()).is_err());
    }

    #[test]
    fn value_iteration_finds_chain_optimum() {
        let mdp = chain_mdp(5, 0.1, 0.9);
        let (v, pol) = value_iteration(&mdp, 1e-10);
        // optimal policy walks right everywhere it matters
        for s in 0..4 {
            assert_eq!(pol.probs[[s, 1]], 1.0, "state {s} should go right");
        }
        let j_opt = mdp.rho0.dot(&v);
        let j_uniform = policy_return(&mdp, &TabularPolicy::uniform(5, 2)).unwrap();
        assert!(j_opt > j_uniform);
        let j_greedy = policy_return(&mdp, &pol).unwrap();
        assert_abs_diff_eq!(j_opt, j_greedy, epsilon = 1e-8);
    }
}
