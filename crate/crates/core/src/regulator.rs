//! A one-dimensional stochastic regulator: drive the state to the origin
//! under bounded control. Small enough that Monte-Carlo simulation on the
//! true dynamics serves as the judge for any learned controller.

use rand::prelude::*;
use rand_distr::StandardNormal;

use crate::dataset::{OfflineDataset, SpaceDescriptor, Transition};
use crate::error::Result;
use crate::planner::Controller;
use crate::rng::{stream_rng, STREAM_ENV};

/// States live in [−STATE_BOUND, STATE_BOUND].
pub const STATE_BOUND: f64 = 2.0;
/// Displacement per unit of (clamped) control.
pub const STEP_GAIN: f64 = 0.5;
/// Quadratic control cost weight in the reward.
pub const CONTROL_COST: f64 = 0.1;

/// x' = clamp(x + 0.5·u + ξ), r = −(x² + 0.1·u²), u clamped to [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Regulator {
    pub noise_std: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for Regulator {
    fn default() -> Self {
        Self {
            noise_std: 0.05,
            horizon: 20,
            gamma: 0.99,
        }
    }
}

impl Regulator {
    pub fn reset(&self, rng: &mut StdRng) -> Vec<f64> {
        vec![rng.gen_range(-STATE_BOUND..STATE_BOUND)]
    }

    /// One environment step; reward is charged at the current (x, u).
    pub fn step(&self, s: &[f64], a: &[f64], rng: &mut StdRng) -> (f64, Vec<f64>) {
        let x = s[0];
        let u = a[0].clamp(-1.0, 1.0);
        let r = -(x * x + CONTROL_COST * u * u);
        let noise: f64 = self.noise_std * rng.sample::<f64, _>(StandardNormal);
        let x_next = (x + STEP_GAIN * u + noise).clamp(-STATE_BOUND, STATE_BOUND);
        (r, vec![x_next])
    }
}

/// u = clamp(−gain·x + ξ, −1, 1); gain 2 cancels the state in one step
/// whenever the control bound allows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalController {
    pub gain: f64,
    pub noise_std: f64,
}

impl Controller for ProportionalController {
    fn act(&self, s: &[f64], rng: &mut StdRng) -> Vec<f64> {
        let noise: f64 = if self.noise_std > 0.0 {
            self.noise_std * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        vec![(-self.gain * s[0] + noise).clamp(-1.0, 1.0)]
    }
}

/// Uniform random control in [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformController;

impl Controller for UniformController {
    fn act(&self, _s: &[f64], rng: &mut StdRng) -> Vec<f64> {
        vec![rng.gen_range(-1.0..1.0)]
    }
}

/// Acts like the proportional expert with probability `expert_weight`,
/// uniformly otherwise — a coverage-quality dial for behavior data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradedController {
    pub expert_weight: f64,
    pub expert: ProportionalController,
}

impl GradedController {
    pub fn new(expert_weight: f64) -> Self {
        assert!((0.0..=1.0).contains(&expert_weight));
        Self {
            expert_weight,
            expert: ProportionalController {
                gain: 2.0,
                noise_std: 0.1,
            },
        }
    }
}

impl Controller for GradedController {
    fn act(&self, s: &[f64], rng: &mut StdRng) -> Vec<f64> {
        if rng.gen::<f64>() < self.expert_weight {
            self.expert.act(s, rng)
        } else {
            UniformController.act(s, rng)
        }
    }
}

/// Runs full-horizon episodes and records every transition.
pub fn collect_continuous<C: Controller>(
    env: &Regulator,
    controller: &C,
    n_episodes: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let mut rng = stream_rng(seed, STREAM_ENV);
    let mut transitions = Vec::with_capacity(n_episodes * env.horizon);
    for _ in 0..n_episodes {
        let mut s = env.reset(&mut rng);
        for _ in 0..env.horizon {
            let a = controller.act(&s, &mut rng);
            let (r, s_next) = env.step(&s, &a, &mut rng);
            transitions.push(Transition {
                s: s.clone(),
                a,
                r,
                s_next: s_next.clone(),
                done: false,
            });
            s = s_next;
        }
    }
    OfflineDataset::new(
        transitions,
        SpaceDescriptor::Continuous {
            state_dim: 1,
            action_dim: 1,
        },
    )
}

/// Mean discounted episode return under the true dynamics — the simulation
/// oracle used to judge planners.
pub fn evaluate_controller<C: Controller>(
    env: &Regulator,
    controller: &C,
    n_episodes: usize,
    seed: u64,
) -> f64 {
    let mut rng = stream_rng(seed, STREAM_ENV);
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let mut s = env.reset(&mut rng);
        let mut ret = 0.0;
        let mut discount = 1.0;
        for _ in 0..env.horizon {
            let a = controller.act(&s, &mut rng);
            let (r, s_next) = env.step(&s, &a, &mut rng);
            ret += discount * r;
            discount *= env.gamma;
            s = s_next;
        }
        total += ret;
    }
    total / n_episodes as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn noiseless() -> Regulator {
        Regulator {
            noise_std: 0.0,
            ..Regulator::default()
        }
    }

    #[test]
    fn origin_with_zero_control_is_a_fixed_point() {
        let env = noiseless();
        let mut rng = StdRng::seed_from_u64(0);
        let (r, s_next) = env.step(&[0.0], &[0.0], &mut rng);
        assert_eq!(r, 0.0);
        assert_eq!(s_next, vec![0.0]);
    }

    #[test]
    fn states_stay_inside_the_box_and_rewards_are_bounded() {
        let env = Regulator {
            noise_std: 1.0,
            ..Regulator::default()
        };
        let mut rng = StdRng::seed_from_u64(1);
        let mut s = env.reset(&mut rng);
        let worst = -(STATE_BOUND * STATE_BOUND + CONTROL_COST);
        for _ in 0..500 {
            let a = vec![rng.gen_range(-5.0..5.0)];
            let (r, s_next) = env.step(&s, &a, &mut rng);
            assert!(s_next[0].abs() <= STATE_BOUND);
            assert!((worst..=0.0).contains(&r), "reward {r} out of range");
            s = s_next;
        }
    }

    #[test]
    fn proportional_expert_reaches_the_origin_without_noise() {
        let env = noiseless();
        let ctrl = ProportionalController {
            gain: 2.0,
            noise_std: 0.0,
        };
        let mut rng = StdRng::seed_from_u64(2);
        let mut s = vec![2.0];
        let expected = [1.5, 1.0, 0.5, 0.0, 0.0];
        for want in expected {
            let a = ctrl.act(&s, &mut rng);
            let (_, s_next) = env.step(&s, &a, &mut rng);
            assert_abs_diff_eq!(s_next[0], want, epsilon = 1e-12);
            s = s_next;
        }
    }

    #[test]
    fn uniform_control_return_matches_hand_computation_when_pinned() {
        // zero-control policy from random starts: return = −E[x0²]·Σγᵗ
        struct Idle;
        impl Controller for Idle {
            fn act(&self, _: &[f64], _: &mut StdRng) -> Vec<f64> {
                vec![0.0]
            }
        }
        let env = noiseless();
        let n = 200_000;
        let got = evaluate_controller(&env, &Idle, n, 3);
        let horizon_sum: f64 = (0..env.horizon).map(|t| env.gamma.powi(t as i32)).sum();
        let expected = -(STATE_BOUND * STATE_BOUND / 3.0) * horizon_sum;
        // var(x0²) = E[x0⁴] − E[x0²]² = B⁴(1/5 − 1/9)
        let var_per_ep = STATE_BOUND.powi(4) * (1.0 / 5.0 - 1.0 / 9.0) * horizon_sum.powi(2);
        let se = (var_per_ep / n as f64).sqrt();
        assert!(
            (got - expected).abs() <= 3.0 * se,
            "return {got} vs expected {expected} (se {se})"
        );
    }

    #[test]
    fn expert_outperforms_random_control() {
        let env = Regulator::default();
        let expert = GradedController::new(0.9);
        let random = GradedController::new(0.0);
        let e = evaluate_controller(&env, &expert, 3000, 4);
        let r = evaluate_controller(&env, &random, 3000, 4);
        assert!(e > r + 1.0, "expert {e} should clearly beat random {r}");
    }

    #[test]
    fn collection_is_deterministic_and_well_shaped() {
        let env = Regulator::default();
        let ctrl = GradedController::new(0.5);
        let a = collect_continuous(&env, &ctrl, 7, 5).unwrap();
        let b = collect_continuous(&env, &ctrl, 7, 5).unwrap();
        assert_eq!(a.len(), 7 * env.horizon);
        assert_eq!(a.transitions, b.transitions);
        assert!(matches!(
            a.space,
            SpaceDescriptor::Continuous {
                state_dim: 1,
                action_dim: 1
            }
        ));
        let c = collect_continuous(&env, &ctrl, 7, 6).unwrap();
        assert_ne!(a.transitions, c.transitions);
    }

    #[test]
    fn episode_chaining_is_consistent() {
        let env = Regulator::default();
        let ds = collect_continuous(&env, &UniformController, 3, 8).unwrap();
        for ep in 0..3 {
            for t in 0..env.horizon - 1 {
                let i = ep * env.horizon + t;
                assert_eq!(ds.transitions[i].s_next, ds.transitions[i + 1].s);
            }
        }
    }
}
