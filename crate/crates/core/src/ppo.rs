//! Proximal policy optimization with a squashed diagonal-Gaussian policy,
//! generalized advantage estimation, and the clipped surrogate objective,
//! trained against the UAV environment.

use crate::error::{Error, Result};
use crate::mdp::{check_feasibility, Action, ActionBounds, ChannelOracle, UavMdp, ACTION_DIM};
use crate::nn::{adam_step, mse_gradient, AdamState, Activation, LayerSpec, Matrix, Network};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

const POLICY_CHECKPOINT_VERSION: u32 = 1;
const LN_2PI: f64 = 1.8378770664093453;
/// Exploration never collapses below this log standard deviation.
const LOG_STD_FLOOR: f64 = -1.5;
/// Weight decay on the policy trunk. Besides regularizing, it pulls
/// saturated pre-squash means back toward the responsive band of the tanh
/// squash once the surrogate gradient dies out there.
const POLICY_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    /// GAE interpolation; 1.0 is the plain discounted-residual sum.
    pub lambda: f64,
    pub clip: f64,
    pub rollout_len: usize,
    pub minibatch: usize,
    pub update_epochs: usize,
    pub lr: f64,
    /// Training stops once this many episodes have completed.
    pub episodes: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 1.0,
            clip: 0.2,
            rollout_len: 2048,
            minibatch: 256,
            update_epochs: 10,
            lr: 3e-4,
            episodes: 300,
            seed: 0,
            hidden: vec![64, 64],
            normalize_advantages: true,
        }
    }
}

/// Gaussian policy in pre-squash space with a per-dimension learnable
/// log-std; a scaled tanh maps samples into the action box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub trunk: Network,
    pub log_std: Vec<f64>,
    pub bounds: ActionBounds,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyCheckpoint {
    version: u32,
    policy: PolicyNet,
}

/// Value function over observations.
pub type ValueNet = Network;

fn squash(u: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * 0.5 * (u.tanh() + 1.0)
}

/// `ln(1 - tanh(u)^2)` in a form stable for large |u|.
fn ln_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - (-2.0 * u).exp().ln_1p())
}

/// A sampled control with what PPO needs to remember about it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: [f64; ACTION_DIM],
    pub pre_squash: [f64; ACTION_DIM],
    /// Log density of the squashed action (tanh correction included).
    pub log_prob: f64,
}

impl PolicyNet {
    pub fn new(obs_dim: usize, hidden: &[usize], bounds: ActionBounds, seed: u64) -> Self {
        let mut specs = Vec::new();
        let mut prev = obs_dim;
        for &h in hidden {
            specs.push(LayerSpec::new(prev, h, Activation::Tanh));
            prev = h;
        }
        specs.push(LayerSpec::new(prev, ACTION_DIM, Activation::Identity));
        Self {
            trunk: Network::new(&specs, seed),
            log_std: vec![0.0; ACTION_DIM],
            bounds,
        }
    }

    fn mean_for(&self, obs: &[f64]) -> [f64; ACTION_DIM] {
        let out = self.trunk.infer(&Matrix::from_row(obs));
        let mut mean = [0.0; ACTION_DIM];
        mean.copy_from_slice(out.row(0));
        mean
    }

    /// Log density of a stored pre-squash sample under the current policy.
    fn log_prob_of(&self, mean: &[f64], pre_squash: &[f64]) -> f64 {
        let mut lp = 0.0;
        for d in 0..ACTION_DIM {
            let sigma = self.log_std[d].exp();
            let z = (pre_squash[d] - mean[d]) / sigma;
            lp += -0.5 * z * z - self.log_std[d] - 0.5 * LN_2PI;
            // Change of variables through the scaled tanh.
            lp -= ((self.bounds.hi[d] - self.bounds.lo[d]) * 0.5).ln()
                + ln_one_minus_tanh_sq(pre_squash[d]);
        }
        lp
    }

    /// Draws an action; deterministic given the rng state.
    pub fn sample_action<R: Rng>(&self, obs: &[f64], rng: &mut R) -> SampledAction {
        let mean = self.mean_for(obs);
        let mut pre_squash = [0.0; ACTION_DIM];
        let mut action = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            let eps: f64 = rng.sample(StandardNormal);
            pre_squash[d] = mean[d] + self.log_std[d].exp() * eps;
            action[d] = squash(pre_squash[d], self.bounds.lo[d], self.bounds.hi[d]);
        }
        SampledAction {
            action,
            pre_squash,
            log_prob: self.log_prob_of(&mean, &pre_squash),
        }
    }

    /// Mean action (no exploration), squashed into bounds.
    pub fn act_deterministic(&self, obs: &[f64]) -> [f64; ACTION_DIM] {
        let mean = self.mean_for(obs);
        let mut action = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            action[d] = squash(mean[d], self.bounds.lo[d], self.bounds.hi[d]);
        }
        action
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = PolicyCheckpoint {
            version: POLICY_CHECKPOINT_VERSION,
            policy: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyNet> {
        let doc: PolicyCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc.version != POLICY_CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: doc.version,
                expected: POLICY_CHECKPOINT_VERSION,
            });
        }
        Ok(doc.policy)
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.log_std.len()
    }
}

/// Generalized advantage estimation over one uninterrupted segment.
///
/// `A_t = sum_k (gamma*lambda)^k delta_{t+k}` with `delta_t = r_t + gamma *
/// V_{t+1} - V_t` and `bootstrap_value` standing in for `V` past the end.
/// Returns (advantages, returns = advantages + values).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "reward/value length mismatch");
    let mut advantages = vec![0.0; rewards.len()];
    let mut next_value = bootstrap_value;
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// One sample's clipped-surrogate contribution,
/// `min(ratio * A, clip(ratio, 1 +/- eps) * A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

/// Experience gathered under one policy snapshot.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub observations: Matrix,
    pub pre_squash: Matrix,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the next state when the rollout cut an episode short.
    pub bootstrap_value: f64,
    pub episode_returns: Vec<f64>,
    pub successes: usize,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Surrogate loss of a frozen batch under the current policy parameters.
/// Exposed (with its gradient twin below) for the finite-difference check.
pub fn policy_surrogate_loss(
    policy: &PolicyNet,
    observations: &Matrix,
    pre_squash: &Matrix,
    log_probs_old: &[f64],
    advantages: &[f64],
    clip: f64,
) -> f64 {
    let means = policy.trunk.infer(observations);
    let m = observations.rows as f64;
    let mut loss = 0.0;
    for i in 0..observations.rows {
        let lp = policy.log_prob_of(means.row(i), pre_squash.row(i));
        let ratio = (lp - log_probs_old[i]).exp();
        loss -= clipped_objective(ratio, advantages[i], clip) / m;
    }
    loss
}

/// Analytic gradient of [`policy_surrogate_loss`] with respect to every
/// policy parameter (trunk, then log-std), plus the loss value.
pub fn policy_surrogate_grads(
    policy: &PolicyNet,
    observations: &Matrix,
    pre_squash: &Matrix,
    log_probs_old: &[f64],
    advantages: &[f64],
    clip: f64,
) -> (crate::nn::NetGrads, Vec<f64>, f64) {
    let cache = policy.trunk.forward_train(observations);
    let means = cache.output().clone();
    let m = observations.rows as f64;
    let mut loss = 0.0;
    let mut d_trunk_out = Matrix::zeros(observations.rows, ACTION_DIM);
    let mut d_log_std = vec![0.0; ACTION_DIM];
    for i in 0..observations.rows {
        let mean = means.row(i);
        let u = pre_squash.row(i);
        let lp = policy.log_prob_of(mean, u);
        let ratio = (lp - log_probs_old[i]).exp();
        let advantage = advantages[i];
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
        loss -= unclipped.min(clipped) / m;
        // The clipped branch is flat in the parameters.
        if unclipped <= clipped {
            let d_lp = -(ratio * advantage) / m;
            for d in 0..ACTION_DIM {
                let sigma = policy.log_std[d].exp();
                let z = (u[d] - mean[d]) / sigma;
                // dlp/dmean = z / sigma, dlp/dlog_std = z^2 - 1.
                d_trunk_out.set(i, d, d_lp * z / sigma);
                d_log_std[d] += d_lp * (z * z - 1.0);
            }
        }
    }
    let (trunk_grads, _) = policy.trunk.backward(&cache, &d_trunk_out);
    (trunk_grads, d_log_std, loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoIterStats {
    pub iteration: usize,
    pub env_steps: usize,
    pub episodes_completed: usize,
    /// Mean undiscounted return of episodes that finished this iteration
    /// (NaN when none finished).
    pub mean_episode_return: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PpoOutcome {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub curve: Vec<PpoIterStats>,
}

struct RolloutCollector {
    state: Option<crate::mdp::MdpState>,
    episode_return: f64,
}

impl RolloutCollector {
    fn collect<O: ChannelOracle, R: Rng>(
        &mut self,
        mdp: &UavMdp<O>,
        policy: &PolicyNet,
        value: &ValueNet,
        len: usize,
        rng: &mut R,
    ) -> Result<Rollout> {
        let obs_dim = mdp.obs_dim();
        let mut observations = Matrix::zeros(len, obs_dim);
        let mut pre_squash = Matrix::zeros(len, ACTION_DIM);
        let mut log_probs = Vec::with_capacity(len);
        let mut rewards = Vec::with_capacity(len);
        let mut values = Vec::with_capacity(len);
        let mut dones = Vec::with_capacity(len);
        let mut episode_returns = Vec::new();
        let mut successes = 0;

        let mut state = self.state.take().unwrap_or_else(|| mdp.reset());
        for t in 0..len {
            let obs = mdp.observe(&state);
            observations.row_mut(t).copy_from_slice(&obs);
            let v = value.infer(&Matrix::from_row(&obs)).get(0, 0);
            values.push(v);
            let sampled = policy.sample_action(&obs, rng);
            pre_squash.row_mut(t).copy_from_slice(&sampled.pre_squash);
            log_probs.push(sampled.log_prob);
            let out = mdp.step(&state, &Action::from_vec(&sampled.action))?;
            rewards.push(out.reward);
            dones.push(out.done);
            self.episode_return += out.reward;
            if out.done {
                episode_returns.push(self.episode_return);
                self.episode_return = 0.0;
                if matches!(out.info.ended, Some(crate::mdp::EpisodeEnd::Success)) {
                    successes += 1;
                }
                state = mdp.reset();
            } else {
                state = out.state;
            }
        }
        let bootstrap_value = if *dones.last().unwrap_or(&true) {
            0.0
        } else {
            let obs = mdp.observe(&state);
            value.infer(&Matrix::from_row(&obs)).get(0, 0)
        };
        self.state = Some(state);
        Ok(Rollout {
            observations,
            pre_squash,
            log_probs,
            rewards,
            values,
            dones,
            bootstrap_value,
            episode_returns,
            successes,
        })
    }
}

/// Per-segment GAE over a rollout that may contain several episodes.
fn rollout_advantages(rollout: &Rollout, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rollout.len();
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut start = 0;
    for t in 0..n {
        let boundary = rollout.dones[t] || t + 1 == n;
        if !boundary {
            continue;
        }
        let bootstrap = if rollout.dones[t] {
            0.0
        } else {
            rollout.bootstrap_value
        };
        let (a, r) = gae(
            &rollout.rewards[start..=t],
            &rollout.values[start..=t],
            bootstrap,
            gamma,
            lambda,
        );
        advantages[start..=t].copy_from_slice(&a);
        returns[start..=t].copy_from_slice(&r);
        start = t + 1;
    }
    (advantages, returns)
}

/// Trains policy and value networks on an environment until the episode
/// budget is spent. Deterministic for a fixed seed.
pub fn train_ppo<O: ChannelOracle>(mdp: &UavMdp<O>, cfg: &PpoConfig) -> Result<PpoOutcome> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let bounds = mdp.cfg.action_bounds();
    let mut policy = PolicyNet::new(mdp.obs_dim(), &cfg.hidden, bounds, rng.gen());
    let mut value: ValueNet = {
        let mut specs = Vec::new();
        let mut prev = mdp.obs_dim();
        for &h in &cfg.hidden {
            specs.push(LayerSpec::new(prev, h, Activation::Tanh));
            prev = h;
        }
        specs.push(LayerSpec::new(prev, 1, Activation::Identity));
        Network::new(&specs, rng.gen())
    };
    let mut policy_opt = AdamState::new(cfg.lr);
    let mut value_opt = AdamState::new(cfg.lr);
    let mut collector = RolloutCollector {
        state: None,
        episode_return: 0.0,
    };

    let mut curve = Vec::new();
    let mut episodes_done = 0usize;
    let mut env_steps = 0usize;
    let mut iteration = 0usize;
    while episodes_done < cfg.episodes {
        iteration += 1;
        let rollout = collector.collect(mdp, &policy, &value, cfg.rollout_len, &mut rng)?;
        env_steps += rollout.len();
        episodes_done += rollout.episode_returns.len();

        let (mut advantages, returns) = rollout_advantages(&rollout, cfg.gamma, cfg.lambda);
        if cfg.normalize_advantages {
            let n = advantages.len() as f64;
            let mean = advantages.iter().sum::<f64>() / n;
            let var = advantages
                .iter()
                .map(|a| (a - mean) * (a - mean))
                .sum::<f64>()
                / n;
            let std = var.sqrt().max(1e-8);
            for a in advantages.iter_mut() {
                *a = (*a - mean) / std;
            }
        }

        let mut index: Vec<usize> = (0..rollout.len()).collect();
        let mut last_policy_loss = 0.0;
        let mut last_value_loss = 0.0;
        for _ in 0..cfg.update_epochs {
            index.shuffle(&mut rng);
            for chunk in index.chunks(cfg.minibatch) {
                let rows = chunk.len();
                let mut obs = Matrix::zeros(rows, rollout.observations.cols);
                let mut u = Matrix::zeros(rows, ACTION_DIM);
                let mut lp_old = Vec::with_capacity(rows);
                let mut adv = Vec::with_capacity(rows);
                let mut ret = Matrix::zeros(rows, 1);
                for (r, &i) in chunk.iter().enumerate() {
                    obs.row_mut(r).copy_from_slice(rollout.observations.row(i));
                    u.row_mut(r).copy_from_slice(rollout.pre_squash.row(i));
                    lp_old.push(rollout.log_probs[i]);
                    adv.push(advantages[i]);
                    ret.set(r, 0, returns[i]);
                }

                let (mut trunk_grads, log_std_grad, p_loss) =
                    policy_surrogate_grads(&policy, &obs, &u, &lp_old, &adv, cfg.clip);
                trunk_grads.add_weight_decay(&policy.trunk, POLICY_WEIGHT_DECAY);
                if !p_loss.is_finite() {
                    return Err(Error::Diverged {
                        context: "ppo policy loss".into(),
                        step: iteration,
                    });
                }
                let mut grad_slices = trunk_grads.slices();
                grad_slices.push(&log_std_grad);
                let mut param_slices = policy.trunk.param_slices_mut();
                param_slices.push(&mut policy.log_std);
                adam_step(&mut param_slices, &grad_slices, &mut policy_opt)?;
                for v in policy.log_std.iter_mut() {
                    *v = v.max(LOG_STD_FLOOR);
                }
                last_policy_loss = p_loss;

                let v_cache = value.forward_train(&obs);
                let v_loss = crate::nn::mse(v_cache.output(), &ret);
                if !v_loss.is_finite() {
                    return Err(Error::Diverged {
                        context: "ppo value loss".into(),
                        step: iteration,
                    });
                }
                let (v_grads, _) = value.backward(&v_cache, &mse_gradient(v_cache.output(), &ret));
                adam_step(&mut value.param_slices_mut(), &v_grads.slices(), &mut value_opt)?;
                last_value_loss = v_loss;
            }
        }

        let mean_return = if rollout.episode_returns.is_empty() {
            f64::NAN
        } else {
            rollout.episode_returns.iter().sum::<f64>() / rollout.episode_returns.len() as f64
        };
        curve.push(PpoIterStats {
            iteration,
            env_steps,
            episodes_completed: episodes_done,
            mean_episode_return: mean_return,
            success_rate: if rollout.episode_returns.is_empty() {
                0.0
            } else {
                rollout.successes as f64 / rollout.episode_returns.len() as f64
            },
            policy_loss: last_policy_loss,
            value_loss: last_value_loss,
        });
        if iteration > 10_000 {
            return Err(Error::Diverged {
                context: "ppo never completed the episode budget".into(),
                step: iteration,
            });
        }
    }
    Ok(PpoOutcome {
        policy,
        value,
        curve,
    })
}

/// Aggregate evaluation of a policy run deterministically (mean actions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_flight_time_s: f64,
    pub mean_throughput_bps: f64,
    /// Fraction of episodes that completed the mission with a clean
    /// feasibility check.
    pub success_rate: f64,
    pub mean_total_reward: f64,
}

/// Evaluates with the mean action per step. The environment and policy are
/// deterministic, so `seed` only matters for stochastic oracles; it is kept
/// for interface stability and reproducibility bookkeeping.
pub fn evaluate_policy<O: ChannelOracle>(
    mdp: &UavMdp<O>,
    policy: &PolicyNet,
    n_episodes: usize,
    _seed: u64,
) -> Result<EvalSummary> {
    let mut flight = 0.0;
    let mut throughput = 0.0;
    let mut successes = 0usize;
    let mut reward_total = 0.0;
    for _ in 0..n_episodes.max(1) {
        let traj = mdp.rollout_with(|state| {
            let obs = mdp.observe(state);
            Action::from_vec(&policy.act_deterministic(&obs))
        })?;
        let feasible = check_feasibility(&traj, &mdp.cfg).is_empty();
        flight += traj.t_end_s;
        throughput += traj.throughput_bps;
        reward_total += traj.total_reward;
        if traj.success && feasible {
            successes += 1;
        }
    }
    let n = n_episodes.max(1) as f64;
    Ok(EvalSummary {
        mean_flight_time_s: flight / n,
        mean_throughput_bps: throughput / n,
        success_rate: successes as f64 / n,
        mean_total_reward: reward_total / n,
    })
}

/// Baseline: uniform random actions inside the bounds.
pub fn evaluate_random<O: ChannelOracle>(
    mdp: &UavMdp<O>,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let bounds = mdp.cfg.action_bounds();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut flight = 0.0;
    let mut throughput = 0.0;
    let mut successes = 0usize;
    let mut reward_total = 0.0;
    for _ in 0..n_episodes.max(1) {
        let traj = mdp.rollout_with(|_| {
            let mut v = [0.0; ACTION_DIM];
            for d in 0..ACTION_DIM {
                v[d] = rng.gen_range(bounds.lo[d]..=bounds.hi[d]);
            }
            Action::from_vec(&v)
        })?;
        flight += traj.t_end_s;
        throughput += traj.throughput_bps;
        reward_total += traj.total_reward;
        if traj.success && check_feasibility(&traj, &mdp.cfg).is_empty() {
            successes += 1;
        }
    }
    let n = n_episodes.max(1) as f64;
    Ok(EvalSummary {
        mean_flight_time_s: flight / n,
        mean_throughput_bps: throughput / n,
        success_rate: successes as f64 / n,
        mean_total_reward: reward_total / n,
    })
}
