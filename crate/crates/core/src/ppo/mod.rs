//! Proximal policy optimization over the trading environment.
//!
//! The policy is an MLP trunk with independent 3-way categorical heads per
//! ticker (joint log-prob is the sum over heads) and a scalar critic.
//! Updates use generalized advantage estimation and the clipped surrogate
//! objective; everything is seeded hierarchically so a training run is
//! reproducible to the byte.

mod net;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Stream};
use crate::tradenv::{Action, EnvError, ObsNormalizer, TradingEnv};

pub use net::{
    backward, clip_grad_norm, forward, policy_forward, softmax, Adam, ForwardCache, PolicyParams,
    PolicyShape, N_ACTIONS,
};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("observation width {got}, params expect {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPOConfig {
    pub total_timesteps: usize,
    pub rollout_horizon: usize,
    pub minibatch: usize,
    pub epochs_per_update: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub checkpoint_every: usize,
    pub hidden: usize,
}

impl Default for PPOConfig {
    /// Desk-scale defaults; [`PPOConfig::paper_scale`] for the long run.
    fn default() -> Self {
        Self {
            total_timesteps: 50_000,
            rollout_horizon: 2_048,
            minibatch: 64,
            epochs_per_update: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            checkpoint_every: 10_000,
            hidden: 64,
        }
    }
}

impl PPOConfig {
    pub fn paper_scale() -> Self {
        Self {
            total_timesteps: 500_000,
            checkpoint_every: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let err = |msg: &str| Err(PpoError::Config(msg.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err("gae_lambda must be in [0, 1]");
        }
        if self.clip_epsilon <= 0.0 {
            return err("clip_epsilon must be positive");
        }
        if self.minibatch == 0 || self.rollout_horizon == 0 || self.epochs_per_update == 0 {
            return err("minibatch, rollout_horizon, epochs_per_update must be positive");
        }
        if self.total_timesteps == 0 || self.checkpoint_every == 0 {
            return err("total_timesteps and checkpoint_every must be positive");
        }
        if self.hidden == 0 {
            return err("hidden width must be positive");
        }
        Ok(())
    }
}

/// One rollout worth of aligned trajectories.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    /// Normalized observations as the policy saw them.
    pub observations: Vec<Vec<f64>>,
    /// Per-ticker head indices (0 sell, 1 hold, 2 buy).
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub value_estimates: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Generalized advantage estimation.
///
/// delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t,
/// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1},
/// returns = A + V. `bootstrap_value` stands in for V at the step after the
/// last (ignored when the last step terminated).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(PpoError::LengthMismatch(format!(
            "rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Sample one action per head from the softmax of its logits; the joint
/// log-prob is the sum of per-head log-probs.
pub fn sample_actions(logits: &[Vec<f64>], rng: &mut Stream) -> (Vec<Action>, Vec<usize>, f64) {
    let mut actions = Vec::with_capacity(logits.len());
    let mut indices = Vec::with_capacity(logits.len());
    let mut log_prob = 0.0;
    for head in logits {
        let probs = softmax(head);
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                chosen = i;
                break;
            }
        }
        log_prob += probs[chosen].max(f64::MIN_POSITIVE).ln();
        indices.push(chosen);
        actions.push(Action::from_index(chosen));
    }
    (actions, indices, log_prob)
}

/// Deterministic mode: argmax per head, ties broken toward the lowest index.
pub fn greedy_actions(logits: &[Vec<f64>]) -> Vec<Action> {
    logits
        .iter()
        .map(|head| {
            let mut best = 0;
            for (i, l) in head.iter().enumerate().skip(1) {
                if *l > head[best] {
                    best = i;
                }
            }
            Action::from_index(best)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy)]
struct LossTerms {
    policy: f64,
    value: f64,
    entropy: f64,
    clip_hits: usize,
    kl_sum: f64,
}

/// Loss and parameter gradient over `idx` of the batch. `advantages` must
/// already be normalized.
fn minibatch_loss_grads(
    params: &PolicyParams,
    batch: &RolloutBatch,
    idx: &[usize],
    advantages: &[f64],
    config: &PPOConfig,
    grad: Option<&mut [f64]>,
) -> Result<LossTerms, PpoError> {
    let m = idx.len() as f64;
    let eps = config.clip_epsilon;
    let mut terms = LossTerms {
        policy: 0.0,
        value: 0.0,
        entropy: 0.0,
        clip_hits: 0,
        kl_sum: 0.0,
    };
    let mut grad = grad;
    let mut d_logits: Vec<Vec<f64>> = Vec::new();
    for &i in idx {
        let cache = forward(params, &batch.observations[i]);
        let mut log_p_new = 0.0;
        let mut entropy_i = 0.0;
        d_logits.clear();
        let mut head_info: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cache.logits.len());
        for (head, &action) in cache.logits.iter().zip(&batch.actions[i]) {
            let probs = softmax(head);
            let h_t: f64 = -probs
                .iter()
                .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
                .sum::<f64>();
            log_p_new += probs[action].max(f64::MIN_POSITIVE).ln();
            entropy_i += h_t;
            head_info.push((probs, h_t));
        }
        let adv = advantages[i];
        let ratio = (log_p_new - batch.log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        terms.policy -= unclipped.min(clipped) / m;
        terms.kl_sum += batch.log_probs[i] - log_p_new;
        if (ratio - 1.0).abs() > eps {
            terms.clip_hits += 1;
        }

        let v_diff = cache.value - batch.returns[i];
        terms.value += v_diff * v_diff / m;
        terms.entropy += entropy_i / m;

        if let Some(g) = grad.as_deref_mut() {
            // d(-min)/d log_p_new: the unclipped branch carries ratio * adv,
            // a binding clamp has zero slope.
            let g_lp = if unclipped <= clipped { -ratio * adv } else { 0.0 };
            for ((head, &action), (probs, h_t)) in
                cache.logits.iter().zip(&batch.actions[i]).zip(&head_info)
            {
                let dl: Vec<f64> = (0..head.len())
                    .map(|a| {
                        let one_hot = if a == action { 1.0 } else { 0.0 };
                        let d_policy = g_lp * (one_hot - probs[a]);
                        let log_p = probs[a].max(f64::MIN_POSITIVE).ln();
                        let d_entropy = config.entropy_coef * probs[a] * (log_p + h_t);
                        (d_policy + d_entropy) / m
                    })
                    .collect();
                d_logits.push(dl);
            }
            let d_value = config.value_coef * 2.0 * v_diff / m;
            backward(params, &cache, &d_logits, d_value, g);
            d_logits.clear();
        }
    }
    let total = terms.policy + config.value_coef * terms.value - config.entropy_coef * terms.entropy;
    if !total.is_finite() {
        return Err(PpoError::NonFiniteLoss(format!(
            "policy {} value {} entropy {}",
            terms.policy, terms.value, terms.entropy
        )));
    }
    Ok(terms)
}

/// Total loss over `idx` (for finite-difference checks).
pub fn batch_loss(
    params: &PolicyParams,
    batch: &RolloutBatch,
    idx: &[usize],
    advantages: &[f64],
    config: &PPOConfig,
) -> Result<f64, PpoError> {
    let t = minibatch_loss_grads(params, batch, idx, advantages, config, None)?;
    Ok(t.policy + config.value_coef * t.value - config.entropy_coef * t.entropy)
}

/// Analytic gradient of [`batch_loss`] over `idx`.
pub fn batch_loss_grad(
    params: &PolicyParams,
    batch: &RolloutBatch,
    idx: &[usize],
    advantages: &[f64],
    config: &PPOConfig,
) -> Result<Vec<f64>, PpoError> {
    let mut grad = vec![0.0; params.n_params()];
    minibatch_loss_grads(params, batch, idx, advantages, config, Some(&mut grad))?;
    Ok(grad)
}

/// Normalize advantages to mean 0, std 1 (epsilon-guarded).
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    advantages.iter().map(|a| (a - mean) / std).collect()
}

/// One PPO update: epochs of shuffled minibatches with the clipped
/// surrogate, value MSE, entropy bonus, gradient clipping, and Adam.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut Adam,
    batch: &RolloutBatch,
    config: &PPOConfig,
    rng: &mut Stream,
) -> Result<UpdateStats, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::LengthMismatch("empty batch".to_string()));
    }
    let advantages = normalize_advantages(&batch.advantages);
    let n = batch.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut n_minibatches = 0usize;
    let mut grad = vec![0.0; params.n_params()];
    for _ in 0..config.epochs_per_update {
        // Fisher-Yates off the seeded stream.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.minibatch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let terms =
                minibatch_loss_grads(params, batch, chunk, &advantages, config, Some(&mut grad))?;
            let norm = clip_grad_norm(&mut grad, config.max_grad_norm);
            opt.step(&mut params.theta, &grad);
            stats.policy_loss += terms.policy;
            stats.value_loss += terms.value;
            stats.entropy += terms.entropy;
            stats.approx_kl += terms.kl_sum / chunk.len() as f64;
            stats.clip_fraction += terms.clip_hits as f64 / chunk.len() as f64;
            stats.grad_norm += norm;
            n_minibatches += 1;
        }
    }
    let scale = 1.0 / n_minibatches as f64;
    stats.policy_loss *= scale;
    stats.value_loss *= scale;
    stats.entropy *= scale;
    stats.approx_kl *= scale;
    stats.clip_fraction *= scale;
    stats.grad_norm *= scale;
    Ok(stats)
}

/// Versioned checkpoint: everything needed to reproduce an evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub timestep: usize,
    pub seed: u64,
    pub config: PPOConfig,
    pub params: PolicyParams,
    pub normalizer: ObsNormalizer,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save_json(&self, path: &Path) -> Result<(), PpoError> {
        crate::fsio::write_atomic_str(path, &serde_json::to_string(self).expect("checkpoint serializes"))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, PpoError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| PpoError::Config(format!("checkpoint parse: {e}")))
    }
}

/// One point of the training convergence curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timestep: usize,
    /// None when the evaluation equity curve had zero-variance returns.
    pub eval_sharpe: Option<f64>,
    pub eval_return_pct: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoints: Vec<Checkpoint>,
    pub curve: Vec<CurvePoint>,
    pub params: PolicyParams,
    pub normalizer: ObsNormalizer,
}

/// Train on `env`, evaluating on `eval_env` with frozen normalizer and
/// deterministic actions at every `checkpoint_every` boundary.
///
/// Hierarchical seeding: `seed` fans out into weight-init, action-sampling,
/// and minibatch-shuffle streams, so changing one consumer never perturbs
/// the others.
pub fn train(
    env: &mut TradingEnv,
    eval_env: &mut TradingEnv,
    norm: &mut ObsNormalizer,
    config: &PPOConfig,
    seed: u64,
) -> Result<TrainOutput, PpoError> {
    config.validate()?;
    let obs_width = env.obs_width();
    if norm.width() != obs_width {
        return Err(PpoError::WidthMismatch {
            got: norm.width(),
            expected: obs_width,
        });
    }
    let shape = PolicyShape {
        obs_width,
        n_tickers: env.config.universe.len(),
        hidden: config.hidden,
    };
    let mut weight_rng = stream(seed, "weight_init", 0);
    let mut action_rng = stream(seed, "action_sampling", 0);
    let mut shuffle_rng = stream(seed, "minibatch_shuffle", 0);
    let mut params = PolicyParams::init(shape, &mut weight_rng);
    let mut opt = Adam::new(params.n_params(), config.learning_rate);

    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut curve = Vec::new();
    let n_checkpoints = config.total_timesteps / config.checkpoint_every;

    norm.update_enabled = true;
    let mut obs = norm.normalize(&env.reset())?;
    let mut steps_done = 0usize;
    while steps_done < config.total_timesteps {
        let mut batch = RolloutBatch::default();
        let mut last_done = false;
        for _ in 0..config.rollout_horizon {
            let cache = forward(&params, &obs);
            let (actions, indices, log_prob) = sample_actions(&cache.logits, &mut action_rng);
            let (next_obs_raw, reward, done, _info) = env.step(&actions)?;
            batch.observations.push(obs);
            batch.actions.push(indices);
            batch.log_probs.push(log_prob);
            batch.rewards.push(reward);
            batch.value_estimates.push(cache.value);
            batch.dones.push(done);
            last_done = done;
            obs = if done {
                norm.normalize(&env.reset())?
            } else {
                norm.normalize(&next_obs_raw)?
            };
        }
        let bootstrap = if last_done {
            0.0
        } else {
            forward(&params, &obs).value
        };
        let (advantages, returns) = gae(
            &batch.rewards,
            &batch.value_estimates,
            &batch.dones,
            bootstrap,
            config.gamma,
            config.gae_lambda,
        )?;
        batch.advantages = advantages;
        batch.returns = returns;
        ppo_update(&mut params, &mut opt, &batch, config, &mut shuffle_rng)?;
        steps_done += config.rollout_horizon;

        while checkpoints.len() < n_checkpoints
            && steps_done >= (checkpoints.len() + 1) * config.checkpoint_every
        {
            let timestep = (checkpoints.len() + 1) * config.checkpoint_every;
            let mut frozen = norm.clone();
            frozen.freeze();
            let equity = evaluate_policy(&params, &frozen, eval_env, true, seed)?;
            let values: Vec<f64> = equity.iter().map(|(_, v)| *v).collect();
            let eval_return_pct = (values[values.len() - 1] / values[0] - 1.0) * 100.0;
            curve.push(CurvePoint {
                timestep,
                eval_sharpe: equity_sharpe(&values),
                eval_return_pct,
            });
            checkpoints.push(Checkpoint {
                version: CHECKPOINT_VERSION,
                timestep,
                seed,
                config: config.clone(),
                params: params.clone(),
                normalizer: frozen,
            });
        }
    }

    let normalizer = norm.clone();
    Ok(TrainOutput {
        checkpoints,
        curve,
        params,
        normalizer,
    })
}

/// Run one full episode and return the daily equity curve (initial value
/// first, then one point per step). Nothing is mutated: the normalizer is
/// used through a frozen clone.
pub fn evaluate_policy(
    params: &PolicyParams,
    norm: &ObsNormalizer,
    env: &mut TradingEnv,
    deterministic: bool,
    seed: u64,
) -> Result<Vec<(chrono::NaiveDate, f64)>, PpoError> {
    let mut frozen = norm.clone();
    frozen.freeze();
    let mut action_rng = stream(seed, "eval_actions", 0);
    let mut obs = frozen.normalize(&env.reset())?;
    let mut curve = vec![(env.current_date(), env.portfolio_value())];
    loop {
        let (logits, _) = policy_forward(params, &obs);
        let actions = if deterministic {
            greedy_actions(&logits)
        } else {
            sample_actions(&logits, &mut action_rng).0
        };
        let (next_obs, _, done, info) = env.step(&actions)?;
        curve.push((info.date, info.portfolio_value));
        if done {
            break;
        }
        obs = frozen.normalize(&next_obs)?;
    }
    Ok(curve)
}

/// One row of an episode trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub date: chrono::NaiveDate,
    pub portfolio_value: f64,
    pub cash: f64,
    pub turnover: f64,
    pub costs: f64,
    pub reward: f64,
}

/// Like [`evaluate_policy`], but keeps the per-step diagnostics.
pub fn episode_trace(
    params: &PolicyParams,
    norm: &ObsNormalizer,
    env: &mut TradingEnv,
    deterministic: bool,
    seed: u64,
) -> Result<Vec<TraceRow>, PpoError> {
    let mut frozen = norm.clone();
    frozen.freeze();
    let mut action_rng = stream(seed, "eval_actions", 0);
    let mut obs = frozen.normalize(&env.reset())?;
    let mut rows = Vec::with_capacity(env.episode_len());
    loop {
        let (logits, _) = policy_forward(params, &obs);
        let actions = if deterministic {
            greedy_actions(&logits)
        } else {
            sample_actions(&logits, &mut action_rng).0
        };
        let (next_obs, reward, done, info) = env.step(&actions)?;
        rows.push(TraceRow {
            date: info.date,
            portfolio_value: info.portfolio_value,
            cash: env.portfolio().cash,
            turnover: info.turnover,
            costs: info.costs_paid,
            reward,
        });
        if done {
            break;
        }
        obs = frozen.normalize(&next_obs)?;
    }
    Ok(rows)
}

/// Episode trace CSV: date, portfolio value, cash, turnover, costs, reward.
pub fn export_trace_csv(rows: &[TraceRow], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("date,portfolio_value,cash,turnover,costs,reward\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            r.date, r.portfolio_value, r.cash, r.turnover, r.costs, r.reward
        ));
    }
    crate::fsio::write_atomic_str(path, &out)
}

/// Annualized Sharpe of an equity curve's daily returns; None when the
/// returns have no dispersion.
fn equity_sharpe(values: &[f64]) -> Option<f64> {
    if values.len() < 3 {
        return None;
    }
    let returns: Vec<f64> = values.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    (std > 0.0).then(|| mean / std * 252.0_f64.sqrt())
}

/// CSV of the convergence curve: timestep, eval_sharpe, eval_return_pct.
pub fn export_curve_csv(curve: &[CurvePoint], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("timestep,eval_sharpe,eval_return_pct\n");
    for p in curve {
        let sharpe = p
            .eval_sharpe
            .map(|s| format!("{s:.9}"))
            .unwrap_or_default();
        out.push_str(&format!("{},{sharpe},{:.9}\n", p.timestep, p.eval_return_pct));
    }
    crate::fsio::write_atomic_str(path, &out)
}
