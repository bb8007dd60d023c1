//! On-policy multi-agent training: rollout collection, lambda-GAE
//! advantages from a centralized critic, sequential per-agent clipped
//! policy updates with the other agents frozen, and critic regression.
//!
//! The same machinery runs independent PPO: per-agent critics on local
//! state and no sequential coupling. With one agent the two algorithms are
//! step-for-step identical given the same seed.

use crate::checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
use crate::env::{EnvError, RestorationEnv};
use crate::feeder::FeederGraph;
use crate::nn::{
    adam_step, backward, categorical_head, entropy, forward, forward_cached, init_mlp, AdamState,
    MlpSpec, NnError, ParamVector,
};
use crate::rngstream::{self, RngState};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss during agent {agent} update at iteration {iteration}")]
    NonFinite { agent: usize, iteration: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Happo,
    IndependentPpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    /// Ascending agent index every iteration.
    #[default]
    Fixed,
    /// Fresh random permutation per iteration.
    Shuffled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub ent_coef: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub rollout_length: usize,
    pub iterations: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub adv_norm: bool,
    /// Compound each updated agent's probability ratio into the shared
    /// advantages before the next agent updates.
    pub happo_strict: bool,
    pub update_order: UpdateOrder,
    pub hidden_dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            ent_coef: 0.01,
            ppo_epochs: 4,
            minibatch_size: 64,
            rollout_length: 64,
            iterations: 500,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            adv_norm: true,
            happo_strict: false,
            update_order: UpdateOrder::Fixed,
            hidden_dims: vec![64, 64],
        }
    }
}

/// One transition of every agent plus the shared signals.
#[derive(Debug, Clone)]
pub struct StepSample {
    pub global_state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub logp_old: Vec<f64>,
    pub reward: f64,
    /// One value per critic (single centralized critic or N local ones),
    /// recorded under the parameters that generated the actions.
    pub values: Vec<f64>,
    pub done: bool,
    pub restored_frac: f64,
    pub weighted_kw: f64,
    pub xi_effective: f64,
}

/// One on-policy rollout segment of fixed length.
#[derive(Debug, Clone)]
pub struct TrajectoryBuffer {
    pub steps: Vec<StepSample>,
    /// Value of the state following the last step, per critic.
    pub bootstrap_values: Vec<f64>,
}

/// Decentralized actor bank.
#[derive(Debug, Clone)]
pub struct Agents {
    pub specs: Vec<MlpSpec>,
    pub params: Vec<ParamVector>,
    pub adam: Vec<AdamState>,
}

impl Agents {
    pub fn init(
        obs_dims: &[usize],
        action_dims: &[usize],
        hidden: &[usize],
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut specs = Vec::new();
        let mut params = Vec::new();
        let mut adam = Vec::new();
        for (&o, &a) in obs_dims.iter().zip(action_dims.iter()) {
            let spec = MlpSpec::new(o, hidden.to_vec(), a);
            // small output gain keeps the initial policy near uniform
            let p = init_mlp(&spec, rng, 2f64.sqrt(), 0.01);
            adam.push(AdamState::new(spec.param_count(), lr));
            specs.push(spec);
            params.push(p);
        }
        Agents { specs, params, adam }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Value-function bank: one centralized critic (HAPPO) or one per agent
/// (independent PPO).
#[derive(Debug, Clone)]
pub struct Critics {
    pub specs: Vec<MlpSpec>,
    pub params: Vec<ParamVector>,
    pub adam: Vec<AdamState>,
}

impl Critics {
    pub fn init(input_dims: &[usize], hidden: &[usize], lr: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut specs = Vec::new();
        let mut params = Vec::new();
        let mut adam = Vec::new();
        for &d in input_dims {
            let spec = MlpSpec::new(d, hidden.to_vec(), 1);
            let p = init_mlp(&spec, rng, 2f64.sqrt(), 1.0);
            adam.push(AdamState::new(spec.param_count(), lr));
            specs.push(spec);
            params.push(p);
        }
        Critics { specs, params, adam }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }
}

/// Critic input dims for an environment under an algorithm: the global
/// state for the centralized critic, or each agent's observation plus the
/// three global scalars for local critics (identical to the global state
/// when there is one agent).
pub fn critic_input_dims(env: &RestorationEnv, algorithm: Algorithm) -> Vec<usize> {
    match algorithm {
        Algorithm::Happo => vec![env.global_state_dim()],
        Algorithm::IndependentPpo => env.obs_dims().iter().map(|d| d + 3).collect(),
    }
}

fn critic_input(obs: &[Vec<f64>], global_state: &[f64], algorithm: Algorithm, critic: usize) -> Vec<f64> {
    match algorithm {
        Algorithm::Happo => global_state.to_vec(),
        Algorithm::IndependentPpo => {
            let tail = &global_state[global_state.len() - 3..];
            let mut v = Vec::with_capacity(obs[critic].len() + 3);
            v.extend_from_slice(&obs[critic]);
            v.extend_from_slice(tail);
            v
        }
    }
}

/// Which advantage/return stream an agent consumes.
fn stream_for(agent: usize, algorithm: Algorithm) -> usize {
    match algorithm {
        Algorithm::Happo => 0,
        Algorithm::IndependentPpo => agent,
    }
}

/// Stats of one finished episode, for metrics.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStat {
    pub ret: f64,
    pub final_frac: f64,
    pub final_weighted_kw: f64,
    pub final_xi: f64,
}

/// Environment plus the carry-over state between rollout segments.
#[derive(Debug, Clone)]
pub struct RolloutContext {
    pub env: RestorationEnv,
    obs: Vec<Vec<f64>>,
    global_state: Vec<f64>,
    ep_reward: f64,
    completed: Vec<EpisodeStat>,
}

impl RolloutContext {
    pub fn new(mut env: RestorationEnv) -> Result<Self, TrainError> {
        let reset = env.reset()?;
        Ok(RolloutContext {
            env,
            obs: reset.observations,
            global_state: reset.global_state,
            ep_reward: 0.0,
            completed: Vec::new(),
        })
    }

    pub fn drain_completed(&mut self) -> Vec<EpisodeStat> {
        std::mem::take(&mut self.completed)
    }
}

#[derive(Debug, Clone)]
pub struct RolloutStats {
    pub mean_reward: f64,
    pub xi_mean: f64,
    /// Mean policy entropy per agent over the segment.
    pub entropy: Vec<f64>,
}

/// Collects a fixed-length on-policy segment, resetting the environment
/// whenever an episode finishes inside it.
pub fn collect_rollout(
    ctx: &mut RolloutContext,
    agents: &Agents,
    critics: &Critics,
    algorithm: Algorithm,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(TrajectoryBuffer, RolloutStats), TrainError> {
    let n = agents.len();
    let mut steps = Vec::with_capacity(length);
    let mut entropy_acc = vec![0.0; n];
    let mut reward_acc = 0.0;
    let mut xi_acc = 0.0;

    for _ in 0..length {
        let mut actions = Vec::with_capacity(n);
        let mut logp_old = Vec::with_capacity(n);
        for i in 0..n {
            let logits = forward(&agents.specs[i], &agents.params[i], &ctx.obs[i])?;
            let cat = categorical_head(&logits);
            let a = crate::nn::sample_categorical(&cat.probs, rng);
            actions.push(a);
            logp_old.push(cat.log_probs[a]);
            entropy_acc[i] += entropy(&cat.probs);
        }
        let mut values = Vec::with_capacity(critics.len());
        for c in 0..critics.len() {
            let input = critic_input(&ctx.obs, &ctx.global_state, algorithm, c);
            values.push(forward(&critics.specs[c], &critics.params[c], &input)?[0]);
        }

        let out = ctx.env.step(&actions)?;
        reward_acc += out.reward;
        xi_acc += out.info.xi_effective;
        ctx.ep_reward += out.reward;

        steps.push(StepSample {
            global_state: std::mem::take(&mut ctx.global_state),
            obs: std::mem::take(&mut ctx.obs),
            actions,
            logp_old,
            reward: out.reward,
            values,
            done: out.done,
            restored_frac: out.info.restored_frac,
            weighted_kw: out.info.weighted_kw,
            xi_effective: out.info.xi_effective,
        });

        if out.done {
            ctx.completed.push(EpisodeStat {
                ret: ctx.ep_reward,
                final_frac: out.info.restored_frac,
                final_weighted_kw: out.info.weighted_kw,
                final_xi: out.info.report.xi,
            });
            ctx.ep_reward = 0.0;
            let reset = ctx.env.reset()?;
            ctx.obs = reset.observations;
            ctx.global_state = reset.global_state;
        } else {
            ctx.obs = out.observations;
            ctx.global_state = out.global_state;
        }
    }

    let mut bootstrap_values = Vec::with_capacity(critics.len());
    for c in 0..critics.len() {
        let input = critic_input(&ctx.obs, &ctx.global_state, algorithm, c);
        bootstrap_values.push(forward(&critics.specs[c], &critics.params[c], &input)?[0]);
    }

    let stats = RolloutStats {
        mean_reward: reward_acc / length.max(1) as f64,
        xi_mean: xi_acc / length.max(1) as f64,
        entropy: entropy_acc.iter().map(|e| e / length.max(1) as f64).collect(),
    };
    Ok((
        TrajectoryBuffer {
            steps,
            bootstrap_values,
        },
        stats,
    ))
}

/// Backward-recursion lambda-GAE. Episode boundaries (done flags) cut both
/// the bootstrap and the accumulation. Returns (advantages, returns).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    dones: &[bool],
    gamma: f64,
    gae_lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    assert_eq!(values.len(), t_len);
    assert_eq!(dones.len(), t_len);
    let mut advantages = vec![0.0; t_len];
    let mut last = 0.0;
    for t in (0..t_len).rev() {
        let next_value = if t + 1 == t_len { bootstrap_value } else { values[t + 1] };
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        last = delta + gamma * gae_lambda * nonterminal * last;
        advantages[t] = last;
    }
    let returns = advantages
        .iter()
        .zip(values.iter())
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

/// Advantage and return streams for every critic of a buffer.
pub fn advantage_streams(
    buffer: &TrajectoryBuffer,
    gamma: f64,
    gae_lambda: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rewards: Vec<f64> = buffer.steps.iter().map(|s| s.reward).collect();
    let dones: Vec<bool> = buffer.steps.iter().map(|s| s.done).collect();
    let n_critics = buffer.bootstrap_values.len();
    let mut advs = Vec::with_capacity(n_critics);
    let mut rets = Vec::with_capacity(n_critics);
    for c in 0..n_critics {
        let values: Vec<f64> = buffer.steps.iter().map(|s| s.values[c]).collect();
        let (a, r) = compute_gae(
            &rewards,
            &values,
            buffer.bootstrap_values[c],
            &dones,
            gamma,
            gae_lambda,
        );
        advs.push(a);
        rets.push(r);
    }
    (advs, rets)
}

/// Mean 0 / std 1 normalization. Degenerate batches (all advantages
/// equal) map to zeros instead of dividing by ~0.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let denom = if std > 1e-12 { std } else { 1.0 };
    adv.iter().map(|a| (a - mean) / denom).collect()
}

pub fn param_hash(params: &ParamVector) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in &params.data {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Minibatch-mean gradient and loss of the clipped surrogate (minus the
/// entropy bonus) for one agent. Exposed as a building block so the
/// limit-case equivalences (ratio-one identity, vanilla policy gradient)
/// can be checked against it directly.
#[allow(clippy::too_many_arguments)]
pub fn actor_batch_gradient(
    spec: &MlpSpec,
    params: &ParamVector,
    buffer: &TrajectoryBuffer,
    agent: usize,
    indices: &[usize],
    adv: &[f64],
    clip_eps: f64,
    ent_coef: f64,
) -> Result<(ParamVector, f64), NnError> {
    let mut grad = ParamVector::zeros(spec);
    let mut loss_sum = 0.0;
    for &t in indices {
        let sample = &buffer.steps[t];
        let (logits, cache) = forward_cached(spec, params, &sample.obs[agent])?;
        let cat = categorical_head(&logits);
        let a = sample.actions[agent];
        let logp_new = cat.log_probs[a];
        let ratio = (logp_new - sample.logp_old[agent]).exp();
        let adv_t = adv[t];
        let unclipped = ratio * adv_t;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv_t;
        let obj = unclipped.min(clipped);
        debug_assert!(
            obj <= (adv_t * (1.0 - clip_eps)).max(adv_t * (1.0 + clip_eps)) + 1e-12,
            "surrogate exceeded clip bound"
        );
        let h = entropy(&cat.probs);
        loss_sum += -obj - ent_coef * h;

        // gradient of -obj w.r.t. logp flows only through the unclipped
        // branch; the clipped branch is flat in the clamped region
        let g_logp = if unclipped <= clipped { ratio * adv_t } else { 0.0 };
        let mut dlogits = vec![0.0; cat.probs.len()];
        for (j, dl) in dlogits.iter_mut().enumerate() {
            let indicator = if j == a { 1.0 } else { 0.0 };
            let dobj = g_logp * (indicator - cat.probs[j]);
            let dent = -cat.probs[j] * (cat.log_probs[j] + h);
            *dl = -dobj - ent_coef * dent;
        }
        let g = backward(spec, params, &cache, &dlogits)?;
        for (acc, gi) in grad.data.iter_mut().zip(g.data.iter()) {
            *acc += gi;
        }
    }
    let m = indices.len().max(1) as f64;
    for gi in grad.data.iter_mut() {
        *gi /= m;
    }
    Ok((grad, loss_sum / m))
}

#[derive(Debug, Clone)]
pub struct ActorUpdateStats {
    /// Mean minibatch loss per agent.
    pub actor_loss: Vec<f64>,
    /// Freeze-audit violations observed (agents whose parameters moved
    /// outside their own update phase).
    pub freeze_violations: usize,
}

/// Updates the actors one at a time in the configured order; every other
/// agent's parameters are untouched during an agent's phase. With
/// `happo_strict`, each agent's post-update probability ratios are
/// compounded into the shared advantages before the next agent runs.
#[allow(clippy::too_many_arguments)]
pub fn sequential_update(
    agents: &mut Agents,
    buffer: &TrajectoryBuffer,
    advantages: &mut [Vec<f64>],
    config: &TrainConfig,
    algorithm: Algorithm,
    rng: &mut ChaCha8Rng,
    iteration: usize,
    freeze_audit: bool,
) -> Result<ActorUpdateStats, TrainError> {
    let n = agents.len();
    let t_len = buffer.steps.len();
    let mut order: Vec<usize> = (0..n).collect();
    if config.update_order == UpdateOrder::Shuffled {
        order.shuffle(rng);
    }

    let mut actor_loss = vec![0.0; n];
    let mut freeze_violations = 0usize;

    for &k in &order {
        let before: Option<Vec<[u8; 32]>> = if freeze_audit {
            Some(agents.params.iter().map(param_hash).collect())
        } else {
            None
        };

        let raw = &advantages[stream_for(k, algorithm)];
        let adv: Vec<f64> = if config.adv_norm {
            normalize_advantages(raw)
        } else {
            raw.clone()
        };

        let mut loss_acc = 0.0;
        let mut batches = 0usize;
        let mut indices: Vec<usize> = (0..t_len).collect();
        for _epoch in 0..config.ppo_epochs {
            indices.shuffle(rng);
            for chunk in indices.chunks(config.minibatch_size.max(1)) {
                let (grad, loss) = actor_batch_gradient(
                    &agents.specs[k],
                    &agents.params[k],
                    buffer,
                    k,
                    chunk,
                    &adv,
                    config.clip_eps,
                    config.ent_coef,
                )?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite { agent: k, iteration });
                }
                adam_step(&mut agents.adam[k], &mut agents.params[k], &grad)?;
                loss_acc += loss;
                batches += 1;
            }
        }
        actor_loss[k] = loss_acc / batches.max(1) as f64;

        if config.happo_strict && algorithm == Algorithm::Happo {
            let shared = &mut advantages[0];
            for (t, sample) in buffer.steps.iter().enumerate() {
                let logits = forward(&agents.specs[k], &agents.params[k], &sample.obs[k])?;
                let cat = categorical_head(&logits);
                let ratio = (cat.log_probs[sample.actions[k]] - sample.logp_old[k]).exp();
                shared[t] *= ratio;
            }
        }

        if let Some(before) = before {
            for (j, prev) in before.iter().enumerate() {
                if j != k && param_hash(&agents.params[j]) != *prev {
                    freeze_violations += 1;
                }
            }
        }
    }

    Ok(ActorUpdateStats {
        actor_loss,
        freeze_violations,
    })
}

#[derive(Debug, Clone)]
pub struct CriticUpdateStats {
    /// Full-batch MSE against the targets before and after the update,
    /// averaged across critics.
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Regresses each critic onto its bootstrapped returns.
pub fn critic_update(
    critics: &mut Critics,
    buffer: &TrajectoryBuffer,
    returns: &[Vec<f64>],
    config: &TrainConfig,
    algorithm: Algorithm,
    rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<CriticUpdateStats, TrainError> {
    let t_len = buffer.steps.len();
    let n_critics = critics.len();
    let mut loss_before = 0.0;
    let mut loss_after = 0.0;

    for c in 0..n_critics {
        let inputs: Vec<Vec<f64>> = buffer
            .steps
            .iter()
            .map(|s| critic_input(&s.obs, &s.global_state, algorithm, c))
            .collect();
        let targets = &returns[c];

        let mse = |params: &ParamVector, specs: &MlpSpec| -> Result<f64, TrainError> {
            let mut acc = 0.0;
            for (x, y) in inputs.iter().zip(targets.iter()) {
                let v = forward(specs, params, x)?[0];
                acc += (v - y) * (v - y);
            }
            Ok(acc / t_len.max(1) as f64)
        };
        loss_before += mse(&critics.params[c], &critics.specs[c])?;

        let mut indices: Vec<usize> = (0..t_len).collect();
        for _epoch in 0..config.ppo_epochs {
            indices.shuffle(rng);
            for chunk in indices.chunks(config.minibatch_size.max(1)) {
                let mut grad = ParamVector::zeros(&critics.specs[c]);
                let mut loss_sum = 0.0;
                for &t in chunk {
                    let (out, cache) =
                        forward_cached(&critics.specs[c], &critics.params[c], &inputs[t])?;
                    let err = out[0] - targets[t];
                    loss_sum += err * err;
                    let g = backward(&critics.specs[c], &critics.params[c], &cache, &[2.0 * err])?;
                    for (acc, gi) in grad.data.iter_mut().zip(g.data.iter()) {
                        *acc += gi;
                    }
                }
                let m = chunk.len() as f64;
                for gi in grad.data.iter_mut() {
                    *gi /= m;
                }
                if !(loss_sum / m).is_finite() {
                    return Err(TrainError::NonFinite { agent: usize::MAX, iteration });
                }
                adam_step(&mut critics.adam[c], &mut critics.params[c], &grad)?;
            }
        }
        loss_after += mse(&critics.params[c], &critics.specs[c])?;
    }

    Ok(CriticUpdateStats {
        loss_before: loss_before / n_critics.max(1) as f64,
        loss_after: loss_after / n_critics.max(1) as f64,
    })
}

/// One metrics row per training iteration.
#[derive(Debug, Clone)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub cum_reward: f64,
    pub restored_frac: f64,
    pub weighted_restored_kw: f64,
    pub xi_mean: f64,
    pub actor_losses: Vec<f64>,
    pub critic_loss: f64,
    pub entropies: Vec<f64>,
}

impl IterationMetrics {
    pub fn csv_header(n_agents: usize) -> String {
        let mut cols = vec![
            "iteration".to_string(),
            "steps".to_string(),
            "mean_reward".to_string(),
            "cum_reward".to_string(),
            "restored_frac".to_string(),
            "weighted_restored_kw".to_string(),
            "xi_mean".to_string(),
        ];
        for i in 0..n_agents {
            cols.push(format!("actor_loss_{i}"));
        }
        cols.push("critic_loss".to_string());
        for i in 0..n_agents {
            cols.push(format!("entropy_{i}"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.iteration.to_string(),
            self.steps.to_string(),
            self.mean_reward.to_string(),
            self.cum_reward.to_string(),
            self.restored_frac.to_string(),
            self.weighted_restored_kw.to_string(),
            self.xi_mean.to_string(),
        ];
        for l in &self.actor_losses {
            cols.push(l.to_string());
        }
        cols.push(self.critic_loss.to_string());
        for e in &self.entropies {
            cols.push(e.to_string());
        }
        cols.join(",")
    }
}

/// Artifact and instrumentation knobs for a run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Run artifacts (metrics.csv, timing.csv, checkpoints) land here when
    /// set; pure in-memory training otherwise.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint every this many iterations (0: final checkpoint only).
    pub checkpoint_every: usize,
    /// Hash-verify the sequential freeze invariant every update.
    pub freeze_audit: bool,
}

#[derive(Debug, Clone)]
pub struct SeedRunSummary {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub total_steps: usize,
    pub final_restored_frac: f64,
    pub final_weighted_kw: f64,
    pub freeze_violations: usize,
    pub history: Vec<IterationMetrics>,
    pub wallclock_s: f64,
}

/// Compact dimension signature used to catch checkpoint/feeder mismatches.
pub fn feeder_fingerprint(graph: &FeederGraph) -> String {
    let obs: Vec<String> = graph
        .microgrids
        .iter()
        .map(|mg| {
            (mg.bus_ids.len() + 3 * mg.switch_ids.len() + mg.der_ids.len() + mg.load_ids.len() + 2)
                .to_string()
        })
        .collect();
    let act: Vec<String> = graph
        .microgrids
        .iter()
        .map(|mg| (2 * mg.switch_ids.len() + 1).to_string())
        .collect();
    format!(
        "buses={};switches={};agents={};obs={};act={}",
        graph.buses.len(),
        graph.switches.len(),
        graph.microgrids.len(),
        obs.join("/"),
        act.join("/")
    )
}

/// Full learner state for one seed.
pub struct Learner {
    pub algorithm: Algorithm,
    pub agents: Agents,
    pub critics: Critics,
    pub rollout_rng: ChaCha8Rng,
    pub shuffle_rng: ChaCha8Rng,
}

impl Learner {
    pub fn init(env: &RestorationEnv, config: &TrainConfig, algorithm: Algorithm, seed: u64) -> Self {
        let mut init_rng = rngstream::seeded_stream(seed, rngstream::stream::INIT);
        let agents = Agents::init(
            &env.obs_dims(),
            &env.action_dims(),
            &config.hidden_dims,
            config.actor_lr,
            &mut init_rng,
        );
        let critics = Critics::init(
            &critic_input_dims(env, algorithm),
            &config.hidden_dims,
            config.critic_lr,
            &mut init_rng,
        );
        Learner {
            algorithm,
            agents,
            critics,
            rollout_rng: rngstream::seeded_stream(seed, rngstream::stream::ROLLOUT),
            shuffle_rng: rngstream::seeded_stream(seed, rngstream::stream::SHUFFLE),
        }
    }

    pub fn to_checkpoint(&self, graph: &FeederGraph, seed: u64, iteration: usize) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            algorithm: match self.algorithm {
                Algorithm::Happo => "happo".into(),
                Algorithm::IndependentPpo => "independent-ppo".into(),
            },
            feeder_fingerprint: feeder_fingerprint(graph),
            seed,
            iteration,
            actor_specs: self.agents.specs.clone(),
            actors: self.agents.params.clone(),
            actor_adam: self.agents.adam.clone(),
            critic_specs: self.critics.specs.clone(),
            critics: self.critics.params.clone(),
            critic_adam: self.critics.adam.clone(),
            rollout_rng: RngState::capture(&self.rollout_rng),
            shuffle_rng: RngState::capture(&self.shuffle_rng),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        let algorithm = if ck.algorithm == "independent-ppo" {
            Algorithm::IndependentPpo
        } else {
            Algorithm::Happo
        };
        Learner {
            algorithm,
            agents: Agents {
                specs: ck.actor_specs.clone(),
                params: ck.actors.clone(),
                adam: ck.actor_adam.clone(),
            },
            critics: Critics {
                specs: ck.critic_specs.clone(),
                params: ck.critics.clone(),
                adam: ck.critic_adam.clone(),
            },
            rollout_rng: ck.rollout_rng.restore(),
            shuffle_rng: ck.shuffle_rng.restore(),
        }
    }
}

/// Trains one seed to completion. The environment's scenario stream must
/// already be seeded by the caller (one env per seed).
pub fn train_single_seed(
    env: RestorationEnv,
    config: &TrainConfig,
    algorithm: Algorithm,
    seed: u64,
    options: &TrainOptions,
) -> Result<SeedRunSummary, TrainError> {
    let started = std::time::Instant::now();
    let graph = env.graph().clone();
    let n_agents = env.num_agents();
    let mut learner = Learner::init(&env, config, algorithm, seed);
    let mut ctx = RolloutContext::new(env)?;

    let io_err = |path: &Path, source: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut metrics_file = match &options.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            writeln!(f, "{}", IterationMetrics::csv_header(n_agents)).map_err(|e| io_err(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut timing_file = match &options.out_dir {
        Some(dir) => {
            let path = dir.join("timing.csv");
            let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            writeln!(f, "iteration,wallclock_s").map_err(|e| io_err(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let mut history: Vec<IterationMetrics> = Vec::with_capacity(config.iterations);
    let mut total_steps = 0usize;
    let mut freeze_violations = 0usize;
    let mut carry = (0.0, 0.0, 0.0, 0.0); // cum_reward, frac, weighted, xi of last seen episode stats

    for iteration in 1..=config.iterations {
        let (buffer, rstats) = collect_rollout(
            &mut ctx,
            &learner.agents,
            &learner.critics,
            algorithm,
            config.rollout_length,
            &mut learner.rollout_rng,
        )?;
        total_steps += buffer.steps.len();

        let (mut advs, rets) = advantage_streams(&buffer, config.gamma, config.gae_lambda);
        let astats = sequential_update(
            &mut learner.agents,
            &buffer,
            &mut advs,
            config,
            algorithm,
            &mut learner.shuffle_rng,
            iteration,
            options.freeze_audit,
        )?;
        freeze_violations += astats.freeze_violations;
        let cstats = critic_update(
            &mut learner.critics,
            &buffer,
            &rets,
            config,
            algorithm,
            &mut learner.shuffle_rng,
            iteration,
        )?;

        let episodes = ctx.drain_completed();
        if !episodes.is_empty() {
            let n = episodes.len() as f64;
            carry = (
                episodes.iter().map(|e| e.ret).sum::<f64>() / n,
                episodes.iter().map(|e| e.final_frac).sum::<f64>() / n,
                episodes.iter().map(|e| e.final_weighted_kw).sum::<f64>() / n,
                episodes.iter().map(|e| e.final_xi).sum::<f64>() / n,
            );
        }
        let row = IterationMetrics {
            iteration,
            steps: total_steps,
            mean_reward: rstats.mean_reward,
            cum_reward: carry.0,
            restored_frac: carry.1,
            weighted_restored_kw: carry.2,
            xi_mean: rstats.xi_mean,
            actor_losses: astats.actor_loss.clone(),
            critic_loss: cstats.loss_before,
            entropies: rstats.entropy.clone(),
        };
        if let Some((f, path)) = metrics_file.as_mut() {
            writeln!(f, "{}", row.csv_row()).map_err(|e| io_err(path, e))?;
        }
        if let Some((f, path)) = timing_file.as_mut() {
            writeln!(f, "{},{}", iteration, started.elapsed().as_secs_f64())
                .map_err(|e| io_err(path, e))?;
        }
        history.push(row);

        if options.checkpoint_every > 0 && iteration % options.checkpoint_every == 0 {
            if let Some(dir) = &options.out_dir {
                let path = dir.join(format!("checkpoint_{iteration}.json"));
                learner.to_checkpoint(&graph, seed, iteration).save(&path)?;
            }
        }
    }

    if let Some(dir) = &options.out_dir {
        let path = dir.join("checkpoint_final.json");
        learner
            .to_checkpoint(&graph, seed, config.iterations)
            .save(&path)?;
    }

    let last = history.last();
    Ok(SeedRunSummary {
        seed,
        algorithm,
        iterations: config.iterations,
        total_steps,
        final_restored_frac: last.map_or(0.0, |r| r.restored_frac),
        final_weighted_kw: last.map_or(0.0, |r| r.weighted_restored_kw),
        freeze_violations,
        history,
        wallclock_s: started.elapsed().as_secs_f64(),
    })
}

/// Trains every seed with its own environment from the factory; artifacts
/// land in `<out_dir>/seed_<s>/`.
pub fn train<F>(
    env_factory: F,
    config: &TrainConfig,
    algorithm: Algorithm,
    seeds: &[u64],
    options: &TrainOptions,
) -> Result<Vec<SeedRunSummary>, TrainError>
where
    F: Fn(u64) -> Result<RestorationEnv, EnvError>,
{
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let env = env_factory(seed)?;
        let seed_options = TrainOptions {
            out_dir: options
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("seed_{seed}"))),
            ..options.clone()
        };
        out.push(train_single_seed(env, config, algorithm, seed, &seed_options)?);
    }
    Ok(out)
}

/// Greedy or sampled evaluation of a policy bank on explicit scenarios.
#[derive(Debug, Clone)]
pub struct EvalEpisode {
    pub scenario_seed: u64,
    pub restored_frac: f64,
    pub weighted_kw: f64,
    pub final_xi: f64,
    pub mean_reward: f64,
    /// Joint action per step.
    pub actions: Vec<Vec<usize>>,
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Rolls one episode per scenario seed. `greedy` picks argmax actions;
/// otherwise actions are sampled with `rng`.
#[allow(clippy::needless_range_loop)]
pub fn eval_policy(
    env: &mut RestorationEnv,
    agents: &Agents,
    scenario_seeds: &[u64],
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EvalEpisode>, TrainError> {
    let mut out = Vec::with_capacity(scenario_seeds.len());
    for &sseed in scenario_seeds {
        let spec = crate::env::sample_scenario(env.graph(), sseed, env.scenario_config())?;
        let reset = env.reset_to(spec)?;
        let mut obs = reset.observations;
        let mut actions_trace = Vec::with_capacity(env.horizon());
        let mut reward_acc = 0.0;
        let mut last_info = reset.info;
        for _ in 0..env.horizon() {
            let mut joint = Vec::with_capacity(agents.len());
            for i in 0..agents.len() {
                let logits = forward(&agents.specs[i], &agents.params[i], &obs[i])?;
                let a = if greedy {
                    argmax(&logits)
                } else {
                    let cat = categorical_head(&logits);
                    crate::nn::sample_categorical(&cat.probs, rng)
                };
                joint.push(a);
            }
            let step = env.step(&joint)?;
            reward_acc += step.reward;
            actions_trace.push(joint);
            obs = step.observations;
            last_info = step.info;
        }
        out.push(EvalEpisode {
            scenario_seed: sseed,
            restored_frac: last_info.restored_frac,
            weighted_kw: last_info.weighted_kw,
            final_xi: last_info.report.xi,
            mean_reward: reward_acc / env.horizon().max(1) as f64,
            actions: actions_trace,
        });
    }
    Ok(out)
}
