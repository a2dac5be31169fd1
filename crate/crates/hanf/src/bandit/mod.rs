//! The n-armed-bandit hyperparameter engine.
//!
//! Maintains the discrete space `H`, per-configuration reward estimates,
//! the softmax sampling policy, and the entropy-scaled budget that decides
//! how many probe rounds each exploration phase gets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HanfError, Result};
use crate::rng::{self, Stream};

/// Which stage a hyperparameter space belongs to. The search stage tunes
/// both model and architecture optimizers; the evaluation stage tunes the
/// model optimizer plus path dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Search,
    Eval,
}

/// One point in the discrete hyperparameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperparamConfig {
    pub model_lr: f64,
    pub model_weight_decay: f64,
    pub momentum: f64,
    /// Search stage only.
    pub arch_lr: Option<f64>,
    /// Search stage only.
    pub arch_weight_decay: Option<f64>,
    /// Evaluation stage only.
    pub path_dropout: Option<f64>,
}

impl HyperparamConfig {
    pub fn arch_lr_or_zero(&self) -> f64 {
        self.arch_lr.unwrap_or(0.0)
    }

    pub fn arch_weight_decay_or_zero(&self) -> f64 {
        self.arch_weight_decay.unwrap_or(0.0)
    }

    pub fn path_dropout_or_zero(&self) -> f64 {
        self.path_dropout.unwrap_or(0.0)
    }
}

/// Samples `count` i.i.d. configurations: learning rates and weight decays
/// are log-uniform (`10^u`), momentum is uniform on [0, 1), and the
/// evaluation stage draws path dropout from U(0, 0.3) instead of the
/// architecture-optimizer fields.
pub fn init_space(count: usize, stage: Stage, seed: u64) -> Result<Vec<HyperparamConfig>> {
    if count == 0 {
        return Err(HanfError::InvalidArgument("hyperparameter space must be non-empty".into()));
    }
    let stream = match stage {
        Stage::Search => Stream::SearchSpace,
        Stage::Eval => Stream::EvalSpace,
    };
    let mut rng = rng::rng(seed, stream, 0);
    let log_uniform = |lo: f64, hi: f64, r: &mut ChaCha8Rng| 10f64.powf(r.gen_range(lo..hi));
    Ok((0..count)
        .map(|_| match stage {
            Stage::Search => HyperparamConfig {
                model_lr: log_uniform(-4.0, 0.0, &mut rng),
                arch_lr: Some(log_uniform(-5.0, -1.0, &mut rng)),
                model_weight_decay: log_uniform(-5.0, -1.0, &mut rng),
                arch_weight_decay: Some(log_uniform(-5.0, -1.0, &mut rng)),
                momentum: rng.gen_range(0.0..1.0),
                path_dropout: None,
            },
            Stage::Eval => HyperparamConfig {
                model_lr: log_uniform(-4.0, 0.0, &mut rng),
                arch_lr: None,
                model_weight_decay: log_uniform(-5.0, -1.0, &mut rng),
                arch_weight_decay: None,
                momentum: rng.gen_range(0.0..1.0),
                path_dropout: Some(rng.gen_range(0.0..0.3)),
            },
        })
        .collect())
}

/// How reward estimates of configurations that were not sampled in a phase
/// evolve. The decay rule shrinks them toward zero; the literal rule grows
/// them by the same factor instead and is kept for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnsampledRule {
    #[default]
    Decay,
    Literal,
}

/// Server-side reward state for one stage.
#[derive(Debug, Clone)]
pub struct RewardEstimates {
    rewards: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub unsampled_rule: UnsampledRule,
    /// Optional cap on the per-phase exploration budget.
    pub kappa_max: Option<usize>,
}

impl RewardEstimates {
    pub fn new(space_size: usize, alpha: f64, beta: f64) -> Self {
        RewardEstimates {
            rewards: vec![0.0; space_size],
            alpha,
            beta,
            unsampled_rule: UnsampledRule::Decay,
            kappa_max: None,
        }
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// The reward signal for one probe round: the weighted sum of per-client
/// validation-loss improvements.
pub fn compute_reward(losses_before: &[f64], losses_after: &[f64], weights: &[f64]) -> Result<f64> {
    if losses_before.len() != losses_after.len() || losses_before.len() != weights.len() {
        return Err(HanfError::InvalidArgument(format!(
            "compute_reward: {} before, {} after, {} weights",
            losses_before.len(),
            losses_after.len(),
            weights.len()
        )));
    }
    Ok(losses_before
        .iter()
        .zip(losses_after)
        .zip(weights)
        .map(|((b, a), v)| v * (b - a))
        .sum())
}

/// Folds one exploration phase's rewards into the estimates. Sampled
/// entries move toward their observed reward by `alpha`; unsampled entries
/// follow [`UnsampledRule`].
pub fn update_rewards(estimates: &mut RewardEstimates, round_rewards: &[f64], sampled: &[usize]) {
    let alpha = estimates.alpha;
    let rule = estimates.unsampled_rule;
    for (i, r) in estimates.rewards.iter_mut().enumerate() {
        if sampled.contains(&i) {
            *r += alpha * (round_rewards[i] - *r);
        } else {
            match rule {
                UnsampledRule::Decay => *r *= 1.0 - alpha,
                UnsampledRule::Literal => *r *= 1.0 + alpha,
            }
        }
    }
}

/// Sampling policy: softmax over the reward estimates.
pub fn policy(estimates: &RewardEstimates) -> Vec<f64> {
    softmax(&estimates.rewards)
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Shannon entropy (natural log) of a probability vector.
pub fn entropy(pi: &[f64]) -> f64 {
    -pi.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Number of communication rounds the next exploration phase gets:
/// `max(1, rnd(beta * entropy(pi)))`, optionally capped.
pub fn ho_round_budget(estimates: &RewardEstimates) -> usize {
    let pi = policy(estimates);
    let kappa = (estimates.beta * entropy(&pi)).round().max(1.0) as usize;
    match estimates.kappa_max {
        Some(cap) => kappa.min(cap.max(1)),
        None => kappa,
    }
}

/// Draws `count` distinct indices without replacement, each draw
/// proportional to the renormalized remaining policy mass.
pub fn sample_configs(pi: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if count > pi.len() {
        return Err(HanfError::InvalidArgument(format!(
            "cannot sample {count} configs from a space of {}",
            pi.len()
        )));
    }
    let mut remaining: Vec<(usize, f64)> = pi.iter().copied().enumerate().collect();
    let mut drawn = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|(_, p)| p).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &(_, p)) in remaining.iter().enumerate() {
            if u < p {
                pick = pos;
                break;
            }
            u -= p;
        }
        drawn.push(remaining.remove(pick).0);
    }
    Ok(drawn)
}

/// Index of the best-estimated configuration; ties go to the lowest index.
pub fn best_config(estimates: &RewardEstimates) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &r) in estimates.rewards.iter().enumerate() {
        if r > best_val {
            best_val = r;
            best = i;
        }
    }
    best
}

/// One reward-trace record per exploration round.
#[derive(Debug, Clone, Serialize)]
pub struct RewardRecord {
    pub phase: usize,
    pub round: usize,
    pub config_index: usize,
    pub config: HyperparamConfig,
    pub reward: f64,
    pub kappa: usize,
    pub entropy: f64,
}

/// Comma-separated export of the reward trace, one row per HO round.
pub fn reward_trace_csv(records: &[RewardRecord]) -> String {
    let mut out = String::from(
        "phase,round,config_index,model_lr,arch_lr,model_weight_decay,arch_weight_decay,momentum,path_dropout,reward,kappa,entropy\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.phase,
            r.round,
            r.config_index,
            r.config.model_lr,
            opt(r.config.arch_lr),
            r.config.model_weight_decay,
            opt(r.config.arch_weight_decay),
            r.config.momentum,
            opt(r.config.path_dropout),
            r.reward,
            r.kappa,
            r.entropy,
        ));
    }
    out
}
