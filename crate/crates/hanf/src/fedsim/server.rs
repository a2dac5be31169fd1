//! The alternating HO/exploitation server loop for both stages.
//!
//! Exploration (HO) phases probe one sampled configuration per round from
//! fixed global parameters, turning per-client validation-loss deltas into
//! rewards; the estimates update once per phase. Exploitation phases train
//! under the best configuration so far and commit the FedAvg aggregate
//! after every round. A phase never extends past the stage budget.

use rayon::prelude::*;

use crate::bandit::{
    self, best_config, compute_reward, ho_round_budget, policy, sample_configs, update_rewards,
    HyperparamConfig, RewardEstimates, RewardRecord, UnsampledRule,
};
use crate::diffcore::Tensor;
use crate::error::{HanfError, Result};
use crate::rng::{self, Stream};
use crate::supernet::{discretize, ArchParams, Genotype, NetworkPlan};

use super::client::{client_eval_step, client_search_step, RoundContext, RoundReport};
use super::partition::ClientShard;
use super::trace::{ClientRecord, PhaseKind, ServerRecord};

#[derive(Debug, Clone, Copy)]
pub struct BanditParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa_max: Option<usize>,
    pub unsampled_rule: UnsampledRule,
}

impl Default for BanditParams {
    fn default() -> Self {
        BanditParams { alpha: 0.1, beta: 4.0, kappa_max: None, unsampled_rule: UnsampledRule::Decay }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StageParams {
    /// Total communication-round budget for the stage.
    pub rounds: usize,
    /// Rounds trained under the best configuration per exploitation phase.
    pub exploit_rounds: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Top-k retained operations per node when discretizing (search stage).
    pub genotype_k: usize,
    /// Fraction of clients participating per round (1.0 = all).
    pub participation: f64,
    pub bandit: BanditParams,
}

impl Default for StageParams {
    fn default() -> Self {
        StageParams {
            rounds: 120,
            exploit_rounds: 10,
            batch_size: 64,
            clip_norm: 5.0,
            genotype_k: 2,
            participation: 1.0,
            bandit: BanditParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundSummary {
    pub round: usize,
    pub phase: usize,
    pub kind: PhaseKind,
    pub config_index: usize,
    /// Present on HO rounds.
    pub reward: Option<f64>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub accuracy: f64,
    pub kappa: usize,
    pub entropy: f64,
    pub any_ok: bool,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub genotype: Genotype,
    pub accuracy: f64,
    pub round: usize,
}

enum Phase {
    Ho {
        kappa: usize,
        entropy: f64,
        queue: Vec<usize>,
        cursor: usize,
        collected: Vec<(usize, f64)>,
        any_ok: bool,
    },
    Exploit {
        config: usize,
        remaining: usize,
        kappa: usize,
        entropy: f64,
    },
    Finished,
}

/// Traces shared by both stage drivers.
#[derive(Debug, Default, Clone)]
pub struct StageTraces {
    pub clients: Vec<ClientRecord>,
    pub servers: Vec<ServerRecord>,
    pub rewards: Vec<RewardRecord>,
    pub summaries: Vec<RoundSummary>,
}

/// Weighted mean over the ok reports with weights renormalized; returns
/// (loss_before, loss_after, accuracy, any_ok).
fn weighted_metrics(reports: &[RoundReport], weights: &[f64]) -> (f64, f64, f64, bool) {
    let mut total_w = 0.0;
    let (mut lb, mut la, mut acc) = (0.0, 0.0, 0.0);
    for (r, &w) in reports.iter().zip(weights) {
        if r.ok {
            total_w += w;
            lb += w * r.loss_before;
            la += w * r.loss_after;
            acc += w * r.accuracy;
        }
    }
    if total_w == 0.0 {
        (f64::NAN, f64::NAN, f64::NAN, false)
    } else {
        (lb / total_w, la / total_w, acc / total_w, true)
    }
}

/// Reward per the weighted loss-delta rule; failed clients contribute 0.
fn round_reward(reports: &[RoundReport], weights: &[f64]) -> f64 {
    let before: Vec<f64> = reports.iter().map(|r| if r.ok { r.loss_before } else { 0.0 }).collect();
    let after: Vec<f64> = reports.iter().map(|r| if r.ok { r.loss_after } else { 0.0 }).collect();
    compute_reward(&before, &after, weights).expect("parallel lists")
}

/// Elementwise weighted mean of parameter sets, summed in ascending
/// client order. Weights must sum to 1.
pub fn fedavg(updates: &[Vec<Tensor>], weights: &[f64]) -> Result<Vec<Tensor>> {
    if updates.is_empty() || updates.len() != weights.len() {
        return Err(HanfError::InvalidArgument(format!(
            "fedavg: {} updates, {} weights",
            updates.len(),
            weights.len()
        )));
    }
    let first = &updates[0];
    let mut out: Vec<Tensor> = first.iter().map(Tensor::zeros_like).collect();
    for (update, &w) in updates.iter().zip(weights) {
        if update.len() != first.len() {
            return Err(HanfError::shape(
                "fedavg",
                format!("parameter sets of {} vs {} tensors", update.len(), first.len()),
            ));
        }
        for (o, u) in out.iter_mut().zip(update) {
            if !o.same_shape(u) {
                return Err(HanfError::shape(
                    "fedavg",
                    format!("{:?} vs {:?}", o.shape(), u.shape()),
                ));
            }
            o.axpy_assign(w, u);
        }
    }
    Ok(out)
}

pub fn fedavg_arch(archs: &[ArchParams], weights: &[f64]) -> Result<ArchParams> {
    let sets: Vec<Vec<Tensor>> = archs.iter().map(|a| vec![a.normal.clone(), a.reduce.clone()]).collect();
    let mut avg = fedavg(&sets, weights)?;
    let reduce = avg.pop().expect("two tensors");
    let normal = avg.pop().expect("two tensors");
    Ok(ArchParams { normal, reduce })
}

fn renormalized(weights: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let total: f64 = weights.iter().enumerate().filter(|&(i, _)| keep(i)).map(|(_, &w)| w).sum();
    weights
        .iter()
        .enumerate()
        .map(|(i, &w)| if keep(i) { w / total } else { 0.0 })
        .collect()
}

/// Which stage a driver runs; decides seed streams and the client step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageKind {
    Search,
    Eval,
}

struct Engine<'a> {
    plan: &'a NetworkPlan,
    shards: &'a [ClientShard],
    space: &'a [HyperparamConfig],
    params: StageParams,
    seed: u64,
    stage: StageKind,
    estimates: RewardEstimates,
    round: usize,
    phase_index: usize,
    phase: Phase,
    traces: StageTraces,
    /// Per-client validation loss at the current global parameters, valid
    /// until the next commit. Probe rounds reuse it instead of re-measuring.
    loss_before_cache: std::collections::BTreeMap<usize, f64>,
}

impl<'a> Engine<'a> {
    fn new(
        plan: &'a NetworkPlan,
        shards: &'a [ClientShard],
        space: &'a [HyperparamConfig],
        params: StageParams,
        seed: u64,
        stage: StageKind,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(HanfError::InvalidArgument("no client shards".into()));
        }
        if space.is_empty() {
            return Err(HanfError::InvalidArgument("empty hyperparameter space".into()));
        }
        if params.exploit_rounds == 0 {
            return Err(HanfError::InvalidArgument("exploit_rounds must be at least 1".into()));
        }
        let mut estimates = RewardEstimates::new(space.len(), params.bandit.alpha, params.bandit.beta);
        estimates.kappa_max = params.bandit.kappa_max;
        estimates.unsampled_rule = params.bandit.unsampled_rule;
        let mut engine = Engine {
            plan,
            shards,
            space,
            params,
            seed,
            stage,
            estimates,
            round: 0,
            phase_index: 0,
            phase: Phase::Finished,
            traces: StageTraces::default(),
            loss_before_cache: std::collections::BTreeMap::new(),
        };
        engine.begin_ho_phase()?;
        Ok(engine)
    }

    fn phase_stream(&self) -> Stream {
        match self.stage {
            StageKind::Search => Stream::SearchPhase,
            StageKind::Eval => Stream::EvalPhase,
        }
    }

    fn round_stream(&self) -> Stream {
        match self.stage {
            StageKind::Search => Stream::SearchRound,
            StageKind::Eval => Stream::EvalRound,
        }
    }

    fn begin_ho_phase(&mut self) -> Result<()> {
        let pi = policy(&self.estimates);
        let entropy = bandit::entropy(&pi);
        let kappa = ho_round_budget(&self.estimates).min(self.space.len());
        let mut rng = rng::rng(self.seed, self.phase_stream(), self.phase_index as u64);
        let queue = sample_configs(&pi, kappa, &mut rng)?;
        self.phase = Phase::Ho { kappa, entropy, queue, cursor: 0, collected: Vec::new(), any_ok: false };
        Ok(())
    }

    fn begin_exploit_phase(&mut self) {
        let pi = policy(&self.estimates);
        let entropy = bandit::entropy(&pi);
        let kappa = ho_round_budget(&self.estimates).min(self.space.len());
        self.phase = Phase::Exploit {
            config: best_config(&self.estimates),
            remaining: self.params.exploit_rounds,
            kappa,
            entropy,
        };
    }

    /// Folds the collected probe rewards into the estimates, unless every
    /// probe round in the phase failed entirely.
    fn close_ho_phase(&mut self) {
        if let Phase::Ho { collected, any_ok, .. } = &self.phase {
            if *any_ok && !collected.is_empty() {
                let mut dense = vec![0.0; self.estimates.len()];
                let mut sampled = Vec::with_capacity(collected.len());
                for &(config, reward) in collected {
                    dense[config] = reward;
                    sampled.push(config);
                }
                update_rewards(&mut self.estimates, &dense, &sampled);
            }
        }
    }

    /// Client indices participating this round, ascending.
    fn participants(&self) -> Vec<usize> {
        let c = self.shards.len();
        if self.params.participation >= 1.0 {
            return (0..c).collect();
        }
        let count = ((self.params.participation * c as f64).round() as usize).clamp(1, c);
        let mut rng = rng::rng(self.seed, Stream::Participation, self.round as u64);
        let uniform = vec![1.0; c];
        let mut chosen = sample_configs(&uniform, count, &mut rng).expect("count <= clients");
        chosen.sort_unstable();
        chosen
    }

    fn round_ctx(&self, client: usize) -> RoundContext {
        RoundContext {
            batch_size: self.params.batch_size,
            clip_norm: self.params.clip_norm,
            round_seed: rng::derive(self.seed, self.round_stream(), self.round as u64),
            cached_loss_before: self.loss_before_cache.get(&client).copied(),
        }
    }

    /// Remembers probe-round starting losses; they stay valid until the
    /// next commit replaces the global parameters.
    fn cache_probe_losses(&mut self, participants: &[usize], reports: &[RoundReport]) {
        for (&i, r) in participants.iter().zip(reports) {
            if r.loss_before.is_finite() {
                self.loss_before_cache.insert(i, r.loss_before);
            }
        }
    }

    /// Runs one round's clients and emits trace records plus the summary
    /// skeleton; the caller decides what to do with the reports.
    #[allow(clippy::too_many_arguments)]
    fn record_round(
        &mut self,
        kind: PhaseKind,
        config_index: usize,
        kappa: usize,
        entropy: f64,
        reports: &[RoundReport],
        weights: &[f64],
        reward: Option<f64>,
    ) -> RoundSummary {
        let renorm = renormalized(weights, |i| reports[i].ok);
        let (lb, la, acc, any_ok) = weighted_metrics(reports, &renorm);
        for r in reports {
            self.traces.clients.push(ClientRecord {
                round: self.round,
                phase: self.phase_index,
                kind,
                client: r.client_id,
                config_index,
                loss_before: r.loss_before,
                loss_after: r.loss_after,
                accuracy: r.accuracy,
                ok: r.ok,
            });
        }
        self.traces.servers.push(ServerRecord {
            round: self.round,
            phase: self.phase_index,
            kind,
            config_index,
            loss_before: lb,
            loss_after: la,
            accuracy: acc,
            kappa,
            entropy,
        });
        let summary = RoundSummary {
            round: self.round,
            phase: self.phase_index,
            kind,
            config_index,
            reward,
            loss_before: lb,
            loss_after: la,
            accuracy: acc,
            kappa,
            entropy,
            any_ok,
        };
        self.traces.summaries.push(summary.clone());
        summary
    }
}

/// Search-stage driver: supernet weights plus architecture, genotype
/// snapshots on accuracy improvement. Step with [`SearchDriver::next_round`]
/// or drain with [`SearchDriver::run`].
pub struct SearchDriver<'a> {
    engine: Engine<'a>,
    pub weights: Vec<Tensor>,
    pub arch: ArchParams,
    pub best: Option<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub best: Option<Snapshot>,
    pub weights: Vec<Tensor>,
    pub arch: ArchParams,
    pub rewards: Vec<f64>,
    pub traces: StageTraces,
    pub rounds_executed: usize,
}

impl<'a> SearchDriver<'a> {
    pub fn new(
        plan: &'a NetworkPlan,
        shards: &'a [ClientShard],
        space: &'a [HyperparamConfig],
        params: StageParams,
        seed: u64,
    ) -> Result<Self> {
        let weights = plan.init_params(rng::derive(seed, Stream::SearchInit, 0));
        let arch = ArchParams::zeros(plan.spec.nodes);
        let engine = Engine::new(plan, shards, space, params, seed, StageKind::Search)?;
        Ok(SearchDriver { engine, weights, arch, best: None })
    }

    pub fn estimates(&self) -> &RewardEstimates {
        &self.engine.estimates
    }

    pub fn traces(&self) -> &StageTraces {
        &self.engine.traces
    }

    pub fn rounds_executed(&self) -> usize {
        self.engine.round
    }

    fn run_clients(&self, config: &HyperparamConfig, participants: &[usize]) -> Vec<RoundReport> {
        participants
            .par_iter()
            .map(|&i| {
                client_search_step(
                    self.engine.plan,
                    self.weights.clone(),
                    self.arch.clone(),
                    config,
                    &self.engine.shards[i],
                    &self.engine.round_ctx(i),
                )
            })
            .collect()
    }

    /// Updates the best-genotype snapshot from this round's accuracy.
    fn maybe_snapshot(&mut self, summary: &RoundSummary) -> Result<()> {
        if !summary.any_ok || !summary.accuracy.is_finite() {
            return Ok(());
        }
        let improved = match &self.best {
            Some(s) => summary.accuracy > s.accuracy,
            None => true,
        };
        if improved {
            let genotype = discretize(&self.arch, self.engine.plan.spec.nodes, self.engine.params.genotype_k)?;
            self.best = Some(Snapshot { genotype, accuracy: summary.accuracy, round: summary.round });
        }
        Ok(())
    }

    /// Executes one communication round; `None` once the budget is spent.
    pub fn next_round(&mut self) -> Result<Option<RoundSummary>> {
        if self.engine.round >= self.engine.params.rounds {
            // budget can truncate mid-phase; fold partial probes once
            if matches!(self.engine.phase, Phase::Ho { .. }) {
                self.engine.close_ho_phase();
                self.engine.phase = Phase::Finished;
            }
            return Ok(None);
        }

        let participants = self.engine.participants();
        let part_weights = renormalized(
            &self.engine.shards.iter().map(|s| s.weight).collect::<Vec<_>>(),
            |i| participants.contains(&i),
        );
        let weights: Vec<f64> = participants.iter().map(|&i| part_weights[i]).collect();

        let summary = match &mut self.engine.phase {
            Phase::Ho { kappa, entropy, queue, cursor, .. } => {
                let (kappa, entropy) = (*kappa, *entropy);
                let config_index = queue[*cursor];
                *cursor += 1;
                let reports = self.run_clients(&self.engine.space[config_index].clone(), &participants);
                self.engine.cache_probe_losses(&participants, &reports);
                let reward = round_reward(&reports, &weights);
                let round_ok = reports.iter().any(|r| r.ok);
                if let Phase::Ho { collected, any_ok, .. } = &mut self.engine.phase {
                    collected.push((config_index, reward));
                    *any_ok |= round_ok;
                }
                // exploration probes leave the global model untouched
                let summary = self.engine.record_round(
                    PhaseKind::Ho,
                    config_index,
                    kappa,
                    entropy,
                    &reports,
                    &weights,
                    Some(reward),
                );
                self.engine.traces.rewards.push(RewardRecord {
                    phase: summary.phase,
                    round: summary.round,
                    config_index,
                    config: self.engine.space[config_index],
                    reward,
                    kappa,
                    entropy,
                });
                let exhausted = matches!(&self.engine.phase, Phase::Ho { cursor, queue, .. } if *cursor >= queue.len());
                if exhausted {
                    self.engine.close_ho_phase();
                    self.engine.phase_index += 1;
                    self.engine.begin_exploit_phase();
                }
                summary
            }
            Phase::Exploit { config, remaining, kappa, entropy } => {
                let (config_index, kappa, entropy) = (*config, *kappa, *entropy);
                *remaining -= 1;
                let reports = self.run_clients(&self.engine.space[config_index].clone(), &participants);
                let ok_weights = renormalized(&weights, |i| reports[i].ok);
                if reports.iter().any(|r| r.ok) {
                    let ok_reports: Vec<&RoundReport> = reports.iter().filter(|r| r.ok).collect();
                    let ok_w: Vec<f64> = reports
                        .iter()
                        .enumerate()
                        .filter(|(_, r)| r.ok)
                        .map(|(i, _)| ok_weights[i])
                        .collect();
                    let sets: Vec<Vec<Tensor>> = ok_reports.iter().map(|r| r.weights.clone()).collect();
                    self.weights = fedavg(&sets, &ok_w)?;
                    let archs: Vec<ArchParams> =
                        ok_reports.iter().map(|r| r.arch.clone().expect("search step returns arch")).collect();
                    self.arch = fedavg_arch(&archs, &ok_w)?;
                    self.engine.loss_before_cache.clear();
                }
                let summary = self.engine.record_round(
                    PhaseKind::Exploit,
                    config_index,
                    kappa,
                    entropy,
                    &reports,
                    &weights,
                    None,
                );
                if matches!(&self.engine.phase, Phase::Exploit { remaining: 0, .. }) {
                    self.engine.phase_index += 1;
                    self.engine.begin_ho_phase()?;
                }
                summary
            }
            Phase::Finished => return Ok(None),
        };

        self.maybe_snapshot(&summary)?;
        self.engine.round += 1;
        Ok(Some(summary))
    }

    /// Drains the budget and returns the stage outcome. The genotype is the
    /// best snapshot, falling back to the final architecture when no round
    /// produced a finite accuracy.
    pub fn run(mut self) -> Result<SearchOutcome> {
        while self.next_round()?.is_some() {}
        let genotype = match &self.best {
            Some(s) => s.genotype.clone(),
            None => discretize(&self.arch, self.engine.plan.spec.nodes, self.engine.params.genotype_k)?,
        };
        Ok(SearchOutcome {
            genotype,
            best: self.best,
            weights: self.weights,
            arch: self.arch,
            rewards: self.engine.estimates.rewards().to_vec(),
            traces: self.engine.traces,
            rounds_executed: self.engine.round,
        })
    }
}

/// Evaluation-stage driver: trains the discrete network with HO probes.
pub struct EvalDriver<'a> {
    engine: Engine<'a>,
    pub weights: Vec<Tensor>,
    pub best_accuracy: Option<(f64, usize)>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub weights: Vec<Tensor>,
    pub best_accuracy: Option<(f64, usize)>,
    pub rewards: Vec<f64>,
    pub traces: StageTraces,
    pub rounds_executed: usize,
}

impl<'a> EvalDriver<'a> {
    pub fn new(
        plan: &'a NetworkPlan,
        shards: &'a [ClientShard],
        space: &'a [HyperparamConfig],
        params: StageParams,
        seed: u64,
    ) -> Result<Self> {
        let weights = plan.init_params(rng::derive(seed, Stream::EvalInit, 0));
        let engine = Engine::new(plan, shards, space, params, seed, StageKind::Eval)?;
        Ok(EvalDriver { engine, weights, best_accuracy: None })
    }

    pub fn estimates(&self) -> &RewardEstimates {
        &self.engine.estimates
    }

    pub fn traces(&self) -> &StageTraces {
        &self.engine.traces
    }

    pub fn rounds_executed(&self) -> usize {
        self.engine.round
    }

    fn run_clients(&self, config: &HyperparamConfig, participants: &[usize]) -> Vec<RoundReport> {
        participants
            .par_iter()
            .map(|&i| {
                client_eval_step(
                    self.engine.plan,
                    self.weights.clone(),
                    config,
                    &self.engine.shards[i],
                    &self.engine.round_ctx(i),
                )
            })
            .collect()
    }

    pub fn next_round(&mut self) -> Result<Option<RoundSummary>> {
        if self.engine.round >= self.engine.params.rounds {
            if matches!(self.engine.phase, Phase::Ho { .. }) {
                self.engine.close_ho_phase();
                self.engine.phase = Phase::Finished;
            }
            return Ok(None);
        }

        let participants = self.engine.participants();
        let part_weights = renormalized(
            &self.engine.shards.iter().map(|s| s.weight).collect::<Vec<_>>(),
            |i| participants.contains(&i),
        );
        let weights: Vec<f64> = participants.iter().map(|&i| part_weights[i]).collect();

        let summary = match &mut self.engine.phase {
            Phase::Ho { kappa, entropy, queue, cursor, .. } => {
                let (kappa, entropy) = (*kappa, *entropy);
                let config_index = queue[*cursor];
                *cursor += 1;
                let reports = self.run_clients(&self.engine.space[config_index].clone(), &participants);
                self.engine.cache_probe_losses(&participants, &reports);
                let reward = round_reward(&reports, &weights);
                let round_ok = reports.iter().any(|r| r.ok);
                if let Phase::Ho { collected, any_ok, .. } = &mut self.engine.phase {
                    collected.push((config_index, reward));
                    *any_ok |= round_ok;
                }
                let summary = self.engine.record_round(
                    PhaseKind::Ho,
                    config_index,
                    kappa,
                    entropy,
                    &reports,
                    &weights,
                    Some(reward),
                );
                self.engine.traces.rewards.push(RewardRecord {
                    phase: summary.phase,
                    round: summary.round,
                    config_index,
                    config: self.engine.space[config_index],
                    reward,
                    kappa,
                    entropy,
                });
                let exhausted = matches!(&self.engine.phase, Phase::Ho { cursor, queue, .. } if *cursor >= queue.len());
                if exhausted {
                    self.engine.close_ho_phase();
                    self.engine.phase_index += 1;
                    self.engine.begin_exploit_phase();
                }
                summary
            }
            Phase::Exploit { config, remaining, kappa, entropy } => {
                let (config_index, kappa, entropy) = (*config, *kappa, *entropy);
                *remaining -= 1;
                let reports = self.run_clients(&self.engine.space[config_index].clone(), &participants);
                let ok_weights = renormalized(&weights, |i| reports[i].ok);
                if reports.iter().any(|r| r.ok) {
                    let sets: Vec<Vec<Tensor>> = reports
                        .iter()
                        .filter(|r| r.ok)
                        .map(|r| r.weights.clone())
                        .collect();
                    let ok_w: Vec<f64> = reports
                        .iter()
                        .enumerate()
                        .filter(|(_, r)| r.ok)
                        .map(|(i, _)| ok_weights[i])
                        .collect();
                    self.weights = fedavg(&sets, &ok_w)?;
                    self.engine.loss_before_cache.clear();
                }
                let summary = self.engine.record_round(
                    PhaseKind::Exploit,
                    config_index,
                    kappa,
                    entropy,
                    &reports,
                    &weights,
                    None,
                );
                if matches!(&self.engine.phase, Phase::Exploit { remaining: 0, .. }) {
                    self.engine.phase_index += 1;
                    self.engine.begin_ho_phase()?;
                }
                summary
            }
            Phase::Finished => return Ok(None),
        };

        if summary.any_ok && summary.accuracy.is_finite() {
            let improved = match self.best_accuracy {
                Some((best, _)) => summary.accuracy > best,
                None => true,
            };
            if improved {
                self.best_accuracy = Some((summary.accuracy, summary.round));
            }
        }
        self.engine.round += 1;
        Ok(Some(summary))
    }

    pub fn run(mut self) -> Result<EvalOutcome> {
        while self.next_round()?.is_some() {}
        Ok(EvalOutcome {
            weights: self.weights,
            best_accuracy: self.best_accuracy,
            rewards: self.engine.estimates.rewards().to_vec(),
            traces: self.engine.traces,
            rounds_executed: self.engine.round,
        })
    }
}
