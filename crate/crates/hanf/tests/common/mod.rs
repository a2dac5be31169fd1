//! Shared test support: the centralized replay of the search schedule
//! used as an oracle against the federated driver.

use hanf::bandit::{
    best_config, ho_round_budget, policy, sample_configs, update_rewards, HyperparamConfig,
    RewardEstimates,
};
use hanf::diffcore::Tensor;
use hanf::fedsim::{client_search_step, ClientShard, RoundContext, StageParams};
use hanf::rng::{self, Stream};
use hanf::supernet::{ArchParams, NetworkPlan};

pub fn bits(tensors: &[Tensor]) -> Vec<u64> {
    tensors.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

/// Replays the full search schedule centrally on one shard: probe phases
/// leave the model untouched, exploitation rounds apply the single
/// client's update directly (FedAvg of one client with v = 1).
pub fn centralized_search(
    plan: &NetworkPlan,
    shard: &ClientShard,
    space: &[HyperparamConfig],
    params: &StageParams,
    seed: u64,
) -> (Vec<Tensor>, ArchParams, Vec<f64>) {
    let mut weights = plan.init_params(rng::derive(seed, Stream::SearchInit, 0));
    let mut arch = ArchParams::zeros(plan.spec.nodes);
    let mut estimates = RewardEstimates::new(space.len(), params.bandit.alpha, params.bandit.beta);
    let mut round = 0usize;
    let mut phase_index = 0usize;

    'outer: loop {
        // exploration phase
        let pi = policy(&estimates);
        let kappa = ho_round_budget(&estimates).min(space.len());
        let mut rng = rng::rng(seed, Stream::SearchPhase, phase_index as u64);
        let queue = sample_configs(&pi, kappa, &mut rng).unwrap();
        let mut dense = vec![0.0; space.len()];
        let mut sampled = Vec::new();
        let mut any_ok = false;
        for &config in &queue {
            if round >= params.rounds {
                if any_ok && !sampled.is_empty() {
                    update_rewards(&mut estimates, &dense, &sampled);
                }
                break 'outer;
            }
            let ctx = RoundContext {
                batch_size: params.batch_size,
                clip_norm: params.clip_norm,
                round_seed: rng::derive(seed, Stream::SearchRound, round as u64),
                cached_loss_before: None,
            };
            let report =
                client_search_step(plan, weights.clone(), arch.clone(), &space[config], shard, &ctx);
            let reward = if report.ok { report.loss_before - report.loss_after } else { 0.0 };
            dense[config] = reward;
            sampled.push(config);
            any_ok |= report.ok;
            round += 1;
        }
        if any_ok {
            update_rewards(&mut estimates, &dense, &sampled);
        }
        phase_index += 1;

        // exploitation phase
        let best = best_config(&estimates);
        for _ in 0..params.exploit_rounds {
            if round >= params.rounds {
                break 'outer;
            }
            let ctx = RoundContext {
                batch_size: params.batch_size,
                clip_norm: params.clip_norm,
                round_seed: rng::derive(seed, Stream::SearchRound, round as u64),
                cached_loss_before: None,
            };
            let report =
                client_search_step(plan, weights.clone(), arch.clone(), &space[best], shard, &ctx);
            if report.ok {
                // FedAvg of one client with v = 1
                weights = report
                    .weights
                    .iter()
                    .map(|t| {
                        let mut z = t.zeros_like();
                        z.axpy_assign(1.0, t);
                        z
                    })
                    .collect();
                let a = report.arch.unwrap();
                let mut normal = a.normal.zeros_like();
                normal.axpy_assign(1.0, &a.normal);
                let mut reduce = a.reduce.zeros_like();
                reduce.axpy_assign(1.0, &a.reduce);
                arch = ArchParams { normal, reduce };
            }
            round += 1;
        }
        phase_index += 1;
    }
    (weights, arch, estimates.rewards().to_vec())
}
