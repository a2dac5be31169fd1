//! The n-armed bandit engine on a synthetic stationary environment: one
//! arm pays 1.0, the rest 0.1, plus Gaussian-ish noise. Prints the
//! entropy-scheduled exploration budgets shrinking as the estimates
//! concentrate.
//!
//! ```bash
//! cargo run --release -p hanf --example bandit_tuning
//! ```

use hanf::bandit::{
    best_config, entropy, ho_round_budget, policy, sample_configs, update_rewards, RewardEstimates,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let arms = 20;
    let good_arm = 13;
    let mut estimates = RewardEstimates::new(arms, 0.1, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for phase in 0..50 {
        let pi = policy(&estimates);
        let kappa = ho_round_budget(&estimates).min(arms);
        let drawn = sample_configs(&pi, kappa, &mut rng).unwrap();
        let mut dense = vec![0.0; arms];
        for &arm in &drawn {
            let base = if arm == good_arm { 1.0 } else { 0.1 };
            dense[arm] = base + 0.02 * rng.gen_range(-1.0..1.0);
        }
        update_rewards(&mut estimates, &dense, &drawn);
        if phase % 10 == 0 || phase == 49 {
            println!(
                "phase {phase:>2}: kappa {kappa:>2}  entropy {:.3}  best arm {}",
                entropy(&pi),
                best_config(&estimates),
            );
        }
    }
    let best = best_config(&estimates);
    println!("converged on arm {best} (planted {good_arm})");
    assert_eq!(best, good_arm);
}
