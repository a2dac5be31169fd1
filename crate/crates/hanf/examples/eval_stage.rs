//! Trains an evaluation network from a fixed genotype with bandit-driven
//! hyperparameter probing between exploitation phases.
//!
//! ```bash
//! cargo run --release -p hanf --example eval_stage
//! ```

use hanf::bandit::{init_space, Stage};
use hanf::data::{synth_dataset, SyntheticSpec};
use hanf::fedsim::{evaluate_split, partition_iid, EvalDriver, PhaseKind, StageParams};
use hanf::supernet::{build_eval_network, discretize, ArchParams, NetworkSpec};

fn main() -> hanf::Result<()> {
    let seed = 3;
    let dataset = synth_dataset(
        &SyntheticSpec { classes: 4, height: 8, width: 8, samples: 1000, noise_sigma: 0.05 },
        seed,
    );
    let shards = partition_iid(&dataset, 2, 0.5, seed)?;

    // an untrained architecture: the deterministic zero-weight genotype
    let genotype = discretize(&ArchParams::zeros(5), 5, 2)?;
    println!("training genotype with {} normal ops", genotype.normal.len());

    let spec = NetworkSpec {
        cells: 3,
        nodes: 5,
        channels: 8,
        classes: dataset.classes,
        in_channels: dataset.channels(),
        input_hw: dataset.hw(),
    };
    let (plan, _) = build_eval_network(&genotype, spec, 0)?;
    let space = init_space(16, Stage::Eval, seed)?;
    let params = StageParams { rounds: 25, batch_size: 32, ..StageParams::default() };

    let mut driver = EvalDriver::new(&plan, &shards, &space, params, seed)?;
    while let Some(s) = driver.next_round()? {
        if s.round % 5 == 0 {
            println!(
                "round {:>3} [{}] config {:>2}  val loss {:.4}  val acc {:.3}",
                s.round,
                match s.kind {
                    PhaseKind::Ho => "probe  ",
                    PhaseKind::Exploit => "exploit",
                },
                s.config_index,
                s.loss_after,
                s.accuracy,
            );
        }
    }

    // final weighted validation accuracy of the aggregated model
    let mut acc = 0.0;
    for shard in &shards {
        let (_, a) = evaluate_split(&plan, &driver.weights, None, &shard.val_images, &shard.val_labels, 32)?;
        acc += shard.weight * a;
    }
    println!("final weighted validation accuracy: {acc:.3}");
    Ok(())
}
