//! Runs a short federated search stage on synthetic data, printing one
//! line per communication round and the resulting genotype.
//!
//! ```bash
//! cargo run --release -p hanf --example search_stage
//! ```

use std::time::Instant;

use hanf::bandit::{init_space, Stage};
use hanf::data::{synth_dataset, SyntheticSpec};
use hanf::fedsim::{partition_iid, PhaseKind, SearchDriver, StageParams};
use hanf::supernet::{build_supernet, NetworkSpec};

fn main() -> hanf::Result<()> {
    let seed = 7;
    let dataset = synth_dataset(
        &SyntheticSpec { classes: 4, height: 8, width: 8, samples: 2000, noise_sigma: 0.05 },
        seed,
    );
    let shards = partition_iid(&dataset, 2, 0.5, seed)?;

    let spec = NetworkSpec {
        cells: 3,
        nodes: 5,
        channels: 8,
        classes: dataset.classes,
        in_channels: dataset.channels(),
        input_hw: dataset.hw(),
    };
    let (plan, _, _) = build_supernet(spec, 0)?;
    let space = init_space(20, Stage::Search, seed)?;
    let params = StageParams { rounds: 12, batch_size: 64, ..StageParams::default() };

    let mut driver = SearchDriver::new(&plan, &shards, &space, params, seed)?;
    let t0 = Instant::now();
    while let Some(s) = driver.next_round()? {
        println!(
            "round {:>3} [{}] phase {} config {:>2}  loss {:.4} -> {:.4}  acc {:.3}  kappa {:>2}  ({:.1?})",
            s.round,
            match s.kind {
                PhaseKind::Ho => "ho     ",
                PhaseKind::Exploit => "exploit",
            },
            s.phase,
            s.config_index,
            s.loss_before,
            s.loss_after,
            s.accuracy,
            s.kappa,
            t0.elapsed(),
        );
    }
    let best = driver.best.clone();
    let outcome_genotype = match best {
        Some(s) => {
            println!("best accuracy {:.3} at round {}", s.accuracy, s.round);
            s.genotype
        }
        None => panic!("no successful round"),
    };
    println!("{}", outcome_genotype.to_json()?);
    Ok(())
}
