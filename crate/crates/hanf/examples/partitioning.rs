//! Splits a dataset across simulated clients, i.i.d. and with label skew,
//! and prints the per-client label histograms and aggregation weights.
//!
//! ```bash
//! cargo run --release -p hanf --example partitioning
//! ```

use hanf::data::{synth_dataset, SyntheticSpec};
use hanf::fedsim::{partition_iid, partition_label_skew, ClientShard};

fn describe(title: &str, shards: &[ClientShard], classes: usize) {
    println!("{title}");
    for s in shards {
        let hist: Vec<usize> = (0..classes).map(|c| s.label_count(c)).collect();
        println!(
            "  client {}: {:>4} train / {:>4} val, v_c = {:.4}, labels {:?}",
            s.id,
            s.train_len(),
            s.val_len(),
            s.weight,
            hist,
        );
    }
    let total: f64 = shards.iter().map(|s| s.weight).sum();
    println!("  sum of weights = {total:.12}\n");
}

fn main() -> hanf::Result<()> {
    let dataset = synth_dataset(
        &SyntheticSpec { classes: 4, height: 8, width: 8, samples: 1200, noise_sigma: 0.05 },
        42,
    );

    let iid = partition_iid(&dataset, 3, 0.5, 42)?;
    describe("i.i.d. over 3 clients:", &iid, dataset.classes);

    // one fifth of clients hold twice as many samples of label 2
    let skewed = partition_label_skew(&dataset, 5, 0.2, 2, 0.5, 42)?;
    describe("label skew (f = 0.2, label 2) over 5 clients:", &skewed, dataset.classes);
    Ok(())
}
