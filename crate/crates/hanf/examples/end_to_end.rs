//! Full two-stage run on synthetic data through the experiment runner:
//! search for a genotype, train the evaluation network, write artifacts.
//!
//! ```bash
//! cargo run --release -p hanf --example end_to_end
//! ```

use hanf::config::ExperimentConfig;
use hanf::runner::{run, StageSelection};

fn main() -> hanf::Result<()> {
    let mut config = ExperimentConfig::from_json(
        r#"{
          "dataset": {"kind": "synthetic", "classes": 4, "height": 8, "width": 8,
                      "samples": 800, "noise_sigma": 0.05},
          "clients": 2,
          "train_fraction": 0.5,
          "search": {"rounds": 8, "batch_size": 32, "cells": 3, "nodes": 4,
                     "channels": 6, "space_size": 8, "nas_rounds": 3},
          "eval":   {"rounds": 10, "batch_size": 32, "cells": 3, "space_size": 8,
                     "exploit_rounds": 3},
          "seed": 1
        }"#,
    )?;
    config.out_dir = std::env::temp_dir().join("hanf-end-to-end");

    let metrics = run(&config, StageSelection::Both, None)?;
    let search = metrics.search.as_ref().unwrap();
    let eval = metrics.eval.as_ref().unwrap();
    println!(
        "search: {} rounds, best val accuracy {:.3} (round {})",
        search.rounds_executed,
        search.best_val_accuracy.unwrap_or(f64::NAN),
        search.best_round.unwrap_or(0),
    );
    println!(
        "eval:   {} rounds, final val accuracy {:.3}, best {:.3}",
        eval.rounds_executed,
        eval.final_val_accuracy,
        eval.best_val_accuracy.unwrap_or(f64::NAN),
    );
    println!("artifacts under {}:", config.out_dir.display());
    let mut names: Vec<String> = std::fs::read_dir(&config.out_dir)?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        println!("  {name}");
    }
    Ok(())
}
