//! Experiment orchestration: dataset loading, stage execution, artifact
//! emission. The CLI is a thin shell over [`run`].

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bandit::{init_space, reward_trace_csv, Stage};
use crate::config::{DatasetConfig, ExperimentConfig, PartitionConfig};
use crate::data::{load_idx, synth_dataset, Dataset, SyntheticSpec};
use crate::error::{HanfError, Result};
use crate::fedsim::{
    evaluate_split, partition_iid, partition_label_skew, round_trace_csv, ClientShard, EvalDriver,
    SearchDriver, SearchOutcome,
};
use crate::supernet::{build_eval_network, build_supernet, Genotype, NetworkPlan, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelection {
    Search,
    Eval,
    Both,
}

impl StageSelection {
    fn runs_search(self) -> bool {
        matches!(self, StageSelection::Search | StageSelection::Both)
    }

    fn runs_eval(self) -> bool {
        matches!(self, StageSelection::Eval | StageSelection::Both)
    }

    fn label(self) -> &'static str {
        match self {
            StageSelection::Search => "search",
            StageSelection::Eval => "eval",
            StageSelection::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchMetrics {
    pub rounds_executed: usize,
    pub best_val_accuracy: Option<f64>,
    pub best_round: Option<usize>,
    /// Relative to the output directory.
    pub genotype_path: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalMetrics {
    pub rounds_executed: usize,
    pub best_val_accuracy: Option<f64>,
    pub best_round: Option<usize>,
    pub final_val_loss: f64,
    pub final_val_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub stage: String,
    pub seed: u64,
    pub search: Option<SearchMetrics>,
    pub eval: Option<EvalMetrics>,
}

/// Loads the train dataset and, for IDX configs, the optional test set.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    match &config.dataset {
        DatasetConfig::Synthetic { classes, height, width, samples, noise_sigma } => {
            let spec = SyntheticSpec {
                classes: *classes,
                height: *height,
                width: *width,
                samples: *samples,
                noise_sigma: *noise_sigma,
            };
            Ok((synth_dataset(&spec, config.seed), None))
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            downsample_to,
            train_limit,
            test_limit,
        } => {
            let mut train = load_idx(train_images, train_labels)?;
            if let Some(limit) = train_limit {
                train = train.take((*limit).min(train.len()))?;
            }
            if let Some(target) = downsample_to {
                train = train.downsample(*target)?;
            }
            let test = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    let mut test = load_idx(ti, tl)?;
                    if let Some(limit) = test_limit {
                        test = test.take((*limit).min(test.len()))?;
                    }
                    if let Some(target) = downsample_to {
                        test = test.downsample(*target)?;
                    }
                    Some(test)
                }
                _ => None,
            };
            Ok((train, test))
        }
    }
}

pub fn partition(config: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<ClientShard>> {
    match &config.partition {
        PartitionConfig::Iid => {
            partition_iid(dataset, config.clients, config.train_fraction, config.seed)
        }
        PartitionConfig::LabelSkew { fraction, label } => partition_label_skew(
            dataset,
            config.clients,
            *fraction,
            *label,
            config.train_fraction,
            config.seed,
        ),
    }
}

fn network_spec(config: &ExperimentConfig, dataset: &Dataset, eval_stage: bool) -> NetworkSpec {
    let (h, w) = dataset.hw();
    NetworkSpec {
        cells: if eval_stage { config.eval_cells() } else { config.search.cells },
        nodes: config.search.nodes,
        channels: if eval_stage { config.eval_channels() } else { config.search.channels },
        classes: dataset.classes,
        in_channels: dataset.channels(),
        input_hw: (h, w),
    }
}

/// Weighted validation metrics of one parameter set over all shards.
fn weighted_validation(
    plan: &NetworkPlan,
    weights: &[crate::diffcore::Tensor],
    shards: &[ClientShard],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    for shard in shards {
        let (l, a) = evaluate_split(plan, weights, None, &shard.val_images, &shard.val_labels, batch_size)?;
        loss += shard.weight * l;
        acc += shard.weight * a;
    }
    Ok((loss, acc))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn run_search(
    config: &ExperimentConfig,
    shards: &[ClientShard],
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<(SearchOutcome, SearchMetrics)> {
    let spec = network_spec(config, dataset, false);
    let (plan, _params, _arch) = build_supernet(spec, 0)?; // params come from the driver
    let space = init_space(config.search.space_size, Stage::Search, config.seed)?;
    let driver = SearchDriver::new(&plan, shards, &space, config.search_stage_params(), config.seed)?;
    let outcome = driver.run()?;

    write(&out_dir.join("genotype.json"), &outcome.genotype.to_json()?)?;
    write(
        &out_dir.join("search_round_trace.csv"),
        &round_trace_csv(&outcome.traces.clients, &outcome.traces.servers),
    )?;
    write(&out_dir.join("search_reward_trace.csv"), &reward_trace_csv(&outcome.traces.rewards))?;

    let metrics = SearchMetrics {
        rounds_executed: outcome.rounds_executed,
        best_val_accuracy: outcome.best.as_ref().map(|s| s.accuracy),
        best_round: outcome.best.as_ref().map(|s| s.round),
        genotype_path: PathBuf::from("genotype.json"),
    };
    Ok((outcome, metrics))
}

fn run_eval(
    config: &ExperimentConfig,
    shards: &[ClientShard],
    dataset: &Dataset,
    test: Option<&Dataset>,
    genotype: &Genotype,
    out_dir: &Path,
) -> Result<EvalMetrics> {
    let spec = network_spec(config, dataset, true);
    let (plan, _params) = build_eval_network(genotype, spec, 0)?;
    let space = init_space(config.eval.space_size, Stage::Eval, config.seed)?;
    let driver = EvalDriver::new(&plan, shards, &space, config.eval_stage_params(), config.seed)?;
    let outcome = driver.run()?;

    write(
        &out_dir.join("eval_round_trace.csv"),
        &round_trace_csv(&outcome.traces.clients, &outcome.traces.servers),
    )?;
    write(&out_dir.join("eval_reward_trace.csv"), &reward_trace_csv(&outcome.traces.rewards))?;

    let (final_val_loss, final_val_accuracy) =
        weighted_validation(&plan, &outcome.weights, shards, config.eval.batch_size)?;
    let (test_loss, test_accuracy) = match test {
        Some(t) => {
            let (l, a) = evaluate_split(
                &plan,
                &outcome.weights,
                None,
                &t.images,
                &t.labels,
                config.eval.batch_size,
            )?;
            (Some(l), Some(a))
        }
        None => (None, None),
    };

    Ok(EvalMetrics {
        rounds_executed: outcome.rounds_executed,
        best_val_accuracy: outcome.best_accuracy.map(|(a, _)| a),
        best_round: outcome.best_accuracy.map(|(_, r)| r),
        final_val_loss,
        final_val_accuracy,
        test_loss,
        test_accuracy,
    })
}

/// Executes the requested stage(s) and writes all artifacts under
/// `config.out_dir`: a resolved config copy, the genotype document, round
/// and reward traces per stage, and a final metrics summary.
pub fn run(
    config: &ExperimentConfig,
    stage: StageSelection,
    genotype_path: Option<&Path>,
) -> Result<Metrics> {
    config.validate()?;
    if stage == StageSelection::Eval && genotype_path.is_none() {
        return Err(HanfError::config("genotype", "eval stage needs a genotype document"));
    }

    let (dataset, test) = load_datasets(config)?;
    let shards = partition(config, &dataset)?;

    std::fs::create_dir_all(&config.out_dir)?;
    write(&config.out_dir.join("resolved_config.json"), &config.to_json()?)?;

    let mut metrics = Metrics {
        stage: stage.label().to_string(),
        seed: config.seed,
        search: None,
        eval: None,
    };

    let mut searched_genotype = None;
    if stage.runs_search() {
        let (outcome, search_metrics) = run_search(config, &shards, &dataset, &config.out_dir)?;
        metrics.search = Some(search_metrics);
        searched_genotype = Some(outcome.genotype);
    }

    if stage.runs_eval() {
        let genotype = match (&searched_genotype, genotype_path) {
            (Some(g), _) => g.clone(),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    HanfError::config("genotype", format!("cannot read {}: {e}", path.display()))
                })?;
                Genotype::from_json(&text)?
            }
            (None, None) => unreachable!("checked above"),
        };
        metrics.eval = Some(run_eval(config, &shards, &dataset, test.as_ref(), &genotype, &config.out_dir)?);
    }

    write(&config.out_dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
    Ok(metrics)
}
