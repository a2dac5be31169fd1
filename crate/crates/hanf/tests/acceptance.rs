//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers. Long-running criteria grab a shared lock so
//! their wall-clock budgets are not distorted by each other.

mod common;

use std::sync::Mutex;
use std::time::Instant;

use common::{bits, centralized_search};
use hanf::bandit::{
    best_config, compute_reward, ho_round_budget, init_space, policy, sample_configs,
    update_rewards, HyperparamConfig, RewardEstimates, Stage,
};
use hanf::config::ExperimentConfig;
use hanf::data::{synth_dataset, SyntheticSpec};
use hanf::diffcore::gradcheck::{finite_diff_gradient, max_relative_error};
use hanf::diffcore::{ConvAttrs, NodeId, Tape, Tensor};
use hanf::fedsim::{partition_iid, partition_label_skew, ClientShard, SearchDriver, StageParams};
use hanf::runner::{run, StageSelection};
use hanf::supernet::{
    build_supernet, discretize, edge_list, ArchParams, Genotype, GenotypeEdge, NetworkSpec,
    PrimitiveKind, CATALOG,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

static HEAVY: Mutex<()> = Mutex::new(());

fn pass(criterion: usize, name: &str, detail: String) {
    println!("criterion {criterion:02} ({name}): PASS [{detail}]");
}

fn out_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hanf-acceptance-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

// ---------------------------------------------------------------- 1 ----

/// Applies one catalog primitive as a tape graph built from scratch here,
/// structured as the network defines it (ReLU-Conv-BN, separable twice).
/// Returns the scalar sum-of-squares loss.
fn primitive_graph(
    tape: &mut Tape,
    kind: PrimitiveKind,
    stride: usize,
    leaves: &[NodeId],
) -> NodeId {
    let x = leaves[0];
    let channels = tape.value(x).dim(1);
    let y = match kind {
        PrimitiveKind::SepConv3x3 | PrimitiveKind::SepConv5x5 => {
            let k = kind.kernel().unwrap();
            let pad = (k - 1) / 2;
            let mut h = tape.relu(x);
            h = tape
                .conv2d(h, leaves[1], ConvAttrs { stride, padding: pad, dilation: 1, groups: channels })
                .unwrap();
            h = tape.conv2d(h, leaves[2], ConvAttrs::default()).unwrap();
            h = tape.batch_norm(h, leaves[3], leaves[4], 1e-5).unwrap();
            h = tape.relu(h);
            h = tape
                .conv2d(h, leaves[5], ConvAttrs { stride: 1, padding: pad, dilation: 1, groups: channels })
                .unwrap();
            h = tape.conv2d(h, leaves[6], ConvAttrs::default()).unwrap();
            tape.batch_norm(h, leaves[7], leaves[8], 1e-5).unwrap()
        }
        PrimitiveKind::DilConv3x3 | PrimitiveKind::DilConv5x5 => {
            let k = kind.kernel().unwrap();
            let pad = k - 1;
            let mut h = tape.relu(x);
            h = tape
                .conv2d(h, leaves[1], ConvAttrs { stride, padding: pad, dilation: 2, groups: channels })
                .unwrap();
            h = tape.conv2d(h, leaves[2], ConvAttrs::default()).unwrap();
            tape.batch_norm(h, leaves[3], leaves[4], 1e-5).unwrap()
        }
        PrimitiveKind::MaxPool3x3 => tape.max_pool(x, 3, stride, 1).unwrap(),
        PrimitiveKind::AvgPool3x3 => tape.avg_pool(x, 3, stride, 1).unwrap(),
        PrimitiveKind::Identity if stride == 1 => x,
        PrimitiveKind::Identity => {
            tape.conv2d(x, leaves[1], ConvAttrs { stride, padding: 0, dilation: 1, groups: 1 }).unwrap()
        }
        PrimitiveKind::Zero => {
            let v = tape.value(x);
            let shape = vec![v.dim(0), v.dim(1), v.dim(2).div_ceil(stride), v.dim(3).div_ceil(stride)];
            tape.constant(Tensor::zeros(shape))
        }
    };
    let sq = tape.mul(y, y).unwrap();
    tape.sum(sq)
}

fn primitive_leaf_shapes(kind: PrimitiveKind, stride: usize, c: usize, hw: usize) -> Vec<Vec<usize>> {
    let x = vec![1, c, hw, hw];
    match kind {
        PrimitiveKind::SepConv3x3 | PrimitiveKind::SepConv5x5 => {
            let k = kind.kernel().unwrap();
            vec![
                x,
                vec![c, 1, k, k],
                vec![c, c, 1, 1],
                vec![c],
                vec![c],
                vec![c, 1, k, k],
                vec![c, c, 1, 1],
                vec![c],
                vec![c],
            ]
        }
        PrimitiveKind::DilConv3x3 | PrimitiveKind::DilConv5x5 => {
            let k = kind.kernel().unwrap();
            vec![x, vec![c, 1, k, k], vec![c, c, 1, 1], vec![c], vec![c]]
        }
        PrimitiveKind::Identity if stride > 1 => vec![x, vec![c, c, 1, 1]],
        _ => vec![x],
    }
}

/// Finite-difference check over every leaf of a tape graph at the pinned
/// step 1e-5. Returns `None` when the oracle itself is ill-conditioned at
/// the sampled point (a relu kink or pooling tie inside the step window,
/// detected by disagreement with a half-step estimate), so the caller can
/// resample the instance.
fn fd_check<F>(leaf_shapes: &[Vec<usize>], seed: u64, build: F) -> Option<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = leaf_shapes.iter().map(|s| s.iter().product()).collect();
    let flat: Vec<f64> = (0..sizes.iter().sum()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let eval = |values: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let mut ids = Vec::new();
        let mut off = 0;
        for (shape, len) in leaf_shapes.iter().zip(&sizes) {
            let t = Tensor::from_vec(shape.clone(), values[off..off + len].to_vec()).unwrap();
            ids.push(tape.leaf(t, true));
            off += len;
        }
        let loss = build(&mut tape, &ids);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let mut ids = Vec::new();
    let mut off = 0;
    for (shape, len) in leaf_shapes.iter().zip(&sizes) {
        let t = Tensor::from_vec(shape.clone(), flat[off..off + len].to_vec()).unwrap();
        ids.push(tape.leaf(t, true));
        off += len;
    }
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> =
        ids.iter().flat_map(|&id| grads.get_or_zeros(id, &tape).into_data()).collect();
    let numeric = finite_diff_gradient(eval, &flat, 1e-5);
    let half_step = finite_diff_gradient(eval, &flat, 5e-6);
    for (a, b) in numeric.iter().zip(&half_step) {
        let denom = a.abs().max(b.abs()).max(1.0);
        if (a - b).abs() / denom > 1e-6 {
            return None; // non-differentiable within the step window
        }
    }
    Some(max_relative_error(&analytic, &numeric))
}

/// Runs `fd_check` with resampling until a well-conditioned instance is
/// found (a handful of retries always suffices).
fn fd_check_valid<F>(leaf_shapes: &[Vec<usize>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    for attempt in 0..8 {
        if let Some(err) = fd_check(leaf_shapes, seed + 10_000 * attempt, &build) {
            return err;
        }
    }
    panic!("no differentiable sample point found after 8 attempts");
}

#[test]
fn criterion_01_gradient_oracle() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let instances = 20;

    // every catalog primitive, alternating strides
    for kind in CATALOG {
        for i in 0..instances {
            let stride = 1 + (i % 2);
            let shapes = primitive_leaf_shapes(kind, stride, 2, 5);
            let err = fd_check_valid(&shapes, 1000 + i as u64, |tape, ids| {
                primitive_graph(tape, kind, stride, ids)
            });
            assert!(err < 1e-4, "{} stride {stride} instance {i}: rel err {err:.3e}", kind.name());
            worst = worst.max(err);
        }
    }

    // mixed operation over the full catalog on one edge
    for i in 0..instances {
        let c = 2;
        let mut shapes = vec![vec![1, c, 4, 4], vec![1, CATALOG.len()]];
        for kind in CATALOG {
            shapes.extend(primitive_leaf_shapes(kind, 1, c, 4).into_iter().skip(1));
        }
        let err = fd_check_valid(&shapes, 2000 + i as u64, |tape, ids| {
            let x = ids[0];
            let row = tape.row_slice(ids[1], 0).unwrap();
            let probs = tape.softmax(row);
            let mut cursor = 2;
            let mut acc: Option<NodeId> = None;
            for (pi, kind) in CATALOG.iter().enumerate() {
                let n_params = primitive_leaf_shapes(*kind, 1, c, 4).len() - 1;
                let mut leaves = vec![x];
                leaves.extend_from_slice(&ids[cursor..cursor + n_params]);
                cursor += n_params;
                // rebuild the primitive output (not its scalar loss)
                let y = {
                    let loss_like = primitive_graph(tape, *kind, 1, &leaves);
                    // primitive_graph returns sum(y^2); rebuild y itself
                    let _ = loss_like;
                    primitive_output(tape, *kind, 1, &leaves)
                };
                let coeff = tape.index_scalar(probs, pi).unwrap();
                let term = tape.mul_scalar(coeff, y).unwrap();
                acc = Some(match acc {
                    Some(a) => tape.add(a, term).unwrap(),
                    None => term,
                });
            }
            let out = acc.unwrap();
            let sq = tape.mul(out, out).unwrap();
            tape.sum(sq)
        });
        assert!(err < 1e-4, "mixed op instance {i}: rel err {err:.3e}");
        worst = worst.max(err);
    }

    // cell composites: the full supernet as built by the plan, checked on
    // the architecture matrices and a sample of the weights
    let spec = NetworkSpec { cells: 2, nodes: 3, channels: 2, classes: 3, in_channels: 1, input_hw: (5, 5) };
    let composite_instance = |seed: u64| -> Option<f64> {
        use hanf::fedsim::{ClientModel, TrainTarget};
        let (plan, params, mut arch) = build_supernet(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        for v in arch.normal.data_mut().iter_mut().chain(arch.reduce.data_mut().iter_mut()) {
            *v = rng.gen_range(-0.5..0.5);
        }
        let images = {
            let data: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..1.0)).collect();
            Tensor::from_vec(vec![1, 1, 5, 5], data).unwrap()
        };
        let labels = [(seed % 3) as usize];
        let loss_at = |params: &[Tensor], a: &ArchParams| -> f64 {
            let mut t = Tape::new();
            let b = plan
                .bound_loss(&mut t, params, Some(a), TrainTarget::None, &images, &labels, None)
                .unwrap();
            t.value(b.loss).item()
        };
        let mut worst: f64 = 0.0;

        let mut tape = Tape::new();
        let bound = plan
            .bound_loss(&mut tape, &params, Some(&arch), TrainTarget::Weights, &images, &labels, None)
            .unwrap();
        let grads = tape.backward(bound.loss).unwrap();

        // architecture gradients against finite differences
        let mut tape_a = Tape::new();
        let bound_a = plan
            .bound_loss(&mut tape_a, &params, Some(&arch), TrainTarget::Arch, &images, &labels, None)
            .unwrap();
        let grads_a = tape_a.backward(bound_a.loss).unwrap();
        let (nid, rid) = bound_a.arch_ids.unwrap();
        let analytic_arch: Vec<f64> = grads_a
            .get_or_zeros(nid, &tape_a)
            .into_data()
            .into_iter()
            .chain(grads_a.get_or_zeros(rid, &tape_a).into_data())
            .collect();
        let arch_eval = |values: &[f64]| -> f64 {
            let half = values.len() / 2;
            let a = ArchParams {
                normal: Tensor::from_vec(arch.normal.shape().to_vec(), values[..half].to_vec()).unwrap(),
                reduce: Tensor::from_vec(arch.reduce.shape().to_vec(), values[half..].to_vec()).unwrap(),
            };
            loss_at(&params, &a)
        };
        let point: Vec<f64> =
            arch.normal.data().iter().chain(arch.reduce.data()).copied().collect();
        let numeric_arch = finite_diff_gradient(arch_eval, &point, 1e-5);
        let half_arch = finite_diff_gradient(arch_eval, &point, 5e-6);
        for (a, b) in numeric_arch.iter().zip(&half_arch) {
            if (a - b).abs() / a.abs().max(b.abs()).max(1.0) > 1e-6 {
                return None;
            }
        }
        worst = worst.max(max_relative_error(&analytic_arch, &numeric_arch));
        if worst >= 1e-4 {
            panic!("cell composite arch grads (seed {seed}): rel err {worst:.3e}");
        }

        // sampled weight coordinates against finite differences
        let step = 1e-5;
        for _ in 0..12 {
            let pi = rng.gen_range(0..params.len());
            let ci = rng.gen_range(0..params[pi].numel());
            let analytic = grads.get_or_zeros(bound.weight_ids[pi], &tape).data()[ci];
            let fd = |h: f64| -> f64 {
                let mut perturbed = params.clone();
                perturbed[pi].data_mut()[ci] += h;
                let plus = loss_at(&perturbed, &arch);
                perturbed[pi].data_mut()[ci] -= 2.0 * h;
                let minus = loss_at(&perturbed, &arch);
                (plus - minus) / (2.0 * h)
            };
            let numeric = fd(step);
            let check = fd(step / 2.0);
            if (numeric - check).abs() / numeric.abs().max(check.abs()).max(1.0) > 1e-6 {
                return None;
            }
            let denom = analytic.abs().max(numeric.abs()).max(1.0);
            let err = (analytic - numeric).abs() / denom;
            if err >= 1e-4 {
                panic!("cell composite weight ({pi},{ci}), seed {seed}: rel err {err:.3e}");
            }
            worst = worst.max(err);
        }
        Some(worst)
    };
    for i in 0..instances {
        let mut done = false;
        for attempt in 0..8u64 {
            if let Some(err) = composite_instance(3000 + i as u64 + 10_000 * attempt) {
                worst = worst.max(err);
                done = true;
                break;
            }
        }
        assert!(done, "no differentiable composite sample found for instance {i}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient oracle took {elapsed:?}");
    pass(1, "gradient oracle", format!("worst rel err {worst:.3e}, {elapsed:.2?}"));
}

/// The primitive's output node (same structure as [`primitive_graph`]
/// without the scalar loss head).
fn primitive_output(tape: &mut Tape, kind: PrimitiveKind, stride: usize, leaves: &[NodeId]) -> NodeId {
    let x = leaves[0];
    let channels = tape.value(x).dim(1);
    match kind {
        PrimitiveKind::SepConv3x3 | PrimitiveKind::SepConv5x5 => {
            let k = kind.kernel().unwrap();
            let pad = (k - 1) / 2;
            let mut h = tape.relu(x);
            h = tape
                .conv2d(h, leaves[1], ConvAttrs { stride, padding: pad, dilation: 1, groups: channels })
                .unwrap();
            h = tape.conv2d(h, leaves[2], ConvAttrs::default()).unwrap();
            h = tape.batch_norm(h, leaves[3], leaves[4], 1e-5).unwrap();
            h = tape.relu(h);
            h = tape
                .conv2d(h, leaves[5], ConvAttrs { stride: 1, padding: pad, dilation: 1, groups: channels })
                .unwrap();
            h = tape.conv2d(h, leaves[6], ConvAttrs::default()).unwrap();
            tape.batch_norm(h, leaves[7], leaves[8], 1e-5).unwrap()
        }
        PrimitiveKind::DilConv3x3 | PrimitiveKind::DilConv5x5 => {
            let k = kind.kernel().unwrap();
            let pad = k - 1;
            let mut h = tape.relu(x);
            h = tape
                .conv2d(h, leaves[1], ConvAttrs { stride, padding: pad, dilation: 2, groups: channels })
                .unwrap();
            h = tape.conv2d(h, leaves[2], ConvAttrs::default()).unwrap();
            tape.batch_norm(h, leaves[3], leaves[4], 1e-5).unwrap()
        }
        PrimitiveKind::MaxPool3x3 => tape.max_pool(x, 3, stride, 1).unwrap(),
        PrimitiveKind::AvgPool3x3 => tape.avg_pool(x, 3, stride, 1).unwrap(),
        PrimitiveKind::Identity if stride == 1 => x,
        PrimitiveKind::Identity => {
            tape.conv2d(x, leaves[1], ConvAttrs { stride, padding: 0, dilation: 1, groups: 1 }).unwrap()
        }
        PrimitiveKind::Zero => {
            let v = tape.value(x);
            let shape = vec![v.dim(0), v.dim(1), v.dim(2).div_ceil(stride), v.dim(3).div_ceil(stride)];
            tape.constant(Tensor::zeros(shape))
        }
    }
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn criterion_02_bandit_convergence() {
    let started = Instant::now();
    let arms = 20;
    let planted = 7;
    let phases = 50;
    let trials = 20;
    let mut hits = 0;
    for trial in 0..trials {
        let mut estimates = RewardEstimates::new(arms, 0.1, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        for _ in 0..phases {
            let pi = policy(&estimates);
            let kappa = ho_round_budget(&estimates).min(arms);
            let drawn = sample_configs(&pi, kappa, &mut rng).unwrap();
            let mut dense = vec![0.0; arms];
            for &arm in &drawn {
                let base = if arm == planted { 1.0 } else { 0.1 };
                // gaussian noise, sigma = 0.02, via Box-Muller
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let noise = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                dense[arm] = base + 0.02 * noise;
            }
            update_rewards(&mut estimates, &dense, &drawn);
        }
        if best_config(&estimates) == planted {
            hits += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(hits >= 18, "bandit found the planted arm in only {hits}/20 trials");
    assert!(elapsed.as_secs() < 10, "bandit convergence took {elapsed:?}");
    pass(2, "bandit convergence", format!("{hits}/20 trials, {elapsed:.2?}"));
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn criterion_03_entropy_schedule() {
    let uniform120 = RewardEstimates::new(120, 0.1, 4.0);
    assert_eq!(ho_round_budget(&uniform120), 19);

    let mut hot = RewardEstimates::new(120, 0.1, 4.0);
    let mut dense = vec![0.0; 120];
    dense[11] = 1000.0;
    update_rewards(&mut hot, &dense, &(0..120).collect::<Vec<_>>());
    assert_eq!(ho_round_budget(&hot), 1);

    let two = RewardEstimates::new(2, 0.1, 4.0);
    assert_eq!(ho_round_budget(&two), 3);
    pass(3, "entropy schedule", "kappa = 19 / 1 / 3".to_string());
}

// ---------------------------------------------------------------- 4 ----

#[test]
fn criterion_04_reward_equation_oracles() {
    // reward = weighted sum of validation-loss deltas, exact
    assert_eq!(compute_reward(&[0.9], &[0.7], &[1.0]).unwrap(), 0.9 - 0.7);
    let two = compute_reward(&[1.0, 0.5], &[0.6, 0.6], &[0.25, 0.75]).unwrap();
    assert_eq!(two, 0.25 * (1.0 - 0.6) + 0.75 * (0.5 - 0.6));
    assert_eq!(compute_reward(&[0.4, 0.4], &[0.4, 0.4], &[0.5, 0.5]).unwrap(), 0.0);

    // estimate update: sampled entries corrected by alpha, others decayed
    let mut est = RewardEstimates::new(2, 1.0, 4.0);
    update_rewards(&mut est, &[0.5, 0.2], &[0, 1]);
    est.alpha = 0.1;
    let mut round = vec![0.0; 2];
    round[0] = 0.3;
    update_rewards(&mut est, &round, &[0]);
    assert_eq!(est.rewards()[0], 0.5 + 0.1 * (0.3 - 0.5));
    assert_eq!(est.rewards()[1], 0.2 * 0.9);

    // alpha = 1 overwrites sampled and zeroes unsampled; the hand oracle
    // replays the exact update arithmetic
    let mut est = RewardEstimates::new(3, 1.0, 4.0);
    update_rewards(&mut est, &[0.5, 0.2, -0.4], &[0, 1, 2]);
    update_rewards(&mut est, &[0.0, 0.9, 0.0], &[1]);
    assert_eq!(est.rewards(), &[0.5 * 0.0, 0.2 + 1.0 * (0.9 - 0.2), -0.4 * 0.0]);
    assert!(est.rewards()[0] == 0.0 && est.rewards()[2] == 0.0);
    assert!((est.rewards()[1] - 0.9).abs() < 1e-15);

    // alpha = 0 is a no-op
    let mut est = RewardEstimates::new(2, 1.0, 4.0);
    update_rewards(&mut est, &[0.5, 0.2], &[0, 1]);
    est.alpha = 0.0;
    update_rewards(&mut est, &[0.9, 0.0], &[0]);
    assert_eq!(est.rewards(), &[0.5, 0.2]);

    pass(4, "reward equation oracles", "all worked examples exact".to_string());
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_05_federation_equivalences() {
    let _guard = HEAVY.lock().unwrap();
    let seed = 11;
    let dataset = synth_dataset(
        &SyntheticSpec { classes: 3, height: 6, width: 6, samples: 60, noise_sigma: 0.05 },
        seed,
    );
    let spec = NetworkSpec { cells: 2, nodes: 3, channels: 4, classes: 3, in_channels: 1, input_hw: (6, 6) };
    let (plan, _, _) = build_supernet(spec, 0).unwrap();
    let space = init_space(6, Stage::Search, seed).unwrap();
    let params = StageParams {
        rounds: 10,
        exploit_rounds: 3,
        batch_size: 16,
        clip_norm: 5.0,
        genotype_k: 2,
        participation: 1.0,
        bandit: Default::default(),
    };

    // (a) single-client run is bitwise the centralized loop
    let single = partition_iid(&dataset, 1, 0.5, seed).unwrap();
    let outcome = SearchDriver::new(&plan, &single, &space, params, seed).unwrap().run().unwrap();
    let (cw, ca, _) = centralized_search(&plan, &single[0], &space, &params, seed);
    assert_eq!(bits(&outcome.weights), bits(&cw), "5a: weights diverged");
    assert_eq!(
        bits(&[outcome.arch.normal.clone(), outcome.arch.reduce.clone()]),
        bits(&[ca.normal, ca.reduce]),
        "5a: arch diverged"
    );

    // (b) three identical shards with equal weights track the single client
    let triple: Vec<ClientShard> = (0..3)
        .map(|id| {
            let mut s = single[0].clone();
            s.id = id;
            s.weight = 1.0 / 3.0;
            s
        })
        .collect();
    let mut one = SearchDriver::new(&plan, &single, &space, params, seed).unwrap();
    let mut three = SearchDriver::new(&plan, &triple, &space, params, seed).unwrap();
    let mut max_drift: f64 = 0.0;
    for _ in 0..10 {
        one.next_round().unwrap().unwrap();
        three.next_round().unwrap().unwrap();
        for (a, b) in one.weights.iter().zip(three.weights.iter()) {
            max_drift = max_drift.max(a.max_abs_diff(b));
        }
        max_drift = max_drift.max(one.arch.normal.max_abs_diff(&three.arch.normal));
        max_drift = max_drift.max(one.arch.reduce.max_abs_diff(&three.arch.reduce));
        assert!(max_drift < 1e-9, "5b: drift {max_drift:.3e}");
    }
    pass(5, "federation equivalences", format!("bitwise C=1; C=3 drift {max_drift:.2e}"));
}

// ---------------------------------------------------------------- 6 ----

/// Independent enumerator: scores every (edge, primitive) pair from the
/// row softmax and keeps the top-k incoming edges per node under the
/// lexicographic tie-break (weight desc, primitive asc, source asc).
fn brute_force_discretize(matrix: &Tensor, nodes: usize, k: usize) -> Vec<GenotypeEdge> {
    let prims = CATALOG.len();
    let softmax_row = |row: &[f64]| -> Vec<f64> {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let edges = edge_list(nodes);
    let mut retained = Vec::new();
    for target in 2..nodes {
        // enumerate all (edge, primitive) candidates for this node
        let mut scored: Vec<(f64, usize, usize)> = Vec::new(); // (weight, prim, source)
        for (row, &(source, t)) in edges.iter().enumerate() {
            if t != target {
                continue;
            }
            let probs = softmax_row(&matrix.data()[row * prims..(row + 1) * prims]);
            let mut best: Option<(f64, usize)> = None;
            for (pi, &p) in probs.iter().enumerate() {
                if CATALOG[pi] == PrimitiveKind::Zero {
                    continue;
                }
                best = match best {
                    None => Some((p, pi)),
                    Some((bp, bi)) => {
                        if p > bp {
                            Some((p, pi))
                        } else {
                            Some((bp, bi))
                        }
                    }
                };
            }
            let (p, pi) = best.unwrap();
            scored.push((p, pi, source));
        }
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        let mut kept: Vec<GenotypeEdge> =
            scored.into_iter().take(k).map(|(_, pi, s)| GenotypeEdge(CATALOG[pi], s, target)).collect();
        kept.sort_by_key(|e| (e.2, e.1));
        retained.extend(kept);
    }
    retained
}

#[test]
fn criterion_06_discretization_oracle() {
    let nodes = 5;
    for i in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + i);
        let len = edge_list(nodes).len() * CATALOG.len();
        let normal =
            Tensor::from_vec(vec![len / CATALOG.len(), CATALOG.len()], (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let reduce =
            Tensor::from_vec(vec![len / CATALOG.len(), CATALOG.len()], (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let arch = ArchParams { normal: normal.clone(), reduce: reduce.clone() };

        let genotype = discretize(&arch, nodes, 2).unwrap();
        let expected = Genotype {
            normal: brute_force_discretize(&normal, nodes, 2),
            reduce: brute_force_discretize(&reduce, nodes, 2),
            nodes,
            k: 2,
        };
        assert_eq!(genotype, expected, "instance {i}");
    }
    pass(6, "discretization oracle", "10/10 exact matches".to_string());
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn criterion_07_synthetic_end_to_end() {
    let _guard = HEAVY.lock().unwrap();
    let started = Instant::now();
    let mut config = ExperimentConfig::from_json(
        r#"{
          "dataset": {"kind": "synthetic", "classes": 4, "height": 8, "width": 8,
                      "samples": 2000, "noise_sigma": 0.05},
          "clients": 2,
          "train_fraction": 0.5,
          "search": {"rounds": 40, "batch_size": 64, "cells": 3, "nodes": 5,
                     "channels": 8, "space_size": 20, "nas_rounds": 10},
          "eval":   {"rounds": 100, "batch_size": 96, "cells": 3, "space_size": 20,
                     "exploit_rounds": 10},
          "seed": 1
        }"#,
    )
    .unwrap();
    config.out_dir = out_dir("criterion7");

    let metrics = run(&config, StageSelection::Both, None).unwrap();
    let elapsed = started.elapsed();
    let eval = metrics.eval.expect("eval stage ran");
    assert!(
        eval.final_val_accuracy >= 0.95,
        "final weighted validation accuracy {:.4} < 0.95",
        eval.final_val_accuracy
    );
    assert!(elapsed.as_secs() < 15 * 60, "end-to-end run took {elapsed:?}");
    pass(
        7,
        "synthetic end-to-end",
        format!("final val accuracy {:.4}, {elapsed:.1?}", eval.final_val_accuracy),
    );
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_08_fashion_mnist_desk_scale() {
    let _guard = HEAVY.lock().unwrap();
    let started = Instant::now();
    let data_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fashion");
    let mut config = ExperimentConfig::from_json(&format!(
        r#"{{
          "dataset": {{"kind": "idx",
            "train_images": "{d}/fashion-train-images-idx3-ubyte.gz",
            "train_labels": "{d}/fashion-train-labels-idx1-ubyte.gz",
            "test_images": "{d}/fashion-test-images-idx3-ubyte.gz",
            "test_labels": "{d}/fashion-test-labels-idx1-ubyte.gz",
            "downsample_to": 14,
            "train_limit": 5000,
            "test_limit": 2000}},
          "clients": 2,
          "train_fraction": 0.8,
          "search": {{"rounds": 30, "batch_size": 64, "cells": 3, "nodes": 4,
                      "channels": 8, "space_size": 20, "nas_rounds": 10}},
          "eval":   {{"rounds": 150, "batch_size": 96, "cells": 3, "space_size": 20,
                      "exploit_rounds": 10}},
          "seed": 2
        }}"#,
        d = data_dir.display(),
    ))
    .unwrap();
    config.out_dir = out_dir("criterion8");

    let metrics = run(&config, StageSelection::Both, None).unwrap();
    let elapsed = started.elapsed();
    let eval = metrics.eval.expect("eval stage ran");
    let test_accuracy = eval.test_accuracy.expect("test split present");
    assert!(test_accuracy >= 0.80, "test accuracy {test_accuracy:.4} < 0.80");
    assert!(elapsed.as_secs() < 45 * 60, "desk-scale run took {elapsed:?}");
    pass(
        8,
        "real-data desk scale",
        format!("test accuracy {test_accuracy:.4}, {elapsed:.1?}"),
    );
}

// ---------------------------------------------------------------- 9 ----

#[test]
fn criterion_09_label_skew_partitioner() {
    // 3500 samples, exactly 700 of label 2, the rest split over the other
    // three labels as evenly as possible
    let mut dataset = synth_dataset(
        &SyntheticSpec { classes: 4, height: 4, width: 4, samples: 3500, noise_sigma: 0.0 },
        9,
    );
    dataset.labels = (0..3500)
        .map(|i| if i < 700 { 2 } else { [0, 1, 3][i % 3] })
        .collect();

    let shards = partition_label_skew(&dataset, 5, 0.2, 2, 0.5, 9).unwrap();
    assert_eq!(shards[0].label_count(2), 233, "skewed client holds 233");
    for s in &shards[1..] {
        assert_eq!(s.label_count(2), 116, "non-skewed clients hold 116");
    }
    let total: f64 = shards.iter().map(|s| s.weight).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for label in [0usize, 1, 3] {
        let counts: Vec<usize> = shards.iter().map(|s| s.label_count(label)).collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "label {label} imbalance: {counts:?}");
    }
    pass(9, "label-skew partitioner", "233 / 116x4, weights normalized, others balanced".to_string());
}

// --------------------------------------------------------------- 10 ----

#[test]
fn criterion_10_self_correction_under_poisoned_config() {
    let _guard = HEAVY.lock().unwrap();
    let started = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    use rayon::prelude::*;

    let recoveries: Vec<bool> = seeds
        .par_iter()
        .map(|&seed| {
            let dataset = synth_dataset(
                &SyntheticSpec { classes: 4, height: 8, width: 8, samples: 2000, noise_sigma: 0.05 },
                seed,
            );
            let shards = partition_iid(&dataset, 2, 0.5, seed).unwrap();
            let spec = NetworkSpec {
                cells: 3,
                nodes: 5,
                channels: 8,
                classes: 4,
                in_channels: 1,
                input_hw: (8, 8),
            };
            let (plan, _, _) = build_supernet(spec, 0).unwrap();
            let mut space = init_space(20, Stage::Search, seed).unwrap();
            let poison_index = 3;
            space[poison_index] = HyperparamConfig {
                model_lr: 10.0,
                model_weight_decay: 1e-4,
                momentum: 0.9,
                arch_lr: Some(1e-3),
                arch_weight_decay: Some(1e-4),
                path_dropout: None,
            };
            let params = StageParams {
                rounds: 40,
                exploit_rounds: 10,
                batch_size: 64,
                clip_norm: 5.0,
                genotype_k: 2,
                participation: 1.0,
                bandit: Default::default(),
            };
            let outcome = SearchDriver::new(&plan, &shards, &space, params, seed)
                .unwrap()
                .run()
                .unwrap();
            let summaries = &outcome.traces.summaries;

            // first round where the poisoned configuration was used
            let Some(hit) = summaries.iter().position(|s| s.config_index == poison_index) else {
                return true; // never selected: nothing to recover from
            };
            let pre_dip = summaries[..hit]
                .iter()
                .rev()
                .find(|s| s.accuracy.is_finite())
                .map(|s| s.accuracy)
                .unwrap_or(0.0);
            let hit_phase = summaries[hit].phase;
            summaries
                .iter()
                .skip(hit)
                .filter(|s| s.phase <= hit_phase + 2)
                .any(|s| s.accuracy.is_finite() && s.accuracy >= pre_dip - 0.02)
        })
        .collect();

    let recovered = recoveries.iter().filter(|&&r| r).count();
    let elapsed = started.elapsed();
    assert!(recovered >= 8, "recovered in only {recovered}/10 seeds");
    pass(
        10,
        "self-correction",
        format!("{recovered}/10 seeds recovered within 2 phases, {elapsed:.1?}"),
    );
}
