//! Structural properties of the supernet and evaluation network.

use hanf::diffcore::{gradcheck, Tape, Tensor};
use hanf::fedsim::{ClientModel, TrainTarget};
use hanf::supernet::{
    build_eval_network, build_supernet, edge_list, Dropout, Genotype, GenotypeEdge,
    NetworkSpec, PrimitiveKind, CATALOG,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_images(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Mixed-operation mathematics at the tape level: a two-candidate edge
/// {identity, zero} with weights (ln 3, 0) scales the input by 0.75.
#[test]
fn two_candidate_mixed_op_closed_form() {
    let mut tape = Tape::new();
    let x = tape.leaf(random_images(vec![1, 2, 3, 3], 4), false);
    let arch = tape.leaf(Tensor::from_vec(vec![1, 2], vec![3f64.ln(), 0.0]).unwrap(), true);
    let row = tape.row_slice(arch, 0).unwrap();
    let probs = tape.softmax(row);

    let zero = {
        let shape = tape.value(x).shape().to_vec();
        tape.constant(Tensor::zeros(shape))
    };
    let c_id = tape.index_scalar(probs, 0).unwrap();
    let c_zero = tape.index_scalar(probs, 1).unwrap();
    let t0 = tape.mul_scalar(c_id, x).unwrap();
    let t1 = tape.mul_scalar(c_zero, zero).unwrap();
    let out = tape.add(t0, t1).unwrap();

    let expected: Vec<f64> = tape.value(x).data().iter().map(|v| 0.75 * v).collect();
    let got = tape.value(out).data().to_vec();
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-12);
    }

    // mixing weights form a distribution
    let p = tape.value(probs).data().to_vec();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&v| v > 0.0));
}

/// Saturated architecture weights make the mixed op collapse to one branch.
#[test]
fn saturated_mixed_op_is_exact() {
    let mut tape = Tape::new();
    let _x = tape.leaf(random_images(vec![1, 2, 3, 3], 9), false);
    let arch = tape.leaf(Tensor::from_vec(vec![1, 2], vec![1000.0, 0.0]).unwrap(), false);
    let row = tape.row_slice(arch, 0).unwrap();
    let probs = tape.softmax(row);
    assert_eq!(tape.value(probs).data(), &[1.0, 0.0]);
}

fn spec3(nodes: usize) -> NetworkSpec {
    NetworkSpec { cells: 3, nodes, channels: 4, classes: 3, in_channels: 1, input_hw: (8, 8) }
}

/// With all architecture mass on one non-zero primitive per edge, the
/// supernet forward equals the discrete network carrying the same
/// parameters on the retained edges.
#[test]
fn one_hot_supernet_equals_discrete_network() {
    let spec = spec3(3); // every intermediate node has in-degree 2 == k
    let (plan, params, mut arch) = build_supernet(spec, 21).unwrap();

    // plant a one-hot architecture: distinct non-zero primitives per edge
    let picks = [PrimitiveKind::SepConv3x3, PrimitiveKind::MaxPool3x3];
    let edges = edge_list(spec.nodes);
    let prims = CATALOG.len();
    let mut genotype_normal = Vec::new();
    let mut genotype_reduce = Vec::new();
    for (row, &(source, target)) in edges.iter().enumerate() {
        let pick_n = picks[row % picks.len()];
        let pick_r = picks[(row + 1) % picks.len()];
        arch.normal.data_mut()[row * prims + pick_n.index()] = 1000.0;
        arch.reduce.data_mut()[row * prims + pick_r.index()] = 1000.0;
        genotype_normal.push(GenotypeEdge(pick_n, source, target));
        genotype_reduce.push(GenotypeEdge(pick_r, source, target));
    }
    let genotype = Genotype { normal: genotype_normal, reduce: genotype_reduce, nodes: spec.nodes, k: 2 };
    genotype.validate().unwrap();

    let (eval_plan, mut eval_params) = build_eval_network(&genotype, spec, 99).unwrap();
    // transplant every shared parameter by name
    for (i, meta) in eval_plan.params.iter().enumerate() {
        let from = plan.param_index(&meta.name).expect("supernet superset of eval params");
        eval_params[i] = params[from].clone();
    }

    let images = random_images(vec![2, 1, 8, 8], 3);
    let labels = [0usize, 2];

    let mut t1 = Tape::new();
    let sup = plan
        .bound_loss(&mut t1, &params, Some(&arch), TrainTarget::None, &images, &labels, None)
        .unwrap();
    let mut t2 = Tape::new();
    let disc = eval_plan
        .bound_loss(&mut t2, &eval_params, None, TrainTarget::None, &images, &labels, None)
        .unwrap();

    let a = t1.value(sup.logits);
    let b = t2.value(disc.logits);
    assert!(a.max_abs_diff(b) < 1e-9, "max diff {}", a.max_abs_diff(b));
}

/// Architecture gradients exist, are nonzero for a generic input, and
/// match finite differences.
#[test]
fn arch_gradient_matches_finite_differences() {
    let spec = spec3(4);
    let (plan, params, arch) = build_supernet(spec, 5).unwrap();
    let images = random_images(vec![2, 1, 8, 8], 11);
    let labels = [1usize, 2];

    let mut tape = Tape::new();
    let bound = plan
        .bound_loss(&mut tape, &params, Some(&arch), TrainTarget::Arch, &images, &labels, None)
        .unwrap();
    let grads = tape.backward(bound.loss).unwrap();
    let (nid, rid) = bound.arch_ids.unwrap();
    let gn = grads.get(nid).unwrap().clone();
    let gr = grads.get(rid).unwrap().clone();
    assert!(gn.sq_l2_norm() > 0.0, "normal arch gradient vanished");
    assert!(gr.sq_l2_norm() > 0.0, "reduction arch gradient vanished");

    // finite differences over the normal matrix
    let f = |values: &[f64]| -> f64 {
        let mut a = arch.clone();
        a.normal = Tensor::from_vec(a.normal.shape().to_vec(), values.to_vec()).unwrap();
        let mut t = Tape::new();
        let b = plan
            .bound_loss(&mut t, &params, Some(&a), TrainTarget::None, &images, &labels, None)
            .unwrap();
        t.value(b.loss).item()
    };
    let numeric = gradcheck::finite_diff_gradient(f, arch.normal.data(), 1e-5);
    let err = gradcheck::max_relative_error(gn.data(), &numeric);
    assert!(err < 1e-4, "arch gradient rel err {err:.3e}");
}

/// Cell arithmetic on the smallest cell: with mass on identity for both
/// edges into the single intermediate node, the node representation is
/// the sum of both preprocessed inputs.
#[test]
fn three_node_cell_sums_its_inputs() {
    let spec = spec3(3);
    let (plan, params, mut arch) = build_supernet(spec, 2).unwrap();
    let prims = CATALOG.len();
    for row in 0..2 {
        arch.normal.data_mut()[row * prims + PrimitiveKind::Zero.index()] = 1000.0;
        arch.reduce.data_mut()[row * prims + PrimitiveKind::Zero.index()] = 1000.0;
    }
    // all mass on zero: every intermediate node is exactly zero, so the
    // logits equal the classifier bias response (zeros)
    let images = random_images(vec![2, 1, 8, 8], 7);
    let mut tape = Tape::new();
    let bound = plan
        .bound_loss(&mut tape, &params, Some(&arch), TrainTarget::None, &images, &[0, 1], None)
        .unwrap();
    let logits = tape.value(bound.logits);
    // classifier bias is zero-initialized, so logits vanish entirely
    assert!(logits.data().iter().all(|v| v.abs() < 1e-12));
}

/// Expected value of dropout-masked paths equals the deterministic sum
/// for a linear toy cell: node = drop(identity(x0)) + drop(avgpool(x1)).
/// Monte-Carlo over 10^4 masks, relative error under 2%.
#[test]
fn path_dropout_is_unbiased_in_expectation() {
    let x0 = random_images(vec![2, 2, 6, 6], 13);
    let x1 = random_images(vec![2, 2, 6, 6], 14);

    // deterministic node value
    let deterministic = {
        let mut t = Tape::new();
        let a = t.leaf(x0.clone(), false);
        let b = t.leaf(x1.clone(), false);
        let pooled = t.avg_pool(b, 3, 1, 1).unwrap();
        let node = t.add(a, pooled).unwrap();
        t.value(node).data().to_vec()
    };

    let p = 0.25;
    let keep = 1.0 - p;
    let trials = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut acc = vec![0.0; deterministic.len()];
    for _ in 0..trials {
        let mut t = Tape::new();
        let a = t.leaf(x0.clone(), false);
        let b = t.leaf(x1.clone(), false);
        let pooled = t.avg_pool(b, 3, 1, 1).unwrap();
        let mask = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..2).map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep }).collect()
        };
        let m0 = mask(&mut rng);
        let m1 = mask(&mut rng);
        let da = t.mul_sample_mask(a, m0).unwrap();
        let db = t.mul_sample_mask(pooled, m1).unwrap();
        let node = t.add(da, db).unwrap();
        for (s, v) in acc.iter_mut().zip(t.value(node).data()) {
            *s += v;
        }
    }
    for s in acc.iter_mut() {
        *s /= trials as f64;
    }
    let scale: f64 = deterministic.iter().map(|v| v.abs()).fold(0.1, f64::max);
    for (m, b) in acc.iter().zip(&deterministic) {
        assert!(
            (m - b).abs() / scale < 0.02,
            "dropout mean {m:.5} deviates from deterministic {b:.5}"
        );
    }
}

/// p = 0 must be bit-identical to the deterministic forward.
#[test]
fn zero_dropout_is_deterministic_forward() {
    let spec = spec3(3);
    let genotype = Genotype {
        normal: vec![
            GenotypeEdge(PrimitiveKind::SepConv3x3, 0, 2),
            GenotypeEdge(PrimitiveKind::Identity, 1, 2),
        ],
        reduce: vec![
            GenotypeEdge(PrimitiveKind::SepConv3x3, 0, 2),
            GenotypeEdge(PrimitiveKind::Identity, 1, 2),
        ],
        nodes: 3,
        k: 2,
    };
    let (plan, params) = build_eval_network(&genotype, spec, 8).unwrap();
    let images = random_images(vec![2, 1, 8, 8], 17);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut t1 = Tape::new();
    let b1 = plan.bind(&mut t1, &params, None, false, false);
    let plain = plan.forward(&mut t1, &b1, &images, None).unwrap();
    let mut t2 = Tape::new();
    let b2 = plan.bind(&mut t2, &params, None, false, false);
    let dropped = plan
        .forward(&mut t2, &b2, &images, Some(Dropout { probability: 0.0, rng: &mut rng }))
        .unwrap();
    assert_eq!(t1.value(plain).data(), t2.value(dropped).data());
}

/// Near-total dropout silences every path: logits collapse to the
/// zero-bias classifier response.
#[test]
fn extreme_dropout_silences_paths() {
    let spec = spec3(3);
    let genotype = Genotype {
        normal: vec![
            GenotypeEdge(PrimitiveKind::Identity, 0, 2),
            GenotypeEdge(PrimitiveKind::MaxPool3x3, 1, 2),
        ],
        reduce: vec![
            GenotypeEdge(PrimitiveKind::Identity, 0, 2),
            GenotypeEdge(PrimitiveKind::MaxPool3x3, 1, 2),
        ],
        nodes: 3,
        k: 2,
    };
    let (plan, params) = build_eval_network(&genotype, spec, 12).unwrap();
    let images = random_images(vec![4, 1, 8, 8], 23);
    // with p ~ 1 every mask draw is zero with overwhelming probability
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tape::new();
    let binding = plan.bind(&mut t, &params, None, false, false);
    let out = plan
        .forward(&mut t, &binding, &images, Some(Dropout { probability: 0.9999, rng: &mut rng }))
        .unwrap();
    // every cell output became zeros; batch-norm shifts are zero, so the
    // final logits are exactly the classifier bias (zeros)
    assert!(t.value(out).data().iter().all(|v| v.abs() < 1e-9));
}
