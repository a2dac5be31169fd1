//! Builds a small supernet, runs a mixed-operation forward/backward pass,
//! and prints the mixing weights and timing.
//!
//! ```bash
//! cargo run --release -p hanf --example supernet_forward
//! ```

use std::time::Instant;

use hanf::data::{synth_dataset, SyntheticSpec};
use hanf::diffcore::Tape;
use hanf::fedsim::{ClientModel, TrainTarget};
use hanf::supernet::{build_supernet, discretize, NetworkSpec};

fn main() -> hanf::Result<()> {
    let spec = NetworkSpec {
        cells: 3,
        nodes: 5,
        channels: 8,
        classes: 4,
        in_channels: 1,
        input_hw: (8, 8),
    };
    let (plan, params, arch) = build_supernet(spec, 7)?;
    let total: usize = params.iter().map(|p| p.numel()).sum();
    println!("supernet: {} parameter tensors, {} scalars", params.len(), total);
    println!("arch matrices: {:?} per cell kind", arch.normal.shape());

    let data = synth_dataset(
        &SyntheticSpec { classes: 4, height: 8, width: 8, samples: 64, noise_sigma: 0.05 },
        7,
    );

    // forward only
    let t0 = Instant::now();
    let mut tape = Tape::new();
    let bound = plan.bound_loss(&mut tape, &params, Some(&arch), TrainTarget::None, &data.images, &data.labels, None)?;
    let fwd = t0.elapsed();
    println!("forward  (batch 64): {:>8.1?}  loss {:.4}", fwd, tape.value(bound.loss).item());

    // forward + backward w.r.t. weights
    let t0 = Instant::now();
    let mut tape = Tape::new();
    let bound = plan.bound_loss(&mut tape, &params, Some(&arch), TrainTarget::Weights, &data.images, &data.labels, None)?;
    let grads = tape.backward(bound.loss)?;
    let wall = t0.elapsed();
    let gnorm: f64 = bound
        .weight_ids
        .iter()
        .filter_map(|&id| grads.get(id))
        .map(|g| g.sq_l2_norm())
        .sum::<f64>()
        .sqrt();
    println!("fwd+bwd/w (batch 64): {:>8.1?}  grad norm {:.4}", wall, gnorm);

    // forward + backward w.r.t. architecture
    let t0 = Instant::now();
    let mut tape = Tape::new();
    let bound = plan.bound_loss(&mut tape, &params, Some(&arch), TrainTarget::Arch, &data.images, &data.labels, None)?;
    let grads = tape.backward(bound.loss)?;
    let wall = t0.elapsed();
    let (nid, _) = bound.arch_ids.expect("supernet has arch");
    let arch_grad = grads.get(nid).expect("arch gradient");
    println!("fwd+bwd/a (batch 64): {:>8.1?}  first-row grad {:?}", wall, &arch_grad.data()[..4]);

    let genotype = discretize(&arch, spec.nodes, 2)?;
    println!("zero-arch genotype:\n{}", genotype.to_json()?);
    Ok(())
}
