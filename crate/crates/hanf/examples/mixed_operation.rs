//! Shows how architecture weights blend candidate operations on one edge
//! and how gradients flow back into them.
//!
//! ```bash
//! cargo run --release -p hanf --example mixed_operation
//! ```

use hanf::diffcore::{Tape, Tensor};
use hanf::supernet::CATALOG;

fn main() -> hanf::Result<()> {
    let mut tape = Tape::new();

    // a single edge's architecture row, biased toward identity
    let mut row = vec![0.0; CATALOG.len()];
    row[6] = 2.0; // identity
    let arch = tape.leaf(Tensor::from_vec(vec![1, CATALOG.len()], row)?, true);
    let slice = tape.row_slice(arch, 0)?;
    let probs = tape.softmax(slice);

    println!("softmax mixing weights:");
    for (prim, p) in CATALOG.iter().zip(tape.value(probs).data()) {
        println!("  {:<14} {p:.4}", prim.name());
    }
    let total: f64 = tape.value(probs).data().iter().sum();
    println!("  sum = {total:.12}");

    // blend two toy branches: the input itself and its negation
    let x = tape.leaf(Tensor::from_vec(vec![4], vec![1.0, -2.0, 3.0, -4.0])?, false);
    let neg = tape.scale(x, -1.0);
    let c_id = tape.index_scalar(probs, 6)?;
    let c_zero = tape.index_scalar(probs, 7)?;
    let t0 = tape.mul_scalar(c_id, x)?;
    let t1 = tape.mul_scalar(c_zero, neg)?;
    let out = tape.add(t0, t1)?;
    println!("blended output: {:?}", tape.value(out).data());

    // gradient of sum(out) w.r.t. the architecture row
    let loss = tape.sum(out);
    let grads = tape.backward(loss)?;
    println!("arch gradient:  {:?}", grads.get(arch).unwrap().data());
    Ok(())
}
