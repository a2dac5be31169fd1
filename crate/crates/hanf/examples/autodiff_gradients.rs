//! Records a small computation on the tape, backpropagates, and checks
//! the result against central finite differences.
//!
//! ```bash
//! cargo run --release -p hanf --example autodiff_gradients
//! ```

use hanf::diffcore::gradcheck::{finite_diff_gradient, max_relative_error};
use hanf::diffcore::{ConvAttrs, Tape, Tensor};

fn main() -> hanf::Result<()> {
    // loss = sum(relu(conv(x, w))^2) on a 1x2x5x5 input
    let x0: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let w0: Vec<f64> = (0..18).map(|i| (i as f64 * 0.73).cos() * 0.5).collect();

    let eval = |values: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1, 2, 5, 5], values[..50].to_vec()).unwrap(), true);
        let w = tape.leaf(Tensor::from_vec(vec![1, 2, 3, 3], values[50..].to_vec()).unwrap(), true);
        let y = tape
            .conv2d(x, w, ConvAttrs { stride: 1, padding: 1, dilation: 1, groups: 1 })
            .unwrap();
        let r = tape.relu(y);
        let sq = tape.mul(r, r).unwrap();
        let loss = tape.sum(sq);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1, 2, 5, 5], x0.clone())?, true);
    let w = tape.leaf(Tensor::from_vec(vec![1, 2, 3, 3], w0.clone())?, true);
    let y = tape.conv2d(x, w, ConvAttrs { stride: 1, padding: 1, dilation: 1, groups: 1 })?;
    let r = tape.relu(y);
    let sq = tape.mul(r, r)?;
    let loss = tape.sum(sq);
    println!("loss = {:.6}", tape.value(loss).item());

    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = grads
        .get(x)
        .unwrap()
        .data()
        .iter()
        .chain(grads.get(w).unwrap().data())
        .copied()
        .collect();

    let point: Vec<f64> = x0.iter().chain(&w0).copied().collect();
    let numeric = finite_diff_gradient(eval, &point, 1e-5);
    let err = max_relative_error(&analytic, &numeric);
    println!("gradient entries: {}", analytic.len());
    println!("max relative error vs finite differences: {err:.3e}");
    assert!(err < 1e-6);
    println!("tape gradients agree with the numerical oracle");
    Ok(())
}
