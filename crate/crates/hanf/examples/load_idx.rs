//! Parses the bundled FashionMNIST subset (IDX format, gzipped), prints
//! header facts and a class histogram, and shows the downsampling hook.
//!
//! ```bash
//! cargo run --release -p hanf --example load_idx
//! ```

use std::path::Path;

use hanf::data::load_idx;

fn main() -> hanf::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fashion");
    let dataset = load_idx(
        &dir.join("fashion-train-images-idx3-ubyte.gz"),
        &dir.join("fashion-train-labels-idx1-ubyte.gz"),
    )?;
    let (h, w) = dataset.hw();
    println!("{} samples at {h}x{w}, {} classes", dataset.len(), dataset.classes);

    let mut hist = vec![0usize; dataset.classes];
    for &l in &dataset.labels {
        hist[l] += 1;
    }
    println!("class histogram: {hist:?}");
    let lo = dataset.images.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = dataset.images.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("pixel range: [{lo:.3}, {hi:.3}]");

    let small = dataset.downsample(14)?;
    let (h, w) = small.hw();
    println!("downsampled to {h}x{w}: {} values per image", h * w);
    Ok(())
}
