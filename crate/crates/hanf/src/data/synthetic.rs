//! Class-conditional Gaussian-blob images for desk-scale runs.
//!
//! Each class gets a fixed random template; samples are the template plus
//! pixel noise, clamped to [0, 1]. For noise well below the template
//! separation a nearest-template classifier is nearly perfect, which gives
//! end-to-end runs a known attainable accuracy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::rng::{self, Stream};

use super::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub noise_sigma: f64,
}

/// The per-class template images, shape (classes, 1, H, W).
pub fn synth_templates(spec: &SyntheticSpec, seed: u64) -> Tensor {
    let mut rng = rng::rng(seed, Stream::Synthetic, 0);
    let numel = spec.classes * spec.height * spec.width;
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_vec(vec![spec.classes, 1, spec.height, spec.width], data).expect("template shape")
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; consumes two uniforms per call
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Deterministic synthetic dataset: `samples` images cycling through the
/// classes, each a noisy copy of its class template.
pub fn synth_dataset(spec: &SyntheticSpec, seed: u64) -> Dataset {
    let templates = synth_templates(spec, seed);
    let mut rng = rng::rng(seed, Stream::Synthetic, 1);
    let px = spec.height * spec.width;
    let mut data = Vec::with_capacity(spec.samples * px);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let class = i % spec.classes;
        labels.push(class);
        let template = &templates.data()[class * px..(class + 1) * px];
        for &t in template {
            let v = t + spec.noise_sigma * gaussian(&mut rng);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    let images = Tensor::from_vec(vec![spec.samples, 1, spec.height, spec.width], data).expect("image shape");
    Dataset::new(images, labels, spec.classes).expect("valid synthetic dataset")
}
