//! In-memory image-classification datasets.

use crate::diffcore::Tensor;
use crate::error::{HanfError, Result};

/// Images as (N, C, H, W) with values in [0, 1] plus integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(HanfError::shape(
                "dataset",
                format!("images must be (N, C, H, W), got {:?}", images.shape()),
            ));
        }
        if images.dim(0) != labels.len() || labels.is_empty() {
            return Err(HanfError::InvalidArgument(format!(
                "{} images vs {} labels",
                images.dim(0),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(HanfError::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.dim(1)
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.images.dim(2), self.images.dim(3))
    }

    fn sample_stride(&self) -> usize {
        self.images.dim(1) * self.images.dim(2) * self.images.dim(3)
    }

    /// Copies the given samples into a new (n, C, H, W) tensor + labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let stride = self.sample_stride();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        let shape = vec![indices.len(), self.images.dim(1), self.images.dim(2), self.images.dim(3)];
        (Tensor::from_vec(shape, data).expect("gather shape"), labels)
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(HanfError::InvalidArgument(format!(
                "cannot take {n} of {} samples",
                self.len()
            )));
        }
        let indices: Vec<usize> = (0..n).collect();
        let (images, labels) = self.gather(&indices);
        Dataset::new(images, labels, self.classes)
    }

    /// Adaptive average pooling to `target x target` pixels. Each output
    /// cell averages the input bin `[floor(i*H/t), ceil((i+1)*H/t))`.
    pub fn downsample(&self, target: usize) -> Result<Dataset> {
        let (h, w) = self.hw();
        if target == 0 || target > h || target > w {
            return Err(HanfError::InvalidArgument(format!(
                "cannot downsample {h}x{w} images to {target}x{target}"
            )));
        }
        let (n, c) = (self.len(), self.channels());
        let mut out = Tensor::zeros(vec![n, c, target, target]);
        let bin = |i: usize, input: usize| -> (usize, usize) {
            let lo = i * input / target;
            let hi = ((i + 1) * input).div_ceil(target);
            (lo, hi.min(input))
        };
        {
            let ov = out.data_mut();
            let xv = self.images.data();
            for plane in 0..n * c {
                let src = &xv[plane * h * w..(plane + 1) * h * w];
                let dst = &mut ov[plane * target * target..(plane + 1) * target * target];
                for oy in 0..target {
                    let (y0, y1) = bin(oy, h);
                    for ox in 0..target {
                        let (x0, x1) = bin(ox, w);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                acc += src[y * w + x];
                            }
                        }
                        dst[oy * target + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                    }
                }
            }
        }
        Dataset::new(out, self.labels.clone(), self.classes)
    }
}
