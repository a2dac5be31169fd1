//! Architectural parameters: one real weight per primitive per edge,
//! shared by all cells of the same kind.

use crate::diffcore::Tensor;

use super::primitive::CATALOG;

/// Directed edges feeding the intermediate nodes of a cell with
/// `nodes` total nodes (the first two are inputs). Ordered by
/// (target, source), which fixes the architecture-matrix row layout.
pub fn edge_list(nodes: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for target in 2..nodes {
        for source in 0..target {
            edges.push((source, target));
        }
    }
    edges
}

pub fn edge_count(nodes: usize) -> usize {
    (2..nodes).sum()
}

/// The two architecture matrices, shape `[edges, primitives]`. Zero
/// initialization gives every candidate operation equal mixing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams {
    pub normal: Tensor,
    pub reduce: Tensor,
}

impl ArchParams {
    pub fn zeros(nodes: usize) -> Self {
        let shape = vec![edge_count(nodes), CATALOG.len()];
        ArchParams { normal: Tensor::zeros(shape.clone()), reduce: Tensor::zeros(shape) }
    }

    pub fn edges(&self) -> usize {
        self.normal.dim(0)
    }

    pub fn all_finite(&self) -> bool {
        self.normal.all_finite() && self.reduce.all_finite()
    }
}
