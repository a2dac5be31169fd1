//! Discrete architectures and the discretization rule.

use serde::{Deserialize, Serialize};

use crate::diffcore::{kernels, Tensor};
use crate::error::{HanfError, Result};

use super::arch::{edge_list, ArchParams};
use super::primitive::{PrimitiveKind, CATALOG};

/// One retained operation: `(primitive, from-node, to-node)`.
/// Serializes as a JSON `[primitive, from, to]` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeEdge(pub PrimitiveKind, pub usize, pub usize);

/// A discretized architecture: per cell kind, the retained incoming
/// operations for every intermediate node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotype {
    pub normal: Vec<GenotypeEdge>,
    pub reduce: Vec<GenotypeEdge>,
    pub nodes: usize,
    pub k: usize,
}

impl Genotype {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let genotype: Genotype = serde_json::from_str(text)?;
        genotype.validate()?;
        Ok(genotype)
    }

    /// Checks the structural invariants: `zero` never appears, no two
    /// operations connect the same node pair, every intermediate node
    /// keeps exactly `k` incoming operations, and node indices are in
    /// range with `from < to`.
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 {
            return Err(HanfError::InvalidArgument(format!(
                "genotype needs at least 3 nodes, got {}",
                self.nodes
            )));
        }
        for (kind, edges) in [("normal", &self.normal), ("reduce", &self.reduce)] {
            let mut seen = std::collections::BTreeSet::new();
            let mut per_node = vec![0usize; self.nodes];
            for &GenotypeEdge(op, from, to) in edges {
                if op == PrimitiveKind::Zero {
                    return Err(HanfError::InvalidArgument(format!(
                        "{kind} cell contains the zero operation on ({from}, {to})"
                    )));
                }
                if to < 2 || to >= self.nodes || from >= to {
                    return Err(HanfError::InvalidArgument(format!(
                        "{kind} cell has invalid edge ({from}, {to}) for {} nodes",
                        self.nodes
                    )));
                }
                if !seen.insert((from, to)) {
                    return Err(HanfError::InvalidArgument(format!(
                        "{kind} cell connects ({from}, {to}) twice"
                    )));
                }
                per_node[to] += 1;
            }
            for (node, &count) in per_node.iter().enumerate().skip(2) {
                if count != self.k {
                    return Err(HanfError::InvalidArgument(format!(
                        "{kind} cell node {node} keeps {count} operations, expected {}",
                        self.k
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Scored candidate used during discretization.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    weight: f64,
    prim_index: usize,
    source: usize,
}

/// Discretizes one architecture matrix. Per edge, the strongest non-zero
/// primitive (by softmaxed weight) represents the edge; per intermediate
/// node, the `k` best edges are retained. Ties break lexicographically:
/// higher weight, then lower primitive index, then lower source node.
fn discretize_matrix(matrix: &Tensor, nodes: usize, k: usize) -> Vec<GenotypeEdge> {
    let probs = kernels::softmax_fwd(matrix);
    let edges = edge_list(nodes);
    let prims = CATALOG.len();
    let mut retained = Vec::new();
    for target in 2..nodes {
        let mut candidates: Vec<Candidate> = Vec::new();
        for (row, &(source, edge_target)) in edges.iter().enumerate() {
            if edge_target != target {
                continue;
            }
            let row_probs = &probs.data()[row * prims..(row + 1) * prims];
            let mut best = Candidate { weight: f64::NEG_INFINITY, prim_index: 0, source };
            for (pi, &p) in row_probs.iter().enumerate() {
                if CATALOG[pi] == PrimitiveKind::Zero {
                    continue;
                }
                if p > best.weight {
                    best = Candidate { weight: p, prim_index: pi, source };
                }
            }
            candidates.push(best);
        }
        candidates.sort_by(|a, b| {
            b.weight
                .partial_cmp(&a.weight)
                .expect("finite weights")
                .then(a.prim_index.cmp(&b.prim_index))
                .then(a.source.cmp(&b.source))
        });
        for c in candidates.into_iter().take(k) {
            retained.push(GenotypeEdge(CATALOG[c.prim_index], c.source, target));
        }
    }
    // stable output order: by target node, then source
    retained.sort_by_key(|&GenotypeEdge(_, from, to)| (to, from));
    retained
}

/// Extracts the discrete architecture from trained architectural weights.
pub fn discretize(arch: &ArchParams, nodes: usize, k: usize) -> Result<Genotype> {
    let min_in_degree = 2; // node 2 has exactly two incoming edges
    if k == 0 || k > min_in_degree {
        return Err(HanfError::InvalidArgument(format!(
            "k = {k} must be in 1..={min_in_degree} so every node can keep k edges"
        )));
    }
    let genotype = Genotype {
        normal: discretize_matrix(&arch.normal, nodes, k),
        reduce: discretize_matrix(&arch.reduce, nodes, k),
        nodes,
        k,
    };
    genotype.validate()?;
    Ok(genotype)
}
