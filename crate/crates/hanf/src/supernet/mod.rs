//! The continuous cell-based architecture space: mixed operations over a
//! primitive catalog, normal/reduction cells, discretization into a
//! [`Genotype`], and the evaluation network built from one.

pub mod arch;
pub mod genotype;
pub mod network;
pub mod primitive;

pub use arch::{edge_count, edge_list, ArchParams};
pub use genotype::{discretize, Genotype, GenotypeEdge};
pub use network::{
    build_eval_network, build_supernet, reduction_positions, ArchNodes, Binding, CellKind, Dropout,
    NetworkPlan, NetworkSpec,
};
pub use primitive::{PrimitiveKind, CATALOG};
