//! Federated orchestration: partitioning, client steps, FedAvg, and the
//! alternating HO/NAS server loop for both stages.

pub mod client;
pub mod partition;
pub mod server;
pub mod trace;

pub use client::{
    client_eval_step, client_search_step, evaluate_split, BoundLoss, ClientModel, RoundContext,
    RoundReport, TrainTarget,
};
pub use partition::{partition_iid, partition_label_skew, ClientShard};
pub use server::{
    fedavg, fedavg_arch, BanditParams, EvalDriver, EvalOutcome, RoundSummary, SearchDriver,
    SearchOutcome, Snapshot, StageParams, StageTraces,
};
pub use trace::{round_trace_csv, ClientRecord, PhaseKind, ServerRecord};
