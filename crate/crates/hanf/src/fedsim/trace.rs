//! Round-trace records and their CSV form.
//!
//! One record per (round, client) carries the probe losses and local
//! accuracy; one server record per round carries the aggregated metrics
//! and bandit state. Both record kinds share one file, discriminated by
//! the leading `record` column, ordered by (round, client id).

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Ho,
    Exploit,
}

impl PhaseKind {
    pub fn label(self) -> &'static str {
        match self {
            PhaseKind::Ho => "ho",
            PhaseKind::Exploit => "exploit",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientRecord {
    pub round: usize,
    pub phase: usize,
    pub kind: PhaseKind,
    pub client: usize,
    pub config_index: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub accuracy: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ServerRecord {
    pub round: usize,
    pub phase: usize,
    pub kind: PhaseKind,
    pub config_index: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub accuracy: f64,
    pub kappa: usize,
    pub entropy: f64,
}

/// Single-file CSV: per round, all client rows then the server row.
pub fn round_trace_csv(clients: &[ClientRecord], servers: &[ServerRecord]) -> String {
    let mut out = String::from(
        "record,round,phase,phase_kind,client,config_index,loss_before,loss_after,accuracy,ok,kappa,entropy\n",
    );
    let mut ci = 0;
    for s in servers {
        while ci < clients.len() && clients[ci].round == s.round {
            let c = &clients[ci];
            out.push_str(&format!(
                "client,{},{},{},{},{},{},{},{},{},,\n",
                c.round,
                c.phase,
                c.kind.label(),
                c.client,
                c.config_index,
                c.loss_before,
                c.loss_after,
                c.accuracy,
                c.ok,
            ));
            ci += 1;
        }
        out.push_str(&format!(
            "server,{},{},{},,{},{},{},{},,{},{}\n",
            s.round,
            s.phase,
            s.kind.label(),
            s.config_index,
            s.loss_before,
            s.loss_after,
            s.accuracy,
            s.kappa,
            s.entropy,
        ));
    }
    out
}
