//! Metrics derived from a finished run.

use std::fmt::Write as _;

use crate::crypto::OpCounters;
use crate::scenario::{ExpectedOutcome, Expectations};
use crate::simnet::{CommCounts, RoleKind, RunOutcome, SessionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleRow {
    pub role: RoleKind,
    pub ops: OpCounters,
    pub comm: CommCounts,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub curve: String,
    pub completed_runs: u64,
    pub sessions: u64,
    pub sessions_terminated: u64,
    pub rows: Vec<RoleRow>,
    pub cag_setup_ops: OpCounters,
    pub transactions_created: u64,
    pub transactions_accepted: u64,
    pub transactions_rejected: u64,
    pub blocks: u64,
    pub committed_txs: u64,
    pub aborts: u64,
    pub view_changes: u64,
    pub failures: Vec<String>,
    pub verdict: String,
}

impl MetricsReport {
    pub fn from_outcome(outcome: &RunOutcome, expect: &Expectations) -> Self {
        let rows = RoleKind::ALL
            .iter()
            .map(|&role| RoleRow {
                role,
                ops: outcome.ops.get(&role).copied().unwrap_or_default(),
                comm: outcome.comm.role(role),
            })
            .collect();
        let ledger = outcome.consensus.as_ref().map(|c| c.reference_ledger());
        let failures = outcome.check(expect);
        let verdict = if !failures.is_empty() {
            "failed".to_string()
        } else if expect.outcome == Some(ExpectedOutcome::Terminated) {
            "attack defeated".to_string()
        } else {
            "ok".to_string()
        };
        let sessions = outcome.sessions.len() as u64;
        MetricsReport {
            scenario: outcome.scenario.clone(),
            seed: outcome.seed,
            curve: outcome.curve.to_string(),
            completed_runs: outcome.completed_runs(),
            sessions,
            sessions_terminated: outcome
                .sessions
                .iter()
                .filter(|s| matches!(s.outcome, SessionOutcome::Terminated(_)))
                .count() as u64,
            rows,
            cag_setup_ops: outcome.cag_setup_ops,
            transactions_created: outcome.transactions_created,
            transactions_accepted: outcome.transactions_accepted,
            transactions_rejected: outcome.transactions_rejected,
            blocks: ledger.map_or(0, |l| l.len()),
            committed_txs: ledger.map_or(0, |l| l.blocks().iter().map(|b| b.txs.len() as u64).sum()),
            aborts: outcome.consensus.as_ref().map_or(0, |c| c.aborts),
            view_changes: outcome.consensus.as_ref().map_or(0, |c| c.view_changes),
            failures,
            verdict,
        }
    }

    pub fn row(&self, role: RoleKind) -> RoleRow {
        self.rows.iter().copied().find(|r| r.role == role).expect("every role has a row")
    }

    /// `key=value` lines, one record per line.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("scenario", &self.scenario);
        put("seed", &self.seed);
        put("curve", &self.curve);
        put("verdict", &self.verdict);
        put("sessions", &self.sessions);
        put("sessions.authenticated", &self.completed_runs);
        put("sessions.terminated", &self.sessions_terminated);
        for r in &self.rows {
            let role = r.role.to_string().to_lowercase();
            put(&format!("{role}.ecm"), &r.ops.ecm);
            put(&format!("{role}.hash"), &r.ops.hash);
            put(&format!("{role}.tokens_in"), &r.comm.tokens);
            put(&format!("{role}.bytes_in"), &r.comm.bytes);
        }
        put("cag.setup_ecm", &self.cag_setup_ops.ecm);
        put("cag.setup_hash", &self.cag_setup_ops.hash);
        put("tx.created", &self.transactions_created);
        put("tx.accepted", &self.transactions_accepted);
        put("tx.rejected", &self.transactions_rejected);
        put("consensus.blocks", &self.blocks);
        put("consensus.committed_txs", &self.committed_txs);
        put("consensus.aborts", &self.aborts);
        put("consensus.view_changes", &self.view_changes);
        for f in &self.failures {
            put("failure", f);
        }
        out
    }
}

/// Per-role table plus the ordering checks. Figures are per run when every
/// session completed, totals otherwise.
pub fn report_overheads(m: &MetricsReport) -> String {
    let mut out = String::new();
    if m.completed_runs == 0 {
        out.push_str("warning: no completed authentication runs, nothing to compare\n");
        return out;
    }
    // Aborted runs leave partial work in the meters, so only a clean set of
    // runs can be divided out.
    let clean = m.completed_runs == m.sessions;
    let runs = if clean { m.completed_runs } else { 1 };
    let per_run = |v: u64| {
        if v.is_multiple_of(runs) {
            (v / runs).to_string()
        } else {
            format!("{:.2}", v as f64 / runs as f64)
        }
    };
    if clean {
        let _ = writeln!(out, "per completed run ({runs} runs)");
    } else {
        let _ = writeln!(
            out,
            "totals ({} of {} sessions completed, partial runs included)",
            m.completed_runs, m.sessions
        );
    }
    let _ = writeln!(out, "{:<5} {:>6} {:>6} {:>10} {:>10}", "role", "ECM", "Hash", "tokens_in", "bytes_in");
    for r in &m.rows {
        let _ = writeln!(
            out,
            "{:<5} {:>6} {:>6} {:>10} {:>10}",
            r.role.to_string(),
            per_run(r.ops.ecm),
            per_run(r.ops.hash),
            per_run(r.comm.tokens),
            per_run(r.comm.bytes)
        );
    }
    let (ev, cs, cag) = (m.row(RoleKind::Ev), m.row(RoleKind::Cs), m.row(RoleKind::Cag));
    let holds = |b: bool| if b { "holds" } else { "VIOLATED" };
    let _ = writeln!(
        out,
        "ordering ECM    EV <= CAG < CS: {}",
        holds(ev.ops.ecm <= cag.ops.ecm && cag.ops.ecm < cs.ops.ecm)
    );
    let _ = writeln!(
        out,
        "ordering tokens EV <= CS < CAG: {}",
        holds(ev.comm.tokens <= cs.comm.tokens && cs.comm.tokens < cag.comm.tokens)
    );
    out
}

/// Aligned summary of the whole report.
pub fn summary_table(m: &MetricsReport) -> String {
    let mut out = format!("scenario {} (seed {}, curve {}): {}\n", m.scenario, m.seed, m.curve, m.verdict);
    let _ = writeln!(out, "{:<5} {:>6} {:>6} {:>10} {:>10}", "role", "ECM", "Hash", "tokens_in", "bytes_in");
    for r in &m.rows {
        let _ = writeln!(
            out,
            "{:<5} {:>6} {:>6} {:>10} {:>10}",
            r.role.to_string(),
            r.ops.ecm,
            r.ops.hash,
            r.comm.tokens,
            r.comm.bytes
        );
    }
    let _ = writeln!(
        out,
        "sessions {} authenticated {} terminated {}",
        m.sessions, m.completed_runs, m.sessions_terminated
    );
    let _ = writeln!(
        out,
        "tx created {} accepted {} rejected {}; blocks {} committed {} aborts {} view changes {}",
        m.transactions_created,
        m.transactions_accepted,
        m.transactions_rejected,
        m.blocks,
        m.committed_txs,
        m.aborts,
        m.view_changes
    );
    for f in &m.failures {
        let _ = writeln!(out, "failure: {f}");
    }
    out
}
