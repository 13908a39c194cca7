//! Deterministic discrete-event network: virtual clock, per-link delay with
//! seeded jitter, secure and open channels, and a scripted adversary that
//! only sees the open channel.

pub mod adversary;
pub mod meter;
pub mod queue;
pub mod trace;
pub mod world;

use std::fmt;
use std::str::FromStr;

use crate::entities::messages::MessageTag;
use crate::entities::SessionId;

pub use adversary::{Action, AdversaryError, AdversaryRule, AdversaryScript, Edit, RuleMatch, SpoofIdentity};
pub use meter::{CommCounts, CommMeter};
pub use queue::EventQueue;
pub use trace::{TraceEntry, Verdict};
pub use world::{
    run_scenario, ConsensusReport, RoleKind, RunOutcome, SessionOutcome, SessionReport, SimError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityId {
    Cag,
    Cs(u32),
    Ev(u32),
}

impl EntityId {
    pub fn role(self) -> RoleKind {
        match self {
            EntityId::Cag => RoleKind::Cag,
            EntityId::Cs(_) => RoleKind::Cs,
            EntityId::Ev(_) => RoleKind::Ev,
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::Cag => f.write_str("CAG"),
            EntityId::Cs(i) => write!(f, "CS{i}"),
            EntityId::Ev(i) => write!(f, "EV{i}"),
        }
    }
}

impl FromStr for EntityId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        if upper == "CAG" {
            return Ok(EntityId::Cag);
        }
        let parse = |rest: &str| rest.parse::<u32>().ok().filter(|i| *i > 0);
        if let Some(i) = upper.strip_prefix("CS").and_then(parse) {
            return Ok(EntityId::Cs(i));
        }
        if let Some(i) = upper.strip_prefix("EV").and_then(parse) {
            return Ok(EntityId::Ev(i));
        }
        Err(format!("unknown entity `{s}` (expected CAG, CS<n> or EV<n>)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// Registration, cable and backbone traffic; invisible to the adversary.
    Secure,
    /// Wireless and public links carrying M1..M5.
    Open,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Secure => "secure",
            Channel::Open => "open",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkEvent {
    pub sent_at: u64,
    pub deliver_at: u64,
    pub src: EntityId,
    pub dst: EntityId,
    pub tag: MessageTag,
    pub payload: Vec<u8>,
    pub channel: Channel,
    /// Connection the message travels on; the receiver handles it in this session.
    pub session: Option<SessionId>,
    /// Set on copies and rewrites produced by the adversary.
    pub injected: Option<&'static str>,
}
