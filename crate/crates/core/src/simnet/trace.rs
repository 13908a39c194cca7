use std::fmt;

use crate::entities::messages::MessageTag;
use crate::entities::SessionId;

use super::{Channel, EntityId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(String),
    /// Removed before delivery by the adversary or a link fault.
    Dropped(String),
    /// Delivered to a handler with nothing to accept or reject.
    Delivered,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accepted => f.write_str("accepted"),
            Verdict::Rejected(why) => write!(f, "rejected:{why}"),
            Verdict::Dropped(why) => write!(f, "dropped:{why}"),
            Verdict::Delivered => f.write_str("delivered"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub tick: u64,
    pub src: EntityId,
    pub dst: EntityId,
    pub tag: MessageTag,
    pub channel: Channel,
    pub session: Option<SessionId>,
    pub injected: Option<&'static str>,
    pub verdict: Verdict,
    pub payload: Vec<u8>,
}

impl TraceEntry {
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn is_delivery(&self) -> bool {
        !matches!(self.verdict, Verdict::Dropped(_))
    }

    pub fn to_line(&self) -> String {
        let session = self.session.map_or_else(|| "-".to_string(), |s| s.0.to_string());
        let mut line = format!(
            "tick={} src={} dst={} tag={} len={} channel={} session={} verdict={}",
            self.tick,
            self.src,
            self.dst,
            self.tag.name(),
            self.len(),
            self.channel,
            session,
            self.verdict
        );
        if let Some(kind) = self.injected {
            line.push_str(" injected=");
            line.push_str(kind);
        }
        line
    }
}
