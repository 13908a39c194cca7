use std::collections::BTreeMap;

use crate::entities::messages::MessageTag;

use super::{EntityId, RoleKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommCounts {
    pub tokens: u64,
    pub bytes: u64,
}

impl std::ops::AddAssign for CommCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tokens += rhs.tokens;
        self.bytes += rhs.bytes;
    }
}

/// Incoming authentication traffic per entity. One token is one top-level
/// field of M1..M5 as defined for the message, whatever the bytes carry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommMeter {
    per_entity: BTreeMap<EntityId, CommCounts>,
}

impl CommMeter {
    pub fn record(&mut self, dst: EntityId, tag: MessageTag, payload_len: usize) {
        if !tag.is_auth() {
            return;
        }
        let entry = self.per_entity.entry(dst).or_default();
        entry.tokens += tag.field_names().len() as u64;
        entry.bytes += payload_len as u64;
    }

    pub fn entity(&self, id: EntityId) -> CommCounts {
        self.per_entity.get(&id).copied().unwrap_or_default()
    }

    pub fn role(&self, role: RoleKind) -> CommCounts {
        let mut total = CommCounts::default();
        for (id, counts) in &self.per_entity {
            if id.role() == role {
                total += *counts;
            }
        }
        total
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityId, &CommCounts)> {
        self.per_entity.iter()
    }
}
