//! Scripted Dolev-Yao style attacker on the open channel.

use thiserror::Error;

use crate::crypto::{CodecError, Digest};
use crate::entities::messages::{field_payload, rewrite_field, MessageTag};
use crate::entities::{PseudoId, SessionId};

use super::{Channel, EntityId, NetworkEvent};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleMatch {
    pub tag: Option<MessageTag>,
    pub src: Option<EntityId>,
    pub dst: Option<EntityId>,
    pub session: Option<SessionId>,
}

impl RuleMatch {
    pub fn matches(&self, event: &NetworkEvent) -> bool {
        self.tag.is_none_or(|t| t == event.tag)
            && self.src.is_none_or(|s| s == event.src)
            && self.dst.is_none_or(|d| d == event.dst)
            && self.session.is_none_or(|s| Some(s) == event.session)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    /// Flip one bit of the field payload, counted from the first byte's LSB.
    FlipBit(usize),
    Replace(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpoofIdentity {
    /// Claim to be this entity, using its registered pseudo identity.
    Entity(EntityId),
    /// A pseudo identity nobody registered.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Drop,
    Delay { ms: u64 },
    /// Deliver a copy `after_ms` after the original was sent.
    Replay { after_ms: u64 },
    Tamper { field: usize, edit: Edit },
    Spoof { identity: SpoofIdentity },
    /// Copy fields (all of them when `None`) from the same message type
    /// captured on another session.
    Splice { donor: SessionId, fields: Option<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryRule {
    pub matcher: RuleMatch,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("{action} needs a message tag to resolve fields")]
    TagRequired { action: &'static str },
    #[error("{tag} has no field {index}")]
    FieldOutOfRange { tag: &'static str, index: usize },
    #[error("{tag} carries no sender pseudo identity")]
    NoPseudoIdField { tag: &'static str },
    #[error("bit {bit} is outside a {len}-byte field")]
    BitOutOfRange { bit: usize, len: usize },
    #[error("cannot spoof {0}: no registered pseudo identity")]
    UnknownSpoofTarget(EntityId),
    #[error("splice donor session {session} has not sent {tag} yet")]
    MissingDonor { session: SessionId, tag: &'static str },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// What the attacker can observe or obtain while rewriting traffic.
pub trait AdversaryContext {
    fn pseudo_id_of(&self, id: EntityId) -> Option<PseudoId>;
    fn captured(&self, session: SessionId, tag: MessageTag) -> Option<Vec<u8>>;
    fn random_digest(&mut self) -> Digest;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryScript {
    pub rules: Vec<AdversaryRule>,
}

impl AdversaryScript {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Static checks that do not depend on run-time traffic.
    pub fn validate(&self) -> Result<(), (usize, AdversaryError)> {
        for (i, rule) in self.rules.iter().enumerate() {
            let tag = rule.matcher.tag;
            let need_tag = |action| tag.ok_or((i, AdversaryError::TagRequired { action }));
            let check_field = |tag: MessageTag, index: usize| {
                if index < tag.field_names().len() {
                    Ok(())
                } else {
                    Err((i, AdversaryError::FieldOutOfRange { tag: tag.name(), index }))
                }
            };
            match &rule.action {
                Action::Tamper { field, .. } => check_field(need_tag("tamper")?, *field)?,
                Action::Splice { fields, .. } => {
                    let tag = need_tag("splice")?;
                    for f in fields.iter().flatten() {
                        check_field(tag, *f)?;
                    }
                }
                Action::Spoof { .. } => {
                    let tag = need_tag("spoof")?;
                    if tag.sender_pseudo_id_field().is_none() {
                        return Err((i, AdversaryError::NoPseudoIdField { tag: tag.name() }));
                    }
                }
                Action::Drop | Action::Delay { .. } | Action::Replay { .. } => {}
            }
        }
        Ok(())
    }

    /// Runs `event` through the rules in order. A replayed copy leaves the
    /// pipeline as soon as it is made, so later rules (typically a drop that
    /// withholds the original) only touch the original.
    pub fn apply(
        &self,
        event: NetworkEvent,
        ctx: &mut dyn AdversaryContext,
    ) -> Result<Vec<NetworkEvent>, AdversaryError> {
        if event.channel != Channel::Open {
            return Ok(vec![event]);
        }
        let mut out = Vec::new();
        let mut current = Some(event);
        for rule in &self.rules {
            let Some(ev) = current.as_mut() else { break };
            if !rule.matcher.matches(ev) {
                continue;
            }
            match &rule.action {
                Action::Drop => current = None,
                Action::Delay { ms } => ev.deliver_at += ms,
                Action::Replay { after_ms } => {
                    let mut copy = ev.clone();
                    copy.deliver_at = ev.sent_at + after_ms;
                    copy.injected = Some("replay");
                    out.push(copy);
                }
                Action::Tamper { field, edit } => {
                    let mut payload = field_payload(&ev.payload, *field)?;
                    match edit {
                        Edit::FlipBit(bit) => {
                            let len = payload.len();
                            let byte = payload
                                .get_mut(bit / 8)
                                .ok_or(AdversaryError::BitOutOfRange { bit: *bit, len })?;
                            *byte ^= 1 << (bit % 8);
                        }
                        Edit::Replace(bytes) => payload = bytes.clone(),
                    }
                    ev.payload = rewrite_field(&ev.payload, *field, payload)?;
                    ev.injected = Some("tamper");
                }
                Action::Spoof { identity } => {
                    let index = ev
                        .tag
                        .sender_pseudo_id_field()
                        .ok_or(AdversaryError::NoPseudoIdField { tag: ev.tag.name() })?;
                    let ptd = match identity {
                        SpoofIdentity::Entity(id) => {
                            let ptd = ctx.pseudo_id_of(*id).ok_or(AdversaryError::UnknownSpoofTarget(*id))?;
                            ev.src = *id;
                            ptd
                        }
                        SpoofIdentity::Random => PseudoId(ctx.random_digest()),
                    };
                    ev.payload = rewrite_field(&ev.payload, index, ptd.0 .0.to_vec())?;
                    ev.injected = Some("spoof");
                }
                Action::Splice { donor, fields } => {
                    let donor_bytes = ctx
                        .captured(*donor, ev.tag)
                        .ok_or(AdversaryError::MissingDonor { session: *donor, tag: ev.tag.name() })?;
                    match fields {
                        None => ev.payload = donor_bytes,
                        Some(indices) => {
                            for &i in indices {
                                ev.payload = rewrite_field(&ev.payload, i, field_payload(&donor_bytes, i)?)?;
                            }
                        }
                    }
                    ev.injected = Some("splice");
                }
            }
        }
        out.extend(current);
        Ok(out)
    }
}
