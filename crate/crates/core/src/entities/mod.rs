//! Registration and the five-message hierarchical mutual authentication
//! between an EV, a charging station (CS) and the central aggregator (CAG).

pub mod cag;
pub mod cs;
pub mod ev;
pub mod messages;
pub mod registry;
pub mod tokens;

use std::fmt;

use thiserror::Error;

use crate::crypto::{CodecError, CurveError, CurveParams, Digest, Field, FieldKind, Point, Scalar};

pub use cag::{Aggregator, RegistrationError};
pub use cs::{CsPhase, Station};
pub use ev::{EvPhase, Vehicle};
pub use messages::{
    MessageTag, RegistrationRequest, RegistrationResponse, ServiceRequest, M1, M2, M3, M4, M5,
};
pub use registry::{RegisteredKey, Registry};

/// Virtual-clock milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn to_field(self) -> Field {
        Field::timestamp(self.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Maximum accepted age (or lead) of a message timestamp, in virtual ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreshnessWindow(pub u64);

impl Default for FreshnessWindow {
    fn default() -> Self {
        FreshnessWindow(5_000)
    }
}

/// Accepts iff `|now - ts| <= window`; the boundary is inclusive.
pub fn validate_timestamp(ts: Timestamp, now: Timestamp, window: FreshnessWindow) -> bool {
    now.0.abs_diff(ts.0) <= window.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Ev,
    Cs,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Ev => 0x01,
            Role::Cs => 0x02,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(Role::Ev),
            0x02 => Some(Role::Cs),
            _ => None,
        }
    }
}

/// Real-world identity (licence number, VIN, station serial). Only ever sent
/// over the registration channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrueId {
    role: Role,
    id: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("identity must be non-empty")]
pub struct EmptyIdentity;

impl TrueId {
    pub fn new(role: Role, id: impl Into<Vec<u8>>) -> Result<Self, EmptyIdentity> {
        let id = id.into();
        if id.is_empty() {
            return Err(EmptyIdentity);
        }
        Ok(Self { role, id })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.id
    }

    pub fn to_field(&self) -> Result<Field, CodecError> {
        let mut payload = Vec::with_capacity(1 + self.id.len());
        payload.push(self.role.code());
        payload.extend_from_slice(&self.id);
        Field::new(FieldKind::Identity, payload)
    }

    pub fn from_field(field: &Field, index: usize) -> Result<Self, CodecError> {
        let bad = |reason: &str| CodecError::FieldValue { index, reason: reason.into() };
        let (code, id) = field.payload().split_first().ok_or_else(|| bad("empty identity"))?;
        let role = Role::from_code(*code).ok_or_else(|| bad("unknown role"))?;
        TrueId::new(role, id.to_vec()).map_err(|_| bad("empty identity"))
    }
}

impl fmt::Display for TrueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.id))
    }
}

/// `H(sk || true_id)`: the alias used on every open-channel message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PseudoId(pub Digest);

impl PseudoId {
    pub fn to_field(&self) -> Field {
        self.0.to_field()
    }
}

impl fmt::Display for PseudoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ptd:{}", &self.0.to_hex()[..12])
    }
}

/// Identifies one authentication run (the transport connection it rides on).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Which token comparison failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenCheck {
    /// CS recomputing `Auth_EV-CS`.
    EvAtCs,
    /// CAG recomputing `Auth_CS-CAG` (which nests `Auth_EV-CAG`).
    CsAndEvAtCag,
    /// CS recomputing `Auth_CAG`.
    CagAtCs,
    /// EV recomputing `Auth_CAG`.
    CagAtEv,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("stale timestamp {ts} at {now}")]
    Stale { ts: Timestamp, now: Timestamp },
    #[error("token mismatch: {0:?}")]
    TokenMismatch(TokenCheck),
    #[error("no registered key for {0}")]
    UnknownPseudoId(PseudoId),
    #[error("no session {0}")]
    NoSession(SessionId),
    #[error("session {0} is not expecting this message")]
    WrongPhase(SessionId),
    #[error("session {0} already exists")]
    DuplicateSession(SessionId),
    #[error("R1 already seen within the freshness window")]
    ReplayedNonce,
    #[error("no unused nonce available")]
    NonceExhausted,
    #[error("entity has not completed registration")]
    NotRegistered,
    #[error("malformed message: {0}")]
    Codec(#[from] CodecError),
    #[error("curve error: {0}")]
    Curve(#[from] CurveError),
}

/// What a registered EV or CS keeps after registration: `{PTD, SK}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials<T> {
    pub pseudo_id: PseudoId,
    pub sk: Scalar<T>,
}

/// Parameters published by the CAG during system initialization.
#[derive(Debug, Clone)]
pub struct PublicParams<T> {
    pub curve: CurveParams<T>,
    pub pk_cag: Point<T>,
    pub ptd_cag: PseudoId,
    pub window: FreshnessWindow,
}

pub(crate) fn check_fresh(
    ts: Timestamp,
    now: Timestamp,
    window: FreshnessWindow,
) -> Result<(), AuthError> {
    if validate_timestamp(ts, now, window) {
        Ok(())
    } else {
        Err(AuthError::Stale { ts, now })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_boundary_inclusive() {
        let w = FreshnessWindow(5_000);
        let now = Timestamp(20_000);
        assert!(validate_timestamp(now, now, w));
        assert!(validate_timestamp(Timestamp(15_000), now, w));
        assert!(!validate_timestamp(Timestamp(14_999), now, w));
        assert!(validate_timestamp(Timestamp(25_000), now, w));
        assert!(!validate_timestamp(Timestamp(25_001), now, w));
    }

    #[test]
    fn true_id_rejects_empty() {
        assert_eq!(TrueId::new(Role::Ev, ""), Err(EmptyIdentity));
        let id = TrueId::new(Role::Cs, "CS-7").unwrap();
        let field = id.to_field().unwrap();
        assert_eq!(TrueId::from_field(&field, 0).unwrap(), id);
    }
}
