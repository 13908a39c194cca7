//! Wire types. A message is a one-byte tag followed by its TLV fields.

use rust_decimal::Decimal;

use crate::crypto::tlv::{expect_kind, read_u64};
use crate::crypto::{
    decode_fields, encode_fields, CodecError, CurveParams, Digest, Field, FieldInt, FieldKind,
    Point, Scalar,
};

use super::{PseudoId, Timestamp, TrueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageTag {
    M1 = 0x01,
    M2 = 0x02,
    M3 = 0x03,
    M4 = 0x04,
    M5 = 0x05,
    ServiceRequest = 0x06,
    Receipt = 0x07,
    RegistrationRequest = 0x10,
    RegistrationResponse = 0x11,
    Proposal = 0x20,
    VoteRequest = 0x21,
    Vote = 0x22,
    Commit = 0x23,
    TxSubmit = 0x24,
    TxBroadcast = 0x25,
}

impl MessageTag {
    pub const ALL: [MessageTag; 15] = [
        MessageTag::M1,
        MessageTag::M2,
        MessageTag::M3,
        MessageTag::M4,
        MessageTag::M5,
        MessageTag::ServiceRequest,
        MessageTag::Receipt,
        MessageTag::RegistrationRequest,
        MessageTag::RegistrationResponse,
        MessageTag::Proposal,
        MessageTag::VoteRequest,
        MessageTag::Vote,
        MessageTag::Commit,
        MessageTag::TxSubmit,
        MessageTag::TxBroadcast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageTag::M1 => "M1",
            MessageTag::M2 => "M2",
            MessageTag::M3 => "M3",
            MessageTag::M4 => "M4",
            MessageTag::M5 => "M5",
            MessageTag::ServiceRequest => "SERVICE",
            MessageTag::Receipt => "RECEIPT",
            MessageTag::RegistrationRequest => "REG_REQ",
            MessageTag::RegistrationResponse => "REG_RESP",
            MessageTag::Proposal => "PROPOSAL",
            MessageTag::VoteRequest => "VOTE_REQ",
            MessageTag::Vote => "VOTE",
            MessageTag::Commit => "COMMIT",
            MessageTag::TxSubmit => "TX_SUBMIT",
            MessageTag::TxBroadcast => "TX_BCAST",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(name))
    }

    /// True for M1..M5, the messages counted by the communication meter.
    pub fn is_auth(self) -> bool {
        (self as u8) >= 0x01 && (self as u8) <= 0x05
    }

    /// Field names of M1..M5 in wire order; empty for other tags.
    pub fn field_names(self) -> &'static [&'static str] {
        match self {
            MessageTag::M1 => &["r1_point", "ptd_cs", "t_cs"],
            MessageTag::M2 => &["auth_ev_cs", "auth_ev_cag", "t_ev", "ptd_ev"],
            MessageTag::M3 => {
                &["auth_cs_cag", "t_cs", "t_ev", "r1", "r2", "r1_point", "ptd_ev", "ptd_cs"]
            }
            MessageTag::M4 => &["auth_cag", "t_cag"],
            MessageTag::M5 => &["auth_cag", "t_cag", "r1"],
            _ => &[],
        }
    }

    /// Index of the sender's pseudo-identity field, for messages that carry one.
    pub fn sender_pseudo_id_field(self) -> Option<usize> {
        match self {
            MessageTag::M1 => Some(M1::<u64>::PTD_CS),
            MessageTag::M2 => Some(M2::PTD_EV),
            MessageTag::M3 => Some(M3::<u64>::PTD_CS),
            _ => None,
        }
    }
}

impl TryFrom<u8> for MessageTag {
    type Error = CodecError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::ALL
            .into_iter()
            .find(|t| *t as u8 == value)
            .ok_or(CodecError::UnknownTag(value))
    }
}

pub fn frame(tag: MessageTag, fields: &[Field]) -> Vec<u8> {
    let mut out = vec![tag as u8];
    out.extend(encode_fields(fields));
    out
}

pub fn unframe(bytes: &[u8]) -> Result<(MessageTag, Vec<Field>), CodecError> {
    let (&tag, rest) = bytes.split_first().ok_or(CodecError::Empty)?;
    Ok((MessageTag::try_from(tag)?, decode_fields(rest)?))
}

/// Unframes and checks tag and field count.
pub fn unframe_as(
    bytes: &[u8],
    tag: MessageTag,
    count: usize,
) -> Result<Vec<Field>, CodecError> {
    let (found, fields) = unframe(bytes)?;
    if found != tag {
        return Err(CodecError::WrongTag { expected: tag as u8, found: found as u8 });
    }
    if fields.len() != count {
        return Err(CodecError::FieldCount { expected: count, found: fields.len() });
    }
    Ok(fields)
}

pub(crate) fn read_digest(fields: &[Field], index: usize) -> Result<Digest, CodecError> {
    let field = expect_kind(fields, index, FieldKind::Digest)?;
    Digest::from_slice(field.payload())
        .ok_or(CodecError::FieldLength { index, len: field.payload().len() })
}

pub(crate) fn read_pseudo_id(fields: &[Field], index: usize) -> Result<PseudoId, CodecError> {
    read_digest(fields, index).map(PseudoId)
}

pub(crate) fn read_timestamp(fields: &[Field], index: usize) -> Result<Timestamp, CodecError> {
    read_u64(fields, index, FieldKind::Timestamp).map(Timestamp)
}

pub(crate) fn read_point<T: FieldInt>(
    fields: &[Field],
    index: usize,
    curve: &CurveParams<T>,
) -> Result<Point<T>, CodecError> {
    let field = expect_kind(fields, index, FieldKind::Point)?;
    curve
        .decode_point(field.payload())
        .map_err(|e| CodecError::FieldValue { index, reason: e.to_string() })
}

pub(crate) fn read_scalar<T: FieldInt>(
    fields: &[Field],
    index: usize,
    curve: &CurveParams<T>,
) -> Result<Scalar<T>, CodecError> {
    let field = expect_kind(fields, index, FieldKind::Scalar)?;
    Scalar::from_bytes(field.payload(), curve)
        .map_err(|e| CodecError::FieldValue { index, reason: e.to_string() })
}

pub(crate) fn amount_field(value: &Decimal) -> Field {
    Field::fixed(FieldKind::Amount, value.serialize().to_vec())
}

pub(crate) fn read_amount(fields: &[Field], index: usize) -> Result<Decimal, CodecError> {
    let field = expect_kind(fields, index, FieldKind::Amount)?;
    let raw: [u8; 16] = field
        .payload()
        .try_into()
        .map_err(|_| CodecError::FieldLength { index, len: field.payload().len() })?;
    Ok(Decimal::deserialize(raw))
}

/// `TK0 = TD || T`, sent over the registration channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRequest {
    pub true_id: TrueId,
    pub timestamp: Timestamp,
}

impl RegistrationRequest {
    pub const FIELDS: usize = 2;

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        Ok(frame(
            MessageTag::RegistrationRequest,
            &[self.true_id.to_field()?, self.timestamp.to_field()],
        ))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let fields = unframe_as(bytes, MessageTag::RegistrationRequest, Self::FIELDS)?;
        let id_field = expect_kind(&fields, 0, FieldKind::Identity)?;
        Ok(Self {
            true_id: TrueId::from_field(id_field, 0)?,
            timestamp: read_timestamp(&fields, 1)?,
        })
    }
}

/// `{PTD, PK, SK}` returned by the CAG over the registration channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationResponse<T> {
    pub pseudo_id: PseudoId,
    pub public_key: Point<T>,
    pub private_key: Scalar<T>,
}

impl<T: FieldInt> RegistrationResponse<T> {
    pub const FIELDS: usize = 3;

    pub fn encode(&self, curve: &CurveParams<T>) -> Vec<u8> {
        frame(
            MessageTag::RegistrationResponse,
            &[
                self.pseudo_id.to_field(),
                curve.point_field(&self.public_key),
                self.private_key.to_field(curve),
            ],
        )
    }

    pub fn decode(bytes: &[u8], curve: &CurveParams<T>) -> Result<Self, CodecError> {
        let fields = unframe_as(bytes, MessageTag::RegistrationResponse, Self::FIELDS)?;
        Ok(Self {
            pseudo_id: read_pseudo_id(&fields, 0)?,
            public_key: read_point(&fields, 1, curve)?,
            private_key: read_scalar(&fields, 2, curve)?,
        })
    }
}

/// `<R1, PTD_CS, T_CS>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct M1<T> {
    pub r1_point: Point<T>,
    pub ptd_cs: PseudoId,
    pub t_cs: Timestamp,
}

impl<T: FieldInt> M1<T> {
    pub const FIELDS: usize = 3;
    pub const PTD_CS: usize = 1;

    pub fn encode(&self, curve: &CurveParams<T>) -> Vec<u8> {
        frame(
            MessageTag::M1,
            &[curve.point_field(&self.r1_point), self.ptd_cs.to_field(), self.t_cs.to_field()],
        )
    }

    pub fn decode(bytes: &[u8], curve: &CurveParams<T>) -> Result<Self, CodecError> {
        let f = unframe_as(bytes, MessageTag::M1, Self::FIELDS)?;
        Ok(Self {
            r1_point: read_point(&f, 0, curve)?,
            ptd_cs: read_pseudo_id(&f, 1)?,
            t_cs: read_timestamp(&f, 2)?,
        })
    }
}

/// `<Auth_EV-CS, Auth_EV-CAG, T_EV, PTD_EV>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct M2 {
    pub auth_ev_cs: Digest,
    pub auth_ev_cag: Digest,
    pub t_ev: Timestamp,
    pub ptd_ev: PseudoId,
}

impl M2 {
    pub const FIELDS: usize = 4;
    pub const AUTH_EV_CS: usize = 0;
    pub const AUTH_EV_CAG: usize = 1;
    pub const PTD_EV: usize = 3;

    pub fn encode(&self) -> Vec<u8> {
        frame(
            MessageTag::M2,
            &[
                self.auth_ev_cs.to_field(),
                self.auth_ev_cag.to_field(),
                self.t_ev.to_field(),
                self.ptd_ev.to_field(),
            ],
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let f = unframe_as(bytes, MessageTag::M2, Self::FIELDS)?;
        Ok(Self {
            auth_ev_cs: read_digest(&f, 0)?,
            auth_ev_cag: read_digest(&f, 1)?,
            t_ev: read_timestamp(&f, 2)?,
            ptd_ev: read_pseudo_id(&f, 3)?,
        })
    }
}

/// `<Auth_CS-CAG, T_CS, T_EV, r1, r2, R1, PTD_EV, PTD_CS>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct M3<T> {
    pub auth_cs_cag: Digest,
    pub t_cs: Timestamp,
    pub t_ev: Timestamp,
    pub r1: Scalar<T>,
    pub r2: Scalar<T>,
    pub r1_point: Point<T>,
    pub ptd_ev: PseudoId,
    pub ptd_cs: PseudoId,
}

impl<T: FieldInt> M3<T> {
    pub const FIELDS: usize = 8;
    pub const AUTH_CS_CAG: usize = 0;
    pub const R1: usize = 3;
    pub const PTD_EV: usize = 6;
    pub const PTD_CS: usize = 7;

    pub fn encode(&self, curve: &CurveParams<T>) -> Vec<u8> {
        frame(
            MessageTag::M3,
            &[
                self.auth_cs_cag.to_field(),
                self.t_cs.to_field(),
                self.t_ev.to_field(),
                self.r1.to_field(curve),
                self.r2.to_field(curve),
                curve.point_field(&self.r1_point),
                self.ptd_ev.to_field(),
                self.ptd_cs.to_field(),
            ],
        )
    }

    pub fn decode(bytes: &[u8], curve: &CurveParams<T>) -> Result<Self, CodecError> {
        let f = unframe_as(bytes, MessageTag::M3, Self::FIELDS)?;
        Ok(Self {
            auth_cs_cag: read_digest(&f, 0)?,
            t_cs: read_timestamp(&f, 1)?,
            t_ev: read_timestamp(&f, 2)?,
            r1: read_scalar(&f, 3, curve)?,
            r2: read_scalar(&f, 4, curve)?,
            r1_point: read_point(&f, 5, curve)?,
            ptd_ev: read_pseudo_id(&f, 6)?,
            ptd_cs: read_pseudo_id(&f, 7)?,
        })
    }
}

/// `<Auth_CAG, T_CAG>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct M4 {
    pub auth_cag: Digest,
    pub t_cag: Timestamp,
}

impl M4 {
    pub const FIELDS: usize = 2;
    pub const AUTH_CAG: usize = 0;

    pub fn encode(&self) -> Vec<u8> {
        frame(MessageTag::M4, &[self.auth_cag.to_field(), self.t_cag.to_field()])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let f = unframe_as(bytes, MessageTag::M4, Self::FIELDS)?;
        Ok(Self { auth_cag: read_digest(&f, 0)?, t_cag: read_timestamp(&f, 1)? })
    }
}

/// `<Auth_CAG, T_CAG, r1>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct M5<T> {
    pub auth_cag: Digest,
    pub t_cag: Timestamp,
    pub r1: Scalar<T>,
}

impl<T: FieldInt> M5<T> {
    pub const FIELDS: usize = 3;
    pub const AUTH_CAG: usize = 0;
    pub const R1: usize = 2;

    pub fn encode(&self, curve: &CurveParams<T>) -> Vec<u8> {
        frame(
            MessageTag::M5,
            &[self.auth_cag.to_field(), self.t_cag.to_field(), self.r1.to_field(curve)],
        )
    }

    pub fn decode(bytes: &[u8], curve: &CurveParams<T>) -> Result<Self, CodecError> {
        let f = unframe_as(bytes, MessageTag::M5, Self::FIELDS)?;
        Ok(Self {
            auth_cag: read_digest(&f, 0)?,
            t_cag: read_timestamp(&f, 1)?,
            r1: read_scalar(&f, 2, curve)?,
        })
    }
}

/// Sent by an EV over the charging cable once it has authenticated the CAG:
/// asks the CS to start the energy session bound to `session_ref`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRequest {
    pub session_ref: Digest,
    pub energy_kwh: Decimal,
}

impl ServiceRequest {
    pub const FIELDS: usize = 2;

    pub fn encode(&self) -> Vec<u8> {
        frame(
            MessageTag::ServiceRequest,
            &[self.session_ref.to_field(), amount_field(&self.energy_kwh)],
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let f = unframe_as(bytes, MessageTag::ServiceRequest, Self::FIELDS)?;
        Ok(Self { session_ref: read_digest(&f, 0)?, energy_kwh: read_amount(&f, 1)? })
    }
}

/// Number of top-level fields in an encoded message, or `None` if malformed.
pub fn field_count(bytes: &[u8]) -> Option<usize> {
    unframe(bytes).ok().map(|(_, f)| f.len())
}

/// Replaces one top-level field's payload, keeping its kind.
pub fn rewrite_field(bytes: &[u8], index: usize, payload: Vec<u8>) -> Result<Vec<u8>, CodecError> {
    let (tag, mut fields) = unframe(bytes)?;
    let count = fields.len();
    let slot = fields
        .get_mut(index)
        .ok_or(CodecError::FieldCount { expected: index + 1, found: count })?;
    *slot = Field::new(slot.kind(), payload)?;
    Ok(frame(tag, &fields))
}

pub fn field_payload(bytes: &[u8], index: usize) -> Result<Vec<u8>, CodecError> {
    let (_, fields) = unframe(bytes)?;
    let count = fields.len();
    fields
        .into_iter()
        .nth(index)
        .map(Field::into_payload)
        .ok_or(CodecError::FieldCount { expected: index + 1, found: count })
}
