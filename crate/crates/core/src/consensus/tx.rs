use rust_decimal::Decimal;

use crate::crypto::tlv::expect_kind;
use crate::crypto::{decode_fields, encode_fields, sha256, CodecError, Digest, Field, FieldKind};
use crate::entities::messages::{
    amount_field, frame, read_amount, read_digest, read_pseudo_id, read_timestamp, unframe_as,
    MessageTag,
};
use crate::entities::{PseudoId, Timestamp};

/// Reward owed to an EV for one authenticated energy session.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub ev_pseudo_id: PseudoId,
    pub cs_pseudo_id: PseudoId,
    pub energy_kwh: Decimal,
    pub price_per_kwh: Decimal,
    pub reward_amount: Decimal,
    pub auth_session_ref: Digest,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TxInvalid {
    #[error("negative energy or price")]
    Negative,
    #[error("reward {found} differs from energy x price = {expected}")]
    RewardMismatch { expected: Decimal, found: Decimal },
    #[error("energy x price overflows")]
    Overflow,
}

impl Transaction {
    pub const FIELDS: usize = 7;

    /// Builds a transaction with `reward = energy * price`.
    pub fn new(
        ev_pseudo_id: PseudoId,
        cs_pseudo_id: PseudoId,
        energy_kwh: Decimal,
        price_per_kwh: Decimal,
        auth_session_ref: Digest,
        created_at: Timestamp,
    ) -> Result<Self, TxInvalid> {
        if energy_kwh.is_sign_negative() || price_per_kwh.is_sign_negative() {
            return Err(TxInvalid::Negative);
        }
        let reward_amount = energy_kwh.checked_mul(price_per_kwh).ok_or(TxInvalid::Overflow)?;
        Ok(Self {
            ev_pseudo_id,
            cs_pseudo_id,
            energy_kwh,
            price_per_kwh,
            reward_amount,
            auth_session_ref,
            created_at,
        })
    }

    pub fn validate(&self) -> Result<(), TxInvalid> {
        if self.energy_kwh.is_sign_negative() || self.price_per_kwh.is_sign_negative() {
            return Err(TxInvalid::Negative);
        }
        let expected =
            self.energy_kwh.checked_mul(self.price_per_kwh).ok_or(TxInvalid::Overflow)?;
        if expected != self.reward_amount {
            return Err(TxInvalid::RewardMismatch { expected, found: self.reward_amount });
        }
        Ok(())
    }

    pub fn fields(&self) -> Vec<Field> {
        vec![
            self.ev_pseudo_id.to_field(),
            self.cs_pseudo_id.to_field(),
            amount_field(&self.energy_kwh),
            amount_field(&self.price_per_kwh),
            amount_field(&self.reward_amount),
            self.auth_session_ref.to_field(),
            self.created_at.to_field(),
        ]
    }

    pub fn from_fields(fields: &[Field]) -> Result<Self, CodecError> {
        if fields.len() != Self::FIELDS {
            return Err(CodecError::FieldCount { expected: Self::FIELDS, found: fields.len() });
        }
        Ok(Self {
            ev_pseudo_id: read_pseudo_id(fields, 0)?,
            cs_pseudo_id: read_pseudo_id(fields, 1)?,
            energy_kwh: read_amount(fields, 2)?,
            price_per_kwh: read_amount(fields, 3)?,
            reward_amount: read_amount(fields, 4)?,
            auth_session_ref: read_digest(fields, 5)?,
            created_at: read_timestamp(fields, 6)?,
        })
    }

    pub fn to_nested(&self) -> Field {
        Field::nested(&self.fields()).expect("transaction encoding is small")
    }

    pub fn from_nested(field: &Field, index: usize) -> Result<Self, CodecError> {
        if field.kind() != FieldKind::Nested {
            return Err(CodecError::FieldKind {
                index,
                expected: FieldKind::Nested,
                found: field.kind(),
            });
        }
        Self::from_fields(&decode_fields(field.payload())?)
    }

    /// Identity used for mempool dedup and block ordering.
    pub fn hash(&self) -> Digest {
        sha256(&encode_fields(&self.fields()))
    }

    pub fn encode(&self, tag: MessageTag) -> Vec<u8> {
        frame(tag, &self.fields())
    }

    pub fn decode(bytes: &[u8], tag: MessageTag) -> Result<Self, CodecError> {
        let fields = unframe_as(bytes, tag, Self::FIELDS)?;
        Self::from_fields(&fields)
    }
}

/// CAG relay of a validated transaction, stamped with the relay time so
/// every replica agrees on when it became eligible for a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxBroadcast {
    pub tx: Transaction,
    pub broadcast_at: Timestamp,
}

impl TxBroadcast {
    pub fn encode(&self) -> Vec<u8> {
        frame(MessageTag::TxBroadcast, &[self.tx.to_nested(), self.broadcast_at.to_field()])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let fields = unframe_as(bytes, MessageTag::TxBroadcast, 2)?;
        let nested = expect_kind(&fields, 0, FieldKind::Nested)?;
        Ok(Self {
            tx: Transaction::from_nested(nested, 0)?,
            broadcast_at: read_timestamp(&fields, 1)?,
        })
    }
}
