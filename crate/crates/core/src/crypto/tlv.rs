//! Tag-length-value field codec.
//!
//! Every field is `kind (1 byte) || length (2 bytes, big-endian) || payload`.
//! Hash preimages and protocol messages are both sequences of such fields, so
//! moving a byte across a field boundary always changes the encoding.

use thiserror::Error;

pub const MAX_PAYLOAD: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("field payload of {0} bytes exceeds the 65535-byte limit")]
    PayloadTooLong(usize),
    #[error("input truncated at offset {offset}")]
    Truncated { offset: usize },
    #[error("unknown field kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("expected message tag 0x{expected:02x}, found 0x{found:02x}")]
    WrongTag { expected: u8, found: u8 },
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("field {index}: expected {expected:?}, found {found:?}")]
    FieldKind { index: usize, expected: FieldKind, found: FieldKind },
    #[error("field {index}: bad payload length {len}")]
    FieldLength { index: usize, len: usize },
    #[error("field {index}: {reason}")]
    FieldValue { index: usize, reason: String },
    #[error("empty message")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FieldKind {
    Point = 0x01,
    Scalar = 0x02,
    Digest = 0x03,
    Timestamp = 0x04,
    Identity = 0x05,
    Amount = 0x06,
    Integer = 0x07,
    Nested = 0x08,
    Label = 0x09,
    Flag = 0x0a,
}

impl TryFrom<u8> for FieldKind {
    type Error = CodecError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Ok(match value {
            0x01 => FieldKind::Point,
            0x02 => FieldKind::Scalar,
            0x03 => FieldKind::Digest,
            0x04 => FieldKind::Timestamp,
            0x05 => FieldKind::Identity,
            0x06 => FieldKind::Amount,
            0x07 => FieldKind::Integer,
            0x08 => FieldKind::Nested,
            0x09 => FieldKind::Label,
            0x0a => FieldKind::Flag,
            other => return Err(CodecError::UnknownKind(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Field {
    kind: FieldKind,
    payload: Vec<u8>,
}

impl Field {
    pub fn new(kind: FieldKind, payload: Vec<u8>) -> Result<Self, CodecError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(CodecError::PayloadTooLong(payload.len()));
        }
        Ok(Self { kind, payload })
    }

    /// For payloads whose size is bounded by construction (points, digests, integers).
    pub(crate) fn fixed(kind: FieldKind, payload: Vec<u8>) -> Self {
        debug_assert!(payload.len() <= MAX_PAYLOAD);
        Self { kind, payload }
    }

    pub fn integer(value: u64) -> Self {
        Self::fixed(FieldKind::Integer, value.to_be_bytes().to_vec())
    }

    pub fn timestamp(ms: u64) -> Self {
        Self::fixed(FieldKind::Timestamp, ms.to_be_bytes().to_vec())
    }

    pub fn flag(value: bool) -> Self {
        Self::fixed(FieldKind::Flag, vec![u8::from(value)])
    }

    pub fn label(text: &str) -> Result<Self, CodecError> {
        Self::new(FieldKind::Label, text.as_bytes().to_vec())
    }

    pub fn nested(fields: &[Field]) -> Result<Self, CodecError> {
        Self::new(FieldKind::Nested, encode_fields(fields))
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn into_payload(self) -> Vec<u8> {
        self.payload
    }

    pub fn encoded_len(&self) -> usize {
        3 + self.payload.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }
}

pub fn encode_fields(fields: &[Field]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(Field::encoded_len).sum());
    for field in fields {
        field.encode_into(&mut out);
    }
    out
}

pub fn decode_fields(bytes: &[u8]) -> Result<Vec<Field>, CodecError> {
    let mut fields = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        if bytes.len() - offset < 3 {
            return Err(CodecError::Truncated { offset });
        }
        let kind = FieldKind::try_from(bytes[offset])?;
        let len = u16::from_be_bytes([bytes[offset + 1], bytes[offset + 2]]) as usize;
        let start = offset + 3;
        let end = start + len;
        if end > bytes.len() {
            return Err(CodecError::Truncated { offset });
        }
        fields.push(Field { kind, payload: bytes[start..end].to_vec() });
        offset = end;
    }
    Ok(fields)
}

/// Checks the field's kind and returns it, for positional message decoding.
pub fn expect_kind(fields: &[Field], index: usize, kind: FieldKind) -> Result<&Field, CodecError> {
    let field = fields
        .get(index)
        .ok_or(CodecError::FieldCount { expected: index + 1, found: fields.len() })?;
    if field.kind != kind {
        return Err(CodecError::FieldKind { index, expected: kind, found: field.kind });
    }
    Ok(field)
}

pub fn read_u64(fields: &[Field], index: usize, kind: FieldKind) -> Result<u64, CodecError> {
    let field = expect_kind(fields, index, kind)?;
    let raw: [u8; 8] = field
        .payload
        .as_slice()
        .try_into()
        .map_err(|_| CodecError::FieldLength { index, len: field.payload.len() })?;
    Ok(u64::from_be_bytes(raw))
}

pub fn read_flag(fields: &[Field], index: usize) -> Result<bool, CodecError> {
    let field = expect_kind(fields, index, FieldKind::Flag)?;
    match field.payload.as_slice() {
        [0] => Ok(false),
        [1] => Ok(true),
        other => Err(CodecError::FieldValue {
            index,
            reason: format!("flag byte {other:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_kind_length_payload() {
        let f = Field::new(FieldKind::Identity, b"EV".to_vec()).unwrap();
        assert_eq!(encode_fields(&[f]), vec![0x05, 0x00, 0x02, b'E', b'V']);
    }

    #[test]
    fn oversize_payload_rejected() {
        let err = Field::new(FieldKind::Label, vec![0; MAX_PAYLOAD + 1]).unwrap_err();
        assert_eq!(err, CodecError::PayloadTooLong(MAX_PAYLOAD + 1));
        assert!(Field::new(FieldKind::Label, vec![0; MAX_PAYLOAD]).is_ok());
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode_fields(&[Field::integer(7)]);
        for cut in 1..bytes.len() {
            assert!(matches!(decode_fields(&bytes[..cut]), Err(CodecError::Truncated { .. })));
        }
        assert_eq!(decode_fields(&[]).unwrap(), vec![]);
    }

    #[test]
    fn unknown_kind_rejected() {
        assert_eq!(decode_fields(&[0xee, 0, 0]), Err(CodecError::UnknownKind(0xee)));
    }
}
