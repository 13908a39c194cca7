//! Curve arithmetic, keys, the field-delimited hash and operation metering.

pub mod curve;
pub mod field;
pub mod hash;
pub mod keys;
pub mod tlv;

pub use curve::{CurveError, CurveParams, Point};
pub use field::FieldInt;
pub use hash::{hash_concat, sha256, Digest, OpCounters, DIGEST_LEN};
pub use keys::{keygen, KeyPair, Scalar};
pub use tlv::{decode_fields, encode_fields, CodecError, Field, FieldKind};
