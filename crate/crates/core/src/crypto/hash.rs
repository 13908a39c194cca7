use std::fmt;
use std::ops::{AddAssign, Sub};

use sha2::{Digest as _, Sha256};

use super::tlv::{encode_fields, Field, FieldKind};

pub const DIGEST_LEN: usize = 32;

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Digest)
    }

    pub fn to_field(&self) -> Field {
        Field::fixed(FieldKind::Digest, self.0.to_vec())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Counts of the two cost units compared in the overhead analysis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub ecm: u64,
    pub hash: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_ecm(&mut self) {
        self.ecm += 1;
    }

    pub fn record_hash(&mut self) {
        self.hash += 1;
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.ecm += rhs.ecm;
        self.hash += rhs.hash;
    }
}

impl Sub for OpCounters {
    type Output = OpCounters;

    fn sub(self, rhs: Self) -> Self::Output {
        OpCounters { ecm: self.ecm - rhs.ecm, hash: self.hash - rhs.hash }
    }
}

/// Raw SHA-256, unmetered.
pub fn sha256(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// `H(f1 || f2 || ...)` over length-delimited fields. Counts one hash.
pub fn hash_concat(fields: &[Field], meter: &mut OpCounters) -> Digest {
    meter.record_hash();
    sha256(&encode_fields(fields))
}
