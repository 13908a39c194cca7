use rand::RngCore;

use super::curve::{CurveError, CurveParams, Point};
use super::field::FieldInt;
use super::hash::OpCounters;
use super::tlv::{Field, FieldKind};

/// Integer in `[1, n-1]` for the curve's group order `n`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Scalar<T>(T);

impl<T: FieldInt> Scalar<T> {
    /// Accepts values already reduced below `n`; zero is rejected.
    pub fn new(value: T, curve: &CurveParams<T>) -> Result<Self, CurveError> {
        if value.is_zero() || &value >= curve.order() {
            return Err(CurveError::InvalidScalar);
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> &T {
        &self.0
    }

    /// Rejection-samples a uniform scalar in `[1, n-1]`.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R, curve: &CurveParams<T>) -> Self {
        let width = curve.scalar_width();
        let bits = curve.order().bit_len();
        let excess = (width as u64 * 8 - bits) as u32;
        let mask = 0xffu8 >> excess;
        let mut buf = vec![0u8; width];
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= mask;
            let candidate = T::from_be_bytes(&buf);
            if !candidate.is_zero() && &candidate < curve.order() {
                return Self(candidate);
            }
        }
    }

    pub fn to_bytes(&self, curve: &CurveParams<T>) -> Vec<u8> {
        curve.scalar_bytes(&self.0)
    }

    pub fn from_bytes(bytes: &[u8], curve: &CurveParams<T>) -> Result<Self, CurveError> {
        if bytes.len() != curve.scalar_width() {
            return Err(CurveError::InvalidScalar);
        }
        Self::new(T::from_be_bytes(bytes), curve)
    }

    pub fn to_field(&self, curve: &CurveParams<T>) -> Field {
        Field::fixed(FieldKind::Scalar, self.to_bytes(curve))
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for Scalar<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Scalar({:?})", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair<T> {
    pub sk: Scalar<T>,
    pub pk: Point<T>,
}

impl<T: FieldInt> KeyPair<T> {
    pub fn from_secret(sk: Scalar<T>, curve: &CurveParams<T>, meter: &mut OpCounters) -> Self {
        let pk = curve
            .scalar_mult(sk.value(), curve.generator(), meter)
            .expect("non-zero scalar times generator");
        Self { sk, pk }
    }
}

/// Fresh key pair `(sk, sk * G)`. One ECM.
pub fn keygen<T: FieldInt, R: RngCore + ?Sized>(
    rng: &mut R,
    curve: &CurveParams<T>,
    meter: &mut OpCounters,
) -> KeyPair<T> {
    KeyPair::from_secret(Scalar::random(rng, curve), curve, meter)
}
