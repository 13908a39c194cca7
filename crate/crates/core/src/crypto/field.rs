//! Integer backends for prime-field arithmetic.
//!
//! Curve code is written once against [`FieldInt`]. `u64` backs the small
//! exhaustively-checkable curves (any prime below 2^64, products go through
//! `u128`), `BigUint` backs the 256-bit production curve.

use std::fmt::Debug;
use std::hash::Hash;

use num_bigint::BigUint;
use num_traits::{Num, One, ToPrimitive, Zero};

/// Unsigned integer usable as a field element or scalar modulo a prime.
///
/// All `*_mod` operations expect operands already reduced below the modulus.
pub trait FieldInt:
    Clone + Eq + Ord + Hash + Debug + Num + Zero + One + Send + Sync + 'static
{
    fn from_u64(v: u64) -> Self;

    /// Interprets big-endian bytes; leading zeros are allowed.
    fn from_be_bytes(bytes: &[u8]) -> Self;

    /// Big-endian bytes left-padded to `width`. Values wider than `width`
    /// are a caller bug.
    fn to_be_bytes_padded(&self, width: usize) -> Vec<u8>;

    fn bit_len(&self) -> u64;

    fn bit(&self, index: u64) -> bool;

    fn add_mod(&self, rhs: &Self, modulus: &Self) -> Self;

    fn sub_mod(&self, rhs: &Self, modulus: &Self) -> Self;

    fn mul_mod(&self, rhs: &Self, modulus: &Self) -> Self;

    /// Reduces an arbitrary value into `[0, modulus)`.
    fn reduce(&self, modulus: &Self) -> Self;

    /// Multiplicative inverse; `None` for zero (or non-coprime inputs).
    fn inv_mod(&self, modulus: &Self) -> Option<Self>;

    fn pow_mod(&self, exponent: &Self, modulus: &Self) -> Self {
        let mut acc = Self::one().reduce(modulus);
        for i in (0..exponent.bit_len()).rev() {
            acc = acc.mul_mod(&acc, modulus);
            if exponent.bit(i) {
                acc = acc.mul_mod(self, modulus);
            }
        }
        acc
    }

    fn neg_mod(&self, modulus: &Self) -> Self {
        Self::zero().sub_mod(self, modulus)
    }

    fn is_odd(&self) -> bool {
        self.bit(0)
    }

    /// Minimal number of bytes needed to write any value below `self`.
    fn byte_width(&self) -> usize {
        (self.bit_len() as usize).div_ceil(8).max(1)
    }
}

impl FieldInt for u64 {
    fn from_u64(v: u64) -> Self {
        v
    }

    fn from_be_bytes(bytes: &[u8]) -> Self {
        bytes.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b))
    }

    fn to_be_bytes_padded(&self, width: usize) -> Vec<u8> {
        let raw = self.to_be_bytes();
        if width >= raw.len() {
            let mut out = vec![0u8; width - raw.len()];
            out.extend_from_slice(&raw);
            out
        } else {
            debug_assert!(raw[..raw.len() - width].iter().all(|b| *b == 0));
            raw[raw.len() - width..].to_vec()
        }
    }

    fn bit_len(&self) -> u64 {
        u64::from(64 - self.leading_zeros())
    }

    fn bit(&self, index: u64) -> bool {
        index < 64 && (self >> index) & 1 == 1
    }

    fn add_mod(&self, rhs: &Self, modulus: &Self) -> Self {
        ((u128::from(*self) + u128::from(*rhs)) % u128::from(*modulus)) as u64
    }

    fn sub_mod(&self, rhs: &Self, modulus: &Self) -> Self {
        if self >= rhs {
            self - rhs
        } else {
            modulus - (rhs - self)
        }
    }

    fn mul_mod(&self, rhs: &Self, modulus: &Self) -> Self {
        ((u128::from(*self) * u128::from(*rhs)) % u128::from(*modulus)) as u64
    }

    fn reduce(&self, modulus: &Self) -> Self {
        self % modulus
    }

    fn inv_mod(&self, modulus: &Self) -> Option<Self> {
        // extended Euclid over i128
        let (mut old_r, mut r) = (i128::from(*self % modulus), i128::from(*modulus));
        let (mut old_s, mut s) = (1i128, 0i128);
        while r != 0 {
            let q = old_r / r;
            (old_r, r) = (r, old_r - q * r);
            (old_s, s) = (s, old_s - q * s);
        }
        if old_r != 1 {
            return None;
        }
        Some(old_s.rem_euclid(i128::from(*modulus)) as u64)
    }
}

impl FieldInt for BigUint {
    fn from_u64(v: u64) -> Self {
        BigUint::from(v)
    }

    fn from_be_bytes(bytes: &[u8]) -> Self {
        BigUint::from_bytes_be(bytes)
    }

    fn to_be_bytes_padded(&self, width: usize) -> Vec<u8> {
        let raw = if self.is_zero() { Vec::new() } else { self.to_bytes_be() };
        debug_assert!(raw.len() <= width, "value wider than {width} bytes");
        let mut out = vec![0u8; width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    fn bit_len(&self) -> u64 {
        self.bits()
    }

    fn bit(&self, index: u64) -> bool {
        BigUint::bit(self, index)
    }

    fn add_mod(&self, rhs: &Self, modulus: &Self) -> Self {
        let sum = self + rhs;
        if &sum >= modulus {
            sum - modulus
        } else {
            sum
        }
    }

    fn sub_mod(&self, rhs: &Self, modulus: &Self) -> Self {
        if self >= rhs {
            self - rhs
        } else {
            modulus - (rhs - self)
        }
    }

    fn mul_mod(&self, rhs: &Self, modulus: &Self) -> Self {
        (self * rhs) % modulus
    }

    fn reduce(&self, modulus: &Self) -> Self {
        self % modulus
    }

    fn inv_mod(&self, modulus: &Self) -> Option<Self> {
        self.modinv(modulus)
    }

    fn pow_mod(&self, exponent: &Self, modulus: &Self) -> Self {
        self.modpow(exponent, modulus)
    }

    fn is_odd(&self) -> bool {
        self.to_u8().map_or_else(|| BigUint::bit(self, 0), |v| v & 1 == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u64_inverse_matches_fermat() {
        let p = 17u64;
        for a in 1..p {
            let inv = a.inv_mod(&p).unwrap();
            assert_eq!(a.mul_mod(&inv, &p), 1);
            assert_eq!(inv, a.pow_mod(&(p - 2), &p));
        }
        assert_eq!(0u64.inv_mod(&p), None);
    }

    #[test]
    fn u64_mul_mod_near_word_size() {
        let p = u64::MAX - 58; // 2^64 - 59, prime
        let a = p - 1;
        assert_eq!(a.mul_mod(&a, &p), 1);
    }

    #[test]
    fn backends_agree() {
        let p = 1_000_000_007u64;
        let bp = BigUint::from(p);
        for (a, b) in [(3u64, 5u64), (p - 1, p - 2), (123_456_789, 987_654_321)] {
            let (ba, bb) = (BigUint::from(a), BigUint::from(b));
            assert_eq!(BigUint::from(a.mul_mod(&b, &p)), ba.mul_mod(&bb, &bp));
            assert_eq!(BigUint::from(a.sub_mod(&b, &p)), ba.sub_mod(&bb, &bp));
            assert_eq!(BigUint::from(a.add_mod(&b, &p)), ba.add_mod(&bb, &bp));
            assert_eq!(BigUint::from(a.inv_mod(&p).unwrap()), ba.inv_mod(&bp).unwrap());
        }
    }

    #[test]
    fn padded_bytes_round_trip() {
        assert_eq!(5u64.to_be_bytes_padded(1), vec![5]);
        assert_eq!(5u64.to_be_bytes_padded(3), vec![0, 0, 5]);
        assert_eq!(<u64 as FieldInt>::from_be_bytes(&[0, 1, 2]), 258);
        let big = BigUint::from(258u32);
        assert_eq!(big.to_be_bytes_padded(4), vec![0, 0, 1, 2]);
        assert_eq!(BigUint::zero().to_be_bytes_padded(2), vec![0, 0]);
    }
}
