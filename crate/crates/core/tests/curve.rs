use num_bigint::BigUint;
use proptest::prelude::*;
use v2g_core::crypto::{CurveParams, FieldInt, OpCounters, Point};
use v2g_core::{P256Curve, ToyCurve};

fn mul<T: FieldInt>(curve: &CurveParams<T>, k: &T, p: &Point<T>) -> Point<T> {
    curve.scalar_mult(k, p, &mut OpCounters::new()).unwrap()
}

fn scalar<T: FieldInt>(curve: &CurveParams<T>, bytes: &[u8]) -> T {
    let k = T::from_be_bytes(bytes).reduce(curve.order());
    if k.is_zero() {
        T::one()
    } else {
        k
    }
}

/// `(a + b)G = aG + bG` and `a(bG) = (ab)G`, whatever the backing integer.
fn check_homomorphism<T: FieldInt>(curve: &CurveParams<T>, a: &[u8], b: &[u8]) -> Result<(), TestCaseError> {
    let n = curve.order();
    let g = curve.generator();
    let (a, b) = (scalar(curve, a), scalar(curve, b));
    let sum = a.add_mod(&b, n);
    let lhs = if sum.is_zero() { Point::Infinity } else { mul(curve, &sum, g) };
    let rhs = curve.point_add(&mul(curve, &a, g), &mul(curve, &b, g)).unwrap();
    prop_assert_eq!(&lhs, &rhs);
    prop_assert!(curve.is_on_curve(&lhs));

    let nested = mul(curve, &a, &mul(curve, &b, g));
    let direct = mul(curve, &a.mul_mod(&b, n), g);
    prop_assert_eq!(nested, direct);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn p256_scalar_mult_is_a_homomorphism(a in any::<[u8; 32]>(), b in any::<[u8; 32]>()) {
        check_homomorphism::<BigUint>(&P256Curve::p256(), &a, &b)?;
    }

    #[test]
    fn toy_scalar_mult_is_a_homomorphism(a in any::<u8>(), b in any::<u8>()) {
        check_homomorphism::<u64>(&ToyCurve::toy(), &[a], &[b])?;
    }

    #[test]
    fn point_encoding_round_trips(k in any::<[u8; 32]>()) {
        let curve = P256Curve::p256();
        let p = mul(&curve, &scalar(&curve, &k), curve.generator());
        prop_assert_eq!(curve.decode_point(&curve.encode_point(&p)).unwrap(), p);
    }
}

#[test]
fn order_times_generator_is_infinity() {
    let toy = ToyCurve::toy();
    assert_eq!(mul(&toy, toy.order(), toy.generator()), Point::Infinity);
    let p256 = P256Curve::p256();
    assert_eq!(mul(&p256, p256.order(), p256.generator()), Point::Infinity);
}

#[test]
fn zero_scalar_is_rejected() {
    let toy = ToyCurve::toy();
    assert!(toy.scalar_mult(&0, toy.generator(), &mut OpCounters::new()).is_err());
}
