//! Short-Weierstrass curves `y^2 = x^3 + ax + b` over a prime field.

use num_bigint::BigUint;
use thiserror::Error;

use super::field::FieldInt;
use super::hash::OpCounters;
use super::tlv::{Field, FieldKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CurveError {
    #[error("point is not on the curve")]
    NotOnCurve,
    #[error("scalar is zero modulo the group order")]
    InvalidScalar,
    #[error("curve is singular (4a^3 + 27b^2 = 0 mod p)")]
    Singular,
    #[error("base point does not have the stated order")]
    WrongOrder,
    #[error("point encoding has length {found}, expected {expected} or 1")]
    EncodingLength { expected: usize, found: usize },
    #[error("invalid point prefix byte 0x{0:02x}")]
    EncodingPrefix(u8),
    #[error("x-coordinate out of field range")]
    CoordinateRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Point<T> {
    Infinity,
    Affine { x: T, y: T },
}

impl<T> Point<T> {
    pub fn affine(x: T, y: T) -> Self {
        Point::Affine { x, y }
    }

    pub fn is_infinity(&self) -> bool {
        matches!(self, Point::Infinity)
    }
}

/// Public group parameters: field prime, coefficients, base point and its order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveParams<T> {
    name: &'static str,
    p: T,
    a: T,
    b: T,
    generator: Point<T>,
    n: T,
    cofactor: u64,
}

/// Jacobian coordinates `(X, Y, Z)` for `(X/Z^2, Y/Z^3)`; `Z = 0` is infinity.
struct Jacobian<T> {
    x: T,
    y: T,
    z: T,
}

impl<T: FieldInt> CurveParams<T> {
    /// Builds a curve and checks non-singularity, that the generator lies on
    /// the curve and that `n * G` is the point at infinity.
    pub fn new(
        name: &'static str,
        p: T,
        a: T,
        b: T,
        generator: Point<T>,
        n: T,
        cofactor: u64,
    ) -> Result<Self, CurveError> {
        let curve = Self { name, p, a, b, generator, n, cofactor };
        if curve.discriminant_is_zero() {
            return Err(CurveError::Singular);
        }
        if curve.generator.is_infinity() || !curve.is_on_curve(&curve.generator) {
            return Err(CurveError::NotOnCurve);
        }
        if !curve.multiply(&curve.n, &curve.generator).is_infinity() {
            return Err(CurveError::WrongOrder);
        }
        Ok(curve)
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn field_prime(&self) -> &T {
        &self.p
    }

    pub fn coeff_a(&self) -> &T {
        &self.a
    }

    pub fn coeff_b(&self) -> &T {
        &self.b
    }

    pub fn generator(&self) -> &Point<T> {
        &self.generator
    }

    pub fn order(&self) -> &T {
        &self.n
    }

    pub fn cofactor(&self) -> u64 {
        self.cofactor
    }

    /// Bytes of one field element (the x-coordinate in compressed form).
    pub fn coordinate_width(&self) -> usize {
        self.p.byte_width()
    }

    /// Bytes of one scalar modulo the group order.
    pub fn scalar_width(&self) -> usize {
        self.n.byte_width()
    }

    fn discriminant_is_zero(&self) -> bool {
        let p = &self.p;
        let a3 = self.a.mul_mod(&self.a, p).mul_mod(&self.a, p);
        let b2 = self.b.mul_mod(&self.b, p);
        let four = T::from_u64(4).reduce(p);
        let twenty_seven = T::from_u64(27).reduce(p);
        four.mul_mod(&a3, p).add_mod(&twenty_seven.mul_mod(&b2, p), p).is_zero()
    }

    fn rhs(&self, x: &T) -> T {
        let p = &self.p;
        let x3 = x.mul_mod(x, p).mul_mod(x, p);
        x3.add_mod(&self.a.mul_mod(x, p), p).add_mod(&self.b, p)
    }

    pub fn is_on_curve(&self, point: &Point<T>) -> bool {
        match point {
            Point::Infinity => true,
            Point::Affine { x, y } => {
                x < &self.p && y < &self.p && y.mul_mod(y, &self.p) == self.rhs(x)
            }
        }
    }

    fn check(&self, point: &Point<T>) -> Result<(), CurveError> {
        if self.is_on_curve(point) {
            Ok(())
        } else {
            Err(CurveError::NotOnCurve)
        }
    }

    pub fn negate(&self, point: &Point<T>) -> Point<T> {
        match point {
            Point::Infinity => Point::Infinity,
            Point::Affine { x, y } => Point::affine(x.clone(), y.neg_mod(&self.p)),
        }
    }

    /// Chord-and-tangent addition in affine coordinates.
    pub fn point_add(&self, lhs: &Point<T>, rhs: &Point<T>) -> Result<Point<T>, CurveError> {
        self.check(lhs)?;
        self.check(rhs)?;
        Ok(self.add_unchecked(lhs, rhs))
    }

    fn add_unchecked(&self, lhs: &Point<T>, rhs: &Point<T>) -> Point<T> {
        let p = &self.p;
        let (x1, y1, x2, y2) = match (lhs, rhs) {
            (Point::Infinity, q) | (q, Point::Infinity) => return q.clone(),
            (Point::Affine { x: x1, y: y1 }, Point::Affine { x: x2, y: y2 }) => (x1, y1, x2, y2),
        };
        let lambda = if x1 == x2 {
            if y1 != y2 || y1.is_zero() {
                return Point::Infinity;
            }
            // tangent: (3x^2 + a) / 2y
            let num = T::from_u64(3).reduce(p).mul_mod(&x1.mul_mod(x1, p), p).add_mod(&self.a, p);
            let den = y1.add_mod(y1, p);
            num.mul_mod(&den.inv_mod(p).expect("2y is non-zero"), p)
        } else {
            let num = y2.sub_mod(y1, p);
            let den = x2.sub_mod(x1, p);
            num.mul_mod(&den.inv_mod(p).expect("x2 - x1 is non-zero"), p)
        };
        let x3 = lambda.mul_mod(&lambda, p).sub_mod(x1, p).sub_mod(x2, p);
        let y3 = lambda.mul_mod(&x1.sub_mod(&x3, p), p).sub_mod(y1, p);
        Point::affine(x3, y3)
    }

    /// `k * Q` by double-and-add. Counts one ECM. `k = 0` is rejected; any
    /// other multiplier is used as given, so `n * G` yields infinity.
    pub fn scalar_mult(
        &self,
        k: &T,
        q: &Point<T>,
        meter: &mut OpCounters,
    ) -> Result<Point<T>, CurveError> {
        if k.is_zero() {
            return Err(CurveError::InvalidScalar);
        }
        self.check(q)?;
        meter.record_ecm();
        Ok(self.multiply(k, q))
    }

    /// Unmetered, unchecked double-and-add in Jacobian coordinates.
    fn multiply(&self, k: &T, q: &Point<T>) -> Point<T> {
        let (qx, qy) = match q {
            Point::Infinity => return Point::Infinity,
            Point::Affine { x, y } => (x, y),
        };
        let mut acc = Jacobian { x: T::one(), y: T::one(), z: T::zero() };
        for i in (0..k.bit_len()).rev() {
            acc = self.jacobian_double(&acc);
            if k.bit(i) {
                acc = self.jacobian_add_affine(&acc, qx, qy);
            }
        }
        self.to_affine(&acc)
    }

    fn to_affine(&self, point: &Jacobian<T>) -> Point<T> {
        if point.z.is_zero() {
            return Point::Infinity;
        }
        let p = &self.p;
        let z_inv = point.z.inv_mod(p).expect("z is non-zero");
        let z_inv2 = z_inv.mul_mod(&z_inv, p);
        let z_inv3 = z_inv2.mul_mod(&z_inv, p);
        Point::affine(point.x.mul_mod(&z_inv2, p), point.y.mul_mod(&z_inv3, p))
    }

    fn jacobian_double(&self, pt: &Jacobian<T>) -> Jacobian<T> {
        if pt.z.is_zero() || pt.y.is_zero() {
            return Jacobian { x: T::one(), y: T::one(), z: T::zero() };
        }
        let p = &self.p;
        let xx = pt.x.mul_mod(&pt.x, p);
        let yy = pt.y.mul_mod(&pt.y, p);
        let yyyy = yy.mul_mod(&yy, p);
        let zz = pt.z.mul_mod(&pt.z, p);
        let xyy = pt.x.mul_mod(&yy, p);
        let s = xyy.add_mod(&xyy, p);
        let s = s.add_mod(&s, p);
        let three_xx = xx.add_mod(&xx, p).add_mod(&xx, p);
        let m = three_xx.add_mod(&self.a.mul_mod(&zz.mul_mod(&zz, p), p), p);
        let x3 = m.mul_mod(&m, p).sub_mod(&s.add_mod(&s, p), p);
        let eight_yyyy = {
            let two = yyyy.add_mod(&yyyy, p);
            let four = two.add_mod(&two, p);
            four.add_mod(&four, p)
        };
        let y3 = m.mul_mod(&s.sub_mod(&x3, p), p).sub_mod(&eight_yyyy, p);
        let yz = pt.y.mul_mod(&pt.z, p);
        let z3 = yz.add_mod(&yz, p);
        Jacobian { x: x3, y: y3, z: z3 }
    }

    fn jacobian_add_affine(&self, pt: &Jacobian<T>, qx: &T, qy: &T) -> Jacobian<T> {
        if pt.z.is_zero() {
            return Jacobian { x: qx.clone(), y: qy.clone(), z: T::one() };
        }
        let p = &self.p;
        let z1z1 = pt.z.mul_mod(&pt.z, p);
        let u2 = qx.mul_mod(&z1z1, p);
        let s2 = qy.mul_mod(&pt.z, p).mul_mod(&z1z1, p);
        if u2 == pt.x {
            if s2 == pt.y {
                return self.jacobian_double(pt);
            }
            return Jacobian { x: T::one(), y: T::one(), z: T::zero() };
        }
        let h = u2.sub_mod(&pt.x, p);
        let r = s2.sub_mod(&pt.y, p);
        let hh = h.mul_mod(&h, p);
        let hhh = hh.mul_mod(&h, p);
        let v = pt.x.mul_mod(&hh, p);
        let x3 = r.mul_mod(&r, p).sub_mod(&hhh, p).sub_mod(&v.add_mod(&v, p), p);
        let y3 = r.mul_mod(&v.sub_mod(&x3, p), p).sub_mod(&pt.y.mul_mod(&hhh, p), p);
        let z3 = pt.z.mul_mod(&h, p);
        Jacobian { x: x3, y: y3, z: z3 }
    }

    /// Square root modulo the field prime (Tonelli-Shanks).
    pub fn sqrt(&self, value: &T) -> Option<T> {
        let p = &self.p;
        let value = value.reduce(p);
        if value.is_zero() {
            return Some(T::zero());
        }
        let two = T::from_u64(2);
        let p_minus_one = p.clone() - T::one();
        let legendre_exp = p_minus_one.clone() / two.clone();
        if value.pow_mod(&legendre_exp, p) != T::one() {
            return None;
        }
        let mut q = p_minus_one.clone();
        let mut s = 0u32;
        while !q.is_odd() {
            q = q / two.clone();
            s += 1;
        }
        if s == 1 {
            let exp = (p.clone() + T::one()) / T::from_u64(4);
            return Some(value.pow_mod(&exp, p));
        }
        let mut z = two.clone();
        while z.pow_mod(&legendre_exp, p) != p_minus_one {
            z = z + T::one();
        }
        let mut m = s;
        let mut c = z.pow_mod(&q, p);
        let mut t = value.pow_mod(&q, p);
        let mut r = value.pow_mod(&((q + T::one()) / two), p);
        while t != T::one() {
            let mut i = 0u32;
            let mut t2i = t.clone();
            while t2i != T::one() {
                t2i = t2i.mul_mod(&t2i, p);
                i += 1;
            }
            let mut b = c.clone();
            for _ in 0..(m - i - 1) {
                b = b.mul_mod(&b, p);
            }
            m = i;
            c = b.mul_mod(&b, p);
            t = t.mul_mod(&c, p);
            r = r.mul_mod(&b, p);
        }
        Some(r)
    }

    /// Compressed form: `0x02|0x03 || x` (parity of y), or `0x00` for infinity.
    pub fn encode_point(&self, point: &Point<T>) -> Vec<u8> {
        match point {
            Point::Infinity => vec![0x00],
            Point::Affine { x, y } => {
                let mut out = Vec::with_capacity(1 + self.coordinate_width());
                out.push(if y.is_odd() { 0x03 } else { 0x02 });
                out.extend(x.to_be_bytes_padded(self.coordinate_width()));
                out
            }
        }
    }

    pub fn decode_point(&self, bytes: &[u8]) -> Result<Point<T>, CurveError> {
        let expected = 1 + self.coordinate_width();
        match bytes {
            [0x00] => return Ok(Point::Infinity),
            _ if bytes.len() != expected => {
                return Err(CurveError::EncodingLength { expected, found: bytes.len() })
            }
            _ => {}
        }
        let want_odd = match bytes[0] {
            0x02 => false,
            0x03 => true,
            other => return Err(CurveError::EncodingPrefix(other)),
        };
        let x = T::from_be_bytes(&bytes[1..]);
        if x >= self.p {
            return Err(CurveError::CoordinateRange);
        }
        let y = self.sqrt(&self.rhs(&x)).ok_or(CurveError::NotOnCurve)?;
        let y = if y.is_odd() == want_odd {
            y
        } else if y.is_zero() {
            return Err(CurveError::NotOnCurve);
        } else {
            y.neg_mod(&self.p)
        };
        Ok(Point::affine(x, y))
    }

    pub fn point_field(&self, point: &Point<T>) -> Field {
        Field::fixed(FieldKind::Point, self.encode_point(point))
    }

    pub fn scalar_bytes(&self, value: &T) -> Vec<u8> {
        value.to_be_bytes_padded(self.scalar_width())
    }
}

impl CurveParams<u64> {
    /// `y^2 = x^3 + 2x + 2` over F_17, generator (5, 1) of prime order 19.
    pub fn toy() -> Self {
        CurveParams::new("toy17", 17, 2, 2, Point::affine(5, 1), 19, 1)
            .expect("toy curve parameters are valid")
    }
}

fn hex(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("valid hex constant")
}

impl CurveParams<BigUint> {
    /// NIST P-256 (secp256r1).
    pub fn p256() -> Self {
        let p = hex("ffffffff00000001000000000000000000000000ffffffffffffffffffffffff");
        let a = &p - BigUint::from(3u32);
        Self {
            name: "p256",
            a,
            b: hex("5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b"),
            generator: Point::affine(
                hex("6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296"),
                hex("4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5"),
            ),
            n: hex("ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551"),
            p,
            cofactor: 1,
        }
    }
}
