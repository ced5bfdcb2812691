//! Arithmetic modulo the Mersenne prime 2^127 - 1 and the fixed-point
//! encoding used for (doubled) scores.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The field modulus, 2^127 - 1.
pub const MODULUS: u128 = (1u128 << 127) - 1;

/// Bit length of [`MODULUS`].
pub const MODULUS_BITS: u32 = 127;

/// An element of GF(2^127 - 1), always held in canonical form `[0, p)`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fe(u128);

impl Fe {
    pub const ZERO: Fe = Fe(0);
    pub const ONE: Fe = Fe(1);

    /// Reduces an arbitrary `u128` into the field.
    pub const fn new(value: u128) -> Self {
        let folded = (value & MODULUS) + (value >> 127);
        Fe(if folded >= MODULUS { folded - MODULUS } else { folded })
    }

    pub const fn from_u64(value: u64) -> Self {
        Fe(value as u128)
    }

    /// Maps a signed integer to its residue.
    pub fn from_i128(value: i128) -> Self {
        if value >= 0 {
            Fe::new(value as u128)
        } else {
            -Fe::new(value.unsigned_abs())
        }
    }

    pub const fn value(self) -> u128 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Centered representative: `x` if `x < p/2`, else `x - p`.
    pub fn signed_lift(self) -> i128 {
        if self.0 <= MODULUS / 2 {
            self.0 as i128
        } else {
            -((MODULUS - self.0) as i128)
        }
    }

    pub fn pow(self, mut exp: u128) -> Fe {
        let mut base = self;
        let mut acc = Fe::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat; `None` for zero.
    pub fn inverse(self) -> Option<Fe> {
        if self.is_zero() {
            None
        } else {
            Some(self.pow(MODULUS - 2))
        }
    }

    /// 2^k for `k < 127`.
    pub fn pow2(k: u32) -> Fe {
        assert!(k < MODULUS_BITS, "2^{k} is not below the modulus");
        Fe(1u128 << k)
    }

    pub fn to_le_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    /// Decodes 16 little-endian bytes; rejects non-canonical encodings.
    pub fn from_le_bytes(bytes: [u8; 16]) -> Result<Fe> {
        let v = u128::from_le_bytes(bytes);
        if v >= MODULUS {
            return Err(Error::Malformed(format!("non-canonical field element {v:#x}")));
        }
        Ok(Fe(v))
    }

    /// Samples a uniform element by rejection on 127-bit draws.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Fe {
        loop {
            let v = rng.gen::<u128>() >> 1;
            if v < MODULUS {
                return Fe(v);
            }
        }
    }
}

/// Full 256-bit product of two values below 2^127, returned as (hi, lo).
#[inline]
fn wide_mul(a: u128, b: u128) -> (u128, u128) {
    let (a0, a1) = (a as u64 as u128, a >> 64);
    let (b0, b1) = (b as u64 as u128, b >> 64);
    let ll = a0 * b0;
    let hh = a1 * b1;
    // a1, b1 < 2^63 so the two cross terms sum without overflow
    let mid = a0 * b1 + a1 * b0;
    let (lo, carry) = ll.overflowing_add(mid << 64);
    let hi = hh + (mid >> 64) + carry as u128;
    (hi, lo)
}

impl Add for Fe {
    type Output = Fe;
    #[inline]
    fn add(self, rhs: Fe) -> Fe {
        let s = self.0 + rhs.0;
        Fe(if s >= MODULUS { s - MODULUS } else { s })
    }
}

impl Sub for Fe {
    type Output = Fe;
    #[inline]
    fn sub(self, rhs: Fe) -> Fe {
        if self.0 >= rhs.0 {
            Fe(self.0 - rhs.0)
        } else {
            Fe(self.0 + MODULUS - rhs.0)
        }
    }
}

impl Neg for Fe {
    type Output = Fe;
    #[inline]
    fn neg(self) -> Fe {
        if self.0 == 0 {
            self
        } else {
            Fe(MODULUS - self.0)
        }
    }
}

impl Mul for Fe {
    type Output = Fe;
    #[inline]
    fn mul(self, rhs: Fe) -> Fe {
        let (hi, lo) = wide_mul(self.0, rhs.0);
        // x = hi*2^128 + lo and 2^127 = 1 (mod p)
        let high_part = (hi << 1) | (lo >> 127);
        Fe::new((lo & MODULUS) + high_part)
    }
}

impl AddAssign for Fe {
    fn add_assign(&mut self, rhs: Fe) {
        *self = *self + rhs;
    }
}

impl SubAssign for Fe {
    fn sub_assign(&mut self, rhs: Fe) {
        *self = *self - rhs;
    }
}

impl std::iter::Sum for Fe {
    fn sum<I: Iterator<Item = Fe>>(iter: I) -> Fe {
        iter.fold(Fe::ZERO, Add::add)
    }
}

impl From<u64> for Fe {
    fn from(v: u64) -> Fe {
        Fe::from_u64(v)
    }
}

impl fmt::Debug for Fe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fe({})", self.0)
    }
}

impl fmt::Display for Fe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Session-wide numeric parameters. The modulus is fixed at 2^127 - 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Fraction bits of the fixed-point encoding.
    pub frac_bits: u32,
    /// Signed magnitude bound exponent: compared values lie in (-2^K, 2^K).
    pub magnitude_bits: u32,
    /// Statistical masking parameter for masked openings.
    pub sigma: u32,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            frac_bits: 16,
            magnitude_bits: 40,
            sigma: 40,
        }
    }
}

impl FieldParams {
    pub fn validate(&self) -> Result<()> {
        if self.frac_bits == 0 {
            return Err(Error::Config("fraction bits must be at least 1".into()));
        }
        if self.magnitude_bits == 0 {
            return Err(Error::Config("magnitude bound exponent must be positive".into()));
        }
        if self.magnitude_bits + self.sigma + 2 >= MODULUS_BITS - 1 {
            return Err(Error::Config(format!(
                "K + sigma + 2 = {} leaves no room below the {}-bit modulus",
                self.magnitude_bits + self.sigma + 2,
                MODULUS_BITS
            )));
        }
        Ok(())
    }

    /// 2^K as an integer.
    pub fn magnitude_bound(&self) -> i128 {
        1i128 << self.magnitude_bits
    }

    pub fn encode(&self, r: f64) -> Result<FixedPoint> {
        FixedPoint::encode(r, self.frac_bits, self.magnitude_bits)
    }

    pub fn decode(&self, x: FixedPoint) -> f64 {
        x.decode(self.frac_bits)
    }

    /// Fails unless `|x| < 2^K`.
    pub fn check_magnitude(&self, x: FixedPoint) -> Result<FixedPoint> {
        if x.0.unsigned_abs() >= self.magnitude_bound() as u128 {
            Err(Error::Overflow(format!(
                "fixed-point mantissa {} exceeds 2^{}",
                x.0, self.magnitude_bits
            )))
        } else {
            Ok(x)
        }
    }
}

/// A real number carried as `mantissa / 2^f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FixedPoint(pub i128);

impl FixedPoint {
    pub const ZERO: FixedPoint = FixedPoint(0);

    /// Round-half-to-even quantization; errors when `|r|·2^f ≥ 2^K`.
    pub fn encode(r: f64, frac_bits: u32, magnitude_bits: u32) -> Result<FixedPoint> {
        let scaled = r * (frac_bits as f64).exp2();
        let bound = (magnitude_bits as f64).exp2();
        if !scaled.is_finite() || scaled.abs() >= bound {
            return Err(Error::Overflow(format!(
                "{r} does not fit in 2^{magnitude_bits} at {frac_bits} fraction bits"
            )));
        }
        Ok(FixedPoint(scaled.round_ties_even() as i128))
    }

    pub fn decode(self, frac_bits: u32) -> f64 {
        self.0 as f64 / (frac_bits as f64).exp2()
    }

    pub fn mantissa(self) -> i128 {
        self.0
    }

    pub fn to_field(self) -> Fe {
        Fe::from_i128(self.0)
    }

    pub fn from_field(x: Fe) -> FixedPoint {
        FixedPoint(x.signed_lift())
    }
}

impl Add for FixedPoint {
    type Output = FixedPoint;
    fn add(self, rhs: FixedPoint) -> FixedPoint {
        FixedPoint(self.0 + rhs.0)
    }
}

impl Sub for FixedPoint {
    type Output = FixedPoint;
    fn sub(self, rhs: FixedPoint) -> FixedPoint {
        FixedPoint(self.0 - rhs.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn p() -> Fe {
        Fe::new(MODULUS)
    }

    #[test]
    fn wraparound_and_identities() {
        let pm1 = Fe::new(MODULUS - 1);
        assert_eq!(pm1 + Fe::ONE, Fe::ZERO);
        assert_eq!(p(), Fe::ZERO);
        let x = Fe::new(123_456_789);
        assert_eq!(x * Fe::ONE, x);
        assert_eq!(Fe::from_u64(3) * Fe::from_u64(4), Fe::from_u64(12));
        assert_eq!(Fe::ZERO - Fe::ONE, pm1);
        assert_eq!(-Fe::ZERO, Fe::ZERO);
        assert_eq!(Fe::new(u128::MAX), Fe::new(1));
    }

    #[test]
    fn signed_lift_examples() {
        assert_eq!(Fe::ZERO.signed_lift(), 0);
        assert_eq!(Fe::new(MODULUS - 5).signed_lift(), -5);
        assert_eq!(Fe::from_u64(7).signed_lift(), 7);
        assert_eq!(Fe::from_i128(-5), Fe::new(MODULUS - 5));
    }

    #[test]
    fn encode_examples() {
        assert_eq!(FixedPoint::encode(0.0, 16, 40).unwrap(), FixedPoint(0));
        assert_eq!(FixedPoint::encode(1.0, 16, 40).unwrap(), FixedPoint(65536));
        assert_eq!(FixedPoint::encode(std::f64::consts::LN_2, 16, 40).unwrap(), FixedPoint(45426));
        assert_eq!(FixedPoint::encode(2.5 / 65536.0, 16, 40).unwrap(), FixedPoint(2));
        assert_eq!(FixedPoint::encode(3.5 / 65536.0, 16, 40).unwrap(), FixedPoint(4));
        assert!(FixedPoint::encode((1u64 << 30) as f64, 16, 40).is_err());
        assert!(FixedPoint::encode(f64::NAN, 16, 40).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(FieldParams::default().validate().is_ok());
        let bad = FieldParams { frac_bits: 16, magnitude_bits: 80, sigma: 44 };
        assert!(bad.validate().is_err());
        let zero_f = FieldParams { frac_bits: 0, ..FieldParams::default() };
        assert!(zero_f.validate().is_err());
    }

    #[test]
    fn inverse_and_serialization() {
        let x = Fe::new(0xdead_beef_cafe_babe_1234);
        assert_eq!(x * x.inverse().unwrap(), Fe::ONE);
        assert!(Fe::ZERO.inverse().is_none());
        assert_eq!(Fe::from_le_bytes(x.to_le_bytes()).unwrap(), x);
        assert!(Fe::from_le_bytes(MODULUS.to_le_bytes()).is_err());
    }

    #[test]
    fn agrees_with_bigint_reference() {
        let modulus = BigUint::from(MODULUS);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let a = Fe::random(&mut rng);
            let b = Fe::random(&mut rng);
            let (ba, bb) = (BigUint::from(a.value()), BigUint::from(b.value()));
            let expect = |v: BigUint| Fe::new(u128::try_from(v).unwrap());
            assert_eq!(a * b, expect((&ba * &bb) % &modulus));
            assert_eq!(a + b, expect((&ba + &bb) % &modulus));
            assert_eq!(a - b, expect((&ba + &modulus - &bb) % &modulus));
            assert_eq!(-a, expect((&modulus - &ba) % &modulus));
        }
    }

    #[test]
    fn extreme_operands() {
        let pm1 = Fe::new(MODULUS - 1);
        // (-1)(-1) = 1
        assert_eq!(pm1 * pm1, Fe::ONE);
        assert_eq!(pm1 * Fe::from_u64(2), Fe::new(MODULUS - 2));
    }

    proptest::proptest! {
        #[test]
        fn neg_commutes_with_lift(v in -(1i128 << 120)..(1i128 << 120)) {
            let x = Fe::from_i128(v);
            proptest::prop_assert_eq!((-x).signed_lift(), -x.signed_lift());
            proptest::prop_assert_eq!(x.signed_lift(), v);
        }

        #[test]
        fn encoding_is_additive_within_rounding(a in -1.0e5f64..1.0e5, b in -1.0e5f64..1.0e5) {
            let ea = FixedPoint::encode(a, 16, 40).unwrap();
            let eb = FixedPoint::encode(b, 16, 40).unwrap();
            let sum = (ea + eb).decode(16);
            proptest::prop_assert!((sum - (a + b)).abs() <= (-16f64).exp2());
        }
    }
}
