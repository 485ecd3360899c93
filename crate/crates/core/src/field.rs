//! Prime-field arithmetic over `Z_q` and the fixed-point bridge between real
//! model weights and field elements.
//!
//! The default modulus is the Mersenne prime `2^127 - 1`, which gets a fast
//! reduction path. Any prime below `2^127` is accepted so that the small
//! worked examples (`Z_23`) run through the same code.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `2^127 - 1`.
pub const MERSENNE_127: u128 = (1u128 << 127) - 1;

/// Default number of fractional bits of the fixed-point encoding.
pub const DEFAULT_F_BITS: u32 = 16;

/// Encoded reals must satisfy `|x| < 2^40`.
pub const MAX_ABS_EXPONENT: u32 = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("field parameter mismatch: q = {left} vs q = {right}")]
    ParameterMismatch { left: u128, right: u128 },
    #[error("modulus {0} is not prime")]
    NotPrime(u128),
    #[error("modulus {0} must lie in [2, 2^127)")]
    ModulusOutOfRange(u128),
    #[error("2^(f_bits + 40) must be below q/2 (f_bits = {f_bits}, q = {q})")]
    InsufficientHeadroom { f_bits: u32, q: u128 },
    #[error("value {0} cannot be encoded (|x| must be finite and below 2^40)")]
    OutOfRange(f64),
    #[error("value {0} is not an integer in [0, q) and cannot be encoded in integer mode")]
    NotAnInteger(f64),
    #[error("decoded magnitude exceeds 2^(f_bits + 40): aggregation wrapped around")]
    DecodeOverflow,
    #[error("serialized element {0} is not below the modulus")]
    NonCanonical(u128),
}

/// The prime field `Z_q`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u128", into = "u128")]
pub struct Field {
    modulus: u128,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.modulus == MERSENNE_127 {
            write!(f, "Z_(2^127-1)")
        } else {
            write!(f, "Z_{}", self.modulus)
        }
    }
}

impl TryFrom<u128> for Field {
    type Error = FieldError;

    fn try_from(q: u128) -> Result<Self, Self::Error> {
        Field::new(q)
    }
}

impl From<Field> for u128 {
    fn from(f: Field) -> u128 {
        f.modulus
    }
}

impl Default for Field {
    fn default() -> Self {
        Field::mersenne127()
    }
}

impl Field {
    pub fn new(q: u128) -> Result<Self, FieldError> {
        if !(2..(1u128 << 127)).contains(&q) {
            return Err(FieldError::ModulusOutOfRange(q));
        }
        if q != MERSENNE_127 && !is_prime(q) {
            return Err(FieldError::NotPrime(q));
        }
        Ok(Field { modulus: q })
    }

    pub const fn mersenne127() -> Self {
        Field {
            modulus: MERSENNE_127,
        }
    }

    pub fn modulus(&self) -> u128 {
        self.modulus
    }

    /// Element with value `v mod q`.
    pub fn element(&self, v: u128) -> FieldElement {
        FieldElement {
            value: v % self.modulus,
            field: *self,
        }
    }

    pub fn zero(&self) -> FieldElement {
        self.element(0)
    }

    pub fn one(&self) -> FieldElement {
        self.element(1)
    }

    /// Signed integer mapped into the field; negatives land in the upper half.
    pub fn from_i128(&self, v: i128) -> FieldElement {
        let q = self.modulus as i128;
        self.element(v.rem_euclid(q) as u128)
    }

    /// Uniform element, by rejection sampling on the bit length of `q`.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        let bits = 128 - self.modulus.leading_zeros();
        let mask = if bits == 128 {
            u128::MAX
        } else {
            (1u128 << bits) - 1
        };
        loop {
            let v = rng.gen::<u128>() & mask;
            if v < self.modulus {
                return FieldElement {
                    value: v,
                    field: *self,
                };
            }
        }
    }

    /// Parses a 16-byte little-endian canonical representative.
    pub fn from_le_bytes(&self, bytes: [u8; 16]) -> Result<FieldElement, FieldError> {
        let v = u128::from_le_bytes(bytes);
        if v >= self.modulus {
            return Err(FieldError::NonCanonical(v));
        }
        Ok(FieldElement {
            value: v,
            field: *self,
        })
    }

    fn add_raw(&self, a: u128, b: u128) -> u128 {
        // a, b < q < 2^127, so the sum fits in u128.
        let s = a + b;
        if s >= self.modulus {
            s - self.modulus
        } else {
            s
        }
    }

    fn sub_raw(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            self.modulus - (b - a)
        }
    }

    fn mul_raw(&self, a: u128, b: u128) -> u128 {
        let q = self.modulus;
        if q == MERSENNE_127 {
            let (hi, lo) = widening_mul(a, b);
            // x = hi * 2^128 + lo = (hi * 2 + (lo >> 127)) * 2^127 + (lo & M)
            let low = lo & MERSENNE_127;
            let high = (hi << 1) | (lo >> 127);
            let mut r = low + high;
            r = (r & MERSENNE_127) + (r >> 127);
            if r >= MERSENNE_127 {
                r -= MERSENNE_127;
            }
            r
        } else if q <= u64::MAX as u128 {
            (a * b) % q
        } else {
            // Double-and-add; only reached for large non-Mersenne moduli.
            let mut acc = 0u128;
            let mut base = a;
            let mut e = b;
            while e > 0 {
                if e & 1 == 1 {
                    acc = self.add_raw(acc, base);
                }
                base = self.add_raw(base, base);
                e >>= 1;
            }
            acc
        }
    }

    fn pow_raw(&self, mut base: u128, mut e: u128) -> u128 {
        let mut acc = 1 % self.modulus;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul_raw(acc, base);
            }
            base = self.mul_raw(base, base);
            e >>= 1;
        }
        acc
    }
}

fn widening_mul(a: u128, b: u128) -> (u128, u128) {
    const LO: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & LO);
    let (b1, b0) = (b >> 64, b & LO);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & LO) + (p10 & LO);
    let lo = (p00 & LO) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

/// Miller-Rabin with the first twelve prime bases (deterministic below
/// 3.3 * 10^24, overwhelmingly reliable above).
fn is_prime(n: u128) -> bool {
    const BASES: [u128; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in BASES {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let f = Field { modulus: n };
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = f.pow_raw(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = f.mul_raw(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// An element of `Z_q`. The value is always the canonical representative in `[0, q)`.
///
/// Operators panic when the operands belong to different fields; use the
/// `try_*` methods where the fields are not known to agree.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u128,
    field: Field,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl FieldElement {
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    fn check(&self, other: &Self) -> Result<(), FieldError> {
        if self.field != other.field {
            return Err(FieldError::ParameterMismatch {
                left: self.field.modulus,
                right: other.field.modulus,
            });
        }
        Ok(())
    }

    pub fn try_add(self, other: Self) -> Result<Self, FieldError> {
        self.check(&other)?;
        Ok(FieldElement {
            value: self.field.add_raw(self.value, other.value),
            field: self.field,
        })
    }

    pub fn try_sub(self, other: Self) -> Result<Self, FieldError> {
        self.check(&other)?;
        Ok(FieldElement {
            value: self.field.sub_raw(self.value, other.value),
            field: self.field,
        })
    }

    pub fn try_mul(self, other: Self) -> Result<Self, FieldError> {
        self.check(&other)?;
        Ok(FieldElement {
            value: self.field.mul_raw(self.value, other.value),
            field: self.field,
        })
    }

    /// Representative in `(-q/2, q/2]`.
    pub fn centered(&self) -> i128 {
        let q = self.field.modulus;
        if self.value > q / 2 {
            -((q - self.value) as i128)
        } else {
            self.value as i128
        }
    }

    pub fn to_le_bytes(&self) -> [u8; 16] {
        self.value.to_le_bytes()
    }
}

impl Add for FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: Self) -> Self {
        self.try_add(rhs).expect("field mismatch in addition")
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: Self) -> Self {
        self.try_sub(rhs).expect("field mismatch in subtraction")
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: Self) -> Self {
        self.try_mul(rhs).expect("field mismatch in multiplication")
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> Self {
        FieldElement {
            value: self.field.sub_raw(0, self.value),
            field: self.field,
        }
    }
}

/// Field plus the number of fractional bits used by the fixed-point codec.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldParams {
    field: Field,
    f_bits: u32,
}

impl FieldParams {
    pub fn new(field: Field, f_bits: u32) -> Result<Self, FieldError> {
        let q = field.modulus();
        let exp = f_bits + MAX_ABS_EXPONENT;
        if exp >= 126 || (1u128 << exp) >= q / 2 {
            return Err(FieldError::InsufficientHeadroom { f_bits, q });
        }
        Ok(FieldParams { field, f_bits })
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn f_bits(&self) -> u32 {
        self.f_bits
    }
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            field: Field::mersenne127(),
            f_bits: DEFAULT_F_BITS,
        }
    }
}

/// Fixed-point bridge: `x -> round(x * 2^f) mod q`, decoded through the
/// centered representative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FixedPointCodec {
    params: FieldParams,
}

impl FixedPointCodec {
    pub fn new(params: FieldParams) -> Self {
        FixedPointCodec { params }
    }

    pub fn params(&self) -> FieldParams {
        self.params
    }

    fn scale(&self) -> f64 {
        (self.params.f_bits as f64).exp2()
    }

    pub fn encode(&self, x: f64) -> Result<FieldElement, FieldError> {
        if !x.is_finite() || x.abs() >= (MAX_ABS_EXPONENT as f64).exp2() {
            return Err(FieldError::OutOfRange(x));
        }
        let scaled = (x * self.scale()).round() as i128;
        Ok(self.params.field.from_i128(scaled))
    }

    pub fn decode(&self, e: FieldElement) -> Result<f64, FieldError> {
        if e.field() != self.params.field {
            return Err(FieldError::ParameterMismatch {
                left: e.field().modulus(),
                right: self.params.field.modulus(),
            });
        }
        let c = e.centered();
        if c.unsigned_abs() >= 1u128 << (self.params.f_bits + MAX_ABS_EXPONENT) {
            return Err(FieldError::DecodeOverflow);
        }
        Ok(c as f64 / self.scale())
    }

    /// `decode(encode(x))`: the value the protocol actually carries for `x`.
    pub fn quantize(&self, x: f64) -> Result<f64, FieldError> {
        self.decode(self.encode(x)?)
    }
}

/// How real values become field elements.
///
/// `Integer` carries non-negative integers verbatim and decodes the canonical
/// representative; it exists for small-field walkthroughs such as `Z_23`
/// where fixed-point headroom is impossible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Codec {
    FixedPoint(FixedPointCodec),
    Integer(Field),
}

impl Default for Codec {
    fn default() -> Self {
        Codec::FixedPoint(FixedPointCodec::default())
    }
}

impl Codec {
    pub fn field(&self) -> Field {
        match self {
            Codec::FixedPoint(c) => c.params().field(),
            Codec::Integer(f) => *f,
        }
    }

    pub fn encode(&self, x: f64) -> Result<FieldElement, FieldError> {
        match self {
            Codec::FixedPoint(c) => c.encode(x),
            Codec::Integer(f) => {
                if !x.is_finite() || x.fract() != 0.0 || x < 0.0 || x >= f.modulus() as f64 {
                    return Err(FieldError::NotAnInteger(x));
                }
                Ok(f.element(x as u128))
            }
        }
    }

    pub fn decode(&self, e: FieldElement) -> Result<f64, FieldError> {
        match self {
            Codec::FixedPoint(c) => c.decode(e),
            Codec::Integer(f) => {
                if e.field() != *f {
                    return Err(FieldError::ParameterMismatch {
                        left: e.field().modulus(),
                        right: f.modulus(),
                    });
                }
                Ok(e.value() as f64)
            }
        }
    }

    pub fn quantize(&self, x: f64) -> Result<f64, FieldError> {
        self.decode(self.encode(x)?)
    }

    pub fn encode_vec(&self, xs: &[f64]) -> Result<Vec<FieldElement>, FieldError> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }
}
