//! Fixed-point torus coordinates and high-precision frequencies.
//!
//! A [`Turn`] is an element of `R/Z` stored as a 128-bit binary fraction.
//! Addition and integer multiples wrap, so reduction mod 1 is free and exact.
//! A [`Frequency`] keeps a longer dyadic mantissa so continued fractions can
//! be certified far past double precision.

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::{Error, Result};

const TWO_POW_128: f64 = 340_282_366_920_938_463_463_374_607_431_768_211_456.0;

/// An element of `R/Z`, represented as `value / 2^128`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Turn(pub u128);

impl Turn {
    pub const ZERO: Turn = Turn(0);
    pub const HALF: Turn = Turn(1 << 127);

    /// Reduce `x` mod 1. Exact for every finite double.
    pub fn from_f64(x: f64) -> Turn {
        assert!(x.is_finite(), "non-finite torus coordinate");
        let frac = x - x.floor();
        if frac >= 1.0 {
            return Turn::ZERO;
        }
        // frac * 2^128 is a power-of-two scaling, so only bits below 2^-128 are lost.
        Turn((frac * TWO_POW_128) as u128)
    }

    /// Fractional part as a double in `[0, 1)`.
    pub fn to_f64(self) -> f64 {
        let v = self.0 as f64 / TWO_POW_128;
        if v >= 1.0 {
            1.0 - f64::EPSILON / 2.0
        } else {
            v
        }
    }

    /// Signed representative in `[-1/2, 1/2)`.
    pub fn to_signed_f64(self) -> f64 {
        (self.0 as i128) as f64 / TWO_POW_128
    }

    /// Distance to the nearest integer, `‖x‖`.
    pub fn norm(self) -> f64 {
        self.norm_raw() as f64 / TWO_POW_128
    }

    /// `‖x‖` as a 128-bit fraction (at most `2^127`).
    pub fn norm_raw(self) -> u128 {
        self.0.min(self.0.wrapping_neg())
    }

    pub fn mul_int(self, k: i128) -> Turn {
        Turn(self.0.wrapping_mul(k as u128))
    }

    pub fn mul_u128(self, k: u128) -> Turn {
        Turn(self.0.wrapping_mul(k))
    }

    /// `k * x mod 1` for an arbitrary-width non-negative integer `k`.
    ///
    /// Only the low 128 bits of `k` matter because `x` has 128 fractional bits.
    pub fn mul_big(self, k: &BigUint) -> Turn {
        let digits = k.to_u64_digits();
        let lo = digits.first().copied().unwrap_or(0) as u128
            | (digits.get(1).copied().unwrap_or(0) as u128) << 64;
        self.mul_u128(lo)
    }

    /// The integer `ℓ` nearest to `k x`, reading `x` as a real in `[0, 1)`.
    pub fn nearest_integer_of_multiple(self, k: u64) -> i64 {
        let prod = (self.0 >> 64) * k as u128 + (((self.0 as u64 as u128) * k as u128) >> 64);
        // prod approximates k*x*2^64; round to the nearest multiple of 2^64.
        ((prod + (1u128 << 63)) >> 64) as i64
    }
}

impl Add for Turn {
    type Output = Turn;
    fn add(self, rhs: Turn) -> Turn {
        Turn(self.0.wrapping_add(rhs.0))
    }
}

impl Sub for Turn {
    type Output = Turn;
    fn sub(self, rhs: Turn) -> Turn {
        Turn(self.0.wrapping_sub(rhs.0))
    }
}

impl Neg for Turn {
    type Output = Turn;
    fn neg(self) -> Turn {
        Turn(self.0.wrapping_neg())
    }
}

impl AddAssign for Turn {
    fn add_assign(&mut self, rhs: Turn) {
        self.0 = self.0.wrapping_add(rhs.0);
    }
}

impl SubAssign for Turn {
    fn sub_assign(&mut self, rhs: Turn) {
        self.0 = self.0.wrapping_sub(rhs.0);
    }
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Default working precision for named irrationals.
pub const DEFAULT_BITS: u32 = 256;
/// Hard cap on the mantissa length of any frequency.
pub const MAX_BITS: u32 = 4096;

/// A real number in `[0, 1)` known to lie in `[m / 2^bits, (m+1) / 2^bits)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frequency {
    mantissa: BigUint,
    bits: u32,
    label: String,
}

impl Frequency {
    pub fn from_parts(mantissa: BigUint, bits: u32, label: impl Into<String>) -> Result<Self> {
        if bits < 128 || bits > MAX_BITS {
            return Err(Error::invalid(format!(
                "frequency precision {bits} outside [128, {MAX_BITS}] bits"
            )));
        }
        if mantissa.bits() > bits as u64 {
            return Err(Error::invalid("frequency mantissa exceeds [0,1)"));
        }
        Ok(Frequency {
            mantissa,
            bits,
            label: label.into(),
        })
    }

    /// A frequency given exactly by a 128-bit fraction.
    pub fn from_turn(t: Turn) -> Self {
        Frequency {
            mantissa: BigUint::from(t.0),
            bits: 128,
            label: format!("{}", t.to_f64()),
        }
    }

    /// Nearest dyadic to a double, reduced mod 1.
    pub fn from_f64(x: f64) -> Self {
        let mut f = Frequency::from_turn(Turn::from_f64(x));
        f.label = format!("{x}");
        f
    }

    /// `(√5 − 1)/2`.
    pub fn golden() -> Self {
        let b = DEFAULT_BITS;
        let s = (BigUint::from(5u32) << (2 * b as usize)).sqrt();
        let m = (s - (BigUint::one() << b as usize)) >> 1usize;
        Frequency {
            mantissa: m,
            bits: b,
            label: "golden".into(),
        }
    }

    /// `√n − k` for a non-square `n` with `k = ⌊√n⌋`.
    pub fn sqrt_minus_floor(n: u32, label: &str) -> Self {
        let b = DEFAULT_BITS;
        let k = (n as f64).sqrt().floor() as u32;
        let s = (BigUint::from(n) << (2 * b as usize)).sqrt();
        let m = s - (BigUint::from(k) << b as usize);
        Frequency {
            mantissa: m,
            bits: b,
            label: label.into(),
        }
    }

    /// Parse a decimal string such as `"0.6180339887"` (reduced mod 1).
    pub fn parse_decimal(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed decimal frequency `{s}`"));
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.bytes().all(|c| c.is_ascii_digit())
            || !frac_part.bytes().all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let digits = if frac_part.is_empty() { "0" } else { frac_part };
        let num: BigUint = digits.parse().map_err(|_| bad())?;
        let den = BigUint::from(10u32).pow(frac_part.len() as u32);
        let b = DEFAULT_BITS;
        let mut m = (num << b as usize) / den;
        if neg && !m.is_zero() {
            m = (BigUint::one() << b as usize) - m;
        }
        Ok(Frequency {
            mantissa: m,
            bits: b,
            label: t.to_string(),
        })
    }

    pub fn mantissa(&self) -> &BigUint {
        &self.mantissa
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// The leading 128 fractional bits.
    pub fn turn(&self) -> Turn {
        let top = &self.mantissa >> (self.bits - 128) as usize;
        Turn(top.to_u128().expect("mantissa fits its declared width"))
    }

    pub fn to_f64(&self) -> f64 {
        self.turn().to_f64()
    }

    /// `‖k α‖` using the full mantissa; exact up to `2^-bits` for `k < 2^64`.
    pub fn norm_of_multiple(&self, k: u64) -> f64 {
        self.multiple(k).norm()
    }

    /// `k α mod 1` computed from the full mantissa and rounded down to 128 bits.
    pub fn multiple(&self, k: u64) -> Turn {
        let modulus_bits = self.bits as usize;
        let prod = &self.mantissa * BigUint::from(k);
        let mask = (BigUint::one() << modulus_bits) - BigUint::one();
        let frac = (prod & mask) >> (modulus_bits - 128);
        Turn(frac.to_u128().expect("masked to 128 bits"))
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}
