//! Scaled fixed-point decimals used for conversion values, sensitivities
//! and privacy budgets.
//!
//! Values are stored as an `i64` count of nano-units (9 fractional digits).
//! All budget arithmetic stays in integers so that long sequences of small
//! deductions sum identically on every platform.

use alloc::string::{String, ToString};
use core::fmt;
use core::iter::Sum;
use core::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use core::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Fixed-point decimal with 9 fractional digits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseFixedError {
    #[error("empty decimal literal")]
    Empty,
    #[error("invalid decimal literal `{0}`")]
    Invalid(String),
    #[error("decimal literal `{0}` has more than 9 fractional digits")]
    TooPrecise(String),
    #[error("decimal literal `{0}` is out of range")]
    OutOfRange(String),
}

impl Fixed {
    pub const FRACTIONAL_DIGITS: u32 = 9;
    pub const SCALE: i64 = 1_000_000_000;
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(Self::SCALE);
    pub const MAX: Fixed = Fixed(i64::MAX);

    pub const fn from_raw(raw: i64) -> Self {
        Fixed(raw)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    pub const fn from_int(value: i64) -> Self {
        Fixed(value * Self::SCALE)
    }

    /// Rounds to the nearest representable value.
    pub fn from_f64(value: f64) -> Self {
        Fixed(libm::round(value * Self::SCALE as f64) as i64)
    }

    /// Rounds toward positive infinity.
    pub fn from_f64_ceil(value: f64) -> Self {
        Fixed(libm::ceil(value * Self::SCALE as f64) as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub const fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub const fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn abs(self) -> Self {
        Fixed(self.0.abs())
    }

    pub fn checked_add(self, rhs: Fixed) -> Option<Fixed> {
        self.0.checked_add(rhs.0).map(Fixed)
    }

    pub fn saturating_add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0.saturating_add(rhs.0))
    }

    /// `self * num / den`, rounded down. Intermediate product is 128-bit.
    pub fn mul_div_floor(self, num: Fixed, den: Fixed) -> Fixed {
        assert!(den.0 != 0, "division by zero");
        let p = self.0 as i128 * num.0 as i128;
        let d = den.0 as i128;
        let mut q = p / d;
        let r = p % d;
        if r != 0 && ((r > 0) != (d > 0)) {
            q -= 1;
        }
        Fixed(narrow(q))
    }

    /// `self * num / den`, rounded up. Used for privacy losses so that the
    /// charged amount never falls below the exact value.
    pub fn mul_div_ceil(self, num: Fixed, den: Fixed) -> Fixed {
        assert!(den.0 != 0, "division by zero");
        let p = self.0 as i128 * num.0 as i128;
        let d = den.0 as i128;
        let mut q = p / d;
        let r = p % d;
        if r != 0 && ((r > 0) == (d > 0)) {
            q += 1;
        }
        Fixed(narrow(q))
    }

    /// Product of two decimals, rounded down.
    pub fn mul_floor(self, rhs: Fixed) -> Fixed {
        self.mul_div_floor(rhs, Fixed::ONE)
    }

    /// Division, rounded down.
    pub fn div_floor(self, rhs: Fixed) -> Fixed {
        Fixed::ONE.mul_div_floor(self, rhs)
    }

    /// Multiplies by a plain integer.
    pub fn times(self, n: i64) -> Fixed {
        Fixed(self.0.checked_mul(n).expect("fixed-point overflow"))
    }

    /// Divides by a plain integer, rounded down.
    pub fn div_int_floor(self, n: i64) -> Fixed {
        Fixed(self.0.div_euclid(n))
    }

    pub fn max(self, other: Fixed) -> Fixed {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: Fixed) -> Fixed {
        if self <= other {
            self
        } else {
            other
        }
    }
}

fn narrow(v: i128) -> i64 {
    i64::try_from(v).expect("fixed-point overflow")
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0.checked_add(rhs.0).expect("fixed-point overflow"))
    }
}

impl AddAssign for Fixed {
    fn add_assign(&mut self, rhs: Fixed) {
        *self = *self + rhs;
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        Fixed(self.0.checked_sub(rhs.0).expect("fixed-point overflow"))
    }
}

impl SubAssign for Fixed {
    fn sub_assign(&mut self, rhs: Fixed) {
        *self = *self - rhs;
    }
}

impl Neg for Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed(-self.0)
    }
}

impl Sum for Fixed {
    fn sum<I: Iterator<Item = Fixed>>(iter: I) -> Fixed {
        iter.fold(Fixed::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Fixed> for Fixed {
    fn sum<I: Iterator<Item = &'a Fixed>>(iter: I) -> Fixed {
        iter.copied().sum()
    }
}

impl From<i64> for Fixed {
    fn from(v: i64) -> Self {
        Fixed::from_int(v)
    }
}

impl fmt::Display for Fixed {
    /// Shortest exact decimal form, e.g. `70`, `0.7`, `-1.25`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = self.0 < 0;
        let abs = self.0.unsigned_abs();
        let int = abs / Self::SCALE as u64;
        let mut frac = abs % Self::SCALE as u64;
        if neg {
            f.write_str("-")?;
        }
        write!(f, "{int}")?;
        if frac != 0 {
            let mut digits = Self::FRACTIONAL_DIGITS as usize;
            while frac.is_multiple_of(10) {
                frac /= 10;
                digits -= 1;
            }
            write!(f, ".{frac:0digits$}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Fixed {
    type Err = ParseFixedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ParseFixedError::Empty);
        }
        let (neg, body) = match s.as_bytes()[0] {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if (int_part.is_empty() && frac_part.is_empty()) || !digits_ok(int_part) || !digits_ok(frac_part) {
            return Err(ParseFixedError::Invalid(s.to_string()));
        }
        if frac_part.len() > Self::FRACTIONAL_DIGITS as usize {
            return Err(ParseFixedError::TooPrecise(s.to_string()));
        }
        let out_of_range = || ParseFixedError::OutOfRange(s.to_string());
        let int: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| out_of_range())?
        };
        let mut frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| out_of_range())? };
        for _ in frac_part.len()..Self::FRACTIONAL_DIGITS as usize {
            frac *= 10;
        }
        let raw = int
            .checked_mul(Self::SCALE)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(out_of_range)?;
        Ok(Fixed(if neg { -raw } else { raw }))
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fixed {
    /// Accepts decimal strings (exact) as well as JSON numbers.
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FixedVisitor;

        impl Visitor<'_> for FixedVisitor {
            type Value = Fixed;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal number or decimal string")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Fixed, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Fixed, E> {
                v.checked_mul(Fixed::SCALE)
                    .map(Fixed)
                    .ok_or_else(|| E::custom("decimal out of range"))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Fixed, E> {
                i64::try_from(v)
                    .map_err(|_| E::custom("decimal out of range"))
                    .and_then(|v| self.visit_i64(v))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Fixed, E> {
                if !v.is_finite() || v.abs() > (i64::MAX / Fixed::SCALE) as f64 {
                    return Err(E::custom("decimal out of range"));
                }
                Ok(Fixed::from_f64(v))
            }
        }

        deserializer.deserialize_any(FixedVisitor)
    }
}
