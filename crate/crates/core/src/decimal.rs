//! Exactly retained decimal design inputs.
//!
//! Margins such as `0.1` are not representable in binary floating point, and
//! the coverage event `|k/n - p| < eps` flips exactly at `k/n +- eps`. Keeping
//! the decimal as a reduced rational lets threshold tests be decided exactly
//! when the floating-point comparison is too close to call.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A finite decimal kept both as `f64` and as the reduced fraction `num / den`.
#[derive(Clone, Copy, Debug)]
pub struct ExactDecimal {
    value: f64,
    num: i128,
    den: i128,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl ExactDecimal {
    /// Shortest decimal that round-trips to `x` (`0.1_f64` becomes `1/10`).
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::InvalidDecimal(x.to_string()));
        }
        format!("{x}").parse()
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn numer(&self) -> i128 {
        self.num
    }

    pub fn denom(&self) -> i128 {
        self.den
    }

    pub fn to_big_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.num), BigInt::from(self.den))
    }
}

impl FromStr for ExactDecimal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDecimal(s.to_string());
        let t = s.trim();
        let (mantissa, exp) = match t.find(['e', 'E']) {
            Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
            None => (t, 0),
        };
        let (neg, digits) = match mantissa.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((a, b)) => (a, b),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let all: String = format!("{int_part}{frac_part}");
        let all = all.trim_start_matches('0');
        let scale = frac_part.len() as i32 - exp;
        if all.len() > 36 || !(-36..=36).contains(&scale) {
            return Err(bad());
        }
        let mut num: i128 = if all.is_empty() { 0 } else { all.parse().map_err(|_| bad())? };
        let mut den: i128 = 1;
        if scale >= 0 {
            den = 10i128.checked_pow(scale as u32).ok_or_else(bad)?;
        } else {
            num = num
                .checked_mul(10i128.checked_pow((-scale) as u32).ok_or_else(bad)?)
                .ok_or_else(bad)?;
        }
        if neg {
            num = -num;
        }
        let g = gcd(num, den).max(1);
        let (num, den) = (num / g, den / g);
        let value: f64 = t.parse().map_err(|_| bad())?;
        Ok(Self { value, num, den })
    }
}

impl PartialEq for ExactDecimal {
    fn eq(&self, other: &Self) -> bool {
        self.num == other.num && self.den == other.den
    }
}

impl fmt::Display for ExactDecimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // den is 2^a 5^b; rescale to a power of ten for a plain decimal string
        let mut den = self.den;
        let mut num = self.num;
        let mut places = 0u32;
        while den != 1 {
            let (mul, div) = if den % 10 == 0 {
                (1, 10)
            } else if den % 2 == 0 {
                (5, 2)
            } else {
                (2, 5)
            };
            num *= mul;
            den /= div;
            places += 1;
        }
        if places == 0 {
            return write!(f, "{num}");
        }
        let sign = if num < 0 { "-" } else { "" };
        let digits = format!("{:0>width$}", num.abs(), width = places as usize + 1);
        let (ip, fp) = digits.split_at(digits.len() - places as usize);
        write!(f, "{sign}{ip}.{fp}")
    }
}

impl Serialize for ExactDecimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExactDecimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Orientation of the margin offset applied to a sample proportion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offset {
    None,
    Plus,
    Minus,
}

/// Compares `k/n + offset*eps` with `x`, exactly.
///
/// The floating-point value decides unless it lies within a few ulps of `x`;
/// then the comparison is redone in arbitrary-precision rationals.
pub fn cmp_offset(k: u64, n: u64, offset: Offset, eps: &ExactDecimal, x: f64) -> Ordering {
    let base = k as f64 / n as f64;
    let approx = match offset {
        Offset::None => base,
        Offset::Plus => base + eps.value,
        Offset::Minus => base - eps.value,
    };
    let gap = approx - x;
    if gap.abs() > 1e-13 {
        return if gap > 0.0 { Ordering::Greater } else { Ordering::Less };
    }
    let exact_x = match BigRational::from_float(x) {
        Some(r) => r,
        None => return approx.partial_cmp(&x).unwrap_or(Ordering::Equal),
    };
    let sign: i128 = match offset {
        Offset::None => 0,
        Offset::Plus => 1,
        Offset::Minus => -1,
    };
    let num = BigInt::from(k) * BigInt::from(eps.den) + BigInt::from(sign * eps.num) * BigInt::from(n);
    let den = BigInt::from(n) * BigInt::from(eps.den);
    BigRational::new(num, den).cmp(&exact_x)
}
