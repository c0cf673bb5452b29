//! Signed reals stored as `(sign, ln|x|)`.
//!
//! Quantities such as `λ_u^n` with `n ~ 10^8` are far outside the `f64`
//! range, while their logarithms are ordinary numbers. Products are exact
//! additions of logs; sums use a signed log-sum-exp. Two addends of opposite
//! sign whose log-magnitudes differ by less than [`CANCELLATION_THRESHOLD`]
//! cancel to an exact zero.
//!
//! Ordering compares the sign first and then the log-magnitude, with no
//! built-in epsilon: callers state their own tolerances in log units.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opposite-sign addends closer than this in log-magnitude cancel to zero.
pub const CANCELLATION_THRESHOLD: f64 = 1e-13;

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "Repr", into = "Repr")]
pub struct SignedLogReal {
    sign: i8,
    log_mag: f64,
}

#[derive(Serialize, Deserialize)]
struct Repr {
    sign: i64,
    log: f64,
}

impl TryFrom<Repr> for SignedLogReal {
    type Error = Error;

    fn try_from(r: Repr) -> Result<Self> {
        if !matches!(r.sign, -1..=1) {
            return Err(Error::Domain(format!("sign must be -1, 0 or 1, got {}", r.sign)));
        }
        if !r.log.is_finite() {
            return Err(Error::Domain("log magnitude must be finite".into()));
        }
        Ok(Self { sign: r.sign as i8, log_mag: r.log })
    }
}

impl From<SignedLogReal> for Repr {
    fn from(x: SignedLogReal) -> Self {
        Repr { sign: x.sign as i64, log: x.log_mag }
    }
}

impl SignedLogReal {
    pub const ZERO: Self = Self { sign: 0, log_mag: 0.0 };
    pub const ONE: Self = Self { sign: 1, log_mag: 0.0 };

    /// Builds a value from its parts. `sign` is clamped to `{-1, 0, 1}`.
    pub fn new(sign: i8, log_mag: f64) -> Self {
        let sign = sign.signum();
        if sign == 0 {
            return Self::ZERO;
        }
        debug_assert!(!log_mag.is_nan(), "NaN log magnitude");
        Self { sign, log_mag }
    }

    /// `e^log`, always positive.
    pub fn from_log(log: f64) -> Self {
        Self::new(1, log)
    }

    pub fn from_f64(x: f64) -> Self {
        debug_assert!(x.is_finite(), "non-finite input {x}");
        if x == 0.0 {
            Self::ZERO
        } else {
            Self { sign: if x > 0.0 { 1 } else { -1 }, log_mag: x.abs().ln() }
        }
    }

    pub fn try_from_f64(x: f64) -> Result<Self> {
        if x.is_finite() {
            Ok(Self::from_f64(x))
        } else {
            Err(Error::Domain(format!("cannot encode non-finite value {x}")))
        }
    }

    /// Decodes to `f64`; overflows to `±inf` and underflows to `0`.
    pub fn to_f64(self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => s as f64 * self.log_mag.exp(),
        }
    }

    pub fn sign(self) -> i8 {
        self.sign
    }

    /// The stored log-magnitude. Meaningless for zero.
    pub fn log_mag(self) -> f64 {
        self.log_mag
    }

    /// `ln|x|`, with `-inf` for zero.
    pub fn ln_abs(self) -> f64 {
        if self.sign == 0 {
            f64::NEG_INFINITY
        } else {
            self.log_mag
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn is_positive(self) -> bool {
        self.sign > 0
    }

    pub fn is_negative(self) -> bool {
        self.sign < 0
    }

    pub fn abs(self) -> Self {
        Self { sign: self.sign.abs(), log_mag: self.log_mag }
    }

    /// Multiplies by `e^log` without going through a `SignedLogReal`.
    pub fn scale_log(self, log: f64) -> Self {
        if self.sign == 0 {
            self
        } else {
            Self { sign: self.sign, log_mag: self.log_mag + log }
        }
    }

    pub fn pow_int(self, n: i64) -> Result<Self> {
        if self.sign == 0 {
            return if n > 0 {
                Ok(Self::ZERO)
            } else {
                Err(Error::Domain(format!("zero raised to non-positive power {n}")))
            };
        }
        let sign = if self.sign < 0 && n % 2 != 0 { -1 } else { 1 };
        Ok(Self { sign, log_mag: self.log_mag * n as f64 })
    }

    /// Real power of a non-negative value.
    pub fn pow_real(self, exponent: f64) -> Result<Self> {
        match self.sign {
            1 => Ok(Self::from_log(self.log_mag * exponent)),
            0 if exponent > 0.0 => Ok(Self::ZERO),
            0 => Err(Error::Domain(format!("zero raised to non-positive power {exponent}"))),
            _ => Err(Error::Domain("real power of a negative value".into())),
        }
    }

    pub fn sqrt(self) -> Result<Self> {
        self.pow_real(0.5)
    }

    pub fn checked_div(self, rhs: Self) -> Option<Self> {
        if rhs.sign == 0 {
            None
        } else {
            Some(self * Self { sign: rhs.sign, log_mag: -rhs.log_mag })
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

/// `ln(e^a + e^b)` for finite or `-inf` inputs.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

impl Mul for SignedLogReal {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let sign = self.sign * rhs.sign;
        if sign == 0 {
            Self::ZERO
        } else {
            Self { sign, log_mag: self.log_mag + rhs.log_mag }
        }
    }
}

impl Div for SignedLogReal {
    type Output = Self;

    /// Panics on a zero divisor; use [`SignedLogReal::checked_div`] otherwise.
    fn div(self, rhs: Self) -> Self {
        self.checked_div(rhs).expect("division by zero SignedLogReal")
    }
}

impl Add for SignedLogReal {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        if self.sign == 0 {
            return rhs;
        }
        if rhs.sign == 0 {
            return self;
        }
        let (hi, lo) = if self.log_mag >= rhs.log_mag { (self, rhs) } else { (rhs, self) };
        let diff = lo.log_mag - hi.log_mag;
        if hi.sign == lo.sign {
            return Self { sign: hi.sign, log_mag: hi.log_mag + diff.exp().ln_1p() };
        }
        if -diff < CANCELLATION_THRESHOLD {
            return Self::ZERO;
        }
        // ln(1 - e^diff), split for accuracy near both ends
        let corr = if diff > -std::f64::consts::LN_2 { (-diff.exp_m1()).ln() } else { (-diff.exp()).ln_1p() };
        Self { sign: hi.sign, log_mag: hi.log_mag + corr }
    }
}

impl Neg for SignedLogReal {
    type Output = Self;

    fn neg(self) -> Self {
        Self { sign: -self.sign, log_mag: self.log_mag }
    }
}

impl Sub for SignedLogReal {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl PartialEq for SignedLogReal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SignedLogReal {}

impl PartialOrd for SignedLogReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SignedLogReal {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.sign.cmp(&other.sign) {
            Ordering::Equal => match self.sign {
                0 => Ordering::Equal,
                1 => self.log_mag.total_cmp(&other.log_mag),
                _ => other.log_mag.total_cmp(&self.log_mag),
            },
            o => o,
        }
    }
}

impl Default for SignedLogReal {
    fn default() -> Self {
        Self::ZERO
    }
}

impl fmt::Debug for SignedLogReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            0 => write!(f, "0"),
            1 => write!(f, "+e^{}", self.log_mag),
            _ => write!(f, "-e^{}", self.log_mag),
        }
    }
}

impl fmt::Display for SignedLogReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
