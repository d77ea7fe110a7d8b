//! Exact currency arithmetic.
//!
//! Rates are 4-decimal prices; metered amounts are rate x quantity / unit,
//! which is generally not a terminating decimal. [`Usd`] therefore stores a
//! reduced rational so that sums are exact and pro-rata billing is linear.
//! Rounding happens only when an amount is rendered.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rust_decimal::Decimal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(Ratio<i128>);

impl Usd {
    pub fn zero() -> Self {
        Usd(Ratio::zero())
    }

    pub fn from_ratio(numer: i128, denom: i128) -> Self {
        Usd(Ratio::new(numer, denom))
    }

    pub fn from_decimal(d: Decimal) -> Self {
        Usd(decimal_ratio(d))
    }

    /// `rate * quantity / unit`, exact.
    pub fn prorate(rate: Decimal, quantity: u128, unit: u128) -> Self {
        let q = i128::try_from(quantity).expect("quantity overflow");
        let u = i128::try_from(unit).expect("unit overflow");
        Usd(decimal_ratio(rate) * Ratio::new(q, u))
    }

    pub fn ratio(&self) -> Ratio<i128> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Rounds half away from zero to `dp` fractional digits.
    pub fn round_dp(&self, dp: u32) -> Decimal {
        let scale = 10i128.pow(dp);
        let n = *self.0.numer() * scale;
        let d = *self.0.denom();
        let q = n / d;
        let r = n % d;
        let q = if 2 * r.abs() >= d { q + n.signum() } else { q };
        Decimal::from_i128_with_scale(q, dp)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// `self / total * 100`, or zero when `total` is zero.
    pub fn percent_of(&self, total: Usd) -> Ratio<i128> {
        if total.is_zero() {
            Ratio::zero()
        } else {
            self.0 / total.0 * Ratio::from_integer(100)
        }
    }
}

fn decimal_ratio(d: Decimal) -> Ratio<i128> {
    Ratio::new(d.mantissa(), 10i128.pow(d.scale()))
}

/// Rounds a rational to `dp` places for display.
pub fn round_ratio(r: Ratio<i128>, dp: u32) -> Decimal {
    Usd(r).round_dp(dp)
}

impl Default for Usd {
    fn default() -> Self {
        Usd::zero()
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.0 += rhs.0;
    }
}

impl Mul<i128> for Usd {
    type Output = Usd;
    fn mul(self, rhs: i128) -> Usd {
        Usd(self.0 * rhs)
    }
}

impl Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::zero(), Add::add)
    }
}

impl<'a> Sum<&'a Usd> for Usd {
    fn sum<I: Iterator<Item = &'a Usd>>(iter: I) -> Usd {
        iter.copied().sum()
    }
}

impl fmt::Display for Usd {
    /// Honors `{:.N}`; defaults to 4 places.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dp = f.precision().unwrap_or(4) as u32;
        let d = self.round_dp(dp);
        write!(f, "{:.*}", dp as usize, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rust_decimal::prelude::FromStr;

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn prorate_is_exact() {
        // 2 nodes x 7 h at 3.96/h
        let usd = Usd::prorate(dec("3.96"), 2 * 7 * 3_600_000, 3_600_000);
        assert_eq!(usd, Usd::from_decimal(dec("55.44")));
        assert_eq!(format!("{usd:.2}"), "55.44");
    }

    #[test]
    fn rounding_half_away_from_zero() {
        assert_eq!(Usd::from_ratio(1, 8).round_dp(2), dec("0.13"));
        assert_eq!(Usd::from_ratio(1, 3).round_dp(4), dec("0.3333"));
        assert_eq!(format!("{}", Usd::from_ratio(2, 3)), "0.6667");
    }

    #[test]
    fn percent_of_zero_total() {
        assert!(Usd::zero().percent_of(Usd::zero()).is_zero());
    }
}
