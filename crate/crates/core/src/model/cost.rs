use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;

use super::ModelError;

/// Exact non-negative rational, used for link costs so that closest-replica
/// selection has a deterministic argmin. Stored normalized (gcd 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(into = "String")]
pub struct Cost {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Cost {
    pub const ZERO: Cost = Cost { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Cost, ModelError> {
        if den == 0 {
            return Err(ModelError::ZeroDenominator);
        }
        let g = gcd(num, den);
        Ok(Cost {
            num: num / g,
            den: den / g,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    /// Exact product, for scale-invariance checks. Panics on overflow past
    /// u64 after normalization; link costs are nowhere near that.
    pub fn scale(&self, factor: Cost) -> Cost {
        let num = self.num as u128 * factor.num as u128;
        let den = self.den as u128 * factor.den as u128;
        let g = gcd128(num, den);
        Cost {
            num: u64::try_from(num / g).expect("cost numerator overflow"),
            den: u64::try_from(den / g).expect("cost denominator overflow"),
        }
    }

    /// Parses `"n"` or `"n/d"`.
    pub fn parse(s: &str) -> Result<Cost, ModelError> {
        let bad = || ModelError::BadCostLiteral(s.to_string());
        match s.split_once('/') {
            None => {
                let n: u64 = s.trim().parse().map_err(|_| bad())?;
                Cost::new(n, 1)
            }
            Some((n, d)) => {
                let n: u64 = n.trim().parse().map_err(|_| bad())?;
                let d: u64 = d.trim().parse().map_err(|_| bad())?;
                if d == 0 {
                    return Err(ModelError::ZeroDenominator);
                }
                Cost::new(n, d)
            }
        }
    }
}

fn gcd128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        // cross-multiply in u128: u64*u64 cannot overflow there
        let lhs = self.num as u128 * other.den as u128;
        let rhs = other.num as u128 * self.den as u128;
        lhs.cmp(&rhs)
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl From<Cost> for String {
    fn from(c: Cost) -> String {
        c.to_string()
    }
}
