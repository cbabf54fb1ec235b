//! Exact arithmetic helpers shared by every module.
//!
//! Geometry and ladder values live in exact big rationals: the ladder's
//! value gaps shrink far below double precision after the first level, so
//! only the final, user-facing numbers are rounded to `f64`.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;

/// Exact rational number used for all geometric and ladder quantities.
pub type Q = BigRational;

/// `n / d` as an exact rational. Panics if `d == 0`.
pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// An integer as an exact rational.
pub fn qi<T: Into<BigInt>>(n: T) -> Q {
    Q::from_integer(n.into())
}

/// Exact rational value of a finite double; `None` for NaN or infinities.
pub fn q_from_f64(x: f64) -> Option<Q> {
    Q::from_float(x)
}

/// Nearest double to an exact rational (saturating to ±inf for huge values).
pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        if x.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

/// Largest integer `≤ x`.
pub fn floor(x: &Q) -> BigInt {
    x.numer().div_floor(x.denom())
}

/// Smallest integer `≥ x`.
pub fn ceil(x: &Q) -> BigInt {
    -((-x.numer()).div_floor(x.denom()))
}

/// `2^e` for any integer exponent.
pub fn pow2(e: i64) -> Q {
    let p = BigInt::one() << e.unsigned_abs();
    if e >= 0 {
        Q::from_integer(p)
    } else {
        Q::new(BigInt::one(), p)
    }
}

/// Exponent of the largest power of two `≤ x`. Requires `x > 0`.
pub fn log2_floor(x: &Q) -> i64 {
    assert!(x.is_positive(), "log2_floor of a non-positive value");
    let mut e = x.numer().bits() as i64 - x.denom().bits() as i64;
    // The estimate is within one of the true exponent.
    while pow2(e) > *x {
        e -= 1;
    }
    while pow2(e + 1) <= *x {
        e += 1;
    }
    e
}

/// Largest power of two that is strictly smaller than `x > 0`.
pub fn pow2_below(x: &Q) -> Q {
    let e = log2_floor(x);
    let p = pow2(e);
    if p == *x {
        pow2(e - 1)
    } else {
        p
    }
}

/// Largest power of two that is `≤ x`, for `x > 0`.
pub fn pow2_at_most(x: &Q) -> Q {
    pow2(log2_floor(x))
}

/// Render a rational as `"num/den"` (or `"num"` for integers).
pub fn q_to_string(x: &Q) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Parse the `"num/den"` / `"num"` form produced by [`q_to_string`].
pub fn q_parse(s: &str) -> Option<Q> {
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.parse::<BigInt>().ok()?, d.parse::<BigInt>().ok()?),
        None => (s.parse::<BigInt>().ok()?, BigInt::one()),
    };
    if d.is_zero() {
        return None;
    }
    Some(Q::new(n, d))
}

const SMALL_PRIMES_LIMIT: u32 = 4096;

fn small_primes() -> &'static [u32] {
    use std::sync::OnceLock;
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let n = SMALL_PRIMES_LIMIT as usize;
        let mut sieve = vec![true; n + 1];
        sieve[0] = false;
        sieve[1] = false;
        let mut i = 2;
        while i * i <= n {
            if sieve[i] {
                let mut j = i * i;
                while j <= n {
                    sieve[j] = false;
                    j += i;
                }
            }
            i += 1;
        }
        (2..=n).filter(|&i| sieve[i]).map(|i| i as u32).collect()
    })
}

/// Miller–Rabin with the first twelve primes as fixed bases.
///
/// Deterministic for every `n < 3.3·10²⁴` and a reproducible probable-prime
/// test beyond that (error probability below 4⁻¹²).
pub fn is_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &p in small_primes() {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'bases: for &a in &small_primes()[..12] {
        let mut x = BigUint::from(a).modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// Smallest prime `≥ from`.
pub fn next_prime(from: &BigUint) -> BigUint {
    let two = BigUint::from(2u32);
    if *from <= two {
        return two;
    }
    let mut c = from.clone();
    if c.is_even() {
        c += 1u32;
    }
    loop {
        if is_prime(&c) {
            return c;
        }
        c += 2u32;
    }
}

/// Convert a non-negative integer-valued rational into a `BigUint`.
pub fn to_biguint(x: &BigInt) -> BigUint {
    match x.sign() {
        Sign::Minus => panic!("negative value where a natural number was expected"),
        _ => x.magnitude().clone(),
    }
}

/// Error for malformed hexadecimal floating-point text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HexFloatError(pub String);

impl fmt::Display for HexFloatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed hex float {:?}", self.0)
    }
}

impl std::error::Error for HexFloatError {}

/// Render a finite double in C99 `%a` style, e.g. `0x1.8p+1` for `3.0`.
///
/// The rendering is exact, so [`parse_hex_f64`] inverts it bit for bit.
/// Non-finite values are rendered as `inf`, `-inf` and `nan`.
pub fn format_hex_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        (0, -1022)
    } else {
        (1, exp_bits - 1023)
    };
    let mut frac = format!("{mant:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let dot = if frac.is_empty() {
        String::new()
    } else {
        format!(".{frac}")
    };
    let esign = if exp >= 0 { "+" } else { "-" };
    format!("{sign}0x{lead}{dot}p{esign}{}", exp.abs())
}

/// Parse text produced by [`format_hex_f64`] (or any `%a`-style literal whose
/// value is exactly representable as a double).
pub fn parse_hex_f64(s: &str) -> Result<f64, HexFloatError> {
    let err = || HexFloatError(s.to_string());
    match s {
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        "nan" => return Ok(f64::NAN),
        _ => {}
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let body = body.strip_prefix("0x").ok_or_else(err)?;
    let (mant, exp) = body.split_once('p').ok_or_else(err)?;
    let exp: i64 = exp.parse().map_err(|_| err())?;
    let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
    if int_part.is_empty() || frac_part.len() > 13 {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    let m = BigInt::parse_bytes(digits.as_bytes(), 16).ok_or_else(err)?;
    let value = Q::from_integer(m) * pow2(exp - 4 * frac_part.len() as i64);
    let out = to_f64(&value);
    // Reject literals that do not denote a double exactly.
    if q_from_f64(out).as_ref() != Some(&value) {
        return Err(err());
    }
    Ok(if neg { -out } else { out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floor_and_ceil_of_negative_fraction() {
        assert_eq!(floor(&q(-7, 2)), BigInt::from(-4));
        assert_eq!(ceil(&q(-7, 2)), BigInt::from(-3));
        assert_eq!(floor(&q(7, 2)), BigInt::from(3));
        assert_eq!(ceil(&q(6, 2)), BigInt::from(3));
    }

    #[test]
    fn powers_of_two() {
        assert_eq!(log2_floor(&q(1, 30)), -5);
        assert_eq!(pow2_below(&q(1, 30)), q(1, 32));
        assert_eq!(pow2_below(&q(1, 32)), q(1, 64));
        assert_eq!(pow2_at_most(&q(1, 32)), q(1, 32));
        assert_eq!(pow2_at_most(&qi(5)), qi(4));
    }

    #[test]
    fn primes_match_trial_division() {
        let by_trial = |n: u64| n >= 2 && (2..n).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d));
        for n in 0u64..5000 {
            assert_eq!(is_prime(&BigUint::from(n)), by_trial(n), "n = {n}");
        }
        assert_eq!(next_prime(&BigUint::from(14u32)), BigUint::from(17u32));
        assert_eq!(next_prime(&BigUint::from(17u32)), BigUint::from(17u32));
        // 2^61 − 1 is a Mersenne prime; 2^61 + 1 is divisible by 3.
        let m61 = (BigUint::one() << 61u32) - 1u32;
        assert!(is_prime(&m61));
        assert!(!is_prime(&(&m61 + 2u32)));
    }

    #[test]
    fn hex_float_examples() {
        assert_eq!(format_hex_f64(3.0), "0x1.8p+1");
        assert_eq!(format_hex_f64(1.0), "0x1p+0");
        assert_eq!(format_hex_f64(-0.5), "-0x1p-1");
        assert_eq!(format_hex_f64(0.0), "0x0p+0");
        assert_eq!(parse_hex_f64("0x1.8p+1").unwrap(), 3.0);
        assert!(parse_hex_f64("0x1.8").is_err());
        assert!(parse_hex_f64("1.5").is_err());
    }

    #[test]
    fn rational_text_round_trip() {
        for x in [q(3, 7), q(-12, 5), qi(9), q(0, 1)] {
            assert_eq!(q_parse(&q_to_string(&x)), Some(x));
        }
        assert_eq!(q_parse("1/0"), None);
    }

    proptest! {
        #[test]
        fn hex_float_round_trips_bit_exactly(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back = parse_hex_f64(&format_hex_f64(x)).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }

        #[test]
        fn exact_rational_of_double_round_trips(x in -1e12f64..1e12) {
            prop_assert_eq!(to_f64(&q_from_f64(x).unwrap()), x);
        }
    }
}
