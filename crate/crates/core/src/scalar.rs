//! Exact rationals and a binary big-float with explicit mantissa precision.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Mutex;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub const DEFAULT_BITS: u32 = 256;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Exact conversion of a finite f64.
pub fn rat_from_f64(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

pub fn rat_to_f64(r: &Rational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    BigFloat::from_rational(r, 64).to_f64()
}

/// 2^e as an exact rational.
pub fn pow2(e: i64) -> Rational {
    if e >= 0 {
        Rational::from_integer(BigInt::one() << (e as usize))
    } else {
        Rational::new(BigInt::one(), BigInt::one() << ((-e) as usize))
    }
}

pub fn rat_pow(base: &Rational, e: u32) -> Rational {
    num_traits::pow(base.clone(), e as usize)
}

/// Rational bounds lo <= base^e <= hi for base > 0 and rational e, tight to about 2^-bits relative.
pub fn pow_bounds(base: &Rational, e: &Rational, bits: u32) -> (Rational, Rational) {
    let s = e.denom().to_u32().expect("small exponent denominator");
    let p = e.numer().to_i32().expect("small exponent numerator");
    let r = if p >= 0 {
        rat_pow(base, p as u32)
    } else {
        Rational::one() / rat_pow(base, (-p) as u32)
    };
    if s == 1 {
        return (r.clone(), r);
    }
    let (u, v) = (r.numer().clone(), r.denom().clone());
    let x: BigInt = (u * num_traits::pow(v.clone(), (s - 1) as usize)) << ((bits * s) as usize);
    let rt = x.nth_root(s);
    let den = v << (bits as usize);
    let lo = Rational::new(rt.clone(), den.clone());
    if num_traits::pow(rt.clone(), s as usize) == x {
        return (lo.clone(), lo);
    }
    (lo, Rational::new(rt + 1, den))
}

/// Exact test of 0 <= x <= base^e for base > 0.
pub fn leq_power(x: &Rational, base: &Rational, e: &Rational) -> bool {
    if x.is_negative() {
        return true;
    }
    let s = e.denom().to_u32().expect("small exponent denominator");
    let p = e.numer().to_i32().expect("small exponent numerator");
    let lhs = rat_pow(x, s);
    if p >= 0 {
        lhs <= rat_pow(base, p as u32)
    } else {
        lhs * rat_pow(base, (-p) as u32) <= Rational::one()
    }
}

/// Scalar evaluation mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rational,
    BigFloat { mantissa_bits: u32 },
    /// Hardware doubles; only for quick previews, never for certified checks.
    F64,
}

impl Mode {
    pub fn bigfloat(bits: u32) -> Result<Mode> {
        if bits < 64 {
            return Err(Error::Precision(format!("mantissa_bits {bits} < 64")));
        }
        Ok(Mode::BigFloat { mantissa_bits: bits })
    }
}

impl Default for Mode {
    fn default() -> Self {
        Mode::Rational
    }
}

/// Binary floating point value `mant * 2^exp`, rounded to `prec` mantissa bits.
/// Canonical form: mantissa odd (or zero with exp 0).
#[derive(Clone, Debug)]
pub struct BigFloat {
    mant: BigInt,
    exp: i64,
    prec: u32,
}

fn round_shift(m: &BigInt, s: u64) -> BigInt {
    // round half to even of m / 2^s
    if s == 0 {
        return m.clone();
    }
    let neg = m.is_negative();
    let a = m.magnitude();
    let q = a >> s;
    let rem_mask_bits = s;
    let half_bit = a.bit(rem_mask_bits - 1);
    let mut round_up = false;
    if half_bit {
        let tz = a.trailing_zeros().unwrap_or(0);
        let sticky = tz < rem_mask_bits - 1;
        round_up = sticky || q.bit(0);
    }
    let q = if round_up { q + 1u32 } else { q };
    let q = BigInt::from_biguint(Sign::Plus, q);
    if neg {
        -q
    } else {
        q
    }
}

impl BigFloat {
    pub fn zero(prec: u32) -> Self {
        BigFloat { mant: BigInt::zero(), exp: 0, prec }
    }

    pub fn from_parts(mant: BigInt, exp: i64, prec: u32) -> Self {
        let mut f = BigFloat { mant, exp, prec };
        f.normalize();
        f
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mant
    }

    pub fn exponent(&self) -> i64 {
        self.exp
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    fn normalize(&mut self) {
        if self.mant.is_zero() {
            self.exp = 0;
            return;
        }
        let bits = self.mant.bits();
        if bits > self.prec as u64 {
            let s = bits - self.prec as u64;
            self.mant = round_shift(&self.mant, s);
            self.exp += s as i64;
        }
        if self.mant.is_zero() {
            self.exp = 0;
            return;
        }
        let tz = self.mant.trailing_zeros().unwrap_or(0);
        if tz > 0 {
            self.mant >>= tz as usize;
            self.exp += tz as i64;
        }
    }

    pub fn from_int(n: i64, prec: u32) -> Self {
        Self::from_parts(BigInt::from(n), 0, prec)
    }

    pub fn from_f64(x: f64, prec: u32) -> Self {
        Self::from_rational(&rat_from_f64(x), prec)
    }

    /// Correctly rounded conversion from an exact rational.
    pub fn from_rational(r: &Rational, prec: u32) -> Self {
        if r.is_zero() {
            return Self::zero(prec);
        }
        let n = r.numer();
        let d = r.denom();
        if d.is_one() {
            return Self::from_parts(n.clone(), 0, prec);
        }
        if d.magnitude().count_ones() == 1 {
            let tz = d.trailing_zeros().unwrap_or(0) as i64;
            return Self::from_parts(n.clone(), -tz, prec);
        }
        // scale so the quotient carries prec + 2 bits, then round with a sticky bit
        let shift = prec as i64 + 2 + d.bits() as i64 - n.bits() as i64 + 1;
        let shift = shift.max(0);
        let num = n.abs() << (shift as usize);
        let (q, rem) = num.div_rem(d);
        let q: BigInt = (q << 1usize) + if rem.is_zero() { 0 } else { 1 };
        let q = if n.is_negative() { -q } else { q };
        Self::from_parts(q, -shift - 1, prec)
    }

    /// Exact value as a rational.
    pub fn to_rational(&self) -> Rational {
        Rational::from_integer(self.mant.clone()) * pow2(self.exp)
    }

    pub fn to_f64(&self) -> f64 {
        if self.mant.is_zero() {
            return 0.0;
        }
        let bits = self.mant.bits() as i64;
        let (m, e) = if bits > 60 {
            (round_shift(&self.mant, (bits - 60) as u64), self.exp + bits - 60)
        } else {
            (self.mant.clone(), self.exp)
        };
        let mf = m.to_f64().unwrap_or(0.0);
        scale2(mf, e)
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.mant.is_negative()
    }

    pub fn signum(&self) -> i32 {
        match self.mant.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }

    pub fn neg(&self) -> Self {
        BigFloat { mant: -&self.mant, exp: self.exp, prec: self.prec }
    }

    pub fn abs(&self) -> Self {
        BigFloat { mant: self.mant.abs(), exp: self.exp, prec: self.prec }
    }

    pub fn relu(&self) -> Self {
        if self.mant.is_negative() {
            Self::zero(self.prec)
        } else {
            self.clone()
        }
    }

    /// Position of the leading bit plus one.
    fn top(&self) -> i64 {
        self.exp + self.mant.bits() as i64
    }

    pub fn add(&self, o: &Self) -> Self {
        let prec = self.prec.max(o.prec);
        if o.mant.is_zero() {
            return BigFloat { prec, ..self.clone() };
        }
        if self.mant.is_zero() {
            return BigFloat { prec, ..o.clone() };
        }
        // operand far below the rounding window only affects the sticky bit
        let gap = prec as i64 + 4;
        let (big, small) = if self.top() >= o.top() { (self, o) } else { (o, self) };
        if small.top() < big.top() - gap {
            let e = big.top() - gap - 2;
            let shift = (big.exp - e) as usize;
            let m = (&big.mant << shift)
                + if small.mant.is_negative() { -1 } else { 1 };
            return Self::from_parts(m, e, prec);
        }
        let (m, e) = if self.exp >= o.exp {
            ((&self.mant << ((self.exp - o.exp) as usize)) + &o.mant, o.exp)
        } else {
            ((&o.mant << ((o.exp - self.exp) as usize)) + &self.mant, self.exp)
        };
        Self::from_parts(m, e, prec)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let prec = self.prec.max(o.prec);
        Self::from_parts(&self.mant * &o.mant, self.exp + o.exp, prec)
    }

    pub fn mul_rational(&self, r: &Rational) -> Self {
        self.mul(&Self::from_rational(r, self.prec))
    }

    pub fn div(&self, o: &Self) -> Self {
        let prec = self.prec.max(o.prec);
        let r = Rational::new(self.mant.clone(), o.mant.clone());
        let q = Self::from_rational(&r, prec);
        BigFloat::from_parts(q.mant, q.exp + self.exp - o.exp, prec)
    }

    pub fn cmp_value(&self, o: &Self) -> Ordering {
        let sa = self.signum();
        let sb = o.signum();
        if sa != sb {
            return sa.cmp(&sb);
        }
        if sa == 0 {
            return Ordering::Equal;
        }
        let (m1, m2) = if self.exp >= o.exp {
            (&self.mant << ((self.exp - o.exp) as usize), o.mant.clone())
        } else {
            (self.mant.clone(), &o.mant << ((o.exp - self.exp) as usize))
        };
        m1.cmp(&m2)
    }

    /// Floor as a (possibly big) integer.
    pub fn floor_int(&self) -> BigInt {
        if self.exp >= 0 {
            &self.mant << (self.exp as usize)
        } else {
            self.mant.div_floor(&(BigInt::one() << ((-self.exp) as usize)))
        }
    }

    pub fn with_precision(&self, prec: u32) -> Self {
        Self::from_parts(self.mant.clone(), self.exp, prec)
    }

    /// Hex mantissa and decimal exponent, the interchange form used by serialization.
    pub fn to_hex_parts(&self) -> (String, i64) {
        let s = self.mant.to_str_radix(16);
        (s, self.exp)
    }

    pub fn from_hex_parts(m: &str, exp: i64, prec: u32) -> Result<Self> {
        let mant = BigInt::parse_bytes(m.as_bytes(), 16)
            .ok_or_else(|| Error::Parse(format!("bad hex mantissa {m}")))?;
        Ok(Self::from_parts(mant, exp, prec))
    }
}

impl PartialEq for BigFloat {
    fn eq(&self, o: &Self) -> bool {
        self.mant == o.mant && self.exp == o.exp
    }
}

impl fmt::Display for BigFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.to_f64())
    }
}

pub fn scale2(x: f64, e: i64) -> f64 {
    let mut v = x;
    let mut e = e;
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e as i32)
}

/// An arbitrary-precision value as stored in networks and returned by evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum ExactScalar {
    Rational(Rational),
    BigFloat(BigFloat),
}

impl ExactScalar {
    pub fn to_f64(&self) -> f64 {
        match self {
            ExactScalar::Rational(r) => rat_to_f64(r),
            ExactScalar::BigFloat(b) => b.to_f64(),
        }
    }

    /// Exact rational value (bigfloats are dyadic rationals).
    pub fn to_rational(&self) -> Rational {
        match self {
            ExactScalar::Rational(r) => r.clone(),
            ExactScalar::BigFloat(b) => b.to_rational(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ExactScalar::Rational(r) => r.is_zero(),
            ExactScalar::BigFloat(b) => b.is_zero(),
        }
    }
}

impl From<Rational> for ExactScalar {
    fn from(r: Rational) -> Self {
        ExactScalar::Rational(r)
    }
}

// ---------------------------------------------------------------------------
// pi and sin(pi x) on fixed-point integers

static PI_CACHE: Mutex<Vec<(u32, BigInt)>> = Mutex::new(Vec::new());

fn atan_inv_fixed(k: u64, bits: u32) -> BigInt {
    // sum (-1)^n / ((2n+1) k^(2n+1)) scaled by 2^bits; each term truncated
    let one = BigInt::one() << (bits as usize);
    let k = BigInt::from(k);
    let k2 = &k * &k;
    let mut power = &one / &k;
    let mut sum = BigInt::zero();
    let mut n: u64 = 0;
    while !power.is_zero() {
        let term = &power / BigInt::from(2 * n + 1);
        if n % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
        power = &power / &k2;
        n += 1;
    }
    sum
}

/// floor(pi * 2^bits) up to an error of a few units in the last place (|err| < 2^6 ulp).
pub fn pi_fixed(bits: u32) -> BigInt {
    {
        let cache = PI_CACHE.lock().unwrap();
        if let Some((_, v)) = cache.iter().find(|(b, _)| *b == bits) {
            return v.clone();
        }
    }
    let g = bits + 16;
    let v: BigInt = (atan_inv_fixed(5, g) * 16 - atan_inv_fixed(239, g) * 4) >> 16usize;
    let mut cache = PI_CACHE.lock().unwrap();
    cache.push((bits, v.clone()));
    v
}

/// sin(pi * t) for a dyadic t, as a fixed-point integer with `bits` fraction bits.
/// The absolute error is below 2^(12 - bits).
pub fn sin_pi_fixed(mant: &BigInt, exp: i64, bits: u32) -> BigInt {
    // reduce t mod 2 exactly
    let w = bits as i64 + 16;
    let (num, den_shift) = if exp >= 0 {
        (mant << (exp as usize), 0i64)
    } else {
        (mant.clone(), -exp)
    };
    // t = num / 2^den_shift; y = t mod 2 in [0,2)
    let two = BigInt::from(2) << (den_shift as usize);
    let y = num.mod_floor(&two);
    let unit = BigInt::one() << (den_shift as usize);
    let (y, neg) = if y >= unit { (y - &unit, true) } else { (y, false) };
    let half = BigInt::one() << ((den_shift.max(1) - 1) as usize);
    let y = if den_shift == 0 {
        y
    } else if y > half {
        &unit - y
    } else {
        y
    };
    // y / 2^den_shift in [0, 1/2]; convert to fixed point with w bits
    let yf = if den_shift <= w {
        y << ((w - den_shift) as usize)
    } else {
        y >> ((den_shift - w) as usize)
    };
    let pi = pi_fixed(w as u32);
    let z = (&yf * &pi) >> (w as usize);
    // taylor series of sin(z), z in [0, pi/2]
    let z2 = (&z * &z) >> (w as usize);
    let mut term = z.clone();
    let mut sum = z;
    let mut n: u64 = 1;
    while !term.is_zero() {
        term = (&term * &z2) >> (w as usize);
        term = -term / BigInt::from((2 * n) * (2 * n + 1));
        sum += &term;
        n += 1;
    }
    let r = sum >> 16usize;
    if neg {
        -r
    } else {
        r
    }
}

/// sin(pi x) rounded to the precision of `x`.
pub fn sin_pi(x: &BigFloat) -> BigFloat {
    let bits = x.prec + 8;
    let v = sin_pi_fixed(&x.mant, x.exp, bits);
    BigFloat::from_parts(v, -(bits as i64), x.prec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_bounds_bracket() {
        let (lo, hi) = pow_bounds(&int(8), &rat(-1, 2), 64);
        assert!(lo < hi && hi.clone() - lo.clone() < pow2(-60));
        assert!(leq_power(&lo, &int(8), &rat(-1, 2)));
        assert!(!leq_power(&hi, &int(8), &rat(-1, 2)));
        assert_eq!(pow_bounds(&int(4), &rat(3, 2), 64), (int(8), int(8)));
        assert_eq!(pow_bounds(&int(4), &int(-2), 64).0, rat(1, 16));
    }

    #[test]
    fn rational_conversion_rounds_to_nearest() {
        let third = rat(1, 3);
        let f = BigFloat::from_rational(&third, 64);
        let err = (f.to_rational() - &third).abs();
        assert!(err <= pow2(-65));
        assert_eq!(BigFloat::from_rational(&rat(3, 4), 64).to_f64(), 0.75);
    }

    #[test]
    fn add_and_mul_match_rationals() {
        let a = BigFloat::from_rational(&rat(7, 16), 80);
        let b = BigFloat::from_rational(&rat(-3, 8), 80);
        assert_eq!(a.add(&b).to_rational(), rat(1, 16));
        assert_eq!(a.mul(&b).to_rational(), rat(-21, 128));
    }

    #[test]
    fn tiny_addend_is_absorbed() {
        let a = BigFloat::from_int(1, 64);
        let b = BigFloat::from_parts(BigInt::one(), -500, 64);
        let s = a.add(&b);
        assert_eq!(s, a);
    }

    #[test]
    fn pi_digits() {
        let p = pi_fixed(100);
        let f = BigFloat::from_parts(p, -100, 100);
        assert!((f.to_f64() - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn sine_values() {
        for &(t, want) in &[(0.5, 1.0), (0.25, 0.5f64.sqrt()), (1.5, -1.0), (-0.5, -1.0), (3.25, -(0.5f64.sqrt()))] {
            let x = BigFloat::from_f64(t, 128);
            let s = sin_pi(&x).to_f64();
            assert!((s - want).abs() < 1e-15, "{t} {s}");
        }
        let x = BigFloat::from_f64(0.3, 128);
        assert!((sin_pi(&x).to_f64() - (0.3 * std::f64::consts::PI).sin()).abs() < 1e-15);
    }

    #[test]
    fn hex_round_trip() {
        let f = BigFloat::from_rational(&rat(-22, 7), 128);
        let (m, e) = f.to_hex_parts();
        assert_eq!(BigFloat::from_hex_parts(&m, e, 128).unwrap(), f);
    }
}
