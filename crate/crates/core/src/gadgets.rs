//! ReLU gadgets: ramp thresholds, sawtooth squaring, polarization products and
//! sequential base-b digit extraction.

use num_traits::{One, Zero};

use crate::error::{invalid, Result};
use crate::net::{meta_of, GraphBuilder, Lin, Network};
use crate::scalar::{int, rat, rat_pow, rat_to_f64, Rational};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DigitStream {
    pub base: u32,
    pub digits: Vec<u32>,
}

impl DigitStream {
    pub fn new(base: u32, digits: Vec<u32>) -> Result<Self> {
        if base < 2 {
            return invalid("base must be at least 2");
        }
        if digits.is_empty() {
            return invalid("empty digit stream");
        }
        if let Some(d) = digits.iter().find(|&&d| d >= base) {
            return invalid(format!("digit {d} out of range for base {base}"));
        }
        Ok(DigitStream { base, digits })
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }
}

/// 0 below θ, 1 above θ+δ, linear in between.
pub fn threshold(g: &mut GraphBuilder, w: &Lin, delta: &Rational, theta: &Rational) -> Lin {
    let inv = Rational::one() / delta;
    let a = g.relu(&w.plus_const(&-theta.clone()));
    let b = g.relu(&w.plus_const(&-(theta + delta)));
    a.minus(&b).scaled(&inv)
}

pub fn build_threshold(delta: &Rational, theta: &Rational) -> Result<Network> {
    if *delta <= Rational::zero() {
        return invalid("ramp width must be positive");
    }
    let mut g = GraphBuilder::new(1);
    let x = g.input(0);
    let out = threshold(&mut g, &x, delta, theta);
    Ok(g.finish(&[out], meta_of(&[("variant", "threshold".into())])))
}

/// Number of sawtooth levels so that the squaring error 2^(-2m-2) stays below ε.
pub fn square_levels(eps: &Rational) -> u32 {
    let l = rat_to_f64(&(Rational::one() / eps)).log2();
    let m = ((l - 2.0) / 2.0).ceil() as i64 + 1;
    m.max(1) as u32
}

/// x - Σ_{s=1..m} g_s(x)/4^s on [0,1], where g is the hat 2x - 4(x-1/2)_+ (x >= 0).
pub fn square01(g: &mut GraphBuilder, x: &Lin, m: u32) -> Lin {
    let mut acc = x.clone();
    let mut t = x.clone();
    let half = rat(1, 2);
    let mut scale = Rational::one();
    for _ in 0..m {
        let r = g.relu(&t.plus_const(&-half.clone()));
        let mut next = t.scaled(&int(2));
        next.add_scaled(&r, &int(-4));
        // materialize so each level reads one unit instead of the whole expression tree
        t = g.relu(&next);
        scale /= int(4);
        acc.add_scaled(&t, &-scale.clone());
    }
    acc
}

pub fn build_square(eps: &Rational) -> Result<Network> {
    if *eps <= Rational::zero() || *eps >= Rational::one() {
        return invalid("ε must lie in (0,1)");
    }
    let mut g = GraphBuilder::new(1);
    let x = g.input(0);
    let m = square_levels(eps);
    let out = square01(&mut g, &x, m);
    Ok(g.finish(&[out], meta_of(&[("variant", "square".into()), ("levels", m.to_string())])))
}

/// B^2 (s(|x+y|/2B) - s(|x-y|/2B)); exact zero whenever x = 0 or y = 0.
pub fn product(g: &mut GraphBuilder, x: &Lin, y: &Lin, eps: &Rational, bound: &Rational) -> Lin {
    let b2 = bound * bound;
    let eps_s = eps / (int(2) * &b2);
    let m = square_levels(&eps_s);
    let inv = Rational::one() / (int(2) * bound);
    let s = x.plus(y).scaled(&inv);
    let dlt = x.minus(y).scaled(&inv);
    let a = g.abs(&s);
    let b = g.abs(&dlt);
    let sa = square01(g, &a, m);
    let sb = square01(g, &b, m);
    sa.minus(&sb).scaled(&b2)
}

pub fn build_product(eps: &Rational, bound: &Rational) -> Result<Network> {
    if *eps <= Rational::zero() || *bound <= Rational::zero() {
        return invalid("ε and B must be positive");
    }
    let mut g = GraphBuilder::new(2);
    let (x, y) = (g.input(0), g.input(1));
    let out = product(&mut g, &x, &y, eps, bound);
    Ok(g.finish(&[out], meta_of(&[("variant", "product".into())])))
}

/// Σ_t digit_t base^-t + base^-(T+1)/2.
pub fn encode_digits(stream: &DigitStream) -> Rational {
    let b = int(stream.base as i64);
    let mut acc = Rational::zero();
    let mut p = Rational::one();
    for &d in &stream.digits {
        p /= &b;
        acc += &p * int(d as i64);
    }
    acc + p / b / int(2)
}

/// Reference decode by exact long multiplication.
pub fn decode_digits(w: &Rational, base: u32, t: usize) -> Vec<u32> {
    let b = int(base as i64);
    let mut c = w.clone();
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let z = &c * &b;
        let d = z.floor();
        out.push(num_traits::ToPrimitive::to_u32(&d.to_integer()).unwrap_or(0));
        c = z - d;
    }
    out
}

/// Largest admissible ramp width is below base^-T / 4; this is the default.
pub fn default_ramp(base: u32, t: usize) -> Rational {
    Rational::one() / (int(8) * rat_pow(&int(base as i64), t as u32))
}

/// Digits of `w` as affine expressions; one relu carrier unit per step keeps the chain linear in size.
pub fn bit_extract(g: &mut GraphBuilder, w: &Lin, base: u32, t: usize, delta: &Rational) -> Result<Vec<Lin>> {
    let limit = Rational::one() / (int(4) * rat_pow(&int(base as i64), t as u32));
    if *delta >= limit || *delta <= Rational::zero() {
        return invalid(format!("ramp width violates the guard margin for T={t}"));
    }
    let b = int(base as i64);
    let mut carrier = w.clone();
    let mut digits = Vec::with_capacity(t);
    for step in 0..t {
        let z = carrier.scaled(&b);
        let mut digit = Lin::zero();
        for k in 1..base {
            let gate = threshold(g, &z, delta, &int(k as i64));
            digit = digit.plus(&gate);
        }
        if step + 1 < t {
            carrier = g.relu(&z.minus(&digit));
        }
        digits.push(digit);
    }
    Ok(digits)
}

pub fn build_bit_extractor(base: u32, t: usize, delta: &Rational) -> Result<Network> {
    let mut g = GraphBuilder::new(1);
    let x = g.input(0);
    let digits = bit_extract(&mut g, &x, base, t, delta)?;
    Ok(g.finish(
        &digits,
        meta_of(&[("variant", "bit_extractor".into()), ("base", base.to_string()), ("T", t.to_string())]),
    ))
}
