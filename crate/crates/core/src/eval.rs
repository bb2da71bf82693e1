//! Network evaluation in exact rational, big-float or f64 arithmetic.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::net::{Activation, Network, SigmaKind, SigmaSpec};
use crate::scalar::{rat_to_f64, sin_pi, BigFloat, ExactScalar, Mode, Rational};

/// Arithmetic backend used by the evaluator.
pub trait Arith {
    type V: Clone;
    fn from_exact(&self, w: &ExactScalar) -> Result<Self::V>;
    fn from_rational(&self, r: &Rational) -> Self::V;
    fn zero(&self) -> Self::V;
    fn is_zero(&self, v: &Self::V) -> bool;
    fn add(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn relu(&self, v: Self::V) -> Self::V;
    fn periodic(&self, spec: &SigmaSpec, v: &Self::V) -> Result<Self::V>;
    fn to_exact(&self, v: &Self::V) -> ExactScalar;
    fn to_f64(&self, v: &Self::V) -> f64;
}

pub(crate) fn triangle_rational(y: &Rational) -> Rational {
    // y reduced to [0,2)
    let two = Rational::from_integer(2.into());
    let half = Rational::new(1.into(), 2.into());
    let three_half = Rational::new(3.into(), 2.into());
    let q = (y / &two).floor();
    let t = y - q * &two;
    if t <= half {
        &t * &two
    } else if t <= three_half {
        &two - &t * &two
    } else {
        &t * &two - Rational::from_integer(4.into())
    }
}

fn table_rational(values: &[Rational], y: &Rational) -> Rational {
    // y in units of the base period 2
    let n = values.len() as i64;
    let two = Rational::from_integer(2.into());
    let q = (y / &two).floor();
    let t = (y - q * &two) * Rational::new(n.into(), 2.into());
    let k = t.floor();
    let frac = &t - &k;
    let k = k.to_integer().mod_floor(&BigInt::from(n)).to_usize().unwrap();
    let a = &values[k];
    let b = &values[(k + 1) % values.len()];
    a + (b - a) * frac
}

/// Exact rational arithmetic.
#[derive(Clone, Copy, Debug, Default)]
pub struct RatArith;

impl Arith for RatArith {
    type V = Rational;
    fn from_exact(&self, w: &ExactScalar) -> Result<Rational> {
        Ok(w.to_rational())
    }
    fn from_rational(&self, r: &Rational) -> Rational {
        r.clone()
    }
    fn zero(&self) -> Rational {
        Rational::zero()
    }
    fn is_zero(&self, v: &Rational) -> bool {
        v.is_zero()
    }
    fn add(&self, a: &Rational, b: &Rational) -> Rational {
        a + b
    }
    fn sub(&self, a: &Rational, b: &Rational) -> Rational {
        a - b
    }
    fn mul(&self, a: &Rational, b: &Rational) -> Rational {
        a * b
    }
    fn relu(&self, v: Rational) -> Rational {
        if v.is_negative() {
            Rational::zero()
        } else {
            v
        }
    }
    fn periodic(&self, spec: &SigmaSpec, v: &Rational) -> Result<Rational> {
        let y = v * Rational::from_integer(2.into()) / &spec.period;
        match &spec.kind {
            SigmaKind::Triangle => Ok(triangle_rational(&y)),
            SigmaKind::Table(vals) => Ok(table_rational(vals, &y)),
            SigmaKind::Sine => Err(Error::Precision("sine units need bigfloat mode".into())),
        }
    }
    fn to_exact(&self, v: &Rational) -> ExactScalar {
        ExactScalar::Rational(v.clone())
    }
    fn to_f64(&self, v: &Rational) -> f64 {
        rat_to_f64(v)
    }
}

/// Big-float arithmetic rounding every operation to `bits` mantissa bits.
#[derive(Clone, Copy, Debug)]
pub struct FloatArith {
    pub bits: u32,
}

impl Arith for FloatArith {
    type V = BigFloat;
    fn from_exact(&self, w: &ExactScalar) -> Result<BigFloat> {
        Ok(match w {
            ExactScalar::Rational(r) => BigFloat::from_rational(r, self.bits),
            ExactScalar::BigFloat(b) => b.with_precision(self.bits),
        })
    }
    fn from_rational(&self, r: &Rational) -> BigFloat {
        BigFloat::from_rational(r, self.bits)
    }
    fn zero(&self) -> BigFloat {
        BigFloat::zero(self.bits)
    }
    fn is_zero(&self, v: &BigFloat) -> bool {
        v.is_zero()
    }
    fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b)
    }
    fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b)
    }
    fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b)
    }
    fn relu(&self, v: BigFloat) -> BigFloat {
        v.relu()
    }
    fn periodic(&self, spec: &SigmaSpec, v: &BigFloat) -> Result<BigFloat> {
        let scale = BigFloat::from_rational(&(Rational::from_integer(2.into()) / &spec.period), self.bits);
        let y = v.mul(&scale);
        match &spec.kind {
            SigmaKind::Sine => Ok(sin_pi(&y)),
            SigmaKind::Triangle => {
                // exact on the rounded argument
                Ok(BigFloat::from_rational(&triangle_rational(&y.to_rational()), self.bits))
            }
            SigmaKind::Table(vals) => Ok(BigFloat::from_rational(&table_rational(vals, &y.to_rational()), self.bits)),
        }
    }
    fn to_exact(&self, v: &BigFloat) -> ExactScalar {
        ExactScalar::BigFloat(v.clone())
    }
    fn to_f64(&self, v: &BigFloat) -> f64 {
        v.to_f64()
    }
}

/// Hardware doubles.
#[derive(Clone, Copy, Debug, Default)]
pub struct F64Arith;

impl Arith for F64Arith {
    type V = f64;
    fn from_exact(&self, w: &ExactScalar) -> Result<f64> {
        Ok(w.to_f64())
    }
    fn from_rational(&self, r: &Rational) -> f64 {
        rat_to_f64(r)
    }
    fn zero(&self) -> f64 {
        0.0
    }
    fn is_zero(&self, v: &f64) -> bool {
        *v == 0.0
    }
    fn add(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn sub(&self, a: &f64, b: &f64) -> f64 {
        a - b
    }
    fn mul(&self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn relu(&self, v: f64) -> f64 {
        v.max(0.0)
    }
    fn periodic(&self, spec: &SigmaSpec, v: &f64) -> Result<f64> {
        let y = v * 2.0 / rat_to_f64(&spec.period);
        Ok(match &spec.kind {
            SigmaKind::Sine => (std::f64::consts::PI * y).sin(),
            SigmaKind::Triangle => {
                let t = y.rem_euclid(2.0);
                if t <= 0.5 {
                    2.0 * t
                } else if t <= 1.5 {
                    2.0 - 2.0 * t
                } else {
                    2.0 * t - 4.0
                }
            }
            SigmaKind::Table(vals) => {
                let n = vals.len() as f64;
                let t = y.rem_euclid(2.0) * n / 2.0;
                let k = t.floor();
                let frac = t - k;
                let k = (k as usize) % vals.len();
                let a = rat_to_f64(&vals[k]);
                let b = rat_to_f64(&vals[(k + 1) % vals.len()]);
                a + (b - a) * frac
            }
        })
    }
    fn to_exact(&self, v: &f64) -> ExactScalar {
        ExactScalar::Rational(Rational::from_float(*v).unwrap_or_else(Rational::zero))
    }
    fn to_f64(&self, v: &f64) -> f64 {
        *v
    }
}

#[derive(Clone, Debug)]
enum Coef<V> {
    One,
    MinusOne,
    General(V),
}

#[derive(Clone, Debug)]
enum Act<V> {
    Identity,
    Relu,
    Periodic(SigmaSpec),
    Polynomial(Vec<V>),
}

#[derive(Clone, Debug)]
struct CUnit<V> {
    act: Act<V>,
    incoming: Vec<(usize, Coef<V>)>,
    bias: V,
}

/// A network with weights converted once into the backend's number type.
#[derive(Clone, Debug)]
pub struct Compiled<A: Arith> {
    arith: A,
    input_dim: usize,
    units: Vec<CUnit<A::V>>,
    outputs: Vec<usize>,
}

impl<A: Arith> Compiled<A> {
    pub fn new(net: &Network, arith: A) -> Result<Self> {
        let mut units = Vec::with_capacity(net.units.len());
        for u in &net.units {
            let mut incoming = Vec::with_capacity(u.incoming.len());
            for (s, w) in &u.incoming {
                let c = match w {
                    ExactScalar::Rational(r) if r.is_one() => Coef::One,
                    ExactScalar::Rational(r) if (-r).is_one() => Coef::MinusOne,
                    _ => Coef::General(arith.from_exact(w)?),
                };
                incoming.push((*s, c));
            }
            let act = match &u.activation {
                Activation::Identity => Act::Identity,
                Activation::Relu => Act::Relu,
                Activation::Periodic(s) => {
                    if matches!(s.kind, SigmaKind::Sine) {
                        // probe support up front so rational mode fails early
                        arith.periodic(s, &arith.zero())?;
                    }
                    Act::Periodic(s.clone())
                }
                Activation::Polynomial(c) => Act::Polynomial(c.iter().map(|x| arith.from_rational(x)).collect()),
            };
            units.push(CUnit { act, incoming, bias: arith.from_exact(&u.bias)? });
        }
        Ok(Compiled { arith, input_dim: net.input_dim, units, outputs: net.outputs.clone() })
    }

    pub fn arith(&self) -> &A {
        &self.arith
    }

    /// All node values (inputs first).
    pub fn eval_all(&self, x: &[A::V]) -> Result<Vec<A::V>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension { expected: self.input_dim, got: x.len() });
        }
        let a = &self.arith;
        let mut vals: Vec<A::V> = Vec::with_capacity(self.input_dim + self.units.len());
        vals.extend_from_slice(x);
        for u in &self.units {
            let mut acc = u.bias.clone();
            for (s, c) in &u.incoming {
                let v = &vals[*s];
                if a.is_zero(v) {
                    continue;
                }
                acc = match c {
                    Coef::One => a.add(&acc, v),
                    Coef::MinusOne => a.sub(&acc, v),
                    Coef::General(w) => a.add(&acc, &a.mul(w, v)),
                };
            }
            let out = match &u.act {
                Act::Identity => acc,
                Act::Relu => a.relu(acc),
                Act::Periodic(s) => a.periodic(s, &acc)?,
                Act::Polynomial(c) => {
                    let mut r = a.zero();
                    for ci in c.iter().rev() {
                        r = a.add(&a.mul(&r, &acc), ci);
                    }
                    r
                }
            };
            vals.push(out);
        }
        Ok(vals)
    }

    pub fn eval(&self, x: &[A::V]) -> Result<Vec<A::V>> {
        let vals = self.eval_all(x)?;
        Ok(self.outputs.iter().map(|o| vals[*o].clone()).collect())
    }

    pub fn eval_rational(&self, x: &[Rational]) -> Result<Vec<A::V>> {
        let xs: Vec<A::V> = x.iter().map(|r| self.arith.from_rational(r)).collect();
        self.eval(&xs)
    }

    pub fn eval_f64_out(&self, x: &[Rational]) -> Result<Vec<f64>> {
        Ok(self.eval_rational(x)?.iter().map(|v| self.arith.to_f64(v)).collect())
    }
}

/// One-shot evaluation of the first output.
pub fn eval_network(net: &Network, x: &[ExactScalar], mode: Mode) -> Result<ExactScalar> {
    Ok(eval_outputs(net, x, mode)?.swap_remove(0))
}

pub fn eval_outputs(net: &Network, x: &[ExactScalar], mode: Mode) -> Result<Vec<ExactScalar>> {
    if x.len() != net.input_dim {
        return Err(Error::Dimension { expected: net.input_dim, got: x.len() });
    }
    fn run<A: Arith>(net: &Network, x: &[ExactScalar], a: A) -> Result<Vec<ExactScalar>> {
        let c = Compiled::new(net, a)?;
        let xs = x.iter().map(|v| c.arith().from_exact(v)).collect::<Result<Vec<_>>>()?;
        let out = c.eval(&xs)?;
        Ok(out.iter().map(|v| c.arith().to_exact(v)).collect())
    }
    match mode {
        Mode::Rational => run(net, x, RatArith),
        Mode::BigFloat { mantissa_bits } => {
            if mantissa_bits < 64 {
                return Err(Error::Precision(format!("mantissa_bits {mantissa_bits} < 64")));
            }
            run(net, x, FloatArith { bits: mantissa_bits })
        }
        Mode::F64 => run(net, x, F64Arith),
    }
}

/// Rational-mode convenience for tests and builders.
pub fn eval_rat(net: &Network, x: &[Rational]) -> Result<Vec<Rational>> {
    let c = Compiled::new(net, RatArith)?;
    c.eval(x)
}

pub fn eval_rat1(net: &Network, x: &[Rational]) -> Result<Rational> {
    Ok(eval_rat(net, x)?.swap_remove(0))
}

pub fn eval_f64(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    let c = Compiled::new(net, F64Arith)?;
    c.eval(x)
}
