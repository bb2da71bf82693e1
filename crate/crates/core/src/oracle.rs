//! Target functions with exact derivative access and the test corpus.

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{int, pi_fixed, pow_bounds, rat, rat_pow, sin_pi, BigFloat, Rational};

pub type MultiIndex = Vec<u32>;

/// Highest Taylor order used at smoothness r, i.e. ceil(r) - 1.
pub fn taylor_order(r: &Rational) -> u32 {
    (r.ceil().to_integer().to_i64().unwrap_or(1) - 1).max(0) as u32
}

/// All multi-indices of length d with |k| <= order, graded then lexicographic.
pub fn multi_indices(d: usize, order: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 0..=order {
        let mut cur = vec![0u32; d];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<MultiIndex>, cur: &mut MultiIndex, pos: usize, left: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    if cur.is_empty() {
        return;
    }
    for v in (0..=left).rev() {
        cur[pos] = v;
        fill(out, cur, pos + 1, left - v);
    }
    cur[pos] = 0;
}

pub fn factorial(k: &[u32]) -> Rational {
    let mut acc = BigInt::one();
    for &ki in k {
        for j in 2..=ki {
            acc *= j;
        }
    }
    Rational::from_integer(acc)
}

/// A target f on R^d promised to lie in the unit Hölder ball of smoothness r
/// after division by `norm_bound`.
pub trait FunctionOracle: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn smoothness(&self) -> &Rational;

    fn norm_bound(&self) -> Rational {
        Rational::one()
    }

    /// D^k f(x); available for |k| <= ceil(r) - 1.
    fn derivative(&self, k: &[u32], x: &[Rational]) -> Result<Rational>;

    fn evaluate(&self, x: &[Rational]) -> Result<Rational> {
        self.derivative(&vec![0; self.dim()], x)
    }

    fn eval_f64(&self, x: &[f64]) -> f64;
}

fn check_order(k: &[u32], d: usize, r: &Rational) -> Result<()> {
    if k.len() != d {
        return Err(Error::Dimension { expected: d, got: k.len() });
    }
    let total: u32 = k.iter().sum();
    if total > taylor_order(r) {
        return Err(Error::Oracle(format!("derivative order {total} exceeds ceil(r)-1")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ZeroFn {
    pub d: usize,
    pub r: Rational,
}

impl FunctionOracle for ZeroFn {
    fn id(&self) -> &str {
        "zero"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn smoothness(&self) -> &Rational {
        &self.r
    }
    fn derivative(&self, k: &[u32], _x: &[Rational]) -> Result<Rational> {
        check_order(k, self.d, &self.r)?;
        Ok(Rational::zero())
    }
    fn eval_f64(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// One-variable factor of a product oracle.
#[derive(Clone, Debug)]
pub enum Factor {
    /// sin(pi (freq x + phase))
    Sine { freq: Rational, phase: Rational },
    /// polynomial, coefficients ascending
    Poly(Vec<Rational>),
}

const ORACLE_BITS: u32 = 320;

impl Factor {
    fn derivative(&self, j: u32, x: &Rational) -> Rational {
        match self {
            Factor::Sine { freq, phase } => {
                let t = freq * x + phase + rat(j as i64, 2);
                let s = sin_pi(&BigFloat::from_rational(&t, ORACLE_BITS));
                let pi = BigFloat::from_parts(pi_fixed(ORACLE_BITS), -(ORACLE_BITS as i64), ORACLE_BITS);
                let mut v = s;
                for _ in 0..j {
                    v = v.mul(&pi).mul_rational(freq);
                }
                v.to_rational()
            }
            Factor::Poly(c) => {
                let mut acc = Rational::zero();
                for (i, ci) in c.iter().enumerate().rev() {
                    if (i as u32) < j {
                        break;
                    }
                    let mut fall = BigInt::one();
                    for m in 0..j {
                        fall *= i as u32 - m;
                    }
                    acc = acc * x + ci * Rational::from_integer(fall);
                }
                // Horner above stops at index j, so acc is in powers x^(i-j)
                acc
            }
        }
    }

    fn eval_f64(&self, x: f64) -> f64 {
        match self {
            Factor::Sine { freq, phase } => {
                let t = crate::scalar::rat_to_f64(freq) * x + crate::scalar::rat_to_f64(phase);
                (std::f64::consts::PI * t).sin()
            }
            Factor::Poly(c) => c.iter().rev().fold(0.0, |acc, ci| acc * x + crate::scalar::rat_to_f64(ci)),
        }
    }

    /// Upper bounds on |factor^(j)| over [-1/2, 3/2] for j = 0..=top.
    fn bounds(&self, top: u32) -> Vec<Rational> {
        match self {
            Factor::Sine { freq, .. } => {
                let g = rat(22, 7) * num_traits::Signed::abs(freq);
                (0..=top).map(|j| rat_pow(&g, j)).collect()
            }
            Factor::Poly(c) => {
                // centered form at 1/2 with radius 1: |p^(j)(x)| <= Σ_i |p^(j+i)(1/2)| / i!
                let half = rat(1, 2);
                let deg = c.len() as u32;
                let at: Vec<Rational> = (0..=deg + top).map(|j| num_traits::Signed::abs(&self.derivative(j, &half))).collect();
                (0..=top)
                    .map(|j| {
                        let mut b = Rational::zero();
                        let mut fact = Rational::one();
                        for i in 0..=deg {
                            if i > 0 {
                                fact *= int(i as i64);
                            }
                            b += &at[(j + i) as usize] / &fact;
                        }
                        b
                    })
                    .collect()
            }
        }
    }
}

/// scale * prod_i factor_i(x_i)
#[derive(Clone, Debug)]
pub struct ProductFn {
    pub name: String,
    pub r: Rational,
    pub scale: Rational,
    pub factors: Vec<Factor>,
}

impl ProductFn {
    /// Scales so that all derivatives up to order ceil(r) are at most 1/(1.1 max(2, d)) on
    /// [-1/2, 3/2]^d, which bounds the Hölder norm by 1 there.
    pub fn normalized(name: &str, r: Rational, factors: Vec<Factor>) -> Self {
        let d = factors.len();
        let top = taylor_order(&r) + 1;
        let bounds: Vec<Vec<Rational>> = factors.iter().map(|f| f.bounds(top)).collect();
        let mut worst = Rational::zero();
        for k in multi_indices(d, top) {
            let mut b = Rational::one();
            for (bi, &ki) in bounds.iter().zip(&k) {
                b *= &bi[ki as usize];
            }
            if b > worst {
                worst = b;
            }
        }
        let scale = rat(10, 11) / (int(d.max(2) as i64) * worst);
        ProductFn { name: name.into(), r, scale, factors }
    }

    pub fn raw(name: &str, r: Rational, scale: Rational, factors: Vec<Factor>) -> Self {
        ProductFn { name: name.into(), r, scale, factors }
    }
}

impl FunctionOracle for ProductFn {
    fn id(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.factors.len()
    }
    fn smoothness(&self) -> &Rational {
        &self.r
    }
    fn derivative(&self, k: &[u32], x: &[Rational]) -> Result<Rational> {
        check_order(k, self.dim(), &self.r)?;
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        let mut acc = self.scale.clone();
        for ((f, &j), xi) in self.factors.iter().zip(k).zip(x) {
            if acc.is_zero() {
                break;
            }
            acc *= f.derivative(j, xi);
        }
        Ok(acc)
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        let mut acc = crate::scalar::rat_to_f64(&self.scale);
        for (f, xi) in self.factors.iter().zip(x) {
            acc *= f.eval_f64(*xi);
        }
        acc
    }
}

fn tent(x: &Rational) -> Rational {
    let f = x - x.floor();
    let g = Rational::one() - &f;
    if f < g {
        f
    } else {
        g
    }
}

fn tent_f64(x: f64) -> f64 {
    let f = x - x.floor();
    f.min(1.0 - f)
}

/// (1/(levels d)) Σ_i Σ_j c_j tent(λ^j x_i) with c_j <= λ^(-r j); Hölder-r with constant <= 1 for r <= 1.
#[derive(Clone, Debug)]
pub struct RoughFn {
    pub name: String,
    pub r: Rational,
    pub d: usize,
    pub lambda: i64,
    pub coeffs: Vec<Rational>,
    coeffs_f64: Vec<f64>,
}

impl RoughFn {
    pub fn new(name: &str, r: Rational, d: usize, lambda: i64, levels: usize) -> Self {
        let norm = int((levels * d) as i64);
        let coeffs: Vec<Rational> = (0..levels)
            .map(|j| pow_bounds(&int(lambda), &(-r.clone() * int(j as i64)), 64).0 / &norm)
            .collect();
        let coeffs_f64 = coeffs.iter().map(crate::scalar::rat_to_f64).collect();
        RoughFn { name: name.into(), r, d, lambda, coeffs, coeffs_f64 }
    }
}

impl FunctionOracle for RoughFn {
    fn id(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn smoothness(&self) -> &Rational {
        &self.r
    }
    fn derivative(&self, k: &[u32], x: &[Rational]) -> Result<Rational> {
        check_order(k, self.d, &self.r)?;
        let lam = int(self.lambda);
        let mut acc = Rational::zero();
        for xi in x {
            let mut y = xi.clone();
            for c in &self.coeffs {
                acc += c * tent(&y);
                y *= &lam;
            }
        }
        Ok(acc)
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        let lam = self.lambda as f64;
        let mut acc = 0.0;
        for &xi in x {
            let mut y = xi;
            for c in &self.coeffs_f64 {
                acc += c * tent_f64(y);
                y *= lam;
            }
        }
        acc
    }
}

/// Deterministic corpus of at least five oracles per (d, r); `zero` is always first.
pub fn corpus(d: usize, r: &Rational, seed: u64) -> Result<Vec<Box<dyn FunctionOracle>>> {
    if d == 0 || d > 3 || *r <= Rational::zero() || *r > int(4) {
        return Err(Error::Invalid(format!("unsupported corpus parameters d={d} r={r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase = || rat(rng.gen_range(0..8), 8);
    let sine = |freq: Rational, phase: Rational| Factor::Sine { freq, phase };
    let mut out: Vec<Box<dyn FunctionOracle>> = vec![Box::new(ZeroFn { d, r: r.clone() })];
    out.push(Box::new(ProductFn::normalized(
        "sinpi",
        r.clone(),
        (0..d).map(|_| sine(int(1), int(0))).collect(),
    )));
    out.push(Box::new(ProductFn::normalized(
        "cos2",
        r.clone(),
        (0..d).map(|_| sine(int(2), rat(1, 2) + phase())).collect(),
    )));
    out.push(Box::new(ProductFn::normalized(
        "sinphase",
        r.clone(),
        (0..d).map(|_| sine(rat(3, 2), phase())).collect(),
    )));
    out.push(Box::new(ProductFn::normalized(
        "bump",
        r.clone(),
        (0..d).map(|_| Factor::Poly(vec![int(0), int(4), int(-4)])).collect(),
    )));
    if *r <= Rational::one() {
        out.push(Box::new(RoughFn::new("takagi", r.clone(), d, 2, 12)));
        out.push(Box::new(RoughFn::new("weier3", r.clone(), d, 3, 12)));
    }
    Ok(out)
}

pub fn corpus_fn(d: usize, r: &Rational, seed: u64, id: &str) -> Result<Box<dyn FunctionOracle>> {
    corpus(d, r, seed)?
        .into_iter()
        .find(|f| f.id() == id)
        .ok_or_else(|| Error::Invalid(format!("no corpus function {id} for d={d} r={r}")))
}
