//! Periodic-activation lookups: parity gates, patch encoders, dichotomy weights,
//! branch gates, a single seed weight generating all classifier weights, and the
//! deep builder that assembles them behind partition-of-unity filters.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::eval::triangle_rational;
use crate::gadgets::product;
use crate::net::{meta_of, Activation, GraphBuilder, Lin, Network, SigmaKind, SigmaSpec};
use crate::oracle::FunctionOracle;
use crate::partition::all_tuples;
use crate::scalar::{int, pi_fixed, pow2, rat, sin_pi, BigFloat, ExactScalar, Rational};

/// Upper bound for pi used to certify sine enclosures.
fn pi_hi() -> Rational {
    rat(355, 113)
}

/// Largest supported lookup width.
pub const MAX_K: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub k: usize,
    /// Indexed by sum z_i 2^(i-1).
    pub table: Vec<bool>,
}

impl Assignment {
    pub fn new(k: usize, table: Vec<bool>) -> Result<Self> {
        if k == 0 || k > MAX_K || table.len() != 1 << k {
            return invalid(format!("assignment of width {k} needs 2^{k} entries"));
        }
        Ok(Assignment { k, table })
    }

    pub fn random(k: usize, rng: &mut impl Rng) -> Result<Self> {
        let table = (0..1usize << k).map(|_| rng.gen::<bool>()).collect();
        Self::new(k, table)
    }

    pub fn get(&self, z: &[bool]) -> bool {
        let idx = z.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i));
        self.table[idx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    /// Gains a_1..a_K (index 0 is level 1).
    pub a: Vec<Rational>,
    /// Interval lengths l_1..l_K.
    pub l: Vec<Rational>,
    pub c_sigma: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchCode {
    /// 1 where the parity gate reads +1.
    pub bits: Vec<u8>,
    pub m: u64,
    pub d: usize,
}

/// Lipschitz constant of the activation rescaled to period 2.
pub fn normalized_lipschitz(spec: &SigmaSpec) -> Rational {
    &spec.lipschitz * &spec.period / int(2)
}

pub fn make_schedule(k: usize, spec: &SigmaSpec) -> Result<Schedule> {
    if k == 0 {
        return invalid("schedule needs K >= 1");
    }
    let c = normalized_lipschitz(spec);
    let mut a = vec![int(2)];
    let mut l = vec![rat(1, 2)];
    for i in 1..k {
        let prev = &l[i - 1];
        let ak = int(4) / prev;
        let half = prev / int(2);
        let lip = prev / (&ak * &c);
        l.push(if half < lip { half } else { lip });
        a.push(ak);
    }
    Ok(Schedule { a, l, c_sigma: c })
}

/// floor(log2(1/x)) + 1 for 0 < x <= 1, an upper bound on the bits below the point.
fn inv_bits(x: &Rational) -> u32 {
    let b = x.denom().bits() as i64 - x.numer().abs().bits() as i64 + 1;
    b.max(1) as u32
}

fn check_sigma(spec: &SigmaSpec) -> Result<()> {
    match spec.kind {
        SigmaKind::Table(_) => invalid("lookups need a triangle or sine activation"),
        _ => Ok(()),
    }
}

/// sigma(y) for the period-2 activation with an absolute error bound.
fn sigma_eval(spec: &SigmaSpec, y: &Rational, prec: u32) -> (Rational, Rational) {
    match spec.kind {
        SigmaKind::Sine => {
            let mag = y.abs();
            let whole = if mag >= Rational::one() { mag.to_integer().bits() as u32 } else { 0 };
            let bits = prec + whole + 8;
            let v = sin_pi(&BigFloat::from_rational(y, bits));
            (v.to_rational(), pow2(-(prec as i64) + 1))
        }
        _ => (triangle_rational(y), Rational::zero()),
    }
}

fn round_abs(x: &Rational, prec: u32) -> Rational {
    let s = pow2(prec as i64);
    (x * &s).round() / s
}

fn sqrt_abs(x: &Rational, prec: u32) -> Rational {
    let s = (x * pow2(2 * prec as i64)).floor().to_integer();
    let r = if s.is_negative() { BigInt::zero() } else { s.sqrt() };
    Rational::new(r, BigInt::one() << prec as usize)
}

/// v in [-1/6, 1/6] with sin(pi v) = u, Newton with doubling precision.
fn asin_pi_small(u: &Rational, prec: u32) -> Rational {
    let uf = crate::scalar::rat_to_f64(u).clamp(-1.0, 1.0);
    let mut v = crate::scalar::rat_from_f64(uf.asin() / std::f64::consts::PI);
    let target = prec + 16;
    let mut p = 48u32;
    let mut finals = 0;
    loop {
        p = (2 * p).min(target);
        let bits = p + 8;
        let vb = BigFloat::from_rational(&v, bits);
        let s = sin_pi(&vb);
        let c = sin_pi(&BigFloat::from_rational(&(&v + rat(1, 2)), bits));
        let pi = BigFloat::from_parts(pi_fixed(bits), -(bits as i64), bits);
        let ub = BigFloat::from_rational(u, bits);
        let delta = s.sub(&ub).div(&pi.mul(&c));
        v = round_abs(&vb.sub(&delta).to_rational(), bits);
        if p == target {
            finals += 1;
            if finals == 2 {
                return v;
            }
        }
    }
}

/// y in [-1/2, 1/2] with sin(pi y) close to t in [-1, 1].
fn asin_pi(t: &Rational, prec: u32) -> Rational {
    let half = rat(1, 2);
    let mag = t.abs();
    if mag <= half {
        return asin_pi_small(t, prec);
    }
    // sin(pi (1/2 - 2v)) = 1 - 2 sin^2(pi v)
    let u = sqrt_abs(&((Rational::one() - &mag) / int(2)), prec + 8);
    let v = asin_pi_small(&u, prec + 4);
    let y = half - int(2) * v;
    if t.is_negative() {
        -y
    } else {
        y
    }
}

/// The solution w of sigma(a w) = t nearest to `near`; |w - near| <= 1/a.
/// Sine results are dyadic with `prec` fraction bits.
fn preimage_near(spec: &SigmaSpec, a: &Rational, t: &Rational, near: &Rational, prec: u32) -> Rational {
    let y0 = a * near;
    let base = match spec.kind {
        SigmaKind::Sine => asin_pi(t, prec + inv_bits(&(Rational::one() / a)) + 8),
        _ => t / int(2),
    };
    let two = int(2);
    // nearest preimage that keeps the seed inside [-1, 1]
    let mut best: Option<Rational> = None;
    for b in [base.clone(), Rational::one() - &base] {
        let k0 = ((&y0 - &b) / &two).round();
        for dk in [-1, 0, 1] {
            let cand = &b + (&k0 + int(dk)) * &two;
            if cand.abs() > *a {
                continue;
            }
            let better = match &best {
                None => true,
                Some(cur) => (&cand - &y0).abs() < (cur - &y0).abs(),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    let w = best.unwrap() / a;
    match spec.kind {
        SigmaKind::Sine => round_abs(&w, prec),
        _ => w,
    }
}

fn level_prec(l: &Rational) -> u32 {
    inv_bits(l) + 64
}

/// Finds w whose dichotomy trajectory reproduces `assignment`, plus the certified interval around it.
pub fn find_assignment_weight(
    assignment: &Assignment,
    spec: &SigmaSpec,
    sched: &Schedule,
) -> Result<(ExactScalar, (Rational, Rational))> {
    check_sigma(spec)?;
    if sched.a.len() < assignment.k {
        return invalid("schedule shorter than the assignment width");
    }
    if matches!(spec.kind, SigmaKind::Sine) && sched.c_sigma <= pi_hi() {
        return Err(Error::Enclosure("schedule constant must exceed 355/113 for sine".into()));
    }
    let w = assign_rec(&assignment.table, assignment.k, spec, sched)?;
    let h = &sched.l[assignment.k - 1] / int(2);
    let lo = &w - &h;
    let hi = &w + &h;
    Ok((ExactScalar::Rational(w), (lo, hi)))
}

fn assign_rec(table: &[bool], k: usize, spec: &SigmaSpec, sched: &Schedule) -> Result<Rational> {
    if k == 1 {
        return Ok(match (table[0], table[1]) {
            (true, true) => rat(1, 4),
            (true, false) => rat(3, 4),
            (false, true) => rat(-3, 4),
            (false, false) => rat(-1, 4),
        });
    }
    let half = table.len() / 2;
    let c0 = assign_rec(&table[..half], k - 1, spec, sched)?;
    let c1 = assign_rec(&table[half..], k - 1, spec, sched)?;
    let a = &sched.a[k - 1];
    let lk = &sched.l[k - 1];
    let lprev = &sched.l[k - 2];
    let prec = level_prec(lk);
    let w = preimage_near(spec, a, &c1, &c0, prec);
    let h = lk / int(2);
    let room = lprev / int(2);
    if (&w - &c0).abs() + &h > room {
        return Err(Error::Enclosure(format!("level {k}: identity branch leaves its interval")));
    }
    if matches!(spec.kind, SigmaKind::Sine) {
        let (v, e) = sigma_eval(spec, &(a * &w), prec);
        let spread = pi_hi() * a * &h;
        if (v - &c1).abs() + e + spread > room {
            return Err(Error::Enclosure(format!("level {k}: sine branch not certified at {prec} bits")));
        }
    }
    Ok(w)
}

/// Evaluates H_{K,w}(z) for every z by walking the branch tree.
pub fn dichotomy_table(w: &Rational, k: usize, spec: &SigmaSpec, sched: &Schedule) -> Result<Vec<bool>> {
    check_sigma(spec)?;
    let mut out = vec![false; 1 << k];
    let shifts: Option<Vec<u64>> = sched.a[..k].iter().map(pow2_exponent).collect();
    match (&spec.kind, shifts) {
        (SigmaKind::Triangle, Some(shifts)) if w.denom().magnitude().count_ones() == 1 => {
            let e = w.denom().trailing_zeros().unwrap_or(0);
            tree_fixed(w.numer(), e, k, &shifts, &mut out)?;
        }
        _ => tree_rec(w, k, spec, sched, &mut out)?,
    }
    Ok(out)
}

fn pow2_exponent(a: &Rational) -> Option<u64> {
    let n = a.numer();
    if a.is_integer() && n.is_positive() && n.magnitude().count_ones() == 1 {
        n.trailing_zeros()
    } else {
        None
    }
}

/// Triangle wave of n / 2^e, returned over the same denominator (e >= 1).
fn triangle_fixed(n: &BigInt, e: u64) -> BigInt {
    let unit = BigInt::one() << e as usize;
    let t = n.mod_floor(&(&unit << 1usize));
    let half = &unit >> 1usize;
    if t <= half {
        t << 1usize
    } else if t <= &unit + &half {
        (&unit << 1usize) - (t << 1usize)
    } else {
        (t << 1usize) - (unit << 2usize)
    }
}

/// Dyadic walk for the triangle with power-of-two gains: v = n / 2^e.
fn tree_fixed(n: &BigInt, e: u64, k: usize, shifts: &[u64], out: &mut [bool]) -> Result<()> {
    if k == 0 {
        if n.is_zero() {
            return Err(Error::Enclosure("trajectory ends at zero".into()));
        }
        out[0] = n.is_positive();
        return Ok(());
    }
    let half = out.len() / 2;
    tree_fixed(n, e, k - 1, shifts, &mut out[..half])?;
    let s = shifts[k - 1];
    let (m, e2) = if e >= s + 1 { (n.clone(), e - s) } else { (n << (s + 1 - e) as usize, 1) };
    let next = triangle_fixed(&m, e2);
    tree_fixed(&next, e2, k - 1, shifts, &mut out[half..])
}

fn tree_rec(v: &Rational, k: usize, spec: &SigmaSpec, sched: &Schedule, out: &mut [bool]) -> Result<()> {
    if k == 0 {
        let margin = match spec.kind {
            SigmaKind::Sine => pow2(-40),
            _ => Rational::zero(),
        };
        if v.abs() <= margin {
            return Err(Error::Enclosure("trajectory ends too close to zero".into()));
        }
        out[0] = v.is_positive();
        return Ok(());
    }
    let half = out.len() / 2;
    tree_rec(v, k - 1, spec, sched, &mut out[..half])?;
    let prec = if k >= 2 { level_prec(&sched.l[k - 2]) } else { 64 };
    let (next, _) = sigma_eval(spec, &(&sched.a[k - 1] * v), prec);
    let next = match spec.kind {
        SigmaKind::Sine => round_abs(&next, prec),
        _ => next,
    };
    tree_rec(&next, k - 1, spec, sched, &mut out[half..])
}

/// Solves backward for w'_1 so the chain w'_{j+1} = sigma(a w'_j) stays within 1/a of each target.
pub fn find_seed_weight(targets: &[Rational], a: &Rational, spec: &SigmaSpec) -> Result<Rational> {
    check_sigma(spec)?;
    if targets.is_empty() || *a < Rational::one() {
        return invalid("seed needs at least one target and a gain of at least 1");
    }
    if targets.iter().any(|t| t.abs() > Rational::one()) {
        return invalid("seed targets must lie in [-1, 1]");
    }
    let prec = seed_precision(targets.len(), a);
    let mut w = targets[targets.len() - 1].clone();
    for t in targets[..targets.len() - 1].iter().rev() {
        w = preimage_near(spec, a, &w, t, prec);
    }
    if w.abs() > Rational::one() {
        return Err(Error::Precision("seed left [-1, 1]".into()));
    }
    Ok(w)
}

/// Absolute bits needed to carry a chain of `r` links with gain `a`.
pub fn seed_precision(r: usize, a: &Rational) -> u32 {
    let ab = a.ceil().to_integer().bits() as u32;
    r as u32 * (ab + 2) + 128
}

/// Forward chain w'_1..w'_n; exact for the triangle, rounded to `prec` bits for sine.
pub fn seed_chain(seed: &Rational, a: &Rational, spec: &SigmaSpec, n: usize, prec: u32) -> Vec<Rational> {
    let mut out = Vec::with_capacity(n);
    let mut w = seed.clone();
    for j in 0..n {
        if j > 0 {
            let (v, _) = sigma_eval(spec, &(a * &w), prec);
            w = match spec.kind {
                SigmaKind::Sine => round_abs(&v, prec),
                _ => v,
            };
        }
        out.push(w.clone());
    }
    out
}

/// sigma(a x) on the period-2 scale, as one periodic unit.
fn sigma_unit(g: &mut GraphBuilder, spec: &SigmaSpec, x: &Lin, a: &Rational) -> Lin {
    let scale = a * &spec.period / int(2);
    g.periodic(spec, &x.scaled(&scale))
}

/// min(1, max(-1, gain * sigma(x))).
fn clamped_parity(g: &mut GraphBuilder, spec: &SigmaSpec, x: &Lin, gain: &Rational) -> Lin {
    let s = sigma_unit(g, spec, x, &int(1));
    let v = s.scaled(gain);
    let p = g.relu(&v.plus_const(&int(1)));
    let n = g.relu(&v.plus_const(&int(-1)));
    p.minus(&n).plus_const(&int(-1))
}

/// Half-width of the ramp around each breakpoint of the clamped parity at gain a and scale s.
pub fn parity_guard(a: &Rational, s: &Rational) -> Rational {
    Rational::one() / (int(2) * a * s)
}

/// x -> clamp(a sigma(s x + shift)); equals (-1)^floor(s x + shift) off the guard zones.
pub fn build_parity(a: &Rational, s: &Rational, shift: &Rational, spec: &SigmaSpec) -> Result<Network> {
    check_sigma(spec)?;
    if *a <= Rational::one() || *s <= Rational::zero() {
        return invalid("parity needs a > 1 and s > 0");
    }
    let mut g = GraphBuilder::new(1);
    let x = g.input(0).scaled(s).plus_const(shift);
    let out = clamped_parity(&mut g, spec, &x, a);
    let meta = meta_of(&[
        ("variant", "parity".into()),
        ("gain", a.to_string()),
        ("guard", parity_guard(a, s).to_string()),
    ]);
    Ok(g.finish(&[out], meta))
}

/// Gain for the level-u gate so that every level has the same guard radius 1/(2 a M).
fn level_gain(a: &Rational, u: u32, levels: u32) -> Rational {
    a * pow2((levels - u) as i64)
}

fn encoder_bits(
    g: &mut GraphBuilder,
    spec: &SigmaSpec,
    x: &[Lin],
    us: std::ops::RangeInclusive<u32>,
    top: u32,
    gain: &Rational,
) -> Vec<Lin> {
    let mut out = Vec::new();
    for xc in x {
        for u in us.clone() {
            let xs = xc.scaled(&pow2(u as i64));
            out.push(clamped_parity(g, spec, &xs, &level_gain(gain, u, top)));
        }
    }
    out
}

/// K = d U outputs in {-1, 1} off the guard zones; output k U + (u - 1) reads coordinate k at scale 2^u.
pub fn build_patch_encoder(u: u32, d: usize, spec: &SigmaSpec) -> Result<Network> {
    check_sigma(spec)?;
    if u == 0 || d == 0 || u > 30 {
        return invalid("encoder needs U >= 1 and d >= 1");
    }
    let m = 1u64 << u;
    let gain = int(8 * m as i64);
    let mut g = GraphBuilder::new(d);
    let xs = g.inputs();
    let outs = encoder_bits(&mut g, spec, &xs, 1..=u, u, &gain);
    let meta = meta_of(&[
        ("variant", "patch_encoder".into()),
        ("K", (d * u as usize).to_string()),
        ("M", m.to_string()),
        ("gain", gain.to_string()),
        ("guard", parity_guard(&gain, &int(m as i64)).to_string()),
    ]);
    Ok(g.finish(&outs, meta))
}

/// The code the encoder produces for x off the guard zones.
pub fn patch_code(x: &[Rational], u: u32) -> PatchCode {
    let mut bits = Vec::new();
    for xc in x {
        for lvl in 1..=u {
            let f = (xc * pow2(lvl as i64)).floor().to_integer();
            bits.push(if f.bit(0) { 0 } else { 1 });
        }
    }
    PatchCode { bits, m: 1 << u, d: x.len() }
}

/// (x, b) -> (1 - b) x + b sigma(a x) for binary b, via b y = relu(2b + y - 1) - b.
fn branch_gate(g: &mut GraphBuilder, spec: &SigmaSpec, x: &Lin, b: &Lin, a: &Rational) -> Lin {
    let s = sigma_unit(g, spec, x, a);
    let two_b = b.scaled(&int(2)).plus_const(&int(-1));
    let keep = g.relu(&two_b.plus(x));
    let take = g.relu(&two_b.plus(&s));
    x.minus(&keep).plus(&take)
}

pub fn build_branch_gate(a: &Rational, spec: &SigmaSpec) -> Result<Network> {
    check_sigma(spec)?;
    let mut g = GraphBuilder::new(2);
    let x = g.input(0);
    let b = g.input(1);
    let out = branch_gate(&mut g, spec, &x, &b, a);
    Ok(g.finish(&[out], meta_of(&[("variant", "branch_gate".into()), ("gain", a.to_string())])))
}

/// Psi_q for q in {0,1}^d (lexicographic, first coordinate most significant).
/// Products for d >= 2 telescope so the filters sum to exactly 1.
fn unity_filters(g: &mut GraphBuilder, spec: &SigmaSpec, x: &[Lin], m: u64, a0: &Rational, eps: &Rational) -> Vec<Lin> {
    let mut fs: Vec<Lin> = vec![Lin::constant(int(1))];
    for (s, xc) in x.iter().enumerate() {
        let t = clamped_parity(g, spec, &xc.scaled(&int(2 * m as i64)), a0);
        let psi0 = t.plus_const(&int(1)).scaled(&rat(1, 2));
        let mut next = Vec::with_capacity(fs.len() * 2);
        for f in &fs {
            let f0 = if s == 0 { psi0.clone() } else { product(g, f, &psi0, eps, &int(1)) };
            let f1 = f.minus(&f0);
            next.push(f0);
            next.push(f1);
        }
        fs = next;
    }
    fs
}

pub fn build_unity_filters(m: u64, a0: &Rational, d: usize, spec: &SigmaSpec) -> Result<Network> {
    check_sigma(spec)?;
    if *a0 <= Rational::one() || m == 0 || d == 0 {
        return invalid("filters need a0 > 1, M >= 1 and d >= 1");
    }
    let mut g = GraphBuilder::new(d);
    let xs = g.inputs();
    let fs = unity_filters(&mut g, spec, &xs, m, a0, &pow2(-64));
    let meta = meta_of(&[("variant", "unity_filters".into()), ("M", m.to_string()), ("gain", a0.to_string())]);
    Ok(g.finish(&fs, meta))
}

#[derive(Clone, Debug)]
pub struct FourierOptions {
    pub sigma: SigmaSpec,
    /// Finest-level parity gain; defaults to 8M.
    pub gain: Option<Rational>,
    pub filter_gain: Rational,
}

impl Default for FourierOptions {
    fn default() -> Self {
        FourierOptions { sigma: SigmaSpec::triangle(), gain: None, filter_gain: int(2) }
    }
}

/// Structural parameters shared by the skeleton and the seed search.
#[derive(Clone, Debug)]
pub struct FourierPlan {
    pub d: usize,
    pub u: u32,
    pub m: u64,
    pub k: usize,
    /// Value bits per patch (bits 0..=r_bits).
    pub r_bits: u32,
    pub sched: Schedule,
    pub seed_gain: Rational,
    pub chain_len: usize,
}

impl FourierPlan {
    pub fn new(d: usize, u: u32, r: &Rational, spec: &SigmaSpec) -> Result<Self> {
        check_sigma(spec)?;
        if d == 0 || u == 0 {
            return invalid("deep Fourier needs d >= 1 and U >= 1");
        }
        if *r <= Rational::zero() || *r > Rational::one() {
            return invalid("deep Fourier supports 0 < r <= 1");
        }
        let k = d * (u as usize + 1);
        if k > MAX_K {
            return Err(Error::Precision(format!("K = {k} exceeds the cap {MAX_K}")));
        }
        let sched = make_schedule(k, spec)?;
        let r_bits = (r * int(u as i64)).ceil().to_integer().to_u32().unwrap();
        let need = int(8) / &sched.l[k - 1];
        let mut e = 0i64;
        while pow2(e) < need {
            e += 1;
        }
        let chain_len = (1usize << d) * (r_bits as usize + 1);
        Ok(FourierPlan { d, u, m: 1 << u, k, r_bits, sched, seed_gain: pow2(e), chain_len })
    }

    pub fn eval_bits(&self) -> u32 {
        seed_precision(self.chain_len, &self.seed_gain) + 64
    }

    /// Cell shift for filter index bit q_s.
    fn shift(&self, q: i64) -> Rational {
        let s = rat(1, 4 * self.m as i64);
        if q == 0 {
            s
        } else {
            -s
        }
    }
}

/// The encoder code index of cell j (cells [j/M, (j+1)/M) of the shifted coordinate), levels 0..=U.
fn cell_code(j: i64, u: u32) -> usize {
    let mut code = 0usize;
    for lvl in 0..=u {
        let f = j.div_euclid(1 << (u - lvl));
        let b = 1 - f.rem_euclid(2);
        code |= (b as usize) << lvl;
    }
    code
}

/// Target classifier weights for f, ordered by filter index q then value bit.
pub fn classifier_weights(f: &dyn FunctionOracle, plan: &FourierPlan, spec: &SigmaSpec) -> Result<Vec<Rational>> {
    let d = plan.d;
    let m = plan.m as i64;
    let per = plan.u as usize + 1;
    let scale = pow2(plan.r_bits as i64);
    let top: BigInt = BigInt::from(2) * scale.to_integer() - 1;
    let mut out = Vec::new();
    for q in all_tuples(2, d) {
        let shifts: Vec<Rational> = q.iter().map(|&qs| plan.shift(qs)).collect();
        let mut codes: Vec<Vec<bool>> = vec![vec![false; 1 << plan.k]; plan.r_bits as usize + 1];
        for js in all_tuples(m + 2, d) {
            let js: Vec<i64> = js.iter().map(|j| j - 1).collect();
            let mut center = Vec::with_capacity(d);
            let mut ok = true;
            for (c, &j) in js.iter().enumerate() {
                let lo = (rat(j, m) - &shifts[c]).max(Rational::zero());
                let hi = (rat(j + 1, m) - &shifts[c]).min(Rational::one());
                if lo >= hi {
                    ok = false;
                    break;
                }
                center.push((lo + hi) / int(2));
            }
            if !ok {
                continue;
            }
            let v = f.evaluate(&center)?;
            let c = ((v + int(1)) * &scale + rat(1, 2)).floor().to_integer().clamp(BigInt::zero(), top.clone());
            let mut idx = 0usize;
            for (coord, &j) in js.iter().enumerate() {
                idx |= cell_code(j, plan.u) << (coord * per);
            }
            for (kb, tab) in codes.iter_mut().enumerate() {
                tab[idx] = c.bit((plan.r_bits - kb as u32) as u64);
            }
        }
        for tab in codes {
            let asg = Assignment::new(plan.k, tab)?;
            let (w, _) = find_assignment_weight(&asg, spec, &plan.sched)?;
            out.push(w.to_rational());
        }
    }
    Ok(out)
}

/// The f-independent network; the seed unit carries `seed` as its bias.
pub fn fourier_skeleton(plan: &FourierPlan, opts: &FourierOptions, seed: &Rational) -> Result<Network> {
    let spec = &opts.sigma;
    let d = plan.d;
    let gain = opts.gain.clone().unwrap_or_else(|| int(8 * plan.m as i64));
    let mut g = GraphBuilder::new(d);
    let xs = g.inputs();
    let seed_lin = g.raw_unit(Activation::Identity, vec![], ExactScalar::Rational(seed.clone()));
    let seed_id = seed_lin.as_node().unwrap();
    let mut weights = vec![seed_lin];
    for _ in 1..plan.chain_len {
        let prev = weights.last().unwrap().clone();
        weights.push(sigma_unit(&mut g, spec, &prev, &plan.seed_gain));
    }
    let filter_eps = pow2(-(plan.r_bits as i64) - 4 - d as i64);
    let psis = unity_filters(&mut g, spec, &xs, plan.m, &opts.filter_gain, &filter_eps);
    let sharp = int(16);
    let mut total = Lin::zero();
    let mut widx = 0;
    for (qi, q) in all_tuples(2, d).iter().enumerate() {
        let shifted: Vec<Lin> = xs.iter().zip(q).map(|(x, &qs)| x.plus_const(&plan.shift(qs))).collect();
        let thetas = encoder_bits(&mut g, spec, &shifted, 0..=plan.u, plan.u, &gain);
        let bits: Vec<Lin> = thetas.iter().map(|t| t.plus_const(&int(1)).scaled(&rat(1, 2))).collect();
        let psi = &psis[qi];
        let mut acc = psi.scaled(&int(-1));
        for kb in 0..=plan.r_bits {
            let mut v = weights[widx].clone();
            widx += 1;
            for i in (0..plan.k).rev() {
                v = branch_gate(&mut g, spec, &v, &bits[i], &plan.sched.a[i]);
            }
            let hi = g.relu(&v.scaled(&sharp));
            let lo = g.relu(&v.scaled(&sharp).plus_const(&int(-1)));
            let bit = hi.minus(&lo);
            let cut = g.relu(&psi.minus(&bit));
            acc = acc.plus(&psi.minus(&cut).scaled(&pow2(-(kb as i64))));
        }
        total = total.plus(&acc);
    }
    let kind = match spec.kind {
        SigmaKind::Sine => "sine",
        _ => "triangle",
    };
    let meta = meta_of(&[
        ("variant", "deep_fourier".into()),
        ("d", d.to_string()),
        ("U", plan.u.to_string()),
        ("M", plan.m.to_string()),
        ("K", plan.k.to_string()),
        ("R", plan.r_bits.to_string()),
        ("classifiers", plan.chain_len.to_string()),
        ("gain", gain.to_string()),
        ("filter_gain", opts.filter_gain.to_string()),
        ("seed_gain", plan.seed_gain.to_string()),
        ("seed_unit", seed_id.to_string()),
        ("sigma", kind.into()),
        ("enc_weights", "1".into()),
        ("eval_bits", plan.eval_bits().to_string()),
    ]);
    Ok(g.finish(&[total], meta))
}

/// Single-seed deep network for f at lookup depth U.
pub fn build_deep_fourier(f: &dyn FunctionOracle, u: u32, opts: &FourierOptions) -> Result<Network> {
    let plan = FourierPlan::new(f.dim(), u, f.smoothness(), &opts.sigma)?;
    let targets = classifier_weights(f, &plan, &opts.sigma)?;
    let seed = find_seed_weight(&targets, &plan.seed_gain, &opts.sigma)?;
    let chain = seed_chain(&seed, &plan.seed_gain, &opts.sigma, targets.len(), plan.eval_bits());
    let tol = &plan.sched.l[plan.k - 1] / int(8);
    for (w, t) in chain.iter().zip(&targets) {
        if (w - t).abs() > tol {
            return Err(Error::Precision("seed chain drifted off a classifier interval".into()));
        }
    }
    fourier_skeleton(&plan, opts, &seed)
}

/// Largest U whose network has at most `w` weights (at least 1).
pub fn fourier_depth_for_weights(w: usize, d: usize, r: &Rational, opts: &FourierOptions) -> Result<u32> {
    let mut best = 1;
    for u in 1..=30u32 {
        let plan = match FourierPlan::new(d, u, r, &opts.sigma) {
            Ok(p) => p,
            Err(_) => break,
        };
        let net = fourier_skeleton(&plan, opts, &Rational::zero())?;
        if net.count_params().w > w {
            break;
        }
        best = u;
    }
    Ok(best)
}

/// The single f-dependent weight of a deep Fourier network.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedArtifact {
    pub unit: usize,
    pub value: ExactScalar,
}

fn seed_unit_of(net: &Network) -> Result<usize> {
    let id: usize = net
        .meta
        .get("seed_unit")
        .ok_or_else(|| Error::Invalid("network has no seed unit".into()))?
        .parse()
        .map_err(|_| Error::Parse("seed_unit".into()))?;
    if id < net.input_dim || id >= net.num_nodes() {
        return invalid("seed unit out of range");
    }
    Ok(id)
}

pub fn export_seed(net: &Network) -> Result<SeedArtifact> {
    let id = seed_unit_of(net)?;
    Ok(SeedArtifact { unit: id, value: net.unit(id).bias.clone() })
}

pub fn strip_seed(net: &Network) -> Result<Network> {
    let id = seed_unit_of(net)?;
    let mut out = net.clone();
    out.units[id - net.input_dim].bias = ExactScalar::Rational(Rational::zero());
    Ok(out)
}

pub fn attach_seed(skeleton: &Network, seed: &SeedArtifact) -> Result<Network> {
    let id = seed_unit_of(skeleton)?;
    if id != seed.unit {
        return invalid(format!("seed is for unit {}, skeleton has {id}", seed.unit));
    }
    let mut out = skeleton.clone();
    out.units[id - skeleton.input_dim].bias = seed.value.clone();
    Ok(out)
}

fn hex(n: &BigInt) -> String {
    if n.is_negative() {
        format!("-{:x}", -n)
    } else {
        format!("{n:x}")
    }
}

fn unhex(s: &str) -> Result<BigInt> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = BigInt::parse_bytes(body.as_bytes(), 16).ok_or_else(|| Error::Parse(format!("bad hex {s}")))?;
    Ok(if neg { -v } else { v })
}

pub fn seed_to_json(seed: &SeedArtifact) -> String {
    let v = match &seed.value {
        ExactScalar::Rational(r) => json!({"unit": seed.unit, "num": hex(r.numer()), "den": hex(r.denom())}),
        ExactScalar::BigFloat(b) => {
            let (m, e) = b.to_hex_parts();
            json!({"unit": seed.unit, "mant": m, "exp": e, "bits": b.precision()})
        }
    };
    serde_json::to_string_pretty(&v).unwrap()
}

pub fn seed_from_json(s: &str) -> Result<SeedArtifact> {
    let v: Value = serde_json::from_str(s)?;
    let unit = v["unit"].as_u64().ok_or_else(|| Error::Parse("seed unit".into()))? as usize;
    let field = |k: &str| v[k].as_str().ok_or_else(|| Error::Parse(format!("seed field {k}")));
    let value = if v.get("num").is_some() {
        let den = unhex(field("den")?)?;
        if den.is_zero() {
            return Err(Error::Parse("zero denominator".into()));
        }
        ExactScalar::Rational(Rational::new(unhex(field("num")?)?, den))
    } else {
        let exp = v["exp"].as_i64().ok_or_else(|| Error::Parse("seed exp".into()))?;
        let bits = v["bits"].as_u64().ok_or_else(|| Error::Parse("seed bits".into()))? as u32;
        ExactScalar::BigFloat(BigFloat::from_hex_parts(field("mant")?, exp, bits)?)
    };
    Ok(SeedArtifact { unit, value })
}

/// Whether x is within the parity ramp of any encoder gate (either cell shift).
pub fn in_guard_zone(x: &[Rational], m: u64, gain: &Rational) -> bool {
    let radius = parity_guard(gain, &int(m as i64));
    let mi = int(m as i64);
    x.iter().any(|xc| {
        [rat(1, 4 * m as i64), rat(-1, 4 * m as i64)].iter().any(|s| {
            let y = (xc + s) * &mi;
            let dist = (&y - y.round()).abs() / &mi;
            dist < radius
        })
    })
}
