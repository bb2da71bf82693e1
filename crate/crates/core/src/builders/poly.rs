//! Networks whose only nonlinearities are fixed polynomials.
//!
//! The relu is replaced by ½(x u_n(x) + x) with u(x) = ½x(3 - x²), products are exact
//! (two squaring units), and bits are read from the orbit of a single seed weight.
//! The orbit uses w -> u(v(w)) with v(x) = 2 - 3x², which keeps [-1, 1] invariant, so
//! off-patch inputs stay bounded instead of escaping to infinity as they would under v alone.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use super::{base_meta, deep_plan, deep_scales, finish_counted, mat, Variant};
use crate::codec::decode_from_digits;
use crate::error::{invalid, Error, Result};
use crate::net::{meta_of, GraphBuilder, Lin, Network};
use crate::oracle::{factorial, FunctionOracle};
use crate::partition::{all_tuples, patch_expansion_in, subgrid_knots, GridIndex};
use crate::scalar::{int, pow2, pow_bounds, rat, rat_pow, rat_to_f64, BigFloat, Rational};

fn u_coeffs() -> Vec<Rational> {
    vec![Rational::zero(), rat(3, 2), Rational::zero(), rat(-1, 2)]
}

fn v_coeffs() -> Vec<Rational> {
    vec![int(2), Rational::zero(), int(-3)]
}

fn sq_coeffs() -> Vec<Rational> {
    vec![Rational::zero(), Rational::zero(), Rational::one()]
}

/// v(x) = 2 - 3x².
pub fn v_map(x: &Rational) -> Rational {
    int(2) - int(3) * x * x
}

fn u_value(x: &Rational) -> Rational {
    x * (int(3) - x * x) / int(2)
}

/// u applied n times.
pub fn u_iterate_value(x: &Rational, n: u32) -> Rational {
    (0..n).fold(x.clone(), |v, _| u_value(&v))
}

fn u_chain(g: &mut GraphBuilder, x: &Lin, n: u32) -> Lin {
    let c = u_coeffs();
    let mut cur = x.clone();
    for _ in 0..n {
        cur = g.poly(&c, &cur);
    }
    cur
}

pub fn build_u_iterate(n: u32) -> Result<Network> {
    let mut g = GraphBuilder::new(1);
    let x = g.input(0);
    let out = u_chain(&mut g, &x, n);
    Ok(g.finish(&[out], meta_of(&[("variant", "u_iterate".into()), ("n", n.to_string())])))
}

/// a·b = ((a+b)² - (a-b)²)/4, exactly.
fn pmul(g: &mut GraphBuilder, a: &Lin, b: &Lin) -> Lin {
    let sq = sq_coeffs();
    let p = g.poly(&sq, &a.plus(b));
    let m = g.poly(&sq, &a.minus(b));
    p.minus(&m).scaled(&rat(1, 4))
}

/// relu(x) ≈ S·½(y u_n(y) + y) with y = x/S; error at most S·2^(-n/2) for |x| <= S.
pub fn poly_relu(g: &mut GraphBuilder, x: &Lin, n: u32, scale: &Rational) -> Lin {
    let y = mat(g, &x.scaled(&(Rational::one() / scale)));
    let uy = u_chain(g, &y, n.max(1));
    let xy = pmul(g, &y, &uy);
    xy.plus(&y).scaled(&(scale / int(2)))
}

pub fn approximate_relu_poly(n: u32) -> Result<Network> {
    if n == 0 {
        return invalid("need at least one u iteration");
    }
    let mut g = GraphBuilder::new(1);
    let x = g.input(0);
    let out = poly_relu(&mut g, &x, n, &Rational::one());
    Ok(g.finish(&[out], meta_of(&[("variant", "poly_relu".into()), ("n", n.to_string())])))
}

/// Triangulation spike with every relu replaced by its polynomial surrogate.
fn poly_spike(g: &mut GraphBuilder, y: &[Lin], n: u32, s: &Rational) -> Lin {
    let mut mx = poly_relu(g, &y[0], n, s);
    let mut mn = y[0].minus(&mx);
    for yj in &y[1..] {
        mx = mat(g, &mx);
        mn = mat(g, &mn);
        mx = mx.plus(&poly_relu(g, &yj.minus(&mx), n, s));
        mn = mn.minus(&poly_relu(g, &mn.minus(yj), n, s));
    }
    let pre = Lin::constant(Rational::one()).minus(&mx).plus(&mn);
    poly_relu(g, &pre, n, s)
}

struct PolyBank {
    x: Vec<Lin>,
    scale: i64,
    lo: i64,
    hi: i64,
    iters: u32,
    bound: Rational,
    cache: BTreeMap<GridIndex, Lin>,
}

impl PolyBank {
    /// `reach` bounds |scale·x_i - knot_i| over the whole input cube.
    fn new(x: Vec<Lin>, scale: i64, lo: i64, hi: i64, iters: u32, reach: i64) -> Self {
        PolyBank { x, scale, lo, hi, iters, bound: int(2 * reach + 2), cache: BTreeMap::new() }
    }

    fn get(&mut self, g: &mut GraphBuilder, k: &[i64]) -> Lin {
        if let Some(v) = self.cache.get(k) {
            return v.clone();
        }
        let y: Vec<Lin> = self.x.iter().zip(k).map(|(xi, &ki)| xi.scaled(&int(self.scale)).plus_const(&int(-ki))).collect();
        let s = poly_spike(g, &y, self.iters, &self.bound);
        let s = mat(g, &s);
        self.cache.insert(k.to_vec(), s.clone());
        s
    }

    fn interpolant(&mut self, g: &mut GraphBuilder, knots: &[GridIndex], values: &[Rational]) -> Lin {
        let mut acc = Lin::zero();
        for (k, v) in knots.iter().zip(values) {
            if !v.is_zero() {
                let s = self.get(g, k);
                acc.add_scaled(&s, v);
            }
        }
        acc
    }

    fn constant_interpolant(&mut self, g: &mut GraphBuilder, knots: &[GridIndex], values: &[Rational]) -> Lin {
        let (ks, vs) = patch_expansion_in(knots, values, self.lo, self.hi);
        self.interpolant(g, &ks, &vs)
    }
}

fn sqrt_down(x: &Rational, prec: u32) -> Rational {
    let s = (x * rat_pow(&int(4), prec)).floor().to_integer();
    let r = if s.is_negative() { BigInt::zero() } else { s.sqrt() };
    Rational::new(r, BigInt::one() << prec)
}

fn sqrt_up(x: &Rational, prec: u32) -> Rational {
    let scaled = x * rat_pow(&int(4), prec);
    let s = scaled.ceil().to_integer();
    let r = s.sqrt();
    let exact = Rational::from_integer(&r * &r) == scaled;
    let r = if exact { r } else { r + 1 };
    Rational::new(r, BigInt::one() << prec)
}

/// Inner enclosure of {w in branch `bit` : v(w) in [a, c]}; bit 0 is the positive branch.
fn v_preimage(a: &Rational, c: &Rational, bit: u8, prec: u32) -> (Rational, Rational) {
    let near = sqrt_up(&((int(2) - c) / int(3)), prec);
    let far = sqrt_down(&((int(2) - a) / int(3)), prec);
    if bit == 0 {
        (near, far)
    } else {
        (-far, -near)
    }
}

/// Dyadic bracket lo <= u⁻¹(y) <= hi on [-1, 1] with hi - lo <= 2^-prec.
fn u_inverse(y: &Rational, prec: u32) -> (Rational, Rational) {
    let den = pow2(prec as i64);
    let at = |k: &BigInt| Rational::new(k.clone(), BigInt::one()) / &den;
    let mut lo = -(BigInt::one() << prec);
    let mut hi = BigInt::one() << prec;
    // invariant: u(lo) <= y <= u(hi)
    while &hi - &lo > BigInt::one() {
        let mid: BigInt = (&lo + &hi) >> 1;
        if u_value(&at(&mid)) <= *y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if u_value(&at(&lo)) == *y {
        hi = lo.clone();
    }
    (at(&lo), at(&hi))
}

fn check(lo: &Rational, hi: &Rational, step: usize) -> Result<()> {
    if lo > hi {
        return Err(Error::Enclosure(format!("empty preimage at step {step}; raise the working precision")));
    }
    Ok(())
}

/// Seeds w₁ whose v-orbit w_{k+1} = v(w_k) visits [1/2, 1] (bit 0) or [-1, -1/2] (bit 1)
/// in the prescribed order. Returns a rational inner enclosure of the exact interval.
pub fn find_poly_interval(bits: &[u8]) -> Result<(Rational, Rational)> {
    if bits.is_empty() {
        return invalid("need at least one bit");
    }
    let prec = 6 * bits.len() as u32 + 64;
    let target = |b: u8| if b == 0 { (rat(1, 2), Rational::one()) } else { (-Rational::one(), rat(-1, 2)) };
    let (mut lo, mut hi) = target(bits[bits.len() - 1]);
    for (step, &b) in bits.iter().enumerate().rev().skip(1) {
        let (a, c) = v_preimage(&lo, &hi, b, prec);
        let (tl, th) = target(b);
        lo = if a > tl { a } else { tl };
        hi = if c < th { c } else { th };
        check(&lo, &hi, step)?;
    }
    Ok((lo, hi))
}

/// One step of the bounded orbit map u(v(w)).
pub fn orbit_step(w: &Rational) -> Rational {
    u_value(&v_map(w))
}

/// Seed interval for the orbit read by the network: w₁ = u(seed), w_{k+1} = u(v(w_k)),
/// bit k is 1 exactly when w_k < 0, and every |w_k| >= 3/5.
pub fn find_seed_interval(bits: &[u8]) -> Result<(Rational, Rational)> {
    if bits.is_empty() {
        return invalid("need at least one bit");
    }
    let prec = 8 * bits.len() as u32 + 64;
    let last = bits[bits.len() - 1];
    let (mut lo, mut hi) = if last == 0 { (rat(3, 5), Rational::one()) } else { (-Rational::one(), rat(-3, 5)) };
    for (step, &b) in bits.iter().enumerate().rev().skip(1) {
        let a = u_inverse(&lo, prec).1;
        let c = u_inverse(&hi, prec).0;
        check(&a, &c, step)?;
        let (l, h) = v_preimage(&a, &c, b, prec);
        check(&l, &h, step)?;
        lo = l;
        hi = h;
    }
    let l = u_inverse(&lo, prec).1;
    let h = u_inverse(&hi, prec).0;
    check(&l, &h, 0)?;
    Ok((l, h))
}

/// Reference orbit reader in big-float arithmetic.
pub fn read_orbit_bits(seed: &Rational, n: usize, prec: u32) -> Vec<u8> {
    let three = BigFloat::from_int(3, prec);
    let two = BigFloat::from_int(2, prec);
    let half = BigFloat::from_rational(&rat(1, 2), prec);
    let u = |w: &BigFloat| w.mul(&three.sub(&w.mul(w))).mul(&half);
    let v = |w: &BigFloat| two.sub(&three.mul(&w.mul(w)));
    let mut w = u(&BigFloat::from_rational(seed, prec));
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        out.push(u8::from(w.is_negative()));
        if k + 1 < n {
            w = u(&v(&w));
        }
    }
    out
}

/// Network with input `seed` and outputs the orbit bits (1 - u_s(w_k))/2.
pub fn build_bit_reader(n: usize, sign_iters: u32) -> Result<Network> {
    if n == 0 {
        return invalid("need at least one bit");
    }
    let mut g = GraphBuilder::new(1);
    let seed = g.input(0);
    let bits = orbit_bits(&mut g, &seed, n, sign_iters);
    Ok(g.finish(&bits, meta_of(&[("variant", "orbit_reader".into())])))
}

fn orbit_bits(g: &mut GraphBuilder, seed: &Lin, n: usize, sign_iters: u32) -> Vec<Lin> {
    let (u, v) = (u_coeffs(), v_coeffs());
    let mut w = g.poly(&u, seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let s = u_chain(g, &w, sign_iters);
        out.push(Lin::constant(rat(1, 2)).minus(&s.scaled(&rat(1, 2))));
        if k + 1 < n {
            let t = g.poly(&v, &w);
            w = g.poly(&u, &t);
        }
    }
    out
}

/// Sign-sharpening depth that takes |z| >= 1/2 to within 2^-(4D+20) of ±1.
pub fn selection_iters(orbit_len: usize) -> u32 {
    2 * (((4 * orbit_len + 20) as f64).log2().ceil() as u32)
}

/// Sign-sharpening depth for reading orbit bits (|w| >= 3/5).
pub fn sign_iters_for(orbit_len: usize) -> u32 {
    2 * (((80 + orbit_len) as f64).log2().ceil() as u32)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolyOptions {
    /// u iterations per surrogate relu; derived from the accuracy target when unset.
    pub relu_iters: Option<u32>,
    /// u iterations when reading an orbit bit.
    pub sign_iters: Option<u32>,
}

fn digit_bits(d: u32) -> [u8; 3] {
    [((d >> 2) & 1) as u8, ((d >> 1) & 1) as u8, (d & 1) as u8]
}

fn midpoint(iv: &(Rational, Rational)) -> Rational {
    (&iv.0 + &iv.1) / int(2)
}

/// Polynomial analogue of the deep construction: surrogate-relu spikes and filters, orbit
/// decoding of the coefficient corrections (three bits per base-7 digit) from one seed per
/// stream, and sharpened patch indicators selecting the seed of the current coarse cube.
pub fn build_poly_activation(f: &dyn FunctionOracle, p: &Rational, n_scale: i64, opts: &PolyOptions) -> Result<Network> {
    let d = f.dim();
    let r = f.smoothness().clone();
    let (n, m) = deep_scales(d, &r, p, n_scale, false)?;
    let plan = deep_plan(f, n, m)?;
    let cp = &plan.codec;
    let ratio = cp.ratio();
    let nk = cp.kset.len();
    let t_len = cp.traversal_len() - 1;
    let orbit_len = 3 * t_len;

    let mut seeds: BTreeMap<GridIndex, Vec<Rational>> = BTreeMap::new();
    for (knot, enc) in &plan.encodings {
        let mut row = Vec::with_capacity(nk);
        for ds in &enc.digits {
            let bits: Vec<u8> = ds.iter().flat_map(|&dg| digit_bits(dg)).collect();
            row.push(midpoint(&find_seed_interval(&bits)?));
        }
        seeds.insert(knot.clone(), row);
    }

    let weights: Vec<Rational> =
        cp.kset.iter().map(|k| Rational::one() / (factorial(k) * rat_pow(&int(m), k.iter().sum()))).collect();
    let pb = &plan.coef_bound * weights.iter().sum::<Rational>() + int(1);
    let target = pow_bounds(&int(m), &-r.clone(), 64).0 / int(10);
    let count_n = (n + 1).pow(d as u32);
    let count_m = (2 * ratio + 1).pow(d as u32);
    let eps_s = &target / (int(8 * count_n * count_m) * &pb);
    let reach_m = m + ratio + 1;
    let spread = int((2 * d as i64 + 1) * (2 * reach_m + 2)) / &eps_s;
    let relu_iters = opts.relu_iters.unwrap_or(2 * rat_to_f64(&spread).log2().ceil() as u32);
    let sign_iters = opts.sign_iters.unwrap_or(sign_iters_for(orbit_len));
    let sel_iters = selection_iters(orbit_len);

    let mut g = GraphBuilder::new(d);
    let x = g.inputs();
    let mut nb = PolyBank::new(x.clone(), n, 0, n, relu_iters, n);
    let mut out = Lin::zero();
    for q in all_tuples(3, d) {
        let qk = subgrid_knots(&q, n);
        if qk.is_empty() {
            continue;
        }
        let ones = vec![Rational::one(); qk.len()];
        let wq = nb.interpolant(&mut g, &qk, &ones);
        let wq = mat(&mut g, &wq);
        let mut z = Vec::with_capacity(d);
        for i in 0..d {
            let vals: Vec<Rational> = qk.iter().map(|k| int(k[i])).collect();
            let nq = nb.constant_interpolant(&mut g, &qk, &vals);
            z.push(mat(&mut g, &x[i].scaled(&int(m)).minus(&nq.scaled(&int(ratio)))));
        }
        let mut sel = Vec::with_capacity(qk.len());
        for k in &qk {
            let psi = nb.constant_interpolant(&mut g, &[k.clone()], &[Rational::one()]);
            let zz = u_chain(&mut g, &psi.scaled(&int(2)).plus_const(&int(-1)), sel_iters);
            sel.push(zz.plus_const(&Rational::one()).scaled(&rat(1, 2)));
        }
        let mut digits = Vec::with_capacity(nk);
        let mut inits = Vec::with_capacity(nk);
        for ki in 0..nk {
            let mut zs = Lin::zero();
            let mut zi = Lin::zero();
            for (k, s) in qk.iter().zip(&sel) {
                zs.add_scaled(s, &seeds[k][ki]);
                zi.add_scaled(s, &plan.encodings[k].initials[ki]);
            }
            let zs = g.identity(&zs);
            inits.push(g.identity(&zi));
            let bits = orbit_bits(&mut g, &zs, orbit_len, sign_iters);
            let row: Vec<Lin> = bits
                .chunks(3)
                .map(|c| {
                    let mut dg = Lin::zero();
                    dg.add_scaled(&c[0], &int(4));
                    dg.add_scaled(&c[1], &int(2));
                    dg.add_scaled(&c[2], &int(1));
                    dg
                })
                .collect();
            digits.push(row);
        }
        let rows = decode_from_digits(&mut g, &digits, &inits, cp)?;
        let mut rb = PolyBank::new(z.clone(), 1, -ratio, ratio, relu_iters, reach_m);
        let mut fq = Lin::zero();
        for (t, off) in cp.offsets.iter().enumerate() {
            let phi = rb.get(&mut g, off);
            let u: Vec<Lin> = (0..d).map(|i| z[i].plus_const(&int(-off[i]))).collect();
            let mut pt = Lin::zero();
            for (ki, k) in cp.kset.iter().enumerate() {
                let mut term = rows[t][ki].clone();
                for (i, &e) in k.iter().enumerate() {
                    for _ in 0..e {
                        let prod = pmul(&mut g, &term, &u[i]);
                        term = mat(&mut g, &prod);
                    }
                }
                pt.add_scaled(&term, &weights[ki]);
            }
            let pt = mat(&mut g, &pt);
            fq = fq.plus(&pmul(&mut g, &phi, &pt));
        }
        let fq = mat(&mut g, &fq);
        out = out.plus(&pmul(&mut g, &wq, &fq));
    }
    let mut meta = base_meta(Variant::PolyActivation, f);
    meta.insert("p".into(), p.to_string());
    meta.insert("N".into(), n.to_string());
    meta.insert("M".into(), m.to_string());
    meta.insert("relu_iters".into(), relu_iters.to_string());
    meta.insert("sign_iters".into(), sign_iters.to_string());
    meta.insert("selection_iters".into(), sel_iters.to_string());
    meta.insert("stream_len".into(), orbit_len.to_string());
    meta.insert("enc_weights".into(), (plan.encodings.len() * 2 * nk).to_string());
    meta.insert("bits_per_enc".into(), orbit_len.to_string());
    meta.insert("eval_bits".into(), (8 * orbit_len as u32 + 128).to_string());
    Ok(finish_counted(g, &[out], meta))
}
