//! Strictly layered ReLU networks of width 2d + 10.
//!
//! Every hidden layer holds exactly one unit per channel and reads only the layer before it.
//! Channel layout (0-based): inputs `0..d`, accumulator `d`, encoding carrier `d+1`, filter
//! `d+2`, per-subgrid sum `d+3`, Taylor sum `d+4`, monomial `d+5`, four scratch channels
//! `d+6..d+10` shared by spikes, bit decoding and products, relative coordinates `d+10..2d+10`.
//! Signed quantities ride on constant offsets so that relu passes them through unchanged.

use num_traits::{One, Zero};

use super::{base_meta, finish_counted, gadget_eps, max_abs, Variant};
use crate::codec::taylor_table;
use crate::error::{invalid, Result};
use crate::gadgets::{default_ramp, encode_digits, square_levels, DigitStream};
use crate::net::{Activation, GraphBuilder, Lin, Network};
use crate::oracle::{factorial, multi_indices, taylor_order, FunctionOracle};
use crate::partition::{all_tuples, patch_offsets, subgrid_knots, GridIndex};
use crate::scalar::{int, pow2, pow_bounds, rat, rat_pow, rat_to_f64, ExactScalar, Rational};

/// Channels beyond the 2d carrying inputs and relative coordinates.
pub const FIXED_EXTRA_CHANNELS: usize = 10;

/// (N, M) for accuracy ε: N = ε^(-1/2r) rounded down, M = ε^(-1/r) rounded up to a multiple of N.
pub fn fixed_scales(r: &Rational, eps: &Rational) -> Result<(i64, i64)> {
    if *eps <= Rational::zero() || *eps >= Rational::one() {
        return invalid("ε must lie in (0,1)");
    }
    let l = -rat_to_f64(eps).log2() / rat_to_f64(r);
    let snap = |v: f64, up: bool| -> i64 {
        let near = v.round();
        if (v - near).abs() < 1e-9 * near.max(1.0) {
            near as i64
        } else if up {
            v.ceil() as i64
        } else {
            v.floor() as i64
        }
    };
    let n = snap(2f64.powf(l / 2.0), false).max(1);
    let target = snap(2f64.powf(l), true).max(1);
    let m = ((target + n - 1) / n) * n;
    Ok((n, m))
}

struct Lanes {
    g: GraphBuilder,
    nodes: Vec<usize>,
    off: Vec<Rational>,
}

impl Lanes {
    fn start(d: usize, off: Vec<Rational>) -> Self {
        let mut g = GraphBuilder::new(d);
        let mut nodes = Vec::with_capacity(off.len());
        for (ch, o) in off.iter().enumerate() {
            let id = if ch < d {
                g.relu(&g.input(ch).plus_const(o))
            } else {
                g.raw_unit(Activation::Relu, vec![(0, zero_weight())], ExactScalar::Rational(o.clone()))
            };
            nodes.push(id.as_node().unwrap());
        }
        Lanes { g, nodes, off }
    }

    /// Channel-space expression to node-space expression over the current layer.
    fn at(&self, e: &Lin) -> Lin {
        let mut out = Lin::constant(e.c.clone());
        for (ch, w) in &e.terms {
            out.add_scaled(&Lin::node(self.nodes[*ch]).plus_const(&-self.off[*ch].clone()), w);
        }
        out
    }

    /// One layer: channels in `set` take the given value, all others are carried.
    fn step(&mut self, set: &[(usize, Lin)]) {
        let mut next = Vec::with_capacity(self.nodes.len());
        for ch in 0..self.nodes.len() {
            let pre = match set.iter().rev().find(|(c, _)| *c == ch) {
                Some((_, e)) => self.at(e).plus_const(&self.off[ch]),
                None => Lin::node(self.nodes[ch]),
            };
            let id = if pre.terms.is_empty() {
                // keep the unit in this layer with a zero-weight link to its predecessor
                self.g.raw_unit(Activation::Relu, vec![(self.nodes[ch], zero_weight())], ExactScalar::Rational(pre.c))
            } else {
                self.g.relu(&pre)
            };
            next.push(id.as_node().unwrap());
        }
        self.nodes = next;
    }

    /// Spike value φ(y) left in scratch channel `s0`, by running maxima of y and -y.
    fn spike(&mut self, s0: usize, y: &[Lin]) {
        let (ap, dp, an, dn) = (s0, s0 + 1, s0 + 2, s0 + 3);
        let c = Lin::node;
        self.step(&[(ap, y[0].clone()), (dp, Lin::zero()), (an, y[0].scaled(&int(-1))), (dn, Lin::zero())]);
        for yj in &y[1..] {
            let mp = c(ap).plus(&c(dp));
            let mn = c(an).plus(&c(dn));
            self.step(&[(ap, mp.clone()), (dp, yj.minus(&mp)), (an, mn.clone()), (dn, yj.scaled(&int(-1)).minus(&mn))]);
        }
        let pre = Lin::constant(Rational::one()).minus(&c(ap)).minus(&c(dp)).minus(&c(an)).minus(&c(dn));
        self.step(&[(ap, pre)]);
    }

    /// dest += w * x * y through two sawtooth squares; x, y must satisfy |x|, |y| <= bound.
    /// With `reset` the destination starts from zero instead of its current value.
    #[allow(clippy::too_many_arguments)]
    fn product(&mut self, s0: usize, x: &Lin, y: &Lin, dest: usize, w: &Rational, bound: &Rational, levels: u32, reset: bool) {
        let (a, ah, b, bh) = (s0, s0 + 1, s0 + 2, s0 + 3);
        let c = Lin::node;
        let inv = Rational::one() / (int(2) * bound);
        let s = x.plus(y).scaled(&inv);
        let t = x.minus(y).scaled(&inv);
        let mut first = vec![(a, s.clone()), (ah, s.scaled(&int(-1))), (b, t.clone()), (bh, t.scaled(&int(-1)))];
        if reset {
            first.push((dest, Lin::zero()));
        }
        self.step(&first);
        let k = w * bound * bound;
        let half = rat(1, 2);
        let sa = c(a).plus(&c(ah));
        let sb = c(b).plus(&c(bh));
        let mut d = c(dest);
        d.add_scaled(&sa.minus(&sb), &k);
        self.step(&[
            (a, sa.clone()),
            (ah, sa.plus_const(&-half.clone())),
            (b, sb.clone()),
            (bh, sb.plus_const(&-half.clone())),
            (dest, d),
        ]);
        let mut scale = Rational::one();
        for lvl in 1..=levels {
            scale /= int(4);
            let ga = c(a).scaled(&int(2)).minus(&c(ah).scaled(&int(4)));
            let gb = c(b).scaled(&int(2)).minus(&c(bh).scaled(&int(4)));
            let mut d = c(dest);
            d.add_scaled(&ga.minus(&gb), &-(&k * &scale));
            let mut set = vec![(dest, d)];
            if lvl < levels {
                set.push((a, ga.clone()));
                set.push((ah, ga.plus_const(&-half.clone())));
                set.push((b, gb.clone()));
                set.push((bh, gb.plus_const(&-half.clone())));
            }
            self.step(&set);
        }
    }
}

fn zero_weight() -> ExactScalar {
    ExactScalar::Rational(Rational::zero())
}

fn pow2_at_least(v: &Rational) -> Rational {
    let mut p = Rational::one();
    while p < *v {
        p *= int(2);
    }
    p
}

fn bits_for(v: &Rational) -> u32 {
    rat_to_f64(v).log2().ceil().max(1.0) as u32
}

/// Fixed-width deep network: per coarse subgrid, select the coarse knot and its encoding
/// weight, then walk every fine knot of the cube, decoding its coefficients afresh bit by bit.
pub fn build_fixed_width(f: &dyn FunctionOracle, eps: &Rational) -> Result<Network> {
    let d = f.dim();
    let r = f.smoothness().clone();
    let (n, m) = fixed_scales(&r, eps)?;
    let ratio = m / n;
    let order = taylor_order(&r);
    let kset = multi_indices(d, order);
    let nk = kset.len();
    let region: Vec<GridIndex> =
        all_tuples(m + 2 * ratio + 1, d).into_iter().map(|t| t.into_iter().map(|v| v - ratio).collect()).collect();
    let table = taylor_table(f, m, &region)?;
    let cb = pow2_at_least(&(max_abs(table.entries.values()) + int(1))).max(int(2));
    let target = pow_bounds(&int(m), &-r.clone(), 64).0 / int(10);
    let kbits = bits_for(&(int(2) * &cb * int(nk as i64) / &target));
    let weights: Vec<Rational> =
        kset.iter().map(|k| Rational::one() / (factorial(k) * rat_pow(&int(m), k.iter().sum()))).collect();
    let offsets: Vec<GridIndex> =
        all_tuples(2 * ratio + 1, d).into_iter().map(|t| t.into_iter().map(|v| v - ratio).collect()).collect();

    // one binary stream per coarse knot: for each fine knot, for each k, kbits of (a + cb) / 2cb
    let scale = pow2(kbits as i64);
    let mut enc = std::collections::BTreeMap::new();
    let mut total = 0;
    for nk_ in all_tuples(n + 1, d) {
        let mut bits = Vec::new();
        for o in &offsets {
            let knot: GridIndex = nk_.iter().zip(o).map(|(a, b)| a * ratio + b).collect();
            for k in &kset {
                let a = table.get(&knot, k).unwrap();
                let code = ((a + &cb) / (int(2) * &cb) * &scale).floor().to_integer();
                let code: i64 = num_traits::ToPrimitive::to_i64(&code).unwrap_or(0).clamp(0, (1i64 << kbits) - 1);
                for j in (0..kbits).rev() {
                    bits.push(((code >> j) & 1) as u32);
                }
            }
        }
        total = bits.len();
        enc.insert(nk_, encode_digits(&DigitStream::new(2, bits)?));
    }
    let delta = default_ramp(2, total);
    let inv_delta = Rational::one() / &delta;

    let eps_g = gadget_eps(m, &r, d, nk, order, &cb, true);
    let min_levels = bits_for(&int(m)) + 8;
    let levels = |w: &Rational, b: &Rational| square_levels(&(&eps_g / (w * int(2) * b * b))).max(min_levels);
    let pb = pow2_at_least(&(&cb * weights.iter().sum::<Rational>() + int(1)));
    let fb = pow2_at_least(&(&pb + int(1)));
    let cbound = cb.clone();

    // channels
    let acc = d;
    let e_ch = d + 1;
    let wq = d + 2;
    let fq = d + 3;
    let p_ch = d + 4;
    let mo = d + 5;
    let s0 = d + 6;
    let z0 = d + 10;
    let width = 2 * d + FIXED_EXTRA_CHANNELS;
    let mut off = vec![Rational::zero(); width];
    for o in off.iter_mut().take(d) {
        *o = int(1);
    }
    off[acc] = &fb + &fb * &fb + int(1);
    off[fq] = int(2) * &pb + &pb * &pb + int(1);
    off[p_ch] = &pb + &cbound * &cbound + int(1);
    off[mo] = int(6);
    for o in off.iter_mut().skip(z0) {
        *o = int(m + ratio + 2);
    }
    let mut ln = Lanes::start(d, off);
    let c = Lin::node;
    let two = int(2);

    for q in all_tuples(3, d) {
        let qk = subgrid_knots(&q, n);
        if qk.is_empty() {
            continue;
        }
        let mut reset = vec![(wq, Lin::zero()), (fq, Lin::zero()), (e_ch, Lin::zero())];
        reset.extend((0..d).map(|i| (z0 + i, Lin::zero())));
        ln.step(&reset);
        for owner in &qk {
            for o in patch_offsets(d) {
                let knot: GridIndex = owner.iter().zip(&o).map(|(a, b)| a + b).collect();
                if knot.iter().any(|&v| v < 0 || v > n) {
                    continue;
                }
                let y: Vec<Lin> = (0..d).map(|i| c(i).scaled(&int(n)).plus_const(&int(-knot[i]))).collect();
                ln.spike(s0, &y);
                let s = c(s0);
                let mut set = vec![(e_ch, c(e_ch).plus(&s.scaled(&enc[owner])))];
                if o.iter().all(|&v| v == 0) {
                    set.push((wq, c(wq).plus(&s)));
                }
                for i in 0..d {
                    if owner[i] != 0 {
                        set.push((z0 + i, c(z0 + i).plus(&s.scaled(&int(owner[i])))));
                    }
                }
                ln.step(&set);
            }
        }
        let rel: Vec<(usize, Lin)> =
            (0..d).map(|i| (z0 + i, c(i).scaled(&int(m)).minus(&c(z0 + i).scaled(&int(ratio))))).collect();
        ln.step(&rel);

        for knot in &offsets {
            let u: Vec<Lin> = (0..d).map(|i| c(z0 + i).plus_const(&int(-knot[i]))).collect();
            ln.step(&[(p_ch, Lin::zero())]);
            for (k, w) in kset.iter().zip(&weights) {
                let factors: Vec<usize> = (0..d).flat_map(|i| std::iter::repeat(i).take(k[i] as usize)).collect();
                if let Some((&first, rest)) = factors.split_first() {
                    ln.step(&[(mo, u[first].clone())]);
                    for &i in rest {
                        ln.product(s0, &c(mo), &u[i], mo, &Rational::one(), &two, levels(&Rational::one(), &two), true);
                    }
                }
                // fresh decode: coefficient bits accumulate in s0, ramps in s0+1, s0+2
                let prime = c(e_ch).scaled(&two).plus_const(&int(-1));
                ln.step(&[(s0, Lin::zero()), (s0 + 1, prime.clone()), (s0 + 2, prime.plus_const(&-delta.clone()))]);
                let mut place = Rational::one();
                for _ in 0..kbits {
                    place /= int(2);
                    let bit = c(s0 + 1).minus(&c(s0 + 2)).scaled(&inv_delta);
                    let rest = c(e_ch).scaled(&two).minus(&bit);
                    let nxt = rest.scaled(&two).plus_const(&int(-1));
                    ln.step(&[
                        (e_ch, rest),
                        (s0, c(s0).plus(&bit.scaled(&(&two * &cb * &place)))),
                        (s0 + 1, nxt.clone()),
                        (s0 + 2, nxt.plus_const(&-delta.clone())),
                    ]);
                }
                let coef = c(s0).plus_const(&-cb.clone());
                if factors.is_empty() {
                    ln.step(&[(p_ch, c(p_ch).plus(&coef.scaled(w)))]);
                } else {
                    ln.product(s0, &coef, &c(mo), p_ch, w, &cbound, levels(w, &cbound), false);
                }
            }
            ln.spike(s0, &u);
            ln.product(s0, &c(s0), &c(p_ch), fq, &Rational::one(), &pb, levels(&Rational::one(), &pb), false);
        }
        ln.product(s0, &c(wq), &c(fq), acc, &Rational::one(), &fb, levels(&Rational::one(), &fb), false);
    }
    let out = ln.at(&c(acc));
    let mut meta = base_meta(Variant::FixedWidth, f);
    meta.insert("eps".into(), eps.to_string());
    meta.insert("N".into(), n.to_string());
    meta.insert("M".into(), m.to_string());
    meta.insert("bits_per_coef".into(), kbits.to_string());
    meta.insert("enc_weights".into(), enc.len().to_string());
    meta.insert("stream_len".into(), total.to_string());
    meta.insert("bits_per_enc".into(), total.to_string());
    meta.insert("eval_bits".into(), (2 * total as u32 + 128).to_string());
    meta.insert("gadget_eps".into(), eps_g.to_string());
    meta.insert("channels".into(), width.to_string());
    Ok(finish_counted(ln.g, &[out], meta))
}

/// Checks that every unit reads only from the layer directly below it.
pub fn is_strictly_layered(net: &Network) -> bool {
    let layer = net.layer_of();
    net.units.iter().all(|u| u.incoming.iter().all(|(s, _)| layer[*s] + 1 == layer[u.id]))
}
