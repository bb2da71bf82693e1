//! End-to-end constructors: shallow Taylor networks, deep networks with encoded
//! coefficients, fixed-width layered networks and polynomial-activation analogues.

mod fixed;
mod poly;

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

pub use fixed::{build_fixed_width, fixed_scales, is_strictly_layered, FIXED_EXTRA_CHANNELS};
pub use poly::{
    approximate_relu_poly, build_bit_reader, build_poly_activation, build_u_iterate, find_poly_interval,
    find_seed_interval, orbit_step, poly_relu, read_orbit_bits, selection_iters, sign_iters_for, u_iterate_value,
    v_map, PolyOptions,
};

use crate::codec::{decode_cube, decode_exprs, encode_cube, taylor_table, CodecParams, EncodingWeight, CODE_BASE};
use crate::error::{invalid, Result};
use crate::fourier::{build_deep_fourier, fourier_depth_for_weights, FourierOptions};
use crate::gadgets::product;
use crate::net::{GraphBuilder, Lin, Meta, Network, SigmaSpec};
use crate::oracle::{factorial, multi_indices, taylor_order, FunctionOracle, MultiIndex};
use crate::partition::{all_tuples, subgrid_knots, GridIndex, SpikeBank};
use crate::scalar::{int, pow_bounds, rat_pow, rat_to_f64, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Shallow,
    DeepPhase,
    FixedWidth,
    PolyActivation,
    DeepFourier,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Shallow => "shallow",
            Variant::DeepPhase => "deep_phase",
            Variant::FixedWidth => "fixed_width",
            Variant::PolyActivation => "poly_activation",
            Variant::DeepFourier => "deep_fourier",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shallow" => Ok(Variant::Shallow),
            "deep_phase" | "deep" => Ok(Variant::DeepPhase),
            "fixed_width" | "fixed" => Ok(Variant::FixedWidth),
            "poly_activation" | "poly" => Ok(Variant::PolyActivation),
            "deep_fourier" | "fourier" => Ok(Variant::DeepFourier),
            _ => invalid(format!("unknown variant {s}")),
        }
    }
}

/// How large to make the network.
#[derive(Clone, Debug, PartialEq)]
pub enum Budget {
    /// Requested parameter count; grid sizes are derived and rounded.
    Weights(u64),
    /// Grid scale directly: M for shallow, N for deep and polynomial variants.
    Scale(i64),
    /// Target accuracy (fixed width).
    Accuracy(Rational),
}

pub struct BuildRequest<'a> {
    pub f: &'a dyn FunctionOracle,
    pub variant: Variant,
    /// Target rate for the deep and polynomial variants.
    pub p: Option<Rational>,
    pub budget: Budget,
    /// Periodic activation for the deep Fourier variant (triangle when unset).
    pub sigma: Option<SigmaSpec>,
}

pub fn build(req: &BuildRequest) -> Result<Network> {
    let d = req.f.dim();
    let need_p = || req.p.clone().ok_or_else(|| crate::Error::Invalid("this variant needs a target rate p".into()));
    match req.variant {
        Variant::Shallow => {
            let m = match &req.budget {
                Budget::Weights(w) => int_root(*w, d),
                Budget::Scale(m) => *m,
                Budget::Accuracy(e) => shallow_scale_for(e, req.f.smoothness()),
            };
            build_shallow(req.f, m)
        }
        Variant::DeepPhase => {
            let n = match &req.budget {
                Budget::Weights(w) => int_root(*w, d),
                Budget::Scale(n) => *n,
                Budget::Accuracy(_) => return invalid("deep_phase takes a weight budget or a scale"),
            };
            build_deep_phase(req.f, &need_p()?, n)
        }
        Variant::FixedWidth => match &req.budget {
            Budget::Accuracy(e) => build_fixed_width(req.f, e),
            _ => invalid("fixed_width takes an accuracy"),
        },
        Variant::PolyActivation => {
            let n = match &req.budget {
                Budget::Weights(w) => int_root(*w, d),
                Budget::Scale(n) => *n,
                Budget::Accuracy(_) => return invalid("poly_activation takes a weight budget or a scale"),
            };
            build_poly_activation(req.f, &need_p()?, n, &PolyOptions::default())
        }
        Variant::DeepFourier => {
            let mut opts = FourierOptions::default();
            if let Some(s) = &req.sigma {
                opts.sigma = s.clone();
            }
            let r = req.f.smoothness();
            let u = match &req.budget {
                Budget::Weights(w) => fourier_depth_for_weights(*w as usize, d, r, &opts)?,
                Budget::Scale(u) if *u >= 1 => *u as u32,
                Budget::Scale(_) => return invalid("deep_fourier needs U >= 1"),
                Budget::Accuracy(e) => fourier_depth_for(e, r),
            };
            build_deep_fourier(req.f, u, &opts)
        }
    }
}

/// Smallest U with 2 M^-r <= eps.
fn fourier_depth_for(eps: &Rational, r: &Rational) -> u32 {
    let need = (2.0 / rat_to_f64(eps)).log2() / rat_to_f64(r);
    (need.ceil().max(1.0)) as u32
}

/// floor(w^(1/d)).
pub fn int_root(w: u64, d: usize) -> i64 {
    let mut n = (w as f64).powf(1.0 / d as f64).round() as i64;
    while n > 0 && (n as f64).powi(d as i32) > w as f64 {
        n -= 1;
    }
    while ((n + 1) as f64).powi(d as i32) <= w as f64 {
        n += 1;
    }
    n
}

fn shallow_scale_for(eps: &Rational, r: &Rational) -> i64 {
    let e = rat_to_f64(eps);
    (e.powf(-1.0 / rat_to_f64(r)).ceil() as i64).max(1)
}

/// Realized (N, M) for the deep builders: M is N^(pd/r) rounded up to a multiple of N.
pub fn deep_scales(d: usize, r: &Rational, p: &Rational, n: i64, inclusive_top: bool) -> Result<(i64, i64)> {
    let lo = r / int(d as i64);
    let hi = int(2) * &lo;
    if *p <= lo || *p > hi || (!inclusive_top && *p == hi) {
        let top = if inclusive_top { "]" } else { ")" };
        return invalid(format!("p = {p} is outside (r/d, 2r/d{top} = ({lo}, {hi}{top}"));
    }
    if n < 1 {
        return invalid("infeasible budget: N < 1");
    }
    let e = rat_to_f64(&(p * int(d as i64) / r));
    let raw = (n as f64).powf(e);
    let near = raw.round();
    let target = if (raw - near).abs() < 1e-9 * near.max(1.0) { near as i64 } else { raw.ceil() as i64 };
    let m = ((target + n - 1) / n).max(1) * n;
    Ok((n, m))
}

/// Materialize expressions that would otherwise be copied into several consumers.
pub(crate) fn mat(g: &mut GraphBuilder, e: &Lin) -> Lin {
    if e.terms.len() <= 1 {
        e.clone()
    } else {
        g.identity(e)
    }
}

/// relu(v + Cb - C) - relu(-v + Cb - C): v when b = 1, 0 when b = 0 and |v| <= C.
fn select(g: &mut GraphBuilder, b: &Lin, v: &Lin, c: &Rational) -> Lin {
    let gate = b.scaled(c).plus_const(&-c.clone());
    let pos = g.relu(&v.plus(&gate));
    let neg = g.relu(&v.scaled(&-Rational::one()).plus(&gate));
    pos.minus(&neg)
}

/// One approximate Taylor sum Σ_k c_k/(k! M^|k|) u^k, with u = M(x - knot) in [-1,1]^d.
struct TaylorSum<'a> {
    kset: &'a [MultiIndex],
    m_scale: i64,
    eps: Rational,
    coef_bound: Rational,
}

impl TaylorSum<'_> {
    fn weight(&self, k: &[u32]) -> Rational {
        let tot: u32 = k.iter().sum();
        Rational::one() / (factorial(k) * rat_pow(&int(self.m_scale), tot))
    }

    /// Bound on |Σ_k c_k/(k! M^|k|) u^k| for |c_k| <= coef_bound, plus one for gadget slop.
    fn value_bound(&self) -> Rational {
        let s: Rational = self.kset.iter().map(|k| self.weight(k)).sum();
        &self.coef_bound * s + Rational::one()
    }

    fn emit(&self, g: &mut GraphBuilder, u: &[Lin], coeffs: &[Lin]) -> Lin {
        let two = int(2);
        let mut mono: BTreeMap<MultiIndex, Lin> = BTreeMap::new();
        let mut acc = Lin::zero();
        for (k, c) in self.kset.iter().zip(coeffs) {
            let tot: u32 = k.iter().sum();
            let m = if tot == 0 {
                acc = acc.plus(c);
                continue;
            } else if tot == 1 {
                let i = k.iter().position(|&v| v == 1).unwrap();
                u[i].clone()
            } else {
                let i = k.iter().position(|&v| v > 0).unwrap();
                let mut prev = k.clone();
                prev[i] -= 1;
                let a = mono[&prev].clone();
                let p = product(g, &a, &u[i], &self.eps, &two);
                mat(g, &p)
            };
            mono.insert(k.clone(), m.clone());
            // the weight shrinks the error, so the gadget may be coarser
            let w = self.weight(k);
            let eps_k = &self.eps / &w;
            let bound = if self.coef_bound > two { self.coef_bound.clone() } else { two.clone() };
            let t = product(g, c, &m, &eps_k, &bound);
            acc.add_scaled(&t, &w);
        }
        acc
    }
}

/// Per-gadget accuracy so the total assembly error stays below M^-r / 10.
fn gadget_eps(m_scale: i64, r: &Rational, d: usize, nk: usize, order: u32, coef_bound: &Rational, deep: bool) -> Rational {
    let target = pow_bounds(&int(m_scale), &-r.clone(), 64).0 / int(10);
    let filters = if deep { 2 * (d as i64 + 1) } else { d as i64 + 1 };
    let per_coef = Rational::one() + coef_bound * int(order.max(1) as i64);
    let count = int(filters) + int(nk as i64) * per_coef;
    target / count
}

fn max_abs<'a>(vals: impl Iterator<Item = &'a Rational>) -> Rational {
    vals.map(|v| v.abs()).fold(Rational::zero(), |a, b| if b > a { b } else { a })
}

fn residue_class(knots: &[GridIndex], s: &[i64]) -> Vec<usize> {
    (0..knots.len()).filter(|&i| knots[i].iter().zip(s).all(|(a, b)| a.rem_euclid(3) == *b)).collect()
}

pub(crate) fn finish_counted(g: GraphBuilder, out: &[Lin], mut meta: Meta) -> Network {
    let mut net = g.finish(out, Meta::new());
    let p = net.count_params();
    meta.insert("W".into(), p.w.to_string());
    meta.insert("L".into(), p.l.to_string());
    meta.insert("width".into(), p.width.to_string());
    net.meta = meta;
    net
}

fn base_meta(variant: Variant, f: &dyn FunctionOracle) -> Meta {
    let mut m = Meta::new();
    m.insert("variant".into(), variant.name().into());
    m.insert("fn".into(), f.id().into());
    m.insert("d".into(), f.dim().to_string());
    m.insert("r".into(), f.smoothness().to_string());
    m
}

/// Σ_m φ(Mx - m) P_m(x), computed as 3^d residue-class blocks that each evaluate one
/// Taylor sum whose coefficients are selected by constant interpolants.
pub fn build_shallow(f: &dyn FunctionOracle, m_scale: i64) -> Result<Network> {
    if m_scale < 1 {
        return invalid("infeasible budget: M < 1");
    }
    let d = f.dim();
    let r = f.smoothness().clone();
    let order = taylor_order(&r);
    let kset = multi_indices(d, order);
    let knots = all_tuples(m_scale + 1, d);
    let table = taylor_table(f, m_scale, &knots)?;
    let coef_bound = max_abs(table.entries.values()) + Rational::one();
    let eps = gadget_eps(m_scale, &r, d, kset.len(), order, &coef_bound, false);
    let ts = TaylorSum { kset: &kset, m_scale, eps: eps.clone(), coef_bound };

    let mut g = GraphBuilder::new(d);
    let x = g.inputs();
    let mut bank = SpikeBank::new(x.clone(), m_scale);
    let mut out = Lin::zero();
    let mut blocks = 0;
    for s in all_tuples(3, d) {
        let idx = residue_class(&knots, &s);
        if idx.is_empty() {
            continue;
        }
        let class: Vec<GridIndex> = idx.iter().map(|&i| knots[i].clone()).collect();
        let ones = vec![Rational::one(); class.len()];
        let phi = bank.interpolant(&mut g, &class, &ones);
        let phi = mat(&mut g, &phi);
        let mut u = Vec::with_capacity(d);
        for i in 0..d {
            let vals: Vec<Rational> = class.iter().map(|k| int(k[i])).collect();
            let j = bank.constant_interpolant(&mut g, &class, &vals);
            u.push(mat(&mut g, &x[i].scaled(&int(m_scale)).minus(&j)));
        }
        let mut coeffs = Vec::with_capacity(kset.len());
        for k in &kset {
            let vals: Vec<Rational> = class.iter().map(|m| table.get(m, k).unwrap().clone()).collect();
            let c = bank.constant_interpolant(&mut g, &class, &vals);
            coeffs.push(mat(&mut g, &c));
        }
        let p = ts.emit(&mut g, &u, &coeffs);
        let p = mat(&mut g, &p);
        out = out.plus(&product(&mut g, &phi, &p, &eps, &ts.value_bound()));
        blocks += 1;
    }
    let mut meta = base_meta(Variant::Shallow, f);
    meta.insert("M".into(), m_scale.to_string());
    meta.insert("N".into(), m_scale.to_string());
    meta.insert("taylor_blocks".into(), blocks.to_string());
    meta.insert("gadget_eps".into(), eps.to_string());
    meta.insert("gadget_slack".into(), (pow_bounds(&int(m_scale), &-r, 64).1 / int(10)).to_string());
    Ok(finish_counted(g, &[out], meta))
}

/// The filters w_q = Σ_{n in N_q} φ(Nx - n), one output per q in lexicographic order.
pub fn build_subgrid_filters(n_scale: i64, d: usize) -> Result<Network> {
    if n_scale < 1 || d == 0 {
        return invalid("filters need N >= 1 and d >= 1");
    }
    let mut g = GraphBuilder::new(d);
    let mut bank = SpikeBank::new(g.inputs(), n_scale);
    let mut outs = Vec::new();
    for q in all_tuples(3, d) {
        let knots = subgrid_knots(&q, n_scale);
        let ones = vec![Rational::one(); knots.len()];
        outs.push(bank.interpolant(&mut g, &knots, &ones));
    }
    let mut meta = Meta::new();
    meta.insert("variant".into(), "subgrid_filters".into());
    meta.insert("N".into(), n_scale.to_string());
    Ok(g.finish(&outs, meta))
}

/// Everything the deep builders need about the encoded coefficients of f.
pub(crate) struct DeepPlan {
    pub codec: CodecParams,
    pub encodings: BTreeMap<GridIndex, EncodingWeight>,
    /// Bound on every legitimately decoded coefficient, plus one.
    pub coef_bound: Rational,
}

pub(crate) fn deep_plan(f: &dyn FunctionOracle, n: i64, m: i64) -> Result<DeepPlan> {
    let d = f.dim();
    let codec = CodecParams::new(d, f.smoothness(), n, m)?;
    let ratio = codec.ratio();
    let region: Vec<GridIndex> =
        all_tuples(m + 2 * ratio + 1, d).into_iter().map(|t| t.into_iter().map(|v| v - ratio).collect()).collect();
    let table = taylor_table(f, m, &region)?;
    let mut encodings = BTreeMap::new();
    let mut bound = Rational::zero();
    for nk in all_tuples(n + 1, d) {
        let enc = encode_cube(&table, &nk, &codec)?;
        let dec = decode_cube(&enc, &nk, &codec)?;
        let b = max_abs(dec.entries.values());
        if b > bound {
            bound = b;
        }
        encodings.insert(nk, enc);
    }
    Ok(DeepPlan { codec, encodings, coef_bound: bound + Rational::one() })
}

/// Mantissa bits that keep every extracted digit exact in big-float evaluation.
/// Each decode step scales the rounding error by the base and the ramp is base^-T/8 wide.
pub fn recommended_bits(stream_len: usize) -> u32 {
    6 * stream_len as u32 + 128
}

/// Deep construction: filters over the 3^d coarse subgrids, coarse knot and encoding-weight
/// selection by constant interpolants, sequential digit decoding of the coefficients along
/// the cube traversal, and 3^d fine residue blocks with one Taylor sum each.
pub fn build_deep_phase(f: &dyn FunctionOracle, p: &Rational, n_scale: i64) -> Result<Network> {
    let d = f.dim();
    let r = f.smoothness().clone();
    let (n, m) = deep_scales(d, &r, p, n_scale, true)?;
    let plan = deep_plan(f, n, m)?;
    let cp = &plan.codec;
    let ratio = cp.ratio();
    let order = cp.order;
    let nk = cp.kset.len();
    let eps = gadget_eps(m, &r, d, nk, order, &plan.coef_bound, true);
    let ts = TaylorSum { kset: &cp.kset, m_scale: m, eps: eps.clone(), coef_bound: plan.coef_bound.clone() };
    let pb = ts.value_bound();
    let fb = &pb + Rational::one();

    let mut g = GraphBuilder::new(d);
    let x = g.inputs();
    let mut nbank = SpikeBank::new(x.clone(), n);
    let mut out = Lin::zero();
    let mut blocks_per_q = Vec::new();
    for q in all_tuples(3, d) {
        let qk = subgrid_knots(&q, n);
        if qk.is_empty() {
            continue;
        }
        let ones = vec![Rational::one(); qk.len()];
        let wq = nbank.interpolant(&mut g, &qk, &ones);
        let wq = mat(&mut g, &wq);
        let mut z = Vec::with_capacity(d);
        for i in 0..d {
            let vals: Vec<Rational> = qk.iter().map(|k| int(k[i])).collect();
            let nq = nbank.constant_interpolant(&mut g, &qk, &vals);
            z.push(mat(&mut g, &x[i].scaled(&int(m)).minus(&nq.scaled(&int(ratio)))));
        }
        let weights: Vec<Vec<Rational>> = qk.iter().map(|k| plan.encodings[k].weights()).collect();
        let mut e = Vec::with_capacity(2 * nk);
        for j in 0..2 * nk {
            let vals: Vec<Rational> = weights.iter().map(|w| w[j].clone()).collect();
            let ej = nbank.constant_interpolant(&mut g, &qk, &vals);
            e.push(g.identity(&ej));
        }
        let rows = decode_exprs(&mut g, &e, cp)?;
        let mut rbank = SpikeBank::new(z.clone(), 1).with_range(-ratio, ratio);
        let mut fq = Lin::zero();
        let mut blocks = 0;
        for s in all_tuples(3, d) {
            let idx = residue_class(&cp.offsets, &s);
            if idx.is_empty() {
                continue;
            }
            let class: Vec<GridIndex> = idx.iter().map(|&t| cp.offsets[t].clone()).collect();
            let ones = vec![Rational::one(); class.len()];
            let phi = rbank.interpolant(&mut g, &class, &ones);
            let phi = mat(&mut g, &phi);
            let mut u = Vec::with_capacity(d);
            for i in 0..d {
                let vals: Vec<Rational> = class.iter().map(|k| int(k[i])).collect();
                let j = rbank.constant_interpolant(&mut g, &class, &vals);
                u.push(mat(&mut g, &z[i].minus(&j)));
            }
            let mut coeffs = vec![Lin::zero(); nk];
            for &t in &idx {
                let sel = rbank.constant_interpolant(&mut g, &[cp.offsets[t].clone()], &[Rational::one()]);
                let sel = mat(&mut g, &sel);
                for (ki, c) in coeffs.iter_mut().enumerate() {
                    let v = select(&mut g, &sel, &rows[t][ki], &plan.coef_bound);
                    *c = c.plus(&v);
                }
            }
            let coeffs: Vec<Lin> = coeffs.iter().map(|c| mat(&mut g, c)).collect();
            let p = ts.emit(&mut g, &u, &coeffs);
            let p = mat(&mut g, &p);
            fq = fq.plus(&product(&mut g, &phi, &p, &eps, &pb));
            blocks += 1;
        }
        blocks_per_q.push(blocks);
        let fq = mat(&mut g, &fq);
        out = out.plus(&product(&mut g, &wq, &fq, &eps, &fb));
    }
    let stream_len = cp.traversal_len() - 1;
    let mut meta = base_meta(Variant::DeepPhase, f);
    meta.insert("p".into(), p.to_string());
    meta.insert("N".into(), n.to_string());
    meta.insert("M".into(), m.to_string());
    meta.insert("taylor_blocks_per_q".into(), blocks_per_q.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","));
    meta.insert("enc_weights".into(), (plan.encodings.len() * 2 * nk).to_string());
    meta.insert("stream_len".into(), stream_len.to_string());
    meta.insert("bits_per_enc".into(), format!("{:.3}", stream_len as f64 * (CODE_BASE as f64).log2()));
    meta.insert("eval_bits".into(), recommended_bits(stream_len).to_string());
    meta.insert("gadget_eps".into(), eps.to_string());
    meta.insert("gadget_slack".into(), (pow_bounds(&int(m), &-r, 64).1 / int(10)).to_string());
    Ok(finish_counted(g, &[out], meta))
}

/// Mantissa bits a built network asks for (recorded by the deep builders), else `default`.
pub fn eval_bits_of(net: &Network, default: u32) -> u32 {
    net.meta.get("eval_bits").and_then(|v| v.parse().ok()).unwrap_or(default).max(default)
}
