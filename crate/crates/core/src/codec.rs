//! Taylor coefficients on the fine grid, their base-7 correction encoding along a
//! snake traversal of each coarse cube, and the ReLU decoder network.

use std::collections::BTreeMap;

use num_traits::{Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::gadgets::{bit_extract, default_ramp, encode_digits, DigitStream};
use crate::net::{meta_of, GraphBuilder, Lin, Network};
use crate::oracle::{factorial, multi_indices, taylor_order, FunctionOracle, MultiIndex};
use crate::partition::GridIndex;
use crate::scalar::{int, leq_power, pow_bounds, rat_pow, Rational};
use crate::serialize::{rational_from_json, rational_to_json};

pub const CODE_BASE: u32 = 7;
pub const MAX_CORRECTION: i64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TaylorTable {
    pub m: i64,
    pub entries: BTreeMap<(GridIndex, MultiIndex), Rational>,
}

impl TaylorTable {
    pub fn get(&self, knot: &[i64], k: &[u32]) -> Option<&Rational> {
        self.entries.get(&(knot.to_vec(), k.to_vec()))
    }
}

/// D^k f(m/M) at every knot of `region` and every |k| <= ceil(r) - 1.
pub fn taylor_table(f: &dyn FunctionOracle, m: i64, region: &[GridIndex]) -> Result<TaylorTable> {
    let kset = multi_indices(f.dim(), taylor_order(f.smoothness()));
    let mut entries = BTreeMap::new();
    for knot in region {
        if knot.len() != f.dim() {
            return Err(Error::Dimension { expected: f.dim(), got: knot.len() });
        }
        let x: Vec<Rational> = knot.iter().map(|&v| Rational::new(v.into(), m.into())).collect();
        for k in &kset {
            entries.insert((knot.clone(), k.clone()), f.derivative(k, &x)?);
        }
    }
    Ok(TaylorTable { m, entries })
}

/// Offsets of [-radius, radius]^d in boustrophedon order; the last coordinate runs fastest.
pub fn snake_offsets(radius: i64, d: usize) -> Vec<GridIndex> {
    if d == 0 {
        return vec![vec![]];
    }
    let inner = snake_offsets(radius, d - 1);
    let mut out = Vec::with_capacity(inner.len() * (2 * radius + 1) as usize);
    for (row, v) in (-radius..=radius).enumerate() {
        let iter: Box<dyn Iterator<Item = &GridIndex>> =
            if row % 2 == 0 { Box::new(inner.iter()) } else { Box::new(inner.iter().rev()) };
        for t in iter {
            let mut p = vec![v];
            p.extend_from_slice(t);
            out.push(p);
        }
    }
    out
}

/// Fine knots of the coarse cube around N-knot `n`, in traversal order.
pub fn knot_traversal(n: &[i64], n_scale: i64, m_scale: i64) -> Result<Vec<GridIndex>> {
    if n_scale <= 0 || m_scale % n_scale != 0 {
        return invalid(format!("M={m_scale} is not a multiple of N={n_scale}"));
    }
    let ratio = m_scale / n_scale;
    Ok(snake_offsets(ratio, n.len())
        .into_iter()
        .map(|o| o.iter().zip(n).map(|(a, b)| a + b * ratio).collect())
        .collect())
}

/// The single coordinate in which two adjacent knots differ, with the step sign.
pub fn step_between(a: &[i64], b: &[i64]) -> Result<(usize, i64)> {
    let diffs: Vec<(usize, i64)> = a.iter().zip(b).enumerate().map(|(i, (x, y))| (i, y - x)).filter(|(_, v)| *v != 0).collect();
    match diffs.as_slice() {
        [(i, s)] if s.abs() == 1 => Ok((*i, *s)),
        _ => invalid(format!("knots {a:?} and {b:?} are not adjacent")),
    }
}

/// Weights c with ã_k = Σ_j c[k][j] â_j for a unit step of `sign` along `dir`.
pub fn transfer_matrix(kset: &[MultiIndex], dir: usize, sign: i64, m: i64, order: u32) -> Vec<Vec<(usize, Rational)>> {
    let pos: BTreeMap<&MultiIndex, usize> = kset.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let h = Rational::new(sign.into(), m.into());
    kset.iter()
        .map(|k| {
            let tot: u32 = k.iter().sum();
            let mut row = Vec::new();
            for n in 0..=(order - tot) {
                let mut kk = k.clone();
                kk[dir] += n;
                let c = rat_pow(&h, n) / factorial(&[n]);
                row.push((pos[&kk], c));
            }
            row
        })
        .collect()
}

/// ã at the neighbour one step of `sign` along `dir` from the knot carrying `ahat`.
pub fn transfer_coeffs(ahat: &[Rational], kset: &[MultiIndex], dir: usize, sign: i64, m: i64, order: u32) -> Vec<Rational> {
    transfer_matrix(kset, dir, sign, m, order)
        .iter()
        .map(|row| row.iter().fold(Rational::zero(), |acc, (j, c)| acc + c * &ahat[*j]))
        .collect()
}

/// Geometry shared by the encoder, the reference decoder and the decoder network.
#[derive(Clone, Debug)]
pub struct CodecParams {
    pub d: usize,
    pub r: Rational,
    pub n_scale: i64,
    pub m_scale: i64,
    pub order: u32,
    pub kset: Vec<MultiIndex>,
    /// certified lower bounds on M^(|k| - r)
    pub quanta: Vec<Rational>,
    pub offsets: Vec<GridIndex>,
}

impl CodecParams {
    pub fn new(d: usize, r: &Rational, n_scale: i64, m_scale: i64) -> Result<Self> {
        if d == 0 {
            return invalid("dimension must be positive");
        }
        if n_scale <= 0 || m_scale % n_scale != 0 {
            return invalid(format!("M={m_scale} is not a multiple of N={n_scale}"));
        }
        let order = taylor_order(r);
        let kset = multi_indices(d, order);
        let quanta = kset.iter().map(|k| quantum(m_scale, k, r)).collect();
        let offsets = snake_offsets(m_scale / n_scale, d);
        Ok(CodecParams { d, r: r.clone(), n_scale, m_scale, order, kset, quanta, offsets })
    }

    pub fn ratio(&self) -> i64 {
        self.m_scale / self.n_scale
    }

    pub fn traversal_len(&self) -> usize {
        self.offsets.len()
    }

    pub fn knots(&self, n: &[i64]) -> Vec<GridIndex> {
        let ratio = self.ratio();
        self.offsets.iter().map(|o| o.iter().zip(n).map(|(a, b)| a + b * ratio).collect()).collect()
    }

    fn steps(&self) -> Vec<(usize, i64)> {
        self.offsets.windows(2).map(|w| step_between(&w[0], &w[1]).expect("snake order is adjacent")).collect()
    }
}

pub fn quantum(m: i64, k: &[u32], r: &Rational) -> Rational {
    let tot: u32 = k.iter().sum();
    pow_bounds(&int(m), &(int(tot as i64) - r), 64).0
}

/// Correction digits (B + 3, base 7) per multi-index plus exact initial coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingWeight {
    pub traversal: String,
    pub kset: Vec<MultiIndex>,
    pub digits: Vec<Vec<u32>>,
    pub initials: Vec<Rational>,
}

impl EncodingWeight {
    /// Network inputs: the packed digit stream per k, then the initial coefficient per k.
    pub fn weights(&self) -> Vec<Rational> {
        let mut out: Vec<Rational> = self.digits.iter().map(|d| packed_stream(d)).collect();
        out.extend(self.initials.iter().cloned());
        out
    }

    pub fn corrections(&self) -> impl Iterator<Item = i64> + '_ {
        self.digits.iter().flatten().map(|&d| d as i64 - MAX_CORRECTION)
    }

    pub fn stream_len(&self) -> usize {
        self.digits.first().map(Vec::len).unwrap_or(0)
    }

    pub fn to_json(&self) -> Value {
        let streams: serde_json::Map<String, Value> = self
            .kset
            .iter()
            .zip(&self.digits)
            .map(|(k, ds)| (key_of(k), Value::String(ds.iter().map(|d| char::from(b'0' + *d as u8)).collect())))
            .collect();
        let initials: serde_json::Map<String, Value> =
            self.kset.iter().zip(&self.initials).map(|(k, v)| (key_of(k), rational_to_json(v))).collect();
        json!({"traversal": self.traversal, "base": CODE_BASE, "streams": streams, "initials": initials})
    }

    pub fn from_json(v: &Value, kset: &[MultiIndex]) -> Result<Self> {
        let perr = |m: &str| Error::Parse(m.to_string());
        let traversal = v.get("traversal").and_then(Value::as_str).ok_or_else(|| perr("traversal"))?.to_string();
        let streams = v.get("streams").and_then(Value::as_object).ok_or_else(|| perr("streams"))?;
        let inits = v.get("initials").and_then(Value::as_object).ok_or_else(|| perr("initials"))?;
        let mut digits = Vec::new();
        let mut initials = Vec::new();
        for k in kset {
            let key = key_of(k);
            let s = streams.get(&key).and_then(Value::as_str).ok_or_else(|| perr(&format!("stream {key}")))?;
            let ds: Vec<u32> = s
                .chars()
                .map(|c| c.to_digit(CODE_BASE).ok_or_else(|| perr(&format!("bad digit {c:?}"))))
                .collect::<Result<_>>()?;
            digits.push(ds);
            initials.push(rational_from_json(inits.get(&key).ok_or_else(|| perr(&format!("initial {key}")))?)?);
        }
        Ok(EncodingWeight { traversal, kset: kset.to_vec(), digits, initials })
    }
}

fn key_of(k: &[u32]) -> String {
    k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Σ_t digit_t 7^-t plus the half-unit guard tail.
pub fn packed_stream(digits: &[u32]) -> Rational {
    if digits.is_empty() {
        return Rational::zero();
    }
    encode_digits(&DigitStream { base: CODE_BASE, digits: digits.to_vec() })
}

fn round_half_down(x: &Rational) -> i64 {
    (x - Rational::new(1.into(), 2.into())).ceil().to_integer().to_i64().unwrap_or(i64::MAX)
}

/// Encode the Taylor coefficients of coarse cube `n` as base-7 corrections along the traversal.
pub fn encode_cube(table: &TaylorTable, n: &[i64], p: &CodecParams) -> Result<EncodingWeight> {
    if table.m != p.m_scale {
        return invalid("table scale differs from codec M");
    }
    let knots = p.knots(n);
    let lookup = |knot: &GridIndex, k: &MultiIndex| -> Result<Rational> {
        table.get(knot, k).cloned().ok_or_else(|| Error::Invalid(format!("table misses knot {knot:?} order {k:?}")))
    };
    let initials: Vec<Rational> = p.kset.iter().map(|k| lookup(&knots[0], k)).collect::<Result<_>>()?;
    let mut ahat = initials.clone();
    let mut digits = vec![Vec::with_capacity(knots.len() - 1); p.kset.len()];
    for (t, (dir, sign)) in p.steps().into_iter().enumerate() {
        let tilde = transfer_coeffs(&ahat, &p.kset, dir, sign, p.m_scale, p.order);
        let next = &knots[t + 1];
        for (i, k) in p.kset.iter().enumerate() {
            let a = lookup(next, k)?;
            let x = (&a - &tilde[i]) / &p.quanta[i];
            let b = round_half_down(&x).clamp(-MAX_CORRECTION, MAX_CORRECTION);
            let v = &tilde[i] + &p.quanta[i] * int(b);
            let tot: u32 = k.iter().sum();
            if !leq_power(&(&a - &v).abs(), &int(p.m_scale), &(int(tot as i64) - &p.r)) {
                return Err(Error::Oracle(format!(
                    "correction at knot {next:?} order {k:?} needs |B| > 3; the oracle breaks its Hölder bound"
                )));
            }
            digits[i].push((b + MAX_CORRECTION) as u32);
            ahat[i] = v;
        }
    }
    Ok(EncodingWeight { traversal: "snake".into(), kset: p.kset.clone(), digits, initials })
}

/// Replays the corrections; the exact inverse of `encode_cube`.
pub fn decode_cube(enc: &EncodingWeight, n: &[i64], p: &CodecParams) -> Result<TaylorTable> {
    if enc.kset != p.kset || enc.initials.len() != p.kset.len() || enc.digits.len() != p.kset.len() {
        return invalid("encoding does not match codec orders");
    }
    let steps = p.steps();
    if enc.digits.iter().any(|d| d.len() != steps.len() || d.iter().any(|&v| v >= CODE_BASE)) {
        return Err(Error::Parse("malformed digit stream".into()));
    }
    let knots = p.knots(n);
    let mut entries = BTreeMap::new();
    let mut ahat = enc.initials.clone();
    for (k, v) in p.kset.iter().zip(&ahat) {
        entries.insert((knots[0].clone(), k.clone()), v.clone());
    }
    for (t, (dir, sign)) in steps.into_iter().enumerate() {
        let tilde = transfer_coeffs(&ahat, &p.kset, dir, sign, p.m_scale, p.order);
        for i in 0..p.kset.len() {
            let b = enc.digits[i][t] as i64 - MAX_CORRECTION;
            ahat[i] = &tilde[i] + &p.quanta[i] * int(b);
            entries.insert((knots[t + 1].clone(), p.kset[i].clone()), ahat[i].clone());
        }
    }
    Ok(TaylorTable { m: p.m_scale, entries })
}

/// Expressions for all â over the traversal from the 2|kset| encoding inputs `w`
/// (packed streams first, then initials). Outer index is the traversal position.
pub fn decode_exprs(g: &mut GraphBuilder, w: &[Lin], p: &CodecParams) -> Result<Vec<Vec<Lin>>> {
    let nk = p.kset.len();
    if w.len() != 2 * nk {
        return Err(Error::Dimension { expected: 2 * nk, got: w.len() });
    }
    let len = p.traversal_len() - 1;
    let delta = default_ramp(CODE_BASE, len);
    let mut digits = Vec::with_capacity(nk);
    for stream in &w[..nk] {
        digits.push(bit_extract(g, stream, CODE_BASE, len, &delta)?);
    }
    decode_from_digits(g, &digits, &w[nk..], p)
}

/// Replays corrections given as digit expressions (`digits[k][t]`, values 0..6) from the initial
/// coefficients along the traversal.
pub fn decode_from_digits(g: &mut GraphBuilder, digits: &[Vec<Lin>], initials: &[Lin], p: &CodecParams) -> Result<Vec<Vec<Lin>>> {
    let nk = p.kset.len();
    let steps = p.steps();
    if digits.len() != nk || initials.len() != nk || digits.iter().any(|d| d.len() != steps.len()) {
        return invalid("digit expressions do not match the codec geometry");
    }
    let mut ahat: Vec<Lin> = initials.to_vec();
    let mut out = vec![ahat.clone()];
    let three = int(MAX_CORRECTION);
    for (t, (dir, sign)) in steps.into_iter().enumerate() {
        let mat = transfer_matrix(&p.kset, dir, sign, p.m_scale, p.order);
        let mut next = Vec::with_capacity(nk);
        for i in 0..nk {
            let mut e = Lin::zero();
            for (j, c) in &mat[i] {
                e.add_scaled(&ahat[*j], c);
            }
            e.add_scaled(&digits[i][t], &p.quanta[i]);
            e = e.plus_const(&-(&p.quanta[i] * &three));
            // materialized so the expression size stays constant along the chain
            next.push(g.identity(&e));
        }
        ahat = next;
        out.push(ahat.clone());
    }
    Ok(out)
}

/// Decoder independent of the cube: inputs are EncodingWeight::weights(), outputs â in
/// traversal-major, multi-index-minor order.
pub fn build_decoder_net(p: &CodecParams) -> Result<Network> {
    let nk = p.kset.len();
    let mut g = GraphBuilder::new(2 * nk);
    let w = g.inputs();
    let rows = decode_exprs(&mut g, &w, p)?;
    let outs: Vec<Lin> = rows.into_iter().flatten().collect();
    Ok(g.finish(
        &outs,
        meta_of(&[
            ("variant", "taylor_decoder".into()),
            ("d", p.d.to_string()),
            ("r", p.r.to_string()),
            ("N", p.n_scale.to_string()),
            ("M", p.m_scale.to_string()),
        ]),
    ))
}

/// Approximate Taylor polynomial Σ_k â_k/k! (x - m/M)^k, evaluated exactly.
pub fn taylor_poly_value(coeffs: &[Rational], kset: &[MultiIndex], knot: &[i64], m: i64, x: &[Rational]) -> Rational {
    let h: Vec<Rational> = x.iter().zip(knot).map(|(xi, ki)| xi - Rational::new((*ki).into(), m.into())).collect();
    let mut acc = Rational::zero();
    for (c, k) in coeffs.iter().zip(kset) {
        let mut term = c / factorial(k);
        for (hi, &ki) in h.iter().zip(k) {
            term *= rat_pow(hi, ki);
        }
        acc += term;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::eval_rat;
    use crate::oracle::{Factor, ProductFn, ZeroFn};
    use crate::scalar::rat;

    fn certificate(p: &CodecParams, table: &TaylorTable, dec: &TaylorTable) {
        for ((knot, k), a) in &dec.entries {
            let exact = table.get(knot, k).unwrap();
            let tot: u32 = k.iter().sum();
            assert!(leq_power(&(exact - a).abs(), &int(p.m_scale), &(int(tot as i64) - &p.r)));
        }
    }

    #[test]
    fn table_examples() {
        let sq = ProductFn::raw("sq", int(2), int(1), vec![Factor::Poly(vec![int(0), int(0), int(1)])]);
        let t = taylor_table(&sq, 4, &[vec![3]]).unwrap();
        assert_eq!(t.get(&[3], &[0]).unwrap(), &rat(9, 16));
        assert_eq!(t.get(&[3], &[1]).unwrap(), &rat(3, 2));
        let s = ProductFn::raw("s", int(1), int(1), vec![Factor::Sine { freq: int(1), phase: int(0) }]);
        let t = taylor_table(&s, 4, &[vec![2]]).unwrap();
        assert!((t.get(&[2], &[0]).unwrap() - int(1)).abs() < crate::scalar::pow2(-200));
    }

    #[test]
    fn traversal_examples() {
        assert_eq!(knot_traversal(&[1], 4, 4).unwrap(), vec![vec![0], vec![1], vec![2]]);
        let t = knot_traversal(&[0, 0], 2, 2).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(&t[..4], &[vec![-1, -1], vec![-1, 0], vec![-1, 1], vec![0, 1]]);
        for w in t.windows(2) {
            step_between(&w[0], &w[1]).unwrap();
        }
        assert!(knot_traversal(&[0], 3, 4).is_err());
    }

    #[test]
    fn transfer_examples() {
        let kset = multi_indices(1, 1);
        let v = transfer_coeffs(&[rat(1, 2), int(1)], &kset, 0, 1, 10, 1);
        assert_eq!(v, vec![rat(3, 5), int(1)]);
        let z = transfer_coeffs(&[int(0), int(0)], &kset, 0, -1, 10, 1);
        assert_eq!(z, vec![int(0), int(0)]);
        let k0 = multi_indices(1, 0);
        assert_eq!(transfer_coeffs(&[rat(2, 7)], &k0, 0, 1, 10, 0), vec![rat(2, 7)]);
    }

    #[test]
    fn zero_function_encodes_to_threes() {
        let p = CodecParams::new(2, &int(2), 2, 8).unwrap();
        let f = ZeroFn { d: 2, r: int(2) };
        let table = taylor_table(&f, 8, &p.knots(&[1, 1])).unwrap();
        let enc = encode_cube(&table, &[1, 1], &p).unwrap();
        assert!(enc.digits.iter().flatten().all(|&d| d == 3));
        assert!(enc.initials.iter().all(Zero::is_zero));
        let dec = decode_cube(&enc, &[1, 1], &p).unwrap();
        assert!(dec.entries.values().all(Zero::is_zero));
    }

    #[test]
    fn linear_function_has_exact_slope_transfer() {
        let f = ProductFn::raw("x", rat(3, 2), rat(1, 2), vec![Factor::Poly(vec![int(0), int(1)])]);
        let p = CodecParams::new(1, &rat(3, 2), 2, 8).unwrap();
        let table = taylor_table(&f, 8, &p.knots(&[1])).unwrap();
        let enc = encode_cube(&table, &[1], &p).unwrap();
        assert!(enc.digits[1].iter().all(|&d| d == 3));
    }

    #[test]
    fn kink_uses_both_signs() {
        // |x - c| through a small table oracle
        struct Kink;
        impl FunctionOracle for Kink {
            fn id(&self) -> &str {
                "kink"
            }
            fn dim(&self) -> usize {
                1
            }
            fn smoothness(&self) -> &Rational {
                static R: std::sync::OnceLock<Rational> = std::sync::OnceLock::new();
                R.get_or_init(|| int(1))
            }
            fn derivative(&self, _k: &[u32], x: &[Rational]) -> Result<Rational> {
                Ok((&x[0] - rat(1, 2)).abs())
            }
            fn eval_f64(&self, x: &[f64]) -> f64 {
                (x[0] - 0.5).abs()
            }
        }
        let p = CodecParams::new(1, &int(1), 2, 8).unwrap();
        let table = taylor_table(&Kink, 8, &p.knots(&[1])).unwrap();
        let enc = encode_cube(&table, &[1], &p).unwrap();
        let bs: Vec<i64> = enc.corrections().collect();
        assert!(bs.iter().any(|&b| b > 0) && bs.iter().any(|&b| b < 0));
        certificate(&p, &table, &decode_cube(&enc, &[1], &p).unwrap());
    }

    #[test]
    fn rough_and_smooth_certificates() {
        for r in [rat(1, 2), int(1), rat(3, 2), int(2)] {
            let fs = crate::oracle::corpus(1, &r, 3).unwrap();
            let p = CodecParams::new(1, &r, 4, 32).unwrap();
            for f in &fs {
                let table = taylor_table(f.as_ref(), 32, &p.knots(&[2])).unwrap();
                let enc = encode_cube(&table, &[2], &p).unwrap();
                assert!(enc.corrections().all(|b| b.abs() <= 3));
                certificate(&p, &table, &decode_cube(&enc, &[2], &p).unwrap());
            }
        }
    }

    #[test]
    fn decoder_net_matches_reference() {
        let r = rat(3, 2);
        let p = CodecParams::new(1, &r, 2, 8).unwrap();
        let f = ProductFn::normalized("s", r.clone(), vec![Factor::Sine { freq: int(1), phase: rat(1, 3) }]);
        let net = build_decoder_net(&p).unwrap();
        assert_eq!(net.outputs.len(), 9 * 2);
        let table = taylor_table(&f, 8, &p.knots(&[1])).unwrap();
        let enc = encode_cube(&table, &[1], &p).unwrap();
        let out = eval_rat(&net, &enc.weights()).unwrap();
        let dec = decode_cube(&enc, &[1], &p).unwrap();
        let knots = p.knots(&[1]);
        for (t, knot) in knots.iter().enumerate() {
            for (i, k) in p.kset.iter().enumerate() {
                assert_eq!(&out[t * p.kset.len() + i], dec.get(knot, k).unwrap());
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let p = CodecParams::new(2, &int(2), 2, 4).unwrap();
        let f = ProductFn::normalized("s", int(2), vec![Factor::Sine { freq: int(1), phase: int(0) }; 2]);
        let table = taylor_table(&f, 4, &p.knots(&[1, 0])).unwrap();
        let enc = encode_cube(&table, &[1, 0], &p).unwrap();
        let back = EncodingWeight::from_json(&enc.to_json(), &p.kset).unwrap();
        assert_eq!(back, enc);
    }
}
