//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::time::Instant;

use num_bigint::BigInt;
use num_traits::{One, Signed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use approxnet::builders::{
    build_deep_phase, build_fixed_width, build_poly_activation, build_shallow, build, eval_bits_of,
    find_poly_interval, is_strictly_layered, v_map, Budget, BuildRequest, PolyOptions, Variant,
};
use approxnet::codec::{build_decoder_net, decode_cube, encode_cube, taylor_table, CodecParams, MAX_CORRECTION};
use approxnet::eval::{Compiled, FloatArith, RatArith};
use approxnet::fourier::{
    build_deep_fourier, dichotomy_table, find_assignment_weight, find_seed_weight, make_schedule, seed_chain,
    seed_precision, Assignment, FourierOptions,
};
use approxnet::gadgets::{build_bit_extractor, default_ramp, encode_digits, DigitStream};
use approxnet::harness::{fit_line, measure_error, sweep_rates, GridSpec, SweepConfig};
use approxnet::net::compose_parallel;
use approxnet::oracle::corpus;
use approxnet::partition::{
    all_tuples, build_constant_interpolant, build_linear_interpolant_d, build_spike, knot_for, Subgrid,
};
use approxnet::scalar::{int, pow2, rat, rat_to_f64, BigFloat};
use approxnet::serialize::{network_from_str, network_to_string};
use approxnet::{Network, Rational, SigmaSpec};

/// Criteria that cannot pass at desk scale; they still run and report FAIL.
const KNOWN_GAPS: &[(usize, &str)] = &[
    (3, "smooth members converge at M^-2 under the linear blend at r=1, faster than the class rate"),
    (4, "at p=3/2 the decoder grows like N^(1/2) and dominates W until N is in the thousands"),
    (6, "at N<=32 fixed overhead keeps W near N^0.76, so smooth members fit steeper than -p"),
];

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        let msg = msg.into();
        if !ok {
            self.pass = false;
        }
        self.lines.push(format!("{} {msg}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.lines.push(format!("     {}", msg.into()));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<Rational> {
    (0..d)
        .map(|_| {
            let den = rng.gen_range(1..=1000i64);
            rat(rng.gen_range(0..=den), den)
        })
        .collect()
}

fn eval_exact(net: &Network, x: &[Rational]) -> Vec<Rational> {
    Compiled::new(net, RatArith).unwrap().eval_rational(x).unwrap()
}

fn log_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let fit = fit_line(&lx, &ly).unwrap();
    (fit.slope, fit.r2)
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

/// |x| <= base^e for rational e with denominator at most 2, decided exactly.
fn leq_power(x: &Rational, base: i64, e: &Rational) -> bool {
    let x = x.abs();
    let q = e.denom().clone();
    let p = e.numer().clone();
    let qi: u32 = if q == BigInt::from(1) { 1 } else { 2 };
    assert!(q == BigInt::from(qi), "exponent {e}");
    let lhs = (0..qi).fold(Rational::one(), |acc, _| acc * &x);
    let pi: i64 = num_traits::ToPrimitive::to_i64(&p).unwrap();
    let bp = (0..pi.unsigned_abs()).fold(Rational::one(), |acc, _| acc * int(base));
    if pi >= 0 {
        lhs <= bp
    } else {
        lhs * bp <= Rational::one()
    }
}

fn criterion1() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = rng(11);
    for d in 1..=3usize {
        let mut bad = 0;
        let mut pts = 0;
        for n in 1..=8i64 {
            let spikes: Vec<Network> = all_tuples(n + 1, d).iter().map(|k| build_spike(n, k, d).unwrap()).collect();
            let sum = compose_parallel(&spikes, &vec![Rational::one(); spikes.len()]).unwrap();
            let c = Compiled::new(&sum, RatArith).unwrap();
            for _ in 0..125 {
                let x = random_point(&mut rng, d);
                pts += 1;
                if c.eval_rational(&x).unwrap()[0] != Rational::one() {
                    bad += 1;
                }
            }
        }
        v.check(bad == 0, format!("spikes sum to 1 exactly, d={d}, N=1..8: {bad}/{pts} points off"));
    }

    let mut bad = 0;
    let mut checked = 0;
    for (d, n) in [(1usize, 8i64), (2, 4), (3, 2)] {
        let knots = all_tuples(n + 1, d);
        let vals: Vec<Rational> = knots.iter().map(|_| rat(rng.gen_range(-500..=500), rng.gen_range(1..=97))).collect();
        let net = build_linear_interpolant_d(&knots, &vals, n, d).unwrap();
        for (k, want) in knots.iter().zip(&vals) {
            let x: Vec<Rational> = k.iter().map(|&c| rat(c, n)).collect();
            checked += 1;
            if eval_exact(&net, &x)[0] != *want {
                bad += 1;
            }
        }
    }
    v.check(bad == 0, format!("linear interpolants hit every knot value: {bad}/{checked} off"));

    let mut bad = 0;
    let mut checked = 0;
    for d in 1..=2usize {
        for n in 3..=8i64 {
            for q in all_tuples(3, d) {
                let sg = Subgrid::new(q, n).unwrap();
                let knots = sg.knots();
                if knots.is_empty() {
                    continue;
                }
                let vals: Vec<Rational> = knots.iter().map(|_| rat(rng.gen_range(-99..=99), 7)).collect();
                let net = build_constant_interpolant(&sg, &knots, &vals).unwrap();
                let c = Compiled::new(&net, RatArith).unwrap();
                for _ in 0..30 {
                    let x = random_point(&mut rng, d);
                    if let Some(k) = knot_for(&x, &sg) {
                        let i = knots.iter().position(|kk| *kk == k).unwrap();
                        checked += 1;
                        if c.eval_rational(&x).unwrap()[0] != vals[i] {
                            bad += 1;
                        }
                    }
                }
            }
        }
    }
    v.check(bad == 0 && checked > 500, format!("patch interpolants constant on patches: {bad}/{checked} off"));

    let mut nets: BTreeMap<usize, Compiled<RatArith>> = BTreeMap::new();
    let mut bad = 0;
    for _ in 0..500 {
        let t = rng.gen_range(1..=50usize);
        let digits: Vec<u32> = (0..t).map(|_| rng.gen_range(0..7)).collect();
        let w = encode_digits(&DigitStream::new(7, digits.clone()).unwrap());
        let c = nets
            .entry(t)
            .or_insert_with(|| Compiled::new(&build_bit_extractor(7, t, &default_ramp(7, t)).unwrap(), RatArith).unwrap());
        let out = c.eval_rational(&[w]).unwrap();
        if out.iter().zip(&digits).any(|(o, &dg)| *o != int(dg as i64)) {
            bad += 1;
        }
    }
    v.check(bad == 0, format!("bit extractor round-trips 500 base-7 streams, T<=50: {bad} wrong"));
    v
}

fn criterion2() -> Verdict {
    let mut v = Verdict::new();
    let mut samples = Vec::new();
    let mut entries = 0usize;
    let mut cert_bad = 0usize;
    let mut corr_bad = 0usize;
    for d in 1..=2usize {
        for r in [rat(1, 2), int(1), rat(3, 2), int(2)] {
            let fs = corpus(d, &r, 0).unwrap();
            for (n, m) in [(1i64, 8i64), (2, 4), (2, 16), (4, 8), (4, 32)] {
                let p = CodecParams::new(d, &r, n, m).unwrap();
                let ratio = p.ratio();
                let region: Vec<Vec<i64>> = all_tuples(m + 2 * ratio + 1, d)
                    .into_iter()
                    .map(|t| t.into_iter().map(|c| c - ratio).collect())
                    .collect();
                for (fi, f) in fs.iter().enumerate() {
                    let table = taylor_table(f.as_ref(), m, &region).unwrap();
                    for cube in all_tuples(n + 1, d) {
                        let enc = encode_cube(&table, &cube, &p).unwrap();
                        corr_bad += enc.corrections().filter(|b| b.abs() > MAX_CORRECTION).count();
                        let dec = decode_cube(&enc, &cube, &p).unwrap();
                        for ((knot, k), a) in &dec.entries {
                            let exact = table.get(knot, k).unwrap();
                            let tot: u32 = k.iter().sum();
                            entries += 1;
                            if !leq_power(&(exact - a), m, &(int(tot as i64) - &r)) {
                                cert_bad += 1;
                            }
                        }
                        samples.push((d, r.clone(), n, m, fi, cube, enc, dec));
                    }
                }
            }
        }
    }
    v.check(cert_bad == 0, format!("decoded coefficients within M^(|k|-r) exactly: {cert_bad}/{entries} violations"));
    v.check(corr_bad == 0, format!("all correction digits in [-3, 3]: {corr_bad} out of range"));

    let mut rng = rng(21);
    let mut bad = 0;
    let mut nets: BTreeMap<(usize, String, i64, i64), (CodecParams, Compiled<RatArith>)> = BTreeMap::new();
    for _ in 0..100 {
        let (d, r, n, m, _, cube, enc, dec) = &samples[rng.gen_range(0..samples.len())];
        let (p, c) = nets.entry((*d, r.to_string(), *n, *m)).or_insert_with(|| {
            let p = CodecParams::new(*d, r, *n, *m).unwrap();
            let c = Compiled::new(&build_decoder_net(&p).unwrap(), RatArith).unwrap();
            (p, c)
        });
        let out = c.eval_rational(&enc.weights()).unwrap();
        let knots = p.knots(cube);
        let mut i = 0;
        for knot in &knots {
            for k in &p.kset {
                if out[i] != *dec.get(knot, k).unwrap() {
                    bad += 1;
                }
                i += 1;
            }
        }
    }
    v.check(bad == 0, format!("decoder network equals reference decoder on 100 random cubes: {bad} mismatches"));
    v
}

fn corpus_ids(d: usize, r: &Rational) -> Vec<String> {
    corpus(d, r, 0).unwrap().iter().map(|f| f.id().to_string()).collect()
}

fn criterion3() -> Verdict {
    let mut v = Verdict::new();
    let ms = [4i64, 8, 16, 32];
    for r in [int(1), int(2)] {
        let rf = rat_to_f64(&r);
        let ceil_r = r.ceil().to_integer();
        let factor = 2f64.powi(num_traits::ToPrimitive::to_i32(&ceil_r).unwrap() - 1);
        for f in corpus(1, &r, 0).unwrap() {
            let mut errs = Vec::new();
            let mut over = Vec::new();
            for &m in &ms {
                let net = build_shallow(f.as_ref(), m).unwrap();
                let slack: Rational = net.meta["gadget_slack"].parse().unwrap();
                let e = measure_error(&net, f.as_ref(), &GridSpec { random: 1000, ..Default::default() }).unwrap();
                let bound = Rational::from_float(factor).unwrap() * pow_neg(m, &r) + slack;
                if e.sup > bound {
                    over.push(m);
                }
                errs.push(rat_to_f64(&e.sup));
            }
            v.check(over.is_empty(), format!("r={r} {}: error below (d+1)^(ceil r-1) M^-r + slack at every M", f.id()));
            if errs.iter().all(|e| *e == 0.0) {
                v.note(format!("r={r} {}: error is exactly zero at every M", f.id()));
                continue;
            }
            let xs: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
            let (slope, r2) = log_fit(&xs, &errs);
            v.check(
                within(slope, -rf, 0.3),
                format!("r={r} {}: slope vs log M {slope:.3} (want {:.1} ± 0.3, R² {r2:.3})", f.id(), -rf),
            );
        }
    }
    v
}

fn pow_neg(m: i64, r: &Rational) -> Rational {
    approxnet::scalar::pow_bounds(&int(m), &-r.clone(), 64).1
}

fn deep_rows(p: &Rational, ns: &[i64], random: usize) -> Vec<(String, Vec<(f64, f64, f64, f64, f64)>)> {
    let r = int(1);
    let mut out = Vec::new();
    for f in corpus(1, &r, 0).unwrap() {
        let mut rows = Vec::new();
        for &n in ns {
            let net = build_deep_phase(f.as_ref(), p, n).unwrap();
            let e = measure_error(&net, f.as_ref(), &GridSpec { random, ..Default::default() }).unwrap();
            let pc = net.count_params();
            let ratio: f64 = net.meta["M"].parse::<f64>().unwrap() / net.meta["N"].parse::<f64>().unwrap();
            let bits: f64 = net.meta["bits_per_enc"].parse().unwrap();
            rows.push((pc.w as f64, pc.l as f64, rat_to_f64(&e.sup), ratio, bits));
        }
        out.push((f.id().to_string(), rows));
    }
    out
}

fn criterion4() -> Verdict {
    let mut v = Verdict::new();
    let cases: [(Rational, Vec<i64>); 2] = [(rat(3, 2), vec![32, 64, 128, 256]), (int(2), vec![12, 16, 24, 32, 48])];
    for (p, ns) in &cases {
        let pf = rat_to_f64(p);
        v.note(format!("p={p}: N in {ns:?}"));
        let all = deep_rows(p, ns, 200);
        for (id, rows) in &all {
            let w: Vec<f64> = rows.iter().map(|t| t.0).collect();
            let err: Vec<f64> = rows.iter().map(|t| t.2).collect();
            if err.iter().all(|e| *e < 1e-20) {
                v.note(format!("p={p} {id}: error below 1e-20 at every budget, excluded from the fit"));
                continue;
            }
            let (slope, r2) = log_fit(&w, &err);
            v.check(
                within(slope, -pf, 0.35),
                format!("p={p} {id}: slope vs log W {slope:.3} (want {:.2} ± 0.35, R² {r2:.3})", -pf),
            );
        }
        let rows = &all[1].1;
        let w: Vec<f64> = rows.iter().map(|t| t.0).collect();
        let l: Vec<f64> = rows.iter().map(|t| t.1).collect();
        let (ls, _) = log_fit(&w, &l);
        let want = pf - 1.0;
        v.check(within(ls, want, 0.35), format!("p={p}: depth exponent vs W {ls:.3} (want {want:.2} ± 0.35)"));
        let ratio: Vec<f64> = rows.iter().map(|t| t.3).collect();
        let bits: Vec<f64> = rows.iter().map(|t| t.4).collect();
        let (bs, br2) = log_fit(&ratio, &bits);
        v.check(
            within(bs, 1.0, 0.35) && br2 >= 0.9,
            format!("p={p}: bits per encoding weight vs (M/N)^d exponent {bs:.3} (want 1 ± 0.35, R² {br2:.3})"),
        );
    }
    v
}

fn criterion5() -> Verdict {
    let mut v = Verdict::new();
    let r = int(1);
    for d in 1..=2usize {
        let ks: Vec<i64> = if d == 1 { vec![4, 5, 6, 7, 8] } else { vec![4, 5, 6, 7] };
        let fs = corpus(d, &r, 0).unwrap();
        let mut depth = Vec::new();
        let mut widths_ok = true;
        for &k in &ks {
            let eps = pow2(-k);
            let sinpi = fs.iter().find(|f| f.id() == "sinpi").unwrap();
            let net = build_fixed_width(sinpi.as_ref(), &eps).unwrap();
            let pc = net.count_params();
            widths_ok &= pc.width == 2 * d + 10 && is_strictly_layered(&net);
            depth.push(pc.l as f64);
        }
        if d == 1 {
            for f in &fs {
                let mut errs = Vec::new();
                for &k in &ks {
                    let net = build_fixed_width(f.as_ref(), &pow2(-k)).unwrap();
                    widths_ok &= net.count_params().width == 2 * d + 10;
                    let e = measure_error(&net, f.as_ref(), &GridSpec { random: 200, ..Default::default() }).unwrap();
                    errs.push(rat_to_f64(&e.sup));
                }
                let zero = errs.iter().all(|e| *e < 1e-20);
                let decreasing = errs.windows(2).all(|p| p[1] < p[0]);
                let fmt: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
                v.check(zero || decreasing, format!("d=1 {}: error decreasing over eps=2^-4..2^-8: {}", f.id(), fmt.join(" ")));
            }
        } else {
            v.note("d=2 error is not measured: a 4M grid at M=132 needs 2.8e5 evaluations of a 1e7-weight net");
        }
        v.check(widths_ok, format!("d={d}: every net has width {} and strict layering", 2 * d + 10));
        let x: Vec<f64> = ks.iter().map(|&k| k as f64 * std::f64::consts::LN_2).collect();
        let y: Vec<f64> = depth.iter().map(|l| l.ln()).collect();
        let ylog: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b.ln()).collect();
        let pure = fit_line(&x, &y).unwrap();
        let logf = fit_line(&x, &ylog).unwrap();
        let want = d as f64 / 2.0;
        v.check(
            logf.rss < pure.rss && within(logf.slope, want, 0.35),
            format!(
                "d={d}: depth fit, log-factor RSS {:.4} vs power RSS {:.4}, exponent {:.3} (want {want:.2} ± 0.35)",
                logf.rss, pure.rss, logf.slope
            ),
        );
    }
    v
}

fn dyadic(x: &Rational, bits: u32) -> Rational {
    let scale = BigInt::one() << bits;
    Rational::new((x * &scale).round().to_integer(), scale)
}

fn criterion6() -> Verdict {
    let mut v = Verdict::new();
    let bits = 256;
    let mut worst_margin = f64::INFINITY;
    let mut bad = 0;
    for n in 1..=40u32 {
        let net = approxnet::builders::build_u_iterate(n).unwrap();
        let c = Compiled::new(&net, FloatArith { bits }).unwrap();
        let bound = 2f64.powf(-(n as f64) / 2.0);
        for i in 0..=1000i64 {
            let x = rat(i - 500, 500);
            let u = c.eval(&[BigFloat::from_rational(&x, bits)]).unwrap()[0].to_rational();
            let gap = rat_to_f64(&(&x * u - x.abs()).abs());
            worst_margin = worst_margin.min(bound - gap);
            if gap > bound {
                bad += 1;
            }
        }
    }
    v.check(bad == 0, format!("|x u_n(x) - |x|| <= 2^(-n/2) on 1001 points, n<=40: {bad} violations (min margin {worst_margin:.2e})"));

    let mut short = 0;
    let mut strays = 0;
    let mut total = 0;
    for n in 1..=12usize {
        let min_len = Rational::one() / int(6i64.pow(n as u32));
        for w in 0..1u32 << n {
            let bits: Vec<u8> = (0..n).map(|i| ((w >> (n - 1 - i)) & 1) as u8).collect();
            let (a, b) = find_poly_interval(&bits).unwrap();
            total += 1;
            if &b - &a < min_len {
                short += 1;
            }
            // exact orbits grow threefold in size per step; 400-bit dyadics stay far inside the 6^-12 margins
            let mut x = (&a + &b) / int(2);
            for &bit in &bits {
                let inside = if bit == 1 { x >= int(-1) && x <= rat(-1, 2) } else { x >= rat(1, 2) && x <= int(1) };
                if !inside {
                    strays += 1;
                    break;
                }
                x = dyadic(&v_map(&x), 400);
            }
        }
    }
    v.check(short == 0, format!("orbit intervals no shorter than 6^-n for all {total} strings, n<=12: {short} short"));
    v.check(strays == 0, format!("orbits visit every prescribed target interval: {strays} strays"));

    let p = rat(3, 2);
    let r = int(1);
    let ns = [4i64, 8, 16, 32];
    v.note(format!("poly p=3/2: N in {ns:?}"));
    for f in corpus(1, &r, 0).unwrap() {
        let mut w = Vec::new();
        let mut errs = Vec::new();
        for &n in &ns {
            let net = build_poly_activation(f.as_ref(), &p, n, &PolyOptions::default()).unwrap();
            let e = measure_error(&net, f.as_ref(), &GridSpec { random: 100, ..Default::default() }).unwrap();
            w.push(net.count_params().w as f64);
            errs.push(rat_to_f64(&e.sup));
        }
        if errs.iter().all(|e| *e < 1e-20) {
            v.note(format!("{}: error below 1e-20 at every budget, excluded from the fit", f.id()));
            continue;
        }
        let (slope, r2) = log_fit(&w, &errs);
        v.check(within(slope, -1.5, 0.35), format!("poly {}: slope vs log W {slope:.3} (want -1.50 ± 0.35, R² {r2:.3})", f.id()));
    }
    v
}

fn criterion7() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = rng(31);
    for (name, spec) in [("triangle", SigmaSpec::triangle()), ("sine", SigmaSpec::sine())] {
        let start = Instant::now();
        let mut bad = 0;
        for k in 1..=12usize {
            let sched = make_schedule(k, &spec).unwrap();
            for _ in 0..50 {
                let a = Assignment::random(k, &mut rng).unwrap();
                let ok = find_assignment_weight(&a, &spec, &sched)
                    .and_then(|(w, _)| dichotomy_table(&w.to_rational(), k, &spec, &sched))
                    .map(|t| t == a.table)
                    .unwrap_or(false);
                if !ok {
                    bad += 1;
                }
            }
        }
        v.check(bad == 0, format!("{name} lookup exact on all 2^K inputs, K<=12, 50 assignments each: {bad} wrong ({:.0?})", start.elapsed()));
    }

    let mut worst_ratio: f64 = 0.0;
    for spec in [SigmaSpec::triangle(), SigmaSpec::sine()] {
        for a in [int(8), int(1000), int(1_000_000)] {
            for r in 1..=20usize {
                let targets: Vec<Rational> = (0..r).map(|_| rat(rng.gen_range(-1000..=1000), 1000)).collect();
                let w = find_seed_weight(&targets, &a, &spec).unwrap();
                let chain = seed_chain(&w, &a, &spec, r, seed_precision(r, &a) + 64);
                let dev = chain.iter().zip(&targets).map(|(c, t)| rat_to_f64(&(c - t).abs())).fold(0.0, f64::max);
                worst_ratio = worst_ratio.max(dev * rat_to_f64(&a) / 2.0);
            }
        }
    }
    v.check(worst_ratio < 1.0, format!("seed chain deviation below 2/a for R<=20: worst deviation is {worst_ratio:.3} of 2/a"));

    let opts = FourierOptions::default();
    let r = int(1);
    let fs = corpus(1, &r, 0).unwrap();
    let pick = |id: &str| fs.iter().find(|f| f.id() == id).unwrap();
    let a = network_from_str(&network_to_string(&build_deep_fourier(pick("sinpi").as_ref(), 3, &opts).unwrap())).unwrap();
    let b = network_from_str(&network_to_string(&build_deep_fourier(pick("takagi").as_ref(), 3, &opts).unwrap())).unwrap();
    let same_shape = a.input_dim == b.input_dim
        && a.outputs == b.outputs
        && a.meta == b.meta
        && a.units.len() == b.units.len()
        && a.units.iter().zip(&b.units).all(|(x, y)| {
            x.activation == y.activation
                && x.incoming.len() == y.incoming.len()
                && x.incoming.iter().zip(&y.incoming).all(|(p, q)| p.0 == q.0)
        });
    let mut diffs = 0;
    for (x, y) in a.units.iter().zip(&b.units) {
        diffs += x.incoming.iter().zip(&y.incoming).filter(|(p, q)| p.1 != q.1).count();
        diffs += usize::from(x.bias != y.bias);
    }
    v.check(same_shape && diffs == 1, format!("sinpi and takagi nets (U=3) differ in {diffs} weight(s)"));

    for f in &fs {
        let mut sq = Vec::new();
        let mut lg = Vec::new();
        let mut errs = Vec::new();
        for u in 2..=6u32 {
            let net = build_deep_fourier(f.as_ref(), u, &opts).unwrap();
            let e = measure_error(&net, f.as_ref(), &GridSpec { random: 200, ..Default::default() }).unwrap();
            let err = rat_to_f64(&e.sup);
            sq.push((net.count_params().w as f64).sqrt());
            lg.push((1.0 / err).ln());
            errs.push(err);
        }
        if errs.iter().all(|e| *e < 1e-20) {
            v.note(format!("{}: error below 1e-20 at every U, excluded from the fit", f.id()));
            continue;
        }
        let fit = fit_line(&sq, &lg).unwrap();
        v.check(
            fit.r2 >= 0.9,
            format!("{}: log(1/error) vs sqrt W over U=2..6, R² {:.3}, c = {:.4}", f.id(), fit.r2, fit.slope),
        );
    }
    v
}

fn criterion8() -> Verdict {
    let mut v = Verdict::new();
    let cfg = SweepConfig {
        variant: Variant::Shallow,
        d: 1,
        r: int(1),
        p: None,
        budgets: [4, 8, 16, 32].iter().map(|&m| Budget::Scale(m)).collect(),
        fns: corpus_ids(1, &int(1)),
        seed: 5,
        grid: GridSpec { random: 300, seed: 5, ..Default::default() },
        sigma: None,
    };
    let a = sweep_rates(&cfg).unwrap().table.to_csv();
    let b = sweep_rates(&cfg).unwrap().table.to_csv();
    v.check(a == b && a.lines().count() == 29, format!("shallow sweep rerun is byte-identical ({} bytes)", a.len()));

    let r = int(1);
    let f = corpus(1, &r, 0).unwrap().into_iter().find(|f| f.id() == "sinphase").unwrap();
    let f2 = corpus(2, &int(2), 0).unwrap().into_iter().find(|f| f.id() == "cos2").unwrap();
    let reqs: Vec<(&str, BuildRequest)> = vec![
        ("shallow", BuildRequest { f: f2.as_ref(), variant: Variant::Shallow, p: None, budget: Budget::Scale(4), sigma: None }),
        ("deep_phase", BuildRequest { f: f.as_ref(), variant: Variant::DeepPhase, p: Some(rat(3, 2)), budget: Budget::Scale(4), sigma: None }),
        ("fixed_width", BuildRequest { f: f.as_ref(), variant: Variant::FixedWidth, p: None, budget: Budget::Accuracy(rat(1, 16)), sigma: None }),
        ("poly_activation", BuildRequest { f: f.as_ref(), variant: Variant::PolyActivation, p: Some(rat(3, 2)), budget: Budget::Scale(2), sigma: None }),
        ("deep_fourier", BuildRequest { f: f.as_ref(), variant: Variant::DeepFourier, p: None, budget: Budget::Scale(3), sigma: None }),
        ("deep_fourier sine", BuildRequest { f: f.as_ref(), variant: Variant::DeepFourier, p: None, budget: Budget::Scale(2), sigma: Some(SigmaSpec::sine()) }),
    ];
    for (name, req) in reqs {
        let net = build(&req).unwrap();
        let text = network_to_string(&net);
        let back = network_from_str(&text).unwrap();
        let again = network_to_string(&back);
        let bits = eval_bits_of(&net, 128);
        let x = vec![rat(2, 7); net.input_dim];
        let y0 = Compiled::new(&net, FloatArith { bits }).unwrap().eval_rational(&x).unwrap()[0].to_rational();
        let y1 = Compiled::new(&back, FloatArith { bits }).unwrap().eval_rational(&x).unwrap()[0].to_rational();
        v.check(back == net && again == text && y0 == y1, format!("{name}: serialization round-trips bit-exactly ({} bytes)", text.len()));
    }
    v
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Verdict); 8] = [
        (1, "exact structural suite", criterion1),
        (2, "codec certificate", criterion2),
        (3, "shallow rate", criterion3),
        (4, "deep-phase rate", criterion4),
        (5, "fixed width", criterion5),
        (6, "polynomial activation", criterion6),
        (7, "deep Fourier", criterion7),
        (8, "determinism and serialization", criterion8),
    ];
    let mut unexpected = Vec::new();
    let mut summary = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let verdict = run();
        let gap = KNOWN_GAPS.iter().find(|g| g.0 == id);
        for l in &verdict.lines {
            println!("  [{id}] {l}");
        }
        let line = format!(
            "criterion {id} ({name}): {} in {:.1?}",
            if verdict.pass { "PASS" } else { "FAIL" },
            start.elapsed()
        );
        println!("{line}");
        summary.push(line);
        match (verdict.pass, gap) {
            (false, Some((_, why))) => println!("  known gap: {why}"),
            (false, None) => unexpected.push(id),
            (true, Some(_)) => println!("  listed as a known gap but passed"),
            (true, None) => {}
        }
    }
    println!();
    for l in &summary {
        println!("{l}");
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
