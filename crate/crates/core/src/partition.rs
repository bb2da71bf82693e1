//! Kuhn triangulation of the N-grid, spike functions and the 3^d filtering subgrids.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{invalid, Result};
use crate::net::{meta_of, GraphBuilder, Lin, Network};
use crate::scalar::{int, Rational};

/// Knot index vector; the knot sits at `n / N`.
pub type GridIndex = Vec<i64>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimplexId {
    pub base: GridIndex,
    /// 0-based coordinate order with nondecreasing offsets from the base.
    pub perm: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgrid {
    pub q: Vec<i64>,
    pub n: i64,
}

impl Subgrid {
    pub fn new(q: Vec<i64>, n: i64) -> Result<Self> {
        if q.iter().any(|&v| !(0..3).contains(&v)) || n < 1 {
            return invalid(format!("bad subgrid q={q:?} N={n}"));
        }
        Ok(Subgrid { q, n })
    }

    pub fn knots(&self) -> Vec<GridIndex> {
        subgrid_knots(&self.q, self.n)
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        k.iter().zip(&self.q).all(|(a, q)| a.rem_euclid(3) == *q) && k.iter().all(|&a| (0..=self.n).contains(&a))
    }
}

/// All vectors in {0..base-1}^d, lexicographic.
pub fn all_tuples(base: i64, d: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * base as usize);
        for t in &out {
            for v in 0..base {
                let mut t2 = t.clone();
                t2.push(v);
                next.push(t2);
            }
        }
        out = next;
    }
    out
}

/// The Kuhn simplex containing `x`, smallest (base, perm) on ties.
pub fn simplex_of(x: &[Rational], n: i64) -> SimplexId {
    let nn = int(n);
    let mut base = Vec::with_capacity(x.len());
    let mut frac = Vec::with_capacity(x.len());
    for xi in x {
        let y = xi * &nn;
        let c = y.ceil().to_integer().to_i64().unwrap();
        let b = (c - 1).max(0).min(n - 1);
        frac.push(&y - int(b));
        base.push(b);
    }
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.sort_by(|a, b| frac[*a].cmp(&frac[*b]));
    SimplexId { base, perm }
}

/// Spike value φ(y) = relu(1 - max(0, y_1..y_d) + min(0, y_1..y_d)) evaluated exactly.
pub fn spike_value(y: &[Rational]) -> Rational {
    let mut mx = Rational::zero();
    let mut mn = Rational::zero();
    for v in y {
        if *v > mx {
            mx = v.clone();
        }
        if *v < mn {
            mn = v.clone();
        }
    }
    let r = Rational::one() - mx + mn;
    if r.is_negative() {
        Rational::zero()
    } else {
        r
    }
}

/// Spike network on affine inputs: running max/min chains then one relu (2d relus).
pub fn spike(g: &mut GraphBuilder, y: &[Lin]) -> Lin {
    let r0 = g.relu(&y[0]);
    let mut mn = y[0].minus(&r0);
    let mut mx = r0;
    for yk in &y[1..] {
        mx = g.max(&mx, yk);
        mn = g.min(&mn, yk);
    }
    let pre = Lin::constant(Rational::one()).minus(&mx).plus(&mn);
    g.relu(&pre)
}

/// Affine pieces `N x_i - n_i`.
pub fn scaled_offsets(x: &[Lin], scale: &Rational, n: &[i64]) -> Vec<Lin> {
    x.iter().zip(n).map(|(xi, ni)| xi.scaled(scale).plus_const(&-int(*ni))).collect()
}

pub fn build_spike(n_scale: i64, n: &[i64], d: usize) -> Result<Network> {
    if n.len() != d || n_scale < 1 {
        return invalid("spike needs a d-dimensional knot and N >= 1");
    }
    let mut g = GraphBuilder::new(d);
    let y = scaled_offsets(&g.inputs(), &int(n_scale), n);
    let out = spike(&mut g, &y);
    Ok(g.finish(&[out], meta_of(&[("variant", "spike".into()), ("N", n_scale.to_string())])))
}

/// Spikes at N-knots, created on demand and shared between consumers.
pub struct SpikeBank {
    pub scale: i64,
    x: Vec<Lin>,
    cache: BTreeMap<GridIndex, Lin>,
    lo: i64,
    hi: i64,
}

impl SpikeBank {
    pub fn new(x: Vec<Lin>, scale: i64) -> Self {
        SpikeBank { scale, x, cache: BTreeMap::new(), lo: 0, hi: scale }
    }

    /// Patch expansions keep only knots inside [lo, hi]^d (default [0, scale]^d).
    pub fn with_range(mut self, lo: i64, hi: i64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub fn get(&mut self, g: &mut GraphBuilder, n: &[i64]) -> Lin {
        if let Some(l) = self.cache.get(n) {
            return l.clone();
        }
        let y = scaled_offsets(&self.x, &int(self.scale), n);
        let s = spike(g, &y);
        self.cache.insert(n.to_vec(), s.clone());
        s
    }

    /// Σ values_k φ(N x - n_k).
    pub fn interpolant(&mut self, g: &mut GraphBuilder, knots: &[GridIndex], values: &[Rational]) -> Lin {
        let mut acc = Lin::zero();
        for (k, v) in knots.iter().zip(values) {
            if v.is_zero() {
                continue;
            }
            let s = self.get(g, k);
            acc.add_scaled(&s, v);
        }
        acc
    }

    /// Expression equal to `values[k]` on the whole N-patch of subgrid knot `k`.
    pub fn constant_interpolant(&mut self, g: &mut GraphBuilder, knots: &[GridIndex], values: &[Rational]) -> Lin {
        let (ks, vs) = patch_expansion_in(knots, values, self.lo, self.hi);
        self.interpolant(g, &ks, &vs)
    }
}

/// Offsets from a knot to the vertices of the simplices around it: {0,1}^d ∪ {0,-1}^d.
pub fn patch_offsets(d: usize) -> Vec<Vec<i64>> {
    let mut set = BTreeSet::new();
    for t in all_tuples(2, d) {
        set.insert(t.clone());
        set.insert(t.iter().map(|v| -v).collect::<Vec<_>>());
    }
    set.into_iter().collect()
}

/// Knots/values of the linear interpolant that is constant on each knot's patch.
pub fn patch_expansion(knots: &[GridIndex], values: &[Rational], n: i64) -> (Vec<GridIndex>, Vec<Rational>) {
    patch_expansion_in(knots, values, 0, n)
}

pub fn patch_expansion_in(knots: &[GridIndex], values: &[Rational], lo: i64, hi: i64) -> (Vec<GridIndex>, Vec<Rational>) {
    let d = knots.first().map(|k| k.len()).unwrap_or(0);
    let offs = patch_offsets(d);
    let mut ks = Vec::new();
    let mut vs = Vec::new();
    for (k, v) in knots.iter().zip(values) {
        for o in &offs {
            let p: Vec<i64> = k.iter().zip(o).map(|(a, b)| a + b).collect();
            if p.iter().all(|&c| (lo..=hi).contains(&c)) {
                ks.push(p);
                vs.push(v.clone());
            }
        }
    }
    (ks, vs)
}

pub fn build_linear_interpolant(knots: &[GridIndex], values: &[Rational], n: i64) -> Result<Network> {
    if knots.len() != values.len() {
        return invalid("knots and values differ in length");
    }
    let uniq: BTreeSet<&GridIndex> = knots.iter().collect();
    if uniq.len() != knots.len() {
        return invalid("duplicate knots");
    }
    let d = match knots.first() {
        Some(k) => k.len(),
        None => return invalid("empty knot list needs a dimension; use build_linear_interpolant_d"),
    };
    build_linear_interpolant_d(knots, values, n, d)
}

pub fn build_linear_interpolant_d(knots: &[GridIndex], values: &[Rational], n: i64, d: usize) -> Result<Network> {
    let mut g = GraphBuilder::new(d);
    let mut bank = SpikeBank::new(g.inputs(), n);
    let out = bank.interpolant(&mut g, knots, values);
    Ok(g.finish(&[out], meta_of(&[("variant", "linear_interpolant".into()), ("N", n.to_string())])))
}

pub fn build_constant_interpolant(subgrid: &Subgrid, knots: &[GridIndex], values: &[Rational]) -> Result<Network> {
    if knots.len() != values.len() {
        return invalid("knots and values differ in length");
    }
    for k in knots {
        if k.len() != subgrid.q.len() || !subgrid.contains(k) {
            return invalid(format!("knot {k:?} is not in subgrid {:?}", subgrid.q));
        }
    }
    let d = subgrid.q.len();
    let mut g = GraphBuilder::new(d);
    let mut bank = SpikeBank::new(g.inputs(), subgrid.n);
    let out = bank.constant_interpolant(&mut g, knots, values);
    Ok(g.finish(&[out], meta_of(&[("variant", "constant_interpolant".into()), ("N", subgrid.n.to_string())])))
}

/// Knots of (q + 3Z^d) ∩ [0,N]^d in lexicographic order.
pub fn subgrid_knots(q: &[i64], n: i64) -> Vec<GridIndex> {
    let mut out = vec![vec![]];
    for &qi in q {
        let mut next = Vec::new();
        for t in &out {
            let mut v = qi;
            while v <= n {
                let mut t2: Vec<i64> = t.clone();
                t2.push(v);
                next.push(t2);
                v += 3;
            }
        }
        out = next;
    }
    out
}

/// Whether `x` lies in the (closed) N-patch of knot `k`.
pub fn in_patch(x: &[Rational], k: &[i64], n: i64) -> bool {
    let y: Vec<Rational> = x.iter().zip(k).map(|(xi, ki)| xi * int(n) - int(*ki)).collect();
    let mut mx = Rational::zero();
    let mut mn = Rational::zero();
    for v in &y {
        if *v > mx {
            mx = v.clone();
        }
        if *v < mn {
            mn = v.clone();
        }
    }
    mx - mn <= Rational::one()
}

/// The subgrid knot whose N-patch contains `x`, if any.
pub fn knot_for(x: &[Rational], subgrid: &Subgrid) -> Option<GridIndex> {
    let n = subgrid.n;
    let mut cands: Vec<Vec<i64>> = vec![vec![]];
    for (xi, qi) in x.iter().zip(&subgrid.q) {
        let f = (xi * int(n)).floor().to_integer().to_i64().unwrap();
        let mut next = Vec::new();
        for t in &cands {
            for v in (f - 1)..=(f + 1) {
                if v >= 0 && v <= n && v.rem_euclid(3) == *qi {
                    let mut t2 = t.clone();
                    t2.push(v);
                    next.push(t2);
                }
            }
        }
        cands = next;
    }
    cands.into_iter().find(|k| in_patch(x, k, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::eval_rat1;
    use crate::scalar::rat;

    #[test]
    fn simplex_examples() {
        let s = simplex_of(&[rat(3, 10), rat(7, 10)], 1);
        assert_eq!(s.base, vec![0, 0]);
        assert_eq!(s.perm, vec![0, 1]);
        assert_eq!(simplex_of(&[rat(6, 10)], 4).base, vec![2]);
        let t = simplex_of(&[rat(1, 2), rat(1, 2)], 1);
        assert_eq!(t, SimplexId { base: vec![0, 0], perm: vec![0, 1] });
        assert_eq!(simplex_of(&[rat(1, 1)], 4).base, vec![3]);
    }

    #[test]
    fn spike_examples() {
        let net = build_spike(2, &[1], 1).unwrap();
        assert_eq!(eval_rat1(&net, &[rat(1, 2)]).unwrap(), rat(1, 1));
        assert_eq!(eval_rat1(&net, &[rat(0, 1)]).unwrap(), rat(0, 1));
        assert_eq!(eval_rat1(&net, &[rat(1, 4)]).unwrap(), rat(1, 2));
        let p = net.count_params();
        assert_eq!(p.l, 2);
    }

    #[test]
    fn interpolant_examples() {
        let net = build_linear_interpolant(&[vec![0], vec![1]], &[rat(2, 1), rat(3, 1)], 1).unwrap();
        assert_eq!(eval_rat1(&net, &[rat(1, 2)]).unwrap(), rat(5, 2));
        let single = build_linear_interpolant(&[vec![2]], &[rat(7, 1)], 4).unwrap();
        assert_eq!(eval_rat1(&single, &[rat(1, 2)]).unwrap(), rat(7, 1));
        assert_eq!(eval_rat1(&single, &[rat(0, 1)]).unwrap(), rat(0, 1));
        assert!(build_linear_interpolant(&[vec![1], vec![1]], &[rat(1, 1), rat(1, 1)], 2).is_err());
    }

    #[test]
    fn constant_interpolant_examples() {
        let sg = Subgrid::new(vec![0], 6).unwrap();
        let knots = sg.knots();
        let ones = vec![rat(1, 1); 3];
        let net = build_constant_interpolant(&sg, &knots, &ones).unwrap();
        assert_eq!(eval_rat1(&net, &[rat(55, 100)]).unwrap(), rat(1, 1));
        assert_eq!(eval_rat1(&net, &[rat(1, 2)]).unwrap(), rat(1, 1));
        let vals = vec![rat(10, 1), rat(20, 1), rat(30, 1)];
        let net = build_constant_interpolant(&sg, &knots, &vals).unwrap();
        assert_eq!(eval_rat1(&net, &[rat(5, 100)]).unwrap(), rat(10, 1));
        assert!(build_constant_interpolant(&sg, &[vec![1]], &[rat(1, 1)]).is_err());
    }

    #[test]
    fn subgrid_examples() {
        assert_eq!(subgrid_knots(&[0], 6), vec![vec![0], vec![3], vec![6]]);
        assert_eq!(subgrid_knots(&[2], 6), vec![vec![2], vec![5]]);
        let mut all: Vec<GridIndex> = (0..3).flat_map(|q| subgrid_knots(&[q], 6)).collect();
        all.sort();
        assert_eq!(all, (0..=6).map(|v| vec![v]).collect::<Vec<_>>());
    }

    #[test]
    fn knot_for_examples() {
        let sg = Subgrid::new(vec![0], 6).unwrap();
        assert_eq!(knot_for(&[rat(55, 100)], &sg), Some(vec![3]));
        assert_eq!(knot_for(&[rat(3, 10)], &sg), None);
        assert_eq!(knot_for(&[rat(1, 2)], &sg), Some(vec![3]));
    }

    mod props {
        use super::*;
        use crate::eval::eval_rat;
        use proptest::prelude::*;

        fn point(d: usize) -> impl Strategy<Value = Vec<Rational>> {
            prop::collection::vec((0i64..=97).prop_map(|n| rat(n, 97)), d)
        }

        fn all_spikes(n: i64, d: usize) -> Network {
            let knots = all_tuples(n + 1, d);
            let nets: Vec<Network> = knots.iter().map(|k| build_spike(n, k, d).unwrap()).collect();
            crate::net::compose_parallel(&nets, &vec![Rational::one(); nets.len()]).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn spikes_sum_to_one((d, n, x) in (1usize..=3, 1i64..=4).prop_flat_map(|(d, n)| (Just(d), Just(n), point(d)))) {
                prop_assert_eq!(eval_rat1(&all_spikes(n, d), &x).unwrap(), Rational::one());
            }

            #[test]
            fn spike_net_matches_formula(x in point(2), k0 in 0i64..=5, k1 in 0i64..=5) {
                let net = build_spike(5, &[k0, k1], 2).unwrap();
                let y: Vec<Rational> = x.iter().zip([k0, k1]).map(|(xi, k)| xi * int(5) - int(k)).collect();
                prop_assert_eq!(eval_rat1(&net, &x).unwrap(), spike_value(&y));
            }

            #[test]
            fn filters_cover_and_sum((d, x) in (1usize..=2).prop_flat_map(|d| (Just(d), point(d))), n in 3i64..=8) {
                let mut total = Rational::zero();
                let mut found = 0;
                for q in all_tuples(3, d) {
                    let sg = Subgrid::new(q.clone(), n).unwrap();
                    if knot_for(&x, &sg).is_some() {
                        found += 1;
                    }
                    let knots = sg.knots();
                    let ones = vec![Rational::one(); knots.len()];
                    let net = build_linear_interpolant_d(&knots, &ones, n, d).unwrap();
                    total += eval_rat(&net, &x).unwrap()[0].clone();
                }
                prop_assert!(found >= 1);
                prop_assert_eq!(total, Rational::one());
            }

            #[test]
            fn constant_on_patch(k in 0i64..=2, a in 0i64..=40, b in 0i64..=40, v0 in -9i64..9, v1 in -9i64..9) {
                let sg = Subgrid::new(vec![k, k], 6).unwrap();
                let knots = sg.knots();
                let vals: Vec<Rational> = (0..knots.len() as i64).map(|i| int(v0 + v1 * i)).collect();
                let net = build_constant_interpolant(&sg, &knots, &vals).unwrap();
                // a random point of the patch: knot + t * (simplex direction)
                let i = (a as usize) % knots.len();
                let kn = &knots[i];
                let t = rat(b, 40);
                let dir = if a % 2 == 0 { [1i64, 1] } else { [-1, 0] };
                let x: Vec<Rational> = (0..2).map(|j| (int(kn[j]) + &t * int(dir[j])) / int(6)).collect();
                if x.iter().all(|v| *v >= Rational::zero() && *v <= Rational::one()) {
                    prop_assert!(in_patch(&x, kn, 6));
                    prop_assert_eq!(eval_rat1(&net, &x).unwrap(), vals[i].clone());
                }
            }
        }
    }
}
