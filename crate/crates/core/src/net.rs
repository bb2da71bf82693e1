//! Weighted DAG networks: units, affine builder expressions, composition and parameter counts.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{ExactScalar, Rational};

/// Periodic activation family. All are normalized to amplitude 1 and evaluated as
/// `base(2 x / period)` where `base` has period 2, is positive on (0,1) and negative on (1,2).
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaKind {
    Sine,
    Triangle,
    /// Values at `k * period / len`, linearly interpolated and extended periodically.
    Table(Vec<Rational>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSpec {
    pub kind: SigmaKind,
    pub period: Rational,
    /// Lipschitz constant (an upper bound for sine, which has the irrational pi/2 * 4/period).
    pub lipschitz: Rational,
}

impl SigmaSpec {
    /// sin(pi x): period 2, Lipschitz pi bounded above by 355/113 + 1e-6.
    pub fn sine() -> Self {
        SigmaSpec {
            kind: SigmaKind::Sine,
            period: Rational::from_integer(2.into()),
            lipschitz: Rational::new(3_141_593.into(), 1_000_000.into()),
        }
    }

    /// Triangle wave of period 2: 2x on [0,1/2], 2-2x on [1/2,3/2], 2x-4 on [3/2,2].
    pub fn triangle() -> Self {
        SigmaSpec {
            kind: SigmaKind::Triangle,
            period: Rational::from_integer(2.into()),
            lipschitz: Rational::from_integer(2.into()),
        }
    }

    pub fn table(values: Vec<Rational>, period: Rational) -> Result<Self> {
        if values.len() < 2 || period <= Rational::zero() {
            return invalid("table needs at least two samples and a positive period");
        }
        let n = values.len() as i64;
        let mut lip = Rational::zero();
        for i in 0..values.len() {
            let j = (i + 1) % values.len();
            let slope = (&values[j] - &values[i]) * Rational::from_integer(n.into()) / &period;
            let slope = if slope < Rational::zero() { -slope } else { slope };
            if slope > lip {
                lip = slope;
            }
        }
        Ok(SigmaSpec { kind: SigmaKind::Table(values), period, lipschitz: lip })
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self.kind, SigmaKind::Sine)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    Periodic(SigmaSpec),
    /// Coefficients in ascending degree order.
    Polynomial(Vec<Rational>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub id: usize,
    pub activation: Activation,
    pub incoming: Vec<(usize, ExactScalar)>,
    pub bias: ExactScalar,
}

/// Free-form provenance record attached by builders.
pub type Meta = BTreeMap<String, String>;

/// Node ids `0..input_dim` are the inputs; unit `i` has id `input_dim + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub units: Vec<Unit>,
    pub outputs: Vec<usize>,
    pub meta: Meta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    pub w: usize,
    pub l: usize,
    pub width: usize,
}

impl Network {
    pub fn unit(&self, id: usize) -> &Unit {
        &self.units[id - self.input_dim]
    }

    pub fn output_id(&self) -> usize {
        self.outputs[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.input_dim + self.units.len()
    }

    /// Checks topological order, id numbering and output validity.
    pub fn validate(&self) -> Result<()> {
        for (i, u) in self.units.iter().enumerate() {
            let id = self.input_dim + i;
            if u.id != id {
                return invalid(format!("unit {i} has id {} (expected {id})", u.id));
            }
            for (s, _) in &u.incoming {
                if *s >= id {
                    return invalid(format!("unit {id} reads from later node {s}"));
                }
            }
        }
        if self.outputs.is_empty() {
            return invalid("network without outputs");
        }
        for &o in &self.outputs {
            if o < self.input_dim || o >= self.num_nodes() {
                return invalid(format!("output {o} is not a unit"));
            }
        }
        Ok(())
    }

    /// Layer index per node: inputs 0, unit = 1 + max over sources.
    pub fn layer_of(&self) -> Vec<usize> {
        let mut layer = vec![0usize; self.num_nodes()];
        for u in &self.units {
            let l = u.incoming.iter().map(|(s, _)| layer[*s]).max().unwrap_or(0);
            layer[u.id] = l + 1;
        }
        layer
    }

    /// Units that count as hidden: everything except identity outputs that feed nothing.
    pub fn hidden_mask(&self) -> Vec<bool> {
        let mut consumed = vec![false; self.num_nodes()];
        for u in &self.units {
            for (s, _) in &u.incoming {
                consumed[*s] = true;
            }
        }
        let mut hidden = vec![true; self.units.len()];
        for &o in &self.outputs {
            let u = self.unit(o);
            if u.activation == Activation::Identity && !consumed[o] {
                hidden[o - self.input_dim] = false;
            }
        }
        hidden
    }

    /// W = connections + biases + units; L = deepest hidden layer; width = most hidden units in one layer.
    pub fn count_params(&self) -> Params {
        let w: usize = self.units.iter().map(|u| u.incoming.len() + 2).sum();
        let layer = self.layer_of();
        let hidden = self.hidden_mask();
        let mut per_layer: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, u) in self.units.iter().enumerate() {
            if hidden[i] {
                *per_layer.entry(layer[u.id]).or_default() += 1;
            }
        }
        let l = per_layer.keys().max().copied().unwrap_or(0);
        let width = per_layer.values().max().copied().unwrap_or(0);
        Params { w, l, width }
    }

    pub fn count_activation(&self, pred: impl Fn(&Activation) -> bool) -> usize {
        self.units.iter().filter(|u| pred(&u.activation)).count()
    }
}

/// Affine combination of node values plus a constant.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Lin {
    pub terms: BTreeMap<usize, Rational>,
    pub c: Rational,
}

impl Lin {
    pub fn node(id: usize) -> Lin {
        let mut terms = BTreeMap::new();
        terms.insert(id, Rational::one());
        Lin { terms, c: Rational::zero() }
    }

    pub fn constant(c: Rational) -> Lin {
        Lin { terms: BTreeMap::new(), c }
    }

    pub fn zero() -> Lin {
        Lin::constant(Rational::zero())
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Some(id)` when the expression is exactly one node with coefficient 1.
    pub fn as_node(&self) -> Option<usize> {
        if self.c.is_zero() && self.terms.len() == 1 {
            let (id, w) = self.terms.iter().next().unwrap();
            if w.is_one() {
                return Some(*id);
            }
        }
        None
    }

    pub fn add_scaled(&mut self, other: &Lin, s: &Rational) {
        if s.is_zero() {
            return;
        }
        for (id, w) in &other.terms {
            let e = self.terms.entry(*id).or_insert_with(Rational::zero);
            *e += w * s;
            if e.is_zero() {
                self.terms.remove(id);
            }
        }
        self.c += &other.c * s;
    }

    pub fn scaled(&self, s: &Rational) -> Lin {
        let mut out = Lin::zero();
        out.add_scaled(self, s);
        out
    }

    pub fn plus(&self, other: &Lin) -> Lin {
        let mut out = self.clone();
        out.add_scaled(other, &Rational::one());
        out
    }

    pub fn minus(&self, other: &Lin) -> Lin {
        let mut out = self.clone();
        out.add_scaled(other, &-Rational::one());
        out
    }

    pub fn plus_const(&self, c: &Rational) -> Lin {
        let mut out = self.clone();
        out.c += c;
        out
    }

    pub fn sum<'a>(items: impl IntoIterator<Item = (&'a Lin, Rational)>) -> Lin {
        let mut out = Lin::zero();
        for (l, s) in items {
            out.add_scaled(l, &s);
        }
        out
    }
}

/// Incremental constructor. Affine glue is kept symbolic in [`Lin`] and only
/// materialized when it feeds a nonlinear unit or becomes an output.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    input_dim: usize,
    units: Vec<Unit>,
}

impl GraphBuilder {
    pub fn new(input_dim: usize) -> Self {
        GraphBuilder { input_dim, units: Vec::new() }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input(&self, i: usize) -> Lin {
        assert!(i < self.input_dim);
        Lin::node(i)
    }

    pub fn inputs(&self) -> Vec<Lin> {
        (0..self.input_dim).map(Lin::node).collect()
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit(&mut self, activation: Activation, pre: &Lin) -> Lin {
        let id = self.input_dim + self.units.len();
        let incoming = pre
            .terms
            .iter()
            .map(|(s, w)| (*s, ExactScalar::Rational(w.clone())))
            .collect();
        self.units.push(Unit { id, activation, incoming, bias: ExactScalar::Rational(pre.c.clone()) });
        Lin::node(id)
    }

    pub fn relu(&mut self, pre: &Lin) -> Lin {
        self.unit(Activation::Relu, pre)
    }

    pub fn identity(&mut self, pre: &Lin) -> Lin {
        self.unit(Activation::Identity, pre)
    }

    pub fn periodic(&mut self, spec: &SigmaSpec, pre: &Lin) -> Lin {
        self.unit(Activation::Periodic(spec.clone()), pre)
    }

    pub fn poly(&mut self, coeffs: &[Rational], pre: &Lin) -> Lin {
        self.unit(Activation::Polynomial(coeffs.to_vec()), pre)
    }

    /// |v| = relu(v) + relu(-v).
    pub fn abs(&mut self, v: &Lin) -> Lin {
        let p = self.relu(v);
        let n = self.relu(&v.scaled(&-Rational::one()));
        p.plus(&n)
    }

    /// max(a, b) = a + relu(b - a).
    pub fn max(&mut self, a: &Lin, b: &Lin) -> Lin {
        let r = self.relu(&b.minus(a));
        a.plus(&r)
    }

    /// min(a, b) = a - relu(a - b).
    pub fn min(&mut self, a: &Lin, b: &Lin) -> Lin {
        let r = self.relu(&a.minus(b));
        a.minus(&r)
    }

    /// Push a unit with arbitrary (possibly non-rational) weights.
    pub fn raw_unit(&mut self, activation: Activation, incoming: Vec<(usize, ExactScalar)>, bias: ExactScalar) -> Lin {
        let id = self.input_dim + self.units.len();
        self.units.push(Unit { id, activation, incoming, bias });
        Lin::node(id)
    }

    /// Re-creates `net` inside this builder with its inputs replaced by `inputs`.
    /// Identity outputs without consumers come back as symbolic expressions.
    pub fn embed(&mut self, net: &Network, inputs: &[Lin]) -> Result<Vec<Lin>> {
        if inputs.len() != net.input_dim {
            return Err(Error::Dimension { expected: net.input_dim, got: inputs.len() });
        }
        let hidden = net.hidden_mask();
        let mut map: Vec<Lin> = inputs.to_vec();
        for (i, u) in net.units.iter().enumerate() {
            let rational = u.incoming.iter().all(|(_, w)| matches!(w, ExactScalar::Rational(_)))
                && matches!(u.bias, ExactScalar::Rational(_));
            if rational {
                let mut pre = Lin::constant(u.bias.to_rational());
                for (s, w) in &u.incoming {
                    pre.add_scaled(&map[*s], &w.to_rational());
                }
                if !hidden[i] {
                    map.push(pre);
                } else {
                    let v = self.unit(u.activation.clone(), &pre);
                    map.push(v);
                }
            } else {
                // keep non-rational weights verbatim; sources must already be single nodes
                let mut incoming = Vec::new();
                for (s, w) in &u.incoming {
                    let src = match map[*s].as_node() {
                        Some(id) => id,
                        None => {
                            let id = self.identity(&map[*s]);
                            id.as_node().unwrap()
                        }
                    };
                    incoming.push((src, w.clone()));
                }
                let v = self.raw_unit(u.activation.clone(), incoming, u.bias.clone());
                map.push(v);
            }
        }
        Ok(net.outputs.iter().map(|o| map[*o].clone()).collect())
    }

    /// Finalizes; each output expression that is not already a plain unit gets an identity unit.
    pub fn finish(mut self, outputs: &[Lin], meta: Meta) -> Network {
        let mut ids = Vec::with_capacity(outputs.len());
        let mut used = std::collections::BTreeSet::new();
        for o in outputs {
            let id = match o.as_node() {
                Some(id) if id >= self.input_dim && !used.contains(&id) => id,
                _ => self.identity(o).as_node().unwrap(),
            };
            used.insert(id);
            ids.push(id);
        }
        Network { input_dim: self.input_dim, units: self.units, outputs: ids, meta }
    }
}

/// Serial composition b(a(x)); a's outputs feed b's inputs in order.
pub fn compose_serial(a: &Network, b: &Network) -> Result<Network> {
    if a.outputs.len() != b.input_dim {
        return Err(Error::Dimension { expected: b.input_dim, got: a.outputs.len() });
    }
    let mut g = GraphBuilder::new(a.input_dim);
    let mid = g.embed(a, &g.inputs())?;
    let out = g.embed(b, &mid)?;
    let mut meta = Meta::new();
    meta.insert("variant".into(), "serial".into());
    Ok(g.finish(&out, meta))
}

/// Weighted sum of scalar networks over a shared input.
pub fn compose_parallel(nets: &[Network], weights: &[Rational]) -> Result<Network> {
    if nets.is_empty() {
        return invalid("empty network list");
    }
    if nets.len() != weights.len() {
        return invalid(format!("{} nets but {} weights", nets.len(), weights.len()));
    }
    let d = nets[0].input_dim;
    let mut g = GraphBuilder::new(d);
    let mut acc = Lin::zero();
    for (n, w) in nets.iter().zip(weights) {
        if n.input_dim != d {
            return Err(Error::Dimension { expected: d, got: n.input_dim });
        }
        let outs = g.embed(n, &g.inputs())?;
        acc.add_scaled(&outs[0], w);
    }
    let mut meta = Meta::new();
    meta.insert("variant".into(), "parallel".into());
    Ok(g.finish(&[acc], meta))
}

pub fn meta_of(pairs: &[(&str, String)]) -> Meta {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{eval_network, eval_rat1};
    use crate::partition::build_spike;
    use crate::scalar::{int, rat, Mode};
    use proptest::prelude::*;

    fn affine(a: Rational, b: Rational) -> Network {
        let g = GraphBuilder::new(1);
        let y = g.input(0).scaled(&a).plus_const(&b);
        g.finish(&[y], Meta::new())
    }

    fn relu_net(shift: Rational) -> Network {
        let mut g = GraphBuilder::new(1);
        let y = g.relu(&g.input(0).plus_const(&-shift));
        g.finish(&[y], Meta::new())
    }

    #[test]
    fn eval_examples() {
        let net = relu_net(int(1));
        assert_eq!(eval_rat1(&net, &[int(2)]).unwrap(), int(1));
        let p = net.count_params();
        // relu unit plus its identity output
        assert_eq!((p.l, p.width), (1, 1));
        let spike = build_spike(1, &[0], 1).unwrap();
        assert_eq!(eval_rat1(&spike, &[int(0)]).unwrap(), int(1));
        let mut g = GraphBuilder::new(1);
        let mut v = g.input(0);
        for _ in 0..5 {
            v = g.identity(&v);
        }
        let chain = g.finish(&[v], Meta::new());
        assert_eq!(eval_rat1(&chain, &[rat(3, 7)]).unwrap(), rat(3, 7));
        assert!(eval_rat1(&chain, &[int(1), int(2)]).is_err());
    }

    #[test]
    fn count_examples() {
        let net = Network {
            input_dim: 1,
            units: vec![Unit {
                id: 1,
                activation: Activation::Relu,
                incoming: vec![(0, ExactScalar::Rational(int(1)))],
                bias: ExactScalar::Rational(int(-1)),
            }],
            outputs: vec![1],
            meta: Meta::new(),
        };
        assert_eq!(net.count_params(), Params { w: 3, l: 1, width: 1 });
        let flat = affine(int(2), int(1));
        assert_eq!(flat.count_params().l, 0);
    }

    #[test]
    fn serial_examples() {
        let s = compose_serial(&affine(int(2), int(0)), &affine(int(1), int(1))).unwrap();
        assert_eq!(eval_rat1(&s, &[int(1)]).unwrap(), int(3));
        let spike = build_spike(2, &[1], 1).unwrap();
        let s = compose_serial(&spike, &affine(int(3), int(0))).unwrap();
        assert_eq!(eval_rat1(&s, &[rat(1, 2)]).unwrap(), int(3));
        let s = compose_serial(&relu_net(int(0)), &relu_net(int(0))).unwrap();
        assert_eq!(eval_rat1(&s, &[int(-1)]).unwrap(), int(0));
        assert_eq!(s.count_params().l, 2);
        let two = build_spike(1, &[0, 0], 2).unwrap();
        assert!(compose_serial(&two, &two).is_err());
    }

    #[test]
    fn parallel_examples() {
        let id = affine(int(1), int(0));
        let z = compose_parallel(&[id.clone(), id.clone()], &[int(1), int(-1)]).unwrap();
        assert_eq!(eval_rat1(&z, &[rat(5, 9)]).unwrap(), int(0));
        let a = build_spike(1, &[0], 1).unwrap();
        let b = build_spike(1, &[1], 1).unwrap();
        let s = compose_parallel(&[a.clone(), b.clone()], &[int(2), int(3)]).unwrap();
        assert_eq!(eval_rat1(&s, &[int(0)]).unwrap(), int(2));
        assert_eq!(eval_rat1(&s, &[int(1)]).unwrap(), int(3));
        assert_eq!(s.count_params().width, a.count_params().width + b.count_params().width);
        let one = compose_parallel(&[a.clone()], &[int(5)]).unwrap();
        assert_eq!(eval_rat1(&one, &[int(0)]).unwrap(), int(5));
        assert!(compose_parallel(&[], &[]).is_err());
        assert!(compose_parallel(&[a], &[int(1), int(2)]).is_err());
    }

    #[test]
    fn sine_needs_bigfloat() {
        let mut g = GraphBuilder::new(1);
        let y = g.periodic(&SigmaSpec::sine(), &g.input(0));
        let net = g.finish(&[y], Meta::new());
        let x = [ExactScalar::Rational(rat(1, 2))];
        assert!(eval_network(&net, &x, Mode::Rational).is_err());
        let v = eval_network(&net, &x, Mode::BigFloat { mantissa_bits: 128 }).unwrap();
        assert!((v.to_f64() - 1.0).abs() < 1e-30);
        assert!(eval_network(&net, &x, Mode::BigFloat { mantissa_bits: 32 }).is_err());
    }

    #[test]
    fn sigma_invariants() {
        for s in [SigmaSpec::sine(), SigmaSpec::triangle()] {
            assert!(s.period > Rational::zero());
        }
        assert!(SigmaSpec::table(vec![int(0)], int(1)).is_err());
        let t = SigmaSpec::table(vec![int(0), int(1), int(0), int(-1)], int(4)).unwrap();
        assert_eq!(t.lipschitz, int(1));
    }

    fn small_rat() -> impl Strategy<Value = Rational> {
        (-40i64..40, 1i64..12).prop_map(|(n, d)| rat(n, d))
    }

    fn random_relu_net() -> impl Strategy<Value = Network> {
        prop::collection::vec((small_rat(), small_rat(), small_rat()), 1..6).prop_map(|layers| {
            let mut g = GraphBuilder::new(1);
            let mut v = g.input(0);
            let x = g.input(0);
            for (a, b, c) in layers {
                v = g.relu(&v.scaled(&a).plus(&x.scaled(&c)).plus_const(&b));
            }
            g.finish(&[v], Meta::new())
        })
    }

    proptest! {
        #[test]
        fn serial_is_composition(a in random_relu_net(), b in random_relu_net(), x in small_rat()) {
            let s = compose_serial(&a, &b).unwrap();
            let want = eval_rat1(&b, &[eval_rat1(&a, &[x.clone()]).unwrap()]).unwrap();
            prop_assert_eq!(eval_rat1(&s, &[x]).unwrap(), want);
        }

        #[test]
        fn parallel_is_weighted_sum(a in random_relu_net(), b in random_relu_net(),
                                    wa in small_rat(), wb in small_rat(), x in small_rat()) {
            let s = compose_parallel(&[a.clone(), b.clone()], &[wa.clone(), wb.clone()]).unwrap();
            let want = wa * eval_rat1(&a, &[x.clone()]).unwrap() + wb * eval_rat1(&b, &[x.clone()]).unwrap();
            prop_assert_eq!(eval_rat1(&s, &[x]).unwrap(), want);
            prop_assert!(s.count_params().width <= a.count_params().width + b.count_params().width);
        }

        #[test]
        fn rational_eval_is_canonical(a in random_relu_net(), x in small_rat()) {
            let y1 = eval_rat1(&a, &[x.clone()]).unwrap();
            let y2 = eval_rat1(&a, &[x]).unwrap();
            prop_assert_eq!(y1.numer().to_string(), y2.numer().to_string());
            prop_assert!(*y1.denom() > 0.into());
        }
    }
}
