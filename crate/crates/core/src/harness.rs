//! Sup-norm error estimates, rate sweeps over the function corpus, least-squares
//! rate fits and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::builders::{build, eval_bits_of, Budget, BuildRequest, Variant};
use crate::error::{invalid, Error, Result};
use crate::eval::{Compiled, FloatArith, RatArith};
use crate::net::{Activation, Network, SigmaSpec};
use crate::scalar::{int, rat_to_f64, BigFloat, ExactScalar, Mode, Rational};

pub use crate::oracle::{corpus, corpus_fn, FunctionOracle};

/// Where the sup norm is sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    /// Grid intervals per axis; raised to at least 4x the finest scale of the network.
    pub per_axis: usize,
    pub random: usize,
    pub seed: u64,
    /// Evaluation arithmetic. When unset: exact for plain networks, big floats at the
    /// recommended precision for networks that declare one or contain periodic units.
    pub mode: Option<Mode>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { per_axis: 0, random: 10_000, seed: 0, mode: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorEstimate {
    pub sup: Rational,
    pub at: Vec<Rational>,
    pub per_axis: usize,
    pub random: usize,
    pub points: usize,
}

impl ErrorEstimate {
    pub fn describe(&self) -> String {
        format!("grid {} per axis + {} random points", self.per_axis, self.random)
    }
}

/// Finest grid scale recorded by a builder (M, else N), or 1.
pub fn finest_scale(net: &Network) -> usize {
    ["M", "N"]
        .iter()
        .filter_map(|k| net.meta.get(*k).and_then(|v| v.parse::<usize>().ok()))
        .max()
        .unwrap_or(1)
}

fn has_periodic(net: &Network) -> bool {
    net.units.iter().any(|u| matches!(u.activation, Activation::Periodic(_)))
}

enum Evaluator {
    Exact(Compiled<RatArith>),
    Float(Compiled<FloatArith>),
}

impl Evaluator {
    fn new(net: &Network, mode: Option<Mode>) -> Result<Self> {
        let exact_ok = !has_periodic(net) && !net.meta.contains_key("eval_bits");
        let auto = if exact_ok { Mode::Rational } else { Mode::BigFloat { mantissa_bits: eval_bits_of(net, 128) } };
        let mode = mode.unwrap_or(auto);
        match mode {
            Mode::Rational => {
                if has_periodic(net) {
                    return Err(Error::Precision("periodic networks cannot be measured in rational mode".into()));
                }
                Ok(Evaluator::Exact(Compiled::new(net, RatArith)?))
            }
            Mode::BigFloat { mantissa_bits } => Ok(Evaluator::Float(Compiled::new(net, FloatArith { bits: mantissa_bits })?)),
            Mode::F64 => invalid("error estimates need exact or big-float evaluation"),
        }
    }

    fn eval(&self, x: &[Rational]) -> Result<Rational> {
        match self {
            Evaluator::Exact(c) => Ok(c.eval(x)?[0].clone()),
            Evaluator::Float(c) => {
                let bits = c.arith().bits;
                let xs: Vec<BigFloat> = x.iter().map(|v| BigFloat::from_rational(v, bits)).collect();
                Ok(c.eval(&xs)?[0].to_rational())
            }
        }
    }
}

fn grid_points(d: usize, n: usize) -> Vec<Vec<Rational>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * (n + 1));
        for p in &out {
            for i in 0..=n {
                let mut q = p.clone();
                q.push(Rational::new((i as i64).into(), (n as i64).into()));
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// max |net - f| over a uniform grid and seeded random points of [0,1]^d (an estimate, not a bound).
pub fn measure_error(net: &Network, f: &dyn FunctionOracle, spec: &GridSpec) -> Result<ErrorEstimate> {
    let d = f.dim();
    if net.input_dim != d {
        return Err(Error::Dimension { expected: d, got: net.input_dim });
    }
    let ev = Evaluator::new(net, spec.mode)?;
    let per_axis = spec.per_axis.max(4 * finest_scale(net));
    let mut pts = grid_points(d, per_axis);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let den: i64 = 1 << 30;
    for _ in 0..spec.random {
        pts.push((0..d).map(|_| Rational::new(rng.gen_range(0..=den).into(), den.into())).collect());
    }
    let mut sup = Rational::zero();
    let mut at = pts[0].clone();
    for x in &pts {
        let e = (ev.eval(x)? - f.evaluate(x)?).abs();
        if e > sup {
            sup = e;
            at = x.clone();
        }
    }
    Ok(ErrorEstimate { sup, at, per_axis, random: spec.random, points: pts.len() })
}

/// One measured (network, function) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub variant: String,
    pub d: usize,
    pub r: Rational,
    pub p_target: Option<Rational>,
    pub w: usize,
    pub l: usize,
    pub width: usize,
    /// Decimal rendering of the measured sup error.
    pub sup_error: String,
    pub enc_weights: u64,
    pub bits_per_enc: String,
    pub fn_id: String,
    pub seed: u64,
}

impl RateRow {
    pub fn error(&self) -> f64 {
        self.sup_error.parse().unwrap_or(f64::NAN)
    }
}

pub const CSV_HEADER: &str = "variant,d,r,p_target,W,L,width,sup_error,enc_weights,bits_per_enc,fn,seed";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

pub fn format_error(e: &Rational) -> String {
    format!("{:.9e}", rat_to_f64(e))
}

impl RateTable {
    pub fn push(&mut self, row: RateRow) -> Result<()> {
        if row.w == 0 || row.l == 0 {
            return invalid("rows need W > 0 and L > 0");
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let p = r.p_target.as_ref().map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.variant, r.d, r.r, p, r.w, r.l, r.width, r.sup_error, r.enc_weights, r.bits_per_enc, r.fn_id, r.seed
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Parse("unexpected CSV header".into()));
        }
        let mut t = RateTable::default();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 12 {
                return Err(Error::Parse(format!("row {}: expected 12 fields", i + 1)));
            }
            let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", i + 1));
            let rat = |s: &str, what: &str| s.parse::<Rational>().map_err(|_| bad(what));
            t.push(RateRow {
                variant: c[0].to_string(),
                d: c[1].parse().map_err(|_| bad("d"))?,
                r: rat(c[2], "r")?,
                p_target: if c[3].is_empty() { None } else { Some(rat(c[3], "p_target")?) },
                w: c[4].parse().map_err(|_| bad("W"))?,
                l: c[5].parse().map_err(|_| bad("L"))?,
                width: c[6].parse().map_err(|_| bad("width"))?,
                sup_error: c[7].to_string(),
                enc_weights: c[8].parse().map_err(|_| bad("enc_weights"))?,
                bits_per_enc: c[9].to_string(),
                fn_id: c[10].to_string(),
                seed: c[11].parse().map_err(|_| bad("seed"))?,
            })?;
        }
        Ok(t)
    }

    /// Rows grouped by (variant, d, r, fn) in first-seen order.
    pub fn groups(&self) -> Vec<Vec<&RateRow>> {
        let mut order: Vec<(String, usize, Rational, String)> = Vec::new();
        let mut map: BTreeMap<usize, Vec<&RateRow>> = BTreeMap::new();
        for row in &self.rows {
            let key = (row.variant.clone(), row.d, row.r.clone(), row.fn_id.clone());
            let idx = match order.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    order.push(key);
                    order.len() - 1
                }
            };
            map.entry(idx).or_default().push(row);
        }
        map.into_values().collect()
    }
}

/// Bits in the single seed of a deep Fourier network.
fn seed_bits(net: &Network) -> Option<u64> {
    let id: usize = net.meta.get("seed_unit")?.parse().ok()?;
    Some(match &net.unit(id).bias {
        ExactScalar::Rational(r) => r.denom().bits().max(r.numer().bits()),
        ExactScalar::BigFloat(b) => b.precision() as u64,
    })
}

/// Encoding-weight statistics from builder metadata.
pub fn encoding_stats(net: &Network) -> (u64, String) {
    let count = net.meta.get("enc_weights").and_then(|v| v.parse().ok()).unwrap_or(0);
    let bits = match net.meta.get("bits_per_enc") {
        Some(b) => b.clone(),
        None => seed_bits(net).map(|b| b.to_string()).unwrap_or_else(|| "0".into()),
    };
    (count, bits)
}

/// The rate the builder targets: p for the deep variants, r/d for shallow and 2r/d for fixed width.
pub fn theory_rate(variant: Variant, d: usize, r: &Rational, p: Option<&Rational>) -> Option<Rational> {
    match variant {
        Variant::Shallow => Some(r / int(d as i64)),
        Variant::FixedWidth => Some(int(2) * r / int(d as i64)),
        Variant::DeepPhase | Variant::PolyActivation => p.cloned(),
        Variant::DeepFourier => None,
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub variant: Variant,
    pub d: usize,
    pub r: Rational,
    pub p: Option<Rational>,
    pub budgets: Vec<Budget>,
    /// Corpus ids to use; all of the corpus when empty.
    pub fns: Vec<String>,
    pub seed: u64,
    pub grid: GridSpec,
    pub sigma: Option<SigmaSpec>,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub table: RateTable,
    /// (budget, fn, message) for builds or measurements that failed.
    pub failures: Vec<(String, String, String)>,
    pub grid: String,
}

fn budget_label(b: &Budget) -> String {
    match b {
        Budget::Weights(w) => format!("W={w}"),
        Budget::Scale(s) => format!("scale={s}"),
        Budget::Accuracy(e) => format!("eps={e}"),
    }
}

pub fn sweep_rates(cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.budgets.len() < 4 {
        return invalid("a sweep needs at least 4 budget points");
    }
    let fns: Vec<Box<dyn FunctionOracle>> = corpus(cfg.d, &cfg.r, cfg.seed)?
        .into_iter()
        .filter(|f| cfg.fns.is_empty() || cfg.fns.iter().any(|id| id == f.id()))
        .collect();
    if fns.is_empty() {
        return invalid("no corpus functions selected");
    }
    let p_target = theory_rate(cfg.variant, cfg.d, &cfg.r, cfg.p.as_ref());
    let mut out = SweepResult::default();
    for b in &cfg.budgets {
        for f in &fns {
            let req = BuildRequest {
                f: f.as_ref(),
                variant: cfg.variant,
                p: cfg.p.clone(),
                budget: b.clone(),
                sigma: cfg.sigma.clone(),
            };
            let measured = build(&req).and_then(|net| measure_error(&net, f.as_ref(), &cfg.grid).map(|e| (net, e)));
            let (net, est) = match measured {
                Ok(v) => v,
                Err(e) => {
                    out.failures.push((budget_label(b), f.id().to_string(), e.to_string()));
                    continue;
                }
            };
            let pc = net.count_params();
            let (enc, bits) = encoding_stats(&net);
            out.grid = est.describe();
            out.table.push(RateRow {
                variant: cfg.variant.name().to_string(),
                d: cfg.d,
                r: cfg.r.clone(),
                p_target: p_target.clone(),
                w: pc.w,
                l: pc.l.max(1),
                width: pc.width,
                sup_error: format_error(&est.sup),
                enc_weights: enc,
                bits_per_enc: bits,
                fn_id: f.id().to_string(),
                seed: cfg.seed,
            })?;
        }
    }
    Ok(out)
}

/// Rows where the error grows by more than `slack` (relative) as W increases, per function.
pub fn monotone_violations(table: &RateTable, slack: f64) -> Vec<String> {
    let mut out = Vec::new();
    for g in table.groups() {
        let mut rows = g.clone();
        rows.sort_by_key(|r| r.w);
        for pair in rows.windows(2) {
            let (a, b) = (pair[0].error(), pair[1].error());
            if b > a * (1.0 + slack) {
                out.push(format!("{} {}: W {} -> {} error {a:e} -> {b:e}", pair[0].variant, pair[0].fn_id, pair[0].w, pair[1].w));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitModel {
    /// log e = s log W + c
    Power,
    /// log e = s log W + log log W + c
    PowerLog,
    /// log e = s sqrt(W) + c
    SqrtExp,
}

impl FitModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(FitModel::Power),
            "powerlog" => Ok(FitModel::PowerLog),
            "sqrtexp" => Ok(FitModel::SqrtExp),
            _ => invalid(format!("unknown fit model {s}")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FitModel::Power => "power",
            FitModel::PowerLog => "powerlog",
            FitModel::SqrtExp => "sqrtexp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r2: f64,
    pub rss: f64,
    pub n: usize,
}

/// Ordinary least squares y = slope x + intercept.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return invalid("a line fit needs at least two paired points");
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("a line fit needs distinct x values");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - rss / syy };
    let stderr = if n > 2 { (rss / (nf - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(LineFit { slope, intercept, stderr, r2, rss, n })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub variant: String,
    pub d: usize,
    pub r: Rational,
    pub fn_id: String,
    pub model: FitModel,
    pub line: LineFit,
    pub theory: Option<Rational>,
    /// Rows left out of the fit and why.
    pub warnings: Vec<String>,
}

impl RateFit {
    pub fn slope(&self) -> f64 {
        self.line.slope
    }

    pub fn summary(&self) -> String {
        let head = format!("{} d={} r={}", self.variant, self.d, self.r);
        match self.model {
            FitModel::SqrtExp => format!("{head}: c = {:.3} (log error vs sqrt W, R² = {:.3})", -self.line.slope, self.line.r2),
            _ => {
                let theory = self.theory.as_ref().map(|t| fmt_theory(rat_to_f64(t))).unwrap_or_else(|| "n/a".into());
                format!("{head}: p̂ = {:.3} vs theory {theory}", -self.line.slope)
            }
        }
    }
}

fn fmt_theory(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Model-specific transform of (W, error) into line coordinates.
pub fn fit_points(w: &[f64], err: &[f64], model: FitModel) -> (Vec<f64>, Vec<f64>) {
    let xs = w
        .iter()
        .map(|&w| match model {
            FitModel::SqrtExp => w.sqrt(),
            _ => w.ln(),
        })
        .collect();
    let ys = w
        .iter()
        .zip(err)
        .map(|(&w, &e)| match model {
            FitModel::PowerLog => e.ln() - w.ln().ln(),
            _ => e.ln(),
        })
        .collect();
    (xs, ys)
}

/// Fits rows that share (variant, d, r, fn); zero-error rows are dropped with a warning.
pub fn fit_rate(rows: &[&RateRow], model: FitModel) -> Result<RateFit> {
    let first = rows.first().ok_or_else(|| Error::Invalid("no rows to fit".into()))?;
    if rows.iter().any(|r| r.variant != first.variant || r.d != first.d || r.r != first.r || r.fn_id != first.fn_id) {
        return invalid("fit rows must share variant, d, r and fn");
    }
    let mut warnings = Vec::new();
    let mut w = Vec::new();
    let mut e = Vec::new();
    for r in rows {
        let err = r.error();
        if !(err > 0.0) {
            warnings.push(format!("W={} excluded: error {}", r.w, r.sup_error));
            continue;
        }
        w.push(r.w as f64);
        e.push(err);
    }
    if w.len() < 4 {
        return invalid(format!("need at least 4 usable rows, have {}", w.len()));
    }
    let (xs, ys) = fit_points(&w, &e, model);
    Ok(RateFit {
        variant: first.variant.clone(),
        d: first.d,
        r: first.r.clone(),
        fn_id: first.fn_id.clone(),
        model,
        line: fit_line(&xs, &ys)?,
        theory: first.p_target.clone(),
        warnings,
    })
}

/// Fits every group of the table with enough nonzero rows.
pub fn fit_table(table: &RateTable, model: FitModel) -> Vec<RateFit> {
    table.groups().iter().filter_map(|g| fit_rate(g, model).ok()).collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

/// Log-log scatter of error against W, one colour per function.
pub fn render_svg(rows: &[&RateRow], title: &str) -> String {
    let pts: Vec<(f64, f64, &str)> = rows
        .iter()
        .filter(|r| r.error() > 0.0)
        .map(|r| ((r.w as f64).log10(), r.error().log10(), r.fn_id.as_str()))
        .collect();
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>\n",
        w / 2.0
    );
    let (x0, y0, x1, y1) = (pad, h - pad, w - pad, pad);
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">log10 W</text>",
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{}\" transform=\"rotate(-90 18 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">log10 sup error</text>",
        h / 2.0,
        h / 2.0
    );
    if !pts.is_empty() {
        let span = |v: Vec<f64>| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-9 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (ax, bx) = span(pts.iter().map(|p| p.0).collect());
        let (ay, by) = span(pts.iter().map(|p| p.1).collect());
        let mut ids: Vec<&str> = Vec::new();
        for (px, py, id) in &pts {
            let k = match ids.iter().position(|i| i == id) {
                Some(k) => k,
                None => {
                    ids.push(id);
                    ids.len() - 1
                }
            };
            let cx = x0 + (px - ax) / (bx - ax) * (x1 - x0);
            let cy = y0 - (py - ay) / (by - ay) * (y0 - y1);
            let _ = writeln!(s, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{}\"/>", PALETTE[k % PALETTE.len()]);
        }
        for (k, id) in ids.iter().enumerate() {
            let ly = y1 + 16.0 * k as f64;
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{ly}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{id}</text>",
                x1 - 70.0,
                PALETTE[k % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{x0}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{ax:.2}</text><text x=\"{x1}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{bx:.2}</text>",
            y0 + 14.0,
            y0 + 14.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{y0}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{ay:.2}</text><text x=\"{}\" y=\"{y1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{by:.2}</text>",
            x0 - 4.0,
            x0 - 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes rates.csv, summary.txt and one SVG per (variant, d, r) into `dir`.
pub fn emit_report(table: &RateTable, fits: &[RateFit], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let csv = dir.join("rates.csv");
    std::fs::write(&csv, table.to_csv())?;
    written.push(csv);
    let mut summary = String::new();
    for f in fits {
        let _ = writeln!(summary, "{}", f.summary());
    }
    let sum = dir.join("summary.txt");
    std::fs::write(&sum, summary)?;
    written.push(sum);
    let mut panels: Vec<((String, usize, Rational), Vec<&RateRow>)> = Vec::new();
    for row in &table.rows {
        let key = (row.variant.clone(), row.d, row.r.clone());
        match panels.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(row),
            None => panels.push((key, vec![row])),
        }
    }
    for ((variant, d, r), rows) in panels {
        let name = format!("{variant}_d{d}_r{}.svg", r.to_string().replace('/', "_"));
        let path = dir.join(name);
        std::fs::write(&path, render_svg(&rows, &format!("{variant} d={d} r={r}")))?;
        written.push(path);
    }
    Ok(written)
}
