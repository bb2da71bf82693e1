use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use approxnet::builders::{build, eval_bits_of, Budget, BuildRequest, Variant};
use approxnet::eval::eval_outputs;
use approxnet::fourier::{attach_seed, export_seed, seed_from_json, seed_to_json, strip_seed};
use approxnet::harness::{corpus_fn, emit_report, fit_table, sweep_rates, FitModel, GridSpec, RateTable, SweepConfig};
use approxnet::serialize::{load_network, save_network};
use approxnet::{ExactScalar, Mode, Rational, SigmaSpec};

#[derive(Parser)]
#[command(name = "approxnet", version, about = "Build, evaluate and benchmark explicit approximation networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a network for one corpus function.
    Build(BuildArgs),
    /// Evaluate a saved network at one point.
    Eval {
        #[arg(long)]
        net: PathBuf,
        /// Comma-separated coordinates (rationals such as 1/3 or decimals).
        #[arg(long)]
        x: String,
        /// rational, f64 or bits=N; defaults to the network's recommended precision.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Run a rate sweep described by a config file and write the CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit error against size for every group of a rate table.
    Fit {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "power")]
        model: String,
    },
    /// Write CSV, summary and SVG plots for a rate table.
    Report {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a deep Fourier network into skeleton and seed, or put them back together.
    Seed {
        #[command(subcommand)]
        op: SeedOp,
    },
}

#[derive(Subcommand)]
enum SeedOp {
    Export {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Strip {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Attach {
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        seed: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct BuildArgs {
    /// shallow, deep, fixed-width, poly or fourier
    #[arg(long)]
    variant: String,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    r: String,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    /// Grid scale: M (shallow), N (deep, poly) or U (fourier).
    #[arg(long)]
    scale: Option<i64>,
    /// Weight budget, used instead of --scale.
    #[arg(long)]
    w: Option<u64>,
    #[arg(long = "fn")]
    fn_id: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// triangle or sine (fourier only).
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the seed weight of a fourier network here.
    #[arg(long)]
    seed_out: Option<PathBuf>,
}

fn parse_rat(s: &str) -> Result<Rational> {
    let s = s.trim();
    if let Ok(r) = s.parse::<Rational>() {
        return Ok(r);
    }
    // decimals: exact conversion of the written digits
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (int_part, frac) = body.split_once('.').ok_or_else(|| anyhow!("not a number: {s}"))?;
    let digits = format!("{int_part}{frac}");
    let num: num_bigint::BigInt = digits.parse().map_err(|_| anyhow!("not a number: {s}"))?;
    let den = num_bigint::BigInt::from(10u32).pow(frac.len() as u32);
    let r = Rational::new(num, den);
    Ok(if neg { -r } else { r })
}

fn parse_variant(s: &str) -> Result<Variant> {
    Ok(Variant::parse(&s.replace('-', "_"))?)
}

fn parse_sigma(s: Option<&str>) -> Result<Option<SigmaSpec>> {
    match s {
        None => Ok(None),
        Some("triangle") => Ok(Some(SigmaSpec::triangle())),
        Some("sine") => Ok(Some(SigmaSpec::sine())),
        Some(other) => bail!("unknown sigma {other}"),
    }
}

fn default_scale(v: Variant) -> i64 {
    match v {
        Variant::Shallow => 8,
        Variant::DeepFourier => 3,
        _ => 2,
    }
}

fn cmd_build(a: &BuildArgs) -> Result<()> {
    let variant = parse_variant(&a.variant)?;
    let r = parse_rat(&a.r)?;
    let f = corpus_fn(a.d, &r, a.seed, &a.fn_id)?;
    let p = a.p.as_deref().map(parse_rat).transpose()?;
    let budget = match (&a.eps, a.w, a.scale) {
        (Some(e), _, _) => Budget::Accuracy(parse_rat(e)?),
        (None, Some(w), _) => Budget::Weights(w),
        (None, None, Some(s)) => Budget::Scale(s),
        (None, None, None) => Budget::Scale(default_scale(variant)),
    };
    let req = BuildRequest { f: f.as_ref(), variant, p, budget, sigma: parse_sigma(a.sigma.as_deref())? };
    let net = build(&req)?;
    save_network(&net, &a.out)?;
    let pc = net.count_params();
    println!("{} W={} L={} width={} -> {}", variant.name(), pc.w, pc.l, pc.width, a.out.display());
    if let Some(path) = &a.seed_out {
        std::fs::write(path, seed_to_json(&export_seed(&net)?))?;
    }
    Ok(())
}

fn parse_mode(s: Option<&str>, net: &approxnet::Network) -> Result<Mode> {
    Ok(match s {
        None => Mode::bigfloat(eval_bits_of(net, 128))?,
        Some("rational") => Mode::Rational,
        Some("f64") => Mode::F64,
        Some(other) => {
            let bits = other.strip_prefix("bits=").ok_or_else(|| anyhow!("unknown mode {other}"))?;
            Mode::bigfloat(bits.parse()?)?
        }
    })
}

fn cmd_eval(net: &Path, x: &str, mode: Option<&str>) -> Result<()> {
    let net = load_network(net)?;
    let xs: Vec<ExactScalar> = x.split(',').map(|v| parse_rat(v).map(ExactScalar::Rational)).collect::<Result<_>>()?;
    let mode = parse_mode(mode, &net)?;
    for y in eval_outputs(&net, &xs, mode)? {
        match y {
            ExactScalar::Rational(r) => println!("{r}"),
            other => println!("{:e}", other.to_f64()),
        }
    }
    Ok(())
}

/// Sweep config file: TOML with the same keys as the build flags, budgets as lists.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    variant: String,
    d: usize,
    r: String,
    p: Option<String>,
    #[serde(default)]
    eps: Vec<String>,
    #[serde(default)]
    scale: Vec<i64>,
    #[serde(default)]
    w: Vec<u64>,
    #[serde(default, rename = "fn")]
    fns: Vec<String>,
    #[serde(default)]
    seed: u64,
    random: Option<usize>,
    per_axis: Option<usize>,
    sigma: Option<String>,
}

fn load_sweep(path: &Path) -> Result<SweepConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let c: SweepFile = toml::from_str(&text)?;
    let mut budgets: Vec<Budget> = Vec::new();
    for e in &c.eps {
        budgets.push(Budget::Accuracy(parse_rat(e)?));
    }
    budgets.extend(c.scale.iter().map(|&s| Budget::Scale(s)));
    budgets.extend(c.w.iter().map(|&w| Budget::Weights(w)));
    let mut grid = GridSpec { seed: c.seed, ..Default::default() };
    if let Some(n) = c.random {
        grid.random = n;
    }
    if let Some(n) = c.per_axis {
        grid.per_axis = n;
    }
    Ok(SweepConfig {
        variant: parse_variant(&c.variant)?,
        d: c.d,
        r: parse_rat(&c.r)?,
        p: c.p.as_deref().map(parse_rat).transpose()?,
        budgets,
        fns: c.fns,
        seed: c.seed,
        grid,
        sigma: parse_sigma(c.sigma.as_deref())?,
    })
}

fn cmd_sweep(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_sweep(config)?;
    let res = sweep_rates(&cfg)?;
    for (b, f, e) in &res.failures {
        eprintln!("failed {b} {f}: {e}");
    }
    eprintln!("{} rows, {}", res.table.rows.len(), res.grid);
    let csv = res.table.to_csv();
    match out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn load_table(path: &Path) -> Result<RateTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RateTable::from_csv(&text)?)
}

fn cmd_fit(table: &Path, model: &str) -> Result<()> {
    let t = load_table(table)?;
    let model = FitModel::parse(model)?;
    let fits = fit_table(&t, model);
    if fits.is_empty() {
        bail!("no group has 4 usable rows");
    }
    for f in fits {
        for w in &f.warnings {
            eprintln!("warning ({}): {w}", f.fn_id);
        }
        println!(
            "{} [{}] slope {:.4} ± {:.4}, R² {:.4}",
            f.summary(),
            f.fn_id,
            f.line.slope,
            f.line.stderr,
            f.line.r2
        );
    }
    Ok(())
}

fn cmd_report(table: &Path, out: &Path) -> Result<()> {
    let t = load_table(table)?;
    let mut fits = Vec::new();
    for group in t.groups() {
        let model = if group[0].variant == Variant::DeepFourier.name() { FitModel::SqrtExp } else { FitModel::Power };
        if let Ok(f) = approxnet::harness::fit_rate(&group, model) {
            fits.push(f);
        }
    }
    for p in emit_report(&t, &fits, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_seed(op: &SeedOp) -> Result<()> {
    match op {
        SeedOp::Export { net, out } => std::fs::write(out, seed_to_json(&export_seed(&load_network(net)?)?))?,
        SeedOp::Strip { net, out } => save_network(&strip_seed(&load_network(net)?)?, out)?,
        SeedOp::Attach { skeleton, seed, out } => {
            let s = seed_from_json(&std::fs::read_to_string(seed)?)?;
            save_network(&attach_seed(&load_network(skeleton)?, &s)?, out)?
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Build(a) => cmd_build(a),
        Cmd::Eval { net, x, mode } => cmd_eval(net, x, mode.as_deref()),
        Cmd::Sweep { config, out } => cmd_sweep(config, out.as_deref()),
        Cmd::Fit { table, model } => cmd_fit(table, model),
        Cmd::Report { table, out } => cmd_report(table, out),
        Cmd::Seed { op } => cmd_seed(op),
    }
}
