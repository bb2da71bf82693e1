//! JSON document form of networks. Rationals are `[num, den]` decimal strings,
//! big-floats are `{"mant_hex", "exp", "bits"}`; round trips are bit-exact.

use num_bigint::BigInt;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::net::{Activation, Meta, Network, SigmaKind, SigmaSpec, Unit};
use crate::scalar::{BigFloat, ExactScalar, Rational};

fn perr<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse(msg.into()))
}

pub fn rational_to_json(r: &Rational) -> Value {
    json!([r.numer().to_string(), r.denom().to_string()])
}

pub fn rational_from_json(v: &Value) -> Result<Rational> {
    let arr = match v.as_array() {
        Some(a) if a.len() == 2 => a,
        _ => return perr(format!("expected [num, den], got {v}")),
    };
    let n = bigint_from_json(&arr[0])?;
    let d = bigint_from_json(&arr[1])?;
    if d == BigInt::from(0) {
        return perr("zero denominator");
    }
    Ok(Rational::new(n, d))
}

fn bigint_from_json(v: &Value) -> Result<BigInt> {
    match v {
        Value::String(s) => s.parse::<BigInt>().map_err(|e| Error::Parse(format!("{s}: {e}"))),
        Value::Number(n) => n
            .to_string()
            .parse::<BigInt>()
            .map_err(|e| Error::Parse(format!("{n}: {e}"))),
        _ => perr(format!("expected integer, got {v}")),
    }
}

pub fn scalar_to_json(s: &ExactScalar) -> Value {
    match s {
        ExactScalar::Rational(r) => rational_to_json(r),
        ExactScalar::BigFloat(b) => {
            let (m, e) = b.to_hex_parts();
            json!({"mant_hex": m, "exp": e, "bits": b.precision()})
        }
    }
}

pub fn scalar_from_json(v: &Value) -> Result<ExactScalar> {
    if v.is_array() {
        return Ok(ExactScalar::Rational(rational_from_json(v)?));
    }
    let m = v.get("mant_hex").and_then(Value::as_str);
    let e = v.get("exp").and_then(Value::as_i64);
    let b = v.get("bits").and_then(Value::as_u64);
    match (m, e, b) {
        (Some(m), Some(e), Some(b)) => Ok(ExactScalar::BigFloat(BigFloat::from_hex_parts(m, e, b as u32)?)),
        _ => perr(format!("bad scalar {v}")),
    }
}

pub fn sigma_to_json(s: &SigmaSpec) -> Value {
    let kind = match &s.kind {
        SigmaKind::Sine => json!("sine"),
        SigmaKind::Triangle => json!("triangle"),
        SigmaKind::Table(vals) => json!({"table": vals.iter().map(rational_to_json).collect::<Vec<_>>()}),
    };
    json!({"kind": kind, "period": rational_to_json(&s.period), "lipschitz": rational_to_json(&s.lipschitz)})
}

pub fn sigma_from_json(v: &Value) -> Result<SigmaSpec> {
    let kind = match v.get("kind") {
        Some(Value::String(s)) if s == "sine" => SigmaKind::Sine,
        Some(Value::String(s)) if s == "triangle" => SigmaKind::Triangle,
        Some(Value::Object(o)) => match o.get("table").and_then(Value::as_array) {
            Some(vals) => SigmaKind::Table(vals.iter().map(rational_from_json).collect::<Result<_>>()?),
            None => return perr("bad sigma table"),
        },
        _ => return perr(format!("bad sigma kind in {v}")),
    };
    let period = rational_from_json(v.get("period").unwrap_or(&Value::Null))?;
    let lipschitz = rational_from_json(v.get("lipschitz").unwrap_or(&Value::Null))?;
    Ok(SigmaSpec { kind, period, lipschitz })
}

fn activation_to_json(a: &Activation) -> Value {
    match a {
        Activation::Identity => json!("identity"),
        Activation::Relu => json!("relu"),
        Activation::Periodic(s) => json!({"periodic": sigma_to_json(s)}),
        Activation::Polynomial(c) => json!({"polynomial": c.iter().map(rational_to_json).collect::<Vec<_>>()}),
    }
}

fn activation_from_json(v: &Value) -> Result<Activation> {
    match v {
        Value::String(s) if s == "identity" => Ok(Activation::Identity),
        Value::String(s) if s == "relu" => Ok(Activation::Relu),
        Value::Object(o) => {
            if let Some(s) = o.get("periodic") {
                return Ok(Activation::Periodic(sigma_from_json(s)?));
            }
            if let Some(Value::Array(c)) = o.get("polynomial") {
                return Ok(Activation::Polynomial(c.iter().map(rational_from_json).collect::<Result<_>>()?));
            }
            perr(format!("bad activation {v}"))
        }
        _ => perr(format!("bad activation {v}")),
    }
}

pub fn network_to_json(net: &Network) -> Value {
    let units: Vec<Value> = net
        .units
        .iter()
        .map(|u| {
            let incoming: Vec<Value> = u
                .incoming
                .iter()
                .map(|(s, w)| match w {
                    ExactScalar::Rational(r) => json!([s, r.numer().to_string(), r.denom().to_string()]),
                    ExactScalar::BigFloat(_) => json!([s, scalar_to_json(w)]),
                })
                .collect();
            json!({
                "id": u.id,
                "activation": activation_to_json(&u.activation),
                "incoming": incoming,
                "bias": scalar_to_json(&u.bias),
            })
        })
        .collect();
    let meta: Map<String, Value> = net.meta.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    json!({
        "input_dim": net.input_dim,
        "units": units,
        "output_id": net.outputs[0],
        "output_ids": net.outputs,
        "meta": meta,
    })
}

pub fn network_from_json(v: &Value) -> Result<Network> {
    let input_dim = v.get("input_dim").and_then(Value::as_u64).ok_or_else(|| Error::Parse("input_dim".into()))? as usize;
    let mut units = Vec::new();
    for u in v.get("units").and_then(Value::as_array).ok_or_else(|| Error::Parse("units".into()))? {
        let id = u.get("id").and_then(Value::as_u64).ok_or_else(|| Error::Parse("unit id".into()))? as usize;
        let activation = activation_from_json(u.get("activation").unwrap_or(&Value::Null))?;
        let mut incoming = Vec::new();
        for e in u.get("incoming").and_then(Value::as_array).ok_or_else(|| Error::Parse("incoming".into()))? {
            let arr = e.as_array().ok_or_else(|| Error::Parse("edge".into()))?;
            let src = arr.first().and_then(Value::as_u64).ok_or_else(|| Error::Parse("edge source".into()))? as usize;
            let w = match arr.len() {
                3 => ExactScalar::Rational(rational_from_json(&json!([arr[1], arr[2]]))?),
                2 => scalar_from_json(&arr[1])?,
                _ => return perr("edge arity"),
            };
            incoming.push((src, w));
        }
        let bias = scalar_from_json(u.get("bias").unwrap_or(&Value::Null))?;
        units.push(Unit { id, activation, incoming, bias });
    }
    let outputs: Vec<usize> = match v.get("output_ids").and_then(Value::as_array) {
        Some(a) => a.iter().filter_map(Value::as_u64).map(|x| x as usize).collect(),
        None => vec![v.get("output_id").and_then(Value::as_u64).ok_or_else(|| Error::Parse("output_id".into()))? as usize],
    };
    let mut meta = Meta::new();
    if let Some(Value::Object(m)) = v.get("meta") {
        for (k, val) in m {
            let s = match val {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            meta.insert(k.clone(), s);
        }
    }
    let net = Network { input_dim, units, outputs, meta };
    net.validate()?;
    Ok(net)
}

pub fn network_to_string(net: &Network) -> String {
    let mut s = serde_json::to_string(&network_to_json(net)).expect("json");
    s.push('\n');
    s
}

pub fn network_from_str(s: &str) -> Result<Network> {
    network_from_json(&serde_json::from_str(s)?)
}

pub fn save_network(net: &Network, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, network_to_string(net))?;
    Ok(())
}

pub fn load_network(path: &std::path::Path) -> Result<Network> {
    network_from_str(&std::fs::read_to_string(path)?)
}
