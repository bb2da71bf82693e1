use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_approxnet")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn build_and_eval_shallow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["build", "--variant", "shallow", "--d", "1", "--r", "2", "--fn", "sinpi", "--scale", "8", "--out", "n.json"]);
    assert!(stdout(&o).starts_with("shallow W="));
    let y: f64 = stdout(&run(d, &["eval", "--net", "n.json", "--x", "1/2"])).trim().parse().unwrap();
    assert!(y > 0.0 && y <= 1.0);
    // exact mode prints a fraction that agrees with the float result
    let r = stdout(&run(d, &["eval", "--net", "n.json", "--x", "0.5", "--mode", "rational"]));
    let (n, m) = r.trim().split_once('/').unwrap_or((r.trim(), "1"));
    let exact = n.parse::<f64>().unwrap() / m.parse::<f64>().unwrap();
    assert!((exact - y).abs() < 1e-12);
}

#[test]
fn zero_function_evaluates_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["build", "--variant", "deep", "--d", "1", "--r", "1", "--p", "3/2", "--fn", "zero", "--scale", "2", "--out", "z.json"]);
    let y = stdout(&run(d, &["eval", "--net", "z.json", "--x", "1/3", "--mode", "rational"]));
    assert_eq!(y.trim(), "0");
}

#[test]
fn fourier_seed_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["build", "--variant", "fourier", "--d", "1", "--r", "1", "--fn", "sinpi", "--scale", "2", "--out", "f.json", "--seed-out", "s1.json"]);
    run(d, &["seed", "export", "--net", "f.json", "--out", "s2.json"]);
    assert_eq!(std::fs::read(d.join("s1.json")).unwrap(), std::fs::read(d.join("s2.json")).unwrap());
    run(d, &["seed", "strip", "--net", "f.json", "--out", "sk.json"]);
    run(d, &["seed", "attach", "--skeleton", "sk.json", "--seed", "s1.json", "--out", "g.json"]);
    assert_eq!(std::fs::read(d.join("f.json")).unwrap(), std::fs::read(d.join("g.json")).unwrap());
}

#[test]
fn sweep_fit_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "variant = \"shallow\"\nd = 1\nr = \"2\"\nscale = [4, 8, 16, 32]\nfn = [\"sinpi\"]\nrandom = 100\n",
    )
    .unwrap();
    run(d, &["sweep", "--config", "c.toml", "--out", "t.csv"]);
    let again = stdout(&run(d, &["sweep", "--config", "c.toml"]));
    let csv = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(csv, again);
    assert_eq!(csv.lines().count(), 5);
    let fit = stdout(&run(d, &["fit", "--table", "t.csv", "--model", "power"]));
    assert!(fit.starts_with("shallow d=1 r=2: p̂ = "), "{fit}");
    run(d, &["report", "--table", "t.csv", "--out", "rep"]);
    for f in ["rates.csv", "summary.txt", "shallow_d1_r2.svg"] {
        assert!(d.join("rep").join(f).exists(), "{f}");
    }
}

#[test]
fn rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_approxnet")).current_dir(dir.path()).args(args).output().unwrap();
        assert!(!o.status.success(), "{args:?}");
    };
    bad(&["build", "--variant", "wide", "--d", "1", "--r", "1", "--fn", "sinpi", "--out", "x.json"]);
    bad(&["build", "--variant", "shallow", "--d", "1", "--r", "1", "--fn", "nope", "--out", "x.json"]);
    bad(&["eval", "--net", "missing.json", "--x", "0"]);
    std::fs::write(dir.path().join("c.toml"), "variant = \"shallow\"\nd = 1\nr = \"1\"\nscale = [4]\ncolour = 1\n").unwrap();
    bad(&["sweep", "--config", "c.toml"]);
}
