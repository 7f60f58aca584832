use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fiopt::instruments::{duration_convexity, price_bullet};
use fiopt::io::{load_universe, read_table};

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(file)
}

fn fiopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiopt")).args(args).output().expect("spawn fiopt")
}

fn ok(args: &[&str]) {
    let out = fiopt(args);
    assert!(
        out.status.success(),
        "fiopt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Copy of the sample config limited to a short backtest window.
fn short_config(dir: &Path) -> PathBuf {
    for f in ["universe.csv", "transition_matrix.csv", "rating_curves.csv"] {
        fs::copy(data(f), dir.join(f)).unwrap();
    }
    let text = fs::read_to_string(data("run_config.toml"))
        .unwrap()
        .replace("end = \"2016-12-30\"", "end = \"2008-01-31\"");
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn frontier_writes_points_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "frontier",
        "--config",
        s(&data("run_config.toml")),
        "--universe",
        s(&data("universe.csv")),
        "--out",
        s(dir.path()),
    ]);
    for f in ["frontier_points.csv", "frontier_fit.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# fiopt frontier config_sha256="), "{first}");
        assert!(first.ends_with(" seed=42"), "{first}");
    }
    let (header, rows) = read_table(&dir.path().join("frontier_points.csv")).unwrap();
    assert_eq!(&header[..3], ["risk_limit", "expected_return", "binding"]);
    assert_eq!(header.len(), 3 + 16);
    assert_eq!(rows.len(), 20);
    let (header, rows) = read_table(&dir.path().join("frontier_fit.csv")).unwrap();
    assert_eq!(header[..2], ["a", "b"]);
    assert!(rows[0][0].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn outputs_are_reproducible() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&d1, &d2] {
        ok(&["frontier", "--grid", "0.01:0.2:6", "--out", s(d.path())]);
        ok(&["gen-data", "--seed", "9", "--out", s(d.path())]);
    }
    for f in ["frontier_points.csv", "frontier_fit.csv", "market_series.csv"] {
        assert_eq!(
            fs::read(d1.path().join(f)).unwrap(),
            fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let d3 = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--seed", "10", "--out", s(d3.path())]);
    assert_ne!(
        fs::read(d1.path().join("market_series.csv")).unwrap(),
        fs::read(d3.path().join("market_series.csv")).unwrap()
    );
}

#[test]
fn price_table_matches_analytics() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["price", "--universe", s(&data("universe.csv")), "--out", s(dir.path())]);
    let sleeves = load_universe(&data("universe.csv")).unwrap();
    let (header, rows) = read_table(&dir.path().join("price.csv")).unwrap();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows.len(), sleeves.len());
    for (row, sl) in rows.iter().zip(&sleeves) {
        assert_eq!(row[col("name")], sl.name);
        let p = price_bullet(sl.maturity, sl.coupon, sl.frequency, sl.yield_value).unwrap();
        let (d, c) = duration_convexity(sl.maturity, sl.coupon, sl.frequency, sl.yield_value).unwrap();
        assert_eq!(row[col("price")].parse::<f64>().unwrap(), p);
        assert_eq!(row[col("duration")].parse::<f64>().unwrap(), d);
        assert_eq!(row[col("convexity")].parse::<f64>().unwrap(), c);
    }
}

#[test]
fn other_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    for cmd in ["risk", "er", "optimize"] {
        ok(&[cmd, "--config", s(&cfg), "--out", s(dir.path())]);
    }
    let (_, rows) = read_table(&dir.path().join("weights.csv")).unwrap();
    let total: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!(total <= 1.0 + 1e-9);
    let (_, rows) = read_table(&dir.path().join("risk.csv")).unwrap();
    assert_eq!(rows.len(), 17, "16 sleeves plus the index");

    for kind in ["track_view", "minimax"] {
        let text = fs::read_to_string(&cfg).unwrap().replace("kind = \"max_er\"", &format!("kind = \"{kind}\""));
        let p = dir.path().join(format!("{kind}.toml"));
        fs::write(&p, text).unwrap();
        ok(&["optimize", "--config", s(&p), "--out", s(dir.path())]);
    }
}

fn frontier_er(dir: &Path) -> Vec<(String, f64, f64)> {
    let (_, rows) = read_table(&dir.join("frontiers.csv")).unwrap();
    rows.iter()
        .map(|r| (r[0].clone(), r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect()
}

#[test]
fn backtest_without_stdev_dominates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let (full, free) = (dir.path().join("full"), dir.path().join("free"));
    ok(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())]);
    let series = dir.path().join("market_series.csv");
    ok(&["backtest", "--config", s(&cfg), "--series", s(&series), "--out", s(&full)]);
    ok(&["backtest", "--config", s(&cfg), "--series", s(&series), "--out", s(&free), "--no-stdev"]);

    let (a, b) = (frontier_er(&full), frontier_er(&free));
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), 9 * 20);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((&x.0, x.1), (&y.0, y.1));
        assert!(y.2 >= x.2 - 1e-9, "{} R={}: {} < {}", x.0, x.1, y.2, x.2);
    }
    let (ha, ra) = read_table(&full.join("factor_series.csv")).unwrap();
    let (hb, rb) = read_table(&free.join("factor_series.csv")).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(ra.len(), rb.len());
    let text = fs::read_to_string(full.join("factor_series.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("# p="));
    assert!(full.join("ou_fit.csv").exists() || ra.len() < 10);
}

#[test]
fn exit_codes() {
    assert_eq!(fiopt(&["--help"]).status.code(), Some(0));
    assert_eq!(fiopt(&["--version"]).status.code(), Some(0));
    assert_eq!(fiopt(&["bogus"]).status.code(), Some(1));
    assert_eq!(fiopt(&["price", "--bogus"]).status.code(), Some(1));
    let out = fiopt(&["frontier", "--grid", "0.2:0.1:5"]);
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[caps]\nhigh_yield = 1.5\n").unwrap();
    assert_eq!(fiopt(&["risk", "--config", s(&bad), "--out", s(dir.path())]).status.code(), Some(1));

    let missing = dir.path().join("missing.toml");
    fs::write(&missing, "[files]\nuniverse = \"nope.csv\"\n").unwrap();
    assert_eq!(fiopt(&["price", "--config", s(&missing)]).status.code(), Some(1));

    let infeasible = dir.path().join("inf.toml");
    fs::write(
        &infeasible,
        "[[caps.extra]]\nlabel = \"impossible\"\ncoeffs = { UST_2Y = 1.0 }\nrhs = -0.1\n",
    )
    .unwrap();
    let out = fiopt(&["optimize", "--config", s(&infeasible), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
