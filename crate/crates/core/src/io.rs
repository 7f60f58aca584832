//! File formats, run configuration, synthetic market history and output
//! tables.
//!
//! All data files are comma-separated UTF-8 with a header row; lines
//! starting with `#` are comments. Floats are written in shortest
//! round-trip form, so write-then-read reproduces values exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::credit::{Curve, Rating, RatingCurveSet, RecoveryAssumption, ReturnOptions, TransitionMatrix};
use crate::error::{Error, Result};
use crate::frontier::{log_grid, BacktestSetup, MarketSnapshot};
use crate::optimizer::{ConstraintCaps, CuttingPlaneOptions};
use crate::risk::{RiskConfig, Sector, Sleeve};
use crate::scenarios::{path_rng, ScenarioSpec, BUSINESS_DAYS_PER_YEAR};

pub const UNIVERSE_CSV: &str = include_str!("../data/universe.csv");
pub const TRANSITION_MATRIX_CSV: &str = include_str!("../data/transition_matrix.csv");
pub const RATING_CURVES_CSV: &str = include_str!("../data/rating_curves.csv");
pub const RUN_CONFIG_TOML: &str = include_str!("../data/run_config.toml");

const BUILTIN: &str = "<builtin>";

pub fn num(x: f64) -> String {
    format!("{x}")
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(r)
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Column lookup by header name.
struct Columns {
    index: BTreeMap<String, usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord, required: &[&str], path: &Path) -> Result<Self> {
        let index: BTreeMap<String, usize> = headers.iter().enumerate().map(|(i, h)| (h.to_ascii_lowercase(), i)).collect();
        for col in required {
            if !index.contains_key(*col) {
                return Err(Error::parse(path, 1, format!("missing column {col:?}")));
            }
        }
        Ok(Self { index })
    }

    fn get<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> &'a str {
        self.index.get(col).and_then(|&i| rec.get(i)).unwrap_or("")
    }
}

fn parse_f64(s: &str, col: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("column {col}: invalid number {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("column {col}: non-finite value"));
    }
    Ok(v)
}

fn parse_opt_f64(s: &str, col: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, col).map(Some)
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "" | "false" | "0" | "no" | "n" => Ok(false),
        "true" | "1" | "yes" | "y" => Ok(true),
        _ => Err(format!("column floating: expected true/false, got {s:?}")),
    }
}

const UNIVERSE_COLUMNS: [&str; 14] = [
    "name",
    "ticker",
    "maturity",
    "coupon",
    "frequency",
    "rating",
    "yield",
    "spread",
    "d_ir",
    "d_cr",
    "floating",
    "sectors",
    "limit",
    "stress_spread",
];

fn sleeve_from_record(cols: &Columns, rec: &csv::StringRecord) -> std::result::Result<Sleeve, String> {
    let f = |c: &str| parse_f64(cols.get(rec, c), c);
    let frequency: u32 = cols
        .get(rec, "frequency")
        .parse()
        .map_err(|_| format!("column frequency: invalid integer {:?}", cols.get(rec, "frequency")))?;
    let rating = cols.get(rec, "rating").to_string();
    rating.parse::<Rating>().map_err(|e| e.to_string())?;
    let sectors = cols
        .get(rec, "sectors")
        .split('|')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<Sector>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<BTreeSet<_>, _>>()?;
    let mut sleeve = Sleeve {
        name: cols.get(rec, "name").to_string(),
        ticker: cols.get(rec, "ticker").to_string(),
        maturity: f("maturity")?,
        coupon: f("coupon")?,
        frequency,
        rating,
        yield_value: f("yield")?,
        spread: f("spread")?,
        d_ir: 0.0,
        d_cr: 0.0,
        floating: parse_bool(cols.get(rec, "floating"))?,
        sectors,
        limit: f("limit")?,
        stress_spread: parse_opt_f64(cols.get(rec, "stress_spread"), "stress_spread")?.unwrap_or(0.0),
    };
    let d_ir = parse_opt_f64(cols.get(rec, "d_ir"), "d_ir")?;
    let d_cr = parse_opt_f64(cols.get(rec, "d_cr"), "d_cr")?;
    if (d_ir.is_none() || d_cr.is_none()) && sleeve.maturity > 0.0 && sleeve.frequency > 0 {
        sleeve.derive_durations().map_err(|e| e.to_string())?;
    }
    if let Some(d) = d_ir {
        sleeve.d_ir = d;
    }
    if let Some(d) = d_cr {
        sleeve.d_cr = d;
    }
    sleeve.validate().map_err(|e| e.to_string())?;
    Ok(sleeve)
}

/// Parse a universe file. Blank durations are derived from the bond terms.
pub fn read_universe<R: Read>(r: R, path: &Path) -> Result<Vec<Sleeve>> {
    let mut rdr = reader(r);
    let cols = Columns::new(rdr.headers()?, &UNIVERSE_COLUMNS[..8], path)?;
    for req in ["floating", "sectors", "limit"] {
        if !cols.index.contains_key(req) {
            return Err(Error::parse(path, 1, format!("missing column {req:?}")));
        }
    }
    let mut out: Vec<Sleeve> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let sleeve = sleeve_from_record(&cols, &rec).map_err(|m| Error::parse(path, line, m))?;
        if out.iter().any(|s| s.name == sleeve.name) {
            return Err(Error::parse(path, line, format!("duplicate sleeve name {:?}", sleeve.name)));
        }
        out.push(sleeve);
    }
    if out.is_empty() {
        return Err(Error::parse(path, 0, "empty universe"));
    }
    Ok(out)
}

pub fn load_universe(path: &Path) -> Result<Vec<Sleeve>> {
    read_universe(fs::File::open(path)?, path)
}

pub fn write_universe<W: Write>(w: W, sleeves: &[Sleeve]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(UNIVERSE_COLUMNS)?;
    for s in sleeves {
        let sectors: Vec<&str> = s.sectors.iter().map(|t| t.tag()).collect();
        wtr.write_record([
            s.name.clone(),
            s.ticker.clone(),
            num(s.maturity),
            num(s.coupon),
            s.frequency.to_string(),
            s.rating.clone(),
            num(s.yield_value),
            num(s.spread),
            num(s.d_ir),
            num(s.d_cr),
            s.floating.to_string(),
            sectors.join("|"),
            num(s.limit),
            num(s.stress_spread),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub const RISKFREE_SERIES: &str = "riskfree";

/// Parse a market series: `date,series,maturity,yield,spread`. Rows for
/// series `riskfree` are zero-curve points; other rows are sleeves by name.
pub fn read_market_series<R: Read>(r: R, path: &Path) -> Result<Vec<MarketSnapshot>> {
    let mut rdr = reader(r);
    let cols = Columns::new(rdr.headers()?, &["date", "series", "maturity", "yield", "spread"], path)?;
    let mut out: Vec<MarketSnapshot> = Vec::new();
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut current: Option<(NaiveDate, BTreeMap<String, (f64, f64)>)> = None;

    let flush = |cur: Option<(NaiveDate, BTreeMap<String, (f64, f64)>)>,
                 pts: &mut Vec<(f64, f64)>,
                 out: &mut Vec<MarketSnapshot>,
                 line: usize|
     -> Result<()> {
        if let Some((date, sleeves)) = cur {
            let riskfree = Curve::new(std::mem::take(pts))
                .map_err(|e| Error::parse(path, line, format!("{date}: riskfree curve: {e}")))?;
            out.push(MarketSnapshot { date, riskfree, sleeves });
        }
        Ok(())
    };

    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let bad = |m: String| Error::parse(path, line, m);
        let date = NaiveDate::parse_from_str(cols.get(&rec, "date"), "%Y-%m-%d")
            .map_err(|_| bad(format!("invalid date {:?}", cols.get(&rec, "date"))))?;
        match &current {
            Some((d, _)) if *d == date => {}
            Some((d, _)) if *d > date => return Err(bad(format!("date {date} is not after {d}"))),
            _ => {
                if out.iter().any(|s| s.date == date) {
                    return Err(bad(format!("date {date} appears in two blocks")));
                }
                flush(current.take(), &mut points, &mut out, line)?;
                current = Some((date, BTreeMap::new()));
            }
        }
        let series = cols.get(&rec, "series");
        let y = parse_f64(cols.get(&rec, "yield"), "yield").map_err(bad)?;
        if series == RISKFREE_SERIES {
            let t = parse_f64(cols.get(&rec, "maturity"), "maturity").map_err(bad)?;
            points.push((t, y));
        } else {
            let s = parse_f64(cols.get(&rec, "spread"), "spread").map_err(bad)?;
            if s < 0.0 {
                return Err(bad(format!("negative spread for {series}")));
            }
            let sleeves = &mut current.as_mut().expect("date block open").1;
            if sleeves.insert(series.to_string(), (y, s)).is_some() {
                return Err(bad(format!("duplicate row for {series} on {date}")));
            }
        }
    }
    flush(current.take(), &mut points, &mut out, 0)?;
    if out.is_empty() {
        return Err(Error::parse(path, 0, "empty market series"));
    }
    Ok(out)
}

pub fn load_market_series(path: &Path) -> Result<Vec<MarketSnapshot>> {
    read_market_series(fs::File::open(path)?, path)
}

pub fn write_market_series<W: Write>(w: W, snaps: &[MarketSnapshot]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "series", "maturity", "yield", "spread"])?;
    for snap in snaps {
        let date = snap.date.to_string();
        for &(t, y) in snap.riskfree.points() {
            wtr.write_record([date.as_str(), RISKFREE_SERIES, &num(t), &num(y), ""])?;
        }
        for (name, &(y, s)) in &snap.sleeves {
            wtr.write_record([date.as_str(), name, "", &num(y), &num(s)])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Square matrix: header `from,<state>...`, one row per state in the same
/// order. Rows within 1e-6 of summing to one are renormalised.
pub fn read_transition_matrix<R: Read>(r: R, path: &Path) -> Result<TransitionMatrix> {
    let mut rdr = reader(r);
    let headers = rdr.headers()?.clone();
    let states: Vec<Rating> = headers
        .iter()
        .skip(1)
        .map(|h| h.parse::<Rating>().map_err(|e| Error::parse(path, 1, e.to_string())))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec);
        let from: Rating = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        if states.get(i) != Some(&from) {
            return Err(Error::parse(path, line, format!("row {from} out of order with header")));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| parse_f64(v, from.label()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| Error::parse(path, line, m))?;
        rows.push(row);
    }
    TransitionMatrix::normalized(states, rows, 1e-6).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_transition_matrix<W: Write>(w: W, m: &TransitionMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["from".to_string()];
    header.extend(m.states().iter().map(|s| s.to_string()));
    wtr.write_record(&header)?;
    for (i, s) in m.states().iter().enumerate() {
        let mut row = vec![s.to_string()];
        row.extend((0..m.states().len()).map(|j| num(m.one_year()[(i, j)])));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Spread curves: header `rating,<maturity>...`, one row per rating.
pub fn read_rating_curves<R: Read>(r: R, path: &Path, riskfree: Curve, recovery: f64) -> Result<RatingCurveSet> {
    let mut rdr = reader(r);
    let headers = rdr.headers()?.clone();
    let maturities: Vec<f64> = headers
        .iter()
        .skip(1)
        .map(|h| parse_f64(h, "maturity header").map_err(|m| Error::parse(path, 1, m)))
        .collect::<Result<_>>()?;
    let mut curves = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let rating: Rating = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| parse_f64(v, rating.label()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| Error::parse(path, line, m))?;
        let curve = Curve::new(maturities.iter().copied().zip(values).collect())
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        curves.push((rating, curve));
    }
    let recovery = RecoveryAssumption::new(recovery)?;
    RatingCurveSet::new(riskfree, curves, recovery).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Writes on the knots of the first curve; curves read from one file share
/// knots, so reading back is exact.
pub fn write_rating_curves<W: Write>(w: W, curves: &RatingCurveSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let Some((_, first)) = curves.spread_curves().first() else {
        return Err(Error::InvalidInput("no rating curves to write".into()));
    };
    let knots: Vec<f64> = first.points().iter().map(|p| p.0).collect();
    let mut header = vec!["rating".to_string()];
    header.extend(knots.iter().map(|k| num(*k)));
    wtr.write_record(&header)?;
    for (rating, curve) in curves.spread_curves() {
        let mut row = vec![rating.to_string()];
        for &k in &knots {
            row.push(num(curve.eval(k)?));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub universe: Option<PathBuf>,
    pub series: Option<PathBuf>,
    pub transition_matrix: Option<PathBuf>,
    pub rating_curves: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo: 0.005,
            hi: 0.40,
            n: 20,
        }
    }
}

impl GridConfig {
    /// Parses `lo:hi:n`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || Error::Config(format!("grid must look like lo:hi:n, got {spec:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let g = Self {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            n: parts[2].trim().parse().map_err(|_| bad())?,
        };
        g.points()?;
        Ok(g)
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        log_grid(self.lo, self.hi, self.n).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutConfig {
    pub eps_cut: f64,
    pub max_iter: usize,
}

impl Default for CutConfig {
    fn default() -> Self {
        let d = CuttingPlaneOptions::default();
        Self {
            eps_cut: d.eps_cut,
            max_iter: d.max_iter,
        }
    }
}

impl From<CutConfig> for CuttingPlaneOptions {
    fn from(c: CutConfig) -> Self {
        Self {
            eps_cut: c.eps_cut,
            max_iter: c.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeKind {
    #[default]
    MaxEr,
    TrackView,
    Minimax,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub kind: OptimizeKind,
    /// Total-risk limit added on top of the scenario floors.
    pub risk_limit: Option<f64>,
    /// Index weights by sleeve name, for the tracking programs.
    pub index: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestWindow {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub step_months: u32,
}

impl Default for BacktestWindow {
    fn default() -> Self {
        Self {
            start: None,
            end: None,
            step_months: 3,
        }
    }
}

/// Synthetic history: Gaussian level factor on the riskfree curve and
/// correlated log-spreads reverting to their starting levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Absolute rate volatility per year.
    pub sigma_y: f64,
    /// Rate mean reversion per year.
    pub kappa: f64,
    /// Relative spread volatility per year.
    pub sigma_hat: f64,
    /// Correlation of spread shocks across sleeves.
    pub rho: f64,
    /// Log-spread mean reversion per year.
    pub spread_kappa: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2006, 1, 2).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2016, 12, 30).expect("valid date"),
            sigma_y: 0.009,
            kappa: 0.15,
            sigma_hat: 0.35,
            rho: 0.8,
            spread_kappa: 0.5,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.end < self.start {
            return Err(Error::Config("synthetic end precedes start".into()));
        }
        let vals = [self.sigma_y, self.kappa, self.sigma_hat, self.spread_kappa];
        if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("synthetic volatilities and speeds must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config("synthetic rho must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn default_riskfree() -> Vec<[f64; 2]> {
    vec![
        [0.25, 0.020],
        [1.0, 0.021],
        [2.0, 0.023],
        [3.0, 0.025],
        [5.0, 0.028],
        [7.0, 0.030],
        [10.0, 0.033],
        [30.0, 0.038],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon: f64,
    pub recovery: f64,
    pub default_adjusted_accrual: bool,
    pub riskfree_curve: Vec<[f64; 2]>,
    pub files: FileConfig,
    pub risk: RiskConfig,
    pub caps: ConstraintCaps,
    pub grid: GridConfig,
    pub cutting_plane: CutConfig,
    pub optimize: OptimizeConfig,
    pub backtest: BacktestWindow,
    pub synthetic: SyntheticParams,
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            horizon: 1.0,
            recovery: 0.3,
            default_adjusted_accrual: false,
            riskfree_curve: default_riskfree(),
            files: FileConfig::default(),
            risk: RiskConfig::default(),
            caps: ConstraintCaps::default(),
            grid: GridConfig::default(),
            cutting_plane: CutConfig::default(),
            optimize: OptimizeConfig::default(),
            backtest: BacktestWindow::default(),
            synthetic: SyntheticParams::default(),
            scenarios: Vec::new(),
        }
    }
}

impl RunConfig {
    /// The shipped sample configuration, reading the embedded data files.
    pub fn sample() -> Self {
        let mut cfg = Self::from_toml(RUN_CONFIG_TOML).expect("embedded sample config parses");
        cfg.files = FileConfig::default();
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load, resolve relative file paths against the config's directory,
    /// and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let files = &mut cfg.files;
        for p in [&mut files.universe, &mut files.series, &mut files.transition_matrix, &mut files.rating_curves]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.risk.validate()?;
        self.caps.validate()?;
        self.grid.points()?;
        self.synthetic.validate()?;
        for s in &self.scenarios {
            s.validate()?;
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        RecoveryAssumption::new(self.recovery).map_err(|e| Error::Config(e.to_string()))?;
        self.riskfree()?;
        if self.backtest.step_months == 0 {
            return Err(Error::Config("backtest step_months must be at least 1".into()));
        }
        if let Some(r) = self.optimize.risk_limit {
            if !(r >= 0.0) {
                return Err(Error::Config("optimize risk_limit must be nonnegative".into()));
            }
        }
        if self.optimize.index.values().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("index weights must lie in [0, 1]".into()));
        }
        for p in [
            &self.files.universe,
            &self.files.series,
            &self.files.transition_matrix,
            &self.files.rating_curves,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn riskfree(&self) -> Result<Curve> {
        if self.riskfree_curve.is_empty() {
            return Err(Error::Config("riskfree_curve needs at least one point".into()));
        }
        Curve::new(self.riskfree_curve.iter().map(|p| (p[0], p[1])).collect()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn return_options(&self) -> ReturnOptions {
        ReturnOptions {
            default_adjusted_accrual: self.default_adjusted_accrual,
        }
    }

    /// The universe from `override_path`, the config, or the shipped sample.
    pub fn universe(&self, override_path: Option<&Path>) -> Result<Vec<Sleeve>> {
        match override_path.or(self.files.universe.as_deref()) {
            Some(p) => load_universe(p),
            None => read_universe(UNIVERSE_CSV.as_bytes(), Path::new(BUILTIN).join("universe.csv").as_path()),
        }
    }

    pub fn transition_matrix(&self) -> Result<TransitionMatrix> {
        match &self.files.transition_matrix {
            Some(p) => read_transition_matrix(fs::File::open(p)?, p),
            None => read_transition_matrix(
                TRANSITION_MATRIX_CSV.as_bytes(),
                Path::new(BUILTIN).join("transition_matrix.csv").as_path(),
            ),
        }
    }

    pub fn rating_curves(&self) -> Result<RatingCurveSet> {
        let rf = self.riskfree()?;
        match &self.files.rating_curves {
            Some(p) => read_rating_curves(fs::File::open(p)?, p, rf, self.recovery),
            None => read_rating_curves(
                RATING_CURVES_CSV.as_bytes(),
                Path::new(BUILTIN).join("rating_curves.csv").as_path(),
                rf,
                self.recovery,
            ),
        }
    }

    pub fn backtest_setup(&self, template: Vec<Sleeve>) -> Result<BacktestSetup> {
        Ok(BacktestSetup {
            template,
            curves: self.rating_curves()?,
            matrix: self.transition_matrix()?,
            caps: self.caps.clone(),
            risk: self.risk.clone(),
            grid: self.grid.points()?,
            horizon: self.horizon,
            er_options: self.return_options(),
            cut: self.cutting_plane.into(),
        })
    }
}

/// Weekdays from `start` to `end` inclusive.
pub fn business_days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

/// Weekdays in `(from, to]` over a 260-day year.
pub fn year_fraction(from: NaiveDate, to: NaiveDate) -> f64 {
    if to <= from {
        return 0.0;
    }
    let days = business_days(from.succ_opt().expect("date in range"), to).len();
    days as f64 / BUSINESS_DAYS_PER_YEAR
}

/// Standard deviation of an OU increment over `dt` per unit volatility.
fn ou_scale(kappa: f64, dt: f64) -> f64 {
    if kappa == 0.0 {
        dt.sqrt()
    } else {
        (-(-2.0 * kappa * dt).exp_m1() / (2.0 * kappa)).sqrt()
    }
}

/// Simulated market history for the template universe on `dates`.
///
/// The riskfree curve moves in parallel by a mean-reverting Gaussian level;
/// each sleeve's log-spread reverts to its template level with shocks that
/// share one common factor (correlation `rho`). Sleeve yields are riskfree
/// at the sleeve maturity plus spread.
pub fn generate_synthetic_history(
    params: &SyntheticParams,
    template: &[Sleeve],
    riskfree: &Curve,
    dates: &[NaiveDate],
    seed: u64,
) -> Result<Vec<MarketSnapshot>> {
    params.validate()?;
    if dates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("synthetic dates must be strictly increasing".into()));
    }
    let mut rng = path_rng(seed, 0);
    let mut level = 0.0;
    let base_log: Vec<Option<f64>> = template
        .iter()
        .map(|s| if s.spread > 0.0 { Some(s.spread.ln()) } else { None })
        .collect();
    let mut log_spread = base_log.clone();
    let (wc, wi) = (params.rho.sqrt(), (1.0 - params.rho).sqrt());
    let mut out = Vec::with_capacity(dates.len());
    for (k, &date) in dates.iter().enumerate() {
        if k > 0 {
            let dt = year_fraction(dates[k - 1], date);
            let z: f64 = StandardNormal.sample(&mut rng);
            level = level * (-params.kappa * dt).exp() + params.sigma_y * ou_scale(params.kappa, dt) * z;
            let common: f64 = StandardNormal.sample(&mut rng);
            let decay = (-params.spread_kappa * dt).exp();
            let scale = params.sigma_hat * ou_scale(params.spread_kappa, dt);
            for (ls, base) in log_spread.iter_mut().zip(&base_log) {
                let own: f64 = StandardNormal.sample(&mut rng);
                if let (Some(l), Some(b)) = (ls.as_mut(), base) {
                    *l = b + (*l - b) * decay + scale * (wc * common + wi * own);
                }
            }
        }
        let curve = riskfree.map(|y| y + level);
        let sleeves = template
            .iter()
            .zip(&log_spread)
            .map(|(s, ls)| {
                let spread = ls.map_or(0.0, f64::exp);
                (s.name.clone(), (curve.eval_flat(s.maturity) + spread, spread))
            })
            .collect();
        out.push(MarketSnapshot {
            date,
            riskfree: curve,
            sleeves,
        });
    }
    Ok(out)
}

/// Metadata line written above every output table.
#[derive(Debug, Clone, PartialEq)]
pub struct Preamble {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Preamble {
    pub fn line(&self) -> String {
        format!(
            "# fiopt {} config_sha256={} seed={}",
            self.command, self.config_hash, self.seed
        )
    }
}

pub fn write_table(path: &Path, preamble: &Preamble, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{}", preamble.line())?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Header and rows of a table written by [`write_table`].
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = reader(fs::File::open(path)?);
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}
