//! `fiopt` command line: pricing, risk, expected returns, allocation,
//! frontier sweeps, backtests and synthetic data generation.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fiopt::credit::{hurdle_yield, HurdleCoupon, Rating};
use fiopt::frontier::{
    run_backtest, schedule, sleeve_expected_return, sweep_frontier, fit_frontier, solve_frontier_point, FrontierPoint,
};
use fiopt::instruments::{price_bullet, stress_loss, duration_convexity};
use fiopt::io::{
    business_days, generate_synthetic_history, load_market_series, num, write_market_series, write_table, GridConfig,
    OptimizeKind, Preamble, RunConfig,
};
use fiopt::optimizer::{
    build_constraints, index_returns, track_index_minimax, ConstraintSet, CuttingPlaneOptions, PortfolioProblem,
};
use fiopt::risk::{RiskMeasure, RiskModel, Sleeve};
use fiopt::scenarios::ScenarioMatrix;
use fiopt::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "fiopt", version, about = "Fixed-income portfolio optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Price, duration and stress loss per sleeve.
    Price(Common),
    /// Standalone risk measures and scenario returns per sleeve.
    Risk(Common),
    /// Expected-return decomposition and hurdle yield per sleeve.
    Er(Common),
    /// Solve the configured allocation problem.
    Optimize(Common),
    /// Sweep the efficient frontier and fit it.
    Frontier(Common),
    /// Frontiers and factor series across dates.
    Backtest(Common),
    /// Write a synthetic market series.
    GenData(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML). Defaults to the built-in sample.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Universe file, overriding the configuration.
    #[arg(long)]
    universe: Option<PathBuf>,
    /// Market series file, overriding the configuration.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Random seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the standard-deviation term from the total risk.
    #[arg(long)]
    no_stdev: bool,
    /// Risk-limit grid as lo:hi:n (log spaced).
    #[arg(long)]
    grid: Option<String>,
}

struct Ctx {
    cfg: RunConfig,
    opts: Common,
    name: &'static str,
}

impl Ctx {
    fn new(name: &'static str, opts: Common) -> Result<Self> {
        let mut cfg = match &opts.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::sample(),
        };
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        if opts.no_stdev {
            cfg.risk.include_stdev = false;
        }
        if let Some(g) = &opts.grid {
            cfg.grid = GridConfig::parse(g)?;
        }
        if let Some(u) = &opts.universe {
            if !u.exists() {
                return Err(Error::Config(format!("universe file {} does not exist", u.display())));
            }
        }
        fs::create_dir_all(&opts.out)?;
        Ok(Self { cfg, opts, name })
    }

    fn preamble(&self) -> Result<Preamble> {
        Ok(Preamble {
            command: self.name.to_string(),
            config_hash: self.cfg.hash()?,
            seed: self.cfg.seed,
        })
    }

    fn universe(&self) -> Result<Vec<Sleeve>> {
        self.cfg.universe(self.opts.universe.as_deref())
    }

    fn write(&self, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.opts.out.join(file);
        let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        write_table(&path, &self.preamble()?, &header, rows)?;
        Ok(path)
    }

    fn cut(&self) -> CuttingPlaneOptions {
        self.cfg.cutting_plane.into()
    }

    /// Per-NAV expected excess returns of the universe at the configured curves.
    fn expected_returns(&self, sleeves: &[Sleeve]) -> Result<Vec<f64>> {
        let curves = self.cfg.rating_curves()?;
        let matrix = self.cfg.transition_matrix()?;
        sleeves
            .iter()
            .map(|s| {
                sleeve_expected_return(s, &curves, &matrix, self.cfg.horizon, self.cfg.return_options()).map(|e| e.total)
            })
            .collect()
    }

    fn index_weights(&self, sleeves: &[Sleeve]) -> Result<Vec<f64>> {
        for name in self.cfg.optimize.index.keys() {
            if !sleeves.iter().any(|s| &s.name == name) {
                return Err(Error::Config(format!("index sleeve {name:?} is not in the universe")));
            }
        }
        Ok(sleeves
            .iter()
            .map(|s| self.cfg.optimize.index.get(&s.name).copied().unwrap_or(0.0))
            .collect())
    }
}

fn weight_header(sleeves: &[Sleeve]) -> Vec<String> {
    sleeves.iter().map(|s| format!("w:{}", s.name)).collect()
}

fn price(ctx: &Ctx) -> Result<()> {
    let sleeves = ctx.universe()?;
    let mut rows = Vec::new();
    for s in &sleeves {
        let p = price_bullet(s.maturity, s.coupon, s.frequency, s.yield_value)?;
        let (d, c) = duration_convexity(s.maturity, s.coupon, s.frequency, s.yield_value)?;
        let y_star = s.riskfree_yield() + s.stress_spread;
        let csl = if s.spread > 0.0 {
            stress_loss(s.maturity, s.yield_value, s.frequency, y_star)?
        } else {
            0.0
        };
        rows.push(vec![
            s.name.clone(),
            s.rating.clone(),
            num(s.maturity),
            num(s.coupon),
            s.frequency.to_string(),
            num(s.yield_value),
            num(p),
            num(d),
            num(c),
            num(s.d_ir),
            num(s.d_cr),
            num(csl),
        ]);
    }
    let header = [
        "name", "rating", "maturity", "coupon", "frequency", "yield", "price", "duration", "convexity", "d_ir", "d_cr",
        "csl",
    ];
    report(ctx.write("price.csv", &header, &rows)?);
    Ok(())
}

fn risk(ctx: &Ctx) -> Result<()> {
    let sleeves = ctx.universe()?;
    let model = RiskModel::new(&sleeves, &ctx.cfg.risk)?;
    let scen = ScenarioMatrix::build(&sleeves, &ctx.cfg.scenarios)?;
    let mut header: Vec<String> = ["name", "rate_up", "csx2", "csl", "stdev", "total", "binding"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(scen.labels.iter().map(|l| format!("scenario:{l}")));
    let n = sleeves.len();
    let mut portfolios: Vec<(String, Vec<f64>)> = (0..n)
        .map(|j| {
            let mut u = vec![0.0; n];
            u[j] = 1.0;
            (sleeves[j].name.clone(), u)
        })
        .collect();
    if !ctx.cfg.optimize.index.is_empty() {
        portfolios.push(("index".into(), ctx.index_weights(&sleeves)?));
    }
    let rows: Vec<Vec<String>> = portfolios
        .iter()
        .map(|(name, u)| {
            let total = model.total_risk(u);
            let mut row = vec![
                name.clone(),
                num(model.measure(u, RiskMeasure::RateUp)),
                num(model.measure(u, RiskMeasure::SpreadDouble)),
                num(model.measure(u, RiskMeasure::StressLoss)),
                num(model.stdev(u)),
                num(total.value),
                total.binding.label().to_string(),
            ];
            row.extend(scen.portfolio_returns(u).into_iter().map(num));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    report(ctx.write("risk.csv", &header, &rows)?);
    Ok(())
}

fn er(ctx: &Ctx) -> Result<()> {
    let sleeves = ctx.universe()?;
    let curves = ctx.cfg.rating_curves()?;
    let matrix = ctx.cfg.transition_matrix()?;
    let opts = ctx.cfg.return_options();
    let mut rows = Vec::new();
    for s in &sleeves {
        let e = sleeve_expected_return(s, &curves, &matrix, ctx.cfg.horizon, opts)?;
        let rating: Rating = s.rating.parse()?;
        let hurdle = if rating == Rating::AAA && s.spread == 0.0 {
            String::new()
        } else {
            num(hurdle_yield(rating, s.maturity, HurdleCoupon::Par, s.frequency, &curves, &matrix, ctx.cfg.horizon, opts)?)
        };
        rows.push(vec![
            s.name.clone(),
            s.rating.clone(),
            num(e.carry_rolldown),
            num(e.migration),
            num(e.cheapness),
            num(e.total),
            hurdle,
        ]);
    }
    let header = ["name", "rating", "carry_rolldown", "migration", "cheapness", "total", "hurdle_yield"];
    report(ctx.write("er.csv", &header, &rows)?);
    Ok(())
}

fn optimize(ctx: &Ctx) -> Result<()> {
    let sleeves = ctx.universe()?;
    let model = RiskModel::new(&sleeves, &ctx.cfg.risk)?;
    let scen = ScenarioMatrix::build(&sleeves, &ctx.cfg.scenarios)?;
    let kind = ctx.cfg.optimize.kind;
    let mut summary: Vec<(String, String)> = vec![(
        "kind".into(),
        match kind {
            OptimizeKind::MaxEr => "max_er",
            OptimizeKind::TrackView => "track_view",
            OptimizeKind::Minimax => "minimax",
        }
        .into(),
    )];
    let weights = if kind == OptimizeKind::Minimax {
        let index = index_returns(&scen, &ctx.index_weights(&sleeves)?);
        let limits: Vec<f64> = sleeves.iter().map(|s| s.limit).collect();
        let sol = track_index_minimax(&scen, &index, &limits)?;
        summary.push(("u0".into(), num(sol.u0)));
        summary.push(("tracking_feasible".into(), sol.tracking_feasible.to_string()));
        sol.weights
    } else {
        let er = ctx.expected_returns(&sleeves)?;
        let index = match kind {
            OptimizeKind::TrackView => Some(index_returns(&scen, &ctx.index_weights(&sleeves)?)),
            _ => None,
        };
        let constraints: ConstraintSet = build_constraints(&sleeves, &ctx.cfg.caps)?.with_scenarios(&scen, index.as_deref());
        let problem = PortfolioProblem::new(er, constraints)?;
        let (weights, er_value, binding) = match ctx.cfg.optimize.risk_limit {
            Some(limit) => {
                let p = solve_frontier_point(&problem, &model, limit, &ctx.cut())?;
                (p.weights, p.expected_return, p.binding)
            }
            None => {
                let sol = fiopt::optimizer::solve_problem(&problem)?;
                (sol.weights, sol.expected_return, sol.binding.join("|"))
            }
        };
        summary.push(("expected_return".into(), num(er_value)));
        summary.push(("binding".into(), binding));
        weights
    };
    let total = model.total_risk(&weights);
    summary.push(("total_risk".into(), num(total.value)));
    summary.push(("risk_binding".into(), total.binding.label().into()));
    summary.push(("cash".into(), num(1.0 - weights.iter().sum::<f64>())));
    let rows: Vec<Vec<String>> = sleeves
        .iter()
        .zip(&weights)
        .map(|(s, w)| vec![s.name.clone(), num(*w)])
        .collect();
    report(ctx.write("weights.csv", &["name", "weight"], &rows)?);
    let rows: Vec<Vec<String>> = summary.into_iter().map(|(k, v)| vec![k, v]).collect();
    report(ctx.write("summary.csv", &["key", "value"], &rows)?);
    Ok(())
}

fn point_rows(prefix: &[String], points: &[FrontierPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            let mut row = prefix.to_vec();
            row.extend([num(p.risk_limit), num(p.expected_return), p.binding.clone()]);
            row.extend(p.weights.iter().map(|w| num(*w)));
            row
        })
        .collect()
}

fn frontier(ctx: &Ctx) -> Result<()> {
    let sleeves = ctx.universe()?;
    let er = ctx.expected_returns(&sleeves)?;
    let model = RiskModel::new(&sleeves, &ctx.cfg.risk)?;
    let problem = PortfolioProblem::new(er, build_constraints(&sleeves, &ctx.cfg.caps)?)?;
    let points = sweep_frontier(&problem, &model, &ctx.cfg.grid.points()?, &ctx.cut())?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.risk_limit, p.expected_return)).collect();
    let fit = fit_frontier(&xy)?;
    let mut header = vec!["risk_limit".to_string(), "expected_return".into(), "binding".into()];
    header.extend(weight_header(&sleeves));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    report(ctx.write("frontier_points.csv", &header, &point_rows(&[], &points))?);
    let row = vec![
        num(fit.a),
        num(fit.b),
        num(fit.slope_at_origin()),
        num(fit.rmse),
        num(fit.gradient_norm),
    ];
    report(ctx.write("frontier_fit.csv", &["a", "b", "slope_at_origin", "rmse", "gradient_norm"], &[row])?);
    Ok(())
}

fn market_series(ctx: &Ctx, template: &[Sleeve]) -> Result<Vec<fiopt::frontier::MarketSnapshot>> {
    match ctx.opts.series.as_ref().or(ctx.cfg.files.series.as_ref()) {
        Some(p) => load_market_series(p),
        None => {
            let syn = &ctx.cfg.synthetic;
            let dates = business_days(syn.start, syn.end);
            generate_synthetic_history(syn, template, &ctx.cfg.riskfree()?, &dates, ctx.cfg.seed)
        }
    }
}

fn backtest(ctx: &Ctx) -> Result<()> {
    let template = ctx.universe()?;
    let snaps = market_series(ctx, &template)?;
    let first = snaps.first().expect("nonempty series").date;
    let last = snaps.last().expect("nonempty series").date;
    let win = ctx.cfg.backtest;
    let dates = schedule(win.start.unwrap_or(first), win.end.unwrap_or(last), win.step_months)?;
    if dates.is_empty() {
        return Err(Error::Config("backtest window contains no dates".into()));
    }
    let setup = ctx.cfg.backtest_setup(template.clone())?;
    let result = run_backtest(&setup, &snaps, &dates, f64::from(win.step_months) / 12.0);

    let mut header = vec!["date".to_string(), "risk_limit".into(), "expected_return".into(), "binding".into()];
    header.extend(weight_header(&template));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for d in &result.dates {
        rows.extend(point_rows(&[d.date.to_string()], &d.points));
    }
    report(ctx.write("frontiers.csv", &header, &rows)?);

    let mut rows = Vec::new();
    for d in &result.dates {
        match &d.fit {
            Some(f) => rows.push(vec![d.date.to_string(), num(f.a), num(f.b), num(f.rmse), String::new()]),
            None => {
                let msg = d.error.clone().unwrap_or_default();
                eprintln!("warning: {}: {msg}", d.date);
                rows.push(vec![d.date.to_string(), String::new(), String::new(), String::new(), msg]);
            }
        }
    }
    report(ctx.write("fits.csv", &["date", "a", "b", "rmse", "error"], &rows)?);

    for note in &result.notes {
        eprintln!("warning: {note}");
    }
    if let Some(fs_) = &result.factors {
        let rows: Vec<Vec<String>> = (0..fs_.dates.len())
            .map(|k| vec![fs_.dates[k].clone(), num(fs_.a[k]), num(fs_.b[k]), num(fs_.b_star[k])])
            .collect();
        let path = ctx.write("factor_series.csv", &["date", "a", "b", "b_star"], &rows)?;
        // exponent on its own comment line under the preamble
        let text = fs::read_to_string(&path)?;
        let (pre, rest) = text.split_once('\n').expect("preamble line");
        fs::write(&path, format!("{pre}\n# p={} residual_cov={}\n{rest}", num(fs_.p), num(fs_.residual_cov)))?;
        report(path);
    }
    if let Some(ou) = &result.ou {
        let rows = vec![
            vec!["dt".into(), num(ou.dt)],
            vec!["kappa_11".into(), num(ou.kappa[(0, 0)])],
            vec!["kappa_12".into(), num(ou.kappa[(0, 1)])],
            vec!["kappa_21".into(), num(ou.kappa[(1, 0)])],
            vec!["kappa_22".into(), num(ou.kappa[(1, 1)])],
            vec!["mean_ln_a".into(), num(ou.long_run_mean[0])],
            vec!["mean_ln_b".into(), num(ou.long_run_mean[1])],
            vec!["noise_11".into(), num(ou.noise_cov[(0, 0)])],
            vec!["noise_12".into(), num(ou.noise_cov[(0, 1)])],
            vec!["noise_22".into(), num(ou.noise_cov[(1, 1)])],
        ];
        report(ctx.write("ou_fit.csv", &["parameter", "value"], &rows)?);
    }
    if result.dates.iter().all(|d| d.fit.is_none()) {
        return Err(Error::InvalidInput("no backtest date produced a frontier".into()));
    }
    Ok(())
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let template = ctx.universe()?;
    let syn = &ctx.cfg.synthetic;
    let dates = business_days(syn.start, syn.end);
    let snaps = generate_synthetic_history(syn, &template, &ctx.cfg.riskfree()?, &dates, ctx.cfg.seed)?;
    let path = ctx.opts.out.join("market_series.csv");
    let mut file = fs::File::create(&path)?;
    use std::io::Write;
    writeln!(file, "{}", ctx.preamble()?.line())?;
    write_market_series(file, &snaps)?;
    report(path);
    Ok(())
}

fn report(path: PathBuf) {
    println!("wrote {}", path.display());
}

fn dispatch(cmd: Command) -> Result<()> {
    let (name, opts, f): (&'static str, Common, fn(&Ctx) -> Result<()>) = match cmd {
        Command::Price(o) => ("price", o, price),
        Command::Risk(o) => ("risk", o, risk),
        Command::Er(o) => ("er", o, er),
        Command::Optimize(o) => ("optimize", o, optimize),
        Command::Frontier(o) => ("frontier", o, frontier),
        Command::Backtest(o) => ("backtest", o, backtest),
        Command::GenData(o) => ("gen-data", o, gen_data),
    };
    f(&Ctx::new(name, opts)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 2 } else { 1 })
        }
    }
}
