//! Efficient frontier: sweep the total-risk limit, fit
//! `r = a (1 - exp(-R / b))`, turn dated fits into a factor series, fit
//! Ornstein-Uhlenbeck dynamics to it, and run the whole thing over history.

use std::collections::BTreeMap;

use chrono::{Months, NaiveDate};
use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::credit::{
    expected_total_return, Curve, ExpectedReturn, Rating, RatingCurveSet, ReturnOptions, TransitionMatrix,
};
use crate::error::{Error, Result};
use crate::instruments::{price_bullet, BulletBond};
use crate::optimizer::{
    build_constraints, cutting_plane_solve, ConstraintCaps, ConvexRisk, CuttingPlaneOptions, PortfolioProblem,
    StdevRisk,
};
use crate::risk::{RiskConfig, RiskMeasure, RiskModel, Sleeve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub risk_limit: f64,
    pub expected_return: f64,
    /// Which limit stops further risk taking.
    pub binding: String,
    pub weights: Vec<f64>,
}

/// `n` log-spaced limits from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::InvalidInput(format!("bad grid {lo}:{hi}:{n}")));
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                (l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

pub fn default_grid() -> Vec<f64> {
    log_grid(0.005, 0.40, 20).expect("valid default grid")
}

const BINDING_TOL: f64 = 1e-6;

/// Best portfolio with total risk at most `limit`.
pub fn solve_frontier_point(
    problem: &PortfolioProblem,
    model: &RiskModel,
    limit: f64,
    cut: &CuttingPlaneOptions,
) -> Result<FrontierPoint> {
    let cfg = model.config();
    let n = problem.n_sleeves();
    let mut lp = problem.to_lp()?;
    let width = lp.n_vars();
    for measure in [RiskMeasure::RateUp, RiskMeasure::SpreadDouble, RiskMeasure::StressLoss] {
        let loss = model.loss_vector(measure).expect("scenario measure");
        let mut coeffs = loss.to_vec();
        coeffs.resize(width, 0.0);
        lp.add_le(coeffs, limit / cfg.weight(measure), format!("risk:{}", measure.label()))?;
    }
    let stdev = StdevRisk { model };
    let mut risks: Vec<(&dyn ConvexRisk, f64)> = Vec::new();
    if cfg.include_stdev {
        risks.push((&stdev, limit / cfg.weight(RiskMeasure::Stdev)));
    }
    let (sol, _) = cutting_plane_solve(&lp, &risks, cut)?;
    if !sol.is_optimal() {
        return Err(match sol.status {
            crate::lp::LpStatus::Infeasible => Error::Infeasible {
                violated_at_cash: problem.constraints.violated_at_cash(),
            },
            _ => Error::Unbounded,
        });
    }
    let weights: Vec<f64> = sol.x[..n].to_vec();
    let total = model.total_risk(&weights);
    let binding = if limit > 0.0 && total.value >= limit * (1.0 - BINDING_TOL) {
        total.binding.label().to_string()
    } else {
        sol.binding
            .iter()
            .map(|&i| lp.rows()[i].label.as_str())
            .find(|l| !l.starts_with("risk:") && !l.starts_with("cut:"))
            .map_or_else(|| "limits".to_string(), str::to_string)
    };
    let expected_return = crate::risk::dot(&problem.er, &weights);
    Ok(FrontierPoint {
        risk_limit: limit,
        expected_return,
        binding,
        weights,
    })
}

/// Solve every grid point independently (in parallel).
pub fn sweep_frontier(
    problem: &PortfolioProblem,
    model: &RiskModel,
    grid: &[f64],
    cut: &CuttingPlaneOptions,
) -> Result<Vec<FrontierPoint>> {
    if grid.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("risk grid must be nonnegative and strictly increasing".into()));
    }
    if model.len() != problem.n_sleeves() {
        return Err(Error::InvalidInput("risk model and problem disagree on universe size".into()));
    }
    grid.par_iter().map(|&r| solve_frontier_point(problem, model, r, cut)).collect()
}

/// Largest violation of monotonicity and of the chord condition over all
/// triples `i < j < k`; nonnegative values mean a concave nondecreasing
/// frontier.
pub fn shape_slack(points: &[(f64, f64)]) -> (f64, f64) {
    let mut mono = f64::INFINITY;
    for w in points.windows(2) {
        mono = mono.min(w[1].1 - w[0].1);
    }
    let mut chord = f64::INFINITY;
    for i in 0..points.len() {
        for k in i + 2..points.len() {
            let (x0, y0) = points[i];
            let (x1, y1) = points[k];
            for &(x, y) in &points[i + 1..k] {
                let line = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
                chord = chord.min(y - line);
            }
        }
    }
    (mono, chord)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierFit {
    pub a: f64,
    pub b: f64,
    pub rmse: f64,
    pub gradient_norm: f64,
    pub date: Option<String>,
}

impl FrontierFit {
    pub fn eval(&self, r: f64) -> f64 {
        -self.a * (-r / self.b).exp_m1()
    }

    pub fn derivative(&self, r: f64) -> f64 {
        self.a / self.b * (-r / self.b).exp()
    }

    /// Expected return per unit risk for small risk.
    pub fn slope_at_origin(&self) -> f64 {
        self.a / self.b
    }
}

fn basis(r: f64, b: f64) -> f64 {
    -(-r / b).exp_m1()
}

/// Best `a` for fixed `b` and the resulting sum of squares.
fn profile(points: &[(f64, f64)], b: f64) -> (f64, f64) {
    let (mut gg, mut gy) = (0.0, 0.0);
    for &(r, y) in points {
        let g = basis(r, b);
        gg += g * g;
        gy += g * y;
    }
    let a = if gg > 0.0 { gy / gg } else { 0.0 };
    let sse = points.iter().map(|&(r, y)| (a * basis(r, b) - y).powi(2)).sum();
    (a, sse)
}

/// Equal-weight least squares fit of `r = a (1 - exp(-R / b))`.
pub fn fit_frontier(points: &[(f64, f64)]) -> Result<FrontierFit> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "frontier fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    if xs.len() < 3 || points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("frontier fit needs 3 distinct finite risk levels".into()));
    }
    if !points.iter().any(|p| p.1 > 0.0) {
        return Err(Error::Degenerate("every frontier return is zero".into()));
    }
    let r_max = xs[xs.len() - 1];
    let (b_lo, b_hi) = (1e-4 * r_max, 1e3 * r_max);

    // log-spaced seed
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for k in 0..=400 {
        let b = (b_lo.ln() + (b_hi.ln() - b_lo.ln()) * k as f64 / 400.0).exp();
        let (a, sse) = profile(points, b);
        if sse < best.0 {
            best = (sse, a, b);
        }
    }
    let (_, mut a, mut b) = best;

    // Levenberg-Marquardt on (a, ln b)
    let residuals = |a: f64, b: f64| -> Vec<f64> { points.iter().map(|&(r, y)| a * basis(r, b) - y).collect() };
    let grad_jac = |a: f64, b: f64| -> (Vector2<f64>, Matrix2<f64>) {
        let mut jtj = Matrix2::zeros();
        let mut jte = Vector2::zeros();
        for &(r, y) in points {
            let g = basis(r, b);
            let e = a * g - y;
            // d/d ln b of a g = -a (r / b) exp(-r / b)
            let dlb = -a * (r / b) * (-r / b).exp();
            let j = Vector2::new(g, dlb);
            jtj += j * j.transpose();
            jte += j * e;
        }
        (jte, jtj)
    };
    let sse = |a: f64, b: f64| residuals(a, b).iter().map(|e| e * e).sum::<f64>();
    let mut lambda = 1e-3;
    let mut current = sse(a, b);
    let mut gnorm = grad_jac(a, b).0.norm();
    for _ in 0..500 {
        if gnorm < 1e-14 || current == 0.0 {
            break;
        }
        let (g, h) = grad_jac(a, b);
        let damped = h + Matrix2::from_diagonal(&h.diagonal()) * lambda + Matrix2::identity() * 1e-300;
        let Some(step) = damped.lu().solve(&(-g)) else {
            break;
        };
        let (na, nb) = (a + step[0], (b.ln() + step[1]).exp().clamp(b_lo, b_hi));
        let trial = sse(na, nb);
        if trial <= current {
            let improvement = current - trial;
            a = na;
            b = nb;
            current = trial;
            lambda = (lambda * 0.3).max(1e-12);
            gnorm = grad_jac(a, b).0.norm();
            if improvement <= 1e-30 && step.norm() < 1e-15 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let rmse = (current / points.len() as f64).sqrt();
    Ok(FrontierFit {
        a,
        b,
        rmse,
        gradient_norm: gnorm,
        date: None,
    })
}

/// Ornstein-Uhlenbeck estimate for a bivariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct OuFit {
    /// One-step autoregression matrix.
    pub phi: Matrix2<f64>,
    pub intercept: Vector2<f64>,
    /// Mean-reversion matrix `K = -log(phi) / dt`.
    pub kappa: Matrix2<f64>,
    pub long_run_mean: Vector2<f64>,
    /// Residual covariance of the one-step regression.
    pub noise_cov: Matrix2<f64>,
    pub dt: f64,
}

fn log_2x2(phi: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let tr = phi.trace();
    let det = phi.determinant();
    let disc = tr * tr / 4.0 - det;
    let id = Matrix2::identity();
    if disc < 0.0 {
        let modulus = det.sqrt();
        if modulus >= 1.0 {
            return Err(Error::NonMeanReverting { eigenvalue: modulus });
        }
        let theta = (-disc).sqrt().atan2(tr / 2.0);
        let j = (phi - id * (tr / 2.0)) / (-disc).sqrt();
        return Ok(id * modulus.ln() + j * theta);
    }
    let root = disc.sqrt();
    let (l1, l2) = (tr / 2.0 + root, tr / 2.0 - root);
    for l in [l1, l2] {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::NonMeanReverting { eigenvalue: l });
        }
    }
    if l1 - l2 < 1e-10 {
        let l = tr / 2.0;
        return Ok(id * l.ln() + (phi - id * l) / l);
    }
    Ok(((phi - id * l2) * l1.ln() - (phi - id * l1) * l2.ln()) / (l1 - l2))
}

/// VAR(1) regression `x_{t+1} = phi x_t + mu + eta` on an equally spaced
/// series, mapped to continuous-time mean reversion.
pub fn fit_ou(series: &[[f64; 2]], dt: f64) -> Result<OuFit> {
    if series.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "OU fit needs at least 10 observations, got {}",
            series.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("observation spacing must be positive".into()));
    }
    let n = series.len() - 1;
    let design = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { series[i][j - 1] });
    let target = DMatrix::from_fn(n, 2, |i, j| series[i + 1][j]);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::Degenerate("series has no variation to regress on".into()));
    }
    let coef = svd.solve(&target, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    let intercept = Vector2::new(coef[(0, 0)], coef[(0, 1)]);
    let phi = Matrix2::new(coef[(1, 0)], coef[(2, 0)], coef[(1, 1)], coef[(2, 1)]);
    let log_phi = log_2x2(&phi)?;
    let kappa = -log_phi / dt;
    let long_run_mean = (Matrix2::identity() - phi)
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("unit root in autoregression".into()))?
        * intercept;
    let resid = target - design * coef;
    let dof = (n as f64 - 3.0).max(1.0);
    let rt = resid.transpose() * &resid / dof;
    let noise_cov = Matrix2::new(rt[(0, 0)], rt[(0, 1)], rt[(1, 0)], rt[(1, 1)]);
    Ok(OuFit {
        phi,
        intercept,
        kappa,
        long_run_mean,
        noise_cov,
        dt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSeries {
    pub dates: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Slope of `ln b` on `ln a`.
    pub p: f64,
    pub b_star: Vec<f64>,
    /// Sample covariance of `ln a` and `ln b*` (zero up to rounding).
    pub residual_cov: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Decorrelate `b` from `a` via `b* = b / a^p`, `p` the OLS slope of
/// `ln b` on `ln a`.
pub fn factorize_series(dates: Vec<String>, a: Vec<f64>, b: Vec<f64>) -> Result<FactorSeries> {
    if a.len() != b.len() || dates.len() != a.len() {
        return Err(Error::InvalidInput("factor series lengths differ".into()));
    }
    if a.len() < 3 {
        return Err(Error::InvalidInput("factor series needs at least 3 dates".into()));
    }
    if a.iter().chain(&b).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("a and b must be positive".into()));
    }
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let var_a = cov(&la, &la);
    if var_a <= 1e-24 * (1.0 + mean(&la).powi(2)) {
        return Err(Error::Degenerate("a series is constant; exponent undefined".into()));
    }
    let p = cov(&la, &lb) / var_a;
    let b_star: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y / x.powf(p)).collect();
    let lbs: Vec<f64> = b_star.iter().map(|v| v.ln()).collect();
    let residual_cov = cov(&la, &lbs);
    Ok(FactorSeries {
        dates,
        a,
        b,
        p,
        b_star,
        residual_cov,
    })
}

/// Market state on one date: riskfree zero curve and per-sleeve
/// (yield, spread).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub date: NaiveDate,
    pub riskfree: Curve,
    pub sleeves: BTreeMap<String, (f64, f64)>,
}

impl MarketSnapshot {
    /// Shortest point of the riskfree curve.
    pub fn front_rate(&self) -> f64 {
        self.riskfree.points()[0].1
    }
}

/// Expected excess return per unit of NAV over `horizon`.
///
/// The sleeve's rating curve is rescaled to pass through its own spread,
/// so the bond carries no cheapness; every other rating curve moves by
/// the same factor. Floating sleeves are priced against a flat curve at
/// the front rate with coupon front rate plus spread.
pub fn sleeve_expected_return(
    sleeve: &Sleeve,
    curves: &RatingCurveSet,
    matrix: &TransitionMatrix,
    horizon: f64,
    opts: ReturnOptions,
) -> Result<ExpectedReturn> {
    let rating: Rating = sleeve.rating.parse()?;
    let t = sleeve.maturity;
    let base = curves.spread(rating, t)?;
    let local = if base > 0.0 {
        curves.scaled(sleeve.spread / base)
    } else {
        curves.shifted(sleeve.spread - base)
    };
    let (local, coupon, p0) = if sleeve.floating {
        let front = curves.riskfree().points()[0].1;
        let flat = local.with_riskfree(Curve::flat(front, 0.0, t.max(1.0)));
        let c = front + sleeve.spread;
        (flat, c, price_bullet(t, c, sleeve.frequency, front + sleeve.spread)?)
    } else {
        let p0 = price_bullet(t, sleeve.coupon, sleeve.frequency, sleeve.yield_value)?;
        (local, sleeve.coupon, p0)
    };
    let bond = BulletBond::new(t, coupon, sleeve.frequency)?;
    let er = expected_total_return(&bond, rating, p0, &local, matrix, horizon, opts)?;
    Ok(ExpectedReturn {
        carry_rolldown: er.carry_rolldown / p0,
        migration: er.migration / p0,
        cheapness: er.cheapness / p0,
        total: er.total / p0,
    })
}

/// Rebuild the template sleeves as par bonds at the snapshot's yields.
pub fn sleeves_at(template: &[Sleeve], snap: &MarketSnapshot) -> Result<Vec<Sleeve>> {
    template
        .iter()
        .map(|s| {
            let &(y, spread) = snap
                .sleeves
                .get(&s.name)
                .ok_or_else(|| Error::InvalidInput(format!("no market data for {} on {}", s.name, snap.date)))?;
            let mut out = s.clone();
            out.yield_value = y;
            out.spread = spread;
            out.coupon = y;
            out.derive_durations()?;
            out.validate()?;
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BacktestSetup {
    pub template: Vec<Sleeve>,
    pub curves: RatingCurveSet,
    pub matrix: TransitionMatrix,
    pub caps: ConstraintCaps,
    pub risk: RiskConfig,
    pub grid: Vec<f64>,
    pub horizon: f64,
    pub er_options: ReturnOptions,
    pub cut: CuttingPlaneOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DateResult {
    pub date: NaiveDate,
    pub er: Vec<f64>,
    pub points: Vec<FrontierPoint>,
    pub fit: Option<FrontierFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub dates: Vec<DateResult>,
    pub factors: Option<FactorSeries>,
    pub ou: Option<OuFit>,
    /// Why the factor or OU stage was skipped, if it was.
    pub notes: Vec<String>,
}

/// Frontier, fit and expected returns for one snapshot.
pub fn run_date(setup: &BacktestSetup, snap: &MarketSnapshot) -> Result<(Vec<f64>, Vec<FrontierPoint>, FrontierFit)> {
    let sleeves = sleeves_at(&setup.template, snap)?;
    let curves = setup.curves.with_riskfree(snap.riskfree.clone());
    let er = sleeves
        .iter()
        .map(|s| sleeve_expected_return(s, &curves, &setup.matrix, setup.horizon, setup.er_options).map(|e| e.total))
        .collect::<Result<Vec<f64>>>()?;
    let constraints = build_constraints(&sleeves, &setup.caps)?;
    let problem = PortfolioProblem::new(er.clone(), constraints)?;
    let model = RiskModel::new(&sleeves, &setup.risk)?;
    let points = sweep_frontier(&problem, &model, &setup.grid, &setup.cut)?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.risk_limit, p.expected_return)).collect();
    let mut fit = fit_frontier(&xy)?;
    fit.date = Some(snap.date.to_string());
    Ok((er, points, fit))
}

/// Target dates from `start` every `step_months` up to `end`.
pub fn schedule(start: NaiveDate, end: NaiveDate, step_months: u32) -> Result<Vec<NaiveDate>> {
    if step_months == 0 {
        return Err(Error::Config("backtest step must be at least one month".into()));
    }
    let mut out = Vec::new();
    let mut k = 0;
    while let Some(d) = start.checked_add_months(Months::new(step_months * k)) {
        if d > end {
            break;
        }
        out.push(d);
        k += 1;
    }
    Ok(out)
}

/// Days a target date may reach back for the latest available snapshot.
pub const SNAP_WINDOW_DAYS: i64 = 7;

/// Run every scheduled date (in parallel). A date with no snapshot within
/// the window, or whose run fails, is reported and skipped.
pub fn run_backtest(setup: &BacktestSetup, snapshots: &[MarketSnapshot], dates: &[NaiveDate], dt: f64) -> BacktestResult {
    let mut results: Vec<DateResult> = dates
        .par_iter()
        .map(|&target| {
            let found = snapshots
                .iter()
                .rev()
                .find(|s| s.date <= target && (target - s.date).num_days() <= SNAP_WINDOW_DAYS);
            let Some(snap) = found else {
                return DateResult {
                    date: target,
                    er: Vec::new(),
                    points: Vec::new(),
                    fit: None,
                    error: Some(format!("no market data within {SNAP_WINDOW_DAYS} days of {target}")),
                };
            };
            match run_date(setup, snap) {
                Ok((er, points, fit)) => DateResult {
                    date: target,
                    er,
                    points,
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => DateResult {
                    date: target,
                    er: Vec::new(),
                    points: Vec::new(),
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    results.sort_by_key(|r| r.date);

    let mut notes = Vec::new();
    let fitted: Vec<&DateResult> = results.iter().filter(|r| r.fit.is_some()).collect();
    let dates_str: Vec<String> = fitted.iter().map(|r| r.date.to_string()).collect();
    let a: Vec<f64> = fitted.iter().map(|r| r.fit.as_ref().unwrap().a).collect();
    let b: Vec<f64> = fitted.iter().map(|r| r.fit.as_ref().unwrap().b).collect();
    let factors = match factorize_series(dates_str, a.clone(), b.clone()) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("factor series: {e}"));
            None
        }
    };
    let series: Vec<[f64; 2]> = a.iter().zip(&b).map(|(x, y)| [x.ln(), y.ln()]).collect();
    let ou = match fit_ou(&series, dt) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("OU fit: {e}"));
            None
        }
    };
    BacktestResult {
        dates: results,
        factors,
        ou,
        notes,
    }
}
