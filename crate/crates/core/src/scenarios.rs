//! Rate and credit scenarios, short-rate simulation, and the Gaussian /
//! lognormal move statistics used to calibrate scenario sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruments::{price_bullet, stress_loss};
use crate::risk::Sleeve;

/// Trading days per year used to scale annual volatilities to short horizons.
pub const BUSINESS_DAYS_PER_YEAR: f64 = 260.0;

const Z95: f64 = 1.959_963_984_540_054;
const Z99: f64 = 2.575_829_303_548_900_4;

/// Yield-curve move of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateMove {
    Parallel { bump: f64 },
    /// Rotation about `pivot`: the bump is zero at the pivot maturity,
    /// `short_bump` at zero maturity and `long_bump` at twice the pivot,
    /// linear in maturity on either side.
    Steepen {
        short_bump: f64,
        long_bump: f64,
        pivot: f64,
    },
}

impl Default for RateMove {
    fn default() -> Self {
        RateMove::Parallel { bump: 0.0 }
    }
}

impl RateMove {
    pub const DEFAULT_PIVOT: f64 = 5.0;

    pub fn bump_at(&self, maturity: f64) -> f64 {
        match *self {
            RateMove::Parallel { bump } => bump,
            RateMove::Steepen {
                short_bump,
                long_bump,
                pivot,
            } => {
                if maturity <= pivot {
                    short_bump * (pivot - maturity) / pivot
                } else {
                    long_bump * (maturity - pivot) / pivot
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            RateMove::Parallel { bump } => bump == 0.0,
            RateMove::Steepen {
                short_bump, long_bump, ..
            } => short_bump == 0.0 && long_bump == 0.0,
        }
    }
}

/// A labelled market shock with its worst acceptable loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub label: String,
    #[serde(default)]
    pub rate_move: RateMove,
    #[serde(default = "unit")]
    pub spread_multiplier: f64,
    /// Move every yield to riskfree + z* (credit stress loss).
    #[serde(default)]
    pub stress: bool,
    /// Overrides the sleeve's own z* when set.
    #[serde(default)]
    pub stress_spread: Option<f64>,
    /// Worst acceptable loss, fraction of NAV (epsilon_i).
    #[serde(default)]
    pub loss_floor: f64,
}

fn unit() -> f64 {
    1.0
}

impl ScenarioSpec {
    pub fn identity(label: &str) -> Self {
        Self {
            label: label.to_owned(),
            rate_move: RateMove::default(),
            spread_multiplier: 1.0,
            stress: false,
            stress_spread: None,
            loss_floor: 0.0,
        }
    }

    pub fn parallel(label: &str, bump: f64) -> Self {
        Self {
            rate_move: RateMove::Parallel { bump },
            ..Self::identity(label)
        }
    }

    pub fn steepen(label: &str, short_bump: f64, long_bump: f64, pivot: f64) -> Self {
        Self {
            rate_move: RateMove::Steepen {
                short_bump,
                long_bump,
                pivot,
            },
            ..Self::identity(label)
        }
    }

    pub fn spread_multiplier(label: &str, multiplier: f64) -> Self {
        Self {
            spread_multiplier: multiplier,
            ..Self::identity(label)
        }
    }

    pub fn stress(label: &str) -> Self {
        Self {
            stress: true,
            ..Self::identity(label)
        }
    }

    pub fn with_floor(mut self, loss_floor: f64) -> Self {
        self.loss_floor = loss_floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("scenario {}: {msg}", self.label)));
        if !(self.spread_multiplier > 0.0) {
            return bad("spread multiplier must be positive");
        }
        if !(self.loss_floor >= 0.0) {
            return bad("loss floor must be nonnegative");
        }
        if let RateMove::Steepen { pivot, .. } = self.rate_move {
            if !(pivot > 0.0) {
                return bad("steepening pivot must be positive");
            }
        }
        let shocks = [
            !self.rate_move.is_zero(),
            self.spread_multiplier != 1.0,
            self.stress || self.stress_spread.is_some(),
        ];
        if shocks.iter().filter(|s| **s).count() > 1 {
            return bad("combine at most one of rate move, spread multiplier, stress level");
        }
        if let Some(z) = self.stress_spread {
            if !(z >= 0.0) {
                return bad("stress spread must be nonnegative");
            }
        }
        Ok(())
    }
}

/// Return of a sleeve under a scenario, `P(y') / P(y) - 1`, or minus the
/// credit stress loss for stress scenarios.
pub fn apply_scenario(sleeve: &Sleeve, spec: &ScenarioSpec) -> Result<f64> {
    spec.validate()?;
    if spec.stress || spec.stress_spread.is_some() {
        let z = spec.stress_spread.unwrap_or(sleeve.stress_spread);
        let y_star = sleeve.riskfree_yield() + z;
        if y_star == sleeve.yield_value {
            return Ok(0.0);
        }
        return Ok(-stress_loss(sleeve.maturity, sleeve.yield_value, sleeve.frequency, y_star)?);
    }
    let rate = if sleeve.floating {
        0.0
    } else {
        spec.rate_move.bump_at(sleeve.maturity)
    };
    let shocked = sleeve.yield_value + rate + sleeve.spread * (spec.spread_multiplier - 1.0);
    if shocked == sleeve.yield_value {
        return Ok(0.0);
    }
    let base = price_bullet(sleeve.maturity, sleeve.coupon, sleeve.frequency, sleeve.yield_value)?;
    let moved = price_bullet(sleeve.maturity, sleeve.coupon, sleeve.frequency, shocked)?;
    Ok(moved / base - 1.0)
}

/// Scenario-by-sleeve returns `dX_j(w_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMatrix {
    pub labels: Vec<String>,
    pub floors: Vec<f64>,
    /// `returns[i][j]`: return of sleeve `j` in scenario `i`.
    pub returns: Vec<Vec<f64>>,
}

impl ScenarioMatrix {
    pub fn build(sleeves: &[Sleeve], specs: &[ScenarioSpec]) -> Result<Self> {
        let returns = specs
            .iter()
            .map(|spec| sleeves.iter().map(|s| apply_scenario(s, spec)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels: specs.iter().map(|s| s.label.clone()).collect(),
            floors: specs.iter().map(|s| s.loss_floor).collect(),
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Return of a portfolio (e.g. an index) with the given weights in each scenario.
    pub fn portfolio_returns(&self, weights: &[f64]) -> Vec<f64> {
        self.returns
            .iter()
            .map(|row| row.iter().zip(weights).map(|(r, w)| r * w).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateModelParams {
    /// Absolute annual yield (short-rate) volatility.
    pub sigma_y: f64,
    /// Mean-reversion speed per annum.
    pub kappa: f64,
    /// Relative annual spread volatility.
    pub sigma_hat: f64,
}

impl Default for RateModelParams {
    fn default() -> Self {
        Self {
            sigma_y: 0.009,
            kappa: 0.0,
            sigma_hat: 0.40,
        }
    }
}

impl RateModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_y >= 0.0 && self.kappa >= 0.0 && self.sigma_hat >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid rate model parameters {self:?}")));
        }
        Ok(())
    }
}

/// Per-path generator derived from `(seed, path_index)`, so paths can be
/// produced in any order or in parallel with identical results.
pub(crate) fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Euler scheme for `dr = (theta(t) - kappa r) dt + sigma dW`.
///
/// Returns `n_paths` paths of `steps + 1` points starting at `r0`.
pub fn simulate_short_rate<F>(
    params: &RateModelParams,
    theta: F,
    r0: f64,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64) -> f64 + Sync,
{
    params.validate()?;
    if !(horizon > 0.0) || steps == 0 || n_paths == 0 {
        return Err(Error::InvalidInput(format!(
            "need positive horizon, steps and paths (got {horizon}, {steps}, {n_paths})"
        )));
    }
    let dt = horizon / steps as f64;
    let sd = params.sigma_y * dt.sqrt();
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p as u64);
            let mut path = Vec::with_capacity(steps + 1);
            let mut r = r0;
            path.push(r);
            for k in 0..steps {
                let t = k as f64 * dt;
                let z: f64 = StandardNormal.sample(&mut rng);
                r += (theta(t) - params.kappa * r) * dt + sd * z;
                path.push(r);
            }
            path
        })
        .collect();
    Ok(paths)
}

/// Summary statistics of a short-horizon move distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub mean_abs: f64,
    pub mean_sq: f64,
    pub mean_fourth: f64,
    pub band95: (f64, f64),
    pub band99: (f64, f64),
}

impl MoveStats {
    fn zero() -> Self {
        Self {
            mean_abs: 0.0,
            mean_sq: 0.0,
            mean_fourth: 0.0,
            band95: (0.0, 0.0),
            band99: (0.0, 0.0),
        }
    }
}

fn horizon_scale(horizon_days: f64, business_days_per_year: f64) -> Result<f64> {
    if !(horizon_days > 0.0 && business_days_per_year > 0.0) {
        return Err(Error::InvalidInput("horizon and year length must be positive".into()));
    }
    Ok((horizon_days / business_days_per_year).sqrt())
}

/// Statistics of Normal yield changes over `horizon_days`, in percentage
/// points, for an annual absolute volatility `sigma_y` (a fraction).
pub fn table_stats_normal(sigma_y: f64, horizon_days: f64, business_days_per_year: f64) -> Result<MoveStats> {
    if !(sigma_y >= 0.0) {
        return Err(Error::InvalidInput(format!("sigma_y must be nonnegative, got {sigma_y}")));
    }
    let s = 100.0 * sigma_y * horizon_scale(horizon_days, business_days_per_year)?;
    if s == 0.0 {
        return Ok(MoveStats::zero());
    }
    let var = s * s;
    Ok(MoveStats {
        mean_abs: s * (2.0 / std::f64::consts::PI).sqrt(),
        mean_sq: var,
        mean_fourth: 3.0 * var * var,
        band95: (-Z95 * s, Z95 * s),
        band99: (-Z99 * s, Z99 * s),
    })
}

/// Statistics of relative spread changes `e^{sigma Z} - 1` (zero log-drift)
/// over `horizon_days`. Quantile bands are closed-form; moments are Monte
/// Carlo with antithetic pairs.
pub fn table_stats_lognormal(
    sigma_hat: f64,
    horizon_days: f64,
    business_days_per_year: f64,
    n_mc: usize,
    seed: u64,
) -> Result<MoveStats> {
    if !(sigma_hat >= 0.0) {
        return Err(Error::InvalidInput(format!("sigma_hat must be nonnegative, got {sigma_hat}")));
    }
    let s = sigma_hat * horizon_scale(horizon_days, business_days_per_year)?;
    if s == 0.0 {
        return Ok(MoveStats::zero());
    }
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be positive".into()));
    }
    let mut rng = path_rng(seed, 0);
    let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
    for _ in 0..n_mc {
        let z: f64 = StandardNormal.sample(&mut rng);
        for x in [(s * z).exp_m1(), (-s * z).exp_m1()] {
            let x2 = x * x;
            m1 += x.abs();
            m2 += x2;
            m4 += x2 * x2;
        }
    }
    let n = 2.0 * n_mc as f64;
    let band = |q: f64| ((-q * s).exp_m1(), (q * s).exp_m1());
    Ok(MoveStats {
        mean_abs: m1 / n,
        mean_sq: m2 / n,
        mean_fourth: m4 / n,
        band95: band(Z95),
        band99: band(Z99),
    })
}
