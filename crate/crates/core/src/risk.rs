//! Portfolio risk measures.
//!
//! Four measures are combined by weighted maximum: loss under a riskfree
//! rate rise, loss under credit spreads doubling (CSx2), credit stress loss
//! (CSL) and the annual standard deviation. The three scenario losses are
//! linear in the weights; the standard deviation is convex.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruments::{duration_convexity, BulletBond};
use crate::scenarios::{apply_scenario, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sector {
    HighYield,
    EmergingMarkets,
    Structured,
    Financial,
}

impl Sector {
    pub fn tag(self) -> &'static str {
        match self {
            Sector::HighYield => "HY",
            Sector::EmergingMarkets => "EM",
            Sector::Structured => "STRUCT",
            Sector::Financial => "FIN",
        }
    }
}

impl FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HY" => Ok(Sector::HighYield),
            "EM" => Ok(Sector::EmergingMarkets),
            "STRUCT" | "STRUCTURED" => Ok(Sector::Structured),
            "FIN" | "FINANCIAL" => Ok(Sector::Financial),
            other => Err(Error::InvalidInput(format!("unknown sector tag {other:?}"))),
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One investable asset class, modelled as a bullet bond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sleeve {
    pub name: String,
    pub ticker: String,
    pub maturity: f64,
    pub coupon: f64,
    pub frequency: u32,
    pub rating: String,
    pub yield_value: f64,
    /// Credit spread over the riskfree yield of the same maturity.
    pub spread: f64,
    pub d_ir: f64,
    pub d_cr: f64,
    pub floating: bool,
    pub sectors: BTreeSet<Sector>,
    /// Allocation limit, fraction of NAV.
    pub limit: f64,
    /// Stress spread level z*; the stress yield is riskfree + z*.
    pub stress_spread: f64,
}

impl Sleeve {
    pub fn bond(&self) -> BulletBond {
        BulletBond {
            maturity_years: self.maturity,
            coupon_rate: self.coupon,
            payments_per_year: self.frequency,
        }
    }

    pub fn riskfree_yield(&self) -> f64 {
        self.yield_value - self.spread
    }

    pub fn has_sector(&self, sector: Sector) -> bool {
        self.sectors.contains(&sector)
    }

    /// Recomputes both durations from (T, c, m, y). Floating sleeves carry
    /// no rate duration; sleeves without spread carry no credit duration.
    pub fn derive_durations(&mut self) -> Result<()> {
        let (d, _) = duration_convexity(self.maturity, self.coupon, self.frequency, self.yield_value)?;
        self.d_ir = if self.floating { 0.0 } else { d };
        self.d_cr = if self.spread > 0.0 { d } else { 0.0 };
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("sleeve {}: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::InvalidInput("sleeve with empty name".into()));
        }
        if !(self.maturity > 0.0) {
            return bad(format!("maturity {} must be positive", self.maturity));
        }
        if self.frequency == 0 {
            return bad("frequency must be at least 1".into());
        }
        if !(self.d_ir >= 0.0 && self.d_cr >= 0.0) {
            return bad("durations must be nonnegative".into());
        }
        if self.floating && self.d_ir != 0.0 {
            return bad("floating sleeve must have zero rate duration".into());
        }
        if !(0.0..=1.0).contains(&self.limit) {
            return bad(format!("allocation limit {} outside [0, 1]", self.limit));
        }
        if !(self.spread >= 0.0) {
            return bad(format!("negative spread {}", self.spread));
        }
        if self.spread > 0.0 && !(self.stress_spread > 0.0) {
            return bad("credit sleeve needs a positive stress spread".into());
        }
        if !(self.stress_spread >= 0.0) {
            return bad(format!("negative stress spread {}", self.stress_spread));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskMeasure {
    /// R1: loss from a riskfree rate rise.
    RateUp,
    /// R2: loss from credit spreads doubling.
    SpreadDouble,
    /// R3: credit stress loss.
    StressLoss,
    /// R4: standard deviation over the horizon.
    Stdev,
}

impl RiskMeasure {
    pub const ALL: [RiskMeasure; 4] = [
        RiskMeasure::RateUp,
        RiskMeasure::SpreadDouble,
        RiskMeasure::StressLoss,
        RiskMeasure::Stdev,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RiskMeasure::RateUp => "rate_up",
            RiskMeasure::SpreadDouble => "csx2",
            RiskMeasure::StressLoss => "csl",
            RiskMeasure::Stdev => "stdev",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RiskMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RiskMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r1" | "rate_up" => Ok(RiskMeasure::RateUp),
            "r2" | "csx2" => Ok(RiskMeasure::SpreadDouble),
            "r3" | "csl" => Ok(RiskMeasure::StressLoss),
            "r4" | "stdev" => Ok(RiskMeasure::Stdev),
            other => Err(Error::InvalidInput(format!("unknown risk measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    /// Absolute annual yield volatility.
    pub sigma_y: f64,
    /// Relative annual credit-spread volatility.
    pub sigma_credit: f64,
    /// Correlation between the credit risks of different sleeves.
    pub rho: f64,
    /// Horizon for the standard deviation, years.
    pub horizon: f64,
    /// Weights on (R1, R2, R3, R4) in the max-combination.
    pub weights: [f64; 4],
    /// When false the standard-deviation term is dropped entirely.
    pub include_stdev: bool,
    /// Size of the R1 parallel rate rise.
    pub rate_shock: f64,
    /// Spread multiplier of the R2 scenario.
    pub spread_shock: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            sigma_y: 0.009,
            sigma_credit: 0.35,
            rho: 0.8,
            horizon: 1.0,
            weights: [1.0, 1.0, 1.0, 2.0],
            include_stdev: true,
            rate_shock: 0.02,
            spread_shock: 2.0,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(self.sigma_y > 0.0 && self.sigma_credit > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidInput("volatilities and horizon must be positive".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput("risk weights must be positive".into()));
        }
        if !(self.spread_shock > 0.0) {
            return Err(Error::InvalidInput("spread shock multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn weight(&self, measure: RiskMeasure) -> f64 {
        self.weights[measure.index()]
    }

    pub fn active_measures(&self) -> impl Iterator<Item = RiskMeasure> + '_ {
        RiskMeasure::ALL
            .into_iter()
            .filter(move |m| *m != RiskMeasure::Stdev || self.include_stdev)
    }

    pub fn rate_scenario(&self) -> ScenarioSpec {
        ScenarioSpec::parallel("rate_up", self.rate_shock)
    }

    pub fn spread_scenario(&self) -> ScenarioSpec {
        ScenarioSpec::spread_multiplier("csx2", self.spread_shock)
    }
}

/// Result of [`total_risk`].
#[derive(Debug, Clone, PartialEq)]
pub struct TotalRisk {
    pub value: f64,
    pub binding: RiskMeasure,
    /// Weighted measures `alpha_k R_k` for every active measure.
    pub weighted: Vec<(RiskMeasure, f64)>,
}

/// Per-sleeve loss vectors and stdev loadings for a fixed universe, so that
/// every measure is a cheap function of the weights.
#[derive(Debug, Clone)]
pub struct RiskModel {
    cfg: RiskConfig,
    rate_loss: Vec<f64>,
    spread_loss: Vec<f64>,
    stress_loss: Vec<f64>,
    d_ir: Vec<f64>,
    credit_loading: Vec<f64>,
}

impl RiskModel {
    pub fn new(sleeves: &[Sleeve], cfg: &RiskConfig) -> Result<Self> {
        cfg.validate()?;
        let losses = |spec: &ScenarioSpec| -> Result<Vec<f64>> {
            sleeves.iter().map(|s| apply_scenario(s, spec).map(|r| -r)).collect()
        };
        let stress = ScenarioSpec::stress("csl");
        Ok(Self {
            cfg: cfg.clone(),
            rate_loss: losses(&cfg.rate_scenario())?,
            spread_loss: losses(&cfg.spread_scenario())?,
            stress_loss: losses(&stress)?,
            d_ir: sleeves.iter().map(|s| s.d_ir).collect(),
            credit_loading: sleeves.iter().map(|s| s.d_cr * s.spread).collect(),
        })
    }

    pub fn config(&self) -> &RiskConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.d_ir.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_ir.is_empty()
    }

    /// Per-sleeve loss coefficients of a linear measure (R1..R3).
    pub fn loss_vector(&self, measure: RiskMeasure) -> Option<&[f64]> {
        match measure {
            RiskMeasure::RateUp => Some(&self.rate_loss),
            RiskMeasure::SpreadDouble => Some(&self.spread_loss),
            RiskMeasure::StressLoss => Some(&self.stress_loss),
            RiskMeasure::Stdev => None,
        }
    }

    pub fn measure(&self, u: &[f64], measure: RiskMeasure) -> f64 {
        match self.loss_vector(measure) {
            Some(loss) => dot(u, loss),
            None => self.stdev(u),
        }
    }

    pub fn variance(&self, u: &[f64]) -> f64 {
        let c = &self.cfg;
        let rate = dot(u, &self.d_ir);
        let credit = dot(u, &self.credit_loading);
        let idio: f64 = u
            .iter()
            .zip(&self.credit_loading)
            .map(|(w, g)| (w * g).powi(2))
            .sum();
        let sc2 = c.sigma_credit * c.sigma_credit;
        (rate * rate * c.sigma_y * c.sigma_y + c.rho * credit * credit * sc2 + (1.0 - c.rho) * idio * sc2)
            * c.horizon
    }

    pub fn stdev(&self, u: &[f64]) -> f64 {
        self.variance(u).max(0.0).sqrt()
    }

    /// Gradient of the standard deviation; zero where the stdev vanishes.
    pub fn stdev_gradient(&self, u: &[f64]) -> Vec<f64> {
        let c = &self.cfg;
        let sd = self.stdev(u);
        if sd <= 0.0 {
            return vec![0.0; u.len()];
        }
        let rate = dot(u, &self.d_ir);
        let credit = dot(u, &self.credit_loading);
        let sc2 = c.sigma_credit * c.sigma_credit;
        (0..u.len())
            .map(|j| {
                let g = self.credit_loading[j];
                let half_dvar = c.sigma_y * c.sigma_y * self.d_ir[j] * rate
                    + c.rho * sc2 * g * credit
                    + (1.0 - c.rho) * sc2 * u[j] * g * g;
                half_dvar * c.horizon / sd
            })
            .collect()
    }

    pub fn total_risk(&self, u: &[f64]) -> TotalRisk {
        let weighted: Vec<(RiskMeasure, f64)> = self
            .cfg
            .active_measures()
            .map(|m| (m, self.cfg.weight(m) * self.measure(u, m)))
            .collect();
        let (binding, value) = weighted
            .iter()
            .copied()
            .fold((RiskMeasure::RateUp, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        TotalRisk {
            value,
            binding,
            weighted,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(u: &[f64], sleeves: &[Sleeve]) -> Result<()> {
    if u.len() != sleeves.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} sleeves",
            u.len(),
            sleeves.len()
        )));
    }
    Ok(())
}

/// Signed loss of the portfolio under one of the scenario measures R1..R3.
pub fn scenario_measure(u: &[f64], sleeves: &[Sleeve], measure: RiskMeasure, cfg: &RiskConfig) -> Result<f64> {
    check_weights(u, sleeves)?;
    if measure == RiskMeasure::Stdev {
        return Err(Error::InvalidInput("stdev is not a scenario measure".into()));
    }
    Ok(RiskModel::new(sleeves, cfg)?.measure(u, measure))
}

pub fn portfolio_stdev(u: &[f64], sleeves: &[Sleeve], cfg: &RiskConfig) -> Result<f64> {
    check_weights(u, sleeves)?;
    Ok(RiskModel::new(sleeves, cfg)?.stdev(u))
}

pub fn total_risk(u: &[f64], sleeves: &[Sleeve], cfg: &RiskConfig) -> Result<TotalRisk> {
    check_weights(u, sleeves)?;
    Ok(RiskModel::new(sleeves, cfg)?.total_risk(u))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::instruments::price_bullet;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    pub(crate) fn sleeve(name: &str, t: f64, y: f64, s: f64, floating: bool) -> Sleeve {
        let mut sl = Sleeve {
            name: name.into(),
            ticker: String::new(),
            maturity: t,
            coupon: y,
            frequency: 2,
            rating: if s > 0.0 { "BBB".into() } else { "AAA".into() },
            yield_value: y,
            spread: s,
            d_ir: 0.0,
            d_cr: 0.0,
            floating,
            sectors: BTreeSet::new(),
            limit: 1.0,
            stress_spread: if s > 0.0 { 4.0 * s } else { 0.0 },
        };
        sl.derive_durations().unwrap();
        sl
    }

    pub(crate) fn mixed_book() -> Vec<Sleeve> {
        vec![
            sleeve("ust5", 5.0, 0.04, 0.0, false),
            sleeve("ig7", 7.0, 0.05, 0.012, false),
            sleeve("hy5", 5.0, 0.075, 0.035, false),
            sleeve("clo", 6.0, 0.06, 0.02, true),
        ]
    }

    /// Explicit covariance assembly: rate factor, common credit factor and
    /// idiosyncratic credit terms.
    fn covariance_oracle(sleeves: &[Sleeve], cfg: &RiskConfig) -> DMatrix<f64> {
        let n = sleeves.len();
        let d = DVector::from_iterator(n, sleeves.iter().map(|s| s.d_ir));
        let g = DVector::from_iterator(n, sleeves.iter().map(|s| s.d_cr * s.spread));
        let sc2 = cfg.sigma_credit.powi(2);
        let mut c = &d * d.transpose() * cfg.sigma_y.powi(2);
        for i in 0..n {
            for j in 0..n {
                let corr = if i == j { 1.0 } else { cfg.rho };
                c[(i, j)] += corr * sc2 * g[i] * g[j];
            }
        }
        c * cfg.horizon
    }

    #[test]
    fn cash_has_no_risk() {
        let book = mixed_book();
        let cfg = RiskConfig::default();
        let u = vec![0.0; book.len()];
        for m in RiskMeasure::ALL {
            let model = RiskModel::new(&book, &cfg).unwrap();
            assert_eq!(model.measure(&u, m), 0.0);
        }
        assert_eq!(total_risk(&u, &book, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn floating_sleeve_has_no_rate_loss() {
        let book = vec![sleeve("frn", 5.0, 0.05, 0.02, true)];
        let cfg = RiskConfig::default();
        assert_eq!(scenario_measure(&[1.0], &book, RiskMeasure::RateUp, &cfg).unwrap(), 0.0);
        assert!(scenario_measure(&[1.0], &book, RiskMeasure::SpreadDouble, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn par_bond_rate_loss_matches_reprice() {
        let book = vec![sleeve("ust5", 5.0, 0.04, 0.0, false)];
        let r1 = scenario_measure(&[1.0], &book, RiskMeasure::RateUp, &RiskConfig::default()).unwrap();
        assert_relative_eq!(r1, 1.0 - price_bullet(5.0, 0.04, 2, 0.06).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(r1, 0.085_302_028_367_758_3, max_relative = 1e-12);
    }

    #[test]
    fn single_rate_sleeve_stdev_collapses() {
        let mut s = sleeve("x", 5.0, 0.04, 0.0, false);
        s.d_ir = 5.0;
        let sd = portfolio_stdev(&[1.0], &[s], &RiskConfig::default()).unwrap();
        assert_relative_eq!(sd, 0.045, max_relative = 1e-14);
    }

    #[test]
    fn perfect_correlation_merges_identical_sleeves() {
        let cfg = RiskConfig {
            rho: 1.0,
            ..RiskConfig::default()
        };
        let a = sleeve("a", 5.0, 0.06, 0.02, true);
        let one = portfolio_stdev(&[1.0], std::slice::from_ref(&a), &cfg).unwrap();
        let two = portfolio_stdev(&[0.5, 0.5], &[a.clone(), a], &cfg).unwrap();
        assert_relative_eq!(one, two, max_relative = 1e-14);
    }

    #[test]
    fn stdev_matches_covariance_oracle() {
        let book = mixed_book();
        for rho in [0.0, 0.5, 0.8, 1.0] {
            let cfg = RiskConfig {
                rho,
                ..RiskConfig::default()
            };
            let c = covariance_oracle(&book, &cfg);
            let u = DVector::from_vec(vec![0.3, 0.2, 0.25, 0.15]);
            let oracle = (u.transpose() * &c * &u)[(0, 0)];
            let model = RiskModel::new(&book, &cfg).unwrap();
            assert!((model.variance(u.as_slice()) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn stdev_gradient_matches_finite_differences() {
        let book = mixed_book();
        let model = RiskModel::new(&book, &RiskConfig::default()).unwrap();
        let u = [0.3, 0.2, 0.25, 0.15];
        let g = model.stdev_gradient(&u);
        for j in 0..u.len() {
            let h = 1e-6;
            let mut up = u;
            let mut dn = u;
            up[j] += h;
            dn[j] -= h;
            let fd = (model.stdev(&up) - model.stdev(&dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn total_risk_is_max_of_components() {
        let book = mixed_book();
        let cfg = RiskConfig::default();
        let u = vec![0.25; 4];
        let tr = total_risk(&u, &book, &cfg).unwrap();
        let r = [
            scenario_measure(&u, &book, RiskMeasure::RateUp, &cfg).unwrap(),
            scenario_measure(&u, &book, RiskMeasure::SpreadDouble, &cfg).unwrap(),
            scenario_measure(&u, &book, RiskMeasure::StressLoss, &cfg).unwrap(),
            2.0 * portfolio_stdev(&u, &book, &cfg).unwrap(),
        ];
        let expected = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(tr.value, expected);
    }

    #[test]
    fn stdev_can_bind() {
        // long treasury: convexity makes the +2% loss smaller than 2 * 0.9% * D
        let book = vec![sleeve("ust30", 30.0, 0.03, 0.0, false)];
        let tr = total_risk(&[1.0], &book, &RiskConfig::default()).unwrap();
        assert_eq!(tr.binding, RiskMeasure::Stdev);
        let no_sd = RiskConfig {
            include_stdev: false,
            ..RiskConfig::default()
        };
        let tr = total_risk(&[1.0], &book, &no_sd).unwrap();
        assert_eq!(tr.binding, RiskMeasure::RateUp);
        assert_eq!(tr.weighted.len(), 3);
    }

    #[test]
    fn measure_tags() {
        assert_eq!("csx2".parse::<RiskMeasure>().unwrap(), RiskMeasure::SpreadDouble);
        assert!("r9".parse::<RiskMeasure>().is_err());
        let book = mixed_book();
        assert!(scenario_measure(&[0.0; 4], &book, RiskMeasure::Stdev, &RiskConfig::default()).is_err());
        assert!(portfolio_stdev(&[0.0; 3], &book, &RiskConfig::default()).is_err());
    }

    #[test]
    fn sleeve_validation() {
        let mut s = sleeve("x", 5.0, 0.05, 0.01, false);
        s.limit = 1.2;
        assert!(s.validate().is_err());
        let mut s = sleeve("x", 5.0, 0.05, 0.01, true);
        s.d_ir = 3.0;
        assert!(s.validate().is_err());
    }

    proptest! {
        #[test]
        fn homogeneity_and_constraint_equivalence(
            u in proptest::collection::vec(0.0f64..0.5, 4),
            lambda in 0.0f64..5.0,
            limit in 0.001f64..0.2,
        ) {
            let book = mixed_book();
            let cfg = RiskConfig::default();
            let model = RiskModel::new(&book, &cfg).unwrap();
            let scaled: Vec<f64> = u.iter().map(|w| w * lambda).collect();
            let base = model.total_risk(&u).value;
            prop_assert!((model.total_risk(&scaled).value - lambda * base).abs() < 1e-12);
            for m in RiskMeasure::ALL {
                prop_assert!((model.measure(&scaled, m) - lambda * model.measure(&u, m)).abs() < 1e-12);
            }
            let all_ok = RiskMeasure::ALL.iter().all(|m| model.measure(&u, *m) <= limit / cfg.weight(*m));
            prop_assert_eq!(base <= limit, all_ok);
        }
    }
}
