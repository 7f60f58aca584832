//! Rating curves, rating-migration Markov chain, and the expected total
//! return of a bond over a horizon.
//!
//! The total return over horizon `t` splits into three parts:
//!
//! - carry and rolldown: `c t + B0(t) P_i(T-t) - P_i(T)`
//! - migration: `B0(t) sum_j p_ij(t) (P_j(T-t) - P_i(T-t))`
//! - cheapness: `P_i(T) - P0`
//!
//! where `P_j` prices the bond on the curve of rating `j` and the default
//! state prices at recovery.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruments::{price_bullet, BulletBond};

const LABELS: [&str; 22] = [
    "AAA", "AA+", "AA", "AA-", "A+", "A", "A-", "BBB+", "BBB", "BBB-", "BB+", "BB", "BB-", "B+", "B", "B-",
    "CCC+", "CCC", "CCC-", "CC", "C", "D",
];

/// (linear score, WARF) anchors; notches interpolate log-linearly.
const WARF_ANCHORS: [(f64, f64); 8] = [
    (1.0, 1.0),
    (3.0, 20.0),
    (6.0, 120.0),
    (9.0, 360.0),
    (12.0, 1350.0),
    (15.0, 2720.0),
    (18.0, 6500.0),
    (22.0, 10000.0),
];

/// A rating on the notched scale AAA (best) to D (default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rating(u8);

impl Rating {
    pub const AAA: Rating = Rating(0);
    pub const D: Rating = Rating(21);

    pub fn all() -> impl Iterator<Item = Rating> {
        (0..LABELS.len() as u8).map(Rating)
    }

    pub fn label(self) -> &'static str {
        LABELS[self.0 as usize]
    }

    /// Linear score: AAA = 1, AA+ = 2, AA = 3, ... D = 22.
    pub fn linear_score(self) -> f64 {
        self.0 as f64 + 1.0
    }

    /// Weighted average rating factor.
    pub fn warf(self) -> f64 {
        let s = self.linear_score();
        let (lo, hi) = WARF_ANCHORS
            .windows(2)
            .map(|w| (w[0], w[1]))
            .find(|(_, b)| s <= b.0)
            .expect("score within anchor range");
        let f = (s - lo.0) / (hi.0 - lo.0);
        (lo.1.ln() + f * (hi.1.ln() - lo.1.ln())).exp()
    }

    pub fn is_default(self) -> bool {
        self == Rating::D
    }

    /// The whole-letter grade of a notched rating (BB+ -> BB, CCC- -> CCC).
    pub fn letter_grade(self) -> Rating {
        let base = self.label().trim_end_matches(['+', '-']);
        base.parse().expect("letter grade is on the scale")
    }
}

impl FromStr for Rating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('−', "-");
        let norm = match norm.as_str() {
            "GOV" | "TSY" => "AAA".to_owned(),
            "DEFAULT" => "D".to_owned(),
            _ => norm,
        };
        LABELS
            .iter()
            .position(|l| *l == norm)
            .map(|i| Rating(i as u8))
            .ok_or_else(|| Error::InvalidInput(format!("unknown rating {s:?}")))
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Rating {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Annual rating-migration probabilities. The last state is default and
/// absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    states: Vec<Rating>,
    probs: DMatrix<f64>,
}

const ROW_SUM_TOL: f64 = 1e-12;

impl TransitionMatrix {
    pub fn new(states: Vec<Rating>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = states.len();
        if n < 2 || rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!(
                "transition matrix must be square over {n} states"
            )));
        }
        if states.last() != Some(&Rating::D) {
            return Err(Error::InvalidInput("last transition state must be D".into()));
        }
        if states.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("transition states must be strictly ordered best to worst".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidInput(format!("row {} has entries outside [0, 1]", states[i])));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {} sums to {sum}, not 1",
                    states[i]
                )));
            }
        }
        let d = &rows[n - 1];
        if d[n - 1] != 1.0 || d[..n - 1].iter().any(|p| *p != 0.0) {
            return Err(Error::InvalidInput("default state must be absorbing".into()));
        }
        let probs = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(Self { states, probs })
    }

    /// Like [`TransitionMatrix::new`] but first rescales rows that sum to 1
    /// within `tol` (published matrices are rounded).
    pub fn normalized(states: Vec<Rating>, mut rows: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        for row in rows.iter_mut() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol || sum <= 0.0 {
                return Err(Error::InvalidInput(format!("transition row sums to {sum}")));
            }
            // rows already within the exact tolerance are left untouched
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        Self::new(states, rows)
    }

    /// Single-period default-only chain: stay with `1 - pd`, default with `pd`.
    pub fn default_only(rating: Rating, pd: f64) -> Result<Self> {
        Self::new(vec![rating, Rating::D], vec![vec![1.0 - pd, pd], vec![0.0, 1.0]])
    }

    pub fn states(&self) -> &[Rating] {
        &self.states
    }

    pub fn one_year(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// Row index for a rating; notches absent from the matrix fall back to
    /// their whole-letter grade.
    pub fn index_of(&self, rating: Rating) -> Result<usize> {
        let find = |r: Rating| self.states.iter().position(|s| *s == r);
        find(rating)
            .or_else(|| find(rating.letter_grade()))
            .ok_or_else(|| Error::InvalidInput(format!("rating {rating} not in transition matrix")))
    }

    pub fn default_probability(&self, rating: Rating, t: f64) -> Result<f64> {
        let i = self.index_of(rating)?;
        let p = self.transition_probabilities(t)?;
        Ok(p[(i, self.states.len() - 1)])
    }

    /// Transition probabilities over `t` years. Integer horizons use matrix
    /// powers; fractional horizons use the eigendecomposition when the
    /// matrix has distinct positive real eigenvalues and the result is a
    /// valid stochastic matrix, otherwise linear interpolation between the
    /// neighbouring integer powers.
    pub fn transition_probabilities(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!("horizon must be nonnegative, got {t}")));
        }
        let whole = t.floor();
        let frac = t - whole;
        if frac == 0.0 {
            return Ok(matrix_power(&self.probs, whole as u64));
        }
        if let Some(p) = self.eigen_power(t) {
            return Ok(p);
        }
        let lo = matrix_power(&self.probs, whole as u64);
        let hi = &lo * &self.probs;
        Ok(lo * (1.0 - frac) + hi * frac)
    }

    fn eigen_power(&self, t: f64) -> Option<DMatrix<f64>> {
        let n = self.states.len();
        let eig = self.probs.complex_eigenvalues();
        if eig.iter().any(|z| z.im.abs() > 1e-12 || z.re <= 1e-12) {
            return None;
        }
        let mut vals: Vec<f64> = eig.iter().map(|z| z.re).collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if vals.windows(2).any(|w| w[0] - w[1] < 1e-8) {
            return None;
        }
        let mut vecs = DMatrix::zeros(n, n);
        for (k, &lambda) in vals.iter().enumerate() {
            let shifted = &self.probs - DMatrix::identity(n, n) * lambda;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t?;
            let (idx, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
            vecs.set_column(k, &v_t.row(idx).transpose());
        }
        let inv = vecs.clone().try_inverse()?;
        let diag = DMatrix::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|l| l.powf(t))));
        let mut p = &vecs * diag * inv;
        for i in 0..n {
            for j in 0..n {
                let v = p[(i, j)];
                if v < -1e-10 {
                    return None;
                }
                if v < 0.0 {
                    p[(i, j)] = 0.0;
                }
            }
            let sum: f64 = p.row(i).sum();
            if (sum - 1.0).abs() > 1e-8 {
                return None;
            }
            for j in 0..n {
                p[(i, j)] /= sum;
            }
        }
        Some(p)
    }
}

fn matrix_power(m: &DMatrix<f64>, mut k: u64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

/// Convenience wrapper matching [`TransitionMatrix::transition_probabilities`].
pub fn transition_probabilities(m: &TransitionMatrix, t: f64) -> Result<DMatrix<f64>> {
    m.transition_probabilities(t)
}

/// Piecewise-linear function of maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    points: Vec<(f64, f64)>,
}

const RANGE_TOL: f64 = 1e-9;

impl Curve {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("curve needs at least one point".into()));
        }
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidInput("curve points must be finite".into()));
        }
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate curve maturity".into()));
        }
        Ok(Self { points })
    }

    pub fn flat(value: f64, from: f64, to: f64) -> Self {
        Self {
            points: vec![(from, value), (to, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn range(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// Linear interpolation; maturities outside the range are an error.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if x < lo - RANGE_TOL || x > hi + RANGE_TOL {
            return Err(Error::InvalidInput(format!(
                "maturity {x} outside curve range [{lo}, {hi}]"
            )));
        }
        Ok(self.eval_flat(x))
    }

    /// Linear interpolation with flat extrapolation.
    pub fn eval_flat(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        if x >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let k = pts.partition_point(|p| p.0 <= x);
        let (x0, y0) = pts[k - 1];
        let (x1, y1) = pts[k];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            points: self.points.iter().map(|(x, y)| (*x, f(*y))).collect(),
        }
    }
}

/// Recovery paid at default, fraction of par.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryAssumption {
    pub recovery_rate: f64,
}

impl RecoveryAssumption {
    pub fn new(recovery_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&recovery_rate) {
            return Err(Error::InvalidInput(format!("recovery {recovery_rate} outside [0, 1)")));
        }
        Ok(Self { recovery_rate })
    }
}

impl Default for RecoveryAssumption {
    fn default() -> Self {
        Self { recovery_rate: 0.3 }
    }
}

/// Spread curves by rating plus the riskfree curve (annually compounded
/// zero yields).
#[derive(Debug, Clone, PartialEq)]
pub struct RatingCurveSet {
    riskfree: Curve,
    spreads: Vec<(Rating, Curve)>,
    recovery: RecoveryAssumption,
}

impl RatingCurveSet {
    pub fn new(riskfree: Curve, mut spreads: Vec<(Rating, Curve)>, recovery: RecoveryAssumption) -> Result<Self> {
        spreads.sort_by_key(|(r, _)| *r);
        if spreads.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate rating curve".into()));
        }
        if spreads.iter().any(|(r, _)| r.is_default()) {
            return Err(Error::InvalidInput("default state has no spread curve".into()));
        }
        for (r, c) in &spreads {
            if c.points().iter().any(|(_, s)| *s < 0.0) {
                return Err(Error::InvalidInput(format!("negative spread on {r} curve")));
            }
        }
        for w in spreads.windows(2) {
            let ((better, cb), (worse, cw)) = (&w[0], &w[1]);
            let (lo, hi) = (cb.range().0.max(cw.range().0), cb.range().1.min(cw.range().1));
            let knots = cb.points().iter().chain(cw.points()).map(|p| p.0).filter(|x| *x >= lo && *x <= hi);
            for x in knots {
                if cw.eval_flat(x) <= cb.eval_flat(x) {
                    return Err(Error::InvalidInput(format!(
                        "{worse} curve is not wider than {better} at maturity {x}"
                    )));
                }
            }
        }
        Ok(Self {
            riskfree,
            spreads,
            recovery,
        })
    }

    pub fn recovery(&self) -> f64 {
        self.recovery.recovery_rate
    }

    pub fn ratings(&self) -> impl Iterator<Item = Rating> + '_ {
        self.spreads.iter().map(|(r, _)| *r)
    }

    pub fn spread_curves(&self) -> &[(Rating, Curve)] {
        &self.spreads
    }

    pub fn riskfree(&self) -> &Curve {
        &self.riskfree
    }

    pub fn riskfree_yield(&self, maturity: f64) -> f64 {
        self.riskfree.eval_flat(maturity)
    }

    /// Riskfree discount factor `B0(t) = (1 + r(t))^-t`.
    pub fn discount(&self, t: f64) -> f64 {
        (1.0 + self.riskfree_yield(t)).powf(-t)
    }

    fn curve(&self, rating: Rating) -> Result<&Curve> {
        let find = |r: Rating| self.spreads.iter().find(|(s, _)| *s == r).map(|(_, c)| c);
        find(rating)
            .or_else(|| find(rating.letter_grade()))
            .ok_or_else(|| Error::InvalidInput(format!("no spread curve for rating {rating}")))
    }

    pub fn spread(&self, rating: Rating, maturity: f64) -> Result<f64> {
        self.curve(rating)?.eval(maturity)
    }

    pub fn yield_for(&self, rating: Rating, maturity: f64) -> Result<f64> {
        Ok(self.riskfree_yield(maturity) + self.spread(rating, maturity)?)
    }

    /// Every spread curve moved by `delta` (rating gaps preserved).
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            riskfree: self.riskfree.clone(),
            spreads: self.spreads.iter().map(|(r, c)| (*r, c.map(|s| s + delta))).collect(),
            recovery: self.recovery,
        }
    }

    /// Every spread curve multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            riskfree: self.riskfree.clone(),
            spreads: self.spreads.iter().map(|(r, c)| (*r, c.map(|s| s * factor))).collect(),
            recovery: self.recovery,
        }
    }

    pub fn with_riskfree(&self, riskfree: Curve) -> Self {
        Self {
            riskfree,
            ..self.clone()
        }
    }
}

/// Price of a bond on the curve of `rating`; the default state prices at
/// recovery.
pub fn price_on_rating_curve(rating: Rating, t: f64, c: f64, m: u32, curves: &RatingCurveSet) -> Result<f64> {
    if rating.is_default() {
        return Ok(curves.recovery());
    }
    price_bullet(t, c, m, curves.yield_for(rating, t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedReturn {
    pub carry_rolldown: f64,
    pub migration: f64,
    pub cheapness: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReturnOptions {
    /// Accrue the coupon only until default: replaces `c t` by
    /// `(1 - e^{-lambda t}) c / lambda` with `lambda = -ln(1 - PD(1y))`.
    pub default_adjusted_accrual: bool,
}

pub fn expected_total_return(
    bond: &BulletBond,
    rating: Rating,
    p0: f64,
    curves: &RatingCurveSet,
    matrix: &TransitionMatrix,
    horizon: f64,
    options: ReturnOptions,
) -> Result<ExpectedReturn> {
    let (big_t, c, m) = (bond.maturity_years, bond.coupon_rate, bond.payments_per_year);
    if !(horizon > 0.0 && horizon < big_t) {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} must lie strictly between 0 and maturity {big_t}"
        )));
    }
    if rating.is_default() {
        return Err(Error::InvalidInput("expected return of a defaulted bond".into()));
    }
    let i = matrix.index_of(rating)?;
    let probs = matrix.transition_probabilities(horizon)?;
    let rest = big_t - horizon;
    let b0 = curves.discount(horizon);

    let p_i_now = price_on_rating_curve(rating, big_t, c, m, curves)?;
    let p_i_rest = price_on_rating_curve(rating, rest, c, m, curves)?;

    let carry = if options.default_adjusted_accrual {
        let pd1 = matrix.transition_probabilities(1.0)?[(i, matrix.states().len() - 1)];
        let lambda = -(1.0 - pd1).ln();
        if lambda > 0.0 {
            -(-lambda * horizon).exp_m1() * c / lambda
        } else {
            c * horizon
        }
    } else {
        c * horizon
    };

    let mut expected_gap = 0.0;
    for (j, state) in matrix.states().iter().enumerate() {
        let p = probs[(i, j)];
        if p == 0.0 {
            continue;
        }
        let p_j = price_on_rating_curve(*state, rest, c, m, curves)?;
        expected_gap += p * (p_j - p_i_rest);
    }

    let carry_rolldown = carry + b0 * p_i_rest - p_i_now;
    let migration = b0 * expected_gap;
    let cheapness = p_i_now - p0;
    Ok(ExpectedReturn {
        carry_rolldown,
        migration,
        cheapness,
        total: carry_rolldown + migration + cheapness,
    })
}

/// Coupon convention for [`hurdle_yield`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HurdleCoupon {
    Fixed(f64),
    /// The bond trades at par: coupon equals the trial yield.
    Par,
}

/// Lowest yield at which the expected total return is nonnegative.
///
/// The trial yield moves the bond's own spread and, in parallel, every
/// rating curve (so rating gaps are preserved); the bond is priced on its
/// shifted curve.
#[allow(clippy::too_many_arguments)]
pub fn hurdle_yield(
    rating: Rating,
    maturity: f64,
    coupon: HurdleCoupon,
    m: u32,
    curves: &RatingCurveSet,
    matrix: &TransitionMatrix,
    horizon: f64,
    options: ReturnOptions,
) -> Result<f64> {
    let rf = curves.riskfree_yield(maturity);
    let base_spread = curves.spread(rating, maturity)?;
    let tr = |y: f64| -> Result<f64> {
        let shifted = curves.shifted(y - rf - base_spread);
        let c = match coupon {
            HurdleCoupon::Fixed(c) => c,
            HurdleCoupon::Par => y,
        };
        let bond = BulletBond::new(maturity, c, m)?;
        let p0 = price_on_rating_curve(rating, maturity, c, m, &shifted)?;
        Ok(expected_total_return(&bond, rating, p0, &shifted, matrix, horizon, options)?.total)
    };
    let (mut lo, mut hi) = (rf - 0.05, rf + 1.0);
    let (f_lo, f_hi) = (tr(lo)?, tr(hi)?);
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::NoRoot { target: 0.0, lo, hi });
    }
    // bisection to 0.1bp / 100
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if tr(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn r(s: &str) -> Rating {
        s.parse().unwrap()
    }

    fn flat_curves(rf: f64, spreads: &[(&str, f64)], recovery: f64) -> RatingCurveSet {
        RatingCurveSet::new(
            Curve::flat(rf, 0.0, 30.0),
            spreads.iter().map(|(l, s)| (r(l), Curve::flat(*s, 0.0, 30.0))).collect(),
            RecoveryAssumption::new(recovery).unwrap(),
        )
        .unwrap()
    }

    fn toy_matrix() -> TransitionMatrix {
        TransitionMatrix::new(
            vec![r("A"), r("B"), Rating::D],
            vec![vec![0.90, 0.08, 0.02], vec![0.05, 0.85, 0.10], vec![0.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn scale_scores() {
        assert_eq!(r("AAA").linear_score(), 1.0);
        assert_eq!(r("AA+").linear_score(), 2.0);
        assert_eq!(r("AA").linear_score(), 3.0);
        assert_eq!(r("BB+").linear_score(), 11.0);
        assert_eq!(r("B-").linear_score(), 16.0);
        assert_eq!(Rating::D.linear_score(), 22.0);
        for (l, w) in [("AA", 20.0), ("A", 120.0), ("BBB", 360.0), ("BB", 1350.0), ("B", 2720.0), ("CCC", 6500.0)] {
            assert_relative_eq!(r(l).warf(), w, max_relative = 1e-12);
        }
        let warfs: Vec<f64> = Rating::all().map(|x| x.warf()).collect();
        assert!(warfs.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(r("bb+").letter_grade(), r("BB"));
        assert_eq!(r("CCC-").letter_grade(), r("CCC"));
        assert!("XYZ".parse::<Rating>().is_err());
    }

    #[test]
    fn matrix_validation() {
        let bad_sum = TransitionMatrix::new(vec![r("A"), Rating::D], vec![vec![0.9, 0.05], vec![0.0, 1.0]]);
        assert!(bad_sum.is_err());
        let not_absorbing = TransitionMatrix::new(vec![r("A"), Rating::D], vec![vec![0.9, 0.1], vec![0.1, 0.9]]);
        assert!(not_absorbing.is_err());
        let no_default = TransitionMatrix::new(vec![r("A"), r("B")], vec![vec![0.9, 0.1], vec![0.0, 1.0]]);
        assert!(no_default.is_err());
        let rounded = TransitionMatrix::normalized(
            vec![r("A"), Rating::D],
            vec![vec![0.9001, 0.1], vec![0.0, 1.0]],
            1e-3,
        );
        assert!(rounded.is_ok());
    }

    #[test]
    fn powers() {
        let m = TransitionMatrix::new(vec![r("B"), Rating::D], vec![vec![0.9, 0.1], vec![0.0, 1.0]]).unwrap();
        let p0 = m.transition_probabilities(0.0).unwrap();
        assert_eq!(p0, DMatrix::identity(2, 2));
        // oracle: direct multiplication, 1 - 0.9^2
        let p2 = m.transition_probabilities(2.0).unwrap();
        assert_relative_eq!(p2[(0, 1)], 0.19, max_relative = 1e-14);
        // fractional: eigen route gives 1 - 0.9^t
        let ph = m.transition_probabilities(0.5).unwrap();
        assert_relative_eq!(ph[(0, 1)], 1.0 - 0.9f64.sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn fractional_powers_compose() {
        let m = toy_matrix();
        let half = m.transition_probabilities(0.5).unwrap();
        let one = m.transition_probabilities(1.0).unwrap();
        assert!((&half * &half - one).abs().max() < 1e-10);
    }

    #[test]
    fn fractional_fallback_interpolates() {
        // negative eigenvalue: no real fractional power via eigen route
        let m = TransitionMatrix::new(
            vec![r("A"), r("B"), Rating::D],
            vec![vec![0.1, 0.89, 0.01], vec![0.89, 0.1, 0.01], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        let p = m.transition_probabilities(1.5).unwrap();
        let p1 = m.transition_probabilities(1.0).unwrap();
        let p2 = m.transition_probabilities(2.0).unwrap();
        assert!((p - (p1 + p2) * 0.5).abs().max() < 1e-14);
    }

    #[test]
    fn notch_maps_to_letter_row() {
        let m = toy_matrix();
        assert_eq!(m.index_of(r("B+")).unwrap(), 1);
        assert_eq!(m.index_of(r("A-")).unwrap(), 0);
        assert!(m.index_of(r("CCC")).is_err());
    }

    #[test]
    fn curve_set_rejects_crossing_curves() {
        let res = RatingCurveSet::new(
            Curve::flat(0.02, 0.0, 30.0),
            vec![
                (r("A"), Curve::flat(0.01, 0.0, 30.0)),
                (r("BBB"), Curve::new(vec![(0.0, 0.02), (30.0, 0.005)]).unwrap()),
            ],
            RecoveryAssumption::default(),
        );
        assert!(res.is_err());
        assert!(RecoveryAssumption::new(1.0).is_err());
    }

    #[test]
    fn curve_range_enforced() {
        let c = flat_curves(0.02, &[("A", 0.01)], 0.3);
        assert!(c.spread(r("A"), 31.0).is_err());
        assert!(c.spread(r("BB"), 5.0).is_err());
    }

    #[test]
    fn rating_curve_prices() {
        let zero = flat_curves(0.0, &[("A", 0.0)], 0.3);
        assert_relative_eq!(
            price_on_rating_curve(r("A"), 5.0, 0.04, 2, &zero).unwrap(),
            1.2,
            max_relative = 1e-14
        );
        assert_eq!(price_on_rating_curve(Rating::D, 5.0, 0.04, 2, &zero).unwrap(), 0.3);
        let bbb = RatingCurveSet::new(
            Curve::flat(0.02, 0.0, 30.0),
            vec![(r("BBB"), Curve::new(vec![(0.0, 0.01), (5.0, 0.015), (10.0, 0.02)]).unwrap())],
            RecoveryAssumption::default(),
        )
        .unwrap();
        assert_relative_eq!(
            price_on_rating_curve(r("BBB"), 5.0, 0.035, 2, &bbb).unwrap(),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn identity_transitions_leave_only_carry() {
        let curves = flat_curves(0.0, &[("A", 0.0)], 0.3);
        let m = TransitionMatrix::new(vec![r("A"), Rating::D], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let bond = BulletBond::new(5.0, 0.0, 2).unwrap();
        let p0 = price_on_rating_curve(r("A"), 5.0, 0.0, 2, &curves).unwrap();
        assert_eq!(p0, 1.0);
        let er = expected_total_return(&bond, r("A"), p0, &curves, &m, 1.0, ReturnOptions::default()).unwrap();
        assert_eq!(er.migration, 0.0);
        assert_eq!(er.total, 0.0);
        let bond = BulletBond::new(5.0, 0.04, 2).unwrap();
        let p0 = price_on_rating_curve(r("A"), 5.0, 0.04, 2, &curves).unwrap();
        let er = expected_total_return(&bond, r("A"), p0, &curves, &m, 1.0, ReturnOptions::default()).unwrap();
        // zero curve: rolldown of 1 + cT' minus 1 + cT is exactly -c t
        assert!((er.total - 0.0).abs() < 1e-15);
        assert!((er.carry_rolldown - 0.0).abs() < 1e-15);
    }

    #[test]
    fn toy_chain_matches_state_enumeration() {
        let curves = flat_curves(0.02, &[("A", 0.01), ("B", 0.04)], 0.4);
        let m = toy_matrix();
        let bond = BulletBond::new(6.0, 0.05, 2).unwrap();
        let p0 = 0.97;
        let er = expected_total_return(&bond, r("B"), p0, &curves, &m, 1.0, ReturnOptions::default()).unwrap();
        // enumerate terminal states directly
        let b0 = 1.0 / 1.02;
        let states = [(r("A"), 0.05), (r("B"), 0.85), (Rating::D, 0.10)];
        let expected_value: f64 = states
            .iter()
            .map(|(s, p)| {
                let price = if s.is_default() {
                    0.4
                } else {
                    crate::instruments::price_bullet(5.0, 0.05, 2, 0.02 + curves.spread(*s, 5.0).unwrap()).unwrap()
                };
                p * price
            })
            .sum();
        let direct = 0.05 + b0 * expected_value - p0;
        assert!((er.total - direct).abs() < 1e-12);
        assert!(er.migration < 0.0);
    }

    #[test]
    fn default_adjusted_accrual_reduces_carry() {
        let curves = flat_curves(0.02, &[("A", 0.01), ("B", 0.04)], 0.4);
        let m = toy_matrix();
        let bond = BulletBond::new(6.0, 0.05, 2).unwrap();
        let plain = expected_total_return(&bond, r("B"), 1.0, &curves, &m, 1.0, ReturnOptions::default()).unwrap();
        let adj = expected_total_return(
            &bond,
            r("B"),
            1.0,
            &curves,
            &m,
            1.0,
            ReturnOptions {
                default_adjusted_accrual: true,
            },
        )
        .unwrap();
        assert!(adj.carry_rolldown < plain.carry_rolldown);
        let lambda = -(0.9f64).ln();
        let expected = plain.carry_rolldown - 0.05 + (1.0 - (-lambda).exp()) * 0.05 / lambda;
        assert!((adj.carry_rolldown - expected).abs() < 1e-14);
    }

    #[test]
    fn return_errors() {
        let curves = flat_curves(0.02, &[("A", 0.01), ("B", 0.04)], 0.4);
        let m = toy_matrix();
        let bond = BulletBond::new(1.0, 0.05, 2).unwrap();
        assert!(expected_total_return(&bond, r("B"), 1.0, &curves, &m, 1.0, ReturnOptions::default()).is_err());
        let bond = BulletBond::new(5.0, 0.05, 2).unwrap();
        assert!(expected_total_return(&bond, Rating::D, 1.0, &curves, &m, 1.0, ReturnOptions::default()).is_err());
        assert!(expected_total_return(&bond, r("CCC"), 1.0, &curves, &m, 1.0, ReturnOptions::default()).is_err());
    }

    #[test]
    fn hurdle_with_no_credit_losses() {
        let curves = flat_curves(0.02, &[("BBB", 0.01)], 0.3);
        let m = TransitionMatrix::new(vec![r("BBB"), Rating::D], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let h = hurdle_yield(r("BBB"), 5.0, HurdleCoupon::Par, 2, &curves, &m, 1.0, ReturnOptions::default()).unwrap();
        // at par: y + B0 - 1 = 0, so y = r / (1 + r)
        assert!((h - 0.02 / 1.02).abs() < 2e-7, "{h}");
    }

    #[test]
    fn hurdle_matches_grid_scan() {
        let curves = flat_curves(0.02, &[("A", 0.01), ("B", 0.04)], 0.4);
        let m = toy_matrix();
        let opts = ReturnOptions::default();
        let h = hurdle_yield(r("B"), 6.0, HurdleCoupon::Fixed(0.06), 2, &curves, &m, 1.0, opts).unwrap();
        // oracle: scan yields at 0.1bp and take the first with TR >= 0
        let base = curves.spread(r("B"), 6.0).unwrap();
        let tr_at = |y: f64| {
            let sh = curves.shifted(y - 0.02 - base);
            let bond = BulletBond::new(6.0, 0.06, 2).unwrap();
            let p0 = price_on_rating_curve(r("B"), 6.0, 0.06, 2, &sh).unwrap();
            expected_total_return(&bond, r("B"), p0, &sh, &m, 1.0, opts).unwrap().total
        };
        let mut y = 0.0;
        while tr_at(y) < 0.0 {
            y += 1e-5;
        }
        assert!((h - y).abs() <= 1e-5, "{h} vs scan {y}");
    }

    #[test]
    fn b_rated_breakeven_spread() {
        let curves = flat_curves(0.02, &[("B", 0.04)], 0.3);
        let m = TransitionMatrix::default_only(r("B"), 0.045).unwrap();
        let h = hurdle_yield(r("B"), 5.0, HurdleCoupon::Par, 2, &curves, &m, 1.0, ReturnOptions::default()).unwrap();
        let spread_bp = (h - 0.02) * 1e4;
        assert!((280.0..=350.0).contains(&spread_bp), "{spread_bp}");
    }

    proptest! {
        #[test]
        fn decomposition_telescopes(
            c in 0.0f64..0.1, p0 in 0.8f64..1.2, rf in 0.0f64..0.05, sa in 0.0f64..0.02, gap in 0.001f64..0.05,
            pa in 0.5f64..0.95, t in 2.0f64..20.0,
        ) {
            let curves = flat_curves(rf, &[("A", sa), ("B", sa + gap)], 0.35);
            let m = TransitionMatrix::new(
                vec![r("A"), r("B"), Rating::D],
                vec![vec![pa, (1.0 - pa) * 0.8, (1.0 - pa) * 0.2], vec![0.05, 0.9, 0.05], vec![0.0, 0.0, 1.0]],
            );
            let Ok(m) = m else { return Ok(()); };
            let bond = BulletBond::new(t, c, 2).unwrap();
            let er = expected_total_return(&bond, r("A"), p0, &curves, &m, 1.0, ReturnOptions::default()).unwrap();
            let probs = m.transition_probabilities(1.0).unwrap();
            let direct: f64 = m.states().iter().enumerate().map(|(j, s)| {
                probs[(0, j)] * price_on_rating_curve(*s, t - 1.0, c, 2, &curves).unwrap()
            }).sum::<f64>() * curves.discount(1.0) + c - p0;
            prop_assert!((er.total - direct).abs() < 1e-12);
        }

        #[test]
        fn wider_downgrade_gaps_lower_return(gap in 0.001f64..0.05, extra in 0.0f64..0.03) {
            let m = toy_matrix();
            let bond = BulletBond::new(7.0, 0.05, 2).unwrap();
            let tight = flat_curves(0.02, &[("A", 0.01), ("B", 0.01 + gap)], 0.4);
            let wide = flat_curves(0.02, &[("A", 0.01), ("B", 0.01 + gap + extra)], 0.4);
            let opts = ReturnOptions::default();
            let a = expected_total_return(&bond, r("A"), 1.0, &tight, &m, 1.0, opts).unwrap().total;
            let b = expected_total_return(&bond, r("A"), 1.0, &wide, &m, 1.0, opts).unwrap().total;
            prop_assert!(b <= a + 1e-15);
            let pa = price_on_rating_curve(r("A"), 7.0, 0.05, 2, &wide).unwrap();
            let pb = price_on_rating_curve(r("B"), 7.0, 0.05, 2, &wide).unwrap();
            prop_assert!(pb < pa);
        }

        #[test]
        fn powers_stay_stochastic(t in 0.0f64..10.0) {
            let p = toy_matrix().transition_probabilities(t).unwrap();
            for i in 0..3 {
                prop_assert!((p.row(i).sum() - 1.0).abs() < 1e-10);
                prop_assert!(p.row(i).iter().all(|x| *x >= 0.0));
            }
            prop_assert_eq!(p[(2, 2)], 1.0);
        }
    }
}
