//! Bullet-bond analytics: price/yield conversion, duration, convexity and
//! credit stress loss.
//!
//! Prices are fractions of par at a coupon date (no accrued interest).
//! Yields are per-annum fractions compounded `m` times a year.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end of the yield bracket searched by [`yield_from_price`].
pub const YIELD_BRACKET_LO: f64 = -0.10;
/// Upper end of the yield bracket searched by [`yield_from_price`].
pub const YIELD_BRACKET_HI: f64 = 10.0;

const PRICE_TOL: f64 = 1e-12;

/// A fixed-coupon bond repaying par at maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulletBond {
    pub maturity_years: f64,
    pub coupon_rate: f64,
    pub payments_per_year: u32,
}

/// Price and yield pair for a [`BulletBond`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceQuote {
    pub clean_price: f64,
    pub yield_value: f64,
}

impl BulletBond {
    pub fn new(maturity_years: f64, coupon_rate: f64, payments_per_year: u32) -> Result<Self> {
        let bond = Self {
            maturity_years,
            coupon_rate,
            payments_per_year,
        };
        bond.periods()?;
        Ok(bond)
    }

    /// Number of whole coupon periods, `m T` rounded to the nearest integer
    /// (at least one).
    pub fn periods(&self) -> Result<u32> {
        periods(self.maturity_years, self.payments_per_year)
    }

    pub fn price(&self, y: f64) -> Result<f64> {
        price_bullet(self.maturity_years, self.coupon_rate, self.payments_per_year, y)
    }

    pub fn quote_at_yield(&self, y: f64) -> Result<PriceQuote> {
        Ok(PriceQuote {
            clean_price: self.price(y)?,
            yield_value: y,
        })
    }

    pub fn quote_at_price(&self, price: f64) -> Result<PriceQuote> {
        let y = yield_from_price(self.maturity_years, self.coupon_rate, self.payments_per_year, price)?;
        Ok(PriceQuote {
            clean_price: price,
            yield_value: y,
        })
    }

    pub fn duration_convexity(&self, y: f64) -> Result<(f64, f64)> {
        duration_convexity(self.maturity_years, self.coupon_rate, self.payments_per_year, y)
    }
}

fn periods(t: f64, m: u32) -> Result<u32> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("maturity must be positive, got {t}")));
    }
    if m == 0 {
        return Err(Error::Domain("payments per year must be at least 1".into()));
    }
    let n = (t * m as f64).round();
    if n > u32::MAX as f64 {
        return Err(Error::Domain(format!("maturity {t} has too many coupon periods")));
    }
    Ok((n as u32).max(1))
}

/// Per-period discount factor `1 / (1 + y/m)`, rejecting `1 + y/m <= 0`.
fn period_growth(m: u32, y: f64) -> Result<f64> {
    let g = 1.0 + y / m as f64;
    if !(g > 0.0) || !y.is_finite() {
        return Err(Error::Domain(format!(
            "yield {y} gives non-positive growth factor 1 + y/m for m = {m}"
        )));
    }
    Ok(g)
}

/// Price of a bullet bond as a fraction of par:
/// `(1+y/m)^(-mT) + c (1 - (1+y/m)^(-mT)) / y`, with the limit `1 + cT`
/// at `y = 0`.
pub fn price_bullet(t: f64, c: f64, m: u32, y: f64) -> Result<f64> {
    let n = periods(t, m)?;
    period_growth(m, y)?;
    let mf = m as f64;
    let log_v = -(y / mf).ln_1p() * n as f64;
    let discount = log_v.exp();
    if y == 0.0 {
        return Ok(1.0 + c * n as f64 / mf);
    }
    // 1 - d computed without cancellation near y = 0
    let one_minus_d = -log_v.exp_m1();
    Ok(discount + c * one_minus_d / y)
}

/// Inverts [`price_bullet`] for the yield.
///
/// Bisection narrows the bracket `[YIELD_BRACKET_LO, YIELD_BRACKET_HI]`,
/// then secant steps (safeguarded by the bracket) polish the root.
pub fn yield_from_price(t: f64, c: f64, m: u32, price: f64) -> Result<f64> {
    if !(price > 0.0) || !price.is_finite() {
        return Err(Error::Domain(format!("price must be positive, got {price}")));
    }
    let lo_bound = YIELD_BRACKET_LO.max(-(m as f64) * (1.0 - 1e-9));
    let f = |y: f64| price_bullet(t, c, m, y).map(|p| p - price);

    let mut lo = lo_bound;
    let mut hi = YIELD_BRACKET_HI;
    let mut f_lo = f(lo)?;
    let mut f_hi = f(hi)?;
    // price is decreasing in y: f(lo) >= 0 >= f(hi) when a root exists
    if f_lo.abs() <= PRICE_TOL {
        return Ok(lo);
    }
    if f_hi.abs() <= PRICE_TOL {
        return Ok(hi);
    }
    if f_lo < 0.0 || f_hi > 0.0 {
        return Err(Error::NoRoot {
            target: price,
            lo,
            hi,
        });
    }

    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() <= PRICE_TOL {
            return Ok(mid);
        }
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }

    let (mut y0, mut f0) = (lo, f_lo);
    let (mut y1, mut f1) = (hi, f_hi);
    for _ in 0..200 {
        let mut next = y1 - f1 * (y1 - y0) / (f1 - f0);
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let f_next = f(next)?;
        if f_next.abs() <= PRICE_TOL || hi - lo < 1e-15 {
            return Ok(next);
        }
        if f_next > 0.0 {
            lo = next;
        } else {
            hi = next;
        }
        y0 = y1;
        f0 = f1;
        y1 = next;
        f1 = f_next;
    }
    Ok(y1)
}

/// Modified duration `-(1/P) dP/dy` and convexity `(1/P) d²P/dy²`,
/// computed analytically from the discrete cashflows.
pub fn duration_convexity(t: f64, c: f64, m: u32, y: f64) -> Result<(f64, f64)> {
    let n = periods(t, m)?;
    let g = period_growth(m, y)?;
    let mf = m as f64;
    let v = 1.0 / g;
    let coupon = c / mf;

    let (mut p, mut d1, mut d2) = (0.0, 0.0, 0.0);
    let mut vk = 1.0;
    for k in 1..=n {
        vk *= v;
        let cf = if k == n { coupon + 1.0 } else { coupon };
        let kf = k as f64;
        p += cf * vk;
        d1 += cf * kf * vk;
        d2 += cf * kf * (kf + 1.0) * vk;
    }
    if !(p > 0.0) {
        return Err(Error::Domain(format!("non-positive price {p} at yield {y}")));
    }
    let duration = d1 * v / (mf * p);
    let convexity = d2 * v * v / (mf * mf * p);
    Ok((duration, convexity))
}

/// Credit stress loss from moving a par bond's yield from `y0` to the
/// stress level `y_star`: `(1 - y0/y*) (1 - (1+y*/m)^(-mT))`.
///
/// Negative when `y0 > y_star` (the stress level is below today's yield).
pub fn stress_loss(t: f64, y0: f64, m: u32, y_star: f64) -> Result<f64> {
    if !(y_star > 0.0) {
        return Err(Error::Domain(format!("stress yield must be positive, got {y_star}")));
    }
    let n = periods(t, m)?;
    period_growth(m, y_star)?;
    let one_minus_d = -(-(y_star / m as f64).ln_1p() * n as f64).exp_m1();
    Ok((1.0 - y0 / y_star) * one_minus_d)
}
