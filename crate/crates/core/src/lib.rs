//! Fixed-income portfolio optimisation.
//!
//! Sleeves (broad asset classes treated as bullet bonds) are priced under
//! rate and credit scenarios, given rating-migration expected returns, and
//! allocated by linear programming. Convex limits such as the portfolio
//! standard deviation are enforced with cutting planes. Sweeping the total
//! risk limit traces the efficient frontier, which is summarised by the
//! two-parameter model `r = a (1 - exp(-R / b))`.

pub mod credit;
pub mod error;
pub mod frontier;
pub mod instruments;
pub mod io;
pub mod lp;
pub mod optimizer;
pub mod risk;
pub mod scenarios;

pub use error::{Error, Result};
