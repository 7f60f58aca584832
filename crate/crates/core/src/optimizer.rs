//! Portfolio programs on top of the simplex engine: the constraint library,
//! expected-return maximisation, index tracking (with a view, and minimax),
//! and the cutting-plane loop for convex risk limits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::credit::Rating;
use crate::error::{Error, Result};
use crate::lp::{Constraint, LinearProgram, LpOptions, LpSolution, LpStatus};
use crate::risk::{dot, RiskModel, Sector, Sleeve};
use crate::scenarios::ScenarioMatrix;

/// A user-supplied linear row `sum coeff[name] u[name] <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRow {
    pub label: String,
    pub coeffs: BTreeMap<String, f64>,
    pub rhs: f64,
}

/// Constraint caps; `None` switches a row off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintCaps {
    pub high_yield: Option<f64>,
    pub emerging_markets: Option<f64>,
    pub structured: Option<f64>,
    pub financial: Option<f64>,
    /// Worst acceptable cash-inclusive average rating.
    pub average_rating: Option<String>,
    /// Ceiling on the invested weighted-average rating factor.
    pub warf: Option<f64>,
    pub budget: f64,
    pub extra: Vec<UserRow>,
}

impl Default for ConstraintCaps {
    fn default() -> Self {
        Self {
            high_yield: Some(0.60),
            emerging_markets: Some(0.15),
            structured: Some(0.10),
            financial: Some(0.20),
            average_rating: Some("BB".into()),
            warf: None,
            budget: 1.0,
            extra: Vec::new(),
        }
    }
}

impl ConstraintCaps {
    /// Only the budget row.
    pub fn none() -> Self {
        Self {
            high_yield: None,
            emerging_markets: None,
            structured: None,
            financial: None,
            average_rating: None,
            warf: None,
            budget: 1.0,
            extra: Vec::new(),
        }
    }

    pub fn sector_cap(&self, sector: Sector) -> Option<f64> {
        match sector {
            Sector::HighYield => self.high_yield,
            Sector::EmergingMarkets => self.emerging_markets,
            Sector::Structured => self.structured,
            Sector::Financial => self.financial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let caps = [self.high_yield, self.emerging_markets, self.structured, self.financial];
        if caps.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("sector caps must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.budget) {
            return Err(Error::Config("budget must lie in [0, 1]".into()));
        }
        if let Some(w) = self.warf {
            if !(w > 0.0) {
                return Err(Error::Config("warf cap must be positive".into()));
            }
        }
        if let Some(r) = &self.average_rating {
            r.parse::<Rating>()?;
        }
        Ok(())
    }
}

/// Linear rows and allocation limits for one universe.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub limits: Vec<f64>,
    pub rows: Vec<Constraint>,
}

impl ConstraintSet {
    /// Allocation limits only.
    pub fn limits_only(sleeves: &[Sleeve]) -> Self {
        Self {
            limits: sleeves.iter().map(|s| s.limit).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, coeffs: Vec<f64>, rhs: f64, label: impl Into<String>) {
        self.rows.push(Constraint {
            coeffs,
            rhs,
            label: label.into(),
        });
    }

    /// Scenario floors as rows `-sum u dX_i <= eps_i - dY_i`.
    pub fn with_scenarios(mut self, scenarios: &ScenarioMatrix, index_returns: Option<&[f64]>) -> Self {
        for i in 0..scenarios.len() {
            let dy = index_returns.map_or(0.0, |y| y[i]);
            let coeffs = scenarios.returns[i].iter().map(|x| -x).collect();
            self.push(coeffs, scenarios.floors[i] - dy, format!("scenario:{}", scenarios.labels[i]));
        }
        self
    }

    /// Rows violated by the all-cash portfolio.
    pub fn violated_at_cash(&self) -> Vec<String> {
        let mut out: Vec<String> = self.rows.iter().filter(|r| r.rhs < 0.0).map(|r| r.label.clone()).collect();
        out.extend(self.limits.iter().enumerate().filter(|(_, l)| **l < 0.0).map(|(j, _)| format!("limit:{j}")));
        out
    }
}

pub fn build_constraints(sleeves: &[Sleeve], caps: &ConstraintCaps) -> Result<ConstraintSet> {
    caps.validate()?;
    let n = sleeves.len();
    let mut set = ConstraintSet::limits_only(sleeves);
    set.push(vec![1.0; n], caps.budget, "budget");

    for sector in [Sector::HighYield, Sector::EmergingMarkets, Sector::Structured, Sector::Financial] {
        let Some(cap) = caps.sector_cap(sector) else {
            continue;
        };
        if !sleeves.iter().any(|s| s.has_sector(sector)) {
            continue;
        }
        let coeffs = sleeves.iter().map(|s| if s.has_sector(sector) { 1.0 } else { 0.0 }).collect();
        set.push(coeffs, cap, format!("sector:{}", sector.tag()));
    }

    let ratings: Vec<Rating> = sleeves.iter().map(|s| s.rating.parse()).collect::<Result<_>>()?;
    if let Some(label) = &caps.average_rating {
        // cash counts at the best score, so sum u (score - 1) <= cap - 1
        let cap: Rating = label.parse()?;
        let best = Rating::AAA.linear_score();
        let coeffs = ratings.iter().map(|r| r.linear_score() - best).collect();
        set.push(coeffs, cap.linear_score() - best, "average_rating");
    }
    if let Some(cap) = caps.warf {
        let coeffs = ratings.iter().map(|r| r.warf() - cap).collect();
        set.push(coeffs, 0.0, "warf");
    }
    for row in &caps.extra {
        let mut coeffs = vec![0.0; n];
        for (name, a) in &row.coeffs {
            let j = sleeves
                .iter()
                .position(|s| &s.name == name)
                .ok_or_else(|| Error::Config(format!("row {:?} references unknown sleeve {name:?}", row.label)))?;
            coeffs[j] = *a;
        }
        set.push(coeffs, row.rhs, format!("user:{}", row.label));
    }
    Ok(set)
}

/// Optional linear penalty on turnover `|u - u_prev|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionCosts {
    pub previous: Vec<f64>,
    pub cost: Vec<f64>,
}

/// Maximise `er . u` over `constraints`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioProblem {
    pub er: Vec<f64>,
    pub constraints: ConstraintSet,
    pub transaction_costs: Option<TransactionCosts>,
}

impl PortfolioProblem {
    pub fn new(er: Vec<f64>, constraints: ConstraintSet) -> Result<Self> {
        if er.len() != constraints.limits.len() {
            return Err(Error::InvalidInput(format!(
                "{} expected returns for {} sleeves",
                er.len(),
                constraints.limits.len()
            )));
        }
        Ok(Self {
            er,
            constraints,
            transaction_costs: None,
        })
    }

    pub fn n_sleeves(&self) -> usize {
        self.er.len()
    }

    /// Variables: weights `u`, then buy/sell legs when costs are attached.
    pub fn to_lp(&self) -> Result<LinearProgram> {
        let n = self.n_sleeves();
        let extra = if self.transaction_costs.is_some() { 2 * n } else { 0 };
        let width = n + extra;
        let mut lp = LinearProgram::new(width);
        let mut c = self.er.clone();
        c.resize(width, 0.0);
        for (j, &lim) in self.constraints.limits.iter().enumerate() {
            if !(0.0..=1.0).contains(&lim) {
                return Err(Error::InvalidInput(format!("allocation limit {lim} for sleeve {j} outside [0, 1]")));
            }
            lp.set_bounds(j, 0.0, lim)?;
        }
        for row in &self.constraints.rows {
            let mut coeffs = row.coeffs.clone();
            coeffs.resize(width, 0.0);
            lp.add_le(coeffs, row.rhs, row.label.clone())?;
        }
        if let Some(tc) = &self.transaction_costs {
            if tc.previous.len() != n || tc.cost.len() != n {
                return Err(Error::InvalidInput("transaction cost vectors must match the universe".into()));
            }
            for j in 0..n {
                c[n + j] = -tc.cost[j];
                c[2 * n + j] = -tc.cost[j];
                // u_j - buy_j + sell_j = prev_j
                let mut coeffs = vec![0.0; width];
                coeffs[j] = 1.0;
                coeffs[n + j] = -1.0;
                coeffs[2 * n + j] = 1.0;
                lp.add_eq(coeffs, tc.previous[j], format!("turnover:{j}"))?;
            }
        }
        lp.set_objective(c)?;
        Ok(lp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSolution {
    pub weights: Vec<f64>,
    /// Expected return of the weights (before transaction costs).
    pub expected_return: f64,
    /// Labels of the binding rows.
    pub binding: Vec<String>,
    pub lp: LpSolution,
}

impl PortfolioSolution {
    pub fn cash(&self) -> f64 {
        1.0 - self.weights.iter().sum::<f64>()
    }
}

fn finish(problem: &PortfolioProblem, lp: &LinearProgram, sol: LpSolution) -> Result<PortfolioSolution> {
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Infeasible {
                violated_at_cash: problem.constraints.violated_at_cash(),
            })
        }
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let n = problem.n_sleeves();
    // long-only: bounds are enforced exactly by the solver
    let weights: Vec<f64> = sol.x[..n].iter().map(|w| w.max(0.0)).collect();
    let expected_return = dot(&problem.er, &weights);
    let binding = sol.binding.iter().map(|&i| lp.rows()[i].label.clone()).collect();
    Ok(PortfolioSolution {
        weights,
        expected_return,
        binding,
        lp: sol,
    })
}

pub fn solve_problem(problem: &PortfolioProblem) -> Result<PortfolioSolution> {
    let lp = problem.to_lp()?;
    let sol = lp.solve()?;
    finish(problem, &lp, sol)
}

/// Maximise expected return subject to scenario loss floors and the
/// constraint set.
pub fn maximize_er(er: &[f64], scenarios: &ScenarioMatrix, constraints: &ConstraintSet) -> Result<PortfolioSolution> {
    let set = constraints.clone().with_scenarios(scenarios, None);
    solve_problem(&PortfolioProblem::new(er.to_vec(), set)?)
}

/// Scenario returns of an index held with `weights`.
pub fn index_returns(scenarios: &ScenarioMatrix, weights: &[f64]) -> Vec<f64> {
    scenarios.portfolio_returns(weights)
}

/// Maximise expected return while losing at most `eps_i` against the index
/// in every scenario.
pub fn track_index_with_view(
    er: &[f64],
    scenarios: &ScenarioMatrix,
    index_returns: &[f64],
    constraints: &ConstraintSet,
) -> Result<PortfolioSolution> {
    if index_returns.len() != scenarios.len() {
        return Err(Error::InvalidInput("one index return per scenario required".into()));
    }
    let set = constraints.clone().with_scenarios(scenarios, Some(index_returns));
    solve_problem(&PortfolioProblem::new(er.to_vec(), set)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxSolution {
    pub weights: Vec<f64>,
    /// Smallest uniform slack that makes every tracking floor hold.
    pub u0: f64,
    /// True when no slack is needed (`u0 <= 0`).
    pub tracking_feasible: bool,
    pub lp: LpSolution,
}

/// Minimise `u0` subject to `u0 + sum u dX_i - dY_i + eps_i >= 0` for all
/// scenarios and `0 <= u <= limits`.
pub fn track_index_minimax(scenarios: &ScenarioMatrix, index_returns: &[f64], limits: &[f64]) -> Result<MinimaxSolution> {
    let n = limits.len();
    if index_returns.len() != scenarios.len() {
        return Err(Error::InvalidInput("one index return per scenario required".into()));
    }
    if scenarios.returns.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("scenario rows must match the universe".into()));
    }
    let mut lp = LinearProgram::new(n + 1);
    for (j, &lim) in limits.iter().enumerate() {
        lp.set_bounds(j, 0.0, lim)?;
    }
    lp.set_bounds(n, f64::NEG_INFINITY, f64::INFINITY)?;
    let mut c = vec![0.0; n + 1];
    c[n] = -1.0;
    lp.set_objective(c)?;
    for i in 0..scenarios.len() {
        let mut coeffs: Vec<f64> = scenarios.returns[i].iter().map(|x| -x).collect();
        coeffs.push(-1.0);
        lp.add_le(coeffs, scenarios.floors[i] - index_returns[i], format!("scenario:{}", scenarios.labels[i]))?;
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible { violated_at_cash: vec![] }),
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let u0 = sol.x[n];
    Ok(MinimaxSolution {
        weights: sol.x[..n].to_vec(),
        u0,
        tracking_feasible: u0 <= 0.0,
        lp: sol,
    })
}

/// A convex, differentiable risk function of the LP variables.
pub trait ConvexRisk: Sync {
    fn label(&self) -> &str;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Portfolio standard deviation over the first `model.len()` variables.
pub struct StdevRisk<'a> {
    pub model: &'a RiskModel,
}

impl ConvexRisk for StdevRisk<'_> {
    fn label(&self) -> &str {
        "stdev"
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.model.stdev(&x[..self.model.len()])
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.model.stdev_gradient(&x[..self.model.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuttingPlaneOptions {
    /// Absolute tightening of each limit used in the cuts.
    pub eps_cut: f64,
    pub max_iter: usize,
}

impl Default for CuttingPlaneOptions {
    fn default() -> Self {
        Self {
            eps_cut: 1e-6,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuttingPlaneState {
    pub iterate: Vec<f64>,
    pub cuts: Vec<Constraint>,
    /// Risk values at the final iterate, in input order.
    pub risk_values: Vec<f64>,
    pub iterations: usize,
    /// LP objective at each iteration.
    pub objective_history: Vec<f64>,
}

/// Solve `base` with the extra requirement `R_k(x) <= limit_k` for each
/// convex risk, by adding the linearisation
/// `x . g <= limit - eps - R(x*) + x* . g` at each violating iterate.
pub fn cutting_plane_solve(
    base: &LinearProgram,
    risks: &[(&dyn ConvexRisk, f64)],
    opts: &CuttingPlaneOptions,
) -> Result<(LpSolution, CuttingPlaneState)> {
    let mut lp = base.clone();
    let width = lp.n_vars();
    let mut state = CuttingPlaneState {
        iterate: Vec::new(),
        cuts: Vec::new(),
        risk_values: Vec::new(),
        iterations: 0,
        objective_history: Vec::new(),
    };
    loop {
        let sol = lp.solve_with(&LpOptions::default())?;
        state.iterations += 1;
        if !sol.is_optimal() {
            return Ok((sol, state));
        }
        state.objective_history.push(sol.objective);
        state.iterate = sol.x.clone();
        state.risk_values = risks.iter().map(|(r, _)| r.value(&sol.x)).collect();

        let mut worst_gap: f64 = 0.0;
        let mut new_cuts = Vec::new();
        for ((risk, limit), value) in risks.iter().zip(&state.risk_values) {
            if *value <= *limit {
                continue;
            }
            worst_gap = worst_gap.max(value - limit);
            let mut g = risk.gradient(&sol.x);
            g.resize(width, 0.0);
            let tighten = opts.eps_cut.min(0.5 * limit.max(0.0));
            let rhs = limit - tighten - value + dot(&sol.x, &g);
            new_cuts.push(Constraint {
                coeffs: g,
                rhs,
                label: format!("cut:{}", risk.label()),
            });
        }
        if new_cuts.is_empty() {
            return Ok((sol, state));
        }
        if state.iterations >= opts.max_iter {
            return Err(Error::CuttingPlaneNotConverged {
                iterations: state.iterations,
                gap: worst_gap,
            });
        }
        for cut in new_cuts {
            lp.add_le(cut.coeffs.clone(), cut.rhs, cut.label.clone())?;
            state.cuts.push(cut);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::tests::vertex_oracle;
    use crate::risk::tests::{mixed_book, sleeve};
    use crate::risk::RiskConfig;
    use crate::scenarios::ScenarioSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(returns: Vec<Vec<f64>>, floors: Vec<f64>) -> ScenarioMatrix {
        ScenarioMatrix {
            labels: (0..returns.len()).map(|i| format!("w{i}")).collect(),
            floors,
            returns,
        }
    }

    fn limits(n: usize, lim: f64) -> ConstraintSet {
        ConstraintSet {
            limits: vec![lim; n],
            rows: Vec::new(),
        }
    }

    #[test]
    fn rating_rows() {
        let mut aaa = sleeve("gov", 5.0, 0.03, 0.0, false);
        aaa.rating = "AAA".into();
        let set = build_constraints(std::slice::from_ref(&aaa), &ConstraintCaps::default()).unwrap();
        let row = set.rows.iter().find(|r| r.label == "average_rating").unwrap();
        assert_eq!(row.coeffs, vec![0.0]);
        assert_eq!(row.rhs, 11.0);

        let mut a = sleeve("aa", 5.0, 0.03, 0.005, false);
        a.rating = "AA".into();
        let mut b = sleeve("b", 5.0, 0.08, 0.05, false);
        b.rating = "B-".into();
        let caps = ConstraintCaps {
            average_rating: Some("BB+".into()),
            ..ConstraintCaps::none()
        };
        let set = build_constraints(&[a.clone(), b.clone()], &caps).unwrap();
        let row = set.rows.iter().find(|r| r.label == "average_rating").unwrap();
        // equal weights, fully invested: average (3 + 16) / 2 = 9.5 <= 11
        let act = 0.5 * row.coeffs[0] + 0.5 * row.coeffs[1] + 1.0;
        assert_eq!(act, 9.5);
        assert!(0.5 * row.coeffs[0] + 0.5 * row.coeffs[1] <= row.rhs);

        b.rating = "ZZ".into();
        assert!(build_constraints(&[a, b], &caps).is_err());
    }

    #[test]
    fn sector_rows_only_for_present_tags() {
        let mut hy = sleeve("hy", 5.0, 0.07, 0.04, false);
        hy.sectors.insert(Sector::HighYield);
        let ig = sleeve("ig", 5.0, 0.04, 0.01, false);
        let set = build_constraints(&[hy, ig], &ConstraintCaps::default()).unwrap();
        let row = set.rows.iter().find(|r| r.label == "sector:HY").unwrap();
        assert_eq!(row.coeffs, vec![1.0, 0.0]);
        assert_eq!(row.rhs, 0.6);
        assert!(!set.rows.iter().any(|r| r.label == "sector:EM"));
    }

    #[test]
    fn warf_and_user_rows() {
        let mut a = sleeve("a", 5.0, 0.04, 0.01, false);
        a.rating = "A".into();
        let mut b = sleeve("b", 5.0, 0.07, 0.04, false);
        b.rating = "B".into();
        let caps = ConstraintCaps {
            warf: Some(1000.0),
            extra: vec![UserRow {
                label: "capital".into(),
                coeffs: [("b".to_string(), 2.0)].into_iter().collect(),
                rhs: 0.5,
            }],
            ..ConstraintCaps::none()
        };
        let set = build_constraints(&[a.clone(), b.clone()], &caps).unwrap();
        let warf = set.rows.iter().find(|r| r.label == "warf").unwrap();
        assert!((warf.coeffs[0] - (120.0 - 1000.0)).abs() < 1e-9);
        assert!((warf.coeffs[1] - (2720.0 - 1000.0)).abs() < 1e-9);
        let user = set.rows.iter().find(|r| r.label == "user:capital").unwrap();
        assert_eq!(user.coeffs, vec![0.0, 2.0]);

        let bad = ConstraintCaps {
            extra: vec![UserRow {
                label: "x".into(),
                coeffs: [("nope".to_string(), 1.0)].into_iter().collect(),
                rhs: 0.0,
            }],
            ..ConstraintCaps::none()
        };
        assert!(build_constraints(&[a, b], &bad).is_err());
    }

    #[test]
    fn zero_floors_force_cash() {
        let sc = matrix(vec![vec![-0.1, -0.2], vec![-0.05, -0.01]], vec![0.0, 0.0]);
        let sol = maximize_er(&[0.05, 0.08], &sc, &limits(2, 1.0)).unwrap();
        assert!(sol.weights.iter().all(|w| *w == 0.0));
        assert_eq!(sol.cash(), 1.0);
    }

    #[test]
    fn single_scenario_half_weight() {
        let sc = matrix(vec![vec![-0.1]], vec![0.05]);
        let sol = maximize_er(&[0.04], &sc, &limits(1, 1.0)).unwrap();
        assert!((sol.weights[0] - 0.5).abs() < 1e-12);
        assert_eq!(sol.binding, vec!["scenario:w0".to_string()]);
    }

    #[test]
    fn infeasible_reports_rows_at_cash() {
        let mut set = limits(1, 1.0);
        set.push(vec![-1.0], -0.5, "minimum");
        let sc = matrix(vec![vec![-0.1]], vec![0.01]);
        match maximize_er(&[0.04], &sc, &set) {
            Err(Error::Infeasible { violated_at_cash }) => assert_eq!(violated_at_cash, vec!["minimum".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tracking_with_view() {
        // index is sleeve 1; holding it fully meets zero floors
        let sc = matrix(vec![vec![-0.1, -0.05, 0.02], vec![0.03, -0.02, -0.04]], vec![0.0, 0.0]);
        let dy = index_returns(&sc, &[0.0, 1.0, 0.0]);
        let mut set = limits(3, 1.0);
        set.push(vec![1.0; 3], 1.0, "budget");
        let sol = track_index_with_view(&[0.01, 0.02, 0.03], &sc, &dy, &set).unwrap();
        assert!(sol.expected_return >= 0.02 - 1e-12);
        // zero index return reduces to maximize_er
        let a = track_index_with_view(&[0.01, 0.02, 0.03], &sc, &[0.0, 0.0], &set).unwrap();
        let b = maximize_er(&[0.01, 0.02, 0.03], &sc, &set).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn minimax_trivial_cases() {
        let sc = matrix(vec![vec![-0.1, 0.02], vec![0.03, -0.04], vec![0.01, 0.01]], vec![0.01, 0.02, 0.005]);
        let dy: Vec<f64> = sc.returns.iter().map(|r| r[1]).collect();
        // only the index sleeve is investable: replication leaves slack -min eps
        let sol = track_index_minimax(&sc, &dy, &[0.0, 1.0]).unwrap();
        assert!((sol.u0 + 0.005).abs() < 1e-12);
        let free = track_index_minimax(&sc, &dy, &[1.0, 1.0]).unwrap();
        assert!(free.u0 <= sol.u0);
        assert!(sol.tracking_feasible);

        let sol = track_index_minimax(&sc, &dy, &[0.0, 0.0]).unwrap();
        let forced = dy.iter().zip(&sc.floors).map(|(y, e)| y - e).fold(f64::NEG_INFINITY, f64::max);
        assert!((sol.u0 - forced).abs() < 1e-12);
        assert!(!sol.tracking_feasible);
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ScenarioMatrix {
        matrix(
            (0..k).map(|_| (0..n).map(|_| rng.gen_range(-0.2..0.1)).collect()).collect(),
            (0..k).map(|_| rng.gen_range(0.0..0.05)).collect(),
        )
    }

    proptest! {
        #[test]
        fn two_sleeve_er_matches_oracle(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sc = random_matrix(&mut rng, 2, 3);
            let er: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..0.1)).collect();
            let mut set = limits(2, rng.gen_range(0.2..1.0));
            set.push(vec![1.0, 1.0], 1.0, "budget");
            let sol = maximize_er(&er, &sc, &set).unwrap();
            let lp = PortfolioProblem::new(er.clone(), set.with_scenarios(&sc, None)).unwrap().to_lp().unwrap();
            let best = vertex_oracle(&lp).unwrap();
            prop_assert!((sol.expected_return - best).abs() < 1e-10);
            prop_assert!(sol.weights.iter().all(|w| *w >= 0.0));
        }

        #[test]
        fn three_sleeve_view_matches_oracle(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sc = random_matrix(&mut rng, 3, 4);
            let dy: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.1..0.0)).collect();
            let er: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.1)).collect();
            let mut set = limits(3, 0.6);
            set.push(vec![1.0; 3], 1.0, "budget");
            let lp = PortfolioProblem::new(er.clone(), set.clone().with_scenarios(&sc, Some(&dy))).unwrap().to_lp().unwrap();
            match (track_index_with_view(&er, &sc, &dy, &set), vertex_oracle(&lp)) {
                (Ok(sol), Some(best)) => prop_assert!((sol.expected_return - best).abs() < 1e-10),
                (Err(Error::Infeasible { .. }), None) => {}
                (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }

        #[test]
        fn minimax_matches_oracle(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sc = random_matrix(&mut rng, 4, 5);
            let dy: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.1..0.05)).collect();
            let lim = vec![0.5; 4];
            let sol = track_index_minimax(&sc, &dy, &lim).unwrap();
            // oracle: the same LP with u0 boxed wide enough to be inactive
            let mut lp = LinearProgram::new(5);
            for j in 0..4 { lp.set_bounds(j, 0.0, 0.5).unwrap(); }
            lp.set_bounds(4, -10.0, 10.0).unwrap();
            lp.set_objective(vec![0.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
            for i in 0..5 {
                let mut c: Vec<f64> = sc.returns[i].iter().map(|x| -x).collect();
                c.push(-1.0);
                lp.add_le(c, sc.floors[i] - dy[i], "s").unwrap();
            }
            let best = vertex_oracle(&lp).unwrap();
            prop_assert!((-sol.u0 - best).abs() < 1e-10);
        }

        #[test]
        fn dropping_a_row_never_hurts(seed in 0u64..100_000, drop in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sc = random_matrix(&mut rng, 3, 4);
            let er: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.1)).collect();
            let mut set = limits(3, 1.0);
            set.push(vec![1.0; 3], 1.0, "budget");
            let full = maximize_er(&er, &sc, &set).unwrap();
            let mut fewer = sc.clone();
            fewer.returns.remove(drop);
            fewer.floors.remove(drop);
            fewer.labels.remove(drop);
            let relaxed = maximize_er(&er, &fewer, &set).unwrap();
            prop_assert!(relaxed.expected_return >= full.expected_return - 1e-12);
        }
    }

    #[test]
    fn transaction_costs_discourage_turnover() {
        let sc = matrix(vec![vec![-0.1, -0.1]], vec![0.05]);
        let er = vec![0.050, 0.051];
        let mut set = limits(2, 1.0);
        set.push(vec![1.0, 1.0], 1.0, "budget");
        let free = maximize_er(&er, &sc, &set).unwrap();
        assert!((free.weights[1] - 0.5).abs() < 1e-12);
        let mut p = PortfolioProblem::new(er.clone(), set.with_scenarios(&sc, None)).unwrap();
        p.transaction_costs = Some(TransactionCosts {
            previous: vec![0.5, 0.0],
            cost: vec![0.01, 0.01],
        });
        let sol = solve_problem(&p).unwrap();
        assert!((sol.weights[0] - 0.5).abs() < 1e-12, "{:?}", sol.weights);
    }

    struct Quadratic;

    impl ConvexRisk for Quadratic {
        fn label(&self) -> &str {
            "norm"
        }
        fn value(&self, x: &[f64]) -> f64 {
            (x[0] * x[0] + x[1] * x[1]).sqrt()
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            let v = self.value(x);
            if v == 0.0 {
                vec![0.0, 0.0]
            } else {
                vec![x[0] / v, x[1] / v]
            }
        }
    }

    #[test]
    fn cutting_plane_on_a_disc() {
        // max x + y on the disc of radius 0.5: optimum 0.5 sqrt 2
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![1.0, 1.0]).unwrap();
        lp.set_bounds(0, 0.0, 1.0).unwrap();
        lp.set_bounds(1, 0.0, 1.0).unwrap();
        let (sol, state) = cutting_plane_solve(&lp, &[(&Quadratic, 0.5)], &CuttingPlaneOptions::default()).unwrap();
        assert!((sol.objective - 0.5 * 2f64.sqrt()).abs() < 1e-5);
        assert!(state.risk_values[0] <= 0.5);
        assert!(state.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert_eq!(state.cuts.len(), state.iterations - 1);
    }

    #[test]
    fn cutting_plane_without_risks_is_one_pass() {
        let mut lp = LinearProgram::new(1);
        lp.set_objective(vec![1.0]).unwrap();
        lp.set_bounds(0, 0.0, 0.3).unwrap();
        let (sol, state) = cutting_plane_solve(&lp, &[], &CuttingPlaneOptions::default()).unwrap();
        assert_eq!(sol.x, vec![0.3]);
        assert_eq!(state.iterations, 1);
        let mut lp2 = LinearProgram::new(2);
        lp2.set_objective(vec![1.0, 1.0]).unwrap();
        lp2.set_bounds(0, 0.0, 0.3).unwrap();
        lp2.set_bounds(1, 0.0, 0.3).unwrap();
        let (_, state) = cutting_plane_solve(&lp2, &[(&Quadratic, 1.0)], &CuttingPlaneOptions::default()).unwrap();
        assert!(state.cuts.is_empty());
    }

    #[test]
    fn cutting_plane_reports_non_convergence() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![1.0, 1.0]).unwrap();
        lp.set_bounds(0, 0.0, 1.0).unwrap();
        lp.set_bounds(1, 0.0, 1.0).unwrap();
        let opts = CuttingPlaneOptions {
            max_iter: 2,
            ..Default::default()
        };
        assert!(matches!(
            cutting_plane_solve(&lp, &[(&Quadratic, 0.5)], &opts),
            Err(Error::CuttingPlaneNotConverged { iterations: 2, .. })
        ));
    }

    /// Dense grid search over two weights at `step` resolution.
    pub(crate) fn grid_oracle(er: &[f64; 2], model: &RiskModel, limit: f64, cap: f64, step: f64) -> f64 {
        let k = (cap / step).round() as usize;
        let mut best: f64 = 0.0;
        for i in 0..=k {
            let u0 = i as f64 * step;
            // stdev is increasing in u1 along each line, so bisect the largest feasible u1
            let (mut lo, mut hi) = (0.0, cap.min(1.0 - u0).max(0.0));
            if model.stdev(&[u0, 0.0]) > limit {
                break;
            }
            if model.stdev(&[u0, hi]) > limit {
                while hi - lo > 1e-12 {
                    let mid = 0.5 * (lo + hi);
                    if model.stdev(&[u0, mid]) <= limit {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi = lo;
            }
            let u1 = (hi / step).floor() * step;
            best = best.max(er[0] * u0 + er[1] * u1);
        }
        best
    }

    #[test]
    fn stdev_limited_two_asset_matches_grid() {
        let book = vec![sleeve("rates", 10.0, 0.04, 0.0, false), sleeve("credit", 5.0, 0.06, 0.02, false)];
        let model = RiskModel::new(&book, &RiskConfig::default()).unwrap();
        let er = [0.01, 0.02];
        let mut set = ConstraintSet::limits_only(&book);
        set.limits = vec![1.0, 1.0];
        set.push(vec![1.0, 1.0], 1.0, "budget");
        let lp = PortfolioProblem::new(er.to_vec(), set).unwrap().to_lp().unwrap();
        let risk = StdevRisk { model: &model };
        let (sol, state) = cutting_plane_solve(&lp, &[(&risk, 0.05)], &CuttingPlaneOptions::default()).unwrap();
        let oracle = grid_oracle(&er, &model, 0.05, 1.0, 1e-4);
        assert!((sol.objective - oracle).abs() < 1e-3, "{} vs {oracle}", sol.objective);
        assert!(state.iterations <= 50);
        assert!(model.stdev(&sol.x) <= 0.05 * (1.0 + 1e-3));
    }

    #[test]
    fn stdev_cuts_on_mixed_book() {
        let book = mixed_book();
        let model = RiskModel::new(&book, &RiskConfig::default()).unwrap();
        let n = book.len();
        let mut set = ConstraintSet::limits_only(&book);
        set.push(vec![1.0; n], 1.0, "budget");
        let er: Vec<f64> = book.iter().map(|s| s.spread + 0.002).collect();
        let lp = PortfolioProblem::new(er, set).unwrap().to_lp().unwrap();
        let risk = StdevRisk { model: &model };
        let limit = 0.5 * model.stdev(&vec![1.0 / n as f64; n]);
        let (sol, state) = cutting_plane_solve(&lp, &[(&risk, limit)], &CuttingPlaneOptions::default()).unwrap();
        assert!(model.stdev(&sol.x) <= limit);
        assert!(lp.max_violation(&sol.x) <= 1e-9);
        assert!(state.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn scenario_rows_from_specs() {
        let book = mixed_book();
        let specs = vec![ScenarioSpec::parallel("up", 0.02).with_floor(0.01)];
        let sc = ScenarioMatrix::build(&book, &specs).unwrap();
        let er: Vec<f64> = book.iter().map(|s| s.spread + 0.001).collect();
        let mut set = ConstraintSet::limits_only(&book);
        set.push(vec![1.0; book.len()], 1.0, "budget");
        let sol = maximize_er(&er, &sc, &set).unwrap();
        let loss = -dot(&sc.returns[0], &sol.weights);
        assert!(loss <= 0.01 + 1e-9);
    }
}
