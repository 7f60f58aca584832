//! Dense bounded-variable primal simplex.
//!
//! Solves `max c'x` subject to `A x <= b` and box bounds `lo <= x <= hi`
//! (either side may be infinite). Equalities enter as paired inequalities.
//! Two phases with artificials; Dantzig pricing that switches to Bland's
//! rule once a run of degenerate pivots reaches the stall threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub stall_threshold: usize,
    /// Feasibility and optimality tolerance.
    pub tolerance: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            stall_threshold: 50,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal solution (empty unless optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals; nonnegative for `<=` rows at a maximum.
    pub duals: Vec<f64>,
    /// Indices of rows holding with equality.
    pub binding: Vec<usize>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Constraint>,
}

impl LinearProgram {
    /// `n` variables, zero objective, bounds `[0, inf)`.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn set_objective(&mut self, c: Vec<f64>) -> Result<()> {
        self.check_len(&c)?;
        self.objective = c;
        Ok(())
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) -> Result<()> {
        if j >= self.n_vars() || lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
        {
            return Err(Error::InvalidInput(format!("bad bounds [{lo}, {hi}] for variable {j}")));
        }
        self.lower[j] = lo;
        self.upper[j] = hi;
        Ok(())
    }

    pub fn add_le(&mut self, coeffs: Vec<f64>, rhs: f64, label: impl Into<String>) -> Result<usize> {
        self.push(coeffs, rhs, label.into())
    }

    pub fn add_ge(&mut self, coeffs: Vec<f64>, rhs: f64, label: impl Into<String>) -> Result<usize> {
        self.push(coeffs.into_iter().map(|a| -a).collect(), -rhs, label.into())
    }

    /// Adds the pair `a'x <= b`, `-a'x <= -b`; returns the first index.
    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64, label: impl Into<String>) -> Result<usize> {
        let label = label.into();
        let neg = coeffs.iter().map(|a| -a).collect();
        let first = self.push(coeffs, rhs, label.clone())?;
        self.push(neg, -rhs, label)?;
        Ok(first)
    }

    fn push(&mut self, coeffs: Vec<f64>, rhs: f64, label: String) -> Result<usize> {
        self.check_len(&coeffs)?;
        if !rhs.is_finite() {
            return Err(Error::InvalidInput(format!("row {label:?} has non-finite rhs")));
        }
        self.rows.push(Constraint {
            coeffs,
            rhs,
            label,
        });
        Ok(self.rows.len() - 1)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_vars() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                self.n_vars(),
                v.len()
            )));
        }
        if v.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn row_activity(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].coeffs.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            worst = worst.max(self.row_activity(i, x) - row.rhs);
        }
        for (j, v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.solve_with(&LpOptions::default())
    }

    pub fn solve_with(&self, opts: &LpOptions) -> Result<LpSolution> {
        Simplex::build(self).solve(self, opts)
    }
}

#[derive(Debug, Clone, Copy)]
enum ColMap {
    /// x = lo + x'
    Shift(usize, f64),
    /// x = hi - x'
    Neg(usize, f64),
    /// x = x+ - x-
    Split(usize, usize),
}

const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_STEP: f64 = 1e-12;

enum PhaseEnd {
    Optimal,
    Unbounded,
}

struct Simplex {
    m: usize,
    n: usize,
    /// m rows of n columns plus the transformed rhs in column n.
    tab: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    at_upper: Vec<bool>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    maps: Vec<ColMap>,
    slack_of: Vec<usize>,
    artificials: Vec<usize>,
    bland: bool,
    stall: usize,
    iterations: usize,
}

impl Simplex {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.n_rows();
        let mut maps = Vec::with_capacity(lp.n_vars());
        let mut ub = Vec::new();
        let mut cost = Vec::new();
        for j in 0..lp.n_vars() {
            let (lo, hi, c) = (lp.lower[j], lp.upper[j], lp.objective[j]);
            if lo.is_finite() {
                maps.push(ColMap::Shift(ub.len(), lo));
                ub.push(hi - lo);
                cost.push(c);
            } else if hi.is_finite() {
                maps.push(ColMap::Neg(ub.len(), hi));
                ub.push(f64::INFINITY);
                cost.push(-c);
            } else {
                maps.push(ColMap::Split(ub.len(), ub.len() + 1));
                ub.extend([f64::INFINITY, f64::INFINITY]);
                cost.extend([c, -c]);
            }
        }
        let structural = ub.len();

        // transformed rhs and sign flips so every rhs is nonnegative
        let mut rhs = Vec::with_capacity(m);
        for row in &lp.rows {
            let mut b = row.rhs;
            for (j, map) in maps.iter().enumerate() {
                match *map {
                    ColMap::Shift(_, lo) => b -= row.coeffs[j] * lo,
                    ColMap::Neg(_, hi) => b -= row.coeffs[j] * hi,
                    ColMap::Split(..) => {}
                }
            }
            rhs.push(b);
        }
        let slack_of: Vec<usize> = (structural..structural + m).collect();
        let mut artificial_of = vec![None; m];
        let mut n = structural + m;
        for (i, b) in rhs.iter().enumerate() {
            if *b < 0.0 {
                artificial_of[i] = Some(n);
                n += 1;
            }
        }
        ub.resize(n, f64::INFINITY);
        cost.resize(n, 0.0);

        let w = n + 1;
        let mut tab = vec![0.0; m * w];
        let mut basis = vec![0; m];
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
            let r = &mut tab[i * w..(i + 1) * w];
            for (j, map) in maps.iter().enumerate() {
                let a = sign * row.coeffs[j];
                match *map {
                    ColMap::Shift(k, _) => r[k] = a,
                    ColMap::Neg(k, _) => r[k] = -a,
                    ColMap::Split(p, q) => {
                        r[p] = a;
                        r[q] = -a;
                    }
                }
            }
            r[slack_of[i]] = sign;
            r[n] = sign * rhs[i];
            basis[i] = match artificial_of[i] {
                Some(a) => {
                    r[a] = 1.0;
                    a
                }
                None => slack_of[i],
            };
        }
        let mut in_basis = vec![false; n];
        for &b in &basis {
            in_basis[b] = true;
        }
        let beta = (0..m).map(|i| tab[i * w + n]).collect();
        let artificials = artificial_of.iter().flatten().copied().collect();
        Self {
            m,
            n,
            tab,
            beta,
            basis,
            in_basis,
            at_upper: vec![false; n],
            ub,
            cost,
            maps,
            slack_of,
            artificials,
            bland: false,
            stall: 0,
            iterations: 0,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.tab[i * (self.n + 1) + j]
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.at(i, j);
                }
            }
        }
        d
    }

    fn refresh_beta(&mut self) {
        for i in 0..self.m {
            let mut v = self.at(i, self.n);
            for j in 0..self.n {
                if !self.in_basis[j] && self.at_upper[j] {
                    v -= self.at(i, j) * self.ub[j];
                }
            }
            self.beta[i] = v;
        }
    }

    fn run(&mut self, cost: &[f64], opts: &LpOptions) -> Result<(PhaseEnd, Vec<f64>)> {
        let mut d = self.reduced_costs(cost);
        let tol = opts.tolerance;
        loop {
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.in_basis[j] || self.ub[j] <= 0.0 {
                    continue;
                }
                let gain = if self.at_upper[j] { -d[j] } else { d[j] };
                if gain > tol {
                    if self.bland {
                        entering = Some((j, gain));
                        break;
                    }
                    if entering.is_none_or(|(_, g)| gain > g) {
                        entering = Some((j, gain));
                    }
                }
            }
            let Some((j, _)) = entering else {
                return Ok((PhaseEnd::Optimal, d));
            };
            self.iterations += 1;
            if self.iterations > opts.max_iterations {
                return Err(Error::IterationLimit(opts.max_iterations));
            }
            let delta = if self.at_upper[j] { -1.0 } else { 1.0 };

            let mut theta = self.ub[j];
            let mut leave: Option<usize> = None;
            for i in 0..self.m {
                let alpha = delta * self.at(i, j);
                let lim = if alpha > PIVOT_TOL {
                    self.beta[i].max(0.0) / alpha
                } else if alpha < -PIVOT_TOL && self.ub[self.basis[i]].is_finite() {
                    (self.ub[self.basis[i]] - self.beta[i]).max(0.0) / -alpha
                } else {
                    continue;
                };
                let better = match leave {
                    None => lim < theta,
                    Some(r) => lim < theta - 1e-12 || (lim <= theta + 1e-12 && self.basis[i] < self.basis[r]),
                };
                if better {
                    theta = lim.min(theta);
                    leave = Some(i);
                }
            }
            if theta.is_infinite() {
                return Ok((PhaseEnd::Unbounded, d));
            }
            if theta <= DEGENERATE_STEP {
                self.stall += 1;
                if self.stall >= opts.stall_threshold {
                    self.bland = true;
                }
            } else {
                self.stall = 0;
            }

            for i in 0..self.m {
                self.beta[i] -= delta * theta * self.at(i, j);
            }
            let Some(r) = leave else {
                self.at_upper[j] = !self.at_upper[j];
                continue;
            };

            let entering_value = if self.at_upper[j] { self.ub[j] } else { 0.0 } + delta * theta;
            let old = self.basis[r];
            let alpha = delta * self.at(r, j);
            self.in_basis[old] = false;
            self.at_upper[old] = alpha < 0.0;
            self.in_basis[j] = true;
            self.at_upper[j] = false;
            self.basis[r] = j;
            self.beta[r] = entering_value;
            self.pivot(r, j, &mut d);
        }
    }

    fn pivot(&mut self, r: usize, j: usize, d: &mut [f64]) {
        let w = self.n + 1;
        let p = self.tab[r * w + j];
        for v in &mut self.tab[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.tab.split_at_mut(r * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pv;
                }
                row[j] = 0.0;
            }
        }
        let f = d[j];
        if f != 0.0 {
            for (dv, pv) in d.iter_mut().zip(pivot_row.iter()) {
                *dv -= f * pv;
            }
            d[j] = 0.0;
        }
    }

    fn solve(mut self, lp: &LinearProgram, opts: &LpOptions) -> Result<LpSolution> {
        let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if !self.artificials.is_empty() {
            let mut phase1 = vec![0.0; self.n];
            for &a in &self.artificials {
                phase1[a] = -1.0;
            }
            self.run(&phase1, opts)?;
            self.refresh_beta();
            let infeas: f64 = (0..self.m)
                .filter(|&i| self.artificials.contains(&self.basis[i]))
                .map(|i| self.beta[i].max(0.0))
                .sum();
            if infeas > opts.tolerance * scale {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    objective: f64::NAN,
                    duals: Vec::new(),
                    binding: Vec::new(),
                    iterations: self.iterations,
                });
            }
            for &a in &self.artificials {
                self.ub[a] = 0.0;
                self.at_upper[a] = false;
            }
            self.refresh_beta();
        }
        self.stall = 0;
        let cost = self.cost.clone();
        let (end, d) = self.run(&cost, opts)?;
        if let PhaseEnd::Unbounded = end {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: f64::INFINITY,
                duals: Vec::new(),
                binding: Vec::new(),
                iterations: self.iterations,
            });
        }
        self.refresh_beta();

        let mut value = vec![0.0; self.n];
        for j in 0..self.n {
            if !self.in_basis[j] && self.at_upper[j] {
                value[j] = self.ub[j];
            }
        }
        for i in 0..self.m {
            value[self.basis[i]] = self.beta[i].clamp(0.0, self.ub[self.basis[i]]);
        }
        let x: Vec<f64> = self
            .maps
            .iter()
            .map(|map| match *map {
                ColMap::Shift(k, lo) => lo + value[k],
                ColMap::Neg(k, hi) => hi - value[k],
                ColMap::Split(p, q) => value[p] - value[q],
            })
            .collect();
        let duals = self.slack_of.iter().map(|&s| -d[s]).collect();
        let binding = (0..lp.n_rows())
            .filter(|&i| {
                let act = lp.row_activity(i, &x);
                let tol = opts.tolerance * (1.0 + lp.rows[i].rhs.abs());
                (act - lp.rows[i].rhs).abs() <= tol
            })
            .collect();
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x,
            objective,
            duals,
            binding,
            iterations: self.iterations,
        })
    }
}
