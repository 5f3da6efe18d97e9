//! Dense bounded-variable primal simplex.
//!
//! Every variable carries a finite box, so nonbasic variables sit at one of
//! their two bounds and the ratio test also considers bound flips. Phase one
//! minimizes the sum of one artificial per row; phase two optimizes the user
//! objective from the feasible basis. Pricing and leaving-variable choice both
//! follow Bland's rule, which rules out cycling.
//!
//! The solver keeps the full tableau. That is quadratic in the problem size,
//! which is the right trade for the few dozen variables a desk-scale node LP
//! has.

use thiserror::Error;

use super::TAU_LP;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        LinearConstraint {
            coeffs,
            relation,
            rhs,
        }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the constraint (0 if satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: Sense,
    pub coeffs: Vec<(usize, f64)>,
}

impl Objective {
    pub fn minimize(coeffs: Vec<(usize, f64)>) -> Self {
        Objective {
            sense: Sense::Minimize,
            coeffs,
        }
    }

    pub fn maximize(coeffs: Vec<(usize, f64)>) -> Self {
        Objective {
            sense: Sense::Maximize,
            coeffs,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<LinearConstraint>,
    pub objective: Option<Objective>,
}

impl LpProblem {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        LpProblem {
            lower,
            upper,
            constraints: Vec::new(),
            objective: None,
        }
    }

    pub fn add_variable(&mut self, lower: f64, upper: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add(&mut self, c: LinearConstraint) {
        self.constraints.push(c);
    }

    /// Largest bound or constraint violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let box_v = (0..self.num_vars())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        self.constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(box_v, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Feasible {
        assignment: Vec<f64>,
        objective: f64,
    },
    Infeasible,
}

impl LpResult {
    pub fn is_feasible(&self) -> bool {
        matches!(self, LpResult::Feasible { .. })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("simplex iteration cap of {0} exceeded")]
    IterationLimit(usize),
    #[error("malformed LP: {0}")]
    Malformed(String),
    #[error("LP is unbounded")]
    Unbounded,
}

/// Solves `p`, minimizing or maximizing its objective if it has one.
pub fn solve_lp(p: &LpProblem) -> Result<LpResult, LpError> {
    let Some(mut solver) = Simplex::feasible(p)? else {
        return Ok(LpResult::Infeasible);
    };
    if let Some(obj) = &p.objective {
        solver.optimize(obj)?;
    }
    let assignment = solver.assignment();
    let objective = p.objective.as_ref().map_or(0.0, |o| o.value(&assignment));
    Ok(LpResult::Feasible {
        assignment,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

/// Simplex state after phase one. Cloning it is cheap enough to reuse one
/// feasible basis for many objectives.
#[derive(Debug, Clone)]
pub struct Simplex {
    rows: usize,
    cols: usize,
    /// Original variables occupy columns `0..structural`.
    structural: usize,
    /// Row-major `rows × cols`, kept equal to `B⁻¹A`.
    tableau: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    value: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    cost: Vec<f64>,
    reduced: Vec<f64>,
    max_iterations: usize,
}

impl Simplex {
    /// Runs phase one. Returns `None` when the problem has no point within
    /// the feasibility tolerance.
    pub fn feasible(p: &LpProblem) -> Result<Option<Simplex>, LpError> {
        let n = p.num_vars();
        if p.upper.len() != n {
            return Err(LpError::Malformed("bound vectors differ in length".into()));
        }
        for j in 0..n {
            if !p.lower[j].is_finite() || !p.upper[j].is_finite() {
                return Err(LpError::Malformed(format!(
                    "variable {j} has an infinite bound"
                )));
            }
            if p.lower[j] > p.upper[j] + TAU_LP {
                return Ok(None);
            }
        }
        let m = p.constraints.len();
        let slack_rows: Vec<usize> = (0..m)
            .filter(|&i| p.constraints[i].relation != Relation::Eq)
            .collect();
        let cols = n + slack_rows.len() + m;
        let mut tableau = vec![0.0; m * cols];
        let mut lower = Vec::with_capacity(cols);
        let mut upper = Vec::with_capacity(cols);
        let mut value = Vec::with_capacity(cols);
        for j in 0..n {
            let (l, u) = (p.lower[j], p.upper[j].max(p.lower[j]));
            lower.push(l);
            upper.push(u);
            value.push(l);
        }

        // Rows are normalized to `a·x + s = b` with `s ∈ [0, S]` for
        // inequalities (Ge rows negated first).
        let mut rhs = vec![0.0; m];
        for (i, c) in p.constraints.iter().enumerate() {
            let sign = if c.relation == Relation::Ge {
                -1.0
            } else {
                1.0
            };
            for &(j, a) in &c.coeffs {
                if j >= n {
                    return Err(LpError::Malformed(format!(
                        "constraint {i} references variable {j}"
                    )));
                }
                tableau[i * cols + j] += sign * a;
            }
            rhs[i] = sign * c.rhs;
        }
        for (k, &i) in slack_rows.iter().enumerate() {
            let col = n + k;
            tableau[i * cols + col] = 1.0;
            let row = &tableau[i * cols..i * cols + n];
            let min_activity: f64 = (0..n)
                .map(|j| (row[j] * lower[j]).min(row[j] * upper[j]))
                .sum();
            let slack_max = rhs[i] - min_activity;
            if slack_max < -TAU_LP * (1.0 + rhs[i].abs()) {
                return Ok(None);
            }
            lower.push(0.0);
            upper.push(slack_max.max(0.0));
            value.push(0.0);
        }

        // One artificial per row, signed so that it starts nonnegative.
        let art0 = n + slack_rows.len();
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let row = &tableau[i * cols..(i + 1) * cols];
            let activity: f64 = (0..art0).map(|j| row[j] * value[j]).sum();
            let residual = rhs[i] - activity;
            let sign = if residual >= 0.0 { 1.0 } else { -1.0 };
            // Divide the row by the artificial's sign so the basis column is +1.
            if sign < 0.0 {
                tableau[i * cols..(i + 1) * cols]
                    .iter_mut()
                    .for_each(|v| *v = -*v);
            }
            tableau[i * cols + art0 + i] = 1.0;
            lower.push(0.0);
            upper.push(f64::INFINITY);
            value.push(residual.abs());
            basis.push(art0 + i);
        }

        let mut status = vec![Status::AtLower; cols];
        for &b in &basis {
            status[b] = Status::Basic;
        }
        let mut cost = vec![0.0; cols];
        cost[art0..].iter_mut().for_each(|c| *c = 1.0);

        let mut s = Simplex {
            rows: m,
            cols,
            structural: n,
            tableau,
            lower,
            upper,
            value,
            status,
            basis,
            cost,
            reduced: vec![0.0; cols],
            max_iterations: 50 * (n + m).max(1),
        };
        s.price();
        s.iterate()?;

        let infeasibility: f64 = s.value[art0..].iter().sum();
        if infeasibility > TAU_LP {
            return Ok(None);
        }
        // Pin artificials to zero for every later objective.
        for j in art0..cols {
            s.upper[j] = 0.0;
            s.value[j] = s.value[j].clamp(0.0, 0.0);
            if s.status[j] == Status::AtUpper {
                s.status[j] = Status::AtLower;
            }
        }
        s.recompute_basic_values();
        Ok(Some(s))
    }

    /// Optimizes `obj` from the current feasible basis.
    pub fn optimize(&mut self, obj: &Objective) -> Result<f64, LpError> {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        let flip = match obj.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        for &(j, c) in &obj.coeffs {
            if j >= self.structural {
                return Err(LpError::Malformed(format!(
                    "objective references variable {j}"
                )));
            }
            self.cost[j] += flip * c;
        }
        self.price();
        self.iterate()?;
        Ok(obj.value(&self.assignment()))
    }

    /// Values of the original variables, clamped into their boxes.
    pub fn assignment(&self) -> Vec<f64> {
        (0..self.structural)
            .map(|j| self.value[j].clamp(self.lower[j], self.upper[j]))
            .collect()
    }

    fn price(&mut self) {
        for j in 0..self.cols {
            self.reduced[j] = self.cost[j];
        }
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.cost[b];
            if cb != 0.0 {
                let row = &self.tableau[i * self.cols..(i + 1) * self.cols];
                for j in 0..self.cols {
                    self.reduced[j] -= cb * row[j];
                }
            }
        }
    }

    fn recompute_basic_values(&mut self) {
        // Basic values drift only through accumulated pivots; they are kept
        // consistent incrementally, so this just clamps tiny excursions.
        for &b in &self.basis {
            let v = self.value[b];
            if v < self.lower[b] && v > self.lower[b] - TAU_LP {
                self.value[b] = self.lower[b];
            } else if v > self.upper[b] && v < self.upper[b] + TAU_LP {
                self.value[b] = self.upper[b];
            }
        }
    }

    fn entering(&self) -> Option<(usize, f64)> {
        (0..self.cols).find_map(|j| {
            if self.upper[j] - self.lower[j] <= 0.0 {
                return None;
            }
            match self.status[j] {
                Status::AtLower if self.reduced[j] < -COST_TOL => Some((j, 1.0)),
                Status::AtUpper if self.reduced[j] > COST_TOL => Some((j, -1.0)),
                _ => None,
            }
        })
    }

    fn iterate(&mut self) -> Result<(), LpError> {
        let mut iterations = 0;
        while let Some((enter, dir)) = self.entering() {
            iterations += 1;
            if iterations > self.max_iterations {
                return Err(LpError::IterationLimit(self.max_iterations));
            }
            let cols = self.cols;

            // Ratio test; ties go to the smallest basic variable index.
            let mut step = self.upper[enter] - self.lower[enter];
            let mut leave: Option<(usize, usize)> = None; // (row, basic var)
            for i in 0..self.rows {
                let t = self.tableau[i * cols + enter];
                if t.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                // basic value moves by -dir * t per unit step
                let rate = -dir * t;
                let limit = if rate < 0.0 {
                    (self.value[b] - self.lower[b]) / -rate
                } else {
                    (self.upper[b] - self.value[b]) / rate
                };
                let limit = limit.max(0.0);
                let better = limit < step - 1e-12
                    || (limit <= step + 1e-12 && leave.is_some_and(|(_, lb)| b < lb));
                if better {
                    step = limit;
                    leave = Some((i, b));
                }
            }
            if !step.is_finite() {
                return Err(LpError::Unbounded);
            }

            for i in 0..self.rows {
                let t = self.tableau[i * cols + enter];
                if t != 0.0 {
                    let b = self.basis[i];
                    self.value[b] -= dir * t * step;
                }
            }
            self.value[enter] += dir * step;

            match leave {
                None => {
                    // Bound flip.
                    self.status[enter] = if dir > 0.0 {
                        self.value[enter] = self.upper[enter];
                        Status::AtUpper
                    } else {
                        self.value[enter] = self.lower[enter];
                        Status::AtLower
                    };
                }
                Some((r, b)) => {
                    let rate = -dir * self.tableau[r * cols + enter];
                    if rate < 0.0 {
                        self.value[b] = self.lower[b];
                        self.status[b] = Status::AtLower;
                    } else {
                        self.value[b] = self.upper[b];
                        self.status[b] = Status::AtUpper;
                    }
                    self.pivot(r, enter);
                }
            }
        }
        Ok(())
    }

    fn pivot(&mut self, r: usize, enter: usize) {
        let cols = self.cols;
        let p = self.tableau[r * cols + enter];
        let (before, rest) = self.tableau.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        prow.iter_mut().for_each(|v| *v /= p);
        prow[enter] = 1.0;
        for row in before
            .chunks_exact_mut(cols)
            .chain(after.chunks_exact_mut(cols))
        {
            let f = row[enter];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[enter] = 0.0;
            }
        }
        let f = self.reduced[enter];
        if f != 0.0 {
            for (v, pv) in self.reduced.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            self.reduced[enter] = 0.0;
        }
        self.basis[r] = enter;
        self.status[enter] = Status::Basic;
    }
}
