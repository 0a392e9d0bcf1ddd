//! Dense bounded-variable primal simplex for small linear programs.
//!
//! Problems have the form `min c.x` subject to `lower <= x <= upper` and
//! rows `a.x {<=, >=, =} b`. Every lower bound must be finite; upper bounds
//! may be infinite. Bland's rule picks the entering variable; the leaving
//! variable comes from a Harris ratio test, which prefers large pivots so
//! that nearly parallel rows do not wreck the tableau. Pivots are
//! deterministic and capped in number.
//!
//! The solver returns the row duals `dv/db`, which the stage solver turns
//! into subgradients with respect to the incoming state.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sensitivity of the optimal value to each row's right-hand side:
    /// nonnegative for `>=` rows, nonpositive for `<=` rows.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpError {
    Infeasible,
    Unbounded,
    IterationLimit,
    /// A variable has an infinite lower bound or `lower > upper`.
    BadBounds,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
/// Bound violation the Harris ratio test may accept on basic variables.
const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    m: usize,
    /// Total columns: structurals, slacks, artificials.
    cols: usize,
    art_start: usize,
    a: Vec<f64>,
    beta: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.cols..(i + 1) * self.cols];
                for (dj, aij) in d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
        d
    }

    /// Runs simplex iterations for `cost` until optimal.
    fn optimize(&mut self, cost: &[f64], eligible: usize, max_pivots: usize) -> Result<(), LpError> {
        loop {
            let d = self.reduced_costs(cost);
            let mut entering = None;
            for j in 0..eligible {
                match self.status[j] {
                    Status::AtLower if self.upper[j] > 0.0 && d[j] < -COST_TOL => {
                        entering = Some((j, 1.0));
                        break;
                    }
                    Status::AtUpper if d[j] > COST_TOL => {
                        entering = Some((j, -1.0));
                        break;
                    }
                    _ => {}
                }
            }
            let Some((j, dir)) = entering else {
                return Ok(());
            };
            if self.pivots >= max_pivots {
                return Err(LpError::IterationLimit);
            }

            // Harris ratio test: find the longest step that keeps every basic
            // variable within a small tolerance of its bounds, then take the
            // largest pivot among rows blocking within that step. Ties go to
            // the smallest basic variable index.
            let ratio = |i: usize, slack: f64| -> Option<(f64, bool, f64)> {
                let alpha = self.at(i, j) * dir;
                let b = self.basis[i];
                if alpha > PIVOT_TOL {
                    Some(((self.beta[i].max(0.0) + slack) / alpha, false, alpha))
                } else if alpha < -PIVOT_TOL && self.upper[b].is_finite() {
                    Some((((self.upper[b] - self.beta[i]).max(0.0) + slack) / -alpha, true, -alpha))
                } else {
                    None
                }
            };
            let limit = (0..self.m)
                .filter_map(|i| ratio(i, FEAS_TOL))
                .map(|(r, _, _)| r)
                .fold(f64::INFINITY, f64::min);
            let mut leave: Option<(usize, bool)> = None;
            let mut best = f64::INFINITY;
            let mut best_pivot = 0.0;
            let mut best_var = usize::MAX;
            for i in 0..self.m {
                let Some((r, to_upper, pivot)) = ratio(i, 0.0) else {
                    continue;
                };
                if r > limit {
                    continue;
                }
                let b = self.basis[i];
                if pivot > best_pivot || (pivot == best_pivot && b < best_var) {
                    best = r;
                    best_pivot = pivot;
                    best_var = b;
                    leave = Some((i, to_upper));
                }
            }
            let mut step = best;
            if self.upper[j] < best - 1e-12 * (1.0 + best.abs().min(self.upper[j])) {
                step = self.upper[j];
                leave = None;
            }
            if !step.is_finite() {
                return Err(LpError::Unbounded);
            }
            self.pivots += 1;

            for i in 0..self.m {
                let aij = self.at(i, j);
                if aij != 0.0 {
                    self.beta[i] -= dir * step * aij;
                }
            }
            let entering_value = match self.status[j] {
                Status::AtLower => step,
                _ => self.upper[j] - step,
            };

            match leave {
                None => {
                    self.status[j] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                }
                Some((r, to_upper)) => {
                    let leaving = self.basis[r];
                    self.status[leaving] = if to_upper { Status::AtUpper } else { Status::AtLower };
                    self.status[j] = Status::Basic;
                    self.basis[r] = j;
                    self.pivot(r, j);
                    self.beta[r] = entering_value;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.at(r, j);
        for k in 0..cols {
            self.a[r * cols + k] /= p;
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.at(i, j);
            if f == 0.0 {
                continue;
            }
            for k in 0..cols {
                let v = self.a[r * cols + k];
                if v != 0.0 {
                    self.a[i * cols + k] -= f * v;
                }
            }
            self.a[i * cols + j] = 0.0;
        }
    }

    fn value(&self, j: usize) -> f64 {
        match self.status[j] {
            Status::AtLower => 0.0,
            Status::AtUpper => self.upper[j],
            Status::Basic => {
                let i = self.basis.iter().position(|&b| b == j).unwrap_or(0);
                self.beta[i]
            }
        }
    }
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            objective,
            lower,
            upper,
            rows: Vec::new(),
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let n = self.objective.len();
        let m = self.rows.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::BadBounds);
        }
        for j in 0..n {
            if !self.lower[j].is_finite() || self.upper[j] < self.lower[j] {
                return Err(LpError::BadBounds);
            }
        }
        let cols = n + 2 * m;
        let art_start = n + m;
        let mut upper = vec![f64::INFINITY; cols];
        for j in 0..n {
            upper[j] = self.upper[j] - self.lower[j];
        }
        let mut a = vec![0.0; m * cols];
        let mut beta = vec![0.0; m];
        let mut flip = vec![1.0; m];
        for (i, row) in self.rows.iter().enumerate() {
            let shift: f64 = row.coeffs.iter().zip(&self.lower).map(|(c, l)| c * l).sum();
            let mut rhs = row.rhs - shift;
            let slack_coef = match row.kind {
                RowKind::Le => 1.0,
                RowKind::Ge => -1.0,
                RowKind::Eq => {
                    upper[n + i] = 0.0;
                    1.0
                }
            };
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            rhs *= sign;
            flip[i] = sign;
            for (j, c) in row.coeffs.iter().enumerate() {
                a[i * cols + j] = sign * c;
            }
            a[i * cols + n + i] = sign * slack_coef;
            a[i * cols + art_start + i] = 1.0;
            beta[i] = rhs;
        }
        let mut status = vec![Status::AtLower; cols];
        let basis: Vec<usize> = (0..m).map(|i| art_start + i).collect();
        for &b in &basis {
            status[b] = Status::Basic;
        }
        let mut tab = Tableau {
            m,
            cols,
            art_start,
            a,
            beta,
            upper,
            basis,
            status,
            pivots: 0,
        };
        let max_pivots = 100 * (cols + 10);

        let mut phase1 = vec![0.0; cols];
        phase1[art_start..].iter_mut().for_each(|c| *c = 1.0);
        tab.optimize(&phase1, cols, max_pivots)?;
        let infeasibility: f64 = (art_start..cols).map(|j| tab.value(j)).sum();
        let scale = 1.0 + self.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeasibility > 1e-9 * scale {
            return Err(LpError::Infeasible);
        }
        for j in art_start..cols {
            tab.upper[j] = 0.0;
        }

        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(&self.objective);
        tab.optimize(&cost, art_start, max_pivots)?;

        let x: Vec<f64> = (0..n)
            .map(|j| (self.lower[j] + tab.value(j)).clamp(self.lower[j], self.upper[j]))
            .collect();
        let objective = x.iter().zip(&self.objective).map(|(x, c)| x * c).sum();
        // Artificial columns hold B^-1, so y = c_B B^-1.
        let duals = (0..m)
            .map(|r| {
                let y: f64 = (0..m)
                    .map(|i| cost[tab.basis[i]] * tab.at(i, tab.art_start + r))
                    .sum();
                flip[r] * y
            })
            .collect();
        Ok(LpSolution {
            x,
            objective,
            duals,
            pivots: tab.pivots,
        })
    }
}
