//! Dense two-phase simplex for small linear programs
//! `min cᵀx  s.t.  A x = b,  lower ≤ x ≤ upper`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const OPTIMALITY_TOL: f64 = 1e-9;
pub const DEFAULT_PIVOT_LIMIT: usize = 100_000;
/// Consecutive non-improving pivots after which Bland's rule takes over.
pub const BLAND_AFTER: usize = 500;

const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LpInstance {
    pub c: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpInstance {
    pub fn new(
        c: Vec<f64>,
        a_eq: Vec<Vec<f64>>,
        b_eq: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let inst = Self {
            c,
            a_eq,
            b_eq,
            lower,
            upper,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Variables default to `x ≥ 0`.
    pub fn nonnegative(c: Vec<f64>, a_eq: Vec<Vec<f64>>, b_eq: Vec<f64>) -> Result<Self> {
        let n = c.len();
        Self::new(c, a_eq, b_eq, vec![0.0; n], vec![f64::INFINITY; n])
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::InvalidLp(
                "bound vectors do not match the variable count".into(),
            ));
        }
        if self.a_eq.len() != self.b_eq.len() {
            return Err(Error::InvalidLp(
                "row count does not match rhs length".into(),
            ));
        }
        if self.a_eq.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidLp(
                "row length does not match the variable count".into(),
            ));
        }
        let finite = self.c.iter().chain(self.b_eq.iter()).all(|v| v.is_finite())
            && self.a_eq.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidLp("non-finite coefficient".into()));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::InvalidLp(format!("invalid bounds on variable {j}")));
            }
            if lo > hi {
                return Err(Error::InvalidLp(format!("lower > upper on variable {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub iterations: usize,
}

pub fn solve_lp(inst: &LpInstance) -> Result<LpResult> {
    solve_lp_with_limit(inst, DEFAULT_PIVOT_LIMIT)
}

pub fn solve_lp_with_limit(inst: &LpInstance, pivot_limit: usize) -> Result<LpResult> {
    inst.validate()?;
    let std = StandardForm::build(inst);
    let mut tab = Tableau::phase_one(&std);
    let mut iters = 0usize;

    let all_structural = |j: usize| j < std.ncols;
    match tab.run(&all_structural, pivot_limit, &mut iters) {
        RunOutcome::IterationLimit => return Ok(unfinished(LpStatus::IterationLimit, iters)),
        // phase one is bounded below by zero
        RunOutcome::Unbounded | RunOutcome::Optimal => {}
    }
    let bscale = 1.0 + std.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if tab.objective() > FEASIBILITY_TOL * bscale {
        return Ok(unfinished(LpStatus::Infeasible, iters));
    }
    tab.drive_out_artificials(std.ncols);
    tab.set_costs(&std.cost);

    match tab.run(
        &all_structural,
        pivot_limit.saturating_sub(iters),
        &mut iters,
    ) {
        RunOutcome::IterationLimit => return Ok(unfinished(LpStatus::IterationLimit, iters)),
        RunOutcome::Unbounded => return Ok(unfinished(LpStatus::Unbounded, iters)),
        RunOutcome::Optimal => {}
    }

    let y = std.refine(&tab.basis, &tab.basic_values());
    let x = std.recover(&y);
    let value = inst.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpResult {
        status: LpStatus::Optimal,
        x: Some(x),
        value: Some(value),
        iterations: iters,
    })
}

fn unfinished(status: LpStatus, iterations: usize) -> LpResult {
    LpResult {
        status,
        x: None,
        value: None,
        iterations,
    }
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + y
    Shift { col: usize, offset: f64 },
    /// x = offset - y
    Flip { col: usize, offset: f64 },
    /// x = y⁺ - y⁻
    Split { pos: usize, neg: usize },
}

/// `min costᵀy  s.t.  A y = b,  y ≥ 0,  b ≥ 0`.
struct StandardForm {
    ncols: usize,
    rows: Vec<Vec<f64>>,
    b: Vec<f64>,
    cost: Vec<f64>,
    maps: Vec<VarMap>,
}

impl StandardForm {
    fn build(inst: &LpInstance) -> Self {
        let n = inst.num_vars();
        let mut maps = Vec::with_capacity(n);
        let mut ncols = 0usize;
        // (column of the shifted variable, width of its box)
        let mut boxed = Vec::new();
        for j in 0..n {
            let (lo, hi) = (inst.lower[j], inst.upper[j]);
            let map = if lo.is_finite() {
                let col = ncols;
                ncols += 1;
                if hi.is_finite() {
                    boxed.push((col, hi - lo));
                }
                VarMap::Shift { col, offset: lo }
            } else if hi.is_finite() {
                let col = ncols;
                ncols += 1;
                VarMap::Flip { col, offset: hi }
            } else {
                let pos = ncols;
                ncols += 2;
                VarMap::Split { pos, neg: pos + 1 }
            };
            maps.push(map);
        }
        let nslack = boxed.len();
        let total = ncols + nslack;

        let mut cost = vec![0.0; total];
        for (j, map) in maps.iter().enumerate() {
            match *map {
                VarMap::Shift { col, .. } => cost[col] += inst.c[j],
                VarMap::Flip { col, .. } => cost[col] -= inst.c[j],
                VarMap::Split { pos, neg } => {
                    cost[pos] += inst.c[j];
                    cost[neg] -= inst.c[j];
                }
            }
        }

        let mut rows = Vec::with_capacity(inst.a_eq.len() + nslack);
        let mut b = Vec::with_capacity(inst.a_eq.len() + nslack);
        for (arow, &bi) in inst.a_eq.iter().zip(&inst.b_eq) {
            let mut row = vec![0.0; total];
            let mut rhs = bi;
            for (j, map) in maps.iter().enumerate() {
                let a = arow[j];
                if a == 0.0 {
                    continue;
                }
                match *map {
                    VarMap::Shift { col, offset } => {
                        row[col] += a;
                        rhs -= a * offset;
                    }
                    VarMap::Flip { col, offset } => {
                        row[col] -= a;
                        rhs -= a * offset;
                    }
                    VarMap::Split { pos, neg } => {
                        row[pos] += a;
                        row[neg] -= a;
                    }
                }
            }
            rows.push(row);
            b.push(rhs);
        }
        for (k, &(col, width)) in boxed.iter().enumerate() {
            let mut row = vec![0.0; total];
            row[col] = 1.0;
            row[ncols + k] = 1.0;
            rows.push(row);
            b.push(width);
        }
        for (row, rhs) in rows.iter_mut().zip(b.iter_mut()) {
            if *rhs < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
                *rhs = -*rhs;
            }
        }
        Self {
            ncols: total,
            rows,
            b,
            cost,
            maps,
        }
    }

    /// Re-solves `B y_B = b` for the final basis to strip accumulated pivot
    /// round-off. Artificial columns (index ≥ ncols) are unit vectors.
    fn refine(&self, basis: &[usize], tableau_values: &[f64]) -> Vec<f64> {
        let m = self.rows.len();
        let mut y = vec![0.0; self.ncols];
        if m == 0 {
            return y;
        }
        let bmat = DMatrix::from_fn(m, m, |i, k| {
            let col = basis[k];
            if col < self.ncols {
                self.rows[i][col]
            } else if col - self.ncols == i {
                1.0
            } else {
                0.0
            }
        });
        let rhs = DVector::from_column_slice(&self.b);
        let solved = bmat.lu().solve(&rhs);
        let values: Vec<f64> = match solved {
            Some(v) if v.iter().all(|x| x.is_finite()) => v.iter().copied().collect(),
            _ => tableau_values.to_vec(),
        };
        for (k, &col) in basis.iter().enumerate() {
            if col < self.ncols {
                y[col] = values[k].max(0.0);
            }
        }
        y
    }

    fn recover(&self, y: &[f64]) -> Vec<f64> {
        self.maps
            .iter()
            .map(|map| match *map {
                VarMap::Shift { col, offset } => offset + y[col],
                VarMap::Flip { col, offset } => offset - y[col],
                VarMap::Split { pos, neg } => y[pos] - y[neg],
            })
            .collect()
    }
}

enum RunOutcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

/// Row-major tableau with `m` constraint rows and the reduced-cost row last.
/// Columns: structural `0..ncols`, artificial `ncols..ncols+m`, rhs last.
struct Tableau {
    m: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn phase_one(std: &StandardForm) -> Self {
        let m = std.rows.len();
        let width = std.ncols + m + 1;
        let mut data = vec![0.0; (m + 1) * width];
        for i in 0..m {
            let row = &mut data[i * width..(i + 1) * width];
            row[..std.ncols].copy_from_slice(&std.rows[i]);
            row[std.ncols + i] = 1.0;
            row[width - 1] = std.b[i];
        }
        // reduced costs for cost 1 on every artificial
        for j in 0..std.ncols {
            data[m * width + j] = -(0..m).map(|i| std.rows[i][j]).sum::<f64>();
        }
        data[m * width + width - 1] = -std.b.iter().sum::<f64>();
        Self {
            m,
            width,
            data,
            basis: (0..m).map(|i| std.ncols + i).collect(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn objective(&self) -> f64 {
        -self.rhs(self.m)
    }

    fn basic_values(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.rhs(i)).collect()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.at(r, c);
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[i * w..(i + 1) * w];
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            row[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let w = self.width;
        let m = self.m;
        let mut zrow = vec![0.0; w];
        zrow[..cost.len()].copy_from_slice(cost);
        for i in 0..m {
            let cb = cost.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb == 0.0 {
                continue;
            }
            for j in 0..w {
                zrow[j] -= cb * self.at(i, j);
            }
        }
        self.data[m * w..(m + 1) * w].copy_from_slice(&zrow);
    }

    fn drive_out_artificials(&mut self, ncols: usize) {
        for r in 0..self.m {
            if self.basis[r] < ncols {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..ncols {
                let a = self.at(r, j).abs();
                if a > PIVOT_TOL && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            // a row with no structural entry is redundant; its artificial
            // stays basic at zero and is never chosen to leave
            if let Some((j, _)) = best {
                self.pivot(r, j);
            }
        }
    }

    fn run(
        &mut self,
        allowed: &dyn Fn(usize) -> bool,
        limit: usize,
        iters: &mut usize,
    ) -> RunOutcome {
        let mut stalled = 0usize;
        let mut taken = 0usize;
        loop {
            let bland = stalled >= BLAND_AFTER;
            let Some(enter) = self.entering(allowed, bland) else {
                return RunOutcome::Optimal;
            };
            let Some(leave) = self.leaving(enter) else {
                return RunOutcome::Unbounded;
            };
            if taken >= limit {
                return RunOutcome::IterationLimit;
            }
            let before = self.objective();
            self.pivot(leave, enter);
            taken += 1;
            *iters += 1;
            let after = self.objective();
            if after < before - 1e-12 * (1.0 + before.abs()) {
                stalled = 0;
            } else {
                stalled += 1;
            }
        }
    }

    fn entering(&self, allowed: &dyn Fn(usize) -> bool, bland: bool) -> Option<usize> {
        let zr = self.m;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.width - 1 {
            if !allowed(j) || self.basis.contains(&j) {
                continue;
            }
            let r = self.at(zr, j);
            if r < -OPTIMALITY_TOL {
                if bland {
                    return Some(j);
                }
                if best.is_none_or(|(_, b)| r < b) {
                    best = Some((j, r));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    fn leaving(&self, enter: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, enter);
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            best = match best {
                None => Some((i, ratio)),
                Some((bi, br)) => {
                    let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                    if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                        Some((i, ratio))
                    } else {
                        Some((bi, br))
                    }
                }
            };
        }
        best.map(|(i, _)| i)
    }
}
