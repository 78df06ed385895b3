//! Linearly constrained minimization of expression-tree objectives.

mod epigraph;
mod oracle;
mod subgrad;

use serde::{Deserialize, Serialize};

pub use epigraph::solve_pl_exact;
pub use oracle::{solve_oracle_grid, GridSpec, MAX_GRID_POINTS};
pub use subgrad::{project, solve_subgradient, SubgradParams};

use crate::error::{check_dim, Error, Result};
use crate::kkt::LinearConstraint;
use crate::nsfunc::FuncExpr;

/// Feasibility slack accepted for returned points.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Min,
    Max,
}

/// Variable box; either side may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    n: usize,
    objective: FuncExpr,
    sense: Sense,
    constraints: Vec<LinearConstraint>,
    bounds: Option<Vec<Bound>>,
    min_form: FuncExpr,
}

/// Where a constraint handed to the multiplier computation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum ConstraintOrigin {
    Constraint(usize),
    Lower(usize),
    Upper(usize),
}

impl Problem {
    pub fn new(
        n: usize,
        objective: FuncExpr,
        sense: Sense,
        constraints: Vec<LinearConstraint>,
        bounds: Option<Vec<Bound>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidProblem(
                "problem needs at least one variable".into(),
            ));
        }
        objective.validate(n)?;
        for c in &constraints {
            c.validate()?;
            check_dim(n, c.a.len())?;
        }
        if let Some(bs) = &bounds {
            check_dim(n, bs.len())?;
            for (j, b) in bs.iter().enumerate() {
                if b.lo.is_nan() || b.hi.is_nan() || b.lo > b.hi {
                    return Err(Error::InvalidProblem(format!("bad bounds on variable {j}")));
                }
                if b.lo == f64::INFINITY || b.hi == f64::NEG_INFINITY {
                    return Err(Error::InvalidProblem(format!("bad bounds on variable {j}")));
                }
            }
        }
        let min_form = match sense {
            Sense::Min => objective.clone(),
            Sense::Max => objective.negated()?,
        };
        Ok(Self {
            n,
            objective,
            sense,
            constraints,
            bounds,
            min_form,
        })
    }

    pub fn minimize(
        n: usize,
        objective: FuncExpr,
        constraints: Vec<LinearConstraint>,
    ) -> Result<Self> {
        Self::new(n, objective, Sense::Min, constraints, None)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn objective(&self) -> &FuncExpr {
        &self.objective
    }

    /// The objective as minimized: negated for maximization problems.
    pub fn min_objective(&self) -> &FuncExpr {
        &self.min_form
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn bounds(&self) -> Option<&[Bound]> {
        self.bounds.as_deref()
    }

    pub fn bound(&self, j: usize) -> Bound {
        self.bounds.as_ref().map_or(Bound::FREE, |b| b[j])
    }

    /// Same problem with `b_i` replaced.
    pub fn with_rhs(&self, i: usize, b: f64) -> Result<Self> {
        if i >= self.constraints.len() {
            return Err(Error::InvalidArgument(format!(
                "constraint index {i} out of range for {} constraints",
                self.constraints.len()
            )));
        }
        let mut p = self.clone();
        p.constraints[i].b = b;
        Ok(p)
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for c in &self.constraints {
            v = v.max(c.slack(x));
        }
        for (j, &xj) in x.iter().enumerate() {
            let b = self.bound(j);
            v = v.max(b.lo - xj).max(xj - b.hi);
        }
        v
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.n && self.max_violation(x) <= tol
    }

    /// Objective value in the caller's sense.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.objective.eval(x)
    }

    /// Constraints plus finite variable bounds written as `±x_j ≤ ±bound`.
    pub fn all_constraints(&self) -> (Vec<LinearConstraint>, Vec<ConstraintOrigin>) {
        let mut cs = self.constraints.clone();
        let mut origins: Vec<ConstraintOrigin> =
            (0..cs.len()).map(ConstraintOrigin::Constraint).collect();
        for j in 0..self.n {
            let b = self.bound(j);
            if b.lo.is_finite() {
                let mut a = vec![0.0; self.n];
                a[j] = -1.0;
                cs.push(LinearConstraint { a, b: -b.lo });
                origins.push(ConstraintOrigin::Lower(j));
            }
            if b.hi.is_finite() {
                let mut a = vec![0.0; self.n];
                a[j] = 1.0;
                cs.push(LinearConstraint { a, b: b.hi });
                origins.push(ConstraintOrigin::Upper(j));
            }
        }
        (cs, origins)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Lp,
    Subgrad,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Option<Vec<f64>>,
    /// Objective value at `x` in the problem's own sense.
    pub value: Option<f64>,
    /// Indices of constraints active at `x`.
    pub active: Vec<usize>,
    pub method: MethodTag,
    pub iterations: usize,
}

impl Solution {
    pub(crate) fn optimal(
        p: &Problem,
        x: Vec<f64>,
        method: MethodTag,
        iterations: usize,
    ) -> Result<Self> {
        let value = p.value(&x)?;
        let active = p
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_active(&x))
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            status: SolveStatus::Optimal,
            x: Some(x),
            value: Some(value),
            active,
            method,
            iterations,
        })
    }

    pub(crate) fn failed(status: SolveStatus, method: MethodTag, iterations: usize) -> Self {
        Self {
            status,
            x: None,
            value: None,
            active: Vec::new(),
            method,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Optimal value of the minimization form (negated for max problems).
    pub fn min_value(&self, p: &Problem) -> Option<f64> {
        self.value.map(|v| match p.sense() {
            Sense::Min => v,
            Sense::Max => -v,
        })
    }
}

/// Solver selection with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Lp,
    Subgradient(SubgradParams),
    Grid(GridSpec),
}

impl Method {
    pub fn tag(&self) -> MethodTag {
        match self {
            Method::Lp => MethodTag::Lp,
            Method::Subgradient(_) => MethodTag::Subgrad,
            Method::Grid(_) => MethodTag::Grid,
        }
    }
}

pub fn solve(p: &Problem, method: &Method) -> Result<Solution> {
    match method {
        Method::Lp => solve_pl_exact(p),
        Method::Subgradient(params) => solve_subgradient(p, params),
        Method::Grid(grid) => solve_oracle_grid(p, grid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_sense_negates_objective() {
        let u = FuncExpr::pwuni(0, vec![1.0], vec![vec![0.0, 4.0], vec![2.0, 2.0]]).unwrap();
        let p = Problem::new(1, u, Sense::Max, vec![], None).unwrap();
        assert_eq!(p.min_objective().eval(&[2.0]).unwrap(), -6.0);
        let m = FuncExpr::max(vec![FuncExpr::affine(vec![1.0], 0.0).unwrap()]).unwrap();
        assert!(Problem::new(1, m, Sense::Max, vec![], None).is_err());
    }

    #[test]
    fn bounds_become_constraints() {
        let f = FuncExpr::affine(vec![1.0, 1.0], 0.0).unwrap();
        let p = Problem::new(
            2,
            f,
            Sense::Min,
            vec![LinearConstraint::new(vec![1.0, 1.0], 1.0).unwrap()],
            Some(vec![Bound { lo: 0.0, hi: 2.0 }, Bound::FREE]),
        )
        .unwrap();
        let (cs, origins) = p.all_constraints();
        assert_eq!(cs.len(), 3);
        assert_eq!(
            origins,
            vec![
                ConstraintOrigin::Constraint(0),
                ConstraintOrigin::Lower(0),
                ConstraintOrigin::Upper(0)
            ]
        );
        assert!(p.is_feasible(&[0.5, 0.5], 0.0));
        assert!(!p.is_feasible(&[-0.5, 0.5], 1e-9));
        assert!(p.with_rhs(3, 0.0).is_err());
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let f = FuncExpr::affine(vec![1.0], 0.0).unwrap();
        assert!(Problem::minimize(2, f.clone(), vec![]).is_err());
        assert!(Problem::minimize(
            1,
            f,
            vec![LinearConstraint::new(vec![1.0, 0.0], 0.0).unwrap()]
        )
        .is_err());
    }
}
