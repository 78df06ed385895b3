//! Lagrangian multiplier sets for `min f(x) s.t. aᵢᵀx ≤ bᵢ` at a candidate
//! point, from a generator polytope of `∂f(x*)`.
//!
//! The stationarity inclusion is `0 ∈ ∂f(x*) + Σ λᵢ aᵢ` with `λᵢ ≥ 0` and
//! `λᵢ (aᵢᵀx* - bᵢ) = 0`. Every multiplier question reduces to a small LP over
//! convex weights `θ` on the generators and the active multipliers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lp::{solve_lp, LpInstance, LpStatus};
use crate::nsfunc::{dir_deriv, dot, FuncExpr, GeneratorPolytope, Tolerances};

/// Relative threshold for `|aᵀx - b| ≤ tol (1 + |b|)`.
pub const ACTIVITY_TOL: f64 = 1e-8;

/// `aᵀx ≤ b`, i.e. `g(x) = aᵀx - b ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LinearConstraint {
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        let c = Self { a, b };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.b.is_finite() || self.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "non-finite constraint coefficient".into(),
            ));
        }
        if self.a.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidProblem(
                "constraint normal must be nonzero".into(),
            ));
        }
        Ok(())
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) - self.b
    }

    pub fn is_active(&self, x: &[f64]) -> bool {
        self.slack(x).abs() <= ACTIVITY_TOL * (1.0 + self.b.abs())
    }

    /// Negative normal components are accepted but break the resource reading
    /// of the constraint.
    pub fn has_negative_components(&self) -> bool {
        self.a.iter().any(|&v| v < 0.0)
    }
}

pub fn active_flags(x: &[f64], cs: &[LinearConstraint]) -> Vec<bool> {
    cs.iter().map(|c| c.is_active(x)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierInterval {
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
}

impl MultiplierInterval {
    pub const EMPTY: Self = Self {
        lo: f64::NAN,
        hi: f64::NAN,
        empty: true,
    };

    pub fn contains(&self, lambda: f64, tol: f64) -> bool {
        !self.empty && lambda >= self.lo - tol && lambda <= self.hi + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierObjective {
    MinSum,
    MinComponent(usize),
    MaxComponent(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierVector {
    pub lambda: Vec<f64>,
    /// Whether the active normals are linearly independent.
    pub normals_independent: bool,
}

struct InclusionLp {
    ngen: usize,
    /// constraint index for each multiplier column
    cols: Vec<usize>,
    a_eq: Vec<Vec<f64>>,
    b_eq: Vec<f64>,
}

impl InclusionLp {
    /// Rows `Σθ_k v_k + Σ λ_i a_i = 0` and `Σθ = 1`, columns `[θ, λ_active]`.
    fn build(subdiff: &GeneratorPolytope, cs: &[LinearConstraint], active: &[bool]) -> Self {
        let n = subdiff.dim();
        let gens = subdiff.generators();
        let cols: Vec<usize> = (0..cs.len()).filter(|&i| active[i]).collect();
        let width = gens.len() + cols.len();
        let mut a_eq = Vec::with_capacity(n + 1);
        for j in 0..n {
            let mut row = vec![0.0; width];
            for (k, g) in gens.iter().enumerate() {
                row[k] = g[j];
            }
            for (p, &i) in cols.iter().enumerate() {
                row[gens.len() + p] = cs[i].a[j];
            }
            a_eq.push(row);
        }
        let mut simplex = vec![0.0; width];
        simplex[..gens.len()].iter_mut().for_each(|v| *v = 1.0);
        a_eq.push(simplex);
        let mut b_eq = vec![0.0; n];
        b_eq.push(1.0);
        Self {
            ngen: gens.len(),
            cols,
            a_eq,
            b_eq,
        }
    }

    fn solve(&self, objective: Vec<f64>) -> Result<(LpStatus, Option<Vec<f64>>)> {
        let width = objective.len();
        let inst = LpInstance::nonnegative(objective, self.a_eq.clone(), self.b_eq.clone())?;
        debug_assert_eq!(inst.num_vars(), width);
        let res = solve_lp(&inst)?;
        Ok((res.status, res.x))
    }

    fn lambda_objective(&self, weights: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut c = vec![0.0; self.ngen + self.cols.len()];
        for (p, &i) in self.cols.iter().enumerate() {
            c[self.ngen + p] = weights(i);
        }
        c
    }

    fn expand(&self, sol: &[f64], m: usize) -> Vec<f64> {
        let mut lambda = vec![0.0; m];
        for (p, &i) in self.cols.iter().enumerate() {
            lambda[i] = sol[self.ngen + p];
        }
        lambda
    }
}

fn check_constraints(n: usize, cs: &[LinearConstraint]) -> Result<()> {
    for c in cs {
        check_dim(n, c.a.len())?;
    }
    Ok(())
}

/// Multiplier set `{λ ≥ 0 : 0 ∈ ∂f(x*) + λ a}` of a single constraint.
pub fn multiplier_interval(
    subdiff: &GeneratorPolytope,
    c: &LinearConstraint,
    active: bool,
) -> Result<MultiplierInterval> {
    check_dim(subdiff.dim(), c.a.len())?;
    if !active {
        return Ok(MultiplierInterval {
            lo: 0.0,
            hi: 0.0,
            empty: false,
        });
    }
    let cs = std::slice::from_ref(c);
    let lp = InclusionLp::build(subdiff, cs, &[true]);
    let (status, sol) = lp.solve(lp.lambda_objective(|_| 1.0))?;
    match status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Ok(MultiplierInterval::EMPTY),
        other => {
            return Err(Error::InvalidLp(format!(
                "multiplier LP ended with {other:?}"
            )))
        }
    }
    let lo = lp.expand(&sol.expect("optimal"), 1)[0];
    let (status, sol) = lp.solve(lp.lambda_objective(|_| -1.0))?;
    if status != LpStatus::Optimal {
        return Err(Error::InvalidLp(format!(
            "multiplier LP ended with {status:?}"
        )));
    }
    let hi = lp.expand(&sol.expect("optimal"), 1)[0];
    Ok(MultiplierInterval {
        lo,
        hi: hi.max(lo),
        empty: false,
    })
}

/// A multiplier vector for several constraints, selected by `objective`.
/// Inactive constraints receive zero.
pub fn multiplier_vector(
    subdiff: &GeneratorPolytope,
    cs: &[LinearConstraint],
    active: &[bool],
    objective: MultiplierObjective,
) -> Result<MultiplierVector> {
    check_constraints(subdiff.dim(), cs)?;
    check_dim(cs.len(), active.len())?;
    let m = cs.len();
    let lp = InclusionLp::build(subdiff, cs, active);

    let target = match objective {
        MultiplierObjective::MinSum => None,
        MultiplierObjective::MinComponent(i) | MultiplierObjective::MaxComponent(i) => {
            if i >= m {
                return Err(Error::InvalidArgument(format!(
                    "constraint index {i} out of range for {m} constraints"
                )));
            }
            Some(i)
        }
    };
    let c = match objective {
        MultiplierObjective::MinSum => lp.lambda_objective(|_| 1.0),
        MultiplierObjective::MinComponent(_) => {
            lp.lambda_objective(|i| if Some(i) == target { 1.0 } else { 0.0 })
        }
        MultiplierObjective::MaxComponent(_) => {
            lp.lambda_objective(|i| if Some(i) == target { -1.0 } else { 0.0 })
        }
    };
    let (status, sol) = lp.solve(c)?;
    let lambda = match status {
        LpStatus::Optimal => lp.expand(&sol.expect("optimal"), m),
        LpStatus::Infeasible => return Err(Error::NoKktPoint),
        LpStatus::Unbounded => return Err(Error::UnboundedMultipliers),
        LpStatus::IterationLimit => {
            return Err(Error::InvalidLp("multiplier LP hit the pivot limit".into()))
        }
    };
    if lp.cols.len() >= 2 {
        let (status, _) = lp.solve(lp.lambda_objective(|_| -1.0))?;
        if status == LpStatus::Unbounded {
            return Err(Error::UnboundedMultipliers);
        }
    }
    Ok(MultiplierVector {
        lambda,
        normals_independent: normals_independent(cs, active),
    })
}

fn normals_independent(cs: &[LinearConstraint], active: &[bool]) -> bool {
    let rows: Vec<&LinearConstraint> = cs
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(c, _)| c)
        .collect();
    if rows.is_empty() {
        return true;
    }
    let n = rows[0].a.len();
    if rows.len() > n {
        return false;
    }
    let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].a[j]);
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().all(|&s| s > 1e-10 * top.max(1.0))
}

/// `min_{θ ∈ simplex} ‖Σθ_k v_k + Σ λ_i a_i‖_∞`.
pub fn kkt_residual(
    subdiff: &GeneratorPolytope,
    cs: &[LinearConstraint],
    lambda: &[f64],
) -> Result<f64> {
    let n = subdiff.dim();
    check_constraints(n, cs)?;
    check_dim(cs.len(), lambda.len())?;
    let gens = subdiff.generators();
    let k = gens.len();
    let shift: Vec<f64> = (0..n)
        .map(|j| cs.iter().zip(lambda).map(|(c, l)| l * c.a[j]).sum())
        .collect();
    // columns: θ (k), r, s⁺ (n), s⁻ (n)
    let width = k + 1 + 2 * n;
    let mut a_eq = Vec::with_capacity(2 * n + 1);
    let mut b_eq = Vec::with_capacity(2 * n + 1);
    for j in 0..n {
        let mut up = vec![0.0; width];
        let mut down = vec![0.0; width];
        for (p, g) in gens.iter().enumerate() {
            up[p] = g[j];
            down[p] = -g[j];
        }
        up[k] = -1.0;
        down[k] = -1.0;
        up[k + 1 + j] = 1.0;
        down[k + 1 + n + j] = 1.0;
        a_eq.push(up);
        b_eq.push(-shift[j]);
        a_eq.push(down);
        b_eq.push(shift[j]);
    }
    let mut simplex = vec![0.0; width];
    simplex[..k].iter_mut().for_each(|v| *v = 1.0);
    a_eq.push(simplex);
    b_eq.push(1.0);
    let mut c = vec![0.0; width];
    c[k] = 1.0;
    let res = solve_lp(&LpInstance::nonnegative(c, a_eq, b_eq)?)?;
    match (res.status, res.value) {
        (LpStatus::Optimal, Some(v)) => Ok(v.max(0.0)),
        (status, _) => Err(Error::InvalidLp(format!(
            "residual LP ended with {status:?}"
        ))),
    }
}

/// `min_d f'(x*; d) + Σ λ_i a_iᵀd` over unit directions `d`.
pub fn stationarity_inequality_check(
    expr: &FuncExpr,
    xstar: &[f64],
    cs: &[LinearConstraint],
    lambda: &[f64],
    dirs: &[Vec<f64>],
) -> Result<f64> {
    check_constraints(xstar.len(), cs)?;
    check_dim(cs.len(), lambda.len())?;
    if dirs.is_empty() {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    let tol = Tolerances::default();
    let mut worst = f64::INFINITY;
    for d in dirs {
        let norm = dot(d, d).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "directions must be unit vectors".into(),
            ));
        }
        let fd = dir_deriv(expr, xstar, d, &tol)?;
        let lin: f64 = cs.iter().zip(lambda).map(|(c, l)| l * dot(&c.a, d)).sum();
        worst = worst.min(fd + lin);
    }
    Ok(worst)
}

/// `|λ_i (a_iᵀx* - b_i)| ≤ tol (1 + |b_i|)` for every constraint.
pub fn complementary_slackness_check(
    xstar: &[f64],
    cs: &[LinearConstraint],
    lambda: &[f64],
    tol: f64,
) -> Result<bool> {
    check_constraints(xstar.len(), cs)?;
    check_dim(cs.len(), lambda.len())?;
    Ok(cs
        .iter()
        .zip(lambda)
        .all(|(c, l)| (l * c.slack(xstar)).abs() <= tol * (1.0 + c.b.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(gens: &[&[f64]]) -> GeneratorPolytope {
        GeneratorPolytope::new(gens.iter().map(|g| g.to_vec()).collect(), 1e-12).unwrap()
    }

    fn example_one() -> (GeneratorPolytope, LinearConstraint) {
        (
            poly(&[&[1.0], &[2.0]]),
            LinearConstraint::new(vec![-1.0], 0.0).unwrap(),
        )
    }

    #[test]
    fn example_one_interval() {
        let (p, c) = example_one();
        let iv = multiplier_interval(&p, &c, true).unwrap();
        assert!(!iv.empty);
        assert!((iv.lo - 1.0).abs() <= 1e-9 && (iv.hi - 2.0).abs() <= 1e-9);
        let slack = multiplier_interval(&p, &c, false).unwrap();
        assert_eq!((slack.lo, slack.hi), (0.0, 0.0));
    }

    #[test]
    fn singleton_forces_unit_multiplier() {
        let p = poly(&[&[1.0, -2.0]]);
        let c = LinearConstraint::new(vec![-1.0, 2.0], 0.0).unwrap();
        let iv = multiplier_interval(&p, &c, true).unwrap();
        assert!((iv.lo - 1.0).abs() < 1e-12 && (iv.hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_kkt_point_gives_empty_interval() {
        // ∂f = {1}, a = +1: 1 + λ > 0 for all λ ≥ 0
        let p = poly(&[&[1.0]]);
        let c = LinearConstraint::new(vec![1.0], 0.0).unwrap();
        assert!(multiplier_interval(&p, &c, true).unwrap().empty);
        assert!(matches!(
            multiplier_vector(&p, &[c], &[true], MultiplierObjective::MinSum),
            Err(Error::NoKktPoint)
        ));
    }

    #[test]
    fn smooth_objective_unique_vector() {
        let p = poly(&[&[1.0, 1.0]]);
        let cs = vec![
            LinearConstraint::new(vec![-1.0, 0.0], 0.0).unwrap(),
            LinearConstraint::new(vec![0.0, -1.0], 0.0).unwrap(),
        ];
        for obj in [
            MultiplierObjective::MinSum,
            MultiplierObjective::MinComponent(0),
            MultiplierObjective::MaxComponent(1),
        ] {
            let v = multiplier_vector(&p, &cs, &[true, true], obj).unwrap();
            assert!((v.lambda[0] - 1.0).abs() < 1e-12 && (v.lambda[1] - 1.0).abs() < 1e-12);
            assert!(v.normals_independent);
        }
    }

    #[test]
    fn single_active_constraint_matches_interval_lo() {
        let (p, c) = example_one();
        let other = LinearConstraint::new(vec![1.0], 5.0).unwrap();
        let v = multiplier_vector(&p, &[c, other], &[true, false], MultiplierObjective::MinSum)
            .unwrap();
        assert!((v.lambda[0] - 1.0).abs() < 1e-12);
        assert_eq!(v.lambda[1], 0.0);
    }

    #[test]
    fn opposing_normals_are_unbounded() {
        // x ≤ 0 and -x ≤ 0 both active: λ1 - λ2 = -ξ has unbounded solutions
        let p = poly(&[&[1.0]]);
        let cs = vec![
            LinearConstraint::new(vec![1.0], 0.0).unwrap(),
            LinearConstraint::new(vec![-1.0], 0.0).unwrap(),
        ];
        assert!(matches!(
            multiplier_vector(&p, &cs, &[true, true], MultiplierObjective::MinSum),
            Err(Error::UnboundedMultipliers)
        ));
    }

    #[test]
    fn residual_example_one() {
        let (p, c) = example_one();
        let cs = [c];
        assert!(kkt_residual(&p, &cs, &[1.5]).unwrap() <= 1e-12);
        assert!((kkt_residual(&p, &cs, &[3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((kkt_residual(&p, &cs, &[0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(kkt_residual(&p, &cs, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn stationarity_example_one() {
        let f = FuncExpr::max(vec![
            FuncExpr::affine(vec![1.0], 0.0).unwrap(),
            FuncExpr::affine(vec![2.0], 0.0).unwrap(),
        ])
        .unwrap();
        let cs = [LinearConstraint::new(vec![-1.0], 0.0).unwrap()];
        let dirs = vec![vec![1.0], vec![-1.0]];
        let v = stationarity_inequality_check(&f, &[0.0], &cs, &[1.0], &dirs).unwrap();
        assert_eq!(v, 0.0);
        // λ = 2.5 lies above the interval: d = +1 gives 2 - 2.5 < 0
        let v = stationarity_inequality_check(&f, &[0.0], &cs, &[2.5], &dirs).unwrap();
        assert!(v < 0.0);
        assert!(stationarity_inequality_check(&f, &[0.0], &cs, &[1.0], &[vec![2.0]]).is_err());
    }

    #[test]
    fn stationarity_smooth_unconstrained() {
        let f = FuncExpr::quadratic(vec![vec![1.0]], vec![0.0], 0.0).unwrap();
        let v =
            stationarity_inequality_check(&f, &[0.0], &[], &[], &[vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn complementary_slackness_cases() {
        let cs = [LinearConstraint::new(vec![1.0], 1.0).unwrap()];
        assert!(complementary_slackness_check(&[0.0], &cs, &[0.0], 1e-8).unwrap());
        assert!(complementary_slackness_check(&[1.0], &cs, &[7.0], 1e-8).unwrap());
        assert!(!complementary_slackness_check(&[0.0], &cs, &[0.5], 1e-8).unwrap());
    }

    #[test]
    fn constraint_validation() {
        assert!(LinearConstraint::new(vec![0.0, 0.0], 1.0).is_err());
        let c = LinearConstraint::new(vec![-1.0], 0.0).unwrap();
        assert!(c.has_negative_components());
        assert!(c.is_active(&[1e-12]));
        assert!(!c.is_active(&[-1e-3]));
    }
}
