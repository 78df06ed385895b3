use super::{MethodTag, Problem, Solution, SolveStatus};
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpInstance, LpStatus};
use crate::nsfunc::{FuncExpr, Phi, PwUni, SmoothPiece};

/// Linear form over the LP columns `[x, t_1, t_2, ...]`.
#[derive(Debug, Clone)]
struct LinForm {
    coef: Vec<f64>,
    constant: f64,
}

impl LinForm {
    fn zero() -> Self {
        Self {
            coef: Vec::new(),
            constant: 0.0,
        }
    }

    fn add_scaled(&mut self, other: &LinForm, w: f64) {
        if self.coef.len() < other.coef.len() {
            self.coef.resize(other.coef.len(), 0.0);
        }
        for (a, b) in self.coef.iter_mut().zip(&other.coef) {
            *a += w * b;
        }
        self.constant += w * other.constant;
    }
}

/// Epigraph LP under construction: rows `coef · v ≤ rhs`.
struct Builder {
    n: usize,
    aux: usize,
    rows: Vec<(Vec<f64>, f64)>,
}

impl Builder {
    fn new_aux(&mut self) -> usize {
        self.aux += 1;
        self.n + self.aux - 1
    }

    fn unit(&self, col: usize) -> LinForm {
        let mut coef = vec![0.0; col + 1];
        coef[col] = 1.0;
        LinForm {
            coef,
            constant: 0.0,
        }
    }

    /// `e ≤ t`
    fn push_below(&mut self, e: &LinForm, t: usize) {
        let mut coef = e.coef.clone();
        if coef.len() <= t {
            coef.resize(t + 1, 0.0);
        }
        coef[t] -= 1.0;
        self.rows.push((coef, -e.constant));
    }

    fn form(&mut self, node: &FuncExpr) -> Result<LinForm> {
        match node {
            FuncExpr::Leaf(SmoothPiece::Affine { c, d0 }) => Ok(LinForm {
                coef: c.clone(),
                constant: *d0,
            }),
            FuncExpr::Leaf(SmoothPiece::Quadratic { .. }) => {
                Err(Error::NotPiecewiseLinear("quadratic leaf".into()))
            }
            FuncExpr::Sum(terms) => {
                let mut acc = LinForm::zero();
                for t in terms {
                    let f = self.form(&t.child)?;
                    acc.add_scaled(&f, t.weight);
                }
                Ok(acc)
            }
            FuncExpr::Comp(node) => {
                let mut acc = LinForm::zero();
                acc.constant = node.c0;
                for t in &node.terms {
                    if t.phi != Phi::Identity {
                        return Err(Error::NotPiecewiseLinear(
                            "composition with a nonlinear outer map".into(),
                        ));
                    }
                    let f = self.form(&t.child)?;
                    acc.add_scaled(&f, t.coef);
                }
                Ok(acc)
            }
            FuncExpr::Max(children) => {
                if children.len() == 1 {
                    return self.form(&children[0]);
                }
                let forms = children
                    .iter()
                    .map(|c| self.form(c))
                    .collect::<Result<Vec<_>>>()?;
                let t = self.new_aux();
                for f in &forms {
                    self.push_below(f, t);
                }
                Ok(self.unit(t))
            }
            FuncExpr::PwUni(pw) => self.pw_form(pw),
        }
    }

    fn pw_form(&mut self, pw: &PwUni) -> Result<LinForm> {
        if !pw.is_linear() {
            return Err(Error::NotPiecewiseLinear(
                "pwuni piece of degree > 1".into(),
            ));
        }
        for (a, left, right) in pw.kink_slopes() {
            if left > right + 1e-12 * (1.0 + left.abs()) {
                return Err(Error::NotPiecewiseLinear(format!(
                    "pwuni has a concave kink at {a}"
                )));
            }
        }
        let line = |k: usize| {
            let c = pw.pieces[k].coeffs();
            let mut coef = vec![0.0; pw.var + 1];
            coef[pw.var] = c.get(1).copied().unwrap_or(0.0);
            LinForm {
                coef,
                constant: c[0],
            }
        };
        if pw.pieces.len() == 1 {
            return Ok(line(0));
        }
        // a continuous convex piecewise-linear function is the max of its lines
        let t = self.new_aux();
        for k in 0..pw.pieces.len() {
            let l = line(k);
            self.push_below(&l, t);
        }
        Ok(self.unit(t))
    }
}

/// Exact minimization of a convex piecewise-linear objective: every max node
/// becomes an epigraph variable, the result is solved as one LP.
pub fn solve_pl_exact(p: &Problem) -> Result<Solution> {
    let n = p.dim();
    let mut b = Builder {
        n,
        aux: 0,
        rows: Vec::new(),
    };
    let obj = b.form(p.min_objective())?;
    for c in p.constraints() {
        b.rows.push((c.a.clone(), c.b));
    }

    let ncols = n + b.aux;
    let nrows = b.rows.len();
    let width = ncols + nrows;
    let mut c = vec![0.0; width];
    for (j, v) in obj.coef.iter().enumerate() {
        c[j] = *v;
    }
    let mut a_eq = Vec::with_capacity(nrows);
    let mut b_eq = Vec::with_capacity(nrows);
    for (r, (coef, rhs)) in b.rows.iter().enumerate() {
        let mut row = vec![0.0; width];
        row[..coef.len()].copy_from_slice(coef);
        row[ncols + r] = 1.0;
        a_eq.push(row);
        b_eq.push(*rhs);
    }
    let mut lower = vec![f64::NEG_INFINITY; width];
    let mut upper = vec![f64::INFINITY; width];
    for j in 0..n {
        let bd = p.bound(j);
        lower[j] = bd.lo;
        upper[j] = bd.hi;
    }
    for v in lower.iter_mut().skip(ncols) {
        *v = 0.0;
    }
    let res = solve_lp(&LpInstance::new(c, a_eq, b_eq, lower, upper)?)?;
    match res.status {
        LpStatus::Optimal => {
            let x = res.x.expect("optimal")[..n].to_vec();
            Solution::optimal(p, x, MethodTag::Lp, res.iterations)
        }
        status => {
            let status = match status {
                LpStatus::Infeasible => SolveStatus::Infeasible,
                LpStatus::Unbounded => SolveStatus::Unbounded,
                _ => SolveStatus::IterationLimit,
            };
            Ok(Solution::failed(status, MethodTag::Lp, res.iterations))
        }
    }
}

/// Value of the epigraph LP objective at its optimum, for soundness checks.
#[cfg(test)]
pub(crate) fn epigraph_value(p: &Problem) -> Result<Option<f64>> {
    let sol = solve_pl_exact(p)?;
    Ok(sol.min_value(p))
}
