//! Generator-based subdifferentials and directional derivatives.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::expr::{coordinate, dot, FuncExpr, PwUni};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative slack for membership in an active set.
    pub eps_active: f64,
    /// Max-norm distance under which two generators are merged.
    pub eps_dedup: f64,
    pub max_generators: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_active: 1e-8,
            eps_dedup: 1e-12,
            max_generators: 10_000,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_active > 0.0 && self.eps_dedup > 0.0 && self.max_generators > 0) {
            return Err(Error::InvalidArgument(
                "tolerances must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Convex hull of finitely many vectors, stored deduplicated in lexicographic
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPolytope {
    generators: Vec<Vec<f64>>,
}

impl GeneratorPolytope {
    pub fn new(generators: Vec<Vec<f64>>, eps_dedup: f64) -> Result<Self> {
        let Some(first) = generators.first() else {
            return Err(Error::InvalidArgument(
                "generator set must be nonempty".into(),
            ));
        };
        let n = first.len();
        if let Some(bad) = generators.iter().find(|g| g.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        Ok(Self {
            generators: dedup_sorted(generators, eps_dedup),
        })
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    pub fn dim(&self) -> usize {
        self.generators[0].len()
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Support function `max_ξ ξᵀd`.
    pub fn support(&self, d: &[f64]) -> f64 {
        self.generators
            .iter()
            .map(|g| dot(g, d))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lexicographically smallest generator.
    pub fn lex_first(&self) -> &[f64] {
        &self.generators[0]
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            generators: self
                .generators
                .iter()
                .map(|g| g.iter().map(|v| v * t).collect())
                .collect(),
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn dedup_sorted(mut gens: Vec<Vec<f64>>, eps: f64) -> Vec<Vec<f64>> {
    gens.sort_by(|a, b| lex_cmp(a, b));
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(gens.len());
    for g in gens {
        let dup = kept
            .iter()
            .any(|k| k.iter().zip(&g).all(|(a, b)| (a - b).abs() <= eps));
        if !dup {
            kept.push(g);
        }
    }
    kept
}

/// Indices of the active children or pieces of a node at a point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet(pub Vec<usize>);

impl ActiveSet {
    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Active children of a max node, active pieces of a pwuni node; every child
/// of the other node kinds.
pub fn active_set(node: &FuncExpr, x: &[f64], tol: &Tolerances) -> Result<ActiveSet> {
    match node {
        FuncExpr::Max(children) => {
            let values = children
                .iter()
                .map(|c| c.eval(x))
                .collect::<Result<Vec<_>>>()?;
            Ok(max_active(&values, tol))
        }
        FuncExpr::PwUni(pw) => {
            let t = coordinate(pw.var, x)?;
            Ok(ActiveSet(pw_active(pw, t, tol)))
        }
        FuncExpr::Leaf(p) => {
            crate::error::check_dim(p.dim(), x.len())?;
            Ok(ActiveSet(vec![0]))
        }
        other => Ok(ActiveSet((0..other.children().len()).collect())),
    }
}

fn max_active(values: &[f64], tol: &Tolerances) -> ActiveSet {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = tol.eps_active * (1.0 + top.abs());
    ActiveSet(
        values
            .iter()
            .enumerate()
            .filter(|(_, &v)| top - v <= slack)
            .map(|(i, _)| i)
            .collect(),
    )
}

fn pw_active(pw: &PwUni, t: f64, tol: &Tolerances) -> Vec<usize> {
    let k = pw.piece_index(t);
    let mut active = vec![k];
    if k > 0 && (t - pw.breaks[k - 1]).abs() <= tol.eps_active {
        active.insert(0, k - 1);
    }
    if k < pw.breaks.len() && (pw.breaks[k] - t).abs() <= tol.eps_active {
        active.push(k + 1);
    }
    active
}

/// Generator polytope of the subdifferential (convex trees) or Clarke
/// generalized gradient (regular trees) at `x`.
pub fn subdifferential(expr: &FuncExpr, x: &[f64], tol: &Tolerances) -> Result<GeneratorPolytope> {
    tol.validate()?;
    let gens = generators(expr, x, tol)?;
    GeneratorPolytope::new(gens, tol.eps_dedup)
}

fn generators(expr: &FuncExpr, x: &[f64], tol: &Tolerances) -> Result<Vec<Vec<f64>>> {
    match expr {
        FuncExpr::Leaf(piece) => {
            crate::error::check_dim(piece.dim(), x.len())?;
            Ok(vec![piece.gradient(x)])
        }
        FuncExpr::Max(children) => {
            let active = active_set(expr, x, tol)?;
            let mut out = Vec::new();
            for i in active.0 {
                out.extend(generators(&children[i], x, tol)?);
            }
            Ok(dedup_sorted(out, tol.eps_dedup))
        }
        FuncExpr::Sum(terms) => {
            let mut sets = Vec::with_capacity(terms.len());
            for t in terms {
                sets.push(scale_set(generators(&t.child, x, tol)?, t.weight, tol));
            }
            minkowski(sets, x.len(), tol)
        }
        FuncExpr::Comp(node) => {
            let mut sets = Vec::with_capacity(node.terms.len());
            for t in &node.terms {
                let y = t.child.eval(x)?;
                let slope = t.coef * t.phi.deriv(y)?;
                sets.push(scale_set(generators(&t.child, x, tol)?, slope, tol));
            }
            minkowski(sets, x.len(), tol)
        }
        FuncExpr::PwUni(pw) => {
            let t = coordinate(pw.var, x)?;
            let slopes: Vec<f64> = pw_active(pw, t, tol)
                .into_iter()
                .map(|k| pw.pieces[k].deriv(t))
                .collect();
            let out = slopes
                .into_iter()
                .map(|s| {
                    let mut g = vec![0.0; x.len()];
                    g[pw.var] = s;
                    g
                })
                .collect();
            Ok(dedup_sorted(out, tol.eps_dedup))
        }
    }
}

fn scale_set(set: Vec<Vec<f64>>, w: f64, tol: &Tolerances) -> Vec<Vec<f64>> {
    let scaled = set
        .into_iter()
        .map(|g| g.into_iter().map(|v| v * w).collect())
        .collect();
    dedup_sorted(scaled, tol.eps_dedup)
}

fn minkowski(sets: Vec<Vec<Vec<f64>>>, n: usize, tol: &Tolerances) -> Result<Vec<Vec<f64>>> {
    let count = sets
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
        .unwrap_or(usize::MAX);
    if count > tol.max_generators {
        return Err(Error::GeneratorBlowup {
            count,
            cap: tol.max_generators,
        });
    }
    let mut acc: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for set in sets {
        let mut next = Vec::with_capacity(acc.len() * set.len());
        for a in &acc {
            for g in &set {
                next.push(a.iter().zip(g).map(|(u, v)| u + v).collect());
            }
        }
        acc = dedup_sorted(next, tol.eps_dedup);
    }
    Ok(acc)
}

fn check_direction(d: &[f64], n: usize) -> Result<()> {
    crate::error::check_dim(n, d.len())?;
    crate::error::check_finite(d, "direction")?;
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("direction must be nonzero".into()));
    }
    Ok(())
}

/// One-sided directional derivative `f'(x; d)` by exact recursive calculus.
///
/// On the supported regular trees this equals the support function of the
/// generator polytope; on a pwuni node with a downward kink it stays the true
/// one-sided derivative, which is what the regularity check compares against.
pub fn dir_deriv(expr: &FuncExpr, x: &[f64], d: &[f64], tol: &Tolerances) -> Result<f64> {
    tol.validate()?;
    check_direction(d, x.len())?;
    dd_rec(expr, x, d, tol)
}

fn dd_rec(expr: &FuncExpr, x: &[f64], d: &[f64], tol: &Tolerances) -> Result<f64> {
    match expr {
        FuncExpr::Leaf(piece) => {
            crate::error::check_dim(piece.dim(), x.len())?;
            Ok(dot(&piece.gradient(x), d))
        }
        FuncExpr::Max(children) => {
            let active = active_set(expr, x, tol)?;
            let mut best = f64::NEG_INFINITY;
            for i in active.0 {
                best = best.max(dd_rec(&children[i], x, d, tol)?);
            }
            Ok(best)
        }
        FuncExpr::Sum(terms) => {
            let mut acc = 0.0;
            for t in terms {
                acc += t.weight * dd_rec(&t.child, x, d, tol)?;
            }
            Ok(acc)
        }
        FuncExpr::Comp(node) => {
            let mut acc = 0.0;
            for t in &node.terms {
                let y = t.child.eval(x)?;
                acc += t.coef * t.phi.deriv(y)? * dd_rec(&t.child, x, d, tol)?;
            }
            Ok(acc)
        }
        FuncExpr::PwUni(pw) => {
            let t = coordinate(pw.var, x)?;
            let dv = d[pw.var];
            if dv == 0.0 {
                return Ok(0.0);
            }
            let active = pw_active(pw, t, tol);
            // leftmost active piece governs d < 0, rightmost governs d > 0
            let k = if dv > 0.0 {
                *active.last().expect("nonempty")
            } else {
                active[0]
            };
            Ok(pw.pieces[k].deriv(t) * dv)
        }
    }
}

/// Clarke directional derivative `f°(x; d)` as the support function of the
/// Clarke generator polytope.
pub fn clarke_dir_deriv(expr: &FuncExpr, x: &[f64], d: &[f64], tol: &Tolerances) -> Result<f64> {
    check_direction(d, x.len())?;
    Ok(subdifferential(expr, x, tol)?.support(d))
}
