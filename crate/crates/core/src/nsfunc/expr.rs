//! Expression trees for max-of-smooth, monotone compositions of maxima and
//! univariate piecewise-smooth functions.

use nalgebra::{DMatrix, SymmetricEigen};

use super::poly::Poly;
use crate::error::{check_dim, Error, Result};

const CONTINUITY_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;

/// A smooth leaf: affine `cᵀx + d0` or quadratic `½xᵀQx + cᵀx + d0`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothPiece {
    Affine {
        c: Vec<f64>,
        d0: f64,
    },
    Quadratic {
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
        d0: f64,
    },
}

impl SmoothPiece {
    pub fn affine(c: Vec<f64>, d0: f64) -> Result<Self> {
        let piece = SmoothPiece::Affine { c, d0 };
        piece.validate()?;
        Ok(piece)
    }

    pub fn quadratic(q: Vec<Vec<f64>>, c: Vec<f64>, d0: f64) -> Result<Self> {
        let piece = SmoothPiece::Quadratic { q, c, d0 };
        piece.validate()?;
        Ok(piece)
    }

    fn validate(&self) -> Result<()> {
        match self {
            SmoothPiece::Affine { c, d0 } => {
                if c.is_empty() {
                    return Err(Error::InvalidExpr("affine leaf with empty c".into()));
                }
                if !d0.is_finite() || c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidExpr("non-finite affine coefficient".into()));
                }
            }
            SmoothPiece::Quadratic { q, c, d0 } => {
                let n = c.len();
                if n == 0 {
                    return Err(Error::InvalidExpr("quadratic leaf with empty c".into()));
                }
                if q.len() != n || q.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidExpr(format!("Q must be {n}x{n}")));
                }
                if !d0.is_finite()
                    || c.iter().any(|v| !v.is_finite())
                    || q.iter().flatten().any(|v| !v.is_finite())
                {
                    return Err(Error::InvalidExpr(
                        "non-finite quadratic coefficient".into(),
                    ));
                }
                for i in 0..n {
                    for j in 0..i {
                        let scale = 1.0 + q[i][j].abs().max(q[j][i].abs());
                        if (q[i][j] - q[j][i]).abs() > SYMMETRY_TOL * scale {
                            return Err(Error::InvalidExpr("Q is not symmetric".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            SmoothPiece::Affine { c, .. } | SmoothPiece::Quadratic { c, .. } => c.len(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SmoothPiece::Affine { c, d0 } => dot(c, x) + d0,
            SmoothPiece::Quadratic { q, c, d0 } => {
                let quad: f64 = q.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
                0.5 * quad + dot(c, x) + d0
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SmoothPiece::Affine { c, .. } => c.clone(),
            SmoothPiece::Quadratic { q, c, .. } => {
                q.iter().zip(c).map(|(row, ci)| dot(row, x) + ci).collect()
            }
        }
    }

    pub fn negated(&self) -> Self {
        match self {
            SmoothPiece::Affine { c, d0 } => SmoothPiece::Affine {
                c: c.iter().map(|v| -v).collect(),
                d0: -d0,
            },
            SmoothPiece::Quadratic { q, c, d0 } => SmoothPiece::Quadratic {
                q: q.iter()
                    .map(|row| row.iter().map(|v| -v).collect())
                    .collect(),
                c: c.iter().map(|v| -v).collect(),
                d0: -d0,
            },
        }
    }

    /// Smallest eigenvalue of Q (0 for affine leaves).
    pub fn min_curvature(&self) -> f64 {
        match self {
            SmoothPiece::Affine { .. } => 0.0,
            SmoothPiece::Quadratic { q, .. } => {
                let n = q.len();
                let m = DMatrix::from_fn(n, n, |i, j| q[i][j]);
                SymmetricEigen::new(m).eigenvalues.min()
            }
        }
    }
}

/// Outer scalar map applied to one argument of a composition node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phi {
    Identity,
    Exp,
    /// `y²`, admissible only for `y ≥ 0`.
    SquarePos,
}

impl Phi {
    pub fn value(self, y: f64) -> Result<f64> {
        match self {
            Phi::Identity => Ok(y),
            Phi::Exp => Ok(y.exp()),
            Phi::SquarePos => {
                if y < 0.0 {
                    Err(Error::Domain(format!(
                        "sq+ applied to negative argument {y}"
                    )))
                } else {
                    Ok(y * y)
                }
            }
        }
    }

    pub fn deriv(self, y: f64) -> Result<f64> {
        match self {
            Phi::Identity => Ok(1.0),
            Phi::Exp => Ok(y.exp()),
            Phi::SquarePos => {
                if y < 0.0 {
                    Err(Error::Domain(format!(
                        "sq+ applied to negative argument {y}"
                    )))
                } else {
                    Ok(2.0 * y)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTerm {
    pub weight: f64,
    pub child: FuncExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompTerm {
    pub coef: f64,
    pub phi: Phi,
    pub child: FuncExpr,
}

/// `g(y) = c0 + Σ coef_i · phi_i(y_i)` with every `coef_i ≥ 0`, so `g` is
/// nondecreasing in each argument.
#[derive(Debug, Clone, PartialEq)]
pub struct CompNode {
    pub c0: f64,
    pub terms: Vec<CompTerm>,
}

/// Univariate piecewise polynomial in coordinate `var`. Piece `k` covers
/// `[breaks[k-1], breaks[k])`, the first and last pieces extend to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct PwUni {
    pub var: usize,
    pub breaks: Vec<f64>,
    pub pieces: Vec<Poly>,
}

impl PwUni {
    pub fn new(var: usize, breaks: Vec<f64>, pieces: Vec<Poly>) -> Result<Self> {
        let node = PwUni {
            var,
            breaks,
            pieces,
        };
        node.validate()?;
        Ok(node)
    }

    /// Continuous piecewise-linear function with `f(start) = value_at_start`.
    pub fn piecewise_linear(
        var: usize,
        breaks: Vec<f64>,
        slopes: &[f64],
        start: f64,
        value_at_start: f64,
    ) -> Result<Self> {
        if slopes.len() != breaks.len() + 1 {
            return Err(Error::InvalidExpr(format!(
                "{} slopes for {} breakpoints",
                slopes.len(),
                breaks.len()
            )));
        }
        // anchor the piece containing `start`, then propagate continuity outward
        let k0 = breaks.partition_point(|&a| a <= start);
        let mut intercepts = vec![0.0; slopes.len()];
        intercepts[k0] = value_at_start - slopes[k0] * start;
        for k in (k0 + 1)..slopes.len() {
            let a = breaks[k - 1];
            let v = intercepts[k - 1] + slopes[k - 1] * a;
            intercepts[k] = v - slopes[k] * a;
        }
        for k in (0..k0).rev() {
            let a = breaks[k];
            let v = intercepts[k + 1] + slopes[k + 1] * a;
            intercepts[k] = v - slopes[k] * a;
        }
        let pieces = intercepts
            .iter()
            .zip(slopes)
            .map(|(&b, &s)| Poly::linear(b, s))
            .collect();
        PwUni::new(var, breaks, pieces)
    }

    fn validate(&self) -> Result<()> {
        if self.pieces.len() != self.breaks.len() + 1 {
            return Err(Error::InvalidExpr(format!(
                "pwuni needs {} pieces for {} breakpoints, got {}",
                self.breaks.len() + 1,
                self.breaks.len(),
                self.pieces.len()
            )));
        }
        if self.breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidExpr("non-finite breakpoint".into()));
        }
        if self.breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidExpr(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        for (k, &a) in self.breaks.iter().enumerate() {
            let left = self.pieces[k].eval(a);
            let right = self.pieces[k + 1].eval(a);
            if (left - right).abs() > CONTINUITY_TOL * (1.0 + left.abs().max(right.abs())) {
                return Err(Error::InvalidExpr(format!(
                    "pwuni discontinuous at breakpoint {a}: {left} vs {right}"
                )));
            }
        }
        Ok(())
    }

    /// Index of the piece whose half-open interval contains `t`.
    pub fn piece_index(&self, t: f64) -> usize {
        self.breaks.partition_point(|&a| a <= t)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.pieces[self.piece_index(t)].eval(t)
    }

    /// Interval covered by piece `k`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.breaks[k - 1]
        };
        let hi = self.breaks.get(k).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// One-sided slopes `(f'_{k-1}(a_k), f'_k(a_k))` at every breakpoint.
    pub fn kink_slopes(&self) -> Vec<(f64, f64, f64)> {
        self.breaks
            .iter()
            .enumerate()
            .map(|(k, &a)| (a, self.pieces[k].deriv(a), self.pieces[k + 1].deriv(a)))
            .collect()
    }

    pub fn is_linear(&self) -> bool {
        self.pieces.iter().all(|p| p.degree() <= 1)
    }

    pub fn negated(&self) -> Self {
        PwUni {
            var: self.var,
            breaks: self.breaks.clone(),
            pieces: self.pieces.iter().map(Poly::negated).collect(),
        }
    }
}

/// Expression tree for the supported nonsmooth function classes.
#[derive(Debug, Clone, PartialEq)]
pub enum FuncExpr {
    Leaf(SmoothPiece),
    Max(Vec<FuncExpr>),
    Sum(Vec<WeightedTerm>),
    Comp(CompNode),
    PwUni(PwUni),
}

impl FuncExpr {
    pub fn affine(c: Vec<f64>, d0: f64) -> Result<Self> {
        Ok(FuncExpr::Leaf(SmoothPiece::affine(c, d0)?))
    }

    pub fn quadratic(q: Vec<Vec<f64>>, c: Vec<f64>, d0: f64) -> Result<Self> {
        Ok(FuncExpr::Leaf(SmoothPiece::quadratic(q, c, d0)?))
    }

    pub fn max(children: Vec<FuncExpr>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::InvalidExpr(
                "max node needs at least one child".into(),
            ));
        }
        Ok(FuncExpr::Max(children))
    }

    pub fn sum(terms: Vec<(f64, FuncExpr)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidExpr(
                "sum node needs at least one term".into(),
            ));
        }
        if terms.iter().any(|(w, _)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidExpr(
                "sum weights must be finite and nonnegative".into(),
            ));
        }
        Ok(FuncExpr::Sum(
            terms
                .into_iter()
                .map(|(weight, child)| WeightedTerm { weight, child })
                .collect(),
        ))
    }

    pub fn comp(c0: f64, terms: Vec<(f64, Phi, FuncExpr)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidExpr(
                "comp node needs at least one term".into(),
            ));
        }
        if !c0.is_finite() || terms.iter().any(|(c, _, _)| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidExpr(
                "comp coefficients must be finite and nonnegative".into(),
            ));
        }
        Ok(FuncExpr::Comp(CompNode {
            c0,
            terms: terms
                .into_iter()
                .map(|(coef, phi, child)| CompTerm { coef, phi, child })
                .collect(),
        }))
    }

    pub fn pwuni(var: usize, breaks: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        let pieces = pieces
            .into_iter()
            .map(Poly::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(FuncExpr::PwUni(PwUni::new(var, breaks, pieces)?))
    }

    /// Children of the node, in index order.
    pub fn children(&self) -> Vec<&FuncExpr> {
        match self {
            FuncExpr::Leaf(_) | FuncExpr::PwUni(_) => Vec::new(),
            FuncExpr::Max(ch) => ch.iter().collect(),
            FuncExpr::Sum(terms) => terms.iter().map(|t| &t.child).collect(),
            FuncExpr::Comp(node) => node.terms.iter().map(|t| &t.child).collect(),
        }
    }

    /// Re-checks every structural invariant and that the tree lives in `n`
    /// dimensions.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            FuncExpr::Leaf(piece) => {
                piece.validate()?;
                check_dim(n, piece.dim())
            }
            FuncExpr::Max(ch) => {
                if ch.is_empty() {
                    return Err(Error::InvalidExpr(
                        "max node needs at least one child".into(),
                    ));
                }
                ch.iter().try_for_each(|c| c.validate(n))
            }
            FuncExpr::Sum(terms) => {
                if terms.is_empty() {
                    return Err(Error::InvalidExpr(
                        "sum node needs at least one term".into(),
                    ));
                }
                for t in terms {
                    if !t.weight.is_finite() || t.weight < 0.0 {
                        return Err(Error::InvalidExpr("negative sum weight".into()));
                    }
                    t.child.validate(n)?;
                }
                Ok(())
            }
            FuncExpr::Comp(node) => {
                if node.terms.is_empty() {
                    return Err(Error::InvalidExpr(
                        "comp node needs at least one term".into(),
                    ));
                }
                for t in &node.terms {
                    if !t.coef.is_finite() || t.coef < 0.0 {
                        return Err(Error::InvalidExpr("negative comp coefficient".into()));
                    }
                    t.child.validate(n)?;
                }
                Ok(())
            }
            FuncExpr::PwUni(pw) => {
                pw.validate()?;
                if pw.var >= n {
                    return Err(Error::InvalidExpr(format!(
                        "pwuni variable {} out of range for {n} dimensions",
                        pw.var
                    )));
                }
                Ok(())
            }
        }
    }

    /// Dimension implied by the leaves, if any leaf carries one.
    pub fn leaf_dim(&self) -> Option<usize> {
        match self {
            FuncExpr::Leaf(p) => Some(p.dim()),
            FuncExpr::PwUni(_) => None,
            _ => self.children().into_iter().find_map(FuncExpr::leaf_dim),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            FuncExpr::Leaf(piece) => {
                check_dim(piece.dim(), x.len())?;
                Ok(piece.value(x))
            }
            FuncExpr::Max(ch) => {
                let mut best = f64::NEG_INFINITY;
                for c in ch {
                    best = best.max(c.eval(x)?);
                }
                Ok(best)
            }
            FuncExpr::Sum(terms) => {
                let mut acc = 0.0;
                for t in terms {
                    acc += t.weight * t.child.eval(x)?;
                }
                Ok(acc)
            }
            FuncExpr::Comp(node) => {
                let mut acc = node.c0;
                for t in &node.terms {
                    acc += t.coef * t.phi.value(t.child.eval(x)?)?;
                }
                Ok(acc)
            }
            FuncExpr::PwUni(pw) => {
                let t = coordinate(pw.var, x)?;
                Ok(pw.value_at(t))
            }
        }
    }

    /// `-f` as a tree in the same grammar. Max and composition nodes have no
    /// representable negation.
    pub fn negated(&self) -> Result<Self> {
        match self {
            FuncExpr::Leaf(p) => Ok(FuncExpr::Leaf(p.negated())),
            FuncExpr::PwUni(pw) => Ok(FuncExpr::PwUni(pw.negated())),
            FuncExpr::Sum(terms) => Ok(FuncExpr::Sum(
                terms
                    .iter()
                    .map(|t| {
                        Ok(WeightedTerm {
                            weight: t.weight,
                            child: t.child.negated()?,
                        })
                    })
                    .collect::<Result<_>>()?,
            )),
            FuncExpr::Max(_) => Err(Error::InvalidExpr(
                "the negation of a max node is not in the expression grammar".into(),
            )),
            FuncExpr::Comp(_) => Err(Error::InvalidExpr(
                "the negation of a comp node is not in the expression grammar".into(),
            )),
        }
    }

    /// True when every leaf is affine, every pwuni piece is linear and every
    /// comp term uses the identity map.
    pub fn is_piecewise_linear(&self) -> bool {
        match self {
            FuncExpr::Leaf(SmoothPiece::Affine { .. }) => true,
            FuncExpr::Leaf(SmoothPiece::Quadratic { .. }) => false,
            FuncExpr::PwUni(pw) => pw.is_linear(),
            FuncExpr::Comp(node) => node
                .terms
                .iter()
                .all(|t| t.phi == Phi::Identity && t.child.is_piecewise_linear()),
            _ => self.children().iter().all(|c| c.is_piecewise_linear()),
        }
    }

    /// Sufficient convexity test: PSD quadratic leaves, convex pwuni pieces with
    /// nondecreasing slopes at every breakpoint, and convexity-preserving nodes.
    pub fn check_convex(&self) -> Result<()> {
        match self {
            FuncExpr::Leaf(p) => {
                let lam = p.min_curvature();
                if lam < -1e-10 {
                    return Err(Error::NonConvexLeaf(format!(
                        "quadratic leaf has eigenvalue {lam}"
                    )));
                }
                Ok(())
            }
            FuncExpr::PwUni(pw) => {
                for (k, piece) in pw.pieces.iter().enumerate() {
                    let (lo, hi) = pw.interval(k);
                    if !piece.is_convex_on(lo, hi, 1e-12) {
                        return Err(Error::NonConvexLeaf(format!(
                            "pwuni piece {k} is not convex on its interval"
                        )));
                    }
                }
                for (a, left, right) in pw.kink_slopes() {
                    if left > right + 1e-12 * (1.0 + left.abs()) {
                        return Err(Error::NonConvexLeaf(format!(
                            "pwuni slope drops from {left} to {right} at {a}"
                        )));
                    }
                }
                Ok(())
            }
            _ => self
                .children()
                .into_iter()
                .try_for_each(FuncExpr::check_convex),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn coordinate(var: usize, x: &[f64]) -> Result<f64> {
    x.get(var).copied().ok_or(Error::DimensionMismatch {
        expected: var + 1,
        got: x.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one() -> FuncExpr {
        FuncExpr::max(vec![
            FuncExpr::affine(vec![1.0], 0.0).unwrap(),
            FuncExpr::affine(vec![2.0], 0.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn example_one_values() {
        let f = example_one();
        assert_eq!(f.eval(&[-3.0]).unwrap(), -3.0);
        assert_eq!(f.eval(&[1.0]).unwrap(), 2.0);
        assert_eq!(f.eval(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_tie() {
        let f = FuncExpr::max(vec![
            FuncExpr::affine(vec![1.0, 0.0], 0.0).unwrap(),
            FuncExpr::affine(vec![0.0, 1.0], 0.0).unwrap(),
        ])
        .unwrap();
        assert_eq!(f.eval(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let f = example_one();
        assert!(matches!(
            f.eval(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn square_pos_domain() {
        let f = FuncExpr::comp(
            0.0,
            vec![(
                1.0,
                Phi::SquarePos,
                FuncExpr::affine(vec![1.0], 0.0).unwrap(),
            )],
        )
        .unwrap();
        assert_eq!(f.eval(&[3.0]).unwrap(), 9.0);
        assert!(matches!(f.eval(&[-1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn pwuni_half_open_convention() {
        // slopes 1 then 2 with kink at 0
        let f = FuncExpr::pwuni(0, vec![0.0], vec![vec![0.0, 1.0], vec![0.0, 2.0]]).unwrap();
        if let FuncExpr::PwUni(pw) = &f {
            assert_eq!(pw.piece_index(0.0), 1);
            assert_eq!(pw.piece_index(-1e-300), 0);
        }
        assert_eq!(f.eval(&[-2.0]).unwrap(), -2.0);
        assert_eq!(f.eval(&[2.0]).unwrap(), 4.0);
    }

    #[test]
    fn pwuni_rejects_discontinuity_and_unsorted_breaks() {
        assert!(FuncExpr::pwuni(0, vec![0.0], vec![vec![1.0, 1.0], vec![0.0, 2.0]]).is_err());
        assert!(FuncExpr::pwuni(0, vec![1.0, 0.0], vec![vec![0.0], vec![0.0], vec![0.0]]).is_err());
    }

    #[test]
    fn piecewise_linear_builder_is_continuous() {
        let pw = PwUni::piecewise_linear(0, vec![1.0, 2.0], &[4.0, 2.0, 0.5], 0.0, 0.0).unwrap();
        assert_eq!(pw.value_at(0.0), 0.0);
        assert!((pw.value_at(1.0) - 4.0).abs() < 1e-15);
        assert!((pw.value_at(2.0) - 6.0).abs() < 1e-15);
        assert!((pw.value_at(4.0) - 7.0).abs() < 1e-15);
        assert!((pw.value_at(-1.0) + 4.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_weights_and_asymmetric_q() {
        let leaf = FuncExpr::affine(vec![1.0], 0.0).unwrap();
        assert!(FuncExpr::sum(vec![(-1.0, leaf.clone())]).is_err());
        assert!(
            FuncExpr::quadratic(vec![vec![1.0, 2.0], vec![0.0, 1.0]], vec![0.0, 0.0], 0.0).is_err()
        );
        assert!(FuncExpr::max(vec![]).is_err());
    }

    #[test]
    fn negation_and_convexity() {
        let concave = FuncExpr::pwuni(0, vec![1.0], vec![vec![0.0, 4.0], vec![2.0, 2.0]]).unwrap();
        assert!(concave.check_convex().is_err());
        let neg = concave.negated().unwrap();
        assert!(neg.check_convex().is_ok());
        assert!(example_one().negated().is_err());
        let indefinite =
            FuncExpr::quadratic(vec![vec![1.0, 0.0], vec![0.0, -1.0]], vec![0.0, 0.0], 0.0)
                .unwrap();
        assert!(matches!(
            indefinite.check_convex(),
            Err(Error::NonConvexLeaf(_))
        ));
    }
}
