use crate::error::{Error, Result};

/// Univariate polynomial of degree at most 3, coefficients stored low-to-high.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub const MAX_DEGREE: usize = 3;

    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > Self::MAX_DEGREE + 1 {
            return Err(Error::InvalidExpr(format!(
                "polynomial piece needs 1..=4 coefficients, got {}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidExpr(
                "non-finite polynomial coefficient".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    /// `slope * t + intercept`
    pub fn linear(intercept: f64, slope: f64) -> Self {
        Self {
            coeffs: vec![intercept, slope],
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.coeff(1) + t * (2.0 * self.coeff(2) + t * 3.0 * self.coeff(3))
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        2.0 * self.coeff(2) + 6.0 * self.coeff(3) * t
    }

    pub fn negated(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }

    /// Real solutions of `p'(t) = target`, sorted ascending.
    pub fn deriv_solutions(&self, target: f64) -> Vec<f64> {
        // p'(t) = c1 + 2 c2 t + 3 c3 t^2
        let a = 3.0 * self.coeff(3);
        let b = 2.0 * self.coeff(2);
        let c = self.coeff(1) - target;
        let mut roots = Vec::new();
        if a == 0.0 {
            if b != 0.0 {
                roots.push(-c / b);
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // numerically stable pair
                let q = -0.5 * (b + b.signum() * sq);
                if q != 0.0 {
                    roots.push(q / a);
                    roots.push(c / q);
                } else {
                    roots.push(0.0);
                }
            }
        }
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }

    /// True when the polynomial is convex on `[lo, hi]` (either end may be infinite).
    pub fn is_convex_on(&self, lo: f64, hi: f64, tol: f64) -> bool {
        let c3 = self.coeff(3);
        if c3 != 0.0 && (lo.is_infinite() || hi.is_infinite()) {
            // the second derivative is linear and unbounded below on one side
            return false;
        }
        let ends = [lo, hi];
        ends.iter()
            .filter(|t| t.is_finite())
            .all(|&t| self.second_deriv(t) >= -tol)
            && (c3 != 0.0 || self.second_deriv(0.0) >= -tol)
    }

    pub fn is_concave_on(&self, lo: f64, hi: f64, tol: f64) -> bool {
        self.negated().is_convex_on(lo, hi, tol)
    }
}
