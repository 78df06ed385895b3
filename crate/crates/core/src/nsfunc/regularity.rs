//! Sampled Clarke derivative estimates, regularity reports and first-order
//! expansion residuals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::expr::FuncExpr;
use super::subdiff::{clarke_dir_deriv, dir_deriv, Tolerances};
use crate::error::{check_dim, Error, Result};

/// Number of step sizes in the geometric grid used by [`clarke_dir_estimate`].
pub const ESTIMATE_STEPS: usize = 16;

/// Pass threshold for the regularity report.
pub const REGULARITY_TOL: f64 = 1e-6;

/// Step used by the Richardson-extrapolated one-sided difference quotient.
const FD_STEP: f64 = 1e-5;

/// Sampled lim-sup of `(f(y + t d) - f(y)) / t` over `y` in a ball around `x`
/// and `t` on a geometric grid in `[tmin, radius]`. The first base point is
/// `x` itself.
pub fn clarke_dir_estimate<F>(
    f: F,
    x: &[f64],
    d: &[f64],
    radius: f64,
    samples: usize,
    tmin: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    check_dim(x.len(), d.len())?;
    if !(radius > 0.0 && tmin > 0.0 && samples >= 1) {
        return Err(Error::InvalidArgument(
            "need radius > 0, tmin > 0 and samples >= 1".into(),
        ));
    }
    let tmax = radius.max(tmin);
    let steps: Vec<f64> = (0..ESTIMATE_STEPS)
        .map(|k| {
            let s = k as f64 / (ESTIMATE_STEPS - 1) as f64;
            tmin * (tmax / tmin).powf(s)
        })
        .collect();

    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    let mut y = x.to_vec();
    let mut probe = vec![0.0; n];
    for s in 0..samples {
        if s > 0 {
            // uniform in the ball: gaussian direction, radius ∝ u^(1/n)
            let dir: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
            for i in 0..n {
                y[i] = x[i] + r * dir[i] / norm;
            }
        }
        let fy = f(&y)?;
        for &t in &steps {
            for i in 0..n {
                probe[i] = y[i] + t * d[i];
            }
            let q = (f(&probe)? - fy) / t;
            best = best.max(q);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkViolation {
    pub breakpoint: f64,
    pub left_slope: f64,
    pub right_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub direction: Vec<f64>,
    pub dir_deriv: f64,
    pub clarke_dir_deriv: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub pass: bool,
    /// Largest of the kink drops, `|f° - f'|` and `|f' - fd|` over all directions.
    pub max_violation: f64,
    pub kink_violations: Vec<KinkViolation>,
    pub directions: Vec<DirectionCheck>,
}

/// Checks `f°(x; d) = f'(x; d)`. Every pwuni node is checked symbolically for
/// nondecreasing slopes at each breakpoint; along `dirs` the generator-based
/// Clarke derivative, the recursive directional derivative and a one-sided
/// difference quotient are compared.
pub fn regularity_check(
    expr: &FuncExpr,
    x: &[f64],
    dirs: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<RegularityReport> {
    if dirs.is_empty() {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    let mut kink_violations = Vec::new();
    collect_kink_violations(expr, &mut kink_violations);
    let mut max_violation: f64 = kink_violations
        .iter()
        .map(|k| k.left_slope - k.right_slope)
        .fold(0.0, f64::max);

    let fx = expr.eval(x)?;
    let mut directions = Vec::with_capacity(dirs.len());
    for d in dirs {
        let dd = dir_deriv(expr, x, d, tol)?;
        let cd = clarke_dir_deriv(expr, x, d, tol)?;
        let fd = one_sided_quotient(expr, x, d, fx)?;
        max_violation = max_violation.max((cd - dd).abs()).max((dd - fd).abs());
        directions.push(DirectionCheck {
            direction: d.clone(),
            dir_deriv: dd,
            clarke_dir_deriv: cd,
            finite_difference: fd,
        });
    }
    Ok(RegularityReport {
        pass: kink_violations.is_empty() && max_violation <= REGULARITY_TOL,
        max_violation,
        kink_violations,
        directions,
    })
}

fn collect_kink_violations(expr: &FuncExpr, out: &mut Vec<KinkViolation>) {
    if let FuncExpr::PwUni(pw) = expr {
        for (a, left, right) in pw.kink_slopes() {
            if left > right + 1e-12 * (1.0 + left.abs()) {
                out.push(KinkViolation {
                    breakpoint: a,
                    left_slope: left,
                    right_slope: right,
                });
            }
        }
    }
    for c in expr.children() {
        collect_kink_violations(c, out);
    }
}

// Richardson combination 2 q(h/2) - q(h) cancels the O(h) curvature term.
fn one_sided_quotient(expr: &FuncExpr, x: &[f64], d: &[f64], fx: f64) -> Result<f64> {
    let q = |h: f64| -> Result<f64> {
        let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + h * b).collect();
        Ok((expr.eval(&y)? - fx) / h)
    };
    Ok(2.0 * q(FD_STEP / 2.0)? - q(FD_STEP)?)
}

/// `|f(x + t d) - f(x) - t f'(x; d)|`.
pub fn expansion_residual(expr: &FuncExpr, x: &[f64], d: &[f64], t: f64) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::InvalidArgument("step t must be positive".into()));
    }
    let tol = Tolerances::default();
    let slope = dir_deriv(expr, x, d, &tol)?;
    let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
    Ok((expr.eval(&y)? - expr.eval(x)? - t * slope).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs1() -> FuncExpr {
        FuncExpr::max(vec![
            FuncExpr::affine(vec![1.0], 0.0).unwrap(),
            FuncExpr::affine(vec![-1.0], 0.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn estimate_for_abs_is_one() {
        let f = abs1();
        for radius in [1e-3, 0.1, 2.0] {
            let est =
                clarke_dir_estimate(|y| f.eval(y), &[0.0], &[1.0], radius, 50, 1e-6, 7).unwrap();
            assert!((est - 1.0).abs() < 1e-9, "radius {radius}: {est}");
        }
    }

    #[test]
    fn estimate_for_smooth_quadratic_approaches_gradient() {
        let f =
            FuncExpr::quadratic(vec![vec![2.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0], 0.0).unwrap();
        let x = [0.5, -1.0];
        let d = [0.6, 0.8];
        let exact = (2.0 * 0.5 + 1.0) * 0.6 + -0.8;
        let mut last_err = f64::INFINITY;
        for radius in [1e-1, 1e-3, 1e-5] {
            let est =
                clarke_dir_estimate(|y| f.eval(y), &x, &d, radius, 40, radius * 1e-3, 3).unwrap();
            let err = (est - exact).abs();
            assert!(err <= last_err + 1e-12);
            last_err = err;
        }
        assert!(last_err < 1e-4);
    }

    #[test]
    fn estimate_is_seed_deterministic() {
        let f = abs1();
        let a = clarke_dir_estimate(|y| f.eval(y), &[0.2], &[-1.0], 0.5, 20, 1e-6, 42).unwrap();
        let b = clarke_dir_estimate(|y| f.eval(y), &[0.2], &[-1.0], 0.5, 20, 1e-6, 42).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(clarke_dir_estimate(|y| f.eval(y), &[0.0], &[1.0], 0.0, 5, 1e-6, 1).is_err());
    }

    #[test]
    fn regularity_of_kinks() {
        let tol = Tolerances::default();
        let dirs = vec![vec![1.0], vec![-1.0]];
        let convex_kink =
            FuncExpr::pwuni(0, vec![0.0], vec![vec![0.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(
            regularity_check(&convex_kink, &[0.0], &dirs, &tol)
                .unwrap()
                .pass
        );

        let concave_kink =
            FuncExpr::pwuni(0, vec![0.0], vec![vec![0.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let report = regularity_check(&concave_kink, &[0.0], &dirs, &tol).unwrap();
        assert!(!report.pass);
        assert_eq!(report.kink_violations.len(), 1);
        assert!((report.max_violation - 1.0).abs() < 1e-12);

        let flat = FuncExpr::pwuni(0, vec![0.0], vec![vec![0.0, 1.5], vec![0.0, 1.5]]).unwrap();
        assert!(regularity_check(&flat, &[0.0], &dirs, &tol).unwrap().pass);
        assert!(regularity_check(&flat, &[0.0], &[], &tol).is_err());
    }

    #[test]
    fn expansion_residual_of_abs_vanishes() {
        let f = abs1();
        for &t in &[1e-6, 0.1, 3.0] {
            for &d in &[-2.0, 0.5] {
                assert_eq!(expansion_residual(&f, &[0.0], &[d], t).unwrap(), 0.0);
            }
        }
        assert!(expansion_residual(&f, &[0.0], &[1.0], 0.0).is_err());
    }
}
