//! Seeded instance generators shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use shadowprice::kkt::LinearConstraint;
use shadowprice::nsfunc::FuncExpr;
use shadowprice::solver::{Bound, Problem, Sense};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, lo, hi)).collect()
}

pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn box_bounds(n: usize, r: f64) -> Vec<Bound> {
    vec![Bound { lo: -r, hi: r }; n]
}

/// Affine pieces `(a_k, b_k)` of `max_k a_kᵀx + b_k`.
pub type Pieces = Vec<(Vec<f64>, f64)>;

pub fn max_affine(pieces: &Pieces) -> FuncExpr {
    FuncExpr::max(
        pieces
            .iter()
            .map(|(a, b)| FuncExpr::affine(a.clone(), *b).unwrap())
            .collect(),
    )
    .unwrap()
}

pub fn random_pieces(rng: &mut ChaCha8Rng, n: usize, k: usize, slope: f64) -> Pieces {
    (0..k)
        .map(|_| (uniform_vec(rng, n, -slope, slope), uniform(rng, -1.0, 1.0)))
        .collect()
}

/// Halfspaces `aᵀx ≤ b` with `b ≥ 0`, so the origin is always feasible.
pub fn random_constraints(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<LinearConstraint> {
    (0..m)
        .map(|_| LinearConstraint::new(unit_vector(rng, n), uniform(rng, 0.0, 0.5)).unwrap())
        .collect()
}

/// Convex piecewise-linear minimization on the box `[-2, 2]^n`: a max of
/// affine pieces, sometimes plus a convex univariate piecewise-linear term.
pub fn random_pl_problem(rng: &mut ChaCha8Rng, n: usize) -> Problem {
    let k = rng.random_range(2..=4);
    let m = rng.random_range(1..=3);
    let mut objective = max_affine(&random_pieces(rng, n, k, 3.0));
    if rng.random_bool(0.5) {
        let var = rng.random_range(0..n);
        let b0 = uniform(rng, -1.0, 0.0);
        let b1 = b0 + uniform(rng, 0.2, 1.0);
        let s0 = uniform(rng, -2.0, 0.0);
        let s1 = s0 + uniform(rng, 0.1, 2.0);
        let s2 = s1 + uniform(rng, 0.1, 2.0);
        let pw = shadowprice::nsfunc::PwUni::piecewise_linear(
            var,
            vec![b0, b1],
            &[s0, s1, s2],
            0.0,
            0.0,
        )
        .unwrap();
        objective = FuncExpr::sum(vec![
            (1.0, objective),
            (uniform(rng, 0.5, 1.5), FuncExpr::PwUni(pw)),
        ])
        .unwrap();
    }
    let constraints = random_constraints(rng, n, m);
    Problem::new(
        n,
        objective,
        Sense::Min,
        constraints,
        Some(box_bounds(n, 2.0)),
    )
    .unwrap()
}

/// Random symmetric matrix with entries in `[-s, s]`.
pub fn symmetric(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = uniform(rng, -s, s);
            q[i][j] = v;
            q[j][i] = v;
        }
    }
    q
}

/// `BᵀB + shift·I` with `B` uniform in `[-1, 1]`.
pub fn positive_definite(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(rng, n, -1.0, 1.0)).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>()
                        + if i == j { shift } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

pub fn quad_form(q: &[Vec<f64>], x: &[f64]) -> f64 {
    q.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum()
}

/// Convex hull of planar points, counter-clockwise; degenerate hulls keep
/// their one or two extreme points.
pub fn hull_2d(points: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|v| (v[0], v[1])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() <= 1 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let ordered: Vec<(f64, f64)> = if pass == 0 {
            pts.clone()
        } else {
            pts.iter().rev().copied().collect()
        };
        for q in ordered {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Euclidean distance from `p` to a hull returned by [`hull_2d`].
pub fn hull_distance_2d(hull: &[(f64, f64)], p: (f64, f64)) -> f64 {
    if hull.len() >= 3
        && (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
    {
        return 0.0;
    }
    let seg = |a: (f64, f64), b: (f64, f64)| {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ((a.0 + t * dx - p.0).powi(2) + (a.1 + t * dy - p.1).powi(2)).sqrt()
    };
    (0..hull.len())
        .map(|i| seg(hull[i], hull[(i + 1) % hull.len()]))
        .fold(f64::INFINITY, f64::min)
}
