//! Brute-force reference solver for small problems.
//!
//! Candidates are the feasible points of a tensor grid plus every vertex of
//! the arrangement formed by constraint faces, grid faces, pwuni breakpoints
//! and the kink hyperplanes of max nodes over affine pieces. For max-of-smooth
//! objectives the best candidates are polished by a Newton solve of the KKT
//! system on each nearby combination of pieces and constraints.

use nalgebra::{DMatrix, DVector};

use super::{MethodTag, Problem, Solution, SolveStatus};
use crate::error::{check_dim, Error, Result};
use crate::kkt::LinearConstraint;
use crate::nsfunc::{dot, FuncExpr, SmoothPiece};

/// Largest number of grid points per axis.
pub const MAX_GRID_POINTS: usize = 201;

const MAX_DIM: usize = 3;
const MAX_PIECES: usize = 64;
const MAX_HYPERPLANES: usize = 150;
const SEEDS: usize = 5;
const POLISH_NEAR: usize = 6;
const NEWTON_ITERS: usize = 40;
const CANDIDATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: usize) -> Result<Self> {
        let g = Self { lo, hi, points };
        g.validate()?;
        Ok(g)
    }

    /// Same range on every axis.
    pub fn uniform(n: usize, lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n], points)
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.lo.len(), self.hi.len())?;
        if !(2..=MAX_GRID_POINTS).contains(&self.points) {
            return Err(Error::InvalidArgument(format!(
                "grid needs 2..={MAX_GRID_POINTS} points per axis, got {}",
                self.points
            )));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidArgument(format!("bad grid range [{l}, {h}]")));
            }
        }
        Ok(())
    }

    fn coord(&self, axis: usize, k: usize) -> f64 {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        if k + 1 == self.points {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (self.points - 1) as f64
        }
    }

    fn step(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) / (self.points - 1) as f64)
            .fold(0.0, f64::max)
    }

    fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .enumerate()
            .all(|(j, v)| *v >= self.lo[j] - tol && *v <= self.hi[j] + tol)
    }
}

/// Best candidates seen so far, ascending by value, distinct points.
struct TopK {
    items: Vec<(f64, Vec<f64>)>,
}

impl TopK {
    fn offer(&mut self, v: f64, x: &[f64]) {
        if self.items.len() == SEEDS && v >= self.items[SEEDS - 1].0 {
            return;
        }
        if self
            .items
            .iter()
            .any(|(_, y)| y.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            return;
        }
        let pos = self.items.partition_point(|(w, _)| *w <= v);
        self.items.insert(pos, (v, x.to_vec()));
        self.items.truncate(SEEDS);
    }
}

/// Exhaustive search over grid points and arrangement vertices.
pub fn solve_oracle_grid(p: &Problem, grid: &GridSpec) -> Result<Solution> {
    let n = p.dim();
    if n > MAX_DIM {
        return Err(Error::DimensionTooLarge(n));
    }
    grid.validate()?;
    check_dim(n, grid.lo.len())?;
    let f = p.min_objective();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut top = TopK { items: Vec::new() };
    let mut evaluated = 0usize;
    let mut consider =
        |x: &[f64], best: &mut Option<(f64, Vec<f64>)>, top: &mut TopK| -> Result<()> {
            if !p.is_feasible(x, CANDIDATE_TOL) {
                return Ok(());
            }
            let v = f.eval(x)?;
            evaluated += 1;
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                *best = Some((v, x.to_vec()));
            }
            top.offer(v, x);
            Ok(())
        };

    let total = grid.points.pow(n as u32);
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    for _ in 0..total {
        for j in 0..n {
            x[j] = grid.coord(j, idx[j]);
        }
        consider(&x, &mut best, &mut top)?;
        for j in (0..n).rev() {
            idx[j] += 1;
            if idx[j] < grid.points {
                break;
            }
            idx[j] = 0;
        }
    }

    let planes = hyperplanes(p, grid);
    for v in arrangement_vertices(&planes, n) {
        if grid.contains(&v, CANDIDATE_TOL) {
            consider(&v, &mut best, &mut top)?;
        }
    }

    if let Some(pieces) = smooth_pieces(f) {
        let (cs, _) = p.all_constraints();
        let h = grid.step();
        let seeds = top.items.clone();
        for (_, seed) in &seeds {
            for cand in polish(&pieces, &cs, seed, h) {
                consider(&cand, &mut best, &mut top)?;
            }
        }
    }

    match best {
        Some((_, x)) => Solution::optimal(p, x, MethodTag::Grid, evaluated),
        None => Ok(Solution::failed(
            SolveStatus::Infeasible,
            MethodTag::Grid,
            evaluated,
        )),
    }
}

type Affine = (Vec<f64>, f64);

/// Affine functions the node coincides with somewhere, if it is piecewise linear.
fn affine_pieces(node: &FuncExpr, n: usize) -> Option<Vec<Affine>> {
    let out = match node {
        FuncExpr::Leaf(SmoothPiece::Affine { c, d0 }) => vec![(c.clone(), *d0)],
        FuncExpr::Leaf(SmoothPiece::Quadratic { .. }) => return None,
        FuncExpr::Max(children) => {
            let mut all = Vec::new();
            for c in children {
                all.extend(affine_pieces(c, n)?);
            }
            all
        }
        FuncExpr::Sum(terms) => {
            let parts = terms
                .iter()
                .map(|t| Some((t.weight, affine_pieces(&t.child, n)?)))
                .collect::<Option<Vec<_>>>()?;
            combine(parts, 0.0, n)?
        }
        FuncExpr::Comp(node) => {
            let parts = node
                .terms
                .iter()
                .map(|t| {
                    if t.phi != crate::nsfunc::Phi::Identity {
                        return None;
                    }
                    Some((t.coef, affine_pieces(&t.child, n)?))
                })
                .collect::<Option<Vec<_>>>()?;
            combine(parts, node.c0, n)?
        }
        FuncExpr::PwUni(pw) => {
            if !pw.is_linear() {
                return None;
            }
            pw.pieces
                .iter()
                .map(|poly| {
                    let c = poly.coeffs();
                    let mut a = vec![0.0; n];
                    a[pw.var] = c.get(1).copied().unwrap_or(0.0);
                    (a, c[0])
                })
                .collect()
        }
    };
    (out.len() <= MAX_PIECES).then_some(out)
}

fn combine(parts: Vec<(f64, Vec<Affine>)>, c0: f64, n: usize) -> Option<Vec<Affine>> {
    let mut acc: Vec<Affine> = vec![(vec![0.0; n], c0)];
    for (w, pieces) in parts {
        if acc.len() * pieces.len() > MAX_PIECES {
            return None;
        }
        let mut next = Vec::with_capacity(acc.len() * pieces.len());
        for (a, b) in &acc {
            for (c, d) in &pieces {
                let v = a.iter().zip(c).map(|(x, y)| x + w * y).collect();
                next.push((v, b + w * d));
            }
        }
        acc = next;
    }
    Some(acc)
}

fn collect_kinks(node: &FuncExpr, n: usize, out: &mut Vec<Affine>) {
    match node {
        FuncExpr::Max(_) => {
            if let Some(pieces) = affine_pieces(node, n) {
                for i in 0..pieces.len() {
                    for j in i + 1..pieces.len() {
                        let a: Vec<f64> = pieces[i]
                            .0
                            .iter()
                            .zip(&pieces[j].0)
                            .map(|(x, y)| x - y)
                            .collect();
                        out.push((a, pieces[j].1 - pieces[i].1));
                    }
                }
            }
        }
        FuncExpr::PwUni(pw) => {
            for &b in &pw.breaks {
                let mut a = vec![0.0; n];
                a[pw.var] = 1.0;
                out.push((a, b));
            }
        }
        _ => {}
    }
    for c in node.children() {
        collect_kinks(c, n, out);
    }
}

/// Normalized, deduplicated hyperplanes `aᵀx = b`; structural faces first.
fn hyperplanes(p: &Problem, grid: &GridSpec) -> Vec<Affine> {
    let n = p.dim();
    let mut raw: Vec<Affine> = Vec::new();
    let (cs, _) = p.all_constraints();
    raw.extend(cs.iter().map(|c| (c.a.clone(), c.b)));
    for j in 0..n {
        let mut a = vec![0.0; n];
        a[j] = 1.0;
        raw.push((a.clone(), grid.lo[j]));
        raw.push((a, grid.hi[j]));
    }
    collect_kinks(p.min_objective(), n, &mut raw);

    let mut out: Vec<Affine> = Vec::new();
    for (a, b) in raw {
        let norm = dot(&a, &a).sqrt();
        if norm < 1e-12 {
            continue;
        }
        let lead = a
            .iter()
            .find(|v| v.abs() > 1e-12 * norm)
            .copied()
            .unwrap_or(1.0);
        let s = lead.signum() / norm;
        let a: Vec<f64> = a.iter().map(|v| v * s).collect();
        let b = b * s;
        let dup = out.iter().any(|(c, d)| {
            (d - b).abs() <= 1e-12 * (1.0 + b.abs())
                && c.iter().zip(&a).all(|(u, v)| (u - v).abs() <= 1e-12)
        });
        if !dup {
            out.push((a, b));
        }
        if out.len() == MAX_HYPERPLANES {
            break;
        }
    }
    out
}

fn arrangement_vertices(planes: &[Affine], n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut subset: Vec<usize> = (0..n).collect();
    if planes.len() < n {
        return out;
    }
    loop {
        let m = DMatrix::from_fn(n, n, |r, c| planes[subset[r]].0[c]);
        let rhs = DVector::from_fn(n, |r, _| planes[subset[r]].1);
        if m.determinant().abs() > 1e-10 {
            if let Some(x) = m.lu().solve(&rhs) {
                if x.iter().all(|v| v.is_finite()) {
                    out.push(x.iter().copied().collect());
                }
            }
        }
        // next n-subset in lexicographic order
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if subset[i] < planes.len() - n + i {
                break;
            }
        }
        subset[i] += 1;
        for k in i + 1..n {
            subset[k] = subset[k - 1] + 1;
        }
    }
}

fn smooth_pieces(node: &FuncExpr) -> Option<Vec<&SmoothPiece>> {
    match node {
        FuncExpr::Leaf(p) => Some(vec![p]),
        FuncExpr::Max(children) => {
            let mut out = Vec::new();
            for c in children {
                out.extend(smooth_pieces(c)?);
            }
            Some(out)
        }
        _ => None,
    }
}

fn hessian(p: &SmoothPiece, n: usize) -> Vec<Vec<f64>> {
    match p {
        SmoothPiece::Affine { .. } => vec![vec![0.0; n]; n],
        SmoothPiece::Quadratic { q, .. } => q.clone(),
    }
}

/// Newton solves of the KKT system of `min t s.t. f_j(x) ≤ t, aᵀx ≤ b` on
/// every small combination of nearly active pieces and constraints.
fn polish(pieces: &[&SmoothPiece], cs: &[LinearConstraint], seed: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = seed.len();
    let values: Vec<f64> = pieces.iter().map(|p| p.value(seed)).collect();
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grad_scale = pieces
        .iter()
        .map(|p| dot(&p.gradient(seed), &p.gradient(seed)).sqrt())
        .fold(0.0, f64::max);
    let curv_scale = pieces
        .iter()
        .map(|p| {
            hessian(p, n)
                .iter()
                .flatten()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let gap_tol = 4.0 * h * (1.0 + grad_scale) + 8.0 * h * h * (1.0 + curv_scale);

    let mut near_p: Vec<(f64, usize)> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| top - **v <= gap_tol)
        .map(|(i, v)| (top - v, i))
        .collect();
    near_p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near_p.truncate(POLISH_NEAR);
    let mut near_c: Vec<(f64, usize)> = cs
        .iter()
        .enumerate()
        .map(|(i, c)| (-c.slack(seed), i))
        .filter(|(gap, i)| *gap <= 4.0 * h * dot(&cs[*i].a, &cs[*i].a).sqrt())
        .collect();
    near_c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near_c.truncate(POLISH_NEAR);
    let near_p: Vec<usize> = near_p.into_iter().map(|(_, i)| i).collect();
    let near_c: Vec<usize> = near_c.into_iter().map(|(_, i)| i).collect();

    let mut out = Vec::new();
    let np = near_p.len();
    let nc = near_c.len();
    for pm in 1u32..(1 << np) {
        let s: Vec<usize> = (0..np)
            .filter(|k| pm >> k & 1 == 1)
            .map(|k| near_p[k])
            .collect();
        for cm in 0u32..(1 << nc) {
            let c: Vec<usize> = (0..nc)
                .filter(|k| cm >> k & 1 == 1)
                .map(|k| near_c[k])
                .collect();
            if s.len() + c.len() > n + 1 {
                continue;
            }
            if let Some(x) = newton_kkt(pieces, cs, &s, &c, seed, top) {
                let far = x
                    .iter()
                    .zip(seed)
                    .any(|(a, b)| (a - b).abs() > 4.0 * h + 1e-12);
                if !far {
                    out.push(x);
                }
            }
        }
    }
    out
}

fn newton_kkt(
    pieces: &[&SmoothPiece],
    cs: &[LinearConstraint],
    s: &[usize],
    c: &[usize],
    seed: &[f64],
    t0: f64,
) -> Option<Vec<f64>> {
    let n = seed.len();
    let ns = s.len();
    let nc = c.len();
    let dim = n + 1 + ns + nc;
    let (it, im, il) = (n, n + 1, n + 1 + ns);
    let mut z = DVector::zeros(dim);
    for j in 0..n {
        z[j] = seed[j];
    }
    z[it] = t0;
    for k in 0..ns {
        z[im + k] = 1.0 / ns as f64;
    }
    let hess: Vec<Vec<Vec<f64>>> = s.iter().map(|&j| hessian(pieces[j], n)).collect();

    let residual = |z: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let x: Vec<f64> = z.rows(0, n).iter().copied().collect();
        let mut r = DVector::zeros(dim);
        let mut jac = DMatrix::zeros(dim, dim);
        for (k, &j) in s.iter().enumerate() {
            let g = pieces[j].gradient(&x);
            r[k] = pieces[j].value(&x) - z[it];
            for col in 0..n {
                jac[(k, col)] = g[col];
            }
            jac[(k, it)] = -1.0;
            let mu = z[im + k];
            for row in 0..n {
                r[ns + row] += mu * g[row];
                jac[(ns + row, im + k)] = g[row];
                for col in 0..n {
                    jac[(ns + row, col)] += mu * hess[k][row][col];
                }
            }
        }
        for (k, &i) in c.iter().enumerate() {
            let lam = z[il + k];
            for row in 0..n {
                r[ns + row] += lam * cs[i].a[row];
                jac[(ns + row, il + k)] = cs[i].a[row];
            }
            let rr = ns + n + 1 + k;
            r[rr] = dot(&cs[i].a, &x) - cs[i].b;
            for col in 0..n {
                jac[(rr, col)] = cs[i].a[col];
            }
        }
        let rs = ns + n;
        r[rs] = (0..ns).map(|k| z[im + k]).sum::<f64>() - 1.0;
        for k in 0..ns {
            jac[(rs, im + k)] = 1.0;
        }
        (r, jac)
    };

    let mut converged = false;
    for _ in 0..NEWTON_ITERS {
        let (r, jac) = residual(&z);
        let scale = 1.0 + z.amax();
        if r.amax() <= 1e-14 * scale {
            converged = true;
            break;
        }
        let step = jac.lu().solve(&(-r))?;
        z += step;
        if !z.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    if !converged {
        let (r, _) = residual(&z);
        if r.amax() > 1e-10 * (1.0 + z.amax()) {
            return None;
        }
    }
    if (0..ns).any(|k| z[im + k] < -1e-9) || (0..nc).any(|k| z[il + k] < -1e-9) {
        return None;
    }
    let x: Vec<f64> = z.rows(0, n).iter().copied().collect();
    let t = z[it];
    let top = pieces
        .iter()
        .map(|p| p.value(&x))
        .fold(f64::NEG_INFINITY, f64::max);
    if top > t + 1e-9 * (1.0 + t.abs()) {
        return None;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_pl_exact, Bound, Sense};

    fn example_one() -> Problem {
        let f = FuncExpr::max(vec![
            FuncExpr::affine(vec![1.0], 0.0).unwrap(),
            FuncExpr::affine(vec![2.0], 0.0).unwrap(),
        ])
        .unwrap();
        Problem::minimize(1, f, vec![LinearConstraint::new(vec![-1.0], 0.0).unwrap()]).unwrap()
    }

    #[test]
    fn example_one_on_grid() {
        let g = GridSpec::uniform(1, -2.0, 2.0, 201).unwrap();
        let s = solve_oracle_grid(&example_one(), &g).unwrap();
        assert_eq!(s.x.as_deref(), Some(&[0.0][..]));
        assert_eq!(s.value, Some(0.0));
    }

    #[test]
    fn infeasible_box() {
        let f = FuncExpr::affine(vec![1.0, 1.0], 0.0).unwrap();
        let p = Problem::new(
            2,
            f,
            Sense::Min,
            vec![LinearConstraint::new(vec![1.0, 1.0], -10.0).unwrap()],
            Some(vec![Bound { lo: 0.0, hi: 1.0 }; 2]),
        )
        .unwrap();
        let g = GridSpec::uniform(2, -1.0, 2.0, 31).unwrap();
        assert_eq!(
            solve_oracle_grid(&p, &g).unwrap().status,
            SolveStatus::Infeasible
        );
    }

    #[test]
    fn rejects_large_dimension_and_bad_grids() {
        let f = FuncExpr::affine(vec![1.0; 4], 0.0).unwrap();
        let p = Problem::minimize(4, f, vec![]).unwrap();
        let g = GridSpec::uniform(4, -1.0, 1.0, 3).unwrap();
        assert_eq!(solve_oracle_grid(&p, &g), Err(Error::DimensionTooLarge(4)));
        assert!(GridSpec::uniform(2, 0.0, 1.0, 202).is_err());
        assert!(GridSpec::uniform(2, 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn off_grid_kink_vertex_is_found() {
        // min max(x - y, 3y - 0.7) + |x - 0.123| on a coarse grid
        let f = FuncExpr::sum(vec![
            (
                1.0,
                FuncExpr::max(vec![
                    FuncExpr::affine(vec![1.0, -1.0], 0.0).unwrap(),
                    FuncExpr::affine(vec![0.0, 3.0], -0.7).unwrap(),
                ])
                .unwrap(),
            ),
            (
                1.0,
                FuncExpr::max(vec![
                    FuncExpr::affine(vec![1.0, 0.0], -0.123).unwrap(),
                    FuncExpr::affine(vec![-1.0, 0.0], 0.123).unwrap(),
                ])
                .unwrap(),
            ),
        ])
        .unwrap();
        let p = Problem::new(
            2,
            f,
            Sense::Min,
            vec![],
            Some(vec![Bound { lo: -1.0, hi: 1.0 }; 2]),
        )
        .unwrap();
        let exact = solve_pl_exact(&p).unwrap().value.unwrap();
        let g = GridSpec::uniform(2, -1.0, 1.0, 11).unwrap();
        let s = solve_oracle_grid(&p, &g).unwrap();
        assert!(
            (s.value.unwrap() - exact).abs() < 1e-12,
            "{:?} vs {exact}",
            s.value
        );
    }

    #[test]
    fn polish_finds_smooth_kink_minimum() {
        // max((x-1)^2, (x+1)^2 - 0.5): kink at x = 0.125, value 0.765625
        let f = FuncExpr::max(vec![
            FuncExpr::quadratic(vec![vec![2.0]], vec![-2.0], 1.0).unwrap(),
            FuncExpr::quadratic(vec![vec![2.0]], vec![2.0], 0.5).unwrap(),
        ])
        .unwrap();
        let p = Problem::minimize(1, f, vec![]).unwrap();
        let g = GridSpec::uniform(1, -2.0, 2.0, 41).unwrap();
        let s = solve_oracle_grid(&p, &g).unwrap();
        let x = s.x.unwrap()[0];
        assert!((x - 0.125).abs() < 1e-12, "{x}");
        assert!((s.value.unwrap() - 0.765625).abs() < 1e-12);
    }
}
