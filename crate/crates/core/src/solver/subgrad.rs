use super::{MethodTag, Problem, Solution, SolveStatus, FEASIBILITY_TOL};
use crate::error::{check_dim, Error, Result};
use crate::nsfunc::{dot, subdifferential, Tolerances};

const DYKSTRA_SWEEPS: usize = 100;
const DYKSTRA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradParams {
    pub alpha0: f64,
    pub max_iter: usize,
    /// Stop once the best value improves by less than `rel_tol` over this many iterations.
    pub window: usize,
    pub rel_tol: f64,
    /// Carried for reproducibility records; the method itself is deterministic.
    pub seed: u64,
}

impl Default for SubgradParams {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            max_iter: 50_000,
            window: 500,
            rel_tol: 1e-9,
            seed: 0,
        }
    }
}

impl SubgradParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidArgument("alpha0 must be positive".into()));
        }
        if self.window == 0 || self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return Err(Error::InvalidArgument(
                "window must be >= 1 and rel_tol >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn project_halfspace(z: &mut [f64], a: &[f64], b: f64) {
    let excess = dot(a, z) - b;
    if excess > 0.0 {
        let s = excess / dot(a, a);
        for (zi, ai) in z.iter_mut().zip(a) {
            *zi -= s * ai;
        }
    }
}

fn project_box(p: &Problem, z: &mut [f64]) {
    for (j, zj) in z.iter_mut().enumerate() {
        let b = p.bound(j);
        *zj = zj.clamp(b.lo, b.hi);
    }
}

/// Euclidean projection onto `{x : a_iᵀx ≤ b_i} ∩ box`. A single set is
/// projected exactly; several sets use cyclic Dykstra sweeps.
pub fn project(p: &Problem, y: &[f64]) -> Result<Vec<f64>> {
    check_dim(p.dim(), y.len())?;
    let cs = p.constraints();
    let has_box = p.bounds().is_some();
    let mut x = y.to_vec();
    match (cs.len(), has_box) {
        (0, false) => return Ok(x),
        (0, true) => {
            project_box(p, &mut x);
            return Ok(x);
        }
        (1, false) => {
            project_halfspace(&mut x, &cs[0].a, cs[0].b);
            return Ok(x);
        }
        _ => {}
    }

    let sets = cs.len() + usize::from(has_box);
    let mut incr = vec![vec![0.0; x.len()]; sets];
    let mut z = vec![0.0; x.len()];
    for _ in 0..DYKSTRA_SWEEPS {
        let prev = x.clone();
        for (k, inc) in incr.iter_mut().enumerate() {
            for j in 0..x.len() {
                z[j] = x[j] + inc[j];
            }
            let mut proj = z.clone();
            if k < cs.len() {
                project_halfspace(&mut proj, &cs[k].a, cs[k].b);
            } else {
                project_box(p, &mut proj);
            }
            for j in 0..x.len() {
                inc[j] = z[j] - proj[j];
            }
            x = proj;
        }
        let change = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if change <= DYKSTRA_TOL * scale {
            break;
        }
    }
    if p.max_violation(&x) > FEASIBILITY_TOL {
        return Err(Error::ProjectionFailure);
    }
    Ok(x)
}

/// Projected subgradient method with the lexicographically first generator
/// and steps `alpha0 / sqrt(k + 1)`; returns the best iterate.
pub fn solve_subgradient(p: &Problem, params: &SubgradParams) -> Result<Solution> {
    params.validate()?;
    let f = p.min_objective();
    f.check_convex()?;
    let tol = Tolerances::default();

    let mut x = project(p, &vec![0.0; p.dim()])?;
    let mut best_x = x.clone();
    let mut best_f = f.eval(&x)?;
    let mut window_start = best_f;
    let mut status = SolveStatus::IterationLimit;
    let mut iters = 0;

    for k in 0..params.max_iter {
        iters = k + 1;
        let g = subdifferential(f, &x, &tol)?.lex_first().to_vec();
        if g.iter().all(|v| *v == 0.0) {
            status = SolveStatus::Optimal;
            break;
        }
        let alpha = params.alpha0 / ((k + 1) as f64).sqrt();
        let step: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
        x = project(p, &step)?;
        let fx = f.eval(&x)?;
        if fx < best_f {
            best_f = fx;
            best_x.clone_from(&x);
        }
        if iters % params.window == 0 {
            if window_start - best_f <= params.rel_tol * (1.0 + best_f.abs()) {
                status = SolveStatus::Optimal;
                break;
            }
            window_start = best_f;
        }
    }

    let mut sol = Solution::optimal(p, best_x, MethodTag::Subgrad, iters)?;
    sol.status = status;
    Ok(sol)
}
