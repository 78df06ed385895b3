//! Social-welfare electricity pricing by dual decomposition.
//!
//! Users choose consumption `x_i ∈ [0, cap_i]` against a price, the provider
//! chooses supply `s ∈ [0, L]`, and the price moves with excess demand. The
//! coupling `Σx_i ≤ s ≤ L` separates the agents' subproblems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::LinearConstraint;
use crate::nsfunc::{FuncExpr, PwUni};
use crate::shadow::{perturb_and_resolve, verify_upper_bound, PerturbationReport};
use crate::solver::{Bound, GridSpec, Method, Problem, Sense};

/// Row of `Σx_i - s ≤ 0` in [`scenario_to_problem`].
pub const COUPLING_ROW: usize = 0;
/// Row of `s ≤ L` in [`scenario_to_problem`].
pub const CAPACITY_ROW: usize = 1;

const SHAPE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct UserSpec {
    pub id: String,
    /// Utility in coordinate 0.
    pub utility: PwUni,
    pub cap: f64,
}

/// Interior breakpoints of `pw` strictly inside `(0, hi)`.
fn inner_breaks(pw: &PwUni, hi: f64) -> impl Iterator<Item = f64> + '_ {
    pw.breaks
        .iter()
        .copied()
        .filter(move |&a| a > 0.0 && a < hi)
}

impl UserSpec {
    /// Validates `U(0) = 0`, concavity and monotonicity on `[0, cap]`.
    pub fn new(id: impl Into<String>, utility: PwUni, cap: f64) -> Result<Self> {
        let id = id.into();
        let bad = |msg: String| Err(Error::InvalidScenario(format!("user {id}: {msg}")));
        if !(cap > 0.0 && cap.is_finite()) {
            return bad(format!("cap {cap} must be positive"));
        }
        if utility.var != 0 {
            return bad("utility must be a function of coordinate 0".into());
        }
        if utility.value_at(0.0).abs() > SHAPE_TOL {
            return bad("utility must vanish at 0".into());
        }
        for (k, piece) in utility.pieces.iter().enumerate() {
            let (lo, hi) = utility.interval(k);
            let (lo, hi) = (lo.max(0.0), hi.min(cap));
            if lo < hi && !piece.is_concave_on(lo, hi, 1e-12) {
                return bad(format!("piece {k} is not concave on [0, cap]"));
            }
        }
        for (a, left, right) in utility.kink_slopes() {
            if a > 0.0 && a < cap && right > left + 1e-12 * (1.0 + left.abs()) {
                return bad(format!("marginal utility rises at {a}"));
            }
        }
        // left derivative at cap
        let k = utility.piece_index(cap) - usize::from(utility.breaks.contains(&cap));
        if utility.pieces[k].deriv(cap) < -SHAPE_TOL {
            return bad("utility decreases before cap".into());
        }
        Ok(Self { id, utility, cap })
    }

    /// Piecewise-linear utility through the origin.
    pub fn piecewise_linear(
        id: impl Into<String>,
        breaks: Vec<f64>,
        slopes: &[f64],
        cap: f64,
    ) -> Result<Self> {
        Self::new(
            id,
            PwUni::piecewise_linear(0, breaks, slopes, 0.0, 0.0)?,
            cap,
        )
    }

    pub fn value(&self, x: f64) -> f64 {
        self.utility.value_at(x)
    }

    /// `(U'(x+), U'(x-))`; for concave utilities the first is the smaller.
    pub fn marginal_interval(&self, x: f64) -> (f64, f64) {
        let k = self.utility.piece_index(x);
        let right = self.utility.pieces[k].deriv(x);
        let left = if k > 0 && self.utility.breaks[k - 1] == x {
            self.utility.pieces[k - 1].deriv(x)
        } else {
            right
        };
        (right, left)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cost {
    /// `c2 s² + c1 s`
    Quadratic { c2: f64, c1: f64 },
    /// Convex piecewise polynomial in coordinate 0 with `C(0) = 0`.
    Piecewise(PwUni),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderSpec {
    pub cost: Cost,
    pub capacity: f64,
}

impl ProviderSpec {
    pub fn new(cost: Cost, capacity: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidScenario(format!("provider: {msg}")));
        if !(capacity > 0.0 && capacity.is_finite()) {
            return bad(format!("capacity {capacity} must be positive"));
        }
        match &cost {
            Cost::Quadratic { c2, c1 } => {
                if !(c2.is_finite() && c1.is_finite() && *c2 >= 0.0 && *c1 >= 0.0) {
                    return bad("quadratic cost needs c2 >= 0 and c1 >= 0".into());
                }
            }
            Cost::Piecewise(pw) => {
                if pw.var != 0 {
                    return bad("cost must be a function of coordinate 0".into());
                }
                if pw.value_at(0.0).abs() > SHAPE_TOL {
                    return bad("cost must vanish at 0".into());
                }
                if FuncExpr::PwUni(pw.clone()).check_convex().is_err() {
                    return bad("cost must be convex".into());
                }
                if pw.pieces[pw.piece_index(0.0)].deriv(0.0) < -SHAPE_TOL {
                    return bad("cost must be nondecreasing".into());
                }
            }
        }
        Ok(Self { cost, capacity })
    }

    pub fn cost(&self, s: f64) -> f64 {
        match &self.cost {
            Cost::Quadratic { c2, c1 } => c2 * s * s + c1 * s,
            Cost::Piecewise(pw) => pw.value_at(s),
        }
    }

    /// Right derivative of the cost at `s`.
    pub fn marginal_cost(&self, s: f64) -> f64 {
        match &self.cost {
            Cost::Quadratic { c2, c1 } => 2.0 * c2 * s + c1,
            Cost::Piecewise(pw) => pw.pieces[pw.piece_index(s)].deriv(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub users: Vec<UserSpec>,
    pub provider: ProviderSpec,
}

impl Scenario {
    pub fn new(users: Vec<UserSpec>, provider: ProviderSpec) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidScenario("need at least one user".into()));
        }
        Ok(Self { users, provider })
    }
}

/// Smallest and largest maximizers of `g` over `cands`, with values equal
/// up to a relative `1e-12` treated as ties.
fn argmax_range(cands: &mut [f64], g: impl Fn(f64) -> f64) -> (f64, f64) {
    cands.sort_by(f64::total_cmp);
    let vals: Vec<f64> = cands.iter().map(|&x| g(x)).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tie = |v: f64| v >= top - 1e-12 * (1.0 + top.abs());
    let lo = cands[vals.iter().position(|&v| tie(v)).expect("nonempty")];
    let hi = cands[vals.iter().rposition(|&v| tie(v)).expect("nonempty")];
    (lo, hi)
}

fn piece_candidates(pw: &PwUni, hi: f64, price: f64) -> Vec<f64> {
    let mut cands = vec![0.0, hi];
    cands.extend(inner_breaks(pw, hi));
    for (k, piece) in pw.pieces.iter().enumerate() {
        if piece.degree() >= 2 {
            let (a, b) = pw.interval(k);
            cands.extend(
                piece
                    .deriv_solutions(price)
                    .into_iter()
                    .filter(|&t| t > a.max(0.0) && t < b.min(hi)),
            );
        }
    }
    cands
}

/// Interval of maximizers of `U(x) - price·x` over `[0, cap]`.
pub fn user_response_set(u: &UserSpec, price: f64) -> (f64, f64) {
    let mut cands = piece_candidates(&u.utility, u.cap, price);
    argmax_range(&mut cands, |x| u.value(x) - price * x)
}

/// `argmax U(x) - price·x` over `[0, cap]`, smallest maximizer on ties.
pub fn user_best_response(u: &UserSpec, price: f64) -> f64 {
    user_response_set(u, price).0
}

/// Interval of maximizers of `price·s - C(s)` over `[0, L]`.
pub fn provider_response_set(p: &ProviderSpec, price: f64) -> (f64, f64) {
    match &p.cost {
        Cost::Quadratic { c2, c1 } if *c2 > 0.0 => {
            let s = ((price - c1) / (2.0 * c2)).clamp(0.0, p.capacity);
            (s, s)
        }
        Cost::Quadratic { c1, .. } => {
            if price > *c1 {
                (p.capacity, p.capacity)
            } else if price == *c1 {
                (0.0, p.capacity)
            } else {
                (0.0, 0.0)
            }
        }
        Cost::Piecewise(pw) => {
            let mut cands = piece_candidates(pw, p.capacity, price);
            argmax_range(&mut cands, |s| price * s - p.cost(s))
        }
    }
}

/// `argmax price·s - C(s)` over `[0, L]`, smallest maximizer on ties.
pub fn provider_best_response(p: &ProviderSpec, price: f64) -> f64 {
    provider_response_set(p, price).0
}

/// Best responses whose excess demand is the minimum-norm element of the
/// dual supergradient: demand and supply are matched whenever the response
/// sets allow it, otherwise the nearest endpoints are used.
pub fn clearing_responses(sc: &Scenario, price: f64) -> (Vec<f64>, f64) {
    let sets: Vec<(f64, f64)> = sc
        .users
        .iter()
        .map(|u| user_response_set(u, price))
        .collect();
    let (s_lo, s_hi) = provider_response_set(&sc.provider, price);
    let d_lo: f64 = sets.iter().map(|r| r.0).sum();
    let d_hi: f64 = sets.iter().map(|r| r.1).sum();
    let mut x: Vec<f64> = sets.iter().map(|r| r.0).collect();
    if d_lo > s_hi {
        return (x, s_hi);
    }
    if d_hi < s_lo {
        return (sets.iter().map(|r| r.1).collect(), s_lo);
    }
    // smallest clearing quantity, filled in user order
    let q = d_lo.max(s_lo);
    let mut need = q - d_lo;
    for (xi, r) in x.iter_mut().zip(&sets) {
        let add = need.min(r.1 - r.0);
        *xi += add;
        need -= add;
    }
    (x, q)
}

fn check_range(v: f64, hi: f64, what: &str) -> Result<()> {
    if !(v >= -SHAPE_TOL && v <= hi + SHAPE_TOL) {
        return Err(Error::Domain(format!("{what} = {v} outside [0, {hi}]")));
    }
    Ok(())
}

/// `ΣU_i(x_i) - C(s)`; without `s` the supply is `Σx_i`.
pub fn welfare(sc: &Scenario, x: &[f64], s: Option<f64>) -> Result<f64> {
    crate::error::check_dim(sc.users.len(), x.len())?;
    for (u, &xi) in sc.users.iter().zip(x) {
        check_range(xi, u.cap, &format!("consumption of {}", u.id))?;
    }
    let s = s.unwrap_or_else(|| x.iter().sum());
    check_range(s, sc.provider.capacity, "supply")?;
    let utility: f64 = sc.users.iter().zip(x).map(|(u, &xi)| u.value(xi)).sum();
    Ok(utility - sc.provider.cost(s))
}

/// Lagrangian dual function: `max_{x, s} ΣU_i(x_i) - C(s) - λ(Σx_i - s)`.
pub fn dual_value(sc: &Scenario, price: f64) -> f64 {
    let users: f64 = sc
        .users
        .iter()
        .map(|u| {
            let x = user_best_response(u, price);
            u.value(x) - price * x
        })
        .sum();
    let s = provider_best_response(&sc.provider, price);
    users + price * s - sc.provider.cost(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualParams {
    pub alpha0: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
}

impl Default for DualParams {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            max_iter: 20_000,
            tol_primal: 1e-4,
            tol_dual: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingResult {
    pub price: f64,
    /// Averages of the users' responses over the latest half of the iterates.
    pub allocations: Vec<f64>,
    /// Average of the provider's responses over the same iterates.
    pub supply: f64,
    pub welfare: f64,
    pub iterations: usize,
    /// `|Σx_i - s|` of the averages.
    pub residual: f64,
    pub converged: bool,
}

/// One dual iterate: the price and the best responses to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualStep {
    pub price: f64,
    pub allocations: Vec<f64>,
    pub supply: f64,
    pub dual_value: f64,
}

/// Projected dual ascent from price 0 with steps `alpha0 / sqrt(k + 1)`,
/// driven by [`clearing_responses`]. Allocations are averaged over the latest
/// half of the iterates so the start-up transient does not linger.
pub fn dual_ascent(sc: &Scenario, params: &DualParams) -> Result<PricingResult> {
    run_dual(sc, params, None)
}

/// [`dual_ascent`] that also records every iterate.
pub fn dual_ascent_with_trace(
    sc: &Scenario,
    params: &DualParams,
) -> Result<(PricingResult, Vec<DualStep>)> {
    let mut trace = Vec::new();
    let res = run_dual(sc, params, Some(&mut trace))?;
    Ok((res, trace))
}

fn run_dual(
    sc: &Scenario,
    params: &DualParams,
    mut trace: Option<&mut Vec<DualStep>>,
) -> Result<PricingResult> {
    if !(params.alpha0 > 0.0 && params.alpha0.is_finite()) || params.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "need alpha0 > 0 and max_iter >= 1".into(),
        ));
    }
    let k = sc.users.len();
    let mut price = 0.0;
    // prefix sums of (x_1..x_k, s) for averaging over the latest half
    let mut prefix: Vec<Vec<f64>> = vec![vec![0.0; k + 1]];
    let mut avg_x = vec![0.0; k];
    let mut avg_s = 0.0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..params.max_iter {
        iterations = it + 1;
        let (x, s) = clearing_responses(sc, price);
        if let Some(t) = trace.as_deref_mut() {
            t.push(DualStep {
                price,
                allocations: x.clone(),
                supply: s,
                dual_value: dual_value(sc, price),
            });
        }
        let mut next_sum = prefix[it].clone();
        for (c, v) in next_sum.iter_mut().zip(x.iter().chain(std::iter::once(&s))) {
            *c += v;
        }
        prefix.push(next_sum);
        let half = iterations / 2;
        let count = (iterations - half) as f64;
        for j in 0..k {
            avg_x[j] = (prefix[iterations][j] - prefix[half][j]) / count;
        }
        avg_s = (prefix[iterations][k] - prefix[half][k]) / count;

        let excess: f64 = x.iter().sum::<f64>() - s;
        let next = (price + params.alpha0 / (iterations as f64).sqrt() * excess).max(0.0);
        let step = (next - price).abs();
        price = next;
        residual = (avg_x.iter().sum::<f64>() - avg_s).abs();
        if residual <= params.tol_primal && step <= params.tol_dual {
            converged = true;
            break;
        }
    }

    let welfare = welfare(sc, &avg_x, Some(avg_s))?;
    Ok(PricingResult {
        price,
        allocations: avg_x,
        supply: avg_s,
        welfare,
        iterations,
        residual,
        converged,
    })
}

/// Minimization of negated welfare over `(x_1..x_k, s)` with rows
/// `Σx_i - s ≤ 0`, `s ≤ L` and boxes `0 ≤ x_i ≤ cap_i`, `s ≥ 0`.
pub fn scenario_to_problem(sc: &Scenario) -> Result<Problem> {
    let k = sc.users.len();
    let n = k + 1;
    let mut terms = Vec::with_capacity(n);
    for (i, u) in sc.users.iter().enumerate() {
        let mut pw = u.utility.negated();
        pw.var = i;
        terms.push((1.0, FuncExpr::PwUni(pw)));
    }
    match &sc.provider.cost {
        Cost::Quadratic { c2, c1 } => {
            let mut c = vec![0.0; n];
            c[k] = *c1;
            if *c2 > 0.0 {
                let mut q = vec![vec![0.0; n]; n];
                q[k][k] = 2.0 * c2;
                terms.push((1.0, FuncExpr::quadratic(q, c, 0.0)?));
            } else if *c1 > 0.0 {
                terms.push((1.0, FuncExpr::affine(c, 0.0)?));
            }
        }
        Cost::Piecewise(pw) => {
            if !pw.is_linear() {
                return Err(Error::UnsupportedCost(
                    "piecewise cost must have linear pieces".into(),
                ));
            }
            let mut pw = pw.clone();
            pw.var = k;
            terms.push((1.0, FuncExpr::PwUni(pw)));
        }
    }
    let objective = FuncExpr::sum(terms)?;

    let mut coupling = vec![1.0; n];
    coupling[k] = -1.0;
    let mut cap_row = vec![0.0; n];
    cap_row[k] = 1.0;
    let constraints = vec![
        LinearConstraint::new(coupling, 0.0)?,
        LinearConstraint::new(cap_row, sc.provider.capacity)?,
    ];
    let mut bounds: Vec<Bound> = sc
        .users
        .iter()
        .map(|u| Bound { lo: 0.0, hi: u.cap })
        .collect();
    bounds.push(Bound {
        lo: 0.0,
        hi: f64::INFINITY,
    });
    Problem::new(n, objective, Sense::Min, constraints, Some(bounds))
}

/// Method used to re-solve a scenario: exact LP when everything is piecewise
/// linear, otherwise the grid oracle (at most two users).
pub fn scenario_method(sc: &Scenario, max_delta: f64) -> Result<Method> {
    let p = scenario_to_problem(sc)?;
    if p.min_objective().is_piecewise_linear() {
        return Ok(Method::Lp);
    }
    let n = p.dim();
    if n > 3 {
        return Err(Error::DimensionTooLarge(n));
    }
    let lo = vec![0.0; n];
    let mut hi: Vec<f64> = sc.users.iter().map(|u| u.cap).collect();
    hi.push(sc.provider.capacity + max_delta.max(0.0));
    let points = if n <= 2 { 201 } else { 101 };
    Ok(Method::Grid(GridSpec::new(lo, hi, points)?))
}

/// Perturbs the capacity by each `ΔL`, re-solves the welfare maximum and
/// checks the welfare-gain quotient against `price` on the small-`ΔL` tail.
pub fn verify_capacity_shadow(
    sc: &Scenario,
    deltas: &[f64],
    price: f64,
    tail: usize,
    tol: f64,
) -> Result<PerturbationReport> {
    let p = scenario_to_problem(sc)?;
    let max_delta = deltas.iter().copied().fold(0.0, f64::max);
    let method = scenario_method(sc, max_delta)?;
    let mut report = perturb_and_resolve(&p, CAPACITY_ROW, deltas, &method)?;
    verify_upper_bound(&mut report, price, tail, tol)?;
    Ok(report)
}
