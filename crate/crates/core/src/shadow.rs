//! Shadow-price bounds checked by perturbing one constraint level at a time
//! and re-solving.
//!
//! Values are taken in minimization form, so for a maximization problem the
//! quotient `-Δf/Δb` is the welfare gain per unit of resource.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{
    active_flags, kkt_residual, multiplier_interval, multiplier_vector, MultiplierObjective,
};
use crate::nsfunc::{subdifferential, Tolerances};
use crate::solver::{solve, ConstraintOrigin, Method, MethodTag, Problem, SolveStatus};

pub const DEFAULT_DELTAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const DEFAULT_TAIL: usize = 3;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub delta_b: f64,
    pub status: SolveStatus,
    pub value: Option<f64>,
    pub delta_f: Option<f64>,
    /// `-Δf/Δb`
    pub quotient: Option<f64>,
    pub lambda_ref: Option<f64>,
    /// Set only on rows that took part in a check.
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub constraint: usize,
    pub method: MethodTag,
    pub base_level: f64,
    pub base_value: f64,
    pub rows: Vec<PerturbationRow>,
    /// Conjunction of every check run on this report.
    pub verdict: Option<Verdict>,
}

/// Re-solves with `b_i` replaced by `b_i + Δb` for each `Δb`, in input order.
/// A failed re-solve is recorded on its row; a failed base solve is an error.
pub fn perturb_and_resolve(
    p: &Problem,
    i: usize,
    deltas: &[f64],
    method: &Method,
) -> Result<PerturbationReport> {
    if i >= p.constraints().len() {
        return Err(Error::InvalidArgument(format!(
            "constraint index {i} out of range for {} constraints",
            p.constraints().len()
        )));
    }
    if let Some(d) = deltas.iter().find(|d| !d.is_finite() || **d == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation {d} must be finite and nonzero"
        )));
    }
    let base = solve(p, method).map_err(|e| Error::BaseUnsolved(e.to_string()))?;
    let base_value = match base.min_value(p) {
        Some(v) if base.is_optimal() => v,
        _ => return Err(Error::BaseUnsolved(format!("status {:?}", base.status))),
    };
    let b = p.constraints()[i].b;

    let mut rows = Vec::with_capacity(deltas.len());
    for &db in deltas {
        let mut row = PerturbationRow {
            delta_b: db,
            status: SolveStatus::Optimal,
            value: None,
            delta_f: None,
            quotient: None,
            lambda_ref: None,
            verdict: None,
            error: None,
        };
        match p
            .with_rhs(i, b + db)
            .and_then(|q| Ok((solve(&q, method)?, q)))
        {
            Ok((sol, q)) => {
                row.status = sol.status;
                if let (true, Some(v)) = (sol.is_optimal(), sol.min_value(&q)) {
                    let df = v - base_value;
                    row.value = Some(v);
                    row.delta_f = Some(df);
                    row.quotient = Some(-df / db);
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    Ok(PerturbationReport {
        constraint: i,
        method: method.tag(),
        base_level: b,
        base_value,
        rows,
        verdict: None,
    })
}

/// Indices of usable rows of one sign, smallest `|Δb|` first, limited to `tail`.
fn tail_rows(report: &PerturbationReport, positive: bool, tail: usize) -> Result<Vec<usize>> {
    if tail == 0 {
        return Err(Error::InvalidArgument("tail must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..report.rows.len())
        .filter(|&k| {
            let r = &report.rows[k];
            (r.delta_b > 0.0) == positive && r.quotient.is_some_and(f64::is_finite)
        })
        .collect();
    if idx.len() < tail {
        return Err(Error::InsufficientRows {
            needed: tail,
            found: idx.len(),
        });
    }
    idx.sort_by(|&a, &b| {
        report.rows[a]
            .delta_b
            .abs()
            .total_cmp(&report.rows[b].delta_b.abs())
            .then(a.cmp(&b))
    });
    idx.truncate(tail);
    Ok(idx)
}

fn apply_check(
    report: &mut PerturbationReport,
    rows: &[usize],
    lambda: f64,
    ok: impl Fn(f64) -> bool,
) -> bool {
    let mut pass = true;
    for &k in rows {
        let row = &mut report.rows[k];
        let good = ok(row.quotient.expect("usable row"));
        row.lambda_ref = Some(lambda);
        row.verdict = Some(if good { Verdict::Pass } else { Verdict::Fail });
        pass &= good;
    }
    let prior = report.verdict != Some(Verdict::Fail);
    report.verdict = Some(if pass && prior {
        Verdict::Pass
    } else {
        Verdict::Fail
    });
    pass
}

/// Relaxation side: `-Δf/Δb ≤ λ + tol` on the `tail` smallest positive `Δb`.
/// Annotates the checked rows and returns whether all of them pass.
pub fn verify_upper_bound(
    report: &mut PerturbationReport,
    lambda: f64,
    tail: usize,
    tol: f64,
) -> Result<bool> {
    let rows = tail_rows(report, true, tail)?;
    Ok(apply_check(report, &rows, lambda, |q| q <= lambda + tol))
}

/// Tightening side: `-Δf/Δb ≥ λmax - tol` on the `tail` smallest `|Δb|`, `Δb < 0`.
pub fn verify_lower_bound_tightening(
    report: &mut PerturbationReport,
    lambda_max: f64,
    tail: usize,
    tol: f64,
) -> Result<bool> {
    let rows = tail_rows(report, false, tail)?;
    Ok(apply_check(report, &rows, lambda_max, |q| {
        q >= lambda_max - tol
    }))
}

/// CSV rendering with columns `delta_b,value,delta_f,quotient,lambda_ref,verdict`.
pub fn report_to_csv(report: &PerturbationReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record([
        "delta_b",
        "value",
        "delta_f",
        "quotient",
        "lambda_ref",
        "verdict",
    ])
    .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        let verdict = match r.verdict {
            Some(Verdict::Pass) => "pass",
            Some(Verdict::Fail) => "fail",
            None => "",
        };
        w.write_record([
            r.delta_b.to_string(),
            opt(r.value),
            opt(r.delta_f),
            opt(r.quotient),
            opt(r.lambda_ref),
            verdict.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProbe {
    pub base_level: f64,
    pub h: f64,
    /// `(v(b + h) - v(b)) / h`
    pub right: Option<f64>,
    /// `(v(b) - v(b - h)) / h`
    pub left: Option<f64>,
}

/// One-sided difference quotients of the optimal-value function in `b_i`.
pub fn value_probe(p: &Problem, i: usize, hs: &[f64], method: &Method) -> Result<Vec<ValueProbe>> {
    if let Some(h) = hs.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "probe step {h} must be positive"
        )));
    }
    let mut deltas = Vec::with_capacity(2 * hs.len());
    for &h in hs {
        deltas.push(h);
        deltas.push(-h);
    }
    let report = perturb_and_resolve(p, i, &deltas, method)?;
    Ok(hs
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let up = &report.rows[2 * k];
            let down = &report.rows[2 * k + 1];
            ValueProbe {
                base_level: report.base_level,
                h,
                right: up.delta_f.map(|d| d / h),
                left: down.delta_f.map(|d| -d / h),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMultipliers {
    pub origin: ConstraintOrigin,
    pub active: bool,
    /// Smallest multiplier of this constraint over the KKT set.
    pub lo: f64,
    /// Largest multiplier of this constraint over the KKT set.
    pub hi: f64,
    pub negative_normal: bool,
}

/// Multipliers at a point for the constraints and finite bounds of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierReport {
    pub x: Vec<f64>,
    pub generators: Vec<Vec<f64>>,
    pub constraints: Vec<ConstraintMultipliers>,
    /// Representative vector: smallest `Σλ`, aligned with `constraints`.
    pub min_sum: Vec<f64>,
    pub normals_independent: bool,
    pub residual: f64,
}

/// Multiplier sets at `x` for the minimization form of `p`. With one active
/// constraint this is its interval; with several, per-component extremes.
pub fn multiplier_report(p: &Problem, x: &[f64]) -> Result<MultiplierReport> {
    let tol = Tolerances::default();
    let sub = subdifferential(p.min_objective(), x, &tol)?;
    let (cs, origins) = p.all_constraints();
    let active = active_flags(x, &cs);
    let n_active = active.iter().filter(|a| **a).count();

    let mut rows = Vec::with_capacity(cs.len());
    let (min_sum, independent) = if n_active == 0 {
        if multiplier_vector(&sub, &cs, &active, MultiplierObjective::MinSum).is_err() {
            return Err(Error::NoKktPoint);
        }
        (vec![0.0; cs.len()], true)
    } else {
        let v = multiplier_vector(&sub, &cs, &active, MultiplierObjective::MinSum)?;
        (v.lambda, v.normals_independent)
    };
    for (k, c) in cs.iter().enumerate() {
        let (lo, hi) = if !active[k] {
            (0.0, 0.0)
        } else if n_active == 1 {
            let iv = multiplier_interval(&sub, c, true)?;
            if iv.empty {
                return Err(Error::NoKktPoint);
            }
            (iv.lo, iv.hi)
        } else {
            let lo = multiplier_vector(&sub, &cs, &active, MultiplierObjective::MinComponent(k))?;
            let hi = multiplier_vector(&sub, &cs, &active, MultiplierObjective::MaxComponent(k))?;
            (lo.lambda[k], hi.lambda[k])
        };
        rows.push(ConstraintMultipliers {
            origin: origins[k],
            active: active[k],
            lo,
            hi,
            negative_normal: c.has_negative_components(),
        });
    }
    let residual = kkt_residual(&sub, &cs, &min_sum)?;
    Ok(MultiplierReport {
        x: x.to_vec(),
        generators: sub.generators().to_vec(),
        constraints: rows,
        min_sum,
        normals_independent: independent,
        residual,
    })
}
