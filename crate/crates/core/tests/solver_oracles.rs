mod common;

use common::*;
use shadowprice::nsfunc::{FuncExpr, SmoothPiece};
use shadowprice::solver::{
    project, solve, solve_oracle_grid, solve_pl_exact, solve_subgradient, GridSpec, Method,
    SubgradParams,
};

#[test]
fn subgradient_stays_feasible_and_above_the_optimum() {
    let mut rng = rng(31);
    for k in 0..15 {
        let p = random_pl_problem(&mut rng, 1 + k % 3);
        let exact = solve_pl_exact(&p).unwrap().value.unwrap();
        let sg = solve_subgradient(&p, &SubgradParams::default()).unwrap();
        let x = sg.x.unwrap();
        assert!(sg.value.unwrap() >= exact - 1e-9, "instance {k}");
        assert!(
            p.is_feasible(&x, 1e-8),
            "instance {k}: violation {}",
            p.max_violation(&x)
        );
    }
}

/// Upper bound on the norm of any generator of `f`.
fn generator_norm_bound(f: &FuncExpr) -> f64 {
    match f {
        FuncExpr::Leaf(SmoothPiece::Affine { c, .. }) => dot(c, c).sqrt(),
        FuncExpr::Max(children) => children
            .iter()
            .map(generator_norm_bound)
            .fold(0.0, f64::max),
        FuncExpr::Sum(terms) => terms
            .iter()
            .map(|t| t.weight.abs() * generator_norm_bound(&t.child))
            .sum(),
        FuncExpr::PwUni(pw) => pw
            .pieces
            .iter()
            .map(|p| p.coeffs().get(1).copied().unwrap_or(0.0).abs())
            .fold(0.0, f64::max),
        other => panic!("not piecewise linear: {other:?}"),
    }
}

// The defaults do not reach 1e-3 on every instance here: with alpha0 = 1 the
// zigzag across a sharp kink leaves gaps up to about 7e-3. What holds at any
// stopping point is the classical best-iterate bound.
#[test]
fn subgradient_gap_within_best_iterate_bound() {
    let mut rng = rng(31);
    let params = SubgradParams::default();
    let mut within_1e3 = 0;
    for k in 0..15 {
        let p = random_pl_problem(&mut rng, 1 + k % 3);
        let exact = solve_pl_exact(&p).unwrap();
        let sg = solve_subgradient(&p, &params).unwrap();
        let x0 = project(&p, &vec![0.0; p.dim()]).unwrap();
        let xs = exact.x.unwrap();
        let r2: f64 = x0.iter().zip(&xs).map(|(a, b)| (a - b).powi(2)).sum();
        let g = generator_norm_bound(p.objective());
        let steps: Vec<f64> = (1..=sg.iterations)
            .map(|i| params.alpha0 / (i as f64).sqrt())
            .collect();
        let bound = (r2 + g * g * steps.iter().map(|a| a * a).sum::<f64>())
            / (2.0 * steps.iter().sum::<f64>());
        let gap = sg.value.unwrap() - exact.value.unwrap();
        assert!(gap <= bound, "instance {k}: gap {gap} exceeds {bound}");
        if gap <= 1e-3 {
            within_1e3 += 1;
        }
    }
    println!("{within_1e3}/15 instances within 1e-3 at default parameters");
}

#[test]
fn exact_optimum_is_feasible_and_consistent() {
    let mut rng = rng(32);
    for k in 0..40 {
        let p = random_pl_problem(&mut rng, 1 + k % 4);
        let s = solve_pl_exact(&p).unwrap();
        assert!(s.is_optimal());
        let x = s.x.as_ref().unwrap();
        for c in p.constraints() {
            assert!(c.slack(x) <= 1e-8);
        }
        let v = p.objective().eval(x).unwrap();
        assert!((v - s.value.unwrap()).abs() <= 1e-9 * (1.0 + v.abs()));
        for &i in &s.active {
            assert!(p.constraints()[i].is_active(x));
        }
    }
}

#[test]
fn grid_oracle_agrees_with_exact_solver() {
    let mut rng = rng(33);
    for k in 0..20 {
        let n = 1 + k % 2;
        let p = random_pl_problem(&mut rng, n);
        let grid = GridSpec::uniform(n, -2.0, 2.0, 41).unwrap();
        let a = solve_pl_exact(&p).unwrap().value.unwrap();
        let b = solve_oracle_grid(&p, &grid).unwrap().value.unwrap();
        assert!((a - b).abs() <= 1e-6, "instance {k}: {a} vs {b}");
    }
}

#[test]
fn method_dispatch_matches_direct_calls() {
    let mut rng = rng(34);
    let p = random_pl_problem(&mut rng, 2);
    assert_eq!(solve(&p, &Method::Lp).unwrap(), solve_pl_exact(&p).unwrap());
    let params = SubgradParams::default();
    assert_eq!(
        solve(&p, &Method::Subgradient(params)).unwrap(),
        solve_subgradient(&p, &params).unwrap()
    );
}
