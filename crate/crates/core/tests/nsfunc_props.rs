mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use shadowprice::nsfunc::{
    clarke_dir_deriv, clarke_dir_estimate, dir_deriv, expansion_residual, subdifferential,
    FuncExpr, Phi, PwUni, SmoothPiece, Tolerances,
};

/// Convex expression in two variables with integer data, so points on the
/// half-integer lattice regularly sit on kinks.
fn convex_expr(seed: u64) -> FuncExpr {
    let mut rng = rng(seed);
    let int =
        |rng: &mut rand_chacha::ChaCha8Rng, lo: i32, hi: i32| rng.random_range(lo..=hi) as f64;
    let pieces: Vec<FuncExpr> = (0..rng.random_range(2..=4))
        .map(|_| {
            FuncExpr::affine(
                vec![int(&mut rng, -2, 2), int(&mut rng, -2, 2)],
                int(&mut rng, -1, 1),
            )
            .unwrap()
        })
        .collect();
    let mut terms = vec![(1.0, FuncExpr::max(pieces).unwrap())];
    if rng.random_bool(0.5) {
        let var = rng.random_range(0..2);
        let s0 = int(&mut rng, -2, 0);
        let pw = PwUni::piecewise_linear(var, vec![-0.5, 0.5], &[s0, s0 + 1.0, s0 + 3.0], 0.0, 0.0)
            .unwrap();
        terms.push((int(&mut rng, 1, 2), FuncExpr::PwUni(pw)));
    }
    if rng.random_bool(0.5) {
        let q = positive_definite(&mut rng, 2, 0.1);
        let leaf = FuncExpr::quadratic(q, vec![0.0, 0.0], 0.0).unwrap();
        let lin = FuncExpr::affine(vec![1.0, -1.0], 0.0).unwrap();
        terms.push((0.5, FuncExpr::max(vec![leaf, lin]).unwrap()));
    }
    if rng.random_bool(0.3) {
        let inner = FuncExpr::affine(vec![int(&mut rng, -1, 1), 1.0], 0.0).unwrap();
        let comp = FuncExpr::comp(0.0, vec![(0.25, Phi::Exp, inner)]).unwrap();
        terms.push((1.0, comp));
    }
    let f = FuncExpr::sum(terms).unwrap();
    f.check_convex()
        .expect("generator builds convex expressions");
    f
}

fn lattice() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-4i32..=4).prop_map(|k| k as f64 * 0.5), 2)
}

fn direction() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2)
        .prop_filter("nonzero", |d| d.iter().any(|v| v.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generators_support_the_function(seed in 0u64..1000, x in lattice(), ys in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 50)) {
        let f = convex_expr(seed);
        let fx = f.eval(&x).unwrap();
        let sub = subdifferential(&f, &x, &Tolerances::default()).unwrap();
        for g in sub.generators() {
            for y in &ys {
                let lin = fx + dot(g, y) - dot(g, &x);
                prop_assert!(f.eval(y).unwrap() >= lin - 1e-9 * (1.0 + lin.abs()));
            }
        }
    }

    #[test]
    fn directional_derivative_below_clarke(seed in 0u64..1000, x in lattice(), d in direction()) {
        let f = convex_expr(seed);
        let tol = Tolerances::default();
        let dd = dir_deriv(&f, &x, &d, &tol).unwrap();
        let cd = clarke_dir_deriv(&f, &x, &d, &tol).unwrap();
        prop_assert!(dd <= cd + 1e-12);
        // convex expressions are regular
        prop_assert!((dd - cd).abs() <= 1e-9 * (1.0 + cd.abs()));
    }

    #[test]
    fn positive_homogeneity(seed in 0u64..1000, x in lattice(), d in direction(), alpha in 0.01f64..100.0) {
        let f = convex_expr(seed);
        let tol = Tolerances::default();
        let dd = dir_deriv(&f, &x, &d, &tol).unwrap();
        let scaled: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let ds = dir_deriv(&f, &x, &scaled, &tol).unwrap();
        prop_assert!((ds - alpha * dd).abs() <= 1e-9 * (1.0 + (alpha * dd).abs()));
    }

    #[test]
    fn sublinearity(seed in 0u64..1000, x in lattice(), d1 in direction(), d2 in direction()) {
        let f = convex_expr(seed);
        let tol = Tolerances::default();
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let lhs = dir_deriv(&f, &x, &sum, &tol).unwrap();
        let rhs = dir_deriv(&f, &x, &d1, &tol).unwrap() + dir_deriv(&f, &x, &d2, &tol).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn smooth_leaf_has_gradient_singleton(seed in 0u64..1000, x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let mut rng = rng(seed);
        let leaf = SmoothPiece::quadratic(symmetric(&mut rng, 3, 2.0), uniform_vec(&mut rng, 3, -1.0, 1.0), 0.5).unwrap();
        let sub = subdifferential(&FuncExpr::Leaf(leaf.clone()), &x, &Tolerances::default()).unwrap();
        prop_assert_eq!(sub.len(), 1);
        for (a, b) in sub.generators()[0].iter().zip(leaf.gradient(&x)) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn expansion_residual_is_little_o(seed in 0u64..1000, x in lattice(), d in direction()) {
        let f = convex_expr(seed);
        let r1 = expansion_residual(&f, &x, &d, 1e-3).unwrap() / 1e-3;
        let r2 = expansion_residual(&f, &x, &d, 1e-5).unwrap() / 1e-5;
        prop_assert!(r2 <= r1 + 1e-7, "{} then {}", r1, r2);
        prop_assert!(r2 <= 1e-3);
    }
}

#[test]
fn clarke_derivative_matches_sampled_estimate() {
    let tol = Tolerances::default();
    for seed in 0..10 {
        let f = convex_expr(seed);
        let mut rng = rng(100 + seed);
        let x: Vec<f64> = (0..2)
            .map(|_| rng.random_range(-4i32..=4) as f64 * 0.5)
            .collect();
        let d = unit_vector(&mut rng, 2);
        let exact = clarke_dir_deriv(&f, &x, &d, &tol).unwrap();
        let est = clarke_dir_estimate(|y| f.eval(y), &x, &d, 1e-7, 64, 1e-9, seed).unwrap();
        assert!(
            (exact - est).abs() <= 1e-4 * (1.0 + exact.abs()),
            "seed {seed}: {exact} vs {est}"
        );
    }
}
