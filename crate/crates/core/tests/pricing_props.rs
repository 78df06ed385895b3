mod common;

use common::*;
use shadowprice::nsfunc::PwUni;
use shadowprice::pricing::{
    dual_ascent, dual_ascent_with_trace, provider_best_response, scenario_method,
    scenario_to_problem, user_best_response, welfare, Cost, DualParams, ProviderSpec, Scenario,
    UserSpec,
};
use shadowprice::solver::solve;

fn desk() -> Scenario {
    Scenario::new(
        vec![
            UserSpec::piecewise_linear("u1", vec![1.0], &[4.0, 2.0], 2.0).unwrap(),
            UserSpec::piecewise_linear("u2", vec![1.0], &[3.0, 1.0], 3.0).unwrap(),
        ],
        ProviderSpec::new(Cost::Quadratic { c2: 0.5, c1: 0.0 }, 2.0).unwrap(),
    )
    .unwrap()
}

/// Concave piecewise-linear users and a convex piecewise-linear cost.
fn random_pl_scenario(rng: &mut rand_chacha::ChaCha8Rng) -> Scenario {
    let users = (0..1 + (uniform(rng, 0.0, 3.0) as usize))
        .map(|k| {
            let s0 = uniform(rng, 2.0, 5.0);
            let s1 = uniform(rng, 0.0, s0);
            UserSpec::piecewise_linear(
                format!("u{k}"),
                vec![uniform(rng, 0.5, 1.5)],
                &[s0, s1],
                uniform(rng, 1.0, 3.0),
            )
            .unwrap()
        })
        .collect();
    let c0 = uniform(rng, 0.0, 1.0);
    let cost = PwUni::piecewise_linear(0, vec![1.0], &[c0, c0 + uniform(rng, 0.5, 2.0)], 0.0, 0.0)
        .unwrap();
    Scenario::new(
        users,
        ProviderSpec::new(Cost::Piecewise(cost), uniform(rng, 1.0, 4.0)).unwrap(),
    )
    .unwrap()
}

fn optimal_welfare(sc: &Scenario) -> f64 {
    let p = scenario_to_problem(sc).unwrap();
    let s = solve(&p, &scenario_method(sc, 0.0).unwrap()).unwrap();
    s.min_value(&p).map(|v| -v).unwrap()
}

#[test]
fn dual_values_bound_the_welfare_optimum() {
    let mut rng = rng(51);
    let mut scenarios = vec![desk()];
    scenarios.extend((0..8).map(|_| random_pl_scenario(&mut rng)));
    for (k, sc) in scenarios.iter().enumerate() {
        let best = optimal_welfare(sc);
        let params = DualParams {
            max_iter: 2000,
            ..DualParams::default()
        };
        let (_, trace) = dual_ascent_with_trace(sc, &params).unwrap();
        for step in &trace {
            assert!(
                step.dual_value >= best - 1e-6,
                "scenario {k}: {} < {best}",
                step.dual_value
            );
        }
    }
}

#[test]
fn best_responses_are_monotone_in_price() {
    let mut rng = rng(52);
    for _ in 0..10 {
        let sc = random_pl_scenario(&mut rng);
        let prices: Vec<f64> = (0..=120).map(|k| k as f64 * 0.05).collect();
        for u in &sc.users {
            let x: Vec<f64> = prices.iter().map(|&p| user_best_response(u, p)).collect();
            assert!(x.windows(2).all(|w| w[1] <= w[0]), "{x:?}");
        }
        let s: Vec<f64> = prices
            .iter()
            .map(|&p| provider_best_response(&sc.provider, p))
            .collect();
        assert!(s.windows(2).all(|w| w[1] >= w[0]), "{s:?}");
    }
    let d = desk();
    let s: Vec<f64> = (0..=60)
        .map(|k| provider_best_response(&d.provider, k as f64 * 0.1))
        .collect();
    assert!(s.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn converged_price_is_a_marginal_utility() {
    let sc = desk();
    let r = dual_ascent(&sc, &DualParams::default()).unwrap();
    assert!(r.converged);
    for (u, &x) in sc.users.iter().zip(&r.allocations) {
        if x > 1e-9 {
            let (right, left) = u.marginal_interval(x);
            assert!(
                right - 1e-3 <= r.price && r.price <= left + 1e-3,
                "{}: [{right}, {left}]",
                u.id
            );
        }
    }
}

/// Welfare maximum over the `(x1, x2)` lattice of step `h`, with supply equal
/// to demand and capped at `capacity`.
fn desk_grid_welfare(sc: &Scenario, capacity: f64, h: f64) -> f64 {
    let n1 = (sc.users[0].cap / h).round() as usize;
    let n2 = (sc.users[1].cap / h).round() as usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=n1 {
        for j in 0..=n2 {
            let x = [i as f64 * h, j as f64 * h];
            let s = x[0] + x[1];
            if s > capacity + 1e-12 {
                break;
            }
            let w = sc.users[0].value(x[0]) + sc.users[1].value(x[1]) - sc.provider.cost(s);
            best = best.max(w);
        }
    }
    best
}

#[test]
fn desk_matches_the_lattice_oracle() {
    let sc = desk();
    let h = 1e-3;
    let base = desk_grid_welfare(&sc, 2.0, h);
    assert!((base - optimal_welfare(&sc)).abs() <= 1e-3);
    let x = [1.0, 1.0];
    assert!((welfare(&sc, &x, None).unwrap() - base).abs() <= 1e-9);

    // capacity quotients of the lattice maximum bracket the clearing price
    let dl = 0.1;
    let q_up = (desk_grid_welfare(&sc, 2.0 + dl, h) - base) / dl;
    let q_down = (base - desk_grid_welfare(&sc, 2.0 - dl, h)) / dl;
    let marginal = sc.provider.marginal_cost(2.0);
    let r = dual_ascent(&sc, &DualParams::default()).unwrap();
    assert!(
        marginal + q_up - 1e-3 <= r.price,
        "{} vs {}",
        marginal + q_up,
        r.price
    );
    assert!(
        r.price <= marginal + q_down + 1e-3,
        "{} vs {}",
        marginal + q_down,
        r.price
    );
}
