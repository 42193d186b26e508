use num_rational::Ratio;
use num_traits::{One, Zero};
use proptest::prelude::*;

use ridechain::coupling::verify_contraction;
use ridechain::exact::{
    self, build_transition, check_aperiodic, check_irreducible, limiting_objective, limiting_objective_by_states,
    mixing_analysis, stationary_distribution, transition_matrix, tv_distance, LowerBoundChain,
};
use ridechain::fit::{fit_exponential, fit_inverse};
use ridechain::simulator::{run_ensemble, Arrivals, Estimator, InitialState, SimConfig};
use ridechain::{Boundary, DirectionOrder, Grid, Policy, RequestModel, StateSpace, Weights};

fn grid_strategy() -> impl Strategy<Value = Grid> {
    prop_oneof![Just((1, 2)), Just((2, 2)), Just((1, 3)), Just((2, 3))].prop_map(|(r, c)| Grid::new(r, c).unwrap())
}

fn policy_strategy() -> impl Strategy<Value = Policy> {
    let orders = DirectionOrder::all();
    prop_oneof![
        (prop_oneof![Just(0.5), Just(0.8), Just(1.0)], any::<bool>()).prop_map(|(a, origin)| {
            Policy::nadap_with(a, if origin { Boundary::Origin } else { Boundary::Drop }).unwrap()
        }),
        (0..orders.len()).prop_map(move |k| Policy::rand(orders[k])),
        Just(Policy::greedy()),
    ]
}

/// Hot-spot model at location 0 with dyadic probabilities, so rational
/// conversion is exact.
fn hotspot_model(grid: Grid, extra: &[u8]) -> RequestModel {
    let n = grid.n();
    let unit = 1.0 / (8.0 * (n * n) as f64);
    let mut p = vec![0.0; n * n];
    for (k, slot) in p.iter_mut().enumerate() {
        let (u, v) = (k / n, k % n);
        let base = if u == 0 || v == 0 { 2.0 } else { 0.0 };
        *slot = (base + f64::from(extra[k % extra.len()] % 3)) * unit;
    }
    RequestModel::new(grid, p, Weights::Distance).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_and_unrank_are_inverse(grid in grid_strategy(), m in 1u32..4, c in 1u32..3) {
        prop_assume!(m <= c * grid.n() as u32);
        let space = StateSpace::new(grid, m, c).unwrap();
        for (i, x) in space.iter().enumerate() {
            prop_assert_eq!(space.rank(&x).unwrap(), i);
            prop_assert_eq!(space.unrank(i).unwrap(), x);
        }
    }

    #[test]
    fn rational_rows_sum_to_one(
        grid in grid_strategy(),
        m in 1u32..4,
        c in 1u32..3,
        policy in policy_strategy(),
        extra in proptest::collection::vec(any::<u8>(), 1..8),
    ) {
        prop_assume!(m <= c * grid.n() as u32);
        let space = StateSpace::new(grid, m, c).unwrap();
        let model = hotspot_model(grid, &extra);
        let p = transition_matrix::<Ratio<i64>>(&space, &model, &policy).unwrap();
        for i in 0..p.len() {
            prop_assert_eq!(p.row_sum(i), Ratio::one());
            prop_assert!(p.row(i).all(|(_, v)| *v >= Ratio::zero()));
        }
        prop_assert!(check_irreducible(&p));
        prop_assert!(check_aperiodic(&p));
    }

    #[test]
    fn nadap_objective_paths_agree(
        grid in grid_strategy(),
        m in 1u32..4,
        c in 1u32..3,
        alpha in 0.2f64..1.0,
        origin in any::<bool>(),
        extra in proptest::collection::vec(any::<u8>(), 1..8),
    ) {
        prop_assume!(m <= c * grid.n() as u32);
        let boundary = if origin { Boundary::Origin } else { Boundary::Drop };
        let policy = Policy::nadap_with(alpha, boundary).unwrap();
        let space = StateSpace::new(grid, m, c).unwrap();
        let model = hotspot_model(grid, &extra);
        let p = build_transition(&space, &model, &policy).unwrap();
        let st = stationary_distribution(&p).unwrap();
        let via_gamma = limiting_objective(&space, &st, &model, &policy).unwrap();
        let via_states = limiting_objective_by_states(&space, &st.pi, &model, &policy);
        prop_assert!((via_gamma - via_states).abs() <= 1e-10, "{} vs {}", via_gamma, via_states);
    }

    #[test]
    fn mixing_curve_never_increases(grid in grid_strategy(), m in 1u32..3, policy in policy_strategy()) {
        let c = 2;
        let space = StateSpace::new(grid, m, c).unwrap();
        let model = RequestModel::uniform(grid, 1.0 / (grid.n() * grid.n()) as f64, Weights::Constant(1.0)).unwrap();
        let p = build_transition(&space, &model, &policy).unwrap();
        let st = stationary_distribution(&p).unwrap();
        let report = mixing_analysis(&p, &st.pi, &[0.1], 300).unwrap();
        for w in report.d_curve.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!(report.d_curve.iter().all(|d| (0.0..=1.0 + 1e-12).contains(d)));
    }

    #[test]
    fn tv_distance_is_a_bounded_symmetric_metric(
        a in proptest::collection::vec(0.0f64..1.0, 5),
        b in proptest::collection::vec(0.0f64..1.0, 5),
    ) {
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.iter().map(|x| (x + 1e-9 / 5.0) / s).collect::<Vec<_>>()
        };
        let (mu, nu) = (norm(&a), norm(&b));
        let d = tv_distance(&mu, &nu).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - tv_distance(&nu, &mu).unwrap()).abs() < 1e-15);
        prop_assert!(tv_distance(&mu, &mu).unwrap() == 0.0);
    }

    #[test]
    fn exponential_fit_recovers_parameters(a in 0.1f64..10.0, b in 0.01f64..1.0) {
        let ts: Vec<f64> = (0..40).map(f64::from).collect();
        let ys: Vec<f64> = ts.iter().map(|t| a * (-b * t).exp()).collect();
        let f = fit_exponential(&ts, &ys).unwrap();
        prop_assert!((f.a - a).abs() < 1e-9 * a.max(1.0));
        prop_assert!((f.b - b).abs() < 1e-9);
        prop_assert!(f.r2 > 1.0 - 1e-9);
        let inv: Vec<f64> = ts.iter().map(|t| a / (t + 1.0)).collect();
        let shifted: Vec<f64> = ts.iter().map(|t| t + 1.0).collect();
        let g = fit_inverse(&shifted, &inv).unwrap();
        prop_assert!((g.a - a).abs() < 1e-9 * a.max(1.0));
    }
}

#[test]
fn uniform_full_capacity_chain_is_symmetric_with_uniform_law() {
    for (r, c, m) in [(2, 2, 2), (1, 3, 2), (2, 3, 1)] {
        let grid = Grid::new(r, c).unwrap();
        let n = grid.n();
        let model = RequestModel::uniform(grid, 1.0 / (n * n) as f64, Weights::Constant(1.0)).unwrap();
        let space = StateSpace::new(grid, m, m).unwrap();
        for policy in [Policy::nadap(1.0).unwrap(), Policy::nadap_with(0.6, Boundary::Origin).unwrap()] {
            let p = transition_matrix::<Ratio<i64>>(&space, &model, &policy).unwrap();
            let dense = p.to_dense();
            for i in 0..dense.len() {
                for j in 0..dense.len() {
                    assert_eq!(dense[i][j], dense[j][i], "{policy} on {grid}: ({i},{j})");
                }
            }
            let st = stationary_distribution(&p.to_f64()).unwrap();
            let u = 1.0 / space.len() as f64;
            assert!(st.pi.iter().all(|x| (x - u).abs() < 1e-10));
            let obj = limiting_objective(&space, &st, &model, &policy).unwrap();
            let closed = m as f64 / (n * n) as f64 / (n + m as usize - 1) as f64 * (n * n) as f64;
            assert!((obj - closed).abs() < 1e-10, "{policy} on {grid}: {obj} vs {closed}");
        }
    }
}

#[test]
fn coupling_contracts_on_small_uniform_instances() {
    for (r, c) in [(1, 2), (2, 2), (1, 3), (2, 3)] {
        for cap in 1..=2 {
            for m in 1..=3 {
                let grid = Grid::new(r, c).unwrap();
                if m > cap * grid.n() as u32 {
                    continue;
                }
                let report = verify_contraction(grid, m, cap, 0.01).unwrap();
                assert!(report.worst_beta <= report.bound, "{grid} m={m} c={cap}");
            }
        }
    }
    let err = verify_contraction(Grid::new(2, 2).unwrap(), 2, 3, 0.01);
    assert!(err.is_err());
}

#[test]
fn lower_bound_chain_is_stochastic_with_known_gamma() {
    let chain = LowerBoundChain::new(10, 2).unwrap();
    for row in chain.matrix() {
        assert_eq!(row.iter().fold(Ratio::zero(), |a, b| a + b), Ratio::one());
    }
    assert_eq!(chain.gamma_exact(), Ratio::new(16, 90));
    let gaps = LowerBoundChain::new(50, 5).unwrap().iterate_gap(500);
    let chain = LowerBoundChain::new(50, 5).unwrap();
    for (t, g) in gaps.iter().enumerate() {
        assert!((g - chain.gap_closed_form(t as f64)).abs() < 1e-12);
        assert!(*g <= chain.gap_envelope(t as f64) + 1e-15);
    }
    assert!(LowerBoundChain::new(5, 4).is_err());
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let grid = Grid::new(2, 3).unwrap();
    let model = RequestModel::uniform(grid, 1.0 / 36.0, Weights::Distance).unwrap();
    let config = SimConfig {
        grid,
        m: 3,
        c: 2,
        rounds: 400,
        runs: 97,
        seed: 11,
        policy: Policy::rand(DirectionOrder::default()),
        arrivals: Arrivals::Iid(model),
        initial: InitialState::Adversarial,
        estimator: Estimator::Realized,
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&config).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.mean, four.mean);
    assert_eq!(one.stderr, four.stderr);
    assert_eq!(one.objective_se, four.objective_se);
    let other = run_ensemble(&SimConfig { seed: 12, ..config.clone() }).unwrap();
    assert_ne!(one.mean, other.mean);
}

#[test]
fn exact_curve_starts_from_the_initial_state() {
    let grid = Grid::new(2, 2).unwrap();
    let model = RequestModel::uniform(grid, 1.0 / 16.0, Weights::Constant(1.0)).unwrap();
    let space = StateSpace::new(grid, 2, 2).unwrap();
    let policy = Policy::nadap_with(0.8, Boundary::Origin).unwrap();
    let p = build_transition(&space, &model, &policy).unwrap();
    let st = stationary_distribution(&p).unwrap();
    let start = InitialState::Adversarial.resolve(grid, 2, 2).unwrap();
    let s = exact::delta_curves_exact(&p, &st, &model, &policy, &start, 2000).unwrap();
    let first = ridechain::policies::expected_step_profit(&start, &model, &policy);
    assert!((s.mean[0] - first).abs() < 1e-15);
    assert!((s.target - 0.4).abs() < 1e-10);
    assert!(s.delta[1999] < 1e-12);
}
