use jsq_game::csvio::{fmt_num, parse_num, Table};
use jsq_game::game::{best_response, equilibrium_strategy, individual_utility, social_benefit_rate, socially_optimal_strategy};
use jsq_game::meanfield::{
    certificate_weights, check_weight_inequalities, integrate_with, lyapunov_derivative, lyapunov_function,
    vector_field_with_boundary, ErrorVector, IntegrateOptions, OccupancyMeasure,
};
use jsq_game::model::{stationary_distribution, StationaryDist};
use jsq_game::sim::{step, SimConfig, SystemState};
use jsq_game::sweep::{run_sweep, SweepRange, SweepSpec, SweptParameter};
use jsq_game::{Branch, ModelParams, Strategy};
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn valid_params() -> impl proptest::strategy::Strategy<Value = ModelParams> {
    use proptest::strategy::Strategy as _;
    (0.05f64..2.0, 0.0f64..1.0, 1.02f64..3.0, 0.1f64..5.0, 0.0f64..3.4).prop_map(|(l, ls, m, c, r)| {
        let mu = (l + ls) * m;
        ModelParams::new(l, ls, mu, c / mu * r.exp(), c).unwrap()
    })
}

/// Parameters whose equilibrium is the interior point `q0`: `R` is chosen
/// so that `S(q0) = 0`.
fn interior_params() -> impl proptest::strategy::Strategy<Value = (ModelParams, f64)> {
    use proptest::strategy::Strategy as _;
    (valid_params(), 0.05f64..0.95).prop_map(|(p, q0)| {
        let rho = (p.lambda * q0 + p.lambda_s) / p.mu;
        let sigma = p.lambda * q0 / p.mu;
        let reward = p.cost * (rho / (1.0 - sigma) + 1.0) / p.mu;
        (ModelParams { reward, ..p }, q0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn equilibrium_dominates_social_optimum(p in valid_params()) {
        let qe = equilibrium_strategy(&p).unwrap();
        let qs = socially_optimal_strategy(&p).unwrap();
        prop_assert!(qe.q >= qs.q - 1e-12);
        prop_assert!(social_benefit_rate(&p, qs.strategy()).unwrap() >= social_benefit_rate(&p, qe.strategy()).unwrap() - 1e-12);
    }

    #[test]
    fn interior_equilibrium_is_a_best_response_to_itself((p, q0) in interior_params()) {
        let qe = equilibrium_strategy(&p).unwrap();
        prop_assert_eq!(qe.branch, Branch::Interior);
        prop_assert!((qe.q - q0).abs() < 1e-9);
        prop_assert!(individual_utility(&p, qe.strategy()).unwrap().abs() < 1e-9);
        // Below q_e joining pays, above it balking does.
        let lo = Strategy::new((qe.q - 0.01).max(0.0)).unwrap();
        let hi = Strategy::new((qe.q + 0.01).min(1.0)).unwrap();
        if lo.value() < qe.q - 1e-9 {
            prop_assert_eq!(best_response(&p, lo).unwrap().branch, Branch::AlwaysJoin);
        }
        if hi.value() > qe.q + 1e-9 {
            prop_assert_eq!(best_response(&p, hi).unwrap().branch, Branch::AlwaysBalk);
        }
    }

    #[test]
    fn stationary_law_is_a_distribution(p in valid_params(), q in 0.0f64..=1.0, k in 1usize..60) {
        let s = Strategy::new(q).unwrap();
        let pi = stationary_distribution(&p, s, k).unwrap();
        prop_assert!(pi.probs().iter().all(|&x| x >= 0.0));
        prop_assert!((pi.truncated_mass() + pi.tail_mass() - 1.0).abs() < 1e-12);
        let auto = StationaryDist::auto(&p, s).unwrap();
        prop_assert!(auto.tail_mass() < 1e-11);
    }

    #[test]
    fn boundary_field_conserves_mass(p in valid_params(), q in 0.0f64..=1.0, seed in 0u64..1000) {
        use rand::Rng;
        let s = Strategy::new(q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 12;
        let mut u: Vec<f64> = (0..=k).map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random::<f64>() }).collect();
        u[k] += 1e-3;
        let total: f64 = u.iter().sum();
        u.iter_mut().for_each(|x| *x /= total);
        let state = OccupancyMeasure::new(u, 0.0).unwrap();
        let d = vector_field_with_boundary(&p, s, &state);
        prop_assert!(d.sum().abs() < 1e-12);
        // Empty levels never become negative.
        for (k, &x) in state.u().iter().enumerate() {
            if x == 0.0 {
                prop_assert!(d.du[k] >= -1e-15, "level {} drains at {}", k, d.du[k]);
            }
        }
    }

    #[test]
    fn certificate_weights_satisfy_inequalities(p in valid_params(), q in 0.01f64..=1.0) {
        let s = Strategy::new(q).unwrap();
        let (_, w) = certificate_weights(&p, s, None).unwrap();
        prop_assert!(check_weight_inequalities(&w, p.mu / (p.lambda * q)).is_ok());
    }

    #[test]
    fn simulator_bookkeeping_survives_random_runs(p in valid_params(), q in 0.0f64..=1.0, n in 1usize..40, seed in 0u64..500) {
        let s = Strategy::new(q).unwrap();
        let cfg = SimConfig::new(p, s, n, 10.0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = SystemState::empty(n);
        for _ in 0..300 {
            let (_, ev) = step(&mut state, &cfg, &mut rng);
            prop_assert!(ev.is_some());
        }
        prop_assert!(state.check_consistency().is_ok());
        let counts = state.occupancy_counts();
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        prop_assert_eq!(state.total_customers(), state.queue_lengths().iter().map(|&x| x as u64).sum::<u64>());
    }

    #[test]
    fn csv_numbers_round_trip(x in proptest::num::f64::ANY) {
        let s = fmt_num(x);
        let back = parse_num(&s).unwrap();
        if x.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(fmt_num(back), s);
        }
    }
}

#[test]
fn lyapunov_function_decreases_along_a_trajectory() {
    let p = ModelParams::new(0.5, 0.2, 0.9, 3.0, 1.1).unwrap();
    let s = equilibrium_strategy(&p).unwrap().strategy();
    let (k, w) = certificate_weights(&p, s, None).unwrap();
    let start = OccupancyMeasure::point_mass(4, k);
    let opts = IntegrateOptions { auto_extend: false, ..Default::default() };
    let traj = integrate_with(&p, s, &start, 500.0, &opts).unwrap();
    let pi = stationary_distribution(&p, s, k).unwrap();
    let mut last = f64::INFINITY;
    for pt in &traj.points {
        let eps = ErrorVector::new(&pt.state, &pi);
        let v = lyapunov_function(&w, &eps);
        assert!(v <= last + 1e-10, "V rose to {v} at t = {}", pt.t);
        if pt.state.u()[0] > 1e-9 && v > 1e-9 {
            assert!(lyapunov_derivative(&p, s, &w, &pt.state).unwrap() < 0.0);
        }
        last = v;
    }
    assert!(traj.last().state.l1_distance(&pi) < 1e-6);
}

#[test]
fn sweep_table_round_trips_through_csv() {
    let spec = SweepSpec::new(
        SweptParameter::Mu,
        SweepRange::new(0.5, 1.5, 0.05).unwrap(),
        ModelParams::new(0.5, 0.2, 1.0, 3.0, 1.1).unwrap(),
    );
    let t = run_sweep(&spec).unwrap();
    let text = t.to_csv_string();
    let back = Table::read(text.as_bytes()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_csv_string(), text);
    let skipped = back.numbers("skipped").unwrap();
    let mu = back.numbers("mu").unwrap();
    for (m, s) in mu.iter().zip(&skipped) {
        let stable = m.unwrap() > 0.7 + 1e-9;
        assert_eq!(*s == Some(0.0), stable, "mu = {m:?}");
    }
}
