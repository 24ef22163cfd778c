//! Randomized checks of invariants that span several modules.

use std::sync::Arc;

use neuralfmu::data::{
    evaluate_solution, load_measurements, write_measurements, MeasurementSet,
};
use neuralfmu::hybrid_ode::{BouncingBall, DampedOscillator, DriveCycle, EventKind, HybridModel, Vldm};
use neuralfmu::neural::{read_checkpoint, write_checkpoint};
use neuralfmu::neuralfmu::TopologyBuilder;
use neuralfmu::solver::{read_solution_csv, solve, write_solution_csv, Solution, SolverOptions};
use neuralfmu::training::{make_batches_sequential, StepSchedule, TargetSeries};
use proptest::prelude::*;

fn ramp_cycle(peak: f64) -> Arc<DriveCycle> {
    Arc::new(DriveCycle::new(vec![0.0, 2.0, 6.0, 8.0], vec![0.0, peak, peak, 0.0]).unwrap())
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn solve_vldm(peak: f64, t_end: f64) -> Solution {
    let m = Vldm::baseline(ramp_cycle(peak));
    solve(&m, &m.initial_state(0.0), t_end, &SolverOptions::default())
        .unwrap()
        .solution
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn solves_are_deterministic(peak in 0.0f64..20.0, t_end in 0.5f64..6.0) {
        let a = solve_vldm(peak, t_end);
        let b = solve_vldm(peak, t_end);
        prop_assert!(a.same_trajectory(&b));
    }

    #[test]
    fn time_events_sit_on_the_sampling_grid(peak in 0.0f64..20.0, n in 50u64..600) {
        // keep clear of a grid point so the expected count is unambiguous
        let t_end = n as f64 / 100.0 + 0.003;
        let sol = solve_vldm(peak, t_end);
        let times: Vec<f64> = sol.event_log.iter().filter(|e| e.kind == EventKind::Time).map(|e| e.t).collect();
        prop_assert_eq!(times.len() as u64, n);
        prop_assert_eq!(sol.stats.n_time_events, n);
        for (k, &t) in times.iter().enumerate() {
            let grid = (k + 1) as f64 / 100.0;
            prop_assert!((t - grid).abs() <= 4.0 * f64::EPSILON * grid, "{t} vs {grid}");
        }
    }

    #[test]
    fn saved_rows_and_events_are_ordered(peak in 0.0f64..20.0, t_end in 0.5f64..8.0) {
        let sol = solve_vldm(peak, t_end);
        prop_assert!(sol.times.windows(2).all(|w| w[0] <= w[1]));
        // a time may repeat only as the pre/post pair of an event
        for w in sol.times.windows(3) {
            prop_assert!(!(w[0] == w[1] && w[1] == w[2]) || sol.event_log.iter().filter(|e| e.t == w[0]).count() >= 2);
        }
        prop_assert!(sol.event_log.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn discrete_state_changes_only_at_events(peak in 0.0f64..20.0, t_end in 0.5f64..8.0) {
        let sol = solve_vldm(peak, t_end);
        for i in 1..sol.len() {
            if sol.discrete[i] != sol.discrete[i - 1] {
                prop_assert_eq!(sol.times[i], sol.times[i - 1], "discrete jump between rows at {}", sol.times[i]);
            }
        }
    }

    #[test]
    fn tape_replay_is_bitwise(omega in 0.3f64..3.0, zeta in 0.0f64..0.9, x0 in -2.0f64..2.0, t_end in 0.5f64..6.0) {
        let m = DampedOscillator::new(omega, zeta, x0, 0.0);
        let res = solve(&m, &m.initial_state(0.0), t_end, &SolverOptions::default().with_tape()).unwrap();
        let rows = res.tape.as_ref().unwrap().replay(&m).unwrap();
        prop_assert_eq!(rows, res.solution.states);
    }

    #[test]
    fn tape_replay_is_bitwise_across_events(h0 in 0.2f64..3.0, e in 0.3f64..0.9) {
        let ball = BouncingBall { h0, restitution: e, ..Default::default() };
        let t_end = ball.bounce_times(3)[2] + 0.01;
        let res = solve(&ball, &ball.initial_state(0.0), t_end, &SolverOptions::default().with_tape()).unwrap();
        prop_assert!(res.solution.stats.n_state_events >= 3);
        let rows = res.tape.as_ref().unwrap().replay(&ball).unwrap();
        prop_assert_eq!(rows, res.solution.states);
    }

    #[test]
    fn truth_differs_from_baseline_by_viscous_friction(
        x5 in -5.0f64..40.0, x1 in 0.0f64..2.0, x2 in 0.0f64..2.0, e in -3.0f64..3.0, t in 0.0f64..8.0,
    ) {
        let cyc = ramp_cycle(15.0);
        let base = Vldm::baseline(cyc.clone());
        let truth = Vldm::ground_truth(cyc);
        let x = [x1, x2, 40.0, 40.0 - e, x5, 1e4];
        let xd = base.consistent_discrete(t, &x);
        let (mut db, mut dt) = ([0.0; 6], [0.0; 6]);
        base.derivative(t, &x, &xd, &mut db);
        truth.derivative(t, &x, &xd, &mut dt);
        for c in [0, 1, 2, 3, 5] {
            prop_assert_eq!(db[c].to_bits(), dt[c].to_bits());
        }
        let expected = Vldm::GROUND_TRUTH_VISCOUS_FRICTION * x5 / base.params().mass;
        prop_assert!((db[4] - dt[4] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn neutral_gates_never_change_the_solve(seed in 0u64..1000, h0 in 0.5f64..2.0) {
        let ball = BouncingBall { h0, ..Default::default() };
        let am = TopologyBuilder::new(vec![0, 1], vec![1]).hidden(&[6]).seed(seed).build(Box::new(ball.clone())).unwrap();
        let opts = SolverOptions::default();
        let a = solve(&am, &am.initial_state(0.0), 2.5, &opts).unwrap().solution;
        let b = solve(&ball, &ball.initial_state(0.0), 2.5, &opts).unwrap().solution;
        prop_assert!(a.same_trajectory(&b));
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn batches_cover_the_window(t0 in -50.0f64..50.0, span in 0.1f64..400.0, len in 0.5f64..60.0, n in 2usize..300) {
        let t_end = t0 + span;
        let mut times: Vec<f64> = (0..n).map(|k| t0 + span * k as f64 / (n - 1) as f64).collect();
        times[n - 1] = t_end;
        let target = TargetSeries::new(times.clone(), vec![0.0; n]).unwrap();
        let els = make_batches_sequential(t0, t_end, len, &target).unwrap();
        prop_assert!(!els.is_empty());
        prop_assert_eq!(els[0].t_start, t0);
        prop_assert_eq!(els.last().unwrap().t_end, t_end);
        for w in els.windows(2) {
            prop_assert_eq!(w[0].t_end, w[1].t_start);
            prop_assert!(w[0].t_start < w[0].t_end);
        }
        // every sample is owned by exactly one element
        let owned: usize = els.iter().map(|e| e.target.len()).sum();
        prop_assert_eq!(owned, n);
        for (k, e) in els.iter().enumerate() {
            prop_assert_eq!(e.index, k);
        }
    }

    #[test]
    fn schedule_decays_to_the_floor(initial in 1e-4f64..1e-1, multiplier in 0.5f64..1.0, ratio in 1e-4f64..1.0, k in 0u64..5000) {
        let s = StepSchedule { initial, multiplier, floor: initial * ratio };
        prop_assert!(s.validate().is_ok());
        let (a, b) = (s.step_size(k), s.step_size(k + 1));
        prop_assert!(b <= a);
        prop_assert!(a <= initial && a >= s.floor);
    }

    #[test]
    fn evaluation_ignores_run_order(
        runs in proptest::collection::vec(proptest::collection::vec(-1e4f64..1e4, 12), 1..6),
        rotate in 0usize..6,
    ) {
        let times: Vec<f64> = (0..12).map(|k| k as f64 * 0.5).collect();
        let mut shuffled = runs.clone();
        let r = rotate % runs.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let a = MeasurementSet::new(times.clone(), runs).unwrap();
        let b = MeasurementSet::new(times.clone(), shuffled).unwrap();
        prop_assert_eq!(&a.mean, &b.mean);
        prop_assert_eq!(&a.std, &b.std);
        let sol = Solution {
            model: "probe".into(),
            times: times.clone(),
            states: times.iter().map(|t| vec![0.0, 0.0, 0.0, 0.0, 0.0, 100.0 * t]).collect(),
            discrete: vec![vec![]; times.len()],
            event_log: vec![],
            stats: Default::default(),
            wall_time: 0.0,
        };
        prop_assert_eq!(evaluate_solution(&sol, &a).unwrap(), evaluate_solution(&sol, &b).unwrap());
    }

    #[test]
    fn resampling_is_exact_on_shared_timestamps(values in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
        let times: Vec<f64> = (0..values.len()).map(|k| 0.1 * k as f64 + (k % 3) as f64 * 0.01).collect();
        let data = MeasurementSet::new(times.clone(), vec![values.clone()]).unwrap();
        for (t, v) in times.iter().zip(&values) {
            prop_assert_eq!(data.mean_at(*t), *v);
        }
        let target = TargetSeries::new(times.clone(), values.clone()).unwrap();
        prop_assert_eq!(target.values, values);
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn files_round_trip(
        values in proptest::collection::vec(proptest::num::f64::NORMAL, 12),
        runs in proptest::collection::vec(proptest::num::f64::NORMAL, 8),
        seed in 0u64..100,
    ) {
        let dir = tempfile::tempdir().unwrap();

        let times = vec![0.0, 0.5, 0.5, 1.25];
        let sol = Solution {
            model: "probe".into(),
            times: times.clone(),
            states: values.chunks(3).map(|c| c.to_vec()).collect(),
            discrete: vec![vec![]; 4],
            event_log: vec![],
            stats: Default::default(),
            wall_time: 0.0,
        };
        let path = dir.path().join("sol.csv");
        write_solution_csv(&path, &sol).unwrap();
        let back = read_solution_csv(&path).unwrap();
        prop_assert_eq!(back.times, times);
        prop_assert_eq!(back.states, sol.states);

        let m_times = vec![0.0, 0.1, 0.2, 0.3];
        let set = MeasurementSet::new(m_times, runs.chunks(4).map(|c| c.to_vec()).collect()).unwrap();
        let path = dir.path().join("meas.csv");
        write_measurements(&path, &set).unwrap();
        prop_assert_eq!(load_measurements(&path).unwrap().runs, set.runs);

        let am = TopologyBuilder::new(vec![0, 1], vec![1]).seed(seed).build(Box::new(DampedOscillator::default())).unwrap();
        let path = dir.path().join("net.ckpt");
        write_checkpoint(&path, am.spec(), am.params()).unwrap();
        let (spec, params) = read_checkpoint(&path).unwrap();
        prop_assert_eq!(&spec, am.spec());
        prop_assert_eq!(params.pack(), am.params().pack());
    }
}

/// Error of the final state against the closed form for a tolerance ladder.
#[test]
fn tighter_tolerances_do_not_increase_error() {
    for (omega, zeta) in [(1.0, 0.1), (2.5, 0.3), (0.7, 0.0)] {
        let m = DampedOscillator::new(omega, zeta, 1.0, 0.5);
        let t_end = 8.0;
        let exact = m.exact(t_end);
        let errors: Vec<f64> = (0..8)
            .map(|k| {
                let tol = 1e-4 / 2f64.powi(k);
                let opts = SolverOptions {
                    rel_tol: tol,
                    abs_tol: tol,
                    ..Default::default()
                };
                let x = solve(&m, &m.initial_state(0.0), t_end, &opts).unwrap().final_state.x_c;
                (x[0] - exact[0]).abs().max((x[1] - exact[1]).abs())
            })
            .collect();
        for w in errors.windows(2) {
            assert!(w[1] <= w[0], "omega {omega}: {errors:?}");
        }
    }
}
