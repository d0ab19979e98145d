use ofo_core::fixtures;
use ofo_core::grid_case::{parse_case, GridCase};
use ofo_core::harness::*;
use ofo_core::ofo::{ControllerConfig, ModelMode};

fn mini() -> GridCase {
    parse_case(fixtures::MINI_BLOCAUX).unwrap()
}

fn constant_wind(case: &GridCase, factor: f64, steps: usize) -> Scenario {
    let row: Vec<f64> = case.units.iter().map(|u| factor * u.p_rating).collect();
    Scenario {
        name: format!("const-{factor}"),
        wind: vec![row; steps],
        load_scale: None,
        duration_steps: steps,
        task: Task::Curtailment,
    }
}

#[test]
fn zero_wind_means_zero_curtailment_and_slack() {
    let case = mini();
    let sc = constant_wind(&case, 0.0, 40);
    let run = run_closed_loop(&case, &sc, &ControllerConfig::default(), &RunOptions::default()).unwrap();
    assert_eq!(run.injected_fraction(), 1.0);
    for s in &run.steps {
        assert!(s.converged);
        assert_eq!(s.available, 0.0);
        assert_eq!(s.injected, 0.0);
        assert_eq!(s.slack, 0.0);
        assert!(s.losses > 0.0);
    }
    let oracle = run_offline_oracle(&case, &sc.truncated(3), &ControllerConfig::default(), &RunOptions::default())
        .unwrap();
    assert!(oracle.steps.iter().all(|s| s.injected == 0.0));
}

#[test]
fn fixed_curtailment_levels() {
    let case = mini();
    let sc = ramp_scenario(&case, &RampParams::default());
    let opts = RunOptions::default();
    let zero = run_fixed_curtailment(&case, &sc, 0.0, &opts).unwrap();
    assert!(zero.steps.iter().all(|s| s.injected == 0.0));

    let sixty = run_fixed_curtailment(&case, &sc, 0.6, &opts).unwrap();
    for (k, s) in sixty.steps.iter().enumerate() {
        for (p, pm) in s.u.p.iter().zip(sc.p_max(k)) {
            assert_eq!(*p, 0.6 * pm);
        }
        assert!(s.u.q.iter().all(|&q| q == 0.0));
        assert!(s.u.tap.iter().all(|&t| t == 16));
    }

    let full = run_fixed_curtailment(&case, &sc, 1.0, &opts).unwrap();
    assert!(full.steps.iter().any(|s| s.l_violation > FLOW_TOL));
    assert!(matches!(run_fixed_curtailment(&case, &sc, 1.2, &opts), Err(HarnessError::BadFraction(_))));
}

#[test]
fn energy_accounting_and_input_limits() {
    let case = mini();
    let sc = ramp_scenario(&case, &RampParams::default()).truncated(1100);
    let opts = RunOptions { noise: 1e-3, noise_seed: 5, ..RunOptions::default() };
    for mode in [ModelMode::Approximate, ModelMode::Perfect] {
        let cfg = ControllerConfig { mode, ..Default::default() };
        let run = run_closed_loop(&case, &sc, &cfg, &opts).unwrap();
        assert_eq!(run.steps.len(), 1100);
        assert_eq!(run.input_violation_steps(), 0);
        let csv = records_csv(&case, &run);
        for (s, line) in run.steps.iter().zip(csv.lines().skip(2)) {
            assert_eq!(s.injected, s.u.p.iter().sum::<f64>());
            let cols: Vec<f64> = line.split(',').skip(7).take(3).map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols[1] + cols[2], cols[0]);
        }
        let steps: Vec<usize> = run.steps.iter().map(|s| s.step).collect();
        assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
    }
}

#[test]
fn runs_are_deterministic() {
    let case = mini();
    let sc = ramp_scenario(&case, &RampParams::default()).truncated(1100);
    let opts = RunOptions { noise: 0.01, noise_seed: 9, ..RunOptions::default() };
    let a = run_closed_loop(&case, &sc, &ControllerConfig::default(), &opts).unwrap();
    let b = run_closed_loop(&case, &sc, &ControllerConfig::default(), &opts).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(records_csv(&case, &a), records_csv(&case, &b));
    let c = run_closed_loop(&case, &sc, &ControllerConfig::default(), &RunOptions { noise_seed: 10, ..opts }).unwrap();
    assert_ne!(a.steps, c.steps);
}

#[test]
fn unsolvable_plant_aborts_after_ten_failures() {
    let case = mini();
    let mut sc = constant_wind(&case, 0.5, 30);
    sc.load_scale = Some(vec![60.0; 30]);
    let run = run_closed_loop(&case, &sc, &ControllerConfig::default(), &RunOptions::default()).unwrap();
    assert!(run.aborted);
    assert_eq!(run.steps.len(), MAX_CONSECUTIVE_FAILURES);
    assert!(run.steps.iter().all(|s| !s.converged && s.y.iter().all(|y| y.is_nan())));
}

#[test]
fn oracle_dominates_a_single_controller_step() {
    let case = mini();
    let sc = constant_wind(&case, 0.9, 6);
    let opts = RunOptions::default();
    let oracle = run_offline_oracle(&case, &sc, &ControllerConfig::default(), &opts).unwrap();
    let blocked = with_blocked_taps(&case);
    let cfg = ControllerConfig { mode: ModelMode::Perfect, ..Default::default() };
    let ofo = run_closed_loop(&blocked, &sc, &cfg, &opts).unwrap();
    for (o, f) in oracle.steps.iter().zip(&ofo.steps) {
        assert_eq!(o.status, "oracle");
        assert!(o.v_violation <= VOLTAGE_TOL && o.l_violation <= FLOW_TOL);
        assert!(o.injected >= f.injected - 1e-6 || f.l_violation > FLOW_TOL || f.v_violation > VOLTAGE_TOL);
    }
}

#[test]
fn summary_and_plot_from_csv() {
    let case = mini();
    let sc = ramp_scenario(&case, &RampParams::default()).truncated(50);
    let run = run_fixed_curtailment(&case, &sc, 1.0, &RunOptions::default()).unwrap();
    let s = summarize(&case, &run);
    assert_eq!(s.steps, 50);
    assert!((s.injected_fraction - 1.0).abs() < 1e-12);
    let text = s.to_string();
    assert!(text.contains("injected_fraction: 1.000000"));
    let svg = plot_svg(&records_csv(&case, &run)).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 8 + 10 + 2 + 4 + 4 + 2 + 1);
}

#[test]
fn tap_moves_fall_as_the_tap_weight_grows() {
    // on this case taps only pay off below g_tap ≈ 1; larger weights freeze them
    let case = mini();
    let sc = ramp_scenario(&case, &RampParams::default());
    let runs = sweep_g_tap(&case, &sc, &ControllerConfig::default(), &[0.01, 0.1, 1.0, 500.0], &RunOptions::default())
        .unwrap();
    let moves: Vec<usize> = runs.iter().map(|(_, r)| r.total_tap_moves()).collect();
    assert!(moves[0] > 0, "{moves:?}");
    assert!(moves.windows(2).all(|w| w[1] <= w[0]), "{moves:?}");
    for (_, r) in &runs {
        assert!(steady_state_ok(r, 100));
        assert_eq!(r.input_violation_steps(), 0);
    }
}
