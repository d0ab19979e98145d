//! Closed-loop simulation: plant settle, measurement, controller step, apply.
//! Also the fixed-curtailment baseline, the offline oracle, metrics and sweeps.

mod metrics;
mod plot;
mod scenario;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use metrics::{
    records_csv, steady_state_ok, summarize, window_violation_integrals, Summary, FLOW_TOL, VOLTAGE_TOL,
};
pub use plot::{plot_svg, PlotError};
pub use scenario::{
    parse_load_csv, parse_manifest, parse_wind_csv, ramp_scenario, wind_to_csv, Manifest, RampParams, Scenario, Task,
};

use crate::grid_case::GridCase;
use crate::ofo::{
    controller_step, make_provider, ControllerConfig, ControllerState, Measurement, ModelMode, ModelProvider,
    OfoError, OutputLimits, PerfectModel, PlantContext,
};
use crate::power_flow::{
    initial_local_taps, measure, settle_local_taps_from, InputVector, OutputVector, PfOptions, PfSolution,
};

/// Consecutive plant failures after which a run aborts.
pub const MAX_CONSECUTIVE_FAILURES: usize = 10;
/// Inner-iteration cap of the offline oracle.
pub const ORACLE_MAX_ITER: usize = 1000;
/// Step-norm threshold at which the oracle's inner loop counts as converged.
pub const ORACLE_TOL: f64 = 1e-8;
/// Smallest scale applied to `G` inside the oracle. The scale grows toward 1
/// whenever the step norm stops shrinking and decays back while the norm
/// contracts slowly. The fixed point does
/// not depend on `G`; smaller weights only take longer steps.
pub const ORACLE_G_SCALE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Controller(#[from] OfoError),
    #[error("fixed-curtailment fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Amplitude of uniform measurement noise (same units as each output).
    pub noise: f64,
    pub noise_seed: u64,
    pub pf: PfOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { noise: 0.0, noise_seed: 1, pf: PfOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub u: InputVector,
    /// Settled `[v; l]`; NaN when the plant failed at this step.
    pub y: Vec<f64>,
    /// Applied step; zero when no controller ran.
    pub w: Vec<f64>,
    pub status: String,
    pub objective: f64,
    pub nodes: usize,
    pub slack: f64,
    pub losses: f64,
    pub available: f64,
    pub injected: f64,
    /// Controllable tap index changes applied after this step.
    pub tap_moves: usize,
    pub local_taps: Vec<usize>,
    pub local_tap_moves: usize,
    pub converged: bool,
    pub v_violation: f64,
    pub l_violation: f64,
    pub input_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mode: String,
    pub config_hash: u64,
    pub case_name: String,
    pub scenario_name: String,
    pub steps: Vec<StepRecord>,
    pub aborted: bool,
    /// Controller wall time per step in seconds; kept out of `records.csv`.
    pub step_seconds: Vec<f64>,
    pub limits: OutputLimits,
}

impl RunRecord {
    pub fn injected_fraction(&self) -> f64 {
        let avail: f64 = self.steps.iter().map(|s| s.available).sum();
        let inj: f64 = self.steps.iter().map(|s| s.injected).sum();
        if avail == 0.0 {
            1.0
        } else {
            inj / avail
        }
    }

    pub fn total_tap_moves(&self) -> usize {
        self.steps.iter().map(|s| s.tap_moves).sum()
    }

    pub fn input_violation_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.input_violation > 0.0).count()
    }
}

pub fn config_hash(cfg: &ControllerConfig, mode: &str) -> u64 {
    let mut h = DefaultHasher::new();
    cfg.to_string().hash(&mut h);
    mode.hash(&mut h);
    h.finish()
}

/// Output limits for the scenario's task.
pub fn task_limits(case: &GridCase, scenario: &Scenario) -> OutputLimits {
    let mut limits = OutputLimits::from_case(case);
    if let Task::Auxiliary { buses, v_max } = &scenario.task {
        limits.cap_voltage(case, buses, *v_max);
    }
    limits
}

/// Copy of the case with every controllable tap fixed at its neutral index.
pub fn with_blocked_taps(case: &GridCase) -> GridCase {
    let mut c = case.clone();
    for br in &mut c.branches {
        if let Some(t) = br.tap.as_mut() {
            if t.controllable {
                t.controllable = false;
                t.initial = t.neutral_index();
            }
        }
    }
    c
}

/// Largest amount by which `u` leaves the input set at availability `p_max`.
pub fn input_violation(case: &GridCase, u: &InputVector, p_max: &[f64]) -> f64 {
    let mut v: f64 = 0.0;
    for (k, unit) in case.units.iter().enumerate() {
        v = v.max(unit.q_min - u.q[k]).max(u.q[k] - unit.q_max);
        v = v.max(-u.p[k]).max(u.p[k] - p_max[k].min(unit.p_rating));
    }
    for (t, &br) in case.controllable_taps().iter().enumerate() {
        let max = case.branches[br].tap.as_ref().expect("tap").max_index();
        if u.tap[t] > max {
            v = v.max((u.tap[t] - max) as f64);
        }
    }
    v
}

struct Plant<'a> {
    case: &'a GridCase,
    scenario: &'a Scenario,
    limits: &'a OutputLimits,
    pf: PfOptions,
    local: Vec<usize>,
    warm: Option<PfSolution>,
    failures: usize,
}

impl<'a> Plant<'a> {
    fn new(case: &'a GridCase, scenario: &'a Scenario, limits: &'a OutputLimits, pf: PfOptions) -> Self {
        Plant { case, scenario, limits, pf, local: initial_local_taps(case), warm: None, failures: 0 }
    }

    /// Apply `u` under the step-`k` disturbance and settle the local taps.
    fn settle(&mut self, u: &InputVector, k: usize) -> Option<PfSolution> {
        let d = self.scenario.disturbance(self.case, k);
        let sol = settle_local_taps_from(self.case, u, &d, &self.local, self.warm.as_ref(), &self.pf)
            .ok()
            .filter(|s| s.converged);
        match &sol {
            Some(s) => {
                self.local = s.local_tap_state.clone();
                self.warm = Some(s.clone());
                self.failures = 0;
            }
            None => {
                self.failures += 1;
                warn!("step {k}: plant power flow failed ({} in a row)", self.failures);
            }
        }
        sol
    }

    fn base_record(&self, k: usize, u: &InputVector, sol: Option<&PfSolution>) -> StepRecord {
        let p_max = self.scenario.p_max(k);
        let n_out = self.case.n_outputs();
        let (y, losses, v_viol, l_viol, local_moves) = match sol {
            Some(s) => {
                let y = measure(s).expect("converged");
                let (vv, lv) = self.limits.violations(&y);
                (
                    y.values,
                    s.losses,
                    vv.into_iter().fold(0.0, f64::max),
                    lv.into_iter().fold(0.0, f64::max),
                    s.local_tap_moves,
                )
            }
            None => (vec![f64::NAN; n_out], f64::NAN, f64::NAN, f64::NAN, 0),
        };
        StepRecord {
            step: k,
            u: u.clone(),
            y,
            w: vec![0.0; self.case.n_inputs()],
            status: if sol.is_some() { "none".into() } else { "plant_failed".into() },
            objective: 0.0,
            nodes: 0,
            slack: 0.0,
            losses,
            available: self
                .case
                .units
                .iter()
                .zip(p_max)
                .map(|(unit, &a)| a.min(unit.p_rating))
                .sum(),
            injected: u.p.iter().sum(),
            tap_moves: 0,
            local_taps: self.local.clone(),
            local_tap_moves: local_moves,
            converged: sol.is_some(),
            v_violation: v_viol,
            l_violation: l_viol,
            input_violation: input_violation(self.case, u, p_max),
        }
    }
}

fn add_noise(y: &mut OutputVector, amplitude: f64, rng: &mut ChaCha8Rng) {
    if amplitude > 0.0 {
        for v in &mut y.values {
            *v += rng.random_range(-amplitude..=amplitude);
        }
    }
}

fn tap_moves(before: &[usize], after: &[usize]) -> usize {
    before.iter().zip(after).map(|(a, b)| a.abs_diff(*b)).sum()
}

/// Run the feedback loop over the scenario with the configured model mode.
pub fn run_closed_loop(
    case: &GridCase,
    scenario: &Scenario,
    cfg: &ControllerConfig,
    opts: &RunOptions,
) -> Result<RunRecord, HarnessError> {
    scenario.validate(case)?;
    cfg.validate()?;
    let mut provider = make_provider(case, cfg)?;
    run_with_provider(case, scenario, cfg, opts, provider.as_mut())
}

/// Same as [`run_closed_loop`] with an explicit model provider.
pub fn run_with_provider(
    case: &GridCase,
    scenario: &Scenario,
    cfg: &ControllerConfig,
    opts: &RunOptions,
    provider: &mut dyn ModelProvider,
) -> Result<RunRecord, HarnessError> {
    scenario.validate(case)?;
    let limits = task_limits(case, scenario);
    let mode = format!("ofo-{}", cfg.mode.as_str());
    let mut plant = Plant::new(case, scenario, &limits, opts.pf);
    let mut state = ControllerState::initial(case, scenario.p_max(0));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
    let mut steps = Vec::with_capacity(scenario.duration_steps);
    let mut seconds = Vec::with_capacity(scenario.duration_steps);
    let mut aborted = false;

    for k in 0..scenario.duration_steps {
        let sol = plant.settle(&state.u, k);
        let mut rec = plant.base_record(k, &state.u, sol.as_ref());
        let Some(sol) = sol else {
            steps.push(rec);
            seconds.push(0.0);
            if plant.failures >= MAX_CONSECUTIVE_FAILURES {
                aborted = true;
                break;
            }
            continue;
        };
        let mut y = measure(&sol).expect("converged");
        add_noise(&mut y, opts.noise, &mut rng);
        let meas = Measurement { step: state.step_count, y };
        let d = scenario.disturbance(case, k);
        let ctx = PlantContext { disturbance: &d, local_taps: &sol.local_tap_state };
        // the new setpoint takes effect at the next step
        let p_next = scenario.p_max(k + 1);
        let before = state.u.tap.clone();
        let t0 = Instant::now();
        let r = controller_step(case, &mut state, &meas, &ctx, &limits, p_next, cfg, provider)?;
        seconds.push(t0.elapsed().as_secs_f64());
        rec.w = r.w;
        rec.status = r.solution.status.as_str().into();
        rec.objective = r.solution.objective;
        rec.nodes = r.solution.nodes_explored;
        rec.slack = r.solution.slack_total;
        rec.tap_moves = tap_moves(&before, &state.u.tap);
        steps.push(rec);
    }
    debug!("{mode}: {} steps, {} sensitivity evaluations", steps.len(), provider.recomputations());
    Ok(RunRecord {
        config_hash: config_hash(cfg, &mode),
        mode,
        case_name: case.name.clone(),
        scenario_name: scenario.name.clone(),
        steps,
        aborted,
        step_seconds: seconds,
        limits,
    })
}

/// Every farm at `fraction · p_max(t)`, `q = 0`, controllable taps neutral.
pub fn run_fixed_curtailment(
    case: &GridCase,
    scenario: &Scenario,
    fraction: f64,
    opts: &RunOptions,
) -> Result<RunRecord, HarnessError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(HarnessError::BadFraction(fraction));
    }
    scenario.validate(case)?;
    let limits = task_limits(case, scenario);
    let mut plant = Plant::new(case, scenario, &limits, opts.pf);
    let mut steps = Vec::with_capacity(scenario.duration_steps);
    let mut aborted = false;
    for k in 0..scenario.duration_steps {
        let p = case
            .units
            .iter()
            .zip(scenario.p_max(k))
            .map(|(unit, &a)| fraction * a.min(unit.p_rating))
            .collect();
        let u = InputVector::neutral(case, p);
        let sol = plant.settle(&u, k);
        steps.push(plant.base_record(k, &u, sol.as_ref()));
        if plant.failures >= MAX_CONSECUTIVE_FAILURES {
            aborted = true;
            break;
        }
    }
    let mode = format!("fixed:{fraction}");
    Ok(RunRecord {
        config_hash: config_hash(&ControllerConfig::default(), &mode),
        mode,
        case_name: case.name.clone(),
        scenario_name: scenario.name.clone(),
        step_seconds: vec![0.0; steps.len()],
        steps,
        aborted,
        limits,
    })
}

/// Per step, hold the disturbance and availability and iterate the
/// perfect-model controller on the plant until `‖w‖∞ < 1e-8`, with
/// controllable taps blocked at their neutral index. Steps whose inner loop
/// hits the cap are recorded with status `oracle_cap`.
pub fn run_offline_oracle(
    case: &GridCase,
    scenario: &Scenario,
    cfg: &ControllerConfig,
    opts: &RunOptions,
) -> Result<RunRecord, HarnessError> {
    scenario.validate(case)?;
    let neutral: Vec<usize> = case
        .controllable_taps()
        .iter()
        .map(|&br| case.branches[br].tap.as_ref().expect("tap").neutral_index())
        .collect();
    let n_inputs = case.n_inputs();
    let blocked = with_blocked_taps(case);
    let case = &blocked;
    let limits = task_limits(case, scenario);
    let base = ControllerConfig { mode: ModelMode::Perfect, ..cfg.clone() };
    let mut model = PerfectModel::default();
    let mut plant = Plant::new(case, scenario, &limits, opts.pf);
    let mut state = ControllerState::initial(case, scenario.p_max(0));
    let mut steps = Vec::with_capacity(scenario.duration_steps);
    let mut seconds = Vec::with_capacity(scenario.duration_steps);
    let mut aborted = false;

    for k in 0..scenario.duration_steps {
        let p_max = scenario.p_max(k);
        // availability may have dropped since the previous step
        for (k_u, unit) in case.units.iter().enumerate() {
            state.u.p[k_u] = state.u.p[k_u].min(p_max[k_u].min(unit.p_rating));
        }
        let d = scenario.disturbance(case, k);
        let t0 = Instant::now();
        let mut last: Option<(InputVector, PfSolution)> = None;
        let mut iters = 0;
        let mut converged = false;
        let mut step_norm = f64::INFINITY;
        let mut scale = ORACLE_G_SCALE;
        let mut norms = Vec::new();
        let mut since_change = 0;
        while iters < ORACLE_MAX_ITER {
            let inner = ControllerConfig { g_q: base.g_q * scale, g_p: base.g_p * scale, ..base.clone() };
            let Some(sol) = plant.settle(&state.u, k) else { break };
            iters += 1;
            let y = measure(&sol).expect("converged");
            let meas = Measurement { step: state.step_count, y };
            let ctx = PlantContext { disturbance: &d, local_taps: &sol.local_tap_state };
            let u_before = state.u.clone();
            let r = controller_step(case, &mut state, &meas, &ctx, &limits, p_max, &inner, &mut model)?;
            let norm = r.w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            norms.push(norm);
            // compare against two iterations back under the same scale, since the
            // iteration often alternates between two step sizes
            let m = norms.len();
            if m >= since_change + 3 {
                let ratio = norm / norms[m - 3];
                if ratio >= 1.0 && scale < 1.0 {
                    scale = (scale * 4.0).min(1.0);
                    since_change = m;
                } else if ratio > 0.9 && scale > ORACLE_G_SCALE {
                    scale = (scale * 0.5).max(ORACLE_G_SCALE);
                    since_change = m;
                }
            }
            step_norm = norm;
            last = Some((u_before, sol));
            if step_norm < ORACLE_TOL {
                converged = true;
                break;
            }
        }
        seconds.push(t0.elapsed().as_secs_f64());
        let rec = match &last {
            Some((u, sol)) => {
                let mut rec = plant.base_record(k, u, Some(sol));
                rec.status = if converged { "oracle".into() } else { "oracle_cap".into() };
                rec.nodes = iters;
                rec.objective = step_norm;
                rec
            }
            None => plant.base_record(k, &state.u, None),
        };
        // report in the original input layout, blocked taps at neutral
        let mut rec = rec;
        rec.u.tap = neutral.clone();
        rec.w = vec![0.0; n_inputs];
        if !converged {
            debug!("oracle step {k}: inner loop stopped at ‖w‖ = {step_norm:e} after {iters} iterations");
        }
        steps.push(rec);
        if plant.failures >= MAX_CONSECUTIVE_FAILURES {
            aborted = true;
            break;
        }
    }
    let mode = "oracle".to_string();
    Ok(RunRecord {
        config_hash: config_hash(&base, &mode),
        mode,
        case_name: case.name.clone(),
        scenario_name: scenario.name.clone(),
        steps,
        aborted,
        step_seconds: seconds,
        limits,
    })
}

/// Run the approximate controller for each `g_tap` concurrently; results keep the input order.
pub fn sweep_g_tap(
    case: &GridCase,
    scenario: &Scenario,
    base: &ControllerConfig,
    values: &[f64],
    opts: &RunOptions,
) -> Result<Vec<(f64, RunRecord)>, HarnessError> {
    values
        .par_iter()
        .map(|&g| {
            let cfg = ControllerConfig { g_tap: g, ..base.clone() };
            run_closed_loop(case, scenario, &cfg, opts).map(|r| (g, r))
        })
        .collect()
}

/// Fixed-curtailment runs for each fraction, concurrently.
pub fn sweep_fixed(
    case: &GridCase,
    scenario: &Scenario,
    fractions: &[f64],
    opts: &RunOptions,
) -> Result<Vec<(f64, RunRecord)>, HarnessError> {
    fractions
        .par_iter()
        .map(|&f| run_fixed_curtailment(case, scenario, f, opts).map(|r| (f, r)))
        .collect()
}

/// Largest fraction on the grid `0, 1/resolution, …, 1` whose run has no output violation.
pub fn largest_violation_free_fraction(
    case: &GridCase,
    scenario: &Scenario,
    resolution: usize,
    opts: &RunOptions,
) -> Result<Option<(f64, RunRecord)>, HarnessError> {
    let fractions: Vec<f64> = (0..=resolution).map(|i| i as f64 / resolution as f64).collect();
    let runs = sweep_fixed(case, scenario, &fractions, opts)?;
    Ok(runs.into_iter().rev().find(|(_, r)| {
        r.steps
            .iter()
            .all(|s| s.converged && s.v_violation <= VOLTAGE_TOL && s.l_violation <= FLOW_TOL)
    }))
}
