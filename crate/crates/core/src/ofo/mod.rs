//! The feedback controller: one projected-gradient step per sampling period,
//! `u(k+1) = u(k) + w`, with `w` from the projection MIQP.

mod config;

use nalgebra::DMatrix;
use thiserror::Error;

pub use config::{ControllerConfig, ModelMode};

use crate::grid_case::GridCase;
use crate::miqp::{solve_miqp_with, MiqpError, MiqpOptions, MiqpSolution, MiqpStatus, ProjectionProblem};
use crate::power_flow::{
    settle_local_taps, solve_power_flow, Disturbance, InputVector, OutputVector, PfOptions,
};
use crate::sensitivity::{freeze, linearize, SensitivityError, SensitivityMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OfoError {
    #[error("config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("stale measurement: controller at step {expected}, measurement from step {got}")]
    StaleMeasurement { expected: usize, got: usize },
    #[error("anchor power flow did not converge")]
    AnchorNotConverged,
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Miqp(#[from] MiqpError),
}

/// Settled plant output tagged with the control step it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub step: usize,
    pub y: OutputVector,
}

/// Output limits, possibly tighter than the case's (auxiliary voltage task).
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLimits {
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub flow_max: Vec<f64>,
}

impl OutputLimits {
    pub fn from_case(case: &GridCase) -> OutputLimits {
        OutputLimits {
            v_min: case.buses.iter().map(|b| b.v_min).collect(),
            v_max: case.buses.iter().map(|b| b.v_max).collect(),
            flow_max: case.branches.iter().map(|b| b.flow_max).collect(),
        }
    }

    /// Lower the upper voltage limit of the given buses (by id) to `v_max`.
    pub fn cap_voltage(&mut self, case: &GridCase, bus_ids: &[usize], v_max: f64) {
        for &id in bus_ids {
            if let Some(i) = case.bus_index(id) {
                self.v_max[i] = self.v_max[i].min(v_max);
            }
        }
    }

    /// Per-output violation above/below the limits (0 when satisfied).
    pub fn violations(&self, y: &OutputVector) -> (Vec<f64>, Vec<f64>) {
        let v = y
            .voltages()
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - self.v_max[i]).max(self.v_min[i] - x).max(0.0))
            .collect();
        let l = y
            .flows()
            .iter()
            .zip(&self.flow_max)
            .map(|(&x, &m)| (x - m).max(0.0))
            .collect();
        (v, l)
    }
}

/// Gradient of the proxy cost `w_q‖q‖² − Σp + w_tapᵀ tap` with respect to `u`.
pub fn cost_gradient(case: &GridCase, u: &InputVector, cfg: &ControllerConfig, w_tap: &[f64]) -> Result<Vec<f64>, OfoError> {
    let nu = case.units.len();
    let nt = case.n_controllable_taps();
    if u.q.len() != nu || u.p.len() != nu || u.tap.len() != nt || w_tap.len() != nt {
        return Err(OfoError::Dimension(format!(
            "expected {nu} units and {nt} taps, got q={}, p={}, tap={}, w_tap={}",
            u.q.len(),
            u.p.len(),
            u.tap.len(),
            w_tap.len()
        )));
    }
    let mut g: Vec<f64> = u.q.iter().map(|q| 2.0 * cfg.w_q * q).collect();
    g.extend(std::iter::repeat_n(-1.0, nu));
    g.extend_from_slice(w_tap);
    Ok(g)
}

/// Central difference of total losses per controllable tap step at `(u, d)`,
/// local taps settled at the anchor and then held. Perturbations that fail
/// to converge leave a zero entry and are reported.
pub fn estimate_w_tap(case: &GridCase, u: &InputVector, d: &Disturbance) -> Result<(Vec<f64>, Vec<usize>), OfoError> {
    let opts = PfOptions::default();
    let base = settle_local_taps(case, u, d, &opts).map_err(SensitivityError::from)?;
    if !base.converged {
        return Err(OfoError::AnchorNotConverged);
    }
    let local = base.local_tap_state.clone();
    let taps = case.controllable_taps();
    let mut out = vec![0.0; taps.len()];
    let mut flagged = Vec::new();
    for (t, &br) in taps.iter().enumerate() {
        let max = case.branches[br].tap.as_ref().expect("tap").max_index();
        let losses_at = |idx: usize| {
            let mut up = u.clone();
            up.tap[t] = idx;
            solve_power_flow(case, &up, d, &local, Some(&base), &opts)
                .ok()
                .filter(|s| s.converged)
                .map(|s| s.losses)
        };
        let cur = u.tap[t];
        let hi = if cur < max { losses_at(cur + 1).map(|l| (l, 1.0)) } else { Some((base.losses, 0.0)) };
        let lo = if cur > 0 { losses_at(cur - 1).map(|l| (l, 1.0)) } else { Some((base.losses, 0.0)) };
        match (hi, lo) {
            (Some((a, da)), Some((b, db))) if da + db > 0.0 => out[t] = (a - b) / (da + db),
            _ => flagged.push(t),
        }
    }
    Ok((out, flagged))
}

/// Maximum-wind anchor: every farm at its rating, `q = 0`, neutral taps.
pub fn max_wind_anchor(case: &GridCase) -> InputVector {
    InputVector::neutral(case, case.units.iter().map(|u| u.p_rating).collect())
}

/// What the controller knows about the plant at a step.
pub struct PlantContext<'a> {
    pub disturbance: &'a Disturbance,
    pub local_taps: &'a [usize],
}

/// Linear model handed to the projection step: sensitivity and `∇_u f`.
#[derive(Debug, Clone)]
pub struct Model {
    pub sensitivity: DMatrix<f64>,
    pub gradient: Vec<f64>,
}

pub trait ModelProvider {
    fn model(&mut self, case: &GridCase, u: &InputVector, ctx: &PlantContext<'_>, cfg: &ControllerConfig) -> Result<Model, OfoError>;
    /// Number of sensitivity evaluations performed after construction.
    fn recomputations(&self) -> usize;
}

/// Constant anchor sensitivity and the proxy cost gradient.
pub struct FrozenModel {
    pub sensitivity: SensitivityMatrix,
    pub w_tap: Vec<f64>,
}

impl FrozenModel {
    /// Linearize at the maximum-wind anchor with the case's nominal loads.
    pub fn at_max_wind(case: &GridCase, cfg: &ControllerConfig) -> Result<FrozenModel, OfoError> {
        let u = max_wind_anchor(case);
        let d = Disturbance::from_case(case);
        let opts = PfOptions::default();
        let settled = settle_local_taps(case, &u, &d, &opts).map_err(SensitivityError::from)?;
        if !settled.converged {
            return Err(OfoError::AnchorNotConverged);
        }
        let lin = linearize(case, &u, &d, &settled.local_tap_state, &opts)?;
        let w_tap = match &cfg.w_tap {
            Some(v) => v.clone(),
            None => estimate_w_tap(case, &u, &d)?.0,
        };
        Ok(FrozenModel { sensitivity: freeze(lin.sensitivity), w_tap })
    }
}

impl ModelProvider for FrozenModel {
    fn model(&mut self, case: &GridCase, u: &InputVector, _ctx: &PlantContext<'_>, cfg: &ControllerConfig) -> Result<Model, OfoError> {
        Ok(Model {
            sensitivity: self.sensitivity.entries.clone(),
            gradient: cost_gradient(case, u, cfg, &self.w_tap)?,
        })
    }

    fn recomputations(&self) -> usize {
        0
    }
}

/// Fresh sensitivity at the current operating point and the gradient of
/// `losses − Σp` from the plant model.
#[derive(Debug, Default)]
pub struct PerfectModel {
    calls: usize,
}

impl ModelProvider for PerfectModel {
    fn model(&mut self, case: &GridCase, u: &InputVector, ctx: &PlantContext<'_>, _cfg: &ControllerConfig) -> Result<Model, OfoError> {
        self.calls += 1;
        let lin = linearize(case, u, ctx.disturbance, ctx.local_taps, &PfOptions::default())?;
        let nu = case.units.len();
        let mut gradient = lin.loss_gradient;
        for g in &mut gradient[nu..2 * nu] {
            *g -= 1.0;
        }
        Ok(Model { sensitivity: lin.sensitivity.entries, gradient })
    }

    fn recomputations(&self) -> usize {
        self.calls
    }
}

pub fn make_provider(case: &GridCase, cfg: &ControllerConfig) -> Result<Box<dyn ModelProvider + Send>, OfoError> {
    Ok(match cfg.mode {
        ModelMode::Approximate => Box::new(FrozenModel::at_max_wind(case, cfg)?),
        ModelMode::Perfect => Box::new(PerfectModel::default()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub u: InputVector,
    pub step_count: usize,
    pub last_status: Option<MiqpStatus>,
}

impl ControllerState {
    /// `q = 0`, `p = min(p_max, rating)`, controllable taps at their neutral index.
    pub fn initial(case: &GridCase, p_max: &[f64]) -> ControllerState {
        let p = case
            .units
            .iter()
            .zip(p_max)
            .map(|(u, &a)| a.min(u.p_rating).max(0.0))
            .collect();
        ControllerState { u: InputVector::neutral(case, p), step_count: 0, last_status: None }
    }
}

/// Assemble the projection problem for one step.
pub fn build_projection_problem(
    case: &GridCase,
    u: &InputVector,
    y_m: &OutputVector,
    model: &Model,
    limits: &OutputLimits,
    p_max: &[f64],
    cfg: &ControllerConfig,
) -> Result<ProjectionProblem, OfoError> {
    let nu = case.units.len();
    let taps = case.controllable_taps();
    let n = 2 * nu + taps.len();
    let nb = case.buses.len();
    let n_out = nb + case.branches.len();
    if model.sensitivity.nrows() != n_out || model.sensitivity.ncols() != n || model.gradient.len() != n {
        return Err(OfoError::Dimension(format!(
            "model is {}x{} with gradient {}, expected {n_out}x{n}",
            model.sensitivity.nrows(),
            model.sensitivity.ncols(),
            model.gradient.len()
        )));
    }
    if y_m.len() != n_out || p_max.len() != nu {
        return Err(OfoError::Dimension(format!(
            "measurement has {} outputs and {} availabilities, expected {n_out} and {nu}",
            y_m.len(),
            p_max.len()
        )));
    }

    let mut hess = vec![cfg.g_q; nu];
    hess.extend(std::iter::repeat_n(cfg.g_p, nu));
    hess.extend(std::iter::repeat_n(cfg.g_tap, taps.len()));
    let mut prob = ProjectionProblem::new(hess, model.gradient.clone());
    prob.slack_weight = cfg.slack_weight;

    for (k, unit) in case.units.iter().enumerate() {
        prob.lower[k] = unit.q_min - u.q[k];
        prob.upper[k] = unit.q_max - u.q[k];
        prob.lower[nu + k] = -u.p[k];
        prob.upper[nu + k] = p_max[k].min(unit.p_rating).max(0.0) - u.p[k];
    }
    for (t, &br) in taps.iter().enumerate() {
        let max = case.branches[br].tap.as_ref().expect("tap").max_index();
        prob.lower[2 * nu + t] = -(u.tap[t] as f64);
        prob.upper[2 * nu + t] = (max - u.tap[t]) as f64;
    }
    prob.integer_idx = (2 * nu..n).collect();

    if cfg.rate_q.is_some() || cfg.rate_p.is_some() || cfg.rate_tap.is_some() {
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for i in 0..n {
            let r = if i < nu {
                cfg.rate_q
            } else if i < 2 * nu {
                cfg.rate_p
            } else {
                cfg.rate_tap
            };
            if let Some(r) = r {
                lo[i] = -r;
                hi[i] = r;
            }
        }
        prob.rate_box = Some((lo, hi));
    }

    // soft output rows: y_m + S w within limits, skipping infinite limits
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..nb {
        let y = y_m.values[i];
        if limits.v_max[i].is_finite() {
            rows.push((i, 1.0, limits.v_max[i] - y));
        }
        if limits.v_min[i].is_finite() {
            rows.push((i, -1.0, y - limits.v_min[i]));
        }
    }
    for (j, &lmax) in limits.flow_max.iter().enumerate() {
        if lmax.is_finite() {
            rows.push((nb + j, 1.0, lmax - y_m.values[nb + j]));
        }
    }
    let mut m = DMatrix::zeros(rows.len(), n);
    let mut rhs = Vec::with_capacity(rows.len());
    for (r, &(out, sign, b)) in rows.iter().enumerate() {
        for c in 0..n {
            m[(r, c)] = sign * model.sensitivity[(out, c)];
        }
        rhs.push(b);
    }
    prob.soft_rows = m;
    prob.soft_rhs = rhs;
    Ok(prob)
}

/// Outcome of one controller step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub w: Vec<f64>,
    pub solution: MiqpSolution,
}

/// One iteration of the update law. `p_max` is the availability the new setpoint must respect.
#[allow(clippy::too_many_arguments)]
pub fn controller_step(
    case: &GridCase,
    state: &mut ControllerState,
    meas: &Measurement,
    ctx: &PlantContext<'_>,
    limits: &OutputLimits,
    p_max: &[f64],
    cfg: &ControllerConfig,
    provider: &mut dyn ModelProvider,
) -> Result<StepResult, OfoError> {
    if meas.step != state.step_count {
        return Err(OfoError::StaleMeasurement { expected: state.step_count, got: meas.step });
    }
    let model = provider.model(case, &state.u, ctx, cfg)?;
    let prob = build_projection_problem(case, &state.u, &meas.y, &model, limits, p_max, cfg)?;
    let opts = MiqpOptions { node_limit: cfg.node_limit, ..Default::default() };
    let sol = solve_miqp_with(&prob, &opts)?;

    let nu = case.units.len();
    let u = &mut state.u;
    for (k, unit) in case.units.iter().enumerate() {
        // w sits inside the box up to rounding; keep the setpoint exactly inside
        u.q[k] = (u.q[k] + sol.w[k]).clamp(unit.q_min, unit.q_max);
        let cap = p_max[k].min(unit.p_rating).max(0.0);
        u.p[k] = (u.p[k] + sol.w[nu + k]).clamp(0.0, cap);
    }
    for t in 0..u.tap.len() {
        let next = u.tap[t] as i64 + sol.w[2 * nu + t].round() as i64;
        u.tap[t] = next.max(0) as usize;
    }
    state.step_count += 1;
    state.last_status = Some(sol.status);
    Ok(StepResult { w: sol.w.clone(), solution: sol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid_case::parse_case;
    use crate::power_flow::measure;

    fn mini() -> GridCase {
        parse_case(fixtures::MINI_BLOCAUX).unwrap()
    }

    #[test]
    fn proxy_gradient_blocks() {
        let case = mini();
        let cfg = ControllerConfig::default();
        let mut u = InputVector::zero(&case);
        let g = cost_gradient(&case, &u, &cfg, &[0.3, -0.2]).unwrap();
        assert!(g[..4].iter().all(|&x| x == 0.0));
        assert!(g[4..8].iter().all(|&x| x == -1.0));
        assert_eq!(&g[8..], &[0.3, -0.2]);
        u.q[1] = 1.0;
        let g = cost_gradient(&case, &u, &cfg, &[0.0, 0.0]).unwrap();
        assert!((g[1] - 0.0052).abs() < 1e-15);
        assert!(cost_gradient(&case, &u, &cfg, &[0.0]).is_err());
    }

    #[test]
    fn w_tap_sign_follows_losses() {
        // one transformer feeding a load: a higher from-side ratio here
        // lowers the receiving voltage, raising current and losses
        let case = parse_case(
            "[CASE]\nname t\nbase_mva 1\n[BUS]\n1 slack 0.9 1.1 20 1.0 0 0 0\n2 pq 0.9 1.1 20 1.0 0.8 0.2 0\n\
             [BRANCH]\n1 1 2 0.02 0.1 0 inf 33 0.9 1.1 ctl 16\n",
        )
        .unwrap();
        let u = InputVector::zero(&case);
        let d = Disturbance::from_case(&case);
        let (w, flagged) = estimate_w_tap(&case, &u, &d).unwrap();
        assert!(flagged.is_empty());
        assert!(w[0] > 0.0, "{w:?}");
        let (w2, _) = estimate_w_tap(&case, &u, &d).unwrap();
        assert_eq!(w.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), w2.iter().map(|x| x.to_bits()).collect::<Vec<_>>());

        let mut idle = case.clone();
        idle.buses[1].load_p = 0.0;
        idle.buses[1].load_q = 0.0;
        let (w0, _) = estimate_w_tap(&idle, &u, &Disturbance::from_case(&idle)).unwrap();
        assert!(w0[0].abs() < 1e-9, "{w0:?}");
    }

    #[test]
    fn mini_anchor_w_tap_is_finite() {
        let case = mini();
        let (w, flagged) = estimate_w_tap(&case, &max_wind_anchor(&case), &Disturbance::from_case(&case)).unwrap();
        assert_eq!(w.len(), 2);
        assert!(flagged.is_empty());
        assert!(w.iter().all(|x| x.is_finite()));
    }

    fn setup(p_frac: f64) -> (GridCase, ControllerState, Measurement, Disturbance, Vec<usize>) {
        let case = mini();
        let p_max: Vec<f64> = case.units.iter().map(|u| p_frac * u.p_rating).collect();
        let state = ControllerState::initial(&case, &p_max);
        let d = Disturbance::from_case(&case);
        let sol = settle_local_taps(&case, &state.u, &d, &PfOptions::default()).unwrap();
        let meas = Measurement { step: 0, y: measure(&sol).unwrap() };
        (case, state, meas, d, sol.local_tap_state)
    }

    #[test]
    fn unconstrained_p_step_is_inverse_weight() {
        let (case, mut state, meas, d, local) = setup(0.1);
        let cfg = ControllerConfig { w_tap: Some(vec![0.0, 0.0]), ..Default::default() };
        let mut model = FrozenModel::at_max_wind(&case, &cfg).unwrap();
        let ctx = PlantContext { disturbance: &d, local_taps: &local };
        let limits = OutputLimits::from_case(&case);
        // availability far above the current setpoint: the p rows are inactive
        let p_max: Vec<f64> = case.units.iter().map(|u| u.p_rating).collect();
        let r = controller_step(&case, &mut state, &meas, &ctx, &limits, &p_max, &cfg, &mut model).unwrap();
        for k in 0..4 {
            assert!((r.w[4 + k] - 5.0).abs() < 1e-9, "{:?}", r.w);
        }
        assert_eq!(state.step_count, 1);
        assert_eq!(model.recomputations(), 0);

        // availability drop: the new setpoint lands exactly on it
        let (case, mut state, meas, d, local) = setup(0.3);
        let ctx = PlantContext { disturbance: &d, local_taps: &local };
        let low: Vec<f64> = case.units.iter().map(|u| 0.05 * u.p_rating).collect();
        controller_step(&case, &mut state, &meas, &ctx, &limits, &low, &cfg, &mut model).unwrap();
        for (k, unit) in case.units.iter().enumerate() {
            assert!(state.u.p[k] <= 0.05 * unit.p_rating);
        }
    }

    #[test]
    fn interior_point_with_zero_gradient_is_fixed() {
        let (case, state, meas, _, _) = setup(0.2);
        let n = case.n_inputs();
        let model = Model { sensitivity: DMatrix::zeros(case.n_outputs(), n), gradient: vec![0.0; n] };
        let p_max: Vec<f64> = case.units.iter().map(|u| u.p_rating).collect();
        let prob = build_projection_problem(&case, &state.u, &meas.y, &model, &OutputLimits::from_case(&case), &p_max, &ControllerConfig::default()).unwrap();
        let sol = crate::miqp::solve_miqp(&prob).unwrap();
        assert!(sol.w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn overvoltage_step_reduces_predicted_violation() {
        let (case, mut state, meas, d, local) = setup(0.3);
        let cfg = ControllerConfig { w_tap: Some(vec![0.0, 0.0]), ..Default::default() };
        let mut model = FrozenModel::at_max_wind(&case, &cfg).unwrap();
        let mut limits = OutputLimits::from_case(&case);
        let bus = case.bus_index(6).unwrap();
        limits.v_max[bus] = meas.y.values[bus] - 0.002;
        let before = meas.y.values[bus] - limits.v_max[bus];
        let ctx = PlantContext { disturbance: &d, local_taps: &local };
        let p_max: Vec<f64> = case.units.iter().map(|u| 0.3 * u.p_rating).collect();
        let r = controller_step(&case, &mut state, &meas, &ctx, &limits, &p_max, &cfg, &mut model).unwrap();
        let s = &model.sensitivity.entries;
        let predicted = meas.y.values[bus] + (0..r.w.len()).map(|c| s[(bus, c)] * r.w[c]).sum::<f64>();
        assert!(predicted - limits.v_max[bus] < before);
    }

    #[test]
    fn stale_measurement_rejected() {
        let (case, mut state, mut meas, d, local) = setup(0.3);
        meas.step = 4;
        let cfg = ControllerConfig { w_tap: Some(vec![0.0, 0.0]), ..Default::default() };
        let mut model = FrozenModel::at_max_wind(&case, &cfg).unwrap();
        let ctx = PlantContext { disturbance: &d, local_taps: &local };
        let p_max = vec![1.0; 4];
        let e = controller_step(&case, &mut state, &meas, &ctx, &OutputLimits::from_case(&case), &p_max, &cfg, &mut model);
        assert!(matches!(e, Err(OfoError::StaleMeasurement { expected: 0, got: 4 })));
    }

    #[test]
    fn doubling_g_tap_never_grows_tap_step() {
        let case = mini();
        let u = InputVector::neutral(&case, vec![10.0; 4]);
        let y = OutputVector { values: vec![1.0; case.n_outputs()], n_buses: case.buses.len() };
        let limits = OutputLimits {
            v_min: vec![0.0; 8],
            v_max: vec![2.0; 8],
            flow_max: vec![f64::INFINITY; 10],
        };
        let n = case.n_inputs();
        for wt in [-30.0, -2.6, 4.0, 700.0, 9000.0] {
            let model = Model { sensitivity: DMatrix::zeros(case.n_outputs(), n), gradient: { let mut g = vec![0.0; n]; g[8] = wt; g[9] = -wt / 3.0; g } };
            let mut prev = f64::INFINITY;
            for g_tap in [100.0, 200.0, 400.0, 800.0, 1600.0] {
                let cfg = ControllerConfig { g_tap, ..Default::default() };
                let prob = build_projection_problem(&case, &u, &y, &model, &limits, &[100.0; 4], &cfg).unwrap();
                let s = crate::miqp::solve_miqp(&prob).unwrap();
                let mag = s.w[8].abs() + s.w[9].abs();
                assert!(mag <= prev);
                prev = mag;
            }
        }
    }
}
