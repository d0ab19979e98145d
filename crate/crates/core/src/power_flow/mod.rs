//! Steady-state plant: Newton–Raphson AC power flow, the local tap-changer
//! settle loop, and the measurement map `y = [v; l]`.

mod network;
mod settle;

pub use network::{BranchAdmittance, Network};
pub use settle::{settle_local_taps, settle_local_taps_from};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::grid_case::{BusKind, GridCase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("singular power-flow Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("input vector does not match the case: {0}")]
    InvalidInput(String),
    #[error("measurement requested from a non-converged power flow")]
    NotConverged,
}

/// Controllable setpoints `u = [q; p; tap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Lattice indices of the controllable taps, in branch order.
    pub tap: Vec<usize>,
}

impl InputVector {
    /// Zero reactive power, the given active power and every controllable tap at its neutral index.
    pub fn neutral(case: &GridCase, p: Vec<f64>) -> InputVector {
        InputVector {
            q: vec![0.0; case.units.len()],
            p,
            tap: case
                .controllable_taps()
                .into_iter()
                .map(|i| case.branches[i].tap.as_ref().expect("tap").neutral_index())
                .collect(),
        }
    }

    pub fn zero(case: &GridCase) -> InputVector {
        InputVector::neutral(case, vec![0.0; case.units.len()])
    }

    /// Flatten to `[q; p; tap]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.q.len() * 2 + self.tap.len());
        out.extend_from_slice(&self.q);
        out.extend_from_slice(&self.p);
        out.extend(self.tap.iter().map(|&t| t as f64));
        out
    }

    /// Check dimensions and the tap lattice against the case.
    pub fn check_shape(&self, case: &GridCase) -> Result<(), PowerFlowError> {
        let nu = case.units.len();
        let taps = case.controllable_taps();
        if self.q.len() != nu || self.p.len() != nu || self.tap.len() != taps.len() {
            return Err(PowerFlowError::InvalidInput(format!(
                "expected {nu} units and {} taps, got q={}, p={}, tap={}",
                taps.len(),
                self.q.len(),
                self.p.len(),
                self.tap.len()
            )));
        }
        for (&idx, &br) in self.tap.iter().zip(&taps) {
            let spec = case.branches[br].tap.as_ref().expect("tap");
            if idx > spec.max_index() {
                return Err(PowerFlowError::InvalidInput(format!(
                    "tap index {idx} on branch {} exceeds {}",
                    case.branches[br].id,
                    spec.max_index()
                )));
            }
        }
        if self.q.iter().chain(&self.p).any(|v| !v.is_finite()) {
            return Err(PowerFlowError::InvalidInput("non-finite setpoint".into()));
        }
        Ok(())
    }
}

/// Uncontrolled consumption and generation, per bus in case order.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub gen_p: Vec<f64>,
}

impl Disturbance {
    pub fn from_case(case: &GridCase) -> Disturbance {
        Disturbance {
            load_p: case.buses.iter().map(|b| b.load_p).collect(),
            load_q: case.buses.iter().map(|b| b.load_q).collect(),
            gen_p: case.buses.iter().map(|b| b.gen_p).collect(),
        }
    }

    pub fn zero(case: &GridCase) -> Disturbance {
        let n = case.buses.len();
        Disturbance {
            load_p: vec![0.0; n],
            load_q: vec![0.0; n],
            gen_p: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    /// Infinity-norm bound on the power mismatch.
    pub tol: f64,
    /// Maximum number of Newton updates.
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Complex power entering each branch at its from and to ends.
    pub s_from: Vec<Complex64>,
    pub s_to: Vec<Complex64>,
    /// Apparent-power magnitude per branch, `max(|S_from|, |S_to|)`.
    pub flows: Vec<f64>,
    /// Total active series losses.
    pub losses: f64,
    /// Complex power delivered by the network at each bus (slack absorbs the residual).
    pub bus_injection: Vec<Complex64>,
    /// Mismatch evaluations performed; a case already at its solution reports 1.
    pub iterations: usize,
    pub converged: bool,
    pub mismatch: f64,
    /// Positions of the locally controlled taps, in `case.local_taps` order.
    pub local_tap_state: Vec<usize>,
    /// Set by the settle loop when a tap position set repeated.
    pub oscillated: bool,
    /// Single-step local tap moves made by the settle loop.
    pub local_tap_moves: usize,
}

impl PfSolution {
    pub fn complex_voltages(&self) -> Vec<Complex64> {
        self.v
            .iter()
            .zip(&self.theta)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

/// Starting positions of the local tap changers.
pub fn initial_local_taps(case: &GridCase) -> Vec<usize> {
    case.local_taps
        .iter()
        .map(|lt| {
            let br = case.branches.iter().find(|b| b.id == lt.branch).expect("validated");
            br.tap.as_ref().expect("validated tap").initial
        })
        .collect()
}

/// Per-branch winding ratio for controllable taps from `u`, local taps from
/// `local`, and every other tap at its initial position.
pub fn branch_ratios(case: &GridCase, u_tap: &[usize], local: &[usize]) -> Vec<f64> {
    let mut ratios: Vec<f64> = case
        .branches
        .iter()
        .map(|b| match &b.tap {
            Some(t) => t.ratio(t.initial).unwrap_or(1.0),
            None => 1.0,
        })
        .collect();
    for (&br, &idx) in case.controllable_taps().iter().zip(u_tap) {
        let t = case.branches[br].tap.as_ref().expect("tap");
        ratios[br] = t.ratio(idx.min(t.max_index())).expect("clamped");
    }
    for (lt, &idx) in case.local_taps.iter().zip(local) {
        if let Some(br) = case.branch_index(lt.branch) {
            let t = case.branches[br].tap.as_ref().expect("validated tap");
            ratios[br] = t.ratio(idx.min(t.max_index())).expect("clamped");
        }
    }
    ratios
}

/// Scheduled net injection per bus: fixed generation plus unit setpoints minus loads.
pub fn scheduled_injection(case: &GridCase, u: &InputVector, d: &Disturbance) -> Vec<Complex64> {
    let mut s: Vec<Complex64> = (0..case.buses.len())
        .map(|i| Complex64::new(d.gen_p[i] - d.load_p[i], -d.load_q[i]))
        .collect();
    for (k, unit) in case.units.iter().enumerate() {
        let i = case.bus_index(unit.bus).expect("validated unit bus");
        s[i] += Complex64::new(u.p[k], u.q[k]);
    }
    s
}

/// Bus positions whose angle (`pvpq`) and magnitude (`pq`) are Newton unknowns.
#[derive(Debug, Clone)]
pub struct NewtonIndex {
    pub pvpq: Vec<usize>,
    pub pq: Vec<usize>,
}

impl NewtonIndex {
    pub fn new(case: &GridCase) -> NewtonIndex {
        let pvpq = case
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind != BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let pq = case
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Pq)
            .map(|(i, _)| i)
            .collect();
        NewtonIndex { pvpq, pq }
    }

    pub fn dim(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }
}

/// Polar power-flow Jacobian `∂[P(pvpq); Q(pq)] / ∂[θ(pvpq); |V|(pq)]`.
pub fn jacobian(net: &Network, v: &[Complex64], idx: &NewtonIndex) -> DMatrix<f64> {
    let n = v.len();
    let ibus: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|k| net.ybus[(i, k)] * v[k]).sum())
        .collect();
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let j = Complex64::new(0.0, 1.0);
    // dS/dθ and dS/d|V| as dense complex matrices.
    let mut ds_da = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut ds_dm = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for r in 0..n {
        for c in 0..n {
            let y = net.ybus[(r, c)];
            let diag_i = if r == c { ibus[r] } else { Complex64::new(0.0, 0.0) };
            ds_da[(r, c)] = j * v[r] * (diag_i - y * v[c]).conj();
            ds_dm[(r, c)] = v[r] * (y * vnorm[c]).conj()
                + if r == c { ibus[r].conj() * vnorm[r] } else { Complex64::new(0.0, 0.0) };
        }
    }
    let (na, nm) = (idx.pvpq.len(), idx.pq.len());
    let mut jac = DMatrix::zeros(na + nm, na + nm);
    for (a, &r) in idx.pvpq.iter().enumerate() {
        for (b, &c) in idx.pvpq.iter().enumerate() {
            jac[(a, b)] = ds_da[(r, c)].re;
        }
        for (b, &c) in idx.pq.iter().enumerate() {
            jac[(a, na + b)] = ds_dm[(r, c)].re;
        }
    }
    for (a, &r) in idx.pq.iter().enumerate() {
        for (b, &c) in idx.pvpq.iter().enumerate() {
            jac[(na + a, b)] = ds_da[(r, c)].im;
        }
        for (b, &c) in idx.pq.iter().enumerate() {
            jac[(na + a, na + b)] = ds_dm[(r, c)].im;
        }
    }
    jac
}

fn mismatch(
    net: &Network,
    v: &[Complex64],
    spec: &[Complex64],
    idx: &NewtonIndex,
) -> DVector<f64> {
    let s = net.injections(v);
    let mut f = DVector::zeros(idx.dim());
    for (a, &i) in idx.pvpq.iter().enumerate() {
        f[a] = s[i].re - spec[i].re;
    }
    for (a, &i) in idx.pq.iter().enumerate() {
        f[idx.pvpq.len() + a] = s[i].im - spec[i].im;
    }
    f
}

/// Solve the AC power flow for fixed tap positions.
///
/// Non-convergence is reported through `converged = false`; only a singular
/// Jacobian is an error. `local` holds the local tap positions to use.
pub fn solve_power_flow(
    case: &GridCase,
    u: &InputVector,
    d: &Disturbance,
    local: &[usize],
    warm: Option<&PfSolution>,
    opts: &PfOptions,
) -> Result<PfSolution, PowerFlowError> {
    u.check_shape(case)?;
    let ratios = branch_ratios(case, &u.tap, local);
    let net = Network::build(case, &ratios);
    let idx = NewtonIndex::new(case);
    let spec = scheduled_injection(case, u, d);

    let n = case.buses.len();
    let (mut vm, mut va): (Vec<f64>, Vec<f64>) = match warm {
        Some(w) if w.v.len() == n && w.converged => (w.v.clone(), w.theta.clone()),
        _ => (vec![1.0; n], vec![0.0; n]),
    };
    for (i, b) in case.buses.iter().enumerate() {
        if b.kind != BusKind::Pq {
            vm[i] = b.v_set;
        }
        if b.kind == BusKind::Slack {
            va[i] = 0.0;
        }
    }

    let to_complex = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    };

    let mut v = to_complex(&vm, &va);
    let mut f = mismatch(&net, &v, &spec, &idx);
    let mut norm = f.amax();
    let mut evaluations = 1;
    let mut converged = norm < opts.tol;
    let na = idx.pvpq.len();

    while !converged && evaluations <= opts.max_iter {
        let jac = jacobian(&net, &v, &idx);
        let dx = jac
            .lu()
            .solve(&(-&f))
            .ok_or(PowerFlowError::SingularJacobian { iteration: evaluations })?;
        for (a, &i) in idx.pvpq.iter().enumerate() {
            va[i] += dx[a];
        }
        for (a, &i) in idx.pq.iter().enumerate() {
            vm[i] += dx[na + a];
        }
        v = to_complex(&vm, &va);
        f = mismatch(&net, &v, &spec, &idx);
        norm = f.amax();
        evaluations += 1;
        let diverged = !norm.is_finite() || vm.iter().any(|&m| !(m > 0.0 && m < 10.0));
        if diverged {
            break;
        }
        converged = norm < opts.tol;
    }

    let mut s_from = Vec::with_capacity(net.branches.len());
    let mut s_to = Vec::with_capacity(net.branches.len());
    for br in &net.branches {
        let (sf, st) = br.end_powers(&v);
        s_from.push(sf);
        s_to.push(st);
    }
    let flows = s_from
        .iter()
        .zip(&s_to)
        .map(|(a, b)| a.norm().max(b.norm()))
        .collect();
    let losses = s_from.iter().zip(&s_to).map(|(a, b)| a.re + b.re).sum();

    Ok(PfSolution {
        bus_injection: net.injections(&v),
        v: vm,
        theta: va,
        s_from,
        s_to,
        flows,
        losses,
        iterations: evaluations,
        converged,
        mismatch: norm,
        local_tap_state: local.to_vec(),
        oscillated: false,
        local_tap_moves: 0,
    })
}

/// Measured outputs `y = [v; l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputVector {
    pub values: Vec<f64>,
    pub n_buses: usize,
}

impl OutputVector {
    pub fn voltages(&self) -> &[f64] {
        &self.values[..self.n_buses]
    }

    pub fn flows(&self) -> &[f64] {
        &self.values[self.n_buses..]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Stack voltages and flow magnitudes of a converged solution.
pub fn measure(sol: &PfSolution) -> Result<OutputVector, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    let mut values = sol.v.clone();
    values.extend_from_slice(&sol.flows);
    Ok(OutputVector {
        values,
        n_buses: sol.v.len(),
    })
}
