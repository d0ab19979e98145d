//! Steady-state input→output sensitivity `∇ᵤh(u, d)`.
//!
//! The continuous block (`q`, `p` columns) comes from the implicit function
//! theorem on the converged Newton Jacobian; tap columns are discrete ±1-step
//! differences of the plant since the tap enters the admittance matrix on a
//! lattice. [`finite_difference_sensitivity`] is an independent oracle.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid_case::{BusKind, GridCase};
use crate::power_flow::{
    branch_ratios, jacobian, solve_power_flow, Disturbance, InputVector, Network, NewtonIndex,
    PfOptions, PfSolution, PowerFlowError,
};

/// Floor on `|S|` when differentiating a flow magnitude.
pub const FLOW_MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("power flow did not converge at the linearization point")]
    NotConverged,
    #[error("singular power-flow Jacobian at the linearization point")]
    SingularJacobian,
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

/// Dense `(n_buses + n_branches) × (2·n_units + n_taps)` sensitivity.
///
/// Rows follow `[v; l]`, columns `[q; p; tap]`. Tap columns are per lattice step.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub entries: DMatrix<f64>,
    pub anchor_u: InputVector,
    pub anchor_d: Disturbance,
    pub anchor_local: Vec<usize>,
    /// Set once the matrix is designated as the constant model for a run.
    pub frozen: bool,
    /// Columns whose perturbed power flows failed; their entries are zero.
    pub flagged_columns: Vec<usize>,
}

impl SensitivityMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Rows labelled by output name, columns by input name.
    pub fn to_csv(&self, case: &GridCase) -> String {
        let mut s = String::from("output");
        for name in case.input_names() {
            s.push(',');
            s.push_str(&name);
        }
        s.push('\n');
        for (r, name) in case.output_names().iter().enumerate() {
            s.push_str(name);
            for c in 0..self.cols() {
                let _ = write!(s, ",{}", self.entries[(r, c)]);
            }
            s.push('\n');
        }
        s
    }
}

/// Mark a sensitivity as the constant model used for a whole run.
pub fn freeze(mut s: SensitivityMatrix) -> SensitivityMatrix {
    s.frozen = true;
    s
}

/// Sensitivity together with the gradient of total series losses w.r.t. `u`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub sensitivity: SensitivityMatrix,
    pub loss_gradient: Vec<f64>,
}

/// Analytic sensitivity at `(u, d)` with local taps held at `local`.
pub fn compute_sensitivity(
    case: &GridCase,
    u: &InputVector,
    d: &Disturbance,
    local: &[usize],
    opts: &PfOptions,
) -> Result<SensitivityMatrix, SensitivityError> {
    Ok(linearize(case, u, d, local, opts)?.sensitivity)
}

fn solve_converged(
    case: &GridCase,
    u: &InputVector,
    d: &Disturbance,
    local: &[usize],
    warm: Option<&PfSolution>,
    opts: &PfOptions,
) -> Result<PfSolution, SensitivityError> {
    let sol = solve_power_flow(case, u, d, local, warm, opts)?;
    if sol.converged {
        Ok(sol)
    } else {
        Err(SensitivityError::NotConverged)
    }
}

fn output_vector(sol: &PfSolution) -> DVector<f64> {
    DVector::from_iterator(
        sol.v.len() + sol.flows.len(),
        sol.v.iter().chain(&sol.flows).copied(),
    )
}

/// Derivative of `max(|S_from|, |S_to|)` given both end powers and their derivatives.
fn flow_magnitude_derivative(sf: Complex64, st: Complex64, dsf: Complex64, dst: Complex64) -> f64 {
    let (s, ds) = if sf.norm() >= st.norm() { (sf, dsf) } else { (st, dst) };
    (s.re * ds.re + s.im * ds.im) / s.norm().max(FLOW_MAGNITUDE_FLOOR)
}

/// Analytic sensitivity plus the loss gradient, sharing one Jacobian factorization.
pub fn linearize(
    case: &GridCase,
    u: &InputVector,
    d: &Disturbance,
    local: &[usize],
    opts: &PfOptions,
) -> Result<Linearization, SensitivityError> {
    let base = solve_converged(case, u, d, local, None, opts)?;
    let ratios = branch_ratios(case, &u.tap, local);
    let net = Network::build(case, &ratios);
    let idx = NewtonIndex::new(case);
    let v = base.complex_voltages();
    let lu = jacobian(&net, &v, &idx).lu();

    let nb = case.buses.len();
    let nl = case.branches.len();
    let nu = case.units.len();
    let taps = case.controllable_taps();
    let n_in = 2 * nu + taps.len();
    let mut entries = DMatrix::zeros(nb + nl, n_in);
    let mut loss_gradient = vec![0.0; n_in];

    // row of each bus in the Newton system
    let mut p_row = vec![None; nb];
    let mut q_row = vec![None; nb];
    for (a, &i) in idx.pvpq.iter().enumerate() {
        p_row[i] = Some(a);
    }
    for (a, &i) in idx.pq.iter().enumerate() {
        q_row[i] = Some(idx.pvpq.len() + a);
    }

    for (k, unit) in case.units.iter().enumerate() {
        let bus = case.bus_index(unit.bus).expect("validated unit bus");
        for (col, row) in [(k, q_row[bus]), (nu + k, p_row[bus])] {
            // slack (p, q) and PV (q) injections do not move the state
            let Some(row) = row else { continue };
            let mut rhs = DVector::zeros(idx.dim());
            rhs[row] = 1.0;
            let dx = lu.solve(&rhs).ok_or(SensitivityError::SingularJacobian)?;
            let mut dvm = vec![0.0; nb];
            let mut dva = vec![0.0; nb];
            for (a, &i) in idx.pvpq.iter().enumerate() {
                dva[i] = dx[a];
            }
            for (a, &i) in idx.pq.iter().enumerate() {
                dvm[i] = dx[idx.pvpq.len() + a];
            }
            let j = Complex64::new(0.0, 1.0);
            let dv: Vec<Complex64> = (0..nb)
                .map(|i| v[i] * (j * dva[i] + dvm[i] / base.v[i]))
                .collect();
            for i in 0..nb {
                entries[(i, col)] = dvm[i];
            }
            let mut dloss = 0.0;
            for (b, adm) in net.branches.iter().enumerate() {
                let (dsf, dst) = adm.end_power_derivative(&v, dv[adm.from], dv[adm.to]);
                entries[(nb + b, col)] =
                    flow_magnitude_derivative(base.s_from[b], base.s_to[b], dsf, dst);
                dloss += dsf.re + dst.re;
            }
            loss_gradient[col] = dloss;
        }
    }

    let mut flagged = Vec::new();
    for (t, &br) in taps.iter().enumerate() {
        let col = 2 * nu + t;
        let max = case.branches[br].tap.as_ref().expect("tap").max_index();
        let at = |idx: usize| -> Option<PfSolution> {
            let mut up = u.clone();
            up.tap[t] = idx;
            solve_converged(case, &up, d, local, Some(&base), opts).ok()
        };
        let cur = u.tap[t];
        let (hi, lo, span) = match (cur < max, cur > 0) {
            (true, true) => (at(cur + 1), at(cur - 1), 2.0),
            (true, false) => (at(cur + 1), Some(base.clone()), 1.0),
            (false, true) => (Some(base.clone()), at(cur - 1), 1.0),
            (false, false) => (None, None, 1.0),
        };
        match (hi, lo) {
            (Some(h), Some(l)) => {
                let diff = (output_vector(&h) - output_vector(&l)) / span;
                entries.set_column(col, &diff);
                loss_gradient[col] = (h.losses - l.losses) / span;
            }
            _ => flagged.push(col),
        }
    }

    Ok(Linearization {
        sensitivity: SensitivityMatrix {
            entries,
            anchor_u: u.clone(),
            anchor_d: d.clone(),
            anchor_local: local.to_vec(),
            frozen: false,
            flagged_columns: flagged,
        },
        loss_gradient,
    })
}

/// Power-flow options used by the finite-difference oracle; tighter than the
/// plant default so that difference quotients are not dominated by solver noise.
pub fn oracle_pf_options() -> PfOptions {
    PfOptions {
        tol: 1e-10,
        max_iter: 50,
    }
}

/// Central-difference sensitivity: `step` (p.u.) for `q`/`p` columns, ±1 index for taps.
///
/// Columns are evaluated concurrently. A column whose perturbed solves fail is
/// flagged and left at zero.
pub fn finite_difference_sensitivity(
    case: &GridCase,
    u: &InputVector,
    d: &Disturbance,
    local: &[usize],
    step: f64,
) -> Result<SensitivityMatrix, SensitivityError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(SensitivityError::InvalidStep(step));
    }
    let opts = oracle_pf_options();
    let base = solve_converged(case, u, d, local, None, &opts)?;
    let nu = case.units.len();
    let taps = case.controllable_taps();
    let n_in = 2 * nu + taps.len();
    let n_out = case.n_outputs();

    let columns: Vec<Option<DVector<f64>>> = (0..n_in)
        .into_par_iter()
        .map(|col| {
            let perturbed = |delta: f64| -> Option<DVector<f64>> {
                let mut up = u.clone();
                if col < nu {
                    up.q[col] += delta;
                } else if col < 2 * nu {
                    up.p[col - nu] += delta;
                } else {
                    let t = col - 2 * nu;
                    let next = up.tap[t] as i64 + delta as i64;
                    let max = case.branches[taps[t]].tap.as_ref()?.max_index() as i64;
                    if next < 0 || next > max {
                        return None;
                    }
                    up.tap[t] = next as usize;
                }
                solve_converged(case, &up, d, local, Some(&base), &opts)
                    .ok()
                    .map(|s| output_vector(&s))
            };
            let (h, span) = if col < 2 * nu { (step, 2.0 * step) } else { (1.0, 2.0) };
            match (perturbed(h), perturbed(-h)) {
                (Some(a), Some(b)) => Some((a - b) / span),
                // one-sided at the tap lattice ends
                (Some(a), None) if col >= 2 * nu => Some(a - output_vector(&base)),
                (None, Some(b)) if col >= 2 * nu => Some(output_vector(&base) - b),
                _ => None,
            }
        })
        .collect();

    let mut entries = DMatrix::zeros(n_out, n_in);
    let mut flagged = Vec::new();
    for (c, col) in columns.into_iter().enumerate() {
        match col {
            Some(v) => entries.set_column(c, &v),
            None => flagged.push(c),
        }
    }
    Ok(SensitivityMatrix {
        entries,
        anchor_u: u.clone(),
        anchor_d: d.clone(),
        anchor_local: local.to_vec(),
        frozen: false,
        flagged_columns: flagged,
    })
}

/// True when the slack buses' voltage rows are structurally zero.
pub fn slack_rows_are_zero(case: &GridCase, s: &SensitivityMatrix) -> bool {
    case.buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BusKind::Slack)
        .all(|(i, _)| s.entries.row(i).iter().all(|&x| x == 0.0))
}
