//! Run metrics and the `records.csv` writer.

use std::fmt::{self, Write as _};

use super::RunRecord;
use crate::grid_case::GridCase;

/// Voltage violation (p.u.) below which an output counts as satisfied.
pub const VOLTAGE_TOL: f64 = 1e-6;
/// Flow violation below which a line counts as satisfied.
pub const FLOW_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mode: String,
    pub steps: usize,
    pub injected_fraction: f64,
    pub available_energy: f64,
    pub injected_energy: f64,
    /// `(output name, Σ violation over steps)`, only non-zero entries.
    pub violation_integrals: Vec<(String, f64)>,
    pub total_tap_moves: usize,
    pub local_tap_moves: usize,
    pub mean_nodes: f64,
    pub max_nodes: usize,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub input_violation_steps: usize,
    pub failed_steps: usize,
    pub aborted: bool,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode: {}", self.mode)?;
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "injected_fraction: {:.6}", self.injected_fraction)?;
        writeln!(f, "available_energy: {:.6}", self.available_energy)?;
        writeln!(f, "injected_energy: {:.6}", self.injected_energy)?;
        writeln!(f, "total_tap_moves: {}", self.total_tap_moves)?;
        writeln!(f, "local_tap_moves: {}", self.local_tap_moves)?;
        writeln!(f, "mean_nodes: {:.3}", self.mean_nodes)?;
        writeln!(f, "max_nodes: {}", self.max_nodes)?;
        writeln!(f, "mean_solve_ms: {:.4}", self.mean_solve_ms)?;
        writeln!(f, "max_solve_ms: {:.4}", self.max_solve_ms)?;
        writeln!(f, "input_violation_steps: {}", self.input_violation_steps)?;
        writeln!(f, "failed_steps: {}", self.failed_steps)?;
        writeln!(f, "aborted: {}", self.aborted)?;
        if self.violation_integrals.is_empty() {
            writeln!(f, "violation_integrals: none")?;
        } else {
            writeln!(f, "violation_integrals:")?;
            for (name, v) in &self.violation_integrals {
                writeln!(f, "  {name}: {v:.6e}")?;
            }
        }
        Ok(())
    }
}

/// Aggregate metrics. An empty or zero-wind run has injected fraction 1.
pub fn summarize(case: &GridCase, run: &RunRecord) -> Summary {
    let names = case.output_names();
    let nb = case.buses.len();
    let mut integrals = vec![0.0; names.len()];
    for s in run.steps.iter().filter(|s| s.converged) {
        for (i, &y) in s.y.iter().enumerate() {
            let v = if i < nb {
                (y - run.limits.v_max[i]).max(run.limits.v_min[i] - y).max(0.0)
            } else {
                (y - run.limits.flow_max[i - nb]).max(0.0)
            };
            integrals[i] += v;
        }
    }
    let n = run.steps.len().max(1) as f64;
    let ms: Vec<f64> = run.step_seconds.iter().map(|s| s * 1e3).collect();
    Summary {
        mode: run.mode.clone(),
        steps: run.steps.len(),
        injected_fraction: run.injected_fraction(),
        available_energy: run.steps.iter().map(|s| s.available).sum(),
        injected_energy: run.steps.iter().map(|s| s.injected).sum(),
        violation_integrals: names
            .into_iter()
            .zip(integrals)
            .filter(|(_, v)| *v > 0.0)
            .collect(),
        total_tap_moves: run.total_tap_moves(),
        local_tap_moves: run.steps.iter().map(|s| s.local_tap_moves).sum(),
        mean_nodes: run.steps.iter().map(|s| s.nodes as f64).sum::<f64>() / n,
        max_nodes: run.steps.iter().map(|s| s.nodes).max().unwrap_or(0),
        mean_solve_ms: ms.iter().sum::<f64>() / ms.len().max(1) as f64,
        max_solve_ms: ms.iter().copied().fold(0.0, f64::max),
        input_violation_steps: run.input_violation_steps(),
        failed_steps: run.steps.iter().filter(|s| !s.converged).count(),
        aborted: run.aborted,
    }
}

/// True when the last `tail` steps are converged and within both tolerances.
pub fn steady_state_ok(run: &RunRecord, tail: usize) -> bool {
    let start = run.steps.len().saturating_sub(tail);
    run.steps.len() >= tail
        && run.steps[start..]
            .iter()
            .all(|s| s.converged && s.v_violation <= VOLTAGE_TOL && s.l_violation <= FLOW_TOL)
}

/// Sum of output violations beyond [`VOLTAGE_TOL`] and [`FLOW_TOL`] in
/// consecutive windows starting at `start`.
pub fn window_violation_integrals(run: &RunRecord, start: usize, window: usize) -> Vec<f64> {
    let nb = run.limits.v_max.len();
    run.steps
        .get(start..)
        .unwrap_or(&[])
        .chunks(window)
        .map(|chunk| {
            chunk
                .iter()
                .map(|s| {
                    s.y.iter()
                        .enumerate()
                        .map(|(i, &y)| {
                            if i < nb {
                                let v = (y - run.limits.v_max[i]).max(run.limits.v_min[i] - y);
                                if v > VOLTAGE_TOL { v } else { 0.0 }
                            } else {
                                let v = y - run.limits.flow_max[i - nb];
                                if v > FLOW_TOL { v } else { 0.0 }
                            }
                        })
                        .filter(|v| v.is_finite())
                        .sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// One row per step. Columns: `step, converged, status, objective, nodes,
/// slack, losses, available, injected, curtailed, tap_moves, local_tap_moves,
/// v_violation, l_violation, input_violation`, then the inputs (`q_*, p_*,
/// tap_*`), the applied step (`w_*`), the outputs (`v_*, l_*`), line usage
/// `use_*` for limited lines and local tap positions `lt_*`.
pub fn records_csv(case: &GridCase, run: &RunRecord) -> String {
    let inputs = case.input_names();
    let outputs = case.output_names();
    let limited: Vec<usize> = (0..case.branches.len())
        .filter(|&j| run.limits.flow_max[j].is_finite())
        .collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# mode={} config_hash={:016x} case={} scenario={}",
        run.mode, run.config_hash, run.case_name, run.scenario_name
    );
    let mut header: Vec<String> = [
        "step", "converged", "status", "objective", "nodes", "slack", "losses", "available", "injected",
        "curtailed", "tap_moves", "local_tap_moves", "v_violation", "l_violation", "input_violation",
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    header.extend(inputs.iter().cloned());
    header.extend(inputs.iter().map(|n| format!("w_{n}")));
    header.extend(outputs.iter().cloned());
    header.extend(limited.iter().map(|&j| format!("use_{}", case.branches[j].id)));
    header.extend(case.local_taps.iter().map(|lt| format!("lt_{}", lt.branch)));
    s.push_str(&header.join(","));
    s.push('\n');

    let nb = case.buses.len();
    for r in &run.steps {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            u8::from(r.converged),
            r.status,
            r.objective,
            r.nodes,
            r.slack,
            r.losses,
            r.available,
            r.injected,
            r.available - r.injected,
            r.tap_moves,
            r.local_tap_moves,
            r.v_violation,
            r.l_violation,
            r.input_violation
        );
        for v in r.u.q.iter().chain(&r.u.p) {
            let _ = write!(s, ",{v}");
        }
        for t in &r.u.tap {
            let _ = write!(s, ",{t}");
        }
        for v in r.w.iter().chain(&r.y) {
            let _ = write!(s, ",{v}");
        }
        for &j in &limited {
            let _ = write!(s, ",{}", r.y[nb + j] / run.limits.flow_max[j]);
        }
        for t in &r.local_taps {
            let _ = write!(s, ",{t}");
        }
        s.push('\n');
    }
    s
}
