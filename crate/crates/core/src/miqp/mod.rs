//! Per-step projection problem: a strictly convex QP with a diagonal Hessian,
//! hard box and row constraints, exact-penalty soft rows and integrality on a
//! subset of variables.
//!
//! The objective is `½ wᵀGw + gᵀw + ρ Σⱼ (Mⱼw − mⱼ)₊`. Soft rows are handled
//! inside the active-set method as kinks of a piecewise quadratic, so no slack
//! variables are introduced and the Hessian stays positive definite.

mod bnb;
mod enumerate;
mod qp;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

pub use bnb::{solve_miqp, solve_miqp_with, MiqpOptions, NodeOutcome, NodeRecord};
pub use enumerate::enumerate_oracle;
pub use qp::{solve_qp, Multipliers, QpSolution};

/// Feasibility tolerance for hard constraints.
pub const TOL_FEAS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiqpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("hard constraints are infeasible (violation {violation:e})")]
    Infeasible { violation: f64 },
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("linearly dependent working set")]
    Degenerate,
    #[error("node limit reached before any integer-feasible point was found")]
    NoIncumbent,
    #[error("enumeration not applicable: {0}")]
    NotEnumerable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionProblem {
    /// Diagonal of G, strictly positive.
    pub hessian_diag: Vec<f64>,
    /// g, the linear term.
    pub linear: Vec<f64>,
    /// Hard lower/upper bounds on w (may be infinite).
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Hard rows `H w ≤ h`.
    pub hard_rows: DMatrix<f64>,
    pub hard_rhs: Vec<f64>,
    /// Soft rows `M w ≤ m`, penalized by `slack_weight` per unit of violation.
    pub soft_rows: DMatrix<f64>,
    pub soft_rhs: Vec<f64>,
    /// Optional per-variable step bounds, intersected with `lower`/`upper`.
    pub rate_box: Option<(Vec<f64>, Vec<f64>)>,
    pub integer_idx: Vec<usize>,
    pub slack_weight: f64,
}

impl ProjectionProblem {
    /// Unconstrained problem with the given Hessian diagonal and linear term.
    pub fn new(hessian_diag: Vec<f64>, linear: Vec<f64>) -> ProjectionProblem {
        let n = hessian_diag.len();
        ProjectionProblem {
            hessian_diag,
            linear,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            hard_rows: DMatrix::zeros(0, n),
            hard_rhs: Vec::new(),
            soft_rows: DMatrix::zeros(0, n),
            soft_rhs: Vec::new(),
            rate_box: None,
            integer_idx: Vec::new(),
            slack_weight: 1e4,
        }
    }

    pub fn n(&self) -> usize {
        self.hessian_diag.len()
    }

    pub fn validate(&self) -> Result<(), MiqpError> {
        let n = self.n();
        let bad = |m: String| Err(MiqpError::InvalidProblem(m));
        if self.hessian_diag.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return bad("hessian_diag must be positive and finite".into());
        }
        if self.linear.len() != n || self.lower.len() != n || self.upper.len() != n {
            return bad("vector lengths do not match the Hessian".into());
        }
        if self.linear.iter().any(|v| !v.is_finite()) {
            return bad("non-finite linear term".into());
        }
        if self.hard_rows.ncols() != n || self.hard_rows.nrows() != self.hard_rhs.len() {
            return bad("hard row block has the wrong shape".into());
        }
        if self.soft_rows.ncols() != n || self.soft_rows.nrows() != self.soft_rhs.len() {
            return bad("soft row block has the wrong shape".into());
        }
        if self.hard_rows.iter().chain(self.soft_rows.iter()).any(|v| !v.is_finite())
            || self.hard_rhs.iter().chain(&self.soft_rhs).any(|v| v.is_nan())
        {
            return bad("non-finite constraint data".into());
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return bad("NaN bound".into());
        }
        if let Some((lo, hi)) = &self.rate_box {
            if lo.len() != n || hi.len() != n {
                return bad("rate box has the wrong length".into());
            }
        }
        if let Some(&i) = self.integer_idx.iter().find(|&&i| i >= n) {
            return bad(format!("integer index {i} out of range"));
        }
        if !(self.slack_weight > 0.0 && self.slack_weight.is_finite()) {
            return bad("slack weight must be positive".into());
        }
        Ok(())
    }

    /// Bounds after intersecting with the rate box.
    pub fn effective_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.lower.clone();
        let mut hi = self.upper.clone();
        if let Some((rl, rh)) = &self.rate_box {
            for i in 0..self.n() {
                lo[i] = lo[i].max(rl[i]);
                hi[i] = hi[i].min(rh[i]);
            }
        }
        (lo, hi)
    }

    pub fn is_integer(&self, i: usize) -> bool {
        self.integer_idx.contains(&i)
    }

    /// Full objective including the soft-row penalty.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let mut f = 0.0;
        for i in 0..self.n() {
            f += 0.5 * self.hessian_diag[i] * w[i] * w[i] + self.linear[i] * w[i];
        }
        f + self.slack_weight * self.soft_violations(w).iter().sum::<f64>()
    }

    /// `(Mⱼw − mⱼ)₊` for every soft row.
    pub fn soft_violations(&self, w: &[f64]) -> Vec<f64> {
        row_residuals(&self.soft_rows, &self.soft_rhs, w)
            .into_iter()
            .map(|r| r.max(0.0))
            .collect()
    }

    /// Largest violation of the hard bounds and hard rows.
    pub fn hard_violation(&self, w: &[f64]) -> f64 {
        let (lo, hi) = self.effective_box();
        let mut v: f64 = 0.0;
        for i in 0..self.n() {
            v = v.max(lo[i] - w[i]).max(w[i] - hi[i]);
        }
        for r in row_residuals(&self.hard_rows, &self.hard_rhs, w) {
            v = v.max(r);
        }
        v
    }

    /// Human-readable dump for offline inspection.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "n {}", self.n());
        let _ = writeln!(s, "G {}", join(&self.hessian_diag));
        let _ = writeln!(s, "g {}", join(&self.linear));
        let _ = writeln!(s, "lower {}", join(&self.lower));
        let _ = writeln!(s, "upper {}", join(&self.upper));
        if let Some((lo, hi)) = &self.rate_box {
            let _ = writeln!(s, "rate_lower {}", join(lo));
            let _ = writeln!(s, "rate_upper {}", join(hi));
        }
        let ints: Vec<String> = self.integer_idx.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "integer {}", ints.join(" "));
        let _ = writeln!(s, "rho {}", self.slack_weight);
        for (name, m, rhs) in [
            ("hard", &self.hard_rows, &self.hard_rhs),
            ("soft", &self.soft_rows, &self.soft_rhs),
        ] {
            for r in 0..m.nrows() {
                let row: Vec<f64> = m.row(r).iter().copied().collect();
                let _ = writeln!(s, "{name} {} <= {}", join(&row), rhs[r]);
            }
        }
        s
    }
}

pub(crate) fn row_residuals(m: &DMatrix<f64>, rhs: &[f64], w: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|r| {
            let mut s = 0.0;
            for c in 0..m.ncols() {
                s += m[(r, c)] * w[c];
            }
            s - rhs[r]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqpStatus {
    /// Global optimum with every soft row satisfied.
    Optimal,
    /// Global optimum of the penalized problem with some soft rows violated.
    SoftFeasible,
    /// Node limit reached; `w` is the best incumbent found.
    NodeLimit,
}

impl MiqpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MiqpStatus::Optimal => "optimal",
            MiqpStatus::SoftFeasible => "soft_feasible",
            MiqpStatus::NodeLimit => "node_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub status: MiqpStatus,
    pub nodes_explored: usize,
    /// KKT residual of the QP that produced `w` (integers pinned).
    pub kkt_residual: f64,
    /// Largest KKT residual over every QP solved.
    pub max_qp_kkt: f64,
    /// Objective of the root relaxation.
    pub root_bound: f64,
    /// Sum of soft-row violations at `w`.
    pub slack_total: f64,
    pub trace: Vec<NodeRecord>,
}

pub(crate) fn soft_status(prob: &ProjectionProblem, w: &[f64]) -> (MiqpStatus, f64) {
    let total: f64 = prob.soft_violations(w).iter().sum();
    let status = if prob.soft_violations(w).iter().any(|&v| v > TOL_FEAS) {
        MiqpStatus::SoftFeasible
    } else {
        MiqpStatus::Optimal
    };
    (status, total)
}

/// True when `a` precedes `b` lexicographically, ignoring differences below `tol`.
pub(crate) fn lex_less(a: &[f64], b: &[f64], tol: f64) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > tol {
            return x < y;
        }
    }
    false
}
