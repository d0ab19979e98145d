//! Primal active-set method for the relaxed projection problem.
//!
//! Constraint indices used for Bland's rule: lower bound `i`, upper bound
//! `n + i`, hard row `2n + j`, soft row `2n + m_h + j`.

use nalgebra::{DMatrix, DVector};

use super::{row_residuals, MiqpError, ProjectionProblem, TOL_FEAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundState {
    Free,
    AtLower,
    AtUpper,
    /// lo == hi; never released.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SoftState {
    Satisfied,
    Violated,
    /// On the kink, held as an equality with multiplier in `[0, ρ]`.
    Kink,
}

/// Multipliers of every constraint at the returned point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Multipliers {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub hard: Vec<f64>,
    /// In `[0, ρ]`; `ρ` for violated rows, 0 for strictly satisfied ones.
    pub soft: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub multipliers: Multipliers,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub(crate) warm: WarmStart,
}

/// Point and row working set handed from a parent node to its children.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct WarmStart {
    pub w: Vec<f64>,
    pub hard_active: Vec<bool>,
    pub soft_kink: Vec<bool>,
}

/// Solve the continuous relaxation with the given variables pinned.
pub fn solve_qp(prob: &ProjectionProblem, pins: &[(usize, f64)]) -> Result<QpSolution, MiqpError> {
    prob.validate()?;
    let (mut lo, mut hi) = prob.effective_box();
    for &(i, v) in pins {
        if i >= prob.n() {
            return Err(MiqpError::InvalidProblem(format!("pin index {i} out of range")));
        }
        lo[i] = v;
        hi[i] = v;
    }
    solve_boxed(prob, &lo, &hi, None)
}

struct Eqp {
    w: Vec<f64>,
    /// Multipliers of the row working set, hard rows first then kinked soft rows.
    lambda: Vec<f64>,
}

struct Solver<'a> {
    prob: &'a ProjectionProblem,
    lo: &'a [f64],
    hi: &'a [f64],
    n: usize,
    bounds: Vec<BoundState>,
    hard: Vec<bool>,
    soft: Vec<SoftState>,
    w: Vec<f64>,
}

impl Solver<'_> {
    fn rows_in_working_set(&self) -> Vec<(bool, usize)> {
        let mut r: Vec<(bool, usize)> = (0..self.hard.len())
            .filter(|&j| self.hard[j])
            .map(|j| (true, j))
            .collect();
        r.extend(
            (0..self.soft.len())
                .filter(|&j| self.soft[j] == SoftState::Kink)
                .map(|j| (false, j)),
        );
        r
    }

    fn row(&self, hard: bool, j: usize) -> (Vec<f64>, f64) {
        let (m, rhs) = if hard {
            (&self.prob.hard_rows, &self.prob.hard_rhs)
        } else {
            (&self.prob.soft_rows, &self.prob.soft_rhs)
        };
        (m.row(j).iter().copied().collect(), rhs[j])
    }

    /// Linear term including `ρ Mⱼ` of violated soft rows.
    fn effective_linear(&self) -> Vec<f64> {
        let mut c = self.prob.linear.clone();
        for (j, s) in self.soft.iter().enumerate() {
            if *s == SoftState::Violated {
                for i in 0..self.n {
                    c[i] += self.prob.slack_weight * self.prob.soft_rows[(j, i)];
                }
            }
        }
        c
    }

    /// Equality-constrained minimizer on the current working set (range-space method).
    fn eqp(&self, c: &[f64]) -> Result<Eqp, MiqpError> {
        let g = &self.prob.hessian_diag;
        let free: Vec<usize> = (0..self.n).filter(|&i| self.bounds[i] == BoundState::Free).collect();
        let rows = self.rows_in_working_set();
        let mut w = self.w.clone();
        if rows.is_empty() {
            for &i in &free {
                w[i] = -c[i] / g[i];
            }
            return Ok(Eqp { w, lambda: Vec::new() });
        }
        let k = rows.len();
        if k > free.len() {
            return Err(MiqpError::Degenerate);
        }
        // A restricted to free columns, rhs shifted by the fixed part
        let mut a = DMatrix::zeros(k, free.len());
        let mut b = DVector::zeros(k);
        for (r, &(hard, j)) in rows.iter().enumerate() {
            let (row, rhs) = self.row(hard, j);
            let mut shift = 0.0;
            for i in 0..self.n {
                if self.bounds[i] != BoundState::Free {
                    shift += row[i] * self.w[i];
                }
            }
            for (fc, &i) in free.iter().enumerate() {
                a[(r, fc)] = row[i];
            }
            b[r] = rhs - shift;
        }
        let ginv = DVector::from_iterator(free.len(), free.iter().map(|&i| 1.0 / g[i]));
        let cf = DVector::from_iterator(free.len(), free.iter().map(|&i| c[i]));
        // B = G^{-1/2} Aᵀ, K = BᵀB = RᵀR
        let mut bm = a.transpose();
        for (fc, gi) in ginv.iter().enumerate() {
            let s = gi.sqrt();
            for r in 0..k {
                bm[(fc, r)] *= s;
            }
        }
        let rfac = bm.qr().r();
        let diag_max = (0..k).map(|i| rfac[(i, i)].abs()).fold(0.0, f64::max);
        if (0..k).any(|i| rfac[(i, i)].abs() <= 1e-10 * diag_max.max(1e-300)) {
            return Err(MiqpError::Degenerate);
        }
        let solve_k = |rhs: &DVector<f64>| -> Result<DVector<f64>, MiqpError> {
            let y = rfac.tr_solve_upper_triangular(rhs).ok_or(MiqpError::Degenerate)?;
            rfac.solve_upper_triangular(&y).ok_or(MiqpError::Degenerate)
        };
        let primal = |lambda: &DVector<f64>| -> DVector<f64> {
            let t = &cf + a.transpose() * lambda;
            -t.component_mul(&ginv)
        };
        // K λ = −(b + A G⁻¹ c)
        let rhs = -(&b + &a * cf.component_mul(&ginv));
        let mut lambda = solve_k(&rhs)?;
        let wf = primal(&lambda);
        // one refinement step on the equality residual
        let resid = &a * &wf - &b;
        lambda += solve_k(&resid)?;
        let wf = primal(&lambda);
        for (fc, &i) in free.iter().enumerate() {
            w[i] = wf[fc];
        }
        Ok(Eqp { w, lambda: lambda.iter().copied().collect() })
    }

    /// Stationarity residual component per variable for the row multipliers given.
    fn gradient_with_rows(&self, w: &[f64], c: &[f64], rows: &[(bool, usize)], lambda: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = (0..self.n).map(|i| self.prob.hessian_diag[i] * w[i] + c[i]).collect();
        for (&(hard, j), &l) in rows.iter().zip(lambda) {
            let (row, _) = self.row(hard, j);
            for i in 0..self.n {
                r[i] += l * row[i];
            }
        }
        r
    }
}

fn initial_point(lo: &[f64], hi: &[f64], start: Option<&[f64]>) -> Vec<f64> {
    (0..lo.len())
        .map(|i| {
            let x = start.map_or(0.0, |s| s[i]);
            x.clamp(lo[i], hi[i])
        })
        .collect()
}

fn max_hard_row_violation(prob: &ProjectionProblem, w: &[f64]) -> f64 {
    row_residuals(&prob.hard_rows, &prob.hard_rhs, w)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Find a point inside the box satisfying the hard rows by minimizing
/// `½ε‖w‖² + Σ (Hw − h)₊` for decreasing ε.
fn phase_one(prob: &ProjectionProblem, lo: &[f64], hi: &[f64], start: &[f64]) -> Result<Vec<f64>, MiqpError> {
    let n = prob.n();
    let mut best = f64::INFINITY;
    for eps in [1e-6, 1e-9, 1e-12] {
        let mut aux = ProjectionProblem::new(vec![eps; n], vec![0.0; n]);
        aux.lower = lo.to_vec();
        aux.upper = hi.to_vec();
        aux.soft_rows = prob.hard_rows.clone();
        aux.soft_rhs = prob.hard_rhs.clone();
        aux.slack_weight = 1.0;
        let sol = solve_boxed(&aux, lo, hi, Some(&WarmStart {
            w: start.to_vec(),
            hard_active: Vec::new(),
            soft_kink: vec![false; prob.hard_rhs.len()],
        }))?;
        let v = max_hard_row_violation(prob, &sol.w);
        if v <= TOL_FEAS {
            return Ok(sol.w);
        }
        best = best.min(v);
    }
    Err(MiqpError::Infeasible { violation: best })
}

pub(crate) fn solve_boxed(
    prob: &ProjectionProblem,
    lo: &[f64],
    hi: &[f64],
    warm: Option<&WarmStart>,
) -> Result<QpSolution, MiqpError> {
    match solve_boxed_inner(prob, lo, hi, warm) {
        Err(MiqpError::Degenerate) if warm.is_some() => solve_boxed_inner(prob, lo, hi, None),
        other => other,
    }
}

fn solve_boxed_inner(
    prob: &ProjectionProblem,
    lo: &[f64],
    hi: &[f64],
    warm: Option<&WarmStart>,
) -> Result<QpSolution, MiqpError> {
    let n = prob.n();
    let mh = prob.hard_rhs.len();
    let ms = prob.soft_rhs.len();
    let rho = prob.slack_weight;

    let lo = lo.to_vec();
    let mut hi = hi.to_vec();
    for i in 0..n {
        if lo[i] > hi[i] {
            let gap = lo[i] - hi[i];
            if gap > TOL_FEAS * (1.0 + lo[i].abs()) {
                return Err(MiqpError::Infeasible { violation: gap });
            }
            hi[i] = lo[i];
        }
    }

    let mut w = initial_point(&lo, &hi, warm.map(|s| s.w.as_slice()));
    if max_hard_row_violation(prob, &w) > 0.0 {
        w = phase_one(prob, &lo, &hi, &w)?;
    }

    let bounds: Vec<BoundState> = (0..n)
        .map(|i| {
            if lo[i] == hi[i] {
                BoundState::Fixed
            } else if w[i] == lo[i] {
                BoundState::AtLower
            } else if w[i] == hi[i] {
                BoundState::AtUpper
            } else {
                BoundState::Free
            }
        })
        .collect();
    let hard_res = row_residuals(&prob.hard_rows, &prob.hard_rhs, &w);
    let soft_res = row_residuals(&prob.soft_rows, &prob.soft_rhs, &w);
    let near = |r: f64, rhs: f64| r.abs() <= 1e-12 * (1.0 + rhs.abs());
    let hard: Vec<bool> = (0..mh)
        .map(|j| warm.is_some_and(|s| s.hard_active.get(j) == Some(&true)) && near(hard_res[j], prob.hard_rhs[j]))
        .collect();
    let soft: Vec<SoftState> = (0..ms)
        .map(|j| {
            if warm.is_some_and(|s| s.soft_kink.get(j) == Some(&true)) && near(soft_res[j], prob.soft_rhs[j]) {
                SoftState::Kink
            } else if soft_res[j] > 0.0 {
                SoftState::Violated
            } else {
                SoftState::Satisfied
            }
        })
        .collect();

    let lo_ref = lo.as_slice();
    let hi_ref = hi.as_slice();
    let mut s = Solver { prob, lo: lo_ref, hi: hi_ref, n, bounds, hard, soft, w };
    let max_iter = 50 * (n + mh + ms) + 200;

    for iter in 1..=max_iter {
        let c = s.effective_linear();
        let eqp = s.eqp(&c)?;
        let p: Vec<f64> = (0..n).map(|i| eqp.w[i] - s.w[i]).collect();
        let pnorm = p.iter().fold(0.0f64, |a, x| a.max(x.abs()));

        // ratio test, ties to the lowest constraint index
        let mut alpha = 1.0;
        let mut block: Option<usize> = None;
        if pnorm > 0.0 {
            let mut consider = |idx: usize, num: f64, den: f64| {
                let a = (num / den).max(0.0);
                if a < alpha {
                    alpha = a;
                    block = Some(idx);
                }
            };
            for i in 0..n {
                if s.bounds[i] == BoundState::Free && p[i] < 0.0 && s.lo[i].is_finite() {
                    consider(i, s.lo[i] - s.w[i], p[i]);
                }
            }
            for i in 0..n {
                if s.bounds[i] == BoundState::Free && p[i] > 0.0 && s.hi[i].is_finite() {
                    consider(n + i, s.hi[i] - s.w[i], p[i]);
                }
            }
            let dir_tol = |row: nalgebra::MatrixView1xX<f64, nalgebra::U1, nalgebra::Dyn>| {
                1e-13 * row.iter().fold(0.0f64, |a, x| a.max(x.abs())) * pnorm
            };
            for j in 0..mh {
                if s.hard[j] {
                    continue;
                }
                let row = prob.hard_rows.row(j);
                let den = row.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
                if den > dir_tol(row) {
                    let num = prob.hard_rhs[j] - row.iter().zip(&s.w).map(|(a, b)| a * b).sum::<f64>();
                    consider(2 * n + j, num, den);
                }
            }
            for j in 0..ms {
                let row = prob.soft_rows.row(j);
                let den = row.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
                let blocking = match s.soft[j] {
                    SoftState::Satisfied => den > dir_tol(row),
                    SoftState::Violated => den < -dir_tol(row),
                    SoftState::Kink => false,
                };
                if blocking {
                    let num = prob.soft_rhs[j] - row.iter().zip(&s.w).map(|(a, b)| a * b).sum::<f64>();
                    consider(2 * n + mh + j, num, den);
                }
            }
        }

        if let Some(idx) = block {
            for i in 0..n {
                if s.bounds[i] == BoundState::Free {
                    s.w[i] += alpha * p[i];
                }
            }
            if idx < n {
                s.bounds[idx] = BoundState::AtLower;
                s.w[idx] = s.lo[idx];
            } else if idx < 2 * n {
                s.bounds[idx - n] = BoundState::AtUpper;
                s.w[idx - n] = s.hi[idx - n];
            } else if idx < 2 * n + mh {
                s.hard[idx - 2 * n] = true;
            } else {
                s.soft[idx - 2 * n - mh] = SoftState::Kink;
            }
            continue;
        }

        // full step: check multipliers
        s.w = eqp.w;
        let rows = s.rows_in_working_set();
        let grad = s.gradient_with_rows(&s.w, &c, &rows, &eqp.lambda);
        let cmax = c.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let tol = 1e-11 * (1.0 + cmax);
        let mut release: Option<usize> = None;
        for i in 0..n {
            let bad = match s.bounds[i] {
                BoundState::AtLower => grad[i] < -tol,
                _ => false,
            };
            if bad {
                release = Some(i);
                break;
            }
        }
        if release.is_none() {
            release = (0..n)
                .find(|&i| s.bounds[i] == BoundState::AtUpper && -grad[i] < -tol)
                .map(|i| n + i);
        }
        if release.is_none() {
            for (&(hard, j), &l) in rows.iter().zip(&eqp.lambda) {
                let bad = if hard { l < -tol } else { l < -tol || l > rho + tol };
                if bad {
                    let idx = if hard { 2 * n + j } else { 2 * n + mh + j };
                    release = Some(release.map_or(idx, |r| r.min(idx)));
                }
            }
        }
        match release {
            None => return Ok(finish(prob, &s, &c, &rows, &eqp.lambda, &grad, iter)),
            Some(idx) if idx < n => s.bounds[idx] = BoundState::Free,
            Some(idx) if idx < 2 * n => s.bounds[idx - n] = BoundState::Free,
            Some(idx) if idx < 2 * n + mh => s.hard[idx - 2 * n] = false,
            Some(idx) => {
                let j = idx - 2 * n - mh;
                let l = rows
                    .iter()
                    .zip(&eqp.lambda)
                    .find(|(r, _)| **r == (false, j))
                    .map(|(_, &l)| l)
                    .expect("kinked row in working set");
                s.soft[j] = if l < 0.0 { SoftState::Satisfied } else { SoftState::Violated };
            }
        }
    }
    Err(MiqpError::IterationLimit)
}

fn finish(
    prob: &ProjectionProblem,
    s: &Solver,
    c: &[f64],
    rows: &[(bool, usize)],
    lambda: &[f64],
    grad: &[f64],
    iterations: usize,
) -> QpSolution {
    let n = s.n;
    let mh = prob.hard_rhs.len();
    let ms = prob.soft_rhs.len();
    let rho = prob.slack_weight;
    let w = s.w.clone();

    let mut mult = Multipliers {
        lower: vec![0.0; n],
        upper: vec![0.0; n],
        hard: vec![0.0; mh],
        soft: vec![0.0; ms],
    };
    for i in 0..n {
        match s.bounds[i] {
            BoundState::AtLower => mult.lower[i] = grad[i],
            BoundState::AtUpper => mult.upper[i] = -grad[i],
            BoundState::Fixed => {
                mult.lower[i] = grad[i].max(0.0);
                mult.upper[i] = (-grad[i]).max(0.0);
            }
            BoundState::Free => {}
        }
    }
    for (&(hard, j), &l) in rows.iter().zip(lambda) {
        if hard {
            mult.hard[j] = l;
        } else {
            mult.soft[j] = l;
        }
    }
    for j in 0..ms {
        if s.soft[j] == SoftState::Violated {
            mult.soft[j] = rho;
        }
    }
    let _ = c;

    let kkt = kkt_residual(prob, s.lo, s.hi, &w, &mult);
    QpSolution {
        objective: prob.objective(&w),
        warm: WarmStart {
            w: w.clone(),
            hard_active: s.hard.clone(),
            soft_kink: s.soft.iter().map(|&x| x == SoftState::Kink).collect(),
        },
        w,
        multipliers: mult,
        kkt_residual: kkt,
        iterations,
    }
}

/// Scaled KKT residual of `(w, multipliers)` for the penalized problem on the box `[lo, hi]`.
pub(crate) fn kkt_residual(
    prob: &ProjectionProblem,
    lo: &[f64],
    hi: &[f64],
    w: &[f64],
    mult: &Multipliers,
) -> f64 {
    let n = prob.n();
    let rho = prob.slack_weight;
    let mut stat: Vec<f64> = (0..n)
        .map(|i| prob.hessian_diag[i] * w[i] + prob.linear[i] - mult.lower[i] + mult.upper[i])
        .collect();
    let mut scale: f64 = 1.0;
    for i in 0..n {
        scale = scale
            .max(1.0 + prob.linear[i].abs())
            .max(1.0 + (prob.hessian_diag[i] * w[i]).abs());
    }
    for (m, l) in [(&prob.hard_rows, &mult.hard), (&prob.soft_rows, &mult.soft)] {
        for j in 0..m.nrows() {
            for i in 0..n {
                let t = l[j] * m[(j, i)];
                stat[i] += t;
                scale = scale.max(1.0 + t.abs());
            }
        }
    }
    let stationarity = stat.iter().fold(0.0f64, |a, x| a.max(x.abs())) / scale;

    let mut primal: f64 = 0.0;
    let mut compl: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for i in 0..n {
        primal = primal.max(lo[i] - w[i]).max(w[i] - hi[i]);
        dual = dual.max(-mult.lower[i]).max(-mult.upper[i]);
        if lo[i].is_finite() {
            compl = compl.max(mult.lower[i] * (w[i] - lo[i]).abs());
        }
        if hi[i].is_finite() {
            compl = compl.max(mult.upper[i] * (hi[i] - w[i]).abs());
        }
    }
    for (j, r) in row_residuals(&prob.hard_rows, &prob.hard_rhs, w).into_iter().enumerate() {
        primal = primal.max(r);
        dual = dual.max(-mult.hard[j]);
        compl = compl.max(mult.hard[j] * r.abs());
    }
    for (j, r) in row_residuals(&prob.soft_rows, &prob.soft_rhs, w).into_iter().enumerate() {
        let l = mult.soft[j];
        dual = dual.max(-l).max(l - rho);
        // subgradient consistency: l = 0 needs r ≤ 0, l = ρ needs r ≥ 0, interior needs r = 0
        compl = compl.max(l * r.min(0.0).abs()).max((rho - l) * r.max(0.0));
    }
    stationarity
        .max(primal)
        .max(dual / (1.0 + rho))
        .max(compl / scale)
}
