//! Exhaustive enumeration over the integer block; ground truth for branch and bound.

use super::qp::solve_boxed;
use super::{lex_less, soft_status, MiqpError, MiqpSolution, ProjectionProblem};

const MAX_RANGE: usize = 33;
const MAX_PRODUCT: usize = 1_000_000;

/// Solve the continuous QP for every integer assignment and keep the best.
///
/// Equal objectives (within 1e-9 relative) resolve to the lexicographically smallest `w`.
pub fn enumerate_oracle(prob: &ProjectionProblem) -> Result<MiqpSolution, MiqpError> {
    prob.validate()?;
    let (lo, hi) = prob.effective_box();
    let mut ranges = Vec::with_capacity(prob.integer_idx.len());
    let mut product: usize = 1;
    for &i in &prob.integer_idx {
        if !lo[i].is_finite() || !hi[i].is_finite() {
            return Err(MiqpError::NotEnumerable(format!("variable {i} is unbounded")));
        }
        let a = (lo[i] - 1e-6).ceil() as i64;
        let b = (hi[i] + 1e-6).floor() as i64;
        let len = (b - a + 1).max(0) as usize;
        if len > MAX_RANGE {
            return Err(MiqpError::NotEnumerable(format!("variable {i} has {len} values")));
        }
        product = product.saturating_mul(len);
        if product > MAX_PRODUCT {
            return Err(MiqpError::NotEnumerable(format!("more than {MAX_PRODUCT} assignments")));
        }
        ranges.push((a, len));
    }

    let mut best: Option<super::QpSolution> = None;
    let mut solves = 0;
    let mut max_kkt: f64 = 0.0;
    let mut root_violation = f64::INFINITY;
    for code in 0..product {
        let mut rest = code;
        let mut l = lo.clone();
        let mut h = hi.clone();
        for (&i, &(a, len)) in prob.integer_idx.iter().zip(&ranges) {
            let v = (a + (rest % len) as i64) as f64;
            rest /= len;
            l[i] = v;
            h[i] = v;
        }
        solves += 1;
        let sol = match solve_boxed(prob, &l, &h, None) {
            Ok(s) => s,
            Err(MiqpError::Infeasible { violation }) => {
                root_violation = root_violation.min(violation);
                continue;
            }
            Err(e) => return Err(e),
        };
        max_kkt = max_kkt.max(sol.kkt_residual);
        let better = match &best {
            None => true,
            Some(b) => {
                let tol = 1e-9 * (1.0 + b.objective.abs());
                sol.objective < b.objective - tol
                    || (sol.objective <= b.objective + tol && lex_less(&sol.w, &b.w, 1e-9))
            }
        };
        if better {
            best = Some(sol);
        }
    }
    let best = best.ok_or(MiqpError::Infeasible { violation: root_violation })?;
    let (status, slack_total) = soft_status(prob, &best.w);
    Ok(MiqpSolution {
        objective: best.objective,
        status,
        nodes_explored: solves,
        kkt_residual: best.kkt_residual,
        max_qp_kkt: max_kkt,
        root_bound: f64::NEG_INFINITY,
        slack_total,
        trace: Vec::new(),
        w: best.w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_value_range_takes_three_solves() {
        let mut p = ProjectionProblem::new(vec![1.0, 1.0], vec![-0.7, 0.2]);
        p.lower = vec![-1.0, f64::NEG_INFINITY];
        p.upper = vec![1.0, f64::INFINITY];
        p.integer_idx = vec![0];
        let s = enumerate_oracle(&p).unwrap();
        assert_eq!(s.nodes_explored, 3);
        assert_eq!(s.w[0], 1.0);
    }

    #[test]
    fn empty_integer_set_is_one_solve() {
        let p = ProjectionProblem::new(vec![2.0], vec![1.0]);
        let s = enumerate_oracle(&p).unwrap();
        assert_eq!(s.nodes_explored, 1);
        assert_eq!(s.w, vec![-0.5]);
    }

    #[test]
    fn rejects_unbounded_or_large_ranges() {
        let mut p = ProjectionProblem::new(vec![1.0], vec![0.0]);
        p.integer_idx = vec![0];
        assert!(matches!(enumerate_oracle(&p), Err(MiqpError::NotEnumerable(_))));
        p.lower = vec![0.0];
        p.upper = vec![40.0];
        assert!(matches!(enumerate_oracle(&p), Err(MiqpError::NotEnumerable(_))));
    }
}
