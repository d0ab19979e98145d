//! Best-first branch and bound over the integer block.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::qp::{solve_boxed, QpSolution, WarmStart};
use super::{lex_less, soft_status, MiqpError, MiqpSolution, MiqpStatus, ProjectionProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiqpOptions {
    pub node_limit: usize,
    /// A relaxed integer component within this distance of an integer counts as integral.
    pub tol_int: f64,
    /// Record every explored node in [`MiqpSolution::trace`].
    pub trace: bool,
}

impl Default for MiqpOptions {
    fn default() -> Self {
        MiqpOptions {
            node_limit: 100_000,
            tol_int: 1e-6,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeOutcome {
    Infeasible,
    Pruned,
    Branched,
    Integral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub depth: usize,
    /// Relaxed objective of the parent (−∞ at the root).
    pub parent_bound: f64,
    /// Incumbent objective when the node was popped.
    pub incumbent: f64,
    pub relaxed_objective: Option<f64>,
    pub outcome: NodeOutcome,
}

struct Node {
    bound: f64,
    seq: usize,
    depth: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    warm: Option<WarmStart>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: smallest bound first, then oldest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn tie_tol(obj: f64) -> f64 {
    1e-9 * (1.0 + obj.abs())
}

pub fn solve_miqp(prob: &ProjectionProblem) -> Result<MiqpSolution, MiqpError> {
    solve_miqp_with(prob, &MiqpOptions::default())
}

pub fn solve_miqp_with(prob: &ProjectionProblem, opts: &MiqpOptions) -> Result<MiqpSolution, MiqpError> {
    prob.validate()?;
    let (mut lo, mut hi) = prob.effective_box();
    for &i in &prob.integer_idx {
        if !lo[i].is_finite() || !hi[i].is_finite() {
            return Err(MiqpError::InvalidProblem(format!("integer variable {i} is unbounded")));
        }
        lo[i] = (lo[i] - opts.tol_int).ceil();
        hi[i] = (hi[i] + opts.tol_int).floor();
        if lo[i] > hi[i] {
            return Err(MiqpError::Infeasible { violation: lo[i] - hi[i] });
        }
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::NEG_INFINITY, seq: 0, depth: 0, lo, hi, warm: None });
    let mut seq = 1;
    let mut nodes = 0;
    let mut incumbent: Option<QpSolution> = None;
    let mut root_bound = None;
    let mut root_error = None;
    let mut max_kkt: f64 = 0.0;
    let mut trace = Vec::new();
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        if nodes >= opts.node_limit {
            hit_limit = true;
            break;
        }
        let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
        if node.bound > inc_obj + tie_tol(inc_obj) {
            // best-first: every remaining node is worse
            break;
        }
        nodes += 1;
        let id = nodes;
        let mut record = |relaxed: Option<f64>, outcome| {
            if opts.trace {
                trace.push(NodeRecord {
                    id,
                    depth: node.depth,
                    parent_bound: node.bound,
                    incumbent: inc_obj,
                    relaxed_objective: relaxed,
                    outcome,
                });
            }
        };

        let sol = match solve_boxed(prob, &node.lo, &node.hi, node.warm.as_ref()) {
            Ok(s) => s,
            Err(MiqpError::Infeasible { .. }) => {
                if node.depth == 0 {
                    root_error = Some(MiqpError::Infeasible { violation: prob.hard_violation(&vec![0.0; prob.n()]) });
                }
                record(None, NodeOutcome::Infeasible);
                continue;
            }
            Err(e) => return Err(e),
        };
        max_kkt = max_kkt.max(sol.kkt_residual);
        if root_bound.is_none() {
            root_bound = Some(sol.objective);
        }
        if sol.objective > inc_obj + tie_tol(inc_obj) {
            record(Some(sol.objective), NodeOutcome::Pruned);
            continue;
        }

        // most fractional, ties to the lowest index
        let mut branch: Option<(usize, f64)> = None;
        for &i in &prob.integer_idx {
            let x = sol.w[i];
            let frac = (x - x.round()).abs();
            if frac <= opts.tol_int {
                continue;
            }
            match branch {
                Some((bi, bf)) if frac < bf || (frac == bf && bi < i) => {}
                _ => branch = Some((i, frac)),
            }
        }
        let branch = branch.map(|(i, _)| i);

        match branch {
            None => {
                record(Some(sol.objective), NodeOutcome::Integral);
                let candidate = if prob.integer_idx.is_empty() {
                    sol
                } else {
                    let mut lo = node.lo.clone();
                    let mut hi = node.hi.clone();
                    for &i in &prob.integer_idx {
                        lo[i] = sol.w[i].round();
                        hi[i] = lo[i];
                    }
                    let pinned = solve_boxed(prob, &lo, &hi, Some(&sol.warm))?;
                    max_kkt = max_kkt.max(pinned.kkt_residual);
                    pinned
                };
                let better = match &incumbent {
                    None => true,
                    Some(inc) => {
                        candidate.objective < inc.objective - tie_tol(inc.objective)
                            || (candidate.objective <= inc.objective + tie_tol(inc.objective)
                                && lex_less(&candidate.w, &inc.w, 1e-9))
                    }
                };
                if better {
                    incumbent = Some(candidate);
                }
            }
            Some(i) => {
                record(Some(sol.objective), NodeOutcome::Branched);
                let x = sol.w[i];
                let mut down_hi = node.hi.clone();
                down_hi[i] = x.floor();
                let mut up_lo = node.lo.clone();
                up_lo[i] = x.ceil();
                for (lo, hi) in [(node.lo.clone(), down_hi), (up_lo, node.hi.clone())] {
                    heap.push(Node {
                        bound: sol.objective,
                        seq,
                        depth: node.depth + 1,
                        lo,
                        hi,
                        warm: Some(sol.warm.clone()),
                    });
                    seq += 1;
                }
            }
        }
    }

    let Some(best) = incumbent else {
        if let Some(e) = root_error {
            return Err(e);
        }
        return Err(if hit_limit { MiqpError::NoIncumbent } else { MiqpError::Infeasible { violation: f64::INFINITY } });
    };
    let (soft, slack_total) = soft_status(prob, &best.w);
    Ok(MiqpSolution {
        objective: best.objective,
        status: if hit_limit { MiqpStatus::NodeLimit } else { soft },
        nodes_explored: nodes,
        kkt_residual: best.kkt_residual,
        max_qp_kkt: max_kkt,
        root_bound: root_bound.unwrap_or(best.objective),
        slack_total,
        trace,
        w: best.w,
    })
}
