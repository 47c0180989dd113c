//! Best-first branch-and-bound over binary variables.
//!
//! Nodes are explored in order of their parent's relaxation bound, ties in
//! creation order. Branching picks the most fractional binary, ties to the
//! lowest index, and creates the down child before the up child. The search
//! is fully deterministic for a given model and configuration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::{solve_lp, LpStatus, MilpConfig, MilpModel, MilpSolution, MilpStatus, EPS_OBJ};

struct Node {
    bound: f64,
    seq: usize,
    fixings: Vec<(usize, f64)>,
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
    // BinaryHeap is a max-heap: the "greatest" node is the lowest bound, then
    // the earliest sequence number.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub fn solve_milp(model: &MilpModel, cfg: &MilpConfig) -> MilpSolution {
    let start = Instant::now();
    let n = model.lp.n_vars();
    let mut out = MilpSolution {
        status: MilpStatus::Infeasible,
        x: Vec::new(),
        objective: f64::INFINITY,
        node_count: 0,
        root_bound: f64::NAN,
    };
    if let Err(_msg) = model.check() {
        out.status = MilpStatus::NumericalFailure;
        return out;
    }

    let mut lp = model.lp.clone();
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixings: Vec::new(),
    });
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        if let Some((_, best)) = &incumbent {
            if node.bound >= best - EPS_OBJ {
                continue;
            }
        }
        if out.node_count >= cfg.max_nodes || cfg.time_limit.is_some_and(|t| start.elapsed() > t) {
            hit_limit = true;
            break;
        }
        out.node_count += 1;

        for &(j, v) in &node.fixings {
            lp.var_lower[j] = v;
            lp.var_upper[j] = v;
        }
        let relax = solve_lp(&lp, &cfg.lp);
        for &(j, _) in &node.fixings {
            lp.var_lower[j] = model.lp.var_lower[j];
            lp.var_upper[j] = model.lp.var_upper[j];
        }

        match relax.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                if node.fixings.is_empty() {
                    out.root_bound = f64::INFINITY;
                }
                continue;
            }
            LpStatus::Unbounded if node.fixings.is_empty() => {
                out.status = MilpStatus::Unbounded;
                return out;
            }
            LpStatus::Unbounded => continue,
            LpStatus::IterLimit | LpStatus::NumericalFailure => {
                if node.fixings.is_empty() {
                    out.status = MilpStatus::NumericalFailure;
                    return out;
                }
                // Treat an unsolvable subproblem as unexplored.
                hit_limit = true;
                continue;
            }
        }
        if node.fixings.is_empty() {
            out.root_bound = relax.objective;
        }
        if let Some((_, best)) = &incumbent {
            if relax.objective >= best - EPS_OBJ {
                continue;
            }
        }

        let mut branch_var = None;
        let mut best_frac = cfg.eps_int;
        for &j in &model.binary_vars {
            let v = relax.x[j];
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > best_frac {
                best_frac = frac;
                branch_var = Some(j);
            }
        }

        match branch_var {
            None => {
                let (x, obj) = polish(model, &relax.x, cfg).unwrap_or((relax.x, relax.objective));
                incumbent = Some((x, obj));
            }
            Some(j) => {
                for v in [0.0, 1.0] {
                    seq += 1;
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, v));
                    heap.push(Node {
                        bound: relax.objective,
                        seq,
                        fixings,
                    });
                }
            }
        }
    }

    debug_assert!(n == model.lp.n_vars());
    match incumbent {
        Some((x, obj)) => {
            out.x = x;
            out.objective = obj;
            out.status = if hit_limit { MilpStatus::IterLimit } else { MilpStatus::Optimal };
        }
        None => {
            out.status = if hit_limit { MilpStatus::IterLimit } else { MilpStatus::Infeasible };
        }
    }
    out
}

/// Re-solves with every binary fixed to its rounded value so the continuous
/// part is exactly consistent with an integral assignment.
fn polish(model: &MilpModel, x: &[f64], cfg: &MilpConfig) -> Option<(Vec<f64>, f64)> {
    if model.binary_vars.is_empty() {
        return None;
    }
    let mut lp = model.lp.clone();
    for &j in &model.binary_vars {
        let v = x[j].round();
        lp.var_lower[j] = v;
        lp.var_upper[j] = v;
    }
    let sol = solve_lp(&lp, &cfg.lp);
    (sol.status == LpStatus::Optimal).then_some((sol.x, sol.objective))
}
