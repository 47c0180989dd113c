//! Greedy single-switch search: from a seed topology, repeatedly evaluate every
//! connected single-branch flip in AC and commit the cheapest Safe one while
//! it improves by at least a tolerance.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ac::{solve_ac_recovery, AcError, Classification, RecoveryConfig, RecoveryResult};
use crate::formulations::{build_dc_opf_on, Dispatch, OpfSolution, ProblemKind};
use crate::milp::{solve_milp, MilpConfig, MilpStatus};
use crate::network::{island_labels, Network, NetworkError};

pub const DEFAULT_GREEDY_TOL: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("seed topology is not AC-feasible ({0:?}); provide a feasible seed")]
    InfeasibleSeed(Classification),
    #[error(transparent)]
    Ac(#[from] AcError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    /// Branch id flipped in this step; `None` for the seed.
    pub switched: Option<usize>,
    pub ac_cost: f64,
    pub wall_time_s: f64,
    /// Recovery solves performed to choose this step (zero for the seed).
    pub evaluations: usize,
    /// Flips skipped because they would split the network.
    pub islanding_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrajectory {
    pub steps: Vec<GreedyStep>,
    /// Candidate recovery solves over all iterations (the seed solve excluded).
    pub ac_evals: usize,
    /// Candidate counts per iteration, including the final non-improving one.
    pub evaluations_per_iteration: Vec<usize>,
    pub final_topology: Vec<u8>,
}

impl GreedyTrajectory {
    /// Every recovery solve the search performed, the seed included.
    pub fn total_recoveries(&self) -> usize {
        self.ac_evals + 1
    }
}

/// DC-OPF dispatch on `topology` used to warm-start a recovery; falls back to
/// `fallback` (with zero angles) when the DC problem is infeasible.
pub fn dc_dispatch_for(net: &Network, topology: &[u8], fallback: &[f64]) -> OpfSolution {
    if let Ok(p) = build_dc_opf_on(net, topology) {
        let sol = solve_milp(&p.model, &MilpConfig::default());
        if sol.status == MilpStatus::Optimal {
            return p.extract(net, &sol);
        }
    }
    OpfSolution {
        problem_kind: ProblemKind::DcOpf,
        periods: vec![Dispatch {
            p_g: fallback.to_vec(),
            p_e: vec![0.0; net.n_branches()],
            theta: vec![0.0; net.n_buses()],
        }],
        x: topology.to_vec(),
        objective: net.devices().iter().zip(fallback).map(|(d, p)| d.cost * p).sum(),
    }
}

fn recover(net: &Network, topology: &[u8], fallback: &[f64], cfg: &RecoveryConfig) -> Result<RecoveryResult, AcError> {
    let dc = dc_dispatch_for(net, topology, fallback);
    solve_ac_recovery(net, topology, &dc, cfg)
}

fn is_connected(net: &Network, topology: &[u8]) -> Result<bool, NetworkError> {
    let labels = island_labels(net, topology)?;
    Ok(labels.iter().all(|&l| l == labels[0]))
}

pub fn greedy_switch_search(
    net: &Network,
    x0: &[u8],
    tol: f64,
    cfg: &RecoveryConfig,
) -> Result<GreedyTrajectory, BaselineError> {
    let start = Instant::now();
    let seed_dispatch = vec![0.0; net.n_devices()];
    let seed = recover(net, x0, &seed_dispatch, cfg)?;
    if !seed.classification.is_safe() {
        return Err(BaselineError::InfeasibleSeed(seed.classification));
    }
    let mut current = x0.to_vec();
    let mut current_cost = seed.objective;
    let mut current_p = seed.state.p_g.clone();
    let mut out = GreedyTrajectory {
        steps: vec![GreedyStep {
            switched: None,
            ac_cost: current_cost,
            wall_time_s: start.elapsed().as_secs_f64(),
            evaluations: 0,
            islanding_skipped: 0,
        }],
        ac_evals: 0,
        evaluations_per_iteration: Vec::new(),
        final_topology: Vec::new(),
    };

    // Candidate order: ascending branch id.
    let mut order: Vec<usize> = (0..net.n_branches()).filter(|&e| net.branches()[e].switchable).collect();
    order.sort_by_key(|&e| net.branches()[e].id);

    loop {
        let mut candidates = Vec::new();
        let mut skipped = 0;
        for &e in &order {
            let mut t = current.clone();
            t[e] ^= 1;
            if is_connected(net, &t)? {
                candidates.push((e, t));
            } else {
                skipped += 1;
            }
        }
        let results: Vec<Result<RecoveryResult, AcError>> = candidates
            .par_iter()
            .map(|(_, t)| recover(net, t, &current_p, cfg))
            .collect();
        out.ac_evals += candidates.len();
        out.evaluations_per_iteration.push(candidates.len());

        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for ((e, _), r) in candidates.iter().zip(results) {
            let r = r?;
            if r.classification.is_safe() && best.as_ref().is_none_or(|b| r.objective < b.1) {
                best = Some((*e, r.objective, r.state.p_g));
            }
        }
        match best {
            Some((e, cost, p)) if current_cost - cost >= tol => {
                current[e] ^= 1;
                current_cost = cost;
                current_p = p;
                out.steps.push(GreedyStep {
                    switched: Some(net.branches()[e].id),
                    ac_cost: cost,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    evaluations: candidates.len(),
                    islanding_skipped: skipped,
                });
            }
            _ => break,
        }
    }
    out.final_topology = current;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::test_nets::*;

    /// Cheap supply at bus 1, expensive at bus 2, load at bus 3; the direct
    /// line 1-3 is congested, so opening it lets the cheap unit serve via 2.
    fn congested_triangle() -> Network {
        Network::new(
            100.0,
            vec![bus(1), bus(2), bus(3)],
            vec![line(1, 1, 2, 10.0, 2.0), line(2, 2, 3, 10.0, 2.0), line(3, 1, 3, 10.0, 0.5)],
            vec![gen(1, 1, 10.0, 0.0, 2.0), gen(2, 2, 50.0, 0.0, 2.0), load(3, 3, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn first_step_is_the_best_single_flip() {
        let net = congested_triangle();
        let cfg = RecoveryConfig::default();
        let traj = greedy_switch_search(&net, &[1, 1, 1], DEFAULT_GREEDY_TOL, &cfg).unwrap();

        // Exhaustive oracle over the single flips of the all-on topology.
        let mut best: Option<(usize, f64)> = None;
        for e in 0..3 {
            let mut t = vec![1u8; 3];
            t[e] = 0;
            let r = recover(&net, &t, &[0.0; 3], &cfg).unwrap();
            if r.classification.is_safe() && best.is_none_or(|b| r.objective < b.1) {
                best = Some((e, r.objective));
            }
        }
        let (e, cost) = best.unwrap();
        assert_eq!(e, 2);
        assert_eq!(traj.steps[1].switched, Some(3));
        assert!((traj.steps[1].ac_cost - cost).abs() < 1e-6);

        for w in traj.steps.windows(2) {
            assert!(w[1].ac_cost <= w[0].ac_cost);
        }
        assert_eq!(traj.ac_evals, traj.evaluations_per_iteration.iter().sum::<usize>());
        // After opening 1-3 both remaining flips would island a bus.
        assert_eq!(traj.evaluations_per_iteration, vec![3, 1]);
        assert_eq!(traj.final_topology, vec![1, 1, 0]);
    }

    #[test]
    fn optimum_seed_takes_no_step() {
        let net = triangle();
        let traj = greedy_switch_search(&net, &[1, 1, 1], DEFAULT_GREEDY_TOL, &RecoveryConfig::default()).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.evaluations_per_iteration, vec![3]);
    }

    #[test]
    fn infeasible_seed_is_rejected() {
        let net = triangle();
        // Bus 3 (the load) islanded.
        assert!(matches!(
            greedy_switch_search(&net, &[1, 0, 0], DEFAULT_GREEDY_TOL, &RecoveryConfig::default()),
            Err(BaselineError::InfeasibleSeed(Classification::Infeasible))
        ));
    }
}
