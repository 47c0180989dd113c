//! Modeling to generate alternatives: re-solve the DC problem under a
//! near-optimality constraint `Σ c_g p_g ≤ f* + δ_f` with objectives that push
//! the binary decisions away from solutions already found.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulations::{DcProblem, OpfSolution};
use crate::milp::{solve_milp, MilpConfig, MilpModel, MilpSolution, MilpStatus};
use crate::network::Network;

pub const DEFAULT_MAX_ITER: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Hsj,
    HsjNegative,
    HsjZeroBias,
    RandomVector,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Hsj,
        Criterion::HsjNegative,
        Criterion::HsjZeroBias,
        Criterion::RandomVector,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Criterion::Hsj => "hsj",
            Criterion::HsjNegative => "hsj-neg",
            Criterion::HsjZeroBias => "hsj0",
            Criterion::RandomVector => "random",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MgaError {
    #[error("delta_f must be non-negative and finite, got {0}")]
    NegativeDelta(f64),
    #[error("max_iter must be at least 1")]
    NoIterations,
    #[error("base solution is not optimal ({0:?})")]
    BaseNotOptimal(MilpStatus),
    #[error("binary vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("binary vector entry {0} is not 0 or 1")]
    NotBinary(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgaConfig {
    pub criterion: Criterion,
    pub delta_f: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl MgaConfig {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            delta_f: 0.0,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
        }
    }

    fn check(&self) -> Result<(), MgaError> {
        if !(self.delta_f >= 0.0 && self.delta_f.is_finite()) {
            return Err(MgaError::NegativeDelta(self.delta_f));
        }
        if self.max_iter < 1 {
            return Err(MgaError::NoIterations);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MgaState {
    /// Accumulated objective coefficient per binary.
    pub f_coeffs: Vec<f64>,
    pub history: Vec<Vec<u8>>,
    pub n_on: usize,
    pub n_off: usize,
    /// Notes about degenerate updates (empty on/off sets).
    pub flags: Vec<String>,
}

impl MgaState {
    pub fn new(n_binaries: usize) -> Self {
        Self {
            f_coeffs: vec![0.0; n_binaries],
            ..Self::default()
        }
    }

    pub fn contains(&self, x: &[u8]) -> bool {
        self.history.iter().any(|h| h == x)
    }

    /// Value of the accumulated objective at `x`.
    pub fn evaluate(&self, x: &[u8]) -> f64 {
        self.f_coeffs.iter().zip(x).map(|(c, &v)| c * f64::from(v)).sum()
    }
}

/// One zero-bias update term, `Σ_on x / n_on − Σ_off x / n_off`, kept in
/// index form so it can be evaluated without rounding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroBiasTerm {
    pub on: Vec<usize>,
    pub off: Vec<usize>,
}

impl ZeroBiasTerm {
    pub fn from_latest(latest: &[u8]) -> Self {
        let (on, off): (Vec<usize>, Vec<usize>) = (0..latest.len()).partition(|&k| latest[k] != 0);
        Self { on, off }
    }

    pub fn evaluate(&self, x: &[u8]) -> f64 {
        let part = |set: &[usize]| {
            if set.is_empty() {
                0.0
            } else {
                set.iter().map(|&k| f64::from(x[k])).sum::<f64>() / set.len() as f64
            }
        };
        part(&self.on) - part(&self.off)
    }
}

fn check_binary(x: &[u8], expected: usize) -> Result<(), MgaError> {
    if x.len() != expected {
        return Err(MgaError::Dimension {
            expected,
            got: x.len(),
        });
    }
    match x.iter().find(|&&v| v > 1) {
        Some(&v) => Err(MgaError::NotBinary(v)),
        None => Ok(()),
    }
}

/// Folds the latest solution into the objective per `criterion`.
/// `RandomVector` does not accumulate and leaves coefficients unchanged.
pub fn next_objective(state: &MgaState, latest: &[u8], criterion: Criterion) -> Result<MgaState, MgaError> {
    check_binary(latest, state.f_coeffs.len())?;
    let mut next = state.clone();
    let n_on = latest.iter().filter(|&&v| v == 1).count();
    let n_off = latest.len() - n_on;
    next.n_on = n_on;
    next.n_off = n_off;
    match criterion {
        Criterion::Hsj => {
            for (c, &v) in next.f_coeffs.iter_mut().zip(latest) {
                if v == 1 {
                    *c += 1.0;
                }
            }
        }
        Criterion::HsjNegative => {
            for (c, &v) in next.f_coeffs.iter_mut().zip(latest) {
                if v == 0 {
                    *c -= 1.0;
                }
            }
        }
        Criterion::HsjZeroBias => {
            if n_on == 0 {
                next.flags.push("zero-bias update with no on-variables: on-sum empty".into());
            }
            if n_off == 0 {
                next.flags.push("zero-bias update with no off-variables: off-sum empty".into());
            }
            for (c, &v) in next.f_coeffs.iter_mut().zip(latest) {
                if v == 1 {
                    *c += 1.0 / n_on as f64;
                } else {
                    *c -= 1.0 / n_off as f64;
                }
            }
        }
        Criterion::RandomVector => {}
    }
    Ok(next)
}

/// Stratum of `v ∈ [−1, 1]` among `n` equal strata.
pub fn lhs_stratum(v: f64, n: usize) -> usize {
    let k = ((v + 1.0) / 2.0 * n as f64).floor();
    (k.max(0.0) as usize).min(n - 1)
}

/// Latin hypercube sample of `n_samples` vectors in `[−1, 1]^n_dims`.
pub fn lhs_weights(n_dims: usize, n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0; n_dims]; n_samples];
    let width = 2.0 / n_samples as f64;
    let mut strata: Vec<usize> = (0..n_samples).collect();
    for d in 0..n_dims {
        strata.shuffle(&mut rng);
        for (s, &k) in strata.iter().enumerate() {
            let lo = -1.0 + width * k as f64;
            let v = loop {
                let v = lo + width * rng.random::<f64>();
                if lhs_stratum(v, n_samples) == k {
                    break v;
                }
            };
            out[s][d] = v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub x: Vec<u8>,
    pub dispatch: OpfSolution,
    pub dc_objective: f64,
    pub iteration: usize,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationOutcome {
    Base,
    New,
    Duplicate,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub outcome: IterationOutcome,
    /// On branches (OTS) or committed devices (UC) of the solved vector.
    pub connected: Option<usize>,
    pub dc_objective: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MgaStatus {
    Converged,
    IterationLimit,
    Stalled,
    InternalError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgaRun {
    pub criterion: Criterion,
    pub status: MgaStatus,
    /// Distinct solutions in discovery order, base first.
    pub alternatives: Vec<Alternative>,
    pub iterations: Vec<IterationRecord>,
    pub flags: Vec<String>,
}

fn connected_count(dispatch: &OpfSolution) -> usize {
    dispatch.x.iter().map(|&v| usize::from(v)).sum()
}

/// The base model plus the near-optimality row, with objective zeroed.
fn quality_model(problem: &DcProblem, f_star: f64, delta_f: f64) -> MilpModel {
    let mut model = problem.model.clone();
    model.lp.objective.iter_mut().for_each(|c| *c = 0.0);
    model.lp.objective_constant = 0.0;
    model
        .lp
        .add_row(problem.layout.cost.iter().copied(), f64::NEG_INFINITY, f_star + delta_f);
    model
}

fn with_weights(model: &MilpModel, weights: &[f64]) -> MilpModel {
    let mut m = model.clone();
    for (&j, &w) in model.binary_vars.iter().zip(weights) {
        m.lp.objective[j] = w;
    }
    m
}

/// Runs one MGA criterion from an optimal base solution.
pub fn run_mga(
    net: &Network,
    problem: &DcProblem,
    base: &MilpSolution,
    cfg: &MgaConfig,
    milp_cfg: &MilpConfig,
) -> Result<MgaRun, MgaError> {
    cfg.check()?;
    if base.status != MilpStatus::Optimal {
        return Err(MgaError::BaseNotOptimal(base.status));
    }
    let n_bin = problem.model.binary_vars.len();
    let base_x = base.binary_vector(&problem.model);
    let base_dispatch = problem.extract(net, base);
    let f_star = base_dispatch.objective;
    let mut run = MgaRun {
        criterion: cfg.criterion,
        status: MgaStatus::IterationLimit,
        alternatives: Vec::new(),
        iterations: Vec::new(),
        flags: Vec::new(),
    };
    run.iterations.push(IterationRecord {
        iteration: 0,
        outcome: IterationOutcome::Base,
        connected: Some(connected_count(&base_dispatch)),
        dc_objective: Some(f_star),
    });
    run.alternatives.push(Alternative {
        x: base_x.clone(),
        dc_objective: f_star,
        dispatch: base_dispatch,
        iteration: 0,
        criterion: cfg.criterion,
    });
    let mut state = MgaState::new(n_bin);
    state.history.push(base_x.clone());
    let model = quality_model(problem, f_star, cfg.delta_f);

    // Records a solved subproblem; returns false when the run must stop.
    let record = |run: &mut MgaRun, state: &mut MgaState, iteration: usize, sol: MilpSolution| -> bool {
        match sol.status {
            MilpStatus::Optimal => {
                let x = sol.binary_vector(&model);
                let dispatch = problem.extract(net, &sol);
                let duplicate = state.contains(&x);
                run.iterations.push(IterationRecord {
                    iteration,
                    outcome: if duplicate { IterationOutcome::Duplicate } else { IterationOutcome::New },
                    connected: Some(connected_count(&dispatch)),
                    dc_objective: Some(dispatch.objective),
                });
                if !duplicate {
                    state.history.push(x.clone());
                    run.alternatives.push(Alternative {
                        x,
                        dc_objective: dispatch.objective,
                        dispatch,
                        iteration,
                        criterion: cfg.criterion,
                    });
                }
                true
            }
            MilpStatus::IterLimit => {
                run.iterations.push(IterationRecord {
                    iteration,
                    outcome: IterationOutcome::Skipped,
                    connected: None,
                    dc_objective: None,
                });
                true
            }
            other => {
                run.flags.push(format!("iteration {iteration}: subproblem returned {other:?}"));
                run.status = MgaStatus::InternalError;
                false
            }
        }
    };

    if cfg.criterion == Criterion::RandomVector {
        let weights = lhs_weights(n_bin.max(1), cfg.max_iter, cfg.seed);
        let solutions: Vec<MilpSolution> = weights
            .par_iter()
            .map(|w| solve_milp(&with_weights(&model, w), milp_cfg))
            .collect();
        for (k, sol) in solutions.into_iter().enumerate() {
            if !record(&mut run, &mut state, k + 1, sol) {
                return Ok(run);
            }
        }
        return Ok(run);
    }

    let mut latest = base_x;
    for iteration in 1..=cfg.max_iter {
        state = next_objective(&state, &latest, cfg.criterion)?;
        let sol = solve_milp(&with_weights(&model, &state.f_coeffs), milp_cfg);
        let status = sol.status;
        let x = (status == MilpStatus::Optimal).then(|| sol.binary_vector(&model));
        if !record(&mut run, &mut state, iteration, sol) {
            break;
        }
        match (status, x) {
            (MilpStatus::IterLimit, _) => {
                // The same subproblem would be re-solved identically.
                run.status = MgaStatus::Stalled;
                break;
            }
            (_, Some(x)) => {
                if run.iterations.last().map(|r| r.outcome) == Some(IterationOutcome::Duplicate) {
                    run.status = MgaStatus::Converged;
                    break;
                }
                latest = x;
            }
            _ => {}
        }
    }
    run.flags.extend(state.flags);
    Ok(run)
}
