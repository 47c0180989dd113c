//! Linear programs, mixed-binary programs, and the solvers for both.

mod bnb;
mod lp_format;
mod simplex;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use bnb::solve_milp;
pub use lp_format::to_lp_text;
pub use simplex::solve_lp;

/// Feasibility tolerance on rows and bounds.
pub const EPS_FEAS: f64 = 1e-7;
/// Integrality tolerance on binaries.
pub const EPS_INT: f64 = 1e-6;
/// Objective tolerance used for pruning and comparisons.
pub const EPS_OBJ: f64 = 1e-7;

/// A linear row `lower ≤ Σ coeff·x ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// `min c·x + c0` subject to row and variable bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub rows: Vec<Row>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.var_lower.push(lower);
        self.var_upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a row, merging repeated indices. Returns the row index.
    pub fn add_row(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, lower: f64, upper: f64) -> usize {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (j, a) in coeffs {
            debug_assert!(j < self.n_vars(), "row references unknown variable {j}");
            *merged.entry(j).or_insert(0.0) += a;
        }
        self.rows.push(Row {
            coeffs: merged.into_iter().filter(|&(_, a)| a != 0.0).collect(),
            lower,
            upper,
        });
        self.rows.len() - 1
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.var_lower[j] - v).max(v - self.var_upper[j]);
        }
        for row in &self.rows {
            let a = row.activity(x);
            worst = worst.max(row.lower - a).max(a - row.upper);
        }
        worst
    }

    /// Checks structural well-formedness (indices in range, ordered bounds).
    pub fn check(&self) -> Result<(), String> {
        let n = self.n_vars();
        if self.var_lower.len() != n || self.var_upper.len() != n {
            return Err("bound vectors do not match the objective length".into());
        }
        for (k, row) in self.rows.iter().enumerate() {
            if let Some(&(j, _)) = row.coeffs.iter().find(|&&(j, _)| j >= n) {
                return Err(format!("row {k} references variable {j} of {n}"));
            }
            if row.lower.is_nan() || row.upper.is_nan() {
                return Err(format!("row {k} has NaN bounds"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpConfig {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iterations: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            feas_tol: EPS_FEAS,
            opt_tol: 1e-9,
            max_iterations: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers `y` with `c − Aᵀy` the reduced costs.
    pub row_duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    fn with_status(status: LpStatus, n: usize) -> Self {
        Self {
            status,
            x: vec![0.0; n],
            objective: f64::NAN,
            row_duals: Vec::new(),
            iterations: 0,
        }
    }
}

/// An LP whose listed variables must take values in {0, 1}.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MilpModel {
    pub lp: LinearProgram,
    pub binary_vars: BTreeSet<usize>,
    pub var_names: BTreeMap<usize, String>,
}

impl MilpModel {
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        let j = self.lp.add_var(lower, upper, cost);
        self.var_names.insert(j, name.into());
        j
    }

    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> usize {
        let j = self.add_var(name, 0.0, 1.0, cost);
        self.binary_vars.insert(j);
        j
    }

    pub fn name(&self, j: usize) -> &str {
        self.var_names.get(&j).map(String::as_str).unwrap_or("")
    }

    pub fn check(&self) -> Result<(), String> {
        self.lp.check()?;
        for &j in &self.binary_vars {
            if j >= self.lp.n_vars() {
                return Err(format!("binary index {j} out of range"));
            }
            if self.lp.var_lower[j] < 0.0 || self.lp.var_upper[j] > 1.0 {
                return Err(format!("binary {j} has bounds outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Incumbent values; empty when no integral point is known.
    pub x: Vec<f64>,
    pub objective: f64,
    pub node_count: usize,
    /// Objective of the root relaxation.
    pub root_bound: f64,
}

impl MilpSolution {
    /// Binary values of the incumbent, rounded, in ascending variable order.
    pub fn binary_vector(&self, model: &MilpModel) -> Vec<u8> {
        model
            .binary_vars
            .iter()
            .map(|&j| u8::from(self.x.get(j).copied().unwrap_or(0.0) > 0.5))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpConfig {
    pub eps_int: f64,
    pub max_nodes: usize,
    pub time_limit: Option<std::time::Duration>,
    pub lp: LpConfig,
}

impl Default for MilpConfig {
    fn default() -> Self {
        Self {
            eps_int: EPS_INT,
            max_nodes: 100_000,
            time_limit: None,
            lp: LpConfig::default(),
        }
    }
}
