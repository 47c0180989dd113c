//! DC optimization models built from a [`Network`]: DC-OPF, DC-OTS (big-M
//! switching with anti-islanding and operator side constraints) and DC-UC
//! (commitment, optional multi-period ramps).
//!
//! Nodal balance at bus `i` uses the physical orientation of branch flow:
//! `Σ_{G_i} p_g − Σ_{E_io} p_e + Σ_{E_id} p_e = 0`, with `p_e` positive from
//! origin to destination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{MilpModel, MilpSolution};
use crate::network::Network;

#[allow(clippy::approx_constant)]
pub const DEFAULT_THETA_BOUND: f64 = 0.5236;
/// Relative headroom added to the automatic big-M.
pub const BIG_M_HEADROOM: f64 = 1.01;

#[derive(Debug, Error, PartialEq)]
pub enum FormulationError {
    #[error("network has no devices")]
    NoDevices,
    #[error("network has no switchable branches")]
    NoSwitchableBranches,
    #[error("network has no commitable devices")]
    NoCommitableDevices,
    #[error("automatic big-M needs a finite positive angle bound, got {0}")]
    UnboundedAngles(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    DcOpf,
    DcOts,
    DcUc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BigMPolicy {
    Auto,
    Fixed(f64),
}

/// How the angle bound `θ^max` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleBoundMode {
    /// `|θ_o − θ_d| ≤ θ^max` on every branch, whatever its switch state.
    BranchDifference,
    /// `|θ_i| ≤ θ^max` on every bus.
    PerBus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchBudget {
    /// Reference state per branch position; `None` uses the network's `x0`.
    pub reference: Option<Vec<u8>>,
    pub max_switches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationConfig {
    pub big_m_policy: BigMPolicy,
    pub theta_bound: f64,
    pub angle_bound_mode: AngleBoundMode,
    pub switch_budget: Option<SwitchBudget>,
    /// Branch-id pairs of which at most one may be on.
    pub pairwise_exclusions: Vec<(usize, usize)>,
    pub horizon: usize,
    /// Per-period multiplier on fixed loads (UC only); missing periods use 1.
    pub load_scale: Vec<f64>,
    pub anti_islanding: bool,
}

impl Default for FormulationConfig {
    fn default() -> Self {
        Self {
            big_m_policy: BigMPolicy::Auto,
            theta_bound: DEFAULT_THETA_BOUND,
            angle_bound_mode: AngleBoundMode::BranchDifference,
            switch_budget: None,
            pairwise_exclusions: Vec::new(),
            horizon: 1,
            load_scale: Vec::new(),
            anti_islanding: true,
        }
    }
}

impl FormulationConfig {
    fn check(&self) -> Result<(), FormulationError> {
        if !(self.theta_bound > 0.0) {
            return Err(FormulationError::Config(format!("theta_bound must be positive, got {}", self.theta_bound)));
        }
        if self.horizon < 1 {
            return Err(FormulationError::Config("horizon must be at least 1".into()));
        }
        if let BigMPolicy::Fixed(m) = self.big_m_policy {
            if !(m > 0.0) {
                return Err(FormulationError::Config(format!("big-M must be positive, got {m}")));
            }
        }
        Ok(())
    }

    fn scale(&self, t: usize) -> f64 {
        self.load_scale.get(t).copied().unwrap_or(1.0)
    }
}

/// Variable indices of one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodVars {
    pub p_g: Vec<usize>,
    pub p_e: Vec<usize>,
    pub theta: Vec<usize>,
    /// Commitment binary per device (UC only).
    pub commit: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub periods: Vec<PeriodVars>,
    /// Switching binary per branch (OTS only; `None` for fixed branches).
    pub switch: Vec<Option<usize>>,
    /// Big-M used per switchable branch.
    pub big_m: Vec<Option<f64>>,
    /// Row indices of the two angle-coupling big-M rows per switchable branch.
    pub big_m_rows: Vec<Option<[usize; 2]>>,
    /// Objective coefficients of the economic cost Σ c_g p_g.
    pub cost: Vec<(usize, f64)>,
}

/// A built DC model and the map from network entities to its variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcProblem {
    pub kind: ProblemKind,
    pub model: MilpModel,
    pub layout: Layout,
    pub branch_x0: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p_g: Vec<f64>,
    pub p_e: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub problem_kind: ProblemKind,
    /// Dispatch per period; single-period problems have exactly one.
    pub periods: Vec<Dispatch>,
    /// Branch on/off states (every branch, OTS and OPF) or commitment states
    /// per period and device, period-major (UC; non-commitable devices are 1).
    pub x: Vec<u8>,
    pub objective: f64,
}

impl OpfSolution {
    pub fn p_g(&self) -> &[f64] {
        &self.periods[0].p_g
    }

    pub fn p_e(&self) -> &[f64] {
        &self.periods[0].p_e
    }

    pub fn theta(&self) -> &[f64] {
        &self.periods[0].theta
    }

    /// Branch states used by the dispatch.
    pub fn topology(&self, net: &Network) -> Vec<u8> {
        match self.problem_kind {
            ProblemKind::DcOts | ProblemKind::DcOpf => self.x.clone(),
            ProblemKind::DcUc => net.initial_topology(),
        }
    }

    /// Commitment of each device in period 0 (`true` when not UC).
    pub fn device_on(&self, net: &Network) -> Vec<bool> {
        match self.problem_kind {
            ProblemKind::DcUc => self.x[..net.n_devices()].iter().map(|&v| v != 0).collect(),
            _ => vec![true; net.n_devices()],
        }
    }

    /// Worst nodal balance residual and worst thermal / off-branch violation
    /// over all periods.
    pub fn invariant_violations(&self, net: &Network) -> (f64, f64) {
        let topo = self.topology(net);
        let mut balance: f64 = 0.0;
        let mut flow: f64 = 0.0;
        for d in &self.periods {
            for i in 0..net.n_buses() {
                let mut r: f64 = net.devices_at(i).iter().map(|&g| d.p_g[g]).sum();
                r -= net.branches_from(i).iter().map(|&e| d.p_e[e]).sum::<f64>();
                r += net.branches_to(i).iter().map(|&e| d.p_e[e]).sum::<f64>();
                balance = balance.max(r.abs());
            }
            for (e, br) in net.branches().iter().enumerate() {
                let v = if topo[e] != 0 {
                    d.p_e[e].abs() - br.p_max
                } else {
                    d.p_e[e].abs()
                };
                flow = flow.max(v);
            }
        }
        (balance, flow)
    }
}

impl DcProblem {
    /// Economic objective Σ c_g p_g at `x`.
    pub fn cost(&self, x: &[f64]) -> f64 {
        self.layout.cost.iter().map(|&(j, c)| c * x[j]).sum()
    }

    pub fn extract(&self, net: &Network, sol: &MilpSolution) -> OpfSolution {
        self.extract_values(net, &sol.x)
    }

    pub fn extract_values(&self, net: &Network, x: &[f64]) -> OpfSolution {
        let periods = self
            .layout
            .periods
            .iter()
            .map(|pv| Dispatch {
                p_g: pv.p_g.iter().map(|&j| x[j]).collect(),
                p_e: pv.p_e.iter().map(|&j| x[j]).collect(),
                theta: pv.theta.iter().map(|&j| x[j]).collect(),
            })
            .collect();
        let bit = |j: usize| u8::from(x[j] > 0.5);
        let states = match self.kind {
            ProblemKind::DcOpf | ProblemKind::DcOts => self
                .layout
                .switch
                .iter()
                .zip(&self.branch_x0)
                .map(|(s, &x0)| s.map_or(x0, bit))
                .collect(),
            ProblemKind::DcUc => self
                .layout
                .periods
                .iter()
                .flat_map(|pv| pv.commit.iter().map(|c| c.map_or(1, bit)))
                .collect(),
        };
        let _ = net;
        OpfSolution {
            problem_kind: self.kind,
            periods,
            x: states,
            objective: self.cost(x),
        }
    }
}

struct Builder<'a> {
    net: &'a Network,
    model: MilpModel,
    periods: Vec<PeriodVars>,
    cost: Vec<(usize, f64)>,
}

impl<'a> Builder<'a> {
    fn new(net: &'a Network) -> Result<Self, FormulationError> {
        if net.n_devices() == 0 {
            return Err(FormulationError::NoDevices);
        }
        Ok(Self {
            net,
            model: MilpModel::default(),
            periods: Vec::new(),
            cost: Vec::new(),
        })
    }

    /// Adds one period of p_g, p_e, θ variables. Device bounds come from
    /// `device_bounds`; fixed loads are scaled by `load_scale`.
    fn add_period(&mut self, t: usize, load_scale: f64, theta_limit: Option<f64>) -> PeriodVars {
        let net = self.net;
        let reference = net.reference_bus();
        let suffix = |k: usize| if t == 0 { format!("[{k}]") } else { format!("[{k},{t}]") };
        let p_g = net
            .devices()
            .iter()
            .map(|d| {
                let (lo, hi) = if d.is_fixed() && d.p_max < 0.0 {
                    (d.p_min * load_scale, d.p_max * load_scale)
                } else {
                    (d.p_min, d.p_max)
                };
                let j = self.model.add_var(format!("p_g{}", suffix(d.id)), lo, hi, d.cost);
                self.cost.push((j, d.cost));
                j
            })
            .collect();
        let p_e = net
            .branches()
            .iter()
            .map(|b| self.model.add_var(format!("p_e{}", suffix(b.id)), -b.p_max, b.p_max, 0.0))
            .collect();
        let theta = net
            .buses()
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let (lo, hi) = if Some(k) == reference {
                    (0.0, 0.0)
                } else if let Some(th) = theta_limit {
                    (-th, th)
                } else {
                    (f64::NEG_INFINITY, f64::INFINITY)
                };
                self.model.add_var(format!("theta{}", suffix(b.id)), lo, hi, 0.0)
            })
            .collect();
        PeriodVars {
            p_g,
            p_e,
            theta,
            commit: vec![None; net.n_devices()],
        }
    }

    fn add_balance(&mut self, pv: &PeriodVars) {
        let net = self.net;
        for i in 0..net.n_buses() {
            let coeffs = net
                .devices_at(i)
                .iter()
                .map(|&g| (pv.p_g[g], 1.0))
                .chain(net.branches_from(i).iter().map(|&e| (pv.p_e[e], -1.0)))
                .chain(net.branches_to(i).iter().map(|&e| (pv.p_e[e], 1.0)));
            self.model.lp.add_row(coeffs, 0.0, 0.0);
        }
    }

    /// `p_e = b (θ_o − θ_d)` for on branches, `p_e = 0` for off ones.
    fn add_fixed_flows(&mut self, pv: &PeriodVars, states: &[u8]) {
        let net = self.net;
        for (e, br) in net.branches().iter().enumerate() {
            if states[e] != 0 {
                let (o, d) = net.branch_ends(e);
                self.model
                    .lp
                    .add_row([(pv.p_e[e], 1.0), (pv.theta[o], -br.b), (pv.theta[d], br.b)], 0.0, 0.0);
            } else {
                self.model.lp.var_lower[pv.p_e[e]] = 0.0;
                self.model.lp.var_upper[pv.p_e[e]] = 0.0;
            }
        }
    }

    fn layout(self, switch: Vec<Option<usize>>, big_m: Vec<Option<f64>>, big_m_rows: Vec<Option<[usize; 2]>>) -> (MilpModel, Layout) {
        (
            self.model,
            Layout {
                periods: self.periods,
                switch,
                big_m,
                big_m_rows,
                cost: self.cost,
            },
        )
    }
}

/// DC-OPF over the network's initial topology.
pub fn build_dc_opf(net: &Network) -> Result<DcProblem, FormulationError> {
    build_dc_opf_on(net, &net.initial_topology())
}

/// DC-OPF over a given branch on/off vector.
pub fn build_dc_opf_on(net: &Network, topology: &[u8]) -> Result<DcProblem, FormulationError> {
    if topology.len() != net.n_branches() {
        return Err(FormulationError::Config(format!(
            "topology has {} entries for {} branches",
            topology.len(),
            net.n_branches()
        )));
    }
    let mut b = Builder::new(net)?;
    let pv = b.add_period(0, 1.0, None);
    b.add_balance(&pv);
    let x0 = topology.to_vec();
    b.add_fixed_flows(&pv, &x0);
    b.periods.push(pv);
    let n = net.n_branches();
    let (model, layout) = b.layout(vec![None; n], vec![None; n], vec![None; n]);
    Ok(DcProblem {
        kind: ProblemKind::DcOpf,
        model,
        layout,
        branch_x0: x0,
    })
}

/// Automatic big-M of a branch under angle bound `theta_bound`.
pub fn auto_big_m(p_max: f64, b: f64, theta_bound: f64) -> f64 {
    BIG_M_HEADROOM * p_max.max(b.abs() * 2.0 * theta_bound)
}

/// DC-OTS: binary switch per switchable branch.
pub fn build_dc_ots(net: &Network, cfg: &FormulationConfig) -> Result<DcProblem, FormulationError> {
    cfg.check()?;
    if !net.branches().iter().any(|b| b.switchable) {
        return Err(FormulationError::NoSwitchableBranches);
    }
    if cfg.big_m_policy == BigMPolicy::Auto && !cfg.theta_bound.is_finite() {
        return Err(FormulationError::UnboundedAngles(cfg.theta_bound));
    }
    let per_bus = cfg.angle_bound_mode == AngleBoundMode::PerBus;
    let mut b = Builder::new(net)?;
    let pv = b.add_period(0, 1.0, per_bus.then_some(cfg.theta_bound));
    b.add_balance(&pv);

    let n = net.n_branches();
    let mut switch = vec![None; n];
    let mut big_m = vec![None; n];
    let mut big_m_rows = vec![None; n];
    let x0 = net.initial_topology();

    for (e, br) in net.branches().iter().enumerate() {
        let (o, d) = net.branch_ends(e);
        let (p, to, td) = (pv.p_e[e], pv.theta[o], pv.theta[d]);
        if !per_bus {
            b.model
                .lp
                .add_row([(to, 1.0), (td, -1.0)], -cfg.theta_bound, cfg.theta_bound);
        }
        if !br.switchable {
            if x0[e] != 0 {
                b.model.lp.add_row([(p, 1.0), (to, -br.b), (td, br.b)], 0.0, 0.0);
            } else {
                b.model.lp.var_lower[p] = 0.0;
                b.model.lp.var_upper[p] = 0.0;
            }
            continue;
        }
        let m = match cfg.big_m_policy {
            BigMPolicy::Auto => auto_big_m(br.p_max, br.b, cfg.theta_bound),
            BigMPolicy::Fixed(m) => m,
        };
        let x = b.model.add_binary(format!("x_e[{}]", br.id), 0.0);
        // p − bΔθ + M x ≤ M  and  p − bΔθ − M x ≥ −M.
        let r1 = b
            .model
            .lp
            .add_row([(p, 1.0), (to, -br.b), (td, br.b), (x, m)], f64::NEG_INFINITY, m);
        let r2 = b
            .model
            .lp
            .add_row([(p, 1.0), (to, -br.b), (td, br.b), (x, -m)], -m, f64::INFINITY);
        // −M x ≤ p ≤ M x.
        b.model.lp.add_row([(p, 1.0), (x, -m)], f64::NEG_INFINITY, 0.0);
        b.model.lp.add_row([(p, 1.0), (x, m)], 0.0, f64::INFINITY);
        switch[e] = Some(x);
        big_m[e] = Some(m);
        big_m_rows[e] = Some([r1, r2]);
    }

    // A branch can be on when it is switchable or fixed on.
    let available = |e: usize| net.branches()[e].switchable || x0[e] != 0;
    if cfg.anti_islanding {
        for i in 0..net.n_buses() {
            let incident: Vec<usize> = net
                .branches_from(i)
                .iter()
                .chain(net.branches_to(i))
                .copied()
                .filter(|&e| available(e))
                .collect();
            let fixed_on = incident.iter().filter(|&&e| switch[e].is_none()).count() as f64;
            let need = incident.len().min(2) as f64 - fixed_on;
            if need > 0.0 {
                let coeffs = incident.iter().filter_map(|&e| switch[e].map(|x| (x, 1.0)));
                b.model.lp.add_row(coeffs, need, f64::INFINITY);
            }
        }
    }

    if let Some(budget) = &cfg.switch_budget {
        let reference = budget.reference.clone().unwrap_or_else(|| x0.clone());
        if reference.len() != n {
            return Err(FormulationError::Config(format!(
                "switch budget reference has {} entries for {n} branches",
                reference.len()
            )));
        }
        // Number of changed states, exact for binaries: x where ref = 0, 1 − x where ref = 1.
        let mut constant = 0.0;
        let mut coeffs = Vec::new();
        for e in 0..n {
            match switch[e] {
                Some(x) if reference[e] != 0 => {
                    constant += 1.0;
                    coeffs.push((x, -1.0));
                }
                Some(x) => coeffs.push((x, 1.0)),
                None if reference[e] != x0[e] => constant += 1.0,
                None => {}
            }
        }
        b.model
            .lp
            .add_row(coeffs, f64::NEG_INFINITY, budget.max_switches as f64 - constant);
    }

    for &(id1, id2) in &cfg.pairwise_exclusions {
        let pos = |id: usize| {
            net.branches()
                .iter()
                .position(|br| br.id == id)
                .ok_or_else(|| FormulationError::Config(format!("unknown branch id {id} in pairwise exclusion")))
        };
        let (e1, e2) = (pos(id1)?, pos(id2)?);
        let mut constant = 0.0;
        let mut coeffs = Vec::new();
        for e in [e1, e2] {
            match switch[e] {
                Some(x) => coeffs.push((x, 1.0)),
                None => constant += f64::from(x0[e]),
            }
        }
        b.model.lp.add_row(coeffs, f64::NEG_INFINITY, 1.0 - constant);
    }

    b.periods.push(pv);
    let (model, layout) = b.layout(switch, big_m, big_m_rows);
    Ok(DcProblem {
        kind: ProblemKind::DcOts,
        model,
        layout,
        branch_x0: x0,
    })
}

/// DC-UC: commitment binaries on commitable devices, optional ramps.
pub fn build_dc_uc(net: &Network, cfg: &FormulationConfig) -> Result<DcProblem, FormulationError> {
    cfg.check()?;
    if !net.devices().iter().any(|d| d.commitable) {
        return Err(FormulationError::NoCommitableDevices);
    }
    let mut b = Builder::new(net)?;
    let x0 = net.initial_topology();
    let horizon = cfg.horizon;
    for t in 0..horizon {
        let mut pv = b.add_period(t, cfg.scale(t), None);
        b.add_balance(&pv);
        b.add_fixed_flows(&pv, &x0);
        for (g, dev) in net.devices().iter().enumerate() {
            if !dev.commitable {
                continue;
            }
            let name = if horizon == 1 {
                format!("x_g[{}]", dev.id)
            } else {
                format!("x_g[{},{t}]", dev.id)
            };
            let x = b.model.add_binary(name, 0.0);
            let p = pv.p_g[g];
            b.model.lp.var_lower[p] = dev.p_min.min(0.0);
            b.model.lp.var_upper[p] = dev.p_max.max(0.0);
            // p_min x ≤ p ≤ p_max x.
            b.model.lp.add_row([(p, 1.0), (x, -dev.p_max)], f64::NEG_INFINITY, 0.0);
            b.model.lp.add_row([(p, 1.0), (x, -dev.p_min)], 0.0, f64::INFINITY);
            pv.commit[g] = Some(x);
        }
        if t > 0 {
            let prev = b.periods[t - 1].p_g.clone();
            for (g, dev) in net.devices().iter().enumerate() {
                if let Some(r) = dev.ramp {
                    b.model.lp.add_row([(pv.p_g[g], 1.0), (prev[g], -1.0)], -r, r);
                }
            }
        }
        b.periods.push(pv);
    }
    let n = net.n_branches();
    let (model, layout) = b.layout(vec![None; n], vec![None; n], vec![None; n]);
    Ok(DcProblem {
        kind: ProblemKind::DcUc,
        model,
        layout,
        branch_x0: x0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve_lp, solve_milp, LpConfig, LpStatus, MilpConfig, MilpStatus};
    use crate::network::test_nets::*;
    use crate::network::Network;

    fn solve(p: &DcProblem) -> MilpSolution {
        solve_milp(&p.model, &MilpConfig::default())
    }

    #[test]
    fn two_bus_opf() {
        let net = two_bus();
        let p = build_dc_opf(&net).unwrap();
        let eq_rows = p.model.lp.rows.iter().filter(|r| r.lower == r.upper).count();
        assert_eq!(eq_rows, 3);
        assert!(p.model.binary_vars.is_empty());
        let sol = solve(&p);
        assert_eq!(sol.status, MilpStatus::Optimal);
        let opf = p.extract(&net, &sol);
        assert!((opf.p_g()[0] - 0.5).abs() < 1e-9);
        assert!((opf.objective - 5.0).abs() < 1e-9);
        let (bal, flow) = opf.invariant_violations(&net);
        assert!(bal <= 1e-9 && flow <= 1e-9);
    }

    #[test]
    fn zero_demand_dispatches_nothing() {
        let net = Network::new(
            100.0,
            vec![bus(1), bus(2)],
            vec![line(1, 1, 2, 10.0, 1.0)],
            vec![gen(1, 1, 10.0, 0.0, 1.0), gen(2, 2, 5.0, 0.0, 1.0), load(3, 2, 0.0)],
        )
        .unwrap();
        let p = build_dc_opf(&net).unwrap();
        let opf = p.extract(&net, &solve(&p));
        assert!(opf.p_g().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(opf.objective, 0.0);
    }

    #[test]
    fn no_devices_is_an_error() {
        let net = Network::new(100.0, vec![bus(1)], vec![], vec![]).unwrap();
        assert_eq!(build_dc_opf(&net).unwrap_err(), FormulationError::NoDevices);
    }

    #[test]
    fn big_m_rows_enforce_logic() {
        let net = two_bus();
        let cfg = FormulationConfig {
            anti_islanding: false,
            ..FormulationConfig::default()
        };
        let p = build_dc_ots(&net, &cfg).unwrap();
        let x = p.layout.switch[0].unwrap();
        let pe = p.layout.periods[0].p_e[0];
        let th = &p.layout.periods[0].theta;
        let m = p.layout.big_m[0].unwrap();
        assert!(m >= 1.0);
        assert!(m >= 10.0 * 2.0 * DEFAULT_THETA_BOUND);

        // Maximize and minimize p_e − bΔθ with x fixed on: both must be 0.
        for sign in [1.0, -1.0] {
            let mut lp = p.model.lp.clone();
            lp.objective.iter_mut().for_each(|c| *c = 0.0);
            lp.objective[pe] = sign;
            lp.objective[th[0]] = -sign * 10.0;
            lp.objective[th[1]] = sign * 10.0;
            lp.var_lower[x] = 1.0;
            let sol = solve_lp(&lp, &LpConfig::default());
            assert_eq!(sol.status, LpStatus::Optimal);
            assert!(sol.objective.abs() < 1e-9);
        }
        // x off forces p_e = 0, so the fixed load cannot be served.
        let mut lp = p.model.lp.clone();
        lp.var_upper[x] = 0.0;
        assert_eq!(solve_lp(&lp, &LpConfig::default()).status, LpStatus::Infeasible);
    }

    #[test]
    fn no_switchable_branch_is_an_error() {
        let mut br = line(1, 1, 2, 10.0, 1.0);
        br.switchable = false;
        let net = Network::new(100.0, vec![bus(1), bus(2)], vec![br], vec![gen(1, 1, 1.0, 0.0, 1.0)]).unwrap();
        assert_eq!(
            build_dc_ots(&net, &FormulationConfig::default()).unwrap_err(),
            FormulationError::NoSwitchableBranches
        );
    }

    #[test]
    fn infinite_angle_bound_rejects_auto_big_m() {
        let cfg = FormulationConfig {
            theta_bound: f64::INFINITY,
            ..FormulationConfig::default()
        };
        assert!(matches!(build_dc_ots(&two_bus(), &cfg), Err(FormulationError::UnboundedAngles(_))));
    }

    #[test]
    fn triangle_anti_islanding_keeps_everything_on() {
        let net = triangle();
        let p = build_dc_ots(&net, &FormulationConfig::default()).unwrap();
        let sol = solve(&p);
        assert_eq!(sol.binary_vector(&p.model), vec![1, 1, 1]);
    }

    #[test]
    fn switch_budget_and_pairwise_exclusion() {
        let net = triangle();
        let base = FormulationConfig {
            anti_islanding: false,
            ..FormulationConfig::default()
        };
        // Opening two lines is at least two switches from all-on.
        let cfg = FormulationConfig {
            switch_budget: Some(SwitchBudget {
                reference: None,
                max_switches: 1,
            }),
            ..base.clone()
        };
        let mut p = build_dc_ots(&net, &cfg).unwrap();
        // Reward opening: objective −Σ(1 − x) ≡ Σ x.
        for &j in &p.model.binary_vars.clone() {
            p.model.lp.objective[j] = 1.0;
        }
        let sol = solve(&p);
        let on: u8 = sol.binary_vector(&p.model).iter().sum();
        assert_eq!(on, 2);

        let cfg = FormulationConfig {
            pairwise_exclusions: vec![(1, 3)],
            ..base
        };
        let mut p = build_dc_ots(&net, &cfg).unwrap();
        for &j in &p.model.binary_vars.clone() {
            p.model.lp.objective[j] = -1.0;
        }
        let v = solve(&p).binary_vector(&p.model);
        assert!(v[0] + v[2] <= 1);
    }

    #[test]
    fn per_bus_angle_mode_bounds_theta() {
        let cfg = FormulationConfig {
            angle_bound_mode: AngleBoundMode::PerBus,
            theta_bound: 0.1,
            anti_islanding: false,
            ..FormulationConfig::default()
        };
        let p = build_dc_ots(&triangle(), &cfg).unwrap();
        let th = &p.layout.periods[0].theta;
        assert_eq!(p.model.lp.var_upper[th[1]], 0.1);
        assert_eq!(p.model.lp.var_upper[th[0]], 0.0);
    }

    fn uc_net(load_p: f64) -> Network {
        let mut g1 = gen(1, 1, 10.0, 0.2, 1.0);
        g1.ramp = Some(0.1);
        Network::new(
            100.0,
            vec![bus(1), bus(2)],
            vec![line(1, 1, 2, 10.0, 2.0)],
            vec![g1, load(2, 2, load_p)],
        )
        .unwrap()
    }

    #[test]
    fn uc_single_commitment() {
        let net = uc_net(0.5);
        let p = build_dc_uc(&net, &FormulationConfig::default()).unwrap();
        let sol = solve(&p);
        assert_eq!(sol.status, MilpStatus::Optimal);
        let opf = p.extract(&net, &sol);
        assert_eq!(sol.binary_vector(&p.model), vec![1]);
        assert!((opf.p_g()[0] - 0.5).abs() < 1e-9);
        assert_eq!(opf.device_on(&net), vec![true, true]);
    }

    #[test]
    fn uc_ramp_makes_two_periods_infeasible() {
        let net = uc_net(0.5);
        let cfg = FormulationConfig {
            horizon: 2,
            load_scale: vec![1.0, 1.8],
            ..FormulationConfig::default()
        };
        let p = build_dc_uc(&net, &cfg).unwrap();
        assert_eq!(p.model.binary_vars.len(), 2);
        assert_eq!(solve(&p).status, MilpStatus::Infeasible);

        // Within the ramp the same horizon is fine.
        let cfg = FormulationConfig {
            horizon: 2,
            load_scale: vec![1.0, 1.1],
            ..FormulationConfig::default()
        };
        let p = build_dc_uc(&net, &cfg).unwrap();
        let opf = p.extract(&net, &solve(&p));
        assert!((opf.periods[1].p_g[0] - 0.55).abs() < 1e-9);
        assert_eq!(opf.x.len(), 4);
    }
}
