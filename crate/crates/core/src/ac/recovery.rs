//! AC recovery: with the integer decisions fixed, find the cheapest AC
//! operating point, allowing thermal limits to be exceeded at a high price.
//!
//! Thermal limits become `F − δ_e − s⁺ = 0, s⁺ ≤ p_max` and
//! `F + δ_e − s⁻ = 0, s⁻ ≥ −p_max` for each metered end flow `F`, with
//! `δ_e ≥ 0` priced at `M_pen` in the objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ipm::{solve_nlp, IpmOptions, IpmStatus, Nlp};
use super::{
    ac_residuals, check_len, classify_solution, max_residual, AcError, AcState, Classification, FlowEnd, FlowModel,
    FlowTerm, DEFAULT_TOL_OVERLOAD,
};
use crate::formulations::OpfSolution;
use crate::network::{island_labels, Network};

/// Residual tolerance a converged recovery must meet when re-checked.
const RECHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    /// `v = 1`, `θ = 0`, DC real dispatch, zero reactive output.
    Flat,
    /// As `Flat` but with the DC angles.
    DcWarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub flow_model: FlowModel,
    /// Price per pu of thermal violation; `None` uses `1e4 · max |c_g|`.
    pub penalty: Option<f64>,
    pub tol_overload: f64,
    pub starts: Vec<StartPoint>,
    #[serde(skip)]
    pub ipm: IpmOptions,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            flow_model: FlowModel::default(),
            penalty: None,
            tol_overload: DEFAULT_TOL_OVERLOAD,
            starts: vec![StartPoint::Flat, StartPoint::DcWarm],
            ipm: IpmOptions::default(),
        }
    }
}

impl RecoveryConfig {
    pub fn penalty_for(&self, net: &Network) -> f64 {
        self.penalty.unwrap_or_else(|| {
            let c = net.max_abs_cost();
            1e4 * if c > 0.0 { c } else { 1.0 }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub state: AcState,
    /// Thermal violation per branch (pu), zero on open branches.
    pub slacks: Vec<f64>,
    pub converged: bool,
    pub classification: Classification,
    /// `Σ c_g p_g + M_pen Σ δ_e` at the reported point.
    #[serde(with = "crate::inf_as_null")]
    pub objective: f64,
    #[serde(with = "crate::inf_as_null")]
    pub cost: f64,
    /// `p_g` change against the DC dispatch; for a failed recovery, taken at
    /// the least-violating point found.
    pub redispatch: Vec<f64>,
    pub start: Option<StartPoint>,
    pub iterations: usize,
    #[serde(with = "crate::inf_as_null")]
    pub max_residual: f64,
}

impl RecoveryResult {
    pub fn empty(n_buses: usize, n_branches: usize, n_devices: usize) -> Self {
        Self {
            state: AcState {
                v: vec![1.0; n_buses],
                theta: vec![0.0; n_buses],
                p_g: vec![0.0; n_devices],
                q_g: vec![0.0; n_devices],
                p_e: vec![0.0; n_branches],
                q_e: vec![0.0; n_branches],
                p_e_dest: vec![0.0; n_branches],
                q_e_dest: vec![0.0; n_branches],
            },
            slacks: vec![0.0; n_branches],
            converged: false,
            classification: Classification::Infeasible,
            objective: f64::INFINITY,
            cost: f64::INFINITY,
            redispatch: vec![0.0; n_devices],
            start: None,
            iterations: 0,
            max_residual: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
struct Con {
    lin: Vec<(usize, f64)>,
    flows: Vec<(usize, FlowEnd, f64)>,
    constant: f64,
}

struct RecoveryNlp<'a> {
    net: &'a Network,
    model: FlowModel,
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<(usize, f64)>,
    cons: Vec<Con>,
    delta_vars: Vec<usize>,
}

impl RecoveryNlp<'_> {
    fn v(&self, i: usize) -> usize {
        i
    }

    fn theta(&self, i: usize) -> usize {
        self.net.n_buses() + i
    }

    fn p(&self, g: usize) -> usize {
        2 * self.net.n_buses() + g
    }

    fn q(&self, g: usize) -> usize {
        2 * self.net.n_buses() + self.net.n_devices() + g
    }

    /// Variable indices `(v_o, v_d, θ_o, θ_d)` of a branch.
    fn flow_vars(&self, e: usize) -> [usize; 4] {
        let (o, d) = self.net.branch_ends(e);
        [self.v(o), self.v(d), self.theta(o), self.theta(d)]
    }

    fn term(&self, e: usize, end: FlowEnd) -> FlowTerm {
        let br = &self.net.branches()[e];
        FlowTerm::new(self.model, br.g, br.b, end)
    }

    fn flow_value(&self, x: &[f64], e: usize, end: FlowEnd) -> f64 {
        let [a, b, c, d] = self.flow_vars(e);
        self.term(e, end).value(x[a], x[b], x[c], x[d])
    }
}

impl Nlp for RecoveryNlp<'_> {
    fn n(&self) -> usize {
        self.n
    }

    fn m(&self) -> usize {
        self.cons.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().map(|&(j, c)| c * x[j]).sum()
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for &(j, c) in &self.cost {
            g[j] += c;
        }
        g
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        self.cons
            .iter()
            .map(|con| {
                con.constant
                    + con.lin.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
                    + con
                        .flows
                        .iter()
                        .map(|&(e, end, a)| a * self.flow_value(x, e, end))
                        .sum::<f64>()
            })
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.cons.len(), self.n);
        for (r, con) in self.cons.iter().enumerate() {
            for &(j, a) in &con.lin {
                jac[(r, j)] += a;
            }
            for &(e, end, a) in &con.flows {
                let vars = self.flow_vars(e);
                let grad = self.term(e, end).gradient(x[vars[0]], x[vars[1]], x[vars[2]], x[vars[3]]);
                for k in 0..4 {
                    jac[(r, vars[k])] += a * grad[k];
                }
            }
        }
        jac
    }

    fn hessian(&self, x: &[f64], _obj_factor: f64, y: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for (con, &yk) in self.cons.iter().zip(y) {
            if yk == 0.0 {
                continue;
            }
            for &(e, end, a) in &con.flows {
                let vars = self.flow_vars(e);
                let hess = self.term(e, end).hessian(x[vars[0]], x[vars[1]], x[vars[2]], x[vars[3]]);
                for r in 0..4 {
                    for c in 0..4 {
                        h[(vars[r], vars[c])] += yk * a * hess[r][c];
                    }
                }
            }
        }
        h
    }

    fn violation(&self, x: &[f64], c: &[f64]) -> f64 {
        c.iter().map(|v| v.abs()).sum::<f64>() + self.delta_vars.iter().map(|&j| x[j].max(0.0)).sum::<f64>()
    }
}

/// Ends whose real power is held to the thermal limit.
fn metered_ends(model: FlowModel) -> &'static [FlowEnd] {
    match model {
        FlowModel::PiModel => &[FlowEnd::POrigin, FlowEnd::PDest],
        FlowModel::AsPrinted => &[FlowEnd::POrigin],
    }
}

/// Per-branch thermal violation of a state.
fn thermal_slacks(net: &Network, topology: &[u8], state: &AcState, model: FlowModel) -> Vec<f64> {
    net.branches()
        .iter()
        .enumerate()
        .map(|(e, br)| {
            if topology[e] == 0 {
                return 0.0;
            }
            let worst = match model {
                FlowModel::PiModel => state.p_e[e].abs().max(state.p_e_dest[e].abs()),
                FlowModel::AsPrinted => state.p_e[e].abs(),
            };
            (worst - br.p_max).max(0.0)
        })
        .collect()
}

fn build<'a>(
    net: &'a Network,
    topology: &[u8],
    device_on: &[bool],
    model: FlowModel,
    penalty: f64,
) -> Result<(RecoveryNlp<'a>, bool), AcError> {
    let nb = net.n_buses();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let labels = island_labels(net, topology)?;

    let mut incident = vec![0usize; nb];
    for (e, &on) in topology.iter().enumerate() {
        if on != 0 {
            let (o, d) = net.branch_ends(e);
            incident[o] += 1;
            incident[d] += 1;
        }
    }
    for (i, b) in net.buses().iter().enumerate() {
        if incident[i] == 0 {
            let v = 1.0f64.clamp(b.v_min, b.v_max);
            lower.push(v);
            upper.push(v);
        } else {
            lower.push(b.v_min);
            upper.push(b.v_max);
        }
    }
    // Reference angle: lowest bus id in each island.
    let mut island_ref: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for (i, b) in net.buses().iter().enumerate() {
        let entry = island_ref.entry(labels[i]).or_insert(i);
        if b.id < net.buses()[*entry].id {
            *entry = i;
        }
    }
    for i in 0..nb {
        if island_ref[&labels[i]] == i {
            lower.push(0.0);
            upper.push(0.0);
        } else {
            lower.push(f64::NEG_INFINITY);
            upper.push(f64::INFINITY);
        }
    }
    for (g, d) in net.devices().iter().enumerate() {
        if device_on[g] {
            lower.push(d.p_min);
            upper.push(d.p_max);
        } else {
            lower.push(0.0);
            upper.push(0.0);
        }
    }
    for (g, d) in net.devices().iter().enumerate() {
        if device_on[g] {
            lower.push(d.q_min);
            upper.push(d.q_max);
        } else {
            lower.push(0.0);
            upper.push(0.0);
        }
    }
    let mut nlp = RecoveryNlp {
        net,
        model,
        n: 0,
        lower: Vec::new(),
        upper: Vec::new(),
        cost: Vec::new(),
        cons: Vec::new(),
        delta_vars: Vec::new(),
    };
    nlp.cost = net
        .devices()
        .iter()
        .enumerate()
        .filter(|(_, d)| d.cost != 0.0)
        .map(|(g, d)| (nlp.p(g), d.cost))
        .collect();

    // Nodal balance rows.
    let mut structurally_infeasible = false;
    for i in 0..nb {
        for real in [true, false] {
            let mut con = Con {
                lin: Vec::new(),
                flows: Vec::new(),
                constant: 0.0,
            };
            for &g in net.devices_at(i) {
                let j = if real { nlp.p(g) } else { nlp.q(g) };
                if lower[j] == upper[j] {
                    con.constant += lower[j];
                } else {
                    con.lin.push((j, 1.0));
                }
            }
            for &e in net.branches_from(i) {
                if topology[e] != 0 {
                    con.flows.push((e, if real { FlowEnd::POrigin } else { FlowEnd::QOrigin }, -1.0));
                }
            }
            for &e in net.branches_to(i) {
                if topology[e] != 0 {
                    con.flows.push((e, if real { FlowEnd::PDest } else { FlowEnd::QDest }, -1.0));
                }
            }
            if con.lin.is_empty() && con.flows.is_empty() {
                structurally_infeasible |= con.constant.abs() > RECHECK_TOL;
                continue;
            }
            nlp.cons.push(con);
        }
    }

    // Soft thermal limits.
    for (e, br) in net.branches().iter().enumerate() {
        if topology[e] == 0 {
            continue;
        }
        let delta = lower.len();
        lower.push(0.0);
        upper.push(f64::INFINITY);
        nlp.cost.push((delta, penalty));
        nlp.delta_vars.push(delta);
        for &end in metered_ends(model) {
            for sign in [1.0, -1.0] {
                let s = lower.len();
                if sign > 0.0 {
                    lower.push(f64::NEG_INFINITY);
                    upper.push(br.p_max);
                } else {
                    lower.push(-br.p_max);
                    upper.push(f64::INFINITY);
                }
                nlp.cons.push(Con {
                    lin: vec![(delta, -sign), (s, -1.0)],
                    flows: vec![(e, end, 1.0)],
                    constant: 0.0,
                });
            }
        }
    }
    nlp.n = lower.len();
    nlp.lower = lower;
    nlp.upper = upper;
    Ok((nlp, structurally_infeasible))
}

fn start_point(nlp: &RecoveryNlp<'_>, dc: &OpfSolution, start: StartPoint) -> Vec<f64> {
    let net = nlp.net;
    let mut x = vec![0.0; nlp.n];
    for i in 0..net.n_buses() {
        x[nlp.v(i)] = 1.0;
        x[nlp.theta(i)] = match start {
            StartPoint::Flat => 0.0,
            StartPoint::DcWarm => dc.theta().get(i).copied().unwrap_or(0.0),
        };
    }
    for g in 0..net.n_devices() {
        x[nlp.p(g)] = dc.p_g().get(g).copied().unwrap_or(0.0);
    }
    // Thermal auxiliaries consistent with the starting flows.
    for con in &nlp.cons {
        if let [(delta, _), (s, _)] = con.lin[..] {
            let (e, end, _) = con.flows[0];
            let f = nlp.flow_value(&x, e, end);
            let p_max = net.branches()[e].p_max;
            x[delta] = x[delta].max(f.abs() - p_max).max(0.0);
            x[s] = f.clamp(-p_max, p_max);
        }
    }
    x
}

/// Solves the AC recovery problem for a fixed topology and commitment.
pub fn solve_ac_recovery(
    net: &Network,
    topology: &[u8],
    dc: &OpfSolution,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult, AcError> {
    check_len("topology", topology.len(), net.n_branches())?;
    let model = cfg.flow_model;
    let penalty = cfg.penalty_for(net);
    let device_on = dc.device_on(net);
    let (nlp, structurally_infeasible) = build(net, topology, &device_on, model, penalty)?;
    let dc_p = dc.p_g();

    let finish = |x: &[f64], converged: bool, start: Option<StartPoint>, iterations: usize| -> Result<RecoveryResult, AcError> {
        let nb = net.n_buses();
        let ng = net.n_devices();
        let state = AcState::new(
            net,
            topology,
            model,
            x[..nb].to_vec(),
            x[nb..2 * nb].to_vec(),
            x[2 * nb..2 * nb + ng].to_vec(),
            x[2 * nb + ng..2 * nb + 2 * ng].to_vec(),
        )?;
        let residual = max_residual(&ac_residuals(net, &state, topology, model)?);
        let slacks = thermal_slacks(net, topology, &state, model);
        let cost: f64 = net.devices().iter().zip(&state.p_g).map(|(d, p)| d.cost * p).sum();
        let redispatch = state.p_g.iter().zip(dc_p).map(|(a, b)| a - b).collect();
        let mut r = RecoveryResult {
            converged: converged && residual <= RECHECK_TOL,
            objective: cost + penalty * slacks.iter().sum::<f64>(),
            cost,
            slacks,
            state,
            classification: Classification::Infeasible,
            redispatch,
            start,
            iterations,
            max_residual: residual,
        };
        r.classification = classify_solution(&r, f64::NEG_INFINITY, cfg.tol_overload);
        Ok(r)
    };

    if structurally_infeasible {
        let x = start_point(&nlp, dc, StartPoint::Flat);
        return finish(&x, false, None, 0);
    }

    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut total_iterations = 0;
    for &start in &cfg.starts {
        let x0 = start_point(&nlp, dc, start);
        let res = solve_nlp(&nlp, &x0, &cfg.ipm);
        total_iterations += res.iterations;
        if res.status == IpmStatus::Converged {
            let r = finish(&res.x, true, Some(start), total_iterations)?;
            if r.converged {
                return Ok(r);
            }
        }
        if best.as_ref().is_none_or(|b| res.best_violation < b.0) {
            best = Some((res.best_violation, res.best_x, total_iterations));
        }
    }
    let x = match best {
        Some((_, x, _)) => x,
        None => start_point(&nlp, dc, StartPoint::Flat),
    };
    finish(&x, false, None, total_iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ac::newton_power_flow;
    use crate::formulations::build_dc_opf;
    use crate::milp::{solve_milp, MilpConfig};
    use crate::network::test_nets::*;
    use crate::network::Network;

    fn dc_solution(net: &Network) -> OpfSolution {
        let p = build_dc_opf(net).unwrap();
        p.extract(net, &solve_milp(&p.model, &MilpConfig::default()))
    }

    fn two_bus_net(b: f64, p_max: f64, load_p: f64, v_max: f64) -> Network {
        let mut b1 = bus(1);
        b1.v_max = v_max;
        let mut g = gen(1, 1, 10.0, 0.0, 5.0);
        g.q_min = -5.0;
        g.q_max = 5.0;
        Network::new(100.0, vec![b1, bus(2)], vec![line(1, 1, 2, b, p_max)], vec![g, load(2, 2, load_p)]).unwrap()
    }

    #[test]
    fn consistent_case_is_safe_and_matches_power_flow() {
        let net = two_bus_net(10.0, 2.0, 0.5, 1.1);
        let dc = dc_solution(&net);
        let r = solve_ac_recovery(&net, &[1], &dc, &RecoveryConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.classification, Classification::Safe);
        assert!(r.slacks.iter().all(|&s| s <= 1e-6));
        assert!(r.redispatch[0].abs() < 1e-3);
        assert!(r.max_residual <= 1e-6);
        // Power flow from the recovered injections reproduces the voltages at the load bus.
        let mut q = r.state.q_g.clone();
        q[0] = 0.0;
        let pf = newton_power_flow(&net, &[1], &r.state.p_g, &q, 0, FlowModel::PiModel).unwrap();
        assert!(pf.converged);
        let shift = r.state.theta[0] - pf.state.theta[0];
        // The power flow holds the slack at v = 1; compare angle differences only
        // when the recovered slack voltage is also 1.
        if (r.state.v[0] - 1.0).abs() < 1e-6 {
            assert!((r.state.v[1] - pf.state.v[1]).abs() < 1e-5);
            assert!((r.state.theta[1] - shift - pf.state.theta[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn thermal_limit_below_load_is_overloaded() {
        let net = two_bus_net(10.0, 0.3, 0.5, 1.1);
        let dc = OpfSolution {
            problem_kind: crate::formulations::ProblemKind::DcOpf,
            periods: vec![crate::formulations::Dispatch {
                p_g: vec![0.5, -0.5],
                p_e: vec![0.5],
                theta: vec![0.0, -0.05],
            }],
            x: vec![1],
            objective: 5.0,
        };
        let r = solve_ac_recovery(&net, &[1], &dc, &RecoveryConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.classification, Classification::Overloaded);
        assert!((r.slacks[0] - 0.2).abs() < 1e-5);
    }

    /// Receiving-end voltage cannot stay above 0.9 while delivering 0.59 pu
    /// over b = 1 with v₁ ≤ 1.1 and no reactive support at the load.
    fn voltage_limited() -> Network {
        two_bus_net(1.0, 5.0, 0.59, 1.1)
    }

    #[test]
    fn voltage_limited_transfer_is_infeasible() {
        let net = voltage_limited();
        let dc = OpfSolution {
            problem_kind: crate::formulations::ProblemKind::DcOpf,
            periods: vec![crate::formulations::Dispatch {
                p_g: vec![0.59, -0.59],
                p_e: vec![0.59],
                theta: vec![0.0, -0.59],
            }],
            x: vec![1],
            objective: 5.9,
        };
        let r = solve_ac_recovery(&net, &[1], &dc, &RecoveryConfig::default()).unwrap();
        assert!(!r.converged);
        assert_eq!(r.classification, Classification::Infeasible);
    }

    #[test]
    fn voltage_limited_transfer_has_no_feasible_grid_point() {
        // Load bus balance: P = v₁v₂ sin Δ = 0.59 and Q: v₂² − v₁v₂ cos Δ = 0,
        // i.e. v₂ = v₁ cos Δ. Over the admissible box the gap v₁ cos Δ − v₂
        // (with Δ solving the P equation) stays strictly negative.
        let load = 0.59;
        let steps = 400;
        let mut worst = f64::NEG_INFINITY;
        for a in 0..=steps {
            for c in 0..=steps {
                let v1 = 0.9 + 0.2 * a as f64 / steps as f64;
                let v2 = 0.9 + 0.2 * c as f64 / steps as f64;
                let s = load / (v1 * v2);
                if s > 1.0 {
                    continue;
                }
                let delta = s.asin();
                worst = worst.max(v1 * delta.cos() - v2);
            }
        }
        // Grid spacing 5e-4; the gap is Lipschitz with constant below 3.
        assert!(worst < -3.0 * 5e-4, "gap {worst}");
    }

    #[test]
    fn islanded_load_without_supply_is_infeasible() {
        let net = triangle();
        let dc = dc_solution(&net);
        let r = solve_ac_recovery(&net, &[1, 0, 0], &dc, &RecoveryConfig::default()).unwrap();
        assert_eq!(r.classification, Classification::Infeasible);
    }
}
