//! AC network physics: branch flows, nodal residuals, Newton power flow, the
//! recovery optimization with soft thermal limits and the classification of
//! recovered operating points.
//!
//! Every branch flow is written in the generic form
//! `F = k_o v_o² + k_d v_d² + v_o v_d (s sin Δθ + c cos Δθ)` with
//! `Δθ = θ_o − θ_d`; the two flow models differ only in the coefficients.

mod ipm;
mod newton;
mod recovery;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, NetworkError};

pub use ipm::{solve_nlp, IpmOptions, IpmResult, IpmStatus, Nlp};
pub use newton::{newton_power_flow, PowerFlowResult, NEWTON_MAX_ITER, NEWTON_TOL};
pub use recovery::{solve_ac_recovery, RecoveryConfig, RecoveryResult, StartPoint};

/// Thermal slack above which a converged point counts as overloaded.
pub const DEFAULT_TOL_OVERLOAD: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum AcError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(usize),
    #[error("slack bus {0} has no device to absorb the imbalance")]
    NoSlackDevice(usize),
    #[error("invalid slack bus position {0}")]
    BadSlack(usize),
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), AcError> {
    if got == expected {
        Ok(())
    } else {
        Err(AcError::Dimension { what, expected, got })
    }
}

/// Branch flow model used for network-level AC physics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowModel {
    /// Single lossless-form expression per branch:
    /// `p = v_o v_d (b sin Δθ + g cos Δθ)`, `q = v_o v_d (g sin Δθ − b cos Δθ)`,
    /// with the destination end carrying the negated flow.
    AsPrinted,
    /// Two-sided π-model with series admittance `g − j b`, no line charging.
    #[default]
    PiModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowEnd {
    /// Real power leaving the origin.
    POrigin,
    /// Real power leaving the destination.
    PDest,
    QOrigin,
    QDest,
}

impl FlowEnd {
    pub const ALL: [FlowEnd; 4] = [FlowEnd::POrigin, FlowEnd::PDest, FlowEnd::QOrigin, FlowEnd::QDest];
}

/// Coefficients of one flow expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTerm {
    pub k_o: f64,
    pub k_d: f64,
    pub s: f64,
    pub c: f64,
}

impl FlowTerm {
    pub fn new(model: FlowModel, g: f64, b: f64, end: FlowEnd) -> Self {
        let t = |k_o, k_d, s, c| FlowTerm { k_o, k_d, s, c };
        match (model, end) {
            (FlowModel::AsPrinted, FlowEnd::POrigin) => t(0.0, 0.0, b, g),
            (FlowModel::AsPrinted, FlowEnd::PDest) => t(0.0, 0.0, -b, -g),
            (FlowModel::AsPrinted, FlowEnd::QOrigin) => t(0.0, 0.0, g, -b),
            (FlowModel::AsPrinted, FlowEnd::QDest) => t(0.0, 0.0, -g, b),
            (FlowModel::PiModel, FlowEnd::POrigin) => t(g, 0.0, b, -g),
            (FlowModel::PiModel, FlowEnd::PDest) => t(0.0, g, -b, -g),
            (FlowModel::PiModel, FlowEnd::QOrigin) => t(b, 0.0, -g, -b),
            (FlowModel::PiModel, FlowEnd::QDest) => t(0.0, b, g, -b),
        }
    }

    pub fn value(&self, vo: f64, vd: f64, to: f64, td: f64) -> f64 {
        let (sn, cs) = (to - td).sin_cos();
        self.k_o * vo * vo + self.k_d * vd * vd + vo * vd * (self.s * sn + self.c * cs)
    }

    /// Gradient with respect to `(v_o, v_d, θ_o, θ_d)`.
    pub fn gradient(&self, vo: f64, vd: f64, to: f64, td: f64) -> [f64; 4] {
        let (sn, cs) = (to - td).sin_cos();
        let h = self.s * sn + self.c * cs;
        let hp = self.s * cs - self.c * sn;
        [
            2.0 * self.k_o * vo + vd * h,
            2.0 * self.k_d * vd + vo * h,
            vo * vd * hp,
            -vo * vd * hp,
        ]
    }

    /// Hessian with respect to `(v_o, v_d, θ_o, θ_d)`.
    pub fn hessian(&self, vo: f64, vd: f64, to: f64, td: f64) -> [[f64; 4]; 4] {
        let (sn, cs) = (to - td).sin_cos();
        let h = self.s * sn + self.c * cs;
        let hp = self.s * cs - self.c * sn;
        let w = vo * vd * h;
        [
            [2.0 * self.k_o, h, vd * hp, -vd * hp],
            [h, 2.0 * self.k_d, vo * hp, -vo * hp],
            [vd * hp, vo * hp, -w, w],
            [-vd * hp, -vo * hp, w, -w],
        ]
    }
}

/// Real and reactive flow of a branch exactly in the single-expression form:
/// `p = v_o v_d (b sin Δθ + g cos Δθ)`, `q = v_o v_d (g sin Δθ − b cos Δθ)`.
pub fn branch_flow_ac(v_o: f64, v_d: f64, theta_o: f64, theta_d: f64, g: f64, b: f64) -> (f64, f64) {
    let (sn, cs) = (theta_o - theta_d).sin_cos();
    (v_o * v_d * (b * sn + g * cs), v_o * v_d * (g * sn - b * cs))
}

/// Flows at both ends of one branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchFlows {
    pub p_origin: f64,
    pub p_dest: f64,
    pub q_origin: f64,
    pub q_dest: f64,
}

pub fn branch_flows(model: FlowModel, g: f64, b: f64, vo: f64, vd: f64, to: f64, td: f64) -> BranchFlows {
    let f = |end| FlowTerm::new(model, g, b, end).value(vo, vd, to, td);
    BranchFlows {
        p_origin: f(FlowEnd::POrigin),
        p_dest: f(FlowEnd::PDest),
        q_origin: f(FlowEnd::QOrigin),
        q_dest: f(FlowEnd::QDest),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    /// Flow leaving the origin end (zero on open branches).
    pub p_e: Vec<f64>,
    pub q_e: Vec<f64>,
    /// Flow leaving the destination end.
    pub p_e_dest: Vec<f64>,
    pub q_e_dest: Vec<f64>,
}

impl AcState {
    /// Builds a state and its branch flows from voltages and injections.
    pub fn new(
        net: &Network,
        topology: &[u8],
        model: FlowModel,
        v: Vec<f64>,
        theta: Vec<f64>,
        p_g: Vec<f64>,
        q_g: Vec<f64>,
    ) -> Result<Self, AcError> {
        check_len("topology", topology.len(), net.n_branches())?;
        check_len("v", v.len(), net.n_buses())?;
        check_len("theta", theta.len(), net.n_buses())?;
        check_len("p_g", p_g.len(), net.n_devices())?;
        check_len("q_g", q_g.len(), net.n_devices())?;
        let m = net.n_branches();
        let mut s = AcState {
            v,
            theta,
            p_g,
            q_g,
            p_e: vec![0.0; m],
            q_e: vec![0.0; m],
            p_e_dest: vec![0.0; m],
            q_e_dest: vec![0.0; m],
        };
        for (e, br) in net.branches().iter().enumerate() {
            if topology[e] == 0 {
                continue;
            }
            let (o, d) = net.branch_ends(e);
            let f = branch_flows(model, br.g, br.b, s.v[o], s.v[d], s.theta[o], s.theta[d]);
            s.p_e[e] = f.p_origin;
            s.p_e_dest[e] = f.p_dest;
            s.q_e[e] = f.q_origin;
            s.q_e_dest[e] = f.q_dest;
        }
        Ok(s)
    }

    fn check_dims(&self, net: &Network) -> Result<(), AcError> {
        check_len("v", self.v.len(), net.n_buses())?;
        check_len("theta", self.theta.len(), net.n_buses())?;
        check_len("p_g", self.p_g.len(), net.n_devices())?;
        check_len("q_g", self.q_g.len(), net.n_devices())
    }
}

/// Per-bus real and reactive mismatch: injections minus flows leaving the
/// bus over on-branches, with flows recomputed from `(v, θ)`.
pub fn ac_residuals(
    net: &Network,
    state: &AcState,
    topology: &[u8],
    model: FlowModel,
) -> Result<Vec<(f64, f64)>, AcError> {
    state.check_dims(net)?;
    check_len("topology", topology.len(), net.n_branches())?;
    let mut r: Vec<(f64, f64)> = (0..net.n_buses())
        .map(|i| {
            net.devices_at(i)
                .iter()
                .fold((0.0, 0.0), |(p, q), &g| (p + state.p_g[g], q + state.q_g[g]))
        })
        .collect();
    for (e, br) in net.branches().iter().enumerate() {
        if topology[e] == 0 {
            continue;
        }
        let (o, d) = net.branch_ends(e);
        let f = branch_flows(model, br.g, br.b, state.v[o], state.v[d], state.theta[o], state.theta[d]);
        r[o].0 -= f.p_origin;
        r[o].1 -= f.q_origin;
        r[d].0 -= f.p_dest;
        r[d].1 -= f.q_dest;
    }
    Ok(r)
}

pub fn max_residual(residuals: &[(f64, f64)]) -> f64 {
    residuals.iter().fold(0.0, |m, &(p, q)| m.max(p.abs()).max(q.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Infeasible,
    Overloaded,
    Safe,
    Optimal,
}

impl Classification {
    pub fn is_safe(self) -> bool {
        matches!(self, Classification::Safe | Classification::Optimal)
    }
}

/// Classifies a recovery. `best_known_cost` is the minimum objective over the
/// Safe recoveries of a run (infinite when there is none).
pub fn classify_solution(result: &RecoveryResult, best_known_cost: f64, tol_overload: f64) -> Classification {
    if !result.converged {
        return Classification::Infeasible;
    }
    let worst = result.slacks.iter().copied().fold(0.0, f64::max);
    if worst > tol_overload {
        Classification::Overloaded
    } else if result.objective <= best_known_cost + 1e-6 {
        Classification::Optimal
    } else {
        Classification::Safe
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RedispatchStats {
    /// Mean `|Δp_g|` over devices, one entry per alternative.
    pub mean_abs: Vec<f64>,
    /// Signed `Δp_g` values pooled per device position.
    pub per_device: Vec<Vec<f64>>,
}

pub fn redispatch_stats(results: &[&RecoveryResult]) -> RedispatchStats {
    let mut stats = RedispatchStats::default();
    for r in results {
        let d = &r.redispatch;
        if stats.per_device.len() < d.len() {
            stats.per_device.resize(d.len(), Vec::new());
        }
        let mean = if d.is_empty() {
            0.0
        } else {
            d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64
        };
        stats.mean_abs.push(mean);
        for (k, &x) in d.iter().enumerate() {
            stats.per_device[k].push(x);
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::test_nets::*;
    use proptest::prelude::*;

    #[test]
    fn flat_lossless_flow() {
        assert_eq!(branch_flow_ac(1.0, 1.0, 0.0, 0.0, 0.0, 10.0), (0.0, -10.0));
    }

    #[test]
    fn mixed_flow_matches_direct_evaluation() {
        // v = (0.95, 1.05), g = 0.5, b = 5, Δθ = 0.1.
        let (p, q) = branch_flow_ac(0.95, 1.05, 0.1, 0.0, 0.5, 5.0);
        // Reference values evaluated independently in double precision.
        assert!((p - 0.994177492958).abs() < 1e-11);
        assert!((q - -4.912791357772).abs() < 1e-11);
    }

    #[test]
    fn printed_model_origin_terms_reproduce_formula() {
        let (vo, vd, to, td, g, b) = (0.97, 1.03, 0.2, -0.05, 0.3, 7.0);
        let (p, q) = branch_flow_ac(vo, vd, to, td, g, b);
        let f = branch_flows(FlowModel::AsPrinted, g, b, vo, vd, to, td);
        assert!((f.p_origin - p).abs() < 1e-14 && (f.q_origin - q).abs() < 1e-14);
        assert!((f.p_dest + p).abs() < 1e-14);
    }

    #[test]
    fn pi_model_losses_are_nonnegative() {
        let f = branch_flows(FlowModel::PiModel, 0.5, 5.0, 1.0, 0.98, 0.1, 0.0);
        assert!(f.p_origin + f.p_dest > 0.0);
        // Lossless π-model is antisymmetric in real power.
        let f = branch_flows(FlowModel::PiModel, 0.0, 5.0, 1.0, 0.98, 0.1, 0.0);
        assert!((f.p_origin + f.p_dest).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn flow_derivatives_match_finite_differences(
            vo in 0.8..1.2f64, vd in 0.8..1.2f64, to in -0.5..0.5f64, td in -0.5..0.5f64,
            g in 0.0..2.0f64, b in 0.1..20.0f64, pi in any::<bool>(), k in 0usize..4,
        ) {
            let model = if pi { FlowModel::PiModel } else { FlowModel::AsPrinted };
            let t = FlowTerm::new(model, g, b, FlowEnd::ALL[k]);
            let x = [vo, vd, to, td];
            let f = |x: [f64; 4]| t.value(x[0], x[1], x[2], x[3]);
            let grad = t.gradient(vo, vd, to, td);
            let hess = t.hessian(vo, vd, to, td);
            let h = 1e-6;
            for i in 0..4 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (f(xp) - f(xm)) / (2.0 * h);
                prop_assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + grad[i].abs()));
                let gp = t.gradient(xp[0], xp[1], xp[2], xp[3]);
                let gm = t.gradient(xm[0], xm[1], xm[2], xm[3]);
                for j in 0..4 {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    prop_assert!((fd - hess[i][j]).abs() < 1e-5 * (1.0 + hess[i][j].abs()));
                }
            }
        }

        #[test]
        fn small_angle_flow_is_close_to_dc(theta in -0.3..0.3f64, b in 1e-3..50.0f64) {
            let (p, _) = branch_flow_ac(1.0, 1.0, theta, 0.0, 0.0, b);
            prop_assert!((p - b * theta).abs() <= b * theta.abs().powi(3) / 6.0 + 1e-12);
        }
    }

    #[test]
    fn residuals_basic_cases() {
        let net = crate::network::Network::new(100.0, vec![bus(1)], vec![], vec![gen(1, 1, 1.0, 0.0, 1.0)]).unwrap();
        let s = AcState::new(&net, &[], FlowModel::PiModel, vec![1.0], vec![0.0], vec![0.3], vec![0.0]).unwrap();
        assert_eq!(ac_residuals(&net, &s, &[], FlowModel::PiModel).unwrap(), vec![(0.3, 0.0)]);

        let net = triangle();
        let s = AcState::new(&net, &[0, 0, 0], FlowModel::PiModel, vec![1.0; 3], vec![0.1, 0.0, -0.2], vec![0.0; 2], vec![0.0; 2])
            .unwrap();
        let r = ac_residuals(&net, &s, &[0, 0, 0], FlowModel::PiModel).unwrap();
        assert!(r.iter().all(|&(p, q)| p == 0.0 && q == 0.0));
        assert!(ac_residuals(&net, &s, &[0, 0], FlowModel::PiModel).is_err());
    }

    fn result(converged: bool, slacks: Vec<f64>, objective: f64) -> RecoveryResult {
        RecoveryResult {
            converged,
            slacks,
            objective,
            ..RecoveryResult::empty(0, 0, 0)
        }
    }

    #[test]
    fn classification_rules() {
        let c = |r: &RecoveryResult, best| classify_solution(r, best, 1e-6);
        assert_eq!(c(&result(false, vec![0.0], 1.0), 1.0), Classification::Infeasible);
        assert_eq!(c(&result(true, vec![0.05], 1.0), 1.0), Classification::Overloaded);
        assert_eq!(c(&result(true, vec![0.0], 1.0), 1.0), Classification::Optimal);
        assert_eq!(c(&result(true, vec![0.0], 2.0), 1.0), Classification::Safe);
    }

    #[test]
    fn redispatch_summary() {
        let mut a = result(true, vec![], 0.0);
        a.redispatch = vec![0.1, -0.3];
        let b = result(true, vec![], 0.0);
        let stats = redispatch_stats(&[&a, &b]);
        assert!((stats.mean_abs[0] - 0.2).abs() < 1e-15);
        assert_eq!(stats.mean_abs[1], 0.0);
        assert_eq!(stats.per_device, vec![vec![0.1], vec![-0.3]]);
        assert_eq!(redispatch_stats(&[]), RedispatchStats::default());
    }
}
