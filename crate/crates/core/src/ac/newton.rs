//! Newton-Raphson power flow with fixed injections. Every bus except the
//! slack is PQ; the slack holds `v = 1, θ = 0` and its first device absorbs
//! the imbalance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ac_residuals, check_len, max_residual, AcError, AcState, FlowEnd, FlowModel, FlowTerm};
use crate::network::{island_labels, Network};

pub const NEWTON_TOL: f64 = 1e-8;
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowResult {
    pub state: AcState,
    pub converged: bool,
    /// Mismatch evaluations performed, the last one included.
    pub iterations: usize,
    pub max_mismatch: f64,
}

pub fn newton_power_flow(
    net: &Network,
    topology: &[u8],
    p_g: &[f64],
    q_g: &[f64],
    slack: usize,
    model: FlowModel,
) -> Result<PowerFlowResult, AcError> {
    let nb = net.n_buses();
    check_len("topology", topology.len(), net.n_branches())?;
    check_len("p_g", p_g.len(), net.n_devices())?;
    check_len("q_g", q_g.len(), net.n_devices())?;
    if slack >= nb {
        return Err(AcError::BadSlack(slack));
    }
    let labels = island_labels(net, topology)?;
    if let Some(i) = (0..nb).find(|&i| labels[i] != labels[slack]) {
        return Err(AcError::Disconnected(net.buses()[i].id));
    }
    let slack_device = *net
        .devices_at(slack)
        .first()
        .ok_or(AcError::NoSlackDevice(net.buses()[slack].id))?;

    // Unknown k ↔ (θ of pq[k]) and k + n ↔ (v of pq[k]).
    let pq: Vec<usize> = (0..nb).filter(|&i| i != slack).collect();
    let mut pos = vec![usize::MAX; nb];
    for (k, &i) in pq.iter().enumerate() {
        pos[i] = k;
    }
    let n = pq.len();
    let mut v = vec![1.0; nb];
    let mut theta = vec![0.0; nb];
    let (mut p_g, mut q_g) = (p_g.to_vec(), q_g.to_vec());

    let mismatch = |v: &[f64], theta: &[f64]| -> Result<Vec<(f64, f64)>, AcError> {
        let s = AcState::new(net, topology, model, v.to_vec(), theta.to_vec(), p_g.clone(), q_g.clone())?;
        ac_residuals(net, &s, topology, model)
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut worst = f64::INFINITY;
    for it in 1..=NEWTON_MAX_ITER {
        iterations = it;
        let r = mismatch(&v, &theta)?;
        worst = pq.iter().fold(0.0, |m: f64, &i| m.max(r[i].0.abs()).max(r[i].1.abs()));
        if !worst.is_finite() {
            break;
        }
        if worst <= NEWTON_TOL {
            converged = true;
            break;
        }
        if it == NEWTON_MAX_ITER {
            break;
        }
        // Jacobian of the residual; residual = injection − Σ flows.
        let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for (e, br) in net.branches().iter().enumerate() {
            if topology[e] == 0 {
                continue;
            }
            let (o, d) = net.branch_ends(e);
            for end in FlowEnd::ALL {
                let bus = match end {
                    FlowEnd::POrigin | FlowEnd::QOrigin => o,
                    FlowEnd::PDest | FlowEnd::QDest => d,
                };
                if bus == slack {
                    continue;
                }
                let row = match end {
                    FlowEnd::POrigin | FlowEnd::PDest => pos[bus],
                    FlowEnd::QOrigin | FlowEnd::QDest => n + pos[bus],
                };
                let grad = FlowTerm::new(model, br.g, br.b, end).gradient(v[o], v[d], theta[o], theta[d]);
                // (v_o, v_d, θ_o, θ_d)
                for (k, &(b, is_v)) in [(o, true), (d, true), (o, false), (d, false)].iter().enumerate() {
                    if b == slack {
                        continue;
                    }
                    let col = if is_v { n + pos[b] } else { pos[b] };
                    jac[(row, col)] -= grad[k];
                }
            }
        }
        let rhs = DVector::from_iterator(
            2 * n,
            pq.iter().map(|&i| -r[i].0).chain(pq.iter().map(|&i| -r[i].1)),
        );
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        if step.iter().any(|x| !x.is_finite()) {
            break;
        }
        for (k, &i) in pq.iter().enumerate() {
            theta[i] += step[k];
            v[i] += step[n + k];
        }
    }

    // Slack absorbs the remaining imbalance at its own bus.
    let r = mismatch(&v, &theta)?;
    p_g[slack_device] -= r[slack].0;
    q_g[slack_device] -= r[slack].1;
    let state = AcState::new(net, topology, model, v, theta, p_g, q_g)?;
    if converged {
        worst = max_residual(&ac_residuals(net, &state, topology, model)?);
    }
    Ok(PowerFlowResult {
        state,
        converged,
        iterations,
        max_mismatch: worst,
    })
}
