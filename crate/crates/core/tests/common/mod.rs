//! Independent oracles shared by the integration tests. Nothing here calls
//! into the crate's solvers.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use mga_opf::network::{Branch, Bus, Device};
use mga_opf::Network;
use rand::Rng;

pub const THETA_BOUND: f64 = mga_opf::formulations::DEFAULT_THETA_BOUND;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Cheapest DC dispatch on a fixed topology: reference bus at angle zero,
/// `|θ_o − θ_d| ≤ THETA_BOUND` on every branch, open or closed.
pub fn dc_lp_cost(net: &Network, topology: &[u8]) -> Option<f64> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let reference = net.reference_bus()?;
    let theta: Vec<_> = (0..net.n_buses())
        .map(|i| {
            if i == reference {
                lp.add_var(0.0, (0.0, 0.0))
            } else {
                lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))
            }
        })
        .collect();
    let p_g: Vec<_> = net.devices().iter().map(|d| lp.add_var(d.cost, (d.p_min, d.p_max))).collect();
    let mut injections: Vec<Vec<(Variable, f64)>> = vec![Vec::new(); net.n_buses()];
    for (g, d) in net.devices().iter().enumerate() {
        injections[net.bus_position(d.bus).unwrap()].push((p_g[g], 1.0));
    }
    for (e, br) in net.branches().iter().enumerate() {
        let o = net.bus_position(br.origin).unwrap();
        let d = net.bus_position(br.dest).unwrap();
        let diff = sparse_row(&[(theta[o], 1.0), (theta[d], -1.0)]);
        lp.add_constraint(diff.as_slice(), ComparisonOp::Le, THETA_BOUND);
        lp.add_constraint(diff.as_slice(), ComparisonOp::Ge, -THETA_BOUND);
        if topology[e] == 0 {
            continue;
        }
        // Flow o → d is b(θ_o − θ_d).
        let flow = sparse_row(&[(theta[o], br.b), (theta[d], -br.b)]);
        lp.add_constraint(flow.as_slice(), ComparisonOp::Le, br.p_max);
        lp.add_constraint(flow.as_slice(), ComparisonOp::Ge, -br.p_max);
        injections[o].push((theta[o], -br.b));
        injections[o].push((theta[d], br.b));
        injections[d].push((theta[o], br.b));
        injections[d].push((theta[d], -br.b));
    }
    for row in &injections {
        lp.add_constraint(sparse_row(row).as_slice(), ComparisonOp::Eq, 0.0);
    }
    lp.solve().ok().map(|s| s.objective())
}

/// Sorted by variable with repeats summed, as the LP crate requires.
fn sparse_row(terms: &[(Variable, f64)]) -> Vec<(Variable, f64)> {
    let mut merged: BTreeMap<usize, (Variable, f64)> = BTreeMap::new();
    for &(v, c) in terms {
        merged.entry(v.idx()).or_insert((v, 0.0)).1 += c;
    }
    merged.into_values().collect()
}

/// Every bus keeps at least `min(2, degree)` incident branches on.
pub fn anti_islanding_ok(net: &Network, topology: &[u8]) -> bool {
    (0..net.n_buses()).all(|i| {
        let id = net.buses()[i].id;
        let incident: Vec<usize> = (0..net.n_branches())
            .filter(|&e| net.branches()[e].origin == id || net.branches()[e].dest == id)
            .collect();
        let on = incident.iter().filter(|&&e| topology[e] != 0).count();
        on >= incident.len().min(2)
    })
}

pub fn is_connected(net: &Network, topology: &[u8]) -> bool {
    let n = net.n_buses();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        let id = net.buses()[i].id;
        for (e, br) in net.branches().iter().enumerate() {
            if topology[e] == 0 {
                continue;
            }
            let other = if br.origin == id {
                br.dest
            } else if br.dest == id {
                br.origin
            } else {
                continue;
            };
            let j = net.bus_position(other).unwrap();
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// All `2^n` topologies in counting order, branch 0 as the lowest bit.
pub fn all_topologies(n: usize) -> impl Iterator<Item = Vec<u8>> {
    (0..1u32 << n).map(move |mask| (0..n).map(|e| ((mask >> e) & 1) as u8).collect())
}

/// Enumeration optimum over anti-islanding topologies; `None` when every
/// topology is infeasible.
pub fn enumerate_ots(net: &Network) -> Option<(f64, Vec<Vec<u8>>)> {
    let mut best: Option<(f64, Vec<Vec<u8>>)> = None;
    for x in all_topologies(net.n_branches()) {
        if !anti_islanding_ok(net, &x) {
            continue;
        }
        let Some(cost) = dc_lp_cost(net, &x) else { continue };
        match &mut best {
            Some((b, xs)) if (cost - *b).abs() <= 1e-7 => xs.push(x),
            Some((b, _)) if cost > *b => {}
            _ => best = Some((cost, vec![x])),
        }
    }
    best
}

pub fn bus(id: usize) -> Bus {
    Bus {
        id,
        base_kv: 1.0,
        v_min: 0.9,
        v_max: 1.1,
    }
}

pub fn line(id: usize, origin: usize, dest: usize, b: f64, p_max: f64) -> Branch {
    Branch {
        id,
        origin,
        dest,
        b,
        g: 0.0,
        p_max,
        switchable: true,
        x0: true,
    }
}

pub fn generator(id: usize, bus: usize, cost: f64, p_max: f64) -> Device {
    Device {
        id,
        bus,
        cost,
        p_min: 0.0,
        p_max,
        q_min: -1.0,
        q_max: 1.0,
        ramp: None,
        commitable: true,
    }
}

pub fn load(id: usize, bus: usize, p: f64) -> Device {
    Device {
        id,
        bus,
        cost: 0.0,
        p_min: -p,
        p_max: -p,
        q_min: 0.0,
        q_max: 0.0,
        ramp: None,
        commitable: false,
    }
}

/// 2 to 6 buses on a random spanning tree plus extra lines (at most 8 in
/// all, every one switchable), 1 to 3 generators and loads.
pub fn random_network(rng: &mut impl Rng) -> Network {
    let n_buses = rng.random_range(2..=6);
    let buses = (1..=n_buses).map(bus).collect();
    let mut ends: Vec<(usize, usize)> = (2..=n_buses).map(|k| (rng.random_range(1..k), k)).collect();
    for _ in 0..rng.random_range(0..=8 - ends.len()) {
        let o = rng.random_range(1..=n_buses);
        let d = (o + rng.random_range(0..n_buses - 1)) % n_buses + 1;
        ends.push((o, d));
    }
    let branches = ends
        .into_iter()
        .enumerate()
        .map(|(k, (o, d))| line(k + 1, o, d, rng.random_range(1.0..20.0), rng.random_range(0.3..2.5)))
        .collect();
    let loads: Vec<f64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0.1..1.5)).collect();
    // Total capacity covers the load; the network may still not deliver it.
    let n_gens = rng.random_range(1..=3);
    let capacity = loads.iter().sum::<f64>() * 1.5 / n_gens as f64;
    let mut devices: Vec<Device> = (1..=n_gens)
        .map(|id| generator(id, rng.random_range(1..=n_buses), rng.random_range(1.0..50.0), capacity * rng.random_range(0.8..1.2)))
        .collect();
    for (k, p) in loads.into_iter().enumerate() {
        devices.push(load(n_gens + 1 + k, rng.random_range(1..=n_buses), p));
    }
    Network::new(100.0, buses, branches, devices).unwrap()
}
