//! Network data model.
//!
//! All electrical quantities are per-unit on `base_mva`. Branch susceptance
//! follows the positive convention `b = x / (r² + x²)`, so the DC flow on a
//! branch is `b · (θ_origin − θ_dest)`. Every power injection is a
//! [`Device`]: generators have positive output, loads negative output, and a
//! non-dispatchable load has `p_min == p_max < 0`.

mod json;
mod matpower;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use json::{parse_network_json, parse_network_json_with_notes, to_json};
pub use matpower::parse_matpower_case;

pub const DEFAULT_V_MIN: f64 = 0.9;
pub const DEFAULT_V_MAX: f64 = 1.1;

/// Reactive range used when a source lacks reactive limits, as a fraction of
/// `|p_max|`.
pub const DEFAULT_Q_FRACTION: f64 = 0.3;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{table} table, line {line}: {message}")]
    Parse {
        table: String,
        line: usize,
        message: String,
    },
    #[error("invalid document at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("expected {expected} branch states, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub base_kv: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub origin: usize,
    pub dest: usize,
    pub b: f64,
    pub g: f64,
    pub p_max: f64,
    pub switchable: bool,
    pub x0: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: usize,
    pub bus: usize,
    pub cost: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Maximum change in output between consecutive periods; `None` is
    /// unlimited.
    pub ramp: Option<f64>,
    pub commitable: bool,
}

impl Device {
    pub fn is_fixed(&self) -> bool {
        self.p_min == self.p_max
    }
}

/// A validated (referentially consistent) network with derived adjacency.
///
/// Construction only enforces what the adjacency maps need: unique ids and
/// endpoints that exist. Value-level invariants are reported by
/// [`validate_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    devices: Vec<Device>,
    bus_index: HashMap<usize, usize>,
    // Per bus position: branch positions whose origin / destination is the bus.
    from_branches: Vec<Vec<usize>>,
    to_branches: Vec<Vec<usize>>,
    bus_devices: Vec<Vec<usize>>,
    branch_ends: Vec<(usize, usize)>,
    device_bus: Vec<usize>,
}

impl Network {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        devices: Vec<Device>,
    ) -> Result<Self, NetworkError> {
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (k, bus) in buses.iter().enumerate() {
            if bus_index.insert(bus.id, k).is_some() {
                return Err(NetworkError::Validation(format!("duplicate bus id {}", bus.id)));
            }
        }
        check_unique(branches.iter().map(|b| b.id), "branch")?;
        check_unique(devices.iter().map(|d| d.id), "device")?;

        let lookup = |id: usize, what: &str, owner: usize| {
            bus_index.get(&id).copied().ok_or_else(|| {
                NetworkError::Validation(format!("{what} {owner} refers to unknown bus {id}"))
            })
        };

        let mut from_branches = vec![Vec::new(); buses.len()];
        let mut to_branches = vec![Vec::new(); buses.len()];
        let mut branch_ends = Vec::with_capacity(branches.len());
        for (k, br) in branches.iter().enumerate() {
            let o = lookup(br.origin, "branch", br.id)?;
            let d = lookup(br.dest, "branch", br.id)?;
            from_branches[o].push(k);
            to_branches[d].push(k);
            branch_ends.push((o, d));
        }
        let mut bus_devices = vec![Vec::new(); buses.len()];
        let mut device_bus = Vec::with_capacity(devices.len());
        for (k, dev) in devices.iter().enumerate() {
            let i = lookup(dev.bus, "device", dev.id)?;
            bus_devices[i].push(k);
            device_bus.push(i);
        }

        Ok(Self {
            base_mva,
            buses,
            branches,
            devices,
            bus_index,
            from_branches,
            to_branches,
            bus_devices,
            branch_ends,
            device_bus,
        })
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    /// Position of a bus id in [`Network::buses`].
    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    /// Branch positions with origin at bus position `i` (E_io).
    pub fn branches_from(&self, i: usize) -> &[usize] {
        &self.from_branches[i]
    }

    /// Branch positions with destination at bus position `i` (E_id).
    pub fn branches_to(&self, i: usize) -> &[usize] {
        &self.to_branches[i]
    }

    /// Device positions at bus position `i` (G_i).
    pub fn devices_at(&self, i: usize) -> &[usize] {
        &self.bus_devices[i]
    }

    /// Bus positions (origin, dest) of branch position `e`.
    pub fn branch_ends(&self, e: usize) -> (usize, usize) {
        self.branch_ends[e]
    }

    pub fn device_bus(&self, g: usize) -> usize {
        self.device_bus[g]
    }

    /// Number of branches incident to bus position `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.from_branches[i].len() + self.to_branches[i].len()
    }

    /// Initial branch states `x0` as a 0/1 vector.
    pub fn initial_topology(&self) -> Vec<u8> {
        self.branches.iter().map(|b| u8::from(b.x0)).collect()
    }

    /// Position of the reference bus (lowest bus id).
    pub fn reference_bus(&self) -> Option<usize> {
        self.buses
            .iter()
            .enumerate()
            .min_by_key(|(_, b)| b.id)
            .map(|(k, _)| k)
    }

    pub fn max_abs_cost(&self) -> f64 {
        self.devices.iter().map(|d| d.cost.abs()).fold(0.0, f64::max)
    }
}

fn check_unique(ids: impl Iterator<Item = usize>, what: &str) -> Result<(), NetworkError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(NetworkError::Validation(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Network,
    Bus,
    Branch,
    Device,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: EntityKind,
    pub id: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?} {}: {}", self.severity, self.kind, self.id, self.message)
    }
}

/// Checks every value-level invariant of the network.
///
/// Returns an empty list iff the network is well formed. Warnings do not
/// count as violations but are still listed.
pub fn validate_network(net: &Network) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |severity, kind, id, message: String| {
        out.push(Diagnostic {
            severity,
            kind,
            id,
            message,
        })
    };

    if !(net.base_mva.is_finite() && net.base_mva > 0.0) {
        push(Severity::Error, EntityKind::Network, 0, format!("base_mva must be positive, got {}", net.base_mva));
    }
    for bus in &net.buses {
        if !(bus.v_min > 0.0) {
            push(Severity::Error, EntityKind::Bus, bus.id, format!("v_min must be positive, got {}", bus.v_min));
        }
        if !(bus.v_min <= bus.v_max) {
            push(
                Severity::Error,
                EntityKind::Bus,
                bus.id,
                format!("v_min {} exceeds v_max {}", bus.v_min, bus.v_max),
            );
        }
    }
    for br in &net.branches {
        if br.origin == br.dest {
            push(Severity::Error, EntityKind::Branch, br.id, "origin equals destination".into());
        }
        if !(br.p_max > 0.0) {
            push(Severity::Error, EntityKind::Branch, br.id, format!("p_max must be positive, got {}", br.p_max));
        }
        if !br.b.is_finite() || !br.g.is_finite() {
            push(Severity::Error, EntityKind::Branch, br.id, "non-finite admittance".into());
        } else if br.b == 0.0 {
            push(Severity::Warning, EntityKind::Branch, br.id, "zero susceptance carries no DC flow".into());
        }
    }
    for dev in &net.devices {
        if !(dev.p_min <= dev.p_max) {
            push(
                Severity::Error,
                EntityKind::Device,
                dev.id,
                format!("p_min {} exceeds p_max {}", dev.p_min, dev.p_max),
            );
        }
        if !(dev.q_min <= dev.q_max) {
            push(
                Severity::Error,
                EntityKind::Device,
                dev.id,
                format!("q_min {} exceeds q_max {}", dev.q_min, dev.q_max),
            );
        }
        if !dev.cost.is_finite() {
            push(Severity::Error, EntityKind::Device, dev.id, "non-finite cost".into());
        }
        if let Some(r) = dev.ramp {
            if !(r >= 0.0) {
                push(Severity::Error, EntityKind::Device, dev.id, format!("ramp must be non-negative, got {r}"));
            }
        }
    }
    out
}

/// True when `diagnostics` contains at least one error.
pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Connected-component label (smallest bus position in the island) for every
/// bus, using only branches with `x[e] == 1`.
pub fn island_labels(net: &Network, x: &[u8]) -> Result<Vec<usize>, NetworkError> {
    if x.len() != net.n_branches() {
        return Err(NetworkError::DimensionMismatch {
            expected: net.n_branches(),
            got: x.len(),
        });
    }
    let mut uf = UnionFind::new(net.n_buses());
    for (e, &on) in x.iter().enumerate() {
        if on != 0 {
            let (o, d) = net.branch_ends(e);
            uf.union(o, d);
        }
    }
    let mut smallest: HashMap<usize, usize> = HashMap::new();
    let roots: Vec<usize> = (0..net.n_buses()).map(|i| uf.find(i)).collect();
    for (i, &r) in roots.iter().enumerate() {
        smallest.entry(r).or_insert(i);
    }
    Ok(roots.iter().map(|r| smallest[r]).collect())
}

/// Returns the number of islands under topology `x` and whether every bus
/// keeps at least `min(2, degree)` connected branches.
pub fn connectivity_check(net: &Network, x: &[u8]) -> Result<(usize, bool), NetworkError> {
    let labels = island_labels(net, x)?;
    let islands = labels.iter().enumerate().filter(|&(i, &l)| i == l).count();
    let degree_ok = (0..net.n_buses()).all(|i| {
        let on = net
            .branches_from(i)
            .iter()
            .chain(net.branches_to(i))
            .filter(|&&e| x[e] != 0)
            .count();
        on >= net.degree(i).min(2)
    });
    Ok((islands, degree_ok))
}

#[cfg(test)]
pub(crate) mod test_nets {
    use super::*;

    pub fn bus(id: usize) -> Bus {
        Bus {
            id,
            base_kv: 1.0,
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
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

    pub fn gen(id: usize, bus: usize, cost: f64, p_min: f64, p_max: f64) -> Device {
        Device {
            id,
            bus,
            cost,
            p_min,
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

    pub fn two_bus() -> Network {
        Network::new(
            100.0,
            vec![bus(1), bus(2)],
            vec![line(1, 1, 2, 10.0, 1.0)],
            vec![gen(1, 1, 10.0, 0.0, 1.0), load(2, 2, 0.5)],
        )
        .unwrap()
    }

    pub fn triangle() -> Network {
        Network::new(
            100.0,
            vec![bus(1), bus(2), bus(3)],
            vec![line(1, 1, 2, 10.0, 1.0), line(2, 2, 3, 10.0, 1.0), line(3, 1, 3, 10.0, 1.0)],
            vec![gen(1, 1, 10.0, 0.0, 2.0), load(2, 3, 0.5)],
        )
        .unwrap()
    }
}
