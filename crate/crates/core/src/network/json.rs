//! Native JSON schema.
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "buses":    [{"id": 1, "base_kv": 138.0, "v_min": 0.9, "v_max": 1.1}],
//!   "branches": [{"id": 1, "origin": 1, "dest": 2, "b": 10.0, "g": 0.0,
//!                 "p_max": 1.0, "switchable": true, "x0": true}],
//!   "devices":  [{"id": 1, "bus": 1, "cost": 10.0, "p_min": 0.0, "p_max": 1.0,
//!                 "q_min": -0.3, "q_max": 0.3, "ramp": null, "commitable": true}]
//! }
//! ```
//!
//! Optional fields and their defaults: `base_kv` 1.0, `v_min` 0.9, `v_max`
//! 1.1, `g` 0.0, `switchable` true, `x0` true, `q_min`/`q_max`
//! ∓0.3·|p_max|, `ramp` unlimited, `commitable` true for devices with
//! positive `p_max`. Unknown keys are rejected.

use serde_json::{Map, Value};

use super::{Branch, Bus, Device, Network, NetworkError, DEFAULT_Q_FRACTION, DEFAULT_V_MAX, DEFAULT_V_MIN};

pub fn parse_network_json(text: &str) -> Result<Network, NetworkError> {
    parse_network_json_with_notes(text).map(|(net, _)| net)
}

/// Parses a native document and lists every default that was applied.
pub fn parse_network_json_with_notes(text: &str) -> Result<(Network, Vec<String>), NetworkError> {
    let root: Value = serde_json::from_str(text).map_err(|e| NetworkError::Schema {
        path: "$".into(),
        message: e.to_string(),
    })?;
    let mut doc = Doc { notes: Vec::new() };
    let obj = as_object(&root, "$")?;
    check_keys(obj, "$", &["base_mva", "buses", "branches", "devices"])?;

    let base_mva = req_f64(obj, "$", "base_mva")?;
    let buses = array(obj, "$", "buses")?
        .iter()
        .enumerate()
        .map(|(k, v)| doc.bus(v, &format!("$.buses[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let branches = array(obj, "$", "branches")?
        .iter()
        .enumerate()
        .map(|(k, v)| doc.branch(v, &format!("$.branches[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let devices = array(obj, "$", "devices")?
        .iter()
        .enumerate()
        .map(|(k, v)| doc.device(v, &format!("$.devices[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;

    let net = Network::new(base_mva, buses, branches, devices)?;
    Ok((net, doc.notes))
}

/// Serializes a network to the native schema with every field explicit.
pub fn to_json(net: &Network) -> String {
    let doc = serde_json::json!({
        "base_mva": net.base_mva(),
        "buses": net.buses(),
        "branches": net.branches(),
        "devices": net.devices(),
    });
    serde_json::to_string_pretty(&doc).expect("network serializes")
}

struct Doc {
    notes: Vec<String>,
}

impl Doc {
    fn bus(&mut self, v: &Value, path: &str) -> Result<Bus, NetworkError> {
        let o = as_object(v, path)?;
        check_keys(o, path, &["id", "base_kv", "v_min", "v_max"])?;
        Ok(Bus {
            id: req_id(o, path, "id")?,
            base_kv: self.opt_f64(o, path, "base_kv", 1.0)?,
            v_min: self.opt_f64(o, path, "v_min", DEFAULT_V_MIN)?,
            v_max: self.opt_f64(o, path, "v_max", DEFAULT_V_MAX)?,
        })
    }

    fn branch(&mut self, v: &Value, path: &str) -> Result<Branch, NetworkError> {
        let o = as_object(v, path)?;
        check_keys(o, path, &["id", "origin", "dest", "b", "g", "p_max", "switchable", "x0"])?;
        Ok(Branch {
            id: req_id(o, path, "id")?,
            origin: req_id(o, path, "origin")?,
            dest: req_id(o, path, "dest")?,
            b: req_f64(o, path, "b")?,
            g: self.opt_f64(o, path, "g", 0.0)?,
            p_max: req_f64(o, path, "p_max")?,
            switchable: self.opt_bool(o, path, "switchable", true)?,
            x0: self.opt_bool(o, path, "x0", true)?,
        })
    }

    fn device(&mut self, v: &Value, path: &str) -> Result<Device, NetworkError> {
        let o = as_object(v, path)?;
        check_keys(
            o,
            path,
            &["id", "bus", "cost", "p_min", "p_max", "q_min", "q_max", "ramp", "commitable"],
        )?;
        let p_max = req_f64(o, path, "p_max")?;
        let q_default = DEFAULT_Q_FRACTION * p_max.abs();
        let ramp = match o.get("ramp") {
            None | Some(Value::Null) => None,
            Some(v) => Some(num(v, &format!("{path}.ramp"))?),
        };
        Ok(Device {
            id: req_id(o, path, "id")?,
            bus: req_id(o, path, "bus")?,
            cost: req_f64(o, path, "cost")?,
            p_min: req_f64(o, path, "p_min")?,
            p_max,
            q_min: self.opt_f64(o, path, "q_min", -q_default)?,
            q_max: self.opt_f64(o, path, "q_max", q_default)?,
            ramp,
            commitable: self.opt_bool(o, path, "commitable", p_max > 0.0)?,
        })
    }

    fn opt_f64(&mut self, o: &Map<String, Value>, path: &str, key: &str, default: f64) -> Result<f64, NetworkError> {
        match o.get(key) {
            Some(v) => num(v, &format!("{path}.{key}")),
            None => {
                self.notes.push(format!("{path}.{key} defaulted to {default}"));
                Ok(default)
            }
        }
    }

    fn opt_bool(&mut self, o: &Map<String, Value>, path: &str, key: &str, default: bool) -> Result<bool, NetworkError> {
        match o.get(key) {
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(schema(&format!("{path}.{key}"), "expected a boolean")),
            None => {
                self.notes.push(format!("{path}.{key} defaulted to {default}"));
                Ok(default)
            }
        }
    }
}

fn schema(path: &str, message: &str) -> NetworkError {
    NetworkError::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, NetworkError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn check_keys(o: &Map<String, Value>, path: &str, allowed: &[&str]) -> Result<(), NetworkError> {
    match o.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(&format!("{path}.{k}"), "unknown key")),
        None => Ok(()),
    }
}

fn array<'a>(o: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Vec<Value>, NetworkError> {
    o.get(key)
        .ok_or_else(|| schema(&format!("{path}.{key}"), "missing required key"))?
        .as_array()
        .ok_or_else(|| schema(&format!("{path}.{key}"), "expected an array"))
}

fn num(v: &Value, path: &str) -> Result<f64, NetworkError> {
    v.as_f64().ok_or_else(|| schema(path, "expected a number"))
}

fn req_f64(o: &Map<String, Value>, path: &str, key: &str) -> Result<f64, NetworkError> {
    let p = format!("{path}.{key}");
    num(o.get(key).ok_or_else(|| schema(&p, "missing required key"))?, &p)
}

fn req_id(o: &Map<String, Value>, path: &str, key: &str) -> Result<usize, NetworkError> {
    let p = format!("{path}.{key}");
    let v = o.get(key).ok_or_else(|| schema(&p, "missing required key"))?;
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| schema(&p, "expected a non-negative integer"))
}
