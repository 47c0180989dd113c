//! MATPOWER `.m` case subset: `mpc.baseMVA`, `mpc.bus`, `mpc.branch`,
//! `mpc.gen` and `mpc.gencost`.
//!
//! Conversions:
//! * MW / MVAr quantities are divided by `baseMVA`.
//! * Branch `r`, `x` become `g = r/(r²+x²)`, `b = x/(r²+x²)` (positive `b`
//!   for an inductive line). `rateA = 0` (unlimited) maps to 9900 MW.
//! * Bus loads `Pd`, `Qd` become fixed devices with `p = −Pd`, `q = −Qd`.
//! * Costs keep the case's $/MWh slope; polynomial costs must be at most
//!   linear, piecewise-linear costs are replaced by their end-to-end slope.
//! * Branch status 0 becomes `x0 = false`; every branch is switchable.
//!   Out-of-service generators are dropped.
//! * Tap ratios, phase shifts, line charging and bus shunts are ignored.

use super::{Branch, Bus, Device, Network, NetworkError, DEFAULT_V_MAX, DEFAULT_V_MIN};

/// Thermal rating substituted for `rateA = 0`.
const UNLIMITED_RATE_MW: f64 = 9900.0;

#[derive(Debug)]
struct Table {
    name: &'static str,
    rows: Vec<(usize, Vec<f64>)>,
}

pub fn parse_matpower_case(text: &str) -> Result<Network, NetworkError> {
    let mut base_mva = None;
    let mut bus = None;
    let mut branch = None;
    let mut gen = None;
    let mut gencost = None;

    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, strip_comment(l)));
    while let Some((lineno, line)) = lines.next() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("mpc.baseMVA") {
            let v = rest.trim().trim_start_matches('=').trim().trim_end_matches(';').trim();
            base_mva = Some(v.parse::<f64>().map_err(|_| NetworkError::Parse {
                table: "baseMVA".into(),
                line: lineno,
                message: format!("cannot parse '{v}' as a number"),
            })?);
            continue;
        }
        let name = match matrix_name(t) {
            Some(n) => n,
            None => continue,
        };
        let slot = match name {
            "bus" => &mut bus,
            "branch" => &mut branch,
            "gen" => &mut gen,
            "gencost" => &mut gencost,
            _ => continue,
        };
        let body_start = t.find('[').map(|p| &t[p + 1..]).unwrap_or("");
        *slot = Some(read_matrix(name, lineno, body_start, &mut lines)?);
    }

    let base_mva = base_mva.ok_or_else(|| missing("baseMVA"))?;
    let bus = bus.ok_or_else(|| missing("bus"))?;
    let branch = branch.ok_or_else(|| missing("branch"))?;
    let gen = gen.ok_or_else(|| missing("gen"))?;
    let gencost = gencost.ok_or_else(|| missing("gencost"))?;
    build(base_mva, &bus, &branch, &gen, &gencost)
}

fn missing(table: &str) -> NetworkError {
    NetworkError::Parse {
        table: table.into(),
        line: 0,
        message: "table not found".into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn matrix_name(t: &str) -> Option<&'static str> {
    let rest = t.strip_prefix("mpc.")?;
    let (name, tail) = rest.split_once('=')?;
    if !tail.contains('[') {
        return None;
    }
    match name.trim() {
        "bus" => Some("bus"),
        "branch" => Some("branch"),
        "gen" => Some("gen"),
        "gencost" => Some("gencost"),
        _ => None,
    }
}

fn read_matrix<'a>(
    name: &'static str,
    start_line: usize,
    first: &str,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
) -> Result<Table, NetworkError> {
    let mut table = Table { name, rows: Vec::new() };
    let mut pending: Vec<f64> = Vec::new();
    let mut pending_line = start_line;

    let mut consume = |lineno: usize, chunk: &str, table: &mut Table| -> Result<bool, NetworkError> {
        let (body, done) = match chunk.find(']') {
            Some(p) => (&chunk[..p], true),
            None => (chunk, false),
        };
        for (k, row) in body.split(';').enumerate() {
            if k > 0 && !pending.is_empty() {
                table.rows.push((pending_line, std::mem::take(&mut pending)));
            }
            for tok in row.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()) {
                if pending.is_empty() {
                    pending_line = lineno;
                }
                let v = tok.parse::<f64>().map_err(|_| NetworkError::Parse {
                    table: name.into(),
                    line: lineno,
                    message: format!("cannot parse '{tok}' as a number"),
                })?;
                pending.push(v);
            }
        }
        // A newline also terminates a row.
        if !pending.is_empty() {
            table.rows.push((pending_line, std::mem::take(&mut pending)));
        }
        Ok(done)
    };

    if consume(start_line, first, &mut table)? {
        return Ok(table);
    }
    for (lineno, line) in lines {
        if consume(lineno, line, &mut table)? {
            return Ok(table);
        }
    }
    Err(NetworkError::Parse {
        table: name.into(),
        line: start_line,
        message: "unterminated matrix (missing ']')".into(),
    })
}

fn need(table: &Table, line: usize, row: &[f64], n: usize) -> Result<(), NetworkError> {
    if row.len() < n {
        return Err(NetworkError::Parse {
            table: table.name.into(),
            line,
            message: format!("expected at least {n} columns, found {}", row.len()),
        });
    }
    Ok(())
}

fn as_id(table: &Table, line: usize, v: f64) -> Result<usize, NetworkError> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(NetworkError::Parse {
            table: table.name.into(),
            line,
            message: format!("'{v}' is not a valid id"),
        })
    }
}

fn build(base_mva: f64, bus_t: &Table, branch_t: &Table, gen_t: &Table, cost_t: &Table) -> Result<Network, NetworkError> {
    let mut buses = Vec::with_capacity(bus_t.rows.len());
    let mut loads = Vec::new();
    for (line, row) in &bus_t.rows {
        need(bus_t, *line, row, 13)?;
        let id = as_id(bus_t, *line, row[0])?;
        let (vmax, vmin) = (row[11], row[12]);
        buses.push(Bus {
            id,
            base_kv: row[9],
            v_min: if vmin > 0.0 { vmin } else { DEFAULT_V_MIN },
            v_max: if vmax > 0.0 { vmax } else { DEFAULT_V_MAX },
        });
        let (pd, qd) = (row[2], row[3]);
        if pd != 0.0 || qd != 0.0 {
            loads.push((id, pd / base_mva, qd / base_mva));
        }
    }

    let mut branches = Vec::with_capacity(branch_t.rows.len());
    for (k, (line, row)) in branch_t.rows.iter().enumerate() {
        need(branch_t, *line, row, 11)?;
        let (r, x) = (row[2], row[3]);
        let z2 = r * r + x * x;
        if z2 == 0.0 {
            return Err(NetworkError::Parse {
                table: "branch".into(),
                line: *line,
                message: "zero impedance branch".into(),
            });
        }
        let rate = if row[5] > 0.0 { row[5] } else { UNLIMITED_RATE_MW };
        branches.push(Branch {
            id: k + 1,
            origin: as_id(branch_t, *line, row[0])?,
            dest: as_id(branch_t, *line, row[1])?,
            b: x / z2,
            g: r / z2,
            p_max: rate / base_mva,
            switchable: true,
            x0: row[10] != 0.0,
        });
    }

    if cost_t.rows.len() < gen_t.rows.len() {
        return Err(NetworkError::Parse {
            table: "gencost".into(),
            line: cost_t.rows.last().map(|r| r.0).unwrap_or(0),
            message: format!("{} cost rows for {} generators", cost_t.rows.len(), gen_t.rows.len()),
        });
    }
    let mut devices = Vec::with_capacity(gen_t.rows.len() + loads.len());
    for (k, ((line, row), (cline, crow))) in gen_t.rows.iter().zip(&cost_t.rows).enumerate() {
        need(gen_t, *line, row, 10)?;
        if row[7] <= 0.0 {
            continue;
        }
        devices.push(Device {
            id: k + 1,
            bus: as_id(gen_t, *line, row[0])?,
            cost: linear_cost(cost_t, *cline, crow)?,
            p_min: row[9] / base_mva,
            p_max: row[8] / base_mva,
            q_min: row[4] / base_mva,
            q_max: row[3] / base_mva,
            ramp: None,
            commitable: true,
        });
    }
    let first_load_id = gen_t.rows.len() + 1;
    for (k, (bus, pd, qd)) in loads.into_iter().enumerate() {
        devices.push(Device {
            id: first_load_id + k,
            bus,
            cost: 0.0,
            p_min: -pd,
            p_max: -pd,
            q_min: -qd,
            q_max: -qd,
            ramp: None,
            commitable: false,
        });
    }

    Network::new(base_mva, buses, branches, devices)
}

fn linear_cost(t: &Table, line: usize, row: &[f64]) -> Result<f64, NetworkError> {
    let err = |message: String| NetworkError::Parse {
        table: t.name.into(),
        line,
        message,
    };
    need(t, line, row, 4)?;
    let model = row[0];
    let n = as_id(t, line, row[3])?;
    let coeffs = &row[4..];
    if coeffs.len() < n * if model == 1.0 { 2 } else { 1 } {
        return Err(err(format!("declared {n} cost parameters, found {}", coeffs.len())));
    }
    if model == 2.0 {
        // Highest degree first: c_{n-1} ... c_1 c_0.
        let higher = &coeffs[..n.saturating_sub(2)];
        if higher.iter().any(|&c| c != 0.0) {
            return Err(err(format!(
                "polynomial cost of degree {} is not supported; only linear costs are accepted",
                n - 1
            )));
        }
        Ok(if n >= 2 { coeffs[n - 2] } else { 0.0 })
    } else if model == 1.0 {
        if n < 2 {
            return Err(err("piecewise-linear cost needs at least two points".into()));
        }
        let (p0, f0) = (coeffs[0], coeffs[1]);
        let (p1, f1) = (coeffs[2 * n - 2], coeffs[2 * n - 1]);
        if p1 == p0 {
            return Err(err("piecewise-linear cost has zero width".into()));
        }
        Ok((f1 - f0) / (p1 - p0))
    } else {
        Err(err(format!("unknown cost model {model}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"
function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	10	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	100	0	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.01	0.1	0	120	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	2	10	0;
];
"#;

    #[test]
    fn two_bus_case() {
        let net = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_branches(), 1);
        assert_eq!(net.n_devices(), 2);
        let br = &net.branches()[0];
        assert!((br.b - 0.1 / (0.01f64.powi(2) + 0.01)).abs() < 1e-12);
        assert!((br.p_max - 1.2).abs() < 1e-12);
        let load = &net.devices()[1];
        assert_eq!((load.p_min, load.p_max, load.q_min), (-0.5, -0.5, -0.1));
        assert_eq!(net.devices()[0].cost, 10.0);
    }

    #[test]
    fn generator_at_unknown_bus() {
        let text = TWO_BUS.replace("\t1\t0\t0\t300", "\t99\t0\t0\t300");
        assert!(matches!(parse_matpower_case(&text), Err(NetworkError::Validation(_))));
    }

    #[test]
    fn malformed_row_names_table_and_line() {
        let text = TWO_BUS.replace("0.01\t0.1", "0.01\tabc");
        match parse_matpower_case(&text).unwrap_err() {
            NetworkError::Parse { table, line, .. } => {
                assert_eq!(table, "branch");
                assert_eq!(line, 14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quadratic_cost_is_rejected() {
        let text = TWO_BUS.replace("2\t0\t0\t2\t10\t0;", "2\t0\t0\t3\t0.1\t10\t0;");
        let err = parse_matpower_case(&text).unwrap_err();
        assert!(err.to_string().contains("polynomial cost of degree 2"));
        // Zero quadratic term is linear in disguise.
        let text = TWO_BUS.replace("2\t0\t0\t2\t10\t0;", "2\t0\t0\t3\t0\t12\t0;");
        assert_eq!(parse_matpower_case(&text).unwrap().devices()[0].cost, 12.0);
    }

    #[test]
    fn piecewise_cost_uses_end_to_end_slope() {
        let text = TWO_BUS.replace("2\t0\t0\t2\t10\t0;", "1\t0\t0\t3\t0\t0\t50\t400\t100\t1000;");
        assert_eq!(parse_matpower_case(&text).unwrap().devices()[0].cost, 10.0);
    }

    #[test]
    fn rows_on_one_line_and_missing_table() {
        let text = TWO_BUS.replace(
            "mpc.gencost = [\n\t2\t0\t0\t2\t10\t0;\n];",
            "mpc.gencost = [ 2 0 0 2 10 0 ];",
        );
        assert_eq!(parse_matpower_case(&text).unwrap().devices()[0].cost, 10.0);
        let text = TWO_BUS.replace("mpc.gencost", "mpc.other");
        assert!(parse_matpower_case(&text).unwrap_err().to_string().contains("gencost"));
    }
}
