//! CPLEX LP-text dump for cross-checking models against external solvers.

use std::fmt::Write;

use super::MilpModel;

fn var(model: &MilpModel, j: usize) -> String {
    let raw = model.name(j);
    if raw.is_empty() {
        return format!("v{j}");
    }
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

fn terms(model: &MilpModel, coeffs: impl Iterator<Item = (usize, f64)>) -> String {
    let mut s = String::new();
    for (j, a) in coeffs {
        if a == 0.0 {
            continue;
        }
        let sign = if a < 0.0 { "-" } else { "+" };
        let _ = write!(s, " {sign} {} {}", a.abs(), var(model, j));
    }
    if s.is_empty() {
        s.push_str(" 0");
    }
    s
}

pub fn to_lp_text(model: &MilpModel) -> String {
    let lp = &model.lp;
    let mut s = String::from("Minimize\n obj:");
    s += &terms(model, lp.objective.iter().copied().enumerate());
    if lp.objective_constant != 0.0 {
        let _ = write!(s, " + {}", lp.objective_constant);
    }
    s += "\nSubject To\n";
    for (k, row) in lp.rows.iter().enumerate() {
        let body = terms(model, row.coeffs.iter().copied());
        if row.lower == row.upper {
            let _ = writeln!(s, " r{k}:{body} = {}", row.lower);
            continue;
        }
        if row.lower.is_finite() {
            let _ = writeln!(s, " r{k}_lo:{body} >= {}", row.lower);
        }
        if row.upper.is_finite() {
            let _ = writeln!(s, " r{k}_hi:{body} <= {}", row.upper);
        }
    }
    s += "Bounds\n";
    for j in 0..lp.n_vars() {
        let (l, u) = (lp.var_lower[j], lp.var_upper[j]);
        let name = var(model, j);
        match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                let _ = writeln!(s, " {l} <= {name} <= {u}");
            }
            (true, false) => {
                let _ = writeln!(s, " {name} >= {l}");
            }
            (false, true) => {
                let _ = writeln!(s, " -inf <= {name} <= {u}");
            }
            (false, false) => {
                let _ = writeln!(s, " {name} free");
            }
        }
    }
    if !model.binary_vars.is_empty() {
        s += "Binary\n";
        for &j in &model.binary_vars {
            let _ = writeln!(s, " {}", var(model, j));
        }
    }
    s += "End\n";
    s
}
