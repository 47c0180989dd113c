//! Two-phase bounded revised simplex with a dense basis inverse.
//!
//! Every row `l ≤ a·x ≤ u` gets a slack `s = a·x` carrying the row bounds,
//! so the working system is `A x − s = 0` with bounds on all columns.
//! Phase one starts from a slack basis and adds an artificial only for rows
//! whose slack would start out of bounds. Pricing is Dantzig's rule; after a
//! run of degenerate pivots it falls back to Bland's rule until progress
//! resumes.

use nalgebra::DMatrix;

use super::{LinearProgram, LpConfig, LpSolution, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic(usize),
    Lower,
    Upper,
    /// Free nonbasic column held at zero.
    Zero,
}

struct Tableau<'a> {
    lp: &'a LinearProgram,
    n: usize,
    m: usize,
    /// Structural columns in sparse form.
    cols: Vec<Vec<(usize, f64)>>,
    /// Sign of each artificial column (`None` if the row has no artificial).
    art_sign: Vec<Option<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    value: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    pivots_since_refactor: usize,
    iterations: usize,
    cfg: LpConfig,
}

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 40;
const DEGENERATE_RUN: usize = 30;

enum Step {
    Optimal,
    Unbounded,
    Limit,
    Failure,
}

impl<'a> Tableau<'a> {
    fn new(lp: &'a LinearProgram, cfg: LpConfig) -> Self {
        let n = lp.n_vars();
        let m = lp.rows.len();
        let mut cols = vec![Vec::new(); n];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
        }
        let total = n + 2 * m;
        let mut lower = Vec::with_capacity(total);
        let mut upper = Vec::with_capacity(total);
        lower.extend_from_slice(&lp.var_lower);
        upper.extend_from_slice(&lp.var_upper);
        for row in &lp.rows {
            lower.push(row.lower);
            upper.push(row.upper);
        }
        lower.extend(std::iter::repeat_n(0.0, m));
        upper.extend(std::iter::repeat_n(0.0, m));

        let mut t = Self {
            lp,
            n,
            m,
            cols,
            art_sign: vec![None; m],
            lower,
            upper,
            cost: vec![0.0; total],
            value: vec![0.0; total],
            state: vec![State::Lower; total],
            basis: vec![0; m],
            binv: vec![0.0; m * m],
            pivots_since_refactor: 0,
            iterations: 0,
            cfg,
        };
        t.initial_basis();
        t
    }

    fn initial_basis(&mut self) {
        let (n, m) = (self.n, self.m);
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            let (s, v) = if l.is_finite() {
                (State::Lower, l)
            } else if u.is_finite() {
                (State::Upper, u)
            } else {
                (State::Zero, 0.0)
            };
            self.state[j] = s;
            self.value[j] = v;
        }
        let mut activity = vec![0.0; m];
        for j in 0..n {
            if self.value[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    activity[i] += a * self.value[j];
                }
            }
        }
        for i in 0..m {
            let s = n + i;
            let art = n + m + i;
            let (l, u) = (self.lower[s], self.upper[s]);
            let r = activity[i];
            self.state[art] = State::Lower;
            self.value[art] = 0.0;
            if r >= l - self.cfg.feas_tol && r <= u + self.cfg.feas_tol {
                // Slack column is −e_i: B = −I on this row.
                self.state[s] = State::Basic(i);
                self.value[s] = r;
                self.basis[i] = s;
                self.binv[i * m + i] = -1.0;
            } else {
                let target = if r < l { l } else { u };
                self.state[s] = if r < l { State::Lower } else { State::Upper };
                self.value[s] = target;
                // a_i·x − s + σ·art = 0  ⇒  art = (s − a_i·x)/σ ≥ 0.
                let sigma = if target - r >= 0.0 { 1.0 } else { -1.0 };
                self.art_sign[i] = Some(sigma);
                self.upper[art] = f64::INFINITY;
                self.state[art] = State::Basic(i);
                self.value[art] = (target - r) / sigma;
                self.basis[i] = art;
                self.binv[i * m + i] = 1.0 / sigma;
            }
        }
    }

    fn for_each_entry(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        let (n, m) = (self.n, self.m);
        if j < n {
            for &(i, a) in &self.cols[j] {
                f(i, a);
            }
        } else if j < n + m {
            f(j - n, -1.0);
        } else {
            let i = j - n - m;
            f(i, self.art_sign[i].unwrap_or(1.0));
        }
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        self.for_each_entry(j, |k, a| {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.binv[i * m + k] * a;
            }
        });
        out
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &bj) in self.basis.iter().enumerate() {
            let c = self.cost[bj];
            if c != 0.0 {
                for (k, yk) in y.iter_mut().enumerate() {
                    *yk += c * self.binv[i * m + k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        let mut d = self.cost[j];
        self.for_each_entry(j, |i, a| d -= y[i] * a);
        d
    }

    fn refactor(&mut self) -> bool {
        let m = self.m;
        if m == 0 {
            return true;
        }
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (pos, &j) in self.basis.iter().enumerate() {
            self.for_each_entry(j, |i, a| b[(i, pos)] = a);
        }
        let inv = match b.try_inverse() {
            Some(inv) => inv,
            None => return false,
        };
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        self.pivots_since_refactor = 0;
        self.recompute_basic_values();
        true
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        // B x_B = −N x_N.
        let mut rhs = vec![0.0; m];
        for j in 0..self.value.len() {
            if matches!(self.state[j], State::Basic(_)) || self.value[j] == 0.0 {
                continue;
            }
            let v = self.value[j];
            self.for_each_entry(j, |i, a| rhs[i] -= a * v);
        }
        for (pos, &bj) in self.basis.iter().enumerate() {
            let mut v = 0.0;
            for (k, r) in rhs.iter().enumerate() {
                v += self.binv[pos * m + k] * r;
            }
            self.value[bj] = v;
        }
    }

    fn eligible(&self, j: usize, d: f64) -> Option<f64> {
        let tol = self.cfg.opt_tol;
        if self.lower[j] == self.upper[j] {
            return None;
        }
        match self.state[j] {
            State::Basic(_) => None,
            State::Lower if d < -tol => Some(1.0),
            State::Upper if d > tol => Some(-1.0),
            State::Zero if d.abs() > tol => Some(if d < 0.0 { 1.0 } else { -1.0 }),
            _ => None,
        }
    }

    fn run(&mut self, n_active: usize) -> Step {
        let mut degenerate = 0usize;
        let mut failures = 0usize;
        loop {
            if self.iterations >= self.cfg.max_iterations {
                return Step::Limit;
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY && !self.refactor() {
                return Step::Failure;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let y = self.duals();

            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..n_active {
                let d = self.reduced_cost(j, &y);
                if let Some(dir) = self.eligible(j, d) {
                    if bland {
                        entering = Some((j, dir, d));
                        break;
                    }
                    if entering.is_none_or(|(_, _, best)| d.abs() > best.abs()) {
                        entering = Some((j, dir, d));
                    }
                }
            }
            let (q, dir, _) = match entering {
                Some(e) => e,
                None => return Step::Optimal,
            };

            let alpha = self.ftran(q);
            let feas = self.cfg.feas_tol;
            // Basic i moves at rate −dir·α_i per unit step of x_q.
            let mut best_t = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None; // (basis position, to_upper)
            let mut best_piv = 0.0;
            for (pos, &a) in alpha.iter().enumerate() {
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let bj = self.basis[pos];
                let rate = -dir * a;
                let x = self.value[bj];
                let (t, to_upper) = if rate < 0.0 {
                    let l = self.lower[bj];
                    if !l.is_finite() {
                        continue;
                    }
                    (((x - l).max(0.0)) / -rate, false)
                } else {
                    let u = self.upper[bj];
                    if !u.is_finite() {
                        continue;
                    }
                    (((u - x).max(0.0)) / rate, true)
                };
                let better = if bland {
                    t < best_t - 1e-12 || (t <= best_t + 1e-12 && leave.is_none_or(|(p, _)| bj < self.basis[p]))
                } else {
                    t < best_t - 1e-12 || (t <= best_t + 1e-12 && a.abs() > best_piv)
                };
                if better {
                    best_t = t;
                    leave = Some((pos, to_upper));
                    best_piv = a.abs();
                }
            }
            let span = self.upper[q] - self.lower[q];
            let flip = span.is_finite() && span <= best_t;
            if flip {
                best_t = span;
            }
            if !best_t.is_finite() {
                return Step::Unbounded;
            }
            self.iterations += 1;
            if best_t <= feas * 1e-3 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            for (pos, &a) in alpha.iter().enumerate() {
                if a != 0.0 {
                    self.value[self.basis[pos]] -= dir * best_t * a;
                }
            }
            if flip {
                let to_upper = dir > 0.0;
                self.state[q] = if to_upper { State::Upper } else { State::Lower };
                self.value[q] = if to_upper { self.upper[q] } else { self.lower[q] };
                continue;
            }
            let (r, to_upper) = leave.expect("finite step has a leaving row");
            let ar = alpha[r];
            if ar.abs() < 1e-11 {
                failures += 1;
                if failures > 5 || !self.refactor() {
                    return Step::Failure;
                }
                continue;
            }
            let old = self.basis[r];
            self.value[q] += dir * best_t;
            self.state[old] = if to_upper { State::Upper } else { State::Lower };
            self.value[old] = if to_upper { self.upper[old] } else { self.lower[old] };
            self.state[q] = State::Basic(r);
            self.basis[r] = q;

            let m = self.m;
            let inv_ar = 1.0 / ar;
            for k in 0..m {
                self.binv[r * m + k] *= inv_ar;
            }
            for (i, &ai) in alpha.iter().enumerate() {
                if i != r && ai != 0.0 {
                    for k in 0..m {
                        let v = self.binv[r * m + k];
                        self.binv[i * m + k] -= ai * v;
                    }
                }
            }
            self.pivots_since_refactor += 1;
        }
    }

    fn max_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n {
            let v = self.value[j];
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.lp.rows {
            let act: f64 = row.coeffs.iter().map(|&(j, a)| a * self.value[j]).sum();
            worst = worst.max(row.lower - act).max(act - row.upper);
        }
        worst
    }
}

pub fn solve_lp(lp: &LinearProgram, cfg: &LpConfig) -> LpSolution {
    let n = lp.n_vars();
    for j in 0..n {
        if lp.var_lower[j] > lp.var_upper[j] {
            return LpSolution::with_status(LpStatus::Infeasible, n);
        }
    }
    for row in &lp.rows {
        if row.lower > row.upper {
            return LpSolution::with_status(LpStatus::Infeasible, n);
        }
    }

    let mut t = Tableau::new(lp, *cfg);
    let m = t.m;

    if t.art_sign.iter().any(Option::is_some) {
        for i in 0..m {
            if t.art_sign[i].is_some() {
                t.cost[n + m + i] = 1.0;
            }
        }
        match t.run(n + 2 * m) {
            Step::Optimal => {}
            Step::Limit => return LpSolution::with_status(LpStatus::IterLimit, n),
            // Phase one is bounded below by zero.
            Step::Unbounded | Step::Failure => return LpSolution::with_status(LpStatus::NumericalFailure, n),
        }
        if !t.refactor() {
            return LpSolution::with_status(LpStatus::NumericalFailure, n);
        }
        let infeas: f64 = (0..m)
            .filter(|&i| t.art_sign[i].is_some())
            .map(|i| t.value[n + m + i])
            .sum();
        if infeas > cfg.feas_tol {
            return LpSolution {
                iterations: t.iterations,
                ..LpSolution::with_status(LpStatus::Infeasible, n)
            };
        }
        for i in 0..m {
            let a = n + m + i;
            t.cost[a] = 0.0;
            t.upper[a] = 0.0;
            if !matches!(t.state[a], State::Basic(_)) {
                t.value[a] = 0.0;
            }
        }
    }

    t.cost[..n].copy_from_slice(&lp.objective);
    let step = t.run(n + m);
    let status = match step {
        Step::Optimal => LpStatus::Optimal,
        Step::Unbounded => return LpSolution { iterations: t.iterations, ..LpSolution::with_status(LpStatus::Unbounded, n) },
        Step::Limit => return LpSolution { iterations: t.iterations, ..LpSolution::with_status(LpStatus::IterLimit, n) },
        Step::Failure => return LpSolution::with_status(LpStatus::NumericalFailure, n),
    };
    if !t.refactor() {
        return LpSolution::with_status(LpStatus::NumericalFailure, n);
    }
    // Refactoring can expose drift; one more pricing pass cleans it up.
    if let Step::Optimal = t.run(n + m) {
    } else {
        return LpSolution::with_status(LpStatus::NumericalFailure, n);
    }

    let x: Vec<f64> = (0..n).map(|j| snap(t.value[j], lp.var_lower[j], lp.var_upper[j])).collect();
    let mut tt = t;
    tt.value[..n].copy_from_slice(&x);
    if tt.max_violation() > cfg.feas_tol {
        return LpSolution::with_status(LpStatus::NumericalFailure, n);
    }
    let objective = lp.objective_constant + lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    let duals = tt.duals();
    LpSolution {
        status,
        x,
        objective,
        row_duals: duals,
        iterations: tt.iterations,
    }
}

fn snap(v: f64, l: f64, u: f64) -> f64 {
    if (v - l).abs() <= 1e-11 {
        l
    } else if (v - u).abs() <= 1e-11 {
        u
    } else {
        v
    }
}
