//! Dense primal-dual interior point method for
//! `min f(x)  s.t.  c(x) = 0,  l ≤ x ≤ u`.
//!
//! Log-barrier subproblems with a monotone barrier schedule, Newton steps on
//! the primal-dual system with inertia-controlled regularization,
//! fraction-to-boundary step rules, and an
//! ℓ1 merit line search with one second-order correction. Variables with
//! `l == u` are held fixed and removed from the linear algebra.

use nalgebra::{DMatrix, DVector};

pub trait Nlp {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn constraints(&self, x: &[f64]) -> Vec<f64>;
    /// Dense `m × n` Jacobian of the constraints.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
    /// Dense Hessian of `obj_factor · f + Σ y_k c_k`.
    fn hessian(&self, x: &[f64], obj_factor: f64, y: &[f64]) -> DMatrix<f64>;
    /// Violation measure used to keep the least-violating iterate.
    fn violation(&self, _x: &[f64], c: &[f64]) -> f64 {
        c.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub max_iter: usize,
    pub constr_tol: f64,
    pub dual_tol: f64,
    pub compl_tol: f64,
    pub mu_init: f64,
    pub bound_push: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            constr_tol: 1e-9,
            dual_tol: 1e-6,
            compl_tol: 1e-8,
            mu_init: 0.1,
            bound_push: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmResult {
    pub status: IpmStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Iterate with the smallest violation measure seen.
    pub best_x: Vec<f64>,
    pub best_violation: f64,
}

const KAPPA_SIGMA: f64 = 1e10;
const ETA_ARMIJO: f64 = 1e-4;
const MU_MIN: f64 = 1e-11;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const MAX_SOC: usize = 4;

/// Eigendecomposition of the regularized primal-dual matrix
/// `[H + δ_w I, Jᵀ; J, −δ_c I]` after symmetric equilibration `D K D`.
struct Kkt {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    scale: DVector<f64>,
    n: usize,
}

impl Kkt {
    /// Solves `K [dx; dy] = −[r_x; r_c]`.
    fn solve(&self, r_x: &DVector<f64>, r_c: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let rhs = DVector::from_iterator(r_x.len() + r_c.len(), r_x.iter().chain(r_c.iter()).map(|v| -v));
        let mut w = self.vectors.tr_mul(&rhs.component_mul(&self.scale));
        for (wk, lk) in w.iter_mut().zip(self.values.iter()) {
            *wk /= lk;
        }
        let sol = (&self.vectors * w).component_mul(&self.scale);
        (sol.rows(0, self.n).into_owned(), sol.rows(self.n, sol.len() - self.n).into_owned())
    }
}

struct Problem<'a, P: Nlp> {
    nlp: &'a P,
    free: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    obj_scale: f64,
}

impl<P: Nlp> Problem<'_, P> {
    fn reduced_rows(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(full.nrows(), self.free.len(), |r, k| full[(r, self.free[k])])
    }

    fn barrier(&self, x: &[f64], mu: f64) -> f64 {
        let mut b = 0.0;
        for &j in &self.free {
            if self.lower[j].is_finite() {
                b -= mu * (x[j] - self.lower[j]).ln();
            }
            if self.upper[j].is_finite() {
                b -= mu * (self.upper[j] - x[j]).ln();
            }
        }
        b
    }

    fn merit(&self, x: &[f64], mu: f64, nu: f64) -> (f64, Vec<f64>) {
        let c = self.nlp.constraints(x);
        let l1: f64 = c.iter().map(|v| v.abs()).sum();
        let phi = self.obj_scale * self.nlp.objective(x) + self.barrier(x, mu) + nu * l1;
        (phi, c)
    }

    /// Largest step in `(0, 1]` keeping `x + α dx` a fraction `tau` inside the bounds.
    fn max_step(&self, x: &[f64], dx: &DVector<f64>, tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for (k, &j) in self.free.iter().enumerate() {
            let d = dx[k];
            if d < 0.0 && self.lower[j].is_finite() {
                alpha = alpha.min(-tau * (x[j] - self.lower[j]) / d);
            }
            if d > 0.0 && self.upper[j].is_finite() {
                alpha = alpha.min(tau * (self.upper[j] - x[j]) / d);
            }
        }
        alpha
    }

    fn step(&self, x: &[f64], dx: &DVector<f64>, alpha: f64) -> Vec<f64> {
        let mut t = x.to_vec();
        for (k, &j) in self.free.iter().enumerate() {
            t[j] += alpha * dx[k];
        }
        t
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn interior_start(x: f64, l: f64, u: f64, push: f64) -> f64 {
    let mut x = x;
    let width = u - l;
    if l.is_finite() {
        let pl = if width.is_finite() {
            (push * l.abs().max(1.0)).min(push * width)
        } else {
            push * l.abs().max(1.0)
        };
        x = x.max(l + pl);
    }
    if u.is_finite() {
        let pu = if width.is_finite() {
            (push * u.abs().max(1.0)).min(push * width)
        } else {
            push * u.abs().max(1.0)
        };
        x = x.min(u - pu);
    }
    x
}

pub fn solve_nlp<P: Nlp>(nlp: &P, x0: &[f64], opts: &IpmOptions) -> IpmResult {
    let n = nlp.n();
    let m = nlp.m();
    let (lower, upper) = nlp.bounds();
    assert_eq!(x0.len(), n, "start point has the wrong length");
    let free: Vec<usize> = (0..n).filter(|&j| lower[j] < upper[j]).collect();
    let nf = free.len();

    let mut x: Vec<f64> = (0..n)
        .map(|j| {
            if lower[j] >= upper[j] {
                lower[j]
            } else {
                interior_start(x0[j], lower[j], upper[j], opts.bound_push)
            }
        })
        .collect();

    let g0 = nlp.gradient(&x);
    let gmax = max_abs(free.iter().map(|&j| g0[j]));
    let prob = Problem {
        nlp,
        obj_scale: if gmax > 100.0 { 100.0 / gmax } else { 1.0 },
        free,
        lower,
        upper,
    };
    let has_l: Vec<bool> = prob.free.iter().map(|&j| prob.lower[j].is_finite()).collect();
    let has_u: Vec<bool> = prob.free.iter().map(|&j| prob.upper[j].is_finite()).collect();

    let mut mu = opts.mu_init;
    let mut z_l: Vec<f64> = prob
        .free
        .iter()
        .enumerate()
        .map(|(k, &j)| if has_l[k] { mu / (x[j] - prob.lower[j]) } else { 0.0 })
        .collect();
    let mut z_u: Vec<f64> = prob
        .free
        .iter()
        .enumerate()
        .map(|(k, &j)| if has_u[k] { mu / (prob.upper[j] - x[j]) } else { 0.0 })
        .collect();
    let mut y = DVector::<f64>::zeros(m);
    let mut nu: f64 = 1.0;
    // Filter entries `(θ, φ)`; a trial is acceptable unless dominated by one.
    let mut filter: Vec<(f64, f64)> = Vec::new();
    let mut theta_max = f64::INFINITY;
    let mut theta_min = 0.0;
    let mut last_delta_w: f64 = 0.0;

    let mut best_x = x.clone();
    let mut best_violation = f64::INFINITY;
    let mut status = IpmStatus::MaxIterations;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it;
        let c_vec = nlp.constraints(&x);
        let viol = nlp.violation(&x, &c_vec);
        if viol < best_violation && viol.is_finite() {
            best_violation = viol;
            best_x = x.clone();
        }
        let c = DVector::from_vec(c_vec);
        let g_full = nlp.gradient(&x);
        let g = DVector::from_iterator(nf, prob.free.iter().map(|&j| prob.obj_scale * g_full[j]));
        let jac = prob.reduced_rows(&nlp.jacobian(&x));
        if c.iter().chain(g.iter()).chain(jac.iter()).any(|v| !v.is_finite()) {
            status = IpmStatus::NumericalFailure;
            break;
        }

        let sl: Vec<f64> = prob.free.iter().map(|&j| x[j] - prob.lower[j]).collect();
        let su: Vec<f64> = prob.free.iter().map(|&j| prob.upper[j] - x[j]).collect();
        let zl = DVector::from_vec(z_l.clone());
        let zu = DVector::from_vec(z_u.clone());
        let dual = &g + jac.transpose() * &y - &zl + &zu;
        let primal = max_abs(c.iter().copied());
        let s_max = 100.0;
        let z_sum: f64 = y.iter().map(|v| v.abs()).sum::<f64>() + zl.sum() + zu.sum();
        let s_d = (z_sum / ((m + 2 * nf).max(1) as f64)).max(s_max) / s_max;
        let dual_err = max_abs(dual.iter().copied()) / s_d;
        let compl = |mu: f64| {
            (0..nf).fold(0.0f64, |e, k| {
                let mut e = e;
                if has_l[k] {
                    e = e.max((sl[k] * z_l[k] - mu).abs());
                }
                if has_u[k] {
                    e = e.max((su[k] * z_u[k] - mu).abs());
                }
                e
            })
        };
        if primal <= opts.constr_tol && dual_err <= opts.dual_tol && compl(0.0) <= opts.compl_tol {
            status = IpmStatus::Converged;
            break;
        }
        if it == 0 {
            let th: f64 = c.iter().map(|v| v.abs()).sum();
            theta_max = 1e4 * th.max(1.0);
            theta_min = 1e-4 * th.max(1.0);
        }
        while mu > MU_MIN && dual_err.max(primal).max(compl(mu)) <= 10.0 * mu {
            mu = (0.2 * mu).min(mu.powf(1.5)).max(MU_MIN);
            filter.clear();
        }

        // Primal-dual Hessian of the barrier subproblem.
        let sigma: Vec<f64> = (0..nf)
            .map(|k| {
                let mut s = 0.0;
                if has_l[k] {
                    s += z_l[k] / sl[k];
                }
                if has_u[k] {
                    s += z_u[k] / su[k];
                }
                s
            })
            .collect();
        let w_full = nlp.hessian(&x, prob.obj_scale, y.as_slice());
        let mut h = DMatrix::from_fn(nf, nf, |a, b| w_full[(prob.free[a], prob.free[b])]);
        for k in 0..nf {
            h[(k, k)] += sigma[k];
        }
        let barrier_grad = DVector::from_iterator(
            nf,
            (0..nf).map(|k| {
                let mut v = g[k];
                if has_l[k] {
                    v -= mu / sl[k];
                }
                if has_u[k] {
                    v += mu / su[k];
                }
                v
            }),
        );
        let r_x = &barrier_grad + jac.transpose() * &y;

        let Some((kkt, delta_w)) = factorize(&h, &jac, last_delta_w, mu) else {
            status = IpmStatus::NumericalFailure;
            break;
        };
        last_delta_w = delta_w;
        let (dx, dy) = kkt.solve(&r_x, &c);
        if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
            status = IpmStatus::NumericalFailure;
            break;
        }

        // Bound multiplier steps.
        let dzl: Vec<f64> = (0..nf)
            .map(|k| if has_l[k] { mu / sl[k] - z_l[k] - z_l[k] / sl[k] * dx[k] } else { 0.0 })
            .collect();
        let dzu: Vec<f64> = (0..nf)
            .map(|k| if has_u[k] { mu / su[k] - z_u[k] + z_u[k] / su[k] * dx[k] } else { 0.0 })
            .collect();
        let tau = (1.0 - mu).max(0.99);
        let alpha_max = prob.max_step(&x, &dx, tau);
        let mut alpha_z: f64 = 1.0;
        for k in 0..nf {
            if dzl[k] < 0.0 {
                alpha_z = alpha_z.min(-tau * z_l[k] / dzl[k]);
            }
            if dzu[k] < 0.0 {
                alpha_z = alpha_z.min(-tau * z_u[k] / dzu[k]);
            }
        }

        // Penalty parameter for the ℓ1 merit.
        let c_l1: f64 = c.iter().map(|v| v.abs()).sum();
        let grad_dx = barrier_grad.dot(&dx);
        let curv = dx.dot(&(&h * &dx)).max(0.0);
        if c_l1 > 1e-300 {
            let required = (grad_dx + 0.5 * curv) / (0.9 * c_l1);
            if nu < required {
                nu = required + 1.0;
            }
        }
        let dir_deriv = grad_dx - nu * c_l1;
        let (phi0, _) = prob.merit(&x, mu, nu);
        let slack = 10.0 * f64::EPSILON * phi0.abs().max(1.0);

        let mut accepted: Option<(Vec<f64>, DVector<f64>, f64)> = None;
        let tiny = alpha_max * max_abs(dx.iter().copied()) < 1e-14 * (1.0 + max_abs(x.iter().copied()));

        // Filter line search on (constraint violation, barrier objective).
        let theta0 = c_l1;
        let (phi_b0, _) = prob.merit(&x, mu, 0.0);
        let switching = |a: f64| grad_dx < 0.0 && a * (-grad_dx).powf(S_PHI) > theta0.powf(S_THETA);
        let alpha_min = if grad_dx < 0.0 && theta0 > 0.0 {
            GAMMA_ALPHA
                * GAMMA_THETA
                    .min(GAMMA_PHI * -grad_dx / theta0)
                    .min(theta0.powf(S_THETA) / (-grad_dx).powf(S_PHI))
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        }
        .max(1e-12);
        let acceptable = |a: f64, th: f64, ph: f64| -> Option<bool> {
            if !ph.is_finite() || th > theta_max || filter.iter().any(|&(ft, fp)| th >= ft && ph >= fp) {
                return None;
            }
            if theta0 <= theta_min && switching(a) {
                return (ph <= phi_b0 + ETA_ARMIJO * a * grad_dx + slack).then_some(true);
            }
            (th <= (1.0 - GAMMA_THETA) * theta0 || ph <= phi_b0 - GAMMA_PHI * theta0 + slack).then_some(false)
        };
        let mut filter_step: Option<(Vec<f64>, DVector<f64>, f64, bool)> = None;
        if !tiny {
            let mut alpha = alpha_max;
            let mut first = true;
            'search: while alpha >= alpha_min {
                let trial = prob.step(&x, &dx, alpha);
                let (ph, c_trial) = prob.merit(&trial, mu, 0.0);
                let th: f64 = c_trial.iter().map(|v| v.abs()).sum();
                if let Some(armijo) = acceptable(alpha, th, ph) {
                    filter_step = Some((trial, dy.clone(), alpha, armijo));
                    break;
                }
                if first && th >= theta0 {
                    first = false;
                    let mut c_soc = alpha * &c + DVector::from_vec(c_trial);
                    let mut th_prev = th;
                    for _ in 0..MAX_SOC {
                        let (dx_soc, dy_soc) = kkt.solve(&r_x, &c_soc);
                        let a_soc = prob.max_step(&x, &dx_soc, tau);
                        let t = prob.step(&x, &dx_soc, a_soc);
                        let (ph_s, c_s) = prob.merit(&t, mu, 0.0);
                        let th_s: f64 = c_s.iter().map(|v| v.abs()).sum();
                        if let Some(armijo) = acceptable(alpha, th_s, ph_s) {
                            filter_step = Some((t, dy_soc, a_soc, armijo));
                            break 'search;
                        }
                        if th_s > 0.99 * th_prev {
                            break;
                        }
                        th_prev = th_s;
                        c_soc = a_soc * c_soc + DVector::from_vec(c_s);
                    }
                }
                alpha *= 0.5;
            }
        }
        if let Some((t, dy_t, a, armijo)) = filter_step {
            if !armijo {
                filter.push(((1.0 - GAMMA_THETA) * theta0, phi_b0 - GAMMA_PHI * theta0));
            }
            accepted = Some((t, dy_t, a));
        }

        // Fallback: ℓ1 merit backtracking.
        let mut alpha = alpha_max;
        let mut first = true;
        while accepted.is_none() && (alpha > 1e-12 || tiny) {
            let trial = prob.step(&x, &dx, alpha);
            let (phi, c_trial) = prob.merit(&trial, mu, nu);
            if tiny || (phi.is_finite() && phi <= phi0 + ETA_ARMIJO * alpha * dir_deriv + slack) {
                accepted = Some((trial, dy.clone(), alpha));
                break;
            }
            if first {
                first = false;
                // Second-order correction against curvature in the constraints.
                let c_soc = alpha * &c + DVector::from_vec(c_trial);
                let (dx_soc, dy_soc) = kkt.solve(&r_x, &c_soc);
                let a_soc = prob.max_step(&x, &dx_soc, tau);
                if a_soc >= 1.0 - 1e-12 {
                    let t = prob.step(&x, &dx_soc, 1.0);
                    let (phi_soc, _) = prob.merit(&t, mu, nu);
                    if phi_soc.is_finite() && phi_soc <= phi0 + ETA_ARMIJO * alpha * dir_deriv + slack {
                        accepted = Some((t, dy_soc, alpha));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, dy_used, alpha)) = accepted else {
            status = IpmStatus::LineSearchFailed;
            break;
        };
        x = x_new;
        y += alpha * dy_used;
        for k in 0..nf {
            let j = prob.free[k];
            if has_l[k] {
                let s = x[j] - prob.lower[j];
                z_l[k] = (z_l[k] + alpha_z * dzl[k]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
            }
            if has_u[k] {
                let s = prob.upper[j] - x[j];
                z_u[k] = (z_u[k] + alpha_z * dzu[k]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
            }
        }
        iterations = it + 1;
    }

    let c_final = nlp.constraints(&x);
    let viol = nlp.violation(&x, &c_final);
    if viol < best_violation && viol.is_finite() {
        best_violation = viol;
        best_x = x.clone();
    }
    IpmResult {
        status,
        objective: nlp.objective(&x),
        x,
        y: y.as_slice().to_vec(),
        iterations,
        best_x,
        best_violation,
    }
}

/// Ruiz scaling: diagonal `d` with every row of `D K D` having max-norm near 1.
fn equilibrate(k: &DMatrix<f64>) -> DVector<f64> {
    let n = k.nrows();
    let mut d = DVector::from_element(n, 1.0);
    for _ in 0..10 {
        let mut done = true;
        for i in 0..n {
            let r = (0..n).fold(0.0f64, |r, j| r.max((k[(i, j)] * d[i] * d[j]).abs()));
            if r > 0.0 {
                if (r - 1.0).abs() > 1e-2 {
                    done = false;
                }
                d[i] /= r.sqrt();
            }
        }
        if done {
            break;
        }
    }
    d
}

/// Finds the smallest Hessian shift giving the primal-dual matrix the inertia
/// `(n, m, 0)`, adding a small dual shift when it is singular.
fn factorize(h: &DMatrix<f64>, j: &DMatrix<f64>, last_delta_w: f64, mu: f64) -> Option<(Kkt, f64)> {
    let n = h.nrows();
    let m = j.nrows();
    let try_factor = |delta_w: f64, delta_c: f64| {
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(h);
        for i in 0..n {
            k[(i, i)] += delta_w;
        }
        k.view_mut((n, 0), (m, n)).copy_from(j);
        k.view_mut((0, n), (n, m)).copy_from(&j.transpose());
        for i in 0..m {
            k[(n + i, n + i)] = -delta_c;
        }
        let d = equilibrate(&k);
        for a in 0..n + m {
            for b in 0..n + m {
                k[(a, b)] *= d[a] * d[b];
            }
        }
        let eig = k.symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(1.0);
        let (mut pos, mut neg) = (0, 0);
        for &l in eig.eigenvalues.iter() {
            if l > 1e-12 * scale {
                pos += 1;
            } else if l < -1e-12 * scale {
                neg += 1;
            }
        }
        let kkt = Kkt {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
            scale: d,
            n,
        };
        (kkt, pos, neg)
    };

    let mut delta_c = 0.0;
    let (mut kkt, mut pos, mut neg) = try_factor(0.0, 0.0);
    if pos + neg < n + m {
        delta_c = 1e-8 * mu.powf(0.25);
        (kkt, pos, neg) = try_factor(0.0, delta_c);
    }
    if pos == n && neg == m {
        return Some((kkt, 0.0));
    }
    let mut delta_w = if last_delta_w == 0.0 { 1e-4 } else { (last_delta_w / 3.0).max(1e-20) };
    let growth = if last_delta_w == 0.0 { 100.0 } else { 8.0 };
    loop {
        (kkt, pos, neg) = try_factor(delta_w, delta_c);
        if pos == n && neg == m {
            return Some((kkt, delta_w));
        }
        if pos + neg < n + m && delta_c == 0.0 {
            delta_c = 1e-8 * mu.powf(0.25);
            continue;
        }
        delta_w *= growth;
        if delta_w > 1e40 {
            return None;
        }
    }
}
