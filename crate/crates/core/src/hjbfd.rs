//! Finite-difference oracle for any number of regimes.
//!
//! Two independent problems are solved on the same grid:
//!
//! * the double-obstacle problem for the marginal value `v`,
//!   `c2 <= v <= c1` with `(L - (rho - mu_i)) v + x` zero between the
//!   obstacles, `<= 0` on `v = c2` and `>= 0` on `v = c1`;
//! * the gradient-constrained HJB for the value `V`,
//!   `min{(G - rho) V + x^2/2, V_x - c2, c1 - V_x} = 0`.
//!
//! Derivatives use the three-point formulas on the (possibly nonuniform)
//! grid. The first-order term is centred wherever that keeps the scheme
//! monotone and upwinded elsewhere.

use serde::{Deserialize, Serialize};

use crate::boundaries::{single_regime_bracket, Corridor};
use crate::linalg::Banded;
use crate::params::Policy;
use crate::{Error, ModelParams, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spacing {
    Uniform,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub m: usize,
    pub spacing: Spacing,
}

impl FdGrid {
    /// Grid up to three times the widest single-regime upper edge. Log grids
    /// start at `1e-3 x_max`, far below any lower edge; uniform grids at 0.
    pub fn for_params(p: &ModelParams, m: usize, spacing: Spacing) -> Result<Self> {
        let x_max = 3.0 * upper_bracket(p)?;
        let x_min = match spacing {
            Spacing::Uniform => 0.0,
            Spacing::Log => 1e-3 * x_max,
        };
        Ok(FdGrid {
            x_min,
            x_max,
            m,
            spacing,
        })
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.m - 1;
        match self.spacing {
            Spacing::Uniform => (0..self.m)
                .map(|k| self.x_min + (self.x_max - self.x_min) * k as f64 / n as f64)
                .collect(),
            Spacing::Log => {
                let (l0, l1) = (self.x_min.ln(), self.x_max.ln());
                (0..self.m).map(|k| (l0 + (l1 - l0) * k as f64 / n as f64).exp()).collect()
            }
        }
    }

    fn check(&self) -> Result<()> {
        let ok = self.m >= 500
            && self.x_max > self.x_min
            && self.x_min >= 0.0
            && (self.spacing == Spacing::Uniform || self.x_min > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("unusable grid {self:?} (need M >= 500, 0 <= x_min < x_max)")))
        }
    }
}

fn upper_bracket(p: &ModelParams) -> Result<f64> {
    let n = p.n_regimes();
    if n == 1 {
        return Ok(crate::boundaries::solve_single_regime_with(p, Policy::Relaxed)?.b);
    }
    Ok(single_regime_bracket(p, Policy::Relaxed)?[1].b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdKind {
    /// Marginal value `v` of the stopping game.
    Dynkin,
    /// Value `V` of the control problem.
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSolution {
    pub kind: FdKind,
    pub grid: FdGrid,
    pub x: Vec<f64>,
    /// `values[i][k]` is the solution in regime `i` at node `k`.
    pub values: Vec<Vec<f64>>,
    pub extracted: Option<Corridor>,
    pub complementarity_residual: f64,
    /// Relaxation sweeps (obstacle problem) or policy iterations (HJB).
    pub iterations: usize,
    pub c1: f64,
    pub c2: f64,
}

impl FdSolution {
    /// Three-point derivative of regime `i`'s solution; one-sided at the ends.
    pub fn derivative(&self, i: usize) -> Vec<f64> {
        let (x, v) = (&self.x, &self.values[i]);
        let m = x.len();
        (0..m)
            .map(|k| {
                if k == 0 {
                    (v[1] - v[0]) / (x[1] - x[0])
                } else if k == m - 1 {
                    (v[m - 1] - v[m - 2]) / (x[m - 1] - x[m - 2])
                } else {
                    let (hm, hp) = (x[k] - x[k - 1], x[k + 1] - x[k]);
                    (-hp / (hm * (hm + hp))) * v[k - 1]
                        + ((hp - hm) / (hm * hp)) * v[k]
                        + (hm / (hp * (hm + hp))) * v[k + 1]
                }
            })
            .collect()
    }

    /// Largest spacing of the grid.
    pub fn max_spacing(&self) -> f64 {
        self.x.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Coefficients of `d v'' + b v'` at an interior node: weights on the left
/// and right neighbours (the centre weight is minus their sum).
fn stencil(xm: f64, x: f64, xp: f64, diff: f64, drift: f64) -> (f64, f64) {
    let (hm, hp) = (x - xm, xp - x);
    let s = hm + hp;
    let lo = 2.0 * diff / (hm * s) - drift * hp / (hm * s);
    let up = 2.0 * diff / (hp * s) + drift * hm / (hp * s);
    if lo >= 0.0 && up >= 0.0 {
        return (lo, up);
    }
    if drift > 0.0 {
        (2.0 * diff / (hm * s), 2.0 * diff / (hp * s) + drift / hp)
    } else {
        (2.0 * diff / (hm * s) - drift / hm, 2.0 * diff / (hp * s))
    }
}

/// Assembled operator `sum lo v_{k-1} + up v_{k+1} - diag v_k + coupling`,
/// with `diag` including the discount and the total switching rate.
struct Operator {
    n: usize,
    m: usize,
    lo: Vec<f64>,
    up: Vec<f64>,
    diag: Vec<f64>,
    q: Vec<Vec<f64>>,
}

impl Operator {
    /// `drift_shift` is added to `mu_i` in the drift; `discount(i)` is the
    /// zero-order rate.
    fn new(p: &ModelParams, x: &[f64], drift_shift: f64, discount: impl Fn(usize) -> f64) -> Self {
        let n = p.n_regimes();
        let m = x.len();
        let s2 = p.sigma * p.sigma;
        let mut lo = vec![0.0; n * m];
        let mut up = vec![0.0; n * m];
        let mut diag = vec![0.0; n * m];
        for i in 0..n {
            let mu = p.mu(i) + drift_shift;
            for k in 1..m - 1 {
                let (l, u) = stencil(x[k - 1], x[k], x[k + 1], 0.5 * s2 * x[k] * x[k], mu * x[k]);
                let idx = k * n + i;
                lo[idx] = l;
                up[idx] = u;
                diag[idx] = l + u + p.q_out(i) + discount(i);
            }
        }
        Operator {
            n,
            m,
            lo,
            up,
            diag,
            q: p.q.clone(),
        }
    }

    /// `(A v)` at node `k`, regime `i`, where `A = diag - neighbours - coupling`
    /// so that the equation reads `A v = source`.
    fn apply(&self, v: &[f64], k: usize, i: usize) -> f64 {
        let (n, idx) = (self.n, k * self.n + i);
        let mut s = self.diag[idx] * v[idx] - self.lo[idx] * v[idx - n] - self.up[idx] * v[idx + n];
        for j in 0..n {
            if j != i {
                s -= self.q[i][j] * v[k * n + j];
            }
        }
        s
    }

    fn add_row(&self, mat: &mut Banded, k: usize, i: usize) {
        let (n, idx) = (self.n, k * self.n + i);
        mat.add(idx, idx, self.diag[idx]);
        mat.add(idx, idx - n, -self.lo[idx]);
        mat.add(idx, idx + n, -self.up[idx]);
        for j in 0..n {
            if j != i {
                mat.add(idx, k * n + j, -self.q[i][j]);
            }
        }
    }
}

const SWEEP_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 200_000;
const OMEGA: f64 = 1.9;

/// Obstacle problem for `v` by projected SOR, finished with an exact
/// active-set solve.
pub fn solve_dynkin_fd(p: &ModelParams, grid: &FdGrid) -> Result<FdSolution> {
    p.require_valid(Policy::Relaxed)?;
    grid.check()?;
    let x = grid.nodes();
    let (n, m) = (p.n_regimes(), x.len());
    let op = Operator::new(p, &x, p.sigma * p.sigma, |i| p.discount_gap(i));
    let (c1, c2) = (p.c1, p.c2);

    let mut v = vec![0.0; n * m];
    for k in 0..m {
        let guess = (c2 + (c1 - c2) * (x[k] - x[0]) / (x[m - 1] - x[0])).clamp(c2, c1);
        for i in 0..n {
            v[k * n + i] = guess;
        }
    }
    for i in 0..n {
        v[i] = c2;
        v[(m - 1) * n + i] = c1;
    }

    let mut sweeps = 0;
    loop {
        let mut change: f64 = 0.0;
        for k in 1..m - 1 {
            for i in 0..n {
                let idx = k * n + i;
                let resid = x[k] - op.apply(&v, k, i);
                let gs = v[idx] + resid / op.diag[idx];
                let new = (v[idx] + OMEGA * (gs - v[idx])).clamp(c2, c1);
                change = change.max((new - v[idx]).abs());
                v[idx] = new;
            }
        }
        sweeps += 1;
        if change < SWEEP_TOL {
            break;
        }
        if sweeps >= MAX_SWEEPS || !change.is_finite() {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                residual: change,
                last: Vec::new(),
            });
        }
    }

    polish_obstacle(&op, &x, &mut v, c1, c2);
    let residual = obstacle_residual(&op, &x, &v, c1, c2);

    let mut sol = FdSolution {
        kind: FdKind::Dynkin,
        grid: *grid,
        x,
        values: split(&v, n, m),
        extracted: None,
        complementarity_residual: residual,
        iterations: sweeps,
        c1,
        c2,
    };
    let lo = sol.values.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = sol.values.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if lo < c2 - 1e-8 || hi > c1 + 1e-8 {
        return Err(Error::Domain(format!("obstacle violated: v in [{lo}, {hi}]")));
    }
    sol.extracted = Some(extract_corridor(&sol)?);
    Ok(sol)
}

fn split(v: &[f64], n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..m).map(|k| v[k * n + i]).collect()).collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Branch {
    Lower,
    Free,
    Upper,
}

/// `max(min(-F, v - c2), v - c1)` with `F = x - A v`: zero exactly at a
/// discrete solution of the obstacle problem.
fn obstacle_branch(op: &Operator, x: &[f64], v: &[f64], k: usize, i: usize, c1: f64, c2: f64) -> (Branch, f64) {
    let idx = k * op.n + i;
    let neg_f = op.apply(v, k, i) - x[k];
    let (b, inner) = if v[idx] - c2 < neg_f {
        (Branch::Lower, v[idx] - c2)
    } else {
        (Branch::Free, neg_f)
    };
    if v[idx] - c1 >= inner {
        (Branch::Upper, v[idx] - c1)
    } else {
        (b, inner)
    }
}

fn obstacle_residual(op: &Operator, x: &[f64], v: &[f64], c1: f64, c2: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 1..op.m - 1 {
        for i in 0..op.n {
            worst = worst.max(obstacle_branch(op, x, v, k, i, c1, c2).1.abs());
        }
    }
    worst
}

/// Semismooth Newton on the min-max form: freeze which branch is active at
/// each node, solve that linear system exactly, repeat until the branches
/// stop changing. Started from the relaxation result it settles in a few
/// steps; if it ever fails to improve, the relaxation result is kept.
fn polish_obstacle(op: &Operator, x: &[f64], v: &mut Vec<f64>, c1: f64, c2: f64) {
    let (n, m) = (op.n, op.m);
    let mut best = obstacle_residual(op, x, v, c1, c2);
    for _ in 0..50 {
        let branches: Vec<Branch> = (0..n * m)
            .map(|idx| {
                let (k, i) = (idx / n, idx % n);
                if k == 0 {
                    Branch::Lower
                } else if k == m - 1 {
                    Branch::Upper
                } else {
                    obstacle_branch(op, x, v, k, i, c1, c2).0
                }
            })
            .collect();
        let mut mat = Banded::new(n * m, n, n);
        let mut rhs = vec![0.0; n * m];
        for (idx, b) in branches.iter().enumerate() {
            let (k, i) = (idx / n, idx % n);
            match b {
                Branch::Lower => {
                    mat.add(idx, idx, 1.0);
                    rhs[idx] = c2;
                }
                Branch::Upper => {
                    mat.add(idx, idx, 1.0);
                    rhs[idx] = c1;
                }
                Branch::Free => {
                    op.add_row(&mut mat, k, i);
                    rhs[idx] = x[k];
                }
            }
        }
        let Some(next) = mat.solve(rhs) else { return };
        let res = obstacle_residual(op, x, &next, c1, c2);
        // Stop on no progress, and on NaN.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(res < best) {
            return;
        }
        best = res;
        let settled = next.iter().zip(v.iter()).all(|(a, b)| a == b);
        *v = next;
        if settled || best == 0.0 {
            return;
        }
    }
}

/// Corridor read off an obstacle solution: per regime, `a(i)` at the end of
/// the lower contact set `v <= c2 + eps` and `b(i)` at the start of the upper
/// one `v >= c1 - eps`, each refined by linear interpolation across the
/// first cell outside the contact set. `eps = 1e-7 c1`.
pub fn extract_corridor(sol: &FdSolution) -> Result<Corridor> {
    let eps = 1e-7 * sol.c1;
    let x = &sol.x;
    let m = x.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, v) in sol.values.iter().enumerate() {
        let lower = v.iter().take_while(|&&vk| vk <= sol.c2 + eps).count();
        if lower == 0 || lower == m {
            return Err(Error::EmptyContact { regime: i + 1, which: "lower" });
        }
        let k = lower - 1;
        let (e0, e1) = (v[k] - sol.c2, v[k + 1] - sol.c2);
        a.push(x[k] + (x[k + 1] - x[k]) * ((eps - e0) / (e1 - e0)).clamp(0.0, 1.0));

        let upper = v.iter().rev().take_while(|&&vk| vk >= sol.c1 - eps).count();
        if upper == 0 || upper == m {
            return Err(Error::EmptyContact { regime: i + 1, which: "upper" });
        }
        let k = m - upper;
        let (e0, e1) = (sol.c1 - v[k - 1], sol.c1 - v[k]);
        b.push(x[k] - (x[k] - x[k - 1]) * ((eps - e1) / (e0 - e1)).clamp(0.0, 1.0));
    }
    Ok(Corridor::new(a, b))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Action {
    /// Running-cost equation.
    Wait,
    /// `V_x = c2` by a forward difference.
    Raise,
    /// `V_x = c1` by a backward difference.
    Cut,
}

/// HJB for `V` by policy iteration over the three branches.
pub fn solve_control_fd(p: &ModelParams, grid: &FdGrid) -> Result<FdSolution> {
    p.require_valid(Policy::Relaxed)?;
    grid.check()?;
    let x = grid.nodes();
    let (n, m) = (p.n_regimes(), x.len());
    let op = Operator::new(p, &x, 0.0, |_| p.rho);
    let (c1, c2) = (p.c1, p.c2);
    let h: Vec<f64> = x.iter().map(|&xk| ModelParams::running_cost(xk)).collect();

    let terms = |v: &[f64], k: usize, i: usize| -> [f64; 3] {
        let idx = k * n + i;
        let pde = if k == 0 || k == m - 1 {
            f64::NEG_INFINITY
        } else {
            op.apply(v, k, i) - h[k]
        };
        let raise = if k < m - 1 {
            c2 - (v[idx + n] - v[idx]) / (x[k + 1] - x[k])
        } else {
            f64::NEG_INFINITY
        };
        let cut = if k > 0 {
            (v[idx] - v[idx - n]) / (x[k] - x[k - 1]) - c1
        } else {
            f64::NEG_INFINITY
        };
        [pde, raise, cut]
    };

    let mut actions: Vec<Action> = (0..n * m)
        .map(|idx| match idx / n {
            0 => Action::Raise,
            k if k == m - 1 => Action::Cut,
            _ => Action::Wait,
        })
        .collect();
    let mut v = vec![0.0; n * m];
    let mut iterations = 0;
    loop {
        let mut mat = Banded::new(n * m, n, n);
        let mut rhs = vec![0.0; n * m];
        for (idx, act) in actions.iter().enumerate() {
            let (k, i) = (idx / n, idx % n);
            match act {
                Action::Wait => {
                    op.add_row(&mut mat, k, i);
                    rhs[idx] = h[k];
                }
                Action::Raise => {
                    mat.add(idx, idx, 1.0);
                    mat.add(idx, idx + n, -1.0);
                    rhs[idx] = -c2 * (x[k + 1] - x[k]);
                }
                Action::Cut => {
                    mat.add(idx, idx, 1.0);
                    mat.add(idx, idx - n, -1.0);
                    rhs[idx] = c1 * (x[k] - x[k - 1]);
                }
            }
        }
        v = mat.solve(rhs).ok_or(Error::Singular("policy system"))?;
        iterations += 1;

        let mut next = actions.clone();
        for (idx, act) in next.iter_mut().enumerate() {
            let (k, i) = (idx / n, idx % n);
            let t = terms(&v, k, i);
            let current = match act {
                Action::Wait => t[0],
                Action::Raise => t[1],
                Action::Cut => t[2],
            };
            // Switch only on a strict improvement so ties cannot cycle.
            *act = [(Action::Wait, t[0]), (Action::Raise, t[1]), (Action::Cut, t[2])]
                .into_iter()
                .fold((*act, current), |acc, c| if c.1 > acc.1 + 1e-13 { c } else { acc })
                .0;
        }
        // A raise pointing at a cut would make the policy system singular.
        for k in 0..m - 1 {
            for i in 0..n {
                if next[k * n + i] == Action::Raise && next[(k + 1) * n + i] == Action::Cut {
                    if k > 0 {
                        next[k * n + i] = Action::Wait;
                    }
                    if k + 1 < m - 1 {
                        next[(k + 1) * n + i] = Action::Wait;
                    }
                }
            }
        }
        if next == actions {
            break;
        }
        if iterations >= 500 {
            return Err(Error::NoConvergence {
                iterations,
                residual: f64::NAN,
                last: Vec::new(),
            });
        }
        actions = next;
    }

    let mut residual: f64 = 0.0;
    for k in 1..m - 1 {
        for i in 0..n {
            let t = terms(&v, k, i);
            residual = residual.max(t.iter().copied().fold(f64::NEG_INFINITY, f64::max).abs());
        }
    }
    Ok(FdSolution {
        kind: FdKind::Control,
        grid: *grid,
        x,
        values: split(&v, n, m),
        extracted: None,
        complementarity_residual: residual,
        iterations,
        c1,
        c2,
    })
}
