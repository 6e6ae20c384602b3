//! Smooth-fit solvers for the optimal corridor.
//!
//! One regime: two equations in `(a, b)`. Two regimes: four equations in
//! `(a(1), b(1), a(2), b(2))` that glue the A-, B- and C-pieces of
//! [`crate::valuefn`] together with matching value and slope. Both are
//! solved by damped Newton in variables that keep the corridor ordered.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::exponents::Exponents1R;
use crate::params::Policy;
use crate::valuefn::{self, PiecewiseValue};
use crate::{Error, Exponents2R, ModelParams, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Corridor {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(a.len(), b.len(), "corridor edges must have one entry per regime");
        Corridor { a, b }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| b - a).collect()
    }

    /// `0 < a(1) <= .. <= a(N) < b(1) <= .. <= b(N)`.
    pub fn is_ordered(&self) -> bool {
        let n = self.n();
        n > 0
            && self.a[0] > 0.0
            && self.a.windows(2).all(|w| w[0] <= w[1])
            && self.b.windows(2).all(|w| w[0] <= w[1])
            && self.a[n - 1] < self.b[0]
    }

    pub fn check_order(&self) -> Result<()> {
        if self.is_ordered() {
            Ok(())
        } else {
            Err(Error::Ordering {
                a: self.a.clone(),
                b: self.b.clone(),
            })
        }
    }

    /// Two-regime corridor in the solver's unknown order `(a1, b1, a2, b2)`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.a[0], self.b[0], self.a[1], self.b[1]]
    }

    pub fn from_array(z: [f64; 4]) -> Self {
        Corridor::new(vec![z[0], z[2]], vec![z[1], z[3]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub passed: bool,
    /// Smallest slack over the grid; negative means violated.
    pub worst_margin: f64,
    pub worst_x: f64,
    pub worst_regime: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleRegimeSolution {
    pub a: f64,
    pub b: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// Newton from the initial guess.
    Direct,
    /// Continuation in the switching intensities from the decoupled problem.
    Homotopy,
    /// Newton from a perturbed initial guess.
    Jitter(usize),
    /// Equal spreads: the single-regime corridor serves both regimes.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub corridor: Corridor,
    pub residual_norm: f64,
    pub iterations: usize,
    pub constraints: ConstraintReport,
    pub route: Route,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    /// Relaxed validation demotes the second-moment bound to a warning.
    pub relaxed: bool,
    /// Starting corridor; defaults to the single-regime bracket.
    pub initial: Option<Corridor>,
    /// Return a converged corridor even when the inequality check fails.
    pub skip_constraints: bool,
}

impl SolveOptions {
    fn policy(&self) -> Policy {
        if self.relaxed {
            Policy::Relaxed
        } else {
            Policy::Strict
        }
    }
}

const MAX_ITER: usize = 200;
const TOL_SINGLE: f64 = 1e-12;
const TOL_TWO: f64 = 1e-10;
const STALL_STEP: f64 = 1e-12;
const STALL_NORM: f64 = 1e-6;

struct NewtonOutcome {
    u: DVector<f64>,
    norm: f64,
    iterations: usize,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Central-difference Jacobian with step `1e-7 max(1, |u_k|)`.
fn fd_jacobian<F>(f: &F, u: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let n = u.len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut up = u.clone();
        let mut dn = u.clone();
        let h = 1e-7 * u[k].abs().max(1.0);
        up[k] += h;
        dn[k] -= h;
        let col = (f(&up)? - f(&dn)?) / (2.0 * h);
        jac.set_column(k, &col);
    }
    Some(jac)
}

/// Damped Newton: full step, halved up to 30 times until the residual
/// norm decreases.
fn damped_newton<F>(f: F, u0: DVector<f64>, tol: f64) -> Result<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let fail = |u: &DVector<f64>, it: usize, norm: f64| Error::NoConvergence {
        iterations: it,
        residual: norm,
        last: u.iter().copied().collect(),
    };
    let mut u = u0;
    let mut r = f(&u).ok_or_else(|| fail(&u, 0, f64::NAN))?;
    let mut norm = inf_norm(&r);
    for it in 0..MAX_ITER {
        if norm < tol {
            return Ok(NewtonOutcome { u, norm, iterations: it });
        }
        let jac = fd_jacobian(&f, &u).ok_or_else(|| fail(&u, it, norm))?;
        let step = jac.lu().solve(&(-&r)).ok_or_else(|| fail(&u, it, norm))?;
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &u + &step * lam;
            if let Some(rt) = f(&trial) {
                let nt = inf_norm(&rt);
                if nt < norm {
                    u = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            // A stalled line search at the noise floor still counts as
            // converged if the residual is already tiny.
            // So does a Newton step at rounding level: with large exponents
            // the residual floor sits above tol even at the true root.
            if norm < tol * 10.0 || (inf_norm(&step) < STALL_STEP && norm < STALL_NORM) {
                return Ok(NewtonOutcome { u, norm, iterations: it });
            }
            return Err(fail(&u, it, norm));
        }
    }
    if norm < tol {
        Ok(NewtonOutcome {
            u,
            norm,
            iterations: MAX_ITER,
        })
    } else {
        Err(fail(&u, MAX_ITER, norm))
    }
}

/// Scaled residuals of `J_{1,2}(a) = J_{1,1}(b)` and `J_{2,2}(a) = J_{2,1}(b)`,
/// with the power factors moved across so that both sides stay O(1).
fn single_residuals(p: &ModelParams, e: &Exponents1R, a: f64, b: f64) -> [f64; 2] {
    let k = p.rho - 2.0 * p.mu(0) - p.sigma * p.sigma;
    let (d1, d2) = (e.delta1, e.delta2);
    let n = |d: f64, x: f64, c: f64| (d - 2.0) * x - c * (d - 1.0) * k;
    let s1 = (d1 - 2.0).abs() * b + p.c1 * (d1 - 1.0).abs() * k.abs();
    let s2 = (d2 - 2.0).abs() * b + p.c1 * (d2 - 1.0).abs() * k.abs();
    [
        (n(d1, a, p.c2) * (b / a).powf(d2 - 1.0) - n(d1, b, p.c1)) / s1,
        (n(d2, a, p.c2) - n(d2, b, p.c1) * (a / b).powf(d1 - 1.0)) / s2,
    ]
}

/// Residuals of the two single-regime smooth-fit equations at `(a, b)`.
pub fn single_regime_residuals(p: &ModelParams, a: f64, b: f64) -> Result<[f64; 2]> {
    let e = Exponents1R::new(p)?;
    Ok(single_residuals(p, &e, a, b))
}

/// Corridor of the one-regime problem.
pub fn solve_single_regime(p: &ModelParams) -> Result<SingleRegimeSolution> {
    solve_single_regime_with(p, Policy::Strict)
}

pub fn solve_single_regime_with(p: &ModelParams, policy: Policy) -> Result<SingleRegimeSolution> {
    p.require_valid(policy)?;
    let e = Exponents1R::new(p)?;
    let gap = p.discount_gap(0);
    let (a0, b0) = (p.c2 * gap, p.c1 * gap);
    let f = |u: &DVector<f64>| {
        let a = u[0].exp();
        let b = a + u[1].exp();
        let r = single_residuals(p, &e, a, b);
        r.iter().all(|v| v.is_finite()).then(|| DVector::from_column_slice(&r))
    };
    let mut last = None;
    // The bracket endpoints are a good start; shrink a and stretch b if not.
    for (sa, sb) in [(1.0, 1.0), (0.5, 1.5), (0.25, 2.0), (0.8, 1.1)] {
        let (a, b) = (a0 * sa, b0 * sb);
        let u0 = DVector::from_column_slice(&[a.ln(), (b - a).ln()]);
        match damped_newton(f, u0, TOL_SINGLE) {
            Ok(out) => {
                let a = out.u[0].exp();
                return Ok(SingleRegimeSolution {
                    a,
                    b: a + out.u[1].exp(),
                    residual_norm: out.norm,
                    iterations: out.iterations,
                });
            }
            Err(err) => last = Some(err),
        }
    }
    Err(last.expect("at least one start"))
}

/// The four smooth-fit residuals, divided by `c1`: value and `x`-scaled
/// slope mismatch between the A- and B-pieces of regime 1 at `a(2)`, then
/// between the C- and B-pieces of regime 2 at `b(1)`.
pub fn residuals(p: &ModelParams, e: &Exponents2R, candidate: &Corridor) -> Result<[f64; 4]> {
    if !candidate.is_ordered() {
        return Err(Error::Ordering {
            a: candidate.a.clone(),
            b: candidate.b.clone(),
        });
    }
    let pw = valuefn::build_with(p, e, candidate)?;
    let (a2, b1) = (candidate.a[1], candidate.b[0]);
    let [m1, m2] = &pw.b_pieces;
    let (lo, hi) = (&pw.a_piece, &pw.c_piece);
    Ok([
        (lo.value(a2) - m1.value(a2)) / p.c1,
        a2 * (lo.deriv(a2) - m1.deriv(a2)) / p.c1,
        (hi.value(b1) - m2.value(b1)) / p.c1,
        b1 * (hi.deriv(b1) - m2.deriv(b1)) / p.c1,
    ])
}

/// Ordered unknowns `(ln a1, ln(a2 - a1), ln(b1 - a2), ln(b2 - b1))`.
fn to_unknowns(c: &Corridor) -> DVector<f64> {
    let [a1, b1, a2, b2] = c.to_array();
    DVector::from_column_slice(&[a1.ln(), (a2 - a1).ln(), (b1 - a2).ln(), (b2 - b1).ln()])
}

fn from_unknowns(u: &DVector<f64>) -> Corridor {
    let a1 = u[0].exp();
    let a2 = a1 + u[1].exp();
    let b1 = a2 + u[2].exp();
    let b2 = b1 + u[3].exp();
    Corridor::from_array([a1, b1, a2, b2])
}

/// Jacobian of [`residuals`] with respect to `(a1, b1, a2, b2)`, by central
/// differences.
pub fn residual_jacobian(p: &ModelParams, e: &Exponents2R, c: &Corridor) -> Result<[[f64; 4]; 4]> {
    let f = |z: &DVector<f64>| {
        residuals(p, e, &Corridor::from_array([z[0], z[1], z[2], z[3]]))
            .ok()
            .map(|r| DVector::from_column_slice(&r))
    };
    let z = DVector::from_column_slice(&c.to_array());
    let mut jac = [[0.0; 4]; 4];
    for k in 0..4 {
        let h = 1e-7 * z[k];
        let (mut up, mut dn) = (z.clone(), z.clone());
        up[k] += h;
        dn[k] -= h;
        let col = (f(&up).ok_or(Error::Singular("jacobian probe"))? - f(&dn).ok_or(Error::Singular("jacobian probe"))?)
            / (2.0 * h);
        for (r, row) in jac.iter_mut().enumerate() {
            row[k] = col[r];
        }
    }
    Ok(jac)
}

fn newton_two(p: &ModelParams, e: &Exponents2R, start: &Corridor) -> Result<NewtonOutcome> {
    let f = |u: &DVector<f64>| {
        let r = residuals(p, e, &from_unknowns(u)).ok()?;
        r.iter().all(|v| v.is_finite()).then(|| DVector::from_column_slice(&r))
    };
    damped_newton(f, to_unknowns(start), TOL_TWO)
}

/// The two single-regime corridors at the extreme spreads.
pub fn single_regime_bracket(p: &ModelParams, policy: Policy) -> Result<[SingleRegimeSolution; 2]> {
    let n = p.n_regimes();
    Ok([
        solve_single_regime_with(&p.uncoupled(0), policy)?,
        solve_single_regime_with(&p.uncoupled(n - 1), policy)?,
    ])
}

/// Optimal two-regime corridor.
pub fn solve_two_regime(p: &ModelParams) -> Result<SolveReport> {
    solve_two_regime_with(p, &SolveOptions::default())
}

pub fn solve_two_regime_with(p: &ModelParams, opts: &SolveOptions) -> Result<SolveReport> {
    if p.n_regimes() != 2 {
        return Err(Error::Regimes {
            got: p.n_regimes(),
            need: "2",
        });
    }
    p.require_valid(opts.policy())?;

    if (p.lambdas[0] - p.lambdas[1]).abs() < 1e-10 {
        return solve_degenerate(p, opts);
    }

    let e = Exponents2R::new(p)?;
    let start = match &opts.initial {
        Some(c) => c.clone(),
        None => {
            let [lo, hi] = single_regime_bracket(p, opts.policy())?;
            Corridor::from_array([lo.a, lo.b, hi.a, hi.b])
        }
    };

    let mut last_err = None;
    let mut accept = |out: NewtonOutcome, route: Route| -> Option<SolveReport> {
        let corridor = from_unknowns(&out.u);
        let pw = match valuefn::build_with(p, &e, &corridor) {
            Ok(pw) => pw,
            Err(err) => {
                last_err = Some(err);
                return None;
            }
        };
        let constraints = check_inequalities(p, &pw);
        if !constraints.passed && !opts.skip_constraints {
            last_err = Some(Error::Constraints {
                worst_margin: constraints.worst_margin,
            });
            return None;
        }
        Some(SolveReport {
            corridor,
            residual_norm: out.norm,
            iterations: out.iterations,
            constraints,
            route,
        })
    };

    let mut newton_err = None;
    match newton_two(p, &e, &start) {
        Ok(out) => {
            if let Some(rep) = accept(out, Route::Direct) {
                return Ok(rep);
            }
        }
        Err(err) => newton_err = Some(err),
    }
    match homotopy(p, opts.policy()) {
        Ok(out) => {
            if let Some(rep) = accept(out, Route::Homotopy) {
                return Ok(rep);
            }
        }
        Err(err) => newton_err = newton_err.or(Some(err)),
    }
    let u0 = to_unknowns(&start);
    for k in 0..8 {
        let mut u = u0.clone();
        for (j, uj) in u.iter_mut().enumerate() {
            // Deterministic +-0.1..0.4 log-offsets, a different sign pattern each try.
            let sign = if (k >> (j % 3)) & 1 == 0 { 1.0 } else { -1.0 };
            *uj += sign * 0.1 * (1 + (k + j) % 4) as f64;
        }
        if let Ok(out) = damped_newton(
            |v: &DVector<f64>| {
                let r = residuals(p, &e, &from_unknowns(v)).ok()?;
                r.iter().all(|x| x.is_finite()).then(|| DVector::from_column_slice(&r))
            },
            u,
            TOL_TWO,
        ) {
            if let Some(rep) = accept(out, Route::Jitter(k)) {
                return Ok(rep);
            }
        }
    }
    Err(last_err.or(newton_err).expect("some attempt failed"))
}

/// Continuation in a factor `s` on the generator, from the decoupled
/// problem (`s -> 0`, where the single-regime corridors are exact) to `s = 1`.
fn homotopy(p: &ModelParams, policy: Policy) -> Result<NewtonOutcome> {
    let [lo, hi] = single_regime_bracket(p, policy)?;
    let mut corridor = Corridor::from_array([lo.a, lo.b, hi.a, hi.b]);
    let scaled = |s: f64| {
        let mut ps = p.clone();
        for row in ps.q.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        ps
    };
    let mut s = 1e-4;
    let mut factor: f64 = 4.0;
    let mut total_iters = 0;
    loop {
        let ps = scaled(s);
        let out = Exponents2R::new(&ps).and_then(|e| newton_two(&ps, &e, &corridor));
        match out {
            Ok(out) => {
                total_iters += out.iterations;
                corridor = from_unknowns(&out.u);
                if s >= 1.0 {
                    return Ok(NewtonOutcome {
                        iterations: total_iters,
                        ..out
                    });
                }
                s = (s * factor).min(1.0);
            }
            Err(err) => {
                // Back off and retry with a smaller step.
                let prev = s / factor;
                factor = factor.sqrt();
                if factor < 1.001 {
                    return Err(err);
                }
                s = (prev * factor).min(1.0);
            }
        }
    }
}

fn solve_degenerate(p: &ModelParams, opts: &SolveOptions) -> Result<SolveReport> {
    let one = solve_single_regime_with(&p.uncoupled(0), opts.policy())?;
    let corridor = Corridor::new(vec![one.a, one.a], vec![one.b, one.b]);
    let pw = valuefn::build_piecewise(p, &corridor)?;
    let constraints = check_inequalities(p, &pw);
    if !constraints.passed && !opts.skip_constraints {
        return Err(Error::Constraints {
            worst_margin: constraints.worst_margin,
        });
    }
    Ok(SolveReport {
        corridor,
        residual_norm: one.residual_norm,
        iterations: one.iterations,
        constraints,
        route: Route::Degenerate,
    })
}

/// Check, on a 2000-point grid over `(0, 2 b(2)]`, that
///
/// * below `a(i)`: `x - (rho + q_i - mu_i) c2 + q_i v(x, j) <= 0`,
/// * above `b(i)`: `x - (rho + q_i - mu_i) c1 + q_i v(x, j) >= 0`,
/// * inside: `c2 <= v(x, i) <= c1`,
///
/// each up to `1e-9 c1`. The first two say stopping is optimal where the
/// corridor says so; the third that continuing is.
pub fn check_inequalities(p: &ModelParams, pw: &PiecewiseValue) -> ConstraintReport {
    let tol = 1e-9 * p.c1;
    let c = &pw.corridor;
    let top = 2.0 * c.b[1];
    let mut worst = (f64::INFINITY, 0.0, 0);
    for k in 1..=2000 {
        let x = top * k as f64 / 2000.0;
        for i in 0..2 {
            let j = 1 - i;
            let e = p.rho + p.q_out(i) - p.mu(i);
            let other = p.q_out(i) * pw.eval_v(x, j);
            let margin = if x < c.a[i] {
                -(x - e * p.c2 + other)
            } else if x > c.b[i] {
                x - e * p.c1 + other
            } else {
                let v = pw.eval_v(x, i);
                (v - p.c2).min(p.c1 - v)
            };
            if margin < worst.0 {
                worst = (margin, x, i);
            }
        }
    }
    ConstraintReport {
        passed: worst.0 >= -tol,
        worst_margin: worst.0,
        worst_x: worst.1,
        worst_regime: worst.2,
        tol,
    }
}
