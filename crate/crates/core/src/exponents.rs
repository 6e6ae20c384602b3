//! Characteristic exponents of the marginal-value ODEs.
//!
//! In regime `i` the power `x^beta` solves the homogeneous marginal-value
//! equation when `Phi_i(beta) = 0`, with
//!
//! ```text
//! Phi_i(beta) = sigma^2/2 beta^2 + (mu_i + sigma^2/2) beta - (rho + q_i - mu_i)
//! ```
//!
//! `alpha` are the roots of `Phi_1`, `gamma` of `Phi_2` and `beta` the four
//! roots of the coupled quartic `Phi_1 Phi_2 = q_1 q_2`. The single-regime
//! exponents `delta` belong to the value `V` itself, so `delta - 1` are the
//! roots of `Phi` with zero switching rate.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::{Error, ModelParams, Result};

/// `Phi_i(beta)` for regime `i`.
pub fn phi(p: &ModelParams, i: usize, beta: f64) -> f64 {
    phi_coeffs(p, p.lambdas[i], p.q_out(i)).eval(beta)
}

/// Roots `(pos, neg)` of `Phi` with spread `drift_spread` and switching rate
/// `jump_rate`.
pub fn quadratic_exponents(p: &ModelParams, drift_spread: f64, jump_rate: f64) -> Result<(f64, f64)> {
    let quad = phi_coeffs(p, drift_spread, jump_rate);
    let (a, b, c) = (quad.0[2], quad.0[1], quad.0[0]);
    if c >= 0.0 {
        return Err(Error::Domain(format!(
            "rho + rate must exceed r - g + spread for opposite-sign exponents (constant term {c})"
        )));
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::Domain(format!("negative discriminant {disc}")));
    }
    // Avoid cancellation in the smaller-magnitude root.
    let t = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = (t / a, c / t);
    Ok((r1.max(r2), r1.min(r2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents1R {
    pub delta1: f64,
    pub delta2: f64,
}

impl Exponents1R {
    /// Exponents of `V` for a one-regime model.
    pub fn new(p: &ModelParams) -> Result<Self> {
        if p.n_regimes() != 1 {
            return Err(Error::Regimes {
                got: p.n_regimes(),
                need: "1",
            });
        }
        let s2 = p.sigma * p.sigma;
        let half = 0.5 - p.mu(0) / s2;
        let root = (half * half + 2.0 * p.rho / s2).sqrt();
        let e = Exponents1R {
            delta1: half + root,
            delta2: half - root,
        };
        if !(e.delta2 < 0.0 && e.delta1 > 1.0) {
            return Err(Error::Domain(format!(
                "single-regime exponents {e:?} lack the pattern delta2 < 0 < 1 < delta1"
            )));
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents2R {
    pub alpha: [f64; 2],
    pub gamma: [f64; 2],
    /// Sorted descending: `beta[3] < beta[2] < 0 < beta[1] < beta[0]`.
    pub betas: [f64; 4],
}

impl Exponents2R {
    /// All two-regime exponents, with their sign pattern checked.
    ///
    /// The positive roots also exceed 1 whenever the parameters pass strict
    /// validation; that is not enforced here because sweeps run in the
    /// relaxed regime where it can fail without harming the closed form.
    pub fn new(p: &ModelParams) -> Result<Self> {
        if p.n_regimes() != 2 {
            return Err(Error::Regimes {
                got: p.n_regimes(),
                need: "2",
            });
        }
        let (a1, a2) = quadratic_exponents(p, p.lambdas[0], p.q_out(0))?;
        let (g1, g2) = quadratic_exponents(p, p.lambdas[1], p.q_out(1))?;
        let betas = beta_roots(p)?;
        Ok(Exponents2R {
            alpha: [a1, a2],
            gamma: [g1, g2],
            betas,
        })
    }
}

/// The four real roots of `Phi_1(beta) Phi_2(beta) - q_1 q_2`, descending.
pub fn beta_roots(p: &ModelParams) -> Result<[f64; 4]> {
    if p.n_regimes() != 2 {
        return Err(Error::Regimes {
            got: p.n_regimes(),
            need: "2",
        });
    }
    let quartic = coupled_quartic(p);
    let c = &quartic.0;
    let lead = c[4];
    let mut companion = Matrix4::<f64>::zeros();
    for k in 0..3 {
        companion[(k + 1, k)] = 1.0;
    }
    for k in 0..4 {
        companion[(k, 3)] = -c[k] / lead;
    }
    let eig = companion.complex_eigenvalues();

    let mut roots = Vec::with_capacity(4);
    for z in eig.iter() {
        if z.im.abs() <= 1e-7 * (1.0 + z.re.abs()) {
            roots.push(quartic.polish(z.re));
        }
    }
    if roots.len() != 4 {
        return Err(Error::ComplexRoots { real: roots.len() });
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    let betas = [roots[0], roots[1], roots[2], roots[3]];
    if !(betas[3] < betas[2] && betas[2] < 0.0 && 0.0 < betas[1] && betas[1] < betas[0]) {
        return Err(Error::Domain(format!(
            "coupled exponents {betas:?} lack the pattern b4 < b3 < 0 < b2 < b1"
        )));
    }
    for &b in &betas {
        if quartic.eval(b).abs() > 1e-10 * quartic.scale(b) {
            return Err(Error::Domain(format!("quartic residual too large at {b}")));
        }
    }
    Ok(betas)
}

/// Polynomial with coefficients in increasing degree.
#[derive(Debug, Clone)]
pub(crate) struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn deriv(&self, x: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
    }

    /// Sum of the absolute monomials, the natural size of a residual at `x`.
    pub fn scale(&self, x: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| (c * x.powi(k as i32)).abs())
            .sum()
    }

    fn polish(&self, mut x: f64) -> f64 {
        for _ in 0..3 {
            let d = self.deriv(x);
            if d == 0.0 {
                break;
            }
            let step = self.eval(x) / d;
            x -= step;
            if step.abs() <= 1e-16 * x.abs() {
                break;
            }
        }
        x
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }
}

pub(crate) fn phi_coeffs(p: &ModelParams, spread: f64, rate: f64) -> Poly {
    let s2 = p.sigma * p.sigma;
    let mu = p.r - p.g + spread;
    Poly(vec![-(p.rho + rate - mu), mu + 0.5 * s2, 0.5 * s2])
}

pub(crate) fn coupled_quartic(p: &ModelParams) -> Poly {
    let f1 = phi_coeffs(p, p.lambdas[0], p.q_out(0));
    let f2 = phi_coeffs(p, p.lambdas[1], p.q_out(1));
    let mut prod = f1.mul(&f2);
    prod.0[0] -= p.q_out(0) * p.q_out(1);
    prod
}
