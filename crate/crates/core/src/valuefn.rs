//! Closed-form marginal value `v = V_x` for two regimes, and the value `V`
//! for one regime.
//!
//! For two regimes with corridor `a(1) <= a(2) < b(1) <= b(2)` the marginal
//! value is piecewise:
//!
//! ```text
//!              x <= a1    (a1, a2]   (a2, b1]     (b1, b2]   > b2
//! regime 1:    c2         A-piece    B-piece(1)   c1         c1
//! regime 2:    c2         c2         B-piece(2)   C-piece    c1
//! ```
//!
//! The A- and C-pieces solve a single-regime equation with the other regime
//! frozen at an obstacle; the B-pieces solve the coupled system and share
//! four exponents `beta`, with regime-2 coefficients `w_k B_k`.

use serde::{Deserialize, Serialize};

use crate::boundaries::Corridor;
use crate::exponents::{phi, Exponents1R, Exponents2R};
use crate::{Error, ModelParams, Result};

/// `sum_k coef[k] (x/anchor)^expo[k] + slope x + constant` on `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub anchor: f64,
    pub coef: Vec<f64>,
    pub expo: Vec<f64>,
    pub slope: f64,
    pub constant: f64,
}

impl Piece {
    pub fn value(&self, x: f64) -> f64 {
        let s = x / self.anchor;
        let h: f64 = self.coef.iter().zip(&self.expo).map(|(c, e)| c * s.powf(*e)).sum();
        h + self.slope * x + self.constant
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let s = x / self.anchor;
        let h: f64 = self.coef.iter().zip(&self.expo).map(|(c, e)| c * e * s.powf(*e)).sum();
        h / x + self.slope
    }

    pub fn second(&self, x: f64) -> f64 {
        let s = x / self.anchor;
        let h: f64 = self
            .coef
            .iter()
            .zip(&self.expo)
            .map(|(c, e)| c * e * (e - 1.0) * s.powf(*e))
            .sum();
        h / (x * x)
    }

    /// Coefficients on the bare powers `x^expo[k]`.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.expo)
            .map(|(c, e)| c * self.anchor.powf(-e))
            .collect()
    }

    fn contains(&self, x: f64) -> bool {
        x > self.lo && x <= self.hi
    }
}

/// Denominators shared by the particular solutions.
#[derive(Debug, Clone, Copy)]
struct Denoms {
    /// `rho + q_i - 2 mu_i - sigma^2`: slope of the particular solution with
    /// the other regime frozen.
    d: [f64; 2],
    /// `rho + q_i - mu_i`: constant of that particular solution divided by
    /// `q_i c`.
    e: [f64; 2],
    /// Slopes of the coupled particular solution.
    k: [f64; 2],
}

impl Denoms {
    fn new(p: &ModelParams) -> Result<Self> {
        let s2 = p.sigma * p.sigma;
        let q = [p.q_out(0), p.q_out(1)];
        let d = [0, 1].map(|i| p.rho + q[i] - 2.0 * p.mu(i) - s2);
        let e = [0, 1].map(|i| p.rho + q[i] - p.mu(i));
        let den = d[0] * d[1] - q[0] * q[1];
        let tiny = 1e-14 * (p.rho + q[0] + q[1]);
        if d.iter().chain(&e).any(|v| v.abs() < tiny) || den.abs() < tiny * tiny {
            return Err(Error::Singular("particular-solution denominator vanishes"));
        }
        let k = [(d[1] + q[0]) / den, (d[0] + q[1]) / den];
        Ok(Denoms { d, e, k })
    }
}

/// Scaled coefficients of `p1 (x/x0)^e1 + p2 (x/x0)^e2 + x/d + k` hitting
/// value `target` with zero slope at `x0`.
fn fit_quadratic_piece(x0: f64, exps: [f64; 2], d: f64, k: f64, target: f64) -> [f64; 2] {
    let rest = target - k - x0 / d;
    let lin = x0 / d;
    let [e1, e2] = exps;
    [(-lin - e2 * rest) / (e1 - e2), (e1 * rest + lin) / (e1 - e2)]
}

fn a_piece(p: &ModelParams, e: &Exponents2R, a1: f64, hi: f64) -> Result<Piece> {
    let dn = Denoms::new(p)?;
    let constant = p.q_out(0) * p.c2 / dn.e[0];
    let coef = fit_quadratic_piece(a1, e.alpha, dn.d[0], constant, p.c2);
    Ok(Piece {
        lo: a1,
        hi,
        anchor: a1,
        coef: coef.to_vec(),
        expo: e.alpha.to_vec(),
        slope: 1.0 / dn.d[0],
        constant,
    })
}

fn c_piece(p: &ModelParams, e: &Exponents2R, lo: f64, b2: f64) -> Result<Piece> {
    let dn = Denoms::new(p)?;
    let constant = p.q_out(1) * p.c1 / dn.e[1];
    let coef = fit_quadratic_piece(b2, e.gamma, dn.d[1], constant, p.c1);
    Ok(Piece {
        lo,
        hi: b2,
        anchor: b2,
        coef: coef.to_vec(),
        expo: e.gamma.to_vec(),
        slope: 1.0 / dn.d[1],
        constant,
    })
}

/// Coefficients `(A1, A2)` of the regime-1 piece on `(a(1), a(2)]`, on the
/// bare powers `x^alpha_i`.
pub fn coeffs_a(p: &ModelParams, e: &Exponents2R, a1: f64) -> Result<[f64; 2]> {
    let piece = a_piece(p, e, a1, a1)?;
    let raw = piece.raw_coefficients();
    Ok([raw[0], raw[1]])
}

/// Coefficients `(C1, C2)` of the regime-2 piece on `(b(1), b(2)]`.
pub fn coeffs_c(p: &ModelParams, e: &Exponents2R, b2: f64) -> Result<[f64; 2]> {
    let piece = c_piece(p, e, b2, b2)?;
    let raw = piece.raw_coefficients();
    Ok([raw[0], raw[1]])
}

/// Regime-2 weight of the coupled power `x^beta`: `v2 = w v1` termwise.
///
/// Both `-Phi_1(beta)/q_1` and `-q_2/Phi_2(beta)` are exact at a root of the
/// quartic; dividing by the larger of `|Phi_1|`, `|Phi_2|` keeps the weight
/// accurate when one regime nearly decouples.
pub fn coupling_weight(p: &ModelParams, beta: f64) -> f64 {
    let (q1, q2) = (p.q_out(0), p.q_out(1));
    let f1 = phi(p, 0, beta);
    let f2 = phi(p, 1, beta);
    if q1.abs() < 1e-12 || f2.abs() >= f1.abs() {
        -q2 / f2
    } else {
        -f1 / q1
    }
}

fn middle_pieces(p: &ModelParams, e: &Exponents2R, a2: f64, b1: f64) -> Result<([Piece; 2], [f64; 4])> {
    if !(a2 > 0.0 && a2 < b1) {
        return Err(Error::Domain(format!("middle piece needs 0 < a2 < b1, got a2={a2} b1={b1}")));
    }
    let dn = Denoms::new(p)?;
    let [k1, k2] = dn.k;
    let beta = e.betas;
    let w = beta.map(|b| coupling_weight(p, b));
    let t = a2 / b1;
    // Unknowns are u_k = B_k b1^beta_k.
    let tb = beta.map(|b| t.powf(b));
    let m = [
        [1.0; 4],
        beta,
        [0, 1, 2, 3].map(|k| w[k] * tb[k]),
        [0, 1, 2, 3].map(|k| beta[k] * w[k] * tb[k]),
    ];
    let rhs = [p.c1 - k1 * b1, -k1 * b1, p.c2 - k2 * a2, -k2 * a2];
    let u = cramer4(&m, &rhs)?;
    let regime1 = Piece {
        lo: a2,
        hi: b1,
        anchor: b1,
        coef: u.to_vec(),
        expo: beta.to_vec(),
        slope: k1,
        constant: 0.0,
    };
    let regime2 = Piece {
        coef: (0..4).map(|k| w[k] * u[k]).collect(),
        slope: k2,
        ..regime1.clone()
    };
    Ok(([regime1, regime2], w))
}

/// Cramer's rule with each determinant expanded along the first two rows,
/// so that the 2x2 minors of the smooth-fit rows at `b1` pair with those of
/// the rows at `a2`.
fn cramer4(m: &[[f64; 4]; 4], rhs: &[f64; 4]) -> Result<[f64; 4]> {
    let det = det4_laplace(m);
    let hadamard: f64 = m
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(det.abs() > 1e-13 * hadamard) {
        return Err(Error::Singular("middle-piece smooth-fit system"));
    }
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = *m;
        for r in 0..4 {
            mk[r][k] = rhs[r];
        }
        *o = det4_laplace(&mk) / det;
    }
    Ok(out)
}

fn det4_laplace(m: &[[f64; 4]; 4]) -> f64 {
    const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut det = 0.0;
    for &(j, k) in &PAIRS {
        let (l, n) = PAIRS[5 - PAIRS.iter().position(|&pk| pk == (j, k)).unwrap()];
        let top = m[0][j] * m[1][k] - m[0][k] * m[1][j];
        let bottom = m[2][l] * m[3][n] - m[2][n] * m[3][l];
        let sign = if (1 + j + k) % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * top * bottom;
    }
    det
}

/// Coefficients `(B1..B4)` of the coupled pieces on `(a(2), b(1)]`, on the
/// bare powers `x^beta_k`. Regime 2 uses `w_k B_k` (see [`coupling_weight`]).
pub fn coeffs_b(p: &ModelParams, e: &Exponents2R, a2: f64, b1: f64) -> Result<[f64; 4]> {
    let (pieces, _) = middle_pieces(p, e, a2, b1)?;
    let raw = pieces[0].raw_coefficients();
    Ok([raw[0], raw[1], raw[2], raw[3]])
}

/// Two-regime marginal value on a given corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseValue {
    pub corridor: Corridor,
    pub exponents: Exponents2R,
    pub c1: f64,
    pub c2: f64,
    pub a_piece: Piece,
    pub b_pieces: [Piece; 2],
    pub c_piece: Piece,
    pub weights: [f64; 4],
}

pub fn build_piecewise(p: &ModelParams, corridor: &Corridor) -> Result<PiecewiseValue> {
    if p.n_regimes() != 2 || corridor.n() != 2 {
        return Err(Error::Regimes {
            got: p.n_regimes(),
            need: "2",
        });
    }
    corridor.check_order()?;
    let e = Exponents2R::new(p)?;
    build_with(p, &e, corridor)
}

pub(crate) fn build_with(p: &ModelParams, e: &Exponents2R, corridor: &Corridor) -> Result<PiecewiseValue> {
    let (a, b) = (&corridor.a, &corridor.b);
    let (b_pieces, weights) = middle_pieces(p, e, a[1], b[0])?;
    Ok(PiecewiseValue {
        corridor: corridor.clone(),
        exponents: *e,
        c1: p.c1,
        c2: p.c2,
        a_piece: a_piece(p, e, a[0], a[1])?,
        b_pieces,
        c_piece: c_piece(p, e, b[0], b[1])?,
        weights,
    })
}

impl PiecewiseValue {
    fn piece(&self, x: f64, i: usize) -> Option<&Piece> {
        let candidates: [&Piece; 2] = match i {
            0 => [&self.a_piece, &self.b_pieces[0]],
            1 => [&self.b_pieces[1], &self.c_piece],
            _ => panic!("regime index {i} out of range for two regimes"),
        };
        candidates.into_iter().find(|pc| pc.contains(x))
    }

    fn clamp_value(&self, x: f64, i: usize) -> f64 {
        if x <= self.corridor.a[i] {
            self.c2
        } else {
            self.c1
        }
    }

    /// `v(x, i)`; regimes are 0 and 1.
    pub fn eval_v(&self, x: f64, i: usize) -> f64 {
        match self.piece(x, i) {
            Some(pc) => pc.value(x),
            None => self.clamp_value(x, i),
        }
    }

    pub fn eval_v_prime(&self, x: f64, i: usize) -> f64 {
        self.piece(x, i).map_or(0.0, |pc| pc.deriv(x))
    }

    pub fn eval_v_second(&self, x: f64, i: usize) -> f64 {
        self.piece(x, i).map_or(0.0, |pc| pc.second(x))
    }

    pub fn coeffs_a(&self) -> [f64; 2] {
        let r = self.a_piece.raw_coefficients();
        [r[0], r[1]]
    }

    pub fn coeffs_b(&self) -> [f64; 4] {
        let r = self.b_pieces[0].raw_coefficients();
        [r[0], r[1], r[2], r[3]]
    }

    pub fn coeffs_c(&self) -> [f64; 2] {
        let r = self.c_piece.raw_coefficients();
        [r[0], r[1]]
    }

    /// `(L - (rho - mu_i)) v + x` at `x` in regime `i`, where `L` is the
    /// marginal-value generator. Zero in the continuation region, `<= 0`
    /// where `v = c2` and `>= 0` where `v = c1`.
    pub fn generator_residual(&self, p: &ModelParams, x: f64, i: usize) -> f64 {
        let s2 = p.sigma * p.sigma;
        let v = self.eval_v(x, i);
        let coupling: f64 = (0..2).filter(|&j| j != i).map(|j| p.q[i][j] * (self.eval_v(x, j) - v)).sum();
        0.5 * s2 * x * x * self.eval_v_second(x, i) + (p.mu(i) + s2) * x * self.eval_v_prime(x, i) + coupling
            - p.discount_gap(i) * v
            + x
    }
}

/// Exponent-pair functions whose equalities `J_{1,2}(a) = J_{1,1}(b)` and
/// `J_{2,2}(a) = J_{2,1}(b)` fix the single-regime corridor. `i, j` are 1 or 2.
pub fn j_func(p: &ModelParams, e: &Exponents1R, i: usize, j: usize, x: f64) -> f64 {
    let delta = [e.delta1, e.delta2];
    let c = [p.c1, p.c2];
    let k = quad_denominator(p);
    let di = delta[i - 1];
    ((di - 2.0) * x - c[j - 1] * (di - 1.0) * k) / x.powf(delta[2 - i] - 1.0)
}

/// `rho - 2(r - g + lambda) - sigma^2`, the one-regime quadratic-cost
/// denominator.
fn quad_denominator(p: &ModelParams) -> f64 {
    p.rho - 2.0 * p.mu(0) - p.sigma * p.sigma
}

/// One-regime value `V` on a corridor `(a, b)`.
///
/// Inside the corridor `V = D1 x^delta1 + D2 x^delta2 + x^2 / (2K)` with
/// `D_i` chosen so that `V_xx` vanishes at both edges; outside it is affine
/// with slope `c2` below `a` and `c1` above `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleRegimeValue {
    pub a: f64,
    pub b: f64,
    pub exponents: Exponents1R,
    pub d: [f64; 2],
    pub v_a: f64,
    pub v_b: f64,
    k: f64,
    c1: f64,
    c2: f64,
}

pub fn single_regime_value(p: &ModelParams, a: f64, b: f64) -> Result<SingleRegimeValue> {
    let e = Exponents1R::new(p)?;
    if !(a > 0.0 && a < b) {
        return Err(Error::Domain(format!("need 0 < a < b, got a={a} b={b}")));
    }
    let k = quad_denominator(p);
    if k.abs() < 1e-14 * p.rho {
        return Err(Error::Singular("rho - 2(r - g + lambda) - sigma^2 vanishes"));
    }
    let (d1, d2) = (e.delta1, e.delta2);
    // V_xx(x) = d1(d1-1) D1 x^(d1-2) + d2(d2-1) D2 x^(d2-2) + 1/K = 0 at a, b,
    // solved for the scaled unknowns D_i b^(d_i - 2).
    let s = a / b;
    let m = [
        [d1 * (d1 - 1.0) * s.powf(d1 - 2.0), d2 * (d2 - 1.0) * s.powf(d2 - 2.0)],
        [d1 * (d1 - 1.0), d2 * (d2 - 1.0)],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 {
        return Err(Error::Singular("single-regime curvature system"));
    }
    let rhs = -1.0 / k;
    let u1 = rhs * (m[1][1] - m[0][1]) / det;
    let u2 = rhs * (m[0][0] - m[1][0]) / det;
    let d = [u1 * b.powf(2.0 - d1), u2 * b.powf(2.0 - d2)];
    let mut out = SingleRegimeValue {
        a,
        b,
        exponents: e,
        d,
        v_a: 0.0,
        v_b: 0.0,
        k,
        c1: p.c1,
        c2: p.c2,
    };
    out.v_a = out.inner(a);
    out.v_b = out.inner(b);
    Ok(out)
}

impl SingleRegimeValue {
    fn inner(&self, x: f64) -> f64 {
        let e = &self.exponents;
        self.d[0] * x.powf(e.delta1) + self.d[1] * x.powf(e.delta2) + x * x / (2.0 * self.k)
    }

    fn inner_x(&self, x: f64) -> f64 {
        let e = &self.exponents;
        self.d[0] * e.delta1 * x.powf(e.delta1 - 1.0) + self.d[1] * e.delta2 * x.powf(e.delta2 - 1.0) + x / self.k
    }

    fn inner_xx(&self, x: f64) -> f64 {
        let e = &self.exponents;
        self.d[0] * e.delta1 * (e.delta1 - 1.0) * x.powf(e.delta1 - 2.0)
            + self.d[1] * e.delta2 * (e.delta2 - 1.0) * x.powf(e.delta2 - 2.0)
            + 1.0 / self.k
    }

    pub fn value(&self, x: f64) -> f64 {
        if x <= self.a {
            self.v_a - self.c2 * (self.a - x)
        } else if x >= self.b {
            self.v_b + self.c1 * (x - self.b)
        } else {
            self.inner(x)
        }
    }

    /// `V_x`, the one-regime marginal value.
    pub fn value_x(&self, x: f64) -> f64 {
        if x <= self.a {
            self.c2
        } else if x >= self.b {
            self.c1
        } else {
            self.inner_x(x)
        }
    }

    pub fn value_xx(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            0.0
        } else {
            self.inner_xx(x)
        }
    }
}
