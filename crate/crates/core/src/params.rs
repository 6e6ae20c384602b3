//! Model primitives and the standing assumptions on them.
//!
//! Regimes are indexed from 0 in code. Regime 0 is the worst one (largest
//! spread), matching the convention `lambda[0] >= lambda[1] >= ...`.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Power of the running cost `h(x) = x^m / 2`. Only the quadratic case has
/// closed forms.
pub const RUNNING_COST_POWER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Interest rate on debt.
    pub r: f64,
    /// GDP growth rate.
    pub g: f64,
    /// GDP volatility.
    pub sigma: f64,
    /// Discount rate.
    pub rho: f64,
    /// Regime spreads on the interest rate.
    pub lambdas: Vec<f64>,
    /// Generator of the regime chain, row-major.
    pub q: Vec<Vec<f64>>,
    /// Marginal cost of reducing the debt ratio.
    pub c1: f64,
    /// Marginal benefit of increasing the debt ratio.
    pub c2: f64,
}

impl ModelParams {
    /// Two-regime parameters with switching intensities `q1` (out of regime
    /// 0) and `q2` (out of regime 1).
    #[allow(clippy::too_many_arguments)]
    pub fn two_regime(
        r: f64,
        g: f64,
        sigma: f64,
        rho: f64,
        lambdas: [f64; 2],
        q1: f64,
        q2: f64,
        c1: f64,
        c2: f64,
    ) -> Self {
        ModelParams {
            r,
            g,
            sigma,
            rho,
            lambdas: lambdas.to_vec(),
            q: vec![vec![-q1, q1], vec![q2, -q2]],
            c1,
            c2,
        }
    }

    pub fn single(r: f64, g: f64, sigma: f64, rho: f64, lambda: f64, c1: f64, c2: f64) -> Self {
        ModelParams {
            r,
            g,
            sigma,
            rho,
            lambdas: vec![lambda],
            q: vec![vec![0.0]],
            c1,
            c2,
        }
    }

    /// The reference two-regime calibration: r=1.2%, g=1.5%, sigma=0.15,
    /// rho=0.25, spreads (0.1, 0), symmetric switching at 0.02, c=(2, 1.25).
    pub fn reference() -> Self {
        Self::two_regime(0.012, 0.015, 0.15, 0.25, [0.1, 0.0], 0.02, 0.02, 2.0, 1.25)
    }

    /// The reference calibration collapsed to one regime with zero spread.
    pub fn reference_single() -> Self {
        Self::single(0.012, 0.015, 0.15, 0.25, 0.0, 2.0, 1.25)
    }

    pub fn n_regimes(&self) -> usize {
        self.lambdas.len()
    }

    /// Drift of the uncontrolled debt ratio in regime `i`: `r - g + lambda_i`.
    pub fn mu(&self, i: usize) -> f64 {
        self.r - self.g + self.lambdas[i]
    }

    /// `rho - mu_i`, the effective discount of the marginal value in regime `i`.
    pub fn discount_gap(&self, i: usize) -> f64 {
        self.rho - self.mu(i)
    }

    /// `1 / (rho - r + g - lambda_k)`.
    pub fn beta(&self, k: usize) -> f64 {
        1.0 / self.discount_gap(k)
    }

    /// Total switching intensity out of regime `i`.
    pub fn q_out(&self, i: usize) -> f64 {
        -self.q[i][i]
    }

    /// The one-regime problem with the spread of regime `i`.
    pub fn uncoupled(&self, i: usize) -> Self {
        Self::single(self.r, self.g, self.sigma, self.rho, self.lambdas[i], self.c1, self.c2)
    }

    /// Running cost `h(x) = x^2/2` for `x > 0`, zero otherwise.
    pub fn running_cost(x: f64) -> f64 {
        if x > 0.0 {
            0.5 * x * x
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(Policy::Strict)
    }

    pub fn validate_with(&self, policy: Policy) -> ValidationReport {
        let mut hard = Vec::new();
        let mut soft = Vec::new();
        let n = self.n_regimes();

        let scalars = [self.r, self.g, self.sigma, self.rho, self.c1, self.c2];
        let finite = scalars.iter().all(|v| v.is_finite())
            && self.lambdas.iter().all(|v| v.is_finite())
            && self.q.iter().flatten().all(|v| v.is_finite());
        if n == 0 {
            hard.push(Violation::new(Kind::Shape, "at least one regime is required"));
        }
        if self.q.len() != n || self.q.iter().any(|row| row.len() != n) {
            hard.push(Violation::new(
                Kind::Shape,
                format!("generator must be {n}x{n} to match the spreads"),
            ));
        }
        if !finite {
            hard.push(Violation::new(Kind::NonFinite, "all parameters must be finite"));
        }
        if !hard.is_empty() {
            return ValidationReport {
                hard_failures: hard,
                warnings: soft,
                c12_ratio: f64::NAN,
            };
        }

        if self.sigma <= 0.0 {
            hard.push(Violation::new(Kind::Volatility, format!("sigma={} must be positive", self.sigma)));
        }
        if let Some(k) = (1..n).find(|&k| self.lambdas[k] > self.lambdas[k - 1]) {
            hard.push(Violation::new(
                Kind::SpreadOrder,
                format!(
                    "spreads must be nonincreasing, but lambda.{}={} < lambda.{}={}",
                    k,
                    self.lambdas[k - 1],
                    k + 1,
                    self.lambdas[k]
                ),
            ));
        }
        self.check_generator(&mut hard);
        if self.c2 <= 0.0 || self.c1 <= self.c2 {
            hard.push(Violation::new(
                Kind::CostOrder,
                format!("need c1 > c2 > 0, got c1={} c2={}", self.c1, self.c2),
            ));
        }

        let mu1 = self.mu(0);
        if self.rho <= mu1.max(0.0) {
            hard.push(Violation::new(
                Kind::DiscountGap,
                format!("discount rate rho={} must exceed max(r-g+lambda.1, 0)={}", self.rho, mu1.max(0.0)),
            ));
        }
        let m = RUNNING_COST_POWER;
        let moment = m * mu1 + 0.5 * self.sigma * self.sigma * m * (m - 1.0);
        if self.rho <= moment {
            let v = Violation::new(
                Kind::MomentBound,
                format!(
                    "discount rate rho={} must exceed 2(r-g+lambda.1)+sigma^2={:.6}",
                    self.rho, moment
                ),
            );
            match policy {
                Policy::Strict => hard.push(v),
                Policy::Relaxed => soft.push(v),
            }
        }

        let c12_ratio = self.discount_gap(n - 1) / self.discount_gap(0);
        if self.c1 / self.c2 <= c12_ratio {
            soft.push(Violation::new(
                Kind::CostRatio,
                format!(
                    "c1/c2={:.6} does not exceed (rho-r+g-lambda.N)/(rho-r+g-lambda.1)={:.6}",
                    self.c1 / self.c2,
                    c12_ratio
                ),
            ));
        }

        ValidationReport {
            hard_failures: hard,
            warnings: soft,
            c12_ratio,
        }
    }

    fn check_generator(&self, hard: &mut Vec<Violation>) {
        let n = self.n_regimes();
        let mut bad = |msg: String| hard.push(Violation::new(Kind::Generator, msg));
        if n == 1 {
            if self.q[0][0] != 0.0 {
                bad(format!("a one-regime generator must be [[0]], got [[{}]]", self.q[0][0]));
            }
            return;
        }
        for (i, row) in self.q.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            let scale: f64 = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            if sum.abs() > 1e-12 * scale {
                bad(format!("row {} sums to {sum:e}, not 0", i + 1));
            }
            if row[i] >= 0.0 {
                bad(format!("diagonal q.{0}.{0}={1} must be negative", i + 1, row[i]));
            }
            if let Some(j) = (0..n).find(|&j| j != i && row[j] < 0.0) {
                bad(format!("off-diagonal q.{}.{}={} is negative", i + 1, j + 1, row[j]));
            }
        }
        // Irreducible iff every state reaches every other along positive rates.
        for start in 0..n {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if j != i && self.q[i][j] > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                bad("generator is reducible".to_string());
                return;
            }
        }
    }

    /// Validate and turn hard failures into an error.
    pub fn require_valid(&self, policy: Policy) -> crate::Result<ValidationReport> {
        let rep = self.validate_with(policy);
        if rep.is_ok() {
            Ok(rep)
        } else {
            Err(crate::Error::Invalid(Box::new(rep)))
        }
    }
}

/// How strictly [`ModelParams::validate_with`] treats the second-moment
/// bound on the discount rate.
///
/// The bound makes the do-nothing policy have finite cost, which the
/// corridor problem itself never uses. The default sensitivity grids in
/// volatility and switching rates break it everywhere, so sweeps run with
/// [`Policy::Relaxed`] and carry it as a warning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    Strict,
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Shape,
    NonFinite,
    Volatility,
    SpreadOrder,
    Generator,
    CostOrder,
    DiscountGap,
    MomentBound,
    CostRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: Kind,
    pub message: String,
}

impl Violation {
    fn new(kind: Kind, message: impl Into<String>) -> Self {
        Violation {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub hard_failures: Vec<Violation>,
    pub warnings: Vec<Violation>,
    /// `(rho - r + g - lambda_N) / (rho - r + g - lambda_1)`; the cost ratio
    /// `c1/c2` is expected to exceed it.
    pub c12_ratio: f64,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.hard_failures.is_empty()
    }

    pub fn has(&self, kind: Kind) -> bool {
        self.hard_failures.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<_> = self.hard_failures.iter().map(|v| v.message.as_str()).collect();
        f.write_str(&msgs.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_passes_with_cost_ratio_warning() {
        let rep = ModelParams::reference().validate();
        assert!(rep.is_ok(), "{rep}");
        // (0.25 + 0.003) / (0.25 + 0.003 - 0.1) by hand
        assert!((rep.c12_ratio - 0.253 / 0.153).abs() < 1e-12);
        assert_eq!(rep.warnings.len(), 1);
        assert_eq!(rep.warnings[0].kind, Kind::CostRatio);
    }

    #[test]
    fn cost_order_is_hard() {
        let mut p = ModelParams::reference();
        p.c1 = 1.0;
        assert!(p.validate().has(Kind::CostOrder));
    }

    #[test]
    fn low_discount_breaks_moment_bound() {
        let mut p = ModelParams::reference();
        p.rho = 0.20;
        let rep = p.validate();
        // 2 * 0.097 + 0.0225 = 0.2165 > 0.20
        assert!(rep.has(Kind::MomentBound));
        assert!(rep.hard_failures[0].message.contains("0.2165"));
        let relaxed = p.validate_with(Policy::Relaxed);
        assert!(relaxed.is_ok());
        assert!(relaxed.warnings.iter().any(|w| w.kind == Kind::MomentBound));
    }

    #[test]
    fn spread_order_and_generator() {
        let mut p = ModelParams::reference();
        p.lambdas = vec![0.0, 0.1];
        assert!(p.validate().has(Kind::SpreadOrder));

        let mut p = ModelParams::reference();
        p.q[0] = vec![0.0, 0.0];
        assert!(p.validate().has(Kind::Generator));

        let mut p = ModelParams::reference();
        p.q[1] = vec![0.03, -0.02];
        assert!(p.validate().has(Kind::Generator));
    }

    #[test]
    fn reducible_three_state_chain() {
        let mut p = ModelParams::reference();
        p.lambdas = vec![0.1, 0.05, 0.0];
        p.q = vec![
            vec![-0.02, 0.02, 0.0],
            vec![0.02, -0.02, 0.0],
            vec![0.01, 0.01, -0.02],
        ];
        assert!(p.validate().has(Kind::Generator));
        p.q[1] = vec![0.01, -0.02, 0.01];
        assert!(p.validate().is_ok());
    }

    #[test]
    fn equal_spreads_give_unit_ratio() {
        let mut p = ModelParams::reference();
        p.lambdas = vec![0.05, 0.05];
        assert_eq!(p.validate().c12_ratio, 1.0);
    }

    #[test]
    fn accessors() {
        let p = ModelParams::reference();
        assert!((p.mu(0) - 0.097).abs() < 1e-15);
        assert!((p.beta(1) - 1.0 / 0.253).abs() < 1e-12);
        assert_eq!(p.q_out(1), 0.02);
        assert_eq!(p.uncoupled(0).lambdas, vec![0.1]);
        assert!(p.uncoupled(0).validate().is_ok());
    }
}
