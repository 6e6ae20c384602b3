//! Comparative statics of the two-regime corridor, and the reference table.

use serde::{Deserialize, Serialize};

use crate::boundaries::{solve_single_regime, solve_two_regime_with, SolveOptions};
use crate::params::Policy;
use crate::{Corridor, ModelParams, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SweepParam {
    /// `r - g`, moving `r` with `g` fixed.
    RMinusG,
    Sigma,
    /// `q2 - q1 = d` with `q1 = mean - d/2`, `q2 = mean + d/2`.
    Q2MinusQ1 { mean: f64 },
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::RMinusG => "r_minus_g",
            SweepParam::Sigma => "sigma",
            SweepParam::Q2MinusQ1 { .. } => "q2_minus_q1",
        }
    }

    pub fn apply(&self, base: &ModelParams, value: f64) -> ModelParams {
        let mut p = base.clone();
        match *self {
            SweepParam::RMinusG => p.r = p.g + value,
            SweepParam::Sigma => p.sigma = value,
            SweepParam::Q2MinusQ1 { mean } => {
                let (q1, q2) = (mean - 0.5 * value, mean + 0.5 * value);
                p.q = vec![vec![-q1, q1], vec![q2, -q2]];
            }
        }
        p
    }

    /// How the corridor should respond as the parameter grows, and whether
    /// a violation is an error or only a warning.
    fn expectation(&self) -> (Quantity, Direction, Severity) {
        match self {
            SweepParam::RMinusG => (Quantity::Edges, Direction::Nonincreasing, Severity::Error),
            SweepParam::Sigma => (Quantity::Widths, Direction::Nondecreasing, Severity::Warning),
            SweepParam::Q2MinusQ1 { .. } => (Quantity::Widths, Direction::Nonincreasing, Severity::Warning),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub base: ModelParams,
    /// Start each solve from the previous point's corridor.
    pub warm_start: bool,
}

impl SweepSpec {
    fn base_with_r(r: f64) -> ModelParams {
        let mut p = ModelParams::reference();
        p.r = r;
        p
    }

    /// `r - g` over 21 points in `[-0.05, 0.05]`, reference parameters otherwise.
    pub fn r_minus_g() -> Self {
        SweepSpec {
            param: SweepParam::RMinusG,
            grid: linspace(-0.05, 0.05, 21),
            base: ModelParams::reference(),
            warm_start: true,
        }
    }

    /// `sigma` over 11 points in `[0.05, 0.30]` with `r = 4%`.
    pub fn sigma() -> Self {
        SweepSpec {
            param: SweepParam::Sigma,
            grid: linspace(0.05, 0.30, 11),
            base: Self::base_with_r(0.04),
            warm_start: true,
        }
    }

    /// `q2 - q1` over 11 points in `[-0.038, 0.038]` around mean 0.02, `r = 4%`.
    pub fn q2_minus_q1() -> Self {
        SweepSpec {
            param: SweepParam::Q2MinusQ1 { mean: 0.02 },
            grid: linspace(-0.038, 0.038, 11),
            base: Self::base_with_r(0.04),
            warm_start: true,
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    Edges,
    Widths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Nonincreasing,
    Nondecreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub corridor: Option<Corridor>,
    pub widths: Option<Vec<f64>>,
    pub residual_norm: Option<f64>,
    /// `None` on success, otherwise the solver error.
    pub error: Option<String>,
    /// Validation warnings at this point.
    pub warnings: Vec<String>,
}

impl SweepPoint {
    pub fn ok(&self) -> bool {
        self.corridor.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityFinding {
    pub severity: Severity,
    /// Column name, e.g. `a1` or `w2`.
    pub column: String,
    /// Swept values bracketing the violation.
    pub between: (f64, f64),
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
    pub findings: Vec<MonotonicityFinding>,
    /// Conventions chosen where the sweep definition leaves a choice open.
    pub notes: Vec<String>,
}

impl SweepResult {
    pub fn errors(&self) -> impl Iterator<Item = &MonotonicityFinding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &MonotonicityFinding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }
}

/// Relative slack below which a change counts as flat.
const FLAT: f64 = 1e-9;

/// Solve the two-regime corridor at each grid point. Failures are recorded
/// on the point; the second-moment bound is only a warning here because the
/// default volatility and switching grids break it throughout.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(crate::Error::Domain("sweep grid must be strictly increasing".into()));
    }
    for &v in &spec.grid {
        spec.param.apply(&spec.base, v).require_valid(Policy::Relaxed)?;
    }

    let solve_at = |value: f64, initial: Option<Corridor>| {
        let p = spec.param.apply(&spec.base, value);
        let warnings = p
            .validate_with(Policy::Relaxed)
            .warnings
            .into_iter()
            .map(|w| w.message)
            .collect();
        let opts = SolveOptions {
            relaxed: true,
            initial,
            skip_constraints: false,
        };
        match solve_two_regime_with(&p, &opts) {
            Ok(rep) => SweepPoint {
                value,
                widths: Some(rep.corridor.widths()),
                residual_norm: Some(rep.residual_norm),
                corridor: Some(rep.corridor),
                error: None,
                warnings,
            },
            Err(err) => SweepPoint {
                value,
                corridor: None,
                widths: None,
                residual_norm: None,
                error: Some(err.to_string()),
                warnings,
            },
        }
    };

    let points = if spec.warm_start {
        let mut out: Vec<SweepPoint> = Vec::with_capacity(spec.grid.len());
        for &v in &spec.grid {
            let prev = out.iter().rev().find_map(|pt| pt.corridor.clone());
            let mut pt = solve_at(v, prev.clone());
            if !pt.ok() && prev.is_some() {
                pt = solve_at(v, None);
            }
            out.push(pt);
        }
        out
    } else {
        use rayon::prelude::*;
        spec.grid.par_iter().map(|&v| solve_at(v, None)).collect()
    };

    let mut notes = Vec::new();
    if let SweepParam::Q2MinusQ1 { mean } = spec.param {
        notes.push(format!("q1 = {mean} - d/2, q2 = {mean} + d/2 (mean switching rate held fixed)"));
    }
    let findings = monotonicity(spec.param, &points);
    Ok(SweepResult {
        param: spec.param,
        points,
        findings,
        notes,
    })
}

fn monotonicity(param: SweepParam, points: &[SweepPoint]) -> Vec<MonotonicityFinding> {
    let (what, dir, severity) = param.expectation();
    let series: Vec<(String, Vec<(f64, f64)>)> = match what {
        Quantity::Edges => ["a1", "a2", "b1", "b2"]
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let col = points
                    .iter()
                    .filter_map(|pt| {
                        let cor = pt.corridor.as_ref()?;
                        Some((pt.value, if c < 2 { cor.a[c] } else { cor.b[c - 2] }))
                    })
                    .collect();
                (name.to_string(), col)
            })
            .collect(),
        Quantity::Widths => (0..2)
            .map(|i| {
                let col = points
                    .iter()
                    .filter_map(|pt| Some((pt.value, pt.widths.as_ref()?[i])))
                    .collect();
                (format!("w{}", i + 1), col)
            })
            .collect(),
    };
    let mut out = Vec::new();
    for (column, col) in series {
        for w in col.windows(2) {
            let change = w[1].1 - w[0].1;
            let slack = FLAT * w[0].1.abs().max(1.0);
            let bad = match dir {
                Direction::Nonincreasing => change > slack,
                Direction::Nondecreasing => change < -slack,
            };
            if bad {
                out.push(MonotonicityFinding {
                    severity,
                    column: column.clone(),
                    between: (w[0].0, w[1].0),
                    change,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub label: String,
    pub a: f64,
    pub b: f64,
    /// Published values, as fractions.
    pub published: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub params: ModelParams,
    pub rows: Vec<Table1Row>,
    /// Single-regime corridors at the extreme spreads, which must bracket
    /// the two-regime rows.
    pub bracket: [(f64, f64); 2],
    pub bracket_ok: bool,
    pub residual_norm: f64,
    pub constraints_passed: bool,
}

/// Published reference corridors: regime 1, regime 2, one regime.
pub const TABLE1_PUBLISHED: [(f64, f64); 3] = [(0.225871, 0.563248), (0.247630, 0.582346), (0.248539, 0.603393)];

/// Reference table: the two regimes of the given (default reference)
/// parameters and the one-regime problem with zero spread.
pub fn table1(over: Option<ModelParams>) -> Result<Table1> {
    let p = over.unwrap_or_else(ModelParams::reference);
    let two = solve_two_regime_with(&p, &SolveOptions::default())?;
    let one = solve_single_regime(&ModelParams::single(p.r, p.g, p.sigma, p.rho, 0.0, p.c1, p.c2))?;
    let lo = solve_single_regime(&p.uncoupled(0))?;
    let hi = solve_single_regime(&p.uncoupled(1))?;
    let c = &two.corridor;
    let inside = |x: f64, l: f64, h: f64| x >= l - 1e-12 && x <= h + 1e-12;
    let bracket_ok = (0..2).all(|i| inside(c.a[i], lo.a, hi.a) && inside(c.b[i], lo.b, hi.b));
    let rows = vec![
        Table1Row {
            label: "regime 1".into(),
            a: c.a[0],
            b: c.b[0],
            published: TABLE1_PUBLISHED[0],
        },
        Table1Row {
            label: "regime 2".into(),
            a: c.a[1],
            b: c.b[1],
            published: TABLE1_PUBLISHED[1],
        },
        Table1Row {
            label: "one regime".into(),
            a: one.a,
            b: one.b,
            published: TABLE1_PUBLISHED[2],
        },
    ];
    Ok(Table1 {
        params: p,
        rows,
        bracket: [(lo.a, lo.b), (hi.a, hi.b)],
        bracket_ok,
        residual_norm: two.residual_norm,
        constraints_passed: two.constraints.passed,
    })
}
