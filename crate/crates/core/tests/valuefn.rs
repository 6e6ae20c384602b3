use corridor_core::boundaries::{solve_single_regime, solve_two_regime};
use corridor_core::exponents::phi;
use corridor_core::valuefn::{
    build_piecewise, coeffs_a, coeffs_b, coeffs_c, coupling_weight, j_func, single_regime_value,
};
use corridor_core::{Corridor, Exponents1R, Exponents2R, ModelParams, PiecewiseValue};
use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use proptest::prelude::*;

fn solved() -> (ModelParams, PiecewiseValue) {
    let p = ModelParams::reference();
    let c = solve_two_regime(&p).unwrap().corridor;
    let pw = build_piecewise(&p, &c).unwrap();
    (p, pw)
}

/// `rho + q_i - 2 mu_i - sigma^2` and `rho + q_i - mu_i`, by hand.
fn denoms(p: &ModelParams, i: usize) -> (f64, f64) {
    let mu = p.r - p.g + p.lambdas[i];
    let q = -p.q[i][i];
    (p.rho + q - 2.0 * mu - p.sigma * p.sigma, p.rho + q - mu)
}

/// Independent 2x2 value/slope fit of `A1 x^e1 + A2 x^e2 + x/d + k` at `x0`.
fn fit_2x2(x0: f64, e: [f64; 2], d: f64, k: f64, target: f64) -> [f64; 2] {
    let m = Matrix2::new(
        x0.powf(e[0]),
        x0.powf(e[1]),
        e[0] * x0.powf(e[0] - 1.0),
        e[1] * x0.powf(e[1] - 1.0),
    );
    let rhs = Vector2::new(target - x0 / d - k, -1.0 / d);
    let s = m.lu().solve(&rhs).unwrap();
    [s[0], s[1]]
}

#[test]
fn a_coefficients_match_a_direct_two_by_two_solve() {
    let p = ModelParams::reference();
    let e = Exponents2R::new(&p).unwrap();
    let a1 = 0.225871;
    let (d1, e1) = denoms(&p, 0);
    let want = fit_2x2(a1, e.alpha, d1, 0.02 * p.c2 / e1, p.c2);
    let got = coeffs_a(&p, &e, a1).unwrap();
    for k in 0..2 {
        assert!((got[k] - want[k]).abs() < 1e-10 * want[k].abs(), "{got:?} vs {want:?}");
    }
}

#[test]
fn c_coefficients_match_a_direct_two_by_two_solve() {
    let p = ModelParams::reference();
    let e = Exponents2R::new(&p).unwrap();
    let b2 = 0.582346;
    let (d2, e2) = denoms(&p, 1);
    let want = fit_2x2(b2, e.gamma, d2, 0.02 * p.c1 / e2, p.c1);
    let got = coeffs_c(&p, &e, b2).unwrap();
    for k in 0..2 {
        assert!((got[k] - want[k]).abs() < 1e-10 * want[k].abs(), "{got:?} vs {want:?}");
    }
}

#[test]
fn a_coefficients_are_affine_in_the_lower_cost() {
    let mut p = ModelParams::reference();
    let e = Exponents2R::new(&p).unwrap();
    let at = |p: &mut ModelParams, c2: f64| {
        p.c2 = c2;
        coeffs_a(p, &e, 0.2).unwrap()
    };
    let (z, one, half) = (at(&mut p, 0.0), at(&mut p, 1.0), at(&mut p, 0.5));
    for k in 0..2 {
        assert!((half[k] - 0.5 * (z[k] + one[k])).abs() < 1e-10 * one[k].abs());
    }
}

#[test]
fn b_coefficients_match_a_dense_four_by_four_solve() {
    let p = ModelParams::reference();
    let e = Exponents2R::new(&p).unwrap();
    let (a2, b1): (f64, f64) = (0.247630, 0.563248);
    let (q1, q2) = (0.02, 0.02);
    let (d1, _) = denoms(&p, 0);
    let (d2, _) = denoms(&p, 1);
    let den = d1 * d2 - q1 * q2;
    let (k1, k2) = ((d2 + q1) / den, (d1 + q2) / den);
    let beta = e.betas;
    let w: Vec<f64> = beta.iter().map(|&b| -q2 / phi(&p, 1, b)).collect();
    let mut m = Matrix4::zeros();
    for k in 0..4 {
        m[(0, k)] = b1.powf(beta[k]);
        m[(1, k)] = beta[k] * b1.powf(beta[k] - 1.0);
        m[(2, k)] = w[k] * a2.powf(beta[k]);
        m[(3, k)] = w[k] * beta[k] * a2.powf(beta[k] - 1.0);
    }
    let rhs = Vector4::new(p.c1 - k1 * b1, -k1, p.c2 - k2 * a2, -k2);
    let want = m.lu().solve(&rhs).unwrap();
    let got = coeffs_b(&p, &e, a2, b1).unwrap();
    for k in 0..4 {
        assert!((got[k] - want[k]).abs() < 1e-9 * want[k].abs(), "{got:?} vs {want:?}");
    }
}

#[test]
fn coupling_weight_identity_holds_at_every_beta() {
    let p = ModelParams::reference();
    let e = Exponents2R::new(&p).unwrap();
    for b in e.betas {
        let w = coupling_weight(&p, b);
        assert!((w + phi(&p, 0, b) / 0.02).abs() < 1e-8 * w.abs().max(1.0));
        assert!((w + 0.02 / phi(&p, 1, b)).abs() < 1e-8 * w.abs().max(1.0));
    }
}

#[test]
fn coupling_weight_stays_finite_when_decoupling() {
    let mut p = ModelParams::reference();
    p.q = vec![vec![-1e-14, 1e-14], vec![0.02, -0.02]];
    let e = Exponents2R::new(&p).unwrap();
    for b in e.betas {
        assert!(coupling_weight(&p, b).is_finite());
    }
}

#[test]
fn clamped_pieces_and_smooth_fit() {
    let (p, pw) = solved();
    let c = &pw.corridor;
    assert_eq!(pw.eval_v(0.0, 0), p.c2);
    assert_eq!(pw.eval_v(0.0, 1), p.c2);
    assert_eq!(pw.eval_v(c.b[1] + 1.0, 1), p.c1);
    assert_eq!(pw.eval_v(c.b[0] + 1e-9, 0), p.c1);
    assert_eq!(pw.eval_v(c.a[1], 1), p.c2);
    // One-sided limits: the interior piece evaluated at its own edge.
    let edges = [
        (&pw.a_piece, c.a[0], p.c2),
        (&pw.b_pieces[0], c.b[0], p.c1),
        (&pw.b_pieces[1], c.a[1], p.c2),
        (&pw.c_piece, c.b[1], p.c1),
    ];
    for (piece, x, target) in edges {
        assert!((piece.value(x) - target).abs() < 1e-8, "value at {x}");
        assert!(piece.deriv(x).abs() < 1e-8, "slope at {x}");
    }
    // Regime 1 is continuous across the junction of its two interior pieces.
    let x = c.a[1];
    let left = pw.a_piece.value(x);
    let right = pw.b_pieces[0].value(x);
    assert!((left - right).abs() < 1e-9);
    assert!((pw.a_piece.deriv(x) - pw.b_pieces[0].deriv(x)).abs() < 1e-8);
    let x = c.b[0];
    assert!((pw.c_piece.value(x) - pw.b_pieces[1].value(x)).abs() < 1e-9);
}

/// `sigma^2/2 x^2 v'' + (mu_i + sigma^2) x v' - (rho + q_i - mu_i) v + q_i v_j + x`.
fn ode_terms(p: &ModelParams, pw: &PiecewiseValue, x: f64, i: usize) -> (f64, f64) {
    let s2 = p.sigma * p.sigma;
    let mu = p.r - p.g + p.lambdas[i];
    let q = -p.q[i][i];
    let v = pw.eval_v(x, i);
    let terms = [
        0.5 * s2 * x * x * pw.eval_v_second(x, i),
        (mu + s2) * x * pw.eval_v_prime(x, i),
        -(p.rho + q - mu) * v,
        q * pw.eval_v(x, 1 - i),
        x,
    ];
    (terms.iter().sum(), terms.iter().map(|t| t.abs()).sum())
}

#[test]
fn ode_holds_inside_every_piece() {
    let (p, pw) = solved();
    let c = &pw.corridor;
    let pieces = [(0, c.a[0], c.a[1]), (0, c.a[1], c.b[0]), (1, c.a[1], c.b[0]), (1, c.b[0], c.b[1])];
    for (i, lo, hi) in pieces {
        for k in 1..=200 {
            let x = lo + (hi - lo) * k as f64 / 201.0;
            let (res, scale) = ode_terms(&p, &pw, x, i);
            assert!(res.abs() < 1e-8 * scale, "regime {i} x={x} residual {res}");
        }
    }
}

#[test]
fn value_is_monotone_sandwiched_and_ordered() {
    let (p, pw) = solved();
    let top = 1.5 * pw.corridor.b[1];
    let mut prev = [f64::NEG_INFINITY; 2];
    for k in 0..=1000 {
        let x = top * k as f64 / 1000.0;
        let v = [pw.eval_v(x, 0), pw.eval_v(x, 1)];
        for i in 0..2 {
            assert!(v[i] >= prev[i] - 1e-12, "v(.,{i}) decreases at {x}");
            assert!(v[i] >= p.c2 - 1e-12 && v[i] <= p.c1 + 1e-12);
        }
        assert!(v[0] >= v[1] - 1e-12, "dominance fails at {x}");
        prev = v;
    }
}

#[test]
fn derivative_matches_central_differences() {
    let (_, pw) = solved();
    let c = &pw.corridor;
    let h = 1e-6;
    for i in 0..2 {
        for k in 1..100 {
            let x = c.a[0] + (c.b[1] - c.a[0]) * k as f64 / 100.0;
            if [c.a[0], c.a[1], c.b[0], c.b[1]].iter().any(|e| (x - e).abs() < 2.0 * h) {
                continue;
            }
            let fd = (pw.eval_v(x + h, i) - pw.eval_v(x - h, i)) / (2.0 * h);
            assert!((fd - pw.eval_v_prime(x, i)).abs() < 1e-5, "regime {i} x={x}");
        }
    }
}

#[test]
fn generator_residual_has_the_right_signs() {
    let (p, pw) = solved();
    let c = pw.corridor.clone();
    for k in 1..400 {
        let x = 1.5 * c.b[1] * k as f64 / 400.0;
        for i in 0..2 {
            let r = pw.generator_residual(&p, x, i);
            if x < c.a[i] {
                assert!(r <= 1e-9);
            } else if x > c.b[i] {
                assert!(r >= -1e-9);
            } else if x > c.a[i] + 1e-6 && x < c.b[i] - 1e-6 {
                assert!(r.abs() < 1e-8, "x={x} i={i} r={r}");
            }
        }
    }
}

#[test]
fn rejects_unordered_corridors() {
    let p = ModelParams::reference();
    let bad = Corridor::new(vec![0.3, 0.2], vec![0.5, 0.6]);
    assert!(build_piecewise(&p, &bad).is_err());
}

#[test]
fn j_func_vanishes_at_its_numerator_root() {
    let p = ModelParams::reference_single();
    let e = Exponents1R::new(&p).unwrap();
    let k = p.rho - 2.0 * (p.r - p.g) - p.sigma * p.sigma;
    let delta = [e.delta1, e.delta2];
    let c = [p.c1, p.c2];
    for i in 1..=2 {
        for j in 1..=2 {
            let x = c[j - 1] * (delta[i - 1] - 1.0) * k / (delta[i - 1] - 2.0);
            if x > 0.0 {
                assert!(j_func(&p, &e, i, j, x).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn j_equations_hold_at_the_published_one_regime_corridor() {
    let p = ModelParams::reference_single();
    let e = Exponents1R::new(&p).unwrap();
    let (a, b) = (0.248539, 0.603393);
    // Relative mismatch: the six reference digits limit the agreement
    // because both numerators nearly cancel at the corridor.
    let rel = |l: f64, r: f64| (l - r).abs() / r.abs();
    let r1 = rel(j_func(&p, &e, 1, 2, a), j_func(&p, &e, 1, 1, b));
    let r2 = rel(j_func(&p, &e, 2, 2, a), j_func(&p, &e, 2, 1, b));
    assert!(r1 < 1e-4 && r2 < 1e-4, "{r1} {r2}");
}

#[test]
fn one_regime_value_has_flat_curvature_at_the_edges() {
    let p = ModelParams::reference_single();
    let s = solve_single_regime(&p).unwrap();
    let v = single_regime_value(&p, s.a, s.b).unwrap();
    let h = 1e-12;
    assert!(v.value_xx(s.a + h).abs() < 1e-8);
    assert!(v.value_xx(s.b - h).abs() < 1e-8);
    // Slopes meet the costs exactly at the optimal corridor.
    assert!((v.value_x(s.a + h) - p.c2).abs() < 1e-8);
    assert!((v.value_x(s.b - h) - p.c1).abs() < 1e-8);
    // Convex everywhere, affine outside.
    let mut prev = f64::NEG_INFINITY;
    for k in 0..=1000 {
        let x = 1.5 * s.b * k as f64 / 1000.0;
        let vx = v.value_x(x);
        assert!(vx >= prev - 1e-12);
        assert!(v.value_xx(x) >= -1e-10);
        prev = vx;
    }
    assert!((v.value(0.0) - (v.v_a - p.c2 * s.a)).abs() < 1e-15);
}

/// One-regime game value on `[a, b]` by a direct boundary-value solve:
/// `u = C1 x^p + C2 x^n + x/K` with `u(a) = c2`, `u(b) = c1`.
fn game_value_bvp(p: &ModelParams, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    let s2 = p.sigma * p.sigma;
    let mu = p.r - p.g + p.lambdas[0];
    let k = p.rho - 2.0 * mu - s2;
    let (qa, qb, qc) = (0.5 * s2, mu + 0.5 * s2, -(p.rho - mu));
    let d = (qb * qb - 4.0 * qa * qc).sqrt();
    let (ep, en) = ((-qb + d) / (2.0 * qa), (-qb - d) / (2.0 * qa));
    let m = Matrix2::new(a.powf(ep), a.powf(en), b.powf(ep), b.powf(en));
    let c = m.lu().solve(&Vector2::new(p.c2 - a / k, p.c1 - b / k)).unwrap();
    move |x| c[0] * x.powf(ep) + c[1] * x.powf(en) + x / k
}

#[test]
fn one_regime_marginal_value_is_the_game_value() {
    let p = ModelParams::reference_single();
    let s = solve_single_regime(&p).unwrap();
    let v = single_regime_value(&p, s.a, s.b).unwrap();
    let u = game_value_bvp(&p, s.a, s.b);
    for k in 1..100 {
        let x = s.a + (s.b - s.a) * k as f64 / 100.0;
        assert!((v.value_x(x) - u(x)).abs() < 1e-9, "x={x}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solved_values_satisfy_the_ode_and_bounds(
        sigma in 0.08f64..0.25,
        l1 in 0.02f64..0.12,
        q1 in 0.005f64..0.1,
        q2 in 0.005f64..0.1,
    ) {
        let p = ModelParams::two_regime(0.012, 0.015, sigma, 0.3, [l1, 0.0], q1, q2, 2.0, 1.25);
        let Ok(rep) = solve_two_regime(&p) else {
            return Err(TestCaseError::reject("no constrained root"));
        };
        let pw = build_piecewise(&p, &rep.corridor).unwrap();
        let c = &pw.corridor;
        let pieces = [(0, c.a[0], c.a[1]), (0, c.a[1], c.b[0]), (1, c.a[1], c.b[0]), (1, c.b[0], c.b[1])];
        for (i, lo, hi) in pieces {
            for k in 1..40 {
                let x = lo + (hi - lo) * k as f64 / 40.0;
                let (res, scale) = ode_terms(&p, &pw, x, i);
                prop_assert!(res.abs() < 1e-8 * scale);
            }
        }
        for k in 0..=300 {
            let x = 1.2 * c.b[1] * k as f64 / 300.0;
            let (v1, v2) = (pw.eval_v(x, 0), pw.eval_v(x, 1));
            prop_assert!(v1 >= v2 - 1e-10);
            prop_assert!(v2 >= p.c2 - 1e-10 && v1 <= p.c1 + 1e-10);
        }
    }
}
