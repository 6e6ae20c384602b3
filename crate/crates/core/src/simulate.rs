//! Monte-Carlo estimates of the control cost and of the game value.
//!
//! The regime chain is simulated exactly with exponential clocks, and its
//! switch times are inserted into the time grid so no diffusion step
//! straddles a switch. Every path draws from its own ChaCha8 streams keyed
//! by `(seed, path)`: stream `2p` for the Gaussian increments, `2p + 1` for
//! the chain. Per-path results are collected in path order and summed
//! sequentially, so estimates do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Corridor, Error, ModelParams, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    /// Strictly increasing switch times, all below `horizon`.
    pub jump_times: Vec<f64>,
    /// `states[0]` is the initial regime, `states[k + 1]` the regime after
    /// the `k`-th switch.
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl ChainPath {
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }
}

/// Regime path on `[0, horizon)` from generator `q`.
pub fn sample_chain<R: Rng + ?Sized>(q: &[Vec<f64>], i0: usize, horizon: f64, rng: &mut R) -> ChainPath {
    let mut path = ChainPath {
        jump_times: Vec::new(),
        states: vec![i0],
        horizon,
    };
    let mut t = 0.0;
    let mut s = i0;
    loop {
        let rate = -q[s][s];
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = rng.sample(Exp1);
        t += hold / rate;
        if t >= horizon {
            break;
        }
        let mut u = rng.random::<f64>() * rate;
        let mut next = s;
        for (j, &qj) in q[s].iter().enumerate() {
            if j == s || qj <= 0.0 {
                continue;
            }
            next = j;
            if u < qj {
                break;
            }
            u -= qj;
        }
        path.jump_times.push(t);
        path.states.push(next);
        s = next;
    }
    path
}

/// Independent generators for one path.
#[derive(Debug, Clone)]
pub struct Streams {
    pub noise: ChaCha8Rng,
    pub chain: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(2 * path);
        let mut chain = ChaCha8Rng::seed_from_u64(seed);
        chain.set_stream(2 * path + 1);
        Streams { noise, chain }
    }
}

/// One step of the controlled process, reported after projection.
#[derive(Debug, Clone, Copy)]
struct Step {
    t0: f64,
    t1: f64,
    regime: usize,
    x: f64,
    d_xi_reflect: f64,
    d_eta_reflect: f64,
    d_xi_lump: f64,
    d_eta_lump: f64,
}

/// Push `x` into `[lo, hi]`, returning the new level and the increase and
/// decrease needed.
fn project(x: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    if x < lo {
        (lo, lo - x, 0.0)
    } else if x > hi {
        (hi, 0.0, x - hi)
    } else {
        (x, 0.0, 0.0)
    }
}

/// Drive the corridor policy along `chain`. `sign` flips the Gaussian
/// increments for the antithetic partner. The initial lump is reported as
/// a zero-length step at `t = 0`.
#[allow(clippy::too_many_arguments)]
fn run_controlled(
    p: &ModelParams,
    c: &Corridor,
    x0: f64,
    chain: &ChainPath,
    dt: f64,
    noise: &mut ChaCha8Rng,
    sign: f64,
    mut visit: impl FnMut(&Step),
) {
    let sig = p.sigma;
    let mut regime = chain.states[0];
    let (mut x, up, down) = project(x0, c.a[regime], c.b[regime]);
    visit(&Step {
        t0: 0.0,
        t1: 0.0,
        regime,
        x,
        d_xi_reflect: 0.0,
        d_eta_reflect: 0.0,
        d_xi_lump: up,
        d_eta_lump: down,
    });
    let mut t = 0.0;
    let mut k = 0usize;
    let mut next_jump = 0usize;
    let horizon = chain.horizon;
    let sqrt_dt = dt.sqrt();
    let mut drift = p.mu(regime) - 0.5 * sig * sig;
    while t < horizon {
        let grid_t = ((k + 1) as f64 * dt).min(horizon);
        let jump_t = chain.jump_times.get(next_jump).copied().unwrap_or(f64::INFINITY);
        let (t1, switching) = if jump_t < grid_t { (jump_t, true) } else { (grid_t, false) };
        let h = t1 - t;
        let root_h = if t1 == (k + 1) as f64 * dt && t == k as f64 * dt {
            sqrt_dt
        } else {
            h.sqrt()
        };
        let z: f64 = noise.sample(StandardNormal);
        let moved = x * (drift * h + sig * root_h * sign * z).exp();
        let (xr, up, down) = project(moved, c.a[regime], c.b[regime]);
        x = xr;
        let (mut lump_up, mut lump_down) = (0.0, 0.0);
        if switching {
            regime = chain.states[next_jump + 1];
            next_jump += 1;
            drift = p.mu(regime) - 0.5 * sig * sig;
            let (xl, u2, d2) = project(x, c.a[regime], c.b[regime]);
            x = xl;
            lump_up = u2;
            lump_down = d2;
        } else {
            k += 1;
        }
        visit(&Step {
            t0: t,
            t1,
            regime,
            x,
            d_xi_reflect: up,
            d_eta_reflect: down,
            d_xi_lump: lump_up,
            d_eta_lump: lump_down,
        });
        t = t1;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlledPath {
    pub t: Vec<f64>,
    pub regime: Vec<usize>,
    pub x: Vec<f64>,
    /// Cumulative increases.
    pub xi: Vec<f64>,
    /// Cumulative decreases.
    pub eta: Vec<f64>,
    pub d_xi_reflect: Vec<f64>,
    pub d_xi_lump: Vec<f64>,
    pub d_eta_reflect: Vec<f64>,
    pub d_eta_lump: Vec<f64>,
}

/// One path of the corridor policy: an initial lump into the corridor,
/// exact GBM steps clamped back into it, and a lump at every switch whose
/// new corridor excludes the current level.
pub fn simulate_controlled_path(
    p: &ModelParams,
    corridor: &Corridor,
    x0: f64,
    i0: usize,
    horizon: f64,
    dt: f64,
    streams: &mut Streams,
) -> ControlledPath {
    let chain = sample_chain(&p.q, i0, horizon, &mut streams.chain);
    let mut out = ControlledPath::default();
    let (mut xi, mut eta) = (0.0, 0.0);
    run_controlled(p, corridor, x0, &chain, dt, &mut streams.noise, 1.0, |s| {
        xi += s.d_xi_reflect + s.d_xi_lump;
        eta += s.d_eta_reflect + s.d_eta_lump;
        out.t.push(s.t1);
        out.regime.push(s.regime);
        out.x.push(s.x);
        out.xi.push(xi);
        out.eta.push(eta);
        out.d_xi_reflect.push(s.d_xi_reflect);
        out.d_xi_lump.push(s.d_xi_lump);
        out.d_eta_reflect.push(s.d_eta_reflect);
        out.d_eta_lump.push(s.d_eta_lump);
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Defaults to the shortest horizon meeting `tail_tol`.
    pub horizon: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Allowed truncation bias.
    pub tail_tol: f64,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 2.5e-3,
            horizon: None,
            n_paths: 100_000,
            seed: DEFAULT_SEED,
            tail_tol: 1e-3,
            threads: 0,
        }
    }
}

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Independent samples (antithetic pairs for the cost).
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Bound on the bias from stopping the simulation at `horizon`.
    pub tail_bound: f64,
    pub seed: u64,
}

fn pick_horizon(cfg: &SimConfig, rate: f64, scale: f64) -> Result<(f64, f64)> {
    let bound = |t: f64| scale * (-rate * t).exp();
    let horizon = match cfg.horizon {
        Some(t) => t,
        None => ((scale / cfg.tail_tol).ln() / rate).max(0.0).ceil(),
    };
    let tail = bound(horizon);
    if tail > cfg.tail_tol {
        return Err(Error::TailBound {
            horizon,
            bound: tail,
            tol: cfg.tail_tol,
        });
    }
    if !(cfg.dt > 0.0 && cfg.dt <= 1e-3 * horizon) {
        return Err(Error::Domain(format!(
            "time step {} must be positive and at most 1e-3 x horizon ({horizon})",
            cfg.dt
        )));
    }
    Ok((horizon, tail))
}

fn check_inputs(p: &ModelParams, c: &Corridor, i0: usize) -> Result<()> {
    p.require_valid(crate::params::Policy::Relaxed)?;
    if c.n() != p.n_regimes() || i0 >= p.n_regimes() {
        return Err(Error::Regimes {
            got: c.n(),
            need: "one corridor per regime and a valid start regime",
        });
    }
    c.check_order()
}

/// Mean and standard error of per-path samples, summed in index order.
fn summarize(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Expected discounted cost of the corridor policy from `(x0, i0)` with the
/// quadratic running cost.
pub fn estimate_cost(p: &ModelParams, c: &Corridor, x0: f64, i0: usize, cfg: &SimConfig) -> Result<CostEstimate> {
    estimate_cost_with(p, c, x0, i0, cfg, &ModelParams::running_cost)
}

/// [`estimate_cost`] with a custom running cost `h`. The tail bound assumes
/// `h` is nondecreasing on the corridor.
pub fn estimate_cost_with(
    p: &ModelParams,
    c: &Corridor,
    x0: f64,
    i0: usize,
    cfg: &SimConfig,
    h: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<CostEstimate> {
    check_inputs(p, c, i0)?;
    let top = c.b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = h(top) / p.rho + (p.c1 + p.c2) * top;
    let (horizon, tail) = pick_horizon(cfg, p.rho, scale)?;

    let step_disc = (-p.rho * cfg.dt).exp();
    let one = |stream: &ChaCha8Rng, chain: &ChainPath, sign: f64| {
        let mut noise = stream.clone();
        let mut total = 0.0;
        let mut disc = 1.0;
        let mut last = 0.0; // discounted running cost at the previous step
        run_controlled(p, c, x0, chain, cfg.dt, &mut noise, sign, |s| {
            let step = s.t1 - s.t0;
            if step > 0.0 {
                disc *= if step == cfg.dt { step_disc } else { (-p.rho * step).exp() };
            }
            let running = disc * h(s.x);
            if step > 0.0 {
                total += 0.5 * (last + running) * step;
            }
            last = running;
            let up = s.d_xi_reflect + s.d_xi_lump;
            let down = s.d_eta_reflect + s.d_eta_lump;
            total += disc * (p.c1 * down - p.c2 * up);
        });
        total
    };
    let samples: Vec<f64> = in_pool(cfg.threads, || {
        (0..cfg.n_paths as u64)
            .into_par_iter()
            .map(|path| {
                let mut st = Streams::new(cfg.seed, path);
                let chain = sample_chain(&p.q, i0, horizon, &mut st.chain);
                0.5 * (one(&st.noise, &chain, 1.0) + one(&st.noise, &chain, -1.0))
            })
            .collect()
    })?;
    let (mean, std_error) = summarize(&samples);
    Ok(CostEstimate {
        mean,
        std_error,
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        horizon,
        tail_bound: tail,
        seed: cfg.seed,
    })
}

/// Value of the stopping game from `(x0, i0)` when both players stop at the
/// corridor edges. Simulated in the measure where the ratio has drift
/// `r - g + lambda + sigma^2/2` and is discounted at the path-dependent
/// rate `rho - r + g - lambda_Y`; the payoff is the running reward `x`
/// until the first exit, plus `c2` on exit below and `c1` above.
pub fn estimate_game_value(p: &ModelParams, c: &Corridor, x0: f64, i0: usize, cfg: &SimConfig) -> Result<CostEstimate> {
    check_inputs(p, c, i0)?;
    let rate = (0..p.n_regimes()).map(|i| p.discount_gap(i)).fold(f64::INFINITY, f64::min);
    let (horizon, tail) = pick_horizon(cfg, rate, p.c1)?;
    let sig = p.sigma;

    let play = |path: u64| -> f64 {
        let mut st = Streams::new(cfg.seed, path);
        let chain = sample_chain(&p.q, i0, horizon, &mut st.chain);
        let mut regime = i0;
        let mut x = x0;
        let stop = |x: f64, i: usize| {
            if x <= c.a[i] {
                Some(p.c2)
            } else if x >= c.b[i] {
                Some(p.c1)
            } else {
                None
            }
        };
        if let Some(v) = stop(x, regime) {
            return v;
        }
        let mut log_disc: f64 = 0.0;
        let mut total = 0.0;
        let mut t = 0.0;
        let mut k = 0usize;
        let mut next_jump = 0usize;
        while t < horizon {
            let grid_t = ((k + 1) as f64 * cfg.dt).min(horizon);
            let jump_t = chain.jump_times.get(next_jump).copied().unwrap_or(f64::INFINITY);
            let (t1, switching) = if jump_t < grid_t { (jump_t, true) } else { (grid_t, false) };
            let h = t1 - t;
            let z: f64 = st.noise.sample(StandardNormal);
            let before = (-log_disc).exp() * x;
            x *= ((p.mu(regime) + 0.5 * sig * sig) * h + sig * h.sqrt() * z).exp();
            log_disc += p.discount_gap(regime) * h;
            let disc = (-log_disc).exp();
            total += 0.5 * (before + disc * x) * h;
            if switching {
                regime = chain.states[next_jump + 1];
                next_jump += 1;
            } else {
                k += 1;
            }
            if let Some(v) = stop(x, regime) {
                return total + disc * v;
            }
            t = t1;
        }
        total
    };
    let samples: Vec<f64> = in_pool(cfg.threads, || (0..cfg.n_paths as u64).into_par_iter().map(play).collect())?;
    let (mean, std_error) = summarize(&samples);
    Ok(CostEstimate {
        mean,
        std_error,
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        horizon,
        tail_bound: tail,
        seed: cfg.seed,
    })
}

/// Up to 100 full path traces of the corridor policy, for inspection.
pub fn trace_paths(
    p: &ModelParams,
    c: &Corridor,
    x0: f64,
    i0: usize,
    cfg: &SimConfig,
    count: usize,
) -> Result<Vec<ControlledPath>> {
    check_inputs(p, c, i0)?;
    let top = c.b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = ModelParams::running_cost(top) / p.rho + (p.c1 + p.c2) * top;
    let (horizon, _) = pick_horizon(cfg, p.rho, scale)?;
    Ok((0..count.min(100) as u64)
        .map(|path| {
            let mut st = Streams::new(cfg.seed, path);
            simulate_controlled_path(p, c, x0, i0, horizon, cfg.dt, &mut st)
        })
        .collect())
}
