//! Seeded Monte Carlo simulation of the chain.
//!
//! Path `i` draws from a ChaCha8 stream keyed by `(master_seed, i)`, paths run
//! in parallel and results are combined by a fixed pairwise reduction, so an
//! estimate depends only on the seed and the path count. Positions are kept in
//! lattice units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Exp, Geometric};
use rayon::prelude::*;
use thiserror::Error;

use crate::exit;
use crate::model::{self, ChainSpec};
use crate::scale::{lattice_exact, lattice_floor, ScaleTable};

/// Truncation level for discounted functionals: paths stop at `ln(1/EPS_CAP)/q`.
pub const EPS_CAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("the chain has no down jumps")]
    TrivialCase,
    #[error("{0} is not a positive lattice point")]
    OffLattice(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub master_seed: u64,
    pub n_paths: usize,
    pub time_cap: Option<f64>,
    pub level_cap: Option<usize>,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl SimConfig {
    pub fn new(master_seed: u64, n_paths: usize) -> Self {
        Self {
            master_seed,
            n_paths,
            time_cap: None,
            level_cap: None,
            workers: 0,
        }
    }

    pub fn with_time_cap(mut self, cap: f64) -> Self {
        self.time_cap = Some(cap);
        self
    }

    pub fn with_level_cap(mut self, cap: usize) -> Self {
        self.level_cap = Some(cap);
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n_paths)`.
    pub std_error: f64,
    pub n_paths: usize,
    /// Fraction of paths stopped by a time or level cap.
    pub truncated_fraction: f64,
    /// Bound on the absolute bias introduced by the caps.
    pub bias_bound: f64,
}

impl SimEstimate {
    fn from_values(values: &[f64], truncated: usize, bias_bound: f64) -> Self {
        let n = values.len();
        if values.iter().all(|&v| v == values[0]) {
            return Self {
                mean: values[0],
                std_error: 0.0,
                n_paths: n,
                truncated_fraction: truncated as f64 / n as f64,
                bias_bound,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_paths: n,
            truncated_fraction: truncated as f64 / n as f64,
            bias_bound,
        }
    }

    /// `(mean - analytic) / std_error`; zero when both sides agree exactly.
    pub fn z_score(&self, analytic: f64) -> f64 {
        let d = self.mean - analytic;
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    /// Whether `analytic` lies within `k` standard errors plus the bias bound.
    pub fn covers(&self, analytic: f64, k: f64) -> bool {
        (self.mean - analytic).abs() <= k * self.std_error + self.bias_bound
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

#[derive(Debug, Clone, Copy)]
enum Move {
    Up,
    Down(usize),
    Tail,
}

/// Draws holding times and jumps of a chain.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    holding: Exp<f64>,
    alias: WeightedAliasIndex<f64>,
    moves: Vec<Move>,
    tail: Option<(usize, Geometric)>,
    /// Jump probabilities conditioned on a down jump, for starting excursions.
    down_alias: Option<(WeightedAliasIndex<f64>, Vec<Move>)>,
}

impl JumpSampler {
    pub fn new(spec: &ChainSpec) -> Self {
        let mut moves = vec![Move::Up];
        let mut weights = vec![spec.rate_up()];
        for &(k, r) in spec.down_atoms() {
            if r > 0.0 {
                moves.push(Move::Down(k));
                weights.push(r);
            }
        }
        let tail = spec.geo_tail().map(|t| {
            moves.push(Move::Tail);
            weights.push(t.mass());
            (t.k0, Geometric::new(1.0 - t.a).expect("tail ratio in (0,1)"))
        });
        let down_alias = if weights.len() > 1 {
            let alias = WeightedAliasIndex::new(weights[1..].to_vec()).expect("positive down weights");
            Some((alias, moves[1..].to_vec()))
        } else {
            None
        };
        Self {
            holding: Exp::new(spec.total_rate()).expect("positive total rate"),
            alias: WeightedAliasIndex::new(weights).expect("positive weights"),
            moves,
            tail,
            down_alias,
        }
    }

    fn resolve<R: Rng + ?Sized>(&self, m: Move, rng: &mut R) -> i64 {
        match m {
            Move::Up => 1,
            Move::Down(k) => -(k as i64),
            Move::Tail => {
                let (k0, geo) = self.tail.as_ref().expect("tail move implies tail");
                -((*k0 as u64 + geo.sample(rng)) as i64)
            }
        }
    }

    /// Holding time and jump in lattice units.
    pub fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, i64) {
        let dt = self.holding.sample(rng);
        let m = self.moves[self.alias.sample(rng)];
        (dt, self.resolve(m, rng))
    }

    /// A jump drawn from the normalised down part of the jump measure.
    pub fn down_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<i64> {
        let (alias, moves) = self.down_alias.as_ref()?;
        Some(self.resolve(moves[alias.sample(rng)], rng))
    }
}

fn run_paths<T, F>(cfg: &SimConfig, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let work = || {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| f(&mut cfg.rng(i)))
            .collect::<Vec<T>>()
    };
    if cfg.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .expect("thread pool")
            .install(work)
    }
}

fn check_paths(cfg: &SimConfig) -> Result<(), SimError> {
    if cfg.n_paths < 2 {
        return Err(SimError::Config("need at least two paths".into()));
    }
    Ok(())
}

fn lattice_y(spec: &ChainSpec, y: f64) -> Result<i64, SimError> {
    match lattice_exact(y, spec.h()) {
        Some(m) if m > 0 => Ok(m),
        _ => Err(SimError::OffLattice(y)),
    }
}

/// Estimates of the two-sided exit from `[-x, y)`: upward exit and downward exit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSidedEstimate {
    pub up: SimEstimate,
    pub down: SimEstimate,
}

/// `E[e^{-qT_y} 1{X̲_{T_y} >= -x}]` and `E[e^{-qT_x^-} 1{T_x^- < T_y}]`.
pub fn estimate_two_sided(spec: &ChainSpec, q: f64, x: f64, y: f64, cfg: &SimConfig) -> Result<TwoSidedEstimate, SimError> {
    check_paths(cfg)?;
    if spec.down_mass() == 0.0 && q == 0.0 {
        return Err(SimError::Config("no down jumps: the upward exit is certain".into()));
    }
    let top = lattice_y(spec, y)?;
    let bottom = -lattice_floor(x, spec.h());
    let sampler = JumpSampler::new(spec);
    let out = run_paths(cfg, |rng| {
        let (mut pos, mut t) = (0i64, 0.0);
        loop {
            let (dt, jump) = sampler.step(rng);
            t += dt;
            pos += jump;
            let disc = (-q * t).exp();
            if pos >= top {
                return (disc, 0.0);
            }
            if pos < bottom {
                return (0.0, disc);
            }
        }
    });
    let up: Vec<f64> = out.iter().map(|o| o.0).collect();
    let down: Vec<f64> = out.iter().map(|o| o.1).collect();
    Ok(TwoSidedEstimate {
        up: SimEstimate::from_values(&up, 0, 0.0),
        down: SimEstimate::from_values(&down, 0, 0.0),
    })
}

/// `E[e^{-qT_x^-} 1{T_x^- < ∞}]`.
///
/// For `q > 0` paths stop at `time_cap` (default `ln(1/EPS_CAP)/q`) and the bias
/// bound is `e^{-q time_cap}`. For `q = 0` the chain must drift up; paths stop
/// once `level_cap` lattice steps above the start, and the bias bound is the
/// ruin probability from that height.
pub fn estimate_ruin_lt(spec: &ChainSpec, q: f64, x: f64, cfg: &SimConfig) -> Result<SimEstimate, SimError> {
    check_paths(cfg)?;
    let bottom = -lattice_floor(x, spec.h());
    let sampler = JumpSampler::new(spec);
    let (time_cap, level_cap, bias) = if q > 0.0 {
        let cap = cfg.time_cap.unwrap_or((1.0 / EPS_CAP).ln() / q);
        (cap, i64::MAX, (-q * cap).exp())
    } else {
        if model::drift_sign(spec) <= 0 {
            return Err(SimError::Config("undiscounted ruin needs a chain drifting to +inf".into()));
        }
        let level = cfg
            .level_cap
            .ok_or_else(|| SimError::Config("undiscounted ruin needs a level cap".into()))?;
        let bias = exit::ruin_prob(spec, (level as i64 - bottom) as f64 * spec.h());
        (f64::INFINITY, level as i64, bias)
    };
    let out = run_paths(cfg, |rng| {
        let (mut pos, mut t) = (0i64, 0.0);
        loop {
            let (dt, jump) = sampler.step(rng);
            t += dt;
            if t > time_cap {
                return (0.0, true);
            }
            pos += jump;
            if pos < bottom {
                return ((-q * t).exp(), false);
            }
            if pos >= level_cap {
                return (0.0, true);
            }
        }
    });
    let values: Vec<f64> = out.iter().map(|o| o.0).collect();
    let truncated = out.iter().filter(|o| o.1).count();
    Ok(SimEstimate::from_values(&values, truncated, bias))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupEstimate {
    /// Empirical law of `X̄_{e_p}/h`, index `k` holding `P(X̄ = kh)`.
    pub pmf: Vec<f64>,
    /// Estimate of `P(X̄_{e_p} >= h)`, the geometric failure parameter.
    pub failure: SimEstimate,
    /// Estimate of `P(X̄_{e_p} = 0)`.
    pub at_zero: SimEstimate,
    /// Maximum-likelihood failure parameter `Σ M / (n + Σ M)`.
    pub failure_mle: f64,
}

impl SupEstimate {
    /// Empirical `P(X̄_{e_p} >= kh)`.
    pub fn tail(&self, k: usize) -> f64 {
        self.pmf.iter().skip(k).sum()
    }
}

/// Law of the supremum at an independent exponential time of rate `p`.
pub fn estimate_sup_at_exp(spec: &ChainSpec, p: f64, cfg: &SimConfig) -> Result<SupEstimate, SimError> {
    check_paths(cfg)?;
    if !(p > 0.0) {
        return Err(SimError::Config(format!("exponential rate must be positive, got {p}")));
    }
    let sampler = JumpSampler::new(spec);
    let horizon = Exp::new(p).expect("positive rate");
    let maxima = run_paths(cfg, |rng| {
        let end = horizon.sample(rng);
        let (mut pos, mut best, mut t) = (0i64, 0i64, 0.0);
        loop {
            let (dt, jump) = sampler.step(rng);
            t += dt;
            if t > end {
                return best as usize;
            }
            pos += jump;
            best = best.max(pos);
        }
    });
    let n = maxima.len();
    let top = maxima.iter().copied().max().unwrap_or(0);
    let mut pmf = vec![0.0; top + 1];
    for &m in &maxima {
        pmf[m] += 1.0;
    }
    pmf.iter_mut().for_each(|v| *v /= n as f64);
    let above: Vec<f64> = maxima.iter().map(|&m| if m >= 1 { 1.0 } else { 0.0 }).collect();
    let zero: Vec<f64> = above.iter().map(|v| 1.0 - v).collect();
    let total = maxima.iter().map(|&m| m as f64).sum::<f64>();
    Ok(SupEstimate {
        pmf,
        failure: SimEstimate::from_values(&above, 0, 0.0),
        at_zero: SimEstimate::from_values(&zero, 0, 0.0),
        failure_mle: total / (n as f64 + total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcursionEstimate {
    /// Mean length of excursions that returned before the depth cap.
    pub length: SimEstimate,
    /// Fraction of excursions reaching the depth cap.
    pub infinite_fraction: SimEstimate,
    /// Mean jump count of excursions that returned.
    pub jumps: SimEstimate,
}

/// Simulates one excursion per path, starting with a down jump from the
/// maximum. Excursions reaching depth `level_cap` (default 200) are counted as
/// infinite; the bias bound on that fraction is the flagged fraction times
/// `e^{-Φ(0) h level_cap}`, or the flagged fraction itself when `Φ(0) = 0`.
pub fn estimate_excursion(spec: &ChainSpec, cfg: &SimConfig) -> Result<ExcursionEstimate, SimError> {
    check_paths(cfg)?;
    let sampler = JumpSampler::new(spec);
    if sampler.down_alias.is_none() {
        return Err(SimError::TrivialCase);
    }
    let cap = cfg.level_cap.unwrap_or(200) as i64;
    let time_cap = cfg.time_cap.unwrap_or(f64::INFINITY);
    let out = run_paths(cfg, |rng| {
        let mut depth = -sampler.down_jump(rng).expect("down jumps exist");
        let (mut t, mut n) = (0.0, 0u64);
        loop {
            if depth >= cap {
                return None;
            }
            let (dt, jump) = sampler.step(rng);
            t += dt;
            n += 1;
            if t > time_cap {
                return None;
            }
            depth -= jump;
            if depth <= 0 {
                return Some((t, n as f64));
            }
        }
    });
    let finished: Vec<(f64, f64)> = out.iter().flatten().copied().collect();
    let flagged = out.len() - finished.len();
    let flags: Vec<f64> = out.iter().map(|o| if o.is_none() { 1.0 } else { 0.0 }).collect();
    let phi0 = model::phi_zero(spec);
    let flagged_frac = flagged as f64 / out.len() as f64;
    let bias = if phi0 > 0.0 {
        flagged_frac * (-phi0 * spec.h() * cap as f64).exp()
    } else {
        flagged_frac
    };
    let lengths: Vec<f64> = finished.iter().map(|f| f.0).collect();
    let counts: Vec<f64> = finished.iter().map(|f| f.1).collect();
    let cond = |v: &[f64]| {
        if v.len() >= 2 {
            SimEstimate::from_values(v, flagged, flagged_frac)
        } else {
            SimEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                n_paths: v.len(),
                truncated_fraction: flagged_frac,
                bias_bound: flagged_frac,
            }
        }
    };
    Ok(ExcursionEstimate {
        length: cond(&lengths),
        infinite_fraction: SimEstimate::from_values(&flags, flagged, bias),
        jumps: cond(&counts),
    })
}

/// Which process a [`MartingaleCheck`] tracks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MartingaleKind {
    /// `e^{-q(t ∧ τ)} W^(q)(X_{t ∧ τ})`, `τ` the first passage below 0.
    ScaleW,
    /// `e^{-q(t ∧ τ)} Z^(q)(X_{t ∧ τ})`.
    ScaleZ,
    /// `e^{Φ(β)X_t - βt}`.
    Exponential { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub kind: MartingaleKind,
    pub t: f64,
    /// Value at time 0.
    pub expected: f64,
    pub estimate: SimEstimate,
}

/// Runs the stopped scale-function martingales at discount `q` and the
/// exponential martingale for each `β` in `betas`, at every `t` in `t_grid`.
pub fn check_martingales(
    spec: &ChainSpec,
    q: f64,
    t_grid: &[f64],
    betas: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<MartingaleCheck>, SimError> {
    check_paths(cfg)?;
    let sampler = JumpSampler::new(spec);
    let mut checks = Vec::new();
    for (ti, &t_end) in t_grid.iter().enumerate() {
        if !(t_end >= 0.0) {
            return Err(SimError::Config(format!("negative time {t_end}")));
        }
        let run_cfg = SimConfig {
            master_seed: cfg.master_seed.wrapping_add(ti as u64),
            ..*cfg
        };
        // (position at t ∧ τ, time t ∧ τ, position at t)
        let ends = run_paths(&run_cfg, |rng| {
            let (mut pos, mut t) = (0i64, 0.0);
            let mut stopped: Option<(i64, f64)> = None;
            loop {
                let (dt, jump) = sampler.step(rng);
                if t + dt > t_end {
                    let s = stopped.unwrap_or((pos, t_end));
                    return (s.0, s.1, pos);
                }
                t += dt;
                pos += jump;
                if pos < 0 && stopped.is_none() {
                    stopped = Some((pos, t));
                }
            }
        });
        let top = ends.iter().map(|e| e.0).max().unwrap_or(0).max(0) as usize;
        let table = ScaleTable::new(spec, q, top);
        let w: Vec<f64> = ends
            .iter()
            .map(|&(x, s, _)| (-q * s).exp() * table.w_at_index(x).expect("within table"))
            .collect();
        let z: Vec<f64> = ends
            .iter()
            .map(|&(x, s, _)| (-q * s).exp() * table.z_at_index(x).expect("within table"))
            .collect();
        checks.push(MartingaleCheck {
            kind: MartingaleKind::ScaleW,
            t: t_end,
            expected: table.w()[0],
            estimate: SimEstimate::from_values(&w, 0, 0.0),
        });
        checks.push(MartingaleCheck {
            kind: MartingaleKind::ScaleZ,
            t: t_end,
            expected: 1.0,
            estimate: SimEstimate::from_values(&z, 0, 0.0),
        });
        for &beta in betas {
            let c = model::phi(spec, beta) * spec.h();
            let e: Vec<f64> = ends.iter().map(|&(_, _, x)| (c * x as f64 - beta * t_end).exp()).collect();
            checks.push(MartingaleCheck {
                kind: MartingaleKind::Exponential { beta },
                t: t_end,
                expected: 1.0,
                estimate: SimEstimate::from_values(&e, 0, 0.0),
            });
        }
    }
    Ok(checks)
}
