//! Excursions of the chain away from its running supremum.
//!
//! An excursion starts with a down jump from the maximum and ends when the
//! maximum is regained. `N` counts the jumps after the initial down jump, so
//! an excursion of length `N` lasts `N` exponential holding times of rate
//! `λ(R)`. Jump probabilities inside the excursion use `λ({-lh})/λ((-∞,0))`
//! for the initial depth, which makes `Σ_k P(N = k) = 1 - p*`.

use thiserror::Error;

use crate::model::{self, ChainSpec};

/// Target for the neglected tail of `Σ P(N = k)` in [`ilt_exponent`].
pub const ILT_TAIL_TARGET: f64 = 1e-10;
/// Largest number of terms [`ilt_exponent`] will sum.
pub const ILT_MAX_TERMS: usize = 1 << 16;
/// Depth-distribution mass below which trailing entries are dropped.
const PRUNE_MASS: f64 = 1e-25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExcursionError {
    #[error("the chain has no down jumps, so it never leaves its maximum")]
    TrivialCase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcursionStats {
    /// Expected excursion length in time units; infinite unless the chain drifts up.
    pub expected_length: f64,
    /// Probability `p*` that an excursion never ends.
    pub p_infinite: f64,
}

/// `p_{l,k}`: probability that the chain started at `-lh` first hits 0 at jump `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingTable {
    k_max: usize,
    /// `cols[k-1][l-1] = p_{l,k}` for `1 <= l <= k`.
    cols: Vec<Vec<f64>>,
}

impl HittingTable {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `p_{l,k}`; zero outside `1 <= l <= k <= k_max`.
    pub fn get(&self, l: usize, k: usize) -> f64 {
        if l == 0 || k == 0 || k > self.k_max || l > k {
            0.0
        } else {
            self.cols[k - 1][l - 1]
        }
    }

    /// `Σ_{k <= k_max} p_{l,k}`.
    pub fn hit_probability(&self, l: usize) -> f64 {
        (1..=self.k_max).map(|k| self.get(l, k)).sum()
    }
}

/// Inverse local time Laplace exponent with its truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IltExponent {
    pub value: f64,
    /// Number of terms `K` summed.
    pub terms: usize,
    /// `Σ_{k>K} P(N = k)`.
    pub tail: f64,
    /// Set when the tail target was not met within [`ILT_MAX_TERMS`].
    pub truncation_warning: bool,
}

fn check_nontrivial(spec: &ChainSpec) -> Result<f64, ExcursionError> {
    let down = spec.down_mass();
    if down > 0.0 {
        Ok(down)
    } else {
        Err(ExcursionError::TrivialCase)
    }
}

/// Top-left `(m+1) x (m+1)` block of the generator of `X̄ - X` on `{0, ..., m}`.
pub fn reflected_generator(spec: &ChainSpec, m: usize) -> Vec<Vec<f64>> {
    assert!(m >= 1);
    let total = spec.total_rate();
    (0..=m)
        .map(|s| {
            (0..=m)
                .map(|t| {
                    if s == 0 && t == 0 {
                        -spec.down_mass()
                    } else if s == t {
                        -total
                    } else if t + 1 == s {
                        spec.rate_up()
                    } else if t > s {
                        spec.down_rate(t - s)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn excursion_stats(spec: &ChainSpec) -> Result<ExcursionStats, ExcursionError> {
    let down = check_nontrivial(spec)?;
    let expected_length = if model::drift_sign(spec) > 0 {
        // λ({h})h - ψ'(0+) is the first absolute moment of the down jumps
        spec.down_first_moment() / (model::psi_prime(spec, 0.0) * down)
    } else {
        f64::INFINITY
    };
    let p_infinite = spec.rate_up() / down * (model::phi_zero(spec) * spec.h()).exp_m1();
    Ok(ExcursionStats {
        expected_length,
        p_infinite,
    })
}

/// First-step dynamic programme `p_{l,k+1} = p p_{l-1,k} + Σ_m q_m p_{l+m,k}`,
/// with `p_{l,1} = p δ_{l1}`, `p = λ({h})/λ(R)` and `q_m = λ({-mh})/λ(R)`.
pub fn hitting_table(spec: &ChainSpec, k_max: usize) -> HittingTable {
    assert!(k_max >= 1);
    let total = spec.total_rate();
    let p = spec.rate_up() / total;
    let atoms: Vec<(usize, f64)> = spec.down_atoms().iter().map(|&(m, r)| (m, r / total)).collect();
    let tail = spec.geo_tail();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k_max);
    cols.push(vec![p]);
    for k in 1..k_max {
        let prev = &cols[k - 1];
        let at = |l: usize| if l >= 1 && l <= k { prev[l - 1] } else { 0.0 };
        let mut next = vec![0.0; k + 1];
        // tail_sum[l] = Σ_{m >= k0} (c/λ(R)) a^{m-k0} p_{l+m,k}, built from the deep end
        let mut tail_sum = 0.0;
        for l in (1..=k + 1).rev() {
            let mut v = p * at(l - 1);
            for &(m, q) in &atoms {
                if l + m > k {
                    break;
                }
                v += q * at(l + m);
            }
            if let Some(t) = tail {
                tail_sum = t.c / total * at(l + t.k0) + t.a * tail_sum;
                v += tail_sum;
            }
            next[l - 1] = v;
        }
        cols.push(next);
    }
    HittingTable { k_max, cols }
}

/// `P(N = k)` for `k = 1..=k_max` (index 0 holds `k = 1`).
pub fn n_pmf(spec: &ChainSpec, k_max: usize) -> Result<Vec<f64>, ExcursionError> {
    let down = check_nontrivial(spec)?;
    let table = hitting_table(spec, k_max);
    Ok((1..=k_max)
        .map(|k| (1..=k).map(|l| spec.down_rate(l) / down * table.get(l, k)).sum())
        .collect())
}

/// Streams `P(N = k)` by propagating the depth distribution of an excursion
/// in progress, one jump at a time.
struct DepthWalk {
    p: f64,
    atoms: Vec<(usize, f64)>,
    tail: Option<(usize, f64, f64)>,
    /// `dist[d]`: probability of being at depth `d >= 1` (index 0 unused).
    dist: Vec<f64>,
}

impl DepthWalk {
    fn new(spec: &ChainSpec, down: f64) -> Self {
        let total = spec.total_rate();
        let atoms: Vec<(usize, f64)> = spec.down_atoms().iter().map(|&(m, r)| (m, r / total)).collect();
        let tail = spec.geo_tail().map(|t| (t.k0, t.c / total, t.a));
        let mut dist = vec![0.0];
        let mut d = 1;
        loop {
            let v = spec.down_rate(d) / down;
            let beyond = spec.down_mass_from(d + 1) / down;
            dist.push(v);
            if spec.max_down_index().is_some_and(|m| d >= m) || (beyond < PRUNE_MASS && d > 1) {
                break;
            }
            d += 1;
        }
        Self {
            p: spec.rate_up() / total,
            atoms,
            tail,
            dist,
        }
    }

    /// Advances one jump and returns the mass absorbed at depth 0.
    fn step(&mut self) -> f64 {
        let old = &self.dist;
        let len = old.len();
        let absorbed = self.p * old.get(1).copied().unwrap_or(0.0);
        let max_atom = self.atoms.last().map_or(0, |&(m, _)| m);
        let mut next = Vec::with_capacity(len + max_atom + 1);
        next.push(0.0);
        let mut tail_sum = 0.0;
        let mut d = 1;
        loop {
            let mut v = self.p * old.get(d + 1).copied().unwrap_or(0.0);
            for &(m, q) in &self.atoms {
                if m >= d {
                    break;
                }
                v += q * old.get(d - m).copied().unwrap_or(0.0);
            }
            if let Some((k0, c, a)) = self.tail {
                let src = if d > k0 { old.get(d - k0).copied().unwrap_or(0.0) } else { 0.0 };
                tail_sum = c * src + a * tail_sum;
                v += tail_sum;
            }
            next.push(v);
            let past_support = d + 1 >= len + max_atom;
            let tail_done = self.tail.is_none() || (d >= len && tail_sum < PRUNE_MASS);
            if past_support && tail_done {
                break;
            }
            d += 1;
        }
        while next.len() > 2 && next[next.len() - 1] < PRUNE_MASS {
            next.pop();
        }
        self.dist = next;
        absorbed
    }
}

/// `P(N = k)` for `k = 1..=k_max` by the depth-distribution walk. Linear memory,
/// so it reaches far larger `k` than [`n_pmf`].
pub fn n_pmf_streamed(spec: &ChainSpec, k_max: usize) -> Result<Vec<f64>, ExcursionError> {
    let down = check_nontrivial(spec)?;
    let mut walk = DepthWalk::new(spec, down);
    Ok((0..k_max).map(|_| walk.step()).collect())
}

/// `-log E[exp(-θ L^{-1}_1) 1{L^{-1}_1 < ∞}] = θ + λ((-∞,0))(1 - Σ_k P(N=k) r^k)`
/// with `r = λ(R)/(λ(R)+θ)`.
///
/// Terms are added until `(1 - p* - Σ_{k<=K} P(N=k)) r^{K+1}` drops below
/// [`ILT_TAIL_TARGET`], checked at `K = 64, 128, ...` up to [`ILT_MAX_TERMS`].
pub fn ilt_exponent(spec: &ChainSpec, theta: f64) -> Result<IltExponent, ExcursionError> {
    assert!(theta >= 0.0);
    let down = check_nontrivial(spec)?;
    let finite_mass = 1.0 - excursion_stats(spec)?.p_infinite;
    let total = spec.total_rate();
    let r = total / (total + theta);
    let mut walk = DepthWalk::new(spec, down);
    let (mut partial, mut weighted, mut rk) = (0.0, 0.0, 1.0);
    let mut k = 0;
    let mut checkpoint = 64;
    loop {
        let pk = walk.step();
        k += 1;
        rk *= r;
        partial += pk;
        weighted += pk * rk;
        if k == checkpoint {
            let tail = (finite_mass - partial).abs();
            let neglected = tail * rk * r;
            let done = neglected < ILT_TAIL_TARGET;
            if done || k >= ILT_MAX_TERMS {
                return Ok(IltExponent {
                    value: theta + down * (1.0 - weighted),
                    terms: k,
                    tail,
                    truncation_warning: !done,
                });
            }
            checkpoint *= 2;
        }
    }
}
