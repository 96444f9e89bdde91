//! Scale functions `W^(q)` and `Z^(q)` on the lattice.
//!
//! Values are produced by the first-step linear recursion
//!
//! ```text
//! p W(k+1) = (1 + q/λ(R)) W(k) - Σ_{l=1}^{k} q_l W(k-l),   W(0) = 1/(h λ({h}))
//! ```
//!
//! with `p = λ({h})/λ(R)` and `q_l = λ({-lh})/λ(R)`, which is exact on the
//! lattice. Raw values grow like `e^{Φ(q) k h}`, so every table also carries the
//! scaled sequence `W^(q)(kh) e^{-Φ(q)(k+1)h}`, obtained as the `q = 0` scale
//! function of the chain tilted by `Φ(q)`. That sequence is bounded whenever
//! the tilted chain does not oscillate.
//!
//! Off the lattice, `W^(q)(x) = W^(q)(⌊x/h⌋h)` for `x >= 0` and `0` below zero;
//! `Z^(q)` is extended by `1` below zero.

use thiserror::Error;

use crate::model::{self, ChainSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error("W^(q) overflows double precision from lattice index {0}; use the scaled table")]
    Overflow(usize),
    #[error("lattice index {index} lies beyond the table (n_max = {n_max})")]
    OutOfRange { index: usize, n_max: usize },
    #[error("Laplace argument beta = {beta} must exceed Phi(q) = {phi_q}")]
    BetaBelowAbscissa { beta: f64, phi_q: f64 },
}

/// Lattice index `⌊x/h⌋`, snapping ratios within rounding of an integer.
pub fn lattice_floor(x: f64, h: f64) -> i64 {
    let r = x / h;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.abs().max(1.0) {
        n as i64
    } else {
        r.floor() as i64
    }
}

/// `Some(n)` when `y = n h` up to rounding.
pub fn lattice_exact(y: f64, h: f64) -> Option<i64> {
    let r = y / h;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * r.abs().max(1.0)).then_some(n as i64)
}

/// Incremental evaluation of `Σ_{l=1}^{k} λ({-lh}) v[k-l]` as `v` grows by one
/// entry per call. The geometric tail costs O(1) per step.
struct DownConvolution<'a> {
    spec: &'a ChainSpec,
    tail_acc: f64,
}

impl<'a> DownConvolution<'a> {
    fn new(spec: &'a ChainSpec) -> Self {
        Self { spec, tail_acc: 0.0 }
    }

    /// Must be called once for each `k = v.len() - 1`, in increasing order.
    fn next(&mut self, v: &[f64]) -> f64 {
        let k = v.len() - 1;
        let mut acc = 0.0;
        for &(l, rate) in self.spec.down_atoms() {
            if l > k {
                break;
            }
            acc += rate * v[k - l];
        }
        if let Some(t) = self.spec.geo_tail() {
            if k >= t.k0 {
                self.tail_acc = t.c * v[k - t.k0] + t.a * self.tail_acc;
            }
            acc += self.tail_acc;
        }
        acc
    }
}

/// `W^(q)(kh)` for `0 <= k <= n_max` by forward recursion. Entries past the
/// floating-point range are `f64::INFINITY`.
pub fn w_table(spec: &ChainSpec, q: f64, n_max: usize) -> Vec<f64> {
    assert!(q >= 0.0, "q must be nonnegative");
    let up = spec.rate_up();
    let total = spec.total_rate() + q;
    let mut w = Vec::with_capacity(n_max + 1);
    w.push(1.0 / (spec.h() * up));
    let mut conv = DownConvolution::new(spec);
    let mut overflowed = false;
    for _ in 0..n_max {
        if overflowed {
            w.push(f64::INFINITY);
            continue;
        }
        let k = w.len() - 1;
        let next = (total * w[k] - conv.next(&w)) / up;
        if next.is_finite() {
            w.push(next);
        } else {
            overflowed = true;
            w.push(f64::INFINITY);
        }
    }
    w
}

/// `Z^(q)(nh) = 1 + q h Σ_{k<n} W^(q)(kh)` from a `W^(q)` table.
pub fn z_table(spec: &ChainSpec, q: f64, w: &[f64]) -> Vec<f64> {
    let qh = q * spec.h();
    let mut z = Vec::with_capacity(w.len());
    let mut acc = 1.0;
    for (n, _) in w.iter().enumerate() {
        if n > 0 {
            acc += qh * w[n - 1];
        }
        z.push(if q == 0.0 { 1.0 } else { acc });
    }
    z
}

/// `W_{Φ(q)}(kh) = W^(q)(kh) e^{-Φ(q)(k+1)h}`, bounded unless the tilted chain oscillates.
pub fn w_scaled_table(spec: &ChainSpec, q: f64, n_max: usize) -> Vec<f64> {
    let c = model::phi(spec, q);
    w_table(&model::tilt(spec, c), 0.0, n_max)
}

/// `W^(q)` by the cumulative form
/// `W(n+1) = W(0) + Σ_{k=1}^{n+1} W(n+1-k) (q + λ((-∞,-kh])) / λ({h})`.
/// Quadratic cost; used to cross-check [`w_table`].
pub fn w_table_cumulative(spec: &ChainSpec, q: f64, n_max: usize) -> Vec<f64> {
    let up = spec.rate_up();
    let coef: Vec<f64> = (0..=n_max + 1)
        .map(|k| if k == 0 { 0.0 } else { (q + spec.down_mass_from(k)) / up })
        .collect();
    let mut w = vec![1.0 / (spec.h() * up)];
    for n in 0..n_max {
        let s: f64 = (1..=n + 1).map(|k| w[n + 1 - k] * coef[k]).sum();
        w.push(w[0] + s);
    }
    w
}

/// `Z^(q)` from its own first-step recursion (boundary value `1` below zero),
/// `p Z(k+1) = (1 + q/λ(R)) Z(k) - Σ_{l=1}^{k} q_l Z(k-l) - Σ_{l>k} q_l`.
///
/// The recursion is run on `Z - 1`, where `p + Σ q_l = 1` cancels the constant
/// terms exactly and leaves the forcing `q/λ(R)`. Run on `Z` itself, rounding
/// excites the growing `e^{Φ(0)kh}` mode when `q = 0` and the chain drifts down.
pub fn z_table_recursion(spec: &ChainSpec, q: f64, n_max: usize) -> Vec<f64> {
    let up = spec.rate_up();
    let total = spec.total_rate() + q;
    let mut zt = vec![0.0];
    let mut conv = DownConvolution::new(spec);
    for k in 0..n_max {
        let next = (q + total * zt[k] - conv.next(&zt)) / up;
        zt.push(next);
    }
    zt.into_iter().map(|v| 1.0 + v).collect()
}

/// `Z^(q)` by the cumulative form for `Z̃ = Z - 1`:
/// `Z̃(n+1) = (n+1) q/λ({h}) + Σ_{k=1}^{n} Z̃(n+1-k) (q + λ((-∞,-kh])) / λ({h})`.
pub fn z_table_cumulative(spec: &ChainSpec, q: f64, n_max: usize) -> Vec<f64> {
    let up = spec.rate_up();
    let coef: Vec<f64> = (0..=n_max)
        .map(|k| if k == 0 { 0.0 } else { (q + spec.down_mass_from(k)) / up })
        .collect();
    let mut zt = vec![0.0];
    for n in 0..n_max {
        let s: f64 = (1..=n).map(|k| zt[n + 1 - k] * coef[k]).sum();
        zt.push((n + 1) as f64 * q / up + s);
    }
    zt.into_iter().map(|v| 1.0 + v).collect()
}

/// Lattice table of `W^(q)`, `Z^(q)` and the exponentially scaled `W^(q)`.
#[derive(Debug, Clone)]
pub struct ScaleTable {
    q: f64,
    h: f64,
    phi_q: f64,
    w: Vec<f64>,
    z: Vec<f64>,
    w_scaled: Vec<f64>,
    overflow_index: Option<usize>,
}

impl ScaleTable {
    pub fn new(spec: &ChainSpec, q: f64, n_max: usize) -> Self {
        let w = w_table(spec, q, n_max);
        let z = z_table(spec, q, &w);
        let phi_q = model::phi(spec, q);
        let w_scaled = w_table(&model::tilt(spec, phi_q), 0.0, n_max);
        let overflow_index = w
            .iter()
            .zip(&z)
            .position(|(a, b)| !a.is_finite() || !b.is_finite());
        Self {
            q,
            h: spec.h(),
            phi_q,
            w,
            z,
            w_scaled,
            overflow_index,
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn phi_q(&self) -> f64 {
        self.phi_q
    }

    pub fn n_max(&self) -> usize {
        self.w.len() - 1
    }

    /// Raw `W^(q)`; overflowed entries are `f64::INFINITY`.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn w_scaled(&self) -> &[f64] {
        &self.w_scaled
    }

    /// First lattice index whose raw `W^(q)` or `Z^(q)` is not representable.
    pub fn overflow_index(&self) -> Option<usize> {
        self.overflow_index
    }

    fn check(&self, k: usize) -> Result<(), ScaleError> {
        if k > self.n_max() {
            return Err(ScaleError::OutOfRange {
                index: k,
                n_max: self.n_max(),
            });
        }
        match self.overflow_index {
            Some(o) if k >= o => Err(ScaleError::Overflow(o)),
            _ => Ok(()),
        }
    }

    /// `W^(q)(kh)`.
    pub fn w_at_index(&self, k: i64) -> Result<f64, ScaleError> {
        if k < 0 {
            return Ok(0.0);
        }
        self.check(k as usize)?;
        Ok(self.w[k as usize])
    }

    /// `Z^(q)(kh)`.
    pub fn z_at_index(&self, k: i64) -> Result<f64, ScaleError> {
        if k < 0 {
            return Ok(1.0);
        }
        self.check(k as usize)?;
        Ok(self.z[k as usize])
    }

    /// `W^(q)(x)` with the piecewise-constant extension.
    pub fn w_at(&self, x: f64) -> Result<f64, ScaleError> {
        self.w_at_index(lattice_floor(x, self.h))
    }

    /// `Z^(q)(x)` with the piecewise-constant extension.
    pub fn z_at(&self, x: f64) -> Result<f64, ScaleError> {
        self.z_at_index(lattice_floor(x, self.h))
    }

    /// `W^(q)(ih)/W^(q)(jh)` for `0 <= i <= j`, computed from the scaled table.
    pub fn w_ratio(&self, i: usize, j: usize) -> Result<f64, ScaleError> {
        if j > self.n_max() {
            return Err(ScaleError::OutOfRange {
                index: j,
                n_max: self.n_max(),
            });
        }
        let gap = (j - i) as f64 * self.h;
        Ok(self.w_scaled[i] / self.w_scaled[j] * (-self.phi_q * gap).exp())
    }
}

/// Comparison of the lattice Laplace sum of `W^(q)` with its closed-form transform.
#[derive(Debug, Clone, Copy)]
pub struct LaplaceCheck {
    /// `Σ_{k<=n_max} W^(q)(kh) (e^{-βkh} - e^{-β(k+1)h})/β`.
    pub partial_sum: f64,
    /// Upper bound on the neglected terms `k > n_max` (all nonnegative).
    pub tail_bound: f64,
    /// `(e^{βh} - 1) / (βh (ψ(β) - q))`.
    pub rhs: f64,
}

impl LaplaceCheck {
    /// `|partial_sum - rhs| <= tail_bound + rel |rhs|`.
    pub fn agrees(&self, rel: f64) -> bool {
        (self.partial_sum - self.rhs).abs() <= self.tail_bound + rel * self.rhs.abs()
    }
}

pub fn w_laplace_check(spec: &ChainSpec, q: f64, beta: f64, n_max: usize) -> Result<LaplaceCheck, ScaleError> {
    let phi_q = model::phi(spec, q);
    if !(beta > phi_q) {
        return Err(ScaleError::BetaBelowAbscissa { beta, phi_q });
    }
    let h = spec.h();
    let ws = w_scaled_table(spec, q, n_max);
    let cell = -(-beta * h).exp_m1() / beta;
    // W(kh) e^{-βkh} = Ws(k) e^{Φh} r^k with r = e^{-(β-Φ)h}
    let ln_r = -(beta - phi_q) * h;
    let lead = (phi_q * h).exp() * cell;
    let partial_sum: f64 = ws
        .iter()
        .enumerate()
        .map(|(k, &v)| v * lead * (ln_r * k as f64).exp())
        .sum();

    let r = ln_r.exp();
    let n = n_max as f64;
    let r_next = (ln_r * (n + 1.0)).exp();
    let oscillating = phi_q == 0.0 && model::drift_sign(spec) == 0;
    let tail_bound = if oscillating {
        // W(x)/x -> 2/m2; envelope W(kh) <= s (k+1) with a factor-2 margin
        let slope = (2.0 / spec.second_moment() * h).max(ws[n_max] / (n + 1.0));
        let s = 2.0 * slope;
        s * lead * r_next * ((n + 2.0) / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)))
    } else {
        // scaled W is nondecreasing towards 1/ψ'(Φ(q))
        let bound = (1.0 / model::psi_prime(spec, phi_q)).max(ws[n_max]);
        bound * lead * r_next / (1.0 - r)
    };
    let rhs = (beta * h).exp_m1() / (beta * h * (model::psi(spec, beta) - q));
    Ok(LaplaceCheck {
        partial_sum,
        tail_bound,
        rhs,
    })
}
