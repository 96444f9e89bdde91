//! Jump measures of upwards skip-free Lévy chains and their Laplace exponent.
//!
//! A chain lives on the lattice `hZ`. It jumps up by exactly `h` at rate
//! `rate_up` and down by `k*h` at rate `λ({-kh})`, where the downward part is
//! a finite list of atoms optionally followed by a geometric tail
//! `λ({-kh}) = c * a^(k - k0)` for `k >= k0`.
//!
//! Everything here works on the real Laplace domain `β >= 0`.

use thiserror::Error;

/// Absolute tolerance on `|ψ(β) - q|` (scaled by `max(1, q)`) for the inverse.
pub const ROOT_TOL: f64 = 1e-12;
/// Bracket width at which the inverse stops refining.
pub const BRACKET_TOL: f64 = 1e-14;
/// Left end of the bracket used when searching for a positive root of ψ.
pub const PHI0_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("lattice step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("up-jump rate must be positive and finite, got {0}")]
    InvalidUpRate(f64),
    #[error("down-jump index must be at least 1")]
    ZeroIndex,
    #[error("down-jump rate at k={k} must be nonnegative and finite, got {rate}")]
    InvalidRate { k: usize, rate: f64 },
    #[error("down-jump index k={0} listed twice")]
    DuplicateAtom(usize),
    #[error("down-jump atom k={k} collides with the geometric tail starting at k0={k0}")]
    TailCollision { k: usize, k0: usize },
    #[error("geometric tail needs c > 0 and a in (0,1), got c={c}, a={a}")]
    InvalidTail { c: f64, a: f64 },
}

/// Geometric tail of the jump measure: `λ({-kh}) = c * a^(k - k0)` for `k >= k0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTail {
    pub k0: usize,
    pub c: f64,
    pub a: f64,
}

impl GeoTail {
    /// Total tail mass `c / (1 - a)`.
    pub fn mass(&self) -> f64 {
        self.c / (1.0 - self.a)
    }

    /// Rate at depth `k`, zero above the tail.
    pub fn rate(&self, k: usize) -> f64 {
        if k < self.k0 {
            0.0
        } else {
            self.c * self.a.powi((k - self.k0) as i32)
        }
    }

    /// `Σ_{j >= k} rate(j)`.
    pub fn mass_from(&self, k: usize) -> f64 {
        if k <= self.k0 {
            self.mass()
        } else {
            self.rate(k) / (1.0 - self.a)
        }
    }
}

/// Jump measure of an upwards skip-free Lévy chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    h: f64,
    rate_up: f64,
    down_atoms: Vec<(usize, f64)>,
    geo_tail: Option<GeoTail>,
}

impl ChainSpec {
    /// Validates and builds a spec. Atoms are stored sorted by depth.
    pub fn new(
        h: f64,
        rate_up: f64,
        mut down_atoms: Vec<(usize, f64)>,
        geo_tail: Option<GeoTail>,
    ) -> Result<Self, ModelError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(ModelError::InvalidStep(h));
        }
        if !(rate_up > 0.0 && rate_up.is_finite()) {
            return Err(ModelError::InvalidUpRate(rate_up));
        }
        down_atoms.sort_by_key(|&(k, _)| k);
        for (i, &(k, rate)) in down_atoms.iter().enumerate() {
            if k == 0 {
                return Err(ModelError::ZeroIndex);
            }
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(ModelError::InvalidRate { k, rate });
            }
            if i > 0 && down_atoms[i - 1].0 == k {
                return Err(ModelError::DuplicateAtom(k));
            }
        }
        if let Some(tail) = geo_tail {
            if tail.k0 == 0 {
                return Err(ModelError::ZeroIndex);
            }
            if !(tail.c > 0.0 && tail.c.is_finite() && tail.a > 0.0 && tail.a < 1.0) {
                return Err(ModelError::InvalidTail { c: tail.c, a: tail.a });
            }
            if let Some(&(k, _)) = down_atoms.iter().find(|&&(k, _)| k >= tail.k0) {
                return Err(ModelError::TailCollision { k, k0: tail.k0 });
            }
        }
        Ok(Self {
            h,
            rate_up,
            down_atoms,
            geo_tail,
        })
    }

    /// Nearest-neighbour chain: up `h` at `rate_up`, down `h` at `rate_down`.
    pub fn simple(h: f64, rate_up: f64, rate_down: f64) -> Result<Self, ModelError> {
        Self::new(h, rate_up, vec![(1, rate_down)], None)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn rate_up(&self) -> f64 {
        self.rate_up
    }

    pub fn down_atoms(&self) -> &[(usize, f64)] {
        &self.down_atoms
    }

    pub fn geo_tail(&self) -> Option<GeoTail> {
        self.geo_tail
    }

    /// `λ({-kh})`.
    pub fn down_rate(&self, k: usize) -> f64 {
        if let Some(tail) = self.geo_tail {
            if k >= tail.k0 {
                return tail.rate(k);
            }
        }
        self.down_atoms
            .binary_search_by_key(&k, |&(j, _)| j)
            .map(|i| self.down_atoms[i].1)
            .unwrap_or(0.0)
    }

    /// `λ((-∞, 0))`.
    pub fn down_mass(&self) -> f64 {
        self.down_mass_from(1)
    }

    /// `λ((-∞, -kh])`.
    pub fn down_mass_from(&self, k: usize) -> f64 {
        let atoms: f64 = self
            .down_atoms
            .iter()
            .filter(|&&(j, _)| j >= k)
            .map(|&(_, r)| r)
            .sum();
        atoms + self.geo_tail.map_or(0.0, |t| t.mass_from(k))
    }

    /// `λ(R)`.
    pub fn total_rate(&self) -> f64 {
        self.rate_up + self.down_mass()
    }

    /// Largest down-jump index with an atom, `None` when a geometric tail is present.
    pub fn max_down_index(&self) -> Option<usize> {
        if self.geo_tail.is_some() {
            None
        } else {
            Some(self.down_atoms.last().map_or(0, |&(k, _)| k))
        }
    }

    /// `Σ_k k h λ({-kh})`.
    pub fn down_first_moment(&self) -> f64 {
        let atoms: f64 = self.down_atoms.iter().map(|&(k, r)| k as f64 * r).sum();
        let tail = self.geo_tail.map_or(0.0, |t| {
            let (k0, a) = (t.k0 as f64, t.a);
            t.c * (k0 / (1.0 - a) + a / ((1.0 - a) * (1.0 - a)))
        });
        self.h * (atoms + tail)
    }

    /// `m_2 = ∫ x² λ(dx)`.
    pub fn second_moment(&self) -> f64 {
        let atoms: f64 = self
            .down_atoms
            .iter()
            .map(|&(k, r)| (k * k) as f64 * r)
            .sum();
        let tail = self.geo_tail.map_or(0.0, |t| {
            // Σ_{j>=0} a^j (k0 + j)^2
            let (k0, a) = (t.k0 as f64, t.a);
            let s0 = 1.0 / (1.0 - a);
            let s1 = a / ((1.0 - a) * (1.0 - a));
            let s2 = a * (1.0 + a) / ((1.0 - a) * (1.0 - a) * (1.0 - a));
            t.c * (k0 * k0 * s0 + 2.0 * k0 * s1 + s2)
        });
        self.h * self.h * (self.rate_up + atoms + tail)
    }

    /// Field-by-field comparison with relative tolerance `rel` (absolute for rates
    /// below `rel * λ(R)`).
    pub fn approx_eq(&self, other: &ChainSpec, rel: f64) -> bool {
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= rel * a.abs().max(b.abs()).max(scale);
        let scale = self.total_rate().max(other.total_rate()) * 1e-300;
        if !close(self.h, other.h, 0.0) || !close(self.rate_up, other.rate_up, scale) {
            return false;
        }
        match (self.geo_tail, other.geo_tail) {
            (None, None) => {}
            (Some(s), Some(o)) => {
                if s.k0 != o.k0 || !close(s.c, o.c, 0.0) || !close(s.a, o.a, 0.0) {
                    return false;
                }
            }
            _ => return false,
        }
        let last = |s: &ChainSpec| s.down_atoms.last().map_or(0, |&(k, _)| k);
        let kmax = last(self).max(last(other));
        (1..=kmax).all(|k| {
            let (a, b) = (self.down_rate(k), other.down_rate(k));
            (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() <= 1e-300
        })
    }
}

/// Long-term behaviour of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToPlusInfinity,
    Oscillates,
    ToMinusInfinity,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::ToPlusInfinity => "ToPlusInfinity",
            Direction::Oscillates => "Oscillates",
            Direction::ToMinusInfinity => "ToMinusInfinity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftClass {
    pub direction: Direction,
    pub psi_prime_0: f64,
    pub phi_0: f64,
    /// `+∞` exactly when the chain oscillates.
    pub phi_prime_0: f64,
}

/// `ψ(β) = ∫ (e^{βx} - 1) λ(dx)`.
pub fn psi(spec: &ChainSpec, beta: f64) -> f64 {
    debug_assert!(beta >= 0.0, "psi is evaluated on beta >= 0 only");
    let h = spec.h;
    let mut acc = spec.rate_up * (beta * h).exp_m1();
    for &(k, rate) in &spec.down_atoms {
        acc += rate * (-beta * k as f64 * h).exp_m1();
    }
    if let Some(t) = spec.geo_tail {
        // c [e^{-βk0h}/(1 - a e^{-βh}) - 1/(1-a)], numerator rearranged so that it
        // vanishes linearly at β = 0
        let num = (1.0 - t.a) * (-beta * t.k0 as f64 * h).exp_m1() + t.a * (-beta * h).exp_m1();
        let den = (1.0 - t.a * (-beta * h).exp()) * (1.0 - t.a);
        acc += t.c * num / den;
    }
    acc
}

/// `ψ'(β) = ∫ x e^{βx} λ(dx)`; at `β = 0` this is the mean drift.
pub fn psi_prime(spec: &ChainSpec, beta: f64) -> f64 {
    let h = spec.h;
    let mut acc = spec.rate_up * h * (beta * h).exp();
    for &(k, rate) in &spec.down_atoms {
        let kh = k as f64 * h;
        acc -= rate * kh * (-beta * kh).exp();
    }
    if let Some(t) = spec.geo_tail {
        let r = t.a * (-beta * h).exp();
        let k0 = t.k0 as f64;
        acc -= t.c * h * (-beta * k0 * h).exp() * (k0 / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)));
    }
    acc
}

/// `ψ(a) - ψ(b)` without cancellation between the two evaluations.
pub fn psi_diff(spec: &ChainSpec, a: f64, b: f64) -> f64 {
    let h = spec.h;
    let d = a - b;
    // e^{ax} - e^{bx} = e^{bx} (e^{(a-b)x} - 1)
    let mut acc = spec.rate_up * (b * h).exp() * (d * h).exp_m1();
    for &(k, rate) in &spec.down_atoms {
        let kh = k as f64 * h;
        acc += rate * (-b * kh).exp() * (-d * kh).exp_m1();
    }
    if let Some(t) = spec.geo_tail {
        let k0h = t.k0 as f64 * h;
        let (ea, eb) = ((-a * h).exp(), (-b * h).exp());
        // e^{-a k0 h}(1 - a_t e^{-bh}) - e^{-b k0 h}(1 - a_t e^{-ah})
        let diff_k0 = (-b * k0h).exp() * (-d * k0h).exp_m1();
        let diff_mix = (-b * k0h - a * h).exp() * (-d * (k0h - h)).exp_m1();
        let num = diff_k0 - t.a * diff_mix;
        acc += t.c * num / ((1.0 - t.a * ea) * (1.0 - t.a * eb));
    }
    acc
}

/// Largest root of ψ on `[0, ∞)`.
pub fn phi_zero(spec: &ChainSpec) -> f64 {
    if drift_sign(spec) >= 0 {
        return 0.0;
    }
    invert(spec, 0.0, PHI0_EPS)
}

/// `Φ(q)`, the right inverse of ψ.
pub fn phi(spec: &ChainSpec, q: f64) -> f64 {
    assert!(q >= 0.0, "phi requires q >= 0, got {q}");
    let lower = phi_zero(spec);
    if q == 0.0 {
        return lower;
    }
    invert(spec, q, lower)
}

/// `Φ'(q) = 1/ψ'(Φ(q))`, `+∞` for `q = 0` on an oscillating chain.
pub fn phi_prime(spec: &ChainSpec, q: f64) -> f64 {
    if q == 0.0 && drift_sign(spec) == 0 {
        return f64::INFINITY;
    }
    1.0 / psi_prime(spec, phi(spec, q))
}

pub fn classify(spec: &ChainSpec) -> DriftClass {
    let direction = match drift_sign(spec) {
        1 => Direction::ToPlusInfinity,
        0 => Direction::Oscillates,
        _ => Direction::ToMinusInfinity,
    };
    let psi_prime_0 = if direction == Direction::Oscillates {
        0.0
    } else {
        psi_prime(spec, 0.0)
    };
    DriftClass {
        direction,
        psi_prime_0,
        phi_0: phi_zero(spec),
        phi_prime_0: phi_prime(spec, 0.0),
    }
}

/// Exponential change of measure `dλ_c/dλ(x) = e^{cx}`.
pub fn tilt(spec: &ChainSpec, c: f64) -> ChainSpec {
    assert!(c >= 0.0, "tilt requires c >= 0, got {c}");
    let h = spec.h;
    ChainSpec {
        h,
        rate_up: spec.rate_up * (c * h).exp(),
        down_atoms: spec
            .down_atoms
            .iter()
            .map(|&(k, r)| (k, r * (-c * k as f64 * h).exp()))
            .collect(),
        geo_tail: spec.geo_tail.map(|t| GeoTail {
            k0: t.k0,
            c: t.c * (-c * t.k0 as f64 * h).exp(),
            a: t.a * (-c * h).exp(),
        }),
    }
}

/// Sign of `ψ'(0+)`, treating drifts within rounding of the jump moments as zero.
pub(crate) fn drift_sign(spec: &ChainSpec) -> i8 {
    let up = spec.rate_up * spec.h;
    let down = spec.down_first_moment();
    let drift = up - down;
    if drift.abs() <= 8.0 * f64::EPSILON * (up + down) {
        0
    } else if drift > 0.0 {
        1
    } else {
        -1
    }
}

/// Solves `ψ(β) = q` on `[lower, ∞)` with Newton steps safeguarded by bisection.
fn invert(spec: &ChainSpec, q: f64, lower: f64) -> f64 {
    let mut hi = 1.0_f64.max(2.0 * lower);
    while psi(spec, hi) <= q {
        hi *= 2.0;
    }
    let mut lo = lower;
    let tol = ROOT_TOL * q.max(1.0);
    // ψ is convex and increasing right of Φ(0): Newton from the upper end is monotone
    let mut x = hi;
    for _ in 0..500 {
        let f = psi(spec, x) - q;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let d = psi_prime(spec, x);
        let newton = x - f / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if f.abs() <= tol && step <= 4.0 * f64::EPSILON * x.max(1.0) {
            return x;
        }
        if hi - lo <= BRACKET_TOL * hi.max(1.0) {
            return x;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m05() -> ChainSpec {
        ChainSpec::simple(1.0, 0.5, 0.5).unwrap()
    }
    fn m07() -> ChainSpec {
        ChainSpec::simple(1.0, 0.7, 0.3).unwrap()
    }
    fn m03() -> ChainSpec {
        ChainSpec::simple(1.0, 0.3, 0.7).unwrap()
    }
    fn mg() -> ChainSpec {
        ChainSpec::new(1.0, 0.5, vec![], Some(GeoTail { k0: 1, c: 0.25, a: 0.5 })).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn psi_examples() {
        assert!(rel(psi(&m05(), 1.0), 1f64.cosh() - 1.0) < 1e-14);
        let e = 1f64.exp();
        assert!(rel(psi(&m07(), 1.0), 0.7 * (e - 1.0) + 0.3 * (1.0 / e - 1.0)) < 1e-14);
        assert_eq!(psi(&m07(), 0.0), 0.0);
        assert_eq!(psi(&mg(), 0.0), 0.0);
    }

    #[test]
    fn geometric_tail_psi_matches_truncated_sum() {
        let s = ChainSpec::new(0.5, 1.3, vec![(1, 0.2), (2, 0.1)], Some(GeoTail { k0: 4, c: 0.3, a: 0.6 })).unwrap();
        for &beta in &[0.0, 0.01, 0.5, 2.0] {
            let mut direct = s.rate_up() * ((beta * 0.5f64).exp() - 1.0);
            let mut deriv = s.rate_up() * 0.5 * (beta * 0.5f64).exp();
            for k in 1..400 {
                let x = -(k as f64) * 0.5;
                direct += s.down_rate(k) * ((beta * x).exp() - 1.0);
                deriv += s.down_rate(k) * x * (beta * x).exp();
            }
            assert!((psi(&s, beta) - direct).abs() < 1e-13, "beta={beta}");
            assert!((psi_prime(&s, beta) - deriv).abs() < 1e-13, "beta={beta}");
        }
        let m1: f64 = (1..400).map(|k| k as f64 * 0.5 * s.down_rate(k)).sum();
        assert!(rel(s.down_first_moment(), m1) < 1e-13);
        let m2: f64 = 0.25 * s.rate_up() + (1..400).map(|k| (k as f64 * 0.5).powi(2) * s.down_rate(k)).sum::<f64>();
        assert!(rel(s.second_moment(), m2) < 1e-13);
    }

    #[test]
    fn psi_diff_agrees_with_subtraction() {
        let s = ChainSpec::new(0.5, 1.3, vec![(1, 0.2)], Some(GeoTail { k0: 3, c: 0.3, a: 0.6 })).unwrap();
        for &(a, b) in &[(1.0, 0.5), (0.3, 2.0), (1.0, 1.0 + 1e-9)] {
            let d = psi_diff(&s, a, b);
            let naive = psi(&s, a) - psi(&s, b);
            assert!((d - naive).abs() < 1e-12, "{a} {b}: {d} vs {naive}");
        }
    }

    #[test]
    fn drift_examples() {
        assert!((psi_prime(&m07(), 0.0) - 0.4).abs() < 1e-15);
        assert_eq!(psi_prime(&m05(), 0.0), 0.0);
        assert!((psi_prime(&m03(), 0.0) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn phi_examples() {
        assert!((phi(&m03(), 0.0) - (7.0f64 / 3.0).ln()).abs() < 1e-13);
        assert_eq!(phi(&m07(), 0.0), 0.0);
        let golden = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((phi(&m05(), 0.5) - golden).abs() < 1e-13);
    }

    #[test]
    fn phi_prime_examples() {
        assert!((phi_prime(&m07(), 0.0) - 2.5).abs() < 1e-13);
        assert_eq!(phi_prime(&m05(), 0.0), f64::INFINITY);
        assert!((phi_prime(&m03(), 0.0) - 2.5).abs() < 1e-11);
    }

    #[test]
    fn classify_examples() {
        let c = classify(&m07());
        assert_eq!(c.direction, Direction::ToPlusInfinity);
        assert_eq!(c.phi_0, 0.0);
        let c = classify(&m05());
        assert_eq!(c.direction, Direction::Oscillates);
        assert_eq!(c.psi_prime_0, 0.0);
        assert_eq!(c.phi_prime_0, f64::INFINITY);
        let c = classify(&m03());
        assert_eq!(c.direction, Direction::ToMinusInfinity);
        assert!((c.phi_0 - (7.0f64 / 3.0).ln()).abs() < 1e-13);
        assert!((c.phi_prime_0 - 2.5).abs() < 1e-11);
        assert_eq!(classify(&mg()).direction, Direction::ToMinusInfinity);
    }

    #[test]
    fn oscillating_geometric_tail_is_recognised() {
        // mean down jump 0.25 * Σ k 0.5^{k-1} = 1 = rate_up
        let s = ChainSpec::new(1.0, 1.0, vec![], Some(GeoTail { k0: 1, c: 0.25, a: 0.5 })).unwrap();
        assert_eq!(classify(&s).direction, Direction::Oscillates);
        assert_eq!(phi_zero(&s), 0.0);
    }

    #[test]
    fn tilt_examples() {
        assert_eq!(tilt(&m07(), 0.0), m07());
        let t = tilt(&m03(), (7.0f64 / 3.0).ln());
        assert!(t.approx_eq(&m07(), 1e-14), "{t:?}");
        let s = ChainSpec::new(1.0, 0.5, vec![], Some(GeoTail { k0: 1, c: 0.25, a: 0.5 })).unwrap();
        let c = 0.3;
        let t = tilt(&s, c);
        assert!(rel(t.geo_tail().unwrap().a, 0.5 * (-c).exp()) < 1e-15);
        for &beta in &[0.5, 1.0] {
            let lhs = psi(&t, beta);
            let rhs = psi(&s, beta + c) - psi(&s, c);
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(ChainSpec::simple(0.0, 1.0, 1.0), Err(ModelError::InvalidStep(_))));
        assert!(matches!(ChainSpec::simple(1.0, 0.0, 1.0), Err(ModelError::InvalidUpRate(_))));
        assert!(matches!(ChainSpec::new(1.0, 1.0, vec![(0, 1.0)], None), Err(ModelError::ZeroIndex)));
        assert!(matches!(ChainSpec::new(1.0, 1.0, vec![(1, -1.0)], None), Err(ModelError::InvalidRate { .. })));
        assert!(matches!(
            ChainSpec::new(1.0, 1.0, vec![(2, 1.0), (2, 0.5)], None),
            Err(ModelError::DuplicateAtom(2))
        ));
        let tail = GeoTail { k0: 2, c: 0.1, a: 0.5 };
        assert!(matches!(
            ChainSpec::new(1.0, 1.0, vec![(3, 1.0)], Some(tail)),
            Err(ModelError::TailCollision { .. })
        ));
        let bad = GeoTail { k0: 2, c: 0.1, a: 1.0 };
        assert!(matches!(ChainSpec::new(1.0, 1.0, vec![], Some(bad)), Err(ModelError::InvalidTail { .. })));
    }
}
