//! First-passage and extremum laws.
//!
//! Notation: `T_x` is the first entrance into `[x, ∞)`, `T_x^-` the first time
//! the chain is strictly below `-x`, `X̄`/`X̲` the running supremum/infimum and
//! `e_p` an independent exponential time of rate `p`. Off-lattice `x` is
//! floored to the lattice; barrier distances `y` must lie on it.

use thiserror::Error;

use crate::model::{self, ChainSpec};
use crate::scale::{lattice_exact, lattice_floor, ScaleError, ScaleTable};

/// Relative gap `|ψ(β) - target| / target` below which the analytic limit
/// replaces a removable singularity.
pub const SINGULAR_GAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExitError {
    #[error("y = {0} is not a positive lattice point")]
    OffLattice(f64),
    #[error("x = {0} must be nonnegative")]
    NegativeLevel(f64),
    #[error("discount rate must be positive here (got {0}); use ruin_prob for q = 0")]
    ZeroRate(f64),
    #[error("the overall infimum is finite only for chains drifting to +inf (psi'(0+) = {0})")]
    NotDriftingUp(f64),
    #[error("Laplace argument must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error(transparent)]
    Scale(#[from] ScaleError),
}

/// Which identity produced an [`ExitLaw`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    UpPassage,
    TwoSidedUp,
    DownBeforeUp,
    DownPassage,
    Ruin,
    SupAtExp,
}

impl ExitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitKind::UpPassage => "up_passage_lt",
            ExitKind::TwoSidedUp => "two_sided_up",
            ExitKind::DownBeforeUp => "down_before_up",
            ExitKind::DownPassage => "down_passage_lt",
            ExitKind::Ruin => "ruin_prob",
            ExitKind::SupAtExp => "sup_at_exp",
        }
    }
}

/// A probability or Laplace-transform value in `[0, 1]` with its inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitLaw {
    pub value: f64,
    pub kind: ExitKind,
    pub x: Option<f64>,
    pub y: Option<f64>,
    /// Discount rate `q`, Laplace argument `β` or exponential rate `p`.
    pub rate: Option<f64>,
}

fn check_level(x: f64) -> Result<(), ExitError> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(ExitError::NegativeLevel(x))
    }
}

fn lattice_y(y: f64, h: f64) -> Result<usize, ExitError> {
    match lattice_exact(y, h) {
        Some(m) if m > 0 => Ok(m as usize),
        _ => Err(ExitError::OffLattice(y)),
    }
}

fn lattice_ceil(x: f64, h: f64) -> i64 {
    let r = x / h;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.abs().max(1.0) {
        n as i64
    } else {
        r.ceil() as i64
    }
}

/// `E[e^{-βT_x} 1{T_x < ∞}] = e^{-Φ(β) h ⌈x/h⌉}`.
pub fn up_passage_lt(spec: &ChainSpec, x: f64, beta: f64) -> f64 {
    assert!(x >= 0.0 && beta >= 0.0);
    let n = lattice_ceil(x, spec.h()) as f64;
    (-model::phi(spec, beta) * spec.h() * n).exp()
}

/// `E[e^{-qT_y} 1{X̲_{T_y} >= -x}] = W^(q)(x)/W^(q)(x+y)`.
pub fn two_sided_up(spec: &ChainSpec, q: f64, x: f64, y: f64) -> Result<f64, ExitError> {
    check_level(x)?;
    let m = lattice_y(y, spec.h())?;
    let i = lattice_floor(x, spec.h()) as usize;
    let table = ScaleTable::new(spec, q, i + m);
    Ok(table.w_ratio(i, i + m)?)
}

/// `E[e^{-qT_x^-} 1{T_x^- < ∞}] = Z^(q)(x) - qh/(e^{Φ(q)h} - 1) W^(q)(x)` for `q > 0`.
pub fn down_passage_lt(spec: &ChainSpec, q: f64, x: f64) -> Result<f64, ExitError> {
    check_level(x)?;
    if !(q > 0.0) {
        return Err(ExitError::ZeroRate(q));
    }
    let n = lattice_floor(x, spec.h());
    let table = ScaleTable::new(spec, q, n as usize);
    let coef = undershoot_coef(spec, q, table.phi_q());
    Ok(table.z_at_index(n)? - coef * table.w_at_index(n)?)
}

/// `qh / (e^{Φ(q)h} - 1)`.
fn undershoot_coef(spec: &ChainSpec, q: f64, phi_q: f64) -> f64 {
    q * spec.h() / (phi_q * spec.h()).exp_m1()
}

/// `P(T_x^- < ∞) = 1 - W(x)/W(+∞)`; equal to 1 unless the chain drifts to `+∞`.
pub fn ruin_prob(spec: &ChainSpec, x: f64) -> f64 {
    assert!(x >= 0.0);
    if model::drift_sign(spec) <= 0 {
        return 1.0;
    }
    let n = lattice_floor(x, spec.h()) as usize;
    let w = crate::scale::w_table(spec, 0.0, n);
    1.0 - w[n] * model::psi_prime(spec, 0.0)
}

/// `E[e^{-qT_x^-} 1{T_x^- < T_y}] = Z^(q)(x) - Z^(q)(x+y) W^(q)(x)/W^(q)(x+y)`.
pub fn down_before_up(spec: &ChainSpec, q: f64, x: f64, y: f64) -> Result<f64, ExitError> {
    check_level(x)?;
    let m = lattice_y(y, spec.h())?;
    let i = lattice_floor(x, spec.h()) as usize;
    let table = ScaleTable::new(spec, q, i + m);
    let ratio = table.w_ratio(i, i + m)?;
    if q == 0.0 {
        return Ok(1.0 - ratio);
    }
    Ok(table.z_at_index(i as i64)? - table.z_at_index((i + m) as i64)? * ratio)
}

/// Failure parameter `e^{-Φ(p)h}` of the geometric law of `X̄_{e_p}/h`.
pub fn sup_at_exp(spec: &ChainSpec, p: f64) -> f64 {
    assert!(p > 0.0);
    (-model::phi(spec, p) * spec.h()).exp()
}

/// `(1 - e^{(β - b0)h}) / (target - ψ(β))` with `b0 = Φ(target)`, replaced by
/// its limit `h/ψ'(b0)` when `|ψ(β) - target| < SINGULAR_GAP * target`.
pub(crate) fn wh_ratio(spec: &ChainSpec, target: f64, b0: f64, beta: f64) -> f64 {
    if (model::psi(spec, beta) - target).abs() < SINGULAR_GAP * target {
        wh_ratio_limit(spec, b0)
    } else {
        wh_ratio_regular(spec, b0, beta)
    }
}

pub(crate) fn wh_ratio_regular(spec: &ChainSpec, b0: f64, beta: f64) -> f64 {
    let h = spec.h();
    -((beta - b0) * h).exp_m1() / model::psi_diff(spec, b0, beta)
}

pub(crate) fn wh_ratio_limit(spec: &ChainSpec, b0: f64) -> f64 {
    spec.h() / model::psi_prime(spec, b0)
}

/// `E[e^{β X̲_{e_p}}]`.
pub fn inf_lt_at_exp(spec: &ChainSpec, p: f64, beta: f64) -> f64 {
    assert!(p > 0.0 && beta >= 0.0);
    let h = spec.h();
    let phi_p = model::phi(spec, p);
    p * wh_ratio(spec, p, phi_p, beta) / -(-phi_p * h).exp_m1()
}

/// `P(-X̲_{e_q} = kh)`.
pub fn inf_pmf_at_exp(spec: &ChainSpec, q: f64, k: usize) -> Result<f64, ExitError> {
    Ok(inf_pmf_table(spec, q, k)?[k])
}

/// `P(-X̲_{e_q} = kh)` for `0 <= k <= k_max`.
///
/// Evaluated as `c e^{Φ(q)(k+1)h} (w_s[k] - w_s[k-1])` with `c = qh/(e^{Φ(q)h} - 1)`,
/// which is the same expression rewritten on the scaled table. The absolute
/// rounding error grows like `ε e^{Φ(q)kh}`, so entries far in the tail are
/// noise; negative noise is clamped to zero.
pub fn inf_pmf_table(spec: &ChainSpec, q: f64, k_max: usize) -> Result<Vec<f64>, ExitError> {
    if !(q > 0.0) {
        return Err(ExitError::ZeroRate(q));
    }
    let phi_q = model::phi(spec, q);
    let ws = crate::scale::w_scaled_table(spec, q, k_max);
    let coef = undershoot_coef(spec, q, phi_q);
    let step = phi_q * spec.h();
    Ok((0..=k_max)
        .map(|k| {
            let d = if k == 0 { ws[0] } else { ws[k] - ws[k - 1] };
            (coef * (step * (k + 1) as f64).exp() * d).max(0.0)
        })
        .collect())
}

/// `E[e^{β X̲_∞}] = (e^{βh} - 1) / (Φ'(0+) h ψ(β))` for chains drifting to `+∞`.
pub fn overall_inf_lt(spec: &ChainSpec, beta: f64) -> Result<f64, ExitError> {
    let drift = model::psi_prime(spec, 0.0);
    if model::drift_sign(spec) <= 0 {
        return Err(ExitError::NotDriftingUp(drift));
    }
    if !(beta > 0.0) {
        return Err(ExitError::NonPositiveBeta(beta));
    }
    let h = spec.h();
    Ok(drift * (beta * h).exp_m1() / (h * model::psi(spec, beta)))
}

/// Every exit identity applicable at `(q, x, y)`.
pub fn exit_report(spec: &ChainSpec, q: f64, x: f64, y: f64) -> Result<Vec<ExitLaw>, ExitError> {
    let law = |value, kind, xs: Option<f64>, ys: Option<f64>, rate| ExitLaw {
        value,
        kind,
        x: xs,
        y: ys,
        rate,
    };
    let mut out = vec![
        law(up_passage_lt(spec, y, q), ExitKind::UpPassage, None, Some(y), Some(q)),
        law(two_sided_up(spec, q, x, y)?, ExitKind::TwoSidedUp, Some(x), Some(y), Some(q)),
        law(down_before_up(spec, q, x, y)?, ExitKind::DownBeforeUp, Some(x), Some(y), Some(q)),
    ];
    if q > 0.0 {
        out.push(law(down_passage_lt(spec, q, x)?, ExitKind::DownPassage, Some(x), None, Some(q)));
        out.push(law(sup_at_exp(spec, q), ExitKind::SupAtExp, None, None, Some(q)));
    } else {
        out.push(law(ruin_prob(spec, x), ExitKind::Ruin, Some(x), None, None));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeoTail;

    fn m05() -> ChainSpec {
        ChainSpec::simple(1.0, 0.5, 0.5).unwrap()
    }
    fn m07() -> ChainSpec {
        ChainSpec::simple(1.0, 0.7, 0.3).unwrap()
    }
    fn m03() -> ChainSpec {
        ChainSpec::simple(1.0, 0.3, 0.7).unwrap()
    }
    fn mixed() -> ChainSpec {
        ChainSpec::new(0.5, 1.1, vec![(1, 0.3), (3, 0.2)], Some(GeoTail { k0: 5, c: 0.1, a: 0.7 })).unwrap()
    }

    const GOLDEN: f64 = 2.618033988749895; // (3 + √5)/2

    #[test]
    fn up_passage_examples() {
        assert_eq!(up_passage_lt(&m07(), 1.0, 0.0), 1.0);
        assert!((up_passage_lt(&m03(), 1.0, 0.0) - 3.0 / 7.0).abs() < 1e-13);
        assert!((up_passage_lt(&m05(), 2.0, 0.5) - GOLDEN.powi(-2)).abs() < 1e-13);
        // partial lattice steps round up
        assert_eq!(up_passage_lt(&m03(), 0.5, 0.0), up_passage_lt(&m03(), 1.0, 0.0));
    }

    #[test]
    fn two_sided_examples() {
        assert!((two_sided_up(&m05(), 0.0, 1.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert!((two_sided_up(&m05(), 0.5, 0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-13);
        assert!((two_sided_up(&m07(), 0.0, 0.0, 1.0).unwrap() - 0.7).abs() < 1e-14);
        assert!(matches!(two_sided_up(&m07(), 0.0, 0.0, 1.5), Err(ExitError::OffLattice(_))));
        assert!(matches!(two_sided_up(&m07(), 0.0, 0.0, 0.0), Err(ExitError::OffLattice(_))));
    }

    #[test]
    fn down_passage_examples() {
        let v = down_passage_lt(&m05(), 0.5, 0.0).unwrap();
        assert!((v - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-13);
        let phi1 = model::phi(&m07(), 1.0);
        let v = down_passage_lt(&m07(), 1.0, 0.0).unwrap();
        assert!((v - (1.0 - 1.0 / phi1.exp_m1() / 0.7)).abs() < 1e-13);
        assert!(matches!(down_passage_lt(&m07(), 0.0, 0.0), Err(ExitError::ZeroRate(_))));
        // decreasing in q
        let s = mixed();
        let vals: Vec<f64> = [0.1, 0.5, 1.0, 5.0, 50.0].iter().map(|&q| down_passage_lt(&s, q, 1.0).unwrap()).collect();
        assert!(vals.windows(2).all(|p| p[1] < p[0]));
        assert!(vals.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ruin_examples() {
        assert!((ruin_prob(&m07(), 0.0) - 3.0 / 7.0).abs() < 1e-14);
        assert!((ruin_prob(&m07(), 1.0) - 9.0 / 49.0).abs() < 1e-14);
        assert_eq!(ruin_prob(&m05(), 7.0), 1.0);
        assert_eq!(ruin_prob(&m03(), 7.0), 1.0);
        let r: Vec<f64> = (0..20).map(|x| ruin_prob(&m07(), x as f64)).collect();
        assert!(r.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn down_before_up_examples() {
        assert!((down_before_up(&m07(), 0.0, 0.0, 1.0).unwrap() - 0.3).abs() < 1e-14);
        assert!((down_before_up(&m05(), 0.0, 1.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((down_before_up(&m05(), 0.5, 0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn sup_examples() {
        assert!((sup_at_exp(&m05(), 0.5) - 1.0 / GOLDEN).abs() < 1e-13);
        assert!((sup_at_exp(&m03(), 1e-12) - 3.0 / 7.0).abs() < 1e-9);
        let s = sup_at_exp(&m07(), 1.0);
        assert!(s > 0.0 && s < 1.0);
        assert!((model::psi(&m07(), -s.ln()) - 1.0).abs() < 1e-12);
        let v: Vec<f64> = [0.1, 0.5, 1.0, 3.0].iter().map(|&p| sup_at_exp(&mixed(), p)).collect();
        assert!(v.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn inf_lt_examples() {
        for s in [m05(), m07(), m03(), mixed()] {
            assert!((inf_lt_at_exp(&s, 0.7, 0.0) - 1.0).abs() < 1e-12);
        }
        let phi = model::phi(&m05(), 0.5);
        let expected = 0.5 * model::phi_prime(&m05(), 0.5) / (1.0 - 1.0 / GOLDEN);
        assert!((inf_lt_at_exp(&m05(), 0.5, phi) - expected).abs() < 1e-12);
        // two-sided numeric limit
        let lo = inf_lt_at_exp(&m05(), 0.5, phi - 1e-6);
        let hi = inf_lt_at_exp(&m05(), 0.5, phi + 1e-6);
        assert!((0.5 * (lo + hi) - expected).abs() < 1e-9);
        // pmf summation oracle
        let s = m07();
        let pmf = inf_pmf_table(&s, 1.0, 200).unwrap();
        let direct: f64 = pmf.iter().enumerate().map(|(k, p)| (-2.0 * k as f64).exp() * p).sum();
        // noise in the far tail is damped by e^{-2k}
        let v = inf_lt_at_exp(&s, 1.0, 2.0);
        assert!(v > 0.0 && v <= 1.0);
        assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn singular_branches_meet() {
        let s = mixed();
        let b0 = model::phi(&s, 0.8);
        for &gap in &[1e-5, -1e-5] {
            let regular = wh_ratio_regular(&s, b0, b0 + gap);
            let limit = wh_ratio_limit(&s, b0);
            assert!(((regular - limit) / limit).abs() < 1e-4);
        }
        let regular = 0.5 * (wh_ratio_regular(&s, b0, b0 + 1e-5) + wh_ratio_regular(&s, b0, b0 - 1e-5));
        assert!(((regular - wh_ratio_limit(&s, b0)) / regular).abs() < 1e-6);
    }

    #[test]
    fn pmf_examples() {
        let p0 = inf_pmf_at_exp(&m05(), 0.5, 0).unwrap();
        assert!((p0 - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-13);
        let p1 = inf_pmf_at_exp(&m05(), 0.5, 1).unwrap();
        assert!((p1 - 0.6180339887498949 * 0.3819660112501051).abs() < 1e-12);
        // truncation points sit where the geometric tail is below 1e-9
        for (s, q, k) in [(m07(), 1.0, 12), (m05(), 2.0, 10)] {
            let pmf = inf_pmf_table(&s, q, k).unwrap();
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
        for (s, q) in [(m07(), 1.0), (m05(), 2.0), (mixed(), 1.0)] {
            let pmf = inf_pmf_table(&s, q, 6).unwrap();
            let mut cdf = 0.0;
            for (x, p) in pmf.iter().enumerate().take(6) {
                cdf += p;
                let below = down_passage_lt(&s, q, x as f64 * s.h()).unwrap();
                assert!((1.0 - cdf - below).abs() < 1e-10);
            }
        }
        let raw = inf_pmf_table(&m07(), 1.0, 12).unwrap();
        let w = crate::scale::w_table(&m07(), 1.0, 12);
        let c = undershoot_coef(&m07(), 1.0, model::phi(&m07(), 1.0));
        for k in 1..=6 {
            let direct = c * (w[k] - w[k - 1]) - w[k - 1];
            assert!((raw[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn overall_infimum() {
        let e = 1f64.exp();
        let psi1 = 0.7 * (e - 1.0) + 0.3 * (1.0 / e - 1.0);
        let v = overall_inf_lt(&m07(), 1.0).unwrap();
        assert!((v - (e - 1.0) / (2.5 * psi1)).abs() < 1e-13);
        assert!((overall_inf_lt(&m07(), 1e-6).unwrap() - 1.0).abs() < 1e-4);
        // P(-X̲_∞ <= kh) = W(kh)/W(∞)
        let w = crate::scale::w_table(&m07(), 0.0, 200);
        let direct: f64 = (0..=200)
            .map(|k| {
                let dw = if k == 0 { w[0] } else { w[k] - w[k - 1] };
                (-2.0 * k as f64).exp() * dw * 0.4
            })
            .sum();
        assert!((overall_inf_lt(&m07(), 2.0).unwrap() - direct).abs() < 1e-13);
        assert!(matches!(overall_inf_lt(&m05(), 1.0), Err(ExitError::NotDriftingUp(_))));
        assert!(matches!(overall_inf_lt(&m03(), 1.0), Err(ExitError::NotDriftingUp(_))));
    }

    #[test]
    fn report_lists_applicable_laws() {
        let r = exit_report(&m07(), 0.0, 1.0, 2.0).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|l| (0.0..=1.0).contains(&l.value)));
        let r = exit_report(&m07(), 0.5, 1.0, 2.0).unwrap();
        assert_eq!(r.len(), 5);
    }

    #[test]
    fn structural_identities() {
        let s = mixed();
        for q in [0.0, 0.3] {
            let whole = two_sided_up(&s, q, 0.0, 4.0).unwrap();
            let first = two_sided_up(&s, q, 0.0, 1.5).unwrap();
            let rest = two_sided_up(&s, q, 1.5, 2.5).unwrap();
            assert!((whole - first * rest).abs() < 1e-12);
        }
        for x in 0..6 {
            for y in 1..6 {
                let (x, y) = (x as f64 * 0.5, y as f64 * 0.5);
                let sum = two_sided_up(&s, 0.0, x, y).unwrap() + down_before_up(&s, 0.0, x, y).unwrap();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        let one = up_passage_lt(&s, 0.5, 0.4);
        for n in 1..20 {
            let v = up_passage_lt(&s, 0.5 * n as f64, 0.4);
            assert!((v / one.powi(n) - 1.0).abs() < 1e-12);
        }
    }
}
