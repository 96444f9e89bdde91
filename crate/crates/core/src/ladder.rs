//! Wiener–Hopf factors, ladder-height exponents and parent reconstruction.
//!
//! Constants: `k* = 1` and `k̂ = e^{-Φ(0)h}`, so the descending exponent
//! satisfies `φ(β)(e^{βh} - e^{Φ(0)h}) = ψ(β)`.

use thiserror::Error;

use crate::exit::{wh_ratio, SINGULAR_GAP};
use crate::model::{self, ChainSpec, GeoTail, ModelError};

/// Tolerance for negative masses produced by rounding.
pub const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LadderError {
    #[error("ascending killing {gamma} and descending killing {q} cannot both be positive")]
    KillingConflict { gamma: f64, q: f64 },
    #[error("q + Σφ_k must be positive and finite")]
    ZeroMass,
    #[error("phi_{k} = {value} is negative")]
    NegativePhi { k: usize, value: f64 },
    #[error("no root x > 1 for ascending killing {gamma}")]
    NoRoot { gamma: f64 },
    #[error("reconstructed rate at depth {k} is negative ({value})")]
    NegativeMass { k: usize, value: f64 },
    #[error("phi tail must start right after the listed coefficients (k0 = {k0}, listed {listed})")]
    TailMismatch { k0: usize, listed: usize },
    #[error("ladder identity violated: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ladder-height data of a chain, or the input to [`reconstruct_parent`].
#[derive(Debug, Clone, PartialEq)]
pub struct LadderData {
    pub h: f64,
    /// Killing rate of the strict ascending ladder heights.
    pub gamma_asc: f64,
    /// Killing rate of the descending ladder heights.
    pub q_desc: f64,
    /// `φ_1, φ_2, ...`: rate mass at depth `kh`.
    pub phi: Vec<f64>,
    /// `φ_k = c a^{k-k0}` for `k >= k0 = phi.len() + 1`.
    pub phi_tail: Option<GeoTail>,
    /// `x = e^{Φ(0)h}`.
    pub x_factor: f64,
}

impl LadderData {
    pub fn phi_at(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        match self.phi.get(k - 1) {
            Some(&v) => v,
            None => self.phi_tail.map_or(0.0, |t| t.rate(k)),
        }
    }

    /// `Σφ_k`.
    pub fn phi_mass(&self) -> f64 {
        self.phi.iter().sum::<f64>() + self.phi_tail.map_or(0.0, |t| t.mass())
    }
}

/// `κ*(α, β) = 1 - e^{-(β + Φ(α))h}`.
pub fn kappa_star(spec: &ChainSpec, alpha: f64, beta: f64) -> f64 {
    -(-(beta + model::phi(spec, alpha)) * spec.h()).exp_m1()
}

/// `κ̂(α, β) = k̂ (α - ψ(β)) / (1 - e^{(β - Φ(α))h})`.
pub fn kappa_hat(spec: &ChainSpec, alpha: f64, beta: f64) -> f64 {
    let k_hat = (-model::phi_zero(spec) * spec.h()).exp();
    k_hat / wh_ratio(spec, alpha, model::phi(spec, alpha), beta)
}

/// `E[exp(-α Ḡ*_{e_p} - β X̄_{e_p})]`.
pub fn sup_joint_lt(spec: &ChainSpec, p: f64, alpha: f64, beta: f64) -> f64 {
    let h = spec.h();
    (-model::phi(spec, p) * h).exp_m1() / (-(beta + model::phi(spec, p + alpha)) * h).exp_m1()
}

/// `E[exp(-α G_{e_p} + β X̲_{e_p})]`.
pub fn inf_joint_lt(spec: &ChainSpec, p: f64, alpha: f64, beta: f64) -> f64 {
    let target = p + alpha;
    let ratio = wh_ratio(spec, target, model::phi(spec, target), beta);
    p * ratio / -(-model::phi(spec, p) * spec.h()).exp_m1()
}

/// Laplace exponent of the strict ascending ladder heights, `λ(R)(1 - e^{-(β+Φ(0))h})`.
pub fn ascending_exponent(spec: &ChainSpec, beta: f64) -> f64 {
    spec.total_rate() * -(-(beta + model::phi_zero(spec)) * spec.h()).exp_m1()
}

/// Laplace exponent of the descending ladder heights, `ψ(β) / (e^{βh} - e^{Φ(0)h})`.
pub fn descending_exponent(spec: &ChainSpec, beta: f64) -> f64 {
    let h = spec.h();
    let b0 = model::phi_zero(spec);
    let x = (b0 * h).exp();
    if (beta - b0).abs() < SINGULAR_GAP * b0.max(1.0) {
        model::psi_prime(spec, b0) / (h * x)
    } else {
        model::psi_diff(spec, beta, b0) / (x * ((beta - b0) * h).exp_m1())
    }
}

/// Ladder data of `spec`.
///
/// `φ_k = Σ_{j>=k} λ({-jh}) x^{k-1-j}` solves `λ({-kh}) = xφ_k - φ_{k+1}`
/// without the forward error growth of that recursion when `x > 1`. A geometric
/// tail of the jump measure maps to a geometric tail of `φ` with the same ratio.
pub fn extract_ladder(spec: &ChainSpec) -> Result<LadderData, LadderError> {
    let h = spec.h();
    let b0 = model::phi_zero(spec);
    let x = (b0 * h).exp();
    let tail = spec.geo_tail();
    let dense_len = match tail {
        Some(t) => t.k0 - 1,
        None => spec.max_down_index().unwrap_or(0),
    };
    let pow = |e: i64| (b0 * h * e as f64).exp();
    let phi: Vec<f64> = (1..=dense_len)
        .map(|k| {
            let atoms: f64 = spec
                .down_atoms()
                .iter()
                .filter(|&&(j, _)| j >= k)
                .map(|&(j, r)| r * pow(k as i64 - 1 - j as i64))
                .sum();
            let from_tail = tail.map_or(0.0, |t| t.c * pow(k as i64 - t.k0 as i64) / (x - t.a));
            atoms + from_tail
        })
        .collect();
    let phi_tail = tail.map(|t| GeoTail {
        k0: t.k0,
        c: t.c / (x - t.a),
        a: t.a,
    });
    let q_desc = if b0 == 0.0 {
        model::psi_prime(spec, 0.0).max(0.0) / h
    } else {
        0.0
    };
    let data = LadderData {
        h,
        gamma_asc: ascending_exponent(spec, 0.0),
        q_desc,
        phi,
        phi_tail,
        x_factor: x,
    };
    if let Some((i, &v)) = data.phi.iter().enumerate().find(|&(_, &v)| v < -NEGATIVE_TOL) {
        return Err(LadderError::NegativePhi { k: i + 1, value: v });
    }
    let scale = spec.total_rate();
    let first = spec.total_rate() - x * spec.rate_up();
    if (data.phi_at(1) - first).abs() > 1e-9 * scale {
        return Err(LadderError::Inconsistent(format!("phi_1 = {} but λ(R) - xλ(h) = {first}", data.phi_at(1))));
    }
    if (data.q_desc + data.phi_mass() - spec.rate_up()).abs() > 1e-9 * scale {
        return Err(LadderError::Inconsistent("q + Σφ_k differs from λ({h})".into()));
    }
    Ok(data)
}

/// Rebuilds the parent chain from descending-ladder data, returning it with
/// `x = e^{Φ(0)h}`.
pub fn reconstruct_parent(data: &LadderData) -> Result<(ChainSpec, f64), LadderError> {
    let (gamma, q) = (data.gamma_asc, data.q_desc);
    if gamma > 0.0 && q > 0.0 {
        return Err(LadderError::KillingConflict { gamma, q });
    }
    if let Some(t) = data.phi_tail {
        if t.k0 != data.phi.len() + 1 {
            return Err(LadderError::TailMismatch {
                k0: t.k0,
                listed: data.phi.len(),
            });
        }
    }
    if let Some((i, &v)) = data.phi.iter().enumerate().find(|&(_, &v)| !(v >= 0.0)) {
        return Err(LadderError::NegativePhi { k: i + 1, value: v });
    }
    let s = data.phi_mass();
    if !(q >= 0.0 && gamma >= 0.0 && q + s > 0.0 && (q + s).is_finite()) {
        return Err(LadderError::ZeroMass);
    }
    let x = if gamma == 0.0 { 1.0 } else { ascending_root(data.phi_at(1), s, gamma)? };

    let len = data.phi.len();
    let mut atoms = Vec::with_capacity(len);
    for k in 1..=len {
        let v = x * data.phi_at(k) - data.phi_at(k + 1);
        if v < -NEGATIVE_TOL {
            return Err(LadderError::NegativeMass { k, value: v });
        }
        if v > 0.0 {
            atoms.push((k, v));
        }
    }
    let tail = match data.phi_tail {
        Some(t) => {
            if x < t.a {
                return Err(LadderError::NegativeMass {
                    k: t.k0,
                    value: t.c * (x - t.a),
                });
            }
            Some(GeoTail {
                k0: t.k0,
                c: t.c * (x - t.a),
                a: t.a,
            })
        }
        None => None,
    };
    let spec = ChainSpec::new(data.h, q + s, atoms, tail)?;
    Ok((spec, x))
}

/// Larger root of `S x² + (φ_1 - S - γ)x - φ_1 = 0`, required to exceed 1.
fn ascending_root(phi1: f64, s: f64, gamma: f64) -> Result<f64, LadderError> {
    if !(s > 0.0) {
        return Err(LadderError::NoRoot { gamma });
    }
    let b = phi1 - s - gamma;
    let disc = b * b + 4.0 * s * phi1;
    // b <= 0 here because φ_1 <= S, so -b + sqrt(disc) has no cancellation
    let x = if b <= 0.0 {
        (-b + disc.sqrt()) / (2.0 * s)
    } else {
        2.0 * phi1 / (b + disc.sqrt())
    };
    if x > 1.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(LadderError::NoRoot { gamma })
    }
}
