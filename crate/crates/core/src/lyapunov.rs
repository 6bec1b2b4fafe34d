//! Finite-horizon Lyapunov spectrum estimation by the QR method.
//!
//! An orthonormal tangent basis is propagated through the step Jacobians and
//! re-orthonormalized by QR with a positive-diagonal `R`; the exponents are
//! the per-step averages of `ln R_ii`. In exact arithmetic this equals the
//! definitional `(1/2T)·ln eig(Λ^(T))` built from the explicit Jacobian
//! product. Exponents are natural-log, per unit step.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::DynamicalMap;

pub const DEFAULT_HORIZON: usize = 16;
pub const DEFAULT_CRITICALITY_BAND: f64 = 0.1;

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovSpectrum {
    /// Sorted descending, natural log, per unit step.
    pub exponents: Vec<f64>,
    pub horizon: usize,
    pub basis_dim: usize,
    pub reorthonormalize_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

impl std::fmt::Display for Criticality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Criticality::Subcritical => write!(f, "subcritical"),
            Criticality::Critical => write!(f, "critical"),
            Criticality::Supercritical => write!(f, "supercritical"),
        }
    }
}

/// QR decomposition with the diagonal of `R` forced positive by column sign
/// flips, so its logarithms are real.
fn qr_positive(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            for j in 0..r.ncols() {
                r[(i, j)] = -r[(i, j)];
            }
            for j in 0..q.nrows() {
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    (q, r)
}

/// Estimates the finite-horizon Lyapunov spectrum of `step` starting at `x0`,
/// tracking `basis_dim ≤ dim` tangent directions for `horizon` steps.
pub fn lyapunov_spectrum(
    step: &dyn DynamicalMap,
    x0: &DVector<f64>,
    horizon: usize,
    basis_dim: usize,
    reorthonormalize_every: usize,
) -> Result<LyapunovSpectrum> {
    let dim = step.dim();
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if basis_dim == 0 || basis_dim > dim {
        return Err(Error::Config(format!(
            "basis_dim must lie in 1..={dim}, got {basis_dim}"
        )));
    }
    if reorthonormalize_every == 0 {
        return Err(Error::Config("reorthonormalize_every must be at least 1".into()));
    }
    if x0.len() != dim {
        return Err(Error::shape("initial state length mismatch"));
    }

    let mut x = x0.clone();
    // Initial tangent basis: the first basis_dim coordinate directions.
    let mut q = DMatrix::zeros(dim, basis_dim);
    for i in 0..basis_dim {
        q[(i, i)] = 1.0;
    }
    let mut log_sums = vec![0.0_f64; basis_dim];

    for t in 0..horizon {
        let jac = step.jacobian(&x)?;
        q = jac * q;
        let due = (t + 1) % reorthonormalize_every == 0 || t + 1 == horizon;
        if due {
            let (qq, r) = qr_positive(&q);
            for i in 0..basis_dim {
                let rii = r[(i, i)];
                if !(rii > 1e-300) {
                    return Err(Error::TangentCollapse { direction: i, step: t });
                }
                log_sums[i] += rii.ln();
            }
            q = qq.columns(0, basis_dim).into_owned();
        }
        x = step.apply(&x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedAt(t));
        }
    }

    let mut exponents: Vec<f64> = log_sums.iter().map(|s| s / horizon as f64).collect();
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(LyapunovSpectrum {
        exponents,
        horizon,
        basis_dim,
        reorthonormalize_every,
    })
}

/// `(λ_max, λ_mean)` of a spectrum.
pub fn max_mean_exponents(s: &LyapunovSpectrum) -> (f64, f64) {
    let max = s.exponents[0];
    let mean = s.exponents.iter().sum::<f64>() / s.exponents.len() as f64;
    (max, mean)
}

/// Critical iff `|λ_max| ≤ band`; otherwise the sign decides.
pub fn criticality_report(s: &LyapunovSpectrum, band: f64) -> Criticality {
    let (max, _) = max_mean_exponents(s);
    if max.abs() <= band {
        Criticality::Critical
    } else if max < 0.0 {
        Criticality::Subcritical
    } else {
        Criticality::Supercritical
    }
}

impl LyapunovSpectrum {
    /// CSV with a `rank,exponent` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,exponent\n");
        for (i, e) in self.exponents.iter().enumerate() {
            out.push_str(&format!("{},{:?}\n", i + 1, e));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spectrum serializes")
    }
}
