//! Isolated oscillatory systems: a single unit vector driven by an
//! antisymmetric generator, in three flavors.
//!
//! - continuous: `ẋ = Ωx`, Jacobian `Ω`;
//! - discrete plain: `x ← (I + ηΩ)x`, Jacobian `I + ηΩ`;
//! - discrete normalized: `x ← Π((I + ηΩ)x)`, Jacobian
//!   `(I − yyᵀ/‖y‖²)(I + ηΩ)/‖y‖` with `y = (I + ηΩ)x`.
//!
//! Antisymmetry makes `‖y‖² = ‖x‖² + η²‖Ωx‖²` exactly, so the normalized
//! variant never hits a degenerate norm from a unit state. The plain
//! discrete eigenvalues are `1 ± iηω_j` with `|λ| ≥ 1`; under a degenerate
//! generator spectrum (all `|ω_j|` equal) the normalized variant satisfies
//! `‖J‖₂ ≤ 1`. For non-degenerate spectra that bound is not asserted, only
//! measured.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jacobian::{eig_spectrum, JacobianMatrix, JacobianSource, SpectralSummary};
use crate::maps::DynamicalMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OscVariant {
    Continuous,
    DiscretePlain,
    DiscreteNormalized,
}

#[derive(Debug, Clone)]
pub struct OscSystem {
    omega: DMatrix<f64>,
    pub eta: f64,
    pub variant: OscVariant,
}

impl OscSystem {
    pub fn new(omega: DMatrix<f64>, eta: f64, variant: OscVariant) -> Result<Self> {
        if omega.nrows() != omega.ncols() {
            return Err(Error::shape("omega must be square"));
        }
        let skew = (&omega + omega.transpose()).norm();
        if skew > 1e-12 * omega.norm().max(1.0) {
            return Err(Error::Config("omega must be antisymmetric".into()));
        }
        if variant != OscVariant::Continuous && !(eta > 0.0) {
            return Err(Error::Config("discrete variants need eta > 0".into()));
        }
        Ok(OscSystem { omega, eta, variant })
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    /// Singular values of Ω, i.e. the `|ω_j|` frequency magnitudes.
    pub fn frequencies(&self) -> Vec<f64> {
        let svd = self.omega.clone().svd(false, false);
        svd.singular_values.iter().cloned().collect()
    }

    /// All `|ω_j|` equal to relative tolerance 1e-9.
    pub fn has_degenerate_spectrum(&self) -> bool {
        let freqs = self.frequencies();
        let max = freqs.iter().cloned().fold(0.0_f64, f64::max);
        if max == 0.0 {
            return true;
        }
        freqs.iter().all(|f| (f - max).abs() <= 1e-9 * max)
    }
}

/// The canonical 2D rotation generator `[[0, ω], [−ω, 0]]`.
pub fn rotation_generator_2d(omega: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, omega, -omega, 0.0])
}

/// Block-diagonal generator made of 2D rotation blocks, one frequency each.
pub fn rotation_generator(frequencies: &[f64]) -> DMatrix<f64> {
    let d = 2 * frequencies.len();
    let mut m = DMatrix::zeros(d, d);
    for (b, &omega) in frequencies.iter().enumerate() {
        m[(2 * b, 2 * b + 1)] = omega;
        m[(2 * b + 1, 2 * b)] = -omega;
    }
    m
}

/// One step of the system. The continuous variant exposes the flow
/// right-hand side `Ωx` for external integration.
pub fn osc_step(sys: &OscSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != sys.dim() {
        return Err(Error::shape("state length vs omega dim"));
    }
    match sys.variant {
        OscVariant::Continuous => Ok(&sys.omega * x),
        OscVariant::DiscretePlain => Ok(x + sys.eta * (&sys.omega * x)),
        OscVariant::DiscreteNormalized => {
            let y = x + sys.eta * (&sys.omega * x);
            let norm = y.norm();
            // From a unit state ‖y‖² = 1 + η²‖Ωx‖² ≥ 1; still guarded.
            if norm < crate::attention::DEFAULT_EPS_FLOOR {
                return Err(Error::DegenerateRow(0));
            }
            Ok(y / norm)
        }
    }
}

/// Closed-form Jacobian of the variant at `x`.
pub fn osc_jacobian(sys: &OscSystem, x: &DVector<f64>) -> Result<JacobianMatrix> {
    if x.len() != sys.dim() {
        return Err(Error::shape("state length vs omega dim"));
    }
    let d = sys.dim();
    let data = match sys.variant {
        OscVariant::Continuous => sys.omega.clone(),
        OscVariant::DiscretePlain => DMatrix::identity(d, d) + sys.eta * &sys.omega,
        OscVariant::DiscreteNormalized => {
            let y = x + sys.eta * (&sys.omega * x);
            let norm = y.norm();
            if norm < crate::attention::DEFAULT_EPS_FLOOR {
                return Err(Error::DegenerateRow(0));
            }
            let mut projector = DMatrix::<f64>::identity(d, d);
            for a in 0..d {
                for b in 0..d {
                    projector[(a, b)] -= y[a] * y[b] / (norm * norm);
                }
            }
            projector * (DMatrix::<f64>::identity(d, d) + sys.eta * &sys.omega) / norm
        }
    };
    JacobianMatrix::new(data, JacobianSource::Analytic)
}

/// Eigenvalue summary plus the variant-specific stability verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct OscEigenCheck {
    #[serde(skip)]
    pub summary: SpectralSummary,
    pub max_abs_eig: f64,
    pub spectral_norm: f64,
    pub degenerate_spectrum: bool,
    /// Continuous: `max |Re λ| ≤ 1e-10` (purely imaginary spectrum).
    pub continuous_marginal: Option<bool>,
    /// Discrete plain: `min |λ| ≥ 1 − 1e-10` (never contracting).
    pub plain_expanding: Option<bool>,
    /// Discrete normalized with degenerate spectrum: `‖J‖₂ ≤ 1 + 1e-10`.
    /// `None` when the spectrum is non-degenerate — measured, not asserted.
    pub normalized_contractive: Option<bool>,
}

pub fn osc_eigen_check(sys: &OscSystem, x: &DVector<f64>) -> Result<OscEigenCheck> {
    let jac = osc_jacobian(sys, x)?;
    let summary = eig_spectrum(&jac)?;
    let degenerate = sys.has_degenerate_spectrum();
    let mut check = OscEigenCheck {
        max_abs_eig: summary.max_abs_eig,
        spectral_norm: summary.spectral_norm,
        degenerate_spectrum: degenerate,
        continuous_marginal: None,
        plain_expanding: None,
        normalized_contractive: None,
        summary,
    };
    match sys.variant {
        OscVariant::Continuous => {
            let max_re = check
                .summary
                .eigenvalues
                .iter()
                .map(|z| z.re.abs())
                .fold(0.0, f64::max);
            check.continuous_marginal = Some(max_re <= 1e-10);
        }
        OscVariant::DiscretePlain => {
            let min_abs = check
                .summary
                .eigenvalues
                .iter()
                .map(|z| z.norm())
                .fold(f64::INFINITY, f64::min);
            check.plain_expanding = Some(min_abs >= 1.0 - 1e-10);
        }
        OscVariant::DiscreteNormalized => {
            if degenerate {
                check.normalized_contractive = Some(check.spectral_norm <= 1.0 + 1e-10);
            }
        }
    }
    Ok(check)
}

/// One cell of a stability phase scan.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseScanRow {
    pub eta: f64,
    pub omega: f64,
    pub max_abs_eig: f64,
    pub spectral_norm: f64,
    pub degenerate: bool,
}

/// Scans `(η, ω)` over the canonical 2D generator, reporting the Jacobian's
/// maximum eigenvalue modulus per cell. The normalized variant is evaluated
/// at a fixed unit state.
pub fn phase_scan(
    eta_grid: &[f64],
    omega_grid: &[f64],
    variant: OscVariant,
) -> Result<Vec<PhaseScanRow>> {
    use rayon::prelude::*;
    if eta_grid.iter().chain(omega_grid).any(|v| !(*v > 0.0)) {
        return Err(Error::Config("grids must be positive".into()));
    }
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let cells: Vec<(f64, f64)> = eta_grid
        .iter()
        .flat_map(|&eta| omega_grid.iter().map(move |&omega| (eta, omega)))
        .collect();
    cells
        .par_iter()
        .map(|&(eta, omega)| {
            let sys = OscSystem::new(rotation_generator_2d(omega), eta, variant)?;
            let check = osc_eigen_check(&sys, &x)?;
            Ok(PhaseScanRow {
                eta,
                omega,
                max_abs_eig: check.max_abs_eig,
                spectral_norm: check.spectral_norm,
                degenerate: check.degenerate_spectrum,
            })
        })
        .collect()
}

/// The discrete oscillator variants as dynamical maps, for Lyapunov runs.
pub struct OscMap {
    pub system: OscSystem,
}

impl DynamicalMap for OscMap {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self.system.variant {
            OscVariant::Continuous => Err(Error::Config(
                "continuous oscillator is a flow; integrate externally".into(),
            )),
            _ => osc_step(&self.system, x),
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(osc_jacobian(&self.system, x)?.data)
    }
}
