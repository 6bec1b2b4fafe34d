//! Dynamical-systems toolkit for recurrent self-attention.
//!
//! The crate treats a stack of recurrent attention updates as a discrete
//! dynamical system on token matrices and provides the machinery to study it
//! numerically at desk scale:
//!
//! - [`attention`]: forward operators — softmax attention, multi-head
//!   attention, spherical normalization, tangent projection, the Omega
//!   (antisymmetric rotation) layer, and the three update rules (iterative
//!   self-attention, Kuramoto-oscillator steps, projected continuous flow).
//! - [`jacobian`]: analytical Jacobians of every operator and composed step,
//!   a central finite-difference oracle, power-iteration spectral norms, and
//!   dense eigenvalue spectra.
//! - [`energy`]: relaxed energy functions for constrained single- and
//!   multi-head flows, weight-constraint constructors, descent verification,
//!   and the pseudo-energy / contribution-index diagnostics.
//! - [`lyapunov`]: finite-horizon Lyapunov spectrum estimation by QR
//!   re-orthonormalization, with a criticality verdict.
//! - [`regularizer`]: scalar regularizer values computed on a weight set.
//! - [`bounds`]: certified upper bounds on step/attention Jacobian norms and
//!   empirical soundness sweeps.
//! - [`oscillator`]: the isolated oscillatory systems (continuous, discrete,
//!   discrete-normalized), their closed-form Jacobians and stability scans.
//! - [`config`] / [`archive`]: run configuration, deterministic weight
//!   initialization, and bit-exact weight serialization for the CLI.
//!
//! All state derivatives use the numerator layout with token-major
//! vectorization: `vec(X)` stacks the rows of the `S × D` state, so per-token
//! operators have block-diagonal Jacobians with contiguous `D × D` blocks.

pub mod archive;
pub mod attention;
pub mod bounds;
pub mod config;
pub mod energy;
pub mod error;
pub mod jacobian;
pub mod lyapunov;
pub mod maps;
pub mod oscillator;
pub mod regularizer;

pub use attention::{
    akorn_step, continuous_rhs, itrsa_step, msa, omega_apply, pi_normalize, proj_tangent, rmsnorm,
    sa_head, softmax_rows, HeadWeights, MsaWeights, NormParams, OmegaBank, StepConfig, TokenMatrix,
    Variant,
};
pub use error::{Error, Result};
pub use jacobian::{
    eig_spectrum, fd_jacobian, jac_msa, jac_msa_frozen, jac_pi, jac_rmsnorm, jac_sa_head, jac_step,
    spectral_norm, JacobianMatrix, JacobianSource, SpectralSummary,
};
pub use maps::DynamicalMap;

/// Flattens an `S × D` matrix in token-major order: entry `(i, a)` lands at
/// position `i * D + a` of the result.
pub fn flatten_rows(m: &nalgebra::DMatrix<f64>) -> nalgebra::DVector<f64> {
    let (s, d) = m.shape();
    let mut v = nalgebra::DVector::zeros(s * d);
    for i in 0..s {
        for a in 0..d {
            v[i * d + a] = m[(i, a)];
        }
    }
    v
}

/// Inverse of [`flatten_rows`].
pub fn unflatten_rows(v: &nalgebra::DVector<f64>, s: usize, d: usize) -> nalgebra::DMatrix<f64> {
    assert_eq!(v.len(), s * d, "vector length does not match S*D");
    nalgebra::DMatrix::from_fn(s, d, |i, a| v[i * d + a])
}
