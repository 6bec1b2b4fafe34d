//! State-update maps as dynamical systems over flat state vectors.
//!
//! [`DynamicalMap`] is the interface the Lyapunov estimator consumes: one
//! application of the map and its Jacobian at a point, both over token-major
//! state vectors.

use nalgebra::{DMatrix, DVector};

use crate::attention::{akorn_step, itrsa_step, MsaWeights, OmegaBank, StepConfig, TokenMatrix};
use crate::error::{Error, Result};
use crate::jacobian::jac_step;

pub trait DynamicalMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// A constant linear map `x ↦ A x`.
pub struct LinearMap {
    a: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::shape("linear map must be square"));
        }
        Ok(LinearMap { a })
    }
}

impl DynamicalMap for LinearMap {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }
}

/// The iterative self-attention update as a map on `R^{SD}`.
pub struct ItrSaMap {
    pub weights: MsaWeights,
    pub cfg: StepConfig,
    pub tokens: usize,
}

impl ItrSaMap {
    fn unpack(&self, x: &DVector<f64>) -> Result<TokenMatrix> {
        TokenMatrix::from_state_vector(x, self.tokens, self.weights.model_dim())
    }
}

impl DynamicalMap for ItrSaMap {
    fn dim(&self) -> usize {
        self.tokens * self.weights.model_dim()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(itrsa_step(&self.unpack(x)?, &self.weights, &self.cfg)?.to_state_vector())
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(jac_step(&self.unpack(x)?, &self.weights, &self.cfg, None)?.data)
    }
}

/// The Kuramoto-layer update as a map on `R^{SD}`.
pub struct AkornMap {
    pub weights: MsaWeights,
    pub bank: OmegaBank,
    pub cfg: StepConfig,
    pub tokens: usize,
}

impl AkornMap {
    fn unpack(&self, x: &DVector<f64>) -> Result<TokenMatrix> {
        TokenMatrix::from_state_vector(x, self.tokens, self.weights.model_dim())
    }
}

impl DynamicalMap for AkornMap {
    fn dim(&self) -> usize {
        self.tokens * self.weights.model_dim()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(akorn_step(&self.unpack(x)?, &self.weights, &self.bank, &self.cfg)?.to_state_vector())
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(jac_step(&self.unpack(x)?, &self.weights, &self.cfg, Some(&self.bank))?.data)
    }
}
