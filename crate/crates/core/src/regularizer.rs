//! Scalar regularizer values computed on an attention weight set.
//!
//! The toolkit evaluates the regularizers as diagnostics only; training
//! loops live downstream. Gradients, when needed, come from finite
//! differences over the weight entries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::attention::MsaWeights;
use crate::error::{Error, Result};
use crate::jacobian::spectral_norm_default;

/// Concatenated value matrix `[W_1^V, …, W_H^V] ∈ R^{D × D}`.
fn concat_values(w: &MsaWeights) -> DMatrix<f64> {
    let d = w.model_dim();
    let dh = w.head_dim();
    let mut out = DMatrix::zeros(d, d);
    for (h, head) in w.heads.iter().enumerate() {
        out.view_mut((0, h * dh), (d, dh)).copy_from(&head.wv);
    }
    out
}

fn antisymmetry_penalty(m: &DMatrix<f64>) -> f64 {
    let skew = m - m.transpose();
    skew.norm_squared()
}

/// `R_E-multi = ‖W^V W^O − (W^V W^O)ᵀ‖_F²` with `W^V` the concatenated
/// per-head value matrices. Depends only on the antisymmetric part of the
/// product.
pub fn r_e_multi(w: &MsaWeights) -> Result<f64> {
    Ok(antisymmetry_penalty(&(concat_values(w) * &w.wo)))
}

/// Single-head specialization of [`r_e_multi`]; `H` must be 1.
pub fn r_e_single(w: &MsaWeights) -> Result<f64> {
    if w.head_count() != 1 {
        return Err(Error::HeadCount(w.head_count()));
    }
    r_e_multi(w)
}

/// `R_Spec = Σ_W (σ²(W) − 1)² + Σ_b ‖b‖₂⁴` over all weight matrices in the
/// attention module (`wq_h`, `wk_h`, `wv_h` for every head, and `wo`) and
/// an optional list of bias vectors.
pub fn r_spec(w: &MsaWeights, biases: &[DVector<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for m in attention_matrices(w) {
        let sigma = spectral_norm_default(&m.1)?;
        total += (sigma * sigma - 1.0).powi(2);
    }
    for b in biases {
        total += b.norm().powi(4);
    }
    Ok(total)
}

fn attention_matrices(w: &MsaWeights) -> Vec<(String, DMatrix<f64>)> {
    let mut out = Vec::new();
    for (h, head) in w.heads.iter().enumerate() {
        out.push((format!("wq_{h}"), head.wq.clone()));
        out.push((format!("wk_{h}"), head.wk.clone()));
        out.push((format!("wv_{h}"), head.wv.clone()));
    }
    out.push(("wo".to_string(), w.wo.clone()));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularizerReport {
    pub r_e_multi: f64,
    /// Only defined for single-head weight sets.
    pub r_e_single: Option<f64>,
    pub r_spec: f64,
    pub per_matrix_sigmas: BTreeMap<String, f64>,
}

/// Evaluates all regularizers plus per-matrix spectral norms.
pub fn regularizer_report(w: &MsaWeights, biases: &[DVector<f64>]) -> Result<RegularizerReport> {
    let mut per_matrix_sigmas = BTreeMap::new();
    for (name, m) in attention_matrices(w) {
        per_matrix_sigmas.insert(name, spectral_norm_default(&m)?);
    }
    Ok(RegularizerReport {
        r_e_multi: r_e_multi(w)?,
        r_e_single: if w.head_count() == 1 {
            Some(r_e_single(w)?)
        } else {
            None
        },
        r_spec: r_spec(w, biases)?,
        per_matrix_sigmas,
    })
}

impl RegularizerReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
