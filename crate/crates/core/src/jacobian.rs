//! Analytical Jacobians of the forward operators and composed steps, a
//! central finite-difference oracle, and spectral utilities.
//!
//! Every Jacobian uses the numerator layout over token-major state vectors:
//! output component `(i, c)` sits at row `i·D_out + c`, input component
//! `(k, a)` at column `k·D + a`. Row-wise operators (Π, RMSNorm, the
//! oscillator projections) therefore have exactly block-diagonal Jacobians.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{msa, omega_apply, proj_tangent_osc, MsaWeights, NormParams, OmegaBank,
    StepConfig, TokenMatrix, Variant};
use crate::error::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-12;
pub const DEFAULT_SPECTRAL_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum JacobianSource {
    Analytic,
    FiniteDifference,
}

/// A dense square `SD × SD` Jacobian of a state-update map, token-major.
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    pub data: DMatrix<f64>,
    pub source: JacobianSource,
}

impl JacobianMatrix {
    pub fn new(data: DMatrix<f64>, source: JacobianSource) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::shape(format!(
                "jacobian must be square, got {}×{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMap);
        }
        Ok(JacobianMatrix { data, source })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }
}

/// Spectral norm plus the full complex eigenvalue set of a square matrix.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pub spectral_norm: f64,
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_abs_eig: f64,
    pub max_real_part: f64,
}

fn per_row_projector_block(row: nalgebra::RowDVector<f64>, gamma: Option<&DVector<f64>>) -> DMatrix<f64> {
    let d = row.len();
    let n = row.norm();
    let mut block = DMatrix::identity(d, d);
    for a in 0..d {
        for b in 0..d {
            block[(a, b)] -= row[a] * row[b] / (n * n);
        }
    }
    block /= n;
    if let Some(g) = gamma {
        for a in 0..d {
            for b in 0..d {
                block[(a, b)] *= g[a];
            }
        }
    }
    block
}

/// Jacobian of Π: block-diagonal with blocks `(1/‖y_i‖)(I − y_i y_iᵀ/‖y_i‖²)`.
pub fn jac_pi(y: &TokenMatrix) -> Result<JacobianMatrix> {
    jac_rmsnorm(y, &NormParams::ones(y.dim()))
}

/// Jacobian of RMSNorm: the Π blocks with a left `diag(γ)` factor.
pub fn jac_rmsnorm(y: &TokenMatrix, p: &NormParams) -> Result<JacobianMatrix> {
    if p.gamma.len() != y.dim() {
        return Err(Error::shape("gamma length must equal D"));
    }
    let (s, d) = (y.tokens(), y.dim());
    let mut data = DMatrix::zeros(s * d, s * d);
    for i in 0..s {
        let norm = y.matrix().row(i).norm();
        if norm < p.eps_floor {
            return Err(Error::DegenerateRow(i));
        }
        let block = per_row_projector_block(y.matrix().row(i).into_owned(), Some(&p.gamma));
        data.view_mut((i * d, i * d), (d, d)).copy_from(&block);
    }
    JacobianMatrix::new(data, JacobianSource::Analytic)
}

/// Analytic Jacobian of one attention head, an `(S·D_H) × (S·D)` matrix.
///
/// Assembled as the softmax-derivative pathway (the row-softmax Jacobian
/// `diag(p) − ppᵀ` chained through the bilinear logit map) plus the
/// frozen-attention term, whose `(i, k)` block is `P_ik · W^{Vᵀ}`.
pub fn jac_sa_head(
    x: &TokenMatrix,
    w: &crate::attention::HeadWeights,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let (s, d) = (x.tokens(), x.dim());
    if w.model_dim() != d {
        return Err(Error::shape("state dim vs head dim"));
    }
    let dh = w.head_dim();
    let xm = x.matrix();
    let a = &w.wq * w.wk.transpose(); // D×D
    let p = crate::attention::attention_matrix(x, w, beta)?;
    let v = xm * &w.wv; // S×D_H
    let pv = &p * &v; // S×D_H
    let atx = xm * &a; // row i = Aᵀ x_i
    let ax = xm * a.transpose(); // row j = A x_j
    let xbar_a = (&p * xm) * a.transpose(); // row i = A x̄_i

    let mut j = DMatrix::zeros(s * dh, s * d);
    for i in 0..s {
        // Diagonal contribution: β Σ_j P_ij V_j (A(x_j − x̄_i))ᵀ.
        let mut weighted_v = v.clone();
        for row in 0..s {
            weighted_v.row_mut(row).scale_mut(p[(i, row)]);
        }
        let mut centered_ax = ax.clone();
        for row in 0..s {
            for col in 0..d {
                centered_ax[(row, col)] -= xbar_a[(i, col)];
            }
        }
        let diag_term = beta * weighted_v.transpose() * centered_ax; // D_H×D
        j.view_mut((i * dh, i * d), (dh, d)).copy_from(&diag_term);

        for k in 0..s {
            let pik = p[(i, k)];
            let mut block = j.view_mut((i * dh, k * d), (dh, d));
            for c in 0..dh {
                let key_coeff = beta * pik * (v[(k, c)] - pv[(i, c)]);
                for aa in 0..d {
                    block[(c, aa)] += key_coeff * atx[(i, aa)] + pik * w.wv[(aa, c)];
                }
            }
        }
    }
    Ok(j)
}

/// Analytic Jacobian of MSA: `Σ_h (I_S ⊗ wo[block_h]ᵀ) · J_{SA_h}`.
pub fn jac_msa(x: &TokenMatrix, w: &MsaWeights) -> Result<JacobianMatrix> {
    let (s, d) = (x.tokens(), x.dim());
    if w.model_dim() != d {
        return Err(Error::shape("state dim vs weights dim"));
    }
    let dh = w.head_dim();
    let mut data = DMatrix::zeros(s * d, s * d);
    for (h, head) in w.heads.iter().enumerate() {
        let jh = jac_sa_head(x, head, w.beta)?;
        let woh_t = w.wo_block(h).transpose(); // D×D_H
        for i in 0..s {
            let target = &woh_t * jh.view((i * dh, 0), (dh, s * d));
            let mut view = data.view_mut((i * d, 0), (d, s * d));
            view += target;
        }
    }
    JacobianMatrix::new(data, JacobianSource::Analytic)
}

/// The frozen-attention part of the MSA Jacobian:
/// `Σ_h P_h ⊗ (W_h^V · wo[block_h])ᵀ`, with the attention matrices held fixed
/// at their values for `x`. This is the exact Jacobian when `wq = wk = 0`.
pub fn jac_msa_frozen(x: &TokenMatrix, w: &MsaWeights) -> Result<JacobianMatrix> {
    let (s, d) = (x.tokens(), x.dim());
    if w.model_dim() != d {
        return Err(Error::shape("state dim vs weights dim"));
    }
    let mut data = DMatrix::zeros(s * d, s * d);
    for (h, head) in w.heads.iter().enumerate() {
        let p = crate::attention::attention_matrix(x, head, w.beta)?;
        let value_t = (&head.wv * w.wo_block(h)).transpose(); // D×D
        for i in 0..s {
            for k in 0..s {
                let mut block = data.view_mut((i * d, k * d), (d, d));
                let scaled = p[(i, k)] * &value_t;
                block += scaled;
            }
        }
    }
    JacobianMatrix::new(data, JacobianSource::Analytic)
}

fn blockdiag_product(blocks: &[DMatrix<f64>], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let mut row = 0;
    for block in blocks {
        let rows = block.nrows();
        let product = block * m.view((row, 0), (block.ncols(), m.ncols()));
        out.view_mut((row, 0), (rows, m.ncols())).copy_from(&product);
        row += rows;
    }
    out
}

fn osc_norm_blocks(y: &TokenMatrix, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let blocks = y.dim() / n;
    let mut out = Vec::with_capacity(y.tokens() * blocks);
    for i in 0..y.tokens() {
        for j in 0..blocks {
            let osc = y.matrix().view((i, j * n), (1, n)).transpose();
            let norm = osc.norm();
            if norm < crate::attention::DEFAULT_EPS_FLOOR {
                return Err(Error::DegenerateRow(i));
            }
            let mut block = DMatrix::identity(n, n);
            for a in 0..n {
                for b in 0..n {
                    block[(a, b)] -= osc[a] * osc[b] / (norm * norm);
                }
            }
            out.push(block / norm);
        }
    }
    Ok(out)
}

/// Analytic Jacobian of one full update step.
///
/// ItrSA: `J_RMSNorm(Y) · (I + η J_MSA(X))` with `Y = X + η(C + MSA(X))`.
/// AKOrN: the oscillator-wise chain through Π, Proj and the Omega layer,
/// including the derivative of `Proj_X` with respect to the `X` inside the
/// projector.
pub fn jac_step(
    x: &TokenMatrix,
    w: &MsaWeights,
    cfg: &StepConfig,
    bank: Option<&OmegaBank>,
) -> Result<JacobianMatrix> {
    let (s, d) = (x.tokens(), x.dim());
    let sd = s * d;
    match cfg.variant {
        Variant::ItrSa => {
            let c = cfg.conditioning_or_zero(s, d)?;
            let y = TokenMatrix::new(x.matrix() + cfg.eta * (c + msa(x, w)?.into_inner()))?;
            let jrms = jac_rmsnorm(&y, &cfg.norm)?;
            let jm = jac_msa(x, w)?;
            let inner = DMatrix::identity(sd, sd) + cfg.eta * jm.data;
            let blocks: Vec<DMatrix<f64>> = (0..s)
                .map(|i| jrms.data.view((i * d, i * d), (d, d)).into_owned())
                .collect();
            JacobianMatrix::new(blockdiag_product(&blocks, &inner), JacobianSource::Analytic)
        }
        Variant::Akorn => {
            let bank = bank.ok_or_else(|| Error::Config("AKOrN step needs an omega bank".into()))?;
            let n = bank.oscillator_dim();
            if bank.model_dim() != d {
                return Err(Error::shape("omega bank dim vs state dim"));
            }
            let c = cfg.conditioning_or_zero(s, d)?;
            let g = TokenMatrix::new(c + msa(x, w)?.into_inner())?;
            let jm = jac_msa(x, w)?;

            // Omega layer: oscillator block-diagonal of the generators.
            let mut j_omega = DMatrix::zeros(sd, sd);
            for i in 0..s {
                for j in 0..d / n {
                    let off = i * d + j * n;
                    j_omega
                        .view_mut((off, off), (n, n))
                        .copy_from(&bank.blocks()[j]);
                }
            }

            // Proj^(osc): (I − x̃x̃ᵀ)·J_G through G, plus the projector's own
            // X-derivative −((x̃ᵀg̃)I + x̃g̃ᵀ) on the diagonal oscillator blocks.
            let mut proj_blocks = Vec::with_capacity(s * (d / n));
            let mut j_proj_x = DMatrix::zeros(sd, sd);
            for i in 0..s {
                for j in 0..d / n {
                    let xo = x.matrix().view((i, j * n), (1, n)).transpose();
                    if (xo.norm() - 1.0).abs() > crate::attention::ON_SPHERE_TOL {
                        return Err(Error::NotOnSphere(i));
                    }
                    let go = g.matrix().view((i, j * n), (1, n)).transpose();
                    let mut p_block = DMatrix::identity(n, n);
                    let mut x_block = DMatrix::zeros(n, n);
                    let dot = xo.dot(&go);
                    for a in 0..n {
                        for b in 0..n {
                            p_block[(a, b)] -= xo[a] * xo[b];
                            x_block[(a, b)] -= xo[a] * go[b];
                        }
                        x_block[(a, a)] -= dot;
                    }
                    let off = i * d + j * n;
                    j_proj_x.view_mut((off, off), (n, n)).copy_from(&x_block);
                    proj_blocks.push(p_block);
                }
            }
            let j_proj = blockdiag_product(&proj_blocks, &jm.data) + j_proj_x;

            let delta = omega_apply(x, bank)?.into_inner()
                + proj_tangent_osc(x, &g, n)?.into_inner();
            let y = TokenMatrix::new(x.matrix() + cfg.eta * delta)?;
            let pi_blocks = osc_norm_blocks(&y, n)?;
            let inner = DMatrix::identity(sd, sd) + cfg.eta * (j_omega + j_proj);
            JacobianMatrix::new(blockdiag_product(&pi_blocks, &inner), JacobianSource::Analytic)
        }
        Variant::ContinuousProjected => Err(Error::Config(
            "jac_step applies to the discrete variants; use the oscillator module or FD for flows"
                .into(),
        )),
    }
}

/// Central-difference Jacobian oracle: column `k·D + a` is
/// `(f(x + h e) − f(x − h e)) / 2h`.
pub fn fd_jacobian<F>(f: F, x: &TokenMatrix, h: f64) -> Result<JacobianMatrix>
where
    F: Fn(&TokenMatrix) -> Result<TokenMatrix>,
{
    if !(h > 0.0) {
        return Err(Error::Config("fd step must be positive".into()));
    }
    let (s, d) = (x.tokens(), x.dim());
    let base = f(x)?;
    let out_len = base.tokens() * base.dim();
    let mut data = DMatrix::zeros(out_len, s * d);
    for k in 0..s {
        for a in 0..d {
            let mut plus = x.matrix().clone();
            let mut minus = x.matrix().clone();
            plus[(k, a)] += h;
            minus[(k, a)] -= h;
            let fp = f(&TokenMatrix::new(plus)?)?;
            let fm = f(&TokenMatrix::new(minus)?)?;
            let fp_v = fp.to_state_vector();
            let fm_v = fm.to_state_vector();
            for r in 0..out_len {
                let val = (fp_v[r] - fm_v[r]) / (2.0 * h);
                if !val.is_finite() {
                    return Err(Error::NonFiniteMap);
                }
                data[(r, k * d + a)] = val;
            }
        }
    }
    // Source is tracked even for rectangular results; squareness is only
    // enforced for state-update maps.
    if data.nrows() == data.ncols() {
        JacobianMatrix::new(data, JacobianSource::FiniteDifference)
    } else {
        Ok(JacobianMatrix {
            data,
            source: JacobianSource::FiniteDifference,
        })
    }
}

/// Largest singular value by power iteration on `mᵀm`, deterministically
/// seeded. Stops when the estimate's relative change falls below `tol`;
/// exceeding `max_iter` is an error carrying the last estimate. Ties in the
/// dominant singular space are fine — any maximizer stabilizes the estimate.
pub fn spectral_norm(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMap);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut v = DVector::from_fn(m.ncols(), |_, _| rng.gen_range(-1.0..1.0_f64));
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    v /= norm;
    let mut last = f64::NAN;
    for _ in 0..max_iter {
        let w = m * &v;
        let sigma = w.norm();
        if sigma == 0.0 {
            return Ok(0.0);
        }
        let u = m.transpose() * w;
        let u_norm = u.norm();
        if u_norm == 0.0 {
            return Ok(sigma);
        }
        v = u / u_norm;
        if last.is_finite() && (sigma - last).abs() <= tol * sigma.max(f64::MIN_POSITIVE) {
            return Ok(sigma);
        }
        last = sigma;
    }
    Err(Error::NoConvergence { last })
}

/// Spectral norm with the crate defaults.
pub fn spectral_norm_default(m: &DMatrix<f64>) -> Result<f64> {
    spectral_norm(m, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER)
}

/// Dense complex eigenvalue spectrum plus the power-iteration spectral norm.
pub fn eig_spectrum(j: &JacobianMatrix) -> Result<SpectralSummary> {
    let schur = nalgebra::Schur::try_new(j.data.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::EigFailure)?;
    let eigs = schur.complex_eigenvalues();
    let eigenvalues: Vec<Complex<f64>> = eigs.iter().cloned().collect();
    let max_abs_eig = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let max_real_part = eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let spectral_norm = spectral_norm_default(&j.data)?;
    Ok(SpectralSummary {
        spectral_norm,
        eigenvalues,
        max_abs_eig,
        max_real_part,
    })
}
