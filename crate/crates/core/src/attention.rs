//! Forward operators: attention, normalizations, projections, the Omega
//! layer, and the three state-update rules.
//!
//! Conventions. A state is an `S × D` matrix with one token per row. Rows are
//! treated as column vectors in bilinear forms, so the attention logit between
//! tokens `i` and `j` is `β · x_iᵀ (W^Q W^{Kᵀ}) x_j`. Normalization divides a
//! row (or oscillator) by its Euclidean norm; rows that fall below
//! [`NormParams::eps_floor`] are an error, never clamped.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_FLOOR: f64 = 1e-12;

/// An `S × D` state matrix, one token per row. Entries are validated finite
/// on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    m: DMatrix<f64>,
}

impl TokenMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::shape("token matrix must be at least 1×1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMap);
        }
        Ok(TokenMatrix { m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let s = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(DMatrix::from_fn(s, d, |i, j| rows[i][j]))
    }

    pub fn tokens(&self) -> usize {
        self.m.nrows()
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    /// Token-major vectorization: entry `(i, a)` at position `i * D + a`.
    pub fn to_state_vector(&self) -> DVector<f64> {
        crate::flatten_rows(&self.m)
    }

    pub fn from_state_vector(v: &DVector<f64>, s: usize, d: usize) -> Result<Self> {
        if v.len() != s * d {
            return Err(Error::shape(format!(
                "state vector length {} does not match {s}×{d}",
                v.len()
            )));
        }
        Self::new(crate::unflatten_rows(v, s, d))
    }

    pub fn is_unit_rows(&self, tol: f64) -> bool {
        (0..self.tokens()).all(|i| (self.m.row(i).norm() - 1.0).abs() <= tol)
    }

    pub fn is_unit_oscillators(&self, n: usize, tol: f64) -> bool {
        if n == 0 || self.dim() % n != 0 {
            return false;
        }
        let blocks = self.dim() / n;
        (0..self.tokens()).all(|i| {
            (0..blocks).all(|j| {
                let osc = self.m.view((i, j * n), (1, n));
                (osc.norm() - 1.0).abs() <= tol
            })
        })
    }
}

/// Query/key/value projections for one attention head, each `D × D_H`.
#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
}

impl HeadWeights {
    pub fn new(wq: DMatrix<f64>, wk: DMatrix<f64>, wv: DMatrix<f64>) -> Result<Self> {
        if wq.shape() != wk.shape() || wq.shape() != wv.shape() {
            return Err(Error::shape("head projections must share a D×D_H shape"));
        }
        if [&wq, &wk, &wv]
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteMap);
        }
        Ok(HeadWeights { wq, wk, wv })
    }

    pub fn model_dim(&self) -> usize {
        self.wq.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.wq.ncols()
    }
}

/// Multi-head attention weights: `H` heads, output projection `wo: D × D`,
/// and the inverse temperature `beta`.
#[derive(Debug, Clone)]
pub struct MsaWeights {
    pub heads: Vec<HeadWeights>,
    pub wo: DMatrix<f64>,
    pub beta: f64,
}

impl MsaWeights {
    pub fn new(heads: Vec<HeadWeights>, wo: DMatrix<f64>, beta: f64) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::shape("at least one head required"));
        }
        let d = heads[0].model_dim();
        let dh = heads[0].head_dim();
        if heads
            .iter()
            .any(|h| h.model_dim() != d || h.head_dim() != dh)
        {
            return Err(Error::shape("heads must share dimensions"));
        }
        if heads.len() * dh != d {
            return Err(Error::shape(format!(
                "H·D_H = {}·{dh} must equal D = {d}",
                heads.len()
            )));
        }
        if wo.nrows() != d || wo.ncols() != d {
            return Err(Error::shape("wo must be D×D"));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(MsaWeights { heads, wo, beta })
    }

    /// The customary inverse temperature `1/√D_H`.
    pub fn default_beta(head_dim: usize) -> f64 {
        1.0 / (head_dim as f64).sqrt()
    }

    pub fn model_dim(&self) -> usize {
        self.heads[0].model_dim()
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].head_dim()
    }

    /// The `D_H × D` row block of `wo` that multiplies head `h`'s output.
    pub fn wo_block(&self, h: usize) -> DMatrix<f64> {
        let dh = self.head_dim();
        self.wo.view((h * dh, 0), (dh, self.model_dim())).into()
    }
}

/// Normalization parameters: per-feature scaling `gamma` and the minimum row
/// norm accepted before normalization.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: DVector<f64>,
    pub eps_floor: f64,
}

impl NormParams {
    pub fn new(gamma: DVector<f64>, eps_floor: f64) -> Result<Self> {
        if !(eps_floor > 0.0) {
            return Err(Error::Config("eps_floor must be positive".into()));
        }
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMap);
        }
        Ok(NormParams { gamma, eps_floor })
    }

    /// `gamma = 1`, the plain spherical normalization Π.
    pub fn ones(dim: usize) -> Self {
        NormParams {
            gamma: DVector::repeat(dim, 1.0),
            eps_floor: DEFAULT_EPS_FLOOR,
        }
    }

    pub fn gamma_max_abs(&self) -> f64 {
        self.gamma.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()))
    }
}

/// One antisymmetric `N × N` generator per oscillator slot (`D/N` of them).
#[derive(Debug, Clone)]
pub struct OmegaBank {
    omegas: Vec<DMatrix<f64>>,
    n: usize,
}

impl OmegaBank {
    /// Validates antisymmetry of each block: `‖Ω + Ωᵀ‖_F ≤ 1e-12·‖Ω‖_F`.
    pub fn new(omegas: Vec<DMatrix<f64>>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::shape("omega bank must not be empty"));
        }
        let n = omegas[0].nrows();
        for (j, om) in omegas.iter().enumerate() {
            if om.nrows() != n || om.ncols() != n {
                return Err(Error::shape(format!("omega block {j} is not {n}×{n}")));
            }
            let sym = (om + om.transpose()).norm();
            if sym > 1e-12 * om.norm().max(1.0) {
                return Err(Error::Config(format!("omega block {j} is not antisymmetric")));
            }
        }
        Ok(OmegaBank { omegas, n })
    }

    pub fn oscillator_dim(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.omegas
    }

    pub fn model_dim(&self) -> usize {
        self.n * self.omegas.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    ItrSa,
    Akorn,
    ContinuousProjected,
}

/// Per-step configuration: step size, normalization, update variant, the
/// oscillator split (AKOrN only), and the conditioning input `C` injected
/// each iteration (`None` means zero).
#[derive(Debug, Clone)]
pub struct StepConfig {
    pub eta: f64,
    pub norm: NormParams,
    pub variant: Variant,
    pub oscillator_dim: Option<usize>,
    pub conditioning: Option<TokenMatrix>,
}

impl StepConfig {
    pub fn new(eta: f64, norm: NormParams, variant: Variant) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        Ok(StepConfig {
            eta,
            norm,
            variant,
            oscillator_dim: None,
            conditioning: None,
        })
    }

    pub fn with_oscillator_dim(mut self, n: usize) -> Self {
        self.oscillator_dim = Some(n);
        self
    }

    pub fn with_conditioning(mut self, c: TokenMatrix) -> Self {
        self.conditioning = Some(c);
        self
    }

    pub(crate) fn conditioning_or_zero(&self, s: usize, d: usize) -> Result<DMatrix<f64>> {
        match &self.conditioning {
            Some(c) => {
                if c.tokens() != s || c.dim() != d {
                    return Err(Error::shape("conditioning input shape mismatch"));
                }
                Ok(c.matrix().clone())
            }
            None => Ok(DMatrix::zeros(s, d)),
        }
    }
}

/// Row-wise softmax with per-row max subtraction. Each output row sums to 1.
pub fn softmax_rows(logits: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let (s, c) = logits.shape();
    let mut out = DMatrix::zeros(s, c);
    for i in 0..s {
        let row_max = logits.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..c {
            let e = (logits[(i, j)] - row_max).exp();
            out[(i, j)] = e;
            sum += e;
        }
        for j in 0..c {
            out[(i, j)] /= sum;
        }
    }
    Ok(out)
}

/// The row-stochastic attention matrix `softmax(β X W^Q W^{Kᵀ} Xᵀ)`.
pub fn attention_matrix(x: &TokenMatrix, w: &HeadWeights, beta: f64) -> Result<DMatrix<f64>> {
    if x.dim() != w.model_dim() {
        return Err(Error::shape(format!(
            "state dim {} vs head dim {}",
            x.dim(),
            w.model_dim()
        )));
    }
    let q = x.matrix() * &w.wq;
    let k = x.matrix() * &w.wk;
    softmax_rows(&(beta * q * k.transpose()))
}

/// One attention head: `softmax(β X W^Q W^{Kᵀ} Xᵀ) X W^V`, an `S × D_H` matrix.
pub fn sa_head(x: &TokenMatrix, w: &HeadWeights, beta: f64) -> Result<DMatrix<f64>> {
    let p = attention_matrix(x, w, beta)?;
    Ok(p * x.matrix() * &w.wv)
}

/// Multi-head attention: head outputs concatenated along features, then the
/// output projection. Equivalently `Σ_h SA_h(X) · wo[block_h]`.
pub fn msa(x: &TokenMatrix, w: &MsaWeights) -> Result<TokenMatrix> {
    let d = w.model_dim();
    if x.dim() != d {
        return Err(Error::shape(format!("state dim {} vs weights dim {d}", x.dim())));
    }
    let mut out = DMatrix::zeros(x.tokens(), d);
    for (h, head) in w.heads.iter().enumerate() {
        let o = sa_head(x, head, w.beta)?;
        out += o * w.wo_block(h);
    }
    TokenMatrix::new(out)
}

fn normalize_rows(y: &DMatrix<f64>, eps_floor: f64) -> Result<DMatrix<f64>> {
    let mut out = y.clone();
    for i in 0..y.nrows() {
        let n = y.row(i).norm();
        if n < eps_floor {
            return Err(Error::DegenerateRow(i));
        }
        out.row_mut(i).scale_mut(1.0 / n);
    }
    Ok(out)
}

/// Spherical normalization Π: each row divided by its Euclidean norm.
pub fn pi_normalize(y: &TokenMatrix) -> Result<TokenMatrix> {
    TokenMatrix::new(normalize_rows(y.matrix(), DEFAULT_EPS_FLOOR)?)
}

/// Accepted deviation from unit norm in projection inputs. Wide enough for
/// finite-difference probes around on-sphere states (step 1e-5).
pub const ON_SPHERE_TOL: f64 = 1e-4;

/// Row-wise tangent projection: `(I − x_i x_iᵀ) y_i`. Requires unit rows in `x`.
pub fn proj_tangent(x: &TokenMatrix, y: &TokenMatrix) -> Result<TokenMatrix> {
    if x.tokens() != y.tokens() || x.dim() != y.dim() {
        return Err(Error::shape("proj_tangent operands must match"));
    }
    for i in 0..x.tokens() {
        if (x.matrix().row(i).norm() - 1.0).abs() > ON_SPHERE_TOL {
            return Err(Error::NotOnSphere(i));
        }
    }
    let mut out = y.matrix().clone();
    for i in 0..x.tokens() {
        let dot = x.matrix().row(i).dot(&y.matrix().row(i));
        for a in 0..x.dim() {
            out[(i, a)] -= dot * x.matrix()[(i, a)];
        }
    }
    TokenMatrix::new(out)
}

/// `diag(γ) · Π(Y)` row-wise. With `γ = 1` this is exactly [`pi_normalize`].
///
/// Note the divisor is the row's L2 norm, not the conventional RMS
/// `‖y‖/√D`; the two differ by that constant `√D` factor.
pub fn rmsnorm(y: &TokenMatrix, p: &NormParams) -> Result<TokenMatrix> {
    if p.gamma.len() != y.dim() {
        return Err(Error::shape("gamma length must equal D"));
    }
    let mut out = normalize_rows(y.matrix(), p.eps_floor)?;
    for i in 0..out.nrows() {
        for a in 0..out.ncols() {
            out[(i, a)] *= p.gamma[a];
        }
    }
    TokenMatrix::new(out)
}

/// Applies `Ω_j` to oscillator `(i, j)` of the state.
pub fn omega_apply(x: &TokenMatrix, bank: &OmegaBank) -> Result<TokenMatrix> {
    let n = bank.oscillator_dim();
    if x.dim() != bank.model_dim() {
        return Err(Error::shape(format!(
            "state dim {} vs omega bank dim {}",
            x.dim(),
            bank.model_dim()
        )));
    }
    let blocks = x.dim() / n;
    let mut out = DMatrix::zeros(x.tokens(), x.dim());
    for i in 0..x.tokens() {
        for j in 0..blocks {
            let osc = x.matrix().view((i, j * n), (1, n)).transpose();
            let rotated = &bank.blocks()[j] * osc;
            for a in 0..n {
                out[(i, j * n + a)] = rotated[a];
            }
        }
    }
    TokenMatrix::new(out)
}

/// Oscillator-wise spherical normalization.
pub fn pi_normalize_osc(y: &TokenMatrix, n: usize) -> Result<TokenMatrix> {
    check_oscillator_split(y.dim(), n)?;
    let blocks = y.dim() / n;
    let mut out = y.matrix().clone();
    for i in 0..y.tokens() {
        for j in 0..blocks {
            let norm = y.matrix().view((i, j * n), (1, n)).norm();
            if norm < DEFAULT_EPS_FLOOR {
                return Err(Error::DegenerateRow(i));
            }
            for a in 0..n {
                out[(i, j * n + a)] /= norm;
            }
        }
    }
    TokenMatrix::new(out)
}

/// Oscillator-wise tangent projection; every oscillator of `x` must be unit.
pub fn proj_tangent_osc(x: &TokenMatrix, y: &TokenMatrix, n: usize) -> Result<TokenMatrix> {
    if x.tokens() != y.tokens() || x.dim() != y.dim() {
        return Err(Error::shape("proj_tangent_osc operands must match"));
    }
    check_oscillator_split(x.dim(), n)?;
    let blocks = x.dim() / n;
    let mut out = y.matrix().clone();
    for i in 0..x.tokens() {
        for j in 0..blocks {
            let xo = x.matrix().view((i, j * n), (1, n));
            if (xo.norm() - 1.0).abs() > ON_SPHERE_TOL {
                return Err(Error::NotOnSphere(i));
            }
            let yo = y.matrix().view((i, j * n), (1, n));
            let dot = xo.dot(&yo);
            for a in 0..n {
                out[(i, j * n + a)] -= dot * xo[(0, a)];
            }
        }
    }
    TokenMatrix::new(out)
}

fn check_oscillator_split(d: usize, n: usize) -> Result<()> {
    if n == 0 || d % n != 0 {
        return Err(Error::shape(format!("oscillator dim {n} must divide D = {d}")));
    }
    Ok(())
}

/// One iterative self-attention update:
/// `RMSNorm(X + η (C + MSA(X)))`.
pub fn itrsa_step(x: &TokenMatrix, w: &MsaWeights, cfg: &StepConfig) -> Result<TokenMatrix> {
    let c = cfg.conditioning_or_zero(x.tokens(), x.dim())?;
    let delta = c + msa(x, w)?.into_inner();
    let y = TokenMatrix::new(x.matrix() + cfg.eta * delta)?;
    rmsnorm(&y, &cfg.norm)
}

/// One Kuramoto-layer update:
/// `Π^(osc)(X + η (Omg^(osc)(X) + Proj^(osc)_X(C + MSA(X))))`.
pub fn akorn_step(
    x: &TokenMatrix,
    w: &MsaWeights,
    bank: &OmegaBank,
    cfg: &StepConfig,
) -> Result<TokenMatrix> {
    let n = bank.oscillator_dim();
    let c = cfg.conditioning_or_zero(x.tokens(), x.dim())?;
    let g = TokenMatrix::new(c + msa(x, w)?.into_inner())?;
    let delta = omega_apply(x, bank)?.into_inner() + proj_tangent_osc(x, &g, n)?.into_inner();
    let y = TokenMatrix::new(x.matrix() + cfg.eta * delta)?;
    pi_normalize_osc(&y, n)
}

/// Right-hand side of the projected continuous single-head flow:
/// `Proj_X(softmax(β X W^Q W^{Kᵀ} Xᵀ) X W^V)`. Every output row is orthogonal
/// to the corresponding state row.
pub fn continuous_rhs(x: &TokenMatrix, w: &HeadWeights, beta: f64) -> Result<TokenMatrix> {
    let sa = TokenMatrix::new(sa_head(x, w, beta)?)?;
    proj_tangent(x, &sa)
}
