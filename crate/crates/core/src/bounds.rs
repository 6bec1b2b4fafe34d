//! Certified upper bounds on step and attention Jacobian norms, with
//! empirical verification against measured spectral norms.
//!
//! Two bounds are implemented:
//!
//! - the normalization bound
//!   `‖J_step‖₂ ≤ (max_j |γ_j| / R)(1 + η ‖J_MSA(X)‖₂)`, where `R` lower
//!   bounds the pre-normalization row norms; and
//! - the attention Lipschitz bound
//!   `‖J_MSA(X)‖₂ ≤ Σ_h √3 ‖W_h^O‖₂ ‖W_h^V‖₂ √(‖β W_h^Q W_h^{Kᵀ}‖₂ r⁴(S+1) + S)`
//!   for states with row norms at most `r`. The per-head `W_h^O` is the
//!   `D_H`-row block of `wo` that multiplies head `h`'s output.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::attention::{msa, MsaWeights, StepConfig, TokenMatrix};
use crate::error::{Error, Result};
use crate::jacobian::{jac_msa, jac_step, spectral_norm_default};

/// How the MSA Jacobian norm on the right-hand side of the normalization
/// bound is obtained.
#[derive(Debug, Clone, Copy)]
pub enum MsaNormMode {
    /// Measure `‖J_MSA(X)‖₂` at the given state by power iteration.
    Measured,
    /// Substitute the attention Lipschitz bound evaluated at the state's
    /// maximum row norm.
    LipschitzBound,
}

/// Parameters recorded alongside a bound check.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BoundContext {
    pub r_floor: Option<f64>,
    pub eta: Option<f64>,
    pub gamma_max: Option<f64>,
    pub r: Option<f64>,
    pub tokens: Option<usize>,
    pub msa_norm: Option<f64>,
}

/// Outcome of comparing a measured spectral norm against a bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub context: BoundContext,
}

/// Populates a [`BoundCheck`]; satisfied iff `rhs − lhs ≥ −1e-8`.
pub fn check_bound(measured: f64, bound: f64, context: BoundContext) -> BoundCheck {
    let slack = bound - measured;
    BoundCheck {
        lhs: measured,
        rhs: bound,
        slack,
        satisfied: slack >= -1e-8,
        context,
    }
}

/// Right-hand side of the normalization bound:
/// `(gamma_max / r_floor) · (1 + eta · msa_norm)`.
pub fn normalization_bound_rhs(gamma_max: f64, r_floor: f64, eta: f64, msa_norm: f64) -> f64 {
    (gamma_max / r_floor) * (1.0 + eta * msa_norm)
}

/// Evaluates the normalization bound at a state, with the MSA norm either
/// measured or replaced by the Lipschitz bound.
pub fn prop3_bound(
    w: &MsaWeights,
    cfg: &StepConfig,
    r_floor: f64,
    x: &TokenMatrix,
    mode: MsaNormMode,
) -> Result<f64> {
    if !(r_floor > 0.0) {
        return Err(Error::Config("r_floor must be positive".into()));
    }
    let msa_norm = match mode {
        MsaNormMode::Measured => spectral_norm_default(&jac_msa(x, w)?.data)?,
        MsaNormMode::LipschitzBound => {
            let r = max_row_norm(x);
            castin_bound(w, r, x.tokens())?
        }
    };
    Ok(normalization_bound_rhs(
        cfg.norm.gamma_max_abs(),
        r_floor,
        cfg.eta,
        msa_norm,
    ))
}

/// The attention Lipschitz bound for states with row norms at most `r`.
pub fn castin_bound(w: &MsaWeights, r: f64, s: usize) -> Result<f64> {
    if !(r > 0.0) || s == 0 {
        return Err(Error::Config("need r > 0 and s >= 1".into()));
    }
    let mut total = 0.0;
    for (h, head) in w.heads.iter().enumerate() {
        let wo_norm = spectral_norm_default(&w.wo_block(h))?;
        let wv_norm = spectral_norm_default(&head.wv)?;
        let qk = w.beta * &head.wq * head.wk.transpose();
        let qk_norm = spectral_norm_default(&qk)?;
        let inner = qk_norm * r.powi(4) * (s as f64 + 1.0) + s as f64;
        total += 3.0_f64.sqrt() * wo_norm * wv_norm * inner.sqrt();
    }
    Ok(total)
}

/// Smallest pre-normalization row norm of `X + η ΔX`; this is the measured
/// `R` the normalization bound hypothesis needs.
pub fn measured_r_floor(x: &TokenMatrix, w: &MsaWeights, cfg: &StepConfig) -> Result<f64> {
    let c = cfg.conditioning_or_zero(x.tokens(), x.dim())?;
    let y = x.matrix() + cfg.eta * (c + msa(x, w)?.into_inner());
    let mut min = f64::INFINITY;
    for i in 0..y.nrows() {
        min = min.min(y.row(i).norm());
    }
    Ok(min)
}

pub fn max_row_norm(x: &TokenMatrix) -> f64 {
    (0..x.tokens())
        .map(|i| x.matrix().row(i).norm())
        .fold(0.0, f64::max)
}

/// Verifies the normalization bound on one instance: measures `R` from the
/// pre-normalization state, the step Jacobian norm, and the bound.
pub fn verify_normalization_bound(
    x: &TokenMatrix,
    w: &MsaWeights,
    cfg: &StepConfig,
) -> Result<BoundCheck> {
    let r_floor = measured_r_floor(x, w, cfg)?;
    let msa_norm = spectral_norm_default(&jac_msa(x, w)?.data)?;
    let bound = normalization_bound_rhs(cfg.norm.gamma_max_abs(), r_floor, cfg.eta, msa_norm);
    let measured = spectral_norm_default(&jac_step(x, w, cfg, None)?.data)?;
    Ok(check_bound(
        measured,
        bound,
        BoundContext {
            r_floor: Some(r_floor),
            eta: Some(cfg.eta),
            gamma_max: Some(cfg.norm.gamma_max_abs()),
            tokens: Some(x.tokens()),
            msa_norm: Some(msa_norm),
            r: None,
        },
    ))
}

/// Verifies the attention Lipschitz bound on one instance, with `r` taken
/// as the state's maximum row norm.
pub fn verify_castin_bound(x: &TokenMatrix, w: &MsaWeights) -> Result<BoundCheck> {
    let r = max_row_norm(x);
    let bound = castin_bound(w, r, x.tokens())?;
    let measured = spectral_norm_default(&jac_msa(x, w)?.data)?;
    Ok(check_bound(
        measured,
        bound,
        BoundContext {
            r: Some(r),
            tokens: Some(x.tokens()),
            ..BoundContext::default()
        },
    ))
}

/// One row of an η-sweep: the measured step-Jacobian norm at a step size.
#[derive(Debug, Clone, Serialize)]
pub struct EtaProbeRow {
    pub eta: f64,
    pub step_norm: f64,
}

/// Measures `‖J_step‖₂` over an ascending η grid. The update direction must
/// stay bounded away from zero row-wise (`‖ΔX_i‖ ≥ eps`), otherwise the
/// large-η limit is ill-posed.
pub fn eta_limit_probe(
    x: &TokenMatrix,
    w: &MsaWeights,
    base_cfg: &StepConfig,
    eta_grid: &[f64],
) -> Result<Vec<EtaProbeRow>> {
    if eta_grid.is_empty() || eta_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("eta grid must be positive".into()));
    }
    if eta_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("eta grid must be ascending".into()));
    }
    let c = base_cfg.conditioning_or_zero(x.tokens(), x.dim())?;
    let delta = c + msa(x, w)?.into_inner();
    for i in 0..delta.nrows() {
        if delta.row(i).norm() < crate::attention::DEFAULT_EPS_FLOOR {
            return Err(Error::DegenerateRow(i));
        }
    }
    let mut rows = Vec::with_capacity(eta_grid.len());
    for &eta in eta_grid {
        let mut cfg = base_cfg.clone();
        cfg.eta = eta;
        let norm = spectral_norm_default(&jac_step(x, w, &cfg, None)?.data)?;
        rows.push(EtaProbeRow {
            eta,
            step_norm: norm,
        });
    }
    Ok(rows)
}

/// One row of a token-count sweep: mean measured norms over state samples.
#[derive(Debug, Clone, Serialize)]
pub struct TokenSweepRow {
    pub tokens: usize,
    pub msa_norm_mean: f64,
    pub step_norm_mean: f64,
}

/// Sweeps the token count at fixed weights, measuring the raw MSA Jacobian
/// norm and the normalized step Jacobian norm, each averaged over `samples`
/// seeded random states with rows scaled to `row_norm`. Per-sample norms are
/// noisy; the mean is the quantity that exposes the growth-vs-flat contrast.
///
/// Norm estimates are budget-capped: power iteration runs at tolerance 1e-6
/// with a fixed iteration cap and keeps its last estimate on slow
/// convergence, which biases all cells identically and leaves the contrast
/// intact.
pub fn token_sweep(
    w: &MsaWeights,
    cfg: &StepConfig,
    token_counts: &[usize],
    row_norm: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<TokenSweepRow>> {
    use rand::Rng;
    use rand::SeedableRng;
    let d = w.model_dim();
    let measure = |m: &DMatrix<f64>| -> Result<f64> {
        match crate::jacobian::spectral_norm(m, 1e-6, 800) {
            Ok(v) => Ok(v),
            Err(Error::NoConvergence { last }) => Ok(last),
            Err(e) => Err(e),
        }
    };
    let mut rows = Vec::with_capacity(token_counts.len());
    for &s in token_counts {
        let mut msa_acc = 0.0;
        let mut step_acc = 0.0;
        for k in 0..samples {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                seed ^ (s as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((k as u64) << 32),
            );
            let raw = DMatrix::from_fn(s, d, |_, _| rng.gen_range(-1.0..1.0_f64));
            let mut m = raw;
            for i in 0..s {
                let n = m.row(i).norm();
                m.row_mut(i).scale_mut(row_norm / n);
            }
            let x = TokenMatrix::new(m)?;
            msa_acc += measure(&jac_msa(&x, w)?.data)?;
            step_acc += measure(&jac_step(&x, w, cfg, None)?.data)?;
        }
        rows.push(TokenSweepRow {
            tokens: s,
            msa_norm_mean: msa_acc / samples as f64,
            step_norm_mean: step_acc / samples as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{pi_normalize, HeadWeights, NormParams, Variant};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_unit_state(rng: &mut ChaCha8Rng, s: usize, d: usize) -> TokenMatrix {
        let m = DMatrix::from_fn(s, d, |_, _| rng.gen_range(-1.0..1.0));
        pi_normalize(&TokenMatrix::new(m).unwrap()).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, d: usize, h: usize, scale: f64) -> MsaWeights {
        let dh = d / h;
        let heads = (0..h)
            .map(|_| {
                HeadWeights::new(
                    DMatrix::from_fn(d, dh, |_, _| rng.gen_range(-scale..scale)),
                    DMatrix::from_fn(d, dh, |_, _| rng.gen_range(-scale..scale)),
                    DMatrix::from_fn(d, dh, |_, _| rng.gen_range(-scale..scale)),
                )
                .unwrap()
            })
            .collect();
        let wo = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-scale..scale));
        MsaWeights::new(heads, wo, MsaWeights::default_beta(dh)).unwrap()
    }

    #[test]
    fn normalization_bound_arithmetic() {
        assert_relative_eq!(normalization_bound_rhs(1.0, 1.0, 0.0, 5.0), 1.0);
        assert_relative_eq!(normalization_bound_rhs(2.0, 4.0, 1.0, 3.0), 2.0);
    }

    #[test]
    fn castin_hand_evaluation() {
        // H = 1, unit weight norms, β‖wq wkᵀ‖ = 1, r = 1, S = 2:
        // √3·√(1·1·3 + 2) = √15.
        let d = 2;
        let head = HeadWeights::new(
            DMatrix::identity(d, d),
            DMatrix::identity(d, d),
            DMatrix::identity(d, d),
        )
        .unwrap();
        let w = MsaWeights::new(vec![head], DMatrix::identity(d, d), 1.0).unwrap();
        let bound = castin_bound(&w, 1.0, 2).unwrap();
        assert_relative_eq!(bound, 15.0_f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn castin_zero_value_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let d = 4;
        let mut w = random_weights(&mut rng, d, 2, 1.0);
        for head in &mut w.heads {
            head.wv.fill(0.0);
        }
        assert_eq!(castin_bound(&w, 1.0, 4).unwrap(), 0.0);

        let w = random_weights(&mut rng, d, 2, 1.0);
        let b1 = castin_bound(&w, 1.0, 4).unwrap();
        let b2 = castin_bound(&w, 1.0, 8).unwrap();
        let b3 = castin_bound(&w, 2.0, 4).unwrap();
        assert!(b2 > b1);
        assert!(b3 > b1);
    }

    #[test]
    fn check_bound_examples() {
        let ok = check_bound(1.0, 2.0, BoundContext::default());
        assert!(ok.satisfied);
        assert_relative_eq!(ok.slack, 1.0);
        let bad = check_bound(2.0, 1.0, BoundContext::default());
        assert!(!bad.satisfied);
    }

    #[test]
    fn normalization_bound_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for trial in 0..10 {
            let d = [4, 6, 8][trial % 3];
            let h = 2;
            let s = 3 + trial % 4;
            let x = random_unit_state(&mut rng, s, d);
            let w = random_weights(&mut rng, d, h, 0.8);
            let gamma =
                nalgebra::DVector::from_fn(d, |_, _| rng.gen_range(0.5..2.0_f64));
            let eta = [0.1, 1.0, 10.0][trial % 3];
            let cfg = StepConfig::new(eta, NormParams::new(gamma, 1e-12).unwrap(), Variant::ItrSa)
                .unwrap();
            let check = verify_normalization_bound(&x, &w, &cfg).unwrap();
            assert!(check.satisfied, "trial {trial}: slack {}", check.slack);
        }
    }

    #[test]
    fn castin_bound_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let mut slack_sum = 0.0;
        for trial in 0..10 {
            let d = 6;
            let s = 3 + trial % 3;
            let x = random_unit_state(&mut rng, s, d);
            let w = random_weights(&mut rng, d, 2, 0.8);
            let check = verify_castin_bound(&x, &w).unwrap();
            assert!(check.satisfied, "trial {trial}: slack {}", check.slack);
            slack_sum += check.slack;
        }
        assert!(slack_sum / 10.0 > 0.0, "the bound is conservative on average");
    }

    #[test]
    fn eta_probe_collapses_at_zero_like_eta_and_plateaus() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let (s, d) = (4, 6);
        let x = random_unit_state(&mut rng, s, d);
        let w = random_weights(&mut rng, d, 2, 0.7);
        let c = random_unit_state(&mut rng, s, d);
        let cfg = StepConfig::new(1.0, NormParams::ones(d), Variant::ItrSa)
            .unwrap()
            .with_conditioning(c);

        // Tiny η: the chain collapses to the RMSNorm Jacobian at X.
        let tiny = 1e-9;
        let rows = eta_limit_probe(&x, &w, &cfg, &[tiny]).unwrap();
        let jrms = crate::jacobian::jac_rmsnorm(&x, &cfg.norm).unwrap();
        let expected = spectral_norm_default(&jrms.data).unwrap();
        assert_relative_eq!(rows[0].step_norm, expected, max_relative = 1e-6);

        // Large-η plateau: over the last decade the norm stays put.
        let grid: Vec<f64> = (0..14).map(|k| 10.0_f64.powi(k - 3)).collect();
        let rows = eta_limit_probe(&x, &w, &cfg, &grid).unwrap();
        let last = rows[rows.len() - 1].step_norm;
        let prev = rows[rows.len() - 2].step_norm;
        let ratio = last / prev;
        assert!((0.5..=1.5).contains(&ratio), "plateau ratio {ratio}");
    }

    #[test]
    fn eta_probe_rejects_degenerate_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let (s, d) = (3, 4);
        let x = random_unit_state(&mut rng, s, d);
        let mut w = random_weights(&mut rng, d, 2, 0.7);
        w.wo.fill(0.0);
        let cfg = StepConfig::new(1.0, NormParams::ones(d), Variant::ItrSa).unwrap();
        // ΔX = 0 + MSA(X) = 0: every row degenerate.
        assert!(matches!(
            eta_limit_probe(&x, &w, &cfg, &[1.0]).unwrap_err(),
            Error::DegenerateRow(_)
        ));
    }

    #[test]
    fn token_sweep_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let d = 8;
        let w = random_weights(&mut rng, d, 2, 0.25);
        let cfg = StepConfig::new(1.0, NormParams::ones(d), Variant::ItrSa).unwrap();
        let rows = token_sweep(&w, &cfg, &[4, 8], 10.0, 2, 7).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.msa_norm_mean > 0.0 && r.step_norm_mean > 0.0));
    }
}
