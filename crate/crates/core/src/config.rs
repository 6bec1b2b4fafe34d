//! Run configuration and deterministic weight initialization.
//!
//! Everything random flows from `seed` through a counter-based stream with a
//! fixed draw order, so identical configs reproduce identical weights
//! bitwise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{
    pi_normalize, pi_normalize_osc, HeadWeights, MsaWeights, NormParams, OmegaBank, StepConfig,
    TokenMatrix, Variant,
};
use crate::energy::{make_orthogonal_heads, make_symmetric_value, OrthoHeadSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dims {
    pub tokens: usize,
    pub dim: usize,
    pub heads: usize,
    #[serde(default)]
    pub oscillator_dim: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    Ones,
    Constant(f64),
    Values(Vec<f64>),
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Ones
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    Gaussian { std: f64 },
    Orthogonal,
    ConstrainedSingle,
    ConstrainedMulti,
}

/// How the AKOrN state is initialized from the conditioning input: the
/// formula is a config choice, either the conditioning copied and
/// oscillator-normalized, or random unit oscillators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AkornInit {
    CopyConditioning,
    RandomOscillators,
}

impl Default for AkornInit {
    fn default() -> Self {
        AkornInit::CopyConditioning
    }
}

fn default_horizon() -> usize {
    crate::lyapunov::DEFAULT_HORIZON
}

fn default_eta() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: Dims,
    pub variant: Variant,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub gamma: GammaSpec,
    /// Overrides the default inverse temperature `1/√D_H`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub init: InitSpec,
    #[serde(default)]
    pub akorn_init: AkornInit,
    /// Standard deviation of the random conditioning input; zero or absent
    /// means no conditioning.
    #[serde(default)]
    pub conditioning_std: Option<f64>,
}

impl RunConfig {
    /// Desk-scale defaults: small enough that dense `SD × SD` Jacobians and
    /// full eigen-decompositions run in seconds.
    pub fn desk_preset(seed: u64, variant: Variant) -> Self {
        RunConfig {
            seed,
            dims: Dims {
                tokens: 8,
                dim: 32,
                heads: 4,
                oscillator_dim: Some(4),
            },
            variant,
            eta: 1.0,
            gamma: GammaSpec::Ones,
            beta: None,
            horizon: 16,
            init: InitSpec::Gaussian {
                std: 1.0 / (32.0_f64).sqrt(),
            },
            akorn_init: AkornInit::default(),
            conditioning_std: None,
        }
    }

    /// Paper-scale preset (D = 512, H = 8, η = 1.0, N = 8, a 81-token
    /// board); expect long dense-Jacobian runtimes.
    pub fn paper_preset(seed: u64, variant: Variant) -> Self {
        RunConfig {
            seed,
            dims: Dims {
                tokens: 81,
                dim: 512,
                heads: 8,
                oscillator_dim: Some(8),
            },
            variant,
            eta: 1.0,
            gamma: GammaSpec::Ones,
            beta: None,
            horizon: 16,
            init: InitSpec::Gaussian {
                std: 1.0 / (512.0_f64).sqrt(),
            },
            akorn_init: AkornInit::default(),
            conditioning_std: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims.dim;
        let h = self.dims.heads;
        if self.dims.tokens == 0 || d == 0 || h == 0 {
            return Err(Error::Config("dims must be positive".into()));
        }
        if d % h != 0 {
            return Err(Error::Config(format!("H = {h} must divide D = {d}")));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(Error::Config("beta must be positive".into()));
            }
        }
        if let GammaSpec::Values(v) = &self.gamma {
            if v.len() != d {
                return Err(Error::Config("gamma length must equal D".into()));
            }
            if v.iter().any(|g| !g.is_finite()) {
                return Err(Error::Config("gamma must be finite".into()));
            }
        }
        if self.variant == Variant::Akorn {
            let n = self
                .dims
                .oscillator_dim
                .ok_or_else(|| Error::Config("AKOrN needs an oscillator dim".into()))?;
            if n == 0 || d % n != 0 {
                return Err(Error::Config(format!("N = {n} must divide D = {d}")));
            }
        }
        match self.init {
            InitSpec::Gaussian { std } => {
                if !(std > 0.0) || !std.is_finite() {
                    return Err(Error::Config("gaussian std must be positive".into()));
                }
            }
            InitSpec::ConstrainedSingle => {
                if h != 1 {
                    return Err(Error::Config(
                        "constrained-single init requires H = 1".into(),
                    ));
                }
            }
            InitSpec::ConstrainedMulti => {
                if d % (2 * h) != 0 {
                    return Err(Error::Divisibility { two_h: 2 * h, d });
                }
            }
            InitSpec::Orthogonal => {}
        }
        if let Some(std) = self.conditioning_std {
            if !(std >= 0.0) || !std.is_finite() {
                return Err(Error::Config("conditioning std must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn beta_value(&self) -> f64 {
        self.beta
            .unwrap_or_else(|| MsaWeights::default_beta(self.dims.dim / self.dims.heads))
    }

    pub fn gamma_vector(&self) -> DVector<f64> {
        match &self.gamma {
            GammaSpec::Ones => DVector::repeat(self.dims.dim, 1.0),
            GammaSpec::Constant(c) => DVector::repeat(self.dims.dim, *c),
            GammaSpec::Values(v) => DVector::from_vec(v.clone()),
        }
    }

    pub fn step_config(&self) -> Result<StepConfig> {
        let norm = NormParams::new(self.gamma_vector(), crate::attention::DEFAULT_EPS_FLOOR)?;
        let mut cfg = StepConfig::new(self.eta, norm, self.variant)?;
        if let Some(n) = self.dims.oscillator_dim {
            cfg = cfg.with_oscillator_dim(n);
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Weights produced by [`init_weights`]: a standard attention stack, an
/// orthogonal head set (constrained-multi init), or both roles of the
/// constrained-single stack.
pub struct InitializedWeights {
    pub msa: Option<MsaWeights>,
    pub ortho: Option<OrthoHeadSet>,
    pub bank: Option<OmegaBank>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v * std
    })
}

fn orthogonal_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let raw = gaussian_matrix(rng, d, d, 1.0);
    let qr = raw.qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..d {
        if r[(i, i)] < 0.0 {
            for row in 0..d {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    q
}

fn random_bank(rng: &mut ChaCha8Rng, d: usize, n: usize, std: f64) -> Result<OmegaBank> {
    let blocks = (0..d / n)
        .map(|_| {
            let m = gaussian_matrix(rng, n, n, std);
            (&m - m.transpose()) * 0.5
        })
        .collect();
    OmegaBank::new(blocks)
}

/// Deterministic weight construction from the config seed.
pub fn init_weights(cfg: &RunConfig) -> Result<InitializedWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dims.dim;
    let h = cfg.dims.heads;
    let dh = d / h;
    let beta = cfg.beta_value();

    let (msa, ortho) = match cfg.init {
        InitSpec::Gaussian { std } => {
            let heads = (0..h)
                .map(|_| {
                    HeadWeights::new(
                        gaussian_matrix(&mut rng, d, dh, std),
                        gaussian_matrix(&mut rng, d, dh, std),
                        gaussian_matrix(&mut rng, d, dh, std),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let wo = gaussian_matrix(&mut rng, d, d, std);
            (Some(MsaWeights::new(heads, wo, beta)?), None)
        }
        InitSpec::Orthogonal => {
            let heads = (0..h)
                .map(|_| {
                    let wq = orthogonal_matrix(&mut rng, d).columns(0, dh).into_owned();
                    let wk = orthogonal_matrix(&mut rng, d).columns(0, dh).into_owned();
                    let wv = orthogonal_matrix(&mut rng, d).columns(0, dh).into_owned();
                    HeadWeights::new(wq, wk, wv)
                })
                .collect::<Result<Vec<_>>>()?;
            let wo = orthogonal_matrix(&mut rng, d);
            (Some(MsaWeights::new(heads, wo, beta)?), None)
        }
        InitSpec::ConstrainedSingle => {
            let std = 1.0 / (d as f64).sqrt();
            let wq = gaussian_matrix(&mut rng, d, d, std);
            let wk = gaussian_matrix(&mut rng, d, d, std);
            let wv = make_symmetric_value(&wq, &wk)?;
            let head = HeadWeights::new(wq, wk, wv)?;
            let msa = MsaWeights::new(vec![head], DMatrix::identity(d, d), beta)?;
            (Some(msa), None)
        }
        InitSpec::ConstrainedMulti => {
            let set = make_orthogonal_heads(d, h, cfg.seed)?;
            (None, Some(set))
        }
    };

    let bank = if cfg.variant == Variant::Akorn {
        let n = cfg.dims.oscillator_dim.expect("validated");
        let std = match cfg.init {
            InitSpec::Gaussian { std } => std,
            _ => 1.0 / (n as f64).sqrt(),
        };
        Some(random_bank(&mut rng, d, n, std)?)
    } else {
        None
    };

    Ok(InitializedWeights { msa, ortho, bank })
}

/// Random conditioning input, or `None` when the configured std is absent
/// or zero.
pub fn init_conditioning(cfg: &RunConfig) -> Result<Option<TokenMatrix>> {
    match cfg.conditioning_std {
        None => Ok(None),
        Some(std) if std == 0.0 => Ok(None),
        Some(std) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ffee);
            let m = gaussian_matrix(&mut rng, cfg.dims.tokens, cfg.dims.dim, std);
            Ok(Some(TokenMatrix::new(m)?))
        }
    }
}

/// Initial state: unit rows for ItrSA and the continuous flow; unit
/// oscillators for AKOrN (either from the conditioning input or random,
/// per the config).
pub fn init_state(cfg: &RunConfig, conditioning: Option<&TokenMatrix>) -> Result<TokenMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x57a7e);
    let raw = gaussian_matrix(&mut rng, cfg.dims.tokens, cfg.dims.dim, 1.0);
    match cfg.variant {
        Variant::Akorn => {
            let n = cfg.dims.oscillator_dim.expect("validated");
            match (cfg.akorn_init, conditioning) {
                (AkornInit::CopyConditioning, Some(c)) => pi_normalize_osc(c, n),
                _ => pi_normalize_osc(&TokenMatrix::new(raw)?, n),
            }
        }
        _ => pi_normalize(&TokenMatrix::new(raw)?),
    }
}
