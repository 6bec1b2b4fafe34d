//! `sa-dyn`: command-line driver for the recurrent self-attention dynamics
//! toolkit.
//!
//! Subcommands: `simulate`, `jacobian-check`, `lyapunov`, `energy`,
//! `bounds`, `oscillator`, `regularize`. All randomness flows from the
//! config seed; identical config + seed produces byte-identical outputs.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure,
//! 64 usage/unknown subcommand.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sa_dyn::archive::save_weights;
use sa_dyn::attention::{
    akorn_step, itrsa_step, msa, pi_normalize, rmsnorm, sa_head, MsaWeights, OmegaBank,
    StepConfig, TokenMatrix, Variant,
};
use sa_dyn::bounds::{
    eta_limit_probe, token_sweep, verify_castin_bound, verify_normalization_bound,
};
use sa_dyn::config::{init_conditioning, init_state, init_weights, RunConfig};
use sa_dyn::energy::{
    cosine_similarity, make_orthogonal_heads, pseudo_energy, quadratic_pseudo_energy,
    verify_descent, FlowSystem, Integrator,
};
use sa_dyn::error::Error;
use sa_dyn::jacobian::{
    fd_jacobian, jac_msa, jac_msa_frozen, jac_pi, jac_rmsnorm, jac_sa_head, jac_step,
    DEFAULT_FD_STEP,
};
use sa_dyn::lyapunov::{criticality_report, lyapunov_spectrum, max_mean_exponents};
use sa_dyn::maps::{AkornMap, ItrSaMap};
use sa_dyn::oscillator::{phase_scan, OscVariant};
use sa_dyn::regularizer::regularizer_report;

#[derive(Parser)]
#[command(name = "sa-dyn", version, about = "Recurrent self-attention dynamics toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Itrsa,
    Akorn,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Itrsa => Variant::ItrSa,
            VariantArg::Akorn => Variant::Akorn,
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration scale.
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Update-rule override.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl CommonArgs {
    fn resolve(&self, default_variant: Variant) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::from_json(&text)?
            }
            None => match self.preset {
                PresetArg::Desk => RunConfig::desk_preset(42, default_variant),
                PresetArg::Paper => RunConfig::paper_preset(42, default_variant),
            },
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(variant) = self.variant {
            cfg.variant = variant.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured update rule and log inference diagnostics.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of update steps (defaults to the config horizon).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare every analytic Jacobian against central finite differences.
    JacobianCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Failure threshold on the max relative error.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Estimate the finite-horizon Lyapunov spectrum of the update rule.
    Lyapunov {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of tangent directions (defaults to the full S·D).
        #[arg(long)]
        basis_dim: Option<usize>,
        /// Criticality band around zero for the verdict.
        #[arg(long, default_value_t = sa_dyn::lyapunov::DEFAULT_CRITICALITY_BAND)]
        band: f64,
    },
    /// Integrate a constrained flow and verify energy descent.
    Energy {
        #[command(flatten)]
        common: CommonArgs,
        /// Which constrained system to integrate.
        #[arg(long, value_enum, default_value = "single")]
        system: EnergySystem,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, value_enum, default_value = "rk4")]
        integrator: IntegratorArg,
    },
    /// Verify spectral-norm bounds and run norm sweeps.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        /// Token-count sweep `start:stop` (doubling grid), writes the
        /// raw-vs-normalized norm table.
        #[arg(long)]
        sweep_tokens: Option<String>,
        /// Comma-separated ascending step sizes for the η probe.
        #[arg(long)]
        sweep_eta: Option<String>,
        /// Number of random bound-check instances.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Row norm of sampled states in the token sweep.
        #[arg(long, default_value_t = 10.0)]
        row_norm: f64,
        /// State samples per token count.
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
    /// Phase scans of the isolated oscillator systems.
    Oscillator {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "normalized")]
        osc_variant: OscVariantArg,
        #[arg(long, default_value_t = 20)]
        grid_size: usize,
        #[arg(long, default_value_t = 5.0)]
        eta_max: f64,
        #[arg(long, default_value_t = 5.0)]
        omega_max: f64,
    },
    /// Evaluate the weight regularizers.
    Regularize {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EnergySystem {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OscVariantArg {
    Continuous,
    Plain,
    Normalized,
}

impl From<OscVariantArg> for OscVariant {
    fn from(v: OscVariantArg) -> OscVariant {
        match v {
            OscVariantArg::Continuous => OscVariant::Continuous,
            OscVariantArg::Plain => OscVariant::DiscretePlain,
            OscVariantArg::Normalized => OscVariant::DiscreteNormalized,
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            let _ = err.print();
            return ExitCode::from(64);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn configure_threads() {
    if let Ok(value) = std::env::var("SA_DYN_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Shape(_)
        | Error::Archive(_)
        | Error::Divisibility { .. }
        | Error::HeadCount(_) => 1,
        _ => 2,
    }
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn required_msa(cfg: &RunConfig) -> Result<(MsaWeights, Option<OmegaBank>), Error> {
    let init = init_weights(cfg)?;
    let msa = init.msa.ok_or_else(|| {
        Error::Config(
            "this subcommand needs attention weights; constrained-multi init only builds an orthogonal head set"
                .into(),
        )
    })?;
    Ok((msa, init.bank))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { common, steps } => {
            let cfg = common.resolve(Variant::ItrSa)?;
            simulate(&cfg, steps.unwrap_or(cfg.horizon), &common.out)
        }
        Command::JacobianCheck { common, tolerance } => {
            let cfg = common.resolve(Variant::ItrSa)?;
            jacobian_check(&cfg, tolerance, &common.out)
        }
        Command::Lyapunov {
            common,
            basis_dim,
            band,
        } => {
            let cfg = common.resolve(Variant::ItrSa)?;
            lyapunov_cmd(&cfg, basis_dim, band, &common.out)
        }
        Command::Energy {
            common,
            system,
            steps,
            dt,
            integrator,
        } => {
            let cfg = common.resolve(Variant::ItrSa)?;
            energy_cmd(&cfg, system, steps, dt, integrator, &common.out)
        }
        Command::Bounds {
            common,
            sweep_tokens,
            sweep_eta,
            seeds,
            row_norm,
            samples,
        } => {
            let cfg = common.resolve(Variant::ItrSa)?;
            bounds_cmd(
                &cfg,
                sweep_tokens.as_deref(),
                sweep_eta.as_deref(),
                seeds,
                row_norm,
                samples,
                &common.out,
            )
        }
        Command::Oscillator {
            common,
            osc_variant,
            grid_size,
            eta_max,
            omega_max,
        } => oscillator_cmd(osc_variant.into(), grid_size, eta_max, omega_max, &common.out),
        Command::Regularize { common } => {
            let cfg = common.resolve(Variant::ItrSa)?;
            regularize_cmd(&cfg, &common.out)
        }
    }
}

fn state_to_json(x: &TokenMatrix) -> String {
    let rows: Vec<Vec<f64>> = (0..x.tokens())
        .map(|i| (0..x.dim()).map(|j| x.matrix()[(i, j)]).collect())
        .collect();
    serde_json::to_string_pretty(&rows).expect("state serializes")
}

fn simulate(cfg: &RunConfig, steps: usize, out: &Path) -> Result<(), Error> {
    let (weights, bank) = required_msa(cfg)?;
    let conditioning = init_conditioning(cfg)?;
    let mut state = init_state(cfg, conditioning.as_ref())?;
    let mut step_cfg: StepConfig = cfg.step_config()?;
    if let Some(c) = conditioning.clone() {
        step_cfg = step_cfg.with_conditioning(c);
    }

    // Frozen-attention Jacobian at the initial state: the time-independent
    // approximation behind the quadratic pseudo-energy.
    let j_frozen = jac_msa_frozen(&state, &weights)?;

    let mut csv = String::from(
        "t,pseudo_energy,quad_pseudo_energy_frozen,cosine_full_jacobian,cosine_frozen_jacobian,min_row_norm,max_row_norm\n",
    );
    for t in 0..=steps {
        let msa_out = msa(&state, &weights)?;
        let y = match &conditioning {
            Some(c) => TokenMatrix::new(c.matrix() + msa_out.matrix())?,
            None => msa_out.clone(),
        };
        let pseudo = pseudo_energy(&state, &y)?;
        let x_vec = state.to_state_vector();
        let quad = quadratic_pseudo_energy(&x_vec, &j_frozen)?;
        let msa_vec = msa_out.to_state_vector();
        let j_full = jac_msa(&state, &weights)?;
        let cos_full = cosine_similarity(&msa_vec, &(&j_full.data * &x_vec));
        let cos_frozen = cosine_similarity(&msa_vec, &(&j_frozen.data * &x_vec));
        let (mut min_n, mut max_n) = (f64::INFINITY, 0.0_f64);
        for i in 0..state.tokens() {
            let n = state.matrix().row(i).norm();
            min_n = min_n.min(n);
            max_n = max_n.max(n);
        }
        csv.push_str(&format!(
            "{t},{pseudo:?},{:?},{cos_full:?},{cos_frozen:?},{min_n:?},{max_n:?}\n",
            quad.raw
        ));
        if t == steps {
            break;
        }
        state = match cfg.variant {
            Variant::Akorn => {
                let bank_ref = bank.as_ref().expect("validated AKOrN bank");
                akorn_step(&state, &weights, bank_ref, &step_cfg)?
            }
            _ => itrsa_step(&state, &weights, &step_cfg)?,
        };
    }

    write_output(out, "trajectory.csv", &csv)?;
    write_output(
        out,
        "weights.archive",
        &save_weights(&weights, bank.as_ref(), cfg.seed),
    )?;
    write_output(out, "final_state.json", &state_to_json(&state))?;
    println!(
        "simulated {steps} steps of {:?} at S={} D={}",
        cfg.variant, cfg.dims.tokens, cfg.dims.dim
    );
    Ok(())
}

fn jacobian_check(cfg: &RunConfig, tolerance: f64, out: &Path) -> Result<(), Error> {
    let (weights, bank) = required_msa(cfg)?;
    let conditioning = init_conditioning(cfg)?;
    let x = init_state(cfg, conditioning.as_ref())?;
    let mut step_cfg = cfg.step_config()?;
    if let Some(c) = conditioning {
        step_cfg = step_cfg.with_conditioning(c);
    }
    let norm = step_cfg.norm.clone();

    let rel = |analytic: &nalgebra::DMatrix<f64>, fd: &nalgebra::DMatrix<f64>| -> f64 {
        let scale = fd.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-12);
        analytic
            .iter()
            .zip(fd.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max)
            / scale
    };

    let mut rows: Vec<(&str, f64)> = Vec::new();

    let jp = jac_pi(&x)?;
    let fd = fd_jacobian(pi_normalize, &x, DEFAULT_FD_STEP)?;
    rows.push(("pi", rel(&jp.data, &fd.data)));

    let jr = jac_rmsnorm(&x, &norm)?;
    let fd = fd_jacobian(|z| rmsnorm(z, &norm), &x, DEFAULT_FD_STEP)?;
    rows.push(("rmsnorm", rel(&jr.data, &fd.data)));

    let head = &weights.heads[0];
    let jh = jac_sa_head(&x, head, weights.beta)?;
    let fd = fd_jacobian(
        |z| TokenMatrix::new(sa_head(z, head, weights.beta)?),
        &x,
        DEFAULT_FD_STEP,
    )?;
    rows.push(("sa_head", rel(&jh, &fd.data)));

    let jm = jac_msa(&x, &weights)?;
    let fd = fd_jacobian(|z| msa(z, &weights), &x, DEFAULT_FD_STEP)?;
    rows.push(("msa", rel(&jm.data, &fd.data)));

    let js = jac_step(&x, &weights, &step_cfg, bank.as_ref())?;
    let fd = match cfg.variant {
        Variant::Akorn => {
            let bank_ref = bank.as_ref().expect("validated AKOrN bank");
            fd_jacobian(
                |z| akorn_step(z, &weights, bank_ref, &step_cfg),
                &x,
                DEFAULT_FD_STEP,
            )?
        }
        _ => fd_jacobian(|z| itrsa_step(z, &weights, &step_cfg), &x, DEFAULT_FD_STEP)?,
    };
    rows.push(("step", rel(&js.data, &fd.data)));

    let mut csv = String::from("operator,max_rel_error\n");
    let mut worst: f64 = 0.0;
    for (name, err) in &rows {
        csv.push_str(&format!("{name},{err:?}\n"));
        println!("{name}: max rel error {err:.3e}");
        worst = worst.max(*err);
    }
    write_output(out, "jacobian_check.csv", &csv)?;
    if worst > tolerance {
        return Err(Error::NonFiniteMap);
    }
    Ok(())
}

fn lyapunov_cmd(
    cfg: &RunConfig,
    basis_dim: Option<usize>,
    band: f64,
    out: &Path,
) -> Result<(), Error> {
    let (weights, bank) = required_msa(cfg)?;
    let conditioning = init_conditioning(cfg)?;
    let x0 = init_state(cfg, conditioning.as_ref())?;
    let mut step_cfg = cfg.step_config()?;
    if let Some(c) = conditioning {
        step_cfg = step_cfg.with_conditioning(c);
    }
    let dim = cfg.dims.tokens * cfg.dims.dim;
    let basis = basis_dim.unwrap_or(dim);

    let x0_vec = x0.to_state_vector();
    let spectrum = match cfg.variant {
        Variant::Akorn => {
            let map = AkornMap {
                weights,
                bank: bank.expect("validated AKOrN bank"),
                cfg: step_cfg,
                tokens: cfg.dims.tokens,
            };
            lyapunov_spectrum(&map, &x0_vec, cfg.horizon, basis, 1)?
        }
        _ => {
            let map = ItrSaMap {
                weights,
                cfg: step_cfg,
                tokens: cfg.dims.tokens,
            };
            lyapunov_spectrum(&map, &x0_vec, cfg.horizon, basis, 1)?
        }
    };
    let (max, mean) = max_mean_exponents(&spectrum);
    let verdict = criticality_report(&spectrum, band);
    println!("lambda_max = {max:.6}");
    println!("lambda_mean = {mean:.6}");
    println!("criticality = {verdict}");
    write_output(out, "spectrum.csv", &spectrum.to_csv())?;
    write_output(out, "spectrum.json", &spectrum.to_json())?;
    Ok(())
}

fn gaussian_square(rng: &mut ChaCha8Rng, d: usize, std: f64) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(d, d, |_, _| {
        let v: f64 = rng.sample(rand_distr::StandardNormal);
        v * std
    })
}

fn energy_cmd(
    cfg: &RunConfig,
    system: EnergySystem,
    steps: usize,
    dt: f64,
    integrator: IntegratorArg,
    out: &Path,
) -> Result<(), Error> {
    let d = cfg.dims.dim;
    let flow = match system {
        EnergySystem::Single => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let std = 1.0 / (d as f64).sqrt();
            FlowSystem::SingleHead {
                wq: gaussian_square(&mut rng, d, std),
                wk: gaussian_square(&mut rng, d, std),
            }
        }
        EnergySystem::Multi => {
            FlowSystem::MultiHead(make_orthogonal_heads(d, cfg.dims.heads, cfg.seed)?)
        }
    };
    let x0 = {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x57a7e);
        let raw =
            nalgebra::DMatrix::from_fn(cfg.dims.tokens, d, |_, _| rng.gen_range(-1.0..1.0));
        pi_normalize(&TokenMatrix::new(raw)?)?
    };
    let integ = match integrator {
        IntegratorArg::Euler => Integrator::Euler,
        IntegratorArg::Rk4 => Integrator::Rk4,
    };
    let report = verify_descent(&x0, &flow, cfg.beta_value(), dt, steps, integ)?;
    println!("steps = {steps}, dt = {dt}");
    println!("monotone_fraction = {}", report.monotone_fraction);
    println!("max_delta = {:.3e}", report.max_delta());
    write_output(out, "energy.csv", &report.to_csv())?;
    write_output(out, "energy.json", &report.to_json())?;
    Ok(())
}

fn parse_token_range(spec: &str) -> Result<Vec<usize>, Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::Config("token sweep must be start:stop".into()));
    }
    let start: usize = parts[0]
        .parse()
        .map_err(|_| Error::Config("bad sweep start".into()))?;
    let stop: usize = parts[1]
        .parse()
        .map_err(|_| Error::Config("bad sweep stop".into()))?;
    if start == 0 || stop < start {
        return Err(Error::Config("need 0 < start <= stop".into()));
    }
    let mut counts = Vec::new();
    let mut s = start;
    while s <= stop {
        counts.push(s);
        s *= 2;
    }
    Ok(counts)
}

fn bounds_cmd(
    cfg: &RunConfig,
    sweep_tokens: Option<&str>,
    sweep_eta: Option<&str>,
    seeds: usize,
    row_norm: f64,
    samples: usize,
    out: &Path,
) -> Result<(), Error> {
    let (weights, _) = required_msa(cfg)?;
    let step_cfg = cfg.step_config()?;

    if let Some(spec) = sweep_tokens {
        let counts = parse_token_range(spec)?;
        let rows = token_sweep(&weights, &step_cfg, &counts, row_norm, samples, cfg.seed)?;
        let mut csv = String::from("s,msa_norm_mean,step_norm_mean\n");
        for row in &rows {
            csv.push_str(&format!(
                "{},{:?},{:?}\n",
                row.tokens, row.msa_norm_mean, row.step_norm_mean
            ));
            println!(
                "S = {:>4}: msa {:8.3}  step {:8.3}",
                row.tokens, row.msa_norm_mean, row.step_norm_mean
            );
        }
        write_output(out, "tokens_sweep.csv", &csv)?;
        return Ok(());
    }

    if let Some(spec) = sweep_eta {
        let grid: Vec<f64> = spec
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::Config("bad eta grid".into()))?;
        let conditioning = init_conditioning(cfg)?;
        let x = init_state(cfg, conditioning.as_ref())?;
        let mut probe_cfg = step_cfg.clone();
        if let Some(c) = conditioning {
            probe_cfg = probe_cfg.with_conditioning(c);
        }
        let rows = eta_limit_probe(&x, &weights, &probe_cfg, &grid)?;
        let mut csv = String::from("eta,step_norm\n");
        let mut sup: f64 = 0.0;
        for row in &rows {
            csv.push_str(&format!("{:?},{:?}\n", row.eta, row.step_norm));
            sup = sup.max(row.step_norm);
        }
        println!("sup over grid = {sup:.4}");
        write_output(out, "eta_sweep.csv", &csv)?;
        return Ok(());
    }

    // Default: seed sweep of both bounds.
    let mut csv = String::from("seed,kind,measured,bound,slack,satisfied\n");
    let mut all_ok = true;
    let mut slack_sum = 0.0;
    for k in 0..seeds {
        let seed = cfg.seed.wrapping_add(k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = nalgebra::DMatrix::from_fn(cfg.dims.tokens, cfg.dims.dim, |_, _| {
            rng.gen_range(-1.0..1.0)
        });
        let x = pi_normalize(&TokenMatrix::new(raw)?)?;

        let step = verify_normalization_bound(&x, &weights, &step_cfg)?;
        all_ok &= step.satisfied;
        csv.push_str(&format!(
            "{seed},step,{:?},{:?},{:?},{}\n",
            step.lhs, step.rhs, step.slack, step.satisfied
        ));

        let msa_check = verify_castin_bound(&x, &weights)?;
        all_ok &= msa_check.satisfied;
        slack_sum += msa_check.slack;
        csv.push_str(&format!(
            "{seed},msa,{:?},{:?},{:?},{}\n",
            msa_check.lhs, msa_check.rhs, msa_check.slack, msa_check.satisfied
        ));
    }
    println!("all bounds satisfied: {all_ok}");
    println!("mean msa-bound slack: {:.4}", slack_sum / seeds as f64);
    write_output(out, "bounds_sweep.csv", &csv)?;
    if !all_ok {
        return Err(Error::Config("a bound check failed".into()));
    }
    Ok(())
}

fn oscillator_cmd(
    variant: OscVariant,
    grid_size: usize,
    eta_max: f64,
    omega_max: f64,
    out: &Path,
) -> Result<(), Error> {
    if grid_size == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    let etas: Vec<f64> = (1..=grid_size)
        .map(|k| eta_max * k as f64 / grid_size as f64)
        .collect();
    let omegas: Vec<f64> = (1..=grid_size)
        .map(|k| omega_max * k as f64 / grid_size as f64)
        .collect();
    let rows = phase_scan(&etas, &omegas, variant)?;
    let mut csv = String::from("eta,omega,max_abs_eig\n");
    let mut max_cell: f64 = 0.0;
    for row in &rows {
        csv.push_str(&format!(
            "{:?},{:?},{:?}\n",
            row.eta, row.omega, row.max_abs_eig
        ));
        max_cell = max_cell.max(row.max_abs_eig);
    }
    println!("{} cells, max |lambda| = {max_cell:.6}", rows.len());
    write_output(out, "phase_scan.csv", &csv)?;
    Ok(())
}

fn regularize_cmd(cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let (weights, _) = required_msa(cfg)?;
    let report = regularizer_report(&weights, &[])?;
    println!("r_e_multi = {:.6e}", report.r_e_multi);
    if let Some(v) = report.r_e_single {
        println!("r_e_single = {v:.6e}");
    }
    println!("r_spec = {:.6e}", report.r_spec);
    write_output(out, "regularizers.json", &report.to_json())?;
    Ok(())
}
