//! Relaxed energy functions for constrained attention flows, their analytic
//! gradients, the weight-constraint constructors, descent verification, and
//! the pseudo-energy diagnostics.
//!
//! Two constrained systems admit a decreasing energy:
//!
//! - single-head, projected flow `Ẋ = Proj_X(softmax(β X A Xᵀ) X W^V)` with
//!   `A = W^Q W^{Kᵀ}` and `W^V = (Aᵀ + A)/2`;
//! - multi-head, unprojected flow `Ẋ = Σ_h softmax(β X A_h Xᵀ) X W_h^V` with
//!   `A_h = U_{1,h} U_{2,h}ᵀ` built from mutually orthonormal column blocks
//!   and `W_h^V = (A_hᵀ + A_h)/2`.
//!
//! The gradient of `E_single` implemented here is the exact one,
//! `∂E/∂X_k = −β (E X Aᵀ + Eᵀ X A)` with `E_ij = exp(β x_iᵀ A x_j)`; it is
//! validated against finite differences of the energy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{pi_normalize, softmax_rows, HeadWeights, TokenMatrix};
use crate::error::{Error, Result};
use crate::jacobian::JacobianMatrix;

/// Exponent magnitude beyond which `exp` is treated as overflow.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

fn logit_matrix(x: &TokenMatrix, a: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    let d = x.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::shape("interaction matrix must be D×D"));
    }
    Ok(beta * x.matrix() * a * x.matrix().transpose())
}

fn checked_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let max = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > OVERFLOW_EXPONENT {
        // Report the log-sum-exp surrogate instead of a useless infinity.
        let lse = max + m.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        return Err(Error::EnergyOverflow { lse });
    }
    Ok(m.map(f64::exp))
}

/// `E_single(X) = −Σ_{i,j} exp(β x_iᵀ A x_j)`.
pub fn energy_single(x: &TokenMatrix, a: &DMatrix<f64>, beta: f64) -> Result<f64> {
    let e = checked_exp(&logit_matrix(x, a, beta)?)?;
    Ok(-e.sum())
}

/// Exact gradient of [`energy_single`] with respect to the state,
/// `−β (E X Aᵀ + Eᵀ X A)`.
pub fn grad_energy_single(x: &TokenMatrix, a: &DMatrix<f64>, beta: f64) -> Result<TokenMatrix> {
    let e = checked_exp(&logit_matrix(x, a, beta)?)?;
    let g = -beta * (&e * x.matrix() * a.transpose() + e.transpose() * x.matrix() * a);
    TokenMatrix::new(g)
}

/// `E_multi(X) = Σ_h E_single(X; A_h)`.
pub fn energy_multi(x: &TokenMatrix, a_mats: &[DMatrix<f64>], beta: f64) -> Result<f64> {
    let mut total = 0.0;
    for a in a_mats {
        total += energy_single(x, a, beta)?;
    }
    Ok(total)
}

/// The single-head value constraint `W^V = (W^K W^{Qᵀ} + W^Q W^{Kᵀ})/2`.
pub fn make_symmetric_value(wq: &DMatrix<f64>, wk: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if wq.shape() != wk.shape() {
        return Err(Error::shape("wq and wk must share a shape"));
    }
    let a = wq * wk.transpose();
    Ok((&a + a.transpose()) * 0.5)
}

/// Per-head low-rank factors `U_{1,h}, U_{2,h} ∈ R^{D × D/(2H)}` with all
/// `2H` blocks mutually orthonormal.
#[derive(Debug, Clone)]
pub struct OrthoHeadSet {
    pub u1: Vec<DMatrix<f64>>,
    pub u2: Vec<DMatrix<f64>>,
}

impl OrthoHeadSet {
    pub fn head_count(&self) -> usize {
        self.u1.len()
    }

    pub fn model_dim(&self) -> usize {
        self.u1[0].nrows()
    }

    /// `A_h = U_{1,h} U_{2,h}ᵀ`.
    pub fn qk_products(&self) -> Vec<DMatrix<f64>> {
        self.u1
            .iter()
            .zip(&self.u2)
            .map(|(u1, u2)| u1 * u2.transpose())
            .collect()
    }

    /// `W_h^V = (A_hᵀ + A_h)/2`.
    pub fn value_mats(&self) -> Vec<DMatrix<f64>> {
        self.qk_products()
            .iter()
            .map(|a| (a.transpose() + a) * 0.5)
            .collect()
    }

    /// Largest deviation from `U_{k,h}ᵀ U_{k',h'} = δ_{hh'} δ_{kk'} I`.
    pub fn orthogonality_violation(&self) -> f64 {
        let blocks: Vec<&DMatrix<f64>> = self.u1.iter().chain(self.u2.iter()).collect();
        let width = blocks[0].ncols();
        let mut worst = 0.0_f64;
        for (p, bp) in blocks.iter().enumerate() {
            for (q, bq) in blocks.iter().enumerate() {
                let gram = bp.transpose() * *bq;
                let target = if p == q {
                    DMatrix::identity(width, width)
                } else {
                    DMatrix::zeros(width, width)
                };
                worst = worst.max((gram - target).amax());
            }
        }
        worst
    }

    /// Largest entry of `A_hᵀA_h'`, `A_hA_h'`, `A_hA_h'ᵀ` over head pairs
    /// `h ≠ h'`; all three vanish by construction.
    pub fn cross_head_residual(&self) -> f64 {
        let a = self.qk_products();
        let mut worst = 0.0_f64;
        for h in 0..a.len() {
            for hp in 0..a.len() {
                if h == hp {
                    continue;
                }
                worst = worst.max((a[h].transpose() * &a[hp]).amax());
                worst = worst.max((&a[h] * &a[hp]).amax());
                worst = worst.max((&a[h] * a[hp].transpose()).amax());
            }
        }
        worst
    }
}

/// Samples a `D × D` Gaussian matrix, orthonormalizes its columns, and
/// partitions them into `2H` blocks of width `D/(2H)`; head `h` gets blocks
/// `2h` and `2h+1`.
pub fn make_orthogonal_heads(d: usize, h_count: usize, seed: u64) -> Result<OrthoHeadSet> {
    if h_count == 0 || d % (2 * h_count) != 0 {
        return Err(Error::Divisibility {
            two_h: 2 * h_count,
            d,
        });
    }
    let width = d / (2 * h_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0_f64));
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
    let mut u1 = Vec::with_capacity(h_count);
    let mut u2 = Vec::with_capacity(h_count);
    for h in 0..h_count {
        u1.push(q.columns(2 * h * width, width).into_owned());
        u2.push(q.columns((2 * h + 1) * width, width).into_owned());
    }
    Ok(OrthoHeadSet { u1, u2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Integrator {
    Euler,
    Rk4,
}

/// One of the two constrained flows with a decreasing energy.
pub enum FlowSystem {
    /// Projected single-head flow; `W^V` is derived from `wq`, `wk`.
    SingleHead {
        wq: DMatrix<f64>,
        wk: DMatrix<f64>,
    },
    /// Unprojected multi-head flow over an orthogonal head set.
    MultiHead(OrthoHeadSet),
}

impl FlowSystem {
    fn rhs(&self, x: &TokenMatrix, beta: f64) -> Result<DMatrix<f64>> {
        match self {
            FlowSystem::SingleHead { wq, wk } => {
                let wv = make_symmetric_value(wq, wk)?;
                let head = HeadWeights::new(wq.clone(), wk.clone(), wv)?;
                // Radial extension: integrator stages sit slightly off the
                // sphere; the on-sphere field is evaluated at the normalized
                // state.
                let xs = pi_normalize(x)?;
                Ok(crate::attention::continuous_rhs(&xs, &head, beta)?.into_inner())
            }
            FlowSystem::MultiHead(set) => {
                let a_mats = set.qk_products();
                let values = set.value_mats();
                let mut out = DMatrix::zeros(x.tokens(), x.dim());
                for (a, wv) in a_mats.iter().zip(&values) {
                    let p = softmax_rows(&(beta * x.matrix() * a * x.matrix().transpose()))?;
                    out += p * x.matrix() * wv;
                }
                Ok(out)
            }
        }
    }

    fn energy(&self, x: &TokenMatrix, beta: f64) -> Result<f64> {
        match self {
            FlowSystem::SingleHead { wq, wk } => {
                energy_single(x, &(wq * wk.transpose()), beta)
            }
            FlowSystem::MultiHead(set) => energy_multi(x, &set.qk_products(), beta),
        }
    }

    /// The single-head statement is about the on-sphere flow; rows are
    /// re-normalized after every integrator step to cancel discretization
    /// drift. The multi-head flow is integrated as stated, without
    /// projection or re-normalization.
    fn renormalizes(&self) -> bool {
        matches!(self, FlowSystem::SingleHead { .. })
    }
}

/// Energy trace of an integrated flow.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub values: Vec<f64>,
    pub deltas: Vec<f64>,
    pub monotone_fraction: f64,
    pub integrator: Integrator,
    pub dt: f64,
}

impl EnergyReport {
    pub fn max_delta(&self) -> f64 {
        self.deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV columns `t,energy,delta`; the first row has an empty delta. A
    /// trailing comment line carries the monotone fraction.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,energy,delta\n");
        for (t, v) in self.values.iter().enumerate() {
            if t == 0 {
                out.push_str(&format!("0,{v:?},\n"));
            } else {
                out.push_str(&format!("{t},{v:?},{:?}\n", self.deltas[t - 1]));
            }
        }
        out.push_str(&format!("# monotone_fraction,{:?}\n", self.monotone_fraction));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Integrates a constrained flow from `x0` and records the energy after each
/// step. `monotone_fraction` counts steps with non-positive energy delta.
pub fn verify_descent(
    x0: &TokenMatrix,
    system: &FlowSystem,
    beta: f64,
    dt: f64,
    steps: usize,
    integrator: Integrator,
) -> Result<EnergyReport> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let mut x = x0.clone();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(system.energy(&x, beta)?);

    for t in 0..steps {
        let stepped = match integrator {
            Integrator::Euler => {
                let k1 = system.rhs(&x, beta)?;
                x.matrix() + dt * k1
            }
            Integrator::Rk4 => {
                let k1 = system.rhs(&x, beta)?;
                let k2 = system.rhs(&TokenMatrix::new(x.matrix() + 0.5 * dt * &k1)?, beta)?;
                let k3 = system.rhs(&TokenMatrix::new(x.matrix() + 0.5 * dt * &k2)?, beta)?;
                let k4 = system.rhs(&TokenMatrix::new(x.matrix() + dt * &k3)?, beta)?;
                x.matrix() + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
        if stepped.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedAt(t));
        }
        x = TokenMatrix::new(stepped)?;
        if system.renormalizes() {
            x = pi_normalize(&x)?;
        }
        values.push(system.energy(&x, beta)?);
    }

    let deltas: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone = deltas.iter().filter(|d| **d <= 0.0).count();
    let monotone_fraction = if deltas.is_empty() {
        1.0
    } else {
        monotone as f64 / deltas.len() as f64
    };
    Ok(EnergyReport {
        values,
        deltas,
        monotone_fraction,
        integrator,
        dt,
    })
}

/// `E_pseudo = −Tr(Xᵀ Y)`.
pub fn pseudo_energy(x: &TokenMatrix, y: &TokenMatrix) -> Result<f64> {
    if x.tokens() != y.tokens() || x.dim() != y.dim() {
        return Err(Error::shape("pseudo_energy operands must match"));
    }
    Ok(-x.matrix().dot(y.matrix()))
}

/// Fraction of the state's squared mass in the top-eigenvalue subspace of
/// the symmetrized Jacobian `S = J + Jᵀ`. The number of retained directions
/// is `max(1, ⌊top_fraction · n⌋)`.
pub fn contribution_index(
    x_vec: &DVector<f64>,
    j: &JacobianMatrix,
    top_fraction: f64,
) -> Result<f64> {
    let n = j.dim();
    if x_vec.len() != n {
        return Err(Error::shape("state vector length vs jacobian dim"));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config("top_fraction must lie in (0, 1]".into()));
    }
    let total = x_vec.norm_squared();
    if total == 0.0 {
        return Err(Error::Config("contribution index of a zero state".into()));
    }
    let sym = &j.data + j.data.transpose();
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 100_000)
        .ok_or(Error::EigFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let k = ((top_fraction * n as f64).floor() as usize).max(1);
    let mut top_mass = 0.0;
    for &idx in order.iter().take(k) {
        let coeff = eig.eigenvectors.column(idx).dot(x_vec);
        top_mass += coeff * coeff;
    }
    Ok(top_mass / total)
}

/// The quadratic pseudo-energy under a frozen Jacobian, evaluated two ways:
/// raw `−xᵀJx` and through the symmetrized form `−xᵀ(J+Jᵀ)x/2`. The two are
/// equal identities; both are reported.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadraticPseudoEnergy {
    pub raw: f64,
    pub symmetrized: f64,
}

pub fn quadratic_pseudo_energy(
    x_vec: &DVector<f64>,
    j_frozen: &JacobianMatrix,
) -> Result<QuadraticPseudoEnergy> {
    if x_vec.len() != j_frozen.dim() {
        return Err(Error::shape("state vector length vs jacobian dim"));
    }
    let jx = &j_frozen.data * x_vec;
    let raw = -x_vec.dot(&jx);
    let sym = (&j_frozen.data + j_frozen.data.transpose()) * 0.5;
    let symmetrized = -x_vec.dot(&(sym * x_vec));
    Ok(QuadraticPseudoEnergy { raw, symmetrized })
}

/// Cosine similarity between two vectors; 0 when either is zero.
pub fn cosine_similarity(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobian::JacobianSource;
    use approx::assert_relative_eq;

    fn random_unit_state(rng: &mut ChaCha8Rng, s: usize, d: usize) -> TokenMatrix {
        let m = DMatrix::from_fn(s, d, |_, _| rng.gen_range(-1.0..1.0));
        pi_normalize(&TokenMatrix::new(m).unwrap()).unwrap()
    }

    #[test]
    fn energy_zero_interaction() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let x = random_unit_state(&mut rng, 4, 3);
        let e = energy_single(&x, &DMatrix::zeros(3, 3), 0.7).unwrap();
        assert_relative_eq!(e, -16.0, epsilon = 1e-12);
        // Scale invariance with A = 0: constant −S².
        let scaled = TokenMatrix::new(x.matrix() * 3.7).unwrap();
        let e2 = energy_single(&scaled, &DMatrix::zeros(3, 3), 0.7).unwrap();
        assert_relative_eq!(e2, -16.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_single_token_identity() {
        let x = TokenMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let e = energy_single(&x, &DMatrix::identity(2, 2), 1.0).unwrap();
        assert_relative_eq!(e, -std::f64::consts::E, epsilon = 1e-14);
    }

    #[test]
    fn energy_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let (s, d) = (4, 5);
        let x = random_unit_state(&mut rng, s, d);
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let beta = 0.6;
        let e = energy_single(&x, &a, beta).unwrap();
        let mut oracle = 0.0;
        for i in 0..s {
            for j in 0..s {
                let mut dot = 0.0;
                for p in 0..d {
                    for q in 0..d {
                        dot += x.matrix()[(i, p)] * a[(p, q)] * x.matrix()[(j, q)];
                    }
                }
                oracle -= (beta * dot).exp();
            }
        }
        assert_relative_eq!(e, oracle, max_relative = 1e-12);
    }

    #[test]
    fn energy_overflow_reports_lse() {
        let x = TokenMatrix::new(DMatrix::from_row_slice(1, 1, &[30.0])).unwrap();
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        match energy_single(&x, &a, 1.0) {
            Err(Error::EnergyOverflow { lse }) => assert_relative_eq!(lse, 900.0, epsilon = 1e-9),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn grad_zero_interaction_and_fd_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let (s, d) = (4, 5);
        let x = random_unit_state(&mut rng, s, d);
        assert_eq!(
            grad_energy_single(&x, &DMatrix::zeros(d, d), 1.0).unwrap().matrix().norm(),
            0.0
        );

        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let beta = 0.8;
        let g = grad_energy_single(&x, &a, beta).unwrap();
        let h = 1e-6;
        for i in 0..s {
            for p in 0..d {
                let mut plus = x.matrix().clone();
                let mut minus = x.matrix().clone();
                plus[(i, p)] += h;
                minus[(i, p)] -= h;
                let fp = energy_single(&TokenMatrix::new(plus).unwrap(), &a, beta).unwrap();
                let fm = energy_single(&TokenMatrix::new(minus).unwrap(), &a, beta).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert_relative_eq!(g.matrix()[(i, p)], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn grad_antisymmetric_single_token_vanishes() {
        // For S = 1 the bilinear form of an antisymmetric matrix is zero and
        // both gradient conventions vanish identically.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let d = 5;
        let x = random_unit_state(&mut rng, 1, d);
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&m - m.transpose()) * 0.5;
        let g = grad_energy_single(&x, &a, 0.9).unwrap();
        assert!(g.matrix().norm() <= 1e-12);
    }

    #[test]
    fn energy_multi_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let x = random_unit_state(&mut rng, 3, 4);
        let zeros = vec![DMatrix::zeros(4, 4); 2];
        assert_relative_eq!(energy_multi(&x, &zeros, 1.0).unwrap(), -18.0, epsilon = 1e-12);

        let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let single = energy_single(&x, &a, 0.5).unwrap();
        let multi = energy_multi(&x, std::slice::from_ref(&a), 0.5).unwrap();
        assert_relative_eq!(single, multi, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_value_constructor() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let wq = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let v = make_symmetric_value(&wq, &wq).unwrap();
        assert_relative_eq!((&v - wq.clone() * wq.transpose()).norm(), 0.0, epsilon = 1e-14);

        let wk = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let v = make_symmetric_value(&wq, &wk).unwrap();
        assert_eq!((&v - v.transpose()).norm(), 0.0);
        let a = &wq * wk.transpose();
        let direct = (&a + a.transpose()) * 0.5;
        assert_relative_eq!((v - direct).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_heads_identities() {
        let set = make_orthogonal_heads(8, 2, 7).unwrap();
        assert!(set.orthogonality_violation() <= 1e-10);
        assert!(set.cross_head_residual() <= 1e-10);

        let d4 = make_orthogonal_heads(4, 1, 3).unwrap();
        assert_eq!(d4.u1[0].shape(), (4, 2));
        let a = &d4.qk_products()[0];
        assert_eq!(a.rank(1e-10), 2);

        assert!(matches!(
            make_orthogonal_heads(6, 2, 0).unwrap_err(),
            Error::Divisibility { .. }
        ));
    }

    #[test]
    fn cross_head_flow_terms_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let set = make_orthogonal_heads(8, 2, 11).unwrap();
        let x = random_unit_state(&mut rng, 4, 8);
        let beta = 0.5;
        let a_mats = set.qk_products();
        let values = set.value_mats();
        let deltas: Vec<DMatrix<f64>> = a_mats
            .iter()
            .zip(&values)
            .map(|(a, wv)| {
                let p = softmax_rows(&(beta * x.matrix() * a * x.matrix().transpose())).unwrap();
                p * x.matrix() * wv
            })
            .collect();
        for i in 0..4 {
            let dot = deltas[0].row(i).dot(&deltas[1].row(i));
            assert!(dot.abs() <= 1e-10, "cross-head delta rows must be orthogonal");
        }
    }

    #[test]
    fn descent_flat_for_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let x0 = random_unit_state(&mut rng, 3, 4);
        let system = FlowSystem::SingleHead {
            wq: DMatrix::zeros(4, 4),
            wk: DMatrix::zeros(4, 4),
        };
        let report = verify_descent(&x0, &system, 0.5, 1e-3, 50, Integrator::Rk4).unwrap();
        assert_eq!(report.monotone_fraction, 1.0);
        for d in &report.deltas {
            assert!(d.abs() <= 1e-12);
        }
    }

    #[test]
    fn single_head_descent_small_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let d = 8;
        let x0 = random_unit_state(&mut rng, 5, d);
        let scale = 1.0 / (d as f64).sqrt();
        let system = FlowSystem::SingleHead {
            wq: DMatrix::from_fn(d, d, |_, _| rng.gen_range(-scale..scale)),
            wk: DMatrix::from_fn(d, d, |_, _| rng.gen_range(-scale..scale)),
        };
        let report = verify_descent(&x0, &system, scale, 1e-3, 200, Integrator::Rk4).unwrap();
        assert!(report.monotone_fraction >= 0.999);
        assert!(report.max_delta() <= 1e-9);
    }

    #[test]
    fn multi_head_descent_small_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let set = make_orthogonal_heads(8, 2, 21).unwrap();
        let x0 = random_unit_state(&mut rng, 5, 8);
        let report = verify_descent(
            &x0,
            &FlowSystem::MultiHead(set),
            0.5,
            1e-3,
            200,
            Integrator::Rk4,
        )
        .unwrap();
        assert!(report.monotone_fraction >= 0.999);
        assert!(report.max_delta() <= 1e-9);
    }

    #[test]
    fn euler_integrator_also_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let d = 6;
        let x0 = random_unit_state(&mut rng, 4, d);
        let scale = 1.0 / (d as f64).sqrt();
        let system = FlowSystem::SingleHead {
            wq: DMatrix::from_fn(d, d, |_, _| rng.gen_range(-scale..scale)),
            wk: DMatrix::from_fn(d, d, |_, _| rng.gen_range(-scale..scale)),
        };
        let report = verify_descent(&x0, &system, scale, 1e-3, 100, Integrator::Euler).unwrap();
        assert!(report.monotone_fraction >= 0.99);
    }

    #[test]
    fn pseudo_energy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let x = random_unit_state(&mut rng, 3, 4);
        let e = pseudo_energy(&x, &x).unwrap();
        assert_relative_eq!(e, -x.matrix().norm_squared(), epsilon = 1e-14);

        // Trace-orthogonal pair.
        let a = TokenMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let b = TokenMatrix::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).unwrap();
        assert_eq!(pseudo_energy(&a, &b).unwrap(), 0.0);

        // Elementwise-sum oracle.
        let y = random_unit_state(&mut rng, 3, 4);
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                oracle -= x.matrix()[(i, j)] * y.matrix()[(i, j)];
            }
        }
        assert_relative_eq!(pseudo_energy(&x, &y).unwrap(), oracle, epsilon = 1e-14);
    }

    #[test]
    fn contribution_index_eigenvector_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let n = 6;
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0_f64));
        let j = JacobianMatrix::new(raw, JacobianSource::Analytic).unwrap();
        let sym = &j.data + j.data.transpose();
        let eig = nalgebra::SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

        let top = eig.eigenvectors.column(order[0]).into_owned();
        let idx = contribution_index(&top, &j, 0.02).unwrap();
        assert_relative_eq!(idx, 1.0, epsilon = 1e-12);

        let bottom = eig.eigenvectors.column(order[n - 1]).into_owned();
        let idx = contribution_index(&bottom, &j, 0.02).unwrap();
        assert!(idx.abs() <= 1e-12);
    }

    #[test]
    fn contribution_index_isotropic_expectation() {
        // Isotropic states put on average top_fraction of their mass in the
        // top subspace; Monte-Carlo over seeds at n = 100, k = 2.
        let n = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0_f64));
        let j = JacobianMatrix::new(raw, JacobianSource::Analytic).unwrap();
        let mut acc = 0.0;
        let trials = 400;
        for t in 0..trials {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + t);
            let x = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0_f64));
            acc += contribution_index(&x, &j, 0.02).unwrap();
        }
        let mean = acc / trials as f64;
        assert!((mean - 0.02).abs() <= 0.01, "isotropic mean {mean}");
    }

    #[test]
    fn contribution_index_orthogonal_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let n = 8;
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0_f64));
        let j = JacobianMatrix::new(raw.clone(), JacobianSource::Analytic).unwrap();
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0_f64));
        let base = contribution_index(&x, &j, 0.3).unwrap();

        let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0_f64)).qr().q();
        let rotated_j = JacobianMatrix::new(&q * raw * q.transpose(), JacobianSource::Analytic).unwrap();
        let rotated = contribution_index(&(&q * &x), &rotated_j, 0.3).unwrap();
        assert_relative_eq!(base, rotated, epsilon = 1e-10);
    }

    #[test]
    fn quadratic_pseudo_energy_identity_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let x = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0_f64));
        let j = JacobianMatrix::new(DMatrix::identity(5, 5), JacobianSource::Analytic).unwrap();
        let q = quadratic_pseudo_energy(&x, &j).unwrap();
        assert_relative_eq!(q.raw, -x.norm_squared(), epsilon = 1e-14);
        assert_relative_eq!(q.symmetrized, -x.norm_squared(), epsilon = 1e-14);
    }

    #[test]
    fn report_csv_has_footer() {
        let report = EnergyReport {
            values: vec![-1.0, -1.5],
            deltas: vec![-0.5],
            monotone_fraction: 1.0,
            integrator: Integrator::Rk4,
            dt: 1e-3,
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("t,energy,delta\n"));
        assert!(csv.contains("# monotone_fraction,1.0"));
    }
}
