//! Prior log-densities and prior draws.
//!
//! * MGPS shrinkage on the pseudo-eigenfunction coefficients:
//!   `φ_kpm ~ N(0, 1 / (γ_kpm τ̃_mk))`, `γ_kpm ~ Γ(ν_γ/2, ν_γ/2)`,
//!   `τ̃_mk = Π_{n≤m} δ_nk`, `δ_1k ~ Γ(a_1k, 1)`, `δ_nk ~ Γ(a_2k, 1)` for
//!   `n ≥ 2`, `a_1k ~ Γ(α₁, β₁)`, `a_2k ~ Γ(α₂, β₂)` (shape/rate).
//! * First-order random-walk smoothness on `ν_k` and on each `φ_km`.
//! * `σ_j² ~ IG(α₀, β₀)`.
//! * Repulsive point process on the subject centroids `π_i` and the
//!   `Z_ij | π_i, η ~ Dirichlet(η π_i)` layer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::PenaltyMatrix;
use crate::dist;
use crate::error::{FunmixError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageParams {
    /// `gamma[k]` is `P × M`.
    pub gamma: Vec<DMatrix<f64>>,
    /// `M × K`, row `n` holds `δ_{n+1,k}`.
    pub delta: DMatrix<f64>,
    pub a1: DVector<f64>,
    pub a2: DVector<f64>,
}

impl ShrinkageParams {
    pub fn ones(k: usize, p: usize, m: usize) -> Self {
        ShrinkageParams {
            gamma: vec![DMatrix::from_element(p, m, 1.0); k],
            delta: DMatrix::from_element(m, k, 1.0),
            a1: DVector::from_element(k, 1.0),
            a2: DVector::from_element(k, 1.0),
        }
    }

    /// Every shrinkage parameter set at its prior mean.
    pub fn prior_means(cfg: &PriorConfig, k: usize, p: usize, m: usize) -> Self {
        let a1 = cfg.alpha1 / cfg.beta1;
        let a2 = cfg.alpha2 / cfg.beta2;
        ShrinkageParams {
            gamma: vec![DMatrix::from_element(p, m, 1.0); k],
            delta: DMatrix::from_fn(m, k, |n, _| if n == 0 { a1 } else { a2 }),
            a1: DVector::from_element(k, a1),
            a2: DVector::from_element(k, a2),
        }
    }

    pub fn check_shape(&self, k: usize, p: usize, m: usize) -> Result<()> {
        if self.gamma.len() != k
            || self.gamma.iter().any(|g| g.shape() != (p, m))
            || self.delta.shape() != (m, k)
            || self.a1.len() != k
            || self.a2.len() != k
        {
            return Err(FunmixError::Dimension(format!(
                "shrinkage parameters inconsistent with K={k}, P={p}, M={m}"
            )));
        }
        Ok(())
    }

    pub fn tilde_tau(&self) -> DMatrix<f64> {
        tilde_tau(&self.delta)
    }

    pub fn permute_features(&self, perm: &[usize]) -> Self {
        let d = &self.delta;
        ShrinkageParams {
            gamma: perm.iter().map(|&k| self.gamma[k].clone()).collect(),
            delta: DMatrix::from_fn(d.nrows(), d.ncols(), |n, c| d[(n, perm[c])]),
            a1: DVector::from_iterator(perm.len(), perm.iter().map(|&k| self.a1[k])),
            a2: DVector::from_iterator(perm.len(), perm.iter().map(|&k| self.a2[k])),
        }
    }
}

/// Hyperparameters of every prior in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub nu_gamma: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub alpha0: f64,
    pub beta0: f64,
    /// Dirichlet base measure of the repulsive process, length `K`.
    pub alpha_dir: Vec<f64>,
    pub tau_rep: f64,
    pub lambda_nu: f64,
    pub lambda_phi: f64,
    /// Extra ridge precision on `ν_k`; zero keeps the random-walk prior improper.
    pub nu_ridge: f64,
    pub eta_shape: f64,
    pub eta_rate: f64,
}

impl PriorConfig {
    pub fn default_for(k: usize) -> Self {
        PriorConfig {
            nu_gamma: 3.0,
            alpha1: 2.0,
            beta1: 1.0,
            alpha2: 3.0,
            beta2: 1.0,
            alpha0: 1.0,
            beta0: 0.1,
            alpha_dir: vec![1.0; k],
            tau_rep: 0.01,
            lambda_nu: 1.0,
            lambda_phi: 1.0,
            nu_ridge: 0.0,
            eta_shape: 2.0,
            eta_rate: 1.0,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let positive = [
            ("nu_gamma", self.nu_gamma),
            ("alpha1", self.alpha1),
            ("beta1", self.beta1),
            ("alpha2", self.alpha2),
            ("beta2", self.beta2),
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("lambda_nu", self.lambda_nu),
            ("eta_shape", self.eta_shape),
            ("eta_rate", self.eta_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FunmixError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("tau_rep", self.tau_rep),
            ("lambda_phi", self.lambda_phi),
            ("nu_ridge", self.nu_ridge),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FunmixError::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.alpha_dir.len() != k || self.alpha_dir.iter().any(|&a| !(a > 0.0)) {
            return Err(FunmixError::InvalidConfig(format!(
                "alpha_dir must hold {k} positive entries, got {:?}",
                self.alpha_dir
            )));
        }
        Ok(())
    }
}

/// Cumulative products `τ̃_mk = Π_{n=1}^{m} δ_nk` down each column.
pub fn tilde_tau(delta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = delta.clone();
    for k in 0..out.ncols() {
        for m in 1..out.nrows() {
            out[(m, k)] *= out[(m - 1, k)];
        }
    }
    out
}

/// Joint MGPS log-density of `φ`, `γ`, `δ`, `a₁` and `a₂`.
pub fn mgps_log_prior(phi: &[Vec<DVector<f64>>], shrink: &ShrinkageParams, cfg: &PriorConfig) -> Result<f64> {
    if shrink.gamma.iter().any(|g| g.iter().any(|&v| !(v > 0.0)))
        || shrink.delta.iter().any(|&v| !(v > 0.0))
    {
        return Err(FunmixError::InvalidParameter(
            "MGPS precisions γ and δ must be positive".into(),
        ));
    }
    if shrink.a1.iter().chain(shrink.a2.iter()).any(|&v| !(v > 0.0)) {
        return Err(FunmixError::InvalidParameter(
            "MGPS shapes a1 and a2 must be positive".into(),
        ));
    }
    let tt = shrink.tilde_tau();
    let mut total = 0.0;
    for (k, row) in phi.iter().enumerate() {
        for (m, coef) in row.iter().enumerate() {
            for (p, &x) in coef.iter().enumerate() {
                let prec = shrink.gamma[k][(p, m)] * tt[(m, k)];
                total += crate::model::normal_ln_pdf(x, 0.0, 1.0 / prec);
                total += dist::ln_gamma_pdf(shrink.gamma[k][(p, m)], cfg.nu_gamma / 2.0, cfg.nu_gamma / 2.0);
            }
        }
    }
    total += shrinkage_hyper_log_prior(shrink, cfg);
    Ok(total)
}

/// Log-density of `δ | a` and of `a₁`, `a₂`.
pub(crate) fn shrinkage_hyper_log_prior(shrink: &ShrinkageParams, cfg: &PriorConfig) -> f64 {
    let mut total = 0.0;
    for k in 0..shrink.a1.len() {
        for n in 0..shrink.delta.nrows() {
            let shape = if n == 0 { shrink.a1[k] } else { shrink.a2[k] };
            total += dist::ln_gamma_pdf(shrink.delta[(n, k)], shape, 1.0);
        }
        total += dist::ln_gamma_pdf(shrink.a1[k], cfg.alpha1, cfg.beta1);
        total += dist::ln_gamma_pdf(shrink.a2[k], cfg.alpha2, cfg.beta2);
    }
    total
}

/// Improper random-walk log-density `-(λ/2) cᵀ (DᵀD) c`.
pub fn rw1_log_prior(coef: &DVector<f64>, lambda: f64, penalty: &PenaltyMatrix) -> f64 {
    -0.5 * lambda * penalty.quadratic_form(coef)
}

fn squared_distance(pi: &DMatrix<f64>, a: usize, row: &[f64]) -> f64 {
    row.iter()
        .enumerate()
        .map(|(k, &v)| (pi[(a, k)] - v).powi(2))
        .sum()
}

/// Repulsion contribution `-(τ/N) Σ_{l≠i} 1/‖row − π_l‖²` of one row placed
/// at position `i`.
pub fn repulsion_row(pi: &DMatrix<f64>, i: usize, row: &[f64], tau: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    let n = pi.nrows();
    let mut acc = 0.0;
    for l in (0..n).filter(|&l| l != i) {
        let d2 = squared_distance(pi, l, row);
        if d2 == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += 1.0 / d2;
    }
    -tau / n as f64 * acc
}

/// Repulsive point-process log-density of the centroids, up to `-log C_π`:
/// `Σ_i log Dir(π_i; α) − (τ/N) Σ_{i<l} 1/‖π_i − π_l‖²`.
pub fn repulsive_log_prior(pi: &DMatrix<f64>, alpha_dir: &[f64], tau_rep: f64) -> f64 {
    let n = pi.nrows();
    if pi.ncols() < 2 {
        // the one-point simplex
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<f64> = pi.row(i).iter().copied().collect();
        total += dist::ln_dirichlet_pdf(&row, alpha_dir);
    }
    if tau_rep > 0.0 {
        let mut acc = 0.0;
        for i in 0..n {
            let row: Vec<f64> = pi.row(i).iter().copied().collect();
            for l in i + 1..n {
                let d2 = squared_distance(pi, l, &row);
                if d2 == 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc += 1.0 / d2;
            }
        }
        total -= tau_rep / n as f64 * acc;
    }
    total
}

/// `Σ_ij log Dirichlet(Z_ij; η π_i)`.
pub fn z_layer_log_prior(z: &[DMatrix<f64>], pi: &DMatrix<f64>, eta: f64) -> f64 {
    let mut total = 0.0;
    for (i, zi) in z.iter().enumerate() {
        let conc: Vec<f64> = pi.row(i).iter().map(|&p| eta * p).collect();
        for j in 0..zi.nrows() {
            let row: Vec<f64> = zi.row(j).iter().copied().collect();
            total += dist::ln_dirichlet_pdf(&row, &conc);
        }
    }
    total
}

/// Draw `a`, `δ` and `γ` from their priors.
pub fn sample_shrinkage<R: Rng + ?Sized>(rng: &mut R, cfg: &PriorConfig, k: usize, p: usize, m: usize) -> ShrinkageParams {
    let a1 = DVector::from_fn(k, |_, _| dist::gamma(rng, cfg.alpha1, cfg.beta1));
    let a2 = DVector::from_fn(k, |_, _| dist::gamma(rng, cfg.alpha2, cfg.beta2));
    let mut delta = DMatrix::zeros(m, k);
    for c in 0..k {
        for n in 0..m {
            let shape = if n == 0 { a1[c] } else { a2[c] };
            delta[(n, c)] = dist::gamma(rng, shape, 1.0);
        }
    }
    let gamma = (0..k)
        .map(|_| DMatrix::from_fn(p, m, |_, _| dist::gamma(rng, cfg.nu_gamma / 2.0, cfg.nu_gamma / 2.0)))
        .collect();
    ShrinkageParams { gamma, delta, a1, a2 }
}

/// `φ_kpm ~ N(0, 1/(γ_kpm τ̃_mk))` given the shrinkage parameters. This is
/// the exact prior only when the random-walk precision on `φ` is zero.
pub fn sample_phi_given_shrinkage<R: Rng + ?Sized>(rng: &mut R, shrink: &ShrinkageParams) -> Vec<Vec<DVector<f64>>> {
    let tt = shrink.tilde_tau();
    shrink
        .gamma
        .iter()
        .enumerate()
        .map(|(k, g)| {
            (0..g.ncols())
                .map(|m| {
                    DVector::from_fn(g.nrows(), |p, _| {
                        dist::std_normal(rng) / (g[(p, m)] * tt[(m, k)]).sqrt()
                    })
                })
                .collect()
        })
        .collect()
}

/// Exact draw from the repulsive process by rejection against iid Dirichlet
/// proposals; `None` if `max_tries` proposals are all rejected.
pub fn sample_repulsive_rejection<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    alpha_dir: &[f64],
    tau_rep: f64,
    max_tries: usize,
) -> Option<DMatrix<f64>> {
    let k = alpha_dir.len();
    for _ in 0..max_tries {
        let mut pi = DMatrix::zeros(n, k);
        for i in 0..n {
            let row = dist::dirichlet(rng, alpha_dir);
            for c in 0..k {
                pi[(i, c)] = row[c];
            }
        }
        let log_accept = repulsive_log_prior(&pi, alpha_dir, tau_rep)
            - repulsive_log_prior(&pi, alpha_dir, 0.0);
        let u: f64 = rng.random();
        if u.ln() < log_accept {
            return Some(pi);
        }
    }
    None
}

/// Approximate draw from the repulsive process: iid Dirichlet start followed
/// by `sweeps` Metropolis sweeps with independence proposals from the base
/// Dirichlet (the base density cancels, leaving the repulsion ratio).
pub fn sample_repulsive_mh<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    alpha_dir: &[f64],
    tau_rep: f64,
    sweeps: usize,
) -> DMatrix<f64> {
    let k = alpha_dir.len();
    let mut pi = DMatrix::zeros(n, k);
    for i in 0..n {
        let row = dist::dirichlet(rng, alpha_dir);
        for c in 0..k {
            pi[(i, c)] = row[c];
        }
    }
    if tau_rep == 0.0 {
        return pi;
    }
    for _ in 0..sweeps {
        for i in 0..n {
            let current: Vec<f64> = pi.row(i).iter().copied().collect();
            let proposal = dist::dirichlet(rng, alpha_dir);
            let log_ratio = repulsion_row(&pi, i, &proposal, tau_rep) - repulsion_row(&pi, i, &current, tau_rep);
            let u: f64 = rng.random();
            if u.ln() < log_ratio {
                for c in 0..k {
                    pi[(i, c)] = proposal[c];
                }
            }
        }
    }
    pi
}
