//! Parameter state and likelihoods of the multilevel functional
//! mixed-membership model.
//!
//! For subject `i` and channel `j` the curve `Y_ij` on grid `t_i` is Gaussian
//! with mean `S(t_i)ᵀ Σ_k Z_ijk (ν_k + Σ_m χ_ijm φ_km)` and covariance
//! `σ_j² I`. Integrating the pseudo-scores `χ ~ N(0, 1)` out gives mean
//! `S(t_i)ᵀ Σ_k Z_ijk ν_k` and covariance `V(t_i, z_ij) + σ_j² I` where
//! `V = A Aᵀ` and column `m` of `A` is `S(t_i)ᵀ Σ_k Z_ijk φ_km`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{evaluate, BasisSystem, EvalMatrix};
use crate::error::{FunmixError, Result};
use crate::priors::ShrinkageParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter added to the marginal covariance diagonal if Cholesky fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_subjects: usize,
    pub n_channels: usize,
    pub n_features: usize,
    pub n_eigen: usize,
    pub n_basis: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_channels == 0 || self.n_features == 0 || self.n_basis == 0 {
            return Err(FunmixError::InvalidParameter(format!(
                "subjects, channels, features and basis size must all be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Observations of one subject: `J` channels sharing the grid `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub id: String,
    pub group: Option<String>,
    pub grid: Vec<f64>,
    /// `n_i × J`, column `j` is channel `j`.
    pub y: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    channels: Vec<String>,
    subjects: Vec<SubjectData>,
}

impl FunctionalDataset {
    pub fn new(channels: Vec<String>, subjects: Vec<SubjectData>) -> Result<Self> {
        if channels.is_empty() || subjects.is_empty() {
            return Err(FunmixError::Dimension(
                "dataset needs at least one subject and one channel".into(),
            ));
        }
        for s in &subjects {
            if s.y.ncols() != channels.len() {
                return Err(FunmixError::Dimension(format!(
                    "subject {} has {} channels, expected {}",
                    s.id,
                    s.y.ncols(),
                    channels.len()
                )));
            }
            if s.y.nrows() != s.grid.len() || s.grid.is_empty() {
                return Err(FunmixError::Dimension(format!(
                    "subject {} has {} grid points but {} observations per channel",
                    s.id,
                    s.grid.len(),
                    s.y.nrows()
                )));
            }
            if s.grid.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(FunmixError::InvalidParameter(format!(
                    "grid of subject {} must be strictly increasing",
                    s.id
                )));
            }
            if s.y.iter().chain(s.grid.iter()).any(|v| !v.is_finite()) {
                return Err(FunmixError::InvalidParameter(format!(
                    "subject {} contains non-finite values",
                    s.id
                )));
            }
        }
        Ok(FunctionalDataset { channels, subjects })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn subjects(&self) -> &[SubjectData] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &SubjectData {
        &self.subjects[i]
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn grid_len(&self, i: usize) -> usize {
        self.subjects[i].grid.len()
    }

    /// Total number of scalar observations `J Σ_i n_i`.
    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(|s| s.y.len()).sum()
    }

    pub fn curve(&self, i: usize, j: usize) -> DVector<f64> {
        self.subjects[i].y.column(j).into_owned()
    }

    /// Replace one subject's observation matrix, keeping its grid.
    pub fn set_observations(&mut self, i: usize, y: DMatrix<f64>) -> Result<()> {
        let s = &mut self.subjects[i];
        if y.shape() != s.y.shape() {
            return Err(FunmixError::Dimension(format!(
                "replacement for subject {} has shape {:?}, expected {:?}",
                s.id,
                y.shape(),
                s.y.shape()
            )));
        }
        s.y = y;
        Ok(())
    }

    /// Hash of ids, grids and values; used to check that fits share data.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.channels.hash(&mut h);
        for s in &self.subjects {
            s.id.hash(&mut h);
            s.group.hash(&mut h);
            for v in s.grid.iter().chain(s.y.iter()) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Mean coefficients `ν_k` (length `P`) and pseudo-eigenfunction
/// coefficients `φ_km`, stored as `phi[k][m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub nu: Vec<DVector<f64>>,
    pub phi: Vec<Vec<DVector<f64>>>,
}

/// Channel memberships `z[i]` (`J × K`, simplex rows), subject centroids
/// `pi` (`N × K`, simplex rows) and the concentration `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocations {
    pub z: Vec<DMatrix<f64>>,
    pub pi: DMatrix<f64>,
    pub eta: f64,
}

/// `chi[i]` is `J × M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoScores {
    pub chi: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma2: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub features: FeatureParams,
    pub allocations: Allocations,
    pub scores: PseudoScores,
    pub noise: NoiseParams,
    pub shrinkage: ShrinkageParams,
    pub lambda_nu: f64,
    pub lambda_phi: f64,
}

impl ModelState {
    /// A state with zero coefficients, uniform memberships, unit variances
    /// and unit shrinkage parameters.
    pub fn zeros(dims: &ModelDims) -> Self {
        let (n, j, k, m, p) = (
            dims.n_subjects,
            dims.n_channels,
            dims.n_features,
            dims.n_eigen,
            dims.n_basis,
        );
        let uniform = 1.0 / k as f64;
        ModelState {
            features: FeatureParams {
                nu: vec![DVector::zeros(p); k],
                phi: vec![vec![DVector::zeros(p); m]; k],
            },
            allocations: Allocations {
                z: vec![DMatrix::from_element(j, k, uniform); n],
                pi: DMatrix::from_element(n, k, uniform),
                eta: 1.0,
            },
            scores: PseudoScores {
                chi: vec![DMatrix::zeros(j, m); n],
            },
            noise: NoiseParams {
                sigma2: DVector::from_element(j, 1.0),
            },
            shrinkage: ShrinkageParams::ones(k, p, m),
            lambda_nu: 1.0,
            lambda_phi: 1.0,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_subjects: self.allocations.pi.nrows(),
            n_channels: self.noise.sigma2.len(),
            n_features: self.features.nu.len(),
            n_eigen: self.features.phi.first().map_or(0, |v| v.len()),
            n_basis: self.features.nu.first().map_or(0, |v| v.len()),
        }
    }

    /// Check the shapes of every block against each other.
    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dims();
        let bad = |what: &str| Err(FunmixError::Dimension(format!("{what} inconsistent with {d:?}")));
        if self.features.nu.iter().any(|v| v.len() != d.n_basis) {
            return bad("nu");
        }
        if self.features.phi.len() != d.n_features
            || self
                .features
                .phi
                .iter()
                .any(|row| row.len() != d.n_eigen || row.iter().any(|v| v.len() != d.n_basis))
        {
            return bad("phi");
        }
        if self.allocations.pi.ncols() != d.n_features
            || self.allocations.z.len() != d.n_subjects
            || self
                .allocations
                .z
                .iter()
                .any(|z| z.shape() != (d.n_channels, d.n_features))
        {
            return bad("allocations");
        }
        if self.scores.chi.len() != d.n_subjects
            || self
                .scores
                .chi
                .iter()
                .any(|c| c.shape() != (d.n_channels, d.n_eigen))
        {
            return bad("chi");
        }
        self.shrinkage.check_shape(d.n_features, d.n_basis, d.n_eigen)
    }

    /// Check shapes and that the dataset has matching subjects and channels.
    pub fn check_against(&self, data: &FunctionalDataset) -> Result<()> {
        self.check_shapes()?;
        let d = self.dims();
        if d.n_subjects != data.n_subjects() || d.n_channels != data.n_channels() {
            return Err(FunmixError::Dimension(format!(
                "state has {} subjects x {} channels, data has {} x {}",
                d.n_subjects,
                d.n_channels,
                data.n_subjects(),
                data.n_channels()
            )));
        }
        Ok(())
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let d = self.dims();
        if i >= d.n_subjects || j >= d.n_channels {
            return Err(FunmixError::Index(format!(
                "(subject {i}, channel {j}) outside {} x {}",
                d.n_subjects, d.n_channels
            )));
        }
        Ok(())
    }

    /// `Σ_k Z_ijk ν_k`.
    pub fn mean_coefficients(&self, i: usize, j: usize) -> DVector<f64> {
        let z = &self.allocations.z[i];
        let mut c = DVector::zeros(self.dims().n_basis);
        for (k, nu) in self.features.nu.iter().enumerate() {
            c.axpy(z[(j, k)], nu, 1.0);
        }
        c
    }

    /// `P × M` matrix with columns `Σ_k Z_ijk φ_km`.
    pub fn loading_coefficients(&self, i: usize, j: usize) -> DMatrix<f64> {
        let d = self.dims();
        let z = &self.allocations.z[i];
        let mut a = DMatrix::zeros(d.n_basis, d.n_eigen);
        for (k, row) in self.features.phi.iter().enumerate() {
            for (m, phi) in row.iter().enumerate() {
                let mut col = a.column_mut(m);
                col.axpy(z[(j, k)], phi, 1.0);
            }
        }
        a
    }

    /// `Σ_k Z_ijk (ν_k + Σ_m χ_ijm φ_km)`.
    pub fn conditional_coefficients(&self, i: usize, j: usize) -> DVector<f64> {
        let mut c = self.mean_coefficients(i, j);
        let chi = &self.scores.chi[i];
        let a = self.loading_coefficients(i, j);
        for m in 0..a.ncols() {
            c.axpy(chi[(j, m)], &a.column(m), 1.0);
        }
        c
    }

    /// Relabel features: new feature `k` is old feature `perm[k]`.
    pub fn permute_features(&self, perm: &[usize]) -> ModelState {
        let d = self.dims();
        assert_eq!(perm.len(), d.n_features, "permutation length");
        let mut out = self.clone();
        out.features.nu = perm.iter().map(|&k| self.features.nu[k].clone()).collect();
        out.features.phi = perm.iter().map(|&k| self.features.phi[k].clone()).collect();
        let permute_cols = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, perm[c])])
        };
        out.allocations.z = self.allocations.z.iter().map(permute_cols).collect();
        out.allocations.pi = permute_cols(&self.allocations.pi);
        out.shrinkage = self.shrinkage.permute_features(perm);
        out
    }
}

/// Evaluation matrices `S(t_i)` and Gram matrices `S(t_i) S(t_i)ᵀ` for
/// every subject grid.
#[derive(Debug, Clone)]
pub struct Design {
    evals: Vec<EvalMatrix>,
    grams: Vec<DMatrix<f64>>,
}

impl Design {
    pub fn new(basis: &BasisSystem, data: &FunctionalDataset) -> Result<Self> {
        let evals = data
            .subjects()
            .iter()
            .map(|s| evaluate(basis, &s.grid))
            .collect::<Result<Vec<_>>>()?;
        let grams = evals
            .iter()
            .map(|e| e.values() * e.values().transpose())
            .collect();
        Ok(Design { evals, grams })
    }

    pub fn eval(&self, i: usize) -> &EvalMatrix {
        &self.evals[i]
    }

    pub fn gram(&self, i: usize) -> &DMatrix<f64> {
        &self.grams[i]
    }

    pub fn n_basis(&self) -> usize {
        self.evals.first().map_or(0, |e| e.n_basis())
    }

    pub fn n_subjects(&self) -> usize {
        self.evals.len()
    }

    fn check(&self, state: &ModelState) -> Result<()> {
        let d = state.dims();
        if self.n_basis() != d.n_basis || self.n_subjects() != d.n_subjects {
            return Err(FunmixError::Dimension(format!(
                "design has {} subjects x {} basis functions, state has {} x {}",
                self.n_subjects(),
                self.n_basis(),
                d.n_subjects,
                d.n_basis
            )));
        }
        Ok(())
    }
}

/// Conditional mean of `Y_ij` given every parameter including `χ`.
pub fn conditional_mean(state: &ModelState, design: &Design, i: usize, j: usize) -> Result<DVector<f64>> {
    state.check_pair(i, j)?;
    design.check(state)?;
    Ok(design.eval(i).curve(&state.conditional_coefficients(i, j)))
}

fn isotropic_normal_ln_pdf(residual: &DVector<f64>, sigma2: f64) -> f64 {
    let n = residual.len() as f64;
    -0.5 * n * (LN_2PI + sigma2.ln()) - residual.norm_squared() / (2.0 * sigma2)
}

pub(crate) fn loglik_conditional_pair_unchecked(
    state: &ModelState,
    design: &Design,
    data: &FunctionalDataset,
    i: usize,
    j: usize,
) -> f64 {
    let mean = design.eval(i).curve(&state.conditional_coefficients(i, j));
    let resid = data.subject(i).y.column(j) - mean;
    isotropic_normal_ln_pdf(&resid, state.noise.sigma2[j])
}

pub fn loglik_conditional_pair(
    state: &ModelState,
    design: &Design,
    data: &FunctionalDataset,
    i: usize,
    j: usize,
) -> Result<f64> {
    state.check_against(data)?;
    design.check(state)?;
    state.check_pair(i, j)?;
    Ok(loglik_conditional_pair_unchecked(state, design, data, i, j))
}

/// `Σ_ij log N(Y_ij; conditional mean, σ_j² I)`.
pub fn loglik_conditional(state: &ModelState, design: &Design, data: &FunctionalDataset) -> Result<f64> {
    state.check_against(data)?;
    design.check(state)?;
    let mut total = 0.0;
    for i in 0..data.n_subjects() {
        for j in 0..data.n_channels() {
            total += loglik_conditional_pair_unchecked(state, design, data, i, j);
        }
    }
    Ok(total)
}

/// `V(t_i, z_ij) = A Aᵀ` with `A = S(t_i)ᵀ [Σ_k Z_ijk φ_k1, …, Σ_k Z_ijk φ_kM]`.
pub fn mixed_covariance(state: &ModelState, design: &Design, i: usize, j: usize) -> Result<DMatrix<f64>> {
    state.check_pair(i, j)?;
    design.check(state)?;
    Ok(mixed_covariance_unchecked(state, design, i, j))
}

fn mixed_covariance_unchecked(state: &ModelState, design: &Design, i: usize, j: usize) -> DMatrix<f64> {
    let a = design.eval(i).values().tr_mul(&state.loading_coefficients(i, j));
    &a * a.transpose()
}

/// Log-density of `y ~ N(mean, cov)` via Cholesky, retrying once with a
/// small diagonal jitter.
pub fn gaussian_ln_pdf(y: &DVector<f64>, mean: &DVector<f64>, cov: DMatrix<f64>) -> Result<f64> {
    let n = y.len();
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let jittered = cov + DMatrix::identity(n, n) * CHOLESKY_JITTER;
            jittered.cholesky().ok_or_else(|| {
                FunmixError::NotPositiveDefinite("marginal covariance".into())
            })?
        }
    };
    let resid = y - mean;
    let white = chol
        .l()
        .solve_lower_triangular(&resid)
        .expect("Cholesky factor has a non-zero diagonal");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (n as f64 * LN_2PI + log_det + white.norm_squared()))
}

pub(crate) fn loglik_marginal_pair_unchecked(
    state: &ModelState,
    design: &Design,
    data: &FunctionalDataset,
    i: usize,
    j: usize,
) -> Result<f64> {
    let n = data.grid_len(i);
    let mut cov = mixed_covariance_unchecked(state, design, i, j);
    for d in 0..n {
        cov[(d, d)] += state.noise.sigma2[j];
    }
    let mean = design.eval(i).curve(&state.mean_coefficients(i, j));
    gaussian_ln_pdf(&data.subject(i).y.column(j).into_owned(), &mean, cov)
}

pub fn loglik_marginal_pair(
    state: &ModelState,
    design: &Design,
    data: &FunctionalDataset,
    i: usize,
    j: usize,
) -> Result<f64> {
    state.check_against(data)?;
    design.check(state)?;
    state.check_pair(i, j)?;
    loglik_marginal_pair_unchecked(state, design, data, i, j)
}

/// `Σ_ij log N(Y_ij; S(t_i)ᵀ Σ_k Z_ijk ν_k, V(t_i, z_ij) + σ_j² I)`; the
/// pseudo-scores in `state` are ignored.
pub fn loglik_marginal(state: &ModelState, design: &Design, data: &FunctionalDataset) -> Result<f64> {
    state.check_against(data)?;
    design.check(state)?;
    let mut total = 0.0;
    for i in 0..data.n_subjects() {
        for j in 0..data.n_channels() {
            total += loglik_marginal_pair_unchecked(state, design, data, i, j)?;
        }
    }
    Ok(total)
}

/// Log-density of a univariate normal; shared by oracles and priors.
pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}
