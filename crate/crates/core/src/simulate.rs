//! Synthetic data from the generative model, and label alignment against a
//! known truth.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, evaluate, linspace, BasisSystem};
use crate::dist;
use crate::error::{FunmixError, Result};
use crate::model::{Design, FeatureParams, FunctionalDataset, ModelDims, ModelState, SubjectData};
use crate::priors::{sample_repulsive_mh, PriorConfig, ShrinkageParams};
use crate::sampler::SIMPLEX_FLOOR;

/// Metropolis sweeps used when drawing centroids from the repulsive prior.
const REPULSIVE_MH_SWEEPS: usize = 200;

/// Largest `K` for which exhaustive label alignment is attempted.
pub const MAX_ALIGN_FEATURES: usize = 8;

/// The generating state together with the basis it lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dims: ModelDims,
    pub basis: BasisSystem,
    pub state: ModelState,
    pub alpha_dir: Vec<f64>,
    pub tau_rep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_subjects: usize,
    pub n_channels: usize,
    pub n_features: usize,
    pub n_eigen: usize,
    pub n_basis: usize,
    pub degree: usize,
    pub grid_len: usize,
    pub domain: [f64; 2],
    pub noise_var: f64,
    pub eta: f64,
    pub alpha_dir: Vec<f64>,
    pub tau_rep: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_subjects: 40,
            n_channels: 5,
            n_features: 2,
            n_eigen: 2,
            n_basis: 10,
            degree: 3,
            grid_len: 40,
            domain: [6.0, 14.0],
            noise_var: 0.02,
            eta: 10.0,
            alpha_dir: vec![1.0, 1.0],
            tau_rep: 0.01,
            seed: 1,
        }
    }
}

impl SimulationConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_subjects: self.n_subjects,
            n_channels: self.n_channels,
            n_features: self.n_features,
            n_eigen: self.n_eigen,
            n_basis: self.n_basis,
        }
    }

    pub fn basis(&self) -> Result<BasisSystem> {
        if self.n_basis < self.degree + 1 {
            return Err(FunmixError::InvalidConfig(format!(
                "basis size {} too small for degree {}",
                self.n_basis, self.degree
            )));
        }
        build_basis(self.degree, self.n_basis - self.degree - 1, self.domain)
    }

    pub fn grid(&self) -> Vec<f64> {
        linspace(self.domain[0], self.domain[1], self.grid_len)
    }

    fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        if self.grid_len == 0 || !(self.noise_var > 0.0) || !(self.eta > 0.0) || self.tau_rep < 0.0 {
            return Err(FunmixError::InvalidConfig(format!("invalid simulation settings: {self:?}")));
        }
        if self.alpha_dir.len() != self.n_features || self.alpha_dir.iter().any(|&a| !(a > 0.0)) {
            return Err(FunmixError::InvalidConfig(format!(
                "alpha_dir must hold {} positive entries",
                self.n_features
            )));
        }
        Ok(())
    }
}

/// Mean curve of default feature `k` at relative position `u ∈ [0, 1]`:
/// a decreasing 1/f-like curve, a curve with one central peak, then peaks
/// at other positions for any further features.
fn default_mean_curve(k: usize, u: f64) -> f64 {
    match k {
        0 => 2.5 - 1.8 * (1.0 + 2.0 * u).ln() / 3f64.ln(),
        1 => 2.0 - 1.2 * u + 1.4 * (-(u - 0.5).powi(2) / (2.0 * 0.12f64.powi(2))).exp(),
        _ => {
            let centre = (k as f64 - 1.0) / (k as f64 + 1.0);
            1.5 + (-(u - centre).powi(2) / (2.0 * 0.1f64.powi(2))).exp()
        }
    }
}

/// Default pseudo-eigenfunction `m` of feature `k`; the second one of the
/// peaked feature moves the peak sideways.
fn default_eigen_curve(k: usize, m: usize, u: f64) -> f64 {
    match m {
        0 => 0.125 * (1.0 - 2.0 * u),
        1 if k == 1 => {
            let z = (u - 0.5) / 0.12;
            -0.125 * z * (-0.5 * z * z).exp()
        }
        1 => 0.05 * (std::f64::consts::PI * u).cos(),
        _ => 0.1 * (std::f64::consts::PI * m as f64 * u).cos() / m as f64,
    }
}

/// Least-squares projection of a function onto the basis.
fn project(basis: &BasisSystem, f: impl Fn(f64) -> f64) -> Result<DVector<f64>> {
    let [lo, hi] = basis.boundary();
    let grid = linspace(lo, hi, 400);
    let s = evaluate(basis, &grid)?;
    let y = DVector::from_iterator(grid.len(), grid.iter().map(|&t| f((t - lo) / (hi - lo))));
    let gram = s.values() * s.values().transpose();
    gram.cholesky()
        .map(|c| c.solve(&(s.values() * y)))
        .ok_or_else(|| FunmixError::NotPositiveDefinite("projection onto basis".into()))
}

/// Default feature-level truth: the curves above projected on the basis,
/// common noise variance, and shrinkage parameters at their prior means.
pub fn default_features(cfg: &SimulationConfig) -> Result<(BasisSystem, FeatureParams)> {
    let basis = cfg.basis()?;
    let nu = (0..cfg.n_features)
        .map(|k| project(&basis, |u| default_mean_curve(k, u)))
        .collect::<Result<Vec<_>>>()?;
    let phi = (0..cfg.n_features)
        .map(|k| {
            (0..cfg.n_eigen)
                .map(|m| project(&basis, |u| default_eigen_curve(k, m, u)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((basis, FeatureParams { nu, phi }))
}

fn clip_to_simplex(row: &mut [f64]) {
    for v in row.iter_mut() {
        *v = v.max(SIMPLEX_FLOOR * 10.0);
    }
    let total: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Draw `Z_ij ~ Dirichlet(η π_i)` for every subject and channel.
pub fn draw_memberships<R: Rng + ?Sized>(rng: &mut R, pi: &DMatrix<f64>, eta: f64, n_channels: usize) -> Vec<DMatrix<f64>> {
    let k = pi.ncols();
    (0..pi.nrows())
        .map(|i| {
            let conc: Vec<f64> = pi.row(i).iter().map(|&p| p * eta).collect();
            let mut z = DMatrix::zeros(n_channels, k);
            for j in 0..n_channels {
                let mut row = dist::dirichlet(rng, &conc);
                clip_to_simplex(&mut row);
                for c in 0..k {
                    z[(j, c)] = row[c];
                }
            }
            z
        })
        .collect()
}

/// Observations `Y_ij = S(t_i)ᵀ (conditional coefficients) + ε`, one
/// `n_i × J` matrix per subject; optionally redraws `χ ~ N(0, 1)` first.
pub fn draw_observations<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut ModelState,
    design: &Design,
    redraw_scores: bool,
) -> Vec<DMatrix<f64>> {
    let d = state.dims();
    if redraw_scores {
        for chi in state.scores.chi.iter_mut() {
            for v in chi.iter_mut() {
                *v = dist::std_normal(rng);
            }
        }
    }
    (0..d.n_subjects)
        .map(|i| {
            let s = design.eval(i);
            let mut y = DMatrix::zeros(s.n_points(), d.n_channels);
            for j in 0..d.n_channels {
                let mean = s.curve(&state.conditional_coefficients(i, j));
                let sd = state.noise.sigma2[j].sqrt();
                for t in 0..s.n_points() {
                    y[(t, j)] = mean[t] + sd * dist::std_normal(rng);
                }
            }
            y
        })
        .collect()
}

/// Subject ids `S001…` and channel ids `C01…` used by simulated datasets.
pub fn subject_id(i: usize) -> String {
    format!("S{:03}", i + 1)
}

pub fn channel_id(j: usize) -> String {
    format!("C{:02}", j + 1)
}

fn assemble(grid: &[f64], ys: Vec<DMatrix<f64>>, n_channels: usize) -> Result<FunctionalDataset> {
    let channels = (0..n_channels).map(channel_id).collect();
    let subjects = ys
        .into_iter()
        .enumerate()
        .map(|(i, y)| SubjectData {
            id: subject_id(i),
            group: None,
            grid: grid.to_vec(),
            y,
        })
        .collect();
    FunctionalDataset::new(channels, subjects)
}

/// Simulate a dataset. Without a truth, the default two-feature truth is
/// used and the centroids are drawn from the repulsive prior; with a truth,
/// its features, centroids, `η` and `σ²` are kept and `Z`, `χ` and the noise
/// are redrawn.
pub fn simulate_dataset(cfg: &SimulationConfig, truth: Option<&GroundTruth>) -> Result<(FunctionalDataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.dims();
    let mut truth = match truth {
        Some(t) => {
            if t.dims != dims {
                return Err(FunmixError::Dimension(format!(
                    "truth dims {:?} differ from simulation dims {dims:?}",
                    t.dims
                )));
            }
            t.clone()
        }
        None => {
            let (basis, features) = default_features(cfg)?;
            let mut state = ModelState::zeros(&dims);
            state.features = features;
            state.noise.sigma2 = DVector::from_element(cfg.n_channels, cfg.noise_var);
            state.allocations.eta = cfg.eta;
            let prior = PriorConfig::default_for(cfg.n_features);
            state.shrinkage = ShrinkageParams::prior_means(&prior, cfg.n_features, cfg.n_basis, cfg.n_eigen);
            state.allocations.pi = sample_repulsive_mh(&mut rng, cfg.n_subjects, &cfg.alpha_dir, cfg.tau_rep, REPULSIVE_MH_SWEEPS);
            for i in 0..cfg.n_subjects {
                let mut row: Vec<f64> = state.allocations.pi.row(i).iter().copied().collect();
                clip_to_simplex(&mut row);
                for (c, v) in row.into_iter().enumerate() {
                    state.allocations.pi[(i, c)] = v;
                }
            }
            GroundTruth {
                dims,
                basis,
                state,
                alpha_dir: cfg.alpha_dir.clone(),
                tau_rep: cfg.tau_rep,
            }
        }
    };
    let grid = cfg.grid();
    let state = &mut truth.state;
    state.allocations.z = draw_memberships(&mut rng, &state.allocations.pi, state.allocations.eta, cfg.n_channels);
    // placeholder observations fix the grids for the design
    let placeholder = assemble(&grid, vec![DMatrix::zeros(grid.len(), cfg.n_channels); cfg.n_subjects], cfg.n_channels)?;
    let design = Design::new(&truth.basis, &placeholder)?;
    let ys = draw_observations(&mut rng, state, &design, true);
    let data = assemble(&grid, ys, cfg.n_channels)?;
    Ok((data, truth))
}

/// Next permutation in lexicographic order; `false` once the last one is reached.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Permutation `perm` minimizing `Σ_k cost[(k, perm[k])]`; ties go to the
/// lexicographically smallest permutation.
pub fn best_permutation(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let k = cost.nrows();
    if k > MAX_ALIGN_FEATURES {
        return Err(FunmixError::InvalidParameter(format!(
            "label alignment searches all permutations and supports K <= {MAX_ALIGN_FEATURES}, got {k}"
        )));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let c: f64 = perm.iter().enumerate().map(|(r, &e)| cost[(r, e)]).sum();
        if c < best_cost {
            best_cost = c;
            best = perm.clone();
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}

/// Squared grid distances between reference curve `r` and estimate curve `e`.
pub fn curve_cost(estimate: &[DVector<f64>], reference: &[DVector<f64>], basis: &BasisSystem, grid: &[f64]) -> Result<DMatrix<f64>> {
    if estimate.len() != reference.len() {
        return Err(FunmixError::Dimension(format!(
            "cannot align {} estimated features with {} reference features",
            estimate.len(),
            reference.len()
        )));
    }
    let s = evaluate(basis, grid)?;
    let est: Vec<DVector<f64>> = estimate.iter().map(|c| s.curve(c)).collect();
    let refs: Vec<DVector<f64>> = reference.iter().map(|c| s.curve(c)).collect();
    Ok(DMatrix::from_fn(refs.len(), est.len(), |r, e| (&est[e] - &refs[r]).norm_squared()))
}

/// Permutation matching estimated features to the true ones: feature `k` of
/// the truth corresponds to estimated feature `perm[k]`.
pub fn align_labels(estimate: &FeatureParams, truth: &GroundTruth, basis: &BasisSystem, grid: &[f64]) -> Result<Vec<usize>> {
    let cost = curve_cost(&estimate.nu, &truth.state.features.nu, basis, grid)?;
    best_permutation(&cost)
}
