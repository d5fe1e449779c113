//! Posterior summaries: pointwise bands for the feature means, covariance
//! surfaces and their eigenfunctions, membership tables, group contrasts,
//! information criteria and the elbow rule for choosing `K`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{evaluate, BasisSystem};
use crate::error::{FunmixError, Result};
use crate::model::{loglik_marginal, Design, FunctionalDataset, ModelDims, ModelState};
use crate::sampler::ChainOutput;
use crate::simulate::{best_permutation, curve_cost};

/// Largest tolerated asymmetry of a covariance surface, relative to its
/// largest entry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Pointwise median and equal-tailed band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: DVector<f64>,
    pub median: DVector<f64>,
    pub hi: DVector<f64>,
}

/// Leading eigenvalues and weighted-orthonormal eigenfunctions (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpairs {
    pub values: DVector<f64>,
    pub functions: DMatrix<f64>,
}

/// Which subjects form the two groups of a contrast, and on which feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSpec {
    /// Group label of each subject.
    pub labels: Vec<Option<String>>,
    pub group_a: String,
    pub group_b: String,
    pub feature: usize,
}

/// Per-channel difference (`group_a − group_b`) of mean loadings on one
/// feature. Both averaging orders are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupContrast {
    pub feature: usize,
    pub group_a: String,
    pub group_b: String,
    /// Channel means of `Z_ijk` over subjects of each group, posterior mean.
    pub mean_a: DVector<f64>,
    pub mean_b: DVector<f64>,
    /// Subject average within each draw, then the average over draws.
    pub draw_then_subject: DVector<f64>,
    /// Posterior mean per subject, then the subject average.
    pub subject_then_draw: DVector<f64>,
    /// 2.5% and 97.5% quantiles of the per-draw contrast.
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub grid: Vec<f64>,
    pub feature_means: Vec<Band>,
    /// Posterior mean covariance surface of each feature.
    pub cov_surfaces: Vec<DMatrix<f64>>,
    pub eigenpairs: Vec<Eigenpairs>,
    /// `N × K` posterior mean of `π`.
    pub membership_subject: DMatrix<f64>,
    /// Posterior mean of `Z`, one `J × K` matrix per subject.
    pub membership_channel: Vec<DMatrix<f64>>,
    pub group_contrast: Option<GroupContrast>,
}

/// Type-7 quantile of sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Pointwise 2.5/50/97.5% band of a set of curves.
pub fn pointwise_band(curves: &[DVector<f64>]) -> Result<Band> {
    let first = curves.first().ok_or(FunmixError::EmptyChain)?;
    let n = first.len();
    let mut lo = DVector::zeros(n);
    let mut median = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    let mut column = Vec::with_capacity(curves.len());
    for t in 0..n {
        column.clear();
        column.extend(curves.iter().map(|c| c[t]));
        column.sort_by(f64::total_cmp);
        lo[t] = quantile_sorted(&column, 0.025);
        median[t] = quantile_sorted(&column, 0.5);
        hi[t] = quantile_sorted(&column, 0.975);
    }
    Ok(Band { lo, median, hi })
}

/// Trapezoid quadrature weights on a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Result<DVector<f64>> {
    let n = grid.len();
    if n < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FunmixError::InvalidConfig(
            "trapezoid weights need a strictly increasing grid of at least two points".into(),
        ));
    }
    let mut w = DVector::zeros(n);
    for t in 0..n - 1 {
        let h = 0.5 * (grid[t + 1] - grid[t]);
        w[t] += h;
        w[t + 1] += h;
    }
    Ok(w)
}

/// Per draw, `C_k = Σ_m (Sᵀφ_km)(Sᵀφ_km)ᵀ` on the grid.
pub fn reconstruct_covariance(draws: &[ModelState], basis: &BasisSystem, grid: &[f64], k: usize) -> Result<Vec<DMatrix<f64>>> {
    let s = evaluate(basis, grid)?;
    draws
        .iter()
        .map(|d| {
            let phis = d
                .features
                .phi
                .get(k)
                .ok_or_else(|| FunmixError::Index(format!("feature {k} out of range")))?;
            let mut c = DMatrix::zeros(grid.len(), grid.len());
            for phi in phis {
                let u = s.curve(phi);
                c += &u * u.transpose();
            }
            Ok(c)
        })
        .collect()
}

/// Weighted eigenproblem `C W u = λ u`: eigenvalues in descending order and
/// eigenfunctions (columns) with `uᵀ W u = 1`, each signed so that its
/// largest-magnitude entry is positive.
pub fn extract_eigenfunctions(surface: &DMatrix<f64>, weights: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = surface.nrows();
    if surface.ncols() != n || weights.len() != n {
        return Err(FunmixError::Dimension(format!(
            "surface {:?} and {} weights do not match",
            surface.shape(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(FunmixError::InvalidParameter("quadrature weights must be positive".into()));
    }
    let scale = surface.amax().max(f64::MIN_POSITIVE);
    let asym = (surface - surface.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(FunmixError::InvalidParameter(format!(
            "covariance surface is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let root = weights.map(f64::sqrt);
    let mut scaled = DMatrix::from_fn(n, n, |r, c| root[r] * surface[(r, c)] * root[c]);
    scaled = (&scaled + scaled.transpose()) * 0.5;
    let eig = SymmetricEigen::new(scaled);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&r| eig.eigenvalues[r]));
    let mut functions = DMatrix::zeros(n, n);
    for (col, &r) in order.iter().enumerate() {
        let mut u = DVector::from_fn(n, |t, _| eig.eigenvectors[(t, r)] / root[t]);
        let peak = u.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if peak < 0.0 {
            u = -u;
        }
        functions.set_column(col, &u);
    }
    Ok((values, functions))
}

/// Relabel `draw` to best match `reference` curves, then flip the sign of
/// each eigen-index `m` (across all features, with its scores) when that
/// brings `φ_·m` closer to the reference loadings.
pub fn align_draw(
    draw: &ModelState,
    reference_nu: &[DVector<f64>],
    reference_phi: &[Vec<DVector<f64>>],
    basis: &BasisSystem,
    grid: &[f64],
) -> Result<ModelState> {
    let cost = curve_cost(&draw.features.nu, reference_nu, basis, grid)?;
    let perm = best_permutation(&cost)?;
    let mut out = draw.permute_features(&perm);
    let d = out.dims();
    for m in 0..d.n_eigen {
        let agreement: f64 = (0..d.n_features)
            .map(|k| out.features.phi[k][m].dot(&reference_phi[k][m]))
            .sum();
        if agreement < 0.0 {
            for k in 0..d.n_features {
                out.features.phi[k][m].neg_mut();
            }
            for chi in out.scores.chi.iter_mut() {
                chi.column_mut(m).neg_mut();
            }
        }
    }
    Ok(out)
}

/// Align every draw to the last one, then once more to the mean of the
/// aligned draws.
pub fn align_chain(chain: &ChainOutput, basis: &BasisSystem, grid: &[f64]) -> Result<ChainOutput> {
    let last = chain.draws.last().ok_or(FunmixError::EmptyChain)?;
    let mut reference_nu = last.features.nu.clone();
    let mut reference_phi = last.features.phi.clone();
    let mut aligned = chain.draws.clone();
    for _ in 0..2 {
        aligned = chain
            .draws
            .iter()
            .map(|d| align_draw(d, &reference_nu, &reference_phi, basis, grid))
            .collect::<Result<_>>()?;
        let mean = mean_state(&aligned)?;
        reference_nu = mean.features.nu;
        reference_phi = mean.features.phi;
    }
    let mut out = chain.clone();
    out.draws = aligned;
    Ok(out)
}

/// Align each chain, align every chain to the first, and concatenate the
/// draws.
pub fn pool_chains(chains: &[ChainOutput], basis: &BasisSystem, grid: &[f64]) -> Result<ChainOutput> {
    let first = chains.first().ok_or(FunmixError::EmptyChain)?;
    let mut pooled = align_chain(first, basis, grid)?;
    let reference = mean_state(&pooled.draws)?;
    for chain in &chains[1..] {
        if chain.data_fingerprint != first.data_fingerprint {
            return Err(FunmixError::DataMismatch("pooled chains were fitted on different data".into()));
        }
        let aligned = align_chain(chain, basis, grid)?;
        for d in &aligned.draws {
            pooled.draws.push(align_draw(d, &reference.features.nu, &reference.features.phi, basis, grid)?);
        }
        pooled.iterations.extend(&chain.iterations);
        pooled.log_posterior_trace.extend(&chain.log_posterior_trace);
    }
    Ok(pooled)
}

/// Arithmetic mean of every parameter over the draws (no relabelling).
pub fn mean_state(draws: &[ModelState]) -> Result<ModelState> {
    let first = draws.first().ok_or(FunmixError::EmptyChain)?;
    let inv = 1.0 / draws.len() as f64;
    let mut acc = first.clone();
    for d in &draws[1..] {
        for (a, b) in acc.features.nu.iter_mut().zip(&d.features.nu) {
            *a += b;
        }
        for (ra, rb) in acc.features.phi.iter_mut().zip(&d.features.phi) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        for (a, b) in acc.allocations.z.iter_mut().zip(&d.allocations.z) {
            *a += b;
        }
        acc.allocations.pi += &d.allocations.pi;
        acc.allocations.eta += d.allocations.eta;
        for (a, b) in acc.scores.chi.iter_mut().zip(&d.scores.chi) {
            *a += b;
        }
        acc.noise.sigma2 += &d.noise.sigma2;
        for (a, b) in acc.shrinkage.gamma.iter_mut().zip(&d.shrinkage.gamma) {
            *a += b;
        }
        acc.shrinkage.delta += &d.shrinkage.delta;
        acc.shrinkage.a1 += &d.shrinkage.a1;
        acc.shrinkage.a2 += &d.shrinkage.a2;
    }
    acc.features.nu.iter_mut().for_each(|v| *v *= inv);
    acc.features.phi.iter_mut().flatten().for_each(|v| *v *= inv);
    acc.allocations.z.iter_mut().for_each(|z| *z *= inv);
    acc.allocations.pi *= inv;
    acc.allocations.eta *= inv;
    acc.scores.chi.iter_mut().for_each(|c| *c *= inv);
    acc.noise.sigma2 *= inv;
    acc.shrinkage.gamma.iter_mut().for_each(|g| *g *= inv);
    acc.shrinkage.delta *= inv;
    acc.shrinkage.a1 *= inv;
    acc.shrinkage.a2 *= inv;
    Ok(acc)
}

fn group_contrast(chain: &ChainOutput, spec: &ContrastSpec) -> Result<GroupContrast> {
    let d = chain.draws[0].dims();
    if spec.labels.len() != d.n_subjects {
        return Err(FunmixError::Dimension(format!(
            "{} group labels for {} subjects",
            spec.labels.len(),
            d.n_subjects
        )));
    }
    if spec.feature >= d.n_features {
        return Err(FunmixError::Index(format!(
            "contrast feature {} out of range for K = {}",
            spec.feature, d.n_features
        )));
    }
    let members = |g: &str| -> Vec<usize> {
        (0..d.n_subjects)
            .filter(|&i| spec.labels[i].as_deref() == Some(g))
            .collect()
    };
    let (a, b) = (members(&spec.group_a), members(&spec.group_b));
    if a.is_empty() || b.is_empty() {
        return Err(FunmixError::InvalidConfig(format!(
            "groups '{}' and '{}' must both have subjects",
            spec.group_a, spec.group_b
        )));
    }
    let k = spec.feature;
    let j_count = d.n_channels;
    let channel_mean = |s: &ModelState, idx: &[usize]| {
        DVector::from_fn(j_count, |j, _| {
            idx.iter().map(|&i| s.allocations.z[i][(j, k)]).sum::<f64>() / idx.len() as f64
        })
    };
    let per_draw: Vec<DVector<f64>> = chain
        .draws
        .iter()
        .map(|s| channel_mean(s, &a) - channel_mean(s, &b))
        .collect();
    let n_draws = per_draw.len() as f64;
    let draw_then_subject = per_draw.iter().fold(DVector::zeros(j_count), |acc, c| acc + c) / n_draws;
    let means = mean_state(&chain.draws)?;
    let mean_a = channel_mean(&means, &a);
    let mean_b = channel_mean(&means, &b);
    let subject_then_draw = &mean_a - &mean_b;
    let band = pointwise_band(&per_draw)?;
    Ok(GroupContrast {
        feature: k,
        group_a: spec.group_a.clone(),
        group_b: spec.group_b.clone(),
        mean_a,
        mean_b,
        draw_then_subject,
        subject_then_draw,
        lo: band.lo,
        hi: band.hi,
    })
}

/// Summaries of a (label-aligned) chain on `grid`.
pub fn summarize(chain: &ChainOutput, basis: &BasisSystem, grid: &[f64], contrast: Option<&ContrastSpec>) -> Result<PosteriorSummary> {
    let first = chain.draws.first().ok_or(FunmixError::EmptyChain)?;
    let d = first.dims();
    let s = evaluate(basis, grid)?;
    let weights = trapezoid_weights(grid)?;
    let mut feature_means = Vec::with_capacity(d.n_features);
    let mut cov_surfaces = Vec::with_capacity(d.n_features);
    let mut eigenpairs = Vec::with_capacity(d.n_features);
    for k in 0..d.n_features {
        let curves: Vec<DVector<f64>> = chain.draws.iter().map(|dr| s.curve(&dr.features.nu[k])).collect();
        feature_means.push(pointwise_band(&curves)?);
        let surfaces = reconstruct_covariance(&chain.draws, basis, grid, k)?;
        let mean = surfaces.iter().fold(DMatrix::zeros(grid.len(), grid.len()), |acc, c| acc + c)
            / surfaces.len() as f64;
        let (values, functions) = extract_eigenfunctions(&mean, &weights)?;
        let keep = d.n_eigen.min(grid.len());
        eigenpairs.push(Eigenpairs {
            values: values.rows(0, keep).into_owned(),
            functions: functions.columns(0, keep).into_owned(),
        });
        cov_surfaces.push(mean);
    }
    let means = mean_state(&chain.draws)?;
    let group_contrast = contrast.map(|c| group_contrast(chain, c)).transpose()?;
    Ok(PosteriorSummary {
        grid: grid.to_vec(),
        feature_means,
        cov_surfaces,
        eigenpairs,
        membership_subject: means.allocations.pi,
        membership_channel: means.allocations.z,
        group_contrast,
    })
}

/// One candidate `K` in an information-criterion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcRow {
    pub k: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub mean_deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcTable {
    pub n_obs: usize,
    pub rows: Vec<IcRow>,
}

impl IcTable {
    fn best_by(&self, key: impl Fn(&IcRow) -> f64) -> Option<usize> {
        self.rows
            .iter()
            .min_by(|a, b| key(a).total_cmp(&key(b)).then(a.n_params.cmp(&b.n_params)))
            .map(|r| r.k)
    }

    pub fn best_aic(&self) -> Option<usize> {
        self.best_by(|r| r.aic)
    }

    pub fn best_bic(&self) -> Option<usize> {
        self.best_by(|r| r.bic)
    }
}

/// `KP + KMP + J + NJ(K−1) + N(K−1) + 1`: feature means, pseudo-
/// eigenfunctions, noise variances, free channel memberships, free subject
/// centroids and `η`.
pub fn parameter_count(d: &ModelDims) -> usize {
    let (n, j, k, m, p) = (d.n_subjects, d.n_channels, d.n_features, d.n_eigen, d.n_basis);
    k * p + k * m * p + j + n * j * (k - 1) + n * (k - 1) + 1
}

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    2.0 * n_params as f64 - 2.0 * loglik
}

pub fn bic(loglik: f64, n_params: usize, n_obs: usize) -> f64 {
    n_params as f64 * (n_obs as f64).ln() - 2.0 * loglik
}

/// Criteria for each chain: marginal log-likelihood at the aligned posterior
/// mean, AIC, BIC and the mean deviance `−2 log p(Y | θ)` over draws.
pub fn information_criteria(data: &FunctionalDataset, basis: &BasisSystem, chains: &[ChainOutput]) -> Result<IcTable> {
    let fingerprint = data.fingerprint();
    let design = Design::new(basis, data)?;
    let [lo, hi] = basis.boundary();
    let grid = crate::basis::linspace(lo, hi, 101);
    let mut rows = Vec::with_capacity(chains.len());
    for chain in chains {
        if chain.data_fingerprint != fingerprint {
            return Err(FunmixError::DataMismatch(format!(
                "chain with K = {} was fitted on different data",
                chain.n_features()
            )));
        }
        let aligned = align_chain(chain, basis, &grid)?;
        let mean = mean_state(&aligned.draws)?;
        let loglik = loglik_marginal(&mean, &design, data)?;
        let mut deviance = 0.0;
        for d in &chain.draws {
            deviance += -2.0 * loglik_marginal(d, &design, data)?;
        }
        let n_params = parameter_count(&mean.dims());
        rows.push(IcRow {
            k: mean.dims().n_features,
            loglik,
            n_params,
            aic: aic(loglik, n_params),
            bic: bic(loglik, n_params, data.n_obs()),
            mean_deviance: deviance / chain.draws.len() as f64,
        });
    }
    rows.sort_by_key(|r| r.k);
    Ok(IcTable {
        n_obs: data.n_obs(),
        rows,
    })
}

/// `K` at the largest second difference `D_{K−1} − 2 D_K + D_{K+1}` of the
/// mean deviance over the candidates in increasing `K`; ties go to the
/// smaller `K`.
pub fn elbow_select(table: &IcTable) -> Result<usize> {
    if table.rows.len() < 3 {
        return Err(FunmixError::InvalidConfig(format!(
            "the elbow rule needs at least 3 candidate K values, got {}",
            table.rows.len()
        )));
    }
    let mut rows: Vec<&IcRow> = table.rows.iter().collect();
    rows.sort_by_key(|r| r.k);
    let dev: Vec<f64> = rows.iter().map(|r| r.mean_deviance).collect();
    let scale = dev.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale;
    let mut best = (rows[1].k, dev[0] - 2.0 * dev[1] + dev[2]);
    for c in 2..rows.len() - 1 {
        let second = dev[c - 1] - 2.0 * dev[c] + dev[c + 1];
        if second > best.1 + tol {
            best = (rows[c].k, second);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::linspace;
    use crate::model::mixed_covariance;
    use crate::sampler::{Acceptance, ProposalScales, SamplerConfig};
    use crate::simulate::{simulate_dataset, SimulationConfig};

    fn chain_of(draws: Vec<ModelState>) -> ChainOutput {
        let config = SamplerConfig::default();
        ChainOutput {
            iterations: (0..draws.len()).collect(),
            log_posterior_trace: vec![0.0; draws.len()],
            draws,
            accept_rates: Acceptance::default().rates(),
            acceptance: Acceptance::default(),
            seed: config.seed,
            final_scales: ProposalScales::from(&config),
            config,
            data_fingerprint: 0,
        }
    }

    fn small_truth() -> (FunctionalDataset, crate::simulate::GroundTruth) {
        let cfg = SimulationConfig {
            n_subjects: 4,
            n_channels: 2,
            grid_len: 12,
            ..SimulationConfig::default()
        };
        simulate_dataset(&cfg, None).unwrap()
    }

    #[test]
    fn quantiles_interpolate() {
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 3.0);
        assert!((quantile_sorted(&sorted, 0.025) - 1.1).abs() < 1e-12);
        assert!((quantile_sorted(&sorted, 0.975) - 4.9).abs() < 1e-12);
    }

    #[test]
    fn identical_draws_give_zero_width_bands() {
        let (_, truth) = small_truth();
        let chain = chain_of(vec![truth.state.clone(); 7]);
        let grid = linspace(6.0, 14.0, 25);
        let s = summarize(&chain, &truth.basis, &grid, None).unwrap();
        for band in &s.feature_means {
            assert_eq!(band.lo, band.hi);
            assert_eq!(band.lo, band.median);
        }
        for i in 0..4 {
            assert!((s.membership_subject.row(i).sum() - 1.0).abs() < 1e-12);
            for j in 0..2 {
                assert!((s.membership_channel[i].row(j).sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_chain_is_rejected() {
        let (_, truth) = small_truth();
        let chain = chain_of(Vec::new());
        assert!(matches!(
            summarize(&chain, &truth.basis, &[6.0, 7.0], None),
            Err(FunmixError::EmptyChain)
        ));
    }

    #[test]
    fn no_eigenfunctions_give_zero_surfaces() {
        let (_, truth) = small_truth();
        let mut state = truth.state.clone();
        for row in state.features.phi.iter_mut() {
            row.clear();
        }
        for chi in state.scores.chi.iter_mut() {
            *chi = DMatrix::zeros(2, 0);
        }
        let grid = linspace(6.0, 14.0, 9);
        let c = reconstruct_covariance(&[state], &truth.basis, &grid, 1).unwrap();
        assert_eq!(c[0], DMatrix::zeros(9, 9));
    }

    #[test]
    fn surface_matches_mixed_covariance_for_pure_membership() {
        let (data, truth) = small_truth();
        let mut state = truth.state.clone();
        state.allocations.z[0] = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let design = Design::new(&truth.basis, &data).unwrap();
        let grid = data.subject(0).grid.clone();
        let c = reconstruct_covariance(std::slice::from_ref(&state), &truth.basis, &grid, 1).unwrap();
        let v = mixed_covariance(&state, &design, 0, 0).unwrap();
        assert!((&c[0] - v).amax() < 1e-12);
    }

    #[test]
    fn rank_one_surface() {
        let grid = linspace(0.0, 1.0, 51);
        let w = trapezoid_weights(&grid).unwrap();
        let f = DVector::from_iterator(51, grid.iter().map(|&t| -(std::f64::consts::PI * t).sin()));
        let c = 2.0 * &f * f.transpose();
        let (values, functions) = extract_eigenfunctions(&c, &w).unwrap();
        let norm2 = (f.component_mul(&f)).dot(&w);
        assert!((values[0] - 2.0 * norm2).abs() < 1e-10);
        assert!(values[1].abs() < 1e-10);
        let u = functions.column(0);
        // unit weighted norm, positive peak
        assert!((u.component_mul(&u).dot(&w) - 1.0).abs() < 1e-10);
        let expected = -&f / norm2.sqrt();
        assert!((u - expected).amax() < 1e-10);
    }

    #[test]
    fn eigenfunctions_are_weighted_orthonormal_and_reconstruct() {
        let grid: Vec<f64> = (0..20).map(|i| (i as f64 / 19.0).powf(1.3)).collect();
        let w = trapezoid_weights(&grid).unwrap();
        let a = DMatrix::from_fn(20, 3, |r, c| ((r + 1) as f64 * (c + 1) as f64 * 0.37).sin());
        let c = &a * a.transpose();
        let (values, u) = extract_eigenfunctions(&c, &w).unwrap();
        let gram = u.transpose() * DMatrix::from_diagonal(&w) * &u;
        assert!((gram - DMatrix::identity(20, 20)).amax() < 1e-9);
        let rebuilt = &u * DMatrix::from_diagonal(&values) * u.transpose();
        assert!((rebuilt - &c).amax() < 1e-9 * c.amax());
        assert!(values.as_slice().windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn eigenvalues_match_generalized_problem() {
        // oracle: eigenvalues of C W through a dense non-symmetric solver
        let grid = linspace(0.0, 2.0, 20);
        let w = trapezoid_weights(&grid).unwrap();
        let c = DMatrix::from_fn(20, 20, |r, s| (-(grid[r] - grid[s]).powi(2)).exp());
        let (values, u) = extract_eigenfunctions(&c, &w).unwrap();
        let cw = &c * DMatrix::from_diagonal(&w);
        let mut oracle: Vec<f64> = cw.complex_eigenvalues().iter().map(|z| z.re).collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in values.iter().zip(&oracle).take(6) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for m in 0..4 {
            let lhs = &cw * u.column(m);
            assert!((lhs - values[m] * u.column(m)).amax() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_surface_is_rejected() {
        let mut c = DMatrix::identity(4, 4);
        c[(0, 1)] = 0.5;
        let w = trapezoid_weights(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(extract_eigenfunctions(&c, &w).is_err());
    }

    #[test]
    fn trapezoid_needs_increasing_grid() {
        assert!(trapezoid_weights(&[0.0]).is_err());
        assert!(trapezoid_weights(&[0.0, 1.0, 1.0]).is_err());
        let w = trapezoid_weights(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 1.5, 1.0]);
    }

    #[test]
    fn alignment_undoes_relabelling_and_sign_flips() {
        let (_, truth) = small_truth();
        let grid = linspace(6.0, 14.0, 30);
        let mut swapped = truth.state.permute_features(&[1, 0]);
        for k in 0..2 {
            swapped.features.phi[k][1].neg_mut();
        }
        for chi in swapped.scores.chi.iter_mut() {
            chi.column_mut(1).neg_mut();
        }
        let chain = chain_of(vec![truth.state.clone(), swapped, truth.state.clone()]);
        let aligned = align_chain(&chain, &truth.basis, &grid).unwrap();
        for d in &aligned.draws {
            assert!((d.features.nu[0].clone() - &truth.state.features.nu[0]).amax() < 1e-12);
            assert!((d.features.phi[1][1].clone() - &truth.state.features.phi[1][1]).amax() < 1e-12);
            assert!((&d.scores.chi[2] - &truth.state.scores.chi[2]).amax() < 1e-12);
            assert!((&d.allocations.pi - &truth.state.allocations.pi).amax() < 1e-12);
        }
    }

    #[test]
    fn pooling_relabels_later_chains() {
        let (_, truth) = small_truth();
        let grid = linspace(6.0, 14.0, 30);
        let a = chain_of(vec![truth.state.clone(); 2]);
        let b = chain_of(vec![truth.state.permute_features(&[1, 0]); 3]);
        let pooled = pool_chains(&[a, b.clone()], &truth.basis, &grid).unwrap();
        assert_eq!(pooled.draws.len(), 5);
        for d in &pooled.draws {
            assert!((&d.allocations.pi - &truth.state.allocations.pi).amax() < 1e-12);
        }
        let mut foreign = b;
        foreign.data_fingerprint = 7;
        assert!(pool_chains(&[chain_of(vec![truth.state.clone()]), foreign], &truth.basis, &grid).is_err());
    }

    #[test]
    fn random_surfaces_are_symmetric_psd() {
        let (_, truth) = small_truth();
        let grid = linspace(6.0, 14.0, 17);
        let mut s = truth.state.clone();
        for (q, phi) in s.features.phi.iter_mut().flatten().enumerate() {
            for (r, v) in phi.iter_mut().enumerate() {
                *v = ((q * 7 + r * 3) as f64 * 0.61).sin();
            }
        }
        for c in reconstruct_covariance(&[s], &truth.basis, &grid, 0).unwrap() {
            assert!((&c - c.transpose()).amax() < 1e-12);
            assert!(c.symmetric_eigen().eigenvalues.min() > -1e-10);
        }
    }

    #[test]
    fn summary_is_invariant_to_score_sign_flips() {
        let (_, truth) = small_truth();
        let grid = linspace(6.0, 14.0, 15);
        let mut flipped = truth.state.clone();
        for k in 0..2 {
            flipped.features.phi[k][0].neg_mut();
        }
        let a = summarize(&chain_of(vec![truth.state.clone()]), &truth.basis, &grid, None).unwrap();
        let b = summarize(&chain_of(vec![flipped]), &truth.basis, &grid, None).unwrap();
        for k in 0..2 {
            assert!((&a.cov_surfaces[k] - &b.cov_surfaces[k]).amax() < 1e-12);
            assert!((&a.eigenpairs[k].functions - &b.eigenpairs[k].functions).amax() < 1e-9);
        }
    }

    #[test]
    fn contrast_orders_and_band() {
        let (_, truth) = small_truth();
        let mut other = truth.state.clone();
        other.allocations.z.iter_mut().for_each(|z| z.column_mut(0).fill(0.5));
        other.allocations.z.iter_mut().for_each(|z| z.column_mut(1).fill(0.5));
        let chain = chain_of(vec![truth.state.clone(), other]);
        let spec = ContrastSpec {
            labels: vec![Some("a".into()), Some("a".into()), Some("b".into()), None],
            group_a: "a".into(),
            group_b: "b".into(),
            feature: 0,
        };
        let s = summarize(&chain, &truth.basis, &[6.0, 10.0, 14.0], Some(&spec)).unwrap();
        let g = s.group_contrast.unwrap();
        let z = &truth.state.allocations.z;
        for j in 0..2 {
            let first = 0.5 * (z[0][(j, 0)] + z[1][(j, 0)]) - z[2][(j, 0)];
            let expected = 0.5 * first;
            assert!((g.draw_then_subject[j] - expected).abs() < 1e-12);
            assert!((g.subject_then_draw[j] - expected).abs() < 1e-12);
            assert!(g.lo[j] <= expected && expected <= g.hi[j]);
        }
        let bad = ContrastSpec { group_b: "c".into(), ..spec };
        assert!(summarize(&chain, &truth.basis, &[6.0, 10.0], Some(&bad)).is_err());
    }

    #[test]
    fn criteria_arithmetic() {
        assert_eq!(aic(-100.0, 10), 220.0);
        assert!((bic(-100.0, 10, 100) - (10.0 * 100f64.ln() + 200.0)).abs() < 1e-12);
        let d = ModelDims {
            n_subjects: 3,
            n_channels: 2,
            n_features: 2,
            n_eigen: 1,
            n_basis: 4,
        };
        assert_eq!(parameter_count(&d), 8 + 8 + 2 + 6 + 3 + 1);
    }

    fn table(devs: &[f64]) -> IcTable {
        IcTable {
            n_obs: 100,
            rows: devs
                .iter()
                .enumerate()
                .map(|(i, &d)| IcRow {
                    k: i + 1,
                    loglik: -0.5 * d,
                    n_params: 10 * (i + 1),
                    aic: aic(-0.5 * d, 10 * (i + 1)),
                    bic: bic(-0.5 * d, 10 * (i + 1), 100),
                    mean_deviance: d,
                })
                .collect(),
        }
    }

    #[test]
    fn elbow_finds_the_bend() {
        assert_eq!(elbow_select(&table(&[100.0, 40.0, 38.0, 37.0])).unwrap(), 2);
        assert_eq!(elbow_select(&table(&[100.0, 90.0, 30.0, 29.0])).unwrap(), 3);
        assert_eq!(elbow_select(&table(&[100.0, 80.0, 60.0, 40.0])).unwrap(), 2);
        assert!(elbow_select(&table(&[100.0, 40.0])).is_err());
    }

    #[test]
    fn equal_fit_prefers_fewer_parameters() {
        let mut t = table(&[50.0, 50.0, 50.0]);
        assert_eq!(t.best_aic(), Some(1));
        assert_eq!(t.best_bic(), Some(1));
        t.rows[2].loglik = 10.0;
        t.rows[2].aic = aic(10.0, 30);
        assert_eq!(t.best_aic(), Some(3));
    }

    #[test]
    fn criteria_reject_foreign_chains() {
        let (data, truth) = small_truth();
        let chain = chain_of(vec![truth.state.clone()]);
        assert!(matches!(
            information_criteria(&data, &truth.basis, &[chain]),
            Err(FunmixError::DataMismatch(_))
        ));
    }

    #[test]
    fn criteria_at_truth() {
        let (data, truth) = small_truth();
        let mut chain = chain_of(vec![truth.state.clone(); 2]);
        chain.data_fingerprint = data.fingerprint();
        let t = information_criteria(&data, &truth.basis, &[chain]).unwrap();
        let design = Design::new(&truth.basis, &data).unwrap();
        let ll = loglik_marginal(&truth.state, &design, &data).unwrap();
        assert!((t.rows[0].loglik - ll).abs() < 1e-9);
        assert!((t.rows[0].mean_deviance + 2.0 * ll).abs() < 1e-9);
        assert_eq!(t.n_obs, 4 * 2 * 12);
    }
}
