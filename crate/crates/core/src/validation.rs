//! Self-checks of the likelihood and the sampler: a Monte Carlo check of the
//! marginal likelihood, quadrature checks of each conjugate update, and a
//! joint-distribution (Geweke) test of the whole sweep.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{build_basis, linspace, BasisSystem};
use crate::dist;
use crate::error::{FunmixError, Result};
use crate::model::{
    conditional_mean, loglik_marginal, normal_ln_pdf, Design, FunctionalDataset, ModelDims, ModelState, SubjectData,
};
use crate::priors::{sample_phi_given_shrinkage, sample_repulsive_rejection, sample_shrinkage, PriorConfig};
use crate::sampler::{
    draw_scores, log_posterior, sweep, update_delta, update_gamma, update_nu, update_phi, update_sigma2, Acceptance,
    Context, ProposalScales, ZLikelihood,
};
use crate::simulate::draw_observations;

/// Signature of a marginal log-likelihood under test.
pub type LoglikFn = fn(&ModelState, &Design, &FunctionalDataset) -> Result<f64>;

/// One instance of the marginalization check.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCase {
    pub marginal: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
    pub z: f64,
}

impl MarginalCase {
    pub fn passed(&self) -> bool {
        self.z.abs() < 3.0
    }
}

fn one_subject(grid: Vec<f64>, y: DMatrix<f64>) -> Result<FunctionalDataset> {
    let channels = (0..y.ncols()).map(|j| format!("C{j}")).collect();
    FunctionalDataset::new(
        channels,
        vec![SubjectData {
            id: "S".into(),
            group: None,
            grid,
            y,
        }],
    )
}

/// Compare `marginal` with `log E_χ[p(y | χ)]` estimated from `n_draws`
/// standard normal score draws, on random single-curve instances with
/// `K = 2`, `M = 1`, `P = 4` and three grid points.
pub fn marginalization_check(n_instances: usize, n_draws: usize, seed: u64, marginal: LoglikFn) -> Result<Vec<MarginalCase>> {
    if n_draws < 2 {
        return Err(FunmixError::InvalidConfig("at least two Monte Carlo draws are needed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = build_basis(3, 0, [0.0, 1.0])?;
    let dims = ModelDims {
        n_subjects: 1,
        n_channels: 1,
        n_features: 2,
        n_eigen: 1,
        n_basis: 4,
    };
    let mut cases = Vec::with_capacity(n_instances);
    for _ in 0..n_instances {
        let mut grid: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        grid.sort_by(f64::total_cmp);
        let mut state = ModelState::zeros(&dims);
        for k in 0..2 {
            state.features.nu[k] = DVector::from_fn(4, |_, _| dist::std_normal(&mut rng));
            state.features.phi[k][0] = DVector::from_fn(4, |_, _| 0.7 * dist::std_normal(&mut rng));
        }
        let w: f64 = rng.random();
        state.allocations.z[0] = DMatrix::from_row_slice(1, 2, &[w, 1.0 - w]);
        state.allocations.pi = state.allocations.z[0].clone();
        state.noise.sigma2[0] = 0.2 + 0.8 * rng.random::<f64>();
        let mut data = one_subject(grid.clone(), DMatrix::zeros(3, 1))?;
        let design = Design::new(&basis, &data)?;
        let y = draw_observations(&mut rng, &mut state, &design, true).remove(0);
        data.set_observations(0, y.clone())?;

        // conditional mean is affine in the single score
        state.scores.chi[0][(0, 0)] = 0.0;
        let base = conditional_mean(&state, &design, 0, 0)?;
        state.scores.chi[0][(0, 0)] = 1.0;
        let slope = conditional_mean(&state, &design, 0, 0)? - &base;
        let sigma2 = state.noise.sigma2[0];
        let resid = y.column(0) - &base;
        let logs: Vec<f64> = (0..n_draws)
            .map(|_| {
                let x = dist::std_normal(&mut rng);
                (0..3).map(|t| normal_ln_pdf(resid[t] - x * slope[t], 0.0, sigma2)).sum()
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
        let n = n_draws as f64;
        let mean = weights.iter().sum::<f64>() / n;
        let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let monte_carlo = top + mean.ln();
        let std_error = (var / n).sqrt() / mean;
        let value = marginal(&state, &design, &data)?;
        cases.push(MarginalCase {
            marginal: value,
            monte_carlo,
            std_error,
            z: (value - monte_carlo) / std_error,
        });
    }
    Ok(cases)
}

/// Blocks with an exact Gibbs update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConjugateBlock {
    Nu,
    Phi,
    Chi,
    Sigma2,
    Gamma,
    Delta,
}

impl ConjugateBlock {
    pub const ALL: [ConjugateBlock; 6] = [
        ConjugateBlock::Nu,
        ConjugateBlock::Phi,
        ConjugateBlock::Chi,
        ConjugateBlock::Sigma2,
        ConjugateBlock::Gamma,
        ConjugateBlock::Delta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConjugateBlock::Nu => "nu",
            ConjugateBlock::Phi => "phi",
            ConjugateBlock::Chi => "chi",
            ConjugateBlock::Sigma2 => "sigma2",
            ConjugateBlock::Gamma => "gamma",
            ConjugateBlock::Delta => "delta",
        }
    }

    fn positive(self) -> bool {
        matches!(self, ConjugateBlock::Sigma2 | ConjugateBlock::Gamma | ConjugateBlock::Delta)
    }

    fn get(self, s: &ModelState) -> f64 {
        match self {
            ConjugateBlock::Nu => s.features.nu[0][0],
            ConjugateBlock::Phi => s.features.phi[0][0][0],
            ConjugateBlock::Chi => s.scores.chi[0][(0, 0)],
            ConjugateBlock::Sigma2 => s.noise.sigma2[0],
            ConjugateBlock::Gamma => s.shrinkage.gamma[0][(0, 0)],
            ConjugateBlock::Delta => s.shrinkage.delta[(0, 0)],
        }
    }

    fn set(self, s: &mut ModelState, v: f64) {
        match self {
            ConjugateBlock::Nu => s.features.nu[0][0] = v,
            ConjugateBlock::Phi => s.features.phi[0][0][0] = v,
            ConjugateBlock::Chi => s.scores.chi[0][(0, 0)] = v,
            ConjugateBlock::Sigma2 => s.noise.sigma2[0] = v,
            ConjugateBlock::Gamma => s.shrinkage.gamma[0][(0, 0)] = v,
            ConjugateBlock::Delta => s.shrinkage.delta[(0, 0)] = v,
        }
    }

    fn draw<R: Rng + ?Sized>(self, ctx: &Context<'_>, s: &mut ModelState, rng: &mut R) -> Result<()> {
        match self {
            ConjugateBlock::Nu => update_nu(ctx, s, rng),
            ConjugateBlock::Phi => update_phi(ctx, s, rng),
            ConjugateBlock::Chi => draw_scores(ctx, s, rng),
            ConjugateBlock::Sigma2 => {
                update_sigma2(ctx, s, rng);
                Ok(())
            }
            ConjugateBlock::Gamma => {
                update_gamma(ctx, s, rng);
                Ok(())
            }
            ConjugateBlock::Delta => {
                update_delta(s, rng);
                Ok(())
            }
        }
    }
}

/// Sample mean of repeated conditional draws against the quadrature mean of
/// the joint density along the same coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateCase {
    pub block: ConjugateBlock,
    pub set: usize,
    pub sample_mean: f64,
    pub quadrature_mean: f64,
    pub std_error: f64,
    pub z: f64,
}

impl ConjugateCase {
    pub fn passed(&self) -> bool {
        self.z.abs() < 3.0
    }
}

/// Scalar toy problem (`K = M = P = N = J = 1`, five grid points) with a
/// random conditioning set.
fn conjugate_toy<R: Rng + ?Sized>(rng: &mut R) -> Result<(BasisSystem, FunctionalDataset, ModelState)> {
    let basis = build_basis(0, 0, [0.0, 1.0])?;
    let dims = ModelDims {
        n_subjects: 1,
        n_channels: 1,
        n_features: 1,
        n_eigen: 1,
        n_basis: 1,
    };
    let mut state = ModelState::zeros(&dims);
    state.features.nu[0][0] = dist::std_normal(rng);
    state.features.phi[0][0][0] = 0.3 + rng.random::<f64>();
    state.scores.chi[0][(0, 0)] = dist::std_normal(rng);
    state.noise.sigma2[0] = 0.3 + rng.random::<f64>();
    state.shrinkage.gamma[0][(0, 0)] = 0.5 + rng.random::<f64>();
    state.shrinkage.delta[(0, 0)] = 0.5 + rng.random::<f64>();
    state.shrinkage.a1[0] = 1.0 + rng.random::<f64>();
    state.shrinkage.a2[0] = 2.0 + rng.random::<f64>();
    state.allocations.z[0][(0, 0)] = 1.0;
    state.allocations.pi[(0, 0)] = 1.0;
    state.allocations.eta = 2.0;
    let grid = linspace(0.0, 1.0, 5);
    let mut data = one_subject(grid, DMatrix::zeros(5, 1))?;
    let design = Design::new(&basis, &data)?;
    let y = draw_observations(rng, &mut state, &design, false).remove(0);
    data.set_observations(0, y)?;
    Ok((basis, data, state))
}

/// Trapezoid mean and variance of the density `exp(log_density)` on `[lo, hi]`.
fn quadrature_moments(lo: f64, hi: f64, n: usize, log_density: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let xs = linspace(lo, hi, n);
    let logs = xs.iter().map(|&x| log_density(x)).collect::<Result<Vec<_>>>()?;
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for t in 0..n {
        let edge = if t == 0 || t == n - 1 { 0.5 } else { 1.0 };
        m0 += edge * ws[t];
        m1 += edge * ws[t] * xs[t];
        m2 += edge * ws[t] * xs[t] * xs[t];
    }
    let mean = m1 / m0;
    Ok((mean, m2 / m0 - mean * mean))
}

/// For each block and each of `n_sets` random conditioning sets, run the
/// block's update `n_draws` times from the same state and compare the draw
/// mean with quadrature of the joint log-density along that coordinate.
pub fn conjugate_checks(n_sets: usize, n_draws: usize, seed: u64) -> Result<Vec<ConjugateCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prior = PriorConfig::default_for(1);
    prior.nu_ridge = 0.5;
    let mut cases = Vec::new();
    for block in ConjugateBlock::ALL {
        for set in 0..n_sets {
            let (basis, data, state) = conjugate_toy(&mut rng)?;
            let design = Design::new(&basis, &data)?;
            let ctx = Context::new(&data, &design, &prior, ZLikelihood::Conditional);
            let mut work = state.clone();
            let mut draws = Vec::with_capacity(n_draws);
            for _ in 0..n_draws {
                work.clone_from(&state);
                block.draw(&ctx, &mut work, &mut rng)?;
                draws.push(block.get(&work));
            }
            let lo = draws.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.5 * (hi - lo);
            let lower = if block.positive() { (lo - pad).max(lo * 1e-3) } else { lo - pad };
            let (quadrature_mean, var) = quadrature_moments(lower, hi + pad, 20_001, |x| {
                let mut s = state.clone();
                block.set(&mut s, x);
                log_posterior(&ctx, &s)
            })?;
            let sample_mean = draws.iter().sum::<f64>() / n_draws as f64;
            let std_error = (var / n_draws as f64).sqrt();
            cases.push(ConjugateCase {
                block,
                set,
                sample_mean,
                quadrature_mean,
                std_error,
                z: (sample_mean - quadrature_mean) / std_error,
            });
        }
    }
    Ok(cases)
}

/// Settings of the joint-distribution test.
#[derive(Debug, Clone, PartialEq)]
pub struct GewekeConfig {
    pub rounds: usize,
    pub seed: u64,
    /// Batches used for the batch-means variance of the chain averages.
    pub batches: usize,
    pub n_subjects: usize,
    pub n_channels: usize,
    pub n_features: usize,
    pub n_eigen: usize,
    pub n_basis: usize,
    pub grid_len: usize,
    /// Fixed proposal scales of the Metropolis blocks.
    pub scales: ProposalScales,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            rounds: 5000,
            seed: 11,
            batches: 50,
            n_subjects: 3,
            n_channels: 2,
            n_features: 2,
            n_eigen: 1,
            n_basis: 4,
            grid_len: 6,
            scales: ProposalScales {
                z: 20.0,
                pi: 20.0,
                eta: 0.3,
                a: 0.5,
            },
        }
    }
}

impl GewekeConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_subjects: self.n_subjects,
            n_channels: self.n_channels,
            n_features: self.n_features,
            n_eigen: self.n_eigen,
            n_basis: self.n_basis,
        }
    }
}

/// Proper, informative prior under which every parameter can be drawn
/// exactly: no random-walk term on `φ` and a ridge on `ν`.
pub fn geweke_prior(k: usize) -> PriorConfig {
    PriorConfig {
        nu_gamma: 10.0,
        alpha1: 20.0,
        beta1: 10.0,
        alpha2: 30.0,
        beta2: 10.0,
        alpha0: 6.0,
        beta0: 1.0,
        alpha_dir: vec![3.0; k],
        tau_rep: 0.05,
        lambda_nu: 1.0,
        lambda_phi: 0.0,
        nu_ridge: 1.0,
        eta_shape: 20.0,
        eta_rate: 1.0,
    }
}

/// Exact draw of every parameter from the prior.
pub fn draw_prior_state<R: Rng + ?Sized>(rng: &mut R, prior: &PriorConfig, ctx: &Context<'_>, dims: &ModelDims) -> Result<ModelState> {
    if prior.lambda_phi != 0.0 || !(prior.nu_ridge > 0.0) {
        return Err(FunmixError::InvalidConfig(
            "exact prior draws need lambda_phi = 0 and nu_ridge > 0".into(),
        ));
    }
    let (n, j, k, m, p) = (dims.n_subjects, dims.n_channels, dims.n_features, dims.n_eigen, dims.n_basis);
    let mut state = ModelState::zeros(dims);
    state.lambda_nu = prior.lambda_nu;
    state.lambda_phi = prior.lambda_phi;
    let mut precision = ctx.penalty.values() * prior.lambda_nu;
    for c in 0..p {
        precision[(c, c)] += prior.nu_ridge;
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| FunmixError::NotPositiveDefinite("ν prior precision".into()))?;
    for nu in state.features.nu.iter_mut() {
        let xi = DVector::from_fn(p, |_, _| dist::std_normal(rng));
        *nu = chol
            .l()
            .transpose()
            .solve_upper_triangular(&xi)
            .expect("Cholesky factor has a non-zero diagonal");
    }
    state.shrinkage = sample_shrinkage(rng, prior, k, p, m);
    state.features.phi = sample_phi_given_shrinkage(rng, &state.shrinkage);
    for chi in state.scores.chi.iter_mut() {
        *chi = DMatrix::from_fn(j, m, |_, _| dist::std_normal(rng));
    }
    for s in state.noise.sigma2.iter_mut() {
        *s = dist::inv_gamma(rng, prior.alpha0, prior.beta0);
    }
    state.allocations.eta = dist::gamma(rng, prior.eta_shape, prior.eta_rate);
    state.allocations.pi = sample_repulsive_rejection(rng, n, &prior.alpha_dir, prior.tau_rep, 100_000)
        .ok_or_else(|| FunmixError::InvalidConfig("repulsive prior rejection sampler did not accept".into()))?;
    for i in 0..n {
        let conc: Vec<f64> = state.allocations.pi.row(i).iter().map(|&v| v * state.allocations.eta).collect();
        for jj in 0..j {
            let row = dist::dirichlet(rng, &conc);
            for c in 0..k {
                state.allocations.z[i][(jj, c)] = row[c];
            }
        }
    }
    Ok(state)
}

/// Scalar summaries compared by the joint-distribution test. All are
/// invariant to relabelling the features and have finite prior variance.
pub fn geweke_summaries(s: &ModelState) -> Vec<(String, f64)> {
    let d = s.dims();
    let k = d.n_features as f64;
    let centre = 1.0 / k;
    let mut out = vec![
        ("sum_k nu[k,1]".to_string(), s.features.nu.iter().map(|v| v[0]).sum::<f64>()),
        (
            "mean nu^2".into(),
            s.features.nu.iter().map(|v| v.norm_squared()).sum::<f64>() / (k * d.n_basis as f64),
        ),
        ("sigma2[1]".into(), s.noise.sigma2[0]),
        ("eta".into(), s.allocations.eta),
        (
            "(pi[1,1] - 1/K)^2".into(),
            (s.allocations.pi[(0, 0)] - centre).powi(2),
        ),
        (
            "(Z[1,1,1] - 1/K)^2".into(),
            (s.allocations.z[0][(0, 0)] - centre).powi(2),
        ),
        (
            "mean Z^2".into(),
            s.allocations.z.iter().map(|z| z.norm_squared()).sum::<f64>() / (d.n_subjects * d.n_channels) as f64,
        ),
        ("mean a1".into(), s.shrinkage.a1.mean()),
        ("mean a2".into(), s.shrinkage.a2.mean()),
    ];
    if d.n_eigen > 0 {
        let n_phi = (d.n_features * d.n_eigen * d.n_basis) as f64;
        let n_chi = (d.n_subjects * d.n_channels * d.n_eigen) as f64;
        out.extend([
            (
                "mean log phi^2".to_string(),
                s.features.phi.iter().flatten().flat_map(|v| v.iter()).map(|x| (x * x).ln()).sum::<f64>() / n_phi,
            ),
            ("chi[1,1,1]".into(), s.scores.chi[0][(0, 0)]),
            (
                "mean chi^2".into(),
                s.scores.chi.iter().map(|c| c.norm_squared()).sum::<f64>() / n_chi,
            ),
            (
                "mean log gamma".into(),
                s.shrinkage.gamma.iter().flat_map(|g| g.iter()).map(|x| x.ln()).sum::<f64>() / n_phi,
            ),
            ("mean delta[1,k]".into(), s.shrinkage.delta.row(0).mean()),
        ]);
    }
    out
}

/// Prior mean against successive-conditional mean of one summary.
#[derive(Debug, Clone, PartialEq)]
pub struct GewekeStat {
    pub name: String,
    pub prior_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

impl GewekeStat {
    pub fn passed(&self, limit: f64) -> bool {
        self.z.abs() < limit
    }
}

fn batch_means_variance(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / ((batches - 1) as f64 * batches as f64)
}

/// Joint-distribution test: independent prior draws against a chain that
/// alternates one full sweep with a fresh data draw given the parameters.
pub fn geweke_test(cfg: &GewekeConfig) -> Result<Vec<GewekeStat>> {
    let dims = cfg.dims();
    dims.validate()?;
    if cfg.batches < 2 || cfg.rounds < 2 * cfg.batches {
        return Err(FunmixError::InvalidConfig("Geweke test needs rounds ≥ 2·batches ≥ 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prior = geweke_prior(dims.n_features);
    let basis = build_basis(3, dims.n_basis.saturating_sub(4), [0.0, 1.0])?;
    if basis.dim() != dims.n_basis {
        return Err(FunmixError::InvalidConfig("Geweke test needs at least four basis functions".into()));
    }
    let grid = linspace(0.0, 1.0, cfg.grid_len);
    let subjects = (0..dims.n_subjects)
        .map(|i| SubjectData {
            id: format!("S{i}"),
            group: None,
            grid: grid.clone(),
            y: DMatrix::zeros(cfg.grid_len, dims.n_channels),
        })
        .collect();
    let channels = (0..dims.n_channels).map(|j| format!("C{j}")).collect();
    let mut data = FunctionalDataset::new(channels, subjects)?;
    let design = Design::new(&basis, &data)?;

    let mut forward: Vec<Vec<f64>> = Vec::with_capacity(cfg.rounds);
    {
        let ctx = Context::new(&data, &design, &prior, ZLikelihood::Conditional);
        for _ in 0..cfg.rounds {
            let s = draw_prior_state(&mut rng, &prior, &ctx, &dims)?;
            forward.push(geweke_summaries(&s).into_iter().map(|(_, v)| v).collect());
        }
    }

    let scales = cfg.scales;
    let mut acc = Acceptance::default();
    let mut state = {
        let ctx = Context::new(&data, &design, &prior, ZLikelihood::Conditional);
        draw_prior_state(&mut rng, &prior, &ctx, &dims)?
    };
    let names: Vec<String> = geweke_summaries(&state).into_iter().map(|(n, _)| n).collect();
    let mut chain: Vec<Vec<f64>> = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        for (i, y) in draw_observations(&mut rng, &mut state, &design, false).into_iter().enumerate() {
            data.set_observations(i, y)?;
        }
        let ctx = Context::new(&data, &design, &prior, ZLikelihood::Conditional);
        sweep(&ctx, &mut state, &scales, &mut acc, &mut rng, round)?;
        chain.push(geweke_summaries(&state).into_iter().map(|(_, v)| v).collect());
    }

    let r = cfg.rounds as f64;
    let stats = names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let f: Vec<f64> = forward.iter().map(|v| v[c]).collect();
            let g: Vec<f64> = chain.iter().map(|v| v[c]).collect();
            let prior_mean = f.iter().sum::<f64>() / r;
            let prior_var = f.iter().map(|x| (x - prior_mean).powi(2)).sum::<f64>() / (r - 1.0);
            let chain_mean = g.iter().sum::<f64>() / r;
            let se2 = prior_var / r + batch_means_variance(&g, cfg.batches);
            GewekeStat {
                name,
                prior_mean,
                chain_mean,
                z: (prior_mean - chain_mean) / se2.sqrt(),
            }
        })
        .collect();
    Ok(stats)
}

/// Default marginal log-likelihood, for use with [`marginalization_check`].
pub fn default_marginal(state: &ModelState, design: &Design, data: &FunctionalDataset) -> Result<f64> {
    loglik_marginal(state, design, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::loglik_conditional;

    fn shifted(state: &ModelState, design: &Design, data: &FunctionalDataset) -> Result<f64> {
        Ok(loglik_marginal(state, design, data)? + 0.3)
    }

    fn scores_at_zero(state: &ModelState, design: &Design, data: &FunctionalDataset) -> Result<f64> {
        let mut s = state.clone();
        s.scores.chi.iter_mut().for_each(|c| c.fill(0.0));
        loglik_conditional(&s, design, data)
    }

    #[test]
    fn marginal_agrees_with_monte_carlo() {
        let cases = marginalization_check(5, 200_000, 4, default_marginal).unwrap();
        assert!(cases.iter().all(MarginalCase::passed), "{cases:?}");
    }

    #[test]
    fn marginalization_check_catches_errors() {
        let cases = marginalization_check(5, 200_000, 4, shifted).unwrap();
        assert!(cases.iter().all(|c| !c.passed()));
        let cases = marginalization_check(5, 200_000, 4, scores_at_zero).unwrap();
        assert!(cases.iter().any(|c| !c.passed()));
        assert!(marginalization_check(1, 1, 4, default_marginal).is_err());
    }

    #[test]
    fn conjugate_blocks_match_quadrature() {
        let cases = conjugate_checks(2, 4000, 8).unwrap();
        assert_eq!(cases.len(), 2 * ConjugateBlock::ALL.len());
        assert!(cases.iter().all(ConjugateCase::passed), "{cases:?}");
    }

    #[test]
    fn short_geweke_run() {
        let cfg = GewekeConfig { rounds: 1500, ..GewekeConfig::default() };
        let stats = geweke_test(&cfg).unwrap();
        assert!(stats.len() >= 10);
        assert!(stats.iter().all(|s| s.passed(5.0)), "{stats:?}");
        let bad = GewekeConfig { rounds: 10, ..GewekeConfig::default() };
        assert!(geweke_test(&bad).is_err());
    }

    #[test]
    fn prior_draws_need_a_proper_prior() {
        let cfg = GewekeConfig::default();
        let dims = cfg.dims();
        let basis = build_basis(3, 0, [0.0, 1.0]).unwrap();
        let data = one_subject(vec![0.0, 0.5, 1.0], DMatrix::zeros(3, 2)).unwrap();
        let design = Design::new(&basis, &data).unwrap();
        let prior = PriorConfig::default_for(2);
        let ctx = Context::new(&data, &design, &prior, ZLikelihood::Conditional);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_prior_state(&mut rng, &prior, &ctx, &dims).is_err());
    }

    #[test]
    fn batch_means_of_constant_is_zero() {
        assert_eq!(batch_means_variance(&[2.0; 100], 10), 0.0);
        let alternating: Vec<f64> = (0..100).map(|i| (i / 10) as f64).collect();
        assert!(batch_means_variance(&alternating, 10) > 0.0);
    }
}
