//! Posterior simulation.
//!
//! One sweep updates, in order: the coefficient blocks `ν` and `φ` (exact
//! Gaussian conditionals), the pseudo-scores `χ` (exact Gaussian), the
//! variances `σ²`, `γ`, `δ` (exact Gamma/Inverse-Gamma), the MGPS shapes
//! `a₁`, `a₂` (log random-walk Metropolis) and the memberships `Z`, `π`, `η`
//! (Dirichlet-centred and log random-walk Metropolis).

mod init;
mod updates;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{rw1_penalty_or_zero, BasisSystem, PenaltyMatrix};
use crate::dist;
use crate::error::{FunmixError, Result};
use crate::model::{loglik_conditional, normal_ln_pdf, Design, FunctionalDataset, ModelState};
use crate::priors::{mgps_log_prior, repulsive_log_prior, rw1_log_prior, z_layer_log_prior, PriorConfig};

pub use init::{initialize, kmeans};
pub use updates::{
    update_coefficients, update_eta, update_hyper_a, update_memberships, update_nu, update_phi, update_pi,
    draw_scores, shift_scores, update_delta, update_gamma, update_scores, update_sigma2, update_variances, update_z,
};

/// Simplex coordinates at or below this value are rejected outright.
pub const SIMPLEX_FLOOR: f64 = 1e-6;

/// Added to every Dirichlet proposal concentration.
pub const PROPOSAL_CONCENTRATION_FLOOR: f64 = 1.0;

/// Which likelihood the `Z` update targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ZLikelihood {
    /// Conditional on the current pseudo-scores.
    #[default]
    Conditional,
    /// Pseudo-scores integrated out; `χ_ij` is redrawn after every `Z_ij` move.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Dirichlet proposal concentration for `Z_ij` (larger = smaller moves).
    pub step_z: f64,
    /// Dirichlet proposal concentration for `π_i`.
    pub step_pi: f64,
    /// Log-scale random-walk sd for `η`.
    pub step_eta: f64,
    /// Log-scale random-walk sd for `a₁`, `a₂`.
    pub step_a: f64,
    pub adapt_window: usize,
    pub target_accept: f64,
    pub z_likelihood: ZLikelihood,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 5000,
            n_burnin: 2000,
            thin: 1,
            seed: 1,
            step_z: 200.0,
            step_pi: 200.0,
            step_eta: 0.3,
            step_a: 0.5,
            adapt_window: 50,
            target_accept: 0.35,
            z_likelihood: ZLikelihood::Conditional,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.n_burnin {
            return Err(FunmixError::InvalidConfig(format!(
                "n_iter ({}) must exceed n_burnin ({})",
                self.n_iter, self.n_burnin
            )));
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return Err(FunmixError::InvalidConfig("thin and adapt_window must be >= 1".into()));
        }
        for (name, v) in [
            ("step_z", self.step_z),
            ("step_pi", self.step_pi),
            ("step_eta", self.step_eta),
            ("step_a", self.step_a),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FunmixError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(FunmixError::InvalidConfig(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }

    /// Number of draws a chain with this configuration stores.
    pub fn n_draws(&self) -> usize {
        (self.n_iter - self.n_burnin) / self.thin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub z: f64,
    pub pi: f64,
    pub eta: f64,
    pub a: f64,
}

impl From<&SamplerConfig> for ProposalScales {
    fn from(c: &SamplerConfig) -> Self {
        ProposalScales {
            z: c.step_z,
            pi: c.step_pi,
            eta: c.step_eta,
            a: c.step_a,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub accepted: u64,
    pub proposed: u64,
}

impl Tally {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
    }

    /// Acceptance fraction; zero when nothing was proposed.
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Metropolis acceptance counts per block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub z: Tally,
    pub pi: Tally,
    pub eta: Tally,
    pub a: Tally,
}

impl Acceptance {
    pub fn rates(&self) -> AcceptRates {
        AcceptRates {
            z: self.z.rate(),
            pi: self.pi.rate(),
            eta: self.eta.rate(),
            a: self.a.rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptRates {
    pub z: f64,
    pub pi: f64,
    pub eta: f64,
    pub a: f64,
}

/// Read-only inputs shared by every update.
#[derive(Debug, Clone)]
pub struct Context<'a> {
    pub data: &'a FunctionalDataset,
    pub design: &'a Design,
    pub prior: &'a PriorConfig,
    pub penalty: PenaltyMatrix,
    pub z_likelihood: ZLikelihood,
}

impl<'a> Context<'a> {
    pub fn new(
        data: &'a FunctionalDataset,
        design: &'a Design,
        prior: &'a PriorConfig,
        z_likelihood: ZLikelihood,
    ) -> Self {
        Context {
            data,
            design,
            prior,
            penalty: rw1_penalty_or_zero(design.n_basis()),
            z_likelihood,
        }
    }
}

/// Ordered posterior draws plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<ModelState>,
    /// Zero-based sweep index of each stored draw.
    pub iterations: Vec<usize>,
    pub accept_rates: AcceptRates,
    pub acceptance: Acceptance,
    pub log_posterior_trace: Vec<f64>,
    pub seed: u64,
    pub config: SamplerConfig,
    pub final_scales: ProposalScales,
    pub data_fingerprint: u64,
}

impl ChainOutput {
    pub fn n_features(&self) -> usize {
        self.draws.first().map_or(0, |d| d.dims().n_features)
    }
}

/// Unnormalized log joint density of data and parameters.
pub fn log_posterior(ctx: &Context<'_>, state: &ModelState) -> Result<f64> {
    let prior = ctx.prior;
    let mut total = loglik_conditional(state, ctx.design, ctx.data)?;
    for nu in &state.features.nu {
        total += rw1_log_prior(nu, state.lambda_nu, &ctx.penalty) - 0.5 * prior.nu_ridge * nu.norm_squared();
    }
    for row in &state.features.phi {
        for phi in row {
            total += rw1_log_prior(phi, state.lambda_phi, &ctx.penalty);
        }
    }
    total += mgps_log_prior(&state.features.phi, &state.shrinkage, prior)?;
    for chi in &state.scores.chi {
        total += chi.iter().map(|&x| normal_ln_pdf(x, 0.0, 1.0)).sum::<f64>();
    }
    total += state
        .noise
        .sigma2
        .iter()
        .map(|&s| dist::ln_inv_gamma_pdf(s, prior.alpha0, prior.beta0))
        .sum::<f64>();
    total += repulsive_log_prior(&state.allocations.pi, &prior.alpha_dir, prior.tau_rep);
    total += z_layer_log_prior(&state.allocations.z, &state.allocations.pi, state.allocations.eta);
    total += dist::ln_gamma_pdf(state.allocations.eta, prior.eta_shape, prior.eta_rate);
    Ok(total)
}

fn ensure_finite(values: impl IntoIterator<Item = f64>, iteration: usize, block: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(FunmixError::NonFinite {
            iteration,
            block: block.to_string(),
        })
    }
}

fn flat(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    m.iter().copied()
}

/// One full sweep in the fixed block order. Checks each block for
/// non-finite values and names the offending block on failure.
pub fn sweep<R: rand::Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut ModelState,
    scales: &ProposalScales,
    acc: &mut Acceptance,
    rng: &mut R,
    iteration: usize,
) -> Result<()> {
    update_coefficients(ctx, state, rng)?;
    ensure_finite(
        state
            .features
            .nu
            .iter()
            .flat_map(|v| v.iter().copied())
            .chain(state.features.phi.iter().flatten().flat_map(|v| v.iter().copied())),
        iteration,
        "coefficients",
    )?;
    update_scores(ctx, state, rng)?;
    ensure_finite(state.scores.chi.iter().flat_map(flat), iteration, "scores")?;
    update_variances(ctx, state, rng)?;
    ensure_finite(
        state
            .noise
            .sigma2
            .iter()
            .copied()
            .chain(state.shrinkage.gamma.iter().flat_map(flat))
            .chain(flat(&state.shrinkage.delta)),
        iteration,
        "variances",
    )?;
    update_hyper_a(ctx, state, scales.a, &mut acc.a, rng);
    ensure_finite(
        state.shrinkage.a1.iter().chain(state.shrinkage.a2.iter()).copied(),
        iteration,
        "hyper_a",
    )?;
    update_memberships(ctx, state, scales, acc, rng)?;
    ensure_finite(
        state
            .allocations
            .z
            .iter()
            .flat_map(flat)
            .chain(flat(&state.allocations.pi))
            .chain(std::iter::once(state.allocations.eta)),
        iteration,
        "memberships",
    )?;
    Ok(())
}

fn adapt(scales: &mut ProposalScales, window: &Acceptance, target: f64) {
    let factor = |t: &Tally| (2.0 * (t.rate() - target)).exp();
    if window.z.proposed > 0 {
        scales.z = (scales.z / factor(&window.z)).clamp(1.0, 1e7);
    }
    if window.pi.proposed > 0 {
        scales.pi = (scales.pi / factor(&window.pi)).clamp(1.0, 1e7);
    }
    if window.eta.proposed > 0 {
        scales.eta = (scales.eta * factor(&window.eta)).clamp(1e-4, 10.0);
    }
    if window.a.proposed > 0 {
        scales.a = (scales.a * factor(&window.a)).clamp(1e-4, 10.0);
    }

}

/// Fit a model with `n_features` features and `n_eigen` pseudo-eigenfunctions,
/// starting from the deterministic data-driven initialization.
pub fn run_chain(
    data: &FunctionalDataset,
    basis: &BasisSystem,
    prior: &PriorConfig,
    config: &SamplerConfig,
    n_features: usize,
    n_eigen: usize,
) -> Result<ChainOutput> {
    prior.validate(n_features)?;
    let design = Design::new(basis, data)?;
    let ctx = Context::new(data, &design, prior, config.z_likelihood);
    let init = initialize(&ctx, n_features, n_eigen)?;
    run_chain_with(&ctx, init, config)
}

/// Run from an explicit starting state.
pub fn run_chain_with(ctx: &Context<'_>, init: ModelState, config: &SamplerConfig) -> Result<ChainOutput> {
    config.validate()?;
    ctx.prior.validate(init.dims().n_features)?;
    init.check_against(ctx.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init;
    let mut scales = ProposalScales::from(config);
    let mut window = Acceptance::default();
    let mut kept = Acceptance::default();
    let n_draws = config.n_draws();
    let mut draws = Vec::with_capacity(n_draws);
    let mut iterations = Vec::with_capacity(n_draws);
    let mut trace = Vec::with_capacity(n_draws);

    for it in 0..config.n_iter {
        let burnin = it < config.n_burnin;
        let mut acc = Acceptance::default();
        sweep(ctx, &mut state, &scales, &mut acc, &mut rng, it)?;
        if burnin {
            merge(&mut window, &acc);
            if (it + 1) % config.adapt_window == 0 {
                adapt(&mut scales, &window, config.target_accept);
                window = Acceptance::default();
            }
            continue;
        }
        merge(&mut kept, &acc);
        if (it + 1 - config.n_burnin) % config.thin == 0 {
            let lp = log_posterior(ctx, &state)?;
            if !lp.is_finite() {
                return Err(FunmixError::NonFinite {
                    iteration: it,
                    block: "log_posterior".into(),
                });
            }
            trace.push(lp);
            draws.push(state.clone());
            iterations.push(it);
        }
    }

    Ok(ChainOutput {
        draws,
        iterations,
        accept_rates: kept.rates(),
        acceptance: kept,
        log_posterior_trace: trace,
        seed: config.seed,
        config: config.clone(),
        final_scales: scales,
        data_fingerprint: ctx.data.fingerprint(),
    })
}

fn merge(into: &mut Acceptance, from: &Acceptance) {
    for (a, b) in [
        (&mut into.z, &from.z),
        (&mut into.pi, &from.pi),
        (&mut into.eta, &from.eta),
        (&mut into.a, &from.a),
    ] {
        a.accepted += b.accepted;
        a.proposed += b.proposed;
    }
}
