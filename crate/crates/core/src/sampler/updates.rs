use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{Context, ProposalScales, Tally, ZLikelihood, PROPOSAL_CONCENTRATION_FLOOR, SIMPLEX_FLOOR};
use crate::dist;
use crate::error::{FunmixError, Result};
use crate::model::{loglik_conditional_pair_unchecked, loglik_marginal_pair_unchecked, ModelState};
use crate::priors::repulsion_row;

/// Draw `x ~ N(Q⁻¹ b, Q⁻¹)`.
pub(crate) fn draw_gaussian_canonical<R: Rng + ?Sized>(
    rng: &mut R,
    precision: DMatrix<f64>,
    b: &DVector<f64>,
    what: &str,
) -> Result<DVector<f64>> {
    let n = b.len();
    let chol = precision
        .cholesky()
        .ok_or_else(|| FunmixError::NotPositiveDefinite(format!("{what} full-conditional precision")))?;
    let mean = chol.solve(b);
    let xi = DVector::from_fn(n, |_, _| dist::std_normal(rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&xi)
        .expect("Cholesky factor has a non-zero diagonal");
    Ok(mean + noise)
}

fn add_block(q: &mut DMatrix<f64>, r: usize, c: usize, scale: f64, block: &DMatrix<f64>) {
    let p = block.nrows();
    let mut view = q.view_mut((r * p, c * p), (p, p));
    view += block * scale;
}

/// All `ν_k` jointly from their Gaussian full conditional.
pub fn update_nu<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) -> Result<()> {
    let d = state.dims();
    let (k, p) = (d.n_features, d.n_basis);
    let mut q = DMatrix::zeros(k * p, k * p);
    let mut b = DVector::zeros(k * p);
    for i in 0..d.n_subjects {
        let s = ctx.design.eval(i).values();
        let mut weights = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DMatrix::<f64>::zeros(p, k);
        for j in 0..d.n_channels {
            let z = state.allocations.z[i].row(j);
            let prec = 1.0 / state.noise.sigma2[j];
            let mut random_part = DVector::zeros(p);
            let a = state.loading_coefficients(i, j);
            for m in 0..d.n_eigen {
                random_part.axpy(state.scores.chi[i][(j, m)], &a.column(m), 1.0);
            }
            let resid = ctx.data.subject(i).y.column(j) - s.tr_mul(&random_part);
            let projected = s * resid;
            for k1 in 0..k {
                for k2 in 0..k {
                    weights[(k1, k2)] += z[k1] * z[k2] * prec;
                }
                rhs.column_mut(k1).axpy(z[k1] * prec, &projected, 1.0);
            }
        }
        let gram = ctx.design.gram(i);
        for k1 in 0..k {
            for k2 in 0..k {
                add_block(&mut q, k1, k2, weights[(k1, k2)], gram);
            }
            b.rows_mut(k1 * p, p).axpy(1.0, &rhs.column(k1), 1.0);
        }
    }
    let mut prior = ctx.penalty.values() * state.lambda_nu;
    for c in 0..p {
        prior[(c, c)] += ctx.prior.nu_ridge;
    }
    for k1 in 0..k {
        add_block(&mut q, k1, k1, 1.0, &prior);
    }
    let x = draw_gaussian_canonical(rng, q, &b, "nu")?;
    for k1 in 0..k {
        state.features.nu[k1] = x.rows(k1 * p, p).into_owned();
    }
    Ok(())
}

/// All `φ_km` jointly from their Gaussian full conditional.
pub fn update_phi<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) -> Result<()> {
    let d = state.dims();
    let (k, m, p) = (d.n_features, d.n_eigen, d.n_basis);
    if m == 0 {
        return Ok(());
    }
    let km = k * m;
    let mut q = DMatrix::zeros(km * p, km * p);
    let mut b = DVector::zeros(km * p);
    let mut w = vec![0.0; km];
    for i in 0..d.n_subjects {
        let s = ctx.design.eval(i).values();
        let mut weights = DMatrix::<f64>::zeros(km, km);
        let mut rhs = DMatrix::<f64>::zeros(p, km);
        for j in 0..d.n_channels {
            let prec = 1.0 / state.noise.sigma2[j];
            for kk in 0..k {
                for mm in 0..m {
                    w[kk * m + mm] = state.allocations.z[i][(j, kk)] * state.scores.chi[i][(j, mm)];
                }
            }
            let resid = ctx.data.subject(i).y.column(j) - s.tr_mul(&state.mean_coefficients(i, j));
            let projected = s * resid;
            for r in 0..km {
                for c in 0..km {
                    weights[(r, c)] += w[r] * w[c] * prec;
                }
                rhs.column_mut(r).axpy(w[r] * prec, &projected, 1.0);
            }
        }
        let gram = ctx.design.gram(i);
        for r in 0..km {
            for c in 0..km {
                add_block(&mut q, r, c, weights[(r, c)], gram);
            }
            b.rows_mut(r * p, p).axpy(1.0, &rhs.column(r), 1.0);
        }
    }
    let tt = state.shrinkage.tilde_tau();
    for kk in 0..k {
        for mm in 0..m {
            let mut prior = ctx.penalty.values() * state.lambda_phi;
            for c in 0..p {
                prior[(c, c)] += state.shrinkage.gamma[kk][(c, mm)] * tt[(mm, kk)];
            }
            let r = kk * m + mm;
            add_block(&mut q, r, r, 1.0, &prior);
        }
    }
    let x = draw_gaussian_canonical(rng, q, &b, "phi")?;
    for kk in 0..k {
        for mm in 0..m {
            state.features.phi[kk][mm] = x.rows((kk * m + mm) * p, p).into_owned();
        }
    }
    Ok(())
}

/// `ν` block followed by `φ` block.
pub fn update_coefficients<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) -> Result<()> {
    update_nu(ctx, state, rng)?;
    update_phi(ctx, state, rng)
}

fn draw_scores_pair<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut ModelState,
    i: usize,
    j: usize,
    rng: &mut R,
) -> Result<()> {
    let m = state.dims().n_eigen;
    if m == 0 {
        return Ok(());
    }
    let s = ctx.design.eval(i).values();
    let loadings = state.loading_coefficients(i, j);
    let prec = 1.0 / state.noise.sigma2[j];
    let resid = ctx.data.subject(i).y.column(j) - s.tr_mul(&state.mean_coefficients(i, j));
    let mut q = loadings.transpose() * ctx.design.gram(i) * &loadings * prec;
    for c in 0..m {
        q[(c, c)] += 1.0;
    }
    let b = loadings.tr_mul(&(s * resid)) * prec;
    let x = draw_gaussian_canonical(rng, q, &b, "chi")?;
    for c in 0..m {
        state.scores.chi[i][(j, c)] = x[c];
    }
    Ok(())
}

/// [`draw_scores`], then [`shift_scores`].
pub fn update_scores<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) -> Result<()> {
    draw_scores(ctx, state, rng)?;
    shift_scores(ctx, state, rng)
}

/// Every `χ_ij` from its `M`-dimensional Gaussian full conditional.
pub fn draw_scores<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) -> Result<()> {
    let d = state.dims();
    for i in 0..d.n_subjects {
        for j in 0..d.n_channels {
            draw_scores_pair(ctx, state, i, j, rng)?;
        }
    }
    Ok(())
}

/// Exact draw along the joint translation `ν_k → ν_k + Φ_k c_k`,
/// `χ_ij → χ_ij − Σ_k Z_ijk c_k` with `Φ_k = [φ_k1 … φ_kM]` and `c ∈ ℝ^{K×M}`.
/// The map is a unit-Jacobian shift of `(ν, χ)`, and the target restricted to
/// it is Gaussian in `c`; a common `c_k` leaves the likelihood unchanged.
pub fn shift_scores<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) -> Result<()> {
    let d = state.dims();
    let (k, m, p) = (d.n_features, d.n_eigen, d.n_basis);
    if m == 0 {
        return Ok(());
    }
    let km = k * m;
    let loadings: Vec<DMatrix<f64>> = (0..k)
        .map(|c| {
            let mut l = DMatrix::zeros(p, m);
            for (col, phi) in state.features.phi[c].iter().enumerate() {
                l.set_column(col, phi);
            }
            l
        })
        .collect();
    let mut q = DMatrix::zeros(km, km);
    let mut b = DVector::zeros(km);
    let mut effect = DMatrix::zeros(p, km);
    let mut weights = DMatrix::zeros(m, km);
    for i in 0..d.n_subjects {
        let s = ctx.design.eval(i).values();
        let gram = ctx.design.gram(i);
        for j in 0..d.n_channels {
            let z = state.allocations.z[i].row(j);
            let mixed = state.loading_coefficients(i, j);
            for c in 0..k {
                effect
                    .columns_mut(c * m, m)
                    .copy_from(&((&loadings[c] - &mixed) * z[c]));
                weights.columns_mut(c * m, m).copy_from(&(DMatrix::identity(m, m) * z[c]));
            }
            let prec = 1.0 / state.noise.sigma2[j];
            let mean = ctx.design.eval(i).curve(&state.conditional_coefficients(i, j));
            let resid = ctx.data.subject(i).y.column(j) - mean;
            q += effect.transpose() * gram * &effect * prec + weights.transpose() * &weights;
            b += effect.transpose() * (s * resid) * prec + weights.transpose() * state.scores.chi[i].row(j).transpose();
        }
    }
    let mut omega = ctx.penalty.values() * state.lambda_nu;
    for c in 0..p {
        omega[(c, c)] += ctx.prior.nu_ridge;
    }
    for c in 0..k {
        let weighted = &omega * &loadings[c];
        let mut block = q.view_mut((c * m, c * m), (m, m));
        block += loadings[c].transpose() * &weighted;
        let mut rows = b.rows_mut(c * m, m);
        rows -= weighted.transpose() * &state.features.nu[c];
    }
    let shift = draw_gaussian_canonical(rng, q, &b, "scores")?;
    for i in 0..d.n_subjects {
        for j in 0..d.n_channels {
            for c in 0..k {
                let zc = state.allocations.z[i][(j, c)];
                for col in 0..m {
                    state.scores.chi[i][(j, col)] -= zc * shift[c * m + col];
                }
            }
        }
    }
    for c in 0..k {
        let delta = &loadings[c] * shift.rows(c * m, m);
        state.features.nu[c] += delta;
    }
    Ok(())
}

/// `σ²`, then `γ`, then each `δ_nk` in turn.
pub fn update_variances<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) -> Result<()> {
    update_sigma2(ctx, state, rng);
    update_gamma(ctx, state, rng);
    update_delta(state, rng);
    Ok(())
}

/// Each `σ_j²` from its inverse-Gamma conditional.
pub fn update_sigma2<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) {
    let d = state.dims();
    let prior = ctx.prior;
    for j in 0..d.n_channels {
        let mut ss = 0.0;
        let mut count = 0usize;
        for i in 0..d.n_subjects {
            let mean = ctx.design.eval(i).curve(&state.conditional_coefficients(i, j));
            ss += (ctx.data.subject(i).y.column(j) - mean).norm_squared();
            count += ctx.data.grid_len(i);
        }
        state.noise.sigma2[j] = dist::inv_gamma(rng, prior.alpha0 + count as f64 / 2.0, prior.beta0 + ss / 2.0);
    }
}

/// Local precisions `γ_kpm` from their Gamma conditionals.
pub fn update_gamma<R: Rng + ?Sized>(ctx: &Context<'_>, state: &mut ModelState, rng: &mut R) {
    let d = state.dims();
    let prior = ctx.prior;
    let (k, m, p) = (d.n_features, d.n_eigen, d.n_basis);
    let tt = state.shrinkage.tilde_tau();
    for kk in 0..k {
        for mm in 0..m {
            for pp in 0..p {
                let phi = state.features.phi[kk][mm][pp];
                state.shrinkage.gamma[kk][(pp, mm)] = dist::gamma(
                    rng,
                    (prior.nu_gamma + 1.0) / 2.0,
                    (prior.nu_gamma + tt[(mm, kk)] * phi * phi) / 2.0,
                );
            }
        }
    }
}

/// Each `δ_nk` in turn from its Gamma conditional.
pub fn update_delta<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let d = state.dims();
    let (k, m, p) = (d.n_features, d.n_eigen, d.n_basis);
    for kk in 0..k {
        // weighted squared norms Σ_p γ_kpm φ_kpm² per level m
        let norms: Vec<f64> = (0..m)
            .map(|mm| {
                (0..p)
                    .map(|pp| state.shrinkage.gamma[kk][(pp, mm)] * state.features.phi[kk][mm][pp].powi(2))
                    .sum()
            })
            .collect();
        for h in 0..m {
            let mut partial = 1.0;
            let mut rate_sum = 0.0;
            for mm in 0..m {
                if mm != h {
                    partial *= state.shrinkage.delta[(mm, kk)];
                }
                if mm >= h {
                    rate_sum += partial * norms[mm];
                }
            }
            let base = if h == 0 { state.shrinkage.a1[kk] } else { state.shrinkage.a2[kk] };
            let shape = base + (p * (m - h)) as f64 / 2.0;
            state.shrinkage.delta[(h, kk)] = dist::gamma(rng, shape, 1.0 + rate_sum / 2.0);
        }
    }
}

/// Log random-walk Metropolis step for a positive scalar.
fn log_rw_step<R: Rng + ?Sized>(
    rng: &mut R,
    current: f64,
    step: f64,
    tally: &mut Tally,
    log_target: impl Fn(f64) -> f64,
) -> f64 {
    let proposal = current * (step * dist::std_normal(rng)).exp();
    // log-scale random walk: target density in log x includes the Jacobian x
    let log_ratio = log_target(proposal) + proposal.ln() - log_target(current) - current.ln();
    let u: f64 = rng.random();
    let accept = log_ratio.is_finite() && u.ln() < log_ratio;
    tally.record(accept);
    if accept {
        proposal
    } else {
        current
    }
}

/// `a₁k` and `a₂k` by log random-walk Metropolis against their Gamma
/// priors and the Gamma likelihood of the `δ`s they govern.
pub fn update_hyper_a<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut ModelState,
    step: f64,
    tally: &mut Tally,
    rng: &mut R,
) {
    let prior = ctx.prior;
    let d = state.dims();
    for kk in 0..d.n_features {
        let delta: Vec<f64> = state.shrinkage.delta.column(kk).iter().copied().collect();
        let first = delta.first().copied();
        state.shrinkage.a1[kk] = log_rw_step(rng, state.shrinkage.a1[kk], step, tally, |a| {
            dist::ln_gamma_pdf(a, prior.alpha1, prior.beta1) + first.map_or(0.0, |x| dist::ln_gamma_pdf(x, a, 1.0))
        });
        state.shrinkage.a2[kk] = log_rw_step(rng, state.shrinkage.a2[kk], step, tally, |a| {
            dist::ln_gamma_pdf(a, prior.alpha2, prior.beta2)
                + delta.iter().skip(1).map(|&x| dist::ln_gamma_pdf(x, a, 1.0)).sum::<f64>()
        });
    }
}

fn dirichlet_proposal<R: Rng + ?Sized>(rng: &mut R, current: &[f64], concentration: f64) -> Vec<f64> {
    let alpha: Vec<f64> = current
        .iter()
        .map(|&x| concentration * x + PROPOSAL_CONCENTRATION_FLOOR)
        .collect();
    dist::dirichlet(rng, &alpha)
}

/// `log q(to | from)` for the Dirichlet-centred proposal.
fn dirichlet_proposal_ln_pdf(to: &[f64], from: &[f64], concentration: f64) -> f64 {
    let alpha: Vec<f64> = from
        .iter()
        .map(|&x| concentration * x + PROPOSAL_CONCENTRATION_FLOOR)
        .collect();
    dist::ln_dirichlet_pdf(to, &alpha)
}

fn on_open_simplex(x: &[f64]) -> bool {
    x.iter().all(|&v| v > SIMPLEX_FLOOR)
}

fn set_row(m: &mut DMatrix<f64>, r: usize, values: &[f64]) {
    for (c, &v) in values.iter().enumerate() {
        m[(r, c)] = v;
    }
}

fn row_vec(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).iter().copied().collect()
}

fn pair_loglik(ctx: &Context<'_>, state: &ModelState, i: usize, j: usize) -> Result<f64> {
    match ctx.z_likelihood {
        ZLikelihood::Conditional => Ok(loglik_conditional_pair_unchecked(state, ctx.design, ctx.data, i, j)),
        ZLikelihood::Marginal => loglik_marginal_pair_unchecked(state, ctx.design, ctx.data, i, j),
    }
}

/// Metropolis update of every channel membership `Z_ij`.
pub fn update_z<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut ModelState,
    concentration: f64,
    tally: &mut Tally,
    rng: &mut R,
) -> Result<()> {
    let d = state.dims();
    if d.n_features < 2 {
        return Ok(());
    }
    for i in 0..d.n_subjects {
        let conc: Vec<f64> = state.allocations.pi.row(i).iter().map(|&p| p * state.allocations.eta).collect();
        for j in 0..d.n_channels {
            let current = row_vec(&state.allocations.z[i], j);
            let proposal = dirichlet_proposal(rng, &current, concentration);
            let mut accept = false;
            if on_open_simplex(&proposal) {
                let old = pair_loglik(ctx, state, i, j)? + dist::ln_dirichlet_pdf(&current, &conc);
                set_row(&mut state.allocations.z[i], j, &proposal);
                let new = pair_loglik(ctx, state, i, j)? + dist::ln_dirichlet_pdf(&proposal, &conc);
                let log_ratio = new - old + dirichlet_proposal_ln_pdf(&current, &proposal, concentration)
                    - dirichlet_proposal_ln_pdf(&proposal, &current, concentration);
                let u: f64 = rng.random();
                accept = log_ratio.is_finite() && u.ln() < log_ratio;
                if !accept {
                    set_row(&mut state.allocations.z[i], j, &current);
                }
            }
            tally.record(accept);
            if ctx.z_likelihood == ZLikelihood::Marginal {
                draw_scores_pair(ctx, state, i, j, rng)?;
            }
        }
    }
    Ok(())
}

/// Metropolis update of every subject centroid `π_i` against the repulsive
/// prior and the Dirichlet layer of that subject's channels.
pub fn update_pi<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut ModelState,
    concentration: f64,
    tally: &mut Tally,
    rng: &mut R,
) {
    let d = state.dims();
    if d.n_features < 2 {
        return;
    }
    let prior = ctx.prior;
    let eta = state.allocations.eta;
    for i in 0..d.n_subjects {
        let z = &state.allocations.z[i];
        let log_target = |row: &[f64], pi: &DMatrix<f64>| {
            let conc: Vec<f64> = row.iter().map(|&p| p * eta).collect();
            let layer: f64 = (0..d.n_channels)
                .map(|j| dist::ln_dirichlet_pdf(&row_vec(z, j), &conc))
                .sum();
            dist::ln_dirichlet_pdf(row, &prior.alpha_dir) + repulsion_row(pi, i, row, prior.tau_rep) + layer
        };
        let current = row_vec(&state.allocations.pi, i);
        let proposal = dirichlet_proposal(rng, &current, concentration);
        let mut accept = false;
        if on_open_simplex(&proposal) {
            let log_ratio = log_target(&proposal, &state.allocations.pi) - log_target(&current, &state.allocations.pi)
                + dirichlet_proposal_ln_pdf(&current, &proposal, concentration)
                - dirichlet_proposal_ln_pdf(&proposal, &current, concentration);
            let u: f64 = rng.random();
            accept = log_ratio.is_finite() && u.ln() < log_ratio;
        }
        tally.record(accept);
        if accept {
            set_row(&mut state.allocations.pi, i, &proposal);
        }
    }
}

/// Log random-walk Metropolis update of the concentration `η`.
pub fn update_eta<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut ModelState,
    step: f64,
    tally: &mut Tally,
    rng: &mut R,
) {
    let prior = ctx.prior;
    let alloc = &state.allocations;
    let log_target = |eta: f64| {
        let mut total = dist::ln_gamma_pdf(eta, prior.eta_shape, prior.eta_rate);
        for (i, z) in alloc.z.iter().enumerate() {
            let conc: Vec<f64> = alloc.pi.row(i).iter().map(|&p| p * eta).collect();
            for j in 0..z.nrows() {
                total += dist::ln_dirichlet_pdf(&row_vec(z, j), &conc);
            }
        }
        total
    };
    let eta = log_rw_step(rng, alloc.eta, step, tally, log_target);
    state.allocations.eta = eta;
}

/// `Z`, then `π`, then `η`.
pub fn update_memberships<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut ModelState,
    scales: &ProposalScales,
    acc: &mut super::Acceptance,
    rng: &mut R,
) -> Result<()> {
    update_z(ctx, state, scales.z, &mut acc.z, rng)?;
    update_pi(ctx, state, scales.pi, &mut acc.pi, rng);
    update_eta(ctx, state, scales.eta, &mut acc.eta, rng);
    Ok(())
}
