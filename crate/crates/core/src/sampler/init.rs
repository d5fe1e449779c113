//! Deterministic data-driven starting state.

use nalgebra::{DMatrix, DVector};

use super::{Context, SIMPLEX_FLOOR};
use crate::error::{FunmixError, Result};
use crate::model::{ModelDims, ModelState};
use crate::priors::ShrinkageParams;

/// Lloyd's algorithm with farthest-first seeding. Returns the centroids and
/// the assignment of every point.
pub fn kmeans(points: &[DVector<f64>], k: usize, max_iter: usize) -> (Vec<DVector<f64>>, Vec<usize>) {
    assert!(!points.is_empty() && k >= 1);
    let dim = points[0].len();
    let mean = points.iter().fold(DVector::zeros(dim), |acc, p| acc + p) / points.len() as f64;
    let farthest_from = |centres: &[DVector<f64>]| {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (idx, p) in points.iter().enumerate() {
            let d = centres
                .iter()
                .map(|c| (p - c).norm_squared())
                .fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (idx, d);
            }
        }
        best.0
    };
    let mut centres = vec![points[farthest_from(std::slice::from_ref(&mean))].clone()];
    while centres.len() < k {
        let idx = farthest_from(&centres);
        centres.push(points[idx].clone());
    }
    let nearest = |p: &DVector<f64>, centres: &[DVector<f64>]| {
        let mut best = (0usize, f64::INFINITY);
        for (c, centre) in centres.iter().enumerate() {
            let d = (p - centre).norm_squared();
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    };
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centres)).collect();
    for _ in 0..max_iter {
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                *centre = members.iter().fold(DVector::zeros(dim), |acc, p| acc + *p) / members.len() as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centres)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    (centres, labels)
}

/// Starting state: `ν` from k-means centroids of per-curve least-squares
/// coefficients, `Z` from normalized inverse distances to the centroids,
/// `π_i` as the channel average of `Z_ij`, `φ = 0`, `χ = 0`, `σ²` from the
/// residual variance and shrinkage parameters at their prior means.
pub fn initialize(ctx: &Context<'_>, n_features: usize, n_eigen: usize) -> Result<ModelState> {
    let data = ctx.data;
    let dims = ModelDims {
        n_subjects: data.n_subjects(),
        n_channels: data.n_channels(),
        n_features,
        n_eigen,
        n_basis: ctx.design.n_basis(),
    };
    dims.validate()?;
    let (n, j_count, k, p) = (dims.n_subjects, dims.n_channels, n_features, dims.n_basis);

    let mut coefs = Vec::with_capacity(n * j_count);
    for i in 0..n {
        let mut gram = ctx.design.gram(i).clone();
        let ridge = 1e-6 * (1.0 + gram.diagonal().max());
        for c in 0..p {
            gram[(c, c)] += ridge;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| FunmixError::NotPositiveDefinite("initial least-squares system".into()))?;
        let s = ctx.design.eval(i).values();
        for j in 0..j_count {
            coefs.push(chol.solve(&(s * data.subject(i).y.column(j))));
        }
    }
    let (centres, _) = kmeans(&coefs, k, 100);

    let mut state = ModelState::zeros(&dims);
    state.features.nu = centres.clone();
    let floor = (SIMPLEX_FLOOR * 1e3).min(0.5 / k as f64);
    for i in 0..n {
        let mut z = DMatrix::zeros(j_count, k);
        for j in 0..j_count {
            let c = &coefs[i * j_count + j];
            let inv: Vec<f64> = centres.iter().map(|m| 1.0 / ((c - m).norm() + 1e-8)).collect();
            let total: f64 = inv.iter().sum();
            let clipped: Vec<f64> = inv.iter().map(|v| (v / total).max(floor)).collect();
            let total: f64 = clipped.iter().sum();
            for kk in 0..k {
                z[(j, kk)] = clipped[kk] / total;
            }
        }
        for kk in 0..k {
            state.allocations.pi[(i, kk)] = z.column(kk).mean();
        }
        state.allocations.z[i] = z;
    }
    // distinct centroids keep the repulsive density finite
    nudge_coincident_rows(&mut state.allocations.pi);

    for j in 0..j_count {
        let mut ss = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            let mean = ctx.design.eval(i).curve(&state.mean_coefficients(i, j));
            ss += (data.subject(i).y.column(j) - mean).norm_squared();
            count += data.grid_len(i);
        }
        state.noise.sigma2[j] = (ss / count as f64).max(1e-6);
    }

    state.allocations.eta = ctx.prior.eta_shape / ctx.prior.eta_rate;
    state.shrinkage = ShrinkageParams::prior_means(ctx.prior, k, p, n_eigen);
    state.lambda_nu = ctx.prior.lambda_nu;
    state.lambda_phi = ctx.prior.lambda_phi;
    Ok(state)
}

fn nudge_coincident_rows(pi: &mut DMatrix<f64>) {
    let (n, k) = pi.shape();
    if k < 2 {
        return;
    }
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    for i in 1..n {
        let tied = (0..i).any(|l| (0..k).all(|c| (pi[(i, c)] - pi[(l, c)]).abs() < 1e-3));
        if tied {
            // distinct low-discrepancy point on the simplex
            let mut cuts: Vec<f64> = (1..k).map(|c| ((i * c) as f64 * golden + 0.5 / c as f64).fract()).collect();
            cuts.sort_by(f64::total_cmp);
            cuts.insert(0, 0.0);
            cuts.push(1.0);
            for c in 0..k {
                pi[(i, c)] = 0.8 * pi[(i, c)] + 0.2 * (cuts[c + 1] - cuts[c]);
            }
        }
    }
}
