//! Scalar log-densities and random draws shared across the crate.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

/// `Gamma(shape, rate)` log-density.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `InverseGamma(shape, scale)` log-density.
pub fn ln_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Dirichlet log-density; `-inf` when any coordinate is not strictly positive.
pub fn ln_dirichlet_pdf<'a>(x: impl IntoIterator<Item = &'a f64>, alpha: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut sum_alpha = 0.0;
    let mut acc = 0.0;
    for (&xi, &ai) in x.into_iter().zip(alpha) {
        if xi <= 0.0 {
            return f64::NEG_INFINITY;
        }
        sum_alpha += ai;
        acc += (ai - 1.0) * xi.ln() - ln_gamma(ai);
    }
    acc + ln_gamma(sum_alpha)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `Gamma(shape, rate)` draw.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive and finite")
        .sample(rng)
}

/// Logarithm of a `Gamma(shape, 1)` draw, accurate for small shapes.
fn ln_unit_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        gamma(rng, shape, 1.0).ln()
    } else {
        let u: f64 = rng.random::<f64>();
        gamma(rng, shape + 1.0, 1.0).ln() + u.ln() / shape
    }
}

/// `InverseGamma(shape, scale)` draw.
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    1.0 / gamma(rng, shape, scale)
}

/// Dirichlet draw computed in log space so tiny concentrations never
/// produce an all-zero vector.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| ln_unit_gamma(rng, a)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn densities_match_closed_forms() {
        // Exp(2) at 0.5
        assert!((ln_gamma_pdf(0.5, 1.0, 2.0) - (2.0f64.ln() - 1.0)).abs() < 1e-14);
        // IG(1, 1) at 1: e^{-1}
        assert!((ln_inv_gamma_pdf(1.0, 1.0, 1.0) + 1.0).abs() < 1e-14);
        // flat Dirichlet on the 2-simplex has density Γ(3) = 2
        assert!((ln_dirichlet_pdf(&[0.2, 0.3, 0.5], &[1.0, 1.0, 1.0]) - 2.0f64.ln()).abs() < 1e-14);
        assert_eq!(ln_dirichlet_pdf(&[0.0, 1.0], &[1.0, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn small_concentration_dirichlet_stays_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = dirichlet(&mut rng, &[0.01, 0.02, 0.005]);
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(x.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
