//! Clamped B-spline bases, their evaluation matrices and the first-order
//! random-walk penalty.
//!
//! Basis functions are indexed `0..P` and an evaluation matrix stores one
//! column per grid point, so `S(t)ᵀ c` maps a coefficient vector onto the grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FunmixError, Result};

/// A fixed B-spline basis on `[t_min, t_max]` with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    degree: usize,
    interior_knots: Vec<f64>,
    boundary: [f64; 2],
    knots: Vec<f64>,
}

impl BasisSystem {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> [f64; 2] {
        self.boundary
    }

    /// Full clamped knot vector (boundary knots repeated `degree + 1` times).
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Basis dimension `P`.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }

    /// Support `[lo, hi]` of basis function `p`.
    pub fn support(&self, p: usize) -> (f64, f64) {
        (self.knots[p], self.knots[p + self.degree + 1])
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.boundary[0] && t <= self.boundary[1]
    }

    /// Knot span containing `t`; the right boundary maps to the last
    /// non-degenerate span so the final basis function equals 1 there.
    fn span(&self, t: f64) -> usize {
        let p = self.dim();
        if t >= self.boundary[1] {
            return p - 1;
        }
        // knots[degree] = t_min, knots[p] = t_max
        let (mut lo, mut hi) = (self.degree, p);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `degree + 1` basis functions that are non-zero at `t`,
    /// together with the index of the first one.
    fn nonzero_at(&self, t: f64) -> (usize, Vec<f64>) {
        let d = self.degree;
        let span = self.span(t);
        let u = &self.knots;
        let mut values = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        values[0] = 1.0;
        for r in 1..=d {
            left[r] = t - u[span + 1 - r];
            right[r] = u[span + r] - t;
            let mut saved = 0.0;
            for s in 0..r {
                let denom = right[s + 1] + left[r - s];
                let temp = values[s] / denom;
                values[s] = saved + right[s + 1] * temp;
                saved = left[r - s] * temp;
            }
            values[r] = saved;
        }
        (span - d, values)
    }

    /// All `P` basis functions at a single point.
    pub fn eval_point(&self, t: f64) -> Result<DVector<f64>> {
        self.check_point(t)?;
        let mut out = DVector::zeros(self.dim());
        let (first, values) = self.nonzero_at(t);
        for (offset, v) in values.into_iter().enumerate() {
            out[first + offset] = v;
        }
        Ok(out)
    }

    fn check_point(&self, t: f64) -> Result<()> {
        if !t.is_finite() || !self.contains(t) {
            return Err(FunmixError::OutOfDomain {
                point: t,
                lo: self.boundary[0],
                hi: self.boundary[1],
            });
        }
        Ok(())
    }
}

/// `P × n` matrix whose column `j` holds `B(t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    values: DMatrix<f64>,
}

impl EvalMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_basis(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    /// `S(t)ᵀ c`: a coefficient vector evaluated on the grid.
    pub fn curve(&self, coef: &DVector<f64>) -> DVector<f64> {
        self.values.tr_mul(coef)
    }
}

/// Symmetric `P × P` matrix `DᵀD` for the first-difference operator `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    values: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// `cᵀ (DᵀD) c`.
    pub fn quadratic_form(&self, coef: &DVector<f64>) -> f64 {
        (coef.transpose() * &self.values * coef)[(0, 0)]
    }

    /// Zero penalty used for one-dimensional bases, which have no differences.
    pub(crate) fn zero(p: usize) -> Self {
        PenaltyMatrix {
            values: DMatrix::zeros(p, p),
        }
    }
}

/// Build a clamped B-spline basis of the given degree with `n_interior`
/// equally spaced interior knots on `domain`.
pub fn build_basis(degree: usize, n_interior: usize, domain: [f64; 2]) -> Result<BasisSystem> {
    let [t_min, t_max] = domain;
    if !(t_min.is_finite() && t_max.is_finite()) || t_min >= t_max {
        return Err(FunmixError::InvalidBasis(format!(
            "degenerate domain [{t_min}, {t_max}]"
        )));
    }
    let step = (t_max - t_min) / (n_interior + 1) as f64;
    let interior_knots: Vec<f64> = (1..=n_interior)
        .map(|i| t_min + i as f64 * step)
        .collect();
    let mut knots = Vec::with_capacity(n_interior + 2 * degree + 2);
    knots.extend(std::iter::repeat_n(t_min, degree + 1));
    knots.extend_from_slice(&interior_knots);
    knots.extend(std::iter::repeat_n(t_max, degree + 1));
    Ok(BasisSystem {
        degree,
        interior_knots,
        boundary: domain,
        knots,
    })
}

/// Same as [`build_basis`] but with signed counts, rejecting negatives.
pub fn build_basis_checked(degree: i64, n_interior: i64, domain: [f64; 2]) -> Result<BasisSystem> {
    if degree < 0 || n_interior < 0 {
        return Err(FunmixError::InvalidBasis(format!(
            "degree ({degree}) and interior knot count ({n_interior}) must be non-negative"
        )));
    }
    build_basis(degree as usize, n_interior as usize, domain)
}

/// Evaluate every basis function on `grid`.
pub fn evaluate(basis: &BasisSystem, grid: &[f64]) -> Result<EvalMatrix> {
    let p = basis.dim();
    let mut values = DMatrix::zeros(p, grid.len());
    for (col, &t) in grid.iter().enumerate() {
        basis.check_point(t)?;
        let (first, vals) = basis.nonzero_at(t);
        for (offset, v) in vals.into_iter().enumerate() {
            values[(first + offset, col)] = v;
        }
    }
    Ok(EvalMatrix { values })
}

/// First-order random-walk penalty `DᵀD` of size `p × p`.
pub fn rw1_penalty(p: usize) -> Result<PenaltyMatrix> {
    if p < 2 {
        return Err(FunmixError::InvalidBasis(format!(
            "random-walk penalty needs at least 2 coefficients, got {p}"
        )));
    }
    let mut values = DMatrix::zeros(p, p);
    for i in 0..p - 1 {
        values[(i, i)] += 1.0;
        values[(i + 1, i + 1)] += 1.0;
        values[(i, i + 1)] -= 1.0;
        values[(i + 1, i)] -= 1.0;
    }
    Ok(PenaltyMatrix { values })
}

/// Penalty for any basis size; a single coefficient gets the zero matrix.
pub(crate) fn rw1_penalty_or_zero(p: usize) -> PenaltyMatrix {
    rw1_penalty(p).unwrap_or_else(|_| PenaltyMatrix::zero(p))
}

/// `n` equally spaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
            v[n - 1] = hi;
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degree_zero_is_interval_indicators() {
        let b = build_basis(0, 1, [0.0, 1.0]).unwrap();
        assert_eq!(b.dim(), 2);
        let s = evaluate(&b, &[0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(s.values().column(0).as_slice(), &[1.0, 0.0]);
        assert_eq!(s.values().column(1).as_slice(), &[0.0, 1.0]);
        assert_eq!(s.values().column(2).as_slice(), &[0.0, 1.0]);
        assert_eq!(s.values().column(3).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(build_basis(3, 6, [0.0, 1.0]).unwrap().dim(), 10);
        let alpha = build_basis(3, 6, [6.0, 14.0]).unwrap();
        assert_eq!(alpha.dim(), 10);
        assert_eq!(alpha.support(0).0, 6.0);
        assert_eq!(alpha.support(9).1, 14.0);
    }

    #[test]
    fn clamped_endpoints() {
        let b = build_basis(3, 6, [0.0, 1.0]).unwrap();
        let s = evaluate(&b, &[0.0, 1.0]).unwrap();
        let first = s.values().column(0);
        let last = s.values().column(1);
        assert_eq!(first[0], 1.0);
        assert!(first.iter().skip(1).all(|&v| v == 0.0));
        assert_eq!(last[9], 1.0);
        assert!(last.iter().take(9).all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(build_basis(3, 2, [1.0, 1.0]).is_err());
        assert!(build_basis(3, 2, [2.0, 1.0]).is_err());
        assert!(build_basis_checked(-1, 2, [0.0, 1.0]).is_err());
        assert!(build_basis_checked(3, -2, [0.0, 1.0]).is_err());
    }

    #[test]
    fn out_of_domain_names_point() {
        let b = build_basis(3, 2, [0.0, 1.0]).unwrap();
        let err = evaluate(&b, &[0.5, 1.5]).unwrap_err();
        assert!(err.to_string().contains("1.5"), "{err}");
    }

    #[test]
    fn small_penalties() {
        assert_eq!(
            rw1_penalty(2).unwrap().values(),
            &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        assert_eq!(
            rw1_penalty(3).unwrap().values(),
            &DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0])
        );
        assert!(rw1_penalty(1).is_err());
        assert!(rw1_penalty(0).is_err());
    }

    #[test]
    fn penalty_rank_and_null_space() {
        let k = rw1_penalty(7).unwrap();
        let ones = DVector::from_element(7, 1.0);
        assert!((k.values() * &ones).amax() < 1e-15);
        let eig = k.values().clone().symmetric_eigen();
        let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zeros, 1);
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-12));
    }

    proptest! {
        #[test]
        fn partition_of_unity(t in 0.0f64..=1.0, degree in 0usize..5, n_int in 0usize..9) {
            let b = build_basis(degree, n_int, [0.0, 1.0]).unwrap();
            let col = b.eval_point(t).unwrap();
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
            prop_assert!(col.iter().all(|&v| (0.0..=1.0 + 1e-15).contains(&v)));
        }

        #[test]
        fn local_support(degree in 0usize..5, n_int in 0usize..9) {
            let b = build_basis(degree, n_int, [6.0, 14.0]).unwrap();
            let grid = linspace(6.0, 14.0, 801);
            let s = evaluate(&b, &grid).unwrap();
            for p in 0..b.dim() {
                let (lo, hi) = b.support(p);
                for (c, &t) in grid.iter().enumerate() {
                    if t < lo || t > hi {
                        prop_assert_eq!(s.values()[(p, c)], 0.0);
                    }
                }
            }
        }

        #[test]
        fn penalty_is_sum_of_squared_differences(coef in proptest::collection::vec(-5.0f64..5.0, 2..15)) {
            let p = coef.len();
            let k = rw1_penalty(p).unwrap();
            let v = DVector::from_vec(coef.clone());
            let direct: f64 = coef.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
            prop_assert!((k.quadratic_form(&v) - direct).abs() < 1e-12 * (1.0 + direct));
        }
    }
}
