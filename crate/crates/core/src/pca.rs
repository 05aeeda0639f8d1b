//! Principal component analysis on shrunk spectra: explained-variation
//! curves, the smallest-k retention rule, and the variation attributable to an
//! orthonormal set of linear combinations.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveBasis {
    Sample,
    Population,
    Shrinkage,
    FiniteSampleOptimal,
}

/// Cumulative largest-first shares of total variation: `f[k-1]` is the
/// fraction captured by the top k components.
#[derive(Debug, Clone)]
pub struct ExplainedVariationCurve {
    f: Vec<f64>,
    pub basis: CurveBasis,
}

impl ExplainedVariationCurve {
    pub fn fractions(&self) -> &[f64] {
        &self.f
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// Builds the curve from variance-unit weights (eigenvalues or shrinkage
/// constants), all strictly positive.
pub fn explained_fraction_curve(d: &[f64], basis: CurveBasis) -> Result<ExplainedVariationCurve> {
    if d.is_empty() {
        return Err(Error::validation("weight vector must be nonempty"));
    }
    if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::validation(
            "explained-variation weights must be strictly positive",
        ));
    }
    let mut sorted = d.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let total: f64 = sorted.iter().sum();
    let mut f = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    for x in &sorted {
        acc += x;
        f.push((acc / total).min(1.0));
    }
    // The full sum is the total by construction; pin the endpoint exactly.
    *f.last_mut().unwrap() = 1.0;
    Ok(ExplainedVariationCurve { f, basis })
}

/// Smallest k whose top-k components capture at least fraction `q` of the
/// total variation.
pub fn components_to_retain(curve: &ExplainedVariationCurve, q: f64) -> Result<usize> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::validation(format!("q = {q} outside (0, 1)")));
    }
    Ok(curve.f.partition_point(|&fk| fk < q) + 1)
}

/// Total variance captured by the orthonormal directions in the columns of
/// `w`: `tr(W' Sigma W)`. Invariant under rotation of the columns.
pub fn variation_attributable(w: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let p = w.nrows();
    let k = w.ncols();
    if sigma.nrows() != p || sigma.ncols() != p || k == 0 || k > p {
        return Err(Error::validation(format!(
            "dimension mismatch: W is {p}x{k}, Sigma is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let gram = w.transpose() * w;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - target).abs() > 1e-10 {
                return Err(Error::validation(
                    "columns of W must be orthonormal within 1e-10",
                ));
            }
        }
    }
    Ok((w.transpose() * sigma * w).trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_weights_give_linear_curve() {
        let curve = explained_fraction_curve(&[2.0; 10], CurveBasis::Sample).unwrap();
        for (k, &fk) in curve.fractions().iter().enumerate() {
            assert_abs_diff_eq!(fk, (k + 1) as f64 / 10.0, epsilon = 1e-12);
        }
        assert_eq!(curve.fractions()[9], 1.0);
    }

    #[test]
    fn hand_curve_1_3_6() {
        let curve = explained_fraction_curve(&[1.0, 3.0, 6.0], CurveBasis::Population).unwrap();
        assert_abs_diff_eq!(curve.fractions()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.fractions()[1], 0.9, epsilon = 1e-12);
        assert_eq!(curve.fractions()[2], 1.0);
    }

    #[test]
    fn curve_rejects_nonpositive() {
        assert!(explained_fraction_curve(&[1.0, 0.0], CurveBasis::Sample).is_err());
        assert!(explained_fraction_curve(&[], CurveBasis::Sample).is_err());
    }

    #[test]
    fn retention_rule() {
        let curve = ExplainedVariationCurve {
            f: vec![0.5, 0.8, 1.0],
            basis: CurveBasis::Sample,
        };
        assert_eq!(components_to_retain(&curve, 0.7).unwrap(), 2);
        // The boundary counts: weak inequality.
        assert_eq!(components_to_retain(&curve, 0.8).unwrap(), 2);
        assert_eq!(components_to_retain(&curve, 0.99).unwrap(), 3);
        assert!(components_to_retain(&curve, 1.0).is_err());
    }

    #[test]
    fn retention_uniform_ten() {
        let curve = explained_fraction_curve(&[1.0; 10], CurveBasis::Sample).unwrap();
        assert_eq!(components_to_retain(&curve, 0.85).unwrap(), 9);
    }

    #[test]
    fn retention_monotone_in_q() {
        let curve = explained_fraction_curve(&[5.0, 1.0, 3.0, 0.5], CurveBasis::Sample).unwrap();
        let mut prev = 0;
        for q in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let k = components_to_retain(&curve, q).unwrap();
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn attributable_basis_columns() {
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[
            1.0, 2.0, 3.0, 4.0,
        ]));
        let mut w = DMatrix::zeros(4, 2);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 1.0;
        assert_abs_diff_eq!(
            variation_attributable(&w, &sigma).unwrap(),
            3.0,
            epsilon = 1e-14
        );
        let full = DMatrix::identity(4, 4);
        assert_abs_diff_eq!(
            variation_attributable(&full, &sigma).unwrap(),
            sigma.trace(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn attributable_rotation_invariance() {
        let sigma = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let mut w = DMatrix::zeros(3, 2);
        w[(0, 0)] = 1.0;
        w[(2, 1)] = 1.0;
        let theta = 0.734f64;
        let r = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let v1 = variation_attributable(&w, &sigma).unwrap();
        let v2 = variation_attributable(&(&w * r), &sigma).unwrap();
        assert_abs_diff_eq!(v1, v2, epsilon = 1e-12);
    }

    #[test]
    fn attributable_rejects_non_orthonormal() {
        let sigma = DMatrix::identity(3, 3);
        let w = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(variation_attributable(&w, &sigma).is_err());
    }
}
