//! Foundational types for spectra and discrete spectral distributions, and the
//! dimension-normalized quantile distance used throughout estimation and
//! testing.

use crate::error::{Error, Result};

/// Tolerance for accepting a weight vector as summing to one. Inputs within
/// this tolerance are renormalized; anything farther off is rejected.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A sorted nonnegative vector of `p` eigenvalues: a population spectrum, an
/// estimate of one, or a candidate argument to the QuEST map.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumVector {
    values: Vec<f64>,
}

impl SpectrumVector {
    /// Validates nonnegativity and ascending order.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("spectrum must be nonempty"));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "spectrum entry {i} is {v}; entries must be finite and nonnegative"
                )));
            }
            if i > 0 && values[i - 1] > v {
                return Err(Error::validation(format!(
                    "spectrum not sorted ascending at index {i}: {} > {v}",
                    values[i - 1]
                )));
            }
        }
        Ok(Self { values })
    }

    /// Sorts the input before validating.
    pub fn from_unsorted(mut values: Vec<f64>) -> Result<Self> {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Self::new(values)
    }

    pub fn constant(value: f64, p: usize) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn is_all_zero(&self) -> bool {
        self.max() == 0.0
    }
}

/// A discrete probability distribution on the real line: sorted atom
/// locations with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpectralDistribution {
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteSpectralDistribution {
    pub fn new(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.is_empty() || locations.len() != weights.len() {
            return Err(Error::validation(
                "locations and weights must be nonempty and of equal length",
            ));
        }
        for w in locations.windows(2) {
            if w[0] > w[1] {
                return Err(Error::validation("locations must be sorted ascending"));
            }
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::validation("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::validation(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL}"
            )));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self { locations, weights })
    }

    /// Equal weight 1/p on each entry of the spectrum.
    pub fn from_spectrum(spectrum: &SpectrumVector) -> Self {
        let p = spectrum.len();
        Self {
            locations: spectrum.values().to_vec(),
            weights: vec![1.0 / p as f64; p],
        }
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sup-quantile: `sup { x : H(x) <= u }`.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut cum = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            cum += w;
            // The CDF first exceeds u at this atom; everything up to the next
            // atom still satisfies H(x) <= u, so the sup is the next location.
            if cum > u {
                return self.locations[i];
            }
        }
        *self.locations.last().unwrap()
    }
}

/// Sample size, dimension, and their ratio (the concentration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationContext {
    pub n: usize,
    pub p: usize,
}

impl ConcentrationContext {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::validation("n and p must be positive"));
        }
        Ok(Self { n, p })
    }

    /// The concentration c = p/n.
    pub fn c(&self) -> f64 {
        self.p as f64 / self.n as f64
    }
}

/// The `(i-0.5)/p` quantiles of a discrete distribution, ascending.
pub fn edf_quantiles(dist: &DiscreteSpectralDistribution, p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::validation("p must be at least 1"));
    }
    Ok((1..=p)
        .map(|i| dist.quantile((i as f64 - 0.5) / p as f64))
        .collect())
}

/// Dimension-normalized Euclidean distance between two quantile vectors:
/// `sqrt( (1/p) sum (q1_i - q2_i)^2 )`.
pub fn spectral_distance_p(q1: &[f64], q2: &[f64]) -> Result<f64> {
    if q1.is_empty() || q1.len() != q2.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} vs {}",
            q1.len(),
            q2.len()
        )));
    }
    let p = q1.len() as f64;
    let ss: f64 = q1
        .iter()
        .zip(q2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / p).sqrt())
}
