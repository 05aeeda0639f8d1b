//! Monte Carlo harness: the simulation designs, deterministic per-replication
//! seeding, and the replicated eigenvalue / shrinkage / PCA experiments with
//! their aggregate reports.

use crate::error::{Error, Result};
use crate::estimator::{estimate_spectrum, lawley_corrected, EstimationOptions};
use crate::mp::StieltjesSolver;
use crate::pca::{components_to_retain, explained_fraction_curve, CurveBasis};
use crate::shrinkage::{
    finite_sample_optimal_d, frobenius_loss, linear_shrinkage, nonlinear_shrinkage, oracle_d,
    Eigensystem,
};
use crate::spectral::{ConcentrationContext, SpectrumVector};
use nalgebra::DMatrix;
use rand::distributions::Distribution as RandDistribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use std::collections::BTreeMap;
use std::time::Instant;

/// How the population spectrum of a design is specified.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumSpec {
    /// `tau_i = a_shift + scale * BetaQuantile(alpha, beta, (i-0.5)/p)`.
    BetaShifted {
        a_shift: f64,
        scale: f64,
        alpha: f64,
        beta: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
    /// Distinct levels repeated by multiplicity.
    Clustered {
        locations: Vec<f64>,
        multiplicities: Vec<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariateLaw {
    Gaussian,
    /// Student t, rescaled by sqrt((df-2)/df) to unit variance.
    StudentT { df: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub spectrum_spec: SpectrumSpec,
    pub n: usize,
    pub p: usize,
    pub variate_law: VariateLaw,
    pub replications: usize,
    /// Absent in a design file means "let the caller pick one"; the CLI
    /// generates and prints a seed in that case. The run functions require it.
    #[serde(default)]
    pub master_seed: Option<u64>,
    /// When true, replications whose estimator fails are dropped from the
    /// means instead of failing the whole run.
    #[serde(default)]
    pub allow_failures: bool,
}

impl SimulationDesign {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::validation("replications must be at least 1"));
        }
        if self.n < 2 || self.p < 2 {
            return Err(Error::validation("n and p must be at least 2"));
        }
        match &self.spectrum_spec {
            SpectrumSpec::BetaShifted {
                a_shift,
                scale,
                alpha,
                beta,
            } => {
                if !(*scale > 0.0) || !(*alpha > 0.0) || !(*beta > 0.0) || !a_shift.is_finite() {
                    return Err(Error::validation(
                        "beta_shifted requires scale, alpha, beta > 0",
                    ));
                }
            }
            SpectrumSpec::Explicit { values } => {
                SpectrumVector::new(values.clone())?;
                if values.len() != self.p {
                    return Err(Error::validation(format!(
                        "explicit spectrum has {} entries, expected p = {}",
                        values.len(),
                        self.p
                    )));
                }
            }
            SpectrumSpec::Clustered {
                locations,
                multiplicities,
            } => {
                if locations.len() != multiplicities.len()
                    || multiplicities.iter().sum::<usize>() != self.p
                {
                    return Err(Error::validation(
                        "clustered multiplicities must match locations and sum to p",
                    ));
                }
                if locations.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::validation(
                        "clustered locations must be strictly increasing",
                    ));
                }
            }
        }
        if let VariateLaw::StudentT { df } = self.variate_law {
            if !(df > 2.0) {
                return Err(Error::validation(
                    "student_t requires df > 2 for a finite variance",
                ));
            }
        }
        Ok(())
    }

    pub fn ctx(&self) -> Result<ConcentrationContext> {
        ConcentrationContext::new(self.n, self.p)
    }

    /// Materializes the population spectrum at dimension p.
    pub fn population_spectrum(&self) -> Result<SpectrumVector> {
        match &self.spectrum_spec {
            SpectrumSpec::BetaShifted {
                a_shift,
                scale,
                alpha,
                beta,
            } => make_beta_spectrum(*a_shift, *scale, *alpha, *beta, self.p),
            SpectrumSpec::Explicit { values } => SpectrumVector::new(values.clone()),
            SpectrumSpec::Clustered {
                locations,
                multiplicities,
            } => {
                let mut v = Vec::with_capacity(self.p);
                for (&g, &k) in locations.iter().zip(multiplicities) {
                    v.extend(std::iter::repeat(g).take(k));
                }
                SpectrumVector::new(v)
            }
        }
    }
}

/// Aggregate output of one experiment. All map keys are estimator names;
/// PCA entries are keyed `basis:q`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub per_estimator_mse: BTreeMap<String, f64>,
    pub prial: BTreeMap<String, f64>,
    pub pca_rmse: BTreeMap<String, f64>,
    pub replication_count: usize,
    pub elapsed_seconds: f64,
}

impl SimulationReport {
    fn empty(replication_count: usize) -> Self {
        Self {
            per_estimator_mse: BTreeMap::new(),
            prial: BTreeMap::new(),
            pca_rmse: BTreeMap::new(),
            replication_count,
            elapsed_seconds: 0.0,
        }
    }
}

/// Fixed-point quantiles of the shifted, rescaled Beta law:
/// `tau_i = a_shift + scale * BetaQuantile(alpha, beta, (i-0.5)/p)`.
pub fn make_beta_spectrum(
    a_shift: f64,
    scale: f64,
    alpha: f64,
    beta: f64,
    p: usize,
) -> Result<SpectrumVector> {
    if p == 0 {
        return Err(Error::validation("p must be at least 1"));
    }
    let dist = Beta::new(alpha, beta)
        .map_err(|e| Error::validation(format!("invalid Beta parameters: {e}")))?;
    let values: Vec<f64> = (1..=p)
        .map(|i| a_shift + scale * dist.inverse_cdf((i as f64 - 0.5) / p as f64))
        .collect();
    SpectrumVector::new(values)
}

/// splitmix64-style counter mix: every replication owns an independent seed
/// regardless of evaluation order or thread count.
pub fn mix_seed(master: u64, replication: u64) -> u64 {
    let mut z = master
        .wrapping_add(replication.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_matrix(n: usize, p: usize, law: &VariateLaw, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match law {
        VariateLaw::Gaussian => {
            let normal = rand_distr::StandardNormal;
            Ok(DMatrix::from_fn(n, p, |_, _| {
                RandDistribution::<f64>::sample(&normal, &mut rng)
            }))
        }
        VariateLaw::StudentT { df } => {
            let t = rand_distr::StudentT::new(*df)
                .map_err(|e| Error::validation(format!("invalid t distribution: {e}")))?;
            let unit_scale = ((df - 2.0) / df).sqrt();
            Ok(DMatrix::from_fn(n, p, |_, _| {
                unit_scale * RandDistribution::<f64>::sample(&t, &mut rng)
            }))
        }
    }
}

/// One draw of the model: `Y = X diag(sqrt(tau))`, `S = (1/n) Y'Y`, returned
/// as the ascending eigensystem of S together with the data matrix.
pub fn simulate_sample(
    tau: &SpectrumVector,
    ctx: &ConcentrationContext,
    law: &VariateLaw,
    seed: u64,
) -> Result<(Eigensystem, DMatrix<f64>)> {
    let (n, p) = (ctx.n, ctx.p);
    if tau.len() != p {
        return Err(Error::validation(format!(
            "spectrum has {} entries, expected p = {p}",
            tau.len()
        )));
    }
    let x = draw_matrix(n, p, law, seed)?;
    let mut y = x;
    for (j, &t) in tau.values().iter().enumerate() {
        let sd = t.sqrt();
        for i in 0..n {
            y[(i, j)] *= sd;
        }
    }
    let s = y.transpose() * &y / n as f64;
    let se = s.symmetric_eigen();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let lambda = SpectrumVector::new(idx.iter().map(|&i| se.eigenvalues[i].max(0.0)).collect())?;
    let mut u = DMatrix::zeros(p, p);
    for (col, &i) in idx.iter().enumerate() {
        u.set_column(col, &se.eigenvectors.column(i));
    }
    Ok((Eigensystem::new(lambda, u, *ctx)?, y))
}

/// Eigenvalue estimators compared by [`run_eigenvalue_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenEstimator {
    /// The raw sample eigenvalues.
    Sample,
    /// Lawley bias correction plus isotonic regression.
    Lawley,
    /// The nonlinear least-squares inversion of the quantile map.
    Quest,
    /// The population spectrum itself (diagnostic: MSE must be zero).
    Truth,
}

impl EigenEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            EigenEstimator::Sample => "sample",
            EigenEstimator::Lawley => "lawley",
            EigenEstimator::Quest => "quest",
            EigenEstimator::Truth => "truth",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sample" => Ok(EigenEstimator::Sample),
            "lawley" => Ok(EigenEstimator::Lawley),
            "quest" => Ok(EigenEstimator::Quest),
            "truth" => Ok(EigenEstimator::Truth),
            other => Err(Error::validation(format!(
                "unknown estimator '{other}' (expected sample, lawley, quest, or truth)"
            ))),
        }
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    let p = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / p
}

/// Runs replications in parallel and aggregates in fixed replication-index
/// order, so the report is bitwise identical for any worker count.
fn run_replications<T, F>(design: &SimulationDesign, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let master = design.master_seed.ok_or_else(|| {
        Error::validation("design has no master_seed; pass one (e.g. --seed) before running")
    })?;
    let results: Vec<Result<T>> = (0..design.replications)
        .into_par_iter()
        .map(|r| f(r, mix_seed(master, r as u64)))
        .collect();
    let mut out = Vec::with_capacity(design.replications);
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(v) => out.push(v),
            Err(e) if design.allow_failures => {
                eprintln!("replication {r} failed and was dropped: {e}");
            }
            Err(e) => {
                return Err(Error::solver(
                    format!("replication {r} failed: {e}"),
                    f64::NAN,
                ))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::validation("all replications failed"));
    }
    Ok(out)
}

/// Mean of `(1/p) sum (estimate_i - tau_i)^2` over replications, per
/// estimator.
pub fn run_eigenvalue_experiment(
    design: &SimulationDesign,
    estimators: &[EigenEstimator],
) -> Result<SimulationReport> {
    design.validate()?;
    if estimators.is_empty() {
        return Err(Error::validation("at least one estimator required"));
    }
    let started = Instant::now();
    let ctx = design.ctx()?;
    let tau = design.population_spectrum()?;
    let opts = EstimationOptions::default();

    let per_rep = run_replications(design, |_r, seed| {
        let (eig, _) = simulate_sample(&tau, &ctx, &design.variate_law, seed)?;
        let lambda = &eig.eigenvalues;
        let mut row = Vec::with_capacity(estimators.len());
        for est in estimators {
            let estimate: Vec<f64> = match est {
                EigenEstimator::Sample => lambda.values().to_vec(),
                EigenEstimator::Lawley => lawley_corrected(lambda, &ctx)?.into_values(),
                EigenEstimator::Quest => {
                    estimate_spectrum(lambda, &ctx, &opts)?.spectrum.into_values()
                }
                EigenEstimator::Truth => tau.values().to_vec(),
            };
            row.push(mse(&estimate, tau.values()));
        }
        Ok(row)
    })?;

    let count = per_rep.len();
    let mut report = SimulationReport::empty(count);
    for (k, est) in estimators.iter().enumerate() {
        let mean = per_rep.iter().map(|row| row[k]).sum::<f64>() / count as f64;
        report.per_estimator_mse.insert(est.name().to_string(), mean);
    }
    report.elapsed_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// PRIAL of nonlinear and oracle shrinkage against the linear benchmark,
/// all losses measured as squared Frobenius distance to the finite-sample
/// optimum.
pub fn run_shrinkage_experiment(design: &SimulationDesign) -> Result<SimulationReport> {
    design.validate()?;
    let started = Instant::now();
    let ctx = design.ctx()?;
    let tau = design.population_spectrum()?;
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(tau.values()));
    let opts = EstimationOptions::default();
    // The exact transform of the true spectrum, shared across replications.
    let truth_solver = StieltjesSolver::new(&tau, ctx)?;

    struct RepLosses {
        linear: f64,
        nonlinear: f64,
        oracle: f64,
    }

    let per_rep = run_replications(design, |_r, seed| {
        let (eig, data) = simulate_sample(&tau, &ctx, &design.variate_law, seed)?;
        let d_star = finite_sample_optimal_d(&eig.eigenvectors, &sigma)?;
        let s_star = {
            let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&d_star));
            let m = &eig.eigenvectors * diag * eig.eigenvectors.transpose();
            (&m + m.transpose()) * 0.5
        };

        let linear = linear_shrinkage(&data)?;
        let tau_hat = estimate_spectrum(&eig.eigenvalues, &ctx, &opts)?.spectrum;
        let nonlinear = nonlinear_shrinkage(&eig, &tau_hat)?;

        // Oracle: the true spectrum and its exact transform in place of the
        // estimates.
        let zero_tol = 1e-12 * eig.eigenvalues.mean();
        let support = truth_solver.support();
        let mut mbreve = Vec::new();
        for &l in eig.eigenvalues.values().iter().filter(|&&l| l > zero_tol) {
            mbreve.push(truth_solver.m_at(support.snap(l, 1e-6))?);
        }
        let mbar0 = if eig.eigenvalues.values().iter().any(|&l| l <= zero_tol) {
            crate::mp::solve_mbar_at_zero(&tau, &ctx)?
        } else {
            0.0
        };
        let d_or = oracle_d(&eig.eigenvalues, &ctx, &mbreve, mbar0)?;
        let s_or = {
            let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&d_or));
            let m = &eig.eigenvectors * diag * eig.eigenvectors.transpose();
            (&m + m.transpose()) * 0.5
        };

        let sq = |m: &DMatrix<f64>| -> Result<f64> {
            let l = frobenius_loss(m, &s_star)?;
            Ok(l * l)
        };
        Ok(RepLosses {
            linear: sq(&linear.matrix)?,
            nonlinear: sq(&nonlinear.matrix)?,
            oracle: sq(&s_or)?,
        })
    })?;

    let count = per_rep.len();
    let linear: Vec<f64> = per_rep.iter().map(|r| r.linear).collect();
    let nonlinear: Vec<f64> = per_rep.iter().map(|r| r.nonlinear).collect();
    let oracle: Vec<f64> = per_rep.iter().map(|r| r.oracle).collect();

    let mut report = SimulationReport::empty(count);
    report
        .prial
        .insert("linear".into(), crate::shrinkage::prial(&linear, &linear)?);
    report.prial.insert(
        "nonlinear".into(),
        crate::shrinkage::prial(&nonlinear, &linear)?,
    );
    report
        .prial
        .insert("oracle".into(), crate::shrinkage::prial(&oracle, &linear)?);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    report.per_estimator_mse.insert("linear".into(), mean(&linear));
    report
        .per_estimator_mse
        .insert("nonlinear".into(), mean(&nonlinear));
    report.per_estimator_mse.insert("oracle".into(), mean(&oracle));
    report.elapsed_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// RMSE of the retained-component count around the `d*`-based truth, per
/// estimator basis and target fraction. Bases: the sample eigenvalues, the
/// population eigenvalues, nonlinear shrinkage, and the optimum itself.
pub fn run_pca_experiment(
    design: &SimulationDesign,
    targets: &[f64],
) -> Result<SimulationReport> {
    design.validate()?;
    if targets.is_empty() || targets.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::validation("targets must lie strictly in (0, 1)"));
    }
    let started = Instant::now();
    let ctx = design.ctx()?;
    let tau = design.population_spectrum()?;
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(tau.values()));
    let opts = EstimationOptions::default();

    const BASES: [&str; 4] = ["sample", "population", "shrinkage", "optimal"];

    let per_rep = run_replications(design, |_r, seed| {
        let (eig, _) = simulate_sample(&tau, &ctx, &design.variate_law, seed)?;
        let d_star = finite_sample_optimal_d(&eig.eigenvectors, &sigma)?;
        let truth_curve = explained_fraction_curve(&d_star, CurveBasis::FiniteSampleOptimal)?;

        let tau_hat = estimate_spectrum(&eig.eigenvalues, &ctx, &opts)?.spectrum;
        let d_hat = nonlinear_shrinkage(&eig, &tau_hat)?.d;

        // Zero sample eigenvalues cannot enter a positive-weight curve; the
        // sample basis uses the positive part with the zero block excluded,
        // which can only understate its retention counts.
        let positive: Vec<f64> = eig
            .eigenvalues
            .values()
            .iter()
            .copied()
            .filter(|&l| l > 0.0)
            .collect();
        let sample_curve = explained_fraction_curve(&positive, CurveBasis::Sample)?;
        let population_curve = explained_fraction_curve(tau.values(), CurveBasis::Population)?;
        let shrinkage_curve = explained_fraction_curve(&d_hat, CurveBasis::Shrinkage)?;

        let mut errors = Vec::with_capacity(BASES.len() * targets.len());
        for &q in targets {
            let k_true = components_to_retain(&truth_curve, q)? as f64;
            for (b, curve) in [
                &sample_curve,
                &population_curve,
                &shrinkage_curve,
                &truth_curve,
            ]
            .iter()
            .enumerate()
            {
                let k = components_to_retain(curve, q)? as f64;
                let _ = b;
                errors.push((k - k_true) * (k - k_true));
            }
        }
        Ok(errors)
    })?;

    let count = per_rep.len();
    let mut report = SimulationReport::empty(count);
    for (qi, &q) in targets.iter().enumerate() {
        for (bi, basis) in BASES.iter().enumerate() {
            let col = qi * BASES.len() + bi;
            let mean_sq = per_rep.iter().map(|row| row[col]).sum::<f64>() / count as f64;
            report
                .pca_rmse
                .insert(format!("{basis}:{q}"), mean_sq.sqrt());
        }
    }
    report.elapsed_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
