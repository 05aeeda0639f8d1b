//! Population-spectrum estimation: nonlinear least squares of the smoothed
//! sample quantiles against observed eigenvalues, a clustered variant over a
//! small number of distinct levels, and the Lawley-plus-isotonic baseline.

use crate::error::{Error, Result};
use crate::mp::SupportIntervals;
use crate::quest::{quest_quantiles, quest_quantiles_warm, QuestConfig};
use crate::spectral::{spectral_distance_p, ConcentrationContext, SpectrumVector};
use nalgebra::{DMatrix, DVector};

/// Grid resolution used while iterating. Coarser than the default model grid:
/// quantile quadrature error is well below the optimizer tolerance already,
/// and every Jacobian refresh costs one quantile evaluation per distinct
/// eigenvalue.
const OPTIMIZER_GRID_POINTS: usize = 250;

/// Full finite-difference Jacobian refresh cadence; between refreshes the
/// Jacobian is carried forward by Broyden rank-one updates.
const JACOBIAN_REFRESH_EVERY: usize = 25;

#[derive(Debug, Clone)]
pub struct EstimationOptions {
    pub max_iterations: usize,
    /// Stop when the relative objective decrease over one accepted step falls
    /// below this.
    pub objective_tolerance: f64,
    pub num_starts: usize,
    /// Box constraint: every estimated eigenvalue is kept at or above this.
    pub lower_bound: f64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            objective_tolerance: 1e-8,
            num_starts: 3,
            lower_bound: 0.0,
        }
    }
}

impl EstimationOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations must be at least 1"));
        }
        if !(self.objective_tolerance > 0.0) {
            return Err(Error::validation("objective_tolerance must be positive"));
        }
        if self.num_starts == 0 {
            return Err(Error::validation("num_starts must be at least 1"));
        }
        if !self.lower_bound.is_finite() || self.lower_bound < 0.0 {
            return Err(Error::validation("lower_bound must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Cluster sizes for the constrained variant: the spectrum is `K_j` copies of
/// the level `gamma_j`, levels strictly increasing.
#[derive(Debug, Clone)]
pub struct ClusteredSpec {
    multiplicities: Vec<usize>,
}

impl ClusteredSpec {
    pub fn new(multiplicities: Vec<usize>, p: usize) -> Result<Self> {
        if multiplicities.is_empty() || multiplicities.iter().any(|&k| k == 0) {
            return Err(Error::validation("multiplicities must be positive"));
        }
        let total: usize = multiplicities.iter().sum();
        if total != p {
            return Err(Error::validation(format!(
                "multiplicities sum to {total}, expected p = {p}"
            )));
        }
        Ok(Self { multiplicities })
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn num_levels(&self) -> usize {
        self.multiplicities.len()
    }

    pub fn p(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    /// Repeats each level by its multiplicity.
    pub fn expand(&self, levels: &[f64]) -> Result<SpectrumVector> {
        if levels.len() != self.multiplicities.len() {
            return Err(Error::validation("level count must match multiplicities"));
        }
        let mut out = Vec::with_capacity(self.p());
        for (&g, &k) in levels.iter().zip(&self.multiplicities) {
            out.extend(std::iter::repeat(g).take(k));
        }
        SpectrumVector::from_unsorted(out)
    }
}

/// An estimated spectrum with the attained least-squares objective and the
/// iteration count of the winning start.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    pub spectrum: SpectrumVector,
    pub objective: f64,
    pub iterations: usize,
    /// False when the winning run stopped at `max_iterations` without meeting
    /// the tolerance; the best iterate is still returned.
    pub converged: bool,
}

/// Least-squares discrepancy between the smoothed quantiles generated by `t`
/// and the observed eigenvalues: `(1/p) * sum_i (q_i(t) - lambda_i)^2`.
pub fn objective(
    t: &SpectrumVector,
    lambda: &SpectrumVector,
    ctx: &ConcentrationContext,
) -> Result<f64> {
    if t.len() != lambda.len() {
        return Err(Error::validation(format!(
            "length mismatch: t has {}, lambda has {}",
            t.len(),
            lambda.len()
        )));
    }
    let q = quest_quantiles(t, ctx)?;
    let d = spectral_distance_p(q.values(), lambda.values())?;
    Ok(d * d)
}

/// Shared state for one optimization run: the targets, the quadrature config,
/// and a warm support decomposition carried between evaluations.
struct Evaluator<'a> {
    lambda: &'a [f64],
    ctx: &'a ConcentrationContext,
    cfg: QuestConfig,
    hint: Option<SupportIntervals>,
    evals: usize,
}

impl<'a> Evaluator<'a> {
    fn new(lambda: &'a [f64], ctx: &'a ConcentrationContext, grid_points: usize) -> Self {
        Self {
            lambda,
            ctx,
            cfg: QuestConfig {
                grid_points_per_interval: grid_points,
            },
            hint: None,
            evals: 0,
        }
    }

    /// Quantiles of `t` and the objective value, reusing the support hint.
    fn eval(&mut self, t: &SpectrumVector) -> Result<(Vec<f64>, f64)> {
        self.evals += 1;
        let (q, support) = quest_quantiles_warm(t, self.ctx, &self.cfg, self.hint.as_ref())?;
        self.hint = Some(support);
        let p = q.len() as f64;
        let f = q
            .iter()
            .zip(self.lambda)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p;
        Ok((q, f))
    }

    /// Forward-difference Jacobian dq_i/dt_j with tied coordinates perturbed
    /// as a group and the group derivative split evenly (preserves J t = q).
    fn jacobian(&mut self, t: &SpectrumVector, q0: &[f64]) -> Result<DMatrix<f64>> {
        let p = t.len();
        let values = t.values();
        let mean = t.mean();
        let mut jac = DMatrix::zeros(p, p);
        let mut j = 0;
        while j < p {
            let mut j_end = j + 1;
            while j_end < p && values[j_end] == values[j] {
                j_end += 1;
            }
            let group = (j_end - j) as f64;
            let h = 1e-6 * values[j].max(mean);
            let mut perturbed = values.to_vec();
            for v in perturbed[j..j_end].iter_mut() {
                *v += h;
            }
            let tp = SpectrumVector::from_unsorted(perturbed)?;
            let (qh, _) = self.eval(&tp)?;
            for i in 0..p {
                let d = (qh[i] - q0[i]) / (h * group);
                for col in j..j_end {
                    jac[(i, col)] = d;
                }
            }
            j = j_end;
        }
        Ok(jac)
    }
}

struct RunResult {
    t: SpectrumVector,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Levenberg-Marquardt with a box projection at `lower_bound`, Broyden
/// rank-one Jacobian updates between full finite-difference refreshes, and
/// ascending re-sorting of iterates (the objective depends on the multiset
/// only, and sorted iterates keep the atom grouping stable).
fn run_projected_lm(
    start: SpectrumVector,
    lambda: &[f64],
    ctx: &ConcentrationContext,
    opts: &EstimationOptions,
    grid_points: usize,
) -> Result<RunResult> {
    let p = start.len();
    let mut ev = Evaluator::new(lambda, ctx, grid_points);
    let mut t = start;
    let (mut q, mut f) = ev.eval(&t)?;
    let mut jac = ev.jacobian(&t, &q)?;
    let mut since_refresh = 0usize;
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0usize;

    'outer: for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let r = DVector::from_iterator(p, q.iter().zip(lambda).map(|(a, b)| a - b));
        let g = jac.transpose() * &r;
        let jtj = jac.transpose() * &jac;

        // Inner damping loop: grow mu until a step decreases the objective.
        // Marquardt-Fletcher scaling: damp relative to the diagonal of J'J,
        // which keeps the step sane when column sensitivities span many orders
        // of magnitude (as they do near a hard edge at zero).
        let diag_floor = 1e-12 * (0..p).map(|j| jtj[(j, j)]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for j in 0..p {
                a[(j, j)] += mu * jtj[(j, j)].max(diag_floor);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu = (mu * 10.0).min(1e12);
                    continue;
                }
            };
            let candidate: Vec<f64> = t
                .values()
                .iter()
                .zip(step.iter())
                .map(|(v, d)| (v + d).max(opts.lower_bound))
                .collect();
            let t_new = SpectrumVector::from_unsorted(candidate)?;
            if t_new.is_all_zero() {
                mu = (mu * 3.0).min(1e12);
                continue;
            }
            let (q_new, f_new) = ev.eval(&t_new)?;
            if f_new < f {
                // Broyden rank-one update toward the secant condition, in the
                // multiset geometry (both iterates sorted).
                let dt = DVector::from_iterator(
                    p,
                    t_new.values().iter().zip(t.values()).map(|(a, b)| a - b),
                );
                let norm2 = dt.norm_squared();
                if norm2 > 0.0 && since_refresh < JACOBIAN_REFRESH_EVERY {
                    let dq = DVector::from_iterator(
                        p,
                        q_new.iter().zip(&q).map(|(a, b)| a - b),
                    );
                    let corr = (&dq - &jac * &dt) / norm2;
                    jac += corr * dt.transpose();
                    since_refresh += 1;
                } else {
                    q = q_new.clone();
                    t = t_new.clone();
                    jac = ev.jacobian(&t, &q)?;
                    since_refresh = 0;
                }
                let rel_drop = (f - f_new) / f.max(f64::MIN_POSITIVE);
                t = t_new;
                q = q_new;
                f = f_new;
                mu = (mu * 0.3).max(1e-14);
                accepted = true;
                if rel_drop < opts.objective_tolerance || f == 0.0 {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            mu = (mu * 3.0).min(1e12);
        }
        if !accepted {
            if since_refresh > 0 {
                // The Broyden approximation may have drifted; try once more
                // from an exact Jacobian before giving up.
                jac = ev.jacobian(&t, &q)?;
                since_refresh = 0;
                continue;
            }
            // No decrease possible along the exact linearization: a
            // (projected) stationary point within numerical resolution.
            converged = true;
            break;
        }
    }

    Ok(RunResult {
        t,
        objective: f,
        iterations,
        converged,
    })
}

/// The multi-start initial iterates, best objective wins downstream.
fn build_starts(
    lambda: &SpectrumVector,
    ctx: &ConcentrationContext,
    opts: &EstimationOptions,
) -> Result<Vec<SpectrumVector>> {
    let p = lambda.len();
    let mean = lambda.mean();
    let floor = opts.lower_bound;

    // (a) the eigenvalues, dispersion-corrected. The sample spectrum is a
    // spread-out version of the population spectrum: mean(lambda) estimates
    // mean(tau) but var(lambda) estimates var(tau) + c*mean(tau)^2, so the
    // start contracts the eigenvalues toward their mean by the
    // method-of-moments factor. Starting at population dispersion matters:
    // the objective has near-flat directions, and an over-dispersed start
    // leaves the optimizer stranded with an over-dispersed upper tail.
    let c = ctx.c();
    let var = lambda
        .values()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / p as f64;
    let contracted = |mult: f64| -> Result<SpectrumVector> {
        if var <= 0.0 {
            return Ok(lambda.clone());
        }
        let k = mult * (((var - c * mean * mean) / var).max(0.01)).sqrt();
        SpectrumVector::from_unsorted(
            lambda
                .values()
                .iter()
                .map(|&v| (mean + k * (v - mean)).max(floor.max(1e-3 * mean)))
                .collect(),
        )
    };

    let mut starts = vec![contracted(1.0)?];
    if ctx.p > ctx.n {
        // In the singular case the inversion is badly ill-posed (p parameters
        // against n informative eigenvalues) and the least-squares valley is
        // nearly flat; probing it from progressively less dispersed starts
        // gives the downstream objective contest genuinely distinct local
        // solutions instead of three routes to the same over-dispersed one.
        for mult in [0.7, 0.5] {
            if starts.len() >= opts.num_starts {
                break;
            }
            starts.push(contracted(mult)?);
        }
    }
    if starts.len() < opts.num_starts {
        starts.push(lawley_corrected(lambda, ctx)?);
    }
    if starts.len() < opts.num_starts {
        starts.push(SpectrumVector::constant(mean.max(floor), p)?);
    }
    // Beyond the canonical starts: blends of the first and the constant.
    while starts.len() < opts.num_starts {
        let k = starts.len();
        let w = (k - 2) as f64 / (opts.num_starts - 2) as f64;
        let blend: Vec<f64> = starts[0]
            .values()
            .iter()
            .map(|&v| (1.0 - w) * v + w * mean)
            .collect();
        starts.push(SpectrumVector::from_unsorted(blend)?);
    }
    // Clamp everything to the box.
    for s in starts.iter_mut() {
        if s.values().iter().any(|&v| v < floor) {
            *s = SpectrumVector::from_unsorted(
                s.values().iter().map(|&v| v.max(floor)).collect(),
            )?;
        }
    }
    Ok(starts)
}

/// Estimates the population spectrum from sample eigenvalues by inverting the
/// quantile map in least squares over `[lower_bound, inf)^p`.
pub fn estimate_spectrum(
    lambda: &SpectrumVector,
    ctx: &ConcentrationContext,
    opts: &EstimationOptions,
) -> Result<SpectrumEstimate> {
    opts.validate()?;
    if lambda.len() != ctx.p {
        return Err(Error::validation(format!(
            "expected {} eigenvalues, got {}",
            ctx.p,
            lambda.len()
        )));
    }
    if lambda.is_all_zero() {
        return Ok(SpectrumEstimate {
            spectrum: SpectrumVector::constant(0.0, lambda.len())?,
            objective: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut best: Option<RunResult> = None;
    for start in build_starts(lambda, ctx, opts)? {
        let run = run_projected_lm(start, lambda.values(), ctx, opts, OPTIMIZER_GRID_POINTS)?;
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");

    // When the residual is at the level of the coarse grid's quadrature noise,
    // the fit is effectively exact and the solution may have drifted along
    // near-flat directions of the quantile map. Polish at full resolution to
    // pull it back; statistically noisy fits never reach this regime.
    let mean = lambda.mean();
    if best.objective < 1e-8 * mean * mean {
        let fine = QuestConfig::default().grid_points_per_interval;
        let polish_opts = EstimationOptions {
            max_iterations: opts.max_iterations.max(5000),
            ..opts.clone()
        };
        let polished =
            run_projected_lm(best.t.clone(), lambda.values(), ctx, &polish_opts, fine)?;
        best = RunResult {
            t: polished.t,
            objective: polished.objective,
            iterations: best.iterations + polished.iterations,
            converged: polished.converged,
        };
    }

    Ok(SpectrumEstimate {
        spectrum: best.t,
        objective: best.objective,
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// Clustered estimation: optimizes the distinct levels directly, with the
/// strict ordering enforced by the reparameterization gamma_1 = exp(s_1),
/// gamma_{j+1} = gamma_j + exp(s_{j+1}).
pub fn estimate_clustered_spectrum(
    lambda: &SpectrumVector,
    ctx: &ConcentrationContext,
    spec: &ClusteredSpec,
    opts: &EstimationOptions,
) -> Result<Vec<f64>> {
    opts.validate()?;
    if spec.p() != lambda.len() || lambda.len() != ctx.p {
        return Err(Error::validation(
            "multiplicities, eigenvalues, and context dimension must agree",
        ));
    }
    if lambda.is_all_zero() {
        return Err(Error::validation(
            "clustered estimation needs a nonzero spectrum (levels are strictly positive)",
        ));
    }

    let m = spec.num_levels();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for gamma0 in clustered_starts(lambda, ctx, spec, opts)? {
        let s0 = levels_to_params(&gamma0);
        let (s, f) = run_clustered_lm(s0, lambda.values(), ctx, spec, opts)?;
        let gamma = params_to_levels(&s);
        if best.as_ref().map_or(true, |b| f < b.1) {
            best = Some((gamma, f));
        }
    }
    let (gamma, _) = best.expect("at least one start");
    debug_assert!(gamma.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(gamma.iter().all(|&g| g > 0.0));
    let _ = m;
    Ok(gamma)
}

fn levels_to_params(gamma: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(gamma.len());
    let mut prev = 0.0;
    for &g in gamma {
        s.push((g - prev).max(1e-12).ln());
        prev = g;
    }
    s
}

fn params_to_levels(s: &[f64]) -> Vec<f64> {
    let mut gamma = Vec::with_capacity(s.len());
    let mut acc = 0.0;
    for &si in s {
        acc += si.exp();
        gamma.push(acc);
    }
    gamma
}

fn clustered_starts(
    lambda: &SpectrumVector,
    ctx: &ConcentrationContext,
    spec: &ClusteredSpec,
    opts: &EstimationOptions,
) -> Result<Vec<Vec<f64>>> {
    // Cluster means of the plain multi-start vectors, nudged apart if ties.
    let base = build_starts(lambda, ctx, opts)?;
    let mut out = Vec::with_capacity(base.len());
    for start in base {
        let v = start.values();
        let mut gamma = Vec::with_capacity(spec.num_levels());
        let mut offset = 0usize;
        for &k in spec.multiplicities() {
            let mean = v[offset..offset + k].iter().sum::<f64>() / k as f64;
            gamma.push(mean);
            offset += k;
        }
        // Enforce strict increase and positivity.
        let scale = lambda.mean().max(1e-12);
        let mut prev = 0.0f64;
        for g in gamma.iter_mut() {
            if *g <= prev {
                *g = prev + 1e-3 * scale;
            }
            prev = *g;
        }
        out.push(gamma);
    }
    out.dedup_by(|a, b| a == b);
    Ok(out)
}

/// Unconstrained Levenberg-Marquardt in the log-increment parameterization;
/// the Jacobian is finite-differenced directly in parameter space (one
/// quantile evaluation per level).
fn run_clustered_lm(
    mut s: Vec<f64>,
    lambda: &[f64],
    ctx: &ConcentrationContext,
    spec: &ClusteredSpec,
    opts: &EstimationOptions,
) -> Result<(Vec<f64>, f64)> {
    let p = lambda.len();
    let m = s.len();
    let mut ev = Evaluator::new(lambda, ctx, OPTIMIZER_GRID_POINTS);
    let eval_params = |ev: &mut Evaluator, s: &[f64]| -> Result<(Vec<f64>, f64)> {
        let t = spec.expand(&params_to_levels(s))?;
        ev.eval(&t)
    };
    let (mut q, mut f) = eval_params(&mut ev, &s)?;
    let mut mu = 1e-3f64;

    for _ in 0..opts.max_iterations {
        // FD Jacobian in s-space.
        let mut jac = DMatrix::zeros(p, m);
        for j in 0..m {
            let h = 1e-6;
            let mut sp = s.clone();
            sp[j] += h;
            let (qh, _) = eval_params(&mut ev, &sp)?;
            for i in 0..p {
                jac[(i, j)] = (qh[i] - q[i]) / h;
            }
        }
        let r = DVector::from_iterator(p, q.iter().zip(lambda).map(|(a, b)| a - b));
        let g = jac.transpose() * &r;
        let jtj = jac.transpose() * &jac;

        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for j in 0..m {
                a[(j, j)] += mu * (1.0 + jtj[(j, j)]);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu = (mu * 10.0).min(1e12);
                    continue;
                }
            };
            // Cap the log-space step to keep exp() sane.
            let cap = 2.0;
            let s_new: Vec<f64> = s
                .iter()
                .zip(step.iter())
                .map(|(v, d)| v + d.clamp(-cap, cap))
                .collect();
            let (q_new, f_new) = eval_params(&mut ev, &s_new)?;
            if f_new < f {
                let rel_drop = (f - f_new) / f.max(f64::MIN_POSITIVE);
                s = s_new;
                q = q_new;
                f = f_new;
                mu = (mu * 0.3).max(1e-14);
                accepted = true;
                if rel_drop < opts.objective_tolerance || f == 0.0 {
                    return Ok((s, f));
                }
                break;
            }
            mu = (mu * 3.0).min(1e12);
        }
        if !accepted {
            break;
        }
    }
    Ok((s, f))
}

/// First-order Lawley bias correction followed by isotonic regression and a
/// clip at zero: `tau_i = lambda_i - (lambda_i/n) * sum_{j != i}
/// lambda_j/(lambda_i - lambda_j)`, with near-ties pooled.
pub fn lawley_corrected(
    lambda: &SpectrumVector,
    ctx: &ConcentrationContext,
) -> Result<SpectrumVector> {
    let v = lambda.values();
    let p = v.len();
    let n = ctx.n as f64;
    let tie_tol = 1e-10 * lambda.mean();

    // Pool near-ties: groups of indistinguishable eigenvalues share one level
    // and the cross terms run over the other groups only.
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for &x in v {
        match groups.last_mut() {
            Some((g, k)) if (x - *g).abs() <= tie_tol => {
                // Running mean of the pooled group.
                *g = (*g * *k as f64 + x) / (*k as f64 + 1.0);
                *k += 1;
            }
            _ => groups.push((x, 1)),
        }
    }

    let mut corrected = Vec::with_capacity(p);
    for (gi, &(x, k)) in groups.iter().enumerate() {
        let mut cross = 0.0;
        for (gj, &(y, kj)) in groups.iter().enumerate() {
            if gj != gi {
                cross += kj as f64 * y / (x - y);
            }
        }
        let value = x - x / n * cross;
        corrected.extend(std::iter::repeat(value).take(k));
    }

    let iso = isotonic_regression(&corrected);
    SpectrumVector::from_unsorted(iso.into_iter().map(|x| x.max(0.0)).collect())
}

/// L2 projection onto the cone of weakly increasing vectors
/// (pool-adjacent-violators).
pub fn isotonic_regression(values: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count) whose means are strictly forced increasing.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &x in values {
        blocks.push((x, 1));
        while blocks.len() >= 2 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 > s2 / c2 as f64 {
                blocks.pop();
                blocks.pop();
                blocks.push((s1 + s2, c1 + c2));
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, c) in blocks {
        let mean = s / c as f64;
        out.extend(std::iter::repeat(mean).take(c));
    }
    out
}
