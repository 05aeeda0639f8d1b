//! The QuEST map: from a candidate population spectrum to the limiting sample
//! spectral law it induces (support, density, CDF), its quantile function, and
//! the smoothed per-eigenvalue quantiles with a finite-difference Jacobian.

use crate::error::{Error, Result};
use crate::mp::{
    compute_support_grouped, mbar_along_interval, refresh_support, GroupedSpectrum,
    SupportIntervals,
};
use crate::spectral::{ConcentrationContext, SpectrumVector};
use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Tuning knobs for model construction.
#[derive(Debug, Clone)]
pub struct QuestConfig {
    /// Abscissae per support interval, cosine-spaced so that the square-root
    /// edge behavior of the density is resolved.
    pub grid_points_per_interval: usize,
}

impl Default for QuestConfig {
    fn default() -> Self {
        Self {
            grid_points_per_interval: 1000,
        }
    }
}

/// The limiting sample spectral law generated by a candidate spectrum:
/// support intervals, per-interval density and CDF grids, and the mass at
/// zero. CDF values include the atom at zero.
#[derive(Debug, Clone)]
pub struct SampleSpectralModel {
    pub support: SupportIntervals,
    /// Per-interval abscissae, strictly increasing within each interval.
    pub grid: Vec<Vec<f64>>,
    /// Density values of the continuous part at each abscissa.
    pub density: Vec<Vec<f64>>,
    /// CDF at each abscissa, from `mass_at_zero` up to 1.
    pub cdf: Vec<Vec<f64>>,
    pub ctx: ConcentrationContext,
    pub t: SpectrumVector,
}

impl SampleSpectralModel {
    pub fn mass_at_zero(&self) -> f64 {
        self.support.mass_at_zero
    }

    /// Total CDF value at the top of the last interval (1 up to quadrature).
    pub fn total_mass(&self) -> f64 {
        self.cdf
            .last()
            .and_then(|c| c.last())
            .copied()
            .unwrap_or(self.support.mass_at_zero)
    }

    /// Knots (u, x) of the piecewise-linear quantile function, including the
    /// atom at zero.
    fn quantile_knots(&self) -> Vec<(f64, f64)> {
        let mut knots = Vec::new();
        let mass0 = self.mass_at_zero();
        if mass0 > 0.0 {
            knots.push((0.0, 0.0));
            knots.push((mass0, 0.0));
        }
        for (xs, cs) in self.grid.iter().zip(&self.cdf) {
            for (&x, &u) in xs.iter().zip(cs) {
                knots.push((u, x));
            }
        }
        // Guard against quadrature leaving the last knot slightly short of 1.
        if let Some(&(u_last, x_last)) = knots.last() {
            if u_last < 1.0 {
                knots.push((1.0, x_last));
            }
        }
        knots
    }
}

/// Cumulative integral of a function sampled on a uniform grid, third-order
/// accurate (three-point Newton-Cotes increments).
fn cumulative_integral(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (values[0] + values[1]);
        return out;
    }
    for k in 0..n - 2 {
        out[k + 1] = out[k] + h / 12.0 * (5.0 * values[k] + 8.0 * values[k + 1] - values[k + 2]);
    }
    out[n - 1] =
        out[n - 2] + h / 12.0 * (-values[n - 3] + 8.0 * values[n - 2] + 5.0 * values[n - 1]);
    out
}

pub fn build_sample_spectral_model(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
) -> Result<SampleSpectralModel> {
    build_sample_spectral_model_with(t, ctx, &QuestConfig::default())
}

pub fn build_sample_spectral_model_with(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
    cfg: &QuestConfig,
) -> Result<SampleSpectralModel> {
    let gs = GroupedSpectrum::from_spectrum(t);
    let support = compute_support_grouped(&gs, ctx)?;
    let model = build_model_on_support(t, gs, ctx, support, cfg)?;
    refine_until_mass_checks(t, ctx, model, cfg)
}

/// Total-mass tolerance of the quadrature; a model further off than this is
/// rebuilt on a denser grid.
const MASS_TOL: f64 = 1e-3;

/// Spectra with a hard edge at zero and tiny eigenvalues just above it pack an
/// integrable near-singularity into a sliver of the support, which the default
/// per-interval grid can miss. Probability mass is the tell: rebuild with a
/// denser grid until the CDF tops out at one.
fn refine_until_mass_checks(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
    mut model: SampleSpectralModel,
    cfg: &QuestConfig,
) -> Result<SampleSpectralModel> {
    let mut points = cfg.grid_points_per_interval;
    for _ in 0..2 {
        if (model.total_mass() - 1.0).abs() <= MASS_TOL {
            break;
        }
        points *= 4;
        let support = model.support.clone();
        model = build_model_on_support(
            t,
            GroupedSpectrum::from_spectrum(t),
            ctx,
            support,
            &QuestConfig {
                grid_points_per_interval: points,
            },
        )?;
    }
    Ok(model)
}

fn build_model_on_support(
    t: &SpectrumVector,
    gs: GroupedSpectrum,
    ctx: &ConcentrationContext,
    support: SupportIntervals,
    cfg: &QuestConfig,
) -> Result<SampleSpectralModel> {
    if t.len() != ctx.p {
        return Err(Error::validation(format!(
            "spectrum has length {} but context has p = {}",
            t.len(),
            ctx.p
        )));
    }
    let c = ctx.c();
    let budget = cfg.grid_points_per_interval.max(8);
    // When the support fragments (well-separated atoms), share the point
    // budget across the intervals roughly by the mass each will carry, rather
    // than paying the full budget per fragment. Each positive atom contributes
    // its weight to the interval holding its image, approximated by
    // containment / proximity; the total-mass audit catches shortfalls.
    let points_per_interval: Vec<usize> = if support.intervals.len() <= 1 {
        vec![budget; support.intervals.len()]
    } else {
        let mut masses = vec![0.0f64; support.intervals.len()];
        for (v, w) in gs.atoms() {
            let k = support
                .intervals
                .iter()
                .position(|iv| v >= iv.lower && v <= iv.upper)
                .unwrap_or_else(|| {
                    let mut best = (0usize, f64::INFINITY);
                    for (k, iv) in support.intervals.iter().enumerate() {
                        let d = (v - iv.lower).abs().min((v - iv.upper).abs());
                        if d < best.1 {
                            best = (k, d);
                        }
                    }
                    best.0
                });
            masses[k] += w;
        }
        let total: f64 = masses.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        masses
            .iter()
            .map(|m| ((budget as f64 * m / total).round() as usize).clamp(24, budget))
            .collect()
    };

    let mut grid = Vec::with_capacity(support.intervals.len());
    let mut density = Vec::with_capacity(support.intervals.len());
    let mut cdf = Vec::with_capacity(support.intervals.len());
    let mut acc = support.mass_at_zero;

    for (iv, &n_grid) in support.intervals.iter().zip(&points_per_interval) {
        let theta_step = PI / (n_grid - 1) as f64;
        let mid = 0.5 * (iv.lower + iv.upper);
        let half = 0.5 * (iv.upper - iv.lower);
        let thetas: Vec<f64> = (0..n_grid).map(|k| k as f64 * theta_step).collect();
        // A hard edge at zero carries an integrable x^(-1/2) singularity, and
        // when the spectrum has tiny eigenvalues the density keeps violent
        // structure for several decades above it; quartic clustering
        // (x ~ theta^4) resolves that where the plain cosine map (x ~ theta^2)
        // cannot. Soft edges keep the cosine map.
        let hard_zero = iv.u_lower.is_nan();
        let (xs, jac): (Vec<f64>, Vec<f64>) = if hard_zero {
            let b = iv.upper;
            let s: Vec<f64> = thetas.iter().map(|th| 0.5 * (1.0 - th.cos())).collect();
            (
                s.iter().map(|&s| b * s * s).collect(),
                s.iter()
                    .zip(&thetas)
                    .map(|(&s, th)| b * s * th.sin())
                    .collect(),
            )
        } else {
            (
                thetas.iter().map(|th| mid - half * th.cos()).collect(),
                thetas.iter().map(|th| half * th.sin()).collect(),
            )
        };

        // Interior companion-transform values; the exact edges are stationary
        // points where the density vanishes (except an interval touching
        // zero, whose density diverges integrably at the lower edge).
        let interior = &xs[1..n_grid - 1];
        let mbars = mbar_along_interval(&gs, c, interior)?;
        let mut dens = vec![0.0; n_grid];
        for (k, m) in mbars.iter().enumerate() {
            // density of the p-by-p law: im(m)/pi = im(mbar)/(c pi)
            dens[k + 1] = (m.im / (c * PI)).max(0.0);
        }

        // Integrand in the theta variable: f(x(theta)) * dx/dtheta. Under the
        // quartic map the singular edge contributes f * dx/dtheta ~ theta -> 0,
        // so the zero endpoint value is exact there too.
        let g: Vec<f64> = jac.iter().zip(&dens).map(|(j, d)| d * j).collect();

        let cum = cumulative_integral(&g, theta_step);
        let cs: Vec<f64> = cum.iter().map(|v| acc + v).collect();
        acc = *cs.last().unwrap();

        grid.push(xs);
        density.push(dens);
        cdf.push(cs);
    }

    Ok(SampleSpectralModel {
        support,
        grid,
        density,
        cdf,
        ctx: *ctx,
        t: t.clone(),
    })
}

/// Sup-quantile of the model law: `sup { x : F(x) <= u }`.
pub fn inverse_cdf(model: &SampleSpectralModel, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::validation(format!("u = {u} outside [0, 1]")));
    }
    let knots = model.quantile_knots();
    if u < model.mass_at_zero() {
        return Ok(0.0);
    }
    // Quadrature gives a total mass only approximately equal to one; anything
    // at or beyond it maps to the top of the support.
    if let Some(&(u_last, x_last)) = knots.last() {
        if u >= u_last.min(1.0) {
            return Ok(x_last);
        }
    }
    // First knot with cdf strictly above u; the sup sits at the start of that
    // segment (this also resolves plateaus across support gaps correctly).
    for w in knots.windows(2) {
        let (u0, x0) = w[0];
        let (u1, x1) = w[1];
        if u1 > u && u >= u0 {
            if u1 == u0 {
                continue;
            }
            return Ok(x0 + (x1 - x0) * (u - u0) / (u1 - u0));
        }
    }
    Ok(knots.last().map(|&(_, x)| x).unwrap_or(0.0))
}

/// Integral of the piecewise-linear quantile function over `[lo, hi]`.
fn integrate_quantile(knots: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (u0, x0) = w[0];
        let (u1, x1) = w[1];
        if u1 <= lo || u0 >= hi || u1 == u0 {
            continue;
        }
        let a = u0.max(lo);
        let b = u1.min(hi);
        let xa = x0 + (x1 - x0) * (a - u0) / (u1 - u0);
        let xb = x0 + (x1 - x0) * (b - u0) / (u1 - u0);
        total += 0.5 * (xa + xb) * (b - a);
    }
    total
}

/// Smoothed quantiles of a prebuilt model: `q_i = p * int_{(i-1)/p}^{i/p}
/// Finv(u) du`, ascending, with the atom at zero handled analytically.
pub fn quantiles_from_model(model: &SampleSpectralModel) -> Vec<f64> {
    let p = model.ctx.p;
    let knots = model.quantile_knots();
    let pf = p as f64;
    let mass0 = model.mass_at_zero();
    (1..=p)
        .map(|i| {
            let lo = (i - 1) as f64 / pf;
            let hi = i as f64 / pf;
            if hi <= mass0 {
                0.0
            } else {
                pf * integrate_quantile(&knots, lo, hi)
            }
        })
        .collect()
}

/// The QuEST function: smoothed quantiles of the limiting sample spectral law
/// induced by candidate spectrum `t` at dimensions (n, p).
pub fn quest_quantiles(t: &SpectrumVector, ctx: &ConcentrationContext) -> Result<SpectrumVector> {
    quest_quantiles_with(t, ctx, &QuestConfig::default())
}

pub fn quest_quantiles_with(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
    cfg: &QuestConfig,
) -> Result<SpectrumVector> {
    if t.is_all_zero() {
        return SpectrumVector::constant(0.0, t.len());
    }
    let model = build_sample_spectral_model_with(t, ctx, cfg)?;
    SpectrumVector::from_unsorted(quantiles_from_model(&model))
}

/// Variant that reuses a support decomposition from a nearby spectrum (used
/// for finite-difference columns, where the perturbation is tiny and the
/// interval structure rarely reconfigures). Returns the support actually used
/// so it can seed the next call.
pub fn quest_quantiles_warm(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
    cfg: &QuestConfig,
    hint: Option<&SupportIntervals>,
) -> Result<(Vec<f64>, SupportIntervals)> {
    if t.is_all_zero() {
        return Err(Error::domain("all-zero spectrum has no spectral model"));
    }
    let gs = GroupedSpectrum::from_spectrum(t);
    let support = match hint {
        Some(h) => refresh_support(&gs, ctx, h)?,
        None => compute_support_grouped(&gs, ctx)?,
    };
    let mut model = build_model_on_support(t, gs, ctx, support, cfg)?;
    // A refreshed support can silently lock onto the wrong stationary points
    // when the spectrum moved far since the hint was recorded; a corrupted
    // decomposition loses probability mass, so audit it and rescan cold.
    if hint.is_some() && (model.total_mass() - 1.0).abs() > MASS_TOL {
        let gs = GroupedSpectrum::from_spectrum(t);
        let support = compute_support_grouped(&gs, ctx)?;
        model = build_model_on_support(t, gs, ctx, support, cfg)?;
    }
    model = refine_until_mass_checks(t, ctx, model, cfg)?;
    let mut q = quantiles_from_model(&model);
    q.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((q, model.support))
}

/// Step size for the finite-difference column of coordinate group `j`.
fn fd_step(value: f64, mean: f64) -> f64 {
    1e-6 * value.max(mean)
}

/// Finite-difference Jacobian J[i][j] ~ dq_i / dt_j. Tied coordinates are
/// perturbed together as a group (the quantiles depend on the multiset only),
/// and the group derivative is split evenly across its members, which
/// preserves the Euler identity J t = q(t).
pub fn quest_jacobian(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
    cfg: &QuestConfig,
) -> Result<DMatrix<f64>> {
    if t.is_all_zero() {
        return Err(Error::domain("all-zero spectrum has no spectral model"));
    }
    let p = t.len();
    let (q0, support) = quest_quantiles_warm(t, ctx, cfg, None)?;
    let mut jac = DMatrix::zeros(p, p);
    let mean = t.mean();
    let values = t.values();

    let mut j = 0;
    while j < p {
        // Group of tied coordinates [j, j_end).
        let mut j_end = j + 1;
        while j_end < p && values[j_end] == values[j] {
            j_end += 1;
        }
        let group_size = (j_end - j) as f64;
        let h = fd_step(values[j], mean);
        let mut perturbed = values.to_vec();
        for v in perturbed[j..j_end].iter_mut() {
            *v += h;
        }
        let tp = SpectrumVector::from_unsorted(perturbed)?;
        let (qh, _) = quest_quantiles_warm(&tp, ctx, cfg, Some(&support))?;
        for i in 0..p {
            let d = (qh[i] - q0[i]) / (h * group_size);
            for col in j..j_end {
                jac[(i, col)] = d;
            }
        }
        j = j_end;
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ctx(n: usize, p: usize) -> ConcentrationContext {
        ConcentrationContext::new(n, p).unwrap()
    }

    /// Closed-form density of the law for a point-mass population spectrum at
    /// sigma^2 = 1 and concentration c.
    fn mp_density(x: f64, c: f64) -> f64 {
        let a = (1.0 - c.sqrt()).powi(2);
        let b = (1.0 + c.sqrt()).powi(2);
        if x <= a || x >= b {
            0.0
        } else {
            ((b - x) * (x - a)).sqrt() / (2.0 * PI * x * c)
        }
    }

    /// Closed-form CDF of the continuous part by fine quadrature (oracle).
    fn mp_cdf_oracle(x: f64, c: f64) -> f64 {
        let a = (1.0 - c.sqrt()).powi(2);
        if x <= a {
            return 0.0;
        }
        let n = 40_000;
        let h = (x - a) / n as f64;
        let mut s = 0.0;
        for k in 0..n {
            let xl = a + k as f64 * h;
            s += 0.5 * h * (mp_density(xl, c) + mp_density(xl + h, c));
        }
        s
    }

    #[test]
    fn density_matches_closed_form() {
        let t = SpectrumVector::constant(1.0, 50).unwrap();
        let model = build_sample_spectral_model(&t, &ctx(100, 50)).unwrap();
        assert_eq!(model.grid.len(), 1);
        for (x, d) in model.grid[0].iter().zip(&model.density[0]) {
            assert!((d - mp_density(*x, 0.5)).abs() < 1e-6, "x = {x}");
        }
    }

    #[test]
    fn cdf_reaches_one() {
        let t = SpectrumVector::new(vec![0.5, 1.0, 1.5, 2.0, 8.0]).unwrap();
        let model = build_sample_spectral_model(&t, &ctx(10, 5)).unwrap();
        assert!((model.total_mass() - 1.0).abs() < 1e-6);
        // Monotone CDF.
        for cs in &model.cdf {
            for w in cs.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }

    #[test]
    fn singular_case_mass_at_zero_in_cdf() {
        let t = SpectrumVector::constant(1.0, 200).unwrap();
        let model = build_sample_spectral_model(&t, &ctx(100, 200)).unwrap();
        assert_eq!(model.mass_at_zero(), 0.5);
        assert_eq!(model.cdf[0][0], 0.5);
        assert!((model.total_mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverse_cdf_basics() {
        let t = SpectrumVector::constant(1.0, 200).unwrap();
        let model = build_sample_spectral_model(&t, &ctx(100, 200)).unwrap();
        assert_eq!(inverse_cdf(&model, 0.3).unwrap(), 0.0);
        let top = inverse_cdf(&model, 1.0).unwrap();
        assert_relative_eq!(top, model.support.upper_edge(), max_relative = 1e-6);
        assert!(inverse_cdf(&model, 1.5).is_err());
    }

    #[test]
    fn inverse_cdf_median_matches_oracle() {
        let t = SpectrumVector::constant(1.0, 50).unwrap();
        let model = build_sample_spectral_model(&t, &ctx(100, 50)).unwrap();
        let med = inverse_cdf(&model, 0.5).unwrap();
        // Numeric inversion of the closed-form CDF by bisection.
        let (mut lo, mut hi) = (0.1, 2.9);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mp_cdf_oracle(mid, 0.5) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((med - 0.5 * (lo + hi)).abs() < 1e-4, "median {med}");
    }

    #[test]
    fn quantiles_all_zero_spectrum() {
        let t = SpectrumVector::constant(0.0, 6).unwrap();
        let q = quest_quantiles(&t, &ctx(12, 6)).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantiles_match_mp_bin_averages() {
        // p-bin averages of the closed-form quantile function.
        let (n, p) = (100usize, 50usize);
        let t = SpectrumVector::constant(1.0, p).unwrap();
        let q = quest_quantiles(&t, &ctx(n, p)).unwrap();
        let c = 0.5f64;
        // Tabulate the closed-form CDF once on a fine grid, then invert by
        // binary search + interpolation.
        let a = (1.0 - c.sqrt()).powi(2);
        let b = (1.0 + c.sqrt()).powi(2);
        let nn = 400_000usize;
        let h = (b - a) / nn as f64;
        let mut xs = Vec::with_capacity(nn + 1);
        let mut cdf = Vec::with_capacity(nn + 1);
        xs.push(a);
        cdf.push(0.0);
        let mut s = 0.0;
        for k in 0..nn {
            let xl = a + k as f64 * h;
            s += 0.5 * h * (mp_density(xl, c) + mp_density(xl + h, c));
            xs.push(xl + h);
            cdf.push(s);
        }
        let total = s;
        let finv = |u: f64| -> f64 {
            let u = (u * total).min(total);
            let j = cdf.partition_point(|&v| v < u).min(nn);
            if j == 0 {
                return xs[0];
            }
            let (u0, u1) = (cdf[j - 1], cdf[j]);
            if u1 == u0 {
                return xs[j];
            }
            xs[j - 1] + (xs[j] - xs[j - 1]) * (u - u0) / (u1 - u0)
        };
        for (i, &qi) in q.values().iter().enumerate() {
            // Oracle: integrate Finv over the bin by quadrature on u.
            let lo = i as f64 / p as f64;
            let hi = (i + 1) as f64 / p as f64;
            let m = 200;
            let hu = (hi - lo) / m as f64;
            let mut acc = 0.0;
            for k in 0..=m {
                let w = if k == 0 || k == m { 0.5 } else { 1.0 };
                acc += w * finv(lo + k as f64 * hu);
            }
            let oracle = acc * hu * p as f64;
            assert!((qi - oracle).abs() < 1e-3, "bin {i}: {qi} vs {oracle}");
        }
    }

    #[test]
    fn quantiles_singular_case_zero_bins() {
        let t = SpectrumVector::constant(1.0, 200).unwrap();
        let q = quest_quantiles(&t, &ctx(100, 200)).unwrap();
        let zeros = q.values().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 100);
        assert!(q.values()[100] > 0.0);
    }

    #[test]
    fn first_moment_preserved() {
        let t = SpectrumVector::new((1..=40).map(|i| 0.2 + i as f64 / 8.0).collect()).unwrap();
        for context in [ctx(80, 40), ctx(20, 40)] {
            let q = quest_quantiles(&t, &context).unwrap();
            assert_relative_eq!(q.mean(), t.mean(), max_relative = 1e-3);
        }
    }

    #[test]
    fn positive_homogeneity() {
        let t = SpectrumVector::new(vec![0.5, 1.0, 2.0, 3.0, 7.0]).unwrap();
        let context = ctx(10, 5);
        let alpha = 3.0;
        let ta = SpectrumVector::new(t.values().iter().map(|v| alpha * v).collect()).unwrap();
        let q = quest_quantiles(&t, &context).unwrap();
        let qa = quest_quantiles(&ta, &context).unwrap();
        for (x, y) in q.values().iter().zip(qa.values()) {
            assert_relative_eq!(alpha * x, *y, max_relative = 1e-6);
        }
    }

    #[test]
    fn jacobian_euler_identity() {
        let p = 10;
        let t = SpectrumVector::new((1..=p).map(|i| i as f64 / 10.0).collect()).unwrap();
        let context = ctx(20, p);
        let cfg = QuestConfig::default();
        let jac = quest_jacobian(&t, &context, &cfg).unwrap();
        let q = quest_quantiles(&t, &context).unwrap();
        let tv = nalgebra::DVector::from_column_slice(t.values());
        let jt = &jac * tv;
        for i in 0..p {
            assert_relative_eq!(jt[i], q.values()[i], max_relative = 1e-3);
        }
    }

    #[test]
    fn jacobian_forward_difference_column() {
        let p = 6;
        let t = SpectrumVector::new((1..=p).map(|i| i as f64).collect()).unwrap();
        let context = ctx(12, p);
        let cfg = QuestConfig::default();
        let jac = quest_jacobian(&t, &context, &cfg).unwrap();
        let j = 2;
        let h = 1e-6 * t.values()[j].max(t.mean());
        let mut tp = t.values().to_vec();
        tp[j] += h;
        let q0 = quest_quantiles(&t, &context).unwrap();
        let q1 = quest_quantiles(&SpectrumVector::new(tp).unwrap(), &context).unwrap();
        for i in 0..p {
            let fd = (q1.values()[i] - q0.values()[i]) / h;
            assert!((jac[(i, j)] - fd).abs() < 1e-4 * (1.0 + fd.abs()));
        }
    }
}
