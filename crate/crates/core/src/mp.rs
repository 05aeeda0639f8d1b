//! Solvers for the discretized Marchenko-Pastur fixed-point equation: the
//! Stieltjes transform at complex and real arguments, the support of the
//! limiting sample spectral law, and the companion-transform value at zero
//! used by the singular-case shrinkage branch.
//!
//! Everything works on the companion transform `mbar` (the Stieltjes transform
//! of the n-by-n product matrix law), which satisfies
//!
//! ```text
//! mbar = -1 / (z - c * (1/p) * sum_i t_i / (1 + t_i * mbar))
//! ```
//!
//! and maps back to the p-by-p law via `m = (mbar - (c-1)/z) / c`.

use crate::error::{Error, Result};
use crate::spectral::{ConcentrationContext, SpectrumVector};
use num_complex::Complex64;

/// Entries below `ZERO_REL_TOL * mean(t)` are treated as exact zeros.
pub const ZERO_REL_TOL: f64 = 1e-12;

const FP_MAX_ITER: usize = 10_000;
const FP_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 100;

/// A spectrum with repeated values grouped into weighted atoms, which turns
/// each transform evaluation from O(p) into O(#distinct).
#[derive(Debug, Clone)]
pub struct GroupedSpectrum {
    /// Distinct positive atom locations, ascending.
    values: Vec<f64>,
    /// Probability weight of each positive atom (multiplicity / p).
    weights: Vec<f64>,
    /// Fraction of entries at (numerical) zero.
    zero_weight: f64,
    p: usize,
    mean: f64,
}

impl GroupedSpectrum {
    pub fn from_spectrum(t: &SpectrumVector) -> Self {
        let p = t.len();
        let mean = t.mean();
        let zero_tol = ZERO_REL_TOL * mean;
        let mut values = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut zeros = 0usize;
        for &v in t.values() {
            if v <= zero_tol {
                zeros += 1;
            } else if values.last() == Some(&v) {
                *counts.last_mut().unwrap() += 1;
            } else {
                values.push(v);
                counts.push(1);
            }
        }
        let weights = counts.iter().map(|&k| k as f64 / p as f64).collect();
        Self {
            values,
            weights,
            zero_weight: zeros as f64 / p as f64,
            p,
            mean,
        }
    }

    pub fn zero_weight(&self) -> f64 {
        self.zero_weight
    }

    /// Positive atoms as (location, weight) pairs, ascending in location.
    pub(crate) fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn has_positive_mass(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.mean.max(1.0))
    }

    /// (1/p) sum_i t_i / (1 + t_i m), complex argument.
    fn a(&self, m: Complex64) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            s += w * v / (1.0 + v * m);
        }
        s
    }

    /// Derivative of [`Self::a`]: -(1/p) sum_i t_i^2 / (1 + t_i m)^2.
    fn a_prime(&self, m: Complex64) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            let d = 1.0 + v * m;
            s -= w * v * v / (d * d);
        }
        s
    }

    fn a_real(&self, u: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| w * v / (1.0 + v * u))
            .sum()
    }

    fn a_prime_real(&self, u: f64) -> f64 {
        -self
            .values
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| {
                let d = 1.0 + v * u;
                w * v * v / (d * d)
            })
            .sum::<f64>()
    }
}

/// The inverse map of the companion transform on the real line:
/// `x(u) = -1/u + c * a(u)`. Real u outside the poles `{-1/t_i}`.
fn x_of_u(gs: &GroupedSpectrum, c: f64, u: f64) -> f64 {
    -1.0 / u + c * gs.a_real(u)
}

fn x_prime_of_u(gs: &GroupedSpectrum, c: f64, u: f64) -> f64 {
    1.0 / (u * u) + c * gs.a_prime_real(u)
}

/// One support interval of the continuous part of the law, with the companion
/// transform values at its edges (stationary points of `x(u)`, used to bracket
/// real-line evaluations in the adjoining gaps). `u_lower` is NaN when the
/// interval touches zero (the p = n boundary case, which has no stationary
/// point).
#[derive(Debug, Clone)]
pub struct SupportInterval {
    pub lower: f64,
    pub upper: f64,
    pub u_lower: f64,
    pub u_upper: f64,
}

#[derive(Debug, Clone)]
pub struct SupportIntervals {
    pub intervals: Vec<SupportInterval>,
    pub mass_at_zero: f64,
}

impl SupportIntervals {
    pub fn contains(&self, x: f64) -> bool {
        self.intervals
            .iter()
            .any(|iv| x >= iv.lower && x <= iv.upper)
    }

    pub fn lower_edge(&self) -> f64 {
        self.intervals.first().map(|iv| iv.lower).unwrap_or(0.0)
    }

    pub fn upper_edge(&self) -> f64 {
        self.intervals.last().map(|iv| iv.upper).unwrap_or(0.0)
    }

    /// Clamps x onto the support if it lies within `rel_tol * upper_edge` of
    /// an edge; otherwise returns x unchanged.
    pub fn snap(&self, x: f64, rel_tol: f64) -> f64 {
        let tol = rel_tol * self.upper_edge();
        for iv in &self.intervals {
            if x >= iv.lower - tol && x < iv.lower {
                return iv.lower;
            }
            if x > iv.upper && x <= iv.upper + tol {
                return iv.upper;
            }
        }
        x
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let flo = f(lo);
    debug_assert!(flo.signum() != f(hi).signum() || flo == 0.0);
    let lo_sign = flo.signum();
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid).signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Computes the support of the limiting sample spectral law for the candidate
/// spectrum `t` at concentration p/n, via stationary points of `x(u)` between
/// consecutive poles of the companion transform's inverse map.
pub fn compute_support(t: &SpectrumVector, ctx: &ConcentrationContext) -> Result<SupportIntervals> {
    let gs = GroupedSpectrum::from_spectrum(t);
    compute_support_grouped(&gs, ctx)
}

pub fn compute_support_grouped(
    gs: &GroupedSpectrum,
    ctx: &ConcentrationContext,
) -> Result<SupportIntervals> {
    if !gs.has_positive_mass() {
        return Err(Error::domain(
            "support is undefined for an all-zero spectrum",
        ));
    }
    let c = ctx.c();
    let mass_at_zero = (1.0 - ctx.n as f64 / ctx.p as f64).max(gs.zero_weight).max(0.0);
    // Number of positive entries versus n decides which outer branch carries
    // the lower support edge.
    let p_plus = ((1.0 - gs.zero_weight) * gs.p as f64).round() as i64;
    let n = ctx.n as i64;

    let xp = |u: f64| x_prime_of_u(gs, c, u);
    let k = gs.values.len();
    let s_min = gs.values[0];
    let s_max = gs.values[k - 1];

    // Edge list as (x, u, is_lower). Assembled ascending in x afterwards.
    let mut edges: Vec<(f64, f64, bool)> = Vec::new();

    // Upper edge: unique stationary point in (-1/s_max, 0).
    {
        let pole = -1.0 / s_max;
        // March from the zero end (where x' > 0) toward the pole (x' -> -inf).
        let mut hi = pole * 1e-9; // close to 0^-
        while xp(hi) <= 0.0 {
            hi *= 0.5;
            if hi.abs() < 1e-300 {
                return Err(Error::solver("no stationary point near zero", f64::NAN));
            }
        }
        let mut lo = pole + (hi - pole) * 1e-12;
        if xp(lo) > 0.0 {
            // Extremely close to the pole and still positive: tighten.
            while xp(lo) > 0.0 {
                lo = pole + (lo - pole) * 1e-3;
            }
        }
        let u = bisect(xp, lo, hi, 200);
        edges.push((x_of_u(gs, c, u), u, false));
    }

    // Lower edge.
    if p_plus > n {
        // Positive branch: u^2 x'(u) decreases from 1, single root.
        let mut hi = 1.0 / s_max;
        while xp(hi) > 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::solver("no stationary point on (0, inf)", f64::NAN));
            }
        }
        let mut lo = hi / 2.0;
        while xp(lo) <= 0.0 {
            lo *= 0.5;
        }
        let u = bisect(xp, lo, hi, 200);
        edges.push((x_of_u(gs, c, u), u, true));
    } else if p_plus < n {
        // Branch left of the most negative pole.
        let pole = -1.0 / s_min;
        let mut lo = pole * 2.0;
        while xp(lo) <= 0.0 {
            lo *= 2.0;
            if lo < -1e300 {
                return Err(Error::solver("no stationary point on (-inf, pole)", f64::NAN));
            }
        }
        let mut hi = pole + (lo - pole) * 1e-12;
        while xp(hi) > 0.0 {
            hi = pole + (hi - pole) * 1e-3;
        }
        let u = bisect(xp, lo, hi, 200);
        edges.push((x_of_u(gs, c, u).max(0.0), u, true));
    } else {
        // p_plus == n: the continuous support extends down to zero.
        edges.push((0.0, f64::NAN, true));
    }

    // Interior gaps: scan each between-pole interval for an x' > 0 stretch.
    let samples = 64;
    for j in 0..k.saturating_sub(1) {
        let left = -1.0 / gs.values[j];
        let right = -1.0 / gs.values[j + 1];
        let width = right - left;
        let mut prev_u = left + width * 1e-12;
        let mut prev_f = xp(prev_u);
        let mut roots: Vec<f64> = Vec::new();
        for i in 1..=samples {
            let frac = 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / samples as f64).cos());
            let u = if i == samples {
                right - width * 1e-12
            } else {
                left + width * frac
            };
            let f = xp(u);
            if prev_f.signum() != f.signum() {
                roots.push(bisect(xp, prev_u, u, 200));
            }
            prev_u = u;
            prev_f = f;
        }
        // Roots delimit increasing stretches; each consecutive (+)-stretch
        // (r_a, r_b) maps to the spectral gap (x(r_a), x(r_b)).
        let mut i = 0;
        while i + 1 < roots.len() {
            let ua = roots[i];
            let ub = roots[i + 1];
            if xp(0.5 * (ua + ub)) > 0.0 {
                edges.push((x_of_u(gs, c, ua), ua, false)); // upper edge of interval below
                edges.push((x_of_u(gs, c, ub), ub, true)); // lower edge of interval above
                i += 2;
            } else {
                i += 1;
            }
        }
    }

    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Alternating lower/upper pairs.
    let mut intervals = Vec::new();
    let mut iter = edges.into_iter();
    loop {
        match (iter.next(), iter.next()) {
            (Some(lo), Some(hi)) => {
                if !lo.2 || hi.2 {
                    return Err(Error::solver(
                        "support edge assembly produced non-alternating edges",
                        f64::NAN,
                    ));
                }
                if hi.0 > lo.0 {
                    intervals.push(SupportInterval {
                        lower: lo.0,
                        upper: hi.0,
                        u_lower: lo.1,
                        u_upper: hi.1,
                    });
                }
            }
            (None, _) => break,
            (Some(_), None) => {
                return Err(Error::solver("odd number of support edges", f64::NAN));
            }
        }
    }
    Ok(SupportIntervals {
        intervals,
        mass_at_zero,
    })
}

/// Refreshes a support decomposition after a small perturbation of the
/// spectrum by polishing each stored stationary point, without a full rescan.
/// Falls back to the full scan when the structure is no longer consistent.
pub fn refresh_support(
    gs: &GroupedSpectrum,
    ctx: &ConcentrationContext,
    hint: &SupportIntervals,
) -> Result<SupportIntervals> {
    let c = ctx.c();
    let xp = |u: f64| x_prime_of_u(gs, c, u);
    let mut intervals = Vec::with_capacity(hint.intervals.len());
    for iv in &hint.intervals {
        let polish = |u0: f64| -> Option<f64> {
            if u0.is_nan() {
                return Some(f64::NAN);
            }
            // Bracket around the old stationary point, then bisect.
            let w = u0.abs() * 1e-4 + 1e-300;
            let mut lo = u0 - w;
            let mut hi = u0 + w;
            for _ in 0..40 {
                if xp(lo).signum() != xp(hi).signum() {
                    return Some(bisect(xp, lo, hi, 120));
                }
                lo -= w;
                hi += w;
            }
            None
        };
        match (polish(iv.u_lower), polish(iv.u_upper)) {
            (Some(ul), Some(uu)) => {
                let lower = if ul.is_nan() { 0.0 } else { x_of_u(gs, c, ul).max(0.0) };
                let upper = x_of_u(gs, c, uu);
                if upper <= lower {
                    return compute_support_grouped(gs, ctx);
                }
                intervals.push(SupportInterval {
                    lower,
                    upper,
                    u_lower: ul,
                    u_upper: uu,
                });
            }
            _ => return compute_support_grouped(gs, ctx),
        }
    }
    let mass_at_zero = (1.0 - ctx.n as f64 / ctx.p as f64).max(gs.zero_weight).max(0.0);
    Ok(SupportIntervals {
        intervals,
        mass_at_zero,
    })
}

/// Fixed-point iteration for the companion transform at `z` in the upper half
/// plane, with damping on oscillation and a Newton polish.
fn solve_mbar_complex(gs: &GroupedSpectrum, c: f64, z: Complex64) -> Result<Complex64> {
    let mut m = -1.0 / z;
    let mut prev_res = f64::INFINITY;
    let mut damping = 1.0;
    let scale = gs.scale();
    for _ in 0..FP_MAX_ITER {
        let next = -1.0 / (z - c * gs.a(m));
        let res = (next - m).norm();
        if res > prev_res {
            damping = 0.5;
        }
        m = m + damping * (next - m);
        if m.im < 0.0 {
            m = Complex64::new(m.re, 1e-30 * scale.recip());
        }
        if res < FP_TOL * m.norm().max(1.0) {
            break;
        }
        prev_res = res;
    }
    // Newton polish on G(m) = m (z - c a(m)) + 1.
    for _ in 0..NEWTON_MAX_ITER {
        let g = m * (z - c * gs.a(m)) + 1.0;
        let gp = z - c * gs.a(m) - m * c * gs.a_prime(m);
        let step = g / gp;
        m -= step;
        if step.norm() < 1e-15 * m.norm().max(1.0) {
            break;
        }
    }
    if m.im < 0.0 {
        m = m.conj();
    }
    let res = (m + 1.0 / (z - c * gs.a(m))).norm();
    if res > 1e-9 * m.norm().max(1.0) {
        return Err(Error::solver(
            format!("fixed-point iteration did not converge at z = {z}"),
            res,
        ));
    }
    Ok(m)
}

fn mbar_to_m(mbar: Complex64, c: f64, z: Complex64) -> Complex64 {
    (mbar - (c - 1.0) / z) / c
}

/// Solves the discretized Marchenko-Pastur equation at `z` with `im(z) > 0`,
/// returning the Stieltjes transform of the limiting p-by-p law.
pub fn solve_mp_fixed_point(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
    z: Complex64,
) -> Result<Complex64> {
    if t.len() != ctx.p {
        return Err(Error::validation(format!(
            "spectrum has length {} but context has p = {}",
            t.len(),
            ctx.p
        )));
    }
    if z.im <= 0.0 {
        return Err(Error::validation("z must have positive imaginary part"));
    }
    let gs = GroupedSpectrum::from_spectrum(t);
    let c = ctx.c();
    let mbar = solve_mbar_complex(&gs, c, z)?;
    Ok(mbar_to_m(mbar, c, z))
}

/// Newton iteration for the companion transform directly at real `x`,
/// starting from `m0`. Roots come in conjugate pairs, so a solution landing in
/// the lower half plane is flipped. Returns None when Newton stalls.
fn newton_real_axis(gs: &GroupedSpectrum, c: f64, x: f64, m0: Complex64) -> Option<Complex64> {
    let mut m = m0;
    for _ in 0..NEWTON_MAX_ITER {
        let g = m * (x - c * gs.a(m)) + 1.0;
        let gp = x - c * gs.a(m) - m * c * gs.a_prime(m);
        if gp.norm() == 0.0 {
            return None;
        }
        let step = g / gp;
        m -= step;
        if step.norm() < 1e-14 * m.norm().max(1.0) {
            if m.im < 0.0 {
                m = m.conj();
            }
            let res = (m * (x - c * gs.a(m)) + 1.0).norm();
            if res < 1e-10 * m.norm().max(1.0) {
                return Some(m);
            }
            return None;
        }
        if !m.re.is_finite() || !m.im.is_finite() {
            return None;
        }
    }
    None
}

/// Companion transform at real `x` strictly inside a support interval, by
/// continuation in the imaginary offset followed by Newton on the real axis.
fn solve_mbar_interior(gs: &GroupedSpectrum, c: f64, x: f64) -> Result<Complex64> {
    let scale = gs.scale();
    let mut eta = 0.1 * scale;
    let mut m = solve_mbar_complex(gs, c, Complex64::new(x, eta))?;
    while eta > 1e-10 * scale {
        // Newton continuation in the offset. Near a steep edge the solution
        // moves fast in eta, so when a tenfold reduction loses the root, back
        // off to gentler reductions instead of restarting cold (the cold
        // iterate is hopeless close to the real axis).
        let mut factor = 0.1;
        loop {
            let z = Complex64::new(x, eta * factor);
            if let Some(v) = newton_real_axis_complex(gs, c, z, m) {
                m = v;
                eta *= factor;
                break;
            }
            factor = factor.sqrt();
            if factor > 0.95 {
                m = solve_mbar_complex(gs, c, Complex64::new(x, eta * 0.1))?;
                eta *= 0.1;
                break;
            }
        }
    }
    // Fallback when Newton stalls on the real axis: the value at the smallest
    // imaginary offset, eta = 1e-10 * max(t).
    Ok(newton_real_axis(gs, c, x, m).unwrap_or(m))
}

/// Newton at complex z (used during continuation in the imaginary offset).
fn newton_real_axis_complex(
    gs: &GroupedSpectrum,
    c: f64,
    z: Complex64,
    m0: Complex64,
) -> Option<Complex64> {
    let mut m = m0;
    for _ in 0..NEWTON_MAX_ITER {
        let g = m * (z - c * gs.a(m)) + 1.0;
        let gp = z - c * gs.a(m) - m * c * gs.a_prime(m);
        let step = g / gp;
        m -= step;
        if step.norm() < 1e-14 * m.norm().max(1.0) {
            if m.im < 0.0 {
                return None;
            }
            return Some(m);
        }
        if !m.re.is_finite() || !m.im.is_finite() {
            return None;
        }
    }
    None
}

/// Companion transform at real `x` known to lie outside the support: real
/// solution found by bisection of the inverse map on the bracketing
/// increasing stretch.
fn solve_mbar_exterior(gs: &GroupedSpectrum, c: f64, support: &SupportIntervals, x: f64) -> Result<f64> {
    let xf = |u: f64| x_of_u(gs, c, u) - x;
    let ivs = &support.intervals;
    if ivs.is_empty() {
        return Err(Error::domain("empty support"));
    }
    // Above the top edge: u in (u_upper_last, 0).
    if x > ivs.last().unwrap().upper {
        let lo = ivs.last().unwrap().u_upper;
        let mut hi = lo * 1e-12;
        while xf(hi) < 0.0 {
            hi *= 0.5;
        }
        return Ok(bisect(xf, lo, hi, 200));
    }
    // Interior gaps.
    for w in ivs.windows(2) {
        if x > w[0].upper && x < w[1].lower {
            return Ok(bisect(xf, w[0].u_upper, w[1].u_lower, 200));
        }
    }
    // Below the lowest edge (including x < 0).
    let first = &ivs[0];
    if !first.u_lower.is_nan() && first.u_lower > 0.0 {
        // Singular branch: increasing stretch (0, u_lower) covers (-inf, lower).
        let hi = first.u_lower;
        let mut lo = hi * 1e-12;
        while xf(lo) > 0.0 {
            lo *= 0.5;
        }
        return Ok(bisect(xf, lo, hi, 200));
    }
    if x > 0.0 && !first.u_lower.is_nan() {
        // Nonsingular branch: increasing stretch (-inf, u_lower) covers (0, lower).
        let hi = first.u_lower;
        let mut lo = hi * 2.0;
        while xf(lo) > 0.0 {
            lo *= 2.0;
            if lo < -1e300 {
                return Err(Error::solver("bracketing failed below support", f64::NAN));
            }
        }
        return Ok(bisect(xf, lo, hi, 200));
    }
    // x < 0 with p_plus <= n: positive-u branch, x(u) increasing from -inf to 0^-.
    let mut lo = 1e-12 / gs.scale();
    while xf(lo) > 0.0 {
        lo *= 0.5;
    }
    let mut hi = 1.0 / gs.scale();
    while xf(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::solver("bracketing failed for negative x", f64::NAN));
        }
    }
    Ok(bisect(xf, lo, hi, 200))
}

/// Handle on a spectrum's transform machinery that reuses the grouped atoms
/// and support decomposition across many real-line evaluations.
pub struct StieltjesSolver {
    gs: GroupedSpectrum,
    ctx: ConcentrationContext,
    support: SupportIntervals,
}

impl StieltjesSolver {
    pub fn new(t: &SpectrumVector, ctx: ConcentrationContext) -> Result<Self> {
        let gs = GroupedSpectrum::from_spectrum(t);
        let support = compute_support_grouped(&gs, &ctx)?;
        Ok(Self { gs, ctx, support })
    }

    pub fn support(&self) -> &SupportIntervals {
        &self.support
    }

    /// Boundary value of the companion transform at real x != 0.
    pub fn mbar_at(&self, x: f64) -> Result<Complex64> {
        if x == 0.0 {
            return Err(Error::validation("x must be nonzero"));
        }
        let c = self.ctx.c();
        // Snap points within 1e-9 relative of an edge onto the edge, where the
        // transform value is the stored stationary point.
        let snapped = self.support.snap(x, 1e-9);
        for iv in &self.support.intervals {
            if (snapped - iv.lower).abs() < f64::EPSILON * iv.upper && !iv.u_lower.is_nan() {
                return Ok(Complex64::new(iv.u_lower, 0.0));
            }
            if (snapped - iv.upper).abs() < f64::EPSILON * iv.upper {
                return Ok(Complex64::new(iv.u_upper, 0.0));
            }
        }
        if self.support.contains(snapped) {
            solve_mbar_interior(&self.gs, c, snapped)
        } else {
            Ok(Complex64::new(
                solve_mbar_exterior(&self.gs, c, &self.support, x)?,
                0.0,
            ))
        }
    }

    /// Boundary value of the Stieltjes transform of the p-by-p law at real x.
    pub fn m_at(&self, x: f64) -> Result<Complex64> {
        let mbar = self.mbar_at(x)?;
        let c = self.ctx.c();
        Ok((mbar - Complex64::new((c - 1.0) / x, 0.0)) / c)
    }

    /// Density of the continuous part at real x: im(m) / pi.
    pub fn density_at(&self, x: f64) -> Result<f64> {
        Ok(self.m_at(x)?.im / std::f64::consts::PI)
    }

}

/// Companion transform along a strictly increasing sequence of points inside
/// one support interval: solved once by continuation at the center, then
/// marched outward with warm-started Newton. Used by the model builder, where
/// neighboring grid points supply excellent initial guesses.
pub(crate) fn mbar_along_interval(
    gs: &GroupedSpectrum,
    c: f64,
    xs: &[f64],
) -> Result<Vec<Complex64>> {
    let n = xs.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(out);
    }
    let mid = n / 2;
    out[mid] = solve_mbar_interior(gs, c, xs[mid])?;
    let scale = gs.scale();
    let eta = 1e-10 * scale;
    let solve_warm = |x: f64, start: Complex64| -> Result<Complex64> {
        if let Some(m) = newton_real_axis(gs, c, x, start) {
            if m.im >= 0.0 {
                return Ok(m);
            }
        }
        // Warm start failed (possible very close to an edge): continuation
        // fallback, then the small-offset evaluation as a last resort.
        match solve_mbar_interior(gs, c, x) {
            Ok(m) => Ok(m),
            Err(_) => solve_mbar_complex(gs, c, Complex64::new(x, eta)),
        }
    };
    for k in mid + 1..n {
        out[k] = solve_warm(xs[k], out[k - 1])?;
    }
    for k in (0..mid).rev() {
        out[k] = solve_warm(xs[k], out[k + 1])?;
    }
    Ok(out)
}

/// Boundary value on the real line of the Stieltjes transform of the limiting
/// p-by-p law for candidate spectrum `t`. One-off variant of
/// [`StieltjesSolver::m_at`].
pub fn stieltjes_on_real_line(
    t: &SpectrumVector,
    ctx: &ConcentrationContext,
    x: f64,
) -> Result<Complex64> {
    if x == 0.0 {
        return Err(Error::validation("x must be nonzero"));
    }
    if t.is_all_zero() {
        return Ok(Complex64::new(-1.0 / x, 0.0));
    }
    StieltjesSolver::new(t, *ctx)?.m_at(x)
}

/// Solves `m = [ (1/n) sum_i tau_i / (1 + tau_i m) ]^{-1}` for the unique
/// positive root: the companion transform of the singular-case law at zero.
pub fn solve_mbar_at_zero(tau_hat: &SpectrumVector, ctx: &ConcentrationContext) -> Result<f64> {
    if ctx.p <= ctx.n {
        return Err(Error::domain(format!(
            "the zero-eigenvalue branch requires p > n (got p = {}, n = {})",
            ctx.p, ctx.n
        )));
    }
    let gs = GroupedSpectrum::from_spectrum(tau_hat);
    if !gs.has_positive_mass() {
        return Err(Error::domain("spectrum must have at least one positive entry"));
    }
    let c = ctx.c();
    // h(m) = m * (1/n) sum tau/(1 + tau m) increases from 0 to p_plus/n; a root
    // of h = 1 exists iff more than n entries are positive.
    let h = |m: f64| c * m * gs.a_real(m) - 1.0;
    let mut hi = 1.0 / gs.scale();
    let mut tries = 0;
    while h(hi) < 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 2000 {
            return Err(Error::solver(
                "no positive root: too few positive eigenvalues relative to n",
                h(hi),
            ));
        }
    }
    let mut lo = hi * 0.5;
    while h(lo) > 0.0 {
        lo *= 0.5;
    }
    let m = bisect(h, lo, hi, 200);
    let res = (m - 1.0 / (c * gs.a_real(m))).abs();
    if res > 1e-10 * m {
        return Err(Error::solver("bisection for mbar(0) did not converge", res));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn ctx(n: usize, p: usize) -> ConcentrationContext {
        ConcentrationContext::new(n, p).unwrap()
    }

    /// Root in the upper half plane of c z m^2 + (z - (1-c)) m + 1 = 0, the
    /// closed form for a point-mass population spectrum at 1.
    fn mp_quadratic_root(c: f64, z: Complex64) -> Complex64 {
        let a = c * z;
        let b = z - (1.0 - c);
        let disc = (b * b - 4.0 * a).sqrt();
        let r1 = (-b + disc) / (2.0 * a);
        let r2 = (-b - disc) / (2.0 * a);
        if r1.im > 0.0 {
            r1
        } else {
            r2
        }
    }

    #[test]
    fn all_zero_spectrum_gives_minus_one_over_z() {
        let t = SpectrumVector::constant(0.0, 10).unwrap();
        let z = Complex64::new(0.7, 0.3);
        let m = solve_mp_fixed_point(&t, &ctx(20, 10), z).unwrap();
        assert!((m + 1.0 / z).norm() < 1e-12);
    }

    #[test]
    fn point_mass_matches_quadratic_root() {
        let t = SpectrumVector::constant(1.0, 50).unwrap();
        let z = Complex64::new(1.0, 1.0);
        let m = solve_mp_fixed_point(&t, &ctx(100, 50), z).unwrap();
        let expected = mp_quadratic_root(0.5, z);
        assert!((m - expected).norm() < 1e-9, "{m} vs {expected}");
    }

    #[test]
    fn scaling_covariance() {
        let t = SpectrumVector::new(vec![0.5, 1.0, 2.0, 4.0]).unwrap();
        let context = ctx(8, 4);
        let z = Complex64::new(1.3, 0.7);
        let alpha = 2.0;
        let t2 = SpectrumVector::new(t.values().iter().map(|v| alpha * v).collect()).unwrap();
        let m1 = solve_mp_fixed_point(&t, &context, z).unwrap();
        let m2 = solve_mp_fixed_point(&t2, &context, alpha * z).unwrap();
        assert!((m2 - m1 / alpha).norm() < 1e-9);
    }

    #[test]
    fn set_membership_holds() {
        let t = SpectrumVector::new(vec![1.0, 2.0, 3.0, 10.0]).unwrap();
        let context = ctx(2, 4);
        let z = Complex64::new(0.5, 0.2);
        let m = solve_mp_fixed_point(&t, &context, z).unwrap();
        let c = context.c();
        let member = -(1.0 - c) / z + c * m;
        assert!(member.im > 0.0);
    }

    #[test]
    fn residual_of_spec_equation() {
        let t = SpectrumVector::new(vec![0.2, 1.0, 1.0, 5.0, 9.0]).unwrap();
        let context = ctx(10, 5);
        let c = context.c();
        let z = Complex64::new(2.0, 0.01);
        let m = solve_mp_fixed_point(&t, &context, z).unwrap();
        let rhs: Complex64 = t
            .values()
            .iter()
            .map(|&ti| 1.0 / (ti * (1.0 - c - c * z * m) - z))
            .sum::<Complex64>()
            / t.len() as f64;
        assert!((m - rhs).norm() < 1e-10 * m.norm().max(1.0));
    }

    #[test]
    fn real_line_all_zeros() {
        let t = SpectrumVector::constant(0.0, 4).unwrap();
        let m = stieltjes_on_real_line(&t, &ctx(8, 4), 2.0).unwrap();
        assert_abs_diff_eq!(m.re, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m.im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn real_line_matches_mp_density_inside_support() {
        // Point-mass spectrum, c = 0.5: density at 1 is 0.42109 (closed form).
        let t = SpectrumVector::constant(1.0, 50).unwrap();
        let m = stieltjes_on_real_line(&t, &ctx(100, 50), 1.0).unwrap();
        let c: f64 = 0.5;
        let a = (1.0 - c.sqrt()).powi(2);
        let b = (1.0 + c.sqrt()).powi(2);
        let density = ((b - 1.0) * (1.0 - a)).sqrt() / (2.0 * std::f64::consts::PI * c);
        assert_relative_eq!(m.im / std::f64::consts::PI, density, max_relative = 1e-8);
    }

    #[test]
    fn real_line_outside_support_is_real() {
        let t = SpectrumVector::constant(1.0, 50).unwrap();
        let context = ctx(100, 50);
        let m = stieltjes_on_real_line(&t, &context, 10.0).unwrap();
        assert!(m.im.abs() < 1e-8);
        // Real root of the quadratic c z m^2 + (z - (1-c)) m + 1 = 0 at z = 10;
        // the Stieltjes branch is the one with m -> 0 as x -> inf.
        let (c, z) = (0.5f64, 10.0f64);
        let disc = ((z - (1.0 - c)).powi(2) - 4.0 * c * z).sqrt();
        let r1 = (-(z - (1.0 - c)) + disc) / (2.0 * c * z);
        assert_relative_eq!(m.re, r1, max_relative = 1e-8);
    }

    #[test]
    fn support_point_mass() {
        let t = SpectrumVector::constant(1.0, 50).unwrap();
        let s = compute_support(&t, &ctx(100, 50)).unwrap();
        assert_eq!(s.intervals.len(), 1);
        let c: f64 = 0.5;
        assert_relative_eq!(s.intervals[0].lower, (1.0 - c.sqrt()).powi(2), max_relative = 1e-8);
        assert_relative_eq!(s.intervals[0].upper, (1.0 + c.sqrt()).powi(2), max_relative = 1e-8);
        assert_eq!(s.mass_at_zero, 0.0);
    }

    #[test]
    fn support_singular_case_mass_at_zero() {
        let t = SpectrumVector::constant(1.0, 200).unwrap();
        let s = compute_support(&t, &ctx(100, 200)).unwrap();
        assert_abs_diff_eq!(s.mass_at_zero, 0.5, epsilon = 1e-15);
        let c: f64 = 2.0;
        assert_relative_eq!(s.intervals[0].lower, (1.0 - c.sqrt()).powi(2), max_relative = 1e-8);
        assert_relative_eq!(s.intervals[0].upper, (1.0 + c.sqrt()).powi(2), max_relative = 1e-8);
    }

    #[test]
    fn support_two_clusters() {
        // Half ones, half tens at small concentration: two disjoint intervals.
        let mut v = vec![1.0; 20];
        v.extend(vec![10.0; 20]);
        let t = SpectrumVector::new(v).unwrap();
        let s = compute_support(&t, &ctx(800, 40)).unwrap();
        assert_eq!(s.intervals.len(), 2);
        assert!(s.intervals[0].lower < 1.0 && s.intervals[0].upper > 1.0);
        assert!(s.intervals[1].lower < 10.0 && s.intervals[1].upper > 10.0);
    }

    #[test]
    fn mbar_at_zero_point_mass() {
        // tau = ones, c = 2 -> m = 1/(c-1) = 1.
        let t = SpectrumVector::constant(1.0, 100).unwrap();
        let m = solve_mbar_at_zero(&t, &ctx(50, 100)).unwrap();
        assert_relative_eq!(m, 1.0, max_relative = 1e-10);
        // Scaling: tau = 4 -> m = 1/4.
        let t4 = SpectrumVector::constant(4.0, 100).unwrap();
        let m4 = solve_mbar_at_zero(&t4, &ctx(50, 100)).unwrap();
        assert_relative_eq!(m4, 0.25, max_relative = 1e-10);
    }

    #[test]
    fn mbar_at_zero_requires_p_greater_n() {
        let t = SpectrumVector::constant(1.0, 100).unwrap();
        assert!(matches!(
            solve_mbar_at_zero(&t, &ctx(100, 100)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn density_zero_outside_support() {
        let t = SpectrumVector::new((1..=30).map(|i| i as f64 / 10.0).collect()).unwrap();
        let context = ctx(60, 30);
        let solver = StieltjesSolver::new(&t, context).unwrap();
        let above = solver.support().upper_edge() * 1.5;
        let m = solver.m_at(above).unwrap();
        assert!(m.im.abs() < 1e-8);
    }

    #[test]
    fn real_line_scaling_covariance() {
        let t = SpectrumVector::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let context = ctx(10, 5);
        let alpha = 2.0;
        let t2 = SpectrumVector::new(t.values().iter().map(|v| alpha * v).collect()).unwrap();
        for &x in &[0.5, 2.0, 30.0, -1.0] {
            let m1 = stieltjes_on_real_line(&t, &context, x).unwrap();
            let m2 = stieltjes_on_real_line(&t2, &context, alpha * x).unwrap();
            assert!((m2 - m1 / alpha).norm() < 1e-7, "x = {x}: {m2} vs {m1}");
        }
    }
}
