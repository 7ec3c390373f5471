//! Second moments of increments, log-log exponent fits, and the local-time
//! increment law.
//!
//! Two field backends are provided. [`ChaosField`] differences truncated
//! coefficient vectors, so it sees only the modes j <= J. [`KernelSpaceField`]
//! works with the chaos kernels themselves (all modes at once) for constant
//! initial data, where the covariance of each chaos order reduces to one- and
//! two-dimensional integrals of Gaussian kernels.

use std::f64::consts::PI;
use std::fmt;

use libm::{erfc, expm1, frexp};

use crate::basis::GaussianCoordinates;
use crate::chaos::{sample_realization, ChaosCoefficients};
use crate::csv::{Cell, Table};
use crate::error::{Error, Result};
use crate::feynman_kac::{jackknife, local_time_samples, Estimate, McSettings};
use crate::kernels::{heat_kernel_time_integral, heat_kernel_time_integral2, INV_SQRT_2PI};
use crate::par;
use crate::quad::{self, Tolerance};
use crate::rng::{batches, Stream};

pub const TAIL_LIMIT: f64 = 0.05;
pub const MIN_FIT_POINTS: usize = 6;
pub const R_SQUARED_FLOOR: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Space,
    Time,
}

impl Direction {
    pub fn label(&self) -> &'static str {
        match self {
            Direction::Space => "space",
            Direction::Time => "time",
        }
    }

    fn shift(&self, base: (f64, f64), h: f64) -> (f64, f64) {
        match self {
            Direction::Space => (base.0, base.1 + h),
            Direction::Time => (base.0 + h, base.1),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A random field F(t, x) = Σ_n I_n(f_n(t, x)) seen through the second
/// moments of its chaos orders.
pub trait IncrementField: Sync {
    fn max_order(&self) -> usize;

    /// E|I_n(f_n(p))|² for n = 0..=N.
    fn order_masses(&self, p: (f64, f64)) -> Result<Vec<f64>>;

    /// E|I_n(f_n(q)) - I_n(f_n(p))|² for n = 0..=N.
    fn increment_masses(&self, p: (f64, f64), q: (f64, f64)) -> Result<Vec<f64>>;
}

/// A field backed by a supplier of truncated coefficient vectors.
pub struct ChaosField<F> {
    max_order: usize,
    supplier: F,
}

impl<F> ChaosField<F>
where
    F: Fn(f64, f64) -> Result<ChaosCoefficients> + Sync,
{
    pub fn new(max_order: usize, supplier: F) -> Self {
        Self { max_order, supplier }
    }

    pub fn coefficients(&self, p: (f64, f64)) -> Result<ChaosCoefficients> {
        let c = (self.supplier)(p.0, p.1)?;
        if c.spec().max_order != self.max_order {
            return Err(Error::SpecMismatch);
        }
        Ok(c)
    }
}

impl<F> IncrementField for ChaosField<F>
where
    F: Fn(f64, f64) -> Result<ChaosCoefficients> + Sync,
{
    fn max_order(&self) -> usize {
        self.max_order
    }

    fn order_masses(&self, p: (f64, f64)) -> Result<Vec<f64>> {
        let c = self.coefficients(p)?;
        Ok((0..=self.max_order).map(|n| c.order_mass(n)).collect())
    }

    fn increment_masses(&self, p: (f64, f64), q: (f64, f64)) -> Result<Vec<f64>> {
        let a = self.coefficients(p)?;
        let b = self.coefficients(q)?;
        let d = b.combine(1.0, &a, -1.0)?;
        Ok((0..=self.max_order).map(|n| d.order_mass(n)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// u itself.
    Value,
    /// ∂ₓu.
    Derivative,
}

/// Orders 0..=2 of u or ∂ₓu for u₀ ≡ c, with every noise mode included.
///
/// With u₀ ≡ c the order-n kernel of u(t, x) is c times the iterated heat
/// kernel chain g_n(t, x; y_1, ..., y_n), and the field is stationary in x.
/// Order 1 has covariance ∫_0^{2t} k(σ, d) min(σ, 2t - σ) dσ with d = x - x'
/// and k = p for u, k = -∂²p for ∂ₓu. Order 2 has ‖g‖² plus the cross term
/// ⟨g, g∘swap⟩, each reduced to two time variables.
///
/// Time increments are supported from t = 0 only, where every order n >= 1
/// starts at zero.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpaceField {
    pub quantity: Quantity,
    pub level: f64,
    pub tolerance: Tolerance,
}

impl KernelSpaceField {
    pub fn new(quantity: Quantity, level: f64) -> Self {
        Self { quantity, level, tolerance: Tolerance::new(1e-15, 1e-10) }
    }

    fn order_zero(&self) -> f64 {
        match self.quantity {
            Quantity::Value => self.level * self.level,
            Quantity::Derivative => 0.0,
        }
    }

    /// k(σ, 0) - k(σ, h), or k(σ, 0) when h is None.
    fn kernel_drop(&self, sigma: f64, h: Option<f64>) -> f64 {
        let p0 = INV_SQRT_2PI / sigma.sqrt();
        let r = h.map_or(f64::INFINITY, |h| 0.5 * h * h / sigma);
        match self.quantity {
            Quantity::Value => p0 * -expm1(-r),
            // -∂²p(σ, d) = p(σ, d)(1 - d²/σ)/σ and d²/σ = 2r.
            Quantity::Derivative => p0 / sigma * (-expm1(-r) + if r.is_finite() { 2.0 * r * (-r).exp() } else { 0.0 }),
        }
    }

    /// Drop in the outer-time antiderivative of the swap term, or its value
    /// at d = 0 when h is None: P2 for u and -2 P1 for ∂ₓu.
    fn swap_drop(&self, sigma: f64, h: Option<f64>) -> f64 {
        match self.quantity {
            Quantity::Value => match h {
                None => heat_kernel_time_integral2(sigma, 0.0),
                Some(h) => p2_drop(sigma, h),
            },
            Quantity::Derivative => {
                -2.0 * match h {
                    None => heat_kernel_time_integral(sigma, 0.0),
                    Some(h) => p1_drop(sigma, h),
                }
            }
        }
    }

    /// ∫∫_{[0,t]²} f(a, b) da db with a + b = σ = s², a = σv. The integrand is
    /// given as f(σ, v_lo, v_hi) = ∫ f dv over the admissible v-range, so that
    /// separable integrands can do the v-integral in closed form.
    fn time_square(&self, t: f64, f: impl Fn(f64, f64, f64) -> f64 + Copy) -> Result<f64> {
        let inner = |s: f64| {
            let sigma = s * s;
            if sigma == 0.0 {
                return 0.0;
            }
            let (lo, hi) = if sigma <= t { (0.0, 1.0) } else { (1.0 - t / sigma, t / sigma) };
            2.0 * s * sigma * f(sigma, lo, hi)
        };
        let st = t.sqrt();
        let a = quad::adaptive(inner, 0.0, st, self.tolerance)?;
        let b = quad::adaptive(inner, st, (2.0 * t).sqrt(), self.tolerance)?;
        Ok(a + b)
    }

    fn order_one(&self, t: f64, h: Option<f64>) -> Result<f64> {
        let v = self.time_square(t, |sigma, lo, hi| self.kernel_drop(sigma, h) * (hi - lo))?;
        Ok(self.level * self.level * v)
    }

    fn order_two(&self, t: f64, h: Option<f64>) -> Result<f64> {
        let direct = self.time_square(t, |sigma, lo, hi| self.kernel_drop(sigma, h) * omega(t, sigma, lo, hi))?;
        let tol = self.tolerance;
        let failed = std::cell::Cell::new(None);
        let swap = self.time_square(t, |sigma, lo, hi| {
            let g = |v: f64| {
                let (a, b) = (sigma * v, sigma * (1.0 - v));
                let c = sigma * v * (1.0 - v);
                self.swap_drop(2.0 * t - a - b + c, h) - self.swap_drop(t - b + c, h) - self.swap_drop(t - a + c, h)
                    + self.swap_drop(c, h)
            };
            match quad::adaptive(g, lo, hi, tol) {
                Ok(v) => INV_SQRT_2PI / sigma.sqrt() * v,
                Err(e) => {
                    failed.set(Some(e.to_string()));
                    0.0
                }
            }
        });
        if let Some(msg) = failed.take() {
            return Err(Error::NonConvergence(msg));
        }
        Ok(self.level * self.level * (direct + swap?))
    }

    fn masses(&self, t: f64, h: Option<f64>) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Ok(vec![if h.is_none() { self.order_zero() } else { 0.0 }, 0.0, 0.0]);
        }
        let zero = if h.is_none() { self.order_zero() } else { 0.0 };
        let m1 = self.order_one(t, h)?;
        let m2 = self.order_two(t, h)?;
        // Covariance drops enter an increment twice: E|F(x+h) - F(x)|² = 2[C(0) - C(h)].
        let k = if h.is_some() { 2.0 } else { 1.0 };
        Ok(vec![zero, k * m1, k * m2])
    }
}

impl IncrementField for KernelSpaceField {
    fn max_order(&self) -> usize {
        2
    }

    fn order_masses(&self, p: (f64, f64)) -> Result<Vec<f64>> {
        self.masses(p.0, None)
    }

    fn increment_masses(&self, p: (f64, f64), q: (f64, f64)) -> Result<Vec<f64>> {
        if p.0 == q.0 {
            return self.masses(p.0, Some((q.1 - p.1).abs()));
        }
        if p.1 == q.1 && p.0.min(q.0) == 0.0 {
            let mut m = self.masses(p.0.max(q.0), None)?;
            m[0] = 0.0;
            return Ok(m);
        }
        Err(Error::InvalidArgument("kernel-space increments are same-time in x, or in t from t = 0".into()))
    }
}

/// ∫_lo^hi W(t - σv, t - σ(1 - v)) dv with
/// W(A, B) = ∫_0^A ∫_0^B p(a + b, 0) = (2π)^{-1/2} (4/3) [(A+B)^{3/2} - A^{3/2} - B^{3/2}].
fn omega(t: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let c = INV_SQRT_2PI * 4.0 / 3.0;
    let whole = (2.0 * t - sigma).max(0.0).powf(1.5) * (hi - lo);
    // ∫ (t - σv)^{3/2} dv, and the mirrored term is equal by symmetry of the range.
    let edge = if sigma * (hi - lo) < 1e-6 * t {
        let mid = t - sigma * 0.5 * (lo + hi);
        mid.powf(1.5) * (hi - lo)
    } else {
        ((t - sigma * lo).max(0.0).powf(2.5) - (t - sigma * hi).max(0.0).powf(2.5)) / (2.5 * sigma)
    };
    c * (whole - 2.0 * edge)
}

/// P1(σ, 0) - P1(σ, h) without cancellation.
fn p1_drop(sigma: f64, h: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let r = 0.5 * h * h / sigma;
    (2.0 * sigma / PI).sqrt() * -expm1(-r) + h * erfc(h / (2.0 * sigma).sqrt())
}

/// P2(σ, 0) - P2(σ, h).
fn p2_drop(sigma: f64, h: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let r = 0.5 * h * h / sigma;
    let g = (2.0 / PI).sqrt() * sigma.sqrt() / 3.0 * (-2.0 * sigma * expm1(-r) - h * h * (-r).exp());
    g + (sigma * h + h * h * h / 3.0) * erfc(h / (2.0 * sigma).sqrt())
}

/// E|ΔF|² against lag, with per-order parts and the truncation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementMomentCurve {
    pub direction: Direction,
    pub base: (f64, f64),
    pub lags: Vec<f64>,
    pub moments: Vec<f64>,
    /// order_moments[i][n] is the order-n part of moments[i].
    pub order_moments: Vec<Vec<f64>>,
    /// Largest share of the top order in the field mass over all probed points.
    pub max_tail_share: f64,
    /// Whether the moments are non-decreasing in the lag.
    pub monotone: bool,
}

/// Increment second moments at base + h·direction. Refuses when the top
/// retained order carries more than 5% of the field mass at a probed point.
pub fn increment_moments(
    field: &dyn IncrementField,
    base: (f64, f64),
    direction: Direction,
    lags: &[f64],
) -> Result<IncrementMomentCurve> {
    if lags.is_empty() || lags.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidArgument("lags must be positive and finite".into()));
    }
    if lags.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("lags must be strictly increasing".into()));
    }
    let top = field.max_order();
    let mut points = vec![base];
    points.extend(lags.iter().map(|&h| direction.shift(base, h)));
    let masses = par::try_map(points.len(), |i| field.order_masses(points[i]))?;
    let mut max_tail_share = 0.0f64;
    for (pt, m) in points.iter().zip(&masses) {
        let total: f64 = m.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let share = m[top] / total;
        max_tail_share = max_tail_share.max(share);
        if top > 0 && share > TAIL_LIMIT {
            return Err(Error::TruncationTail {
                order: top,
                share,
                limit: TAIL_LIMIT,
                at: format!("(t, x) = ({}, {})", pt.0, pt.1),
            });
        }
    }
    let order_moments = par::try_map(lags.len(), |i| field.increment_masses(base, points[i + 1]))?;
    let moments: Vec<f64> = order_moments.iter().map(|m| m.iter().sum()).collect();
    if let Some(bad) = moments.iter().find(|m| !m.is_finite()) {
        return Err(Error::NonFinite(format!("increment moment {bad}")));
    }
    let monotone = moments.windows(2).all(|w| w[1] >= w[0]);
    Ok(IncrementMomentCurve { direction, base, lags: lags.to_vec(), moments, order_moments, max_tail_share, monotone })
}

/// `per_octave` geometrically spaced lags per doubling from h_min to h_max.
pub fn geometric_lags(h_min: f64, h_max: f64, per_octave: usize) -> Result<Vec<f64>> {
    if !(h_min > 0.0 && h_max > h_min) || per_octave == 0 {
        return Err(Error::InvalidArgument("need 0 < h_min < h_max and at least one lag per octave".into()));
    }
    let steps = ((h_max / h_min).log2() * per_octave as f64).round() as usize;
    Ok((0..=steps).map(|k| h_min * 2f64.powf(k as f64 / per_octave as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentEstimate {
    pub slope: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub fit_range: (f64, f64),
    pub n_points: usize,
    pub low_r_squared: bool,
}

impl ExponentEstimate {
    /// Hölder exponent read off the second-moment slope.
    pub fn holder_exponent(&self) -> f64 {
        0.5 * self.slope
    }
}

/// ln(m) - ln(m_ref), split into mantissa and binary exponent so that
/// scaling every moment by a power of two leaves the result unchanged.
fn relative_log(m: f64, reference: f64) -> f64 {
    let (fm, em) = frexp(m);
    let (fr, er) = frexp(reference);
    (fm.ln() - fr.ln()) + (em - er) as f64 * std::f64::consts::LN_2
}

/// Least squares of ln(moment) on ln(lag).
pub fn fit_exponent(curve: &IncrementMomentCurve) -> Result<ExponentEstimate> {
    let n = curve.lags.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::InvalidArgument(format!("a fit needs at least {MIN_FIT_POINTS} points, got {n}")));
    }
    if curve.moments.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: curve.moments.len() });
    }
    if curve.moments.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::Degenerate("moments must be positive and finite to take logarithms".into()));
    }
    let xs: Vec<f64> = curve.lags.iter().map(|&h| relative_log(h, curve.lags[0])).collect();
    let ys: Vec<f64> = curve.moments.iter().map(|&m| relative_log(m, curve.moments[0])).collect();
    let xbar = xs.iter().sum::<f64>() / n as f64;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if syy <= 1e-24 * sxx {
        return Err(Error::Degenerate("moments do not vary across the lag range".into()));
    }
    let slope = sxy / sxx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - ybar - slope * (x - xbar)).powi(2)).sum();
    let r_squared = (1.0 - ssr / syy).clamp(0.0, 1.0);
    let stderr = (ssr / (n - 2) as f64 / sxx).sqrt();
    Ok(ExponentEstimate {
        slope,
        stderr,
        r_squared,
        fit_range: (curve.lags[0], curve.lags[n - 1]),
        n_points: n,
        low_r_squared: r_squared < R_SQUARED_FLOOR,
    })
}

/// E|F(q) - F(p)|² by sampling Gaussian coordinates g and evaluating both
/// truncated expansions at the same g.
pub fn sampled_increment_moment(
    at_p: &ChaosCoefficients,
    at_q: &ChaosCoefficients,
    n_draws: usize,
    stream: &Stream,
) -> Result<Estimate> {
    let diff = at_q.combine(1.0, at_p, -1.0)?;
    let j = diff.spec().max_mode;
    let plan = batches(n_draws, 1024);
    let per_batch = par::try_map(plan.len(), |b| {
        use rand::Rng;
        let mut rng = stream.batch(b as u64);
        (0..plan[b].1)
            .map(|_| {
                let g = GaussianCoordinates::new(
                    (0..j).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect(),
                );
                Ok(sample_realization(&diff, &g)?.powi(2))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let samples: Vec<f64> = per_batch.into_iter().flatten().collect();
    Ok(jackknife(&samples))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeIncrement {
    pub h: f64,
    /// E Δa Σ_a (L̂_a - L̂_{a-h})² / h.
    pub ratio: Estimate,
}

/// The ratio E∫(L_a - L_{a-h})² da / h over paths from 0, which tends to 4t
/// as h decreases. Each h must be a whole number (at least 2) of level
/// spacings; h = 0 gives 0.
pub fn local_time_increment_check(
    t: f64,
    h_values: &[f64],
    n_paths: usize,
    stream: &Stream,
    settings: &McSettings,
) -> Result<Vec<LocalTimeIncrement>> {
    let da = settings.delta_a;
    let mut shifts = Vec::with_capacity(h_values.len());
    for &h in h_values {
        if h == 0.0 {
            shifts.push(0);
            continue;
        }
        let m = (h / da).round();
        if !(h > 0.0) || (m * da - h).abs() > 1e-9 * h || m < 2.0 {
            return Err(Error::InvalidArgument(format!(
                "h = {h} must be a multiple of the level spacing {da} and at least twice it"
            )));
        }
        shifts.push(m as usize);
    }
    let rows = local_time_samples(t, 0.0, n_paths, stream, settings, |prof| {
        let l = prof.values();
        shifts
            .iter()
            .map(|&m| {
                if m == 0 {
                    return 0.0;
                }
                let at = |k: isize| if k >= 0 && (k as usize) < l.len() { l[k as usize] } else { 0.0 };
                let sq: f64 = (0..(l.len() + m) as isize).map(|k| (at(k) - at(k - m as isize)).powi(2)).sum();
                da * sq / (m as f64 * da)
            })
            .collect::<Vec<f64>>()
    })?;
    Ok(h_values
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let column: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            LocalTimeIncrement { h, ratio: jackknife(&column) }
        })
        .collect())
}

/// (direction, base_t, base_x, h, moment).
pub fn curve_table(curves: &[IncrementMomentCurve]) -> Table {
    let mut table = Table::new(&["direction", "base_t", "base_x", "h", "moment"]);
    for c in curves {
        for (h, m) in c.lags.iter().zip(&c.moments) {
            table.push(vec![Cell::from(c.direction.label()), c.base.0.into(), c.base.1.into(), (*h).into(), (*m).into()]);
        }
    }
    table
}

/// (direction, slope, stderr, r2, h_min, h_max).
pub fn fit_table(fits: &[(Direction, ExponentEstimate)]) -> Table {
    let mut table = Table::new(&["direction", "slope", "stderr", "r2", "h_min", "h_max"]);
    for (d, e) in fits {
        table.push(vec![
            Cell::from(d.label()),
            e.slope.into(),
            e.stderr.into(),
            e.r_squared.into(),
            e.fit_range.0.into(),
            e.fit_range.1.into(),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(lags: Vec<f64>, moments: Vec<f64>) -> IncrementMomentCurve {
        IncrementMomentCurve {
            direction: Direction::Space,
            base: (1.0, 0.0),
            order_moments: vec![],
            lags,
            moments,
            max_tail_share: 0.0,
            monotone: true,
        }
    }

    #[test]
    fn exact_power_law() {
        let lags = geometric_lags(1.0 / 128.0, 0.125, 2).unwrap();
        assert_eq!(lags.len(), 9);
        let fit = fit_exponent(&curve(lags.clone(), lags.clone())).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
        assert!(!fit.low_r_squared);
    }

    #[test]
    fn degenerate_and_short_curves() {
        let lags = geometric_lags(0.01, 0.16, 2).unwrap();
        let flat = vec![2.0; lags.len()];
        assert!(matches!(fit_exponent(&curve(lags.clone(), flat)), Err(Error::Degenerate(_))));
        assert!(fit_exponent(&curve(lags[..5].to_vec(), lags[..5].to_vec())).is_err());
    }

    #[test]
    fn order_one_value_mass_has_a_closed_form() {
        let f = KernelSpaceField::new(Quantity::Value, 1.0);
        let t: f64 = 0.7;
        let exact = INV_SQRT_2PI * 4.0 / 3.0 * ((2.0 * t).powf(1.5) - 2.0 * t.powf(1.5));
        assert!((f.order_one(t, None).unwrap() - exact).abs() < 1e-11);
    }

    #[test]
    fn drops_match_direct_differences() {
        for &(s, h) in &[(0.3, 0.1), (1.2, 0.02), (0.05, 0.4)] {
            let d1 = heat_kernel_time_integral(s, 0.0) - heat_kernel_time_integral(s, h);
            let d2 = heat_kernel_time_integral2(s, 0.0) - heat_kernel_time_integral2(s, h);
            assert!((p1_drop(s, h) - d1).abs() < 1e-14);
            assert!((p2_drop(s, h) - d2).abs() < 1e-14);
        }
    }

    #[test]
    fn omega_matches_quadrature() {
        let t = 0.8;
        let w = |a: f64, b: f64| INV_SQRT_2PI * 4.0 / 3.0 * ((a + b).powf(1.5) - a.powf(1.5) - b.powf(1.5));
        for &sigma in &[0.1, 0.8, 1.3] {
            let (lo, hi) = if sigma <= t { (0.0, 1.0) } else { (1.0 - t / sigma, t / sigma) };
            let q = quad::adaptive(|v| w(t - sigma * v, t - sigma * (1.0 - v)), lo, hi, Tolerance::default()).unwrap();
            assert!((omega(t, sigma, lo, hi) - q).abs() < 1e-10);
        }
    }
}
