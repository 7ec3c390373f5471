//! Monte Carlo side: Brownian paths on a uniform time grid, occupation-density
//! local times on a level grid, the exponent Ψ, conditional Feynman-Kac
//! estimates at fixed noise, and the path-side S-transform of u and ∂ₓu.
//!
//! Every estimator splits its paths into fixed batches. Batch b draws from
//! `stream.batch(b)` and the per-path samples are collected in path order, so
//! the result does not depend on the number of worker threads.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use libm::erf;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::{hermite_fn, GaussianCoordinates};
use crate::csv::{Cell, Table};
use crate::error::{Error, Result};
use crate::kernels::InitialCondition;
use crate::par;
use crate::quad;
use crate::rng::{batches, Stream};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_BATCH: usize = 1024;
pub const MIN_PATHS: usize = 100;
const EXPONENT_GUARD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub dt: f64,
    /// Level spacing of the occupation histogram.
    pub delta_a: f64,
    pub batch_size: usize,
}

impl McSettings {
    /// Δa = 2 sqrt(dt).
    pub fn new(dt: f64) -> Result<Self> {
        Self::with_delta_a(dt, 2.0 * dt.sqrt())
    }

    pub fn with_delta_a(dt: f64, delta_a: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(delta_a > 0.0 && delta_a.is_finite()) {
            return Err(Error::InvalidArgument(format!("level spacing must be positive, got {delta_a}")));
        }
        Ok(Self { dt, delta_a, batch_size: DEFAULT_BATCH })
    }
}

impl Default for McSettings {
    fn default() -> Self {
        Self::new(DEFAULT_DT).expect("default dt is valid")
    }
}

/// Number of steps on [0, t] with step dt; the last step may be shorter.
pub fn step_count(t: f64, dt: f64) -> usize {
    ((t / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Discrete skeleton B_{t_0}, ..., B_{t_M} of a Brownian motion started at x.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    start: f64,
    dt: f64,
    horizon: f64,
    positions: Vec<f64>,
}

impl BrownianPath {
    fn empty(t: f64, dt: f64, x: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {t}")));
        }
        let m = step_count(t, dt);
        let mut positions = vec![0.0; m + 1];
        positions[0] = x;
        Ok(Self { start: x, dt, horizon: t, positions })
    }

    /// Overwrites the path with fresh increments.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let m = self.steps();
        let sd = self.dt.sqrt();
        let last_sd = self.step_len(m - 1).sqrt();
        let mut b = self.start;
        for i in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            b += if i + 1 == m { last_sd } else { sd } * z;
            self.positions[i + 1] = b;
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps() {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    /// Length of step i, from t_i to t_{i+1}.
    pub fn step_len(&self, i: usize) -> f64 {
        if i + 1 == self.steps() {
            self.horizon - i as f64 * self.dt
        } else {
            self.dt
        }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn end(&self) -> f64 {
        self.positions[self.steps()]
    }

    pub fn range(&self) -> (f64, f64) {
        self.positions.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &b| (lo.min(b), hi.max(b)))
    }
}

pub fn simulate_path<R: Rng + ?Sized>(t: f64, dt: f64, x: f64, rng: &mut R) -> Result<BrownianPath> {
    let mut path = BrownianPath::empty(t, dt, x)?;
    path.resample(rng);
    Ok(path)
}

/// Uniform levels a_k = first + k Δa, each the centre of a bin of width Δa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGrid {
    first: f64,
    delta: f64,
    len: usize,
}

impl LevelGrid {
    pub fn new(first: f64, delta: f64, len: usize) -> Result<Self> {
        if !(delta > 0.0) || len == 0 || !first.is_finite() {
            return Err(Error::InvalidArgument("level grid needs Δa > 0 and at least one level".into()));
        }
        Ok(Self { first, delta, len })
    }

    /// Levels x + kΔa for |k| <= ceil(half_width / Δa).
    pub fn centered(x: f64, half_width: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("level spacing must be positive".into()));
        }
        let k = (half_width / delta).ceil().max(0.0) as usize;
        Self::new(x - k as f64 * delta, delta, 2 * k + 1)
    }

    /// x ± (6 sqrt(t) + 3Δa).
    pub fn for_horizon(x: f64, t: f64, delta: f64) -> Result<Self> {
        Self::centered(x, 6.0 * t.sqrt() + 3.0 * delta, delta)
    }

    pub fn first(&self) -> f64 {
        self.first
    }

    pub fn last(&self) -> f64 {
        self.level(self.len - 1)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn level(&self, k: usize) -> f64 {
        self.first + k as f64 * self.delta
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.level(k)).collect()
    }

    /// Index of the bin [a_k - Δa/2, a_k + Δa/2) holding y.
    #[inline]
    pub fn bin(&self, y: f64) -> Option<usize> {
        let k = ((y - self.first) / self.delta + 0.5).floor();
        (k >= 0.0 && k < self.len as f64).then_some(k as usize)
    }

    fn check_covers(&self, lo: f64, hi: f64) -> Result<()> {
        let margin = 3.0 * self.delta;
        if lo - margin < self.first - 1e-12 || hi + margin > self.last() + 1e-12 {
            return Err(Error::Coverage(format!(
                "levels [{}, {}] do not cover the path range [{lo}, {hi}] with a 3Δa margin",
                self.first,
                self.last()
            )));
        }
        Ok(())
    }
}

/// Occupation density L̂(a_k) = Σ_i (t_{i+1} - t_i) 𝟙{B_{t_i} ∈ bin k} / Δa.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeProfile {
    grid: LevelGrid,
    values: Vec<f64>,
}

impl LocalTimeProfile {
    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Δa Σ L̂, the elapsed time.
    pub fn total(&self) -> f64 {
        self.grid.delta * self.values.iter().sum::<f64>()
    }

    /// Δa Σ L̂².
    pub fn squared_integral(&self) -> f64 {
        self.grid.delta * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// Δa Σ L̂(a) φ(a).
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.grid.delta * self.values.iter().enumerate().map(|(k, v)| v * phi(self.grid.level(k))).sum::<f64>()
    }

    /// L̂ at the bin holding `a`.
    pub fn at(&self, a: f64) -> Option<f64> {
        self.grid.bin(a).map(|k| self.values[k])
    }
}

fn accumulate_local_time(path: &BrownianPath, grid: &LevelGrid, out: &mut [f64]) -> Result<()> {
    let (lo, hi) = path.range();
    grid.check_covers(lo, hi)?;
    out.iter_mut().for_each(|v| *v = 0.0);
    let m = path.steps();
    let scale = path.dt / grid.delta;
    for &b in &path.positions[..m - 1] {
        // Covered above, so the bin exists.
        out[grid.bin(b).expect("covered")] += scale;
    }
    out[grid.bin(path.positions[m - 1]).expect("covered")] += path.step_len(m - 1) / grid.delta;
    Ok(())
}

pub fn local_time(path: &BrownianPath, grid: &LevelGrid) -> Result<LocalTimeProfile> {
    let mut values = vec![0.0; grid.len];
    accumulate_local_time(path, grid, &mut values)?;
    Ok(LocalTimeProfile { grid: *grid, values })
}

/// Left-endpoint Riemann sum of ∫_0^t φ(B_s) ds.
pub fn occupation_functional(path: &BrownianPath, phi: impl Fn(f64) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..path.steps() {
        let v = phi(path.positions[i]);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("φ({}) along the path", path.positions[i])));
        }
        acc += path.step_len(i) * v;
    }
    Ok(acc)
}

/// Trapezoid version, used inside the exponent of the S-transform estimators
/// where the O(dt) bias of the left sum would show up against the error bars.
fn trapezoid_functional(path: &BrownianPath, phi: &dyn Fn(f64) -> f64) -> f64 {
    let p = &path.positions;
    let mut acc = 0.0;
    let mut left = phi(p[0]);
    for i in 0..path.steps() {
        let right = phi(p[i + 1]);
        acc += 0.5 * path.step_len(i) * (left + right);
        left = right;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Grid increments drawn first; mode coordinates computed from them.
    GridFirst,
    /// Mode coordinates drawn first; increments drawn conditionally on them.
    ModeFirst,
    Zero,
}

/// One white-noise sample seen both as level-grid increments ΔW_i and as
/// Hermite-mode coordinates W_{e_j} = Σ_i e_j(a_i) ΔW_i.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    grid: LevelGrid,
    increments: Vec<f64>,
    modes: GaussianCoordinates,
    provenance: Provenance,
}

fn mode_coordinates(grid: &LevelGrid, increments: &[f64], max_mode: usize) -> GaussianCoordinates {
    let values = (1..=max_mode)
        .map(|j| increments.iter().enumerate().map(|(i, dw)| hermite_fn(j, grid.level(i)) * dw).sum())
        .collect();
    GaussianCoordinates::new(values)
}

impl NoiseRealization {
    pub fn zero(grid: LevelGrid, max_mode: usize) -> Self {
        Self {
            grid,
            increments: vec![0.0; grid.len],
            modes: GaussianCoordinates::zeros(max_mode),
            provenance: Provenance::Zero,
        }
    }

    pub fn from_increments(grid: LevelGrid, increments: Vec<f64>, max_mode: usize) -> Result<Self> {
        if increments.len() != grid.len {
            return Err(Error::LengthMismatch { expected: grid.len, got: increments.len() });
        }
        let modes = mode_coordinates(&grid, &increments, max_mode);
        Ok(Self { grid, increments, modes, provenance: Provenance::GridFirst })
    }

    /// ΔW_i ~ N(0, Δa) independently.
    pub fn sample_grid_first<R: Rng + ?Sized>(grid: LevelGrid, max_mode: usize, rng: &mut R) -> Self {
        let sd = grid.delta.sqrt();
        let increments: Vec<f64> = (0..grid.len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let modes = mode_coordinates(&grid, &increments, max_mode);
        Self { grid, increments, modes, provenance: Provenance::GridFirst }
    }

    /// Draws g ~ N(0, Δa EᵀE), the exact law of the discrete mode view, and
    /// then the increments from their Gaussian law given Eᵀ ΔW = g.
    pub fn sample_mode_first<R: Rng + ?Sized>(grid: LevelGrid, max_mode: usize, rng: &mut R) -> Result<Self> {
        let n = grid.len;
        if max_mode > n {
            return Err(Error::InvalidArgument(format!("{max_mode} modes need at least as many levels, got {n}")));
        }
        let e = DMatrix::from_fn(n, max_mode, |i, j| hermite_fn(j + 1, grid.level(i)));
        let ete = e.transpose() * &e;
        let chol = (ete.clone() * grid.delta)
            .cholesky()
            .ok_or_else(|| Error::Degenerate("mode Gram matrix is not positive definite on this grid".into()))?;
        let z = DVector::from_fn(max_mode, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = chol.l() * z;
        let ete_inv = ete
            .cholesky()
            .ok_or_else(|| Error::Degenerate("mode Gram matrix is not positive definite on this grid".into()))?;
        let eta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sd = grid.delta.sqrt();
        // ζ = E (EᵀE)⁻¹ g / sqrt(Δa) + (I - E (EᵀE)⁻¹ Eᵀ) η and ΔW = sqrt(Δa) ζ.
        let mean_part = &e * ete_inv.solve(&g) / sd;
        let proj = &e * ete_inv.solve(&(e.transpose() * &eta));
        let zeta = mean_part + eta - proj;
        let increments: Vec<f64> = zeta.iter().map(|v| sd * v).collect();
        Ok(Self { grid, increments, modes: GaussianCoordinates::new(g.iter().copied().collect()), provenance: Provenance::ModeFirst })
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn modes(&self) -> &GaussianCoordinates {
        &self.modes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// W_φ = Σ_i φ(a_i) ΔW_i.
    pub fn w_phi(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.increments.iter().enumerate().map(|(i, dw)| phi(self.grid.level(i)) * dw).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiSample {
    /// Σ_i L̂(a_i) ΔW_i.
    pub stochastic_integral: f64,
    /// ½ Δa Σ_i L̂(a_i)².
    pub quadratic_term: f64,
}

impl PsiSample {
    pub fn value(&self) -> f64 {
        self.stochastic_integral - self.quadratic_term
    }
}

fn same_grid(a: &LevelGrid, b: &LevelGrid) -> Result<()> {
    if a.len != b.len || (a.first - b.first).abs() > 1e-12 || (a.delta - b.delta).abs() > 1e-15 {
        return Err(Error::GridMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn psi_from(values: &[f64], delta: f64, increments: &[f64]) -> PsiSample {
    let mut si = 0.0;
    let mut sq = 0.0;
    for (l, dw) in values.iter().zip(increments) {
        si += l * dw;
        sq += l * l;
    }
    PsiSample { stochastic_integral: si, quadratic_term: 0.5 * delta * sq }
}

pub fn psi_sample(profile: &LocalTimeProfile, noise: &NoiseRealization) -> Result<PsiSample> {
    same_grid(&profile.grid, &noise.grid)?;
    Ok(psi_from(&profile.values, profile.grid.delta, &noise.increments))
}

/// Mean with a delete-one-group jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    /// (value - target) / stderr, or 0 when both vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.value - target;
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.2e}", self.value, self.stderr)
    }
}

const JACKKNIFE_GROUPS: usize = 100;

pub fn jackknife(samples: &[f64]) -> Estimate {
    let n = samples.len();
    if n == 0 {
        return Estimate { value: f64::NAN, stderr: f64::NAN, samples: 0 };
    }
    let total: f64 = samples.iter().sum();
    let mean = total / n as f64;
    let g = JACKKNIFE_GROUPS.min(n);
    if g < 2 {
        return Estimate { value: mean, stderr: f64::NAN, samples: n };
    }
    let bounds: Vec<usize> = (0..=g).map(|k| k * n / g).collect();
    let loo: Vec<f64> = bounds
        .windows(2)
        .map(|w| {
            let s: f64 = samples[w[0]..w[1]].iter().sum();
            (total - s) / (n - (w[1] - w[0])) as f64
        })
        .collect();
    let bar = loo.iter().sum::<f64>() / g as f64;
    let var = (g - 1) as f64 / g as f64 * loo.iter().map(|v| (v - bar).powi(2)).sum::<f64>();
    Estimate { value: mean, stderr: var.sqrt(), samples: n }
}

/// Per-path samples in path order. Each batch gets its own substream and its
/// own path buffer.
pub fn path_samples<T, F>(n_paths: usize, t: f64, x: f64, stream: &Stream, settings: &McSettings, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&BrownianPath, &mut ChaCha8Rng) -> Result<T> + Sync + Send,
{
    let plan = batches(n_paths, settings.batch_size);
    let per_batch = par::try_map(plan.len(), |b| {
        let (_, len) = plan[b];
        let mut rng = stream.batch(b as u64);
        let mut path = BrownianPath::empty(t, settings.dt, x)?;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            path.resample(&mut rng);
            out.push(f(&path, &mut rng)?);
        }
        Ok(out)
    })?;
    Ok(per_batch.into_iter().flatten().collect())
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_PATHS} paths, got {n_paths}")));
    }
    Ok(())
}

fn check_spread(ends: &[f64]) -> Result<()> {
    if ends.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Degenerate("every simulated path ended at the same point".into()));
    }
    Ok(())
}

/// Ψ over `n_noise` independent grid-first noise draws at one fixed path.
pub fn psi_conditional_samples(
    profile: &LocalTimeProfile,
    n_noise: usize,
    stream: &Stream,
    settings: &McSettings,
) -> Result<Vec<PsiSample>> {
    let plan = batches(n_noise, settings.batch_size);
    let sd = profile.grid.delta.sqrt();
    let per_batch = par::map(plan.len(), |b| {
        let mut rng = stream.batch(b as u64);
        let mut dw = vec![0.0; profile.grid.len];
        (0..plan[b].1)
            .map(|_| {
                dw.iter_mut().for_each(|v| *v = sd * rng.sample::<f64, _>(StandardNormal));
                psi_from(&profile.values, profile.grid.delta, &dw)
            })
            .collect::<Vec<_>>()
    });
    Ok(per_batch.into_iter().flatten().collect())
}

/// Ψ_{t,x} with a fresh path and a fresh grid-first noise per sample.
pub fn psi_joint_samples(t: f64, x: f64, n: usize, stream: &Stream, settings: &McSettings) -> Result<Vec<PsiSample>> {
    let grid = LevelGrid::for_horizon(x, t, settings.delta_a)?;
    let sd = grid.delta.sqrt();
    path_samples(n, t, x, stream, settings, |path, rng| {
        let mut l = vec![0.0; grid.len];
        accumulate_local_time(path, &grid, &mut l)?;
        let dw: Vec<f64> = (0..grid.len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(psi_from(&l, grid.delta, &dw))
    })
}

/// Local-time profiles of independent paths from x on the default level grid.
pub fn local_time_samples<T, F>(t: f64, x: f64, n_paths: usize, stream: &Stream, settings: &McSettings, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&LocalTimeProfile) -> T + Sync + Send,
{
    let grid = LevelGrid::for_horizon(x, t, settings.delta_a)?;
    path_samples(n_paths, t, x, stream, settings, |path, _| Ok(f(&local_time(path, &grid)?)))
}

/// u(t, x; ω) at the fixed noise ω: E^B[u₀(B_t^x) exp(Ψ_{t,x})].
pub fn fk_conditional_estimate(
    t: f64,
    x: f64,
    u0: &InitialCondition,
    noise: &NoiseRealization,
    n_paths: usize,
    stream: &Stream,
    settings: &McSettings,
) -> Result<Estimate> {
    check_paths(n_paths)?;
    let grid = noise.grid;
    let pairs = path_samples(n_paths, t, x, stream, settings, |path, _| {
        let mut buf = vec![0.0; grid.len];
        accumulate_local_time(path, &grid, &mut buf)?;
        let psi = psi_from(&buf, grid.delta, &noise.increments);
        Ok((path.end(), u0.eval(path.end()) * psi.value().exp()))
    })?;
    let ends: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    check_spread(&ends)?;
    let samples: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(jackknife(&samples))
}

/// E^W of the conditional estimate, over `n_noise` independent noise draws on
/// the default level grid. The error bar is the spread of the conditional
/// estimates.
pub fn fk_double_average(
    t: f64,
    x: f64,
    u0: &InitialCondition,
    n_noise: usize,
    n_paths: usize,
    stream: &Stream,
    settings: &McSettings,
) -> Result<Estimate> {
    let grid = LevelGrid::for_horizon(x, t, settings.delta_a)?;
    let noise_stream = stream.child("noise");
    let path_stream = stream.child("paths");
    let mut values = Vec::with_capacity(n_noise);
    for k in 0..n_noise {
        let mut rng = noise_stream.batch(k as u64);
        let noise = NoiseRealization::sample_grid_first(grid, 0, &mut rng);
        let est = fk_conditional_estimate(t, x, u0, &noise, n_paths, &path_stream.child(&k.to_string()), settings)?;
        values.push(est.value);
    }
    Ok(jackknife(&values))
}

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A bounded test function φ with an optional derivative.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    f: Scalar,
    df: Option<Scalar>,
    sup_norm: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction({})", self.label)
    }
}

impl TestFunction {
    pub fn custom(
        label: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: Option<Scalar>,
        sup_norm: f64,
    ) -> Self {
        Self { label: label.to_string(), f: Arc::new(f), df, sup_norm }
    }

    pub fn zero() -> Self {
        Self::custom("zero", |_| 0.0, Some(Arc::new(|_| 0.0)), 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::custom(&format!("constant({c})"), move |_| c, Some(Arc::new(|_| 0.0)), c.abs())
    }

    /// c e_j.
    pub fn hermite_mode(c: f64, j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidArgument("Hermite functions are indexed from 1".into()));
        }
        // |e_j| <= π^{-1/4}.
        let sup = c.abs() * PI.powf(-0.25);
        let df = move |x: f64| {
            let up = if j >= 2 { ((j - 1) as f64 / 2.0).sqrt() * hermite_fn(j - 1, x) } else { 0.0 };
            c * (up - (j as f64 / 2.0).sqrt() * hermite_fn(j + 1, x))
        };
        Ok(Self::custom(&format!("{c}*e{j}"), move |x| c * hermite_fn(j, x), Some(Arc::new(df)), sup))
    }

    /// a exp(-(x - c)² / (2w²)).
    pub fn gaussian_bump(amplitude: f64, center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument("bump width must be positive".into()));
        }
        let f = move |x: f64| amplitude * (-0.5 * ((x - center) / width).powi(2)).exp();
        let df = move |x: f64| -amplitude * (x - center) / (width * width) * (-0.5 * ((x - center) / width).powi(2)).exp();
        Ok(Self::custom(&format!("bump({amplitude},{center},{width})"), f, Some(Arc::new(df)), amplitude.abs()))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        self.df.as_ref().map(|d| d(x))
    }

    pub fn has_derivative(&self) -> bool {
        self.df.is_some()
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// ⟨φ, e_j⟩ for j = 1..=J by composite Gauss-Legendre on [-L, L].
    pub fn modes(&self, max_mode: usize, half_width: f64) -> Vec<f64> {
        let panels = (2.0 * half_width / 0.25).ceil() as usize;
        let rule = quad::composite_legendre(-half_width, half_width, panels, 16);
        (1..=max_mode).map(|j| rule.integrate(|x| self.eval(x) * hermite_fn(j, x))).collect()
    }

    /// ∫_{-L}^{L} φ².
    pub fn squared_norm(&self, half_width: f64) -> f64 {
        let panels = (2.0 * half_width / 0.25).ceil() as usize;
        quad::composite_legendre(-half_width, half_width, panels, 16).integrate(|x| self.eval(x).powi(2))
    }

    /// Σ_{j<=J} ⟨φ, e_j⟩ e_j.
    pub fn projected(&self, max_mode: usize, half_width: f64) -> Self {
        let c = self.modes(max_mode, half_width);
        let c2 = c.clone();
        let sup = c.iter().map(|v| v.abs()).sum::<f64>() * PI.powf(-0.25);
        let f = move |x: f64| c.iter().enumerate().map(|(k, v)| v * hermite_fn(k + 1, x)).sum();
        let df = move |x: f64| {
            c2.iter()
                .enumerate()
                .map(|(k, v)| {
                    let j = k + 1;
                    let up = if j >= 2 { ((j - 1) as f64 / 2.0).sqrt() * hermite_fn(j - 1, x) } else { 0.0 };
                    v * (up - (j as f64 / 2.0).sqrt() * hermite_fn(j + 1, x))
                })
                .sum()
        };
        Self::custom(&format!("{}|J={max_mode}", self.label), f, Some(Arc::new(df)), sup)
    }
}

fn guard_exponent(phi: &TestFunction, t: f64) -> Result<()> {
    if phi.sup_norm() * t > EXPONENT_GUARD {
        return Err(Error::Overflow(format!("sup|φ| t = {} exceeds {EXPONENT_GUARD}", phi.sup_norm() * t)));
    }
    Ok(())
}

/// S(u(t, x))(φ) = E^B[u₀(B_t^x) exp(∫_0^t φ(B_s^x) ds)].
pub fn s_transform_mc(
    t: f64,
    x: f64,
    u0: &InitialCondition,
    phi: &TestFunction,
    n_paths: usize,
    stream: &Stream,
    settings: &McSettings,
) -> Result<Estimate> {
    check_paths(n_paths)?;
    guard_exponent(phi, t)?;
    let f = |y: f64| phi.eval(y);
    let samples = path_samples(n_paths, t, x, stream, settings, |path, _| {
        Ok(u0.eval(path.end()) * trapezoid_functional(path, &f).exp())
    })?;
    Ok(jackknife(&samples))
}

/// S(∂ₓu(t, x))(φ) = E^B[(u₀'(B_t^x) + u₀(B_t^x) ∫_0^t φ'(B_s^x) ds) exp(∫_0^t φ(B_s^x) ds)].
pub fn s_transform_dx_mc(
    t: f64,
    x: f64,
    u0: &InitialCondition,
    phi: &TestFunction,
    n_paths: usize,
    stream: &Stream,
    settings: &McSettings,
) -> Result<Estimate> {
    check_paths(n_paths)?;
    guard_exponent(phi, t)?;
    if !u0.has_derivative() || !phi.has_derivative() {
        return Err(Error::MissingDerivative);
    }
    let f = |y: f64| phi.eval(y);
    let df = |y: f64| phi.derivative(y).unwrap_or(0.0);
    let samples = path_samples(n_paths, t, x, stream, settings, |path, _| {
        let b = path.end();
        let e = trapezoid_functional(path, &f).exp();
        let d0 = u0.derivative(b).unwrap_or(0.0);
        Ok((d0 + u0.eval(b) * trapezoid_functional(path, &df)) * e)
    })?;
    Ok(jackknife(&samples))
}

/// Lattice for the deterministic Feynman-Kac equation v_t = ½ v'' + φ v.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub dx: f64,
    pub dt: f64,
    pub half_width: f64,
}

impl Default for PdeGrid {
    fn default() -> Self {
        Self { dx: 0.025, dt: 0.0025, half_width: 12.0 }
    }
}

/// Solves v_t = ½ v'' + φ v, v(0) = u₀ by Crank-Nicolson with reflecting ends
/// and returns (v(t, x), ∂ₓv(t, x)). By Feynman-Kac v(t, x) = S(u(t, x))(φ).
pub fn s_transform_pde(t: f64, x: f64, u0: &InitialCondition, phi: &TestFunction, grid: &PdeGrid) -> Result<(f64, f64)> {
    if !(t > 0.0 && grid.dx > 0.0 && grid.dt > 0.0 && grid.half_width > x.abs() + 10.0 * grid.dx) {
        return Err(Error::InvalidArgument("PDE grid must be positive and contain x well inside".into()));
    }
    let n = (2.0 * grid.half_width / grid.dx).round() as usize + 1;
    let xs: Vec<f64> = (0..n).map(|i| -grid.half_width + i as f64 * grid.dx).collect();
    let pot: Vec<f64> = xs.iter().map(|&y| phi.eval(y)).collect();
    let mut v: Vec<f64> = xs.iter().map(|&y| u0.eval(y)).collect();
    let steps = step_count(t, grid.dt);
    let r = 0.5 / (grid.dx * grid.dx);
    let mut rhs = vec![0.0; n];
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for s in 0..steps {
        let h = if s + 1 == steps { t - s as f64 * grid.dt } else { grid.dt };
        let c = 0.5 * h;
        for i in 0..n {
            let left = if i == 0 { v[1] } else { v[i - 1] };
            let right = if i == n - 1 { v[n - 2] } else { v[i + 1] };
            rhs[i] = v[i] + c * (r * (left - 2.0 * v[i] + right) + pot[i] * v[i]);
            diag[i] = 1.0 + c * (2.0 * r - pot[i]);
            sub[i] = if i == 0 { 0.0 } else if i == n - 1 { -2.0 * c * r } else { -c * r };
            sup[i] = if i == 0 { -2.0 * c * r } else if i == n - 1 { 0.0 } else { -c * r };
        }
        thomas(&sub, &diag, &sup, &mut rhs);
        std::mem::swap(&mut v, &mut rhs);
    }
    let u = (x + grid.half_width) / grid.dx;
    let i = u.floor() as usize;
    let f = u - i as f64;
    let w = [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ];
    let mut value = 0.0;
    let mut slope = 0.0;
    for (m, wm) in w.iter().enumerate() {
        let k = i + m - 1;
        value += wm * v[k];
        slope += wm * (-v[k + 2] + 8.0 * v[k + 1] - 8.0 * v[k - 1] + v[k - 2]) / (12.0 * grid.dx);
    }
    Ok((value, slope))
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = sup[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / d;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Exact expectation of the histogram estimator L̂ at the starting level:
/// Σ_i (t_{i+1} - t_i) P(|B_{t_i} - x| < Δa/2) / Δa.
pub fn expected_local_time_at_start(t: f64, dt: f64, delta_a: f64) -> f64 {
    let m = step_count(t, dt);
    let mut acc = dt;
    for i in 1..m {
        let s = i as f64 * dt;
        let w = if i + 1 == m { t - s } else { dt };
        acc += w * erf(0.5 * delta_a / (2.0 * s).sqrt());
    }
    acc / delta_a
}

/// E L_x(t) = sqrt(2t/π) for the continuum local time.
pub fn local_time_at_start_limit(t: f64) -> f64 {
    (2.0 * t / PI).sqrt()
}

/// E ∫ L_a(t)² da = 8 t^{3/2} / (3 sqrt(2π)).
pub fn squared_local_time_limit(t: f64) -> f64 {
    8.0 * t.powf(1.5) / (3.0 * (2.0 * PI).sqrt())
}

/// E(1 - |D|/a)⁺ for D ~ N(0, v).
fn same_bin_probability(v: f64, a: f64) -> f64 {
    let s = v.sqrt();
    erf(a / (s * 2f64.sqrt())) - 2.0 * s / (a * (2.0 * PI).sqrt()) * (1.0 - (-a * a / (2.0 * v)).exp())
}

/// Expectation of Δa Σ L̂² when the bin lattice has a uniformly random
/// offset: (1/Δa) Σ_{i,j} w_i w_j E(1 - |B_{t_i} - B_{t_j}|/Δa)⁺. The model
/// states the discretization bias against the continuum value.
pub fn expected_squared_local_time(t: f64, dt: f64, delta_a: f64) -> f64 {
    let m = step_count(t, dt);
    let last = t - (m - 1) as f64 * dt;
    let mut acc = (m - 1) as f64 * dt * dt + last * last;
    for lag in 1..m {
        let pair_weight = (m - lag - 1) as f64 * dt * dt + dt * last;
        acc += 2.0 * pair_weight * same_bin_probability(lag as f64 * dt, delta_a);
    }
    acc / delta_a
}

/// Long-format CSV of paths: (path_id, t_i, B_i).
pub fn path_table(paths: &[BrownianPath]) -> Table {
    let mut table = Table::new(&["path_id", "t_i", "B_i"]);
    for (id, p) in paths.iter().enumerate() {
        for (i, &b) in p.positions.iter().enumerate() {
            table.push(vec![Cell::from(id), p.time(i).into(), b.into()]);
        }
    }
    table
}

/// Long-format CSV of profiles: (path_id, a_k, L_k).
pub fn profile_table(profiles: &[LocalTimeProfile]) -> Table {
    let mut table = Table::new(&["path_id", "a_k", "L_k"]);
    for (id, p) in profiles.iter().enumerate() {
        for (k, &l) in p.values.iter().enumerate() {
            table.push(vec![Cell::from(id), p.grid.level(k).into(), l.into()]);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn total_mass_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let path = simulate_path(1.0, 0.0007, 0.4, &mut rng).unwrap();
        let grid = LevelGrid::for_horizon(0.4, 1.0, 0.05).unwrap();
        let prof = local_time(&path, &grid).unwrap();
        assert!((prof.total() - 1.0).abs() < 1e-12);
        assert!(prof.values().iter().all(|&v| v >= 0.0));
        assert_eq!(path.positions()[0], 0.4);
    }

    #[test]
    fn coverage_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = simulate_path(1.0, 0.01, 0.0, &mut rng).unwrap();
        let narrow = LevelGrid::centered(0.0, 0.05, 0.05).unwrap();
        assert!(matches!(local_time(&path, &narrow), Err(Error::Coverage(_))));
    }

    #[test]
    fn occupation_of_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let path = simulate_path(0.75, 0.01, 0.0, &mut rng).unwrap();
        assert!((occupation_functional(&path, |_| 2.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_psi() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let path = simulate_path(1.0, 0.001, 0.0, &mut rng).unwrap();
        let grid = LevelGrid::for_horizon(0.0, 1.0, 0.0632).unwrap();
        let prof = local_time(&path, &grid).unwrap();
        let psi = psi_sample(&prof, &NoiseRealization::zero(grid, 3)).unwrap();
        assert_eq!(psi.stochastic_integral, 0.0);
        assert!(psi.value() < 0.0);
        assert!((psi.value() + 0.5 * prof.squared_integral()).abs() < 1e-14);
        let other = LevelGrid::for_horizon(0.0, 1.0, 0.05).unwrap();
        assert!(matches!(psi_sample(&prof, &NoiseRealization::zero(other, 3)), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn jackknife_of_iid_mean_matches_the_textbook_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let e = jackknife(&v);
        let mean = v.iter().sum::<f64>() / 1000.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
        assert!((e.value - mean).abs() < 1e-14);
        assert!((e.stderr / (sd / 1000f64.sqrt()) - 1.0).abs() < 0.3);
    }

    #[test]
    fn hermite_mode_derivative_matches_finite_difference() {
        let phi = TestFunction::hermite_mode(0.5, 3).unwrap();
        let h = 1e-5;
        for &x in &[-1.0, 0.2, 1.7] {
            let fd = (phi.eval(x + h) - phi.eval(x - h)) / (2.0 * h);
            assert!((fd - phi.derivative(x).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn pde_matches_heat_flow_without_potential() {
        let grid = PdeGrid::default();
        let (v, dv) = s_transform_pde(1.0, 0.3, &InitialCondition::sine(1.0, 1.0), &TestFunction::zero(), &grid).unwrap();
        // The three-point Laplacian damps sin by exp(-t (1 - dx²/12) / 2).
        let exact = (-0.5 * (1.0 - grid.dx * grid.dx / 12.0)).exp();
        assert!((v - exact * 0.3f64.sin()).abs() < 1e-6);
        assert!((dv - exact * 0.3f64.cos()).abs() < 1e-6);
        let (c, _) = s_transform_pde(0.8, 0.0, &InitialCondition::constant(1.0), &TestFunction::constant(0.5), &PdeGrid::default()).unwrap();
        assert!((c - 0.4f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn bias_models_approach_their_limits() {
        let a = expected_local_time_at_start(1.0, 1e-5, 0.002);
        assert!((a - local_time_at_start_limit(1.0)).abs() < 5e-3);
        let limit = squared_local_time_limit(1.0);
        let gaps: Vec<f64> = [(1e-3, 0.0632), (1e-4, 0.02), (1e-5, 0.00632)]
            .iter()
            .map(|&(dt, da)| limit - expected_squared_local_time(1.0, dt, da))
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] > 0.0 && w[1] < 0.5 * w[0]), "{gaps:?}");
    }
}
