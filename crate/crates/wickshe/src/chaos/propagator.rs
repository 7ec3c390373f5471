//! Finite-difference oracle for the lower-triangular propagator system
//!
//!   ∂ₜu_α = ½ ∂ₓₓu_α + Σ_j sqrt(α_j) e_j(x) u_{α - ε_j},   u_α(0) = u₀ 𝟙{α = 0},
//!
//! on [-L, L] with reflecting ends. Within a time step the levels |α| = n are
//! advanced in increasing n, so the forcing at the new time level is known.

use std::collections::HashMap;
use std::sync::Arc;

use crate::basis::{hermite_fn, IndexSet, TruncationSpec};
use crate::error::{Error, Result};
use crate::kernels::InitialCondition;
use crate::par;

use super::ChaosCoefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    CrankNicolson,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorGrid {
    pub dt: f64,
    pub dx: f64,
    pub half_width: f64,
    pub scheme: Scheme,
    /// Test hook: with forcing off every |α| >= 1 coefficient stays zero.
    pub forcing: bool,
}

impl Default for PropagatorGrid {
    fn default() -> Self {
        Self { dt: 0.005, dx: 0.05, half_width: 12.0, scheme: Scheme::CrankNicolson, forcing: true }
    }
}

impl PropagatorGrid {
    fn validate(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dx > 0.0 && self.half_width > self.dx) {
            return Err(Error::InvalidArgument("propagator grid needs dt > 0, dx > 0 and L > dx".into()));
        }
        if self.scheme == Scheme::Explicit && self.dt > 0.5 * self.dx * self.dx {
            return Err(Error::Cfl(format!("explicit scheme needs dt <= dx²/2 = {}, got {}", 0.5 * self.dx * self.dx, self.dt)));
        }
        let cells = (2.0 * self.half_width / self.dx).round();
        if ((cells * self.dx) - 2.0 * self.half_width).abs() > 1e-9 * self.half_width {
            return Err(Error::InvalidArgument("dx must divide 2L".into()));
        }
        Ok(cells as usize + 1)
    }
}

/// Lattice solution with snapshots at the requested times.
#[derive(Debug, Clone)]
pub struct PropagatorSolution {
    pub grid: PropagatorGrid,
    set: Arc<IndexSet>,
    xs: Vec<f64>,
    times: Vec<f64>,
    snapshots: Vec<Vec<Vec<f64>>>,
}

struct Tridiagonal {
    c_prime: Vec<f64>,
    inv_denom: Vec<f64>,
    r: f64,
}

impl Tridiagonal {
    /// (I - (h/2) A) with A = ½ D₂ and reflecting ends.
    fn new(n: usize, h: f64, dx: f64) -> Self {
        let r = 0.25 * h / (dx * dx);
        let diag = 1.0 + 2.0 * r;
        let mut c_prime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        for i in 0..n {
            let sub = if i == 0 { 0.0 } else if i == n - 1 { -2.0 * r } else { -r };
            let sup = if i == 0 { -2.0 * r } else if i == n - 1 { 0.0 } else { -r };
            let d = diag - if i > 0 { sub * c_prime[i - 1] } else { 0.0 };
            inv_denom[i] = 1.0 / d;
            c_prime[i] = sup / d;
        }
        Self { c_prime, inv_denom, r }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_denom[0];
        for i in 1..n - 1 {
            rhs[i] = (rhs[i] + self.r * rhs[i - 1]) * self.inv_denom[i];
        }
        rhs[n - 1] = (rhs[n - 1] + 2.0 * self.r * rhs[n - 2]) * self.inv_denom[n - 1];
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }
}

/// out += c ½ D₂ u with reflecting ends.
fn add_half_laplacian(u: &[f64], c: f64, inv_dx2: f64, out: &mut [f64]) {
    let n = u.len();
    let k = 0.5 * c * inv_dx2;
    out[0] += k * 2.0 * (u[1] - u[0]);
    for i in 1..n - 1 {
        out[i] += k * (u[i - 1] - 2.0 * u[i] + u[i + 1]);
    }
    out[n - 1] += k * 2.0 * (u[n - 2] - u[n - 1]);
}

struct Sources {
    /// For each α: (position of α - ε_j, sqrt(α_j), j).
    terms: Vec<Vec<(usize, f64, usize)>>,
}

impl Sources {
    fn new(set: &IndexSet) -> Self {
        let terms = set
            .indices()
            .iter()
            .map(|a| {
                (1..=a.max_mode())
                    .filter_map(|j| {
                        let lower = a.lowered(j)?;
                        Some((set.position(&lower).expect("truncations are closed downward"), (a.get(j) as f64).sqrt(), j))
                    })
                    .collect()
            })
            .collect();
        Self { terms }
    }

    fn forcing(&self, k: usize, state: &[Vec<f64>], modes: &[Vec<f64>], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(pos, c, j) in &self.terms[k] {
            for ((o, e), l) in out.iter_mut().zip(&modes[j - 1]).zip(&state[pos]) {
                *o += c * e * l;
            }
        }
    }
}

/// Runs the sweep and stores the full coefficient lattice at each time in
/// `times` (positive, any order).
pub fn propagator_oracle(
    spec: TruncationSpec,
    u0: &InitialCondition,
    grid: &PropagatorGrid,
    times: &[f64],
) -> Result<PropagatorSolution> {
    let nx = grid.validate()?;
    let mut targets: Vec<f64> = times.to_vec();
    if targets.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument("snapshot times must be positive".into()));
    }
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    let set = IndexSet::new(spec)?;
    let xs: Vec<f64> = (0..nx).map(|i| -grid.half_width + i as f64 * grid.dx).collect();
    let modes: Vec<Vec<f64>> = (1..=spec.max_mode)
        .map(|j| xs.iter().map(|&x| if grid.forcing { hermite_fn(j, x) } else { 0.0 }).collect())
        .collect();
    let sources = Sources::new(&set);
    let mut state: Vec<Vec<f64>> = vec![vec![0.0; nx]; set.len()];
    state[0] = xs.iter().map(|&x| u0.eval(x)).collect();
    let mut force: Vec<Vec<f64>> = vec![vec![0.0; nx]; set.len()];
    for (k, f) in force.iter_mut().enumerate() {
        sources.forcing(k, &state, &modes, f);
    }
    let bound = 1e8 * (1.0 + u0.sup_norm());
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let levels: Vec<std::ops::Range<usize>> = (0..=spec.max_order).map(|n| set.degree_range(n)).collect();
    let mut solvers: HashMap<u64, Tridiagonal> = HashMap::new();

    let mut snapshots = Vec::with_capacity(targets.len());
    let mut now = 0.0;
    for &target in &targets {
        while now < target - 1e-12 * target {
            let h = grid.dt.min(target - now);
            if grid.scheme == Scheme::CrankNicolson {
                solvers.entry(h.to_bits()).or_insert_with(|| Tridiagonal::new(nx, h, grid.dx));
            }
            let solver = solvers.get(&h.to_bits());
            for range in &levels {
                let updated: Vec<(Vec<f64>, Vec<f64>)> = par::map(range.len(), |off| {
                    let k = range.start + off;
                    let old = &state[k];
                    let mut f_new = vec![0.0; nx];
                    sources.forcing(k, &state, &modes, &mut f_new);
                    let f_old = &force[k];
                    let mut next = old.clone();
                    match grid.scheme {
                        Scheme::CrankNicolson => {
                            add_half_laplacian(old, 0.5 * h, inv_dx2, &mut next);
                            for i in 0..nx {
                                next[i] += 0.5 * h * (f_old[i] + f_new[i]);
                            }
                            solver.expect("solver cached above").solve(&mut next);
                        }
                        Scheme::Explicit => {
                            add_half_laplacian(old, h, inv_dx2, &mut next);
                            for i in 0..nx {
                                next[i] += h * f_old[i];
                            }
                        }
                    }
                    (next, f_new)
                });
                for (off, (next, f_new)) in updated.into_iter().enumerate() {
                    state[range.start + off] = next;
                    force[range.start + off] = f_new;
                }
                // Explicit steps must use lower levels at the old time, so
                // their forcing is recomputed from the finished step below.
            }
            if grid.scheme == Scheme::Explicit {
                for (k, slot) in force.iter_mut().enumerate() {
                    let mut f = vec![0.0; nx];
                    sources.forcing(k, &state, &modes, &mut f);
                    *slot = f;
                }
            }
            now += h;
            let worst = state.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
            if worst > bound {
                return Err(Error::Unstable(format!("coefficient norm {worst:e} at t = {now}")));
            }
        }
        snapshots.push(state.clone());
    }
    Ok(PropagatorSolution { grid: grid.clone(), set, xs, times: targets, snapshots })
}

impl PropagatorSolution {
    pub fn index_set(&self) -> &Arc<IndexSet> {
        &self.set
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn snapshot(&self, t: f64) -> Result<&Vec<Vec<f64>>> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.max(1.0))
            .map(|i| &self.snapshots[i])
            .ok_or_else(|| Error::InvalidArgument(format!("no propagator snapshot at t = {t}")))
    }

    /// Lattice values of u_α(t, ·) for index position k.
    pub fn lattice(&self, t: f64, k: usize) -> Result<&[f64]> {
        Ok(&self.snapshot(t)?[k])
    }

    fn stencil(&self, x: f64) -> Result<(usize, [f64; 4])> {
        let n = self.xs.len();
        let u = (x + self.grid.half_width) / self.grid.dx;
        if u < 2.0 || u > (n - 3) as f64 {
            return Err(Error::InvalidArgument(format!("x = {x} is too close to the lattice edge")));
        }
        let i = u.floor() as usize;
        let f = u - i as f64;
        // Cubic Lagrange weights on nodes i-1, i, i+1, i+2.
        let w = [
            -f * (f - 1.0) * (f - 2.0) / 6.0,
            (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
            -(f + 1.0) * f * (f - 2.0) / 2.0,
            (f + 1.0) * f * (f - 1.0) / 6.0,
        ];
        Ok((i - 1, w))
    }

    fn at(&self, t: f64, x: f64, derivative: bool) -> Result<ChaosCoefficients> {
        let snap = self.snapshot(t)?;
        let (start, w) = self.stencil(x)?;
        let inv = 1.0 / (12.0 * self.grid.dx);
        let n = self.xs.len();
        let values = snap
            .iter()
            .map(|v| {
                (0..4)
                    .map(|m| {
                        let i = start + m;
                        let node = if derivative {
                            if i < 2 || i + 2 >= n {
                                return 0.0;
                            }
                            (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) * inv
                        } else {
                            v[i]
                        };
                        w[m] * node
                    })
                    .sum()
            })
            .collect();
        ChaosCoefficients::from_values((t, x), self.set.clone(), values)
    }

    /// u_α(t, x) for every α, by cubic interpolation off the lattice.
    pub fn coefficients_at(&self, t: f64, x: f64) -> Result<ChaosCoefficients> {
        self.at(t, x, false)
    }

    /// 𝔎_α(t, x) from fourth-order centered lattice differences.
    pub fn dx_coefficients_at(&self, t: f64, x: f64) -> Result<ChaosCoefficients> {
        self.at(t, x, true)
    }
}
