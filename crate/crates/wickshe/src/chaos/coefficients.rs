//! Quadrature path for u_α and 𝔎_α.
//!
//! With y_n = x + sqrt(t - s_n) Z_n and y_i = y_{i+1} + sqrt(s_{i+1} - s_i) Z_i
//! the heat-kernel chain becomes a Gaussian expectation, so
//!
//!   u_α(t, x) = sqrt(α!) Σ_k ∫_{𝕋ⁿ} E[ Π_i e_{k_i}(y_i) u_(0)(s_1, y_1) ] ds
//!
//! with k running over distinct arrangements of the characteristic vector.
//! For 𝔎_α the leading ∂ₓp(t - s_n, x - y_n) turns into Z_n / sqrt(t - s_n).

use std::sync::Arc;

use crate::basis::{distinct_arrangements, hermite_fn, IndexSet, MultiIndex, TruncationSpec};
use crate::error::{Error, Result};
use crate::kernels::{
    apply_heat_semigroup, apply_heat_semigroup_dx, simplex_rule, InitialCondition, QuadratureGrid, SimplexSpec,
    SIMPLEX_ORDER_CAP,
};
use crate::par;
use crate::quad::{self, Rule};

use super::ChaosCoefficients;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Gauss points per simplex axis.
    pub simplex_points: usize,
    /// Grading exponent toward the singular time endpoints.
    pub grading: f64,
    /// Gauss-Hermite nodes per spatial dimension, by chaos order 1..=4.
    pub hermite_nodes: [usize; SIMPLEX_ORDER_CAP],
    /// Relative change allowed between the base and refined mesh for 𝔎_α.
    pub refinement_tolerance: f64,
    pub check_refinement: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            simplex_points: 24,
            grading: 2.0,
            hermite_nodes: [48, 32, 16, 10],
            refinement_tolerance: 1e-6,
            check_refinement: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lead {
    Value,
    Dx,
}

#[derive(Debug, Clone)]
pub struct ChaosSolver {
    u0: InitialCondition,
    grid: QuadratureGrid,
    opts: SolverOptions,
}

struct Chain<'a> {
    u0: &'a InitialCondition,
    rule: &'a Rule,
    modes: &'a [usize],
    taus: &'a [f64],
    s1: f64,
    lead: Lead,
}

impl Chain<'_> {
    /// Level 0 carries y_n, the last level carries y_1.
    fn expect(&self, level: usize, pos: f64) -> f64 {
        let n = self.modes.len();
        let sd = self.taus[level].sqrt();
        let mode = self.modes[n - 1 - level];
        let mut acc = 0.0;
        for (&z, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let y = pos + sd * z;
            let e = hermite_fn(mode, y);
            let rest = if level + 1 == n { self.u0.heat_flow(self.s1, y) } else { self.expect(level + 1, y) };
            let lead = if level == 0 && self.lead == Lead::Dx { z / sd } else { 1.0 };
            acc += w * lead * e * rest;
        }
        acc
    }
}

impl ChaosSolver {
    pub fn new(u0: InitialCondition, grid: QuadratureGrid, opts: SolverOptions) -> Self {
        Self { u0, grid, opts }
    }

    pub fn initial_condition(&self) -> &InitialCondition {
        &self.u0
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    fn chain_integral(&self, alpha: &MultiIndex, t: f64, x: f64, horizon: f64, lead: Lead, points: usize) -> Result<f64> {
        let n = alpha.degree();
        let spec = SimplexSpec::new(n, horizon, points, self.opts.grading)?;
        let simplex = simplex_rule(&spec)?;
        let rule = quad::gauss_hermite_normal(self.opts.hermite_nodes[n - 1]);
        let arrangements = distinct_arrangements(alpha);
        let mut taus = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..simplex.len() {
            let s = simplex.point(i);
            taus[0] = t - s[n - 1];
            for l in 1..n {
                taus[l] = s[n - l] - s[n - l - 1];
            }
            let mut node = 0.0;
            for k in &arrangements {
                let chain = Chain { u0: &self.u0, rule: &rule, modes: k, taus: &taus, s1: s[0], lead };
                node += chain.expect(0, x);
            }
            if !node.is_finite() {
                return Err(Error::NonFinite(format!("chain integrand for {alpha} at s = {s:?}")));
            }
            total += simplex.weights[i] * node;
        }
        Ok(alpha.factorial().sqrt() * total)
    }

    fn check_order(alpha: &MultiIndex) -> Result<()> {
        if alpha.degree() > SIMPLEX_ORDER_CAP {
            return Err(Error::OrderCap { order: alpha.degree(), cap: SIMPLEX_ORDER_CAP });
        }
        Ok(())
    }

    /// u_α(t, x). For α = 0 this is the heat semigroup applied to u₀.
    pub fn cs_coefficient(&self, alpha: &MultiIndex, t: f64, x: f64) -> Result<f64> {
        Self::check_order(alpha)?;
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
        }
        if alpha.is_zero() {
            return apply_heat_semigroup(&self.u0, t, x, &self.grid);
        }
        self.chain_integral(alpha, t, x, t, Lead::Value, self.opts.simplex_points)
    }

    /// 𝔎_α^ε(t, x): the ∂ₓu chaos coefficient with time simplex cut at t - ε.
    pub fn dx_coefficient(&self, alpha: &MultiIndex, t: f64, x: f64, epsilon: f64) -> Result<f64> {
        Self::check_order(alpha)?;
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
        }
        if !(0.0..t).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("epsilon must lie in [0, t), got {epsilon}")));
        }
        if alpha.is_zero() {
            return apply_heat_semigroup_dx(&self.u0, t, x, &self.grid);
        }
        let horizon = t - epsilon;
        let base = self.chain_integral(alpha, t, x, horizon, Lead::Dx, self.opts.simplex_points)?;
        if !self.opts.check_refinement {
            return Ok(base);
        }
        let fine = self.chain_integral(alpha, t, x, horizon, Lead::Dx, self.opts.simplex_points + 8)?;
        if (fine - base).abs() > self.opts.refinement_tolerance * fine.abs().max(1.0) {
            return Err(Error::NonConvergence(format!(
                "𝔎_{alpha} at ({t}, {x}) moved from {base:e} to {fine:e} under mesh refinement"
            )));
        }
        Ok(fine)
    }

    fn all(&self, spec: TruncationSpec, f: impl Fn(&MultiIndex) -> Result<f64> + Sync) -> Result<(Arc<IndexSet>, Vec<f64>)> {
        if spec.max_order > SIMPLEX_ORDER_CAP {
            return Err(Error::OrderCap { order: spec.max_order, cap: SIMPLEX_ORDER_CAP });
        }
        let set = IndexSet::new(spec)?;
        let values = par::try_map(set.len(), |i| f(&set.indices()[i]))?;
        Ok((set, values))
    }

    /// Every u_α of the truncation at (t, x), evaluated in parallel.
    pub fn coefficients(&self, spec: TruncationSpec, t: f64, x: f64) -> Result<ChaosCoefficients> {
        let (set, values) = self.all(spec, |a| self.cs_coefficient(a, t, x))?;
        ChaosCoefficients::from_values((t, x), set, values)
    }

    /// Every 𝔎_α^ε of the truncation at (t, x), evaluated in parallel.
    pub fn dx_coefficients(&self, spec: TruncationSpec, t: f64, x: f64, epsilon: f64) -> Result<ChaosCoefficients> {
        let (set, values) = self.all(spec, |a| self.dx_coefficient(a, t, x, epsilon))?;
        ChaosCoefficients::from_values((t, x), set, values)
    }
}
