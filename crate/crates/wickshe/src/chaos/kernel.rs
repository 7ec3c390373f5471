//! Multiple Wiener kernels F_n(t, x; y_1..y_n) in three forms.
//!
//! The Feynman-Kac form integrates a heat-kernel chain forward in s from the
//! starting point x; the multiple-Wiener form runs the same chain backward in
//! r = t - s and is evaluated by mapping back onto the forward chain. The
//! symmetrized chaos-side form uses the graded simplex rule instead of nested
//! adaptive quadrature, so it is computed independently.

use std::fmt;

use crate::basis::{factorial, next_permutation};
use crate::error::{Error, Result};
use crate::kernels::{p, simplex_rule, InitialCondition, SimplexSpec};
use crate::quad::{self, Tolerance};

pub const MW_ORDER_CAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelForm {
    FeynmanKac,
    MultipleWiener,
    SymmetrizedCs { points_per_axis: usize },
}

#[derive(Clone)]
pub struct WienerKernel {
    pub order: usize,
    pub point: (f64, f64),
    pub form: KernelForm,
    u0: InitialCondition,
}

impl fmt::Debug for WienerKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WienerKernel")
            .field("order", &self.order)
            .field("point", &self.point)
            .field("form", &self.form)
            .field("u0", &self.u0)
            .finish()
    }
}

impl WienerKernel {
    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.order {
            return Err(Error::LengthMismatch { expected: self.order, got: y.len() });
        }
        let (t, x) = self.point;
        match self.form {
            KernelForm::FeynmanKac => fk_kernel(t, x, &self.u0, y),
            KernelForm::MultipleWiener => mw_value(t, x, &self.u0, y),
            KernelForm::SymmetrizedCs { points_per_axis } => sym_cs_kernel(t, x, &self.u0, y, points_per_axis),
        }
    }
}

pub fn mw_kernel(n: usize, t: f64, x: f64, u0: &InitialCondition, form: KernelForm) -> Result<WienerKernel> {
    if n > MW_ORDER_CAP {
        return Err(Error::OrderCap { order: n, cap: MW_ORDER_CAP });
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    Ok(WienerKernel { order: n, point: (t, x), form, u0: u0.clone() })
}

const INNER_TOL: Tolerance = Tolerance { abs: 1e-11, rel: 1e-10, max_intervals: 2000 };

/// ∫_{𝕋ⁿ} p(s_1, z_1 - x) Π p(s_i - s_{i-1}, z_i - z_{i-1}) u_(0)(t - s_n, z_n) ds
/// by nested adaptive quadrature.
fn forward_chain(t: f64, x: f64, u0: &InitialCondition, z: &[f64]) -> Result<f64> {
    fn level(t: f64, u0: &InitialCondition, z: &[f64], i: usize, s_prev: f64, z_prev: f64) -> f64 {
        let zi = z[i];
        let last = i + 1 == z.len();
        // s = s_prev + v² absorbs the 1/sqrt(s - s_prev) peak of coincident points.
        quad::adaptive(
            |v| {
                let s = s_prev + v * v;
                let k = match (v == 0.0, zi == z_prev) {
                    (false, _) => 2.0 * v * p(v * v, zi - z_prev),
                    (true, true) => (2.0 / std::f64::consts::PI).sqrt(),
                    (true, false) => 0.0,
                };
                if k == 0.0 {
                    return 0.0;
                }
                let rest = if last { u0.heat_flow(t - s, zi) } else { level(t, u0, z, i + 1, s, zi) };
                k * rest
            },
            0.0,
            (t - s_prev).sqrt(),
            INNER_TOL,
        )
        .unwrap_or(f64::NAN)
    }
    let v = level(t, u0, z, 0, 0.0, x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonConvergence(format!("kernel chain at y = {z:?}")))
    }
}

/// Backward chain ∫ p(t - r_n, x - w_n) ... p(r_2 - r_1, w_2 - w_1) u_(0)(r_1, w_1) dr
/// over 0 < r_1 < ... < r_n < t. With s_i = t - r_{n+1-i} it is the forward
/// chain through the reversed points.
fn backward_chain(t: f64, x: f64, u0: &InitialCondition, w: &[f64]) -> Result<f64> {
    let z: Vec<f64> = w.iter().rev().copied().collect();
    forward_chain(t, x, u0, &z)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut out = vec![perm.clone()];
    while next_permutation(&mut perm) {
        out.push(perm.clone());
    }
    out
}

/// F_n^FK(t, x; y) = (1/n!) Σ_σ forward chain through (y_σ(1), ..., y_σ(n)).
pub fn fk_kernel(t: f64, x: f64, u0: &InitialCondition, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Ok(u0.heat_flow(t, x));
    }
    let mut acc = 0.0;
    for sigma in permutations(y.len()) {
        let z: Vec<f64> = sigma.iter().map(|&i| y[i]).collect();
        acc += forward_chain(t, x, u0, &z)?;
    }
    Ok(acc / factorial(y.len()))
}

/// F_n^MW: for each hitting order σ the backward ordering is ρ(i) = σ(n+1-i).
fn mw_value(t: f64, x: f64, u0: &InitialCondition, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Ok(u0.heat_flow(t, x));
    }
    let mut acc = 0.0;
    for sigma in permutations(y.len()) {
        let w: Vec<f64> = sigma.iter().rev().map(|&i| y[i]).collect();
        acc += backward_chain(t, x, u0, &w)?;
    }
    Ok(acc / factorial(y.len()))
}

/// Sym F_n^CS by the graded simplex rule.
pub fn sym_cs_kernel(t: f64, x: f64, u0: &InitialCondition, y: &[f64], points_per_axis: usize) -> Result<f64> {
    let n = y.len();
    if n == 0 {
        return Ok(u0.heat_flow(t, x));
    }
    let rule = simplex_rule(&SimplexSpec::new(n, t, points_per_axis, 2.0)?)?;
    let perms = permutations(n);
    let mut acc = 0.0;
    for i in 0..rule.len() {
        let s = rule.point(i);
        let mut node = 0.0;
        for sigma in &perms {
            let mut v = p(t - s[n - 1], x - y[sigma[n - 1]]);
            for k in (1..n).rev() {
                v *= p(s[k] - s[k - 1], y[sigma[k]] - y[sigma[k - 1]]);
            }
            node += v * u0.heat_flow(s[0], y[sigma[0]]);
        }
        if !node.is_finite() {
            return Err(Error::NonFinite(format!("symmetrized kernel at s = {s:?}")));
        }
        acc += rule.weights[i] * node;
    }
    Ok(acc / factorial(n))
}
