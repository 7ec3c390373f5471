//! Wick products on the Cameron-Martin basis and the chaos-side S-transform.

use std::collections::HashMap;

use crate::basis::{factorial, MultiIndex};
use crate::error::{Error, Result};

use super::ChaosCoefficients;

#[derive(Debug, Clone, PartialEq)]
pub struct WickProduct {
    pub value: ChaosCoefficients,
    /// Σ over degrees above N of the squared product coefficients.
    pub dropped_mass: f64,
}

/// sqrt(γ!/(α!β!)) as sqrt(Π_j C(γ_j, α_j)).
fn wick_weight(alpha: &MultiIndex, beta: &MultiIndex) -> f64 {
    let n = alpha.max_mode().max(beta.max_mode());
    let mut prod = 1.0;
    for j in 1..=n {
        let (a, b) = (alpha.get(j) as usize, beta.get(j) as usize);
        if a > 0 && b > 0 {
            prod *= (factorial(a + b) / (factorial(a) * factorial(b))).round();
        }
    }
    prod.sqrt()
}

/// Order-free sum: sorting the terms first makes F⋄G and G⋄F bit-identical.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    terms.iter().sum()
}

/// (F⋄G)_γ = Σ_{α+β=γ} F_α G_β sqrt(γ!/(α!β!)), truncated at the shared N.
pub fn wick_product(f: &ChaosCoefficients, g: &ChaosCoefficients) -> Result<WickProduct> {
    if !f.same_spec(g) {
        return Err(Error::SpecMismatch);
    }
    let spec = f.spec();
    let mut kept: Vec<Vec<f64>> = vec![Vec::new(); f.indices().len()];
    let mut dropped: HashMap<MultiIndex, Vec<f64>> = HashMap::new();
    let set = f.index_set();
    for (alpha, fa) in f.iter().filter(|(_, v)| *v != 0.0) {
        for (beta, gb) in g.iter().filter(|(_, v)| *v != 0.0) {
            let term = fa * gb * wick_weight(alpha, beta);
            let gamma = alpha.add(beta);
            if gamma.degree() <= spec.max_order {
                let k = set.position(&gamma).expect("modes stay within J");
                kept[k].push(term);
            } else {
                dropped.entry(gamma).or_default().push(term);
            }
        }
    }
    let values = kept.iter_mut().map(|terms| canonical_sum(terms)).collect();
    let mut dropped_sq: Vec<f64> = dropped.values_mut().map(|t| canonical_sum(t).powi(2)).collect();
    let dropped_mass = canonical_sum(&mut dropped_sq);
    Ok(WickProduct { value: ChaosCoefficients::from_values(f.point, set.clone(), values)?, dropped_mass })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct STransformValue {
    pub value: f64,
    /// Σ_{j > J} φ_j², the part of φ the truncation cannot see.
    pub phi_tail: f64,
}

/// S(F)(φ) ≈ Σ_α F_α Π_j φ_j^{α_j} / sqrt(α_j!), with φ_j = ⟨φ, e_j⟩.
pub fn s_transform_chaos(coeffs: &ChaosCoefficients, phi_modes: &[f64]) -> Result<STransformValue> {
    let j_max = coeffs.spec().max_mode;
    if phi_modes.len() < j_max {
        return Err(Error::LengthMismatch { expected: j_max, got: phi_modes.len() });
    }
    let mut value = 0.0;
    for (alpha, v) in coeffs.iter() {
        if v == 0.0 {
            continue;
        }
        let w: f64 = alpha
            .entries()
            .iter()
            .zip(phi_modes)
            .filter(|(&a, _)| a > 0)
            .map(|(&a, &p)| p.powi(a as i32) / factorial(a as usize).sqrt())
            .product();
        value += v * w;
    }
    let phi_tail = phi_modes[j_max..].iter().map(|p| p * p).sum();
    Ok(STransformValue { value, phi_tail })
}

/// Per-order contributions of the chaos-side S-transform, n = 0..=N.
pub fn s_transform_by_order(coeffs: &ChaosCoefficients, phi_modes: &[f64]) -> Result<Vec<f64>> {
    let spec = coeffs.spec();
    let mut out = Vec::with_capacity(spec.max_order + 1);
    for n in 0..=spec.max_order {
        let range = coeffs.index_set().degree_range(n);
        let mut part = ChaosCoefficients::zeros(coeffs.point, coeffs.index_set().clone());
        for k in range {
            let alpha = &coeffs.indices()[k];
            part.set(alpha, coeffs.values()[k])?;
        }
        out.push(s_transform_chaos(&part, phi_modes)?.value);
    }
    Ok(out)
}
