//! Deterministic chaos representations of the solution and its spatial
//! derivative.

mod coefficients;
mod kernel;
mod propagator;
mod wick;

use std::sync::Arc;

pub use coefficients::{ChaosSolver, SolverOptions};
pub use kernel::{fk_kernel, mw_kernel, sym_cs_kernel, KernelForm, WienerKernel, MW_ORDER_CAP};
pub use propagator::{propagator_oracle, PropagatorGrid, PropagatorSolution, Scheme};
pub use wick::{s_transform_by_order, s_transform_chaos, wick_product, STransformValue, WickProduct};

use crate::basis::{sample_xi, GaussianCoordinates, IndexSet, MultiIndex, TruncationSpec};
use crate::csv::{Cell, Table};
use crate::error::{Error, Result};

/// Coefficients F_α over a truncation, attached to a point (t, x).
/// Every admissible index is present; absent entries read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosCoefficients {
    pub point: (f64, f64),
    set: Arc<IndexSet>,
    values: Vec<f64>,
}

impl ChaosCoefficients {
    pub fn zeros(point: (f64, f64), set: Arc<IndexSet>) -> Self {
        let values = vec![0.0; set.len()];
        Self { point, set, values }
    }

    pub fn new(point: (f64, f64), spec: TruncationSpec) -> Result<Self> {
        Ok(Self::zeros(point, IndexSet::new(spec)?))
    }

    pub fn from_values(point: (f64, f64), set: Arc<IndexSet>, values: Vec<f64>) -> Result<Self> {
        if values.len() != set.len() {
            return Err(Error::LengthMismatch { expected: set.len(), got: values.len() });
        }
        Ok(Self { point, set, values })
    }

    pub fn spec(&self) -> TruncationSpec {
        self.set.spec()
    }

    pub fn index_set(&self) -> &Arc<IndexSet> {
        &self.set
    }

    pub fn indices(&self) -> &[MultiIndex] {
        self.set.indices()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, alpha: &MultiIndex) -> f64 {
        self.set.position(alpha).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, alpha: &MultiIndex, value: f64) -> Result<()> {
        let i = self.set.position(alpha).ok_or_else(|| {
            Error::InvalidArgument(format!("index {alpha} lies outside the truncation {:?}", self.set.spec()))
        })?;
        self.values[i] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.set.indices().iter().zip(self.values.iter().copied())
    }

    pub fn same_spec(&self, other: &Self) -> bool {
        self.spec() == other.spec()
    }

    /// Σ_{|α|=n} F_α².
    pub fn order_mass(&self, n: usize) -> f64 {
        self.values[self.set.degree_range(n)].iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { point: self.point, set: self.set.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    /// a F + b G on a shared truncation.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.same_spec(other) {
            return Err(Error::SpecMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { point: self.point, set: self.set.clone(), values })
    }
}

/// Σ_α F_α², the truncated L² norm.
pub fn second_moment(coeffs: &ChaosCoefficients) -> f64 {
    coeffs.values().iter().map(|v| v * v).sum()
}

/// Σ_α F_α ξ_α(g).
pub fn sample_realization(coeffs: &ChaosCoefficients, g: &GaussianCoordinates) -> Result<f64> {
    let spec = coeffs.spec();
    if g.len() < spec.max_mode {
        return Err(Error::LengthMismatch { expected: spec.max_mode, got: g.len() });
    }
    let mut acc = 0.0;
    for (alpha, v) in coeffs.iter() {
        if v != 0.0 {
            acc += v * sample_xi(alpha, g)?;
        }
    }
    Ok(acc)
}

/// e^{2λn} Σ_{|α|=n} F_α².
pub fn order_norm(coeffs: &ChaosCoefficients, n: usize, lambda: f64) -> Result<f64> {
    let spec = coeffs.spec();
    if n > spec.max_order {
        return Err(Error::InvalidArgument(format!("order {n} exceeds truncation order {}", spec.max_order)));
    }
    Ok((2.0 * lambda * n as f64).exp() * coeffs.order_mass(n))
}

/// Rows (alpha, t, x, value) in enumeration order, one block per point.
pub fn coefficients_table(fields: &[ChaosCoefficients]) -> Table {
    let mut table = Table::new(&["alpha_encoded", "t", "x", "value"]);
    for c in fields {
        for (alpha, v) in c.iter() {
            table.push(vec![Cell::from(alpha.encode()), c.point.0.into(), c.point.1.into(), v.into()]);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_moment_of_unit() {
        let mut c = ChaosCoefficients::new((1.0, 0.0), TruncationSpec::new(2, 2).unwrap()).unwrap();
        c.set(&MultiIndex::zero(), 1.0).unwrap();
        assert_eq!(second_moment(&c), 1.0);
        assert_eq!(order_norm(&c, 0, 0.0).unwrap(), 1.0);
        assert!(c.set(&MultiIndex::unit(3), 1.0).is_err());
    }

    #[test]
    fn realization_at_origin_is_mean() {
        let mut c = ChaosCoefficients::new((1.0, 0.0), TruncationSpec::new(1, 3).unwrap()).unwrap();
        c.set(&MultiIndex::zero(), 0.7).unwrap();
        c.set(&MultiIndex::unit(2), 0.4).unwrap();
        let v = sample_realization(&c, &GaussianCoordinates::zeros(3)).unwrap();
        assert_eq!(v, 0.7);
    }
}
