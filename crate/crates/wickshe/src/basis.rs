//! Hermite polynomials (probabilists'), Hermite functions (physicists' weight,
//! indexed from 1 so that `e_j` is the standard function of order j-1),
//! multi-indices and the two bases built from them.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// H_n(x) by H_{n+1} = x H_n - n H_{n-1}.
pub fn hermite_poly(n: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// H_0(x) ..= H_n(x).
pub fn hermite_poly_all(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        let next = x * out[k] - k as f64 * out[k - 1];
        out.push(next);
    }
    out
}

const PI_MINUS_QUARTER: f64 = 0.751_125_544_464_942_5;

/// e_j(x) for j >= 1.
pub fn hermite_function(j: usize, x: f64) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidArgument("Hermite functions are indexed from 1".into()));
    }
    Ok(*hermite_functions(j, x).last().expect("j >= 1"))
}

/// [e_1(x), ..., e_J(x)] by the normalized recurrence
/// e_{j+1} = x sqrt(2/j) e_j - sqrt((j-1)/j) e_{j-1}.
pub fn hermite_functions(max_mode: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_mode);
    if max_mode == 0 {
        return out;
    }
    out.push(PI_MINUS_QUARTER * (-0.5 * x * x).exp());
    if max_mode >= 2 {
        out.push(x * std::f64::consts::SQRT_2 * out[0]);
    }
    for j in 2..max_mode {
        let jf = j as f64;
        let next = x * (2.0 / jf).sqrt() * out[j - 1] - ((jf - 1.0) / jf).sqrt() * out[j - 2];
        out.push(next);
    }
    out
}

/// e_j(x) without allocation; `j` must be at least 1.
#[inline]
pub fn hermite_fn(j: usize, x: f64) -> f64 {
    let e1 = PI_MINUS_QUARTER * (-0.5 * x * x).exp();
    if j == 1 {
        return e1;
    }
    let (mut prev, mut cur) = (e1, x * std::f64::consts::SQRT_2 * e1);
    for k in 2..j {
        let kf = k as f64;
        let next = x * (2.0 / kf).sqrt() * cur - ((kf - 1.0) / kf).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// e_j'(x) = sqrt((j-1)/2) e_{j-1}(x) - sqrt(j/2) e_{j+1}(x).
pub fn hermite_function_derivative(j: usize, x: f64) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidArgument("Hermite functions are indexed from 1".into()));
    }
    let e = hermite_functions(j + 1, x);
    let lower = if j >= 2 { ((j - 1) as f64 / 2.0).sqrt() * e[j - 2] } else { 0.0 };
    Ok(lower - (j as f64 / 2.0).sqrt() * e[j])
}

/// Finitely supported α = (α_1, α_2, ...). Stored without trailing zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex {
    entries: Vec<u32>,
}

impl MultiIndex {
    pub fn new(mut entries: Vec<u32>) -> Self {
        while entries.last() == Some(&0) {
            entries.pop();
        }
        Self { entries }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// ε_j, the unit index at mode j (1-based).
    pub fn unit(j: usize) -> Self {
        assert!(j >= 1, "modes are 1-based");
        let mut e = vec![0; j];
        e[j - 1] = 1;
        Self { entries: e }
    }

    /// From (mode, count) pairs with 1-based modes.
    pub fn from_pairs(pairs: &[(usize, u32)]) -> Self {
        let len = pairs.iter().map(|p| p.0).max().unwrap_or(0);
        let mut e = vec![0; len];
        for &(j, c) in pairs {
            assert!(j >= 1, "modes are 1-based");
            e[j - 1] += c;
        }
        Self::new(e)
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    /// α_j with 1-based j; zero outside the support.
    pub fn get(&self, j: usize) -> u32 {
        if j == 0 {
            return 0;
        }
        self.entries.get(j - 1).copied().unwrap_or(0)
    }

    pub fn degree(&self) -> usize {
        self.entries.iter().map(|&a| a as usize).sum()
    }

    /// Largest mode in the support, 0 for the zero index.
    pub fn max_mode(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// α! = Π α_j!.
    pub fn factorial(&self) -> f64 {
        self.entries.iter().map(|&a| factorial(a as usize)).product()
    }

    /// k_α: mode j repeated α_j times, non-decreasing.
    pub fn characteristic(&self) -> Vec<usize> {
        let mut k = Vec::with_capacity(self.degree());
        for (i, &a) in self.entries.iter().enumerate() {
            k.extend(std::iter::repeat_n(i + 1, a as usize));
        }
        k
    }

    /// α + ε_j.
    pub fn raised(&self, j: usize) -> Self {
        let mut e = self.entries.clone();
        if e.len() < j {
            e.resize(j, 0);
        }
        e[j - 1] += 1;
        Self::new(e)
    }

    /// α - ε_j, if α_j > 0.
    pub fn lowered(&self, j: usize) -> Option<Self> {
        if self.get(j) == 0 {
            return None;
        }
        let mut e = self.entries.clone();
        e[j - 1] -= 1;
        Some(Self::new(e))
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.entries.len().max(other.entries.len());
        Self::new((1..=n).map(|j| self.get(j) + other.get(j)).collect())
    }

    /// β <= α componentwise.
    pub fn contains(&self, beta: &Self) -> bool {
        beta.entries.iter().enumerate().all(|(i, &b)| b <= self.get(i + 1))
    }

    pub fn sub(&self, beta: &Self) -> Option<Self> {
        if !self.contains(beta) {
            return None;
        }
        Some(Self::new((1..=self.max_mode()).map(|j| self.get(j) - beta.get(j)).collect()))
    }

    /// "j:count;j:count" over the support; "0" for the zero index.
    pub fn encode(&self) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0)
            .map(|(i, a)| format!("{}:{}", i + 1, a))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn decode(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "0" || s.is_empty() {
            return Ok(Self::zero());
        }
        let mut pairs = Vec::new();
        for part in s.split(';') {
            let (j, c) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("bad multi-index entry '{part}'")))?;
            let j: usize = j.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad mode '{j}'")))?;
            let c: u32 = c.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad count '{c}'")))?;
            if j == 0 {
                return Err(Error::InvalidArgument("modes are 1-based".into()));
            }
            pairs.push((j, c));
        }
        Ok(Self::from_pairs(&pairs))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

pub const DEFAULT_INDEX_CAP: usize = 2_000_000;

/// Chaos degree cutoff N and Hermite mode cutoff J.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TruncationSpec {
    pub max_order: usize,
    pub max_mode: usize,
}

impl TruncationSpec {
    pub fn new(max_order: usize, max_mode: usize) -> Result<Self> {
        if max_mode == 0 {
            return Err(Error::InvalidArgument("max_mode must be at least 1".into()));
        }
        Ok(Self { max_order, max_mode })
    }

    /// Σ_{n<=N} C(n+J-1, J-1).
    pub fn count(&self) -> u128 {
        (0..=self.max_order as u128)
            .map(|n| binomial(n + self.max_mode as u128 - 1, self.max_mode as u128 - 1))
            .sum()
    }

    pub fn admits(&self, alpha: &MultiIndex) -> bool {
        alpha.degree() <= self.max_order && alpha.max_mode() <= self.max_mode
    }
}

/// Graded lexicographic enumeration: by degree, then descending lex in
/// (α_1, α_2, ...), so (1,0) precedes (0,1).
pub fn enumerate_multiindices(spec: TruncationSpec) -> Result<Vec<MultiIndex>> {
    enumerate_with_cap(spec, DEFAULT_INDEX_CAP)
}

pub fn enumerate_with_cap(spec: TruncationSpec, cap: usize) -> Result<Vec<MultiIndex>> {
    if spec.max_mode == 0 {
        return Err(Error::InvalidArgument("max_mode must be at least 1".into()));
    }
    let count = spec.count();
    if count > cap as u128 {
        return Err(Error::TooManyIndices { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut buf = vec![0u32; spec.max_mode];
    for n in 0..=spec.max_order {
        fill_degree(&mut buf, 0, n as u32, &mut out);
    }
    Ok(out)
}

/// All indices of exactly degree n over modes 1..=J, in enumeration order.
pub fn degree_slice(n: usize, max_mode: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut buf = vec![0u32; max_mode];
    fill_degree(&mut buf, 0, n as u32, &mut out);
    out
}

fn fill_degree(buf: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(MultiIndex::new(buf.to_vec()));
        buf[pos] = 0;
        return;
    }
    for a in (0..=remaining).rev() {
        buf[pos] = a;
        fill_degree(buf, pos + 1, remaining - a, out);
    }
    buf[pos] = 0;
}

/// Ordered index set with O(1) lookup, shared between coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    spec: TruncationSpec,
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

impl IndexSet {
    pub fn new(spec: TruncationSpec) -> Result<Arc<Self>> {
        let indices = enumerate_multiindices(spec)?;
        let lookup = indices.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        Ok(Arc::new(Self { spec, indices, lookup }))
    }

    pub fn spec(&self) -> TruncationSpec {
        self.spec
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// Index range holding degree n.
    pub fn degree_range(&self, n: usize) -> std::ops::Range<usize> {
        let start = self.indices.partition_point(|a| a.degree() < n);
        let end = self.indices.partition_point(|a| a.degree() <= n);
        start..end
    }
}

/// W_{e_1}, ..., W_{e_J}.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCoordinates {
    pub values: Vec<f64>,
}

impl GaussianCoordinates {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(max_mode: usize) -> Self {
        Self { values: vec![0.0; max_mode] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// ξ_α = Π_j H_{α_j}(g_j) / sqrt(α_j!).
pub fn sample_xi(alpha: &MultiIndex, g: &GaussianCoordinates) -> Result<f64> {
    if alpha.max_mode() > g.len() {
        return Err(Error::LengthMismatch { expected: alpha.max_mode(), got: g.len() });
    }
    Ok(alpha
        .entries()
        .iter()
        .zip(&g.values)
        .filter(|(&a, _)| a > 0)
        .map(|(&a, &x)| hermite_poly(a as usize, x) / factorial(a as usize).sqrt())
        .product())
}

/// Advances `v` to the next lexicographic permutation; false after the last.
pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Distinct arrangements of the characteristic vector, in lex order.
pub fn distinct_arrangements(alpha: &MultiIndex) -> Vec<Vec<usize>> {
    let mut k = alpha.characteristic();
    let mut out = vec![k.clone()];
    while next_permutation(&mut k) {
        out.push(k.clone());
    }
    out
}

/// 𝔢_α(y) = sqrt(α!/n!) Σ over distinct arrangements of Π e_{k_i}(y_i).
pub fn evaluate_sym_basis(alpha: &MultiIndex, y: &[f64]) -> Result<f64> {
    let n = alpha.degree();
    if n == 0 {
        return Err(Error::InvalidArgument("the symmetric basis needs |α| >= 1".into()));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: y.len() });
    }
    let modes = alpha.max_mode();
    let table: Vec<Vec<f64>> = y.iter().map(|&v| hermite_functions(modes, v)).collect();
    let sum: f64 = distinct_arrangements(alpha)
        .iter()
        .map(|k| k.iter().enumerate().map(|(i, &kj)| table[i][kj - 1]).product::<f64>())
        .sum();
    Ok((alpha.factorial() / factorial(n)).sqrt() * sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_examples() {
        assert_eq!(hermite_poly(0, 3.7), 1.0);
        assert_eq!(hermite_poly(2, 0.0), -1.0);
        assert_eq!(hermite_poly(3, 2.0), 2.0);
    }

    #[test]
    fn function_examples() {
        assert!((hermite_function(1, 0.0).unwrap() - std::f64::consts::PI.powf(-0.25)).abs() < 1e-15);
        assert_eq!(hermite_function(2, 0.0).unwrap(), 0.0);
        assert!(hermite_function(0, 0.0).is_err());
    }

    #[test]
    fn enumeration_examples() {
        let z = enumerate_multiindices(TruncationSpec::new(0, 5).unwrap()).unwrap();
        assert_eq!(z, vec![MultiIndex::zero()]);
        let one = enumerate_multiindices(TruncationSpec::new(1, 2).unwrap()).unwrap();
        assert_eq!(one, vec![MultiIndex::zero(), MultiIndex::unit(1), MultiIndex::unit(2)]);
        let two = enumerate_multiindices(TruncationSpec::new(2, 2).unwrap()).unwrap();
        assert_eq!(two.len(), 6);
        assert_eq!(two[3], MultiIndex::new(vec![2, 0]));
        assert_eq!(two[4], MultiIndex::new(vec![1, 1]));
        assert_eq!(two[5], MultiIndex::new(vec![0, 2]));
    }

    #[test]
    fn enumeration_cap() {
        let spec = TruncationSpec::new(10, 30).unwrap();
        assert!(matches!(enumerate_with_cap(spec, 1000), Err(Error::TooManyIndices { .. })));
    }

    #[test]
    fn encode_roundtrip() {
        let a = MultiIndex::from_pairs(&[(1, 2), (4, 1)]);
        assert_eq!(a.encode(), "1:2;4:1");
        assert_eq!(MultiIndex::decode("1:2;4:1").unwrap(), a);
        assert_eq!(MultiIndex::decode("0").unwrap(), MultiIndex::zero());
    }

    #[test]
    fn xi_examples() {
        let g = GaussianCoordinates::new(vec![0.4, 1.0, -2.0]);
        assert_eq!(sample_xi(&MultiIndex::zero(), &g).unwrap(), 1.0);
        assert_eq!(sample_xi(&MultiIndex::unit(1), &g).unwrap(), 0.4);
        assert!(sample_xi(&MultiIndex::unit(4), &g).is_err());
    }

    #[test]
    fn sym_basis_examples() {
        let a = 0.3;
        let b = -0.7;
        let e = |j, x| hermite_function(j, x).unwrap();
        let v = evaluate_sym_basis(&MultiIndex::unit(1), &[a]).unwrap();
        assert_eq!(v, e(1, a));
        let v = evaluate_sym_basis(&MultiIndex::new(vec![2]), &[a, b]).unwrap();
        assert!((v - e(1, a) * e(1, b)).abs() < 1e-15);
        let v = evaluate_sym_basis(&MultiIndex::new(vec![1, 1]), &[a, b]).unwrap();
        let want = (e(1, a) * e(2, b) + e(2, a) * e(1, b)) / 2f64.sqrt();
        assert!((v - want).abs() < 1e-15);
        assert!(evaluate_sym_basis(&MultiIndex::unit(1), &[a, b]).is_err());
    }
}
