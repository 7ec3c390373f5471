//! One-dimensional quadrature: Gauss rules via Golub-Welsch, composite and
//! graded panels, and an adaptive Gauss-Kronrod integrator.

use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine image of a rule on [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Rule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
        }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn golub_welsch(n: usize, off_diag: impl Fn(usize) -> f64, mu0: f64) -> Rule {
    if n == 1 {
        return Rule { nodes: vec![0.0], weights: vec![mu0] };
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = off_diag(k);
        m[(k - 1, k)] = b;
        m[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize: both weight functions are even.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn build_legendre(n: usize) -> Rule {
    let mut rule = golub_welsch(n, |k| k as f64 / ((4 * k * k - 1) as f64).sqrt(), 2.0);
    if n > 1 {
        // Newton polish of the eigenvalue nodes; weights from the derivative.
        for i in 0..n {
            let mut x = rule.nodes[i];
            for _ in 0..3 {
                let (p, dp) = legendre_with_derivative(n, x);
                x -= p / dp;
            }
            let (_, dp) = legendre_with_derivative(n, x);
            rule.nodes[i] = x;
            rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }
    rule
}

type Cache = Mutex<HashMap<usize, Arc<Rule>>>;

fn cached(cache: &'static OnceLock<Cache>, n: usize, build: fn(usize) -> Rule) -> Arc<Rule> {
    let lock = cache.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = lock.lock().expect("rule cache poisoned").get(&n) {
        return r.clone();
    }
    let rule = Arc::new(build(n));
    lock.lock().expect("rule cache poisoned").entry(n).or_insert(rule).clone()
}

/// n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    assert!(n >= 1, "Gauss-Legendre needs at least one node");
    cached(&CACHE, n, build_legendre)
}

/// n-point Gauss rule for the standard normal law: Σ w_i f(z_i) ≈ E f(Z).
pub fn gauss_hermite_normal(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    assert!(n >= 1, "Gauss-Hermite needs at least one node");
    cached(&CACHE, n, |n| golub_welsch(n, |k| (k as f64).sqrt(), 1.0))
}

/// Composite Gauss-Legendre on [a, b] with equal panels.
pub fn composite_legendre(a: f64, b: f64, panels: usize, points: usize) -> Rule {
    let base = gauss_legendre(points);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * points);
    let mut weights = Vec::with_capacity(panels * points);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let hi = if p + 1 == panels { b } else { lo + h };
        let r = base.mapped(lo, hi);
        nodes.extend(r.nodes);
        weights.extend(r.weights);
    }
    Rule { nodes, weights }
}

/// Gauss-Legendre on [0, 1] after the substitution w = 1 - (1 - v)^grading,
/// which clusters nodes at w = 1 and absorbs (1 - w)^(-1 + 1/grading)
/// endpoint singularities.
pub fn graded_unit(points: usize, grading: f64) -> Rule {
    let base = gauss_legendre(points).mapped(0.0, 1.0);
    let mut nodes = Vec::with_capacity(points);
    let mut weights = Vec::with_capacity(points);
    for (&v, &w) in base.nodes.iter().zip(&base.weights) {
        let q = 1.0 - v;
        nodes.push(1.0 - q.powf(grading));
        weights.push(w * grading * q.powf(grading - 1.0));
    }
    Rule { nodes, weights }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-11, rel: 1e-10, max_intervals: 4000 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel, ..Self::default() }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss-Kronrod (7/15) on [a, b]. Nodes never touch the
/// endpoints, so integrable endpoint singularities are allowed.
pub fn adaptive(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value: v, err: e });
    let (mut total, mut err) = (v, e);
    let mut count = 1;
    while err > tol.abs.max(tol.rel * total.abs()) {
        if count >= tol.max_intervals {
            if err <= 1e3 * tol.abs.max(tol.rel * total.abs()) {
                break;
            }
            return Err(Error::NonConvergence(format!(
                "adaptive quadrature on [{a}, {b}] stalled with error {err:.3e}"
            )));
        }
        let p = heap.pop().expect("heap is never empty");
        let m = 0.5 * (p.a + p.b);
        let (v1, e1) = gk15(&mut f, p.a, m);
        let (v2, e2) = gk15(&mut f, m, p.b);
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.err;
        heap.push(Piece { a: p.a, b: m, value: v1, err: e1 });
        heap.push(Piece { a: m, b: p.b, value: v2, err: e2 });
        count += 1;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("adaptive quadrature on [{a}, {b}]")));
        }
    }
    // Re-sum to shed the drift from incremental updates.
    Ok(heap.into_iter().map(|p| p.value).sum())
}

/// Adaptive integral over [a, ∞) via x = a + s/(1 - s).
pub fn adaptive_to_infinity(f: impl Fn(f64) -> f64, a: f64, tol: Tolerance) -> Result<f64> {
    adaptive(
        |s| {
            let q = 1.0 - s;
            let x = a + s / q;
            let v = f(x) / (q * q);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(10);
        for k in 0..20 {
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            let got = r.integrate(|x| x.powi(k));
            assert!((got - exact).abs() < 1e-14, "k={k} got={got}");
        }
    }

    #[test]
    fn hermite_matches_normal_moments() {
        let r = gauss_hermite_normal(12);
        let mut double_fact = 1.0;
        for k in (0..24).step_by(2) {
            if k > 0 {
                double_fact *= (k - 1) as f64;
            }
            let got = r.integrate(|z| z.powi(k));
            assert!((got - double_fact).abs() < 1e-10 * double_fact, "k={k}");
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = adaptive(|x| 1.0 / x.sqrt(), 0.0, 1.0, Tolerance::new(1e-12, 1e-12)).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn graded_rule_removes_inverse_sqrt() {
        let r = graded_unit(20, 2.0);
        let v = r.integrate(|w| 1.0 / (1.0 - w).sqrt());
        assert!((v - 2.0).abs() < 1e-13);
    }

    #[test]
    fn tail_integral() {
        let v = adaptive_to_infinity(|x| (-x).exp(), 0.0, Tolerance::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }
}
