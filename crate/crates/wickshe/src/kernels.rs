//! Heat kernel, its derivative, closed-form Gaussian cross integrals, initial
//! data with their heat flows, and the line and simplex quadrature engines.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use libm::erfc;

use crate::error::{Error, Result};
use crate::quad::{self, Rule};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time must be positive, got {t}")))
    }
}

/// p(t, x) = (2πt)^{-1/2} exp(-x²/2t).
pub fn heat_kernel(t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    Ok(p(t, x))
}

/// ∂ₓp(t, x) = -(x/t) p(t, x).
pub fn heat_kernel_dx(t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    Ok(-(x / t) * p(t, x))
}

#[inline]
pub(crate) fn p(t: f64, x: f64) -> f64 {
    INV_SQRT_2PI / t.sqrt() * (-0.5 * x * x / t).exp()
}

/// ∫_0^σ p(v, d) dv = sqrt(2σ/π) e^{-d²/2σ} - |d| erfc(|d|/sqrt(2σ)).
pub fn heat_kernel_time_integral(sigma: f64, d: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let a = d.abs();
    (2.0 * sigma / PI).sqrt() * (-0.5 * d * d / sigma).exp() - a * erfc(a / (2.0 * sigma).sqrt())
}

/// ∫_0^σ (σ - v) p(v, d) dv, the second time antiderivative of the kernel.
pub fn heat_kernel_time_integral2(sigma: f64, d: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let a = d.abs();
    let gauss = (2.0 / PI).sqrt() * (2.0 * sigma + a * a) / 3.0 * sigma.sqrt() * (-0.5 * d * d / sigma).exp();
    gauss - (sigma * a + a * a * a / 3.0) * erfc(a / (2.0 * sigma).sqrt())
}

/// ∫ ∂ₓp(t1, x1 - z) ∂ₓp(t2, x2 - z) dz in closed form.
pub fn dxp_cross_inner(t1: f64, t2: f64, x1: f64, x2: f64) -> Result<f64> {
    check_time(t1)?;
    check_time(t2)?;
    Ok(dxp_cross(t1 + t2, x1 - x2))
}

/// The cross inner product as a function of σ = t1 + t2 and d = x1 - x2.
#[inline]
pub(crate) fn dxp_cross(sigma: f64, d: f64) -> f64 {
    p(sigma, d) / sigma * (1.0 - d * d / sigma)
}

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Profile {
    Constant { value: f64 },
    Sine { amplitude: f64, frequency: f64 },
    GaussianBump { amplitude: f64, center: f64, width: f64 },
    Tanh { amplitude: f64, scale: f64 },
    Custom { f: Scalar, df: Option<Scalar>, sup_norm: f64, lipschitz: Option<f64> },
}

/// Bounded initial datum u₀ with its heat flow u_(0)(s, y) = (P_s u₀)(y).
#[derive(Clone)]
pub struct InitialCondition {
    profile: Profile,
}

impl fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.profile {
            Profile::Constant { value } => write!(f, "constant({value})"),
            Profile::Sine { amplitude, frequency } => write!(f, "sine({amplitude}, {frequency})"),
            Profile::GaussianBump { amplitude, center, width } => {
                write!(f, "gaussian_bump({amplitude}, {center}, {width})")
            }
            Profile::Tanh { amplitude, scale } => write!(f, "tanh({amplitude}, {scale})"),
            Profile::Custom { sup_norm, .. } => write!(f, "custom(sup={sup_norm})"),
        }
    }
}

const FLOW_NODES: usize = 64;

impl InitialCondition {
    pub fn constant(value: f64) -> Self {
        Self { profile: Profile::Constant { value } }
    }

    /// a sin(ω x).
    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        Self { profile: Profile::Sine { amplitude, frequency } }
    }

    pub fn gaussian_bump(amplitude: f64, center: f64, width: f64) -> Result<Self> {
        if width <= 0.0 {
            return Err(Error::InvalidArgument("bump width must be positive".into()));
        }
        Ok(Self { profile: Profile::GaussianBump { amplitude, center, width } })
    }

    /// a tanh(x / ℓ).
    pub fn tanh(amplitude: f64, scale: f64) -> Result<Self> {
        if scale <= 0.0 {
            return Err(Error::InvalidArgument("tanh scale must be positive".into()));
        }
        Ok(Self { profile: Profile::Tanh { amplitude, scale } })
    }

    pub fn custom(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: Option<Scalar>,
        sup_norm: f64,
        lipschitz: Option<f64>,
    ) -> Self {
        Self { profile: Profile::Custom { f: Arc::new(f), df, sup_norm, lipschitz } }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn tag(&self) -> &'static str {
        match self.profile {
            Profile::Constant { .. } => "constant",
            Profile::Sine { .. } => "sine",
            Profile::GaussianBump { .. } => "gaussian_bump",
            Profile::Tanh { .. } => "tanh",
            Profile::Custom { .. } => "custom",
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Constant { value } => *value,
            Profile::Sine { amplitude, frequency } => amplitude * (frequency * x).sin(),
            Profile::GaussianBump { amplitude, center, width } => {
                let z = (x - center) / width;
                amplitude * (-0.5 * z * z).exp()
            }
            Profile::Tanh { amplitude, scale } => amplitude * (x / scale).tanh(),
            Profile::Custom { f, .. } => f(x),
        }
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        Some(match &self.profile {
            Profile::Constant { .. } => 0.0,
            Profile::Sine { amplitude, frequency } => amplitude * frequency * (frequency * x).cos(),
            Profile::GaussianBump { amplitude, center, width } => {
                let z = (x - center) / width;
                -amplitude * z / width * (-0.5 * z * z).exp()
            }
            Profile::Tanh { amplitude, scale } => {
                let c = (x / scale).cosh();
                amplitude / (scale * c * c)
            }
            Profile::Custom { df, .. } => return df.as_ref().map(|d| d(x)),
        })
    }

    pub fn has_derivative(&self) -> bool {
        !matches!(&self.profile, Profile::Custom { df: None, .. })
    }

    pub fn sup_norm(&self) -> f64 {
        match &self.profile {
            Profile::Constant { value } => value.abs(),
            Profile::Sine { amplitude, .. } => amplitude.abs(),
            Profile::GaussianBump { amplitude, .. } => amplitude.abs(),
            Profile::Tanh { amplitude, .. } => amplitude.abs(),
            Profile::Custom { sup_norm, .. } => *sup_norm,
        }
    }

    pub fn lipschitz_constant(&self) -> Option<f64> {
        match &self.profile {
            Profile::Constant { .. } => Some(0.0),
            Profile::Sine { amplitude, frequency } => Some((amplitude * frequency).abs()),
            Profile::GaussianBump { amplitude, width, .. } => Some(amplitude.abs() / width * (-0.5f64).exp()),
            Profile::Tanh { amplitude, scale } => Some(amplitude.abs() / scale),
            Profile::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// u_(0)(s, y). Closed form where one exists, Gauss-Hermite otherwise.
    pub fn heat_flow(&self, s: f64, y: f64) -> f64 {
        if s <= 0.0 {
            return self.eval(y);
        }
        match &self.profile {
            Profile::Constant { value } => *value,
            Profile::Sine { amplitude, frequency } => {
                amplitude * (-0.5 * frequency * frequency * s).exp() * (frequency * y).sin()
            }
            Profile::GaussianBump { amplitude, center, width } => {
                let v = width * width + s;
                amplitude * width / v.sqrt() * (-0.5 * (y - center).powi(2) / v).exp()
            }
            _ => {
                let r = quad::gauss_hermite_normal(FLOW_NODES);
                let sd = s.sqrt();
                r.integrate(|z| self.eval(y + sd * z))
            }
        }
    }

    /// ∂_y u_(0)(s, y).
    pub fn heat_flow_dx(&self, s: f64, y: f64) -> Result<f64> {
        if s <= 0.0 {
            return self.derivative(y).ok_or(Error::MissingDerivative);
        }
        Ok(match &self.profile {
            Profile::Constant { .. } => 0.0,
            Profile::Sine { amplitude, frequency } => {
                amplitude * frequency * (-0.5 * frequency * frequency * s).exp() * (frequency * y).cos()
            }
            Profile::GaussianBump { amplitude, center, width } => {
                let v = width * width + s;
                -amplitude * width / v.sqrt() * (y - center) / v * (-0.5 * (y - center).powi(2) / v).exp()
            }
            _ => {
                let r = quad::gauss_hermite_normal(FLOW_NODES);
                let sd = s.sqrt();
                if self.has_derivative() {
                    r.integrate(|z| self.derivative(y + sd * z).unwrap_or(0.0))
                } else {
                    r.integrate(|z| self.eval(y + sd * z) * z) / sd
                }
            }
        })
    }
}

pub const DEFAULT_PANEL_POINTS: usize = 16;
pub const DEFAULT_PANEL_WIDTH: f64 = 0.25;
const TAIL_TOLERANCE: f64 = 1e-8;

/// Composite Gauss-Legendre rule on [-L, L].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    half_width: f64,
    panels: usize,
    rule: Rule,
}

impl QuadratureGrid {
    pub fn new(half_width: f64, panels: usize) -> Result<Self> {
        if !(half_width > 0.0) || panels == 0 {
            return Err(Error::InvalidArgument("grid needs L > 0 and at least one panel".into()));
        }
        let rule = quad::composite_legendre(-half_width, half_width, panels, DEFAULT_PANEL_POINTS);
        Ok(Self { half_width, panels, rule })
    }

    /// L = max|x| + 6 sqrt(T) + 6 with panels of width about 0.25.
    pub fn for_horizon(max_abs_x: f64, horizon: f64) -> Result<Self> {
        let l = default_half_width(max_abs_x, horizon);
        Self::new(l, (2.0 * l / DEFAULT_PANEL_WIDTH).ceil() as usize)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn panel_width(&self) -> f64 {
        2.0 * self.half_width / self.panels as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rule.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.rule.weights
    }

    pub fn integrate(&self, f: impl FnMut(f64) -> f64) -> f64 {
        self.rule.integrate(f)
    }
}

pub fn default_half_width(max_abs_x: f64, horizon: f64) -> f64 {
    max_abs_x + 6.0 * horizon.max(0.0).sqrt() + 6.0
}

/// Quadrature of ∫ p(t, x - y) u₀(y) dy on the grid.
pub fn apply_heat_semigroup(u0: &InitialCondition, t: f64, x: f64, grid: &QuadratureGrid) -> Result<f64> {
    check_time(t)?;
    let sd = t.sqrt();
    let l = grid.half_width();
    if l < x.abs() + 6.0 * sd {
        return Err(Error::Coverage(format!("half-width {l} is below |x| + 6 sqrt(t) = {}", x.abs() + 6.0 * sd)));
    }
    let tail = u0.sup_norm() * erfc((l - x.abs()) / (2.0 * t).sqrt());
    if tail > TAIL_TOLERANCE {
        return Err(Error::Coverage(format!("truncation tail {tail:.2e} exceeds {TAIL_TOLERANCE:.0e}")));
    }
    if grid.panel_width() > 3.0 * sd {
        return Err(Error::Coverage(format!(
            "panel width {} cannot resolve a kernel of width {sd}; use more panels",
            grid.panel_width()
        )));
    }
    Ok(grid.integrate(|y| p(t, x - y) * u0.eval(y)))
}

/// ∂ₓ of the heat semigroup applied to u₀, on the grid.
pub fn apply_heat_semigroup_dx(u0: &InitialCondition, t: f64, x: f64, grid: &QuadratureGrid) -> Result<f64> {
    apply_heat_semigroup(u0, t, x, grid)?;
    Ok(grid.integrate(|y| -((x - y) / t) * p(t, x - y) * u0.eval(y)))
}

pub const SIMPLEX_ORDER_CAP: usize = 4;

/// Nested graded rule on 𝕋ⁿ_{[0,t]} = {0 <= s_1 <= ... <= s_n <= t}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexSpec {
    pub order: usize,
    pub horizon: f64,
    pub points_per_axis: usize,
    pub grading: f64,
}

impl SimplexSpec {
    pub fn new(order: usize, horizon: f64, points_per_axis: usize, grading: f64) -> Result<Self> {
        if order == 0 || order > SIMPLEX_ORDER_CAP {
            return Err(Error::OrderCap { order, cap: SIMPLEX_ORDER_CAP });
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("simplex horizon must be positive, got {horizon}")));
        }
        if points_per_axis < 2 || grading < 1.0 {
            return Err(Error::InvalidArgument("simplex rule needs >= 2 points per axis and grading >= 1".into()));
        }
        Ok(Self { order, horizon, points_per_axis, grading })
    }
}

/// Flattened simplex nodes: `points[i*order..(i+1)*order]` is (s_1, ..., s_n).
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexRule {
    pub order: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SimplexRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.order..(i + 1) * self.order]
    }
}

/// s_n = t w_n and s_i = s_{i+1} w_i, each w graded toward 1, so nodes cluster
/// where s_n → t and where consecutive times merge.
pub fn simplex_rule(spec: &SimplexSpec) -> Result<SimplexRule> {
    let n = spec.order;
    if n == 0 || n > SIMPLEX_ORDER_CAP {
        return Err(Error::OrderCap { order: n, cap: SIMPLEX_ORDER_CAP });
    }
    let axis = quad::graded_unit(spec.points_per_axis, spec.grading);
    let q = axis.len();
    let total = q.pow(n as u32);
    let mut points = Vec::with_capacity(total * n);
    let mut weights = Vec::with_capacity(total);
    let mut digits = vec![0usize; n];
    let mut s = vec![0.0; n];
    for _ in 0..total {
        let mut w = spec.horizon;
        let mut upper = spec.horizon;
        for i in (0..n).rev() {
            let d = digits[i];
            s[i] = upper * axis.nodes[d];
            w *= axis.weights[d];
            if i > 0 {
                w *= s[i];
            }
            upper = s[i];
        }
        points.extend_from_slice(&s);
        weights.push(w);
        for d in digits.iter_mut() {
            *d += 1;
            if *d < q {
                break;
            }
            *d = 0;
        }
    }
    Ok(SimplexRule { order: n, points, weights })
}

pub fn simplex_quadrature(spec: &SimplexSpec, integrand: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let rule = simplex_rule(spec)?;
    let mut acc = 0.0;
    for i in 0..rule.len() {
        let v = integrand(rule.point(i));
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("simplex integrand at {:?}", rule.point(i))));
        }
        acc += rule.weights[i] * v;
    }
    Ok(acc)
}
