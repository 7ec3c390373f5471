use libm::erfc;

use wickshe::chaos::{propagator_oracle, PropagatorGrid};
use wickshe::basis::TruncationSpec;
use wickshe::kernels::{heat_kernel, heat_kernel_dx, heat_kernel_time_integral, InitialCondition};
use wickshe::par;
use wickshe::quad::{self, composite_legendre, Tolerance};
use wickshe::regularity::{
    fit_exponent, geometric_lags, increment_moments, local_time_increment_check, sampled_increment_moment,
    ChaosField, Direction, IncrementField, KernelSpaceField, Quantity,
};
use wickshe::feynman_kac::McSettings;
use wickshe::rng::Stream;
use wickshe::Error;

/// Unsymmetrized order-2 kernel of u (or ∂ₓu) for u₀ ≡ 1:
/// g(y1, y2) = ∫_0^t k(τ, x - y1) P1(t - τ, y1 - y2) dτ with k = p or ∂ₓp.
fn chain(t: f64, x: f64, y1: f64, y2: f64, q: Quantity) -> f64 {
    let f = |s: f64| {
        let tau = s * s;
        if tau == 0.0 {
            return 0.0;
        }
        let k = match q {
            Quantity::Value => heat_kernel(tau, x - y1).unwrap(),
            Quantity::Derivative => heat_kernel_dx(tau, x - y1).unwrap(),
        };
        2.0 * s * k * heat_kernel_time_integral(t - tau, y1 - y2)
    };
    quad::adaptive(f, 0.0, t.sqrt(), Tolerance::new(1e-13, 1e-11)).unwrap()
}

/// 2‖Sym(g(x) - g(x'))‖² on a tensor Gauss-Legendre grid, or 2‖Sym g(x)‖²
/// when x' is None.
fn order_two_on_grid(t: f64, x: f64, other: Option<f64>, q: Quantity, half_width: f64, per_unit: f64) -> f64 {
    let rule = composite_legendre(-half_width, half_width, (per_unit * half_width) as usize, 6);
    let (ys, ws) = (&rule.nodes, &rule.weights);
    let n = ys.len();
    let rows = par::map(n, |i| {
        (0..n)
            .map(|j| {
                let a = chain(t, x, ys[i], ys[j], q);
                a - other.map_or(0.0, |x2| chain(t, x2, ys[i], ys[j], q))
            })
            .collect::<Vec<f64>>()
    });
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let sym = 0.5 * (rows[i][j] + rows[j][i]);
            acc += ws[i] * ws[j] * sym * sym;
        }
    }
    2.0 * acc
}

/// The kinks of Sym g on the lines y1 = y2 cut across the tensor panels and
/// leave an O(panel²) error, removed here by one Richardson step.
fn order_two_by_grid(t: f64, x: f64, other: Option<f64>, q: Quantity, half_width: f64) -> f64 {
    let coarse = order_two_on_grid(t, x, other, q, half_width, 20.0);
    let fine = order_two_on_grid(t, x, other, q, half_width, 40.0);
    fine + (fine - coarse) / 3.0
}

#[test]
fn order_two_masses_match_the_kernel_grid() {
    let tol = 2e-5;
    for (q, t, half_width) in [(Quantity::Value, 0.5, 6.0), (Quantity::Derivative, 0.2, 4.0)] {
        let field = KernelSpaceField::new(q, 1.0);
        let m = field.order_masses((t, 0.0)).unwrap()[2];
        let g = order_two_by_grid(t, 0.0, None, q, half_width);
        eprintln!("{q:?} mass {m} grid {g}");
        assert!((m - g).abs() < tol * g, "{q:?}: {m} vs {g}");
        let h = 0.1;
        let inc = field.increment_masses((t, 0.0), (t, h)).unwrap()[2];
        let gi = order_two_by_grid(t, 0.0, Some(h), q, half_width);
        eprintln!("{q:?} inc {inc} grid {gi}");
        assert!((inc - gi).abs() < tol * gi, "{q:?} increment: {inc} vs {gi}");
    }
}


/// ∂ₓ of the order-1 kernel for u₀ ≡ 1 is -sign(d) erfc(|d|/sqrt(2t)), d = x - y.
fn first_order_dx(t: f64, d: f64) -> f64 {
    -d.signum() * erfc(d.abs() / (2.0 * t).sqrt())
}

#[test]
fn first_order_derivative_matches_closed_kernel() {
    let t = 0.3;
    let field = KernelSpaceField::new(Quantity::Derivative, 1.0);
    let tol = Tolerance::new(1e-14, 1e-12);
    let sq = |d: f64| first_order_dx(t, d).powi(2);
    let mass = 2.0 * quad::adaptive_to_infinity(sq, 0.0, tol).unwrap();
    assert!((field.order_masses((t, 0.0)).unwrap()[1] - mass).abs() < 1e-9 * mass);
    let h = 0.05;
    let diff = |d: f64| (first_order_dx(t, d + h) - first_order_dx(t, d)).powi(2);
    // Jumps at d = -h and d = 0.
    let inc = quad::adaptive_to_infinity(diff, 0.0, tol).unwrap()
        + quad::adaptive(diff, -h, 0.0, tol).unwrap()
        + quad::adaptive_to_infinity(|d| diff(-h - d), 0.0, tol).unwrap();
    let got = field.increment_masses((t, 0.0), (t, h)).unwrap()[1];
    assert!((got - inc).abs() < 1e-8 * inc, "{got} vs {inc}");
}

#[test]
fn truncated_masses_increase_towards_the_kernel_space_value() {
    let t = 0.5;
    let full = KernelSpaceField::new(Quantity::Value, 1.0).order_masses((t, 0.0)).unwrap();
    let mut prev = [0.0; 3];
    for j in [2, 4, 8] {
        let prop = propagator_oracle(TruncationSpec::new(2, j).unwrap(), &InitialCondition::constant(1.0), &PropagatorGrid::default(), &[t])
            .unwrap();
        let c = prop.coefficients_at(t, 0.0).unwrap();
        for n in 1..=2 {
            let m = c.order_mass(n);
            assert!(m >= prev[n] - 1e-9 && m <= full[n] * (1.0 + 1e-3), "J={j} n={n}: {m} vs {}", full[n]);
            prev[n] = m;
        }
    }
    assert!(prev[1] > 0.9 * full[1]);
}

fn dyadic() -> Vec<f64> {
    geometric_lags(1.0 / 128.0, 0.125, 2).unwrap()
}

#[test]
fn slopes_of_the_kernel_space_fields() {
    let cases = [
        (Quantity::Value, Direction::Time, (0.0, 0.0), 1.5, 0.2),
        (Quantity::Derivative, Direction::Space, (0.2, 0.0), 1.0, 0.2),
        (Quantity::Derivative, Direction::Time, (0.0, 0.0), 0.5, 0.2),
    ];
    for (q, d, base, target, tol) in cases {
        let curve = increment_moments(&KernelSpaceField::new(q, 1.0), base, d, &dyadic()).unwrap();
        let fit = fit_exponent(&curve).unwrap();
        assert!(curve.monotone && curve.max_tail_share <= 0.05);
        assert!((fit.slope - target).abs() <= tol && !fit.low_r_squared, "{q:?} {d}: {fit:?}");
    }
    let curve = increment_moments(&KernelSpaceField::new(Quantity::Value, 1.0), (0.2, 0.0), Direction::Space, &dyadic()).unwrap();
    assert!(fit_exponent(&curve).unwrap().slope >= 1.8);
}

#[test]
fn the_tail_gate_refuses_late_times() {
    let r = increment_moments(&KernelSpaceField::new(Quantity::Derivative, 1.0), (1.0, 0.0), Direction::Space, &dyadic());
    assert!(matches!(r, Err(Error::TruncationTail { order: 2, .. })));
}

#[test]
fn constant_field_has_zero_moments() {
    let spec = TruncationSpec::new(2, 3).unwrap();
    let field = ChaosField::new(2, move |_, _| {
        let mut c = wickshe::chaos::ChaosCoefficients::new((0.0, 0.0), spec)?;
        c.set(&wickshe::basis::MultiIndex::zero(), 2.0)?;
        Ok(c)
    });
    let curve = increment_moments(&field, (1.0, 0.0), Direction::Space, &dyadic()).unwrap();
    assert!(curve.moments.iter().all(|&m| m == 0.0));
    assert!(matches!(fit_exponent(&curve), Err(Error::Degenerate(_))));
}

#[test]
fn sampled_moments_agree_with_coefficient_moments() {
    let u0 = InitialCondition::sine(1.0, 1.0);
    let prop = propagator_oracle(TruncationSpec::new(3, 4).unwrap(), &u0, &PropagatorGrid::default(), &[0.5]).unwrap();
    let field = ChaosField::new(3, |t, x| prop.coefficients_at(t, x));
    let lags = [0.1, 0.2, 0.4];
    let curve = increment_moments(&field, (0.5, 0.3), Direction::Space, &lags).unwrap();
    let a = prop.coefficients_at(0.5, 0.3).unwrap();
    for (i, &h) in lags.iter().enumerate() {
        let b = prop.coefficients_at(0.5, 0.3 + h).unwrap();
        let e = sampled_increment_moment(&a, &b, 10_000, &Stream::new(3, &format!("lag{i}"))).unwrap();
        assert!((e.value - curve.moments[i]).abs() <= 3.0 * e.stderr, "h={h}: {e} vs {}", curve.moments[i]);
    }
}

#[test]
fn local_time_increment_law() {
    let s = McSettings::with_delta_a(1e-3, 0.025).unwrap();
    let rows = local_time_increment_check(1.0, &[0.0, 0.1], 4000, &Stream::new(4, "lti"), &s).unwrap();
    assert_eq!(rows[0].ratio.value, 0.0);
    let r = rows[1].ratio;
    assert!(r.value > 3.6 - 3.0 * r.stderr && r.value < 4.4 + 3.0 * r.stderr, "{r}");
    assert!(local_time_increment_check(1.0, &[0.03], 200, &Stream::new(4, "x"), &s).is_err());
    assert!(local_time_increment_check(1.0, &[0.0375], 200, &Stream::new(4, "x"), &s).is_err());
}
