use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wickshe::basis::hermite_fn;
use wickshe::feynman_kac::{
    expected_local_time_at_start, fk_conditional_estimate, fk_double_average, jackknife, local_time,
    local_time_samples, occupation_functional, path_samples, psi_conditional_samples, psi_joint_samples,
    s_transform_dx_mc, s_transform_mc, s_transform_pde, simulate_path, LevelGrid, McSettings, NoiseRealization,
    PdeGrid, Provenance, TestFunction,
};
use wickshe::kernels::InitialCondition;
use wickshe::rng::Stream;
use wickshe::{par, Error};

fn within(est: wickshe::feynman_kac::Estimate, target: f64, extra: f64) -> bool {
    (est.value - target).abs() <= 3.0 * est.stderr + extra
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn brownian_moments() {
    let s = McSettings::new(0.01).unwrap();
    let ends = path_samples(20_000, 1.0, 0.3, &Stream::new(1, "bm"), &s, |p, _| {
        Ok((p.end() - 0.3, p.positions()[50] - 0.3))
    })
    .unwrap();
    let b1: Vec<f64> = ends.iter().map(|e| e.0).collect();
    let half: Vec<f64> = ends.iter().map(|e| e.1).collect();
    let (m, v) = mean_var(&b1);
    let n = b1.len() as f64;
    assert!(m.abs() < 3.0 * (v / n).sqrt());
    // Var of the sample variance of a normal is 2σ⁴/(n-1).
    assert!((v - 1.0).abs() < 3.0 * (2.0 / n).sqrt());
    let (_, vh) = mean_var(&half);
    assert!((vh - 0.5).abs() < 3.0 * 0.5 * (2.0 / n).sqrt());
}

#[test]
fn shortened_last_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = simulate_path(0.1025, 0.01, 0.0, &mut rng).unwrap();
    assert_eq!(p.steps(), 11);
    assert!((p.step_len(10) - 0.0025).abs() < 1e-12);
    assert_eq!(p.time(11), 0.1025);
    assert!(simulate_path(1.0, 0.0, 0.0, &mut rng).is_err());
}

#[test]
fn occupation_identity_per_path() {
    let s = McSettings::new(1e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for j in [1usize, 2] {
        let phi = TestFunction::hermite_mode(1.0, j).unwrap();
        let lip = (0..2001).map(|k| phi.derivative(-10.0 + 0.01 * k as f64).unwrap().abs()).fold(0.0, f64::max);
        for _ in 0..20 {
            let path = simulate_path(1.0, s.dt, 0.0, &mut rng).unwrap();
            let grid = LevelGrid::for_horizon(0.0, 1.0, s.delta_a).unwrap();
            let prof = local_time(&path, &grid).unwrap();
            let a = prof.integrate(|y| phi.eval(y));
            let b = occupation_functional(&path, |y| phi.eval(y)).unwrap();
            // Each sample moves by at most Δa/2 when it is snapped to its level.
            assert!((a - b).abs() <= 0.5 * s.delta_a * lip * 1.0 + 1e-12, "e{j}: {a} vs {b}");
        }
    }
}

#[test]
fn short_time_occupation_of_e1() {
    let s = McSettings::new(1e-3).unwrap();
    let (t, x) = (0.02, 0.4);
    let v = path_samples(20_000, t, x, &Stream::new(2, "occ"), &s, |p, _| {
        occupation_functional(p, |y| hermite_fn(1, y))
    })
    .unwrap();
    let e = jackknife(&v);
    // E ∫ φ(B_s) ds = t φ(x) + t²/4 φ''(x) + O(t³).
    let phi2 = (x * x - 1.0) * hermite_fn(1, x);
    assert!(within(e, t * hermite_fn(1, x), 0.25 * t * t * phi2.abs() + 1e-6));
}

#[test]
fn local_time_at_start_matches_estimator_expectation() {
    let s = McSettings::new(1e-3).unwrap();
    let v = local_time_samples(1.0, 0.0, 20_000, &Stream::new(3, "lt"), &s, |p| p.at(0.0).unwrap()).unwrap();
    let e = jackknife(&v);
    let exact = expected_local_time_at_start(1.0, s.dt, s.delta_a);
    assert!(within(e, exact, 0.0), "{e} vs {exact}");
}

#[test]
fn psi_is_conditionally_gaussian() {
    let s = McSettings::new(1e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let path = simulate_path(1.0, s.dt, 0.0, &mut rng).unwrap();
    let prof = local_time(&path, &LevelGrid::for_horizon(0.0, 1.0, s.delta_a).unwrap()).unwrap();
    let q = prof.squared_integral();
    let psi: Vec<f64> =
        psi_conditional_samples(&prof, 20_000, &Stream::new(4, "psi"), &s).unwrap().iter().map(|p| p.value()).collect();
    let n = psi.len() as f64;
    let (m, v) = mean_var(&psi);
    assert!((m + 0.5 * q).abs() < 3.0 * (q / n).sqrt());
    assert!((v - q).abs() < 3.0 * q * (2.0 / n).sqrt());
    let skew = psi.iter().map(|x| ((x - m) / v.sqrt()).powi(3)).sum::<f64>() / n;
    assert!(skew.abs() < 3.0 * (6.0 / n).sqrt());
}

#[test]
fn exponential_of_psi_has_unit_mean() {
    let s = McSettings::new(1e-3).unwrap();
    let v: Vec<f64> = psi_joint_samples(0.5, 0.0, 20_000, &Stream::new(5, "joint"), &s)
        .unwrap()
        .iter()
        .map(|p| p.value().exp())
        .collect();
    assert!(within(jackknife(&v), 1.0, 0.0));
}

#[test]
fn zero_noise_estimate_decreases_in_time() {
    let s = McSettings::new(1e-3).unwrap();
    let u0 = InitialCondition::constant(1.0);
    let mut prev = 1.0;
    for t in [0.25, 0.5, 1.0] {
        let grid = LevelGrid::for_horizon(0.0, t, s.delta_a).unwrap();
        let e = fk_conditional_estimate(t, 0.0, &u0, &NoiseRealization::zero(grid, 0), 2000, &Stream::new(6, "z"), &s)
            .unwrap();
        assert!(e.value < prev);
        prev = e.value;
    }
}

#[test]
fn double_average_is_the_heat_flow() {
    let s = McSettings::new(1e-3).unwrap();
    let one = fk_double_average(0.5, 0.0, &InitialCondition::constant(1.0), 60, 300, &Stream::new(7, "d1"), &s).unwrap();
    assert!(within(one, 1.0, 0.0), "{one}");
    let x = std::f64::consts::FRAC_PI_2;
    let sine = fk_double_average(0.5, x, &InitialCondition::sine(1.0, 1.0), 60, 300, &Stream::new(7, "d2"), &s).unwrap();
    assert!(within(sine, (-0.25f64).exp(), 0.0), "{sine}");
}

#[test]
fn noise_views_are_consistent() {
    let grid = LevelGrid::for_horizon(0.0, 1.0, 0.0632).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws = 2000;
    let mut inc_sq = [0.0; 2];
    let mut mode_sq = [0.0; 2];
    for _ in 0..draws {
        for (k, noise) in [
            NoiseRealization::sample_grid_first(grid, 3, &mut rng),
            NoiseRealization::sample_mode_first(grid, 3, &mut rng).unwrap(),
        ]
        .iter()
        .enumerate()
        {
            inc_sq[k] += noise.increments().iter().map(|v| v * v).sum::<f64>() / grid.len() as f64;
            mode_sq[k] += noise.modes().values.iter().map(|v| v * v).sum::<f64>() / 3.0;
            // Both views describe the same sample.
            let w = noise.w_phi(|y| hermite_fn(2, y));
            assert!((w - noise.modes().values[1]).abs() < 1e-10, "{:?}", noise.provenance());
        }
    }
    for k in 0..2 {
        assert!((inc_sq[k] / draws as f64 / grid.delta() - 1.0).abs() < 0.02);
        assert!((mode_sq[k] / draws as f64 - 1.0).abs() < 0.1);
    }
    assert_eq!(NoiseRealization::zero(grid, 2).provenance(), Provenance::Zero);
}

#[test]
fn s_transform_examples() {
    let s = McSettings::new(1e-3).unwrap();
    let one = InitialCondition::constant(1.0);
    let c = s_transform_mc(1.0, 0.0, &one, &TestFunction::constant(0.3), 200, &Stream::new(1, "c"), &s).unwrap();
    assert!((c.value - 0.3f64.exp()).abs() < 1e-12);
    let sine = InitialCondition::sine(1.0, 1.0);
    let d = s_transform_dx_mc(1.0, 0.0, &sine, &TestFunction::zero(), 20_000, &Stream::new(1, "d"), &s).unwrap();
    assert!(within(d, (-0.5f64).exp(), 0.0), "{d}");
    let z = s_transform_dx_mc(1.0, 0.0, &one, &TestFunction::zero(), 200, &Stream::new(1, "z"), &s).unwrap();
    assert_eq!(z.value, 0.0);
}

#[test]
fn s_transform_matches_the_feynman_kac_pde() {
    let s = McSettings::new(1e-3).unwrap();
    let u0 = InitialCondition::sine(1.0, 1.0);
    let bump = TestFunction::gaussian_bump(0.5, 0.3, 0.7).unwrap();
    let (v, dv) = s_transform_pde(1.0, 0.4, &u0, &bump, &PdeGrid::default()).unwrap();
    let a = s_transform_mc(1.0, 0.4, &u0, &bump, 20_000, &Stream::new(2, "a"), &s).unwrap();
    let b = s_transform_dx_mc(1.0, 0.4, &u0, &bump, 20_000, &Stream::new(2, "b"), &s).unwrap();
    assert!(within(a, v, 0.0), "{a} vs {v}");
    assert!(within(b, dv, 0.0), "{b} vs {dv}");
}

#[test]
fn estimators_refuse_bad_input() {
    let s = McSettings::default();
    let one = InitialCondition::constant(1.0);
    let st = Stream::new(0, "e");
    assert!(matches!(s_transform_mc(1.0, 0.0, &one, &TestFunction::zero(), 99, &st, &s), Err(Error::InvalidArgument(_))));
    assert!(matches!(
        s_transform_mc(2.0, 0.0, &one, &TestFunction::constant(30.0), 100, &st, &s),
        Err(Error::Overflow(_))
    ));
    let rough = InitialCondition::custom(|x: f64| x.abs().min(1.0), None, 1.0, Some(1.0));
    assert!(matches!(
        s_transform_dx_mc(1.0, 0.0, &rough, &TestFunction::zero(), 100, &st, &s),
        Err(Error::MissingDerivative)
    ));
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let s = McSettings { batch_size: 256, ..McSettings::new(1e-3).unwrap() };
    let bump = TestFunction::gaussian_bump(0.5, 0.3, 0.7).unwrap();
    let run = |threads| {
        par::with_threads(threads, || {
            s_transform_mc(1.0, 0.0, &InitialCondition::sine(1.0, 1.0), &bump, 2000, &Stream::new(77, "t"), &s).unwrap()
        })
    };
    let a = run(1);
    for threads in [2, 8] {
        let b = run(threads);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }
}
