//! One function per subcommand. Each returns its tables and checks; writing
//! them out is left to the runner.

use crate::basis::{MultiIndex, TruncationSpec};
use crate::chaos::{
    coefficients_table, fk_kernel, mw_kernel, order_norm, propagator_oracle, s_transform_by_order, sym_cs_kernel,
    ChaosCoefficients, ChaosSolver, KernelForm, PropagatorGrid, PropagatorSolution, Scheme, SolverOptions,
};
use crate::csv::{Cell, Table};
use crate::error::{Error, Result};
use crate::feynman_kac::{
    expected_local_time_at_start, expected_squared_local_time, fk_double_average, jackknife, local_time,
    local_time_at_start_limit, local_time_samples, path_samples, path_table, profile_table, psi_conditional_samples,
    psi_joint_samples, s_transform_dx_mc, s_transform_mc, s_transform_pde, simulate_path, squared_local_time_limit,
    Estimate, LevelGrid, McSettings, PdeGrid, TestFunction,
};
use crate::kernels::{apply_heat_semigroup, InitialCondition, QuadratureGrid};
use crate::regularity::{
    curve_table, fit_exponent, fit_table, geometric_lags, increment_moments, local_time_increment_check,
    sampled_increment_moment, ChaosField, Direction, ExponentEstimate, IncrementMomentCurve, KernelSpaceField,
    Quantity,
};
use crate::rng::Stream;

use super::config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<(String, Table)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    fn table(&mut self, name: &str, table: Table) {
        self.tables.push((name.to_string(), table));
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn initial_condition(cfg: &RunConfig) -> Result<InitialCondition> {
    let ic = &cfg.initial_condition;
    match ic.tag.as_str() {
        "constant" => Ok(InitialCondition::constant(ic.value)),
        "sine" => Ok(InitialCondition::sine(ic.amplitude, ic.frequency)),
        "gaussian_bump" => InitialCondition::gaussian_bump(ic.amplitude, ic.center, ic.width),
        "tanh" => InitialCondition::tanh(ic.amplitude, ic.scale),
        other => Err(Error::InvalidArgument(format!("unknown initial condition {other}"))),
    }
}

pub fn mc_settings(cfg: &RunConfig) -> Result<McSettings> {
    let mut s = McSettings::with_delta_a(cfg.mc.dt, cfg.mc.delta_a_factor * cfg.mc.dt.sqrt())?;
    s.batch_size = cfg.mc.batch_size;
    Ok(s)
}

pub fn propagator_grid(cfg: &RunConfig) -> PropagatorGrid {
    let p = &cfg.propagator;
    let scheme = if p.scheme == "explicit" { Scheme::Explicit } else { Scheme::CrankNicolson };
    PropagatorGrid { dx: p.dx, dt: p.dt, half_width: p.half_width, scheme, forcing: true }
}

fn quadrature_grid(cfg: &RunConfig, max_abs_x: f64, horizon: f64) -> Result<QuadratureGrid> {
    let q = &cfg.quadrature;
    if q.half_width == 0.0 {
        return QuadratureGrid::for_horizon(max_abs_x, horizon);
    }
    let panels = if q.panels == 0 { (2.0 * q.half_width / 0.25).ceil() as usize } else { q.panels };
    QuadratureGrid::new(q.half_width, panels)
}

fn solver(cfg: &RunConfig, u0: &InitialCondition) -> Result<ChaosSolver> {
    let max_x = cfg.probes.iter().map(|p| p[1].abs()).fold(0.0, f64::max) + 0.01;
    let horizon = cfg.probes.iter().map(|p| p[0]).fold(0.0, f64::max);
    let opts =
        SolverOptions { simplex_points: cfg.quadrature.simplex_points, grading: cfg.quadrature.grading, ..SolverOptions::default() };
    Ok(ChaosSolver::new(u0.clone(), quadrature_grid(cfg, max_x, horizon)?, opts))
}

fn stream(cfg: &RunConfig, name: &str) -> Stream {
    Stream::new(cfg.seed, name)
}

const SCALE_FLOOR: f64 = 1e-10;

/// Sup over the lattice of every order-n coefficient, optionally of its
/// central x-difference.
fn level_sup(prop: &PropagatorSolution, t: f64, n: usize, derivative: bool) -> Result<f64> {
    let dx = prop.xs()[1] - prop.xs()[0];
    let mut sup = 0.0f64;
    for k in prop.index_set().degree_range(n) {
        let lat = prop.lattice(t, k)?;
        if derivative {
            for i in 1..lat.len() - 1 {
                sup = sup.max(((lat[i + 1] - lat[i - 1]) / (2.0 * dx)).abs());
            }
        } else {
            sup = lat.iter().fold(sup, |m, v| m.max(v.abs()));
        }
    }
    Ok(sup)
}

fn coefficient_run(cfg: &RunConfig, derivative: bool) -> Result<Outcome> {
    let mut out = Outcome::default();
    let u0 = initial_condition(cfg)?;
    let spec = TruncationSpec::new(cfg.truncation.n, cfg.truncation.j)?;
    let times: Vec<f64> = cfg.probes.iter().map(|p| p[0]).collect();
    let grid = propagator_grid(cfg);
    let prop = propagator_oracle(spec, &u0, &grid, &times)?;
    let half = PropagatorGrid { dx: 0.5 * grid.dx, dt: 0.5 * grid.dt, ..grid.clone() };
    let fine = propagator_oracle(spec, &u0, &half, &times)?;
    let qn = cfg.truncation.n.min(cfg.quadrature.max_order);
    let qspec = TruncationSpec::new(qn, cfg.truncation.j)?;
    let solver = solver(cfg, &u0)?;

    let mut primary = Vec::new();
    let mut check = Table::new(&["alpha_encoded", "t", "x", "quadrature", "propagator_extrapolated", "scaled_error"]);
    let mut moments = Table::new(&["t", "x", "order", "mass"]);
    let mut worst = 0.0f64;
    for p in &cfg.probes {
        let (t, x) = (p[0], p[1]);
        // One Richardson step on the second-order lattice error.
        let (mut field, quad) = if derivative {
            let c = prop.dx_coefficients_at(t, x)?;
            (fine.dx_coefficients_at(t, x)?.combine(4.0 / 3.0, &c, -1.0 / 3.0)?, solver.dx_coefficients(qspec, t, x, 0.0)?)
        } else {
            let c = prop.coefficients_at(t, x)?;
            (fine.coefficients_at(t, x)?.combine(4.0 / 3.0, &c, -1.0 / 3.0)?, solver.coefficients(qspec, t, x)?)
        };
        for n in 0..=qn {
            let sup = level_sup(&prop, t, n, derivative)?;
            for k in quad.index_set().degree_range(n) {
                let alpha = &quad.indices()[k];
                let (a, b) = (quad.values()[k], field.get(alpha));
                let scale = b.abs().max(sup);
                // Orders that vanish identically are compared in absolute terms.
                let err = if scale > SCALE_FLOOR { (a - b).abs() / scale } else { (a - b).abs() };
                worst = worst.max(err);
                check.push(vec![Cell::from(alpha.encode()), t.into(), x.into(), a.into(), b.into(), err.into()]);
            }
        }
        for (alpha, v) in quad.iter() {
            field.set(alpha, v)?;
        }
        for n in 0..=cfg.truncation.n {
            moments.push(vec![t.into(), x.into(), n.into(), field.order_mass(n).into()]);
        }
        primary.push(field);
    }
    let stem = if derivative { "derivative" } else { "chaos" };
    out.table(&format!("{stem}_coefficients.csv"), coefficients_table(&primary));
    out.table(&format!("{stem}_check.csv"), check);
    out.table(&format!("{stem}_moments.csv"), moments);
    out.check(
        &format!("{stem}: quadrature vs propagator, |alpha| <= {qn}"),
        worst <= 1e-3,
        format!("max scaled error {worst:.3e} (limit 1e-3)"),
    );

    if derivative {
        finite_difference_check(cfg, &solver, qn.min(2), &mut out)?;
        epsilon_sequence(cfg, &solver, &mut out)?;
    }
    Ok(out)
}

fn finite_difference_check(cfg: &RunConfig, solver: &ChaosSolver, order: usize, out: &mut Outcome) -> Result<()> {
    let spec = TruncationSpec::new(order, cfg.truncation.j)?;
    let h = 1e-3;
    let mut table = Table::new(&["alpha_encoded", "t", "x", "finite_difference", "derivative", "abs_error"]);
    let mut worst = 0.0f64;
    for p in &cfg.probes {
        let (t, x) = (p[0], p[1]);
        let d = solver.dx_coefficients(spec, t, x, 0.0)?;
        let plus = solver.coefficients(spec, t, x + h)?;
        let minus = solver.coefficients(spec, t, x - h)?;
        for (k, alpha) in d.indices().iter().enumerate() {
            let fd = (plus.values()[k] - minus.values()[k]) / (2.0 * h);
            let err = (fd - d.values()[k]).abs();
            worst = worst.max(err);
            table.push(vec![Cell::from(alpha.encode()), t.into(), x.into(), fd.into(), d.values()[k].into(), err.into()]);
        }
    }
    out.table("derivative_fd_check.csv", table);
    out.check(
        &format!("derivative: central differences, |alpha| <= {order}"),
        worst <= 1e-3,
        format!("max abs error {worst:.3e} (limit 1e-3)"),
    );
    Ok(())
}

fn epsilon_sequence(cfg: &RunConfig, solver: &ChaosSolver, out: &mut Outcome) -> Result<()> {
    // The probe farthest from the origin, where odd coefficients do not vanish.
    let p = cfg.probes.iter().max_by(|a, b| a[1].abs().total_cmp(&b[1].abs())).expect("probes are validated non-empty");
    let (t, x) = (p[0], p[1]);
    let alpha = MultiIndex::unit(1);
    let limit = solver.dx_coefficient(&alpha, t, x, 0.0)?;
    let mut table = Table::new(&["epsilon", "value", "gap"]);
    let mut gaps = Vec::new();
    for eps in [0.2f64, 0.1, 0.05, 0.025, 0.0125] {
        let v = solver.dx_coefficient(&alpha, t, x, eps.min(0.5 * t))?;
        gaps.push((v - limit).abs());
        table.push(vec![eps.into(), v.into(), (v - limit).abs().into()]);
    }
    table.push(vec![0.0.into(), limit.into(), 0.0.into()]);
    out.table("derivative_epsilon.csv", table);
    let shrinking = gaps.windows(2).all(|w| w[1] <= w[0]);
    out.check("derivative: epsilon sequence converges", shrinking, format!("at (t, x) = ({t}, {x}), gaps {:?}", gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>()));
    Ok(())
}

pub fn chaos(cfg: &RunConfig) -> Result<Outcome> {
    coefficient_run(cfg, false)
}

pub fn derivative(cfg: &RunConfig) -> Result<Outcome> {
    coefficient_run(cfg, true)
}

fn z_row(est: &Estimate, target: f64) -> f64 {
    let d = est.value - target;
    if d == 0.0 {
        0.0
    } else {
        d / est.stderr
    }
}

pub fn fk(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let u0 = initial_condition(cfg)?;
    let settings = mc_settings(cfg)?;
    let per_draw = cfg.mc.n_paths / cfg.mc.n_noise;
    let mut table = Table::new(&["t", "x", "estimate", "stderr", "heat_flow", "z"]);
    let mut worst = 0.0f64;
    for (i, p) in cfg.probes.iter().enumerate() {
        let (t, x) = (p[0], p[1]);
        let est = fk_double_average(t, x, &u0, cfg.mc.n_noise, per_draw, &stream(cfg, "fk").child(&i.to_string()), &settings)?;
        let target = apply_heat_semigroup(&u0, t, x, &QuadratureGrid::for_horizon(x.abs(), t)?)?;
        let z = z_row(&est, target);
        worst = worst.max(z.abs());
        table.push(vec![t.into(), x.into(), est.value.into(), est.stderr.into(), target.into(), z.into()]);
    }
    out.table("fk.csv", table);
    out.check("fk: double average equals the heat flow", worst <= 3.0, format!("max |z| {worst:.2}"));

    let (law, checks) = psi_law(cfg)?;
    out.table("psi_law.csv", law);
    out.checks.extend(checks);

    if cfg.mc.dump_ensembles {
        let (t, x) = (cfg.probes[0][0], cfg.probes[0][1]);
        let n = cfg.mc.n_paths.min(1000);
        let grid = LevelGrid::for_horizon(x, t, settings.delta_a)?;
        let paths = path_samples(n, t, x, &stream(cfg, "dump"), &settings, |p, _| Ok(p.clone()))?;
        let profiles = paths.iter().map(|p| local_time(p, &grid)).collect::<Result<Vec<_>>>()?;
        out.table("paths.csv", path_table(&paths));
        out.table("profiles.csv", profile_table(&profiles));
    }
    Ok(out)
}

/// Law of Ψ along one path at the first probe, and E exp Ψ over paths and noise.
pub fn psi_law(cfg: &RunConfig) -> Result<(Table, Vec<Check>)> {
    let settings = mc_settings(cfg)?;
    let (t, x) = (cfg.probes[0][0], cfg.probes[0][1]);
    let mut rng = stream(cfg, "psi-path").batch(0);
    let path = simulate_path(t, settings.dt, x, &mut rng)?;
    let prof = local_time(&path, &LevelGrid::for_horizon(x, t, settings.delta_a)?)?;
    let q = prof.squared_integral();
    let psi: Vec<f64> =
        psi_conditional_samples(&prof, cfg.mc.n_paths, &stream(cfg, "psi-noise"), &settings)?.iter().map(|p| p.value()).collect();
    let n = psi.len() as f64;
    let mean = jackknife(&psi);
    let centred: Vec<f64> = psi.iter().map(|v| (v - mean.value).powi(2)).collect();
    let var = jackknife(&centred);
    let sd = var.value.sqrt();
    let skew = psi.iter().map(|v| ((v - mean.value) / sd).powi(3)).sum::<f64>() / n;
    let skew_se = (6.0 / n).sqrt();
    let joint: Vec<f64> =
        psi_joint_samples(t, x, cfg.mc.n_paths, &stream(cfg, "psi-joint"), &settings)?.iter().map(|p| p.value().exp()).collect();
    let unit = jackknife(&joint);
    let mut checks = Vec::new();
    let mut law = Table::new(&["statistic", "estimate", "stderr", "target", "z"]);
    let rows = [
        ("conditional_mean", mean.value, mean.stderr, -0.5 * q),
        ("conditional_variance", var.value, var.stderr, q),
        ("conditional_skewness", skew, skew_se, 0.0),
        ("mean_exp_psi", unit.value, unit.stderr, 1.0),
    ];
    for (name, v, se, target) in rows {
        let z = if v == target { 0.0 } else { (v - target) / se };
        law.push(vec![name.into(), v.into(), se.into(), target.into(), z.into()]);
        checks.push(Check {
            name: format!("psi: {name}"),
            passed: z.abs() <= 3.0,
            detail: format!("{v:.6} ± {se:.2e} vs {target:.6} (z = {z:.2})"),
        });
    }
    Ok((law, checks))
}

/// One row of the S-transform comparison.
#[derive(Debug, Clone)]
pub struct SRow {
    pub phi: String,
    pub quantity: &'static str,
    pub chaos: f64,
    pub mc: Estimate,
    /// Geometric extrapolation of the orders above N.
    pub order_tail: f64,
    /// |S(φ) - S(φ_J)| from the Feynman-Kac equation, for the modes above J.
    pub mode_tail: f64,
}

impl SRow {
    pub fn allowance(&self) -> f64 {
        3.0 * self.mc.stderr + self.order_tail + self.mode_tail
    }

    pub fn passed(&self) -> bool {
        (self.chaos - self.mc.value).abs() <= self.allowance()
    }

    pub fn z(&self) -> f64 {
        z_row(&self.mc, self.chaos)
    }
}

/// |c_N| r/(1 - r) with r = |c_N / c_{N-1}|; |c_N| when the ratio is not below one.
fn order_tail(parts: &[f64]) -> f64 {
    let n = parts.len();
    if n < 2 || parts[n - 1] == 0.0 {
        return 0.0;
    }
    let r = (parts[n - 1] / parts[n - 2]).abs();
    if r < 1.0 {
        parts[n - 1].abs() * r / (1.0 - r)
    } else {
        parts[n - 1].abs()
    }
}

pub fn test_functions() -> Result<Vec<(String, TestFunction)>> {
    Ok(vec![
        ("zero".to_string(), TestFunction::zero()),
        ("half_e1".to_string(), TestFunction::hermite_mode(0.5, 1)?),
        ("bump".to_string(), TestFunction::gaussian_bump(0.5, 0.3, 0.7)?),
    ])
}

pub fn stransform_rows(cfg: &RunConfig, u0: &InitialCondition) -> Result<Vec<SRow>> {
    let (t, x) = (cfg.stransform.t, cfg.stransform.x);
    let j = cfg.truncation.j;
    let spec = TruncationSpec::new(cfg.truncation.n, j)?;
    let prop = propagator_oracle(spec, u0, &propagator_grid(cfg), &[t])?;
    let value = prop.coefficients_at(t, x)?;
    let slope = prop.dx_coefficients_at(t, x)?;
    let settings = mc_settings(cfg)?;
    let pde = PdeGrid::default();
    let mut rows = Vec::new();
    for (id, phi) in test_functions()? {
        let modes = phi.modes(j, pde.half_width);
        let (v_full, d_full) = s_transform_pde(t, x, u0, &phi, &pde)?;
        let (v_j, d_j) = s_transform_pde(t, x, u0, &phi.projected(j, pde.half_width), &pde)?;
        let sides: [(&'static str, &ChaosCoefficients, f64); 2] =
            [("u", &value, (v_full - v_j).abs()), ("dx_u", &slope, (d_full - d_j).abs())];
        for (quantity, coeffs, mode_tail) in sides {
            let parts = s_transform_by_order(coeffs, &modes)?;
            let chaos = parts.iter().sum();
            let name = format!("stransform-{id}-{quantity}");
            let mc = if quantity == "u" {
                s_transform_mc(t, x, u0, &phi, cfg.mc.n_paths, &stream(cfg, &name), &settings)?
            } else {
                s_transform_dx_mc(t, x, u0, &phi, cfg.mc.n_paths, &stream(cfg, &name), &settings)?
            };
            rows.push(SRow { phi: id.clone(), quantity, chaos, mc, order_tail: order_tail(&parts), mode_tail });
        }
    }
    Ok(rows)
}

pub fn stransform_table(rows: &[SRow]) -> Table {
    let mut table =
        Table::new(&["phi", "quantity", "chaos", "mc", "stderr", "order_tail", "mode_tail", "z", "passed"]);
    for r in rows {
        table.push(vec![
            Cell::from(r.phi.as_str()),
            r.quantity.into(),
            r.chaos.into(),
            r.mc.value.into(),
            r.mc.stderr.into(),
            r.order_tail.into(),
            r.mode_tail.into(),
            r.z().into(),
            r.passed().into(),
        ]);
    }
    table
}

pub fn stransform_compare(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let rows = stransform_rows(cfg, &initial_condition(cfg)?)?;
    for r in &rows {
        out.check(
            &format!("stransform: {} {}", r.phi, r.quantity),
            r.passed(),
            format!("chaos {:.6} vs mc {:.6} ± {:.2e}, allowance {:.2e}", r.chaos, r.mc.value, r.mc.stderr, r.allowance()),
        );
    }
    out.table("stransform.csv", stransform_table(&rows));
    Ok(out)
}

/// Kernel values at one y-probe.
#[derive(Debug, Clone)]
pub struct KernelRow {
    pub order: usize,
    pub u0: &'static str,
    pub y: Vec<f64>,
    pub fk: f64,
    pub mw: f64,
    pub cs: f64,
}

pub fn equivalence_rows(cfg: &RunConfig) -> Result<Vec<KernelRow>> {
    let e = &cfg.equivalence;
    let mut rows = Vec::new();
    for (label, u0) in [("constant", InitialCondition::constant(1.0)), ("sine", InitialCondition::sine(1.0, 1.0))] {
        for n in 1..=2usize {
            let mw = mw_kernel(n, e.t, e.x, &u0, KernelForm::MultipleWiener)?;
            let points: Vec<Vec<f64>> = if n == 1 {
                e.y.iter().map(|&a| vec![a]).collect()
            } else {
                e.y.iter().flat_map(|&a| e.y.iter().map(move |&b| vec![a, b])).collect()
            };
            for y in points {
                let f = fk_kernel(e.t, e.x, &u0, &y)?;
                let m = mw.eval(&y)?;
                let c = sym_cs_kernel(e.t, e.x, &u0, &y, cfg.quadrature.simplex_points)?;
                rows.push(KernelRow { order: n, u0: label, y, fk: f, mw: m, cs: c });
            }
        }
    }
    Ok(rows)
}

pub fn equivalence(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let rows = equivalence_rows(cfg)?;
    let mut table = Table::new(&["n", "u0", "y1", "y2", "fk", "mw", "cs", "fk_minus_cs"]);
    let mut worst = 0.0f64;
    let mut identical = true;
    for r in &rows {
        worst = worst.max((r.fk - r.cs).abs());
        identical &= r.fk.to_bits() == r.mw.to_bits();
        let y2 = if r.y.len() > 1 { Cell::from(r.y[1]) } else { Cell::from("") };
        table.push(vec![
            r.order.into(),
            r.u0.into(),
            r.y[0].into(),
            y2,
            r.fk.into(),
            r.mw.into(),
            r.cs.into(),
            (r.fk - r.cs).into(),
        ]);
    }
    out.table("equivalence.csv", table);
    out.check("equivalence: FK and MW kernels identical", identical, format!("{} probes", rows.len()));
    out.check("equivalence: |FK - Sym CS| <= 1e-3", worst <= 1e-3, format!("max kernel discrepancy {worst:.3e}"));
    Ok(out)
}

const INCREMENT_H: f64 = 0.1;

pub fn localtime(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let settings = mc_settings(cfg)?;
    let t = cfg.localtime.t;
    let samples = local_time_samples(t, 0.0, cfg.mc.n_paths, &stream(cfg, "localtime"), &settings, |p| {
        (p.at(0.0).unwrap_or(0.0), p.squared_integral(), (p.total() - t).abs())
    })?;
    let at_start = jackknife(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    let squared = jackknife(&samples.iter().map(|s| s.1).collect::<Vec<_>>());
    let defect = samples.iter().map(|s| s.2).fold(0.0, f64::max);
    let limit0 = local_time_at_start_limit(t);
    let bias0 = expected_local_time_at_start(t, settings.dt, settings.delta_a) - limit0;
    let limit2 = squared_local_time_limit(t);
    let bias2 = expected_squared_local_time(t, settings.dt, settings.delta_a) - limit2;
    let mut table = Table::new(&["statistic", "estimate", "stderr", "target", "bias", "passed"]);
    let ok_mass = defect <= 1e-12 * t.max(1.0);
    table.push(vec!["total_mass_defect".into(), defect.into(), 0.0.into(), 0.0.into(), 0.0.into(), ok_mass.into()]);
    out.check("localtime: total mass equals t", ok_mass, format!("max |Δa ΣL - t| = {defect:.2e}"));
    for (name, est, target, bias) in [("local_time_at_start", at_start, limit0, bias0), ("squared_integral", squared, limit2, bias2)] {
        let ok = (est.value - target).abs() <= 3.0 * est.stderr + bias.abs();
        table.push(vec![name.into(), est.value.into(), est.stderr.into(), target.into(), bias.into(), ok.into()]);
        out.check(
            &format!("localtime: {name}"),
            ok,
            format!("{:.6} ± {:.2e} vs {target:.6} with bias {bias:+.2e}", est.value, est.stderr),
        );
    }
    out.table("localtime.csv", table);

    let inc_settings = McSettings { delta_a: cfg.localtime.increment_delta_a, ..settings };
    let rows = local_time_increment_check(
        t,
        &cfg.localtime.increment_h,
        cfg.mc.n_paths,
        &stream(cfg, "localtime-increments"),
        &inc_settings,
    )?;
    let mut inc = Table::new(&["h", "ratio", "stderr", "target"]);
    for r in &rows {
        inc.push(vec![r.h.into(), r.ratio.value.into(), r.ratio.stderr.into(), (4.0 * t).into()]);
        if (r.h - INCREMENT_H).abs() < 1e-12 {
            out.check(
                &format!("localtime: increment ratio at h = {INCREMENT_H}"),
                (r.ratio.value - 4.0 * t).abs() <= 0.4 * t,
                format!("{} vs 4t = {} (±10%)", r.ratio, 4.0 * t),
            );
        }
    }
    // The law is 4t h + O(h²), so the ratio is linear in h to first order.
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.h > 0.0).map(|r| (r.h, r.ratio.value)).collect();
    if pts.len() >= 2 {
        let n = pts.len() as f64;
        let (mh, mr) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mh) * (p.1 - mr)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mh).powi(2)).sum();
        let intercept = mr - sxy / sxx * mh;
        out.check(
            "localtime: increment ratio extrapolated to h = 0",
            (intercept - 4.0 * t).abs() <= 0.4 * t,
            format!("intercept {intercept:.4} vs 4t = {} (±10%)", 4.0 * t),
        );
    }
    out.table("localtime_increments.csv", inc);
    Ok(out)
}

/// (label, field, direction, base, target, tolerance); tolerance None means slope >= target.
type SlopeCase = (&'static str, Quantity, Direction, (f64, f64), f64, Option<f64>);

pub fn slope_cases(cfg: &RunConfig) -> Vec<SlopeCase> {
    let ts = cfg.regularity.space_base_t;
    vec![
        ("u", Quantity::Value, Direction::Time, (0.0, 0.0), 1.5, Some(0.2)),
        ("u", Quantity::Value, Direction::Space, (ts, 0.0), 1.8, None),
        ("dx_u", Quantity::Derivative, Direction::Space, (ts, 0.0), 1.0, Some(0.2)),
        ("dx_u", Quantity::Derivative, Direction::Time, (0.0, 0.0), 0.5, Some(0.2)),
    ]
}

pub fn kernel_space_curves(cfg: &RunConfig) -> Result<Vec<(SlopeCase, IncrementMomentCurve, ExponentEstimate)>> {
    let level = match cfg.initial_condition.tag.as_str() {
        "constant" => cfg.initial_condition.value,
        _ => return Err(Error::InvalidArgument("regularity curves need a constant initial condition".into())),
    };
    let lags = geometric_lags(cfg.regularity.h_min, cfg.regularity.h_max, cfg.regularity.per_octave)?;
    slope_cases(cfg)
        .into_iter()
        .map(|case| {
            let field = KernelSpaceField::new(case.1, level);
            let curve = increment_moments(&field, case.3, case.2, &lags)?;
            let fit = fit_exponent(&curve)?;
            Ok((case, curve, fit))
        })
        .collect()
}

pub fn order_norm_table(cfg: &RunConfig) -> Result<(Table, Vec<Check>)> {
    let o = &cfg.order_norm;
    let spec = TruncationSpec::new(o.n, o.j)?;
    let grid = PropagatorGrid { dx: o.dx, dt: o.dt, half_width: o.half_width, ..PropagatorGrid::default() };
    let prop = propagator_oracle(spec, &InitialCondition::constant(1.0), &grid, &[o.t])?;
    let k = prop.dx_coefficients_at(o.t, 0.0)?;
    let mut table = Table::new(&["lambda", "n", "order_norm", "ratio", "partial_sum"]);
    let mut checks = Vec::new();
    for &lambda in &o.lambdas {
        let norms: Vec<f64> = (0..=o.n).map(|n| order_norm(&k, n, lambda)).collect::<Result<_>>()?;
        let mut sum = 0.0;
        let mut ratios = Vec::new();
        for n in 0..=o.n {
            sum += norms[n];
            let ratio = if n < o.n && norms[n] > 0.0 { norms[n + 1] / norms[n] } else { f64::NAN };
            if n >= 1 && ratio.is_finite() {
                ratios.push(ratio);
            }
            table.push(vec![lambda.into(), n.into(), norms[n].into(), ratio.into(), sum.into()]);
        }
        let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
        let last_share = norms[o.n] / sum;
        checks.push(Check {
            name: format!("order_norm: ratios decrease at lambda = {lambda}"),
            passed: decreasing,
            detail: format!("ratios from n = 1: {:.4?}", ratios),
        });
        checks.push(Check {
            name: format!("order_norm: partial sums Cauchy within 1% at lambda = {lambda}"),
            passed: last_share <= 0.01,
            detail: format!("last term / partial sum at N = {}: {last_share:.3e}", o.n),
        });
    }
    Ok((table, checks))
}

pub fn regularity(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let cases = kernel_space_curves(cfg)?;
    for label in ["u", "dx_u"] {
        let mine: Vec<_> = cases.iter().filter(|c| c.0 .0 == label).collect();
        let curves: Vec<IncrementMomentCurve> = mine.iter().map(|c| c.1.clone()).collect();
        let fits: Vec<(Direction, ExponentEstimate)> = mine.iter().map(|c| (c.0 .2, c.2)).collect();
        out.table(&format!("regularity_{label}.csv"), curve_table(&curves));
        out.table(&format!("regularity_{label}_fits.csv"), fit_table(&fits));
    }
    for ((label, _, direction, _, target, tol), curve, fit) in &cases {
        let ok_slope = match tol {
            Some(tol) => (fit.slope - target).abs() <= *tol,
            None => fit.slope >= *target,
        };
        let rule = match tol {
            Some(tol) => format!("{target} ± {tol}"),
            None => format!(">= {target}"),
        };
        out.check(
            &format!("regularity: {label} {direction} slope"),
            ok_slope && !fit.low_r_squared,
            format!(
                "slope {:.4} ± {:.1e} (want {rule}), R² {:.5}, tail share {:.3}",
                fit.slope, fit.stderr, fit.r_squared, curve.max_tail_share
            ),
        );
    }

    // Interior time curves of the truncated chaos, reported for comparison.
    let lags = geometric_lags(cfg.regularity.h_min, cfg.regularity.h_max, cfg.regularity.per_octave)?;
    let spec = TruncationSpec::new(cfg.truncation.n, cfg.truncation.j)?;
    let mut times: Vec<f64> = Vec::new();
    for &t in &cfg.regularity.diagnostic_t {
        times.push(t);
        times.extend(lags.iter().map(|h| t + h));
    }
    let u0 = initial_condition(cfg)?;
    let prop = propagator_oracle(spec, &u0, &propagator_grid(cfg), &times)?;
    for (label, derivative) in [("u", false), ("dx_u", true)] {
        let field = ChaosField::new(cfg.truncation.n, |t, x| {
            if derivative {
                prop.dx_coefficients_at(t, x)
            } else {
                prop.coefficients_at(t, x)
            }
        });
        let mut curves = Vec::new();
        let mut fits = Vec::new();
        for &t in &cfg.regularity.diagnostic_t {
            let curve = increment_moments(&field, (t, 0.0), Direction::Time, &lags)?;
            fits.push((Direction::Time, fit_exponent(&curve)?));
            curves.push(curve);
        }
        out.table(&format!("regularity_{label}_interior.csv"), curve_table(&curves));
        out.table(&format!("regularity_{label}_interior_fits.csv"), fit_table(&fits));
    }

    // Sampled realizations against the coefficient moments.
    let t0 = cfg.regularity.diagnostic_t.first().copied().unwrap_or(0.5);
    let field = ChaosField::new(cfg.truncation.n, |t, x| prop.coefficients_at(t, x));
    if cfg.regularity.diagnostic_t.contains(&t0) {
        let curve = increment_moments(&field, (t0, 0.0), Direction::Time, &lags)?;
        let a = prop.coefficients_at(t0, 0.0)?;
        let mut table = Table::new(&["h", "moment", "sampled", "stderr"]);
        let mut worst = 0.0f64;
        for (i, &h) in lags.iter().enumerate() {
            let b = prop.coefficients_at(t0 + h, 0.0)?;
            let e = sampled_increment_moment(&a, &b, 10_000, &stream(cfg, &format!("regularity-sampled-{i}")))?;
            worst = worst.max(z_row(&e, curve.moments[i]).abs());
            table.push(vec![h.into(), curve.moments[i].into(), e.value.into(), e.stderr.into()]);
        }
        out.table("regularity_sampled.csv", table);
        out.check("regularity: sampled moments agree within 3 sigma", worst <= 3.0, format!("max |z| {worst:.2}"));
    }

    let (table, checks) = order_norm_table(cfg)?;
    out.table("order_norm.csv", table);
    out.checks.extend(checks);
    Ok(out)
}
