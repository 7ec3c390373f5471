//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Build with the test profile (optimized) for realistic runtimes.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wickshe::basis::{enumerate_multiindices, hermite_function, hermite_poly, MultiIndex, TruncationSpec};
use wickshe::chaos::{s_transform_chaos, wick_product, ChaosCoefficients};
use wickshe::cli::commands::{self, Check, Outcome};
use wickshe::cli::config::RunConfig;
use wickshe::kernels::{apply_heat_semigroup, dxp_cross_inner, heat_kernel, heat_kernel_dx, InitialCondition, QuadratureGrid};
use wickshe::quad::composite_legendre;
use wickshe::Result;

const SEED: u64 = 20_240_601;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }

    fn from_checks(checks: &[Check]) -> Self {
        let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
        let detail = if failed.is_empty() {
            checks.iter().map(|c| c.detail.as_str()).collect::<Vec<_>>().join("; ")
        } else {
            failed.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ")
        };
        Self::new(failed.is_empty() && !checks.is_empty(), detail)
    }
}

fn config() -> RunConfig {
    RunConfig { seed: SEED, ..RunConfig::default() }
}

fn sine_config() -> RunConfig {
    let mut cfg = config();
    cfg.initial_condition.tag = "sine".into();
    cfg
}

/// Probabilists' Hermite coefficients by H_{n+1} = x H_n - n H_{n-1}.
fn hermite_coefficients(n: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for k in 1..n {
        let mut next = vec![0.0; k + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= k as f64 * c;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    cur
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn basis_health() -> Result<Verdict> {
    let rule = composite_legendre(-20.0, 20.0, 80, 16);
    let mut worst_gram = 0.0f64;
    for i in 1..=8 {
        for j in 1..=8 {
            let g = rule.integrate(|x| hermite_function(i, x).unwrap() * hermite_function(j, x).unwrap());
            worst_gram = worst_gram.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let mut worst_appell = 0.0f64;
    for n in 1..=12 {
        let c = hermite_coefficients(n);
        let dc: Vec<f64> = c.iter().enumerate().skip(1).map(|(k, v)| k as f64 * v).collect();
        for k in 0..=80 {
            let x = -4.0 + 0.1 * k as f64;
            let exact = horner(&dc, x);
            let appell = n as f64 * hermite_poly(n - 1, x);
            worst_appell = worst_appell.max((exact - appell).abs() / (1.0 + exact.abs()));
        }
    }
    Ok(Verdict::new(
        worst_gram <= 1e-8 && worst_appell <= 1e-8,
        format!("Gram defect {worst_gram:.2e}, Appell defect {worst_appell:.2e} (limits 1e-8)"),
    ))
}

fn kernel_identities() -> Result<Verdict> {
    let rule = composite_legendre(-30.0, 30.0, 240, 16);
    let mut semigroup = 0.0f64;
    let mut mass = 0.0f64;
    let mut cross = 0.0f64;
    for &(s, t, x, y) in &[(0.3, 0.7, 0.2, -0.5), (0.05, 1.5, 1.0, 0.0), (2.0, 0.5, -1.3, 0.4)] {
        let conv = rule.integrate(|z| heat_kernel(s, x - z).unwrap() * heat_kernel(t, z - y).unwrap());
        semigroup = semigroup.max((conv - heat_kernel(s + t, x - y)?).abs());
        mass = mass.max((rule.integrate(|z| heat_kernel(s, z).unwrap()) - 1.0).abs());
        let q = rule.integrate(|z| heat_kernel_dx(s, x - z).unwrap() * heat_kernel_dx(t, y - z).unwrap());
        cross = cross.max((q - dxp_cross_inner(s, t, x, y)?).abs());
    }
    let sine = InitialCondition::sine(1.0, 1.0);
    let mut flow = 0.0f64;
    for &(t, x) in &[(0.25, 0.3), (1.0, -1.2), (2.0, 2.5)] {
        let v = apply_heat_semigroup(&sine, t, x, &QuadratureGrid::for_horizon(x.abs(), t)?)?;
        flow = flow.max((v - (-t / 2.0f64).exp() * x.sin()).abs());
    }
    Ok(Verdict::new(
        semigroup <= 1e-6 && mass <= 1e-8 && cross <= 1e-6 && flow <= 1e-6,
        format!("semigroup {semigroup:.2e}, mass {mass:.2e}, cross inner {cross:.2e}, heat flow on sin {flow:.2e}"),
    ))
}

fn checks_of(outcomes: &[Outcome]) -> Vec<Check> {
    outcomes.iter().flat_map(|o| o.checks.iter().cloned()).collect()
}

fn equivalence() -> Result<Verdict> {
    Ok(Verdict::from_checks(&commands::equivalence(&config())?.checks))
}

fn chaos_vs_propagator() -> Result<Verdict> {
    let runs = [commands::chaos(&config())?, commands::chaos(&sine_config())?];
    let mut checks = checks_of(&runs);
    checks[0].detail = format!("u0 = 1: {}", checks[0].detail);
    checks[1].detail = format!("u0 = sin: {}", checks[1].detail);
    Ok(Verdict::from_checks(&checks))
}

fn s_transform() -> Result<Verdict> {
    let mut checks = Vec::new();
    for (label, cfg) in [("u0 = 1", config()), ("u0 = sin", sine_config())] {
        let u0 = commands::initial_condition(&cfg)?;
        let rows = commands::stransform_rows(&cfg, &u0)?;
        let worst = rows.iter().map(|r| (r.chaos - r.mc.value).abs() / r.allowance().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        let bad: Vec<String> = rows.iter().filter(|r| !r.passed()).map(|r| format!("{} {}", r.phi, r.quantity)).collect();
        checks.push(Check {
            name: label.into(),
            passed: bad.is_empty(),
            detail: format!("{label}: {} rows, worst |Δ|/allowance {worst:.2}, failing {bad:?}", rows.len()),
        });
    }
    Ok(Verdict::from_checks(&checks))
}

fn local_time() -> Result<Verdict> {
    Ok(Verdict::from_checks(&commands::localtime(&config())?.checks))
}

fn psi_law() -> Result<Verdict> {
    let (_, checks) = commands::psi_law(&config())?;
    Ok(Verdict::from_checks(&checks))
}

fn random_coefficients(spec: TruncationSpec, max_degree: usize, rng: &mut ChaCha8Rng) -> ChaosCoefficients {
    let mut c = ChaosCoefficients::new((1.0, 0.0), spec).unwrap();
    for alpha in enumerate_multiindices(spec).unwrap().into_iter().filter(|a| a.degree() <= max_degree) {
        c.set(&alpha, rng.random_range(-1.0..1.0)).unwrap();
    }
    c
}

fn wick_algebra() -> Result<Verdict> {
    let spec = TruncationSpec::new(4, 3)?;
    let mut one = ChaosCoefficients::new((1.0, 0.0), spec)?;
    one.set(&MultiIndex::unit(1), 1.0)?;
    let sq = wick_product(&one, &one)?.value;
    let two = MultiIndex::from_pairs(&[(1, 2)]);
    let square_ok = sq.get(&two).to_bits() == 2f64.sqrt().to_bits() && sq.iter().all(|(a, v)| *a == two || v == 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut comm, mut assoc, mut mult) = (true, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let f = random_coefficients(spec, 2, &mut rng);
        let g = random_coefficients(spec, 2, &mut rng);
        let h = random_coefficients(spec, 1, &mut rng);
        let fg = wick_product(&f, &g)?;
        let gf = wick_product(&g, &f)?;
        comm &= fg.value.values().iter().zip(gf.value.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        let f1 = random_coefficients(spec, 1, &mut rng);
        let left = wick_product(&wick_product(&f1, &h)?.value, &f)?;
        let right = wick_product(&f1, &wick_product(&h, &f)?.value)?;
        for (a, b) in left.value.values().iter().zip(right.value.values()) {
            assoc = assoc.max((a - b).abs() / (1.0 + a.abs()));
        }
        let phi: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = s_transform_chaos(&fg.value, &phi)?.value;
        let rhs = s_transform_chaos(&f, &phi)?.value * s_transform_chaos(&g, &phi)?.value;
        mult = mult.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
    }
    Ok(Verdict::new(
        square_ok && comm && assoc <= 1e-12 && mult <= 1e-10,
        format!(
            "ξ₁⋄ξ₁ = √2 ξ₂ bitwise: {square_ok}; commutative bitwise: {comm}; associativity defect {assoc:.1e}; S-multiplicativity defect {mult:.1e}"
        ),
    ))
}

fn regularity_checks() -> Result<(Verdict, Verdict)> {
    let out = commands::regularity(&config())?;
    let norms: Vec<Check> = out.checks.iter().filter(|c| c.name.starts_with("order_norm")).cloned().collect();
    let slopes: Vec<Check> = out.checks.iter().filter(|c| c.name.starts_with("regularity")).cloned().collect();
    Ok((Verdict::from_checks(&norms), Verdict::from_checks(&slopes)))
}

const REPRO_CONFIG: &str = r#"seed = 99
probes = [[1.0, 0.0], [0.5, 0.3]]

[mc]
n_paths = 2000
n_noise = 20
batch_size = 128

[localtime]
increment_h = [0.1]

[order_norm]
N = 8
"#;

const REPRO_COMMANDS: [&str; 7] = ["chaos", "derivative", "fk", "stransform-compare", "equivalence", "localtime", "regularity"];

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn reproducibility() -> Result<Verdict> {
    let tmp = tempfile::tempdir().map_err(|e| wickshe::Error::InvalidArgument(e.to_string()))?;
    let cfg = tmp.path().join("repro.toml");
    fs::write(&cfg, REPRO_CONFIG).unwrap();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for sub in REPRO_COMMANDS {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for threads in ["1", "2", "8"] {
            let out = tmp.path().join(format!("{sub}-{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_wickshe"))
                .args([sub, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .env("WICKSHE_THREADS", threads)
                .output()
                .expect("binary runs");
            if status.status.code() == Some(2) || csv_files(&out).is_empty() {
                mismatches.push(format!("{sub} with {threads} threads produced no output"));
                continue;
            }
            let files = csv_files(&out);
            match &reference {
                None => reference = Some(files),
                Some(r) => {
                    compared += r.len();
                    if *r != files {
                        mismatches.push(format!("{sub} differs at {threads} threads"));
                    }
                }
            }
        }
    }
    Ok(Verdict::new(
        mismatches.is_empty(),
        format!("{compared} CSV comparisons over {} subcommands; mismatches {mismatches:?}", REPRO_COMMANDS.len()),
    ))
}

fn report(n: usize, title: &str, started: Instant, verdict: Result<Verdict>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (passed, detail) = match verdict {
        Ok(v) => (v.passed, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} criterion {n:>2} ({title}) [{secs:.1} s]: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn main() {
    let mut all = true;
    macro_rules! criterion {
        ($n:expr, $title:expr, $body:expr) => {{
            let t = Instant::now();
            all &= report($n, $title, t, $body);
        }};
    }
    criterion!(1, "basis health", basis_health());
    criterion!(2, "kernel identities", kernel_identities());
    criterion!(3, "representation equivalence", equivalence());
    criterion!(4, "chaos vs propagator", chaos_vs_propagator());
    criterion!(5, "S-transform cross-checks", s_transform());
    criterion!(6, "local-time targets", local_time());
    criterion!(7, "law of Psi", psi_law());
    criterion!(8, "Wick algebra", wick_algebra());
    let t = Instant::now();
    let (norms, slopes) = match regularity_checks() {
        Ok((a, b)) => (Ok(a), Ok(b)),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    all &= report(9, "order-norm decay", t, norms);
    all &= report(10, "Hölder slopes", t, slopes);
    criterion!(11, "reproducibility across threads", reproducibility());
    if !all {
        std::process::exit(1);
    }
}
